//! Variable-level backward provenance over the dependency graph.
//!
//! Unlike `Ipdg::dependencies`, this follows only the edges that carry the
//! variables actually read, maps callee parameters back to the matching
//! argument expression, and matches returns with the call site they came
//! from.

use std::collections::{BTreeSet, VecDeque};

use crate::frontend::{Expr, ExprKind, FunctionDef, NodeId, VarId};
use crate::graph::{EdgeKind, Ipdg, NodeKind};
use crate::index::AstIndex;

const MAX_CONTEXT: usize = 6;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Provenance {
    pub vars: BTreeSet<VarId>,
    /// Statement, entry and state-declaration nodes visited.
    pub nodes: BTreeSet<NodeId>,
    /// Some value came out of an assembly block.
    pub opaque: bool,
    /// Some value came back from code outside the unit.
    pub external: bool,
}

impl Provenance {
    pub fn has_var_named(&self, name: &str) -> bool {
        self.vars.iter().any(|v| v.name() == name)
    }
}

/// Arguments of `call` paired with the callee parameter they bind.
/// Handles named arguments and the implicit receiver of `using for` calls.
pub fn bind_args<'e>(callee: &FunctionDef, call: &'e Expr) -> Vec<(String, &'e Expr)> {
    let ExprKind::Call { callee: target, args, names } = &call.kind else {
        return Vec::new();
    };
    let params: Vec<&str> = callee.params.iter().map(|p| p.name.as_deref().unwrap_or("")).collect();
    if let Some(names) = names {
        return names
            .iter()
            .zip(args)
            .filter(|(n, _)| params.contains(&n.as_str()))
            .map(|(n, a)| (n.clone(), a))
            .collect();
    }
    let mut argv: Vec<&Expr> = args.iter().collect();
    if argv.len() + 1 == params.len() {
        if let ExprKind::Member(base, _) = &target.kind {
            argv.insert(0, base);
        }
    }
    params
        .iter()
        .zip(argv)
        .filter(|(p, _)| !p.is_empty())
        .map(|(p, a)| (p.to_string(), a))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Item {
    Expr(NodeId, NodeId),
    Node(NodeId),
    Param(NodeId, String),
}

/// Everything that flows into the given expressions, each evaluated at its
/// statement.
pub fn backward(ix: &AstIndex, g: &Ipdg, roots: &[(NodeId, NodeId)]) -> Provenance {
    let mut out = Provenance::default();
    let mut seen: BTreeSet<(Item, Vec<NodeId>)> = BTreeSet::new();
    let mut queue: VecDeque<(Item, Vec<NodeId>)> = VecDeque::new();
    for &(stmt, expr) in roots {
        queue.push_back((Item::Expr(stmt, expr), Vec::new()));
    }
    while let Some((item, ctx)) = queue.pop_front() {
        if !seen.insert((item.clone(), ctx.clone())) {
            continue;
        }
        let mut push = |it: Item, c: Vec<NodeId>| queue.push_back((it, c));
        match item {
            Item::Expr(node, expr) => {
                out.nodes.insert(node);
                match ix.expr(expr) {
                    Some(e) => expr_sources(ix, g, node, std::slice::from_ref(&e), &ctx, &mut out, &mut push),
                    // assembly sinks point at the whole block
                    None => push(Item::Node(node), ctx.clone()),
                }
            }
            Item::Node(node) => {
                out.nodes.insert(node);
                let Some(info) = g.node(node) else { continue };
                match info.kind {
                    NodeKind::Unknown => out.external = true,
                    NodeKind::Entry => {}
                    NodeKind::Statement | NodeKind::StateDecl => {
                        if info.opaque {
                            out.opaque = true;
                            for u in &info.uses {
                                out.vars.insert(u.clone());
                                follow_var(g, node, u, &ctx, &mut push);
                            }
                        } else {
                            let exprs = ix.node_exprs(node);
                            expr_sources(ix, g, node, &exprs, &ctx, &mut out, &mut push);
                        }
                    }
                }
            }
            Item::Param(entry, name) => {
                out.nodes.insert(entry);
                let Some(callee) = ix.function(entry) else { continue };
                let (sites, rest): (Vec<NodeId>, Vec<NodeId>) = match ctx.split_last() {
                    Some((&site, rest)) => (vec![site], rest.to_vec()),
                    None => (
                        g.calls.iter().filter(|c| c.target == entry).map(|c| c.node).collect(),
                        Vec::new(),
                    ),
                };
                for c in g.calls.iter().filter(|c| c.target == entry && sites.contains(&c.node)) {
                    let Some(call) = ix.expr(c.expr) else { continue };
                    for (p, arg) in bind_args(callee, call) {
                        if p == name {
                            push(Item::Expr(c.node, arg.id), rest.clone());
                        }
                    }
                }
            }
        }
    }
    out
}

fn expr_sources(
    ix: &AstIndex,
    g: &Ipdg,
    node: NodeId,
    exprs: &[&Expr],
    ctx: &[NodeId],
    out: &mut Provenance,
    push: &mut impl FnMut(Item, Vec<NodeId>),
) {
    let Some(scope) = ix.scope(node) else { return };
    for e in exprs {
        for v in scope.free_vars(e) {
            follow_var(g, node, &v, ctx, push);
            out.vars.insert(v);
        }
        let mut call_ids = BTreeSet::new();
        e.walk(&mut |x| {
            if matches!(x.kind, ExprKind::Call { .. }) {
                call_ids.insert(x.id);
            }
        });
        for c in g.calls.iter().filter(|c| c.node == node && call_ids.contains(&c.expr)) {
            match &c.callee {
                Some(q) => {
                    let mut inner = ctx.to_vec();
                    if inner.len() >= MAX_CONTEXT {
                        inner.clear();
                    } else {
                        inner.push(node);
                    }
                    for &r in g.return_nodes.get(q).into_iter().flatten() {
                        push(Item::Node(r), inner.clone());
                    }
                }
                None => out.external = true,
            }
        }
    }
}

fn follow_var(g: &Ipdg, node: NodeId, v: &VarId, ctx: &[NodeId], push: &mut impl FnMut(Item, Vec<NodeId>)) {
    if v.is_env() {
        return;
    }
    for &(d, k) in g.predecessors(node) {
        if k != EdgeKind::Data || !g.label(d, node).is_some_and(|l| l.contains(v)) {
            continue;
        }
        let is_entry = g.node(d).is_some_and(|n| n.kind == NodeKind::Entry);
        if is_entry {
            push(Item::Param(d, v.name().to_string()), ctx.to_vec());
        } else if v.is_state() {
            // State flows across transactions; calling context is lost.
            push(Item::Node(d), Vec::new());
        } else {
            push(Item::Node(d), ctx.to_vec());
        }
    }
}
