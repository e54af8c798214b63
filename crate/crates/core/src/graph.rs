//! Inter-contract program dependency graph over statements.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::frontend::{
    AstUnit, ContractKind, EnvAtom, Expr, ExprKind, FunctionDef, NodeId, Scope, Stmt, StmtKind,
    TypeName, VarId, FILE_LEVEL,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EdgeKind {
    Data,
    Control,
    Call,
}

impl EdgeKind {
    pub const ALL: [EdgeKind; 3] = [EdgeKind::Data, EdgeKind::Control, EdgeKind::Call];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub from: NodeId,
    pub to: NodeId,
    pub kind: EdgeKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeKind {
    /// Function entry; defines the parameters.
    Entry,
    Statement,
    StateDecl,
    /// Stand-in for code outside the unit reached by an external call.
    Unknown,
}

#[derive(Clone, Debug, Serialize)]
pub struct NodeInfo {
    pub kind: NodeKind,
    /// Qualified owning function; `None` for state declarations.
    pub function: Option<String>,
    pub opaque: bool,
    pub guard: bool,
    pub defs: BTreeSet<VarId>,
    pub uses: BTreeSet<VarId>,
}

#[derive(Clone, Debug, Serialize)]
pub struct CallSite {
    /// Statement containing the call.
    pub node: NodeId,
    pub expr: NodeId,
    pub caller: String,
    /// Qualified callee, or `None` for unknown external code.
    pub callee: Option<String>,
    /// Callee entry node (or the synthetic Unknown node).
    pub target: NodeId,
}

/// A mapping access `m[k1][k2]...` at a statement.
#[derive(Clone, Debug, Serialize)]
pub struct MapAccess {
    pub node: NodeId,
    pub var: VarId,
    /// Key expressions, outermost first.
    pub keys: Vec<NodeId>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Backward,
    Forward,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct Ipdg {
    pub nodes: BTreeMap<NodeId, NodeInfo>,
    pub edges: BTreeSet<Edge>,
    /// Variables carried by each Data edge. Return-value edges carry none.
    pub labels: BTreeMap<(NodeId, NodeId), BTreeSet<VarId>>,
    pub entry_points: BTreeMap<String, NodeId>,
    pub calls: Vec<CallSite>,
    pub map_writes: Vec<MapAccess>,
    pub map_reads: Vec<MapAccess>,
    /// Statement nodes of each function in pre-order.
    pub function_nodes: BTreeMap<String, Vec<NodeId>>,
    /// Nodes whose value flows back to callers: returns and named-return defs.
    pub return_nodes: BTreeMap<String, BTreeSet<NodeId>>,
    #[serde(skip)]
    succ: BTreeMap<NodeId, Vec<(NodeId, EdgeKind)>>,
    #[serde(skip)]
    pred: BTreeMap<NodeId, Vec<(NodeId, EdgeKind)>>,
}

impl Ipdg {
    pub fn node(&self, id: NodeId) -> Option<&NodeInfo> {
        self.nodes.get(&id)
    }

    pub fn function_of(&self, id: NodeId) -> Option<&str> {
        self.nodes.get(&id)?.function.as_deref()
    }

    pub fn has_edge(&self, from: NodeId, to: NodeId, kind: EdgeKind) -> bool {
        self.edges.contains(&Edge { from, to, kind })
    }

    pub fn successors(&self, id: NodeId) -> &[(NodeId, EdgeKind)] {
        self.succ.get(&id).map_or(&[], Vec::as_slice)
    }

    pub fn predecessors(&self, id: NodeId) -> &[(NodeId, EdgeKind)] {
        self.pred.get(&id).map_or(&[], Vec::as_slice)
    }

    pub fn label(&self, from: NodeId, to: NodeId) -> Option<&BTreeSet<VarId>> {
        self.labels.get(&(from, to))
    }

    /// Transitive closure from `start` along edges of the given kinds,
    /// including `start` itself.
    pub fn dependencies(
        &self,
        start: &BTreeSet<NodeId>,
        direction: Direction,
        kinds: &[EdgeKind],
    ) -> BTreeSet<NodeId> {
        let mut seen: BTreeSet<NodeId> = start.iter().copied().filter(|n| self.nodes.contains_key(n)).collect();
        let mut queue: VecDeque<NodeId> = seen.iter().copied().collect();
        while let Some(n) = queue.pop_front() {
            let adj = match direction {
                Direction::Forward => self.successors(n),
                Direction::Backward => self.predecessors(n),
            };
            for &(m, k) in adj {
                if kinds.contains(&k) && seen.insert(m) {
                    queue.push_back(m);
                }
            }
        }
        seen
    }

    /// Definition nodes of `var` anywhere in the graph.
    pub fn def_nodes(&self, var: &VarId) -> BTreeSet<NodeId> {
        self.nodes
            .iter()
            .filter(|(_, n)| n.defs.contains(var))
            .map(|(id, _)| *id)
            .collect()
    }

    /// Calls made from statements of `function`.
    pub fn calls_from<'a>(&'a self, function: &'a str) -> impl Iterator<Item = &'a CallSite> + 'a {
        self.calls.iter().filter(move |c| c.caller == function)
    }

    /// `FROM -> TO [KIND]`, one edge per line, sorted.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.edges {
            let _ = writeln!(out, "{} -> {} [{:?}]", e.from, e.to, e.kind);
        }
        out
    }

    /// Graphviz rendering; nodes are labelled with their source line.
    pub fn to_dot(&self, unit: &AstUnit) -> String {
        let mut out = String::from("digraph ipdg {\n  node [shape=box, fontname=\"monospace\"];\n");
        for (id, n) in &self.nodes {
            let line = unit.span(*id).map_or(0, |s| s.line);
            let text = match n.kind {
                NodeKind::Unknown => "<unknown>".to_string(),
                _ => unit.text(*id).lines().next().unwrap_or("").trim().to_string(),
            };
            let label = format!("L{line}: {text}").replace('\\', "\\\\").replace('"', "\\\"");
            let _ = writeln!(out, "  {id} [label=\"{label}\"];");
        }
        for e in &self.edges {
            let color = match e.kind {
                EdgeKind::Data => "red",
                EdgeKind::Control => "blue",
                EdgeKind::Call => "green",
            };
            let _ = writeln!(out, "  {} -> {} [color={color}];", e.from, e.to);
        }
        out.push_str("}\n");
        out
    }

    /// Bare graph over statement nodes, for tests of graph algorithms.
    pub fn from_edges(nodes: impl IntoIterator<Item = NodeId>, edges: impl IntoIterator<Item = Edge>) -> Ipdg {
        let mut g = Ipdg::default();
        for n in nodes {
            g.nodes.insert(
                n,
                NodeInfo {
                    kind: NodeKind::Statement,
                    function: None,
                    opaque: false,
                    guard: false,
                    defs: BTreeSet::new(),
                    uses: BTreeSet::new(),
                },
            );
        }
        for e in edges {
            g.edges.insert(e);
        }
        g.index();
        g
    }

    fn add_edge(&mut self, from: NodeId, to: NodeId, kind: EdgeKind) {
        if from != to {
            self.edges.insert(Edge { from, to, kind });
        }
    }

    fn add_data(&mut self, from: NodeId, to: NodeId, var: Option<&VarId>) {
        if from == to {
            return;
        }
        self.add_edge(from, to, EdgeKind::Data);
        let l = self.labels.entry((from, to)).or_default();
        if let Some(v) = var {
            l.insert(v.clone());
        }
    }

    fn index(&mut self) {
        self.succ.clear();
        self.pred.clear();
        for e in &self.edges {
            self.succ.entry(e.from).or_default().push((e.to, e.kind));
            self.pred.entry(e.to).or_default().push((e.from, e.kind));
        }
    }
}

/// Reads, writes and calls of one statement's own expressions.
#[derive(Default, Debug)]
pub struct Access<'a> {
    pub uses: BTreeSet<VarId>,
    /// Written variables; `true` for a strong (whole-variable) update.
    pub defs: Vec<(VarId, bool)>,
    pub calls: Vec<&'a Expr>,
    pub map_writes: Vec<(VarId, Vec<NodeId>)>,
    pub map_reads: Vec<(VarId, Vec<NodeId>)>,
}

impl<'a> Access<'a> {
    pub fn of_stmt(scope: &Scope, s: &'a Stmt) -> Access<'a> {
        let mut acc = Access::default();
        match &s.kind {
            StmtKind::VarDecl { decls, init } => {
                if let Some(e) = init {
                    acc.expr(scope, e);
                }
                for d in decls.iter().flatten() {
                    if let Some(v) = scope.resolve(&d.name) {
                        acc.defs.push((v, true));
                    }
                }
            }
            StmtKind::Opaque(b) => {
                acc.uses.extend(b.reads.iter().filter_map(|n| scope.resolve(n)));
                acc.uses.extend(b.atoms.iter().map(|&atom| VarId::Env { atom }));
                for w in &b.writes {
                    if let Some(v) = scope.resolve(w) {
                        acc.defs.push((v, false));
                    }
                }
            }
            _ => {
                for e in s.own_exprs() {
                    acc.expr(scope, e);
                }
            }
        }
        acc
    }

    pub fn expr(&mut self, scope: &Scope, e: &'a Expr) {
        if let Some(atom) = EnvAtom::from_expr(e) {
            self.uses.insert(VarId::Env { atom });
            return;
        }
        match &e.kind {
            ExprKind::Ident(n) => {
                if n == "this" {
                    self.uses.insert(VarId::Env {
                        atom: EnvAtom::AddressThis,
                    });
                } else if let Some(v) = scope.resolve(n) {
                    self.uses.insert(v);
                }
            }
            ExprKind::Assign { op, lhs, rhs } => {
                self.expr(scope, rhs);
                self.target(scope, lhs, op != "=");
            }
            ExprKind::Unary { op, operand, .. } if op == "++" || op == "--" => {
                self.target(scope, operand, true);
            }
            ExprKind::Unary { op, operand, .. } if op == "delete" => {
                self.target(scope, operand, false);
            }
            ExprKind::Index(..) => {
                if let Some(v) = e.base_ident().and_then(|b| scope.resolve(b)) {
                    let keys = e.index_keys().iter().map(|k| k.id).collect();
                    self.map_reads.push((v, keys));
                }
                for c in e.children() {
                    self.expr(scope, c);
                }
            }
            ExprKind::Call { callee, args, .. } => {
                self.calls.push(e);
                match &callee.kind {
                    ExprKind::Ident(_) | ExprKind::TypeName(_) => {}
                    ExprKind::Member(base, m) => {
                        if m == "push" || m == "pop" {
                            self.target(scope, base, true);
                        } else {
                            self.expr(scope, base);
                        }
                    }
                    ExprKind::CallOptions(inner, opts) => {
                        if let ExprKind::Member(base, _) = &inner.kind {
                            self.expr(scope, base);
                        }
                        for (_, o) in opts {
                            self.expr(scope, o);
                        }
                    }
                    _ => self.expr(scope, callee),
                }
                for a in args {
                    self.expr(scope, a);
                }
            }
            _ => {
                for c in e.children() {
                    self.expr(scope, c);
                }
            }
        }
    }

    fn target(&mut self, scope: &Scope, lhs: &'a Expr, also_use: bool) {
        match &lhs.kind {
            ExprKind::Ident(n) => {
                if let Some(v) = scope.resolve(n) {
                    if also_use {
                        self.uses.insert(v.clone());
                    }
                    self.defs.push((v, true));
                }
            }
            ExprKind::Tuple(items) => {
                for i in items.iter().flatten() {
                    self.target(scope, i, also_use);
                }
            }
            ExprKind::Index(..) | ExprKind::Member(..) => {
                // Keys and inner index expressions are reads.
                let mut cur = lhs;
                loop {
                    match &cur.kind {
                        ExprKind::Index(b, k) => {
                            if let Some(k) = k {
                                self.expr(scope, k);
                            }
                            cur = b;
                        }
                        ExprKind::Member(b, _) => cur = b,
                        _ => break,
                    }
                }
                if let Some(v) = lhs.base_ident().and_then(|b| scope.resolve(b)) {
                    if also_use {
                        self.uses.insert(v.clone());
                    }
                    let keys: Vec<NodeId> = lhs.index_keys().iter().map(|k| k.id).collect();
                    if !keys.is_empty() {
                        if also_use {
                            self.map_reads.push((v.clone(), keys.clone()));
                        }
                        self.map_writes.push((v.clone(), keys));
                    }
                    self.defs.push((v, false));
                } else {
                    self.expr(scope, cur);
                }
            }
            _ => self.expr(scope, lhs),
        }
    }
}

type Env = BTreeMap<VarId, BTreeSet<NodeId>>;

fn merge(into: &mut Env, other: &Env) {
    for (k, v) in other {
        into.entry(k.clone()).or_default().extend(v.iter().copied());
    }
}

pub fn build_ipdg(unit: &AstUnit) -> Ipdg {
    let mut b = Builder {
        unit,
        g: Ipdg::default(),
        next_unknown: unit.next_id,
        state_defs: BTreeMap::new(),
        state_uses: Vec::new(),
    };
    for c in &unit.contracts {
        let scope = Scope::for_contract(unit, c);
        for v in &c.state_vars {
            let var = VarId::State {
                contract: c.name.clone(),
                name: v.name.clone(),
            };
            let mut acc = Access::default();
            if let Some(init) = &v.init {
                acc.expr(&scope, init);
            }
            b.state_defs.entry(var.clone()).or_default().insert(v.id);
            for u in &acc.uses {
                if u.is_state() {
                    b.state_uses.push((v.id, u.clone()));
                }
            }
            b.g.nodes.insert(
                v.id,
                NodeInfo {
                    kind: NodeKind::StateDecl,
                    function: None,
                    opaque: false,
                    guard: false,
                    defs: BTreeSet::from([var]),
                    uses: acc.uses,
                },
            );
        }
    }
    for c in &unit.contracts {
        for f in &c.functions {
            if f.body.is_some() {
                b.function(f);
            }
        }
    }
    b.finish()
}

struct Builder<'u> {
    unit: &'u AstUnit,
    g: Ipdg,
    next_unknown: u32,
    state_defs: BTreeMap<VarId, BTreeSet<NodeId>>,
    state_uses: Vec<(NodeId, VarId)>,
}

struct FnCx<'u> {
    f: &'u FunctionDef,
    q: String,
    scope: Scope,
}

enum Target<'u> {
    Internal(&'u FunctionDef, Vec<&'u Expr>),
    Unknown,
}

impl<'u> Builder<'u> {
    fn function(&mut self, f: &'u FunctionDef) {
        let scope = Scope::for_function(self.unit, f);
        let q = f.qualified();
        let cx = FnCx { f, q: q.clone(), scope };
        let mut defs = BTreeSet::new();
        for p in f.params.iter().chain(&f.returns) {
            if let Some(v) = p.name.as_deref().and_then(|n| cx.scope.resolve(n)) {
                defs.insert(v);
            }
        }
        let mut env = Env::new();
        for d in &defs {
            env.insert(d.clone(), BTreeSet::from([f.id]));
        }
        self.g.nodes.insert(
            f.id,
            NodeInfo {
                kind: NodeKind::Entry,
                function: Some(q.clone()),
                opaque: false,
                guard: false,
                defs,
                uses: BTreeSet::new(),
            },
        );
        self.g.entry_points.insert(q.clone(), f.id);
        self.g.function_nodes.entry(q.clone()).or_default();
        let body = f.body.as_deref().unwrap_or(&[]);
        for s in body {
            self.stmt(&cx, s, &mut env);
        }
        self.control_block(body);

        // Named return values flow back to callers from every definition.
        let named: BTreeSet<VarId> = f
            .returns
            .iter()
            .filter_map(|p| p.name.as_deref().and_then(|n| cx.scope.resolve(n)))
            .collect();
        let mut rets = BTreeSet::new();
        for s in body {
            s.walk(&mut |s| {
                if matches!(s.kind, StmtKind::Return(_)) {
                    rets.insert(s.id);
                }
            });
        }
        for n in &self.g.function_nodes[&q] {
            if self.g.nodes[n].defs.iter().any(|d| named.contains(d)) {
                rets.insert(*n);
            }
        }
        self.g.return_nodes.insert(q, rets);
    }

    fn register(&mut self, cx: &FnCx<'u>, s: &'u Stmt, acc: Access<'u>, env: &mut Env) {
        let id = s.id;
        let opaque = matches!(s.kind, StmtKind::Opaque(_));
        for u in &acc.uses {
            match u {
                VarId::Local { .. } | VarId::Param { .. } => {
                    for &d in env.get(u).into_iter().flatten() {
                        self.g.add_data(d, id, Some(u));
                    }
                }
                VarId::State { .. } => self.state_uses.push((id, u.clone())),
                VarId::Env { .. } => {}
            }
        }
        for (v, key) in &acc.map_writes {
            self.g.map_writes.push(MapAccess {
                node: id,
                var: v.clone(),
                keys: key.clone(),
            });
        }
        for (v, key) in &acc.map_reads {
            self.g.map_reads.push(MapAccess {
                node: id,
                var: v.clone(),
                keys: key.clone(),
            });
        }
        let mut defs = BTreeSet::new();
        for (v, strong) in &acc.defs {
            defs.insert(v.clone());
            match v {
                VarId::State { .. } => {
                    self.state_defs.entry(v.clone()).or_default().insert(id);
                }
                VarId::Env { .. } => {}
                _ => {
                    let e = env.entry(v.clone()).or_default();
                    if *strong {
                        e.clear();
                    }
                    e.insert(id);
                }
            }
        }
        let calls = acc.calls.clone();
        let entry = self.g.nodes.entry(id).or_insert_with(|| NodeInfo {
            kind: NodeKind::Statement,
            function: Some(cx.q.clone()),
            opaque,
            guard: false,
            defs: BTreeSet::new(),
            uses: BTreeSet::new(),
        });
        entry.defs.extend(defs);
        entry.uses.extend(acc.uses);
        let list = self.g.function_nodes.entry(cx.q.clone()).or_default();
        if !list.contains(&id) {
            list.push(id);
        }
        for call in calls {
            self.call(cx, id, call);
        }
    }

    fn stmt(&mut self, cx: &FnCx<'u>, s: &'u Stmt, env: &mut Env) {
        match &s.kind {
            StmtKind::Block(b) => {
                self.register(cx, s, Access::default(), env);
                for x in b {
                    self.stmt(cx, x, env);
                }
            }
            StmtKind::If { cond, then, els } => {
                let mut acc = Access::default();
                acc.expr(&cx.scope, cond);
                self.register(cx, s, acc, env);
                let mut e1 = env.clone();
                self.stmt(cx, then, &mut e1);
                let mut e2 = env.clone();
                if let Some(els) = els {
                    self.stmt(cx, els, &mut e2);
                }
                let then_exits = then.always_exits();
                let else_exits = els.as_ref().is_some_and(|e| e.always_exits());
                *env = match (then_exits, else_exits) {
                    (true, false) => e2,
                    (false, true) => e1,
                    _ => {
                        merge(&mut e1, &e2);
                        e1
                    }
                };
            }
            StmtKind::For { init, cond, step, body } => {
                if let Some(init) = init {
                    self.stmt(cx, init, env);
                }
                self.looped(cx, s, cond.iter().chain(step.iter()).collect(), body, env);
            }
            StmtKind::While { cond, body, .. } => {
                self.looped(cx, s, vec![cond], body, env);
            }
            _ => {
                let acc = Access::of_stmt(&cx.scope, s);
                self.register(cx, s, acc, env);
            }
        }
    }

    fn looped(&mut self, cx: &FnCx<'u>, s: &'u Stmt, header: Vec<&'u Expr>, body: &'u Stmt, env: &mut Env) {
        // Iterate until the reaching definitions at the header are stable.
        for _ in 0..16 {
            let before = env.clone();
            let mut acc = Access::default();
            for e in &header {
                acc.expr(&cx.scope, e);
            }
            // Header definitions (the step) are weak: the body may run zero times.
            for d in &mut acc.defs {
                d.1 = false;
            }
            self.register(cx, s, acc, env);
            let mut inner = env.clone();
            self.stmt(cx, body, &mut inner);
            merge(env, &inner);
            if *env == before {
                break;
            }
        }
    }

    fn resolve_target(&self, cx: &FnCx<'u>, call: &'u Expr) -> Option<Target<'u>> {
        let ExprKind::Call { callee, args, .. } = &call.kind else {
            return None;
        };
        let unit = self.unit;
        let callee = match &callee.kind {
            ExprKind::CallOptions(inner, _) => inner,
            _ => callee,
        };
        let argv: Vec<&Expr> = args.iter().collect();
        match &callee.kind {
            ExprKind::Ident(name) => {
                let f = unit
                    .lookup_function(&cx.f.contract, name, args.len())
                    .or_else(|| unit.lookup_function(FILE_LEVEL, name, args.len()))?;
                f.body.as_ref()?;
                Some(Target::Internal(f, argv))
            }
            ExprKind::Member(base, name) => {
                if let Some(b) = base.ident() {
                    if b == "super" {
                        let c = unit.contract(&cx.f.contract)?;
                        let f = c.linearization.iter().skip(1).find_map(|n| {
                            unit.contract(n)?.functions.iter().find(|f| &f.name == name && f.body.is_some())
                        })?;
                        return Some(Target::Internal(f, argv));
                    }
                    if b == "this" {
                        let f = unit.lookup_function(&cx.f.contract, name, args.len())?;
                        return Some(Target::Internal(f, argv));
                    }
                    if cx.scope.resolve(b).is_none() {
                        // Library or contract name.
                        let f = unit.lookup_function(b, name, args.len())?;
                        f.body.as_ref()?;
                        return Some(Target::Internal(f, argv));
                    }
                    if let Some(ty) = cx.scope.type_of(b) {
                        match ty {
                            TypeName::UserDefined(t) => {
                                if let Some(c) = unit.contract(t) {
                                    if c.kind != ContractKind::Library {
                                        return match unit.lookup_function(t, name, args.len()) {
                                            Some(f) if f.body.is_some() => Some(Target::Internal(f, argv)),
                                            _ => Some(Target::Unknown),
                                        };
                                    }
                                }
                                let is_struct = unit.contracts.iter().any(|c| c.structs.iter().any(|s| &s.name == t));
                                if !is_struct && !self.using_for(cx, name) {
                                    return Some(Target::Unknown);
                                }
                            }
                            t if t.is_address() && matches!(name.as_str(), "call" | "delegatecall" | "staticcall") => {
                                return Some(Target::Unknown);
                            }
                            _ => {}
                        }
                    }
                }
                // `using L for T`: `x.f(a)` calls `L.f(x, a)`.
                let c = unit.contract(&cx.f.contract)?;
                for cname in &c.linearization {
                    for u in &unit.contract(cname)?.using_for {
                        if let Some(f) = unit.lookup_function(&u.library, name, args.len() + 1) {
                            if f.body.is_some() {
                                let mut v = vec![base.as_ref()];
                                v.extend(args.iter());
                                return Some(Target::Internal(f, v));
                            }
                        }
                    }
                }
                None
            }
            _ => None,
        }
    }

    fn using_for(&self, cx: &FnCx<'u>, name: &str) -> bool {
        let Some(c) = self.unit.contract(&cx.f.contract) else { return false };
        c.linearization.iter().filter_map(|n| self.unit.contract(n)).any(|c| {
            c.using_for
                .iter()
                .any(|u| self.unit.contract(&u.library).is_some_and(|l| l.function(name).is_some()))
        })
    }

    fn call(&mut self, cx: &FnCx<'u>, node: NodeId, call: &'u Expr) {
        match self.resolve_target(cx, call) {
            Some(Target::Internal(f, args)) => {
                let q = f.qualified();
                self.g.add_edge(node, f.id, EdgeKind::Call);
                for (p, _a) in f.params.iter().zip(&args) {
                    if let Some(n) = &p.name {
                        let v = VarId::Param {
                            function: q.clone(),
                            name: n.clone(),
                        };
                        self.g.add_data(node, f.id, Some(&v));
                    }
                }
                self.g.calls.push(CallSite {
                    node,
                    expr: call.id,
                    caller: cx.q.clone(),
                    callee: Some(q),
                    target: f.id,
                });
            }
            Some(Target::Unknown) => {
                let u = NodeId(self.next_unknown);
                self.next_unknown += 1;
                self.g.nodes.insert(
                    u,
                    NodeInfo {
                        kind: NodeKind::Unknown,
                        function: Some(cx.q.clone()),
                        opaque: false,
                        guard: false,
                        defs: BTreeSet::new(),
                        uses: BTreeSet::new(),
                    },
                );
                self.g.add_edge(node, u, EdgeKind::Call);
                self.g.add_data(u, node, None);
                self.g.calls.push(CallSite {
                    node,
                    expr: call.id,
                    caller: cx.q.clone(),
                    callee: None,
                    target: u,
                });
            }
            None => {}
        }
    }

    fn control_block(&mut self, stmts: &'u [Stmt]) {
        for (i, s) in stmts.iter().enumerate() {
            if is_guard(s) {
                for later in &stmts[i + 1..] {
                    later.walk(&mut |x| self.g.add_edge(s.id, x.id, EdgeKind::Control));
                }
            }
            match &s.kind {
                StmtKind::If { then, els, .. } => {
                    for c in std::iter::once(then.as_ref()).chain(els.as_deref()) {
                        c.walk(&mut |x| self.g.add_edge(s.id, x.id, EdgeKind::Control));
                        self.control_nested(c);
                    }
                }
                StmtKind::For { body, .. } | StmtKind::While { body, .. } => {
                    body.walk(&mut |x| self.g.add_edge(s.id, x.id, EdgeKind::Control));
                    self.control_nested(body);
                }
                StmtKind::Block(b) => self.control_block(b),
                _ => {}
            }
        }
    }

    fn control_nested(&mut self, s: &'u Stmt) {
        match &s.kind {
            StmtKind::Block(b) => self.control_block(b),
            _ => self.control_block(std::slice::from_ref(s)),
        }
    }

    fn finish(mut self) -> Ipdg {
        // State variables: every definition reaches every use.
        for (n, v) in std::mem::take(&mut self.state_uses) {
            if let Some(defs) = self.state_defs.get(&v) {
                for &d in defs {
                    self.g.add_data(d, n, Some(&v));
                }
            }
        }
        // Return values flow to call sites.
        for c in self.g.calls.clone() {
            let Some(q) = &c.callee else { continue };
            let rets: Vec<NodeId> = self.g.return_nodes.get(q).into_iter().flatten().copied().collect();
            for r in rets {
                self.g.add_data(r, c.node, None);
            }
        }
        let guards: BTreeSet<NodeId> = self
            .g
            .edges
            .iter()
            .filter(|e| e.kind == EdgeKind::Control)
            .map(|e| e.from)
            .collect();
        for gd in guards {
            if let Some(n) = self.g.nodes.get_mut(&gd) {
                n.guard = true;
            }
        }
        self.g.index();
        self.g
    }
}

/// `require(...)`, `assert(...)`, or `if (c) { revert/return }` without else.
pub fn is_guard(s: &Stmt) -> bool {
    match &s.kind {
        StmtKind::Expr(e) => e.is_call_to("require") || e.is_call_to("assert"),
        StmtKind::If { then, els: None, .. } => then.always_exits(),
        _ => false,
    }
}
