//! Structural facts about signature checks: v/s range guards, replay
//! protection mappings, identity parameters and binding sanitizers.

use std::collections::{BTreeMap, BTreeSet};

use num_bigint::BigUint;
use num_traits::{One, Zero};

use crate::flow::{backward, Provenance};
use crate::frontend::{
    locate_sinks, AstUnit, EnvAtom, Expr, ExprKind, FunctionDef, NodeId, SinkSite, Stmt, StmtKind, TypeName,
    VarId,
};
use crate::graph::{is_guard, Ipdg, NodeKind};
use crate::index::AstIndex;
use crate::taint::SrvType;

/// secp256k1 group order n.
pub const SECP256K1_N: &str = "FFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFEBAAEDCE6AF48A03BBFD25E8CD0364141";

pub fn secp256k1_n() -> BigUint {
    BigUint::parse_bytes(SECP256K1_N.as_bytes(), 16).expect("constant")
}

/// floor(n / 2)
pub fn secp256k1_half_order() -> BigUint {
    secp256k1_n() >> 1u32
}

pub const V_CANDIDATES: [u32; 7] = [0, 1, 26, 27, 28, 29, 255];

/// A condition that holds whenever control reaches some statement.
#[derive(Clone, Debug)]
pub struct Guard<'a> {
    pub stmt: NodeId,
    pub cond: &'a Expr,
    /// Whether `cond` is true (require/branch taken) or false (early exit).
    pub polarity: bool,
}

fn contains(s: &Stmt, target: NodeId) -> bool {
    let mut hit = false;
    s.walk(&mut |x| hit |= x.id == target);
    hit
}

/// Guards and branch conditions that dominate `target` within one function
/// body, outermost first.
pub fn dominating_guards(f: &FunctionDef, target: NodeId) -> Vec<Guard<'_>> {
    let mut out = Vec::new();
    if let Some(body) = &f.body {
        walk_dominators(body, target, &mut out);
    }
    out
}

fn walk_dominators<'a>(stmts: &'a [Stmt], target: NodeId, out: &mut Vec<Guard<'a>>) -> bool {
    for s in stmts {
        if contains(s, target) {
            if s.id == target {
                return true;
            }
            match &s.kind {
                StmtKind::If { cond, then, els } => {
                    if contains(then, target) {
                        out.push(Guard { stmt: s.id, cond, polarity: true });
                        walk_dominators(std::slice::from_ref(then.as_ref()), target, out);
                    } else if let Some(e) = els {
                        out.push(Guard { stmt: s.id, cond, polarity: false });
                        walk_dominators(std::slice::from_ref(e.as_ref()), target, out);
                    }
                }
                StmtKind::Block(b) => {
                    walk_dominators(b, target, out);
                }
                StmtKind::For { cond, body, init, .. } => {
                    if let Some(i) = init {
                        if contains(i, target) {
                            return true;
                        }
                    }
                    if let Some(c) = cond {
                        out.push(Guard { stmt: s.id, cond: c, polarity: true });
                    }
                    walk_dominators(std::slice::from_ref(body.as_ref()), target, out);
                }
                StmtKind::While { cond, body, .. } => {
                    out.push(Guard { stmt: s.id, cond, polarity: true });
                    walk_dominators(std::slice::from_ref(body.as_ref()), target, out);
                }
                _ => {}
            }
            return true;
        }
        if is_guard(s) {
            match &s.kind {
                StmtKind::Expr(e) => {
                    if let ExprKind::Call { args, .. } = &e.kind {
                        if let Some(c) = args.first() {
                            out.push(Guard { stmt: s.id, cond: c, polarity: true });
                        }
                    }
                }
                StmtKind::If { cond, .. } => out.push(Guard { stmt: s.id, cond, polarity: false }),
                _ => {}
            }
        }
    }
    false
}

/// Three-valued evaluation result.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Val {
    Num(BigUint),
    Bool(bool),
    Unknown,
}

/// Evaluates `e` with every occurrence of `target` (compared by source text
/// after stripping conversions) replaced by `value`.
pub struct Evaluator<'a> {
    pub unit: &'a AstUnit,
    pub target: String,
    pub value: BigUint,
    pub constants: &'a BTreeMap<String, BigUint>,
}

impl Evaluator<'_> {
    pub fn eval(&self, e: &Expr) -> Val {
        let p = e.peel();
        if self.unit.text(p.id) == self.target {
            return Val::Num(self.value.clone());
        }
        match &p.kind {
            ExprKind::Number { value: Some(v), .. } => v.parse::<BigUint>().map_or(Val::Unknown, Val::Num),
            ExprKind::Bool(b) => Val::Bool(*b),
            ExprKind::Ident(n) => self.constants.get(n).map_or(Val::Unknown, |v| Val::Num(v.clone())),
            ExprKind::Unary { op, operand, .. } if op == "!" => match self.eval(operand) {
                Val::Bool(b) => Val::Bool(!b),
                _ => Val::Unknown,
            },
            ExprKind::Ternary(c, a, b) => match self.eval(c) {
                Val::Bool(true) => self.eval(a),
                Val::Bool(false) => self.eval(b),
                _ => Val::Unknown,
            },
            ExprKind::Binary { op, lhs, rhs } => self.binary(op, lhs, rhs),
            _ => Val::Unknown,
        }
    }

    fn binary(&self, op: &str, lhs: &Expr, rhs: &Expr) -> Val {
        let (a, b) = (self.eval(lhs), self.eval(rhs));
        match op {
            "&&" => match (a, b) {
                (Val::Bool(false), _) | (_, Val::Bool(false)) => Val::Bool(false),
                (Val::Bool(true), Val::Bool(true)) => Val::Bool(true),
                _ => Val::Unknown,
            },
            "||" => match (a, b) {
                (Val::Bool(true), _) | (_, Val::Bool(true)) => Val::Bool(true),
                (Val::Bool(false), Val::Bool(false)) => Val::Bool(false),
                _ => Val::Unknown,
            },
            _ => {
                let (Val::Num(x), Val::Num(y)) = (a, b) else {
                    return Val::Unknown;
                };
                match op {
                    "==" => Val::Bool(x == y),
                    "!=" => Val::Bool(x != y),
                    "<" => Val::Bool(x < y),
                    "<=" => Val::Bool(x <= y),
                    ">" => Val::Bool(x > y),
                    ">=" => Val::Bool(x >= y),
                    "+" => Val::Num(x + y),
                    "*" => Val::Num(x * y),
                    "-" if x >= y => Val::Num(x - y),
                    "/" if !y.is_zero() => Val::Num(x / y),
                    "%" if !y.is_zero() => Val::Num(x % y),
                    _ => Val::Unknown,
                }
            }
        }
    }
}

/// Integer-valued constant state variables of the unit.
pub fn numeric_constants(unit: &AstUnit) -> BTreeMap<String, BigUint> {
    let mut out = BTreeMap::new();
    // constants may refer to earlier constants
    for _ in 0..4 {
        for c in &unit.contracts {
            for v in c.state_vars.iter().filter(|v| v.constant || v.immutable) {
                if out.contains_key(&v.name) {
                    continue;
                }
                let Some(init) = &v.init else { continue };
                let ev = Evaluator {
                    unit,
                    target: String::from("\u{0}"),
                    value: BigUint::zero(),
                    constants: &out,
                };
                if let Val::Num(n) = ev.eval(init) {
                    out.insert(v.name.clone(), n);
                }
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Check {
    Present,
    Absent,
}

#[derive(Clone, Debug)]
pub struct VsChecks {
    pub v: Check,
    pub s: Check,
    /// Guards rejecting at least one candidate value.
    pub partial: BTreeSet<NodeId>,
    /// The guards admit exactly {0, 1}.
    pub v_zero_one: bool,
    /// Source text of the checked expressions.
    pub v_text: Option<String>,
    pub s_text: Option<String>,
}

/// Which of the v-range and s-upper-bound checks dominate the sink.
pub fn vs_checks(ix: &AstIndex, sink: &SinkSite, half: &BigUint) -> VsChecks {
    let unit = ix.unit;
    let constants = numeric_constants(unit);
    let mut out = VsChecks {
        v: Check::Absent,
        s: Check::Absent,
        partial: BTreeSet::new(),
        v_zero_one: false,
        v_text: None,
        s_text: None,
    };
    let Some(f) = ix.function(sink.function_id) else { return out };
    let guards = dominating_guards(f, sink.stmt);
    let accepted = |target: &str, value: &BigUint, partial: &mut BTreeSet<NodeId>| -> bool {
        let ev = Evaluator {
            unit,
            target: target.to_string(),
            value: value.clone(),
            constants: &constants,
        };
        let mut ok = true;
        for g in &guards {
            if ev.eval(g.cond) == Val::Bool(!g.polarity) {
                partial.insert(g.stmt);
                ok = false;
            }
        }
        ok
    };
    let text_of = |arg: &Option<crate::frontend::ExprRef>| {
        arg.as_ref().and_then(|a| ix.expr(a.node)).map(|e| unit.text(e.peel().id).to_string())
    };
    if let Some(vt) = text_of(&sink.v_arg) {
        let admitted: BTreeSet<u32> = V_CANDIDATES
            .into_iter()
            .filter(|c| accepted(&vt, &BigUint::from(*c), &mut out.partial))
            .collect();
        if admitted == BTreeSet::from([27, 28]) {
            out.v = Check::Present;
        }
        out.v_zero_one = admitted == BTreeSet::from([0, 1]);
        out.v_text = Some(vt);
    }
    if let Some(st) = text_of(&sink.s_arg) {
        let n = secp256k1_n();
        let low = accepted(&st, half, &mut out.partial);
        let above = accepted(&st, &(half + BigUint::one()), &mut out.partial);
        let top = accepted(&st, &(n - BigUint::one()), &mut out.partial);
        if low && !above && !top {
            out.s = Check::Present;
        }
        out.s_text = Some(st);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum ProtectionKind {
    /// `require(!used[k]); used[k] = true;` with a signature-derived key.
    UsedKey,
    /// A counter incremented on use and bound into the signed message.
    Nonce,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Protection {
    pub mapping: VarId,
    pub kind: ProtectionKind,
    pub read: NodeId,
    pub write: NodeId,
    /// The key is derived only from the recovered signer address.
    pub signer_keyed: bool,
}

/// Signature-derived roots of one sink.
pub struct SinkRoots {
    pub hash: Provenance,
    pub sig_vars: BTreeSet<VarId>,
    pub recovered: BTreeSet<VarId>,
}

pub fn sink_roots(ix: &AstIndex, g: &Ipdg, sink: &SinkSite) -> SinkRoots {
    let hash = backward(ix, g, &[(sink.stmt, sink.hash_arg.node)]);
    let sig_roots: Vec<(NodeId, NodeId)> = [&sink.v_arg, &sink.r_arg, &sink.s_arg, &sink.sig_arg]
        .into_iter()
        .flatten()
        .map(|a| (sink.stmt, a.node))
        .collect();
    let sig = backward(ix, g, &sig_roots);
    let sig_vars = sig.vars.into_iter().filter(|v| !v.is_env() && !v.is_state()).collect();
    let mut recovered: BTreeSet<VarId> = BTreeSet::new();
    if let Some(info) = g.node(sink.stmt) {
        recovered.extend(info.defs.iter().filter(|d| !d.is_state()).cloned());
        // `return ecrecover(...)` in a helper: the callers' results
        if matches!(ix.stmt(sink.stmt).map(|s| &s.kind), Some(StmtKind::Return(_))) {
            for c in g.calls.iter().filter(|c| c.callee.as_deref() == Some(sink.enclosing_function.as_str())) {
                if let Some(n) = g.node(c.node) {
                    recovered.extend(n.defs.iter().filter(|d| !d.is_state()).cloned());
                }
            }
        }
    }
    SinkRoots { hash, sig_vars, recovered }
}

pub fn is_hashing(ix: &AstIndex, node: NodeId) -> bool {
    ix.node_exprs(node).iter().any(|e| {
        let mut hit = false;
        e.walk(&mut |x| {
            if let Some(n) = x.callee_name() {
                let l = n.to_ascii_lowercase();
                hit |= l.contains("keccak256") || l.contains("sha256") || l.contains("hash");
            }
        });
        hit
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum KeyOrigin {
    Signature,
    Signer,
}

fn key_origin(ix: &AstIndex, g: &Ipdg, roots: &SinkRoots, sink: &SinkSite, node: NodeId, key: NodeId) -> Option<KeyOrigin> {
    let p = backward(ix, g, &[(node, key)]);
    // anything computed from the recovered address also reaches the hash
    // through the recovery call
    if p.nodes.contains(&sink.stmt) && p.vars.iter().any(|v| roots.recovered.contains(v)) {
        return Some(KeyOrigin::Signer);
    }
    let shared_hash_node = p.nodes.iter().any(|n| {
        roots.hash.nodes.contains(n)
            && g.node(*n).is_some_and(|i| i.kind == NodeKind::Statement)
            && (*n == sink.stmt || is_hashing(ix, *n))
    });
    if shared_hash_node || p.vars.iter().any(|v| roots.sig_vars.contains(v)) {
        return Some(KeyOrigin::Signature);
    }
    if p.vars.iter().any(|v| roots.recovered.contains(v)) {
        return Some(KeyOrigin::Signer);
    }
    None
}

fn in_functions(g: &Ipdg, n: NodeId, functions: &BTreeSet<String>) -> bool {
    g.function_of(n).is_some_and(|f| functions.contains(f))
}

/// Mappings that stop a signature from being accepted twice, within the
/// given functions.
pub fn replay_protections(ix: &AstIndex, g: &Ipdg, sink: &SinkSite, functions: &BTreeSet<String>) -> Vec<Protection> {
    let roots = sink_roots(ix, g, sink);
    let mut out = BTreeSet::new();
    let guard_node = |n: NodeId| ix.stmt(n).is_some_and(is_guard);

    let incs = increments(ix, g);
    // used-key mappings
    let mut reads: BTreeMap<&VarId, Vec<(NodeId, KeyOrigin)>> = BTreeMap::new();
    for r in &g.map_reads {
        if !in_functions(g, r.node, functions) || !guard_node(r.node) {
            continue;
        }
        if let Some(o) = r.keys.iter().find_map(|k| key_origin(ix, g, &roots, sink, r.node, *k)) {
            reads.entry(&r.var).or_default().push((r.node, o));
        }
    }
    for w in &g.map_writes {
        let Some(rs) = reads.get(&w.var) else { continue };
        if !in_functions(g, w.node, functions) || incs.contains(&(w.var.clone(), w.node)) {
            continue;
        }
        if let Some(o) = w.keys.iter().find_map(|k| key_origin(ix, g, &roots, sink, w.node, *k)) {
            for (rn, ro) in rs {
                out.insert(Protection {
                    mapping: w.var.clone(),
                    kind: ProtectionKind::UsedKey,
                    read: *rn,
                    write: w.node,
                    signer_keyed: o == KeyOrigin::Signer && *ro == KeyOrigin::Signer,
                });
            }
        }
    }

    // nonces
    for (var, write) in incs {
        if !in_functions(g, write, functions) {
            continue;
        }
        let bound = g.map_reads.iter().filter(|r| r.var == var).find(|r| {
            roots.hash.nodes.contains(&r.node)
                || (guard_node(r.node)
                    && in_functions(g, r.node, functions)
                    && g.node(r.node).is_some_and(|i| {
                        i.uses.iter().any(|u| *u != var && !u.is_env() && roots.hash.vars.contains(u))
                    }))
        });
        if let Some(r) = bound {
            out.insert(Protection {
                mapping: var.clone(),
                kind: ProtectionKind::Nonce,
                read: r.node,
                write,
                signer_keyed: false,
            });
        }
    }
    out.into_iter().collect()
}

/// Mapping entries incremented in place: `m[k]++`, `m[k] += 1`,
/// `m[k] = m[k] + 1` or `m[k].increment()`.
fn increments(ix: &AstIndex, g: &Ipdg) -> Vec<(VarId, NodeId)> {
    let mut out = Vec::new();
    for w in &g.map_writes {
        if g.map_reads.iter().any(|r| r.node == w.node && r.var == w.var) {
            out.push((w.var.clone(), w.node));
        }
    }
    for r in &g.map_reads {
        let hit = ix.node_exprs(r.node).iter().any(|e| {
            let mut hit = false;
            e.walk(&mut |x| {
                if let ExprKind::Call { callee, .. } = &x.kind {
                    if let ExprKind::Member(base, m) = &callee.kind {
                        hit |= m == "increment" && base.base_ident() == Some(r.var.name());
                    }
                }
            });
            hit
        });
        if hit {
            out.push((r.var.clone(), r.node));
        }
    }
    out.sort();
    out.dedup();
    out
}

const IDENTITY_WORDS: [&str; 3] = ["identity", "account", "wallet"];

/// Parameters naming the account a signature acts for.
pub fn identity_params(ix: &AstIndex, functions: &BTreeSet<String>) -> Vec<VarId> {
    let unit = ix.unit;
    let mut out = Vec::new();
    for f in ix.functions() {
        let q = f.qualified();
        if !functions.contains(&q) {
            continue;
        }
        for p in &f.params {
            let Some(name) = &p.name else { continue };
            let bare = name.trim_matches('_').to_ascii_lowercase();
            let named = IDENTITY_WORDS.contains(&bare.as_str());
            let hit = match &p.ty {
                t if t.is_address() => named,
                TypeName::UserDefined(t) if !t.is_empty() => {
                    let is_struct = unit.contracts.iter().any(|c| c.structs.iter().any(|s| &s.name == t));
                    let lt = t.to_ascii_lowercase();
                    !is_struct && (named || IDENTITY_WORDS.iter().any(|w| lt.contains(w)))
                }
                _ => false,
            };
            if hit {
                out.push(VarId::Param {
                    function: q.clone(),
                    name: name.clone(),
                });
            }
        }
    }
    out
}

pub fn is_valid_signature_functions(ix: &AstIndex, functions: &BTreeSet<String>) -> Vec<String> {
    ix.functions()
        .filter(|f| f.name == "isValidSignature" && functions.contains(&f.qualified()))
        .map(|f| f.qualified())
        .collect()
}

/// What a binding sanitizer must be connected to.
#[derive(Clone, Debug)]
pub enum BindingSeed {
    Atom(EnvAtom),
    Names(BTreeSet<String>),
}

/// Names of variables and functions whose value is tied to the seed:
/// assigned or returned from an expression containing it (hashes included),
/// or, when `equality` is set, compared equal to it. Iterated to a fixpoint.
pub fn binding_sanitizers(unit: &AstUnit, seed: &BindingSeed, equality: bool) -> BTreeSet<String> {
    let mut names: BTreeSet<String> = match seed {
        BindingSeed::Atom(_) => BTreeSet::new(),
        BindingSeed::Names(n) => n.clone(),
    };
    let mut funcs: BTreeSet<String> = BTreeSet::new();
    loop {
        let before = (names.len(), funcs.len());
        let mentions = |e: &Expr| -> bool {
            let mut hit = false;
            e.walk(&mut |x| {
                if let BindingSeed::Atom(a) = seed {
                    hit |= EnvAtom::from_expr(x) == Some(*a) || (*a == EnvAtom::AddressThis && x.ident() == Some("this"));
                }
                match &x.kind {
                    ExprKind::Ident(n) => hit |= names.contains(n),
                    ExprKind::Call { .. } => hit |= x.callee_name().is_some_and(|c| funcs.contains(c)),
                    _ => {}
                }
            });
            hit
        };
        let mut add_names = Vec::new();
        let mut add_funcs = Vec::new();
        let visit_expr = |e: &Expr, add_names: &mut Vec<String>| {
            e.walk(&mut |x| match &x.kind {
                ExprKind::Assign { lhs, rhs, .. } if mentions(rhs) => {
                    add_names.extend(lhs.base_ident().map(str::to_string));
                }
                ExprKind::Binary { op, lhs, rhs } if equality && (op == "==" || op == "!=") => {
                    if mentions(lhs) {
                        add_names.extend(idents(rhs));
                    }
                    if mentions(rhs) {
                        add_names.extend(idents(lhs));
                    }
                }
                _ => {}
            });
        };
        for c in &unit.contracts {
            for v in &c.state_vars {
                if let Some(init) = &v.init {
                    if mentions(init) {
                        add_names.push(v.name.clone());
                    }
                    visit_expr(init, &mut add_names);
                }
            }
            for f in &c.functions {
                let named_returns: Vec<&str> = f.returns.iter().filter_map(|p| p.name.as_deref()).collect();
                for s in f.body.iter().flatten() {
                    s.walk(&mut |s| {
                        match &s.kind {
                            StmtKind::VarDecl { decls, init: Some(e) } if mentions(e) => {
                                add_names.extend(decls.iter().flatten().map(|d| d.name.clone()));
                            }
                            StmtKind::Return(Some(e)) if mentions(e) => add_funcs.push(f.name.clone()),
                            _ => {}
                        }
                        for e in s.own_exprs() {
                            visit_expr(e, &mut add_names);
                        }
                    });
                }
                if named_returns.iter().any(|r| names.contains(*r)) {
                    add_funcs.push(f.name.clone());
                }
            }
        }
        names.extend(add_names);
        funcs.extend(add_funcs);
        if (names.len(), funcs.len()) == before {
            break;
        }
    }
    names.extend(funcs);
    names
}

fn idents(e: &Expr) -> Vec<String> {
    let mut out = Vec::new();
    e.walk(&mut |x| {
        if let ExprKind::Ident(n) = &x.kind {
            out.push(n.clone());
        }
    });
    out.retain(|n| !matches!(n.as_str(), "msg" | "block" | "tx" | "abi" | "this" | "address"));
    out
}

/// EIP-712 domain helpers whose definition is out of view.
pub fn opaque_domain_binding(ix: &AstIndex, g: &Ipdg, prov: &Provenance) -> bool {
    let domain_like = |n: &str| {
        let l: String = n.chars().filter(|c| *c != '_').collect::<String>().to_ascii_lowercase();
        l.contains("domainseparator") || l.contains("hashtypeddata")
    };
    let state_out_of_view = prov.vars.iter().any(|v| {
        v.is_state() && domain_like(v.name()) && g.def_nodes(v).is_empty()
    });
    let call_out_of_view = prov.nodes.iter().any(|n| {
        ix.node_exprs(*n).iter().any(|e| {
            let mut hit = false;
            e.walk(&mut |x| {
                if let Some(c) = x.callee_name() {
                    let resolved = g.calls.iter().any(|cs| cs.expr == x.id && cs.callee.is_some());
                    hit |= domain_like(c) && !resolved;
                }
            });
            hit
        })
    });
    state_out_of_view || call_out_of_view
}

/// Sanitized variable names per replay type.
pub type Sanitizers = BTreeMap<SrvType, BTreeSet<String>>;

/// Sanitizers recognized from code structure alone, over every sink and
/// function of the unit.
pub fn structural_sanitizers(unit: &AstUnit, g: &Ipdg, ix: &AstIndex, half: &BigUint) -> Sanitizers {
    let mut out = Sanitizers::new();
    out.insert(SrvType::XCra, binding_sanitizers(unit, &BindingSeed::Atom(EnvAtom::BlockChainId), true));
    out.insert(SrvType::XPra, binding_sanitizers(unit, &BindingSeed::Atom(EnvAtom::AddressThis), true));
    let all: BTreeSet<String> = ix.functions().map(|f| f.qualified()).collect();
    let ids: BTreeSet<String> = identity_params(ix, &all).iter().map(|v| v.name().to_string()).collect();
    let casr = if !ids.is_empty() {
        binding_sanitizers(unit, &BindingSeed::Names(ids), false)
    } else if !is_valid_signature_functions(ix, &all).is_empty() {
        binding_sanitizers(unit, &BindingSeed::Atom(EnvAtom::AddressThis), false)
    } else {
        BTreeSet::new()
    };
    out.insert(SrvType::Casr, casr);
    let mut ssmi = BTreeSet::new();
    let mut sma = BTreeSet::new();
    for sink in locate_sinks(unit) {
        ssmi.extend(replay_protections(ix, g, &sink, &all).into_iter().map(|p| p.mapping.name().to_string()));
        let vs = vs_checks(ix, &sink, half);
        if vs.v == Check::Present {
            sma.extend(vs.v_text);
        }
        if vs.s == Check::Present {
            sma.extend(vs.s_text);
        }
    }
    out.insert(SrvType::Ssmi, ssmi);
    out.insert(SrvType::Sma, sma);
    out.retain(|_, v| !v.is_empty());
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::load;
    use crate::graph::build_ipdg;
    use std::path::Path;

    fn checks(body: &str) -> VsChecks {
        let src = format!(
            "contract A {{ uint256 constant HALF = 0x7FFFFFFFFFFFFFFFFFFFFFFFFFFFFFFF5D576E7357A4501DDFE92F46681B20A0;
              function f(bytes32 h, uint8 v, bytes32 r, bytes32 s) public pure returns (address) {{ {body} return ecrecover(h, v, r, s); }} }}"
        );
        let u = load(&src, Path::new("a.sol")).unwrap();
        let ix = AstIndex::new(&u);
        let sink = &locate_sinks(&u)[0];
        vs_checks(&ix, sink, &secp256k1_half_order())
    }

    #[test]
    fn half_order_is_half_of_n() {
        let half = secp256k1_half_order();
        assert_eq!(
            format!("{half:X}"),
            "7FFFFFFFFFFFFFFFFFFFFFFFFFFFFFFF5D576E7357A4501DDFE92F46681B20A0"
        );
        assert_eq!(half.clone() * 2u32 + 1u32, secp256k1_n());
    }

    #[test]
    fn recognizes_v_and_s_checks() {
        let both = checks("require(v == 27 || v == 28); require(uint256(s) <= HALF);");
        assert_eq!((both.v, both.s), (Check::Present, Check::Present));
        let none = checks("");
        assert_eq!((none.v, none.s), (Check::Absent, Check::Absent));
        assert!(none.partial.is_empty());
        let reverted = checks("if (uint256(s) > HALF) { revert(); } if (v != 27 && v != 28) revert();");
        assert_eq!((reverted.v, reverted.s), (Check::Present, Check::Present));
        let strict = checks("require(uint256(s) < HALF + 1, \"s\"); require(v >= 27 && v <= 28);");
        assert_eq!((strict.v, strict.s), (Check::Present, Check::Present));
    }

    #[test]
    fn partial_and_loose_checks() {
        let only_v = checks("require(v == 27 || v == 28);");
        assert_eq!((only_v.v, only_v.s), (Check::Present, Check::Absent));
        assert_eq!(only_v.partial.len(), 1);
        let loose = checks("require(uint256(s) < 0xFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFEBAAEDCE6AF48A03BBFD25E8CD0364141);");
        assert_eq!(loose.s, Check::Absent);
        let zero_one = checks("require(v == 0 || v == 1);");
        assert_eq!(zero_one.v, Check::Absent);
        assert!(zero_one.v_zero_one);
        // a check inside an unrelated branch does not dominate the sink
        let branch = checks("if (r == 0) { require(v == 27 || v == 28); }");
        assert_eq!(branch.v, Check::Absent);
    }

    fn fixture(rel: &str) -> AstUnit {
        let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../corpus").join(rel);
        load(&std::fs::read_to_string(&p).unwrap(), &p).unwrap()
    }

    fn protections(rel: &str) -> Vec<Protection> {
        let u = fixture(rel);
        let g = build_ipdg(&u);
        let ix = AstIndex::new(&u);
        let sink = &locate_sinks(&u)[0];
        let all: BTreeSet<String> = g.entry_points.keys().cloned().collect();
        replay_protections(&ix, &g, sink, &all)
    }

    #[test]
    fn replay_protection_idioms_on_fixtures() {
        let names = |p: &[Protection]| -> Vec<(String, ProtectionKind)> {
            p.iter().map(|x| (x.mapping.name().to_string(), x.kind)).collect()
        };
        assert!(protections("figures/vulnerable/erc20_with_permit.sol").is_empty());
        assert_eq!(names(&protections("figures/patched/erc20_with_permit.sol")), vec![("nonces".into(), ProtectionKind::Nonce)]);
        assert!(protections("figures/vulnerable/connext_transaction_manager.sol").is_empty());
        assert_eq!(
            names(&protections("figures/patched/connext_transaction_manager.sol")),
            vec![("usedSignatures".into(), ProtectionKind::UsedKey)]
        );
        assert_eq!(names(&protections("figures/vulnerable/hermez_withdraw.sol")), vec![("nonces".into(), ProtectionKind::Nonce)]);
        assert_eq!(names(&protections("figures/vulnerable/biconomy_paymaster.sol")), vec![("senderNonce".into(), ProtectionKind::Nonce)]);
        assert_eq!(names(&protections("figures/vulnerable/adex_quick_acc_manager.sol")), vec![("executed".into(), ProtectionKind::UsedKey)]);
        assert_eq!(names(&protections("limitations/custom_assembly.sol")), vec![("nonces".into(), ProtectionKind::Nonce)]);
        assert!(protections("misc/signature_claimed.sol").is_empty());
        assert_eq!(names(&protections("misc/signature_claimed_patched.sol")), vec![("signatureClaimed".into(), ProtectionKind::UsedKey)]);
        let airdrop = protections("limitations/airdrop_get.sol");
        assert_eq!(airdrop.len(), 1, "{airdrop:?}");
        assert!(airdrop[0].signer_keyed);
    }

    #[test]
    fn identity_parameters() {
        let u = fixture("figures/vulnerable/adex_quick_acc_manager.sol");
        let ix = AstIndex::new(&u);
        let all: BTreeSet<String> = ix.functions().map(|f| f.qualified()).collect();
        let ids = identity_params(&ix, &all);
        assert_eq!(ids.iter().map(|v| v.name()).collect::<Vec<_>>(), vec!["identity"]);
        let u = fixture("figures/vulnerable/erc20_with_permit.sol");
        let ix = AstIndex::new(&u);
        let all: BTreeSet<String> = ix.functions().map(|f| f.qualified()).collect();
        assert!(identity_params(&ix, &all).is_empty());
    }

    #[test]
    fn binding_sanitizer_fixpoint() {
        let u = fixture("figures/vulnerable/connext_transaction_manager.sol");
        let x = binding_sanitizers(&u, &BindingSeed::Atom(EnvAtom::BlockChainId), true);
        assert!(x.contains("txData") && x.contains("getChainId") && x.contains("_chainId"));
        let u = fixture("figures/vulnerable/biconomy_paymaster.sol");
        assert!(binding_sanitizers(&u, &BindingSeed::Atom(EnvAtom::BlockChainId), true).is_empty());
        let u = fixture("figures/vulnerable/interest_permit.sol");
        let x = binding_sanitizers(&u, &BindingSeed::Atom(EnvAtom::BlockChainId), true);
        assert!(x.contains("getChainid") && x.contains("DOMAIN_SEPARATOR") && x.contains("digest"));
        // identity compared with a lookup is not a binding of the signed hash
        let u = fixture("figures/vulnerable/adex_quick_acc_manager.sol");
        let seed = BindingSeed::Names(BTreeSet::from(["identity".to_string()]));
        let x = binding_sanitizers(&u, &seed, false);
        assert!(!x.contains("accHash") && !x.contains("hash"));
    }
}
