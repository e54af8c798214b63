//! Symbolic execution of a call sequence into path constraints.
//!
//! Values are terms over uninterpreted symbols: hashing and ABI encoding are
//! injective functions, comparisons are boolean functions and arithmetic is
//! left uninterpreted. Storage survives across the transactions of one
//! sequence. Loops run at most once.

use std::collections::{BTreeMap, BTreeSet};

use sha2::{Digest, Sha256};

use super::{infer_sorts, FunDecl, PathConstraintSet, Sort, Term};
use crate::frontend::{
    is_elementary_type, locate_sinks, AstUnit, EnvAtom, Expr, ExprKind, FunctionDef, NodeId, Scope,
    StateVarDecl, Stmt, StmtKind, TypeName, VarId,
};
use crate::graph::Ipdg;
use crate::taint::Warning;

pub const MAX_PATHS: usize = 16;
pub const MAX_INLINE_DEPTH: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PathError {
    #[error("no path of the sequence reaches the sink")]
    PathNotFound,
    #[error("function `{0}` of the sequence has no body in the unit")]
    UnknownFunction(String),
    #[error("empty call sequence")]
    EmptySequence,
}

#[derive(Clone, Debug)]
struct Frame {
    /// Function (or contract, for state initializers) whose scope applies.
    scope: NodeId,
    serial: u32,
    vars: BTreeMap<String, Term>,
}

#[derive(Clone, Debug)]
struct Write {
    shape: String,
    keys: Vec<Term>,
    value: Term,
}

#[derive(Clone, Debug, Default)]
struct State {
    frames: Vec<Frame>,
    scalars: BTreeMap<String, Term>,
    /// Writes through index and member chains, oldest first.
    writes: BTreeMap<String, Vec<Write>>,
    pc: Vec<Term>,
    tx: usize,
    /// Transaction index and recovered signer at the first sink visit.
    sink_hit: Option<(usize, Term)>,
    opaque: bool,
}

enum Flow {
    Next,
    Return(Vec<Term>),
    Break,
    Continue,
}

enum Step<'e> {
    Key(&'e Expr),
    Field(&'e str),
}

struct Exec<'u> {
    unit: &'u AstUnit,
    scopes: BTreeMap<NodeId, Scope>,
    /// Resolved callee per call expression; `None` for code outside the unit.
    calls: BTreeMap<NodeId, Option<String>>,
    sink_stmt: NodeId,
    sink_calls: BTreeSet<NodeId>,
    constants: BTreeMap<String, Term>,
    var_hints: BTreeMap<String, Sort>,
    ret_hints: BTreeMap<String, Sort>,
    inputs: BTreeSet<String>,
    fresh: u32,
    reverted_after_sink: bool,
}

type Outs<T> = Vec<(State, T)>;

fn cap<T>(mut v: Vec<T>) -> Vec<T> {
    v.truncate(MAX_PATHS);
    v
}

fn bare(q: &str) -> &str {
    q.rsplit('.').next().unwrap_or(q)
}

fn sort_of_type(t: &TypeName) -> Option<Sort> {
    match t {
        t if t.is_address() => Some(Sort::Addr),
        TypeName::Elementary(s) if s == "bool" => Some(Sort::Bool),
        _ => None,
    }
}

fn lit(v: &str) -> Term {
    Term::var(format!("lit:{v}"))
}

fn is_injective(f: &str) -> bool {
    ["keccak256", "sha256", "ripemd160", "abi.encode", "array/"].iter().any(|p| f.starts_with(p))
}

fn is_literal(v: &str) -> bool {
    v.starts_with("lit:") || v.starts_with("addrlit:") || v.starts_with("str:")
}

fn env_var(atom: EnvAtom, tx: usize) -> String {
    match atom {
        EnvAtom::BlockChainId | EnvAtom::AddressThis => atom.as_str().to_string(),
        other => format!("{}#t{tx}", other.as_str()),
    }
}

fn default_value(t: &TypeName) -> Term {
    match t {
        TypeName::Elementary(s) if s == "bool" => Term::Lit(false),
        t if t.is_address() => Term::var("addrlit:0"),
        _ => lit("0"),
    }
}

/// `m[k].f[j]` → (`m`, [Key k, Field f, Key j]).
fn access_path(e: &Expr) -> Option<(&str, Vec<Step<'_>>)> {
    let mut steps = Vec::new();
    let mut cur = e;
    loop {
        match &cur.kind {
            ExprKind::Index(b, Some(k)) => {
                steps.push(Step::Key(k));
                cur = b;
            }
            ExprKind::Member(b, f) => {
                steps.push(Step::Field(f));
                cur = b;
            }
            ExprKind::Ident(n) => {
                steps.reverse();
                return Some((n, steps));
            }
            _ => return None,
        }
    }
}

fn shape(steps: &[Step]) -> String {
    steps
        .iter()
        .map(|s| match s {
            Step::Key(_) => "[]".to_string(),
            Step::Field(f) => format!(".{f}"),
        })
        .collect()
}

impl<'u> Exec<'u> {
    fn fresh(&mut self, prefix: &str) -> Term {
        self.fresh += 1;
        Term::var(format!("{prefix}#{}", self.fresh))
    }

    fn scope(&mut self, id: NodeId) -> &Scope {
        let unit = self.unit;
        self.scopes.entry(id).or_insert_with(|| {
            if let Some((_, f)) = unit.function_by_id(id) {
                Scope::for_function(unit, f)
            } else {
                let c = unit.contracts.iter().find(|c| c.id == id).expect("scope of a known node");
                Scope::for_contract(unit, c)
            }
        })
    }

    fn state_decl(&self, contract: &str, name: &str) -> Option<&'u StateVarDecl> {
        let c = self.unit.contract(contract)?;
        c.linearization
            .iter()
            .chain(std::iter::once(&c.name))
            .filter_map(|n| self.unit.contract(n))
            .flat_map(|c| c.state_vars.iter())
            .find(|v| v.name == name)
    }

    fn type_after(&self, mut t: TypeName, steps: &[Step]) -> Option<TypeName> {
        for s in steps {
            t = match (t, s) {
                (TypeName::Mapping(_, v), Step::Key(_)) => *v,
                (TypeName::Array(e, _), Step::Key(_)) => *e,
                (TypeName::UserDefined(sn), Step::Field(f)) => self
                    .unit
                    .contracts
                    .iter()
                    .flat_map(|c| c.structs.iter())
                    .find(|s| s.name == sn)
                    .and_then(|s| s.fields.iter().find(|(n, _)| n == f))
                    .map(|(_, t)| t.clone())?,
                _ => return None,
            };
        }
        Some(t)
    }

    fn new_frame(&mut self, scope: NodeId) -> Frame {
        self.fresh += 1;
        Frame {
            scope,
            serial: self.fresh,
            vars: BTreeMap::new(),
        }
    }

    fn resolve(&mut self, st: &State, name: &str) -> Option<VarId> {
        let scope = st.frames.last()?.scope;
        self.scope(scope).resolve(name)
    }

    fn constant(&mut self, key: &str, decl: &'u StateVarDecl, contract: &str) -> Term {
        if let Some(t) = self.constants.get(key) {
            return t.clone();
        }
        let placeholder = Term::var(format!("{key}@0"));
        self.constants.insert(key.to_string(), placeholder.clone());
        let Some(init) = &decl.init else { return placeholder };
        let Some(c) = self.unit.contract(contract) else { return placeholder };
        let frame = self.new_frame(c.id);
        let st = State {
            frames: vec![frame],
            ..State::default()
        };
        let t = self.eval(st, init, MAX_INLINE_DEPTH).into_iter().next().map_or(placeholder, |(_, t)| t);
        self.constants.insert(key.to_string(), t.clone());
        t
    }

    fn read_ident(&mut self, st: &State, name: &str) -> Term {
        if let Some(t) = st.frames.last().and_then(|f| f.vars.get(name)) {
            return t.clone();
        }
        match name {
            "this" => return Term::var(EnvAtom::AddressThis.as_str()),
            "now" => return Term::var(env_var(EnvAtom::BlockTimestamp, st.tx)),
            _ => {}
        }
        match self.resolve(st, name) {
            Some(VarId::State { contract, name }) => {
                let key = format!("{contract}.{name}");
                if let Some(t) = st.scalars.get(&key) {
                    return t.clone();
                }
                let decl = self.state_decl(&contract, &name);
                if let Some(d) = decl {
                    if d.constant {
                        return self.constant(&key, d, &contract);
                    }
                    if let Some(s) = sort_of_type(&d.ty) {
                        self.var_hints.insert(format!("{key}@0"), s);
                    }
                }
                Term::var(format!("{key}@0"))
            }
            // declared but never assigned on this path
            Some(VarId::Local { .. } | VarId::Param { .. }) => {
                let scope = st.frames.last().map(|f| f.scope);
                let ty = scope.and_then(|s| self.scope(s).type_of(name).cloned());
                match ty {
                    Some(t) if !matches!(t, TypeName::UserDefined(_) | TypeName::Array(..)) => default_value(&t),
                    _ => self.fresh(name),
                }
            }
            _ => Term::var(name),
        }
    }

    /// Storage key and the initial symbol for an access path rooted at `base`.
    fn path_root(&mut self, st: &State, base: &str, steps: &[Step]) -> (String, Result<String, Term>) {
        let sh = shape(steps);
        match self.resolve(st, base) {
            Some(VarId::State { contract, name }) if !st.frames.last().is_some_and(|f| f.vars.contains_key(base)) => {
                let key = format!("{contract}.{name}");
                let f = format!("{key}@0{sh}");
                if let Some(d) = self.state_decl(&contract, &name) {
                    if let Some(s) = self.type_after(d.ty.clone(), steps).as_ref().and_then(sort_of_type) {
                        self.ret_hints.insert(f.clone(), s);
                    }
                }
                (key, Ok(f))
            }
            _ => {
                let serial = st.frames.last().map_or(0, |f| f.serial);
                let scope = st.frames.last().map(|f| f.scope);
                let ty = scope.and_then(|s| self.scope(s).type_of(base).cloned());
                let f = format!("sel{sh}");
                if let Some(s) = ty.and_then(|t| self.type_after(t, steps)).as_ref().and_then(sort_of_type) {
                    self.ret_hints.insert(f.clone(), s);
                }
                (format!("{serial}:{base}"), Err(self.read_ident(st, base)))
            }
        }
    }

    fn eval_steps(&mut self, st: State, steps: &[Step], depth: usize) -> Outs<Vec<Term>> {
        let mut outs: Outs<Vec<Term>> = vec![(st, Vec::new())];
        for s in steps {
            let Step::Key(k) = s else { continue };
            let mut next = Vec::new();
            for (st, keys) in outs {
                for (st, t) in self.eval(st, k, depth) {
                    let mut keys = keys.clone();
                    keys.push(t);
                    next.push((st, keys));
                }
            }
            outs = cap(next);
        }
        outs
    }

    fn read_path(&mut self, st: State, base: &str, steps: &[Step], depth: usize) -> Outs<Term> {
        let sh = shape(steps);
        let mut out = Vec::new();
        for (st, keys) in self.eval_steps(st, steps, depth) {
            let (key, root) = self.path_root(&st, base, steps);
            let init = match root {
                Ok(f) => Term::app(f, keys.clone()),
                Err(base_term) => {
                    let mut args = vec![base_term];
                    args.extend(keys.iter().cloned());
                    Term::app(format!("sel{sh}"), args)
                }
            };
            let mut value = init;
            for w in st.writes.get(&key).into_iter().flatten().filter(|w| w.shape == sh) {
                let cond = Term::And(w.keys.iter().zip(&keys).map(|(a, b)| Term::eq(a.clone(), b.clone())).collect());
                value = Term::ite(cond, w.value.clone(), value);
            }
            out.push((st, value));
        }
        out
    }

    fn assign(&mut self, st: State, lhs: &Expr, value: Term, depth: usize) -> Vec<State> {
        let lhs = lhs.peel();
        if let ExprKind::Ident(name) = &lhs.kind {
            let mut st = st;
            let local = st.frames.last().is_some_and(|f| f.vars.contains_key(name.as_str()));
            match self.resolve(&st, name) {
                Some(VarId::State { contract, name }) if !local => {
                    st.scalars.insert(format!("{contract}.{name}"), value);
                }
                _ => {
                    if let Some(f) = st.frames.last_mut() {
                        f.vars.insert(name.clone(), value);
                    }
                }
            }
            return vec![st];
        }
        let Some((base, steps)) = access_path(lhs) else {
            return vec![st];
        };
        let sh = shape(&steps);
        let mut out = Vec::new();
        for (mut st, keys) in self.eval_steps(st, &steps, depth) {
            let (key, _) = self.path_root(&st, base, &steps);
            st.writes.entry(key).or_default().push(Write {
                shape: sh.clone(),
                keys,
                value: value.clone(),
            });
            out.push(st);
        }
        out
    }

    fn eval_list(&mut self, st: State, es: &[&Expr], depth: usize) -> Outs<Vec<Term>> {
        let mut outs: Outs<Vec<Term>> = vec![(st, Vec::new())];
        for e in es {
            let mut next = Vec::new();
            for (st, vals) in outs {
                for (st, t) in self.eval(st, e, depth) {
                    let mut vals = vals.clone();
                    vals.push(t);
                    next.push((st, vals));
                }
            }
            outs = cap(next);
        }
        outs
    }

    fn eval(&mut self, st: State, e: &Expr, depth: usize) -> Outs<Term> {
        if let Some(atom) = EnvAtom::from_expr(e) {
            if atom != EnvAtom::AddressThis || !matches!(e.kind, ExprKind::Ident(_)) {
                let name = env_var(atom, st.tx);
                if matches!(atom, EnvAtom::MsgSender | EnvAtom::TxOrigin | EnvAtom::AddressThis) {
                    self.var_hints.insert(name.clone(), Sort::Addr);
                }
                if matches!(atom, EnvAtom::MsgSender | EnvAtom::MsgValue | EnvAtom::MsgData) {
                    self.inputs.insert(name.clone());
                }
                return vec![(st, Term::var(name))];
            }
        }
        match &e.kind {
            ExprKind::Ident(n) => {
                let t = self.read_ident(&st, n);
                vec![(st, t)]
            }
            ExprKind::Number { raw, value } => vec![(st, lit(value.as_deref().unwrap_or(raw)))],
            ExprKind::Bool(b) => vec![(st, Term::Lit(*b))],
            ExprKind::Str(s) => {
                let h = hex::encode(&Sha256::digest(s.as_bytes())[..6]);
                vec![(st, Term::var(format!("str:{h}")))]
            }
            ExprKind::Member(base, field) => {
                if let Some((b, steps)) = access_path(e) {
                    if self.resolve(&st, b).is_some() || st.frames.last().is_some_and(|f| f.vars.contains_key(b)) {
                        return self.read_path(st, b, &steps, depth);
                    }
                    // `Library.CONSTANT`, `type(x).max` and the like
                    return vec![(st, Term::var(self.unit.text(e.id).to_string()))];
                }
                let f = format!("field.{field}");
                self.eval(st, base, depth).into_iter().map(|(st, b)| (st, Term::app(f.clone(), vec![b]))).collect()
            }
            ExprKind::Index(base, key) => {
                if let Some((b, steps)) = access_path(e) {
                    return self.read_path(st, b, &steps, depth);
                }
                let mut parts = vec![base.as_ref()];
                parts.extend(key.as_deref());
                self.eval_list(st, &parts, depth)
                    .into_iter()
                    .map(|(st, v)| (st, Term::app(format!("index/{}", v.len()), v)))
                    .collect()
            }
            ExprKind::Call { .. } => self
                .eval_call(st, e, depth)
                .into_iter()
                .map(|(st, v)| {
                    let t = v.into_iter().next();
                    (st, t)
                })
                .collect::<Vec<_>>()
                .into_iter()
                .map(|(st, t)| {
                    let t = t.unwrap_or_else(|| self.fresh("void"));
                    (st, t)
                })
                .collect(),
            ExprKind::CallOptions(inner, _) => self.eval(st, inner, depth),
            ExprKind::Unary { op, prefix, operand } => match op.as_str() {
                "!" => self.eval(st, operand, depth).into_iter().map(|(st, t)| (st, Term::not(t))).collect(),
                "++" | "--" => {
                    let f = if op == "++" { "op+" } else { "op-" };
                    let mut out = Vec::new();
                    for (st, old) in self.eval(st, operand, depth) {
                        let new = Term::app(f, vec![old.clone(), lit("1")]);
                        let shown = if *prefix { new.clone() } else { old };
                        for st in self.assign(st, operand, new.clone(), depth) {
                            out.push((st, shown.clone()));
                        }
                    }
                    out
                }
                "delete" => {
                    let mut out = Vec::new();
                    for st in self.assign(st, operand, lit("0"), depth) {
                        out.push((st, lit("0")));
                    }
                    out
                }
                _ => {
                    let f = format!("op{op}u");
                    self.eval(st, operand, depth).into_iter().map(|(st, t)| (st, Term::app(f.clone(), vec![t]))).collect()
                }
            },
            ExprKind::Binary { op, lhs, rhs } => self
                .eval_list(st, &[lhs, rhs], depth)
                .into_iter()
                .map(|(st, v)| {
                    let (a, b) = (v[0].clone(), v[1].clone());
                    let t = match op.as_str() {
                        "&&" => Term::And(vec![a, b]),
                        "||" => Term::Or(vec![a, b]),
                        "==" => Term::eq(a, b),
                        "!=" => Term::not(Term::eq(a, b)),
                        "<" => Term::app("lt", vec![a, b]),
                        ">" => Term::app("lt", vec![b, a]),
                        "<=" => Term::not(Term::app("lt", vec![b, a])),
                        ">=" => Term::not(Term::app("lt", vec![a, b])),
                        other => Term::app(format!("op{other}"), vec![a, b]),
                    };
                    (st, t)
                })
                .collect(),
            ExprKind::Assign { op, lhs, rhs } => {
                if let ExprKind::Tuple(items) = &lhs.kind {
                    let mut out = Vec::new();
                    for (st, vals) in self.eval_multi(st, rhs, items.len(), depth) {
                        let mut states = vec![st];
                        for (item, v) in items.iter().zip(&vals) {
                            let Some(item) = item else { continue };
                            states = states.into_iter().flat_map(|s| self.assign(s, item, v.clone(), depth)).collect();
                        }
                        out.extend(states.into_iter().map(|s| (s, Term::Lit(true))));
                    }
                    return cap(out);
                }
                let mut out = Vec::new();
                for (st, r) in self.eval(st, rhs, depth) {
                    let pairs = if op == "=" {
                        vec![(st, r)]
                    } else {
                        let f = format!("op{}", op.trim_end_matches('='));
                        self.eval(st, lhs, depth)
                            .into_iter()
                            .map(|(st, old)| (st, Term::app(f.clone(), vec![old, r.clone()])))
                            .collect()
                    };
                    for (st, v) in pairs {
                        for st in self.assign(st, lhs, v.clone(), depth) {
                            out.push((st, v.clone()));
                        }
                    }
                }
                cap(out)
            }
            ExprKind::Ternary(c, a, b) => self
                .eval_list(st, &[c, a, b], depth)
                .into_iter()
                .map(|(st, v)| (st, Term::ite(v[0].clone(), v[1].clone(), v[2].clone())))
                .collect(),
            ExprKind::Tuple(items) if items.len() == 1 && items[0].is_some() => {
                self.eval(st, items[0].as_ref().expect("checked"), depth)
            }
            ExprKind::Tuple(items) => {
                let parts: Vec<&Expr> = items.iter().flatten().collect();
                self.eval_list(st, &parts, depth)
                    .into_iter()
                    .map(|(st, v)| (st, Term::app(format!("array/{}", v.len()), v)))
                    .collect()
            }
            ExprKind::Array(items) => {
                let parts: Vec<&Expr> = items.iter().collect();
                self.eval_list(st, &parts, depth)
                    .into_iter()
                    .map(|(st, v)| (st, Term::app(format!("array/{}", v.len()), v)))
                    .collect()
            }
            ExprKind::TypeName(_) => vec![(st, Term::var(self.unit.text(e.id).to_string()))],
            ExprKind::New(_) => {
                let t = self.fresh("new");
                vec![(st, t)]
            }
        }
    }

    /// Evaluates `e` to `n` values, for tuple destructuring.
    fn eval_multi(&mut self, st: State, e: &Expr, n: usize, depth: usize) -> Outs<Vec<Term>> {
        let outs = match &e.kind {
            ExprKind::Tuple(items) if items.len() == n => {
                let parts: Vec<&Expr> = items.iter().flatten().collect();
                if parts.len() == n {
                    self.eval_list(st, &parts, depth)
                } else {
                    vec![(st, Vec::new())]
                }
            }
            ExprKind::Call { .. } => self.eval_call(st, e, depth),
            _ => self.eval(st, e, depth).into_iter().map(|(st, t)| (st, vec![t])).collect(),
        };
        outs.into_iter()
            .map(|(st, mut v)| {
                while v.len() < n {
                    v.push(self.fresh("ret"));
                }
                (st, v)
            })
            .collect()
    }

    fn eval_call(&mut self, st: State, e: &Expr, depth: usize) -> Outs<Vec<Term>> {
        let ExprKind::Call { callee, args, names } = &e.kind else {
            return Vec::new();
        };
        let arg_refs: Vec<&Expr> = args.iter().collect();
        let one = |outs: Outs<Term>| -> Outs<Vec<Term>> { outs.into_iter().map(|(s, t)| (s, vec![t])).collect() };

        if self.sink_calls.contains(&e.id) {
            return self.sink_call(st, e, depth);
        }
        // conversions
        let conversion = match &callee.kind {
            ExprKind::TypeName(t) => Some(t.is_address()),
            ExprKind::Ident(n) if n == "payable" || is_elementary_type(n) => Some(n.starts_with("address")),
            _ => None,
        };
        if let Some(to_address) = conversion {
            if let Some(atom) = EnvAtom::from_expr(e) {
                self.var_hints.insert(atom.as_str().to_string(), Sort::Addr);
                return vec![(st, vec![Term::var(atom.as_str())])];
            }
            if args.len() == 1 {
                if let (true, ExprKind::Number { raw, value }) = (to_address, &args[0].kind) {
                    let v = value.as_deref().unwrap_or(raw);
                    return vec![(st, vec![Term::var(format!("addrlit:{v}"))])];
                }
                return one(self.eval(st, &args[0], depth));
            }
        }
        if let ExprKind::Ident(n) = &callee.kind {
            match n.as_str() {
                "require" | "assert" => {
                    let Some(c) = args.first() else { return vec![(st, Vec::new())] };
                    return self
                        .eval(st, c, depth)
                        .into_iter()
                        .filter(|(_, t)| *t != Term::Lit(false))
                        .map(|(mut st, t)| {
                            if t != Term::Lit(true) {
                                st.pc.push(t);
                            }
                            (st, Vec::new())
                        })
                        .collect();
                }
                "revert" => {
                    if st.sink_hit.is_some() {
                        self.reverted_after_sink = true;
                    }
                    return Vec::new();
                }
                "keccak256" | "sha256" | "ripemd160" | "addmod" | "mulmod" | "blockhash" | "gasleft" | "ecrecover" => {
                    let f = if n == "ecrecover" { "ecrecover".to_string() } else { format!("{n}/{}", args.len()) };
                    if n == "ecrecover" {
                        self.ret_hints.insert(f.clone(), Sort::Addr);
                    }
                    return self
                        .eval_list(st, &arg_refs, depth)
                        .into_iter()
                        .map(|(st, v)| (st, vec![Term::app(f.clone(), v)]))
                        .collect();
                }
                _ => {}
            }
        }
        if let ExprKind::Member(base, m) = &callee.kind {
            if base.ident() == Some("abi") {
                if m == "decode" {
                    return vec![(st, Vec::new())];
                }
                let f = format!("abi.{m}/{}", args.len());
                return self
                    .eval_list(st, &arg_refs, depth)
                    .into_iter()
                    .map(|(st, v)| (st, vec![Term::app(f.clone(), v)]))
                    .collect();
            }
        }
        match self.calls.get(&e.id).cloned() {
            Some(Some(q)) if depth < MAX_INLINE_DEPTH => {
                let Some((_, f)) = self.unit.function_by_qualified(&q) else {
                    return vec![(st, Vec::new())];
                };
                let mut actuals: Vec<&Expr> = arg_refs.clone();
                if let ExprKind::Member(base, _) = &callee.kind {
                    if f.params.len() == args.len() + 1 {
                        actuals.insert(0, base);
                    }
                }
                if let Some(names) = names {
                    let mut ordered = Vec::new();
                    for p in &f.params {
                        let i = names.iter().position(|n| Some(n) == p.name.as_ref());
                        if let Some(i) = i {
                            ordered.push(&args[i]);
                        }
                    }
                    if ordered.len() == args.len() {
                        actuals = ordered;
                    }
                }
                let mut out = Vec::new();
                for (st, vals) in self.eval_list(st, &actuals, depth) {
                    out.extend(self.inline(st, f, vals, depth + 1));
                }
                cap(out)
            }
            Some(_) => {
                // external code, or inlining budget spent: an unconstrained result
                let outs = self.eval_list(st, &arg_refs, depth);
                outs.into_iter()
                    .map(|(st, _)| {
                        let t = self.fresh("ext");
                        (st, vec![t])
                    })
                    .collect()
            }
            None => {
                // out-of-view helper: a deterministic function of its inputs
                let mut parts = Vec::new();
                let name = match &callee.kind {
                    ExprKind::Member(base, m) => {
                        let receiver_is_value = match base.ident() {
                            Some(b) => self.resolve(&st, b).is_some(),
                            None => true,
                        };
                        if receiver_is_value {
                            parts.push(base.as_ref());
                            format!("call.{m}")
                        } else {
                            format!("call.{}.{m}", self.unit.text(base.id))
                        }
                    }
                    _ => format!("call.{}", self.unit.text(callee.id)),
                };
                parts.extend(arg_refs.iter().copied());
                let f = format!("{name}/{}", parts.len());
                self.eval_list(st, &parts, depth)
                    .into_iter()
                    .map(|(st, v)| (st, vec![Term::app(f.clone(), v)]))
                    .collect()
            }
        }
    }

    fn sink_call(&mut self, st: State, e: &Expr, depth: usize) -> Outs<Vec<Term>> {
        let ExprKind::Call { callee, args, .. } = &e.kind else {
            return Vec::new();
        };
        let mut parts: Vec<&Expr> = Vec::new();
        let (f, try_form) = match &callee.kind {
            ExprKind::Member(base, m) => {
                let receiver_is_value = match base.ident() {
                    Some(b) => self.resolve(&st, b).is_some(),
                    None => true,
                };
                if receiver_is_value {
                    parts.push(base);
                }
                ("recover".to_string(), m == "tryRecover")
            }
            _ => ("ecrecover".to_string(), false),
        };
        parts.extend(args.iter());
        let f = if f == "recover" { format!("recover/{}", parts.len()) } else { f };
        self.ret_hints.insert(f.clone(), Sort::Addr);
        let mut out = Vec::new();
        for (mut st, v) in self.eval_list(st, &parts, depth) {
            let signer = Term::app(f.clone(), v);
            if st.sink_hit.is_none() {
                st.sink_hit = Some((st.tx, signer.clone()));
            }
            let mut vals = vec![signer];
            if try_form {
                vals.push(self.fresh("recover.err"));
            }
            out.push((st, vals));
        }
        out
    }

    fn inline(&mut self, mut st: State, f: &'u FunctionDef, args: Vec<Term>, depth: usize) -> Outs<Vec<Term>> {
        let Some(body) = &f.body else {
            return vec![(st, Vec::new())];
        };
        let mut frame = self.new_frame(f.id);
        for (p, a) in f.params.iter().zip(args) {
            if let Some(n) = &p.name {
                frame.vars.insert(n.clone(), a);
            }
        }
        for r in &f.returns {
            if let Some(n) = &r.name {
                frame.vars.insert(n.clone(), default_value(&r.ty));
            }
        }
        st.frames.push(frame);
        let mut out = Vec::new();
        for (mut st, flow) in self.exec_block(st, body, depth) {
            let frame = st.frames.pop().expect("pushed above");
            let vals = match flow {
                Flow::Return(v) if !v.is_empty() => v,
                _ => f.returns.iter().filter_map(|r| r.name.as_ref().and_then(|n| frame.vars.get(n).cloned())).collect(),
            };
            out.push((st, vals));
        }
        out
    }

    fn exec_block(&mut self, st: State, stmts: &[Stmt], depth: usize) -> Outs<Flow> {
        let mut live: Outs<Flow> = vec![(st, Flow::Next)];
        for s in stmts {
            let mut next = Vec::new();
            for (st, flow) in live {
                match flow {
                    Flow::Next => next.extend(self.exec(st, s, depth)),
                    other => next.push((st, other)),
                }
            }
            live = cap(next);
        }
        live
    }

    fn branch(st: &State, c: &Term, polarity: bool) -> Option<State> {
        let c = if polarity { c.clone() } else { Term::not(c.clone()) };
        match c {
            Term::Lit(false) => None,
            Term::Lit(true) => Some(st.clone()),
            c => {
                let mut s = st.clone();
                s.pc.push(c);
                Some(s)
            }
        }
    }

    fn exec(&mut self, st: State, s: &Stmt, depth: usize) -> Outs<Flow> {
        let next = |v: Vec<State>| -> Outs<Flow> { v.into_iter().map(|s| (s, Flow::Next)).collect() };
        match &s.kind {
            StmtKind::Block(b) => self.exec_block(st, b, depth),
            StmtKind::VarDecl { decls, init } => {
                let n = decls.len();
                let outs = match init {
                    Some(e) if n == 1 => self.eval(st, e, depth).into_iter().map(|(s, t)| (s, vec![t])).collect(),
                    Some(e) => self.eval_multi(st, e, n, depth),
                    None => {
                        let v = decls.iter().map(|d| d.as_ref().map_or(lit("0"), |d| default_value(&d.ty))).collect();
                        vec![(st, v)]
                    }
                };
                let mut out = Vec::new();
                for (mut st, vals) in outs {
                    for (d, v) in decls.iter().zip(vals) {
                        let Some(d) = d else { continue };
                        if let Some(f) = st.frames.last_mut() {
                            f.vars.insert(d.name.clone(), v);
                        }
                    }
                    out.push(st);
                }
                next(out)
            }
            StmtKind::Expr(e) => next(self.eval(st, e, depth).into_iter().map(|(s, _)| s).collect()),
            StmtKind::Emit(_) | StmtKind::Placeholder => vec![(st, Flow::Next)],
            StmtKind::If { cond, then, els } => {
                let mut out = Vec::new();
                for (st, c) in self.eval(st, cond, depth) {
                    if let Some(t) = Self::branch(&st, &c, true) {
                        out.extend(self.exec(t, then, depth));
                    }
                    if let Some(f) = Self::branch(&st, &c, false) {
                        match els {
                            Some(e) => out.extend(self.exec(f, e, depth)),
                            None => out.push((f, Flow::Next)),
                        }
                    }
                }
                cap(out)
            }
            StmtKind::For { init, cond, step, body } => {
                let starts = match init {
                    Some(i) => self.exec(st, i, depth).into_iter().map(|(s, _)| s).collect(),
                    None => vec![st],
                };
                let mut out = Vec::new();
                for st in starts {
                    out.extend(self.loop_once(st, cond.as_ref(), body, step.as_ref(), depth));
                }
                cap(out)
            }
            StmtKind::While { cond, body, do_while: false } => self.loop_once(st, Some(cond), body, None, depth),
            StmtKind::While { body, do_while: true, .. } => self
                .exec(st, body, depth)
                .into_iter()
                .map(|(s, f)| match f {
                    Flow::Break | Flow::Continue => (s, Flow::Next),
                    other => (s, other),
                })
                .collect(),
            StmtKind::Return(e) => {
                let Some(e) = e else { return vec![(st, Flow::Return(Vec::new()))] };
                let n = match &e.kind {
                    ExprKind::Tuple(items) => items.len(),
                    _ => 1,
                };
                self.eval_multi(st, e, n, depth).into_iter().map(|(s, v)| (s, Flow::Return(v))).collect()
            }
            StmtKind::Revert(_) => {
                if st.sink_hit.is_some() {
                    self.reverted_after_sink = true;
                }
                Vec::new()
            }
            StmtKind::Break => vec![(st, Flow::Break)],
            StmtKind::Continue => vec![(st, Flow::Continue)],
            StmtKind::Opaque(block) => {
                let mut st = st;
                st.opaque = true;
                for w in &block.writes {
                    let v = self.fresh("asm");
                    let target = Expr {
                        id: s.id,
                        kind: ExprKind::Ident(w.clone()),
                    };
                    st = self.assign(st, &target, v, depth).pop().expect("identifier assignment keeps the state");
                }
                if s.id == self.sink_stmt && st.sink_hit.is_none() {
                    let signer = self.fresh("asm.signer");
                    if let Term::Var(n) = &signer {
                        self.var_hints.insert(n.clone(), Sort::Addr);
                    }
                    st.sink_hit = Some((st.tx, signer));
                }
                vec![(st, Flow::Next)]
            }
        }
    }

    fn loop_once(&mut self, st: State, cond: Option<&Expr>, body: &Stmt, step: Option<&Expr>, depth: usize) -> Outs<Flow> {
        let conds = match cond {
            Some(c) => self.eval(st, c, depth),
            None => vec![(st, Term::Lit(true))],
        };
        let mut out = Vec::new();
        for (st, c) in conds {
            if let Some(enter) = Self::branch(&st, &c, true) {
                for (s, flow) in self.exec(enter, body, depth) {
                    match flow {
                        Flow::Return(v) => out.push((s, Flow::Return(v))),
                        Flow::Break => out.push((s, Flow::Next)),
                        Flow::Next | Flow::Continue => match step {
                            Some(e) => out.extend(self.eval(s, e, depth).into_iter().map(|(s, _)| (s, Flow::Next))),
                            None => out.push((s, Flow::Next)),
                        },
                    }
                }
            }
            if let Some(skip) = Self::branch(&st, &c, false) {
                out.push((skip, Flow::Next));
            }
        }
        cap(out)
    }

    fn transaction(&mut self, st: State, f: &'u FunctionDef, tx: usize) -> Vec<State> {
        let args: Vec<Term> = f
            .params
            .iter()
            .map(|p| {
                let name = format!("{}.{}#t{tx}", f.name, p.name.as_deref().unwrap_or("_"));
                if let Some(s) = sort_of_type(&p.ty) {
                    self.var_hints.insert(name.clone(), s);
                }
                self.inputs.insert(name.clone());
                Term::var(name)
            })
            .collect();
        let mut st = st;
        st.tx = tx;
        let sender = env_var(EnvAtom::MsgSender, tx);
        self.var_hints.insert(sender.clone(), Sort::Addr);
        self.inputs.insert(sender);
        self.inline(st, f, args, 0).into_iter().map(|(s, _)| s).collect()
    }
}

fn find_function<'u>(unit: &'u AstUnit, warning_contract: Option<&str>, name: &str) -> Option<&'u FunctionDef> {
    let preferred = warning_contract.and_then(|c| unit.contract(c)).and_then(|c| {
        c.function_table
            .iter()
            .filter(|r| r.name == name)
            .find_map(|r| unit.function_by_id(r.function).map(|(_, f)| f))
            .or_else(|| c.function(name))
    });
    preferred
        .filter(|f| f.body.is_some())
        .or_else(|| unit.functions().map(|(_, f)| f).find(|f| f.name == name && f.body.is_some()))
}

/// Path constraints for every explored path of `sequence` that reaches the
/// warning's sink and completes without reverting. Each set asserts the
/// replay condition: the sender of the sink's transaction is not the signer.
pub fn build_path_constraints(
    unit: &AstUnit,
    g: &Ipdg,
    sequence: &[String],
    warning: &Warning,
) -> Result<Vec<PathConstraintSet>, PathError> {
    if sequence.is_empty() {
        return Err(PathError::EmptySequence);
    }
    let contract = unit.function_by_qualified(&warning.function).map(|(c, _)| c.name.as_str());
    let mut txs: Vec<&FunctionDef> = Vec::new();
    for (i, name) in sequence.iter().enumerate() {
        let called_by_previous = i > 0
            && g.calls.iter().any(|c| {
                bare(&c.caller) == sequence[i - 1] && c.callee.as_deref().is_some_and(|q| bare(q) == name)
            });
        if called_by_previous {
            continue;
        }
        txs.push(find_function(unit, contract, name).ok_or_else(|| PathError::UnknownFunction(name.clone()))?);
    }
    let sink_calls = locate_sinks(unit).into_iter().filter(|s| s.stmt == warning.sink).map(|s| s.id).collect();
    let mut ex = Exec {
        unit,
        scopes: BTreeMap::new(),
        calls: g.calls.iter().map(|c| (c.expr, c.callee.clone())).collect(),
        sink_stmt: warning.sink,
        sink_calls,
        constants: BTreeMap::new(),
        var_hints: BTreeMap::new(),
        ret_hints: BTreeMap::new(),
        inputs: BTreeSet::new(),
        fresh: 0,
        reverted_after_sink: false,
    };
    let mut states = vec![State::default()];
    for (k, f) in txs.iter().enumerate() {
        let mut next = Vec::new();
        for st in states {
            next.extend(ex.transaction(st, f, k));
        }
        states = cap(next);
    }

    let mut out = Vec::new();
    for st in states {
        let Some((tx, signer)) = &st.sink_hit else { continue };
        let mut assertions = st.pc.clone();
        let sender = Term::var(env_var(EnvAtom::MsgSender, *tx));
        assertions.push(Term::not(Term::eq(sender, signer.clone())));
        out.push(finish(&ex, sequence, assertions, st.opaque));
    }
    if out.is_empty() {
        if !ex.reverted_after_sink {
            return Err(PathError::PathNotFound);
        }
        // every path through the sink reverts
        out.push(finish(&ex, sequence, vec![Term::Lit(false)], false));
    }
    Ok(out)
}

fn finish(ex: &Exec, sequence: &[String], mut assertions: Vec<Term>, opaque: bool) -> PathConstraintSet {
    let (variables, _) = infer_sorts(&assertions, &ex.var_hints, &ex.ret_hints);
    let mut groups: BTreeMap<Sort, Vec<Term>> = BTreeMap::new();
    for (v, s) in &variables {
        if is_literal(v) && *s != Sort::Bool {
            groups.entry(*s).or_default().push(Term::var(v.clone()));
        }
    }
    for (_, g) in groups {
        if g.len() > 1 {
            assertions.push(Term::Distinct(g));
        }
    }
    let (variables, funs) = infer_sorts(&assertions, &ex.var_hints, &ex.ret_hints);
    let uninterpreted = funs
        .into_iter()
        .map(|(f, (args, ret))| {
            let injective = is_injective(&f);
            (f, FunDecl { args, ret, injective })
        })
        .collect();
    let attacker_inputs = ex.inputs.iter().filter(|v| variables.contains_key(*v)).cloned().collect();
    PathConstraintSet {
        sequence: sequence.to_vec(),
        variables,
        uninterpreted,
        assertions,
        attacker_inputs,
        opaque,
    }
}

#[cfg(test)]
mod tests {
    use std::path::Path;
    use std::time::Duration;

    use super::*;
    use crate::detectors::tests::warnings_for;
    use crate::detectors::DetectorConfig;
    use crate::frontend::load;
    use crate::graph::build_ipdg;
    use crate::pathcheck::{builtin, Status};
    use crate::taint::SrvType;

    fn corpus(rel: &str) -> String {
        let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../corpus").join(rel);
        std::fs::read_to_string(p).unwrap()
    }

    fn verdicts(src: &str, srv: SrvType, seq: &[&str]) -> Result<Vec<Status>, PathError> {
        let unit = load(src, Path::new("t.sol")).unwrap();
        let g = build_ipdg(&unit);
        let w = warnings_for(src, &DetectorConfig::default())
            .into_iter()
            .find(|w| w.srv_type == srv)
            .unwrap_or_else(|| panic!("no {srv:?} warning in {:?}", warnings_for(src, &DetectorConfig::default())));
        let seq: Vec<String> = seq.iter().map(|s| s.to_string()).collect();
        let sets = build_path_constraints(&unit, &g, &seq, &w)?;
        if std::env::var("DUMP").is_ok() {
            eprintln!("{w:?}");
            sets.iter().for_each(|s| eprintln!("{}", s.to_text()));
        }
        Ok(sets.iter().map(|s| builtin::solve(s, Duration::from_secs(5)).status).collect())
    }

    #[test]
    fn interest_permit_is_reachable_and_owner_only_is_not() {
        let v = verdicts(&corpus("figures/vulnerable/interest_permit.sol"), SrvType::Sma, &["permit"]).unwrap();
        assert!(v.contains(&Status::Sat), "{v:?}");
        let src = corpus("misc/interest_permit_owner_only.sol");
        let w = warnings_for(&src, &DetectorConfig::default());
        let srv = w[0].srv_type;
        let v = verdicts(&src, srv, &["permit"]).unwrap();
        assert!(v.iter().all(|s| *s == Status::Unsat), "{v:?}");
    }

    #[test]
    fn sink_behind_a_constant_false_branch_is_not_found() {
        let src = r#"contract A {
            function f(bytes32 h, uint8 v, bytes32 r, bytes32 s) external {
                if (false) { address a = ecrecover(h, v, r, s); }
            }
            function g() external {}
        }"#;
        let unit = load(src, Path::new("t.sol")).unwrap();
        let g = build_ipdg(&unit);
        let w = warnings_for(src, &DetectorConfig::default()).remove(0);
        assert_eq!(build_path_constraints(&unit, &g, &["g".into()], &w), Err(PathError::PathNotFound));
        assert_eq!(build_path_constraints(&unit, &g, &["f".into()], &w), Err(PathError::PathNotFound));
        assert_eq!(build_path_constraints(&unit, &g, &[], &w), Err(PathError::EmptySequence));
    }

    #[test]
    fn sink_only_on_reverting_paths_is_unsat() {
        let src = r#"contract A {
            function f(bytes32 h, uint8 v, bytes32 r, bytes32 s) external {
                address a = ecrecover(h, v, r, s);
                revert("closed");
            }
        }"#;
        let v = verdicts(src, SrvType::Sma, &["f"]).unwrap();
        assert_eq!(v, vec![Status::Unsat]);
    }

    #[test]
    fn internal_call_chain_is_inlined() {
        let src = r#"contract A {
            address owner;
            function _check(bytes32 h, uint8 v, bytes32 r, bytes32 s) internal view returns (bool) {
                return ecrecover(h, v, r, s) == owner;
            }
            function withdraw(bytes32 h, uint8 v, bytes32 r, bytes32 s) external {
                require(_check(h, v, r, s));
                require(msg.sender == owner);
            }
            function open(bytes32 h, uint8 v, bytes32 r, bytes32 s) external {
                require(_check(h, v, r, s));
            }
        }"#;
        // the sender must be the owner, who is also the signer
        assert_eq!(verdicts(src, SrvType::Sma, &["withdraw", "_check"]).unwrap(), vec![Status::Unsat]);
        assert!(verdicts(src, SrvType::Sma, &["open", "_check"]).unwrap().contains(&Status::Sat));
    }

    #[test]
    fn storage_persists_across_transactions() {
        let src = r#"contract A {
            address admin;
            bool locked;
            function lock() external { locked = true; }
            function f(bytes32 h, uint8 v, bytes32 r, bytes32 s) external {
                require(!locked);
                require(ecrecover(h, v, r, s) == admin);
            }
        }"#;
        assert!(verdicts(src, SrvType::Sma, &["f"]).unwrap().contains(&Status::Sat));
        // `require(!locked)` folds to false before the sink is reached
        assert_eq!(verdicts(src, SrvType::Sma, &["lock", "f"]), Err(PathError::PathNotFound));
    }

    #[test]
    fn used_hash_mapping_is_read_through_writes() {
        let src = r#"contract A {
            address admin;
            mapping(bytes32 => bool) used;
            function f(bytes32 h, uint8 v, bytes32 r, bytes32 s) external {
                used[h] = true;
                require(!used[h]);
                require(ecrecover(h, v, r, s) == admin);
            }
        }"#;
        assert_eq!(verdicts(src, SrvType::Sma, &["f"]).unwrap(), vec![Status::Unsat]);
    }

    #[test]
    fn path_count_is_capped() {
        let mut body = String::new();
        for i in 0..8 {
            body.push_str(&format!("if (x == {i}) {{ y = {i}; }}\n"));
        }
        let src = format!(
            "contract A {{ uint y; function f(uint x, bytes32 h, uint8 v, bytes32 r, bytes32 s) external {{ {body} ecrecover(h, v, r, s); }} }}"
        );
        let v = verdicts(&src, SrvType::Sma, &["f"]).unwrap();
        assert!(!v.is_empty() && v.len() <= MAX_PATHS);
    }
}
