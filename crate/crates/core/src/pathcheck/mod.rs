//! Path feasibility for warnings: symbolic constraints along oracle-proposed
//! call sequences, decided by a built-in finite-domain search or an external
//! SMT solver.

pub mod builder;
pub mod builtin;
pub mod smtlib;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use builder::{build_path_constraints, PathError, MAX_INLINE_DEPTH, MAX_PATHS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Sort {
    Bool,
    Word,
    Addr,
}

impl Sort {
    /// Smallest domain the finite search uses for this sort.
    pub fn nominal_domain(self) -> usize {
        match self {
            Sort::Bool => 2,
            Sort::Word => 8,
            Sort::Addr => 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Term {
    Var(String),
    Lit(bool),
    Not(Box<Term>),
    And(Vec<Term>),
    Or(Vec<Term>),
    Eq(Box<Term>, Box<Term>),
    Distinct(Vec<Term>),
    Ite(Box<Term>, Box<Term>, Box<Term>),
    App(String, Vec<Term>),
}

impl Term {
    pub fn var(n: impl Into<String>) -> Term {
        Term::Var(n.into())
    }

    pub fn eq(a: Term, b: Term) -> Term {
        Term::Eq(Box::new(a), Box::new(b))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(a: Term) -> Term {
        match a {
            Term::Not(inner) => *inner,
            Term::Lit(b) => Term::Lit(!b),
            other => Term::Not(Box::new(other)),
        }
    }

    pub fn ite(c: Term, a: Term, b: Term) -> Term {
        if a == b {
            return a;
        }
        Term::Ite(Box::new(c), Box::new(a), Box::new(b))
    }

    pub fn app(f: impl Into<String>, args: Vec<Term>) -> Term {
        Term::App(f.into(), args)
    }

    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a Term)) {
        f(self);
        match self {
            Term::Var(_) | Term::Lit(_) => {}
            Term::Not(a) => a.walk(f),
            Term::And(v) | Term::Or(v) | Term::Distinct(v) | Term::App(_, v) => v.iter().for_each(|t| t.walk(f)),
            Term::Eq(a, b) => {
                a.walk(f);
                b.walk(f);
            }
            Term::Ite(c, a, b) => {
                c.walk(f);
                a.walk(f);
                b.walk(f);
            }
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let list = |f: &mut fmt::Formatter<'_>, op: &str, v: &[Term]| -> fmt::Result {
            write!(f, "({op}")?;
            for t in v {
                write!(f, " {t}")?;
            }
            write!(f, ")")
        };
        match self {
            Term::Var(n) => write!(f, "{n}"),
            Term::Lit(b) => write!(f, "{b}"),
            Term::Not(a) => write!(f, "(not {a})"),
            Term::And(v) => list(f, "and", v),
            Term::Or(v) => list(f, "or", v),
            Term::Distinct(v) => list(f, "distinct", v),
            Term::Eq(a, b) => write!(f, "(= {a} {b})"),
            Term::Ite(c, a, b) => write!(f, "(ite {c} {a} {b})"),
            Term::App(n, v) if v.is_empty() => write!(f, "{n}"),
            Term::App(n, v) => list(f, n, v),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FunDecl {
    pub args: Vec<Sort>,
    pub ret: Sort,
    /// Equal results imply equal arguments (hashing and encoding).
    pub injective: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct PathConstraintSet {
    pub sequence: Vec<String>,
    pub variables: BTreeMap<String, Sort>,
    pub uninterpreted: BTreeMap<String, FunDecl>,
    pub assertions: Vec<Term>,
    /// Variables an attacker chooses: calldata and the sender.
    pub attacker_inputs: Vec<String>,
    /// Some value on the path came from inline assembly.
    pub opaque: bool,
}

impl PathConstraintSet {
    /// Domain size per sort: the nominal size, grown to the number of
    /// distinct value terms of that sort so the finite search stays
    /// complete for equality reasoning.
    pub fn domain_sizes(&self) -> BTreeMap<Sort, usize> {
        let mut terms: BTreeMap<Sort, BTreeSet<&Term>> = BTreeMap::new();
        for a in &self.assertions {
            a.walk(&mut |t| {
                let s = match t {
                    Term::Var(n) => self.variables.get(n).copied(),
                    Term::App(n, _) => self.uninterpreted.get(n).map(|d| d.ret),
                    _ => None,
                };
                if let Some(s) = s {
                    terms.entry(s).or_default().insert(t);
                }
            });
        }
        [Sort::Bool, Sort::Word, Sort::Addr]
            .into_iter()
            .map(|s| {
                let n = if s == Sort::Bool { 0 } else { terms.get(&s).map_or(0, |t| t.len()) };
                (s, n.max(s.nominal_domain()))
            })
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("; sequence: {}\n", self.sequence.join(" -> "));
        for a in &self.assertions {
            out.push_str(&format!("{a}\n"));
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Status {
    Sat,
    Unsat,
    Unknown,
    Timeout,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ReachabilityVerdict {
    pub status: Status,
    /// Values of attacker inputs, as domain element names; only when SAT.
    pub model: Option<BTreeMap<String, String>>,
    pub sequence: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "lowercase")]
pub enum Backend {
    Builtin,
    External { path: PathBuf },
}

#[derive(Debug, thiserror::Error)]
pub enum SolverError {
    #[error("solver process: {0}")]
    Io(#[from] std::io::Error),
    #[error("unexpected solver output: {0:?}")]
    Malformed(String),
}

pub fn check_reachability(
    constraints: &PathConstraintSet,
    backend: &Backend,
    timeout: Duration,
) -> Result<ReachabilityVerdict, SolverError> {
    match backend {
        Backend::Builtin => Ok(builtin::solve(constraints, timeout)),
        Backend::External { path } => smtlib::solve(constraints, path, timeout),
    }
}

/// Union-find over sort slots: variables, function results and function
/// argument positions.
#[derive(Default)]
struct SortInference {
    slots: BTreeMap<Slot, usize>,
    parent: Vec<usize>,
    evidence: Vec<BTreeSet<Sort>>,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Slot {
    Var(String),
    Ret(String),
    Arg(String, usize),
    Fresh(usize),
}

impl SortInference {
    fn slot(&mut self, s: Slot) -> usize {
        if let Some(i) = self.slots.get(&s) {
            return *i;
        }
        let i = self.parent.len();
        self.parent.push(i);
        self.evidence.push(BTreeSet::new());
        self.slots.insert(s, i);
        i
    }

    fn find(&mut self, i: usize) -> usize {
        let p = self.parent[i];
        if p == i {
            return i;
        }
        let r = self.find(p);
        self.parent[i] = r;
        r
    }

    fn union(&mut self, a: usize, b: usize) {
        let (a, b) = (self.find(a), self.find(b));
        if a != b {
            self.parent[b] = a;
            let e = std::mem::take(&mut self.evidence[b]);
            self.evidence[a].extend(e);
        }
    }

    fn mark(&mut self, i: usize, s: Sort) {
        let r = self.find(i);
        self.evidence[r].insert(s);
    }

    fn fresh(&mut self) -> usize {
        let n = self.parent.len();
        self.slot(Slot::Fresh(n))
    }

    /// Slot of a value-position term.
    fn term(&mut self, t: &Term) -> usize {
        match t {
            Term::Var(n) => self.slot(Slot::Var(n.clone())),
            Term::App(f, args) => {
                for (i, a) in args.iter().enumerate() {
                    let s = self.term(a);
                    let p = self.slot(Slot::Arg(f.clone(), i));
                    self.union(s, p);
                }
                self.slot(Slot::Ret(f.clone()))
            }
            Term::Ite(c, a, b) => {
                self.formula(c);
                let (x, y) = (self.term(a), self.term(b));
                self.union(x, y);
                x
            }
            _ => {
                self.formula(t);
                let s = self.fresh();
                self.mark(s, Sort::Bool);
                s
            }
        }
    }

    /// A term in boolean position.
    fn formula(&mut self, t: &Term) {
        match t {
            Term::Lit(_) => {}
            Term::Not(a) => self.formula(a),
            Term::And(v) | Term::Or(v) => v.iter().for_each(|x| self.formula(x)),
            Term::Eq(a, b) => {
                let (x, y) = (self.term(a), self.term(b));
                self.union(x, y);
            }
            Term::Distinct(v) => {
                let slots: Vec<usize> = v.iter().map(|x| self.term(x)).collect();
                for w in slots.windows(2) {
                    self.union(w[0], w[1]);
                }
            }
            Term::Var(_) | Term::App(..) | Term::Ite(..) => {
                let s = self.term(t);
                self.mark(s, Sort::Bool);
            }
        }
    }

    fn resolve(&mut self, s: Slot) -> Sort {
        let i = self.slot(s);
        let r = self.find(i);
        let e = &self.evidence[r];
        if e.contains(&Sort::Bool) {
            Sort::Bool
        } else if e.contains(&Sort::Addr) {
            Sort::Addr
        } else {
            Sort::Word
        }
    }
}

/// Assigns a sort to every variable and function symbol of `assertions`.
/// `hints` come from declared types; boolean positions force `Bool`,
/// otherwise `Addr` wins over the default `Word`.
pub fn infer_sorts(
    assertions: &[Term],
    var_hints: &BTreeMap<String, Sort>,
    ret_hints: &BTreeMap<String, Sort>,
) -> (BTreeMap<String, Sort>, BTreeMap<String, (Vec<Sort>, Sort)>) {
    let mut inf = SortInference::default();
    for a in assertions {
        inf.formula(a);
    }
    for (v, s) in var_hints {
        let i = inf.slot(Slot::Var(v.clone()));
        inf.mark(i, *s);
    }
    for (f, s) in ret_hints {
        let i = inf.slot(Slot::Ret(f.clone()));
        inf.mark(i, *s);
    }
    let mut vars = BTreeSet::new();
    let mut funs: BTreeMap<String, usize> = BTreeMap::new();
    for a in assertions {
        a.walk(&mut |t| match t {
            Term::Var(n) => {
                vars.insert(n.clone());
            }
            Term::App(f, args) => {
                funs.insert(f.clone(), args.len());
            }
            _ => {}
        });
    }
    let variables = vars.into_iter().map(|v| (v.clone(), inf.resolve(Slot::Var(v)))).collect();
    let functions = funs
        .into_iter()
        .map(|(f, n)| {
            let args = (0..n).map(|i| inf.resolve(Slot::Arg(f.clone(), i))).collect();
            let ret = inf.resolve(Slot::Ret(f.clone()));
            (f, (args, ret))
        })
        .collect();
    (variables, functions)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sorts_follow_equalities_and_positions() {
        let a = vec![
            Term::eq(Term::var("owner"), Term::app("ec", vec![Term::var("h")])),
            Term::not(Term::app("used", vec![Term::var("h")])),
            Term::eq(Term::var("x"), Term::var("y")),
        ];
        let hints = BTreeMap::from([("owner".to_string(), Sort::Addr)]);
        let (vars, funs) = infer_sorts(&a, &hints, &BTreeMap::new());
        assert_eq!(vars["owner"], Sort::Addr);
        assert_eq!(vars["h"], Sort::Word);
        assert_eq!(vars["x"], Sort::Word);
        assert_eq!(funs["ec"], (vec![Sort::Word], Sort::Addr));
        // `h` is the argument of both functions, so their argument sorts agree
        assert_eq!(funs["used"], (vec![Sort::Word], Sort::Bool));
    }

    #[test]
    fn domains_grow_with_the_number_of_terms() {
        let mut c = PathConstraintSet::default();
        let names: Vec<String> = (0..10).map(|i| format!("w{i}")).collect();
        c.assertions.push(Term::Distinct(names.iter().map(Term::var).collect()));
        for n in &names {
            c.variables.insert(n.clone(), Sort::Word);
        }
        let d = c.domain_sizes();
        assert_eq!(d[&Sort::Word], 10);
        assert_eq!(d[&Sort::Addr], 4);
        assert_eq!(d[&Sort::Bool], 2);
    }
}
