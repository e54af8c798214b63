//! Finite-domain decision procedure for the equality fragment.
//!
//! Function applications are replaced by fresh cells plus pairwise
//! consistency (and, for injective symbols, injectivity) constraints, then
//! cells are enumerated with early pruning. Values within a sort are
//! interchangeable, so each cell only tries values up to one past the
//! largest already used in its sort.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use super::{PathConstraintSet, ReachabilityVerdict, Sort, Status, Term};

type Cell = usize;

#[derive(Clone, Debug)]
enum F {
    Const(bool),
    True(Cell),
    Eq(Cell, Cell),
    Not(Box<F>),
    And(Vec<F>),
    Or(Vec<F>),
}

impl F {
    fn cells(&self, out: &mut Vec<Cell>) {
        match self {
            F::Const(_) => {}
            F::True(c) => out.push(*c),
            F::Eq(a, b) => out.extend([*a, *b]),
            F::Not(f) => f.cells(out),
            F::And(v) | F::Or(v) => v.iter().for_each(|f| f.cells(out)),
        }
    }

    /// Three-valued evaluation under a partial assignment.
    fn eval(&self, a: &[Option<u32>]) -> Option<bool> {
        match self {
            F::Const(b) => Some(*b),
            F::True(c) => a[*c].map(|v| v == 1),
            F::Eq(x, y) => Some(a[*x]? == a[*y]?),
            F::Not(f) => f.eval(a).map(|b| !b),
            F::And(v) => {
                let mut unknown = false;
                for f in v {
                    match f.eval(a) {
                        Some(false) => return Some(false),
                        None => unknown = true,
                        _ => {}
                    }
                }
                (!unknown).then_some(true)
            }
            F::Or(v) => {
                let mut unknown = false;
                for f in v {
                    match f.eval(a) {
                        Some(true) => return Some(true),
                        None => unknown = true,
                        _ => {}
                    }
                }
                (!unknown).then_some(false)
            }
        }
    }
}

struct Compiler<'c> {
    set: &'c PathConstraintSet,
    sorts: Vec<Sort>,
    vars: BTreeMap<String, Cell>,
    apps: BTreeMap<Term, Cell>,
    by_fun: BTreeMap<String, Vec<(Vec<Cell>, Cell)>>,
    side: Vec<F>,
}

impl Compiler<'_> {
    fn cell(&mut self, sort: Sort) -> Cell {
        self.sorts.push(sort);
        self.sorts.len() - 1
    }

    fn value(&mut self, t: &Term) -> Cell {
        match t {
            Term::Var(n) => {
                if let Some(c) = self.vars.get(n) {
                    return *c;
                }
                let s = self.set.variables.get(n).copied().unwrap_or(Sort::Word);
                let c = self.cell(s);
                self.vars.insert(n.clone(), c);
                c
            }
            Term::App(f, args) => {
                if let Some(c) = self.apps.get(t) {
                    return *c;
                }
                let arg_cells: Vec<Cell> = args.iter().map(|a| self.value(a)).collect();
                let s = self.set.uninterpreted.get(f).map_or(Sort::Word, |d| d.ret);
                let c = self.cell(s);
                self.apps.insert(t.clone(), c);
                self.by_fun.entry(f.clone()).or_default().push((arg_cells, c));
                c
            }
            Term::Ite(cond, a, b) => {
                let (x, y) = (self.value(a), self.value(b));
                let c = self.cell(self.sorts[x]);
                let k = self.formula(cond);
                self.side.push(F::Or(vec![
                    F::And(vec![k.clone(), F::Eq(c, x)]),
                    F::And(vec![F::Not(Box::new(k)), F::Eq(c, y)]),
                ]));
                c
            }
            other => {
                // a formula used as a value: tie a boolean cell to it
                let c = self.cell(Sort::Bool);
                let k = self.formula(other);
                self.side.push(F::Or(vec![
                    F::And(vec![F::True(c), k.clone()]),
                    F::And(vec![F::Not(Box::new(F::True(c))), F::Not(Box::new(k))]),
                ]));
                c
            }
        }
    }

    fn formula(&mut self, t: &Term) -> F {
        match t {
            Term::Lit(b) => F::Const(*b),
            Term::Not(a) => F::Not(Box::new(self.formula(a))),
            Term::And(v) => F::And(v.iter().map(|x| self.formula(x)).collect()),
            Term::Or(v) => F::Or(v.iter().map(|x| self.formula(x)).collect()),
            Term::Eq(a, b) => {
                let (x, y) = (self.value(a), self.value(b));
                F::Eq(x, y)
            }
            Term::Distinct(v) => {
                let cells: Vec<Cell> = v.iter().map(|x| self.value(x)).collect();
                let mut parts = Vec::new();
                for i in 0..cells.len() {
                    for j in i + 1..cells.len() {
                        parts.push(F::Not(Box::new(F::Eq(cells[i], cells[j]))));
                    }
                }
                F::And(parts)
            }
            Term::Var(_) | Term::App(..) | Term::Ite(..) => F::True(self.value(t)),
        }
    }

    fn ackermann(&mut self) {
        for (f, apps) in &self.by_fun {
            let injective = self.set.uninterpreted.get(f).is_some_and(|d| d.injective);
            for i in 0..apps.len() {
                for j in i + 1..apps.len() {
                    let (a, b) = (&apps[i], &apps[j]);
                    let args_eq = F::And(a.0.iter().zip(&b.0).map(|(x, y)| F::Eq(*x, *y)).collect());
                    let res_eq = F::Eq(a.1, b.1);
                    self.side.push(F::Or(vec![F::Not(Box::new(args_eq.clone())), res_eq.clone()]));
                    if injective {
                        self.side.push(F::Or(vec![F::Not(Box::new(res_eq)), args_eq]));
                    }
                }
            }
        }
    }
}

struct Search<'s> {
    constraints: &'s [F],
    watch: Vec<Vec<usize>>,
    order: Vec<Cell>,
    sorts: &'s [Sort],
    domains: BTreeMap<Sort, usize>,
    assign: Vec<Option<u32>>,
    deadline: Instant,
    steps: u64,
    timed_out: bool,
}

impl Search<'_> {
    fn run(&mut self, depth: usize) -> bool {
        if depth == self.order.len() {
            return true;
        }
        self.steps += 1;
        if self.steps.is_multiple_of(1024) && Instant::now() > self.deadline {
            self.timed_out = true;
            return false;
        }
        let c = self.order[depth];
        let sort = self.sorts[c];
        let limit = if sort == Sort::Bool {
            2
        } else {
            let used = self.order[..depth]
                .iter()
                .filter(|d| self.sorts[**d] == sort)
                .filter_map(|d| self.assign[*d])
                .max()
                .map_or(0, |m| m + 1);
            (used + 1).min(self.domains[&sort] as u32)
        };
        for v in 0..limit {
            self.assign[c] = Some(v);
            let ok = self.watch[c].iter().all(|k| self.constraints[*k].eval(&self.assign) != Some(false));
            if ok && self.run(depth + 1) {
                return true;
            }
            if self.timed_out {
                break;
            }
        }
        self.assign[c] = None;
        false
    }
}

pub fn solve(set: &PathConstraintSet, timeout: Duration) -> ReachabilityVerdict {
    let verdict = |status, model| ReachabilityVerdict {
        status,
        model,
        sequence: set.sequence.clone(),
    };
    let mut comp = Compiler {
        set,
        sorts: Vec::new(),
        vars: BTreeMap::new(),
        apps: BTreeMap::new(),
        by_fun: BTreeMap::new(),
        side: Vec::new(),
    };
    let mut constraints: Vec<F> = set.assertions.iter().map(|a| comp.formula(a)).collect();
    comp.ackermann();
    constraints.append(&mut comp.side);
    let sorts = comp.sorts.clone();

    let empty: Vec<Option<u32>> = vec![None; sorts.len()];
    if constraints.iter().any(|f| f.eval(&empty) == Some(false)) {
        return verdict(Status::Unsat, None);
    }
    let mut watch = vec![Vec::new(); sorts.len()];
    let mut order = Vec::new();
    let mut seen = vec![false; sorts.len()];
    for (k, f) in constraints.iter().enumerate() {
        let mut cells = Vec::new();
        f.cells(&mut cells);
        for c in cells {
            if !watch[c].contains(&k) {
                watch[c].push(k);
            }
            if !seen[c] {
                seen[c] = true;
                order.push(c);
            }
        }
    }
    let mut search = Search {
        constraints: &constraints,
        watch,
        order,
        sorts: &sorts,
        domains: set.domain_sizes(),
        assign: empty,
        deadline: Instant::now() + timeout,
        steps: 0,
        timed_out: false,
    };
    if search.run(0) {
        let model = set
            .attacker_inputs
            .iter()
            .filter_map(|n| {
                let c = comp.vars.get(n)?;
                let v = search.assign[*c]?;
                let shown = match sorts[*c] {
                    Sort::Bool => (v == 1).to_string(),
                    Sort::Word => format!("w{v}"),
                    Sort::Addr => format!("a{v}"),
                };
                Some((n.clone(), shown))
            })
            .collect();
        verdict(Status::Sat, Some(model))
    } else if search.timed_out {
        verdict(Status::Timeout, None)
    } else {
        verdict(Status::Unsat, None)
    }
}
