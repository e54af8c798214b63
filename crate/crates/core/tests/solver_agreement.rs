use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use srvscan_core::pathcheck::{check_reachability, Backend, PathConstraintSet, Sort, Status, Term};

const Z3: &str = "/usr/local/bin/z3";

/// Random equality/boolean constraint set over at most four variables.
fn random_set(seed: u64) -> PathConstraintSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=4);
    let mut variables = BTreeMap::new();
    for i in 0..n {
        let s = match rng.gen_range(0..3) {
            0 => Sort::Bool,
            1 => Sort::Word,
            _ => Sort::Addr,
        };
        variables.insert(format!("x{i}"), s);
    }
    let names: Vec<(String, Sort)> = variables.iter().map(|(k, v)| (k.clone(), *v)).collect();
    fn formula(rng: &mut ChaCha8Rng, names: &[(String, Sort)], depth: u32) -> Term {
        let choice = if depth == 0 { rng.gen_range(0..3) } else { rng.gen_range(0..6) };
        match choice {
            0 | 1 => {
                let (a, sa) = &names[rng.gen_range(0..names.len())];
                let same: Vec<&(String, Sort)> = names.iter().filter(|(_, s)| s == sa).collect();
                let (b, _) = same[rng.gen_range(0..same.len())];
                if *sa == Sort::Bool && rng.gen_bool(0.5) {
                    Term::var(a.clone())
                } else {
                    Term::eq(Term::var(a.clone()), Term::var(b.clone()))
                }
            }
            2 => Term::Lit(rng.gen_bool(0.8)),
            3 => Term::not(formula(rng, names, depth - 1)),
            4 => Term::And((0..rng.gen_range(1..=3)).map(|_| formula(rng, names, depth - 1)).collect()),
            _ => Term::Or((0..rng.gen_range(1..=3)).map(|_| formula(rng, names, depth - 1)).collect()),
        }
    }
    let mut assertions: Vec<Term> = (0..rng.gen_range(1..=4)).map(|_| formula(&mut rng, &names, 3)).collect();
    if rng.gen_bool(0.3) {
        // pairwise distinct non-boolean variables of one sort
        let word_sorts = [Sort::Word, Sort::Addr];
        for s in word_sorts {
            let same: Vec<Term> = names.iter().filter(|(_, t)| *t == s).map(|(n, _)| Term::var(n.clone())).collect();
            if same.len() >= 2 {
                assertions.push(Term::Distinct(same));
                break;
            }
        }
    }
    PathConstraintSet {
        sequence: vec!["f".into()],
        attacker_inputs: variables.keys().cloned().collect(),
        variables,
        assertions,
        ..PathConstraintSet::default()
    }
}

/// Exhaustive enumeration; with four variables a domain of four values per
/// sort realises every equality pattern.
fn brute_force(set: &PathConstraintSet) -> bool {
    let vars: Vec<(&String, Sort)> = set.variables.iter().map(|(k, v)| (k, *v)).collect();
    let size = |s: Sort| if s == Sort::Bool { 2 } else { 4 };
    let total: usize = vars.iter().map(|(_, s)| size(*s)).product();
    (0..total).any(|mut code| {
        let mut env = BTreeMap::new();
        for (n, s) in &vars {
            env.insert(n.as_str(), code % size(*s));
            code /= size(*s);
        }
        set.assertions.iter().all(|a| truth(a, &env))
    })
}

fn value(t: &Term, env: &BTreeMap<&str, usize>) -> usize {
    match t {
        Term::Var(n) => env[n.as_str()],
        other => truth(other, env) as usize,
    }
}

fn truth(t: &Term, env: &BTreeMap<&str, usize>) -> bool {
    match t {
        Term::Var(n) => env[n.as_str()] == 1,
        Term::Lit(b) => *b,
        Term::Not(a) => !truth(a, env),
        Term::And(v) => v.iter().all(|x| truth(x, env)),
        Term::Or(v) => v.iter().any(|x| truth(x, env)),
        Term::Eq(a, b) => value(a, env) == value(b, env),
        Term::Distinct(v) => {
            let vals: Vec<usize> = v.iter().map(|x| value(x, env)).collect();
            (0..vals.len()).all(|i| (i + 1..vals.len()).all(|j| vals[i] != vals[j]))
        }
        other => panic!("outside the generated fragment: {other}"),
    }
}

fn expected(set: &PathConstraintSet) -> Status {
    if brute_force(set) {
        Status::Sat
    } else {
        Status::Unsat
    }
}

proptest! {
    #[test]
    fn builtin_matches_enumeration(seed in any::<u64>()) {
        let set = random_set(seed);
        let got = check_reachability(&set, &Backend::Builtin, Duration::from_secs(5)).unwrap();
        prop_assert_eq!(got.status, expected(&set), "{}", set.to_text());
        prop_assert_eq!(got.model.is_some(), got.status == Status::Sat);
    }
}

#[test]
fn external_solver_matches_enumeration() {
    if !Path::new(Z3).exists() {
        eprintln!("skipping: no solver at {Z3}");
        return;
    }
    let backend = Backend::External { path: Z3.into() };
    for seed in 0..50 {
        let set = random_set(seed);
        let got = check_reachability(&set, &backend, Duration::from_secs(10)).unwrap();
        assert_eq!(got.status, expected(&set), "seed {seed}\n{}", set.to_text());
    }
}
