//! SMT-LIB2 emission and an external solver subprocess.
//!
//! Sorts become finite datatypes of the same size the built-in search uses,
//! so both backends decide the same problem.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use super::{PathConstraintSet, ReachabilityVerdict, SolverError, Sort, Status, Term};

fn sym(name: &str) -> String {
    let clean: String = name.chars().map(|c| if c == '|' || c == '\\' { '_' } else { c }).collect();
    format!("|{clean}|")
}

fn sort_name(s: Sort) -> &'static str {
    match s {
        Sort::Bool => "Bool",
        Sort::Word => "Word",
        Sort::Addr => "Addr",
    }
}

fn term(t: &Term) -> String {
    let list = |op: &str, v: &[Term], empty: &str| -> String {
        if v.is_empty() {
            return empty.to_string();
        }
        let parts: Vec<String> = v.iter().map(term).collect();
        format!("({op} {})", parts.join(" "))
    };
    match t {
        Term::Var(n) => sym(n),
        Term::Lit(b) => b.to_string(),
        Term::Not(a) => format!("(not {})", term(a)),
        Term::And(v) => list("and", v, "true"),
        Term::Or(v) => list("or", v, "false"),
        Term::Distinct(v) if v.len() < 2 => "true".into(),
        Term::Distinct(v) => list("distinct", v, "true"),
        Term::Eq(a, b) => format!("(= {} {})", term(a), term(b)),
        Term::Ite(c, a, b) => format!("(ite {} {} {})", term(c), term(a), term(b)),
        Term::App(f, args) if args.is_empty() => sym(f),
        Term::App(f, args) => {
            let parts: Vec<String> = args.iter().map(term).collect();
            format!("({} {})", sym(f), parts.join(" "))
        }
    }
}

/// The full solver script, ending in `(check-sat)` and a value query for
/// the attacker inputs.
pub fn to_smtlib(set: &PathConstraintSet) -> String {
    let mut out = String::from("(set-logic ALL)\n");
    let domains = set.domain_sizes();
    for (s, prefix) in [(Sort::Word, "w"), (Sort::Addr, "a")] {
        let ctors: Vec<String> = (0..domains[&s]).map(|i| format!("({prefix}{i})")).collect();
        out.push_str(&format!("(declare-datatypes (({} 0)) (({})))\n", sort_name(s), ctors.join(" ")));
    }
    for (v, s) in &set.variables {
        out.push_str(&format!("(declare-fun {} () {})\n", sym(v), sort_name(*s)));
    }
    for (f, d) in &set.uninterpreted {
        let args: Vec<&str> = d.args.iter().map(|s| sort_name(*s)).collect();
        out.push_str(&format!("(declare-fun {} ({}) {})\n", sym(f), args.join(" "), sort_name(d.ret)));
    }
    for a in &set.assertions {
        out.push_str(&format!("(assert {})\n", term(a)));
    }
    // injectivity over the applications that occur, not as a quantified axiom
    let mut apps: BTreeMap<&str, BTreeSet<&Term>> = BTreeMap::new();
    for a in &set.assertions {
        a.walk(&mut |t| {
            if let Term::App(f, _) = t {
                if set.uninterpreted.get(f).is_some_and(|d| d.injective) {
                    apps.entry(f.as_str()).or_default().insert(t);
                }
            }
        });
    }
    for list in apps.values() {
        let list: Vec<&&Term> = list.iter().collect();
        for i in 0..list.len() {
            for j in i + 1..list.len() {
                let (Term::App(_, x), Term::App(_, y)) = (list[i], list[j]) else { continue };
                let eqs: Vec<String> = x.iter().zip(y).map(|(p, q)| format!("(= {} {})", term(p), term(q))).collect();
                let args = if eqs.is_empty() { "true".to_string() } else { format!("(and {})", eqs.join(" ")) };
                out.push_str(&format!("(assert (=> (= {} {}) {}))\n", term(list[i]), term(list[j]), args));
            }
        }
    }
    out.push_str("(check-sat)\n");
    let inputs: Vec<String> = set
        .attacker_inputs
        .iter()
        .filter(|v| set.variables.contains_key(*v))
        .map(|v| sym(v))
        .collect();
    if !inputs.is_empty() {
        out.push_str(&format!("(get-value ({}))\n", inputs.join(" ")));
    }
    out
}

fn parse_model(text: &str) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut rest = text;
    while let Some(i) = rest.find("(|") {
        let after = &rest[i + 2..];
        let Some(end) = after.find('|') else { break };
        let name = &after[..end];
        let tail = after[end + 1..].trim_start();
        let value: String = tail.chars().take_while(|c| !c.is_whitespace() && *c != ')').collect();
        let value = value.trim_start_matches('(').to_string();
        out.insert(name.to_string(), value);
        rest = &after[end + 1..];
    }
    out
}

pub fn solve(set: &PathConstraintSet, solver: &Path, timeout: Duration) -> Result<ReachabilityVerdict, SolverError> {
    let script = to_smtlib(set);
    let mut cmd = Command::new(solver);
    if solver.file_name().is_some_and(|n| n.to_string_lossy().starts_with("z3")) {
        cmd.arg("-in");
    }
    let mut child = cmd.stdin(Stdio::piped()).stdout(Stdio::piped()).stderr(Stdio::null()).spawn()?;
    child.stdin.take().expect("piped stdin").write_all(script.as_bytes())?;
    let deadline = Instant::now() + timeout;
    let verdict = |status, model| ReachabilityVerdict {
        status,
        model,
        sequence: set.sequence.clone(),
    };
    loop {
        if child.try_wait()?.is_some() {
            break;
        }
        if Instant::now() > deadline {
            let _ = child.kill();
            let _ = child.wait();
            return Ok(verdict(Status::Timeout, None));
        }
        std::thread::sleep(Duration::from_millis(2));
    }
    let mut stdout = String::new();
    child.stdout.take().expect("piped stdout").read_to_string(&mut stdout)?;
    let first = stdout.lines().next().unwrap_or("").trim();
    match first {
        "sat" => Ok(verdict(Status::Sat, Some(parse_model(&stdout)))),
        "unsat" => Ok(verdict(Status::Unsat, None)),
        "unknown" => Ok(verdict(Status::Unknown, None)),
        _ => Err(SolverError::Malformed(stdout)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn script_shape() {
        let set = crate::pathcheck::builtin::tests::set_of(vec![
            Term::eq(Term::app("keccak256", vec![Term::var("x")]), Term::app("keccak256", vec![Term::var("y")])),
            Term::not(Term::eq(Term::var("x"), Term::var("y"))),
        ]);
        let s = to_smtlib(&set);
        assert!(s.contains("(declare-datatypes ((Word 0)) (((w0) (w1) (w2) (w3) (w4) (w5) (w6) (w7))))"));
        assert!(s.contains("(declare-fun |keccak256| (Word) Word)"));
        assert!(s.contains("(assert (=> (= (|keccak256| |x|) (|keccak256| |y|)) (and (= |x| |y|))))"));
        assert!(s.contains("(check-sat)"));
    }

    #[test]
    fn reads_get_value_output() {
        let m = parse_model("sat\n((|a.owner#0| a1)\n (|flag| true))\n");
        assert_eq!(m["a.owner#0"], "a1");
        assert_eq!(m["flag"], "true");
    }
}
