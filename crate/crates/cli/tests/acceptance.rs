//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use srvscan_core::oracle::{heuristic, LiveConfig};
use srvscan_core::pathcheck::{Sort, Term};
use srvscan_core::pipeline::{collect_sources, scan_file, scan_source};
use srvscan_core::report::to_json;
use srvscan_core::{
    check_reachability, corpus_screen, net, scan, Backend, Confidence, Oracle, OracleConfig, OracleMode,
    PathConstraintSet, Reachability, ReplayFallback, ScanConfig, SrvType, Status,
};

const Z3: &str = "/usr/local/bin/z3";

type Outcome = Result<String, String>;

fn corpus() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../corpus")
}

fn single_thread() -> ScanConfig {
    ScanConfig {
        jobs: 1,
        ..ScanConfig::default()
    }
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

// 1 -------------------------------------------------------------------------

const FIGURES: [(&str, SrvType); 6] = [
    ("erc20_with_permit", SrvType::Ssmi),
    ("biconomy_paymaster", SrvType::XCra),
    ("hermez_withdraw", SrvType::XPra),
    ("adex_quick_acc_manager", SrvType::Casr),
    ("connext_transaction_manager", SrvType::Ssmi),
    ("interest_permit", SrvType::Sma),
];

fn figure_exactness() -> Outcome {
    let oracle = Oracle::heuristic();
    let cfg = single_thread();
    let mut slowest = Duration::ZERO;
    for (name, srv) in FIGURES {
        let start = Instant::now();
        let vuln = scan_file(&corpus().join(format!("figures/vulnerable/{name}.sol")), &oracle, &cfg);
        let patched = scan_file(&corpus().join(format!("figures/patched/{name}.sol")), &oracle, &cfg);
        let took = start.elapsed() / 2;
        slowest = slowest.max(took);
        let types: Vec<SrvType> = vuln.findings.iter().map(|f| f.srv_type).collect();
        ensure(vuln.errors.is_empty() && patched.errors.is_empty(), || format!("{name}: file errors"))?;
        ensure(types == vec![srv], || format!("{name}: expected [{srv}], got {types:?}"))?;
        ensure(patched.findings.iter().all(|f| f.srv_type != srv), || format!("patched {name} still reports {srv}"))?;
        ensure(took < Duration::from_secs(5), || format!("{name} took {took:?}"))?;
    }
    Ok(format!("6 vulnerable, 6 patched; slowest {:.0} ms per contract", slowest.as_secs_f64() * 1000.0))
}

// 2 -------------------------------------------------------------------------

const HALF: &str = "0x7FFFFFFFFFFFFFFFFFFFFFFFFFFFFFFF5D576E7357A4501DDFE92F46681B20A0";

/// A contract with one bare recovery and a chosen subset of the v and s
/// checks, each written in one of several equivalent forms.
fn sma_contract(rng: &mut ChaCha8Rng, v_check: bool, s_check: bool) -> String {
    let names = [("v", "r", "s"), ("sigV", "sigR", "sigS"), ("v_", "r_", "s_")];
    let (v, r, s) = names[rng.gen_range(0..names.len())];
    let half = if rng.gen_bool(0.5) { "HALF_ORDER".to_string() } else { HALF.to_string() };
    let mut checks = Vec::new();
    if v_check {
        checks.push(match rng.gen_range(0..3) {
            0 => format!("require({v} == 27 || {v} == 28);"),
            1 => format!("require({v} == 27 || {v} == 28, \"bad v\");"),
            _ => format!("if ({v} != 27 && {v} != 28) revert();"),
        });
    }
    if s_check {
        checks.push(match rng.gen_range(0..3) {
            0 => format!("require(uint256({s}) <= {half});"),
            1 => format!("require(uint256({s}) <= {half}, \"bad s\");"),
            _ => format!("if (uint256({s}) > {half}) revert();"),
        });
    }
    checks.shuffle(rng);
    let vis = if rng.gen_bool(0.5) { "external" } else { "public" };
    let id = rng.gen_range(0..1_000_000u32);
    let nonce_line = if rng.gen_bool(0.5) { "nonces[to]++;" } else { "" };
    let checks = checks.join("\n        ");
    format!(
        "pragma solidity ^0.8.0;
contract Gen{id} {{
    uint256 constant HALF_ORDER = {HALF};
    mapping(address => uint256) public nonces;
    mapping(address => uint256) public credit;
    function claim{id}(address to, uint256 amount, uint8 {v}, bytes32 {r}, bytes32 {s}) {vis} {{
        {checks}
        bytes32 digest = keccak256(abi.encode(block.chainid, address(this), to, amount, nonces[to]));
        address signer = ecrecover(digest, {v}, {r}, {s});
        require(signer == to, \"bad signer\");
        {nonce_line}
        credit[to] += amount;
    }}
}}
"
    )
}

fn sma_property() -> Outcome {
    let start = Instant::now();
    let oracle = Oracle::heuristic();
    let cfg = single_thread();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5a);
    let mut flagged = 0;
    for i in 0..100 {
        let (v_check, s_check) = (rng.gen_bool(0.5), rng.gen_bool(0.5));
        let src = sma_contract(&mut rng, v_check, s_check);
        let r = scan_source(&src, Path::new(&format!("gen{i}.sol")), &oracle, &cfg);
        ensure(r.errors.is_empty(), || format!("contract {i}: {:?}\n{src}", r.errors))?;
        let has = r.findings.iter().any(|f| f.srv_type == SrvType::Sma);
        let expected = !(v_check && s_check);
        ensure(has == expected, || format!("contract {i} (v={v_check}, s={s_check}): SMA={has}\n{src}"))?;
        flagged += has as usize;
    }
    let took = start.elapsed();
    ensure(took < Duration::from_secs(60), || format!("took {took:?}"))?;
    Ok(format!("100 contracts, {flagged} flagged, {:.1} s", took.as_secs_f64()))
}

// 3 -------------------------------------------------------------------------

fn determinism() -> Outcome {
    let cfg = ScanConfig {
        inputs: vec![corpus()],
        jobs: 4,
        ..ScanConfig::default()
    };
    let a = to_json(&scan(&cfg, &Oracle::heuristic()));
    let b = to_json(&scan(&cfg, &Oracle::heuristic()));
    ensure(a == b, || "reports differ".into())?;
    Ok(format!("{} bytes, identical", a.len()))
}

// 4 -------------------------------------------------------------------------

fn between<'a>(text: &'a str, start: &str, end: &str) -> &'a str {
    let from = text.find(start).map_or(0, |i| i + start.len());
    let rest = &text[from..];
    &rest[..rest.find(end).unwrap_or(rest.len())]
}

/// Stands in for a chat model: answers the JSON tier from the code quoted in
/// the first prompt, with some prose before the object.
fn model_reply(body: &str) -> String {
    let req: Value = serde_json::from_str(body).unwrap_or(Value::Null);
    let messages = req["messages"].as_array().cloned().unwrap_or_default();
    let first = messages.first().and_then(|m| m["content"].as_str()).unwrap_or_default();
    let last = messages.last().and_then(|m| m["content"].as_str()).unwrap_or_default();
    let content = if !last.contains("one JSON object") {
        "Working through the code step by step.".to_string()
    } else if first.contains("implements signature verification") {
        let code = between(first, "Code:\n", "\n\nStep-by-Step Analysis:");
        format!("The recovery call is present.\n{}", heuristic::key_variables(code))
    } else if first.contains("Identify sanitized variables") {
        let code = between(first, "Code:\n", "\n\nSanitized variable identification rules:");
        let types: BTreeSet<SrvType> = between(first, "replay types: ", ".\n")
            .split(", ")
            .filter_map(|t| t.parse().ok())
            .collect();
        format!("Checked each type.\n{}", heuristic::sanitized_variables(code, &types))
    } else {
        let list = between(first, "replay points:\n", "\n");
        let warned: Vec<String> =
            list.trim_matches(|c| c == '[' || c == ']').split(", ").map(str::to_string).collect();
        let code = between(first, "Code:\n", "\n\nCheck each flagged");
        format!("Flows follow.\n{}", heuristic::function_sequences(&warned, code))
    };
    json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string()
}

fn oracle_replay() -> Outcome {
    let server = common::MockServer::start(|req| (200, model_reply(&req.body)));
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let transcript = dir.path().join("transcript.jsonl");
    let cfg = ScanConfig {
        inputs: vec![corpus().join("figures"), corpus().join("limitations"), corpus().join("misc")],
        ..single_thread()
    };
    let live = Oracle::new(OracleConfig {
        mode: OracleMode::Live(LiveConfig {
            endpoint: format!("{}/v1/chat/completions", server.url),
            ..LiveConfig::default()
        }),
        transcript: Some(transcript.clone()),
        ..OracleConfig::default()
    })
    .map_err(|e| e.to_string())?;
    net::deny_network(false);
    let recorded = scan(&cfg, &live);
    ensure(recorded.errors.is_empty(), || format!("live run errors: {:?}", recorded.errors))?;
    ensure(!recorded.findings.is_empty(), || "live run found nothing".into())?;
    let live_requests = server.hits();

    net::deny_network(true);
    let attempts = net::attempts();
    let replay = Oracle::new(OracleConfig {
        mode: OracleMode::Replay,
        transcript: Some(transcript),
        replay_fallback: ReplayFallback::Error,
        ..OracleConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let replayed = scan(&cfg, &replay);
    let denied_attempts = net::attempts() - attempts;
    net::deny_network(false);
    ensure(replayed.errors.is_empty(), || format!("replay errors: {:?}", replayed.errors))?;
    ensure(to_json(&recorded) == to_json(&replayed), || "replayed findings differ".into())?;
    ensure(denied_attempts == 0, || format!("{denied_attempts} network attempts during replay"))?;
    ensure(server.hits() == live_requests, || "replay reached the server".into())?;
    Ok(format!(
        "{} findings, {} live requests, 0 during replay",
        recorded.findings.len(),
        live_requests
    ))
}

// 5 -------------------------------------------------------------------------

fn random_set(seed: u64) -> PathConstraintSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sorts = [Sort::Bool, Sort::Word, Sort::Addr];
    let variables: BTreeMap<String, Sort> =
        (0..rng.gen_range(1..=4)).map(|i| (format!("x{i}"), sorts[rng.gen_range(0..3)])).collect();
    let names: Vec<(String, Sort)> = variables.iter().map(|(k, v)| (k.clone(), *v)).collect();
    fn atom(rng: &mut ChaCha8Rng, names: &[(String, Sort)]) -> Term {
        let (a, sa) = &names[rng.gen_range(0..names.len())];
        let peers: Vec<&String> = names.iter().filter(|(_, s)| s == sa).map(|(n, _)| n).collect();
        let b = peers[rng.gen_range(0..peers.len())];
        if *sa == Sort::Bool && rng.gen_bool(0.5) {
            Term::var(a.clone())
        } else {
            Term::eq(Term::var(a.clone()), Term::var(b.clone()))
        }
    }
    fn formula(rng: &mut ChaCha8Rng, names: &[(String, Sort)], depth: u32) -> Term {
        if depth == 0 || rng.gen_bool(0.3) {
            return if rng.gen_bool(0.1) { Term::Lit(rng.gen_bool(0.5)) } else { atom(rng, names) };
        }
        let parts = |rng: &mut ChaCha8Rng| (0..rng.gen_range(2..=3)).map(|_| formula(rng, names, depth - 1)).collect();
        match rng.gen_range(0..3) {
            0 => Term::not(formula(rng, names, depth - 1)),
            1 => Term::And(parts(rng)),
            _ => Term::Or(parts(rng)),
        }
    }
    let assertions = (0..rng.gen_range(1..=3)).map(|_| formula(&mut rng, &names, 3)).collect();
    PathConstraintSet {
        sequence: vec!["f".into()],
        attacker_inputs: variables.keys().cloned().collect(),
        variables,
        assertions,
        ..PathConstraintSet::default()
    }
}

/// Enumerates every assignment over four values per non-boolean sort, which
/// covers all equality patterns of at most four variables.
fn brute_force(set: &PathConstraintSet) -> Status {
    fn val(t: &Term, env: &BTreeMap<&str, usize>) -> usize {
        match t {
            Term::Var(n) => env[n.as_str()],
            other => holds(other, env) as usize,
        }
    }
    fn holds(t: &Term, env: &BTreeMap<&str, usize>) -> bool {
        match t {
            Term::Var(n) => env[n.as_str()] == 1,
            Term::Lit(b) => *b,
            Term::Not(a) => !holds(a, env),
            Term::And(v) => v.iter().all(|x| holds(x, env)),
            Term::Or(v) => v.iter().any(|x| holds(x, env)),
            Term::Eq(a, b) => val(a, env) == val(b, env),
            other => panic!("not generated: {other}"),
        }
    }
    let vars: Vec<(&str, usize)> =
        set.variables.iter().map(|(k, s)| (k.as_str(), if *s == Sort::Bool { 2 } else { 4 })).collect();
    let total: usize = vars.iter().map(|(_, n)| n).product();
    let sat = (0..total).any(|mut code| {
        let mut env = BTreeMap::new();
        for (name, n) in &vars {
            env.insert(*name, code % n);
            code /= n;
        }
        set.assertions.iter().all(|a| holds(a, &env))
    });
    if sat {
        Status::Sat
    } else {
        Status::Unsat
    }
}

fn solver_differential() -> Outcome {
    ensure(Path::new(Z3).exists(), || format!("no external solver at {Z3}"))?;
    let start = Instant::now();
    let external = Backend::External { path: Z3.into() };
    let timeout = Duration::from_secs(10);
    let decide = |set: &PathConstraintSet, b: &Backend| check_reachability(set, b, timeout).map(|v| v.status);
    let oracle = Oracle::heuristic();
    let cfg = single_thread();
    let mut corpus_sets = 0;
    for p in collect_sources(&[corpus()]).map_err(|e| e.message)? {
        for set in scan_file(&p, &oracle, &cfg).constraint_sets {
            let a = decide(&set, &Backend::Builtin).map_err(|e| e.to_string())?;
            let b = decide(&set, &external).map_err(|e| e.to_string())?;
            ensure(a == b, || format!("{}: builtin {a:?}, external {b:?}\n{}", p.display(), set.to_text()))?;
            corpus_sets += 1;
        }
    }
    for seed in 0..50 {
        let set = random_set(seed);
        let truth = brute_force(&set);
        let a = decide(&set, &Backend::Builtin).map_err(|e| e.to_string())?;
        let b = decide(&set, &external).map_err(|e| e.to_string())?;
        ensure(a == truth && b == truth, || {
            format!("seed {seed}: builtin {a:?}, external {b:?}, enumeration {truth:?}\n{}", set.to_text())
        })?;
    }
    let took = start.elapsed();
    ensure(took < Duration::from_secs(30), || format!("took {took:?}"))?;
    ensure(corpus_sets > 0, || "no corpus constraint sets".into())?;
    Ok(format!("{corpus_sets} corpus sets + 50 random sets, {:.1} s", took.as_secs_f64()))
}

// 6 -------------------------------------------------------------------------

fn reachability_semantics() -> Outcome {
    let oracle = Oracle::heuristic();
    let cfg = single_thread();
    let open = scan_file(&corpus().join("figures/vulnerable/interest_permit.sol"), &oracle, &cfg);
    let sma: Vec<_> = open.findings.iter().filter(|f| f.srv_type == SrvType::Sma).collect();
    ensure(sma.len() == 1 && sma[0].reachability.status == Reachability::Sat, || {
        format!("permit: {:?}", open.findings)
    })?;
    let guarded = scan_file(&corpus().join("misc/interest_permit_owner_only.sol"), &oracle, &cfg);
    ensure(guarded.findings.is_empty(), || format!("owner-only still reported: {:?}", guarded.findings))?;
    ensure(!guarded.constraint_sets.is_empty(), || "owner-only produced no constraints".into())?;
    for set in &guarded.constraint_sets {
        let v = check_reachability(set, &Backend::Builtin, Duration::from_secs(10)).map_err(|e| e.to_string())?;
        ensure(v.status == Status::Unsat, || format!("owner-only set is {:?}", v.status))?;
    }
    Ok(format!("permit SAT; owner-only {} set(s) UNSAT, suppressed", guarded.constraint_sets.len()))
}

// 7 -------------------------------------------------------------------------

/// Source with comments and string literals blanked out.
fn code_only(src: &str) -> String {
    let b = src.as_bytes();
    let mut out = String::with_capacity(src.len());
    let mut i = 0;
    while i < b.len() {
        if b[i..].starts_with(b"//") {
            while i < b.len() && b[i] != b'\n' {
                i += 1;
            }
        } else if b[i..].starts_with(b"/*") {
            i += 2;
            while i < b.len() && !b[i..].starts_with(b"*/") {
                i += 1;
            }
            i += 2;
            out.push(' ');
        } else if b[i] == b'"' || b[i] == b'\'' {
            let q = b[i];
            i += 1;
            while i < b.len() && b[i] != q {
                i += if b[i] == b'\\' { 2 } else { 1 };
            }
            i += 1;
            out.push_str("\"\"");
        } else {
            out.push(b[i] as char);
            i += 1;
        }
    }
    out
}

fn tokens(code: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for c in code.chars() {
        if c.is_ascii_alphanumeric() || c == '_' || c == '$' {
            word.push(c);
            continue;
        }
        if !word.is_empty() {
            out.push(std::mem::take(&mut word));
        }
        if !c.is_whitespace() {
            out.push(c.to_string());
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

/// A call to `ecrecover`, or a `.recover(`/`.tryRecover(` call in a file
/// that names an ECDSA library.
fn token_oracle(src: &str) -> bool {
    let t = tokens(&code_only(src));
    let ecdsa = t.iter().any(|w| w.contains("ECDSA"));
    t.windows(3).any(|w| {
        (w[0] == "ecrecover" && w[1] == "(")
            || (ecdsa && w[0] == "." && (w[1] == "recover" || w[1] == "tryRecover") && w[2] == "(")
    })
}

fn screening_parity() -> Outcome {
    let dir = corpus().join("screening");
    let files = collect_sources(std::slice::from_ref(&dir)).map_err(|e| e.message)?;
    ensure(files.len() == 20, || format!("{} screening fixtures", files.len()))?;
    let expected: Vec<PathBuf> = files
        .iter()
        .filter(|p| token_oracle(&std::fs::read_to_string(p).unwrap_or_default()))
        .cloned()
        .collect();
    let got = corpus_screen(&dir).map_err(|e| e.message)?;
    ensure(got.skipped.is_empty(), || format!("skipped: {:?}", got.skipped))?;
    ensure(got.hits == expected, || format!("screen {:?}\noracle {:?}", got.hits, expected))?;
    let comment_only = dir.join("s02_comment_only.sol");
    ensure(!got.hits.contains(&comment_only), || "comment-only file screened in".into())?;
    Ok(format!("{} of 20 files contain sinks, matching the token oracle", got.hits.len()))
}

// 8 -------------------------------------------------------------------------

fn limitations() -> Outcome {
    let oracle = Oracle::heuristic();
    let cfg = single_thread();
    let airdrop = scan_file(&corpus().join("limitations/airdrop_get.sol"), &oracle, &cfg);
    let sma: Vec<_> = airdrop.findings.iter().filter(|f| f.srv_type == SrvType::Sma).collect();
    ensure(sma.len() == 1, || format!("airdrop: {:?}", airdrop.findings))?;
    ensure(sma[0].function.ends_with(".get"), || format!("airdrop finding in {}", sma[0].function))?;
    ensure(sma[0].notes.iter().any(|n| n.starts_with("known false-positive")), || "airdrop lacks the known-FP note".into())?;
    let asm = scan_file(&corpus().join("limitations/custom_assembly.sol"), &oracle, &cfg);
    for f in &asm.findings {
        ensure(f.confidence == Confidence::Low, || format!("custom assembly {} is {:?}", f.srv_type, f.confidence))?;
        ensure(f.notes.iter().any(|n| n.starts_with("Opaque-assembly")), || "custom assembly lacks the note".into())?;
    }
    Ok(format!("airdrop SMA with known-FP note; custom assembly {} low finding(s)", asm.findings.len()))
}

fn main() {
    // libtest-style arguments (filters, --nocapture) are accepted and ignored
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("figure-corpus exactness", figure_exactness),
        ("SMA property suite", sma_property),
        ("determinism", determinism),
        ("oracle replay offline", oracle_replay),
        ("solver differential", solver_differential),
        ("reachability semantics", reachability_semantics),
        ("screening parity", screening_parity),
        ("documented limitations", limitations),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("criterion {}: PASS {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
