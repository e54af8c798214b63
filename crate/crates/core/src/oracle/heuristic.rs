//! Deterministic stand-in for the language model. Every answer is computed
//! from the text that would have been placed in the prompt, by parsing it
//! again, so the results only depend on that text.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::Path;

use serde_json::{json, Value};

use crate::frontend::{load, locate_sinks, AstUnit, SinkSite, VarId};
use crate::graph::{build_ipdg, Ipdg};
use crate::index::AstIndex;
use crate::patterns::{secp256k1_half_order, structural_sanitizers};
use crate::taint::SrvType;

pub const MAX_SEQUENCES: usize = 5;
pub const MAX_SEQUENCE_LEN: usize = 4;

fn parse(text: &str) -> Option<AstUnit> {
    match load(text, Path::new("slice.sol")) {
        Ok(u) => Some(u),
        Err(e) => {
            log::warn!("heuristic oracle could not parse its input: {e}");
            None
        }
    }
}

/// Free variables of a sink's hash and signature arguments, followed back
/// through local definitions in the same function.
pub fn sink_key_variables(g: &Ipdg, ix: &AstIndex, sink: &SinkSite) -> BTreeSet<VarId> {
    let mut out = BTreeSet::new();
    let mut queue: VecDeque<VarId> = VecDeque::new();
    for arg in [Some(&sink.hash_arg), sink.v_arg.as_ref(), sink.r_arg.as_ref(), sink.s_arg.as_ref(), sink.sig_arg.as_ref()]
        .into_iter()
        .flatten()
    {
        match (ix.expr(arg.node), ix.scope(sink.stmt)) {
            (Some(e), Some(scope)) => queue.extend(scope.free_vars(e)),
            _ => queue.extend(arg.free_variables.iter().cloned()),
        }
    }
    while let Some(v) = queue.pop_front() {
        if v.is_env() || !out.insert(v.clone()) {
            continue;
        }
        if !matches!(v, VarId::Local { .. }) {
            continue;
        }
        for d in g.def_nodes(&v) {
            if g.function_of(d) != Some(sink.enclosing_function.as_str()) {
                continue;
            }
            let Some(scope) = ix.scope(d) else { continue };
            for e in ix.node_exprs(d) {
                queue.extend(scope.free_vars(e));
            }
        }
    }
    out
}

pub fn key_variables(code_block: &str) -> String {
    let Some(unit) = parse(code_block) else {
        return answer(json!({
            "implements_signature_verification": false,
            "key_variables": [],
            "reason": "code could not be parsed",
        }));
    };
    let sinks = locate_sinks(&unit);
    if sinks.is_empty() {
        return answer(json!({
            "implements_signature_verification": false,
            "key_variables": [],
            "reason": "no signature verification",
        }));
    }
    let g = build_ipdg(&unit);
    let ix = AstIndex::new(&unit);
    let mut names = BTreeSet::new();
    for s in &sinks {
        names.extend(sink_key_variables(&g, &ix, s).iter().map(|v| v.name().to_string()));
    }
    answer(json!({
        "implements_signature_verification": true,
        "key_variables": names,
        "reason": format!("{} signature recovery call(s) found", sinks.len()),
    }))
}

pub fn sanitized_variables(slice_text: &str, srv_types: &BTreeSet<SrvType>) -> String {
    let mut map: BTreeMap<String, Vec<String>> = BTreeMap::new();
    if let Some(unit) = parse(slice_text) {
        let g = build_ipdg(&unit);
        let ix = AstIndex::new(&unit);
        for (srv, names) in structural_sanitizers(&unit, &g, &ix, &secp256k1_half_order()) {
            if srv_types.contains(&srv) {
                map.insert(srv.as_str().to_string(), names.into_iter().collect());
            }
        }
    }
    answer(json!({ "sanitized_variables": map }))
}

/// Call paths from public entry points to each warned function, shortest
/// first, using bare function names.
pub fn function_sequences(warning_functions: &[String], slice_text: &str) -> String {
    let mut out: BTreeMap<String, Vec<Vec<String>>> = BTreeMap::new();
    let unit = parse(slice_text);
    for w in warning_functions {
        let seqs = unit.as_ref().map(|u| paths_to(u, w)).unwrap_or_default();
        out.insert(w.clone(), seqs);
    }
    answer(serde_json::to_value(out).expect("map serializes"))
}

fn paths_to(unit: &AstUnit, target: &str) -> Vec<Vec<String>> {
    let g = build_ipdg(unit);
    let mut callers: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for c in &g.calls {
        if let Some(callee) = &c.callee {
            callers.entry(bare(callee).to_string()).or_default().insert(bare(&c.caller).to_string());
        }
    }
    let entries: BTreeSet<String> = unit
        .functions()
        .filter(|(_, f)| f.visibility.is_entry() && f.body.is_some())
        .map(|(_, f)| f.name.clone())
        .collect();
    // breadth-first backwards from the target; paths come out shortest first
    // and, within one length, in name order
    let mut out = Vec::new();
    let mut frontier: Vec<Vec<String>> = vec![vec![target.to_string()]];
    for _ in 0..MAX_SEQUENCE_LEN {
        let mut next = Vec::new();
        let mut found: Vec<Vec<String>> = Vec::new();
        for path in &frontier {
            if entries.contains(&path[0]) {
                found.push(path.clone());
            }
            for c in callers.get(&path[0]).into_iter().flatten() {
                if !path.contains(c) {
                    let mut p = vec![c.clone()];
                    p.extend(path.iter().cloned());
                    next.push(p);
                }
            }
        }
        found.sort();
        out.extend(found);
        if out.len() >= MAX_SEQUENCES {
            break;
        }
        frontier = next;
    }
    out.truncate(MAX_SEQUENCES);
    out
}

fn bare(qualified: &str) -> &str {
    qualified.rsplit('.').next().unwrap_or(qualified)
}

fn answer(v: Value) -> String {
    serde_json::to_string(&v).expect("value serializes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::json::last_json_object;

    const FIG8: &str = r#"function permit(owner, spender, amount, v, r, s) {
    bytes32 permitDataDigest = keccak256(abi.encode(PERMIT_TYPEHASH, owner, spender));
    bytes32 digest = keccak256(abi.encodePacked("\x19\x01", DOMAIN_SEPARATOR(), permitDataDigest));
    require(owner == ecrecover(digest, v, r, s));
    allowances[owner][spender] = amount;
}
"#;

    fn keys(text: &str) -> Vec<String> {
        let m = last_json_object(&key_variables(text)).unwrap();
        serde_json::from_value(m["key_variables"].clone()).unwrap()
    }

    #[test]
    fn interest_permit_key_variables() {
        let mut want = vec!["digest", "permitDataDigest", "PERMIT_TYPEHASH", "owner", "spender", "v", "r", "s"];
        want.sort();
        assert_eq!(keys(FIG8), want);
    }

    #[test]
    fn literal_hash_and_no_sink() {
        let k = keys("contract A { function f(uint8 v, bytes32 r, bytes32 s) public { ecrecover(bytes32(0), v, r, s); } }");
        assert_eq!(k, vec!["r", "s", "v"]);
        let m = last_json_object(&key_variables("contract A { function f() public {} }")).unwrap();
        assert_eq!(m["reason"], "no signature verification");
        assert_eq!(m["implements_signature_verification"], false);
        assert_eq!(m["key_variables"], json!([]));
    }

    #[test]
    fn key_variables_match_free_variable_enumeration() {
        // independent scan: identifiers on the right of each local
        // definition that reaches the call, collected by hand
        let src = "contract A { uint256 n; function f(uint256 a, uint256 b, uint8 v, bytes32 r, bytes32 s) public {
            uint256 c = a + n;
            bytes32 h = keccak256(abi.encode(c, block.chainid));
            uint256 unrelated = b;
            ecrecover(h, v, r, s); } }";
        assert_eq!(keys(src), vec!["a", "c", "h", "n", "r", "s", "v"]);
    }

    fn seqs(src: &str, w: &str) -> Value {
        Value::Object(last_json_object(&function_sequences(&[w.to_string()], src)).unwrap())
    }

    #[test]
    fn sequences_follow_the_call_graph() {
        assert_eq!(seqs(FIG8, "permit"), json!({"permit": [["permit"]]}));
        let src = "contract H {
            function withdraw(uint256 a) external { _checkSig(a); }
            function other() public { helper(); }
            function helper() internal { _checkSig(1); }
            function _checkSig(uint256 a) internal {}
        }";
        assert_eq!(seqs(src, "_checkSig"), json!({"_checkSig": [["withdraw", "_checkSig"], ["other", "helper", "_checkSig"]]}));
        assert_eq!(seqs(src, "missing"), json!({"missing": []}));
    }

    #[test]
    fn sequences_are_capped() {
        let mut src = String::from("contract C { function t() internal {}\n");
        for i in 0..8 {
            src.push_str(&format!("function e{i}() external {{ t(); }}\n"));
        }
        src.push('}');
        let v = seqs(&src, "t");
        let list = v["t"].as_array().unwrap();
        assert_eq!(list.len(), MAX_SEQUENCES);
        assert_eq!(list[0], json!(["e0", "t"]));
    }

    #[test]
    fn sanitized_variables_for_airdrop_get() {
        let src = "contract Airdrop { mapping(address => uint256) public wallets;
            function get(bytes32 _r, bytes32 _s, uint8 _v) external {
                require(_v == 27 || _v == 28);
                bytes32 hash = keccak256(abi.encodePacked(block.chainid, address(this), msg.sender));
                address signer = ecrecover(hash, _v, _r, _s);
                require(signer != address(0) && wallets[signer] != 0);
                wallets[signer] = 0;
            } }";
        let all: BTreeSet<SrvType> = SrvType::ALL.into_iter().collect();
        let m = last_json_object(&sanitized_variables(src, &all)).unwrap();
        assert_eq!(m["sanitized_variables"]["SMA"], json!(["_v"]));
        assert_eq!(
            last_json_object(&sanitized_variables("contract A { function f() public {} }", &all)).unwrap(),
            json!({"sanitized_variables": {}}).as_object().unwrap().clone()
        );
    }
}
