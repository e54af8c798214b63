//! Function-granularity slices around signature sinks.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::Serialize;

use crate::frontend::{AstUnit, NodeId, SinkSite, VarId, FILE_LEVEL};
use crate::graph::{Direction, EdgeKind, Ipdg, NodeKind};

pub const DEFAULT_BUDGET: usize = 120_000;

#[derive(Clone, Debug, Serialize)]
pub struct Slice {
    pub sink: SinkSite,
    /// Qualified names in declaration order.
    pub functions: Vec<String>,
    pub state_decls: BTreeSet<NodeId>,
    pub text: String,
    /// Functions dropped to fit the budget, farthest from the sink first.
    pub omitted: Vec<String>,
}

impl Slice {
    pub fn contains_function(&self, qualified: &str) -> bool {
        self.functions.iter().any(|f| f == qualified)
    }

    /// Statement, entry and state-declaration nodes covered by the slice.
    pub fn nodes(&self, g: &Ipdg) -> BTreeSet<NodeId> {
        let mut out = self.state_decls.clone();
        for f in &self.functions {
            out.extend(g.entry_points.get(f));
            out.extend(g.function_nodes.get(f).into_iter().flatten());
        }
        // Stand-ins for external code belong to the calling function.
        for (id, n) in &g.nodes {
            if n.kind == NodeKind::Unknown && n.function.as_deref().is_some_and(|f| self.contains_function(f)) {
                out.insert(*id);
            }
        }
        out
    }
}

#[derive(Debug, thiserror::Error)]
#[error("slice for sink in {function} needs {needed} characters, budget is {budget}")]
pub struct BudgetExceeded {
    pub function: String,
    pub needed: usize,
    pub budget: usize,
}

/// The sink's function plus everything it depends on through data flow and
/// calls, at function granularity.
pub fn initial_code_block(g: &Ipdg, unit: &AstUnit, sink: &SinkSite) -> Slice {
    let closure = g.dependencies(&BTreeSet::from([sink.stmt]), Direction::Backward, &[EdgeKind::Data, EdgeKind::Call]);
    let mut functions: BTreeSet<String> = BTreeSet::from([sink.enclosing_function.clone()]);
    let mut decls = BTreeSet::new();
    for n in &closure {
        match g.node(*n).map(|i| i.kind) {
            Some(NodeKind::StateDecl) => {
                decls.insert(*n);
            }
            Some(NodeKind::Unknown) | None => {}
            Some(_) => functions.extend(g.function_of(*n).map(str::to_string)),
        }
    }
    build(g, unit, sink, functions, decls)
}

/// Adds every function with a statement that reads a key variable.
pub fn function_level_slice(g: &Ipdg, unit: &AstUnit, key_vars: &BTreeSet<VarId>, seed: &Slice) -> Slice {
    let mut functions: BTreeSet<String> = seed.functions.iter().cloned().collect();
    let mut added = false;
    for info in g.nodes.values() {
        if info.kind != NodeKind::Statement {
            continue;
        }
        if let Some(f) = &info.function {
            if !functions.contains(f) && info.uses.iter().any(|u| key_vars.contains(u)) {
                functions.insert(f.clone());
                added = true;
            }
        }
    }
    if !added {
        return seed.clone();
    }
    build(g, unit, &seed.sink, functions, seed.state_decls.clone())
}

fn build(g: &Ipdg, unit: &AstUnit, sink: &SinkSite, functions: BTreeSet<String>, mut decls: BTreeSet<NodeId>) -> Slice {
    // State declarations touched by the included functions.
    let decl_ids: BTreeMap<(String, String), NodeId> = unit
        .contracts
        .iter()
        .flat_map(|c| c.state_vars.iter().map(move |v| ((c.name.clone(), v.name.clone()), v.id)))
        .collect();
    for f in &functions {
        for n in g.function_nodes.get(f).into_iter().flatten() {
            let info = &g.nodes[n];
            for v in info.uses.iter().chain(&info.defs) {
                if let VarId::State { contract, name } = v {
                    if let Some(id) = decl_ids.get(&(contract.clone(), name.clone())) {
                        decls.insert(*id);
                    }
                }
            }
        }
    }
    let ordered: Vec<String> = unit
        .functions()
        .map(|(_, f)| f.qualified())
        .filter(|q| functions.contains(q))
        .fold(Vec::new(), |mut acc, q| {
            if !acc.contains(&q) {
                acc.push(q);
            }
            acc
        });
    let text = render(unit, &ordered, &decls);
    Slice {
        sink: sink.clone(),
        functions: ordered,
        state_decls: decls,
        text,
        omitted: Vec::new(),
    }
}

/// Original source of the included declarations, grouped by contract in
/// declaration order.
pub fn render(unit: &AstUnit, functions: &[String], decls: &BTreeSet<NodeId>) -> String {
    let mut out = String::new();
    let indent = |id: NodeId| -> String {
        let col = unit.span(id).map_or(1, |s| s.column);
        " ".repeat(col.saturating_sub(1) as usize)
    };
    for c in &unit.contracts {
        let fns: Vec<_> = c.functions.iter().filter(|f| functions.contains(&f.qualified())).collect();
        let vars: Vec<_> = c.state_vars.iter().filter(|v| decls.contains(&v.id)).collect();
        if fns.is_empty() && vars.is_empty() {
            continue;
        }
        let mut modifiers = BTreeSet::new();
        for f in &fns {
            modifiers.extend(f.modifiers.iter().map(|m| m.name.as_str()));
        }
        let wrapped = !c.synthetic && c.name != FILE_LEVEL;
        if wrapped {
            out.push_str(&unit.source[c.header.start..c.header.end]);
            out.push('\n');
        }
        for v in vars {
            out.push_str(&indent(v.id));
            out.push_str(unit.text(v.id));
            out.push('\n');
        }
        for m in c.modifiers.iter().filter(|m| modifiers.contains(m.name.as_str())) {
            out.push_str(&indent(m.id));
            out.push_str(unit.text(m.id));
            out.push('\n');
        }
        for f in fns {
            out.push_str(&indent(f.id));
            out.push_str(unit.text(f.id));
            out.push('\n');
        }
        if wrapped {
            out.push_str("}\n");
        }
    }
    out
}

/// Drops functions farthest from the sink (by call-graph distance) until the
/// text fits. The sink's own function is never dropped.
pub fn fit_budget(g: &Ipdg, unit: &AstUnit, slice: Slice, budget: usize) -> Result<Slice, BudgetExceeded> {
    if slice.text.len() <= budget {
        return Ok(slice);
    }
    let dist = call_distance(g, &slice.sink.enclosing_function);
    let mut kept = slice.functions.clone();
    let mut omitted = slice.omitted.clone();
    loop {
        let victim = kept
            .iter()
            .enumerate()
            .filter(|(_, f)| **f != slice.sink.enclosing_function)
            .max_by_key(|(i, f)| (dist.get(*f).copied().unwrap_or(usize::MAX), *i))
            .map(|(i, _)| i);
        let Some(i) = victim else {
            return Err(BudgetExceeded {
                function: slice.sink.enclosing_function.clone(),
                needed: render(unit, &kept, &slice.state_decls).len(),
                budget,
            });
        };
        omitted.push(kept.remove(i));
        let text = render(unit, &kept, &slice.state_decls);
        if text.len() <= budget {
            return Ok(Slice {
                functions: kept,
                text,
                omitted,
                ..slice
            });
        }
    }
}

/// Undirected call-graph distance from `from`.
fn call_distance(g: &Ipdg, from: &str) -> BTreeMap<String, usize> {
    let mut adj: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for c in &g.calls {
        if let Some(q) = &c.callee {
            adj.entry(&c.caller).or_default().insert(q);
            adj.entry(q).or_default().insert(&c.caller);
        }
    }
    let mut dist = BTreeMap::from([(from.to_string(), 0)]);
    let mut queue = VecDeque::from([from]);
    while let Some(f) = queue.pop_front() {
        let d = dist[f];
        for &n in adj.get(f).into_iter().flatten() {
            if !dist.contains_key(n) {
                dist.insert(n.to_string(), d + 1);
                queue.push_back(n);
            }
        }
    }
    dist
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::{load, locate_sinks};
    use crate::graph::build_ipdg;
    use std::path::Path;

    const INTEREST: &str = include_str!("../../../corpus/figures/vulnerable/interest_permit.sol");

    fn setup(src: &str) -> (AstUnit, Ipdg, Vec<SinkSite>) {
        let u = load(src, Path::new("t.sol")).unwrap();
        let g = build_ipdg(&u);
        let s = locate_sinks(&u);
        (u, g, s)
    }

    #[test]
    fn interest_block_pulls_in_domain_helpers() {
        let (u, g, s) = setup(INTEREST);
        let slice = initial_code_block(&g, &u, &s[0]);
        assert_eq!(
            slice.functions,
            vec!["InterestToken.getChainid", "InterestToken.DOMAIN_SEPARATOR", "InterestToken.permit"]
        );
        assert!(slice.text.contains("bytes32 public constant PERMIT_TYPEHASH"));
        assert!(!slice.text.contains("function allowance("));
        assert!(slice.text.starts_with("contract InterestToken {\n"));
    }

    #[test]
    fn lone_function_slice() {
        let (u, g, s) = setup(
            "contract A { uint x; function f(bytes32 h, uint8 v, bytes32 r, bytes32 s) public pure returns (address) { return ecrecover(h, v, r, s); } function g() public { x = 1; } }",
        );
        let slice = initial_code_block(&g, &u, &s[0]);
        assert_eq!(slice.functions, vec!["A.f"]);
        assert!(slice.state_decls.is_empty());
    }

    #[test]
    fn shared_helper_in_both_slices() {
        let (u, g, s) = setup(
            "contract A {
                function h(uint a) internal view returns (bytes32) { return keccak256(abi.encode(a, block.chainid)); }
                function f(uint a, uint8 v, bytes32 r, bytes32 s) public view returns (address) { return ecrecover(h(a), v, r, s); }
                function k(uint a, uint8 v, bytes32 r, bytes32 s) public view returns (address) { return ecrecover(h(a + 1), v, r, s); }
            }",
        );
        assert_eq!(s.len(), 2);
        let a = initial_code_block(&g, &u, &s[0]);
        let b = initial_code_block(&g, &u, &s[1]);
        assert!(a.contains_function("A.h") && b.contains_function("A.h"));
        assert!(a.contains_function("A.f") && b.contains_function("A.k"));
    }

    #[test]
    fn key_var_readers_are_added_and_slicing_is_idempotent() {
        let (u, g, s) = setup(
            "contract A {
                uint256 nonce;
                uint256 other;
                function r1() public view returns (uint256) { return nonce; }
                function r2() public view returns (uint256) { return nonce + 1; }
                function w() public { other = 2; }
                function f(uint8 v, bytes32 r, bytes32 s) public view returns (address) {
                    return ecrecover(keccak256(abi.encode(nonce)), v, r, s);
                }
            }",
        );
        let seed = initial_code_block(&g, &u, &s[0]);
        assert_eq!(seed.functions, vec!["A.f"]);
        let key: BTreeSet<VarId> = [VarId::State { contract: "A".into(), name: "nonce".into() }].into();
        let sl = function_level_slice(&g, &u, &key, &seed);
        assert_eq!(sl.functions, vec!["A.r1", "A.r2", "A.f"]);
        let again = function_level_slice(&g, &u, &key, &sl);
        assert_eq!(again.functions, sl.functions);
        assert_eq!(again.text, sl.text);
        let unchanged = function_level_slice(&g, &u, &BTreeSet::new(), &seed);
        assert_eq!(unchanged.text, seed.text);
    }

    #[test]
    fn budget_drops_farthest_functions_first() {
        let (u, g, s) = setup(INTEREST);
        let slice = initial_code_block(&g, &u, &s[0]);
        let full = slice.text.len();
        let fitted = fit_budget(&g, &u, slice.clone(), full - 1).unwrap();
        assert_eq!(fitted.omitted, vec!["InterestToken.getChainid"]);
        assert!(fitted.text.len() < full);
        let err = fit_budget(&g, &u, slice, 10).unwrap_err();
        assert_eq!(err.budget, 10);
    }
}
