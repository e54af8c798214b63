//! Forward taint propagation and warning-node collection.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::frontend::{EnvAtom, Expr, ExprKind, NodeId, VarId};
use crate::graph::{Direction, EdgeKind, Ipdg, NodeKind};
use crate::index::AstIndex;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SrvType {
    #[serde(rename = "X-CRA")]
    XCra,
    #[serde(rename = "X-PRA")]
    XPra,
    #[serde(rename = "CASR")]
    Casr,
    #[serde(rename = "SSMI")]
    Ssmi,
    #[serde(rename = "SMA")]
    Sma,
}

impl SrvType {
    pub const ALL: [SrvType; 5] = [SrvType::XCra, SrvType::XPra, SrvType::Casr, SrvType::Ssmi, SrvType::Sma];

    pub fn as_str(self) -> &'static str {
        match self {
            SrvType::XCra => "X-CRA",
            SrvType::XPra => "X-PRA",
            SrvType::Casr => "CASR",
            SrvType::Ssmi => "SSMI",
            SrvType::Sma => "SMA",
        }
    }
}

impl fmt::Display for SrvType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, thiserror::Error)]
#[error("unknown replay type `{0}` (expected one of X-CRA, X-PRA, CASR, SSMI, SMA)")]
pub struct UnknownSrvType(pub String);

impl FromStr for SrvType {
    type Err = UnknownSrvType;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_uppercase();
        SrvType::ALL
            .into_iter()
            .find(|t| t.as_str().replace('-', "") == norm)
            .ok_or_else(|| UnknownSrvType(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Confidence {
    High,
    Low,
}

/// A suspicion raised by a detector, before reachability checking.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Warning {
    /// Qualified function containing the sink.
    pub function: String,
    pub srv_type: SrvType,
    pub sink: NodeId,
    pub evidence: BTreeSet<NodeId>,
    pub confidence: Confidence,
    pub notes: Vec<String>,
}

impl Warning {
    /// Builds a warning whose confidence follows from its evidence.
    pub fn new(g: &Ipdg, function: &str, srv_type: SrvType, sink: NodeId, evidence: BTreeSet<NodeId>) -> Warning {
        let confidence = if evidence.iter().any(|n| g.node(*n).is_some_and(|i| i.opaque)) {
            Confidence::Low
        } else {
            Confidence::High
        };
        Warning {
            function: function.to_string(),
            srv_type,
            sink,
            evidence,
            confidence,
            notes: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Source {
    Env(EnvAtom),
    /// A parameter of a public or external function.
    Param(VarId),
    /// A value returned by code outside the unit.
    External,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct TaintState {
    pub tainted: BTreeMap<NodeId, BTreeSet<Source>>,
    pub sanitized_cuts: BTreeSet<(NodeId, SrvType)>,
}

impl TaintState {
    pub fn at(&self, n: NodeId) -> impl Iterator<Item = &Source> {
        self.tainted.get(&n).into_iter().flatten()
    }
}

/// Nodes where propagation stops, on behalf of one replay type.
#[derive(Clone, Debug, Default)]
pub struct Cuts {
    pub srv: Option<SrvType>,
    pub nodes: BTreeSet<NodeId>,
}

impl Cuts {
    /// Cut at every non-entry definition of the sanitized variables.
    pub fn at_definitions(g: &Ipdg, srv: SrvType, vars: &BTreeSet<VarId>) -> Cuts {
        let nodes = g
            .nodes
            .iter()
            .filter(|(_, n)| n.kind != NodeKind::Entry && n.defs.iter().any(|d| vars.contains(d)))
            .map(|(id, _)| *id)
            .collect();
        Cuts { srv: Some(srv), nodes }
    }
}

/// Source atoms that every replay analysis starts from: environment values,
/// external returns and parameters of entry points.
pub fn default_sources(g: &Ipdg, ix: &AstIndex) -> BTreeSet<Source> {
    let mut out: BTreeSet<Source> = EnvAtom::ALL.into_iter().map(Source::Env).collect();
    out.insert(Source::External);
    for f in ix.functions() {
        if f.visibility.is_entry() && g.entry_points.contains_key(&f.qualified()) {
            for n in f.param_names() {
                out.insert(Source::Param(VarId::Param {
                    function: f.qualified(),
                    name: n.to_string(),
                }));
            }
        }
    }
    out
}

/// Least fixpoint of forward propagation along `kinds` edges. A parameter
/// source leaves its function entry only along edges carrying it. Cut nodes
/// never become tainted.
pub fn propagate(g: &Ipdg, sources: &BTreeSet<Source>, cuts: &Cuts, kinds: &[EdgeKind]) -> TaintState {
    let mut st = TaintState::default();
    if let Some(srv) = cuts.srv {
        st.sanitized_cuts = cuts.nodes.iter().map(|n| (*n, srv)).collect();
    }
    let mut queue = VecDeque::new();
    for (id, info) in &g.nodes {
        if cuts.nodes.contains(id) {
            continue;
        }
        let mut seed = BTreeSet::new();
        for s in sources {
            let hit = match s {
                Source::Env(a) => info.uses.contains(&VarId::Env { atom: *a }),
                Source::Param(p) => info.kind == NodeKind::Entry && info.defs.contains(p),
                Source::External => info.kind == NodeKind::Unknown,
            };
            if hit {
                seed.insert(s.clone());
            }
        }
        if !seed.is_empty() {
            st.tainted.insert(*id, seed);
            queue.push_back(*id);
        }
    }
    while let Some(n) = queue.pop_front() {
        let here = st.tainted.get(&n).cloned().unwrap_or_default();
        let own_params = g
            .node(n)
            .filter(|i| i.kind == NodeKind::Entry)
            .map(|i| i.defs.clone())
            .unwrap_or_default();
        for &(m, k) in g.successors(n) {
            if !kinds.contains(&k) || cuts.nodes.contains(&m) {
                continue;
            }
            let label = g.label(n, m);
            let flowing: Vec<Source> = here
                .iter()
                .filter(|s| match s {
                    // a parameter leaves its own entry only along edges carrying it
                    Source::Param(p) if k == EdgeKind::Data && own_params.contains(p) => {
                        label.is_some_and(|l| l.contains(p))
                    }
                    _ => true,
                })
                .cloned()
                .collect();
            let dst = st.tainted.entry(m).or_default();
            let before = dst.len();
            dst.extend(flowing);
            if dst.len() != before {
                queue.push_back(m);
            }
        }
    }
    st.tainted.retain(|_, s| !s.is_empty());
    st
}

/// Sources reaching one expression evaluated at `stmt`: its own atoms, the
/// definitions of the variables it reads, and the returns of calls in it.
pub fn expr_taint(g: &Ipdg, ix: &AstIndex, st: &TaintState, stmt: NodeId, expr: &Expr) -> BTreeSet<Source> {
    let mut out = BTreeSet::new();
    let Some(scope) = ix.scope(stmt) else { return out };
    for v in scope.free_vars(expr) {
        if let VarId::Env { atom } = v {
            out.insert(Source::Env(atom));
            continue;
        }
        for &(d, k) in g.predecessors(stmt) {
            if k != EdgeKind::Data || !g.label(d, stmt).is_some_and(|l| l.contains(&v)) {
                continue;
            }
            let own_params = g
                .node(d)
                .filter(|i| i.kind == NodeKind::Entry)
                .map(|i| &i.defs);
            out.extend(st.at(d).filter(|s| match s {
                Source::Param(p) if own_params.is_some_and(|defs| defs.contains(p)) => *p == v,
                _ => true,
            }).cloned());
        }
    }
    let mut calls = BTreeSet::new();
    expr.walk(&mut |x| {
        if matches!(x.kind, ExprKind::Call { .. }) {
            calls.insert(x.id);
        }
    });
    for c in g.calls.iter().filter(|c| c.node == stmt && calls.contains(&c.expr)) {
        match &c.callee {
            Some(q) => {
                for r in g.return_nodes.get(q).into_iter().flatten() {
                    out.extend(st.at(*r).cloned());
                }
            }
            None => {
                out.insert(Source::External);
            }
        }
    }
    out
}

/// Every node transitively dependent on the sanitized definitions.
pub fn collect_warning_nodes(g: &Ipdg, sanitized_defs: &BTreeSet<NodeId>) -> BTreeSet<NodeId> {
    if sanitized_defs.is_empty() {
        return BTreeSet::new();
    }
    g.dependencies(sanitized_defs, Direction::Forward, &[EdgeKind::Data, EdgeKind::Control])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::{load, locate_sinks};
    use crate::graph::{build_ipdg, Edge};
    use proptest::prelude::*;
    use std::path::Path;

    fn reach_without(n: u32, edges: &[(u32, u32)], seeds: &BTreeSet<u32>, cut: &BTreeSet<u32>) -> BTreeSet<u32> {
        // plain iteration to a fixpoint over the edge list
        let mut r: BTreeSet<u32> = seeds.iter().copied().filter(|s| !cut.contains(s) && *s < n).collect();
        loop {
            let before = r.len();
            for &(a, b) in edges {
                if r.contains(&a) && !cut.contains(&b) {
                    r.insert(b);
                }
            }
            if r.len() == before {
                return r;
            }
        }
    }

    fn graph_with_atoms(n: u32, edges: &[(u32, u32)], seeds: &BTreeSet<u32>) -> Ipdg {
        let mut g = Ipdg::from_edges(
            (0..n).map(NodeId),
            edges.iter().map(|&(a, b)| Edge { from: NodeId(a), to: NodeId(b), kind: EdgeKind::Data }),
        );
        for s in seeds {
            if let Some(info) = g.nodes.get_mut(&NodeId(*s)) {
                info.uses.insert(VarId::Env { atom: EnvAtom::BlockChainId });
            }
        }
        g
    }

    fn chainid() -> BTreeSet<Source> {
        BTreeSet::from([Source::Env(EnvAtom::BlockChainId)])
    }

    #[test]
    fn twelve_nodes_one_cut() {
        let edges = [(0, 1), (1, 2), (2, 3), (3, 4), (1, 5), (5, 6), (6, 4), (7, 8), (4, 9), (9, 10), (10, 11), (8, 11)];
        let seeds = BTreeSet::from([0]);
        let g = graph_with_atoms(12, &edges, &seeds);
        let cut = Cuts { srv: Some(SrvType::XCra), nodes: BTreeSet::from([NodeId(2)]) };
        let st = propagate(&g, &chainid(), &cut, &[EdgeKind::Data]);
        let got: BTreeSet<u32> = st.tainted.keys().map(|n| n.0).collect();
        assert_eq!(got, reach_without(12, &edges, &seeds, &BTreeSet::from([2])));
        assert_eq!(got, BTreeSet::from([0, 1, 4, 5, 6, 9, 10, 11]));
        assert!(st.sanitized_cuts.contains(&(NodeId(2), SrvType::XCra)));
    }

    #[test]
    fn no_sources_no_taint() {
        let g = graph_with_atoms(3, &[(0, 1), (1, 2)], &BTreeSet::from([0]));
        assert!(propagate(&g, &BTreeSet::new(), &Cuts::default(), &EdgeKind::ALL).tainted.is_empty());
        assert!(collect_warning_nodes(&g, &BTreeSet::new()).is_empty());
    }

    #[test]
    fn chainid_reaches_permit_digest_through_domain_helper() {
        let src = include_str!("../../../corpus/figures/vulnerable/interest_permit.sol");
        let u = load(src, Path::new("i.sol")).unwrap();
        let g = build_ipdg(&u);
        let ix = AstIndex::new(&u);
        let sink = &locate_sinks(&u)[0];
        let st = propagate(&g, &chainid(), &Cuts::default(), &[EdgeKind::Data]);
        let hash = ix.expr(sink.hash_arg.node).unwrap();
        assert!(expr_taint(&g, &ix, &st, sink.stmt, hash).contains(&Source::Env(EnvAtom::BlockChainId)));
        let v = ix.expr(sink.v_arg.as_ref().unwrap().node).unwrap();
        assert!(expr_taint(&g, &ix, &st, sink.stmt, v).is_empty());
    }

    #[test]
    fn parameter_sources_stay_on_their_own_edges() {
        let u = load(
            "contract A { function f(bytes32 h, uint8 v, bytes32 r, bytes32 s) public pure returns (address) {
                bytes32 d = keccak256(abi.encode(h));
                return ecrecover(d, 27, r, s);
            } }",
            Path::new("a.sol"),
        )
        .unwrap();
        let g = build_ipdg(&u);
        let ix = AstIndex::new(&u);
        let sink = &locate_sinks(&u)[0];
        let st = propagate(&g, &default_sources(&g, &ix), &Cuts::default(), &[EdgeKind::Data]);
        let hash = expr_taint(&g, &ix, &st, sink.stmt, ix.expr(sink.hash_arg.node).unwrap());
        let names: Vec<String> = hash.iter().filter_map(|s| match s {
            Source::Param(p) => Some(p.name().to_string()),
            _ => None,
        }).collect();
        assert_eq!(names, vec!["h"]);
        let v = expr_taint(&g, &ix, &st, sink.stmt, ix.expr(sink.v_arg.as_ref().unwrap().node).unwrap());
        assert!(v.is_empty());
    }

    #[test]
    fn warning_nodes_of_a_v_check_include_the_sink() {
        let src = include_str!("../../../corpus/limitations/airdrop_get.sol");
        let u = load(src, Path::new("a.sol")).unwrap();
        let g = build_ipdg(&u);
        let sink = &locate_sinks(&u)[0];
        let check = g
            .function_nodes["Airdrop.get"]
            .iter()
            .copied()
            .find(|n| u.text(*n).starts_with("require(_v == 27"))
            .unwrap();
        let w = collect_warning_nodes(&g, &BTreeSet::from([check]));
        assert!(w.contains(&sink.stmt));
    }

    #[test]
    fn srv_names_round_trip() {
        for t in SrvType::ALL {
            assert_eq!(t.as_str().parse::<SrvType>().unwrap(), t);
            assert_eq!(serde_json::to_string(&t).unwrap(), format!("\"{t}\""));
        }
        assert_eq!("xcra".parse::<SrvType>().unwrap(), SrvType::XCra);
        assert!("replay".parse::<SrvType>().is_err());
    }

    fn arb_graph() -> impl Strategy<Value = (u32, Vec<(u32, u32)>, BTreeSet<u32>, BTreeSet<u32>)> {
        (2u32..14).prop_flat_map(|n| {
            (
                Just(n),
                proptest::collection::vec((0..n, 0..n), 0..30),
                proptest::collection::btree_set(0..n, 0..3),
                proptest::collection::btree_set(0..n, 0..3),
            )
        })
    }

    proptest! {
        #[test]
        fn matches_reachability_minus_cuts((n, edges, seeds, cut) in arb_graph()) {
            let edges: Vec<(u32, u32)> = edges.into_iter().filter(|(a, b)| a != b).collect();
            let g = graph_with_atoms(n, &edges, &seeds);
            let cuts = Cuts { srv: None, nodes: cut.iter().map(|c| NodeId(*c)).collect() };
            let st = propagate(&g, &chainid(), &cuts, &[EdgeKind::Data]);
            let got: BTreeSet<u32> = st.tainted.keys().map(|n| n.0).collect();
            prop_assert_eq!(got, reach_without(n, &edges, &seeds, &cut));
        }

        #[test]
        fn removing_a_cut_never_shrinks((n, edges, seeds, cut) in arb_graph()) {
            let edges: Vec<(u32, u32)> = edges.into_iter().filter(|(a, b)| a != b).collect();
            let g = graph_with_atoms(n, &edges, &seeds);
            let with = Cuts { srv: None, nodes: cut.iter().map(|c| NodeId(*c)).collect() };
            let mut fewer = with.clone();
            if let Some(first) = with.nodes.iter().next() {
                fewer.nodes.remove(first);
            }
            let a = propagate(&g, &chainid(), &with, &[EdgeKind::Data]);
            let b = propagate(&g, &chainid(), &fewer, &[EdgeKind::Data]);
            prop_assert!(a.tainted.keys().all(|k| b.tainted.contains_key(k)));
        }

        #[test]
        fn warning_nodes_are_the_forward_closure((n, edges, seeds, _cut) in arb_graph()) {
            let edges: Vec<(u32, u32)> = edges.into_iter().filter(|(a, b)| a != b).collect();
            let g = graph_with_atoms(n, &edges, &BTreeSet::new());
            let defs: BTreeSet<NodeId> = seeds.iter().map(|s| NodeId(*s)).collect();
            let got: BTreeSet<u32> = collect_warning_nodes(&g, &defs).iter().map(|n| n.0).collect();
            prop_assert_eq!(got, reach_without(n, &edges, &seeds, &BTreeSet::new()));
        }
    }
}
