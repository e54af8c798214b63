//! The five replay pattern detectors.
//!
//! Each detector looks at one slice (one sink) and returns at most one
//! warning. Binding detectors (X-CRA, X-PRA, CASR) accept either structural
//! evidence or an oracle sanitizer; SSMI and SMA need both.

use std::collections::BTreeSet;

use num_bigint::BigUint;

use crate::flow::{backward, Provenance};
use crate::frontend::{AstUnit, EnvAtom, NodeId, SinkKind, SinkSite, VarId};
use crate::graph::{EdgeKind, Ipdg, NodeKind};
use crate::index::AstIndex;
use crate::patterns::{
    identity_params, is_hashing, is_valid_signature_functions, opaque_domain_binding, replay_protections,
    secp256k1_half_order, sink_roots, vs_checks, Check, Sanitizers,
};
use crate::slicer::Slice;
use crate::taint::{collect_warning_nodes, expr_taint, Confidence, SrvType, TaintState, Warning};

/// Edge kinds the detectors read taint over.
pub const TAINT_EDGES: &[EdgeKind] = &[EdgeKind::Data];

pub const NOTE_KNOWN_FP: &str =
    "known false-positive class: a state restriction keyed by the recovered signer may be unrelated to signature verification";
pub const NOTE_OPAQUE: &str = "Opaque-assembly: values defined in inline assembly were not analyzed";
pub const NOTE_V_ZERO_ONE: &str = "v is restricted to {0, 1}; only {27, 28} counts as a range check";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DetectorConfig {
    pub enabled: BTreeSet<SrvType>,
    pub secp256k1_half_order: BigUint,
    /// Recovery libraries that reject malleable signatures themselves.
    pub safe_library_names: Vec<String>,
    /// Oldest library release counted as safe, when a version is detectable.
    pub safe_library_min_version: (u32, u32, u32),
    pub treat_eip712_domain_as_binding: bool,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            enabled: SrvType::ALL.into_iter().collect(),
            secp256k1_half_order: secp256k1_half_order(),
            safe_library_names: vec!["ECDSA".into(), "SignatureChecker".into()],
            safe_library_min_version: (4, 7, 3),
            treat_eip712_domain_as_binding: true,
        }
    }
}

/// Everything a detector reads for one slice.
pub struct Analysis<'a> {
    pub unit: &'a AstUnit,
    pub g: &'a Ipdg,
    pub ix: &'a AstIndex<'a>,
    pub slice: &'a Slice,
    pub taint: &'a TaintState,
    pub sanitizers: &'a Sanitizers,
    /// Library release found in the source header, if any.
    pub library_version: Option<(u32, u32, u32)>,
}

impl Analysis<'_> {
    fn sink(&self) -> &SinkSite {
        &self.slice.sink
    }

    fn functions(&self) -> BTreeSet<String> {
        self.slice.functions.iter().cloned().collect()
    }

    fn hash_provenance(&self) -> Provenance {
        backward(self.ix, self.g, &[(self.sink().stmt, self.sink().hash_arg.node)])
    }

    fn sanitized(&self, srv: SrvType, name: &str) -> bool {
        self.sanitizers.get(&srv).is_some_and(|s| s.contains(name))
    }

    fn sanitized_any(&self, srv: SrvType, prov: &Provenance) -> bool {
        prov.vars.iter().any(|v| !v.is_env() && self.sanitized(srv, v.name()))
    }

    /// Statements that build the signed hash, plus the sink.
    fn hash_nodes(&self, prov: &Provenance) -> BTreeSet<NodeId> {
        let stmts: BTreeSet<NodeId> = prov
            .nodes
            .iter()
            .copied()
            .filter(|n| self.g.node(*n).is_some_and(|i| i.kind == NodeKind::Statement))
            .collect();
        let mut out: BTreeSet<NodeId> = stmts.iter().copied().filter(|n| is_hashing(self.ix, *n)).collect();
        if out.is_empty() {
            out = stmts;
        }
        out.insert(self.sink().stmt);
        out
    }

    /// Restricts candidate evidence to nodes dependent on the analysed
    /// variables and inside the slice. The sink is always kept.
    fn warning(&self, srv: SrvType, candidates: BTreeSet<NodeId>, extra_vars: &BTreeSet<VarId>) -> Warning {
        let sink = self.sink();
        let roots = sink_roots(self.ix, self.g, sink);
        let mut seeds = BTreeSet::new();
        for v in roots.hash.vars.iter().chain(&roots.sig_vars).chain(extra_vars) {
            if !v.is_env() {
                seeds.extend(self.g.def_nodes(v));
            }
        }
        seeds.extend(self.g.entry_points.get(&sink.enclosing_function));
        let reach = collect_warning_nodes(self.g, &seeds);
        let inside = self.slice.nodes(self.g);
        let mut evidence: BTreeSet<NodeId> =
            candidates.into_iter().filter(|n| reach.contains(n) && inside.contains(n)).collect();
        evidence.insert(sink.stmt);
        let mut w = Warning::new(self.g, &sink.enclosing_function, srv, sink.stmt, evidence);
        if w.confidence == Confidence::Low || sink.kind == SinkKind::AssemblyOpaque {
            w.confidence = Confidence::Low;
            w.notes.push(NOTE_OPAQUE.to_string());
        }
        w
    }
}

fn binding(a: &Analysis, srv: SrvType, atom: EnvAtom, cfg: &DetectorConfig) -> Vec<Warning> {
    let prov = a.hash_provenance();
    let bound = prov.vars.contains(&VarId::Env { atom })
        || a.sanitized_any(srv, &prov)
        || (cfg.treat_eip712_domain_as_binding && opaque_domain_binding(a.ix, a.g, &prov));
    if bound {
        return Vec::new();
    }
    vec![a.warning(srv, a.hash_nodes(&prov), &BTreeSet::new())]
}

/// Cross-chain replay: the signed hash does not depend on the chain id.
pub fn detect_xcra(a: &Analysis, cfg: &DetectorConfig) -> Vec<Warning> {
    binding(a, SrvType::XCra, EnvAtom::BlockChainId, cfg)
}

/// Cross-contract replay: the signed hash does not depend on the verifying
/// contract's address.
pub fn detect_xpra(a: &Analysis, cfg: &DetectorConfig) -> Vec<Warning> {
    binding(a, SrvType::XPra, EnvAtom::AddressThis, cfg)
}

/// Cross-account replay: a verifier acting for an account identity does not
/// bind that identity into the signed hash. Not applicable without an
/// identity parameter or an `isValidSignature` implementation.
pub fn detect_casr(a: &Analysis, _cfg: &DetectorConfig) -> Vec<Warning> {
    let functions = a.functions();
    let ids = identity_params(a.ix, &functions);
    let prov = a.hash_provenance();
    let bound = if !ids.is_empty() {
        ids.iter().any(|v| prov.vars.contains(v))
    } else if !is_valid_signature_functions(a.ix, &functions).is_empty() {
        prov.vars.contains(&VarId::Env { atom: EnvAtom::AddressThis })
    } else {
        return Vec::new();
    };
    if bound || a.sanitized_any(SrvType::Casr, &prov) {
        return Vec::new();
    }
    let ids: BTreeSet<VarId> = ids.into_iter().collect();
    vec![a.warning(SrvType::Casr, a.hash_nodes(&prov), &ids)]
}

/// Same-contract replay: nothing records that a signature was used.
pub fn detect_ssmi(a: &Analysis, _cfg: &DetectorConfig) -> Vec<Warning> {
    let protections = replay_protections(a.ix, a.g, a.sink(), &a.functions());
    if protections.iter().any(|p| a.sanitized(SrvType::Ssmi, p.mapping.name())) {
        return Vec::new();
    }
    let prov = a.hash_provenance();
    vec![a.warning(SrvType::Ssmi, a.hash_nodes(&prov), &BTreeSet::new())]
}

/// Signature malleability: a bare recovery without both the v range check
/// and the s upper bound.
pub fn detect_sma(a: &Analysis, cfg: &DetectorConfig) -> Vec<Warning> {
    let sink = a.sink();
    let library_safe = |lib: &str| {
        cfg.safe_library_names.iter().any(|n| n == lib)
            && a.library_version.is_none_or(|v| v >= cfg.safe_library_min_version)
    };
    match sink.kind {
        SinkKind::BareEcrecover | SinkKind::AssemblyOpaque => {}
        SinkKind::LibraryRecover | SinkKind::LibraryTryRecover => {
            // an in-unit library is analysed at its own ecrecover
            if sink.library_in_unit || sink.library.as_deref().is_some_and(library_safe) {
                return Vec::new();
            }
        }
    }
    let vs = vs_checks(a.ix, sink, &cfg.secp256k1_half_order);
    let constant = |arg: &Option<crate::frontend::ExprRef>| {
        arg.as_ref().is_some_and(|r| {
            a.ix.expr(r.node).is_some_and(|e| {
                expr_taint(a.g, a.ix, a.taint, sink.stmt, e).is_empty() && !has_opaque_def(a, sink.stmt, r.node)
            })
        })
    };
    let checked = |c: Check, text: &Option<String>| {
        c == Check::Present && text.as_deref().is_some_and(|t| a.sanitized(SrvType::Sma, t))
    };
    let v_ok = constant(&sink.v_arg) || checked(vs.v, &vs.v_text);
    let s_ok = constant(&sink.s_arg) || checked(vs.s, &vs.s_text);
    if v_ok && s_ok {
        return Vec::new();
    }
    let mut candidates = vs.partial.clone();
    let roots: Vec<(NodeId, NodeId)> =
        [&sink.v_arg, &sink.s_arg].into_iter().flatten().map(|r| (sink.stmt, r.node)).collect();
    let prov = backward(a.ix, a.g, &roots);
    candidates.extend(prov.nodes.iter().filter(|n| a.g.node(**n).is_some_and(|i| i.kind == NodeKind::Statement)));
    let vs_vars: BTreeSet<VarId> = prov.vars.iter().filter(|v| !v.is_env()).cloned().collect();
    let mut w = a.warning(SrvType::Sma, candidates, &vs_vars);
    if vs.v_zero_one {
        w.notes.push(NOTE_V_ZERO_ONE.to_string());
    }
    let protections = replay_protections(a.ix, a.g, sink, &a.functions());
    if protections.iter().any(|p| p.signer_keyed) {
        w.notes.push(NOTE_KNOWN_FP.to_string());
    }
    vec![w]
}

fn has_opaque_def(a: &Analysis, stmt: NodeId, expr: NodeId) -> bool {
    backward(a.ix, a.g, &[(stmt, expr)]).opaque
}

/// Runs the enabled detectors in a fixed order.
pub fn run_detectors(a: &Analysis, cfg: &DetectorConfig) -> Vec<Warning> {
    let mut out = Vec::new();
    for srv in SrvType::ALL {
        if !cfg.enabled.contains(&srv) {
            continue;
        }
        out.extend(match srv {
            SrvType::XCra => detect_xcra(a, cfg),
            SrvType::XPra => detect_xpra(a, cfg),
            SrvType::Casr => detect_casr(a, cfg),
            SrvType::Ssmi => detect_ssmi(a, cfg),
            SrvType::Sma => detect_sma(a, cfg),
        });
    }
    out
}
