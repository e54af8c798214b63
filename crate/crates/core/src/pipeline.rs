//! Per-file orchestration: frontend, slicing, the three oracle prompts,
//! detection and reachability checking, down to report findings.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::Serialize;

use crate::detectors::{run_detectors, Analysis, DetectorConfig, TAINT_EDGES};
use crate::frontend::{detect_library_version, load, locate_sinks, AstUnit, NodeId, SinkSite, VarId};
use crate::graph::{build_ipdg, Ipdg};
use crate::index::AstIndex;
use crate::oracle::heuristic::sink_key_variables;
use crate::oracle::{Oracle, OracleError, Payload};
use crate::pathcheck::{build_path_constraints, check_reachability, Backend, PathConstraintSet, PathError, Status};
use crate::patterns::{sink_roots, structural_sanitizers, Sanitizers};
use crate::report::{FileError, FileTiming, Finding, Location, Reachability, ReachabilitySummary, Report};
use crate::slicer::{fit_budget, function_level_slice, initial_code_block, Slice};
use crate::taint::{default_sources, propagate, Confidence, Cuts, SrvType, Warning};

pub const DEFAULT_SOLVER_TIMEOUT: Duration = Duration::from_secs(10);

pub const NOTE_PATH_NOT_FOUND: &str = "no proposed call sequence reaches the sink; reachability unconfirmed";
pub const NOTE_UNKNOWN: &str = "the solver could not decide reachability";
pub const NOTE_TIMEOUT: &str = "the reachability check timed out";
pub const NOTE_UNCHECKED: &str = "no call sequence was proposed; reachability unchecked";

#[derive(Clone, Debug)]
pub struct ScanConfig {
    /// Files or directories; directories are searched for `.sol` files.
    pub inputs: Vec<PathBuf>,
    pub detectors: DetectorConfig,
    pub backend: Backend,
    pub solver_timeout: Duration,
    /// Worker threads; 0 lets the thread pool decide.
    pub jobs: usize,
    pub timings: bool,
    pub debug_dumps: Option<PathBuf>,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            inputs: Vec::new(),
            detectors: DetectorConfig::default(),
            backend: Backend::Builtin,
            solver_timeout: DEFAULT_SOLVER_TIMEOUT,
            jobs: 1,
            timings: false,
            debug_dumps: None,
        }
    }
}

/// Outcome of one source file.
#[derive(Clone, Debug, Default)]
pub struct FileResult {
    pub findings: Vec<Finding>,
    pub errors: Vec<FileError>,
    pub timing: FileTiming,
    /// Every constraint set handed to the solver, in order.
    pub constraint_sets: Vec<PathConstraintSet>,
}

/// Every `.sol` file under the inputs, sorted and without duplicates.
pub fn collect_sources(inputs: &[PathBuf]) -> Result<Vec<PathBuf>, FileError> {
    let mut out = BTreeSet::new();
    for input in inputs {
        if input.is_dir() {
            for entry in walkdir::WalkDir::new(input).sort_by_file_name() {
                let entry = entry.map_err(|e| FileError {
                    path: input.display().to_string(),
                    message: e.to_string(),
                })?;
                if entry.file_type().is_file() && entry.path().extension().is_some_and(|x| x == "sol") {
                    out.insert(entry.into_path());
                }
            }
        } else if input.is_file() {
            out.insert(input.clone());
        } else {
            return Err(FileError {
                path: input.display().to_string(),
                message: "no such file or directory".into(),
            });
        }
    }
    Ok(out.into_iter().collect())
}

/// Scans every input. Missing inputs and unreadable files end up in the
/// report's error list.
pub fn scan(cfg: &ScanConfig, oracle: &Oracle) -> Report {
    let files = match collect_sources(&cfg.inputs) {
        Ok(f) => f,
        Err(e) => return Report::new(Vec::new(), vec![e]),
    };
    let run = || -> Vec<FileResult> { files.par_iter().map(|p| scan_file(p, oracle, cfg)).collect() };
    let results = match rayon::ThreadPoolBuilder::new().num_threads(cfg.jobs).build() {
        Ok(pool) => pool.install(run),
        Err(e) => {
            log::warn!("falling back to the global thread pool: {e}");
            run()
        }
    };
    let mut findings = Vec::new();
    let mut errors = Vec::new();
    let mut timings = Vec::new();
    for r in results {
        findings.extend(r.findings);
        errors.extend(r.errors);
        timings.push(r.timing);
    }
    let mut report = Report::new(findings, errors);
    if cfg.timings {
        report.timings = Some(timings);
    }
    report
}

pub fn scan_file(path: &Path, oracle: &Oracle, cfg: &ScanConfig) -> FileResult {
    match fs::read_to_string(path) {
        Ok(text) => scan_source(&text, path, oracle, cfg),
        Err(e) => FileResult {
            errors: vec![FileError {
                path: path.display().to_string(),
                message: e.to_string(),
            }],
            timing: FileTiming {
                path: path.display().to_string(),
                ..FileTiming::default()
            },
            ..FileResult::default()
        },
    }
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1000.0
}

pub fn scan_source(text: &str, path: &Path, oracle: &Oracle, cfg: &ScanConfig) -> FileResult {
    let shown = path.display().to_string();
    let mut result = FileResult {
        timing: FileTiming {
            path: shown.clone(),
            ..FileTiming::default()
        },
        ..FileResult::default()
    };
    let t0 = Instant::now();
    let unit = match load(text, path) {
        Ok(u) => u,
        Err(e) => {
            result.errors.push(FileError {
                path: shown,
                message: e.to_string(),
            });
            result.timing.frontend_ms = ms(t0.elapsed());
            return result;
        }
    };
    let g = build_ipdg(&unit);
    let ix = AstIndex::new(&unit);
    let sinks = locate_sinks(&unit);
    result.timing.frontend_ms = ms(t0.elapsed());
    if sinks.is_empty() {
        return result;
    }

    let ctx = FileContext {
        unit: &unit,
        g: &g,
        ix: &ix,
        structural: structural_sanitizers(&unit, &g, &ix, &cfg.detectors.secp256k1_half_order),
        taint: propagate(&g, &default_sources(&g, &ix), &Cuts::default(), TAINT_EDGES),
        library_version: detect_library_version(&unit.source),
        oracle,
        cfg,
    };
    let mut seen = BTreeSet::new();
    for (i, sink) in sinks.iter().enumerate() {
        match ctx.scan_sink(sink, &mut result.timing) {
            Ok(out) => {
                if let Some(dir) = &cfg.debug_dumps {
                    let mut d = out.dump;
                    d.constraint_sets = out.sets.iter().map(PathConstraintSet::to_text).collect();
                    dump(dir, path, i, &d);
                }
                result.constraint_sets.extend(out.sets);
                for f in out.findings {
                    let key = (f.srv_type, f.sink.byte_offset, f.function.clone());
                    if seen.insert(key) {
                        result.findings.push(f);
                    }
                }
            }
            Err(e) => result.errors.push(FileError {
                path: shown.clone(),
                message: format!("sink in {} at line {}: {e}", sink.enclosing_function, sink.span.line),
            }),
        }
    }
    result
}

struct FileContext<'a> {
    unit: &'a AstUnit,
    g: &'a Ipdg,
    ix: &'a AstIndex<'a>,
    structural: Sanitizers,
    taint: crate::taint::TaintState,
    library_version: Option<(u32, u32, u32)>,
    oracle: &'a Oracle,
    cfg: &'a ScanConfig,
}

#[derive(Debug, thiserror::Error)]
enum SinkError {
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Budget(#[from] crate::slicer::BudgetExceeded),
}

#[derive(Default, Serialize)]
struct SinkDump {
    function: String,
    key_variables: Vec<String>,
    slice: String,
    omitted: Vec<String>,
    sanitizers: Sanitizers,
    warnings: Vec<String>,
    sequences: BTreeMap<String, Vec<Vec<String>>>,
    constraint_sets: Vec<String>,
}

struct SinkOutcome {
    findings: Vec<Finding>,
    dump: SinkDump,
    sets: Vec<PathConstraintSet>,
}

/// Verdict over all sequences proposed for one warning.
struct Decision {
    status: Option<Reachability>,
    sequence: Vec<String>,
    model: Option<BTreeMap<String, String>>,
    paths_checked: usize,
}

impl FileContext<'_> {
    fn scan_sink(&self, sink: &SinkSite, timing: &mut FileTiming) -> Result<SinkOutcome, SinkError> {
        let t0 = Instant::now();
        let mut dump = SinkDump {
            function: sink.enclosing_function.clone(),
            ..SinkDump::default()
        };
        let seed = initial_code_block(self.g, self.unit, sink);
        let keys = self.key_variables(sink, &seed)?;
        dump.key_variables = keys.iter().map(|v| v.name().to_string()).collect();
        if keys.is_empty() {
            return Ok(SinkOutcome {
                findings: Vec::new(),
                dump,
                sets: Vec::new(),
            });
        }
        let slice = function_level_slice(self.g, self.unit, &keys, &seed);
        let slice = fit_budget(self.g, self.unit, slice, self.oracle.config().budget)?;
        dump.slice = slice.text.clone();
        dump.omitted = slice.omitted.clone();

        let sanitizers = self.sanitizers(&slice)?;
        dump.sanitizers = sanitizers.clone();
        let analysis = Analysis {
            unit: self.unit,
            g: self.g,
            ix: self.ix,
            slice: &slice,
            taint: &self.taint,
            sanitizers: &sanitizers,
            library_version: self.library_version,
        };
        let warnings = run_detectors(&analysis, &self.cfg.detectors);
        dump.warnings = warnings.iter().map(|w| w.srv_type.to_string()).collect();
        timing.detection_ms += ms(t0.elapsed());
        if warnings.is_empty() {
            return Ok(SinkOutcome {
                findings: Vec::new(),
                dump,
                sets: Vec::new(),
            });
        }

        let t1 = Instant::now();
        let bare = bare_name(&sink.enclosing_function).to_string();
        let proposed = match self.oracle.propose_function_sequences(std::slice::from_ref(&bare), &slice.text)?.payload {
            Payload::FunctionSequence(m) => m,
            _ => BTreeMap::new(),
        };
        dump.sequences = proposed.clone();
        let mut sequences: Vec<Vec<String>> = proposed.get(&bare).cloned().unwrap_or_default();
        sequences.dedup();

        let mut findings = Vec::new();
        let mut sets = Vec::new();
        for w in &warnings {
            let d = self.decide(&sequences, w, &mut sets);
            let Some(status) = d.status else {
                log::debug!("{} at {} suppressed: every path is infeasible", w.srv_type, w.function);
                continue;
            };
            findings.push(self.finding(sink, w, status, d));
        }
        timing.verification_ms += ms(t1.elapsed());
        Ok(SinkOutcome { findings, dump, sets })
    }

    /// Prompt A, mapped back onto variables of the code block. An answer
    /// that denies signature verification yields an empty set.
    fn key_variables(&self, sink: &SinkSite, seed: &Slice) -> Result<BTreeSet<VarId>, SinkError> {
        let resp = self.oracle.extract_key_variables(&seed.text)?;
        let Payload::KeyVariables {
            implements_signature_verification,
            variables,
            ..
        } = resp.payload
        else {
            return Ok(BTreeSet::new());
        };
        if !implements_signature_verification {
            return Ok(BTreeSet::new());
        }
        let names: BTreeSet<&str> = variables.iter().map(String::as_str).collect();
        let roots = sink_roots(self.ix, self.g, sink);
        let mut candidates: BTreeSet<VarId> = sink_key_variables(self.g, self.ix, sink);
        candidates.extend(roots.hash.vars.iter().cloned());
        candidates.extend(roots.sig_vars.iter().cloned());
        let in_block = seed.nodes(self.g);
        for n in &in_block {
            if let Some(info) = self.g.node(*n) {
                candidates.extend(info.defs.iter().cloned());
            }
        }
        Ok(candidates.into_iter().filter(|v| !v.is_env() && names.contains(v.name())).collect())
    }

    /// Prompt B merged with structural evidence. Binding types accept either
    /// source. For SSMI and SMA the detectors check structure themselves and
    /// read only the oracle's names.
    fn sanitizers(&self, slice: &Slice) -> Result<Sanitizers, SinkError> {
        let types: BTreeSet<SrvType> = self.cfg.detectors.enabled.clone();
        let resp = self.oracle.identify_sanitized_variables(&slice.text, &types)?;
        let mut out = Sanitizers::new();
        if let Payload::SanitizedVariables(m) = resp.payload {
            for (srv, names) in m {
                out.entry(srv).or_default().extend(names);
            }
        }
        for srv in [SrvType::XCra, SrvType::XPra, SrvType::Casr] {
            if let Some(s) = self.structural.get(&srv) {
                out.entry(srv).or_default().extend(s.iter().cloned());
            }
        }
        Ok(out)
    }

    fn decide(&self, sequences: &[Vec<String>], w: &Warning, seen: &mut Vec<PathConstraintSet>) -> Decision {
        let mut d = Decision {
            status: Some(Reachability::Unchecked),
            sequence: Vec::new(),
            model: None,
            paths_checked: 0,
        };
        if sequences.is_empty() {
            return d;
        }
        // ranks: SAT wins, then undecided results, then missing paths
        let mut best: Option<(u8, Reachability, Vec<String>)> = None;
        let mut all_unsat = true;
        let note = |rank: u8, r: Reachability, seq: &[String], best: &mut Option<(u8, Reachability, Vec<String>)>| {
            if best.as_ref().is_none_or(|(b, _, _)| rank < *b) {
                *best = Some((rank, r, seq.to_vec()));
            }
        };
        'seqs: for seq in sequences {
            let sets: Vec<PathConstraintSet> = match build_path_constraints(self.unit, self.g, seq, w) {
                Ok(s) => s,
                Err(PathError::EmptySequence) => continue,
                Err(PathError::PathNotFound) | Err(PathError::UnknownFunction(_)) => {
                    all_unsat = false;
                    note(2, Reachability::PathNotFound, seq, &mut best);
                    continue;
                }
            };
            for set in &sets {
                seen.push(set.clone());
                d.paths_checked += 1;
                match check_reachability(set, &self.cfg.backend, self.cfg.solver_timeout) {
                    Ok(v) => match v.status {
                        Status::Unsat => {}
                        Status::Sat => {
                            d.status = Some(Reachability::Sat);
                            d.sequence = seq.clone();
                            d.model = v.model;
                            break 'seqs;
                        }
                        s => {
                            all_unsat = false;
                            note(1, s.into(), seq, &mut best);
                        }
                    },
                    Err(e) => {
                        log::warn!("solver failed on {}: {e}", w.function);
                        all_unsat = false;
                        note(1, Reachability::Unknown, seq, &mut best);
                    }
                }
            }
        }
        if d.status == Some(Reachability::Sat) {
            return d;
        }
        match best {
            Some((_, r, seq)) => {
                d.status = Some(r);
                d.sequence = seq;
            }
            None if all_unsat && d.paths_checked > 0 => d.status = None,
            None => {}
        }
        d
    }

    fn location(&self, n: NodeId) -> Option<Location> {
        self.unit.span(n).map(|s| Location::of(self.unit, s))
    }

    fn finding(&self, sink: &SinkSite, w: &Warning, status: Reachability, d: Decision) -> Finding {
        let mut confidence = w.confidence;
        let mut notes = w.notes.clone();
        let extra = match status {
            Reachability::Sat => None,
            Reachability::Unknown => Some(NOTE_UNKNOWN),
            Reachability::Timeout => Some(NOTE_TIMEOUT),
            Reachability::PathNotFound => Some(NOTE_PATH_NOT_FOUND),
            Reachability::Unchecked => Some(NOTE_UNCHECKED),
        };
        if let Some(n) = extra {
            confidence = Confidence::Low;
            notes.push(n.to_string());
        }
        let mut evidence: Vec<Location> = w.evidence.iter().filter_map(|n| self.location(*n)).collect();
        evidence.sort_by_key(|l| (l.byte_offset, l.byte_length));
        evidence.dedup();
        Finding {
            srv_type: w.srv_type,
            contract: sink.contract.clone(),
            function: w.function.clone(),
            sink: Location::of(self.unit, sink.span),
            evidence,
            reachability: ReachabilitySummary {
                status,
                sequence: d.sequence,
                model: d.model,
                paths_checked: d.paths_checked,
            },
            confidence,
            notes,
        }
    }
}

fn bare_name(qualified: &str) -> &str {
    qualified.rsplit('.').next().unwrap_or(qualified)
}

fn dump(dir: &Path, source: &Path, index: usize, d: &SinkDump) {
    let stem: String = source
        .to_string_lossy()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '_' { c } else { '_' })
        .collect();
    let file = dir.join(format!("{stem}.sink{index}.json"));
    let body = serde_json::to_string_pretty(d).expect("dump serializes");
    if let Err(e) = fs::create_dir_all(dir).and_then(|_| fs::write(&file, body)) {
        log::warn!("could not write {}: {e}", file.display());
    }
}

/// 0 when clean, 1 when something was found. Errors are the caller's to map.
pub fn exit_code(report: &Report) -> i32 {
    if report.findings.is_empty() {
        0
    } else {
        1
    }
}
