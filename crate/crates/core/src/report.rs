//! Findings and their text, JSON and SARIF renderings.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::frontend::{AstUnit, Span};
use crate::pathcheck::Status;
use crate::taint::{Confidence, SrvType};

pub const REPORT_SCHEMA: &str = "srvscan-report/1";
pub const TOOL_NAME: &str = "srvscan";

/// A source range with both ends resolved to 1-based line and column.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Location {
    pub path: String,
    pub start_line: u32,
    pub start_column: u32,
    pub end_line: u32,
    pub end_column: u32,
    pub byte_offset: usize,
    pub byte_length: usize,
}

impl Location {
    pub fn of(unit: &AstUnit, span: Span) -> Location {
        let text = &unit.source[span.start..span.end.min(unit.source.len())];
        let (mut line, mut col) = (span.line, span.column);
        for ch in text.chars() {
            if ch == '\n' {
                line += 1;
                col = 1;
            } else {
                col += 1;
            }
        }
        Location {
            path: unit.source_path.to_string_lossy().replace('\\', "/"),
            start_line: span.line,
            start_column: span.column,
            end_line: line,
            end_column: col,
            byte_offset: span.start,
            byte_length: span.end - span.start,
        }
    }
}

/// What the reachability check concluded for a reported finding. UNSAT
/// findings are suppressed and never appear here.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Reachability {
    Sat,
    Unknown,
    Timeout,
    /// No proposed call sequence visits the sink.
    PathNotFound,
    /// The check was not run, for example when no sequence was proposed.
    Unchecked,
}

impl From<Status> for Reachability {
    fn from(s: Status) -> Self {
        match s {
            Status::Sat => Reachability::Sat,
            Status::Unknown => Reachability::Unknown,
            Status::Timeout => Reachability::Timeout,
            Status::Unsat => panic!("UNSAT results are suppressed, not reported"),
        }
    }
}

impl Reachability {
    pub fn as_str(self) -> &'static str {
        match self {
            Reachability::Sat => "SAT",
            Reachability::Unknown => "UNKNOWN",
            Reachability::Timeout => "TIMEOUT",
            Reachability::PathNotFound => "PATH_NOT_FOUND",
            Reachability::Unchecked => "UNCHECKED",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReachabilitySummary {
    pub status: Reachability,
    /// The call sequence behind `status`.
    pub sequence: Vec<String>,
    /// Attacker inputs of a satisfying path, as abstract domain values.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<BTreeMap<String, String>>,
    /// Path constraint sets that were decided.
    pub paths_checked: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub srv_type: SrvType,
    pub contract: String,
    pub function: String,
    pub sink: Location,
    pub evidence: Vec<Location>,
    pub reachability: ReachabilitySummary,
    pub confidence: Confidence,
    pub notes: Vec<String>,
}

impl Finding {
    fn order_key(&self) -> (&str, u32, SrvType, u32, &str) {
        (&self.sink.path, self.sink.start_line, self.srv_type, self.sink.start_column, &self.function)
    }
}

/// Sorts by (path, line, srv_type), then column and function.
pub fn canonical_order(findings: &mut [Finding]) {
    findings.sort_by(|a, b| a.order_key().cmp(&b.order_key()));
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileError {
    pub path: String,
    pub message: String,
}

/// Wall-clock milliseconds per phase for one input file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FileTiming {
    pub path: String,
    /// Parsing, inheritance, graph construction and sink location.
    pub frontend_ms: f64,
    /// Slicing, oracle prompts, taint and detectors.
    pub detection_ms: f64,
    /// Path constraints and solving.
    pub verification_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema: String,
    pub findings: Vec<Finding>,
    pub errors: Vec<FileError>,
    /// Absent unless timings were requested, so that reports of identical
    /// inputs are byte-identical.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings: Option<Vec<FileTiming>>,
}

impl Report {
    pub fn new(mut findings: Vec<Finding>, mut errors: Vec<FileError>) -> Report {
        canonical_order(&mut findings);
        errors.sort_by(|a, b| (&a.path, &a.message).cmp(&(&b.path, &b.message)));
        Report {
            schema: REPORT_SCHEMA.to_string(),
            findings,
            errors,
            timings: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Text,
    Json,
    Sarif,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" => Ok(Format::Text),
            "json" => Ok(Format::Json),
            "sarif" => Ok(Format::Sarif),
            other => Err(format!("unknown format `{other}` (expected text, json or sarif)")),
        }
    }
}

pub fn emit_report(report: &Report, format: Format) -> String {
    match format {
        Format::Text => to_text(report),
        Format::Json => to_json(report),
        Format::Sarif => to_sarif(report),
    }
}

pub fn to_json(report: &Report) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

fn confidence_str(c: Confidence) -> &'static str {
    match c {
        Confidence::High => "high",
        Confidence::Low => "low",
    }
}

pub fn to_text(report: &Report) -> String {
    let mut out = String::new();
    let rows: Vec<[String; 5]> = report
        .findings
        .iter()
        .map(|f| {
            [
                f.srv_type.to_string(),
                confidence_str(f.confidence).to_string(),
                format!("{}:{}:{}", f.sink.path, f.sink.start_line, f.sink.start_column),
                f.function.clone(),
                f.reachability.status.as_str().to_string(),
            ]
        })
        .collect();
    let header = ["TYPE", "CONFIDENCE", "LOCATION", "FUNCTION", "REACHABILITY"].map(String::from);
    let mut widths = header.clone().map(|h| h.len());
    for r in &rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: &[String; 5]| -> String {
        let parts: Vec<String> = cells.iter().zip(widths).map(|(c, w)| format!("{c:<w$}")).collect();
        parts.join("  ").trim_end().to_string()
    };
    if !rows.is_empty() {
        let _ = writeln!(out, "{}", line(&header));
    }
    for (r, f) in rows.iter().zip(&report.findings) {
        let _ = writeln!(out, "{}", line(r));
        if !f.reachability.sequence.is_empty() {
            let _ = writeln!(out, "    sequence: {}", f.reachability.sequence.join(" -> "));
        }
        for n in &f.notes {
            let _ = writeln!(out, "    note: {n}");
        }
    }
    for e in &report.errors {
        let _ = writeln!(out, "error: {}: {}", e.path, e.message);
    }
    let n = report.findings.len();
    let _ = writeln!(out, "{n} finding{}", if n == 1 { "" } else { "s" });
    if let Some(t) = &report.timings {
        for ft in t {
            let _ = writeln!(
                out,
                "timing: {}: frontend {:.1} ms, detection {:.1} ms, verification {:.1} ms",
                ft.path, ft.frontend_ms, ft.detection_ms, ft.verification_ms
            );
        }
    }
    out
}

pub fn rule_id(t: SrvType) -> String {
    format!("SRV-{}", t.as_str())
}

fn rule_text(t: SrvType) -> (&'static str, &'static str, &'static str) {
    match t {
        SrvType::XCra => (
            "CrossChainReplay",
            "Signed message does not commit to the chain id",
            "The recovered signer is checked against a message that does not include block.chainid, so one signature verifies on every chain the contract is deployed to.",
        ),
        SrvType::XPra => (
            "CrossProjectReplay",
            "Signed message does not commit to the verifying contract",
            "The signed message does not include address(this), so a signature accepted here is also accepted by other deployments of the same code.",
        ),
        SrvType::Casr => (
            "ContractAccountSignatureReplay",
            "Contract-account signature is not bound to the account",
            "An EIP-1271 style check accepts a signature whose message does not name the contract account, so one owner signature validates for every account of that owner.",
        ),
        SrvType::Ssmi => (
            "SignatureStateManagement",
            "Signature use is not tracked",
            "Nothing records that a signature or its nonce has been consumed, so the same signature can be submitted again.",
        ),
        SrvType::Sma => (
            "SignatureMalleability",
            "Malleable ECDSA signature accepted",
            "The s value is not restricted to the lower half of the curve order or v is not restricted to 27/28, so a second valid signature can be derived from an observed one.",
        ),
    }
}

fn uri(path: &str) -> String {
    let mut out = String::new();
    for c in path.chars() {
        match c {
            ' ' => out.push_str("%20"),
            '%' => out.push_str("%25"),
            '#' => out.push_str("%23"),
            '?' => out.push_str("%3F"),
            c => out.push(c),
        }
    }
    out
}

fn physical(l: &Location) -> Value {
    json!({
        "artifactLocation": { "uri": uri(&l.path) },
        "region": {
            "startLine": l.start_line,
            "startColumn": l.start_column,
            "endLine": l.end_line,
            "endColumn": l.end_column,
            "charOffset": l.byte_offset,
            "charLength": l.byte_length,
        }
    })
}

pub fn to_sarif(report: &Report) -> String {
    let rules: Vec<Value> = SrvType::ALL
        .iter()
        .map(|t| {
            let (name, short, full) = rule_text(*t);
            json!({
                "id": rule_id(*t),
                "name": name,
                "shortDescription": { "text": short },
                "fullDescription": { "text": full },
                "defaultConfiguration": { "level": "error" },
            })
        })
        .collect();
    let results: Vec<Value> = report
        .findings
        .iter()
        .map(|f| {
            let index = SrvType::ALL.iter().position(|t| *t == f.srv_type).expect("known type");
            let related: Vec<Value> = f
                .evidence
                .iter()
                .enumerate()
                .map(|(i, l)| json!({ "id": i, "physicalLocation": physical(l) }))
                .collect();
            let mut props = json!({
                "confidence": confidence_str(f.confidence),
                "reachability": f.reachability.status.as_str(),
                "sequence": f.reachability.sequence,
                "notes": f.notes,
            });
            if let Some(m) = &f.reachability.model {
                props["model"] = json!(m);
            }
            json!({
                "ruleId": rule_id(f.srv_type),
                "ruleIndex": index,
                "level": if f.confidence == Confidence::High { "error" } else { "warning" },
                "message": { "text": format!("{} in {}: {}", f.srv_type, f.function, rule_text(f.srv_type).1) },
                "locations": [{
                    "physicalLocation": physical(&f.sink),
                    "logicalLocations": [{ "fullyQualifiedName": f.function, "kind": "function" }],
                }],
                "relatedLocations": related,
                "properties": props,
            })
        })
        .collect();
    let invocation_ok = report.errors.is_empty();
    let notifications: Vec<Value> = report
        .errors
        .iter()
        .map(|e| {
            json!({
                "level": "error",
                "message": { "text": e.message },
                "locations": [{ "physicalLocation": { "artifactLocation": { "uri": uri(&e.path) } } }],
            })
        })
        .collect();
    let doc = json!({
        "$schema": "https://json.schemastore.org/sarif-2.1.0.json",
        "version": "2.1.0",
        "runs": [{
            "tool": { "driver": {
                "name": TOOL_NAME,
                "version": env!("CARGO_PKG_VERSION"),
                "rules": rules,
            }},
            "invocations": [{
                "executionSuccessful": invocation_ok,
                "toolExecutionNotifications": notifications,
            }],
            "results": results,
        }]
    });
    let mut s = serde_json::to_string_pretty(&doc).expect("sarif serializes");
    s.push('\n');
    s
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn sample(srv: SrvType, path: &str, line: u32) -> Finding {
        let loc = Location {
            path: path.into(),
            start_line: line,
            start_column: 9,
            end_line: line,
            end_column: 40,
            byte_offset: 100,
            byte_length: 31,
        };
        Finding {
            srv_type: srv,
            contract: "C".into(),
            function: "C.f".into(),
            sink: loc.clone(),
            evidence: vec![loc],
            reachability: ReachabilitySummary {
                status: Reachability::Sat,
                sequence: vec!["f".into()],
                model: Some(BTreeMap::from([("msg.sender#t0".into(), "a1".into())])),
                paths_checked: 1,
            },
            confidence: Confidence::High,
            notes: vec![],
        }
    }

    #[test]
    fn canonical_order_is_path_line_type() {
        let mut v = vec![
            sample(SrvType::Sma, "b.sol", 3),
            sample(SrvType::Ssmi, "a.sol", 7),
            sample(SrvType::XCra, "a.sol", 7),
            sample(SrvType::Sma, "a.sol", 2),
        ];
        canonical_order(&mut v);
        let keys: Vec<(String, u32, SrvType)> = v.iter().map(|f| (f.sink.path.clone(), f.sink.start_line, f.srv_type)).collect();
        assert_eq!(
            keys,
            vec![
                ("a.sol".into(), 2, SrvType::Sma),
                ("a.sol".into(), 7, SrvType::XCra),
                ("a.sol".into(), 7, SrvType::Ssmi),
                ("b.sol".into(), 3, SrvType::Sma),
            ]
        );
    }

    #[test]
    fn json_round_trips() {
        let r = Report::new(vec![sample(SrvType::Casr, "x.sol", 4)], vec![]);
        let back: Report = serde_json::from_str(&to_json(&r)).unwrap();
        assert_eq!(back, r);
        assert!(!to_json(&r).contains("timings"));
    }

    #[test]
    fn empty_sarif_has_five_rules_and_no_results() {
        let v: Value = serde_json::from_str(&to_sarif(&Report::new(vec![], vec![]))).unwrap();
        assert_eq!(v["version"], "2.1.0");
        assert_eq!(v["runs"][0]["tool"]["driver"]["rules"].as_array().unwrap().len(), 5);
        assert!(v["runs"][0]["results"].as_array().unwrap().is_empty());
    }

    #[test]
    fn sarif_result_points_at_the_sink() {
        let f = sample(SrvType::Sma, "dir with space/x.sol", 12);
        let v: Value = serde_json::from_str(&to_sarif(&Report::new(vec![f.clone()], vec![]))).unwrap();
        let r = &v["runs"][0]["results"][0];
        assert_eq!(r["ruleId"], "SRV-SMA");
        let region = &r["locations"][0]["physicalLocation"]["region"];
        assert_eq!(region["startLine"], f.sink.start_line);
        assert_eq!(region["startColumn"], f.sink.start_column);
        assert_eq!(region["charLength"], f.sink.byte_length);
        assert_eq!(r["locations"][0]["physicalLocation"]["artifactLocation"]["uri"], "dir%20with%20space/x.sol");
    }

    #[test]
    fn text_lists_findings_and_count() {
        let mut f = sample(SrvType::Sma, "x.sol", 5);
        f.notes.push("a note".into());
        let t = to_text(&Report::new(vec![f], vec![FileError { path: "y.sol".into(), message: "bad".into() }]));
        assert!(t.starts_with("TYPE"));
        assert!(t.contains("SMA   high        x.sol:5:9  C.f       SAT"));
        assert!(t.contains("    note: a note"));
        assert!(t.contains("error: y.sol: bad"));
        assert!(t.ends_with("1 finding\n"));
        assert_eq!(to_text(&Report::new(vec![], vec![])), "0 findings\n");
    }

    #[test]
    fn location_end_follows_newlines() {
        let unit = crate::frontend::load("contract A {\n  function f() public {}\n}\n", std::path::Path::new("a.sol")).unwrap();
        let c = &unit.contracts[0];
        let span = unit.span(c.id).unwrap();
        let l = Location::of(&unit, span);
        assert_eq!((l.start_line, l.start_column), (1, 1));
        assert_eq!(l.end_line, 3);
        assert_eq!(l.end_column, 2);
    }
}
