//! The semantic oracle: renders the three prompts, answers them live, from a
//! recorded transcript or with the built-in heuristic, and parses the JSON
//! answer.

pub mod heuristic;
pub mod json;
pub mod live;
pub mod transcript;

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::slicer::DEFAULT_BUDGET;
use crate::taint::SrvType;
pub use live::{LiveClient, LiveConfig};
pub use transcript::{Transcript, TranscriptEntry, TranscriptError};

const KEY_VARIABLES_TEMPLATE: &str = include_str!("../../prompts/key_variables.txt");
const SANITIZED_VARIABLES_TEMPLATE: &str = include_str!("../../prompts/sanitized_variables.txt");
const FUNCTION_SEQUENCE_TEMPLATE: &str = include_str!("../../prompts/function_sequence.txt");

const TIER_SEPARATOR: &str = "\n@@tier\n";
pub const MAX_ATTEMPTS: u8 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OracleKind {
    KeyVariables,
    SanitizedVariables,
    FunctionSequence,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordedMode {
    Live,
    Heuristic,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum OracleMode {
    Live(LiveConfig),
    Replay,
    Heuristic,
}

/// What to do when replay finds no recorded answer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReplayFallback {
    #[default]
    Error,
    Heuristic,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OracleConfig {
    pub mode: OracleMode,
    /// Maximum rendered prompt length in characters.
    pub budget: usize,
    pub replay_fallback: ReplayFallback,
    /// Replay reads from it; other modes append to it.
    pub transcript: Option<PathBuf>,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            mode: OracleMode::Heuristic,
            budget: DEFAULT_BUDGET,
            replay_fallback: ReplayFallback::Error,
            transcript: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OracleRequest {
    pub kind: OracleKind,
    /// Tiers of the conversation; only the last asks for JSON.
    pub tiers: Vec<String>,
    pub rendered_prompt: String,
    pub context_digest: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum Payload {
    KeyVariables {
        implements_signature_verification: bool,
        variables: Vec<String>,
        reason: String,
    },
    SanitizedVariables(BTreeMap<SrvType, Vec<String>>),
    FunctionSequence(BTreeMap<String, Vec<Vec<String>>>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AnswerSource {
    Live,
    Replay,
    Heuristic,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct OracleResponse {
    pub kind: OracleKind,
    pub payload: Payload,
    pub attempts: u8,
    pub raw_text: String,
    /// Identifiers dropped because they do not occur in the code.
    pub dropped: usize,
    pub source: AnswerSource,
}

#[derive(Debug, thiserror::Error)]
pub enum OracleError {
    #[error("oracle unavailable after {attempts} attempts: {last}")]
    Unavailable { attempts: u8, last: String },
    #[error("malformed oracle response: {0}")]
    MalformedResponse(String),
    #[error("no recorded answer for {kind:?} with digest {digest}")]
    ReplayMiss { kind: OracleKind, digest: String },
    #[error("prompt of {len} characters exceeds the budget of {budget}")]
    OverBudget { len: usize, budget: usize },
    #[error("replay mode needs a transcript path")]
    NoTranscript,
    #[error(transparent)]
    Transcript(#[from] TranscriptError),
    #[error(transparent)]
    Live(#[from] live::LiveError),
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct OracleStats {
    pub requests: u64,
    pub prompt_chars: u64,
    pub dropped_names: u64,
    pub replay_misses: u64,
}

pub struct Oracle {
    cfg: OracleConfig,
    live: Option<LiveClient>,
    transcript: Mutex<Transcript>,
    stats: Mutex<OracleStats>,
}

fn fill(template: &str, vars: &[(&str, &str)]) -> Vec<String> {
    let body = template
        .lines()
        .filter(|l| !l.starts_with("# template:"))
        .collect::<Vec<_>>()
        .join("\n");
    let mut text = body;
    for (k, v) in vars {
        text = text.replace(&format!("%{k}%"), v);
    }
    text.split(TIER_SEPARATOR).map(|t| t.trim().to_string()).collect()
}

fn request(kind: OracleKind, tiers: Vec<String>) -> OracleRequest {
    let rendered_prompt = tiers.join("\n\n");
    let context_digest = hex::encode(Sha256::digest(rendered_prompt.as_bytes()));
    OracleRequest {
        kind,
        tiers,
        rendered_prompt,
        context_digest,
    }
}

fn rules(srv: SrvType) -> (&'static str, &'static str) {
    match srv {
        SrvType::XCra => (
            "X-CRA: a variable is sanitized when it is compared for equality with block.chainid, or when it holds a hash that includes block.chainid directly or through an EIP-712 domain separator.",
            "X-CRA: follow block.chainid into assignments, return values and hash inputs.",
        ),
        SrvType::XPra => (
            "X-PRA: a variable is sanitized when it is compared for equality with address(this), or when it holds a hash that includes address(this) directly or as the EIP-712 verifying contract.",
            "X-PRA: follow address(this) into assignments, return values and hash inputs.",
        ),
        SrvType::Casr => (
            "CASR: a variable is sanitized when it holds a hash that includes the identity or account address the signature acts for, such as the account parameter of isValidSignature.",
            "CASR: follow the identity or account address parameter into the signed hash.",
        ),
        SrvType::Ssmi => (
            "SSMI: a state mapping is sanitized when it is read in a require or early return before the signature takes effect and written afterwards, keyed by the hash, the signature bytes or the signer's nonce.",
            "SSMI: look for used-hash mappings and nonces that are checked and then updated.",
        ),
        SrvType::Sma => (
            "SMA: v is sanitized when it is restricted to 27 or 28; s is sanitized when it is bounded above by half the secp256k1 group order.",
            "SMA: look for require or if statements on v and s before the recovery call.",
        ),
    }
}

pub fn render_key_variables(code_block: &str) -> OracleRequest {
    request(OracleKind::KeyVariables, fill(KEY_VARIABLES_TEMPLATE, &[("code_block", code_block)]))
}

pub fn render_sanitized_variables(slice_text: &str, srv_types: &BTreeSet<SrvType>) -> OracleRequest {
    let names: Vec<&str> = srv_types.iter().map(|s| s.as_str()).collect();
    let (r, m): (Vec<&str>, Vec<&str>) = srv_types.iter().map(|s| rules(*s)).unzip();
    let tiers = fill(
        SANITIZED_VARIABLES_TEMPLATE,
        &[
            ("srv_types", &names.join(", ")),
            ("slice", slice_text),
            ("sanitized_variable_identification_rules", &r.join("\n")),
            ("sanitization_methods", &m.join("\n")),
        ],
    );
    request(OracleKind::SanitizedVariables, tiers)
}

pub fn render_function_sequences(warning_functions: &[String], slice_text: &str) -> OracleRequest {
    let list = format!("[{}]", warning_functions.join(", "));
    let tiers = fill(FUNCTION_SEQUENCE_TEMPLATE, &[("Warnings", &list), ("slice", slice_text)]);
    request(OracleKind::FunctionSequence, tiers)
}

/// Identifier tokens of a piece of source text.
fn identifiers(text: &str) -> BTreeSet<&str> {
    text.split(|c: char| !(c.is_ascii_alphanumeric() || c == '_' || c == '$'))
        .filter(|t| t.chars().next().is_some_and(|c| !c.is_ascii_digit()))
        .collect()
}

fn string_list(v: &Value) -> Option<Vec<String>> {
    v.as_array()?.iter().map(|x| x.as_str().map(str::to_string)).collect()
}

/// Parses the answer of `kind`, dropping names absent from `code`.
pub fn parse_payload(kind: OracleKind, raw: &str, code: &str) -> Result<(Payload, usize), OracleError> {
    let obj: Map<String, Value> =
        json::last_json_object(raw).ok_or_else(|| OracleError::MalformedResponse("no JSON object".into()))?;
    let known = identifiers(code);
    let mut dropped = 0;
    let mut keep = |names: Vec<String>| -> Vec<String> {
        let before = names.len();
        let mut out: Vec<String> = names.into_iter().filter(|n| known.contains(n.as_str())).collect();
        dropped += before - out.len();
        out.dedup();
        out
    };
    let malformed = |what: &str| OracleError::MalformedResponse(what.to_string());
    let payload = match kind {
        OracleKind::KeyVariables => {
            let vars = obj.get("key_variables").and_then(string_list).ok_or_else(|| malformed("key_variables"))?;
            let implements = obj
                .get("implements_signature_verification")
                .and_then(Value::as_bool)
                .unwrap_or(!vars.is_empty());
            let reason = obj.get("reason").and_then(Value::as_str).unwrap_or_default().to_string();
            let mut variables = keep(vars);
            variables.sort();
            variables.dedup();
            Payload::KeyVariables {
                implements_signature_verification: implements,
                variables,
                reason,
            }
        }
        OracleKind::SanitizedVariables => {
            let map = match obj.get("sanitized_variables") {
                Some(Value::Object(m)) => m,
                Some(_) => return Err(malformed("sanitized_variables")),
                None => &obj,
            };
            let mut out = BTreeMap::new();
            for (k, v) in map {
                let Ok(srv) = k.parse::<SrvType>() else { continue };
                let mut names = keep(string_list(v).ok_or_else(|| malformed(k))?);
                names.sort();
                names.dedup();
                out.insert(srv, names);
            }
            Payload::SanitizedVariables(out)
        }
        OracleKind::FunctionSequence => {
            let mut out = BTreeMap::new();
            for (k, v) in &obj {
                let items = v.as_array().ok_or_else(|| malformed(k))?;
                let seqs: Vec<Vec<String>> = if items.iter().all(Value::is_string) {
                    if items.is_empty() {
                        Vec::new()
                    } else {
                        vec![string_list(v).expect("checked")]
                    }
                } else {
                    items.iter().map(|s| string_list(s).ok_or_else(|| malformed(k))).collect::<Result<_, _>>()?
                };
                let mut kept = Vec::new();
                for s in seqs {
                    let n = s.len();
                    let s = keep(s);
                    // a flow with an unknown step is not a flow
                    if s.len() == n && !s.is_empty() {
                        kept.push(s);
                    }
                }
                out.insert(k.clone(), kept);
            }
            Payload::FunctionSequence(out)
        }
    };
    Ok((payload, dropped))
}

impl Oracle {
    pub fn new(cfg: OracleConfig) -> Result<Oracle, OracleError> {
        let transcript = match (&cfg.transcript, &cfg.mode) {
            (Some(p), _) => Transcript::open(p)?,
            (None, OracleMode::Replay) => return Err(OracleError::NoTranscript),
            (None, _) => Transcript::in_memory(),
        };
        let live = match &cfg.mode {
            OracleMode::Live(l) => Some(LiveClient::new(l.clone())?),
            _ => None,
        };
        Ok(Oracle {
            cfg,
            live,
            transcript: Mutex::new(transcript),
            stats: Mutex::new(OracleStats::default()),
        })
    }

    pub fn heuristic() -> Oracle {
        Oracle::new(OracleConfig::default()).expect("heuristic oracle needs no resources")
    }

    pub fn config(&self) -> &OracleConfig {
        &self.cfg
    }

    pub fn stats(&self) -> OracleStats {
        self.stats.lock().expect("stats lock").clone()
    }

    pub fn extract_key_variables(&self, code_block: &str) -> Result<OracleResponse, OracleError> {
        let req = render_key_variables(code_block);
        self.ask(&req, code_block, || heuristic::key_variables(code_block))
    }

    pub fn identify_sanitized_variables(
        &self,
        slice_text: &str,
        srv_types: &BTreeSet<SrvType>,
    ) -> Result<OracleResponse, OracleError> {
        let req = render_sanitized_variables(slice_text, srv_types);
        self.ask(&req, slice_text, || heuristic::sanitized_variables(slice_text, srv_types))
    }

    /// `warning_functions` are bare function names.
    pub fn propose_function_sequences(
        &self,
        warning_functions: &[String],
        slice_text: &str,
    ) -> Result<OracleResponse, OracleError> {
        let req = render_function_sequences(warning_functions, slice_text);
        self.ask(&req, slice_text, || heuristic::function_sequences(warning_functions, slice_text))
    }

    fn ask(&self, req: &OracleRequest, code: &str, heuristic: impl Fn() -> String) -> Result<OracleResponse, OracleError> {
        if req.rendered_prompt.len() > self.cfg.budget {
            return Err(OracleError::OverBudget {
                len: req.rendered_prompt.len(),
                budget: self.cfg.budget,
            });
        }
        {
            let mut s = self.stats.lock().expect("stats lock");
            s.requests += 1;
            s.prompt_chars += req.rendered_prompt.len() as u64;
        }
        let (raw, attempts, source) = match &self.cfg.mode {
            OracleMode::Heuristic => {
                let raw = heuristic();
                self.record(req, &raw, RecordedMode::Heuristic)?;
                (raw, 1, AnswerSource::Heuristic)
            }
            OracleMode::Replay => {
                let found = self
                    .transcript
                    .lock()
                    .expect("transcript lock")
                    .lookup(&req.context_digest, req.kind)
                    .map(|e| e.raw_text.clone());
                match (found, self.cfg.replay_fallback) {
                    (Some(raw), _) => (raw, 1, AnswerSource::Replay),
                    (None, fallback) => {
                        self.stats.lock().expect("stats lock").replay_misses += 1;
                        if fallback == ReplayFallback::Error {
                            return Err(OracleError::ReplayMiss {
                                kind: req.kind,
                                digest: req.context_digest.clone(),
                            });
                        }
                        (heuristic(), 1, AnswerSource::Heuristic)
                    }
                }
            }
            OracleMode::Live(_) => return self.ask_live(req, code),
        };
        let (payload, dropped) = parse_payload(req.kind, &raw, code)?;
        self.stats.lock().expect("stats lock").dropped_names += dropped as u64;
        Ok(OracleResponse {
            kind: req.kind,
            payload,
            attempts,
            raw_text: raw,
            dropped,
            source,
        })
    }

    fn ask_live(&self, req: &OracleRequest, code: &str) -> Result<OracleResponse, OracleError> {
        let client = self.live.as_ref().expect("live mode has a client");
        let mut last = String::new();
        for attempt in 1..=MAX_ATTEMPTS {
            let raw = match client.converse(&req.tiers) {
                Ok(r) => r,
                Err(live::LiveError::Denied(d)) => return Err(live::LiveError::Denied(d).into()),
                Err(e) => {
                    log::warn!("oracle attempt {attempt} failed: {e}");
                    last = e.to_string();
                    continue;
                }
            };
            match parse_payload(req.kind, &raw, code) {
                Ok((payload, dropped)) => {
                    self.stats.lock().expect("stats lock").dropped_names += dropped as u64;
                    self.record(req, &raw, RecordedMode::Live)?;
                    return Ok(OracleResponse {
                        kind: req.kind,
                        payload,
                        attempts: attempt,
                        raw_text: raw,
                        dropped,
                        source: AnswerSource::Live,
                    });
                }
                Err(e) if attempt == MAX_ATTEMPTS => return Err(e),
                Err(e) => {
                    log::warn!("oracle attempt {attempt} unusable: {e}");
                    last = e.to_string();
                }
            }
        }
        Err(OracleError::Unavailable {
            attempts: MAX_ATTEMPTS,
            last,
        })
    }

    fn record(&self, req: &OracleRequest, raw: &str, mode: RecordedMode) -> Result<(), OracleError> {
        if self.cfg.transcript.is_none() {
            return Ok(());
        }
        self.transcript.lock().expect("transcript lock").record(TranscriptEntry {
            context_digest: req.context_digest.clone(),
            kind: req.kind,
            raw_text: raw.to_string(),
            mode,
        })?;
        Ok(())
    }
}
