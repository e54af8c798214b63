//! Verified-source download from an Etherscan-style block explorer, with an
//! on-disk cache and a client-side rate limit.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::thread::sleep;
use std::time::{Duration, Instant};

use serde::Serialize;
use serde_json::Value;
use srvscan_core::net;

pub const BASE_URL_ENV: &str = "SRVSCAN_EXPLORER_URL";
pub const API_KEY_ENV: &str = "SRVSCAN_EXPLORER_KEY";
pub const MAX_RETRIES: u32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum FetchError {
    #[error("{0} is not set")]
    MissingEnv(&'static str),
    #[error(transparent)]
    Denied(#[from] net::NetworkDenied),
    #[error("http: {0}")]
    Http(String),
    #[error("address has no verified source")]
    NotVerified,
    #[error("rate limited after {0} retries")]
    RateLimited(u32),
    #[error("cache: {0}")]
    Cache(#[from] std::io::Error),
}

#[derive(Clone, Debug)]
pub struct FetchConfig {
    pub base_url: String,
    pub api_key: Option<String>,
    pub chain: String,
    pub cache_dir: PathBuf,
    pub requests_per_second: f64,
    /// First retry delay; doubles per retry.
    pub backoff: Duration,
}

impl FetchConfig {
    /// Reads the explorer URL and key from the environment.
    pub fn from_env(chain: &str, cache_dir: &Path) -> Result<FetchConfig, FetchError> {
        let base_url = std::env::var(BASE_URL_ENV).map_err(|_| FetchError::MissingEnv(BASE_URL_ENV))?;
        Ok(FetchConfig {
            base_url,
            api_key: std::env::var(API_KEY_ENV).ok(),
            chain: chain.to_string(),
            cache_dir: cache_dir.to_path_buf(),
            requests_per_second: 5.0,
            backoff: Duration::from_millis(500),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum FetchOutcome {
    Fetched { path: PathBuf },
    Cached { path: PathBuf },
    NotVerified,
    Failed { message: String },
}

#[derive(Clone, Debug, Serialize)]
pub struct FetchRecord {
    pub address: String,
    #[serde(flatten)]
    pub outcome: FetchOutcome,
}

/// Spaces request starts at least `1 / rate` seconds apart.
struct Throttle {
    interval: Duration,
    last: Option<Instant>,
}

impl Throttle {
    fn wait(&mut self) {
        if let Some(t) = self.last {
            let due = t + self.interval;
            let now = Instant::now();
            if due > now {
                sleep(due - now);
            }
        }
        self.last = Some(Instant::now());
    }
}

pub struct Fetcher {
    cfg: FetchConfig,
    http: reqwest::blocking::Client,
    throttle: Throttle,
    requests: u64,
}

fn normalize(address: &str) -> String {
    address.trim().to_ascii_lowercase()
}

impl Fetcher {
    pub fn new(cfg: FetchConfig) -> Result<Fetcher, FetchError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(30))
            .build()
            .map_err(|e| FetchError::Http(e.to_string()))?;
        let interval = if cfg.requests_per_second > 0.0 {
            Duration::from_secs_f64(1.0 / cfg.requests_per_second)
        } else {
            Duration::ZERO
        };
        Ok(Fetcher {
            cfg,
            http,
            throttle: Throttle { interval, last: None },
            requests: 0,
        })
    }

    /// HTTP requests sent so far.
    pub fn requests(&self) -> u64 {
        self.requests
    }

    pub fn cache_path(&self, address: &str) -> PathBuf {
        self.cfg.cache_dir.join(&self.cfg.chain).join(format!("{}.sol", normalize(address)))
    }

    pub fn fetch_all(&mut self, addresses: &[String]) -> Vec<FetchRecord> {
        addresses
            .iter()
            .map(|a| {
                let outcome = match self.fetch(a) {
                    Ok(o) => o,
                    Err(FetchError::NotVerified) => FetchOutcome::NotVerified,
                    Err(e) => FetchOutcome::Failed { message: e.to_string() },
                };
                FetchRecord {
                    address: normalize(a),
                    outcome,
                }
            })
            .collect()
    }

    pub fn fetch(&mut self, address: &str) -> Result<FetchOutcome, FetchError> {
        let path = self.cache_path(address);
        if path.is_file() {
            return Ok(FetchOutcome::Cached { path });
        }
        let mut retries = 0;
        let source = loop {
            match self.request(address) {
                Err(FetchError::RateLimited(_)) if retries < MAX_RETRIES => {
                    let delay = self.cfg.backoff * 2u32.pow(retries);
                    retries += 1;
                    log::info!("rate limited on {address}; retry {retries} in {delay:?}");
                    sleep(delay);
                }
                Err(FetchError::RateLimited(_)) => return Err(FetchError::RateLimited(retries)),
                other => break other?,
            }
        };
        write_atomic(&path, &source)?;
        Ok(FetchOutcome::Fetched { path })
    }

    fn request(&mut self, address: &str) -> Result<String, FetchError> {
        let base = self.cfg.base_url.clone();
        net::guard(&base)?;
        self.throttle.wait();
        self.requests += 1;
        let mut query = vec![
            ("module", "contract".to_string()),
            ("action", "getsourcecode".to_string()),
            ("address", normalize(address)),
            ("chain", self.cfg.chain.clone()),
        ];
        if let Some(k) = &self.cfg.api_key {
            query.push(("apikey", k.clone()));
        }
        let resp = self.http.get(&base).query(&query).send().map_err(|e| FetchError::Http(e.to_string()))?;
        if resp.status().as_u16() == 429 {
            return Err(FetchError::RateLimited(0));
        }
        if !resp.status().is_success() {
            return Err(FetchError::Http(format!("status {}", resp.status())));
        }
        let body: Value = resp.json().map_err(|e| FetchError::Http(e.to_string()))?;
        parse_source(&body)
    }
}

/// Reads an explorer answer: `{"status": "1", "result": [{"SourceCode": ...}]}`.
fn parse_source(body: &Value) -> Result<String, FetchError> {
    let result = &body["result"];
    if body["status"].as_str() == Some("0") {
        let text = result.as_str().unwrap_or_default().to_ascii_lowercase();
        if text.contains("rate limit") {
            return Err(FetchError::RateLimited(0));
        }
        if text.contains("not verified") {
            return Err(FetchError::NotVerified);
        }
        return Err(FetchError::Http(format!("explorer error: {}", body["message"])));
    }
    let source = result[0]["SourceCode"].as_str().unwrap_or_default();
    if source.trim().is_empty() {
        return Err(FetchError::NotVerified);
    }
    Ok(source.to_string())
}

/// Writes through a temporary file in the same directory, then renames.
fn write_atomic(path: &Path, text: &str) -> std::io::Result<()> {
    let dir = path.parent().expect("cache paths have a parent");
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(text.as_bytes())?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn explorer_answers() {
        let ok = json!({"status": "1", "message": "OK", "result": [{"SourceCode": "contract A {}"}]});
        assert_eq!(parse_source(&ok).unwrap(), "contract A {}");
        let empty = json!({"status": "1", "message": "OK", "result": [{"SourceCode": ""}]});
        assert!(matches!(parse_source(&empty), Err(FetchError::NotVerified)));
        let limited = json!({"status": "0", "message": "NOTOK", "result": "Max rate limit reached"});
        assert!(matches!(parse_source(&limited), Err(FetchError::RateLimited(_))));
    }

    #[test]
    fn cache_writes_replace_whole_files() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("mainnet/0xab.sol");
        write_atomic(&p, "one").unwrap();
        write_atomic(&p, "two").unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(std::fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }
}
