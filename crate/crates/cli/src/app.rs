//! Subcommands and their exit codes.

use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use srvscan_core::{corpus_screen, emit_report, net, scan, Oracle};

use crate::config::{resolve, ScanFlags};
use crate::fetch::{FetchConfig, FetchOutcome, Fetcher};

pub const EXIT_CLEAN: i32 = 0;
pub const EXIT_FINDINGS: i32 = 1;
pub const EXIT_ERROR: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "srvscan", version, about = "Find signature replay vulnerabilities in Solidity sources")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Analyse contracts and report findings.
    Scan(ScanFlags),
    /// List the files that contain a signature-recovery call.
    Screen {
        dir: PathBuf,
    },
    /// Download verified sources into a local cache.
    Fetch {
        #[arg(long, default_value = "mainnet")]
        chain: String,
        #[arg(long)]
        cache_dir: PathBuf,
        /// Requests per second.
        #[arg(long, default_value_t = 5.0)]
        rate: f64,
        #[arg(required = true)]
        addresses: Vec<String>,
    },
}

pub fn run(cli: Cli, out: &mut dyn Write) -> i32 {
    match cli.command {
        Command::Scan(flags) => run_scan(&flags, out),
        Command::Screen { dir } => run_screen(&dir, out),
        Command::Fetch {
            chain,
            cache_dir,
            rate,
            addresses,
        } => run_fetch(&chain, cache_dir, rate, &addresses, out),
    }
}

/// 1 when anything was found; otherwise 2 if a file failed, else 0.
pub fn run_scan(flags: &ScanFlags, out: &mut dyn Write) -> i32 {
    let cfg = match resolve(flags) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("srvscan: {e}");
            return EXIT_ERROR;
        }
    };
    net::deny_network(!cfg.network_allowed());
    let oracle = match Oracle::new(cfg.oracle.clone()) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("srvscan: {e}");
            return EXIT_ERROR;
        }
    };
    let report = scan(&cfg.scan, &oracle);
    for e in &report.errors {
        eprintln!("srvscan: {}: {}", e.path, e.message);
    }
    let text = emit_report(&report, cfg.format);
    let written = match &cfg.output {
        Some(p) => std::fs::write(p, &text),
        None => out.write_all(text.as_bytes()),
    };
    if let Err(e) = written {
        eprintln!("srvscan: cannot write report: {e}");
        return EXIT_ERROR;
    }
    if !report.findings.is_empty() {
        EXIT_FINDINGS
    } else if !report.errors.is_empty() {
        EXIT_ERROR
    } else {
        EXIT_CLEAN
    }
}

pub fn run_screen(dir: &std::path::Path, out: &mut dyn Write) -> i32 {
    net::deny_network(true);
    match corpus_screen(dir) {
        Ok(s) => {
            for e in &s.skipped {
                eprintln!("srvscan: skipped {}: {}", e.path, e.message);
            }
            let mut text = String::new();
            for p in &s.hits {
                text.push_str(&format!("{}\n", p.display()));
            }
            match out.write_all(text.as_bytes()) {
                Ok(()) => EXIT_CLEAN,
                Err(_) => EXIT_ERROR,
            }
        }
        Err(e) => {
            eprintln!("srvscan: {}: {}", e.path, e.message);
            EXIT_ERROR
        }
    }
}

pub fn run_fetch(chain: &str, cache_dir: PathBuf, rate: f64, addresses: &[String], out: &mut dyn Write) -> i32 {
    let cfg = match FetchConfig::from_env(chain, &cache_dir) {
        Ok(c) => FetchConfig {
            requests_per_second: rate,
            ..c
        },
        Err(e) => {
            eprintln!("srvscan: {e}");
            return EXIT_ERROR;
        }
    };
    let mut fetcher = match Fetcher::new(cfg) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("srvscan: {e}");
            return EXIT_ERROR;
        }
    };
    let records = fetcher.fetch_all(addresses);
    let failed = records.iter().any(|r| matches!(r.outcome, FetchOutcome::Failed { .. }));
    let mut text = serde_json::to_string_pretty(&records).expect("records serialize");
    text.push('\n');
    if out.write_all(text.as_bytes()).is_err() || failed {
        EXIT_ERROR
    } else {
        EXIT_CLEAN
    }
}
