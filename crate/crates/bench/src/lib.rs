//! Shared inputs for the benchmarks.

use std::path::{Path, PathBuf};

pub fn corpus_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../corpus")
}

/// The six vulnerable figure fixtures as (path, source).
pub fn figure_sources() -> Vec<(PathBuf, String)> {
    let dir = corpus_dir().join("figures/vulnerable");
    let mut out: Vec<(PathBuf, String)> = std::fs::read_dir(&dir)
        .expect("figure corpus present")
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "sol"))
        .map(|p| {
            let text = std::fs::read_to_string(&p).expect("readable fixture");
            (p, text)
        })
        .collect();
    out.sort();
    out
}
