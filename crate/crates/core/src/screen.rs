//! Corpus screening: which files contain at least one signature-recovery
//! call in their syntax tree.

use std::fs;
use std::path::{Path, PathBuf};

use crate::frontend::{load, locate_sinks};
use crate::pipeline::collect_sources;
use crate::report::FileError;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Screening {
    /// Sorted paths of files with a sink.
    pub hits: Vec<PathBuf>,
    /// Files that could not be read or parsed; they are skipped.
    pub skipped: Vec<FileError>,
}

pub fn has_sink(text: &str, path: &Path) -> Result<bool, FileError> {
    let unit = load(text, path).map_err(|e| FileError {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    Ok(!locate_sinks(&unit).is_empty())
}

pub fn corpus_screen(dir: &Path) -> Result<Screening, FileError> {
    if !dir.is_dir() {
        return Err(FileError {
            path: dir.display().to_string(),
            message: "not a readable directory".into(),
        });
    }
    let mut out = Screening::default();
    for path in collect_sources(&[dir.to_path_buf()])? {
        let verdict = fs::read_to_string(&path)
            .map_err(|e| FileError {
                path: path.display().to_string(),
                message: e.to_string(),
            })
            .and_then(|text| has_sink(&text, &path));
        match verdict {
            Ok(true) => out.hits.push(path),
            Ok(false) => {}
            Err(e) => {
                log::warn!("skipping {}: {}", e.path, e.message);
                out.skipped.push(e);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_dir_screens_to_nothing() {
        let d = tempfile::tempdir().unwrap();
        assert_eq!(corpus_screen(d.path()).unwrap(), Screening::default());
    }

    #[test]
    fn comment_mentions_are_not_sinks() {
        let src = "contract C { // ecrecover(h, v, r, s)\n /* ecrecover */ function f() public {} }";
        assert!(!has_sink(src, Path::new("c.sol")).unwrap());
    }

    #[test]
    fn unparsable_files_are_skipped() {
        let d = tempfile::tempdir().unwrap();
        fs::write(d.path().join("bad.sol"), "contract {").unwrap();
        fs::write(
            d.path().join("ok.sol"),
            "contract C { function f(bytes32 h, uint8 v, bytes32 r, bytes32 s) public { ecrecover(h, v, r, s); } }",
        )
        .unwrap();
        let s = corpus_screen(d.path()).unwrap();
        assert_eq!(s.hits, vec![d.path().join("ok.sol")]);
        assert_eq!(s.skipped.len(), 1);
    }
}
