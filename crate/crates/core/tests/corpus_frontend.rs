use std::fs;
use std::path::{Path, PathBuf};

use srvscan_core::frontend::{load, locate_sinks, SinkKind};
use srvscan_core::graph::build_ipdg;

fn corpus() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../corpus")
}

fn sol_files(dir: &Path) -> Vec<PathBuf> {
    let mut out: Vec<PathBuf> = walkdir::WalkDir::new(dir)
        .into_iter()
        .filter_map(Result::ok)
        .map(|e| e.into_path())
        .filter(|p| p.extension().is_some_and(|e| e == "sol"))
        .collect();
    out.sort();
    out
}

#[test]
fn every_fixture_parses_and_builds_a_graph() {
    let files = sol_files(&corpus());
    assert!(files.len() >= 40, "found {}", files.len());
    for p in files {
        let text = fs::read_to_string(&p).unwrap();
        let unit = load(&text, &p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        let g = build_ipdg(&unit);
        assert!(!g.nodes.is_empty() || unit.contracts.is_empty(), "{}", p.display());
        if std::env::var_os("SRVSCAN_DUMP_SINKS").is_some() {
            for s in locate_sinks(&unit) {
                eprintln!("{} {} {:?} line {}", p.display(), s.enclosing_function, s.kind, s.span.line);
            }
        }
    }
}

#[test]
fn figure_fixtures_have_one_sink_each() {
    for dir in ["figures/vulnerable", "figures/patched"] {
        for p in sol_files(&corpus().join(dir)) {
            let text = fs::read_to_string(&p).unwrap();
            let unit = load(&text, &p).unwrap();
            let sinks = locate_sinks(&unit);
            assert_eq!(sinks.len(), 1, "{}", p.display());
        }
    }
}

#[test]
fn assembly_limitation_has_a_bare_sink_fed_by_opaque_defs() {
    let p = corpus().join("limitations/custom_assembly.sol");
    let unit = load(&fs::read_to_string(&p).unwrap(), &p).unwrap();
    let sinks = locate_sinks(&unit);
    assert_eq!(sinks.len(), 1);
    assert_eq!(sinks[0].kind, SinkKind::BareEcrecover);
}
