//! Detection of signature replay vulnerabilities in Solidity source.

pub mod frontend;
pub mod graph;
pub mod flow;
pub mod index;
pub mod slicer;
pub mod taint;
pub mod patterns;
pub mod detectors;
pub mod net;
pub mod oracle;
pub mod pathcheck;
pub mod report;
pub mod pipeline;
pub mod screen;

pub use detectors::DetectorConfig;
pub use frontend::{load, locate_sinks, AstUnit, FrontendError, SinkKind, SinkSite};
pub use oracle::{Oracle, OracleConfig, OracleError, OracleMode, ReplayFallback};
pub use pathcheck::{check_reachability, Backend, PathConstraintSet, ReachabilityVerdict, Status};
pub use pipeline::{exit_code, scan, scan_source, ScanConfig};
pub use report::{emit_report, FileError, Finding, Format, Location, Reachability, Report};
pub use screen::{corpus_screen, Screening};
pub use taint::{Confidence, SrvType, Warning};
