//! Solidity subset frontend: parsing, inheritance resolution and sink
//! canonicalization.

pub mod ast;
mod inherit;
pub mod lexer;
mod parser;
mod sinks;
mod vars;

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use ast::*;
pub use inherit::{resolve_inheritance, CycleError};
pub use sinks::{detect_library_version, locate_sinks, ExprRef, SinkKind, SinkSite};
pub use parser::FILE_LEVEL;
pub(crate) use parser::is_elementary_type;
pub use vars::{Scope, VarId};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize)]
#[error("{line}:{column}: {message}")]
pub struct ParseError {
    pub message: String,
    pub line: u32,
    pub column: u32,
}

impl ParseError {
    pub fn new(message: impl Into<String>, line: u32, column: u32) -> Self {
        ParseError {
            message: message.into(),
            line,
            column,
        }
    }
}

/// Parses one source file. Inheritance is not resolved yet.
pub fn parse_source(source_text: &str, path: &Path) -> Result<AstUnit, ParseError> {
    parser::parse(source_text, path)
}

/// Environment values that can bind a signature to its context.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EnvAtom {
    #[serde(rename = "msg.sender")]
    MsgSender,
    #[serde(rename = "msg.value")]
    MsgValue,
    #[serde(rename = "msg.data")]
    MsgData,
    #[serde(rename = "block.chainid")]
    BlockChainId,
    #[serde(rename = "block.timestamp")]
    BlockTimestamp,
    #[serde(rename = "address(this)")]
    AddressThis,
    #[serde(rename = "tx.origin")]
    TxOrigin,
}

impl EnvAtom {
    pub const ALL: [EnvAtom; 7] = [
        EnvAtom::MsgSender,
        EnvAtom::MsgValue,
        EnvAtom::MsgData,
        EnvAtom::BlockChainId,
        EnvAtom::BlockTimestamp,
        EnvAtom::AddressThis,
        EnvAtom::TxOrigin,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EnvAtom::MsgSender => "msg.sender",
            EnvAtom::MsgValue => "msg.value",
            EnvAtom::MsgData => "msg.data",
            EnvAtom::BlockChainId => "block.chainid",
            EnvAtom::BlockTimestamp => "block.timestamp",
            EnvAtom::AddressThis => "address(this)",
            EnvAtom::TxOrigin => "tx.origin",
        }
    }

    pub fn from_member(base: &str, member: &str) -> Option<EnvAtom> {
        Some(match (base, member) {
            ("msg", "sender") => EnvAtom::MsgSender,
            ("msg", "value") => EnvAtom::MsgValue,
            ("msg", "data") => EnvAtom::MsgData,
            ("block", "chainid") => EnvAtom::BlockChainId,
            ("block", "timestamp") => EnvAtom::BlockTimestamp,
            ("tx", "origin") => EnvAtom::TxOrigin,
            _ => return None,
        })
    }

    pub fn from_yul_builtin(name: &str) -> Option<EnvAtom> {
        Some(match name {
            "chainid" => EnvAtom::BlockChainId,
            "address" => EnvAtom::AddressThis,
            "caller" => EnvAtom::MsgSender,
            "callvalue" => EnvAtom::MsgValue,
            "calldataload" | "calldatacopy" | "calldatasize" => EnvAtom::MsgData,
            "timestamp" => EnvAtom::BlockTimestamp,
            "origin" => EnvAtom::TxOrigin,
            _ => return None,
        })
    }

    /// Recognizes `msg.sender`, `block.chainid`, `address(this)` and the
    /// legacy `now`.
    pub fn from_expr(e: &Expr) -> Option<EnvAtom> {
        match &e.kind {
            ExprKind::Member(base, m) => EnvAtom::from_member(base.ident()?, m),
            ExprKind::Ident(n) if n == "now" => Some(EnvAtom::BlockTimestamp),
            ExprKind::Call { callee, args, .. }
                if args.len() == 1
                    && matches!(&callee.kind, ExprKind::TypeName(t) if t.is_address())
                    && args[0].ident() == Some("this") =>
            {
                Some(EnvAtom::AddressThis)
            }
            _ => None,
        }
    }
}

impl fmt::Display for EnvAtom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Parses and resolves inheritance in one step.
pub fn load(source_text: &str, path: &Path) -> Result<AstUnit, FrontendError> {
    let unit = parse_source(source_text, path)?;
    Ok(resolve_inheritance(unit)?)
}

#[derive(Debug, thiserror::Error)]
pub enum FrontendError {
    #[error("parse error at {0}")]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Cycle(#[from] CycleError),
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIG8: &str = r#"function permit(owner, spender, amount, v, r, s) {
    bytes32 permitDataDigest = keccak256(abi.encode(PERMIT_TYPEHASH, owner, spender));
    bytes32 digest = keccak256(abi.encodePacked("\x19\x01", DOMAIN_SEPARATOR(), permitDataDigest));
    require(owner == ecrecover(digest, v, r, s));
    allowances[owner][spender] = amount;
}
"#;

    #[test]
    fn empty_file_has_no_contracts() {
        let u = parse_source("", Path::new("e.sol")).unwrap();
        assert!(u.contracts.is_empty());
    }

    #[test]
    fn interest_permit_snippet_shape() {
        let u = load(FIG8, Path::new("permit.sol")).unwrap();
        assert_eq!(u.contracts.len(), 1);
        let fns: Vec<_> = u.functions().collect();
        assert_eq!(fns.len(), 1);
        let f = fns[0].1;
        assert_eq!(f.param_names().count(), 6);
        // entry node plus four body statements
        assert_eq!(1 + f.body.as_ref().unwrap().len(), 5);
    }

    #[test]
    fn spans_slice_back_to_leading_token() {
        let u = load(FIG8, Path::new("permit.sol")).unwrap();
        for (id, span) in &u.node_index {
            let text = &u.source[span.start..span.end];
            assert!(!text.is_empty(), "{id} has an empty span");
            let first = lexer::tokenize(text).unwrap();
            assert_eq!(first[0].start, 0, "{id}: {text:?}");
        }
    }

    #[test]
    fn env_atoms_from_exprs() {
        let u = parse_source(
            "contract A { function f() public { x = (msg.sender, block.chainid, address(this), tx.origin); } }",
            Path::new("a.sol"),
        )
        .unwrap();
        let body = u.contracts[0].functions[0].body.as_ref().unwrap();
        let StmtKind::Expr(e) = &body[0].kind else { panic!() };
        let mut atoms = Vec::new();
        e.walk(&mut |x| atoms.extend(EnvAtom::from_expr(x)));
        assert_eq!(
            atoms,
            vec![EnvAtom::MsgSender, EnvAtom::BlockChainId, EnvAtom::AddressThis, EnvAtom::TxOrigin]
        );
    }
}
