//! Canonicalization of signature-recovery call sites.

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use super::ast::*;
use super::vars::{visible_contracts, Scope, VarId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SinkKind {
    BareEcrecover,
    LibraryRecover,
    LibraryTryRecover,
    AssemblyOpaque,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExprRef {
    pub node: NodeId,
    pub free_variables: BTreeSet<VarId>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SinkSite {
    /// The call expression, or the assembly statement for opaque sites.
    pub id: NodeId,
    /// Innermost statement containing the call.
    pub stmt: NodeId,
    pub contract: String,
    pub enclosing_function: String,
    pub function_id: NodeId,
    pub kind: SinkKind,
    pub span: Span,
    pub hash_arg: ExprRef,
    pub v_arg: Option<ExprRef>,
    pub r_arg: Option<ExprRef>,
    pub s_arg: Option<ExprRef>,
    /// Combined signature bytes for library calls.
    pub sig_arg: Option<ExprRef>,
    /// Library name for `LibraryRecover`/`LibraryTryRecover`.
    pub library: Option<String>,
    /// True when the library's source is part of the unit.
    pub library_in_unit: bool,
    /// Index among several `ecrecover` tokens in one assembly block.
    pub occurrence: u32,
}

impl SinkSite {
    pub fn is_library(&self) -> bool {
        matches!(self.kind, SinkKind::LibraryRecover | SinkKind::LibraryTryRecover)
    }
}

fn is_ecdsa_library(name: &str) -> bool {
    name.contains("ECDSA")
}

/// Every signature-recovery site in function bodies, in source order.
pub fn locate_sinks(unit: &AstUnit) -> Vec<SinkSite> {
    let mut out = Vec::new();
    // Modifier bodies inlined into several functions would otherwise be
    // reported once per use.
    let mut seen: HashSet<(usize, u32)> = HashSet::new();
    for c in &unit.contracts {
        let ecdsa_using: Vec<String> = visible_contracts(unit, &c.name)
            .iter()
            .flat_map(|b| b.using_for.iter())
            .filter(|u| is_ecdsa_library(&u.library))
            .map(|u| u.library.clone())
            .collect();
        for f in &c.functions {
            let Some(body) = &f.body else { continue };
            let scope = Scope::for_function(unit, f);
            let cx = Cx {
                unit,
                contract: c,
                f,
                scope: &scope,
                ecdsa_using: &ecdsa_using,
            };
            for s in body {
                s.walk(&mut |s| cx.visit_stmt(s, &mut out, &mut seen));
            }
        }
    }
    out.sort_by_key(|s| (s.span.start, s.occurrence));
    out
}

struct Cx<'a> {
    unit: &'a AstUnit,
    contract: &'a ContractDef,
    f: &'a FunctionDef,
    scope: &'a Scope,
    ecdsa_using: &'a [String],
}

impl Cx<'_> {
    fn eref(&self, e: &Expr) -> ExprRef {
        ExprRef {
            node: e.id,
            free_variables: self.scope.free_vars(e),
        }
    }

    fn site(&self, id: NodeId, stmt: NodeId, kind: SinkKind, hash_arg: ExprRef) -> SinkSite {
        SinkSite {
            id,
            stmt,
            contract: self.contract.name.clone(),
            enclosing_function: self.f.qualified(),
            function_id: self.f.id,
            kind,
            span: self.unit.span(id).unwrap_or(Span {
                start: 0,
                end: 0,
                line: 0,
                column: 0,
            }),
            hash_arg,
            v_arg: None,
            r_arg: None,
            s_arg: None,
            sig_arg: None,
            library: None,
            library_in_unit: false,
            occurrence: 0,
        }
    }

    fn visit_stmt(&self, s: &Stmt, out: &mut Vec<SinkSite>, seen: &mut HashSet<(usize, u32)>) {
        let mut push = |site: SinkSite, out: &mut Vec<SinkSite>| {
            if seen.insert((site.span.start, site.occurrence)) {
                out.push(site);
            }
        };
        if let StmtKind::Opaque(block) = &s.kind {
            if block.assembly {
                let reads: BTreeSet<VarId> = block
                    .reads
                    .iter()
                    .filter_map(|n| self.scope.resolve(n))
                    .chain(block.atoms.iter().map(|&atom| VarId::Env { atom }))
                    .collect();
                for k in 0..block.ecrecover_tokens {
                    let mut site = self.site(
                        s.id,
                        s.id,
                        SinkKind::AssemblyOpaque,
                        ExprRef {
                            node: s.id,
                            free_variables: reads.clone(),
                        },
                    );
                    site.occurrence = k;
                    push(site, out);
                }
            }
            return;
        }
        for e in s.own_exprs() {
            e.walk(&mut |e| {
                if let Some(site) = self.recognize(s.id, e) {
                    push(site, out);
                }
            });
        }
    }

    fn recognize(&self, stmt: NodeId, e: &Expr) -> Option<SinkSite> {
        let ExprKind::Call { callee, args, .. } = &e.kind else {
            return None;
        };
        match &callee.kind {
            ExprKind::Ident(n) if n == "ecrecover" => {
                let hash = args.first().map_or(
                    ExprRef {
                        node: e.id,
                        free_variables: BTreeSet::new(),
                    },
                    |a| self.eref(a),
                );
                let mut site = self.site(e.id, stmt, SinkKind::BareEcrecover, hash);
                site.v_arg = args.get(1).map(|a| self.eref(a));
                site.r_arg = args.get(2).map(|a| self.eref(a));
                site.s_arg = args.get(3).map(|a| self.eref(a));
                Some(site)
            }
            ExprKind::Member(base, m) if m == "recover" || m == "tryRecover" => {
                let kind = if m == "recover" {
                    SinkKind::LibraryRecover
                } else {
                    SinkKind::LibraryTryRecover
                };
                // `ECDSA.recover(hash, ...)`
                if let Some(lib) = base.ident().filter(|l| is_ecdsa_library(l) && !self.scope.is_declared(l)) {
                    let hash = self.eref(args.first()?);
                    let mut site = self.site(e.id, stmt, kind, hash);
                    self.library_args(&mut site, &args[1..]);
                    site.library_in_unit = self.unit.contract(lib).is_some();
                    site.library = Some(lib.to_string());
                    return Some(site);
                }
                // `using ECDSA for bytes32; hash.recover(sig)`
                let lib = self.ecdsa_using.first()?;
                let mut site = self.site(e.id, stmt, kind, self.eref(base));
                self.library_args(&mut site, args);
                site.library_in_unit = self.unit.contract(lib).is_some();
                site.library = Some(lib.clone());
                Some(site)
            }
            _ => None,
        }
    }

    fn library_args(&self, site: &mut SinkSite, rest: &[Expr]) {
        match rest.len() {
            1 => site.sig_arg = Some(self.eref(&rest[0])),
            // compact form (r, vs)
            2 => {
                site.r_arg = Some(self.eref(&rest[0]));
                site.sig_arg = Some(self.eref(&rest[1]));
            }
            3 => {
                site.v_arg = Some(self.eref(&rest[0]));
                site.r_arg = Some(self.eref(&rest[1]));
                site.s_arg = Some(self.eref(&rest[2]));
            }
            _ => {}
        }
    }
}

/// OpenZeppelin release recorded in the source, from either the
/// `// OpenZeppelin Contracts (last updated v4.7.3)` banner or an
/// `@openzeppelin/contracts@4.5.0` import path.
pub fn detect_library_version(source: &str) -> Option<(u32, u32, u32)> {
    let mut found = None;
    for (marker, prefix) in [("OpenZeppelin Contracts", "v"), ("@openzeppelin/contracts@", "")] {
        for (pos, _) in source.match_indices(marker) {
            let tail = &source[pos + marker.len()..];
            let line = tail.lines().next().unwrap_or("");
            let start = if prefix.is_empty() {
                Some(0)
            } else {
                line.find('v').filter(|i| {
                    line[i + 1..].starts_with(|c: char| c.is_ascii_digit())
                }).map(|i| i + 1)
            };
            let Some(start) = start else { continue };
            let ver: String = line[start..]
                .chars()
                .take_while(|c| c.is_ascii_digit() || *c == '.')
                .collect();
            let mut parts = ver.split('.').map(|p| p.parse::<u32>().ok());
            if let (Some(Some(a)), Some(Some(b))) = (parts.next(), parts.next()) {
                let c = parts.next().flatten().unwrap_or(0);
                found = Some(found.map_or((a, b, c), |f: (u32, u32, u32)| f.min((a, b, c))));
            }
        }
    }
    found
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::{lexer, load};
    use std::path::Path;

    fn sinks(src: &str) -> Vec<SinkSite> {
        locate_sinks(&load(src, Path::new("t.sol")).unwrap())
    }

    #[test]
    fn no_signature_code_no_sinks() {
        assert!(sinks("contract A { function f() public { x = 1; } }").is_empty());
    }

    #[test]
    fn bare_ecrecover_in_permit_snippet() {
        let s = sinks(
            "function permit(owner, spender, amount, v, r, s) {
                bytes32 digest = keccak256(abi.encodePacked(x));
                require(owner == ecrecover(digest, v, r, s));
            }",
        );
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].kind, SinkKind::BareEcrecover);
        let names: Vec<&str> = s[0].hash_arg.free_variables.iter().map(|v| v.name()).collect();
        assert!(names.contains(&"digest"));
        assert!(s[0].v_arg.is_some() && s[0].r_arg.is_some() && s[0].s_arg.is_some());
    }

    #[test]
    fn library_forms() {
        let s = sinks(
            "contract A {
                using ECDSA for bytes32;
                function f(bytes32 h, bytes memory sig) public {
                    address a = ECDSA.recover(h, sig);
                    (address b, ) = ECDSA.tryRecover(h, sig);
                    address c = h.recover(sig);
                }
            }",
        );
        let kinds: Vec<SinkKind> = s.iter().map(|s| s.kind).collect();
        assert_eq!(
            kinds,
            vec![SinkKind::LibraryRecover, SinkKind::LibraryTryRecover, SinkKind::LibraryRecover]
        );
        assert!(s.iter().all(|s| s.sig_arg.is_some() && s.library.as_deref() == Some("ECDSA")));
        assert!(s.iter().all(|s| !s.library_in_unit));
    }

    #[test]
    fn assembly_occurrence() {
        let s = sinks(
            "contract A { function f(bytes32 h) public { assembly { let ok := staticcall(gas(), 1, 0, 128, 0, 32) } address ecrecover_ok; assembly { /* ecrecover */ } } }",
        );
        // identifiers inside assembly only count as tokens; comments do not
        assert!(s.is_empty());
    }

    #[test]
    fn comment_only_mentions_are_ignored() {
        let src = "contract A { // ecrecover(h, v, r, s)\n function f() public {} }";
        assert!(sinks(src).is_empty());
        let toks = lexer::tokenize(src).unwrap();
        assert!(toks.iter().all(|t| t.text != "ecrecover"));
    }

    #[test]
    fn oz_version_banner() {
        assert_eq!(
            detect_library_version("// OpenZeppelin Contracts (last updated v4.7.0) (utils/cryptography/ECDSA.sol)"),
            Some((4, 7, 0))
        );
        assert_eq!(
            detect_library_version("import \"@openzeppelin/contracts@4.9.3/utils/cryptography/ECDSA.sol\";"),
            Some((4, 9, 3))
        );
        assert_eq!(detect_library_version("contract A {}"), None);
    }
}
