//! C3 linearization, flattened function tables and modifier inlining.

use std::collections::{BTreeMap, BTreeSet};

use super::ast::*;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("cyclic inheritance: {}", cycle.join(" -> "))]
pub struct CycleError {
    pub cycle: Vec<String>,
}

/// Resolves inheritance for every contract. Running it on an already
/// resolved unit returns the unit unchanged.
pub fn resolve_inheritance(mut unit: AstUnit) -> Result<AstUnit, CycleError> {
    if unit.resolved {
        return Ok(unit);
    }
    let bases: BTreeMap<String, Vec<String>> = unit
        .contracts
        .iter()
        .map(|c| (c.name.clone(), c.bases.clone()))
        .collect();

    let mut lin: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for c in &unit.contracts {
        linearize(&c.name, &bases, &mut lin, &mut Vec::new())?;
    }
    for c in &mut unit.contracts {
        c.linearization = lin[&c.name].clone();
    }

    // Function tables: most-derived implementation per signature.
    let mut tables = Vec::new();
    for c in &unit.contracts {
        let mut table: Vec<ResolvedFunction> = Vec::new();
        let mut seen: BTreeMap<String, usize> = BTreeMap::new();
        for (depth, name) in c.linearization.iter().enumerate() {
            let Some(base) = unit.contract(name) else { continue };
            for f in &base.functions {
                if f.kind == FunctionKind::Constructor && depth > 0 {
                    continue;
                }
                let sig = f.signature();
                match seen.get(&sig) {
                    // A bodiless declaration is replaced by a base implementation.
                    Some(&i) => {
                        let existing = unit.function_by_id(table[i].function).map(|(_, f)| f.body.is_none());
                        if existing == Some(true) && f.body.is_some() {
                            table[i].defined_in = base.name.clone();
                            table[i].function = f.id;
                        }
                    }
                    None => {
                        seen.insert(sig.clone(), table.len());
                        table.push(ResolvedFunction {
                            signature: sig,
                            name: f.name.clone(),
                            defined_in: base.name.clone(),
                            function: f.id,
                        });
                    }
                }
            }
        }
        tables.push(table);
    }
    for (c, t) in unit.contracts.iter_mut().zip(tables) {
        c.function_table = t;
    }

    inline_modifiers(&mut unit);
    unit.resolved = true;
    Ok(unit)
}

fn linearize(
    name: &str,
    bases: &BTreeMap<String, Vec<String>>,
    memo: &mut BTreeMap<String, Vec<String>>,
    stack: &mut Vec<String>,
) -> Result<Vec<String>, CycleError> {
    if let Some(l) = memo.get(name) {
        return Ok(l.clone());
    }
    if let Some(pos) = stack.iter().position(|s| s == name) {
        let mut cycle = stack[pos..].to_vec();
        cycle.push(name.to_string());
        return Err(CycleError { cycle });
    }
    // Bases outside the unit cannot be resolved and are ignored.
    let Some(direct) = bases.get(name) else {
        return Ok(Vec::new());
    };
    stack.push(name.to_string());
    let direct: Vec<String> = direct.iter().filter(|b| bases.contains_key(*b)).cloned().collect();
    // Solidity lists bases from most base-like to most derived.
    let mut seqs: Vec<Vec<String>> = Vec::new();
    for b in direct.iter().rev() {
        seqs.push(linearize(b, bases, memo, stack)?);
    }
    seqs.push(direct.iter().rev().cloned().collect());
    stack.pop();

    let mut out = vec![name.to_string()];
    loop {
        seqs.retain(|s| !s.is_empty());
        if seqs.is_empty() {
            break;
        }
        let head = seqs
            .iter()
            .map(|s| &s[0])
            .find(|h| !seqs.iter().any(|s| s[1..].contains(h)))
            .cloned();
        let Some(head) = head else {
            // Inconsistent hierarchy: fall back to first-seen order.
            log::warn!("no C3 linearization for {name}; using depth-first order");
            for s in &seqs {
                for n in s {
                    if !out.contains(n) {
                        out.push(n.clone());
                    }
                }
            }
            break;
        };
        for s in &mut seqs {
            if s[0] == head {
                s.remove(0);
            }
        }
        out.push(head);
    }
    memo.insert(name.to_string(), out.clone());
    Ok(out)
}

fn inline_modifiers(unit: &mut AstUnit) {
    let mut next_id = unit.next_id;
    let mut new_spans: Vec<(NodeId, Span)> = Vec::new();
    let index = unit.node_index.clone();

    // Modifier definitions visible from each contract, most-derived first.
    let mut visible: BTreeMap<String, BTreeMap<String, ModifierDef>> = BTreeMap::new();
    for c in &unit.contracts {
        let mut mods = BTreeMap::new();
        for n in &c.linearization {
            if let Some(b) = unit.contract(n) {
                for m in &b.modifiers {
                    mods.entry(m.name.clone()).or_insert_with(|| m.clone());
                }
            }
        }
        visible.insert(c.name.clone(), mods);
    }

    for c in &mut unit.contracts {
        let mods = &visible[&c.name];
        for f in &mut c.functions {
            let Some(mut body) = f.body.take() else { continue };
            let mut count = 0;
            for inv in f.modifiers.iter().rev() {
                let Some(m) = mods.get(&inv.name) else { continue };
                let Some(mbody) = &m.body else { continue };
                let mut cloner = Cloner {
                    next_id: &mut next_id,
                    index: &index,
                    new_spans: &mut new_spans,
                    template: body,
                    used: false,
                };
                let mut stmts = Vec::new();
                for (p, arg) in m.params.iter().zip(&inv.args) {
                    let Some(name) = &p.name else { continue };
                    let id = cloner.fresh(inv.id);
                    stmts.push(Stmt {
                        id,
                        kind: StmtKind::VarDecl {
                            decls: vec![Some(VarDeclItem {
                                name: name.clone(),
                                ty: p.ty.clone(),
                            })],
                            init: Some(cloner.expr(arg)),
                        },
                    });
                }
                for s in mbody {
                    stmts.push(cloner.stmt(s));
                }
                if !cloner.used {
                    // A modifier without `_;` still keeps the body in view.
                    let id = cloner.fresh(inv.id);
                    let template = std::mem::take(&mut cloner.template);
                    stmts.push(Stmt {
                        id,
                        kind: StmtKind::Block(template),
                    });
                }
                body = stmts;
                count += 1;
            }
            f.inlined_modifiers = count;
            f.body = Some(body);
        }
    }
    for (id, span) in new_spans {
        unit.node_index.insert(id, span);
    }
    unit.next_id = next_id;
}

/// Deep copy with fresh node ids; copies keep the span of their original.
struct Cloner<'a> {
    next_id: &'a mut u32,
    index: &'a BTreeMap<NodeId, Span>,
    new_spans: &'a mut Vec<(NodeId, Span)>,
    /// Body substituted for the first `_;`; later ones get a fresh copy.
    template: Vec<Stmt>,
    used: bool,
}

impl Cloner<'_> {
    fn fresh(&mut self, like: NodeId) -> NodeId {
        let id = NodeId(*self.next_id);
        *self.next_id += 1;
        let span = self.index.get(&like).copied().or_else(|| {
            self.new_spans.iter().find(|(i, _)| *i == like).map(|(_, s)| *s)
        });
        if let Some(span) = span {
            self.new_spans.push((id, span));
        }
        id
    }

    fn stmt(&mut self, s: &Stmt) -> Stmt {
        let id = self.fresh(s.id);
        let kind = match &s.kind {
            StmtKind::Placeholder => {
                // The first substitution keeps the original ids.
                let body = if self.used {
                    let t = std::mem::take(&mut self.template);
                    let copy = t.iter().map(|x| self.stmt(x)).collect();
                    self.template = t;
                    copy
                } else {
                    self.used = true;
                    self.template.clone()
                };
                StmtKind::Block(body)
            }
            StmtKind::Block(b) => StmtKind::Block(b.iter().map(|x| self.stmt(x)).collect()),
            StmtKind::VarDecl { decls, init } => StmtKind::VarDecl {
                decls: decls.clone(),
                init: init.as_ref().map(|e| self.expr(e)),
            },
            StmtKind::Expr(e) => StmtKind::Expr(self.expr(e)),
            StmtKind::If { cond, then, els } => StmtKind::If {
                cond: self.expr(cond),
                then: Box::new(self.stmt(then)),
                els: els.as_ref().map(|e| Box::new(self.stmt(e))),
            },
            StmtKind::For { init, cond, step, body } => StmtKind::For {
                init: init.as_ref().map(|s| Box::new(self.stmt(s))),
                cond: cond.as_ref().map(|e| self.expr(e)),
                step: step.as_ref().map(|e| self.expr(e)),
                body: Box::new(self.stmt(body)),
            },
            StmtKind::While { cond, body, do_while } => StmtKind::While {
                cond: self.expr(cond),
                body: Box::new(self.stmt(body)),
                do_while: *do_while,
            },
            StmtKind::Return(e) => StmtKind::Return(e.as_ref().map(|e| self.expr(e))),
            StmtKind::Revert(a) => StmtKind::Revert(a.iter().map(|e| self.expr(e)).collect()),
            StmtKind::Emit(e) => StmtKind::Emit(self.expr(e)),
            other => other.clone(),
        };
        Stmt { id, kind }
    }

    fn expr(&mut self, e: &Expr) -> Expr {
        let id = self.fresh(e.id);
        let b = |c: &mut Self, x: &Expr| Box::new(c.expr(x));
        let kind = match &e.kind {
            ExprKind::Member(x, m) => ExprKind::Member(b(self, x), m.clone()),
            ExprKind::Index(x, i) => ExprKind::Index(b(self, x), i.as_ref().map(|i| b(self, i))),
            ExprKind::Call { callee, args, names } => ExprKind::Call {
                callee: b(self, callee),
                args: args.iter().map(|a| self.expr(a)).collect(),
                names: names.clone(),
            },
            ExprKind::CallOptions(x, opts) => ExprKind::CallOptions(
                b(self, x),
                opts.iter().map(|(n, o)| (n.clone(), self.expr(o))).collect(),
            ),
            ExprKind::Unary { op, prefix, operand } => ExprKind::Unary {
                op: op.clone(),
                prefix: *prefix,
                operand: b(self, operand),
            },
            ExprKind::Binary { op, lhs, rhs } => ExprKind::Binary {
                op: op.clone(),
                lhs: b(self, lhs),
                rhs: b(self, rhs),
            },
            ExprKind::Assign { op, lhs, rhs } => ExprKind::Assign {
                op: op.clone(),
                lhs: b(self, lhs),
                rhs: b(self, rhs),
            },
            ExprKind::Ternary(x, y, z) => ExprKind::Ternary(b(self, x), b(self, y), b(self, z)),
            ExprKind::Tuple(items) => {
                ExprKind::Tuple(items.iter().map(|i| i.as_ref().map(|i| self.expr(i))).collect())
            }
            ExprKind::Array(items) => ExprKind::Array(items.iter().map(|i| self.expr(i)).collect()),
            other => other.clone(),
        };
        Expr { id, kind }
    }
}

impl AstUnit {
    /// Looks up a callable function by name as seen from `contract`,
    /// preferring an overload with `argc` parameters.
    pub fn lookup_function(&self, contract: &str, name: &str, argc: usize) -> Option<&FunctionDef> {
        let c = self.contract(contract)?;
        let candidates: Vec<&FunctionDef> = if c.function_table.is_empty() {
            c.functions.iter().filter(|f| f.name == name).collect()
        } else {
            c.function_table
                .iter()
                .filter(|r| r.name == name)
                .filter_map(|r| self.function_by_id(r.function).map(|(_, f)| f))
                .collect()
        };
        let pick = candidates
            .iter()
            .find(|f| f.params.len() == argc && f.body.is_some())
            .or_else(|| candidates.iter().find(|f| f.body.is_some()))
            .or_else(|| candidates.first())
            .copied()?;
        if pick.body.is_some() {
            return Some(pick);
        }
        // Abstract declaration: use an implementation from a contract that
        // derives from this one.
        self.contracts
            .iter()
            .filter(|d| d.linearization.iter().any(|n| n == contract))
            .flat_map(|d| d.functions.iter())
            .find(|f| f.name == name && f.body.is_some())
            .or(Some(pick))
    }

    /// Names of all contracts that are `contract` or derive from it.
    pub fn derived_from(&self, contract: &str) -> BTreeSet<String> {
        self.contracts
            .iter()
            .filter(|d| d.name == contract || d.linearization.iter().any(|n| n == contract))
            .map(|d| d.name.clone())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::parse_source;
    use std::path::Path;

    fn resolved(src: &str) -> AstUnit {
        resolve_inheritance(parse_source(src, Path::new("t.sol")).unwrap()).unwrap()
    }

    fn table_names(u: &AstUnit, c: &str) -> Vec<String> {
        u.contract(c)
            .unwrap()
            .function_table
            .iter()
            .map(|r| format!("{}.{}", r.defined_in, r.name))
            .collect()
    }

    #[test]
    fn single_inheritance_exposes_base_function() {
        let u = resolved("contract A { function permit() public {} } contract B is A { }");
        assert_eq!(table_names(&u, "B"), vec!["A.permit"]);
    }

    #[test]
    fn diamond_picks_most_derived_override() {
        let u = resolved(
            "contract A { function f() public virtual {} function g() public {} }
             contract B is A { function f() public virtual override {} }
             contract C is A { }
             contract D is B, C { }",
        );
        assert_eq!(u.contract("D").unwrap().linearization, vec!["D", "C", "B", "A"]);
        assert_eq!(table_names(&u, "D"), vec!["B.f", "A.g"]);
        assert_eq!(table_names(&u, "A").len(), table_names(&u, "D").len());
    }

    #[test]
    fn c3_matches_solidity_order() {
        // Solidity docs example: contract Final is Base1, Base2 => Final, Base2, Base1
        let u = resolved("contract X {} contract Base1 is X {} contract Base2 is X {} contract Final is Base1, Base2 {}");
        assert_eq!(u.contract("Final").unwrap().linearization, vec!["Final", "Base2", "Base1", "X"]);
    }

    #[test]
    fn cycles_are_errors() {
        let u = parse_source("contract A is B {} contract B is A {}", Path::new("t.sol")).unwrap();
        let err = resolve_inheritance(u).unwrap_err();
        assert_eq!(err.cycle.first(), err.cycle.last());
    }

    #[test]
    fn missing_bases_are_ignored() {
        let u = resolved("contract A is Ownable, EIP712 { function f() public {} }");
        assert_eq!(u.contract("A").unwrap().linearization, vec!["A"]);
    }

    #[test]
    fn modifiers_are_inlined_with_fresh_ids() {
        let u = resolved(
            "contract A { address owner;
               modifier only(address who) { require(msg.sender == who); _; }
               function f() public only(owner) { x = 1; } }",
        );
        let f = u.contract("A").unwrap().function("f").unwrap();
        assert_eq!(f.inlined_modifiers, 1);
        let body = f.body.as_ref().unwrap();
        assert!(matches!(&body[0].kind, StmtKind::VarDecl { decls, .. } if decls[0].as_ref().unwrap().name == "who"));
        assert!(matches!(&body[1].kind, StmtKind::Expr(e) if e.is_call_to("require")));
        assert!(matches!(&body[2].kind, StmtKind::Block(b) if b.len() == 1));
        let mut ids = BTreeSet::new();
        for s in body {
            s.walk(&mut |s| assert!(ids.insert(s.id), "duplicate {}", s.id));
        }
        for id in &ids {
            assert!(u.node_index.contains_key(id));
        }
        assert_eq!(u.text(body[1].id), "require(msg.sender == who);");
    }

    #[test]
    fn resolution_is_idempotent() {
        let u = resolved(
            "contract A { modifier m() { _; } function f() public m {} } contract B is A {}",
        );
        let again = resolve_inheritance(u.clone()).unwrap();
        assert_eq!(
            serde_json::to_string(&u).unwrap(),
            serde_json::to_string(&again).unwrap()
        );
    }

    #[test]
    fn eip712_helper_visible_in_derived_table() {
        let u = resolved(
            "abstract contract EIP712 {
                 function _domainSeparatorV4() internal view returns (bytes32) { return keccak256(abi.encode(block.chainid, address(this))); }
                 function _hashTypedDataV4(bytes32 s) internal view returns (bytes32) { return keccak256(abi.encodePacked(hex\"1901\", _domainSeparatorV4(), s)); }
             }
             contract Token is EIP712 { function permit() public {} }",
        );
        let names = table_names(&u, "Token");
        assert!(names.contains(&"EIP712._domainSeparatorV4".to_string()));
        assert!(names.contains(&"EIP712._hashTypedDataV4".to_string()));
    }
}
