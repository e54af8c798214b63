//! Lookup tables from node ids back into the AST.

use std::collections::BTreeMap;

use crate::frontend::{
    AstUnit, ContractDef, Expr, FunctionDef, NodeId, Scope, StateVarDecl, Stmt, StmtKind,
};

pub struct AstIndex<'u> {
    pub unit: &'u AstUnit,
    stmts: BTreeMap<NodeId, (&'u FunctionDef, &'u Stmt)>,
    exprs: BTreeMap<NodeId, &'u Expr>,
    functions: BTreeMap<NodeId, (&'u ContractDef, &'u FunctionDef)>,
    by_name: BTreeMap<String, NodeId>,
    state: BTreeMap<NodeId, (&'u ContractDef, &'u StateVarDecl)>,
    scopes: BTreeMap<NodeId, Scope>,
}

impl<'u> AstIndex<'u> {
    pub fn new(unit: &'u AstUnit) -> AstIndex<'u> {
        let mut ix = AstIndex {
            unit,
            stmts: BTreeMap::new(),
            exprs: BTreeMap::new(),
            functions: BTreeMap::new(),
            by_name: BTreeMap::new(),
            state: BTreeMap::new(),
            scopes: BTreeMap::new(),
        };
        for c in &unit.contracts {
            let cscope = Scope::for_contract(unit, c);
            for v in &c.state_vars {
                ix.state.insert(v.id, (c, v));
                if let Some(e) = &v.init {
                    e.walk(&mut |x| {
                        ix.exprs.insert(x.id, x);
                    });
                }
                ix.scopes.insert(v.id, cscope.clone());
            }
            for f in &c.functions {
                ix.functions.insert(f.id, (c, f));
                ix.by_name.entry(f.qualified()).or_insert(f.id);
                ix.scopes.insert(f.id, Scope::for_function(unit, f));
                for s in f.body.iter().flatten() {
                    s.walk(&mut |s| {
                        ix.stmts.insert(s.id, (f, s));
                        for e in s.own_exprs() {
                            e.walk(&mut |x| {
                                ix.exprs.insert(x.id, x);
                            });
                        }
                    });
                }
            }
        }
        ix
    }

    pub fn stmt(&self, id: NodeId) -> Option<&'u Stmt> {
        self.stmts.get(&id).map(|(_, s)| *s)
    }

    pub fn expr(&self, id: NodeId) -> Option<&'u Expr> {
        self.exprs.get(&id).copied()
    }

    pub fn function(&self, id: NodeId) -> Option<&'u FunctionDef> {
        self.functions.get(&id).map(|(_, f)| *f)
    }

    pub fn contract_of_function(&self, id: NodeId) -> Option<&'u ContractDef> {
        self.functions.get(&id).map(|(c, _)| *c)
    }

    pub fn function_named(&self, qualified: &str) -> Option<&'u FunctionDef> {
        self.by_name.get(qualified).and_then(|id| self.function(*id))
    }

    pub fn functions(&self) -> impl Iterator<Item = &'u FunctionDef> + '_ {
        self.functions.values().map(|(_, f)| *f)
    }

    pub fn state_decl(&self, id: NodeId) -> Option<&'u StateVarDecl> {
        self.state.get(&id).map(|(_, v)| *v)
    }

    /// Function containing a statement, or the function itself for entry ids.
    pub fn owner(&self, id: NodeId) -> Option<&'u FunctionDef> {
        self.stmts.get(&id).map(|(f, _)| *f).or_else(|| self.function(id))
    }

    /// Name resolution scope for a statement, entry or state declaration.
    pub fn scope(&self, id: NodeId) -> Option<&Scope> {
        if let Some(s) = self.scopes.get(&id) {
            return Some(s);
        }
        self.scopes.get(&self.owner(id)?.id)
    }

    /// Expressions evaluated by a node: a statement's own expressions or a
    /// state variable initializer.
    pub fn node_exprs(&self, id: NodeId) -> Vec<&'u Expr> {
        if let Some(s) = self.stmt(id) {
            return match &s.kind {
                StmtKind::VarDecl { init, .. } => init.iter().collect(),
                _ => s.own_exprs(),
            };
        }
        if let Some(v) = self.state_decl(id) {
            return v.init.iter().collect();
        }
        Vec::new()
    }
}
