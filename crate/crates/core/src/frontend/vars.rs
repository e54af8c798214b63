//! Variable identities and per-function name resolution.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::ast::*;
use super::EnvAtom;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum VarId {
    /// Local variable (including named returns and inlined modifier
    /// parameters) of a qualified function.
    Local { function: String, name: String },
    Param { function: String, name: String },
    /// State variable; `contract` is the declaring contract, or the
    /// enclosing one when the declaration is not in the unit.
    State { contract: String, name: String },
    Env { atom: EnvAtom },
}

impl VarId {
    /// The identifier as written in source.
    pub fn name(&self) -> &str {
        match self {
            VarId::Local { name, .. } | VarId::Param { name, .. } | VarId::State { name, .. } => name,
            VarId::Env { atom } => atom.as_str(),
        }
    }

    pub fn is_env(&self) -> bool {
        matches!(self, VarId::Env { .. })
    }

    pub fn is_state(&self) -> bool {
        matches!(self, VarId::State { .. })
    }
}

impl fmt::Display for VarId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VarId::Local { function, name } | VarId::Param { function, name } => {
                write!(f, "{function}:{name}")
            }
            VarId::State { contract, name } => write!(f, "{contract}.{name}"),
            VarId::Env { atom } => f.write_str(atom.as_str()),
        }
    }
}

// Names that are never variables.
const GLOBALS: &[&str] = &[
    "abi", "msg", "block", "tx", "keccak256", "sha256", "ripemd160", "ecrecover", "require",
    "assert", "revert", "addmod", "mulmod", "selfdestruct", "blockhash", "gasleft", "type",
    "super", "this", "now", "bytes", "string", "payable",
];

/// Name resolution context for one function.
#[derive(Clone, Debug)]
pub struct Scope {
    pub function: String,
    pub contract: String,
    params: BTreeSet<String>,
    locals: BTreeSet<String>,
    /// Visible state variables and their declaring contract.
    state: BTreeMap<String, String>,
    /// Contract, library, struct, enum, function, modifier and event names.
    non_vars: BTreeSet<String>,
    types: BTreeMap<String, TypeName>,
}

impl Scope {
    pub fn for_function(unit: &AstUnit, f: &FunctionDef) -> Scope {
        let mut types = BTreeMap::new();
        let mut params = BTreeSet::new();
        for p in &f.params {
            if let Some(n) = &p.name {
                params.insert(n.clone());
                types.insert(n.clone(), p.ty.clone());
            }
        }
        let mut locals = BTreeSet::new();
        for p in &f.returns {
            if let Some(n) = &p.name {
                locals.insert(n.clone());
                types.entry(n.clone()).or_insert_with(|| p.ty.clone());
            }
        }
        if let Some(body) = &f.body {
            for s in body {
                s.walk(&mut |s| {
                    if let StmtKind::VarDecl { decls, .. } = &s.kind {
                        for d in decls.iter().flatten() {
                            locals.insert(d.name.clone());
                            types.entry(d.name.clone()).or_insert_with(|| d.ty.clone());
                        }
                    }
                });
            }
        }
        // Block-scoped declarations may shadow parameters; parameters win.
        locals.retain(|l| !params.contains(l));

        let mut state = BTreeMap::new();
        for c in visible_contracts(unit, &f.contract) {
            for v in &c.state_vars {
                state.entry(v.name.clone()).or_insert_with(|| c.name.clone());
                types.entry(v.name.clone()).or_insert_with(|| v.ty.clone());
            }
        }
        let mut non_vars = BTreeSet::new();
        for c in &unit.contracts {
            non_vars.insert(c.name.clone());
            non_vars.extend(c.structs.iter().map(|s| s.name.clone()));
            non_vars.extend(c.functions.iter().map(|f| f.name.clone()));
            non_vars.extend(c.modifiers.iter().map(|m| m.name.clone()));
        }
        Scope {
            function: f.qualified(),
            contract: f.contract.clone(),
            params,
            locals,
            state,
            non_vars,
            types,
        }
    }

    /// Declared type of a parameter, local or visible state variable.
    pub fn type_of(&self, name: &str) -> Option<&TypeName> {
        self.types.get(name)
    }

    /// Scope for state-variable initializers of a contract.
    pub fn for_contract(unit: &AstUnit, contract: &ContractDef) -> Scope {
        let shell = FunctionDef {
            id: contract.id,
            contract: contract.name.clone(),
            name: "<state>".into(),
            kind: FunctionKind::Function,
            params: Vec::new(),
            returns: Vec::new(),
            visibility: Visibility::Internal,
            mutability: None,
            modifiers: Vec::new(),
            is_virtual: false,
            body: None,
            inlined_modifiers: 0,
        };
        Scope::for_function(unit, &shell)
    }

    /// True for parameters, locals and state variables declared in view.
    pub fn is_declared(&self, name: &str) -> bool {
        self.params.contains(name) || self.locals.contains(name) || self.state.contains_key(name)
    }

    pub fn is_param(&self, name: &str) -> bool {
        self.params.contains(name)
    }

    pub fn params(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(String::as_str)
    }

    /// Resolves a bare identifier. Unknown identifiers that look like
    /// values are taken to be state variables declared out of view.
    pub fn resolve(&self, name: &str) -> Option<VarId> {
        if self.params.contains(name) {
            return Some(VarId::Param {
                function: self.function.clone(),
                name: name.to_string(),
            });
        }
        if self.locals.contains(name) {
            return Some(VarId::Local {
                function: self.function.clone(),
                name: name.to_string(),
            });
        }
        if let Some(c) = self.state.get(name) {
            return Some(VarId::State {
                contract: c.clone(),
                name: name.to_string(),
            });
        }
        if GLOBALS.contains(&name)
            || self.non_vars.contains(name)
            || super::parser::is_elementary_type(name)
            || name.starts_with(|c: char| c.is_ascii_uppercase()) && name.chars().any(|c| c.is_ascii_lowercase())
        {
            // Capitalized mixed-case names are types or libraries by convention.
            return None;
        }
        Some(VarId::State {
            contract: self.contract.clone(),
            name: name.to_string(),
        })
    }

    /// Variables read by an expression. Callee names are not variables, but
    /// the receiver of a member call is.
    pub fn free_vars(&self, e: &Expr) -> BTreeSet<VarId> {
        let mut out = BTreeSet::new();
        self.collect(e, &mut out);
        out
    }

    fn collect(&self, e: &Expr, out: &mut BTreeSet<VarId>) {
        if let Some(atom) = EnvAtom::from_expr(e) {
            out.insert(VarId::Env { atom });
            return;
        }
        match &e.kind {
            ExprKind::Ident(n) => {
                if n == "this" {
                    out.insert(VarId::Env {
                        atom: EnvAtom::AddressThis,
                    });
                } else if let Some(v) = self.resolve(n) {
                    out.insert(v);
                }
            }
            ExprKind::Call { callee, args, .. } => {
                match &callee.kind {
                    ExprKind::Ident(_) | ExprKind::TypeName(_) => {}
                    ExprKind::Member(base, _) => self.collect(base, out),
                    ExprKind::CallOptions(inner, opts) => {
                        if let ExprKind::Member(base, _) = &inner.kind {
                            self.collect(base, out);
                        }
                        for (_, o) in opts {
                            self.collect(o, out);
                        }
                    }
                    _ => self.collect(callee, out),
                }
                for a in args {
                    self.collect(a, out);
                }
            }
            _ => {
                for c in e.children() {
                    self.collect(c, out);
                }
            }
        }
    }
}

/// The contract itself followed by its bases in linearization order.
pub(crate) fn visible_contracts<'a>(unit: &'a AstUnit, contract: &str) -> Vec<&'a ContractDef> {
    let Some(c) = unit.contract(contract) else {
        return Vec::new();
    };
    if c.linearization.is_empty() {
        return vec![c];
    }
    c.linearization.iter().filter_map(|n| unit.contract(n)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::load;
    use std::path::Path;

    #[test]
    fn resolves_params_locals_state_and_atoms() {
        let u = load(
            r#"
            contract Base { mapping(address => uint) public nonces; }
            contract A is Base {
                bytes32 DOMAIN;
                function f(address owner, uint8 v) public returns (bytes32 out) {
                    bytes32 h = keccak256(abi.encode(DOMAIN, owner, nonces[owner], block.chainid, address(this)));
                    out = h;
                    Lib.g(h, v);
                }
            }"#,
            Path::new("a.sol"),
        )
        .unwrap();
        let (_, f) = u.function_by_qualified("A.f").unwrap();
        let scope = Scope::for_function(&u, f);
        let body = f.body.as_ref().unwrap();
        let StmtKind::VarDecl { init: Some(e), .. } = &body[0].kind else { panic!() };
        let names: Vec<String> = scope.free_vars(e).iter().map(|v| v.to_string()).collect();
        assert_eq!(
            names,
            vec!["A.f:owner", "A.DOMAIN", "Base.nonces", "block.chainid", "address(this)"]
        );
        let StmtKind::Expr(call) = &body[2].kind else { panic!() };
        let vars = scope.free_vars(call);
        let names: BTreeSet<&str> = vars.iter().map(|v| v.name()).collect();
        assert_eq!(names, BTreeSet::from(["h", "v"]));
    }
}
