use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

/// Identifier of an AST node, unique within one [`AstUnit`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// Byte range plus the 1-based line/column of its first character.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub line: u32,
    pub column: u32,
}

#[derive(Clone, Debug, Serialize)]
pub struct AstUnit {
    pub source_path: PathBuf,
    #[serde(skip)]
    pub source: String,
    pub pragma: Option<String>,
    pub imports: Vec<String>,
    pub contracts: Vec<ContractDef>,
    pub node_index: BTreeMap<NodeId, Span>,
    pub resolved: bool,
    #[serde(skip)]
    pub(crate) next_id: u32,
}

impl AstUnit {
    pub fn span(&self, id: NodeId) -> Option<Span> {
        self.node_index.get(&id).copied()
    }

    pub fn text(&self, id: NodeId) -> &str {
        self.span(id).map_or("", |s| &self.source[s.start..s.end])
    }

    pub fn contract(&self, name: &str) -> Option<&ContractDef> {
        self.contracts.iter().find(|c| c.name == name)
    }

    /// Every function definition in the unit, paired with its contract.
    pub fn functions(&self) -> impl Iterator<Item = (&ContractDef, &FunctionDef)> {
        self.contracts
            .iter()
            .flat_map(|c| c.functions.iter().map(move |f| (c, f)))
    }

    pub fn function_by_id(&self, id: NodeId) -> Option<(&ContractDef, &FunctionDef)> {
        self.functions().find(|(_, f)| f.id == id)
    }

    pub fn function_by_qualified(&self, qualified: &str) -> Option<(&ContractDef, &FunctionDef)> {
        let (c, f) = qualified.split_once('.')?;
        let contract = self.contract(c)?;
        contract.functions.iter().find(|x| x.name == f).map(|x| (contract, x))
    }

    /// Every statement of every function body, keyed by id.
    pub fn statements(&self) -> BTreeMap<NodeId, (&FunctionDef, &Stmt)> {
        let mut out = BTreeMap::new();
        for (_, f) in self.functions() {
            for s in f.body.iter().flatten() {
                s.walk(&mut |s| {
                    out.insert(s.id, (f, s));
                });
            }
        }
        out
    }

    pub fn state_var(&self, id: NodeId) -> Option<(&ContractDef, &StateVarDecl)> {
        self.contracts
            .iter()
            .flat_map(|c| c.state_vars.iter().map(move |v| (c, v)))
            .find(|(_, v)| v.id == id)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContractKind {
    Contract,
    Interface,
    Library,
}

#[derive(Clone, Debug, Serialize)]
pub struct ContractDef {
    pub id: NodeId,
    pub name: String,
    pub kind: ContractKind,
    pub is_abstract: bool,
    /// Container for file-level free functions; has no header of its own.
    pub synthetic: bool,
    pub bases: Vec<String>,
    /// Span of `contract X is Y {` up to and including the brace.
    pub header: Span,
    pub state_vars: Vec<StateVarDecl>,
    pub functions: Vec<FunctionDef>,
    pub modifiers: Vec<ModifierDef>,
    pub structs: Vec<StructDef>,
    pub using_for: Vec<UsingFor>,
    /// Members kept only for rendering (structs, enums, events, errors, using).
    pub aux_members: Vec<Span>,
    /// Most-derived first; empty until inheritance is resolved.
    pub linearization: Vec<String>,
    pub function_table: Vec<ResolvedFunction>,
}

impl ContractDef {
    pub fn function(&self, name: &str) -> Option<&FunctionDef> {
        self.functions.iter().find(|f| f.name == name)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ResolvedFunction {
    pub signature: String,
    pub name: String,
    pub defined_in: String,
    pub function: NodeId,
}

#[derive(Clone, Debug, Serialize)]
pub struct UsingFor {
    pub library: String,
    pub target: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct StructDef {
    pub name: String,
    pub fields: Vec<(String, TypeName)>,
}

#[derive(Clone, Debug, Serialize)]
pub struct StateVarDecl {
    pub id: NodeId,
    pub name: String,
    pub ty: TypeName,
    pub constant: bool,
    pub immutable: bool,
    pub visibility: Visibility,
    pub init: Option<Expr>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Visibility {
    Public,
    External,
    Internal,
    Private,
}

impl Visibility {
    pub fn is_entry(self) -> bool {
        matches!(self, Visibility::Public | Visibility::External)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FunctionKind {
    Function,
    Constructor,
    Fallback,
    Receive,
}

#[derive(Clone, Debug, Serialize)]
pub struct Param {
    pub name: Option<String>,
    pub ty: TypeName,
}

#[derive(Clone, Debug, Serialize)]
pub struct ModifierInvocation {
    pub id: NodeId,
    pub name: String,
    pub args: Vec<Expr>,
}

#[derive(Clone, Debug, Serialize)]
pub struct FunctionDef {
    pub id: NodeId,
    pub contract: String,
    pub name: String,
    pub kind: FunctionKind,
    pub params: Vec<Param>,
    pub returns: Vec<Param>,
    pub visibility: Visibility,
    pub mutability: Option<String>,
    pub modifiers: Vec<ModifierInvocation>,
    pub is_virtual: bool,
    /// `None` for declarations without a body (interfaces, abstract).
    pub body: Option<Vec<Stmt>>,
    /// Number of modifier layers already inlined into `body`.
    pub inlined_modifiers: usize,
}

impl FunctionDef {
    pub fn qualified(&self) -> String {
        format!("{}.{}", self.contract, self.name)
    }

    pub fn signature(&self) -> String {
        let tys: Vec<String> = self.params.iter().map(|p| p.ty.to_string()).collect();
        format!("{}({})", self.name, tys.join(","))
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().filter_map(|p| p.name.as_deref())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ModifierDef {
    pub id: NodeId,
    pub name: String,
    pub params: Vec<Param>,
    pub body: Option<Vec<Stmt>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum TypeName {
    Elementary(String),
    UserDefined(String),
    Mapping(Box<TypeName>, Box<TypeName>),
    Array(Box<TypeName>, Option<String>),
    Function,
}

impl TypeName {
    pub fn is_address(&self) -> bool {
        matches!(self, TypeName::Elementary(s) if s == "address" || s == "address payable")
    }
}

impl fmt::Display for TypeName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TypeName::Elementary(s) | TypeName::UserDefined(s) => f.write_str(s),
            TypeName::Mapping(k, v) => write!(f, "mapping({k}=>{v})"),
            TypeName::Array(t, n) => write!(f, "{t}[{}]", n.as_deref().unwrap_or("")),
            TypeName::Function => f.write_str("function"),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct VarDeclItem {
    pub name: String,
    pub ty: TypeName,
}

#[derive(Clone, Debug, Serialize)]
pub struct Stmt {
    pub id: NodeId,
    pub kind: StmtKind,
}

#[derive(Clone, Debug, Serialize)]
pub enum StmtKind {
    Block(Vec<Stmt>),
    VarDecl {
        decls: Vec<Option<VarDeclItem>>,
        init: Option<Expr>,
    },
    Expr(Expr),
    If {
        cond: Expr,
        then: Box<Stmt>,
        els: Option<Box<Stmt>>,
    },
    For {
        init: Option<Box<Stmt>>,
        cond: Option<Expr>,
        step: Option<Expr>,
        body: Box<Stmt>,
    },
    While {
        cond: Expr,
        body: Box<Stmt>,
        do_while: bool,
    },
    Return(Option<Expr>),
    Revert(Vec<Expr>),
    Emit(Expr),
    Break,
    Continue,
    /// The `_;` placeholder of a modifier body.
    Placeholder,
    /// Inline assembly or an unsupported construct. Reads and writes are the
    /// Solidity-level identifiers it touches.
    Opaque(OpaqueBlock),
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct OpaqueBlock {
    pub assembly: bool,
    pub reads: BTreeSet<String>,
    pub writes: BTreeSet<String>,
    /// Environment atoms read through assembly builtins such as `chainid()`.
    pub atoms: BTreeSet<super::EnvAtom>,
    /// Occurrences of the `ecrecover` identifier inside the block.
    pub ecrecover_tokens: u32,
}

impl Stmt {
    /// Direct child statements (not expressions).
    pub fn children(&self) -> Vec<&Stmt> {
        match &self.kind {
            StmtKind::Block(b) => b.iter().collect(),
            StmtKind::If { then, els, .. } => {
                let mut v = vec![then.as_ref()];
                if let Some(e) = els {
                    v.push(e);
                }
                v
            }
            StmtKind::For { init, body, .. } => {
                let mut v: Vec<&Stmt> = init.iter().map(|b| b.as_ref()).collect();
                v.push(body);
                v
            }
            StmtKind::While { body, .. } => vec![body],
            _ => Vec::new(),
        }
    }

    /// Pre-order walk over this statement and all nested statements.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a Stmt)) {
        f(self);
        for c in self.children() {
            c.walk(f);
        }
    }

    /// Expressions owned by this statement node itself (conditions for
    /// compound statements, not the nested bodies).
    pub fn own_exprs(&self) -> Vec<&Expr> {
        match &self.kind {
            StmtKind::VarDecl { init, .. } => init.iter().collect(),
            StmtKind::Expr(e) | StmtKind::Emit(e) => vec![e],
            StmtKind::If { cond, .. } | StmtKind::While { cond, .. } => vec![cond],
            StmtKind::For { cond, step, .. } => cond.iter().chain(step.iter()).collect(),
            StmtKind::Return(e) => e.iter().collect(),
            StmtKind::Revert(args) => args.iter().collect(),
            _ => Vec::new(),
        }
    }

    /// True when every execution of this statement leaves the function
    /// (revert, return, or a require(false)-like construct).
    pub fn always_exits(&self) -> bool {
        match &self.kind {
            StmtKind::Return(_) | StmtKind::Revert(_) => true,
            StmtKind::Block(b) => b.iter().any(Stmt::always_exits),
            StmtKind::If { then, els: Some(e), .. } => then.always_exits() && e.always_exits(),
            StmtKind::Expr(e) => e.is_call_to("revert"),
            _ => false,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Expr {
    pub id: NodeId,
    pub kind: ExprKind,
}

#[derive(Clone, Debug, Serialize)]
pub enum ExprKind {
    Ident(String),
    /// Numeric literal; `value` is the decimal value when it is an integer.
    Number {
        raw: String,
        value: Option<String>,
    },
    Bool(bool),
    Str(String),
    Member(Box<Expr>, String),
    Index(Box<Expr>, Option<Box<Expr>>),
    Call {
        callee: Box<Expr>,
        args: Vec<Expr>,
        /// Present for `f({a: x, b: y})` calls.
        names: Option<Vec<String>>,
    },
    /// `target{value: x, gas: y}`
    CallOptions(Box<Expr>, Vec<(String, Expr)>),
    Unary {
        op: String,
        prefix: bool,
        operand: Box<Expr>,
    },
    Binary {
        op: String,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
    Assign {
        op: String,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
    Ternary(Box<Expr>, Box<Expr>, Box<Expr>),
    Tuple(Vec<Option<Expr>>),
    Array(Vec<Expr>),
    TypeName(TypeName),
    New(TypeName),
}

impl Expr {
    pub fn ident(&self) -> Option<&str> {
        match &self.kind {
            ExprKind::Ident(s) => Some(s),
            _ => None,
        }
    }

    pub fn is_call_to(&self, name: &str) -> bool {
        matches!(&self.kind, ExprKind::Call { callee, .. } if callee.ident() == Some(name))
    }

    /// Name of the called function for `f(..)` or `x.f(..)`.
    pub fn callee_name(&self) -> Option<&str> {
        match &self.kind {
            ExprKind::Call { callee, .. } => match &callee.kind {
                ExprKind::Ident(n) => Some(n),
                ExprKind::Member(_, n) => Some(n),
                ExprKind::CallOptions(inner, _) => match &inner.kind {
                    ExprKind::Member(_, n) => Some(n),
                    ExprKind::Ident(n) => Some(n),
                    _ => None,
                },
                _ => None,
            },
            _ => None,
        }
    }

    pub fn children(&self) -> Vec<&Expr> {
        match &self.kind {
            ExprKind::Member(b, _) => vec![b],
            ExprKind::Index(b, i) => {
                let mut v = vec![b.as_ref()];
                if let Some(i) = i {
                    v.push(i);
                }
                v
            }
            ExprKind::Call { callee, args, .. } => {
                let mut v = vec![callee.as_ref()];
                v.extend(args.iter());
                v
            }
            ExprKind::CallOptions(t, opts) => {
                let mut v = vec![t.as_ref()];
                v.extend(opts.iter().map(|(_, e)| e));
                v
            }
            ExprKind::Unary { operand, .. } => vec![operand],
            ExprKind::Binary { lhs, rhs, .. } | ExprKind::Assign { lhs, rhs, .. } => {
                vec![lhs, rhs]
            }
            ExprKind::Ternary(a, b, c) => vec![a, b, c],
            ExprKind::Tuple(items) => items.iter().flatten().collect(),
            ExprKind::Array(items) => items.iter().collect(),
            _ => Vec::new(),
        }
    }

    /// Pre-order walk.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a Expr)) {
        f(self);
        for c in self.children() {
            c.walk(f);
        }
    }

    /// Strip type conversions like `uint256(x)` and parentheses-as-tuple.
    pub fn peel(&self) -> &Expr {
        match &self.kind {
            ExprKind::Call { callee, args, .. }
                if args.len() == 1 && matches!(callee.kind, ExprKind::TypeName(_)) =>
            {
                args[0].peel()
            }
            ExprKind::Tuple(items) if items.len() == 1 && items[0].is_some() => {
                items[0].as_ref().map_or(self, Expr::peel)
            }
            _ => self,
        }
    }

    /// Base variable name of an lvalue-ish expression: `m[k].f` → `m`.
    pub fn base_ident(&self) -> Option<&str> {
        match &self.kind {
            ExprKind::Ident(n) => Some(n),
            ExprKind::Index(b, _) | ExprKind::Member(b, _) => b.base_ident(),
            _ => None,
        }
    }

    /// Key expressions along an index chain, outermost mapping first.
    pub fn index_keys(&self) -> Vec<&Expr> {
        let mut keys = Vec::new();
        let mut cur = self;
        loop {
            match &cur.kind {
                ExprKind::Index(b, k) => {
                    if let Some(k) = k {
                        keys.push(k.as_ref());
                    }
                    cur = b;
                }
                ExprKind::Member(b, _) => cur = b,
                _ => break,
            }
        }
        keys.reverse();
        keys
    }
}
