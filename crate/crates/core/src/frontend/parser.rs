//! Recursive-descent parser for the supported Solidity subset.
//!
//! Unsupported statements are not errors: the parser rewinds, consumes up to
//! the next `;` (or balanced block) and records an opaque node with the
//! identifiers it reads and writes. Only lexical errors and unbalanced
//! structure are reported as [`ParseError`].

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use num_bigint::BigUint;
use num_traits::{Num, One, Zero};

use super::ast::*;
use super::lexer::{tokenize, Token, TokenKind};
use super::{EnvAtom, ParseError};

type PResult<T> = Result<T, ParseError>;

pub fn parse(source: &str, path: &Path) -> PResult<AstUnit> {
    let toks = tokenize(source)?;
    let mut p = Parser {
        toks,
        pos: 0,
        src: source,
        next_id: 0,
        index: BTreeMap::new(),
    };
    let mut unit = AstUnit {
        source_path: path.to_path_buf(),
        source: source.to_string(),
        pragma: None,
        imports: Vec::new(),
        contracts: Vec::new(),
        node_index: BTreeMap::new(),
        resolved: false,
        next_id: 0,
    };
    while !p.at_eof() {
        let t = p.peek().clone();
        if t.is("pragma") {
            let start = p.pos;
            p.skip_to_semicolon()?;
            let text = p.text_between(start + 1, p.pos - 1);
            if text.starts_with("solidity") {
                unit.pragma = Some(text.trim_start_matches("solidity").trim().to_string());
            }
        } else if t.is("import") {
            let start = p.pos;
            p.skip_to_semicolon()?;
            unit.imports.push(p.text_between(start + 1, p.pos - 1));
        } else if t.is("contract") || t.is("interface") || t.is("library") || t.is("abstract") {
            let c = p.contract()?;
            unit.contracts.push(c);
        } else if t.is(";") {
            p.bump();
        } else if t.is("function") && p.peek_at(1).kind == TokenKind::Ident {
            let f = p.function(FILE_LEVEL)?;
            match unit.contracts.iter_mut().find(|c| c.synthetic) {
                Some(c) => c.functions.push(f),
                None => {
                    let id = NodeId(p.next_id);
                    p.next_id += 1;
                    let span = p.index[&f.id];
                    p.index.insert(id, span);
                    unit.contracts.push(ContractDef {
                        id,
                        name: FILE_LEVEL.to_string(),
                        kind: ContractKind::Contract,
                        is_abstract: false,
                        synthetic: true,
                        bases: Vec::new(),
                        header: Span { end: span.start, ..span },
                        state_vars: Vec::new(),
                        functions: vec![f],
                        modifiers: Vec::new(),
                        structs: Vec::new(),
                        using_for: Vec::new(),
                        aux_members: Vec::new(),
                        linearization: Vec::new(),
                        function_table: Vec::new(),
                    });
                }
            }
        } else {
            // Free functions, file-level constants, structs, errors, events.
            p.skip_member()?;
        }
    }
    unit.node_index = p.index;
    unit.next_id = p.next_id;
    Ok(unit)
}

/// Name of the synthetic contract holding file-level functions.
pub const FILE_LEVEL: &str = "<file>";

const UNITS: &[(&str, u64)] = &[
    ("wei", 1),
    ("gwei", 1_000_000_000),
    ("ether", 1_000_000_000_000_000_000),
    ("seconds", 1),
    ("minutes", 60),
    ("hours", 3600),
    ("days", 86_400),
    ("weeks", 604_800),
    ("years", 31_536_000),
];

const ASSIGN_OPS: &[&str] = &[
    "=", "+=", "-=", "*=", "/=", "%=", "|=", "&=", "^=", "<<=", ">>=", ">>>=",
];

const YUL_KEYWORDS: &[&str] = &[
    "let", "if", "switch", "case", "default", "for", "break", "continue", "leave", "function",
    "true", "false",
];

const YUL_BUILTINS: &[&str] = &[
    "stop", "add", "sub", "mul", "div", "sdiv", "mod", "smod", "exp", "not", "lt", "gt", "slt",
    "sgt", "eq", "iszero", "and", "or", "xor", "byte", "shl", "shr", "sar", "addmod", "mulmod",
    "signextend", "keccak256", "pc", "pop", "mload", "mstore", "mstore8", "sload", "sstore",
    "tload", "tstore", "msize", "gas", "address", "balance", "selfbalance", "caller",
    "callvalue", "calldataload", "calldatasize", "calldatacopy", "codesize", "codecopy",
    "extcodesize", "extcodecopy", "returndatasize", "returndatacopy", "mcopy", "extcodehash",
    "create", "create2", "call", "callcode", "delegatecall", "staticcall", "return", "revert",
    "selfdestruct", "invalid", "log0", "log1", "log2", "log3", "log4", "chainid", "basefee",
    "blobbasefee", "blobhash", "origin", "gasprice", "blockhash", "coinbase", "timestamp",
    "number", "difficulty", "prevrandao", "gaslimit", "datasize", "dataoffset", "datacopy",
    "memoryguard", "verbatim",
];

pub(crate) fn is_elementary_type(s: &str) -> bool {
    let num_suffix = |rest: &str| rest.is_empty() || rest.chars().all(|c| c.is_ascii_digit());
    matches!(s, "address" | "bool" | "string" | "bytes" | "byte" | "fixed" | "ufixed")
        || s.strip_prefix("uint").is_some_and(num_suffix)
        || s.strip_prefix("int").is_some_and(num_suffix)
        || s.strip_prefix("bytes").is_some_and(|r| !r.is_empty() && num_suffix(r))
}

struct Parser<'s> {
    toks: Vec<Token>,
    pos: usize,
    src: &'s str,
    next_id: u32,
    index: BTreeMap<NodeId, Span>,
}

impl<'s> Parser<'s> {
    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn peek_at(&self, n: usize) -> &Token {
        &self.toks[(self.pos + n).min(self.toks.len() - 1)]
    }

    fn at_eof(&self) -> bool {
        self.peek().kind == TokenKind::Eof
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn eat(&mut self, text: &str) -> bool {
        if self.peek().is(text) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn err<T>(&self, msg: impl Into<String>) -> PResult<T> {
        let t = self.peek();
        let found = if t.kind == TokenKind::Eof { "end of file".to_string() } else { format!("`{}`", t.text) };
        Err(ParseError::new(format!("{}, found {found}", msg.into()), t.line, t.column))
    }

    fn expect(&mut self, text: &str) -> PResult<Token> {
        if self.peek().is(text) {
            Ok(self.bump())
        } else {
            self.err(format!("expected `{text}`"))
        }
    }

    fn ident(&mut self) -> PResult<String> {
        if self.peek().kind == TokenKind::Ident {
            Ok(self.bump().text)
        } else {
            self.err("expected identifier")
        }
    }

    /// Span covering tokens `start..self.pos`.
    fn span_from(&self, start: usize) -> Span {
        let first = &self.toks[start];
        let last = &self.toks[self.pos.saturating_sub(1).max(start)];
        Span {
            start: first.start,
            end: last.end.max(first.start),
            line: first.line,
            column: first.column,
        }
    }

    fn node(&mut self, start: usize) -> NodeId {
        let id = NodeId(self.next_id);
        self.next_id += 1;
        let span = self.span_from(start);
        self.index.insert(id, span);
        id
    }

    fn text_between(&self, from: usize, to: usize) -> String {
        if from >= to {
            return String::new();
        }
        self.src[self.toks[from].start..self.toks[to - 1].end].to_string()
    }

    fn skip_to_semicolon(&mut self) -> PResult<()> {
        while !self.peek().is(";") {
            if self.at_eof() {
                return self.err("expected `;`");
            }
            self.bump();
        }
        self.bump();
        Ok(())
    }

    /// Skips a balanced `{ ... }` group starting at the current `{`.
    fn skip_braces(&mut self) -> PResult<()> {
        self.expect("{")?;
        let mut depth = 1;
        while depth > 0 {
            if self.at_eof() {
                return self.err("unbalanced `{`");
            }
            let t = self.bump();
            if t.is("{") {
                depth += 1;
            } else if t.is("}") {
                depth -= 1;
            }
        }
        Ok(())
    }

    fn skip_parens(&mut self) -> PResult<()> {
        self.expect("(")?;
        let mut depth = 1;
        while depth > 0 {
            if self.at_eof() {
                return self.err("unbalanced `(`");
            }
            let t = self.bump();
            if t.is("(") {
                depth += 1;
            } else if t.is(")") {
                depth -= 1;
            }
        }
        Ok(())
    }

    /// Skips one member: up to `;` or a balanced block, whichever closes first.
    fn skip_member(&mut self) -> PResult<()> {
        let mut paren = 0i32;
        loop {
            if self.at_eof() {
                return self.err("unexpected end of file");
            }
            let t = self.peek().clone();
            if t.is("(") {
                paren += 1;
            } else if t.is(")") {
                paren -= 1;
            } else if paren == 0 && t.is(";") {
                self.bump();
                return Ok(());
            } else if paren == 0 && t.is("{") {
                self.skip_braces()?;
                if self.peek().is(";") {
                    self.bump();
                }
                return Ok(());
            } else if t.is("}") && paren == 0 {
                return self.err("unexpected `}`");
            }
            self.bump();
        }
    }

    // ----------------------------------------------------------------------
    // Contracts

    fn contract(&mut self) -> PResult<ContractDef> {
        let start = self.pos;
        let is_abstract = self.eat("abstract");
        let kw = self.ident()?;
        let kind = match kw.as_str() {
            "contract" => ContractKind::Contract,
            "interface" => ContractKind::Interface,
            "library" => ContractKind::Library,
            _ => return self.err("expected contract, interface or library"),
        };
        let name = self.ident()?;
        let mut bases = Vec::new();
        if self.eat("is") {
            loop {
                let mut b = self.ident()?;
                while self.eat(".") {
                    b = self.ident()?;
                }
                if self.peek().is("(") {
                    self.skip_parens()?;
                }
                bases.push(b);
                if !self.eat(",") {
                    break;
                }
            }
        }
        self.expect("{")?;
        let header = self.span_from(start);
        let id = self.node(start);
        let mut c = ContractDef {
            id,
            name,
            kind,
            is_abstract,
            synthetic: false,
            bases,
            header,
            state_vars: Vec::new(),
            functions: Vec::new(),
            modifiers: Vec::new(),
            structs: Vec::new(),
            using_for: Vec::new(),
            aux_members: Vec::new(),
            linearization: Vec::new(),
            function_table: Vec::new(),
        };
        while !self.peek().is("}") {
            if self.at_eof() {
                return self.err("unterminated contract body");
            }
            self.member(&mut c)?;
        }
        self.bump();
        if let Some(s) = self.index.get_mut(&id) {
            // The contract node spans the whole definition.
            s.end = self.toks[self.pos - 1].end;
        }
        Ok(c)
    }

    fn member(&mut self, c: &mut ContractDef) -> PResult<()> {
        let t = self.peek().clone();
        let start = self.pos;
        match t.text.as_str() {
            "function" | "constructor" | "fallback" | "receive" if t.kind == TokenKind::Ident => {
                // `function` can also start a function-typed state variable.
                if t.is("function") && self.peek_at(1).is("(") {
                    self.skip_member()?;
                    c.aux_members.push(self.span_from(start));
                    return Ok(());
                }
                let f = self.function(&c.name)?;
                c.functions.push(f);
            }
            "modifier" => {
                let m = self.modifier()?;
                c.modifiers.push(m);
            }
            "struct" => {
                self.bump();
                let name = self.ident()?;
                self.expect("{")?;
                let mut fields = Vec::new();
                while !self.eat("}") {
                    let ty = self.type_name()?;
                    let fname = self.ident()?;
                    self.expect(";")?;
                    fields.push((fname, ty));
                }
                c.structs.push(StructDef { name, fields });
                c.aux_members.push(self.span_from(start));
            }
            "using" => {
                self.bump();
                let mut libs = Vec::new();
                if self.peek().is("{") {
                    self.skip_braces()?;
                } else {
                    let mut l = self.ident()?;
                    while self.eat(".") {
                        l = self.ident()?;
                    }
                    libs.push(l);
                }
                let target = if self.eat("for") {
                    if self.eat("*") {
                        None
                    } else {
                        Some(self.type_name()?.to_string())
                    }
                } else {
                    None
                };
                self.eat("global");
                self.expect(";")?;
                for library in libs {
                    c.using_for.push(UsingFor {
                        library,
                        target: target.clone(),
                    });
                }
                c.aux_members.push(self.span_from(start));
            }
            "enum" | "event" | "error" | "type" if t.kind == TokenKind::Ident => {
                self.skip_member()?;
                c.aux_members.push(self.span_from(start));
            }
            _ => {
                let save = self.pos;
                match self.state_var(&c.name) {
                    Ok(v) => c.state_vars.push(v),
                    Err(e) => {
                        self.pos = save;
                        log::debug!("skipping unsupported member at {}:{}: {}", e.line, e.column, e.message);
                        self.skip_member()?;
                        c.aux_members.push(self.span_from(start));
                    }
                }
            }
        }
        Ok(())
    }

    fn state_var(&mut self, _contract: &str) -> PResult<StateVarDecl> {
        let start = self.pos;
        let ty = self.type_name()?;
        let mut constant = false;
        let mut immutable = false;
        let mut visibility = Visibility::Internal;
        loop {
            let t = self.peek().text.clone();
            match t.as_str() {
                "public" => visibility = Visibility::Public,
                "private" => visibility = Visibility::Private,
                "internal" => visibility = Visibility::Internal,
                "constant" => constant = true,
                "immutable" => immutable = true,
                "transient" => {}
                "override" => {
                    self.bump();
                    if self.peek().is("(") {
                        self.skip_parens()?;
                    }
                    continue;
                }
                _ => break,
            }
            self.bump();
        }
        let name = self.ident()?;
        let init = if self.eat("=") { Some(self.expr()?) } else { None };
        self.expect(";")?;
        let id = self.node(start);
        Ok(StateVarDecl {
            id,
            name,
            ty,
            constant,
            immutable,
            visibility,
            init,
        })
    }

    fn params(&mut self) -> PResult<Vec<Param>> {
        self.expect("(")?;
        let mut out = Vec::new();
        while !self.eat(")") {
            let ty = self.type_name()?;
            while matches!(
                self.peek().text.as_str(),
                "memory" | "storage" | "calldata" | "indexed" | "payable"
            ) && self.peek().kind == TokenKind::Ident
            {
                self.bump();
            }
            let name = if self.peek().kind == TokenKind::Ident {
                Some(self.ident()?)
            } else {
                None
            };
            // Untyped parameter lists as found in audit snippets: `f(owner, v)`.
            let (name, ty) = match (name, ty) {
                (None, TypeName::UserDefined(n))
                    if !n.contains('.') && n.starts_with(|c: char| c.is_ascii_lowercase() || c == '_') =>
                {
                    (Some(n), TypeName::UserDefined(String::new()))
                }
                (name, ty) => (name, ty),
            };
            out.push(Param { name, ty });
            if !self.eat(",") {
                self.expect(")")?;
                break;
            }
        }
        Ok(out)
    }

    fn function(&mut self, contract: &str) -> PResult<FunctionDef> {
        let start = self.pos;
        let kw = self.ident()?;
        let (kind, name) = match kw.as_str() {
            "constructor" => (FunctionKind::Constructor, "constructor".to_string()),
            "fallback" => (FunctionKind::Fallback, "fallback".to_string()),
            "receive" => (FunctionKind::Receive, "receive".to_string()),
            _ => {
                // `function()` old-style fallback
                if self.peek().is("(") {
                    (FunctionKind::Fallback, "fallback".to_string())
                } else {
                    (FunctionKind::Function, self.ident()?)
                }
            }
        };
        let params = self.params()?;
        let mut visibility = None;
        let mut mutability = None;
        let mut returns = Vec::new();
        let mut modifiers = Vec::new();
        let mut is_virtual = false;
        loop {
            let t = self.peek().clone();
            if t.kind != TokenKind::Ident {
                break;
            }
            match t.text.as_str() {
                "public" => visibility = Some(Visibility::Public),
                "external" => visibility = Some(Visibility::External),
                "internal" => visibility = Some(Visibility::Internal),
                "private" => visibility = Some(Visibility::Private),
                "view" | "pure" | "payable" | "constant" => mutability = Some(t.text.clone()),
                "virtual" => is_virtual = true,
                "override" => {
                    self.bump();
                    if self.peek().is("(") {
                        self.skip_parens()?;
                    }
                    continue;
                }
                "returns" => {
                    self.bump();
                    returns = self.params()?;
                    continue;
                }
                _ => {
                    let mstart = self.pos;
                    let mut mname = self.ident()?;
                    while self.eat(".") {
                        mname = self.ident()?;
                    }
                    let args = if self.peek().is("(") {
                        self.call_args()?.0
                    } else {
                        Vec::new()
                    };
                    let id = self.node(mstart);
                    modifiers.push(ModifierInvocation { id, name: mname, args });
                    continue;
                }
            }
            self.bump();
        }
        let body = if self.eat(";") { None } else { Some(self.block_body()?) };
        let id = self.node(start);
        let visibility = visibility.unwrap_or(match kind {
            FunctionKind::Function => Visibility::Public,
            _ => Visibility::External,
        });
        Ok(FunctionDef {
            id,
            contract: contract.to_string(),
            name,
            kind,
            params,
            returns,
            visibility,
            mutability,
            modifiers,
            is_virtual,
            body,
            inlined_modifiers: 0,
        })
    }

    fn modifier(&mut self) -> PResult<ModifierDef> {
        let start = self.pos;
        self.expect("modifier")?;
        let name = self.ident()?;
        let params = if self.peek().is("(") { self.params()? } else { Vec::new() };
        while self.peek().is("virtual") || self.peek().is("override") {
            self.bump();
            if self.peek().is("(") {
                self.skip_parens()?;
            }
        }
        let body = if self.eat(";") { None } else { Some(self.block_body()?) };
        let id = self.node(start);
        Ok(ModifierDef { id, name, params, body })
    }

    // ----------------------------------------------------------------------
    // Types

    fn type_name(&mut self) -> PResult<TypeName> {
        let t = self.peek().clone();
        if t.kind != TokenKind::Ident {
            return self.err("expected type name");
        }
        let mut ty = if t.is("mapping") {
            self.bump();
            self.expect("(")?;
            let k = self.type_name()?;
            if self.peek().kind == TokenKind::Ident {
                self.bump();
            }
            self.expect("=>")?;
            let v = self.type_name()?;
            if self.peek().kind == TokenKind::Ident {
                self.bump();
            }
            self.expect(")")?;
            TypeName::Mapping(Box::new(k), Box::new(v))
        } else if t.is("function") {
            self.bump();
            self.skip_parens()?;
            while matches!(
                self.peek().text.as_str(),
                "internal" | "external" | "view" | "pure" | "payable" | "returns"
            ) {
                if self.bump().is("returns") {
                    self.skip_parens()?;
                }
            }
            TypeName::Function
        } else if is_elementary_type(&t.text) {
            self.bump();
            if t.is("address") && self.peek().is("payable") {
                self.bump();
            }
            TypeName::Elementary(t.text)
        } else {
            let mut name = self.ident()?;
            while self.peek().is(".") && self.peek_at(1).kind == TokenKind::Ident {
                self.bump();
                name.push('.');
                name.push_str(&self.bump().text);
            }
            TypeName::UserDefined(name)
        };
        while self.peek().is("[") {
            self.bump();
            let start = self.pos;
            while !self.peek().is("]") {
                if self.at_eof() {
                    return self.err("expected `]`");
                }
                self.bump();
            }
            let len = (self.pos > start).then(|| self.text_between(start, self.pos));
            self.bump();
            ty = TypeName::Array(Box::new(ty), len);
        }
        Ok(ty)
    }

    // ----------------------------------------------------------------------
    // Statements

    fn block_body(&mut self) -> PResult<Vec<Stmt>> {
        self.expect("{")?;
        let mut out = Vec::new();
        while !self.peek().is("}") {
            if self.at_eof() {
                return self.err("expected `}`");
            }
            out.push(self.statement()?);
        }
        self.bump();
        Ok(out)
    }

    fn statement(&mut self) -> PResult<Stmt> {
        let save = self.pos;
        let save_id = self.next_id;
        match self.statement_inner() {
            Ok(s) => Ok(s),
            Err(e) => {
                // Roll back ids handed out during the failed attempt.
                self.pos = save;
                self.index.retain(|k, _| k.0 < save_id);
                self.next_id = save_id;
                log::debug!("opaque statement at {}:{}: {}", e.line, e.column, e.message);
                self.opaque_statement(e)
            }
        }
    }

    fn opaque_statement(&mut self, cause: ParseError) -> PResult<Stmt> {
        let start = self.pos;
        let mut depth = 0i32;
        loop {
            let t = self.peek().clone();
            if t.kind == TokenKind::Eof {
                return Err(cause);
            }
            if t.is("{") || t.is("(") || t.is("[") {
                depth += 1;
            } else if t.is("}") || t.is(")") || t.is("]") {
                if depth == 0 {
                    break;
                }
                depth -= 1;
                if depth == 0 && t.is("}") {
                    self.bump();
                    if self.peek().is(";") {
                        self.bump();
                    }
                    // A block-shaped construct (try/catch etc.) ends here
                    // unless it continues with another clause.
                    if !self.peek().is("catch") && !self.peek().is("else") {
                        break;
                    }
                    continue;
                }
            } else if depth == 0 && t.is(";") {
                self.bump();
                break;
            }
            self.bump();
        }
        if self.pos == start {
            return Err(cause);
        }
        let block = self.scan_identifiers(start, self.pos, false);
        let id = self.node(start);
        Ok(Stmt {
            id,
            kind: StmtKind::Opaque(block),
        })
    }

    /// Collects reads/writes over a token range. For assembly, Yul keywords
    /// and builtins are excluded and builtins that expose environment values
    /// are mapped to atoms.
    fn scan_identifiers(&self, from: usize, to: usize, assembly: bool) -> OpaqueBlock {
        let mut block = OpaqueBlock {
            assembly,
            ..OpaqueBlock::default()
        };
        let mut locals = BTreeSet::new();
        let mut lhs_positions = BTreeSet::new();
        let assign = if assembly { ":=" } else { "=" };
        for i in from..to {
            let t = &self.toks[i];
            if t.is("let") || t.is("function") {
                let mut j = i + 1;
                while j < to && self.toks[j].kind == TokenKind::Ident {
                    locals.insert(self.toks[j].text.clone());
                    if !self.toks.get(j + 1).is_some_and(|t| t.is(",")) {
                        break;
                    }
                    j += 2;
                }
            }
            if t.is(assign) || (!assembly && ASSIGN_OPS.contains(&t.text.as_str()) && t.kind == TokenKind::Punct) {
                // Walk back over `a, b, c` (or `a.b[c]` heads in Solidity).
                let mut j = i;
                while j > from {
                    let prev = &self.toks[j - 1];
                    if prev.kind == TokenKind::Ident {
                        lhs_positions.insert(j - 1);
                        if j >= from + 2 && self.toks[j - 2].is(",") {
                            j -= 2;
                            continue;
                        }
                    }
                    break;
                }
            }
        }
        for i in from..to {
            let t = &self.toks[i];
            if t.kind != TokenKind::Ident {
                continue;
            }
            if t.text == "ecrecover" {
                block.ecrecover_tokens += 1;
            }
            // member name after a dot: `x.slot`, `msg.sender`
            if i > from && self.toks[i - 1].is(".") {
                if let Some(atom) = EnvAtom::from_member(&self.toks[i - 2].text, &t.text) {
                    block.reads.remove(&self.toks[i - 2].text);
                    block.atoms.insert(atom);
                }
                continue;
            }
            let is_call = self.toks.get(i + 1).is_some_and(|n| n.is("("));
            if assembly {
                if YUL_KEYWORDS.contains(&t.text.as_str()) || locals.contains(&t.text) {
                    continue;
                }
                if is_call {
                    if let Some(atom) = EnvAtom::from_yul_builtin(&t.text) {
                        block.atoms.insert(atom);
                    }
                    if YUL_BUILTINS.contains(&t.text.as_str()) {
                        continue;
                    }
                }
            } else if is_call || is_elementary_type(&t.text) {
                if t.text == "address" && self.toks.get(i + 2).is_some_and(|n| n.is("this")) {
                    block.atoms.insert(EnvAtom::AddressThis);
                }
                continue;
            }
            if t.text == "this" {
                block.atoms.insert(EnvAtom::AddressThis);
                continue;
            }
            if lhs_positions.contains(&i) {
                block.writes.insert(t.text.clone());
                if !assembly && !self.toks.get(i + 1).is_some_and(|n| n.is("=")) {
                    // compound assignment also reads
                    block.reads.insert(t.text.clone());
                }
            } else {
                block.reads.insert(t.text.clone());
            }
        }
        block
    }

    fn statement_inner(&mut self) -> PResult<Stmt> {
        let start = self.pos;
        let t = self.peek().clone();
        let kind = if t.is("{") {
            StmtKind::Block(self.block_body()?)
        } else if t.kind != TokenKind::Ident {
            if t.is("(") {
                if let Some(k) = self.try_tuple_decl()? {
                    k
                } else {
                    self.expr_statement()?
                }
            } else {
                self.expr_statement()?
            }
        } else {
            match t.text.as_str() {
                "if" => {
                    self.bump();
                    self.expect("(")?;
                    let cond = self.expr()?;
                    self.expect(")")?;
                    let then = Box::new(self.statement()?);
                    let els = if self.eat("else") { Some(Box::new(self.statement()?)) } else { None };
                    StmtKind::If { cond, then, els }
                }
                "for" => {
                    self.bump();
                    self.expect("(")?;
                    let init = if self.eat(";") { None } else { Some(Box::new(self.simple_statement()?)) };
                    let cond = if self.peek().is(";") { None } else { Some(self.expr()?) };
                    self.expect(";")?;
                    let step = if self.peek().is(")") { None } else { Some(self.expr()?) };
                    self.expect(")")?;
                    let body = Box::new(self.statement()?);
                    StmtKind::For { init, cond, step, body }
                }
                "while" => {
                    self.bump();
                    self.expect("(")?;
                    let cond = self.expr()?;
                    self.expect(")")?;
                    let body = Box::new(self.statement()?);
                    StmtKind::While { cond, body, do_while: false }
                }
                "do" => {
                    self.bump();
                    let body = Box::new(self.statement()?);
                    self.expect("while")?;
                    self.expect("(")?;
                    let cond = self.expr()?;
                    self.expect(")")?;
                    self.expect(";")?;
                    StmtKind::While { cond, body, do_while: true }
                }
                "return" => {
                    self.bump();
                    let e = if self.peek().is(";") { None } else { Some(self.expr()?) };
                    self.expect(";")?;
                    StmtKind::Return(e)
                }
                "emit" => {
                    self.bump();
                    let e = self.expr()?;
                    self.expect(";")?;
                    StmtKind::Emit(e)
                }
                "revert" if !self.peek_at(1).is("=") => {
                    self.bump();
                    let args = if self.peek().is("(") {
                        self.call_args()?.0
                    } else {
                        let e = self.expr()?;
                        match e.kind {
                            ExprKind::Call { args, .. } => args,
                            _ => Vec::new(),
                        }
                    };
                    self.expect(";")?;
                    StmtKind::Revert(args)
                }
                "throw" => {
                    self.bump();
                    self.expect(";")?;
                    StmtKind::Revert(Vec::new())
                }
                "break" => {
                    self.bump();
                    self.expect(";")?;
                    StmtKind::Break
                }
                "continue" => {
                    self.bump();
                    self.expect(";")?;
                    StmtKind::Continue
                }
                "_" if self.peek_at(1).is(";") => {
                    self.bump();
                    self.bump();
                    StmtKind::Placeholder
                }
                "unchecked" if self.peek_at(1).is("{") => {
                    self.bump();
                    StmtKind::Block(self.block_body()?)
                }
                "assembly" => {
                    self.bump();
                    if self.peek().kind == TokenKind::Str {
                        self.bump();
                    }
                    if self.peek().is("(") {
                        self.skip_parens()?;
                    }
                    let body_start = self.pos;
                    self.skip_braces()?;
                    let block = self.scan_identifiers(body_start + 1, self.pos - 1, true);
                    StmtKind::Opaque(block)
                }
                "try" => return self.err("try/catch is outside the supported subset"),
                _ => self.simple_statement_kind()?,
            }
        };
        let id = self.node(start);
        Ok(Stmt { id, kind })
    }

    /// Declaration or expression statement, including the trailing `;`.
    fn simple_statement(&mut self) -> PResult<Stmt> {
        let start = self.pos;
        let kind = if self.peek().is("(") {
            match self.try_tuple_decl()? {
                Some(k) => k,
                None => self.expr_statement()?,
            }
        } else {
            self.simple_statement_kind()?
        };
        let id = self.node(start);
        Ok(Stmt { id, kind })
    }

    fn simple_statement_kind(&mut self) -> PResult<StmtKind> {
        if let Some(k) = self.try_var_decl()? {
            return Ok(k);
        }
        self.expr_statement()
    }

    fn expr_statement(&mut self) -> PResult<StmtKind> {
        let e = self.expr()?;
        self.expect(";")?;
        Ok(StmtKind::Expr(e))
    }

    fn try_var_decl(&mut self) -> PResult<Option<StmtKind>> {
        let save = self.pos;
        let save_id = self.next_id;
        if self.peek().is("var") {
            return self.err("`var` declarations are outside the supported subset");
        }
        let attempt = (|| -> PResult<Option<VarDeclItem>> {
            let ty = self.type_name()?;
            while matches!(self.peek().text.as_str(), "memory" | "storage" | "calldata") {
                self.bump();
            }
            if self.peek().kind != TokenKind::Ident {
                return Ok(None);
            }
            let name = self.ident()?;
            if !(self.peek().is("=") || self.peek().is(";")) {
                return Ok(None);
            }
            Ok(Some(VarDeclItem { name, ty }))
        })();
        match attempt {
            Ok(Some(item)) => {
                let init = if self.eat("=") { Some(self.expr()?) } else { None };
                self.expect(";")?;
                Ok(Some(StmtKind::VarDecl {
                    decls: vec![Some(item)],
                    init,
                }))
            }
            _ => {
                self.pos = save;
                self.index.retain(|k, _| k.0 < save_id);
                self.next_id = save_id;
                Ok(None)
            }
        }
    }

    /// `(uint a, , bytes32 b) = expr;`
    fn try_tuple_decl(&mut self) -> PResult<Option<StmtKind>> {
        let save = self.pos;
        let save_id = self.next_id;
        let attempt = (|| -> PResult<Vec<Option<VarDeclItem>>> {
            self.expect("(")?;
            let mut decls = Vec::new();
            let mut any = false;
            loop {
                if self.peek().is(",") {
                    self.bump();
                    decls.push(None);
                    continue;
                }
                if self.eat(")") {
                    break;
                }
                let ty = self.type_name()?;
                while matches!(self.peek().text.as_str(), "memory" | "storage" | "calldata") {
                    self.bump();
                }
                let name = self.ident()?;
                decls.push(Some(VarDeclItem { name, ty }));
                any = true;
                if !self.eat(",") {
                    self.expect(")")?;
                    break;
                }
                if self.peek().is(")") {
                    decls.push(None);
                }
            }
            if !any || !self.peek().is("=") {
                return self.err("not a tuple declaration");
            }
            Ok(decls)
        })();
        match attempt {
            Ok(decls) => {
                self.expect("=")?;
                let init = Some(self.expr()?);
                self.expect(";")?;
                Ok(Some(StmtKind::VarDecl { decls, init }))
            }
            Err(_) => {
                self.pos = save;
                self.index.retain(|k, _| k.0 < save_id);
                self.next_id = save_id;
                Ok(None)
            }
        }
    }

    // ----------------------------------------------------------------------
    // Expressions

    fn expr(&mut self) -> PResult<Expr> {
        let start = self.pos;
        let lhs = self.ternary()?;
        let t = self.peek().clone();
        if t.kind == TokenKind::Punct && ASSIGN_OPS.contains(&t.text.as_str()) {
            self.bump();
            let rhs = self.expr()?;
            let id = self.node(start);
            return Ok(Expr {
                id,
                kind: ExprKind::Assign {
                    op: t.text,
                    lhs: Box::new(lhs),
                    rhs: Box::new(rhs),
                },
            });
        }
        Ok(lhs)
    }

    fn ternary(&mut self) -> PResult<Expr> {
        let start = self.pos;
        let c = self.binary(1)?;
        if self.eat("?") {
            let a = self.expr()?;
            self.expect(":")?;
            let b = self.expr()?;
            let id = self.node(start);
            return Ok(Expr {
                id,
                kind: ExprKind::Ternary(Box::new(c), Box::new(a), Box::new(b)),
            });
        }
        Ok(c)
    }

    fn binop_prec(t: &Token) -> Option<(u8, bool)> {
        if t.kind != TokenKind::Punct {
            return None;
        }
        Some(match t.text.as_str() {
            "||" => (1, false),
            "&&" => (2, false),
            "==" | "!=" => (3, false),
            "<" | ">" | "<=" | ">=" => (4, false),
            "|" => (5, false),
            "^" => (6, false),
            "&" => (7, false),
            "<<" | ">>" | ">>>" => (8, false),
            "+" | "-" => (9, false),
            "*" | "/" | "%" => (10, false),
            "**" => (11, true),
            _ => return None,
        })
    }

    fn binary(&mut self, min: u8) -> PResult<Expr> {
        let start = self.pos;
        let mut lhs = self.unary()?;
        while let Some((prec, right)) = Self::binop_prec(self.peek()) {
            if prec < min {
                break;
            }
            let op = self.bump().text;
            let rhs = self.binary(if right { prec } else { prec + 1 })?;
            let id = self.node(start);
            lhs = Expr {
                id,
                kind: ExprKind::Binary {
                    op,
                    lhs: Box::new(lhs),
                    rhs: Box::new(rhs),
                },
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> PResult<Expr> {
        let start = self.pos;
        let t = self.peek().clone();
        let is_prefix = (t.kind == TokenKind::Punct
            && matches!(t.text.as_str(), "!" | "~" | "-" | "+" | "++" | "--"))
            || t.is("delete");
        if is_prefix {
            self.bump();
            let operand = self.unary()?;
            let id = self.node(start);
            return Ok(Expr {
                id,
                kind: ExprKind::Unary {
                    op: t.text,
                    prefix: true,
                    operand: Box::new(operand),
                },
            });
        }
        self.postfix()
    }

    fn call_args(&mut self) -> PResult<(Vec<Expr>, Option<Vec<String>>)> {
        self.expect("(")?;
        let mut args = Vec::new();
        let mut names = None;
        if self.peek().is("{") {
            self.bump();
            let mut ns = Vec::new();
            while !self.eat("}") {
                ns.push(self.ident()?);
                self.expect(":")?;
                args.push(self.expr()?);
                if !self.eat(",") {
                    self.expect("}")?;
                    break;
                }
            }
            names = Some(ns);
            self.expect(")")?;
            return Ok((args, names));
        }
        while !self.eat(")") {
            args.push(self.expr()?);
            if !self.eat(",") {
                self.expect(")")?;
                break;
            }
        }
        Ok((args, names))
    }

    fn postfix(&mut self) -> PResult<Expr> {
        let start = self.pos;
        let mut e = self.primary()?;
        loop {
            let t = self.peek().clone();
            if t.is("(") {
                let (args, names) = self.call_args()?;
                let id = self.node(start);
                e = Expr {
                    id,
                    kind: ExprKind::Call {
                        callee: Box::new(e),
                        args,
                        names,
                    },
                };
            } else if t.is("[") {
                self.bump();
                let idx = if self.peek().is("]") || self.peek().is(":") {
                    None
                } else {
                    Some(Box::new(self.expr()?))
                };
                if self.eat(":") && !self.peek().is("]") {
                    // array slice `a[x:y]`; the end bound is only read
                    let _ = self.expr()?;
                }
                self.expect("]")?;
                let id = self.node(start);
                e = Expr {
                    id,
                    kind: ExprKind::Index(Box::new(e), idx),
                };
            } else if t.is(".") {
                self.bump();
                let name = if self.peek().kind == TokenKind::Ident {
                    self.bump().text
                } else {
                    return self.err("expected member name");
                };
                let id = self.node(start);
                e = Expr {
                    id,
                    kind: ExprKind::Member(Box::new(e), name),
                };
            } else if t.is("{")
                && self.peek_at(1).kind == TokenKind::Ident
                && self.peek_at(2).is(":")
            {
                self.bump();
                let mut opts = Vec::new();
                while !self.eat("}") {
                    let n = self.ident()?;
                    self.expect(":")?;
                    opts.push((n, self.expr()?));
                    if !self.eat(",") {
                        self.expect("}")?;
                        break;
                    }
                }
                let id = self.node(start);
                e = Expr {
                    id,
                    kind: ExprKind::CallOptions(Box::new(e), opts),
                };
            } else if t.kind == TokenKind::Punct && (t.is("++") || t.is("--")) {
                self.bump();
                let id = self.node(start);
                e = Expr {
                    id,
                    kind: ExprKind::Unary {
                        op: t.text,
                        prefix: false,
                        operand: Box::new(e),
                    },
                };
            } else {
                break;
            }
        }
        Ok(e)
    }

    fn primary(&mut self) -> PResult<Expr> {
        let start = self.pos;
        let t = self.peek().clone();
        let kind = match t.kind {
            TokenKind::Number | TokenKind::HexNumber => {
                self.bump();
                let mut value = literal_value(&t.text);
                if let Some((_, mult)) = UNITS.iter().find(|(u, _)| self.peek().is(u)) {
                    self.bump();
                    value = scaled_value(&t.text, *mult);
                }
                ExprKind::Number {
                    raw: t.text,
                    value: value.map(|v| v.to_str_radix(10)),
                }
            }
            TokenKind::Str | TokenKind::HexStr => {
                let mut s = String::new();
                while matches!(self.peek().kind, TokenKind::Str | TokenKind::HexStr) {
                    s.push_str(&self.bump().text);
                }
                ExprKind::Str(s)
            }
            TokenKind::Punct if t.is("(") => {
                self.bump();
                let mut items = Vec::new();
                loop {
                    if self.peek().is(",") {
                        self.bump();
                        items.push(None);
                        continue;
                    }
                    if self.eat(")") {
                        break;
                    }
                    items.push(Some(self.expr()?));
                    if !self.eat(",") {
                        self.expect(")")?;
                        break;
                    }
                    if self.peek().is(")") {
                        items.push(None);
                    }
                }
                if items.len() == 1 {
                    if let Some(Some(inner)) = items.pop() {
                        return Ok(inner);
                    }
                }
                ExprKind::Tuple(items)
            }
            TokenKind::Punct if t.is("[") => {
                self.bump();
                let mut items = Vec::new();
                while !self.eat("]") {
                    items.push(self.expr()?);
                    if !self.eat(",") {
                        self.expect("]")?;
                        break;
                    }
                }
                ExprKind::Array(items)
            }
            TokenKind::Ident => match t.text.as_str() {
                "true" | "false" => {
                    self.bump();
                    ExprKind::Bool(t.text == "true")
                }
                "new" => {
                    self.bump();
                    ExprKind::New(self.type_name()?)
                }
                "type" if self.peek_at(1).is("(") => {
                    self.bump();
                    let cstart = self.pos;
                    self.expect("(")?;
                    let tstart = self.pos;
                    let ty = self.type_name()?;
                    let tid = self.node(tstart);
                    self.expect(")")?;
                    let callee_id = self.node(start);
                    let _ = cstart;
                    let callee = Expr {
                        id: callee_id,
                        kind: ExprKind::Ident("type".into()),
                    };
                    ExprKind::Call {
                        callee: Box::new(callee),
                        args: vec![Expr {
                            id: tid,
                            kind: ExprKind::TypeName(ty),
                        }],
                        names: None,
                    }
                }
                "mapping" | "function" => return self.err("unexpected type in expression"),
                s if is_elementary_type(s) => {
                    self.bump();
                    if s == "address" && self.peek().is("payable") {
                        self.bump();
                    }
                    let mut ty = TypeName::Elementary(t.text.clone());
                    while self.peek().is("[") && self.peek_at(1).is("]") {
                        self.bump();
                        self.bump();
                        ty = TypeName::Array(Box::new(ty), None);
                    }
                    ExprKind::TypeName(ty)
                }
                _ => {
                    self.bump();
                    ExprKind::Ident(t.text)
                }
            },
            _ => return self.err("expected expression"),
        };
        let id = self.node(start);
        Ok(Expr { id, kind })
    }
}

fn literal_value(raw: &str) -> Option<BigUint> {
    let clean: String = raw.chars().filter(|c| *c != '_').collect();
    if let Some(hex) = clean.strip_prefix("0x").or_else(|| clean.strip_prefix("0X")) {
        return BigUint::from_str_radix(hex, 16).ok();
    }
    if let Some((mant, exp)) = clean.split_once(['e', 'E']) {
        let exp: u32 = exp.parse().ok()?;
        if mant.contains('.') {
            let (int, frac) = mant.split_once('.')?;
            let digits = format!("{int}{frac}");
            let shift = exp.checked_sub(frac.len() as u32)?;
            return Some(BigUint::from_str_radix(&digits, 10).ok()? * BigUint::from(10u32).pow(shift));
        }
        return Some(BigUint::from_str_radix(mant, 10).ok()? * BigUint::from(10u32).pow(exp));
    }
    if clean.contains('.') {
        return None;
    }
    BigUint::from_str_radix(&clean, 10).ok()
}

fn scaled_value(raw: &str, mult: u64) -> Option<BigUint> {
    let clean: String = raw.chars().filter(|c| *c != '_').collect();
    if let Some((int, frac)) = clean.split_once('.') {
        let digits = BigUint::from_str_radix(&format!("{int}{frac}"), 10).ok()?;
        let scale = BigUint::from(10u32).pow(frac.len() as u32);
        let total = digits * BigUint::from(mult);
        return (&total % &scale).is_zero().then(|| total / scale);
    }
    literal_value(raw).map(|v| v * BigUint::from(mult))
}

#[allow(dead_code)]
fn one() -> BigUint {
    BigUint::one()
}
