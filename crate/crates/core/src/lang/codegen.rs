//! AST to bytecode.
//!
//! Output is a wide [`Program`]: integer literals travel as `i32`, float
//! literals as `f32`, and local variable names are kept in the string table
//! as debug names. [`narrow`](super::narrow) turns it into a runnable image.
//!
//! Layout: top-level statements first, ending in `DONE`, then every
//! function body in definition order, each ending in `RET0`. A function
//! declaration compiles to `PUSHL body; GSTORE name`.
//!
//! Variables are resolved at compile time. A name is a local if it is a
//! parameter or was declared with `var` inside the enclosing function.
//! Otherwise it must be a global assigned somewhere in the script, a
//! runtime builtin, or one of [`CompileOptions::host_names`].

use std::collections::{HashMap, HashSet};

use thiserror::Error;

use super::ast::*;
use super::isa::{Arg, Instr, Op, Program};
use super::lexer::Pos;
use crate::strings::{StringError, StringTable};
use crate::value::F16;

/// Globals the runtime defines before the script runs.
pub const RUNTIME_GLOBALS: &[&str] = &[
    "id",
    "swarm",
    "stigmergy",
    "neighbors",
    "abs",
    "sqrt",
    "size",
];

pub const MAX_LOCALS: usize = 256;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CompileOptions {
    /// Host functions the target will register, callable by name.
    pub host_names: Vec<String>,
}

impl Default for CompileOptions {
    fn default() -> Self {
        CompileOptions {
            host_names: vec!["goto".to_string()],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum CodegenErrorKind {
    #[error("unresolved identifier `{0}`")]
    UnresolvedIdentifier(String),
    #[error("function uses more than {MAX_LOCALS} locals")]
    TooManyLocals,
    #[error("integer literal {0} does not fit in 32 bits")]
    IntegerTooLarge(i64),
    #[error("call with {0} arguments")]
    TooManyArguments(usize),
    #[error("jump out of 16-bit range")]
    JumpOutOfRange,
    #[error("code too large")]
    CodeTooLarge,
    #[error("string table: {0}")]
    Strings(StringError),
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("{pos}: {kind}")]
pub struct CodegenError {
    pub pos: Pos,
    pub kind: CodegenErrorKind,
}

/// Wide program plus the source position of every instruction.
#[derive(Clone, Debug, PartialEq)]
pub struct Compiled {
    pub program: Program,
    pub positions: Vec<Pos>,
}

struct Pending {
    /// Index of the `PUSHL` to patch.
    site: usize,
    def: FunctionDef,
}

struct Scope {
    locals: HashMap<String, u16>,
}

struct Gen<'a> {
    strings: StringTable,
    code: Vec<Instr>,
    positions: Vec<Pos>,
    globals: &'a HashSet<String>,
    scope: Option<Scope>,
    pending: Vec<Pending>,
}

/// Every name assigned outside a local scope, plus declared functions.
fn collect_globals(script: &Script, opts: &CompileOptions) -> HashSet<String> {
    fn walk(stmts: &[Stmt], locals: &mut Option<HashSet<String>>, out: &mut HashSet<String>) {
        for s in stmts {
            match &s.kind {
                StmtKind::Function { name, def } => {
                    if !locals.as_ref().is_some_and(|l| l.contains(name)) {
                        out.insert(name.clone());
                    }
                    walk_fn(def, out);
                }
                StmtKind::Var { name, init } => {
                    match locals {
                        Some(l) => {
                            l.insert(name.clone());
                        }
                        None => {
                            out.insert(name.clone());
                        }
                    }
                    if let Some(e) = init {
                        walk_expr(e, out);
                    }
                }
                StmtKind::Assign { target, value } => {
                    if let ExprKind::Ident(n) = &target.kind {
                        if !locals.as_ref().is_some_and(|l| l.contains(n)) {
                            out.insert(n.clone());
                        }
                    } else {
                        walk_expr(target, out);
                    }
                    walk_expr(value, out);
                }
                StmtKind::If {
                    cond,
                    then,
                    otherwise,
                } => {
                    walk_expr(cond, out);
                    walk(then, locals, out);
                    if let Some(o) = otherwise {
                        walk(o, locals, out);
                    }
                }
                StmtKind::While { cond, body } => {
                    walk_expr(cond, out);
                    walk(body, locals, out);
                }
                StmtKind::Return(Some(e)) | StmtKind::Expr(e) => walk_expr(e, out),
                StmtKind::Return(None) => {}
            }
        }
    }
    fn walk_fn(def: &FunctionDef, out: &mut HashSet<String>) {
        // all `var`s of a function are local for its whole body
        let mut l: HashSet<String> = def.params.iter().cloned().collect();
        declared_vars(&def.body, &mut l);
        walk(&def.body, &mut Some(l), out);
    }
    fn walk_expr(e: &Expr, out: &mut HashSet<String>) {
        match &e.kind {
            ExprKind::Lambda(def) => walk_fn(def, out),
            ExprKind::Field(a, _) | ExprKind::Unary(_, a) => walk_expr(a, out),
            ExprKind::Index(a, b) | ExprKind::Binary(_, a, b) => {
                walk_expr(a, out);
                walk_expr(b, out);
            }
            ExprKind::Call(f, args) => {
                walk_expr(f, out);
                args.iter().for_each(|a| walk_expr(a, out));
            }
            ExprKind::MethodCall { obj, args, .. } => {
                walk_expr(obj, out);
                args.iter().for_each(|a| walk_expr(a, out));
            }
            ExprKind::Table(entries) => {
                for (k, v) in entries {
                    if let TableKey::Expr(k) = k {
                        walk_expr(k, out);
                    }
                    walk_expr(v, out);
                }
            }
            _ => {}
        }
    }
    let mut out: HashSet<String> = RUNTIME_GLOBALS.iter().map(|s| s.to_string()).collect();
    out.extend(opts.host_names.iter().cloned());
    walk(&script.body, &mut None, &mut out);
    out
}

/// Names declared with `var` anywhere in a function body, excluding nested
/// lambdas and functions.
fn declared_vars(stmts: &[Stmt], out: &mut HashSet<String>) {
    for s in stmts {
        match &s.kind {
            StmtKind::Var { name, .. } => {
                out.insert(name.clone());
            }
            StmtKind::If {
                then, otherwise, ..
            } => {
                declared_vars(then, out);
                if let Some(o) = otherwise {
                    declared_vars(o, out);
                }
            }
            StmtKind::While { body, .. } => declared_vars(body, out),
            _ => {}
        }
    }
}

impl Gen<'_> {
    fn emit(&mut self, pos: Pos, i: Instr) -> usize {
        self.code.push(i);
        self.positions.push(pos);
        self.code.len() - 1
    }

    fn op(&mut self, pos: Pos, op: Op) -> usize {
        self.emit(pos, Instr::new(op))
    }

    fn intern(&mut self, pos: Pos, s: &str) -> Result<u16, CodegenError> {
        self.strings.intern(s).map_err(|e| CodegenError {
            pos,
            kind: CodegenErrorKind::Strings(e),
        })
    }

    fn patch(&mut self, site: usize, target: usize) {
        self.code[site].arg = Arg::Target(target);
    }

    fn local(&self, name: &str) -> Option<u16> {
        self.scope
            .as_ref()
            .and_then(|s| s.locals.get(name).copied())
    }

    fn stmts(&mut self, stmts: &[Stmt]) -> Result<(), CodegenError> {
        stmts.iter().try_for_each(|s| self.stmt(s))
    }

    fn stmt(&mut self, s: &Stmt) -> Result<(), CodegenError> {
        let pos = s.pos;
        match &s.kind {
            StmtKind::Function { name, def } => {
                let site = self.emit(pos, Instr::with(Op::PushL, Arg::Target(0)));
                self.pending.push(Pending {
                    site,
                    def: def.clone(),
                });
                self.store(pos, name)?;
            }
            StmtKind::Var { name, init } => {
                match init {
                    Some(e) => self.expr(e)?,
                    None => {
                        self.op(pos, Op::PushNil);
                    }
                }
                self.store(pos, name)?;
            }
            StmtKind::Assign { target, value } => match &target.kind {
                ExprKind::Ident(n) => {
                    self.expr(value)?;
                    self.store(target.pos, n)?;
                }
                ExprKind::Field(obj, name) => {
                    self.expr(obj)?;
                    let id = self.intern(target.pos, name)?;
                    self.emit(target.pos, Instr::with(Op::PushS, Arg::Str(id)));
                    self.expr(value)?;
                    self.op(pos, Op::TPut);
                }
                ExprKind::Index(obj, key) => {
                    self.expr(obj)?;
                    self.expr(key)?;
                    self.expr(value)?;
                    self.op(pos, Op::TPut);
                }
                _ => unreachable!("parser only produces assignable targets"),
            },
            StmtKind::If {
                cond,
                then,
                otherwise,
            } => {
                self.expr(cond)?;
                let jz = self.emit(pos, Instr::with(Op::JumpZ, Arg::Target(0)));
                self.stmts(then)?;
                match otherwise {
                    Some(o) => {
                        let j = self.emit(pos, Instr::with(Op::Jump, Arg::Target(0)));
                        let here = self.code.len();
                        self.patch(jz, here);
                        self.stmts(o)?;
                        let here = self.code.len();
                        self.patch(j, here);
                    }
                    None => {
                        let here = self.code.len();
                        self.patch(jz, here);
                    }
                }
            }
            StmtKind::While { cond, body } => {
                let top = self.code.len();
                self.expr(cond)?;
                let jz = self.emit(pos, Instr::with(Op::JumpZ, Arg::Target(0)));
                self.stmts(body)?;
                self.emit(pos, Instr::with(Op::Jump, Arg::Target(top)));
                let here = self.code.len();
                self.patch(jz, here);
            }
            StmtKind::Return(v) => match v {
                Some(e) => {
                    self.expr(e)?;
                    self.op(pos, Op::Ret1);
                }
                None => {
                    self.op(pos, Op::Ret0);
                }
            },
            StmtKind::Expr(e) => {
                self.expr(e)?;
                self.op(pos, Op::Pop);
            }
        }
        Ok(())
    }

    fn store(&mut self, pos: Pos, name: &str) -> Result<(), CodegenError> {
        if let Some(i) = self.local(name) {
            self.emit(pos, Instr::with(Op::LStore, Arg::Index(i)));
        } else {
            let id = self.intern(pos, name)?;
            self.emit(pos, Instr::with(Op::GStore, Arg::Str(id)));
        }
        Ok(())
    }

    fn int(&mut self, pos: Pos, v: i64) -> Result<(), CodegenError> {
        let v = i32::try_from(v).map_err(|_| CodegenError {
            pos,
            kind: CodegenErrorKind::IntegerTooLarge(v),
        })?;
        self.emit(pos, Instr::with(Op::PushI, Arg::Int(v)));
        Ok(())
    }

    fn float(&mut self, pos: Pos, x: f64) {
        // Round to half precision once, here. Every half value is exact in
        // f32, so narrowing reproduces these bits.
        let h = F16::from_f64(x);
        self.emit(pos, Instr::with(Op::PushF, Arg::Single(h.to_f32())));
    }

    fn call_argc(pos: Pos, n: usize) -> Result<Arg, CodegenError> {
        u16::try_from(n)
            .ok()
            .filter(|&n| n < 256)
            .map(Arg::Index)
            .ok_or(CodegenError {
                pos,
                kind: CodegenErrorKind::TooManyArguments(n),
            })
    }

    fn expr(&mut self, e: &Expr) -> Result<(), CodegenError> {
        let pos = e.pos;
        match &e.kind {
            ExprKind::Nil => {
                self.op(pos, Op::PushNil);
            }
            ExprKind::Int(v) => self.int(pos, *v)?,
            ExprKind::Float(x) => self.float(pos, *x),
            ExprKind::Str(s) => {
                let id = self.intern(pos, s)?;
                self.emit(pos, Instr::with(Op::PushS, Arg::Str(id)));
            }
            ExprKind::Ident(n) => {
                if let Some(i) = self.local(n) {
                    self.emit(pos, Instr::with(Op::LLoad, Arg::Index(i)));
                } else if self.globals.contains(n) {
                    let id = self.intern(pos, n)?;
                    self.emit(pos, Instr::with(Op::GLoad, Arg::Str(id)));
                } else {
                    return Err(CodegenError {
                        pos,
                        kind: CodegenErrorKind::UnresolvedIdentifier(n.clone()),
                    });
                }
            }
            ExprKind::Field(obj, name) => {
                self.expr(obj)?;
                let id = self.intern(pos, name)?;
                self.emit(pos, Instr::with(Op::PushS, Arg::Str(id)));
                self.op(pos, Op::TGet);
            }
            ExprKind::Index(obj, key) => {
                self.expr(obj)?;
                self.expr(key)?;
                self.op(pos, Op::TGet);
            }
            ExprKind::Call(f, args) => {
                self.expr(f)?;
                for a in args {
                    self.expr(a)?;
                }
                let argc = Self::call_argc(pos, args.len())?;
                self.emit(pos, Instr::with(Op::Call, argc));
            }
            ExprKind::MethodCall { obj, name, args } => {
                self.expr(obj)?;
                let id = self.intern(pos, name)?;
                self.emit(pos, Instr::with(Op::PushS, Arg::Str(id)));
                self.op(pos, Op::TGet);
                for a in args {
                    self.expr(a)?;
                }
                let argc = Self::call_argc(pos, args.len())?;
                self.emit(pos, Instr::with(Op::Call, argc));
            }
            ExprKind::Unary(UnOp::Neg, inner) => match inner.kind {
                ExprKind::Int(v) => self.int(pos, -v)?,
                ExprKind::Float(x) => self.float(pos, -x),
                _ => {
                    self.expr(inner)?;
                    self.op(pos, Op::Neg);
                }
            },
            ExprKind::Unary(UnOp::Not, inner) => {
                self.expr(inner)?;
                self.op(pos, Op::Not);
            }
            ExprKind::Binary(op, a, b) => {
                self.expr(a)?;
                self.expr(b)?;
                let op = match op {
                    BinOp::Add => Op::Add,
                    BinOp::Sub => Op::Sub,
                    BinOp::Mul => Op::Mul,
                    BinOp::Div => Op::Div,
                    BinOp::Mod => Op::Mod,
                    BinOp::Pow => Op::Pow,
                    BinOp::And => Op::And,
                    BinOp::Or => Op::Or,
                    BinOp::Eq => Op::Eq,
                    BinOp::Neq => Op::Neq,
                    BinOp::Lt => Op::Lt,
                    BinOp::Lte => Op::Lte,
                    BinOp::Gt => Op::Gt,
                    BinOp::Gte => Op::Gte,
                };
                self.op(pos, op);
            }
            ExprKind::Table(entries) => {
                self.op(pos, Op::PushT);
                for (k, v) in entries {
                    self.op(pos, Op::Dup);
                    match k {
                        TableKey::Name(n) => {
                            let id = self.intern(pos, n)?;
                            self.emit(pos, Instr::with(Op::PushS, Arg::Str(id)));
                        }
                        TableKey::Expr(k) => self.expr(k)?,
                    }
                    self.expr(v)?;
                    self.op(pos, Op::TPut);
                }
            }
            ExprKind::Lambda(def) => {
                let site = self.emit(pos, Instr::with(Op::PushL, Arg::Target(0)));
                self.pending.push(Pending {
                    site,
                    def: def.clone(),
                });
            }
        }
        Ok(())
    }

    fn function(&mut self, p: Pending) -> Result<(), CodegenError> {
        let def = p.def;
        let mut names: Vec<String> = Vec::new();
        for n in &def.params {
            if !names.contains(n) {
                names.push(n.clone());
            }
        }
        let mut vars = Vec::new();
        ordered_vars(&def.body, &mut vars);
        for v in vars {
            if !names.contains(&v) {
                names.push(v);
            }
        }
        if names.len() > MAX_LOCALS {
            return Err(CodegenError {
                pos: def.pos,
                kind: CodegenErrorKind::TooManyLocals,
            });
        }
        // debug names; no instruction references them
        for n in &names {
            self.intern(def.pos, n)?;
        }
        let locals = names
            .into_iter()
            .enumerate()
            .map(|(i, n)| (n, i as u16))
            .collect();
        let start = self.code.len();
        self.patch(p.site, start);
        self.scope = Some(Scope { locals });
        self.stmts(&def.body)?;
        self.op(def.pos, Op::Ret0);
        self.scope = None;
        Ok(())
    }
}

fn ordered_vars(stmts: &[Stmt], out: &mut Vec<String>) {
    for s in stmts {
        match &s.kind {
            StmtKind::Var { name, .. } => out.push(name.clone()),
            StmtKind::If {
                then, otherwise, ..
            } => {
                ordered_vars(then, out);
                if let Some(o) = otherwise {
                    ordered_vars(o, out);
                }
            }
            StmtKind::While { body, .. } => ordered_vars(body, out),
            _ => {}
        }
    }
}

/// Compiles a script to a wide program.
pub fn generate(script: &Script, opts: &CompileOptions) -> Result<Compiled, CodegenError> {
    let globals = collect_globals(script, opts);
    let mut g = Gen {
        strings: StringTable::new(),
        code: Vec::new(),
        positions: Vec::new(),
        globals: &globals,
        scope: None,
        pending: Vec::new(),
    };
    g.stmts(&script.body)?;
    let end = script.body.last().map(|s| s.pos).unwrap_or_default();
    g.op(end, Op::Done);
    // bodies may define further lambdas; drain in order
    let mut next = 0;
    while next < g.pending.len() {
        let p = Pending {
            site: g.pending[next].site,
            def: g.pending[next].def.clone(),
        };
        next += 1;
        g.function(p)?;
    }
    let program = Program {
        strings: g.strings,
        code: g.code,
        entry: 0,
    };
    // surface range problems at their source position
    if let Err(e) = program.encode_code(super::isa::Width::Wide) {
        use super::isa::EncodeError;
        let (pos, kind) = match e {
            EncodeError::JumpRange { index, .. } => {
                (g.positions[index], CodegenErrorKind::JumpOutOfRange)
            }
            _ => (end, CodegenErrorKind::CodeTooLarge),
        };
        return Err(CodegenError { pos, kind });
    }
    Ok(Compiled {
        program,
        positions: g.positions,
    })
}
