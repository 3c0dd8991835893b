//! Recursive-descent parser.
//!
//! Precedence, loosest first: `or`, `and`, comparisons, `+ -`, `* / %`,
//! unary `- not`, `^` (right associative), postfix `. [] ()`.
//!
//! Statements may be separated by `;` or nothing. A call's `(` or an index's
//! `[` must sit on the same line as the expression before it, so a
//! parenthesized expression starting a new line begins a new statement.

use std::fmt;

use thiserror::Error;

use super::ast::*;
use super::lexer::{tokenize, LexError, Pos, Tok, Token};

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub struct ParseError {
    pub pos: Pos,
    pub expected: Vec<String>,
    pub found: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: expected ", self.pos)?;
        match self.expected.as_slice() {
            [one] => write!(f, "{one}")?,
            many => write!(f, "one of {}", many.join(", "))?,
        }
        write!(f, ", found {}", self.found)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum SyntaxError {
    #[error(transparent)]
    Lex(#[from] LexError),
    #[error(transparent)]
    Parse(#[from] ParseError),
}

impl SyntaxError {
    pub fn pos(&self) -> Pos {
        match self {
            SyntaxError::Lex(e) => e.pos,
            SyntaxError::Parse(e) => e.pos,
        }
    }
}

pub fn parse_source(src: &str) -> Result<Script, SyntaxError> {
    let toks = tokenize(src)?;
    Ok(parse(&toks)?)
}

pub fn parse(tokens: &[Token]) -> Result<Script, ParseError> {
    let mut p = Parser {
        toks: tokens,
        at: 0,
    };
    let mut body = Vec::new();
    while !p.check(&Tok::Eof) {
        if p.eat(&Tok::Semi) {
            continue;
        }
        body.push(p.statement()?);
    }
    Ok(Script { body })
}

struct Parser<'a> {
    toks: &'a [Token],
    at: usize,
}

const EXPR_START: &[&str] = &[
    "identifier",
    "number",
    "string",
    "`nil`",
    "`(`",
    "`{`",
    "`-`",
    "`not`",
    "`function`",
];

impl Parser<'_> {
    fn peek(&self) -> &Token {
        // tokenize always ends with Eof
        &self.toks[self.at.min(self.toks.len() - 1)]
    }

    fn check(&self, t: &Tok) -> bool {
        &self.peek().tok == t
    }

    fn eat(&mut self, t: &Tok) -> bool {
        if self.check(t) {
            self.at += 1;
            true
        } else {
            false
        }
    }

    fn prev_line(&self) -> u32 {
        self.toks[self.at - 1].pos.line
    }

    fn fail<T>(&self, expected: &[&str]) -> Result<T, ParseError> {
        Err(ParseError {
            pos: self.peek().pos,
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found: self.peek().tok.describe(),
        })
    }

    fn expect(&mut self, t: Tok) -> Result<Pos, ParseError> {
        let pos = self.peek().pos;
        if self.eat(&t) {
            Ok(pos)
        } else {
            self.fail(&[&format!("`{}`", t.symbol())])
        }
    }

    fn ident(&mut self) -> Result<String, ParseError> {
        if let Tok::Ident(s) = &self.peek().tok {
            let s = s.clone();
            self.at += 1;
            Ok(s)
        } else {
            self.fail(&["identifier"])
        }
    }

    fn block(&mut self) -> Result<Vec<Stmt>, ParseError> {
        self.expect(Tok::LBrace)?;
        let mut out = Vec::new();
        loop {
            if self.eat(&Tok::RBrace) {
                return Ok(out);
            }
            if self.eat(&Tok::Semi) {
                continue;
            }
            if self.check(&Tok::Eof) {
                return self.fail(&["statement", "`}`"]);
            }
            out.push(self.statement()?);
        }
    }

    /// A braced block, or a single statement.
    fn body(&mut self) -> Result<Vec<Stmt>, ParseError> {
        if self.check(&Tok::LBrace) {
            self.block()
        } else {
            Ok(vec![self.statement()?])
        }
    }

    fn function_def(&mut self, pos: Pos) -> Result<FunctionDef, ParseError> {
        self.expect(Tok::LParen)?;
        let mut params = Vec::new();
        if !self.eat(&Tok::RParen) {
            loop {
                params.push(self.ident()?);
                if self.eat(&Tok::RParen) {
                    break;
                }
                if !self.eat(&Tok::Comma) {
                    return self.fail(&["`,`", "`)`"]);
                }
            }
        }
        let body = self.block()?;
        Ok(FunctionDef { params, body, pos })
    }

    fn statement(&mut self) -> Result<Stmt, ParseError> {
        let pos = self.peek().pos;
        let kind = match self.peek().tok {
            Tok::Function
                if matches!(
                    self.toks.get(self.at + 1),
                    Some(Token {
                        tok: Tok::Ident(_),
                        ..
                    })
                ) =>
            {
                self.at += 1;
                let name = self.ident()?;
                let def = self.function_def(pos)?;
                StmtKind::Function { name, def }
            }
            Tok::Var => {
                self.at += 1;
                let name = self.ident()?;
                let init = if self.eat(&Tok::Assign) {
                    Some(self.expr()?)
                } else {
                    None
                };
                StmtKind::Var { name, init }
            }
            Tok::If => {
                self.at += 1;
                self.expect(Tok::LParen)?;
                let cond = self.expr()?;
                self.expect(Tok::RParen)?;
                let then = self.body()?;
                let otherwise = if self.eat(&Tok::Else) {
                    Some(self.body()?)
                } else {
                    None
                };
                StmtKind::If {
                    cond,
                    then,
                    otherwise,
                }
            }
            Tok::While => {
                self.at += 1;
                self.expect(Tok::LParen)?;
                let cond = self.expr()?;
                self.expect(Tok::RParen)?;
                let body = self.body()?;
                StmtKind::While { cond, body }
            }
            Tok::Return => {
                self.at += 1;
                let line = self.prev_line();
                let value = if self.starts_expr() && self.peek().pos.line == line {
                    Some(self.expr()?)
                } else {
                    None
                };
                StmtKind::Return(value)
            }
            _ => {
                if !self.starts_expr() {
                    return self.fail(&["statement"]);
                }
                let e = self.expr()?;
                if self.eat(&Tok::Assign) {
                    if !matches!(
                        e.kind,
                        ExprKind::Ident(_) | ExprKind::Field(..) | ExprKind::Index(..)
                    ) {
                        return Err(ParseError {
                            pos: e.pos,
                            expected: vec!["assignable expression".into()],
                            found: "expression".into(),
                        });
                    }
                    let value = self.expr()?;
                    StmtKind::Assign { target: e, value }
                } else {
                    StmtKind::Expr(e)
                }
            }
        };
        Ok(Stmt { kind, pos })
    }

    fn starts_expr(&self) -> bool {
        matches!(
            self.peek().tok,
            Tok::Ident(_)
                | Tok::Int(_)
                | Tok::Float(_)
                | Tok::Str(_)
                | Tok::Nil
                | Tok::True
                | Tok::False
                | Tok::LParen
                | Tok::LBrace
                | Tok::Minus
                | Tok::Not
                | Tok::Function
        )
    }

    pub fn expr(&mut self) -> Result<Expr, ParseError> {
        self.binary(0)
    }

    fn binary(&mut self, level: usize) -> Result<Expr, ParseError> {
        const LEVELS: &[&[(Tok, BinOp)]] = &[
            &[(Tok::Or, BinOp::Or)],
            &[(Tok::And, BinOp::And)],
            &[
                (Tok::EqEq, BinOp::Eq),
                (Tok::NotEq, BinOp::Neq),
                (Tok::Lt, BinOp::Lt),
                (Tok::Le, BinOp::Lte),
                (Tok::Gt, BinOp::Gt),
                (Tok::Ge, BinOp::Gte),
            ],
            &[(Tok::Plus, BinOp::Add), (Tok::Minus, BinOp::Sub)],
            &[
                (Tok::Star, BinOp::Mul),
                (Tok::Slash, BinOp::Div),
                (Tok::Percent, BinOp::Mod),
            ],
        ];
        if level == LEVELS.len() {
            return self.unary();
        }
        let mut lhs = self.binary(level + 1)?;
        'outer: loop {
            for (tok, op) in LEVELS[level] {
                if self.check(tok) {
                    let pos = self.peek().pos;
                    self.at += 1;
                    let rhs = self.binary(level + 1)?;
                    lhs = Expr {
                        kind: ExprKind::Binary(*op, Box::new(lhs), Box::new(rhs)),
                        pos,
                    };
                    continue 'outer;
                }
            }
            return Ok(lhs);
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        let pos = self.peek().pos;
        let op = if self.eat(&Tok::Minus) {
            UnOp::Neg
        } else if self.eat(&Tok::Not) {
            UnOp::Not
        } else {
            return self.power();
        };
        let inner = self.unary()?;
        Ok(Expr {
            kind: ExprKind::Unary(op, Box::new(inner)),
            pos,
        })
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.postfix()?;
        if self.check(&Tok::Caret) {
            let pos = self.peek().pos;
            self.at += 1;
            let exp = self.unary()?;
            return Ok(Expr {
                kind: ExprKind::Binary(BinOp::Pow, Box::new(base), Box::new(exp)),
                pos,
            });
        }
        Ok(base)
    }

    fn args(&mut self) -> Result<Vec<Expr>, ParseError> {
        let mut args = Vec::new();
        if self.eat(&Tok::RParen) {
            return Ok(args);
        }
        loop {
            args.push(self.expr()?);
            if self.eat(&Tok::RParen) {
                return Ok(args);
            }
            if !self.eat(&Tok::Comma) {
                return self.fail(&["`,`", "`)`"]);
            }
        }
    }

    fn postfix(&mut self) -> Result<Expr, ParseError> {
        let mut e = self.primary()?;
        loop {
            let pos = self.peek().pos;
            let same_line = pos.line == self.prev_line();
            if self.eat(&Tok::Dot) {
                let name = self.ident()?;
                if self.check(&Tok::LParen) && self.peek().pos.line == self.prev_line() {
                    self.at += 1;
                    let args = self.args()?;
                    e = Expr {
                        kind: ExprKind::MethodCall {
                            obj: Box::new(e),
                            name,
                            args,
                        },
                        pos,
                    };
                } else {
                    e = Expr {
                        kind: ExprKind::Field(Box::new(e), name),
                        pos,
                    };
                }
            } else if same_line && self.eat(&Tok::LBracket) {
                let key = self.expr()?;
                self.expect(Tok::RBracket)?;
                e = Expr {
                    kind: ExprKind::Index(Box::new(e), Box::new(key)),
                    pos,
                };
            } else if same_line && self.eat(&Tok::LParen) {
                let args = self.args()?;
                e = Expr {
                    kind: ExprKind::Call(Box::new(e), args),
                    pos,
                };
            } else {
                return Ok(e);
            }
        }
    }

    fn table(&mut self, pos: Pos) -> Result<Expr, ParseError> {
        let mut entries = Vec::new();
        loop {
            if self.eat(&Tok::RBrace) {
                break;
            }
            let key = if self.eat(&Tok::Dot) {
                TableKey::Name(self.ident()?)
            } else if self.eat(&Tok::LBracket) {
                let k = self.expr()?;
                self.expect(Tok::RBracket)?;
                TableKey::Expr(k)
            } else {
                return self.fail(&["`.`", "`[`", "`}`"]);
            };
            self.expect(Tok::Assign)?;
            entries.push((key, self.expr()?));
            if self.eat(&Tok::RBrace) {
                break;
            }
            if !self.eat(&Tok::Comma) {
                return self.fail(&["`,`", "`}`"]);
            }
        }
        Ok(Expr {
            kind: ExprKind::Table(entries),
            pos,
        })
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let pos = self.peek().pos;
        let kind = match &self.peek().tok {
            Tok::Int(i) => ExprKind::Int(*i),
            Tok::Float(x) => ExprKind::Float(*x),
            Tok::Str(s) => ExprKind::Str(s.clone()),
            Tok::Ident(s) => ExprKind::Ident(s.clone()),
            Tok::Nil => ExprKind::Nil,
            Tok::True => ExprKind::Int(1),
            Tok::False => ExprKind::Int(0),
            Tok::LParen => {
                self.at += 1;
                let e = self.expr()?;
                self.expect(Tok::RParen)?;
                return Ok(e);
            }
            Tok::LBrace => {
                self.at += 1;
                return self.table(pos);
            }
            Tok::Function => {
                self.at += 1;
                let def = self.function_def(pos)?;
                return Ok(Expr {
                    kind: ExprKind::Lambda(def),
                    pos,
                });
            }
            _ => return self.fail(EXPR_START),
        };
        self.at += 1;
        Ok(Expr { kind, pos })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(src: &str) -> StmtKind {
        let s = parse_source(src).unwrap();
        assert_eq!(s.body.len(), 1, "{src}");
        s.body.into_iter().next().unwrap().kind
    }

    #[test]
    fn function_decl() {
        let StmtKind::Function { name, def } = one("function step() { x = x + 1 }") else {
            panic!()
        };
        assert_eq!(name, "step");
        assert!(def.params.is_empty());
        assert_eq!(def.body.len(), 1);
        assert!(matches!(def.body[0].kind, StmtKind::Assign { .. }));
    }

    #[test]
    fn method_call() {
        let StmtKind::Expr(e) = one("neighbors.broadcast(\"t\", 5)") else {
            panic!()
        };
        let ExprKind::MethodCall { obj, name, args } = e.kind else {
            panic!("{:?}", e.kind)
        };
        assert_eq!(obj.kind, ExprKind::Ident("neighbors".into()));
        assert_eq!(name, "broadcast");
        assert_eq!(args.len(), 2);
    }

    #[test]
    fn unclosed_condition() {
        let e = parse_source("if (x {").unwrap_err();
        let SyntaxError::Parse(p) = e else { panic!() };
        assert_eq!(p.pos, Pos { line: 1, col: 7 });
        assert!(p.expected.contains(&"`)`".to_string()));
    }

    #[test]
    fn precedence() {
        let StmtKind::Expr(e) = one("1 + 2 * 3 ^ 2 ^ 1") else {
            panic!()
        };
        let ExprKind::Binary(BinOp::Add, _, rhs) = e.kind else {
            panic!()
        };
        let ExprKind::Binary(BinOp::Mul, _, pow) = rhs.kind else {
            panic!()
        };
        let ExprKind::Binary(BinOp::Pow, _, inner) = pow.kind else {
            panic!()
        };
        assert!(matches!(inner.kind, ExprKind::Binary(BinOp::Pow, ..)));
        // unary minus binds looser than power
        let StmtKind::Expr(e) = one("-2 ^ 2") else {
            panic!()
        };
        assert!(matches!(e.kind, ExprKind::Unary(UnOp::Neg, _)));
    }

    #[test]
    fn newline_splits_call() {
        let s = parse_source("x = y\n(z)").unwrap();
        assert_eq!(s.body.len(), 2);
        let s = parse_source("x = f(1);y = f\n(2)").unwrap();
        assert_eq!(s.body.len(), 3);
    }

    #[test]
    fn table_literal_and_lambda() {
        let StmtKind::Assign { value, .. } = one("t = { .a = 1, [2] = function(x) { return x } }")
        else {
            panic!()
        };
        let ExprKind::Table(entries) = value.kind else {
            panic!()
        };
        assert_eq!(entries.len(), 2);
        assert!(matches!(entries[1].1.kind, ExprKind::Lambda(_)));
    }

    #[test]
    fn bad_assignment_target() {
        assert!(parse_source("1 = 2").is_err());
        assert!(parse_source("f() = 2").is_err());
    }
}
