//! Tokenizer for the script language. `#` starts a comment that runs to the
//! end of the line.

use std::fmt;

use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Default)]
pub struct Pos {
    pub line: u32,
    pub col: u32,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Tok {
    Ident(String),
    Int(i64),
    Float(f64),
    Str(String),
    // keywords
    Function,
    Var,
    If,
    Else,
    While,
    Return,
    Nil,
    True,
    False,
    And,
    Or,
    Not,
    // punctuation
    Plus,
    Minus,
    Star,
    Slash,
    Percent,
    Caret,
    Assign,
    EqEq,
    NotEq,
    Lt,
    Le,
    Gt,
    Ge,
    Dot,
    Comma,
    Semi,
    LParen,
    RParen,
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Eof,
}

impl Tok {
    /// Short human-readable form for diagnostics.
    pub fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Int(i) => format!("integer {i}"),
            Tok::Float(x) => format!("float {x}"),
            Tok::Str(_) => "string".into(),
            Tok::Eof => "end of input".into(),
            other => format!("`{}`", other.symbol()),
        }
    }

    pub fn symbol(&self) -> &'static str {
        match self {
            Tok::Function => "function",
            Tok::Var => "var",
            Tok::If => "if",
            Tok::Else => "else",
            Tok::While => "while",
            Tok::Return => "return",
            Tok::Nil => "nil",
            Tok::True => "true",
            Tok::False => "false",
            Tok::And => "and",
            Tok::Or => "or",
            Tok::Not => "not",
            Tok::Plus => "+",
            Tok::Minus => "-",
            Tok::Star => "*",
            Tok::Slash => "/",
            Tok::Percent => "%",
            Tok::Caret => "^",
            Tok::Assign => "=",
            Tok::EqEq => "==",
            Tok::NotEq => "!=",
            Tok::Lt => "<",
            Tok::Le => "<=",
            Tok::Gt => ">",
            Tok::Ge => ">=",
            Tok::Dot => ".",
            Tok::Comma => ",",
            Tok::Semi => ";",
            Tok::LParen => "(",
            Tok::RParen => ")",
            Tok::LBrace => "{",
            Tok::RBrace => "}",
            Tok::LBracket => "[",
            Tok::RBracket => "]",
            Tok::Ident(_) => "identifier",
            Tok::Int(_) => "integer",
            Tok::Float(_) => "float",
            Tok::Str(_) => "string",
            Tok::Eof => "end of input",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Token {
    pub tok: Tok,
    pub pos: Pos,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("{pos}: {msg}")]
pub struct LexError {
    pub pos: Pos,
    pub msg: String,
}

fn keyword(s: &str) -> Option<Tok> {
    Some(match s {
        "function" => Tok::Function,
        "var" => Tok::Var,
        "if" => Tok::If,
        "else" => Tok::Else,
        "while" => Tok::While,
        "return" => Tok::Return,
        "nil" => Tok::Nil,
        "true" => Tok::True,
        "false" => Tok::False,
        "and" => Tok::And,
        "or" => Tok::Or,
        "not" => Tok::Not,
        _ => return None,
    })
}

struct Lexer<'a> {
    src: &'a [u8],
    at: usize,
    line: u32,
    col: u32,
}

impl Lexer<'_> {
    fn peek(&self) -> Option<u8> {
        self.src.get(self.at).copied()
    }

    fn peek2(&self) -> Option<u8> {
        self.src.get(self.at + 1).copied()
    }

    fn bump(&mut self) -> Option<u8> {
        let c = self.peek()?;
        self.at += 1;
        if c == b'\n' {
            self.line += 1;
            self.col = 1;
        } else if c & 0xC0 != 0x80 {
            // count characters, not UTF-8 continuation bytes
            self.col += 1;
        }
        Some(c)
    }

    fn pos(&self) -> Pos {
        Pos {
            line: self.line,
            col: self.col,
        }
    }

    fn err(pos: Pos, msg: impl Into<String>) -> LexError {
        LexError {
            pos,
            msg: msg.into(),
        }
    }

    fn number(&mut self, start: Pos) -> Result<Tok, LexError> {
        let from = self.at;
        if self.peek() == Some(b'0') && matches!(self.peek2(), Some(b'x' | b'X')) {
            self.bump();
            self.bump();
            let digits = self.at;
            while self.peek().is_some_and(|c| c.is_ascii_hexdigit()) {
                self.bump();
            }
            let text = std::str::from_utf8(&self.src[digits..self.at]).expect("ascii");
            return i64::from_str_radix(text, 16)
                .map(Tok::Int)
                .map_err(|_| Self::err(start, "malformed hex literal"));
        }
        let mut float = false;
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.bump();
        }
        if self.peek() == Some(b'.') && self.peek2().is_some_and(|c| c.is_ascii_digit()) {
            float = true;
            self.bump();
            while self.peek().is_some_and(|c| c.is_ascii_digit()) {
                self.bump();
            }
        }
        if matches!(self.peek(), Some(b'e' | b'E')) {
            let save = (self.at, self.line, self.col);
            self.bump();
            if matches!(self.peek(), Some(b'+' | b'-')) {
                self.bump();
            }
            if self.peek().is_some_and(|c| c.is_ascii_digit()) {
                float = true;
                while self.peek().is_some_and(|c| c.is_ascii_digit()) {
                    self.bump();
                }
            } else {
                (self.at, self.line, self.col) = save;
            }
        }
        if self
            .peek()
            .is_some_and(|c| c.is_ascii_alphabetic() || c == b'_')
        {
            return Err(Self::err(self.pos(), "identifier directly after number"));
        }
        let text = std::str::from_utf8(&self.src[from..self.at]).expect("ascii");
        if float {
            text.parse()
                .map(Tok::Float)
                .map_err(|_| Self::err(start, "malformed float literal"))
        } else {
            text.parse()
                .map(Tok::Int)
                .map_err(|_| Self::err(start, "integer literal too large"))
        }
    }

    fn string(&mut self, start: Pos, quote: u8) -> Result<Tok, LexError> {
        let mut out = Vec::new();
        loop {
            let here = self.pos();
            match self.bump() {
                None | Some(b'\n') => return Err(Self::err(start, "unterminated string")),
                Some(c) if c == quote => break,
                Some(b'\\') => {
                    let c = match self.bump() {
                        Some(b'n') => b'\n',
                        Some(b't') => b'\t',
                        Some(b'r') => b'\r',
                        Some(b'0') => 0,
                        Some(c @ (b'\\' | b'"' | b'\'')) => c,
                        _ => return Err(Self::err(here, "unknown escape")),
                    };
                    out.push(c);
                }
                Some(c) => out.push(c),
            }
        }
        String::from_utf8(out)
            .map(Tok::Str)
            .map_err(|_| Self::err(start, "string is not valid UTF-8"))
    }

    fn next(&mut self) -> Result<Token, LexError> {
        loop {
            match self.peek() {
                Some(b' ' | b'\t' | b'\r' | b'\n') => {
                    self.bump();
                }
                Some(b'#') => {
                    while self.peek().is_some_and(|c| c != b'\n') {
                        self.bump();
                    }
                }
                _ => break,
            }
        }
        let pos = self.pos();
        let Some(c) = self.peek() else {
            return Ok(Token { tok: Tok::Eof, pos });
        };
        let tok = if c.is_ascii_digit() {
            self.number(pos)?
        } else if c.is_ascii_alphabetic() || c == b'_' {
            let from = self.at;
            while self
                .peek()
                .is_some_and(|c| c.is_ascii_alphanumeric() || c == b'_')
            {
                self.bump();
            }
            let word = std::str::from_utf8(&self.src[from..self.at]).expect("ascii");
            keyword(word).unwrap_or_else(|| Tok::Ident(word.to_string()))
        } else if c == b'"' || c == b'\'' {
            self.bump();
            self.string(pos, c)?
        } else {
            self.bump();
            let two = |l: &mut Self, next: u8, yes: Tok, no: Tok| {
                if l.peek() == Some(next) {
                    l.bump();
                    yes
                } else {
                    no
                }
            };
            match c {
                b'+' => Tok::Plus,
                b'-' => Tok::Minus,
                b'*' => Tok::Star,
                b'/' => Tok::Slash,
                b'%' => Tok::Percent,
                b'^' => Tok::Caret,
                b'.' => Tok::Dot,
                b',' => Tok::Comma,
                b';' => Tok::Semi,
                b'(' => Tok::LParen,
                b')' => Tok::RParen,
                b'{' => Tok::LBrace,
                b'}' => Tok::RBrace,
                b'[' => Tok::LBracket,
                b']' => Tok::RBracket,
                b'=' => two(self, b'=', Tok::EqEq, Tok::Assign),
                b'<' => two(self, b'=', Tok::Le, Tok::Lt),
                b'>' => two(self, b'=', Tok::Ge, Tok::Gt),
                b'!' => two(self, b'=', Tok::NotEq, Tok::Not),
                b'&' if self.peek() == Some(b'&') => {
                    self.bump();
                    Tok::And
                }
                b'|' if self.peek() == Some(b'|') => {
                    self.bump();
                    Tok::Or
                }
                _ => {
                    let ch = std::str::from_utf8(&self.src[self.at - 1..])
                        .ok()
                        .and_then(|s| s.chars().next())
                        .unwrap_or(c as char);
                    return Err(Self::err(pos, format!("unexpected character `{ch}`")));
                }
            }
        };
        Ok(Token { tok, pos })
    }
}

/// Splits source text into tokens. The last token is always [`Tok::Eof`].
pub fn tokenize(src: &str) -> Result<Vec<Token>, LexError> {
    let mut lx = Lexer {
        src: src.as_bytes(),
        at: 0,
        line: 1,
        col: 1,
    };
    let mut out = Vec::new();
    loop {
        let t = lx.next()?;
        let end = t.tok == Tok::Eof;
        out.push(t);
        if end {
            return Ok(out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<Tok> {
        tokenize(s).unwrap().into_iter().map(|t| t.tok).collect()
    }

    #[test]
    fn simple_assignment() {
        assert_eq!(
            toks("x = 1"),
            vec![Tok::Ident("x".into()), Tok::Assign, Tok::Int(1), Tok::Eof]
        );
    }

    #[test]
    fn float_exponent() {
        assert_eq!(toks("1.5e2"), vec![Tok::Float(150.0), Tok::Eof]);
        assert_eq!(toks("2e-1"), vec![Tok::Float(0.2), Tok::Eof]);
        // `x.y` on an integer is member access, not a float
        assert_eq!(
            toks("3.foo"),
            vec![Tok::Int(3), Tok::Dot, Tok::Ident("foo".into()), Tok::Eof]
        );
    }

    #[test]
    fn bad_char_position() {
        let e = tokenize("@").unwrap_err();
        assert_eq!(e.pos, Pos { line: 1, col: 1 });
        let e = tokenize("x = 1\n  $").unwrap_err();
        assert_eq!(e.pos, Pos { line: 2, col: 3 });
    }

    #[test]
    fn comments_and_strings() {
        assert_eq!(
            toks("# hi\n'a\\n' \"b\" # tail"),
            vec![Tok::Str("a\n".into()), Tok::Str("b".into()), Tok::Eof]
        );
        assert!(tokenize("\"open").is_err());
    }

    #[test]
    fn operators() {
        assert_eq!(
            toks("a<=b != c && !d || e ^ 2"),
            vec![
                Tok::Ident("a".into()),
                Tok::Le,
                Tok::Ident("b".into()),
                Tok::NotEq,
                Tok::Ident("c".into()),
                Tok::And,
                Tok::Not,
                Tok::Ident("d".into()),
                Tok::Or,
                Tok::Ident("e".into()),
                Tok::Caret,
                Tok::Int(2),
                Tok::Eof
            ]
        );
    }
}
