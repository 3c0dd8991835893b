//! Text assembly.
//!
//! ```text
//! ; comment
//! .string "unused"      ; reserve a user string id, in order
//! .entry start          ; entry label (defaults to the first instruction)
//! start:
//!     PUSHI 5
//!     PUSHF 1.5         ; or raw bits: PUSHF 0x3e00
//!     GSTORE "x"
//!     JUMP start
//! ```
//!
//! String operands are quoted and interned in order of first appearance,
//! after any `.string` declarations. [`disassemble`] emits every user string
//! as a `.string` line so that re-assembling reproduces the image exactly.

use std::collections::HashMap;
use std::fmt::Write as _;

use thiserror::Error;

use super::isa::{Arg, Instr, Op, OperandKind, Program, Width};
use crate::strings::{StringTable, NATIVE_COUNT};
use crate::value::F16;

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("line {line}: {kind}")]
pub struct AsmError {
    pub line: usize,
    pub kind: AsmErrorKind,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum AsmErrorKind {
    #[error("unknown mnemonic `{0}`")]
    UnknownMnemonic(String),
    #[error("duplicate label `{0}`")]
    DuplicateLabel(String),
    #[error("undefined label `{0}`")]
    UndefinedLabel(String),
    #[error("operand `{0}` out of range")]
    OperandOverflow(String),
    #[error("missing operand")]
    MissingOperand,
    #[error("unexpected operand `{0}`")]
    UnexpectedOperand(String),
    #[error("malformed operand `{0}`")]
    BadOperand(String),
    #[error("unknown directive `{0}`")]
    UnknownDirective(String),
    #[error("bad string literal")]
    BadString,
    #[error("string table: {0}")]
    Strings(String),
}

enum Pending {
    Resolved(Arg),
    Label(String),
}

/// Assembles `text` into a program. `width` decides the range and encoding
/// of `PUSHI`/`PUSHF` immediates.
pub fn assemble(text: &str, width: Width) -> Result<Program, AsmError> {
    let mut strings = StringTable::new();
    let mut labels: HashMap<String, usize> = HashMap::new();
    let mut code: Vec<(Op, Pending, usize)> = Vec::new();
    let mut entry_label: Option<(String, usize)> = None;

    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let err = |kind| AsmError { line, kind };
        let mut rest = strip_comment(raw).trim();
        // leading labels
        while let Some(pos) = label_end(rest) {
            let name = rest[..pos].trim();
            if labels.insert(name.to_string(), code.len()).is_some() {
                return Err(err(AsmErrorKind::DuplicateLabel(name.to_string())));
            }
            rest = rest[pos + 1..].trim();
        }
        if rest.is_empty() {
            continue;
        }
        let (head, operand) = match rest.find(char::is_whitespace) {
            Some(i) => (&rest[..i], rest[i..].trim()),
            None => (rest, ""),
        };
        if let Some(directive) = head.strip_prefix('.') {
            match directive {
                "string" => {
                    let s = parse_string(operand).ok_or(err(AsmErrorKind::BadString))?;
                    strings
                        .intern(&s)
                        .map_err(|e| err(AsmErrorKind::Strings(e.to_string())))?;
                }
                "entry" => {
                    if operand.is_empty() {
                        return Err(err(AsmErrorKind::MissingOperand));
                    }
                    entry_label = Some((operand.to_string(), line));
                }
                other => return Err(err(AsmErrorKind::UnknownDirective(other.to_string()))),
            }
            continue;
        }
        let op = Op::from_mnemonic(&head.to_ascii_uppercase())
            .ok_or_else(|| err(AsmErrorKind::UnknownMnemonic(head.to_string())))?;
        let kind = op.operand();
        if kind == OperandKind::None {
            if !operand.is_empty() {
                return Err(err(AsmErrorKind::UnexpectedOperand(operand.to_string())));
            }
            code.push((op, Pending::Resolved(Arg::None), line));
            continue;
        }
        if operand.is_empty() {
            return Err(err(AsmErrorKind::MissingOperand));
        }
        let overflow = || err(AsmErrorKind::OperandOverflow(operand.to_string()));
        let bad = || err(AsmErrorKind::BadOperand(operand.to_string()));
        let pending = match kind {
            OperandKind::Int => {
                let v = parse_int(operand).ok_or_else(bad)?;
                let ok = match width {
                    Width::Narrow => i16::try_from(v).is_ok(),
                    Width::Wide => i32::try_from(v).is_ok(),
                };
                if !ok {
                    return Err(overflow());
                }
                Pending::Resolved(Arg::Int(v as i32))
            }
            OperandKind::Float => Pending::Resolved(parse_float(operand, width).ok_or_else(bad)?),
            OperandKind::Str => {
                let s = parse_string(operand).ok_or(err(AsmErrorKind::BadString))?;
                let id = strings
                    .intern(&s)
                    .map_err(|e| err(AsmErrorKind::Strings(e.to_string())))?;
                Pending::Resolved(Arg::Str(id))
            }
            OperandKind::Local | OperandKind::Argc => {
                let v = parse_int(operand).ok_or_else(bad)?;
                Pending::Resolved(Arg::Index(u16::try_from(v).map_err(|_| overflow())?))
            }
            OperandKind::Jump | OperandKind::Closure => {
                if !is_ident(operand) {
                    return Err(bad());
                }
                Pending::Label(operand.to_string())
            }
            OperandKind::None => unreachable!(),
        };
        code.push((op, pending, line));
    }

    let mut instrs = Vec::with_capacity(code.len());
    for (op, pending, line) in code {
        let arg = match pending {
            Pending::Resolved(a) => a,
            Pending::Label(l) => Arg::Target(*labels.get(&l).ok_or(AsmError {
                line,
                kind: AsmErrorKind::UndefinedLabel(l.clone()),
            })?),
        };
        instrs.push(Instr { op, arg });
    }
    let entry = match entry_label {
        None => 0,
        Some((l, line)) => *labels.get(&l).ok_or(AsmError {
            line,
            kind: AsmErrorKind::UndefinedLabel(l.clone()),
        })?,
    };
    Ok(Program {
        strings,
        code: instrs,
        entry,
    })
}

fn strip_comment(line: &str) -> &str {
    let mut in_str = false;
    let mut escaped = false;
    for (i, c) in line.char_indices() {
        match c {
            _ if escaped => escaped = false,
            '\\' if in_str => escaped = true,
            '"' => in_str = !in_str,
            ';' if !in_str => return &line[..i],
            _ => {}
        }
    }
    line
}

fn label_end(s: &str) -> Option<usize> {
    let pos = s.find(':')?;
    is_ident(s[..pos].trim()).then_some(pos)
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn parse_int(s: &str) -> Option<i64> {
    let (neg, body) = match s.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, s),
    };
    let v = if let Some(hex) = body.strip_prefix("0x") {
        i64::from_str_radix(hex, 16).ok()?
    } else {
        body.parse::<i64>().ok()?
    };
    Some(if neg { -v } else { v })
}

fn parse_float(s: &str, width: Width) -> Option<Arg> {
    if let Some(hex) = s.strip_prefix("0x") {
        return match width {
            Width::Narrow => u16::from_str_radix(hex, 16).ok().map(Arg::Half),
            Width::Wide => u32::from_str_radix(hex, 16)
                .ok()
                .map(|b| Arg::Single(f32::from_bits(b))),
        };
    }
    let x: f64 = s.parse().ok()?;
    Some(match width {
        Width::Narrow => Arg::Half(F16::from_f64(x).to_bits()),
        Width::Wide => Arg::Single(x as f32),
    })
}

fn parse_string(s: &str) -> Option<Vec<u8>> {
    let body = s.strip_prefix('"')?.strip_suffix('"')?;
    let mut out = Vec::new();
    let mut bytes = body.bytes();
    while let Some(b) = bytes.next() {
        match b {
            b'\\' => match bytes.next()? {
                b'n' => out.push(b'\n'),
                b't' => out.push(b'\t'),
                b'\\' => out.push(b'\\'),
                b'"' => out.push(b'"'),
                b'x' => {
                    let hi = (bytes.next()? as char).to_digit(16)?;
                    let lo = (bytes.next()? as char).to_digit(16)?;
                    out.push((hi * 16 + lo) as u8);
                }
                _ => return None,
            },
            b'"' => return None,
            _ => out.push(b),
        }
    }
    Some(out)
}

fn quote(bytes: &[u8]) -> String {
    let mut s = String::from("\"");
    for &b in bytes {
        match b {
            b'\n' => s.push_str("\\n"),
            b'\t' => s.push_str("\\t"),
            b'\\' => s.push_str("\\\\"),
            b'"' => s.push_str("\\\""),
            0x20..=0x7E => s.push(b as char),
            _ => {
                let _ = write!(s, "\\x{b:02x}");
            }
        }
    }
    s.push('"');
    s
}

/// Renders a program as assembly text that [`assemble`] maps back to the
/// same program.
pub fn disassemble(p: &Program) -> String {
    let mut targets: Vec<usize> = p
        .code
        .iter()
        .filter_map(|i| match i.arg {
            Arg::Target(t) => Some(t),
            _ => None,
        })
        .collect();
    if p.entry != 0 {
        targets.push(p.entry);
    }
    targets.sort_unstable();
    targets.dedup();

    let mut out = String::new();
    for text in p.strings.user_strings() {
        let _ = writeln!(out, ".string {}", quote(text));
    }
    if p.entry != 0 {
        let _ = writeln!(out, ".entry L{}", p.entry);
    }
    for (i, ins) in p.code.iter().enumerate() {
        if targets.binary_search(&i).is_ok() {
            let _ = writeln!(out, "L{i}:");
        }
        let _ = write!(out, "    {}", ins.op.mnemonic());
        match ins.arg {
            Arg::None => {}
            Arg::Int(v) => {
                let _ = write!(out, " {v}");
            }
            Arg::Half(bits) => {
                let f = F16::from_bits(bits);
                if f.is_nan() {
                    let _ = write!(out, " {bits:#06x}");
                } else {
                    let _ = write!(out, " {:?}", f.to_f64());
                }
            }
            Arg::Single(f) => {
                if f.is_nan() {
                    let _ = write!(out, " {:#010x}", f.to_bits());
                } else {
                    let _ = write!(out, " {f:?}");
                }
            }
            Arg::Str(id) => {
                let text = p.strings.lookup(id).unwrap_or(b"");
                let _ = write!(out, " {}", quote(text));
            }
            Arg::Index(v) => {
                let _ = write!(out, " {v}");
            }
            Arg::Target(t) => {
                let _ = write!(out, " L{t}");
            }
        }
        out.push('\n');
    }
    out
}

/// Number of user strings a program declares.
pub fn user_string_count(p: &Program) -> usize {
    p.strings.len() - NATIVE_COUNT as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_program_size() {
        let p = assemble("PUSHI 5\nPUSHI 2\nADD\nDONE", Width::Narrow).unwrap();
        let (code, entry) = p.encode_code(Width::Narrow).unwrap();
        assert_eq!(code.len(), 8);
        assert_eq!(entry, 0);
        // code section = 2-byte length prefix + code
        assert_eq!(2 + code.len(), 10);
    }

    #[test]
    fn operand_overflow() {
        let e = assemble("PUSHI 70000", Width::Narrow).unwrap_err();
        assert_eq!(e.line, 1);
        assert!(matches!(e.kind, AsmErrorKind::OperandOverflow(_)));
        assert!(assemble("PUSHI 70000", Width::Wide).is_ok());
        assert!(assemble("PUSHI -32768", Width::Narrow).is_ok());
    }

    #[test]
    fn label_errors() {
        let dup = assemble("a:\na:\nNOP", Width::Narrow).unwrap_err();
        assert_eq!(dup.kind, AsmErrorKind::DuplicateLabel("a".into()));
        let undef = assemble("JUMP nowhere", Width::Narrow).unwrap_err();
        assert_eq!(undef.kind, AsmErrorKind::UndefinedLabel("nowhere".into()));
        let bad = assemble("FROB 1", Width::Narrow).unwrap_err();
        assert_eq!(bad.kind, AsmErrorKind::UnknownMnemonic("FROB".into()));
    }

    #[test]
    fn strings_comments_and_labels() {
        let src = r#"
            .string "dead"
            top: PUSHS "a;b" ; trailing
            GSTORE "x"
            JUMP top
        "#;
        let p = assemble(src, Width::Narrow).unwrap();
        assert_eq!(user_string_count(&p), 3);
        assert_eq!(p.strings.text(NATIVE_COUNT + 1), "a;b");
        assert_eq!(p.code[2].arg, Arg::Target(0));
    }

    #[test]
    fn disassembly_reassembles_identically() {
        let src = r#"
            .entry main
            f: LLOAD 0
               RET1
            main: PUSHL f
               PUSHF 1.5
               PUSHF 0x7c01
               PUSHS "q\"uote\n"
               CALL 1
               JUMPZ main
               DONE
        "#;
        let p = assemble(src, Width::Narrow).unwrap();
        let text = disassemble(&p);
        let q = assemble(&text, Width::Narrow).unwrap();
        assert_eq!(p, q);
        assert_eq!(
            p.to_bytes(Width::Narrow).unwrap(),
            q.to_bytes(Width::Narrow).unwrap()
        );
    }
}
