//! Instruction set and the two binary encodings.
//!
//! Narrow encoding (what the VM runs): one opcode byte, optionally followed
//! by a 2-byte little-endian operand. Wide encoding (compiler output, the
//! input of [`narrow`](super::narrow)): identical except that `PUSHI` carries
//! an `i32` and `PUSHF` an `f32`.
//!
//! Jump operands are signed offsets relative to the jump's own address.
//! `PUSHL` operands are absolute code offsets.

use std::fmt;

use thiserror::Error;

use crate::strings::StringTable;
use crate::value::{StrId, F16};

macro_rules! opcodes {
    ($($name:ident = $code:literal, $mnemonic:literal, $kind:ident;)*) => {
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
        #[repr(u8)]
        pub enum Op {
            $($name = $code,)*
        }

        impl Op {
            pub const ALL: &'static [Op] = &[$(Op::$name,)*];

            pub fn from_byte(b: u8) -> Option<Op> {
                match b {
                    $($code => Some(Op::$name),)*
                    _ => None,
                }
            }

            pub fn mnemonic(self) -> &'static str {
                match self {
                    $(Op::$name => $mnemonic,)*
                }
            }

            pub fn from_mnemonic(s: &str) -> Option<Op> {
                match s {
                    $($mnemonic => Some(Op::$name),)*
                    _ => None,
                }
            }

            pub fn operand(self) -> OperandKind {
                match self {
                    $(Op::$name => OperandKind::$kind,)*
                }
            }
        }
    };
}

opcodes! {
    Nop = 0, "NOP", None;
    Done = 1, "DONE", None;
    PushNil = 2, "PUSHNIL", None;
    PushI = 3, "PUSHI", Int;
    PushF = 4, "PUSHF", Float;
    PushS = 5, "PUSHS", Str;
    PushT = 6, "PUSHT", None;
    PushL = 7, "PUSHL", Closure;
    Dup = 8, "DUP", None;
    Pop = 9, "POP", None;
    LLoad = 10, "LLOAD", Local;
    LStore = 11, "LSTORE", Local;
    GLoad = 12, "GLOAD", Str;
    GStore = 13, "GSTORE", Str;
    TGet = 14, "TGET", None;
    TPut = 15, "TPUT", None;
    Add = 16, "ADD", None;
    Sub = 17, "SUB", None;
    Mul = 18, "MUL", None;
    Div = 19, "DIV", None;
    Mod = 20, "MOD", None;
    Pow = 21, "POW", None;
    Neg = 22, "NEG", None;
    And = 23, "AND", None;
    Or = 24, "OR", None;
    Not = 25, "NOT", None;
    Eq = 26, "EQ", None;
    Neq = 27, "NEQ", None;
    Lt = 28, "LT", None;
    Lte = 29, "LTE", None;
    Gt = 30, "GT", None;
    Gte = 31, "GTE", None;
    Jump = 32, "JUMP", Jump;
    JumpZ = 33, "JUMPZ", Jump;
    JumpNZ = 34, "JUMPNZ", Jump;
    Call = 35, "CALL", Argc;
    Ret0 = 36, "RET0", None;
    Ret1 = 37, "RET1", None;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OperandKind {
    None,
    Int,
    Float,
    Str,
    Local,
    Jump,
    Closure,
    Argc,
}

impl Op {
    /// `(pops, pushes)` on the operand stack. `CALL n` pops the callee and
    /// its `n` arguments and leaves the return value.
    pub fn stack_effect(self, operand: u16) -> (usize, usize) {
        use Op::*;
        match self {
            Nop | Done | Jump => (0, 0),
            PushNil | PushI | PushF | PushS | PushT | PushL | LLoad | GLoad => (0, 1),
            Dup => (1, 2),
            Pop | LStore | GStore | JumpZ | JumpNZ => (1, 0),
            TGet => (2, 1),
            TPut => (3, 0),
            Add | Sub | Mul | Div | Mod | Pow | And | Or | Eq | Neq | Lt | Lte | Gt | Gte => (2, 1),
            Neg | Not => (1, 1),
            Call => (operand as usize + 1, 1),
            Ret0 => (0, 1),
            Ret1 => (1, 1),
        }
    }

    pub fn is_jump(self) -> bool {
        self.operand() == OperandKind::Jump
    }
}

/// Operand of a decoded instruction. Targets are instruction indices so a
/// program can be re-encoded at either width.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Arg {
    None,
    Int(i32),
    /// Raw half-precision bits, preserved exactly.
    Half(u16),
    Single(f32),
    Str(StrId),
    Index(u16),
    Target(usize),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Instr {
    pub op: Op,
    pub arg: Arg,
}

impl Instr {
    pub fn new(op: Op) -> Instr {
        Instr { op, arg: Arg::None }
    }

    pub fn with(op: Op, arg: Arg) -> Instr {
        Instr { op, arg }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Width {
    Narrow,
    Wide,
}

impl Width {
    fn magic(self) -> &'static [u8; 4] {
        match self {
            Width::Narrow => b"NBO1",
            Width::Wide => b"WBO1",
        }
    }

    pub fn instr_size(self, op: Op) -> usize {
        match (op.operand(), self) {
            (OperandKind::None, _) => 1,
            (OperandKind::Int | OperandKind::Float, Width::Wide) => 5,
            _ => 3,
        }
    }
}

/// A width-independent program: string table, instruction list, entry.
#[derive(Clone, Debug, PartialEq)]
pub struct Program {
    pub strings: StringTable,
    pub code: Vec<Instr>,
    pub entry: usize,
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum EncodeError {
    #[error("integer immediate {value} at instruction {index} does not fit in 16 bits")]
    NarrowOverflow { index: usize, value: i32 },
    #[error("jump at instruction {index} spans {distance} bytes, beyond the 16-bit range")]
    JumpRange { index: usize, distance: i64 },
    #[error("instruction {index}: target {target} is not an instruction")]
    BadTarget { index: usize, target: usize },
    #[error("instruction {index}: operand does not match {op}")]
    BadOperand { index: usize, op: &'static str },
    #[error("code section of {0} bytes exceeds 65535")]
    CodeTooLarge(usize),
    #[error("entry {0} is not an instruction")]
    BadEntry(usize),
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ImageError {
    #[error("bad magic, expected {expected}")]
    BadMagic { expected: &'static str },
    #[error("image truncated at byte {0}")]
    Truncated(usize),
    #[error("native string {0} does not match this runtime")]
    NativeMismatch(StrId),
    #[error("string table has {0} entries, fewer than the native set")]
    MissingNatives(usize),
    #[error("unknown opcode {byte:#04x} at offset {offset}")]
    UnknownOpcode { offset: usize, byte: u8 },
    #[error("operand truncated at offset {0}")]
    TruncatedOperand(usize),
    #[error("instruction at offset {offset} targets {target}, not an instruction boundary")]
    BadTarget { offset: usize, target: i64 },
    #[error("instruction at offset {offset} names string {id}, table has {count}")]
    BadString {
        offset: usize,
        id: StrId,
        count: usize,
    },
    #[error("entry offset {0} is not an instruction boundary")]
    BadEntry(usize),
    #[error("{0} trailing bytes after image")]
    Trailing(usize),
    #[error("duplicate string in table at id {0}")]
    DuplicateString(StrId),
    #[error("string too long")]
    StringTooLong,
}

impl Program {
    fn offsets(&self, width: Width) -> Vec<usize> {
        let mut offs = Vec::with_capacity(self.code.len() + 1);
        let mut at = 0;
        for i in &self.code {
            offs.push(at);
            at += width.instr_size(i.op);
        }
        offs.push(at);
        offs
    }

    /// Encodes the instruction stream and returns `(code, entry_offset)`.
    pub fn encode_code(&self, width: Width) -> Result<(Vec<u8>, usize), EncodeError> {
        let offs = self.offsets(width);
        let total = *offs.last().expect("offsets has a sentinel");
        if total > u16::MAX as usize {
            return Err(EncodeError::CodeTooLarge(total));
        }
        let n = self.code.len();
        if self.entry >= n && !(n == 0 && self.entry == 0) {
            return Err(EncodeError::BadEntry(self.entry));
        }
        let mut out = Vec::with_capacity(total);
        for (index, ins) in self.code.iter().enumerate() {
            out.push(ins.op as u8);
            let bad = || EncodeError::BadOperand {
                index,
                op: ins.op.mnemonic(),
            };
            let target = |t: usize| {
                if t < n {
                    Ok(offs[t])
                } else {
                    Err(EncodeError::BadTarget { index, target: t })
                }
            };
            match (ins.op.operand(), ins.arg) {
                (OperandKind::None, Arg::None) => {}
                (OperandKind::Int, Arg::Int(v)) => match width {
                    Width::Wide => out.extend_from_slice(&v.to_le_bytes()),
                    Width::Narrow => {
                        let v16 = i16::try_from(v)
                            .map_err(|_| EncodeError::NarrowOverflow { index, value: v })?;
                        out.extend_from_slice(&v16.to_le_bytes());
                    }
                },
                (OperandKind::Float, Arg::Half(bits)) => match width {
                    Width::Narrow => out.extend_from_slice(&bits.to_le_bytes()),
                    Width::Wide => {
                        out.extend_from_slice(&F16::from_bits(bits).to_f32().to_le_bytes())
                    }
                },
                (OperandKind::Float, Arg::Single(f)) => match width {
                    Width::Narrow => {
                        out.extend_from_slice(&F16::from_f32(f).to_bits().to_le_bytes())
                    }
                    Width::Wide => out.extend_from_slice(&f.to_le_bytes()),
                },
                (OperandKind::Str, Arg::Str(s)) => out.extend_from_slice(&s.to_le_bytes()),
                (OperandKind::Local | OperandKind::Argc, Arg::Index(i)) => {
                    out.extend_from_slice(&i.to_le_bytes())
                }
                (OperandKind::Jump, Arg::Target(t)) => {
                    let distance = target(t)? as i64 - offs[index] as i64;
                    let rel = i16::try_from(distance)
                        .map_err(|_| EncodeError::JumpRange { index, distance })?;
                    out.extend_from_slice(&rel.to_le_bytes());
                }
                (OperandKind::Closure, Arg::Target(t)) => {
                    out.extend_from_slice(&(target(t)? as u16).to_le_bytes())
                }
                _ => return Err(bad()),
            }
        }
        let entry = if n == 0 { 0 } else { offs[self.entry] };
        Ok((out, entry))
    }

    /// Serializes to a `.nbo` (narrow) or `.wbo` (wide) file.
    pub fn to_bytes(&self, width: Width) -> Result<Vec<u8>, EncodeError> {
        let (code, entry) = self.encode_code(width)?;
        let mut out = Vec::new();
        out.extend_from_slice(width.magic());
        out.extend_from_slice(&(self.strings.len() as u16).to_le_bytes());
        for (_, text) in self.strings.iter() {
            out.push(text.len() as u8);
            out.extend_from_slice(text);
        }
        match width {
            Width::Narrow => {
                out.extend_from_slice(&(code.len() as u16).to_le_bytes());
                out.extend_from_slice(&code);
                out.extend_from_slice(&(entry as u16).to_le_bytes());
            }
            Width::Wide => {
                out.extend_from_slice(&(code.len() as u32).to_le_bytes());
                out.extend_from_slice(&code);
                out.extend_from_slice(&(entry as u32).to_le_bytes());
            }
        }
        Ok(out)
    }

    /// Parses a `.nbo` or `.wbo` file, validating every operand.
    pub fn from_bytes(bytes: &[u8], width: Width) -> Result<Program, ImageError> {
        let (strings, code, entry) = split_image(bytes, width)?;
        Program::decode_code(strings, code, entry, width).map(|(p, _)| p)
    }

    /// Decodes a code section. Also returns the byte offset of each
    /// instruction.
    pub fn decode_code(
        strings: StringTable,
        code: &[u8],
        entry: usize,
        width: Width,
    ) -> Result<(Program, Vec<usize>), ImageError> {
        struct Raw {
            op: Op,
            offset: usize,
            operand: [u8; 4],
        }
        let mut raw = Vec::new();
        let mut at = 0;
        while at < code.len() {
            let op = Op::from_byte(code[at]).ok_or(ImageError::UnknownOpcode {
                offset: at,
                byte: code[at],
            })?;
            let size = width.instr_size(op);
            if at + size > code.len() {
                return Err(ImageError::TruncatedOperand(at));
            }
            let mut operand = [0; 4];
            operand[..size - 1].copy_from_slice(&code[at + 1..at + size]);
            raw.push(Raw {
                op,
                offset: at,
                operand,
            });
            at += size;
        }
        let offsets: Vec<usize> = raw.iter().map(|r| r.offset).collect();
        let index_of = |off: i64| -> Option<usize> {
            usize::try_from(off)
                .ok()
                .and_then(|o| offsets.binary_search(&o).ok())
        };
        let count = strings.len();
        let mut instrs = Vec::with_capacity(raw.len());
        for r in &raw {
            let o16 = u16::from_le_bytes([r.operand[0], r.operand[1]]);
            let arg = match r.op.operand() {
                OperandKind::None => Arg::None,
                OperandKind::Int => match width {
                    Width::Narrow => Arg::Int(o16 as i16 as i32),
                    Width::Wide => Arg::Int(i32::from_le_bytes(r.operand)),
                },
                OperandKind::Float => match width {
                    Width::Narrow => Arg::Half(o16),
                    Width::Wide => Arg::Single(f32::from_le_bytes(r.operand)),
                },
                OperandKind::Str => {
                    if o16 as usize >= count {
                        return Err(ImageError::BadString {
                            offset: r.offset,
                            id: o16,
                            count,
                        });
                    }
                    Arg::Str(o16)
                }
                OperandKind::Local | OperandKind::Argc => Arg::Index(o16),
                OperandKind::Jump => {
                    let target = r.offset as i64 + o16 as i16 as i64;
                    Arg::Target(index_of(target).ok_or(ImageError::BadTarget {
                        offset: r.offset,
                        target,
                    })?)
                }
                OperandKind::Closure => {
                    Arg::Target(index_of(o16 as i64).ok_or(ImageError::BadTarget {
                        offset: r.offset,
                        target: o16 as i64,
                    })?)
                }
            };
            instrs.push(Instr { op: r.op, arg });
        }
        let entry = if instrs.is_empty() && entry == 0 {
            0
        } else {
            index_of(entry as i64).ok_or(ImageError::BadEntry(entry))?
        };
        Ok((
            Program {
                strings,
                code: instrs,
                entry,
            },
            offsets,
        ))
    }
}

struct Reader<'a> {
    b: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ImageError> {
        if self.at + n > self.b.len() {
            return Err(ImageError::Truncated(self.at));
        }
        let s = &self.b[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, ImageError> {
        let s = self.take(2)?;
        Ok(u16::from_le_bytes([s[0], s[1]]))
    }

    fn u32(&mut self) -> Result<u32, ImageError> {
        let s = self.take(4)?;
        Ok(u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
    }
}

/// Splits an image file into its string table, code bytes and entry offset.
pub(crate) fn split_image(
    bytes: &[u8],
    width: Width,
) -> Result<(StringTable, &[u8], usize), ImageError> {
    let mut r = Reader { b: bytes, at: 0 };
    if r.take(4).ok() != Some(width.magic().as_slice()) {
        return Err(ImageError::BadMagic {
            expected: std::str::from_utf8(width.magic()).expect("ascii magic"),
        });
    }
    let count = r.u16()? as usize;
    if count < crate::strings::NATIVE_COUNT as usize {
        return Err(ImageError::MissingNatives(count));
    }
    let mut strings = StringTable::new();
    for id in 0..count {
        let len = r.take(1)?[0] as usize;
        let text = r.take(len)?;
        if id < crate::strings::NATIVE_COUNT as usize {
            if strings.lookup(id as StrId).ok() != Some(text) {
                return Err(ImageError::NativeMismatch(id as StrId));
            }
        } else {
            if strings.find(text).is_some() {
                return Err(ImageError::DuplicateString(id as StrId));
            }
            strings
                .push_raw(text.to_vec())
                .map_err(|_| ImageError::StringTooLong)?;
        }
    }
    let code_len = match width {
        Width::Narrow => r.u16()? as usize,
        Width::Wide => r.u32()? as usize,
    };
    let code = r.take(code_len)?;
    let entry = match width {
        Width::Narrow => r.u16()? as usize,
        Width::Wide => r.u32()? as usize,
    };
    if r.at != bytes.len() {
        return Err(ImageError::Trailing(bytes.len() - r.at));
    }
    Ok((strings, code, entry))
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mnemonic())
    }
}
