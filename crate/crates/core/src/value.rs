//! The 16-bit value model shared by the heap, the interpreter and the wire
//! format.
//!
//! Every datum is a tag plus a 16-bit payload. Integers are two's-complement
//! `i16` with wrapping arithmetic; floats are IEEE 754 binary16 encoded by
//! [`F16`].

use std::cmp::Ordering;
use std::fmt;

use thiserror::Error;

/// Identifier of an interned string.
pub type StrId = u16;

/// Index of a 3-byte object slot in the heap.
pub type ObjIdx = u16;

/// Half-precision float stored as its raw bit pattern (1 sign, 5 exponent,
/// 10 mantissa bits).
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct F16(u16);

impl F16 {
    pub const ZERO: F16 = F16(0x0000);
    pub const ONE: F16 = F16(0x3C00);
    pub const INFINITY: F16 = F16(0x7C00);
    pub const NEG_INFINITY: F16 = F16(0xFC00);
    /// Canonical quiet NaN produced by every NaN input.
    pub const NAN: F16 = F16(0x7E00);
    /// Largest finite value, 65504.
    pub const MAX: F16 = F16(0x7BFF);

    pub const fn from_bits(bits: u16) -> F16 {
        F16(bits)
    }

    pub const fn to_bits(self) -> u16 {
        self.0
    }

    /// Rounds `x` to the nearest representable half, ties to even.
    ///
    /// Rounding is done once, directly from the `f64` bit pattern, so there
    /// is no double-rounding through `f32`. Values beyond the finite range
    /// round to the signed infinity.
    pub fn from_f64(x: f64) -> F16 {
        let bits = x.to_bits();
        let sign = ((bits >> 48) & 0x8000) as u16;
        let exp = ((bits >> 52) & 0x7FF) as i32;
        let man = bits & 0x000F_FFFF_FFFF_FFFF;

        if exp == 0x7FF {
            return if man == 0 {
                F16(sign | 0x7C00)
            } else {
                F16::NAN
            };
        }
        if exp == 0 {
            // f64 subnormals are far below half's smallest subnormal (2^-24).
            return F16(sign);
        }
        let e = exp - 1023;
        if e > 15 {
            return F16(sign | 0x7C00);
        }
        let full = man | (1 << 52);
        let magnitude = if e >= -14 {
            // Normal range: the rounded 11-bit significand carries into the
            // exponent field on overflow, which also yields +inf at the top.
            (((e + 14) as u64) << 10) + round_shift(full, 42)
        } else {
            round_shift(full, (28 - e) as u32)
        };
        F16(sign | magnitude as u16)
    }

    pub fn from_f32(x: f32) -> F16 {
        F16::from_f64(x as f64)
    }

    /// Exact widening conversion.
    pub fn to_f64(self) -> f64 {
        let sign = if self.0 & 0x8000 != 0 { -1.0 } else { 1.0 };
        let exp = ((self.0 >> 10) & 0x1F) as i32;
        let man = (self.0 & 0x3FF) as f64;
        match exp {
            0 => sign * man * 2f64.powi(-24),
            0x1F if man == 0.0 => sign * f64::INFINITY,
            0x1F => f64::NAN,
            _ => sign * (1024.0 + man) * 2f64.powi(exp - 25),
        }
    }

    pub fn to_f32(self) -> f32 {
        self.to_f64() as f32
    }

    pub fn is_nan(self) -> bool {
        self.0 & 0x7C00 == 0x7C00 && self.0 & 0x03FF != 0
    }

    pub fn is_finite(self) -> bool {
        self.0 & 0x7C00 != 0x7C00
    }
}

/// `m / 2^shift`, rounded to nearest with ties to even.
fn round_shift(m: u64, shift: u32) -> u64 {
    if shift >= 64 {
        return 0;
    }
    let q = m >> shift;
    let rem = m & ((1u64 << shift) - 1);
    let half = 1u64 << (shift - 1);
    if rem > half || (rem == half && q & 1 == 1) {
        q + 1
    } else {
        q
    }
}

impl fmt::Debug for F16 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "F16({} /* {:#06x} */)", self.to_f64(), self.0)
    }
}

impl fmt::Display for F16 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.to_f64(), f)
    }
}

/// Type tag of a value. The discriminants are the 3-bit tags stored in heap
/// object metadata and on the wire.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Tag {
    Nil = 0,
    Int = 1,
    Float = 2,
    Str = 3,
    Table = 4,
    Closure = 5,
    UserClosure = 6,
}

impl Tag {
    pub fn from_u8(raw: u8) -> Option<Tag> {
        Some(match raw {
            0 => Tag::Nil,
            1 => Tag::Int,
            2 => Tag::Float,
            3 => Tag::Str,
            4 => Tag::Table,
            5 => Tag::Closure,
            6 => Tag::UserClosure,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Tag::Nil => "nil",
            Tag::Int => "int",
            Tag::Float => "float",
            Tag::Str => "string",
            Tag::Table => "table",
            Tag::Closure => "closure",
            Tag::UserClosure => "host",
        }
    }
}

/// A tagged 16-bit datum.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum Value {
    #[default]
    Nil,
    Int(i16),
    Float(F16),
    Str(StrId),
    /// Heap index of the table's header object.
    Table(ObjIdx),
    /// Code offset of a script function.
    Closure(u16),
    /// Index into the host-function registry.
    UserClosure(u16),
}

impl Value {
    pub fn tag(self) -> Tag {
        match self {
            Value::Nil => Tag::Nil,
            Value::Int(_) => Tag::Int,
            Value::Float(_) => Tag::Float,
            Value::Str(_) => Tag::Str,
            Value::Table(_) => Tag::Table,
            Value::Closure(_) => Tag::Closure,
            Value::UserClosure(_) => Tag::UserClosure,
        }
    }

    pub fn payload(self) -> u16 {
        match self {
            Value::Nil => 0,
            Value::Int(i) => i as u16,
            Value::Float(f) => f.to_bits(),
            Value::Str(s) => s,
            Value::Table(t) => t,
            Value::Closure(c) => c,
            Value::UserClosure(u) => u,
        }
    }

    pub fn from_parts(tag: Tag, payload: u16) -> Value {
        match tag {
            Tag::Nil => Value::Nil,
            Tag::Int => Value::Int(payload as i16),
            Tag::Float => Value::Float(F16::from_bits(payload)),
            Tag::Str => Value::Str(payload),
            Tag::Table => Value::Table(payload),
            Tag::Closure => Value::Closure(payload),
            Tag::UserClosure => Value::UserClosure(payload),
        }
    }

    pub fn float(x: f64) -> Value {
        Value::Float(F16::from_f64(x))
    }

    pub fn is_nil(self) -> bool {
        matches!(self, Value::Nil)
    }

    /// Numeric view used for promotion; `None` for non-numbers.
    pub fn as_f64(self) -> Option<f64> {
        match self {
            Value::Int(i) => Some(i as f64),
            Value::Float(f) => Some(f.to_f64()),
            _ => None,
        }
    }

    /// Script truthiness: nil and numeric zero are false.
    pub fn truthy(self) -> bool {
        match self {
            Value::Nil => false,
            Value::Int(i) => i != 0,
            Value::Float(f) => f.to_f64() != 0.0,
            _ => true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Error)]
pub enum ValueError {
    #[error("type mismatch: {op} on {lhs} and {rhs}")]
    TypeMismatch {
        op: &'static str,
        lhs: &'static str,
        rhs: &'static str,
    },
    #[error("division by zero")]
    DivisionByZero,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
    Div,
    Mod,
    Pow,
    Neg,
}

impl ArithOp {
    fn name(self) -> &'static str {
        match self {
            ArithOp::Add => "add",
            ArithOp::Sub => "sub",
            ArithOp::Mul => "mul",
            ArithOp::Div => "div",
            ArithOp::Mod => "mod",
            ArithOp::Pow => "pow",
            ArithOp::Neg => "neg",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Neq,
    Lt,
    Lte,
    Gt,
    Gte,
}

/// Applies an arithmetic operator. `Neg` ignores `b`.
///
/// Int with Int stays Int and wraps in 16 bits; a Float on either side
/// promotes both operands and the result is rounded once to half precision.
pub fn arith(op: ArithOp, a: Value, b: Value) -> Result<Value, ValueError> {
    let mismatch = || ValueError::TypeMismatch {
        op: op.name(),
        lhs: a.tag().name(),
        rhs: b.tag().name(),
    };
    if op == ArithOp::Neg {
        return match a {
            Value::Int(x) => Ok(Value::Int(x.wrapping_neg())),
            Value::Float(f) => Ok(Value::Float(F16::from_bits(f.to_bits() ^ 0x8000))),
            _ => Err(mismatch()),
        };
    }
    match (a, b) {
        (Value::Int(x), Value::Int(y)) => int_arith(op, x, y).map(Value::Int),
        _ => {
            let (x, y) = match (a.as_f64(), b.as_f64()) {
                (Some(x), Some(y)) => (x, y),
                _ => return Err(mismatch()),
            };
            let r = match op {
                ArithOp::Add => x + y,
                ArithOp::Sub => x - y,
                ArithOp::Mul => x * y,
                ArithOp::Div => x / y,
                ArithOp::Mod => x % y,
                ArithOp::Pow => x.powf(y),
                ArithOp::Neg => unreachable!(),
            };
            Ok(Value::float(r))
        }
    }
}

fn int_arith(op: ArithOp, x: i16, y: i16) -> Result<i16, ValueError> {
    Ok(match op {
        ArithOp::Add => x.wrapping_add(y),
        ArithOp::Sub => x.wrapping_sub(y),
        ArithOp::Mul => x.wrapping_mul(y),
        ArithOp::Div => {
            if y == 0 {
                return Err(ValueError::DivisionByZero);
            }
            x.wrapping_div(y)
        }
        ArithOp::Mod => {
            if y == 0 {
                return Err(ValueError::DivisionByZero);
            }
            x.wrapping_rem(y)
        }
        ArithOp::Pow => int_pow(x, y)?,
        ArithOp::Neg => x.wrapping_neg(),
    })
}

/// Integer power with wrapping multiplication. Negative exponents truncate
/// toward zero like `1 / x^n` would.
fn int_pow(base: i16, exp: i16) -> Result<i16, ValueError> {
    if exp < 0 {
        return match base {
            0 => Err(ValueError::DivisionByZero),
            1 => Ok(1),
            -1 => Ok(if exp % 2 == 0 { 1 } else { -1 }),
            _ => Ok(0),
        };
    }
    let mut acc: i16 = 1;
    let mut b = base;
    let mut e = exp as u16;
    while e > 0 {
        if e & 1 == 1 {
            acc = acc.wrapping_mul(b);
        }
        b = b.wrapping_mul(b);
        e >>= 1;
    }
    Ok(acc)
}

/// Numeric ordering. NaN sorts above every other number and equal to
/// itself, which keeps the relation a total preorder; `-0.0 == 0.0`.
pub fn numeric_cmp(a: Value, b: Value) -> Option<Ordering> {
    if let (Value::Int(x), Value::Int(y)) = (a, b) {
        return Some(x.cmp(&y));
    }
    let (x, y) = (a.as_f64()?, b.as_f64()?);
    Some(match (x.is_nan(), y.is_nan()) {
        (true, true) => Ordering::Equal,
        (true, false) => Ordering::Greater,
        (false, true) => Ordering::Less,
        (false, false) => x.partial_cmp(&y).expect("non-NaN operands"),
    })
}

/// Script-level equality: numbers compare numerically across Int/Float,
/// everything else by tag and payload.
pub fn values_equal(a: Value, b: Value) -> bool {
    match numeric_cmp(a, b) {
        Some(ord) => ord == Ordering::Equal,
        None => a.tag() == b.tag() && a.payload() == b.payload(),
    }
}

/// Evaluates a comparison and returns `Int 1` or `Int 0`.
pub fn compare(op: CmpOp, a: Value, b: Value) -> Result<Value, ValueError> {
    let res = match op {
        CmpOp::Eq => values_equal(a, b),
        CmpOp::Neq => !values_equal(a, b),
        _ => {
            let ord = numeric_cmp(a, b).ok_or(ValueError::TypeMismatch {
                op: "compare",
                lhs: a.tag().name(),
                rhs: b.tag().name(),
            })?;
            match op {
                CmpOp::Lt => ord == Ordering::Less,
                CmpOp::Lte => ord != Ordering::Greater,
                CmpOp::Gt => ord == Ordering::Greater,
                CmpOp::Gte => ord != Ordering::Less,
                CmpOp::Eq | CmpOp::Neq => unreachable!(),
            }
        }
    };
    Ok(Value::Int(res as i16))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float16_reference_encodings() {
        assert_eq!(F16::from_f64(0.0).to_bits(), 0x0000);
        assert_eq!(F16::from_f64(-0.0).to_bits(), 0x8000);
        assert_eq!(F16::from_f64(1.0).to_bits(), 0x3C00);
        assert_eq!(F16::from_f64(65600.0), F16::INFINITY);
        assert_eq!(F16::from_f64(-1e9), F16::NEG_INFINITY);
        assert_eq!(F16::from_f64(65504.0), F16::MAX);
        assert_eq!(F16::from_f64(f64::NAN), F16::NAN);
        // smallest subnormal and the tie just below it
        assert_eq!(F16::from_f64(2f64.powi(-24)).to_bits(), 0x0001);
        assert_eq!(F16::from_f64(2f64.powi(-25)).to_bits(), 0x0000);
        assert_eq!(F16::from_f64(1.5 * 2f64.powi(-25)).to_bits(), 0x0001);
    }

    #[test]
    fn float16_ties_to_even() {
        // 1 + 2^-11 is exactly between 1.0 and the next half (1 + 2^-10).
        assert_eq!(F16::from_f64(1.0 + 2f64.powi(-11)).to_bits(), 0x3C00);
        // 1 + 3*2^-11 ties between odd 0x3C01 and even 0x3C02.
        assert_eq!(F16::from_f64(1.0 + 3.0 * 2f64.powi(-11)).to_bits(), 0x3C02);
        // 65520 is the tie between MAX and 65536, rounds to even => inf
        assert_eq!(F16::from_f64(65520.0), F16::INFINITY);
        assert_eq!(F16::from_f64(65519.0), F16::MAX);
    }

    #[test]
    fn arith_examples() {
        use Value::*;
        assert_eq!(arith(ArithOp::Add, Int(2), Int(3)), Ok(Int(5)));
        assert_eq!(arith(ArithOp::Add, Int(32767), Int(1)), Ok(Int(-32768)));
        assert_eq!(
            arith(ArithOp::Div, Int(1), Int(0)),
            Err(ValueError::DivisionByZero)
        );
        assert_eq!(
            arith(ArithOp::Mod, Int(1), Int(0)),
            Err(ValueError::DivisionByZero)
        );
        assert_eq!(arith(ArithOp::Div, Int(-32768), Int(-1)), Ok(Int(-32768)));
        assert_eq!(
            arith(ArithOp::Add, Int(1), Value::float(0.5)),
            Ok(Value::float(1.5))
        );
        assert_eq!(arith(ArithOp::Pow, Int(2), Int(10)), Ok(Int(1024)));
        assert_eq!(arith(ArithOp::Pow, Int(2), Int(-1)), Ok(Int(0)));
        assert_eq!(arith(ArithOp::Neg, Int(-32768), Nil), Ok(Int(-32768)));
        assert!(matches!(
            arith(ArithOp::Add, Str(1), Int(1)),
            Err(ValueError::TypeMismatch { .. })
        ));
        // float division by zero follows IEEE
        assert_eq!(
            arith(ArithOp::Div, Value::float(1.0), Int(0)),
            Ok(Float(F16::INFINITY))
        );
    }

    #[test]
    fn compare_examples() {
        use Value::*;
        assert_eq!(compare(CmpOp::Eq, Nil, Nil), Ok(Int(1)));
        assert_eq!(compare(CmpOp::Lt, Int(2), Value::float(2.5)), Ok(Int(1)));
        assert!(compare(CmpOp::Lt, Str(3), Int(1)).is_err());
        assert_eq!(compare(CmpOp::Eq, Str(3), Int(3)), Ok(Int(0)));
        assert_eq!(compare(CmpOp::Eq, Int(2), Value::float(2.0)), Ok(Int(1)));
        assert_eq!(compare(CmpOp::Neq, Table(1), Table(2)), Ok(Int(1)));
        assert_eq!(
            compare(CmpOp::Eq, Value::float(0.0), Value::float(-0.0)),
            Ok(Int(1))
        );
    }
}
