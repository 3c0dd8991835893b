//! Wide-to-narrow translation.
//!
//! Integer immediates shrink from 32 to 16 bits, float immediates are
//! re-encoded as half precision, and user strings that no `PUSHS`, `GLOAD`
//! or `GSTORE` operand names are dropped. Surviving strings keep their
//! relative order and are renumbered.

use thiserror::Error;

use super::image::Image;
use super::isa::{Arg, EncodeError, ImageError, Instr, Op, OperandKind, Program, Width};
use crate::strings::{StringTable, NATIVE_COUNT};
use crate::value::{StrId, F16};

#[derive(Clone, Debug, PartialEq, Error)]
pub enum NarrowError {
    #[error("integer immediate {value} at wide offset {offset} (instruction {index}) does not fit in 16 bits")]
    NarrowOverflow {
        offset: usize,
        index: usize,
        value: i32,
    },
    #[error("wide image: {0}")]
    Image(#[from] ImageError),
    #[error("narrow encoding: {0}")]
    Encode(EncodeError),
}

/// Ids of strings that some instruction operand names.
pub fn referenced_strings(p: &Program) -> Vec<bool> {
    let mut used = vec![false; p.strings.len()];
    for i in &p.code {
        if let (OperandKind::Str, Arg::Str(s)) = (i.op.operand(), i.arg) {
            if let Some(u) = used.get_mut(s as usize) {
                *u = true;
            }
        }
    }
    used
}

pub fn narrow_translate(wide: &Program) -> Result<Program, NarrowError> {
    let used = referenced_strings(wide);
    let mut strings = StringTable::new();
    let mut remap: Vec<Option<StrId>> = vec![None; wide.strings.len()];
    for (id, text) in wide.strings.iter() {
        if id < NATIVE_COUNT {
            remap[id as usize] = Some(id);
        } else if used[id as usize] {
            let new = strings
                .push_raw(text.to_vec())
                .expect("a subset of a valid table fits");
            remap[id as usize] = Some(new);
        }
    }
    let mut offset = 0;
    let mut code = Vec::with_capacity(wide.code.len());
    for (index, ins) in wide.code.iter().enumerate() {
        let arg = match ins.arg {
            Arg::Int(v) if ins.op == Op::PushI => {
                if i16::try_from(v).is_err() {
                    return Err(NarrowError::NarrowOverflow {
                        offset,
                        index,
                        value: v,
                    });
                }
                Arg::Int(v)
            }
            Arg::Single(f) => Arg::Half(F16::from_f32(f).to_bits()),
            Arg::Str(s) => Arg::Str(remap[s as usize].expect("referenced strings survive")),
            other => other,
        };
        code.push(Instr { op: ins.op, arg });
        offset += Width::Wide.instr_size(ins.op);
    }
    let out = Program {
        strings,
        code,
        entry: wide.entry,
    };
    // validate the narrow encoding (jump ranges only shrink, but be sure)
    out.encode_code(Width::Narrow)
        .map_err(NarrowError::Encode)?;
    Ok(out)
}

/// `.wbo` bytes to `.nbo` bytes.
pub fn narrow_bytes(wide: &[u8]) -> Result<Vec<u8>, NarrowError> {
    let p = Program::from_bytes(wide, Width::Wide)?;
    let n = narrow_translate(&p)?;
    Ok(Image::from_program(&n)
        .map_err(NarrowError::Encode)?
        .to_bytes())
}
