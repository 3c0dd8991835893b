//! Validated narrow bytecode image, the unit the VM loads.
//!
//! File layout (`.nbo`, little-endian): magic `NBO1`, string count (2 B),
//! strings in id order (1 B length + bytes each, natives first), code
//! length (2 B), code bytes, entry offset (2 B).

use super::isa::{split_image, EncodeError, ImageError, Program, Width};
use crate::strings::StringTable;
use crate::value::StrId;

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    strings: StringTable,
    code: Vec<u8>,
    entry: u16,
    /// `boundary[o]` is true when an instruction starts at byte `o`.
    boundary: Vec<bool>,
}

impl Image {
    pub fn from_bytes(bytes: &[u8]) -> Result<Image, ImageError> {
        let (strings, code, entry) = split_image(bytes, Width::Narrow)?;
        let code = code.to_vec();
        let (_, offsets) = Program::decode_code(strings.clone(), &code, entry, Width::Narrow)?;
        Ok(Image::assemble_parts(strings, code, entry as u16, &offsets))
    }

    pub fn from_program(p: &Program) -> Result<Image, EncodeError> {
        let (code, entry) = p.encode_code(Width::Narrow)?;
        let mut offsets = Vec::with_capacity(p.code.len());
        let mut at = 0;
        for i in &p.code {
            offsets.push(at);
            at += Width::Narrow.instr_size(i.op);
        }
        Ok(Image::assemble_parts(
            p.strings.clone(),
            code,
            entry as u16,
            &offsets,
        ))
    }

    fn assemble_parts(strings: StringTable, code: Vec<u8>, entry: u16, offsets: &[usize]) -> Image {
        let mut boundary = vec![false; code.len()];
        for &o in offsets {
            boundary[o] = true;
        }
        Image {
            strings,
            code,
            entry,
            boundary,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.program()
            .to_bytes(Width::Narrow)
            .expect("a validated image re-encodes")
    }

    /// Decoded instruction view.
    pub fn program(&self) -> Program {
        Program::decode_code(
            self.strings.clone(),
            &self.code,
            self.entry as usize,
            Width::Narrow,
        )
        .expect("image was validated")
        .0
    }

    pub fn strings(&self) -> &StringTable {
        &self.strings
    }

    pub fn code(&self) -> &[u8] {
        &self.code
    }

    pub fn entry(&self) -> u16 {
        self.entry
    }

    pub fn is_boundary(&self, offset: usize) -> bool {
        self.boundary.get(offset).copied().unwrap_or(false)
    }

    pub fn find_string(&self, text: &str) -> Option<StrId> {
        self.strings.find(text)
    }

    /// Size of the serialized file in bytes.
    pub fn file_size(&self) -> usize {
        let strings: usize = self.strings.iter().map(|(_, t)| 1 + t.len()).sum();
        4 + 2 + strings + 2 + self.code.len() + 2
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::asm::assemble;

    #[test]
    fn file_roundtrip() {
        let p = assemble("PUSHS \"hi\"\nGSTORE \"x\"\nDONE", Width::Narrow).unwrap();
        let img = Image::from_program(&p).unwrap();
        let bytes = img.to_bytes();
        assert_eq!(bytes.len(), img.file_size());
        assert_eq!(&bytes[..4], b"NBO1");
        assert_eq!(Image::from_bytes(&bytes).unwrap(), img);
    }

    #[test]
    fn rejects_bad_files() {
        assert!(matches!(
            Image::from_bytes(b"XXXX"),
            Err(ImageError::BadMagic { .. })
        ));
        let p = assemble("DONE", Width::Narrow).unwrap();
        let mut bytes = Image::from_program(&p).unwrap().to_bytes();
        bytes.push(0);
        assert_eq!(Image::from_bytes(&bytes), Err(ImageError::Trailing(1)));
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(
            Image::from_bytes(&bytes),
            Err(ImageError::Truncated(_))
        ));
    }
}
