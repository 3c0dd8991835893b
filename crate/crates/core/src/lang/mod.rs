//! Script front end and bytecode tooling.

pub mod asm;
pub mod ast;
pub mod codegen;
pub mod image;
pub mod isa;
pub mod lexer;
pub mod narrow;
pub mod parser;

use thiserror::Error;

pub use codegen::CompileOptions;
pub use image::Image;
pub use isa::{Arg, Instr, Op, Program, Width};
pub use lexer::Pos;

#[derive(Clone, Debug, PartialEq, Error)]
pub enum CompileError {
    #[error(transparent)]
    Syntax(#[from] parser::SyntaxError),
    #[error(transparent)]
    Codegen(#[from] codegen::CodegenError),
    #[error("{pos}: {source}")]
    Narrow {
        pos: Pos,
        source: narrow::NarrowError,
    },
}

impl CompileError {
    pub fn pos(&self) -> Pos {
        match self {
            CompileError::Syntax(e) => e.pos(),
            CompileError::Codegen(e) => e.pos,
            CompileError::Narrow { pos, .. } => *pos,
        }
    }
}

/// Source to wide program, keeping debug names.
pub fn compile_wide(src: &str, opts: &CompileOptions) -> Result<codegen::Compiled, CompileError> {
    let script = parser::parse_source(src)?;
    Ok(codegen::generate(&script, opts)?)
}

/// Source to a runnable narrow image.
pub fn compile(src: &str, opts: &CompileOptions) -> Result<Image, CompileError> {
    let wide = compile_wide(src, opts)?;
    let at = |index: usize| wide.positions.get(index).copied().unwrap_or_default();
    let narrow = narrow::narrow_translate(&wide.program).map_err(|source| {
        let pos = match &source {
            narrow::NarrowError::NarrowOverflow { index, .. } => at(*index),
            _ => Pos::default(),
        };
        CompileError::Narrow { pos, source }
    })?;
    Image::from_program(&narrow).map_err(|e| CompileError::Narrow {
        pos: Pos::default(),
        source: narrow::NarrowError::Encode(e),
    })
}
