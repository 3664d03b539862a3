//! Front end for the variational calculus engine: a small declaration
//! language for field-theory models, lowering into engine objects, and
//! deterministic report rendering. The `vartool` binary drives these
//! modules; they are exposed as a library so the parsing surface can be
//! tested directly.

pub mod lex;
pub mod lower;
pub mod parse;
pub mod report;
