//! The generated-program language: lexer, parser and sandboxed interpreter.

pub mod ast;
pub mod interp;
pub mod lexer;
pub mod parser;
pub mod value;

pub use ast::{Location, Program};
pub use interp::{
    execute, stringify_answer, ExecutionResult, InterpreterLimits, Outcome, PrimitiveCall,
    Primitives, RuntimeError, RuntimeErrorKind,
};
pub use lexer::{tokenize, LexError, Token, TokenKind};
pub use parser::{
    parse, parse_source, parse_with, CallWhitelist, ParseError, SyntaxError, BUILTINS, PRIMITIVES,
};
pub use value::{format_float, ImageHandle, Value};

use crate::config::Flavor;

/// Visual primitives documented for a prompt flavor, in API-doc order.
pub fn flavor_primitives(flavor: Flavor, extended: bool) -> Vec<&'static str> {
    let mut names = match flavor {
        Flavor::SingleImage => vec!["query", "get_pos"],
        Flavor::MultiImage => vec!["query", "find_matching_image", "get_pos"],
    };
    if extended {
        names.extend(["find_object", "knowledge_query"]);
    }
    names
}

/// Calls accepted by the parser for a flavor: every builtin plus the
/// flavor's documented primitives.
pub fn flavor_whitelist(flavor: Flavor, extended: bool) -> CallWhitelist {
    CallWhitelist::new(
        BUILTINS
            .iter()
            .copied()
            .chain(flavor_primitives(flavor, extended)),
    )
}

/// Parses source with a specific whitelist.
pub fn parse_source_with(source: &str, whitelist: &CallWhitelist) -> Result<Program, SyntaxError> {
    let tokens = tokenize(source)?;
    Ok(parse_with(&tokens, whitelist)?)
}

#[cfg(test)]
mod program_tests;
