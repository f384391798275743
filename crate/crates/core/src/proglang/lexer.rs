//! Indentation-sensitive tokenizer for generated programs.

use serde::Serialize;
use thiserror::Error;

use super::ast::Location;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum TokenKind {
    Name,
    Int,
    Float,
    /// String literal; `text` holds the decoded value.
    String,
    Op,
    Newline,
    Indent,
    Dedent,
    Keyword,
    Eof,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Token {
    pub kind: TokenKind,
    pub text: String,
    pub line: usize,
    pub column: usize,
}

impl Token {
    pub fn loc(&self) -> Location {
        Location {
            line: self.line,
            column: self.column,
        }
    }

    pub fn is_op(&self, op: &str) -> bool {
        self.kind == TokenKind::Op && self.text == op
    }

    pub fn is_keyword(&self, kw: &str) -> bool {
        self.kind == TokenKind::Keyword && self.text == kw
    }

    /// Short human-readable description used in diagnostics.
    pub fn describe(&self) -> String {
        match self.kind {
            TokenKind::Newline => "end of line".to_string(),
            TokenKind::Indent => "indent".to_string(),
            TokenKind::Dedent => "dedent".to_string(),
            TokenKind::Eof => "end of input".to_string(),
            TokenKind::String => format!("string {:?}", self.text),
            _ => format!("`{}`", self.text),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LexError {
    #[error("{loc}: unterminated string literal")]
    UnterminatedString { loc: Location },
    #[error("{loc}: dedent does not match any outer indentation level")]
    InconsistentDedent { loc: Location },
    #[error("{loc}: illegal character {ch:?}")]
    IllegalCharacter { ch: char, loc: Location },
    #[error("{loc}: invalid number literal `{text}`")]
    InvalidNumber { text: String, loc: Location },
}

/// Every Python keyword is lexed as KEYWORD so the parser can name the
/// forbidden construct in its diagnostic.
pub const KEYWORDS: &[&str] = &[
    "False", "None", "True", "and", "as", "assert", "async", "await", "break", "class", "continue",
    "def", "del", "elif", "else", "except", "finally", "for", "from", "global", "if", "import",
    "in", "is", "lambda", "nonlocal", "not", "or", "pass", "raise", "return", "try", "while",
    "with", "yield",
];

const OPERATORS: &[&str] = &[
    "**=", "//=", ">>=", "<<=", "**", "//", "==", "!=", "<=", ">=", "+=", "-=", "*=", "/=", "%=",
    "&=", "|=", "^=", "@=", "->", ":=", "<<", ">>", "+", "-", "*", "/", "%", "<", ">", "=", "(",
    ")", "[", "]", "{", "}", ",", ":", ".", ";", "@", "&", "|", "^", "~",
];

const TAB_WIDTH: usize = 8;

struct Lexer {
    chars: Vec<char>,
    pos: usize,
    line: usize,
    column: usize,
    tokens: Vec<Token>,
    indents: Vec<usize>,
    depth: usize,
}

/// Splits `source` into tokens, synthesizing NEWLINE/INDENT/DEDENT.
///
/// Blank and comment-only lines produce no tokens. Newlines inside
/// brackets are joined, as is a backslash at end of line.
pub fn tokenize(source: &str) -> Result<Vec<Token>, LexError> {
    let mut lx = Lexer {
        chars: source.chars().collect(),
        pos: 0,
        line: 1,
        column: 1,
        tokens: Vec::new(),
        indents: vec![0],
        depth: 0,
    };
    lx.run()?;
    Ok(lx.tokens)
}

impl Lexer {
    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn peek_at(&self, off: usize) -> Option<char> {
        self.chars.get(self.pos + off).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.get(self.pos).copied()?;
        self.pos += 1;
        if c == '\n' {
            self.line += 1;
            self.column = 1;
        } else {
            self.column += 1;
        }
        Some(c)
    }

    fn loc(&self) -> Location {
        Location {
            line: self.line,
            column: self.column,
        }
    }

    fn push(&mut self, kind: TokenKind, text: impl Into<String>, loc: Location) {
        self.tokens.push(Token {
            kind,
            text: text.into(),
            line: loc.line,
            column: loc.column,
        });
    }

    fn last_is_newline(&self) -> bool {
        matches!(
            self.tokens.last().map(|t| t.kind),
            None | Some(TokenKind::Newline) | Some(TokenKind::Indent) | Some(TokenKind::Dedent)
        )
    }

    fn run(&mut self) -> Result<(), LexError> {
        let mut at_line_start = true;
        loop {
            if at_line_start && self.depth == 0 {
                if !self.line_indent()? {
                    break;
                }
                at_line_start = false;
            }
            let Some(c) = self.peek() else { break };
            match c {
                '\n' => {
                    let loc = self.loc();
                    self.bump();
                    if self.depth == 0 {
                        if !self.last_is_newline() {
                            self.push(TokenKind::Newline, "", loc);
                        }
                        at_line_start = true;
                    }
                }
                ' ' | '\t' | '\r' | '\x0c' => {
                    self.bump();
                }
                '\\' if self.peek_at(1) == Some('\n') => {
                    self.bump();
                    self.bump();
                }
                '\\' if self.peek_at(1) == Some('\r') && self.peek_at(2) == Some('\n') => {
                    self.bump();
                    self.bump();
                    self.bump();
                }
                '#' => self.skip_comment(),
                '"' | '\'' => self.string(c)?,
                c if c.is_ascii_digit() => self.number()?,
                '.' if self.peek_at(1).is_some_and(|d| d.is_ascii_digit()) => self.number()?,
                c if c.is_alphabetic() || c == '_' => self.word(),
                _ => self.operator()?,
            }
        }
        let loc = self.loc();
        if !self.last_is_newline() {
            self.push(TokenKind::Newline, "", loc);
        }
        while self.indents.len() > 1 {
            self.indents.pop();
            self.push(TokenKind::Dedent, "", loc);
        }
        self.push(TokenKind::Eof, "", loc);
        Ok(())
    }

    /// Measures indentation of the next non-blank line and emits
    /// INDENT/DEDENT. Returns false at end of input.
    fn line_indent(&mut self) -> Result<bool, LexError> {
        loop {
            let mut width = 0;
            while let Some(c) = self.peek() {
                match c {
                    ' ' => width += 1,
                    '\t' => width = (width / TAB_WIDTH + 1) * TAB_WIDTH,
                    '\x0c' | '\r' => {}
                    _ => break,
                }
                self.bump();
            }
            match self.peek() {
                None => return Ok(false),
                Some('\n') => {
                    self.bump();
                    continue;
                }
                Some('#') => {
                    self.skip_comment();
                    continue;
                }
                Some(_) => {}
            }
            let loc = Location {
                line: self.line,
                column: 1,
            };
            let current = *self.indents.last().expect("indent stack never empty");
            if width > current {
                self.indents.push(width);
                self.push(TokenKind::Indent, "", loc);
            } else if width < current {
                while *self.indents.last().expect("indent stack never empty") > width {
                    self.indents.pop();
                    self.push(TokenKind::Dedent, "", loc);
                }
                if *self.indents.last().expect("indent stack never empty") != width {
                    return Err(LexError::InconsistentDedent { loc });
                }
            }
            return Ok(true);
        }
    }

    fn skip_comment(&mut self) {
        while let Some(c) = self.peek() {
            if c == '\n' {
                break;
            }
            self.bump();
        }
    }

    fn word(&mut self) {
        let loc = self.loc();
        let mut text = String::new();
        while let Some(c) = self.peek() {
            if c.is_alphanumeric() || c == '_' {
                text.push(c);
                self.bump();
            } else {
                break;
            }
        }
        let kind = if KEYWORDS.contains(&text.as_str()) {
            TokenKind::Keyword
        } else {
            TokenKind::Name
        };
        self.push(kind, text, loc);
    }

    fn number(&mut self) -> Result<(), LexError> {
        let loc = self.loc();
        let mut text = String::new();
        let mut is_float = false;
        while let Some(c) = self.peek() {
            if c.is_ascii_digit() || c == '_' {
                text.push(c);
                self.bump();
            } else if c == '.' && !is_float {
                is_float = true;
                text.push(c);
                self.bump();
            } else {
                break;
            }
        }
        if matches!(self.peek(), Some('e' | 'E')) {
            let sign = matches!(self.peek_at(1), Some('+' | '-'));
            let digit_at = if sign { 2 } else { 1 };
            if self.peek_at(digit_at).is_some_and(|d| d.is_ascii_digit()) {
                is_float = true;
                text.push(self.bump().expect("peeked"));
                if sign {
                    text.push(self.bump().expect("peeked"));
                }
                while let Some(c) = self.peek().filter(|c| c.is_ascii_digit()) {
                    text.push(c);
                    self.bump();
                }
            }
        }
        if self.peek().is_some_and(|c| c.is_alphanumeric() || c == '_') {
            while let Some(c) = self.peek().filter(|c| c.is_alphanumeric() || *c == '_') {
                text.push(c);
                self.bump();
            }
            return Err(LexError::InvalidNumber { text, loc });
        }
        let clean: String = text.chars().filter(|&c| c != '_').collect();
        if is_float {
            if clean.parse::<f64>().is_err() {
                return Err(LexError::InvalidNumber { text, loc });
            }
            self.push(TokenKind::Float, clean, loc);
        } else {
            if clean.parse::<i64>().is_err() {
                return Err(LexError::InvalidNumber { text, loc });
            }
            self.push(TokenKind::Int, clean, loc);
        }
        Ok(())
    }

    fn string(&mut self, quote: char) -> Result<(), LexError> {
        let loc = self.loc();
        let triple = self.peek_at(1) == Some(quote) && self.peek_at(2) == Some(quote);
        let open = if triple { 3 } else { 1 };
        for _ in 0..open {
            self.bump();
        }
        let mut value = String::new();
        loop {
            let Some(c) = self.peek() else {
                return Err(LexError::UnterminatedString { loc });
            };
            if c == quote {
                if !triple {
                    self.bump();
                    break;
                }
                if self.peek_at(1) == Some(quote) && self.peek_at(2) == Some(quote) {
                    self.bump();
                    self.bump();
                    self.bump();
                    break;
                }
                value.push(c);
                self.bump();
                continue;
            }
            if c == '\n' && !triple {
                return Err(LexError::UnterminatedString { loc });
            }
            if c == '\\' {
                self.bump();
                let Some(esc) = self.bump() else {
                    return Err(LexError::UnterminatedString { loc });
                };
                match esc {
                    'n' => value.push('\n'),
                    't' => value.push('\t'),
                    'r' => value.push('\r'),
                    '0' => value.push('\0'),
                    '\\' => value.push('\\'),
                    '\'' => value.push('\''),
                    '"' => value.push('"'),
                    '\n' => {}
                    other => {
                        value.push('\\');
                        value.push(other);
                    }
                }
                continue;
            }
            value.push(c);
            self.bump();
        }
        self.push(TokenKind::String, value, loc);
        Ok(())
    }

    fn operator(&mut self) -> Result<(), LexError> {
        let loc = self.loc();
        for op in OPERATORS {
            let matches = op
                .chars()
                .enumerate()
                .all(|(i, oc)| self.peek_at(i) == Some(oc));
            if matches {
                for _ in 0..op.chars().count() {
                    self.bump();
                }
                match *op {
                    "(" | "[" | "{" => self.depth += 1,
                    ")" | "]" | "}" => self.depth = self.depth.saturating_sub(1),
                    _ => {}
                }
                self.push(TokenKind::Op, *op, loc);
                return Ok(());
            }
        }
        let ch = self.peek().expect("operator called with input remaining");
        Err(LexError::IllegalCharacter { ch, loc })
    }
}
