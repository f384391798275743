//! Recursive-descent parser for the generated-program grammar.
//!
//! The accepted language is a small Python subset: assignment (plain and
//! tuple-unpacking), `+=`/`-=`, `for .. in`, `if/elif/else`, calls to
//! whitelisted functions, arithmetic, comparisons, boolean operators and
//! literals. Everything else is rejected with [`ParseError::Unsupported`]
//! naming the construct.

use std::collections::BTreeSet;

use thiserror::Error;

use super::ast::*;
use super::lexer::{tokenize, LexError, Token, TokenKind};

/// Visual primitives callable from generated programs.
pub const PRIMITIVES: &[&str] = &[
    "query",
    "get_pos",
    "find_matching_image",
    "find_object",
    "knowledge_query",
];

/// Non-visual builtins.
pub const BUILTINS: &[&str] = &[
    "open_image",
    "open_images",
    "int",
    "float",
    "str",
    "len",
    "abs",
    "min",
    "max",
];

const MAX_NESTING: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("{loc}: unsupported syntax: {construct}")]
    Unsupported { construct: String, loc: Location },
    #[error("{loc}: expected {expected}, found {found}")]
    Unexpected {
        expected: String,
        found: String,
        loc: Location,
    },
}

impl ParseError {
    pub fn loc(&self) -> Location {
        match self {
            ParseError::Unsupported { loc, .. } | ParseError::Unexpected { loc, .. } => *loc,
        }
    }
}

/// Lexing or parsing failure for a program source.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SyntaxError {
    #[error(transparent)]
    Lex(#[from] LexError),
    #[error(transparent)]
    Parse(#[from] ParseError),
}

/// Set of function names a program may call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallWhitelist {
    names: BTreeSet<String>,
}

impl Default for CallWhitelist {
    fn default() -> Self {
        CallWhitelist::new(PRIMITIVES.iter().chain(BUILTINS))
    }
}

impl CallWhitelist {
    pub fn new<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        CallWhitelist {
            names: names.into_iter().map(|s| s.as_ref().to_string()).collect(),
        }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.names.contains(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }
}

/// Parses a token stream with the default whitelist.
pub fn parse(tokens: &[Token]) -> Result<Program, ParseError> {
    parse_with(tokens, &CallWhitelist::default())
}

pub fn parse_with(tokens: &[Token], whitelist: &CallWhitelist) -> Result<Program, ParseError> {
    let mut p = Parser {
        tokens,
        pos: 0,
        whitelist,
        depth: 0,
    };
    p.program()
}

/// Tokenizes and parses `source`.
pub fn parse_source(source: &str) -> Result<Program, SyntaxError> {
    let tokens = tokenize(source)?;
    Ok(parse(&tokens)?)
}

struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
    whitelist: &'a CallWhitelist,
    depth: usize,
}

fn unsupported<T>(construct: impl Into<String>, tok: &Token) -> Result<T, ParseError> {
    Err(ParseError::Unsupported {
        construct: construct.into(),
        loc: tok.loc(),
    })
}

impl<'a> Parser<'a> {
    fn peek(&self) -> &'a Token {
        let idx = self.pos.min(self.tokens.len().saturating_sub(1));
        &self.tokens[idx]
    }

    fn peek_at(&self, off: usize) -> &'a Token {
        let idx = (self.pos + off).min(self.tokens.len().saturating_sub(1));
        &self.tokens[idx]
    }

    fn advance(&mut self) -> &'a Token {
        let tok = self.peek();
        if self.pos < self.tokens.len() {
            self.pos += 1;
        }
        tok
    }

    fn unexpected<T>(&self, expected: &str) -> Result<T, ParseError> {
        let tok = self.peek();
        Err(ParseError::Unexpected {
            expected: expected.to_string(),
            found: tok.describe(),
            loc: tok.loc(),
        })
    }

    fn expect_op(&mut self, op: &str) -> Result<&'a Token, ParseError> {
        if self.peek().is_op(op) {
            Ok(self.advance())
        } else {
            self.unexpected(&format!("`{op}`"))
        }
    }

    fn expect_kind(&mut self, kind: TokenKind, what: &str) -> Result<&'a Token, ParseError> {
        if self.peek().kind == kind {
            Ok(self.advance())
        } else {
            self.unexpected(what)
        }
    }

    fn enter(&mut self) -> Result<(), ParseError> {
        self.depth += 1;
        if self.depth > MAX_NESTING {
            return unsupported(
                format!("nesting deeper than {MAX_NESTING} levels"),
                self.peek(),
            );
        }
        Ok(())
    }

    fn leave(&mut self) {
        self.depth -= 1;
    }

    fn program(&mut self) -> Result<Program, ParseError> {
        if self.tokens.is_empty() {
            return Ok(Program { body: Vec::new() });
        }
        let mut body = Vec::new();
        loop {
            match self.peek().kind {
                TokenKind::Eof => break,
                TokenKind::Newline => {
                    self.advance();
                }
                TokenKind::Indent => return unsupported("unexpected indentation", self.peek()),
                _ => body.push(self.statement()?),
            }
        }
        Ok(Program { body })
    }

    fn statement(&mut self) -> Result<Stmt, ParseError> {
        let tok = self.peek();
        if tok.kind == TokenKind::Keyword {
            match tok.text.as_str() {
                "for" => return self.for_stmt(),
                "if" => return self.if_stmt(),
                "not" | "True" | "False" | "None" => {}
                "elif" | "else" => return self.unexpected("a statement"),
                kw => return unsupported(format!("`{kw}` statement"), tok),
            }
        }
        if tok.is_op("@") {
            return unsupported("decorator", tok);
        }
        let stmt = self.simple_statement()?;
        self.end_of_statement()?;
        Ok(stmt)
    }

    fn end_of_statement(&mut self) -> Result<(), ParseError> {
        let tok = self.peek();
        match tok.kind {
            TokenKind::Newline => {
                self.advance();
                Ok(())
            }
            TokenKind::Eof | TokenKind::Dedent => Ok(()),
            _ if tok.is_op(";") => unsupported("multiple statements on one line (`;`)", tok),
            _ if tok.is_keyword("if") => unsupported("conditional expression", tok),
            _ if tok.is_op("=") => unsupported("chained assignment", tok),
            _ => self.unexpected("end of line"),
        }
    }

    fn simple_statement(&mut self) -> Result<Stmt, ParseError> {
        let start = self.peek();
        let loc = start.loc();
        let expr = self.expr_list()?;
        let tok = self.peek();
        if tok.is_op("=") {
            self.advance();
            let target = assign_target(&expr)?;
            let value = self.expr_list()?;
            return Ok(Stmt {
                kind: StmtKind::Assign { target, value },
                loc,
            });
        }
        if tok.is_op("+=") || tok.is_op("-=") {
            let op = if tok.is_op("+=") {
                AugOp::Add
            } else {
                AugOp::Sub
            };
            let ExprKind::Name { id } = &expr.kind else {
                return unsupported("augmented assignment to a non-name target", tok);
            };
            let name = id.clone();
            self.advance();
            let value = self.expr_list()?;
            return Ok(Stmt {
                kind: StmtKind::AugAssign { name, op, value },
                loc,
            });
        }
        if tok.kind == TokenKind::Op
            && matches!(
                tok.text.as_str(),
                "*=" | "/=" | "%=" | "**=" | "//=" | ">>=" | "<<=" | "&=" | "|=" | "^=" | "@="
            )
        {
            return unsupported(format!("augmented assignment `{}`", tok.text), tok);
        }
        if tok.is_op(":") {
            return unsupported("annotated assignment", tok);
        }
        if tok.is_op(":=") {
            return unsupported("assignment expression (`:=`)", tok);
        }
        Ok(Stmt {
            kind: StmtKind::Expr { expr },
            loc,
        })
    }

    fn suite(&mut self) -> Result<Vec<Stmt>, ParseError> {
        self.expect_op(":")?;
        if self.peek().kind != TokenKind::Newline {
            let stmt = self.simple_statement()?;
            self.end_of_statement()?;
            return Ok(vec![stmt]);
        }
        self.advance();
        self.expect_kind(TokenKind::Indent, "an indented block")?;
        self.enter()?;
        let mut body = Vec::new();
        loop {
            match self.peek().kind {
                TokenKind::Dedent => {
                    self.advance();
                    break;
                }
                TokenKind::Eof => break,
                TokenKind::Newline => {
                    self.advance();
                }
                _ => body.push(self.statement()?),
            }
        }
        self.leave();
        if body.is_empty() {
            return self.unexpected("a statement");
        }
        Ok(body)
    }

    fn for_stmt(&mut self) -> Result<Stmt, ParseError> {
        let kw = self.advance();
        let name_tok = self.peek();
        if name_tok.kind != TokenKind::Name {
            if name_tok.is_op("(") {
                return unsupported("tuple loop target", name_tok);
            }
            return self.unexpected("a loop variable name");
        }
        self.advance();
        if self.peek().is_op(",") {
            return unsupported("tuple loop target", self.peek());
        }
        if !self.peek().is_keyword("in") {
            return self.unexpected("`in`");
        }
        self.advance();
        let iter = self.expr_list()?;
        let body = self.suite()?;
        if self.peek().is_keyword("else") {
            return unsupported("`for ... else`", self.peek());
        }
        Ok(Stmt {
            kind: StmtKind::For {
                var: name_tok.text.clone(),
                iter,
                body,
            },
            loc: kw.loc(),
        })
    }

    fn if_stmt(&mut self) -> Result<Stmt, ParseError> {
        let kw = self.advance();
        let mut branches = Vec::new();
        let cond = self.expression()?;
        let body = self.suite()?;
        branches.push((cond, body));
        let mut else_body = None;
        loop {
            let tok = self.peek();
            if tok.is_keyword("elif") {
                self.advance();
                let cond = self.expression()?;
                let body = self.suite()?;
                branches.push((cond, body));
            } else if tok.is_keyword("else") {
                self.advance();
                else_body = Some(self.suite()?);
                break;
            } else {
                break;
            }
        }
        Ok(Stmt {
            kind: StmtKind::If {
                branches,
                else_body,
            },
            loc: kw.loc(),
        })
    }

    /// `expr (',' expr)*`, yielding a tuple when commas are present.
    fn expr_list(&mut self) -> Result<Expr, ParseError> {
        let first = self.expression()?;
        if !self.peek().is_op(",") {
            return Ok(first);
        }
        let loc = first.loc;
        let mut items = vec![first];
        while self.peek().is_op(",") {
            self.advance();
            if self.at_expression_end() {
                break;
            }
            items.push(self.expression()?);
        }
        Ok(Expr {
            kind: ExprKind::Tuple { items },
            loc,
        })
    }

    fn at_expression_end(&self) -> bool {
        let tok = self.peek();
        matches!(
            tok.kind,
            TokenKind::Newline | TokenKind::Eof | TokenKind::Dedent
        ) || tok.is_op("=")
            || tok.is_op(")")
            || tok.is_op(":")
    }

    fn expression(&mut self) -> Result<Expr, ParseError> {
        self.enter()?;
        let tok = self.peek();
        if tok.is_keyword("lambda") {
            return unsupported("lambda expression", tok);
        }
        if tok.is_keyword("yield") || tok.is_keyword("await") {
            return unsupported(format!("`{}` expression", tok.text), tok);
        }
        let e = self.or_expr();
        self.leave();
        let e = e?;
        if self.peek().is_keyword("if") {
            return unsupported("conditional expression", self.peek());
        }
        Ok(e)
    }

    fn or_expr(&mut self) -> Result<Expr, ParseError> {
        let first = self.and_expr()?;
        if !self.peek().is_keyword("or") {
            return Ok(first);
        }
        let loc = first.loc;
        let mut operands = vec![first];
        while self.peek().is_keyword("or") {
            self.advance();
            operands.push(self.and_expr()?);
        }
        Ok(Expr {
            kind: ExprKind::BoolOp {
                op: BoolOp::Or,
                operands,
            },
            loc,
        })
    }

    fn and_expr(&mut self) -> Result<Expr, ParseError> {
        let first = self.not_expr()?;
        if !self.peek().is_keyword("and") {
            return Ok(first);
        }
        let loc = first.loc;
        let mut operands = vec![first];
        while self.peek().is_keyword("and") {
            self.advance();
            operands.push(self.not_expr()?);
        }
        Ok(Expr {
            kind: ExprKind::BoolOp {
                op: BoolOp::And,
                operands,
            },
            loc,
        })
    }

    fn not_expr(&mut self) -> Result<Expr, ParseError> {
        if self.peek().is_keyword("not") {
            let tok = self.advance();
            self.enter()?;
            let operand = self.not_expr();
            self.leave();
            return Ok(Expr {
                kind: ExprKind::Not {
                    operand: Box::new(operand?),
                },
                loc: tok.loc(),
            });
        }
        self.comparison()
    }

    fn comparison(&mut self) -> Result<Expr, ParseError> {
        let lhs = self.arith()?;
        let Some(op) = self.compare_op()? else {
            return Ok(lhs);
        };
        self.advance();
        let rhs = self.arith()?;
        if self.compare_op()?.is_some() {
            return unsupported("chained comparison", self.peek());
        }
        let loc = lhs.loc;
        Ok(Expr {
            kind: ExprKind::Compare {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
            },
            loc,
        })
    }

    fn compare_op(&self) -> Result<Option<CmpOp>, ParseError> {
        let tok = self.peek();
        if tok.kind == TokenKind::Keyword {
            return match tok.text.as_str() {
                "in" => unsupported("membership test (`in`)", tok),
                "is" => unsupported("identity test (`is`)", tok),
                _ => Ok(None),
            };
        }
        if tok.kind != TokenKind::Op {
            return Ok(None);
        }
        Ok(match tok.text.as_str() {
            "==" => Some(CmpOp::Eq),
            "!=" => Some(CmpOp::Ne),
            "<" => Some(CmpOp::Lt),
            "<=" => Some(CmpOp::Le),
            ">" => Some(CmpOp::Gt),
            ">=" => Some(CmpOp::Ge),
            _ => None,
        })
    }

    fn arith(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let tok = self.peek();
            let op = if tok.is_op("+") {
                BinOp::Add
            } else if tok.is_op("-") {
                BinOp::Sub
            } else if tok.kind == TokenKind::Op
                && matches!(tok.text.as_str(), "<<" | ">>" | "&" | "|" | "^")
            {
                return unsupported(format!("bitwise operator `{}`", tok.text), tok);
            } else {
                return Ok(lhs);
            };
            self.advance();
            let rhs = self.term()?;
            let loc = lhs.loc;
            lhs = Expr {
                kind: ExprKind::BinOp {
                    op,
                    lhs: Box::new(lhs),
                    rhs: Box::new(rhs),
                },
                loc,
            };
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let tok = self.peek();
            let op = if tok.is_op("*") {
                BinOp::Mul
            } else if tok.is_op("/") {
                BinOp::Div
            } else if tok.is_op("%") {
                BinOp::Mod
            } else if tok.is_op("//") {
                return unsupported("floor division (`//`)", tok);
            } else if tok.is_op("@") {
                return unsupported("matrix multiplication (`@`)", tok);
            } else {
                return Ok(lhs);
            };
            self.advance();
            let rhs = self.unary()?;
            let loc = lhs.loc;
            lhs = Expr {
                kind: ExprKind::BinOp {
                    op,
                    lhs: Box::new(lhs),
                    rhs: Box::new(rhs),
                },
                loc,
            };
        }
    }

    /// Unary minus is folded into negative literals, or desugared to `0 - x`.
    fn unary(&mut self) -> Result<Expr, ParseError> {
        let tok = self.peek();
        if tok.is_op("-") || tok.is_op("+") {
            let negate = tok.is_op("-");
            self.advance();
            self.enter()?;
            let operand = self.unary();
            self.leave();
            let operand = operand?;
            if !negate {
                return Ok(operand);
            }
            let kind = match operand.kind {
                ExprKind::Literal {
                    value: Literal::Int(i),
                } => match i.checked_neg() {
                    Some(n) => ExprKind::Literal {
                        value: Literal::Int(n),
                    },
                    None => return unsupported("integer literal out of range", tok),
                },
                ExprKind::Literal {
                    value: Literal::Float(x),
                } => ExprKind::Literal {
                    value: Literal::Float(-x),
                },
                other => ExprKind::BinOp {
                    op: BinOp::Sub,
                    lhs: Box::new(Expr {
                        kind: ExprKind::Literal {
                            value: Literal::Int(0),
                        },
                        loc: tok.loc(),
                    }),
                    rhs: Box::new(Expr {
                        kind: other,
                        loc: operand.loc,
                    }),
                },
            };
            return Ok(Expr {
                kind,
                loc: tok.loc(),
            });
        }
        if tok.is_op("~") {
            return unsupported("bitwise operator `~`", tok);
        }
        if tok.is_op("*") || tok.is_op("**") {
            return unsupported("starred expression", tok);
        }
        let atom = self.atom()?;
        self.reject_postfix()?;
        if self.peek().is_op("**") {
            return unsupported("exponentiation (`**`)", self.peek());
        }
        Ok(atom)
    }

    fn reject_postfix(&self) -> Result<(), ParseError> {
        let tok = self.peek();
        if tok.is_op("[") {
            return unsupported("indexing or slicing", tok);
        }
        if tok.is_op(".") {
            return unsupported("attribute access", tok);
        }
        if tok.is_op("(") {
            return unsupported("call of a non-name expression", tok);
        }
        if tok.kind == TokenKind::String {
            return unsupported("implicit string concatenation", tok);
        }
        Ok(())
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let tok = self.peek();
        let loc = tok.loc();
        let kind = match tok.kind {
            TokenKind::Int => {
                self.advance();
                let v = tok
                    .text
                    .parse::<i64>()
                    .map_err(|_| ParseError::Unsupported {
                        construct: "integer literal out of range".into(),
                        loc,
                    })?;
                ExprKind::Literal {
                    value: Literal::Int(v),
                }
            }
            TokenKind::Float => {
                self.advance();
                let v = tok
                    .text
                    .parse::<f64>()
                    .map_err(|_| ParseError::Unsupported {
                        construct: "float literal".into(),
                        loc,
                    })?;
                ExprKind::Literal {
                    value: Literal::Float(v),
                }
            }
            TokenKind::String => {
                self.advance();
                ExprKind::Literal {
                    value: Literal::Str(tok.text.clone()),
                }
            }
            TokenKind::Keyword => match tok.text.as_str() {
                "True" | "False" => {
                    self.advance();
                    ExprKind::Literal {
                        value: Literal::Bool(tok.text == "True"),
                    }
                }
                "None" => {
                    self.advance();
                    ExprKind::Literal {
                        value: Literal::None,
                    }
                }
                "lambda" => return unsupported("lambda expression", tok),
                _ => return self.unexpected("an expression"),
            },
            TokenKind::Name => {
                self.advance();
                if self.peek().is_op("(") {
                    return self.call(tok);
                }
                ExprKind::Name {
                    id: tok.text.clone(),
                }
            }
            TokenKind::Op => match tok.text.as_str() {
                "(" => {
                    self.advance();
                    return self.parenthesized(loc);
                }
                "[" => return unsupported("list literal", tok),
                "{" => return unsupported("dict or set literal", tok),
                _ => return self.unexpected("an expression"),
            },
            _ => return self.unexpected("an expression"),
        };
        Ok(Expr { kind, loc })
    }

    fn parenthesized(&mut self, loc: Location) -> Result<Expr, ParseError> {
        if self.peek().is_op(")") {
            return unsupported("empty tuple", self.peek());
        }
        self.enter()?;
        let first = self.expression();
        self.leave();
        let first = first?;
        if self.peek().is_keyword("for") {
            return unsupported("generator expression", self.peek());
        }
        if self.peek().is_op(")") {
            self.advance();
            return Ok(first);
        }
        let mut items = vec![first];
        while self.peek().is_op(",") {
            self.advance();
            if self.peek().is_op(")") {
                break;
            }
            self.enter()?;
            let item = self.expression();
            self.leave();
            items.push(item?);
        }
        self.expect_op(")")?;
        Ok(Expr {
            kind: ExprKind::Tuple { items },
            loc,
        })
    }

    fn call(&mut self, name_tok: &'a Token) -> Result<Expr, ParseError> {
        if !self.whitelist.contains(&name_tok.text) {
            return unsupported(
                format!("call to non-whitelisted function `{}`", name_tok.text),
                name_tok,
            );
        }
        self.expect_op("(")?;
        self.enter()?;
        let mut args = Vec::new();
        while !self.peek().is_op(")") {
            let tok = self.peek();
            if tok.is_op("*") || tok.is_op("**") {
                self.leave();
                return unsupported("argument unpacking", tok);
            }
            if tok.kind == TokenKind::Name && self.peek_at(1).is_op("=") {
                self.leave();
                return unsupported("keyword argument", tok);
            }
            let arg = self.expression();
            let arg = match arg {
                Ok(a) => a,
                Err(e) => {
                    self.leave();
                    return Err(e);
                }
            };
            if self.peek().is_keyword("for") {
                self.leave();
                return unsupported("generator expression", self.peek());
            }
            args.push(arg);
            if self.peek().is_op(",") {
                self.advance();
            } else if !self.peek().is_op(")") {
                self.leave();
                return self.unexpected("`,` or `)`");
            }
        }
        self.leave();
        self.advance();
        Ok(Expr {
            kind: ExprKind::Call {
                name: name_tok.text.clone(),
                args,
            },
            loc: name_tok.loc(),
        })
    }
}

fn assign_target(expr: &Expr) -> Result<AssignTarget, ParseError> {
    match &expr.kind {
        ExprKind::Name { id } => Ok(AssignTarget::Name(id.clone())),
        ExprKind::Tuple { items } => {
            let mut names = Vec::with_capacity(items.len());
            for item in items {
                match &item.kind {
                    ExprKind::Name { id } => names.push(id.clone()),
                    _ => {
                        return Err(ParseError::Unsupported {
                            construct: "assignment to a non-name target".into(),
                            loc: item.loc,
                        })
                    }
                }
            }
            Ok(AssignTarget::Tuple(names))
        }
        _ => Err(ParseError::Unsupported {
            construct: "assignment to a non-name target".into(),
            loc: expr.loc,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unsupported_construct(src: &str) -> String {
        match parse_source(src) {
            Err(SyntaxError::Parse(ParseError::Unsupported { construct, .. })) => construct,
            other => panic!("expected unsupported syntax for {src:?}, got {other:?}"),
        }
    }

    #[test]
    fn simple_assignment() {
        let prog = parse_source("answer = \"yes\"").unwrap();
        assert_eq!(prog.body.len(), 1);
        assert!(matches!(
            &prog.body[0].kind,
            StmtKind::Assign {
                target: AssignTarget::Name(n),
                ..
            } if n == "answer"
        ));
    }

    #[test]
    fn forbidden_constructs() {
        assert!(unsupported_construct("import os").contains("import"));
        assert!(unsupported_construct("from os import path").contains("from"));
        assert!(unsupported_construct("while True: pass").contains("while"));
        assert!(unsupported_construct("def f():\n    return 1\n").contains("def"));
        assert!(unsupported_construct("class A:\n    x = 1\n").contains("class"));
        assert!(unsupported_construct("x = y[0]").contains("indexing"));
        assert!(unsupported_construct("x = y.z").contains("attribute"));
        assert!(unsupported_construct("x = [1, 2]").contains("list"));
        assert!(unsupported_construct("print(1)").contains("print"));
        assert!(unsupported_construct("x = lambda: 1").contains("lambda"));
        assert!(unsupported_construct("x *= 2").contains("*="));
        assert!(unsupported_construct("x = 1 if a else 2").contains("conditional"));
        assert!(unsupported_construct("x = a < b < c").contains("chained"));
        assert!(unsupported_construct("x = 2 ** 3").contains("exponent"));
        assert!(unsupported_construct("x = 1; y = 2").contains(";"));
        assert!(unsupported_construct("x = query(img, question=q)").contains("keyword"));
        assert!(unsupported_construct("x = a in b").contains("membership"));
        assert!(unsupported_construct("x = y = 1").contains("chained assignment"));
    }

    #[test]
    fn call_whitelist_is_configurable() {
        let tokens = tokenize("x = query(img, \"q\")").unwrap();
        let narrow = CallWhitelist::new(["open_image"]);
        assert!(parse_with(&tokens, &narrow).is_err());
        assert!(parse(&tokens).is_ok());
    }

    #[test]
    fn tuple_targets_and_negative_literals() {
        let prog = parse_source("x, y = get_pos(img, \"dog\")\nz = -3\nw = -x\n").unwrap();
        assert!(matches!(
            &prog.body[0].kind,
            StmtKind::Assign { target: AssignTarget::Tuple(ns), .. } if ns.len() == 2
        ));
        assert!(matches!(
            &prog.body[1].kind,
            StmtKind::Assign {
                value: Expr {
                    kind: ExprKind::Literal {
                        value: Literal::Int(-3)
                    },
                    ..
                },
                ..
            }
        ));
        assert!(matches!(
            &prog.body[2].kind,
            StmtKind::Assign {
                value: Expr {
                    kind: ExprKind::BinOp { op: BinOp::Sub, .. },
                    ..
                },
                ..
            }
        ));
    }

    #[test]
    fn elif_chain_and_inline_suite() {
        let src = "if a == 1: x = 1\nelif a == 2:\n    x = 2\nelse:\n    x = 3\n";
        let prog = parse_source(src).unwrap();
        let StmtKind::If {
            branches,
            else_body,
        } = &prog.body[0].kind
        else {
            panic!("not an if")
        };
        assert_eq!(branches.len(), 2);
        assert_eq!(else_body.as_ref().unwrap().len(), 1);
    }

    #[test]
    fn precedence() {
        let prog = parse_source("x = 1 + 2 * 3").unwrap();
        let StmtKind::Assign { value, .. } = &prog.body[0].kind else {
            panic!()
        };
        let ExprKind::BinOp { op, rhs, .. } = &value.kind else {
            panic!()
        };
        assert_eq!(*op, BinOp::Add);
        assert!(matches!(rhs.kind, ExprKind::BinOp { op: BinOp::Mul, .. }));
    }

    #[test]
    fn deep_nesting_is_rejected_not_overflowed() {
        let src = format!("x = {}1{}", "(".repeat(5000), ")".repeat(5000));
        assert!(parse_source(&src).is_err());
        let src = format!("x = {}1", "-".repeat(5000));
        assert!(parse_source(&src).is_err());
    }

    #[test]
    fn malformed_inputs_are_errors() {
        for src in [
            "x =",
            "for in x:\n    y = 1\n",
            "if x\n    y = 1\n",
            "x = (1, 2",
            "else:\n    x = 1\n",
            "    x = 1\n",
        ] {
            assert!(parse_source(src).is_err(), "{src:?} should fail");
        }
    }
}
