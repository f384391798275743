//! Syntax tree for generated programs.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Location {
    pub line: usize,
    pub column: usize,
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.column)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Program {
    pub body: Vec<Stmt>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stmt {
    pub kind: StmtKind,
    pub loc: Location,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type")]
pub enum StmtKind {
    Assign {
        target: AssignTarget,
        value: Expr,
    },
    AugAssign {
        name: String,
        op: AugOp,
        value: Expr,
    },
    For {
        var: String,
        iter: Expr,
        body: Vec<Stmt>,
    },
    If {
        branches: Vec<(Expr, Vec<Stmt>)>,
        else_body: Option<Vec<Stmt>>,
    },
    Expr {
        expr: Expr,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(untagged)]
pub enum AssignTarget {
    Name(String),
    Tuple(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum AugOp {
    #[serde(rename = "+=")]
    Add,
    #[serde(rename = "-=")]
    Sub,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Expr {
    pub kind: ExprKind,
    pub loc: Location,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type")]
pub enum ExprKind {
    Call {
        name: String,
        args: Vec<Expr>,
    },
    BinOp {
        op: BinOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
    Compare {
        op: CmpOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
    BoolOp {
        op: BoolOp,
        operands: Vec<Expr>,
    },
    Not {
        operand: Box<Expr>,
    },
    Literal {
        value: Literal,
    },
    Name {
        id: String,
    },
    Tuple {
        items: Vec<Expr>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BinOp {
    #[serde(rename = "+")]
    Add,
    #[serde(rename = "-")]
    Sub,
    #[serde(rename = "*")]
    Mul,
    #[serde(rename = "/")]
    Div,
    #[serde(rename = "%")]
    Mod,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CmpOp {
    #[serde(rename = "==")]
    Eq,
    #[serde(rename = "!=")]
    Ne,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BoolOp {
    And,
    Or,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", content = "value")]
pub enum Literal {
    Str(String),
    Int(i64),
    Float(f64),
    Bool(bool),
    None,
}

impl BinOp {
    pub fn symbol(&self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Mod => "%",
        }
    }
}

impl CmpOp {
    pub fn symbol(&self) -> &'static str {
        match self {
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }
}

impl AugOp {
    pub fn symbol(&self) -> &'static str {
        match self {
            AugOp::Add => "+=",
            AugOp::Sub => "-=",
        }
    }
}

impl Program {
    /// Every call site in the program, in source order.
    pub fn calls(&self) -> Vec<&str> {
        let mut out = Vec::new();
        for stmt in &self.body {
            stmt.collect_calls(&mut out);
        }
        out
    }
}

impl Stmt {
    fn collect_calls<'a>(&'a self, out: &mut Vec<&'a str>) {
        match &self.kind {
            StmtKind::Assign { value, .. } | StmtKind::AugAssign { value, .. } => {
                value.collect_calls(out)
            }
            StmtKind::Expr { expr } => expr.collect_calls(out),
            StmtKind::For { iter, body, .. } => {
                iter.collect_calls(out);
                body.iter().for_each(|s| s.collect_calls(out));
            }
            StmtKind::If {
                branches,
                else_body,
            } => {
                for (cond, body) in branches {
                    cond.collect_calls(out);
                    body.iter().for_each(|s| s.collect_calls(out));
                }
                if let Some(body) = else_body {
                    body.iter().for_each(|s| s.collect_calls(out));
                }
            }
        }
    }
}

impl Expr {
    fn collect_calls<'a>(&'a self, out: &mut Vec<&'a str>) {
        match &self.kind {
            ExprKind::Call { name, args } => {
                out.push(name);
                args.iter().for_each(|a| a.collect_calls(out));
            }
            ExprKind::BinOp { lhs, rhs, .. } | ExprKind::Compare { lhs, rhs, .. } => {
                lhs.collect_calls(out);
                rhs.collect_calls(out);
            }
            ExprKind::BoolOp { operands, .. } => operands.iter().for_each(|a| a.collect_calls(out)),
            ExprKind::Tuple { items } => items.iter().for_each(|a| a.collect_calls(out)),
            ExprKind::Not { operand } => operand.collect_calls(out),
            ExprKind::Literal { .. } | ExprKind::Name { .. } => {}
        }
    }
}

// Indented tree dump used by the `parse` command.

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Program")?;
        for stmt in &self.body {
            stmt.dump(f, 1)?;
        }
        Ok(())
    }
}

fn pad(f: &mut fmt::Formatter<'_>, depth: usize) -> fmt::Result {
    write!(f, "{:width$}", "", width = depth * 2)
}

impl Stmt {
    fn dump(&self, f: &mut fmt::Formatter<'_>, depth: usize) -> fmt::Result {
        pad(f, depth)?;
        match &self.kind {
            StmtKind::Assign { target, value } => {
                let t = match target {
                    AssignTarget::Name(n) => n.clone(),
                    AssignTarget::Tuple(ns) => ns.join(", "),
                };
                writeln!(f, "Assign {t} @{}", self.loc)?;
                value.dump(f, depth + 1)
            }
            StmtKind::AugAssign { name, op, value } => {
                writeln!(f, "AugAssign {name} {} @{}", op.symbol(), self.loc)?;
                value.dump(f, depth + 1)
            }
            StmtKind::For { var, iter, body } => {
                writeln!(f, "For {var} @{}", self.loc)?;
                iter.dump(f, depth + 1)?;
                pad(f, depth + 1)?;
                writeln!(f, "Body")?;
                body.iter().try_for_each(|s| s.dump(f, depth + 2))
            }
            StmtKind::If {
                branches,
                else_body,
            } => {
                writeln!(f, "If @{}", self.loc)?;
                for (cond, body) in branches {
                    pad(f, depth + 1)?;
                    writeln!(f, "Branch")?;
                    cond.dump(f, depth + 2)?;
                    body.iter().try_for_each(|s| s.dump(f, depth + 2))?;
                }
                if let Some(body) = else_body {
                    pad(f, depth + 1)?;
                    writeln!(f, "Else")?;
                    body.iter().try_for_each(|s| s.dump(f, depth + 2))?;
                }
                Ok(())
            }
            StmtKind::Expr { expr } => {
                writeln!(f, "ExprStmt @{}", self.loc)?;
                expr.dump(f, depth + 1)
            }
        }
    }
}

impl Expr {
    fn dump(&self, f: &mut fmt::Formatter<'_>, depth: usize) -> fmt::Result {
        pad(f, depth)?;
        match &self.kind {
            ExprKind::Call { name, args } => {
                writeln!(f, "Call {name}")?;
                args.iter().try_for_each(|a| a.dump(f, depth + 1))
            }
            ExprKind::BinOp { op, lhs, rhs } => {
                writeln!(f, "BinOp {}", op.symbol())?;
                lhs.dump(f, depth + 1)?;
                rhs.dump(f, depth + 1)
            }
            ExprKind::Compare { op, lhs, rhs } => {
                writeln!(f, "Compare {}", op.symbol())?;
                lhs.dump(f, depth + 1)?;
                rhs.dump(f, depth + 1)
            }
            ExprKind::BoolOp { op, operands } => {
                let name = match op {
                    BoolOp::And => "and",
                    BoolOp::Or => "or",
                };
                writeln!(f, "BoolOp {name}")?;
                operands.iter().try_for_each(|a| a.dump(f, depth + 1))
            }
            ExprKind::Not { operand } => {
                writeln!(f, "Not")?;
                operand.dump(f, depth + 1)
            }
            ExprKind::Literal { value } => match value {
                Literal::Str(s) => writeln!(f, "Str {s:?}"),
                Literal::Int(i) => writeln!(f, "Int {i}"),
                Literal::Float(x) => writeln!(f, "Float {x:?}"),
                Literal::Bool(b) => writeln!(f, "Bool {}", if *b { "True" } else { "False" }),
                Literal::None => writeln!(f, "None"),
            },
            ExprKind::Name { id } => writeln!(f, "Name {id}"),
            ExprKind::Tuple { items } => {
                writeln!(f, "Tuple")?;
                items.iter().try_for_each(|a| a.dump(f, depth + 1))
            }
        }
    }
}
