//! Sandboxed tree-walking interpreter.
//!
//! Execution is sequential over a single flat scope. Every statement and
//! expression evaluation costs one step; loops and primitive calls have
//! their own budgets, so any program terminates within [`InterpreterLimits`].

use std::collections::HashMap;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::ast::*;
use super::value::{format_float, ImageHandle, Value};
use crate::error::ConfigError;
use crate::primitives::{Detection, PrimitiveError};

/// Visual primitives a program can call. Implementations receive the
/// execution's seeded generator so stochastic steps stay reproducible.
pub trait Primitives {
    fn query(
        &self,
        image: &ImageHandle,
        question: &str,
        rng: &mut dyn RngCore,
    ) -> Result<String, PrimitiveError>;

    fn get_pos(
        &self,
        image: &ImageHandle,
        text: &str,
        rng: &mut dyn RngCore,
    ) -> Result<(f64, f64), PrimitiveError>;

    /// Index into `images` of the best-matching image.
    fn find_matching_image(
        &self,
        images: &[ImageHandle],
        text: &str,
        rng: &mut dyn RngCore,
    ) -> Result<usize, PrimitiveError>;

    fn find_object(
        &self,
        image: &ImageHandle,
        description: &str,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<Detection>, PrimitiveError>;

    fn knowledge_query(
        &self,
        question: &str,
        rng: &mut dyn RngCore,
    ) -> Result<String, PrimitiveError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterpreterLimits {
    pub max_steps: u64,
    pub max_loop_iterations: u64,
    pub max_primitive_calls: u64,
}

impl Default for InterpreterLimits {
    fn default() -> Self {
        InterpreterLimits {
            max_steps: 10_000,
            max_loop_iterations: 1_000,
            max_primitive_calls: 256,
        }
    }
}

impl InterpreterLimits {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.max_steps == 0 {
            return Err(ConfigError::new(
                "limits.max_steps",
                "must be strictly positive",
            ));
        }
        if self.max_loop_iterations == 0 {
            return Err(ConfigError::new(
                "limits.max_loop_iterations",
                "must be strictly positive",
            ));
        }
        if self.max_primitive_calls == 0 {
            return Err(ConfigError::new(
                "limits.max_primitive_calls",
                "must be strictly positive",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RuntimeErrorKind {
    UnboundName,
    TypeMismatch,
    ConversionFailure,
    MissingAnswer,
    StepBudgetExceeded,
    PrimitiveFailure,
    DivisionByZero,
    ArithmeticOverflow,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("{kind:?}: {message}")]
pub struct RuntimeError {
    pub kind: RuntimeErrorKind,
    pub message: String,
    pub loc: Option<Location>,
}

impl RuntimeError {
    fn new(kind: RuntimeErrorKind, message: impl Into<String>, loc: Location) -> Self {
        RuntimeError {
            kind,
            message: message.into(),
            loc: Some(loc),
        }
    }
}

/// One visual primitive invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveCall {
    pub name: String,
    pub args: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Answer(String),
    RuntimeError(RuntimeError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub outcome: Outcome,
    pub trace: Vec<PrimitiveCall>,
}

impl ExecutionResult {
    pub fn answer(&self) -> Option<&str> {
        match &self.outcome {
            Outcome::Answer(a) => Some(a),
            Outcome::RuntimeError(_) => None,
        }
    }

    pub fn error(&self) -> Option<&RuntimeError> {
        match &self.outcome {
            Outcome::Answer(_) => None,
            Outcome::RuntimeError(e) => Some(e),
        }
    }
}

/// Renders the value bound to `answer` as an answer string.
pub fn stringify_answer(v: &Value) -> Result<String, RuntimeError> {
    match v {
        Value::Str(s) => Ok(s.clone()),
        Value::Int(i) => Ok(i.to_string()),
        Value::Float(x) => Ok(format_float(*x)),
        Value::Bool(b) => Ok(if *b { "yes" } else { "no" }.to_string()),
        other => Err(RuntimeError {
            kind: RuntimeErrorKind::TypeMismatch,
            message: format!("answer of type {} cannot be stringified", other.type_name()),
            loc: None,
        }),
    }
}

/// Runs `program` and reads the final `answer` variable.
pub fn execute(
    program: &Program,
    primitives: &dyn Primitives,
    images: &[ImageHandle],
    limits: &InterpreterLimits,
    rng: &mut dyn RngCore,
) -> ExecutionResult {
    let mut interp = Interp {
        primitives,
        images,
        limits,
        rng,
        env: HashMap::new(),
        steps: 0,
        primitive_calls: 0,
        trace: Vec::new(),
    };
    let outcome = match interp.run(program) {
        Ok(answer) => Outcome::Answer(answer),
        Err(e) => Outcome::RuntimeError(e),
    };
    ExecutionResult {
        outcome,
        trace: interp.trace,
    }
}

type Exec<T> = Result<T, RuntimeError>;

struct Interp<'a> {
    primitives: &'a dyn Primitives,
    images: &'a [ImageHandle],
    limits: &'a InterpreterLimits,
    rng: &'a mut dyn RngCore,
    env: HashMap<String, Value>,
    steps: u64,
    primitive_calls: u64,
    trace: Vec<PrimitiveCall>,
}

fn type_mismatch<T>(message: impl Into<String>, loc: Location) -> Exec<T> {
    Err(RuntimeError::new(
        RuntimeErrorKind::TypeMismatch,
        message,
        loc,
    ))
}

fn overflow(loc: Location) -> RuntimeError {
    RuntimeError::new(
        RuntimeErrorKind::ArithmeticOverflow,
        "integer overflow",
        loc,
    )
}

impl Interp<'_> {
    fn run(&mut self, program: &Program) -> Exec<String> {
        self.block(&program.body)?;
        let answer = self.env.get("answer").ok_or_else(|| RuntimeError {
            kind: RuntimeErrorKind::MissingAnswer,
            message: "program finished without binding `answer`".into(),
            loc: None,
        })?;
        stringify_answer(answer)
    }

    fn tick(&mut self, loc: Location) -> Exec<()> {
        self.steps += 1;
        if self.steps > self.limits.max_steps {
            return Err(RuntimeError::new(
                RuntimeErrorKind::StepBudgetExceeded,
                format!("exceeded {} steps", self.limits.max_steps),
                loc,
            ));
        }
        Ok(())
    }

    fn block(&mut self, stmts: &[Stmt]) -> Exec<()> {
        for stmt in stmts {
            self.statement(stmt)?;
        }
        Ok(())
    }

    fn statement(&mut self, stmt: &Stmt) -> Exec<()> {
        self.tick(stmt.loc)?;
        match &stmt.kind {
            StmtKind::Assign { target, value } => self.assign(target, value, stmt.loc),
            StmtKind::AugAssign { name, op, value } => {
                let current = self.env.get(name).cloned().ok_or_else(|| {
                    RuntimeError::new(
                        RuntimeErrorKind::UnboundName,
                        format!("name `{name}` is not defined"),
                        stmt.loc,
                    )
                })?;
                let rhs = self.eval(value)?;
                let binop = match op {
                    AugOp::Add => BinOp::Add,
                    AugOp::Sub => BinOp::Sub,
                };
                let result = binary(binop, current, rhs, stmt.loc)?;
                self.env.insert(name.clone(), result);
                Ok(())
            }
            StmtKind::For { var, iter, body } => {
                let images = match self.eval(iter)? {
                    Value::ImageList(images) => images,
                    other => {
                        return type_mismatch(
                            format!("cannot iterate over {}", other.type_name()),
                            iter.loc,
                        )
                    }
                };
                for (i, image) in images.into_iter().enumerate() {
                    if i as u64 >= self.limits.max_loop_iterations {
                        return Err(RuntimeError::new(
                            RuntimeErrorKind::StepBudgetExceeded,
                            format!(
                                "loop exceeded {} iterations",
                                self.limits.max_loop_iterations
                            ),
                            stmt.loc,
                        ));
                    }
                    self.env.insert(var.clone(), Value::Image(image));
                    self.block(body)?;
                }
                Ok(())
            }
            StmtKind::If {
                branches,
                else_body,
            } => {
                for (cond, body) in branches {
                    if self.condition(cond)? {
                        return self.block(body);
                    }
                }
                if let Some(body) = else_body {
                    self.block(body)?;
                }
                Ok(())
            }
            StmtKind::Expr { expr } => self.eval(expr).map(drop),
        }
    }

    fn condition(&mut self, cond: &Expr) -> Exec<bool> {
        match self.eval(cond)? {
            Value::Bool(b) => Ok(b),
            other => type_mismatch(
                format!("condition must be bool, got {}", other.type_name()),
                cond.loc,
            ),
        }
    }

    fn assign(&mut self, target: &AssignTarget, value: &Expr, loc: Location) -> Exec<()> {
        match target {
            AssignTarget::Name(name) => {
                let v = self.eval(value)?;
                self.env.insert(name.clone(), v);
            }
            AssignTarget::Tuple(names) => {
                let values = match &value.kind {
                    ExprKind::Tuple { items } => items
                        .iter()
                        .map(|item| self.eval(item))
                        .collect::<Exec<Vec<_>>>()?,
                    _ => match self.eval(value)? {
                        Value::Pos { x, y } => vec![Value::Float(x), Value::Float(y)],
                        Value::ImageList(images) => images.into_iter().map(Value::Image).collect(),
                        other => {
                            return type_mismatch(
                                format!("cannot unpack {}", other.type_name()),
                                value.loc,
                            )
                        }
                    },
                };
                if values.len() != names.len() {
                    return type_mismatch(
                        format!(
                            "cannot unpack {} values into {} names",
                            values.len(),
                            names.len()
                        ),
                        loc,
                    );
                }
                for (name, v) in names.iter().zip(values) {
                    self.env.insert(name.clone(), v);
                }
            }
        }
        Ok(())
    }

    fn eval(&mut self, expr: &Expr) -> Exec<Value> {
        self.tick(expr.loc)?;
        match &expr.kind {
            ExprKind::Literal { value } => Ok(match value {
                Literal::Str(s) => Value::Str(s.clone()),
                Literal::Int(i) => Value::Int(*i),
                Literal::Float(x) => Value::Float(*x),
                Literal::Bool(b) => Value::Bool(*b),
                Literal::None => Value::None,
            }),
            ExprKind::Name { id } => self.env.get(id).cloned().ok_or_else(|| {
                RuntimeError::new(
                    RuntimeErrorKind::UnboundName,
                    format!("name `{id}` is not defined"),
                    expr.loc,
                )
            }),
            ExprKind::BinOp { op, lhs, rhs } => {
                let l = self.eval(lhs)?;
                let r = self.eval(rhs)?;
                binary(*op, l, r, expr.loc)
            }
            ExprKind::Compare { op, lhs, rhs } => {
                let l = self.eval(lhs)?;
                let r = self.eval(rhs)?;
                compare(*op, &l, &r, expr.loc).map(Value::Bool)
            }
            ExprKind::BoolOp { op, operands } => {
                let short_circuit_on = matches!(op, BoolOp::Or);
                for operand in operands {
                    if self.condition(operand)? == short_circuit_on {
                        return Ok(Value::Bool(short_circuit_on));
                    }
                }
                Ok(Value::Bool(!short_circuit_on))
            }
            ExprKind::Not { operand } => Ok(Value::Bool(!self.condition(operand)?)),
            ExprKind::Tuple { .. } => type_mismatch(
                "tuple values are only supported on the right of an unpacking assignment",
                expr.loc,
            ),
            ExprKind::Call { name, args } => {
                let values = args
                    .iter()
                    .map(|a| self.eval(a))
                    .collect::<Exec<Vec<_>>>()?;
                self.call(name, values, expr.loc)
            }
        }
    }

    fn call(&mut self, name: &str, args: Vec<Value>, loc: Location) -> Exec<Value> {
        match name {
            "query" | "get_pos" | "find_matching_image" | "find_object" | "knowledge_query" => {
                self.primitive(name, args, loc)
            }
            _ => builtin(name, args, self.images, loc),
        }
    }

    fn primitive(&mut self, name: &str, args: Vec<Value>, loc: Location) -> Exec<Value> {
        self.primitive_calls += 1;
        if self.primitive_calls > self.limits.max_primitive_calls {
            return Err(RuntimeError::new(
                RuntimeErrorKind::StepBudgetExceeded,
                format!(
                    "exceeded {} primitive calls",
                    self.limits.max_primitive_calls
                ),
                loc,
            ));
        }
        let rendered: Vec<String> = args.iter().map(|a| a.to_string()).collect();
        let prims = self.primitives;
        let result: Result<Value, PrimitiveError> = match (name, args.as_slice()) {
            ("query", [Value::Image(img), Value::Str(q)]) => {
                prims.query(img, q, &mut *self.rng).map(Value::Str)
            }
            ("get_pos", [Value::Image(img), Value::Str(t)]) => prims
                .get_pos(img, t, &mut *self.rng)
                .map(|(x, y)| Value::Pos { x, y }),
            ("find_matching_image", [Value::ImageList(images), Value::Str(t)]) => {
                if images.is_empty() {
                    return type_mismatch("find_matching_image() got an empty image list", loc);
                }
                prims
                    .find_matching_image(images, t, &mut *self.rng)
                    .and_then(|i| {
                        images.get(i).cloned().map(Value::Image).ok_or_else(|| {
                            PrimitiveError::new(format!("matching index {i} out of range"))
                        })
                    })
            }
            ("find_object", [Value::Image(img), Value::Str(d)]) => prims
                .find_object(img, d, &mut *self.rng)
                .map(Value::Detections),
            ("knowledge_query", [Value::Str(q)]) => {
                prims.knowledge_query(q, &mut *self.rng).map(Value::Str)
            }
            _ => {
                let got: Vec<&str> = args.iter().map(Value::type_name).collect();
                return type_mismatch(
                    format!("{name}() called with arguments ({})", got.join(", ")),
                    loc,
                );
            }
        };
        match result {
            Ok(v) => {
                self.trace.push(PrimitiveCall {
                    name: name.to_string(),
                    args: rendered,
                    result: Some(v.to_string()),
                    error: None,
                });
                Ok(v)
            }
            Err(e) => {
                self.trace.push(PrimitiveCall {
                    name: name.to_string(),
                    args: rendered,
                    result: None,
                    error: Some(e.to_string()),
                });
                Err(RuntimeError::new(
                    RuntimeErrorKind::PrimitiveFailure,
                    format!("{name}: {e}"),
                    loc,
                ))
            }
        }
    }
}

fn arity(name: &str, args: &[Value], n: usize, loc: Location) -> Exec<()> {
    if args.len() != n {
        return type_mismatch(
            format!("{name}() takes {n} argument(s), got {}", args.len()),
            loc,
        );
    }
    Ok(())
}

fn conversion<T>(message: impl Into<String>, loc: Location) -> Exec<T> {
    Err(RuntimeError::new(
        RuntimeErrorKind::ConversionFailure,
        message,
        loc,
    ))
}

fn parse_int(s: &str) -> Option<i64> {
    let t = s.trim();
    let digits = t.strip_prefix(['+', '-']).unwrap_or(t);
    if digits.is_empty() || !digits.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    t.parse::<i64>().ok()
}

fn builtin(name: &str, args: Vec<Value>, images: &[ImageHandle], loc: Location) -> Exec<Value> {
    match name {
        "open_image" | "open_images" => {
            arity(name, &args, 1, loc)?;
            if !matches!(args[0], Value::Str(_)) {
                return type_mismatch(format!("{name}() expects a path string"), loc);
            }
            if name == "open_images" {
                return Ok(Value::ImageList(images.to_vec()));
            }
            images.first().cloned().map(Value::Image).ok_or_else(|| {
                RuntimeError::new(
                    RuntimeErrorKind::PrimitiveFailure,
                    "no images are bound to this execution",
                    loc,
                )
            })
        }
        "int" => {
            arity(name, &args, 1, loc)?;
            match &args[0] {
                Value::Int(i) => Ok(Value::Int(*i)),
                Value::Str(s) => match parse_int(s) {
                    Some(i) => Ok(Value::Int(i)),
                    None => conversion(format!("int() cannot convert {s:?}"), loc),
                },
                Value::Float(x) => {
                    let t = x.trunc();
                    if t.is_finite() && t >= i64::MIN as f64 && t < i64::MAX as f64 {
                        Ok(Value::Int(t as i64))
                    } else {
                        conversion(format!("int() cannot convert {}", format_float(*x)), loc)
                    }
                }
                other => conversion(format!("int() cannot convert {}", other.type_name()), loc),
            }
        }
        "float" => {
            arity(name, &args, 1, loc)?;
            match &args[0] {
                Value::Int(i) => Ok(Value::Float(*i as f64)),
                Value::Float(x) => Ok(Value::Float(*x)),
                Value::Str(s) => match s.trim().parse::<f64>() {
                    Ok(x) => Ok(Value::Float(x)),
                    Err(_) => conversion(format!("float() cannot convert {s:?}"), loc),
                },
                other => conversion(format!("float() cannot convert {}", other.type_name()), loc),
            }
        }
        "str" => {
            arity(name, &args, 1, loc)?;
            match &args[0] {
                Value::Str(s) => Ok(Value::Str(s.clone())),
                v @ (Value::Int(_)
                | Value::Float(_)
                | Value::Bool(_)
                | Value::None
                | Value::Pos { .. }) => Ok(Value::Str(v.to_string())),
                other => type_mismatch(format!("str() of {}", other.type_name()), loc),
            }
        }
        "len" => {
            arity(name, &args, 1, loc)?;
            let n = match &args[0] {
                Value::Str(s) => s.chars().count(),
                Value::ImageList(v) => v.len(),
                Value::Detections(v) => v.len(),
                other => return type_mismatch(format!("len() of {}", other.type_name()), loc),
            };
            Ok(Value::Int(n as i64))
        }
        "abs" => {
            arity(name, &args, 1, loc)?;
            match &args[0] {
                Value::Int(i) => i.checked_abs().map(Value::Int).ok_or_else(|| overflow(loc)),
                Value::Float(x) => Ok(Value::Float(x.abs())),
                other => type_mismatch(format!("abs() of {}", other.type_name()), loc),
            }
        }
        "min" | "max" => {
            if args.is_empty() {
                return type_mismatch(format!("{name}() expects at least one argument"), loc);
            }
            let want = if name == "min" { CmpOp::Lt } else { CmpOp::Gt };
            let mut best = args[0].clone();
            if !matches!(best, Value::Int(_) | Value::Float(_) | Value::Str(_)) {
                return type_mismatch(format!("{name}() of {}", best.type_name()), loc);
            }
            for v in args.into_iter().skip(1) {
                if compare(want, &v, &best, loc)? {
                    best = v;
                }
            }
            Ok(best)
        }
        _ => type_mismatch(format!("`{name}` is not callable"), loc),
    }
}

fn as_f64(v: &Value) -> Option<f64> {
    match v {
        Value::Int(i) => Some(*i as f64),
        Value::Float(x) => Some(*x),
        _ => None,
    }
}

fn binary(op: BinOp, l: Value, r: Value, loc: Location) -> Exec<Value> {
    use Value::{Float, Int, Str};
    match (op, &l, &r) {
        (BinOp::Add, Str(a), Str(b)) => Ok(Str(format!("{a}{b}"))),
        (BinOp::Add, Int(a), Int(b)) => a.checked_add(*b).map(Int).ok_or_else(|| overflow(loc)),
        (BinOp::Sub, Int(a), Int(b)) => a.checked_sub(*b).map(Int).ok_or_else(|| overflow(loc)),
        (BinOp::Mul, Int(a), Int(b)) => a.checked_mul(*b).map(Int).ok_or_else(|| overflow(loc)),
        (BinOp::Mod, Int(a), Int(b)) => {
            if *b == 0 {
                return Err(RuntimeError::new(
                    RuntimeErrorKind::DivisionByZero,
                    "modulo by zero",
                    loc,
                ));
            }
            // Result takes the sign of the divisor.
            let m = a.checked_rem(*b).ok_or_else(|| overflow(loc))?;
            Ok(Int(if m != 0 && ((m < 0) != (*b < 0)) {
                m + b
            } else {
                m
            }))
        }
        _ => {
            let (Some(a), Some(b)) = (as_f64(&l), as_f64(&r)) else {
                return type_mismatch(
                    format!(
                        "unsupported operand types for {}: {} and {}",
                        op.symbol(),
                        l.type_name(),
                        r.type_name()
                    ),
                    loc,
                );
            };
            match op {
                BinOp::Add => Ok(Float(a + b)),
                BinOp::Sub => Ok(Float(a - b)),
                BinOp::Mul => Ok(Float(a * b)),
                BinOp::Div | BinOp::Mod if b == 0.0 => Err(RuntimeError::new(
                    RuntimeErrorKind::DivisionByZero,
                    "division by zero",
                    loc,
                )),
                BinOp::Div => Ok(Float(a / b)),
                BinOp::Mod => Ok(Float(a - b * (a / b).floor())),
            }
        }
    }
}

fn compare(op: CmpOp, l: &Value, r: &Value, loc: Location) -> Exec<bool> {
    use std::cmp::Ordering;
    let ordering: Option<Ordering> = match (l, r) {
        (Value::Int(a), Value::Int(b)) => Some(a.cmp(b)),
        (Value::Str(a), Value::Str(b)) => Some(a.cmp(b)),
        _ => match (as_f64(l), as_f64(r)) {
            (Some(a), Some(b)) => {
                return Ok(match op {
                    CmpOp::Eq => a == b,
                    CmpOp::Ne => a != b,
                    CmpOp::Lt => a < b,
                    CmpOp::Le => a <= b,
                    CmpOp::Gt => a > b,
                    CmpOp::Ge => a >= b,
                })
            }
            _ => None,
        },
    };
    if let Some(ord) = ordering {
        return Ok(match op {
            CmpOp::Eq => ord == Ordering::Equal,
            CmpOp::Ne => ord != Ordering::Equal,
            CmpOp::Lt => ord == Ordering::Less,
            CmpOp::Le => ord != Ordering::Greater,
            CmpOp::Gt => ord == Ordering::Greater,
            CmpOp::Ge => ord != Ordering::Less,
        });
    }
    let same_type = std::mem::discriminant(l) == std::mem::discriminant(r);
    if same_type && matches!(op, CmpOp::Eq | CmpOp::Ne) {
        let eq = l == r;
        return Ok(if op == CmpOp::Eq { eq } else { !eq });
    }
    type_mismatch(
        format!(
            "cannot compare {} and {} with {}",
            l.type_name(),
            r.type_name(),
            op.symbol()
        ),
        loc,
    )
}
