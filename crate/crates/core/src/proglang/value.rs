use std::fmt;

use serde::{Deserialize, Serialize};

use crate::primitives::Detection;

/// Opaque reference to an image, passed through to backends.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImageHandle(String);

impl ImageHandle {
    pub fn new(image_ref: impl Into<String>) -> Self {
        ImageHandle(image_ref.into())
    }

    pub fn image_ref(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ImageHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Runtime value of the program language.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Str(String),
    Int(i64),
    Float(f64),
    Bool(bool),
    Image(ImageHandle),
    ImageList(Vec<ImageHandle>),
    Pos {
        x: f64,
        y: f64,
    },
    /// Result of `find_object`; only `len()` is defined on it.
    Detections(Vec<Detection>),
    None,
}

impl Value {
    pub fn type_name(&self) -> &'static str {
        match self {
            Value::Str(_) => "str",
            Value::Int(_) => "int",
            Value::Float(_) => "float",
            Value::Bool(_) => "bool",
            Value::Image(_) => "Image",
            Value::ImageList(_) => "List[Image]",
            Value::Pos { .. } => "position",
            Value::Detections(_) => "List[Object]",
            Value::None => "None",
        }
    }
}

/// Decimal rendering of a float with no trailing zeros (`2.0` -> `2`).
pub fn format_float(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    format!("{x}")
}

impl fmt::Display for Value {
    /// Debug-style rendering used in traces.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Str(s) => write!(f, "{s:?}"),
            Value::Int(i) => write!(f, "{i}"),
            Value::Float(x) => f.write_str(&format_float(*x)),
            Value::Bool(b) => f.write_str(if *b { "True" } else { "False" }),
            Value::Image(h) => write!(f, "<image {h}>"),
            Value::ImageList(hs) => {
                f.write_str("[")?;
                for (i, h) in hs.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "<image {h}>")?;
                }
                f.write_str("]")
            }
            Value::Pos { x, y } => write!(f, "({}, {})", format_float(*x), format_float(*y)),
            Value::Detections(ds) => write!(f, "<{} objects>", ds.len()),
            Value::None => f.write_str("None"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_formatting() {
        assert_eq!(format_float(2.0), "2");
        assert_eq!(format_float(2.5), "2.5");
        assert_eq!(format_float(-0.0), "0");
        assert_eq!(format_float(0.1 + 0.2), "0.30000000000000004");
    }
}
