//! Relevance maps from cross-attention and its gradient, plus the patch
//! sampling and coordinate mapping built on them.
//!
//! For token `i` the map is row `i` of `C ⊙ ReLU(G)`, where `C` is the
//! text-to-patch cross-attention of one layer and `G` the gradient of the
//! image-text matching score with respect to `C`.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::CoordinateFrame;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GradCamError {
    #[error("token index {index} out of range for {tokens} tokens")]
    IndexOutOfRange { index: usize, tokens: usize },
    #[error("no tokens to average over")]
    EmptyTokenSet,
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// Cross-attention `C` and gradient `G`, both `T × (grid_h · grid_w)`,
/// row-major over the patch grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossAttention {
    tokens: Vec<String>,
    attention: Vec<Vec<f64>>,
    gradient: Vec<Vec<f64>>,
    grid_w: usize,
    grid_h: usize,
    layer: usize,
}

impl CrossAttention {
    pub fn new(
        tokens: Vec<String>,
        attention: Vec<Vec<f64>>,
        gradient: Vec<Vec<f64>>,
        grid_w: usize,
        grid_h: usize,
        layer: usize,
    ) -> Result<Self, GradCamError> {
        let width = grid_w * grid_h;
        if grid_w == 0 || grid_h == 0 {
            return Err(GradCamError::Shape("empty patch grid".into()));
        }
        if attention.len() != tokens.len() || gradient.len() != tokens.len() {
            return Err(GradCamError::Shape(format!(
                "{} tokens but {} attention rows and {} gradient rows",
                tokens.len(),
                attention.len(),
                gradient.len()
            )));
        }
        for (t, (c, g)) in attention.iter().zip(&gradient).enumerate() {
            if c.len() != width || g.len() != width {
                return Err(GradCamError::Shape(format!(
                    "row {t}: expected {width} columns, got {} and {}",
                    c.len(),
                    g.len()
                )));
            }
            if c.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(GradCamError::Shape(format!(
                    "row {t}: attention must be finite and nonnegative"
                )));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(GradCamError::Shape(format!(
                    "row {t}: gradient must be finite"
                )));
            }
        }
        Ok(CrossAttention {
            tokens,
            attention,
            gradient,
            grid_w,
            grid_h,
            layer,
        })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn attention(&self) -> &[Vec<f64>] {
        &self.attention
    }

    pub fn gradient(&self) -> &[Vec<f64>] {
        &self.gradient
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.grid_h, self.grid_w)
    }

    pub fn layer(&self) -> usize {
        self.layer
    }
}

/// A relevance value per patch, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCamMap {
    pub values: Vec<f64>,
    pub grid_h: usize,
    pub grid_w: usize,
}

pub fn token_gradcam(ca: &CrossAttention, i: usize) -> Result<GradCamMap, GradCamError> {
    let (c, g) = match (ca.attention.get(i), ca.gradient.get(i)) {
        (Some(c), Some(g)) => (c, g),
        _ => {
            return Err(GradCamError::IndexOutOfRange {
                index: i,
                tokens: ca.tokens.len(),
            })
        }
    };
    Ok(GradCamMap {
        values: c.iter().zip(g).map(|(c, g)| c * g.max(0.0)).collect(),
        grid_h: ca.grid_h,
        grid_w: ca.grid_w,
    })
}

/// Mean of the per-token maps over `token_indices`.
pub fn averaged_gradcam(
    ca: &CrossAttention,
    token_indices: &[usize],
) -> Result<GradCamMap, GradCamError> {
    if token_indices.is_empty() {
        return Err(GradCamError::EmptyTokenSet);
    }
    let mut sum = vec![0.0; ca.grid_w * ca.grid_h];
    for &i in token_indices {
        let m = token_gradcam(ca, i)?;
        for (s, v) in sum.iter_mut().zip(m.values) {
            *s += v;
        }
    }
    let n = token_indices.len() as f64;
    Ok(GradCamMap {
        values: sum.into_iter().map(|s| s / n).collect(),
        grid_h: ca.grid_h,
        grid_w: ca.grid_w,
    })
}

/// Draws `n` patch indices with replacement, proportional to the map values.
/// A map without positive mass is sampled uniformly.
pub fn sample_patches(map: &GradCamMap, n: usize, rng: &mut dyn RngCore) -> Vec<usize> {
    let len = map.values.len();
    if len == 0 {
        return Vec::new();
    }
    let weights: Vec<f64> = map
        .values
        .iter()
        .map(|v| if v.is_finite() && *v > 0.0 { *v } else { 0.0 })
        .collect();
    match WeightedIndex::new(&weights) {
        Ok(dist) => (0..n).map(|_| dist.sample(rng)).collect(),
        Err(_) => (0..n).map(|_| rng.random_range(0..len)).collect(),
    }
}

/// Frame coordinates of the centre of the highest-valued patch. Ties go to
/// the lowest flat index; row 0 is the top of the image.
pub fn argmax_position(map: &GradCamMap, frame: &CoordinateFrame) -> (f64, f64) {
    let mut best = 0;
    for (j, v) in map.values.iter().enumerate() {
        if *v > map.values[best] {
            best = j;
        }
    }
    let row = best / map.grid_w;
    let col = best % map.grid_w;
    let x = frame.left + (col as f64 + 0.5) * (frame.right - frame.left) / map.grid_w as f64;
    let y = frame.bottom
        + (map.grid_h as f64 - row as f64 - 0.5) * (frame.top - frame.bottom) / map.grid_h as f64;
    (x, y)
}
