use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the final embedding is formed from the two attention layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pipeline {
    /// Position embeddings are added to the structural outputs, the sum
    /// feeds temporal attention, and the newest temporal row is the
    /// embedding.
    #[default]
    Temporal,
    /// `H_t = C_t + P_t`: structural output plus the newest position
    /// embedding; temporal attention is bypassed.
    Literal,
}

/// Temporal mask convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskMode {
    /// `M[i][j] = 0` iff `j <= i`.
    #[default]
    Causal,
    /// `M[i][j] = 0` iff `i < j`. The newest row is fully masked, so a
    /// forward pass fails with a degenerate-row error.
    Strict,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Embedding dimension.
    pub d: usize,
    /// Per-head temporal projection width.
    pub k: usize,
    /// Temporal window length.
    pub l: usize,
    /// Structural heads.
    pub h: usize,
    /// Temporal heads.
    pub g: usize,
    #[serde(default)]
    pub pipeline: Pipeline,
    #[serde(default)]
    pub mask: MaskMode,
}

impl ModelConfig {
    /// Config with `k = d / g`.
    pub fn new(d: usize, l: usize, h: usize, g: usize) -> Self {
        Self {
            d,
            k: d.checked_div(g).unwrap_or(0),
            l,
            h,
            g,
            pipeline: Pipeline::Temporal,
            mask: MaskMode::Causal,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.h == 0 || self.g == 0 || self.k == 0 {
            return Err(Error::Config(format!("all of d, k, h, g must be positive: {self:?}")));
        }
        if !self.d.is_multiple_of(self.h) {
            return Err(Error::Config(format!("h = {} does not divide d = {}", self.h, self.d)));
        }
        if self.g * self.k != self.d {
            return Err(Error::Config(format!(
                "g * k = {} * {} must equal d = {}",
                self.g, self.k, self.d
            )));
        }
        if self.l < 1 {
            return Err(Error::Config("window l must be at least 1".into()));
        }
        Ok(())
    }

    /// Width of one structural head.
    pub fn head_dim(&self) -> usize {
        self.d / self.h
    }

    /// Closed-form trainable parameter count at node capacity `n`.
    pub fn parameter_count(&self, n: usize) -> usize {
        let dh = self.head_dim();
        let structural = self.h * (dh * n + 2 * dh);
        let temporal = self.g * 3 * self.d * self.k;
        let positions = self.l * self.d;
        structural + temporal + positions
    }
}
