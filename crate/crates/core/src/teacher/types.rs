use crate::error::{Error, Result};
use crate::tensor::{dot, norm, Tensor};

/// One video frame: `height × width × channels` 8-bit intensities,
/// row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub pixels: Vec<u8>,
    /// Position of the frame in its video.
    pub index: usize,
}

impl Frame {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        pixels: Vec<u8>,
        index: usize,
    ) -> Result<Self> {
        if pixels.len() != height * width * channels {
            return Err(Error::dim(format!(
                "frame {height}x{width}x{channels} needs {} pixels, got {}",
                height * width * channels,
                pixels.len()
            )));
        }
        Ok(Frame {
            height,
            width,
            channels,
            pixels,
            index,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: u8) -> Self {
        Frame {
            height,
            width,
            channels,
            pixels: vec![value; height * width * channels],
            index: 0,
        }
    }

    pub fn at(&self, y: usize, x: usize, c: usize) -> u8 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    pub fn set(&mut self, y: usize, x: usize, c: usize, v: u8) {
        self.pixels[(y * self.width + x) * self.channels + c] = v;
    }

    /// Mean absolute pixel difference to another frame of the same extents.
    pub fn mean_abs_diff(&self, other: &Frame) -> f64 {
        let total: u64 = self
            .pixels
            .iter()
            .zip(&other.pixels)
            .map(|(&a, &b)| a.abs_diff(b) as u64)
            .sum();
        total as f64 / self.pixels.len() as f64
    }
}

/// Patch coordinate on the token grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GridPos {
    pub row: usize,
    pub col: usize,
}

/// Token matrix of one frame.
///
/// Rows are laid out as `[CLS?, residual?, patches...]`. `positions` and
/// `weights` describe the patch rows only; the special tokens have neither
/// a grid position nor a merge weight.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub tokens: Tensor,
    pub positions: Vec<GridPos>,
    pub weights: Vec<f64>,
    pub has_cls: bool,
    pub has_residual: bool,
}

impl TokenSequence {
    /// Number of special tokens in front of the patches.
    pub fn prefix_len(&self) -> usize {
        self.has_cls as usize + self.has_residual as usize
    }

    pub fn num_patches(&self) -> usize {
        self.positions.len()
    }

    pub fn len(&self) -> usize {
        self.tokens.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty() && self.prefix_len() == 0
    }

    pub fn check(&self) -> Result<()> {
        if self.tokens.rows() != self.prefix_len() + self.positions.len() {
            return Err(Error::dim(format!(
                "{} token rows for {} special and {} patch tokens",
                self.tokens.rows(),
                self.prefix_len(),
                self.positions.len()
            )));
        }
        if self.weights.len() != self.positions.len() {
            return Err(Error::dim("one merge weight per patch token required"));
        }
        Ok(())
    }

    /// Keeps the special tokens and the patch rows at `keep` (indices into
    /// the patch list, ascending).
    pub fn retain_patches(&self, keep: &[usize]) -> Result<TokenSequence> {
        let prefix = self.prefix_len();
        let rows: Vec<usize> = (0..prefix)
            .chain(keep.iter().map(|&k| k + prefix))
            .collect();
        Ok(TokenSequence {
            tokens: self.tokens.select_rows(&rows)?,
            positions: keep.iter().map(|&k| self.positions[k]).collect(),
            weights: keep.iter().map(|&k| self.weights[k]).collect(),
            has_cls: self.has_cls,
            has_residual: self.has_residual,
        })
    }
}

/// Frame- or text-level embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Feature {
    pub values: Vec<f64>,
    pub normalized: bool,
}

impl Feature {
    /// Wraps raw values, L2-normalizing them.
    pub fn normalized(values: Vec<f64>) -> Self {
        let n = norm(&values);
        let values = if n > 0.0 {
            values.into_iter().map(|v| v / n).collect()
        } else {
            values
        };
        Feature {
            values,
            normalized: true,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        norm(&self.values)
    }

    pub fn dot(&self, other: &Feature) -> f64 {
        dot(&self.values, &other.values)
    }

    pub fn cosine(&self, other: &Feature) -> f64 {
        let d = self.norm() * other.norm();
        if d == 0.0 {
            0.0
        } else {
            self.dot(other) / d
        }
    }

    pub fn as_tensor(&self) -> Tensor {
        Tensor::new(vec![1, self.values.len()], self.values.clone()).expect("non-empty feature")
    }
}
