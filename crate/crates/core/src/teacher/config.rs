use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Geometry and seed of the frozen dual encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    /// Frame height in pixels.
    pub height: usize,
    /// Frame width in pixels.
    pub width: usize,
    pub channels: usize,
    /// Square patch side in pixels.
    pub patch: usize,
    /// Number of transformer blocks.
    pub depth: usize,
    /// Token width.
    pub dim: usize,
    pub heads: usize,
    /// Output feature width shared by both encoders.
    pub feature_dim: usize,
    pub vocab: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            height: 32,
            width: 32,
            channels: 3,
            patch: 8,
            depth: 4,
            dim: 64,
            heads: 4,
            feature_dim: 64,
            vocab: 256,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("height", self.height),
            ("width", self.width),
            ("channels", self.channels),
            ("patch", self.patch),
            ("dim", self.dim),
            ("heads", self.heads),
            ("feature_dim", self.feature_dim),
            ("vocab", self.vocab),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::arg(format!("encoder.{name} must be positive")));
            }
        }
        if self.height % self.patch != 0 || self.width % self.patch != 0 {
            return Err(Error::arg(format!(
                "frame {}x{} is not divisible by patch size {}",
                self.height, self.width, self.patch
            )));
        }
        if self.dim % self.heads != 0 {
            return Err(Error::arg(format!(
                "token width {} is not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        Ok(())
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.height / self.patch, self.width / self.patch)
    }

    /// K = H·W / P².
    pub fn num_patches(&self) -> usize {
        num_patches(self.height, self.width, self.patch)
    }

    pub fn patch_len(&self) -> usize {
        self.patch * self.patch * self.channels
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    /// Analytic multiply-accumulate count of one forward pass over
    /// `n_tokens` tokens (CLS and residual included).
    ///
    /// Terms, in fused multiply-add units:
    /// - patch projection: `(n − 1) · P²C · d` (every token except CLS is
    ///   treated as a projected patch)
    /// - per block, attention: `4·n·d²` for the Q/K/V/output projections
    ///   plus `2·n²·d` for scores and the weighted value sum
    /// - per block, MLP: `8·n·d²` (two `d × 4d` maps)
    /// - readout: `d · b`
    ///
    /// Layer norms, softmax and activations are not counted.
    pub fn count_flops_full(&self, n_tokens: usize) -> f64 {
        FlopLedger::new(self, n_tokens).total()
    }
}

pub fn num_patches(height: usize, width: usize, patch: usize) -> usize {
    height * width / (patch * patch)
}

/// Term-by-term breakdown behind [`EncoderConfig::count_flops_full`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlopLedger {
    pub patch_projection: f64,
    pub attention: f64,
    pub mlp: f64,
    pub readout: f64,
}

impl FlopLedger {
    pub fn new(cfg: &EncoderConfig, n_tokens: usize) -> Self {
        let n = n_tokens.max(1) as f64;
        let d = cfg.dim as f64;
        let layers = cfg.depth as f64;
        FlopLedger {
            patch_projection: (n - 1.0) * cfg.patch_len() as f64 * d,
            attention: layers * (4.0 * n * d * d + 2.0 * n * n * d),
            mlp: layers * 8.0 * n * d * d,
            readout: d * cfg.feature_dim as f64,
        }
    }

    pub fn total(&self) -> f64 {
        self.patch_projection + self.attention + self.mlp + self.readout
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patch_counts() {
        assert_eq!(EncoderConfig::default().num_patches(), 16);
        assert_eq!(num_patches(224, 224, 32), 49);
        assert_eq!(num_patches(224, 224, 16), 196);
        assert_eq!(num_patches(224, 224, 14), 256);
    }

    #[test]
    fn validation() {
        assert!(EncoderConfig::default().validate().is_ok());
        let bad = EncoderConfig {
            height: 30,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = EncoderConfig {
            heads: 5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn doubling_tokens_roughly_doubles_cost() {
        let cfg = EncoderConfig {
            dim: 512,
            ..Default::default()
        };
        let ratio = cfg.count_flops_full(34) / cfg.count_flops_full(17);
        assert!((ratio - 2.0).abs() < 0.1, "{ratio}");
    }

    #[test]
    fn zero_depth_is_projection_and_readout() {
        let cfg = EncoderConfig {
            depth: 0,
            ..Default::default()
        };
        let n = 17;
        let want = 16.0 * 192.0 * 64.0 + 64.0 * 64.0;
        assert_eq!(cfg.count_flops_full(n), want);
    }

    #[test]
    fn toy_ledger_matches_hand_sum() {
        let cfg = EncoderConfig::default();
        // L=4, d=64, n=17, P²C=192, b=64, summed by hand:
        //   projection 16·192·64             =   196 608
        //   attention  4·(4·17·4096 + 2·289·64) = 4·(278 528 + 36 992) = 1 262 080
        //   mlp        4·8·17·4096           = 2 228 224
        //   readout    64·64                 =     4 096
        let want = 196_608.0 + 1_262_080.0 + 2_228_224.0 + 4_096.0;
        assert_eq!(cfg.count_flops_full(17), want);
    }
}
