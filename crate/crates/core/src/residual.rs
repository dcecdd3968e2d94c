//! The residual student: a learnable map from an I-feature to one extra
//! input token, P-feature encoding on reduced token sets, the interleaved
//! video pipeline, and the two average-cost models.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Eager, Graph};
use crate::error::{Error, Result};
use crate::io::{read_file, write_atomic, ByteReader, ByteWriter};
use crate::motion::{aggregate_motion, patch_scores, MotionField, Upsample, DEFAULT_WINDOW};
use crate::parallel::map_indices;
use crate::reduction::{
    downsample_frame, retained_count, select_drop, DropStrategy, ReductionConfig, ReductionMode,
};
use crate::teacher::{DualEncoder, EncoderConfig, Feature, Frame, MergeState, TokenSequence};
use crate::tensor::Tensor;

pub const TOKENIZER_MAGIC: &[u8; 4] = b"RVTA";
pub const FEATURES_MAGIC: &[u8; 4] = b"RVTF";

/// Linear map `b → d` turning an I-feature into the residual token.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualTokenizer {
    /// `b × d`
    pub weight: Tensor,
    /// `d`
    pub bias: Tensor,
}

impl ResidualTokenizer {
    pub fn zeros(b: usize, d: usize) -> Self {
        ResidualTokenizer {
            weight: Tensor::zeros(&[b, d]),
            bias: Tensor::zeros(&[d]),
        }
    }

    /// Gaussian weights with standard deviation `1/√b`, zero bias.
    pub fn init(b: usize, d: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = Normal::new(0.0, 1.0 / (b as f64).sqrt()).expect("finite std");
        let data = (0..b * d).map(|_| dist.sample(&mut rng)).collect();
        ResidualTokenizer {
            weight: Tensor::new(vec![b, d], data).expect("positive extents"),
            bias: Tensor::zeros(&[d]),
        }
    }

    pub fn for_encoder(cfg: &EncoderConfig, seed: u64) -> Self {
        Self::init(cfg.feature_dim, cfg.dim, seed)
    }

    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn token_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn parameter_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    /// Weight with the bias appended as a last row, `(b + 1) × d`. The
    /// residual token is `[f, 1] · augmented`.
    pub fn augmented(&self) -> Tensor {
        let bias = self
            .bias
            .clone()
            .reshape(vec![1, self.token_dim()])
            .expect("bias has d entries");
        Tensor::concat_rows(&[&self.weight, &bias]).expect("matching widths")
    }

    pub fn from_augmented(t: &Tensor) -> Result<Self> {
        if t.shape().len() != 2 || t.rows() < 2 {
            return Err(Error::dim(format!(
                "augmented tokenizer shape {:?}",
                t.shape()
            )));
        }
        let b = t.rows() - 1;
        let rows: Vec<usize> = (0..b).collect();
        Ok(ResidualTokenizer {
            weight: t.select_rows(&rows)?,
            bias: t.select_rows(&[b])?.reshape(vec![t.cols()])?,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = ByteWriter::with_header(TOKENIZER_MAGIC);
        w.usize32(self.input_dim(), "feature width")?;
        w.usize32(self.token_dim(), "token width")?;
        for &v in self.weight.data().iter().chain(self.bias.data()) {
            w.f64(v);
        }
        Ok(w.finish())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::open(bytes, TOKENIZER_MAGIC, "tokenizer checkpoint")?;
        let b = r.u32()? as usize;
        let d = r.u32()? as usize;
        if b == 0 || d == 0 || bytes.len() != 16 + 8 * (b * d + d) {
            return Err(Error::format(
                "tokenizer checkpoint",
                format!("size does not match {b}x{d}"),
            ));
        }
        let weight = (0..b * d).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let bias = (0..d).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        r.finish()?;
        Ok(ResidualTokenizer {
            weight: Tensor::new(vec![b, d], weight)?,
            bias: Tensor::new(vec![d], bias)?,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}

/// The residual token `𝒜(f)` as a `1 × d` row.
pub fn residual_tokenize(f: &Feature, tokenizer: &ResidualTokenizer) -> Result<Tensor> {
    if f.dim() != tokenizer.input_dim() {
        return Err(Error::dim(format!(
            "feature width {} does not match tokenizer input {}",
            f.dim(),
            tokenizer.input_dim()
        )));
    }
    augmented_feature(f).matmul(&tokenizer.augmented())
}

/// `[f, 1]` as a `1 × (b + 1)` row.
pub fn augmented_feature(f: &Feature) -> Tensor {
    let mut v = f.values.clone();
    v.push(1.0);
    Tensor::new(vec![1, v.len()], v).expect("non-empty")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterleaveConfig {
    /// P-frames between consecutive I-frames.
    pub n: usize,
    pub reduction: ReductionConfig,
    pub use_residual: bool,
    /// Temporal window for motion aggregation.
    pub motion_window: usize,
    pub upsample: Upsample,
}

impl Default for InterleaveConfig {
    fn default() -> Self {
        InterleaveConfig {
            n: 2,
            reduction: ReductionConfig::default(),
            use_residual: true,
            motion_window: DEFAULT_WINDOW,
            upsample: Upsample::Nearest,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FrameKind {
    I,
    P,
}

impl FrameKind {
    /// Kind of frame `t` at interleave factor `n`.
    pub fn at(t: usize, n: usize) -> FrameKind {
        if t % (n + 1) == 0 {
            FrameKind::I
        } else {
            FrameKind::P
        }
    }
}

/// Per-frame features of one clip, with the I-frame each P-frame used.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub features: Vec<Feature>,
    pub kinds: Vec<FrameKind>,
    pub references: Vec<usize>,
}

impl FeatureSequence {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Feature::dim)
    }

    /// All-I sequence, e.g. for features read without kind tags.
    pub fn all_i(features: Vec<Feature>) -> Self {
        let n = features.len();
        FeatureSequence {
            features,
            kinds: vec![FrameKind::I; n],
            references: (0..n).collect(),
        }
    }

    pub fn to_bytes(&self, with_kinds: bool) -> Result<Vec<u8>> {
        let b = self.dim();
        let mut w = ByteWriter::with_header(FEATURES_MAGIC);
        w.usize32(self.len(), "feature count")?;
        w.usize32(b, "feature width")?;
        w.u8(with_kinds as u8);
        for f in &self.features {
            if f.dim() != b {
                return Err(Error::dim("features differ in width"));
            }
            for &v in &f.values {
                w.f32(v as f32);
            }
        }
        if with_kinds {
            for k in &self.kinds {
                w.u8(match k {
                    FrameKind::I => b'I',
                    FrameKind::P => b'P',
                });
            }
        }
        Ok(w.finish())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::open(bytes, FEATURES_MAGIC, "feature file")?;
        let count = r.u32()? as usize;
        let b = r.u32()? as usize;
        let with_kinds = match r.u8()? {
            0 => false,
            1 => true,
            other => return Err(Error::format("feature file", format!("kind flag {other}"))),
        };
        let expected = 17 + count * b * 4 + if with_kinds { count } else { 0 };
        if bytes.len() != expected {
            return Err(Error::format(
                "feature file",
                format!("{} bytes, header promises {expected}", bytes.len()),
            ));
        }
        let mut features = Vec::with_capacity(count);
        for _ in 0..count {
            let values = (0..b)
                .map(|_| r.f32().map(f64::from))
                .collect::<Result<Vec<_>>>()?;
            let normalized = (crate::tensor::norm(&values) - 1.0).abs() < 1e-5;
            features.push(Feature { values, normalized });
        }
        let mut seq = FeatureSequence::all_i(features);
        if with_kinds {
            let mut last_i = None;
            for t in 0..count {
                let kind = match r.u8()? {
                    b'I' => FrameKind::I,
                    b'P' => FrameKind::P,
                    other => {
                        return Err(Error::format("feature file", format!("kind byte {other}")))
                    }
                };
                if kind == FrameKind::I {
                    last_i = Some(t);
                }
                seq.kinds[t] = kind;
                seq.references[t] = last_i
                    .ok_or_else(|| Error::format("feature file", "P-frame before any I-frame"))?;
            }
        }
        r.finish()?;
        Ok(seq)
    }

    pub fn save(&self, path: impl AsRef<Path>, with_kinds: bool) -> Result<()> {
        write_atomic(path, &self.to_bytes(with_kinds)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}

/// Differentiable student pass: `[CLS, residual?, patches]` through the
/// frozen transformer. `tokens` must hold CLS and no residual token.
pub fn student_forward<'w, G: Graph<'w>>(
    model: &'w DualEncoder,
    g: &mut G,
    tokens: &'w TokenSequence,
    residual: Option<&G::Node>,
    merge_r: usize,
) -> Result<G::Node> {
    tokens.check()?;
    if !tokens.has_cls || tokens.has_residual {
        return Err(Error::arg("student input needs CLS and no residual token"));
    }
    let x = g.constant_ref(&tokens.tokens);
    let (x, prefix) = match residual {
        None => (x, 1),
        Some(r) => {
            let n = tokens.len();
            let cls = g.select_rows(&x, &[0])?;
            let mut parts = vec![cls, r.clone()];
            if n > 1 {
                let rest: Vec<usize> = (1..n).collect();
                parts.push(g.select_rows(&x, &rest)?);
            }
            (g.concat_rows(&parts)?, 2)
        }
    };
    if merge_r > 0 {
        let mut state = MergeState::new(merge_r, tokens);
        model.forward(g, &x, prefix, Some(&mut state))
    } else {
        model.forward(g, &x, prefix, None)
    }
}

/// Frozen teacher paired with a residual tokenizer.
#[derive(Debug, Clone, Copy)]
pub struct ResidualViT<'m> {
    pub teacher: &'m DualEncoder,
    pub tokenizer: &'m ResidualTokenizer,
}

impl<'m> ResidualViT<'m> {
    pub fn new(teacher: &'m DualEncoder, tokenizer: &'m ResidualTokenizer) -> Result<Self> {
        let cfg = teacher.config();
        if tokenizer.input_dim() != cfg.feature_dim || tokenizer.token_dim() != cfg.dim {
            return Err(Error::dim(format!(
                "tokenizer {}x{} does not fit encoder b={} d={}",
                tokenizer.input_dim(),
                tokenizer.token_dim(),
                cfg.feature_dim,
                cfg.dim
            )));
        }
        Ok(ResidualViT { teacher, tokenizer })
    }

    /// Tokens of a P-frame before the drop/merge step: full-resolution
    /// patches, or downsampled ones in resolution mode.
    pub fn p_frame_tokens(
        &self,
        frame: &Frame,
        reduction: &ReductionConfig,
    ) -> Result<TokenSequence> {
        match (reduction.mode, reduction.target_resolution) {
            (ReductionMode::Resolution, Some((h, w))) => {
                let small = downsample_frame(frame, h, w, self.teacher.config().patch)?;
                self.teacher.patchify_any(&small)
            }
            (ReductionMode::Resolution, None) => {
                Err(Error::arg("resolution mode needs target_resolution"))
            }
            _ => self.teacher.patchify(frame),
        }
    }

    /// P-feature of one frame. `tokens` is the frame's token set; drop
    /// reduction is applied here, merging inside the transformer.
    pub fn encode_p(
        &self,
        f_ref: Option<&Feature>,
        tokens: &TokenSequence,
        icfg: &InterleaveConfig,
        scores: Option<&[f64]>,
    ) -> Result<Feature> {
        let reduced;
        let tokens = match icfg.reduction.mode {
            ReductionMode::Drop => {
                reduced = select_drop(tokens, &icfg.reduction, scores)?;
                &reduced
            }
            _ => tokens,
        };
        let merge_r = if icfg.reduction.mode == ReductionMode::Merge {
            icfg.reduction.r
        } else {
            0
        };
        let mut g = Eager;
        let out = if icfg.use_residual {
            let f = f_ref.ok_or_else(|| {
                Error::arg("P-frame encoding with a residual token needs a reference feature")
            })?;
            let r = residual_tokenize(f, self.tokenizer)?;
            let r = g.constant(r);
            student_forward(self.teacher, &mut g, tokens, Some(&r), merge_r)?
        } else {
            student_forward(self.teacher, &mut g, tokens, None, merge_r)?
        };
        Ok(Feature {
            values: out.into_owned().into_data(),
            normalized: true,
        })
    }

    /// Motion scores for frame `t`, or `None` when the strategy does not
    /// use them.
    fn scores_for(
        &self,
        t: usize,
        icfg: &InterleaveConfig,
        motion: Option<&MotionField>,
    ) -> Result<Option<Vec<f64>>> {
        let r = &icfg.reduction;
        if r.mode != ReductionMode::Drop || r.strategy != DropStrategy::Motion {
            return Ok(None);
        }
        let field = motion.ok_or_else(|| Error::arg("motion strategy needs a motion field"))?;
        let grid = aggregate_motion(field, t, icfg.motion_window)?;
        patch_scores(&grid, self.teacher.config(), icfg.upsample).map(Some)
    }

    /// Encodes a clip: frames at `t ≡ 0 (mod N+1)` with the full encoder,
    /// every other frame as a P-frame referencing the nearest preceding
    /// I-frame. I-frames are encoded first (in parallel), then P-frames.
    ///
    /// For the motion strategy without a supplied field, a frame-difference
    /// proxy is computed from the clip.
    pub fn encode_video_interleaved(
        &self,
        frames: &[Frame],
        icfg: &InterleaveConfig,
        motion: Option<&MotionField>,
    ) -> Result<FeatureSequence> {
        if frames.is_empty() {
            return Err(Error::arg("no frames to encode"));
        }
        icfg.reduction.validate(self.teacher.config().patch)?;
        let n = icfg.n;
        let proxy;
        let motion = match motion {
            Some(m) => {
                if m.frames != frames.len() {
                    return Err(Error::dim(format!(
                        "{} motion frames for {} video frames",
                        m.frames,
                        frames.len()
                    )));
                }
                Some(m)
            }
            None if icfg.reduction.mode == ReductionMode::Drop
                && icfg.reduction.strategy == DropStrategy::Motion
                && n > 0 =>
            {
                proxy = MotionField::from_frames(frames)?;
                Some(&proxy)
            }
            None => None,
        };

        let i_frames: Vec<usize> = (0..frames.len()).step_by(n + 1).collect();
        let i_feats = map_indices(i_frames.len(), |j| {
            self.teacher.encode_frame(&frames[i_frames[j]])
        })?;

        let p_frames: Vec<usize> = (0..frames.len())
            .filter(|&t| FrameKind::at(t, n) == FrameKind::P)
            .collect();
        let p_feats = map_indices(p_frames.len(), |j| {
            let t = p_frames[j];
            let reference = &i_feats[t / (n + 1)];
            let local = InterleaveConfig {
                reduction: icfg.reduction.for_frame(t),
                ..*icfg
            };
            let tokens = self.p_frame_tokens(&frames[t], &local.reduction)?;
            let scores = self.scores_for(t, &local, motion)?;
            self.encode_p(Some(reference), &tokens, &local, scores.as_deref())
        })?;

        let mut features = Vec::with_capacity(frames.len());
        let mut kinds = Vec::with_capacity(frames.len());
        let mut references = Vec::with_capacity(frames.len());
        let (mut i_iter, mut p_iter) = (i_feats.into_iter(), p_feats.into_iter());
        for t in 0..frames.len() {
            let kind = FrameKind::at(t, n);
            features.push(
                match kind {
                    FrameKind::I => i_iter.next(),
                    FrameKind::P => p_iter.next(),
                }
                .expect("one feature per frame"),
            );
            kinds.push(kind);
            references.push(t - t % (n + 1));
        }
        Ok(FeatureSequence {
            features,
            kinds,
            references,
        })
    }
}

/// Average per-frame cost `C·(1 + (1 − p)·N)/(1 + N)`.
pub fn drop_only_cost(c_ev: f64, n: usize, p: f64) -> f64 {
    let n = n as f64;
    c_ev * (1.0 + (1.0 - p) * n) / (1.0 + n)
}

/// Token-ratio cost `C·(1 + N·ρ)/(1 + N)` with
/// `ρ = (retained_count(K, p) + 2)/(K + 1)`, counting CLS and the residual
/// token on the P side and CLS on the I side.
pub fn extended_cost(c_ev: f64, k: usize, n: usize, p: f64) -> f64 {
    let rho = token_ratio(k, p);
    let n = n as f64;
    c_ev * (1.0 + n * rho) / (1.0 + n)
}

pub fn token_ratio(k: usize, p: f64) -> f64 {
    (retained_count(k, p) + 2) as f64 / (k + 1) as f64
}

/// Relative saving of `cost` against `c_ev`, in percent.
pub fn savings_percent(c_ev: f64, cost: f64) -> f64 {
    100.0 * (1.0 - cost / c_ev)
}

/// Analytic per-frame cost of interleaved encoding: the FLOP ledger at
/// `K + 1` tokens for I-frames and `retained + 2` for P-frames, mixed
/// `1 : N`.
pub fn analytic_interleaved_flops(cfg: &EncoderConfig, n: usize, p: f64) -> f64 {
    let k = cfg.num_patches();
    let full = cfg.count_flops_full(k + 1);
    let reduced = cfg.count_flops_full(retained_count(k, p) + 2);
    (full + n as f64 * reduced) / (1 + n) as f64
}
