use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::EncoderConfig;
use super::types::{Feature, Frame, GridPos, TokenSequence};
use crate::autodiff::{Eager, Graph};
use crate::error::{Error, Result};
use crate::io::{read_file, write_atomic, ByteReader, ByteWriter};
use crate::reduction::merge_plan;
use crate::tensor::Tensor;

pub const WEIGHTS_MAGIC: &[u8; 4] = b"RVTW";

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    /// `d × 3d`, columns ordered Q | K | V.
    pub w_qkv: Tensor,
    pub b_qkv: Tensor,
    pub w_out: Tensor,
    pub b_out: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
    pub w_fc: Tensor,
    pub b_fc: Tensor,
    pub w_proj: Tensor,
    pub b_proj: Tensor,
}

/// Frozen vision transformer plus bag-of-embeddings text encoder sharing a
/// `feature_dim`-wide output space.
#[derive(Debug, Clone, PartialEq)]
pub struct DualEncoder {
    cfg: EncoderConfig,
    pub patch_weight: Tensor,
    pub patch_bias: Tensor,
    pub cls: Tensor,
    /// `(K + 1) × d`; row 0 belongs to CLS.
    pub pos: Tensor,
    pub ln_pre_gain: Tensor,
    pub ln_pre_bias: Tensor,
    pub blocks: Vec<Block>,
    pub ln_post_gain: Tensor,
    pub ln_post_bias: Tensor,
    /// `d × b` readout projection.
    pub proj: Tensor,
    /// `vocab × d`.
    pub text_embed: Tensor,
    /// `d × b`.
    pub text_proj: Tensor,
}

/// Bookkeeping for per-block token merging inside a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct MergeState {
    pub r: usize,
    pub weights: Vec<f64>,
    pub positions: Vec<GridPos>,
    /// Patch-token count after each block.
    pub counts: Vec<usize>,
}

impl MergeState {
    pub fn new(r: usize, tokens: &TokenSequence) -> Self {
        MergeState {
            r,
            weights: tokens.weights.clone(),
            positions: tokens.positions.clone(),
            counts: Vec::new(),
        }
    }
}

fn normal(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Tensor {
    let dist = Normal::new(0.0, std).expect("finite std");
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| dist.sample(rng)).collect())
        .expect("positive extents")
}

fn ones(n: usize) -> Tensor {
    Tensor::vector(vec![1.0; n]).expect("positive length")
}

impl DualEncoder {
    /// Randomly initialized, frozen weights drawn from `cfg.seed`.
    pub fn new(cfg: EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let d = cfg.dim;
        let k = cfg.num_patches();
        let inv = |n: usize| 1.0 / (n as f64).sqrt();

        let patch_weight = normal(&mut rng, &[cfg.patch_len(), d], inv(cfg.patch_len()));
        let patch_bias = Tensor::zeros(&[d]);
        let cls = normal(&mut rng, &[d], 1.0);
        let pos = normal(&mut rng, &[k + 1, d], 0.5);
        let mut blocks = Vec::with_capacity(cfg.depth);
        for _ in 0..cfg.depth {
            blocks.push(Block {
                ln1_gain: ones(d),
                ln1_bias: Tensor::zeros(&[d]),
                w_qkv: normal(&mut rng, &[d, 3 * d], inv(d)),
                b_qkv: Tensor::zeros(&[3 * d]),
                w_out: normal(&mut rng, &[d, d], inv(d)),
                b_out: Tensor::zeros(&[d]),
                ln2_gain: ones(d),
                ln2_bias: Tensor::zeros(&[d]),
                w_fc: normal(&mut rng, &[d, 4 * d], inv(d)),
                b_fc: Tensor::zeros(&[4 * d]),
                w_proj: normal(&mut rng, &[4 * d, d], inv(4 * d)),
                b_proj: Tensor::zeros(&[d]),
            });
        }
        let proj = normal(&mut rng, &[d, cfg.feature_dim], inv(d));
        let text_embed = normal(&mut rng, &[cfg.vocab, d], 1.0);
        let text_proj = normal(&mut rng, &[d, cfg.feature_dim], inv(d));
        Ok(DualEncoder {
            cfg,
            patch_weight,
            patch_bias,
            cls,
            pos,
            ln_pre_gain: ones(d),
            ln_pre_bias: Tensor::zeros(&[d]),
            blocks,
            ln_post_gain: ones(d),
            ln_post_bias: Tensor::zeros(&[d]),
            proj,
            text_embed,
            text_proj,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    /// All weights in checkpoint order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = vec![
            &self.patch_weight,
            &self.patch_bias,
            &self.cls,
            &self.pos,
            &self.ln_pre_gain,
            &self.ln_pre_bias,
        ];
        for b in &self.blocks {
            out.extend([
                &b.ln1_gain,
                &b.ln1_bias,
                &b.w_qkv,
                &b.b_qkv,
                &b.w_out,
                &b.b_out,
                &b.ln2_gain,
                &b.ln2_bias,
                &b.w_fc,
                &b.b_fc,
                &b.w_proj,
                &b.b_proj,
            ]);
        }
        out.extend([
            &self.ln_post_gain,
            &self.ln_post_bias,
            &self.proj,
            &self.text_embed,
            &self.text_proj,
        ]);
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![
            &mut self.patch_weight,
            &mut self.patch_bias,
            &mut self.cls,
            &mut self.pos,
            &mut self.ln_pre_gain,
            &mut self.ln_pre_bias,
        ];
        for b in &mut self.blocks {
            out.extend([
                &mut b.ln1_gain,
                &mut b.ln1_bias,
                &mut b.w_qkv,
                &mut b.b_qkv,
                &mut b.w_out,
                &mut b.b_out,
                &mut b.ln2_gain,
                &mut b.ln2_bias,
                &mut b.w_fc,
                &mut b.b_fc,
                &mut b.w_proj,
                &mut b.b_proj,
            ]);
        }
        out.extend([
            &mut self.ln_post_gain,
            &mut self.ln_post_bias,
            &mut self.proj,
            &mut self.text_embed,
            &mut self.text_proj,
        ]);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Order-sensitive FNV-1a over the bit patterns of every weight.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for t in self.tensors() {
            for v in t.data() {
                for b in v.to_bits().to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        }
        h
    }

    /// Splits a frame of the configured extents into `K` projected patch
    /// tokens plus CLS at row 0, positional embeddings included.
    pub fn patchify(&self, frame: &Frame) -> Result<TokenSequence> {
        if frame.height != self.cfg.height
            || frame.width != self.cfg.width
            || frame.channels != self.cfg.channels
        {
            return Err(Error::dim(format!(
                "frame {}x{}x{} does not match encoder {}x{}x{}",
                frame.height,
                frame.width,
                frame.channels,
                self.cfg.height,
                self.cfg.width,
                self.cfg.channels
            )));
        }
        self.patchify_any(frame)
    }

    /// [`Self::patchify`] for frames of any extents divisible by the patch
    /// size. Positional embeddings are area-resampled onto smaller or larger
    /// grids.
    pub fn patchify_any(&self, frame: &Frame) -> Result<TokenSequence> {
        let p = self.cfg.patch;
        if frame.channels != self.cfg.channels {
            return Err(Error::dim(format!(
                "frame has {} channels, encoder expects {}",
                frame.channels, self.cfg.channels
            )));
        }
        if frame.height % p != 0 || frame.width % p != 0 || frame.height == 0 || frame.width == 0 {
            return Err(Error::dim(format!(
                "frame {}x{} is not divisible by patch size {p}",
                frame.height, frame.width
            )));
        }
        let (gh, gw) = (frame.height / p, frame.width / p);
        let k = gh * gw;
        let c = frame.channels;
        let mut patches = Vec::with_capacity(k * self.cfg.patch_len());
        let mut positions = Vec::with_capacity(k);
        for pr in 0..gh {
            for pc in 0..gw {
                positions.push(GridPos { row: pr, col: pc });
                for y in 0..p {
                    for x in 0..p {
                        for ch in 0..c {
                            let v = frame.at(pr * p + y, pc * p + x, ch);
                            patches.push(v as f64 / 127.5 - 1.0);
                        }
                    }
                }
            }
        }
        let patches = Tensor::new(vec![k, self.cfg.patch_len()], patches)?;
        let projected = patches
            .matmul(&self.patch_weight)?
            .add_row(&self.patch_bias)?;
        let pos = self.patch_positions(gh, gw)?;
        let projected = projected.add(&pos)?;
        let cls_pos = self.pos.select_rows(&[0])?.reshape(vec![self.cfg.dim])?;
        let cls = self.cls.add(&cls_pos)?.reshape(vec![1, self.cfg.dim])?;
        let tokens = Tensor::concat_rows(&[&cls, &projected])?;
        Ok(TokenSequence {
            tokens,
            positions,
            weights: vec![1.0; k],
            has_cls: true,
            has_residual: false,
        })
    }

    /// Patch positional embeddings for a `gh × gw` grid.
    fn patch_positions(&self, gh: usize, gw: usize) -> Result<Tensor> {
        let (nh, nw) = self.cfg.grid();
        let rows: Vec<usize> = (1..=nh * nw).collect();
        let native = self.pos.select_rows(&rows)?;
        if (gh, gw) == (nh, nw) {
            return Ok(native);
        }
        let d = self.cfg.dim;
        let wy = area_weights(nh, gh);
        let wx = area_weights(nw, gw);
        let mut out = vec![0.0; gh * gw * d];
        for (ty, row_w) in wy.iter().enumerate() {
            for (tx, col_w) in wx.iter().enumerate() {
                let dst = &mut out[(ty * gw + tx) * d..(ty * gw + tx + 1) * d];
                for &(sy, a) in row_w {
                    for &(sx, b) in col_w {
                        for (o, v) in dst.iter_mut().zip(native.row(sy * nw + sx)) {
                            *o += a * b * v;
                        }
                    }
                }
            }
        }
        Tensor::new(vec![gh * gw, d], out)
    }

    /// Runs the transformer blocks over a token matrix whose first row is
    /// CLS, and returns the normalized `1 × b` readout. `prefix` special rows
    /// are never merged.
    pub fn forward<'w, G: Graph<'w>>(
        &'w self,
        g: &mut G,
        tokens: &G::Node,
        prefix: usize,
        mut merge: Option<&mut MergeState>,
    ) -> Result<G::Node> {
        let d = self.cfg.dim;
        let dh = self.cfg.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut x = g.layer_norm_frozen(tokens, &self.ln_pre_gain, &self.ln_pre_bias)?;
        for block in &self.blocks {
            let h = g.layer_norm_frozen(&x, &block.ln1_gain, &block.ln1_bias)?;
            let qkv = g.linear(&h, &block.w_qkv, &block.b_qkv)?;
            let mut heads = Vec::with_capacity(self.cfg.heads);
            for head in 0..self.cfg.heads {
                let q = g.slice_cols(&qkv, head * dh, dh)?;
                let k = g.slice_cols(&qkv, d + head * dh, dh)?;
                let v = g.slice_cols(&qkv, 2 * d + head * dh, dh)?;
                let s = g.matmul_nt(&q, &k)?;
                let s = g.scale(&s, scale);
                let a = g.softmax_rows(&s);
                heads.push(g.matmul(&a, &v)?);
            }
            let attn = if heads.len() == 1 {
                heads.pop().expect("one head")
            } else {
                g.concat_cols(&heads)?
            };
            let attn = g.linear(&attn, &block.w_out, &block.b_out)?;
            x = g.add(&x, &attn)?;

            if let Some(state) = merge.as_deref_mut() {
                let n = g.value(&x).rows();
                if state.r > 0 && n > prefix {
                    let patch_rows: Vec<usize> = (prefix..n).collect();
                    let keys = g.value(&qkv).slice_cols(d, d)?.select_rows(&patch_rows)?;
                    let plan = merge_plan(&keys, state.r);
                    if !plan.is_identity() {
                        let mix = plan.mixing_matrix(prefix, &state.weights)?;
                        let mix = g.constant(mix);
                        x = g.matmul(&mix, &x)?;
                        state.weights = plan.merged_weights(&state.weights);
                        state.positions = plan
                            .representatives()
                            .iter()
                            .map(|&i| state.positions[i])
                            .collect();
                    }
                }
                state.counts.push(state.weights.len());
            }

            let h = g.layer_norm_frozen(&x, &block.ln2_gain, &block.ln2_bias)?;
            let h = g.linear(&h, &block.w_fc, &block.b_fc)?;
            let h = g.quick_gelu(&h);
            let h = g.linear(&h, &block.w_proj, &block.b_proj)?;
            x = g.add(&x, &h)?;
        }
        let cls = g.select_rows(&x, &[0])?;
        let cls = g.layer_norm_frozen(&cls, &self.ln_post_gain, &self.ln_post_bias)?;
        let proj = g.constant_ref(&self.proj);
        let out = g.matmul(&cls, &proj)?;
        Ok(g.l2_normalize_rows(&out))
    }

    /// The I-feature of a full token set.
    pub fn encode_full(&self, tokens: &TokenSequence) -> Result<Feature> {
        tokens.check()?;
        if !tokens.has_cls || tokens.has_residual {
            return Err(Error::arg("encode_full needs CLS and no residual token"));
        }
        let mut g = Eager;
        let x = g.constant_ref(&tokens.tokens);
        let out = self.forward(&mut g, &x, 1, None)?;
        Ok(Feature {
            values: out.into_owned().into_data(),
            normalized: true,
        })
    }

    pub fn encode_frame(&self, frame: &Frame) -> Result<Feature> {
        self.encode_full(&self.patchify(frame)?)
    }

    /// Mean of the id embeddings, mapped to the feature space and
    /// normalized. The mean is taken over distinct ids weighted by their
    /// multiplicity, so it depends only on the id multiset.
    pub fn encode_text(&self, ids: &[u32]) -> Result<Feature> {
        if ids.is_empty() {
            return Err(Error::arg("text id list is empty"));
        }
        let mut sorted = ids.to_vec();
        sorted.sort_unstable();
        let d = self.cfg.dim;
        let total = sorted.len() as f64;
        let mut mean = vec![0.0; d];
        let mut i = 0;
        while i < sorted.len() {
            let id = sorted[i];
            if id as usize >= self.cfg.vocab {
                return Err(Error::arg(format!(
                    "text id {id} is outside vocab {}",
                    self.cfg.vocab
                )));
            }
            let run = sorted[i..].iter().take_while(|&&v| v == id).count();
            let w = run as f64 / total;
            for (m, e) in mean.iter_mut().zip(self.text_embed.row(id as usize)) {
                *m += w * e;
            }
            i += run;
        }
        let mean = Tensor::new(vec![1, d], mean)?;
        let out = mean.matmul(&self.text_proj)?.l2_normalize_rows();
        Ok(Feature {
            values: out.into_data(),
            normalized: true,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let c = &self.cfg;
        let mut w = ByteWriter::with_header(WEIGHTS_MAGIC);
        for (name, v) in [
            ("height", c.height),
            ("width", c.width),
            ("channels", c.channels),
            ("patch", c.patch),
            ("depth", c.depth),
            ("dim", c.dim),
            ("heads", c.heads),
            ("feature_dim", c.feature_dim),
            ("vocab", c.vocab),
        ] {
            w.usize32(v, name)?;
        }
        w.u64(c.seed);
        for t in self.tensors() {
            for &v in t.data() {
                w.f64(v);
            }
        }
        Ok(w.finish())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::open(bytes, WEIGHTS_MAGIC, "weights checkpoint")?;
        let mut next = || r.u32().map(|v| v as usize);
        let cfg = EncoderConfig {
            height: next()?,
            width: next()?,
            channels: next()?,
            patch: next()?,
            depth: next()?,
            dim: next()?,
            heads: next()?,
            feature_dim: next()?,
            vocab: next()?,
            seed: r.u64()?,
        };
        cfg.validate()
            .map_err(|e| Error::format("weights checkpoint", format!("bad config block: {e}")))?;
        let mut model = DualEncoder::new(cfg)?;
        for t in model.tensors_mut() {
            for v in t.data_mut() {
                *v = r.f64()?;
            }
        }
        r.finish()?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}

/// For each of `dst` output cells, the source cells of a `src`-long axis
/// overlapping it and their overlap fractions (summing to one).
pub(crate) fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let lo = i as f64 * scale;
            let hi = (i + 1) as f64 * scale;
            let mut cells = Vec::new();
            let mut s = lo.floor() as usize;
            while (s as f64) < hi && s < src {
                let overlap = (hi.min((s + 1) as f64) - lo.max(s as f64)).max(0.0);
                if overlap > 0.0 {
                    cells.push((s, overlap / scale));
                }
                s += 1;
            }
            cells
        })
        .collect()
}
