//! Token reduction: patch dropping with four selection strategies,
//! bipartite token merging, and input resolution reduction.

use std::cmp::Ordering;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::teacher::model::area_weights;
use crate::teacher::{Frame, TokenSequence};
use crate::tensor::{dot, norm, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReductionMode {
    None,
    Drop,
    Merge,
    Resolution,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DropStrategy {
    Random,
    Uniform,
    Center,
    Motion,
}

impl std::str::FromStr for DropStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(DropStrategy::Random),
            "uniform" => Ok(DropStrategy::Uniform),
            "center" => Ok(DropStrategy::Center),
            "motion" => Ok(DropStrategy::Motion),
            other => Err(Error::arg(format!(
                "unknown drop strategy `{other}` (random, uniform, center, motion)"
            ))),
        }
    }
}

impl std::fmt::Display for DropStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DropStrategy::Random => "random",
            DropStrategy::Uniform => "uniform",
            DropStrategy::Center => "center",
            DropStrategy::Motion => "motion",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReductionConfig {
    pub mode: ReductionMode,
    /// Fraction of patch tokens discarded by `drop`.
    pub p: f64,
    pub strategy: DropStrategy,
    /// Tokens merged per block by `merge`.
    pub r: usize,
    /// `(height, width)` of P-frames in `resolution` mode.
    pub target_resolution: Option<(usize, usize)>,
    pub rng_seed: u64,
}

impl Default for ReductionConfig {
    fn default() -> Self {
        ReductionConfig {
            mode: ReductionMode::Drop,
            p: 0.85,
            strategy: DropStrategy::Motion,
            r: 0,
            target_resolution: None,
            rng_seed: 0,
        }
    }
}

impl ReductionConfig {
    pub fn none() -> Self {
        ReductionConfig {
            mode: ReductionMode::None,
            p: 0.0,
            ..Default::default()
        }
    }

    pub fn drop(p: f64, strategy: DropStrategy) -> Self {
        ReductionConfig {
            mode: ReductionMode::Drop,
            p,
            strategy,
            ..Default::default()
        }
    }

    pub fn merge(r: usize) -> Self {
        ReductionConfig {
            mode: ReductionMode::Merge,
            p: 0.0,
            r,
            ..Default::default()
        }
    }

    pub fn resolution(height: usize, width: usize) -> Self {
        ReductionConfig {
            mode: ReductionMode::Resolution,
            p: 0.0,
            target_resolution: Some((height, width)),
            ..Default::default()
        }
    }

    pub fn validate(&self, patch: usize) -> Result<()> {
        if !(0.0..1.0).contains(&self.p) {
            return Err(Error::arg(format!(
                "drop probability {} is outside [0, 1)",
                self.p
            )));
        }
        match self.mode {
            ReductionMode::Merge if self.r == 0 => Err(Error::arg("merge mode needs r >= 1")),
            ReductionMode::Resolution => match self.target_resolution {
                Some((h, w)) if h > 0 && w > 0 && h % patch == 0 && w % patch == 0 => Ok(()),
                Some((h, w)) => Err(Error::arg(format!(
                    "target resolution {h}x{w} is not a positive multiple of patch size {patch}"
                ))),
                None => Err(Error::arg("resolution mode needs target_resolution")),
            },
            _ => Ok(()),
        }
    }

    /// Copy whose random stream is specific to frame `t`, so random drops
    /// are resampled per frame.
    pub fn for_frame(&self, t: usize) -> Self {
        let mut z = self.rng_seed ^ (t as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        ReductionConfig {
            rng_seed: z ^ (z >> 31),
            ..*self
        }
    }
}

/// Number of patch tokens kept at drop probability `p`:
/// `max(1, ceil((1 − p)·K))`. A relative tolerance keeps products that are
/// integers in exact arithmetic (`0.15 · 20`) from rounding up.
pub fn retained_count(k: usize, p: f64) -> usize {
    let exact = (1.0 - p) * k as f64;
    let kept = (exact - 1e-9 * exact.max(1.0)).ceil() as usize;
    kept.clamp(1, k.max(1))
}

/// Patch indices kept by `strategy`, ascending.
pub fn drop_selection(
    grid: (usize, usize),
    keep: usize,
    strategy: DropStrategy,
    scores: Option<&[f64]>,
    rng_seed: u64,
) -> Result<Vec<usize>> {
    let (gh, gw) = grid;
    let k = gh * gw;
    let keep = keep.min(k);
    let mut chosen: Vec<usize> = match strategy {
        DropStrategy::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
            index::sample(&mut rng, k, keep).into_vec()
        }
        DropStrategy::Uniform => {
            let stride = (k / keep).max(1);
            let first = stride / 2;
            (0..keep).map(|i| first + i * stride).collect()
        }
        DropStrategy::Center => {
            // squared distance in half-patch units, exact in integers
            let dist = |i: usize| {
                let dy = (2 * (i / gw) + 1) as i64 - gh as i64;
                let dx = (2 * (i % gw) + 1) as i64 - gw as i64;
                dy * dy + dx * dx
            };
            let mut order: Vec<usize> = (0..k).collect();
            order.sort_by_key(|&i| (dist(i), i));
            order.truncate(keep);
            order
        }
        DropStrategy::Motion => {
            let scores =
                scores.ok_or_else(|| Error::arg("motion strategy requires per-patch scores"))?;
            if scores.len() != k {
                return Err(Error::arg(format!(
                    "{} motion scores for {k} patches",
                    scores.len()
                )));
            }
            let mut order: Vec<usize> = (0..k).collect();
            order.sort_by(|&a, &b| {
                scores[b]
                    .partial_cmp(&scores[a])
                    .unwrap_or(Ordering::Equal)
                    .then(a.cmp(&b))
            });
            order.truncate(keep);
            order
        }
    };
    chosen.sort_unstable();
    Ok(chosen)
}

/// Drops patch tokens according to `cfg`, keeping CLS (and a residual
/// token, if present) and the surviving patches in their original order.
pub fn select_drop(
    tokens: &TokenSequence,
    cfg: &ReductionConfig,
    scores: Option<&[f64]>,
) -> Result<TokenSequence> {
    tokens.check()?;
    if !(0.0..1.0).contains(&cfg.p) {
        return Err(Error::arg(format!(
            "drop probability {} is outside [0, 1)",
            cfg.p
        )));
    }
    let k = tokens.num_patches();
    if cfg.strategy == DropStrategy::Motion && scores.is_none() {
        return Err(Error::arg("motion strategy requires per-patch scores"));
    }
    let keep = retained_count(k, cfg.p);
    if keep == k {
        return Ok(tokens.clone());
    }
    let rows = tokens
        .positions
        .iter()
        .map(|p| p.row)
        .max()
        .map_or(0, |r| r + 1);
    let cols = tokens
        .positions
        .iter()
        .map(|p| p.col)
        .max()
        .map_or(0, |c| c + 1);
    if rows * cols != k {
        return Err(Error::arg("drop selection needs a full patch grid"));
    }
    let chosen = drop_selection((rows, cols), keep, cfg.strategy, scores, cfg.rng_seed)?;
    tokens.retain_patches(&chosen)
}

/// Result of one bipartite matching round over patch tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergePlan {
    /// Output tokens in order; each lists the input patch indices averaged
    /// into it, representative first.
    groups: Vec<Vec<usize>>,
    inputs: usize,
}

impl MergePlan {
    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn is_identity(&self) -> bool {
        self.groups.len() == self.inputs
    }

    pub fn representatives(&self) -> Vec<usize> {
        self.groups.iter().map(|g| g[0]).collect()
    }

    pub fn merged_weights(&self, weights: &[f64]) -> Vec<f64> {
        self.groups
            .iter()
            .map(|g| g.iter().map(|&i| weights[i]).sum())
            .collect()
    }

    /// Row-stochastic matrix mapping `prefix + inputs` rows to
    /// `prefix + groups` rows; special rows pass through unchanged.
    pub fn mixing_matrix(&self, prefix: usize, weights: &[f64]) -> Result<Tensor> {
        let n_in = prefix + self.inputs;
        let n_out = prefix + self.groups.len();
        let mut m = vec![0.0; n_out * n_in];
        for i in 0..prefix {
            m[i * n_in + i] = 1.0;
        }
        for (o, group) in self.groups.iter().enumerate() {
            let total: f64 = group.iter().map(|&i| weights[i]).sum();
            for &i in group {
                m[(prefix + o) * n_in + prefix + i] = weights[i] / total;
            }
        }
        Tensor::new(vec![n_out, n_in], m)
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let d = norm(a) * norm(b);
    if d == 0.0 {
        0.0
    } else {
        dot(a, b) / d
    }
}

/// Bipartite matching over the patch tokens' attention keys.
///
/// Odd-indexed tokens each propose their most similar even-indexed token by
/// key cosine similarity; the `min(⌊n/2⌋, r)` most similar proposals are
/// merged. Unmerged tokens keep their relative order.
pub fn merge_plan(keys: &Tensor, r: usize) -> MergePlan {
    let n = keys.rows();
    let r_eff = (n / 2).min(r);
    if r_eff == 0 {
        return MergePlan {
            groups: (0..n).map(|i| vec![i]).collect(),
            inputs: n,
        };
    }
    let mut proposals: Vec<(usize, usize, f64)> = (1..n)
        .step_by(2)
        .map(|odd| {
            let mut best = (0, f64::NEG_INFINITY);
            for even in (0..n).step_by(2) {
                let s = cosine(keys.row(odd), keys.row(even));
                if s > best.1 {
                    best = (even, s);
                }
            }
            (odd, best.0, best.1)
        })
        .collect();
    proposals.sort_by(|a, b| {
        b.2.partial_cmp(&a.2)
            .unwrap_or(Ordering::Equal)
            .then(a.0.cmp(&b.0))
    });
    proposals.truncate(r_eff);

    let mut target = vec![None; n];
    for &(odd, even, _) in &proposals {
        target[odd] = Some(even);
    }
    let mut groups = Vec::with_capacity(n - r_eff);
    for i in 0..n {
        if target[i].is_some() {
            continue;
        }
        let mut g = vec![i];
        if i % 2 == 0 {
            g.extend((1..n).step_by(2).filter(|&o| target[o] == Some(i)));
        }
        groups.push(g);
    }
    MergePlan { groups, inputs: n }
}

/// One merging round applied to a token sequence. `keys` holds one row per
/// token (special tokens included) and is aligned with `tokens`.
pub fn merge_step(tokens: &TokenSequence, keys: &Tensor, r: usize) -> Result<TokenSequence> {
    tokens.check()?;
    if keys.rows() != tokens.len() {
        return Err(Error::dim(format!(
            "{} key rows for {} tokens",
            keys.rows(),
            tokens.len()
        )));
    }
    let prefix = tokens.prefix_len();
    let patch_rows: Vec<usize> = (prefix..tokens.len()).collect();
    if patch_rows.is_empty() {
        return Ok(tokens.clone());
    }
    let plan = merge_plan(&keys.select_rows(&patch_rows)?, r);
    if plan.is_identity() {
        return Ok(tokens.clone());
    }
    let mix = plan.mixing_matrix(prefix, &tokens.weights)?;
    Ok(TokenSequence {
        tokens: mix.matmul(&tokens.tokens)?,
        positions: plan
            .representatives()
            .iter()
            .map(|&i| tokens.positions[i])
            .collect(),
        weights: plan.merged_weights(&tokens.weights),
        has_cls: tokens.has_cls,
        has_residual: tokens.has_residual,
    })
}

/// Patch-token counts after each of `depth` blocks under the recurrence
/// `n ← n − min(⌊n/2⌋, r)`, starting from `k`.
pub fn merge_schedule(k: usize, r: usize, depth: usize) -> Vec<usize> {
    let mut n = k;
    (0..depth)
        .map(|_| {
            n -= (n / 2).min(r);
            n
        })
        .collect()
}

/// Area-average resampling to `height × width`; both must be multiples of
/// `patch`.
pub fn downsample_frame(frame: &Frame, height: usize, width: usize, patch: usize) -> Result<Frame> {
    if height == 0 || width == 0 || height % patch != 0 || width % patch != 0 {
        return Err(Error::arg(format!(
            "target {height}x{width} is not a positive multiple of patch size {patch}"
        )));
    }
    if (height, width) == (frame.height, frame.width) {
        return Ok(frame.clone());
    }
    let wy = area_weights(frame.height, height);
    let wx = area_weights(frame.width, width);
    let c = frame.channels;
    let mut pixels = vec![0u8; height * width * c];
    for (ty, rows) in wy.iter().enumerate() {
        for (tx, cols) in wx.iter().enumerate() {
            for ch in 0..c {
                let mut acc = 0.0;
                for &(sy, a) in rows {
                    for &(sx, b) in cols {
                        acc += a * b * frame.at(sy, sx, ch) as f64;
                    }
                }
                pixels[(ty * width + tx) * c + ch] = acc.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    Frame::new(height, width, c, pixels, frame.index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::teacher::{DualEncoder, EncoderConfig, GridPos};
    use proptest::prelude::*;

    fn toy_tokens(k_side: usize, d: usize) -> TokenSequence {
        let k = k_side * k_side;
        let data: Vec<f64> = (0..(k + 1) * d)
            .map(|i| ((i * 37 % 101) as f64) / 17.0 - 3.0)
            .collect();
        TokenSequence {
            tokens: Tensor::new(vec![k + 1, d], data).unwrap(),
            positions: (0..k)
                .map(|i| GridPos {
                    row: i / k_side,
                    col: i % k_side,
                })
                .collect(),
            weights: vec![1.0; k],
            has_cls: true,
            has_residual: false,
        }
    }

    #[test]
    fn retained_counts() {
        assert_eq!(retained_count(49, 0.85), 8);
        assert_eq!(retained_count(196, 0.85), 30);
        assert_eq!(retained_count(256, 0.85), 39);
        assert_eq!(retained_count(16, 0.0), 16);
        assert_eq!(retained_count(16, 0.85), 3);
        assert_eq!(retained_count(4, 0.99), 1);
        assert_eq!(retained_count(20, 0.85), 3);
        assert_eq!(retained_count(100, 0.85), 15);
        assert_eq!(retained_count(10, 0.5), 5);
    }

    #[test]
    fn zero_drop_is_identity() {
        let t = toy_tokens(4, 8);
        for s in [
            DropStrategy::Random,
            DropStrategy::Uniform,
            DropStrategy::Center,
        ] {
            let out = select_drop(&t, &ReductionConfig::drop(0.0, s), None).unwrap();
            assert_eq!(out, t);
        }
    }

    #[test]
    fn center_keeps_middle_four() {
        let t = toy_tokens(4, 8);
        let out =
            select_drop(&t, &ReductionConfig::drop(0.75, DropStrategy::Center), None).unwrap();
        let want = [(1, 1), (1, 2), (2, 1), (2, 2)].map(|(row, col)| GridPos { row, col });
        assert_eq!(out.positions, want);
        assert_eq!(out.len(), 5);
        assert_eq!(out.tokens.row(0), t.tokens.row(0));
    }

    #[test]
    fn motion_ties_break_row_major() {
        let t = toy_tokens(4, 8);
        let scores = vec![1.0; 16];
        let keep = drop_selection((4, 4), 3, DropStrategy::Motion, Some(&scores), 0).unwrap();
        assert_eq!(keep, vec![0, 1, 2]);
        let mut scores = vec![0.0; 16];
        scores[9] = 5.0;
        scores[3] = 2.0;
        scores[15] = 2.0;
        let keep = drop_selection((4, 4), 3, DropStrategy::Motion, Some(&scores), 0).unwrap();
        assert_eq!(keep, vec![3, 9, 15]);
        assert!(matches!(
            select_drop(&t, &ReductionConfig::drop(0.5, DropStrategy::Motion), None),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn uniform_pattern() {
        assert_eq!(
            drop_selection((4, 4), 3, DropStrategy::Uniform, None, 0).unwrap(),
            vec![2, 7, 12]
        );
        assert_eq!(
            drop_selection((4, 4), 4, DropStrategy::Uniform, None, 0).unwrap(),
            vec![2, 6, 10, 14]
        );
        assert_eq!(
            drop_selection((7, 7), 8, DropStrategy::Uniform, None, 0)
                .unwrap()
                .len(),
            8
        );
    }

    #[test]
    fn random_is_seeded() {
        let a = drop_selection((4, 4), 5, DropStrategy::Random, None, 11).unwrap();
        let b = drop_selection((4, 4), 5, DropStrategy::Random, None, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);
        let cfg = ReductionConfig::drop(0.5, DropStrategy::Random);
        assert_ne!(cfg.for_frame(1).rng_seed, cfg.for_frame(2).rng_seed);
    }

    #[test]
    fn merge_identity_and_equal_tokens() {
        let t = toy_tokens(2, 4);
        assert_eq!(merge_step(&t, &t.tokens, 0).unwrap(), t);

        let row = vec![0.5, -1.0, 2.0, 0.25];
        let tokens = Tensor::from_rows(&[vec![9.0; 4], row.clone(), row.clone()]).unwrap();
        let seq = TokenSequence {
            tokens: tokens.clone(),
            positions: vec![GridPos { row: 0, col: 0 }, GridPos { row: 0, col: 1 }],
            weights: vec![1.0, 1.0],
            has_cls: true,
            has_residual: false,
        };
        let out = merge_step(&seq, &tokens, 1).unwrap();
        assert_eq!(out.num_patches(), 1);
        assert_eq!(out.weights, vec![2.0]);
        assert_eq!(out.tokens.row(1), &row[..]);
        assert_eq!(out.tokens.row(0), &[9.0; 4]);
    }

    #[test]
    fn merge_decay_schedule() {
        let s = merge_schedule(196, 45, 12);
        assert_eq!(&s[..9], &[151, 106, 61, 31, 16, 8, 4, 2, 1]);
        assert_eq!(s.iter().position(|&n| n == 1), Some(8));
        assert_eq!(merge_schedule(16, 0, 4), vec![16; 4]);
    }

    #[test]
    fn merge_inside_forward_follows_schedule() {
        let cfg = EncoderConfig::default();
        let m = DualEncoder::new(cfg).unwrap();
        let frame = Frame::filled(32, 32, 3, 80);
        let t = m.patchify(&frame).unwrap();
        let mut state = crate::teacher::MergeState::new(3, &t);
        let mut g = crate::autodiff::Eager;
        let x = std::borrow::Cow::Borrowed(&t.tokens);
        m.forward(&mut g, &x, 1, Some(&mut state)).unwrap();
        assert_eq!(state.counts, merge_schedule(16, 3, 4));
        assert_eq!(state.weights.iter().sum::<f64>(), 16.0);
    }

    #[test]
    fn downsample_examples() {
        let mut f = Frame::filled(32, 32, 3, 0);
        for (i, p) in f.pixels.iter_mut().enumerate() {
            *p = (i % 256) as u8;
        }
        assert_eq!(downsample_frame(&f, 32, 32, 8).unwrap(), f);
        let c = Frame::filled(32, 32, 3, 77);
        let d = downsample_frame(&c, 16, 16, 8).unwrap();
        assert!(d.pixels.iter().all(|&v| v == 77));
        assert_eq!(crate::teacher::num_patches(d.height, d.width, 8), 4);
        assert_eq!(crate::teacher::num_patches(96, 96, 16), 36);
        assert!(matches!(
            downsample_frame(&f, 20, 16, 8),
            Err(Error::Argument(_))
        ));
    }

    proptest! {
        #[test]
        fn merge_conserves_weight(
            n in 1usize..24,
            r in 0usize..16,
            seed in 0u64..1000,
        ) {
            use rand::Rng;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = 4;
            let tokens = Tensor::new(vec![n + 1, d], (0..(n + 1) * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let weights: Vec<f64> = (0..n).map(|_| rng.random_range(1..4) as f64).collect();
            let seq = TokenSequence {
                tokens: tokens.clone(),
                positions: (0..n).map(|i| GridPos { row: 0, col: i }).collect(),
                weights: weights.clone(),
                has_cls: true,
                has_residual: false,
            };
            let out = merge_step(&seq, &tokens, r).unwrap();
            let before: f64 = weights.iter().sum();
            let after: f64 = out.weights.iter().sum();
            prop_assert!((before - after).abs() < 1e-12);
            prop_assert_eq!(out.num_patches(), n - (n / 2).min(r));
            prop_assert_eq!(out.tokens.row(0), tokens.row(0));
            prop_assert!(out.positions.iter().all(|p| seq.positions.contains(p)));
            prop_assert!(out.weights.iter().all(|&w| w >= 1.0));
        }

        #[test]
        fn drop_survivors_are_a_subset(
            side in 1usize..8,
            p in 0.0f64..0.99,
            strategy in prop_oneof![
                Just(DropStrategy::Random),
                Just(DropStrategy::Uniform),
                Just(DropStrategy::Center),
                Just(DropStrategy::Motion),
            ],
            seed in 0u64..100,
        ) {
            let t = toy_tokens(side, 3);
            let k = side * side;
            let scores: Vec<f64> = (0..k).map(|i| ((i as u64 * 7 + seed) % 5) as f64).collect();
            let cfg = ReductionConfig { rng_seed: seed, ..ReductionConfig::drop(p, strategy) };
            let a = select_drop(&t, &cfg, Some(&scores)).unwrap();
            let b = select_drop(&t, &cfg, Some(&scores)).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(a.num_patches(), retained_count(k, p));
            prop_assert_eq!(a.tokens.row(0), t.tokens.row(0));
            let idx: Vec<usize> = a.positions.iter().map(|q| q.row * side + q.col).collect();
            prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
        }

        #[test]
        fn retained_count_monotone(k in 1usize..400, p in 0.0f64..0.99, dp in 0.0f64..0.5) {
            let q = (p + dp).min(0.999);
            prop_assert!(retained_count(k, q) <= retained_count(k, p));
            prop_assert!(retained_count(k + 1, p) >= retained_count(k, p));
            prop_assert!(retained_count(k, p) >= 1);
        }
    }
}
