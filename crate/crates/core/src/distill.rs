//! Distillation of the residual tokenizer against the frozen teacher, with
//! the symmetric soft-target cross-entropy or a squared-error objective.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tape, Var};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::motion::{aggregate_motion, patch_scores, MotionField, DEFAULT_WINDOW};
use crate::parallel::map_indices;
use crate::reduction::{select_drop, DropStrategy, ReductionConfig, ReductionMode};
use crate::residual::{augmented_feature, student_forward, ResidualTokenizer};
use crate::teacher::{DualEncoder, Feature, TokenSequence};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Ce,
    Mse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sampling {
    /// Every P-frame of the excerpt contributes.
    All,
    /// A random number of randomly chosen P-frames per video and step.
    RandomSubset,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// P-frames following the I-frame of each excerpt.
    pub n_train: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Logit temperature of the soft-target loss.
    pub tau: f64,
    pub loss: LossKind,
    /// Squared L2 distance when true, plain L2 norm otherwise.
    pub mse_squared: bool,
    pub sampling: Sampling,
    /// Token reduction applied to student P-frames.
    pub reduction: ReductionConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_train: 3,
            batch_size: 8,
            epochs: 5,
            lr: 0.0005,
            tau: 1.0,
            loss: LossKind::Ce,
            mse_squared: true,
            sampling: Sampling::All,
            reduction: ReductionConfig::drop(0.85, DropStrategy::Motion),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 {
            return Err(Error::arg("n_train must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::arg("batch_size must be at least 1"));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::arg(format!(
                "temperature {} must be positive",
                self.tau
            )));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::arg(format!(
                "learning rate {} must be finite and non-negative",
                self.lr
            )));
        }
        if self.reduction.mode == ReductionMode::Resolution {
            return Err(Error::arg("training supports drop, merge or no reduction"));
        }
        Ok(())
    }
}

fn check_normalized(t: &Tensor, what: &str) -> Result<()> {
    for r in 0..t.rows() {
        let n = crate::tensor::norm(t.row(r));
        if (n - 1.0).abs() > 1e-6 {
            return Err(Error::arg(format!(
                "{what} row {r} has norm {n}, expected unit length"
            )));
        }
    }
    Ok(())
}

/// Symmetric soft-target cross-entropy on a tape.
///
/// `fs` (student, `M × b`, rows ordered by video then frame) is scored
/// against the batch texts `g` (`B × b`). Language-to-vision: for each
/// vision row, a softmax over texts with teacher targets. Vision-to-language:
/// for each text, a softmax over all `M` vision rows.
pub fn soft_target_loss_on<'a>(
    tape: &mut Tape<'a>,
    fs: Var,
    fv: &Tensor,
    g: &Tensor,
    tau: f64,
) -> Result<Var> {
    if fv.shape() != tape.get(fs).shape() {
        return Err(Error::dim(format!(
            "student {:?} and teacher {:?} features differ in shape",
            tape.get(fs).shape(),
            fv.shape()
        )));
    }
    if g.cols() != fv.cols() {
        return Err(Error::dim("text and vision features differ in width"));
    }
    check_normalized(tape.get(fs), "student feature")?;
    check_normalized(fv, "teacher feature")?;
    check_normalized(g, "text feature")?;

    let inv = 1.0 / tau;
    let gv = tape.constant(g.clone());

    let target_lv = fv.matmul_nt(g)?.scale(inv).softmax_rows();
    let logits = tape.matmul_nt(&fs, &gv)?;
    let logits = tape.scale(&logits, inv);
    let logp = tape.log_softmax_rows(logits);
    let t_lv = tape.constant(target_lv);
    let lv = tape.mul(logp, t_lv)?;
    let lv = tape.sum(lv);

    let target_vl = g.matmul_nt(fv)?.scale(inv).softmax_rows();
    let logits = tape.matmul_nt(&gv, &fs)?;
    let logits = tape.scale(&logits, inv);
    let logp = tape.log_softmax_rows(logits);
    let t_vl = tape.constant(target_vl);
    let vl = tape.mul(logp, t_vl)?;
    let vl = tape.sum(vl);

    let total = tape.add(&lv, &vl)?;
    Ok(tape.scale(&total, -1.0))
}

/// Sum over rows of the squared (or plain) L2 distance, on a tape.
pub fn mse_loss_on<'a>(tape: &mut Tape<'a>, fs: Var, fv: &Tensor, squared: bool) -> Result<Var> {
    if fv.shape() != tape.get(fs).shape() {
        return Err(Error::dim("student and teacher features differ in shape"));
    }
    let t = tape.constant(fv.clone());
    let diff = tape.sub(fs, t)?;
    let sq = tape.mul(diff, diff)?;
    if squared {
        return Ok(tape.sum(sq));
    }
    let ones = tape.constant(Tensor::new(vec![fv.cols(), 1], vec![1.0; fv.cols()])?);
    let rows = tape.matmul(&sq, &ones)?;
    let rows = tape.sqrt(rows)?;
    Ok(tape.sum(rows))
}

/// Value of the soft-target loss; see [`soft_target_loss_on`].
pub fn soft_target_loss(fs: &Tensor, fv: &Tensor, g: &Tensor, tau: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let s = tape.constant(fs.clone());
    let out = soft_target_loss_on(&mut tape, s, fv, g, tau)?;
    Ok(tape.get(out).data()[0])
}

/// Sum over rows of the squared L2 distance.
pub fn mse_loss(fs: &Tensor, fv: &Tensor) -> Result<f64> {
    let mut tape = Tape::new();
    let s = tape.constant(fs.clone());
    let out = mse_loss_on(&mut tape, s, fv, true)?;
    Ok(tape.get(out).data()[0])
}

/// Everything the trainer needs that does not depend on the tokenizer:
/// teacher features of every frame, reduced student tokens of every frame,
/// and text features.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub teacher: Vec<Vec<Feature>>,
    pub tokens: Vec<Vec<TokenSequence>>,
    pub text: Vec<Feature>,
    pub merge_r: usize,
}

impl Prepared {
    pub fn new(model: &DualEncoder, corpus: &Corpus, reduction: &ReductionConfig) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::arg("empty corpus"));
        }
        let per_video = map_indices(corpus.len(), |v| {
            let video = &corpus.videos[v];
            let motion = match (reduction.mode, reduction.strategy) {
                (ReductionMode::Drop, DropStrategy::Motion) => {
                    Some(MotionField::from_frames(&video.frames)?)
                }
                _ => None,
            };
            let mut teacher = Vec::with_capacity(video.frames.len());
            let mut tokens = Vec::with_capacity(video.frames.len());
            for (t, frame) in video.frames.iter().enumerate() {
                let full = model.patchify(frame)?;
                teacher.push(model.encode_full(&full)?);
                let reduced = match reduction.mode {
                    ReductionMode::Drop => {
                        let scores = match &motion {
                            Some(m) => Some(patch_scores(
                                &aggregate_motion(m, t, DEFAULT_WINDOW)?,
                                model.config(),
                                Default::default(),
                            )?),
                            None => None,
                        };
                        select_drop(&full, &reduction.for_frame(t), scores.as_deref())?
                    }
                    _ => full,
                };
                tokens.push(reduced);
            }
            let text = model.encode_text(&video.text)?;
            Ok((teacher, tokens, text))
        })?;
        let mut prepared = Prepared {
            teacher: Vec::new(),
            tokens: Vec::new(),
            text: Vec::new(),
            merge_r: if reduction.mode == ReductionMode::Merge {
                reduction.r
            } else {
                0
            },
        };
        for (teacher, tokens, text) in per_video {
            prepared.teacher.push(teacher);
            prepared.tokens.push(tokens);
            prepared.text.push(text);
        }
        Ok(prepared)
    }

    pub fn len(&self) -> usize {
        self.teacher.len()
    }

    pub fn is_empty(&self) -> bool {
        self.teacher.is_empty()
    }
}

/// One excerpt in a batch: video index, I-frame index, and the offsets
/// `1..=N_Train` of the P-frames that contribute.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Excerpt {
    pub video: usize,
    pub start: usize,
    pub offsets: Vec<usize>,
}

/// A batch of excerpts with their text ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainBatch {
    pub excerpts: Vec<Excerpt>,
}

/// Student features of a batch on `tape`, rows ordered by excerpt then
/// offset, together with the matching teacher rows and batch texts.
/// `theta` is the augmented tokenizer matrix, or `None` for a student
/// without residual token.
pub fn batch_features<'a>(
    tape: &mut Tape<'a>,
    model: &'a DualEncoder,
    data: &'a Prepared,
    batch: &TrainBatch,
    theta: Option<Var>,
) -> Result<(Var, Tensor, Tensor)> {
    let mut rows = Vec::new();
    let mut teacher = Vec::new();
    let mut texts = Vec::new();
    for ex in &batch.excerpts {
        let reference = &data.teacher[ex.video][ex.start];
        let residual = match theta {
            Some(theta) => {
                let f = tape.constant(augmented_feature(reference));
                Some(tape.matmul(&f, &theta)?)
            }
            None => None,
        };
        for &k in &ex.offsets {
            let t = ex.start + k;
            let out = student_forward(
                model,
                tape,
                &data.tokens[ex.video][t],
                residual.as_ref(),
                data.merge_r,
            )?;
            rows.push(out);
            teacher.push(data.teacher[ex.video][t].values.clone());
        }
        texts.push(data.text[ex.video].values.clone());
    }
    let fs = tape.concat_rows(&rows)?;
    Ok((fs, Tensor::from_rows(&teacher)?, Tensor::from_rows(&texts)?))
}

/// Training loss of one batch on `tape`.
pub fn batch_loss<'a>(
    tape: &mut Tape<'a>,
    model: &'a DualEncoder,
    data: &'a Prepared,
    batch: &TrainBatch,
    theta: Option<Var>,
    cfg: &TrainConfig,
) -> Result<Var> {
    let (fs, fv, g) = batch_features(tape, model, data, batch, theta)?;
    match cfg.loss {
        LossKind::Ce => soft_target_loss_on(tape, fs, &fv, &g, cfg.tau),
        LossKind::Mse => mse_loss_on(tape, fs, &fv, cfg.mse_squared),
    }
}

/// Per-epoch evaluation, epoch 0 being the state before training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean soft-target loss per batch.
    pub ce: f64,
    /// Mean squared distance per P-frame.
    pub mse: f64,
    /// Mean cosine between student and teacher P-features.
    pub mean_cosine: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub tokenizer: ResidualTokenizer,
    pub history: Vec<EpochStats>,
}

/// Fixed evaluation batches: every video's first excerpt with all
/// `N_Train` P-frames.
pub fn eval_batches(videos: usize, cfg: &TrainConfig) -> Vec<TrainBatch> {
    (0..videos)
        .collect::<Vec<_>>()
        .chunks(cfg.batch_size)
        .map(|chunk| TrainBatch {
            excerpts: chunk
                .iter()
                .map(|&v| Excerpt {
                    video: v,
                    start: 0,
                    offsets: (1..=cfg.n_train).collect(),
                })
                .collect(),
        })
        .collect()
}

/// Mean losses and student-teacher cosine over the evaluation batches.
/// `tokenizer = None` evaluates the student without residual token.
pub fn evaluate(
    model: &DualEncoder,
    data: &Prepared,
    tokenizer: Option<&ResidualTokenizer>,
    cfg: &TrainConfig,
) -> Result<EpochStats> {
    let batches = eval_batches(data.len(), cfg);
    let theta = tokenizer.map(ResidualTokenizer::augmented);
    let per_batch = map_indices(batches.len(), |i| {
        let mut tape = Tape::new();
        let th = theta.as_ref().map(|t| tape.constant(t.clone()));
        let (fs, fv, g) = batch_features(&mut tape, model, data, &batches[i], th)?;
        let fs_val = tape.get(fs).clone();
        let ce = soft_target_loss(&fs_val, &fv, &g, cfg.tau)?;
        let mut sq = 0.0;
        let mut cos = 0.0;
        for r in 0..fv.rows() {
            let (a, b) = (fs_val.row(r), fv.row(r));
            sq += a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
            cos += crate::tensor::dot(a, b) / (crate::tensor::norm(a) * crate::tensor::norm(b));
        }
        Ok((ce, sq, cos, fv.rows()))
    })?;
    let rows: usize = per_batch.iter().map(|b| b.3).sum();
    Ok(EpochStats {
        epoch: 0,
        ce: per_batch.iter().map(|b| b.0).sum::<f64>() / per_batch.len() as f64,
        mse: per_batch.iter().map(|b| b.1).sum::<f64>() / rows as f64,
        mean_cosine: per_batch.iter().map(|b| b.2).sum::<f64>() / rows as f64,
    })
}

/// Plain gradient descent on the tokenizer with a constant learning rate.
/// The teacher is only read.
pub fn train(
    corpus: &Corpus,
    cfg: &TrainConfig,
    model: &DualEncoder,
    tokenizer: &ResidualTokenizer,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::arg("empty corpus"));
    }
    let frames = corpus.frames_per_video();
    if frames < cfg.n_train + 1 {
        return Err(Error::arg(format!(
            "videos have {frames} frames; training needs n_train + 1 = {} (one I-frame and its P-frames)",
            cfg.n_train + 1
        )));
    }
    let data = Prepared::new(model, corpus, &cfg.reduction)?;
    train_prepared(&data, cfg, model, tokenizer)
}

/// [`train`] on already prepared data.
pub fn train_prepared(
    data: &Prepared,
    cfg: &TrainConfig,
    model: &DualEncoder,
    tokenizer: &ResidualTokenizer,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let frames = data.teacher.iter().map(Vec::len).min().unwrap_or(0);
    if frames < cfg.n_train + 1 {
        return Err(Error::arg(format!(
            "videos have {frames} frames, need {}",
            cfg.n_train + 1
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut theta = tokenizer.augmented();
    let mut history = vec![evaluate(model, data, Some(tokenizer), cfg)?];
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let excerpts = chunk
                .iter()
                .map(|&v| {
                    let start = rng.random_range(0..=frames - cfg.n_train - 1);
                    let offsets = match cfg.sampling {
                        Sampling::All => (1..=cfg.n_train).collect(),
                        Sampling::RandomSubset => {
                            let m = rng.random_range(1..=cfg.n_train);
                            let mut picked: Vec<usize> = index::sample(&mut rng, cfg.n_train, m)
                                .into_iter()
                                .map(|i| i + 1)
                                .collect();
                            picked.sort_unstable();
                            picked
                        }
                    };
                    Excerpt {
                        video: v,
                        start,
                        offsets,
                    }
                })
                .collect();
            let batch = TrainBatch { excerpts };
            let mut tape = Tape::new();
            let th = tape.param(theta.clone());
            let loss = batch_loss(&mut tape, model, data, &batch, Some(th), cfg).map_err(|e| {
                Error::Training {
                    step,
                    message: e.to_string(),
                }
            })?;
            let value = tape.get(loss).data()[0];
            if !value.is_finite() {
                return Err(Error::Training {
                    step,
                    message: format!("loss became {value}"),
                });
            }
            let grad = tape.backward(loss)?.get_or_zeros(th, &theta);
            if cfg.lr != 0.0 {
                for (w, g) in theta.data_mut().iter_mut().zip(grad.data()) {
                    *w -= cfg.lr * g;
                }
            }
            if !theta.is_finite() {
                return Err(Error::Training {
                    step,
                    message: "tokenizer weights became non-finite".into(),
                });
            }
            step += 1;
        }
        let current = ResidualTokenizer::from_augmented(&theta)?;
        history.push(EpochStats {
            epoch,
            ..evaluate(model, data, Some(&current), cfg)?
        });
    }
    Ok(TrainOutcome {
        tokenizer: ResidualTokenizer::from_augmented(&theta)?,
        history,
    })
}

/// Loss history as CSV with columns `epoch,ce,mse,mean_cosine`.
pub fn history_csv(history: &[EpochStats]) -> String {
    let mut s = String::from("epoch,ce,mse,mean_cosine\n");
    for h in history {
        let _ = writeln!(
            s,
            "{},{:.9},{:.9},{:.9}",
            h.epoch, h.ce, h.mse, h.mean_cosine
        );
    }
    s
}

pub fn write_history(path: impl AsRef<Path>, history: &[EpochStats]) -> Result<()> {
    write_atomic(path, history_csv(history).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check_coords;
    use crate::corpus::gen_synthetic_corpus;
    use crate::teacher::EncoderConfig;

    fn unit_rows(rng: &mut ChaCha8Rng, rows: usize, b: usize) -> Tensor {
        let data: Vec<f64> = (0..rows * b).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::new(vec![rows, b], data)
            .unwrap()
            .l2_normalize_rows()
    }

    /// Direct summation of both directions with explicit exponentials.
    fn oracle(fs: &Tensor, fv: &Tensor, g: &Tensor, tau: f64) -> f64 {
        let softmax = |xs: &[f64]| {
            let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = xs.iter().map(|x| (x - m).exp()).sum();
            xs.iter().map(|x| (x - m).exp() / z).collect::<Vec<_>>()
        };
        let dot = crate::tensor::dot;
        let mut total = 0.0;
        for r in 0..fs.rows() {
            let p = softmax(
                &(0..g.rows())
                    .map(|j| dot(g.row(j), fv.row(r)) / tau)
                    .collect::<Vec<_>>(),
            );
            let q = softmax(
                &(0..g.rows())
                    .map(|j| dot(g.row(j), fs.row(r)) / tau)
                    .collect::<Vec<_>>(),
            );
            total -= p.iter().zip(&q).map(|(a, b)| a * b.ln()).sum::<f64>();
        }
        for j in 0..g.rows() {
            let p = softmax(
                &(0..fs.rows())
                    .map(|r| dot(g.row(j), fv.row(r)) / tau)
                    .collect::<Vec<_>>(),
            );
            let q = softmax(
                &(0..fs.rows())
                    .map(|r| dot(g.row(j), fs.row(r)) / tau)
                    .collect::<Vec<_>>(),
            );
            total -= p.iter().zip(&q).map(|(a, b)| a * b.ln()).sum::<f64>();
        }
        total
    }

    #[test]
    fn soft_target_matches_direct_summation() {
        let s = 0.5f64.sqrt();
        let fs = Tensor::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, s, s]]).unwrap();
        let fv = Tensor::from_rows(&[vec![s, s, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        let g = Tensor::from_rows(&[vec![0.0, 1.0, 0.0], vec![s, 0.0, -s]]).unwrap();
        let got = soft_target_loss(&fs, &fv, &g, 1.0).unwrap();
        assert!((got - oracle(&fs, &fv, &g, 1.0)).abs() < 1e-10);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let (fs, fv, g) = (
                unit_rows(&mut rng, 6, 5),
                unit_rows(&mut rng, 6, 5),
                unit_rows(&mut rng, 2, 5),
            );
            let got = soft_target_loss(&fs, &fv, &g, 0.3).unwrap();
            assert!((got - oracle(&fs, &fv, &g, 0.3)).abs() < 1e-10);
        }
    }

    #[test]
    fn equal_features_are_stationary() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let fv = unit_rows(&mut rng, 6, 4);
        let g = unit_rows(&mut rng, 3, 4);
        let mut tape = Tape::new();
        let fs = tape.param(fv.clone());
        let gv = tape.constant(g.clone());
        let logits = tape.matmul_nt(&fs, &gv).unwrap();
        let logp = tape.log_softmax_rows(logits);
        let target = tape.constant(fv.matmul_nt(&g).unwrap().softmax_rows());
        let ce = tape.mul(logp, target).unwrap();
        let ce = tape.sum(ce);
        let grads = tape.backward(ce).unwrap();
        let dlogits = grads.get(logits).unwrap();
        assert!(dlogits.data().iter().all(|v| v.abs() < 1e-15));

        // loss equals the entropy of the targets in both directions
        let p = fv.matmul_nt(&g).unwrap().softmax_rows();
        let p2 = g.matmul_nt(&fv).unwrap().softmax_rows();
        let entropy: f64 = p.data().iter().chain(p2.data()).map(|x| -x * x.ln()).sum();
        assert!((soft_target_loss(&fv, &fv, &g, 1.0).unwrap() - entropy).abs() < 1e-12);
    }

    #[test]
    fn single_text_has_no_language_to_vision_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (fs, fv, g) = (
            unit_rows(&mut rng, 3, 4),
            unit_rows(&mut rng, 3, 4),
            unit_rows(&mut rng, 1, 4),
        );
        let total = soft_target_loss(&fs, &fv, &g, 1.0).unwrap();
        let vl_only = {
            let p = g.matmul_nt(&fv).unwrap().softmax_rows();
            let q = g.matmul_nt(&fs).unwrap().log_softmax_rows();
            -p.mul(&q).unwrap().sum()
        };
        assert!((total - vl_only).abs() < 1e-12);
    }

    #[test]
    fn large_temperature_gives_uniform_targets() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (b, n) = (4, 3);
        let (fs, fv, g) = (
            unit_rows(&mut rng, b * n, 6),
            unit_rows(&mut rng, b * n, 6),
            unit_rows(&mut rng, b, 6),
        );
        let total = soft_target_loss(&fs, &fv, &g, 1e6).unwrap();
        let lv = (b * n) as f64 * (b as f64).ln();
        let vl = b as f64 * ((b * n) as f64).ln();
        assert!((total - lv - vl).abs() < 1e-3, "{total} vs {}", lv + vl);
    }

    #[test]
    fn loss_is_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (fs, fv, g) = (
            unit_rows(&mut rng, 6, 5),
            unit_rows(&mut rng, 6, 5),
            unit_rows(&mut rng, 3, 5),
        );
        let base = soft_target_loss(&fs, &fv, &g, 1.0).unwrap();
        // swap videos 0 and 2 (two frames each)
        let rows = [4, 5, 2, 3, 0, 1];
        let perm = |t: &Tensor| t.select_rows(&rows).unwrap();
        let swapped = soft_target_loss(
            &perm(&fs),
            &perm(&fv),
            &g.select_rows(&[2, 1, 0]).unwrap(),
            1.0,
        )
        .unwrap();
        assert!((base - swapped).abs() < 1e-12);
    }

    #[test]
    fn unnormalized_inputs_are_rejected() {
        let fs = Tensor::from_rows(&[vec![2.0, 0.0]]).unwrap();
        let fv = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
        assert!(matches!(
            soft_target_loss(&fs, &fv, &fv, 1.0),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn mse_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (a, b) = (unit_rows(&mut rng, 5, 4), unit_rows(&mut rng, 5, 4));
        assert_eq!(mse_loss(&a, &a).unwrap(), 0.0);
        let mut c = a.clone();
        c.data_mut()[6] += 0.25;
        assert!((mse_loss(&a, &c).unwrap() - 0.0625).abs() < 1e-15);
        let mut naive = 0.0;
        for i in 0..5 {
            for j in 0..4 {
                let d = a.row(i)[j] - b.row(i)[j];
                naive += d * d;
            }
        }
        assert!((mse_loss(&a, &b).unwrap() - naive).abs() < 1e-12);
    }

    fn toy() -> (DualEncoder, Corpus) {
        let cfg = EncoderConfig::default();
        (
            DualEncoder::new(cfg).unwrap(),
            gen_synthetic_corpus(&cfg, 4, 4, 0).unwrap(),
        )
    }

    #[test]
    fn tokenizer_gradients_match_finite_differences() {
        let (model, corpus) = toy();
        let cfg = TrainConfig {
            n_train: 2,
            reduction: ReductionConfig::drop(0.85, DropStrategy::Center),
            ..Default::default()
        };
        let data = Prepared::new(&model, &corpus, &cfg.reduction).unwrap();
        let batch = TrainBatch {
            excerpts: vec![
                Excerpt {
                    video: 0,
                    start: 0,
                    offsets: vec![1, 2],
                },
                Excerpt {
                    video: 1,
                    start: 1,
                    offsets: vec![1, 2],
                },
            ],
        };
        let theta = ResidualTokenizer::for_encoder(model.config(), 3).augmented();
        let coords: Vec<usize> = (0..theta.len()).step_by(97).collect();
        for loss in [LossKind::Ce, LossKind::Mse] {
            let cfg = TrainConfig { loss, ..cfg };
            let err = grad_check_coords(
                |t, p| batch_loss(t, &model, &data, &batch, Some(p), &cfg),
                &theta,
                1e-3,
                Some(&coords),
            )
            .unwrap();
            assert!(err <= 1e-4, "{loss:?}: {err}");
        }
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let (model, corpus) = toy();
        let cfg = TrainConfig {
            lr: 0.0,
            epochs: 2,
            batch_size: 2,
            ..Default::default()
        };
        let a = ResidualTokenizer::for_encoder(model.config(), 0);
        let out = train(&corpus, &cfg, &model, &a).unwrap();
        assert_eq!(out.tokenizer, a);
        assert_eq!(out.history.len(), 3);
        assert!(out
            .history
            .windows(2)
            .all(|w| w[0].ce == w[1].ce && w[0].mean_cosine == w[1].mean_cosine));
    }

    #[test]
    fn short_videos_are_rejected() {
        let cfg = EncoderConfig::default();
        let model = DualEncoder::new(cfg).unwrap();
        let corpus = gen_synthetic_corpus(&cfg, 2, 1, 0).unwrap();
        let a = ResidualTokenizer::for_encoder(&cfg, 0);
        let err = train(&corpus, &TrainConfig::default(), &model, &a).unwrap_err();
        assert!(matches!(err, Error::Argument(ref m) if m.contains("n_train")));
    }

    #[test]
    fn training_is_deterministic_and_leaves_teacher_alone() {
        let (model, corpus) = toy();
        let before = model.checksum();
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 2,
            lr: 0.05,
            sampling: Sampling::RandomSubset,
            ..Default::default()
        };
        let a = ResidualTokenizer::for_encoder(model.config(), 0);
        let x = train(&corpus, &cfg, &model, &a).unwrap();
        let y = train(&corpus, &cfg, &model, &a).unwrap();
        assert_eq!(x.tokenizer, y.tokenizer);
        assert_ne!(x.tokenizer, a);
        assert_eq!(model.checksum(), before);
        let csv = history_csv(&x.history);
        assert!(csv.starts_with("epoch,ce,mse,mean_cosine\n0,"));
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn divergence_reports_the_step() {
        let (model, corpus) = toy();
        let cfg = TrainConfig {
            batch_size: 2,
            loss: LossKind::Mse,
            ..Default::default()
        };
        let mut a = ResidualTokenizer::for_encoder(model.config(), 0);
        a.bias.data_mut()[0] = f64::NAN;
        match train(&corpus, &cfg, &model, &a) {
            Err(Error::Training { step, .. }) => assert_eq!(step, 0),
            other => panic!("expected a training error, got {other:?}"),
        }
    }
}
