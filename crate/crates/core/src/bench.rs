//! Cost sweeps, wall-clock latency and cost/quality trade-off reports.

use std::fmt::Write as _;
use std::time::Instant;

use serde::Serialize;

use crate::corpus::{gen_synthetic_corpus, Corpus, GroundingVideo};
use crate::error::{Error, Result};
use crate::grounding::{evaluate, ground, similarity_profile, GroundingConfig, MomentPrediction};
use crate::parallel::{current_threads, map_indices};
use crate::reduction::{DropStrategy, ReductionMode};
use crate::residual::{
    analytic_interleaved_flops, drop_only_cost, extended_cost, savings_percent, FrameKind,
    InterleaveConfig, ResidualTokenizer, ResidualViT,
};
use crate::teacher::{DualEncoder, Frame};

/// Timed passes discarded before measuring.
pub const WARMUP: usize = 3;
pub const MIN_REPETITIONS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub n: usize,
    pub p: f64,
    pub drop_only_cost: f64,
    pub drop_only_savings: f64,
    pub extended_cost: f64,
    pub extended_savings: f64,
}

/// Both cost models at each `N`.
pub fn sweep(c_ev: f64, k: usize, ns: &[usize], p: f64) -> Result<Vec<SweepRow>> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::arg(format!("drop fraction {p} must lie in [0, 1)")));
    }
    if !(c_ev > 0.0) || k == 0 {
        return Err(Error::arg(
            "cost sweep needs a positive base cost and token count",
        ));
    }
    Ok(ns
        .iter()
        .map(|&n| {
            let e1 = drop_only_cost(c_ev, n, p);
            let ext = extended_cost(c_ev, k, n, p);
            SweepRow {
                n,
                p,
                drop_only_cost: e1,
                drop_only_savings: savings_percent(c_ev, e1),
                extended_cost: ext,
                extended_savings: savings_percent(c_ev, ext),
            }
        })
        .collect())
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(
        "n,p,drop_only_cost,drop_only_savings_pct,extended_cost,extended_savings_pct\n",
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{:.4},{:.2},{:.4},{:.2}",
            r.n, r.p, r.drop_only_cost, r.drop_only_savings, r.extended_cost, r.extended_savings
        );
    }
    out
}

/// Mean and sample standard deviation, in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Timing {
    pub mean_ms: f64,
    pub std_ms: f64,
    pub samples: usize,
}

impl Timing {
    pub fn from_samples(ms: &[f64]) -> Timing {
        let n = ms.len();
        let mean = ms.iter().sum::<f64>() / n.max(1) as f64;
        let var = if n > 1 {
            ms.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Timing {
            mean_ms: mean,
            std_ms: var.sqrt(),
            samples: n,
        }
    }
}

/// Runs `f` `WARMUP` times untimed, then `repetitions` times on a
/// monotonic clock.
pub fn time_passes<F: FnMut() -> Result<()>>(repetitions: usize, mut f: F) -> Result<Timing> {
    for _ in 0..WARMUP {
        f()?;
    }
    let mut ms = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let start = Instant::now();
        f()?;
        ms.push(start.elapsed().as_secs_f64() * 1e3);
    }
    Ok(Timing::from_samples(&ms))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub n: usize,
    pub p: f64,
    pub strategy: String,
    pub batch: usize,
    pub threads: usize,
    pub repetitions: usize,
    /// Full-encoder FLOPs per frame at `K + 1` tokens.
    pub full_flops: f64,
    pub drop_only_cost: f64,
    pub extended_cost: f64,
    pub analytic_flops: f64,
    pub full: Timing,
    pub interleaved: Timing,
    /// `full.mean / interleaved.mean`.
    pub speedup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "n,p,strategy,batch,threads,repetitions,full_flops,drop_only_cost,extended_cost,analytic_flops,\
             full_mean_ms,full_std_ms,interleaved_mean_ms,interleaved_std_ms,speedup\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{:.0},{:.0},{:.0},{:.0},{:.4},{:.4},{:.4},{:.4},{:.3}",
                r.n,
                r.p,
                r.strategy,
                r.batch,
                r.threads,
                r.repetitions,
                r.full_flops,
                r.drop_only_cost,
                r.extended_cost,
                r.analytic_flops,
                r.full.mean_ms,
                r.full.std_ms,
                r.interleaved.mean_ms,
                r.interleaved.std_ms,
                r.speedup
            );
        }
        out
    }
}

/// A clip of `batch` consecutive synthetic frames.
pub fn bench_frames(model: &DualEncoder, batch: usize, seed: u64) -> Result<Vec<Frame>> {
    let corpus = gen_synthetic_corpus(model.config(), 1, batch, seed)?;
    Ok(corpus
        .videos
        .into_iter()
        .next()
        .map(|v| v.frames)
        .unwrap_or_default())
}

/// Times full encoding of every frame against interleaved encoding of the
/// same frames, one row per batch size.
pub fn bench_latency(
    model: &DualEncoder,
    tokenizer: &ResidualTokenizer,
    icfg: &InterleaveConfig,
    batches: &[usize],
    repetitions: usize,
    seed: u64,
) -> Result<BenchReport> {
    if repetitions < MIN_REPETITIONS {
        return Err(Error::arg(format!(
            "at least {MIN_REPETITIONS} repetitions, got {repetitions}"
        )));
    }
    if batches.is_empty() || batches.contains(&0) {
        return Err(Error::arg("batch sizes must be positive"));
    }
    let student = ResidualViT::new(model, tokenizer)?;
    let cfg = model.config();
    let k = cfg.num_patches();
    let full_flops = cfg.count_flops_full(k + 1);
    let p = if icfg.reduction.mode == ReductionMode::Drop {
        icfg.reduction.p
    } else {
        0.0
    };
    let mut rows = Vec::with_capacity(batches.len());
    for &batch in batches {
        let frames = bench_frames(model, batch, seed)?;
        let full = time_passes(repetitions, || {
            map_indices(frames.len(), |i| model.encode_frame(&frames[i])).map(drop)
        })?;
        let interleaved = time_passes(repetitions, || {
            student
                .encode_video_interleaved(&frames, icfg, None)
                .map(drop)
        })?;
        rows.push(BenchRow {
            n: icfg.n,
            p,
            strategy: strategy_label(icfg),
            batch,
            threads: current_threads(),
            repetitions,
            full_flops,
            drop_only_cost: drop_only_cost(full_flops, icfg.n, p),
            extended_cost: extended_cost(full_flops, k, icfg.n, p),
            analytic_flops: analytic_interleaved_flops(cfg, icfg.n, p),
            speedup: full.mean_ms / interleaved.mean_ms,
            full,
            interleaved,
        });
    }
    Ok(BenchReport { rows })
}

fn strategy_label(icfg: &InterleaveConfig) -> String {
    match icfg.reduction.mode {
        ReductionMode::Drop => icfg.reduction.strategy.to_string(),
        ReductionMode::None => "none".into(),
        ReductionMode::Merge => format!("merge-r{}", icfg.reduction.r),
        ReductionMode::Resolution => "resolution".into(),
    }
}

/// One point of the cost/quality trade-off.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TradeoffSetting {
    pub n: usize,
    pub p: f64,
    pub use_residual: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TradeoffRow {
    pub n: usize,
    pub p: f64,
    pub use_residual: bool,
    /// Extended-model cost relative to full encoding.
    pub relative_cost: f64,
    pub analytic_flops: f64,
    /// Mean cosine of P-features to teacher features.
    pub mean_cosine: f64,
    /// R@1 at IoU 0.5 on the grounding corpus.
    pub r_at_1: f64,
}

/// Mean cosine between P-features and the teacher's features of the same
/// frames, over every video of `corpus`.
pub fn p_feature_fidelity(
    student: &ResidualViT<'_>,
    corpus: &Corpus,
    icfg: &InterleaveConfig,
) -> Result<f64> {
    let per_video = map_indices(corpus.len(), |v| {
        let frames = &corpus.videos[v].frames;
        let seq = student.encode_video_interleaved(frames, icfg, None)?;
        let mut sum = 0.0;
        let mut count = 0usize;
        for (t, kind) in seq.kinds.iter().enumerate() {
            if *kind == FrameKind::P {
                sum += seq.features[t].cosine(&student.teacher.encode_frame(&frames[t])?);
                count += 1;
            }
        }
        Ok((sum, count))
    })?;
    let (sum, count) = per_video
        .iter()
        .fold((0.0, 0), |(s, c), (a, b)| (s + a, c + b));
    if count == 0 {
        return Err(Error::Evaluation(
            "no P-frames to compare; use N > 0 and clips longer than one frame".into(),
        ));
    }
    Ok(sum / count as f64)
}

/// Grounds every segment text of every video and returns the predictions
/// with their ground-truth moments in seconds.
pub fn ground_videos(
    student: &ResidualViT<'_>,
    videos: &[GroundingVideo],
    icfg: &InterleaveConfig,
    gcfg: &GroundingConfig,
) -> Result<Vec<(Vec<MomentPrediction>, (f64, f64))>> {
    let per_video = map_indices(videos.len(), |v| {
        let video = &videos[v];
        let seq = student.encode_video_interleaved(&video.frames, icfg, None)?;
        video
            .segments
            .iter()
            .map(|s| {
                let text = student.teacher.encode_text(&s.text)?;
                let profile = similarity_profile(&seq, &text, gcfg.fps)?;
                let gt = (
                    s.start_frame as f64 / gcfg.fps,
                    s.end_frame as f64 / gcfg.fps,
                );
                Ok((ground(&profile, gcfg)?, gt))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(per_video.into_iter().flatten().collect())
}

/// Measures every setting: relative cost, P-feature fidelity on `corpus`
/// and R@1 at IoU 0.5 on `grounding`.
pub fn measure_tradeoff(
    model: &DualEncoder,
    tokenizer: &ResidualTokenizer,
    corpus: &Corpus,
    grounding: &[GroundingVideo],
    settings: &[TradeoffSetting],
    strategy: DropStrategy,
    gcfg: &GroundingConfig,
) -> Result<Vec<TradeoffRow>> {
    let student = ResidualViT::new(model, tokenizer)?;
    let cfg = model.config();
    let k = cfg.num_patches();
    settings
        .iter()
        .map(|s| {
            let icfg = InterleaveConfig {
                n: s.n,
                use_residual: s.use_residual,
                reduction: crate::reduction::ReductionConfig::drop(s.p, strategy),
                ..Default::default()
            };
            let results = ground_videos(&student, grounding, &icfg, gcfg)?;
            let metrics = evaluate(&results, &[0.5])?;
            Ok(TradeoffRow {
                n: s.n,
                p: s.p,
                use_residual: s.use_residual,
                relative_cost: extended_cost(1.0, k, s.n, s.p),
                analytic_flops: analytic_interleaved_flops(cfg, s.n, s.p),
                mean_cosine: p_feature_fidelity(&student, corpus, &icfg)?,
                r_at_1: metrics.recall_at_1[0].1,
            })
        })
        .collect()
}

/// Plot-ready CSV of the trade-off rows.
pub fn report_tradeoff(rows: &[TradeoffRow]) -> Result<String> {
    if rows.len() < 2 {
        return Err(Error::Usage(format!(
            "a trade-off report needs at least 2 settings, got {}",
            rows.len()
        )));
    }
    let mut out =
        String::from("n,p,use_residual,relative_cost,analytic_flops,mean_cosine,r_at_1\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{:.6},{:.0},{:.6},{:.4}",
            r.n, r.p, r.use_residual, r.relative_cost, r.analytic_flops, r.mean_cosine, r.r_at_1
        );
    }
    Ok(out)
}
