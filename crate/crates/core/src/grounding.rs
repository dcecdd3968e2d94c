//! Zero-shot temporal grounding: frame-text similarity profiles, moving
//! average smoothing, thresholding, run extraction, and recall/IoU metrics.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_file, write_atomic};
use crate::parallel::map_indices;
use crate::residual::FeatureSequence;
use crate::teacher::Feature;

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityProfile {
    pub scores: Vec<f64>,
    /// Frames per second, for index to time conversion.
    pub fps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdMode {
    /// `α · mean(S)`
    ScaledMean,
    /// Min-max normalize to `[0, 1]`, then a fixed `β`.
    FixedAfterMinmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroundingConfig {
    /// Moving-average window, odd.
    pub window: usize,
    pub mode: ThresholdMode,
    pub alpha: f64,
    pub beta: f64,
    pub fps: f64,
}

impl Default for GroundingConfig {
    fn default() -> Self {
        GroundingConfig {
            window: 15,
            mode: ThresholdMode::ScaledMean,
            alpha: 1.0,
            beta: 0.7,
            fps: 1.0,
        }
    }
}

impl GroundingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.window % 2 == 0 {
            return Err(Error::arg(format!(
                "smoothing window {} must be odd and positive",
                self.window
            )));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::arg(format!("beta {} must lie in [0, 1]", self.beta)));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::arg(format!("fps {} must be positive", self.fps)));
        }
        if !self.alpha.is_finite() {
            return Err(Error::arg("alpha must be finite"));
        }
        Ok(())
    }
}

/// A predicted moment in seconds, end exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentPrediction {
    pub start: f64,
    pub end: f64,
    pub score: f64,
}

/// Per-frame inner product between frame features and a text feature.
pub fn similarity_profile(
    frames: &FeatureSequence,
    text: &Feature,
    fps: f64,
) -> Result<SimilarityProfile> {
    let scores = frames
        .features
        .iter()
        .map(|f| {
            if f.dim() != text.dim() {
                return Err(Error::dim(format!(
                    "frame feature width {} vs text {}",
                    f.dim(),
                    text.dim()
                )));
            }
            Ok(f.dot(text))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SimilarityProfile { scores, fps })
}

/// Centred moving average. Near the ends the window is clipped to the
/// frames that exist, so edge values average fewer samples.
pub fn smooth(profile: &SimilarityProfile, window: usize) -> Result<SimilarityProfile> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::arg(format!(
            "smoothing window {window} must be odd and positive"
        )));
    }
    let n = profile.scores.len();
    let half = window / 2;
    let scores = (0..n)
        .map(|t| {
            let span = &profile.scores[t.saturating_sub(half)..(t + half + 1).min(n)];
            span.iter().sum::<f64>() / span.len() as f64
        })
        .collect();
    Ok(SimilarityProfile {
        scores,
        fps: profile.fps,
    })
}

/// Threshold for `profile` and the profile it applies to: the input itself
/// in scaled-mean mode, its min-max normalization in fixed mode. A
/// constant profile normalizes to all zeros.
pub fn threshold(
    profile: &SimilarityProfile,
    cfg: &GroundingConfig,
) -> Result<(SimilarityProfile, f64)> {
    if profile.scores.is_empty() {
        return Err(Error::arg("empty similarity profile"));
    }
    match cfg.mode {
        ThresholdMode::ScaledMean => {
            let mean = profile.scores.iter().sum::<f64>() / profile.scores.len() as f64;
            Ok((profile.clone(), cfg.alpha * mean))
        }
        ThresholdMode::FixedAfterMinmax => {
            let lo = profile.scores.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = profile
                .scores
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max);
            let scores = if hi > lo {
                profile
                    .scores
                    .iter()
                    .map(|s| (s - lo) / (hi - lo))
                    .collect()
            } else {
                vec![0.0; profile.scores.len()]
            };
            Ok((
                SimilarityProfile {
                    scores,
                    fps: profile.fps,
                },
                cfg.beta,
            ))
        }
    }
}

/// Maximal runs of frames scoring strictly above `threshold`, as moments
/// sorted by their peak score (ties: earlier start first).
pub fn watershed_segments(profile: &SimilarityProfile, threshold: f64) -> Vec<MomentPrediction> {
    let mut out = Vec::new();
    let mut t = 0;
    let s = &profile.scores;
    while t < s.len() {
        if s[t] > threshold {
            let first = t;
            let mut peak = s[t];
            while t < s.len() && s[t] > threshold {
                peak = peak.max(s[t]);
                t += 1;
            }
            out.push(MomentPrediction {
                start: first as f64 / profile.fps,
                end: t as f64 / profile.fps,
                score: peak,
            });
        } else {
            t += 1;
        }
    }
    out.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.start.total_cmp(&b.start))
    });
    out
}

/// Smoothing, thresholding and run extraction in one step.
pub fn ground(profile: &SimilarityProfile, cfg: &GroundingConfig) -> Result<Vec<MomentPrediction>> {
    cfg.validate()?;
    let smoothed = smooth(profile, cfg.window)?;
    let (scored, th) = threshold(&smoothed, cfg)?;
    Ok(watershed_segments(&scored, th))
}

/// Grounds every profile on the worker pool, preserving order.
pub fn ground_all(
    profiles: &[SimilarityProfile],
    cfg: &GroundingConfig,
) -> Result<Vec<Vec<MomentPrediction>>> {
    map_indices(profiles.len(), |i| ground(&profiles[i], cfg))
}

/// Intersection over union of two `[start, end)` intervals.
pub fn iou(a: (f64, f64), b: (f64, f64)) -> f64 {
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// 1 if any of the top `k` predictions reaches IoU `θ` with `gt`, else 0.
pub fn recall_at_k(preds: &[MomentPrediction], gt: (f64, f64), k: usize, theta: f64) -> f64 {
    let hit = preds
        .iter()
        .take(k)
        .any(|p| iou((p.start, p.end), gt) >= theta);
    if hit {
        1.0
    } else {
        0.0
    }
}

/// Corpus metrics: R@1 at each IoU threshold and mean top-1 IoU. Queries
/// without predictions count as misses with IoU 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingMetrics {
    pub queries: usize,
    pub recall_at_1: Vec<(f64, f64)>,
    pub miou: f64,
}

pub fn evaluate(
    results: &[(Vec<MomentPrediction>, (f64, f64))],
    thetas: &[f64],
) -> Result<GroundingMetrics> {
    if results.is_empty() {
        return Err(Error::Evaluation("no queries to evaluate".into()));
    }
    let n = results.len() as f64;
    let recall_at_1 = thetas
        .iter()
        .map(|&th| {
            (
                th,
                results
                    .iter()
                    .map(|(p, gt)| recall_at_k(p, *gt, 1, th))
                    .sum::<f64>()
                    / n,
            )
        })
        .collect();
    let miou = results
        .iter()
        .map(|(p, gt)| p.first().map_or(0.0, |top| iou((top.start, top.end), *gt)))
        .sum::<f64>()
        / n;
    Ok(GroundingMetrics {
        queries: results.len(),
        recall_at_1,
        miou,
    })
}

/// One grounding query: a video, the query text ids, and the ground-truth
/// moment in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub video_id: String,
    pub text_ids: Vec<u32>,
    pub gt_start: f64,
    pub gt_end: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct QueryRow {
    video_id: String,
    text_ids: String,
    gt_start: f64,
    gt_end: f64,
}

pub fn queries_to_csv(queries: &[Query]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for q in queries {
        let ids: Vec<String> = q.text_ids.iter().map(u32::to_string).collect();
        w.serialize(QueryRow {
            video_id: q.video_id.clone(),
            text_ids: ids.join(" "),
            gt_start: q.gt_start,
            gt_end: q.gt_end,
        })
        .map_err(|e| Error::format("query file", e.to_string()))?;
    }
    w.into_inner()
        .map_err(|e| Error::format("query file", e.to_string()))
}

pub fn queries_from_csv(bytes: &[u8]) -> Result<Vec<Query>> {
    let mut r = csv::Reader::from_reader(bytes);
    let mut out = Vec::new();
    for (i, row) in r.deserialize::<QueryRow>().enumerate() {
        let row = row.map_err(|e| Error::format("query file", format!("row {}: {e}", i + 1)))?;
        let text_ids = row
            .text_ids
            .split_whitespace()
            .map(|t| t.parse::<u32>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::format("query file", format!("row {}: text id: {e}", i + 1)))?;
        if text_ids.is_empty() || !(row.gt_end > row.gt_start) {
            return Err(Error::format(
                "query file",
                format!("row {}: empty text or empty moment", i + 1),
            ));
        }
        out.push(Query {
            video_id: row.video_id,
            text_ids,
            gt_start: row.gt_start,
            gt_end: row.gt_end,
        });
    }
    Ok(out)
}

pub fn load_queries(path: impl AsRef<Path>) -> Result<Vec<Query>> {
    queries_from_csv(&read_file(path)?)
}

pub fn save_queries(path: impl AsRef<Path>, queries: &[Query]) -> Result<()> {
    write_atomic(path, &queries_to_csv(queries)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub query_id: usize,
    pub rank: usize,
    pub start: f64,
    pub end: f64,
    pub score: f64,
}

/// Ranked predictions of every query, 1-based ranks.
pub fn results_to_csv(predictions: &[Vec<MomentPrediction>]) -> Result<Vec<u8>> {
    // header written by hand so an empty result set still has one
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    w.write_record(["query_id", "rank", "start", "end", "score"])
        .map_err(|e| Error::format("results file", e.to_string()))?;
    for (q, preds) in predictions.iter().enumerate() {
        for (rank, p) in preds.iter().enumerate() {
            w.serialize(ResultRow {
                query_id: q,
                rank: rank + 1,
                start: p.start,
                end: p.end,
                score: p.score,
            })
            .map_err(|e| Error::format("results file", e.to_string()))?;
        }
    }
    w.into_inner()
        .map_err(|e| Error::format("results file", e.to_string()))
}

/// Predictions grouped by query id; queries absent from the file get none.
pub fn results_from_csv(bytes: &[u8], queries: usize) -> Result<Vec<Vec<MomentPrediction>>> {
    let mut r = csv::Reader::from_reader(bytes);
    let mut out = vec![Vec::new(); queries];
    for (i, row) in r.deserialize::<ResultRow>().enumerate() {
        let row = row.map_err(|e| Error::format("results file", format!("row {}: {e}", i + 1)))?;
        let slot = out.get_mut(row.query_id).ok_or_else(|| {
            Error::format(
                "results file",
                format!("row {}: unknown query {}", i + 1, row.query_id),
            )
        })?;
        slot.push((
            row.rank,
            MomentPrediction {
                start: row.start,
                end: row.end,
                score: row.score,
            },
        ));
    }
    Ok(out
        .into_iter()
        .map(|mut v: Vec<(usize, MomentPrediction)>| {
            v.sort_by_key(|(rank, _)| *rank);
            v.into_iter().map(|(_, p)| p).collect()
        })
        .collect())
}
