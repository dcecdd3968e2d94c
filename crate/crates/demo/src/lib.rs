//! Browser bindings for three interactive views: the per-frame cost curve
//! over N, the token-drop mask of each strategy, and watershed grounding
//! on an editable similarity profile.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use residualvit::bench::{sweep, SweepRow};
use residualvit::grounding::{
    smooth, threshold, watershed_segments, GroundingConfig, MomentPrediction, SimilarityProfile,
    ThresholdMode,
};
use residualvit::reduction::{drop_selection, retained_count, DropStrategy};

/// Cost rows for `N = 0..=max_n`.
pub fn cost_rows(cev: f64, k: usize, p: f64, max_n: usize) -> Result<Vec<SweepRow>, String> {
    let ns: Vec<usize> = (0..=max_n).collect();
    sweep(cev, k, &ns, p).map_err(|e| e.to_string())
}

/// Row-major keep mask (1 = token kept) over a `rows × cols` patch grid.
/// `scores` is required by the motion strategy and ignored otherwise.
pub fn mask(
    rows: usize,
    cols: usize,
    p: f64,
    strategy: &str,
    seed: u64,
    scores: &[f64],
) -> Result<Vec<u8>, String> {
    if rows == 0 || cols == 0 {
        return Err("grid must be non-empty".into());
    }
    if !(0.0..1.0).contains(&p) {
        return Err(format!("p = {p} must lie in [0, 1)"));
    }
    let strategy: DropStrategy = strategy
        .parse()
        .map_err(|e: residualvit::Error| e.to_string())?;
    let scores = (strategy == DropStrategy::Motion).then_some(scores);
    let keep = retained_count(rows * cols, p);
    let chosen =
        drop_selection((rows, cols), keep, strategy, scores, seed).map_err(|e| e.to_string())?;
    let mut out = vec![0u8; rows * cols];
    for i in chosen {
        out[i] = 1;
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
pub struct Grounding {
    pub smoothed: Vec<f64>,
    /// The profile the threshold applies to (min-max normalized in fixed mode).
    pub scored: Vec<f64>,
    pub threshold: f64,
    pub moments: Vec<MomentPrediction>,
}

pub fn grounding(
    scores: &[f64],
    window: usize,
    mode: &str,
    alpha: f64,
    beta: f64,
    fps: f64,
) -> Result<Grounding, String> {
    let mode = match mode {
        "scaled-mean" => ThresholdMode::ScaledMean,
        "fixed-after-minmax" => ThresholdMode::FixedAfterMinmax,
        other => return Err(format!("unknown threshold mode `{other}`")),
    };
    let cfg = GroundingConfig {
        window,
        mode,
        alpha,
        beta,
        fps,
    };
    cfg.validate().map_err(|e| e.to_string())?;
    let profile = SimilarityProfile {
        scores: scores.to_vec(),
        fps,
    };
    let smoothed = smooth(&profile, window).map_err(|e| e.to_string())?;
    let (scored, th) = threshold(&smoothed, &cfg).map_err(|e| e.to_string())?;
    Ok(Grounding {
        moments: watershed_segments(&scored, th),
        smoothed: smoothed.scores,
        scored: scored.scores,
        threshold: th,
    })
}

fn js<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = costCurve)]
pub fn cost_curve(cev: f64, k: usize, p: f64, max_n: usize) -> Result<String, JsError> {
    js(cost_rows(cev, k, p, max_n))
}

#[wasm_bindgen(js_name = dropMask)]
pub fn drop_mask(
    rows: usize,
    cols: usize,
    p: f64,
    strategy: &str,
    seed: u32,
    scores: &[f64],
) -> Result<Vec<u8>, JsError> {
    mask(rows, cols, p, strategy, seed as u64, scores).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = groundProfile)]
pub fn ground_profile(
    scores: &[f64],
    window: usize,
    mode: &str,
    alpha: f64,
    beta: f64,
    fps: f64,
) -> Result<String, JsError> {
    js(grounding(scores, window, mode, alpha, beta, fps))
}
