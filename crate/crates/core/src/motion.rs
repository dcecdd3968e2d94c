//! Motion prior for the motion drop strategy: per-frame displacement
//! fields, windowed magnitude aggregation, and per-patch scores.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_file, write_atomic, ByteReader, ByteWriter};
use crate::teacher::{EncoderConfig, Frame};

pub const MOTION_MAGIC: &[u8; 4] = b"RVTM";
pub const DEFAULT_WINDOW: usize = 11;
/// Spatial reduction factor between frames and motion grids.
pub const MOTION_STRIDE: usize = 4;
/// Displacement channels per cell: (Δx, Δy) to the previous and next frame.
pub const MOTION_CHANNELS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Upsample {
    #[default]
    Nearest,
    Bilinear,
}

/// Per-frame displacement grids, `frames × height × width × channels`,
/// frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionField {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

/// Aggregated motion magnitude of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionMagnitudeGrid {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl MotionMagnitudeGrid {
    pub fn zeros(height: usize, width: usize) -> Self {
        MotionMagnitudeGrid {
            height,
            width,
            values: vec![0.0; height * width],
        }
    }

    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }
}

impl MotionField {
    pub fn new(
        frames: usize,
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        if data.len() != frames * height * width * channels {
            return Err(Error::dim(format!(
                "motion field {frames}x{height}x{width}x{channels} needs {} values, got {}",
                frames * height * width * channels,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("motion field contains non-finite values"));
        }
        Ok(MotionField {
            frames,
            height,
            width,
            channels,
            data,
        })
    }

    /// Packs per-frame magnitude grids into a field whose first channel
    /// carries the magnitude and the others are zero, so that aggregation
    /// reproduces the magnitudes.
    pub fn from_magnitudes(grids: &[MotionMagnitudeGrid]) -> Result<Self> {
        let first = grids.first().ok_or_else(|| Error::arg("no motion grids"))?;
        let (h, w) = (first.height, first.width);
        let mut data = Vec::with_capacity(grids.len() * h * w * MOTION_CHANNELS);
        for g in grids {
            if (g.height, g.width) != (h, w) {
                return Err(Error::dim("motion grids differ in extents"));
            }
            for &v in &g.values {
                data.push(v);
                data.extend([0.0; MOTION_CHANNELS - 1]);
            }
        }
        MotionField::new(grids.len(), h, w, MOTION_CHANNELS, data)
    }

    /// Frame-difference proxy for a whole clip, one grid per frame.
    pub fn from_frames(frames: &[Frame]) -> Result<Self> {
        let grids = (0..frames.len())
            .map(|t| frame_diff_proxy(frames, t))
            .collect::<Result<Vec<_>>>()?;
        MotionField::from_magnitudes(&grids)
    }

    fn cell(&self, t: usize, y: usize, x: usize) -> &[f64] {
        let c = self.channels;
        let start = ((t * self.height + y) * self.width + x) * c;
        &self.data[start..start + c]
    }

    pub fn scaled(&self, lambda: f64) -> MotionField {
        MotionField {
            data: self.data.iter().map(|v| v * lambda).collect(),
            ..self.clone()
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = ByteWriter::with_header(MOTION_MAGIC);
        w.usize32(self.frames, "frame count")?;
        w.usize32(self.height, "grid height")?;
        w.usize32(self.width, "grid width")?;
        w.usize32(self.channels, "channel count")?;
        for &v in &self.data {
            w.f32(v as f32);
        }
        Ok(w.finish())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::open(bytes, MOTION_MAGIC, "motion file")?;
        let frames = r.u32()? as usize;
        let height = r.u32()? as usize;
        let width = r.u32()? as usize;
        let channels = r.u32()? as usize;
        let n = frames
            .checked_mul(height)
            .and_then(|v| v.checked_mul(width))
            .and_then(|v| v.checked_mul(channels))
            .ok_or_else(|| Error::format("motion file", "header extents overflow"))?;
        if n.checked_mul(4) != Some(bytes.len().saturating_sub(24)) {
            return Err(Error::format(
                "motion file",
                format!("header promises {n} values"),
            ));
        }
        let data = (0..n)
            .map(|_| r.f32().map(f64::from))
            .collect::<Result<Vec<_>>>()?;
        r.finish()?;
        MotionField::new(frames, height, width, channels, data)
            .map_err(|e| Error::format("motion file", e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}

/// Mean over the window `[t − W_M/2, t + W_M/2]` of the per-cell L1 norm
/// across channels. The window is clipped at both ends of the clip.
pub fn aggregate_motion(
    field: &MotionField,
    t: usize,
    window: usize,
) -> Result<MotionMagnitudeGrid> {
    if field.frames == 0 {
        return Err(Error::arg("motion field has no frames"));
    }
    if window == 0 || window % 2 == 0 {
        return Err(Error::arg(format!(
            "motion window {window} must be odd and positive"
        )));
    }
    if t >= field.frames {
        return Err(Error::arg(format!(
            "frame {t} outside a {}-frame field",
            field.frames
        )));
    }
    let half = window / 2;
    let lo = t.saturating_sub(half);
    let hi = (t + half).min(field.frames - 1);
    let count = (hi - lo + 1) as f64;
    let mut grid = MotionMagnitudeGrid::zeros(field.height, field.width);
    for i in lo..=hi {
        for y in 0..field.height {
            for x in 0..field.width {
                let l1: f64 = field.cell(i, y, x).iter().map(|v| v.abs()).sum();
                grid.values[y * field.width + x] += l1;
            }
        }
    }
    for v in &mut grid.values {
        *v /= count;
    }
    Ok(grid)
}

/// Per-patch mean of the grid upsampled to frame resolution, `K` scores in
/// row-major patch order.
pub fn patch_scores(
    grid: &MotionMagnitudeGrid,
    cfg: &EncoderConfig,
    upsample: Upsample,
) -> Result<Vec<f64>> {
    let (h, w, p) = (cfg.height, cfg.width, cfg.patch);
    if grid.height * MOTION_STRIDE != h || grid.width * MOTION_STRIDE != w {
        return Err(Error::dim(format!(
            "motion grid {}x{} does not match frame {h}x{w} at stride {MOTION_STRIDE}",
            grid.height, grid.width
        )));
    }
    let (gh, gw) = cfg.grid();
    let area = (p * p) as f64;
    let mut scores = vec![0.0; gh * gw];
    match upsample {
        Upsample::Nearest => {
            // each cell covers a 4×4 pixel block; weight it by its overlap
            let overlap = |patch: usize, cell: usize| {
                let (a0, a1) = (patch * p, (patch + 1) * p);
                let (b0, b1) = (cell * MOTION_STRIDE, (cell + 1) * MOTION_STRIDE);
                a1.min(b1).saturating_sub(a0.max(b0))
            };
            for (i, s) in scores.iter_mut().enumerate() {
                let (pr, pc) = (i / gw, i % gw);
                let ys = pr * p / MOTION_STRIDE..((pr + 1) * p).div_ceil(MOTION_STRIDE);
                let xs = pc * p / MOTION_STRIDE..((pc + 1) * p).div_ceil(MOTION_STRIDE);
                let mut acc = 0.0;
                for y in ys {
                    let oy = overlap(pr, y);
                    for x in xs.clone() {
                        acc += (oy * overlap(pc, x)) as f64 * grid.at(y, x);
                    }
                }
                *s = acc / area;
            }
        }
        Upsample::Bilinear => {
            let up = upsample_bilinear(grid, h, w);
            for (i, s) in scores.iter_mut().enumerate() {
                let (pr, pc) = (i / gw, i % gw);
                let mut acc = 0.0;
                for y in pr * p..(pr + 1) * p {
                    for x in pc * p..(pc + 1) * p {
                        acc += up[y * w + x];
                    }
                }
                *s = acc / area;
            }
        }
    }
    Ok(scores)
}

fn upsample_bilinear(grid: &MotionMagnitudeGrid, h: usize, w: usize) -> Vec<f64> {
    let sample = |dst: usize, src_len: usize, dst_len: usize| {
        let s = ((dst as f64 + 0.5) * src_len as f64 / dst_len as f64 - 0.5)
            .clamp(0.0, (src_len - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(src_len - 1);
        (i0, i1, s - i0 as f64)
    };
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        let (y0, y1, fy) = sample(y, grid.height, h);
        for x in 0..w {
            let (x0, x1, fx) = sample(x, grid.width, w);
            let top = grid.at(y0, x0) * (1.0 - fx) + grid.at(y0, x1) * fx;
            let bottom = grid.at(y1, x0) * (1.0 - fx) + grid.at(y1, x1) * fx;
            out[y * w + x] = top * (1.0 - fy) + bottom * fy;
        }
    }
    out
}

/// Mean absolute difference between frame `t` and `t − 1`, averaged over
/// channels and pooled over 4×4 pixel blocks. Frame 0 has no predecessor
/// and yields a zero grid.
pub fn frame_diff_proxy(frames: &[Frame], t: usize) -> Result<MotionMagnitudeGrid> {
    let cur = frames
        .get(t)
        .ok_or_else(|| Error::arg(format!("frame {t} outside a {}-frame clip", frames.len())))?;
    if cur.height % MOTION_STRIDE != 0 || cur.width % MOTION_STRIDE != 0 {
        return Err(Error::dim(format!(
            "frame {}x{} is not divisible by the motion stride {MOTION_STRIDE}",
            cur.height, cur.width
        )));
    }
    let (gh, gw) = (cur.height / MOTION_STRIDE, cur.width / MOTION_STRIDE);
    let mut grid = MotionMagnitudeGrid::zeros(gh, gw);
    if t == 0 {
        return Ok(grid);
    }
    let prev = &frames[t - 1];
    if (prev.height, prev.width, prev.channels) != (cur.height, cur.width, cur.channels) {
        return Err(Error::dim("consecutive frames differ in extents"));
    }
    let norm = (MOTION_STRIDE * MOTION_STRIDE * cur.channels) as f64;
    for y in 0..cur.height {
        for x in 0..cur.width {
            let mut diff = 0u32;
            for c in 0..cur.channels {
                diff += cur.at(y, x, c).abs_diff(prev.at(y, x, c)) as u32;
            }
            grid.values[(y / MOTION_STRIDE) * gw + x / MOTION_STRIDE] += diff as f64;
        }
    }
    for v in &mut grid.values {
        *v /= norm;
    }
    Ok(grid)
}

/// Memory of a frame plus its windowed motion vectors, relative to the
/// frame alone: `(H·W·3 + (H/4)·(W/4)·4·W_M) / (H·W·3)`.
pub fn memory_overhead(height: usize, width: usize, window: usize) -> f64 {
    let frame = (height * width * 3) as f64;
    let motion =
        ((height / MOTION_STRIDE) * (width / MOTION_STRIDE) * MOTION_CHANNELS * window) as f64;
    (frame + motion) / frame
}
