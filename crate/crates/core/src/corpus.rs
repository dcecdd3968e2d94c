//! Synthetic video-text data: clips of drifting coloured shapes whose text
//! ids are derived from the shape parameters, plus multi-segment videos
//! for grounding experiments.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io::{read_file, write_atomic, ByteReader, ByteWriter};
use crate::teacher::{EncoderConfig, Frame};

pub const CLIP_MAGIC: &[u8; 4] = b"RVTV";

const PALETTE: [[u8; 3]; 8] = [
    [230, 40, 40],
    [40, 200, 60],
    [50, 80, 230],
    [240, 220, 40],
    [220, 60, 220],
    [40, 220, 220],
    [250, 140, 30],
    [245, 245, 245],
];

const BACKGROUNDS: [[u8; 3]; 4] = [[20, 20, 30], [60, 40, 20], [20, 50, 40], [90, 90, 100]];

const DIRECTIONS: [(f64, f64); 8] = [
    (1.0, 0.0),
    (0.7071, 0.7071),
    (0.0, 1.0),
    (-0.7071, 0.7071),
    (-1.0, 0.0),
    (-0.7071, -0.7071),
    (0.0, -1.0),
    (0.7071, -0.7071),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    Square,
    Disc,
    Bar,
    Cross,
}

const SHAPES: [ShapeKind; 4] = [
    ShapeKind::Square,
    ShapeKind::Disc,
    ShapeKind::Bar,
    ShapeKind::Cross,
];

/// Parameters of one synthetic clip.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipSpec {
    pub shape: usize,
    pub color: usize,
    pub background: usize,
    pub size: usize,
    pub direction: usize,
    /// Pixels per frame at the 32-pixel reference width.
    pub speed: f64,
    pub start: (f64, f64),
}

impl ClipSpec {
    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        ClipSpec {
            shape: rng.random_range(0..SHAPES.len()),
            color: rng.random_range(0..PALETTE.len()),
            background: rng.random_range(0..BACKGROUNDS.len()),
            size: rng.random_range(0..3),
            direction: rng.random_range(0..DIRECTIONS.len()),
            speed: rng.random_range(0.5..1.5),
            start: (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)),
        }
    }

    /// Text ids naming shape, colour, direction, size and background.
    pub fn text_ids(&self, vocab: usize) -> Vec<u32> {
        [
            self.shape,
            8 + self.color,
            16 + self.direction,
            24 + self.size,
            32 + self.background,
        ]
        .iter()
        .map(|&v| (v % vocab) as u32)
        .collect()
    }

    /// Frame `t` of the clip. Motion wraps around the frame edges.
    pub fn render(&self, cfg: &EncoderConfig, t: usize, index: usize) -> Frame {
        let (h, w) = (cfg.height, cfg.width);
        let unit = w as f64 / 32.0;
        let (dx, dy) = DIRECTIONS[self.direction];
        let cx = (self.start.0 * w as f64 + dx * self.speed * unit * t as f64).rem_euclid(w as f64);
        let cy = (self.start.1 * h as f64 + dy * self.speed * unit * t as f64).rem_euclid(h as f64);
        let s = (3.0 + 2.0 * self.size as f64) * unit;
        let bg = BACKGROUNDS[self.background];
        let fg = PALETTE[self.color];
        let mut frame = Frame::filled(h, w, cfg.channels, 0);
        frame.index = index;
        let wrap = |d: f64, len: f64| (d + len / 2.0).rem_euclid(len) - len / 2.0;
        for y in 0..h {
            let oy = wrap(y as f64 + 0.5 - cy, h as f64);
            let shade = (y * 40 / h) as u8;
            for x in 0..w {
                let ox = wrap(x as f64 + 0.5 - cx, w as f64);
                let inside = match SHAPES[self.shape] {
                    ShapeKind::Square => ox.abs() <= s && oy.abs() <= s,
                    ShapeKind::Disc => ox * ox + oy * oy <= s * s,
                    ShapeKind::Bar => ox.abs() <= 2.0 * s && oy.abs() <= s / 2.0,
                    ShapeKind::Cross => {
                        (ox.abs() <= s && oy.abs() <= s / 3.0)
                            || (oy.abs() <= s && ox.abs() <= s / 3.0)
                    }
                };
                for c in 0..cfg.channels {
                    let v = if inside {
                        fg[c % 3]
                    } else {
                        bg[c % 3].saturating_add(shade)
                    };
                    frame.set(y, x, c, v);
                }
            }
        }
        frame
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Video {
    pub frames: Vec<Frame>,
    pub text: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub videos: Vec<Video>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    pub fn frames_per_video(&self) -> usize {
        self.videos
            .iter()
            .map(|v| v.frames.len())
            .min()
            .unwrap_or(0)
    }
}

/// `n_videos` clips of `frames_per_video` frames each, one drifting shape
/// per clip.
pub fn gen_synthetic_corpus(
    cfg: &EncoderConfig,
    n_videos: usize,
    frames_per_video: usize,
    seed: u64,
) -> Result<Corpus> {
    if n_videos == 0 || frames_per_video == 0 {
        return Err(Error::arg("corpus needs at least one video and one frame"));
    }
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let videos = (0..n_videos)
        .map(|_| {
            let spec = ClipSpec::random(&mut rng);
            Video {
                frames: (0..frames_per_video)
                    .map(|t| spec.render(cfg, t, t))
                    .collect(),
                text: spec.text_ids(cfg.vocab),
            }
        })
        .collect();
    Ok(Corpus { videos })
}

/// One ground-truth moment inside a grounding video.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub text: Vec<u32>,
    pub start_frame: usize,
    pub end_frame: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundingVideo {
    pub frames: Vec<Frame>,
    pub segments: Vec<Segment>,
}

/// Videos made of `segments` consecutive clips with distinct shapes and
/// colours; each clip's text is a query whose moment is the clip's span.
pub fn gen_grounding_corpus(
    cfg: &EncoderConfig,
    n_videos: usize,
    segments: usize,
    frames_per_segment: usize,
    seed: u64,
) -> Result<Vec<GroundingVideo>> {
    if n_videos == 0 || segments == 0 || frames_per_segment == 0 {
        return Err(Error::arg(
            "grounding corpus needs videos, segments and frames",
        ));
    }
    if segments > SHAPES.len() {
        return Err(Error::arg(format!(
            "at most {} segments per video",
            SHAPES.len()
        )));
    }
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_videos);
    for _ in 0..n_videos {
        let mut frames = Vec::new();
        let mut segs = Vec::new();
        let mut used_shapes = Vec::new();
        for _ in 0..segments {
            let mut spec = ClipSpec::random(&mut rng);
            while used_shapes.contains(&spec.shape) {
                spec.shape = rng.random_range(0..SHAPES.len());
            }
            used_shapes.push(spec.shape);
            let start = frames.len();
            for t in 0..frames_per_segment {
                frames.push(spec.render(cfg, t, start + t));
            }
            segs.push(Segment {
                text: spec.text_ids(cfg.vocab),
                start_frame: start,
                end_frame: frames.len(),
            });
        }
        out.push(GroundingVideo {
            frames,
            segments: segs,
        });
    }
    Ok(out)
}

/// Raw clip file: magic, version, frame count, height, width, channels,
/// then 8-bit pixels frame-major.
pub fn clip_to_bytes(frames: &[Frame]) -> Result<Vec<u8>> {
    let first = frames.first().ok_or_else(|| Error::arg("empty clip"))?;
    let mut w = ByteWriter::with_header(CLIP_MAGIC);
    w.usize32(frames.len(), "frame count")?;
    w.usize32(first.height, "height")?;
    w.usize32(first.width, "width")?;
    w.usize32(first.channels, "channels")?;
    for f in frames {
        if (f.height, f.width, f.channels) != (first.height, first.width, first.channels) {
            return Err(Error::dim("clip frames differ in extents"));
        }
        w.bytes(&f.pixels);
    }
    Ok(w.finish())
}

pub fn clip_from_bytes(bytes: &[u8]) -> Result<Vec<Frame>> {
    let mut r = ByteReader::open(bytes, CLIP_MAGIC, "clip file")?;
    let n = r.u32()? as usize;
    let h = r.u32()? as usize;
    let w = r.u32()? as usize;
    let c = r.u32()? as usize;
    let per = h * w * c;
    if per == 0 || bytes.len() != 24 + n * per {
        return Err(Error::format(
            "clip file",
            format!("size does not match {n} frames of {h}x{w}x{c}"),
        ));
    }
    let frames = (0..n)
        .map(|t| Frame::new(h, w, c, r.bytes(per)?.to_vec(), t))
        .collect::<Result<Vec<_>>>()?;
    r.finish()?;
    Ok(frames)
}

pub fn save_clip(path: impl AsRef<Path>, frames: &[Frame]) -> Result<()> {
    write_atomic(path, &clip_to_bytes(frames)?)
}

pub fn load_clip(path: impl AsRef<Path>) -> Result<Vec<Frame>> {
    clip_from_bytes(&read_file(path)?)
}
