//! The `rvt` command line.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::bench::{
    bench_latency, measure_tradeoff, report_tradeoff, sweep, sweep_csv, TradeoffSetting,
};
use crate::config::{parse_override, RunConfig, RESOLVED_CONFIG};
use crate::corpus::{
    gen_grounding_corpus, gen_synthetic_corpus, load_clip, save_clip, Corpus, GroundingVideo,
    Segment, Video,
};
use crate::distill::{train, write_history};
use crate::error::{Error, Result};
use crate::grounding::{
    evaluate, ground, load_queries, results_from_csv, results_to_csv, save_queries,
    similarity_profile, Query,
};
use crate::io::{read_file, write_atomic};
use crate::motion::MotionField;
use crate::parallel::{map_indices, set_threads};
use crate::residual::{
    drop_only_cost, extended_cost, savings_percent, FeatureSequence, ResidualTokenizer, ResidualViT,
};
use crate::teacher::DualEncoder;

pub const THREADS_ENV: &str = "RVT_THREADS";
pub const TEACHER_FILE: &str = "teacher.rvtw";
pub const CORPUS_FILE: &str = "corpus.csv";
pub const QUERIES_FILE: &str = "queries.csv";

#[derive(Debug, Parser)]
#[command(
    name = "rvt",
    version,
    about = "Interleaved video feature encoding, distillation and grounding"
)]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Config override `key.path=value`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Seed for data generation, training and random token drops.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (RVT_THREADS wins when set).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate teacher weights, training clips and grounding queries.
    GenData {
        #[arg(long)]
        out: PathBuf,
    },
    /// Encode one clip into a feature file.
    Encode(EncodeArgs),
    /// Train the residual tokenizer on a generated data directory.
    Distill {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Start from this tokenizer instead of a fresh one.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Ground every query of a data directory.
    Ground {
        #[arg(long)]
        data: PathBuf,
        /// Residual tokenizer; without it P-frames get no residual token.
        #[arg(long)]
        tokenizer: Option<PathBuf>,
        /// Encode every frame with the full encoder.
        #[arg(long)]
        full: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score grounding results against the query file.
    Eval {
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        results: PathBuf,
        /// Also write the metrics as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-frame cost of interleaved encoding.
    Cost {
        /// Full-encoder cost per frame, e.g. GFLOPs.
        #[arg(long)]
        cev: f64,
        /// Patch tokens per frame.
        #[arg(long)]
        k: usize,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        p: f64,
    },
    /// Wall-clock latency of full against interleaved encoding.
    Bench {
        #[arg(long)]
        tokenizer: Option<PathBuf>,
        /// Comma-separated batch sizes.
        #[arg(long, value_delimiter = ',')]
        batches: Option<Vec<usize>>,
        #[arg(long)]
        repetitions: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cost against N, optionally with measured quality.
    Sweep {
        #[arg(long, value_delimiter = ',', required = true)]
        n: Vec<usize>,
        #[arg(long)]
        p: f64,
        #[arg(long, default_value_t = 233.4)]
        cev: f64,
        #[arg(long, default_value_t = 196)]
        k: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Data directory for the quality columns.
        #[arg(long, requires = "tradeoff_out")]
        data: Option<PathBuf>,
        #[arg(long, requires = "data")]
        tokenizer: Option<PathBuf>,
        #[arg(long, requires = "data")]
        tradeoff_out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct EncodeArgs {
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    clip: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    tokenizer: Option<PathBuf>,
    /// Precomputed motion field for the motion drop strategy.
    #[arg(long)]
    motion: Option<PathBuf>,
    /// Encode every frame with the full encoder.
    #[arg(long)]
    full: bool,
    /// Store I/P kind bytes in the feature file.
    #[arg(long)]
    with_kinds: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct CorpusRow {
    clip: String,
    text_ids: String,
}

/// Parses `args` (program name first), runs the command, and returns the
/// process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                write!(out, "{text}")
            } else {
                write!(err, "{text}")
            };
            return code;
        }
    };
    match dispatch(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut overrides = cli
        .overrides
        .iter()
        .map(|s| parse_override(s))
        .collect::<Result<Vec<_>>>()?;
    if let Some(seed) = cli.seed {
        for key in [
            "seed",
            "train.seed",
            "interleave.reduction.rng_seed",
            "train.reduction.rng_seed",
        ] {
            overrides.push((key.to_string(), seed.into()));
        }
    }
    if let Some(t) = cli.threads {
        overrides.push(("threads".into(), t.into()));
    }
    let mut cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let t: usize =
            v.trim().parse().ok().filter(|&t| t > 0).ok_or_else(|| {
                Error::Usage(format!("{THREADS_ENV}={v} is not a positive integer"))
            })?;
        cfg.threads = Some(t);
    }
    if let Some(t) = cfg.threads {
        set_threads(t);
    }
    Ok(cfg)
}

fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(OsString::from).unwrap_or_default();
    name.push(".config.json");
    path.with_file_name(name)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())
}

fn dispatch(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let cfg = resolve(&cli)?;
    let say =
        |out: &mut dyn Write, s: String| writeln!(out, "{s}").map_err(|e| Error::io("<stdout>", e));
    match cli.command {
        Command::GenData { out: dir } => {
            let summary = gen_data(&cfg, &dir)?;
            say(out, summary)
        }
        Command::Encode(args) => {
            let model = DualEncoder::load(&args.weights)?;
            check_geometry(&cfg, &model)?;
            let frames = load_clip(&args.clip)?;
            let seq = if args.full {
                FeatureSequence::all_i(map_indices(frames.len(), |i| {
                    model.encode_frame(&frames[i])
                })?)
            } else {
                let tok = tokenizer_or_zeros(
                    &model,
                    args.tokenizer.as_deref(),
                    cfg.interleave.use_residual,
                )?;
                let motion = args.motion.as_deref().map(MotionField::load).transpose()?;
                ResidualViT::new(&model, &tok)?.encode_video_interleaved(
                    &frames,
                    &cfg.interleave,
                    motion.as_ref(),
                )?
            };
            seq.save(&args.out, args.with_kinds)?;
            write_text(&sidecar(&args.out), &cfg.to_json())?;
            say(
                out,
                format!("encoded {} frames -> {}", seq.len(), args.out.display()),
            )
        }
        Command::Distill {
            data,
            out: dir,
            init,
        } => {
            let model = DualEncoder::load(data.join(TEACHER_FILE))?;
            check_geometry(&cfg, &model)?;
            let corpus = load_corpus(&data)?;
            let start = match init {
                Some(p) => ResidualTokenizer::load(p)?,
                None => ResidualTokenizer::for_encoder(model.config(), cfg.train.seed),
            };
            let outcome = train(&corpus, &cfg.train, &model, &start)?;
            outcome.tokenizer.save(dir.join("tokenizer.rvta"))?;
            write_history(dir.join("history.csv"), &outcome.history)?;
            cfg.write_resolved(&dir)?;
            for h in &outcome.history {
                say(
                    out,
                    format!(
                        "epoch {} ce {:.6} mse {:.6} mean_cosine {:.6}",
                        h.epoch, h.ce, h.mse, h.mean_cosine
                    ),
                )?;
            }
            Ok(())
        }
        Command::Ground {
            data,
            tokenizer,
            full,
            out: path,
        } => {
            let model = DualEncoder::load(data.join(TEACHER_FILE))?;
            check_geometry(&cfg, &model)?;
            let queries = load_queries(data.join(QUERIES_FILE))?;
            let tok = tokenizer_or_zeros(
                &model,
                tokenizer.as_deref(),
                cfg.interleave.use_residual && !full,
            )?;
            let mut icfg = cfg.interleave;
            if tokenizer.is_none() {
                icfg.use_residual = false;
            }
            let student = ResidualViT::new(&model, &tok)?;
            let mut ids: Vec<&str> = queries.iter().map(|q| q.video_id.as_str()).collect();
            ids.sort_unstable();
            ids.dedup();
            let encoded = map_indices(ids.len(), |i| {
                let frames = load_clip(data.join("grounding").join(format!("{}.rvtv", ids[i])))?;
                if full {
                    Ok(FeatureSequence::all_i(
                        frames
                            .iter()
                            .map(|f| model.encode_frame(f))
                            .collect::<Result<Vec<_>>>()?,
                    ))
                } else {
                    student.encode_video_interleaved(&frames, &icfg, None)
                }
            })?;
            let preds = map_indices(queries.len(), |q| {
                let seq = &encoded[ids
                    .binary_search(&queries[q].video_id.as_str())
                    .expect("video encoded")];
                let text = model.encode_text(&queries[q].text_ids)?;
                ground(
                    &similarity_profile(seq, &text, cfg.grounding.fps)?,
                    &cfg.grounding,
                )
            })?;
            write_atomic(&path, &results_to_csv(&preds)?)?;
            write_text(&sidecar(&path), &cfg.to_json())?;
            say(
                out,
                format!("grounded {} queries -> {}", queries.len(), path.display()),
            )
        }
        Command::Eval {
            queries,
            results,
            out: path,
        } => {
            let qs = load_queries(&queries)?;
            let preds = results_from_csv(&read_file(&results)?, qs.len())?;
            let pairs: Vec<_> = preds
                .into_iter()
                .zip(&qs)
                .map(|(p, q)| (p, (q.gt_start, q.gt_end)))
                .collect();
            let m = evaluate(&pairs, &[0.5, 0.7])?;
            for (th, r) in &m.recall_at_1 {
                say(out, format!("R@1 IoU={th}: {:.4}", r))?;
            }
            say(out, format!("mIoU: {:.4}", m.miou))?;
            if let Some(p) = path {
                let json = serde_json::to_string_pretty(&m).expect("metrics serialize");
                write_text(&p, &(json + "\n"))?;
            }
            Ok(())
        }
        Command::Cost { cev, k, n, p } => {
            if !(cev > 0.0) || k == 0 || !(0.0..1.0).contains(&p) {
                return Err(Error::Usage("need cev > 0, k >= 1 and p in [0, 1)".into()));
            }
            let ext = extended_cost(cev, k, n, p);
            let e1 = drop_only_cost(cev, n, p);
            say(
                out,
                format!("{:.1} (\u{2212}{:.0}%)", ext, savings_percent(cev, ext)),
            )?;
            say(
                out,
                format!(
                    "drop-only {:.1} (\u{2212}{:.0}%)",
                    e1,
                    savings_percent(cev, e1)
                ),
            )
        }
        Command::Bench {
            tokenizer,
            batches,
            repetitions,
            out: path,
        } => {
            let model = DualEncoder::new(cfg.encoder)?;
            let tok = match tokenizer {
                Some(p) => ResidualTokenizer::load(p)?,
                None => ResidualTokenizer::for_encoder(&cfg.encoder, cfg.train.seed),
            };
            let batches = batches.unwrap_or_else(|| cfg.bench.batches.clone());
            let reps = repetitions.unwrap_or(cfg.bench.repetitions);
            let report = bench_latency(&model, &tok, &cfg.interleave, &batches, reps, cfg.seed)?;
            let csv = report.to_csv();
            if let Some(p) = path {
                write_text(&p, &csv)?;
                write_text(&sidecar(&p), &cfg.to_json())?;
            }
            out.write_all(csv.as_bytes())
                .map_err(|e| Error::io("<stdout>", e))
        }
        Command::Sweep {
            n,
            p,
            cev,
            k,
            out: path,
            data,
            tokenizer,
            tradeoff_out,
        } => {
            let rows = sweep(cev, k, &n, p).map_err(|e| Error::Usage(e.to_string()))?;
            let csv = sweep_csv(&rows);
            if let Some(p) = &path {
                write_text(p, &csv)?;
                write_text(&sidecar(p), &cfg.to_json())?;
            }
            out.write_all(csv.as_bytes())
                .map_err(|e| Error::io("<stdout>", e))?;
            if let (Some(data), Some(target)) = (data, tradeoff_out) {
                let model = DualEncoder::load(data.join(TEACHER_FILE))?;
                check_geometry(&cfg, &model)?;
                let tok = match tokenizer {
                    Some(t) => ResidualTokenizer::load(t)?,
                    None => ResidualTokenizer::for_encoder(model.config(), cfg.train.seed),
                };
                let corpus = load_corpus(&data)?;
                let grounding = load_grounding(&data, &cfg)?;
                let settings: Vec<_> = n
                    .iter()
                    .flat_map(|&n| {
                        [true, false].map(|use_residual| TradeoffSetting { n, p, use_residual })
                    })
                    .collect();
                let trows = measure_tradeoff(
                    &model,
                    &tok,
                    &corpus,
                    &grounding,
                    &settings,
                    cfg.interleave.reduction.strategy,
                    &cfg.grounding,
                )?;
                let report = report_tradeoff(&trows)?;
                write_text(&target, &report)?;
                write_text(&sidecar(&target), &cfg.to_json())?;
            }
            Ok(())
        }
    }
}

fn check_geometry(cfg: &RunConfig, model: &DualEncoder) -> Result<()> {
    if model.config() != &cfg.encoder {
        return Err(Error::Config {
            key: "encoder".into(),
            message: "does not match the geometry stored in the weights file".into(),
        });
    }
    Ok(())
}

fn tokenizer_or_zeros(
    model: &DualEncoder,
    path: Option<&Path>,
    needed: bool,
) -> Result<ResidualTokenizer> {
    let c = model.config();
    match path {
        Some(p) => ResidualTokenizer::load(p),
        None if needed => Err(Error::Usage(
            "a residual tokenizer is required (pass --tokenizer, or set interleave.use_residual=false)".into(),
        )),
        None => Ok(ResidualTokenizer::zeros(c.feature_dim, c.dim)),
    }
}

fn gen_data(cfg: &RunConfig, dir: &Path) -> Result<String> {
    let model = DualEncoder::new(cfg.encoder)?;
    model.save(dir.join(TEACHER_FILE))?;
    let d = &cfg.data;
    let corpus = gen_synthetic_corpus(&cfg.encoder, d.videos, d.frames, cfg.seed)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for (i, v) in corpus.videos.iter().enumerate() {
        let name = format!("clip_{i:04}.rvtv");
        save_clip(dir.join("clips").join(&name), &v.frames)?;
        w.serialize(CorpusRow {
            clip: name,
            text_ids: join_ids(&v.text),
        })
        .map_err(|e| Error::format("corpus manifest", e.to_string()))?;
    }
    let manifest = w
        .into_inner()
        .map_err(|e| Error::format("corpus manifest", e.to_string()))?;
    write_atomic(dir.join(CORPUS_FILE), &manifest)?;

    let videos = gen_grounding_corpus(
        &cfg.encoder,
        d.grounding_videos,
        d.segments,
        d.frames_per_segment,
        cfg.seed.wrapping_add(1),
    )?;
    let fps = cfg.grounding.fps;
    let mut queries = Vec::new();
    for (i, v) in videos.iter().enumerate() {
        let id = format!("video_{i:04}");
        save_clip(dir.join("grounding").join(format!("{id}.rvtv")), &v.frames)?;
        for s in &v.segments {
            queries.push(Query {
                video_id: id.clone(),
                text_ids: s.text.clone(),
                gt_start: s.start_frame as f64 / fps,
                gt_end: s.end_frame as f64 / fps,
            });
        }
    }
    save_queries(dir.join(QUERIES_FILE), &queries)?;
    cfg.write_resolved(dir)?;
    Ok(format!(
        "wrote {} clips, {} grounding videos, {} queries and {} to {}",
        corpus.len(),
        videos.len(),
        queries.len(),
        RESOLVED_CONFIG,
        dir.display()
    ))
}

fn join_ids(ids: &[u32]) -> String {
    ids.iter().map(u32::to_string).collect::<Vec<_>>().join(" ")
}

fn parse_ids(s: &str, what: &str) -> Result<Vec<u32>> {
    s.split_whitespace()
        .map(|t| {
            t.parse::<u32>()
                .map_err(|e| Error::format(what, format!("text id `{t}`: {e}")))
        })
        .collect()
}

/// Training corpus from a generated data directory.
pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let bytes = read_file(dir.join(CORPUS_FILE))?;
    let mut r = csv::Reader::from_reader(bytes.as_slice());
    let mut videos = Vec::new();
    for row in r.deserialize::<CorpusRow>() {
        let row = row.map_err(|e| Error::format("corpus manifest", e.to_string()))?;
        videos.push(Video {
            frames: load_clip(dir.join("clips").join(&row.clip))?,
            text: parse_ids(&row.text_ids, "corpus manifest")?,
        });
    }
    Ok(Corpus { videos })
}

/// Grounding videos rebuilt from the query file: each video's queries
/// become its segments.
pub fn load_grounding(dir: &Path, cfg: &RunConfig) -> Result<Vec<GroundingVideo>> {
    let queries = load_queries(dir.join(QUERIES_FILE))?;
    let mut ids: Vec<&str> = queries.iter().map(|q| q.video_id.as_str()).collect();
    ids.dedup();
    ids.iter()
        .map(|id| {
            let frames = load_clip(dir.join("grounding").join(format!("{id}.rvtv")))?;
            let segments = queries
                .iter()
                .filter(|q| q.video_id == *id)
                .map(|q| Segment {
                    text: q.text_ids.clone(),
                    start_frame: (q.gt_start * cfg.grounding.fps).round() as usize,
                    end_frame: (q.gt_end * cfg.grounding.fps).round() as usize,
                })
                .collect();
            Ok(GroundingVideo { frames, segments })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rvt(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(
            std::iter::once("rvt").chain(args.iter().copied()),
            &mut out,
            &mut err,
        );
        (
            code,
            String::from_utf8(out).unwrap(),
            String::from_utf8(err).unwrap(),
        )
    }

    #[test]
    fn cost_prints_table_value() {
        let (code, out, _) = rvt(&[
            "cost", "--cev", "233.4", "--k", "256", "--n", "2", "--p", "0.85",
        ]);
        assert_eq!(code, 0);
        assert_eq!(out.lines().next().unwrap(), "102.6 (\u{2212}56%)");
        assert!(out.contains("drop-only 101.1"));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(rvt(&["frobnicate"]).0, 1);
        assert_eq!(rvt(&["cost", "--cev", "1"]).0, 1);
        assert_eq!(rvt(&["--help"]).0, 0);
        let (code, _, err) = rvt(&[
            "--set",
            "train.lrr=1",
            "cost",
            "--cev",
            "1",
            "--k",
            "4",
            "--n",
            "1",
            "--p",
            "0.5",
        ]);
        assert_eq!(code, 1);
        assert!(err.contains("train.lrr"), "{err}");
        let dir = tempfile::tempdir().unwrap();
        let bogus = dir.path().join("w.rvtw");
        std::fs::write(&bogus, b"XXXX\x01\0\0\0").unwrap();
        let (code, _, err) = rvt(&[
            "encode",
            "--weights",
            bogus.to_str().unwrap(),
            "--clip",
            "missing.rvtv",
            "--out",
            "x",
        ]);
        assert_eq!(code, 2);
        assert!(err.contains("magic"), "{err}");
    }

    #[test]
    fn sweep_emits_both_columns() {
        let (code, out, _) = rvt(&["sweep", "--n", "1,2,3,5,10", "--p", "0.85"]);
        assert_eq!(code, 0);
        let lines: Vec<&str> = out.lines().collect();
        assert_eq!(lines.len(), 6);
        assert!(
            lines[0].contains("drop_only_savings_pct") && lines[0].contains("extended_savings_pct")
        );
    }
}
