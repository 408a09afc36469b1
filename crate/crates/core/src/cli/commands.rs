//! Command implementations, callable without the argument parser.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{Decoder, RunConfig};
use super::output::{ensure_dir, is_nonempty_dir, write_atomic, DirLock};
use super::svg::{line_chart, Series};
use super::train::{model_spec, plan, recognize, score_specs, train_phase, Phase};
use crate::datagen::{
    evaluation_set, manifest_line, read_manifest, AugmentKind, GeneratorConfig, GlyphAtlas, ManifestRow,
    SentenceGenerator, Split,
};
use crate::dbpost::{approx_binary_map, box_formation, read_polygons, write_polygons, TextPolygon};
use crate::error::{Error, Result};
use crate::gradcheck::{run_scope, CheckResult};
use crate::imaging::GrayImage;
use crate::metrics::{detection_prf, mode_label, DetectionScore, EvalReport, ScoredSample};
use crate::nn::{load_checkpoint, save_checkpoint, Adam, Model};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST_NAME: &str = "manifest.json";
pub const CONFIG_SNAPSHOT: &str = "config.txt";

fn split_seed(seed: u64, split: Split) -> u64 {
    let salt = match split {
        Split::Train => 0x7472_6169_6e00_0000,
        Split::Test => 0x7465_7374_0000_0000,
    };
    (seed ^ salt).wrapping_mul(0xbf58_476d_1ce4_e5b9)
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes `count` rendered samples and `manifest.jsonl` into `out`.
pub fn cmd_gen(cfg: &RunConfig, count: usize, split: Split, out: &Path, force: bool) -> Result<Vec<ManifestRow>> {
    if count == 0 {
        return Err(Error::Config("count must be at least 1".into()));
    }
    let images = out.join("images");
    if is_nonempty_dir(out) {
        if !force {
            return Err(Error::Config(format!(
                "{} is not empty; pass --force to overwrite",
                out.display()
            )));
        }
        if images.exists() {
            fs::remove_dir_all(&images).map_err(|e| Error::io(&images, e))?;
        }
    }
    let _lock = DirLock::acquire(out)?;
    ensure_dir(&images)?;
    let atlas = GlyphAtlas::build(cfg.atlas_seed, cfg.alphabet_size)?;
    let mut gen = SentenceGenerator::new(GeneratorConfig {
        alphabet_size: cfg.alphabet_size,
        max_words: cfg.gen_max_words,
        fixed_words: None,
        augment_ratio: cfg.augment_ratio,
        split,
        seed: split_seed(cfg.seed, split),
    })?;
    let mut rows = Vec::with_capacity(count);
    let mut manifest = String::new();
    for i in 0..count {
        let spec = gen.next_spec().map_err(|e| match e {
            Error::EpochExhausted { emitted } => Error::Data(format!(
                "only {emitted} distinct sentences exist for this alphabet and length; lower count"
            )),
            e => e,
        })?;
        let name = format!("images/{i:06}.pgm");
        spec.render(&atlas, cfg.word_spacing)?.save_pgm(out.join(&name))?;
        let row = ManifestRow {
            image: name,
            transcript: spec.transcript(&atlas)?,
            words: spec.words.len(),
            augment: spec.augment,
            seed: spec.seed,
        };
        manifest.push_str(&manifest_line(&row)?);
        manifest.push('\n');
        rows.push(row);
    }
    write_atomic(&out.join("manifest.jsonl"), manifest.as_bytes())?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: usize,
    pub max_words: usize,
    pub freeze_conv: bool,
    pub steps: usize,
    pub curve: String,
    pub checkpoint: String,
    pub first_window_loss: f64,
    pub last_window_loss: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config: String,
    pub schedule: String,
    pub resumed_from: Option<String>,
    pub stages: Vec<StageRecord>,
    pub reports: Vec<String>,
    pub total_seconds: f64,
}

impl RunManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_NAME);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Every referenced artifact relative to `dir`.
    pub fn artifacts(&self) -> Vec<String> {
        let mut out = vec![CONFIG_SNAPSHOT.to_string()];
        for s in &self.stages {
            out.push(s.curve.clone());
            out.push(s.checkpoint.clone());
        }
        out.extend(self.reports.iter().cloned());
        out
    }
}

/// Loss-window size for the per-stage decrease check.
pub const LOSS_WINDOW: usize = 100;

/// Runs the schedule, writing a checkpoint and a loss curve per phase and
/// the run manifest last. `log` receives progress lines.
pub fn cmd_train(cfg: &RunConfig, config_text: &str, resume: Option<&Path>, mut log: impl FnMut(&str)) -> Result<RunManifest> {
    let dir = cfg.resolved_output_dir();
    let _lock = DirLock::acquire(&dir)?;
    let started = Instant::now();
    let atlas = GlyphAtlas::build(cfg.atlas_seed, cfg.alphabet_size)?;
    let (mut model, mut adam) = match resume {
        Some(path) => {
            let (m, a) = load_checkpoint(path)?;
            if *m.spec() != model_spec(cfg) {
                return Err(Error::Data(format!(
                    "checkpoint {} does not match the configured model (alphabet_size / width_divisor)",
                    path.display()
                )));
            }
            (m, a)
        }
        None => (Model::new(model_spec(cfg), cfg.seed)?, Adam::new(cfg.adam)),
    };
    adam.config = cfg.adam;
    let phases: Vec<Phase> = plan(cfg)
        .into_iter()
        .filter(|p| resume.is_none() || p.stage > model.stage())
        .collect();
    write(&dir.join(CONFIG_SNAPSHOT), config_text)?;
    let mut stages = Vec::new();
    for phase in &phases {
        let t0 = Instant::now();
        log(&format!(
            "stage {}: max_words {}, {} steps{}",
            phase.stage,
            phase.max_words,
            phase.steps,
            if phase.freeze_conv { ", conv block frozen" } else { "" }
        ));
        let curve = train_phase(&mut model, &mut adam, &atlas, cfg, phase, |step, loss| {
            if (step + 1) % 100 == 0 {
                log(&format!("  step {:>6}  loss {loss:.4}", step + 1));
            }
        })?;
        let curve_name = format!("loss_stage{}.csv", phase.stage);
        let ckpt_name = format!("stage{}.ckpt", phase.stage);
        write(&dir.join(&curve_name), curve.to_csv())?;
        save_checkpoint(&dir.join(&ckpt_name), &model, &adam)?;
        let (first, last) = curve.head_tail(LOSS_WINDOW);
        stages.push(StageRecord {
            stage: phase.stage,
            max_words: phase.max_words,
            freeze_conv: phase.freeze_conv,
            steps: phase.steps,
            curve: curve_name,
            checkpoint: ckpt_name,
            first_window_loss: first,
            last_window_loss: last,
            seconds: t0.elapsed().as_secs_f64(),
        });
    }
    let manifest = RunManifest {
        tool_version: TOOL_VERSION.to_string(),
        config: config_text.to_string(),
        schedule: format!("{:?}", cfg.schedule).to_lowercase(),
        resumed_from: resume.map(|p| p.display().to_string()),
        stages,
        reports: Vec::new(),
        total_seconds: started.elapsed().as_secs_f64(),
    };
    write_atomic(&dir.join(MANIFEST_NAME), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(manifest)
}

/// Modes of the generated evaluation grid.
pub const EVAL_MODES: [AugmentKind; 3] = [AugmentKind::None, AugmentKind::Salt, AugmentKind::Bold];

/// Samples of a dataset directory or manifest file, decoded and scored.
fn score_manifest(model: &mut Model, atlas: &GlyphAtlas, path: &Path, decoder: Decoder, beam_width: usize) -> Result<Vec<ScoredSample>> {
    let manifest = if path.is_dir() { path.join("manifest.jsonl") } else { path.to_path_buf() };
    let root = manifest.parent().unwrap_or(Path::new("."));
    let rows = read_manifest(&manifest)?;
    rows.iter()
        .enumerate()
        .map(|(i, row)| {
            for w in row.transcript.words() {
                atlas.encode(w).map_err(|_| {
                    Error::Data(format!(
                        "{}:{}: transcript uses symbols outside the checkpoint alphabet of {}",
                        manifest.display(),
                        i + 1,
                        atlas.alphabet_size()
                    ))
                })?;
            }
            let img = GrayImage::load_pgm(root.join(&row.image))?;
            Ok(ScoredSample {
                words: row.words,
                mode: row.augment,
                reference: row.transcript.clone(),
                hypothesis: recognize(model, atlas, &img, decoder, beam_width)?,
            })
        })
        .collect()
}

/// Held-out evaluation grid: every configured word count under each mode.
pub fn generated_eval_specs(cfg: &RunConfig) -> Result<Vec<crate::datagen::SampleSpec>> {
    let mut specs = Vec::new();
    for &w in &cfg.eval_words {
        specs.extend(evaluation_set(
            cfg.alphabet_size,
            w,
            cfg.eval_count,
            &EVAL_MODES,
            cfg.eval_seed.wrapping_add(w as u64),
        )?);
    }
    Ok(specs)
}

/// Loads a checkpoint and checks it against the configured alphabet.
pub fn load_for_eval(cfg: &RunConfig, checkpoint: &Path) -> Result<(Model, GlyphAtlas)> {
    let (model, _) = load_checkpoint(checkpoint)?;
    let atlas = GlyphAtlas::build(cfg.atlas_seed, cfg.alphabet_size)?;
    if model.classes() != atlas.classes() {
        return Err(Error::Data(format!(
            "alphabet mismatch: checkpoint has {} classes, configured alphabet needs {}",
            model.classes(),
            atlas.classes()
        )));
    }
    Ok((model, atlas))
}

/// Decodes a dataset (or the generated held-out grid when `dataset` is
/// `None`) and writes `eval.json`, `eval.csv` and `eval.svg` into `out`.
pub fn cmd_eval(
    cfg: &RunConfig,
    checkpoint: &Path,
    dataset: Option<&Path>,
    decoder: Decoder,
    beam_width: usize,
    out: &Path,
) -> Result<EvalReport> {
    let (mut model, atlas) = load_for_eval(cfg, checkpoint)?;
    let scored = match dataset {
        Some(path) => score_manifest(&mut model, &atlas, path, decoder, beam_width)?,
        None => {
            let specs = generated_eval_specs(cfg)?;
            score_specs(&mut model, &atlas, &specs, cfg.word_spacing, decoder, beam_width)?
        }
    };
    let name = match decoder {
        Decoder::Greedy => "greedy".to_string(),
        Decoder::Beam => format!("beam{beam_width}"),
    };
    let report = EvalReport::from_samples(&scored, &name)?;
    ensure_dir(out)?;
    write(&out.join("eval.json"), serde_json::to_string_pretty(&report)?)?;
    write(&out.join("eval.csv"), report.to_csv())?;
    write(&out.join("eval.svg"), eval_chart(&report))?;
    Ok(report)
}

/// CRR against word count, one line per augmentation mode.
pub fn eval_chart(report: &EvalReport) -> String {
    let mut modes: Vec<AugmentKind> = report.buckets.iter().map(|b| b.mode).collect();
    modes.sort();
    modes.dedup();
    let series: Vec<Series> = modes
        .into_iter()
        .map(|m| Series {
            name: mode_label(m).to_string(),
            points: report
                .buckets
                .iter()
                .filter(|b| b.mode == m)
                .map(|b| (b.words as f64, b.crr))
                .collect(),
        })
        .collect();
    line_chart(
        &format!("CRR by sentence length ({})", report.decoder),
        "words per line",
        "CRR (%)",
        &series,
        Some((0.0, 100.0)),
    )
}

/// Which map feeds box formation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum MapMode {
    Prob,
    Approx,
}

/// Map PGMs store high values as bright pixels.
pub fn load_map(path: &Path) -> Result<GrayImage> {
    let img = GrayImage::load_pgm(path)?;
    let data = img.data().iter().map(|v| 1.0 - v).collect();
    GrayImage::from_vec(img.width(), img.height(), data)
}

pub fn cmd_detect_post(cfg: &RunConfig, prob: &Path, thresh: Option<&Path>, mode: MapMode, out: &Path) -> Result<Vec<TextPolygon>> {
    let p = load_map(prob)?;
    let map = match mode {
        MapMode::Prob => p,
        MapMode::Approx => {
            let t = thresh.ok_or_else(|| {
                Error::Config("mode approx requires a threshold map (--thresh)".into())
            })?;
            approx_binary_map(&p, &load_map(t)?, cfg.db.k)?.map
        }
    };
    let polys = box_formation(&map, &cfg.db)?;
    write_polygons(out, &polys)?;
    Ok(polys)
}

pub fn detection_csv(score: &DetectionScore) -> String {
    format!(
        "Precision,Recall,F-Measure\n{:.2},{:.2},{:.2}\n",
        score.precision, score.recall, score.f_measure
    )
}

pub fn cmd_detect_eval(gt: &Path, pred: &Path, iou_thresh: f64, out: Option<&Path>) -> Result<DetectionScore> {
    if !(iou_thresh > 0.0 && iou_thresh < 1.0) {
        return Err(Error::Config(format!("iou threshold must be in (0, 1), got {iou_thresh}")));
    }
    let score = detection_prf(&read_polygons(gt)?, &read_polygons(pred)?, iou_thresh)?;
    if let Some(dir) = out {
        ensure_dir(dir)?;
        write(&dir.join("detect.json"), serde_json::to_string_pretty(&score)?)?;
        write(&dir.join("detect.csv"), detection_csv(&score))?;
    }
    Ok(score)
}

/// Runs the finite-difference checks; any failure is a verification error
/// carrying the table.
pub fn cmd_gradcheck(scope: &str, seeds: &[u64]) -> Result<Vec<CheckResult>> {
    run_scope(scope, seeds)
}

fn read_curve(path: &Path) -> Result<Vec<(f64, f64)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .skip(1)
        .enumerate()
        .map(|(i, l)| {
            let parse = || -> Option<(f64, f64)> {
                let (a, b) = l.split_once(',')?;
                Some((a.parse().ok()?, b.parse().ok()?))
            };
            parse().ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: i + 2,
                msg: format!("expected step,loss got {l:?}"),
            })
        })
        .collect()
}

/// Summarizes a finished run directory: `report.md`, a loss chart, and the
/// evaluation grid when `eval/eval.json` exists. Re-writes the manifest
/// with the report paths.
pub fn cmd_report(dir: &Path) -> Result<PathBuf> {
    let mut manifest = RunManifest::load(dir)?;
    let _lock = DirLock::acquire(dir)?;
    let mut md = String::from("# Training run\n\n");
    md.push_str(&format!(
        "Schedule: {}. Tool version {}. Total time {:.1} s.\n\n",
        manifest.schedule, manifest.tool_version, manifest.total_seconds
    ));
    md.push_str("| stage | max words | conv frozen | steps | loss (first 100) | loss (last 100) | seconds |\n");
    md.push_str("|---|---|---|---|---|---|---|\n");
    let mut series = Vec::new();
    let mut offset = 0.0;
    for s in &manifest.stages {
        md.push_str(&format!(
            "| {} | {} | {} | {} | {:.4} | {:.4} | {:.1} |\n",
            s.stage, s.max_words, s.freeze_conv, s.steps, s.first_window_loss, s.last_window_loss, s.seconds
        ));
        let pts = read_curve(&dir.join(&s.curve))?;
        let smooth = smooth_curve(&pts, 25);
        series.push(Series {
            name: format!("stage {}", s.stage),
            points: smooth.into_iter().map(|(x, y)| (x + offset, y)).collect(),
        });
        offset += s.steps as f64;
    }
    let mut reports = vec!["report.md".to_string(), "loss.svg".to_string()];
    write(
        &dir.join("loss.svg"),
        line_chart("Training CTC loss (moving average)", "optimizer step", "loss", &series, None),
    )?;
    let eval_path = dir.join("eval").join("eval.json");
    if eval_path.exists() {
        let text = fs::read_to_string(&eval_path).map_err(|e| Error::io(&eval_path, e))?;
        let report: EvalReport = serde_json::from_str(&text)?;
        md.push_str(&format!(
            "\n## Recognition ({}, {} samples)\n\nOverall CRR {:.2}, WRR {:.2}.\n\n",
            report.decoder, report.samples, report.crr, report.wrr
        ));
        md.push_str(&markdown_grid(&report));
        reports.push("eval/eval.json".into());
    }
    md.push_str("\nAll images are synthetic; no real handwriting or page-level detection is involved.\n");
    write(&dir.join("report.md"), &md)?;
    for r in reports {
        if !manifest.reports.contains(&r) {
            manifest.reports.push(r);
        }
    }
    write_atomic(&dir.join(MANIFEST_NAME), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(dir.join("report.md"))
}

fn smooth_curve(pts: &[(f64, f64)], window: usize) -> Vec<(f64, f64)> {
    let step = (pts.len() / 200).max(1);
    (0..pts.len())
        .step_by(step)
        .map(|i| {
            let lo = i.saturating_sub(window - 1);
            let w = &pts[lo..=i];
            (pts[i].0, w.iter().map(|p| p.1).sum::<f64>() / w.len() as f64)
        })
        .collect()
}

/// Word count by mode grid of CRR / WRR.
pub fn markdown_grid(report: &EvalReport) -> String {
    let mut modes: Vec<AugmentKind> = report.buckets.iter().map(|b| b.mode).collect();
    modes.sort();
    modes.dedup();
    let mut out = String::from("| words |");
    for m in &modes {
        out.push_str(&format!(" {l} CRR | {l} WRR |", l = mode_label(*m)));
    }
    out.push_str("\n|---|");
    out.push_str(&"---|---|".repeat(modes.len()));
    out.push('\n');
    let mut counts: Vec<usize> = report.buckets.iter().map(|b| b.words).collect();
    counts.sort();
    counts.dedup();
    for w in counts {
        out.push_str(&format!("| {w} |"));
        for m in &modes {
            match report.bucket(w, *m) {
                Some(b) => out.push_str(&format!(" {:.2} | {:.2} |", b.crr, b.wrr)),
                None => out.push_str(" | |"),
            }
        }
        out.push('\n');
    }
    out
}
