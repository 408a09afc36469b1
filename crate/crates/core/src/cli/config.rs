//! Flat `key = value` run configuration.
//!
//! Lines starting with `#` are comments; unknown keys and out-of-range
//! values are rejected before any work starts.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::dbpost::DbParams;
use crate::error::{Error, Result};
use crate::nn::AdamConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    /// Stages in order with the conv block frozen after stage 0.
    Curriculum,
    /// One phase at the last stage's sentence length, nothing frozen,
    /// for the summed step budget.
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Decoder {
    Greedy,
    Beam,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub atlas_seed: u64,
    pub alphabet_size: usize,
    pub seed: u64,
    pub stages: Vec<usize>,
    pub steps: Vec<usize>,
    pub schedule: Schedule,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub grad_clip: f64,
    pub width_divisor: usize,
    pub augment_ratio: f64,
    pub word_spacing: usize,
    pub decoder: Decoder,
    pub beam_width: usize,
    #[serde(skip)]
    pub db: DbParams,
    pub iou_thresh: f64,
    pub output_dir: PathBuf,
    pub eval_seed: u64,
    pub eval_count: usize,
    pub eval_words: Vec<usize>,
    pub gen_max_words: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            atlas_seed: 42,
            alphabet_size: 28,
            seed: 1,
            stages: vec![0, 1, 2, 3],
            steps: vec![2000],
            schedule: Schedule::Curriculum,
            batch_size: 8,
            adam: AdamConfig::default(),
            grad_clip: 5.0,
            width_divisor: 4,
            augment_ratio: 0.30,
            word_spacing: crate::datagen::DEFAULT_WORD_SPACING,
            decoder: Decoder::Greedy,
            beam_width: 10,
            db: DbParams::default(),
            iou_thresh: 0.5,
            output_dir: PathBuf::from("runs/default"),
            eval_seed: 1_000_000,
            eval_count: 100,
            eval_words: vec![1, 2, 4, 6],
            gen_max_words: 1,
        }
    }
}

/// Keys accepted in a config file, with a one-line description each.
pub const KEYS: [(&str, &str); 34] = [
    ("atlas_seed", "seed of the procedural glyph atlas"),
    ("alphabet_size", "number of symbols, 2..=28"),
    ("seed", "model initialization and training stream seed"),
    ("stages", "comma-separated curriculum stages, strictly increasing"),
    ("steps", "optimizer steps per stage (one value, or one per stage)"),
    ("schedule", "curriculum | direct"),
    ("batch_size", "samples per optimizer step"),
    ("lr", "Adam learning rate"),
    ("beta1", "Adam first-moment decay"),
    ("beta2", "Adam second-moment decay"),
    ("eps", "Adam epsilon"),
    ("grad_clip", "global gradient-norm clip (0 disables)"),
    ("width_divisor", "divide every layer width of the reference stack (1 = full size)"),
    ("augment_ratio", "probability that a training sample is augmented"),
    ("word_spacing", "pixels between words"),
    ("decoder", "greedy | beam"),
    ("beam_width", "prefix beam width"),
    ("db_k", "approximate binarization steepness"),
    ("db_alpha", "weight of the probability-map loss"),
    ("db_beta", "weight of the threshold-map loss"),
    ("db_neg_ratio", "hard negatives per positive"),
    ("db_shrink_ratio", "shrink ratio r of the supervision polygons"),
    ("db_t_min", "threshold map lower bound"),
    ("db_t_max", "threshold map upper bound"),
    ("db_bin_thresh", "box formation binarization threshold"),
    ("db_box_score_thresh", "minimum mean map score of a box"),
    ("db_unclip_ratio", "outward offset ratio"),
    ("db_min_area", "minimum component area in pixels"),
    ("iou_thresh", "detection matching IoU threshold"),
    ("output_dir", "run directory (relative paths resolve against SCRIPTLINE_OUT when set)"),
    ("eval_seed", "seed of the held-out evaluation sets"),
    ("eval_count", "sentences per evaluation bucket"),
    ("eval_words", "comma-separated word counts evaluated"),
    ("gen_max_words", "max words per sample for the gen command"),
];

/// Environment variable overriding the root of relative output directories.
pub const OUTPUT_ROOT_ENV: &str = "SCRIPTLINE_OUT";

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',').map(|p| parse_num(key, p.trim())).collect()
}

fn check(cond: bool, key: &str, msg: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Config(format!("{key}: {msg}")))
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !seen.insert(k.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key {k}", i + 1)));
            }
            cfg.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {}", i + 1, e.to_string().trim_start_matches("config error: "))))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok((Self::parse(&text)?, text))
    }

    fn set(&mut self, k: &str, v: &str) -> Result<()> {
        match k {
            "atlas_seed" => self.atlas_seed = parse_num(k, v)?,
            "alphabet_size" => self.alphabet_size = parse_num(k, v)?,
            "seed" => self.seed = parse_num(k, v)?,
            "stages" => self.stages = parse_list(k, v)?,
            "steps" => self.steps = parse_list(k, v)?,
            "schedule" => {
                self.schedule = match v {
                    "curriculum" => Schedule::Curriculum,
                    "direct" => Schedule::Direct,
                    _ => return Err(Error::Config(format!("{k}: expected curriculum or direct"))),
                }
            }
            "batch_size" => self.batch_size = parse_num(k, v)?,
            "lr" => self.adam.lr = parse_num(k, v)?,
            "beta1" => self.adam.beta1 = parse_num(k, v)?,
            "beta2" => self.adam.beta2 = parse_num(k, v)?,
            "eps" => self.adam.eps = parse_num(k, v)?,
            "grad_clip" => self.grad_clip = parse_num(k, v)?,
            "width_divisor" => self.width_divisor = parse_num(k, v)?,
            "augment_ratio" => self.augment_ratio = parse_num(k, v)?,
            "word_spacing" => self.word_spacing = parse_num(k, v)?,
            "decoder" => {
                self.decoder = match v {
                    "greedy" => Decoder::Greedy,
                    "beam" => Decoder::Beam,
                    _ => return Err(Error::Config(format!("{k}: expected greedy or beam"))),
                }
            }
            "beam_width" => self.beam_width = parse_num(k, v)?,
            "db_k" => self.db.k = parse_num(k, v)?,
            "db_alpha" => self.db.alpha = parse_num(k, v)?,
            "db_beta" => self.db.beta = parse_num(k, v)?,
            "db_neg_ratio" => self.db.neg_ratio = parse_num(k, v)?,
            "db_shrink_ratio" => self.db.shrink_ratio = parse_num(k, v)?,
            "db_t_min" => self.db.t_min = parse_num(k, v)?,
            "db_t_max" => self.db.t_max = parse_num(k, v)?,
            "db_bin_thresh" => self.db.bin_thresh = parse_num(k, v)?,
            "db_box_score_thresh" => self.db.box_score_thresh = parse_num(k, v)?,
            "db_unclip_ratio" => self.db.unclip_ratio = parse_num(k, v)?,
            "db_min_area" => self.db.min_area = parse_num(k, v)?,
            "iou_thresh" => self.iou_thresh = parse_num(k, v)?,
            "output_dir" => self.output_dir = PathBuf::from(v),
            "eval_seed" => self.eval_seed = parse_num(k, v)?,
            "eval_count" => self.eval_count = parse_num(k, v)?,
            "eval_words" => self.eval_words = parse_list(k, v)?,
            "gen_max_words" => self.gen_max_words = parse_num(k, v)?,
            _ => {
                let valid: Vec<&str> = KEYS.iter().map(|(k, _)| *k).collect();
                return Err(Error::Config(format!("unknown key {k:?}; valid keys: {}", valid.join(", "))));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        check((2..=28).contains(&self.alphabet_size), "alphabet_size", "must be in 2..=28")?;
        check(!self.stages.is_empty(), "stages", "must list at least one stage")?;
        check(self.stages.windows(2).all(|w| w[0] < w[1]), "stages", "must be strictly increasing")?;
        check(
            self.steps.len() == 1 || self.steps.len() == self.stages.len(),
            "steps",
            "give one value or one per stage",
        )?;
        check(self.batch_size >= 1, "batch_size", "must be at least 1")?;
        check(self.adam.lr > 0.0 && self.adam.lr.is_finite(), "lr", "must be positive")?;
        check((0.0..1.0).contains(&self.adam.beta1), "beta1", "must be in [0, 1)")?;
        check((0.0..1.0).contains(&self.adam.beta2), "beta2", "must be in [0, 1)")?;
        check(self.adam.eps > 0.0, "eps", "must be positive")?;
        check(self.grad_clip >= 0.0 && self.grad_clip.is_finite(), "grad_clip", "must be >= 0")?;
        check((1..=32).contains(&self.width_divisor), "width_divisor", "must be in 1..=32")?;
        check((0.0..=1.0).contains(&self.augment_ratio), "augment_ratio", "must be in [0, 1]")?;
        check(self.beam_width >= 1, "beam_width", "must be at least 1")?;
        check(self.db.k > 0.0, "db_k", "must be positive")?;
        check(self.db.alpha >= 0.0, "db_alpha", "must be >= 0")?;
        check(self.db.beta >= 0.0, "db_beta", "must be >= 0")?;
        check(self.db.neg_ratio > 0.0, "db_neg_ratio", "must be positive")?;
        check(
            self.db.shrink_ratio > 0.0 && self.db.shrink_ratio < 1.0,
            "db_shrink_ratio",
            "must be in (0, 1)",
        )?;
        check(
            0.0 <= self.db.t_min && self.db.t_min < self.db.t_max && self.db.t_max <= 1.0,
            "db_t_min",
            "need 0 <= t_min < t_max <= 1",
        )?;
        check((0.0..1.0).contains(&self.db.bin_thresh), "db_bin_thresh", "must be in [0, 1)")?;
        check(
            (0.0..=1.0).contains(&self.db.box_score_thresh),
            "db_box_score_thresh",
            "must be in [0, 1]",
        )?;
        check(self.db.unclip_ratio >= 0.0, "db_unclip_ratio", "must be >= 0")?;
        check(self.db.min_area >= 0.0, "db_min_area", "must be >= 0")?;
        check(self.iou_thresh > 0.0 && self.iou_thresh < 1.0, "iou_thresh", "must be in (0, 1)")?;
        check(self.eval_count >= 1, "eval_count", "must be at least 1")?;
        check(
            !self.eval_words.is_empty() && self.eval_words.iter().all(|&w| w >= 1),
            "eval_words",
            "must list word counts >= 1",
        )?;
        check(self.gen_max_words >= 1, "gen_max_words", "must be at least 1")?;
        Ok(())
    }

    /// Steps of the i-th listed stage.
    pub fn steps_for(&self, index: usize) -> usize {
        if self.steps.len() == 1 {
            self.steps[0]
        } else {
            self.steps[index]
        }
    }

    /// Output directory with the environment override applied to relative paths.
    pub fn resolved_output_dir(&self) -> PathBuf {
        resolve_output(&self.output_dir)
    }
}

pub fn resolve_output(path: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if path.is_relative() => PathBuf::from(root).join(path),
        _ => path.to_path_buf(),
    }
}
