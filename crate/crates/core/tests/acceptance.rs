//! Acceptance criteria, one pass/fail line each.
//!
//! Runs as a plain binary (no libtest harness) so every line is printed.
//! `ACCEPTANCE_ONLY=1,7,8` restricts the run to the listed criteria.
//! Failures are reported and the run still exits 0 unless
//! `ACCEPTANCE_STRICT` is set.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scriptline::cli::commands::{cmd_detect_eval, cmd_eval, cmd_gen, cmd_train};
use scriptline::cli::config::{Decoder, RunConfig, Schedule};
use scriptline::cli::train::{model_spec, plan, score_specs, train_phase};
use scriptline::ctc::{beam_decode, ctc_loss, LogProbSeq};
use scriptline::datagen::{evaluation_set, AugmentKind, GlyphAtlas, Split};
use scriptline::dbpost::{
    approx_binary_map, box_formation, db_loss_observed, make_targets, raster_iou, write_polygons, DbParams,
    LossTerm, TextPolygon,
};
use scriptline::gradcheck::{run_scope, TOLERANCE};
use scriptline::imaging::{BinaryImage, GrayImage};
use scriptline::metrics::{crr, detection_prf, ScoredSample, Transcript};
use scriptline::nn::{load_checkpoint, Adam, Model};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

// ---------------------------------------------------------------- oracles

fn collapse(path: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &c in path {
        if Some(c) != prev && c != blank {
            out.push(c);
        }
        prev = Some(c);
    }
    out
}

/// Log mass of every collapse class, by enumerating all `C^T` paths.
fn class_masses(lp: &[f64], t_len: usize, classes: usize) -> BTreeMap<Vec<usize>, f64> {
    let mut masses: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
    let total = classes.pow(t_len as u32);
    let mut path = vec![0; t_len];
    for mut code in 0..total {
        let mut logp = 0.0;
        for (t, slot) in path.iter_mut().enumerate() {
            *slot = code % classes;
            code /= classes;
            logp += lp[t * classes + *slot];
        }
        *masses.entry(collapse(&path, classes - 1)).or_insert(0.0) += logp.exp();
    }
    masses.into_iter().map(|(k, v)| (k, v.ln())).collect()
}

fn random_lp(rng: &mut ChaCha8Rng, t_len: usize, classes: usize) -> LogProbSeq {
    let logits: Vec<f64> = (0..t_len * classes).map(|_| rng.gen_range(-2.0..2.0)).collect();
    LogProbSeq::from_logits(t_len, classes, &logits).unwrap()
}

// ---------------------------------------------------------------- criteria

fn ctc_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut worst_loss, mut worst_grad, mut done) = (0.0f64, 0.0f64, 0);
    while done < 500 {
        let t_len = rng.gen_range(1..=6);
        let classes = rng.gen_range(2..=4);
        let n = rng.gen_range(0..=3);
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes - 1)).collect();
        let lp = random_lp(&mut rng, t_len, classes);
        let (loss, grad) = match ctc_loss(&lp, &labels) {
            Ok(v) => v,
            Err(_) => continue, // too few frames for these labels
        };
        let masses = class_masses(lp.data(), t_len, classes);
        let want = -masses.get(&labels).copied().unwrap_or(f64::NEG_INFINITY);
        worst_loss = worst_loss.max((loss - want).abs());
        let h = 1e-5;
        for i in 0..lp.data().len() {
            let shifted = |d: f64| {
                let mut v = lp.data().to_vec();
                v[i] += d;
                ctc_loss(&LogProbSeq::new(t_len, classes, v).unwrap(), &labels).unwrap().0
            };
            let numeric = (shifted(h) - shifted(-h)) / (2.0 * h);
            let rel = (grad[i] - numeric).abs() / grad[i].abs().max(numeric.abs()).max(1e-3);
            worst_grad = worst_grad.max(rel);
        }
        done += 1;
    }
    outcome(
        worst_loss < 1e-10 && worst_grad < 1e-6,
        format!("500 instances, max |loss - oracle| {worst_loss:.2e}, max grad rel. error {worst_grad:.2e}"),
    )
}

fn gradient_suite() -> Outcome {
    let results = match run_scope("all", &[1, 2, 3, 4, 5]) {
        Ok(r) => r,
        Err(e) => return outcome(false, e.to_string()),
    };
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    for r in &results {
        let w = worst.entry(r.name.as_str()).or_insert(0.0);
        *w = w.max(r.max_rel_err);
    }
    let failing: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    let (name, err) = worst.iter().max_by(|a, b| a.1.total_cmp(b.1)).map(|(n, e)| (*n, *e)).unwrap();
    outcome(
        failing.is_empty() && err < TOLERANCE,
        format!("{} checks x 5 seeds, worst {name} at {err:.2e}{}", worst.len(), if failing.is_empty() { String::new() } else { format!(", failing: {failing:?}") }),
    )
}

fn beam_optimality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (mut wrong_class, mut non_monotone, mut worst_mass) = (0, 0, 0.0f64);
    for _ in 0..200 {
        let t_len = rng.gen_range(1..=5);
        let classes = rng.gen_range(2..=4);
        let lp = random_lp(&mut rng, t_len, classes);
        let masses = class_masses(lp.data(), t_len, classes);
        // heaviest class; ties go to the lexicographically smaller prefix
        let (best, best_mass) = masses
            .iter()
            .fold(None::<(&Vec<usize>, f64)>, |acc, (k, &v)| match acc {
                Some((_, m)) if m >= v => acc,
                _ => Some((k, v)),
            })
            .unwrap();
        // every collapse class of length <= T fits
        let full: usize = (0..=t_len).map(|l| (classes - 1).pow(l as u32)).sum();
        let (got, mass) = beam_decode(&lp, full).unwrap();
        if &got != best {
            wrong_class += 1;
        }
        worst_mass = worst_mass.max((mass - best_mass).abs());
        let mut prev = f64::NEG_INFINITY;
        for w in 1..=full {
            let s = beam_decode(&lp, w).unwrap().1;
            if s < prev - 1e-12 {
                non_monotone += 1;
                break;
            }
            prev = s;
        }
    }
    outcome(
        wrong_class == 0 && non_monotone == 0 && worst_mass < 1e-9,
        format!("200 instances: {wrong_class} wrong class, {non_monotone} non-monotone, max |log mass - oracle| {worst_mass:.1e}"),
    )
}

fn toy_config(dir: &Path) -> String {
    format!(
        "atlas_seed = 42\nalphabet_size = 10\nseed = 1\nstages = 0\nsteps = 2000\nbatch_size = 8\nwidth_divisor = 4\n\
         eval_words = 1\neval_count = 500\noutput_dir = {}\n",
        dir.display()
    )
}

fn toy_recognition(dir: &Path) -> Outcome {
    let text = toy_config(dir);
    let cfg = RunConfig::parse(&text).unwrap();
    let t0 = Instant::now();
    if let Err(e) = cmd_train(&cfg, &text, None, |_| {}) {
        return outcome(false, e.to_string());
    }
    let report = match cmd_eval(&cfg, &dir.join("stage0.ckpt"), None, Decoder::Greedy, 1, &dir.join("eval")) {
        Ok(r) => r,
        Err(e) => return outcome(false, e.to_string()),
    };
    let solid = report.bucket(1, AugmentKind::None).expect("solid bucket");
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        solid.crr >= 95.0 && solid.wrr >= 80.0 && secs <= 900.0 && solid.samples == 500,
        format!("500 held-out 1-word lines: CRR {:.2}, WRR {:.2} in {secs:.0} s", solid.crr, solid.wrr),
    )
}

/// CRR pooled over every sample of each word count.
fn pooled_crr(samples: &[ScoredSample]) -> BTreeMap<usize, f64> {
    let mut groups: BTreeMap<usize, (Vec<Transcript>, Vec<Transcript>)> = BTreeMap::new();
    for s in samples {
        let g = groups.entry(s.words).or_default();
        g.0.push(s.reference.clone());
        g.1.push(s.hypothesis.clone());
    }
    groups.into_iter().map(|(w, (r, h))| (w, crr(&r, &h).unwrap())).collect()
}

fn mode_crr(samples: &[ScoredSample], words: usize, mode: AugmentKind) -> f64 {
    let (r, h): (Vec<_>, Vec<_>) = samples
        .iter()
        .filter(|s| s.words == words && s.mode == mode)
        .map(|s| (s.reference.clone(), s.hypothesis.clone()))
        .unzip();
    crr(&r, &h).unwrap()
}

const GRID_MODES: [AugmentKind; 3] = [AugmentKind::None, AugmentKind::Salt, AugmentKind::Bold];

fn eval_grid(model: &mut Model, atlas: &GlyphAtlas, cfg: &RunConfig, words: &[usize], count: usize) -> Vec<ScoredSample> {
    let mut specs = Vec::new();
    for &w in words {
        specs.extend(evaluation_set(cfg.alphabet_size, w, count, &GRID_MODES, cfg.eval_seed + w as u64).unwrap());
    }
    score_specs(model, atlas, &specs, cfg.word_spacing, Decoder::Greedy, 1).unwrap()
}

fn length_noise_trend(toy_dir: &Path, dir: &Path) -> Outcome {
    let ckpt = toy_dir.join("stage0.ckpt");
    if !ckpt.exists() {
        return outcome(false, "needs the criterion 4 checkpoint".into());
    }
    let text = format!(
        "atlas_seed = 42\nalphabet_size = 10\nseed = 1\nstages = 0, 1, 2, 3\nsteps = 2000, 200, 200, 200\n\
         batch_size = 8\nwidth_divisor = 4\noutput_dir = {}\n",
        dir.display()
    );
    let cfg = RunConfig::parse(&text).unwrap();
    if let Err(e) = cmd_train(&cfg, &text, Some(&ckpt), |_| {}) {
        return outcome(false, e.to_string());
    }
    let (mut model, _) = load_checkpoint(&dir.join("stage3.ckpt")).unwrap();
    let atlas = GlyphAtlas::build(cfg.atlas_seed, cfg.alphabet_size).unwrap();
    let samples = eval_grid(&mut model, &atlas, &cfg, &[1, 4, 6], 100);
    let pooled = pooled_crr(&samples);
    let lengths = pooled[&1] > pooled[&4] && pooled[&4] > pooled[&6];
    let modes: Vec<(usize, f64, f64)> = [1, 4, 6]
        .iter()
        .map(|&w| (w, mode_crr(&samples, w, AugmentKind::None), mode_crr(&samples, w, AugmentKind::Salt)))
        .collect();
    let solid_over_salt = modes.iter().all(|m| m.1 > m.2);
    let fmt: Vec<String> = modes.iter().map(|(w, s, p)| format!("{w}w {s:.2}/{p:.2}")).collect();
    outcome(
        lengths && solid_over_salt,
        format!(
            "pooled CRR 1w {:.2}, 4w {:.2}, 6w {:.2} (strictly decreasing: {lengths}); Solid/Salted {} (Solid > Salted: {solid_over_salt})",
            pooled[&1],
            pooled[&4],
            pooled[&6],
            fmt.join(", ")
        ),
    )
}

fn six_word_crr(cfg: &RunConfig, atlas: &GlyphAtlas) -> f64 {
    let mut model = Model::new(model_spec(cfg), cfg.seed).unwrap();
    let mut adam = Adam::new(cfg.adam);
    for phase in plan(cfg) {
        train_phase(&mut model, &mut adam, atlas, cfg, &phase, |_, _| {}).unwrap();
    }
    pooled_crr(&eval_grid(&mut model, atlas, cfg, &[6], 50))[&6]
}

fn curriculum_benefit() -> Outcome {
    let mut rows = Vec::new();
    let mut pass = true;
    for seed in [1, 2, 3] {
        let base = RunConfig {
            alphabet_size: 10,
            seed,
            stages: vec![0, 1, 2, 3],
            steps: vec![600, 200, 200, 200],
            ..RunConfig::default()
        };
        let atlas = GlyphAtlas::build(base.atlas_seed, base.alphabet_size).unwrap();
        let staged = six_word_crr(&base, &atlas);
        let direct = six_word_crr(
            &RunConfig {
                schedule: Schedule::Direct,
                ..base
            },
            &atlas,
        );
        pass &= direct < staged;
        rows.push(format!("seed {seed}: curriculum {staged:.2} vs direct {direct:.2}"));
    }
    outcome(pass, format!("6-word pooled CRR, 1200 steps each: {}", rows.join("; ")))
}

fn box_fixture() -> Outcome {
    let map = GrayImage::from_fn(64, 32, |x, y| if (17..47).contains(&x) && (12..20).contains(&y) { 1.0 } else { 0.0 });
    let params = DbParams::default();
    let polys = box_formation(&map, &params).unwrap();
    let d = 30.0 * 8.0 * params.unclip_ratio / (2.0 * (30.0 + 8.0));
    let want = TextPolygon::rect(17.0 - d, 12.0 - d, 47.0 + d, 20.0 + d, 1.0).unwrap();
    let iou = polys.first().map_or(0.0, |p| raster_iou(p, &want));
    let blank = box_formation(&GrayImage::new(64, 32, 0.0), &params).unwrap();
    outcome(
        polys.len() == 1 && iou >= 0.9 && blank.is_empty(),
        format!("{} polygon(s), IoU {iou:.4} vs unclipped rectangle; blank map -> {} polygons", polys.len(), blank.len()),
    )
}

fn detection_fixture(dir: &Path) -> Outcome {
    let r = |a, b, c, d| TextPolygon::rect(a, b, c, d, 1.0).unwrap();
    let gt = vec![r(0.0, 0.0, 10.0, 10.0), r(0.0, 30.0, 20.0, 36.0)];
    let pred = vec![r(0.0, 0.0, 10.0, 6.0), r(50.0, 50.0, 55.0, 55.0), r(0.0, 0.0, 10.0, 9.0)];
    let (g, p) = (dir.join("gt.jsonl"), dir.join("pred.jsonl"));
    write_polygons(&g, &gt).unwrap();
    write_polygons(&p, &pred).unwrap();
    let s = cmd_detect_eval(&g, &p, 0.5, None).unwrap();
    let same = detection_prf(&gt, &gt, 0.5).unwrap();
    let exact = (s.precision - 100.0 / 3.0).abs() < 1e-9 && (s.recall - 50.0).abs() < 1e-9 && (s.f_measure - 40.0).abs() < 1e-9;
    let perfect = same.precision == 100.0 && same.recall == 100.0 && same.f_measure == 100.0;
    outcome(
        exact && perfect,
        format!(
            "P {:.4} R {:.4} F {:.4}; pred == gt -> {}/{}/{}",
            s.precision, s.recall, s.f_measure, same.precision, same.recall, same.f_measure
        ),
    )
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn determinism(dir: &Path) -> Outcome {
    let cfg = RunConfig {
        alphabet_size: 10,
        gen_max_words: 3,
        ..RunConfig::default()
    };
    let (a, b) = (dir.join("gen_a"), dir.join("gen_b"));
    cmd_gen(&cfg, 50, Split::Train, &a, false).unwrap();
    cmd_gen(&cfg, 50, Split::Train, &b, false).unwrap();
    let data_same = tree(&a) == tree(&b);
    let mut runs = Vec::new();
    for name in ["train_a", "train_b"] {
        let text = format!(
            "alphabet_size = 10\nstages = 0, 1\nsteps = 20\nbatch_size = 4\nwidth_divisor = 4\noutput_dir = {}\n",
            dir.join(name).display()
        );
        let cfg = RunConfig::parse(&text).unwrap();
        cmd_train(&cfg, &text, None, |_| {}).unwrap();
        runs.push(dir.join(name));
    }
    let files = ["loss_stage0.csv", "loss_stage1.csv", "stage0.ckpt", "stage1.ckpt"];
    let train_same = files
        .iter()
        .all(|f| std::fs::read(runs[0].join(f)).unwrap() == std::fs::read(runs[1].join(f)).unwrap());
    outcome(
        data_same && train_same,
        format!("datasets identical: {data_same}; curves and checkpoints identical: {train_same}"),
    )
}

fn supervision_sharing() -> Outcome {
    let (w, h) = (48, 24);
    let gt = vec![
        TextPolygon::rect(4.0, 4.0, 30.0, 12.0, 1.0).unwrap(),
        TextPolygon::rect(10.0, 15.0, 44.0, 21.0, 1.0).unwrap(),
    ];
    let p = DbParams::default();
    let targets = make_targets(&gt, w, h, p.shrink_ratio, p.t_min, p.t_max).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut rand_map = || GrayImage::from_fn(w, h, |_, _| rng.gen_range(0.01..0.99));
    let (prob, thresh) = (rand_map(), rand_map());
    let bin = approx_binary_map(&prob, &thresh, p.k).unwrap();
    let mut seen: Vec<(LossTerm, BinaryImage)> = Vec::new();
    let base = db_loss_observed(&prob, &thresh, &bin, &targets, p.alpha, 0.0, p.neg_ratio, |t, img| {
        seen.push((t, img.clone()))
    })
    .unwrap();
    let shared = seen.len() == 2 && seen[0].0 == LossTerm::Probability && seen[1].0 == LossTerm::Binary && seen[0].1 == seen[1].1 && seen[0].1 == targets.prob_target;
    let mut max_dev = 0.0f64;
    for _ in 0..20 {
        // arbitrary threshold maps, including out-of-range values
        let perturbed = GrayImage::from_fn(w, h, |_, _| rng.gen_range(-5.0..5.0));
        let l = db_loss_observed(&prob, &perturbed, &bin, &targets, p.alpha, 0.0, p.neg_ratio, |_, _| {}).unwrap();
        max_dev = max_dev.max((l.total - base.total).abs());
    }
    outcome(
        shared && max_dev == 0.0,
        format!("Ls and Lb read the same raster: {shared}; beta = 0 total deviation over 20 perturbed T: {max_dev:e}"),
    )
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let want = |n: usize| only.as_ref().is_none_or(|o| o.contains(&n));
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let toy = root.join("toy");
    let criteria: Vec<(usize, &str, Box<dyn Fn() -> Outcome>)> = vec![
        (1, "CTC exactness", Box::new(ctc_exactness)),
        (2, "gradient suite", Box::new(gradient_suite)),
        (3, "beam-search optimality", Box::new(beam_optimality)),
        (4, "toy recognition quality", Box::new(|| toy_recognition(&toy))),
        (5, "length and noise trend", Box::new(|| length_noise_trend(&root.join("toy"), &root.join("trend")))),
        (6, "curriculum benefit", Box::new(curriculum_benefit)),
        (7, "box formation fixture", Box::new(box_fixture)),
        (8, "detection metric fixture", Box::new(|| detection_fixture(root))),
        (9, "determinism", Box::new(|| determinism(root))),
        (10, "DB supervision sharing", Box::new(supervision_sharing)),
    ];
    let limits: BTreeMap<usize, f64> = [(1, 30.0), (2, 120.0), (4, 900.0), (7, 1.0)].into_iter().collect();
    let mut failed = Vec::new();
    for (n, name, run) in criteria {
        if !want(n) {
            continue;
        }
        let t0 = Instant::now();
        let mut out = run();
        let secs = t0.elapsed().as_secs_f64();
        if let Some(&limit) = limits.get(&n) {
            if secs > limit {
                out.pass = false;
                out.detail.push_str(&format!(" [over the {limit:.0} s limit]"));
            }
        }
        println!(
            "criterion {n:>2} {:<26} {}  ({secs:.1} s) {}",
            name,
            if out.pass { "PASS" } else { "FAIL" },
            out.detail
        );
        if !out.pass {
            failed.push(n);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        if std::env::var_os("ACCEPTANCE_STRICT").is_some() {
            std::process::exit(1);
        }
    }
}
