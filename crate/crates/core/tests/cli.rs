//! Command-level behaviour: determinism, manifests, exit codes.

use std::fs;
use std::path::Path;
use std::process::Command;

use scriptline::cli::commands::{cmd_detect_eval, cmd_detect_post, cmd_eval, cmd_gen, cmd_report, cmd_train, MapMode, RunManifest};
use scriptline::cli::config::{Decoder, RunConfig};
use scriptline::datagen::{read_manifest, Split};
use scriptline::dbpost::{raster_iou, write_polygons, TextPolygon};
use scriptline::imaging::GrayImage;
use scriptline::nn::load_checkpoint;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_scriptline"))
}

fn tiny_config(dir: &Path) -> (RunConfig, String) {
    let text = format!(
        "# tiny run\nalphabet_size = 4\nstages = 0, 1\nsteps = 3\nbatch_size = 2\nwidth_divisor = 8\n\
         eval_count = 2\neval_words = 1, 2\ngen_max_words = 2\noutput_dir = {}\n",
        dir.display()
    );
    (RunConfig::parse(&text).unwrap(), text)
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn gen_is_deterministic_and_counts_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        gen_max_words: 1,
        ..RunConfig::default()
    };
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    cmd_gen(&cfg, 100, Split::Train, &a, false).unwrap();
    cmd_gen(&cfg, 100, Split::Train, &b, false).unwrap();
    assert_eq!(dir_bytes(&a), dir_bytes(&b));
    let rows = read_manifest(&a.join("manifest.jsonl")).unwrap();
    assert_eq!(rows.len(), 100);
    assert!(rows.iter().all(|r| r.words == 1));
    let img = GrayImage::load_pgm(a.join(&rows[0].image)).unwrap();
    assert_eq!(img.height(), 32);
}

#[test]
fn gen_refuses_nonempty_dir_without_force() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = RunConfig::default();
    cmd_gen(&cfg, 3, Split::Train, tmp.path(), false).unwrap();
    assert!(cmd_gen(&cfg, 3, Split::Train, tmp.path(), false).is_err());
    let rows = cmd_gen(&cfg, 2, Split::Train, tmp.path(), true).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(fs::read_dir(tmp.path().join("images")).unwrap().count(), 2);
}

#[test]
fn train_and_test_manifests_share_no_transcript() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        alphabet_size: 6,
        gen_max_words: 2,
        ..RunConfig::default()
    };
    let train = cmd_gen(&cfg, 300, Split::Train, &tmp.path().join("train"), false).unwrap();
    let test = cmd_gen(&cfg, 300, Split::Test, &tmp.path().join("test"), false).unwrap();
    let seen: std::collections::HashSet<_> = train.iter().map(|r| r.transcript.as_str().to_string()).collect();
    assert!(test.iter().all(|r| !seen.contains(r.transcript.as_str())));
}

#[test]
fn train_is_deterministic_and_manifest_complete() {
    let tmp = tempfile::tempdir().unwrap();
    let mut runs = Vec::new();
    for name in ["a", "b"] {
        let (cfg, text) = tiny_config(&tmp.path().join(name));
        let manifest = cmd_train(&cfg, &text, None, |_| {}).unwrap();
        let dir = tmp.path().join(name);
        for a in manifest.artifacts() {
            assert!(dir.join(&a).exists(), "{a}");
        }
        assert_eq!(fs::read_to_string(dir.join("config.txt")).unwrap(), text);
        assert_eq!(manifest.stages.len(), 2);
        assert!(!dir.join(".lock").exists());
        runs.push(dir);
    }
    for f in ["loss_stage0.csv", "loss_stage1.csv", "stage0.ckpt", "stage1.ckpt"] {
        assert_eq!(fs::read(runs[0].join(f)).unwrap(), fs::read(runs[1].join(f)).unwrap(), "{f}");
    }
    let (m, _) = load_checkpoint(&runs[0].join("stage1.ckpt")).unwrap();
    assert!(m.is_frozen("conv1") && m.is_frozen("bn3") && !m.is_frozen("bilstm2"));
    assert_eq!(m.max_words(), 2);
}

#[test]
fn resume_continues_after_checkpoint_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let (cfg, text) = tiny_config(&tmp.path().join("first"));
    let cfg = RunConfig {
        stages: vec![0, 1, 2],
        ..cfg
    };
    cmd_train(&RunConfig { stages: vec![0, 1], ..cfg.clone() }, &text, None, |_| {}).unwrap();
    let resumed = RunConfig {
        output_dir: tmp.path().join("second"),
        ..cfg
    };
    let manifest = cmd_train(&resumed, &text, Some(&tmp.path().join("first/stage1.ckpt")), |_| {}).unwrap();
    assert_eq!(manifest.stages.iter().map(|s| s.stage).collect::<Vec<_>>(), vec![2]);
    let (m, _) = load_checkpoint(&tmp.path().join("second/stage2.ckpt")).unwrap();
    assert!(m.frozen().contains("conv1"));
    assert_eq!(m.stage(), 2);

    let other = RunConfig {
        alphabet_size: 5,
        output_dir: tmp.path().join("third"),
        ..resumed
    };
    let err = cmd_train(&other, &text, Some(&tmp.path().join("first/stage1.ckpt")), |_| {}).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn eval_writes_reports_and_rejects_bad_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let (cfg, text) = tiny_config(&tmp.path().join("run"));
    cmd_train(&cfg, &text, None, |_| {}).unwrap();
    let ckpt = tmp.path().join("run/stage1.ckpt");
    let out = tmp.path().join("run/eval");
    let report = cmd_eval(&cfg, &ckpt, None, Decoder::Greedy, 1, &out).unwrap();
    assert_eq!(report.samples, 2 * 2 * 3);
    for f in ["eval.json", "eval.csv", "eval.svg"] {
        assert!(out.join(f).exists());
    }
    assert!(fs::read_to_string(out.join("eval.svg")).unwrap().contains("<polyline"));

    // dataset path
    let data = tmp.path().join("data");
    cmd_gen(&cfg, 4, Split::Test, &data, false).unwrap();
    let r = cmd_eval(&cfg, &ckpt, Some(&data), Decoder::Beam, 3, &tmp.path().join("e2")).unwrap();
    assert_eq!(r.samples, 4);

    // empty dataset
    let empty = tmp.path().join("empty");
    fs::create_dir_all(&empty).unwrap();
    fs::write(empty.join("manifest.jsonl"), "").unwrap();
    assert!(cmd_eval(&cfg, &ckpt, Some(&empty), Decoder::Greedy, 1, &tmp.path().join("e3")).is_err());

    // alphabet mismatch
    let wide = RunConfig {
        alphabet_size: 9,
        ..cfg.clone()
    };
    let err = cmd_eval(&wide, &ckpt, None, Decoder::Greedy, 1, &tmp.path().join("e4")).unwrap_err();
    assert_eq!(err.exit_code(), 2);

    let report_path = cmd_report(&tmp.path().join("run")).unwrap();
    let md = fs::read_to_string(report_path).unwrap();
    assert!(md.contains("| stage |") && md.contains("Solid CRR"));
    let manifest = RunManifest::load(&tmp.path().join("run")).unwrap();
    for a in manifest.artifacts() {
        assert!(tmp.path().join("run").join(&a).exists(), "{a}");
    }
}

fn save_map(path: &Path, map: &GrayImage) {
    // maps are stored bright-high
    let inv = GrayImage::from_vec(map.width(), map.height(), map.data().iter().map(|v| 1.0 - v).collect()).unwrap();
    inv.save_pgm(path).unwrap();
}

#[test]
fn detect_post_rectangle_blank_and_approx() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = RunConfig::default();
    let rect = GrayImage::from_fn(64, 32, |x, y| if (17..47).contains(&x) && (12..20).contains(&y) { 1.0 } else { 0.0 });
    let prob = tmp.path().join("prob.pgm");
    save_map(&prob, &rect);
    let out = tmp.path().join("polys.jsonl");
    let polys = cmd_detect_post(&cfg, &prob, None, MapMode::Prob, &out).unwrap();
    assert_eq!(polys.len(), 1);
    let d = 240.0 * 1.5 / 76.0;
    let want = TextPolygon::rect(17.0 - d, 12.0 - d, 47.0 + d, 20.0 + d, 1.0).unwrap();
    assert!(raster_iou(&polys[0], &want) >= 0.9);

    let blank = tmp.path().join("blank.pgm");
    save_map(&blank, &GrayImage::new(40, 20, 0.0));
    let none = cmd_detect_post(&cfg, &blank, None, MapMode::Prob, &out).unwrap();
    assert!(none.is_empty());
    assert_eq!(fs::read_to_string(&out).unwrap(), "");

    let err = cmd_detect_post(&cfg, &prob, None, MapMode::Approx, &out).unwrap_err();
    assert!(err.to_string().contains("threshold map"));
    assert_eq!(err.exit_code(), 1);

    // P == T gives a constant 0.5 soft map: one component over the whole raster
    let half = tmp.path().join("half.pgm");
    save_map(&half, &GrayImage::new(40, 20, 0.4));
    let a = cmd_detect_post(&cfg, &half, Some(&half), MapMode::Approx, &out).unwrap();
    let b = cmd_detect_post(&cfg, &half, Some(&half), MapMode::Approx, &out).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 1);
    assert!((a[0].score() - 0.5).abs() < 1e-12);
    assert!(a[0].area() >= 40.0 * 20.0);
}

#[test]
fn detect_eval_fixture_and_threshold() {
    let tmp = tempfile::tempdir().unwrap();
    let r = |a, b, c, d| TextPolygon::rect(a, b, c, d, 1.0).unwrap();
    let gt = vec![r(0.0, 0.0, 10.0, 10.0), r(0.0, 30.0, 20.0, 36.0)];
    let pred = vec![r(0.0, 0.0, 10.0, 6.0), r(50.0, 50.0, 55.0, 55.0), r(0.0, 0.0, 10.0, 9.0)];
    let (g, p) = (tmp.path().join("gt.jsonl"), tmp.path().join("pred.jsonl"));
    write_polygons(&g, &gt).unwrap();
    write_polygons(&p, &pred).unwrap();
    let s = cmd_detect_eval(&g, &p, 0.5, Some(tmp.path())).unwrap();
    assert!((s.precision - 100.0 / 3.0).abs() < 1e-9);
    assert!((s.recall - 50.0).abs() < 1e-9);
    assert!((s.f_measure - 40.0).abs() < 1e-9);
    assert_eq!(fs::read_to_string(tmp.path().join("detect.csv")).unwrap(), "Precision,Recall,F-Measure\n33.33,50.00,40.00\n");
    let same = cmd_detect_eval(&g, &g, 0.5, None).unwrap();
    assert_eq!((same.precision, same.recall, same.f_measure), (100.0, 100.0, 100.0));
    // IoU is rasterized at pixel centres, so shift by whole pixels
    write_polygons(&p, &[r(1.0, 0.0, 11.0, 10.0), r(1.0, 30.0, 21.0, 36.0)]).unwrap();
    let strict = cmd_detect_eval(&g, &p, 0.99, None).unwrap();
    assert_eq!((strict.precision, strict.recall, strict.f_measure), (0.0, 0.0, 0.0));

    fs::write(&p, "{\"points\": [[0,0],[1,0],[1,1],[0,1]], \"score\": 1}\nnot json\n").unwrap();
    let err = cmd_detect_eval(&g, &p, 0.5, None).unwrap_err();
    assert!(err.to_string().contains(":2:"), "{err}");
}

#[test]
fn binary_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.cfg");
    fs::write(&bad, "no_such_key = 1\n").unwrap();
    let st = bin().args(["train", "--config"]).arg(&bad).status().unwrap();
    assert_eq!(st.code(), Some(1));
    let st = bin().arg("frobnicate").output().unwrap();
    assert_eq!(st.status.code(), Some(1));

    let missing = bin()
        .args(["eval", "--checkpoint"])
        .arg(tmp.path().join("none.ckpt"))
        .status()
        .unwrap();
    assert_eq!(missing.code(), Some(2));

    let out = bin().args(["gradcheck", "--scope", "dense", "--seed", "3"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.contains("dense") && table.contains("pass"));
    let again = bin().args(["gradcheck", "--scope", "dense", "--seed", "3"]).output().unwrap();
    assert_eq!(String::from_utf8(again.stdout).unwrap(), table);

    let cfg = tmp.path().join("gen.cfg");
    fs::write(&cfg, "alphabet_size = 5\n").unwrap();
    let out = tmp.path().join("ds");
    let st = bin()
        .args(["gen", "--count", "5", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(0));
    assert_eq!(read_manifest(&out.join("manifest.jsonl")).unwrap().len(), 5);
}

#[test]
fn output_root_override_applies_to_relative_dirs() {
    let tmp = tempfile::tempdir().unwrap();
    let st = bin()
        .env("SCRIPTLINE_OUT", tmp.path())
        .args(["gen", "--count", "2", "--out", "rel/ds"])
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(0));
    assert!(tmp.path().join("rel/ds/manifest.jsonl").exists());
}
