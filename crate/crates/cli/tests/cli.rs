use std::fs;
use std::path::Path;
use std::process::Command;

use multires::nn::Family;
use multires_cli::config::{Seeds, KEYS};
use multires_cli::{run, RunConfig};

/// Runs the command line in-process; returns (status, stdout, stderr).
fn cli(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let mut full = vec!["multires"];
    full.extend_from_slice(args);
    let code = run(full, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TINY: &str = "\
# two small training scenes, one validation scene
train_seeds = 0,1
val_seeds = 5
scene_size = 96
max_iters = 4
batch_size = 2
patch_size = 64
checkpoint_every = 2
";

#[test]
fn config_parses_comments_and_overrides() {
    let c = RunConfig::parse("arch = mlp  # fused\n\nbase_lr = 0.05\nval_seeds = 3..6\noverlap = 40\n").unwrap();
    assert_eq!(c.arch, Family::Mlp);
    assert_eq!(c.train.base_lr, 0.05);
    assert_eq!(c.val_seeds, Seeds(vec![3, 4, 5]));
    assert_eq!(c.overlap, Some(40));
    assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
}

#[test]
fn config_errors_name_the_line_and_the_valid_keys() {
    let e = RunConfig::parse("arch = fcn\nlearning_rate = 0.1\n").unwrap_err().to_string();
    assert!(e.contains("line 2"), "{e}");
    for k in KEYS {
        assert!(e.contains(k), "{k} missing from: {e}");
    }
    for bad in ["arch = resnet", "downsampling = 8", "classes = 5", "batch_size = 0", "max_iters", "seed = -1"] {
        assert!(RunConfig::parse(bad).is_err(), "{bad}");
    }
}

#[test]
fn config_text_round_trips() {
    let mut c = RunConfig::parse(TINY).unwrap();
    c.train.momentum = 0.85;
    c.noise = 0.1 + 0.2;
    c.overlap = Some(90);
    assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
    assert_eq!(c.to_text().lines().count(), KEYS.len());
    assert_eq!("4,9".parse::<Seeds>().unwrap().to_string(), "4,9");
    assert_eq!("2..7".parse::<Seeds>().unwrap().to_string(), "2..7");
}

#[test]
fn exit_codes_follow_the_error_class() {
    let dir = tempfile::tempdir().unwrap();
    let (code, out, _) = cli(&["--help"]);
    assert_eq!(code, 0);
    assert!(out.contains("gradcheck"));
    assert_eq!(cli(&["--bogus", "analyze"]).0, 1);
    assert_eq!(cli(&["--arch", "resnet", "analyze"]).0, 1);
    assert_eq!(cli(&["frobnicate"]).0, 1);

    let bad = dir.path().join("bad.txt");
    fs::write(&bad, "colour = blue\n").unwrap();
    let (code, _, err) = cli(&["--config", p(&bad), "analyze"]);
    assert_eq!(code, 1);
    assert!(err.contains("unknown key"), "{err}");

    let missing = dir.path().join("missing.ckpt");
    let img = dir.path().join("img.mrst");
    assert_eq!(cli(&["--out", "x", "predict", "--model", p(&missing), "--image", p(&img)]).0, 2);
    let junk = dir.path().join("junk.mrst");
    fs::write(&junk, b"not a raster").unwrap();
    assert_eq!(cli(&["eval", "--pred", p(&junk), "--ref", p(&junk)]).0, 2);
    assert_eq!(cli(&["synth"]).0, 1, "synth without --out");
}

#[test]
fn failed_gradient_check_exits_with_three() {
    let (code, out, err) = cli(&["--arch", "fcn", "gradcheck", "--size", "32", "--coords", "10", "--tolerance", "1e-30"]);
    assert_eq!(code, 3, "{out}{err}");
}

#[test]
fn mlp_gradient_check_passes_on_a_small_input() {
    let (code, out, err) = cli(&["--arch", "mlp", "gradcheck", "--size", "32"]);
    assert_eq!(code, 0, "{out}{err}");
    assert!(out.contains("60 coordinates"), "{out}");
}

#[test]
fn analyze_reports_the_downsampling() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("fcn.csv");
    let (code, out, _) = cli(&["--arch", "fcn", "--out", p(&csv), "analyze"]);
    assert_eq!(code, 0);
    assert!(out.contains("total downsampling: 16"), "{out}");
    let csv = fs::read_to_string(&csv).unwrap();
    assert!(csv.starts_with("layer,kind,rf,stride"));
    assert!(!csv.lines().any(|l| l.starts_with("pool4,")));
}

#[test]
fn binary_exit_status() {
    let bin = env!("CARGO_BIN_EXE_multires");
    let ok = Command::new(bin).args(["--arch", "dilation", "analyze", "--size", "64"]).output().unwrap();
    assert_eq!(ok.status.code(), Some(0));
    let bad = Command::new(bin).args(["analyze", "--size", "many"]).output().unwrap();
    assert_eq!(bad.status.code(), Some(1));
    assert!(!bad.stderr.is_empty());
}

#[test]
fn identical_rasters_score_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.txt");
    fs::write(&cfg, TINY).unwrap();
    let data = dir.path().join("data");
    assert_eq!(cli(&["--config", p(&cfg), "--out", p(&data), "synth", "--preview"]).0, 0);
    let labels = data.join("val/scene_000005.labels.mrst");
    assert!(data.join("val/scene_000005.labels.png").exists());
    let csv = dir.path().join("eval.csv");
    let (code, out, _) = cli(&["--out", p(&csv), "eval", "--pred", p(&labels), "--ref", p(&labels), "--radius", "0"]);
    assert_eq!(code, 0);
    assert!(out.contains("overall accuracy: 1.000000"), "{out}");
    assert!(fs::read_to_string(&csv).unwrap().contains("overall_accuracy,,,1.000000"));
    let (code, _, err) = cli(&["eval", "--pred", p(&labels), p(&labels), "--ref", p(&labels)]);
    assert_eq!(code, 1, "{err}");
}

#[test]
fn train_predict_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.txt");
    fs::write(&cfg, TINY).unwrap();
    let (data, run_dir) = (dir.path().join("data"), dir.path().join("run"));
    assert_eq!(cli(&["--config", p(&cfg), "--out", p(&data), "synth"]).0, 0);
    let (code, out, err) = cli(&["--config", p(&cfg), "--out", p(&run_dir), "train", "--data", p(&data)]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("4 iterations"), "{out}");
    for f in ["model.ckpt", "model.mrst", "ckpt_000002.ckpt", "trace.csv", "config.txt"] {
        assert!(run_dir.join(f).exists(), "{f}");
    }
    let trace = fs::read_to_string(run_dir.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 5);

    let model = run_dir.join("model.ckpt");
    let image = data.join("val/scene_000005.image.mrst");
    let pred = dir.path().join("pred.mrst");
    let scores = dir.path().join("scores.mrst");
    let (code, _, err) = cli(&[
        "--out", p(&pred), "predict", "--model", p(&model), "--image", p(&image),
        "--tile-size", "64", "--scores", p(&scores),
    ]);
    assert_eq!(code, 0, "{err}");
    let s = multires::io::load_raster(&scores).unwrap();
    assert_eq!((s.c, s.h, s.w), (6, 96, 96));

    let reference = data.join("val/scene_000005.labels.mrst");
    let (_, direct, _) = cli(&["eval", "--pred", p(&pred), "--ref", p(&reference)]);
    let (code, via_model, _) = cli(&["--config", p(&cfg), "eval", "--model", p(&model), "--data", p(&data)]);
    assert_eq!(code, 0);
    assert_eq!(direct, via_model);

    let (code, _, err) = cli(&["--out", p(&pred), "predict", "--model", p(&model), "--image", p(&image), "--overlap", "3"]);
    assert_eq!(code, 1);
    assert!(err.contains("at least"), "{err}");
}

#[test]
fn resolved_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.txt");
    fs::write(&cfg, TINY).unwrap();
    let data = dir.path().join("data");
    assert_eq!(cli(&["--config", p(&cfg), "--out", p(&data), "synth"]).0, 0);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let args = ["--config", p(&cfg), "--seed", "3", "--arch", "skip", "--out", p(&a), "train", "--data", p(&data)];
    assert_eq!(cli(&args).0, 0);
    let resolved = a.join("config.txt");
    assert_eq!(cli(&["--config", p(&resolved), "--out", p(&b), "train", "--data", p(&data)]).0, 0);
    for f in ["trace.csv", "model.ckpt", "model.mrst", "config.txt"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert!(fs::read_to_string(&resolved).unwrap().contains("arch = skip"));
}

#[test]
fn resume_and_finetune_from_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.txt");
    fs::write(&cfg, TINY).unwrap();
    let data = dir.path().join("data");
    assert_eq!(cli(&["--config", p(&cfg), "--out", p(&data), "synth"]).0, 0);
    let (full, resumed) = (dir.path().join("full"), dir.path().join("resumed"));
    assert_eq!(cli(&["--config", p(&cfg), "--out", p(&full), "train", "--data", p(&data)]).0, 0);
    let half = full.join("ckpt_000002.ckpt");
    let (code, _, err) = cli(&["--config", p(&cfg), "--out", p(&resumed), "train", "--data", p(&data), "--resume", p(&half)]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(fs::read(full.join("model.mrst")).unwrap(), fs::read(resumed.join("model.mrst")).unwrap());

    let model = full.join("model.ckpt");
    let fine = dir.path().join("fine");
    let (code, _, err) = cli(&["--config", p(&cfg), "--arch", "mlp", "--out", p(&fine), "finetune", "--data", p(&data), "--from", p(&model)]);
    assert_eq!(code, 0, "{err}");
    let ck = multires::io::load_checkpoint(&fine.join("model.ckpt")).unwrap();
    assert_eq!(ck.meta["family"], "mlp");
    assert_eq!(multires_cli::graph_from_meta(&ck).unwrap().family(), Family::Mlp);

    let (code, _, err) = cli(&["--config", p(&cfg), "--arch", "mlp", "--out", p(&resumed), "train", "--data", p(&data), "--resume", p(&half)]);
    assert_eq!(code, 2, "fcn checkpoint resumed as mlp: {err}");
}
