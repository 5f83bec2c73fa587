use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn cvf(runs: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cvf"))
        .args(args)
        .env("CVF_RUNS_DIR", runs)
        .output()
        .expect("spawn cvf")
}

fn run_ok(runs: &Path, args: &[&str]) -> PathBuf {
    let out = cvf(runs, args);
    assert!(
        out.status.success(),
        "cvf {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    PathBuf::from(stdout.lines().last().expect("run dir on stdout").trim())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &[&str] = &[
    "--data.num-videos",
    "6",
    "--data.video-length",
    "8",
    "--ae.epochs",
    "2",
    "--ae.hidden",
    "16",
    "--model.hidden",
    "16",
    "--model.depth",
    "2",
    "--train.batch-size",
    "4",
    "--train.total-steps",
    "10",
    "--train.eval-every",
    "1",
    "--optim.warmup-steps",
    "2",
    "--sampler.horizon",
    "4",
];

fn with_small<'a>(head: &[&'a str]) -> Vec<&'a str> {
    head.iter().copied().chain(SMALL.iter().copied()).collect()
}

#[test]
fn pixel_pipeline_end_to_end() {
    let runs = tempfile::tempdir().unwrap();
    let r = runs.path();

    let data = run_ok(r, &with_small(&["gen-data"]));
    assert!(data.starts_with(r));
    assert!(data.join("config.txt").is_file());
    assert!(data.join("preview/frame_00.pgm").is_file());
    let corpus = data.join("corpus.cvf");

    let ae_dir = run_ok(r, &with_small(&["train-ae", "--corpus", s(&corpus)]));
    let ae = ae_dir.join("ae.cvf");
    assert!(ae.is_file());

    let train_dir = run_ok(r, &with_small(&["train", "--corpus", s(&corpus), "--ae", s(&ae)]));
    let (_, rows) = cvf::io::csv_log::read_csv(&train_dir.join("train.csv")).unwrap();
    assert_eq!(rows.len(), 10, "one row per training step");
    let ckpt = train_dir.join("checkpoint.cvf");

    let base_dir = run_ok(
        r,
        &with_small(&["train", "--corpus", s(&corpus), "--ae", s(&ae), "--train.model", "baseline"]),
    );
    let base = base_dir.join("checkpoint.cvf");

    let sample_dir = run_ok(
        r,
        &with_small(&["sample", "--checkpoint", s(&ckpt), "--corpus", s(&corpus), "--ae", s(&ae), "--rollouts", "2"]),
    );
    assert!(sample_dir.join("frames/frame_003.pgm").is_file());
    assert_eq!(cvf::io::csv_log::read_csv(&sample_dir.join("timing.csv")).unwrap().1.len(), 2);

    let eval_dir = run_ok(r, &with_small(&["evaluate", "--rollout", s(&sample_dir), "--truth", s(&corpus)]));
    assert_eq!(cvf::io::csv_log::read_csv(&eval_dir.join("metrics.csv")).unwrap().1.len(), 1);

    let cmp_dir = run_ok(
        r,
        &with_small(&[
            "compare-steps",
            "--cvf",
            s(&ckpt),
            "--baseline",
            s(&base),
            "--corpus",
            s(&corpus),
            "--ae",
            s(&ae),
            "--eval.compare-steps",
            "1,5",
            "--eval.num-rollouts",
            "8",
        ]),
    );
    assert_eq!(cvf::io::csv_log::read_csv(&cmp_dir.join("compare.csv")).unwrap().1.len(), 4);
}

#[test]
fn resume_continues_to_total_steps() {
    let runs = tempfile::tempdir().unwrap();
    let r = runs.path();
    let latent = ["--data.kind", "latent_rotation"];
    let data = run_ok(r, &[&["gen-data"][..], &latent, SMALL].concat());
    let corpus = data.join("corpus.cvf");
    let first = run_ok(r, &[&["train", "--corpus", s(&corpus)][..], &latent, SMALL].concat());
    let ckpt = first.join("checkpoint.cvf");
    let second = run_ok(
        r,
        &[
            &["train", "--corpus", s(&corpus), "--resume", s(&ckpt)][..],
            &latent,
            SMALL,
            &["--train.total-steps", "15"],
        ]
        .concat(),
    );
    let (_, rows) = cvf::io::csv_log::read_csv(&second.join("train.csv")).unwrap();
    assert_eq!(rows.len(), 5);
    assert_eq!(rows[4][0], "15");
    assert_eq!(rows[0][0], "11");
}

#[test]
fn config_errors_exit_2() {
    let runs = tempfile::tempdir().unwrap();
    let r = runs.path();
    for args in [
        vec!["gen-data", "--no.such-key", "1"],
        vec!["gen-data", "--data.num-videos", "many"],
        vec!["gen-data", "--threads", "0"],
        vec!["gen-data", "--data.kind"],
        vec!["frobnicate"],
    ] {
        let out = cvf(r, &args);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let cfg = r.join("bad.txt");
    std::fs::write(&cfg, "train.batch_size = 0\n").unwrap();
    assert_eq!(cvf(r, &["gen-data", "--config", s(&cfg)]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_1() {
    let runs = tempfile::tempdir().unwrap();
    let r = runs.path();
    let missing = r.join("missing.cvf");
    let out = cvf(r, &["train", "--corpus", s(&missing)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.cvf"));
}

#[test]
fn run_dirs_are_never_reused() {
    let runs = tempfile::tempdir().unwrap();
    let r = runs.path();
    let args = with_small(&["gen-data", "--data.kind", "latent_rotation"]);
    let a = run_ok(r, &args);
    let b = run_ok(r, &args);
    assert_ne!(a, b);
    assert_eq!(
        std::fs::read(a.join("corpus.cvf")).unwrap(),
        std::fs::read(b.join("corpus.cvf")).unwrap()
    );
}
