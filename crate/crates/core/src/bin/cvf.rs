use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use cvf::experiment::{
    decode_all, eval_windows, fit_autoencoder, load_autoencoder, one_step_quality, rollout_set, save_autoencoder,
    train_model, CompareRow, Corpus, Model, RolloutSet,
};
use cvf::io::container::{load_container, save_container, Tensor};
use cvf::io::csv_log::CsvLog;
use cvf::io::pgm::write_pgm;
use cvf::io::run_dir::{runs_root, RunDir};
use cvf::io::ExperimentConfig;
use cvf::metrics::{classify_mode, evaluate_frames, mode_coverage, psnr_from_mse, MetricsReport};
use cvf::{CvfError, Result};

const EXIT_RUNTIME: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_THRESHOLD: u8 = 3;

/// Continuous video flow experiments: data, autoencoder, flow model,
/// sampling, evaluation and the step-count comparison.
///
/// Any config key can be overridden on the command line as
/// `--section.key value` (dashes in the key are read as underscores).
#[derive(Parser)]
#[command(name = "cvf", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker thread cap.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Runs root; defaults to $CVF_RUNS_DIR or ./runs.
    #[arg(long)]
    runs_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train the frame autoencoder on a pixel corpus.
    TrainAe {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Train the flow model (or the diffusion baseline with train.model = baseline).
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        ae: Option<PathBuf>,
        /// Continue from a checkpoint that carries optimizer state.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Autoregressive rollouts from the first frames of corpus videos.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        ae: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        rollouts: usize,
    },
    /// Score a rollout directory against a corpus or another rollout directory.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        rollout: PathBuf,
        /// Pixel corpus or another rollout directory.
        #[arg(long)]
        truth: PathBuf,
    },
    /// One-step quality of both model families over a range of step counts.
    CompareSteps {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        cvf: PathBuf,
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        ae: Option<PathBuf>,
        /// Exit with status 3 unless the flow model at 5 steps matches the
        /// baseline at 25 and beats the baseline at 5.
        #[arg(long)]
        check: bool,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::GenData { common }
            | Command::TrainAe { common, .. }
            | Command::Train { common, .. }
            | Command::Sample { common, .. }
            | Command::Evaluate { common, .. }
            | Command::CompareSteps { common, .. } => common,
        }
    }

    fn slug(&self) -> &'static str {
        match self {
            Command::GenData { .. } => "gen-data",
            Command::TrainAe { .. } => "train-ae",
            Command::Train { .. } => "train",
            Command::Sample { .. } => "sample",
            Command::Evaluate { .. } => "evaluate",
            Command::CompareSteps { .. } => "compare-steps",
        }
    }
}

/// Splits `--section.key value` / `--section.key=value` pairs out of argv.
fn extract_overrides(args: Vec<String>) -> std::result::Result<(Vec<String>, Vec<(String, String)>), CvfError> {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let Some(flag) = a.strip_prefix("--").filter(|f| f.contains('.')) else {
            rest.push(a);
            continue;
        };
        let (key, value) = match flag.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it
                    .next()
                    .ok_or_else(|| CvfError::config(flag.replace('-', "_"), "missing value"))?;
                (flag.to_string(), v)
            }
        };
        overrides.push((key.replace('-', "_"), value));
    }
    Ok((rest, overrides))
}

fn resolve_config(common: &Common, overrides: &[(String, String)]) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    if let Some(p) = &common.config {
        let text = fs::read_to_string(p).map_err(|e| CvfError::io(p, e))?;
        cfg.apply_text(&text)?;
    }
    for (k, v) in overrides {
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    if common.threads == 0 {
        return Err(CvfError::config("threads", "must be >= 1"));
    }
    Ok(cfg)
}

fn frame_dims(corpus: &Corpus) -> Option<(usize, usize)> {
    corpus.videos().map(|v| {
        let s = v[0].shape();
        (s.height, s.width)
    })
}

fn load_ae(path: Option<&PathBuf>) -> Result<Option<cvf::autoencoder::AeParams>> {
    path.map(|p| load_autoencoder(p)).transpose()
}

fn gen_data(cfg: &ExperimentConfig, run: &RunDir) -> Result<()> {
    let corpus = Corpus::generate(cfg)?;
    corpus.save(&run.join("corpus.cvf"))?;
    if let (Some(videos), Some((h, w))) = (corpus.videos(), frame_dims(&corpus)) {
        let dir = run.subdir("preview")?;
        for (i, f) in videos[0].frames().take(8).enumerate() {
            write_pgm(&dir.join(format!("frame_{i:02}.pgm")), f, h, w)?;
        }
    }
    Ok(())
}

fn train_ae(cfg: &ExperimentConfig, run: &RunDir, corpus: &Path) -> Result<()> {
    let corpus = Corpus::load(corpus)?;
    let videos = corpus
        .videos()
        .ok_or_else(|| CvfError::config("data.kind", "autoencoder training needs a pixel corpus"))?;
    let (ae, report) = fit_autoencoder(cfg, videos)?;
    save_autoencoder(&ae, &run.join("ae.cvf"))?;
    let mut log = CsvLog::create(&run.join("ae_loss.csv"), &["epoch", "mse", "psnr_db"])?;
    for (i, m) in report.epoch_mse.iter().enumerate() {
        log.row(&[i.to_string(), m.to_string(), psnr_from_mse(*m, 1.0).to_string()])?;
    }
    Ok(())
}

fn train(
    cfg: &ExperimentConfig,
    run: &RunDir,
    corpus: &Path,
    ae: Option<&PathBuf>,
    resume: Option<&PathBuf>,
) -> Result<()> {
    let corpus = Corpus::load(corpus)?;
    let ae = load_ae(ae)?;
    let latents = corpus.latents(ae.as_ref())?;
    let resume = match resume {
        Some(p) => {
            let (m, st) = Model::load(p, cfg)?;
            let st = st.ok_or_else(|| CvfError::InvalidArgument(format!("{} has no optimizer state", p.display())))?;
            Some((m, st))
        }
        None => None,
    };
    let mut log = CsvLog::create(&run.join("train.csv"), &["step", "loss", "lr", "wall_ms"])?;
    let (model, state, _) = train_model(cfg, latents, resume, |r| {
        log.row(&[r.step.to_string(), r.loss.to_string(), r.lr.to_string(), r.wall_ms.to_string()])
    })?;
    model.save(&run.join("checkpoint.cvf"), Some(&state))
}

fn sample(
    cfg: &ExperimentConfig,
    run: &RunDir,
    checkpoint: &Path,
    corpus: &Path,
    ae: Option<&PathBuf>,
    rollouts: usize,
) -> Result<()> {
    if rollouts == 0 {
        return Err(CvfError::config("rollouts", "must be >= 1"));
    }
    let (model, _) = Model::load(checkpoint, cfg)?;
    let corpus = Corpus::load(corpus)?;
    let ae = load_ae(ae)?;
    let latents = corpus.latents(ae.as_ref())?;
    let sampler = cfg.sampler_config();
    let set = rollout_set(&model, &latents, rollouts, cfg.sampler.horizon, sampler.num_steps, &sampler)?;
    let mut tensors = set.to_tensors()?;
    if let Some(ae) = &ae {
        let s = ae.shape();
        let mut data = Vec::new();
        for l in &set.latents {
            for f in decode_all(ae, l)? {
                data.extend(f);
            }
        }
        tensors.push((
            "rollout.frames".into(),
            Tensor::new(vec![set.latents.len(), cfg.sampler.horizon, s.channels, s.height, s.width], data)?,
        ));
        let dir = run.subdir("frames")?;
        for (i, f) in decode_all(ae, &set.latents[0])?.iter().enumerate() {
            write_pgm(&dir.join(format!("frame_{i:03}.pgm")), f, s.height, s.width)?;
        }
    }
    save_container(&run.join("rollout.cvf"), &tensors)?;
    let mut log = CsvLog::create(&run.join("timing.csv"), &["rollout", "video", "frames", "steps", "wall_ms_per_frame"])?;
    for (r, (v, ms)) in set.videos.iter().zip(&set.wall_ms).enumerate() {
        log.row(&[
            r.to_string(),
            v.to_string(),
            cfg.sampler.horizon.to_string(),
            set.steps.to_string(),
            ms.to_string(),
        ])?;
    }
    Ok(())
}

/// Decoded rollout frames `[rollout][frame]` of a rollout directory.
fn rollout_frames(dir: &Path) -> Result<(RolloutSet, Vec<Vec<Vec<f32>>>, (usize, usize))> {
    let path = dir.join("rollout.cvf");
    let t = load_container(&path)?;
    let set = RolloutSet::from_tensors(&t, &path)?;
    let f = t
        .iter()
        .find(|(n, _)| n == "rollout.frames")
        .map(|(_, t)| t)
        .ok_or_else(|| CvfError::InvalidArgument(format!("{} has no decoded frames", path.display())))?;
    let [r, m, _, h, w] = f.dims[..] else {
        return Err(CvfError::Malformed {
            path,
            detail: "rollout.frames must have rank 5".into(),
        });
    };
    let p = h * w;
    let frames = (0..r)
        .map(|i| (0..m).map(|j| f.data[(i * m + j) * p..(i * m + j + 1) * p].to_vec()).collect())
        .collect();
    Ok((set, frames, (h, w)))
}

fn evaluate(run: &RunDir, rollout: &Path, truth: &Path) -> Result<()> {
    let (set, frames, (h, w)) = rollout_frames(rollout)?;
    let context = set.context_len;
    let mut predicted: Vec<&[f32]> = Vec::new();
    let mut expected: Vec<Vec<f32>> = Vec::new();
    let mut modes = Vec::new();
    if truth.is_dir() {
        let (_, other, dims) = rollout_frames(truth)?;
        if dims != (h, w) || other.len() != frames.len() {
            return Err(CvfError::InvalidArgument("rollout shapes differ".into()));
        }
        for (a, b) in frames.iter().zip(&other) {
            if a.len() != b.len() {
                return Err(CvfError::InvalidArgument("rollout horizons differ".into()));
            }
            predicted.extend(a.iter().map(|f| f.as_slice()));
            expected.extend(b.iter().cloned());
        }
    } else {
        let corpus = Corpus::load(truth)?;
        let videos = corpus
            .videos()
            .ok_or_else(|| CvfError::InvalidArgument("ground truth must be a pixel corpus".into()))?;
        let s = videos[0].shape();
        if (s.height, s.width) != (h, w) {
            return Err(CvfError::InvalidArgument(format!(
                "rollout frames are {h}x{w} but the corpus has {}x{}",
                s.height, s.width
            )));
        }
        for (r, rf) in frames.iter().enumerate() {
            let v = &videos[set.videos[r]];
            for (j, f) in rf.iter().enumerate() {
                let idx = context + j;
                if idx < v.num_frames() {
                    predicted.push(f);
                    expected.push(v.frame(idx).to_vec());
                }
            }
            if let Corpus::Pixel { bimodal: Some(b), .. } = &corpus {
                let j = (b.trigger + 1).checked_sub(context);
                if let Some(f) = j.and_then(|j| rf.get(j)) {
                    let (l, rr) = &b.branches[set.videos[r]];
                    modes.push(classify_mode(f, l, rr)?);
                }
            }
        }
    }
    let truth_refs: Vec<&[f32]> = expected.iter().map(|f| f.as_slice()).collect();
    let mut report: MetricsReport = evaluate_frames(&predicted, &truth_refs, h, w)?;
    if !modes.is_empty() {
        report.mode_frequencies = Some(mode_coverage(&modes));
    }
    let mut log = CsvLog::create(&run.join("metrics.csv"), &MetricsReport::CSV_HEADER)?;
    log.row(&report.csv_row())?;
    Ok(())
}

fn compare_steps(
    cfg: &ExperimentConfig,
    run: &RunDir,
    cvf_path: &Path,
    baseline_path: &Path,
    corpus: &Path,
    ae: Option<&PathBuf>,
) -> Result<Vec<CompareRow>> {
    let (cvf_model, _) = Model::load(cvf_path, cfg)?;
    let (base_model, _) = Model::load(baseline_path, cfg)?;
    let corpus = Corpus::load(corpus)?;
    let ae = load_ae(ae)?;
    let latents = corpus.latents(ae.as_ref())?;
    let windows = eval_windows(&latents, cvf_model.context_len(), cfg.eval.num_rollouts);
    let sampler = cfg.sampler_config();
    let mut log = CsvLog::create(&run.join("compare.csv"), &CompareRow::CSV_HEADER)?;
    let mut rows = Vec::new();
    for model in [&cvf_model, &base_model] {
        for &n in &cfg.eval.compare_steps {
            let row = one_step_quality(model, &latents, corpus.videos(), ae.as_ref(), &windows, n, &sampler, cfg.eval.seed)?;
            log.row(&row.csv_row())?;
            rows.push(row);
        }
    }
    Ok(rows)
}

/// Flow model at 5 steps at least as good as the baseline at 25, and the
/// baseline at 5 strictly worse than the flow model at 5.
fn step_efficiency_holds(rows: &[CompareRow]) -> Option<bool> {
    let find = |m: &str, n: usize| rows.iter().find(|r| r.model == m && r.steps == n);
    let (c5, b5, b25) = (find("cvf", 5)?, find("baseline", 5)?, find("baseline", 25)?);
    let le = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(a), Some(b)) => a <= b,
        _ => true,
    };
    let lt = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(a), Some(b)) => a < b,
        _ => true,
    };
    Some(
        c5.mse <= b25.mse
            && le(c5.fd_proxy, b25.fd_proxy)
            && c5.mse < b5.mse
            && lt(c5.fd_proxy, b5.fd_proxy),
    )
}

fn run(cli: Cli, overrides: &[(String, String)]) -> Result<u8> {
    let cmd = cli.command;
    let common = cmd.common();
    let cfg = resolve_config(common, overrides)?;
    let root = common.runs_dir.clone().unwrap_or_else(runs_root);
    let run = RunDir::create(&root, cmd.slug())?;
    run.write_config(&cfg)?;
    let start = Instant::now();
    let mut status = 0;
    match &cmd {
        Command::GenData { .. } => gen_data(&cfg, &run)?,
        Command::TrainAe { corpus, .. } => train_ae(&cfg, &run, corpus)?,
        Command::Train { corpus, ae, resume, .. } => train(&cfg, &run, corpus, ae.as_ref(), resume.as_ref())?,
        Command::Sample {
            checkpoint,
            corpus,
            ae,
            rollouts,
            ..
        } => sample(&cfg, &run, checkpoint, corpus, ae.as_ref(), *rollouts)?,
        Command::Evaluate { rollout, truth, .. } => evaluate(&run, rollout, truth)?,
        Command::CompareSteps {
            cvf,
            baseline,
            corpus,
            ae,
            check,
            ..
        } => {
            let rows = compare_steps(&cfg, &run, cvf, baseline, corpus, ae.as_ref())?;
            if *check {
                match step_efficiency_holds(&rows) {
                    Some(true) => {}
                    Some(false) => {
                        eprintln!("step-efficiency check failed");
                        status = EXIT_THRESHOLD;
                    }
                    None => {
                        return Err(CvfError::config(
                            "eval.compare_steps",
                            "the check needs step counts 5 and 25",
                        ))
                    }
                }
            }
        }
    }
    run.write_text("elapsed.txt", &format!("{:.3}\n", start.elapsed().as_secs_f64()))?;
    println!("{}", run.path().display());
    Ok(status)
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    let (rest, overrides) = match extract_overrides(args) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let cli = Cli::parse_from(rest);
    match run(cli, &overrides) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                CvfError::Config { .. } => EXIT_CONFIG,
                _ => EXIT_RUNTIME,
            })
        }
    }
}
