//! The `c2pi` command line: train, attack, search, run-pi, sweep-noise and
//! report. Each command writes its artifacts only after all work succeeded.

mod config;

pub use config::{DatasetKind, ExperimentConfig};

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use crate::artifact::{write_atomic, write_json, SCHEMA_VERSION};
use crate::attacks::{dump_images, run_attack, AttackCache, AttackKind, AttackReport};
use crate::boundary::{parse_grid, search_network, BoundaryResult, SearchData};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{noised_accuracy, top1_accuracy};
use crate::model::{load_model, save_model, train_model, zoo, EvalPoint, Network, TrainedModel};
use crate::protocol::{run_session, RevealResult, SessionConfig, Transcript};
use crate::tensor::Tensor;

#[derive(Parser, Debug)]
#[command(
    name = "c2pi",
    version,
    about = "Crypto-clear private inference simulator"
)]
pub struct Cli {
    /// Experiment config (flat TOML); flags override its keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for data, training, attacks and sessions. Falls back to the
    /// config file, then to $C2PI_SEED.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model on the configured dataset and save it as .c2m.
    Train(TrainArgs),
    /// Attack one eval point (or all of them) and report recovery SSIM.
    Attack(AttackArgs),
    /// Search the crypto/clear boundary.
    Search(SearchArgs),
    /// Run a private inference session.
    RunPi(RunPiArgs),
    /// Attack SSIM and accuracy over a grid of noise magnitudes.
    SweepNoise(SweepArgs),
    /// Baseline accuracy, boundary and accuracy at the boundary.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Architecture name.
    #[arg(long)]
    pub arch: Option<String>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct AttackOpts {
    #[arg(long)]
    pub attack: Option<AttackKind>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Inversion-model training epochs.
    #[arg(long)]
    pub attack_epochs: Option<usize>,
    /// MLA gradient steps.
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AttackArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(
        long,
        conflicts_with = "all_layers",
        required_unless_present = "all_layers"
    )]
    pub point: Option<EvalPoint>,
    #[arg(long)]
    pub all_layers: bool,
    #[command(flatten)]
    pub opts: AttackOpts,
    #[arg(long)]
    pub out: PathBuf,
    /// Directory for recovered images (flat f64 + JSON shape).
    #[arg(long)]
    pub dump_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SearchArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub delta_drop: Option<f64>,
    #[command(flatten)]
    pub opts: AttackOpts,
    /// Probe accuracy with the noise one point after the candidate.
    #[arg(long)]
    pub noise_after_candidate: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum RevealArg {
    Logits,
    Argmax,
}

#[derive(Args, Debug)]
pub struct RunPiArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub boundary: EvalPoint,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// in_proc or tcp.
    #[arg(long)]
    pub transport: Option<String>,
    #[arg(long)]
    pub port: Option<u16>,
    /// Number of test images in the batch.
    #[arg(long, default_value_t = 8)]
    pub n: usize,
    #[arg(long, value_enum, default_value_t = RevealArg::Logits)]
    pub reveal: RevealArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Defaults to the middle eval point.
    #[arg(long)]
    pub point: Option<EvalPoint>,
    /// Grid `lo:hi:step`.
    #[arg(long)]
    pub lambdas: Option<String>,
    #[command(flatten)]
    pub opts: AttackOpts,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Trained model; without it the configured model is trained first.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    pub opts: AttackOpts,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code. Errors go to stderr.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// The effective config: file, then seed fallback, then flags.
pub fn resolve_config(cli: &Cli) -> Result<ExperimentConfig> {
    let (mut cfg, file_has_seed) = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            let table: toml::Table = toml::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            (
                ExperimentConfig::from_toml(&text)?,
                table.contains_key("seed"),
            )
        }
        None => (ExperimentConfig::default(), false),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    } else if !file_has_seed {
        if let Ok(v) = std::env::var("C2PI_SEED") {
            cfg.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("C2PI_SEED must be an integer, got {v:?}")))?;
        }
    }
    match &cli.command {
        Command::Train(a) => {
            set(&mut cfg.model, a.arch.clone());
            set(&mut cfg.width, a.width);
            set(&mut cfg.epochs, a.epochs);
            set(&mut cfg.lr, a.lr);
        }
        Command::Attack(a) => apply_attack_opts(&mut cfg, &a.opts),
        Command::Search(a) => {
            apply_attack_opts(&mut cfg, &a.opts);
            set(&mut cfg.sigma, a.sigma);
            set(&mut cfg.delta_drop, a.delta_drop);
            cfg.noise_after_candidate |= a.noise_after_candidate;
        }
        Command::RunPi(a) => {
            set(&mut cfg.lambda, a.lambda);
            set(&mut cfg.transport, a.transport.clone());
            set(&mut cfg.port, a.port);
        }
        Command::SweepNoise(a) => {
            apply_attack_opts(&mut cfg, &a.opts);
            set(&mut cfg.lambda_grid, a.lambdas.clone());
        }
        Command::Report(a) => apply_attack_opts(&mut cfg, &a.opts),
    }
    cfg.validate()?;
    Ok(cfg)
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn apply_attack_opts(cfg: &mut ExperimentConfig, o: &AttackOpts) {
    set(&mut cfg.attack, o.attack);
    set(&mut cfg.lambda, o.lambda);
    set(&mut cfg.attack_epochs, o.attack_epochs);
    set(&mut cfg.attack_iterations, o.iterations);
    if o.cache_dir.is_some() {
        cfg.cache_dir = o.cache_dir.clone();
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(cli)?;
    match &cli.command {
        Command::Train(a) => cmd_train(&cfg, a),
        Command::Attack(a) => cmd_attack(&cfg, a),
        Command::Search(a) => cmd_search(&cfg, a),
        Command::RunPi(a) => cmd_run_pi(&cfg, a),
        Command::SweepNoise(a) => cmd_sweep(&cfg, a),
        Command::Report(a) => cmd_report(&cfg, a),
    }
}

/// Trains the configured model on the configured data.
pub fn train_configured(
    cfg: &ExperimentConfig,
    train: &Dataset,
    test: &Dataset,
) -> Result<TrainedModel> {
    let spec = zoo::by_name(
        &cfg.model,
        train.image_shape(),
        train.num_classes,
        cfg.width,
    )?;
    train_model(&spec, train, Some(test), &cfg.train_config())
}

fn load_checked(path: &Path, data: &Dataset) -> Result<TrainedModel> {
    let m = load_model(path)?;
    if m.network.spec.input_shape != data.image_shape() {
        return Err(Error::Config(format!(
            "model {} expects {:?} inputs but the configured dataset has {:?}",
            path.display(),
            m.network.spec.input_shape,
            data.image_shape()
        )));
    }
    Ok(m)
}

fn cache(cfg: &ExperimentConfig) -> Option<AttackCache> {
    cfg.cache_dir.as_ref().map(AttackCache::new)
}

fn victims(cfg: &ExperimentConfig, test: &Dataset) -> Tensor {
    test.take(cfg.victim_images).images
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    schema: u32,
    config_hash: String,
    model: &'a str,
    dataset: String,
    test_accuracy: Option<f64>,
    epoch_losses: &'a [f64],
}

fn cmd_train(cfg: &ExperimentConfig, a: &TrainArgs) -> Result<()> {
    let (train, test) = cfg.datasets()?;
    let m = train_configured(cfg, &train, &test)?;
    save_model(&m, &a.out)?;
    let s = TrainSummary {
        schema: SCHEMA_VERSION,
        config_hash: cfg.hash()?,
        model: &cfg.model,
        dataset: cfg.dataset_name(),
        test_accuracy: m.meta.final_accuracy,
        epoch_losses: &m.meta.epoch_losses,
    };
    println!("{}", serde_json::to_string(&s)?);
    Ok(())
}

#[derive(Serialize)]
struct AttackArtifact {
    schema: u32,
    config_hash: String,
    reports: Vec<AttackReport>,
}

fn cmd_attack(cfg: &ExperimentConfig, a: &AttackArgs) -> Result<()> {
    let (train, test) = cfg.datasets()?;
    let model = load_checked(&a.model, &train)?;
    let net = &model.network;
    let points = match a.point {
        Some(p) => vec![p],
        None => net.spec.eval_points()?,
    };
    let attacker = train.take(cfg.attacker_images);
    let vict = victims(cfg, &test);
    let cache = cache(cfg);
    let base = cfg.attack_config();
    let outcomes: Vec<_> = points
        .par_iter()
        .enumerate()
        .map(|(i, &p)| {
            let job = crate::attacks::AttackConfig {
                seed: if a.all_layers {
                    base.seed.wrapping_add(i as u64)
                } else {
                    base.seed
                },
                ..base.clone()
            };
            run_attack(cfg.attack, net, p, &attacker, &vict, &job, cache.as_ref())
        })
        .collect::<Result<_>>()?;
    if let Some(dir) = &a.dump_dir {
        dump_images(&dir.join("originals"), &vict)?;
        for o in &outcomes {
            dump_images(
                &dir.join(format!("{}-{}", o.report.kind, o.report.target)),
                &o.recovered,
            )?;
        }
    }
    for o in &outcomes {
        println!(
            "{} at {}: avg SSIM {:.4}",
            o.report.kind, o.report.target, o.report.avg_ssim
        );
    }
    write_json(
        &a.out,
        &AttackArtifact {
            schema: SCHEMA_VERSION,
            config_hash: cfg.hash()?,
            reports: outcomes.into_iter().map(|o| o.report).collect(),
        },
    )
}

#[derive(Serialize)]
struct SearchArtifact {
    schema: u32,
    config_hash: String,
    attack: AttackKind,
    baseline_acc: f64,
    result: BoundaryResult,
}

fn baseline(net: &Network, test: &Dataset) -> Result<f64> {
    top1_accuracy(&net.forward(&test.images)?, &test.labels)
}

fn search(
    cfg: &ExperimentConfig,
    net: &Network,
    train: &Dataset,
    test: &Dataset,
) -> Result<(f64, BoundaryResult)> {
    let base = baseline(net, test)?;
    let vict = victims(cfg, test);
    let attacker = train.take(cfg.attacker_images);
    let data = SearchData {
        attacker: &attacker,
        victims: &vict,
        eval: test,
        accuracy_trials: cfg.accuracy_trials,
        accuracy_seed: cfg.seed,
    };
    let r = search_network(
        net,
        cfg.attack,
        &cfg.attack_config(),
        &cfg.search_config(base),
        &data,
        cache(cfg).as_ref(),
    )?;
    Ok((base, r))
}

fn cmd_search(cfg: &ExperimentConfig, a: &SearchArgs) -> Result<()> {
    let (train, test) = cfg.datasets()?;
    let model = load_checked(&a.model, &train)?;
    let (baseline_acc, result) = search(cfg, &model.network, &train, &test)?;
    println!(
        "boundary {} (delta {:.4}, lambda {})",
        result.boundary, result.delta, result.lambda
    );
    write_json(
        &a.out,
        &SearchArtifact {
            schema: SCHEMA_VERSION,
            config_hash: cfg.hash()?,
            attack: cfg.attack,
            baseline_acc,
            result,
        },
    )
}

#[derive(Serialize)]
struct RunPiArtifact {
    schema: u32,
    config_hash: String,
    boundary: EvalPoint,
    lambda: f64,
    predictions: Vec<usize>,
    logits: Option<Tensor>,
    /// Largest deviation of the returned logits from a local plaintext run.
    max_abs_diff: Option<f64>,
    transcript: Transcript,
}

fn cmd_run_pi(cfg: &ExperimentConfig, a: &RunPiArgs) -> Result<()> {
    let (train, test) = cfg.datasets()?;
    let model = load_checked(&a.model, &train)?;
    let net = &model.network;
    if a.n == 0 {
        return Err(Error::InvalidArgument("--n must be positive".into()));
    }
    let x = test.take(a.n).images;
    let mut s = SessionConfig::new(a.boundary, cfg.lambda);
    s.fixed = cfg.fixed();
    s.transport = cfg.transport()?;
    s.seed = cfg.seed;
    s.reveal_result = match a.reveal {
        RevealArg::Logits => RevealResult::Logits,
        RevealArg::Argmax => RevealResult::Argmax,
    };
    let out = run_session(net, &x, &s)?;
    let max_abs_diff = match &out.result.logits {
        Some(l) => Some(l.max_abs_diff(&net.forward(&x)?)?),
        None => None,
    };
    println!(
        "{} images, crypto {} B, total {} B, {} rounds",
        x.batch(),
        out.transcript.bytes.crypto,
        out.transcript.total_bytes,
        out.transcript.rounds
    );
    if let Some(d) = max_abs_diff {
        println!("max |logits - plaintext| = {d:.3e}");
    }
    write_json(
        &a.out,
        &RunPiArtifact {
            schema: SCHEMA_VERSION,
            config_hash: cfg.hash()?,
            boundary: a.boundary,
            lambda: cfg.lambda,
            predictions: out.result.predictions,
            logits: out.result.logits,
            max_abs_diff,
            transcript: out.transcript,
        },
    )
}

/// The eval point in the middle of the list.
pub fn middle_point(net: &Network) -> Result<EvalPoint> {
    let pts = net.spec.eval_points()?;
    Ok(pts[(pts.len() - 1) / 2])
}

/// One row per noise magnitude: `(lambda, avg_ssim, accuracy)`.
pub fn sweep_noise(
    cfg: &ExperimentConfig,
    net: &Network,
    point: EvalPoint,
    grid: &[f64],
    train: &Dataset,
    test: &Dataset,
) -> Result<Vec<(f64, f64, f64)>> {
    let attacker = train.take(cfg.attacker_images);
    let vict = victims(cfg, test);
    let cache = cache(cfg);
    grid.iter()
        .map(|&l| {
            let ac = crate::attacks::AttackConfig {
                lambda: l,
                ..cfg.attack_config()
            };
            let s = run_attack(
                cfg.attack,
                net,
                point,
                &attacker,
                &vict,
                &ac,
                cache.as_ref(),
            )?
            .report
            .avg_ssim;
            let acc = noised_accuracy(net, point, l, test, cfg.accuracy_trials, cfg.seed)?;
            Ok((l, s, acc))
        })
        .collect()
}

fn csv_bytes<R: Serialize>(rows: &[R]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)
            .map_err(|e| Error::Config(format!("csv: {e}")))?;
    }
    w.into_inner()
        .map_err(|e| Error::Config(format!("csv: {e}")))
}

#[derive(Serialize)]
struct SweepRow {
    lambda: f64,
    avg_ssim: f64,
    accuracy: f64,
}

fn cmd_sweep(cfg: &ExperimentConfig, a: &SweepArgs) -> Result<()> {
    let (train, test) = cfg.datasets()?;
    let model = load_checked(&a.model, &train)?;
    let point = match a.point {
        Some(p) => p,
        None => middle_point(&model.network)?,
    };
    let grid = parse_grid(&cfg.lambda_grid)?;
    let rows: Vec<SweepRow> = sweep_noise(cfg, &model.network, point, &grid, &train, &test)?
        .into_iter()
        .map(|(lambda, avg_ssim, accuracy)| SweepRow {
            lambda,
            avg_ssim,
            accuracy,
        })
        .collect();
    for r in &rows {
        println!(
            "lambda {:.2}: ssim {:.4}, accuracy {:.4}",
            r.lambda, r.avg_ssim, r.accuracy
        );
    }
    write_atomic(&a.out, &csv_bytes(&rows)?)
}

/// One summary row: baseline, boundary and accuracy there.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Report {
    pub schema: u32,
    pub config_hash: String,
    pub dataset: String,
    pub model: String,
    pub baseline_acc: f64,
    pub sigma: f64,
    pub boundary: EvalPoint,
    pub acc: f64,
    pub lambda: f64,
    pub attack: AttackKind,
}

/// Baseline accuracy, boundary search and accuracy at the boundary.
pub fn build_report(cfg: &ExperimentConfig, model: Option<&Path>) -> Result<Report> {
    let (train, test) = cfg.datasets()?;
    let m = match model {
        Some(p) => load_checked(p, &train)?,
        None => train_configured(cfg, &train, &test)?,
    };
    let (baseline_acc, r) = search(cfg, &m.network, &train, &test)?;
    let acc = r.accuracy_trace.last().map(|x| x.1).expect("phase 2 ran");
    Ok(Report {
        schema: SCHEMA_VERSION,
        config_hash: cfg.hash()?,
        dataset: cfg.dataset_name(),
        model: m.network.spec.name.clone(),
        baseline_acc,
        sigma: cfg.sigma,
        boundary: r.boundary,
        acc,
        lambda: cfg.lambda,
        attack: cfg.attack,
    })
}

#[derive(Serialize)]
struct ReportRow<'a> {
    dataset: &'a str,
    model: &'a str,
    baseline_acc: f64,
    sigma: f64,
    boundary: String,
    acc: f64,
}

fn cmd_report(cfg: &ExperimentConfig, a: &ReportArgs) -> Result<()> {
    let r = build_report(cfg, a.model.as_deref())?;
    println!(
        "{} / {}: baseline {:.4}, boundary {}, accuracy {:.4}",
        r.dataset, r.model, r.baseline_acc, r.boundary, r.acc
    );
    let csv = match &a.csv {
        Some(_) => Some(csv_bytes(&[ReportRow {
            dataset: &r.dataset,
            model: &r.model,
            baseline_acc: r.baseline_acc,
            sigma: r.sigma,
            boundary: r.boundary.to_string(),
            acc: r.acc,
        }])?),
        None => None,
    };
    write_json(&a.out, &r)?;
    if let (Some(p), Some(bytes)) = (&a.csv, csv) {
        write_atomic(p, &bytes)?;
    }
    Ok(())
}
