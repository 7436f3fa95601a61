//! The `pinchbot` command line.
//!
//! Settings resolve as built-in defaults, then `--config FILE`, then flags.
//! Results go to standard output as `key=value` lines; failures print a
//! single `error kind=<kind> msg=<json string>` line on standard error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::claysim::{generate_demos, generate_goal_cloud, new_clay_cylinder, GoalSpec};
use crate::config::RunConfig;
use crate::dataio::{augment_rotations, load_dataset, load_training_source, save_augment_record, save_dataset};
use crate::encoder::{pretrain_reconstruction, prepare_clouds, synthetic_corpus, AutoEncoder};
use crate::error::{Error, Result};
use crate::metrics::MetricReport;
use crate::policy::{rollout_policy, train_policy, PolicyModel, RolloutOptions, Variant};

#[derive(Debug, Parser)]
#[command(name = "pinchbot", version, about = "Pinch-pottery simulation, training and evaluation")]
struct Cli {
    /// TOML run configuration; flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate scripted expert demonstrations.
    GenDemos(GenDemosArgs),
    /// Rotation-augment a dataset (streamed on load unless materialized).
    Augment(AugmentArgs),
    /// Pre-train the cloud encoder on the synthetic reconstruction corpus.
    Pretrain(PretrainArgs),
    /// Train a diffusion policy.
    Train(TrainArgs),
    /// Roll a trained policy out in the simulator.
    Rollout(RolloutArgs),
    /// Score predicted final states against a goal bowl.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
struct GenDemosArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct AugmentArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    step_deg: Option<f64>,
    /// Write every rotated trajectory instead of a stream record.
    #[arg(long)]
    materialize: bool,
}

#[derive(Debug, Args)]
struct PretrainArgs {
    #[arg(long)]
    corpus_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    encoder: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Keep encoder weights fixed and cache embeddings.
    #[arg(long)]
    freeze_encoder: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RolloutArgs {
    #[arg(long)]
    policy: PathBuf,
    /// Goal rim diameter in meters.
    #[arg(long)]
    goal_diameter: f64,
    #[arg(long)]
    max_actions: Option<usize>,
    #[arg(long)]
    project_collisions: bool,
    #[arg(long)]
    initial_height: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Dataset directory whose final states are scored (e.g. a rollout output).
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    goal_diameter: f64,
}

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Usage(_) => 2,
        Error::Config(_) => 3,
        Error::Io { .. } | Error::MissingFile(_) => 4,
        Error::Format { .. } | Error::Version { .. } | Error::Validation(_) => 5,
        _ => 1,
    }
}

/// The one-line error record printed on failure.
pub fn error_line(err: &Error) -> String {
    format!(
        "error kind={} msg={}",
        err.kind(),
        serde_json::to_string(&err.to_string()).expect("string serializes")
    )
}

/// Runs the command line `argv` (including the program name); returns the exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let first = e.to_string().lines().next().unwrap_or("invalid usage").trim_start_matches("error: ").to_string();
            let err = Error::Usage(first);
            eprintln!("{}", error_line(&err));
            return exit_code(&err);
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("{}", error_line(&err));
            exit_code(&err)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::GenDemos(a) => gen_demos(&mut cfg, a),
        Command::Augment(a) => augment(&mut cfg, a),
        Command::Pretrain(a) => pretrain(&mut cfg, a),
        Command::Train(a) => train(&mut cfg, a),
        Command::Rollout(a) => rollout(&mut cfg, a),
        Command::Eval(a) => eval(&cfg, a),
    }
}

fn resolved(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    log::info!("resolved config:\n{}", cfg.to_toml());
    Ok(())
}

fn gen_demos(cfg: &mut RunConfig, a: GenDemosArgs) -> Result<()> {
    if let Some(n) = a.n {
        cfg.demos.count = n;
    }
    if let Some(s) = a.seed {
        cfg.demos.seed = s;
    }
    resolved(cfg)?;
    let demos = generate_demos(&cfg.sim, cfg.demos.count, cfg.demos.seed)?;
    let manifest = save_dataset(&demos, &a.out)?;
    println!("trajectories={}", manifest.trajectories.len());
    println!("actions={}", demos.iter().map(|d| d.len()).sum::<usize>());
    Ok(())
}

fn augment(cfg: &mut RunConfig, a: AugmentArgs) -> Result<()> {
    if let Some(s) = a.step_deg {
        cfg.demos.augment_step_deg = s;
    }
    resolved(cfg)?;
    let base = load_dataset(&a.input)?;
    let aug = augment_rotations(base, cfg.demos.augment_step_deg)?;
    if a.materialize {
        save_dataset(&aug.materialize()?, &a.out)?;
    } else {
        let source = fs::canonicalize(&a.input).map_err(|e| Error::io(&a.input, e))?;
        save_augment_record(&a.out, &source, cfg.demos.augment_step_deg)?;
    }
    println!("trajectories={}", aug.len());
    Ok(())
}

fn pretrain(cfg: &mut RunConfig, a: PretrainArgs) -> Result<()> {
    if let Some(k) = a.corpus_size {
        cfg.corpus.size = k;
    }
    if let Some(e) = a.epochs {
        cfg.pretrain.epochs = e;
    }
    if let Some(s) = a.seed {
        cfg.pretrain.seed = s;
    }
    resolved(cfg)?;
    let corpus = synthetic_corpus(cfg.corpus.size + cfg.corpus.heldout, cfg.corpus.points, cfg.corpus.seed)?;
    let corpus = prepare_clouds(&corpus, cfg.encoder.cloud_points, cfg.corpus.seed)?;
    let (train, heldout) = corpus.split_at(cfg.corpus.size);
    let mut model = AutoEncoder::<f32>::new(cfg.encoder.clone(), cfg.pretrain.seed)?;
    let before = if heldout.is_empty() { None } else { Some(model.reconstruction_chamfer_mm(heldout)?) };
    let curve = pretrain_reconstruction(&mut model, train, &cfg.pretrain)?;
    model.save(&a.out)?;
    if let Some(first) = curve.first() {
        println!("train_loss_first={first}");
        println!("train_loss_last={}", curve.last().expect("non-empty"));
    }
    if let Some(b) = before {
        println!("heldout_chamfer_init_mm={b}");
        println!("heldout_chamfer_final_mm={}", model.reconstruction_chamfer_mm(heldout)?);
    }
    Ok(())
}

fn train(cfg: &mut RunConfig, a: TrainArgs) -> Result<()> {
    if let Some(v) = a.variant {
        cfg.policy.variant = v;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if a.max_steps.is_some() {
        cfg.train.max_steps = a.max_steps;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    if a.freeze_encoder {
        cfg.policy.finetune_encoder = false;
    }
    let enc = AutoEncoder::<f32>::load(&a.encoder)?;
    cfg.encoder = enc.encoder.config.clone();
    resolved(cfg)?;
    let data = load_training_source(&a.data)?;
    let (model, report) = train_policy(&data, &cfg.policy, &enc.encoder, &enc.store, &cfg.train)?;
    model.save(&a.out)?;
    println!("samples={}", report.samples);
    println!("steps={}", report.steps);
    if let Some(last) = report.loss_curve.last() {
        println!("loss_last={last}");
    }
    Ok(())
}

fn rollout(cfg: &mut RunConfig, a: RolloutArgs) -> Result<()> {
    if let Some(m) = a.max_actions {
        cfg.rollout.max_actions = m;
    }
    if a.project_collisions {
        cfg.rollout.project_collisions = true;
    }
    if let Some(h) = a.initial_height {
        cfg.rollout.initial_height = h;
    }
    if let Some(s) = a.seed {
        cfg.rollout.seed = s;
    }
    let model = PolicyModel::<f32>::load(&a.policy)?;
    cfg.policy = model.config.clone();
    cfg.encoder = model.encoder.config.clone();
    resolved(cfg)?;
    let goal = GoalSpec::from_diameter(a.goal_diameter, &cfg.sim)?;
    let initial = new_clay_cylinder(&cfg.sim, cfg.rollout.initial_height, cfg.rollout.seed)?;
    let opts = RolloutOptions {
        max_actions: cfg.rollout.max_actions,
        project: cfg.rollout.project_collisions,
        seed: cfg.rollout.seed,
    };
    let result = rollout_policy(&model, &cfg.sim, &initial, &goal, &opts)?;
    save_dataset(std::slice::from_ref(&result.trajectory), &a.out)?;
    let report = MetricReport::evaluate_with(&result.trajectory.final_state, &result.trajectory.goal, goal.diameter, &cfg.metrics)?;
    let summary = format!(
        "{report}actions={}\nterminated_by_gamma={}\nhit_max_actions={}\nprojected_actions={}\nactions_inside_circle={}\n",
        result.trajectory.len(),
        result.terminated_by_gamma,
        result.hit_max_actions,
        result.projected,
        result.inside_circle
    );
    let path = a.out.join("metrics.txt");
    fs::write(&path, &summary).map_err(|e| Error::io(&path, e))?;
    print!("{summary}");
    Ok(())
}

fn eval(cfg: &RunConfig, a: EvalArgs) -> Result<()> {
    resolved(cfg)?;
    let goal = GoalSpec::from_diameter(a.goal_diameter, &cfg.sim)?;
    let preds = load_dataset(&a.pred)?;
    if preds.is_empty() {
        return Err(Error::Validation(format!("{} holds no trajectories", a.pred.display())));
    }
    let mut sum = [0.0; 3];
    for t in &preds {
        let goal_cloud = generate_goal_cloud(&goal, t.final_state.len().max(1))?.to_f32_precision();
        let r = MetricReport::evaluate_with(&t.final_state, &goal_cloud, goal.diameter, &cfg.metrics)?;
        for (s, (_, v)) in sum.iter_mut().zip(r.entries()) {
            *s += v;
        }
    }
    let n = preds.len() as f64;
    let report = MetricReport {
        chamfer_mm: sum[0] / n,
        emd_mm: sum[1] / n,
        diameter_mse_mm2: sum[2] / n,
    };
    print!("{report}");
    Ok(())
}

/// Reads a `key=value` record file such as a rollout's `metrics.txt`.
pub fn read_metrics(path: &Path) -> Result<MetricReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    MetricReport::parse(&text)
}
