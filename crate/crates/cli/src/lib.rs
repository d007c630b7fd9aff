//! `lsp` command-line driver.
//!
//! Every subcommand reads the run configuration, applies the global flag
//! overrides and works inside the configured output root.

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};

use lsp_core::autoencoder::Autoencoder;
use lsp_core::config::{Interval, Quantity, RunConfig, Variant};
use lsp_core::eval::{benchmark, write_reports, BenchParams};
use lsp_core::experiment::{self, EvalCase, Workspace};
use lsp_core::latent_sim::{simulate, SimMode};
use lsp_core::predictor::{hparam_search, PredTrainOptions, Predictor, SearchSpace};
use lsp_core::{CoreError, Result};

/// Environment variable that overrides `--threads`.
pub const THREADS_ENV: &str = "LSP_THREADS";

#[derive(Debug, Parser)]
#[command(name = "lsp", version, about = "Latent-space pressure prediction for liquid and smoke simulation")]
pub struct Cli {
    /// Run configuration (TOML with [section] headers); defaults when omitted.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Global seed; overrides the configuration.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Worker threads; LSP_THREADS takes precedence.
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the training scenes and store the normalised dataset.
    GenData,
    /// Pretrain and train the autoencoder.
    TrainAe(TrainAeArgs),
    /// Train the latent predictor on encoded scenes.
    TrainPred(TrainPredArgs),
    /// Run one held-out scene with the solver or the hybrid scheme.
    Simulate(SimulateArgs),
    /// Paired runs against the reference on the held-out scenes.
    Eval,
    /// Time the solver against the network pipeline.
    Bench,
    /// Random search over predictor learning rate, decay and dropout.
    HparamSearch(HparamArgs),
    /// Print the effective configuration, or the reference listing.
    Config(ConfigArgs),
}

#[derive(Debug, Args)]
pub struct TrainAeArgs {
    /// Run the greedy pretraining stages and stop.
    #[arg(long)]
    pub pretrain_only: bool,
    /// Variational bottleneck (only when building a new autoencoder).
    #[arg(long)]
    pub variational: bool,
    /// Train from scratch without pretrained stages.
    #[arg(long, conflicts_with = "pretrain_only")]
    pub skip_pretrain: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Hybrid,
    Fr,
    HybridV2,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Hybrid => Variant::Hybrid,
            VariantArg::Fr => Variant::FullyRecurrent,
            VariantArg::HybridV2 => Variant::HybridV2,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainPredArgs {
    /// Predictor variant; defaults to the configured one.
    #[arg(long, value_enum)]
    pub variant: Option<VariantArg>,
    /// Outputs per prediction; defaults to the configured count.
    #[arg(long, value_name = "N")]
    pub o: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Reference,
    Hybrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum QuantityArg {
    Total,
    Split,
    Velocity,
}

impl From<QuantityArg> for Quantity {
    fn from(q: QuantityArg) -> Self {
        match q {
            QuantityArg::Total => Quantity::Total,
            QuantityArg::Split => Quantity::Split,
            QuantityArg::Velocity => Quantity::Velocity,
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value = "reference")]
    pub mode: ModeArg,
    /// Encoded quantity; defaults to the dataset's.
    #[arg(long, value_enum)]
    pub quantity: Option<QuantityArg>,
    /// Predicted steps between solver steps, or `inf`.
    #[arg(long, value_name = "N|inf")]
    pub ip: Option<Interval>,
    /// Total number of steps.
    #[arg(long, value_name = "N")]
    pub steps: Option<usize>,
    /// Held-out scene index.
    #[arg(long, default_value_t = 0)]
    pub scene: usize,
}

#[derive(Debug, Args)]
pub struct HparamArgs {
    #[arg(long, default_value_t = 8)]
    pub trials: usize,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Print every key with its default instead of the effective values.
    #[arg(long)]
    pub reference: bool,
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand) {
                print!("{e}");
                return if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand { 2 } else { 0 };
            }
            let rendered = e.render().to_string();
            let first = rendered.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("error[usage] {first}");
            eprintln!("\n{}", Cli::command().render_usage());
            return 2;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}] {}", e.category(), e.to_string().replace('\n', " "));
            e.exit_code()
        }
    }
}

/// Loads the configuration and applies the global overrides.
pub fn effective_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    if let Ok(v) = std::env::var(THREADS_ENV) {
        cfg.threads = v.trim().parse().map_err(|_| CoreError::Config(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?;
    }
    if cfg.threads == 0 {
        return Err(CoreError::Config("thread count must be positive".into()));
    }
    Ok(cfg)
}

fn init_threads(n: usize) -> Result<()> {
    // a second initialisation in the same process keeps the first pool
    if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() && rayon::current_num_threads() != n {
        log::warn!("thread pool already running with {} threads", rayon::current_num_threads());
    }
    Ok(())
}

fn execute(cli: &Cli) -> Result<()> {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).try_init();
    let cfg = effective_config(cli)?;
    init_threads(cfg.threads)?;
    let ws = Workspace::new(&cfg.output);
    match &cli.command {
        Command::GenData => gen_data(&cfg, &ws),
        Command::TrainAe(a) => train_ae(&cfg, &ws, a),
        Command::TrainPred(a) => train_pred(&cfg, &ws, a),
        Command::Simulate(a) => simulate_cmd(&cfg, &ws, a),
        Command::Eval => eval_cmd(&cfg, &ws),
        Command::Bench => bench_cmd(&cfg, &ws),
        Command::HparamSearch(a) => hparam_cmd(&cfg, &ws, a),
        Command::Config(a) => {
            print!("{}", if a.reference { RunConfig::reference_text() } else { cfg.dump() });
            Ok(())
        }
    }
}

fn gen_data(cfg: &RunConfig, ws: &Workspace) -> Result<()> {
    let ds = experiment::generate(cfg)?;
    fs::create_dir_all(&ws.root)?;
    ds.save(&ws.dataset())?;
    fs::write(ws.root.join("config.toml"), cfg.dump())?;
    println!("dataset: {} scenes x {} frames -> {}", ds.scenes.len(), cfg.dataset.steps, ws.dataset().display());
    Ok(())
}

fn train_ae(cfg: &RunConfig, ws: &Workspace, a: &TrainAeArgs) -> Result<()> {
    let ds = experiment::load_dataset(ws)?;
    let mut cfg = cfg.clone();
    if a.variational {
        cfg.ae.variational = true;
    }
    let path = ws.autoencoder();
    let existing = if path.exists() && !a.skip_pretrain { Some(Autoencoder::load(&path)?) } else { None };
    if a.pretrain_only {
        let mut ae = experiment::build_autoencoder(&cfg, &ds)?;
        let logs = experiment::pretrain_autoencoder(&cfg, &mut ae, &ds)?;
        ae.save(&path)?;
        for l in &logs {
            println!("stage {}: validation loss {:.4e} -> {:.4e}", l.stage, l.val_before, l.val_after);
        }
        println!("pretrained {} stages -> {}", ae.pretrained_stages, path.display());
        return Ok(());
    }
    let mut ae = match existing {
        Some(ae) => {
            if ae.cfg != experiment::ae_config(&cfg, &ds) {
                return Err(CoreError::Config(format!("{} was built with a different autoencoder configuration", path.display())));
            }
            ae
        }
        None if a.skip_pretrain => experiment::build_autoencoder(&cfg, &ds)?,
        None => {
            return Err(CoreError::Usage(
                "autoencoder is not pretrained; run `train-ae --pretrain-only` first or pass --skip-pretrain".into(),
            ))
        }
    };
    let log = experiment::train_autoencoder(&cfg, &mut ae, &ds, a.skip_pretrain)?;
    ae.save(&path)?;
    let best = log.best_epoch.map(|i| log.epochs[i].best_val_loss).unwrap_or(f64::NAN);
    println!("trained {} epochs, best validation loss {best:.4e} -> {}", log.epochs.len(), path.display());
    Ok(())
}

fn train_pred(cfg: &RunConfig, ws: &Workspace, a: &TrainPredArgs) -> Result<()> {
    let ds = experiment::load_dataset(ws)?;
    let ae = experiment::load_autoencoder(&ws.autoencoder())?;
    let variant = a.variant.map(Variant::from).unwrap_or(cfg.predictor.variant);
    let o = a.o.unwrap_or(cfg.predictor.outputs);
    if o == 0 {
        return Err(CoreError::Usage("--o must be positive".into()));
    }
    let (train, val, _) = experiment::split_codes(&ds, &ae)?;
    drop(ds);
    let (p, log) = experiment::train_predictor(cfg, &train, &val, ae.latent_size(), variant, o)?;
    let path = ws.predictor(variant, o);
    p.save(&path)?;
    println!(
        "predictor {} o={o}: {} weights, validation L1 {:.4e} -> {:.4e} -> {}",
        variant.name(),
        p.cfg.weight_count(),
        log.initial_val_loss,
        log.best_val_loss(),
        path.display()
    );
    Ok(())
}

fn load_predictor(cfg: &RunConfig, ws: &Workspace) -> Result<Predictor> {
    let path = ws.predictor(cfg.predictor.variant, cfg.predictor.outputs);
    if !path.exists() {
        return Err(CoreError::Data(format!("no predictor at {}; run train-pred first", path.display())));
    }
    Predictor::load(&path)
}

fn simulate_cmd(cfg: &RunConfig, ws: &Workspace, a: &SimulateArgs) -> Result<()> {
    let mut cfg = cfg.clone();
    if let Some(q) = a.quantity {
        cfg.dataset.quantity = q.into();
    }
    if let Some(s) = a.steps {
        cfg.hybrid.steps = s;
    }
    let ip = a.ip.unwrap_or(cfg.hybrid.ip);
    let seeds = experiment::held_out_seeds(&cfg);
    let seed = *seeds
        .get(a.scene)
        .ok_or_else(|| CoreError::Usage(format!("--scene {} out of range; eval.scenes is {}", a.scene, seeds.len())))?;
    let state = experiment::initial_state(&cfg, seed)?;
    let layout = experiment::layout(&cfg);
    let (mode, ae, predictor) = match a.mode {
        ModeArg::Reference => (SimMode::Reference, None, None),
        ModeArg::Hybrid => {
            let ae = experiment::load_autoencoder(&ws.autoencoder())?;
            let p = if ip == Interval::Finite(0) { None } else { Some(load_predictor(&cfg, ws)?) };
            (SimMode::Hybrid(ip), Some(ae), p)
        }
    };
    let ae = match ae {
        Some(ae) => ae,
        // the reference run never touches the network; a minimal stand-in keeps the signature
        None => standin_autoencoder(&cfg)?,
    };
    let traj = simulate(state, experiment::hybrid_config(&cfg, ip), &ae, predictor.as_ref(), mode, layout)?;
    fs::create_dir_all(ws.simulations())?;
    let label = match a.mode {
        ModeArg::Reference => format!("reference_scene{}", a.scene),
        ModeArg::Hybrid => format!("hybrid_ip{ip}_scene{}", a.scene),
    };
    let path = ws.simulations().join(format!("{label}.lspf"));
    traj.frame_store()?.save(&path)?;
    let c = &traj.counters;
    println!(
        "{label}: {} steps, {} solves, {} predictions, mean |u| {:.3e}, divergence increase {:.3e} -> {}",
        traj.records.len(),
        c.pressure_solves,
        c.predictions,
        experiment::mean_speed(&traj.final_state),
        traj.divergence_increase(),
        path.display()
    );
    Ok(())
}

fn standin_autoencoder(cfg: &RunConfig) -> Result<Autoencoder> {
    let c = lsp_core::autoencoder::AeConfig::from_section(&cfg.ae, cfg.dataset.dim, cfg.dataset.resolution, cfg.dataset.quantity.channels(cfg.dataset.dim));
    Autoencoder::build(c, cfg.seed)
}

fn eval_cmd(cfg: &RunConfig, ws: &Workspace) -> Result<()> {
    let ae = experiment::load_autoencoder(&ws.autoencoder())?;
    let predictor = load_predictor(cfg, ws)?;
    let mut cases = vec![EvalCase { label: "ae_only".into(), predictor: None, mode: SimMode::AeOnly }];
    for ip in &cfg.eval.intervals {
        cases.push(EvalCase { label: format!("ip_{ip}"), predictor: Some(&predictor), mode: SimMode::Hybrid(*ip) });
    }
    let out = experiment::evaluate(cfg, &ae, &cases, Some(&predictor))?;
    write_reports(&ws.eval(), &out.reports)?;
    for r in &out.reports {
        println!("{}", r.summary_line());
    }
    println!("ip=0 bitwise equal to reference: {}", out.ip0_bitwise.unwrap_or(false));
    println!("reports -> {}", ws.eval().display());
    Ok(())
}

fn bench_cmd(cfg: &RunConfig, ws: &Workspace) -> Result<()> {
    let solver = cfg.solver.to_solver();
    let ae = lsp_core::autoencoder::AeConfig::from_section(&cfg.ae, 2, cfg.dataset.resolution, 1);
    let predictor = lsp_core::predictor::PredictorConfig::from_section(&cfg.predictor, ae.latent_size());
    let report = benchmark(&BenchParams {
        resolutions: &cfg.eval.bench_resolutions,
        intervals: &cfg.eval.bench_intervals,
        steps: cfg.eval.bench_steps,
        warmup_steps: 5,
        solver: &solver,
        ae: &ae,
        predictor: &predictor,
        seed: cfg.seed,
    })?;
    fs::create_dir_all(ws.bench())?;
    let text = report.render();
    fs::write(ws.bench().join("bench.csv"), &text)?;
    print!("{text}");
    Ok(())
}

fn hparam_cmd(cfg: &RunConfig, ws: &Workspace, a: &HparamArgs) -> Result<()> {
    let ds = experiment::load_dataset(ws)?;
    let ae = experiment::load_autoencoder(&ws.autoencoder())?;
    let (train, val, _) = experiment::split_codes(&ds, &ae)?;
    drop(ds);
    let base = experiment::predictor_config(cfg, ae.latent_size(), cfg.predictor.variant, cfg.predictor.outputs);
    let opts = PredTrainOptions::from_section(&cfg.predictor, cfg.seed);
    let trials = hparam_search(&base, &opts, &SearchSpace::default(), a.trials, &train, &val)?;
    let mut csv = String::from("lr,decay,dropout,recurrent_dropout,train_loss,val_loss\n");
    for t in &trials {
        csv.push_str(&format!("{:e},{:e},{},{},{:e},{:e}\n", t.lr, t.decay, t.dropout, t.recurrent_dropout, t.train_loss, t.val_loss));
    }
    fs::create_dir_all(&ws.root)?;
    let path = ws.root.join("hparam_search.csv");
    fs::write(&path, &csv)?;
    print!("{csv}");
    println!("trials -> {}", path.display());
    Ok(())
}
