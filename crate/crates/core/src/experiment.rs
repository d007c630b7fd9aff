//! End-to-end pipeline stages driven by a [`RunConfig`].

use std::path::{Path, PathBuf};

use lsp_fluid::{CellType, SimState};

use crate::autoencoder::{encode_dataset, AeConfig, AeData, AeTrainOptions, Autoencoder, StageLog, TrainLog};
use crate::config::{Interval, RunConfig, Variant};
use crate::dataset::{generate_dataset, scene_seed, Dataset, GenerateParams, Split};
use crate::error::{CoreError, Result};
use crate::eval::{compare_pair, summarize, MetricRow, MetricsReport};
use crate::latent_sim::{simulate, HybridConfig, RunLayout, SimMode, Trajectory};
use crate::predictor::{CodeSequences, PredTrainLog, PredTrainOptions, Predictor, PredictorConfig};
use crate::scene::{augment_mirror, grid_dims, mirror_variants, random_scene};

/// File layout below the configured output root.
#[derive(Debug, Clone, PartialEq)]
pub struct Workspace {
    pub root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset")
    }

    pub fn autoencoder(&self) -> PathBuf {
        self.root.join("ae.lspw")
    }

    pub fn predictor(&self, variant: Variant, o: usize) -> PathBuf {
        self.root.join(format!("predictor_{}_o{o}.lspw", variant.name()))
    }

    pub fn eval(&self) -> PathBuf {
        self.root.join("eval")
    }

    pub fn bench(&self) -> PathBuf {
        self.root.join("bench")
    }

    pub fn simulations(&self) -> PathBuf {
        self.root.join("sim")
    }

    pub fn dumps(&self) -> PathBuf {
        self.root.join("dumps")
    }
}

pub fn dataset_seeds(cfg: &RunConfig) -> Vec<u64> {
    (0..cfg.dataset.scenes).map(|i| scene_seed(cfg.seed, i)).collect()
}

/// Seeds of the evaluation scenes; disjoint from the dataset scenes.
pub fn held_out_seeds(cfg: &RunConfig) -> Vec<u64> {
    let n = cfg.dataset.scenes;
    (n..n + cfg.eval.scenes).map(|i| scene_seed(cfg.seed, i)).collect()
}

/// Generates and normalises the dataset.
pub fn generate(cfg: &RunConfig) -> Result<Dataset> {
    let solver = cfg.solver.to_solver();
    let d = &cfg.dataset;
    let params = GenerateParams {
        kind: d.kind,
        dim: d.dim,
        resolution: d.resolution,
        quantity: d.quantity,
        n_w: d.warmup_steps,
        n_t: d.steps,
        augment: d.augment,
        solver: &solver,
    };
    let mut ds = generate_dataset(&dataset_seeds(cfg), cfg.seed, &params)?;
    ds.normalize()?;
    Ok(ds)
}

pub fn ae_config(cfg: &RunConfig, ds: &Dataset) -> AeConfig {
    let mut c = AeConfig::from_section(&cfg.ae, ds.meta.dim, ds.meta.resolution, ds.meta.channels);
    c.variational = cfg.ae.variational;
    c
}

pub fn build_autoencoder(cfg: &RunConfig, ds: &Dataset) -> Result<Autoencoder> {
    let mut ae = Autoencoder::build(ae_config(cfg, ds), cfg.seed)?;
    ae.scales = ds.meta.scales.clone();
    Ok(ae)
}

pub fn pretrain_autoencoder(cfg: &RunConfig, ae: &mut Autoencoder, ds: &Dataset) -> Result<Vec<StageLog>> {
    let opts = AeTrainOptions::from_section(&cfg.ae, cfg.seed);
    ae.pretrain_greedy(&AeData::from_dataset(ds), cfg.ae.pretrain_epochs, &opts)
}

pub fn train_autoencoder(cfg: &RunConfig, ae: &mut Autoencoder, ds: &Dataset, skip_pretrain: bool) -> Result<TrainLog> {
    let opts = AeTrainOptions::from_section(&cfg.ae, cfg.seed);
    ae.train(&AeData::from_dataset(ds), &opts, skip_pretrain)
}

/// Encoded scenes grouped by split: (train, validation, test). With
/// augmentation on, the training split also holds the encoded mirror
/// variants of its scenes; codes themselves cannot be mirrored.
pub fn split_codes(ds: &Dataset, ae: &Autoencoder) -> Result<(CodeSequences, CodeSequences, CodeSequences)> {
    let mut all = encode_dataset(ds, ae)?;
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (i, codes) in all.drain(..).enumerate() {
        match ds.meta.splits[i] {
            Split::Train => train.push(codes),
            Split::Validation => val.push(codes),
            Split::Test => test.push(codes),
        }
    }
    if ds.meta.augment {
        let m = &ds.meta;
        let dims = grid_dims(m.dim, m.resolution);
        for axes in mirror_variants(m.dim).into_iter().filter(|a| !a.is_empty()) {
            for i in m.scenes_in(Split::Train) {
                let store = &ds.scenes[i];
                let frames = (0..store.len()).map(|f| augment_mirror(store.frame(f), dims, m.quantity, &axes)).collect::<Result<Vec<_>>>()?;
                let refs: Vec<&[f32]> = frames.iter().map(|f| f.as_slice()).collect();
                let mut codes = Vec::with_capacity(refs.len());
                for chunk in refs.chunks(32) {
                    codes.extend(ae.encode_batch(chunk)?);
                }
                train.push(codes);
            }
        }
    }
    Ok((train, val, test))
}

pub fn predictor_config(cfg: &RunConfig, m_s: usize, variant: Variant, o: usize) -> PredictorConfig {
    PredictorConfig { variant, o, ..PredictorConfig::from_section(&cfg.predictor, m_s) }
}

pub fn train_predictor(
    cfg: &RunConfig,
    train: &CodeSequences,
    validation: &CodeSequences,
    m_s: usize,
    variant: Variant,
    o: usize,
) -> Result<(Predictor, PredTrainLog)> {
    let mut p = Predictor::build(predictor_config(cfg, m_s, variant, o), cfg.seed ^ o as u64)?;
    let log = p.train(train, validation, &PredTrainOptions::from_section(&cfg.predictor, cfg.seed))?;
    Ok((p, log))
}

pub fn layout(cfg: &RunConfig) -> RunLayout {
    RunLayout { lead_steps: cfg.dataset.warmup_steps, total_steps: cfg.hybrid.steps }
}

pub fn hybrid_config(cfg: &RunConfig, ip: Interval) -> HybridConfig {
    HybridConfig {
        quantity: cfg.dataset.quantity,
        ip,
        solver: cfg.solver.to_solver(),
        dump_dir: Some(Workspace::new(&cfg.output).dumps()),
    }
}

pub fn initial_state(cfg: &RunConfig, seed: u64) -> Result<SimState> {
    let spec = random_scene(cfg.dataset.kind, cfg.dataset.dim, seed);
    spec.initial_state(cfg.dataset.resolution, &cfg.solver.to_solver())
}

/// One evaluated configuration.
pub struct EvalCase<'a> {
    pub label: String,
    pub predictor: Option<&'a Predictor>,
    pub mode: SimMode,
}

pub struct EvalOutcome {
    pub reports: Vec<MetricsReport>,
    /// `i_p = 0` runs equal the reference bitwise on every scene (when a
    /// predictor was given).
    pub ip0_bitwise: Option<bool>,
}

/// Runs every case on the held-out scenes next to a reference twin and
/// compares them from `eval.start` on.
pub fn evaluate(cfg: &RunConfig, ae: &Autoencoder, cases: &[EvalCase], check_ip0: Option<&Predictor>) -> Result<EvalOutcome> {
    let lay = layout(cfg);
    let mut rows: Vec<Vec<MetricRow>> = vec![Vec::new(); cases.len()];
    let mut increases: Vec<Vec<f64>> = vec![Vec::new(); cases.len()];
    let mut ip0_bitwise = check_ip0.map(|_| true);
    for (scene, seed) in held_out_seeds(cfg).into_iter().enumerate() {
        let state = initial_state(cfg, seed)?;
        let reference = simulate(state.clone(), hybrid_config(cfg, Interval::Finite(0)), ae, None, SimMode::Reference, lay)?;
        if let Some(p) = check_ip0 {
            let t = simulate(state.clone(), hybrid_config(cfg, Interval::Finite(0)), ae, Some(p), SimMode::Hybrid(Interval::Finite(0)), lay)?;
            let same = t.frames == reference.frames && t.final_state == reference.final_state;
            ip0_bitwise = ip0_bitwise.map(|b| b && same);
        }
        for (k, case) in cases.iter().enumerate() {
            let ip = match case.mode {
                SimMode::Hybrid(ip) => ip,
                _ => Interval::Finite(0),
            };
            let t: Trajectory = simulate(state.clone(), hybrid_config(cfg, ip), ae, case.predictor, case.mode, lay)?;
            rows[k].extend(compare_pair(&reference, &t, scene, cfg.eval.start, &ae.scales)?);
            increases[k].push(t.divergence_increase());
        }
        log::info!("evaluated held-out scene {scene}");
    }
    let cells = cfg.dataset.resolution;
    let reports = cases
        .iter()
        .zip(rows)
        .zip(increases)
        .map(|((case, rows), inc)| {
            let mean_inc = inc.iter().sum::<f64>() / inc.len().max(1) as f64;
            summarize(&case.label, rows, cfg.eval.surface_step, mean_inc, cells)
        })
        .collect();
    Ok(EvalOutcome { reports, ip0_bitwise })
}

/// Mean |u| over FLUID cells.
pub fn mean_speed(state: &SimState) -> f64 {
    let dims = state.dims();
    let comps: Vec<_> = (0..dims.dim).map(|a| state.velocity.cell_centered(a)).collect();
    let (mut s, mut n) = (0.0, 0usize);
    for idx in 0..dims.cell_count() {
        if state.flags.cells[idx] == CellType::Fluid {
            s += comps.iter().map(|g| g.data[idx].powi(2)).sum::<f64>().sqrt();
            n += 1;
        }
    }
    s / n.max(1) as f64
}

/// Loads the dataset from the workspace, with a config error naming the
/// missing stage.
pub fn load_dataset(ws: &Workspace) -> Result<Dataset> {
    if !ws.dataset().join("meta.txt").exists() {
        return Err(CoreError::Data(format!("no dataset in {}; run gen-data first", ws.dataset().display())));
    }
    Dataset::load(&ws.dataset())
}

pub fn load_autoencoder(path: &Path) -> Result<Autoencoder> {
    if !path.exists() {
        return Err(CoreError::Data(format!("no autoencoder at {}; run train-ae first", path.display())));
    }
    Autoencoder::load(path)
}
