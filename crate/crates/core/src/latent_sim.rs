//! Hybrid simulation: the pressure solve (or, for velocity, advection and
//! projection) is replaced by encode, predict and decode, with a corrective
//! solver step after every `i_p` predicted steps.

use std::collections::VecDeque;
use std::path::PathBuf;
use std::time::Instant;

use lsp_fluid::{
    boundary_alignment, divergence, finish_step, prepare_step, solve_prepared, step_reference, CellType, ScalarGrid,
    SimState, SolverConfig,
};

use crate::autoencoder::Autoencoder;
use crate::config::{Interval, Quantity};
use crate::dataset::FrameStore;
use crate::error::{CoreError, Result};
use crate::predictor::Predictor;
use crate::scene::{extract_frame, frame_to_pressure, frame_to_velocity};

/// The `n + 1` most recent codes, oldest first, tagged with their step.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryBuffer {
    capacity: usize,
    entries: VecDeque<(u64, Vec<f32>)>,
}

impl HistoryBuffer {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, entries: VecDeque::with_capacity(capacity + 1) }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() == self.capacity
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Appends the code of `step`, evicting the oldest entry when full.
    pub fn push(&mut self, step: u64, code: Vec<f32>) -> Result<()> {
        if let Some((last, _)) = self.entries.back() {
            if step != last + 1 {
                return Err(CoreError::Simulation(format!("history jumps from step {last} to {step}")));
            }
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back((step, code));
        Ok(())
    }

    pub fn steps(&self) -> Vec<u64> {
        self.entries.iter().map(|(s, _)| *s).collect()
    }

    pub fn codes(&self) -> Vec<&[f32]> {
        self.entries.iter().map(|(_, c)| c.as_slice()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    /// Plain solver step.
    Reference,
    /// Solver step whose output is encoded into the history.
    Encoded,
    Predicted,
    /// Solver step with the quantity passed through the autoencoder.
    AeOnly,
}

/// Wall-clock seconds per phase of one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub kind: StepKind,
    pub t_advection: f64,
    pub t_solve: f64,
    pub t_align: f64,
    pub t_encode: f64,
    pub t_predict: f64,
    pub t_decode: f64,
    pub max_divergence: f64,
    pub mean_divergence: f64,
}

impl StepRecord {
    fn new(step: u64, kind: StepKind) -> Self {
        Self {
            step,
            kind,
            t_advection: 0.0,
            t_solve: 0.0,
            t_align: 0.0,
            t_encode: 0.0,
            t_predict: 0.0,
            t_decode: 0.0,
            max_divergence: 0.0,
            mean_divergence: 0.0,
        }
    }

    /// Time spent producing the pressure (or velocity) of the step.
    pub fn pressure_stage(&self) -> f64 {
        self.t_solve + self.t_align + self.t_encode + self.t_predict + self.t_decode
    }

    pub fn network(&self) -> f64 {
        self.t_encode + self.t_predict + self.t_decode
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CallCounters {
    pub pressure_solves: usize,
    pub encodes: usize,
    pub predictions: usize,
    pub pressure_decodes: usize,
    pub velocity_decodes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridConfig {
    pub quantity: Quantity,
    pub ip: Interval,
    pub solver: SolverConfig,
    /// Where to write the offending frame when a decode is not finite.
    pub dump_dir: Option<PathBuf>,
}

/// Mean and max |div u| over FLUID cells.
pub fn divergence_norms(state: &SimState) -> Result<(f64, f64)> {
    let div = divergence(&state.velocity, &state.flags)?;
    let (mut sum, mut max, mut n) = (0.0, 0.0f64, 0usize);
    for (d, c) in div.data.iter().zip(&state.flags.cells) {
        if *c == CellType::Fluid {
            sum += d.abs();
            max = max.max(d.abs());
            n += 1;
        }
    }
    Ok((sum / n.max(1) as f64, max))
}

pub struct HybridSim<'a> {
    pub cfg: HybridConfig,
    pub ae: &'a Autoencoder,
    pub predictor: Option<&'a Predictor>,
    state: Option<SimState>,
    pub buffer: HistoryBuffer,
    /// Predicted steps since the last correction.
    pub counter: usize,
    /// Predicted codes of the current batch not yet used.
    pending: VecDeque<Vec<f32>>,
    pub counters: CallCounters,
    pub records: Vec<StepRecord>,
}

impl<'a> HybridSim<'a> {
    pub fn new(state: SimState, cfg: HybridConfig, ae: &'a Autoencoder, predictor: Option<&'a Predictor>) -> Result<Self> {
        let dims = state.dims();
        let channels = cfg.quantity.channels(dims.dim);
        if ae.cfg.dim != dims.dim || ae.cfg.resolution != dims.extents[0] || ae.cfg.channels != channels {
            return Err(CoreError::Config("autoencoder does not match the scene resolution or quantity".into()));
        }
        if let Some(p) = predictor {
            if p.cfg.m_s != ae.latent_size() {
                return Err(CoreError::Config(format!(
                    "predictor latent size {} differs from the autoencoder's {}",
                    p.cfg.m_s,
                    ae.latent_size()
                )));
            }
        }
        let capacity = predictor.map_or(1, |p| p.cfg.n + 1);
        Ok(Self {
            cfg,
            ae,
            predictor,
            state: Some(state),
            buffer: HistoryBuffer::new(capacity),
            counter: 0,
            pending: VecDeque::new(),
            counters: CallCounters::default(),
            records: Vec::new(),
        })
    }

    fn finish_record(&mut self, mut rec: StepRecord) -> Result<()> {
        let (mean, max) = divergence_norms(self.st())?;
        rec.mean_divergence = mean;
        rec.max_divergence = max;
        self.records.push(rec);
        Ok(())
    }

    fn normalized_frame(&self) -> Result<Vec<f32>> {
        let mut f = extract_frame(self.st(), self.cfg.quantity, &self.cfg.solver)?;
        let c = self.ae.scales.len();
        for (i, v) in f.iter_mut().enumerate() {
            *v = (*v as f64 / self.ae.scales[i % c]) as f32;
        }
        Ok(f)
    }

    fn denormalize(&self, mut f: Vec<f32>) -> Vec<f32> {
        let c = self.ae.scales.len();
        for (i, v) in f.iter_mut().enumerate() {
            *v = (*v as f64 * self.ae.scales[i % c]) as f32;
        }
        f
    }

    pub fn state(&self) -> &SimState {
        self.state.as_ref().expect("state is restored after every step")
    }

    pub fn into_state(self) -> SimState {
        self.state.expect("state is restored after every step")
    }

    fn st(&self) -> &SimState {
        self.state()
    }

    fn take_state(&mut self) -> SimState {
        self.state.take().expect("state is restored after every step")
    }

    fn check_finite(&self, frame: &[f32], step: u64) -> Result<()> {
        if frame.iter().all(|v| v.is_finite()) {
            return Ok(());
        }
        let mut msg = format!("decoded field at step {step} is not finite");
        if let Some(dir) = &self.cfg.dump_dir {
            let dims = self.st().dims();
            let mut store = FrameStore::new(dims.dim, dims.extents, self.cfg.quantity.channels(dims.dim));
            store.push(frame)?;
            std::fs::create_dir_all(dir)?;
            let path = dir.join(format!("nonfinite_step_{step:06}.lspf"));
            store.save(&path)?;
            msg.push_str(&format!("; frame written to {}", path.display()));
        }
        Err(CoreError::Simulation(msg))
    }

    /// One solver step; with `encode` its output enters the history.
    pub fn step_reference(&mut self, encode: bool) -> Result<()> {
        let state = self.take_state();
        let (next, report) = step_reference(state, &self.cfg.solver)?;
        self.state = Some(next);
        self.counters.pressure_solves += 1;
        let kind = if encode { StepKind::Encoded } else { StepKind::Reference };
        let mut rec = StepRecord::new(self.st().step_index, kind);
        rec.t_advection = report.timings.advection + report.timings.forces + report.timings.projection;
        rec.t_solve = report.timings.solve;
        if encode {
            let t = Instant::now();
            let frame = self.normalized_frame()?;
            let code = self.ae.encode(&frame)?;
            rec.t_encode = t.elapsed().as_secs_f64();
            self.counters.encodes += 1;
            self.buffer.push(self.st().step_index, code)?;
        }
        self.finish_record(rec)
    }

    /// Runs `n + 1` encoded solver steps so the history is full.
    pub fn warmup(&mut self) -> Result<()> {
        for _ in 0..self.buffer.capacity() {
            self.step_reference(true)?;
        }
        Ok(())
    }

    /// Advances one step with a predicted code. A new batch of `o` codes is
    /// predicted when the previous one is used up.
    pub fn step_predicted(&mut self) -> Result<()> {
        let predictor = self.predictor.ok_or_else(|| CoreError::Usage("predicted steps need a predictor".into()))?;
        if !self.buffer.is_full() {
            return Err(CoreError::Usage("history is not full; run the warmup first".into()));
        }
        let mut rec = StepRecord::new(self.st().step_index + 1, StepKind::Predicted);
        if self.pending.is_empty() {
            let t = Instant::now();
            self.pending.extend(predictor.predict(&self.buffer.codes())?);
            rec.t_predict = t.elapsed().as_secs_f64();
            self.counters.predictions += 1;
        }
        let code = self.pending.pop_front().expect("prediction yields at least one code");
        let t = Instant::now();
        let frame = self.denormalize(self.ae.decode(&code)?);
        rec.t_decode = t.elapsed().as_secs_f64();
        self.check_finite(&frame, rec.step)?;
        self.apply_frame(frame, &mut rec)?;
        self.buffer.push(self.st().step_index, code)?;
        self.finish_record(rec)
    }

    fn apply_frame(&mut self, frame: Vec<f32>, rec: &mut StepRecord) -> Result<()> {
        let dims = self.st().dims();
        let dx = self.st().dx();
        let cfg = self.cfg.solver.clone();
        if self.cfg.quantity == Quantity::Velocity {
            self.counters.velocity_decodes += 1;
            let u = frame_to_velocity(&frame, dims, dx)?;
            let t = Instant::now();
            let state = self.take_state();
            self.state = Some(lsp_fluid::solver::advance_with_velocity(state, &u, &cfg)?);
            rec.t_advection = t.elapsed().as_secs_f64();
            return Ok(());
        }
        self.counters.pressure_decodes += 1;
        let p = frame_to_pressure(&frame, self.cfg.quantity, dims, dx)?;
        let t = Instant::now();
        let prep = prepare_step(self.take_state(), &cfg)?;
        rec.t_advection = t.elapsed().as_secs_f64();
        let t = Instant::now();
        let p = self.align(p, &prep)?;
        rec.t_align = t.elapsed().as_secs_f64();
        let (state, timings) = finish_step(prep, p, &cfg)?;
        rec.t_advection += timings.projection;
        self.state = Some(state);
        Ok(())
    }

    fn align(&self, p: ScalarGrid, prep: &lsp_fluid::PreparedStep) -> Result<ScalarGrid> {
        let cfg = &self.cfg.solver;
        match prep.state.free_surface() {
            Some(phi) => Ok(boundary_alignment(
                &p,
                &prep.divergence,
                phi,
                &prep.state.flags,
                cfg.narrow_band,
                cfg.jacobi_align_iters,
                &cfg.projection(),
            )?),
            None => Ok(p),
        }
    }

    /// Solver step whose quantity is replaced by its autoencoder
    /// reconstruction (no predictor involved).
    pub fn step_ae_only(&mut self) -> Result<()> {
        let cfg = self.cfg.solver.clone();
        let mut rec = StepRecord::new(self.st().step_index + 1, StepKind::AeOnly);
        let dims = self.st().dims();
        let dx = self.st().dx();
        if self.cfg.quantity == Quantity::Velocity {
            self.step_reference(false)?;
            self.records.pop();
            let t = Instant::now();
            let code = self.ae.encode(&self.normalized_frame()?)?;
            rec.t_encode = t.elapsed().as_secs_f64();
            let t = Instant::now();
            let frame = self.denormalize(self.ae.decode(&code)?);
            rec.t_decode = t.elapsed().as_secs_f64();
            self.counters.encodes += 1;
            self.counters.velocity_decodes += 1;
            self.check_finite(&frame, rec.step)?;
            let mut u = frame_to_velocity(&frame, dims, dx)?;
            lsp_fluid::forces::enforce_wall_bcs(&mut u, &self.st().flags);
            self.state.as_mut().expect("state present").velocity = u;
            return self.finish_record(rec);
        }
        let t = Instant::now();
        let prep = prepare_step(self.take_state(), &cfg)?;
        rec.t_advection = t.elapsed().as_secs_f64();
        let t = Instant::now();
        let solve = solve_prepared(&prep, &cfg)?;
        rec.t_solve = t.elapsed().as_secs_f64();
        self.counters.pressure_solves += 1;
        // encode the quantity the solve produced on the prepared state
        let mut probe = prep.state.clone();
        probe.pressure = solve.pressure;
        let mut frame = extract_frame(&probe, self.cfg.quantity, &cfg)?;
        let c = self.ae.scales.len();
        for (i, v) in frame.iter_mut().enumerate() {
            *v = (*v as f64 / self.ae.scales[i % c]) as f32;
        }
        let t = Instant::now();
        let code = self.ae.encode(&frame)?;
        rec.t_encode = t.elapsed().as_secs_f64();
        let t = Instant::now();
        let frame = self.denormalize(self.ae.decode(&code)?);
        rec.t_decode = t.elapsed().as_secs_f64();
        self.counters.encodes += 1;
        self.counters.pressure_decodes += 1;
        self.check_finite(&frame, rec.step)?;
        let p = frame_to_pressure(&frame, self.cfg.quantity, dims, dx)?;
        let t = Instant::now();
        let p = self.align(p, &prep)?;
        rec.t_align = t.elapsed().as_secs_f64();
        let (state, timings) = finish_step(prep, p, &cfg)?;
        rec.t_advection += timings.projection;
        self.state = Some(state);
        self.finish_record(rec)
    }

    /// One step of interval prediction: `i_p` predicted steps, then one
    /// solver step whose encoding is appended to the history.
    pub fn step_interval(&mut self) -> Result<()> {
        let predict = match self.cfg.ip {
            Interval::Finite(0) => return self.step_reference(false),
            Interval::Finite(ip) => self.counter < ip as usize,
            Interval::Infinite => true,
        };
        if predict {
            self.step_predicted()?;
            self.counter += 1;
        } else {
            self.pending.clear();
            self.step_reference(true)?;
            self.counter = 0;
        }
        Ok(())
    }
}

/// How a trajectory is advanced after the plain leading steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SimMode {
    Reference,
    Hybrid(Interval),
    AeOnly,
}

impl SimMode {
    pub fn name(&self) -> String {
        match self {
            SimMode::Reference => "reference".into(),
            SimMode::Hybrid(ip) => format!("hybrid_ip{ip}"),
            SimMode::AeOnly => "ae_only".into(),
        }
    }
}

/// Step layout of a run, counted from the initial state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunLayout {
    /// Plain solver steps before the history is filled.
    pub lead_steps: usize,
    pub total_steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub mode: SimMode,
    /// Raw quantity after each step (index 0 is step 1).
    pub frames: Vec<Vec<f32>>,
    /// Level set after each step (liquids only).
    pub levelsets: Vec<Option<ScalarGrid>>,
    pub records: Vec<StepRecord>,
    pub counters: CallCounters,
    pub final_state: SimState,
}

impl Trajectory {
    pub fn frame_store(&self) -> Result<FrameStore> {
        let dims = self.final_state.dims();
        let c = self.frames.first().map_or(1, |f| f.len() / dims.cell_count());
        let mut store = FrameStore::new(dims.dim, dims.extents, c);
        for f in &self.frames {
            store.push(f)?;
        }
        Ok(store)
    }

    /// Mean of the per-step mean |div| increase over predicted steps.
    pub fn divergence_increase(&self) -> f64 {
        let mut sum = 0.0;
        let mut n = 0;
        for w in self.records.windows(2) {
            if w[1].kind == StepKind::Predicted {
                sum += w[1].mean_divergence - w[0].mean_divergence;
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }
}

/// Runs a full trajectory from `initial`.
///
/// Reference mode runs only solver steps. The other modes run
/// `lead_steps` plain solver steps, fill the history with `n + 1` encoded
/// solver steps and continue with interval prediction or autoencoder-only
/// steps.
pub fn simulate(
    initial: SimState,
    cfg: HybridConfig,
    ae: &Autoencoder,
    predictor: Option<&Predictor>,
    mode: SimMode,
    layout: RunLayout,
) -> Result<Trajectory> {
    let mut sim = HybridSim::new(initial, cfg, ae, predictor)?;
    let quantity = sim.cfg.quantity;
    let mut frames = Vec::with_capacity(layout.total_steps);
    let mut levelsets = Vec::with_capacity(layout.total_steps);
    let history = sim.buffer.capacity();
    let mut record = |sim: &HybridSim| -> Result<()> {
        frames.push(extract_frame(sim.state(), quantity, &sim.cfg.solver)?);
        levelsets.push(sim.state().free_surface().cloned());
        Ok(())
    };
    for step in 0..layout.total_steps {
        match mode {
            SimMode::Reference => sim.step_reference(false)?,
            _ if step < layout.lead_steps => sim.step_reference(false)?,
            SimMode::Hybrid(Interval::Finite(0)) => sim.step_reference(false)?,
            _ if step < layout.lead_steps + history => sim.step_reference(mode != SimMode::AeOnly)?,
            SimMode::Hybrid(_) => sim.step_interval()?,
            SimMode::AeOnly => sim.step_ae_only()?,
        }
        if !sim.state().is_finite() {
            return Err(CoreError::Simulation(format!("state is not finite after step {}", step + 1)));
        }
        record(&sim)?;
    }
    Ok(Trajectory { mode, frames, levelsets, records: sim.records.clone(), counters: sim.counters, final_state: sim.into_state() })
}
