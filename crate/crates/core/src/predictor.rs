//! Sequence-to-sequence latent predictor: an encoder LSTM condenses the
//! history into a temporal context, which is repeated `o` times and decoded
//! into `o` future codes.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lsp_nn::{checkpoint, loss, weight_count, ActivationKind, LayerSpec, OptimConfig, Optimizer, Sequential, Tensor};

use crate::config::{PredictorSection, Variant};
use crate::dataset::KvDoc;
use crate::error::{CoreError, Result};

/// Width of the extra layer of the V2 variant.
pub const V2_WIDTH: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorConfig {
    /// History length minus one.
    pub n: usize,
    pub o: usize,
    pub m_s: usize,
    pub m_t: usize,
    pub m_td: usize,
    pub variant: Variant,
    pub dropout: f64,
    pub recurrent_dropout: f64,
}

impl PredictorConfig {
    pub fn from_section(s: &PredictorSection, m_s: usize) -> Self {
        Self {
            n: s.history,
            o: s.outputs,
            m_s,
            m_t: s.context,
            m_td: s.decoder,
            variant: s.variant,
            dropout: s.dropout,
            recurrent_dropout: s.recurrent_dropout,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.o == 0 || self.m_s == 0 || self.m_t == 0 || self.m_td == 0 {
            return Err(CoreError::Config("predictor sizes and output count must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) || !(0.0..1.0).contains(&self.recurrent_dropout) {
            return Err(CoreError::Config("dropout rates must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        let with_dropout = |mut s: LayerSpec| {
            s.rate = self.dropout;
            s.recurrent_rate = self.recurrent_dropout;
            s
        };
        let mut v = vec![
            with_dropout(LayerSpec::lstm(self.m_s, self.m_t, false)),
            LayerSpec::repeat(self.o),
        ];
        match self.variant {
            Variant::Hybrid => {
                v.push(with_dropout(LayerSpec::lstm(self.m_t, self.m_td, true)));
                v.push(LayerSpec::conv1d(self.m_td, self.m_s));
            }
            Variant::HybridV2 => {
                v.push(with_dropout(LayerSpec::lstm(self.m_t, self.m_td, true)));
                v.push(LayerSpec::conv1d(self.m_td, V2_WIDTH));
                v.push(LayerSpec::activation(ActivationKind::Tanh));
                v.push(LayerSpec::conv1d(V2_WIDTH, self.m_s));
            }
            Variant::FullyRecurrent => {
                v.push(with_dropout(LayerSpec::lstm(self.m_t, self.m_td, true)));
                v.push(with_dropout(LayerSpec::lstm(self.m_td, self.m_s, true)));
            }
        }
        v
    }

    pub fn weight_count(&self) -> usize {
        self.specs().iter().map(weight_count).sum()
    }

    fn to_meta(&self) -> Vec<(String, String)> {
        vec![
            ("predictor.n".into(), self.n.to_string()),
            ("predictor.o".into(), self.o.to_string()),
            ("predictor.m_s".into(), self.m_s.to_string()),
            ("predictor.m_t".into(), self.m_t.to_string()),
            ("predictor.m_td".into(), self.m_td.to_string()),
            ("predictor.variant".into(), self.variant.name().to_string()),
            ("predictor.dropout".into(), self.dropout.to_string()),
            ("predictor.recurrent_dropout".into(), self.recurrent_dropout.to_string()),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredTrainOptions {
    pub lr: f64,
    pub decay: f64,
    pub epochs: usize,
    pub batch: usize,
    pub clip_norm: Option<f64>,
    pub early_stopping: bool,
    pub seed: u64,
}

impl PredTrainOptions {
    pub fn from_section(s: &PredictorSection, seed: u64) -> Self {
        Self {
            lr: s.lr,
            decay: s.decay,
            epochs: s.epochs,
            batch: s.batch,
            clip_norm: s.clip_norm,
            early_stopping: s.early_stopping,
            seed,
        }
    }
}

/// Per-scene code sequences (scene → frame → code).
pub type CodeSequences = Vec<Vec<Vec<f32>>>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredEpoch {
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PredTrainLog {
    pub initial_val_loss: f64,
    pub epochs: Vec<PredEpoch>,
    pub best_epoch: Option<usize>,
}

impl PredTrainLog {
    pub fn best_val_loss(&self) -> f64 {
        self.best_epoch.map_or(f64::NAN, |e| self.epochs[e].val_loss)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predictor {
    pub cfg: PredictorConfig,
    /// Codes are divided by this before entering the network.
    pub code_scale: f64,
    pub net: Sequential<f32>,
}

/// Largest absolute code entry over the given sequences (1 if all zero).
pub fn code_scale(seqs: &CodeSequences) -> f64 {
    let m = seqs.iter().flatten().flatten().fold(0.0f32, |m, v| m.max(v.abs())) as f64;
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

/// Window starts `(scene, t)` whose `n + 1` inputs and `o` targets lie in
/// one scene.
pub fn windows(seqs: &CodeSequences, n: usize, o: usize) -> Vec<(usize, usize)> {
    let span = n + 1 + o;
    seqs.iter()
        .enumerate()
        .flat_map(|(s, seq)| (0..(seq.len() + 1).saturating_sub(span)).map(move |t| (s, t)))
        .collect()
}

impl Predictor {
    pub fn build(cfg: PredictorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let net = Sequential::new(&cfg.specs(), &mut ChaCha8Rng::seed_from_u64(seed))?;
        Ok(Self { cfg, code_scale: 1.0, net })
    }

    pub fn weight_count(&self) -> usize {
        self.net.weight_count()
    }

    fn batch(&self, seqs: &CodeSequences, wins: &[(usize, usize)]) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let (n1, o, m) = (self.cfg.n + 1, self.cfg.o, self.cfg.m_s);
        let inv = (1.0 / self.code_scale) as f32;
        let mut x = Vec::with_capacity(wins.len() * n1 * m);
        let mut y = Vec::with_capacity(wins.len() * o * m);
        for (s, t) in wins {
            for f in *t..t + n1 {
                x.extend(seqs[*s][f].iter().map(|v| v * inv));
            }
            for f in t + n1..t + n1 + o {
                y.extend(seqs[*s][f].iter().map(|v| v * inv));
            }
        }
        if x.len() != wins.len() * n1 * m {
            return Err(CoreError::Data(format!("codes do not have length m_s = {m}")));
        }
        Ok((Tensor::from_vec(&[wins.len(), n1, m], x)?, Tensor::from_vec(&[wins.len(), o, m], y)?))
    }

    /// Predicts `o` codes from the `n + 1` most recent ones (oldest first).
    pub fn predict(&self, history: &[&[f32]]) -> Result<Vec<Vec<f32>>> {
        let (n1, m) = (self.cfg.n + 1, self.cfg.m_s);
        if history.len() != n1 {
            return Err(CoreError::Usage(format!("predictor needs {n1} history codes, got {}", history.len())));
        }
        let inv = (1.0 / self.code_scale) as f32;
        let mut x = Vec::with_capacity(n1 * m);
        for c in history {
            if c.len() != m {
                return Err(CoreError::Data(format!("history code of length {}, expected {m}", c.len())));
            }
            x.extend(c.iter().map(|v| v * inv));
        }
        let y = self.net.infer(&Tensor::from_vec(&[1, n1, m], x)?)?;
        let s = self.code_scale as f32;
        Ok(y.data.chunks_exact(m).map(|c| c.iter().map(|v| v * s).collect()).collect())
    }

    /// Mean L1 error over all windows, dropout disabled.
    pub fn evaluate(&self, seqs: &CodeSequences, batch: usize) -> Result<f64> {
        let wins = windows(seqs, self.cfg.n, self.cfg.o);
        if wins.is_empty() {
            return Ok(f64::NAN);
        }
        let mut total = 0.0;
        for chunk in wins.chunks(batch.max(1)) {
            let (x, y) = self.batch(seqs, chunk)?;
            total += loss::l1(&self.net.infer(&x)?, &y)?.0 * chunk.len() as f64;
        }
        Ok(total / wins.len() as f64)
    }

    /// RMSProp on the L1 error of the `o` outputs. The code scale is taken
    /// from the training sequences.
    pub fn train(&mut self, train: &CodeSequences, validation: &CodeSequences, opts: &PredTrainOptions) -> Result<PredTrainLog> {
        self.code_scale = code_scale(train);
        let mut wins = windows(train, self.cfg.n, self.cfg.o);
        if wins.is_empty() {
            return Err(CoreError::Data("no training window fits the history and output length".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x51e9);
        let mut opt = Optimizer::new(OptimConfig { decay: opts.decay, clip_norm: opts.clip_norm, ..OptimConfig::rmsprop(opts.lr) })?;
        let mut log = PredTrainLog { initial_val_loss: self.evaluate(validation, opts.batch)?, ..Default::default() };
        let mut best: Option<(f64, Sequential<f32>)> = None;
        for e in 0..opts.epochs {
            wins.shuffle(&mut rng);
            let mut total = 0.0;
            for chunk in wins.chunks(opts.batch.max(1)) {
                let (x, y) = self.batch(train, chunk)?;
                let (pred, caches) = self.net.forward_train(&x, &mut rng)?;
                let (l, dy) = loss::l1(&pred, &y).map_err(|err| {
                    if let Some((_, net)) = &best {
                        self.net = net.clone();
                    }
                    CoreError::Training(format!("predictor epoch {e}: {err}"))
                })?;
                self.net.zero_grad();
                self.net.backward(&caches, &dy)?;
                opt.step(&mut self.net.params_mut())?;
                total += l * chunk.len() as f64;
            }
            let train_loss = total / wins.len() as f64;
            let val_loss = self.evaluate(validation, opts.batch)?;
            let monitored = if val_loss.is_nan() { train_loss } else { val_loss };
            if opts.early_stopping && best.as_ref().map_or(true, |b| monitored < b.0) {
                best = Some((monitored, self.net.clone()));
                log.best_epoch = Some(e);
            }
            log::info!("predictor epoch {e}: train {train_loss:.4e} validation {val_loss:.4e}");
            log.epochs.push(PredEpoch { train_loss, val_loss });
        }
        if let Some((_, net)) = best {
            self.net = net;
        } else if !log.epochs.is_empty() {
            log.best_epoch = Some(log.epochs.len() - 1);
        }
        Ok(log)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut meta = self.cfg.to_meta();
        meta.push(("predictor.code_scale".into(), self.code_scale.to_string()));
        Ok(checkpoint::to_bytes(&[&self.net], &meta)?)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let ck = checkpoint::from_bytes(buf)?;
        let get = |k: &str| {
            ck.meta_value(k).map(str::to_string).ok_or_else(|| CoreError::Data(format!("predictor checkpoint lacks `{k}`")))
        };
        fn num<T: std::str::FromStr>(s: String) -> Result<T> {
            s.parse().map_err(|_| CoreError::Data(format!("bad number `{s}` in predictor checkpoint")))
        }
        let cfg = PredictorConfig {
            n: num(get("predictor.n")?)?,
            o: num(get("predictor.o")?)?,
            m_s: num(get("predictor.m_s")?)?,
            m_t: num(get("predictor.m_t")?)?,
            m_td: num(get("predictor.m_td")?)?,
            variant: Variant::parse(&get("predictor.variant")?).ok_or_else(|| CoreError::Data("unknown predictor variant".into()))?,
            dropout: num(get("predictor.dropout")?)?,
            recurrent_dropout: num(get("predictor.recurrent_dropout")?)?,
        };
        let code_scale = num(get("predictor.code_scale")?)?;
        let Some(net) = ck.groups.into_iter().next() else {
            return Err(CoreError::Data("predictor checkpoint holds no network".into()));
        };
        if net.specs() != cfg.specs() {
            return Err(CoreError::Data("predictor checkpoint layers do not match its config".into()));
        }
        Ok(Self { cfg, code_scale, net })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        let mut doc = KvDoc::default();
        for (k, v) in self.cfg.to_meta() {
            doc.set("predictor", k.trim_start_matches("predictor."), v);
        }
        doc.set("predictor", "code_scale", self.code_scale);
        doc.set("predictor", "weights", self.weight_count());
        std::fs::write(path.with_extension("txt"), doc.render())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = std::fs::read(path).map_err(|e| CoreError::Data(format!("cannot read {}: {e}", path.display())))?;
        Self::from_bytes(&buf)
    }
}

/// Ranges sampled by the random hyperparameter search. Learning rate and
/// decay are sampled log-uniformly; `zero_decay_prob` of the trials use no
/// decay at all.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    pub lr: (f64, f64),
    pub decay: (f64, f64),
    pub zero_decay_prob: f64,
    pub dropout: (f64, f64),
    pub recurrent_dropout: (f64, f64),
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self { lr: (1e-5, 1e-2), decay: (1e-5, 1e-2), zero_decay_prob: 0.25, dropout: (0.0, 0.5), recurrent_dropout: (0.0, 0.5) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub lr: f64,
    pub decay: f64,
    pub dropout: f64,
    pub recurrent_dropout: f64,
    pub train_loss: f64,
    pub val_loss: f64,
}

fn log_uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo >= hi {
        return lo;
    }
    (rng.gen_range(lo.ln()..hi.ln())).exp()
}

fn uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo >= hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

/// Trains `trials` random configurations and returns them sorted by
/// validation error (best first).
pub fn hparam_search(
    base: &PredictorConfig,
    opts: &PredTrainOptions,
    space: &SearchSpace,
    trials: usize,
    train: &CodeSequences,
    validation: &CodeSequences,
) -> Result<Vec<Trial>> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x4a11);
    let mut out = Vec::with_capacity(trials);
    for i in 0..trials {
        let lr = log_uniform(&mut rng, space.lr);
        let decay = if rng.gen::<f64>() < space.zero_decay_prob { 0.0 } else { log_uniform(&mut rng, space.decay) };
        let dropout = uniform(&mut rng, space.dropout);
        let recurrent_dropout = uniform(&mut rng, space.recurrent_dropout);
        let cfg = PredictorConfig { dropout, recurrent_dropout, ..base.clone() };
        let mut model = Predictor::build(cfg, opts.seed.wrapping_add(i as u64))?;
        let log = model.train(train, validation, &PredTrainOptions { lr, decay, seed: opts.seed.wrapping_add(i as u64), ..opts.clone() })?;
        let last = log.epochs.last().copied().unwrap_or(PredEpoch { train_loss: f64::NAN, val_loss: f64::NAN });
        let val_loss = if opts.early_stopping { log.best_val_loss() } else { last.val_loss };
        log::info!("trial {i}: lr {lr:.2e} decay {decay:.2e} dropout {dropout:.3} recurrent {recurrent_dropout:.3} -> {val_loss:.4e}");
        out.push(Trial { lr, decay, dropout, recurrent_dropout, train_loss: last.train_loss, val_loss });
    }
    out.sort_by(|a, b| a.val_loss.total_cmp(&b.val_loss));
    Ok(out)
}
