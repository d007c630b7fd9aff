//! Convolutional spatial autoencoder with greedy stage-wise pretraining and
//! an optional variational bottleneck.
//!
//! Stage 0 is a k4 s2 linear convolution, stages 1..=l are k2 s2
//! convolutions with LeakyReLU; the decoder mirrors them with transposed
//! convolutions. Every stage is its own [`Sequential`] so the stack can be
//! trained in prefixes.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use lsp_nn::layers::Cache;
use lsp_nn::{checkpoint, loss, ActivationKind, LayerSpec, OptimConfig, Optimizer, Sequential, Tensor};

use crate::config::{AeSection, Quantity};
use crate::dataset::{Dataset, KvDoc, Split};
use crate::error::{CoreError, Result};
use crate::scene::{augment_mirror, grid_dims, mirror_variants};

#[derive(Debug, Clone, PartialEq)]
pub struct AeConfig {
    pub dim: usize,
    pub resolution: usize,
    pub channels: usize,
    pub depth: usize,
    pub base_features: usize,
    /// 0 selects 256 in 2D and 1024 in 3D.
    pub max_features: usize,
    pub variational: bool,
    pub kl_weight: f64,
}

impl AeConfig {
    pub fn from_section(s: &AeSection, dim: usize, resolution: usize, channels: usize) -> Self {
        Self {
            dim,
            resolution,
            channels,
            depth: s.depth,
            base_features: s.base_features,
            max_features: s.max_features,
            variational: s.variational,
            kl_weight: s.kl_weight,
        }
    }

    pub fn stages(&self) -> usize {
        self.depth + 1
    }

    pub fn feature_cap(&self) -> usize {
        match self.max_features {
            0 if self.dim == 2 => 256,
            0 => 1024,
            c => c,
        }
    }

    /// Output features of each encoder stage.
    pub fn features(&self) -> Vec<usize> {
        let cap = self.feature_cap();
        (0..self.stages()).map(|i| (self.base_features << i).min(cap)).collect()
    }

    /// Spatial extent of the latent grid.
    pub fn latent_extent(&self) -> usize {
        self.resolution >> self.stages()
    }

    /// Latent size `m_s`.
    pub fn latent_size(&self) -> usize {
        self.latent_extent().pow(self.dim as u32) * self.features()[self.depth]
    }

    pub fn frame_len(&self) -> usize {
        self.resolution.pow(self.dim as u32) * self.channels
    }

    pub fn compression(&self) -> f64 {
        self.frame_len() as f64 / self.latent_size() as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=3).contains(&self.dim) || self.channels == 0 || self.base_features == 0 {
            return Err(CoreError::Config("autoencoder needs dim 2 or 3 and positive channels/features".into()));
        }
        let div = 1usize << self.stages();
        if self.resolution == 0 || self.resolution % div != 0 {
            return Err(CoreError::Config(format!(
                "resolution {} is not divisible by 2^(depth+1) = {div}",
                self.resolution
            )));
        }
        if self.kl_weight < 0.0 {
            return Err(CoreError::Config("kl_weight must be non-negative".into()));
        }
        Ok(())
    }

    fn shape(&self, batch: usize, extent: usize, channels: usize) -> Vec<usize> {
        let mut s = vec![batch];
        s.extend(std::iter::repeat(extent).take(self.dim));
        s.push(channels);
        s
    }

    /// Layer specs of encoder stage `i`.
    pub fn encoder_specs(&self, i: usize) -> Vec<LayerSpec> {
        let f = self.features();
        let head = if self.variational && i == self.depth { 2 } else { 1 };
        if i == 0 {
            vec![LayerSpec::conv(self.dim, 4, 2, self.channels, f[0] * head)]
        } else if head == 2 {
            vec![LayerSpec::conv(self.dim, 2, 2, f[i - 1], 2 * f[i])]
        } else {
            vec![LayerSpec::conv(self.dim, 2, 2, f[i - 1], f[i]), LayerSpec::activation(ActivationKind::LeakyRelu)]
        }
    }

    /// Layer specs of decoder stage `i` (maps stage `i` features back to
    /// stage `i - 1`, or to the input channels for `i = 0`).
    pub fn decoder_specs(&self, i: usize) -> Vec<LayerSpec> {
        let f = self.features();
        if i == 0 {
            vec![LayerSpec::conv_transposed(self.dim, 4, 2, f[0], self.channels)]
        } else {
            vec![
                LayerSpec::conv_transposed(self.dim, 2, 2, f[i], f[i - 1]),
                LayerSpec::activation(ActivationKind::LeakyRelu),
            ]
        }
    }

    fn to_meta(&self) -> Vec<(String, String)> {
        vec![
            ("ae.dim".into(), self.dim.to_string()),
            ("ae.resolution".into(), self.resolution.to_string()),
            ("ae.channels".into(), self.channels.to_string()),
            ("ae.depth".into(), self.depth.to_string()),
            ("ae.base_features".into(), self.base_features.to_string()),
            ("ae.max_features".into(), self.max_features.to_string()),
            ("ae.variational".into(), self.variational.to_string()),
            ("ae.kl_weight".into(), self.kl_weight.to_string()),
        ]
    }

    fn from_meta(ck: &checkpoint::Checkpoint) -> Result<Self> {
        fn get<T: std::str::FromStr>(ck: &checkpoint::Checkpoint, k: &str) -> Result<T> {
            ck.meta_value(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| CoreError::Data(format!("autoencoder checkpoint lacks a valid `{k}`")))
        }
        Ok(Self {
            dim: get(ck, "ae.dim")?,
            resolution: get(ck, "ae.resolution")?,
            channels: get(ck, "ae.channels")?,
            depth: get(ck, "ae.depth")?,
            base_features: get(ck, "ae.base_features")?,
            max_features: get(ck, "ae.max_features")?,
            variational: get(ck, "ae.variational")?,
            kl_weight: get(ck, "ae.kl_weight")?,
        })
    }
}

/// Training hyperparameters shared by pretraining and full training.
#[derive(Debug, Clone, PartialEq)]
pub struct AeTrainOptions {
    pub lr: f64,
    pub decay: f64,
    pub batch: usize,
    pub epochs: usize,
    pub early_stopping: bool,
    pub seed: u64,
}

impl AeTrainOptions {
    pub fn from_section(s: &AeSection, seed: u64) -> Self {
        Self { lr: s.lr, decay: s.decay, batch: s.batch, epochs: s.epochs, early_stopping: s.early_stopping, seed }
    }
}

/// Frames used for training, borrowed from a dataset.
pub struct AeData<'a> {
    pub train: Vec<&'a [f32]>,
    pub validation: Vec<&'a [f32]>,
    pub quantity: Quantity,
    pub augment: bool,
}

impl<'a> AeData<'a> {
    pub fn from_dataset(ds: &'a Dataset) -> Self {
        let frames = |split| {
            ds.meta
                .scenes_in(split)
                .into_iter()
                .flat_map(|s| (0..ds.scenes[s].len()).map(move |f| ds.scenes[s].frame(f)))
                .collect()
        };
        Self { train: frames(Split::Train), validation: frames(Split::Validation), quantity: ds.meta.quantity, augment: ds.meta.augment }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub train_loss: f64,
    pub val_loss: f64,
    pub best_val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageLog {
    pub stage: usize,
    pub val_before: f64,
    pub val_after: f64,
}

struct StackCache {
    enc: Vec<Vec<Cache<f32>>>,
    dec: Vec<Vec<Cache<f32>>>,
    vae: Option<VaeCache>,
}

struct VaeCache {
    lv: Tensor<f32>,
    mu: Tensor<f32>,
    xi: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder {
    pub cfg: AeConfig,
    /// Per-channel normalisation scales of the training data.
    pub scales: Vec<f64>,
    /// Number of completed pretraining stages.
    pub pretrained_stages: usize,
    pub trained: bool,
    pub encoder: Vec<Sequential<f32>>,
    pub decoder: Vec<Sequential<f32>>,
}

/// `0.5 * sum(mu^2 + e^lv - lv - 1) / batch`.
pub fn kl_divergence(mu: &[f32], lv: &[f32], batch: usize) -> f64 {
    let s: f64 = mu
        .iter()
        .zip(lv)
        .map(|(m, l)| {
            let (m, l) = (*m as f64, *l as f64);
            m * m + l.exp() - l - 1.0
        })
        .sum();
    0.5 * s / batch.max(1) as f64
}

impl Autoencoder {
    pub fn build(cfg: AeConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut encoder = Vec::with_capacity(cfg.stages());
        let mut decoder = Vec::with_capacity(cfg.stages());
        for i in 0..cfg.stages() {
            encoder.push(Sequential::new(&cfg.encoder_specs(i), &mut rng)?);
        }
        for i in 0..cfg.stages() {
            decoder.push(Sequential::new(&cfg.decoder_specs(i), &mut rng)?);
        }
        let scales = vec![1.0; cfg.channels];
        Ok(Self { cfg, scales, pretrained_stages: 0, trained: false, encoder, decoder })
    }

    pub fn build_variational(mut cfg: AeConfig, seed: u64) -> Result<Self> {
        cfg.variational = true;
        Self::build(cfg, seed)
    }

    pub fn latent_size(&self) -> usize {
        self.cfg.latent_size()
    }

    pub fn weight_count(&self) -> usize {
        self.encoder.iter().chain(&self.decoder).map(|s| s.weight_count()).sum()
    }

    fn batch_tensor(&self, frames: &[&[f32]]) -> Result<Tensor<f32>> {
        let n = self.cfg.frame_len();
        let mut data = Vec::with_capacity(frames.len() * n);
        for f in frames {
            if f.len() != n {
                return Err(CoreError::Data(format!("frame of {} values, autoencoder expects {n}", f.len())));
            }
            data.extend_from_slice(f);
        }
        Ok(Tensor::from_vec(&self.cfg.shape(frames.len(), self.cfg.resolution, self.cfg.channels), data)?)
    }

    fn split_head(&self, y: &Tensor<f32>) -> (Tensor<f32>, Tensor<f32>) {
        let f = y.features() / 2;
        let mut shape = y.shape.clone();
        *shape.last_mut().unwrap() = f;
        let mut mu = Vec::with_capacity(y.len() / 2);
        let mut lv = Vec::with_capacity(y.len() / 2);
        for chunk in y.data.chunks_exact(2 * f) {
            mu.extend_from_slice(&chunk[..f]);
            lv.extend_from_slice(&chunk[f..]);
        }
        (Tensor { shape: shape.clone(), data: mu }, Tensor { shape, data: lv })
    }

    /// Forward pass through encoder stages `0..=k` and decoder stages
    /// `k..=0`. With an rng the variational bottleneck samples.
    fn forward_stack(&self, x: &Tensor<f32>, k: usize, rng: Option<&mut ChaCha8Rng>) -> Result<(Tensor<f32>, StackCache, f64)> {
        let mut h = x.clone();
        let mut enc = Vec::with_capacity(k + 1);
        for stage in &self.encoder[..=k] {
            let (y, c) = stage.forward_eval(&h)?;
            enc.push(c);
            h = y;
        }
        let mut vae = None;
        let mut kl = 0.0;
        if self.cfg.variational && k == self.cfg.depth {
            let (mu, lv) = self.split_head(&h);
            kl = kl_divergence(&mu.data, &lv.data, x.batch());
            let xi: Vec<f32> = match rng {
                Some(rng) => (0..mu.len()).map(|_| rng.sample::<f32, _>(StandardNormal)).collect(),
                None => vec![0.0; mu.len()],
            };
            let mut z = mu.clone();
            for ((z, l), e) in z.data.iter_mut().zip(&lv.data).zip(&xi) {
                *z += (0.5 * l).exp() * e;
            }
            vae = Some(VaeCache { lv, mu, xi });
            h = z;
        }
        let mut dec: Vec<Vec<Cache<f32>>> = (0..=k).map(|_| Vec::new()).collect();
        for i in (0..=k).rev() {
            let (y, c) = self.decoder[i].forward_eval(&h)?;
            dec[i] = c;
            h = y;
        }
        Ok((h, StackCache { enc, dec, vae }, kl))
    }

    fn backward_stack(&mut self, cache: &StackCache, dy: &Tensor<f32>, k: usize, batch: usize) -> Result<()> {
        let mut g = dy.clone();
        for i in 0..=k {
            g = self.decoder[i].backward(&cache.dec[i], &g)?;
        }
        if let Some(v) = &cache.vae {
            let w = self.cfg.kl_weight / batch as f64;
            let f = v.mu.features();
            let mut head = Vec::with_capacity(2 * g.len());
            for (loc, dz) in g.data.chunks_exact(f).enumerate() {
                let base = loc * f;
                for c in 0..f {
                    let mu = v.mu.data[base + c] as f64;
                    head.push((dz[c] as f64 + w * mu) as f32);
                }
                for c in 0..f {
                    let lv = v.lv.data[base + c] as f64;
                    let dlv = dz[c] as f64 * 0.5 * (0.5 * lv).exp() * v.xi[base + c] as f64 + w * 0.5 * (lv.exp() - 1.0);
                    head.push(dlv as f32);
                }
            }
            let mut shape = g.shape.clone();
            *shape.last_mut().unwrap() = 2 * f;
            g = Tensor::from_vec(&shape, head)?;
        }
        for i in (0..=k).rev() {
            g = self.encoder[i].backward(&cache.enc[i], &g)?;
        }
        Ok(())
    }

    fn zero_grad(&mut self) {
        self.encoder.iter_mut().chain(self.decoder.iter_mut()).for_each(|s| s.zero_grad());
    }

    fn optimizer_step(&mut self, opt: &mut Optimizer, k: usize) -> Result<()> {
        let mut params: Vec<_> = self.encoder[..=k]
            .iter_mut()
            .flat_map(|s| s.params_mut())
            .chain(self.decoder[..=k].iter_mut().flat_map(|s| s.params_mut()))
            .collect();
        opt.step(&mut params)?;
        Ok(())
    }

    /// Mean L2 reconstruction loss of the sub-stack `0..=k` (the full stack
    /// for `k = depth`), without sampling.
    pub fn validation_loss(&self, frames: &[&[f32]], k: usize, batch: usize) -> Result<f64> {
        if frames.is_empty() {
            return Ok(f64::NAN);
        }
        let mut total = 0.0;
        for chunk in frames.chunks(batch.max(1)) {
            let x = self.batch_tensor(chunk)?;
            let (y, _, _) = self.forward_stack(&x, k, None)?;
            total += loss::l2(&y, &x)?.0 * chunk.len() as f64;
        }
        Ok(total / frames.len() as f64)
    }

    fn run_epoch(&mut self, data: &AeData, k: usize, opt: &mut Optimizer, batch: usize, rng: &mut ChaCha8Rng) -> Result<f64> {
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        order.shuffle(rng);
        let dims = grid_dims(self.cfg.dim, self.cfg.resolution);
        let variants = mirror_variants(self.cfg.dim);
        let mut total = 0.0;
        for idx in order.chunks(batch.max(1)) {
            let mut owned = Vec::with_capacity(idx.len());
            for i in idx {
                let frame = data.train[*i];
                let v = if data.augment { rng.gen_range(0..variants.len()) } else { 0 };
                owned.push(if v == 0 { frame.to_vec() } else { augment_mirror(frame, dims, data.quantity, &variants[v])? });
            }
            let refs: Vec<&[f32]> = owned.iter().map(|f| f.as_slice()).collect();
            let x = self.batch_tensor(&refs)?;
            let (y, cache, kl) = self.forward_stack(&x, k, Some(rng))?;
            let (l, dy) = loss::l2(&y, &x)?;
            let l = l + self.cfg.kl_weight * kl;
            if !l.is_finite() {
                return Err(CoreError::Training(format!("non-finite autoencoder loss at stage {k}")));
            }
            self.zero_grad();
            self.backward_stack(&cache, &dy, k, idx.len())?;
            self.optimizer_step(opt, k)?;
            total += l * idx.len() as f64;
        }
        Ok(total / data.train.len().max(1) as f64)
    }

    /// Trains the sub-stack `0..=k` jointly. Stages must run in order.
    pub fn pretrain_stage(&mut self, k: usize, data: &AeData, epochs: usize, opts: &AeTrainOptions) -> Result<StageLog> {
        if k != self.pretrained_stages || k > self.cfg.depth {
            return Err(CoreError::Usage(format!(
                "pretraining stage {k} requested, next stage is {}",
                self.pretrained_stages
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ (0x9e37 + k as u64));
        let mut opt = Optimizer::new(OptimConfig { decay: opts.decay, ..OptimConfig::adam(opts.lr) })?;
        let val_before = self.validation_loss(&data.validation, k, opts.batch)?;
        for e in 0..epochs {
            let l = self.run_epoch(data, k, &mut opt, opts.batch, &mut rng)?;
            log::info!("pretrain stage {k} epoch {e}: train {l:.3e}");
        }
        let val_after = self.validation_loss(&data.validation, k, opts.batch)?;
        log::info!("pretrain stage {k}: validation {val_before:.3e} -> {val_after:.3e}");
        self.pretrained_stages = k + 1;
        Ok(StageLog { stage: k, val_before, val_after })
    }

    /// Runs every pretraining stage, spreading `total_epochs` evenly
    /// (at least one epoch per stage).
    pub fn pretrain_greedy(&mut self, data: &AeData, total_epochs: usize, opts: &AeTrainOptions) -> Result<Vec<StageLog>> {
        let stages = self.cfg.stages();
        let mut logs = Vec::with_capacity(stages);
        for k in self.pretrained_stages..stages {
            let epochs = (total_epochs / stages + usize::from(k < total_epochs % stages)).max(1);
            logs.push(self.pretrain_stage(k, data, epochs, opts)?);
        }
        Ok(logs)
    }

    /// Full-stack training. Requires completed pretraining unless
    /// `skip_pretrain` is set. With early stopping the best validation
    /// epoch is restored; a non-finite loss restores it and errors.
    pub fn train(&mut self, data: &AeData, opts: &AeTrainOptions, skip_pretrain: bool) -> Result<TrainLog> {
        if !skip_pretrain && self.pretrained_stages < self.cfg.stages() {
            return Err(CoreError::Usage(format!(
                "{} of {} pretraining stages done; pretrain first or skip explicitly",
                self.pretrained_stages,
                self.cfg.stages()
            )));
        }
        let k = self.cfg.depth;
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x7a11);
        let mut opt = Optimizer::new(OptimConfig { decay: opts.decay, ..OptimConfig::adam(opts.lr) })?;
        let mut log = TrainLog::default();
        let mut best: Option<(f64, Vec<Sequential<f32>>, Vec<Sequential<f32>>)> = None;
        for e in 0..opts.epochs {
            let train_loss = match self.run_epoch(data, k, &mut opt, opts.batch, &mut rng) {
                Ok(l) => l,
                Err(err) => {
                    if let Some((_, enc, dec)) = best {
                        self.encoder = enc;
                        self.decoder = dec;
                    }
                    return Err(err);
                }
            };
            let val_loss = self.validation_loss(&data.validation, k, opts.batch)?;
            let monitored = if val_loss.is_nan() { train_loss } else { val_loss };
            if opts.early_stopping && best.as_ref().map_or(true, |b| monitored < b.0) {
                best = Some((monitored, self.encoder.clone(), self.decoder.clone()));
                log.best_epoch = Some(e);
            }
            let best_val_loss = best.as_ref().map_or(monitored, |b| b.0);
            log::info!("ae epoch {e}: train {train_loss:.3e} validation {val_loss:.3e}");
            log.epochs.push(EpochLog { train_loss, val_loss, best_val_loss });
        }
        if let Some((_, enc, dec)) = best {
            self.encoder = enc;
            self.decoder = dec;
        }
        self.trained = true;
        Ok(log)
    }

    /// Encodes a batch of normalised frames into codes of length `m_s`.
    /// The variational model returns the mean.
    pub fn encode_batch(&self, frames: &[&[f32]]) -> Result<Vec<Vec<f32>>> {
        let mut h = self.batch_tensor(frames)?;
        for stage in &self.encoder {
            h = stage.infer(&h)?;
        }
        if self.cfg.variational {
            h = self.split_head(&h).0;
        }
        let m = self.latent_size();
        Ok(h.data.chunks_exact(m).map(|c| c.to_vec()).collect())
    }

    pub fn encode(&self, frame: &[f32]) -> Result<Vec<f32>> {
        Ok(self.encode_batch(&[frame])?.remove(0))
    }

    pub fn decode_batch(&self, codes: &[&[f32]]) -> Result<Vec<Vec<f32>>> {
        let m = self.latent_size();
        let mut data = Vec::with_capacity(codes.len() * m);
        for c in codes {
            if c.len() != m {
                return Err(CoreError::Data(format!("code of length {}, expected {m}", c.len())));
            }
            data.extend_from_slice(c);
        }
        let feats = self.cfg.features()[self.cfg.depth];
        let mut h = Tensor::from_vec(&self.cfg.shape(codes.len(), self.cfg.latent_extent(), feats), data)?;
        for stage in self.decoder.iter().rev() {
            h = stage.infer(&h)?;
        }
        let n = self.cfg.frame_len();
        Ok(h.data.chunks_exact(n).map(|c| c.to_vec()).collect())
    }

    pub fn decode(&self, code: &[f32]) -> Result<Vec<f32>> {
        Ok(self.decode_batch(&[code])?.remove(0))
    }

    fn meta(&self) -> Vec<(String, String)> {
        let mut meta = self.cfg.to_meta();
        meta.push(("ae.pretrained_stages".into(), self.pretrained_stages.to_string()));
        meta.push(("ae.trained".into(), self.trained.to_string()));
        for (c, s) in self.scales.iter().enumerate() {
            meta.push((format!("normalization.scale_{c}"), s.to_string()));
        }
        meta
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let groups: Vec<&Sequential<f32>> = self.encoder.iter().chain(&self.decoder).collect();
        Ok(checkpoint::to_bytes(&groups, &self.meta())?)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        Self::from_checkpoint(checkpoint::from_bytes(buf)?)
    }

    fn from_checkpoint(ck: checkpoint::Checkpoint) -> Result<Self> {
        let cfg = AeConfig::from_meta(&ck)?;
        cfg.validate()?;
        let stages = cfg.stages();
        if ck.groups.len() != 2 * stages {
            return Err(CoreError::Data("autoencoder checkpoint has the wrong number of stages".into()));
        }
        for i in 0..stages {
            if ck.groups[i].specs() != cfg.encoder_specs(i) || ck.groups[stages + i].specs() != cfg.decoder_specs(i) {
                return Err(CoreError::Data(format!("autoencoder checkpoint stage {i} does not match its config")));
            }
        }
        let scales = (0..cfg.channels)
            .map(|c| {
                ck.meta_value(&format!("normalization.scale_{c}"))
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| CoreError::Data(format!("missing normalisation scale {c}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        let pretrained_stages = ck.meta_value("ae.pretrained_stages").and_then(|v| v.parse().ok()).unwrap_or(0);
        let trained = ck.meta_value("ae.trained") == Some("true");
        let mut groups = ck.groups;
        let decoder = groups.split_off(stages);
        Ok(Self { cfg, scales, pretrained_stages, trained, encoder: groups, decoder })
    }

    /// Writes the weights and a `key: value` sidecar next to them.
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        std::fs::write(path.with_extension("txt"), self.sidecar().render())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = std::fs::read(path).map_err(|e| CoreError::Data(format!("cannot read {}: {e}", path.display())))?;
        Self::from_bytes(&buf)
    }

    pub fn sidecar(&self) -> KvDoc {
        let mut doc = KvDoc::default();
        for (k, v) in self.meta() {
            let (section, key) = k.split_once('.').unwrap_or(("ae", &k));
            doc.set(section, key, v);
        }
        doc.set("ae", "latent_size", self.latent_size());
        doc.set("ae", "features", format!("{:?}", self.cfg.features()));
        doc.set("ae", "weights", self.weight_count());
        doc
    }
}

/// Encodes every frame of every scene; returns one code sequence per scene.
pub fn encode_dataset(ds: &Dataset, ae: &Autoencoder) -> Result<Vec<Vec<Vec<f32>>>> {
    let m = &ds.meta;
    if m.dim != ae.cfg.dim || m.resolution != ae.cfg.resolution || m.channels != ae.cfg.channels {
        return Err(CoreError::Config(format!(
            "dataset ({}D, {}^{}, {} channels) does not match the autoencoder ({}D, {}, {} channels)",
            m.dim, m.resolution, m.dim, m.channels, ae.cfg.dim, ae.cfg.resolution, ae.cfg.channels
        )));
    }
    ds.scenes
        .iter()
        .map(|store| {
            let frames: Vec<&[f32]> = (0..store.len()).map(|i| store.frame(i)).collect();
            let mut codes = Vec::with_capacity(frames.len());
            for chunk in frames.chunks(32) {
                codes.extend(ae.encode_batch(chunk)?);
            }
            Ok(codes)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg3(r: usize) -> AeConfig {
        AeConfig { dim: 3, resolution: r, channels: 1, depth: 5, base_features: 32, max_features: 0, variational: false, kl_weight: 1e-3 }
    }

    #[test]
    fn layer_table_3d() {
        let c = cfg3(64);
        assert_eq!(c.features(), vec![32, 64, 128, 256, 512, 1024]);
        assert_eq!(c.latent_size(), 1024);
        assert_eq!(c.compression(), 256.0);
        assert_eq!(cfg3(128).latent_size(), 8192);
    }

    #[test]
    fn desk_2d_latent() {
        let c = AeConfig { dim: 2, ..cfg3(64) };
        assert_eq!(c.features(), vec![32, 64, 128, 256, 256, 256]);
        assert_eq!(c.latent_size(), 256);
        assert_eq!(c.compression(), 16.0);
        assert!(AeConfig { resolution: 96, ..c }.validate().is_err());
    }

    #[test]
    fn mirror_shapes_agree() {
        let c = AeConfig { dim: 2, resolution: 64, ..cfg3(64) };
        let ae = Autoencoder::build(c.clone(), 1).unwrap();
        let mut h = Tensor::<f32>::zeros(&c.shape(1, 64, 1));
        for i in 0..c.stages() {
            let y = ae.encoder[i].infer(&h).unwrap();
            let back = ae.decoder[i].infer(&y).unwrap();
            assert_eq!(back.shape, h.shape, "stage {i}");
            h = y;
        }
    }

    #[test]
    fn kl_of_matched_gaussian_is_zero() {
        assert_eq!(kl_divergence(&[0.0; 8], &[0.0; 8], 2), 0.0);
        assert!(kl_divergence(&[0.3, -1.0], &[0.5, -2.0], 1) > 0.0);
    }

    #[test]
    fn variational_differs_only_in_head() {
        let c = AeConfig { dim: 2, resolution: 32, depth: 3, ..cfg3(32) };
        let plain = Autoencoder::build(c.clone(), 1).unwrap();
        let vae = Autoencoder::build_variational(c, 1).unwrap();
        for i in 0..3 {
            assert_eq!(plain.encoder[i].specs(), vae.encoder[i].specs());
        }
        assert_eq!(vae.encoder[3].specs()[0].n_o, 2 * plain.encoder[3].specs()[0].n_o);
        assert_eq!(plain.decoder.iter().map(|d| d.specs()).collect::<Vec<_>>(), vae.decoder.iter().map(|d| d.specs()).collect::<Vec<_>>());
    }
}
