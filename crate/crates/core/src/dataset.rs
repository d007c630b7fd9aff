//! Frame storage, dataset metadata, generation and normalisation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use lsp_fluid::{step_reference, SolverConfig};

use crate::config::{Quantity, SceneKindName};
use crate::error::{CoreError, Result};
use crate::scene::{extract_frame, random_scene, SceneSpec};

pub const FRAME_MAGIC: &[u8; 4] = b"LSPF";
pub const FRAME_VERSION: u32 = 1;
const FRAME_HEADER: usize = 4 + 4 * 7;

/// A sequence of equally shaped frames.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameStore {
    pub dim: usize,
    pub extents: [usize; 3],
    pub channels: usize,
    pub data: Vec<f32>,
}

impl FrameStore {
    pub fn new(dim: usize, extents: [usize; 3], channels: usize) -> Self {
        Self { dim, extents, channels, data: Vec::new() }
    }

    pub fn frame_len(&self) -> usize {
        self.extents.iter().product::<usize>() * self.channels
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.frame_len().max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn frame(&self, i: usize) -> &[f32] {
        let n = self.frame_len();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn push(&mut self, frame: &[f32]) -> Result<()> {
        if frame.len() != self.frame_len() {
            return Err(CoreError::Data(format!("frame of {} values, store expects {}", frame.len(), self.frame_len())));
        }
        self.data.extend_from_slice(frame);
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(FRAME_HEADER + self.data.len() * 4);
        out.extend_from_slice(FRAME_MAGIC);
        for v in [FRAME_VERSION as usize, self.dim, self.extents[0], self.extents[1], self.extents[2], self.channels, self.len()] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let bad = |m: &str| Err(CoreError::Data(format!("frame store: {m}")));
        if buf.len() < FRAME_HEADER || &buf[..4] != FRAME_MAGIC {
            return bad("missing LSPF header");
        }
        let word = |i: usize| u32::from_le_bytes(buf[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        if word(0) != FRAME_VERSION as usize {
            return bad("unsupported version");
        }
        let store = FrameStore::new(word(1), [word(2), word(3), word(4)], word(5));
        let frames = word(6);
        if buf.len() != FRAME_HEADER + frames * store.frame_len() * 4 {
            return bad("file length does not match the header");
        }
        let data = buf[FRAME_HEADER..].chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        Ok(FrameStore { data, ..store })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_bytes())?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Line-oriented `key: value` text with `[section]` headers.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct KvDoc {
    pub sections: BTreeMap<String, Vec<(String, String)>>,
}

impl KvDoc {
    pub fn set(&mut self, section: &str, key: &str, value: impl ToString) {
        let entries = self.sections.entry(section.to_string()).or_default();
        match entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value.to_string(),
            None => entries.push((key.to_string(), value.to_string())),
        }
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section)?.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn require<T: std::str::FromStr>(&self, section: &str, key: &str) -> Result<T> {
        let raw = self.get(section, key).ok_or_else(|| CoreError::Data(format!("missing [{section}] {key}")))?;
        raw.parse().map_err(|_| CoreError::Data(format!("bad value for [{section}] {key}: `{raw}`")))
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (name, entries) in &self.sections {
            let _ = writeln!(out, "[{name}]");
            for (k, v) in entries {
                let _ = writeln!(out, "{k}: {v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut doc = KvDoc::default();
        let mut section = String::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                doc.sections.entry(section.clone()).or_default();
                continue;
            }
            let Some((k, v)) = line.split_once(':') else {
                return Err(CoreError::Data(format!("line {}: expected `key: value`", n + 1)));
            };
            doc.set(&section, k.trim(), v.trim());
        }
        Ok(doc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [Split::Train, Split::Validation, Split::Test].into_iter().find(|v| v.name() == s)
    }
}

/// Assigns 80 / 10 / 10 percent of the scenes to train / validation / test.
pub fn assign_splits(n: usize, seed: u64) -> Vec<Split> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5911));
    let n_train = (0.8 * n as f64).round() as usize;
    let n_val = (0.1 * n as f64).round() as usize;
    let mut out = vec![Split::Test; n];
    for (rank, scene) in order.into_iter().enumerate() {
        out[scene] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Validation
        } else {
            Split::Test
        };
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetMeta {
    pub kind: SceneKindName,
    pub quantity: Quantity,
    pub dim: usize,
    pub resolution: usize,
    pub channels: usize,
    pub n_w: usize,
    pub n_t: usize,
    pub seeds: Vec<u64>,
    pub splits: Vec<Split>,
    /// Per-channel scale; frames hold `raw / scale` once normalised.
    pub scales: Vec<f64>,
    pub normalized: bool,
    pub augment: bool,
}

impl DatasetMeta {
    pub fn n_s(&self) -> usize {
        self.seeds.len()
    }

    pub fn scenes_in(&self, split: Split) -> Vec<usize> {
        (0..self.n_s()).filter(|i| self.splits[*i] == split).collect()
    }

    pub fn to_doc(&self) -> KvDoc {
        let mut d = KvDoc::default();
        d.set("dataset", "kind", format!("{:?}", self.kind).to_lowercase());
        d.set("dataset", "quantity", self.quantity.name());
        d.set("dataset", "dim", self.dim);
        d.set("dataset", "resolution", self.resolution);
        d.set("dataset", "channels", self.channels);
        d.set("dataset", "n_s", self.n_s());
        d.set("dataset", "n_w", self.n_w);
        d.set("dataset", "n_t", self.n_t);
        d.set("dataset", "entry_count_includes_augmentation", false);
        d.set("normalization", "normalized", self.normalized);
        for (c, s) in self.scales.iter().enumerate() {
            d.set("normalization", &format!("scale_{c}"), s);
        }
        d.set("augmentation", "mirror", self.augment);
        d.set("augmentation", "applied", "on the fly, training split only");
        for (i, (seed, split)) in self.seeds.iter().zip(&self.splits).enumerate() {
            d.set("scenes", &format!("scene_{i:04}"), format!("{} {}", split.name(), seed));
        }
        d
    }

    pub fn from_doc(d: &KvDoc) -> Result<Self> {
        let quantity = Quantity::parse(&d.require::<String>("dataset", "quantity")?)
            .ok_or_else(|| CoreError::Data("unknown quantity".into()))?;
        let kind = match d.require::<String>("dataset", "kind")?.as_str() {
            "liquid" => SceneKindName::Liquid,
            "smoke" => SceneKindName::Smoke,
            k => return Err(CoreError::Data(format!("unknown scene kind {k}"))),
        };
        let channels: usize = d.require("dataset", "channels")?;
        let n_s: usize = d.require("dataset", "n_s")?;
        let mut seeds = Vec::with_capacity(n_s);
        let mut splits = Vec::with_capacity(n_s);
        for i in 0..n_s {
            let raw: String = d.require("scenes", &format!("scene_{i:04}"))?;
            let (s, seed) = raw.split_once(' ').ok_or_else(|| CoreError::Data(format!("bad scene entry `{raw}`")))?;
            splits.push(Split::parse(s).ok_or_else(|| CoreError::Data(format!("bad split `{s}`")))?);
            seeds.push(seed.parse().map_err(|_| CoreError::Data(format!("bad seed `{seed}`")))?);
        }
        let scales = (0..channels).map(|c| d.require("normalization", &format!("scale_{c}"))).collect::<Result<Vec<f64>>>()?;
        if scales.iter().any(|s| !(*s > 0.0)) {
            return Err(CoreError::Data("normalisation scales must be positive".into()));
        }
        Ok(Self {
            kind,
            quantity,
            dim: d.require("dataset", "dim")?,
            resolution: d.require("dataset", "resolution")?,
            channels,
            n_w: d.require("dataset", "n_w")?,
            n_t: d.require("dataset", "n_t")?,
            seeds,
            splits,
            scales,
            normalized: d.require("normalization", "normalized")?,
            augment: d.require("augmentation", "mirror")?,
        })
    }
}

/// Solver statistics of one generated scene.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SceneLog {
    pub unconverged_steps: Vec<usize>,
    pub max_cfl: f64,
    pub max_divergence: f64,
    pub mean_kinetic_energy: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub scenes: Vec<FrameStore>,
    pub logs: Vec<SceneLog>,
}

pub const MAX_CONSECUTIVE_FAILURES: usize = 3;

/// Runs `n_w + n_t` reference steps and keeps the last `n_t` frames.
pub fn generate_scene(spec: &SceneSpec, r: usize, cfg: &SolverConfig, quantity: Quantity, n_w: usize, n_t: usize) -> Result<(FrameStore, SceneLog)> {
    let mut state = spec.initial_state(r, cfg)?;
    let dims = state.dims();
    let mut store = FrameStore::new(dims.dim, dims.extents, quantity.channels(dims.dim));
    let mut log = SceneLog::default();
    let mut streak = 0;
    for step in 0..n_w + n_t {
        let (next, report) = step_reference(state, cfg)?;
        state = next;
        if !state.is_finite() {
            return Err(CoreError::Simulation(format!("scene {}: non-finite state at step {step}", spec.seed)));
        }
        if report.converged {
            streak = 0;
        } else {
            log.unconverged_steps.push(step);
            streak += 1;
            if streak >= MAX_CONSECUTIVE_FAILURES {
                return Err(CoreError::Simulation(format!(
                    "scene {}: pressure solve failed {streak} steps in a row (step {step})",
                    spec.seed
                )));
            }
        }
        log.max_cfl = log.max_cfl.max(report.cfl);
        log.max_divergence = log.max_divergence.max(report.max_divergence);
        if step >= n_w {
            store.push(&extract_frame(&state, quantity, cfg)?)?;
            log.mean_kinetic_energy.push(mean_kinetic_energy(&state));
        }
    }
    Ok((store, log))
}

fn mean_kinetic_energy(state: &lsp_fluid::SimState) -> f64 {
    let dims = state.dims();
    let mut sum = 0.0;
    let mut n = 0usize;
    let centred: Vec<_> = (0..dims.dim).map(|a| state.velocity.cell_centered(a)).collect();
    for idx in 0..dims.cell_count() {
        if state.flags.cells[idx] == lsp_fluid::CellType::Fluid {
            sum += 0.5 * centred.iter().map(|g| g.data[idx] * g.data[idx]).sum::<f64>();
            n += 1;
        }
    }
    sum / n.max(1) as f64
}

/// Scene seeds derived from the global seed; index `i` always maps to the
/// same seed, so held-out scenes can use indices past the dataset.
pub fn scene_seed(global: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(global);
    rng.set_stream(index as u64 + 1);
    rng.gen()
}

pub struct GenerateParams<'a> {
    pub kind: SceneKindName,
    pub dim: usize,
    pub resolution: usize,
    pub quantity: Quantity,
    pub n_w: usize,
    pub n_t: usize,
    pub augment: bool,
    pub solver: &'a SolverConfig,
}

/// Generates the scenes with the given seeds (in parallel over scenes).
pub fn generate_dataset(seeds: &[u64], split_seed: u64, p: &GenerateParams) -> Result<Dataset> {
    let results: Vec<Result<(FrameStore, SceneLog)>> = seeds
        .par_iter()
        .map(|seed| {
            let spec = random_scene(p.kind, p.dim, *seed);
            generate_scene(&spec, p.resolution, p.solver, p.quantity, p.n_w, p.n_t)
        })
        .collect();
    let mut scenes = Vec::with_capacity(seeds.len());
    let mut logs = Vec::with_capacity(seeds.len());
    for r in results {
        let (s, l) = r?;
        scenes.push(s);
        logs.push(l);
    }
    let channels = p.quantity.channels(p.dim);
    let meta = DatasetMeta {
        kind: p.kind,
        quantity: p.quantity,
        dim: p.dim,
        resolution: p.resolution,
        channels,
        n_w: p.n_w,
        n_t: p.n_t,
        seeds: seeds.to_vec(),
        splits: assign_splits(seeds.len(), split_seed),
        scales: vec![1.0; channels],
        normalized: false,
        augment: p.augment,
    };
    Ok(Dataset { meta, scenes, logs })
}

impl Dataset {
    /// Divides every channel by its max-abs over the training split.
    pub fn normalize(&mut self) -> Result<()> {
        if self.meta.normalized {
            return Err(CoreError::Usage("dataset is already normalised".into()));
        }
        let c = self.meta.channels;
        let mut scales = vec![0.0f64; c];
        for i in self.meta.scenes_in(Split::Train) {
            for (k, v) in self.scenes[i].data.iter().enumerate() {
                scales[k % c] = scales[k % c].max(v.abs() as f64);
            }
        }
        for (ch, s) in scales.iter_mut().enumerate() {
            if *s == 0.0 {
                log::warn!("channel {ch} is zero on the training split; leaving it unscaled");
                *s = 1.0;
            }
        }
        for store in &mut self.scenes {
            for (k, v) in store.data.iter_mut().enumerate() {
                *v = (*v as f64 / scales[k % c]) as f32;
            }
        }
        self.meta.scales = scales;
        self.meta.normalized = true;
        Ok(())
    }

    /// `dataset_root/meta.txt` plus `scene_%04d/{frames.lspf, meta.txt}`.
    pub fn save(&self, root: &Path) -> Result<()> {
        std::fs::create_dir_all(root)?;
        std::fs::write(root.join("meta.txt"), self.meta.to_doc().render())?;
        for (i, store) in self.scenes.iter().enumerate() {
            let dir = root.join(format!("scene_{i:04}"));
            std::fs::create_dir_all(&dir)?;
            store.save(&dir.join("frames.lspf"))?;
            let mut doc = KvDoc::default();
            let spec = random_scene(self.meta.kind, self.meta.dim, self.meta.seeds[i]);
            for (k, v) in spec.describe() {
                doc.set("scene", &k, v);
            }
            doc.set("scene", "split", self.meta.splits[i].name());
            if let Some(log) = self.logs.get(i) {
                doc.set("solver", "unconverged_steps", format!("{:?}", log.unconverged_steps));
                doc.set("solver", "max_cfl", log.max_cfl);
                doc.set("solver", "max_divergence", log.max_divergence);
                let ke = &log.mean_kinetic_energy;
                doc.set("solver", "mean_kinetic_energy_max", ke.iter().fold(0.0f64, |m, v| m.max(*v)));
            }
            std::fs::write(dir.join("meta.txt"), doc.render())?;
        }
        Ok(())
    }

    pub fn load(root: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(root.join("meta.txt"))
            .map_err(|e| CoreError::Data(format!("cannot read dataset metadata in {}: {e}", root.display())))?;
        let meta = DatasetMeta::from_doc(&KvDoc::parse(&text)?)?;
        let mut scenes = Vec::with_capacity(meta.n_s());
        for i in 0..meta.n_s() {
            let store = FrameStore::load(&root.join(format!("scene_{i:04}")).join("frames.lspf"))?;
            if store.channels != meta.channels || store.len() != meta.n_t {
                return Err(CoreError::Data(format!("scene {i} does not match the dataset metadata")));
            }
            scenes.push(store);
        }
        Ok(Self { meta, scenes, logs: Vec::new() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_store_round_trip() {
        let mut s = FrameStore::new(2, [3, 2, 1], 2);
        s.push(&[0.1, -2.5, f32::MIN_POSITIVE, 7.0, 1e-30, -0.0, 3.0, 4.0, 5.0, 6.0, 7.5, 8.0]).unwrap();
        s.push(&[1.0; 12]).unwrap();
        assert!(s.push(&[1.0; 5]).is_err());
        let bytes = s.to_bytes();
        assert_eq!(bytes.len(), FRAME_HEADER + 2 * 12 * 4);
        let back = FrameStore::from_bytes(&bytes).unwrap();
        assert_eq!(back.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), s.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(back.extents, s.extents);
        assert!(FrameStore::from_bytes(&bytes[..bytes.len() - 2]).is_err());
    }

    #[test]
    fn splits_partition_80_10_10() {
        let s = assign_splits(50, 3);
        let count = |k| s.iter().filter(|v| **v == k).count();
        assert_eq!((count(Split::Train), count(Split::Validation), count(Split::Test)), (40, 5, 5));
        assert_eq!(s, assign_splits(50, 3));
    }

    #[test]
    fn kv_doc_round_trip() {
        let mut d = KvDoc::default();
        d.set("a", "x", 1.5);
        d.set("b", "y", "hello world");
        let back = KvDoc::parse(&d.render()).unwrap();
        assert_eq!(back, d);
        assert!(KvDoc::parse("[a]\nnot a pair").is_err());
    }

    #[test]
    fn desk_dataset_size() {
        // 50 scenes x 100 frames of 64^2 f32 values
        let store = FrameStore { dim: 2, extents: [64, 64, 1], channels: 1, data: vec![0.0; 100 * 64 * 64] };
        let total = 50 * store.to_bytes().len();
        assert!((total as f64 / 1e6 - 81.9).abs() < 0.1, "{total}");
    }
}
