//! Run configuration, read from TOML with `[section]` headers.
//!
//! Every field has a default, so an empty file is a valid configuration.
//! Unknown keys are rejected.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use lsp_fluid::SolverConfig;

use crate::error::{CoreError, Result};

/// Prediction interval: number of network steps between two solver steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Interval {
    Finite(u32),
    Infinite,
}

impl Interval {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inf" | "infinity" | "∞" => Some(Interval::Infinite),
            t => t.parse().ok().map(Interval::Finite),
        }
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Interval::Finite(n) => write!(f, "{n}"),
            Interval::Infinite => write!(f, "inf"),
        }
    }
}

impl std::str::FromStr for Interval {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Interval::parse(s).ok_or_else(|| format!("expected a non-negative integer or `inf`, got `{s}`"))
    }
}

impl Serialize for Interval {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Interval::Finite(n) => s.serialize_u32(*n),
            Interval::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Interval {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = Interval;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a non-negative integer or `inf`")
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Interval, E> {
                u32::try_from(v).map(Interval::Finite).map_err(|_| E::custom(format!("interval {v} out of range")))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Interval, E> {
                u32::try_from(v).map(Interval::Finite).map_err(|_| E::custom(format!("interval {v} out of range")))
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Interval, E> {
                if v == f64::INFINITY {
                    Ok(Interval::Infinite)
                } else {
                    Err(E::custom(format!("interval must be an integer or inf, got {v}")))
                }
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Interval, E> {
                Interval::parse(v).ok_or_else(|| E::custom(format!("bad interval `{v}`")))
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    /// Total pressure `p_t`, one channel.
    Total,
    /// Hydrostatic and dynamic pressure `(p_s, p_d)`, two channels.
    Split,
    /// Cell-centred velocity, one channel per axis.
    Velocity,
}

impl Quantity {
    pub fn channels(self, dim: usize) -> usize {
        match self {
            Quantity::Total => 1,
            Quantity::Split => 2,
            Quantity::Velocity => dim,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Quantity::Total => "total",
            Quantity::Split => "split",
            Quantity::Velocity => "velocity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "total" | "p_t" => Some(Quantity::Total),
            "split" => Some(Quantity::Split),
            "velocity" | "u" => Some(Quantity::Velocity),
            _ => None,
        }
    }

    pub fn is_pressure(self) -> bool {
        self != Quantity::Velocity
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKindName {
    Liquid,
    Smoke,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Hybrid,
    #[serde(rename = "fr")]
    FullyRecurrent,
    #[serde(rename = "hybrid-v2")]
    HybridV2,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Hybrid => "hybrid",
            Variant::FullyRecurrent => "fr",
            Variant::HybridV2 => "hybrid-v2",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "hybrid" => Some(Variant::Hybrid),
            "fr" | "fully_recurrent" => Some(Variant::FullyRecurrent),
            "hybrid-v2" | "v2" => Some(Variant::HybridV2),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub dt: f64,
    pub gravity: [f64; 3],
    pub cg_tolerance: f64,
    pub cg_max_iters: usize,
    pub narrow_band: usize,
    pub jacobi_align_iters: usize,
    pub flip_blend: f64,
    pub density: f64,
    pub particle_jitter: f64,
    /// Smoke buoyancy; unset means `0.1 |g|`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub buoyancy: Option<f64>,
}

impl Default for SolverSection {
    fn default() -> Self {
        let s = SolverConfig::default();
        Self {
            dt: s.dt,
            gravity: s.gravity,
            cg_tolerance: s.cg_tolerance,
            cg_max_iters: s.cg_max_iters,
            narrow_band: s.narrow_band,
            jacobi_align_iters: s.jacobi_align_iters,
            flip_blend: s.flip_blend,
            density: s.density,
            particle_jitter: s.particle_jitter,
            buoyancy: s.buoyancy,
        }
    }
}

impl SolverSection {
    pub fn to_solver(&self) -> SolverConfig {
        SolverConfig {
            dt: self.dt,
            gravity: self.gravity,
            cg_tolerance: self.cg_tolerance,
            cg_max_iters: self.cg_max_iters,
            narrow_band: self.narrow_band,
            jacobi_align_iters: self.jacobi_align_iters,
            viscosity: 0.0,
            flip_blend: self.flip_blend,
            density: self.density,
            buoyancy: self.buoyancy,
            particle_jitter: self.particle_jitter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub kind: SceneKindName,
    pub dim: usize,
    pub resolution: usize,
    /// Number of scenes `n_s`.
    pub scenes: usize,
    /// Discarded leading steps `n_w`.
    pub warmup_steps: usize,
    /// Stored steps per scene `n_t`.
    pub steps: usize,
    pub quantity: Quantity,
    /// Mirror augmentation during training.
    pub augment: bool,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            kind: SceneKindName::Liquid,
            dim: 2,
            resolution: 64,
            scenes: 50,
            warmup_steps: 30,
            steps: 100,
            quantity: Quantity::Total,
            augment: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AeSection {
    /// Depth `l` of the latent layer; the network has `l + 1` stages.
    pub depth: usize,
    pub base_features: usize,
    /// Feature cap; 0 picks 256 in 2D and 1024 in 3D.
    pub max_features: usize,
    pub variational: bool,
    pub kl_weight: f64,
    /// Total pretraining epochs, spread evenly over the stages.
    pub pretrain_epochs: usize,
    pub epochs: usize,
    pub lr: f64,
    pub decay: f64,
    pub batch: usize,
    /// Restore the epoch with the best validation loss.
    pub early_stopping: bool,
}

impl Default for AeSection {
    fn default() -> Self {
        Self {
            depth: 5,
            base_features: 32,
            max_features: 0,
            variational: false,
            kl_weight: 1e-3,
            pretrain_epochs: 6,
            epochs: 25,
            lr: 1e-3,
            decay: 5e-3,
            batch: 32,
            early_stopping: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorSection {
    /// History length minus one; the network reads `n + 1` codes.
    pub history: usize,
    /// Output steps `o`.
    pub outputs: usize,
    /// Temporal context size `m_t`.
    pub context: usize,
    /// Decoder LSTM size `m_td`.
    pub decoder: usize,
    pub variant: Variant,
    pub dropout: f64,
    pub recurrent_dropout: f64,
    pub lr: f64,
    pub decay: f64,
    pub epochs: usize,
    pub batch: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clip_norm: Option<f64>,
    pub early_stopping: bool,
}

impl Default for PredictorSection {
    fn default() -> Self {
        Self {
            history: 6,
            outputs: 1,
            context: 128,
            decoder: 256,
            variant: Variant::Hybrid,
            dropout: 1.32e-2,
            recurrent_dropout: 0.385,
            lr: 1.26e-4,
            decay: 3.34e-4,
            epochs: 50,
            batch: 32,
            clip_norm: None,
            early_stopping: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HybridSection {
    pub ip: Interval,
    /// Total simulated steps, counted from the initial state.
    pub steps: usize,
}

impl Default for HybridSection {
    fn default() -> Self {
        Self { ip: Interval::Finite(4), steps: 130 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// First measured step.
    pub start: usize,
    /// Number of held-out scenes.
    pub scenes: usize,
    /// Step at which the surface error is read out.
    pub surface_step: usize,
    pub intervals: Vec<Interval>,
    pub bench_resolutions: Vec<usize>,
    pub bench_intervals: Vec<Interval>,
    pub bench_steps: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        use Interval::*;
        Self {
            start: 50,
            scenes: 10,
            surface_step: 100,
            intervals: vec![Finite(4), Finite(9), Finite(14), Infinite],
            bench_resolutions: vec![128, 256],
            bench_intervals: vec![Finite(0), Finite(4), Finite(9), Finite(14), Infinite],
            bench_steps: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output: PathBuf,
    pub threads: usize,
    pub solver: SolverSection,
    pub dataset: DatasetSection,
    pub ae: AeSection,
    pub predictor: PredictorSection,
    pub hybrid: HybridSection,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            output: PathBuf::from("lsp-run"),
            threads: 1,
            solver: SolverSection::default(),
            dataset: DatasetSection::default(),
            ae: AeSection::default(),
            predictor: PredictorSection::default(),
            hybrid: HybridSection::default(),
            eval: EvalSection::default(),
        }
    }
}

impl RunConfig {
    pub fn parse_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CoreError::Config(e.to_string().trim_end().replace('\n', " ")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CoreError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse_str(&text)
    }

    pub fn dump(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::Config(m));
        self.solver.to_solver().validate()?;
        let d = &self.dataset;
        if !(2..=3).contains(&d.dim) {
            return bad(format!("dataset.dim must be 2 or 3, got {}", d.dim));
        }
        let div = 1usize << (self.ae.depth + 1);
        if d.resolution == 0 || d.resolution % div != 0 {
            return bad(format!("dataset.resolution {} is not divisible by 2^(depth+1) = {div}", d.resolution));
        }
        if d.steps == 0 || d.scenes == 0 {
            return bad("dataset.steps and dataset.scenes must be positive".into());
        }
        if self.ae.batch == 0 || self.predictor.batch == 0 || self.ae.base_features == 0 {
            return bad("batch sizes and feature counts must be positive".into());
        }
        let p = &self.predictor;
        if p.outputs == 0 || p.context == 0 || p.decoder == 0 {
            return bad("predictor sizes and output count must be positive".into());
        }
        if !(0.0..1.0).contains(&p.dropout) || !(0.0..1.0).contains(&p.recurrent_dropout) {
            return bad("predictor dropout rates must lie in [0, 1)".into());
        }
        if self.eval.start >= self.hybrid.steps.max(self.eval.start + 1) {
            return bad("eval.start must precede hybrid.steps".into());
        }
        Ok(())
    }

    /// Reference listing of every key with its default value.
    pub fn reference_text() -> String {
        let mut out = String::from(
            "# Every key with its default. Unknown keys are errors.\n\
             # Intervals take a non-negative integer or \"inf\".\n\n",
        );
        out.push_str(&RunConfig::default().dump());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::parse_str("").unwrap(), RunConfig::default());
    }

    #[test]
    fn dump_parse_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.solver.dt = 0.1;
        cfg.hybrid.ip = Interval::Infinite;
        cfg.predictor.clip_norm = Some(1.0);
        let back = RunConfig::parse_str(&cfg.dump()).unwrap();
        assert_eq!(back, cfg);
        assert!(cfg.dump().contains("dt = 0.1"));
    }

    #[test]
    fn interval_spellings() {
        for text in ["[hybrid]\nip = inf", "[hybrid]\nip = \"inf\""] {
            assert_eq!(RunConfig::parse_str(text).unwrap().hybrid.ip, Interval::Infinite);
        }
        assert_eq!(RunConfig::parse_str("[hybrid]\nip = 14").unwrap().hybrid.ip, Interval::Finite(14));
        assert!(RunConfig::parse_str("[hybrid]\nip = -1").is_err());
        assert!(RunConfig::parse_str("[hybrid]\nip = 2.5").is_err());
    }

    #[test]
    fn unknown_keys_fail_with_line_number() {
        let err = RunConfig::parse_str("seed = 1\n\n[solver]\nbogus = 3\n").unwrap_err();
        assert_eq!(err.category(), "config");
        assert!(err.to_string().contains("line 4"), "{err}");
        assert!(RunConfig::parse_str("[nosuch]\nx = 1").is_err());
    }

    #[test]
    fn resolution_must_fit_the_depth() {
        assert!(RunConfig::parse_str("[dataset]\nresolution = 48").is_err());
        assert!(RunConfig::parse_str("[dataset]\nresolution = 128").is_ok());
    }
}
