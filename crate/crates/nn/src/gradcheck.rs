//! Finite-difference verification of analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::sequential::Sequential;
use crate::tensor::Tensor;

pub const STEP: f64 = 1e-5;

/// `|a - n| / max(|a|, |n|, 1e-6)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    /// `None` for an input entry, otherwise the flat parameter tensor index.
    pub param: Option<usize>,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub probes: Vec<Probe>,
}

impl GradReport {
    pub fn max_rel_err(&self) -> f64 {
        self.probes.iter().fold(0.0, |m, p| m.max(p.rel_err))
    }

    pub fn worst(&self) -> Option<&Probe> {
        self.probes.iter().max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
    }
}

/// Which entries to perturb.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Probes {
    /// `params` random weights and `inputs` random input entries.
    Random { params: usize, inputs: usize },
    /// Every weight of the network, no inputs.
    AllParams,
}

/// Compares backprop against central differences.
///
/// `objective` maps the network output to a scalar and its gradient. The
/// training-mode rng is reseeded with `seed` before every forward pass so
/// dropout masks agree between the analytic and the perturbed evaluations.
pub fn check_network<F>(net: &mut Sequential<f64>, x: &Tensor<f64>, probes: Probes, seed: u64, objective: F) -> Result<GradReport>
where
    F: Fn(&Tensor<f64>) -> Result<(f64, Tensor<f64>)>,
{
    let eval = |net: &Sequential<f64>, x: &Tensor<f64>| -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (y, _) = net.forward_train(x, &mut rng)?;
        Ok(objective(&y)?.0)
    };
    net.zero_grad();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (y, caches) = net.forward_train(x, &mut rng)?;
    let (_, dy) = objective(&y)?;
    let dx = net.backward(&caches, &dy)?;

    let sizes: Vec<usize> = net.params().iter().map(|p| p.value.len()).collect();
    let total: usize = sizes.iter().sum();
    let mut pick = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let (targets, inputs): (Vec<(usize, usize)>, usize) = match probes {
        Probes::AllParams => (sizes.iter().enumerate().flat_map(|(pi, n)| (0..*n).map(move |i| (pi, i))).collect(), 0),
        Probes::Random { params, inputs } => {
            let mut t = Vec::new();
            for _ in 0..if total > 0 { params } else { 0 } {
                let mut flat = pick.gen_range(0..total);
                let mut pi = 0;
                while flat >= sizes[pi] {
                    flat -= sizes[pi];
                    pi += 1;
                }
                t.push((pi, flat));
            }
            (t, if x.is_empty() { 0 } else { inputs })
        }
    };
    let mut out = Vec::new();
    for (pi, flat) in targets {
        let analytic = net.params()[pi].grad.data[flat];
        let orig = net.params()[pi].value.data[flat];
        net.params_mut()[pi].value.data[flat] = orig + STEP;
        let plus = eval(net, x)?;
        net.params_mut()[pi].value.data[flat] = orig - STEP;
        let minus = eval(net, x)?;
        net.params_mut()[pi].value.data[flat] = orig;
        let numeric = (plus - minus) / (2.0 * STEP);
        out.push(Probe { param: Some(pi), index: flat, analytic, numeric, rel_err: relative_error(analytic, numeric) });
    }
    let mut xp = x.clone();
    for _ in 0..inputs {
        let i = pick.gen_range(0..x.len());
        let orig = xp.data[i];
        xp.data[i] = orig + STEP;
        let plus = eval(net, &xp)?;
        xp.data[i] = orig - STEP;
        let minus = eval(net, &xp)?;
        xp.data[i] = orig;
        let numeric = (plus - minus) / (2.0 * STEP);
        out.push(Probe { param: None, index: i, analytic: dx.data[i], numeric, rel_err: relative_error(dx.data[i], numeric) });
    }
    Ok(GradReport { probes: out })
}
