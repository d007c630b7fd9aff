//! Metrics, paired evaluation of trajectories, plots and timing benchmarks.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use plotters::prelude::*;

use lsp_fluid::{boundary_alignment, finish_step, prepare_step, solve_prepared, ScalarGrid, SolverConfig};

use crate::autoencoder::{AeConfig, Autoencoder};
use crate::config::{Interval, Quantity, SceneKindName};
use crate::error::{CoreError, Result};
use crate::latent_sim::Trajectory;
use crate::predictor::{Predictor, PredictorConfig};
use crate::scene::{extract_frame, frame_to_pressure, random_scene};

/// `10 log10(peak^2 / mse)`; `+inf` for identical inputs.
pub fn psnr(a: &[f32], b: &[f32], peak: f64) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(CoreError::Data(format!("psnr of fields with {} and {} values", a.len(), b.len())));
    }
    let mse = a.iter().zip(b).map(|(x, y)| (*x as f64 - *y as f64).powi(2)).sum::<f64>() / a.len() as f64;
    Ok(psnr_from_mse(mse, peak))
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

/// Zero-crossing points of `phi` on the edges between interior cells
/// (the outermost layer is the solid wall and is skipped).
pub fn surface_samples(phi: &ScalarGrid) -> Vec<[f64; 3]> {
    let dims = phi.dims;
    let e = dims.extents;
    let interior = |c: [usize; 3], a: usize| c[a] >= 1 && c[a] + 2 <= e[a];
    let mut out = Vec::new();
    for idx in 0..dims.cell_count() {
        let c = dims.coords(idx);
        if (0..dims.dim).any(|a| !interior(c, a) && !(c[a] == 0 && e[a] == 1)) {
            continue;
        }
        for axis in 0..dims.dim {
            let mut n = c;
            n[axis] += 1;
            if n[axis] + 1 >= e[axis] {
                continue;
            }
            let (v0, v1) = (phi.at(c), phi.at(n));
            if (v0 < 0.0) != (v1 < 0.0) {
                let t = v0 / (v0 - v1);
                let mut p = phi.cell_center(c);
                p[axis] += t * phi.dx;
                out.push(p);
            }
        }
    }
    out
}

/// Symmetric mean surface distance in cells: the larger of the mean
/// `|phi_r|` over the surface of `phi_p` and vice versa.
pub fn surface_error(phi_r: &ScalarGrid, phi_p: &ScalarGrid) -> Result<f64> {
    phi_r.same_shape(phi_p)?;
    let s_r = surface_samples(phi_r);
    let s_p = surface_samples(phi_p);
    if s_r.is_empty() || s_p.is_empty() {
        return Err(CoreError::Data("surface error of a field without a surface".into()));
    }
    let mean = |pts: &[[f64; 3]], phi: &ScalarGrid| pts.iter().map(|p| phi.sample(*p).abs()).sum::<f64>() / pts.len() as f64;
    Ok(mean(&s_p, phi_r).max(mean(&s_r, phi_p)) / phi_r.dx)
}

/// Per-step mean |div| and its change from the previous step.
pub fn divergence_stats(traj: &Trajectory) -> Vec<(f64, f64)> {
    let mut prev = None;
    traj.records
        .iter()
        .map(|r| {
            let d = r.mean_divergence;
            let delta = prev.map_or(0.0, |p| d - p);
            prev = Some(d);
            (d, delta)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub step: usize,
    pub scene: usize,
    pub psnr_db: f64,
    pub e_h_cells: f64,
    pub mean_surf_dist: f64,
    pub div_mean: f64,
    pub t_encode_ms: f64,
    pub t_predict_ms: f64,
    pub t_decode_ms: f64,
    pub t_solve_ms: f64,
}

pub const CSV_HEADER: &str = "step,scene,psnr_db,e_h_cells,mean_surf_dist,div_mean,t_encode_ms,t_predict_ms,t_decode_ms,t_solve_ms";

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub label: String,
    pub rows: Vec<MetricRow>,
    pub scenes: usize,
    pub mean_psnr: f64,
    pub mean_e_h: f64,
    /// Scene-averaged e_h at the read-out step.
    pub e_h_at_step: f64,
    pub surface_step: usize,
    /// Mean e_h divided by the domain extent in cells.
    pub mean_surface_distance: f64,
    pub mean_divergence: f64,
    pub divergence_increase: f64,
    /// Mean network time per measured step, in milliseconds.
    pub network_ms_per_step: f64,
    pub solve_ms_per_step: f64,
}

/// Compares one test trajectory with its reference twin from step
/// `start + 1` on. Fields are divided by `scales` before the PSNR.
pub fn compare_pair(reference: &Trajectory, test: &Trajectory, scene: usize, start: usize, scales: &[f64]) -> Result<Vec<MetricRow>> {
    if reference.frames.len() != test.frames.len() || reference.final_state.dims() != test.final_state.dims() {
        return Err(CoreError::Usage(format!("scene {scene}: reference and test runs are not paired")));
    }
    let r = reference.final_state.dims().max_extent() as f64;
    let c = scales.len().max(1);
    let norm = |f: &[f32]| -> Vec<f32> { f.iter().enumerate().map(|(i, v)| (*v as f64 / scales[i % c]) as f32).collect() };
    let mut rows = Vec::new();
    for i in start..reference.frames.len() {
        let psnr_db = psnr(&norm(&reference.frames[i]), &norm(&test.frames[i]), 2.0)?;
        let e_h = match (&reference.levelsets[i], &test.levelsets[i]) {
            (Some(a), Some(b)) => surface_error(a, b)?,
            _ => f64::NAN,
        };
        let rec = &test.records[i];
        rows.push(MetricRow {
            step: i + 1,
            scene,
            psnr_db,
            e_h_cells: e_h,
            mean_surf_dist: e_h / r,
            div_mean: rec.mean_divergence,
            t_encode_ms: rec.t_encode * 1e3,
            t_predict_ms: rec.t_predict * 1e3,
            t_decode_ms: rec.t_decode * 1e3,
            t_solve_ms: rec.t_solve * 1e3,
        });
    }
    Ok(rows)
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Aggregates metric rows over steps and scenes.
pub fn summarize(label: &str, rows: Vec<MetricRow>, surface_step: usize, divergence_increase: f64, domain_cells: usize) -> MetricsReport {
    let scenes = rows.iter().map(|r| r.scene).collect::<std::collections::BTreeSet<_>>().len();
    let mean_e_h = mean(rows.iter().map(|r| r.e_h_cells));
    MetricsReport {
        label: label.to_string(),
        scenes,
        mean_psnr: mean(rows.iter().map(|r| r.psnr_db)),
        mean_e_h,
        e_h_at_step: mean(rows.iter().filter(|r| r.step == surface_step).map(|r| r.e_h_cells)),
        surface_step,
        mean_surface_distance: mean_e_h / domain_cells as f64,
        mean_divergence: mean(rows.iter().map(|r| r.div_mean)),
        divergence_increase,
        network_ms_per_step: mean(rows.iter().map(|r| r.t_encode_ms + r.t_predict_ms + r.t_decode_ms)),
        solve_ms_per_step: mean(rows.iter().map(|r| r.t_solve_ms)),
        rows,
    }
}

/// Paired evaluation over scenes: `references[i]` and `tests[i]` must start
/// from the same initial state.
pub fn evaluate_protocol(
    label: &str,
    references: &[Trajectory],
    tests: &[Trajectory],
    start: usize,
    surface_step: usize,
    scales: &[f64],
) -> Result<MetricsReport> {
    if references.len() != tests.len() || references.is_empty() {
        return Err(CoreError::Usage(format!("{} reference runs for {} test runs", references.len(), tests.len())));
    }
    let mut rows = Vec::new();
    for (scene, (r, t)) in references.iter().zip(tests).enumerate() {
        rows.extend(compare_pair(r, t, scene, start, scales)?);
    }
    let inc = mean(tests.iter().map(|t| t.divergence_increase()));
    let cells = references[0].final_state.dims().max_extent();
    Ok(summarize(label, rows, surface_step, inc, cells))
}

impl MetricsReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.step,
                r.scene,
                r.psnr_db,
                r.e_h_cells,
                r.mean_surf_dist,
                r.div_mean,
                r.t_encode_ms,
                r.t_predict_ms,
                r.t_decode_ms,
                r.t_solve_ms
            );
        }
        out
    }

    /// Scene-averaged curve of one metric over steps.
    pub fn curve(&self, metric: impl Fn(&MetricRow) -> f64) -> Vec<(f64, f64)> {
        let mut steps: Vec<usize> = self.rows.iter().map(|r| r.step).collect();
        steps.dedup();
        steps.sort_unstable();
        steps.dedup();
        steps
            .into_iter()
            .map(|s| (s as f64, mean(self.rows.iter().filter(|r| r.step == s).map(&metric))))
            .collect()
    }

    pub fn summary_line(&self) -> String {
        format!(
            "{}: psnr {:.2} dB, e_h {:.3} cells (step {}: {:.3}), mean surface distance {:.5}, div {:.3e} (+{:.3e}/step), network {:.3} ms/step",
            self.label,
            self.mean_psnr,
            self.mean_e_h,
            self.surface_step,
            self.e_h_at_step,
            self.mean_surface_distance,
            self.mean_divergence,
            self.divergence_increase,
            self.network_ms_per_step
        )
    }
}

/// Writes a line plot of several labelled curves to `path` (SVG).
pub fn plot_curves(path: &Path, title: &str, y_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> Result<()> {
    let finite = |v: &f64| v.is_finite();
    let xs = series.iter().flat_map(|(_, s)| s.iter().map(|p| p.0));
    let ys: Vec<f64> = series.iter().flat_map(|(_, s)| s.iter().map(|p| p.1)).filter(finite).collect();
    let (x0, x1) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    let (mut y0, mut y1) = ys.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), y| (a.min(*y), b.max(*y)));
    if !(x0.is_finite() && y0.is_finite()) {
        return Err(CoreError::Data(format!("nothing finite to plot for {title}")));
    }
    if y1 - y0 < 1e-12 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let err = |e: &dyn std::fmt::Display| CoreError::Data(format!("plot {}: {e}", path.display()));
    let root = SVGBackend::new(path, (800, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| err(&e))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(35)
        .y_label_area_size(60)
        .build_cartesian_2d(x0..x1.max(x0 + 1.0), y0..y1)
        .map_err(|e| err(&e))?;
    chart.configure_mesh().x_desc("step").y_desc(y_label).draw().map_err(|e| err(&e))?;
    for (i, (label, s)) in series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        let pts: Vec<(f64, f64)> = s.iter().copied().filter(|p| p.1.is_finite()).collect();
        chart
            .draw_series(LineSeries::new(pts, color.stroke_width(2)))
            .map_err(|e| err(&e))?
            .label(label.as_str())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
    }
    chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw().map_err(|e| err(&e))?;
    root.present().map_err(|e| err(&e))?;
    Ok(())
}

/// Writes `metric_<name>.svg` for PSNR, e_h and divergence plus one CSV
/// per report.
pub fn write_reports(dir: &Path, reports: &[MetricsReport]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for r in reports {
        std::fs::write(dir.join(format!("metrics_{}.csv", r.label)), r.to_csv())?;
    }
    type Metric = fn(&MetricRow) -> f64;
    let metrics: [(&str, &str, Metric); 3] = [
        ("psnr", "PSNR [dB]", |r| r.psnr_db),
        ("surface_error", "e_h [cells]", |r| r.e_h_cells),
        ("divergence", "mean |div u|", |r| r.div_mean),
    ];
    for (name, y_label, f) in metrics {
        let series: Vec<(String, Vec<(f64, f64)>)> = reports.iter().map(|r| (r.label.clone(), r.curve(f))).collect();
        if series.iter().any(|(_, s)| s.iter().any(|p| p.1.is_finite())) {
            plot_curves(&dir.join(format!("metric_{name}.svg")), name, y_label, &series)?;
        }
    }
    Ok(())
}

/// Per-step costs at one resolution, in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub resolution: usize,
    pub cells: usize,
    pub steps: usize,
    pub t_solve: f64,
    pub t_encode: f64,
    pub t_predict: f64,
    pub t_decode: f64,
    pub t_align: f64,
    pub t_advection: f64,
    /// `(interval, speedup of the pressure stage)`.
    pub speedups: Vec<(Interval, f64)>,
}

impl BenchRow {
    pub fn network(&self) -> f64 {
        self.t_encode + self.t_predict + self.t_decode
    }

    pub fn speedup(&self, ip: Interval) -> Option<f64> {
        self.speedups.iter().find(|(i, _)| *i == ip).map(|(_, s)| *s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// Least-squares slope of log(network time) over log(cells).
    pub network_exponent: f64,
    pub solve_exponent: f64,
}

impl BenchReport {
    pub fn render(&self) -> String {
        let mut out = String::from("resolution,cells,solve_ms,encode_ms,predict_ms,decode_ms,align_ms,advection_ms");
        let ips: Vec<Interval> = self.rows.first().map(|r| r.speedups.iter().map(|s| s.0).collect()).unwrap_or_default();
        for ip in &ips {
            let _ = write!(out, ",speedup_ip{ip}");
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(
                out,
                "{},{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4}",
                r.resolution,
                r.cells,
                r.t_solve * 1e3,
                r.t_encode * 1e3,
                r.t_predict * 1e3,
                r.t_decode * 1e3,
                r.t_align * 1e3,
                r.t_advection * 1e3
            );
            for (_, s) in &r.speedups {
                let _ = write!(out, ",{s:.3}");
            }
            out.push('\n');
        }
        let _ = writeln!(out, "# network cost ~ cells^{:.3}, solve cost ~ cells^{:.3}", self.network_exponent, self.solve_exponent);
        out
    }
}

/// Slope of the least-squares line through `(ln x, ln y)`.
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let pts: Vec<(f64, f64)> = points.iter().filter(|(x, y)| *x > 0.0 && *y > 0.0).map(|(x, y)| (x.ln(), y.ln())).collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Pressure-stage cost of one schedule relative to the solver: predicted
/// steps pay prediction, decoding and alignment, corrective steps pay the
/// solve and the encoding of its result.
pub fn schedule_speedup(ip: Interval, solve: &[f64], predicted: &[f64], corrective: &[f64]) -> f64 {
    let reference: f64 = solve.iter().sum();
    let hybrid: f64 = match ip {
        Interval::Finite(0) => reference,
        Interval::Finite(k) => (0..solve.len())
            .map(|s| if s % (k as usize + 1) < k as usize { predicted[s] } else { corrective[s] })
            .sum(),
        Interval::Infinite => predicted.iter().sum(),
    };
    reference / hybrid
}

pub struct BenchParams<'a> {
    pub resolutions: &'a [usize],
    pub intervals: &'a [Interval],
    pub steps: usize,
    pub warmup_steps: usize,
    pub solver: &'a SolverConfig,
    pub ae: &'a AeConfig,
    pub predictor: &'a PredictorConfig,
    pub seed: u64,
}

/// Times the solver and the network pipeline on the same liquid
/// trajectory at each resolution. Weights are untrained; inference cost
/// does not depend on their values.
pub fn benchmark(p: &BenchParams) -> Result<BenchReport> {
    let mut rows = Vec::new();
    for &r in p.resolutions {
        let ae_cfg = AeConfig { resolution: r, dim: 2, channels: 1, ..p.ae.clone() };
        let ae = Autoencoder::build(ae_cfg, p.seed)?;
        let pred = Predictor::build(PredictorConfig { m_s: ae.latent_size(), o: 1, ..p.predictor.clone() }, p.seed)?;
        let spec = random_scene(SceneKindName::Liquid, 2, p.seed);
        let mut state = spec.initial_state(r, p.solver)?;
        let cfg = p.solver;
        let dims = state.dims();
        let mut history: Vec<Vec<f32>> = vec![vec![0.0; ae.latent_size()]; pred.cfg.n + 1];
        let (mut solve, mut predicted, mut corrective) = (Vec::new(), Vec::new(), Vec::new());
        let mut sums = [0.0f64; 6];
        for step in 0..p.warmup_steps + p.steps {
            let t = Instant::now();
            let prep = prepare_step(state, cfg)?;
            let t_adv = t.elapsed().as_secs_f64();
            let t = Instant::now();
            let sol = solve_prepared(&prep, cfg)?;
            let t_solve = t.elapsed().as_secs_f64();

            let mut probe = prep.state.clone();
            probe.pressure = sol.pressure.clone();
            let frame = extract_frame(&probe, Quantity::Total, cfg)?;
            let t = Instant::now();
            let code = ae.encode(&frame)?;
            let t_enc = t.elapsed().as_secs_f64();
            history.remove(0);
            history.push(code);
            let refs: Vec<&[f32]> = history.iter().map(|c| c.as_slice()).collect();
            let t = Instant::now();
            let next = pred.predict(&refs)?;
            let t_pred = t.elapsed().as_secs_f64();
            let t = Instant::now();
            let decoded = ae.decode(&next[0])?;
            let t_dec = t.elapsed().as_secs_f64();
            let p_dec = frame_to_pressure(&decoded, Quantity::Total, dims, prep.state.dx())?;
            let t = Instant::now();
            if let Some(phi) = prep.state.free_surface() {
                boundary_alignment(&p_dec, &prep.divergence, phi, &prep.state.flags, cfg.narrow_band, cfg.jacobi_align_iters, &cfg.projection())?;
            }
            let t_align = t.elapsed().as_secs_f64();

            let t = Instant::now();
            let (next_state, _) = finish_step(prep, sol.pressure, cfg)?;
            let t_adv = t_adv + t.elapsed().as_secs_f64();
            state = next_state;
            if step < p.warmup_steps {
                continue;
            }
            solve.push(t_solve);
            predicted.push(t_pred + t_dec + t_align);
            corrective.push(t_solve + t_enc);
            for (s, v) in sums.iter_mut().zip([t_solve, t_enc, t_pred, t_dec, t_align, t_adv]) {
                *s += v;
            }
        }
        let n = p.steps.max(1) as f64;
        let speedups = p.intervals.iter().map(|ip| (*ip, schedule_speedup(*ip, &solve, &predicted, &corrective))).collect();
        let row = BenchRow {
            resolution: r,
            cells: dims.cell_count(),
            steps: p.steps,
            t_solve: sums[0] / n,
            t_encode: sums[1] / n,
            t_predict: sums[2] / n,
            t_decode: sums[3] / n,
            t_align: sums[4] / n,
            t_advection: sums[5] / n,
            speedups,
        };
        log::info!("bench {r}^2: solve {:.2} ms, network {:.2} ms", row.t_solve * 1e3, row.network() * 1e3);
        rows.push(row);
    }
    let net: Vec<(f64, f64)> = rows.iter().map(|r| (r.cells as f64, r.network())).collect();
    let sol: Vec<(f64, f64)> = rows.iter().map(|r| (r.cells as f64, r.t_solve)).collect();
    Ok(BenchReport { network_exponent: log_log_slope(&net), solve_exponent: log_log_slope(&sol), rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use lsp_fluid::GridDims;

    fn plane(r: usize, h: f64) -> ScalarGrid {
        let dims = GridDims::new_2d(r, r);
        let dx = 1.0 / r as f64;
        let mut g = ScalarGrid::new(dims, dx);
        for idx in 0..dims.cell_count() {
            g.data[idx] = g.cell_center(dims.coords(idx))[1] - h;
        }
        g
    }

    #[test]
    fn psnr_examples() {
        let a = vec![0.1f32; 64];
        let b: Vec<f32> = a.iter().map(|v| v + 0.02).collect();
        assert_eq!(psnr(&a, &a, 2.0).unwrap(), f64::INFINITY);
        // computed in f64 from the f32 inputs
        let mse = (0.1f32 as f64 - (0.1f32 + 0.02f32) as f64).powi(2);
        let oracle = 10.0 * (4.0 / mse).log10();
        assert!((psnr(&a, &b, 2.0).unwrap() - oracle).abs() < 1e-9);
        assert!((oracle - 40.0).abs() < 1e-4);
        assert_eq!(psnr(&a, &b, 2.0).unwrap(), psnr(&b, &a, 2.0).unwrap());
        assert!(psnr(&a, &b[..3], 2.0).is_err());
    }

    #[test]
    fn plane_offset_by_one_cell() {
        let r = 32;
        let a = plane(r, 0.4);
        let b = plane(r, 0.4 + 1.0 / r as f64);
        assert!((surface_error(&a, &b).unwrap() - 1.0).abs() < 1e-9);
        assert_eq!(surface_error(&a, &a).unwrap(), 0.0);
        assert!(surface_error(&a, &ScalarGrid::filled(a.dims, a.dx, 1.0)).is_err());
    }

    #[test]
    fn schedule_accounting() {
        let solve = vec![4.0; 10];
        let pred = vec![1.0; 10];
        let corr = vec![5.0; 10];
        assert_eq!(schedule_speedup(Interval::Finite(0), &solve, &pred, &corr), 1.0);
        assert_eq!(schedule_speedup(Interval::Infinite, &solve, &pred, &corr), 4.0);
        // steps 5 and 10 are corrective
        assert_eq!(schedule_speedup(Interval::Finite(4), &solve, &pred, &corr), 40.0 / 18.0);
    }

    #[test]
    fn slope_of_power_law() {
        let pts: Vec<(f64, f64)> = [1.0f64, 4.0, 16.0].iter().map(|x| (*x, 3.0 * x.powf(1.5))).collect();
        assert!((log_log_slope(&pts) - 1.5).abs() < 1e-12);
    }
}
