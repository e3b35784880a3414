//! Perturbation families, stability-law fits and report emission.

use std::path::{Path, PathBuf};
use std::time::Instant;

use argmin::core::{CostFunction, Executor};
use argmin::solver::neldermead::NelderMead;
use plotters::prelude::*;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::expr::Expr;
use crate::fields::{CoefficientPair, VectorField};
use crate::grid::{BoundaryPartition, SpaceTimeGrid};
use crate::reconstruction::{reconstruct_a, reconstruct_q, ReconstructionConfig, StabilityParams};
use crate::solver::{dn_diff_norm, probe_family};

/// Direction of a perturbation family: `pair2 = (A_1 + c dA, q_1 + c dq)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Perturbation {
    pub da: VectorField,
    pub dq: Expr,
}

/// Rejects perturbations that break `A_1 = A_2` on the lateral boundary or
/// `div A_1 = div A_2`.
pub fn check_hypotheses(p: &Perturbation, grid: &SpaceTimeGrid<f64>, tol: f64) -> Result<()> {
    let n = grid.dim();
    if p.da.dim() != n {
        return Err(LabError::Shape { expected: n, found: p.da.dim() });
    }
    let probe = CoefficientPair::new(p.da.clone(), Expr::num(0.0), f64::INFINITY);
    let div = probe.max_divergence(grid);
    if div > tol {
        return Err(LabError::Hypothesis(format!("div dA = 0 fails (max |div dA| = {div:.3e})")));
    }
    let comps = p.da.compile::<f64>();
    let mut x = vec![0.0; n];
    let mut trace = 0.0f64;
    for k in 0..grid.ntime() {
        let t = grid.time(k);
        for b in grid.boundary() {
            grid.coords_into(b.node, &mut x);
            for c in &comps {
                trace = trace.max(c.eval(t, &x).abs());
            }
        }
    }
    if trace > tol {
        return Err(LabError::Hypothesis(format!("A_1 = A_2 on the lateral boundary fails (max |dA| on Sigma = {trace:.3e})")));
    }
    Ok(())
}

/// Settings of one family run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyConfig {
    pub scenario: String,
    pub scales: Vec<f64>,
    pub reconstruction: ReconstructionConfig,
    /// Probe count of the `Lambda_1 - Lambda_2` norm estimate.
    pub probes: usize,
    pub power_iters: usize,
    pub reconstruct_q: bool,
    pub theta: f64,
    pub hypothesis_tol: f64,
}

impl Default for FamilyConfig {
    fn default() -> Self {
        FamilyConfig {
            scenario: "family".into(),
            scales: vec![0.0, 0.1, 0.2, 0.4],
            reconstruction: ReconstructionConfig::default(),
            probes: 6,
            power_iters: 200,
            reconstruct_q: false,
            theta: 0.5,
            hypothesis_tol: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub scenario: String,
    pub eps_perturb: f64,
    pub dn_norm: f64,
    /// `L2(Q)` error of the reconstructed `eta^2 (A_1 - A_2)`.
    pub err_a_l2: f64,
    pub err_a_rel: f64,
    pub err_q_l2: f64,
    pub err_q_rel: f64,
    pub params: StabilityParams,
    pub runtime_s: f64,
}

/// Runs the family in parallel and returns records in the order of `scales`.
pub fn run_family(base: &CoefficientPair, pert: &Perturbation, cfg: &FamilyConfig, grid: &SpaceTimeGrid<f64>) -> Result<Vec<ExperimentRecord>> {
    check_hypotheses(pert, grid, cfg.hypothesis_tol)?;
    let rc = &cfg.reconstruction;
    let omega0 = rc.omega0.clone();
    let partition = match rc.mode {
        crate::reconstruction::DataMode::FullData => BoundaryPartition::full(grid),
        crate::reconstruction::DataMode::Cone => BoundaryPartition::new(grid, &omega0, rc.eps)?,
    };
    let probes = probe_family(grid, cfg.probes);
    let boxed = rc.fourier_box(grid.t_final())?;
    let r = rc.modes(&boxed).iter().map(|m| (boxed.tau(m.k).powi(2) + boxed.xi(&m.j).iter().map(|v| v * v).sum::<f64>()).sqrt()).fold(0.0, f64::max);
    let params = StabilityParams::uncoupled(r, cfg.theta, grid.dim(), rc.delta, rc.lambda)?;
    cfg.scales
        .par_iter()
        .map(|&c| {
            let start = Instant::now();
            let pair2 = CoefficientPair::new(base.a.add(&pert.da.scale(c)), Expr::add(base.q.clone(), Expr::mul(Expr::num(c), pert.dq.clone())), base.m_bound);
            let dn = if c == 0.0 { 0.0 } else { dn_diff_norm(base, &pair2, grid, &partition, &probes, cfg.power_iters, rc.scheme)?.norm };
            let ra = reconstruct_a(base, &pair2, rc, grid)?;
            let (err_q_l2, err_q_rel) = if cfg.reconstruct_q {
                let rq = reconstruct_q(base, &pair2, rc, Some(&ra.field), grid)?;
                (rq.l2_error * if rq.l2_truth > 0.0 { rq.l2_truth } else { 1.0 }, rq.l2_error)
            } else {
                (0.0, 0.0)
            };
            let err_a_l2 = ra.l2_error * if ra.l2_truth > 0.0 { ra.l2_truth } else { 1.0 };
            Ok(ExperimentRecord {
                scenario: cfg.scenario.clone(),
                eps_perturb: c,
                dn_norm: dn,
                err_a_l2,
                err_a_rel: ra.l2_error,
                err_q_l2,
                err_q_rel,
                params: params.clone(),
                runtime_s: start.elapsed().as_secs_f64(),
            })
        })
        .collect()
}

/// Spearman rank correlation with average ranks for ties.
pub fn rank_correlation(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(LabError::InvalidArgument(format!("need two equally long series of length >= 2 (got {} and {})", x.len(), y.len())));
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let mean = (x.len() as f64 + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mean) * (b - mean);
        sxx += (a - mean).powi(2);
        syy += (b - mean).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(LabError::InvalidArgument("constant series has no rank correlation".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StabilityLaw {
    /// `err = C d^{a1}`.
    Power,
    /// `err = C (d^{a1} + (log|log d|)^{-a2})`.
    DoubleLog,
    /// `err = C (d^{a1} + (log log|log d|)^{-a2})`.
    TripleLog,
}

impl StabilityLaw {
    /// Shape of the law with unit constant, `None` outside its domain.
    pub fn shape(self, d: f64, a1: f64, a2: f64) -> Option<f64> {
        if !(d > 0.0) {
            return None;
        }
        let l = match self {
            StabilityLaw::Power => return Some(d.powf(a1)),
            StabilityLaw::DoubleLog => d.ln().abs().ln(),
            StabilityLaw::TripleLog => d.ln().abs().ln().ln(),
        };
        (l > 0.0 && l.is_finite()).then(|| d.powf(a1) + l.powf(-a2))
    }

    fn exponents(self) -> usize {
        if self == StabilityLaw::Power {
            1
        } else {
            2
        }
    }
}

/// Exponents are confined to `[0, EXPONENT_MAX]`. Beyond that the logarithmic
/// term of the log laws is negligible and they collapse onto the power law.
pub const EXPONENT_MAX: f64 = 4.0;

/// Least-squares fit in log space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LawFit {
    pub law: StabilityLaw,
    pub c: f64,
    pub a1: f64,
    /// Zero for the power law.
    pub a2: f64,
    /// RMS of `log err - log model`.
    pub residual: f64,
    pub points: usize,
    /// Range of `(a1, a2)` over leave-one-out refits, when at least five points are used.
    pub a1_band: Option<(f64, f64)>,
    pub a2_band: Option<(f64, f64)>,
}

struct LogCost<'a> {
    law: StabilityLaw,
    pts: &'a [(f64, f64)],
}

impl LogCost<'_> {
    /// Profile over `log C` and the residual sum of squares.
    fn profile(&self, a1: f64, a2: f64) -> Option<(f64, f64)> {
        let mut r = Vec::with_capacity(self.pts.len());
        for &(d, e) in self.pts {
            r.push(e.ln() - self.law.shape(d, a1, a2)?.ln());
        }
        let log_c = r.iter().sum::<f64>() / r.len() as f64;
        let ss = r.iter().map(|v| (v - log_c).powi(2)).sum();
        Some((log_c, ss))
    }
}

impl CostFunction for LogCost<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        if p.iter().any(|&a| !(0.0..=EXPONENT_MAX).contains(&a)) {
            return Ok(f64::MAX);
        }
        let a2 = p.get(1).copied().unwrap_or(0.0);
        Ok(self.profile(p[0], a2).map_or(f64::MAX, |(_, ss)| ss))
    }
}

fn fit_points(law: StabilityLaw, pts: &[(f64, f64)]) -> Result<(f64, f64, f64, f64)> {
    let cost = LogCost { law, pts };
    let starts: &[f64] = &[0.25, 1.0, 3.0];
    let mut best: Option<(Vec<f64>, f64)> = None;
    for &s1 in starts {
        for &s2 in if law.exponents() == 2 { starts } else { &starts[..1] } {
            let x0 = if law.exponents() == 2 { vec![s1, s2] } else { vec![s1] };
            let mut simplex = vec![x0.clone()];
            for i in 0..x0.len() {
                let mut v = x0.clone();
                v[i] += if v[i] > 2.0 { -0.5 } else { 0.5 };
                simplex.push(v);
            }
            let solver = NelderMead::new(simplex).with_sd_tolerance(1e-15).map_err(|e| LabError::InvalidArgument(e.to_string()))?;
            let res = Executor::new(LogCost { law, pts }, solver)
                .configure(|s| s.max_iters(4000))
                .run()
                .map_err(|e| LabError::InvalidArgument(format!("fit failed: {e}")))?;
            let state = res.state();
            if let Some(p) = state.best_param.clone() {
                if best.as_ref().is_none_or(|b| state.best_cost < b.1) {
                    best = Some((p, state.best_cost));
                }
            }
        }
    }
    let (p, _) = best.ok_or_else(|| LabError::InvalidArgument("fit failed to produce parameters".into()))?;
    let a2 = p.get(1).copied().unwrap_or(0.0);
    let (log_c, ss) = cost.profile(p[0], a2).ok_or_else(|| LabError::InvalidArgument("fit left the domain of the law".into()))?;
    Ok((log_c.exp(), p[0], a2, (ss / pts.len() as f64).sqrt()))
}

/// Fits `law` to the records with positive `dn_norm` and error. `use_q`
/// selects the potential error instead of the convection error.
pub fn fit_stability_law(records: &[ExperimentRecord], law: StabilityLaw, use_q: bool) -> Result<LawFit> {
    let mut pts: Vec<(f64, f64)> = records
        .iter()
        .map(|r| (r.dn_norm, if use_q { r.err_q_l2 } else { r.err_a_l2 }))
        .filter(|&(d, e)| d > 0.0 && e > 0.0 && law.shape(d, 1.0, 1.0).is_some())
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    pts.dedup_by(|a, b| a.0 == b.0);
    if pts.len() < 4 {
        return Err(LabError::InvalidArgument(format!(
            "insufficient spread in dn_norm: {} distinct usable values, need 4 (law {law:?})",
            pts.len()
        )));
    }
    let (c, a1, a2, residual) = fit_points(law, &pts)?;
    let (mut a1_band, mut a2_band) = (None, None);
    if pts.len() >= 5 {
        let mut lo = (f64::INFINITY, f64::INFINITY);
        let mut hi = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for skip in 0..pts.len() {
            let sub: Vec<(f64, f64)> = pts.iter().enumerate().filter(|(i, _)| *i != skip).map(|(_, p)| *p).collect();
            let (_, b1, b2, _) = fit_points(law, &sub)?;
            lo = (lo.0.min(b1), lo.1.min(b2));
            hi = (hi.0.max(b1), hi.1.max(b2));
        }
        a1_band = Some((lo.0, hi.0));
        a2_band = (law.exponents() == 2).then_some((lo.1, hi.1));
    }
    Ok(LawFit { law, c, a1, a2, residual, points: pts.len(), a1_band, a2_band })
}

/// One named series of `(x, y)` points for `write_line_plot`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

/// Line plot with markers as SVG. Axes are linear; callers pass transformed
/// coordinates.
pub fn write_line_plot(path: &Path, title: &str, x_label: &str, y_label: &str, series: &[Series]) -> Result<()> {
    let pts = series.iter().flat_map(|s| s.points.iter()).filter(|p| p.0.is_finite() && p.1.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        return Err(LabError::InvalidArgument(format!("nothing to plot in {}", path.display())));
    }
    let pad = |a: f64, b: f64| {
        let w = (b - a).abs().max(1e-9) * 0.05;
        (a - w, b + w)
    };
    let ((x0, x1), (y0, y1)) = (pad(x0, x1), pad(y0, y1));
    let plot_err = |e: &dyn std::fmt::Display| LabError::Io(std::io::Error::other(format!("{}: {e}", path.display())));
    let root = SVGBackend::new(path, (720, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_err(&e))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 18))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(56)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(|e| plot_err(&e))?;
    chart.configure_mesh().x_desc(x_label).y_desc(y_label).draw().map_err(|e| plot_err(&e))?;
    for (i, s) in series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        let pts: Vec<(f64, f64)> = s.points.iter().copied().filter(|p| p.0.is_finite() && p.1.is_finite()).collect();
        chart
            .draw_series(LineSeries::new(pts.clone(), color.stroke_width(2)))
            .map_err(|e| plot_err(&e))?
            .label(s.name.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
        chart.draw_series(pts.into_iter().map(|p| Circle::new(p, 3, color.filled()))).map_err(|e| plot_err(&e))?;
    }
    chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw().map_err(|e| plot_err(&e))?;
    root.present().map_err(|e| plot_err(&e))?;
    Ok(())
}

#[derive(Serialize)]
struct CsvRow<'a> {
    scenario: &'a str,
    eps_perturb: f64,
    dn_norm: f64,
    err_a_l2: f64,
    err_a_rel: f64,
    err_q_l2: f64,
    err_q_rel: f64,
    lambda: f64,
    delta: f64,
    r: f64,
    theta: f64,
    alpha: f64,
    alpha_prime: f64,
}

/// Writes `records.csv`, `fits.json`, `timings.json` and, for non-empty
/// records, `err_a_vs_dn.svg` and `err_q_vs_dn.svg`. Run times are kept out
/// of the CSV so that it is byte-identical across reruns.
pub fn emit_report(records: &[ExperimentRecord], fits: &[LawFit], out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    let csv_path = out_dir.join("records.csv");
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(&csv_path)?;
    w.write_record([
        "scenario", "eps_perturb", "dn_norm", "err_a_l2", "err_a_rel", "err_q_l2", "err_q_rel", "lambda", "delta", "r", "theta", "alpha", "alpha_prime",
    ])?;
    for r in records {
        w.serialize(CsvRow {
            scenario: &r.scenario,
            eps_perturb: r.eps_perturb,
            dn_norm: r.dn_norm,
            err_a_l2: r.err_a_l2,
            err_a_rel: r.err_a_rel,
            err_q_l2: r.err_q_l2,
            err_q_rel: r.err_q_rel,
            lambda: r.params.lambda,
            delta: r.params.delta,
            r: r.params.r,
            theta: r.params.theta,
            alpha: r.params.alpha,
            alpha_prime: r.params.alpha_prime,
        })?;
    }
    w.flush()?;
    written.push(csv_path);
    let fits_path = out_dir.join("fits.json");
    std::fs::write(&fits_path, serde_json::to_string_pretty(fits)?)?;
    written.push(fits_path);
    let timings: Vec<(f64, f64)> = records.iter().map(|r| (r.eps_perturb, r.runtime_s)).collect();
    let t_path = out_dir.join("timings.json");
    std::fs::write(&t_path, serde_json::to_string_pretty(&timings)?)?;
    written.push(t_path);
    if records.is_empty() {
        return Ok(written);
    }
    // x = log|log d| (or log log|log d|) against log err, the axes on which the laws flatten
    let loglog = |d: f64| d.ln().abs().ln();
    for (name, use_q, x_of) in [
        ("err_a_vs_dn.svg", false, &loglog as &dyn Fn(f64) -> f64),
        ("err_q_vs_dn.svg", true, &|d: f64| loglog(d).ln()),
    ] {
        let pts: Vec<(f64, f64)> = records
            .iter()
            .filter(|r| r.dn_norm > 0.0)
            .map(|r| (x_of(r.dn_norm), (if use_q { r.err_q_l2 } else { r.err_a_l2 }).ln()))
            .collect();
        let path = out_dir.join(name);
        let (x_label, y_label) = if use_q { ("log log|log dn|", "log err_q") } else { ("log|log dn|", "log err_a") };
        let series = [Series { name: records[0].scenario.clone(), points: pts }];
        if write_line_plot(&path, name.trim_end_matches(".svg"), x_label, y_label, &series).is_err() {
            // no finite point (all dn = 0): an empty frame keeps the file count fixed
            write_line_plot(&path, name.trim_end_matches(".svg"), x_label, y_label, &[Series { name: "no data".into(), points: vec![(0.0, 0.0)] }])?;
        }
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(d: f64, e: f64) -> ExperimentRecord {
        ExperimentRecord {
            scenario: "synthetic".into(),
            eps_perturb: d,
            dn_norm: d,
            err_a_l2: e,
            err_a_rel: e,
            err_q_l2: e,
            err_q_rel: e,
            params: StabilityParams::uncoupled(4.0, 0.5, 2, 0.2, 32.0).unwrap(),
            runtime_s: 0.0,
        }
    }

    #[test]
    fn fit_recovers_its_own_law() {
        let ds = [1e-12, 1e-9, 1e-6, 1e-4, 1e-3, 1e-2, 5e-2];
        for (law, a1, a2) in [(StabilityLaw::DoubleLog, 0.5, 1.5), (StabilityLaw::Power, 0.7, 0.0)] {
            let recs: Vec<_> = ds.iter().map(|&d| record(d, 2.0 * law.shape(d, a1, a2).unwrap())).collect();
            let fit = fit_stability_law(&recs, law, false).unwrap();
            assert!((fit.a1 - a1).abs() < 1e-6 && (fit.a2 - a2).abs() < 1e-6, "{fit:?}");
            assert!((fit.c - 2.0).abs() < 1e-6 && fit.residual < 1e-8, "{fit:?}");
        }
    }

    #[test]
    fn triple_log_recovers_its_own_law() {
        let ds = [1e-40, 1e-20, 1e-12, 1e-8, 1e-5, 1e-3, 1e-2];
        let recs: Vec<_> = ds.iter().map(|&d| record(d, 0.5 * StabilityLaw::TripleLog.shape(d, 0.3, 2.0).unwrap())).collect();
        let fit = fit_stability_law(&recs, StabilityLaw::TripleLog, true).unwrap();
        assert!((fit.a1 - 0.3).abs() < 1e-6 && (fit.a2 - 2.0).abs() < 1e-6, "{fit:?}");
    }

    #[test]
    fn power_data_prefers_power_model() {
        let recs: Vec<_> = [1e-6, 1e-5, 1e-4, 1e-3, 1e-2].iter().map(|&d: &f64| record(d, 3.0 * d.powf(0.4))).collect();
        let p = fit_stability_law(&recs, StabilityLaw::Power, false).unwrap();
        let d = fit_stability_law(&recs, StabilityLaw::DoubleLog, false).unwrap();
        assert!(p.residual < 1e-8 && d.residual > 1e-3, "{p:?} {d:?}");
        assert!(p.a1_band.is_some());
    }

    #[test]
    fn fit_needs_spread() {
        let recs: Vec<_> = [1e-3, 1e-3, 1e-2, 0.0].iter().map(|&d| record(d, 0.1)).collect();
        let e = fit_stability_law(&recs, StabilityLaw::Power, false).unwrap_err();
        assert!(e.to_string().contains("insufficient spread"));
    }

    #[test]
    fn rank_correlation_basics() {
        assert!((rank_correlation(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((rank_correlation(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        assert!((rank_correlation(&[1.0, 2.0, 3.0, 4.0], &[1.0, 1.0, 2.0, 3.0]).unwrap() - 0.9486832980505138).abs() < 1e-12);
        assert!(rank_correlation(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn report_counts() {
        let dir = tempfile::tempdir().unwrap();
        let files = emit_report(&[], &[], dir.path()).unwrap();
        assert!(files.iter().all(|f| f.extension().unwrap() != "svg"));
        let csv = std::fs::read_to_string(dir.path().join("records.csv")).unwrap();
        assert_eq!(csv.lines().count(), 1);
        assert!(csv.starts_with("scenario,eps_perturb,dn_norm"));

        let recs: Vec<_> = [1e-6, 1e-5, 1e-4, 1e-3, 1e-2].iter().map(|&d: &f64| record(d, d.sqrt())).collect();
        let files = emit_report(&recs, &[], dir.path()).unwrap();
        assert_eq!(files.iter().filter(|f| f.extension().unwrap() == "svg").count(), 2);
        let first = std::fs::read(dir.path().join("records.csv")).unwrap();
        assert_eq!(String::from_utf8_lossy(&first).lines().count(), 6);
        emit_report(&recs, &[], dir.path()).unwrap();
        assert_eq!(first, std::fs::read(dir.path().join("records.csv")).unwrap());
    }

    #[test]
    fn report_rejects_unwritable_dir() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("plain");
        std::fs::write(&file, "x").unwrap();
        assert!(emit_report(&[], &[], &file.join("sub")).is_err());
    }

    #[test]
    fn hypothesis_guard_names_the_trace_condition() {
        let g = SpaceTimeGrid::<f64>::new(2, 9, 4, 1.5).unwrap();
        let p = Perturbation { da: VectorField::constant(&[1.0, 0.0]), dq: Expr::zero() };
        let e = check_hypotheses(&p, &g, 1e-8).unwrap_err();
        assert!(e.to_string().contains("lateral boundary"), "{e}");
        let p = Perturbation { da: VectorField::parse(&["x1*sin(pi*x1)^2*sin(pi*x2)^2", "0"]).unwrap(), dq: Expr::zero() };
        let e = check_hypotheses(&p, &g, 1e-8).unwrap_err();
        assert!(e.to_string().contains("div"), "{e}");
        let p = Perturbation { da: crate::fields::make_divfree_field(&[Expr::parse("sin(pi*x1)^2*sin(pi*x2)^2").unwrap()], 2).unwrap(), dq: Expr::zero() };
        check_hypotheses(&p, &g, 1e-8).unwrap();
    }
}
