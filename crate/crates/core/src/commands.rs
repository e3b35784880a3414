//! Subcommands of the `cdlab` binary. Each writes its files into the output
//! directory plus `summary.json`, and reports whether its invariant checks hold.

use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use serde::Serialize;

use crate::config::Config;
use crate::error::{LabError, Result};
use crate::experiment::{emit_report, fit_stability_law, rank_correlation, run_family, write_line_plot, LawFit, Series, StabilityLaw};
use crate::fields::CoefficientPair;
use crate::grid::{BoundaryPartition, BoundaryTrace, SpaceTimeField, SpaceTimeGrid};
use crate::reconstruction::{reconstruct_a, reconstruct_q};
use crate::scalar::Cplx;
use crate::solver::{dn_apply, dn_diff_norm, neumann_trace, probe_family, solve_forward, DirichletData};
use crate::suites::{carleman_study, carleman_suite, gauge_study, remainder_study, transport_study};
use crate::expr::Expr;
use crate::go::transport_residual;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Forward,
    Dnmap,
    GoCheck,
    CarlemanCheck,
    Reconstruct,
    StabilityCurve,
}

/// One invariant: `value` compared with `threshold`.
#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
}

impl Check {
    fn at_most(name: &str, value: f64, threshold: f64) -> Self {
        Check { name: name.into(), value, threshold, passed: value <= threshold }
    }

    fn at_least(name: &str, value: f64, threshold: f64) -> Self {
        Check { name: name.into(), value, threshold, passed: value >= threshold }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Outcome {
    pub command: Command,
    /// False when the section of the command is disabled.
    pub enabled: bool,
    pub checks: Vec<Check>,
    pub notes: Vec<String>,
    pub files: Vec<PathBuf>,
    pub runtime_s: f64,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

pub fn run(cmd: Command, cfg: &Config, out: &Path) -> Result<Outcome> {
    std::fs::create_dir_all(out)?;
    let start = Instant::now();
    let grid = cfg.grid.build()?;
    let mut o = Outcome { command: cmd, enabled: true, checks: Vec::new(), notes: Vec::new(), files: Vec::new(), runtime_s: 0.0 };
    match cmd {
        Command::Forward => forward(cfg, &grid, out, &mut o)?,
        Command::Dnmap => dnmap(cfg, &grid, out, &mut o)?,
        Command::GoCheck if cfg.go.enabled => go_check(cfg, &grid, out, &mut o)?,
        Command::CarlemanCheck if cfg.carleman.enabled => carleman_check(cfg, &grid, out, &mut o)?,
        Command::Reconstruct if cfg.reconstruction.enabled => reconstruct(cfg, &grid, out, &mut o)?,
        Command::StabilityCurve if cfg.experiment.enabled => stability_curve(cfg, &grid, out, &mut o)?,
        _ => {
            o.enabled = false;
            o.notes.push("section disabled; nothing run".into());
        }
    }
    o.runtime_s = start.elapsed().as_secs_f64();
    let path = out.join("summary.json");
    o.files.push(path.clone());
    std::fs::write(&path, serde_json::to_string_pretty(&o)?)?;
    for c in &o.checks {
        info!("{} {}: {:.4e} (threshold {:.4e})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.value, c.threshold);
    }
    Ok(o)
}

fn partition(cfg: &Config, grid: &SpaceTimeGrid<f64>) -> Result<BoundaryPartition<f64>> {
    match &cfg.fields.cone {
        Some(c) => BoundaryPartition::new(grid, &c.omega0, c.eps),
        None => Ok(BoundaryPartition::full(grid)),
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    Ok(csv::Writer::from_path(path)?)
}

fn coord_header(n: usize, prefix: &str) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

/// Boundary nodes with coordinates, outward normal, face and partition tag.
pub fn write_boundary_csv(path: &Path, grid: &SpaceTimeGrid<f64>, part: &BoundaryPartition<f64>) -> Result<()> {
    let n = grid.dim();
    let mut w = csv_writer(path)?;
    let mut head = vec!["node".to_string()];
    head.extend(coord_header(n, "x"));
    head.extend(coord_header(n, "nu"));
    head.extend(["face".into(), "corner".into(), "partition".into()]);
    w.write_record(&head)?;
    for b in grid.boundary() {
        let mut row = vec![b.node.to_string()];
        row.extend(grid.coords(b.node).iter().map(|v| v.to_string()));
        row.extend((0..n).map(|i| if i == b.face.axis { b.face.sign::<f64>().to_string() } else { "0".into() }));
        row.extend([b.face.label(), b.corner.to_string(), part.tag(b.node).to_string()]);
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Grid values of complex fields at one time level: `node, x.., <name>_re, <name>_im ...`.
pub fn write_slice_csv(path: &Path, grid: &SpaceTimeGrid<f64>, k: usize, fields: &[(&str, &SpaceTimeField<Cplx<f64>>)]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut head = vec!["node".to_string()];
    head.extend(coord_header(grid.dim(), "x"));
    for (name, _) in fields {
        head.push(format!("{name}_re"));
        head.push(format!("{name}_im"));
    }
    w.write_record(&head)?;
    for node in 0..grid.nspace() {
        let mut row = vec![node.to_string()];
        row.extend(grid.coords(node).iter().map(|v| v.to_string()));
        for (_, f) in fields {
            let v = f.at(k, node);
            row.push(v.re.to_string());
            row.push(v.im.to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Boundary trace as `t, node, face, re, im`; unmeasured faces are skipped.
pub fn write_trace_csv(path: &Path, grid: &SpaceTimeGrid<f64>, tr: &BoundaryTrace<Cplx<f64>>, part: &BoundaryPartition<f64>) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["t", "node", "face", "re", "im"])?;
    for k in 0..grid.ntime() {
        for face in grid.faces().filter(|&f| part.is_measured(f)) {
            for (j, &node) in grid.face_nodes(face).iter().enumerate() {
                let v = tr.get(k, face, j);
                w.write_record([grid.time(k).to_string(), node.to_string(), face.label(), v.re.to_string(), v.im.to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Coefficients `A` and `q` of a pair at time level `k`.
fn write_coefficients_csv(path: &Path, grid: &SpaceTimeGrid<f64>, pair: &CoefficientPair, k: usize) -> Result<()> {
    let n = grid.dim();
    let a = pair.a.compile::<f64>();
    let q = pair.q.compile::<f64>();
    let t = grid.time(k);
    let mut w = csv_writer(path)?;
    let mut head = vec!["node".to_string()];
    head.extend(coord_header(n, "x"));
    head.extend(coord_header(n, "a"));
    head.push("q".into());
    w.write_record(&head)?;
    for node in 0..grid.nspace() {
        let x = grid.coords(node);
        let mut row = vec![node.to_string()];
        row.extend(x.iter().map(|v| v.to_string()));
        row.extend(a.iter().map(|c| c.eval(t, &x).to_string()));
        row.push(q.eval(t, &x).to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn forward(cfg: &Config, grid: &SpaceTimeGrid<f64>, out: &Path, o: &mut Outcome) -> Result<()> {
    let (pair, _) = cfg.fields.pairs(grid.dim())?;
    let part = partition(cfg, grid)?;
    let f = DirichletData::from_expr(grid, &Expr::parse(&cfg.fields.boundary_data)?);
    let sol = solve_forward(&pair, &f, grid, cfg.grid.scheme)?;
    let tr = neumann_trace(grid, &sol.u, &pair)?;
    let last = grid.ntime() - 1;
    let paths: Vec<PathBuf> = ["boundary.csv", "coefficients.csv", "solution_final.csv", "neumann.csv"].iter().map(|n| out.join(n)).collect();
    write_boundary_csv(&paths[0], grid, &part)?;
    write_coefficients_csv(&paths[1], grid, &pair, last / 2)?;
    write_slice_csv(&paths[2], grid, last, &[("u", &sol.u)])?;
    write_trace_csv(&paths[3], grid, &tr, &part)?;
    o.files.extend(paths);
    o.checks.push(Check::at_most("admissibility norm / M", pair.admissibility_norm(grid) / pair.m_bound, 1.0));
    o.checks.push(Check::at_most("linear solver residual", sol.residual_norm, 1e-8));
    Ok(())
}

#[derive(Serialize)]
struct DnRecord {
    pairs: String,
    eps: f64,
    omega0: Vec<f64>,
    basis_size: usize,
    norm: f64,
    iters: usize,
    converged: bool,
}

fn dnmap(cfg: &Config, grid: &SpaceTimeGrid<f64>, out: &Path, o: &mut Outcome) -> Result<()> {
    let (p1, p2) = cfg.fields.pairs(grid.dim())?;
    let part = partition(cfg, grid)?;
    let f = DirichletData::from_expr(grid, &Expr::parse(&cfg.fields.boundary_data)?);
    for (name, pair) in [("neumann_pair1.csv", &p1), ("neumann_pair2.csv", &p2)] {
        let path = out.join(name);
        write_trace_csv(&path, grid, &dn_apply(pair, &f, grid, &part, cfg.grid.scheme)?, &part)?;
        o.files.push(path);
    }
    let probes = probe_family(grid, cfg.fields.probes);
    let est = dn_diff_norm(&p1, &p2, grid, &part, &probes, cfg.fields.power_iters, cfg.grid.scheme)?;
    let mut records = vec![DnRecord {
        pairs: "pair1-pair2".into(),
        eps: part.eps,
        omega0: part.omega0.clone(),
        basis_size: est.basis_size,
        norm: est.norm,
        iters: est.iters,
        converged: est.converged,
    }];
    if cfg.fields.pair2.is_none() || cfg.fields.pair2.as_ref() == Some(&cfg.fields.pair1) {
        o.checks.push(Check::at_most("dn norm of identical pairs", est.norm, 0.0));
    }
    if let Some(gauge) = cfg.fields.gauge(grid)? {
        let g = gauge_study(&p1, &gauge, &[(grid.nx(), grid.ntime() - 1)], grid.t_final(), cfg.fields.probes, cfg.fields.power_iters)?;
        for (pairs, norm) in [("pair1-gauged", g.dn_gauge[0]), ("floor-be-cn", g.floor[0])] {
            records.push(DnRecord { pairs: pairs.into(), eps: 2.0, omega0: vec![], basis_size: probes.len(), norm, iters: cfg.fields.power_iters, converged: true });
        }
        o.checks.push(Check::at_most("gauge dn norm / discretization floor", g.dn_gauge[0] / g.floor[0], 10.0));
    }
    let path = out.join("dn_norm.json");
    write_json(&path, &records)?;
    o.files.push(path);
    Ok(())
}

fn go_check(cfg: &Config, grid: &SpaceTimeGrid<f64>, out: &Path, o: &mut Outcome) -> Result<()> {
    let (p1, p2) = cfg.fields.pairs(grid.dim())?;
    let setup = cfg.go.setup(&p1, &p2);
    let tr = transport_study(&setup, &cfg.go.transport_nx, cfg.go.transport_nt, grid.t_final())?;
    let rem = remainder_study(&setup, &cfg.go.lambdas, grid, cfg.grid.scheme)?;
    let b = setup.amplitude(grid.t_final())?.sample(grid);
    let transport_here = transport_residual(grid, &b, &setup.pair2.a, &setup.omega)?;
    let xi_norm = setup.freq.xi.iter().map(|v| v * v).sum::<f64>().sqrt();

    let path = out.join("go_check.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["lambda", "delta", "tau", "xi_norm", "norm_R_L2", "norm_R_H1", "norm_R_L2_zero_trace", "transport_residual"])?;
    for i in 0..rem.lambdas.len() {
        w.write_record(
            [rem.lambdas[i], setup.delta, setup.freq.tau, xi_norm, rem.l2[i], rem.h1[i], rem.l2_zero_trace[i], transport_here].map(|v| v.to_string()),
        )?;
    }
    w.flush()?;
    o.files.push(path);

    let path = out.join("transport.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["nx", "residual", "order"])?;
    for i in 0..tr.nx.len() {
        let order = if i == 0 { String::new() } else { tr.orders[i - 1].to_string() };
        w.write_record([tr.nx[i].to_string(), tr.residual[i].to_string(), order])?;
    }
    w.flush()?;
    o.files.push(path);

    let log_series = |name: &str, ys: &[f64]| Series { name: name.into(), points: rem.lambdas.iter().zip(ys).map(|(l, y)| (l.ln(), y.ln())).collect() };
    let path = out.join("remainder_decay.svg");
    write_line_plot(
        &path,
        "remainder decay",
        "log lambda",
        "log norm",
        &[log_series("R L2", &rem.l2), log_series("R H1", &rem.h1), log_series("R L2, zero trace", &rem.l2_zero_trace)],
    )?;
    o.files.push(path);
    let path = out.join("go_study.json");
    write_json(&path, &serde_json::json!({ "transport": tr, "remainder": rem }))?;
    o.files.push(path);

    o.checks.push(Check::at_least("transport residual order", tr.min_order, cfg.go.min_order));
    o.checks.push(Check::at_most("remainder L2 slope", rem.slope_l2, cfg.go.max_slope_l2));
    o.checks.push(Check::at_most("remainder H1 slope", rem.slope_h1, cfg.go.max_slope_h1));
    o.notes.push("amplitudes are built from the true coefficients".into());
    Ok(())
}

fn carleman_check(cfg: &Config, grid: &SpaceTimeGrid<f64>, out: &Path, o: &mut Outcome) -> Result<()> {
    let (p1, _) = cfg.fields.pairs(grid.dim())?;
    let c = &cfg.carleman;
    let suite = carleman_suite(c.seed, c.suite_size, grid.dim());
    let study = carleman_study(&suite, &p1, &c.omega, &c.lambdas, grid, c.growth)?;
    let path = out.join("carleman.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["lambda", "test_id", "group1", "group2", "group3", "group4", "group5", "lhs", "rhs", "ratio"])?;
    for (i, reps) in study.reports.iter().enumerate() {
        for (j, r) in reps.iter().enumerate() {
            let mut row = vec![study.lambdas[i].to_string(), j.to_string()];
            row.extend(r.groups().iter().chain([r.lhs, r.rhs, r.ratio].iter()).map(|v| v.to_string()));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    o.files.push(path);
    let path = out.join("carleman_summary.json");
    write_json(
        &path,
        &serde_json::json!({
            "lambda1_empirical": study.lambda1_empirical,
            "C_empirical": study.c_empirical,
            "max_ratio": study.max_ratio,
            "worst_quadrupling": study.worst_quadrupling,
        }),
    )?;
    o.files.push(path);
    let path = out.join("carleman_ratio.svg");
    let pts = study.lambdas.iter().zip(&study.max_ratio).map(|(l, r)| (l.ln(), *r)).collect();
    write_line_plot(&path, "largest lhs/rhs over the suite", "log lambda", "ratio", &[Series { name: "max ratio".into(), points: pts }])?;
    o.files.push(path);
    o.checks.push(Check::at_least("finite empirical lambda_1", if study.lambda1_empirical.is_finite() { 1.0 } else { 0.0 }, 1.0));
    o.checks.push(Check::at_most("bound growth over two doublings", study.worst_quadrupling, c.growth));
    Ok(())
}

fn reconstruct(cfg: &Config, grid: &SpaceTimeGrid<f64>, out: &Path, o: &mut Outcome) -> Result<()> {
    let (p1, p2) = cfg.fields.pairs(grid.dim())?;
    let rs = &cfg.reconstruction;
    let k = rs.slice.unwrap_or(grid.ntime() / 2).min(grid.ntime() - 1);
    let mut report = serde_json::Map::new();
    let a_differs = p1.a != p2.a;
    let rec = reconstruct_a(&p1, &p2, &rs.settings, grid)?;
    let named: Vec<(String, &SpaceTimeField<Cplx<f64>>)> = rec.field.iter().enumerate().map(|(i, f)| (format!("a{}", i + 1), f)).collect();
    let path = out.join("a_reconstructed.csv");
    write_slice_csv(&path, grid, k, &named.iter().map(|(n, f)| (n.as_str(), *f)).collect::<Vec<_>>())?;
    o.files.push(path);
    let div = rec
        .samples
        .iter()
        .map(|s| {
            let size = s.a_hat.iter().map(|(re, im)| re * re + im * im).sum::<f64>().sqrt();
            if size > 0.0 { s.div_residual / size } else { 0.0 }
        })
        .fold(0.0, f64::max);
    report.insert("a".into(), serde_json::json!({
        "l2_error": rec.l2_error,
        "l2_truth": rec.l2_truth,
        "linf_error": rec.linf_error,
        "min_det": rec.min_det,
        "per_frequency": rec.samples,
        "skipped": rec.skipped.iter().map(|(m, why)| serde_json::json!({"mode": m, "reason": why})).collect::<Vec<_>>(),
    }));
    o.checks.push(Check::at_most("relative divergence of recovered coefficients", div, rs.div_tol));
    if a_differs {
        if let Some(tol) = rs.max_rel_error {
            o.checks.push(Check::at_most("relative L2 error of eta^2 A", rec.l2_error, tol));
        }
    } else if p1 == p2 {
        let size = rec.field.iter().flat_map(|f| f.data().iter()).map(|v| v.norm()).fold(0.0, f64::max);
        o.checks.push(Check::at_most("max |eta^2 A| for identical pairs", size, 1e-14));
    }
    if rs.reconstruct_q {
        let qr = reconstruct_q(&p1, &p2, &rs.settings, a_differs.then_some(rec.field.as_slice()), grid)?;
        let path = out.join("q_reconstructed.csv");
        write_slice_csv(&path, grid, k, &[("qtilde", &qr.qtilde), ("q", &qr.q)])?;
        o.files.push(path);
        report.insert("q".into(), serde_json::json!({
            "l2_error": qr.l2_error,
            "l2_truth": qr.l2_truth,
            "linf_error": qr.linf_error,
            "per_frequency": qr.samples,
        }));
        if let (Some(tol), true) = (rs.max_rel_error, qr.l2_truth > 0.0) {
            o.checks.push(Check::at_most("relative L2 error of eta^2 (q_1 - q_2)", qr.l2_error, tol));
        }
    }
    let path = out.join("error_report.json");
    write_json(&path, &report)?;
    o.files.push(path);
    o.notes.push("amplitudes are built from the true coefficients".into());
    Ok(())
}

fn stability_curve(cfg: &Config, grid: &SpaceTimeGrid<f64>, out: &Path, o: &mut Outcome) -> Result<()> {
    let (base, _) = cfg.fields.pairs(grid.dim())?;
    let ex = &cfg.experiment;
    let pert = ex.perturbation(grid.dim())?;
    let records = run_family(&base, &pert, &ex.family(&cfg.fields, &cfg.reconstruction), grid)?;
    let use_q = cfg.reconstruction.reconstruct_q && pert.da.is_zero();
    let mut fits: Vec<LawFit> = Vec::new();
    for &law in &ex.laws {
        match fit_stability_law(&records, law, use_q) {
            Ok(f) => fits.push(f),
            Err(e) => o.notes.push(format!("{law:?} fit skipped: {e}")),
        }
    }
    o.files.extend(emit_report(&records, &fits, out)?);
    let dn: Vec<f64> = records.iter().map(|r| r.dn_norm).collect();
    let err: Vec<f64> = records.iter().map(|r| if use_q { r.err_q_l2 } else { r.err_a_l2 }).collect();
    if records.len() >= 2 {
        o.checks.push(Check::at_least("rank correlation of error and dn norm", rank_correlation(&dn, &err)?, ex.min_rank_correlation));
    } else {
        o.notes.push("fewer than two records; no trend to check".into());
    }
    let residual = |law| fits.iter().find(|f| f.law == law).map(|f| f.residual);
    if let (Some(p), Some(d)) = (residual(StabilityLaw::Power), residual(StabilityLaw::DoubleLog)) {
        o.checks.push(Check::at_most("double-log residual / best residual", d / p.min(d).max(f64::MIN_POSITIVE), 2.0));
    }
    o.notes.push("fitted exponents describe this family only; the constants of the stability estimates are not computable".into());
    Ok(())
}

impl std::str::FromStr for Command {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "forward" => Command::Forward,
            "dnmap" => Command::Dnmap,
            "go-check" => Command::GoCheck,
            "carleman-check" => Command::CarlemanCheck,
            "reconstruct" => Command::Reconstruct,
            "stability-curve" => Command::StabilityCurve,
            _ => return Err(LabError::InvalidArgument(format!("unknown command `{s}`"))),
        })
    }
}
