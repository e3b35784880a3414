//! Acceptance run: one PASS/FAIL line per criterion, at the stated tolerances.
//! Failing criteria are reported, not hidden; the process exits 0 once every
//! criterion has been evaluated. `CDLAB_ACCEPTANCE=1,4,9` runs a subset.

use std::f64::consts::PI;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use cdlab::experiment::{fit_stability_law, rank_correlation, run_family, FamilyConfig, Perturbation, StabilityLaw};
use cdlab::expr::Expr;
use cdlab::fields::{make_divfree_field, CoefficientPair, GaugeFunction, VectorField};
use cdlab::go::Frequency;
use cdlab::grid::{BoundaryPartition, SpaceTimeGrid};
use cdlab::reconstruction::{assemble_mxi, reconstruct_a, reconstruct_q, solve_component_system, ReconstructionConfig};
use cdlab::solver::{dn_diff_norm, probe_family, Scheme};
use cdlab::spectral::{FourierBox, Mode};
use cdlab::suites::{carleman_study, carleman_suite, gauge_study, identity_study, remainder_study, transport_study, GoSetup};
use cdlab::Cplx;

const T_FINAL: f64 = 1.5;
const BUMP: &str = "sin(pi*x1)^2*sin(pi*x2)^2";

#[derive(Serialize)]
struct Outcome {
    id: usize,
    name: &'static str,
    passed: bool,
    summary: String,
    details: Vec<String>,
    runtime_s: f64,
}

fn stream(scale: f64) -> VectorField {
    make_divfree_field(&[Expr::parse(&format!("{scale}*{BUMP}")).unwrap()], 2).unwrap()
}

fn grid(nx: usize, nt: usize) -> SpaceTimeGrid<f64> {
    SpaceTimeGrid::new(2, nx, nt, T_FINAL).unwrap()
}

/// Background pair `(A_2, q_2)` shared by the criteria.
fn background() -> CoefficientPair {
    CoefficientPair::new(stream(0.2), Expr::parse("1+x1").unwrap(), 100.0)
}

/// `pair1 = (A_2 + D, q_2)` with the zero-trace single-mode difference `D`.
fn convection_pairs() -> (CoefficientPair, CoefficientPair) {
    let p2 = background();
    let p1 = CoefficientPair::new(p2.a.add(&stream(0.3)), p2.q.clone(), 100.0);
    (p1, p2)
}

fn go_setup() -> GoSetup {
    let s = 0.5f64.sqrt();
    GoSetup {
        pair2: background(),
        d: stream(0.3),
        omega: vec![-s, s],
        freq: Frequency { tau: 2.0 * PI / T_FINAL, xi: vec![2.0 * PI, 2.0 * PI] },
        delta: 0.2,
    }
}

fn fourier_identity() -> (bool, String, Vec<String>) {
    let (p1, p2) = convection_pairs();
    let g = grid(65, 128);
    let boxed = FourierBox::new(T_FINAL, 0.0, 2).unwrap();
    let js = [vec![1, 1], vec![1, -1], vec![1, 0], vec![0, 1]];
    let modes: Vec<Mode> = [0, 1, -1].iter().flat_map(|&k| js.iter().map(move |j| Mode { k, j: j.clone() })).take(10).collect();
    let start = Instant::now();
    let s = identity_study(&p1, &p2, &modes, boxed, 0.2, &g).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let details = s.modes.iter().zip(&s.checks).map(|(m, c)| format!("k={} j={:?}: rel error {:.2e}", m.k, m.j, c.rel_error)).collect();
    (
        s.max_rel_error <= 1e-3 && secs <= 60.0,
        format!("10 modes on 65^2 x 128: max rel error {:.2e} (<= 1e-3), {secs:.1} s (<= 60 s)", s.max_rel_error),
        details,
    )
}

fn transport() -> (bool, String, Vec<String>) {
    let s = transport_study(&go_setup(), &[33, 65, 129], 16, T_FINAL).unwrap();
    let details = s.nx.iter().zip(&s.residual).map(|(n, r)| format!("Nx={n}: max residual {r:.3e}")).collect();
    (s.min_order >= 1.9, format!("observed orders {:?} (>= 1.9)", s.orders.iter().map(|o| format!("{o:.2}")).collect::<Vec<_>>()), details)
}

fn remainder() -> (bool, String, Vec<String>) {
    let start = Instant::now();
    let s = remainder_study(&go_setup(), &[8.0, 16.0, 32.0, 64.0], &grid(65, 128), Scheme::BackwardEuler).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let mut details: Vec<String> = (0..s.lambdas.len())
        .map(|i| format!("lambda={}: L2 {:.3e}, L2(H1) {:.3e}, zero-trace L2 {:.3e}", s.lambdas[i], s.l2[i], s.h1[i], s.l2_zero_trace[i]))
        .collect();
    details.push(format!("slope without the boundary corrector: {:.3}", s.slope_l2_zero_trace));
    (
        s.slope_l2 <= -0.8 && s.slope_h1 <= 0.2 && secs <= 600.0,
        format!("L2 slope {:.3} (<= -0.8), L2(H1) slope {:.3} (<= 0.2), {secs:.0} s at Nx=65 (<= 600 s)", s.slope_l2, s.slope_h1),
        details,
    )
}

fn carleman() -> (bool, String, Vec<String>) {
    let suite = carleman_suite(7, 20, 2);
    let lambdas = [1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0];
    let s = carleman_study(&suite, &background(), &[0.6, 0.8], &lambdas, &grid(33, 64), 1.25).unwrap();
    let details = s.lambdas.iter().zip(&s.max_ratio).map(|(l, r)| format!("lambda={l}: max lhs/rhs {r:.4}")).collect();
    (
        s.non_degrading,
        format!(
            "20 functions: lambda_1 = {}, C = {:.4}, worst growth over two doublings {:.3} (<= 1.25)",
            s.lambda1_empirical, s.c_empirical, s.worst_quadrupling
        ),
        details,
    )
}

fn round_trip_error<const N: usize>(xi: &[f64; N], omega0: &[f64; N], eps: f64, cap: bool, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let sys = assemble_mxi(xi, omega0, eps, cap).unwrap();
    let xn2: f64 = xi.iter().map(|v| v * v).sum();
    let mut truth = [Cplx::new(0.0, 0.0); N];
    for v in truth.iter_mut() {
        *v = Cplx::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    }
    let along: Cplx<f64> = (0..N).map(|i| truth[i] * xi[i]).sum::<Cplx<f64>>() / xn2;
    for i in 0..N {
        truth[i] -= along * xi[i];
    }
    let size = truth.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    let g: Vec<Cplx<f64>> = sys.directions.iter().map(|w| (0..N).map(|i| truth[i] * w[i]).sum()).collect();
    let sol = solve_component_system(&g, &sys).unwrap();
    let err = sol.a_hat.iter().zip(&truth).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt() / size;
    (err, sys.det.abs())
}

fn inversion() -> (bool, String, Vec<String>) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut err2, mut det2) = (0.0f64, f64::INFINITY);
    for _ in 0..100 {
        let xi = [rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0)];
        let (e, d) = round_trip_error(&xi, &[1.0, 0.0], 1.0, false, &mut rng);
        err2 = err2.max(e);
        det2 = det2.min(d);
    }
    // n = 3 on the cone: |xi_hat . omega0| <= s keeps a tilt of fixed size inside the cap
    let (eps, s): (f64, f64) = (1.0, 0.05);
    let c3 = (0.999 * ((1.0 - eps * eps / 8.0) / (1.0 - s * s).sqrt()).acos()).sin();
    let (mut err3, mut det3) = (0.0f64, f64::INFINITY);
    let mut taken = 0;
    while taken < 100 {
        let xi: [f64; 3] = [rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0)];
        let n = (xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2]).sqrt();
        if xi[2].abs() > s * n {
            continue;
        }
        let (e, d) = round_trip_error(&xi, &[0.0, 0.0, 1.0], eps, true, &mut rng);
        err3 = err3.max(e);
        det3 = det3.min(d);
        taken += 1;
    }
    let passed = err2 <= 1e-10 && err3 <= 1e-10 && det2 >= 1.0 - 1e-12 && det3 >= c3;
    (
        passed,
        format!("100 + 100 frequencies: max rel error {:.1e} (n=2), {:.1e} (n=3) (<= 1e-10); min |det| {det2:.6} >= c = 1 (n=2), {det3:.4} >= c = {c3:.4} (n=3 cone)", err2, err3),
        vec![],
    )
}

fn a_reconstruction() -> (bool, String, Vec<String>) {
    let (p1, p2) = convection_pairs();
    let g = grid(65, 128);
    let mut errs = Vec::new();
    let mut details = Vec::new();
    for lambda in [32.0, 64.0] {
        let start = Instant::now();
        let cfg = ReconstructionConfig { lambda, kmax: 4, q_oracle: true, ..Default::default() };
        let r = reconstruct_a(&p1, &p2, &cfg, &g).unwrap();
        details.push(format!(
            "lambda={lambda}: rel L2 error {:.4}, Linf {:.3e}, {} frequencies, {:.0} s",
            r.l2_error,
            r.linf_error,
            r.samples.len(),
            start.elapsed().as_secs_f64()
        ));
        errs.push(r.l2_error);
    }
    (
        errs[0] <= 0.15 && errs[1] < errs[0],
        format!("rel L2 error {:.4} at lambda=32 (<= 0.15), {:.4} at lambda=64 (must decrease)", errs[0], errs[1]),
        details,
    )
}

fn q_reconstruction() -> (bool, String, Vec<String>) {
    let p2 = background();
    let p1 = CoefficientPair::new(p2.a.clone(), Expr::parse("1+x1+0.5*cos(2*pi*x1)*cos(2*pi*x2)").unwrap(), 100.0);
    let g = grid(65, 128);
    let start = Instant::now();
    let cfg = ReconstructionConfig { lambda: 32.0, kmax: 4, ..Default::default() };
    let r = reconstruct_q(&p1, &p2, &cfg, None, &g).unwrap();
    (
        r.l2_error <= 0.15,
        format!("rel L2 error of eta^2 (q_1 - q_2) {:.4} at lambda=32 (<= 0.15)", r.l2_error),
        vec![format!("Linf {:.3e}, {} frequencies, {:.0} s", r.linf_error, r.samples.len(), start.elapsed().as_secs_f64())],
    )
}

fn stability_trend() -> (bool, String, Vec<String>) {
    let g = grid(33, 64);
    let pert = Perturbation { da: stream(1.0), dq: Expr::num(0.0) };
    let cfg = FamilyConfig {
        scenario: "bump".into(),
        scales: vec![0.0, 0.03, 0.06, 0.12, 0.24, 0.48],
        reconstruction: ReconstructionConfig { lambda: 32.0, kmax: 2, q_oracle: true, ..Default::default() },
        probes: 6,
        power_iters: 100,
        ..Default::default()
    };
    let recs = run_family(&background(), &pert, &cfg, &g).unwrap();
    let dn: Vec<f64> = recs.iter().map(|r| r.dn_norm).collect();
    let err: Vec<f64> = recs.iter().map(|r| r.err_a_l2).collect();
    let rho = rank_correlation(&dn, &err).unwrap();
    let power = fit_stability_law(&recs, StabilityLaw::Power, false).unwrap();
    let dlog = fit_stability_law(&recs, StabilityLaw::DoubleLog, false).unwrap();
    let best = power.residual.min(dlog.residual);
    let mut details: Vec<String> = recs.iter().map(|r| format!("scale {}: dn {:.3e}, err_A {:.3e}", r.eps_perturb, r.dn_norm, r.err_a_l2)).collect();
    for f in [&power, &dlog] {
        details.push(format!("{:?}: C {:.3e}, a1 {:.3}, a2 {:.3}, residual {:.3e}", f.law, f.c, f.a1, f.a2, f.residual));
    }
    details.push("the exponents of the stability estimates depend on uncomputable constants and are not reproduced".into());
    (
        rho >= 0.9 && dlog.residual <= 2.0 * best,
        format!("rank correlation {rho:.3} (>= 0.9); double-log residual {:.3e} vs 2 x best {:.3e}", dlog.residual, 2.0 * best),
        details,
    )
}

fn gauge() -> (bool, String, Vec<String>) {
    let pair = background();
    let g = grid(17, 32);
    let phi = GaugeFunction::new(Expr::parse("0.3*sin(pi*x1)^3*sin(pi*x2)^3*(1+t)").unwrap(), &g).unwrap();
    let s = gauge_study(&pair, &phi, &[(17, 32), (33, 64), (65, 128)], T_FINAL, 6, 100).unwrap();
    let last = s.dn_gauge.len() - 1;
    let shrinks = s.dn_gauge.windows(2).all(|w| w[1] < w[0]);
    let details = (0..=last).map(|i| format!("Nx={} Nt={}: gauge {:.3e}, floor {:.3e}", s.nx[i], s.nt[i], s.dn_gauge[i], s.floor[i])).collect();
    (
        s.dn_gauge[last] <= 10.0 * s.floor[last] && shrinks,
        format!("at 65^2 x 128: {:.3e} <= 10 x floor {:.3e}; shrinks under refinement: {shrinks}", s.dn_gauge[last], s.floor[last]),
        details,
    )
}

fn zero_cases() -> (bool, String, Vec<String>) {
    let (pair, _) = convection_pairs();
    let g = grid(33, 64);
    let part = BoundaryPartition::full(&g);
    let probes = probe_family(&g, 6);
    let dn = [0, 1].map(|_| dn_diff_norm(&pair, &pair, &g, &part, &probes, 100, Scheme::BackwardEuler).unwrap().norm);
    let cfg = ReconstructionConfig { lambda: 32.0, kmax: 2, ..Default::default() };
    let ra = reconstruct_a(&pair, &pair, &cfg, &g).unwrap();
    let rq = reconstruct_q(&pair, &pair, &cfg, None, &g).unwrap();
    let amax = ra.field.iter().flat_map(|f| f.data()).map(|v| v.norm()).fold(0.0, f64::max);
    let qmax = rq.q.data().iter().map(|v| v.norm()).fold(0.0, f64::max);
    (
        dn == [0.0, 0.0] && amax == 0.0 && qmax == 0.0,
        format!("dn norms {:?}, max |A| {amax:e}, max |q| {qmax:e} (all exactly 0)", dn),
        vec![],
    )
}

type Criterion = (usize, &'static str, fn() -> (bool, String, Vec<String>));

fn main() {
    let criteria: [Criterion; 10] = [
        (1, "Fourier identity", fourier_identity),
        (2, "transport residual order", transport),
        (3, "remainder decay", remainder),
        (4, "boundary Carleman estimate", carleman),
        (5, "component inversion round trip", inversion),
        (6, "convection reconstruction", a_reconstruction),
        (7, "potential reconstruction", q_reconstruction),
        (8, "stability trend", stability_trend),
        (9, "gauge invariance", gauge),
        (10, "zero cases", zero_cases),
    ];
    let only: Option<Vec<usize>> = std::env::var("CDLAB_ACCEPTANCE").ok().map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let mut outcomes = Vec::new();
    for (id, name, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let (passed, summary, details) = f();
        let runtime_s = start.elapsed().as_secs_f64();
        println!("{} {id:>2} {name}: {summary} [{runtime_s:.1} s]", if passed { "PASS" } else { "FAIL" });
        for d in &details {
            println!("         {d}");
        }
        outcomes.push(Outcome { id, name, passed, summary, details, runtime_s });
    }
    let passed = outcomes.iter().filter(|o| o.passed).count();
    println!("acceptance: {passed}/{} criteria pass", outcomes.len());
    let path = std::path::Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance.json");
    if std::fs::write(&path, serde_json::to_string_pretty(&outcomes).unwrap()).is_ok() {
        println!("report: {}", path.display());
    }
}
