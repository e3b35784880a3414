use std::f64::consts::PI;

use cdlab::expr::Expr;
use cdlab::fields::{make_divfree_field, CoefficientPair, GaugeFunction, VectorField};
use cdlab::go::{build_go_solution_with, Amplitude, AmplitudeShape, CarlemanWeight, Cutoff, Frequency, GoSign};
use cdlab::grid::{BoundaryPartition, SpaceTimeGrid};
use cdlab::quadrature::SegmentRule;
use cdlab::reconstruction::{integral_identity_residual, reconstruct_a, reconstruct_q, ReconstructionConfig};
use cdlab::solver::{dn_diff_norm, probe_family, Scheme};
use cdlab::spectral::{FourierBox, Mode};
use cdlab::suites::{gauge_study, identity_study};

fn stream(src: &str) -> VectorField {
    make_divfree_field(&[Expr::parse(src).unwrap()], 2).unwrap()
}

fn pairs() -> (CoefficientPair, CoefficientPair) {
    let a2 = stream("0.2*sin(pi*x1)^2*sin(pi*x2)^2");
    let d = stream("0.3*sin(pi*x1)^2*sin(pi*x2)^2");
    let p2 = CoefficientPair::new(a2.clone(), Expr::parse("1+x1").unwrap(), 100.0);
    let p1 = CoefficientPair::new(a2.add(&d), Expr::parse("1+x1*x2").unwrap(), 100.0);
    (p1, p2)
}

/// Relative residual of the integral identity on an `nx^2 x nt` grid.
fn identity_residual(nx: usize, nt: usize, lambda: f64) -> f64 {
    let (p1, p2) = pairs();
    let d = p1.a.sub(&p2.a);
    let s = 0.5f64.sqrt();
    let w = [-s, s];
    let g = SpaceTimeGrid::<f64>::new(2, nx, nt, 1.5).unwrap();
    let cut = Cutoff::new(0.2, 1.5).unwrap();
    let freq = Frequency { tau: 0.0, xi: vec![2.0 * PI, 2.0 * PI] };
    let b2 = Amplitude::growing(&p2.a, &d, &w, freq, AmplitudeShape::Gradient, cut.clone(), SegmentRule::default()).unwrap().sample(&g);
    let b1 = Amplitude::decaying(&p1.a.neg(), &w, cut, SegmentRule::default()).unwrap().sample(&g);
    let wt = CarlemanWeight::simple(lambda, &w).unwrap();
    let be = Scheme::BackwardEuler;
    let u2 = build_go_solution_with(&p2, &b2, &wt, GoSign::Growing, &g, be, None).unwrap();
    let u1 = build_go_solution_with(&p1, &b2, &wt, GoSign::Growing, &g, be, None).unwrap();
    let v = build_go_solution_with(&p1, &b1, &wt, GoSign::Decaying, &g, be, None).unwrap();
    let wd = u1.w().zip_with(&u2.w(), |a, b| a - b).unwrap();
    let (res, rhs) = integral_identity_residual(&p1, &p2, &u2, &v, &wd, &g).unwrap();
    res.norm() / rhs
}

#[test]
fn integral_identity_residual_converges() {
    let r: Vec<f64> = [(17, 32), (33, 64), (65, 128)].iter().map(|&(nx, nt)| identity_residual(nx, nt, 4.0)).collect();
    assert!(r[0] / r[1] > 2.5 && r[1] / r[2] > 2.5, "{r:?}");
    assert!(r[2] < 1e-2, "{r:?}");
}

#[test]
fn fourier_identity_on_a_coarse_grid() {
    let (p1, p2) = pairs();
    let g = SpaceTimeGrid::<f64>::new(2, 33, 64, 1.5).unwrap();
    let boxed = FourierBox::new(1.5, 0.0, 2).unwrap();
    let modes = [Mode { k: 0, j: vec![1, 1] }, Mode { k: 1, j: vec![1, -1] }, Mode { k: -2, j: vec![0, 1] }];
    let study = identity_study(&p1, &p2, &modes, boxed, 0.2, &g).unwrap();
    assert!(study.max_rel_error < 1e-2, "{:?}", study.checks);
}

#[test]
fn gauge_transform_leaves_the_dn_map_at_the_floor() {
    let (pair, _) = pairs();
    let grid = SpaceTimeGrid::<f64>::new(2, 17, 16, 1.5).unwrap();
    let gauge = GaugeFunction::new(Expr::parse("0.3*sin(pi*x1)^3*sin(pi*x2)^3*(1+t)").unwrap(), &grid).unwrap();
    let s = gauge_study(&pair, &gauge, &[(17, 16), (33, 64)], 1.5, 4, 60).unwrap();
    assert!(s.dn_gauge[1] < s.dn_gauge[0], "{s:?}");
    for i in 0..2 {
        assert!(s.dn_gauge[i] <= 10.0 * s.floor[i], "{s:?}");
    }
}

#[test]
fn identical_pairs_give_exact_zeros() {
    let (pair, _) = pairs();
    let g = SpaceTimeGrid::<f64>::new(2, 17, 16, 1.5).unwrap();
    let part = BoundaryPartition::full(&g);
    let dn = dn_diff_norm(&pair, &pair, &g, &part, &probe_family(&g, 4), 20, Scheme::BackwardEuler).unwrap();
    assert_eq!(dn.norm, 0.0);
    let cfg = ReconstructionConfig { lambda: 8.0, kmax: 1, ..Default::default() };
    let ra = reconstruct_a(&pair, &pair, &cfg, &g).unwrap();
    assert!(ra.field.iter().all(|f| f.data().iter().all(|v| v.norm() == 0.0)));
    let rq = reconstruct_q(&pair, &pair, &cfg, None, &g).unwrap();
    assert!(rq.q.data().iter().all(|v| v.norm() == 0.0));
}
