//! Invariant suites shared by the command line and the acceptance run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::carleman::{lambda_threshold_scan, CarlemanReport, ThresholdScan};
use crate::error::{LabError, Result};
use crate::fields::{apply_gauge, CoefficientPair, GaugeFunction, VectorField};
use crate::go::{build_go_solution_with, corrector_trace, transport_residual, Amplitude, AmplitudeShape, CarlemanWeight, Cutoff, Frequency, GoSign};
use crate::grid::{BoundaryPartition, SpaceTimeGrid};
use crate::quadrature::SegmentRule;
use crate::reconstruction::{fourier_identity_check, weighted_component, IdentityCheck};
use crate::solver::{dn_diff_norm, dn_diff_norm_schemes, probe_family, Scheme};
use crate::spectral::{FourierBox, Mode, Spectrum};
use crate::testfn::TestFunction;

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Growing-amplitude setup: `B_g` for `A_2`, difference `D`, direction and frequency.
#[derive(Clone, Debug)]
pub struct GoSetup {
    pub pair2: CoefficientPair,
    pub d: VectorField,
    pub omega: Vec<f64>,
    pub freq: Frequency,
    pub delta: f64,
}

impl GoSetup {
    pub fn amplitude(&self, t_final: f64) -> Result<Amplitude<f64>> {
        Amplitude::growing(
            &self.pair2.a,
            &self.d,
            &self.omega,
            self.freq.clone(),
            AmplitudeShape::Gradient,
            Cutoff::new(self.delta, t_final)?,
            SegmentRule::default(),
        )
    }
}

const ROUNDOFF: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransportStudy {
    pub nx: Vec<usize>,
    pub residual: Vec<f64>,
    /// Observed orders between consecutive grids; infinite when both residuals are at round-off.
    pub orders: Vec<f64>,
    pub min_order: f64,
}

/// `max |omega . (grad_h + A_2) B_g|` under spatial refinement.
pub fn transport_study(setup: &GoSetup, nxs: &[usize], nt: usize, t_final: f64) -> Result<TransportStudy> {
    if nxs.len() < 2 {
        return Err(LabError::InvalidArgument("transport study needs at least two grids".into()));
    }
    let mut residual = Vec::new();
    for &nx in nxs {
        let g = SpaceTimeGrid::new(setup.omega.len(), nx, nt, t_final)?;
        let b = setup.amplitude(t_final)?.sample(&g);
        residual.push(transport_residual(&g, &b, &setup.pair2.a, &setup.omega)?);
    }
    // residuals at round-off mean the amplitude is exact along the rays
    let orders: Vec<f64> = (1..nxs.len())
        .map(|i| {
            if residual[i - 1].max(residual[i]) <= ROUNDOFF {
                f64::INFINITY
            } else {
                (residual[i - 1] / residual[i].max(ROUNDOFF)).ln() / (((nxs[i] - 1) as f64) / ((nxs[i - 1] - 1) as f64)).ln()
            }
        })
        .collect();
    let min_order = orders.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(TransportStudy { nx: nxs.to_vec(), residual, orders, min_order })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemainderStudy {
    pub lambdas: Vec<f64>,
    /// With the boundary corrector.
    pub l2: Vec<f64>,
    pub h1: Vec<f64>,
    /// Remainder with zero lateral trace, for comparison.
    pub l2_zero_trace: Vec<f64>,
    pub slope_l2: f64,
    pub slope_h1: f64,
    pub slope_l2_zero_trace: f64,
}

/// `||R||_{L2(Q)}` and `||R||_{L2(0,T;H1)}` of the growing solution over `lambdas`.
pub fn remainder_study(setup: &GoSetup, lambdas: &[f64], grid: &SpaceTimeGrid<f64>, scheme: Scheme) -> Result<RemainderStudy> {
    if lambdas.len() < 2 {
        return Err(LabError::InvalidArgument("remainder study needs at least two lambdas".into()));
    }
    let amp = setup.amplitude(grid.t_final())?;
    let b = amp.sample(grid);
    let (mut l2, mut h1, mut l2z) = (Vec::new(), Vec::new(), Vec::new());
    for &lam in lambdas {
        let w = CarlemanWeight::simple(lam, &setup.omega)?;
        let c = corrector_trace(&setup.pair2, &amp, &w, GoSign::Growing, grid)?;
        let with = build_go_solution_with(&setup.pair2, &b, &w, GoSign::Growing, grid, scheme, Some(&c))?;
        let zero = build_go_solution_with(&setup.pair2, &b, &w, GoSign::Growing, grid, scheme, None)?;
        l2.push(with.norm_r_l2);
        h1.push(with.norm_r_h1);
        l2z.push(zero.norm_r_l2);
    }
    Ok(RemainderStudy {
        slope_l2: loglog_slope(lambdas, &l2),
        slope_h1: loglog_slope(lambdas, &h1),
        slope_l2_zero_trace: loglog_slope(lambdas, &l2z),
        lambdas: lambdas.to_vec(),
        l2,
        h1,
        l2_zero_trace: l2z,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityStudy {
    pub modes: Vec<Mode>,
    pub checks: Vec<IdentityCheck>,
    pub max_rel_error: f64,
}

/// Direct quadrature against the FFT coefficient at each mode; the direction
/// at `xi` is `xi^perp` (two dimensions).
pub fn identity_study(pair1: &CoefficientPair, pair2: &CoefficientPair, modes: &[Mode], boxed: FourierBox, delta: f64, grid: &SpaceTimeGrid<f64>) -> Result<IdentityStudy> {
    if grid.dim() != 2 {
        return Err(LabError::InvalidArgument("the identity study picks xi^perp and needs n = 2".into()));
    }
    let d = pair1.a.sub(&pair2.a);
    let cut = Cutoff::new(delta, grid.t_final())?;
    let mut checks = Vec::new();
    for m in modes {
        let xi = boxed.xi(&m.j);
        let xn = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
        if xn == 0.0 {
            return Err(LabError::InvalidArgument(format!("mode {m:?} has xi = 0")));
        }
        let omega = [-xi[1] / xn, xi[0] / xn];
        let spectrum = Spectrum::of_field(grid, boxed, &weighted_component(grid, &d, &omega, &cut))?;
        checks.push(fourier_identity_check(&pair1.a, &pair2.a, &omega, m, boxed, delta, grid, Some(&spectrum))?);
    }
    let max_rel_error = checks.iter().map(|c| c.rel_error).fold(0.0, f64::max);
    Ok(IdentityStudy { modes: modes.to_vec(), checks, max_rel_error })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CarlemanStudy {
    pub lambdas: Vec<f64>,
    pub max_ratio: Vec<f64>,
    pub lambda1_empirical: f64,
    pub c_empirical: f64,
    /// Largest `ratio(4 lambda) / ratio(lambda)` over scanned `lambda >= lambda_1`.
    pub worst_quadrupling: f64,
    pub non_degrading: bool,
    /// `reports[i][j]`: suite member `j` at `lambdas[i]`.
    pub reports: Vec<Vec<CarlemanReport>>,
}

/// `count` seeded test functions vanishing on `Sigma` and at `t = 0`.
pub fn carleman_suite(seed: u64, count: usize, n: usize) -> Vec<TestFunction> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| TestFunction::random_boundary_vanishing(&mut rng, n)).collect()
}

/// Threshold scan with the check that the bound does not grow by more than
/// `growth` when `lambda` doubles twice.
pub fn carleman_study(suite: &[TestFunction], pair: &CoefficientPair, omega: &[f64], lambdas: &[f64], grid: &SpaceTimeGrid<f64>, growth: f64) -> Result<CarlemanStudy> {
    let ThresholdScan { lambdas, reports, max_ratio, lambda1_empirical, c_empirical } = lambda_threshold_scan(suite, pair, omega, lambdas, grid)?;
    let mut worst = 0.0f64;
    for i in 0..lambdas.len() {
        if lambdas[i] < lambda1_empirical {
            continue;
        }
        if let Some(j) = lambdas.iter().position(|&l| (l - 4.0 * lambdas[i]).abs() < 1e-9 * l) {
            worst = worst.max(max_ratio[j] / max_ratio[i]);
        }
    }
    let non_degrading = lambda1_empirical.is_finite() && worst <= growth;
    Ok(CarlemanStudy { lambdas, max_ratio, lambda1_empirical, c_empirical, worst_quadrupling: worst, non_degrading, reports })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaugeStudy {
    pub nx: Vec<usize>,
    pub nt: Vec<usize>,
    /// `||Lambda_pair - Lambda_gauged||` per grid.
    pub dn_gauge: Vec<f64>,
    /// `||Lambda^BE - Lambda^CN||` of the pair itself per grid.
    pub floor: Vec<f64>,
}

/// Norm of the DN difference between a pair and its gauge transform next to
/// the time-discretization floor of the map, over a refinement sequence.
pub fn gauge_study(pair: &CoefficientPair, gauge: &GaugeFunction, grids: &[(usize, usize)], t_final: f64, probes: usize, iters: usize) -> Result<GaugeStudy> {
    let gauged = apply_gauge(pair, gauge);
    let mut out = GaugeStudy { nx: Vec::new(), nt: Vec::new(), dn_gauge: Vec::new(), floor: Vec::new() };
    for &(nx, nt) in grids {
        let g = SpaceTimeGrid::new(pair.dim(), nx, nt, t_final)?;
        GaugeFunction::new(gauge.phi.clone(), &g)?;
        let part = BoundaryPartition::full(&g);
        let p = probe_family(&g, probes);
        out.nx.push(nx);
        out.nt.push(nt);
        out.dn_gauge.push(dn_diff_norm(pair, &gauged, &g, &part, &p, iters, Scheme::BackwardEuler)?.norm);
        out.floor.push(dn_diff_norm_schemes((pair, Scheme::BackwardEuler), (pair, Scheme::CrankNicolson), &g, &part, &p, iters)?.norm);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let x = [1.0, 2.0, 4.0, 8.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-0.75)).collect();
        assert!((loglog_slope(&x, &y) + 0.75).abs() < 1e-12);
    }

    #[test]
    fn suite_is_seeded() {
        let a = carleman_suite(5, 4, 2);
        let b = carleman_suite(5, 4, 2);
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
        for u in &a {
            u.check_boundary_conditions(2, 1.5).unwrap();
        }
    }
}
