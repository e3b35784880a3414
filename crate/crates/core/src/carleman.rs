//! Both sides of the boundary and interior Carleman estimates, evaluated on
//! closed-form test functions with graded tensor Gauss quadrature.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::expr::{Program, MAX_DIM};
use crate::fields::CoefficientPair;
use crate::go::CarlemanWeight;
use crate::grid::SpaceTimeGrid;
use crate::quadrature::gauss_legendre;
use crate::scalar::Real;
use crate::solver::expand_operator;
use crate::testfn::{CompiledTest, Jet, TestFunction};

/// Quadrature used for the weighted integrals. Panels are graded toward
/// `t = 0` (scale `1/lambda^2`) and toward the faces where `x . omega` is
/// smallest (scale `1/lambda`), where `e^{-2 phi}` concentrates; the region
/// where the weight has dropped below `e^{-80}` of its peak is skipped.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CarlemanQuadrature {
    pub points: usize,
    pub max_panel: f64,
}

impl Default for CarlemanQuadrature {
    fn default() -> Self {
        CarlemanQuadrature { points: 8, max_panel: 0.25 }
    }
}

impl CarlemanQuadrature {
    /// Nodes and weights on `[0, len]`, graded toward `0` (or `len` when
    /// `at_low` is false) on the length `scale`.
    fn axis(&self, len: f64, scale: Option<f64>, at_low: bool) -> Vec<(f64, f64)> {
        let mut breaks = vec![0.0];
        if let Some(sc) = scale {
            let mut w = sc / 4.0;
            let reach = len.min(40.0 * sc);
            while breaks[breaks.len() - 1] + w < reach {
                let last = breaks[breaks.len() - 1];
                breaks.push(last + w);
                w = (2.0 * w).min(self.max_panel);
            }
        }
        let last = breaks[breaks.len() - 1];
        // beyond 40 scale lengths the weight is below e^{-80} of its peak
        if let Some(sc) = scale.filter(|&sc| 40.0 * sc < len) {
            breaks.push(40.0 * sc);
        } else {
            let rest = ((len - last) / self.max_panel).ceil().max(1.0) as usize;
            for i in 1..=rest {
                breaks.push(last + (len - last) * i as f64 / rest as f64);
            }
        }
        let (gx, gw) = gauss_legendre::<f64>(self.points);
        let mut out = Vec::with_capacity((breaks.len() - 1) * self.points);
        for p in breaks.windows(2) {
            let h = p[1] - p[0];
            for (x, w) in gx.iter().zip(&gw) {
                let s = p[0] + h * (x + 1.0) / 2.0;
                out.push((if at_low { s } else { len - s }, w * h / 2.0));
            }
        }
        out
    }
}

/// Itemized groups of the boundary estimate.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CarlemanReport {
    pub lambda: f64,
    /// `int_Q e^{-2phi} (lambda^2 |u|^2 + |grad u|^2)`
    pub g1: f64,
    /// `int_Omega e^{-2phi(T)} (lambda |u(T)|^2 + |grad u(T)|^2)`
    pub g2: f64,
    /// `lambda int_{Sigma_+} e^{-2phi} omega.nu |d_nu u|^2`
    pub g3: f64,
    /// `int_Q e^{-2phi} |L u|^2`
    pub g4: f64,
    /// `lambda int_{Sigma_-} e^{-2phi} |omega.nu| |d_nu u|^2`
    pub g5: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
}

impl CarlemanReport {
    pub fn groups(&self) -> [f64; 5] {
        [self.g1, self.g2, self.g3, self.g4, self.g5]
    }
}

fn ratio(lhs: f64, rhs: f64) -> f64 {
    if rhs > 0.0 {
        lhs / rhs
    } else if lhs == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

struct Setup<T> {
    n: usize,
    tf: f64,
    u: CompiledTest<T>,
    drift: Vec<Program<T>>,
    zeroth: Program<T>,
    weight: CarlemanWeight<T>,
    phi_min: T,
    quad: CarlemanQuadrature,
}

impl<T: Real> Setup<T> {
    fn new(u: &TestFunction, pair: &CoefficientPair, weight: &CarlemanWeight<T>, n: usize, tf: f64, quad: CarlemanQuadrature) -> Self {
        let e = expand_operator(pair);
        // phi_s is concave along omega, so its minimum over the closed box sits at a corner at t = 0
        let mut phi_min = T::infinity();
        let mut x = vec![T::zero(); n];
        for c in 0..(1usize << n) {
            for (i, xi) in x.iter_mut().enumerate() {
                *xi = if c >> i & 1 == 1 { T::one() } else { T::zero() };
            }
            phi_min = phi_min.min(weight.phi_s(T::zero(), &x));
        }
        Setup {
            n,
            tf,
            u: u.compile(n),
            drift: e.drift.compile(),
            zeroth: e.zeroth.compile(),
            weight: weight.clone(),
            phi_min,
            quad,
        }
    }

    fn lambda(&self) -> f64 {
        self.weight.lambda.to_f64_lossy()
    }

    fn time_rule(&self) -> Vec<(f64, f64)> {
        let l = self.lambda();
        self.quad.axis(self.tf, Some(1.0 / (l * l)), true)
    }

    fn space_rule(&self, axis: usize) -> Vec<(f64, f64)> {
        let w = self.weight.omega[axis].to_f64_lossy();
        let scale = (w.abs() > 1e-3).then(|| 1.0 / (self.lambda() * w.abs()));
        self.quad.axis(1.0, scale, w >= 0.0)
    }

    fn w2(&self, t: T, x: &[T]) -> T {
        (-(self.weight.phi_s(t, x) - self.phi_min) * T::lit(2.0)).exp()
    }

    fn lu(&self, j: &Jet<T>, t: T, x: &[T]) -> T {
        let mut r = j.ut - j.lap + self.zeroth.eval(t, x) * j.u;
        for (i, d) in self.drift.iter().enumerate() {
            r -= d.eval(t, x) * j.grad[i];
        }
        r
    }

    fn grad_sq(&self, j: &Jet<T>) -> T {
        j.grad[..self.n].iter().map(|&g| g * g).sum()
    }

    /// Tensor rule over the axes in `axes`; calls `f(weight, x)` with the
    /// remaining coordinates taken from `fixed`.
    fn for_each_space(&self, axes: &[usize], fixed: &[T], mut f: impl FnMut(T, &[T])) {
        let rules: Vec<Vec<(f64, f64)>> = axes.iter().map(|&a| self.space_rule(a)).collect();
        let total: usize = rules.iter().map(Vec::len).product();
        let mut x = [T::zero(); MAX_DIM];
        x[..self.n].copy_from_slice(fixed);
        for flat in 0..total {
            let mut r = flat;
            let mut w = T::one();
            for (k, &a) in axes.iter().enumerate() {
                let (node, wt) = rules[k][r % rules[k].len()];
                r /= rules[k].len();
                x[a] = T::lit(node);
                w *= T::lit(wt);
            }
            f(w, &x[..self.n]);
        }
    }

    /// `(int_Q e^{-2phi}(lambda^2 u^2 + |grad u|^2), int_Q e^{-2phi} |L u|^2)`.
    fn interior(&self) -> (T, T) {
        let lam = self.weight.lambda;
        let axes: Vec<usize> = (0..self.n).collect();
        let zero = vec![T::zero(); self.n];
        self.time_rule()
            .into_par_iter()
            .map(|(t, wt)| {
                let t = T::lit(t);
                let (mut a, mut b) = (T::zero(), T::zero());
                self.for_each_space(&axes, &zero, |w, x| {
                    let j = self.u.jet(t, x);
                    let e = self.w2(t, x) * w;
                    a += e * (lam * lam * j.u * j.u + self.grad_sq(&j));
                    let l = self.lu(&j, t, x);
                    b += e * l * l;
                });
                (a * T::lit(wt), b * T::lit(wt))
            })
            .reduce(|| (T::zero(), T::zero()), |p, q| (p.0 + q.0, p.1 + q.1))
    }

    fn final_time(&self) -> T {
        let lam = self.weight.lambda;
        let t = T::lit(self.tf);
        let axes: Vec<usize> = (0..self.n).collect();
        let mut acc = T::zero();
        self.for_each_space(&axes, &vec![T::zero(); self.n], |w, x| {
            let j = self.u.jet(t, x);
            acc += w * self.w2(t, x) * (lam * j.u * j.u + self.grad_sq(&j));
        });
        acc
    }

    /// `lambda int e^{-2phi} |omega.nu| |d_nu u|^2` over the faces with
    /// `omega . nu > 0` and `< 0` respectively.
    fn fluxes(&self) -> (T, T) {
        let lam = self.weight.lambda;
        let mut plus = T::zero();
        let mut minus = T::zero();
        for axis in 0..self.n {
            for high in [false, true] {
                let dot = if high { self.weight.omega[axis] } else { -self.weight.omega[axis] };
                if dot == T::zero() {
                    continue;
                }
                let others: Vec<usize> = (0..self.n).filter(|&a| a != axis).collect();
                let mut fixed = vec![T::zero(); self.n];
                fixed[axis] = if high { T::one() } else { T::zero() };
                let v: T = self
                    .time_rule()
                    .into_par_iter()
                    .map(|(t, wt)| {
                        let t = T::lit(t);
                        let mut acc = T::zero();
                        self.for_each_space(&others, &fixed, |w, x| {
                            let g = self.u.jet(t, x).grad[axis];
                            acc += w * self.w2(t, x) * g * g;
                        });
                        acc * T::lit(wt)
                    })
                    .sum();
                let v = v * lam * dot.abs();
                if dot > T::zero() {
                    plus += v;
                } else {
                    minus += v;
                }
            }
        }
        (plus, minus)
    }
}

/// Evaluates the five groups of the boundary Carleman estimate for `u`.
///
/// `u` must vanish at `t = 0` and on the lateral boundary. The weight is
/// applied as `e^{-2(phi - min phi)}`, which leaves the ratio unchanged.
pub fn carleman_sides<T: Real>(
    u: &TestFunction,
    pair: &CoefficientPair,
    weight: &CarlemanWeight<T>,
    grid: &SpaceTimeGrid<T>,
) -> Result<CarlemanReport> {
    carleman_sides_with(u, pair, weight, grid, CarlemanQuadrature::default())
}

pub fn carleman_sides_with<T: Real>(
    u: &TestFunction,
    pair: &CoefficientPair,
    weight: &CarlemanWeight<T>,
    grid: &SpaceTimeGrid<T>,
    quad: CarlemanQuadrature,
) -> Result<CarlemanReport> {
    let n = grid.dim();
    let tf = grid.t_final().to_f64_lossy();
    check_lambda(weight)?;
    u.check_boundary_conditions(n, tf)?;
    let lambda = weight.lambda.to_f64_lossy();
    if u.is_zero() {
        return Ok(CarlemanReport { lambda, ..Default::default() });
    }
    let s = Setup::new(u, pair, weight, n, tf, quad);
    let (g1, g4) = s.interior();
    let g2 = s.final_time();
    let (g3, g5) = s.fluxes();
    let [g1, g2, g3, g4, g5] = [g1, g2, g3, g4, g5].map(|v| v.to_f64_lossy());
    let (lhs, rhs) = (g1 + g2 + g3, g4 + g5);
    Ok(CarlemanReport { lambda, g1, g2, g3, g4, g5, lhs, rhs, ratio: ratio(lhs, rhs) })
}

fn check_lambda<T: Real>(weight: &CarlemanWeight<T>) -> Result<()> {
    if weight.lambda < T::one() {
        return Err(LabError::InvalidArgument(format!("lambda = {} must be >= 1", weight.lambda)));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InteriorSides {
    pub lhs: f64,
    pub rhs: f64,
}

impl InteriorSides {
    pub fn ratio(&self) -> f64 {
        ratio(self.lhs, self.rhs)
    }
}

/// Both sides of the interior estimate for a compactly supported `u`; the
/// support must stay `margin` away from the boundary of `Q`.
pub fn interior_carleman_sides<T: Real>(
    u: &TestFunction,
    pair: &CoefficientPair,
    weight: &CarlemanWeight<T>,
    grid: &SpaceTimeGrid<T>,
    margin: f64,
) -> Result<InteriorSides> {
    let n = grid.dim();
    let tf = grid.t_final().to_f64_lossy();
    check_lambda(weight)?;
    u.check_compact_support(n, tf, margin)?;
    if u.is_zero() {
        return Ok(InteriorSides::default());
    }
    let (lhs, rhs) = Setup::new(u, pair, weight, n, tf, CarlemanQuadrature::default()).interior();
    Ok(InteriorSides { lhs: lhs.to_f64_lossy(), rhs: rhs.to_f64_lossy() })
}

/// Result of scanning a suite over increasing `lambda`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdScan {
    pub lambdas: Vec<f64>,
    /// `reports[i][j]`: suite member `j` at `lambdas[i]`.
    pub reports: Vec<Vec<CarlemanReport>>,
    /// Largest ratio over the suite per `lambda`.
    pub max_ratio: Vec<f64>,
    pub lambda1_empirical: f64,
    pub c_empirical: f64,
}

/// Smallest `lambda_i` such that `max_{j >= i} C_j <= growth * C_i`, where `C_j`
/// is the largest ratio over the suite at `lambdas[j]`.
pub fn threshold_from_ratios(lambdas: &[f64], max_ratio: &[f64], growth: f64) -> (f64, f64) {
    for i in 0..lambdas.len() {
        let tail = max_ratio[i..].iter().cloned().fold(0.0, f64::max);
        if tail <= growth * max_ratio[i] || tail == 0.0 {
            return (lambdas[i], tail);
        }
    }
    (f64::INFINITY, f64::INFINITY)
}

/// Evaluates every suite member at every `lambda` (in parallel) and reports
/// the empirical threshold `lambda_1` and constant `C`.
pub fn lambda_threshold_scan<T: Real>(
    suite: &[TestFunction],
    pair: &CoefficientPair,
    omega: &[T],
    lambdas: &[f64],
    grid: &SpaceTimeGrid<T>,
) -> Result<ThresholdScan> {
    if lambdas.is_empty() || lambdas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(LabError::InvalidArgument("lambdas must be a non-empty increasing list".into()));
    }
    let reports: Vec<Vec<CarlemanReport>> = lambdas
        .iter()
        .map(|&l| {
            let w = CarlemanWeight::simple(T::lit(l), omega)?;
            suite.par_iter().map(|u| carleman_sides(u, pair, &w, grid)).collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let max_ratio: Vec<f64> = reports.iter().map(|r| r.iter().map(|c| c.ratio).fold(0.0, f64::max)).collect();
    let (lambda1_empirical, c_empirical) = threshold_from_ratios(lambdas, &max_ratio, 1.25);
    Ok(ThresholdScan { lambdas: lambdas.to_vec(), reports, max_ratio, lambda1_empirical, c_empirical })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expr;

    fn grid() -> SpaceTimeGrid<f64> {
        SpaceTimeGrid::new(2, 17, 8, 1.5).unwrap()
    }

    #[test]
    fn graded_rule_integrates_exponential() {
        let q = CarlemanQuadrature::default();
        for (lam, low) in [(8.0, true), (64.0, false)] {
            let r = q.axis(1.0, Some(1.0 / lam), low);
            let s: f64 = r.iter().map(|&(x, w)| w * (-2.0 * lam * if low { x } else { 1.0 - x }).exp()).sum();
            let exact = (1.0 - (-2.0f64 * lam).exp()) / (2.0 * lam);
            assert!(r.len() < 100);
            assert!((s - exact).abs() < 1e-9 * exact, "{s} vs {exact}");
        }
    }

    #[test]
    fn zero_function_gives_zero_groups() {
        let w = CarlemanWeight::simple(8.0, &[1.0, 0.0]).unwrap();
        let r = carleman_sides(&TestFunction::zero(), &CoefficientPair::zero(2), &w, &grid()).unwrap();
        assert_eq!(r.groups(), [0.0; 5]);
        assert_eq!(r.ratio, 0.0);
    }

    #[test]
    fn groups_are_quadratic_in_u() {
        let g = grid();
        let w = CarlemanWeight::simple(8.0, &[0.6, 0.8]).unwrap();
        let pair = CoefficientPair::new(crate::fields::VectorField::parse(&["x2*(1-x2)", "0"]).unwrap(), Expr::parse("1").unwrap(), 10.0);
        let u = TestFunction::parse("t*sin(pi*x1)*sin(pi*x2)").unwrap();
        let a = carleman_sides(&u, &pair, &w, &g).unwrap();
        let b = carleman_sides(&u.scaled(3.0), &pair, &w, &g).unwrap();
        for (x, y) in a.groups().iter().zip(b.groups()) {
            assert!(*x >= 0.0);
            assert!((y - 9.0 * x).abs() <= 1e-10 * y.abs());
        }
        assert!((a.ratio - b.ratio).abs() < 1e-10 * a.ratio);
    }

    #[test]
    fn rejects_nonvanishing_trace() {
        let w = CarlemanWeight::simple(8.0, &[1.0, 0.0]).unwrap();
        let u = TestFunction::parse("t*x1").unwrap();
        assert!(carleman_sides(&u, &CoefficientPair::zero(2), &w, &grid()).is_err());
    }

    #[test]
    fn ratio_does_not_degrade_with_lambda() {
        let g = grid();
        let u = TestFunction::parse("t*sin(pi*x1)*sin(pi*x2)").unwrap();
        let r: Vec<f64> = [8.0, 16.0, 32.0]
            .iter()
            .map(|&l| carleman_sides(&u, &CoefficientPair::zero(2), &CarlemanWeight::simple(l, &[1.0, 0.0]).unwrap(), &g).unwrap().ratio)
            .collect();
        assert!(r[1] <= 1.2 * r[0] && r[2] <= 1.2 * r[1], "{r:?}");
    }

    #[test]
    fn threshold_rule() {
        assert_eq!(threshold_from_ratios(&[1.0, 2.0, 4.0], &[0.0, 0.0, 0.0], 1.25), (1.0, 0.0));
        assert_eq!(threshold_from_ratios(&[1.0, 2.0, 4.0], &[1.0, 3.0, 2.9], 1.25), (2.0, 3.0));
    }

    #[test]
    fn interior_sides_for_bump() {
        let g = grid();
        let u = TestFunction::random_bump(&mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(1), 2, 1.5, 0.1);
        let w = CarlemanWeight::simple(8.0, &[1.0, 0.0]).unwrap();
        let s = interior_carleman_sides(&u, &CoefficientPair::zero(2), &w, &g, 0.1).unwrap();
        assert!(s.lhs > 0.0 && s.rhs > 0.0);
        let z = interior_carleman_sides(&TestFunction::zero(), &CoefficientPair::zero(2), &w, &g, 0.1).unwrap();
        assert_eq!((z.lhs, z.rhs), (0.0, 0.0));
        assert!(interior_carleman_sides(&TestFunction::parse("t*sin(pi*x1)").unwrap(), &CoefficientPair::zero(2), &w, &g, 0.1).is_err());
    }
}
