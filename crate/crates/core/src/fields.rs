//! Coefficient pairs `(A, q)`, divergence-free generators, ray integrals and
//! gauge transforms.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::expr::{Expr, Program};
use crate::grid::{check_unit, SpaceTimeGrid};
use crate::quadrature::{SegmentQuadrature, SegmentRule};
use crate::scalar::Real;

/// Closed-form vector field on `Q`, one expression per component.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    comps: Vec<Expr>,
}

impl VectorField {
    pub fn new(comps: Vec<Expr>) -> Self {
        VectorField { comps }
    }

    pub fn zero(n: usize) -> Self {
        VectorField { comps: vec![Expr::zero(); n] }
    }

    pub fn parse<S: AsRef<str>>(src: &[S]) -> Result<Self> {
        Ok(VectorField { comps: src.iter().map(|s| Expr::parse(s.as_ref())).collect::<Result<_>>()? })
    }

    /// Constant vector field.
    pub fn constant(c: &[f64]) -> Self {
        VectorField { comps: c.iter().map(|&v| Expr::num(v)).collect() }
    }

    pub fn dim(&self) -> usize {
        self.comps.len()
    }

    pub fn comps(&self) -> &[Expr] {
        &self.comps
    }

    pub fn is_zero(&self) -> bool {
        self.comps.iter().all(Expr::is_zero)
    }

    pub fn add(&self, other: &VectorField) -> VectorField {
        VectorField {
            comps: self.comps.iter().zip(&other.comps).map(|(a, b)| Expr::add(a.clone(), b.clone())).collect(),
        }
    }

    pub fn sub(&self, other: &VectorField) -> VectorField {
        VectorField {
            comps: self.comps.iter().zip(&other.comps).map(|(a, b)| Expr::sub(a.clone(), b.clone())).collect(),
        }
    }

    pub fn scale(&self, c: f64) -> VectorField {
        VectorField { comps: self.comps.iter().map(|a| Expr::mul(Expr::num(c), a.clone())).collect() }
    }

    pub fn neg(&self) -> VectorField {
        VectorField { comps: self.comps.iter().map(|a| Expr::neg(a.clone())).collect() }
    }

    /// `omega . A` as a scalar expression.
    pub fn dot_const(&self, omega: &[f64]) -> Expr {
        Expr::sum(self.comps.iter().zip(omega).map(|(a, &w)| Expr::mul(Expr::num(w), a.clone())))
    }

    pub fn divergence(&self) -> Expr {
        Expr::sum(self.comps.iter().enumerate().map(|(i, a)| a.dx(i)))
    }

    pub fn norm_sq(&self) -> Expr {
        Expr::sum(self.comps.iter().map(|a| Expr::powi(a.clone(), 2)))
    }

    pub fn compile<T: Real>(&self) -> Vec<Program<T>> {
        self.comps.iter().map(Expr::compile).collect()
    }

    /// Substitutes `t -> t_final - t`.
    pub fn time_reversed(&self, t_final: f64) -> VectorField {
        VectorField { comps: self.comps.iter().map(|e| time_reverse(e, t_final)).collect() }
    }
}

pub(crate) fn time_reverse(e: &Expr, t_final: f64) -> Expr {
    e.substitute(crate::expr::VAR_T, &Expr::sub(Expr::num(t_final), Expr::t()))
}

/// Coefficients `(A, q)` of `L_{A,q}` together with the admissibility bound `m`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientPair {
    pub a: VectorField,
    pub q: Expr,
    pub m_bound: f64,
}

impl CoefficientPair {
    pub fn new(a: VectorField, q: Expr, m_bound: f64) -> Self {
        CoefficientPair { a, q, m_bound }
    }

    pub fn zero(n: usize) -> Self {
        CoefficientPair { a: VectorField::zero(n), q: Expr::zero(), m_bound: f64::INFINITY }
    }

    pub fn dim(&self) -> usize {
        self.a.dim()
    }

    /// Discrete `||A||_{W^{2,inf}} + ||q||_{W^{1,inf}}` sampled at grid nodes
    /// using analytic derivatives in `(t, x)`.
    pub fn admissibility_norm<T: Real>(&self, grid: &SpaceTimeGrid<T>) -> T {
        let n = grid.dim();
        let vars: Vec<usize> = (0..=n).collect();
        let mut a_exprs = Vec::new();
        for c in self.a.comps() {
            a_exprs.push(c.clone());
            for &v in &vars {
                let d = c.diff(v);
                for &w in vars.iter().filter(|&&w| w >= v) {
                    a_exprs.push(d.diff(w));
                }
                a_exprs.push(d);
            }
        }
        let mut q_exprs = vec![self.q.clone()];
        q_exprs.extend(vars.iter().map(|&v| self.q.diff(v)));
        sup_over_grid(grid, &a_exprs) + sup_over_grid(grid, &q_exprs)
    }

    pub fn is_admissible<T: Real>(&self, grid: &SpaceTimeGrid<T>) -> bool {
        self.admissibility_norm(grid).to_f64_lossy() <= self.m_bound
    }

    /// Largest `|div_x A|` over interior nodes and all time levels.
    pub fn max_divergence<T: Real>(&self, grid: &SpaceTimeGrid<T>) -> T {
        let div = self.a.divergence().compile::<T>();
        let mut x = vec![T::zero(); grid.dim()];
        let mut m = T::zero();
        for k in 0..grid.ntime() {
            let t = grid.time(k);
            for &node in grid.interior() {
                grid.coords_into(node, &mut x);
                m = m.max(div.eval(t, &x).abs());
            }
        }
        m
    }
}

fn sup_over_grid<T: Real>(grid: &SpaceTimeGrid<T>, exprs: &[Expr]) -> T {
    let progs: Vec<Program<T>> = exprs.iter().filter(|e| !e.is_zero()).map(Expr::compile).collect();
    let mut x = vec![T::zero(); grid.dim()];
    let mut m = T::zero();
    for k in 0..grid.ntime() {
        let t = grid.time(k);
        for node in 0..grid.nspace() {
            grid.coords_into(node, &mut x);
            for p in &progs {
                m = m.max(p.eval(t, &x).abs());
            }
        }
    }
    m
}

/// Divergence-free field from stream potentials.
///
/// For `n = 2` a single potential `psi` gives `A = (d2 psi, -d1 psi)`. For
/// general `n` the `n(n-1)/2` potentials `psi_ij` (`i < j`, lexicographic)
/// form an antisymmetric matrix and `A_i = sum_j d_j psi_ij`.
pub fn make_divfree_field(potentials: &[Expr], n: usize) -> Result<VectorField> {
    let needed = n * (n - 1) / 2;
    if n < 2 || potentials.len() != needed {
        return Err(LabError::InvalidArgument(format!(
            "dimension {n} needs {needed} stream potentials, got {}",
            potentials.len()
        )));
    }
    let mut comps = vec![Expr::zero(); n];
    let mut p = potentials.iter();
    for i in 0..n {
        for j in (i + 1)..n {
            let psi = p.next().expect("count checked");
            comps[i] = Expr::add(comps[i].clone(), psi.dx(j));
            comps[j] = Expr::sub(comps[j].clone(), psi.dx(i));
        }
    }
    Ok(VectorField { comps })
}

/// Extent of the ray integral.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RayExtent {
    /// `int_0^inf`, i.e. up to the exit point of `x + s omega` from the box.
    ToExit,
    /// `int_R`, i.e. the whole chord through `x`.
    FullLine,
}

/// Exit parameter `sup { s >= 0 : x + s omega in [0,1]^n }`.
pub fn exit_parameter<T: Real>(x: &[T], omega: &[T]) -> T {
    let mut s = T::infinity();
    for (&xi, &wi) in x.iter().zip(omega) {
        if wi > T::zero() {
            s = s.min((T::one() - xi) / wi);
        } else if wi < T::zero() {
            s = s.min(-xi / wi);
        }
    }
    s.max(T::zero())
}

/// Integrates a scalar `g(t, y)` along `y = x + s omega`, with `g` extended
/// by zero outside the closed box.
#[derive(Clone, Debug)]
pub struct RayIntegrator<T> {
    quad: SegmentQuadrature<T>,
}

impl<T: Real> RayIntegrator<T> {
    pub fn new(rule: SegmentRule) -> Self {
        RayIntegrator { quad: SegmentQuadrature::new(rule) }
    }

    /// Composite Simpson with step `hx / 2`.
    pub fn simpson_for(grid: &SpaceTimeGrid<T>) -> Self {
        Self::new(SegmentRule::Simpson { max_step: grid.hx().to_f64_lossy() / 2.0 })
    }

    pub fn integrate(&self, g: &Program<T>, omega: &[T], t: T, x: &[T], extent: RayExtent) -> T {
        let n = x.len();
        let hi = exit_parameter(x, omega);
        let lo = match extent {
            RayExtent::ToExit => T::zero(),
            RayExtent::FullLine => {
                let back: Vec<T> = omega.iter().map(|&w| -w).collect();
                -exit_parameter(x, &back)
            }
        };
        let mut y = [T::zero(); crate::expr::MAX_DIM];
        self.quad.integrate(lo, hi, |s| {
            for i in 0..n {
                y[i] = x[i] + s * omega[i];
            }
            g.eval(t, &y[..n])
        })
    }
}

/// `int omega . A(t, x + s omega) ds` for a closed-form field.
pub fn ray_integral<T: Real>(
    a: &VectorField,
    omega: &[T],
    t: T,
    x: &[T],
    extent: RayExtent,
    rule: SegmentRule,
) -> Result<T> {
    check_unit(omega, 1e-10)?;
    let w: Vec<f64> = omega.iter().map(|v| v.to_f64_lossy()).collect();
    let g = a.dot_const(&w).compile::<T>();
    Ok(RayIntegrator::new(rule).integrate(&g, omega, t, x, extent))
}

/// Gauge function `Phi` vanishing on the lateral boundary.
#[derive(Clone, Debug, PartialEq)]
pub struct GaugeFunction {
    pub phi: Expr,
}

impl GaugeFunction {
    /// Validates that `Phi` vanishes (to 1e-12) on every lateral node.
    pub fn new<T: Real>(phi: Expr, grid: &SpaceTimeGrid<T>) -> Result<Self> {
        let p = phi.compile::<T>();
        let mut x = vec![T::zero(); grid.dim()];
        let mut worst = T::zero();
        for k in 0..grid.ntime() {
            let t = grid.time(k);
            for b in grid.boundary() {
                grid.coords_into(b.node, &mut x);
                worst = worst.max(p.eval(t, &x).abs());
            }
        }
        if worst.to_f64_lossy() > 1e-12 {
            return Err(LabError::Hypothesis(format!(
                "gauge function must vanish on the lateral boundary (max trace {worst})"
            )));
        }
        Ok(GaugeFunction { phi })
    }
}

/// `(A + grad Phi, q + d_t Phi)`: the coefficients of `e^{-Phi} L_{A,q} e^{Phi}`.
pub fn apply_gauge(pair: &CoefficientPair, gauge: &GaugeFunction) -> CoefficientPair {
    let n = pair.dim();
    let grad = VectorField::new((0..n).map(|i| gauge.phi.dx(i)).collect());
    CoefficientPair {
        a: pair.a.add(&grad),
        q: Expr::add(pair.q.clone(), gauge.phi.dt()),
        m_bound: pair.m_bound,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn grid(nx: usize) -> SpaceTimeGrid<f64> {
        SpaceTimeGrid::new(2, nx, 4, 1.5).unwrap()
    }

    #[test]
    fn stream_function_generators() {
        let a = make_divfree_field(&[Expr::zero()], 2).unwrap();
        assert!(a.is_zero());
        let a = make_divfree_field(&[Expr::parse("x1*x2").unwrap()], 2).unwrap();
        assert_eq!(a.comps()[0].eval(0.0, &[0.3, 0.7]), 0.3);
        assert_eq!(a.comps()[1].eval(0.0, &[0.3, 0.7]), -0.7);
        assert_eq!(a.divergence().eval(0.0, &[0.3, 0.7]), 0.0);
        assert!(make_divfree_field(&[Expr::zero()], 3).is_err());
    }

    #[test]
    fn sampled_divergence_vanishes() {
        let psi = Expr::parse("sin(pi*x1)*sin(pi*x2)*t").unwrap();
        let a = make_divfree_field(&[psi], 2).unwrap();
        let pair = CoefficientPair::new(a, Expr::zero(), 100.0);
        assert!(pair.max_divergence(&grid(33)) <= 1e-12);
    }

    #[test]
    fn three_dimensional_generator_is_divfree() {
        let pots: Vec<Expr> = ["sin(x1*x2)*t", "x3^2*cos(x1)", "exp(x2)*x1*x3"]
            .iter()
            .map(|s| Expr::parse(s).unwrap())
            .collect();
        let a = make_divfree_field(&pots, 3).unwrap();
        let div = a.divergence();
        for p in [[0.1, 0.2, 0.3], [0.9, 0.4, 0.5]] {
            assert!(div.eval(0.7, &p).abs() < 1e-12);
        }
    }

    #[test]
    fn ray_integrals_of_simple_fields() {
        let rule = SegmentRule::Simpson { max_step: 1.0 / 64.0 };
        let zero = VectorField::zero(2);
        assert_eq!(ray_integral(&zero, &[1.0, 0.0], 0.0, &[0.0, 0.5], RayExtent::ToExit, rule).unwrap(), 0.0);
        let c = VectorField::constant(&[2.5, 0.0]);
        let v: f64 = ray_integral(&c, &[1.0, 0.0], 0.0, &[0.0, 0.5], RayExtent::ToExit, rule).unwrap();
        assert!((v - 2.5).abs() < 1e-14);
        let s = VectorField::parse(&["sin(pi*x2)", "0"]).unwrap();
        for x2 in [0.1, 0.37, 0.8] {
            let v: f64 = ray_integral(&s, &[1.0, 0.0], 0.0, &[0.0, x2], RayExtent::ToExit, rule).unwrap();
            assert!((v - (PI * x2).sin()).abs() < 1e-8);
            let g: f64 = ray_integral(&s, &[1.0, 0.0], 0.0, &[0.4, x2], RayExtent::FullLine, SegmentRule::default()).unwrap();
            assert!((g - (PI * x2).sin()).abs() < 1e-12);
        }
        assert!(ray_integral(&s, &[1.0, 1.0], 0.0, &[0.0, 0.1], RayExtent::ToExit, rule).is_err());
    }

    #[test]
    fn ray_integral_oblique_closed_form() {
        // A = (x1, 0), omega = (1,1)/sqrt2, from (0, 0.5): exit at s = 0.5 sqrt2
        // int_0^{L} (s/sqrt2)/sqrt2 ds = L^2/4 with L = sqrt(2)/2
        let a = VectorField::parse(&["x1", "0"]).unwrap();
        let w = [0.5f64.sqrt(), 0.5f64.sqrt()];
        let v: f64 = ray_integral(&a, &w, 0.0, &[0.0, 0.5], RayExtent::ToExit, SegmentRule::default()).unwrap();
        assert!((v - 0.125).abs() < 1e-14);
    }

    #[test]
    fn gauge_must_vanish_on_boundary() {
        let g = grid(9);
        assert!(GaugeFunction::new(Expr::num(0.3), &g).is_err());
        let phi = GaugeFunction::new(Expr::parse("t*x1*(1-x1)*x2*(1-x2)").unwrap(), &g).unwrap();
        let pair = CoefficientPair::new(VectorField::zero(2), Expr::zero(), 10.0);
        let gauged = apply_gauge(&pair, &phi);
        let x = [0.25, 0.5];
        assert!((gauged.a.comps()[0].eval(1.0, &x) - 0.5 * 0.25).abs() < 1e-15);
        assert!((gauged.q.eval(1.0, &x) - 0.25 * 0.75 * 0.25).abs() < 1e-15);
        let zero = GaugeFunction::new(Expr::zero(), &g).unwrap();
        assert_eq!(apply_gauge(&pair, &zero), pair);
    }

    #[test]
    fn admissibility_counts_derivatives() {
        let g = grid(9);
        let pair = CoefficientPair::new(VectorField::parse(&["x1^2", "0"]).unwrap(), Expr::parse("t").unwrap(), 5.0);
        // sup|A|=1, sup|dA|=2, sup|d2A|=2 -> 2 ; q: sup|q| = 1.5, sup|dq| = 1
        assert!((pair.admissibility_norm(&g) - 3.5).abs() < 1e-12);
        assert!(pair.is_admissible(&g));
        let tight = CoefficientPair { m_bound: 3.0, ..pair };
        assert!(!tight.is_admissible(&g));
    }
}
