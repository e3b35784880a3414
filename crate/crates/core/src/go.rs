//! Geometric optics solutions `e^{+-phi}(B + R)`: time cutoff, amplitudes
//! built from ray integrals, remainders from constructive solves on the
//! conjugated operator, and the shifted-index check.

use num_traits::Zero;
use rayon::prelude::*;
use rustfft::FftNum;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::expr::{Expr, Program, MAX_DIM, VAR_T};
use crate::fields::{exit_parameter, CoefficientPair, RayExtent, RayIntegrator, VectorField};
use crate::grid::{check_unit, discrete_norm, NormKind, SpaceTimeField, SpaceTimeGrid};
use crate::quadrature::SegmentRule;
use crate::scalar::{Cplx, Real};
use crate::solver::{adjoint_pair, expand_operator, reverse_time, solve_problem, DirichletData, ParabolicProblem, Scheme, SolveOptions};
use crate::testfn::TestFunction;

/// Smooth cutoff `eta_delta`: zero outside `(delta, T - delta)`, one on
/// `[2 delta, T - 2 delta]`, built from the ramp `psi(s) / (psi(s) + psi(1 - s))`
/// with `psi(s) = exp(-1/s)`.
#[derive(Clone, Debug)]
pub struct Cutoff<T> {
    delta: T,
    t_final: T,
    ramp: Vec<Program<T>>,
}

fn ramp_exprs() -> Vec<Expr> {
    let s = Expr::t();
    let psi = |e: Expr| Expr::exp(Expr::neg(Expr::div(Expr::num(1.0), e)));
    let a = psi(s.clone());
    let b = psi(Expr::sub(Expr::num(1.0), s));
    let r0 = Expr::div(a.clone(), Expr::add(a, b));
    let r1 = r0.diff(VAR_T);
    let r2 = r1.diff(VAR_T);
    let r3 = r2.diff(VAR_T);
    vec![r0, r1, r2, r3]
}

impl<T: Real> Cutoff<T> {
    pub fn new(delta: T, t_final: T) -> Result<Self> {
        if !(delta > T::zero() && delta < t_final / T::lit(4.0)) {
            return Err(LabError::InvalidArgument(format!("cutoff width {delta} must lie in (0, T/4)")));
        }
        Ok(Cutoff { delta, t_final, ramp: ramp_exprs().iter().map(Expr::compile).collect() })
    }

    pub fn delta(&self) -> T {
        self.delta
    }

    fn ramp(&self, s: T, k: usize) -> T {
        let edge = T::lit(1e-3);
        if s <= edge {
            return T::zero();
        }
        if s >= T::one() - edge {
            return if k == 0 { T::one() } else { T::zero() };
        }
        self.ramp[k].eval(s, &[])
    }

    /// `eta^{(k)}(t)` for `k <= 3`.
    pub fn eval(&self, t: T, k: usize) -> T {
        assert!(k <= 3, "cutoff derivatives up to order 3");
        let d = self.delta;
        let scale = d.powi(-(k as i32));
        if t <= d || t >= self.t_final - d {
            T::zero()
        } else if t < d + d {
            self.ramp((t - d) / d, k) * scale
        } else if t > self.t_final - d - d {
            let sign = if k % 2 == 1 { -T::one() } else { T::one() };
            sign * self.ramp((self.t_final - d - t) / d, k) * scale
        } else if k == 0 {
            T::one()
        } else {
            T::zero()
        }
    }

    /// `max_s |rho^{(k)}(s)|` of the unit ramp, so that `|eta^{(k)}| <= C_k delta^{-k}`.
    pub fn derivative_constants() -> [f64; 4] {
        let c = Cutoff::<f64>::new(0.25, 2.0).expect("valid");
        let mut out = [0.0f64; 4];
        for i in 0..=4000 {
            let s = i as f64 / 4000.0;
            for (k, o) in out.iter_mut().enumerate() {
                *o = o.max(c.ramp(s, k).abs());
            }
        }
        out
    }
}

/// `eta_delta^{(k)}(t)` on `(0, T)`.
pub fn cutoff_eta<T: Real>(delta: T, t_final: T, t: T, k: usize) -> Result<T> {
    if k > 3 {
        return Err(LabError::InvalidArgument(format!("derivative order {k} > 3")));
    }
    Ok(Cutoff::new(delta, t_final)?.eval(t, k))
}

/// Carleman weight `phi = lambda^2 t + lambda x . omega` and its
/// convexification `phi_s = phi - s ((x + x0) . omega)^2 / 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct CarlemanWeight<T> {
    pub lambda: T,
    pub omega: Vec<T>,
    pub s: T,
    pub x0: Vec<T>,
}

impl<T: Real> CarlemanWeight<T> {
    pub fn new(lambda: T, omega: &[T], s: T, x0: Option<Vec<T>>) -> Result<Self> {
        check_unit(omega, 1e-10)?;
        if !(lambda > T::zero()) || s < T::zero() {
            return Err(LabError::InvalidArgument(format!("need lambda > 0 and s >= 0 (lambda = {lambda}, s = {s})")));
        }
        let x0 = x0.unwrap_or_else(|| {
            let c = T::one() + omega.iter().map(|w| w.abs()).sum::<T>();
            omega.iter().map(|&w| w * c).collect()
        });
        // (x + x0) . omega is linear, so its minimum over the box sits at a corner
        let min = omega.iter().map(|&w| w.min(T::zero())).sum::<T>() + x0.iter().zip(omega).map(|(&a, &w)| a * w).sum::<T>();
        if !(min > T::zero()) {
            return Err(LabError::InvalidArgument(format!("shift x0 gives inf (x + x0) . omega = {min} <= 0")));
        }
        Ok(CarlemanWeight { lambda, omega: omega.to_vec(), s, x0 })
    }

    pub fn simple(lambda: T, omega: &[T]) -> Result<Self> {
        Self::new(lambda, omega, T::zero(), None)
    }

    pub fn phi(&self, t: T, x: &[T]) -> T {
        self.lambda * self.lambda * t + self.lambda * dot(x, &self.omega)
    }

    pub fn phi_s(&self, t: T, x: &[T]) -> T {
        let r = x.iter().zip(&self.x0).zip(&self.omega).map(|((&a, &b), &w)| (a + b) * w).sum::<T>();
        self.phi(t, x) - self.s * r * r * T::lit(0.5)
    }

    /// Gradient of `phi_s` in `x`.
    pub fn grad_phi_s(&self, x: &[T], out: &mut [T]) {
        let r = x.iter().zip(&self.x0).zip(&self.omega).map(|((&a, &b), &w)| (a + b) * w).sum::<T>();
        for (o, &w) in out.iter_mut().zip(&self.omega) {
            *o = (self.lambda - self.s * r) * w;
        }
    }
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Conjugated operator `e^{-phi} L_{A,q} e^{phi}` as a parabolic problem:
/// drift `2(A + lambda omega)`, zeroth order `q~ - 2 lambda omega . A`.
pub fn conjugated_problem(pair: &CoefficientPair, lambda: f64, omega: &[f64]) -> ParabolicProblem {
    let e = expand_operator(pair);
    let drift = VectorField::new(
        e.drift.comps().iter().zip(omega).map(|(b, &w)| Expr::add(b.clone(), Expr::num(2.0 * lambda * w))).collect(),
    );
    let zeroth = Expr::sub(e.zeroth, Expr::mul(Expr::num(2.0 * lambda), pair.a.dot_const(omega)));
    ParabolicProblem { drift, zeroth }
}

/// Ray integrals entering the amplitudes for one direction.
pub struct RayFactors<T> {
    n: usize,
    omega: Vec<T>,
    /// `omega . A` integrated to the exit point.
    exit: Option<Program<T>>,
    /// `omega . D` integrated over the full chord, and its `x`-gradient.
    full: Option<(Program<T>, Vec<Program<T>>)>,
    integ: RayIntegrator<T>,
    /// No field depends on `t`, so the values are shared by all time levels.
    steady: bool,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RayValues<T> {
    pub exit: T,
    pub full: T,
    pub grad_full: [T; MAX_DIM],
}

impl<T: Real> RayFactors<T> {
    pub fn new(exit_field: &VectorField, full_field: Option<&VectorField>, omega: &[T], rule: SegmentRule) -> Result<Self> {
        check_unit(omega, 1e-10)?;
        let w: Vec<f64> = omega.iter().map(|v| v.to_f64_lossy()).collect();
        let n = omega.len();
        let unsteady = |f: &VectorField| f.comps().iter().any(|c| c.depends_on(crate::expr::VAR_T));
        let steady = !unsteady(exit_field) && !full_field.is_some_and(unsteady);
        let exit = (!exit_field.is_zero()).then(|| exit_field.dot_const(&w).compile());
        let full = full_field.filter(|d| !d.is_zero()).map(|d| {
            let g = d.dot_const(&w);
            let grads = (0..n).map(|i| g.dx(i).compile()).collect();
            (g.compile(), grads)
        });
        Ok(RayFactors { n, omega: omega.to_vec(), exit, full, integ: RayIntegrator::new(rule), steady })
    }

    pub fn is_steady(&self) -> bool {
        self.steady
    }

    pub fn eval(&self, t: T, x: &[T]) -> RayValues<T> {
        let mut out = RayValues::default();
        if let Some(p) = &self.exit {
            out.exit = self.integ.integrate(p, &self.omega, t, x, RayExtent::ToExit);
        }
        if let Some((p, grads)) = &self.full {
            out.full = self.integ.integrate(p, &self.omega, t, x, RayExtent::FullLine);
            for i in 0..self.n {
                out.grad_full[i] = self.integ.integrate(&grads[i], &self.omega, t, x, RayExtent::FullLine);
            }
        }
        out
    }
}

/// Frequency `(tau, xi)` of a growing amplitude.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frequency {
    pub tau: f64,
    pub xi: Vec<f64>,
}

impl Frequency {
    pub fn xi_norm(&self) -> f64 {
        self.xi.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AmplitudeShape {
    /// `xi/|xi| . grad_x(e^{-i(t tau + x xi)} e^{int_R omega.D}) e^{int_0^inf omega.A}`.
    Gradient,
    /// `e^{-i(t tau + x xi)} e^{int_0^inf omega.A}`.
    Plain,
}

/// Closed-form amplitude evaluated pointwise.
pub struct Amplitude<T> {
    rays: RayFactors<T>,
    cutoff: Cutoff<T>,
    freq: Option<(Frequency, AmplitudeShape)>,
}

impl<T: Real> Amplitude<T> {
    /// `eta(t) e^{int_0^inf omega . A}`.
    pub fn decaying(a: &VectorField, omega: &[T], cutoff: Cutoff<T>, rule: SegmentRule) -> Result<Self> {
        Ok(Amplitude { rays: RayFactors::new(a, None, omega, rule)?, cutoff, freq: None })
    }

    pub fn growing(
        a2: &VectorField,
        d: &VectorField,
        omega: &[T],
        freq: Frequency,
        shape: AmplitudeShape,
        cutoff: Cutoff<T>,
        rule: SegmentRule,
    ) -> Result<Self> {
        let xn = freq.xi_norm();
        let w: Vec<f64> = omega.iter().map(|v| v.to_f64_lossy()).collect();
        let ortho: f64 = freq.xi.iter().zip(&w).map(|(a, b)| a * b).sum();
        if ortho.abs() > 1e-12 * xn.max(1.0) {
            return Err(LabError::InvalidArgument(format!("xi . omega = {ortho:e} must vanish")));
        }
        if shape == AmplitudeShape::Gradient && xn == 0.0 {
            return Err(LabError::InvalidArgument("gradient amplitude needs xi != 0".into()));
        }
        let full = (shape == AmplitudeShape::Gradient).then_some(d);
        Ok(Amplitude { rays: RayFactors::new(a2, full, omega, rule)?, cutoff, freq: Some((freq, shape)) })
    }

    pub fn eval(&self, t: T, x: &[T]) -> Cplx<T> {
        let eta = self.cutoff.eval(t, 0);
        if eta == T::zero() {
            return Cplx::zero();
        }
        self.eval_with(eta, &self.rays.eval(t, x), t, x)
    }

    /// Combines precomputed ray values with the cutoff and oscillation.
    pub fn eval_with(&self, eta: T, r: &RayValues<T>, t: T, x: &[T]) -> Cplx<T> {
        let base = eta * r.exit.exp();
        match &self.freq {
            None => Cplx::new(base, T::zero()),
            Some((f, shape)) => {
                let phase = -(T::lit(f.tau) * t + x.iter().zip(&f.xi).map(|(&a, &b)| a * T::lit(b)).sum::<T>());
                let osc = Cplx::from_polar(base, phase);
                match shape {
                    AmplitudeShape::Plain => osc,
                    AmplitudeShape::Gradient => {
                        let xn = f.xi_norm();
                        let dir: T = f.xi.iter().zip(&r.grad_full).map(|(&a, &g)| T::lit(a / xn) * g).sum();
                        osc * r.full.exp() * Cplx::new(dir, -T::lit(xn))
                    }
                }
            }
        }
    }

    pub fn cutoff(&self) -> &Cutoff<T> {
        &self.cutoff
    }

    pub fn rays(&self) -> &RayFactors<T> {
        &self.rays
    }

    /// Samples on every space-time node.
    pub fn sample(&self, grid: &SpaceTimeGrid<T>) -> SpaceTimeField<Cplx<T>> {
        if self.rays.is_steady() {
            let zero = T::zero();
            let rays: Vec<RayValues<T>> = (0..grid.nspace())
                .into_par_iter()
                .map(|node| self.rays.eval(zero, &grid.coords(node)))
                .collect();
            let mut out = SpaceTimeField::zeros_like(grid);
            let mut x = vec![T::zero(); grid.dim()];
            for k in 0..grid.ntime() {
                let t = grid.time(k);
                let eta = self.cutoff.eval(t, 0);
                if eta == T::zero() {
                    continue;
                }
                let level = out.slice_mut(k);
                for (node, r) in rays.iter().enumerate() {
                    grid.coords_into(node, &mut x);
                    level[node] = self.eval_with(eta, r, t, &x);
                }
            }
            return out;
        }
        let levels: Vec<Vec<Cplx<T>>> = (0..grid.ntime())
            .into_par_iter()
            .map(|k| {
                let t = grid.time(k);
                let eta = self.cutoff.eval(t, 0);
                let mut x = vec![T::zero(); grid.dim()];
                (0..grid.nspace())
                    .map(|node| {
                        if eta == T::zero() {
                            return Cplx::zero();
                        }
                        grid.coords_into(node, &mut x);
                        self.eval_with(eta, &self.rays.eval(t, &x), t, &x)
                    })
                    .collect()
            })
            .collect();
        let mut out = SpaceTimeField::zeros_like(grid);
        for (k, l) in levels.into_iter().enumerate() {
            out.slice_mut(k).copy_from_slice(&l);
        }
        out
    }

    /// Lateral boundary values only.
    pub fn boundary_data(&self, grid: &SpaceTimeGrid<T>) -> DirichletData<T> {
        DirichletData::from_fn(grid, |t, x| self.eval(t, x))
    }
}

/// Decaying amplitude `B_d = eta_delta(t) exp(int_0^inf omega . A(t, x + s omega) ds)`
/// sampled on the grid. It solves `omega . (grad + A) B_d = 0`; the adjoint
/// solution of `L_{A1,q1}` uses `A = -A1`.
pub fn build_bd<T: Real>(a: &VectorField, omega: &[T], delta: T, grid: &SpaceTimeGrid<T>) -> Result<SpaceTimeField<Cplx<T>>> {
    let amp = Amplitude::decaying(a, omega, Cutoff::new(delta, grid.t_final())?, SegmentRule::default())?;
    Ok(amp.sample(grid))
}

/// Growing amplitude `B_g` sampled on the grid; solves `omega . (grad + A2) B_g = 0`.
pub fn build_bg<T: Real>(
    a2: &VectorField,
    d: &VectorField,
    omega: &[T],
    tau: f64,
    xi: &[f64],
    delta: T,
    grid: &SpaceTimeGrid<T>,
) -> Result<SpaceTimeField<Cplx<T>>> {
    let amp = Amplitude::growing(
        a2,
        d,
        omega,
        Frequency { tau, xi: xi.to_vec() },
        AmplitudeShape::Gradient,
        Cutoff::new(delta, grid.t_final())?,
        SegmentRule::default(),
    )?;
    Ok(amp.sample(grid))
}

/// `max |omega . (grad_h + A) B|` over interior nodes, central differences.
pub fn transport_residual<T: Real>(grid: &SpaceTimeGrid<T>, b: &SpaceTimeField<Cplx<T>>, a: &VectorField, omega: &[T]) -> Result<T> {
    b.check_grid(grid)?;
    let w: Vec<f64> = omega.iter().map(|v| v.to_f64_lossy()).collect();
    let wa = a.dot_const(&w).compile::<T>();
    let i2h = T::one() / (T::lit(2.0) * grid.hx());
    let mut x = vec![T::zero(); grid.dim()];
    let mut worst = T::zero();
    for k in 0..grid.ntime() {
        let t = grid.time(k);
        let s = b.slice(k);
        for &node in grid.interior() {
            let mut r = Cplx::zero();
            for (axis, &wi) in omega.iter().enumerate() {
                let st = grid.stride(axis);
                r += (s[node + st] - s[node - st]) * (wi * i2h);
            }
            grid.coords_into(node, &mut x);
            r += s[node] * wa.eval(t, &x);
            worst = worst.max(r.norm());
        }
    }
    Ok(worst)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoSign {
    Growing,
    Decaying,
}

/// GO solution in conjugated form: `u = e^{+-phi} w`, `w = B + R`.
#[derive(Clone, Debug)]
pub struct GoSolution<T> {
    pub sign: GoSign,
    pub b: SpaceTimeField<Cplx<T>>,
    pub r: SpaceTimeField<Cplx<T>>,
    pub weight: CarlemanWeight<T>,
    pub residual_norm: T,
    pub norm_r_l2: T,
    pub norm_r_h1: T,
    pub norm_b_l2: T,
}

impl<T: Real> GoSolution<T> {
    /// `w = B + R = e^{-+phi} u`.
    pub fn w(&self) -> SpaceTimeField<Cplx<T>> {
        self.b.zip_with(&self.r, |a, b| a + b).expect("same shape")
    }

    /// Full solution value; overflows for large `lambda`, use [`Self::w`] instead.
    pub fn u_at(&self, grid: &SpaceTimeGrid<T>, k: usize, node: usize) -> Cplx<T> {
        let phi = self.weight.phi(grid.time(k), &grid.coords(node));
        let e = match self.sign {
            GoSign::Growing => phi.exp(),
            GoSign::Decaying => (-phi).exp(),
        };
        (self.b.at(k, node) + self.r.at(k, node)) * e
    }
}

/// Solves for the remainder by prescribing `e^{+-phi} B` on `Sigma` and zero
/// initial (growing) or terminal (decaying) data, entirely in the conjugated
/// variable so that `e^{lambda^2 T}` never appears.
pub fn build_go_solution<T: Real>(
    pair: &CoefficientPair,
    b: &SpaceTimeField<Cplx<T>>,
    weight: &CarlemanWeight<T>,
    sign: GoSign,
    grid: &SpaceTimeGrid<T>,
    scheme: Scheme,
) -> Result<GoSolution<T>> {
    build_go_solution_with(pair, b, weight, sign, grid, scheme, None)
}

/// As [`build_go_solution`], with `extra` added to the lateral data of `w`
/// (so that `R = extra` on `Sigma`).
pub fn build_go_solution_with<T: Real>(
    pair: &CoefficientPair,
    b: &SpaceTimeField<Cplx<T>>,
    weight: &CarlemanWeight<T>,
    sign: GoSign,
    grid: &SpaceTimeGrid<T>,
    scheme: Scheme,
    extra: Option<&DirichletData<T>>,
) -> Result<GoSolution<T>> {
    b.check_grid(grid)?;
    let mut data = DirichletData::from_field(grid, b);
    if let Some(e) = extra {
        data = data.add(e);
    }
    let lambda = weight.lambda.to_f64_lossy();
    let omega: Vec<f64> = weight.omega.iter().map(|v| v.to_f64_lossy()).collect();
    let opts = SolveOptions::with_scheme(scheme);
    let (w, residual_norm) = match sign {
        GoSign::Growing => {
            let prob = conjugated_problem(pair, lambda, &omega);
            let sol = solve_problem(grid, &prob, &data, None, &opts)?;
            (sol.u, sol.residual_norm)
        }
        GoSign::Decaying => {
            let rev = adjoint_pair(pair, grid.t_final().to_f64_lossy());
            let back: Vec<f64> = omega.iter().map(|w| -w).collect();
            let prob = conjugated_problem(&rev, lambda, &back);
            let sol = solve_problem(grid, &prob, &data.time_reversed(), None, &opts)?;
            (reverse_time(&sol.u), sol.residual_norm)
        }
    };
    let r = w.zip_with(b, |a, c| a - c)?;
    Ok(GoSolution {
        sign,
        norm_r_l2: discrete_norm(grid, &r, NormKind::L2Q)?,
        norm_r_h1: discrete_norm(grid, &r, NormKind::H1Q)?,
        norm_b_l2: discrete_norm(grid, b, NormKind::L2Q)?,
        b: b.clone(),
        r,
        weight: weight.clone(),
        residual_norm,
    })
}

/// Lateral trace of the first outer corrector `R_1` of the remainder.
///
/// `R_1` solves `omega . (grad + A) R_1 = L_0 B / (2 lambda)` along rays and
/// vanishes at the exit point, where `L_0 = d_t - Laplacian - 2A . grad + q~`.
/// Prescribing it on `Sigma` removes the parabolic boundary layer that a zero
/// lateral trace creates along faces parallel to `omega`.
pub fn corrector_trace<T: Real>(
    pair: &CoefficientPair,
    amp: &Amplitude<T>,
    weight: &CarlemanWeight<T>,
    sign: GoSign,
    grid: &SpaceTimeGrid<T>,
) -> Result<DirichletData<T>> {
    let n = grid.dim();
    let tf = grid.t_final();
    let (work, omega, reversed) = match sign {
        GoSign::Growing => (pair.clone(), weight.omega.clone(), false),
        GoSign::Decaying => (adjoint_pair(pair, tf.to_f64_lossy()), weight.omega.iter().map(|&w| -w).collect(), true),
    };
    let w64: Vec<f64> = omega.iter().map(|v| v.to_f64_lossy()).collect();
    let ex = expand_operator(&work);
    let drift = ex.drift.compile::<T>();
    let zeroth = ex.zeroth.compile::<T>();
    let wa = work.a.dot_const(&w64).compile::<T>();
    let (gx, gw) = crate::quadrature::gauss_legendre::<T>(8);
    let (hs, ht) = (T::lit(1e-3), T::lit(1e-4));
    let two = T::lit(2.0);
    let lambda = weight.lambda;
    let b_at = |t: T, x: &[T]| if reversed { amp.eval(tf - t, x) } else { amp.eval(t, x) };
    let active = |t: T| {
        let c = amp.cutoff();
        let tt = if reversed { tf - t } else { t };
        [tt - ht, tt, tt + ht].iter().any(|&s| c.eval(s, 0) != T::zero())
    };
    let l0b = |t: T, x: &[T]| {
        let mut y = [T::zero(); MAX_DIM];
        y[..n].copy_from_slice(x);
        let b0 = b_at(t, x);
        let mut out = (b_at(t + ht, x) - b_at(t - ht, x)) / (two * ht) + b0 * zeroth.eval(t, x);
        for i in 0..n {
            y[i] = x[i] + hs;
            let bp = b_at(t, &y[..n]);
            y[i] = x[i] - hs;
            let bm = b_at(t, &y[..n]);
            y[i] = x[i];
            out -= (bp - b0 * two + bm) / (hs * hs) + (bp - bm) / (two * hs) * drift[i].eval(t, x);
        }
        out
    };
    // int_0^s omega . A(x + r omega) dr
    let phase = |t: T, x: &[T], s: T| {
        let mut y = [T::zero(); MAX_DIM];
        let half = s / two;
        let mut acc = T::zero();
        for (&g, &w) in gx.iter().zip(&gw) {
            let r = half * (g + T::one());
            for i in 0..n {
                y[i] = x[i] + r * omega[i];
            }
            acc += w * wa.eval(t, &y[..n]);
        }
        acc * half
    };
    let levels: Vec<Vec<Cplx<T>>> = (0..grid.ntime())
        .into_par_iter()
        .map(|k| {
            let t = grid.time(k);
            let mut out = vec![Cplx::zero(); grid.boundary().len()];
            if !active(t) {
                return out;
            }
            let mut x = vec![T::zero(); n];
            let mut y = vec![T::zero(); n];
            for (j, bn) in grid.boundary().iter().enumerate() {
                grid.coords_into(bn.node, &mut x);
                let s_exit = exit_parameter(&x, &omega);
                if s_exit <= T::zero() {
                    continue;
                }
                let panels = (s_exit.to_f64_lossy() / 0.25).ceil().max(1.0) as usize;
                let len = s_exit / T::from_usize_lossy(panels);
                let mut acc = Cplx::zero();
                for p in 0..panels {
                    let a = len * T::from_usize_lossy(p);
                    for (&g, &w) in gx.iter().zip(&gw) {
                        let s = a + len * (g + T::one()) / two;
                        for i in 0..n {
                            y[i] = x[i] + s * omega[i];
                        }
                        acc += l0b(t, &y) * (phase(t, &x, s).exp() * w * len / two);
                    }
                }
                out[j] = -acc / (two * lambda);
            }
            out
        })
        .collect();
    let data = DirichletData::from_levels(grid, levels)?;
    Ok(if reversed { data.time_reversed() } else { data })
}

/// `||f||_{H^m_lambda}^2` of one time slice by FFT of the zero extension to
/// the periodic box `[-1/2, 3/2]^n`.
pub fn weighted_sobolev_sq<T: Real + FftNum>(grid: &SpaceTimeGrid<T>, slice: &[Cplx<T>], lambda: T, m: i32) -> T {
    let n = grid.dim();
    let nx = grid.nx();
    let big = 2 * (nx - 1);
    let off = (nx - 1) / 2;
    let total = big.pow(n as u32);
    let mut buf = vec![Cplx::<T>::zero(); total];
    for (node, v) in slice.iter().enumerate() {
        let mut r = node;
        let mut idx = 0;
        let mut mult = 1;
        for _ in 0..n {
            idx += (r % nx + off) * mult;
            r /= nx;
            mult *= big;
        }
        buf[idx] = *v;
    }
    crate::spectral::fft_axes(&mut buf, &vec![big; n]);
    let h = grid.hx();
    let len = h * T::from_usize_lossy(big);
    let hn = h.powi(n as i32);
    let dk = T::lit(2.0) * T::PI() / len;
    let mut acc = T::zero();
    for (flat, v) in buf.iter().enumerate() {
        let mut r = flat;
        let mut xi2 = T::zero();
        for _ in 0..n {
            let j = r % big;
            r /= big;
            let js = if j < big / 2 { j as f64 } else { j as f64 - big as f64 };
            let k = T::lit(js) * dk;
            xi2 += k * k;
        }
        acc += (lambda * lambda + xi2).powi(m) * (*v * hn).norm_sqr();
    }
    acc / len.powi(n as i32)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ShiftedIndex {
    pub lhs: f64,
    pub rhs: f64,
}

/// `||u||_{L2(H^{-1}_lambda)}` and `||P_lambda u||_{L2(H^{-2}_lambda)}` for a
/// test function compactly supported in `Q`.
pub fn shifted_index_check<T: Real + FftNum>(
    pair: &CoefficientPair,
    weight: &CarlemanWeight<T>,
    u: &TestFunction,
    grid: &SpaceTimeGrid<T>,
) -> Result<ShiftedIndex> {
    let tf = grid.t_final().to_f64_lossy();
    let margin = 2.0 * grid.hx().to_f64_lossy();
    u.check_compact_support(grid.dim(), tf, margin)?;
    if u.is_zero() {
        return Ok(ShiftedIndex { lhs: 0.0, rhs: 0.0 });
    }
    let omega: Vec<f64> = weight.omega.iter().map(|v| v.to_f64_lossy()).collect();
    let prob = conjugated_problem(pair, weight.lambda.to_f64_lossy(), &omega);
    let b = prob.drift.compile::<T>();
    let c = prob.zeroth.compile::<T>();
    let cu = u.compile::<T>(grid.dim());
    let mut lhs = T::zero();
    let mut rhs = T::zero();
    let mut x = vec![T::zero(); grid.dim()];
    for k in 0..grid.ntime() {
        let t = grid.time(k);
        let mut us = vec![Cplx::zero(); grid.nspace()];
        let mut ps = vec![Cplx::zero(); grid.nspace()];
        for node in 0..grid.nspace() {
            grid.coords_into(node, &mut x);
            let j = cu.jet(t, &x);
            let mut p = j.ut - j.lap + c.eval(t, &x) * j.u;
            for (i, bi) in b.iter().enumerate() {
                p -= bi.eval(t, &x) * j.grad[i];
            }
            us[node] = Cplx::new(j.u, T::zero());
            ps[node] = Cplx::new(p, T::zero());
        }
        let w = grid.time_weight(k);
        lhs += w * weighted_sobolev_sq(grid, &us, weight.lambda, -1);
        rhs += w * weighted_sobolev_sq(grid, &ps, weight.lambda, -2);
    }
    Ok(ShiftedIndex { lhs: lhs.sqrt().to_f64_lossy(), rhs: rhs.sqrt().to_f64_lossy() })
}
