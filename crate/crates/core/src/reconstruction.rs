//! Recovery of the convection difference and the potential from boundary
//! data: the integral identity, per-frequency extraction, the `M_xi` system
//! under the divergence constraint, Fourier synthesis, and parameter coupling.

use rayon::prelude::*;
use rustfft::FftNum;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::expr::Expr;
use crate::fields::{CoefficientPair, VectorField};
use crate::go::{build_bd, conjugated_problem, Amplitude, AmplitudeShape, Cutoff, Frequency, GoSolution};
use crate::grid::{discrete_norm, integrate_q, integrate_sigma, partial, BoundaryPartition, NormKind, SpaceTimeField, SpaceTimeGrid};
use crate::linalg::lu_solve;
use crate::quadrature::SegmentRule;
use crate::scalar::{Cplx, Real};
use crate::solver::{expand_operator, normal_derivative, solve_problem, DirichletData, Scheme, SolveOptions};
use crate::spectral::{integrate_q_simpson, lattice, synthesize, FourierBox, Mode, Spectrum};

/// Estimate of one Fourier coefficient with its error bookkeeping.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FourierEstimate {
    pub re: f64,
    pub im: f64,
    /// `lambda^{-1/2}`.
    pub lambda_term: f64,
    /// `e^{beta lambda} ||Lambda_1 - Lambda_2||`.
    pub dn_term: f64,
}

impl FourierEstimate {
    pub fn value<T: Real>(&self) -> Cplx<T> {
        Cplx::new(T::lit(self.re), T::lit(self.im))
    }
}

/// `(eta^2 omega . A)^(tau, xi)` from the boundary term of the integral
/// identity: `(bt + q_term) / (2 lambda i |xi|)` with
/// `bt = int_Sigma conj(B_1) d_nu (w_1 - w_2)` and `A = A_1 - A_2`.
pub fn fourier_omega_a_hat<T: Real>(
    boundary_term: Cplx<T>,
    q_term: Cplx<T>,
    lambda: f64,
    xi: &[f64],
    beta: f64,
    dn_norm: f64,
) -> Result<FourierEstimate> {
    let xn = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
    if xn == 0.0 {
        return Err(LabError::InvalidArgument("the identity degenerates at xi = 0".into()));
    }
    if !(lambda > 0.0) {
        return Err(LabError::InvalidArgument(format!("lambda = {lambda} must be positive")));
    }
    let v = (boundary_term + q_term) / Cplx::new(T::zero(), T::lit(2.0 * lambda * xn));
    Ok(FourierEstimate {
        re: v.re.to_f64_lossy(),
        im: v.im.to_f64_lossy(),
        lambda_term: lambda.powf(-0.5),
        dn_term: (beta * lambda).exp() * dn_norm,
    })
}

/// Directions `omega_1..omega_{n-1}` orthogonal to `xi` and the matrix with
/// rows `omega_i` and `xi/|xi|`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MxiSystem {
    pub directions: Vec<Vec<f64>>,
    /// Row-major `n x n`.
    pub matrix: Vec<f64>,
    pub det: f64,
}

fn dotf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalized(v: &[f64]) -> Option<Vec<f64>> {
    let n = dotf(v, v).sqrt();
    (n > 1e-12).then(|| v.iter().map(|x| x / n).collect())
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Orthonormal completion of `fixed` (orthonormal rows) in `R^n` by Gram-Schmidt
/// over the coordinate axes.
fn complete_basis(fixed: &[Vec<f64>], n: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = fixed.to_vec();
    let mut extra = Vec::new();
    for axis in 0..n {
        let mut v = vec![0.0; n];
        v[axis] = 1.0;
        for b in &basis {
            let c = dotf(&v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
        }
        if let Some(u) = normalized(&v) {
            if dotf(&v, &v).sqrt() > 1e-6 {
                basis.push(u.clone());
                extra.push(u);
            }
        }
    }
    extra
}

fn det(m: &[f64], n: usize) -> f64 {
    let mut a = m.to_vec();
    let mut d = 1.0;
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| a[i * n + c].abs().total_cmp(&a[j * n + c].abs())).expect("nonempty");
        if a[piv * n + c] == 0.0 {
            return 0.0;
        }
        if piv != c {
            for k in 0..n {
                a.swap(c * n + k, piv * n + k);
            }
            d = -d;
        }
        d *= a[c * n + c];
        for i in (c + 1)..n {
            let f = a[i * n + c] / a[c * n + c];
            for k in c..n {
                a[i * n + k] -= f * a[c * n + k];
            }
        }
    }
    d
}

/// Builds `M_xi`. The first direction is the normalized projection of
/// `omega0` onto `xi^perp`; further ones are tilted from it as far as the cap
/// `|omega - omega0| <= eps/2` allows (any tilt up to a right angle when
/// `restrict_to_cap` is false).
pub fn assemble_mxi(xi: &[f64], omega0: &[f64], eps: f64, restrict_to_cap: bool) -> Result<MxiSystem> {
    let n = xi.len();
    if n < 2 || omega0.len() != n {
        return Err(LabError::Shape { expected: n.max(2), found: omega0.len() });
    }
    let xh = normalized(xi).ok_or_else(|| LabError::InvalidArgument("xi = 0 has no M_xi".into()))?;
    let c = dotf(omega0, &xh);
    let proj: Vec<f64> = omega0.iter().zip(&xh).map(|(w, x)| w - c * x).collect();
    let first = match normalized(&proj) {
        Some(v) => v,
        None if !restrict_to_cap => complete_basis(std::slice::from_ref(&xh), n).remove(0),
        None => return Err(LabError::Cone(format!("xi = {xi:?} is parallel to omega0; no cap direction is orthogonal to it"))),
    };
    let half = eps / 2.0;
    if restrict_to_cap && dist(&first, omega0) > half {
        return Err(LabError::Cone(format!(
            "xi = {xi:?} lies outside the admissible cone: the closest orthogonal direction is {:.3} from omega0 (> eps/2 = {half})",
            dist(&first, omega0)
        )));
    }
    let mut directions = vec![first.clone()];
    if n > 2 {
        // omega0 lies in span(xi, first), so every tilt direction e is orthogonal to it
        let c0 = dotf(&first, omega0);
        let angle = if restrict_to_cap {
            let limit = (1.0 - half * half / 2.0) / c0;
            0.999 * limit.clamp(-1.0, 1.0).acos()
        } else {
            std::f64::consts::FRAC_PI_2
        };
        for e in complete_basis(&[xh.clone(), first.clone()], n) {
            let w: Vec<f64> = first.iter().zip(&e).map(|(f, e)| f * angle.cos() + e * angle.sin()).collect();
            directions.push(w);
        }
    }
    let mut matrix = Vec::with_capacity(n * n);
    for d in &directions {
        matrix.extend_from_slice(d);
    }
    matrix.extend_from_slice(&xh);
    let d = det(&matrix, n);
    Ok(MxiSystem { directions, matrix, det: d })
}

/// Solution of `M_xi A^ = (G_1..G_{n-1}, 0)` with a condition number estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct ComponentSolution<T> {
    pub a_hat: Vec<Cplx<T>>,
    pub condition: f64,
}

pub fn solve_component_system<T: Real>(samples: &[Cplx<T>], sys: &MxiSystem) -> Result<ComponentSolution<T>> {
    let n = sys.directions.len() + 1;
    if samples.len() != n - 1 {
        return Err(LabError::Shape { expected: n - 1, found: samples.len() });
    }
    if sys.det.abs() < 1e-12 {
        return Err(LabError::InvalidArgument(format!("M_xi is singular (det = {:e})", sys.det)));
    }
    let m: Vec<Cplx<T>> = sys.matrix.iter().map(|&v| Cplx::new(T::lit(v), T::zero())).collect();
    let mut rhs: Vec<Cplx<T>> = samples.to_vec();
    rhs.push(Cplx::new(T::zero(), T::zero()));
    lu_solve(m.clone(), n, &mut rhs)?;
    // ||M||_F ||M^{-1}||_F
    let mut inv_sq = 0.0;
    for c in 0..n {
        let mut e = vec![Cplx::new(T::zero(), T::zero()); n];
        e[c] = Cplx::new(T::one(), T::zero());
        lu_solve(m.clone(), n, &mut e)?;
        inv_sq += e.iter().map(|v| v.norm_sqr().to_f64_lossy()).sum::<f64>();
    }
    let m_sq: f64 = sys.matrix.iter().map(|v| v * v).sum();
    Ok(ComponentSolution { a_hat: rhs, condition: (m_sq * inv_sq).sqrt() })
}

/// Coupled stability parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityParams {
    pub theta: f64,
    pub r: f64,
    pub delta: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub alpha_prime: f64,
    /// `lambda` of the potential step, with `alpha'` in place of `alpha`.
    pub lambda_q: f64,
    pub kappa: f64,
    pub beta: f64,
    pub mu1: f64,
    pub mu2: f64,
}

/// `delta = R^{-2/3}`, `alpha = 6 + (n^2+n+6)/(n theta)`,
/// `lambda = R^{alpha + 8 + 2/(3 theta)} e^{2R(1-theta)/theta}`, `alpha' = 6 + (n+1)/theta`.
/// Empirical constants start at one.
pub fn couple_parameters(r: f64, theta: f64, n: usize) -> Result<StabilityParams> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(LabError::InvalidArgument(format!("theta = {theta} must lie in (0, 1)")));
    }
    if !(r >= 1.0) {
        return Err(LabError::InvalidArgument(format!("R = {r} must be >= 1")));
    }
    let nf = n as f64;
    let alpha = 6.0 + (nf * nf + nf + 6.0) / (nf * theta);
    let alpha_prime = 6.0 + (nf + 1.0) / theta;
    let growth = (2.0 * r * (1.0 - theta) / theta).exp();
    let tail = 8.0 + 2.0 / (3.0 * theta);
    Ok(StabilityParams {
        theta,
        r,
        delta: r.powf(-2.0 / 3.0),
        lambda: r.powf(alpha + tail) * growth,
        alpha,
        alpha_prime,
        lambda_q: r.powf(alpha_prime + tail) * growth,
        kappa: 1.0,
        beta: 1.0,
        mu1: 1.0,
        mu2: 1.0,
    })
}

impl StabilityParams {
    /// Exponents for `(R, theta, n)` with `delta` and `lambda` set directly,
    /// as runs at laboratory scale do (the coupled `lambda` overflows quickly).
    pub fn uncoupled(r: f64, theta: f64, n: usize, delta: f64, lambda: f64) -> Result<Self> {
        let mut p = couple_parameters(r.max(1.0), theta, n)?;
        p.r = r;
        p.delta = delta;
        p.lambda = lambda;
        p.lambda_q = lambda;
        Ok(p)
    }
}

/// `R = kappa^{-1} log|log d|` for the convection term.
pub fn radius_from_dn_a(dn: f64, kappa: f64) -> f64 {
    dn.ln().abs().ln() / kappa
}

/// `R = (mu1 / kappa) log log|log d|` for the potential.
pub fn radius_from_dn_q(dn: f64, kappa: f64, mu1: f64) -> f64 {
    mu1 / kappa * dn.ln().abs().ln().ln()
}

/// Potential recovered from `q~` and the convection fields.
#[derive(Clone, Debug)]
pub struct QRecovery<T> {
    pub q: SpaceTimeField<Cplx<T>>,
    /// `max |div A|` of the supplied difference field over interior nodes.
    pub div_max: f64,
}

/// `q_1 - q_2 = q~ + div A + |A_1|^2 - |A_2|^2` with `A = A_1 - A_2` given on
/// the grid and `A_2 = A_1 - A`. When the inputs carry the weight `eta^2`
/// (pass it per time level), the quadratic term is divided by it where it is
/// not negligible.
pub fn recover_q<T: Real>(
    grid: &SpaceTimeGrid<T>,
    qtilde: &SpaceTimeField<Cplx<T>>,
    a: &[SpaceTimeField<Cplx<T>>],
    a1: &VectorField,
    weight: Option<&[T]>,
) -> Result<QRecovery<T>> {
    let n = grid.dim();
    if a.len() != n {
        return Err(LabError::Shape { expected: n, found: a.len() });
    }
    qtilde.check_grid(grid)?;
    let a1c = a1.compile::<T>();
    let mut q = qtilde.clone();
    let mut div_max = 0.0f64;
    let mut x = vec![T::zero(); n];
    for k in 0..grid.ntime() {
        let t = grid.time(k);
        let w = weight.map_or(T::one(), |w| w[k]);
        let mut div = vec![Cplx::new(T::zero(), T::zero()); grid.nspace()];
        for (i, ai) in a.iter().enumerate() {
            for (d, p) in div.iter_mut().zip(partial(grid, ai.slice(k), i)) {
                *d += p;
            }
        }
        let out = q.slice_mut(k);
        for node in 0..grid.nspace() {
            grid.coords_into(node, &mut x);
            let mut cross = Cplx::new(T::zero(), T::zero());
            let mut sq = Cplx::new(T::zero(), T::zero());
            for i in 0..n {
                let v = a[i].at(k, node);
                cross += v * a1c[i].eval(t, &x);
                sq += v * v;
            }
            // |A_1|^2 - |A_1 - A|^2 = 2 A_1 . A - |A|^2
            let quad = if w > T::lit(1e-3) { sq / w } else { Cplx::new(T::zero(), T::zero()) };
            out[node] += div[node] + cross * T::lit(2.0) - quad;
            if grid.unknown(node).is_some() {
                div_max = div_max.max(div[node].norm().to_f64_lossy());
            }
        }
    }
    Ok(QRecovery { q, div_max })
}

/// Which boundary data enter the reconstruction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataMode {
    /// Neumann data on all of `Sigma`, any direction `omega`.
    FullData,
    /// Neumann data on `Sigma_{-,eps/2}(omega0)` only, directions in the cap.
    Cone,
}

/// Boundary term `int conj(B_1) d_nu (w_1 - w_2)` for one growing amplitude.
///
/// `w_i` solve the conjugated equation of pair `i` with lateral data `B_2`
/// and zero initial data, so `e^{phi}(w_1 - w_2)` is the difference of the
/// two solutions with the same Dirichlet data; `B_1` is the decaying
/// amplitude of the adjoint of pair 1. With `Cone` only the measured faces
/// contribute.
#[allow(clippy::too_many_arguments)]
pub fn boundary_term<T: Real>(
    pair1: &CoefficientPair,
    pair2: &CoefficientPair,
    b2: &Amplitude<T>,
    omega: &[T],
    lambda: f64,
    grid: &SpaceTimeGrid<T>,
    partition: Option<&BoundaryPartition<T>>,
    scheme: Scheme,
) -> Result<Cplx<T>> {
    let w64: Vec<f64> = omega.iter().map(|v| v.to_f64_lossy()).collect();
    let data = DirichletData::from_fn(grid, |t, x| b2.eval(t, x));
    let opts = SolveOptions::with_scheme(scheme);
    let p1 = conjugated_problem(pair1, lambda, &w64);
    let p2 = conjugated_problem(pair2, lambda, &w64);
    let (s1, s2) = rayon::join(|| solve_problem(grid, &p1, &data, None, &opts), || solve_problem(grid, &p2, &data, None, &opts));
    let diff = s1?.u.zip_with(&s2?.u, |a, b| a - b)?;
    let dn = normal_derivative(grid, &diff)?;
    let b1 = Amplitude::decaying(&pair1.a.neg(), omega, b2.cutoff().clone(), SegmentRule::default())?;
    let faces_b1 = crate::grid::BoundaryTrace::sample(grid, |t, x, _| b1.eval(t, x));
    Ok(integrate_sigma(grid, |f| partition.is_none_or(|p| p.is_measured(f)), |k, face, j| {
        faces_b1.get(k, face, j).conj() * dn.get(k, face, j)
    }))
}

/// `q~_1 - q~_2` as an expression.
pub fn qtilde_difference(pair1: &CoefficientPair, pair2: &CoefficientPair) -> Expr {
    Expr::sub(expand_operator(pair1).zeroth, expand_operator(pair2).zeroth)
}

/// `-int q~ B_2 conj(B_1)` for a known `q~` difference (an oracle term that
/// the estimate otherwise leaves in its error budget).
pub fn q_term_oracle<T: Real>(
    qtilde: &Expr,
    b2: &SpaceTimeField<Cplx<T>>,
    b1: &SpaceTimeField<Cplx<T>>,
    grid: &SpaceTimeGrid<T>,
) -> Cplx<T> {
    if qtilde.is_zero() {
        return Cplx::new(T::zero(), T::zero());
    }
    let q = qtilde.compile::<T>();
    let mut x = vec![T::zero(); grid.dim()];
    -integrate_q(grid, |k, node| {
        grid.coords_into(node, &mut x);
        b2.at(k, node) * b1.at(k, node).conj() * q.eval(grid.time(k), &x)
    })
}

/// LHS minus RHS of the integral identity
/// `2 int (A . grad u_2) conj(v) - int q~ u_2 conj(v) = -int_Sigma conj(v) d_nu u`
/// in conjugated variables, with `u_2 = e^{phi} w_2`, `v = e^{-phi} w_v` and
/// `u = e^{phi} w_diff`. Returns `(residual, |rhs|)`.
pub fn integral_identity_residual<T: Real>(
    pair1: &CoefficientPair,
    pair2: &CoefficientPair,
    u2: &GoSolution<T>,
    v: &GoSolution<T>,
    w_diff: &SpaceTimeField<Cplx<T>>,
    grid: &SpaceTimeGrid<T>,
) -> Result<(Cplx<T>, f64)> {
    let n = grid.dim();
    w_diff.check_grid(grid)?;
    let (w2, wv) = (u2.w(), v.w());
    if u2.weight.lambda != v.weight.lambda || u2.weight.omega != v.weight.omega {
        return Err(LabError::InvalidArgument("u2 and v must share the Carleman weight".into()));
    }
    let lambda = u2.weight.lambda;
    let omega = &u2.weight.omega;
    let a = pair1.a.sub(&pair2.a).compile::<T>();
    let q = qtilde_difference(pair1, pair2).compile::<T>();
    let grads: Vec<Vec<Vec<Cplx<T>>>> = (0..grid.ntime()).map(|k| (0..n).map(|i| partial(grid, w2.slice(k), i)).collect()).collect();
    let mut x = vec![T::zero(); n];
    let lhs = integrate_q(grid, |k, node| {
        let t = grid.time(k);
        grid.coords_into(node, &mut x);
        let w = w2.at(k, node);
        let mut adv = Cplx::new(T::zero(), T::zero());
        for i in 0..n {
            adv += (w * (lambda * omega[i]) + grads[k][i][node]) * a[i].eval(t, &x);
        }
        (adv * T::lit(2.0) - w * q.eval(t, &x)) * wv.at(k, node).conj()
    });
    let dn = normal_derivative(grid, w_diff)?;
    let vt = crate::grid::BoundaryTrace::from_field(grid, &wv);
    let rhs = -integrate_sigma(grid, |_| true, |k, face, j| vt.get(k, face, j).conj() * dn.get(k, face, j));
    Ok((lhs - rhs, rhs.norm().to_f64_lossy()))
}

/// Direct quadrature of `int (omega . A) B_2 conj(B_1)` next to
/// `-i |xi| (eta^2 omega . A)^` from the FFT of the sampled field.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub direct_re: f64,
    pub direct_im: f64,
    pub fft_re: f64,
    pub fft_im: f64,
    pub rel_error: f64,
}

/// Checks the Fourier identity for the amplitudes built from `A_2` and
/// `D = A = A_1 - A_2` at one lattice mode.
#[allow(clippy::too_many_arguments)]
pub fn fourier_identity_check<T: Real + FftNum>(
    a1: &VectorField,
    a2: &VectorField,
    omega: &[T],
    mode: &Mode,
    boxed: FourierBox,
    delta: T,
    grid: &SpaceTimeGrid<T>,
    spectrum: Option<&Spectrum<T>>,
) -> Result<IdentityCheck> {
    let d = a1.sub(a2);
    let w64: Vec<f64> = omega.iter().map(|v| v.to_f64_lossy()).collect();
    let freq = Frequency { tau: boxed.tau(mode.k), xi: boxed.xi(&mode.j) };
    let xn = freq.xi_norm();
    let cut = Cutoff::new(delta, grid.t_final())?;
    let b2 = Amplitude::growing(a2, &d, omega, freq, AmplitudeShape::Gradient, cut.clone(), SegmentRule::default())?.sample(grid);
    let b1 = build_bd(&a1.neg(), omega, delta, grid)?;
    let wa = d.dot_const(&w64).compile::<T>();
    let mut prod = SpaceTimeField::zeros_like(grid);
    let mut x = vec![T::zero(); grid.dim()];
    for k in 0..grid.ntime() {
        let t = grid.time(k);
        for node in 0..grid.nspace() {
            grid.coords_into(node, &mut x);
            prod.slice_mut(k)[node] = b2.at(k, node) * b1.at(k, node).conj() * wa.eval(t, &x);
        }
    }
    let direct = integrate_q_simpson(grid, &prod)?;
    let fft = match spectrum {
        Some(s) => s.get(mode),
        None => Spectrum::of_field(grid, boxed, &weighted_component(grid, &d, &w64, &cut))?.get(mode),
    };
    let predicted = fft * Cplx::new(T::zero(), -T::lit(xn));
    let rel = (direct - predicted).norm() / predicted.norm().max(T::lit(1e-300));
    Ok(IdentityCheck {
        direct_re: direct.re.to_f64_lossy(),
        direct_im: direct.im.to_f64_lossy(),
        fft_re: predicted.re.to_f64_lossy(),
        fft_im: predicted.im.to_f64_lossy(),
        rel_error: rel.to_f64_lossy(),
    })
}

/// `eta^2 (omega . A)` sampled on the grid.
pub fn weighted_component<T: Real>(grid: &SpaceTimeGrid<T>, a: &VectorField, omega: &[f64], cut: &Cutoff<T>) -> SpaceTimeField<Cplx<T>> {
    let p = a.dot_const(omega).compile::<T>();
    weighted_expr(grid, &p, cut)
}

fn weighted_expr<T: Real>(grid: &SpaceTimeGrid<T>, p: &crate::expr::Program<T>, cut: &Cutoff<T>) -> SpaceTimeField<Cplx<T>> {
    let mut out = SpaceTimeField::zeros_like(grid);
    let mut x = vec![T::zero(); grid.dim()];
    for k in 0..grid.ntime() {
        let t = grid.time(k);
        let e = cut.eval(t, 0);
        if e == T::zero() {
            continue;
        }
        for node in 0..grid.nspace() {
            grid.coords_into(node, &mut x);
            out.slice_mut(k)[node] = Cplx::new(e * e * p.eval(t, &x), T::zero());
        }
    }
    out
}

/// Settings shared by the convection and potential reconstructions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconstructionConfig {
    pub lambda: f64,
    pub delta: f64,
    pub omega0: Vec<f64>,
    pub eps: f64,
    pub mode: DataMode,
    /// Time modes `|k| <= kmax`.
    pub kmax: i64,
    /// Space modes `|j_i| <= jmax`.
    pub jmax: i64,
    /// Optional ball `|(tau, xi)| <= radius` intersected with the box of modes.
    pub radius: Option<f64>,
    /// Padding of the periodic box `[-pad, 1 + pad]^n`.
    pub pad: f64,
    pub scheme: Scheme,
    /// Uses the true `q~` difference for the zeroth-order term.
    pub q_oracle: bool,
    pub beta: f64,
    pub dn_norm: f64,
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        ReconstructionConfig {
            lambda: 32.0,
            delta: 0.2,
            omega0: vec![1.0, 0.0],
            eps: 1.0,
            mode: DataMode::FullData,
            kmax: 6,
            jmax: 1,
            radius: None,
            pad: 0.0,
            scheme: Scheme::BackwardEuler,
            q_oracle: false,
            beta: 0.0,
            dn_norm: 0.0,
        }
    }
}

impl ReconstructionConfig {
    pub fn fourier_box(&self, t_final: f64) -> Result<FourierBox> {
        FourierBox::new(t_final, self.pad, self.omega0.len())
    }

    /// Canonical representatives of the retained lattice modes.
    pub fn modes(&self, boxed: &FourierBox) -> Vec<Mode> {
        lattice(self.omega0.len(), self.kmax, self.jmax)
            .into_iter()
            .filter(|m| m.is_canonical())
            .filter(|m| {
                self.radius.is_none_or(|r| {
                    let xi = boxed.xi(&m.j);
                    let tau = boxed.tau(m.k);
                    (tau * tau + dotf(&xi, &xi)).sqrt() <= r
                })
            })
            .collect()
    }
}

/// One reconstructed lattice coefficient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencySample {
    pub k: i64,
    pub j: Vec<i64>,
    pub tau: f64,
    pub xi: Vec<f64>,
    pub directions: Vec<Vec<f64>>,
    /// Per-direction estimates of `(eta^2 omega_i . A)^`.
    pub estimates: Vec<FourierEstimate>,
    /// Recovered `(eta^2 A)^` components, as `(re, im)`.
    pub a_hat: Vec<(f64, f64)>,
    pub det: f64,
    pub condition: f64,
    /// `xi . A^` after the solve.
    pub div_residual: f64,
}

/// Reconstruction of `eta^2 (A_1 - A_2)` and its error report.
#[derive(Clone, Debug)]
pub struct AReconstruction<T> {
    pub field: Vec<SpaceTimeField<Cplx<T>>>,
    pub samples: Vec<FrequencySample>,
    pub skipped: Vec<(Mode, String)>,
    /// Relative `L2(Q)` error against `eta^2 (A_1 - A_2)` and its absolute value.
    pub l2_error: f64,
    pub l2_truth: f64,
    pub linf_error: f64,
    pub min_det: f64,
}

fn to_c<T: Real>(v: (f64, f64)) -> Cplx<T> {
    Cplx::new(T::lit(v.0), T::lit(v.1))
}

/// Runs the per-frequency extraction for the convection difference and
/// synthesizes `eta^2 A` on the grid. The amplitudes use `A_2` and
/// `D = A_1 - A_2` from `pair2`, as validation runs know them.
pub fn reconstruct_a<T: Real + FftNum>(
    pair1: &CoefficientPair,
    pair2: &CoefficientPair,
    cfg: &ReconstructionConfig,
    grid: &SpaceTimeGrid<T>,
) -> Result<AReconstruction<T>> {
    let n = grid.dim();
    let tf = grid.t_final().to_f64_lossy();
    let boxed = cfg.fourier_box(tf)?;
    let omega0: Vec<T> = cfg.omega0.iter().map(|&v| T::lit(v)).collect();
    let partition = match cfg.mode {
        DataMode::FullData => None,
        DataMode::Cone => Some(BoundaryPartition::new(grid, &omega0, T::lit(cfg.eps))?),
    };
    let d = pair1.a.sub(&pair2.a);
    let qt = qtilde_difference(pair1, pair2);
    let cut = Cutoff::new(T::lit(cfg.delta), grid.t_final())?;
    let modes: Vec<Mode> = cfg.modes(&boxed).into_iter().filter(|m| !m.is_zero_space()).collect();
    let results: Vec<std::result::Result<FrequencySample, (Mode, LabError)>> = modes
        .par_iter()
        .map(|m| {
            let xi = boxed.xi(&m.j);
            let tau = boxed.tau(m.k);
            let sys = match assemble_mxi(&xi, &cfg.omega0, cfg.eps, cfg.mode == DataMode::Cone) {
                Ok(s) => s,
                Err(e) => return Err((m.clone(), e)),
            };
            let run = || -> Result<FrequencySample> {
                let mut estimates = Vec::new();
                for w in &sys.directions {
                    let wt: Vec<T> = w.iter().map(|&v| T::lit(v)).collect();
                    let freq = Frequency { tau, xi: xi.clone() };
                    let b2 = Amplitude::growing(&pair2.a, &d, &wt, freq, AmplitudeShape::Gradient, cut.clone(), SegmentRule::default())?;
                    let bt = boundary_term(pair1, pair2, &b2, &wt, cfg.lambda, grid, partition.as_ref(), cfg.scheme)?;
                    let q_term = if cfg.q_oracle {
                        let b1 = Amplitude::decaying(&pair1.a.neg(), &wt, cut.clone(), SegmentRule::default())?;
                        q_term_oracle(&qt, &b2.sample(grid), &b1.sample(grid), grid)
                    } else {
                        Cplx::new(T::zero(), T::zero())
                    };
                    estimates.push(fourier_omega_a_hat(bt, q_term, cfg.lambda, &xi, cfg.beta, cfg.dn_norm)?);
                }
                let g: Vec<Cplx<T>> = estimates.iter().map(|e| e.value()).collect();
                let sol = solve_component_system(&g, &sys)?;
                let div: Cplx<T> = sol.a_hat.iter().zip(&xi).map(|(a, &x)| *a * T::lit(x)).sum();
                Ok(FrequencySample {
                    k: m.k,
                    j: m.j.clone(),
                    tau,
                    xi: xi.clone(),
                    directions: sys.directions.clone(),
                    estimates,
                    a_hat: sol.a_hat.iter().map(|v| (v.re.to_f64_lossy(), v.im.to_f64_lossy())).collect(),
                    det: sys.det,
                    condition: sol.condition,
                    div_residual: div.norm().to_f64_lossy(),
                })
            };
            run().map_err(|e| (m.clone(), e))
        })
        .collect();
    let (samples, skipped) = split_results(results, cfg.mode)?;
    let field: Vec<SpaceTimeField<Cplx<T>>> = (0..n)
        .map(|i| {
            let mut coeffs = Vec::new();
            for s in &samples {
                let m = Mode { k: s.k, j: s.j.clone() };
                let c: Cplx<T> = to_c(s.a_hat[i]);
                coeffs.push((m.neg(), c.conj()));
                coeffs.push((m, c));
            }
            synthesize(grid, boxed, &coeffs).map(|v| Cplx::new(v.re, T::zero()))
        })
        .collect();
    let truth: Vec<SpaceTimeField<Cplx<T>>> = (0..n)
        .map(|i| {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            weighted_component(grid, &d, &e, &cut)
        })
        .collect();
    let (l2_error, l2_truth, linf_error) = vector_errors(grid, &field, &truth)?;
    let min_det = samples.iter().map(|s| s.det.abs()).fold(f64::INFINITY, f64::min);
    Ok(AReconstruction { field, samples, skipped, l2_error, l2_truth, linf_error, min_det })
}

/// Separates modes the cone excludes, which are zero-filled, from hard failures.
fn split_results<S>(results: Vec<std::result::Result<S, (Mode, LabError)>>, mode: DataMode) -> Result<(Vec<S>, Vec<(Mode, String)>)> {
    let mut samples = Vec::new();
    let mut skipped = Vec::new();
    for r in results {
        match r {
            Ok(s) => samples.push(s),
            Err((m, e @ LabError::Cone(_))) if mode == DataMode::Cone => skipped.push((m, e.to_string())),
            Err((m, e)) => return Err(LabError::InvalidArgument(format!("mode {m:?}: {e}"))),
        }
    }
    Ok((samples, skipped))
}

/// `(||f - g|| / ||g||, ||g||, max |f - g|)` for vector fields in `L2(Q)`;
/// the relative error falls back to the absolute one when `g = 0`.
pub fn vector_errors<T: Real>(grid: &SpaceTimeGrid<T>, f: &[SpaceTimeField<Cplx<T>>], g: &[SpaceTimeField<Cplx<T>>]) -> Result<(f64, f64, f64)> {
    let mut err_sq = 0.0;
    let mut tru_sq = 0.0;
    let mut linf = 0.0f64;
    for (a, b) in f.iter().zip(g) {
        let diff = a.zip_with(b, |x, y| x - y)?;
        err_sq += discrete_norm(grid, &diff, NormKind::L2Q)?.to_f64_lossy().powi(2);
        tru_sq += discrete_norm(grid, b, NormKind::L2Q)?.to_f64_lossy().powi(2);
        linf = linf.max(discrete_norm(grid, &diff, NormKind::Linf)?.to_f64_lossy());
    }
    let (e, t) = (err_sq.sqrt(), tru_sq.sqrt());
    Ok((if t > 0.0 { e / t } else { e }, t, linf))
}

/// `(eta^2 q~)^(tau, xi) = bt` for pairs with equal convection terms, where
/// `bt` is the boundary term built from plain amplitudes.
pub fn fourier_qtilde_hat<T: Real>(boundary_term: Cplx<T>, lambda: f64, beta: f64, dn_norm: f64) -> FourierEstimate {
    FourierEstimate {
        re: boundary_term.re.to_f64_lossy(),
        im: boundary_term.im.to_f64_lossy(),
        lambda_term: lambda.powf(-0.5),
        dn_term: (beta * lambda).exp() * dn_norm,
    }
}

/// Direction used for the potential at `xi`: orthogonal to `xi`, inside the
/// cap in `Cone` mode, and `omega0` itself at `xi = 0`.
pub fn potential_direction(xi: &[f64], cfg: &ReconstructionConfig) -> Result<Vec<f64>> {
    if xi.iter().all(|&v| v == 0.0) {
        return normalized(&cfg.omega0).ok_or_else(|| LabError::InvalidArgument("omega0 = 0".into()));
    }
    Ok(assemble_mxi(xi, &cfg.omega0, cfg.eps, cfg.mode == DataMode::Cone)?.directions.remove(0))
}

/// One reconstructed coefficient of `eta^2 q~`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialSample {
    pub k: i64,
    pub j: Vec<i64>,
    pub omega: Vec<f64>,
    pub estimate: FourierEstimate,
}

/// Reconstruction of `eta^2 (q_1 - q_2)`.
#[derive(Clone, Debug)]
pub struct QReconstruction<T> {
    pub qtilde: SpaceTimeField<Cplx<T>>,
    pub q: SpaceTimeField<Cplx<T>>,
    pub samples: Vec<PotentialSample>,
    pub skipped: Vec<(Mode, String)>,
    pub l2_error: f64,
    pub l2_truth: f64,
    pub linf_error: f64,
}

/// Recovers `eta^2 q~` from plain-amplitude boundary terms and converts it
/// to `eta^2 (q_1 - q_2)` with `recover_q`. `a_diff` is a reconstruction of
/// `eta^2 (A_1 - A_2)` (or `None` when the convection terms agree).
pub fn reconstruct_q<T: Real + FftNum>(
    pair1: &CoefficientPair,
    pair2: &CoefficientPair,
    cfg: &ReconstructionConfig,
    a_diff: Option<&[SpaceTimeField<Cplx<T>>]>,
    grid: &SpaceTimeGrid<T>,
) -> Result<QReconstruction<T>> {
    let n = grid.dim();
    let boxed = cfg.fourier_box(grid.t_final().to_f64_lossy())?;
    let omega0: Vec<T> = cfg.omega0.iter().map(|&v| T::lit(v)).collect();
    let partition = match cfg.mode {
        DataMode::FullData => None,
        DataMode::Cone => Some(BoundaryPartition::new(grid, &omega0, T::lit(cfg.eps))?),
    };
    let cut = Cutoff::new(T::lit(cfg.delta), grid.t_final())?;
    let zero_d = VectorField::zero(n);
    let results: Vec<std::result::Result<PotentialSample, (Mode, LabError)>> = cfg
        .modes(&boxed)
        .par_iter()
        .map(|m| {
            let run = || -> Result<PotentialSample> {
                let xi = boxed.xi(&m.j);
                let omega = potential_direction(&xi, cfg)?;
                let wt: Vec<T> = omega.iter().map(|&v| T::lit(v)).collect();
                let freq = Frequency { tau: boxed.tau(m.k), xi };
                let b2 = Amplitude::growing(&pair2.a, &zero_d, &wt, freq, AmplitudeShape::Plain, cut.clone(), SegmentRule::default())?;
                let bt = boundary_term(pair1, pair2, &b2, &wt, cfg.lambda, grid, partition.as_ref(), cfg.scheme)?;
                Ok(PotentialSample { k: m.k, j: m.j.clone(), omega, estimate: fourier_qtilde_hat(bt, cfg.lambda, cfg.beta, cfg.dn_norm) })
            };
            run().map_err(|e| (m.clone(), e))
        })
        .collect();
    let (samples, skipped) = split_results(results, cfg.mode)?;
    let mut coeffs = Vec::new();
    for s in &samples {
        let m = Mode { k: s.k, j: s.j.clone() };
        let c: Cplx<T> = s.estimate.value();
        if m == m.neg() {
            coeffs.push((m, Cplx::new(c.re, T::zero())));
        } else {
            coeffs.push((m.neg(), c.conj()));
            coeffs.push((m, c));
        }
    }
    let qtilde = synthesize(grid, boxed, &coeffs).map(|v| Cplx::new(v.re, T::zero()));
    let eta_sq: Vec<T> = (0..grid.ntime()).map(|k| cut.eval(grid.time(k), 0).powi(2)).collect();
    let q = match a_diff {
        Some(a) => recover_q(grid, &qtilde, a, &pair1.a, Some(&eta_sq))?.q,
        None => qtilde.clone(),
    };
    let truth = weighted_expr(grid, &Expr::sub(pair1.q.clone(), pair2.q.clone()).compile::<T>(), &cut);
    let (l2_error, l2_truth, linf_error) = vector_errors(grid, std::slice::from_ref(&q), std::slice::from_ref(&truth))?;
    Ok(QReconstruction { qtilde, q, samples, skipped, l2_error, l2_truth, linf_error })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::make_divfree_field;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mxi_identity_in_two_dimensions() {
        let s = assemble_mxi(&[0.0, 1.0], &[1.0, 0.0], 0.5, true).unwrap();
        assert_eq!(s.matrix, vec![1.0, 0.0, 0.0, 1.0]);
        assert!((s.det - 1.0).abs() < 1e-15);
    }

    #[test]
    fn mxi_diagonal_frequency() {
        let r = 0.5f64.sqrt();
        let s = assemble_mxi(&[r, r], &[r, -r], 0.5, true).unwrap();
        assert!((s.det.abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mxi_rejects_frequency_outside_cone() {
        let e = assemble_mxi(&[1.0, 0.0], &[1.0, 0.0], 0.5, true).unwrap_err();
        assert!(matches!(e, LabError::Cone(_)), "{e}");
        let e = assemble_mxi(&[1.0, 0.3], &[1.0, 0.0], 0.5, true).unwrap_err();
        assert!(matches!(e, LabError::Cone(_)), "{e}");
        assert!(assemble_mxi(&[0.0, 0.0], &[1.0, 0.0], 0.5, false).is_err());
    }

    #[test]
    fn mxi_three_dimensional_determinant_floor() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let omega0 = [0.0, 0.0, 1.0];
        let mut min_det = f64::INFINITY;
        let mut accepted = 0;
        while accepted < 100 {
            // xi nearly orthogonal to omega0 so that the cap holds an orthogonal direction
            let xi = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-0.05..0.05)];
            if let Ok(s) = assemble_mxi(&xi, &omega0, 0.5, true) {
                for d in &s.directions {
                    assert!(dotf(d, &xi).abs() <= 1e-12 * dotf(&xi, &xi).sqrt());
                    assert!(dist(d, &omega0) <= 0.25 + 1e-12);
                }
                min_det = min_det.min(s.det.abs());
                accepted += 1;
            }
        }
        assert!(min_det >= 0.1, "min det {min_det}");
    }

    #[test]
    fn component_system_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let xi = [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)];
            let sys = assemble_mxi(&xi, &[1.0, 0.0], 1.0, false).unwrap();
            let xh = normalized(&xi).unwrap();
            // div-free: A^ parallel to xi^perp
            let amp = Cplx::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let truth = [amp * -xh[1], amp * xh[0]];
            let g: Vec<Cplx<f64>> = sys.directions.iter().map(|w| truth[0] * w[0] + truth[1] * w[1]).collect();
            let sol = solve_component_system(&g, &sys).unwrap();
            for (a, b) in sol.a_hat.iter().zip(&truth) {
                assert!((a - b).norm() <= 1e-10 * amp.norm(), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn component_system_zero_and_axis() {
        let sys = assemble_mxi(&[0.0, 1.0], &[1.0, 0.0], 0.5, true).unwrap();
        let z = solve_component_system(&[Cplx::new(0.0, 0.0)], &sys).unwrap();
        assert!(z.a_hat.iter().all(|v| v.norm() == 0.0));
        let g = Cplx::new(0.3, -0.2);
        let s = solve_component_system(&[g], &sys).unwrap();
        assert_eq!(s.a_hat, vec![g, Cplx::new(0.0, 0.0)]);
    }

    #[test]
    fn estimate_degenerates_at_zero_frequency() {
        let z = Cplx::new(1.0, 0.0);
        assert!(fourier_omega_a_hat(z, z, 32.0, &[0.0, 0.0], 0.0, 0.0).is_err());
        let e = fourier_omega_a_hat(Cplx::new(0.0, 4.0), Cplx::new(0.0, 0.0), 2.0, &[0.0, 1.0], 0.0, 0.0).unwrap();
        assert!((e.re - 1.0).abs() < 1e-15 && e.im.abs() < 1e-15);
        assert!((e.lambda_term - 2f64.powf(-0.5)).abs() < 1e-15);
    }

    #[test]
    fn coupling_arithmetic() {
        let p = couple_parameters(1.0, 0.5, 2).unwrap();
        assert!((p.alpha - 18.0).abs() < 1e-12);
        assert!((p.delta - 1.0).abs() < 1e-12);
        assert!((p.lambda - 1f64.exp().powi(2)).abs() < 1e-9);
        let p = couple_parameters(4.0, 0.5, 2).unwrap();
        assert!((p.delta - 4f64.powf(-2.0 / 3.0)).abs() < 1e-12);
        let expect = 4f64.powf(18.0 + 8.0 + 4.0 / 3.0) * 8f64.exp();
        assert!((p.lambda / expect - 1.0).abs() < 1e-12);
        assert!((p.alpha_prime - 12.0).abs() < 1e-12);
        // theta -> 1 drops the exponential factor
        let p = couple_parameters(2.0, 1.0 - 1e-12, 2).unwrap();
        assert!((p.lambda / 2f64.powf(p.alpha + 8.0 + 2.0 / 3.0) - 1.0).abs() < 1e-9);
        assert!(couple_parameters(0.5, 0.5, 2).is_err());
        assert!(couple_parameters(2.0, 1.0, 2).is_err());
    }

    #[test]
    fn recover_q_matches_coefficient_relation() {
        let g = SpaceTimeGrid::<f64>::new(2, 33, 5, 1.5).unwrap();
        let a1 = make_divfree_field(&[Expr::parse("0.4*sin(pi*x1)^2*sin(pi*x2)^2").unwrap()], 2).unwrap();
        let a2 = make_divfree_field(&[Expr::parse("0.1*x1^2*(1-x1)^2*x2^2*(1-x2)^2").unwrap()], 2).unwrap();
        let (q1, q2) = (Expr::parse("1+x1*x2").unwrap(), Expr::parse("cos(x1)").unwrap());
        let p1 = CoefficientPair::new(a1.clone(), q1.clone(), 100.0);
        let p2 = CoefficientPair::new(a2.clone(), q2.clone(), 100.0);
        let qt = qtilde_difference(&p1, &p2).compile::<f64>();
        let qt_field = SpaceTimeField::sample(&g, |t, x| Cplx::new(qt.eval(t, x), 0.0));
        let d = a1.sub(&a2).compile::<f64>();
        let a: Vec<SpaceTimeField<Cplx<f64>>> = d.iter().map(|p| SpaceTimeField::sample(&g, |t, x| Cplx::new(p.eval(t, x), 0.0))).collect();
        let r = recover_q(&g, &qt_field, &a, &a1, None).unwrap();
        let dq = Expr::sub(q1, q2).compile::<f64>();
        let mut worst = 0.0f64;
        for k in 0..g.ntime() {
            for &node in g.interior() {
                let x = g.coords(node);
                worst = worst.max((r.q.at(k, node).re - dq.eval(g.time(k), &x)).abs());
            }
        }
        // the divergence is a finite difference of a div-free field
        assert!(worst < 5e-3, "worst {worst}");
        assert!(r.div_max < 5e-3);
    }

    #[test]
    fn recover_q_equal_convection_is_identity() {
        let g = SpaceTimeGrid::<f64>::new(2, 9, 3, 1.5).unwrap();
        let qt = SpaceTimeField::sample(&g, |t, x| Cplx::new(t + x[0], 0.0));
        let zero = vec![SpaceTimeField::zeros_like(&g), SpaceTimeField::zeros_like(&g)];
        let a1 = VectorField::parse(&["x2", "-x1"]).unwrap();
        let r = recover_q(&g, &qt, &zero, &a1, None).unwrap();
        assert_eq!(r.q.data(), qt.data());
    }
}
