//! Implicit finite-difference solver for `d_t w - Lap w - b . grad w + c w = s`
//! on the space-time box, the magnetic operator `L_{A,q}` and its adjoint,
//! Neumann traces and the partial DN map.

use log::warn;
use num_traits::Zero;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::expr::{Expr, Program, VAR_T};
use crate::fields::{time_reverse, CoefficientPair, VectorField};
use crate::grid::{integrate_sigma, BoundaryPartition, BoundaryTrace, SpaceTimeField, SpaceTimeGrid};
use crate::linalg::{backward_subst_adj, bicgstab, forward_subst, CsrMatrix, HermitianMatrix, Ilu0};
use crate::scalar::{Cplx, Real};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    BackwardEuler,
    CrankNicolson,
}

impl Scheme {
    pub fn theta<T: Real>(self) -> T {
        match self {
            Scheme::BackwardEuler => T::one(),
            Scheme::CrankNicolson => T::lit(0.5),
        }
    }
}

/// Lower-order coefficients of `L_{A,q} = d_t - Lap - drift . grad + zeroth`.
#[derive(Clone, Debug, PartialEq)]
pub struct Expanded {
    pub drift: VectorField,
    pub zeroth: Expr,
}

/// Expands `d_t - sum_j (d_j + A_j)^2 + q`: drift `2A`, zeroth `q - div A - |A|^2`.
pub fn expand_operator(pair: &CoefficientPair) -> Expanded {
    Expanded {
        drift: pair.a.scale(2.0),
        zeroth: Expr::sub(Expr::sub(pair.q.clone(), pair.a.divergence()), pair.a.norm_sq()),
    }
}

/// Generic problem `d_t w - Lap w - drift . grad w + zeroth w = s`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParabolicProblem {
    pub drift: VectorField,
    pub zeroth: Expr,
}

impl From<Expanded> for ParabolicProblem {
    fn from(e: Expanded) -> Self {
        ParabolicProblem { drift: e.drift, zeroth: e.zeroth }
    }
}

impl ParabolicProblem {
    pub fn for_pair(pair: &CoefficientPair) -> Self {
        expand_operator(pair).into()
    }

    /// Applies the operator to a closed-form function.
    pub fn apply_symbolic(&self, u: &Expr) -> Expr {
        let n = self.drift.dim();
        let lap = Expr::sum((0..n).map(|i| u.dx(i).dx(i)));
        let adv = Expr::sum(self.drift.comps().iter().enumerate().map(|(i, b)| Expr::mul(b.clone(), u.dx(i))));
        Expr::add(Expr::sub(Expr::sub(u.dt(), lap), adv), Expr::mul(self.zeroth.clone(), u.clone()))
    }

    fn is_time_independent(&self) -> bool {
        !self.zeroth.depends_on(VAR_T) && self.drift.comps().iter().all(|e| !e.depends_on(VAR_T))
    }
}

/// Dirichlet values at the lateral boundary nodes (in `grid.boundary()`
/// order) for every time level.
#[derive(Clone, Debug, PartialEq)]
pub struct DirichletData<T> {
    nb: usize,
    values: Vec<Cplx<T>>,
}

impl<T: Real> DirichletData<T> {
    pub fn zeros(grid: &SpaceTimeGrid<T>) -> Self {
        let nb = grid.boundary().len();
        DirichletData { nb, values: vec![Cplx::zero(); nb * grid.ntime()] }
    }

    pub fn from_fn(grid: &SpaceTimeGrid<T>, mut f: impl FnMut(T, &[T]) -> Cplx<T>) -> Self {
        let mut out = Self::zeros(grid);
        let mut x = vec![T::zero(); grid.dim()];
        for k in 0..grid.ntime() {
            let t = grid.time(k);
            for (j, b) in grid.boundary().iter().enumerate() {
                grid.coords_into(b.node, &mut x);
                out.values[k * out.nb + j] = f(t, &x);
            }
        }
        out
    }

    pub fn from_expr(grid: &SpaceTimeGrid<T>, e: &Expr) -> Self {
        let p = e.compile::<T>();
        Self::from_fn(grid, |t, x| Cplx::new(p.eval(t, x), T::zero()))
    }

    /// Boundary values of a space-time field.
    pub fn from_field(grid: &SpaceTimeGrid<T>, u: &SpaceTimeField<Cplx<T>>) -> Self {
        let mut out = Self::zeros(grid);
        for k in 0..grid.ntime() {
            for (j, b) in grid.boundary().iter().enumerate() {
                out.values[k * out.nb + j] = u.at(k, b.node);
            }
        }
        out
    }

    /// Assembles per-level boundary values.
    pub fn from_levels(grid: &SpaceTimeGrid<T>, levels: Vec<Vec<Cplx<T>>>) -> Result<Self> {
        let nb = grid.boundary().len();
        let values: Vec<Cplx<T>> = levels.into_iter().flatten().collect();
        let out = DirichletData { nb, values };
        out.check(grid)?;
        Ok(out)
    }

    pub fn add(&self, other: &Self) -> Self {
        DirichletData { nb: self.nb, values: self.values.iter().zip(&other.values).map(|(a, b)| *a + *b).collect() }
    }

    pub fn level(&self, k: usize) -> &[Cplx<T>] {
        &self.values[k * self.nb..(k + 1) * self.nb]
    }

    pub fn ntime(&self) -> usize {
        self.values.len() / self.nb.max(1)
    }

    pub fn values(&self) -> &[Cplx<T>] {
        &self.values
    }

    pub fn time_reversed(&self) -> Self {
        let nt = self.ntime();
        let mut values = Vec::with_capacity(self.values.len());
        for k in (0..nt).rev() {
            values.extend_from_slice(self.level(k));
        }
        DirichletData { nb: self.nb, values }
    }

    pub fn scaled(&self, c: Cplx<T>) -> Self {
        DirichletData { nb: self.nb, values: self.values.iter().map(|v| *v * c).collect() }
    }

    /// `max |f(0, .)|`.
    pub fn initial_size(&self) -> T {
        self.level(0).iter().fold(T::zero(), |m, v| m.max(v.norm()))
    }

    fn check(&self, grid: &SpaceTimeGrid<T>) -> Result<()> {
        if self.nb != grid.boundary().len() || self.ntime() != grid.ntime() {
            return Err(LabError::Shape { expected: grid.boundary().len() * grid.ntime(), found: self.values.len() });
        }
        Ok(())
    }
}

/// Knobs of a single solve.
#[derive(Clone, Debug)]
pub struct SolveOptions<T> {
    pub scheme: Scheme,
    pub tol: T,
    pub max_iter: usize,
    /// Testing override: nonzero initial data (never used by DN-map paths).
    pub initial: Option<Vec<Cplx<T>>>,
}

impl<T: Real> Default for SolveOptions<T> {
    fn default() -> Self {
        SolveOptions { scheme: Scheme::BackwardEuler, tol: T::lit(1e-12), max_iter: 2000, initial: None }
    }
}

impl<T: Real> SolveOptions<T> {
    pub fn with_scheme(scheme: Scheme) -> Self {
        SolveOptions { scheme, ..Default::default() }
    }
}

#[derive(Clone, Debug)]
pub struct IbvpSolution<T> {
    pub u: SpaceTimeField<Cplx<T>>,
    pub scheme: Scheme,
    /// Largest relative residual of the per-step linear systems.
    pub residual_norm: T,
}

/// Node values of the problem coefficients at one time.
struct Coeffs<T> {
    b: Vec<Vec<T>>,
    c: Vec<T>,
}

struct Compiled<T> {
    b: Vec<Program<T>>,
    c: Program<T>,
    coords: Vec<T>,
    n: usize,
}

impl<T: Real> Compiled<T> {
    fn new(grid: &SpaceTimeGrid<T>, p: &ParabolicProblem) -> Self {
        let n = grid.dim();
        let mut coords = vec![T::zero(); grid.nspace() * n];
        for node in 0..grid.nspace() {
            grid.coords_into(node, &mut coords[node * n..(node + 1) * n]);
        }
        Compiled { b: p.drift.compile(), c: p.zeroth.compile(), coords, n }
    }

    fn at(&self, t: T) -> Coeffs<T> {
        let nspace = self.coords.len() / self.n;
        let eval = |p: &Program<T>| -> Vec<T> {
            match p.as_constant() {
                Some(v) => vec![v; nspace],
                None => (0..nspace).map(|i| p.eval(t, &self.coords[i * self.n..(i + 1) * self.n])).collect(),
            }
        };
        Coeffs { b: self.b.iter().map(eval).collect(), c: eval(&self.c) }
    }
}

/// `(M u)(node) = -Lap u - b . grad u + c u` at interior nodes.
fn apply_m<T: Real>(grid: &SpaceTimeGrid<T>, co: &Coeffs<T>, u: &[Cplx<T>], out: &mut [Cplx<T>]) {
    let h = grid.hx();
    let ih2 = T::one() / (h * h);
    let i2h = T::one() / (T::lit(2.0) * h);
    for (r, &node) in grid.interior().iter().enumerate() {
        let mut acc = u[node] * (co.c[node] + T::lit(2.0 * grid.dim() as f64) * ih2);
        for a in 0..grid.dim() {
            let st = grid.stride(a);
            let (up, dn) = (u[node + st], u[node - st]);
            acc -= (up + dn) * ih2 + (up - dn) * (co.b[a][node] * i2h);
        }
        out[r] = acc;
    }
}

fn pattern<T: Real>(grid: &SpaceTimeGrid<T>) -> CsrMatrix<T> {
    let rows = grid
        .interior()
        .iter()
        .map(|&node| {
            let mut r = vec![grid.unknown(node).expect("interior")];
            for a in 0..grid.dim() {
                let st = grid.stride(a);
                for nb in [node - st, node + st] {
                    if let Some(j) = grid.unknown(nb) {
                        r.push(j);
                    }
                }
            }
            r
        })
        .collect();
    CsrMatrix::from_pattern(grid.interior().len(), rows)
}

/// Fills `I/ht + theta M` on the interior unknowns.
fn assemble<T: Real>(grid: &SpaceTimeGrid<T>, co: &Coeffs<T>, theta: T, mat: &mut CsrMatrix<T>) {
    let h = grid.hx();
    let ih2 = T::one() / (h * h);
    let i2h = T::one() / (T::lit(2.0) * h);
    let diag0 = T::lit(2.0 * grid.dim() as f64) * ih2;
    let ih_t = T::one() / grid.ht();
    for (r, &node) in grid.interior().iter().enumerate() {
        let d = mat.diag_slot(r);
        mat.vals_mut()[d] = ih_t + theta * (diag0 + co.c[node]);
        for a in 0..grid.dim() {
            let st = grid.stride(a);
            let b = co.b[a][node] * i2h;
            for (nb, coef) in [(node - st, -ih2 + b), (node + st, -ih2 - b)] {
                if let Some(j) = grid.unknown(nb) {
                    let s = mat.slot(r, j).expect("stencil in pattern");
                    mat.vals_mut()[s] = theta * coef;
                }
            }
        }
    }
}

/// Solves the generic problem with Dirichlet data on `Sigma`, zero (or
/// overridden) initial data and an optional source.
pub fn solve_problem<T: Real>(
    grid: &SpaceTimeGrid<T>,
    problem: &ParabolicProblem,
    data: &DirichletData<T>,
    source: Option<&SpaceTimeField<Cplx<T>>>,
    opts: &SolveOptions<T>,
) -> Result<IbvpSolution<T>> {
    data.check(grid)?;
    if problem.drift.dim() != grid.dim() {
        return Err(LabError::Shape { expected: grid.dim(), found: problem.drift.dim() });
    }
    if let Some(s) = source {
        s.check_grid(grid)?;
    }
    let nspace = grid.nspace();
    let nint = grid.interior().len();
    let theta: T = opts.scheme.theta();
    let ih_t = T::one() / grid.ht();
    let mut u = SpaceTimeField::<Cplx<T>>::zeros_like(grid);
    match &opts.initial {
        Some(init) => {
            if init.len() != nspace {
                return Err(LabError::Shape { expected: nspace, found: init.len() });
            }
            u.slice_mut(0).copy_from_slice(init);
        }
        None => {
            let scale = data.values().iter().fold(T::one(), |m, v| m.max(v.norm()));
            if data.initial_size() > T::lit(1e-12) * scale {
                return Err(LabError::InvalidArgument(format!(
                    "Dirichlet data must vanish at t = 0 (max |f(0)| = {})",
                    data.initial_size()
                )));
            }
        }
    }
    for (j, b) in grid.boundary().iter().enumerate() {
        u.slice_mut(0)[b.node] = data.level(0)[j];
    }

    let compiled = Compiled::new(grid, problem);
    let frozen = problem.is_time_independent();
    let mut mat = pattern(grid);
    let mut co_prev = compiled.at(grid.time(0));
    let mut co_next = if frozen { None } else { Some(compiled.at(grid.time(1))) };
    assemble(grid, co_next.as_ref().unwrap_or(&co_prev), theta, &mut mat);
    let mut ilu = Ilu0::new(&mat)?;

    let mut rhs = vec![Cplx::zero(); nint];
    let mut mu = vec![Cplx::zero(); nint];
    let mut x = vec![Cplx::zero(); nint];
    let mut x_prev = vec![Cplx::zero(); nint];
    let mut bvec = vec![Cplx::zero(); nspace];
    let mut worst = T::zero();
    for k in 0..grid.nt() {
        if k > 0 && !frozen {
            co_prev = co_next.take().expect("set each step");
            co_next = Some(compiled.at(grid.time(k + 1)));
            assemble(grid, co_next.as_ref().expect("just set"), theta, &mut mat);
            ilu = Ilu0::new(&mat)?;
        }
        let co_new = co_next.as_ref().unwrap_or(&co_prev);
        let uk = u.slice(k).to_vec();
        // explicit part
        if theta < T::one() {
            apply_m(grid, &co_prev, &uk, &mut mu);
        }
        for (r, &node) in grid.interior().iter().enumerate() {
            let mut v = uk[node] * ih_t;
            if theta < T::one() {
                v -= mu[r] * (T::one() - theta);
            }
            if let Some(s) = source {
                v += s.at(k + 1, node) * theta + s.at(k, node) * (T::one() - theta);
            }
            rhs[r] = v;
        }
        // boundary values at the new level enter through the stencil
        bvec.iter_mut().for_each(|v| *v = Cplx::zero());
        let level = data.level(k + 1);
        for (j, b) in grid.boundary().iter().enumerate() {
            bvec[b.node] = level[j];
        }
        apply_m(grid, co_new, &bvec, &mut mu);
        for (r, m) in rhs.iter_mut().zip(&mu) {
            *r -= *m * theta;
        }
        // warm start by linear extrapolation
        for (r, &node) in grid.interior().iter().enumerate() {
            let cur = uk[node];
            x[r] = if k > 0 { cur * T::lit(2.0) - x_prev[r] } else { cur };
            x_prev[r] = cur;
        }
        let stats = bicgstab(&mat, &ilu, &rhs, &mut x, opts.tol, opts.max_iter).map_err(|e| match e {
            LabError::Solver { msg, .. } => LabError::Solver { step: k + 1, msg },
            other => other,
        })?;
        worst = worst.max(stats.relative_residual);
        let next = u.slice_mut(k + 1);
        for (r, &node) in grid.interior().iter().enumerate() {
            next[node] = x[r];
        }
        for (j, b) in grid.boundary().iter().enumerate() {
            next[b.node] = level[j];
        }
    }
    Ok(IbvpSolution { u, scheme: opts.scheme, residual_norm: worst })
}

/// Solves `L_{A,q} u = 0`, `u(0) = 0`, `u = f` on `Sigma`.
pub fn solve_forward<T: Real>(
    pair: &CoefficientPair,
    f: &DirichletData<T>,
    grid: &SpaceTimeGrid<T>,
    scheme: Scheme,
) -> Result<IbvpSolution<T>> {
    solve_problem(grid, &ParabolicProblem::for_pair(pair), f, None, &SolveOptions::with_scheme(scheme))
}

/// Coefficients of the adjoint `L^*_{A,q} = L_{-A, conj q}` after `t -> T - t`.
pub fn adjoint_pair(pair: &CoefficientPair, t_final: f64) -> CoefficientPair {
    CoefficientPair {
        a: pair.a.neg().time_reversed(t_final),
        q: time_reverse(&pair.q, t_final),
        m_bound: pair.m_bound,
    }
}

/// Solves `L^*_{A,q} v = 0`, `v(T) = 0`, `v = g` on `Sigma`.
pub fn solve_adjoint<T: Real>(
    pair: &CoefficientPair,
    g: &DirichletData<T>,
    grid: &SpaceTimeGrid<T>,
    scheme: Scheme,
) -> Result<IbvpSolution<T>> {
    let rev = adjoint_pair(pair, grid.t_final().to_f64_lossy());
    let sol = solve_forward(&rev, &g.time_reversed(), grid, scheme)?;
    Ok(IbvpSolution { u: reverse_time(&sol.u), scheme, residual_norm: sol.residual_norm })
}

pub fn reverse_time<S: Copy + Zero>(u: &SpaceTimeField<S>) -> SpaceTimeField<S> {
    let mut out = SpaceTimeField::zeros(u.nspace(), u.ntime());
    let nt = u.ntime();
    for k in 0..nt {
        out.slice_mut(k).copy_from_slice(u.slice(nt - 1 - k));
    }
    out
}

/// Outward normal derivative on every face node by the second-order
/// one-sided stencil `(3 u_0 - 4 u_1 + u_2) / 2h`.
pub fn normal_derivative<T: Real>(grid: &SpaceTimeGrid<T>, u: &SpaceTimeField<Cplx<T>>) -> Result<BoundaryTrace<Cplx<T>>> {
    u.check_grid(grid)?;
    let mut out = BoundaryTrace::zeros(grid);
    let i2h = T::one() / (T::lit(2.0) * grid.hx());
    for k in 0..grid.ntime() {
        let s = u.slice(k);
        for face in grid.faces() {
            let st = grid.stride(face.axis);
            for (j, &node) in grid.face_nodes(face).iter().enumerate() {
                let (n1, n2) = if face.high { (node - st, node - 2 * st) } else { (node + st, node + 2 * st) };
                *out.get_mut(k, face, j) = (s[node] * T::lit(3.0) - s[n1] * T::lit(4.0) + s[n2]) * i2h;
            }
        }
    }
    Ok(out)
}

/// Conormal trace `d_nu u + 2 (A . nu) u` on the whole lateral boundary.
pub fn neumann_trace<T: Real>(
    grid: &SpaceTimeGrid<T>,
    u: &SpaceTimeField<Cplx<T>>,
    pair: &CoefficientPair,
) -> Result<BoundaryTrace<Cplx<T>>> {
    let mut out = normal_derivative(grid, u)?;
    if pair.a.is_zero() {
        return Ok(out);
    }
    let a = pair.a.compile::<T>();
    let mut x = vec![T::zero(); grid.dim()];
    for k in 0..grid.ntime() {
        let t = grid.time(k);
        for face in grid.faces() {
            for (j, &node) in grid.face_nodes(face).iter().enumerate() {
                grid.coords_into(node, &mut x);
                let an = a[face.axis].eval(t, &x) * face.sign::<T>();
                *out.get_mut(k, face, j) += u.at(k, node) * (T::lit(2.0) * an);
            }
        }
    }
    Ok(out)
}

/// Zeroes the faces outside the measured part `Sigma_{-, eps/2}(omega0)`.
pub fn restrict_to_measured<T: Real>(
    trace: &BoundaryTrace<Cplx<T>>,
    grid: &SpaceTimeGrid<T>,
    partition: &BoundaryPartition<T>,
) -> BoundaryTrace<Cplx<T>> {
    let mut out = trace.clone();
    for k in 0..grid.ntime() {
        for face in grid.faces().filter(|&f| partition.is_plus(f)) {
            for j in 0..grid.face_len() {
                *out.get_mut(k, face, j) = Cplx::zero();
            }
        }
    }
    out
}

/// Partial DN map: forward solve followed by the conormal trace on the
/// measured faces.
pub fn dn_apply<T: Real>(
    pair: &CoefficientPair,
    f: &DirichletData<T>,
    grid: &SpaceTimeGrid<T>,
    partition: &BoundaryPartition<T>,
    scheme: Scheme,
) -> Result<BoundaryTrace<Cplx<T>>> {
    let sol = solve_forward(pair, f, grid, scheme)?;
    let tr = neumann_trace(grid, &sol.u, pair)?;
    Ok(restrict_to_measured(&tr, grid, partition))
}

/// Smooth probe data `sin(k pi t / T) prod_i cos(l_i pi x_i)` ordered by
/// total frequency; every member vanishes at `t = 0`.
pub fn probe_family<T: Real>(grid: &SpaceTimeGrid<T>, count: usize) -> Vec<DirichletData<T>> {
    let n = grid.dim();
    let mut modes: Vec<Vec<usize>> = Vec::new();
    let mut total = 1;
    while modes.len() < count {
        let mut idx = vec![0usize; n + 1];
        enumerate_modes(total, 0, &mut idx, &mut modes);
        total += 1;
    }
    modes.truncate(count);
    let tf = grid.t_final();
    modes
        .into_iter()
        .map(|m| {
            DirichletData::from_fn(grid, |t, x| {
                let mut v = (T::PI() * T::from_usize_lossy(m[0]) * t / tf).sin();
                for i in 0..n {
                    v *= (T::PI() * T::from_usize_lossy(m[i + 1]) * x[i]).cos();
                }
                Cplx::new(v, T::zero())
            })
        })
        .collect()
}

fn enumerate_modes(total: usize, pos: usize, idx: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if pos + 1 == idx.len() {
        idx[pos] = total;
        if idx[0] >= 1 {
            out.push(idx.clone());
        }
        return;
    }
    for v in 0..=total {
        idx[pos] = v;
        enumerate_modes(total - v, pos + 1, idx, out);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DnNormEstimate {
    pub norm: f64,
    pub iters: usize,
    pub converged: bool,
    pub basis_size: usize,
}

/// Largest singular value of `Lambda_1 - Lambda_2` restricted to the span
/// of the probes, `L2(Sigma) -> L2(Sigma_-)`, by power iteration on the
/// Gram representation.
pub fn dn_diff_norm<T: Real>(
    pair1: &CoefficientPair,
    pair2: &CoefficientPair,
    grid: &SpaceTimeGrid<T>,
    partition: &BoundaryPartition<T>,
    probes: &[DirichletData<T>],
    iters: usize,
    scheme: Scheme,
) -> Result<DnNormEstimate> {
    dn_diff_norm_schemes((pair1, scheme), (pair2, scheme), grid, partition, probes, iters)
}

/// As `dn_diff_norm` with a time scheme per side; one pair under both
/// schemes measures the time-discretization floor of the map.
pub fn dn_diff_norm_schemes<T: Real>(
    (pair1, scheme1): (&CoefficientPair, Scheme),
    (pair2, scheme2): (&CoefficientPair, Scheme),
    grid: &SpaceTimeGrid<T>,
    partition: &BoundaryPartition<T>,
    probes: &[DirichletData<T>],
    iters: usize,
) -> Result<DnNormEstimate> {
    if probes.is_empty() {
        return Err(LabError::InvalidArgument("empty probe basis".into()));
    }
    let diffs: Vec<BoundaryTrace<Cplx<T>>> = probes
        .par_iter()
        .map(|f| {
            let a = dn_apply(pair1, f, grid, partition, scheme1)?;
            let b = dn_apply(pair2, f, grid, partition, scheme2)?;
            a.zip_with(&b, |x, y| x - y)
        })
        .collect::<Result<_>>()?;
    let traces: Vec<BoundaryTrace<Cplx<T>>> = probes.iter().map(|f| dirichlet_trace(grid, f)).collect();
    let m = probes.len();
    let mut g_in = HermitianMatrix::<T>::zeros(m);
    let mut g_out = HermitianMatrix::<T>::zeros(m);
    for i in 0..m {
        for j in i..m {
            let gi = integrate_sigma(grid, |_| true, |k, f, l| traces[i].get(k, f, l).conj() * traces[j].get(k, f, l));
            let go = integrate_sigma(grid, |f| partition.is_measured(f), |k, f, l| {
                diffs[i].get(k, f, l).conj() * diffs[j].get(k, f, l)
            });
            g_in.set(i, j, gi);
            g_in.set(j, i, gi.conj());
            g_out.set(i, j, go);
            g_out.set(j, i, go.conj());
        }
    }
    let l = g_in.cholesky().map_err(|_| LabError::InvalidArgument("probe basis is linearly dependent".into()))?;
    // C = L^{-1} G_out L^{-*}
    let mut c = vec![Cplx::<T>::zero(); m * m];
    for j in 0..m {
        let mut e = vec![Cplx::zero(); m];
        e[j] = Cplx::new(T::one(), T::zero());
        backward_subst_adj(&l, m, &mut e);
        let mut y: Vec<Cplx<T>> = (0..m).map(|i| (0..m).map(|k| g_out.get(i, k) * e[k]).sum()).collect();
        forward_subst(&l, m, &mut y);
        for i in 0..m {
            c[i * m + j] = y[i];
        }
    }
    let scale = c.iter().fold(T::zero(), |s, v| s.max(v.norm()));
    if scale == T::zero() {
        return Ok(DnNormEstimate { norm: 0.0, iters: 0, converged: true, basis_size: m });
    }
    let mut v = vec![Cplx::new(T::one() / T::from_usize_lossy(m).sqrt(), T::zero()); m];
    let mut mu = T::zero();
    for it in 1..=iters.max(1) {
        let w: Vec<Cplx<T>> = (0..m).map(|i| (0..m).map(|k| c[i * m + k] * v[k]).sum()).collect();
        let nrm = w.iter().map(|z| z.norm_sqr()).sum::<T>().sqrt();
        if nrm == T::zero() {
            break;
        }
        let mu_new = nrm;
        v = w.into_iter().map(|z| z / nrm).collect();
        if (mu_new - mu).abs() <= T::lit(1e-12) * mu_new {
            return Ok(DnNormEstimate { norm: mu_new.sqrt().to_f64_lossy(), iters: it, converged: true, basis_size: m });
        }
        mu = mu_new;
    }
    warn!("dn_diff_norm: power iteration not converged after {iters} iterations");
    Ok(DnNormEstimate { norm: mu.sqrt().to_f64_lossy(), iters, converged: false, basis_size: m })
}

/// Dirichlet data laid out per face like a Neumann trace.
pub fn dirichlet_trace<T: Real>(grid: &SpaceTimeGrid<T>, f: &DirichletData<T>) -> BoundaryTrace<Cplx<T>> {
    let mut slot = vec![usize::MAX; grid.nspace()];
    for (j, b) in grid.boundary().iter().enumerate() {
        slot[b.node] = j;
    }
    let mut out = BoundaryTrace::zeros(grid);
    for k in 0..grid.ntime() {
        let level = f.level(k);
        for face in grid.faces() {
            for (j, &node) in grid.face_nodes(face).iter().enumerate() {
                *out.get_mut(k, face, j) = level[slot[node]];
            }
        }
    }
    out
}
