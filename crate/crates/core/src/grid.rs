//! Space-time grid on `Q = (0,T) x (0,1)^n`, boundary faces, partitions of
//! the lateral boundary with respect to a direction, and discrete norms.

use std::fmt::Debug;
use std::ops::{Add, Mul, Sub};

use num_traits::Zero;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::expr::MAX_DIM;
use crate::scalar::{Cplx, Real};

/// Values a grid function may hold: real or complex.
pub trait FieldValue<T: Real>:
    Copy + Send + Sync + Debug + Zero + Add<Output = Self> + Sub<Output = Self> + Mul<T, Output = Self>
{
    fn abs2(self) -> T;
}

impl<T: Real> FieldValue<T> for T {
    #[inline]
    fn abs2(self) -> T {
        self * self
    }
}

impl<T: Real> FieldValue<T> for Cplx<T> {
    #[inline]
    fn abs2(self) -> T {
        self.norm_sqr()
    }
}

/// One face of the unit box: `x_axis = 0` (low) or `x_axis = 1` (high).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Face {
    pub axis: usize,
    pub high: bool,
}

impl Face {
    /// Faces are ordered `(axis, low < high)`; this is the tie-breaking order.
    pub fn index(self) -> usize {
        2 * self.axis + usize::from(self.high)
    }

    pub fn from_index(i: usize) -> Self {
        Face { axis: i / 2, high: i % 2 == 1 }
    }

    /// Outward normal component along `axis` (the only nonzero one).
    pub fn sign<T: Real>(self) -> T {
        if self.high {
            T::one()
        } else {
            -T::one()
        }
    }

    /// `nu . v` for the outward unit normal of the face.
    pub fn dot<T: Real>(self, v: &[T]) -> T {
        self.sign::<T>() * v[self.axis]
    }

    pub fn label(self) -> String {
        format!("x{}={}", self.axis + 1, u8::from(self.high))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BoundaryNode {
    pub node: usize,
    /// Face whose normal the node carries (smallest adjacent face).
    pub face: Face,
    /// Node lies on more than one face.
    pub corner: bool,
}

/// Uniform grid on `[0,T] x [0,1]^n` with `nx` points per axis and `nt`
/// time steps.
#[derive(Clone, Debug)]
pub struct SpaceTimeGrid<T> {
    n: usize,
    nx: usize,
    nt: usize,
    t_final: T,
    hx: T,
    ht: T,
    boundary: Vec<BoundaryNode>,
    interior: Vec<usize>,
    unknown_of: Vec<Option<usize>>,
    face_nodes: Vec<Vec<usize>>,
}

impl<T: Real> SpaceTimeGrid<T> {
    /// Builds the grid; `T` must exceed `diam (0,1)^n = sqrt(n)`.
    pub fn new(n: usize, nx: usize, nt: usize, t_final: T) -> Result<Self> {
        if !(2..=MAX_DIM).contains(&n) {
            return Err(LabError::Grid(format!("dimension {n} not in 2..={MAX_DIM}")));
        }
        if nx < 3 {
            return Err(LabError::Grid(format!("need at least 3 points per axis, got {nx}")));
        }
        if nt < 2 {
            return Err(LabError::Grid(format!("need at least 2 time steps, got {nt}")));
        }
        let diam = T::from_usize_lossy(n).sqrt();
        if !(t_final > diam) {
            return Err(LabError::Grid(format!(
                "final time {t_final} must exceed diam(Omega) = {diam}"
            )));
        }
        let nspace = nx.pow(n as u32);
        let mut boundary = Vec::new();
        let mut interior = Vec::new();
        let mut unknown_of = vec![None; nspace];
        let mut idx = vec![0usize; n];
        for node in 0..nspace {
            decompose(node, nx, &mut idx);
            let faces: Vec<Face> = (0..n)
                .flat_map(|a| {
                    let mut f = Vec::new();
                    if idx[a] == 0 {
                        f.push(Face { axis: a, high: false });
                    }
                    if idx[a] == nx - 1 {
                        f.push(Face { axis: a, high: true });
                    }
                    f
                })
                .collect();
            if faces.is_empty() {
                unknown_of[node] = Some(interior.len());
                interior.push(node);
            } else {
                let face = *faces.iter().min().expect("nonempty");
                boundary.push(BoundaryNode { node, face, corner: faces.len() > 1 });
            }
        }
        let mut face_nodes = vec![Vec::new(); 2 * n];
        for node in 0..nspace {
            decompose(node, nx, &mut idx);
            for a in 0..n {
                if idx[a] == 0 {
                    face_nodes[Face { axis: a, high: false }.index()].push(node);
                }
                if idx[a] == nx - 1 {
                    face_nodes[Face { axis: a, high: true }.index()].push(node);
                }
            }
        }
        Ok(SpaceTimeGrid {
            n,
            nx,
            nt,
            t_final,
            hx: T::one() / T::from_usize_lossy(nx - 1),
            ht: t_final / T::from_usize_lossy(nt),
            boundary,
            interior,
            unknown_of,
            face_nodes,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }
    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn nt(&self) -> usize {
        self.nt
    }
    pub fn t_final(&self) -> T {
        self.t_final
    }
    pub fn hx(&self) -> T {
        self.hx
    }
    pub fn ht(&self) -> T {
        self.ht
    }
    pub fn diam(&self) -> T {
        T::from_usize_lossy(self.n).sqrt()
    }
    /// Number of spatial nodes `nx^n`.
    pub fn nspace(&self) -> usize {
        self.unknown_of.len()
    }
    /// Number of time levels `nt + 1`.
    pub fn ntime(&self) -> usize {
        self.nt + 1
    }
    pub fn time(&self, k: usize) -> T {
        T::from_usize_lossy(k) * self.ht
    }
    pub fn boundary(&self) -> &[BoundaryNode] {
        &self.boundary
    }
    pub fn interior(&self) -> &[usize] {
        &self.interior
    }
    /// Unknown index of an interior node.
    pub fn unknown(&self, node: usize) -> Option<usize> {
        self.unknown_of[node]
    }
    pub fn faces(&self) -> impl Iterator<Item = Face> + '_ {
        (0..2 * self.n).map(Face::from_index)
    }
    /// All nodes of a face, edges included, in lexicographic order.
    pub fn face_nodes(&self, face: Face) -> &[usize] {
        &self.face_nodes[face.index()]
    }
    pub fn face_len(&self) -> usize {
        self.nx.pow(self.n as u32 - 1)
    }
    /// Linear stride of `axis`.
    pub fn stride(&self, axis: usize) -> usize {
        self.nx.pow(axis as u32)
    }

    pub fn multi_index(&self, node: usize) -> Vec<usize> {
        let mut idx = vec![0; self.n];
        decompose(node, self.nx, &mut idx);
        idx
    }

    pub fn coords_into(&self, node: usize, out: &mut [T]) {
        let mut r = node;
        for o in out.iter_mut().take(self.n) {
            *o = T::from_usize_lossy(r % self.nx) * self.hx;
            r /= self.nx;
        }
    }

    pub fn coords(&self, node: usize) -> Vec<T> {
        let mut x = vec![T::zero(); self.n];
        self.coords_into(node, &mut x);
        x
    }

    /// Trapezoid weight of a node in `(0,1)^n`.
    pub fn space_weight(&self, node: usize) -> T {
        let mut w = T::one();
        let mut r = node;
        for _ in 0..self.n {
            w *= edge_weight(r % self.nx, self.nx, self.hx);
            r /= self.nx;
        }
        w
    }

    /// Trapezoid weight of the `j`-th node of a face in the face's own
    /// `(n-1)`-dimensional measure.
    pub fn face_weight(&self, face: Face, node: usize) -> T {
        let mut w = T::one();
        let mut r = node;
        for a in 0..self.n {
            if a != face.axis {
                w *= edge_weight(r % self.nx, self.nx, self.hx);
            }
            r /= self.nx;
        }
        w
    }

    /// Trapezoid weight of time level `k`.
    pub fn time_weight(&self, k: usize) -> T {
        edge_weight(k, self.nt + 1, self.ht)
    }

    /// Rows for exporting normals: node, coordinates, normal, face, corner flag.
    pub fn normal_rows(&self) -> Vec<(usize, Vec<T>, Vec<T>, Face, bool)> {
        self.boundary
            .iter()
            .map(|b| {
                let mut nu = vec![T::zero(); self.n];
                nu[b.face.axis] = b.face.sign();
                (b.node, self.coords(b.node), nu, b.face, b.corner)
            })
            .collect()
    }
}

fn edge_weight<T: Real>(i: usize, npts: usize, h: T) -> T {
    if i == 0 || i + 1 == npts {
        h * T::lit(0.5)
    } else {
        h
    }
}

fn decompose(node: usize, nx: usize, idx: &mut [usize]) {
    let mut r = node;
    for v in idx.iter_mut() {
        *v = r % nx;
        r /= nx;
    }
}

pub(crate) fn check_unit<T: Real>(omega: &[T], tol: f64) -> Result<()> {
    let norm = omega.iter().map(|&w| w * w).sum::<T>().sqrt();
    if (norm - T::one()).abs().to_f64_lossy() > tol {
        return Err(LabError::NotUnit { norm: norm.to_f64_lossy() });
    }
    Ok(())
}

/// Split of the lateral boundary into the part near the shadowed face
/// (`nu . omega0 > eps/2`, no measurements) and the measured remainder.
#[derive(Clone, Debug)]
pub struct BoundaryPartition<T> {
    pub omega0: Vec<T>,
    pub eps: T,
    /// Node-level split using each boundary node's assigned normal.
    pub plus_nodes: Vec<usize>,
    pub minus_nodes: Vec<usize>,
    /// Face-level split used for boundary quadrature.
    face_plus: Vec<bool>,
}

impl<T: Real> BoundaryPartition<T> {
    pub fn new(grid: &SpaceTimeGrid<T>, omega0: &[T], eps: T) -> Result<Self> {
        if omega0.len() != grid.dim() {
            return Err(LabError::Shape { expected: grid.dim(), found: omega0.len() });
        }
        check_unit(omega0, 1e-12)?;
        if !(eps > T::zero() && eps < T::lit(2.0)) {
            return Err(LabError::InvalidArgument(format!("eps = {eps} must lie in (0, 2)")));
        }
        let half = eps * T::lit(0.5);
        let face_plus: Vec<bool> = grid.faces().map(|f| f.dot(omega0) > half).collect();
        let (mut plus_nodes, mut minus_nodes) = (Vec::new(), Vec::new());
        for b in grid.boundary() {
            if face_plus[b.face.index()] {
                plus_nodes.push(b.node);
            } else {
                minus_nodes.push(b.node);
            }
        }
        Ok(BoundaryPartition { omega0: omega0.to_vec(), eps, plus_nodes, minus_nodes, face_plus })
    }

    /// Every face measured (`Sigma_- = Sigma`); `omega0` is `e_1` and `eps = 2`.
    pub fn full(grid: &SpaceTimeGrid<T>) -> Self {
        let mut omega0 = vec![T::zero(); grid.dim()];
        omega0[0] = T::one();
        let minus_nodes = grid.boundary().iter().map(|b| b.node).collect();
        BoundaryPartition { omega0, eps: T::lit(2.0), plus_nodes: Vec::new(), minus_nodes, face_plus: vec![false; 2 * grid.dim()] }
    }

    /// Face lies in the unmeasured part `nu . omega0 > eps/2`.
    pub fn is_plus(&self, face: Face) -> bool {
        self.face_plus[face.index()]
    }

    pub fn is_measured(&self, face: Face) -> bool {
        !self.is_plus(face)
    }

    pub fn tag(&self, node: usize) -> &'static str {
        if self.plus_nodes.binary_search(&node).is_ok() {
            "plus"
        } else {
            "minus"
        }
    }
}

/// Grid function on all space-time nodes, time-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SpaceTimeField<S> {
    nspace: usize,
    ntime: usize,
    data: Vec<S>,
}

impl<S: Copy + Zero> SpaceTimeField<S> {
    pub fn zeros(nspace: usize, ntime: usize) -> Self {
        SpaceTimeField { nspace, ntime, data: vec![S::zero(); nspace * ntime] }
    }

    pub fn zeros_like<T: Real>(grid: &SpaceTimeGrid<T>) -> Self {
        Self::zeros(grid.nspace(), grid.ntime())
    }

    pub fn from_vec(nspace: usize, ntime: usize, data: Vec<S>) -> Result<Self> {
        if data.len() != nspace * ntime {
            return Err(LabError::Shape { expected: nspace * ntime, found: data.len() });
        }
        Ok(SpaceTimeField { nspace, ntime, data })
    }

    /// Samples `f(t, x)` at every node.
    pub fn sample<T: Real>(grid: &SpaceTimeGrid<T>, mut f: impl FnMut(T, &[T]) -> S) -> Self {
        let mut out = Self::zeros_like(grid);
        let mut x = vec![T::zero(); grid.dim()];
        for k in 0..grid.ntime() {
            let t = grid.time(k);
            let slice = out.slice_mut(k);
            for (node, v) in slice.iter_mut().enumerate() {
                grid.coords_into(node, &mut x);
                *v = f(t, &x);
            }
        }
        out
    }

    pub fn nspace(&self) -> usize {
        self.nspace
    }
    pub fn ntime(&self) -> usize {
        self.ntime
    }
    pub fn slice(&self, k: usize) -> &[S] {
        &self.data[k * self.nspace..(k + 1) * self.nspace]
    }
    pub fn slice_mut(&mut self, k: usize) -> &mut [S] {
        &mut self.data[k * self.nspace..(k + 1) * self.nspace]
    }
    pub fn at(&self, k: usize, node: usize) -> S {
        self.data[k * self.nspace + node]
    }
    pub fn data(&self) -> &[S] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn map<R: Copy + Zero>(&self, f: impl Fn(S) -> R) -> SpaceTimeField<R> {
        SpaceTimeField { nspace: self.nspace, ntime: self.ntime, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_with<R: Copy + Zero>(&self, other: &Self, f: impl Fn(S, S) -> R) -> Result<SpaceTimeField<R>> {
        self.check_same(other)?;
        Ok(SpaceTimeField {
            nspace: self.nspace,
            ntime: self.ntime,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn check_same<R>(&self, other: &SpaceTimeField<R>) -> Result<()> {
        if self.nspace != other.nspace || self.ntime != other.ntime {
            return Err(LabError::Shape {
                expected: self.nspace * self.ntime,
                found: other.nspace * other.ntime,
            });
        }
        Ok(())
    }

    pub fn check_grid<T: Real>(&self, grid: &SpaceTimeGrid<T>) -> Result<()> {
        if self.nspace != grid.nspace() || self.ntime != grid.ntime() {
            return Err(LabError::Shape {
                expected: grid.nspace() * grid.ntime(),
                found: self.nspace * self.ntime,
            });
        }
        Ok(())
    }
}

/// Per-face boundary values at every time level (edges included).
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryTrace<S> {
    nfaces: usize,
    face_len: usize,
    ntime: usize,
    data: Vec<S>,
}

impl<S: Copy + Zero> BoundaryTrace<S> {
    pub fn zeros<T: Real>(grid: &SpaceTimeGrid<T>) -> Self {
        let nfaces = 2 * grid.dim();
        let face_len = grid.face_len();
        BoundaryTrace { nfaces, face_len, ntime: grid.ntime(), data: vec![S::zero(); nfaces * face_len * grid.ntime()] }
    }

    /// Samples `f(t, x, face)` on every face node.
    pub fn sample<T: Real>(grid: &SpaceTimeGrid<T>, mut f: impl FnMut(T, &[T], Face) -> S) -> Self {
        let mut out = Self::zeros(grid);
        let mut x = vec![T::zero(); grid.dim()];
        for k in 0..grid.ntime() {
            let t = grid.time(k);
            for face in grid.faces() {
                for (j, &node) in grid.face_nodes(face).iter().enumerate() {
                    grid.coords_into(node, &mut x);
                    *out.get_mut(k, face, j) = f(t, &x, face);
                }
            }
        }
        out
    }

    /// Restriction of a space-time field to the faces.
    pub fn from_field<T: Real>(grid: &SpaceTimeGrid<T>, field: &SpaceTimeField<S>) -> Self {
        let mut out = Self::zeros(grid);
        for k in 0..grid.ntime() {
            let s = field.slice(k);
            for face in grid.faces() {
                for (j, &node) in grid.face_nodes(face).iter().enumerate() {
                    *out.get_mut(k, face, j) = s[node];
                }
            }
        }
        out
    }

    #[inline]
    fn offset(&self, k: usize, face: Face, j: usize) -> usize {
        (k * self.nfaces + face.index()) * self.face_len + j
    }
    #[inline]
    pub fn get(&self, k: usize, face: Face, j: usize) -> S {
        self.data[self.offset(k, face, j)]
    }
    #[inline]
    pub fn get_mut(&mut self, k: usize, face: Face, j: usize) -> &mut S {
        let o = self.offset(k, face, j);
        &mut self.data[o]
    }
    pub fn ntime(&self) -> usize {
        self.ntime
    }
    pub fn face_len(&self) -> usize {
        self.face_len
    }
    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(S, S) -> S) -> Result<Self> {
        if self.data.len() != other.data.len() {
            return Err(LabError::Shape { expected: self.data.len(), found: other.data.len() });
        }
        let mut out = self.clone();
        for (o, &b) in out.data.iter_mut().zip(&other.data) {
            *o = f(*o, b);
        }
        Ok(out)
    }
}

impl<S> BoundaryTrace<S> {
    pub fn map<R>(&self, f: impl Fn(&S) -> R) -> BoundaryTrace<R> {
        BoundaryTrace {
            nfaces: self.nfaces,
            face_len: self.face_len,
            ntime: self.ntime,
            data: self.data.iter().map(f).collect(),
        }
    }
}

/// Integral over `Sigma` (or the faces selected by `mask`) of `f(k, face, j)`
/// with trapezoid weights in time and along each face.
pub fn integrate_sigma<T: Real, S>(
    grid: &SpaceTimeGrid<T>,
    mask: impl Fn(Face) -> bool,
    mut f: impl FnMut(usize, Face, usize) -> S,
) -> S
where
    S: Zero + Mul<T, Output = S> + Copy,
{
    let mut acc = S::zero();
    for k in 0..grid.ntime() {
        let wt = grid.time_weight(k);
        for face in grid.faces().filter(|&f| mask(f)) {
            for (j, &node) in grid.face_nodes(face).iter().enumerate() {
                acc = acc + f(k, face, j) * (wt * grid.face_weight(face, node));
            }
        }
    }
    acc
}

/// Integral over `Q` of `f(k, node)` with trapezoid weights.
pub fn integrate_q<T: Real, S>(grid: &SpaceTimeGrid<T>, mut f: impl FnMut(usize, usize) -> S) -> S
where
    S: Zero + Mul<T, Output = S> + Copy,
{
    let weights: Vec<T> = (0..grid.nspace()).map(|i| grid.space_weight(i)).collect();
    let mut acc = S::zero();
    for k in 0..grid.ntime() {
        let wt = grid.time_weight(k);
        let mut slab = S::zero();
        for (node, &w) in weights.iter().enumerate() {
            slab = slab + f(k, node) * w;
        }
        acc = acc + slab * wt;
    }
    acc
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormKind {
    /// `L2(Q)`.
    L2Q,
    /// `L2(Sigma)` of the lateral trace.
    L2Sigma,
    /// `L2(0,T; H1(Omega))`.
    H1Q,
    Linf,
}

/// Discrete norm of a grid function using trapezoid quadrature.
pub fn discrete_norm<T: Real, S: FieldValue<T>>(
    grid: &SpaceTimeGrid<T>,
    field: &SpaceTimeField<S>,
    kind: NormKind,
) -> Result<T> {
    field.check_grid(grid)?;
    Ok(match kind {
        NormKind::L2Q => integrate_q(grid, |k, i| field.at(k, i).abs2()).sqrt(),
        NormKind::L2Sigma => {
            let tr = BoundaryTrace::from_field(grid, field);
            integrate_sigma(grid, |_| true, |k, f, j| tr.get(k, f, j).abs2()).sqrt()
        }
        NormKind::H1Q => {
            let l2 = integrate_q(grid, |k, i| field.at(k, i).abs2());
            let mut grad2 = SpaceTimeField::<T>::zeros_like(grid);
            for k in 0..grid.ntime() {
                let g = gradient_sq(grid, field.slice(k));
                grad2.slice_mut(k).copy_from_slice(&g);
            }
            (l2 + integrate_q(grid, |k, i| grad2.at(k, i))).sqrt()
        }
        NormKind::Linf => field.data().iter().fold(T::zero(), |m, v| m.max(v.abs2().sqrt())),
    })
}

/// `|grad u|^2` at every node: central differences inside, second-order
/// one-sided stencils on the faces.
pub fn gradient_sq<T: Real, S: FieldValue<T>>(grid: &SpaceTimeGrid<T>, u: &[S]) -> Vec<T> {
    let mut out = vec![T::zero(); u.len()];
    for axis in 0..grid.dim() {
        let d = partial(grid, u, axis);
        for (o, v) in out.iter_mut().zip(d) {
            *o += v.abs2();
        }
    }
    out
}

/// Second-order finite-difference partial derivative along `axis`.
pub fn partial<T: Real, S: FieldValue<T>>(grid: &SpaceTimeGrid<T>, u: &[S], axis: usize) -> Vec<S> {
    let nx = grid.nx();
    let st = grid.stride(axis);
    let inv2h = T::one() / (T::lit(2.0) * grid.hx());
    (0..u.len())
        .map(|node| {
            let i = (node / st) % nx;
            if i == 0 {
                (u[node + st] * T::lit(4.0) - u[node] * T::lit(3.0) - u[node + 2 * st]) * inv2h
            } else if i == nx - 1 {
                (u[node] * T::lit(3.0) - u[node - st] * T::lit(4.0) + u[node - 2 * st]) * inv2h
            } else {
                (u[node + st] - u[node - st]) * inv2h
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_grid_spacings() {
        let g = SpaceTimeGrid::<f64>::new(2, 3, 2, 2.0).unwrap();
        assert_eq!(g.hx(), 0.5);
        assert_eq!(g.ht(), 1.0);
        assert_eq!(g.nspace(), 9);
        assert_eq!(g.interior(), &[4]);
        assert_eq!(g.boundary().len(), 8);
    }

    #[test]
    fn final_time_must_exceed_diameter() {
        assert!(SpaceTimeGrid::<f64>::new(2, 33, 64, 1.5).is_ok());
        assert!(2f64.sqrt() < 1.5);
        assert!(matches!(SpaceTimeGrid::<f64>::new(2, 33, 64, 1.0), Err(LabError::Grid(_))));
        assert!(SpaceTimeGrid::<f64>::new(3, 5, 4, 1.7).is_err());
        assert!(SpaceTimeGrid::<f64>::new(2, 2, 4, 2.0).is_err());
        assert!(SpaceTimeGrid::<f64>::new(2, 5, 1, 2.0).is_err());
        assert!(SpaceTimeGrid::<f64>::new(1, 5, 4, 2.0).is_err());
    }

    #[test]
    fn corners_take_smallest_face() {
        let g = SpaceTimeGrid::<f64>::new(2, 5, 4, 2.0).unwrap();
        let corner = g.boundary().iter().find(|b| b.node == 4).unwrap();
        assert!(corner.corner);
        assert_eq!(corner.face, Face { axis: 0, high: true });
        let origin = g.boundary().iter().find(|b| b.node == 0).unwrap();
        assert_eq!(origin.face, Face { axis: 0, high: false });
        let edge = g.boundary().iter().find(|b| b.node == 2).unwrap();
        assert!(!edge.corner);
        assert_eq!(edge.face, Face { axis: 1, high: false });
    }

    fn plus_faces(g: &SpaceTimeGrid<f64>, p: &BoundaryPartition<f64>) -> Vec<Face> {
        g.faces().filter(|&f| p.is_plus(f)).collect()
    }

    #[test]
    fn partitions_of_unit_square() {
        let g = SpaceTimeGrid::<f64>::new(2, 9, 4, 2.0).unwrap();
        let p = BoundaryPartition::new(&g, &[1.0, 0.0], 0.5).unwrap();
        assert_eq!(plus_faces(&g, &p), vec![Face { axis: 0, high: true }]);
        for b in g.boundary() {
            let on_x1_eq_1 = g.multi_index(b.node)[0] == 8;
            assert_eq!(p.plus_nodes.contains(&b.node), on_x1_eq_1 && b.face.axis == 0);
        }
        assert_eq!(p.plus_nodes.len() + p.minus_nodes.len(), g.boundary().len());

        let p = BoundaryPartition::new(&g, &[0.0, 1.0], 0.5).unwrap();
        assert_eq!(plus_faces(&g, &p), vec![Face { axis: 1, high: true }]);

        let s = 0.5f64.sqrt();
        let p = BoundaryPartition::new(&g, &[s, s], 0.1).unwrap();
        assert_eq!(plus_faces(&g, &p), vec![Face { axis: 0, high: true }, Face { axis: 1, high: true }]);

        assert!(matches!(BoundaryPartition::new(&g, &[1.0, 0.1], 0.5), Err(LabError::NotUnit { .. })));
        assert!(BoundaryPartition::new(&g, &[1.0, 0.0], 2.0).is_err());
    }

    #[test]
    fn tie_goes_to_minus() {
        let g = SpaceTimeGrid::<f64>::new(2, 5, 4, 2.0).unwrap();
        // nu . omega0 = 0.5 = eps/2 on the face x1 = 1
        let w = [0.5, (0.75f64).sqrt()];
        let p = BoundaryPartition::new(&g, &w, 1.0).unwrap();
        assert!(!p.is_plus(Face { axis: 0, high: true }));
        assert!(p.is_plus(Face { axis: 1, high: true }));
    }

    #[test]
    fn norms_of_simple_fields() {
        let g = SpaceTimeGrid::<f64>::new(2, 9, 8, 2.0).unwrap();
        let zero = SpaceTimeField::<f64>::zeros_like(&g);
        for kind in [NormKind::L2Q, NormKind::L2Sigma, NormKind::H1Q, NormKind::Linf] {
            assert_eq!(discrete_norm(&g, &zero, kind).unwrap(), 0.0);
        }
        let one = SpaceTimeField::sample(&g, |_, _| 1.0f64);
        assert!((discrete_norm(&g, &one, NormKind::L2Q).unwrap() - 2f64.sqrt()).abs() < 1e-14);
        // |Sigma| = T * perimeter = 8
        assert!((discrete_norm(&g, &one, NormKind::L2Sigma).unwrap() - 8f64.sqrt()).abs() < 1e-13);
        assert!((discrete_norm(&g, &one, NormKind::H1Q).unwrap() - 2f64.sqrt()).abs() < 1e-13);
        let other = SpaceTimeField::<f64>::zeros(10, 3);
        assert!(discrete_norm(&g, &other, NormKind::L2Q).is_err());
    }

    #[test]
    fn sine_norm_converges_to_closed_form() {
        // int_0^1 int_0^1 sin^2(pi x1) dx dt = 1/2 on T = 1 (T only enters as a factor)
        let exact = (0.5f64 * 1.5).sqrt();
        let mut errs = Vec::new();
        for nx in [9, 17, 33, 65] {
            let g = SpaceTimeGrid::<f64>::new(2, nx, 8, 1.5).unwrap();
            let f = SpaceTimeField::sample(&g, |_, x| (std::f64::consts::PI * x[0]).sin());
            errs.push((discrete_norm(&g, &f, NormKind::L2Q).unwrap() - exact).abs());
        }
        for w in errs.windows(2) {
            assert!(w[0] / w[1] > 3.5 || w[1] < 1e-14, "{errs:?}");
        }
    }

    #[test]
    fn one_sided_derivative_exact_for_quadratics() {
        let g = SpaceTimeGrid::<f64>::new(2, 7, 2, 2.0).unwrap();
        let u: Vec<f64> = (0..g.nspace()).map(|i| g.coords(i)[0].powi(2)).collect();
        let d = partial(&g, &u, 0);
        for (i, v) in d.iter().enumerate() {
            assert!((v - 2.0 * g.coords(i)[0]).abs() < 1e-12);
        }
    }
}
