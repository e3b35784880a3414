//! Sparse real matrices acting on complex vectors, ILU(0) and BiCGSTAB, plus
//! small dense Hermitian helpers.

use num_traits::Zero;

use crate::error::{LabError, Result};
use crate::scalar::{Cplx, Real};

/// Compressed sparse row matrix with sorted column indices per row.
#[derive(Clone, Debug)]
pub struct CsrMatrix<T> {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<T>,
    diag: Vec<usize>,
}

impl<T: Real> CsrMatrix<T> {
    /// Builds from a fixed sparsity pattern; values start at zero.
    pub fn from_pattern(n: usize, mut rows: Vec<Vec<usize>>) -> Self {
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut diag = Vec::with_capacity(n);
        row_ptr.push(0);
        for (i, r) in rows.iter_mut().enumerate() {
            if !r.contains(&i) {
                r.push(i);
            }
            r.sort_unstable();
            r.dedup();
            diag.push(cols.len() + r.iter().position(|&c| c == i).expect("diagonal present"));
            cols.extend_from_slice(r);
            row_ptr.push(cols.len());
        }
        let nnz = cols.len();
        CsrMatrix { n, row_ptr, cols, vals: vec![T::zero(); nnz], diag }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> std::ops::Range<usize> {
        self.row_ptr[i]..self.row_ptr[i + 1]
    }

    pub fn cols(&self) -> &[usize] {
        &self.cols
    }

    pub fn vals_mut(&mut self) -> &mut [T] {
        &mut self.vals
    }

    pub fn diag_slot(&self, i: usize) -> usize {
        self.diag[i]
    }

    /// Slot of entry `(i, j)`, if in the pattern.
    pub fn slot(&self, i: usize, j: usize) -> Option<usize> {
        let r = self.row(i);
        self.cols[r.clone()].binary_search(&j).ok().map(|p| r.start + p)
    }

    pub fn matvec(&self, x: &[Cplx<T>], y: &mut [Cplx<T>]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = Cplx::zero();
            for p in self.row(i) {
                acc += x[self.cols[p]] * self.vals[p];
            }
            *yi = acc;
        }
    }
}

/// Incomplete LU factorization with the sparsity of the matrix.
#[derive(Clone, Debug)]
pub struct Ilu0<T> {
    lu: CsrMatrix<T>,
}

impl<T: Real> Ilu0<T> {
    pub fn new(a: &CsrMatrix<T>) -> Result<Self> {
        let mut lu = a.clone();
        for i in 0..lu.n {
            let r = lu.row(i);
            for p in r.clone() {
                let k = lu.cols[p];
                if k >= i {
                    break;
                }
                let pivot = lu.vals[lu.diag[k]];
                if pivot == T::zero() {
                    return Err(LabError::Solver { step: 0, msg: format!("zero pivot in ILU(0) at row {k}") });
                }
                let lik = lu.vals[p] / pivot;
                lu.vals[p] = lik;
                // a_ij -= l_ik u_kj for j > k present in both rows
                let mut q = lu.diag[k] + 1;
                let kend = lu.row_ptr[k + 1];
                for s in (p + 1)..r.end {
                    let j = lu.cols[s];
                    while q < kend && lu.cols[q] < j {
                        q += 1;
                    }
                    if q < kend && lu.cols[q] == j {
                        let ukj = lu.vals[q];
                        lu.vals[s] -= lik * ukj;
                    }
                }
            }
        }
        Ok(Ilu0 { lu })
    }

    /// Solves `L U z = r` in place.
    pub fn apply(&self, z: &mut [Cplx<T>]) {
        let lu = &self.lu;
        for i in 0..lu.n {
            let mut acc = z[i];
            for p in lu.row_ptr[i]..lu.diag[i] {
                acc -= z[lu.cols[p]] * lu.vals[p];
            }
            z[i] = acc;
        }
        for i in (0..lu.n).rev() {
            let mut acc = z[i];
            for p in (lu.diag[i] + 1)..lu.row_ptr[i + 1] {
                acc -= z[lu.cols[p]] * lu.vals[p];
            }
            z[i] = acc / lu.vals[lu.diag[i]];
        }
    }
}

fn dotc<T: Real>(a: &[Cplx<T>], b: &[Cplx<T>]) -> Cplx<T> {
    a.iter().zip(b).fold(Cplx::zero(), |acc, (x, y)| acc + x.conj() * y)
}

fn norm<T: Real>(a: &[Cplx<T>]) -> T {
    a.iter().map(|v| v.norm_sqr()).sum::<T>().sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveStats<T> {
    pub iterations: usize,
    pub relative_residual: T,
}

/// Right-preconditioned BiCGSTAB; `x` holds the initial guess on entry.
pub fn bicgstab<T: Real>(
    a: &CsrMatrix<T>,
    m: &Ilu0<T>,
    b: &[Cplx<T>],
    x: &mut [Cplx<T>],
    tol: T,
    max_iter: usize,
) -> Result<SolveStats<T>> {
    // Rescale so that tiny right-hand sides do not underflow inside the inner products.
    let scale = b.iter().fold(T::zero(), |m, v| m.max(v.re.abs()).max(v.im.abs()));
    if scale == T::zero() {
        x.iter_mut().for_each(|v| *v = Cplx::zero());
        return Ok(SolveStats { iterations: 0, relative_residual: T::zero() });
    }
    let bs: Vec<Cplx<T>> = b.iter().map(|v| *v / scale).collect();
    x.iter_mut().for_each(|v| *v = *v / scale);
    let out = bicgstab_scaled(a, m, &bs, x, tol, max_iter);
    x.iter_mut().for_each(|v| *v = *v * scale);
    out
}

fn bicgstab_scaled<T: Real>(
    a: &CsrMatrix<T>,
    m: &Ilu0<T>,
    b: &[Cplx<T>],
    x: &mut [Cplx<T>],
    tol: T,
    max_iter: usize,
) -> Result<SolveStats<T>> {
    let n = a.dim();
    let bnorm = norm(b);
    let mut r = vec![Cplx::zero(); n];
    a.matvec(x, &mut r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = *bi - *ri;
    }
    let mut res = norm(&r) / bnorm;
    if res <= tol {
        return Ok(SolveStats { iterations: 0, relative_residual: res });
    }
    let r0 = r.clone();
    let mut p = vec![Cplx::zero(); n];
    let mut v = vec![Cplx::zero(); n];
    let mut phat = vec![Cplx::zero(); n];
    let mut shat = vec![Cplx::zero(); n];
    let mut s = vec![Cplx::zero(); n];
    let mut t = vec![Cplx::zero(); n];
    let (mut rho, mut alpha, mut omega) = (Cplx::<T>::new(T::one(), T::zero()), Cplx::new(T::one(), T::zero()), Cplx::new(T::one(), T::zero()));
    for it in 1..=max_iter {
        let rho_new = dotc(&r0, &r);
        if rho_new.norm() == T::zero() || omega.norm() == T::zero() {
            return Err(LabError::Solver { step: 0, msg: format!("BiCGSTAB breakdown after {it} iterations (residual {res})") });
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        phat.copy_from_slice(&p);
        m.apply(&mut phat);
        a.matvec(&phat, &mut v);
        alpha = rho / dotc(&r0, &v);
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if norm(&s) / bnorm <= tol {
            for i in 0..n {
                x[i] += alpha * phat[i];
            }
            return Ok(SolveStats { iterations: it, relative_residual: norm(&s) / bnorm });
        }
        shat.copy_from_slice(&s);
        m.apply(&mut shat);
        a.matvec(&shat, &mut t);
        let tt = dotc(&t, &t);
        omega = dotc(&t, &s) / tt;
        for i in 0..n {
            x[i] += alpha * phat[i] + omega * shat[i];
            r[i] = s[i] - omega * t[i];
        }
        res = norm(&r) / bnorm;
        if res <= tol {
            return Ok(SolveStats { iterations: it, relative_residual: res });
        }
    }
    Err(LabError::Solver { step: 0, msg: format!("BiCGSTAB did not converge in {max_iter} iterations (residual {res})") })
}

/// Dense Hermitian positive definite matrix, row-major.
#[derive(Clone, Debug)]
pub struct HermitianMatrix<T> {
    pub n: usize,
    pub a: Vec<Cplx<T>>,
}

impl<T: Real> HermitianMatrix<T> {
    pub fn zeros(n: usize) -> Self {
        HermitianMatrix { n, a: vec![Cplx::zero(); n * n] }
    }

    pub fn get(&self, i: usize, j: usize) -> Cplx<T> {
        self.a[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: Cplx<T>) {
        self.a[i * self.n + j] = v;
    }

    /// Lower Cholesky factor `L` with `A = L L^*`.
    pub fn cholesky(&self) -> Result<Vec<Cplx<T>>> {
        let n = self.n;
        let mut l = vec![Cplx::zero(); n * n];
        for j in 0..n {
            let mut d = self.get(j, j).re;
            for k in 0..j {
                d -= l[j * n + k].norm_sqr();
            }
            if !(d > T::zero()) {
                return Err(LabError::InvalidArgument(format!("matrix not positive definite at pivot {j}")));
            }
            let d = d.sqrt();
            l[j * n + j] = Cplx::new(d, T::zero());
            for i in (j + 1)..n {
                let mut s = self.get(i, j);
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k].conj();
                }
                l[i * n + j] = s / d;
            }
        }
        Ok(l)
    }
}

/// Solves `L y = b` for lower triangular `L` (row-major, `n x n`).
pub fn forward_subst<T: Real>(l: &[Cplx<T>], n: usize, b: &mut [Cplx<T>]) {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// Solves `L^* x = b`.
pub fn backward_subst_adj<T: Real>(l: &[Cplx<T>], n: usize, b: &mut [Cplx<T>]) {
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in (i + 1)..n {
            s -= l[k * n + i].conj() * b[k];
        }
        b[i] = s / l[i * n + i].conj();
    }
}

/// Solves a dense complex system by Gaussian elimination with partial pivoting.
pub fn lu_solve<T: Real>(mut a: Vec<Cplx<T>>, n: usize, b: &mut [Cplx<T>]) -> Result<()> {
    for c in 0..n {
        let piv = (c..n)
            .max_by(|&i, &j| a[i * n + c].norm().partial_cmp(&a[j * n + c].norm()).unwrap_or(std::cmp::Ordering::Equal))
            .expect("nonempty range");
        if a[piv * n + c].norm() == T::zero() {
            return Err(LabError::InvalidArgument(format!("singular matrix at column {c}")));
        }
        if piv != c {
            for k in 0..n {
                a.swap(c * n + k, piv * n + k);
            }
            b.swap(c, piv);
        }
        let d = a[c * n + c];
        for i in (c + 1)..n {
            let f = a[i * n + c] / d;
            if f.is_zero() {
                continue;
            }
            for k in c..n {
                let v = a[c * n + k];
                a[i * n + k] -= f * v;
            }
            let bc = b[c];
            b[i] -= f * bc;
        }
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in (i + 1)..n {
            s -= a[i * n + k] * b[k];
        }
        b[i] = s / a[i * n + i];
    }
    Ok(())
}
