//! Fourier coefficients of space-time fields on a periodic box enclosing `Q`,
//! and the matching trigonometric synthesis.

use num_traits::Zero;
use rustfft::{FftNum, FftPlanner};

use crate::error::{LabError, Result};
use crate::grid::{SpaceTimeField, SpaceTimeGrid};
use crate::scalar::{Cplx, Real};

/// In-place forward FFT along every axis of a row-major array whose first
/// axis varies fastest.
pub fn fft_axes<T: FftNum>(buf: &mut [Cplx<T>], dims: &[usize]) {
    let mut planner = FftPlanner::<T>::new();
    let mut stride = 1;
    for &side in dims {
        let fft = planner.plan_fft_forward(side);
        let mut line = vec![Cplx::<T>::zero(); side];
        for base in 0..buf.len() {
            if (base / stride) % side != 0 {
                continue;
            }
            for (j, l) in line.iter_mut().enumerate() {
                *l = buf[base + j * stride];
            }
            fft.process(&mut line);
            for (j, l) in line.iter().enumerate() {
                buf[base + j * stride] = *l;
            }
        }
        stride *= side;
    }
}

/// Periodic box `[0, T] x [-pad, 1 + pad]^n` and its frequency lattice
/// `tau_k = 2 pi k / T`, `xi_j = 2 pi j / (1 + 2 pad)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FourierBox {
    pub t_final: f64,
    pub pad: f64,
    pub dim: usize,
}

impl FourierBox {
    pub fn new(t_final: f64, pad: f64, dim: usize) -> Result<Self> {
        if !(t_final > 0.0 && pad >= 0.0) {
            return Err(LabError::InvalidArgument(format!("bad Fourier box (T = {t_final}, pad = {pad})")));
        }
        Ok(FourierBox { t_final, pad, dim })
    }

    pub fn period(&self) -> f64 {
        1.0 + 2.0 * self.pad
    }

    pub fn volume(&self) -> f64 {
        self.t_final * self.period().powi(self.dim as i32)
    }

    pub fn tau(&self, k: i64) -> f64 {
        2.0 * std::f64::consts::PI * k as f64 / self.t_final
    }

    pub fn xi(&self, j: &[i64]) -> Vec<f64> {
        j.iter().map(|&v| 2.0 * std::f64::consts::PI * v as f64 / self.period()).collect()
    }

    /// Number of box cells per axis for spacing `hx`; the box side must be a
    /// whole number of cells.
    fn cells<T: Real>(&self, grid: &SpaceTimeGrid<T>) -> Result<usize> {
        let c = self.period() * (grid.nx() - 1) as f64;
        if (c - c.round()).abs() > 1e-9 {
            return Err(LabError::Grid(format!("box side {} is not a multiple of hx", self.period())));
        }
        Ok(c.round() as usize)
    }
}

/// Integer lattice index `(k, j_1..j_n)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub struct Mode {
    pub k: i64,
    pub j: Vec<i64>,
}

impl Mode {
    pub fn neg(&self) -> Mode {
        Mode { k: -self.k, j: self.j.iter().map(|v| -v).collect() }
    }

    pub fn is_zero_space(&self) -> bool {
        self.j.iter().all(|&v| v == 0)
    }

    /// First nonzero entry of `(k, j)` is positive (or all zero): one
    /// representative of each `+-` pair.
    pub fn is_canonical(&self) -> bool {
        std::iter::once(self.k).chain(self.j.iter().copied()).find(|&v| v != 0).is_none_or(|v| v > 0)
    }
}

/// All modes with `|k| <= kmax` and `|j_i| <= jmax`.
pub fn lattice(n: usize, kmax: i64, jmax: i64) -> Vec<Mode> {
    let side = (2 * jmax + 1) as usize;
    let mut out = Vec::new();
    for k in -kmax..=kmax {
        for flat in 0..side.pow(n as u32) {
            let mut r = flat;
            let j = (0..n)
                .map(|_| {
                    let v = (r % side) as i64 - jmax;
                    r /= side;
                    v
                })
                .collect();
            out.push(Mode { k, j });
        }
    }
    out
}

/// Discrete Fourier coefficients `int e^{-i(t tau + x . xi)} f` of a field
/// on `Q`, zero-extended to the box; periodic trapezoid in every axis.
#[derive(Clone, Debug)]
pub struct Spectrum<T> {
    pub boxed: FourierBox,
    nt: usize,
    cells: usize,
    data: Vec<Cplx<T>>,
}

impl<T: Real + FftNum> Spectrum<T> {
    pub fn of_field(grid: &SpaceTimeGrid<T>, boxed: FourierBox, f: &SpaceTimeField<Cplx<T>>) -> Result<Self> {
        f.check_grid(grid)?;
        let n = grid.dim();
        let nx = grid.nx();
        let cells = boxed.cells(grid)?;
        let off = ((cells - (nx - 1)) / 2) as usize;
        let nt = grid.ntime() - 1;
        let per_t = cells.pow(n as u32);
        let mut buf = vec![Cplx::<T>::zero(); nt * per_t];
        for k in 0..nt {
            let s = f.slice(k);
            for (node, v) in s.iter().enumerate() {
                let mut r = node;
                let mut idx = 0;
                let mut mult = 1;
                let mut keep = true;
                for _ in 0..n {
                    let i = r % nx;
                    r /= nx;
                    // with no padding the box is periodic and x = 1 coincides with x = 0
                    if i + off >= cells {
                        keep = false;
                    }
                    idx += (i + off) * mult;
                    mult *= cells;
                }
                if keep {
                    buf[k * per_t + idx] = *v;
                }
            }
        }
        let mut dims = vec![cells; n];
        dims.push(nt);
        fft_axes(&mut buf, &dims);
        let scale = grid.ht() * grid.hx().powi(n as i32);
        buf.iter_mut().for_each(|v| *v = *v * scale);
        Ok(Spectrum { boxed, nt, cells, data: buf })
    }

    /// Coefficient at a lattice mode; the box origin shift `-pad` is undone.
    pub fn get(&self, m: &Mode) -> Cplx<T> {
        let wrap = |v: i64, side: usize| v.rem_euclid(side as i64) as usize;
        let mut idx = wrap(m.k, self.nt) * self.cells.pow(m.j.len() as u32);
        let mut mult = 1;
        for &j in &m.j {
            idx += wrap(j, self.cells) * mult;
            mult *= self.cells;
        }
        let shift: f64 = self.boxed.xi(&m.j).iter().sum::<f64>() * self.boxed.pad;
        self.data[idx] * Cplx::from_polar(T::one(), T::lit(shift))
    }
}

/// `(1/|box|) sum_m c_m e^{i(t tau_m + x . xi_m)}` on every node of `Q`.
pub fn synthesize<T: Real>(grid: &SpaceTimeGrid<T>, boxed: FourierBox, coeffs: &[(Mode, Cplx<T>)]) -> SpaceTimeField<Cplx<T>> {
    let n = grid.dim();
    let mut out = SpaceTimeField::zeros_like(grid);
    let inv = T::lit(1.0 / boxed.volume());
    let xs: Vec<Vec<T>> = (0..grid.nspace()).map(|node| grid.coords(node)).collect();
    for (m, c) in coeffs {
        let xi: Vec<T> = boxed.xi(&m.j).into_iter().map(T::lit).collect();
        let tau = T::lit(boxed.tau(m.k));
        let space: Vec<Cplx<T>> = xs
            .iter()
            .map(|x| {
                let p: T = (0..n).map(|i| xi[i] * x[i]).sum();
                Cplx::from_polar(T::one(), p)
            })
            .collect();
        for k in 0..grid.ntime() {
            let e = *c * Cplx::from_polar(inv, tau * grid.time(k));
            for (o, s) in out.slice_mut(k).iter_mut().zip(&space) {
                *o += e * *s;
            }
        }
    }
    out
}

/// Composite Simpson weights for `m` equispaced points (trapezoid when the
/// number of intervals is odd).
pub fn simpson_weights<T: Real>(m: usize, h: T) -> Vec<T> {
    if m < 3 || (m - 1) % 2 == 1 {
        return (0..m).map(|i| if i == 0 || i + 1 == m { h / T::lit(2.0) } else { h }).collect();
    }
    (0..m)
        .map(|i| {
            let c = if i == 0 || i + 1 == m {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            h * T::lit(c / 3.0)
        })
        .collect()
}

/// `int_Q f` by tensor Simpson.
pub fn integrate_q_simpson<T: Real>(grid: &SpaceTimeGrid<T>, f: &SpaceTimeField<Cplx<T>>) -> Result<Cplx<T>> {
    f.check_grid(grid)?;
    let wx = simpson_weights(grid.nx(), grid.hx());
    let wt = simpson_weights(grid.ntime(), grid.ht());
    let n = grid.dim();
    let ws: Vec<T> = (0..grid.nspace())
        .map(|node| {
            let mut r = node;
            let mut w = T::one();
            for _ in 0..n {
                w *= wx[r % grid.nx()];
                r /= grid.nx();
            }
            w
        })
        .collect();
    let mut acc = Cplx::zero();
    for (k, &w) in wt.iter().enumerate() {
        let slab: Cplx<T> = f.slice(k).iter().zip(&ws).map(|(v, &s)| *v * s).sum();
        acc += slab * w;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spectrum_of_single_mode() {
        let g = SpaceTimeGrid::<f64>::new(2, 17, 16, 1.5).unwrap();
        for pad in [0.0, 0.5] {
            let b = FourierBox::new(1.5, pad, 2).unwrap();
            let m = Mode { k: 2, j: vec![1, -1] };
            let (tau, xi) = (b.tau(m.k), b.xi(&m.j));
            let mut f = SpaceTimeField::zeros_like(&g);
            for k in 0..g.ntime() {
                let t = g.time(k);
                for node in 0..g.nspace() {
                    let x = g.coords(node);
                    let on = x.iter().all(|&v| v < 1.0 - 1e-12) || pad > 0.0;
                    if on {
                        f.slice_mut(k)[node] = Cplx::from_polar(1.0, tau * t + xi[0] * x[0] + xi[1] * x[1]);
                    }
                }
            }
            if pad > 0.0 {
                // a lattice mode of the padded box restricted to Q is not a mode; only check synthesis below
                continue;
            }
            let s = Spectrum::of_field(&g, b, &f).unwrap();
            assert!((s.get(&m) - Cplx::new(b.volume(), 0.0)).norm() < 1e-10);
            assert!(s.get(&Mode { k: 1, j: vec![1, -1] }).norm() < 1e-10);
            let back = synthesize(&g, b, &[(m.clone(), s.get(&m))]);
            assert!((back.at(3, 40) - f.at(3, 40)).norm() < 1e-10);
        }
    }

    #[test]
    fn padded_spectrum_matches_direct_sum() {
        let g = SpaceTimeGrid::<f64>::new(2, 9, 8, 1.5).unwrap();
        let b = FourierBox::new(1.5, 0.5, 2).unwrap();
        let f = SpaceTimeField::from_vec(
            g.nspace(),
            g.ntime(),
            (0..g.ntime() * g.nspace()).map(|i| Cplx::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos())).collect(),
        )
        .unwrap();
        let s = Spectrum::of_field(&g, b, &f).unwrap();
        let m = Mode { k: -1, j: vec![2, 3] };
        let (tau, xi) = (b.tau(m.k), b.xi(&m.j));
        let mut direct = Cplx::new(0.0, 0.0);
        for k in 0..g.ntime() - 1 {
            for node in 0..g.nspace() {
                let x = g.coords(node);
                direct += f.at(k, node) * Cplx::from_polar(g.ht() * g.hx() * g.hx(), -(tau * g.time(k) + xi[0] * x[0] + xi[1] * x[1]));
            }
        }
        assert!((s.get(&m) - direct).norm() < 1e-10 * direct.norm().max(1.0));
    }

    #[test]
    fn simpson_is_exact_for_cubics() {
        let w = simpson_weights(9, 0.125);
        let s: f64 = w.iter().enumerate().map(|(i, w)| w * (i as f64 * 0.125).powi(3)).sum();
        assert!((s - 0.25).abs() < 1e-14);
    }

    #[test]
    fn canonical_modes_split_pairs() {
        let l = lattice(2, 1, 1);
        assert_eq!(l.len(), 27);
        let c = l.iter().filter(|m| m.is_canonical()).count();
        assert_eq!(c, 14);
    }
}
