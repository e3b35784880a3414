//! One-dimensional quadrature rules.

use serde::{Deserialize, Serialize};

use crate::scalar::Real;

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre<T: Real>(m: usize) -> (Vec<T>, Vec<T>) {
    let mut nodes = vec![T::zero(); m];
    let mut weights = vec![T::zero(); m];
    let pi = std::f64::consts::PI;
    for i in 0..m.div_ceil(2) {
        // Newton iteration from the Chebyshev-like initial guess, in f64.
        let mut z = (pi * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0f64, z);
            for k in 2..=m {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pm = if m == 1 { z } else { p1 };
            let pm1 = if m == 1 { 1.0 } else { p0 };
            dp = m as f64 * (z * pm - pm1) / (z * z - 1.0);
            let dz = pm / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        nodes[i] = T::lit(-z);
        nodes[m - 1 - i] = T::lit(z);
        weights[i] = T::lit(w);
        weights[m - 1 - i] = T::lit(w);
    }
    (nodes, weights)
}

/// Rule for integrals along a segment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SegmentRule {
    /// Composite Simpson with step at most `max_step`.
    Simpson { max_step: f64 },
    /// Composite Gauss-Legendre, `points` per panel, panels at most `max_panel` long.
    Gauss { points: usize, max_panel: f64 },
}

impl Default for SegmentRule {
    fn default() -> Self {
        SegmentRule::Gauss { points: 8, max_panel: 0.5 }
    }
}

/// Precomputed nodes/weights of a [`SegmentRule`] on `[0, 1]`-scaled panels.
#[derive(Clone, Debug)]
pub struct SegmentQuadrature<T> {
    rule: SegmentRule,
    gl: (Vec<T>, Vec<T>),
}

impl<T: Real> SegmentQuadrature<T> {
    pub fn new(rule: SegmentRule) -> Self {
        let gl = match rule {
            SegmentRule::Gauss { points, .. } => gauss_legendre(points.max(1)),
            SegmentRule::Simpson { .. } => (Vec::new(), Vec::new()),
        };
        SegmentQuadrature { rule, gl }
    }

    pub fn rule(&self) -> SegmentRule {
        self.rule
    }

    /// `int_a^b f(s) ds`.
    pub fn integrate(&self, a: T, b: T, mut f: impl FnMut(T) -> T) -> T {
        let len = b - a;
        if len == T::zero() {
            return T::zero();
        }
        match self.rule {
            SegmentRule::Simpson { max_step } => {
                let mut m = (len.abs() / T::lit(max_step)).ceil().to_f64_lossy() as usize;
                m = m.max(2);
                if m % 2 == 1 {
                    m += 1;
                }
                let h = len / T::from_usize_lossy(m);
                let mut acc = f(a) + f(b);
                for i in 1..m {
                    let w = if i % 2 == 1 { T::lit(4.0) } else { T::lit(2.0) };
                    acc += w * f(a + h * T::from_usize_lossy(i));
                }
                acc * h / T::lit(3.0)
            }
            SegmentRule::Gauss { max_panel, .. } => {
                let panels = ((len.abs() / T::lit(max_panel)).ceil().to_f64_lossy() as usize).max(1);
                let h = len / T::from_usize_lossy(panels);
                let half = h * T::lit(0.5);
                let (nodes, weights) = &self.gl;
                let mut acc = T::zero();
                for p in 0..panels {
                    let mid = a + h * (T::from_usize_lossy(p) + T::lit(0.5));
                    for (z, w) in nodes.iter().zip(weights) {
                        acc += *w * f(mid + half * *z);
                    }
                }
                acc * half
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        for m in 1..12 {
            let (x, w) = gauss_legendre::<f64>(m);
            for deg in 0..(2 * m) {
                let approx: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert!((approx - exact).abs() < 1e-13, "m={m} deg={deg}");
            }
        }
    }

    #[test]
    fn both_rules_integrate_sine() {
        let exact = 2.0 / std::f64::consts::PI;
        for rule in [SegmentRule::Simpson { max_step: 1.0 / 256.0 }, SegmentRule::default()] {
            let q = SegmentQuadrature::<f64>::new(rule);
            let v = q.integrate(0.0, 1.0, |s| (std::f64::consts::PI * s).sin());
            assert!((v - exact).abs() < 1e-9, "{rule:?}: {v}");
        }
        let q = SegmentQuadrature::<f64>::new(SegmentRule::default());
        assert_eq!(q.integrate(0.3, 0.3, |s| s), 0.0);
        assert!((q.integrate(1.0, 0.0, |s| s) + 0.5).abs() < 1e-15);
    }
}
