//! Closed-form test functions with analytic first and second derivatives,
//! used by the Carleman and shifted-index checks.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::expr::{Expr, Program, MAX_DIM};
use crate::scalar::Real;

/// Value, time derivative, gradient and Laplacian at a point.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Jet<T> {
    pub u: T,
    pub ut: T,
    pub grad: [T; MAX_DIM],
    pub lap: T,
}

/// One-dimensional factor of a product test function.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Factor {
    /// `((s - a)(b - s))^k` on `[a, b]`, zero elsewhere.
    Bump { a: f64, b: f64, k: i32 },
    /// `s^k`.
    Power { k: i32 },
    /// `sin(m pi s)`.
    Sine { m: f64 },
}

impl Factor {
    /// Value and first two derivatives.
    fn eval<T: Real>(&self, s: T) -> (T, T, T) {
        match *self {
            Factor::Bump { a, b, k } => {
                let (a, b) = (T::lit(a), T::lit(b));
                if s <= a || s >= b {
                    return (T::zero(), T::zero(), T::zero());
                }
                // g = (s-a)(b-s), f = g^k
                let g = (s - a) * (b - s);
                let g1 = a + b - T::lit(2.0) * s;
                let g2 = T::lit(-2.0);
                let kk = T::lit(k as f64);
                let f = g.powi(k);
                let f1 = kk * g.powi(k - 1) * g1;
                let f2 = kk * (T::lit(k as f64 - 1.0) * g.powi(k - 2) * g1 * g1 + g.powi(k - 1) * g2);
                (f, f1, f2)
            }
            Factor::Power { k } => {
                let kk = T::lit(k as f64);
                let f1 = if k >= 1 { kk * s.powi(k - 1) } else { T::zero() };
                let f2 = if k >= 2 { kk * T::lit(k as f64 - 1.0) * s.powi(k - 2) } else { T::zero() };
                (s.powi(k), f1, f2)
            }
            Factor::Sine { m } => {
                let w = T::lit(m) * T::PI();
                let (sn, cs) = (w * s).sin_cos();
                (sn, w * cs, -w * w * sn)
            }
        }
    }

    fn vanishes_at(&self, s: f64) -> bool {
        let (v, _, _) = self.eval::<f64>(s);
        v.abs() <= 1e-14
    }
}

/// Product `c * f_t(t) * prod_i f_i(x_i)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProductFunction {
    pub scale: f64,
    pub time: Factor,
    pub space: Vec<Factor>,
}

/// A test function given either in closed form or as a product of factors.
#[derive(Clone, Debug, PartialEq)]
pub enum TestFunction {
    Expr(Expr),
    Product(ProductFunction),
}

impl TestFunction {
    pub fn parse(src: &str) -> Result<Self> {
        Ok(TestFunction::Expr(Expr::parse(src)?))
    }

    pub fn zero() -> Self {
        TestFunction::Expr(Expr::zero())
    }

    pub fn is_zero(&self) -> bool {
        match self {
            TestFunction::Expr(e) => e.is_zero(),
            TestFunction::Product(p) => p.scale == 0.0,
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        match self {
            TestFunction::Expr(e) => TestFunction::Expr(Expr::mul(Expr::num(c), e.clone())),
            TestFunction::Product(p) => TestFunction::Product(ProductFunction { scale: p.scale * c, ..p.clone() }),
        }
    }

    pub fn compile<T: Real>(&self, n: usize) -> CompiledTest<T> {
        match self {
            TestFunction::Expr(e) => CompiledTest::Expr {
                u: e.compile(),
                ut: e.dt().compile(),
                grad: (0..n).map(|i| e.dx(i).compile()).collect(),
                lap: Expr::sum((0..n).map(|i| e.dx(i).dx(i))).compile(),
            },
            TestFunction::Product(p) => CompiledTest::Product(p.clone()),
        }
    }

    /// Random product of bumps with support strictly inside `Q`, at least
    /// `margin` away from the lateral boundary and from `t = 0, T`.
    pub fn random_bump<R: Rng>(rng: &mut R, n: usize, t_final: f64, margin: f64) -> Self {
        let mut interval = |lo: f64, hi: f64| {
            let w = hi - lo;
            let a = lo + rng.gen_range(0.0..0.4) * w;
            let b = hi - rng.gen_range(0.0..0.4) * w;
            (a, b)
        };
        let (ta, tb) = interval(margin, t_final - margin);
        let time = Factor::Bump { a: ta, b: tb, k: 3 };
        let space = (0..n)
            .map(|_| {
                let (a, b) = interval(margin, 1.0 - margin);
                Factor::Bump { a, b, k: 3 }
            })
            .collect();
        let scale = rng.gen_range(0.5..2.0);
        TestFunction::Product(ProductFunction { scale, time, space })
    }

    /// Random product vanishing on the lateral boundary and at `t = 0`
    /// but not compactly supported in time.
    pub fn random_boundary_vanishing<R: Rng>(rng: &mut R, n: usize) -> Self {
        let time = Factor::Power { k: rng.gen_range(1..=2) };
        let space = (0..n)
            .map(|_| match rng.gen_range(0..2) {
                0 => Factor::Sine { m: rng.gen_range(1..=2) as f64 },
                _ => Factor::Bump { a: 0.0, b: 1.0, k: rng.gen_range(1..=3) },
            })
            .collect();
        TestFunction::Product(ProductFunction { scale: rng.gen_range(0.5..2.0), time, space })
    }

    /// Checks `u(0, .) = 0` and `u = 0` on the lateral boundary at sample points.
    pub fn check_boundary_conditions(&self, n: usize, t_final: f64) -> Result<()> {
        let c = self.compile::<f64>(n);
        let mut worst: f64 = 0.0;
        let m = 9;
        let mut x = vec![0.0; n];
        for it in 0..=m {
            let t = t_final * it as f64 / m as f64;
            for flat in 0..(m + 1usize).pow(n as u32) {
                let mut r = flat;
                let mut on_face = false;
                for xi in x.iter_mut() {
                    let i = r % (m + 1);
                    r /= m + 1;
                    *xi = i as f64 / m as f64;
                    on_face |= i == 0 || i == m;
                }
                if on_face || it == 0 {
                    worst = worst.max(c.jet(t, &x).u.abs());
                }
            }
        }
        if worst > 1e-12 {
            return Err(LabError::Hypothesis(format!(
                "test function must vanish at t = 0 and on the lateral boundary (max trace {worst:e})"
            )));
        }
        Ok(())
    }

    /// Rejects functions that do not vanish within `margin` of the boundary of `Q`.
    pub fn check_compact_support(&self, n: usize, t_final: f64, margin: f64) -> Result<()> {
        if let TestFunction::Product(p) = self {
            let ok_t = p.time.vanishes_at(margin) && p.time.vanishes_at(t_final - margin) && bump_inside(&p.time, margin, t_final - margin);
            let ok_x = p.space.len() == n && p.space.iter().all(|f| bump_inside(f, margin, 1.0 - margin));
            if (ok_t && ok_x) || p.scale == 0.0 {
                return Ok(());
            }
            return Err(LabError::Hypothesis("test function support reaches the boundary of Q".into()));
        }
        if self.is_zero() {
            return Ok(());
        }
        Err(LabError::Hypothesis("closed-form expressions are not compactly supported; use a bump product".into()))
    }
}

fn bump_inside(f: &Factor, lo: f64, hi: f64) -> bool {
    matches!(*f, Factor::Bump { a, b, .. } if a >= lo && b <= hi)
}

pub enum CompiledTest<T> {
    Expr { u: Program<T>, ut: Program<T>, grad: Vec<Program<T>>, lap: Program<T> },
    Product(ProductFunction),
}

impl<T: Real> CompiledTest<T> {
    pub fn jet(&self, t: T, x: &[T]) -> Jet<T> {
        match self {
            CompiledTest::Expr { u, ut, grad, lap } => {
                let mut g = [T::zero(); MAX_DIM];
                for (gi, p) in g.iter_mut().zip(grad) {
                    *gi = p.eval(t, x);
                }
                Jet { u: u.eval(t, x), ut: ut.eval(t, x), grad: g, lap: lap.eval(t, x) }
            }
            CompiledTest::Product(p) => {
                let n = x.len();
                let (ft, ft1, _) = p.time.eval(t);
                let mut vals = [(T::zero(), T::zero(), T::zero()); MAX_DIM];
                let mut prod = T::lit(p.scale);
                for i in 0..n {
                    vals[i] = p.space[i].eval(x[i]);
                    prod *= vals[i].0;
                }
                let mut jet = Jet { u: prod * ft, ut: prod * ft1, ..Default::default() };
                if ft == T::zero() && ft1 == T::zero() {
                    return jet;
                }
                for i in 0..n {
                    let mut others = T::lit(p.scale) * ft;
                    for (j, v) in vals.iter().enumerate().take(n) {
                        if j != i {
                            others *= v.0;
                        }
                    }
                    jet.grad[i] = others * vals[i].1;
                    jet.lap += others * vals[i].2;
                }
                jet
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn product_jet_matches_symbolic() {
        let p = ProductFunction {
            scale: 1.5,
            time: Factor::Power { k: 2 },
            space: vec![Factor::Bump { a: 0.0, b: 1.0, k: 2 }, Factor::Sine { m: 1.0 }],
        };
        let e = Expr::parse("1.5*t^2*(x1*(1-x1))^2*sin(pi*x2)").unwrap();
        let a = TestFunction::Product(p).compile::<f64>(2);
        let b = TestFunction::Expr(e).compile::<f64>(2);
        for (t, x) in [(0.3, [0.2, 0.7]), (1.2, [0.55, 0.1])] {
            let (ja, jb) = (a.jet(t, &x), b.jet(t, &x));
            assert!((ja.u - jb.u).abs() < 1e-12);
            assert!((ja.ut - jb.ut).abs() < 1e-12);
            assert!((ja.grad[0] - jb.grad[0]).abs() < 1e-12);
            assert!((ja.grad[1] - jb.grad[1]).abs() < 1e-12);
            assert!((ja.lap - jb.lap).abs() < 1e-11);
        }
    }

    #[test]
    fn boundary_condition_checks() {
        assert!(TestFunction::parse("t*sin(pi*x1)*sin(pi*x2)").unwrap().check_boundary_conditions(2, 1.5).is_ok());
        assert!(TestFunction::parse("t*x1").unwrap().check_boundary_conditions(2, 1.5).is_err());
        assert!(TestFunction::parse("sin(pi*x1)*sin(pi*x2)").unwrap().check_boundary_conditions(2, 1.5).is_err());
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let b = TestFunction::random_bump(&mut rng, 2, 1.5, 0.05);
            assert!(b.check_boundary_conditions(2, 1.5).is_ok());
            assert!(b.check_compact_support(2, 1.5, 0.05).is_ok());
            assert!(TestFunction::random_boundary_vanishing(&mut rng, 2).check_boundary_conditions(2, 1.5).is_ok());
        }
        assert!(TestFunction::parse("t").unwrap().check_compact_support(2, 1.5, 0.05).is_err());
    }
}
