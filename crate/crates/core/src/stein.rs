//! Closed-form solution of the Poisson equation of the exponential
//! distribution for piecewise-linear test functions.
//!
//! For `Y ~ Exponential(beta)`, `beta = 2 theta / sigma2`, the solution of
//! `-theta f'(x) + sigma2/2 f''(x) = E h(Y) - h(x)`, `f'(0) = 0`, `f(0) = 0`
//! with `h(x) = a + s0 x + sum_j c_j (x - k_j)^+` (kinks `k_j >= 0`, so `h`
//! is linear on `x < 0`) is
//!
//! ```text
//! f'(x)   = -(2/sigma2) [ (Eh - h(x))/beta - s(x)/beta^2 - sum_{k_j > x} c_j e^{-beta(k_j - x)}/beta^2 ]
//! f''(x)  = (1/theta) [ s(x) + sum_{k_j > x} c_j e^{-beta(k_j - x)} ]
//! f'''(x) = (2/sigma2) sum_{k_j > x} c_j e^{-beta(k_j - x)}
//! f(x)    = [ sigma2/2 f'(x) - Eh x + int_0^x h ] / theta
//! ```
//!
//! where `s(x)` is the right slope of `h` at `x`. Every exponential has a
//! nonpositive argument, so the evaluation is stable for large `beta x`.

use std::io::Write;

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::report::num;

/// Parameters of the one-dimensional reflected Brownian motion.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiffusionParams1D {
    pub theta: f64,
    pub sigma2: f64,
    pub beta: f64,
    pub delta: f64,
}

impl DiffusionParams1D {
    pub fn new(theta: f64, sigma2: f64, delta: f64) -> Result<Self> {
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return Err(Error::DegenerateDiffusion);
        }
        if !(theta > 0.0) || !theta.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "theta must be positive, got {theta}"
            )));
        }
        Ok(Self {
            theta,
            sigma2,
            beta: 2.0 * theta / sigma2,
            delta,
        })
    }

    /// Mean of the stationary exponential law.
    pub fn mean(&self) -> f64 {
        1.0 / self.beta
    }
}

/// A function of one variable with three bounded derivatives.
pub trait TestFunction1D: Send + Sync {
    fn value(&self, x: f64) -> f64;
    fn d1(&self, x: f64) -> f64;
    fn d2(&self, x: f64) -> f64;
    fn d3(&self, x: f64) -> f64;
    fn sup_d2(&self) -> f64;
    fn sup_d3(&self) -> f64;
}

/// A function of two variables with gradient and Hessian.
pub trait TestFunction2D: Send + Sync {
    fn value(&self, x: [f64; 2]) -> f64;
    fn grad(&self, x: [f64; 2]) -> [f64; 2];
    fn hessian(&self, x: [f64; 2]) -> [[f64; 2]; 2];
}

/// `h(x) = intercept + slope x + sum_j changes[j] (x - kinks[j])^+`.
#[derive(Clone, Debug, PartialEq)]
pub struct PiecewiseLinear {
    intercept: f64,
    slope: f64,
    kinks: Vec<f64>,
    changes: Vec<f64>,
}

impl PiecewiseLinear {
    /// Kinks must be nonnegative and the function 1-Lipschitz.
    pub fn new(intercept: f64, slope: f64, kinks_and_changes: &[(f64, f64)]) -> Result<Self> {
        let mut pairs: Vec<(f64, f64)> = kinks_and_changes.to_vec();
        if pairs
            .iter()
            .any(|(k, c)| !(k.is_finite() && *k >= 0.0 && c.is_finite()))
        {
            return Err(Error::InvalidArgument(
                "kinks must be finite and nonnegative".into(),
            ));
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let h = Self {
            intercept,
            slope,
            kinks: pairs.iter().map(|p| p.0).collect(),
            changes: pairs.iter().map(|p| p.1).collect(),
        };
        let mut s = slope;
        let tol = 1e-12;
        if s.abs() > 1.0 + tol {
            return Err(Error::InvalidArgument(format!(
                "slope {s} exceeds 1 in absolute value"
            )));
        }
        for c in &h.changes {
            s += c;
            if s.abs() > 1.0 + tol {
                return Err(Error::InvalidArgument(format!(
                    "slope {s} exceeds 1 in absolute value"
                )));
            }
        }
        Ok(h)
    }

    pub fn constant(c: f64) -> Self {
        Self {
            intercept: c,
            slope: 0.0,
            kinks: Vec::new(),
            changes: Vec::new(),
        }
    }

    pub fn identity() -> Self {
        Self {
            intercept: 0.0,
            slope: 1.0,
            kinks: Vec::new(),
            changes: Vec::new(),
        }
    }

    /// `min(x, c)` for `c >= 0`.
    pub fn min_with(c: f64) -> Result<Self> {
        Self::new(0.0, 1.0, &[(c, -1.0)])
    }

    /// Interpolates `(x, y)` points with increasing nonnegative abscissae,
    /// extending the first and last pieces linearly.
    pub fn through_points(points: &[(f64, f64)]) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidArgument("need at least two points".into()));
        }
        if points.windows(2).any(|w| !(w[1].0 > w[0].0)) || points[0].0 < 0.0 {
            return Err(Error::InvalidArgument(
                "abscissae must be nonnegative and increasing".into(),
            ));
        }
        let slopes: Vec<f64> = points
            .windows(2)
            .map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0))
            .collect();
        let s0 = slopes[0];
        let intercept = points[0].1 - s0 * points[0].0;
        let kinks: Vec<(f64, f64)> = slopes
            .windows(2)
            .zip(&points[1..])
            .map(|(s, p)| (p.0, s[1] - s[0]))
            .collect();
        Self::new(intercept, s0, &kinks)
    }

    pub fn kinks(&self) -> &[f64] {
        &self.kinks
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.intercept
            + self.slope * x
            + self
                .kinks
                .iter()
                .zip(&self.changes)
                .map(|(k, c)| c * (x - k).max(0.0))
                .sum::<f64>()
    }

    /// Right derivative.
    pub fn slope_at(&self, x: f64) -> f64 {
        self.slope
            + self
                .kinks
                .iter()
                .zip(&self.changes)
                .filter(|(k, _)| **k <= x)
                .map(|(_, c)| c)
                .sum::<f64>()
    }

    /// `int_0^x h`.
    pub fn integral(&self, x: f64) -> f64 {
        self.intercept * x
            + 0.5 * self.slope * x * x
            + self
                .kinks
                .iter()
                .zip(&self.changes)
                .map(|(k, c)| 0.5 * c * (x - k).max(0.0).powi(2))
                .sum::<f64>()
    }

    /// `E h(Y)` for `Y ~ Exponential(beta)`.
    pub fn exp_mean(&self, beta: f64) -> f64 {
        self.intercept
            + self.slope / beta
            + self
                .kinks
                .iter()
                .zip(&self.changes)
                .map(|(k, c)| c * (-beta * k).exp() / beta)
                .sum::<f64>()
    }

    fn tail(&self, x: f64, beta: f64) -> f64 {
        self.kinks
            .iter()
            .zip(&self.changes)
            .filter(|(k, _)| **k > x)
            .map(|(k, c)| c * (-beta * (k - x)).exp())
            .sum()
    }
}

/// The solution `f_h` of the Poisson equation.
#[derive(Clone, Debug, PartialEq)]
pub struct SteinSolution {
    pub h: PiecewiseLinear,
    pub params: DiffusionParams1D,
    pub eh: f64,
}

pub fn solve_poisson(h: &PiecewiseLinear, params: DiffusionParams1D) -> SteinSolution {
    SteinSolution {
        h: h.clone(),
        params,
        eh: h.exp_mean(params.beta),
    }
}

impl TestFunction1D for SteinSolution {
    fn value(&self, x: f64) -> f64 {
        let p = &self.params;
        (0.5 * p.sigma2 * self.d1(x) - self.eh * x + self.h.integral(x)) / p.theta
    }

    fn d1(&self, x: f64) -> f64 {
        let p = &self.params;
        let b = p.beta;
        let inner = (self.eh - self.h.eval(x)) / b
            - self.h.slope_at(x) / (b * b)
            - self.h.tail(x, b) / (b * b);
        -2.0 / p.sigma2 * inner
    }

    fn d2(&self, x: f64) -> f64 {
        (self.h.slope_at(x) + self.h.tail(x, self.params.beta)) / self.params.theta
    }

    fn d3(&self, x: f64) -> f64 {
        2.0 / self.params.sigma2 * self.h.tail(x, self.params.beta)
    }

    /// The Stein-factor bound `1/theta`.
    fn sup_d2(&self) -> f64 {
        1.0 / self.params.theta
    }

    /// The Stein-factor bound `4/sigma2`.
    fn sup_d3(&self) -> f64 {
        4.0 / self.params.sigma2
    }
}

/// Grid sup norms of `f''` and `f'''`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SteinFactors {
    pub sup_f2: f64,
    pub sup_f3: f64,
}

/// Default grid: `points` equispaced on `[0, 40/beta]` plus both sides of
/// every kink.
pub fn stein_grid(sol: &SteinSolution, points: usize) -> Vec<f64> {
    let top = 40.0 / sol.params.beta;
    let n = points.max(2);
    let mut xs: Vec<f64> = (0..n).map(|i| top * i as f64 / (n - 1) as f64).collect();
    for &k in sol.h.kinks() {
        let eps = 1e-12 * k.abs().max(1.0);
        xs.extend([k - eps, k, k + eps]);
    }
    xs.retain(|x| *x >= 0.0);
    xs.sort_by(f64::total_cmp);
    xs
}

pub fn stein_factors(sol: &SteinSolution, grid: &[f64]) -> SteinFactors {
    let mut f = SteinFactors {
        sup_f2: 0.0,
        sup_f3: 0.0,
    };
    for &x in grid {
        f.sup_f2 = f.sup_f2.max(sol.d2(x).abs());
        f.sup_f3 = f.sup_f3.max(sol.d3(x).abs());
    }
    f
}

/// `max |-theta f' + sigma2/2 f'' - (Eh - h)|` over the grid.
pub fn ode_residual(sol: &SteinSolution, grid: &[f64]) -> f64 {
    let p = &sol.params;
    grid.iter()
        .map(|&x| {
            (-p.theta * sol.d1(x) + 0.5 * p.sigma2 * sol.d2(x) - (sol.eh - sol.h.eval(x))).abs()
        })
        .fold(0.0, f64::max)
}

/// `-theta f'(x) + sigma2/2 f''(x) + theta f'(0)`.
pub fn generator_1d(params: &DiffusionParams1D, f: &dyn TestFunction1D, x: f64) -> f64 {
    -params.theta * f.d1(x) + 0.5 * params.sigma2 * f.d2(x) + params.theta * f.d1(0.0)
}

/// Coefficients of the two-dimensional tandem diffusion generator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TandemGenerator {
    pub drift: [f64; 2],
    /// Coefficients of `d11 f`, `d12 f`, `d22 f`.
    pub second: [f64; 3],
    /// Boundary term on `x1 = 0`: `mu1 (delta1 d1 f - delta2 d2 f)`.
    pub face1: [f64; 2],
    /// Boundary term on `x2 = 0`: `mu2 delta2 d2 f`.
    pub face2: f64,
}

impl TandemGenerator {
    pub fn new(model: &ModelSpec) -> Result<Self> {
        model.require("tandem")?;
        let l = model.lambda();
        let (m1, m2) = (model.mu(0), model.mu(1));
        let d = model.spare();
        let (d1, d2) = (d[0], d[1]);
        let cu = model.arrival_clock().scv();
        let c1 = model.service_clock(0).scv();
        let c2 = model.service_clock(1).scv();
        Ok(Self {
            drift: [-m1 * d1 * d1, d2 * (m1 * d1 - m2 * d2)],
            second: [
                0.5 * d1 * d1 * (l * cu + m1 * c1),
                -d1 * d2 * m1 * c1,
                0.5 * d2 * d2 * (m1 * c1 + m2 * c2),
            ],
            face1: [m1 * d1, -m1 * d2],
            face2: m2 * d2,
        })
    }

    pub fn apply(&self, f: &dyn TestFunction2D, x: [f64; 2]) -> f64 {
        let g = f.grad(x);
        let h = f.hessian(x);
        let mut v = self.drift[0] * g[0]
            + self.drift[1] * g[1]
            + self.second[0] * h[0][0]
            + self.second[1] * h[0][1]
            + self.second[2] * h[1][1];
        if x[0] == 0.0 {
            v += self.face1[0] * g[0] + self.face1[1] * g[1];
        }
        if x[1] == 0.0 {
            v += self.face2 * g[1];
        }
        v
    }
}

pub fn generator_tandem(model: &ModelSpec, f: &dyn TestFunction2D, x: [f64; 2]) -> Result<f64> {
    Ok(TandemGenerator::new(model)?.apply(f, x))
}

/// Writes `x,f,f1,f2,f3` rows.
pub fn write_grid<W: Write>(sol: &SteinSolution, grid: &[f64], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(["x", "f", "f1", "f2", "f3"]).map_err(io)?;
    for &x in grid {
        w.write_record(&[
            num(x),
            num(sol.value(x)),
            num(sol.d1(x)),
            num(sol.d2(x)),
            num(sol.d3(x)),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::Io(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> DiffusionParams1D {
        DiffusionParams1D::new(0.01, 0.019, 0.1).unwrap()
    }

    #[test]
    fn identity_h() {
        let p = params();
        let s = solve_poisson(&PiecewiseLinear::identity(), p);
        assert!((s.eh - p.sigma2 / (2.0 * p.theta)).abs() < 1e-12);
        for x in [0.0, 0.3, 2.0, 50.0, -1.0] {
            assert!((s.d1(x) - x / p.theta).abs() < 1e-9 * (1.0 + x.abs() / p.theta));
            assert!((s.d2(x) - 1.0 / p.theta).abs() < 1e-9);
            assert_eq!(s.d3(x), 0.0);
            assert!((s.value(x) - x * x / (2.0 * p.theta)).abs() < 1e-7 * (1.0 + x * x / p.theta));
        }
    }

    #[test]
    fn constant_h_gives_zero() {
        let s = solve_poisson(&PiecewiseLinear::constant(3.0), params());
        for x in [0.0, 1.0, 7.5] {
            assert!(s.value(x).abs() < 1e-9 && s.d1(x).abs() < 1e-9 && s.d2(x) == 0.0);
        }
    }

    #[test]
    fn min_h_satisfies_ode() {
        let p = params();
        let s = solve_poisson(&PiecewiseLinear::min_with(2.0).unwrap(), p);
        let grid = stein_grid(&s, 10_000);
        assert!(ode_residual(&s, &grid) <= 1e-9 * (1.0 + 2.0 / p.theta));
        assert!(s.d1(0.0).abs() < 1e-12);
        let f = stein_factors(&s, &grid);
        assert!(f.sup_f2 <= (1.0 + 1e-9) / p.theta);
        assert!(f.sup_f3 <= (1.0 + 1e-9) * 4.0 / p.sigma2);
        for x in grid {
            assert!(generator_1d(&p, &s, x) - (s.eh - s.h.eval(x)) < 1e-9 * (1.0 + 2.0 / p.theta));
        }
    }

    #[test]
    fn rejects_steep_or_degenerate() {
        assert!(PiecewiseLinear::new(0.0, 1.0, &[(1.0, 0.5)]).is_err());
        assert!(PiecewiseLinear::new(0.0, 0.5, &[(-1.0, 0.1)]).is_err());
        assert_eq!(
            DiffusionParams1D::new(1.0, 0.0, 0.5),
            Err(Error::DegenerateDiffusion)
        );
    }

    #[test]
    fn through_points_matches() {
        let h = PiecewiseLinear::through_points(&[(0.0, 1.0), (1.0, 1.5), (3.0, 0.5)]).unwrap();
        assert!((h.eval(0.5) - 1.25).abs() < 1e-12);
        assert!((h.eval(2.0) - 1.0).abs() < 1e-12);
        assert!((h.eval(-2.0) - 0.0).abs() < 1e-12);
        assert!((h.eval(5.0) + 0.5).abs() < 1e-12);
    }

    struct Sum;
    impl TestFunction2D for Sum {
        fn value(&self, x: [f64; 2]) -> f64 {
            x[0] + x[1]
        }
        fn grad(&self, _: [f64; 2]) -> [f64; 2] {
            [1.0, 1.0]
        }
        fn hessian(&self, _: [f64; 2]) -> [[f64; 2]; 2] {
            [[0.0; 2]; 2]
        }
    }

    #[test]
    fn tandem_generator_interior() {
        use crate::clock::ClockSpec;
        let m = ModelSpec::tandem(
            ClockSpec::exponential(0.8),
            ClockSpec::exponential(1.0),
            ClockSpec::exponential(1.25),
        )
        .unwrap();
        let (d1, d2) = (0.2, 1.0 - 0.8 / 1.25);
        let v = generator_tandem(&m, &Sum, [1.0, 1.0]).unwrap();
        assert!((v - (-d1 * d1 + d2 * (d1 - 1.25 * d2))).abs() < 1e-12);
    }
}
