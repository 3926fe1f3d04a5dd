//! Wasserstein-1 distances to the exponential law and heavy-traffic decay
//! fitting.

use crate::error::{Error, Result};
use crate::palm::EstimateCI;
use crate::rng::RandomStream;

pub const DEFAULT_RESAMPLES: usize = 200;
pub const DEFAULT_CONFIDENCE: f64 = 0.99;
const TAIL_TOLERANCE: f64 = 1e-12;

/// Bootstrap settings for the empirical distance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bootstrap {
    pub resamples: usize,
    pub confidence: f64,
    /// Moving-block length; 1 gives the ordinary bootstrap.
    pub block: usize,
    pub seed: u64,
}

impl Default for Bootstrap {
    fn default() -> Self {
        Self {
            resamples: DEFAULT_RESAMPLES,
            confidence: DEFAULT_CONFIDENCE,
            block: 1,
            seed: 0,
        }
    }
}

/// `int_a^b |p - G(x)| dx` with `G(x) = 1 - exp(-beta x)` for `x >= 0` and
/// `0` below, where `p` is a constant level in `[0, 1]`.
fn level_gap(p: f64, a: f64, b: f64, beta: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    if a < 0.0 {
        let neg = p * (b.min(0.0) - a);
        return neg + level_gap(p, 0.0, b, beta);
    }
    // G(x) - p changes sign at c
    let c = if p <= 0.0 {
        0.0
    } else if p >= 1.0 {
        f64::INFINITY
    } else {
        -(-p).ln_1p() / beta
    };
    let signed = |lo: f64, hi: f64| -> f64 {
        // int_lo^hi (G - p) dx
        if hi <= lo {
            return 0.0;
        }
        let tail = if hi.is_infinite() {
            (-beta * lo).exp() / beta
        } else {
            (-beta * lo).exp() * -(-beta * (hi - lo)).exp_m1() / beta
        };
        if hi.is_infinite() {
            // only reached with p == 1, where the integrand is -e^{-beta x}
            return -tail;
        }
        (hi - lo) * (1.0 - p) - tail
    };
    let below = -signed(a, c.min(b));
    let above = signed(c.max(a), b);
    below + above
}

/// Exact `int |F_n - G|` for sorted samples.
fn w1_sorted(sorted: &[f64], beta: f64) -> f64 {
    let n = sorted.len() as f64;
    let mut total = level_gap(0.0, sorted[0].min(0.0), sorted[0], beta);
    for k in 1..sorted.len() {
        total += level_gap(k as f64 / n, sorted[k - 1], sorted[k], beta);
    }
    let last = sorted[sorted.len() - 1];
    total
        + if last >= 0.0 {
            (-beta * last).exp() / beta
        } else {
            -last + 1.0 / beta
        }
}

/// W1 between the empirical law of `samples` and Exponential(`beta`), with
/// a bootstrap standard error and percentile half-width.
pub fn w1_empirical_vs_exponential(
    samples: &[f64],
    beta: f64,
    boot: &Bootstrap,
) -> Result<EstimateCI> {
    if samples.is_empty() {
        return Err(Error::InsufficientData("no samples".into()));
    }
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "rate must be positive, got {beta}"
        )));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("samples must be finite".into()));
    }
    if boot.block == 0 {
        return Err(Error::InvalidArgument(
            "block length must be at least 1".into(),
        ));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let point = w1_sorted(&sorted, beta);
    if boot.resamples < 2 {
        return Ok(EstimateCI {
            point,
            se: 0.0,
            half_width: 0.0,
            batches: 0,
            confidence: boot.confidence,
        });
    }
    let mut reps = bootstrap_replicates(samples, beta, boot);
    let r = reps.len() as f64;
    let mean = reps.iter().sum::<f64>() / r;
    let se = (reps.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r - 1.0)).sqrt();
    reps.sort_by(f64::total_cmp);
    let alpha = 0.5 * (1.0 - boot.confidence);
    let at = |q: f64| reps[((q * (r - 1.0)).round() as usize).min(reps.len() - 1)];
    let half_width = 0.5 * (at(1.0 - alpha) - at(alpha));
    Ok(EstimateCI {
        point,
        se,
        half_width,
        batches: reps.len(),
        confidence: boot.confidence,
    })
}

fn bootstrap_replicates(samples: &[f64], beta: f64, boot: &Bootstrap) -> Vec<f64> {
    let n = samples.len();
    let block = boot.block.min(n);
    let one = |b: usize| -> f64 {
        let mut stream = RandomStream::new(boot.seed, b as u64);
        let mut draw = Vec::with_capacity(n);
        while draw.len() < n {
            let start = stream.index(n - block + 1);
            let take = block.min(n - draw.len());
            draw.extend_from_slice(&samples[start..start + take]);
        }
        draw.sort_by(f64::total_cmp);
        w1_sorted(&draw, beta)
    };
    let jobs = std::thread::available_parallelism()
        .map_or(1, |p| p.get())
        .min(boot.resamples);
    let mut out = vec![0.0; boot.resamples];
    let chunk = boot.resamples.div_ceil(jobs);
    std::thread::scope(|s| {
        for (c, slot) in out.chunks_mut(chunk).enumerate() {
            let one = &one;
            s.spawn(move || {
                for (j, v) in slot.iter_mut().enumerate() {
                    *v = one(c * chunk + j);
                }
            });
        }
    });
    out
}

/// Exact W1 between `delta * N`, `N ~ Geometric(1 - rho)` on `{0, 1, ...}`,
/// and Exponential(`beta`).
pub fn w1_geometric_vs_exponential(rho: f64, delta: f64, beta: f64) -> Result<f64> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "rho must lie in (0, 1), got {rho}"
        )));
    }
    if !(delta > 0.0) || !(beta > 0.0) {
        return Err(Error::InvalidArgument(
            "delta and beta must be positive".into(),
        ));
    }
    let mut total = 0.0;
    let mut tail = rho;
    let mut k = 0u64;
    loop {
        let a = k as f64 * delta;
        total += level_gap(1.0 - tail, a, a + delta, beta);
        k += 1;
        tail *= rho;
        let x = k as f64 * delta;
        let rest = delta * tail / (1.0 - rho) + (-beta * x).exp() / beta;
        if rest < TAIL_TOLERANCE {
            return Ok(total);
        }
    }
}

/// Least-squares fit of `log w1 = intercept + slope * log delta`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecayFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope (zero for three or more exact points on a line).
    pub slope_se: f64,
    pub points: usize,
}

pub fn decay_fit(pairs: &[(f64, f64)]) -> Result<DecayFit> {
    if pairs.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "decay fit needs at least 3 points, have {}",
            pairs.len()
        )));
    }
    if pairs.iter().any(|(d, w)| !(*d > 0.0) || !(*w > 0.0)) {
        return Err(Error::InvalidArgument(
            "decay fit needs positive delta and w1".into(),
        ));
    }
    let xs: Vec<f64> = pairs.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(Error::InvalidArgument(
            "decay fit needs distinct deltas".into(),
        ));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let slope_se = if pairs.len() > 2 {
        (sse / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok(DecayFit {
        slope,
        intercept,
        slope_se,
        points: pairs.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp_samples(n: usize, beta: f64, seed: u64) -> Vec<f64> {
        let mut s = RandomStream::new(seed, 7);
        (0..n).map(|_| -s.open01().ln() / beta).collect()
    }

    #[test]
    fn point_mass_at_zero_gives_mean() {
        let w = w1_empirical_vs_exponential(&[0.0; 10], 2.0, &Bootstrap::default()).unwrap();
        assert!((w.point - 0.5).abs() < 1e-15);
    }

    #[test]
    fn self_distance_is_small() {
        let beta = 1.3;
        let xs = exp_samples(1_000_000, beta, 1);
        let w = w1_empirical_vs_exponential(
            &xs,
            beta,
            &Bootstrap {
                resamples: 0,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(w.point <= 0.01 / beta, "{}", w.point);
    }

    #[test]
    fn brute_force_agreement() {
        let xs = [0.3, 1.2, 0.0, 2.5, 0.7];
        let beta = 0.8;
        let mut sorted = xs.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = 400_000;
        let upper = 60.0;
        let h = upper / n as f64;
        let mut brute = 0.0;
        for i in 0..n {
            let x = (i as f64 + 0.5) * h;
            let f = sorted.iter().filter(|s| **s <= x).count() as f64 / 5.0;
            brute += (f - (1.0 - (-beta * x).exp())).abs() * h;
        }
        let exact = w1_sorted(&sorted, beta);
        assert!((exact - brute).abs() < 1e-4, "{exact} vs {brute}");
    }

    #[test]
    fn geometric_oracle_decreases_in_heavy_traffic() {
        let mut prev = f64::INFINITY;
        for rho in [0.9, 0.99, 0.999] {
            let w = w1_geometric_vs_exponential(rho, 1.0 - rho, 2.0 / (1.0 + rho)).unwrap();
            assert!(w > 0.0 && w < prev);
            prev = w;
        }
    }

    #[test]
    fn decay_fit_exact_lines() {
        let line: Vec<(f64, f64)> = [0.2, 0.1, 0.05].iter().map(|d| (*d, 3.0 * d)).collect();
        assert!((decay_fit(&line).unwrap().slope - 1.0).abs() < 1e-12);
        let quad: Vec<(f64, f64)> = [0.2, 0.1, 0.05].iter().map(|d| (*d, 3.0 * d * d)).collect();
        assert!((decay_fit(&quad).unwrap().slope - 2.0).abs() < 1e-12);
        assert!(decay_fit(&line[..1]).is_err());
        assert!(decay_fit(&[(0.1, 0.0), (0.2, 1.0), (0.3, 1.0)]).is_err());
    }

    #[test]
    fn mean_gap_lower_bound_and_shift() {
        let xs = exp_samples(5_000, 1.0, 3);
        let boot = Bootstrap {
            resamples: 0,
            ..Default::default()
        };
        let w = w1_empirical_vs_exponential(&xs, 1.5, &boot).unwrap().point;
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        assert!(w >= (mean - 1.0 / 1.5).abs() - 1e-12);
        let shifted: Vec<f64> = xs.iter().map(|x| x + 0.2).collect();
        let ws = w1_empirical_vs_exponential(&shifted, 1.5, &boot)
            .unwrap()
            .point;
        assert!((ws - w).abs() <= 0.2 + 1e-12);
    }
}
