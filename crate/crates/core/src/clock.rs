//! General clock distributions.
//!
//! A [`ClockSpec`] describes the law of an interarrival or service time. All
//! supported families have finite third moments, which is what the error
//! bounds consume, and each one knows its first three moments in closed form.

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_ur, ln_gamma};

use crate::error::{Error, Result};
use crate::quad;
use crate::rng::RandomStream;

/// Law of a general clock.
///
/// Serialized with a `family` tag, e.g. `{"family": "erlang", "k": 2, "rate": 2.0}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase", deny_unknown_fields)]
pub enum ClockSpec {
    Exponential {
        rate: f64,
    },
    Erlang {
        k: u32,
        rate: f64,
    },
    #[serde(rename = "hyperexponential")]
    HyperExponential {
        probabilities: Vec<f64>,
        rates: Vec<f64>,
    },
    Uniform {
        a: f64,
        b: f64,
    },
    #[serde(rename = "lognormal")]
    LogNormal {
        location: f64,
        scale: f64,
    },
    Deterministic {
        value: f64,
    },
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidClock(format!(
            "{name} must be a positive real, got {v}"
        )))
    }
}

impl ClockSpec {
    pub fn exponential(rate: f64) -> Self {
        ClockSpec::Exponential { rate }
    }

    pub fn erlang(k: u32, rate: f64) -> Self {
        ClockSpec::Erlang { k, rate }
    }

    pub fn deterministic(value: f64) -> Self {
        ClockSpec::Deterministic { value }
    }

    /// Two-phase hyperexponential with balanced means: each phase carries
    /// half of the mean. Requires `scv >= 1`.
    pub fn hyperexp_balanced(mean: f64, scv: f64) -> Result<Self> {
        positive("mean", mean)?;
        if !(scv >= 1.0) || !scv.is_finite() {
            return Err(Error::InvalidClock(format!(
                "balanced hyperexponential needs scv >= 1, got {scv}"
            )));
        }
        let p1 = 0.5 * (1.0 + ((scv - 1.0) / (scv + 1.0)).sqrt());
        let p2 = 1.0 - p1;
        Ok(ClockSpec::HyperExponential {
            probabilities: vec![p1, p2],
            rates: vec![2.0 * p1 / mean, 2.0 * p2 / mean],
        })
    }

    pub fn family_name(&self) -> &'static str {
        match self {
            ClockSpec::Exponential { .. } => "exponential",
            ClockSpec::Erlang { .. } => "erlang",
            ClockSpec::HyperExponential { .. } => "hyperexponential",
            ClockSpec::Uniform { .. } => "uniform",
            ClockSpec::LogNormal { .. } => "lognormal",
            ClockSpec::Deterministic { .. } => "deterministic",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ClockSpec::Exponential { rate } => positive("rate", *rate),
            ClockSpec::Erlang { k, rate } => {
                if *k == 0 {
                    return Err(Error::InvalidClock("erlang shape k must be >= 1".into()));
                }
                positive("rate", *rate)
            }
            ClockSpec::HyperExponential {
                probabilities,
                rates,
            } => {
                if probabilities.is_empty() || probabilities.len() != rates.len() {
                    return Err(Error::InvalidClock(
                        "hyperexponential needs equally many probabilities and rates".into(),
                    ));
                }
                for &r in rates {
                    positive("rate", r)?;
                }
                if probabilities.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                    return Err(Error::InvalidClock(
                        "probabilities must be nonnegative".into(),
                    ));
                }
                let total: f64 = probabilities.iter().sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidClock(format!(
                        "probabilities must sum to 1, got {total}"
                    )));
                }
                Ok(())
            }
            ClockSpec::Uniform { a, b } => {
                if !(a.is_finite() && *a >= 0.0) {
                    return Err(Error::InvalidClock(format!(
                        "uniform lower end must be >= 0, got {a}"
                    )));
                }
                positive("b", *b)?;
                if b <= a {
                    return Err(Error::InvalidClock(format!(
                        "uniform needs a < b, got [{a}, {b}]"
                    )));
                }
                Ok(())
            }
            ClockSpec::LogNormal { location, scale } => {
                if !location.is_finite() {
                    return Err(Error::InvalidClock(
                        "lognormal location must be finite".into(),
                    ));
                }
                positive("scale", *scale)
            }
            ClockSpec::Deterministic { value } => positive("value", *value),
        }
    }

    /// Draws one clock value.
    pub fn sample(&self, stream: &mut RandomStream) -> f64 {
        match self {
            ClockSpec::Exponential { rate } => stream.sample::<f64, _>(Exp1) / rate,
            ClockSpec::Erlang { k, rate } => {
                let mut s = 0.0;
                for _ in 0..*k {
                    s += stream.sample::<f64, _>(Exp1);
                }
                s / rate
            }
            ClockSpec::HyperExponential {
                probabilities,
                rates,
            } => {
                let u = stream.open01();
                let mut acc = 0.0;
                let mut phase = rates.len() - 1;
                for (i, p) in probabilities.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        phase = i;
                        break;
                    }
                }
                stream.sample::<f64, _>(Exp1) / rates[phase]
            }
            ClockSpec::Uniform { a, b } => a + (b - a) * stream.open01(),
            ClockSpec::LogNormal { location, scale } => {
                let z: f64 = stream.sample(StandardNormal);
                (location + scale * z).exp()
            }
            ClockSpec::Deterministic { value } => *value,
        }
    }

    /// Exact raw moment `E X^m` for `m` in 1..=3.
    pub fn moment(&self, m: u32) -> Result<f64> {
        if !(1..=3).contains(&m) {
            return Err(Error::UnsupportedMoment(m));
        }
        let mi = m as i32;
        let fact = [1.0, 1.0, 2.0, 6.0][m as usize];
        Ok(match self {
            ClockSpec::Exponential { rate } => fact / rate.powi(mi),
            ClockSpec::Erlang { k, rate } => {
                let k = *k as f64;
                (0..m).map(|j| k + j as f64).product::<f64>() / rate.powi(mi)
            }
            ClockSpec::HyperExponential {
                probabilities,
                rates,
            } => probabilities
                .iter()
                .zip(rates)
                .map(|(p, r)| p * fact / r.powi(mi))
                .sum(),
            ClockSpec::Uniform { a, b } => {
                (b.powi(mi + 1) - a.powi(mi + 1)) / ((m + 1) as f64 * (b - a))
            }
            ClockSpec::LogNormal { location, scale } => {
                let m = m as f64;
                (m * location + 0.5 * m * m * scale * scale).exp()
            }
            ClockSpec::Deterministic { value } => value.powi(mi),
        })
    }

    pub fn mean(&self) -> f64 {
        self.moment(1).expect("first moment is always supported")
    }

    /// Rate `1 / E X`.
    pub fn rate(&self) -> f64 {
        1.0 / self.mean()
    }

    /// Squared coefficient of variation `Var X / (E X)^2`.
    pub fn scv(&self) -> f64 {
        match self {
            ClockSpec::Exponential { .. } => 1.0,
            ClockSpec::Erlang { k, .. } => 1.0 / *k as f64,
            ClockSpec::Deterministic { .. } => 0.0,
            ClockSpec::Uniform { a, b } => (b - a).powi(2) / (3.0 * (a + b).powi(2)),
            ClockSpec::LogNormal { scale, .. } => scale.powi(2).exp_m1(),
            ClockSpec::HyperExponential { .. } => {
                let m1 = self.mean();
                let m2 = self.moment(2).expect("second moment is always supported");
                (m2 / (m1 * m1) - 1.0).max(0.0)
            }
        }
    }

    /// `E |1 - X / E X|^3`, the third absolute moment of the normalized clock.
    pub fn abs_centered_cubed(&self) -> f64 {
        match self {
            ClockSpec::Deterministic { .. } => 0.0,
            ClockSpec::Exponential { .. } => exp_abs_cubed(1.0),
            ClockSpec::HyperExponential {
                probabilities,
                rates,
            } => {
                let m = self.mean();
                probabilities
                    .iter()
                    .zip(rates)
                    .filter(|(p, _)| **p > 0.0)
                    .map(|(p, r)| {
                        let c = r * m;
                        p * exp_abs_cubed(c) / (c * c * c)
                    })
                    .sum()
            }
            ClockSpec::Uniform { a, b } => {
                let w = (b - a) / (b + a);
                w * w * w / 4.0
            }
            ClockSpec::Erlang { k, .. } => erlang_abs_cubed(*k),
            ClockSpec::LogNormal { scale, .. } => lognormal_abs_cubed(*scale),
        }
    }

    /// Same law rescaled by `factor` (the clock value is multiplied by it).
    pub fn scaled(&self, factor: f64) -> Self {
        match self {
            ClockSpec::Exponential { rate } => ClockSpec::Exponential {
                rate: rate / factor,
            },
            ClockSpec::Erlang { k, rate } => ClockSpec::Erlang {
                k: *k,
                rate: rate / factor,
            },
            ClockSpec::HyperExponential {
                probabilities,
                rates,
            } => ClockSpec::HyperExponential {
                probabilities: probabilities.clone(),
                rates: rates.iter().map(|r| r / factor).collect(),
            },
            ClockSpec::Uniform { a, b } => ClockSpec::Uniform {
                a: a * factor,
                b: b * factor,
            },
            ClockSpec::LogNormal { location, scale } => ClockSpec::LogNormal {
                location: location + factor.ln(),
                scale: *scale,
            },
            ClockSpec::Deterministic { value } => ClockSpec::Deterministic {
                value: value * factor,
            },
        }
    }

    /// Same family rescaled to the given mean.
    pub fn with_mean(&self, mean: f64) -> Self {
        self.scaled(mean / self.mean())
    }

    pub fn is_deterministic(&self) -> bool {
        matches!(self, ClockSpec::Deterministic { .. })
    }
}

/// `E|c - Y|^3` for `Y ~ Exp(1)`, the memoryless closed form.
fn exp_abs_cubed(c: f64) -> f64 {
    c * c * c - 3.0 * c * c + 6.0 * c - 6.0 + 12.0 * (-c).exp()
}

/// `E|1 - Y|^3` for `Y ~ Gamma(k, rate k)` by adaptive quadrature plus a
/// tail cut placed where `E[Y^3; Y > cut]` is below 1e-15.
fn erlang_abs_cubed(k: u32) -> f64 {
    let kf = k as f64;
    let log_norm = kf * kf.ln() - ln_gamma(kf);
    let density = move |y: f64| {
        if y <= 0.0 {
            0.0
        } else {
            (log_norm + (kf - 1.0) * y.ln() - kf * y).exp()
        }
    };
    let third_moment = kf * (kf + 1.0) * (kf + 2.0) / (kf * kf * kf);
    let mut cut = 50.0;
    while third_moment * gamma_ur(kf + 3.0, kf * cut) > 1e-15 {
        cut *= 2.0;
    }
    let f = |y: f64| (1.0 - y).abs().powi(3) * density(y);
    quad::integrate(f, 0.0, 1.0, 1e-10, 1e-15) + quad::integrate(f, 1.0, cut, 1e-10, 1e-15)
}

/// `E|1 - Y|^3` for `Y = exp(s Z - s^2/2)`, integrated over the normal
/// variable with the kink at `z = s/2` as a split point.
fn lognormal_abs_cubed(s: f64) -> f64 {
    let phi = |z: f64| (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let f = |z: f64| (1.0 - (s * z - 0.5 * s * s).exp()).abs().powi(3) * phi(z);
    let kink = 0.5 * s;
    let lo = -14.0_f64.min(kink - 1.0);
    let hi = 3.0 * s + 14.0;
    quad::integrate(f, lo, kink, 1e-10, 1e-15) + quad::integrate(f, kink, hi, 1e-10, 1e-15)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    #[test]
    fn moment_examples() {
        assert!(close(
            ClockSpec::exponential(2.0).moment(3).unwrap(),
            0.75,
            1e-15
        ));
        assert!(close(
            ClockSpec::erlang(2, 2.0).moment(1).unwrap(),
            1.0,
            1e-15
        ));
        let u = ClockSpec::Uniform { a: 0.0, b: 3.0 };
        assert!(close(u.moment(2).unwrap(), 3.0, 1e-15));
    }

    #[test]
    fn unsupported_moment_rejected() {
        assert_eq!(
            ClockSpec::exponential(1.0).moment(4),
            Err(Error::UnsupportedMoment(4))
        );
        assert!(ClockSpec::exponential(1.0).moment(0).is_err());
    }

    #[test]
    fn scv_matches_moment_ratio() {
        let specs = [
            ClockSpec::exponential(0.8),
            ClockSpec::erlang(3, 2.5),
            ClockSpec::Uniform { a: 0.5, b: 2.0 },
            ClockSpec::LogNormal {
                location: -0.2,
                scale: 0.7,
            },
            ClockSpec::hyperexp_balanced(1.3, 4.0).unwrap(),
            ClockSpec::deterministic(1.5),
        ];
        for s in specs {
            let m1 = s.moment(1).unwrap();
            let ratio = s.moment(2).unwrap() / (m1 * m1) - 1.0;
            assert!(close(s.scv(), ratio, 1e-12), "{s:?}");
        }
    }

    #[test]
    fn scv_examples() {
        assert!(close(ClockSpec::exponential(3.7).scv(), 1.0, 1e-12));
        assert!(close(ClockSpec::erlang(4, 0.3).scv(), 0.25, 1e-12));
        assert_eq!(ClockSpec::deterministic(2.0).scv(), 0.0);
        let h = ClockSpec::hyperexp_balanced(1.5, 4.0).unwrap();
        assert!(close(h.mean(), 1.5, 1e-12));
        assert!(close(h.scv(), 4.0, 1e-12));
    }

    #[test]
    fn deterministic_sample_is_point_mass() {
        let mut s = RandomStream::new(3, 0);
        assert_eq!(ClockSpec::deterministic(2.5).sample(&mut s), 2.5);
    }

    #[test]
    fn abs_centered_examples() {
        assert_eq!(ClockSpec::deterministic(4.0).abs_centered_cubed(), 0.0);
        let e = 12.0 / std::f64::consts::E - 2.0;
        assert!(close(
            ClockSpec::exponential(0.3).abs_centered_cubed(),
            e,
            1e-14
        ));
        // E|1 - X|^3 for X ~ U(0, 2) is 2 * int_0^1 u^3 / 2 du = 1/4
        let u = ClockSpec::Uniform { a: 0.0, b: 2.0 };
        assert!(close(u.abs_centered_cubed(), 0.25, 1e-15));
        // Erlang(1) is exponential: the quadrature route must agree
        assert!(close(
            ClockSpec::erlang(1, 5.0).abs_centered_cubed(),
            e,
            1e-9
        ));
        // hyperexponential with a single live phase is exponential
        let h = ClockSpec::HyperExponential {
            probabilities: vec![1.0, 0.0],
            rates: vec![3.0, 7.0],
        };
        assert!(close(h.abs_centered_cubed(), e, 1e-14));
    }

    #[test]
    fn validation() {
        assert!(ClockSpec::exponential(0.0).validate().is_err());
        assert!(ClockSpec::erlang(0, 1.0).validate().is_err());
        assert!(ClockSpec::Uniform { a: 2.0, b: 1.0 }.validate().is_err());
        let bad = ClockSpec::HyperExponential {
            probabilities: vec![0.5, 0.4],
            rates: vec![1.0, 2.0],
        };
        assert!(bad.validate().is_err());
        assert!(ClockSpec::hyperexp_balanced(1.0, 0.5).is_err());
    }

    #[test]
    fn scaling_moves_the_mean() {
        let specs = [
            ClockSpec::exponential(2.0),
            ClockSpec::erlang(3, 1.0),
            ClockSpec::hyperexp_balanced(1.0, 4.0).unwrap(),
            ClockSpec::Uniform { a: 0.5, b: 1.5 },
            ClockSpec::LogNormal {
                location: 0.1,
                scale: 0.7,
            },
            ClockSpec::deterministic(1.0),
        ];
        for s in &specs {
            let t = s.with_mean(2.5);
            assert!(close(t.mean(), 2.5, 1e-12), "{s:?}");
            assert!(close(t.scv(), s.scv(), 1e-9), "{s:?}");
            assert!(
                close(t.abs_centered_cubed(), s.abs_centered_cubed(), 1e-8),
                "{s:?}"
            );
        }
    }
}
