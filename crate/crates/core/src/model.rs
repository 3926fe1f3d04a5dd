//! Queueing model descriptions and their derived rates.

use serde::{Deserialize, Serialize};

use crate::clock::ClockSpec;
use crate::error::{Error, Result};

/// Serializable description of one of the three supported models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ModelConfig {
    Gg1 {
        arrival: ClockSpec,
        service: ClockSpec,
    },
    Jsq {
        servers: usize,
        arrival: ClockSpec,
        service: ClockSpec,
    },
    Tandem {
        arrival: ClockSpec,
        service1: ClockSpec,
        service2: ClockSpec,
    },
}

/// A validated, stable model with its derived rates.
///
/// `loads` and `spare` hold one entry for the G/G/1 and JSQ systems (the
/// system-wide `rho` and `delta = 1 - rho`) and one entry per station for
/// the tandem.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    config: ModelConfig,
    lambda: f64,
    mu: Vec<f64>,
    loads: Vec<f64>,
    spare: Vec<f64>,
}

impl ModelSpec {
    pub fn new(config: ModelConfig) -> Result<Self> {
        let (lambda, mu, loads) = match &config {
            ModelConfig::Gg1 { arrival, service } => {
                arrival.validate()?;
                service.validate()?;
                let (l, m) = (arrival.rate(), service.rate());
                (l, vec![m], vec![l / m])
            }
            ModelConfig::Jsq {
                servers,
                arrival,
                service,
            } => {
                if *servers == 0 {
                    return Err(Error::InvalidArgument(
                        "JSQ needs at least one server".into(),
                    ));
                }
                arrival.validate()?;
                service.validate()?;
                let (l, m) = (arrival.rate(), service.rate());
                (l, vec![m; *servers], vec![l / (*servers as f64 * m)])
            }
            ModelConfig::Tandem {
                arrival,
                service1,
                service2,
            } => {
                arrival.validate()?;
                service1.validate()?;
                service2.validate()?;
                let l = arrival.rate();
                let (m1, m2) = (service1.rate(), service2.rate());
                (l, vec![m1, m2], vec![l / m1, l / m2])
            }
        };
        if let Some(&rho) = loads.iter().find(|r| !(**r < 1.0)) {
            return Err(Error::Unstable { rho });
        }
        let spare = loads.iter().map(|r| 1.0 - r).collect();
        Ok(Self {
            config,
            lambda,
            mu,
            loads,
            spare,
        })
    }

    pub fn gg1(arrival: ClockSpec, service: ClockSpec) -> Result<Self> {
        Self::new(ModelConfig::Gg1 { arrival, service })
    }

    pub fn jsq(servers: usize, arrival: ClockSpec, service: ClockSpec) -> Result<Self> {
        Self::new(ModelConfig::Jsq {
            servers,
            arrival,
            service,
        })
    }

    pub fn tandem(arrival: ClockSpec, service1: ClockSpec, service2: ClockSpec) -> Result<Self> {
        Self::new(ModelConfig::Tandem {
            arrival,
            service1,
            service2,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn kind_name(&self) -> &'static str {
        match self.config {
            ModelConfig::Gg1 { .. } => "gg1",
            ModelConfig::Jsq { .. } => "jsq",
            ModelConfig::Tandem { .. } => "tandem",
        }
    }

    pub fn is_gg1(&self) -> bool {
        matches!(self.config, ModelConfig::Gg1 { .. })
    }

    pub fn is_jsq(&self) -> bool {
        matches!(self.config, ModelConfig::Jsq { .. })
    }

    pub fn is_tandem(&self) -> bool {
        matches!(self.config, ModelConfig::Tandem { .. })
    }

    /// Fails with [`Error::WrongModel`] unless this is an `expected` model.
    pub fn require(&self, expected: &'static str) -> Result<()> {
        if self.kind_name() == expected {
            Ok(())
        } else {
            Err(Error::WrongModel {
                expected,
                got: self.kind_name(),
            })
        }
    }

    /// Number of queues (1, n, or 2).
    pub fn stations(&self) -> usize {
        self.mu.len()
    }

    pub fn arrival_clock(&self) -> &ClockSpec {
        match &self.config {
            ModelConfig::Gg1 { arrival, .. }
            | ModelConfig::Jsq { arrival, .. }
            | ModelConfig::Tandem { arrival, .. } => arrival,
        }
    }

    pub fn service_clock(&self, station: usize) -> &ClockSpec {
        match &self.config {
            ModelConfig::Gg1 { service, .. } | ModelConfig::Jsq { service, .. } => service,
            ModelConfig::Tandem {
                service1, service2, ..
            } => {
                if station == 0 {
                    service1
                } else {
                    service2
                }
            }
        }
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Service rate of `station`.
    pub fn mu(&self, station: usize) -> f64 {
        self.mu[station]
    }

    /// System load: `lambda/mu` (G/G/1), `lambda/(n mu)` (JSQ), or the
    /// larger station load (tandem).
    pub fn rho(&self) -> f64 {
        self.loads.iter().copied().fold(0.0, f64::max)
    }

    /// Spare capacity `1 - rho`; for the tandem, that of the busier station.
    pub fn delta(&self) -> f64 {
        1.0 - self.rho()
    }

    /// Per-station load; for G/G/1 and JSQ there is a single entry.
    pub fn loads(&self) -> &[f64] {
        &self.loads
    }

    /// Per-station spare capacity, aligned with [`loads`](Self::loads).
    pub fn spare(&self) -> &[f64] {
        &self.spare
    }

    /// Scaled customer count: `delta * sum(q)` for G/G/1 and JSQ,
    /// `delta_1 q_1 + delta_2 q_2` for the tandem.
    pub fn scaled_total(&self, queues: &[u32]) -> f64 {
        if self.is_tandem() {
            self.spare[0] * queues[0] as f64 + self.spare[1] * queues[1] as f64
        } else {
            self.spare[0] * queues.iter().map(|&q| q as f64).sum::<f64>()
        }
    }

    /// Long-run event rate (arrivals plus every station's departures).
    pub fn event_rate(&self) -> f64 {
        if self.is_tandem() {
            3.0 * self.lambda
        } else {
            2.0 * self.lambda
        }
    }

    /// Whether the only jobs entering `station` are external arrivals, so
    /// that the time until the next job enters it is the arrival residual.
    pub fn fed_by_arrivals_only(&self, station: usize) -> bool {
        match self.config {
            ModelConfig::Gg1 { .. } => true,
            ModelConfig::Jsq { servers, .. } => servers == 1,
            ModelConfig::Tandem { .. } => station == 0,
        }
    }

    /// True when at least two deterministic clocks run concurrently, so
    /// that exact ties between event times have positive probability.
    pub fn tie_risk(&self) -> bool {
        let mut det = usize::from(self.arrival_clock().is_deterministic());
        for i in 0..self.stations() {
            det += usize::from(self.service_clock(i).is_deterministic());
        }
        det >= 2
    }

    /// Same model with the arrival clock rescaled so the system load is `rho`.
    pub fn with_load(&self, rho: f64) -> Result<Self> {
        let capacity = match &self.config {
            ModelConfig::Gg1 { .. } => self.mu[0],
            ModelConfig::Jsq { servers, .. } => *servers as f64 * self.mu[0],
            ModelConfig::Tandem { .. } => self.mu[0].min(self.mu[1]),
        };
        let mean = 1.0 / (rho * capacity);
        let mut config = self.config.clone();
        match &mut config {
            ModelConfig::Gg1 { arrival, .. }
            | ModelConfig::Jsq { arrival, .. }
            | ModelConfig::Tandem { arrival, .. } => *arrival = arrival.with_mean(mean),
        }
        Self::new(config)
    }
}
