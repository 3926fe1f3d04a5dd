//! Stationary identities implied by the basic adjoint relationship, checked
//! against closed-form clock moments.

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::palm::{EstimateCI, EventId, PalmAccumulators, ProbeSet, Process, Slot, TimeId};

pub const DEFAULT_THRESHOLD: f64 = 3.0;
/// Above this many simultaneous checks the report carries a multiplicity note.
pub const BONFERRONI_LIMIT: usize = 10;

/// Absolute slack for checks whose estimate has zero variance (e.g. constant
/// idle service times), so that floating-point summation error does not fail
/// an exact identity.
const ROUNDOFF: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IdentityKind {
    /// `estimate == target`.
    Equality,
    /// `estimate <= target`.
    UpperBound,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IdentityRow {
    pub id: String,
    pub kind: IdentityKind,
    pub estimate: EstimateCI,
    pub target: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IdentityReport {
    pub rows: Vec<IdentityRow>,
    pub threshold: f64,
    /// Present when more than [`BONFERRONI_LIMIT`] identities were checked.
    pub note: Option<String>,
}

impl IdentityReport {
    fn new(threshold: f64) -> Self {
        Self {
            rows: Vec::new(),
            threshold,
            note: None,
        }
    }

    fn equality(&mut self, id: impl Into<String>, estimate: EstimateCI, target: f64) {
        let slack = self.threshold * estimate.se + ROUNDOFF * target.abs().max(1.0);
        let pass = (estimate.point - target).abs() <= slack;
        self.rows.push(IdentityRow {
            id: id.into(),
            kind: IdentityKind::Equality,
            estimate,
            target,
            pass,
        });
    }

    fn upper_bound(&mut self, id: impl Into<String>, estimate: EstimateCI, bound: f64) {
        let slack = self.threshold * estimate.se + ROUNDOFF * bound.abs().max(1.0);
        let pass = estimate.point <= bound + slack;
        self.rows.push(IdentityRow {
            id: id.into(),
            kind: IdentityKind::UpperBound,
            estimate,
            target: bound,
            pass,
        });
    }

    fn finish(mut self) -> Self {
        let n = self.rows.len();
        if n > BONFERRONI_LIMIT {
            self.note = Some(format!(
                "{n} identities checked at {} SE each; expect about {:.2} false failures under the null",
                self.threshold,
                n as f64 * two_sided_tail(self.threshold)
            ));
        }
        self
    }

    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn get(&self, id: &str) -> Option<&IdentityRow> {
        self.rows.iter().find(|r| r.id == id)
    }
}

fn two_sided_tail(k: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    2.0 * (1.0 - Normal::standard().cdf(k))
}

fn validate_m(m_values: &[u32]) -> Result<()> {
    match m_values.iter().find(|m| !(2..=3).contains(*m)) {
        Some(&m) => Err(Error::UnsupportedMoment(m)),
        None => Ok(()),
    }
}

fn guard_ties(model: &ModelSpec) -> Result<()> {
    if model.tie_risk() {
        Err(Error::TieRisk)
    } else {
        Ok(())
    }
}

struct MomentProbes {
    m: u32,
    ra: TimeId,
    /// Per station: `R_s^{m-1} 1(Q>0)` and `R_s^m 1(Q=0)`.
    rs_busy: Vec<TimeId>,
    rs_idle: Vec<TimeId>,
}

/// Probes needed by [`check_gg1`] and [`conditional_residual_estimate`].
pub struct Gg1Probes {
    moments: Vec<MomentProbes>,
    busy: TimeId,
    idle: TimeId,
    ra_idle: TimeId,
    ra: TimeId,
    rs: TimeId,
    idle_ra_at_departures: EventId,
    ra_at_departures: EventId,
    rs_at_arrivals: EventId,
}

impl Gg1Probes {
    pub fn register(probes: &mut ProbeSet, m_values: &[u32]) -> Result<Self> {
        probes.model().require("gg1")?;
        validate_m(m_values)?;
        let moments = register_moments(probes, m_values, 1);
        Ok(Self {
            moments,
            busy: probes.time_queues("busy", |z| (z.queues[0] > 0) as u8 as f64),
            idle: probes.time_queues("idle", |z| (z.queues[0] == 0) as u8 as f64),
            ra_idle: probes.time("ra_idle", |z| if z.queues[0] == 0 { z.r_a } else { 0.0 }),
            ra: probes.time("ra", |z| z.r_a),
            rs: probes.time("rs", |z| z.r_s[0]),
            idle_ra_at_departures: probes.event(
                "idle_ra_at_departures",
                Process::Departure(0),
                |_, z| {
                    if z.queues[0] == 0 {
                        z.r_a
                    } else {
                        0.0
                    }
                },
            ),
            ra_at_departures: probes.event("ra_at_departures", Process::Departure(0), |_, z| z.r_a),
            rs_at_arrivals: probes.event("rs_at_arrivals", Process::Arrival, |_, z| z.r_s[0]),
        })
    }
}

fn register_moments(probes: &mut ProbeSet, m_values: &[u32], stations: usize) -> Vec<MomentProbes> {
    m_values
        .iter()
        .map(|&m| {
            let p = (m - 1) as i32;
            let ra = probes.time(format!("ra_pow{p}"), move |z| z.r_a.powi(p));
            let rs_busy = (0..stations)
                .map(|i| {
                    probes.time(format!("rs{}_pow{p}_busy", i + 1), move |z| {
                        if z.queues[i] > 0 {
                            z.r_s[i].powi(p)
                        } else {
                            0.0
                        }
                    })
                })
                .collect();
            let rs_idle = (0..stations)
                .map(|i| {
                    probes.time(format!("rs{}_pow{m}_idle", i + 1), move |z| {
                        if z.queues[i] == 0 {
                            z.r_s[i].powi(m as i32)
                        } else {
                            0.0
                        }
                    })
                })
                .collect();
            MomentProbes {
                m,
                ra,
                rs_busy,
                rs_idle,
            }
        })
        .collect()
}

/// Probes needed by [`check_jsq`].
pub struct JsqProbes {
    moments: Vec<MomentProbes>,
    busy: Vec<TimeId>,
}

impl JsqProbes {
    pub fn register(probes: &mut ProbeSet, m_values: &[u32]) -> Result<Self> {
        probes.model().require("jsq")?;
        validate_m(m_values)?;
        let n = probes.model().stations();
        let moments = register_moments(probes, m_values, n);
        let busy = (0..n)
            .map(|i| {
                probes.time_queues(format!("busy{}", i + 1), move |z| {
                    (z.queues[i] > 0) as u8 as f64
                })
            })
            .collect();
        Ok(Self { moments, busy })
    }
}

/// Checks the single-server identities: arrival and departure rates, the
/// busy probability, residual moments, the idle-departure identity and the
/// mixed residual inequality.
pub fn check_gg1(
    model: &ModelSpec,
    acc: &PalmAccumulators,
    probes: &Gg1Probes,
    threshold: f64,
) -> Result<IdentityReport> {
    model.require("gg1")?;
    guard_ties(model)?;
    let lambda = model.lambda();
    let u = model.arrival_clock();
    let s = model.service_clock(0);
    let mut r = IdentityReport::new(threshold);
    r.equality("arrival_rate", acc.process_rate(Process::Arrival)?, lambda);
    r.equality(
        "departure_rate",
        acc.process_rate(Process::Departure(0))?,
        lambda,
    );
    r.equality("p_busy", acc.time_average(probes.busy)?, model.rho());
    for mp in &probes.moments {
        let m = mp.m;
        let mf = m as f64;
        r.equality(
            format!("ra_moment_m{m}"),
            acc.time_average(mp.ra)?,
            lambda * u.moment(m)? / mf,
        );
        r.equality(
            format!("rs_busy_moment_m{m}"),
            acc.time_average(mp.rs_busy[0])?,
            lambda * s.moment(m)? / mf,
        );
        r.equality(
            format!("rs_idle_conditional_m{m}"),
            acc.ratio(
                &[(1.0, Slot::Time(mp.rs_idle[0]))],
                &[(1.0, Slot::Time(probes.idle))],
            )?,
            s.moment(m)?,
        );
    }
    r.equality(
        "idle_ra_at_departures",
        acc.event_average(probes.idle_ra_at_departures)?,
        1.0 - model.rho(),
    );
    // E S E int R_a dD + E U E int R_s dA - E R_s - E R_a <= 0
    let diff = acc.rate(&[
        (s.mean(), Slot::Event(probes.ra_at_departures)),
        (u.mean(), Slot::Event(probes.rs_at_arrivals)),
        (-1.0, Slot::Time(probes.rs)),
        (-1.0, Slot::Time(probes.ra)),
    ])?;
    r.upper_bound("mixed_residual_inequality", diff, 0.0);
    Ok(r.finish())
}

/// Checks the join-the-shortest-queue identities per server.
pub fn check_jsq(
    model: &ModelSpec,
    acc: &PalmAccumulators,
    probes: &JsqProbes,
    threshold: f64,
) -> Result<IdentityReport> {
    model.require("jsq")?;
    guard_ties(model)?;
    let n = model.stations();
    let lambda = model.lambda();
    let per_server = lambda / n as f64;
    let u = model.arrival_clock();
    let s = model.service_clock(0);
    let mut r = IdentityReport::new(threshold);
    r.equality("arrival_rate", acc.process_rate(Process::Arrival)?, lambda);
    for i in 0..n {
        let k = i + 1;
        r.equality(
            format!("departure_rate_{k}"),
            acc.process_rate(Process::Departure(i))?,
            per_server,
        );
        r.equality(
            format!("p_busy_{k}"),
            acc.time_average(probes.busy[i])?,
            model.rho(),
        );
    }
    for mp in &probes.moments {
        let m = mp.m;
        let mf = m as f64;
        r.equality(
            format!("ra_moment_m{m}"),
            acc.time_average(mp.ra)?,
            lambda * u.moment(m)? / mf,
        );
        for i in 0..n {
            let k = i + 1;
            r.equality(
                format!("rs_busy_moment_m{m}_{k}"),
                acc.time_average(mp.rs_busy[i])?,
                per_server * s.moment(m)? / mf,
            );
            let idle_frac = [(1.0, Slot::Duration), (-1.0, Slot::Time(probes.busy[i]))];
            r.equality(
                format!("rs_idle_conditional_m{m}_{k}"),
                acc.ratio(&[(1.0, Slot::Time(mp.rs_idle[i]))], &idle_frac)?,
                s.moment(m)?,
            );
        }
    }
    Ok(r.finish())
}

/// Both estimates of `E(R_a | X = 0)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalResidual {
    /// Time average of `R_a 1(X=0)` over the time average of `1(X=0)`.
    pub time_ratio: EstimateCI,
    /// `E I^2 / (2 E I)` over the observed idle periods.
    pub idle_periods: Result<EstimateCI>,
}

impl ConditionalResidual {
    /// Whether the two routes agree within `k` combined standard errors.
    pub fn agree(&self, k: f64) -> Option<bool> {
        let b = self.idle_periods.as_ref().ok()?;
        let a = &self.time_ratio;
        let se = (a.se * a.se + b.se * b.se).sqrt();
        Some((a.point - b.point).abs() <= k * se)
    }
}

pub fn conditional_residual_estimate(
    model: &ModelSpec,
    acc: &PalmAccumulators,
    probes: &Gg1Probes,
) -> Result<ConditionalResidual> {
    model.require("gg1")?;
    let time_ratio = acc.ratio(
        &[(1.0, Slot::Time(probes.ra_idle))],
        &[(1.0, Slot::Time(probes.idle))],
    )?;
    let observed = acc.batches.iter().filter(|b| b.idle_count > 0.0).count();
    let idle_periods = if observed < 2 {
        Err(Error::InsufficientData(
            "fewer than two batches contain a completed idle period".into(),
        ))
    } else {
        acc.ratio(&[(1.0, Slot::IdleSumSq)], &[(2.0, Slot::IdleSum)])
    };
    Ok(ConditionalResidual {
        time_ratio,
        idle_periods,
    })
}
