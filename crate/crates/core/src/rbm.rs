//! Euler scheme for the two-dimensional reflected Brownian motion that
//! approximates the tandem queue.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::bounds::TandemRbmParams;
use crate::error::{Error, Result};
use crate::palm::{ratio_estimate, EstimateCI, DEFAULT_BATCHES, DEFAULT_CONFIDENCE};
use crate::rng::RandomStream;

pub const DEFAULT_DT: f64 = 1e-3;
const PSD_TOLERANCE: f64 = 1e-12;

/// Lower Cholesky factor of a 2x2 covariance matrix.
pub fn cholesky_2x2(s: [[f64; 2]; 2]) -> Result<[[f64; 2]; 2]> {
    let sym = (s[0][1] - s[1][0]).abs() <= PSD_TOLERANCE * (1.0 + s[0][1].abs());
    let det = s[0][0] * s[1][1] - s[0][1] * s[1][0];
    if !sym || s[0][0] < 0.0 || s[1][1] < 0.0 || det < -PSD_TOLERANCE * (1.0 + s[0][0] * s[1][1]) {
        return Err(Error::NotPositiveSemidefinite);
    }
    let l11 = s[0][0].sqrt();
    let l21 = if l11 > 0.0 {
        s[1][0] / l11
    } else if s[1][0].abs() <= PSD_TOLERANCE {
        0.0
    } else {
        return Err(Error::NotPositiveSemidefinite);
    };
    let l22 = (s[1][1] - l21 * l21).max(0.0).sqrt();
    Ok([[l11, 0.0], [l21, l22]])
}

/// One Euler step: unscaled state after the step and the regulator increment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SrbmStep {
    pub t: f64,
    pub y: [f64; 2],
    pub di: [f64; 2],
}

/// Stepping state of the reflected process.
#[derive(Clone, Debug)]
pub struct SrbmStepper {
    drift: [f64; 2],
    chol: [[f64; 2]; 2],
    dt: f64,
    sqrt_dt: f64,
    y: [f64; 2],
    regulator: [f64; 2],
    t: f64,
    normals: RandomStream,
}

impl SrbmStepper {
    pub fn new(params: &TandemRbmParams, dt: f64, start: [f64; 2], seed: u64) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "step size must be positive, got {dt}"
            )));
        }
        if start.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidArgument(
                "start must lie in the nonnegative quadrant".into(),
            ));
        }
        Ok(Self {
            drift: params.drift,
            chol: cholesky_2x2(params.sigma)?,
            dt,
            sqrt_dt: dt.sqrt(),
            y: start,
            regulator: [0.0; 2],
            t: 0.0,
            normals: RandomStream::new(seed, 0),
        })
    }

    pub fn state(&self) -> [f64; 2] {
        self.y
    }

    pub fn regulator(&self) -> [f64; 2] {
        self.regulator
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn draw(&mut self) -> [f64; 2] {
        [
            self.normals.sample(StandardNormal),
            self.normals.sample(StandardNormal),
        ]
    }

    pub fn step(&mut self) -> SrbmStep {
        let g = self.draw();
        self.step_with(g)
    }

    /// Step driven by the given standard normal pair. The pushing problem is
    /// solved station by station: reflection at station 1 pushes station 2
    /// down through the lower-triangular reflection matrix.
    pub fn step_with(&mut self, g: [f64; 2]) -> SrbmStep {
        let l = self.chol;
        let p1 = self.y[0] + self.drift[0] * self.dt + self.sqrt_dt * l[0][0] * g[0];
        let p2 =
            self.y[1] + self.drift[1] * self.dt + self.sqrt_dt * (l[1][0] * g[0] + l[1][1] * g[1]);
        let d1 = (-p1).max(0.0);
        let y1 = if d1 > 0.0 { 0.0 } else { p1 };
        let q2 = p2 - d1;
        let d2 = (-q2).max(0.0);
        let y2 = if d2 > 0.0 { 0.0 } else { q2 };
        self.y = [y1, y2];
        self.regulator[0] += d1;
        self.regulator[1] += d2;
        self.t += self.dt;
        SrbmStep {
            t: self.t,
            y: self.y,
            di: [d1, d2],
        }
    }
}

/// A stored path; the scaled output is `diag(delta)` times the stored state.
#[derive(Clone, Debug, PartialEq)]
pub struct SrbmPath {
    pub dt: f64,
    pub delta: [f64; 2],
    pub start: [f64; 2],
    pub steps: Vec<SrbmStep>,
}

impl SrbmPath {
    pub fn scaled(&self, k: usize) -> [f64; 2] {
        let y = self.steps[k].y;
        [self.delta[0] * y[0], self.delta[1] * y[1]]
    }

    /// Cumulative regulator after each step.
    pub fn regulator(&self) -> Vec<[f64; 2]> {
        let mut acc = [0.0; 2];
        self.steps
            .iter()
            .map(|s| {
                acc[0] += s.di[0];
                acc[1] += s.di[1];
                acc
            })
            .collect()
    }

    /// Nonnegativity and discrete complementarity at every step.
    pub fn invariants_hold(&self) -> bool {
        self.steps.iter().all(|s| {
            s.y.iter().all(|v| *v >= 0.0)
                && s.di.iter().all(|d| *d >= 0.0)
                && (0..2).all(|i| s.di[i] == 0.0 || s.y[i] == 0.0)
        })
    }

    /// CSV `t,y1,y2,i1,i2` with the scaled state and cumulative regulator.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(["t", "y1", "y2", "i1", "i2"]).map_err(io)?;
        for (k, reg) in self.regulator().iter().enumerate() {
            let y = self.scaled(k);
            let t = self.steps[k].t;
            w.write_record([t, y[0], y[1], reg[0], reg[1]].map(crate::report::num))
                .map_err(io)?;
        }
        w.flush().map_err(|e| Error::Io(e.to_string()))
    }
}

pub fn srbm_simulate(
    params: &TandemRbmParams,
    dt: f64,
    horizon: f64,
    start: [f64; 2],
    seed: u64,
) -> Result<SrbmPath> {
    let mut stepper = SrbmStepper::new(params, dt, start, seed)?;
    let n = steps_for(horizon, dt)?;
    let steps = (0..n).map(|_| stepper.step()).collect();
    Ok(SrbmPath {
        dt,
        delta: params.delta,
        start,
        steps,
    })
}

fn steps_for(horizon: f64, dt: f64) -> Result<u64> {
    if !(horizon >= 0.0) || !horizon.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "horizon must be finite and nonnegative, got {horizon}"
        )));
    }
    Ok((horizon / dt).round() as u64)
}

/// Scaled states read every `spacing` time units after `burn_in`.
pub fn srbm_stationary_samples(
    params: &TandemRbmParams,
    dt: f64,
    burn_in: f64,
    count: usize,
    spacing: f64,
    seed: u64,
) -> Result<Vec<[f64; 2]>> {
    let mut stepper = SrbmStepper::new(params, dt, [0.0; 2], seed)?;
    if count == 0 {
        return Ok(Vec::new());
    }
    let per = steps_for(spacing, dt)?.max(1);
    for _ in 0..steps_for(burn_in, dt)? {
        stepper.step();
    }
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        for _ in 0..per {
            stepper.step();
        }
        let y = stepper.state();
        out.push([params.delta[0] * y[0], params.delta[1] * y[1]]);
    }
    Ok(out)
}

/// Long-run averages of the scaled state and regulator rates.
#[derive(Clone, Debug, PartialEq)]
pub struct SrbmAverages {
    pub mean: [EstimateCI; 2],
    /// Regulator growth per unit time (unscaled).
    pub regulator_rate: [f64; 2],
    pub invariant_violations: u64,
    pub steps: u64,
}

/// Batch-means averages of `diag(delta) Y` after `burn_in`.
pub fn srbm_averages(
    params: &TandemRbmParams,
    dt: f64,
    burn_in: f64,
    horizon: f64,
    seed: u64,
) -> Result<SrbmAverages> {
    let mut stepper = SrbmStepper::new(params, dt, [0.0; 2], seed)?;
    for _ in 0..steps_for(burn_in, dt)? {
        stepper.step();
    }
    let mut sums = BatchSums::new(steps_for(horizon, dt)?)?;
    let reg0 = stepper.regulator();
    let mut violations = 0;
    for k in 0..sums.steps {
        let s = stepper.step();
        violations += u64::from(!step_ok(&s));
        sums.add(k, s.y, dt);
    }
    let reg = stepper.regulator();
    let t = sums.steps as f64 * dt;
    Ok(SrbmAverages {
        mean: sums.estimates(params.delta)?,
        regulator_rate: [(reg[0] - reg0[0]) / t, (reg[1] - reg0[1]) / t],
        invariant_violations: violations,
        steps: sums.steps,
    })
}

fn step_ok(s: &SrbmStep) -> bool {
    (0..2).all(|i| s.y[i] >= 0.0 && s.di[i] >= 0.0 && (s.di[i] == 0.0 || s.y[i] == 0.0))
}

struct BatchSums {
    steps: u64,
    per_batch: u64,
    y: Vec<[f64; 2]>,
    time: Vec<f64>,
}

impl BatchSums {
    fn new(steps: u64) -> Result<Self> {
        let per_batch = steps / DEFAULT_BATCHES as u64;
        if per_batch == 0 {
            return Err(Error::InsufficientData(format!(
                "{steps} steps cannot fill {DEFAULT_BATCHES} batches"
            )));
        }
        Ok(Self {
            steps: per_batch * DEFAULT_BATCHES as u64,
            per_batch,
            y: vec![[0.0; 2]; DEFAULT_BATCHES],
            time: vec![0.0; DEFAULT_BATCHES],
        })
    }

    fn add(&mut self, k: u64, y: [f64; 2], dt: f64) {
        let b = (k / self.per_batch) as usize;
        self.y[b][0] += y[0] * dt;
        self.y[b][1] += y[1] * dt;
        self.time[b] += dt;
    }

    fn estimates(&self, delta: [f64; 2]) -> Result<[EstimateCI; 2]> {
        let coord = |i: usize| -> Result<EstimateCI> {
            let num: Vec<f64> = self.y.iter().map(|y| delta[i] * y[i]).collect();
            ratio_estimate(&num, &self.time, DEFAULT_CONFIDENCE)
        };
        Ok([coord(0)?, coord(1)?])
    }

    fn paired_diff(&self, other: &Self, delta: [f64; 2]) -> Result<[EstimateCI; 2]> {
        let coord = |i: usize| -> Result<EstimateCI> {
            let num: Vec<f64> = self
                .y
                .iter()
                .zip(&other.y)
                .map(|(a, b)| delta[i] * (a[i] - b[i]))
                .collect();
            ratio_estimate(&num, &self.time, DEFAULT_CONFIDENCE)
        };
        Ok([coord(0)?, coord(1)?])
    }
}

/// Stationary means at `dt` and `dt / 2` on coupled Brownian increments.
#[derive(Clone, Debug, PartialEq)]
pub struct HalvingReport {
    pub dt: f64,
    pub coarse: [EstimateCI; 2],
    pub fine: [EstimateCI; 2],
    /// Coarse minus fine, paired per batch.
    pub diff: [EstimateCI; 2],
    /// Each coordinate's change is below the coarse estimate's half-width.
    pub pass: bool,
}

pub fn dt_halving_check(
    params: &TandemRbmParams,
    dt: f64,
    burn_in: f64,
    horizon: f64,
    seed: u64,
) -> Result<HalvingReport> {
    let mut coarse = SrbmStepper::new(params, dt, [0.0; 2], seed)?;
    let mut fine = SrbmStepper::new(params, 0.5 * dt, [0.0; 2], seed)?;
    let pair = |coarse: &mut SrbmStepper, fine: &mut SrbmStepper| {
        let a = fine.draw();
        let b = fine.draw();
        let fa = fine.step_with(a);
        let fb = fine.step_with(b);
        let g = [(a[0] + b[0]) / 2f64.sqrt(), (a[1] + b[1]) / 2f64.sqrt()];
        (coarse.step_with(g), fa, fb)
    };
    for _ in 0..steps_for(burn_in, dt)? {
        pair(&mut coarse, &mut fine);
    }
    let mut sc = BatchSums::new(steps_for(horizon, dt)?)?;
    let mut sf = BatchSums::new(steps_for(horizon, dt)?)?;
    for k in 0..sc.steps {
        let (c, fa, fb) = pair(&mut coarse, &mut fine);
        sc.add(k, c.y, dt);
        sf.add(k, fa.y, 0.5 * dt);
        sf.add(k, fb.y, 0.5 * dt);
    }
    let c = sc.estimates(params.delta)?;
    let f = sf.estimates(params.delta)?;
    let diff = sc.paired_diff(&sf, params.delta)?;
    let pass = (0..2).all(|i| (c[i].point - f[i].point).abs() < c[i].half_width);
    Ok(HalvingReport {
        dt,
        coarse: c,
        fine: f,
        diff,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::{DriftMode, TANDEM_REFLECTION};

    fn params(drift: [f64; 2], sigma: [[f64; 2]; 2]) -> TandemRbmParams {
        TandemRbmParams {
            delta: [0.2, 0.2],
            mu: [1.0, 1.0],
            sigma,
            r: TANDEM_REFLECTION,
            drift_mode: DriftMode::GeneratorConsistent,
            drift,
        }
    }

    #[test]
    fn zero_noise_zero_drift_is_constant() {
        let p = params([0.0, 0.0], [[0.0; 2]; 2]);
        let path = srbm_simulate(&p, 1e-3, 1.0, [1.0, 1.0], 1).unwrap();
        assert!(path
            .steps
            .iter()
            .all(|s| s.y == [1.0, 1.0] && s.di == [0.0, 0.0]));
    }

    #[test]
    fn deterministic_skeleton_of_the_reflection_map() {
        let p = params([-1.0, 0.0], [[0.0; 2]; 2]);
        let path = srbm_simulate(&p, 1e-3, 1.0, [0.5, 1.0], 1).unwrap();
        let end = path.steps.last().unwrap();
        assert_eq!(end.y[0], 0.0);
        assert!((end.y[1] - 0.5).abs() < 1e-9, "{:?}", end.y);
        let reg = path.regulator();
        assert!((reg.last().unwrap()[0] - 0.5).abs() < 1e-9);
        assert!(path.invariants_hold());
    }

    #[test]
    fn non_psd_rejected() {
        let p = params([0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]]);
        assert_eq!(
            srbm_simulate(&p, 1e-3, 1.0, [0.0; 2], 1).unwrap_err(),
            Error::NotPositiveSemidefinite
        );
    }

    #[test]
    fn samples_nonnegative_and_empty_count() {
        let p = params([-0.2, -0.1], [[1.8, -1.0], [-1.0, 2.0]]);
        assert!(srbm_stationary_samples(&p, 1e-2, 1.0, 0, 1.0, 1)
            .unwrap()
            .is_empty());
        let s = srbm_stationary_samples(&p, 1e-2, 10.0, 500, 0.5, 1).unwrap();
        assert!(s.iter().all(|y| y[0] >= 0.0 && y[1] >= 0.0));
    }

    #[test]
    fn path_csv_has_header() {
        let p = params([-0.2, -0.1], [[1.8, -1.0], [-1.0, 2.0]]);
        let path = srbm_simulate(&p, 1e-2, 0.05, [0.0; 2], 1).unwrap();
        let mut buf = Vec::new();
        path.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,y1,y2,i1,i2\n"));
        assert_eq!(text.lines().count(), 6);
    }
}
