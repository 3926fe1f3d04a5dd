//! Diffusion parameters of the three models, the explicit G/G/1 error-bound
//! formulas, and the JSQ state-space-collapse quantity.

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::palm::{EstimateCI, PalmAccumulators, ProbeSet, Slot, TimeId};
use crate::stein::DiffusionParams1D;

/// Drift convention of the unscaled tandem Brownian motion.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftMode {
    /// `b = -R mu`.
    RateOnly,
    /// `b = -R (delta1 mu1, delta2 mu2)`, so that `diag(delta) b` equals the
    /// first-order coefficients of the tandem generator.
    #[default]
    GeneratorConsistent,
}

/// Parameters of the tandem semimartingale reflected Brownian motion.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TandemRbmParams {
    pub delta: [f64; 2],
    pub mu: [f64; 2],
    pub sigma: [[f64; 2]; 2],
    pub r: [[f64; 2]; 2],
    pub drift_mode: DriftMode,
    pub drift: [f64; 2],
}

pub const TANDEM_REFLECTION: [[f64; 2]; 2] = [[1.0, 0.0], [-1.0, 1.0]];

impl TandemRbmParams {
    pub fn from_model(model: &ModelSpec, drift_mode: DriftMode) -> Result<Self> {
        model.require("tandem")?;
        let l = model.lambda();
        let mu = [model.mu(0), model.mu(1)];
        let delta = [model.spare()[0], model.spare()[1]];
        let a = l * model.arrival_clock().scv();
        let s1 = mu[0] * model.service_clock(0).scv();
        let s2 = mu[1] * model.service_clock(1).scv();
        let sigma = [[a + s1, -s1], [-s1, s1 + s2]];
        let v = match drift_mode {
            DriftMode::RateOnly => mu,
            DriftMode::GeneratorConsistent => [delta[0] * mu[0], delta[1] * mu[1]],
        };
        let r = TANDEM_REFLECTION;
        let drift = [
            -(r[0][0] * v[0] + r[0][1] * v[1]),
            -(r[1][0] * v[0] + r[1][1] * v[1]),
        ];
        Ok(Self {
            delta,
            mu,
            sigma,
            r,
            drift_mode,
            drift,
        })
    }

    /// `diag(delta) b`, the drift of the scaled process.
    pub fn scaled_drift(&self) -> [f64; 2] {
        [self.delta[0] * self.drift[0], self.delta[1] * self.drift[1]]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DiffusionParams {
    OneDim(DiffusionParams1D),
    Tandem(TandemRbmParams),
}

/// `theta = mu delta^2`, `sigma2 = delta^2 (lambda c_U^2 + mu c_S^2)` for the
/// single-server queue; `n mu` replaces `mu` for JSQ.
pub fn diffusion_params_1d(model: &ModelSpec) -> Result<DiffusionParams1D> {
    if model.is_tandem() {
        return Err(Error::WrongModel {
            expected: "gg1 or jsq",
            got: "tandem",
        });
    }
    let d = model.delta();
    let capacity = model.stations() as f64 * model.mu(0);
    let theta = capacity * d * d;
    let sigma2 = d
        * d
        * (model.lambda() * model.arrival_clock().scv() + capacity * model.service_clock(0).scv());
    DiffusionParams1D::new(theta, sigma2, d)
}

pub fn diffusion_params(model: &ModelSpec, drift_mode: DriftMode) -> Result<DiffusionParams> {
    if model.is_tandem() {
        Ok(DiffusionParams::Tandem(TandemRbmParams::from_model(
            model, drift_mode,
        )?))
    } else {
        Ok(DiffusionParams::OneDim(diffusion_params_1d(model)?))
    }
}

/// How `E(R_a | X = 0)` enters the first bound.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BoundMode {
    /// `delta^{-1/2} lambda E U^3 / 3`.
    Crude,
    /// `delta^{-1/2} (lambda E U^3 / 3)^{1/2}`, the Cauchy-Schwarz bound with
    /// the square root kept.
    CrudeRoot,
    /// Upper confidence edge of a simulated estimate.
    Simulated,
}

impl BoundMode {
    pub fn name(self) -> &'static str {
        match self {
            BoundMode::Crude => "crude",
            BoundMode::CrudeRoot => "crude_root",
            BoundMode::Simulated => "simulated",
        }
    }
}

/// Primitive inputs of the bound formulas.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundInputs {
    pub delta: f64,
    pub lambda: f64,
    pub mu: f64,
    pub cu2: f64,
    pub cs2: f64,
    pub eu2: f64,
    pub eu3: f64,
    pub es2: f64,
    pub abs_u: f64,
    pub abs_s: f64,
    pub cond_residual: f64,
    pub sigma2: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundReport {
    pub mode: BoundMode,
    pub eps0: f64,
    pub eps_a: f64,
    pub eps_d: f64,
    pub total: f64,
    pub theta: f64,
    pub inputs: BoundInputs,
}

impl BoundInputs {
    pub fn evaluate(&self) -> (f64, f64, f64) {
        let BoundInputs {
            delta: d,
            lambda: l,
            mu: m,
            cu2,
            cs2,
            eu2,
            es2,
            abs_u,
            abs_s,
            cond_residual,
            sigma2,
            ..
        } = *self;
        let eps0 = d * (l * l * eu2 / 2.0 + (d + m * l * es2 / 2.0) + l * cond_residual + 1.0);
        let pre = 2.0 * d.powi(3) / sigma2;
        let common = m * l * eu2 / 2.0 + d + m * l * es2 / 2.0;
        let eps_a =
            pre * l * (abs_u / 3.0 + cu2 * common + cu2 * (2.0 + m * l * eu2 / 2.0 + m * m * es2));
        let eps_d = pre
            * (abs_s * l
                + cs2 * l * common
                + cs2 * m * (d * d + d * (2.0 + l * l * es2 / 2.0 + l * l * eu2)))
            + 0.5 * d * cs2;
        (eps0, eps_a, eps_d)
    }
}

/// Evaluates the three error-bound formulas for a G/G/1 model.
pub fn gg1_error_bounds(
    model: &ModelSpec,
    mode: BoundMode,
    conditional: Option<&EstimateCI>,
) -> Result<BoundReport> {
    model.require("gg1")?;
    let p = diffusion_params_1d(model)?;
    let u = model.arrival_clock();
    let s = model.service_clock(0);
    let d = model.delta();
    let l = model.lambda();
    let eu3 = u.moment(3)?;
    let cond_residual = match mode {
        BoundMode::Crude => l * eu3 / (3.0 * d.sqrt()),
        BoundMode::CrudeRoot => (l * eu3 / 3.0).sqrt() / d.sqrt(),
        BoundMode::Simulated => conditional
            .ok_or_else(|| {
                Error::InvalidArgument(
                    "simulated mode needs a conditional residual estimate".into(),
                )
            })?
            .upper(),
    };
    let inputs = BoundInputs {
        delta: d,
        lambda: l,
        mu: model.mu(0),
        cu2: u.scv(),
        cs2: s.scv(),
        eu2: u.moment(2)?,
        eu3,
        es2: s.moment(2)?,
        abs_u: u.abs_centered_cubed(),
        abs_s: s.abs_centered_cubed(),
        cond_residual,
        sigma2: p.sigma2,
    };
    let (eps0, eps_a, eps_d) = inputs.evaluate();
    Ok(BoundReport {
        mode,
        eps0,
        eps_a,
        eps_d,
        total: eps0 + eps_a + eps_d,
        theta: p.theta,
        inputs,
    })
}

/// Probes of `1(Q_i = 0) sum_j Q_j`, one per server.
pub struct SscProbes {
    per_server: Vec<TimeId>,
}

impl SscProbes {
    pub fn register(probes: &mut ProbeSet) -> Result<Self> {
        probes.model().require("jsq")?;
        let n = probes.model().stations();
        let per_server = (0..n)
            .map(|i| {
                probes.time_queues(format!("ssc_{}", i + 1), move |z| {
                    if z.queues[i] == 0 {
                        z.total() as f64
                    } else {
                        0.0
                    }
                })
            })
            .collect();
        Ok(Self { per_server })
    }
}

/// `E(1(Q_i = 0) sum_j Q_j)` averaged over the servers.
pub fn ssc_estimate(
    model: &ModelSpec,
    acc: &PalmAccumulators,
    probes: &SscProbes,
) -> Result<EstimateCI> {
    model.require("jsq")?;
    let w = 1.0 / probes.per_server.len() as f64;
    let lin: Vec<(f64, Slot)> = probes
        .per_server
        .iter()
        .map(|id| (w, Slot::Time(*id)))
        .collect();
    acc.rate(&lin)
}
