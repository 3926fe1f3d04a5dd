//! Numerical verification of the basic adjoint relationship (full and
//! compensated forms) and of the generator-extraction expansions.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::palm::{
    abs_linear_integral, EstimateCI, EventId, PalmAccumulators, ProbeSet, Process, Slot, TimeId,
    WindowId, WindowKind,
};
use crate::sim::SystemState;
use crate::stein::{TestFunction1D, TestFunction2D};

/// Slack for residuals whose batch values are identical (e.g. constant `f`).
const ROUNDOFF: f64 = 1e-12;

pub type ZFn = Arc<dyn Fn(&SystemState) -> f64 + Send + Sync>;
pub type ZPartial = Arc<dyn Fn(&SystemState, usize) -> f64 + Send + Sync>;

/// A function of the full state with its residual-clock partials.
#[derive(Clone)]
pub struct TestFunctionZ {
    pub name: String,
    pub f: ZFn,
    pub d_ra: ZFn,
    /// `d f / d r_{s,i}`.
    pub d_rs: ZPartial,
}

impl TestFunctionZ {
    pub fn new(
        name: &str,
        f: impl Fn(&SystemState) -> f64 + Send + Sync + 'static,
        d_ra: impl Fn(&SystemState) -> f64 + Send + Sync + 'static,
        d_rs: impl Fn(&SystemState, usize) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.to_string(),
            f: Arc::new(f),
            d_ra: Arc::new(d_ra),
            d_rs: Arc::new(d_rs),
        }
    }
}

/// Six functions per model: polynomials in the clocks and smooth saturating
/// functions of the queue times clock polynomials. Clock degree stays at
/// most 3 so segment integrals of the partials are exact.
pub fn full_library(model: &ModelSpec) -> Vec<TestFunctionZ> {
    let m = model.clone();
    let x = move |z: &SystemState| m.scaled_total(&z.queues);
    let zero = |_: &SystemState| 0.0;
    let zero_i = |_: &SystemState, _: usize| 0.0;
    if model.is_tandem() {
        let d = [model.spare()[0], model.spare()[1]];
        let x1 = move |z: &SystemState| d[0] * z.queues[0] as f64;
        let x2 = move |z: &SystemState| d[1] * z.queues[1] as f64;
        return vec![
            TestFunctionZ::new("ra", |z| z.r_a, |_| 1.0, zero_i),
            TestFunctionZ::new("x2", x2, zero, zero_i),
            TestFunctionZ::new(
                "ra_rs1",
                |z| z.r_a * z.r_s[0],
                |z| z.r_s[0],
                |z, i| if i == 0 { z.r_a } else { 0.0 },
            ),
            TestFunctionZ::new(
                "rs1_rs2",
                |z| z.r_s[0] * z.r_s[1],
                zero,
                |z, i| z.r_s[1 - i],
            ),
            TestFunctionZ::new(
                "rs2_sq",
                |z| z.r_s[1] * z.r_s[1],
                zero,
                |z, i| if i == 1 { 2.0 * z.r_s[1] } else { 0.0 },
            ),
            TestFunctionZ::new(
                "sat_x1_rs2",
                move |z| (1.0 - (-x1(z)).exp()) * z.r_s[1],
                zero,
                move |z, i| if i == 1 { 1.0 - (-x1(z)).exp() } else { 0.0 },
            ),
        ];
    }
    let xa = x.clone();
    let xb = x.clone();
    let xc = x.clone();
    let xd = x.clone();
    vec![
        TestFunctionZ::new("ra", |z| z.r_a, |_| 1.0, zero_i),
        TestFunctionZ::new("x", x, zero, zero_i),
        TestFunctionZ::new(
            "ra_rs",
            |z| z.r_a * z.r_s.iter().sum::<f64>(),
            |z| z.r_s.iter().sum(),
            |z, _| z.r_a,
        ),
        TestFunctionZ::new(
            "rs_sq",
            |z| z.r_s.iter().map(|r| r * r).sum(),
            zero,
            |z, i| 2.0 * z.r_s[i],
        ),
        TestFunctionZ::new(
            "sat_x_ra",
            move |z| (1.0 - (-xa(z)).exp()) * z.r_a,
            move |z| 1.0 - (-xb(z)).exp(),
            zero_i,
        ),
        TestFunctionZ::new(
            "tanh_x_ra_rs1",
            move |z| xc(z).tanh() * z.r_a * z.r_s[0],
            move |z| xd(z).tanh() * z.r_s[0],
            {
                let m = model.clone();
                move |z, i| {
                    if i == 0 {
                        m.scaled_total(&z.queues).tanh() * z.r_a
                    } else {
                        0.0
                    }
                }
            },
        ),
    ]
}

/// One estimated term of a relation.
#[derive(Clone, Debug, PartialEq)]
pub struct Term {
    pub id: String,
    pub estimate: EstimateCI,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TermReport {
    pub model: String,
    pub f_id: String,
    pub terms: Vec<Term>,
    /// Sum of all terms, estimated from paired batch totals.
    pub residual: EstimateCI,
}

impl TermReport {
    pub fn pass(&self, threshold: f64) -> bool {
        let scale = self
            .terms
            .iter()
            .map(|t| t.estimate.point.abs())
            .sum::<f64>()
            .max(1.0);
        self.residual.point.abs() <= threshold * self.residual.se + ROUNDOFF * scale
    }
}

struct RelationProbes {
    f_id: String,
    terms: Vec<(String, Slot)>,
}

impl RelationProbes {
    fn report(&self, model: &ModelSpec, acc: &PalmAccumulators) -> Result<TermReport> {
        let mut terms = Vec::with_capacity(self.terms.len());
        for (id, slot) in &self.terms {
            terms.push(Term {
                id: id.clone(),
                estimate: acc.rate(&[(1.0, *slot)])?,
            });
        }
        let all: Vec<(f64, Slot)> = self.terms.iter().map(|(_, s)| (1.0, *s)).collect();
        Ok(TermReport {
            model: model.kind_name().to_string(),
            f_id: self.f_id.clone(),
            terms,
            residual: acc.rate(&all)?,
        })
    }
}

/// Probes of the full relation for a set of functions of the state.
pub struct FullBarProbes {
    relations: Vec<RelationProbes>,
}

impl FullBarProbes {
    /// `-E d_ra f - sum_i E 1(Q_i>0) d_rs_i f + E int Delta f dA + sum_i E int Delta f dD_i`.
    pub fn register(probes: &mut ProbeSet, functions: &[TestFunctionZ]) -> Self {
        let n = probes.model().stations();
        let relations = functions
            .iter()
            .map(|tf| {
                let mut terms = Vec::new();
                let d = tf.d_ra.clone();
                let id = probes.time(format!("{}:drift_ra", tf.name), move |z| -d(z));
                terms.push(("drift_ra".to_string(), Slot::Time(id)));
                for i in 0..n {
                    let d = tf.d_rs.clone();
                    let id = probes.time(format!("{}:drift_rs{}", tf.name, i + 1), move |z| {
                        if z.queues[i] > 0 {
                            -d(z, i)
                        } else {
                            0.0
                        }
                    });
                    terms.push((format!("drift_rs{}", i + 1), Slot::Time(id)));
                }
                let processes =
                    std::iter::once(Process::Arrival).chain((0..n).map(Process::Departure));
                for p in processes {
                    let f = tf.f.clone();
                    let id = probes.event(format!("{}:jump_{p}", tf.name), p, move |rec, after| {
                        f(after) - f(&rec.state_before)
                    });
                    terms.push((format!("jump_{p}"), Slot::Event(id)));
                }
                RelationProbes {
                    f_id: tf.name.clone(),
                    terms,
                }
            })
            .collect();
        Self { relations }
    }

    pub fn reports(&self, model: &ModelSpec, acc: &PalmAccumulators) -> Result<Vec<TermReport>> {
        self.relations
            .iter()
            .map(|r| r.report(model, acc))
            .collect()
    }
}

/// Maps the state to the compensated queue length, with the clocks
/// advanced by `s` time units along the current segment.
#[derive(Clone, Debug, PartialEq)]
pub struct Compensator {
    tandem: bool,
    lambda: f64,
    mu: Vec<f64>,
    delta: Vec<f64>,
}

impl Compensator {
    pub fn new(model: &ModelSpec) -> Self {
        Self {
            tandem: model.is_tandem(),
            lambda: model.lambda(),
            mu: (0..model.stations()).map(|i| model.mu(i)).collect(),
            delta: model.spare().to_vec(),
        }
    }

    fn rs(z: &SystemState, i: usize, s: f64) -> f64 {
        if z.queues[i] > 0 {
            z.r_s[i] - s
        } else {
            z.r_s[i]
        }
    }

    /// Scalar compensated count (G/G/1, JSQ).
    pub fn scalar(&self, z: &SystemState, s: f64) -> f64 {
        let d = self.delta[0];
        let q: f64 = z.queues.iter().map(|q| *q as f64).sum();
        let rs: f64 = (0..z.queues.len())
            .map(|i| self.mu[i] * Self::rs(z, i, s))
            .sum();
        d * (q - self.lambda * (z.r_a - s) + rs)
    }

    /// Compensated pair (tandem).
    pub fn pair(&self, z: &SystemState, s: f64) -> [f64; 2] {
        let (d1, d2) = (self.delta[0], self.delta[1]);
        let (m1, m2) = (self.mu[0], self.mu[1]);
        let r1 = Self::rs(z, 0, s);
        let r2 = Self::rs(z, 1, s);
        [
            d1 * (z.queues[0] as f64 - self.lambda * (z.r_a - s) + m1 * r1),
            d2 * (z.queues[1] as f64 - m1 * r1 + m2 * r2),
        ]
    }

    pub fn is_tandem(&self) -> bool {
        self.tandem
    }
}

/// Test function for the compensated relation.
#[derive(Clone)]
pub enum CompensatedFunction {
    OneDim(String, Arc<dyn TestFunction1D>),
    TwoDim(String, Arc<dyn TestFunction2D>),
}

impl CompensatedFunction {
    pub fn name(&self) -> &str {
        match self {
            CompensatedFunction::OneDim(n, _) | CompensatedFunction::TwoDim(n, _) => n,
        }
    }
}

/// Smooth functions of one variable with known derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Smooth1D {
    Constant,
    Linear,
    /// `x^2 / 2`.
    Quadratic,
    Tanh,
    /// `ln(1 + x^2) / 2`.
    LogQuadratic,
}

impl TestFunction1D for Smooth1D {
    fn value(&self, x: f64) -> f64 {
        match self {
            Smooth1D::Constant => 1.0,
            Smooth1D::Linear => x,
            Smooth1D::Quadratic => 0.5 * x * x,
            Smooth1D::Tanh => x.tanh(),
            Smooth1D::LogQuadratic => 0.5 * (x * x).ln_1p(),
        }
    }

    fn d1(&self, x: f64) -> f64 {
        match self {
            Smooth1D::Constant => 0.0,
            Smooth1D::Linear => 1.0,
            Smooth1D::Quadratic => x,
            Smooth1D::Tanh => 1.0 - x.tanh().powi(2),
            Smooth1D::LogQuadratic => x / (1.0 + x * x),
        }
    }

    fn d2(&self, x: f64) -> f64 {
        match self {
            Smooth1D::Constant | Smooth1D::Linear => 0.0,
            Smooth1D::Quadratic => 1.0,
            Smooth1D::Tanh => {
                let t = x.tanh();
                -2.0 * t * (1.0 - t * t)
            }
            Smooth1D::LogQuadratic => (1.0 - x * x) / (1.0 + x * x).powi(2),
        }
    }

    fn d3(&self, x: f64) -> f64 {
        match self {
            Smooth1D::Constant | Smooth1D::Linear | Smooth1D::Quadratic => 0.0,
            Smooth1D::Tanh => {
                let t = x.tanh();
                (6.0 * t * t - 2.0) * (1.0 - t * t)
            }
            Smooth1D::LogQuadratic => 2.0 * x * (x * x - 3.0) / (1.0 + x * x).powi(3),
        }
    }

    fn sup_d2(&self) -> f64 {
        match self {
            Smooth1D::Constant | Smooth1D::Linear => 0.0,
            Smooth1D::Quadratic | Smooth1D::LogQuadratic => 1.0,
            Smooth1D::Tanh => 4.0 / (3.0 * 3f64.sqrt()),
        }
    }

    fn sup_d3(&self) -> f64 {
        match self {
            Smooth1D::Constant | Smooth1D::Linear | Smooth1D::Quadratic => 0.0,
            Smooth1D::Tanh => 2.0,
            // attained at x = -(sqrt(2) - 1)
            Smooth1D::LogQuadratic => 1.457_106_781_186_548,
        }
    }
}

/// Smooth functions of two variables.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Smooth2D {
    Constant,
    /// `x1 + x2`.
    Sum,
    /// `x1 x2`.
    Product,
    /// `x2^2 / 2`.
    SecondSquared,
    /// `tanh(x1) tanh(x2)`.
    TanhProduct,
    /// `ln(1 + x1^2 + x2^2) / 2`.
    LogRadial,
}

impl TestFunction2D for Smooth2D {
    fn value(&self, x: [f64; 2]) -> f64 {
        match self {
            Smooth2D::Constant => 1.0,
            Smooth2D::Sum => x[0] + x[1],
            Smooth2D::Product => x[0] * x[1],
            Smooth2D::SecondSquared => 0.5 * x[1] * x[1],
            Smooth2D::TanhProduct => x[0].tanh() * x[1].tanh(),
            Smooth2D::LogRadial => 0.5 * (x[0] * x[0] + x[1] * x[1]).ln_1p(),
        }
    }

    fn grad(&self, x: [f64; 2]) -> [f64; 2] {
        match self {
            Smooth2D::Constant => [0.0, 0.0],
            Smooth2D::Sum => [1.0, 1.0],
            Smooth2D::Product => [x[1], x[0]],
            Smooth2D::SecondSquared => [0.0, x[1]],
            Smooth2D::TanhProduct => {
                let (t1, t2) = (x[0].tanh(), x[1].tanh());
                [(1.0 - t1 * t1) * t2, t1 * (1.0 - t2 * t2)]
            }
            Smooth2D::LogRadial => {
                let r = 1.0 + x[0] * x[0] + x[1] * x[1];
                [x[0] / r, x[1] / r]
            }
        }
    }

    fn hessian(&self, x: [f64; 2]) -> [[f64; 2]; 2] {
        match self {
            Smooth2D::Constant | Smooth2D::Sum => [[0.0; 2]; 2],
            Smooth2D::Product => [[0.0, 1.0], [1.0, 0.0]],
            Smooth2D::SecondSquared => [[0.0, 0.0], [0.0, 1.0]],
            Smooth2D::TanhProduct => {
                let (t1, t2) = (x[0].tanh(), x[1].tanh());
                let (s1, s2) = (1.0 - t1 * t1, 1.0 - t2 * t2);
                [
                    [-2.0 * t1 * s1 * t2, s1 * s2],
                    [s1 * s2, -2.0 * t2 * s2 * t1],
                ]
            }
            Smooth2D::LogRadial => {
                let r = 1.0 + x[0] * x[0] + x[1] * x[1];
                let r2 = r * r;
                let off = -2.0 * x[0] * x[1] / r2;
                [
                    [(r - 2.0 * x[0] * x[0]) / r2, off],
                    [off, (r - 2.0 * x[1] * x[1]) / r2],
                ]
            }
        }
    }
}

/// Six functions of the compensated queue length per model; for G/G/1 and
/// JSQ `extra` (typically a Stein solution) replaces the log-quadratic
/// member when given.
pub fn compensated_library(
    model: &ModelSpec,
    extra: Option<(String, Arc<dyn TestFunction1D>)>,
) -> Vec<CompensatedFunction> {
    if model.is_tandem() {
        return [
            ("const", Smooth2D::Constant),
            ("sum", Smooth2D::Sum),
            ("product", Smooth2D::Product),
            ("x2_sq", Smooth2D::SecondSquared),
            ("tanh_product", Smooth2D::TanhProduct),
            ("log_radial", Smooth2D::LogRadial),
        ]
        .into_iter()
        .map(|(n, f)| CompensatedFunction::TwoDim(n.to_string(), Arc::new(f)))
        .collect();
    }
    let mut v: Vec<CompensatedFunction> = [
        ("const", Smooth1D::Constant),
        ("x", Smooth1D::Linear),
        ("x_sq", Smooth1D::Quadratic),
        ("tanh", Smooth1D::Tanh),
        ("log_quadratic", Smooth1D::LogQuadratic),
    ]
    .into_iter()
    .map(|(n, f)| CompensatedFunction::OneDim(n.to_string(), Arc::new(f)))
    .collect();
    match extra {
        Some((n, f)) => v.push(CompensatedFunction::OneDim(n, f)),
        None => v.push(CompensatedFunction::OneDim(
            "linear_plus_tanh".into(),
            Arc::new(LinearPlusTanh),
        )),
    }
    v
}

/// `x / 2 + tanh(x) / 2`, a 1-Lipschitz smooth function.
#[derive(Clone, Copy, Debug)]
struct LinearPlusTanh;

impl TestFunction1D for LinearPlusTanh {
    fn value(&self, x: f64) -> f64 {
        0.5 * (x + x.tanh())
    }
    fn d1(&self, x: f64) -> f64 {
        0.5 * (1.0 + Smooth1D::Tanh.d1(x))
    }
    fn d2(&self, x: f64) -> f64 {
        0.5 * Smooth1D::Tanh.d2(x)
    }
    fn d3(&self, x: f64) -> f64 {
        0.5 * Smooth1D::Tanh.d3(x)
    }
    fn sup_d2(&self) -> f64 {
        0.5 * Smooth1D::Tanh.sup_d2()
    }
    fn sup_d3(&self) -> f64 {
        0.5 * Smooth1D::Tanh.sup_d3()
    }
}

fn eval_comp(f: &CompensatedFunction, c: &Compensator, z: &SystemState, s: f64) -> f64 {
    match f {
        CompensatedFunction::OneDim(_, g) => g.value(c.scalar(z, s)),
        CompensatedFunction::TwoDim(_, g) => g.value(c.pair(z, s)),
    }
}

/// Probes of the compensated relation.
pub struct CompensatedBarProbes {
    relations: Vec<RelationProbes>,
    jump: EventId,
}

impl CompensatedBarProbes {
    /// The drift term is integrated exactly: along a segment the compensated
    /// count moves at exactly the rate multiplying `f'` in the drift term,
    /// so its integral is the change of `f` over the segment.
    pub fn register(probes: &mut ProbeSet, functions: &[CompensatedFunction]) -> Self {
        let model = probes.model().clone();
        let comp = Arc::new(Compensator::new(&model));
        let n = model.stations();
        let relations = functions
            .iter()
            .map(|cf| {
                let name = cf.name().to_string();
                let mut terms = Vec::new();
                let (f, c) = (cf.clone(), comp.clone());
                let id = probes.time_segment(format!("{name}:drift"), move |z, dt| {
                    eval_comp(&f, &c, z, dt) - eval_comp(&f, &c, z, 0.0)
                });
                terms.push(("drift".to_string(), Slot::Time(id)));
                let processes =
                    std::iter::once(Process::Arrival).chain((0..n).map(Process::Departure));
                for p in processes {
                    let (f, c) = (cf.clone(), comp.clone());
                    let id = probes.event(format!("{name}:jump_{p}"), p, move |rec, after| {
                        eval_comp(&f, &c, after, 0.0) - eval_comp(&f, &c, &rec.state_before, 0.0)
                    });
                    terms.push((format!("jump_{p}"), Slot::Event(id)));
                }
                RelationProbes { f_id: name, terms }
            })
            .collect();
        let c = comp.clone();
        let jump = probes.event(
            "compensated_jump_at_arrivals",
            Process::Arrival,
            move |rec, after| {
                if c.is_tandem() {
                    c.pair(after, 0.0)[0] - c.pair(&rec.state_before, 0.0)[0]
                } else {
                    c.scalar(after, 0.0) - c.scalar(&rec.state_before, 0.0)
                }
            },
        );
        Self { relations, jump }
    }

    pub fn reports(&self, model: &ModelSpec, acc: &PalmAccumulators) -> Result<Vec<TermReport>> {
        self.relations
            .iter()
            .map(|r| r.report(model, acc))
            .collect()
    }

    /// Mean jump of the (first) compensated coordinate per arrival.
    pub fn arrival_jump_mean(&self, acc: &PalmAccumulators) -> Result<EstimateCI> {
        acc.per_event_mean(self.jump, Process::Arrival)
    }
}

/// Probes for the three expansion checks of a one-dimensional function.
pub struct ExtractionProbes {
    f_id: String,
    f: Arc<dyn TestFunction1D>,
    lhs0: TimeId,
    fp: TimeId,
    abs_all: TimeId,
    abs_idle: Vec<TimeId>,
    lhs_a: EventId,
    fpp: TimeId,
    cube_a: EventId,
    rs_a: EventId,
    win_a: WindowId,
    lhs_d: Vec<EventId>,
    cube_d: Vec<EventId>,
    rest_d: Vec<EventId>,
    win_d: Vec<WindowId>,
    idle_lead: Vec<WindowId>,
}

impl ExtractionProbes {
    pub fn register(probes: &mut ProbeSet, f_id: &str, f: Arc<dyn TestFunction1D>) -> Result<Self> {
        let model = probes.model().clone();
        if model.is_tandem() {
            return Err(Error::WrongModel {
                expected: "gg1 or jsq",
                got: "tandem",
            });
        }
        let n = model.stations();
        let lambda = model.lambda();
        let mu = model.mu(0);
        let comp = Arc::new(Compensator::new(&model));
        let m2 = model.clone();
        let x = Arc::new(move |z: &SystemState| m2.scaled_total(&z.queues));

        let (g, c) = (f.clone(), comp.clone());
        let lhs0 = probes.time_segment(format!("{f_id}:lhs0"), move |z, dt| {
            g.value(c.scalar(z, dt)) - g.value(c.scalar(z, 0.0))
        });
        let (g, xx) = (f.clone(), x.clone());
        let fp = probes.time_queues(format!("{f_id}:f1"), move |z| g.d1(xx(z)));
        // -lambda R_a + mu sum R_s, plus sum Q on the idle-server events
        let lin = move |z: &SystemState, s: f64, with_q: bool| {
            let q = if with_q { z.total() as f64 } else { 0.0 };
            q - lambda * (z.r_a - s)
                + mu * (0..z.queues.len())
                    .map(|i| Compensator::rs(z, i, s))
                    .sum::<f64>()
        };
        let abs_all = probes.time_segment(format!("{f_id}:abs_lin"), move |z, dt| {
            abs_linear_integral(lin(z, 0.0, false), lin(z, dt, false), dt)
        });
        let abs_idle = (0..n)
            .map(|i| {
                probes.time_segment(format!("{f_id}:abs_lin_idle{}", i + 1), move |z, dt| {
                    if z.queues[i] == 0 {
                        abs_linear_integral(lin(z, 0.0, true), lin(z, dt, true), dt)
                    } else {
                        0.0
                    }
                })
            })
            .collect();
        let (g, c) = (f.clone(), comp.clone());
        let lhs_a = probes.event(
            format!("{f_id}:lhsA"),
            Process::Arrival,
            move |rec, after| {
                g.value(c.scalar(after, 0.0)) - g.value(c.scalar(&rec.state_before, 0.0))
            },
        );
        let (g, xx) = (f.clone(), x.clone());
        let fpp = probes.time_queues(format!("{f_id}:f2"), move |z| g.d2(xx(z)));
        let cube_a = probes.event(format!("{f_id}:cubeA"), Process::Arrival, move |rec, _| {
            (1.0 - lambda * rec.payload).abs().powi(3)
        });
        let rs_a = probes.event(format!("{f_id}:rsA"), Process::Arrival, move |_, z| {
            mu * z.r_s.iter().sum::<f64>()
        });
        let xx = x.clone();
        let win_a = probes.window(
            format!("{f_id}:winA"),
            WindowKind::NextInterarrival,
            move |z, anchor| (xx(z) - anchor).abs(),
        );
        let mut lhs_d = Vec::new();
        let mut cube_d = Vec::new();
        let mut rest_d = Vec::new();
        let mut win_d = Vec::new();
        let mut idle_lead = Vec::new();
        for i in 0..n {
            let k = i + 1;
            let (g, c) = (f.clone(), comp.clone());
            lhs_d.push(probes.event(
                format!("{f_id}:lhsD{k}"),
                Process::Departure(i),
                move |rec, after| {
                    g.value(c.scalar(after, 0.0)) - g.value(c.scalar(&rec.state_before, 0.0))
                },
            ));
            cube_d.push(probes.event(
                format!("{f_id}:cubeD{k}"),
                Process::Departure(i),
                move |rec, _| (1.0 - mu * rec.payload).abs().powi(3),
            ));
            rest_d.push(probes.event(
                format!("{f_id}:restD{k}"),
                Process::Departure(i),
                move |_, z| {
                    let others: f64 = (0..z.r_s.len())
                        .filter(|j| *j != i)
                        .map(|j| mu * z.r_s[j])
                        .sum();
                    (-lambda * z.r_a + others).abs()
                },
            ));
            let xx = x.clone();
            win_d.push(probes.window(
                format!("{f_id}:winD{k}"),
                WindowKind::UntilNextDeparture(i),
                move |z, anchor| (xx(z) - anchor).abs(),
            ));
            let g = f.clone();
            idle_lead.push(probes.window(
                format!("{f_id}:idleD{k}"),
                WindowKind::IdleLead(i),
                move |_, anchor| g.d2(anchor).abs(),
            ));
        }
        Ok(Self {
            f_id: f_id.to_string(),
            f,
            lhs0,
            fp,
            abs_all,
            abs_idle,
            lhs_a,
            fpp,
            cube_a,
            rs_a,
            win_a,
            lhs_d,
            cube_d,
            rest_d,
            win_d,
            idle_lead,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExtractionRow {
    pub model: String,
    pub f_id: String,
    pub term_id: String,
    pub lhs: EstimateCI,
    pub main: EstimateCI,
    /// `lhs - main` from paired batch totals.
    pub diff: EstimateCI,
    pub majorant: EstimateCI,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExtractionReport {
    pub rows: Vec<ExtractionRow>,
}

impl ExtractionReport {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }
}

/// Checks `|lhs - main| <= majorant + threshold * se` for the drift, arrival
/// and departure expansions, with every remainder replaced by a sup norm of
/// `f''` or `f'''` times a simulated absolute path functional.
pub fn extraction_check(
    model: &ModelSpec,
    acc: &PalmAccumulators,
    p: &ExtractionProbes,
    threshold: f64,
) -> Result<ExtractionReport> {
    if model.is_tandem() {
        return Err(Error::WrongModel {
            expected: "gg1 or jsq",
            got: "tandem",
        });
    }
    let n = model.stations();
    let nf = n as f64;
    let l = model.lambda();
    let mu = model.mu(0);
    let d = model.delta();
    let cu = model.arrival_clock().scv();
    let cs = model.service_clock(0).scv();
    let f2 = p.f.sup_d2();
    let f3 = p.f.sup_d3();
    let mut rows = Vec::new();
    let mut row = |term: String,
                   lhs: Vec<(f64, Slot)>,
                   main: Vec<(f64, Slot)>,
                   maj: Vec<(f64, Slot)>|
     -> Result<()> {
        let mut diff = lhs.clone();
        diff.extend(main.iter().map(|(c, s)| (-c, *s)));
        let lhs_e = acc.rate(&lhs)?;
        let main_e = acc.rate(&main)?;
        let diff_e = acc.rate(&diff)?;
        let maj_e = acc.rate(&maj)?;
        let slack =
            threshold * diff_e.se + ROUNDOFF * (lhs_e.point.abs() + main_e.point.abs()).max(1.0);
        let pass = diff_e.point.abs() <= maj_e.point + slack;
        rows.push(ExtractionRow {
            model: model.kind_name().to_string(),
            f_id: p.f_id.clone(),
            term_id: term,
            lhs: lhs_e,
            main: main_e,
            diff: diff_e,
            majorant: maj_e,
            pass,
        });
        Ok(())
    };

    // drift: -n mu delta^2 E f'(X) + n mu delta^2 f'(0)
    let mut maj0 = vec![(f2 * nf * mu * d.powi(3), Slot::Time(p.abs_all))];
    maj0.extend(
        p.abs_idle
            .iter()
            .map(|id| (f2 * d * d * mu, Slot::Time(*id))),
    );
    row(
        "eps0".into(),
        vec![(1.0, Slot::Time(p.lhs0))],
        vec![
            (-nf * mu * d * d, Slot::Time(p.fp)),
            (nf * mu * d * d * p.f.d1(0.0), Slot::Duration),
        ],
        maj0,
    )?;
    // arrivals: 1/2 delta^2 lambda c_U^2 E f''(X)
    row(
        "epsA".into(),
        vec![(1.0, Slot::Event(p.lhs_a))],
        vec![(0.5 * d * d * l * cu, Slot::Time(p.fpp))],
        vec![
            (f3 * d.powi(3) / 6.0, Slot::Event(p.cube_a)),
            (f3 * 0.5 * d.powi(3) * cu, Slot::Event(p.rs_a)),
            (f3 * 0.5 * d * d * l * cu, Slot::Window(p.win_a)),
        ],
    )?;
    // departures: 1/2 delta^2 mu c_S^2 E f''(X) per server
    for i in 0..n {
        let mut maj = vec![
            (f3 * d.powi(3) / 6.0, Slot::Event(p.cube_d[i])),
            (f3 * 0.5 * d.powi(3) * cs, Slot::Event(p.rest_d[i])),
            (f3 * 0.5 * d * d * mu * cs, Slot::Window(p.win_d[i])),
        ];
        if model.is_gg1() {
            maj.push((0.5 * d.powi(3) * mu * cs * p.f.d2(d).abs(), Slot::Duration));
        } else {
            maj.push((0.5 * d * d * mu * cs, Slot::Window(p.idle_lead[i])));
        }
        let id = if n == 1 {
            "epsD".to_string()
        } else {
            format!("epsD{}", i + 1)
        };
        row(
            id,
            vec![(1.0, Slot::Event(p.lhs_d[i]))],
            vec![(0.5 * d * d * mu * cs, Slot::Time(p.fpp))],
            maj,
        )?;
    }
    Ok(ExtractionReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ClockSpec;
    use crate::palm::{simulate, RunConfig};

    fn fd_check(f: &dyn TestFunction1D, x: f64) {
        let h = 1e-5;
        let num1 = (f.value(x + h) - f.value(x - h)) / (2.0 * h);
        let num2 = (f.d1(x + h) - f.d1(x - h)) / (2.0 * h);
        let num3 = (f.d2(x + h) - f.d2(x - h)) / (2.0 * h);
        for (a, b) in [(num1, f.d1(x)), (num2, f.d2(x)), (num3, f.d3(x))] {
            assert!((a - b).abs() <= 1e-6 * (1.0 + b.abs()), "{a} vs {b} at {x}");
        }
    }

    #[test]
    fn smooth_derivatives_match_differences() {
        for f in [
            Smooth1D::Constant,
            Smooth1D::Linear,
            Smooth1D::Quadratic,
            Smooth1D::Tanh,
            Smooth1D::LogQuadratic,
        ] {
            for x in [-2.0, -0.4, 0.0, 0.3, 1.7, 5.0] {
                fd_check(&f, x);
                assert!(f.d2(x).abs() <= f.sup_d2() + 1e-12);
                assert!(f.d3(x).abs() <= f.sup_d3() + 1e-12);
            }
        }
    }

    #[test]
    fn smooth_2d_derivatives_match_differences() {
        let h = 1e-5;
        for f in [
            Smooth2D::Constant,
            Smooth2D::Sum,
            Smooth2D::Product,
            Smooth2D::SecondSquared,
            Smooth2D::TanhProduct,
            Smooth2D::LogRadial,
        ] {
            for x in [[0.3, -0.7], [1.5, 2.0], [0.0, 0.0]] {
                let g = f.grad(x);
                let hs = f.hessian(x);
                for k in 0..2 {
                    let mut up = x;
                    let mut dn = x;
                    up[k] += h;
                    dn[k] -= h;
                    let num = (f.value(up) - f.value(dn)) / (2.0 * h);
                    assert!((num - g[k]).abs() < 1e-6 * (1.0 + g[k].abs()));
                    let (gu, gd) = (f.grad(up), f.grad(dn));
                    for j in 0..2 {
                        let num = (gu[j] - gd[j]) / (2.0 * h);
                        assert!((num - hs[k][j]).abs() < 1e-6 * (1.0 + hs[k][j].abs()));
                    }
                }
            }
        }
    }

    #[test]
    fn arrival_jump_of_compensated_count_is_exact() {
        let m = ModelSpec::gg1(ClockSpec::erlang(2, 1.6), ClockSpec::exponential(1.0)).unwrap();
        let c = Compensator::new(&m);
        let mut sim = crate::sim::Simulator::new(&m, 3);
        for _ in 0..10_000 {
            let rec = sim.step().clone();
            if rec.kind == crate::sim::EventKind::Arrival {
                let jump = c.scalar(sim.state(), 0.0) - c.scalar(&rec.state_before, 0.0);
                let expect = m.delta() * (1.0 - m.lambda() * rec.payload);
                assert!((jump - expect).abs() < 1e-9, "{jump} vs {expect}");
            }
        }
    }

    #[test]
    fn mm1_relations_hold() {
        let m = ModelSpec::gg1(ClockSpec::exponential(0.7), ClockSpec::exponential(1.0)).unwrap();
        let mut p = ProbeSet::new(&m);
        let full = FullBarProbes::register(&mut p, &full_library(&m));
        let comp = CompensatedBarProbes::register(&mut p, &compensated_library(&m, None));
        let ext =
            ExtractionProbes::register(&mut p, "x_sq", Arc::new(Smooth1D::Quadratic)).unwrap();
        let acc = simulate(&m, &RunConfig::new(1_000_000), &p, 5).unwrap();
        for r in full
            .reports(&m, &acc)
            .unwrap()
            .iter()
            .chain(&comp.reports(&m, &acc).unwrap())
        {
            assert!(r.pass(3.0), "{r:?}");
        }
        assert!(comp.arrival_jump_mean(&acc).unwrap().within(0.0, 3.0));
        let e = extraction_check(&m, &acc, &ext, 3.0).unwrap();
        assert!(e.all_pass(), "{e:?}");
    }
}
