//! Path-functional estimators with batch-means confidence intervals.
//!
//! Three kinds of probes are accumulated along a simulated path:
//!
//! * time probes `f(Z(t))`, integrated over each inter-event segment (4-point
//!   Gauss-Legendre, exact for probes polynomial of degree <= 7 in the
//!   residual clocks; probes that only read the queues are integrated as
//!   rectangles; segment probes supply their exact segment integral);
//! * event probes `g(Z(t-), Z(t))` summed over the epochs of a counting
//!   process;
//! * window probes, the inner integral `int_0^{W(t)} f(X(t+u)) du` started
//!   at each epoch of a counting process, where the window length `W(t)` is
//!   computed from the state at the epoch (resolved retrospectively when it
//!   depends on a future routing decision).
//!
//! The measured part of the run is cut into batches by event count. Every
//! estimate is a ratio of two linear combinations of batch totals; its
//! standard error comes from the linearized batch residuals and its
//! half-width from the Student t quantile.

use std::fmt;

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::sim::{EventKind, EventRecord, Observer, RunStats, Simulator, SystemState};

pub const DEFAULT_BATCHES: usize = 32;
pub const DEFAULT_CONFIDENCE: f64 = 0.99;

const GL_NODES: [f64; 4] = [
    -0.861_136_311_594_052_6,
    -0.339_981_043_584_856_3,
    0.339_981_043_584_856_3,
    0.861_136_311_594_052_6,
];
const GL_WEIGHTS: [f64; 4] = [
    0.347_854_845_137_453_8,
    0.652_145_154_862_546_1,
    0.652_145_154_862_546_1,
    0.347_854_845_137_453_8,
];

/// A counting process of the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Process {
    Arrival,
    Departure(usize),
}

impl Process {
    fn matches(self, kind: EventKind) -> bool {
        match (self, kind) {
            (Process::Arrival, EventKind::Arrival) => true,
            (Process::Departure(i), EventKind::Departure(j)) => i == j,
            _ => false,
        }
    }

    fn count_slot(self) -> usize {
        match self {
            Process::Arrival => 0,
            Process::Departure(i) => 1 + i,
        }
    }
}

impl fmt::Display for Process {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Process::Arrival => write!(f, "A"),
            Process::Departure(i) => write!(f, "D{}", i + 1),
        }
    }
}

/// Window attached to each epoch `t` of a counting process.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum WindowKind {
    /// `[t, t + U(t)]` at arrivals.
    NextInterarrival,
    /// `[t, t + 1(Q_i(t)=0) L_i(t) + S_i(t)]` at departures from station `i`,
    /// where `L_i(t)` is the time until the next job enters station `i`
    /// (the arrival residual `R_a(t)` when only external arrivals feed it).
    UntilNextDeparture(usize),
    /// `[t, t + 1(Q_i(t)=0) L_i(t)]` at departures from station `i`.
    IdleLead(usize),
}

impl WindowKind {
    pub fn process(self) -> Process {
        match self {
            WindowKind::NextInterarrival => Process::Arrival,
            WindowKind::UntilNextDeparture(i) | WindowKind::IdleLead(i) => Process::Departure(i),
        }
    }
}

impl fmt::Display for WindowKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WindowKind::NextInterarrival => write!(f, "A:next_interarrival"),
            WindowKind::UntilNextDeparture(i) => write!(f, "D{}:until_next_departure", i + 1),
            WindowKind::IdleLead(i) => write!(f, "D{}:idle_lead", i + 1),
        }
    }
}

pub type StateFn = Box<dyn Fn(&SystemState) -> f64 + Send + Sync>;
/// Exact integral over one segment: `(state at the segment start, length)`.
pub type SegmentFn = Box<dyn Fn(&SystemState, f64) -> f64 + Send + Sync>;
pub type EventFn = Box<dyn Fn(&EventRecord, &SystemState) -> f64 + Send + Sync>;
/// Window integrand: `(state at t+u, scaled count X(t-) at the epoch)`.
/// Only the queues of the state may be read; they are constant per segment.
pub type WindowFn = Box<dyn Fn(&SystemState, f64) -> f64 + Send + Sync>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TimeId(usize);
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct EventId(usize);
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct WindowId(usize);

enum TimeFn {
    Clocks(StateFn),
    Queues(StateFn),
    Segment(SegmentFn),
}

struct TimeProbe {
    name: String,
    f: TimeFn,
}

struct EventProbe {
    name: String,
    process: Process,
    g: EventFn,
}

struct WindowProbe {
    name: String,
    kind: WindowKind,
    g: WindowFn,
}

/// The set of probes evaluated during a run.
pub struct ProbeSet {
    model: ModelSpec,
    time: Vec<TimeProbe>,
    event: Vec<EventProbe>,
    window: Vec<WindowProbe>,
}

impl ProbeSet {
    pub fn new(model: &ModelSpec) -> Self {
        Self {
            model: model.clone(),
            time: Vec::new(),
            event: Vec::new(),
            window: Vec::new(),
        }
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    /// Time probe that may depend on the residual clocks.
    pub fn time(
        &mut self,
        name: impl Into<String>,
        f: impl Fn(&SystemState) -> f64 + Send + Sync + 'static,
    ) -> TimeId {
        self.time.push(TimeProbe {
            name: name.into(),
            f: TimeFn::Clocks(Box::new(f)),
        });
        TimeId(self.time.len() - 1)
    }

    /// Time probe that reads only the queues.
    pub fn time_queues(
        &mut self,
        name: impl Into<String>,
        f: impl Fn(&SystemState) -> f64 + Send + Sync + 'static,
    ) -> TimeId {
        self.time.push(TimeProbe {
            name: name.into(),
            f: TimeFn::Queues(Box::new(f)),
        });
        TimeId(self.time.len() - 1)
    }

    /// Time probe given by its exact integral over each segment.
    pub fn time_segment(
        &mut self,
        name: impl Into<String>,
        f: impl Fn(&SystemState, f64) -> f64 + Send + Sync + 'static,
    ) -> TimeId {
        self.time.push(TimeProbe {
            name: name.into(),
            f: TimeFn::Segment(Box::new(f)),
        });
        TimeId(self.time.len() - 1)
    }

    pub fn event(
        &mut self,
        name: impl Into<String>,
        process: Process,
        g: impl Fn(&EventRecord, &SystemState) -> f64 + Send + Sync + 'static,
    ) -> EventId {
        self.event.push(EventProbe {
            name: name.into(),
            process,
            g: Box::new(g),
        });
        EventId(self.event.len() - 1)
    }

    pub fn window(
        &mut self,
        name: impl Into<String>,
        kind: WindowKind,
        g: impl Fn(&SystemState, f64) -> f64 + Send + Sync + 'static,
    ) -> WindowId {
        self.window.push(WindowProbe {
            name: name.into(),
            kind,
            g: Box::new(g),
        });
        WindowId(self.window.len() - 1)
    }

    pub fn time_name(&self, id: TimeId) -> &str {
        &self.time[id.0].name
    }

    pub fn event_name(&self, id: EventId) -> &str {
        &self.event[id.0].name
    }

    pub fn window_name(&self, id: WindowId) -> &str {
        &self.window[id.0].name
    }

    pub fn event_process(&self, id: EventId) -> Process {
        self.event[id.0].process
    }

    pub fn window_kind(&self, id: WindowId) -> WindowKind {
        self.window[id.0].kind
    }

    fn layout(&self) -> Layout {
        Layout {
            time: self.time.len(),
            event: self.event.len(),
            window: self.window.len(),
            stations: self.model.stations(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Layout {
    time: usize,
    event: usize,
    window: usize,
    stations: usize,
}

/// Quantities accumulated over one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub duration: f64,
    pub time: Vec<f64>,
    pub event: Vec<f64>,
    pub window: Vec<f64>,
    /// Event counts: arrivals, then departures per station.
    pub counts: Vec<f64>,
    pub idle_sum: f64,
    pub idle_sum_sq: f64,
    pub idle_count: f64,
}

impl Batch {
    fn new(layout: Layout) -> Self {
        Self {
            duration: 0.0,
            time: vec![0.0; layout.time],
            event: vec![0.0; layout.event],
            window: vec![0.0; layout.window],
            counts: vec![0.0; 1 + layout.stations],
            idle_sum: 0.0,
            idle_sum_sq: 0.0,
            idle_count: 0.0,
        }
    }

    fn slot(&self, slot: Slot) -> f64 {
        match slot {
            Slot::Duration => self.duration,
            Slot::Time(id) => self.time[id.0],
            Slot::Event(id) => self.event[id.0],
            Slot::Window(id) => self.window[id.0],
            Slot::Count(p) => self.counts[p.count_slot()],
            Slot::IdleSum => self.idle_sum,
            Slot::IdleSumSq => self.idle_sum_sq,
            Slot::IdleCount => self.idle_count,
        }
    }
}

/// One accumulated quantity of a batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Slot {
    Duration,
    Time(TimeId),
    Event(EventId),
    Window(WindowId),
    Count(Process),
    /// Total length of idle periods that ended at an arrival.
    IdleSum,
    IdleSumSq,
    IdleCount,
}

/// Linear combination of slots.
pub type Linear<'a> = &'a [(f64, Slot)];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EstimateCI {
    pub point: f64,
    /// Standard error.
    pub se: f64,
    pub half_width: f64,
    pub batches: usize,
    pub confidence: f64,
}

impl EstimateCI {
    pub fn exact(point: f64) -> Self {
        Self {
            point,
            se: 0.0,
            half_width: 0.0,
            batches: 0,
            confidence: DEFAULT_CONFIDENCE,
        }
    }

    pub fn lower(&self) -> f64 {
        self.point - self.half_width
    }

    pub fn upper(&self) -> f64 {
        self.point + self.half_width
    }

    /// `|point - target| <= k * se`.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.point - target).abs() <= k * self.se
    }
}

/// `int_0^dt |l(s)| ds` for `l` linear with `l(0) = l0`, `l(dt) = l1`.
pub fn abs_linear_integral(l0: f64, l1: f64, dt: f64) -> f64 {
    if l0 * l1 >= 0.0 {
        0.5 * dt * (l0.abs() + l1.abs())
    } else {
        0.5 * dt * (l0 * l0 + l1 * l1) / (l0 - l1).abs()
    }
}

/// Student t quantile for a two-sided interval.
pub fn t_quantile(confidence: f64, dof: usize) -> f64 {
    let dof = dof.max(1) as f64;
    StudentsT::new(0.0, 1.0, dof)
        .expect("valid t distribution")
        .inverse_cdf(0.5 + 0.5 * confidence)
}

/// Batch-means estimate of `sum(num) / sum(den)` from per-batch values.
pub fn ratio_estimate(num: &[f64], den: &[f64], confidence: f64) -> Result<EstimateCI> {
    let k = num.len();
    if k < 2 || den.len() != k {
        return Err(Error::InsufficientData(format!(
            "need at least 2 batches, have {k}"
        )));
    }
    let total_den: f64 = den.iter().sum();
    if total_den == 0.0 {
        return Err(Error::InsufficientData(
            "denominator is zero in every batch".into(),
        ));
    }
    let point = num.iter().sum::<f64>() / total_den;
    let mean_den = total_den / k as f64;
    let z: Vec<f64> = num
        .iter()
        .zip(den)
        .map(|(n, d)| (n - point * d) / mean_den)
        .collect();
    let zbar = z.iter().sum::<f64>() / k as f64;
    let var = z.iter().map(|v| (v - zbar).powi(2)).sum::<f64>() / (k - 1) as f64;
    let se = (var / k as f64).sqrt();
    Ok(EstimateCI {
        point,
        se,
        half_width: t_quantile(confidence, k - 1) * se,
        batches: k,
        confidence,
    })
}

/// Accumulated batches of one or more runs.
#[derive(Clone, Debug, PartialEq)]
pub struct PalmAccumulators {
    layout_time: usize,
    layout_event: usize,
    layout_window: usize,
    stations: usize,
    pub batches: Vec<Batch>,
    pub confidence: f64,
    pub stats: RunStats,
    /// Windows still open when the run ended.
    pub dropped_windows: u64,
    /// Partial integrals of the dropped windows, summed in absolute value.
    pub dropped_mass: f64,
}

impl PalmAccumulators {
    fn new(layout: Layout, batches: usize, confidence: f64) -> Self {
        Self {
            layout_time: layout.time,
            layout_event: layout.event,
            layout_window: layout.window,
            stations: layout.stations,
            batches: (0..batches).map(|_| Batch::new(layout)).collect(),
            confidence,
            stats: RunStats::default(),
            dropped_windows: 0,
            dropped_mass: 0.0,
        }
    }

    /// Measured simulated time.
    pub fn horizon(&self) -> f64 {
        self.batches.iter().map(|b| b.duration).sum()
    }

    /// Appends the batches of `other`.
    pub fn merge(&mut self, other: &PalmAccumulators) -> Result<()> {
        if (
            self.layout_time,
            self.layout_event,
            self.layout_window,
            self.stations,
        ) != (
            other.layout_time,
            other.layout_event,
            other.layout_window,
            other.stations,
        ) {
            return Err(Error::IncompatibleAccumulators);
        }
        self.batches.extend(other.batches.iter().cloned());
        self.dropped_windows += other.dropped_windows;
        self.dropped_mass += other.dropped_mass;
        let s = &mut self.stats;
        let o = &other.stats;
        s.events += o.events;
        s.arrivals += o.arrivals;
        s.ties += o.ties;
        s.regenerations += o.regenerations;
        if s.departures.len() < o.departures.len() {
            s.departures.resize(o.departures.len(), 0);
        }
        for (a, b) in s.departures.iter_mut().zip(&o.departures) {
            *a += b;
        }
        Ok(())
    }

    fn column(&self, lin: Linear) -> Vec<f64> {
        self.batches
            .iter()
            .map(|b| lin.iter().map(|(c, s)| c * b.slot(*s)).sum())
            .collect()
    }

    /// Estimate of `sum(num) / sum(den)` over the run.
    pub fn ratio(&self, num: Linear, den: Linear) -> Result<EstimateCI> {
        ratio_estimate(&self.column(num), &self.column(den), self.confidence)
    }

    /// Long-run rate of a linear combination (divided by simulated time).
    pub fn rate(&self, num: Linear) -> Result<EstimateCI> {
        self.ratio(num, &[(1.0, Slot::Duration)])
    }

    /// `E f(Z)`.
    pub fn time_average(&self, id: TimeId) -> Result<EstimateCI> {
        self.rate(&[(1.0, Slot::Time(id))])
    }

    /// `E int_0^1 g dN(t)`, the jump sum per unit time.
    pub fn event_average(&self, id: EventId) -> Result<EstimateCI> {
        self.rate(&[(1.0, Slot::Event(id))])
    }

    /// Mean of `g` over the epochs of its process.
    pub fn per_event_mean(&self, id: EventId, process: Process) -> Result<EstimateCI> {
        self.ratio(&[(1.0, Slot::Event(id))], &[(1.0, Slot::Count(process))])
    }

    /// `E int_0^1 int_0^{W(t)} f(X(t+u)) du dN(t)`.
    pub fn window_integral(&self, id: WindowId) -> Result<EstimateCI> {
        self.rate(&[(1.0, Slot::Window(id))])
    }

    /// Long-run rate of the counting process.
    pub fn process_rate(&self, p: Process) -> Result<EstimateCI> {
        self.rate(&[(1.0, Slot::Count(p))])
    }
}

/// Run length and batching.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunConfig {
    pub total_events: u64,
    /// Events discarded before measuring; `None` selects the later of 10% of
    /// the events and the tenth regeneration.
    pub burn_in: Option<u64>,
    pub batches: usize,
    pub confidence: f64,
}

impl RunConfig {
    pub fn new(total_events: u64) -> Self {
        Self {
            total_events,
            burn_in: None,
            batches: DEFAULT_BATCHES,
            confidence: DEFAULT_CONFIDENCE,
        }
    }

    pub fn with_burn_in(mut self, burn_in: u64) -> Self {
        self.burn_in = Some(burn_in);
        self
    }

    pub fn with_batches(mut self, batches: usize) -> Self {
        self.batches = batches;
        self
    }
}

struct OpenWindow {
    group: usize,
    batch: usize,
    anchor: f64,
    end: Option<f64>,
    /// Service time to add once the entry time of a pending window is known.
    tail: f64,
    accum: Vec<f64>,
}

/// Window probes sharing one window kind.
struct WindowGroup {
    kind: WindowKind,
    probes: Vec<usize>,
}

struct Collector<'a> {
    probes: &'a ProbeSet,
    acc: PalmAccumulators,
    groups: Vec<WindowGroup>,
    scratch: SystemState,
    node_values: Vec<f64>,
    measured: u64,
    batch_len: u64,
    open: Vec<OpenWindow>,
    idle_since: Option<f64>,
}

impl<'a> Collector<'a> {
    fn new(probes: &'a ProbeSet, run: &RunConfig, measured: u64, start: &SystemState) -> Self {
        let mut groups: Vec<WindowGroup> = Vec::new();
        for (i, w) in probes.window.iter().enumerate() {
            match groups.iter_mut().find(|g| g.kind == w.kind) {
                Some(g) => g.probes.push(i),
                None => groups.push(WindowGroup {
                    kind: w.kind,
                    probes: vec![i],
                }),
            }
        }
        Self {
            probes,
            acc: PalmAccumulators::new(probes.layout(), run.batches, run.confidence),
            groups,
            scratch: start.clone(),
            node_values: vec![0.0; probes.time.len()],
            measured: 0,
            batch_len: (measured / run.batches as u64).max(1),
            open: Vec::new(),
            idle_since: None,
        }
    }

    /// Batch of the next event.
    fn batch(&self) -> usize {
        ((self.measured / self.batch_len) as usize).min(self.acc.batches.len() - 1)
    }

    fn integrate_time(&mut self, state: &SystemState, dt: f64, b: usize) -> Result<()> {
        let probes = &self.probes.time;
        let any_clock = probes.iter().any(|p| matches!(p.f, TimeFn::Clocks(_)));
        for v in self.node_values.iter_mut() {
            *v = 0.0;
        }
        if any_clock && dt > 0.0 {
            self.scratch.clone_from(state);
            for (x, w) in GL_NODES.iter().zip(GL_WEIGHTS) {
                let s = 0.5 * dt * (1.0 + x);
                self.scratch.r_a = state.r_a - s;
                for (i, r) in state.r_s.iter().enumerate() {
                    self.scratch.r_s[i] = if state.queues[i] > 0 { r - s } else { *r };
                }
                for (j, p) in probes.iter().enumerate() {
                    if let TimeFn::Clocks(f) = &p.f {
                        self.node_values[j] += 0.5 * dt * w * f(&self.scratch);
                    }
                }
            }
        }
        let batch = &mut self.acc.batches[b];
        for (j, p) in probes.iter().enumerate() {
            let v = match &p.f {
                TimeFn::Clocks(_) => self.node_values[j],
                TimeFn::Queues(f) => f(state) * dt,
                TimeFn::Segment(f) => f(state, dt),
            };
            if !v.is_finite() {
                return Err(Error::NonFiniteProbe {
                    probe: p.name.clone(),
                    time: state.clock_time,
                });
            }
            batch.time[j] += v;
        }
        batch.duration += dt;
        Ok(())
    }

    fn integrate_windows(&mut self, state: &SystemState, dt: f64) -> Result<()> {
        if self.open.is_empty() {
            return Ok(());
        }
        let t0 = state.clock_time;
        let t1 = t0 + dt;
        for w in self.open.iter_mut() {
            let overlap = match w.end {
                Some(end) => (end.min(t1) - t0).max(0.0),
                None => dt,
            };
            if overlap > 0.0 {
                for (slot, &p) in w.accum.iter_mut().zip(&self.groups[w.group].probes) {
                    let probe = &self.probes.window[p];
                    let v = (probe.g)(state, w.anchor);
                    if !v.is_finite() {
                        return Err(Error::NonFiniteProbe {
                            probe: probe.name.clone(),
                            time: t0,
                        });
                    }
                    *slot += v * overlap;
                }
            }
        }
        let batches = &mut self.acc.batches;
        let groups = &self.groups;
        self.open.retain(|w| match w.end {
            Some(end) if end <= t1 => {
                for (v, &p) in w.accum.iter().zip(&groups[w.group].probes) {
                    batches[w.batch].window[p] += v;
                }
                false
            }
            _ => true,
        });
        Ok(())
    }

    fn open_windows(&mut self, rec: &EventRecord, after: &SystemState, b: usize) {
        let t = rec.time;
        let anchor = self.probes.model.scaled_total(&rec.state_before.queues);
        // windows waiting for the next job to enter this station
        if let Some(j) = rec.routed_to {
            for w in self.open.iter_mut().filter(|w| w.end.is_none()) {
                let kind = self.groups[w.group].kind;
                match kind {
                    WindowKind::UntilNextDeparture(i) | WindowKind::IdleLead(i) if i == j => {
                        w.end = Some(t + w.tail);
                    }
                    _ => {}
                }
            }
        }
        for (g, group) in self.groups.iter().enumerate() {
            let (end, tail) = match (group.kind, rec.kind) {
                (WindowKind::NextInterarrival, EventKind::Arrival) => (Some(t + rec.payload), 0.0),
                (WindowKind::UntilNextDeparture(i), EventKind::Departure(j)) if i == j => {
                    if after.queues[i] > 0 {
                        (Some(t + rec.payload), 0.0)
                    } else if self.probes.model.fed_by_arrivals_only(i) {
                        (Some(t + after.r_a + rec.payload), 0.0)
                    } else {
                        (None, rec.payload)
                    }
                }
                (WindowKind::IdleLead(i), EventKind::Departure(j)) if i == j => {
                    if after.queues[i] > 0 {
                        continue;
                    } else if self.probes.model.fed_by_arrivals_only(i) {
                        (Some(t + after.r_a), 0.0)
                    } else {
                        (None, 0.0)
                    }
                }
                _ => continue,
            };
            self.open.push(OpenWindow {
                group: g,
                batch: b,
                anchor,
                end,
                tail,
                accum: vec![0.0; group.probes.len()],
            });
        }
    }
}

impl Observer for Collector<'_> {
    fn segment(&mut self, state: &SystemState, dt: f64) -> Result<()> {
        let b = self.batch();
        self.integrate_time(state, dt, b)?;
        self.integrate_windows(state, dt)
    }

    fn event(&mut self, rec: &EventRecord, after: &SystemState) -> Result<()> {
        let b = self.batch();
        let batch = &mut self.acc.batches[b];
        let slot = match rec.kind {
            EventKind::Arrival => 0,
            EventKind::Departure(i) => 1 + i,
        };
        batch.counts[slot] += 1.0;
        for (j, p) in self.probes.event.iter().enumerate() {
            if p.process.matches(rec.kind) {
                let v = (p.g)(rec, after);
                if !v.is_finite() {
                    return Err(Error::NonFiniteProbe {
                        probe: p.name.clone(),
                        time: rec.time,
                    });
                }
                batch.event[j] += v;
            }
        }
        match rec.kind {
            EventKind::Arrival => {
                if let Some(start) = self.idle_since.take() {
                    let len = rec.time - start;
                    let batch = &mut self.acc.batches[b];
                    batch.idle_sum += len;
                    batch.idle_sum_sq += len * len;
                    batch.idle_count += 1.0;
                }
            }
            EventKind::Departure(_) => {
                if after.is_empty() {
                    self.idle_since = Some(rec.time);
                }
            }
        }
        if !self.groups.is_empty() {
            self.open_windows(rec, after, b);
        }
        self.measured += 1;
        Ok(())
    }
}

/// Runs one replication and accumulates every probe of `probes`.
pub fn simulate(
    model: &ModelSpec,
    run: &RunConfig,
    probes: &ProbeSet,
    seed: u64,
) -> Result<PalmAccumulators> {
    let mut sim = Simulator::new(model, seed);
    run_collect(&mut sim, run, probes)
}

fn run_collect(
    sim: &mut Simulator,
    run: &RunConfig,
    probes: &ProbeSet,
) -> Result<PalmAccumulators> {
    if run.batches < 2 {
        return Err(Error::InvalidArgument(
            "at least 2 batches are required".into(),
        ));
    }
    if probes.model() != sim.model() {
        return Err(Error::InvalidArgument(
            "probe set was built for a different model".into(),
        ));
    }
    match run.burn_in {
        Some(b) => {
            if run.total_events <= b {
                return Err(Error::InvalidArgument(format!(
                    "total_events ({}) must exceed burn_in ({b})",
                    run.total_events
                )));
            }
            sim.run(b, &mut ())?;
        }
        None => {
            let floor = run.total_events / 10;
            let cap = run.total_events / 2;
            while sim.stats().events < cap
                && (sim.stats().events < floor || sim.stats().regenerations < 10)
            {
                sim.step();
            }
        }
    }
    let burned = sim.stats().events;
    let measured = run.total_events - burned;
    if measured < run.batches as u64 {
        return Err(Error::InvalidArgument(
            "fewer measured events than batches".into(),
        ));
    }
    let start = sim.state().clone();
    let before = sim.stats().clone();
    let mut collector = Collector::new(probes, run, measured, &start);
    sim.run(measured, &mut collector)?;
    let mut acc = collector.acc;
    acc.dropped_windows = collector.open.len() as u64;
    acc.dropped_mass = collector
        .open
        .iter()
        .flat_map(|w| w.accum.iter())
        .map(|v| v.abs())
        .sum();
    let after = sim.stats();
    acc.stats = RunStats {
        events: after.events - before.events,
        arrivals: after.arrivals - before.arrivals,
        departures: after
            .departures
            .iter()
            .zip(&before.departures)
            .map(|(a, b)| a - b)
            .collect(),
        ties: after.ties - before.ties,
        regenerations: after.regenerations - before.regenerations,
    };
    Ok(acc)
}

/// Runs `replications` independent replications on up to `jobs` threads and
/// merges them in replication order.
pub fn simulate_replications(
    model: &ModelSpec,
    run: &RunConfig,
    probes: &ProbeSet,
    master_seed: u64,
    replications: usize,
    jobs: usize,
) -> Result<PalmAccumulators> {
    if replications == 0 {
        return Err(Error::InvalidArgument(
            "at least one replication is required".into(),
        ));
    }
    let jobs = jobs.clamp(1, replications);
    let mut results: Vec<Option<Result<PalmAccumulators>>> =
        (0..replications).map(|_| None).collect();
    std::thread::scope(|scope| {
        let chunks: Vec<_> = results
            .chunks_mut(replications.div_ceil(jobs))
            .enumerate()
            .collect();
        let per = replications.div_ceil(jobs);
        for (c, chunk) in chunks {
            scope.spawn(move || {
                for (k, slot) in chunk.iter_mut().enumerate() {
                    let r = (c * per + k) as u64;
                    let mut sim = Simulator::replication(model, master_seed, r);
                    *slot = Some(run_collect(&mut sim, run, probes));
                }
            });
        }
    });
    let mut iter = results
        .into_iter()
        .map(|r| r.expect("every replication ran"));
    let mut acc = iter.next().expect("replications > 0")?;
    for r in iter {
        acc.merge(&r?)?;
    }
    Ok(acc)
}
