//! Event-driven simulation of the G/G/1, JSQ and tandem models.
//!
//! The simulated state is the full Markov state: queue lengths plus the
//! residual arrival clock and one residual service clock per server. An
//! idle server carries the service time of the next job it will start; that
//! clock is frozen until the job arrives.

use std::io::{self, Write};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelSpec};
use crate::rng::{replication_seed, service_stream, RandomStream, ARRIVAL_STREAM, ROUTING_STREAM};

/// Relative gap under which two clocks are treated as firing together.
const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct SystemState {
    pub queues: Vec<u32>,
    /// Time until the next external arrival.
    pub r_a: f64,
    /// Residual service time per server (the next job's full service time
    /// when the server is idle).
    pub r_s: Vec<f64>,
    pub clock_time: f64,
}

impl SystemState {
    pub fn is_empty(&self) -> bool {
        self.queues.iter().all(|&q| q == 0)
    }

    pub fn total(&self) -> u64 {
        self.queues.iter().map(|&q| q as u64).sum()
    }

    pub fn busy(&self, station: usize) -> bool {
        self.queues[station] > 0
    }

    /// Moves the clocks forward by `dt` without any event happening.
    pub fn decay(&mut self, dt: f64) {
        self.r_a -= dt;
        for (r, &q) in self.r_s.iter_mut().zip(&self.queues) {
            if q > 0 {
                *r -= dt;
            }
        }
        self.clock_time += dt;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EventKind {
    Arrival,
    Departure(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct EventRecord {
    pub time: f64,
    pub kind: EventKind,
    /// State just before the event, with the clocks already run down.
    pub state_before: SystemState,
    /// Freshly sampled clock: the next interarrival time for an arrival, the
    /// next service time at the departing station for a departure.
    pub payload: f64,
    /// Station entered by the moving job (`None` when it leaves the system).
    pub routed_to: Option<usize>,
    /// Another clock expired at the same instant.
    pub tie: bool,
}

/// Independent random streams for one replication.
#[derive(Clone, Debug)]
pub struct Streams {
    arrival: RandomStream,
    service: Vec<RandomStream>,
    routing: RandomStream,
}

impl Streams {
    pub fn new(seed: u64, stations: usize) -> Self {
        Self {
            arrival: RandomStream::new(seed, ARRIVAL_STREAM),
            service: (0..stations)
                .map(|i| RandomStream::new(seed, service_stream(i)))
                .collect(),
            routing: RandomStream::new(seed, ROUTING_STREAM),
        }
    }
}

/// Receives every inter-event segment and every event of a run.
pub trait Observer {
    /// Called before the clocks run down by `dt`; `state` is the state at the
    /// start of the segment.
    fn segment(&mut self, _state: &SystemState, _dt: f64) -> Result<()> {
        Ok(())
    }

    fn event(&mut self, _record: &EventRecord, _after: &SystemState) -> Result<()> {
        Ok(())
    }
}

impl Observer for () {}

/// Initial state: empty system with fresh clocks.
pub fn initial_state(model: &ModelSpec, streams: &mut Streams) -> SystemState {
    let n = model.stations();
    SystemState {
        queues: vec![0; n],
        r_a: model.arrival_clock().sample(&mut streams.arrival),
        r_s: (0..n)
            .map(|i| model.service_clock(i).sample(&mut streams.service[i]))
            .collect(),
        clock_time: 0.0,
    }
}

/// Next clock to fire and the time until it does. Departures take priority
/// over arrivals and lower stations over higher ones when clocks tie.
fn next_clock(state: &SystemState) -> (EventKind, f64, bool) {
    let mut best = (EventKind::Arrival, state.r_a);
    for (i, (&q, &r)) in state.queues.iter().zip(&state.r_s).enumerate() {
        if q > 0 && r < best.1 {
            best = (EventKind::Departure(i), r);
        }
    }
    let dt = best.1;
    let tol = TIE_TOLERANCE * dt.abs().max(1.0);
    let mut within = usize::from(state.r_a <= dt + tol);
    let mut first = if within > 0 {
        Some(EventKind::Arrival)
    } else {
        None
    };
    for (i, (&q, &r)) in state.queues.iter().zip(&state.r_s).enumerate().rev() {
        if q > 0 && r <= dt + tol {
            within += 1;
            first = Some(EventKind::Departure(i));
        }
    }
    (first.unwrap_or(best.0), dt.max(0.0), within > 1)
}

fn route(model: &ModelSpec, state: &SystemState, routing: &mut RandomStream) -> usize {
    match model.config() {
        ModelConfig::Jsq { .. } => {
            let min = *state.queues.iter().min().expect("at least one server");
            let ties = state.queues.iter().filter(|&&q| q == min).count();
            let pick = if ties > 1 { routing.index(ties) } else { 0 };
            state
                .queues
                .iter()
                .enumerate()
                .filter(|(_, &q)| q == min)
                .nth(pick)
                .map(|(i, _)| i)
                .expect("pick is within the tie set")
        }
        _ => 0,
    }
}

/// Advances `state` by one event, writing the event into `record`. Returns
/// the length of the segment that preceded the event.
fn advance<O: Observer>(
    model: &ModelSpec,
    state: &mut SystemState,
    streams: &mut Streams,
    record: &mut EventRecord,
    observer: &mut O,
) -> Result<()> {
    let (kind, dt, tie) = next_clock(state);
    observer.segment(state, dt)?;
    state.decay(dt);
    record.state_before.clone_from(state);
    record.time = state.clock_time;
    record.kind = kind;
    record.tie = tie;
    match kind {
        EventKind::Arrival => {
            let station = route(model, state, &mut streams.routing);
            state.queues[station] += 1;
            let u = model.arrival_clock().sample(&mut streams.arrival);
            state.r_a = u;
            record.payload = u;
            record.routed_to = Some(station);
        }
        EventKind::Departure(i) => {
            state.queues[i] -= 1;
            let s = model.service_clock(i).sample(&mut streams.service[i]);
            state.r_s[i] = s;
            record.payload = s;
            record.routed_to = None;
            if model.is_tandem() && i == 0 {
                state.queues[1] += 1;
                record.routed_to = Some(1);
            }
        }
    }
    // a tied clock may sit a rounding error below zero
    state.r_a = state.r_a.max(0.0);
    for r in state.r_s.iter_mut() {
        *r = r.max(0.0);
    }
    observer.event(record, state)
}

/// One event from `state`. Pure with respect to `state`; the streams advance.
pub fn step(
    state: &SystemState,
    model: &ModelSpec,
    streams: &mut Streams,
) -> (SystemState, EventRecord) {
    let mut next = state.clone();
    let mut record = EventRecord {
        time: state.clock_time,
        kind: EventKind::Arrival,
        state_before: state.clone(),
        payload: 0.0,
        routed_to: None,
        tie: false,
    };
    advance(model, &mut next, streams, &mut record, &mut ()).expect("unit observer is infallible");
    (next, record)
}

/// Counters kept over a run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunStats {
    pub events: u64,
    pub arrivals: u64,
    /// Departures per station.
    pub departures: Vec<u64>,
    pub ties: u64,
    /// Arrivals to a completely empty system.
    pub regenerations: u64,
}

/// A single simulated path.
pub struct Simulator {
    model: ModelSpec,
    state: SystemState,
    streams: Streams,
    record: EventRecord,
    stats: RunStats,
}

impl Simulator {
    pub fn new(model: &ModelSpec, seed: u64) -> Self {
        let mut streams = Streams::new(seed, model.stations());
        let state = initial_state(model, &mut streams);
        let record = EventRecord {
            time: 0.0,
            kind: EventKind::Arrival,
            state_before: state.clone(),
            payload: 0.0,
            routed_to: None,
            tie: false,
        };
        Self {
            model: model.clone(),
            state,
            streams,
            record,
            stats: RunStats {
                departures: vec![0; model.stations()],
                ..RunStats::default()
            },
        }
    }

    /// Simulator for replication `replication` under `master_seed`.
    pub fn replication(model: &ModelSpec, master_seed: u64, replication: u64) -> Self {
        Self::new(model, replication_seed(master_seed, replication))
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn state(&self) -> &SystemState {
        &self.state
    }

    pub fn stats(&self) -> &RunStats {
        &self.stats
    }

    fn tally(&mut self) {
        let s = &mut self.stats;
        s.events += 1;
        s.ties += u64::from(self.record.tie);
        match self.record.kind {
            EventKind::Arrival => {
                s.arrivals += 1;
                if self.record.state_before.is_empty() {
                    s.regenerations += 1;
                }
            }
            EventKind::Departure(i) => s.departures[i] += 1,
        }
    }

    pub fn step_with<O: Observer>(&mut self, observer: &mut O) -> Result<&EventRecord> {
        advance(
            &self.model,
            &mut self.state,
            &mut self.streams,
            &mut self.record,
            observer,
        )?;
        self.tally();
        Ok(&self.record)
    }

    pub fn step(&mut self) -> &EventRecord {
        advance(
            &self.model,
            &mut self.state,
            &mut self.streams,
            &mut self.record,
            &mut (),
        )
        .expect("unit observer is infallible");
        self.tally();
        &self.record
    }

    pub fn run<O: Observer>(&mut self, events: u64, observer: &mut O) -> Result<()> {
        for _ in 0..events {
            self.step_with(observer)?;
        }
        Ok(())
    }
}

/// Snapshots of the state on a deterministic time grid.
struct GridSampler {
    next: f64,
    spacing: f64,
    wanted: usize,
    out: Vec<SystemState>,
}

impl Observer for GridSampler {
    fn segment(&mut self, state: &SystemState, dt: f64) -> Result<()> {
        let end = state.clock_time + dt;
        while self.out.len() < self.wanted && self.next < end {
            let mut snap = state.clone();
            snap.decay(self.next - state.clock_time);
            self.out.push(snap);
            self.next += self.spacing;
        }
        Ok(())
    }
}

/// Draws `count` states from the stationary law. After `burn_in` events the
/// state is read on a fixed time grid whose spacing equals, on average,
/// `spacing_events` events; a grid independent of the path samples the
/// time-stationary law rather than the law seen at event epochs.
pub fn stationary_samples(
    model: &ModelSpec,
    count: usize,
    spacing_events: u64,
    burn_in: u64,
    seed: u64,
) -> Result<Vec<SystemState>> {
    if spacing_events == 0 {
        return Err(Error::InvalidArgument(
            "spacing_events must be at least 1".into(),
        ));
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    let mut sim = Simulator::new(model, seed);
    sim.run(burn_in, &mut ())?;
    let spacing = spacing_events as f64 / model.event_rate();
    let mut sampler = GridSampler {
        next: sim.state().clock_time + spacing,
        spacing,
        wanted: count,
        out: Vec::with_capacity(count),
    };
    while sampler.out.len() < count {
        sim.step_with(&mut sampler)?;
    }
    Ok(sampler.out)
}

/// Writes the event log as CSV:
/// `time,kind,station,q_before_0..,r_a_before,payload`.
pub struct EventLogWriter<W: Write> {
    out: W,
    header_done: bool,
}

impl<W: Write> EventLogWriter<W> {
    pub fn new(out: W) -> Self {
        Self {
            out,
            header_done: false,
        }
    }

    pub fn into_inner(self) -> W {
        self.out
    }

    fn write_record(&mut self, r: &EventRecord) -> io::Result<()> {
        if !self.header_done {
            write!(self.out, "time,kind,station")?;
            for i in 0..r.state_before.queues.len() {
                write!(self.out, ",q_before_{i}")?;
            }
            writeln!(self.out, ",r_a_before,payload")?;
            self.header_done = true;
        }
        let (kind, station) = match r.kind {
            EventKind::Arrival => ("arrival", r.routed_to.unwrap_or(0)),
            EventKind::Departure(i) => ("departure", i),
        };
        write!(self.out, "{},{kind},{station}", r.time)?;
        for q in &r.state_before.queues {
            write!(self.out, ",{q}")?;
        }
        writeln!(self.out, ",{},{}", r.state_before.r_a, r.payload)
    }
}

impl<W: Write> Observer for EventLogWriter<W> {
    fn event(&mut self, record: &EventRecord, _after: &SystemState) -> Result<()> {
        self.write_record(record)
            .map_err(|e| Error::Io(format!("event log write failed: {e}")))
    }
}
