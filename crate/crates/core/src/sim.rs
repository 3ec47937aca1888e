//! Event-driven simulation of the standard queue, the perturbed queue and
//! their coupling.
//!
//! Equal-time events are processed departures first, then arrivals.

use std::io::Write;

use rand::Rng;
use rand_distr::Exp1;

use crate::env::{EnvTrajectory, MarkovEnv};
use crate::error::{Error, Result};
use crate::mm1::QueueParams;
use crate::rng::{ReplicationRng, SimRng};
use crate::stats::CompensatedSum;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EventKind {
    Arrival,
    Departure,
    /// Extra service completion of the perturbed queue.
    AdditionalDeparture,
    /// Base clock point removed from the perturbed queue.
    MarkedPoint,
}

impl EventKind {
    pub fn tag(self) -> &'static str {
        match self {
            Self::Arrival => "arrival",
            Self::Departure => "departure",
            Self::AdditionalDeparture => "additional_departure",
            Self::MarkedPoint => "marked",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QueueEvent {
    pub time: f64,
    pub kind: EventKind,
}

/// Integral of the queue length over a busy period.
pub trait Area {
    fn area(&self) -> f64;
}

/// One busy period of the standard queue, started by one customer at time 0.
#[derive(Clone, Debug, PartialEq)]
pub struct BusyPeriodPath {
    events: Vec<QueueEvent>,
    duration: f64,
    area: f64,
    departures: Vec<f64>,
}

impl BusyPeriodPath {
    /// Validates an event list and recomputes the area exactly.
    pub fn from_events(events: Vec<QueueEvent>) -> Result<Self> {
        let mut level: i64 = 1;
        let mut last = 0.0;
        let mut area = CompensatedSum::new();
        let mut departures = Vec::new();
        for (k, e) in events.iter().enumerate() {
            if !(e.time >= last) || !e.time.is_finite() {
                return Err(Error::MalformedPath(format!("event {k} at {} precedes {last}", e.time)));
            }
            if level == 0 {
                return Err(Error::MalformedPath(format!("event {k} after the queue emptied")));
            }
            area.add(level as f64 * (e.time - last));
            last = e.time;
            match e.kind {
                EventKind::Arrival => level += 1,
                EventKind::Departure => {
                    level -= 1;
                    departures.push(e.time);
                }
                other => {
                    return Err(Error::MalformedPath(format!("event {k} of kind {} in a standard path", other.tag())));
                }
            }
        }
        if level != 0 {
            return Err(Error::MalformedPath(format!("path ends with {level} customers")));
        }
        Ok(Self {
            events,
            duration: last,
            area: area.value(),
            departures,
        })
    }

    pub fn events(&self) -> &[QueueEvent] {
        &self.events
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    /// Departure times `D_1 <= ... <= D_N`.
    pub fn departures(&self) -> &[f64] {
        &self.departures
    }

    pub fn n_served(&self) -> usize {
        self.departures.len()
    }

    pub fn n_arrivals(&self) -> usize {
        self.events.len() - self.departures.len()
    }

    /// Queue length right after each event, starting from `L(0) = 1`.
    pub fn levels(&self) -> impl Iterator<Item = (f64, u32)> + '_ {
        let mut l = 1u32;
        std::iter::once((0.0, 1)).chain(self.events.iter().map(move |e| {
            if e.kind == EventKind::Arrival {
                l += 1;
            } else {
                l -= 1;
            }
            (e.time, l)
        }))
    }
}

impl Area for BusyPeriodPath {
    fn area(&self) -> f64 {
        self.area
    }
}

/// One excursion strictly above level 1.
#[derive(Clone, Debug, PartialEq)]
pub struct SubBusy {
    pub start: f64,
    pub duration: f64,
    /// Departure times inside the excursion, relative to its start.
    pub departures: Vec<f64>,
}

impl SubBusy {
    pub fn n_served(&self) -> usize {
        self.departures.len()
    }
}

/// Split of a busy period at level 1.
///
/// Sojourn `E_0` is the first visit to level 1, excursion `i` (1-based)
/// follows sojourn `E_{i-1}`, and `E_H` ends the busy period.
#[derive(Clone, Debug, PartialEq)]
pub struct Level1Decomposition {
    pub h: usize,
    pub e_sojourns: Vec<f64>,
    pub sub_busy: Vec<SubBusy>,
    /// `A_i = B_1^i + E_0 + sum_{k>i} (E_k + B_1^k)`.
    pub a_i: Vec<f64>,
    /// Same with `E_0` replaced by `E_i`: the time from the start of
    /// excursion `i` to the end of the busy period.
    pub a_i_alternate: Vec<f64>,
}

pub fn decompose_level1(path: &BusyPeriodPath) -> Result<Level1Decomposition> {
    let mut sojourns = Vec::new();
    let mut subs: Vec<SubBusy> = Vec::new();
    let mut level = 1u32;
    let mut mark = 0.0;
    for e in &path.events {
        match (e.kind, level) {
            (EventKind::Arrival, 1) => {
                sojourns.push(e.time - mark);
                subs.push(SubBusy { start: e.time, duration: 0.0, departures: Vec::new() });
                level = 2;
            }
            (EventKind::Arrival, _) => level += 1,
            (EventKind::Departure, 1) => {
                sojourns.push(e.time - mark);
                level = 0;
            }
            (EventKind::Departure, 0) => return Err(Error::MalformedPath("departure from an empty queue".into())),
            (EventKind::Departure, _) => {
                let sb = subs.last_mut().unwrap();
                sb.departures.push(e.time - sb.start);
                level -= 1;
                if level == 1 {
                    sb.duration = e.time - sb.start;
                    mark = e.time;
                }
            }
            (k, _) => return Err(Error::MalformedPath(format!("unexpected {} event", k.tag()))),
        }
    }
    if level != 0 {
        return Err(Error::MalformedPath("path does not end empty".into()));
    }
    let h = subs.len();
    let total: f64 = sojourns.iter().sum::<f64>() + subs.iter().map(|s| s.duration).sum::<f64>();
    if (total - path.duration).abs() > 1e-9 * path.duration.max(1.0) {
        return Err(Error::MalformedPath(format!("decomposition sums to {total}, duration {}", path.duration)));
    }
    // tail[i] = sum_{k >= i} (E_k + B_1^k) over excursions k = i..H (1-based).
    let mut a_i = vec![0.0; h];
    let mut a_alt = vec![0.0; h];
    let mut rest = 0.0;
    for i in (1..=h).rev() {
        let b = subs[i - 1].duration;
        a_i[i - 1] = b + sojourns[0] + rest;
        a_alt[i - 1] = b + sojourns[i] + rest;
        rest += sojourns[i] + b;
    }
    Ok(Level1Decomposition { h, e_sojourns: sojourns, sub_busy: subs, a_i, a_i_alternate: a_alt })
}

#[inline]
fn exp_gap(rng: &mut SimRng, rate: f64) -> f64 {
    let e: f64 = rng.sample(Exp1);
    e / rate
}

/// Standard queue busy period.
pub fn simulate_s_busy_period(q: &QueueParams, rng: &mut ReplicationRng) -> BusyPeriodPath {
    let (lambda, mu) = (q.lambda(), q.mu());
    let mut events = Vec::new();
    let mut departures = Vec::new();
    let mut area = CompensatedSum::new();
    let mut level = 1u32;
    let mut t = 0.0;
    let mut next_arrival = exp_gap(&mut rng.arrivals, lambda);
    let mut next_service = exp_gap(&mut rng.services, mu);
    loop {
        if next_service <= next_arrival {
            area.add(f64::from(level) * (next_service - t));
            t = next_service;
            level -= 1;
            events.push(QueueEvent { time: t, kind: EventKind::Departure });
            departures.push(t);
            if level == 0 {
                break;
            }
            next_service = t + exp_gap(&mut rng.services, mu);
        } else {
            area.add(f64::from(level) * (next_arrival - t));
            t = next_arrival;
            level += 1;
            events.push(QueueEvent { time: t, kind: EventKind::Arrival });
            next_arrival = t + exp_gap(&mut rng.arrivals, lambda);
        }
    }
    BusyPeriodPath { events, duration: t, area: area.value(), departures }
}

/// One busy period of the perturbed queue.
#[derive(Clone, Debug, PartialEq)]
pub struct PerturbedBusyRecord {
    pub duration: f64,
    pub area: f64,
    /// Accepted additional departures.
    pub plus_points: Vec<f64>,
    /// Marked (removed) base departures.
    pub minus_points: Vec<f64>,
    /// Environment path used by the replication.
    pub env: EnvTrajectory,
}

impl Area for PerturbedBusyRecord {
    fn area(&self) -> f64 {
        self.area
    }
}

/// Direct simulation by thinning against the bound `mu + eps max p+`.
pub fn simulate_p_busy_period(
    q: &QueueParams,
    env: &MarkovEnv,
    eps: f64,
    rng: &mut ReplicationRng,
) -> Result<PerturbedBusyRecord> {
    q.check_perturbation(env.max_abs_p(), eps)?;
    let (lambda, mu) = (q.lambda(), q.mu());
    let bound = mu + eps * env.max_p_plus();
    let p = env.p_values();
    let mut path = EnvTrajectory::start(env, &mut rng.env);
    let mut area = CompensatedSum::new();
    let mut level = 1u32;
    let mut t = 0.0;
    let mut next_arrival = exp_gap(&mut rng.arrivals, lambda);
    let mut next_candidate = exp_gap(&mut rng.services, bound);
    loop {
        if next_candidate <= next_arrival {
            let s = next_candidate;
            path.extend_to(env, s, &mut rng.env);
            let rate = mu + eps * p[path.state_at(s)];
            // uniform only when thinning can reject, so eps = 0 replays the standard queue
            let accept = rate >= bound || rng.aux.random::<f64>() * bound < rate;
            if accept {
                area.add(f64::from(level) * (s - t));
                t = s;
                level -= 1;
                if level == 0 {
                    break;
                }
            }
            next_candidate = s + exp_gap(&mut rng.services, bound);
        } else {
            area.add(f64::from(level) * (next_arrival - t));
            t = next_arrival;
            level += 1;
            next_arrival = t + exp_gap(&mut rng.arrivals, lambda);
        }
    }
    path.extend_to(env, t, &mut rng.env);
    Ok(PerturbedBusyRecord { duration: t, area: area.value(), plus_points: Vec::new(), minus_points: Vec::new(), env: path })
}

/// Homogeneous Poisson stream generated on demand and kept for replay.
#[derive(Clone, Debug)]
pub struct LazyPoisson {
    rate: f64,
    marked: bool,
    times: Vec<f64>,
    marks: Vec<f64>,
}

impl LazyPoisson {
    pub fn new(rate: f64, marked: bool) -> Self {
        Self { rate, marked, times: Vec::new(), marks: Vec::new() }
    }

    /// `k`-th point (0-based) and its mark; infinite when the rate is 0.
    /// Marks come from `marks`, or from `gaps` (interleaved) when `None`.
    #[inline]
    pub fn point(&mut self, k: usize, gaps: &mut SimRng, mut marks: Option<&mut SimRng>) -> (f64, f64) {
        if self.rate <= 0.0 {
            return (f64::INFINITY, 1.0);
        }
        while self.times.len() <= k {
            let prev = self.times.last().copied().unwrap_or(0.0);
            self.times.push(prev + exp_gap(gaps, self.rate));
            if self.marked {
                let m = match marks.as_deref_mut() {
                    Some(r) => r.random(),
                    None => gaps.random(),
                };
                self.marks.push(m);
            }
        }
        (self.times[k], if self.marked { self.marks[k] } else { 0.0 })
    }

    pub fn generated(&self) -> &[f64] {
        &self.times
    }
}

/// Receives the events of a replayed busy period.
pub trait ReplaySink {
    fn event(&mut self, _time: f64, _kind: EventKind, _level: u32, _env_state: usize) {}
}

impl ReplaySink for () {}

/// Records the standard-queue event list.
#[derive(Default)]
struct PathSink {
    events: Vec<QueueEvent>,
}

impl ReplaySink for PathSink {
    fn event(&mut self, time: f64, kind: EventKind, _: u32, _: usize) {
        self.events.push(QueueEvent { time, kind });
    }
}

#[derive(Default)]
struct PointSink {
    plus: Vec<f64>,
    minus: Vec<f64>,
}

impl ReplaySink for PointSink {
    fn event(&mut self, time: f64, kind: EventKind, _: u32, _: usize) {
        match kind {
            EventKind::AdditionalDeparture => self.plus.push(time),
            EventKind::MarkedPoint => self.minus.push(time),
            _ => {}
        }
    }
}

/// Shared randomness of one replication of the coupling.
///
/// One Poisson(lambda) arrival stream and one Poisson(mu) base clock drive
/// every queue. Base point `k` carries a uniform `U_k` and is removed at
/// level `eps` when `U_k mu < eps p-(X)`. The additional stream has rate
/// `eps_max max p+` with uniforms `V_k`, and a point is accepted at level
/// `eps` when `V_k eps_max max p+ < eps p+(X)`. Acceptance sets are nested
/// in `eps`, so one set of streams serves a whole grid of `eps` values.
pub struct CoupledStreams<'a> {
    env: &'a MarkovEnv,
    mu: f64,
    plus_rate: f64,
    arrivals: LazyPoisson,
    base: LazyPoisson,
    plus: LazyPoisson,
    path: EnvTrajectory,
    rng: ReplicationRng,
}

/// Outcome of a replayed busy period.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReplayOutcome {
    pub duration: f64,
    pub area: f64,
}

impl<'a> CoupledStreams<'a> {
    pub fn new(q: &QueueParams, env: &'a MarkovEnv, eps_max: f64, mut rng: ReplicationRng) -> Result<Self> {
        q.check_perturbation(env.max_abs_p(), eps_max)?;
        let path = EnvTrajectory::start(env, &mut rng.env);
        Ok(Self {
            env,
            mu: q.mu(),
            plus_rate: eps_max * env.max_p_plus(),
            arrivals: LazyPoisson::new(q.lambda(), false),
            base: LazyPoisson::new(q.mu(), true),
            plus: LazyPoisson::new(eps_max * env.max_p_plus(), true),
            path,
            rng,
        })
    }

    pub fn env_path(&self) -> &EnvTrajectory {
        &self.path
    }

    /// Additional-stream points generated so far, with their uniforms.
    pub fn plus_candidates(&self) -> (&[f64], &[f64]) {
        (&self.plus.times, &self.plus.marks)
    }

    pub fn plus_rate(&self) -> f64 {
        self.plus_rate
    }

    /// Makes sure the additional stream and the path cover `[0, t]`.
    pub fn cover(&mut self, t: f64) {
        let mut k = self.plus.times.len();
        while self.plus_rate > 0.0 && self.plus.times.last().is_none_or(|&x| x <= t) {
            self.plus.point(k, &mut self.rng.plus, None);
            k += 1;
        }
        self.path.extend_to(self.env, t, &mut self.rng.env);
    }

    /// Side stream for estimator draws that must not disturb the queues.
    pub fn aux(&mut self) -> &mut SimRng {
        &mut self.rng.aux
    }

    #[inline]
    fn state_at(&mut self, t: f64) -> usize {
        if t > self.path.horizon() {
            self.path.extend_to(self.env, t, &mut self.rng.env);
        }
        self.path.state_at(t)
    }

    /// Runs the queue at level `eps` (at most `eps_max`) on the shared streams.
    pub fn replay(&mut self, eps: f64, sink: &mut impl ReplaySink) -> ReplayOutcome {
        let p = self.env.p_values();
        let mut area = CompensatedSum::new();
        let (mut ia, mut ib, mut ip) = (0usize, 0usize, 0usize);
        let mut level = 1u32;
        let mut t = 0.0;
        loop {
            let (ta, _) = self.arrivals.point(ia, &mut self.rng.arrivals, None);
            let (tb, u) = self.base.point(ib, &mut self.rng.services, Some(&mut self.rng.marks));
            let (tp, v) = self.plus.point(ip, &mut self.rng.plus, None);
            if tb <= tp && tb <= ta {
                ib += 1;
                let x = self.state_at(tb);
                if u * self.mu < eps * (-p[x]).max(0.0) {
                    sink.event(tb, EventKind::MarkedPoint, level, x);
                    continue;
                }
                area.add(f64::from(level) * (tb - t));
                t = tb;
                level -= 1;
                sink.event(t, EventKind::Departure, level, x);
            } else if tp <= ta {
                ip += 1;
                let x = self.state_at(tp);
                if !(v * self.plus_rate < eps * p[x].max(0.0)) {
                    continue;
                }
                area.add(f64::from(level) * (tp - t));
                t = tp;
                level -= 1;
                sink.event(t, EventKind::AdditionalDeparture, level, x);
            } else {
                ia += 1;
                area.add(f64::from(level) * (ta - t));
                t = ta;
                level += 1;
                let x = self.state_at(t);
                sink.event(t, EventKind::Arrival, level, x);
            }
            if level == 0 {
                return ReplayOutcome { duration: t, area: area.value() };
            }
        }
    }

    /// Standard-queue path of these streams (the `eps = 0` replay).
    pub fn standard_path(&mut self) -> BusyPeriodPath {
        let mut sink = PathSink::default();
        let out = self.replay(0.0, &mut sink);
        let departures = sink.events.iter().filter(|e| e.kind == EventKind::Departure).map(|e| e.time).collect();
        BusyPeriodPath { events: sink.events, duration: out.duration, area: out.area, departures }
    }

    /// Perturbed record at level `eps`, with its point lists.
    pub fn perturbed_record(&mut self, eps: f64) -> PerturbedBusyRecord {
        let mut sink = PointSink::default();
        let out = self.replay(eps, &mut sink);
        let horizon = out.duration;
        self.path.extend_to(self.env, horizon, &mut self.rng.env);
        PerturbedBusyRecord {
            duration: out.duration,
            area: out.area,
            plus_points: sink.plus,
            minus_points: sink.minus,
            env: self.path.clone(),
        }
    }
}

/// Coupled standard and perturbed busy periods on shared randomness.
pub fn couple_busy_periods(
    q: &QueueParams,
    env: &MarkovEnv,
    eps: f64,
    rng: ReplicationRng,
) -> Result<(BusyPeriodPath, PerturbedBusyRecord)> {
    let mut streams = CoupledStreams::new(q, env, eps, rng)?;
    let s = streams.standard_path();
    let p = streams.perturbed_record(eps);
    Ok((s, p))
}

/// Tab-separated event trace: replication, time, kind, L, env state.
pub struct TraceWriter<W: Write> {
    out: W,
    replication: u64,
    error: Option<std::io::Error>,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(mut out: W) -> std::io::Result<Self> {
        writeln!(out, "replication\ttime\tkind\tL\tenv_state")?;
        Ok(Self { out, replication: 0, error: None })
    }

    pub fn set_replication(&mut self, r: u64) {
        self.replication = r;
    }

    /// Writes the events of a standard path (no environment).
    pub fn write_path(&mut self, path: &BusyPeriodPath) -> std::io::Result<()> {
        let mut l = 1u32;
        for e in path.events() {
            l = if e.kind == EventKind::Arrival { l + 1 } else { l - 1 };
            writeln!(self.out, "{}\t{:.12e}\t{}\t{}\t-", self.replication, e.time, e.kind.tag(), l)?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> std::io::Result<W> {
        if let Some(e) = self.error.take() {
            return Err(e);
        }
        self.out.flush()?;
        Ok(self.out)
    }
}

impl<W: Write> ReplaySink for TraceWriter<W> {
    fn event(&mut self, time: f64, kind: EventKind, level: u32, env_state: usize) {
        if self.error.is_none() {
            if let Err(e) = writeln!(self.out, "{}\t{:.12e}\t{}\t{}\t{}", self.replication, time, kind.tag(), level, env_state) {
                self.error = Some(e);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamKey;

    fn q() -> QueueParams {
        QueueParams::new(0.5, 1.0).unwrap()
    }

    fn ev(time: f64, kind: EventKind) -> QueueEvent {
        QueueEvent { time, kind }
    }

    #[test]
    fn area_of_simple_paths() {
        let p = BusyPeriodPath::from_events(vec![ev(2.5, EventKind::Departure)]).unwrap();
        assert_eq!(p.area(), 2.5);
        assert_eq!(p.duration(), 2.5);
        let p = BusyPeriodPath::from_events(vec![
            ev(1.0, EventKind::Arrival),
            ev(2.0, EventKind::Departure),
            ev(3.0, EventKind::Departure),
        ])
        .unwrap();
        assert_eq!(p.area(), 4.0);
        assert_eq!(p.n_served(), 2);
    }

    #[test]
    fn malformed_paths() {
        assert!(BusyPeriodPath::from_events(vec![]).is_err());
        assert!(BusyPeriodPath::from_events(vec![ev(1.0, EventKind::Arrival), ev(2.0, EventKind::Departure)]).is_err());
        assert!(BusyPeriodPath::from_events(vec![ev(2.0, EventKind::Arrival), ev(1.0, EventKind::Departure), ev(3.0, EventKind::Departure)]).is_err());
        assert!(BusyPeriodPath::from_events(vec![ev(1.0, EventKind::Departure), ev(2.0, EventKind::Departure)]).is_err());
        assert!(BusyPeriodPath::from_events(vec![ev(1.0, EventKind::MarkedPoint), ev(2.0, EventKind::Departure)]).is_err());
    }

    #[test]
    fn decomposition_of_known_path() {
        // L: 1 on [0,1), 2 on [1,2), 3 on [2,2.5), 2 on [2.5,3), 1 on [3,4), 2 on [4,4.2), 1 on [4.2,5)
        let p = BusyPeriodPath::from_events(vec![
            ev(1.0, EventKind::Arrival),
            ev(2.0, EventKind::Arrival),
            ev(2.5, EventKind::Departure),
            ev(3.0, EventKind::Departure),
            ev(4.0, EventKind::Arrival),
            ev(4.2, EventKind::Departure),
            ev(5.0, EventKind::Departure),
        ])
        .unwrap();
        let d = decompose_level1(&p).unwrap();
        assert_eq!(d.h, 2);
        let close = |a: &[f64], b: &[f64]| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12);
        assert!(close(&d.e_sojourns, &[1.0, 1.0, 0.8]));
        assert!(close(&[d.sub_busy[0].duration, d.sub_busy[1].duration], &[2.0, 0.2]));
        assert!(close(&d.sub_busy[0].departures, &[1.5, 2.0]));
        assert!(close(&d.sub_busy[1].departures, &[0.2]));
        // literal: A_1 = 2 + E_0 + (E_2 + B^2) = 2 + 1 + 1.0 ; A_2 = 0.2 + 1
        assert!(close(&d.a_i, &[4.0, 1.2]));
        // remaining time from each excursion start
        assert!(close(&d.a_i_alternate, &[4.0, 1.0]));
        let single = BusyPeriodPath::from_events(vec![ev(0.7, EventKind::Departure)]).unwrap();
        let d = decompose_level1(&single).unwrap();
        assert_eq!((d.h, d.e_sojourns.clone()), (0, vec![0.7]));
    }

    #[test]
    fn path_invariants_hold() {
        let key = StreamKey::new(3);
        for i in 0..2000 {
            let p = simulate_s_busy_period(&q(), &mut key.replication(i));
            assert_eq!(p.n_served(), p.n_arrivals() + 1);
            assert!(p.area() >= p.duration());
            let again = BusyPeriodPath::from_events(p.events().to_vec()).unwrap();
            assert!((again.area() - p.area()).abs() < 1e-12 * p.area());
            let d = decompose_level1(&p).unwrap();
            assert_eq!(d.e_sojourns.len(), d.h + 1);
        }
    }

    #[test]
    fn zero_eps_reproduces_standard_queue() {
        let env = MarkovEnv::symmetric(1.0, [-1.0, 1.0]).unwrap();
        let key = StreamKey::new(9);
        for i in 0..500 {
            let s = simulate_s_busy_period(&q(), &mut key.replication(i));
            let p = simulate_p_busy_period(&q(), &env, 0.0, &mut key.replication(i)).unwrap();
            assert_eq!(s.duration(), p.duration);
            assert_eq!(s.area(), p.area);
            let (cs, cp) = couple_busy_periods(&q(), &env, 0.0, key.replication(i)).unwrap();
            assert_eq!(cs, s);
            assert_eq!((cp.duration, cp.area), (s.duration(), s.area()));
            assert!(cp.plus_points.is_empty() && cp.minus_points.is_empty());
        }
    }

    #[test]
    fn extra_departures_only_shorten() {
        let env = MarkovEnv::symmetric(1.0, [0.0, 2.0]).unwrap();
        let key = StreamKey::new(5);
        for i in 0..2000 {
            let (s, p) = couple_busy_periods(&q(), &env, 0.2, key.replication(i)).unwrap();
            assert!(p.duration <= s.duration());
            assert!(p.area <= s.area());
            assert!(p.minus_points.is_empty());
        }
    }

    #[test]
    fn stability_gate() {
        let env = MarkovEnv::constant(-1.0).unwrap();
        let mut rng = ReplicationRng::from_seed(1);
        assert!(matches!(simulate_p_busy_period(&q(), &env, 0.5, &mut rng), Err(Error::Unstable(_))));
        assert!(couple_busy_periods(&q(), &env, 0.6, rng).is_err());
    }

    #[test]
    fn nested_replay_is_consistent() {
        // Replaying a smaller eps after a larger one must give the same result
        // as replaying it first.
        let env = MarkovEnv::symmetric(0.7, [-1.0, 1.0]).unwrap();
        let key = StreamKey::new(77);
        for i in 0..300 {
            let mut a = CoupledStreams::new(&q(), &env, 0.1, key.replication(i)).unwrap();
            let x1 = a.replay(0.1, &mut ());
            let x2 = a.replay(0.03, &mut ());
            let mut b = CoupledStreams::new(&q(), &env, 0.1, key.replication(i)).unwrap();
            let y2 = b.replay(0.03, &mut ());
            let y1 = b.replay(0.1, &mut ());
            assert_eq!((x1, x2), (y1, y2));
        }
    }

    #[test]
    fn trace_lines() {
        let env = MarkovEnv::symmetric(1.0, [-1.0, 1.0]).unwrap();
        let mut s = CoupledStreams::new(&q(), &env, 0.1, ReplicationRng::from_seed(4)).unwrap();
        let mut w = TraceWriter::new(Vec::new()).unwrap();
        w.set_replication(4);
        s.replay(0.1, &mut w);
        let text = String::from_utf8(w.finish().unwrap()).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "replication\ttime\tkind\tL\tenv_state");
        let rows: Vec<&str> = lines.collect();
        assert!(!rows.is_empty());
        assert!(rows.iter().all(|l| l.split('\t').count() == 5 && l.starts_with("4\t")));
        assert!(rows.last().unwrap().split('\t').nth(3) == Some("0"));
    }
}
