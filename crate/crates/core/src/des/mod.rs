//! Discrete-event simulation of the stochastic polling system under the
//! binomial-exhaustive policy with switchover times of order `n`.
//!
//! At the polling epoch of stage `i` with `N` jobs in queue `p(i)` the server
//! draws `Y ~ Binomial(N, r_i)` and serves until the queue first holds
//! `N - Y` jobs (checked at service completions), then switches over. The
//! queue-length process does not depend on the service order, so jobs are
//! only counted.

pub mod dist;
pub mod stats;

use alloc::collections::BinaryHeap;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::{Ordering, Reverse};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution as _, Exp1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dist::{Distribution, Family};
pub use stats::{MeanEstimate, RatioEstimate, StatsError};

use crate::cost::{CostError, CostFunction};
use crate::fluid::{self, FluidError, FluidTrajectory, PeCandidate};
use crate::model::{self, ControlParams, ModelError, SystemParameters};
use crate::quadrature::CompensatedSum;
use crate::rng::{substream, Source};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DesError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Fluid(#[from] FluidError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error("{what} {index}: {reason}")]
    Distribution {
        what: &'static str,
        index: usize,
        reason: &'static str,
    },
    #[error("scale index must be at least 1")]
    ZeroScale,
    #[error("simulation budget exceeded after {events} events")]
    BudgetExceeded { events: u64 },
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// The `n`-th system: fixed arrival and service rates, switchover `V_i^n`
/// distributed as the sum of `n` copies of the base switchover law.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledSystem {
    base: SystemParameters,
    n: u64,
    service: Vec<Distribution>,
    switchover: Vec<Distribution>,
}

const MEAN_TOL: f64 = 1e-9;

impl ScaledSystem {
    /// `service[k]` must have mean `1/mu_k`; `switchover[i]` (per basic
    /// stage) must have mean `s_i`.
    pub fn new(
        base: SystemParameters,
        n: u64,
        service: Vec<Distribution>,
        switchover: Vec<Distribution>,
    ) -> Result<Self, DesError> {
        if n == 0 {
            return Err(DesError::ZeroScale);
        }
        if service.len() != base.queues() {
            return Err(ModelError::ShapeMismatch {
                expected: base.queues(),
                found: service.len(),
            }
            .into());
        }
        if switchover.len() != base.stages() {
            return Err(ModelError::ShapeMismatch {
                expected: base.stages(),
                found: switchover.len(),
            }
            .into());
        }
        for (k, d) in service.iter().enumerate() {
            let err = |reason| DesError::Distribution {
                what: "service law of queue",
                index: k + 1,
                reason,
            };
            d.validate().map_err(err)?;
            let target = 1.0 / base.mu()[k];
            if (d.mean() - target).abs() > MEAN_TOL * target || d.mean() == 0.0 {
                return Err(err("mean must equal 1/mu"));
            }
        }
        for (i, d) in switchover.iter().enumerate() {
            let err = |reason| DesError::Distribution {
                what: "switchover law of stage",
                index: i + 1,
                reason,
            };
            d.validate().map_err(err)?;
            let target = base.switchover()[i];
            if (d.mean() - target).abs() > MEAN_TOL * target.max(f64::MIN_POSITIVE) {
                return Err(err("mean must equal the stage switchover mean"));
            }
        }
        Ok(ScaledSystem {
            base,
            n,
            service,
            switchover,
        })
    }

    /// Laws of the given families with the required means.
    pub fn from_families(
        base: SystemParameters,
        n: u64,
        service: Family,
        switchover: Family,
    ) -> Result<Self, DesError> {
        let s: Vec<Distribution> = base.mu().iter().map(|m| service.with_mean(1.0 / m)).collect();
        let v: Vec<Distribution> = base
            .switchover()
            .iter()
            .map(|&s| {
                if s == 0.0 {
                    Distribution::Deterministic(0.0)
                } else {
                    switchover.with_mean(s)
                }
            })
            .collect();
        Self::new(base, n, s, v)
    }

    pub fn base(&self) -> &SystemParameters {
        &self.base
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn service(&self) -> &[Distribution] {
        &self.service
    }

    pub fn switchover(&self) -> &[Distribution] {
        &self.switchover
    }

    /// The same system at another scale.
    pub fn with_scale(&self, n: u64) -> Result<Self, DesError> {
        Self::new(self.base.clone(), n, self.service.clone(), self.switchover.clone())
    }
}

/// How many initial cycles to discard.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Warmup {
    Fixed(usize),
    /// At least `min` cycles, extended in steps of `min / 2` (up to `max`)
    /// while the split-sample test on the last `min` cycle-start totals
    /// rejects stationarity.
    Auto { min: usize, max: usize },
}

impl Default for Warmup {
    fn default() -> Self {
        Warmup::Auto { min: 500, max: 5_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub warmup: Warmup,
    pub cycles: usize,
    pub seed: u64,
    pub replication: u64,
    /// Abort after this many events.
    pub max_events: Option<u64>,
    /// Record the full queue path over measured cycles `[start, start + len)`.
    pub path_window: Option<(usize, usize)>,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            warmup: Warmup::default(),
            cycles: 10_000,
            seed: 0,
            replication: 0,
            max_events: None,
            path_window: None,
        }
    }
}

/// One server cycle, from the polling epoch of stage 0 to the next.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    /// Index among measured cycles.
    pub m: u64,
    /// Fluid-scaled cycle length `T / n`.
    pub t_bar: f64,
    /// Fluid-scaled cost `int psi(Q(nu)/n) du` over the scaled cycle.
    pub psi_bar: f64,
    /// Queue lengths at the cycle start.
    pub start: Vec<u64>,
    /// Queue lengths at the polling epoch of every stage.
    pub polling: Vec<Vec<u64>>,
    /// Jobs marked for service (`Y`) at every stage.
    pub marked: Vec<u64>,
    /// Polled-queue length at the departure epoch of every stage.
    pub left_behind: Vec<u64>,
    /// Busy time of every stage (unscaled).
    pub busy: Vec<f64>,
    /// Switchover time after every stage (unscaled).
    pub switchover: Vec<f64>,
    pub arrivals: Vec<u64>,
    pub services: Vec<u64>,
}

/// Queue counts after every change within a window of cycles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePath {
    pub n: u64,
    pub start_time: f64,
    pub end_time: f64,
    pub times: Vec<f64>,
    pub states: Vec<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOutput {
    pub n: u64,
    pub warmup_cycles: usize,
    pub events: u64,
    pub records: Vec<CycleRecord>,
    pub path: Option<SamplePath>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Arrival {
    time: f64,
    queue: usize,
}

impl Eq for Arrival {}

impl Ord for Arrival {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.queue.cmp(&other.queue))
    }
}

impl PartialOrd for Arrival {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Sim<'a> {
    sys: &'a ScaledSystem,
    psi: &'a CostFunction,
    nf: f64,
    time: f64,
    q: Vec<u64>,
    scaled: Vec<f64>,
    rate: f64,
    cost: CompensatedSum,
    arrivals: BinaryHeap<Reverse<Arrival>>,
    arrival_rng: Vec<ChaCha8Rng>,
    service_rng: Vec<ChaCha8Rng>,
    arrived: Vec<u64>,
    served: Vec<u64>,
    events: u64,
    path: Option<SamplePath>,
}

impl Sim<'_> {
    fn refresh_rate(&mut self) {
        for (s, &q) in self.scaled.iter_mut().zip(&self.q) {
            *s = q as f64 / self.nf;
        }
        self.rate = self.psi.evaluate(&self.scaled);
    }

    fn advance_to(&mut self, t: f64) {
        self.cost.add(self.rate * (t - self.time));
        self.time = t;
    }

    fn note_change(&mut self) {
        self.events += 1;
        self.refresh_rate();
        if let Some(p) = self.path.as_mut() {
            p.times.push(self.time);
            p.states.push(self.q.clone());
        }
    }

    fn schedule_arrival(&mut self, k: usize, from: f64) {
        let gap: f64 = self.arrival_rng[k].sample(Exp1);
        self.arrivals.push(Reverse(Arrival {
            time: from + gap / self.sys.base.lambda()[k],
            queue: k,
        }));
    }

    /// Processes arrivals up to `t`: strictly before it when `inclusive` is
    /// false (a service completion at `t` goes first), up to and including
    /// it otherwise (a switchover end at `t` goes last).
    fn arrivals_until(&mut self, t: f64, inclusive: bool) {
        while let Some(&Reverse(a)) = self.arrivals.peek() {
            if a.time > t || (!inclusive && a.time == t) {
                break;
            }
            self.arrivals.pop();
            self.advance_to(a.time);
            self.q[a.queue] += 1;
            self.arrived[a.queue] += 1;
            self.note_change();
            self.schedule_arrival(a.queue, a.time);
        }
    }
}

/// Simulates `opts.warmup` plus `opts.cycles` server cycles.
pub fn run(
    sys: &ScaledSystem,
    ctrl: &ControlParams,
    psi: &CostFunction,
    opts: &SimOptions,
) -> Result<SimOutput, DesError> {
    run_guarded(sys, ctrl, psi, opts, &mut |_| true)
}

/// As [`run`], calling `guard` with the event count every 4096 events and
/// once per cycle; returning `false` aborts with `BudgetExceeded`.
pub fn run_guarded(
    sys: &ScaledSystem,
    ctrl: &ControlParams,
    psi: &CostFunction,
    opts: &SimOptions,
    guard: &mut dyn FnMut(u64) -> bool,
) -> Result<SimOutput, DesError> {
    let base = &sys.base;
    model::validate(base, ctrl)?;
    psi.validate(base.queues())?;
    let table = model::augment(base, ctrl.l);
    let stages = table.len();
    let basic = base.stages();
    let kq = base.queues();
    let n = sys.n;
    let nf = n as f64;

    let q0 = fluid::pe_fixed_point(base, ctrl)?;
    let (seed, rep) = (opts.seed, opts.replication);
    let mut sim = Sim {
        sys,
        psi,
        nf,
        time: 0.0,
        q: q0.iter().map(|v| libm::round(v * nf) as u64).collect(),
        scaled: vec![0.0; kq],
        rate: 0.0,
        cost: CompensatedSum::new(),
        arrivals: BinaryHeap::with_capacity(kq),
        arrival_rng: (0..kq).map(|k| substream(seed, Source::Arrivals, rep, k as u64)).collect(),
        service_rng: (0..kq).map(|k| substream(seed, Source::Services, rep, k as u64)).collect(),
        arrived: vec![0; kq],
        served: vec![0; kq],
        events: 0,
        path: None,
    };
    let mut switch_rng: Vec<ChaCha8Rng> = (0..stages)
        .map(|i| substream(seed, Source::Switchovers, rep, i as u64))
        .collect();
    sim.refresh_rate();
    for k in 0..kq {
        sim.schedule_arrival(k, 0.0);
    }

    let (warm_min, warm_max) = match opts.warmup {
        Warmup::Fixed(w) => (w, w),
        Warmup::Auto { min, max } => (min, max.max(min)),
    };
    let mut warmup = warm_min;
    let mut warm_totals: Vec<f64> = Vec::new();
    let mut records = Vec::with_capacity(opts.cycles);
    let mut next_check = 0u64;
    let mut cycle: usize = 0;
    let mut finished_path = None;

    loop {
        if cycle == warmup && warmup < warm_max && warm_min >= 20 {
            let tail = &warm_totals[warm_totals.len() - warm_min..];
            if stats::geweke_z(tail).abs() >= 2.0 {
                warmup = (warmup + (warm_min / 2).max(1)).min(warm_max);
            }
        }
        let measured = cycle.checked_sub(warmup);
        if measured.is_some_and(|m| m >= opts.cycles) {
            break;
        }
        if let (Some(m), Some((start, len))) = (measured, opts.path_window) {
            if m == start && len > 0 {
                sim.path = Some(SamplePath {
                    n,
                    start_time: sim.time,
                    end_time: sim.time,
                    times: vec![sim.time],
                    states: vec![sim.q.clone()],
                });
            }
        }

        let start = sim.q.clone();
        if measured.is_none() {
            warm_totals.push(start.iter().map(|&v| v as f64).sum::<f64>() / nf);
        }
        sim.cost = CompensatedSum::new();
        sim.arrived.iter_mut().for_each(|v| *v = 0);
        sim.served.iter_mut().for_each(|v| *v = 0);
        let mut polling = Vec::with_capacity(stages);
        let mut busy = Vec::with_capacity(stages);
        let mut marked_all = Vec::with_capacity(stages);
        let mut left_behind = Vec::with_capacity(stages);
        let mut switchover = Vec::with_capacity(stages);
        let mut length = CompensatedSum::new();

        for i in 0..stages {
            polling.push(sim.q.clone());
            let k = table.queue(i);
            let r = ctrl.r[i];
            let present = sim.q[k];
            let marked = if present == 0 || r == 0.0 {
                0
            } else if r >= 1.0 {
                present
            } else {
                let mut b = substream(seed, Source::Binomial, rep, i as u64);
                b.set_stream(cycle as u64);
                Binomial::new(present, r).expect("valid proportion").sample(&mut b)
            };
            let target = present - marked;
            let busy_start = sim.time;
            while sim.q[k] > target {
                let s = sys.service[k].sample(&mut sim.service_rng[k]);
                let done = sim.time + s;
                sim.arrivals_until(done, false);
                sim.advance_to(done);
                sim.q[k] -= 1;
                sim.served[k] += 1;
                sim.note_change();
                if sim.events >= next_check {
                    next_check = sim.events + 4096;
                    if !guard(sim.events) || opts.max_events.is_some_and(|m| sim.events > m) {
                        return Err(DesError::BudgetExceeded { events: sim.events });
                    }
                }
            }
            let b = sim.time - busy_start;
            marked_all.push(marked);
            left_behind.push(sim.q[k]);
            let v = sys.switchover[i % basic].sample_sum(n, &mut switch_rng[i]);
            let end = sim.time + v;
            sim.arrivals_until(end, true);
            sim.advance_to(end);
            busy.push(b);
            switchover.push(v);
            length.add(b);
            length.add(v);
        }
        if !guard(sim.events) || opts.max_events.is_some_and(|m| sim.events > m) {
            return Err(DesError::BudgetExceeded { events: sim.events });
        }
        if let Some(m) = measured {
            records.push(CycleRecord {
                m: m as u64,
                t_bar: length.value() / nf,
                psi_bar: sim.cost.value() / nf,
                start,
                polling,
                marked: marked_all,
                left_behind,
                busy,
                switchover,
                arrivals: sim.arrived.clone(),
                services: sim.served.clone(),
            });
        }
        // stop recording once the window is complete
        if let (Some(m), Some((start, len))) = (measured, opts.path_window) {
            if m + 1 == start + len {
                if let Some(mut p) = sim.path.take() {
                    p.end_time = sim.time;
                    finished_path = Some(p);
                }
            }
        }
        cycle += 1;
    }
    Ok(SimOutput {
        n,
        warmup_cycles: warmup,
        events: sim.events,
        records,
        path: finished_path.or(sim.path.take()),
    })
}

/// Renewal-reward estimate of the long-run fluid-scaled cost,
/// `sum psi_bar / sum t_bar`, with a 95% batch-means interval.
pub fn long_run_cost(records: &[CycleRecord]) -> Result<RatioEstimate, StatsError> {
    let y: Vec<f64> = records.iter().map(|r| r.psi_bar).collect();
    let x: Vec<f64> = records.iter().map(|r| r.t_bar).collect();
    stats::batch_ratio(&y, &x, stats::BATCHES)
}

/// Mean fluid-scaled cycle length.
pub fn cycle_length_mean(records: &[CycleRecord]) -> Result<MeanEstimate, StatsError> {
    let x: Vec<f64> = records.iter().map(|r| r.t_bar).collect();
    stats::batch_mean(&x, stats::BATCHES)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelStat {
    pub stage: usize,
    pub queue: usize,
    pub estimate: MeanEstimate,
    pub target: f64,
    pub z: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BusyStat {
    pub stage: usize,
    pub estimate: MeanEstimate,
    pub target: f64,
    pub z: f64,
}

/// Simulated means at polling epochs against the PE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PollingStats {
    /// `Q_k(A_i) / n` against `q_k(a_i)`, for every stage and queue.
    pub levels: Vec<LevelStat>,
    /// `B_i / n` against the PE busy time of stage `i`.
    pub busy: Vec<BusyStat>,
}

impl PollingStats {
    pub fn max_abs_z(&self) -> f64 {
        self.levels
            .iter()
            .map(|s| s.z.abs())
            .chain(self.busy.iter().map(|s| s.z.abs()))
            .fold(0.0, f64::max)
    }
}

/// Compares stationary polling-epoch means with the PE. Under the
/// binomial-exhaustive policy these means equal the PE values exactly for
/// every `n`, so the z-scores are approximately standard normal.
pub fn polling_epoch_stats(
    records: &[CycleRecord],
    n: u64,
    pe: &PeCandidate,
) -> Result<PollingStats, StatsError> {
    let nf = n as f64;
    let stages = pe.stages.len();
    let kq = pe.queues();
    let mut levels = Vec::with_capacity(stages * kq);
    let mut busy = Vec::with_capacity(stages);
    let mut buf = Vec::with_capacity(records.len());
    for i in 0..stages {
        for k in 0..kq {
            buf.clear();
            buf.extend(records.iter().map(|r| r.polling[i][k] as f64 / nf));
            let estimate = stats::batch_mean(&buf, stats::BATCHES)?;
            let target = pe.polling_state(i)[k];
            levels.push(LevelStat {
                stage: i,
                queue: k,
                estimate,
                target,
                z: estimate.z(target),
            });
        }
        buf.clear();
        buf.extend(records.iter().map(|r| r.busy[i] / nf));
        let estimate = stats::batch_mean(&buf, stats::BATCHES)?;
        let target = pe.busy[i];
        busy.push(BusyStat {
            stage: i,
            estimate,
            target,
            z: estimate.z(target),
        });
    }
    Ok(PollingStats { levels, busy })
}

impl SamplePath {
    fn index_at(&self, t: f64) -> usize {
        self.times.partition_point(|&u| u <= t).saturating_sub(1)
    }

    /// Scaled start state `Q(start) / n`.
    pub fn scaled_start(&self) -> Vec<f64> {
        let nf = self.n as f64;
        self.states[0].iter().map(|&v| v as f64 / nf).collect()
    }

    /// Scaled horizon `(end - start) / n`.
    pub fn scaled_horizon(&self) -> f64 {
        (self.end_time - self.start_time) / self.n as f64
    }
}

/// `Q(start + n t) / n` at the scaled times `t` (right-continuous).
pub fn fluid_scaled_path(path: &SamplePath, times: &[f64]) -> Vec<Vec<f64>> {
    let nf = path.n as f64;
    times
        .iter()
        .map(|&t| {
            let j = path.index_at(path.start_time + nf * t);
            path.states[j].iter().map(|&v| v as f64 / nf).collect()
        })
        .collect()
}

/// Exact sup-norm distance between the scaled sample path and a fluid
/// trajectory started at the same scaled time origin, over the path window
/// (or the trajectory, if shorter).
///
/// The scaled path is a step function and the fluid path is piecewise
/// linear, so the supremum is attained at a jump (from either side) or at a
/// fluid breakpoint.
pub fn path_sup_distance(path: &SamplePath, traj: &FluidTrajectory) -> f64 {
    let nf = path.n as f64;
    let horizon = path
        .scaled_horizon()
        .min(traj.points.last().map_or(0.0, |p| p.time));
    let diff = |state: &[u64], q: &[f64]| {
        state
            .iter()
            .zip(q)
            .fold(0.0f64, |m, (&a, b)| m.max((a as f64 / nf - b).abs()))
    };
    let mut sup = 0.0f64;
    for j in 0..path.times.len() {
        let u = (path.times[j] - path.start_time) / nf;
        if u > horizon {
            break;
        }
        let q = traj.value_at(u);
        sup = sup.max(diff(&path.states[j], &q));
        if j > 0 {
            sup = sup.max(diff(&path.states[j - 1], &q));
        }
    }
    for p in &traj.points {
        if p.time > horizon {
            break;
        }
        let j = path.index_at(path.start_time + nf * p.time);
        sup = sup.max(diff(&path.states[j], &p.q));
    }
    sup
}
