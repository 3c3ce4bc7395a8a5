//! The fluid model as a hybrid dynamical system under stage-based
//! proportion reduction (SB-PR).
//!
//! Under SB-PR the server, on polling stage `i`, works on queue `p(i)` until
//! it is reduced to the fraction `1 - r_i` of its polled level, then switches
//! for the mean switchover time `s_i`. The queue vector at successive polling
//! epochs therefore evolves by affine maps `q -> A_i q + B_i`, and one server
//! cycle by their composition `q -> A' q + B'`. Its fixed point is the
//! polling state of the unique periodic equilibrium (PE), and every fluid
//! trajectory converges to that PE at the rate of the spectral radius of
//! `A'`.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, LinalgError, Matrix};
use crate::model::{self, AugmentedTable, ControlParams, ModelError, SystemParameters};

/// Negative fluid levels above `-NEG_TOL * max(1, |q|)` are rounding noise
/// and are clamped to zero.
pub const NEG_TOL: f64 = 1e-12;

/// Relative tolerance on `q(tau) = q(0)` when closing a PE.
pub const CLOSURE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FluidError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("singular cycle system: {0}")]
    SingularSystem(LinalgError),
    #[error("spectral radius: {0}")]
    Spectrum(LinalgError),
    #[error("negative fluid level {value:e} in queue {queue}")]
    NegativeLevel { queue: usize, value: f64 },
    #[error("periodic equilibrium does not close: gap {gap:e}")]
    ClosureMismatch { gap: f64 },
    #[error("invalid initial state: {0}")]
    InvalidInitialState(&'static str),
}

/// `q -> A q + B`: polling epoch of stage `i` to polling epoch of stage `i+1`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineStageMap {
    pub stage: usize,
    pub queue: usize,
    pub a: Matrix,
    pub b: Vec<f64>,
}

impl AffineStageMap {
    pub fn apply(&self, q: &[f64]) -> Vec<f64> {
        let mut out = self.a.mul_vec(q);
        for (o, b) in out.iter_mut().zip(&self.b) {
            *o += b;
        }
        out
    }
}

/// Builds the affine map of stage `i` with proportion `r_i`.
pub fn stage_map(
    params: &SystemParameters,
    table: &AugmentedTable,
    i: usize,
    r_i: f64,
) -> AffineStageMap {
    let k = table.queue(i);
    let lambda = params.lambda();
    let n = params.queues();
    let mut a = Matrix::identity(n);
    let per_unit = r_i / params.drain_rate(k);
    for j in 0..n {
        a[(j, k)] = if j == k { 1.0 - r_i } else { lambda[j] * per_unit };
    }
    let s = table.switchover()[i];
    AffineStageMap {
        stage: i,
        queue: k,
        a,
        b: lambda.iter().map(|l| l * s).collect(),
    }
}

/// One server cycle `q -> A' q + B'` from the polling epoch of stage 0.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleMap {
    pub a: Matrix,
    pub b: Vec<f64>,
}

impl CycleMap {
    pub fn apply(&self, q: &[f64]) -> Vec<f64> {
        let mut out = self.a.mul_vec(q);
        for (o, b) in out.iter_mut().zip(&self.b) {
            *o += b;
        }
        out
    }

    pub fn spectral_radius(&self) -> Result<f64, FluidError> {
        linalg::spectral_radius(&self.a).map_err(FluidError::Spectrum)
    }
}

/// Composes the stage maps over the augmented table in stage order.
pub fn cycle_map(params: &SystemParameters, ctrl: &ControlParams) -> Result<CycleMap, FluidError> {
    model::validate(params, ctrl)?;
    let table = model::augment(params, ctrl.l);
    let n = params.queues();
    let mut a = Matrix::identity(n);
    let mut b = vec![0.0; n];
    for (i, &r) in ctrl.r.iter().enumerate() {
        let m = stage_map(params, &table, i, r);
        a = m.a.mul(&a);
        b = m.apply(&b);
    }
    Ok(CycleMap { a, b })
}

fn clamp_negative(q: &mut [f64]) -> Result<(), FluidError> {
    let scale = q.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    for (k, v) in q.iter_mut().enumerate() {
        if *v < 0.0 {
            if *v < -NEG_TOL * scale {
                return Err(FluidError::NegativeLevel {
                    queue: k,
                    value: *v,
                });
            }
            *v = 0.0;
        }
    }
    Ok(())
}

/// Queue vector at the polling epoch of stage 0 of the PE: the solution of
/// `(I - A') q = B'`.
pub fn pe_fixed_point(params: &SystemParameters, ctrl: &ControlParams) -> Result<Vec<f64>, FluidError> {
    let cm = cycle_map(params, ctrl)?;
    let n = params.queues();
    let mut lhs = Matrix::identity(n);
    for i in 0..n {
        for j in 0..n {
            lhs[(i, j)] -= cm.a[(i, j)];
        }
    }
    let mut q = lhs.solve(&cm.b).map_err(FluidError::SingularSystem)?;
    clamp_negative(&mut q)?;
    Ok(q)
}

/// Polled level `q_{p(i)}(a_i)` at every stage from the linear recursion
/// linking consecutive visits of each queue.
///
/// Between the departure from a visit of queue `k` and its next polling the
/// queue only grows, at rate `lambda_k`, for the intervening switchover and
/// busy times. Busy times are linear in the polled levels, so the recursion
/// is an `IL x IL` linear system, solved here independently of the cycle map.
pub fn polling_levels_by_recursion(
    params: &SystemParameters,
    ctrl: &ControlParams,
) -> Result<Vec<f64>, FluidError> {
    model::validate(params, ctrl)?;
    let table = model::augment(params, ctrl.l);
    let n = table.len();
    let s = table.switchover();
    // busy time per unit polled level
    let d: Vec<f64> = (0..n)
        .map(|i| ctrl.r[i] / params.drain_rate(table.queue(i)))
        .collect();
    let mut m = Matrix::zeros(n, n);
    let mut rhs = vec![0.0; n];
    for k in 0..params.queues() {
        let visits = table.visits(k);
        let lam = params.lambda()[k];
        for (j, &cur) in visits.iter().enumerate() {
            let next = visits[(j + 1) % visits.len()];
            m[(next, next)] += 1.0;
            m[(next, cur)] -= 1.0 - ctrl.r[cur];
            rhs[next] += lam * s[cur];
            let mut l = (cur + 1) % n;
            while l != next {
                m[(next, l)] -= lam * d[l];
                rhs[next] += lam * s[l];
                l = (l + 1) % n;
            }
        }
    }
    let mut x = m.solve(&rhs).map_err(FluidError::SingularSystem)?;
    clamp_negative(&mut x)?;
    Ok(x)
}

/// Full queue vector at the polling epoch of stage 0, reconstructed from
/// [`polling_levels_by_recursion`].
pub fn pe_start_by_recursion(
    params: &SystemParameters,
    ctrl: &ControlParams,
) -> Result<Vec<f64>, FluidError> {
    let x = polling_levels_by_recursion(params, ctrl)?;
    let table = model::augment(params, ctrl.l);
    let n = table.len();
    let s = table.switchover();
    let mut q0 = vec![0.0; params.queues()];
    for (k, q) in q0.iter_mut().enumerate() {
        let visits = table.visits(k);
        if visits[0] == 0 {
            *q = x[0];
            continue;
        }
        let last = *visits.last().expect("every queue is visited");
        let mut grow = s[last];
        for l in last + 1..n {
            grow += s[l] + ctrl.r[l] * x[l] / params.drain_rate(table.queue(l));
        }
        *q = (1.0 - ctrl.r[last]) * x[last] + params.lambda()[k] * grow;
    }
    Ok(q0)
}

/// What happens at a breakpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Marker {
    /// Polling epoch of the stage.
    Polling(usize),
    /// Departure epoch of the stage.
    Departure(usize),
    /// End of a finite simulation horizon.
    Horizon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Breakpoint {
    pub time: f64,
    pub q: Vec<f64>,
    pub marker: Marker,
}

/// Linear interpolation between two breakpoints.
fn lerp(a: &Breakpoint, b: &Breakpoint, t: f64) -> Vec<f64> {
    let dt = b.time - a.time;
    if dt <= 0.0 {
        return b.q.clone();
    }
    let w = ((t - a.time) / dt).clamp(0.0, 1.0);
    a.q.iter().zip(&b.q).map(|(x, y)| x + (y - x) * w).collect()
}

fn value_at_points(points: &[Breakpoint], t: f64) -> Vec<f64> {
    let idx = points.partition_point(|p| p.time <= t);
    if idx == 0 {
        return points[0].q.clone();
    }
    if idx >= points.len() {
        return points[points.len() - 1].q.clone();
    }
    lerp(&points[idx - 1], &points[idx], t)
}

/// A periodic fluid trajectory over one server cycle `[0, tau]`.
///
/// Breakpoints alternate polling and departure epochs, starting with the
/// polling epoch of stage 0 at time 0 and ending with it again at `tau`.
/// Stages with zero busy or switchover time keep their (coincident)
/// breakpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeCandidate {
    pub l: usize,
    pub tau: f64,
    pub stages: Vec<usize>,
    pub switchover: Vec<f64>,
    pub breakpoints: Vec<Breakpoint>,
    pub busy: Vec<f64>,
    pub ratios: Vec<f64>,
}

impl PeCandidate {
    pub fn queues(&self) -> usize {
        self.breakpoints[0].q.len()
    }

    /// Queue vector at the polling epoch of stage `i`.
    pub fn polling_state(&self, i: usize) -> &[f64] {
        &self.breakpoints[2 * i].q
    }

    /// Queue vector at the departure epoch of stage `i`.
    pub fn departure_state(&self, i: usize) -> &[f64] {
        &self.breakpoints[2 * i + 1].q
    }

    pub fn polling_time(&self, i: usize) -> f64 {
        self.breakpoints[2 * i].time
    }

    /// Value at time `t`, extended periodically.
    pub fn value_at(&self, t: f64) -> Vec<f64> {
        let mut u = t % self.tau;
        if u < 0.0 {
            u += self.tau;
        }
        value_at_points(&self.breakpoints, u)
    }

    /// `(t0, t1, q(t0), q(t1))` for every segment of positive length.
    pub fn segments(&self) -> impl Iterator<Item = (f64, f64, &[f64], &[f64])> + '_ {
        self.breakpoints
            .windows(2)
            .filter(|w| w[1].time > w[0].time)
            .map(|w| (w[0].time, w[1].time, w[0].q.as_slice(), w[1].q.as_slice()))
    }
}

/// Busy time of the SB-PR service function at a polling epoch.
fn sbpr_busy(params: &SystemParameters, queue: usize, r: f64, polled: f64) -> f64 {
    r * polled / params.drain_rate(queue)
}

/// Advances `q` over the busy period of `queue` that removes the fraction
/// `r` of its polled level. Returns the busy time.
fn serve(params: &SystemParameters, q: &mut [f64], queue: usize, r: f64) -> f64 {
    let b = sbpr_busy(params, queue, r, q[queue]);
    for (j, v) in q.iter_mut().enumerate() {
        if j == queue {
            *v *= 1.0 - r;
        } else {
            *v += params.lambda()[j] * b;
        }
    }
    b
}

fn switch(params: &SystemParameters, q: &mut [f64], s: f64) {
    for (v, l) in q.iter_mut().zip(params.lambda()) {
        *v += l * s;
    }
}

/// The PE of SB-PR with parameters `ctrl`, rolled forward from
/// [`pe_fixed_point`].
pub fn pe_from_params(params: &SystemParameters, ctrl: &ControlParams) -> Result<PeCandidate, FluidError> {
    let q0 = pe_fixed_point(params, ctrl)?;
    let tau = model::cycle_length(params, ctrl.l)?;
    let table = model::augment(params, ctrl.l);
    let n = table.len();
    let mut q = q0.clone();
    let mut t = 0.0;
    let mut breakpoints = Vec::with_capacity(2 * n + 1);
    let mut busy = Vec::with_capacity(n);
    breakpoints.push(Breakpoint {
        time: 0.0,
        q: q.clone(),
        marker: Marker::Polling(0),
    });
    for i in 0..n {
        let b = serve(params, &mut q, table.queue(i), ctrl.r[i]);
        clamp_negative(&mut q)?;
        t += b;
        busy.push(b);
        breakpoints.push(Breakpoint {
            time: t,
            q: q.clone(),
            marker: Marker::Departure(i),
        });
        let s = table.switchover()[i];
        switch(params, &mut q, s);
        t += s;
        breakpoints.push(Breakpoint {
            time: t,
            q: q.clone(),
            marker: Marker::Polling((i + 1) % n),
        });
    }
    let scale = q0.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let gap = q
        .iter()
        .zip(&q0)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    if gap > CLOSURE_TOL * scale {
        return Err(FluidError::ClosureMismatch { gap });
    }
    Ok(PeCandidate {
        l: ctrl.l,
        tau,
        stages: table.stages().to_vec(),
        switchover: table.switchover().to_vec(),
        breakpoints,
        busy,
        ratios: ctrl.r.clone(),
    })
}

/// Recovers the proportions from a PE: the fraction by which each stage
/// reduces its polled queue, or 0 when the polled level is 0.
pub fn ratios_from_pe(pe: &PeCandidate) -> Vec<f64> {
    (0..pe.stages.len())
        .map(|i| {
            let k = pe.stages[i];
            let qa = pe.polling_state(i)[k];
            let qd = pe.departure_state(i)[k];
            if qa > 0.0 {
                (qa - qd) / qa
            } else {
                0.0
            }
        })
        .collect()
}

/// Location of the server: serving stage `i`, or switching from stage `i`
/// to stage `i + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ServerLocation {
    Serving(usize),
    Switching(usize),
}

/// The epoch at which the server location is re-evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transition {
    /// Departure from stage `i` (the busy period just ended).
    Departure(usize),
    /// End of the switchover after stage `i`.
    SwitchoverEnd(usize),
}

/// The location-switching rule of the HDS: after a departure or switchover
/// end, skip every stage whose switchover and busy time are both zero.
///
/// After the departure from stage `i` the server switches from the first
/// stage `j >= i` with positive switchover unless some stage `j' > i` with
/// positive busy time comes strictly earlier; after the switchover from
/// stage `i` both searches start at `i + 1`. Ties go to serving.
pub fn next_location(
    from: Transition,
    stages: usize,
    switchover_positive: impl Fn(usize) -> bool,
    busy_positive: impl Fn(usize) -> bool,
) -> ServerLocation {
    let (s_start, i) = match from {
        Transition::Departure(i) => (i, i),
        Transition::SwitchoverEnd(i) => (i + 1, i),
    };
    // A cycle of zero duration is excluded by s > 0, so both searches end
    // within two sweeps of the table.
    let limit = i + 2 * stages + 1;
    let j_s = (s_start..limit).find(|&j| switchover_positive(j % stages));
    let j_phi = (i + 1..limit).find(|&j| busy_positive(j % stages));
    match (j_s, j_phi) {
        (Some(js), Some(jp)) if js < jp => ServerLocation::Switching(js % stages),
        (_, Some(jp)) => ServerLocation::Serving(jp % stages),
        (Some(js), None) => ServerLocation::Switching(js % stages),
        (None, None) => panic!("server cycle of zero duration"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub time: f64,
    pub q: Vec<f64>,
    pub marker: Marker,
    /// Server location on the segment that starts at this point.
    pub location: ServerLocation,
    /// Most recent polling epoch at or before this point.
    pub last_polling: f64,
}

/// A fluid trajectory over `[0, horizon]` under SB-PR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluidTrajectory {
    pub points: Vec<TrajectoryPoint>,
    /// Indices into `points` of the polling epochs of stage 0.
    pub cycle_starts: Vec<usize>,
    pub horizon: f64,
}

impl FluidTrajectory {
    pub fn value_at(&self, t: f64) -> Vec<f64> {
        let idx = self.points.partition_point(|p| p.time <= t);
        if idx == 0 {
            return self.points[0].q.clone();
        }
        if idx >= self.points.len() {
            return self.points[self.points.len() - 1].q.clone();
        }
        let (a, b) = (&self.points[idx - 1], &self.points[idx]);
        let dt = b.time - a.time;
        if dt <= 0.0 {
            return b.q.clone();
        }
        let w = ((t - a.time) / dt).clamp(0.0, 1.0);
        a.q.iter().zip(&b.q).map(|(x, y)| x + (y - x) * w).collect()
    }

    /// Queue vectors at the start of each server cycle.
    pub fn cycle_start_states(&self) -> Vec<Vec<f64>> {
        self.cycle_starts
            .iter()
            .map(|&i| self.points[i].q.clone())
            .collect()
    }

    pub fn segments(&self) -> impl Iterator<Item = (f64, f64, &[f64], &[f64])> + '_ {
        self.points
            .windows(2)
            .filter(|w| w[1].time > w[0].time)
            .map(|w| (w[0].time, w[1].time, w[0].q.as_slice(), w[1].q.as_slice()))
    }
}

/// Exact event-driven integration of the HDS under SB-PR from `q0` at the
/// polling epoch of stage 0, up to `horizon`.
pub fn simulate_fluid(
    params: &SystemParameters,
    ctrl: &ControlParams,
    q0: &[f64],
    horizon: f64,
) -> Result<FluidTrajectory, FluidError> {
    model::validate(params, ctrl)?;
    if q0.len() != params.queues() {
        return Err(FluidError::InvalidInitialState("wrong number of queues"));
    }
    if q0.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
        return Err(FluidError::InvalidInitialState("levels must be finite and nonnegative"));
    }
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(FluidError::InvalidInitialState("horizon must be finite and nonnegative"));
    }
    let table = model::augment(params, ctrl.l);
    let n = table.len();
    let s = table.switchover();
    let lambda = params.lambda();

    // (time, q, marker, last polling epoch); locations are filled in below
    let mut raw: Vec<(f64, Vec<f64>, Marker, f64)> = Vec::new();
    let mut q = q0.to_vec();
    let mut t = 0.0;
    let mut stage = 0;
    raw.push((0.0, q.clone(), Marker::Polling(0), 0.0));
    let mut last_polling = 0.0;
    'outer: loop {
        let k = table.queue(stage);
        let r = ctrl.r[stage];
        let b = sbpr_busy(params, k, r, q[k]);
        if t + b > horizon {
            let dt = horizon - t;
            for (j, v) in q.iter_mut().enumerate() {
                *v += if j == k { (lambda[j] - params.mu()[j]) * dt } else { lambda[j] * dt };
            }
            clamp_negative(&mut q)?;
            raw.push((horizon, q.clone(), Marker::Horizon, last_polling));
            break 'outer;
        }
        serve(params, &mut q, k, r);
        clamp_negative(&mut q)?;
        t += b;
        raw.push((t, q.clone(), Marker::Departure(stage), last_polling));
        if t + s[stage] > horizon {
            switch(params, &mut q, horizon - t);
            raw.push((horizon, q.clone(), Marker::Horizon, last_polling));
            break 'outer;
        }
        switch(params, &mut q, s[stage]);
        t += s[stage];
        stage = (stage + 1) % n;
        last_polling = t;
        raw.push((t, q.clone(), Marker::Polling(stage), last_polling));
        if t >= horizon {
            break;
        }
    }

    // Location in effect after each point, via the skip rule: the busy time
    // of a stage is known once its polling state is, and coincident points
    // share the state, so the rule is evaluated against the recorded path.
    let mut points = Vec::with_capacity(raw.len());
    let mut cycle_starts = Vec::new();
    let busy_after = |idx: usize| -> Vec<bool> {
        // busy-positivity of every stage as seen from the polling state at idx
        let q = &raw[idx].1;
        (0..n)
            .map(|j| ctrl.r[j] > 0.0 && q[table.queue(j)] > 0.0)
            .collect()
    };
    for (idx, (time, q, marker, lp)) in raw.iter().enumerate() {
        let location = match *marker {
            Marker::Polling(i) => {
                if sbpr_busy(params, table.queue(i), ctrl.r[i], q[table.queue(i)]) > 0.0 {
                    ServerLocation::Serving(i)
                } else {
                    let flags = busy_after(idx);
                    next_location(Transition::Departure(i), n, |j| s[j] > 0.0, |j| flags[j])
                }
            }
            Marker::Departure(i) => {
                let flags = busy_after(idx);
                next_location(Transition::Departure(i), n, |j| s[j] > 0.0, |j| flags[j])
            }
            Marker::Horizon => match raw.get(idx.wrapping_sub(1)).map(|p| p.2) {
                Some(Marker::Polling(i)) => ServerLocation::Serving(i),
                Some(Marker::Departure(i)) => ServerLocation::Switching(i),
                _ => ServerLocation::Serving(0),
            },
        };
        if *marker == Marker::Polling(0) {
            cycle_starts.push(idx);
        }
        points.push(TrajectoryPoint {
            time: *time,
            q: q.clone(),
            marker: *marker,
            location,
            last_polling: *lp,
        });
    }
    Ok(FluidTrajectory {
        points,
        cycle_starts,
        horizon,
    })
}

/// Sup-norm distance between the trajectory shifted to each cycle start and
/// the PE, over `[0, window]`.
///
/// Both curves are piecewise linear, so the supremum is attained at a
/// breakpoint of one of them; only cycles whose window fits inside the
/// trajectory are reported.
pub fn convergence_distance(traj: &FluidTrajectory, pe: &PeCandidate, window: f64) -> Vec<f64> {
    let end = traj.points.last().map_or(0.0, |p| p.time);
    let mut out = Vec::new();
    for &ci in &traj.cycle_starts {
        let u = traj.points[ci].time;
        if u + window > end + 1e-12 * end.max(1.0) {
            break;
        }
        let mut times: Vec<f64> = vec![0.0, window];
        for p in &traj.points[ci..] {
            let s = p.time - u;
            if s > window {
                break;
            }
            times.push(s);
        }
        let mut base = 0.0;
        while base <= window {
            for bp in &pe.breakpoints {
                let s = base + bp.time;
                if s <= window {
                    times.push(s);
                }
            }
            base += pe.tau;
        }
        let d = times.iter().fold(0.0f64, |m, &s| {
            let a = traj.value_at(u + s);
            let b = pe.value_at(s);
            a.iter()
                .zip(&b)
                .fold(m, |m, (x, y)| m.max((x - y).abs()))
        });
        out.push(d);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn symmetric() -> SystemParameters {
        SystemParameters::new(vec![1.0, 1.0], vec![4.0, 4.0], vec![0, 1], vec![1.0, 1.0]).unwrap()
    }

    fn exh(p: &SystemParameters) -> ControlParams {
        ControlParams::exhaustive(p, 1)
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn stage_map_exhaustive_example() {
        let p = symmetric();
        let t = model::augment(&p, 1);
        let m = stage_map(&p, &t, 0, 1.0);
        assert_eq!(m.a, Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0 / 3.0, 1.0]]));
        assert_eq!(m.b, vec![1.0, 1.0]);
        // exhaustion zeroes the attended queue
        assert_eq!(m.a.mul_vec(&[5.0, 2.0])[0], 0.0);
    }

    #[test]
    fn stage_map_zero_proportion_is_identity() {
        let p = symmetric();
        let t = model::augment(&p, 1);
        let m = stage_map(&p, &t, 1, 0.0);
        assert_eq!(m.a, Matrix::identity(2));
        assert_eq!(m.b, vec![1.0, 1.0]);
    }

    #[test]
    fn cycle_map_example() {
        let cm = cycle_map(&symmetric(), &exh(&symmetric())).unwrap();
        let expect = [[1.0 / 9.0, 1.0 / 3.0], [0.0, 0.0]];
        for i in 0..2 {
            for j in 0..2 {
                assert!(close(cm.a[(i, j)], expect[i][j], 1e-15));
            }
        }
        assert!(close(cm.spectral_radius().unwrap(), 1.0 / 9.0, 1e-10));
    }

    #[test]
    fn cycle_map_doubles_with_multiplicity() {
        let p = symmetric();
        let c1 = cycle_map(&p, &ControlParams::new(1, vec![0.4, 0.9])).unwrap();
        let c2 = cycle_map(&p, &ControlParams::new(2, vec![0.4, 0.9, 0.4, 0.9])).unwrap();
        let sq = c1.a.mul(&c1.a);
        for i in 0..2 {
            for j in 0..2 {
                assert!(close(c2.a[(i, j)], sq[(i, j)], 1e-14));
            }
        }
    }

    #[test]
    fn cycle_map_rejects_unserved_queue() {
        let p = symmetric();
        assert!(matches!(
            cycle_map(&p, &ControlParams::new(1, vec![0.0, 1.0])),
            Err(FluidError::Model(ModelError::EmptyControl { .. }))
        ));
    }

    #[test]
    fn fixed_point_example() {
        let q = pe_fixed_point(&symmetric(), &exh(&symmetric())).unwrap();
        assert!(close(q[0], 3.0, 1e-12) && close(q[1], 1.0, 1e-12));
    }

    #[test]
    fn pe_example_breakpoints() {
        let pe = pe_from_params(&symmetric(), &exh(&symmetric())).unwrap();
        let expect = [
            (0.0, [3.0, 1.0]),
            (1.0, [0.0, 2.0]),
            (2.0, [1.0, 3.0]),
            (3.0, [2.0, 0.0]),
            (4.0, [3.0, 1.0]),
        ];
        assert_eq!(pe.breakpoints.len(), 5);
        for (bp, (t, q)) in pe.breakpoints.iter().zip(expect) {
            assert!(close(bp.time, t, 1e-12));
            assert!(close(bp.q[0], q[0], 1e-12) && close(bp.q[1], q[1], 1e-12));
        }
        assert_eq!(pe.tau, 4.0);
        assert!(close(pe.busy[0], 1.0, 1e-12) && close(pe.busy[1], 1.0, 1e-12));
        assert_eq!(pe.breakpoints[1].marker, Marker::Departure(0));
        assert_eq!(pe.breakpoints[4].marker, Marker::Polling(0));
    }

    #[test]
    fn ratios_round_trip() {
        let p = symmetric();
        let pe = pe_from_params(&p, &exh(&p)).unwrap();
        assert_eq!(ratios_from_pe(&pe), vec![1.0, 1.0]);
        let ctrl = ControlParams::new(1, vec![0.5, 1.0]);
        let r = ratios_from_pe(&pe_from_params(&p, &ctrl).unwrap());
        assert!(close(r[0], 0.5, 1e-12) && close(r[1], 1.0, 1e-12));
    }

    #[test]
    fn recursion_agrees_with_fixed_point() {
        let p = SystemParameters::new(
            vec![2.0; 3],
            vec![8.0; 3],
            vec![0, 1, 2, 1, 2],
            vec![2.0, 0.0, 1.0, 0.5, 2.0],
        )
        .unwrap();
        let ctrl = ControlParams::new(2, vec![1.0, 0.3, 0.7, 0.9, 0.4, 0.8, 0.5, 0.2, 0.1, 1.0]);
        let a = pe_fixed_point(&p, &ctrl).unwrap();
        let b = pe_start_by_recursion(&p, &ctrl).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!(close(*x, *y, 1e-10 * x.abs().max(1.0)), "{a:?} vs {b:?}");
        }
        let x = polling_levels_by_recursion(&p, &ctrl).unwrap();
        let pe = pe_from_params(&p, &ctrl).unwrap();
        for (i, xi) in x.iter().enumerate() {
            let k = pe.stages[i];
            assert!(close(pe.polling_state(i)[k], *xi, 1e-10 * xi.max(1.0)));
        }
    }

    #[test]
    fn skip_rule_cases() {
        // stages 0..3; stage 1 has zero busy and zero switchover
        let s = [1.0, 0.0, 1.0];
        let busy = [true, false, true];
        assert_eq!(
            next_location(Transition::Departure(0), 3, |j| s[j] > 0.0, |j| busy[j]),
            ServerLocation::Switching(0)
        );
        assert_eq!(
            next_location(Transition::SwitchoverEnd(0), 3, |j| s[j] > 0.0, |j| busy[j]),
            ServerLocation::Serving(2)
        );
        let busy = [true, false, false];
        // after stage 0's switchover, stage 1 is empty with no switchover,
        // stage 2 has no work: the next positive activity is switching from 2
        assert_eq!(
            next_location(Transition::SwitchoverEnd(0), 3, |j| s[j] > 0.0, |j| busy[j]),
            ServerLocation::Switching(2)
        );
    }

    #[test]
    fn simulate_from_pe_reproduces_pe() {
        let p = symmetric();
        let pe = pe_from_params(&p, &exh(&p)).unwrap();
        let traj = simulate_fluid(&p, &exh(&p), &[3.0, 1.0], 12.0).unwrap();
        assert_eq!(traj.cycle_starts.len(), 4);
        for pt in &traj.points {
            let e = pe.value_at(pt.time);
            assert!(close(pt.q[0], e[0], 1e-12) && close(pt.q[1], e[1], 1e-12));
        }
        let d = convergence_distance(&traj, &pe, 4.0);
        assert_eq!(d.len(), 3);
        assert!(d.iter().all(|&x| x < 1e-12));
    }

    #[test]
    fn simulate_from_origin_converges() {
        let p = symmetric();
        let traj = simulate_fluid(&p, &exh(&p), &[0.0, 0.0], 60.0).unwrap();
        // zero busy time at the first stage
        assert_eq!(traj.points[1].time, 0.0);
        assert_eq!(traj.points[1].marker, Marker::Departure(0));
        assert_eq!(traj.points[0].location, ServerLocation::Switching(0));
        let last = traj.cycle_start_states().pop().unwrap();
        assert!(close(last[0], 3.0, 1e-9) && close(last[1], 1.0, 1e-9));
    }

    #[test]
    fn horizon_truncates_mid_segment() {
        let p = symmetric();
        let traj = simulate_fluid(&p, &exh(&p), &[3.0, 1.0], 0.5).unwrap();
        let last = traj.points.last().unwrap();
        assert_eq!(last.marker, Marker::Horizon);
        assert_eq!(last.time, 0.5);
        assert!(close(last.q[0], 1.5, 1e-12) && close(last.q[1], 1.5, 1e-12));
    }
}
