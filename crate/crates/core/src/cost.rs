//! Holding costs and their exact integration along piecewise-linear paths.
//!
//! A fluid trajectory is linear between breakpoints, so the time integral of
//! a separable cost splits into one-dimensional integrals of `psi_k` along
//! straight lines. Linear, piecewise-linear and tabulated costs are linear
//! between their knots, so each segment is cut where it crosses a knot and
//! integrated by the trapezoid rule, which is then exact. Polynomials use a
//! Gauss–Legendre rule of sufficient degree. Custom costs fall back to a
//! composite 16-point rule refined to a relative tolerance of `1e-10`.

use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

use crate::fluid::{FluidTrajectory, PeCandidate};
use crate::quadrature::{CompensatedSum, GaussRule};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CostError {
    #[error("cost is defined for {expected} queues, system has {found}")]
    Dimension { expected: usize, found: usize },
    #[error("queue {queue}: {reason}")]
    InvalidQueueCost { queue: usize, reason: &'static str },
    #[error("invalid cost: {0}")]
    Invalid(&'static str),
}

/// Convex piecewise-linear `psi(x) = sum_l h_l (x - alpha_l)^+`, with
/// breakpoints `0 = alpha_1 < alpha_2 < ...` and slopes `p_1 < p_2 < ...`
/// on successive pieces; `h_l = p_l - p_{l-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinear {
    alpha: Vec<f64>,
    slope: Vec<f64>,
}

impl PiecewiseLinear {
    pub fn new(alpha: Vec<f64>, slope: Vec<f64>) -> Result<Self, &'static str> {
        if alpha.is_empty() || alpha.len() != slope.len() {
            return Err("breakpoints and slopes must be nonempty and of equal length");
        }
        if alpha[0] != 0.0 {
            return Err("first breakpoint must be 0");
        }
        if alpha.iter().any(|a| !a.is_finite()) || slope.iter().any(|p| !p.is_finite()) {
            return Err("breakpoints and slopes must be finite");
        }
        if alpha.windows(2).any(|w| w[0] >= w[1]) {
            return Err("breakpoints must be strictly increasing");
        }
        if slope[0] < 0.0 || slope.windows(2).any(|w| w[0] >= w[1]) {
            return Err("slopes must be nonnegative and strictly increasing");
        }
        Ok(PiecewiseLinear { alpha, slope })
    }

    pub fn linear(c: f64) -> Result<Self, &'static str> {
        Self::new(alloc::vec![0.0], alloc::vec![c])
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.alpha
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slope
    }

    /// Hinge weights `h_l = p_l - p_{l-1}` (with `p_0 = 0`).
    pub fn hinge_weights(&self) -> Vec<f64> {
        let mut prev = 0.0;
        self.slope
            .iter()
            .map(|&p| {
                let h = p - prev;
                prev = p;
                h
            })
            .collect()
    }

    pub fn eval(&self, x: f64) -> f64 {
        let mut acc = 0.0;
        let mut prev = 0.0;
        for (&a, &p) in self.alpha.iter().zip(&self.slope) {
            if x > a {
                acc += (p - prev) * (x - a);
            }
            prev = p;
        }
        acc
    }
}

/// Piecewise-linear interpolation through `(x_j, y_j)` with `x_0 = 0`,
/// extended beyond the last knot with the last slope.
#[derive(Debug, Clone, PartialEq)]
pub struct Tabulated {
    x: Vec<f64>,
    y: Vec<f64>,
}

impl Tabulated {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self, &'static str> {
        if x.len() < 2 || x.len() != y.len() {
            return Err("table needs at least two points of equal-length coordinates");
        }
        if x[0] != 0.0 {
            return Err("table must start at 0");
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err("table entries must be finite");
        }
        if x.windows(2).any(|w| w[0] >= w[1]) {
            return Err("table abscissae must be strictly increasing");
        }
        if y[0] < 0.0 || y.windows(2).any(|w| w[0] > w[1]) {
            return Err("table values must be nonnegative and nondecreasing");
        }
        Ok(Tabulated { x, y })
    }

    pub fn knots(&self) -> &[f64] {
        &self.x
    }

    pub fn eval(&self, v: f64) -> f64 {
        let n = self.x.len();
        let j = self.x.partition_point(|&a| a <= v).clamp(1, n - 1);
        let (x0, x1, y0, y1) = (self.x[j - 1], self.x[j], self.y[j - 1], self.y[j]);
        y0 + (y1 - y0) * (v - x0) / (x1 - x0)
    }

    fn is_convex(&self) -> bool {
        let s: Vec<f64> = self
            .x
            .windows(2)
            .zip(self.y.windows(2))
            .map(|(x, y)| (y[1] - y[0]) / (x[1] - x[0]))
            .collect();
        s.windows(2).all(|w| w[0] <= w[1])
    }
}

/// A user-supplied cost. It is treated as non-separable and must be
/// nonnegative, nondecreasing and continuous; `growth_order` is the `p` in
/// `psi(x) = O(|x|^p)`, used only for diagnostics.
type Evaluator = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct CustomCost {
    pub name: &'static str,
    pub growth_order: f64,
    eval: Evaluator,
}

impl CustomCost {
    pub fn new(
        name: &'static str,
        growth_order: f64,
        eval: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        CustomCost {
            name,
            growth_order,
            eval: Arc::new(eval),
        }
    }
}

impl fmt::Debug for CustomCost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomCost")
            .field("name", &self.name)
            .field("growth_order", &self.growth_order)
            .finish_non_exhaustive()
    }
}

/// Holding cost `psi`.
#[derive(Debug, Clone)]
pub enum CostFunction {
    /// `sum_k c_k x_k`.
    Linear { c: Vec<f64> },
    /// `offset + sum_k psi_k(x_k)` with convex piecewise-linear `psi_k`.
    PiecewiseLinear { queues: Vec<PiecewiseLinear>, offset: f64 },
    /// `sum_k sum_j a_kj x_k^j`, coefficients nonnegative.
    Polynomial { coeffs: Vec<Vec<f64>> },
    /// `sum_k psi_k(x_k)` interpolated from tables.
    Tabulated { queues: Vec<Tabulated> },
    Custom(CustomCost),
}

impl CostFunction {
    pub fn linear(c: Vec<f64>) -> Self {
        CostFunction::Linear { c }
    }

    /// Number of queues, or `None` for custom costs.
    pub fn queues(&self) -> Option<usize> {
        match self {
            CostFunction::Linear { c } => Some(c.len()),
            CostFunction::PiecewiseLinear { queues, .. } => Some(queues.len()),
            CostFunction::Polynomial { coeffs } => Some(coeffs.len()),
            CostFunction::Tabulated { queues } => Some(queues.len()),
            CostFunction::Custom(_) => None,
        }
    }

    /// Checks the cost against a system with `queues` queues.
    pub fn validate(&self, queues: usize) -> Result<(), CostError> {
        if let Some(found) = self.queues() {
            if found != queues {
                return Err(CostError::Dimension {
                    expected: found,
                    found: queues,
                });
            }
        }
        match self {
            CostFunction::Linear { c } => {
                for (k, v) in c.iter().enumerate() {
                    if !(v.is_finite() && *v >= 0.0) {
                        return Err(CostError::InvalidQueueCost {
                            queue: k,
                            reason: "coefficient must be finite and nonnegative",
                        });
                    }
                }
            }
            CostFunction::PiecewiseLinear { offset, .. } => {
                if !(offset.is_finite() && *offset >= 0.0) {
                    return Err(CostError::Invalid("offset must be finite and nonnegative"));
                }
            }
            CostFunction::Polynomial { coeffs } => {
                for (k, a) in coeffs.iter().enumerate() {
                    if a.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                        return Err(CostError::InvalidQueueCost {
                            queue: k,
                            reason: "coefficients must be finite and nonnegative",
                        });
                    }
                }
            }
            CostFunction::Tabulated { .. } => {}
            CostFunction::Custom(c) => {
                if !(c.growth_order.is_finite() && c.growth_order >= 0.0) {
                    return Err(CostError::Invalid("growth order must be finite and nonnegative"));
                }
            }
        }
        Ok(())
    }

    pub fn is_separable(&self) -> bool {
        !matches!(self, CostFunction::Custom(_))
    }

    /// Whether every `psi_k` is convex. Custom costs are never assumed
    /// convex.
    pub fn is_separable_convex(&self) -> bool {
        match self {
            CostFunction::Linear { .. } | CostFunction::PiecewiseLinear { .. } => true,
            // nonnegative coefficients make every term convex on x >= 0
            CostFunction::Polynomial { .. } => true,
            CostFunction::Tabulated { queues } => queues.iter().all(Tabulated::is_convex),
            CostFunction::Custom(_) => false,
        }
    }

    /// Polynomial growth order `p` with `psi(x) = O(|x|^p)`.
    pub fn growth_order(&self) -> f64 {
        match self {
            CostFunction::Linear { .. }
            | CostFunction::PiecewiseLinear { .. }
            | CostFunction::Tabulated { .. } => 1.0,
            CostFunction::Polynomial { coeffs } => coeffs
                .iter()
                .map(|a| a.iter().rposition(|&v| v != 0.0).unwrap_or(0))
                .max()
                .unwrap_or(0) as f64,
            CostFunction::Custom(c) => c.growth_order,
        }
    }

    /// Cost of queue `k` alone; `None` for custom costs.
    pub fn eval_queue(&self, k: usize, x: f64) -> Option<f64> {
        match self {
            CostFunction::Linear { c } => Some(c[k] * x),
            CostFunction::PiecewiseLinear { queues, .. } => Some(queues[k].eval(x)),
            CostFunction::Polynomial { coeffs } => Some(horner(&coeffs[k], x)),
            CostFunction::Tabulated { queues } => Some(queues[k].eval(x)),
            CostFunction::Custom(_) => None,
        }
    }

    /// Constant term added to the separable sum.
    fn offset(&self) -> f64 {
        match self {
            CostFunction::PiecewiseLinear { offset, .. } => *offset,
            _ => 0.0,
        }
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        match self {
            CostFunction::Linear { c } => c.iter().zip(x).map(|(c, x)| c * x).sum(),
            CostFunction::Custom(c) => (c.eval)(x),
            _ => {
                self.offset()
                    + x.iter()
                        .enumerate()
                        .map(|(k, &v)| self.eval_queue(k, v).unwrap_or(0.0))
                        .sum::<f64>()
            }
        }
    }

    /// `int_{t0}^{t1} psi(q(u)) du` for `q` linear from `q0` to `q1`.
    pub fn segment_integral(&self, t0: f64, t1: f64, q0: &[f64], q1: &[f64]) -> f64 {
        let dt = t1 - t0;
        if dt <= 0.0 {
            return 0.0;
        }
        match self {
            CostFunction::Linear { c } => {
                let mut acc = CompensatedSum::new();
                for k in 0..c.len() {
                    acc.add(c[k] * 0.5 * (q0[k] + q1[k]));
                }
                acc.value() * dt
            }
            CostFunction::PiecewiseLinear { queues, offset } => {
                let mut acc = CompensatedSum::new();
                acc.add(*offset);
                for (k, f) in queues.iter().enumerate() {
                    acc.add(split_trapezoid(f.breakpoints(), q0[k], q1[k], |x| f.eval(x)));
                }
                acc.value() * dt
            }
            CostFunction::Tabulated { queues } => {
                let mut acc = CompensatedSum::new();
                for (k, f) in queues.iter().enumerate() {
                    acc.add(split_trapezoid(f.knots(), q0[k], q1[k], |x| f.eval(x)));
                }
                acc.value() * dt
            }
            CostFunction::Polynomial { coeffs } => {
                let mut acc = CompensatedSum::new();
                for (k, a) in coeffs.iter().enumerate() {
                    let nodes = a.len() / 2 + 1;
                    let rule = GaussRule::new(nodes);
                    acc.add(rule.integrate(0.0, 1.0, |w| horner(a, q0[k] + (q1[k] - q0[k]) * w)));
                }
                acc.value() * dt
            }
            CostFunction::Custom(c) => {
                let rule = GaussRule::new(16);
                let mut buf = alloc::vec![0.0; q0.len()];
                rule.integrate_adaptive(t0, t1, 1e-10, 14, |t| {
                    let w = (t - t0) / dt;
                    for (b, (a0, a1)) in buf.iter_mut().zip(q0.iter().zip(q1)) {
                        *b = a0 + (a1 - a0) * w;
                    }
                    (c.eval)(&buf)
                })
            }
        }
    }
}

fn horner(a: &[f64], x: f64) -> f64 {
    a.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

/// Mean of `f` along the straight path from `x0` to `x1`, exact when `f` is
/// linear between consecutive `knots`.
fn split_trapezoid(knots: &[f64], x0: f64, x1: f64, f: impl Fn(f64) -> f64) -> f64 {
    let (lo, hi) = if x0 <= x1 { (x0, x1) } else { (x1, x0) };
    if hi - lo <= 0.0 {
        return f(x0);
    }
    let mut acc = CompensatedSum::new();
    let mut a = lo;
    let mut fa = f(a);
    for &k in knots.iter().filter(|&&k| k > lo && k < hi) {
        let fk = f(k);
        acc.add(0.5 * (fa + fk) * (k - a));
        a = k;
        fa = fk;
    }
    acc.add(0.5 * (fa + f(hi)) * (hi - a));
    acc.value() / (hi - lo)
}

/// Time-average cost of a PE over its cycle.
pub fn pe_average_cost(pe: &PeCandidate, psi: &CostFunction) -> f64 {
    let total: CompensatedSum = pe
        .segments()
        .map(|(t0, t1, q0, q1)| psi.segment_integral(t0, t1, q0, q1))
        .collect();
    total.value() / pe.tau
}

/// `(t, (1/t) int_0^t psi(q(u)) du)` at every breakpoint with `t > 0`.
pub fn trajectory_running_cost(traj: &FluidTrajectory, psi: &CostFunction) -> Vec<(f64, f64)> {
    let mut acc = CompensatedSum::new();
    let mut out = Vec::with_capacity(traj.points.len());
    for w in traj.points.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        acc.add(psi.segment_integral(a.time, b.time, &a.q, &b.q));
        if b.time > 0.0 {
            out.push((b.time, acc.value() / b.time));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fluid::{pe_from_params, simulate_fluid};
    use crate::model::{ControlParams, SystemParameters};
    use alloc::vec;

    fn symmetric() -> SystemParameters {
        SystemParameters::new(vec![1.0, 1.0], vec![4.0, 4.0], vec![0, 1], vec![1.0, 1.0]).unwrap()
    }

    fn sym_pe() -> PeCandidate {
        let p = symmetric();
        pe_from_params(&p, &ControlParams::exhaustive(&p, 1)).unwrap()
    }

    #[test]
    fn linear_evaluate() {
        assert_eq!(CostFunction::linear(vec![1.0, 1.0]).evaluate(&[3.0, 1.0]), 4.0);
    }

    #[test]
    fn piecewise_continuous_at_breakpoint() {
        let f = PiecewiseLinear::new(vec![0.0, 2.0, 5.0], vec![1.0, 3.0, 4.0]).unwrap();
        let a = 2.0;
        let left = f.eval(a - 1e-12);
        let right = f.eval(a + 1e-12);
        assert!((left - right).abs() < 1e-10);
        assert_eq!(f.eval(a), 2.0);
        assert_eq!(f.eval(5.0), 2.0 + 3.0 * 3.0);
        assert_eq!(f.eval(0.0), 0.0);
        assert_eq!(f.hinge_weights(), vec![1.0, 2.0, 1.0]);
    }

    #[test]
    fn piecewise_rejects_bad_input() {
        assert!(PiecewiseLinear::new(vec![1.0], vec![1.0]).is_err());
        assert!(PiecewiseLinear::new(vec![0.0, 1.0], vec![2.0, 1.0]).is_err());
        assert!(PiecewiseLinear::new(vec![0.0, 0.0], vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn zero_at_origin() {
        let costs = [
            CostFunction::linear(vec![2.0, 3.0]),
            CostFunction::PiecewiseLinear {
                queues: vec![PiecewiseLinear::linear(1.0).unwrap(); 2],
                offset: 0.0,
            },
            CostFunction::Polynomial {
                coeffs: vec![vec![0.0, 1.0, 2.0]; 2],
            },
        ];
        for c in &costs {
            assert_eq!(c.evaluate(&[0.0, 0.0]), 0.0);
        }
    }

    #[test]
    fn symmetric_pe_linear_cost() {
        let c = pe_average_cost(&sym_pe(), &CostFunction::linear(vec![1.0, 1.0]));
        assert!((c - 3.0).abs() < 1e-12);
    }

    #[test]
    fn constant_cost_averages_to_itself() {
        let psi = CostFunction::PiecewiseLinear {
            queues: vec![PiecewiseLinear::linear(0.0).unwrap(); 2],
            offset: 2.5,
        };
        assert!((pe_average_cost(&sym_pe(), &psi) - 2.5).abs() < 1e-14);
    }

    #[test]
    fn quadratic_single_segment() {
        let psi = CostFunction::Polynomial {
            coeffs: vec![vec![0.0, 0.0, 1.0]],
        };
        let (h, b) = (3.0, 2.0);
        let v = psi.segment_integral(1.0, 1.0 + b, &[0.0], &[h]);
        assert!((v - h * h / 3.0 * b).abs() < 1e-12);
    }

    #[test]
    fn split_trapezoid_matches_closed_form() {
        let f = PiecewiseLinear::new(vec![0.0, 1.0, 2.5], vec![0.5, 2.0, 3.0]).unwrap();
        let psi = CostFunction::PiecewiseLinear {
            queues: vec![f.clone()],
            offset: 0.0,
        };
        // antiderivative of the hinge form
        let anti = |x: f64| {
            f.breakpoints()
                .iter()
                .zip(f.hinge_weights())
                .map(|(&a, h)| if x > a { 0.5 * h * (x - a) * (x - a) } else { 0.0 })
                .sum::<f64>()
        };
        let (x0, x1) = (3.7, 0.2);
        let v = psi.segment_integral(0.0, 2.0, &[x0], &[x1]);
        let e = 2.0 * (anti(x0) - anti(x1)) / (x0 - x1);
        assert!((v - e).abs() < 1e-13, "{v} vs {e}");
    }

    #[test]
    fn tabulated_interpolates_and_extrapolates() {
        let t = Tabulated::new(vec![0.0, 1.0, 3.0], vec![0.0, 1.0, 5.0]).unwrap();
        assert_eq!(t.eval(0.5), 0.5);
        assert_eq!(t.eval(2.0), 3.0);
        assert_eq!(t.eval(4.0), 7.0);
        assert!(t.is_convex());
    }

    #[test]
    fn custom_matches_linear() {
        let psi = CostFunction::Custom(CustomCost::new("sum", 1.0, |x| x.iter().sum()));
        let c = pe_average_cost(&sym_pe(), &psi);
        assert!((c - 3.0).abs() < 1e-10);
        assert!(!psi.is_separable());
    }

    #[test]
    fn running_cost_on_pe() {
        let p = symmetric();
        let ctrl = ControlParams::exhaustive(&p, 1);
        let traj = simulate_fluid(&p, &ctrl, &[3.0, 1.0], 40.0).unwrap();
        let psi = CostFunction::linear(vec![1.0, 1.0]);
        let rc = trajectory_running_cost(&traj, &psi);
        for (t, v) in rc {
            let cycles = t / 4.0;
            if (cycles - libm::round(cycles)).abs() < 1e-12 {
                assert!((v - 3.0).abs() < 1e-9, "t={t} v={v}");
            }
        }
    }

    #[test]
    fn running_cost_from_zero_path_is_zero_for_empty_cost() {
        let p = symmetric();
        let ctrl = ControlParams::exhaustive(&p, 1);
        let traj = simulate_fluid(&p, &ctrl, &[0.0, 0.0], 8.0).unwrap();
        let rc = trajectory_running_cost(&traj, &CostFunction::linear(vec![0.0, 0.0]));
        assert!(rc.iter().all(|&(_, v)| v == 0.0));
    }

    #[test]
    fn running_cost_converges_from_far_start() {
        let p = symmetric();
        let ctrl = ControlParams::exhaustive(&p, 1);
        let psi = CostFunction::linear(vec![1.0, 1.0]);
        let traj = simulate_fluid(&p, &ctrl, &[30.0, 10.0], 2000.0).unwrap();
        let rc = trajectory_running_cost(&traj, &psi);
        let at = |c: usize| {
            let t = traj.points[traj.cycle_starts[c]].time;
            rc.iter().find(|(u, _)| *u == t).unwrap().1 * t
        };
        // the cost of cycle 50 alone is the PE cost
        let (t50, t51) = (
            traj.points[traj.cycle_starts[50]].time,
            traj.points[traj.cycle_starts[51]].time,
        );
        let per_cycle = (at(51) - at(50)) / (t51 - t50);
        assert!((per_cycle - 3.0).abs() < 3e-3 * 1e-3, "{per_cycle}");
        // the running average carries the transient excess as O(1/t)
        let excess = |c: usize| at(c) - 3.0 * traj.points[traj.cycle_starts[c]].time;
        assert!((excess(50) - excess(400)).abs() < 1e-6 * excess(50));
        let (_, v) = *rc.last().unwrap();
        assert!((v - 3.0).abs() <= excess(50) / 1999.0);
    }
}
