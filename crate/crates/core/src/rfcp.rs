//! The restricted fluid-control problem: minimise the PE cost over the
//! SB-PR proportions for each table multiplicity in a finite set.
//!
//! For fixed `L` the PE cost is continuous in `r` on the compact set where
//! every queue's proportions sum to at least one, so a minimiser exists
//! there. It is only piecewise smooth (the order of busy-period ends moves
//! with `r`), hence a derivative-free multi-start search. Global optimality
//! is not certified for non-cyclic tables.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{pe_average_cost, CostError, CostFunction};
use crate::fluid::{pe_from_params, FluidError};
use crate::model::{self, ControlParams, ModelError, SystemParameters};
use crate::nelder_mead::{minimize, NelderMeadOptions};
use crate::rng::{substream, Source};

/// Costs within this relative distance count as ties across `L`.
pub const TIE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RfcpError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Fluid(#[from] FluidError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error("the set of table multiplicities is empty")]
    EmptyMultiplicitySet,
    #[error("table multiplicity must be at least 1")]
    ZeroMultiplicity,
    #[error("the basic table is not cyclic")]
    NotCyclic,
    #[error("the relaxation bound needs a separable piecewise-linear cost")]
    UnsupportedCost,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfcpOptions {
    /// Table multiplicities to optimise over.
    pub multiplicities: Vec<usize>,
    /// Random starts per `L` besides the exhaustive start; defaults to
    /// `20 + 5 I L`.
    pub budget: Option<usize>,
    pub seed: u64,
    /// Function evaluations per Nelder–Mead run.
    pub max_evals: usize,
    /// Initial weight of the squared distance to the feasible set.
    pub penalty: f64,
}

impl Default for RfcpOptions {
    fn default() -> Self {
        RfcpOptions {
            multiplicities: vec![1],
            budget: None,
            seed: 0,
            max_evals: 4_000,
            penalty: 1e4,
        }
    }
}

/// Optimum for one table multiplicity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerLResult {
    pub l: usize,
    pub r: Vec<f64>,
    pub cost: f64,
    /// Number of starts, including the exhaustive one.
    pub starts: usize,
    /// Index of the winning start (0 is exhaustive).
    pub best_start: usize,
    pub evaluations: usize,
    pub iterations: usize,
    /// Times the penalty weight was doubled.
    pub penalty_doublings: usize,
    /// Stages with `r_i = 0` and `r_i = 1`.
    pub at_zero: usize,
    pub at_one: usize,
    /// Queues whose proportions sum to exactly one.
    pub sum_active: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfcpSolution {
    pub l: usize,
    pub r: Vec<f64>,
    pub cost: f64,
    pub per_l: Vec<PerLResult>,
    /// Relaxation lower bound at the chosen `L`, when it applies.
    pub bound: Option<f64>,
}

/// Euclidean projection of `x` onto `{y in [0,1]^m : sum y >= 1}`.
fn project_queue(x: &[f64], out: &mut [f64]) {
    let clamp_sum = |theta: f64, out: &mut [f64]| -> f64 {
        let mut s = 0.0;
        for (o, v) in out.iter_mut().zip(x) {
            *o = (v + theta).clamp(0.0, 1.0);
            s += *o;
        }
        s
    };
    if clamp_sum(0.0, out) >= 1.0 {
        return;
    }
    let min = x.iter().copied().fold(f64::INFINITY, f64::min);
    let (mut lo, mut hi) = (0.0, 2.0 - min.min(1.0));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if clamp_sum(mid, out) >= 1.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    clamp_sum(hi, out);
}

/// Projection onto the compact control set: per queue, the proportions of
/// its stages in `[0,1]` summing to at least one.
pub fn project(visits: &[Vec<usize>], x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for v in visits {
        xs.clear();
        xs.extend(v.iter().map(|&i| x[i]));
        ys.clear();
        ys.resize(v.len(), 0.0);
        project_queue(&xs, &mut ys);
        for (&i, &y) in v.iter().zip(&ys) {
            out[i] = y;
        }
    }
    out
}

/// PE cost of `(L, r)`, or `+inf` when the PE cannot be formed.
pub fn pe_cost(params: &SystemParameters, psi: &CostFunction, l: usize, r: &[f64]) -> f64 {
    let ctrl = ControlParams::new(l, r.to_vec());
    match pe_from_params(params, &ctrl) {
        Ok(pe) => pe_average_cost(&pe, psi),
        Err(_) => f64::INFINITY,
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn solve_for_l(
    params: &SystemParameters,
    psi: &CostFunction,
    l: usize,
    opts: &RfcpOptions,
) -> PerLResult {
    let table = model::augment(params, l);
    let dim = table.len();
    let visits: Vec<Vec<usize>> = (0..params.queues()).map(|k| table.visits(k)).collect();
    let budget = opts.budget.unwrap_or(20 + 5 * dim);

    let mut starts = vec![vec![1.0; dim]];
    let mut rng = substream(opts.seed, Source::OptimizerStarts, l as u64, 0);
    for _ in 0..budget {
        let x: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
        starts.push(project(&visits, &x));
    }

    let mut evaluations = 0usize;
    let mut iterations = 0usize;
    let mut doublings = 0usize;
    // The cost is always evaluated at the projection, so every candidate is
    // a feasible control; the penalty only keeps the simplex near the set.
    let run = |x0: &[f64], step: f64, weight: f64, evaluations: &mut usize, iterations: &mut usize| {
        let nm = NelderMeadOptions {
            initial_step: step,
            f_tol: 1e-13,
            x_tol: 1e-9,
            max_evals: opts.max_evals,
            bounds: Some((0.0, 1.0)),
        };
        let res = minimize(
            |x| {
                let y = project(&visits, x);
                pe_cost(params, psi, l, &y) + weight * dist2(x, &y)
            },
            x0,
            &nm,
        );
        *evaluations += res.evals;
        *iterations += res.iterations;
        res
    };

    let mut best: Option<(f64, Vec<f64>, usize)> = None;
    for (idx, x0) in starts.iter().enumerate() {
        let mut weight = opts.penalty;
        let mut res = run(x0, 0.1, weight, &mut evaluations, &mut iterations);
        // a minimiser far outside the set means the penalty was too weak
        for _ in 0..4 {
            let y = project(&visits, &res.x);
            if libm::sqrt(dist2(&res.x, &y)) <= 1e-6 {
                break;
            }
            weight *= 2.0;
            doublings += 1;
            res = run(&y, 0.05, weight, &mut evaluations, &mut iterations);
        }
        let y = project(&visits, &res.x);
        let c = pe_cost(params, psi, l, &y);
        if best.as_ref().is_none_or(|b| c < b.0) {
            best = Some((c, y, idx));
        }
    }
    let (mut cost, mut r, best_start) = best.expect("at least the exhaustive start");

    // polish from the incumbent with a small simplex
    let res = run(&r, 0.01, opts.penalty, &mut evaluations, &mut iterations);
    let y = project(&visits, &res.x);
    let c = pe_cost(params, psi, l, &y);
    if c < cost {
        cost = c;
        r = y;
    }
    // snap proportions that sit next to a bound
    let snapped: Vec<f64> = r
        .iter()
        .map(|&v| {
            if v < 1e-6 {
                0.0
            } else if v > 1.0 - 1e-6 {
                1.0
            } else {
                v
            }
        })
        .collect();
    if snapped != r {
        let snapped = project(&visits, &snapped);
        let c = pe_cost(params, psi, l, &snapped);
        if c <= cost {
            cost = c;
            r = snapped;
        }
    }

    let sum_active = visits
        .iter()
        .filter(|v| (v.iter().map(|&i| r[i]).sum::<f64>() - 1.0).abs() <= 1e-12)
        .count();
    PerLResult {
        l,
        at_zero: r.iter().filter(|&&v| v == 0.0).count(),
        at_one: r.iter().filter(|&&v| v == 1.0).count(),
        sum_active,
        r,
        cost,
        starts: starts.len(),
        best_start,
        evaluations,
        iterations,
        penalty_doublings: doublings,
    }
}

/// Solves the restricted problem over `opts.multiplicities`. Deterministic
/// in `(params, psi, opts)`.
pub fn solve_rfcp(
    params: &SystemParameters,
    psi: &CostFunction,
    opts: &RfcpOptions,
) -> Result<RfcpSolution, RfcpError> {
    model::check_stable(params)?;
    psi.validate(params.queues())?;
    if opts.multiplicities.is_empty() {
        return Err(RfcpError::EmptyMultiplicitySet);
    }
    if opts.multiplicities.contains(&0) {
        return Err(RfcpError::ZeroMultiplicity);
    }
    let mut ls = opts.multiplicities.clone();
    ls.sort_unstable();
    ls.dedup();
    // surface PE failures (e.g. a singular cycle system) as errors
    pe_from_params(params, &ControlParams::exhaustive(params, ls[0]))?;

    let per_l: Vec<PerLResult> = ls.iter().map(|&l| solve_for_l(params, psi, l, opts)).collect();
    let mut pick = 0;
    for (i, res) in per_l.iter().enumerate().skip(1) {
        let inc = per_l[pick].cost;
        if res.cost < inc - TIE_TOL * inc.abs() {
            pick = i;
        }
    }
    let chosen = &per_l[pick];
    let bound = relaxation_bound_cyclic(params, psi, chosen.l).ok();
    Ok(RfcpSolution {
        l: chosen.l,
        r: chosen.r.clone(),
        cost: chosen.cost,
        bound,
        per_l,
    })
}

/// Exhaustive control `(1, 1...1)` when it is known to be optimal over all
/// `L`: cyclic basic table and separable convex cost.
pub fn exhaustive_shortcut(params: &SystemParameters, psi: &CostFunction) -> Option<ControlParams> {
    (params.is_cyclic() && psi.is_separable_convex()).then(|| ControlParams::exhaustive(params, 1))
}

/// As [`exhaustive_shortcut`], and additionally for any cost when the only
/// multiplicity considered is `L = 1` on a cyclic table.
pub fn exhaustive_shortcut_for(
    params: &SystemParameters,
    psi: &CostFunction,
    multiplicities: &[usize],
) -> Option<ControlParams> {
    exhaustive_shortcut(params, psi).or_else(|| {
        (params.is_cyclic() && !multiplicities.is_empty() && multiplicities.iter().all(|&l| l == 1))
            .then(|| ControlParams::exhaustive(params, 1))
    })
}

/// Lower bound on the `L`-cycle PE cost for a cyclic table and separable
/// piecewise-linear (or linear) cost, from optimising each queue alone.
///
/// Queue `k` can stay above level `alpha` for at most
/// `M = max(tau_L - L (alpha/lambda + alpha/(mu - lambda)), 0)` per cycle,
/// and the area above `alpha` over a table cycle spent there for time `t`
/// is at least `(1 - rho_k) lambda_k t^2 / 2`; spreading `M` evenly over the
/// `L` table cycles is optimal.
pub fn relaxation_bound_cyclic(
    params: &SystemParameters,
    psi: &CostFunction,
    l: usize,
) -> Result<f64, RfcpError> {
    if !params.is_cyclic() {
        return Err(RfcpError::NotCyclic);
    }
    if l == 0 {
        return Err(RfcpError::ZeroMultiplicity);
    }
    psi.validate(params.queues())?;
    let tau = model::cycle_length(params, l)?;
    let lf = l as f64;
    let (rho_k, _) = model::traffic_intensity(params);
    let per_queue = |k: usize, alpha: f64, h: f64| {
        let lam = params.lambda()[k];
        let m = (tau - lf * (alpha / lam + alpha / params.drain_rate(k))).max(0.0);
        let t = m / lf;
        h * lf * 0.5 * (1.0 - rho_k[k]) * lam * t * t
    };
    let mut total = 0.0;
    match psi {
        CostFunction::Linear { c } => {
            for (k, &ck) in c.iter().enumerate() {
                total += per_queue(k, 0.0, ck);
            }
        }
        CostFunction::PiecewiseLinear { queues, offset } => {
            total += offset * tau;
            for (k, f) in queues.iter().enumerate() {
                for (&a, h) in f.breakpoints().iter().zip(f.hinge_weights()) {
                    total += per_queue(k, a, h);
                }
            }
        }
        _ => return Err(RfcpError::UnsupportedCost),
    }
    Ok(total / tau)
}
