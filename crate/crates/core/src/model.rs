//! Polling-system parameters, table algebra and the `(L, r)` control
//! parameterisation.
//!
//! Queue and stage indices are 0-based throughout the crate. Conversion to
//! the 1-based convention of configuration files and reports happens in the
//! IO layer only.

use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Total loads in `[1 - RHO_MARGIN, inf)` are rejected as infeasible.
pub const RHO_MARGIN: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("total traffic intensity {rho} is not below 1")]
    Infeasible { rho: f64 },
    #[error("control never serves queue(s) {}", OneBased(.queues))]
    EmptyControl { queues: Vec<usize> },
    #[error("control has {found} proportions, the augmented table has {expected} stages")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
}

/// Displays 0-based indices with the 1-based convention used in reports.
struct OneBased<'a>(&'a [usize]);

impl fmt::Display for OneBased<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (n, q) in self.0.iter().enumerate() {
            if n > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{}", q + 1)?;
        }
        Ok(())
    }
}

/// The physical system: Poisson arrival rates, service rates, the basic
/// table and the mean switchover time after each basic stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemParameters {
    lambda: Vec<f64>,
    mu: Vec<f64>,
    table: Vec<usize>,
    switchover: Vec<f64>,
}

impl SystemParameters {
    /// Checks the field-level invariants. Stability (`rho < 1`) is not
    /// required here; see [`check_stable`].
    pub fn new(
        lambda: Vec<f64>,
        mu: Vec<f64>,
        table: Vec<usize>,
        switchover: Vec<f64>,
    ) -> Result<Self, ModelError> {
        let k = lambda.len();
        if k == 0 {
            return Err(ModelError::InvalidParameter("at least one queue is required"));
        }
        if mu.len() != k {
            return Err(ModelError::InvalidParameter("lambda and mu differ in length"));
        }
        if lambda.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(ModelError::InvalidParameter("arrival rates must be positive and finite"));
        }
        if mu.iter().any(|&m| !(m > 0.0 && m.is_finite())) {
            return Err(ModelError::InvalidParameter("service rates must be positive and finite"));
        }
        if table.is_empty() {
            return Err(ModelError::InvalidParameter("the table has no stages"));
        }
        if table.iter().any(|&q| q >= k) {
            return Err(ModelError::InvalidParameter("table references an unknown queue"));
        }
        if (0..k).any(|q| !table.contains(&q)) {
            return Err(ModelError::InvalidParameter("every queue must appear in the table"));
        }
        if switchover.len() != table.len() {
            return Err(ModelError::InvalidParameter(
                "one switchover mean is required per table stage",
            ));
        }
        if switchover.iter().any(|&s| !(s >= 0.0 && s.is_finite())) {
            return Err(ModelError::InvalidParameter("switchover means must be nonnegative"));
        }
        if switchover.iter().sum::<f64>() <= 0.0 {
            return Err(ModelError::InvalidParameter("total switchover time must be positive"));
        }
        Ok(Self {
            lambda,
            mu,
            table,
            switchover,
        })
    }

    /// Like [`new`](Self::new), with switchover means given per queue: the
    /// switchover after stage `i` has the mean listed for queue `p(i)`.
    pub fn with_queue_switchovers(
        lambda: Vec<f64>,
        mu: Vec<f64>,
        table: Vec<usize>,
        per_queue: &[f64],
    ) -> Result<Self, ModelError> {
        if per_queue.len() != lambda.len() {
            return Err(ModelError::InvalidParameter(
                "one switchover mean is required per queue",
            ));
        }
        if table.iter().any(|&q| q >= per_queue.len()) {
            return Err(ModelError::InvalidParameter("table references an unknown queue"));
        }
        let switchover = table.iter().map(|&q| per_queue[q]).collect();
        Self::new(lambda, mu, table, switchover)
    }

    pub fn queues(&self) -> usize {
        self.lambda.len()
    }

    /// Number of stages `I` in the basic table.
    pub fn stages(&self) -> usize {
        self.table.len()
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn table(&self) -> &[usize] {
        &self.table
    }

    pub fn switchover(&self) -> &[f64] {
        &self.switchover
    }

    /// Total mean switchover time `s` over one basic table.
    pub fn total_switchover(&self) -> f64 {
        self.switchover.iter().sum()
    }

    /// A table is cyclic when every queue is visited exactly once.
    pub fn is_cyclic(&self) -> bool {
        self.table.len() == self.queues()
    }

    /// Net drain rate `mu_k - lambda_k` of queue `k` while it is served.
    pub fn drain_rate(&self, k: usize) -> f64 {
        self.mu[k] - self.lambda[k]
    }
}

/// Per-queue and total traffic intensities.
pub fn traffic_intensity(params: &SystemParameters) -> (Vec<f64>, f64) {
    let rho_k: Vec<f64> = params
        .lambda
        .iter()
        .zip(&params.mu)
        .map(|(l, m)| l / m)
        .collect();
    let rho = rho_k.iter().sum();
    (rho_k, rho)
}

/// Fails with [`ModelError::Infeasible`] unless `rho < 1 - RHO_MARGIN`.
pub fn check_stable(params: &SystemParameters) -> Result<f64, ModelError> {
    let (_, rho) = traffic_intensity(params);
    if rho >= 1.0 - RHO_MARGIN {
        Err(ModelError::Infeasible { rho })
    } else {
        Ok(rho)
    }
}

/// The basic table repeated `L` times, with per-stage switchover means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedTable {
    l: usize,
    stages: Vec<usize>,
    switchover: Vec<f64>,
}

impl AugmentedTable {
    pub fn multiplicity(&self) -> usize {
        self.l
    }

    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    /// Queue polled at stage `i`.
    pub fn queue(&self, i: usize) -> usize {
        self.stages[i]
    }

    pub fn stages(&self) -> &[usize] {
        &self.stages
    }

    pub fn switchover(&self) -> &[f64] {
        &self.switchover
    }

    /// Stages at which queue `k` is polled, in table order.
    pub fn visits(&self, k: usize) -> Vec<usize> {
        self.stages
            .iter()
            .enumerate()
            .filter(|(_, &q)| q == k)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Repeats the basic table `l` times. `l = 0` is treated as 1.
pub fn augment(params: &SystemParameters, l: usize) -> AugmentedTable {
    let l = l.max(1);
    let mut stages = Vec::with_capacity(params.stages() * l);
    let mut switchover = Vec::with_capacity(params.stages() * l);
    for _ in 0..l {
        stages.extend_from_slice(&params.table);
        switchover.extend_from_slice(&params.switchover);
    }
    AugmentedTable {
        l,
        stages,
        switchover,
    }
}

/// Cycle length of an `L`-cycle periodic equilibrium: `s L / (1 - rho)`.
pub fn cycle_length(params: &SystemParameters, l: usize) -> Result<f64, ModelError> {
    let rho = check_stable(params)?;
    Ok(params.total_switchover() * l as f64 / (1.0 - rho))
}

/// Table multiplicity `L` and per-stage proportions `r` over the augmented
/// table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlParams {
    pub l: usize,
    pub r: Vec<f64>,
}

impl ControlParams {
    pub fn new(l: usize, r: Vec<f64>) -> Self {
        Self { l, r }
    }

    /// The exhaustive control `r = 1` on an `l`-fold table.
    pub fn exhaustive(params: &SystemParameters, l: usize) -> Self {
        Self {
            l,
            r: alloc::vec![1.0; params.stages() * l],
        }
    }

    pub fn is_exhaustive(&self) -> bool {
        self.r.iter().all(|&r| r == 1.0)
    }
}

/// Outcome of a successful [`validate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub rho_k: Vec<f64>,
    pub rho: f64,
    /// `sum_{i: p(i) = k} r_i` for every queue.
    pub visit_mass: Vec<f64>,
    /// Every queue has visit mass at least 1.
    pub in_compact_set: bool,
}

/// Sum of the proportions over the visits of each queue.
pub fn visit_mass(params: &SystemParameters, r: &[f64]) -> Vec<f64> {
    let i = params.stages();
    let mut mass = alloc::vec![0.0; params.queues()];
    for (stage, &ri) in r.iter().enumerate() {
        mass[params.table[stage % i]] += ri;
    }
    mass
}

/// Accepts `(params, ctrl)` when the system is stable, the proportion
/// vector matches the augmented table and every queue is served somewhere.
pub fn validate(
    params: &SystemParameters,
    ctrl: &ControlParams,
) -> Result<ValidationReport, ModelError> {
    let (rho_k, rho) = traffic_intensity(params);
    if rho >= 1.0 - RHO_MARGIN {
        return Err(ModelError::Infeasible { rho });
    }
    if ctrl.l == 0 {
        return Err(ModelError::InvalidParameter("table multiplicity must be at least 1"));
    }
    let expected = params.stages() * ctrl.l;
    if ctrl.r.len() != expected {
        return Err(ModelError::ShapeMismatch {
            expected,
            found: ctrl.r.len(),
        });
    }
    if ctrl.r.iter().any(|&r| !(0.0..=1.0).contains(&r)) {
        return Err(ModelError::InvalidParameter("proportions must lie in [0, 1]"));
    }
    let mass = visit_mass(params, &ctrl.r);
    let empty: Vec<usize> = (0..params.queues()).filter(|&k| mass[k] <= 0.0).collect();
    if !empty.is_empty() {
        return Err(ModelError::EmptyControl { queues: empty });
    }
    Ok(ValidationReport {
        rho_k,
        rho,
        in_compact_set: mass.iter().all(|&m| m >= 1.0),
        visit_mass: mass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn three_queue() -> SystemParameters {
        SystemParameters::new(
            vec![2.0; 3],
            vec![8.0; 3],
            vec![0, 1, 2, 1, 2],
            vec![2.0; 5],
        )
        .unwrap()
    }

    fn symmetric() -> SystemParameters {
        SystemParameters::new(vec![1.0, 1.0], vec![4.0, 4.0], vec![0, 1], vec![1.0, 1.0]).unwrap()
    }

    #[test]
    fn traffic_intensity_examples() {
        let (rk, rho) = traffic_intensity(&three_queue());
        assert_eq!(rk, vec![0.25; 3]);
        assert_eq!(rho, 0.75);
        assert_eq!(traffic_intensity(&symmetric()).1, 0.5);

        let unit = SystemParameters::new(vec![1.0], vec![1.0], vec![0], vec![1.0]).unwrap();
        assert_eq!(traffic_intensity(&unit).1, 1.0);
        assert!(matches!(check_stable(&unit), Err(ModelError::Infeasible { .. })));
    }

    #[test]
    fn near_unit_load_is_infeasible() {
        let p = SystemParameters::new(vec![1.0 - 1e-13], vec![1.0], vec![0], vec![1.0]).unwrap();
        assert!(matches!(
            validate(&p, &ControlParams::exhaustive(&p, 1)),
            Err(ModelError::Infeasible { .. })
        ));
    }

    #[test]
    fn validate_reports_empty_queues() {
        let p = three_queue();
        let err = validate(&p, &ControlParams::new(1, vec![1.0, 0.0, 0.0, 0.0, 0.0])).unwrap_err();
        assert_eq!(err, ModelError::EmptyControl { queues: vec![1, 2] });
        assert_eq!(err.to_string(), "control never serves queue(s) 2, 3");
    }

    #[test]
    fn validate_accepts_exhaustive() {
        let p = three_queue();
        let rep = validate(&p, &ControlParams::new(1, vec![1.0; 5])).unwrap();
        assert!(rep.in_compact_set);
        assert_eq!(rep.visit_mass, vec![1.0, 2.0, 2.0]);
        let rep = validate(&p, &ControlParams::new(1, vec![0.5, 0.2, 0.3, 0.2, 0.3])).unwrap();
        assert!(!rep.in_compact_set);
    }

    #[test]
    fn validate_shape_mismatch() {
        let p = three_queue();
        assert_eq!(
            validate(&p, &ControlParams::new(2, vec![1.0; 5])),
            Err(ModelError::ShapeMismatch {
                expected: 10,
                found: 5
            })
        );
    }

    #[test]
    fn cycle_length_examples() {
        assert_eq!(cycle_length(&symmetric(), 1).unwrap(), 4.0);
        assert_eq!(cycle_length(&symmetric(), 2).unwrap(), 8.0);
        assert_eq!(cycle_length(&three_queue(), 1).unwrap(), 40.0);
    }

    #[test]
    fn augment_examples() {
        let p = three_queue();
        assert_eq!(augment(&p, 2).stages(), &[0, 1, 2, 1, 2, 0, 1, 2, 1, 2]);
        assert_eq!(augment(&p, 1).stages(), p.table());
        let two = SystemParameters::new(vec![1.0; 2], vec![4.0; 2], vec![0, 1], vec![1.0, 0.5])
            .unwrap();
        let a = augment(&two, 3);
        assert_eq!(a.stages(), &[0, 1, 0, 1, 0, 1]);
        assert_eq!(a.switchover(), &[1.0, 0.5, 1.0, 0.5, 1.0, 0.5]);
        assert_eq!(a.visits(1), vec![1, 3, 5]);
    }

    #[test]
    fn zero_switchover_stage_allowed_but_not_all() {
        assert!(SystemParameters::new(vec![1.0; 2], vec![4.0; 2], vec![0, 1], vec![0.0, 1.0]).is_ok());
        assert!(SystemParameters::new(vec![1.0; 2], vec![4.0; 2], vec![0, 1], vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn missing_queue_rejected() {
        assert!(SystemParameters::new(vec![1.0; 3], vec![4.0; 3], vec![0, 1], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn per_queue_switchovers_map_through_table() {
        let p = SystemParameters::with_queue_switchovers(
            vec![2.0; 3],
            vec![8.0; 3],
            vec![0, 1, 2, 1, 2],
            &[1.0, 2.0, 3.0],
        )
        .unwrap();
        assert_eq!(p.switchover(), &[1.0, 2.0, 3.0, 2.0, 3.0]);
    }
}
