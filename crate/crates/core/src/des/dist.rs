//! Service and switchover laws, parameterised by their mean.

use rand::Rng;
use rand_distr::{Distribution as _, Exp, Gamma, LogNormal};
use serde::{Deserialize, Serialize};

/// Shape of a law; the mean is supplied separately.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum Family {
    Deterministic,
    Exponential,
    Gamma { shape: f64 },
    /// Coefficient of variation `cv > 0`.
    Lognormal { cv: f64 },
    /// Uniform on `[m (1 - spread), m (1 + spread)]`, `0 <= spread <= 1`.
    Uniform { spread: f64 },
}

/// A nonnegative law with known mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Distribution {
    Deterministic(f64),
    Exponential { mean: f64 },
    Gamma { shape: f64, mean: f64 },
    LogNormal { mean: f64, cv: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl Family {
    pub fn with_mean(self, mean: f64) -> Distribution {
        match self {
            Family::Deterministic => Distribution::Deterministic(mean),
            Family::Exponential => Distribution::Exponential { mean },
            Family::Gamma { shape } => Distribution::Gamma { shape, mean },
            Family::Lognormal { cv } => Distribution::LogNormal { mean, cv },
            Family::Uniform { spread } => Distribution::Uniform {
                lo: mean * (1.0 - spread),
                hi: mean * (1.0 + spread),
            },
        }
    }
}

impl Distribution {
    pub fn mean(&self) -> f64 {
        match *self {
            Distribution::Deterministic(v) => v,
            Distribution::Exponential { mean }
            | Distribution::Gamma { mean, .. }
            | Distribution::LogNormal { mean, .. } => mean,
            Distribution::Uniform { lo, hi } => 0.5 * (lo + hi),
        }
    }

    /// Checks the parameters; a zero mean is allowed only for the
    /// deterministic law.
    pub fn validate(&self) -> Result<(), &'static str> {
        let finite_pos = |v: f64| v.is_finite() && v > 0.0;
        match *self {
            Distribution::Deterministic(v) if v.is_finite() && v >= 0.0 => Ok(()),
            Distribution::Deterministic(_) => Err("deterministic value must be finite and nonnegative"),
            Distribution::Exponential { mean } if finite_pos(mean) => Ok(()),
            Distribution::Gamma { shape, mean } if finite_pos(shape) && finite_pos(mean) => Ok(()),
            Distribution::LogNormal { mean, cv } if finite_pos(mean) && finite_pos(cv) => Ok(()),
            Distribution::Uniform { lo, hi } if lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi && hi > 0.0 => {
                Ok(())
            }
            Distribution::Exponential { .. } => Err("exponential mean must be positive"),
            Distribution::Gamma { .. } => Err("gamma shape and mean must be positive"),
            Distribution::LogNormal { .. } => Err("lognormal mean and cv must be positive"),
            Distribution::Uniform { .. } => Err("uniform bounds must satisfy 0 <= lo <= hi, hi > 0"),
        }
    }

    /// Bounded support: the moment generating function is finite everywhere.
    pub fn bounded_support(&self) -> bool {
        matches!(self, Distribution::Deterministic(_) | Distribution::Uniform { .. })
    }

    /// Finite moment generating function in a neighbourhood of zero.
    pub fn light_tailed(&self) -> bool {
        !matches!(self, Distribution::LogNormal { .. })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Distribution::Deterministic(v) => v,
            Distribution::Exponential { mean } => mean * Exp::new(1.0).expect("unit rate").sample(rng),
            Distribution::Gamma { shape, mean } => Gamma::new(shape, mean / shape)
                .expect("validated gamma")
                .sample(rng),
            Distribution::LogNormal { mean, cv } => {
                let s2 = libm::log1p(cv * cv);
                LogNormal::new(libm::log(mean) - 0.5 * s2, libm::sqrt(s2))
                    .expect("validated lognormal")
                    .sample(rng)
            }
            Distribution::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
        }
    }

    /// Sum of `n` independent copies: the scaled switchover `V^n` whose mean
    /// is exactly `n` times the base mean and which concentrates at that mean
    /// in fluid scale.
    pub fn sample_sum<R: Rng + ?Sized>(&self, n: u64, rng: &mut R) -> f64 {
        let nf = n as f64;
        match *self {
            Distribution::Deterministic(v) => nf * v,
            Distribution::Exponential { mean } => Gamma::new(nf, mean)
                .expect("positive shape")
                .sample(rng),
            Distribution::Gamma { shape, mean } => Gamma::new(nf * shape, mean / shape)
                .expect("validated gamma")
                .sample(rng),
            _ => {
                let mut acc = crate::quadrature::CompensatedSum::new();
                for _ in 0..n {
                    acc.add(self.sample(rng));
                }
                acc.value()
            }
        }
    }
}
