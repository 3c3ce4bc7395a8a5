//! Batch-means statistics over cycle records.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quadrature::CompensatedSum;

/// Default number of batches.
pub const BATCHES: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StatsError {
    #[error("need at least 2 cycles, got {found}")]
    TooFewCycles { found: usize },
}

/// Standard normal quantile (Acklam's rational approximation refined by one
/// Halley step).
pub fn normal_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "probability out of range");
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    let tail = |q: f64| {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let x = if p < 0.02425 {
        tail(libm::sqrt(-2.0 * libm::log(p)))
    } else if p > 1.0 - 0.02425 {
        -tail(libm::sqrt(-2.0 * libm::log(1.0 - p)))
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    };
    let e = 0.5 * libm::erfc(-x / core::f64::consts::SQRT_2) - p;
    let u = e * libm::sqrt(2.0 * core::f64::consts::PI) * libm::exp(0.5 * x * x);
    x - u / (1.0 + 0.5 * x * u)
}

/// Student-t quantile: exact for 1 and 2 degrees of freedom, Cornish–Fisher
/// expansion otherwise.
pub fn t_quantile(p: f64, df: usize) -> f64 {
    assert!(df >= 1, "degrees of freedom must be positive");
    match df {
        1 => libm::tan(core::f64::consts::PI * (p - 0.5)),
        2 => (2.0 * p - 1.0) / libm::sqrt(2.0 * p * (1.0 - p)),
        _ => {
            let z = normal_quantile(p);
            let v = df as f64;
            let z2 = z * z;
            let g1 = (z2 + 1.0) * z / 4.0;
            let g2 = ((5.0 * z2 + 16.0) * z2 + 3.0) * z / 96.0;
            let g3 = (((3.0 * z2 + 19.0) * z2 + 17.0) * z2 - 15.0) * z / 384.0;
            let g4 = ((((79.0 * z2 + 776.0) * z2 + 1482.0) * z2 - 1920.0) * z2 - 945.0) * z / 92160.0;
            z + g1 / v + g2 / (v * v) + g3 / (v * v * v) + g4 / (v * v * v * v)
        }
    }
}

/// Splits `len` items into `b` contiguous batches of near-equal size.
fn batch_bounds(len: usize, b: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..b).map(move |j| (j * len / b, (j + 1) * len / b))
}

/// Mean and batch-means standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub se: f64,
    pub batches: usize,
    pub samples: usize,
}

impl MeanEstimate {
    /// `(mean - target) / se`; zero when both the error and `se` vanish.
    pub fn z(&self, target: f64) -> f64 {
        let d = self.mean - target;
        if self.se > 0.0 {
            d / self.se
        } else if d == 0.0 {
            0.0
        } else {
            d.signum() * f64::INFINITY
        }
    }

    /// Two-sided `level` confidence half-width.
    pub fn half_width(&self, level: f64) -> f64 {
        self.se * t_quantile(0.5 + 0.5 * level, self.batches.max(2) - 1)
    }
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().copied().collect::<CompensatedSum>().value() / n;
    let v = if x.len() > 1 {
        x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, v)
}

/// Batch-means estimate of the mean of a correlated sequence.
pub fn batch_mean(x: &[f64], batches: usize) -> Result<MeanEstimate, StatsError> {
    if x.len() < 2 {
        return Err(StatsError::TooFewCycles { found: x.len() });
    }
    let b = batches.clamp(2, x.len());
    let means: Vec<f64> = batch_bounds(x.len(), b)
        .map(|(lo, hi)| x[lo..hi].iter().copied().collect::<CompensatedSum>().value() / (hi - lo) as f64)
        .collect();
    let mean = x.iter().copied().collect::<CompensatedSum>().value() / x.len() as f64;
    let (_, var) = mean_var(&means);
    Ok(MeanEstimate {
        mean,
        se: libm::sqrt(var / b as f64),
        batches: b,
        samples: x.len(),
    })
}

/// Ratio estimate `sum y / sum x` with a batch-means confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioEstimate {
    pub estimate: f64,
    /// 95% half-width.
    pub half_width: f64,
    pub se: f64,
    pub batches: usize,
    pub samples: usize,
}

pub fn batch_ratio(y: &[f64], x: &[f64], batches: usize) -> Result<RatioEstimate, StatsError> {
    assert_eq!(y.len(), x.len(), "paired samples");
    if x.len() < 2 {
        return Err(StatsError::TooFewCycles { found: x.len() });
    }
    let b = batches.clamp(2, x.len());
    let sum = |v: &[f64]| v.iter().copied().collect::<CompensatedSum>().value();
    let ratios: Vec<f64> = batch_bounds(x.len(), b)
        .map(|(lo, hi)| {
            let d = sum(&x[lo..hi]);
            if d > 0.0 {
                sum(&y[lo..hi]) / d
            } else {
                0.0
            }
        })
        .collect();
    let den = sum(x);
    let estimate = if den > 0.0 { sum(y) / den } else { 0.0 };
    let (_, var) = mean_var(&ratios);
    let se = libm::sqrt(var / b as f64);
    Ok(RatioEstimate {
        estimate,
        half_width: se * t_quantile(0.975, b - 1),
        se,
        batches: b,
        samples: x.len(),
    })
}

/// Split-sample stationarity check on a sequence: compares the first 10%
/// with the last 50% and returns the z statistic.
pub fn geweke_z(x: &[f64]) -> f64 {
    let n = x.len();
    let na = (n / 10).max(2);
    let nb = (n / 2).max(2);
    if n < na + nb {
        return 0.0;
    }
    let (ma, va) = mean_var(&x[..na]);
    let (mb, vb) = mean_var(&x[n - nb..]);
    let s = libm::sqrt(va / na as f64 + vb / nb as f64);
    if s > 0.0 {
        (ma - mb) / s
    } else if ma == mb {
        0.0
    } else {
        f64::INFINITY
    }
}
