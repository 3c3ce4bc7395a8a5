#![allow(dead_code)]

use fluidpoll_core::{ControlParams, SystemParameters};
use proptest::prelude::*;

/// A stable instance with a polling table that visits every queue.
#[derive(Debug, Clone)]
pub struct Instance {
    pub params: SystemParameters,
    pub ctrl: ControlParams,
}

fn table_strategy(k: usize) -> impl Strategy<Value = Vec<usize>> {
    (Just(k), proptest::collection::vec(0..k, 0..=k), any::<u64>()).prop_map(|(k, extra, salt)| {
        // every queue once, in a salted order, then extra visits spliced in
        let mut t: Vec<usize> = (0..k).collect();
        let rot = (salt % k as u64) as usize;
        t.rotate_left(rot);
        for (j, q) in extra.into_iter().enumerate() {
            let pos = (salt.rotate_left(j as u32 * 7) as usize) % (t.len() + 1);
            t.insert(pos, q);
        }
        t
    })
}

pub fn params_strategy(max_k: usize) -> impl Strategy<Value = SystemParameters> {
    (1..=max_k)
        .prop_flat_map(|k| {
            (
                table_strategy(k),
                proptest::collection::vec(0.05f64..1.0, k),
                proptest::collection::vec(0.5f64..5.0, k),
                0.05f64..0.9,
            )
        })
        .prop_flat_map(|(table, share, mu, rho)| {
            let n = table.len();
            (
                Just((table, share, mu, rho)),
                proptest::collection::vec(0.1f64..3.0, n),
            )
        })
        .prop_map(|((table, share, mu, rho), s)| {
            let total: f64 = share.iter().sum();
            let lambda: Vec<f64> = share
                .iter()
                .zip(&mu)
                .map(|(w, m)| rho * w / total * m)
                .collect();
            SystemParameters::new(lambda, mu, table, s).expect("valid instance")
        })
}

/// Proportions in `[lo, 1]`, lifted so every queue has visit mass at least
/// `min_mass`.
pub fn control_for(params: &SystemParameters, l: usize, raw: &[f64], min_mass: f64) -> ControlParams {
    let stages = params.stages();
    let mut r: Vec<f64> = raw[..stages * l].to_vec();
    for k in 0..params.queues() {
        let idx: Vec<usize> = (0..stages * l).filter(|i| params.table()[i % stages] == k).collect();
        let mass: f64 = idx.iter().map(|&i| r[i]).sum();
        if mass < min_mass {
            let i = idx[0];
            r[i] = (r[i] + min_mass - mass).min(1.0);
        }
    }
    ControlParams::new(l, r)
}

pub fn instance_strategy(max_k: usize, max_l: usize, lo: f64) -> impl Strategy<Value = Instance> {
    (params_strategy(max_k), 1..=max_l, proptest::collection::vec(lo..=1.0, 2 * max_k * max_l))
        .prop_map(move |(params, l, raw)| {
            let ctrl = control_for(&params, l, &raw, 0.2);
            Instance { params, ctrl }
        })
}

pub fn symmetric() -> SystemParameters {
    SystemParameters::new(vec![1.0, 1.0], vec![4.0, 4.0], vec![0, 1], vec![1.0, 1.0]).unwrap()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}
