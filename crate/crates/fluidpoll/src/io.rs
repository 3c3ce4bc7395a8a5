//! Self-describing output files: every CSV starts with `#` lines carrying
//! the resolved configuration and seed, every JSON document embeds them.

use std::path::Path;

use fluidpoll_core::des::CycleRecord;
use fluidpoll_core::fluid::{Breakpoint, Marker, TrajectoryPoint};
use fluidpoll_core::{FluidTrajectory, PeCandidate};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

/// A data file held in memory until written.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputFile {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl OutputFile {
    pub fn sha256(&self) -> String {
        Sha256::digest(&self.bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn header(cfg: &ExperimentConfig, title: &str) -> String {
    format!(
        "# {title}\n# config: {}\n# seed: {}\n",
        cfg.to_json(),
        cfg.seed
    )
}

/// CSV with a comment header.
pub fn csv_file(
    name: &str,
    cfg: &ExperimentConfig,
    title: &str,
    columns: &[String],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> OutputFile {
    let mut bytes = header(cfg, title).into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut bytes);
        w.write_record(columns).expect("in-memory write");
        for row in rows {
            w.write_record(&row).expect("in-memory write");
        }
        w.flush().expect("in-memory write");
    }
    OutputFile {
        name: name.to_string(),
        bytes,
    }
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    config: &'a ExperimentConfig,
    seed: u64,
    #[serde(flatten)]
    body: &'a T,
}

/// Pretty JSON document with the configuration embedded.
pub fn json_file<T: Serialize>(name: &str, cfg: &ExperimentConfig, body: &T) -> OutputFile {
    let env = Envelope {
        config: cfg,
        seed: cfg.seed,
        body,
    };
    let mut bytes = serde_json::to_vec_pretty(&env).expect("output serializes");
    bytes.push(b'\n');
    OutputFile {
        name: name.to_string(),
        bytes,
    }
}

pub fn text_file(name: &str, text: String) -> OutputFile {
    OutputFile {
        name: name.to_string(),
        bytes: text.into_bytes(),
    }
}

/// Marker label with 1-based stage numbers.
pub fn marker_label(m: Marker) -> String {
    match m {
        Marker::Polling(i) => format!("polling:{}", i + 1),
        Marker::Departure(i) => format!("departure:{}", i + 1),
        Marker::Horizon => "horizon".to_string(),
    }
}

fn state_columns(k: usize) -> Vec<String> {
    (1..=k).map(|j| format!("q_{j}")).collect()
}

fn point_row(time: f64, marker: Marker, q: &[f64]) -> Vec<String> {
    let mut row = vec![time.to_string(), marker_label(marker)];
    row.extend(q.iter().map(f64::to_string));
    row
}

pub fn pe_csv(name: &str, cfg: &ExperimentConfig, pe: &PeCandidate) -> OutputFile {
    let mut cols = vec!["time".to_string(), "marker".to_string()];
    cols.extend(state_columns(pe.queues()));
    let rows = pe
        .breakpoints
        .iter()
        .map(|b: &Breakpoint| point_row(b.time, b.marker, &b.q));
    csv_file(name, cfg, "periodic equilibrium breakpoints", &cols, rows)
}

pub fn trajectory_csv(name: &str, cfg: &ExperimentConfig, traj: &FluidTrajectory) -> OutputFile {
    let k = traj.points.first().map_or(0, |p| p.q.len());
    let mut cols = vec!["time".to_string(), "marker".to_string()];
    cols.extend(state_columns(k));
    let rows = traj
        .points
        .iter()
        .map(|p: &TrajectoryPoint| point_row(p.time, p.marker, &p.q));
    csv_file(name, cfg, "fluid trajectory breakpoints", &cols, rows)
}

/// One row per measured cycle: index, scaled length, scaled cost and the
/// queue lengths at the cycle start.
pub fn cycles_csv(name: &str, cfg: &ExperimentConfig, title: &str, records: &[CycleRecord]) -> OutputFile {
    let k = records.first().map_or(0, |r| r.start.len());
    let mut cols = vec!["m".to_string(), "T".to_string(), "Psi".to_string()];
    cols.extend((1..=k).map(|j| format!("Q_{j}")));
    let rows = records.iter().map(|r| {
        let mut row = vec![r.m.to_string(), r.t_bar.to_string(), r.psi_bar.to_string()];
        row.extend(r.start.iter().map(u64::to_string));
        row
    });
    csv_file(name, cfg, title, &cols, rows)
}

/// Writes the data files, then a `meta.json` sidecar with timing and
/// digests (the only output that changes between identical runs).
pub fn write_outputs(dir: &Path, command: &str, files: &[OutputFile], started: std::time::SystemTime) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    for f in files {
        std::fs::write(dir.join(&f.name), &f.bytes)?;
    }
    let unix = |t: std::time::SystemTime| t.duration_since(std::time::UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64());
    let finished = std::time::SystemTime::now();
    let meta = serde_json::json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "started_unix": unix(started),
        "finished_unix": unix(finished),
        "files": files.iter().map(|f| serde_json::json!({"name": f.name, "sha256": f.sha256()})).collect::<Vec<_>>(),
    });
    let mut bytes = serde_json::to_vec_pretty(&meta).expect("meta serializes");
    bytes.push(b'\n');
    std::fs::write(dir.join("meta.json"), bytes)
}
