//! Summaries across finished runs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::output::{MANIFEST_JSON, ROUNDS_CSV, ROUNDS_HEADER};
use crate::run::{Manifest, SCHEMA_VERSION};

#[derive(Debug, Error)]
pub enum CompareError {
    #[error("need at least two run directories, got {0}")]
    TooFewRuns(usize),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: schema mismatch: {reason}")]
    Schema { path: PathBuf, reason: String },
}

#[derive(Debug, Deserialize)]
struct RoundRow {
    round: u64,
    #[allow(dead_code)]
    consensus: String,
    #[allow(dead_code)]
    winner: String,
    winner_malicious: u8,
    forked: u8,
    global_accuracy: f64,
}

/// What one run directory contributes.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub label: String,
    pub seed: u64,
    pub rounds: u64,
    pub final_accuracy: f64,
    pub malicious_winner_rounds: u64,
    pub forked_rounds: u64,
}

/// Runs sharing a label (the same preset or configuration across seeds).
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSummary {
    pub label: String,
    pub runs: Vec<RunSummary>,
    pub mean_accuracy: f64,
    /// Sample standard deviation; zero for a single run.
    pub std_accuracy: f64,
}

pub fn load_run(dir: &Path) -> Result<RunSummary, CompareError> {
    let mpath = dir.join(MANIFEST_JSON);
    let text = std::fs::read_to_string(&mpath).map_err(|source| CompareError::Io {
        path: mpath.clone(),
        source,
    })?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|source| CompareError::Json {
        path: mpath.clone(),
        source,
    })?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(CompareError::Schema {
            path: mpath,
            reason: format!("schema version {} (expected {SCHEMA_VERSION})", manifest.schema_version),
        });
    }

    let rpath = dir.join(ROUNDS_CSV);
    let csv_err = |source| CompareError::Csv {
        path: rpath.clone(),
        source,
    };
    let mut rdr = csv::Reader::from_path(&rpath).map_err(csv_err)?;
    let header: Vec<String> = rdr.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    if header != ROUNDS_HEADER {
        return Err(CompareError::Schema {
            path: rpath,
            reason: format!("unexpected header {header:?}"),
        });
    }
    let rows: Vec<RoundRow> = rdr.deserialize().collect::<Result<_, _>>().map_err(csv_err)?;
    Ok(RunSummary {
        dir: dir.to_path_buf(),
        label: manifest.label(),
        seed: manifest.seed,
        rounds: rows.last().map_or(0, |r| r.round),
        final_accuracy: rows.last().map_or(f64::NAN, |r| r.global_accuracy),
        malicious_winner_rounds: rows.iter().filter(|r| r.winner_malicious == 1).count() as u64,
        forked_rounds: rows.iter().filter(|r| r.forked == 1).count() as u64,
    })
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Groups runs by label, in order of first appearance.
pub fn compare(dirs: &[PathBuf]) -> Result<Vec<GroupSummary>, CompareError> {
    if dirs.len() < 2 {
        return Err(CompareError::TooFewRuns(dirs.len()));
    }
    let mut order = Vec::new();
    let mut groups: BTreeMap<String, Vec<RunSummary>> = BTreeMap::new();
    for d in dirs {
        let run = load_run(d)?;
        if !groups.contains_key(&run.label) {
            order.push(run.label.clone());
        }
        groups.entry(run.label.clone()).or_default().push(run);
    }
    Ok(order
        .into_iter()
        .map(|label| {
            let runs = groups.remove(&label).unwrap_or_default();
            let accs: Vec<f64> = runs.iter().map(|r| r.final_accuracy).collect();
            let (mean_accuracy, std_accuracy) = mean_std(&accs);
            GroupSummary {
                label,
                runs,
                mean_accuracy,
                std_accuracy,
            }
        })
        .collect())
}

/// Human-readable table; accuracy ratios are relative to the first group.
pub fn render(groups: &[GroupSummary]) -> String {
    let mut s = String::new();
    let base = groups.first().map(|g| g.mean_accuracy);
    let _ = writeln!(
        s,
        "{:<28} {:>4} {:>17} {:>10}  malicious-winner rounds per run",
        "label", "runs", "final acc", "vs first"
    );
    for g in groups {
        let ratio = base.map_or(f64::NAN, |b| g.mean_accuracy / b);
        let mal: Vec<String> = g
            .runs
            .iter()
            .map(|r| format!("seed {}: {}", r.seed, r.malicious_winner_rounds))
            .collect();
        let _ = writeln!(
            s,
            "{:<28} {:>4} {:>8.4} ± {:<6.4} {:>9.3}x  {}",
            g.label,
            g.runs.len(),
            g.mean_accuracy,
            g.std_accuracy,
            ratio,
            mal.join(", ")
        );
    }
    s
}
