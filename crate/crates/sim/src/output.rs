//! Metric files written by a run.
//!
//! Every file is a pure function of the configuration and seed: no
//! timestamps, no host details, fixed row order.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;
use vbfl_core::orchestrator::{DeviceFailure, RoundMetrics};
use vbfl_core::protocol::{model_hash, Block, Hash};
use vbfl_core::DeviceId;

pub const ROUNDS_CSV: &str = "rounds.csv";
pub const STAKE_CSV: &str = "stake.csv";
pub const VAD_CSV: &str = "vad.csv";
pub const EVENTS_CSV: &str = "events.csv";
pub const CHAIN_JSONL: &str = "chain.jsonl";
pub const MANIFEST_JSON: &str = "manifest.json";
pub const CALIBRATION_JSON: &str = "calibration.json";
pub const CONFIG_TOML: &str = "config.toml";

pub const ROUNDS_HEADER: [&str; 6] = [
    "round",
    "consensus",
    "winner",
    "winner_malicious",
    "forked",
    "global_accuracy",
];

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
}

#[derive(Serialize)]
struct RoundRow<'a> {
    round: u64,
    consensus: &'a str,
    winner: String,
    winner_malicious: u8,
    forked: u8,
    global_accuracy: f64,
}

#[derive(Serialize)]
struct StakeRow {
    round: u64,
    device: String,
    stake: u64,
    is_malicious: u8,
    worker_stake: u64,
    validator_stake: u64,
    miner_stake: u64,
    blacklisted: u8,
}

#[derive(Serialize)]
struct VadRow {
    round: u64,
    validator: String,
    worker: String,
    vad: f64,
    vote: char,
    worker_malicious: u8,
}

#[derive(Serialize)]
struct EventRow {
    round: u64,
    device: String,
    event: &'static str,
    detail: String,
}

struct Table {
    path: PathBuf,
    w: csv::Writer<BufWriter<File>>,
}

impl Table {
    fn create(dir: &Path, name: &str, header: &[&str]) -> Result<Self, OutputError> {
        let path = dir.join(name);
        let file = File::create(&path).map_err(|source| OutputError::Io {
            path: path.clone(),
            source,
        })?;
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(BufWriter::new(file));
        w.write_record(header).map_err(|source| OutputError::Csv {
            path: path.clone(),
            source,
        })?;
        Ok(Table { path, w })
    }

    fn row<S: Serialize>(&mut self, row: S) -> Result<(), OutputError> {
        self.w.serialize(row).map_err(|source| OutputError::Csv {
            path: self.path.clone(),
            source,
        })
    }

    fn finish(mut self) -> Result<(), OutputError> {
        self.w.flush().map_err(|source| OutputError::Io {
            path: self.path,
            source,
        })
    }
}

fn flag(b: bool) -> u8 {
    u8::from(b)
}

/// Streams per-round metrics into the four CSV files.
pub struct MetricsWriter {
    rounds: Table,
    stake: Table,
    vad: Table,
    events: Table,
}

impl MetricsWriter {
    pub fn create(dir: &Path) -> Result<Self, OutputError> {
        std::fs::create_dir_all(dir).map_err(|source| OutputError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        Ok(MetricsWriter {
            rounds: Table::create(dir, ROUNDS_CSV, &ROUNDS_HEADER)?,
            stake: Table::create(
                dir,
                STAKE_CSV,
                &[
                    "round",
                    "device",
                    "stake",
                    "is_malicious",
                    "worker_stake",
                    "validator_stake",
                    "miner_stake",
                    "blacklisted",
                ],
            )?,
            vad: Table::create(
                dir,
                VAD_CSV,
                &["round", "validator", "worker", "vad", "vote", "worker_malicious"],
            )?,
            events: Table::create(dir, EVENTS_CSV, &["round", "device", "event", "detail"])?,
        })
    }

    pub fn record(&mut self, m: &RoundMetrics) -> Result<(), OutputError> {
        self.rounds.row(RoundRow {
            round: m.round,
            consensus: m.consensus,
            winner: m.winner.map(|w| w.to_hex()).unwrap_or_default(),
            winner_malicious: flag(m.winner_malicious),
            forked: flag(m.forked),
            global_accuracy: m.global_accuracy,
        })?;
        for s in &m.stakes {
            self.stake.row(StakeRow {
                round: m.round,
                device: s.device.to_hex(),
                stake: s.stake(),
                is_malicious: flag(s.malicious),
                worker_stake: s.earnings.worker,
                validator_stake: s.earnings.validator,
                miner_stake: s.earnings.miner,
                blacklisted: flag(s.blacklisted),
            })?;
        }
        for r in &m.vad {
            self.vad.row(VadRow {
                round: r.round,
                validator: r.validator.to_hex(),
                worker: r.worker.to_hex(),
                vad: r.vad,
                vote: r.vote.as_char(),
                worker_malicious: flag(r.worker_malicious),
            })?;
        }
        if let Some(reason) = m.skipped {
            self.events.row(EventRow {
                round: m.round,
                device: String::new(),
                event: "round_skipped",
                detail: reason.as_str().into(),
            })?;
        }
        for (device, ev) in &m.events {
            self.events.row(EventRow {
                round: m.round,
                device: device.to_hex(),
                event: ev.as_str(),
                detail: String::new(),
            })?;
        }
        for f in &m.failures {
            let (device, event, detail) = match f {
                DeviceFailure::Select(d, e) => (d, "select_failed", e.to_string()),
                DeviceFailure::Append(d, e) => (d, "block_rejected", e.to_string()),
            };
            self.events.row(EventRow {
                round: m.round,
                device: device.to_hex(),
                event,
                detail,
            })?;
        }
        Ok(())
    }

    pub fn finish(self) -> Result<(), OutputError> {
        self.rounds.finish()?;
        self.stake.finish()?;
        self.vad.finish()?;
        self.events.finish()
    }
}

#[derive(Serialize)]
struct TallyDump {
    worker: String,
    update_hash: String,
    expected_reward: u64,
    epochs: u32,
    train_size: u64,
    positives: u32,
    negatives: u32,
    voters: Vec<String>,
}

#[derive(Serialize)]
struct BlockDump {
    round: u64,
    miner: String,
    prev_hash: String,
    content_hash: String,
    base_model_hash: String,
    nonce: u64,
    miner_reward: u64,
    validator_rewards: std::collections::BTreeMap<String, u64>,
    tallies: Vec<TallyDump>,
    signature: String,
}

fn hx(h: &Hash) -> String {
    hex::encode(h)
}

/// One JSON object per block. Model parameters are replaced by their
/// hashes.
pub fn write_chain(path: &Path, blocks: &[std::sync::Arc<Block>]) -> Result<(), OutputError> {
    let io = |source| OutputError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    for b in blocks {
        let dump = BlockDump {
            round: b.round,
            miner: b.miner.to_hex(),
            prev_hash: hx(&b.prev_hash),
            content_hash: hx(&b.content_hash),
            base_model_hash: hx(&b.base_model_hash),
            nonce: b.nonce,
            miner_reward: b.miner_reward,
            validator_rewards: b.validator_rewards.iter().map(|(d, r)| (d.to_hex(), *r)).collect(),
            tallies: b
                .tallies
                .iter()
                .map(|t| TallyDump {
                    worker: t.worker().to_hex(),
                    update_hash: hx(&model_hash(t.update())),
                    expected_reward: t.worker_tx.expected_reward,
                    epochs: t.worker_tx.epochs,
                    train_size: t.worker_tx.train_size,
                    positives: t.positives,
                    negatives: t.negatives,
                    voters: t.voters.iter().map(DeviceId::to_hex).collect(),
                })
                .collect(),
            signature: hex::encode(b.signature),
        };
        serde_json::to_writer(&mut w, &dump).map_err(|source| OutputError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn write_text(path: &Path, text: &str) -> Result<(), OutputError> {
    std::fs::write(path, text).map_err(|source| OutputError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), OutputError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| OutputError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    std::fs::write(path, text).map_err(|source| OutputError::Io {
        path: path.to_path_buf(),
        source,
    })
}
