//! Running an experiment into an output directory.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use vbfl_core::learning::{Dataset, LearnError};
use vbfl_core::orchestrator::{DatasetSpec, RoundMetrics, SimConfig, SimError, Simulation};
use vbfl_core::protocol::{sha256, HASH_FUNCTION};
use vbfl_core::DeviceId;

use crate::calibration::Calibration;
use crate::config::FileConfig;
use crate::idx::{load_idx_dataset, IdxError};
use crate::output::{self, MetricsWriter, OutputError};

/// Hash of the simulator sources this binary was built from.
pub const CODE_HASH: &str = env!("VBFL_CODE_HASH");
/// Bumped whenever an output file changes shape.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Idx(#[from] IdxError),
    #[error("generating the synthetic task: {0}")]
    Task(LearnError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Output(#[from] OutputError),
}

impl RunError {
    /// A protocol invariant broke, as opposed to bad input or IO.
    pub fn is_invariant_violation(&self) -> bool {
        matches!(self, RunError::Sim(SimError::Invariant(_)))
    }
}

/// Contents of `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    /// Preset name, or `None` for a run built from a config file alone.
    pub preset: Option<String>,
    pub seed: u64,
    pub rounds: u64,
    pub hash_function: String,
    pub code_hash: String,
    /// The fully resolved configuration.
    pub config: FileConfig,
}

impl Manifest {
    pub fn new(config: &SimConfig, preset: Option<&str>) -> Self {
        Manifest {
            schema_version: SCHEMA_VERSION,
            preset: preset.map(str::to_string),
            seed: config.master_seed,
            rounds: config.rounds,
            hash_function: HASH_FUNCTION.to_string(),
            code_hash: CODE_HASH.to_string(),
            config: FileConfig::from_sim(config),
        }
    }

    /// Grouping label for comparisons: the preset name, else a short hash
    /// of the configuration with its seed removed.
    pub fn label(&self) -> String {
        match &self.preset {
            Some(p) => p.clone(),
            None => {
                let mut c = self.config.clone();
                c.seed = None;
                let json = serde_json::to_vec(&c).expect("configs serialize");
                format!("config-{}", &hex::encode(sha256(&json))[..12])
            }
        }
    }
}

pub fn load_dataset(spec: &DatasetSpec) -> Result<Dataset, RunError> {
    match spec {
        DatasetSpec::Blobs(b) => b.generate().map_err(RunError::Task),
        DatasetSpec::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
        } => Ok(load_idx_dataset(
            Path::new(train_images),
            Path::new(train_labels),
            Path::new(test_images),
            Path::new(test_labels),
        )?),
    }
}

pub struct RunOutcome {
    pub simulation: Simulation,
    /// Per-round metrics with any trace removed.
    pub metrics: Vec<RoundMetrics>,
    pub calibration: Option<Calibration>,
}

/// The device whose chain is dumped: the lowest id that no device has
/// blacklisted.
pub fn reporting_device(sim: &Simulation) -> DeviceId {
    let blacklisted: BTreeSet<DeviceId> = sim
        .devices()
        .iter()
        .flat_map(|d| d.ledger.blacklist().iter().copied())
        .collect();
    sim.devices()
        .iter()
        .map(|d| d.id)
        .find(|id| !blacklisted.contains(id))
        .unwrap_or(sim.devices()[0].id)
}

/// Runs `config` to completion, writing every output file into `out`.
/// `on_round` sees each round's metrics (including the trace, if enabled)
/// before they are written.
pub fn run_to_dir(
    config: SimConfig,
    preset: Option<&str>,
    out: &Path,
    mut on_round: impl FnMut(&RoundMetrics),
) -> Result<RunOutcome, RunError> {
    let data = load_dataset(&config.dataset)?;
    let manifest = Manifest::new(&config, preset);
    let mut sim = Simulation::new(config, &data)?;
    let mut writer = MetricsWriter::create(out)?;
    output::write_json(&out.join(output::MANIFEST_JSON), &manifest)?;
    output::write_text(&out.join(output::CONFIG_TOML), &manifest.config.to_toml())?;

    let mut metrics = Vec::new();
    let mut vads = Vec::new();
    while sim.round() < sim.config().rounds {
        let mut m = sim.run_round()?;
        on_round(&m);
        writer.record(&m)?;
        vads.extend(m.vad.iter().cloned());
        m.trace = None;
        metrics.push(m);
    }
    writer.finish()?;
    sim.verify_chains().map_err(SimError::from)?;

    let reporter = reporting_device(&sim);
    let chain = sim.device(reporter).expect("reporter is a device").chain.blocks();
    output::write_chain(&out.join(output::CHAIN_JSONL), chain)?;

    let calibration = Calibration::from_records(&vads);
    if let Some(c) = &calibration {
        output::write_json(&out.join(output::CALIBRATION_JSON), c)?;
    }
    Ok(RunOutcome {
        simulation: sim,
        metrics,
        calibration,
    })
}
