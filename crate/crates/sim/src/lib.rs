//! Front end for the VBFL simulator: experiment presets, TOML config files,
//! IDX dataset loading, metric output and run comparison.

pub mod calibration;
pub mod compare;
pub mod config;
pub mod idx;
pub mod output;
pub mod presets;
pub mod run;

pub use calibration::Calibration;
pub use config::FileConfig;
pub use presets::Preset;
pub use run::{run_to_dir, Manifest, RunError, RunOutcome};
