//! Named experiment setups.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;
use vbfl_core::consensus::PowParams;
use vbfl_core::orchestrator::{ConsensusKind, Protocol, SimConfig};

/// Malicious devices in every `_3_20` preset.
pub const PRESET_MALICIOUS: usize = 3;
/// Rounds in every experiment preset.
pub const PRESET_ROUNDS: u64 = 100;
/// Rounds logged by the calibration preset.
pub const CALIBRATION_ROUNDS: u64 = 30;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PresetError {
    #[error("unknown preset `{0}` (known: {list})", list = Preset::ALL.iter().map(|p| p.name()).collect::<Vec<_>>().join(", "))]
    Unknown(String),
    #[error("preset {0} needs a validator threshold: pass --vh or --calibration <calibration.json> (run CALIBRATE_VH first)")]
    NeedsThreshold(Preset),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Preset {
    /// Vanilla FL, all devices honest.
    Vfl0_20,
    /// Vanilla FL with three noisy workers.
    Vfl3_20,
    /// VBFL with PoS and a threshold that accepts every update.
    VbflPos0_20Vh1,
    VbflPos3_20Vhcal,
    /// As above, and malicious validators flip their votes.
    VbflPos3_20VhcalMv,
    VbflPow3_20VhcalD1,
    VbflPow3_20VhcalD2,
    /// Threshold calibration: accept everything and log every `vad`.
    CalibrateVh,
}

impl Preset {
    pub const ALL: [Preset; 8] = [
        Preset::Vfl0_20,
        Preset::Vfl3_20,
        Preset::VbflPos0_20Vh1,
        Preset::VbflPos3_20Vhcal,
        Preset::VbflPos3_20VhcalMv,
        Preset::VbflPow3_20VhcalD1,
        Preset::VbflPow3_20VhcalD2,
        Preset::CalibrateVh,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Vfl0_20 => "VFL_0_20",
            Preset::Vfl3_20 => "VFL_3_20",
            Preset::VbflPos0_20Vh1 => "VBFL_POS_0_20_VH1",
            Preset::VbflPos3_20Vhcal => "VBFL_POS_3_20_VHCAL",
            Preset::VbflPos3_20VhcalMv => "VBFL_POS_3_20_VHCAL_MV",
            Preset::VbflPow3_20VhcalD1 => "VBFL_POW_3_20_VHCAL_D1",
            Preset::VbflPow3_20VhcalD2 => "VBFL_POW_3_20_VHCAL_D2",
            Preset::CalibrateVh => "CALIBRATE_VH",
        }
    }

    /// Whether the preset refuses to run without an explicit or calibrated
    /// threshold.
    pub fn needs_calibrated_vh(self) -> bool {
        matches!(
            self,
            Preset::VbflPos3_20Vhcal
                | Preset::VbflPos3_20VhcalMv
                | Preset::VbflPow3_20VhcalD1
                | Preset::VbflPow3_20VhcalD2
        )
    }

    /// The preset's configuration. `vh` overrides the threshold and is
    /// required for the calibrated presets.
    pub fn config(self, vh: Option<f64>) -> Result<SimConfig, PresetError> {
        let mut c = SimConfig {
            rounds: PRESET_ROUNDS,
            ..SimConfig::default()
        };
        let n = c.n_devices;
        let noisy = |c: &mut SimConfig| {
            c.malicious = SimConfig::highest_ids(n, PRESET_MALICIOUS);
            c.behaviors.worker_noise = true;
        };
        match self {
            Preset::Vfl0_20 => c.protocol = Protocol::VanillaFl,
            Preset::Vfl3_20 => {
                c.protocol = Protocol::VanillaFl;
                noisy(&mut c);
            }
            Preset::VbflPos0_20Vh1 => c.vh = 1.0,
            Preset::VbflPos3_20Vhcal => noisy(&mut c),
            Preset::VbflPos3_20VhcalMv => {
                noisy(&mut c);
                c.behaviors.validator_flip = true;
            }
            Preset::VbflPow3_20VhcalD1 => {
                noisy(&mut c);
                c.consensus = ConsensusKind::Pow(PowParams::new(1));
            }
            Preset::VbflPow3_20VhcalD2 => {
                noisy(&mut c);
                c.consensus = ConsensusKind::Pow(PowParams::new(2));
            }
            Preset::CalibrateVh => {
                noisy(&mut c);
                c.vh = 1.0;
                c.rounds = CALIBRATION_ROUNDS;
            }
        }
        match vh {
            Some(v) => c.vh = v,
            None if self.needs_calibrated_vh() => return Err(PresetError::NeedsThreshold(self)),
            None => {}
        }
        Ok(c)
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = PresetError;

    /// Case-insensitive; `/` and `-` are accepted in place of `_`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .chars()
            .map(|c| {
                if c == '/' || c == '-' {
                    '_'
                } else {
                    c.to_ascii_uppercase()
                }
            })
            .collect();
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == norm)
            .ok_or_else(|| PresetError::Unknown(s.to_string()))
    }
}
