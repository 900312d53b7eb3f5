use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use vbfl::calibration::Calibration;
use vbfl::compare::{compare, render};
use vbfl::config::{ConsensusName, FileConfig, SchemeName};
use vbfl::run::{run_to_dir, RunError};
use vbfl::Preset;
use vbfl_core::consensus::PowParams;
use vbfl_core::orchestrator::{ConsensusKind, RoundMetrics, SimConfig};
use vbfl_core::rewards::LedgerEvent;

#[derive(Parser)]
#[command(name = "vbfl", version, about = "Blockchained federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its metric files.
    Run(RunArgs),
    /// Summarise finished runs: accuracy across seeds, malicious winners.
    Compare {
        /// Run directories (at least two).
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
    },
    /// List the built-in presets.
    Presets,
}

#[derive(Args)]
struct RunArgs {
    /// Built-in experiment setup (see `vbfl presets`).
    #[arg(long)]
    preset: Option<String>,
    /// TOML experiment file; its keys override the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    rounds: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Validator threshold.
    #[arg(long, allow_hyphen_values = true)]
    vh: Option<f64>,
    /// Take the threshold from a calibration.json written by CALIBRATE_VH.
    #[arg(long, conflicts_with = "vh")]
    calibration: Option<PathBuf>,
    #[arg(long, value_enum)]
    consensus: Option<ConsensusName>,
    /// Leading zero hex digits required by proof of work.
    #[arg(long)]
    pow_difficulty: Option<u32>,
    /// Make the k highest-indexed devices malicious.
    #[arg(long)]
    malicious: Option<usize>,
    #[arg(long, value_enum)]
    validation_scheme: Option<SchemeName>,
    /// Output directory [default: runs/<label>-seed<seed>].
    #[arg(long, env = "VBFL_OUT_DIR")]
    out: Option<PathBuf>,
    /// Suppress the per-round summary.
    #[arg(long, short)]
    quiet: bool,
}

/// Failures that map to exit status 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct InvariantFailure(RunError);

fn resolve(args: &RunArgs) -> Result<(SimConfig, Option<Preset>)> {
    let file = match &args.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let preset_name = args.preset.as_deref().or(file.preset.as_deref());
    let preset = preset_name.map(str::parse::<Preset>).transpose()?;
    if preset.is_none() && args.config.is_none() {
        bail!("give --preset, --config, or both");
    }

    let vh = match (&args.vh, &args.calibration) {
        (Some(v), _) => Some(*v),
        (None, Some(path)) => Some(Calibration::load(path)?.suggested_vh),
        (None, None) => file.vh,
    };
    let base = match preset {
        Some(p) => p.config(vh)?,
        None => SimConfig::default(),
    };
    let mut c = file.apply(base)?;
    if let Some(v) = vh {
        c.vh = v;
    }
    if let Some(r) = args.rounds {
        c.rounds = r;
    }
    if let Some(s) = args.seed {
        c.master_seed = s;
    }
    if let Some(k) = args.malicious {
        if k > c.n_devices {
            bail!("invalid `malicious`: {k} exceeds the {} devices", c.n_devices);
        }
        c.malicious = SimConfig::highest_ids(c.n_devices, k);
        if !c.behaviors.worker_noise && !c.behaviors.validator_flip {
            c.behaviors.worker_noise = true;
        }
    }
    match args.consensus {
        Some(ConsensusName::Pos) => c.consensus = ConsensusKind::Pos,
        Some(ConsensusName::Pow) if !matches!(c.consensus, ConsensusKind::Pow(_)) => {
            c.consensus = ConsensusKind::Pow(PowParams::new(1));
        }
        _ => {}
    }
    if let Some(d) = args.pow_difficulty {
        match &mut c.consensus {
            ConsensusKind::Pow(p) => p.difficulty = d,
            ConsensusKind::Pos => bail!("invalid `pow_difficulty`: needs --consensus pow"),
        }
    }
    if let Some(s) = args.validation_scheme {
        c.validation_scheme = s.into();
    }
    c.validate()?;
    Ok((c, preset))
}

fn summary_line(m: &RoundMetrics, total: u64) -> String {
    let mut s = format!("round {:>4}/{total}  {:<4}", m.round, m.consensus);
    match (m.skipped, m.winner) {
        (Some(reason), _) => s.push_str(&format!("  skipped ({})", reason.as_str())),
        (None, Some(w)) => s.push_str(&format!(
            "  winner {w}{}",
            if m.winner_malicious { " (malicious)" } else { "" }
        )),
        (None, None) => {}
    }
    s.push_str(&format!("  acc {:.4}", m.global_accuracy));
    let count = |e: LedgerEvent| m.events.iter().filter(|(_, x)| *x == e).count();
    let (flagged, kicked) = (count(LedgerEvent::Flagged), count(LedgerEvent::Blacklisted));
    if flagged > 0 {
        s.push_str(&format!("  flagged {flagged}"));
    }
    if kicked > 0 {
        s.push_str(&format!("  blacklisted {kicked}"));
    }
    if m.forked {
        s.push_str("  forked");
    }
    s
}

fn run(args: RunArgs) -> Result<()> {
    let (config, preset) = resolve(&args)?;
    let label = match preset {
        Some(p) => p.name().to_string(),
        None => args
            .config
            .as_deref()
            .and_then(|p| p.file_stem())
            .map_or_else(|| "run".to_string(), |s| s.to_string_lossy().into_owned()),
    };
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs").join(format!("{label}-seed{}", config.master_seed)));
    let total = config.rounds;
    let quiet = args.quiet;
    let outcome = run_to_dir(config, preset.map(Preset::name), &out, |m| {
        if !quiet {
            println!("{}", summary_line(m, total));
        }
    })
    .map_err(|e| {
        if e.is_invariant_violation() {
            anyhow::Error::new(InvariantFailure(e))
        } else {
            anyhow::Error::new(e)
        }
    })?;
    if let Some(c) = &outcome.calibration {
        println!(
            "vad: legitimate p90 {:.4}, malicious p10 {:.4} -> suggested vh {:.4}",
            c.legit_p90, c.malicious_p10, c.suggested_vh
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Compare { dirs } => compare(&dirs)
            .map(|groups| print!("{}", render(&groups)))
            .context("compare failed"),
        Command::Presets => {
            for p in Preset::ALL {
                let note = if p.needs_calibrated_vh() {
                    "  (needs --vh or --calibration)"
                } else {
                    ""
                };
                println!("{p}{note}");
            }
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<InvariantFailure>() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
