//! Experiment runner for the linear-quadratic game laboratory.
//!
//! Usage: `mfgldp <scenario> --config <path> [--seed U64] [--out DIR]
//! [--threads N]`. The scenario verb overrides the scenario named in the
//! config file; `--seed` and `--out` override the corresponding fields.
//! Without `--config` the built-in inter-bank default is used.
//!
//! Every run writes `manifest.json` into the output directory before any
//! computation starts, then the scenario's CSVs, then `completed.json` on
//! success. Failures are recorded in the manifest and mapped to exit codes:
//! 0 success, 2 validation failure, 3 numerical failure, 1 anything
//! operational (for example an unwritable output directory).
//!
//! All outputs are deterministic functions of (config, seed): reruns with
//! the same inputs produce byte-identical files at any `--threads` value.

mod config;
mod scenarios;

use std::path::{Path, PathBuf};

use clap::Parser;
use mfgldp_core::model::check_monotone_drift;
use mfgldp_core::Error;
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::config::{
    default_scenario, spec_with_horizon, ExperimentConfig, Scenario, MONOTONE_HORIZON,
};
use crate::scenarios::run_scenario;

#[derive(Parser)]
#[command(name = "mfgldp", version, about = "Linear-quadratic game experiments")]
struct Cli {
    /// Pipeline to run; overrides the scenario named in the config file.
    #[arg(value_enum)]
    scenario: Scenario,
    /// Experiment config JSON; defaults to the built-in inter-bank config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory override.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker thread count; defaults to all cores. Outputs do not depend
    /// on this value.
    #[arg(long)]
    threads: Option<usize>,
}

/// Run ledger written to `manifest.json`: the effective config, the root
/// seed, a version string, the run status, and scenario-reported facts.
#[derive(Serialize)]
struct Manifest<'a> {
    version: String,
    scenario: &'static str,
    seed: u64,
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    failure: Option<String>,
    config: &'a ExperimentConfig,
    #[serde(flatten)]
    extras: Map<String, Value>,
}

impl<'a> Manifest<'a> {
    fn new(config: &'a ExperimentConfig) -> Manifest<'a> {
        Manifest {
            version: format!("v{}", env!("CARGO_PKG_VERSION")),
            scenario: config.scenario.as_str(),
            seed: config.seed,
            status: "running",
            failure: None,
            config,
            extras: Map::new(),
        }
    }

    fn write(&self, path: &Path) -> std::io::Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serialization");
        text.push('\n');
        std::fs::write(path, text)
    }
}

fn main() {
    std::process::exit(run(Cli::parse()));
}

fn run(cli: Cli) -> i32 {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            eprintln!("mfgldp: --threads must be positive");
            return 2;
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("mfgldp: cannot configure the worker pool: {e}");
            return 1;
        }
    }

    let mut config = match load_config(cli.config.as_deref()) {
        Ok(c) => c,
        Err(message) => {
            eprintln!("mfgldp: {message}");
            return 2;
        }
    };
    config.scenario = cli.scenario;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = cli.out {
        config.out_dir = out;
    }
    if config.monotone_regime {
        config.spec = spec_with_horizon(config.spec, MONOTONE_HORIZON);
    }
    execute(&config)
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig, String> {
    let Some(path) = path else {
        return Ok(default_scenario());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("cannot parse config {}: {e}", path.display()))
}

fn execute(config: &ExperimentConfig) -> i32 {
    if let Err(e) = std::fs::create_dir_all(&config.out_dir) {
        eprintln!("mfgldp: cannot create output directory {}: {e}", config.out_dir.display());
        return 1;
    }
    let manifest_path = config.out_dir.join("manifest.json");
    let mut manifest = Manifest::new(config);
    if let Err(e) = manifest.write(&manifest_path) {
        eprintln!("mfgldp: cannot write {}: {e}", manifest_path.display());
        return 1;
    }

    if config.monotone_regime {
        let check = check_monotone_drift(&config.spec);
        let passed = check.passed;
        let detail = check.detail.clone();
        manifest
            .extras
            .insert("monotone_check".into(), serde_json::to_value(&check).unwrap_or(Value::Null));
        if !passed {
            return fail(&mut manifest, &manifest_path, 2, format!("drift is not dissipative at the long horizon: {detail}"));
        }
    }

    match run_scenario(config) {
        Ok(outcome) => {
            for (key, value) in outcome.extras {
                manifest.extras.insert(key, value);
            }
            if let Some((code, message)) = outcome.failure {
                return fail(&mut manifest, &manifest_path, code, message);
            }
            manifest.status = "completed";
            if let Err(e) = manifest.write(&manifest_path) {
                eprintln!("mfgldp: cannot write {}: {e}", manifest_path.display());
                return 1;
            }
            let mut outputs = outcome.files;
            outputs.sort();
            let marker = config.out_dir.join("completed.json");
            let mut text = serde_json::to_string_pretty(&json!({
                "status": "completed",
                "outputs": outputs,
            }))
            .expect("marker serialization");
            text.push('\n');
            if let Err(e) = std::fs::write(&marker, text) {
                eprintln!("mfgldp: cannot write {}: {e}", marker.display());
                return 1;
            }
            0
        }
        Err(err) => {
            let code = exit_code_for(&err);
            fail(&mut manifest, &manifest_path, code, err.to_string())
        }
    }
}

fn fail(manifest: &mut Manifest<'_>, path: &Path, code: i32, message: String) -> i32 {
    eprintln!("mfgldp: {message}");
    manifest.status = "failed";
    manifest.failure = Some(message);
    if let Err(e) = manifest.write(path) {
        eprintln!("mfgldp: cannot write {}: {e}", path.display());
        return 1;
    }
    code
}

/// Exit-code contract: 2 for problems a reviewer could spot in the inputs,
/// 3 for breakdowns of the numerics themselves, 1 for the environment.
fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::InvalidSpec { .. }
        | Error::NonConvexHamiltonian { .. }
        | Error::FieldDomainError { .. }
        | Error::DimensionMismatch { .. }
        | Error::EmptyMeasure
        | Error::SizeLimit { .. }
        | Error::GridMismatch { .. }
        | Error::SingularR { .. } => 2,
        Error::RiccatiBlowup { .. }
        | Error::AnsatzMismatch { .. }
        | Error::SingularFeedback { .. }
        | Error::SingularStep { .. }
        | Error::Explosion { .. }
        | Error::NonConvergence { .. }
        | Error::DegenerateEstimate { .. }
        | Error::AllZeroEvents
        | Error::NonInvertible { .. } => 3,
        Error::Io { .. } => 1,
    }
}
