//! The `air` command-line tool.
//!
//! Every subcommand lives in [`commands`] as a function from its parsed
//! arguments to a result; `main` only maps errors to exit codes. Tests call
//! the same functions in-process.

pub mod args;
pub mod commands;
pub mod error;
pub mod output;

use std::fs;
use std::path::{Path, PathBuf};

use air_core::patch::PatchEmbedding;
use air_core::{Matrix, ReinforcementConfig};

pub use args::{Cli, Command};
pub use error::{CliError, CliResult};

/// Runs one parsed command inside a worker pool sized by the config.
pub fn run(cli: Cli) -> CliResult<()> {
    use commands::*;
    match cli.command {
        Command::Score(a) => score::run(&a),
        Command::Select(a) => select::run(&a),
        Command::Inject(a) => inject::run(&a),
        Command::MarginExp(a) => margin::run(&a),
        Command::Ablate(a) => ablate::run(&a),
        Command::Bench(a) => bench::run(&a),
        Command::Simulate(a) => simulate::run(&a),
        Command::Chair(a) => chair::run(&a),
    }
}

/// Loads the JSON config, if any, and applies flag overrides.
pub fn resolve_config(a: &args::ConfigArgs) -> CliResult<ReinforcementConfig> {
    let mut cfg = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
            let value: serde_json::Value = serde_json::from_str(&text)
                .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            let map = value.as_object().ok_or_else(|| {
                CliError::Input(format!("{}: config must be a JSON object", path.display()))
            })?;
            ReinforcementConfig::from_map(map)?
        }
        None => ReinforcementConfig::default(),
    };
    macro_rules! set {
        ($($field:ident),*) => {$(
            if let Some(v) = a.$field.clone() {
                cfg.$field = v;
            }
        )*};
    }
    set!(
        top_q,
        tau,
        epsilon,
        sinkhorn_max_iter,
        sinkhorn_tol,
        injection_mode,
        patch_count,
        cost_space,
        seed
    );
    if a.layer_gate.is_some() {
        cfg.layer_gate = a.layer_gate;
    }
    if a.injection_activation.is_some() {
        cfg.injection_activation = a.injection_activation;
    }
    if a.uncertainty_threshold.is_some() {
        cfg.uncertainty_threshold = a.uncertainty_threshold;
    }
    if a.threads.is_some() {
        cfg.threads = a.threads;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs `f` on a dedicated pool of `threads` workers (rayon's default when
/// unset). Results never depend on the pool size.
pub fn with_pool<T: Send>(
    threads: Option<usize>,
    f: impl FnOnce() -> CliResult<T> + Send,
) -> CliResult<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    builder.build().map_err(CliError::internal)?.install(f)
}

pub fn read_matrix(path: &Path) -> CliResult<Matrix> {
    Ok(air_core::npy::read_npy(path)?)
}

/// Reads every `*.npy` in `dir`, sorted by file name; patch `m` is the
/// `m`-th file.
pub fn read_patch_dir(dir: &Path) -> CliResult<Vec<PatchEmbedding>> {
    let entries = fs::read_dir(dir).map_err(|e| {
        CliError::Input(format!(
            "cannot read patch directory {}: {e}",
            dir.display()
        ))
    })?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "npy"))
        .collect();
    files.sort();
    if files.is_empty() {
        log::warn!("no .npy patches in {}", dir.display());
    }
    files
        .iter()
        .enumerate()
        .map(|(index, p)| {
            Ok(PatchEmbedding {
                index,
                tokens: read_matrix(p)?,
            })
        })
        .collect()
}

/// Patch widths must match the reference width.
pub fn check_patch_widths(patches: &[PatchEmbedding], d: usize) -> CliResult<()> {
    match patches.iter().find(|p| p.tokens.cols() != d) {
        Some(p) => Err(CliError::Dimension(format!(
            "patch {} has width {}, expected {d}",
            p.index,
            p.tokens.cols()
        ))),
        None => Ok(()),
    }
}
