use std::path::PathBuf;

use air_core::ffn::{InjectionMode, LayerGate};
use air_core::harness::PatchModel;
use air_core::ot::Epsilon;
use air_core::{Activation, CostSpace};
use clap::{Args, Parser, Subcommand};

/// Adaptive visual reinforcement: token reduction, OT patch scoring and FFN
/// re-injection, plus a toy-decoder experiment harness.
#[derive(Debug, Parser)]
#[command(name = "air", version, propagate_version = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score patches against retained hidden states and write scores.csv
    Score(ScoreArgs),
    /// Keep the Top_Q visual tokens farthest from their prototype
    Select(SelectArgs),
    /// Run one FFN layer with patch re-injection
    Inject(InjectArgs),
    /// Compare OT and cosine margins on random patch pairs
    MarginExp(MarginArgs),
    /// Sweep parameters over the toy decoder and write a metric grid
    Ablate(AblateArgs),
    /// Time the plain and reinforced FFN forward passes
    Bench(BenchArgs),
    /// Paired reinforced and plain decodes of synthetic scenes
    Simulate(SimulateArgs),
    /// CHAIR hallucination ratios for captions given as JSON
    Chair(ChairArgs),
}

/// Reinforcement settings. Flags override the JSON file.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// JSON config file; keys are the long flag names with underscores
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Visual tokens kept by the reduction
    #[arg(long)]
    pub top_q: Option<usize>,

    /// Keep patches with d_ot <= tau
    #[arg(long)]
    pub tau: Option<f64>,

    /// `auto` (0.1 x mean cost), an absolute value, or `rel:<factor>`
    #[arg(long, value_parser = parse_epsilon)]
    pub epsilon: Option<Epsilon>,

    #[arg(long)]
    pub sinkhorn_max_iter: Option<usize>,

    #[arg(long)]
    pub sinkhorn_tol: Option<f64>,

    /// 1-indexed inclusive layer range, e.g. `9-12`
    #[arg(long, value_name = "START-END")]
    pub layer_gate: Option<LayerGate>,

    /// all_rows, retained_rows or off
    #[arg(long)]
    pub injection_mode: Option<InjectionMode>,

    /// identity, relu, silu, gelu_tanh or softmax_rowwise
    #[arg(long)]
    pub injection_activation: Option<Activation>,

    /// Candidate patches per scene
    #[arg(long)]
    pub patch_count: Option<usize>,

    /// Inject only when the logit-lens entropy ratio exceeds this
    #[arg(long)]
    pub uncertainty_threshold: Option<f64>,

    /// hidden or projector
    #[arg(long, value_parser = parse_cost_space)]
    pub cost_space: Option<CostSpace>,

    /// Worker threads
    #[arg(long, env = "AIR_THREADS")]
    pub threads: Option<usize>,

    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Retained hidden states, Q x d
    #[arg(long, value_name = "NPY")]
    pub h_prime: PathBuf,

    /// Directory of patch NPY files; patch m is the m-th file by name
    #[arg(long, value_name = "DIR")]
    pub patches: PathBuf,

    #[arg(long, default_value = "scores.csv")]
    pub out: PathBuf,

    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    /// Visual-token hidden states, K x d
    #[arg(long, value_name = "NPY")]
    pub hidden: PathBuf,

    /// Receives retained.csv and h_prime.npy
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,

    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct InjectArgs {
    /// FFN input rows, L x d
    #[arg(long, value_name = "NPY")]
    pub hidden: PathBuf,

    /// First-layer weights, d x d_ff
    #[arg(long, value_name = "NPY")]
    pub w1: PathBuf,

    /// Second-layer weights, d x d_ff (applied transposed)
    #[arg(long, value_name = "NPY")]
    pub w2: PathBuf,

    #[arg(long, value_name = "DIR")]
    pub patches: PathBuf,

    /// Projector-space visual tokens for `--cost-space projector`
    #[arg(long, value_name = "NPY")]
    pub visual_tokens: Option<PathBuf>,

    /// Visual rows of the sequence as `start:end` (end exclusive); all rows by default
    #[arg(long, value_parser = parse_range)]
    pub visual_rows: Option<(usize, usize)>,

    /// 1-indexed layer of this FFN
    #[arg(long)]
    pub layer: usize,

    /// Decoder depth, used when no layer gate is configured
    #[arg(long, default_value_t = 32)]
    pub layers: usize,

    #[arg(long, default_value = "gelu_tanh")]
    pub ffn_activation: Activation,

    /// Receives output.npy and selection.json
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,

    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct MarginArgs {
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,

    /// Reference tokens per trial
    #[arg(long, default_value_t = 16)]
    pub q: usize,

    /// Tokens per patch
    #[arg(long, default_value_t = 16)]
    pub n: usize,

    #[arg(long, default_value_t = 32)]
    pub d: usize,

    /// Entropic regularization as a multiple of the mean cost
    #[arg(long, default_value_t = 0.01)]
    pub epsilon_factor: f64,

    /// noisy_view or independent
    #[arg(long, default_value = "noisy_view")]
    pub patch_model: PatchModel,

    /// Receives margins.csv and margin_report.json
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,

    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Clone, Args)]
pub struct HarnessArgs {
    #[arg(long, default_value_t = 12)]
    pub layers: usize,

    #[arg(long, default_value_t = 64)]
    pub d_model: usize,

    #[arg(long, default_value_t = 256)]
    pub d_ff: usize,

    #[arg(long, default_value_t = 1)]
    pub heads: usize,

    /// Prompt tokens after the visual tokens
    #[arg(long, default_value_t = 8)]
    pub seq_len: usize,

    #[arg(long, default_value_t = 576)]
    pub visual_tokens: usize,

    #[arg(long, default_value_t = 64)]
    pub vocab: usize,

    /// Generated tokens per decode
    #[arg(long, default_value_t = 8)]
    pub steps: usize,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// `name=v1,v2,...`; repeat for a cartesian grid. Names: top_q, tau,
    /// epsilon, patch_count, layer_gate, sinkhorn_max_iter, injection_mode,
    /// uncertainty_threshold
    #[arg(long, required = true, value_name = "SPEC")]
    pub sweep: Vec<String>,

    /// Paired seeds per grid point
    #[arg(long, default_value_t = 4)]
    pub seeds: u64,

    #[command(flatten)]
    pub harness: HarnessArgs,

    /// Receives ablate.csv and ablate_patches.csv
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,

    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Timed iterations per measurement
    #[arg(long, default_value_t = 100)]
    pub iterations: usize,

    #[arg(long, default_value_t = 10)]
    pub warmup: usize,

    #[command(flatten)]
    pub harness: HarnessArgs,

    #[arg(long, default_value = "bench.json")]
    pub out: PathBuf,

    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Paired seeds, starting at the config seed
    #[arg(long, default_value_t = 50)]
    pub seeds: u64,

    #[command(flatten)]
    pub harness: HarnessArgs,

    /// Also store every per-seed report in report.json
    #[arg(long)]
    pub full_reports: bool,

    /// Write the first seed's scene tensors as NPY files here
    #[arg(long, value_name = "DIR")]
    pub dump_scene: Option<PathBuf>,

    /// Receives simulate.csv and report.json
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,

    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct ChairArgs {
    /// JSON array of {"ground_truth": [..], "sentences": [[..], ..]}
    #[arg(long, value_name = "JSON")]
    pub captions: PathBuf,

    #[arg(long, default_value = "chair.json")]
    pub out: PathBuf,
}

pub fn parse_epsilon(s: &str) -> Result<Epsilon, String> {
    let eps = if s == "auto" {
        Epsilon::auto()
    } else if let Some(f) = s.strip_prefix("rel:") {
        Epsilon::Relative(f.parse().map_err(|e| format!("bad factor `{f}`: {e}"))?)
    } else {
        Epsilon::Absolute(s.parse().map_err(|e| format!("bad epsilon `{s}`: {e}"))?)
    };
    eps.validate().map_err(|e| e.to_string())?;
    Ok(eps)
}

fn parse_cost_space(s: &str) -> Result<CostSpace, String> {
    match s {
        "hidden" => Ok(CostSpace::Hidden),
        "projector" => Ok(CostSpace::Projector),
        _ => Err(format!(
            "unknown cost space `{s}` (expected hidden or projector)"
        )),
    }
}

fn parse_range(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| format!("expected start:end, got `{s}`"))?;
    let a: usize = a
        .trim()
        .parse()
        .map_err(|e| format!("bad start `{a}`: {e}"))?;
    let b: usize = b
        .trim()
        .parse()
        .map_err(|e| format!("bad end `{b}`: {e}"))?;
    if a >= b {
        return Err(format!("empty range {a}:{b}"));
    }
    Ok((a, b))
}
