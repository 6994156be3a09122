//! Acceptance suite: one line per criterion, non-zero exit if any fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use air_cli::args::HarnessArgs;
use air_cli::commands::{bench, simulate};
use air_cli::Cli;
use air_core::ffn::{
    air_ffn_forward, ffn_forward, FfnWeights, InjectionConfig, InjectionMode, LayerGate,
};
use air_core::harness::rng::{gaussian_matrix, stream_rng};
use air_core::harness::{chair_metrics, Caption};
use air_core::matrix::cosine_cost;
use air_core::ot::{cosine_baseline, ot_distance, sinkhorn, uniform, SinkhornParams};
use air_core::patch::{select_patches, PatchScore};
use air_core::reduction::select_top_q;
use air_core::{Activation, Matrix, ReinforcementConfig};
use clap::Parser;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn random_cost(rng: &mut ChaCha8Rng, q: usize, n: usize) -> Matrix {
    let data = (0..q * n).map(|_| rng.gen_range(0.0f32..2.0)).collect();
    Matrix::new(q, n, data).unwrap()
}

fn l1_marginal_error(plan: &[f64], q: usize, n: usize) -> f64 {
    let rows: f64 = (0..q)
        .map(|i| (plan[i * n..(i + 1) * n].iter().sum::<f64>() - 1.0 / q as f64).abs())
        .sum();
    let cols: f64 = (0..n)
        .map(|j| ((0..q).map(|i| plan[i * n + j]).sum::<f64>() - 1.0 / n as f64).abs())
        .sum();
    rows.max(cols)
}

fn sinkhorn_feasibility() -> Outcome {
    let mut rng = stream_rng(101, 0);
    let start = Instant::now();
    let (mut converged, mut worst) = (0, 0.0f64);
    for _ in 0..100 {
        let (q, n) = (rng.gen_range(1..=32), rng.gen_range(1..=32));
        let cost = random_cost(&mut rng, q, n);
        let eps = 0.1 * cosine_baseline(&cost).unwrap();
        let plan = sinkhorn(
            &cost,
            &uniform(q),
            &uniform(n),
            eps,
            SinkhornParams::default(),
        )
        .unwrap();
        if plan.converged {
            converged += 1;
            worst = worst.max(l1_marginal_error(plan.values(), q, n));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        converged >= 95 && worst <= 1e-6 && secs < 2.0,
        format!("{converged}/100 converged, worst L1 marginal error {worst:.2e}, {secs:.3}s"),
    )
}

/// Minimum over all permutations, by Heap's algorithm.
fn assignment_oracle(cost: &Matrix) -> f64 {
    let n = cost.rows();
    let mut p: Vec<usize> = (0..n).collect();
    let mut c = vec![0usize; n];
    let value = |p: &[usize]| {
        p.iter()
            .enumerate()
            .map(|(i, &j)| f64::from(cost.get(i, j)))
            .sum::<f64>()
    };
    let mut best = value(&p);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                p.swap(0, i);
            } else {
                p.swap(c[i], i);
            }
            best = best.min(value(&p));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best / n as f64
}

fn exact_ot_agreement() -> Outcome {
    let mut rng = stream_rng(102, 0);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let cost = random_cost(&mut rng, 4, 4);
        let eps = 1e-3 * cosine_baseline(&cost).unwrap();
        let plan = sinkhorn(
            &cost,
            &uniform(4),
            &uniform(4),
            eps,
            SinkhornParams::default(),
        )
        .unwrap();
        let d = ot_distance(&plan, &cost).unwrap();
        worst = worst.max((d - assignment_oracle(&cost)).abs());
    }
    outcome(
        worst <= 1e-2,
        format!("max |d_ot - exact| = {worst:.2e} over 50 cases"),
    )
}

fn uniform_plan_dominance() -> Outcome {
    let mut rng = stream_rng(103, 0);
    let factors = [1e-3, 1e-2, 0.1, 1.0, 10.0, 100.0];
    let mut violations = 0;
    for t in 0..1000 {
        let (q, n) = (rng.gen_range(1..=16), rng.gen_range(1..=16));
        let cost = random_cost(&mut rng, q, n);
        let mean = cosine_baseline(&cost).unwrap();
        let eps = factors[t % factors.len()] * mean;
        let plan = sinkhorn(
            &cost,
            &uniform(q),
            &uniform(n),
            eps,
            SinkhornParams::default(),
        )
        .unwrap();
        if ot_distance(&plan, &cost).unwrap() > mean + 1e-9 {
            violations += 1;
        }
    }
    // The gap shrinks like Var(C)/eps. Cosine costs between embeddings have
    // variance near 1/d; entries drawn uniformly from [0,2] have 1/3 and sit
    // above the bound, so that gap is only reported.
    let gap = |cost: &Matrix| {
        let mean = cosine_baseline(cost).unwrap();
        let (q, n) = (cost.rows(), cost.cols());
        let plan = sinkhorn(
            cost,
            &uniform(q),
            &uniform(n),
            1e3 * mean,
            SinkhornParams::default(),
        )
        .unwrap();
        (ot_distance(&plan, cost).unwrap() - mean).abs()
    };
    let (mut limit, mut spread) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let (q, n, d) = (
            rng.gen_range(1..=16),
            rng.gen_range(1..=16),
            rng.gen_range(16..=64),
        );
        let a = gaussian_matrix(&mut rng, q, d, 1.0);
        let b = gaussian_matrix(&mut rng, n, d, 1.0);
        limit = limit.max(gap(&cosine_cost(&a, &b).unwrap()));
        spread = spread.max(gap(&random_cost(&mut rng, q, n)));
    }
    outcome(
        violations == 0 && limit <= 1e-4,
        format!(
            "{violations} violations in 1000 instances; max-entropy gap {limit:.2e} on embedding costs \
             ({spread:.2e} on uniform [0,2] entries)"
        ),
    )
}

fn run_cli(args: &[&str]) -> Result<(), air_cli::CliError> {
    let cli = Cli::try_parse_from(std::iter::once("air").chain(args.iter().copied()))
        .map_err(|e| air_cli::CliError::Usage(e.to_string()))?;
    air_cli::run(cli)
}

fn margin_sensitivity(dir: &Path) -> Outcome {
    let out = dir.join("margin");
    let start = Instant::now();
    let res = run_cli(&[
        "margin-exp",
        "--trials",
        "1000",
        "--q",
        "16",
        "--n",
        "16",
        "--d",
        "32",
        "--epsilon-factor",
        "0.01",
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    let secs = start.elapsed().as_secs_f64();
    if let Err(e) = res {
        return outcome(false, format!("margin-exp failed: {e}"));
    }
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("margin_report.json")).unwrap()).unwrap();
    let frac = report["amplified_fraction"].as_f64().unwrap();
    let rows = fs::read_to_string(out.join("margins.csv"))
        .unwrap()
        .lines()
        .count()
        - 1;
    outcome(
        frac >= 0.90 && rows == 1000 && secs < 30.0,
        format!(
            "amplified fraction {frac}, {rows} distribution rows, {} unconverged, {secs:.1}s",
            report["unconverged"]
        ),
    )
}

fn integer_tokens(rng: &mut ChaCha8Rng) -> Matrix {
    let k = rng.gen_range(2..48);
    let d = rng.gen_range(1..6);
    let distinct = rng.gen_range(1..=k);
    let pool: Vec<Vec<f32>> = (0..distinct)
        .map(|_| (0..d).map(|_| rng.gen_range(-4..=4) as f32).collect())
        .collect();
    let rows: Vec<Vec<f32>> = (0..k)
        .map(|_| pool[rng.gen_range(0..distinct)].clone())
        .collect();
    Matrix::from_rows(&rows).unwrap()
}

fn sort_oracle(tokens: &Matrix, q: usize) -> Vec<usize> {
    let k = tokens.rows() as i64;
    let sums: Vec<i64> = (0..tokens.cols())
        .map(|j| (0..tokens.rows()).map(|i| tokens.get(i, j) as i64).sum())
        .collect();
    let mut keyed: Vec<(i64, usize)> = (0..tokens.rows())
        .map(|i| {
            let d2 = (0..tokens.cols())
                .map(|j| (k * tokens.get(i, j) as i64 - sums[j]).pow(2))
                .sum();
            (d2, i)
        })
        .collect();
    keyed.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut out: Vec<usize> = keyed.into_iter().take(q).map(|x| x.1).collect();
    out.sort_unstable();
    out
}

fn top_q_oracle() -> Outcome {
    let mut rng = stream_rng(105, 0);
    let (mut mismatches, mut shifted_mismatches, mut with_ties) = (0, 0, 0);
    for _ in 0..500 {
        let tokens = integer_tokens(&mut rng);
        let q = rng.gen_range(1..=tokens.rows());
        let got = select_top_q(&tokens, q).unwrap();
        mismatches += usize::from(got.selected_indices != sort_oracle(&tokens, q));
        let mut d = got.distances.clone();
        d.sort_by(f64::total_cmp);
        with_ties += usize::from(d.windows(2).any(|w| w[0] == w[1]));
        let shift: Vec<f32> = (0..tokens.cols())
            .map(|_| rng.gen_range(-100..=100) as f32)
            .collect();
        let rows: Vec<Vec<f32>> = tokens
            .row_iter()
            .map(|r| r.iter().zip(&shift).map(|(a, b)| a + b).collect())
            .collect();
        let shifted = select_top_q(&Matrix::from_rows(&rows).unwrap(), q).unwrap();
        shifted_mismatches += usize::from(shifted.selected_indices != got.selected_indices);
    }
    outcome(
        mismatches == 0 && shifted_mismatches == 0 && with_ties > 0,
        format!("{mismatches} oracle and {shifted_mismatches} translation mismatches in 500 cases ({with_ties} with ties)"),
    )
}

fn fallback_exactness() -> Outcome {
    let mut failures = 0;
    for case in 0..100u64 {
        let mut rng = stream_rng(106, case);
        let (l, d, dff) = (
            rng.gen_range(2..12),
            rng.gen_range(2..10),
            rng.gen_range(2..16),
        );
        let h = gaussian_matrix(&mut rng, l, d, 1.0);
        let w = FfnWeights::new(
            gaussian_matrix(&mut rng, d, dff, 0.5),
            gaussian_matrix(&mut rng, d, dff, 0.5),
            Activation::ALL[case as usize % 4],
        )
        .unwrap();
        let zr = rng.gen_range(1..6);
        let z = gaussian_matrix(&mut rng, zr, d, 1.0);
        let rows: Vec<usize> = (0..l).collect();
        let reduced = select_top_q(&h, rng.gen_range(1..=l)).unwrap();
        let base = ffn_forward(&h, &w).unwrap();
        let gate = LayerGate::new(3, 5).unwrap();
        let mode = if case % 2 == 0 {
            InjectionMode::AllRows
        } else {
            InjectionMode::RetainedRows
        };
        let cfg = |mode| InjectionConfig {
            mode,
            activation: Activation::GeluTanh,
            gate,
        };
        let empty = Matrix::zeros(0, d);
        let outs = [
            air_ffn_forward(&h, &rows, &w, &reduced, &empty, &cfg(mode), 4).unwrap(),
            air_ffn_forward(&h, &rows, &w, &reduced, &z, &cfg(InjectionMode::Off), 4).unwrap(),
            air_ffn_forward(&h, &rows, &w, &reduced, &z, &cfg(mode), 2).unwrap(),
        ];
        let bits = |m: &Matrix| m.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        failures += outs.iter().filter(|o| bits(o) != bits(&base)).count();
    }
    outcome(
        failures == 0,
        format!("{failures} of 300 fallback outputs differ from the plain FFN"),
    )
}

fn selection_monotonicity() -> Outcome {
    let mut rng = stream_rng(107, 0);
    let mut violations = 0;
    for _ in 0..100 {
        let scores: Vec<PatchScore> = (0..rng.gen_range(0..30))
            .map(|index| {
                let d_ot = rng.gen_range(0.0..2.0);
                PatchScore {
                    index,
                    d_ot,
                    d_cos: d_ot,
                    converged: true,
                }
            })
            .collect();
        let mut taus: Vec<f64> = (0..10).map(|_| rng.gen_range(-0.1..2.1)).collect();
        taus.sort_by(f64::total_cmp);
        for w in taus.windows(2) {
            let (a, b) = (select_patches(&scores, w[0]), select_patches(&scores, w[1]));
            violations += usize::from(!a.iter().all(|m| b.contains(m)));
        }
    }
    outcome(
        violations == 0,
        format!("{violations} subset violations over 100 score sets"),
    )
}

fn harness_defaults(steps: usize) -> HarnessArgs {
    HarnessArgs {
        layers: 12,
        d_model: 64,
        d_ff: 256,
        heads: 1,
        seq_len: 8,
        visual_tokens: 576,
        vocab: 64,
        steps,
    }
}

fn grounding_uplift() -> Outcome {
    let h = harness_defaults(8);
    let cfg = ReinforcementConfig {
        layer_gate: Some(LayerGate::last_third(h.layers)),
        ..Default::default()
    };
    let start = Instant::now();
    let runs = simulate::paired_runs(&cfg, &h, 50).unwrap();
    let s = simulate::summarize(&cfg, &h, &runs);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        s.mean_uplift >= 0.02 && s.positive_fraction >= 0.70 && secs < 120.0,
        format!(
            "gate {}: mean uplift {:.4}, positive in {:.0}% of 50 seeds, {secs:.1}s",
            s.layer_gate,
            s.mean_uplift,
            100.0 * s.positive_fraction
        ),
    )
}

fn overhead() -> Outcome {
    let args = air_cli::args::BenchArgs {
        iterations: 100,
        warmup: 10,
        harness: harness_defaults(8),
        out: "bench.json".into(),
        config: Default::default(),
    };
    let r = bench::bench(&args, &ReinforcementConfig::default()).unwrap();
    outcome(
        r.overhead_ratio <= 1.5,
        format!(
            "AIR/base forward {:.3} ({} fused rows); off {:.3}; sinkhorn doubling {:.3}",
            r.overhead_ratio, r.fused_rows, r.off_ratio, r.sinkhorn_doubling_ratio
        ),
    )
}

fn chair_fixtures() -> Outcome {
    let set = |v: &[&str]| v.iter().map(|s| s.to_string()).collect();
    let one = Caption {
        ground_truth: set(&["dog", "frisbee"]),
        sentences: vec![set(&["dog", "frisbee", "car"])],
    };
    let two = Caption {
        ground_truth: set(&["dog", "frisbee"]),
        sentences: vec![set(&["dog"]), set(&["car"])],
    };
    let ci = chair_metrics(&[one]).unwrap().chair_i;
    let cs = chair_metrics(&[two]).unwrap().chair_s;
    outcome(
        ci == 1.0 / 3.0 && cs == 0.5,
        format!("CHAIR_I {ci}, CHAIR_S {cs}"),
    )
}

/// Drops wall-clock fields (CSV columns and JSON keys ending in `_ms`, JSON
/// keys ending in `ratio`, `timings` maps) and the echoed `threads` setting.
fn scrub(path: &Path) -> String {
    let text = fs::read_to_string(path).unwrap();
    if path.extension().is_some_and(|e| e == "json") {
        fn walk(v: &mut serde_json::Value) {
            match v {
                serde_json::Value::Object(m) => {
                    m.retain(|k, _| {
                        !(k.ends_with("_ms")
                            || k.ends_with("ratio")
                            || k == "timings"
                            || k == "threads")
                    });
                    m.values_mut().for_each(walk);
                }
                serde_json::Value::Array(a) => a.iter_mut().for_each(walk),
                _ => {}
            }
        }
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        walk(&mut v);
        return v.to_string();
    }
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
    let keep: Vec<bool> = header.iter().map(|h| !h.ends_with("_ms")).collect();
    std::iter::once(text.lines().next().unwrap_or(""))
        .chain(lines)
        .map(|l| {
            l.split(',')
                .zip(&keep)
                .filter(|(_, k)| **k)
                .map(|(f, _)| f)
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn snapshot(dir: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let key = p.strip_prefix(dir).unwrap().display().to_string();
                let value = if p.extension().is_some_and(|x| x == "npy") {
                    format!("{:?}", fs::read(&p).unwrap())
                } else {
                    scrub(&p)
                };
                out.insert(key, value);
            }
        }
    }
    out
}

fn write_captions(path: &Path) {
    fs::write(
        path,
        r#"[{"ground_truth": ["dog", "frisbee"], "sentences": [["dog"], ["frisbee", "car"]]}]"#,
    )
    .unwrap();
}

fn all_commands(
    root: &Path,
    threads: usize,
) -> Result<BTreeMap<String, String>, air_cli::CliError> {
    let out = root.join(format!("t{threads}"));
    let o = |name: &str| out.join(name).display().to_string();
    let t = threads.to_string();
    let scene = root.join("scene");
    let s = |name: &str| scene.join(name).display().to_string();
    run_cli(&[
        "select",
        "--hidden",
        &s("visual_tokens.npy"),
        "--out-dir",
        &o("select"),
        "--threads",
        &t,
    ])?;
    run_cli(&[
        "score",
        "--h-prime",
        &o("select/h_prime.npy"),
        "--patches",
        &s("patches"),
        "--out",
        &o("scores.csv"),
        "--threads",
        &t,
    ])?;
    run_cli(&[
        "inject",
        "--hidden",
        &s("visual_tokens.npy"),
        "--w1",
        &root.join("w1.npy").display().to_string(),
        "--w2",
        &root.join("w2.npy").display().to_string(),
        "--patches",
        &s("patches"),
        "--layer",
        "30",
        "--out-dir",
        &o("inject"),
        "--threads",
        &t,
    ])?;
    run_cli(&[
        "margin-exp",
        "--trials",
        "64",
        "--out-dir",
        &o("margin"),
        "--threads",
        &t,
    ])?;
    run_cli(&[
        "ablate",
        "--sweep",
        "tau=0.02,0.06",
        "--seeds",
        "2",
        "--steps",
        "3",
        "--layers",
        "4",
        "--out-dir",
        &o("ablate"),
        "--threads",
        &t,
    ])?;
    run_cli(&[
        "simulate",
        "--seeds",
        "3",
        "--steps",
        "3",
        "--layers",
        "4",
        "--full-reports",
        "--out-dir",
        &o("simulate"),
        "--threads",
        &t,
    ])?;
    run_cli(&[
        "bench",
        "--iterations",
        "2",
        "--warmup",
        "0",
        "--layers",
        "4",
        "--out",
        &o("bench.json"),
        "--threads",
        &t,
    ])?;
    let captions = root.join("captions.json");
    write_captions(&captions);
    run_cli(&[
        "chair",
        "--captions",
        &captions.display().to_string(),
        "--out",
        &o("chair.json"),
    ])?;
    Ok(snapshot(&out))
}

fn determinism(root: &Path) -> Outcome {
    let setup = (|| -> Result<(), air_cli::CliError> {
        run_cli(&[
            "simulate",
            "--seeds",
            "1",
            "--steps",
            "1",
            "--layers",
            "2",
            "--dump-scene",
            &root.join("scene").display().to_string(),
            "--out-dir",
            &root.join("setup").display().to_string(),
        ])?;
        let mut rng = stream_rng(111, 0);
        air_core::npy::write_npy(
            root.join("w1.npy"),
            &gaussian_matrix(&mut rng, 64, 128, 0.125),
        )?;
        air_core::npy::write_npy(
            root.join("w2.npy"),
            &gaussian_matrix(&mut rng, 64, 128, 0.09),
        )?;
        Ok(())
    })();
    if let Err(e) = setup {
        return outcome(false, format!("setup failed: {e}"));
    }
    let mut snapshots = Vec::new();
    for threads in [1, 4, 8] {
        match all_commands(root, threads) {
            Ok(s) => snapshots.push(s),
            Err(e) => return outcome(false, format!("threads={threads}: {e}")),
        }
    }
    let repeat = match all_commands(root, 1) {
        Ok(s) => s,
        Err(e) => return outcome(false, format!("repeat: {e}")),
    };
    let differing: Vec<&String> = snapshots[0]
        .iter()
        .filter(|(k, v)| {
            snapshots[1..]
                .iter()
                .chain([&repeat])
                .any(|s| s.get(*k) != Some(v))
        })
        .map(|(k, _)| k)
        .collect();
    outcome(
        differing.is_empty() && snapshots.iter().all(|s| s.len() == snapshots[0].len()),
        format!(
            "{} output files from 8 commands identical across threads 1, 4, 8 and a repeat run{}",
            snapshots[0].len(),
            if differing.is_empty() {
                String::new()
            } else {
                format!("; differing: {differing:?}")
            }
        ),
    )
}

type Check<'a> = Box<dyn Fn() -> Outcome + 'a>;

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let criteria: Vec<(&str, Check)> = vec![
        ("sinkhorn feasibility", Box::new(sinkhorn_feasibility)),
        ("exact OT agreement", Box::new(exact_ot_agreement)),
        ("uniform-plan dominance", Box::new(uniform_plan_dominance)),
        (
            "margin sensitivity",
            Box::new(|| margin_sensitivity(dir.path())),
        ),
        ("top-q oracle equivalence", Box::new(top_q_oracle)),
        ("injection fallback exactness", Box::new(fallback_exactness)),
        ("selection monotonicity", Box::new(selection_monotonicity)),
        ("grounding uplift", Box::new(grounding_uplift)),
        ("overhead", Box::new(overhead)),
        ("chair formulas", Box::new(chair_fixtures)),
        ("determinism", Box::new(|| determinism(dir.path()))),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        failed += usize::from(!o.pass);
        println!(
            "criterion {:>2} {:<30} {}  {}",
            i + 1,
            name,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
