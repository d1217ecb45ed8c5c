//! `grok` — batch driver for grokking / circuit-efficiency experiments.
//!
//! Exit codes: 0 success, 2 for assertion-style failures (for example
//! critical-size data that does not bracket the 50% crossing), 1 for all
//! other errors.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use grok_core::dataset::{DataSplit, LabelMode, OpKind, TaskSpec};
use grok_core::experiments::{
    classify_accuracy, estimate_critical_size, parse_ungrokking_csv, run_efficiency_sweep,
    run_mem_only, run_semigrok_probe, run_ungrokking, write_semigrok_csv, write_ungrokking_csv,
    EfficiencySweepConfig, SweepMode, UngrokkingSweepConfig,
};
use grok_core::train::run_training;
use grok_core::fourier::{
    collect_logit_tensor, correct_logit_mean, correct_margin_mean, isologit_buckets, key_frequencies,
    project_trig, write_decomposition_csv, write_efficiency_csv, FourierBasis,
};
use grok_core::sim::{simulate, SimConfig, SimPreset};
use grok_core::train::{load_checkpoint, RunConfig};
use grok_core::Error;

#[derive(Parser)]
#[command(name = "grok", about = "grokking and circuit-efficiency experiments", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the two-circuit minimal-model simulation and write its trace CSV.
    Sim(SimArgs),
    /// Train a transformer on a modular task (grokking setup).
    Train(TrainArgs),
    /// Train on fully randomized labels and emit a mem-only efficiency record.
    MemOnly(TrainArgs),
    /// Sweep (dataset size, weight decay, seed) cells and collect efficiency records.
    Efficiency(EfficiencyArgs),
    /// Continue a grokked checkpoint on reduced train subsets.
    Ungrok(UngrokArgs),
    /// From-scratch sweep of dataset sizes near the critical size.
    Semigrok(SemigrokArgs),
    /// Estimate the critical dataset size from an ungrokking summary CSV.
    CriticalSize(CriticalSizeArgs),
    /// Recompute the trig decomposition of a checkpoint's logit tensor.
    Analyze(AnalyzeArgs),
}

#[derive(Args)]
struct SimArgs {
    /// Preset a, b or c; conflicts with the hyperparameter overrides below.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    pi_g: Option<f64>,
    #[arg(long)]
    pi_m: Option<f64>,
    #[arg(long)]
    k: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    q: Option<u32>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    w_g1: Option<f64>,
    #[arg(long)]
    w_g2: Option<f64>,
    #[arg(long)]
    w_m1: Option<f64>,
    #[arg(long)]
    w_m2: Option<f64>,
    /// Number of gradient steps (allowed alongside --preset).
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long, default_value_t = 10)]
    record_every: u64,
    /// Output CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct TrainArgs {
    /// Master seed: drives the data split and parameter initialization.
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
    /// JSON file with partial RunConfig overrides, applied last.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 113)]
    modulus: u32,
    #[arg(long, default_value = "addition")]
    op: String,
    /// Training-set size; defaults to 30% of the P^2 grid.
    #[arg(long)]
    train_count: Option<usize>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    max_epochs: Option<u64>,
    #[arg(long)]
    eval_every: Option<u64>,
    /// Epochs between trig-decomposition evaluations (0 = final only).
    #[arg(long)]
    analyze_every: Option<u64>,
    #[arg(long)]
    test_acc_target: Option<f64>,
}

#[derive(Args)]
struct EfficiencyArgs {
    #[command(flatten)]
    train: TrainArgs,
    /// gen (true labels, trig-filtered) or mem (random labels).
    #[arg(long)]
    mode: String,
    /// Comma-separated dataset sizes.
    #[arg(long, value_delimiter = ',', required = true)]
    sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1.0")]
    lambdas: Vec<f64>,
    /// Comma-separated master seeds, one cell per (size, lambda, seed).
    #[arg(long, value_delimiter = ',', required = true)]
    seeds: Vec<u64>,
    #[arg(long, default_value_t = 0.95)]
    gen_filter_threshold: f64,
    #[arg(long, default_value_t = 6)]
    buckets: usize,
}

#[derive(Args)]
struct UngrokArgs {
    #[command(flatten)]
    train: TrainArgs,
    /// Source checkpoint (.bin) of a grokked run.
    #[arg(long)]
    checkpoint: PathBuf,
    /// split.json of the source run (defines the pinned test set).
    #[arg(long)]
    split: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0.3,1.0,3.0")]
    lambdas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    subset_seeds: Vec<u64>,
    #[arg(long, default_value_t = 100_000)]
    epochs: u64,
    /// Carry the checkpoint's optimizer moments instead of resetting them.
    #[arg(long)]
    carry_optimizer: bool,
}

#[derive(Args)]
struct SemigrokArgs {
    #[command(flatten)]
    train: TrainArgs,
    #[arg(long, value_delimiter = ',', required = true)]
    sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',', required = true)]
    seeds: Vec<u64>,
}

#[derive(Args)]
struct CriticalSizeArgs {
    /// Ungrokking summary CSV (d_prime,weight_decay,seed,final_test_acc,final_train_acc).
    #[arg(long)]
    input: PathBuf,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 113)]
    modulus: u32,
    #[arg(long, default_value = "addition")]
    op: String,
    /// Per-frequency coefficient CSV output path.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0.9)]
    energy_fraction: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Sim(a) => cmd_sim(a),
        Command::Train(a) => cmd_train(a),
        Command::MemOnly(a) => cmd_mem_only(a),
        Command::Efficiency(a) => cmd_efficiency(a),
        Command::Ungrok(a) => cmd_ungrok(a),
        Command::Semigrok(a) => cmd_semigrok(a),
        Command::CriticalSize(a) => cmd_critical_size(a),
        Command::Analyze(a) => cmd_analyze(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            // assertion-style failures exit 2, everything else 1
            let assertion = e
                .downcast_ref::<Error>()
                .map_or(false, |ge| matches!(ge, Error::NonBracketing(_)));
            if assertion {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn cmd_sim(a: SimArgs) -> Result<ExitCode> {
    let overrides = [
        a.pi_g.is_some(),
        a.pi_m.is_some(),
        a.k.is_some(),
        a.lambda.is_some(),
        a.q.is_some(),
        a.lr.is_some(),
        a.w_g1.is_some(),
        a.w_g2.is_some(),
        a.w_m1.is_some(),
        a.w_m2.is_some(),
    ]
    .iter()
    .any(|&b| b);
    let mut cfg: SimConfig<f64> = match &a.preset {
        Some(name) => {
            if overrides {
                bail!("--preset conflicts with explicit hyperparameter overrides; drop one");
            }
            SimConfig::preset(name.parse::<SimPreset>()?)
        }
        None => {
            let base = SimConfig::preset(SimPreset::A);
            SimConfig {
                pi_g: a.pi_g.unwrap_or(base.pi_g),
                pi_m: a.pi_m.unwrap_or(base.pi_m),
                k: a.k.unwrap_or(base.k),
                lambda: a.lambda.unwrap_or(base.lambda),
                q: a.q.unwrap_or(base.q),
                lr: a.lr.unwrap_or(base.lr),
                w_g1_0: a.w_g1.unwrap_or(base.w_g1_0),
                w_g2_0: a.w_g2.unwrap_or(base.w_g2_0),
                w_m1_0: a.w_m1.unwrap_or(base.w_m1_0),
                w_m2_0: a.w_m2.unwrap_or(base.w_m2_0),
                steps: base.steps,
            }
        }
    };
    if let Some(steps) = a.steps {
        cfg.steps = steps;
    }
    let trace = simulate(&cfg, a.record_every)?;
    match &a.out {
        Some(path) => {
            let f = BufWriter::new(File::create(path).with_context(|| format!("create {path:?}"))?);
            trace.write_csv(f)?;
        }
        None => trace.write_csv(std::io::stdout().lock())?,
    }
    if trace.diverged {
        eprintln!("warning: simulation diverged; trace truncated");
    }
    Ok(ExitCode::SUCCESS)
}

/// Build a RunConfig from common flags, then layer `--config` JSON on top.
fn build_run_config(a: &TrainArgs) -> Result<RunConfig> {
    let op: OpKind = a.op.parse()?;
    let task = TaskSpec::new(a.modulus, op)?;
    let train_count = a
        .train_count
        .unwrap_or_else(|| (task.grid_size() as f64 * 0.3).round() as usize);
    let mut cfg = RunConfig::new(task, train_count, a.seed, a.seed);
    if let Some(wd) = a.weight_decay {
        cfg.optimizer.weight_decay = wd;
    }
    if let Some(m) = a.max_epochs {
        cfg.max_epochs = m;
    }
    if let Some(e) = a.eval_every {
        cfg.eval_every = e;
    }
    if let Some(e) = a.analyze_every {
        cfg.analyze_every = e;
    }
    if a.test_acc_target.is_some() {
        cfg.test_acc_target = a.test_acc_target;
    }
    if let Some(path) = &a.config {
        let text = std::fs::read_to_string(path).with_context(|| format!("read {path:?}"))?;
        let patch: serde_json::Value = serde_json::from_str(&text)?;
        let mut merged = serde_json::to_value(&cfg)?;
        merge_json(&mut merged, patch);
        cfg = serde_json::from_value(merged).context("applying --config overrides")?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Recursive merge: objects merge key-by-key, everything else replaces.
fn merge_json(base: &mut serde_json::Value, patch: serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge_json(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn cmd_train(a: TrainArgs) -> Result<ExitCode> {
    let cfg = build_run_config(&a)?;
    let (outcome, _) = run_training(&cfg, Some(&a.out_dir))?;
    let last = outcome.metrics.last().expect("at least one row");
    println!(
        "stopped at epoch {} ({:?}): train_acc={:.4} test_acc={} param_norm={:.3}",
        outcome.final_epoch,
        outcome.stop_reason,
        last.train_acc,
        last.test_acc
            .map(|a| format!("{a:.4}"))
            .unwrap_or_else(|| "n/a".into()),
        last.param_norm,
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_mem_only(a: TrainArgs) -> Result<ExitCode> {
    let mut cfg = build_run_config(&a)?;
    cfg.label_mode = LabelMode::Randomized { seed: a.seed };
    let out = run_mem_only(&cfg, Some(&a.out_dir))?;
    let mut f = BufWriter::new(File::create(a.out_dir.join("record.csv"))?);
    write_efficiency_csv(std::slice::from_ref(&out.record), &mut f)?;
    println!(
        "memorized={} D={} param_norm={:.3} correct_logit_train={:.4}",
        out.memorized, out.record.dataset_size, out.record.param_norm, out.record.correct_logit_train
    );
    if !out.memorized {
        eprintln!("warning: budget exhausted before perfect train accuracy; record incomplete");
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_efficiency(a: EfficiencyArgs) -> Result<ExitCode> {
    let mode = match a.mode.as_str() {
        "gen" => SweepMode::Gen,
        "mem" => SweepMode::Mem,
        other => bail!("--mode must be gen or mem, got {other:?}"),
    };
    let base = build_run_config(&a.train)?;
    let cfg = EfficiencySweepConfig {
        task: base.task,
        mode,
        sizes: a.sizes.clone(),
        lambdas: a.lambdas.clone(),
        seeds: a.seeds.clone(),
        base,
        gen_filter_threshold: a.gen_filter_threshold,
    };
    let records = run_efficiency_sweep(&cfg)?;
    std::fs::create_dir_all(&a.train.out_dir)?;
    let mut f = BufWriter::new(File::create(a.train.out_dir.join("summary.csv"))?);
    write_efficiency_csv(&records, &mut f)?;
    f.flush()?;
    let summary = isologit_buckets(&records, a.buckets)?;
    if summary.excluded > 0 {
        eprintln!(
            "note: {} records excluded from bucketing (non-positive correct logit)",
            summary.excluded
        );
    }
    let mut bf = BufWriter::new(File::create(a.train.out_dir.join("isologit.csv"))?);
    writeln!(bf, "bucket_lo,bucket_hi,spearman,n_points")?;
    for b in &summary.buckets {
        writeln!(
            bf,
            "{},{},{},{}",
            b.lo,
            b.hi,
            b.spearman.map(|s| s.to_string()).unwrap_or_default(),
            b.points.len()
        )?;
    }
    println!("{} records kept; {} buckets", records.len(), summary.buckets.len());
    for (i, b) in summary.buckets.iter().enumerate() {
        println!(
            "bucket {i}: [{:.4}, {:.4}) n={} spearman={}",
            b.lo,
            b.hi,
            b.points.len(),
            b.spearman.map(|s| format!("{s:.3}")).unwrap_or_else(|| "n/a".into())
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_ungrok(a: UngrokArgs) -> Result<ExitCode> {
    let base = build_run_config(&a.train)?;
    let (params, opt_state, epoch) = load_checkpoint(&a.checkpoint)?;
    let split_text = std::fs::read_to_string(&a.split)?;
    let split = DataSplit::from_json(&split_text)?;
    let mut sweep = UngrokkingSweepConfig::new(a.sizes, a.lambdas, a.subset_seeds);
    sweep.continuation_epochs = a.epochs;
    sweep.eval_every = base.eval_every;
    sweep.carry_optimizer = a.carry_optimizer;
    let rows = run_ungrokking(&base, &params, opt_state.as_ref(), &split, epoch, &sweep)?;
    std::fs::create_dir_all(&a.train.out_dir)?;
    let mut f = BufWriter::new(File::create(a.train.out_dir.join("summary.csv"))?);
    write_ungrokking_csv(&rows, &mut f)?;
    for r in &rows {
        println!(
            "D'={} wd={} seed={}: test_acc={:.4} train_acc={:.4} ({})",
            r.d_prime,
            r.weight_decay,
            r.seed,
            r.final_test_acc,
            r.final_train_acc,
            classify_accuracy(r.final_test_acc)
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_semigrok(a: SemigrokArgs) -> Result<ExitCode> {
    let base = build_run_config(&a.train)?;
    std::fs::create_dir_all(&a.train.out_dir)?;
    let rows = run_semigrok_probe(&base, &a.sizes, &a.seeds, Some(&a.train.out_dir))?;
    let mut f = BufWriter::new(File::create(a.train.out_dir.join("summary.csv"))?);
    write_semigrok_csv(&rows, &mut f)?;
    for r in &rows {
        println!(
            "D={} seed={}: test_acc={:.4} ({})",
            r.dataset_size, r.seed, r.final_test_acc, r.band
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_critical_size(a: CriticalSizeArgs) -> Result<ExitCode> {
    let text = std::fs::read_to_string(&a.input)?;
    let rows = parse_ungrokking_csv(&text)?;
    let est = estimate_critical_size(&rows)?;
    println!(
        "critical dataset size: {:.1} (bracket [{:.0}, {:.0}], {} seeds)",
        est.point,
        est.lo,
        est.hi,
        est.per_seed.len()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_analyze(a: AnalyzeArgs) -> Result<ExitCode> {
    let op: OpKind = a.op.parse()?;
    let task = TaskSpec::new(a.modulus, op)?;
    let (params, _, epoch) = load_checkpoint(&a.checkpoint)?;
    let z = collect_logit_tensor(&params, &task)?;
    let decomp = project_trig(&z, &FourierBasis::new(a.modulus as usize))?;
    let keys = key_frequencies(&decomp, a.energy_fraction)?;
    let rows = grok_core::dataset::build_full_dataset(&task);
    println!(
        "epoch {}: trig_fraction={:.6} key_frequencies={:?}",
        epoch, decomp.trig_norm_fraction, keys
    );
    println!(
        "correct_logit mean={:.4} (trig {:.4}, residual {:.4}); margin={:.4}",
        correct_logit_mean(&z, &rows),
        correct_logit_mean(&decomp.trig, &rows),
        correct_logit_mean(&decomp.mem, &rows),
        correct_margin_mean(&z, &rows),
    );
    if let Some(path) = &a.out {
        let f = BufWriter::new(File::create(path)?);
        write_decomposition_csv(&decomp, f)?;
    }
    Ok(ExitCode::SUCCESS)
}
#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn args(seed: u64) -> TrainArgs {
        TrainArgs {
            seed,
            out_dir: PathBuf::from("/tmp/unused"),
            config: None,
            modulus: 113,
            op: "addition".into(),
            train_count: None,
            weight_decay: None,
            max_epochs: None,
            eval_every: None,
            analyze_every: None,
            test_acc_target: None,
        }
    }

    #[test]
    fn merge_json_merges_objects_and_replaces_scalars() {
        let mut base = json!({"a": {"x": 1, "y": 2}, "b": 3});
        merge_json(&mut base, json!({"a": {"y": 20, "z": 30}, "b": 4, "c": 5}));
        assert_eq!(base, json!({"a": {"x": 1, "y": 20, "z": 30}, "b": 4, "c": 5}));
    }

    #[test]
    fn train_count_defaults_to_30_percent_of_the_grid() {
        let cfg = build_run_config(&args(0)).unwrap();
        assert_eq!(cfg.train_count, (113 * 113) as usize * 3 / 10 + 1); // round(12769 * 0.3)
        assert_eq!(cfg.split_seed, 0);
        assert_eq!(cfg.model.seed, 0);
    }

    #[test]
    fn config_file_overrides_win_over_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("overrides.json");
        std::fs::write(
            &path,
            r#"{"optimizer": {"weight_decay": 0.25}, "max_epochs": 777}"#,
        )
        .unwrap();
        let mut a = args(5);
        a.weight_decay = Some(2.0);
        a.config = Some(path);
        let cfg = build_run_config(&a).unwrap();
        assert_eq!(cfg.optimizer.weight_decay, 0.25);
        assert_eq!(cfg.max_epochs, 777);
        // untouched fields keep their flag/default values
        assert_eq!(cfg.optimizer.lr, 1e-3);
        assert_eq!(cfg.split_seed, 5);
    }

    #[test]
    fn bad_config_field_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("overrides.json");
        std::fs::write(&path, r#"{"max_epochs": 0}"#).unwrap();
        let mut a = args(0);
        a.config = Some(path);
        assert!(build_run_config(&a).is_err());
    }
}
