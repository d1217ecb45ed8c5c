//! Experiment harness: grokking runs, memorization baselines, efficiency
//! sweeps, ungrokking sweeps, critical-size estimation, and semi-grokking
//! probes.
//!
//! Each sweep cell is an isolated single-threaded training run; cells run
//! in a rayon worker pool and results are aggregated afterwards. One
//! master seed per cell drives both the data split and the parameter
//! initialization.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{subsample_train_pinned, DataSplit, LabelMode, TaskSpec};
use crate::error::{Error, Result};
use crate::fourier::{
    collect_logit_tensor, correct_logit_mean, gen_only_filter, project_trig, CircuitTag,
    EfficiencyRecord, FourierBasis,
};
use crate::model::{total_params, ModelParams};
use crate::optim::OptimizerState;
use crate::train::{run_training, train_from, MetricsRow, RunConfig, RunOutcome};
use crate::util::{fmt_sig10, isotonic_non_decreasing};

/// A grokking training run: true labels, stop at the test-accuracy target
/// or budget exhaustion.
pub fn run_grokking(cfg: &RunConfig, out_dir: Option<&Path>) -> Result<(RunOutcome, DataSplit)> {
    run_training(cfg, out_dir)
}

#[derive(Debug)]
pub struct MemOnlyOutcome {
    pub record: EfficiencyRecord,
    /// False when the run exhausted its budget before reaching perfect
    /// train accuracy; the record should then be treated as incomplete.
    pub memorized: bool,
    pub outcome: RunOutcome,
}

/// Build the efficiency record for a finished run from its final state.
fn efficiency_record(
    cfg: &RunConfig,
    split: &DataSplit,
    params: &ModelParams<f32>,
    tag: CircuitTag,
    seed: u64,
) -> Result<EfficiencyRecord> {
    let z = collect_logit_tensor(params, &cfg.task)?;
    let decomp = project_trig(&z, &FourierBasis::new(cfg.task.modulus as usize))?;
    Ok(EfficiencyRecord {
        tag,
        seed,
        weight_decay: cfg.optimizer.weight_decay,
        dataset_size: split.train_ids.len(),
        param_norm: params.param_norm(),
        correct_logit_train: correct_logit_mean(&z, &split.train_rows()),
        correct_logit_test: correct_logit_mean(&z, &split.test_rows()),
        trig_fraction: decomp.trig_norm_fraction,
    })
}

/// Train on completely random labels until the train set is memorized
/// (or the budget runs out) and record the efficiency data point.
pub fn run_mem_only(cfg: &RunConfig, out_dir: Option<&Path>) -> Result<MemOnlyOutcome> {
    if !matches!(cfg.label_mode, LabelMode::Randomized { .. }) {
        return Err(Error::Precondition(
            "mem-only runs require randomized labels".into(),
        ));
    }
    let mut cfg = cfg.clone();
    cfg.train_acc_target = Some(1.0);
    cfg.test_acc_target = None;
    let (outcome, split) = run_training(&cfg, out_dir)?;
    let memorized = outcome
        .metrics
        .last()
        .map_or(false, |r| r.train_acc >= 1.0);
    let record = efficiency_record(&cfg, &split, &outcome.params, CircuitTag::MemOnly, cfg.split_seed)?;
    Ok(MemOnlyOutcome {
        record,
        memorized,
        outcome,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    Gen,
    Mem,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EfficiencySweepConfig {
    pub task: TaskSpec,
    pub mode: SweepMode,
    pub sizes: Vec<usize>,
    pub lambdas: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Template run configuration; per-cell size/seed/lambda are patched in.
    pub base: RunConfig,
    /// Trig-fraction threshold for keeping gen-mode records.
    pub gen_filter_threshold: f64,
}

/// Run every (size, lambda, seed) cell; gen-mode records are kept only when
/// the >95% trig-fraction filter passes. Per-cell failures are logged to
/// stderr and skipped.
pub fn run_efficiency_sweep(cfg: &EfficiencySweepConfig) -> Result<Vec<EfficiencyRecord>> {
    let mut cells = Vec::new();
    for &d in &cfg.sizes {
        for &lambda in &cfg.lambdas {
            for &seed in &cfg.seeds {
                cells.push((d, lambda, seed));
            }
        }
    }
    let results: Vec<Option<EfficiencyRecord>> = cells
        .par_iter()
        .map(|&(d, lambda, seed)| {
            let mut run = cfg.base.clone();
            run.task = cfg.task;
            run.train_count = d;
            run.split_seed = seed;
            run.model.seed = seed;
            run.model.vocab_size = cfg.task.vocab_size() as usize;
            run.model.n_answer_classes = cfg.task.modulus as usize;
            run.optimizer.weight_decay = lambda;
            let result = match cfg.mode {
                SweepMode::Mem => {
                    run.label_mode = LabelMode::Randomized { seed };
                    run_mem_only(&run, None).map(|o| Some(o.record))
                }
                SweepMode::Gen => {
                    run.label_mode = LabelMode::TrueLabels;
                    run.train_acc_target = None;
                    (|| {
                        let (outcome, split) = run_training(&run, None)?;
                        let rec = efficiency_record(
                            &run,
                            &split,
                            &outcome.params,
                            CircuitTag::GenOnly,
                            seed,
                        )?;
                        // keep only runs that are genuinely trig-dominated
                        let z = collect_logit_tensor(&outcome.params, &run.task)?;
                        if gen_only_filter(&z, cfg.gen_filter_threshold)? {
                            Ok(Some(rec))
                        } else {
                            Ok(None)
                        }
                    })()
                }
            };
            match result {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("sweep cell (D={d}, wd={lambda}, seed={seed}) failed: {e}");
                    None
                }
            }
        })
        .collect();
    Ok(results.into_iter().flatten().collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UngrokkingSweepConfig {
    /// Reduced train-set sizes D'.
    pub sizes: Vec<usize>,
    pub lambdas: Vec<f64>,
    pub seeds: Vec<u64>,
    pub continuation_epochs: u64,
    pub eval_every: u64,
    /// Carry the source optimizer state into the continuation instead of
    /// starting with fresh moments (default false).
    pub carry_optimizer: bool,
}

impl UngrokkingSweepConfig {
    pub fn new(sizes: Vec<usize>, lambdas: Vec<f64>, seeds: Vec<u64>) -> Self {
        UngrokkingSweepConfig {
            sizes,
            lambdas,
            seeds,
            continuation_epochs: 100_000,
            eval_every: 500,
            carry_optimizer: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UngrokkingRow {
    pub d_prime: usize,
    pub weight_decay: f64,
    pub seed: u64,
    pub final_test_acc: f64,
    pub final_train_acc: f64,
}

pub const UNGROKKING_CSV_HEADER: &str =
    "d_prime,weight_decay,seed,final_test_acc,final_train_acc";

pub fn write_ungrokking_csv<W: Write>(rows: &[UngrokkingRow], mut w: W) -> Result<()> {
    writeln!(w, "{UNGROKKING_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.d_prime,
            fmt_sig10(r.weight_decay),
            r.seed,
            fmt_sig10(r.final_test_acc),
            fmt_sig10(r.final_train_acc),
        )?;
    }
    Ok(())
}

/// Parse a CSV produced by [`write_ungrokking_csv`].
pub fn parse_ungrokking_csv(text: &str) -> Result<Vec<UngrokkingRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == UNGROKKING_CSV_HEADER => {}
        other => {
            return Err(Error::Precondition(format!(
                "expected header {UNGROKKING_CSV_HEADER:?}, got {other:?}"
            )))
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Precondition(format!(
                "line {}: expected 5 fields, got {}",
                i + 2,
                fields.len()
            )));
        }
        let parse_err =
            |e: &dyn std::fmt::Display| Error::Precondition(format!("line {}: {e}", i + 2));
        rows.push(UngrokkingRow {
            d_prime: fields[0].parse().map_err(|e| parse_err(&e))?,
            weight_decay: fields[1].parse().map_err(|e| parse_err(&e))?,
            seed: fields[2].parse().map_err(|e| parse_err(&e))?,
            final_test_acc: fields[3].parse().map_err(|e| parse_err(&e))?,
            final_train_acc: fields[4].parse().map_err(|e| parse_err(&e))?,
        });
    }
    Ok(rows)
}

/// Continue training a grokked network on reduced subsets of its original
/// train set. Test accuracy is always measured on the ORIGINAL test set.
pub fn run_ungrokking(
    base: &RunConfig,
    source_params: &ModelParams<f32>,
    source_opt: Option<&OptimizerState<f32>>,
    source_split: &DataSplit,
    source_epoch: u64,
    sweep: &UngrokkingSweepConfig,
) -> Result<Vec<UngrokkingRow>> {
    for &d in &sweep.sizes {
        if d > source_split.train_ids.len() {
            return Err(Error::Precondition(format!(
                "reduced size {} exceeds the source train set ({})",
                d,
                source_split.train_ids.len()
            )));
        }
    }
    if sweep.carry_optimizer && source_opt.is_none() {
        return Err(Error::Precondition(
            "carry_optimizer requested but the checkpoint has no optimizer state".into(),
        ));
    }
    let mut cells = Vec::new();
    for &d in &sweep.sizes {
        for &lambda in &sweep.lambdas {
            for &seed in &sweep.seeds {
                cells.push((d, lambda, seed));
            }
        }
    }
    let rows: Vec<Result<UngrokkingRow>> = cells
        .par_iter()
        .map(|&(d, lambda, seed)| {
            let pinned = subsample_train_pinned(source_split, d, seed)?;
            let mut cfg = base.clone();
            cfg.train_count = d;
            cfg.optimizer.weight_decay = lambda;
            cfg.max_epochs = sweep.continuation_epochs;
            cfg.eval_every = sweep.eval_every;
            cfg.test_acc_target = None;
            cfg.train_acc_target = None;
            cfg.plateau = None;
            let (params, opt_state, start) = if sweep.carry_optimizer {
                (
                    source_params.clone(),
                    source_opt.expect("checked above").clone(),
                    source_epoch,
                )
            } else {
                (
                    source_params.clone(),
                    OptimizerState::new(total_params(&source_params.cfg)),
                    0,
                )
            };
            let test_rows = pinned.test_rows();
            let outcome = train_from(
                &cfg,
                &pinned.split,
                Some(&test_rows),
                params,
                opt_state,
                start,
                None,
            )?;
            let last = outcome.metrics.last().expect("at least the initial row");
            Ok(UngrokkingRow {
                d_prime: d,
                weight_decay: lambda,
                seed,
                final_test_acc: last.test_acc.unwrap_or(f64::NAN),
                final_train_acc: last.train_acc,
            })
        })
        .collect();
    rows.into_iter().collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticalSizeEstimate {
    /// Median over per-seed interpolated 50%-accuracy crossings.
    pub point: f64,
    /// Widest per-seed bracket of adjacent grid points around the crossing.
    pub lo: f64,
    pub hi: f64,
    pub per_seed: Vec<f64>,
}

/// Estimate the critical dataset size from ungrokking results: per seed,
/// average final test accuracy across weight decays at each D', enforce
/// monotonicity (pool-adjacent-violators), and interpolate the 50%
/// crossing; aggregate seeds by median.
pub fn estimate_critical_size(rows: &[UngrokkingRow]) -> Result<CriticalSizeEstimate> {
    if rows.is_empty() {
        return Err(Error::Precondition("no ungrokking rows".into()));
    }
    let mut seeds: Vec<u64> = rows.iter().map(|r| r.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();

    let mut per_seed = Vec::new();
    let mut brackets = Vec::new();
    for &seed in &seeds {
        let mut sizes: Vec<usize> = rows
            .iter()
            .filter(|r| r.seed == seed)
            .map(|r| r.d_prime)
            .collect();
        sizes.sort_unstable();
        sizes.dedup();
        if sizes.len() < 2 {
            return Err(Error::NonBracketing(format!(
                "seed {seed} has fewer than two dataset sizes"
            )));
        }
        let accs: Vec<f64> = sizes
            .iter()
            .map(|&d| {
                let of: Vec<f64> = rows
                    .iter()
                    .filter(|r| r.seed == seed && r.d_prime == d)
                    .map(|r| r.final_test_acc)
                    .collect();
                of.iter().sum::<f64>() / of.len() as f64
            })
            .collect();
        let mono = isotonic_non_decreasing(&accs);
        if mono[0] >= 0.5 || *mono.last().unwrap() < 0.5 {
            return Err(Error::NonBracketing(format!(
                "seed {seed}: accuracies {:.3?} do not cross 0.5 within D' in [{}, {}]",
                mono,
                sizes[0],
                sizes.last().unwrap()
            )));
        }
        let i = mono.iter().position(|&a| a >= 0.5).unwrap();
        let (x0, x1) = (sizes[i - 1] as f64, sizes[i] as f64);
        let (y0, y1) = (mono[i - 1], mono[i]);
        let cross = if y1 > y0 {
            x0 + (0.5 - y0) / (y1 - y0) * (x1 - x0)
        } else {
            x1
        };
        per_seed.push(cross);
        brackets.push((x0, x1));
    }
    let mut sorted = per_seed.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let point = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    let lo = brackets.iter().map(|b| b.0).fold(f64::INFINITY, f64::min);
    let hi = brackets.iter().map(|b| b.1).fold(f64::NEG_INFINITY, f64::max);
    Ok(CriticalSizeEstimate {
        point,
        lo,
        hi,
        per_seed,
    })
}

/// Final-test-accuracy bands for semi-grokking classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccuracyBand {
    NearRandom,
    Middling,
    Full,
}

pub fn classify_accuracy(acc: f64) -> AccuracyBand {
    if acc < 0.2 {
        AccuracyBand::NearRandom
    } else if acc <= 0.9 {
        AccuracyBand::Middling
    } else {
        AccuracyBand::Full
    }
}

impl std::fmt::Display for AccuracyBand {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AccuracyBand::NearRandom => write!(f, "near_random"),
            AccuracyBand::Middling => write!(f, "middling"),
            AccuracyBand::Full => write!(f, "full"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemiGrokRow {
    pub dataset_size: usize,
    pub seed: u64,
    pub final_test_acc: f64,
    pub band: AccuracyBand,
}

pub const SEMIGROK_CSV_HEADER: &str = "dataset_size,seed,final_test_acc,band";

pub fn write_semigrok_csv<W: Write>(rows: &[SemiGrokRow], mut w: W) -> Result<()> {
    writeln!(w, "{SEMIGROK_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{}",
            r.dataset_size,
            r.seed,
            fmt_sig10(r.final_test_acc),
            r.band
        )?;
    }
    Ok(())
}

/// From-scratch training at dataset sizes near the critical size,
/// classifying each run's final test accuracy into bands. Per-run metric
/// CSVs go into `out_dir/d<D>_s<seed>/` when an output directory is given.
pub fn run_semigrok_probe(
    base: &RunConfig,
    sizes: &[usize],
    seeds: &[u64],
    out_dir: Option<&Path>,
) -> Result<Vec<SemiGrokRow>> {
    let mut cells = Vec::new();
    for &d in sizes {
        for &seed in seeds {
            cells.push((d, seed));
        }
    }
    let rows: Vec<Option<SemiGrokRow>> = cells
        .par_iter()
        .map(|&(d, seed)| {
            let mut cfg = base.clone();
            cfg.train_count = d;
            cfg.split_seed = seed;
            cfg.model.seed = seed;
            let cell_dir = out_dir.map(|p| p.join(format!("d{d}_s{seed}")));
            match run_training(&cfg, cell_dir.as_deref()) {
                Ok((outcome, _)) => {
                    let last: &MetricsRow = outcome.metrics.last().expect("initial row exists");
                    let acc = last.test_acc.unwrap_or(0.0);
                    Some(SemiGrokRow {
                        dataset_size: d,
                        seed,
                        final_test_acc: acc,
                        band: classify_accuracy(acc),
                    })
                }
                Err(e) => {
                    eprintln!("semi-grokking cell (D={d}, seed={seed}) failed: {e}");
                    None
                }
            }
        })
        .collect();
    Ok(rows.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::OpKind;
    use crate::model::ModelConfig;

    fn row(d: usize, wd: f64, seed: u64, test: f64, train: f64) -> UngrokkingRow {
        UngrokkingRow {
            d_prime: d,
            weight_decay: wd,
            seed,
            final_test_acc: test,
            final_train_acc: train,
        }
    }

    #[test]
    fn critical_size_step_data_brackets_the_jump() {
        let rows: Vec<UngrokkingRow> = [390, 620, 900, 1200]
            .iter()
            .map(|&d| row(d, 1.0, 0, if d >= 900 { 1.0 } else { 0.0 }, 1.0))
            .collect();
        let est = estimate_critical_size(&rows).unwrap();
        assert!(est.point >= 620.0 && est.point <= 900.0, "{}", est.point);
        assert_eq!((est.lo, est.hi), (620.0, 900.0));
    }

    #[test]
    fn critical_size_linear_ramp_crosses_near_900() {
        let sizes: Vec<usize> = (0..20).map(|i| 500 + 50 * i).collect();
        let rows: Vec<UngrokkingRow> = sizes
            .iter()
            .map(|&d| {
                let acc = ((d as f64 - 400.0) / 1000.0).clamp(0.0, 1.0);
                row(d, 1.0, 0, acc, 1.0)
            })
            .collect();
        let est = estimate_critical_size(&rows).unwrap();
        assert!((est.point - 900.0).abs() <= 50.0, "{}", est.point);
    }

    #[test]
    fn critical_size_rejects_non_bracketing_data() {
        let rows: Vec<UngrokkingRow> = [390, 620]
            .iter()
            .map(|&d| row(d, 1.0, 0, 0.99, 1.0))
            .collect();
        assert!(matches!(
            estimate_critical_size(&rows),
            Err(Error::NonBracketing(_))
        ));
    }

    #[test]
    fn critical_size_median_over_seeds() {
        // three seeds with crossings at 700, 750, 800
        let mut rows = Vec::new();
        for (seed, cross) in [(0u64, 700.0), (1, 750.0), (2, 800.0)] {
            for d in [600usize, 900] {
                // linear in D with slope 1/300, so it crosses 0.5 at `cross`
                let a = (d as f64 - cross) / 300.0 + 0.5;
                rows.push(row(d, 1.0, seed, a.clamp(0.0, 1.0), 1.0));
            }
        }
        let est = estimate_critical_size(&rows).unwrap();
        assert!((est.point - 750.0).abs() < 1.0, "{}", est.point);
        assert_eq!(est.per_seed.len(), 3);
    }

    #[test]
    fn accuracy_bands_partition_the_interval() {
        assert_eq!(classify_accuracy(0.05), AccuracyBand::NearRandom);
        assert_eq!(classify_accuracy(0.2), AccuracyBand::Middling);
        assert_eq!(classify_accuracy(0.83), AccuracyBand::Middling);
        assert_eq!(classify_accuracy(0.95), AccuracyBand::Full);
    }

    #[test]
    fn ungrokking_csv_shape() {
        let rows = vec![row(390, 0.3, 7, 0.12, 1.0)];
        let mut buf = Vec::new();
        write_ungrokking_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), UNGROKKING_CSV_HEADER);
        assert_eq!(text.lines().nth(1).unwrap(), "390,0.3,7,0.12,1");
    }

    #[test]
    fn ungrokking_csv_round_trips() {
        let rows = vec![
            row(390, 0.3, 7, 0.12, 1.0),
            row(1494, 3.0, 8, 0.98765, 0.99),
        ];
        let mut buf = Vec::new();
        write_ungrokking_csv(&rows, &mut buf).unwrap();
        let parsed = parse_ungrokking_csv(&String::from_utf8(buf).unwrap()).unwrap();
        assert_eq!(parsed, rows);
        assert!(parse_ungrokking_csv("nonsense\n1,2,3").is_err());
    }

    #[test]
    fn empty_efficiency_sweep_yields_no_records() {
        let task = TaskSpec::new(13, OpKind::Addition).unwrap();
        let mut base = RunConfig::new(task, 50, 0, 0);
        base.model = ModelConfig::tiny(13, 0);
        base.max_epochs = 5;
        let cfg = EfficiencySweepConfig {
            task,
            mode: SweepMode::Mem,
            sizes: vec![50],
            lambdas: vec![1.0],
            seeds: vec![],
            base,
            gen_filter_threshold: 0.95,
        };
        let records = run_efficiency_sweep(&cfg).unwrap();
        assert!(records.is_empty());
        let mut buf = Vec::new();
        crate::fourier::write_efficiency_csv(&records, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1);
    }

    #[test]
    fn mem_only_requires_randomized_labels_and_memorizes_tiny_set() {
        let task = TaskSpec::new(13, OpKind::Addition).unwrap();
        let mut cfg = RunConfig::new(task, 12, 3, 3);
        cfg.model = ModelConfig::tiny(13, 3);
        cfg.optimizer.weight_decay = 0.1;
        cfg.max_epochs = 4000;
        cfg.eval_every = 50;
        cfg.plateau = None;
        assert!(run_mem_only(&cfg, None).is_err());
        cfg.label_mode = LabelMode::Randomized { seed: 3 };
        let out = run_mem_only(&cfg, None).unwrap();
        assert!(out.memorized, "failed to memorize 12 random labels");
        assert_eq!(out.record.tag, CircuitTag::MemOnly);
        assert_eq!(out.record.dataset_size, 12);
        assert!(out.record.param_norm > 0.0);
    }

    #[test]
    fn ungrokking_identity_size_keeps_test_accuracy() {
        // At D' = |train| the subsample is the identity, so continuing a
        // converged-ish model briefly must not change test rows used.
        let task = TaskSpec::new(13, OpKind::Addition).unwrap();
        let mut base = RunConfig::new(task, 100, 5, 5);
        base.model = ModelConfig::tiny(13, 5);
        base.max_epochs = 30;
        base.eval_every = 10;
        base.plateau = None;
        let (outcome, split) = run_training(&base, None).unwrap();
        let sweep = UngrokkingSweepConfig {
            continuation_epochs: 10,
            eval_every: 10,
            ..UngrokkingSweepConfig::new(vec![100], vec![1.0], vec![0])
        };
        let rows = run_ungrokking(&base, &outcome.params, None, &split, 30, &sweep).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].d_prime, 100);
        assert!(rows[0].final_test_acc.is_finite());
    }

    #[test]
    fn ungrokking_rejects_oversized_subset_and_missing_opt_state() {
        let task = TaskSpec::new(13, OpKind::Addition).unwrap();
        let mut base = RunConfig::new(task, 50, 5, 5);
        base.model = ModelConfig::tiny(13, 5);
        let params = crate::model::init_params::<f32>(&base.model).unwrap();
        let split = crate::dataset::split(&task, 50, 5).unwrap();
        let sweep = UngrokkingSweepConfig::new(vec![60], vec![1.0], vec![0]);
        assert!(run_ungrokking(&base, &params, None, &split, 0, &sweep).is_err());
        let mut sweep = UngrokkingSweepConfig::new(vec![40], vec![1.0], vec![0]);
        sweep.carry_optimizer = true;
        assert!(run_ungrokking(&base, &params, None, &split, 0, &sweep).is_err());
    }
}
