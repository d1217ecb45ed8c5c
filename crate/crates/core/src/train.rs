//! Full-batch training loop: metrics logging, stop criteria and
//! checkpointing.
//!
//! One optimizer step consumes the whole training set, so step and epoch
//! coincide. Training runs at f32; the checkpoint stores the raw f32 bits,
//! which makes resume-with-optimizer-state bitwise identical to an
//! uninterrupted run.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{DataSplit, ExampleRow, LabelMode, TaskSpec};
use crate::error::{Error, Result};
use crate::fourier::{collect_logit_tensor, correct_logit_mean, project_trig, FourierBasis};
use crate::model::{
    init_params, loss_and_grads, mean_loss, predict_accuracy, total_params, Batch, ModelConfig,
    ModelParams,
};
use crate::optim::{adamw_step, OptimizerConfig, OptimizerState};
use crate::util::fmt_sig10;

/// Loss-plateau stop criterion: stop when the total loss (cross-entropy
/// plus lambda/2 * param_norm^2) changes by less than `tol` over a window
/// of `window` epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateauConfig {
    pub window: u64,
    pub tol: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        PlateauConfig {
            window: 2000,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub task: TaskSpec,
    pub train_count: usize,
    pub split_seed: u64,
    pub label_mode: LabelMode,
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    pub max_epochs: u64,
    pub eval_every: u64,
    /// Stop once test accuracy reaches this value (checked at eval epochs).
    pub test_acc_target: Option<f64>,
    /// Stop once train accuracy reaches this value (checked at eval epochs);
    /// used by memorization runs that have no meaningful test metrics.
    pub train_acc_target: Option<f64>,
    pub plateau: Option<PlateauConfig>,
    /// Epochs between trig-decomposition evaluations; 0 disables them
    /// except at the final epoch.
    pub analyze_every: u64,
    /// Write intermediate checkpoints this often; 0 means final-only.
    pub checkpoint_every: u64,
}

impl RunConfig {
    pub fn new(task: TaskSpec, train_count: usize, split_seed: u64, model_seed: u64) -> Self {
        RunConfig {
            task,
            train_count,
            split_seed,
            label_mode: LabelMode::TrueLabels,
            model: ModelConfig::standard(task.modulus as usize, model_seed),
            optimizer: OptimizerConfig::default(),
            max_epochs: 50_000,
            eval_every: 100,
            test_acc_target: None,
            train_acc_target: None,
            plateau: Some(PlateauConfig::default()),
            analyze_every: 0,
            checkpoint_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.optimizer.validate()?;
        if self.max_epochs < 1 || self.eval_every < 1 {
            return Err(Error::InvalidConfig(
                "max_epochs and eval_every must be at least 1".into(),
            ));
        }
        if self.train_count > self.task.grid_size() {
            return Err(Error::InvalidConfig(format!(
                "train_count {} exceeds the {}-cell grid",
                self.train_count,
                self.task.grid_size()
            )));
        }
        Ok(())
    }
}

/// One evaluation row. Trig columns are present only at analysis epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub epoch: u64,
    pub train_loss: f64,
    pub train_acc: f64,
    /// None when the test set is empty.
    pub test_loss: Option<f64>,
    pub test_acc: Option<f64>,
    pub param_norm: f64,
    pub trig_fraction: Option<f64>,
    pub correct_logit_trig: Option<f64>,
    pub correct_logit_mem: Option<f64>,
}

pub const METRICS_CSV_HEADER: &str =
    "epoch,train_loss,train_acc,test_loss,test_acc,param_norm,trig_fraction,correct_logit_trig,correct_logit_mem";

fn opt_cell(v: Option<f64>) -> String {
    v.map(fmt_sig10).unwrap_or_default()
}

fn write_metrics_row<W: Write>(r: &MetricsRow, mut w: W) -> Result<()> {
    writeln!(
        w,
        "{},{},{},{},{},{},{},{},{}",
        r.epoch,
        fmt_sig10(r.train_loss),
        fmt_sig10(r.train_acc),
        opt_cell(r.test_loss),
        opt_cell(r.test_acc),
        fmt_sig10(r.param_norm),
        opt_cell(r.trig_fraction),
        opt_cell(r.correct_logit_trig),
        opt_cell(r.correct_logit_mem),
    )?;
    Ok(())
}

pub fn write_metrics_csv<W: Write>(rows: &[MetricsRow], mut w: W) -> Result<()> {
    writeln!(w, "{METRICS_CSV_HEADER}")?;
    for r in rows {
        write_metrics_row(r, &mut w)?;
    }
    Ok(())
}

/// Why the loop ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    BudgetExhausted,
    TestAccTarget,
    TrainAccTarget,
    Plateau,
    Diverged,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub params: ModelParams<f32>,
    pub opt_state: OptimizerState<f32>,
    pub metrics: Vec<MetricsRow>,
    pub stop_reason: StopReason,
    pub final_epoch: u64,
}

/// Train from explicit starting state. `start_epoch` continues the epoch
/// numbering (and optimizer bias correction) of a resumed run.
pub fn train_from(
    cfg: &RunConfig,
    split: &DataSplit,
    test_rows_override: Option<&[ExampleRow]>,
    mut params: ModelParams<f32>,
    mut opt_state: OptimizerState<f32>,
    start_epoch: u64,
    out_dir: Option<&Path>,
) -> Result<RunOutcome> {
    cfg.validate()?;
    let train_rows = split.train_rows();
    let test_rows: Vec<ExampleRow> = match test_rows_override {
        Some(rows) => rows.to_vec(),
        None => split.test_rows(),
    };
    if train_rows.is_empty() {
        return Err(Error::Precondition("empty training set".into()));
    }
    let batch = Batch::from_rows(&train_rows);
    let mut metrics: Vec<MetricsRow> = Vec::new();
    let mut stop_reason = StopReason::BudgetExhausted;
    let mut epoch = start_epoch;
    let mut plateau_anchor: Option<(u64, f64)> = None;

    let eval = |params: &ModelParams<f32>,
                epoch: u64,
                with_trig: bool|
     -> Result<MetricsRow> {
        let train_loss = mean_loss(params, &train_rows)?;
        let train_acc = predict_accuracy(params, &train_rows)?;
        let (test_loss, test_acc) = if test_rows.is_empty() {
            (None, None)
        } else {
            (
                Some(mean_loss(params, &test_rows)?),
                Some(predict_accuracy(params, &test_rows)?),
            )
        };
        let (trig_fraction, correct_logit_trig, correct_logit_mem) = if with_trig {
            let z = collect_logit_tensor(params, &cfg.task)?;
            let decomp = project_trig(&z, &FourierBasis::new(cfg.task.modulus as usize))?;
            (
                Some(decomp.trig_norm_fraction),
                Some(correct_logit_mean(&decomp.trig, &train_rows)),
                Some(correct_logit_mean(&decomp.mem, &train_rows)),
            )
        } else {
            (None, None, None)
        };
        Ok(MetricsRow {
            epoch,
            train_loss,
            train_acc,
            test_loss,
            test_acc,
            param_norm: params.param_norm(),
            trig_fraction,
            correct_logit_trig,
            correct_logit_mem,
        })
    };

    let end_epoch = start_epoch + cfg.max_epochs;
    let with_trig_at = |e: u64| cfg.analyze_every > 0 && e % cfg.analyze_every == 0;

    // Stream metrics so long runs show live progress; the file is rewritten
    // in full at the end (the final row may gain trig columns).
    let mut stream = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let mut f = BufWriter::new(File::create(dir.join("metrics.csv"))?);
            writeln!(f, "{METRICS_CSV_HEADER}")?;
            Some(f)
        }
        None => None,
    };
    let push_row = |metrics: &mut Vec<MetricsRow>,
                        stream: &mut Option<BufWriter<File>>,
                        row: MetricsRow|
     -> Result<()> {
        if let Some(f) = stream {
            write_metrics_row(&row, &mut *f)?;
            f.flush()?;
        }
        metrics.push(row);
        Ok(())
    };
    let row = eval(&params, epoch, with_trig_at(epoch))?;
    push_row(&mut metrics, &mut stream, row)?;

    while epoch < end_epoch {
        let (loss, grads) = match loss_and_grads(&params, &batch) {
            Ok(x) => x,
            Err(Error::Numerical(msg)) => {
                // checkpoint the last good state and report divergence
                if let Some(dir) = out_dir {
                    save_checkpoint(
                        &dir.join("checkpoint.bin"),
                        &params,
                        Some(&opt_state),
                        epoch,
                    )?;
                }
                return Err(Error::Numerical(format!(
                    "diverged at epoch {epoch}: {msg}"
                )));
            }
            Err(e) => return Err(e),
        };
        if !loss.is_finite() {
            stop_reason = StopReason::Diverged;
            break;
        }
        adamw_step(&mut params.data, &grads.data, &mut opt_state, &cfg.optimizer)?;
        epoch += 1;

        let at_end = epoch == end_epoch;
        if epoch % cfg.eval_every == 0 || at_end {
            let row = eval(&params, epoch, with_trig_at(epoch) || at_end)?;
            // total loss for plateau detection: xent + lambda/2 ||theta||^2
            let total =
                row.train_loss + 0.5 * cfg.optimizer.weight_decay * row.param_norm.powi(2);
            let done_test = cfg
                .test_acc_target
                .map_or(false, |t| row.test_acc.map_or(false, |a| a >= t));
            let done_train = cfg.train_acc_target.map_or(false, |t| row.train_acc >= t);
            let done_plateau = if let Some(p) = &cfg.plateau {
                match plateau_anchor {
                    Some((e0, l0)) if epoch - e0 >= p.window => {
                        let hit = (l0 - total).abs() < p.tol;
                        plateau_anchor = Some((epoch, total));
                        hit
                    }
                    None => {
                        plateau_anchor = Some((epoch, total));
                        false
                    }
                    _ => false,
                }
            } else {
                false
            };
            push_row(&mut metrics, &mut stream, row)?;
            if let (Some(dir), true) = (
                out_dir,
                cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0,
            ) {
                save_checkpoint(&dir.join("checkpoint.bin"), &params, Some(&opt_state), epoch)?;
            }
            if done_test {
                stop_reason = StopReason::TestAccTarget;
                break;
            }
            if done_train {
                stop_reason = StopReason::TrainAccTarget;
                break;
            }
            if done_plateau {
                stop_reason = StopReason::Plateau;
                break;
            }
        }
    }

    drop(stream);
    // Early stops can leave the final row without the trig decomposition;
    // recompute it so every run ends with a fully populated last row.
    if metrics.last().map_or(false, |r| r.trig_fraction.is_none()) {
        let row = eval(&params, epoch, true)?;
        if metrics.last().map(|r| r.epoch) == Some(epoch) {
            *metrics.last_mut().unwrap() = row;
        } else {
            metrics.push(row);
        }
    }
    if let Some(dir) = out_dir {
        save_checkpoint(&dir.join("checkpoint.bin"), &params, Some(&opt_state), epoch)?;
        let mut f = BufWriter::new(File::create(dir.join("metrics.csv"))?);
        write_metrics_csv(&metrics, &mut f)?;
    }
    Ok(RunOutcome {
        params,
        opt_state,
        metrics,
        stop_reason,
        final_epoch: epoch,
    })
}

/// Fresh run: build the split, initialize parameters from the config seed,
/// write `config.json` / `metrics.csv` / `checkpoint.bin` under `out_dir`
/// when given.
pub fn run_training(cfg: &RunConfig, out_dir: Option<&Path>) -> Result<(RunOutcome, DataSplit)> {
    cfg.validate()?;
    let mut split = crate::dataset::split(&cfg.task, cfg.train_count, cfg.split_seed)?;
    if let LabelMode::Randomized { seed } = cfg.label_mode {
        split = crate::dataset::randomize_labels(&split, seed);
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("config.json"), serde_json::to_string_pretty(cfg)?)?;
        std::fs::write(dir.join("split.json"), split.to_json()?)?;
    }
    let params = init_params::<f32>(&cfg.model)?;
    let opt_state = OptimizerState::new(total_params(&cfg.model));
    let outcome = train_from(cfg, &split, None, params, opt_state, 0, out_dir)?;
    Ok((outcome, split))
}

// ---------------------------------------------------------------------------
// Checkpoint format
//
// Binary layout (all integers little-endian):
//   magic    8 bytes  "GROKCKP1"
//   version  u32      currently 1
//   cfg_len  u32      length of the ModelConfig JSON block
//   cfg      cfg_len bytes of JSON
//   epoch    u64
//   flags    u32      bit 0: optimizer state present
//   tensors  f32 LE, concatenated in Section order (embed, pos_embed, w_q,
//            w_k, w_v, w_o, w_in, w_out, w_unembed)
//   if flag: optimizer m then v (same layout), then step counter u64
//
// A JSON sidecar `<path>.json` repeats config, epoch and the flag for
// tooling that does not want to parse the binary.
// ---------------------------------------------------------------------------

const CHECKPOINT_MAGIC: &[u8; 8] = b"GROKCKP1";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointSidecar {
    model: ModelConfig,
    epoch: u64,
    has_optimizer_state: bool,
}

fn write_f32s<W: Write>(w: &mut W, xs: &[f32]) -> Result<()> {
    let mut buf = Vec::with_capacity(xs.len() * 4);
    for &x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_f32s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f32>> {
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}

pub fn save_checkpoint(
    path: &Path,
    params: &ModelParams<f32>,
    opt_state: Option<&OptimizerState<f32>>,
    epoch: u64,
) -> Result<()> {
    params.check_finite()?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    let cfg_json = serde_json::to_vec(&params.cfg)?;
    w.write_all(&(cfg_json.len() as u32).to_le_bytes())?;
    w.write_all(&cfg_json)?;
    w.write_all(&epoch.to_le_bytes())?;
    let flags: u32 = opt_state.is_some() as u32;
    w.write_all(&flags.to_le_bytes())?;
    write_f32s(&mut w, &params.data)?;
    if let Some(st) = opt_state {
        write_f32s(&mut w, &st.m)?;
        write_f32s(&mut w, &st.v)?;
        w.write_all(&st.t.to_le_bytes())?;
    }
    w.flush()?;

    let sidecar = CheckpointSidecar {
        model: params.cfg,
        epoch,
        has_optimizer_state: opt_state.is_some(),
    };
    let mut side: PathBuf = path.to_path_buf();
    side.set_extension("bin.json");
    std::fs::write(side, serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}

pub fn load_checkpoint(
    path: &Path,
) -> Result<(ModelParams<f32>, Option<OptimizerState<f32>>, u64)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic string".into()));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    r.read_exact(&mut u32buf)?;
    let cfg_len = u32::from_le_bytes(u32buf) as usize;
    let mut cfg_buf = vec![0u8; cfg_len];
    r.read_exact(&mut cfg_buf)?;
    let cfg: ModelConfig = serde_json::from_slice(&cfg_buf)
        .map_err(|e| Error::Checkpoint(format!("bad config block: {e}")))?;
    cfg.validate()?;
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u64buf)?;
    let epoch = u64::from_le_bytes(u64buf);
    r.read_exact(&mut u32buf)?;
    let flags = u32::from_le_bytes(u32buf);
    let n = total_params(&cfg);
    let data = read_f32s(&mut r, n)?;
    let params = ModelParams { cfg, data };
    let opt_state = if flags & 1 != 0 {
        let m = read_f32s(&mut r, n)?;
        let v = read_f32s(&mut r, n)?;
        r.read_exact(&mut u64buf)?;
        Some(OptimizerState {
            m,
            v,
            t: u64::from_le_bytes(u64buf),
        })
    } else {
        None
    };
    Ok((params, opt_state, epoch))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::OpKind;
    use tempfile::tempdir;

    fn small_cfg() -> RunConfig {
        let task = TaskSpec::new(13, OpKind::Addition).unwrap();
        let mut cfg = RunConfig::new(task, 100, 5, 7);
        cfg.model = ModelConfig::tiny(13, 7);
        cfg.max_epochs = 30;
        cfg.eval_every = 10;
        cfg.plateau = None;
        cfg
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise() {
        let cfg = ModelConfig::tiny(13, 3);
        let params = init_params::<f32>(&cfg).unwrap();
        let mut st = OptimizerState::new(total_params(&cfg));
        st.m[5] = 0.25;
        st.v[9] = 1.5;
        st.t = 42;
        let dir = tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        save_checkpoint(&path, &params, Some(&st), 1234).unwrap();
        let (p2, st2, epoch) = load_checkpoint(&path).unwrap();
        assert_eq!(epoch, 1234);
        assert_eq!(p2.cfg, cfg);
        assert_eq!(p2.data, params.data);
        let st2 = st2.unwrap();
        assert_eq!(st2.m, st.m);
        assert_eq!(st2.v, st.v);
        assert_eq!(st2.t, 42);
        // sidecar exists and parses
        let side = std::fs::read_to_string(dir.path().join("ck.bin.json")).unwrap();
        let sc: serde_json::Value = serde_json::from_str(&side).unwrap();
        assert_eq!(sc["epoch"], 1234);
        assert_eq!(sc["has_optimizer_state"], true);
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        std::fs::write(&path, b"not a checkpoint").unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(Error::Checkpoint(_))
        ));
    }

    #[test]
    fn training_writes_run_directory() {
        let cfg = small_cfg();
        let dir = tempdir().unwrap();
        let (outcome, _) = run_training(&cfg, Some(dir.path())).unwrap();
        assert_eq!(outcome.final_epoch, 30);
        assert_eq!(outcome.stop_reason, StopReason::BudgetExhausted);
        for f in ["config.json", "split.json", "metrics.csv", "checkpoint.bin"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        assert!(metrics.starts_with(METRICS_CSV_HEADER));
        // epoch 0 row plus evals at 10, 20, 30
        assert_eq!(metrics.lines().count(), 5);
    }

    #[test]
    fn metrics_epochs_strictly_increase_and_loss_starts_at_log_p() {
        let cfg = small_cfg();
        let (outcome, _) = run_training(&cfg, None).unwrap();
        for pair in outcome.metrics.windows(2) {
            assert!(pair[1].epoch > pair[0].epoch);
        }
        // initial loss within a couple of nats of log(13): random logits
        // at this init scale are order-one
        assert!((outcome.metrics[0].train_loss - 13.0f64.ln()).abs() < 2.0);
    }

    #[test]
    fn resume_with_optimizer_state_is_bitwise_identical() {
        let cfg = {
            let mut c = small_cfg();
            c.max_epochs = 20;
            c
        };
        let (full, split) = run_training(&cfg, None).unwrap();

        // same run split at epoch 10 through a checkpoint file
        let mut first = cfg.clone();
        first.max_epochs = 10;
        let (half, _) = run_training(&first, None).unwrap();
        let dir = tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        save_checkpoint(&path, &half.params, Some(&half.opt_state), 10).unwrap();
        let (params, opt, epoch) = load_checkpoint(&path).unwrap();
        let mut second = cfg.clone();
        second.max_epochs = 10;
        let resumed = train_from(
            &second,
            &split,
            None,
            params,
            opt.unwrap(),
            epoch,
            None,
        )
        .unwrap();
        assert_eq!(resumed.params.data, full.params.data);
        assert_eq!(resumed.final_epoch, 20);
        // metric rows for the overlapping epochs agree exactly
        let tail: Vec<&MetricsRow> =
            full.metrics.iter().filter(|r| r.epoch >= 10).collect();
        for (a, b) in tail.iter().zip(resumed.metrics.iter()) {
            assert_eq!(*a, &b.clone());
        }
    }

    #[test]
    fn empty_test_set_reports_train_metrics_only() {
        let task = TaskSpec::new(13, OpKind::Addition).unwrap();
        let mut cfg = RunConfig::new(task, 169, 5, 7);
        cfg.model = ModelConfig::tiny(13, 7);
        cfg.max_epochs = 5;
        cfg.eval_every = 5;
        cfg.plateau = None;
        let (outcome, _) = run_training(&cfg, None).unwrap();
        for row in &outcome.metrics {
            assert!(row.test_loss.is_none() && row.test_acc.is_none());
            assert!(row.train_loss.is_finite());
        }
    }

    #[test]
    fn train_acc_target_stops_early_on_tiny_problem() {
        let task = TaskSpec::new(5, OpKind::Addition).unwrap();
        let mut cfg = RunConfig::new(task, 4, 1, 2);
        cfg.model = ModelConfig::tiny(5, 2);
        cfg.optimizer.weight_decay = 0.1;
        cfg.max_epochs = 5000;
        cfg.eval_every = 50;
        cfg.train_acc_target = Some(1.0);
        cfg.plateau = None;
        let (outcome, _) = run_training(&cfg, None).unwrap();
        assert_eq!(outcome.stop_reason, StopReason::TrainAccTarget);
        assert!(outcome.final_epoch < 5000);
        assert_eq!(outcome.metrics.last().unwrap().train_acc, 1.0);
    }

    #[test]
    fn metrics_csv_formats_missing_cells_as_empty() {
        let rows = vec![MetricsRow {
            epoch: 0,
            train_loss: 2.5,
            train_acc: 0.125,
            test_loss: None,
            test_acc: None,
            param_norm: 10.0,
            trig_fraction: None,
            correct_logit_trig: None,
            correct_logit_mem: None,
        }];
        let mut buf = Vec::new();
        write_metrics_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().nth(1).unwrap(), "0,2.5,0.125,,,10,,,");
    }
}
