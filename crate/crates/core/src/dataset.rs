//! Modular binary-operation datasets in the 5-token format
//! `x op y = label`, with seeded train/test splits, removal-only train
//! subsets, and random-label variants.
//!
//! All randomness is a seeded ChaCha20 stream driving a Fisher-Yates
//! shuffle (or i.i.d. draws), so every split is bit-reproducible across
//! platforms from its recorded seed.

use serde::{Deserialize, Serialize};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};

/// The supported binary operations mod P.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Addition,
    Subtraction,
    Multiplication,
    /// x^2 + y^2 mod P
    SumOfSquares,
}

impl OpKind {
    pub fn apply(self, x: u32, y: u32, modulus: u32) -> u32 {
        let (x, y, p) = (x as u64, y as u64, modulus as u64);
        let r = match self {
            OpKind::Addition => (x + y) % p,
            OpKind::Subtraction => (x + p - y) % p,
            OpKind::Multiplication => (x * y) % p,
            OpKind::SumOfSquares => (x * x + y * y) % p,
        };
        r as u32
    }
}

impl std::str::FromStr for OpKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "add" | "addition" => Ok(OpKind::Addition),
            "sub" | "subtraction" => Ok(OpKind::Subtraction),
            "mul" | "multiplication" => Ok(OpKind::Multiplication),
            "sumsq" | "sum_of_squares" => Ok(OpKind::SumOfSquares),
            other => Err(Error::InvalidConfig(format!("unknown operation {other:?}"))),
        }
    }
}

/// A modular task: modulus P, operation, and the P+2 token vocabulary
/// (numerals 0..P, then the operator token P and the equals token P+1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub modulus: u32,
    pub op: OpKind,
}

impl TaskSpec {
    pub fn new(modulus: u32, op: OpKind) -> Result<Self> {
        if modulus < 2 {
            return Err(Error::InvalidConfig("modulus must be >= 2".into()));
        }
        Ok(TaskSpec { modulus, op })
    }

    pub fn vocab_size(&self) -> u32 {
        self.modulus + 2
    }

    pub fn op_token(&self) -> u32 {
        self.modulus
    }

    pub fn eq_token(&self) -> u32 {
        self.modulus + 1
    }

    /// Number of cells in the full (x, y) grid.
    pub fn grid_size(&self) -> usize {
        (self.modulus as usize).pow(2)
    }

    /// Grid index -> (x, y), row-major.
    pub fn decode_index(&self, idx: usize) -> (u32, u32) {
        let p = self.modulus as usize;
        ((idx / p) as u32, (idx % p) as u32)
    }
}

/// One dataset row: the 4 input tokens and the answer label in [0, P).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExampleRow {
    pub tokens: [u32; 4],
    pub label: u32,
}

/// All P^2 rows in row-major (x, y) order with true labels.
pub fn build_full_dataset(task: &TaskSpec) -> Vec<ExampleRow> {
    let p = task.modulus;
    let mut rows = Vec::with_capacity(task.grid_size());
    for x in 0..p {
        for y in 0..p {
            rows.push(ExampleRow {
                tokens: [x, task.op_token(), y, task.eq_token()],
                label: task.op.apply(x, y, p),
            });
        }
    }
    rows
}

/// How train labels are assigned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum LabelMode {
    TrueLabels,
    Randomized { seed: u64 },
}

/// A train/test partition of the full grid. Test ids are the complement of
/// `train_ids` and are reconstructed on demand.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataSplit {
    pub task: TaskSpec,
    pub seed: u64,
    /// Sorted indices into the row-major grid.
    pub train_ids: Vec<usize>,
    pub label_mode: LabelMode,
}

impl DataSplit {
    pub fn test_ids(&self) -> Vec<usize> {
        let mut in_train = vec![false; self.task.grid_size()];
        for &i in &self.train_ids {
            in_train[i] = true;
        }
        (0..self.task.grid_size()).filter(|&i| !in_train[i]).collect()
    }

    /// Train rows with labels per `label_mode`.
    pub fn train_rows(&self) -> Vec<ExampleRow> {
        let full = build_full_dataset(&self.task);
        let mut rows: Vec<ExampleRow> = self.train_ids.iter().map(|&i| full[i]).collect();
        if let LabelMode::Randomized { seed } = self.label_mode {
            let mut rng = label_rng(seed);
            for r in &mut rows {
                r.label = rng.gen_range(0..self.task.modulus);
            }
        }
        rows
    }

    /// Test rows always carry true labels.
    pub fn test_rows(&self) -> Vec<ExampleRow> {
        let full = build_full_dataset(&self.task);
        self.test_ids().iter().map(|&i| full[i]).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

fn split_rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

fn label_rng(seed: u64) -> ChaCha20Rng {
    // distinct stream from the split shuffle
    ChaCha20Rng::seed_from_u64(seed ^ 0xA5A5_5A5A_1234_8765)
}

/// Choose `train_count` grid cells uniformly at random as the train set.
pub fn split(task: &TaskSpec, train_count: usize, seed: u64) -> Result<DataSplit> {
    let n = task.grid_size();
    if train_count > n {
        return Err(Error::InvalidConfig(format!(
            "train_count {train_count} exceeds grid size {n}"
        )));
    }
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut split_rng(seed));
    let mut train_ids = ids[..train_count].to_vec();
    train_ids.sort_unstable();
    Ok(DataSplit {
        task: *task,
        seed,
        train_ids,
        label_mode: LabelMode::TrueLabels,
    })
}

/// Removal-only subsampling: the new train set is a uniformly random subset
/// of the old one, while the test set (the complement of the ORIGINAL train
/// set) is untouched so test metrics stay comparable.
pub fn subsample_train(split: &DataSplit, new_count: usize, seed: u64) -> Result<DataSplit> {
    if new_count > split.train_ids.len() {
        return Err(Error::InvalidConfig(format!(
            "new_count {} exceeds current train size {}",
            new_count,
            split.train_ids.len()
        )));
    }
    let mut ids = split.train_ids.clone();
    ids.shuffle(&mut split_rng(seed));
    let mut train_ids = ids[..new_count].to_vec();
    train_ids.sort_unstable();
    Ok(DataSplit {
        task: split.task,
        seed: split.seed,
        train_ids,
        label_mode: split.label_mode,
    })
}

/// A split whose test set is pinned to an explicit id list. Used after
/// subsampling: removed train examples belong to neither side, and test
/// metrics keep measuring the original held-out set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PinnedSplit {
    pub split: DataSplit,
    pub test_ids: Vec<usize>,
}

/// Removal-only subsampling that pins the original test set.
pub fn subsample_train_pinned(
    orig: &DataSplit,
    new_count: usize,
    seed: u64,
) -> Result<PinnedSplit> {
    let reduced = subsample_train(orig, new_count, seed)?;
    Ok(PinnedSplit {
        split: reduced,
        test_ids: orig.test_ids(),
    })
}

impl PinnedSplit {
    pub fn train_rows(&self) -> Vec<ExampleRow> {
        self.split.train_rows()
    }

    pub fn test_rows(&self) -> Vec<ExampleRow> {
        let full = build_full_dataset(&self.split.task);
        self.test_ids.iter().map(|&i| full[i]).collect()
    }
}

/// Replace train labels with i.i.d. uniform draws from [0, P), recording the
/// seed in `label_mode`. Test labels are untouched.
pub fn randomize_labels(split: &DataSplit, seed: u64) -> DataSplit {
    DataSplit {
        label_mode: LabelMode::Randomized { seed },
        ..split.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn add113() -> TaskSpec {
        TaskSpec::new(113, OpKind::Addition).unwrap()
    }

    #[test]
    fn full_dataset_shape_and_labels() {
        let task = add113();
        let rows = build_full_dataset(&task);
        assert_eq!(rows.len(), 12769);
        assert_eq!(task.vocab_size(), 115);
        let row = |x: u32, y: u32| rows[(x as usize) * 113 + y as usize];
        assert_eq!(row(1, 1).label, 2);
        assert_eq!(row(112, 112).label, 111); // 224 mod 113
        assert_eq!(row(3, 5).tokens, [3, 113, 5, 114]);
    }

    #[test]
    fn all_ops_match_bruteforce() {
        for op in [
            OpKind::Addition,
            OpKind::Subtraction,
            OpKind::Multiplication,
            OpKind::SumOfSquares,
        ] {
            let task = TaskSpec::new(23, op).unwrap();
            for row in build_full_dataset(&task) {
                let (x, y) = (row.tokens[0] as i64, row.tokens[2] as i64);
                let expect = match op {
                    OpKind::Addition => (x + y).rem_euclid(23),
                    OpKind::Subtraction => (x - y).rem_euclid(23),
                    OpKind::Multiplication => (x * y).rem_euclid(23),
                    OpKind::SumOfSquares => (x * x + y * y).rem_euclid(23),
                };
                assert_eq!(row.label as i64, expect);
            }
        }
    }

    #[test]
    fn split_full_grid_leaves_empty_test() {
        let task = add113();
        let s = split(&task, task.grid_size(), 1).unwrap();
        assert!(s.test_ids().is_empty());
    }

    #[test]
    fn split_is_deterministic_and_seed_sensitive() {
        let task = add113();
        let a = split(&task, 3831, 42).unwrap();
        let b = split(&task, 3831, 42).unwrap();
        let c = split(&task, 3831, 43).unwrap();
        assert_eq!(a.train_ids, b.train_ids);
        let inter = a
            .train_ids
            .iter()
            .filter(|i| c.train_ids.binary_search(i).is_ok())
            .count();
        let union = a.train_ids.len() + c.train_ids.len() - inter;
        let jaccard = inter as f64 / union as f64;
        assert!(jaccard < 0.95, "jaccard {jaccard}");
    }

    #[test]
    fn subsample_identity_and_membership() {
        let task = add113();
        let base = split(&task, 3831, 7).unwrap();
        let same = subsample_train(&base, 3831, 9).unwrap();
        assert_eq!(same.train_ids, base.train_ids);
        let full = split(&task, task.grid_size(), 7).unwrap();
        let sub = subsample_train_pinned(&full, 390, 3).unwrap();
        assert_eq!(sub.split.train_ids.len(), 390);
        assert!(sub
            .split
            .train_ids
            .iter()
            .all(|i| full.train_ids.binary_search(i).is_ok()));
        // pinned test set is the original (empty here)
        assert!(sub.test_ids.is_empty());
    }

    #[test]
    fn subsample_preserves_original_test_set() {
        let task = add113();
        let base = split(&task, 3831, 7).unwrap();
        let sub = subsample_train_pinned(&base, 500, 3).unwrap();
        assert_eq!(sub.test_ids, base.test_ids());
    }

    #[test]
    fn randomized_labels_are_roughly_uniform() {
        let task = add113();
        let base = split(&task, task.grid_size(), 1).unwrap();
        let rnd = randomize_labels(&base, 99);
        let rows = rnd.train_rows();
        assert_eq!(rows.len(), 12769);
        // agreement with true labels should be near 1/113
        let full = build_full_dataset(&task);
        let agree = rows
            .iter()
            .zip(&full)
            .filter(|(a, b)| a.label == b.label)
            .count() as f64
            / rows.len() as f64;
        assert!(agree < 0.03, "agreement {agree}");
        // every class count within 5 sigma of the binomial mean
        let mut counts = vec![0usize; 113];
        for r in &rows {
            counts[r.label as usize] += 1;
        }
        let n = 12769.0f64;
        let p = 1.0 / 113.0;
        let mean = n * p;
        let sigma = (n * p * (1.0 - p)).sqrt();
        for (c, &cnt) in counts.iter().enumerate() {
            assert!(
                (cnt as f64 - mean).abs() < 5.0 * sigma,
                "class {c} count {cnt}"
            );
        }
        // determinism
        let again = randomize_labels(&base, 99).train_rows();
        assert_eq!(rows, again);
    }

    #[test]
    fn json_round_trip_reconstructs_complement() {
        let task = add113();
        let s = split(&task, 1000, 5).unwrap();
        let json = s.to_json().unwrap();
        let back = DataSplit::from_json(&json).unwrap();
        assert_eq!(back.train_ids, s.train_ids);
        assert_eq!(back.test_ids().len(), 12769 - 1000);
    }

    proptest! {
        #[test]
        fn train_and_test_partition_the_grid(
            count in 0usize..529,
            seed in 0u64..1000,
        ) {
            let task = TaskSpec::new(23, OpKind::Addition).unwrap();
            let s = split(&task, count, seed).unwrap();
            let test = s.test_ids();
            prop_assert_eq!(s.train_ids.len() + test.len(), 529);
            let mut all: Vec<usize> = s.train_ids.iter().chain(test.iter()).cloned().collect();
            all.sort_unstable();
            prop_assert!(all.windows(2).all(|w| w[0] < w[1]));
        }

        #[test]
        fn subsample_is_subset(count in 1usize..300, seed in 0u64..100) {
            let task = TaskSpec::new(23, OpKind::Addition).unwrap();
            let base = split(&task, 300, 17).unwrap();
            let sub = subsample_train(&base, count, seed).unwrap();
            prop_assert!(sub.train_ids.iter().all(|i| base.train_ids.binary_search(i).is_ok()));
            prop_assert_eq!(sub.train_ids.len(), count);
        }
    }
}
