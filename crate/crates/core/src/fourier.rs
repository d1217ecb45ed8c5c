//! Trigonometric Fourier analysis of the full P^3 logit tensor.
//!
//! The generalizing modular-addition circuit writes its logits as linear
//! combinations of cos(w_k (a + b - c)) with w_k = 2 pi k / P, for
//! k = 1..K, K = ceil((P-1)/2). These K vectors are mutually orthogonal
//! over the (a, b, c) grid and each has squared norm P^3 / 2, so unit
//! vectors carry a sqrt(2/P^3) factor. Projecting a network's logit tensor
//! onto their span splits it into a "trig" component (the generalizing
//! signal) and a residual treated as memorization.
//!
//! Because cos(w_k (a + b - c)) depends only on the residue
//! r = (a + b - c) mod P, both the dot products and the reconstruction
//! reduce to per-residue sums: a single O(P^3) pass accumulates
//! S[r] = sum of Z over the residue class, and every coefficient then
//! costs O(P). Nothing of size K * P^3 is ever materialized.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dataset::{build_full_dataset, ExampleRow, TaskSpec};
use crate::error::{Error, Result};
use crate::model::{forward, Batch, ModelParams};
use crate::scalar::Real;
use crate::util::{fmt_sig10, spearman};

/// Dense logit tensor indexed (a, b, c), row-major, values in f64.
#[derive(Debug, Clone)]
pub struct LogitTensor {
    pub p: usize,
    pub values: Vec<f64>,
}

impl LogitTensor {
    pub fn new(p: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != p * p * p {
            return Err(Error::Precondition(format!(
                "logit tensor for P={} must have {} entries, got {}",
                p,
                p * p * p,
                values.len()
            )));
        }
        Ok(LogitTensor { p, values })
    }

    pub fn zeros(p: usize) -> Self {
        LogitTensor {
            p,
            values: vec![0.0; p * p * p],
        }
    }

    #[inline]
    pub fn idx(&self, a: usize, b: usize, c: usize) -> usize {
        (a * self.p + b) * self.p + c
    }

    pub fn get(&self, a: usize, b: usize, c: usize) -> f64 {
        self.values[self.idx(a, b, c)]
    }

    pub fn squared_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }
}

/// The trig basis for modulus P: frequencies k = 1..=K, K = ceil((P-1)/2).
#[derive(Debug, Clone, Copy)]
pub struct FourierBasis {
    pub p: usize,
    pub k_max: usize,
}

impl FourierBasis {
    pub fn new(p: usize) -> Self {
        FourierBasis {
            p,
            k_max: p / 2, // ceil((P-1)/2) for odd P, and P is an odd prime here
        }
    }

    /// Unit-norm basis vector for frequency k, materialized (P^3 entries).
    pub fn basis_vector(&self, k: usize) -> Vec<f64> {
        assert!(k >= 1 && k <= self.k_max);
        let p = self.p;
        let omega = 2.0 * PI * k as f64 / p as f64;
        let scale = (2.0 / (p * p * p) as f64).sqrt();
        // entry depends only on the residue (a + b - c) mod p
        let per_residue: Vec<f64> = (0..p).map(|r| scale * (omega * r as f64).cos()).collect();
        let mut out = vec![0.0; p * p * p];
        let mut i = 0;
        for a in 0..p {
            for b in 0..p {
                for c in 0..p {
                    let r = (a + b + p - c) % p;
                    out[i] = per_residue[r];
                    i += 1;
                }
            }
        }
        out
    }
}

/// Z split into its trig-subspace component and the residual.
#[derive(Debug, Clone)]
pub struct TrigDecomposition {
    pub p: usize,
    /// Z . Z_hat_k for k = 1..=K (index 0 holds k = 1).
    pub coefficients: Vec<f64>,
    pub trig: LogitTensor,
    pub mem: LogitTensor,
    pub trig_norm_fraction: f64,
}

/// Sum of Z over each residue class r = (a + b - c) mod P.
fn residue_sums(z: &LogitTensor) -> Vec<f64> {
    let p = z.p;
    let mut s = vec![0.0; p];
    let mut i = 0;
    for a in 0..p {
        for b in 0..p {
            let base = (a + b) % p;
            for c in 0..p {
                // r = (a + b - c) mod p
                let r = (base + p - c) % p;
                s[r] += z.values[i];
                i += 1;
            }
        }
    }
    s
}

/// Project Z onto the trig subspace; Z = trig + mem exactly.
pub fn project_trig(z: &LogitTensor, basis: &FourierBasis) -> Result<TrigDecomposition> {
    if z.p != basis.p {
        return Err(Error::Precondition(format!(
            "tensor modulus {} does not match basis modulus {}",
            z.p, basis.p
        )));
    }
    let p = z.p;
    let pf = p as f64;
    let scale = (2.0 / (pf * pf * pf)).sqrt();
    let s = residue_sums(z);

    let mut coefficients = Vec::with_capacity(basis.k_max);
    // per-residue value of the reconstructed trig component
    let mut recon = vec![0.0; p];
    for k in 1..=basis.k_max {
        let omega = 2.0 * PI * k as f64 / pf;
        let mut coeff = 0.0;
        for (r, &sr) in s.iter().enumerate() {
            coeff += sr * scale * (omega * r as f64).cos();
        }
        coefficients.push(coeff);
        for (r, v) in recon.iter_mut().enumerate() {
            *v += coeff * scale * (omega * r as f64).cos();
        }
    }

    let mut trig = LogitTensor::zeros(p);
    let mut mem = LogitTensor::zeros(p);
    let mut i = 0;
    for a in 0..p {
        for b in 0..p {
            let base = (a + b) % p;
            for c in 0..p {
                let r = (base + p - c) % p;
                trig.values[i] = recon[r];
                mem.values[i] = z.values[i] - recon[r];
                i += 1;
            }
        }
    }
    let total = z.squared_norm();
    let trig_sq: f64 = coefficients.iter().map(|c| c * c).sum();
    let trig_norm_fraction = if total > 0.0 { trig_sq / total } else { 0.0 };
    Ok(TrigDecomposition {
        p,
        coefficients,
        trig,
        mem,
        trig_norm_fraction,
    })
}

/// Mean over the example set of the entry (a, b, label).
pub fn correct_logit_mean(z: &LogitTensor, examples: &[ExampleRow]) -> f64 {
    if examples.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for e in examples {
        total += z.get(e.tokens[0] as usize, e.tokens[2] as usize, e.label as usize);
    }
    total / examples.len() as f64
}

/// Mean over the example set of (correct logit - max incorrect logit); a
/// supplementary calibration-insensitive readout.
pub fn correct_margin_mean(z: &LogitTensor, examples: &[ExampleRow]) -> f64 {
    if examples.is_empty() {
        return 0.0;
    }
    let p = z.p;
    let mut total = 0.0;
    for e in examples {
        let (a, b, label) = (e.tokens[0] as usize, e.tokens[2] as usize, e.label as usize);
        let row = &z.values[z.idx(a, b, 0)..z.idx(a, b, 0) + p];
        let mut max_other = f64::NEG_INFINITY;
        for (c, &v) in row.iter().enumerate() {
            if c != label && v > max_other {
                max_other = v;
            }
        }
        total += row[label] - max_other;
    }
    total / examples.len() as f64
}

/// True iff strictly more than `threshold` of the squared logit norm lies
/// in the trig subspace.
pub fn gen_only_filter(z: &LogitTensor, threshold: f64) -> Result<bool> {
    if !(0.0 < threshold && threshold < 1.0) {
        return Err(Error::Precondition(format!(
            "threshold must be in (0,1), got {threshold}"
        )));
    }
    let decomp = project_trig(z, &FourierBasis::new(z.p))?;
    Ok(decomp.trig_norm_fraction > threshold)
}

/// Smallest set of frequencies (greedy by descending squared coefficient)
/// whose cumulative share of the trig energy reaches `energy_fraction`;
/// returned sorted by k.
pub fn key_frequencies(decomp: &TrigDecomposition, energy_fraction: f64) -> Result<Vec<usize>> {
    if !(0.0 < energy_fraction && energy_fraction <= 1.0) {
        return Err(Error::Precondition(format!(
            "energy_fraction must be in (0,1], got {energy_fraction}"
        )));
    }
    let total: f64 = decomp.coefficients.iter().map(|c| c * c).sum();
    if total == 0.0 {
        return Ok(Vec::new());
    }
    let mut order: Vec<usize> = (0..decomp.coefficients.len()).collect();
    order.sort_by(|&i, &j| {
        let (a, b) = (decomp.coefficients[i].powi(2), decomp.coefficients[j].powi(2));
        b.partial_cmp(&a).unwrap().then(i.cmp(&j))
    });
    let mut keys = Vec::new();
    let mut acc = 0.0;
    for i in order {
        keys.push(i + 1); // frequencies are 1-based
        acc += decomp.coefficients[i].powi(2);
        if acc >= energy_fraction * total - 1e-12 {
            break;
        }
    }
    keys.sort_unstable();
    Ok(keys)
}

/// Forward the model on every (a, b) input and collect all P answer logits.
pub fn collect_logit_tensor<T: Real>(
    params: &ModelParams<T>,
    task: &TaskSpec,
) -> Result<LogitTensor> {
    let p = task.modulus as usize;
    if params.cfg.n_answer_classes != p {
        return Err(Error::Precondition(format!(
            "model has {} answer classes but task modulus is {}",
            params.cfg.n_answer_classes, p
        )));
    }
    let rows = build_full_dataset(task);
    let mut out = LogitTensor::zeros(p);
    let mut offset = 0usize;
    for chunk in rows.chunks(2048) {
        let batch = Batch::from_rows(chunk);
        let logits = forward(params, &batch)?;
        for (i, l) in logits.iter().enumerate() {
            out.values[offset + i] = l.to_f64_lossy();
        }
        offset += chunk.len() * p;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CircuitTag {
    GenOnly,
    MemOnly,
    Mixed,
}

impl std::fmt::Display for CircuitTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CircuitTag::GenOnly => write!(f, "gen-only"),
            CircuitTag::MemOnly => write!(f, "mem-only"),
            CircuitTag::Mixed => write!(f, "mixed"),
        }
    }
}

/// One training run's efficiency data point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EfficiencyRecord {
    pub tag: CircuitTag,
    pub seed: u64,
    pub weight_decay: f64,
    pub dataset_size: usize,
    pub param_norm: f64,
    pub correct_logit_train: f64,
    pub correct_logit_test: f64,
    pub trig_fraction: f64,
}

pub const EFFICIENCY_CSV_HEADER: &str =
    "tag,seed,weight_decay,dataset_size,param_norm,correct_logit_train,correct_logit_test,trig_fraction";

pub fn write_efficiency_csv<W: Write>(records: &[EfficiencyRecord], mut w: W) -> Result<()> {
    writeln!(w, "{EFFICIENCY_CSV_HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.tag,
            r.seed,
            fmt_sig10(r.weight_decay),
            r.dataset_size,
            fmt_sig10(r.param_norm),
            fmt_sig10(r.correct_logit_train),
            fmt_sig10(r.correct_logit_test),
            fmt_sig10(r.trig_fraction),
        )?;
    }
    Ok(())
}

/// `k,coefficient` rows, preceded by a comment line carrying the trig
/// norm fraction.
pub fn write_decomposition_csv<W: Write>(decomp: &TrigDecomposition, mut w: W) -> Result<()> {
    writeln!(
        w,
        "# trig_norm_fraction={}",
        fmt_sig10(decomp.trig_norm_fraction)
    )?;
    writeln!(w, "k,coefficient")?;
    for (i, c) in decomp.coefficients.iter().enumerate() {
        writeln!(w, "{},{}", i + 1, fmt_sig10(*c))?;
    }
    Ok(())
}

/// One isologit bucket: records whose bucketing logit falls in [lo, hi)
/// (the global max is assigned to the last bucket), grouped by dataset
/// size with param norms averaged.
#[derive(Debug, Clone)]
pub struct IsologitBucket {
    pub lo: f64,
    pub hi: f64,
    /// (dataset_size, mean param_norm), sorted by dataset size.
    pub points: Vec<(usize, f64)>,
    /// Spearman rank correlation of dataset size vs mean param norm;
    /// None with fewer than 2 points.
    pub spearman: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct IsologitSummary {
    pub buckets: Vec<IsologitBucket>,
    /// Records dropped because their bucketing logit was not positive.
    pub excluded: usize,
}

/// Geometric bucketing of records by correct_logit_train; buckets are
/// left-closed/right-open with the maximum assigned to the last bucket.
pub fn isologit_buckets(records: &[EfficiencyRecord], n_buckets: usize) -> Result<IsologitSummary> {
    if n_buckets == 0 {
        return Err(Error::Precondition("need at least one bucket".into()));
    }
    let kept: Vec<&EfficiencyRecord> = records
        .iter()
        .filter(|r| r.correct_logit_train > 0.0)
        .collect();
    let excluded = records.len() - kept.len();
    if kept.is_empty() {
        return Ok(IsologitSummary {
            buckets: Vec::new(),
            excluded,
        });
    }
    let lo = kept
        .iter()
        .map(|r| r.correct_logit_train)
        .fold(f64::INFINITY, f64::min);
    let hi = kept
        .iter()
        .map(|r| r.correct_logit_train)
        .fold(f64::NEG_INFINITY, f64::max);
    // geometric edges: lo * ratio^i, i = 0..=n_buckets
    let ratio = if hi > lo {
        (hi / lo).powf(1.0 / n_buckets as f64)
    } else {
        1.0
    };
    let edges: Vec<f64> = (0..=n_buckets).map(|i| lo * ratio.powi(i as i32)).collect();

    let mut buckets = Vec::with_capacity(n_buckets);
    for i in 0..n_buckets {
        let (blo, bhi) = (edges[i], edges[i + 1]);
        let last = i == n_buckets - 1;
        let members: Vec<&&EfficiencyRecord> = kept
            .iter()
            .filter(|r| {
                let v = r.correct_logit_train;
                v >= blo && (v < bhi || (last && v <= bhi))
            })
            .collect();
        // group by dataset size, average param norms
        let mut sizes: Vec<usize> = members.iter().map(|r| r.dataset_size).collect();
        sizes.sort_unstable();
        sizes.dedup();
        let points: Vec<(usize, f64)> = sizes
            .iter()
            .map(|&d| {
                let of_d: Vec<f64> = members
                    .iter()
                    .filter(|r| r.dataset_size == d)
                    .map(|r| r.param_norm)
                    .collect();
                (d, of_d.iter().sum::<f64>() / of_d.len() as f64)
            })
            .collect();
        let xs: Vec<f64> = points.iter().map(|&(d, _)| d as f64).collect();
        let ys: Vec<f64> = points.iter().map(|&(_, n)| n).collect();
        buckets.push(IsologitBucket {
            lo: blo,
            hi: bhi,
            points,
            spearman: spearman(&xs, &ys),
        });
    }
    Ok(IsologitSummary { buckets, excluded })
}
