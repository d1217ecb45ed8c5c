//! Numerical verification of the two allocation results:
//!
//! * scaling all logits of a perfect-accuracy classifier by c > 1 strictly
//!   decreases its softmax cross-entropy;
//! * the weight vector minimizing train loss plus a generalized p-norm
//!   weight-decay penalty over n identical-logit circuits is winner-take-all
//!   when k >= p and proportional to pi_i^(-pk/(p-k)) when k < p.
//!
//! The closed forms are checked against an independent projected-gradient
//! minimizer of the effective loss.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{ln_add_exp, ln_sum_exp, Real};

/// Dense per-example logits with one true label per example.
#[derive(Debug, Clone)]
pub struct LogitTable<T> {
    pub n_labels: usize,
    /// Row-major: logits[example * n_labels + label].
    pub logits: Vec<T>,
    pub true_labels: Vec<usize>,
}

impl<T: Real> LogitTable<T> {
    pub fn new(n_labels: usize, logits: Vec<T>, true_labels: Vec<usize>) -> Result<Self> {
        if n_labels == 0 || logits.len() != n_labels * true_labels.len() {
            return Err(Error::InvalidConfig("logit table shape mismatch".into()));
        }
        if true_labels.iter().any(|&l| l >= n_labels) {
            return Err(Error::InvalidConfig("true label out of range".into()));
        }
        if logits.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidConfig("non-finite logit".into()));
        }
        Ok(LogitTable {
            n_labels,
            logits,
            true_labels,
        })
    }

    pub fn n_examples(&self) -> usize {
        self.true_labels.len()
    }

    fn row(&self, i: usize) -> &[T] {
        &self.logits[i * self.n_labels..(i + 1) * self.n_labels]
    }

    /// True iff the true-label logit strictly exceeds every other logit on
    /// every example.
    pub fn has_perfect_accuracy(&self) -> bool {
        (0..self.n_examples()).all(|i| {
            let row = self.row(i);
            let t = self.true_labels[i];
            row.iter()
                .enumerate()
                .all(|(j, &z)| j == t || z < row[t])
        })
    }
}

/// Mean softmax cross-entropy of the table with all logits scaled by `c`.
pub fn scaled_xent<T: Real>(table: &LogitTable<T>, c: T) -> T {
    let n = table.n_examples();
    let mut total = T::zero();
    for i in 0..n {
        let scaled: Vec<T> = table.row(i).iter().map(|&z| c * z).collect();
        total += ln_sum_exp(&scaled) - scaled[table.true_labels[i]];
    }
    total / T::of(n as f64)
}

/// Checks the logit-scaling monotonicity claim: requires a perfect-accuracy
/// table and c > 1, and returns whether scaling strictly decreased the loss.
pub fn check_scaling_theorem<T: Real>(table: &LogitTable<T>, c: T) -> Result<bool> {
    if !table.has_perfect_accuracy() {
        return Err(Error::Precondition(
            "table does not have perfect accuracy".into(),
        ));
    }
    if !(c > T::one()) {
        return Err(Error::Precondition("scale factor must exceed 1".into()));
    }
    Ok(scaled_xent(table, c) < scaled_xent(table, T::one()))
}

/// n circuits with identical logits, parameter norms `pis`, weight-decay
/// norm exponent `p_norm`, scaling exponent `k`, coefficient `lambda`, and a
/// q-label cross-entropy instantiation of the train loss.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AllocationProblem<T> {
    pub pis: Vec<T>,
    pub p_norm: T,
    pub k: T,
    pub lambda: T,
    pub q: u32,
}

impl<T: Real> AllocationProblem<T> {
    pub fn validate(&self) -> Result<()> {
        if self.pis.is_empty() || self.pis.iter().any(|&p| !(p > T::zero())) {
            return Err(Error::InvalidConfig("need n >= 1 circuits, all pi > 0".into()));
        }
        if !(self.p_norm > T::zero()) || !(self.k > T::zero()) || !(self.lambda > T::zero()) {
            return Err(Error::InvalidConfig("p, k, lambda must be > 0".into()));
        }
        if self.q < 2 {
            return Err(Error::InvalidConfig("q must be >= 2".into()));
        }
        Ok(())
    }

    /// Train loss as a function of the summed weight: cross-entropy of one
    /// correct logit against (q-1) zero logits.
    pub fn train_loss(&self, total_weight: T) -> T {
        let ln_q1 = T::of((self.q - 1) as f64).ln();
        ln_add_exp(ln_q1, total_weight) - total_weight
    }

    fn dtrain_loss(&self, total_weight: T) -> T {
        let ln_q1 = T::of((self.q - 1) as f64).ln();
        -((ln_q1 - ln_add_exp(ln_q1, total_weight)).exp())
    }

    /// Effective loss L_train(sum w) + (lambda/p) * sum (w_i^(1/k) pi_i)^p.
    pub fn loss(&self, weights: &[T]) -> T {
        let total: T = weights.iter().cloned().sum();
        let pk = self.p_norm / self.k;
        let wd: T = weights
            .iter()
            .zip(&self.pis)
            .map(|(&w, &pi)| w.max(T::zero()).powf(pk) * pi.powf(self.p_norm))
            .sum();
        self.train_loss(total) + self.lambda / self.p_norm * wd
    }

    fn grad(&self, weights: &[T]) -> Vec<T> {
        let total: T = weights.iter().cloned().sum();
        let dtrain = self.dtrain_loss(total);
        let pk = self.p_norm / self.k;
        weights
            .iter()
            .zip(&self.pis)
            .map(|(&w, &pi)| {
                let wd = if w > T::zero() {
                    self.lambda / self.k * pi.powf(self.p_norm) * w.powf(pk - T::one())
                } else if pk > T::one() {
                    T::zero()
                } else if pk == T::one() {
                    self.lambda / self.k * pi.powf(self.p_norm)
                } else {
                    // infinitely steep penalty at w = 0: any descent step
                    // projects straight back onto the boundary
                    T::infinity()
                };
                dtrain + wd
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    WinnerTakeAll,
    Mixture,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Regime::WinnerTakeAll => write!(f, "winner-take-all"),
            Regime::Mixture => write!(f, "mixture"),
        }
    }
}

/// Optimal weight proportions (normalized to sum 1) and the regime tag.
///
/// k >= p: weight splits equally among the circuits of minimal pi, zero
/// elsewhere. k < p: w_i proportional to pi_i^(-pk/(p-k)).
pub fn optimal_weights_closed_form<T: Real>(prob: &AllocationProblem<T>) -> (Vec<T>, Regime) {
    let n = prob.pis.len();
    if prob.k >= prob.p_norm {
        let min_pi = prob.pis.iter().cloned().fold(T::infinity(), T::min);
        let tol = min_pi * T::of(1e-12);
        let winners: Vec<usize> = (0..n)
            .filter(|&i| prob.pis[i] <= min_pi + tol)
            .collect();
        let share = T::one() / T::of(winners.len() as f64);
        let mut w = vec![T::zero(); n];
        for i in winners {
            w[i] = share;
        }
        (w, Regime::WinnerTakeAll)
    } else {
        let expo = -(prob.p_norm * prob.k) / (prob.p_norm - prob.k);
        let raw: Vec<T> = prob.pis.iter().map(|&pi| pi.powf(expo)).collect();
        let total: T = raw.iter().cloned().sum();
        (raw.iter().map(|&r| r / total).collect(), Regime::Mixture)
    }
}

/// Outcome of the numeric minimization.
#[derive(Debug, Clone)]
pub struct AllocationSolution<T> {
    pub weights: Vec<T>,
    pub loss: T,
    pub converged: bool,
}

const PGD_MAX_ITERS: usize = 100_000;

/// Projected gradient descent with backtracking from one start.
fn pgd_from<T: Real>(prob: &AllocationProblem<T>, start: &[T]) -> AllocationSolution<T> {
    let mut w: Vec<T> = start.to_vec();
    let mut loss = prob.loss(&w);
    let mut step = T::of(1e-2);
    let mut converged = false;
    for _ in 0..PGD_MAX_ITERS {
        let g = prob.grad(&w);
        // candidate = project(w - step * g), halving the step until the loss drops
        let mut accepted = false;
        while step > T::of(1e-16) {
            let cand: Vec<T> = w
                .iter()
                .zip(&g)
                .map(|(&wi, &gi)| (wi - step * gi).max(T::zero()))
                .collect();
            let cand_loss = prob.loss(&cand);
            if cand_loss < loss {
                let moved = w
                    .iter()
                    .zip(&cand)
                    .map(|(&a, &b)| (a - b).abs())
                    .fold(T::zero(), T::max);
                w = cand;
                let drop = loss - cand_loss;
                loss = cand_loss;
                step = step * T::of(1.5);
                accepted = true;
                if moved < T::of(1e-13) && drop < T::of(1e-15) {
                    converged = true;
                }
                break;
            }
            step = step * T::of(0.5);
        }
        if !accepted || converged {
            converged = true;
            break;
        }
    }
    AllocationSolution {
        weights: w,
        loss,
        converged,
    }
}

/// Minimize the effective loss by projected gradient descent with multiple
/// restarts: 8 seeded random non-negative starts, the all-equal start, and
/// every one-hot start. Returns the best candidate found.
pub fn minimize_allocation_numeric<T: Real>(
    prob: &AllocationProblem<T>,
) -> Result<AllocationSolution<T>> {
    prob.validate()?;
    let n = prob.pis.len();
    let mut starts: Vec<Vec<T>> = Vec::new();
    // deterministic xorshift-style sequence for the random starts
    let mut seed = 0x9e3779b97f4a7c15u64;
    let mut next = || {
        seed ^= seed << 13;
        seed ^= seed >> 7;
        seed ^= seed << 17;
        T::of((seed >> 11) as f64 / (1u64 << 53) as f64 * 8.0)
    };
    for _ in 0..8 {
        starts.push((0..n).map(|_| next()).collect());
    }
    starts.push(vec![T::of(4.0) / T::of(n as f64); n]);
    for i in 0..n {
        let mut s = vec![T::zero(); n];
        s[i] = T::of(4.0);
        starts.push(s);
    }
    let mut best: Option<AllocationSolution<T>> = None;
    for s in &starts {
        let sol = pgd_from(prob, s);
        if best.as_ref().map_or(true, |b| sol.loss < b.loss) {
            best = Some(sol);
        }
    }
    Ok(best.expect("at least one start"))
}

/// Complete a proportions-only profile with the best overall scale by golden
/// section search, returning (scaled weights, loss).
pub fn line_search_scale<T: Real>(prob: &AllocationProblem<T>, profile: &[T]) -> (Vec<T>, T) {
    let f = |s: T| {
        let w: Vec<T> = profile.iter().map(|&u| s * u).collect();
        prob.loss(&w)
    };
    let (mut lo, mut hi) = (T::zero(), T::of(1000.0));
    let phi = T::of(0.618_033_988_749_894_9);
    for _ in 0..200 {
        let m1 = hi - phi * (hi - lo);
        let m2 = lo + phi * (hi - lo);
        if f(m1) < f(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let s = (lo + hi) / T::of(2.0);
    let w: Vec<T> = profile.iter().map(|&u| s * u).collect();
    let loss = prob.loss(&w);
    (w, loss)
}

/// One cell of the theorem-2 verification grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridRow {
    pub p: f64,
    pub k: f64,
    pub n: usize,
    pub pis: Vec<f64>,
    pub regime: String,
    pub max_profile_deviation: f64,
    pub converged: bool,
}

/// Compare the numeric minimizer's normalized profile against the closed
/// form for one problem.
pub fn verify_allocation<T: Real>(prob: &AllocationProblem<T>) -> Result<GridRow> {
    let (closed, regime) = optimal_weights_closed_form(prob);
    let numeric = minimize_allocation_numeric(prob)?;
    let total: T = numeric.weights.iter().cloned().sum();
    let deviation = if total > T::zero() {
        let norm: Vec<T> = numeric.weights.iter().map(|&w| w / total).collect();
        norm.iter()
            .zip(&closed)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max)
    } else {
        T::infinity()
    };
    Ok(GridRow {
        p: prob.p_norm.to_f64_lossy(),
        k: prob.k.to_f64_lossy(),
        n: prob.pis.len(),
        pis: prob.pis.iter().map(|p| p.to_f64_lossy()).collect(),
        regime: regime.to_string(),
        max_profile_deviation: deviation.to_f64_lossy(),
        converged: numeric.converged,
    })
}

pub fn write_grid_csv<W: Write>(rows: &[GridRow], mut w: W) -> Result<()> {
    writeln!(w, "p,k,n,pis,regime,max_profile_deviation,converged")?;
    for r in rows {
        let pis = r
            .pis
            .iter()
            .map(|p| format!("{p}"))
            .collect::<Vec<_>>()
            .join(";");
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.p, r.k, r.n, pis, r.regime, r.max_profile_deviation, r.converged
        )?;
    }
    Ok(())
}
