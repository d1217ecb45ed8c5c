//! Two-circuit competition model: a generalizing circuit (Gen) and a
//! memorizing circuit (Mem), each scaled by the product of two subweights,
//! trained by plain gradient descent on cross-entropy plus weight decay.
//!
//! Losses (q = number of labels, w_c = w_c1 * w_c2):
//!
//! ```text
//! L_train = -log( e^{w_g + w_m} / ((q-1) + e^{w_g + w_m}) ) + lambda * L_WD
//! L_test  = -log( e^{w_g}       / ((q-2) + e^{w_g} + e^{w_m}) ) + lambda * L_WD
//! L_WD    = w_g^{2/k} * pi_g^2 + w_m^{2/k} * pi_m^2
//! ```
//!
//! pi_c is the parameter norm of the unit-weight circuit and k the exponent
//! relating a weight scale to its parameter-norm cost. Weight products are
//! clamped at zero from below inside the fractional power; with the shipped
//! presets all subweights stay non-negative throughout.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{ln_add_exp, ln_sum_exp, Real};
use crate::util::fmt_sig10;

/// Hyperparameters of the two-circuit simulation.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SimConfig<T> {
    /// Parameter norm of the unit-weight Gen circuit (> 0).
    pub pi_g: T,
    /// Parameter norm of the unit-weight Mem circuit (> 0).
    pub pi_m: T,
    /// Logit-vs-parameter scaling exponent (> 0).
    pub k: T,
    /// Weight-decay coefficient (>= 0).
    pub lambda: T,
    /// Number of labels (>= 2).
    pub q: u32,
    /// Gradient-descent learning rate (> 0).
    pub lr: T,
    pub w_g1_0: T,
    pub w_g2_0: T,
    pub w_m1_0: T,
    pub w_m2_0: T,
    /// Number of update steps.
    pub steps: u64,
}

/// The three hyperparameter presets behind the qualitative regimes:
/// (a) Gen slower but more efficient -> grokking; (b) Gen less efficient ->
/// no generalization; (c) equal learning speeds -> no delayed transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SimPreset {
    A,
    B,
    C,
}

impl std::str::FromStr for SimPreset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "a" | "A" => Ok(SimPreset::A),
            "b" | "B" => Ok(SimPreset::B),
            "c" | "C" => Ok(SimPreset::C),
            other => Err(Error::InvalidConfig(format!("unknown preset {other:?}"))),
        }
    }
}

impl<T: Real> SimConfig<T> {
    pub fn preset(which: SimPreset) -> Self {
        let base = SimConfig {
            pi_g: T::of(1.0),
            pi_m: T::of(2.0),
            k: T::of(1.2),
            lambda: T::of(0.005),
            q: 113,
            lr: T::of(0.01),
            w_g1_0: T::zero(),
            w_g2_0: T::of(0.005),
            w_m1_0: T::zero(),
            w_m2_0: T::of(1.0),
            steps: 50_000,
        };
        match which {
            SimPreset::A => base,
            SimPreset::B => SimConfig {
                pi_g: T::of(4.0),
                ..base
            },
            SimPreset::C => SimConfig {
                w_g2_0: T::of(1.0),
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = [
            (self.pi_g, "pi_g"),
            (self.pi_m, "pi_m"),
            (self.k, "k"),
            (self.lr, "lr"),
        ];
        for (v, name) in pos {
            if !(v > T::zero()) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be > 0")));
            }
        }
        if self.lambda < T::zero() || !self.lambda.is_finite() {
            return Err(Error::InvalidConfig("lambda must be >= 0".into()));
        }
        if self.q < 2 {
            return Err(Error::InvalidConfig("q must be >= 2".into()));
        }
        for (v, name) in [
            (self.w_g1_0, "w_g1_0"),
            (self.w_g2_0, "w_g2_0"),
            (self.w_m1_0, "w_m1_0"),
            (self.w_m2_0, "w_m2_0"),
        ] {
            if v < T::zero() || !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be >= 0")));
            }
        }
        Ok(())
    }

    pub fn initial_state(&self) -> SimState<T> {
        SimState {
            w_g1: self.w_g1_0,
            w_g2: self.w_g2_0,
            w_m1: self.w_m1_0,
            w_m2: self.w_m2_0,
            step: 0,
        }
    }
}

/// Current subweights and step index.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SimState<T> {
    pub w_g1: T,
    pub w_g2: T,
    pub w_m1: T,
    pub w_m2: T,
    pub step: u64,
}

impl<T: Real> SimState<T> {
    pub fn w_g(&self) -> T {
        self.w_g1 * self.w_g2
    }
    pub fn w_m(&self) -> T {
        self.w_m1 * self.w_m2
    }
}

/// max(w, 0)^(2/k); the clamp guards fractional powers of transiently
/// negative products in exploratory configs.
fn norm_pow<T: Real>(w: T, k: T) -> T {
    w.max(T::zero()).powf(T::of(2.0) / k)
}

/// Weight-decay loss ||g||^2 + ||m||^2 with ||c|| = w_c^(1/k) * pi_c.
/// The lambda factor is applied by the loss functions, not here.
pub fn sim_wd_loss<T: Real>(state: &SimState<T>, cfg: &SimConfig<T>) -> T {
    norm_pow(state.w_g(), cfg.k) * cfg.pi_g * cfg.pi_g
        + norm_pow(state.w_m(), cfg.k) * cfg.pi_m * cfg.pi_m
}

/// Train loss: cross-entropy of the combined logit against (q-1) zero logits
/// on wrong labels, plus lambda times the weight-decay loss.
pub fn sim_train_loss<T: Real>(state: &SimState<T>, cfg: &SimConfig<T>) -> T {
    let s = state.w_g() + state.w_m();
    let ln_q1 = T::of((cfg.q - 1) as f64).ln();
    let xent = ln_add_exp(ln_q1, s) - s;
    xent + cfg.lambda * sim_wd_loss(state, cfg)
}

/// Test loss: Gen's logit is correct, Mem's logit sits on one wrong label,
/// the remaining (q-2) labels have zero logit.
pub fn sim_test_loss<T: Real>(state: &SimState<T>, cfg: &SimConfig<T>) -> T {
    let w_g = state.w_g();
    let w_m = state.w_m();
    let ln_q2 = if cfg.q == 2 {
        T::neg_infinity() // the constant term vanishes for q = 2
    } else {
        T::of((cfg.q - 2) as f64).ln()
    };
    let xent = ln_sum_exp(&[ln_q2, w_g, w_m]) - w_g;
    xent + cfg.lambda * sim_wd_loss(state, cfg)
}

/// Analytic partials of `sim_train_loss` with respect to the four subweights.
pub fn sim_train_grad<T: Real>(state: &SimState<T>, cfg: &SimConfig<T>) -> [T; 4] {
    let w_g = state.w_g();
    let w_m = state.w_m();
    let s = w_g + w_m;
    // d xent / d s = -(q-1) / ((q-1) + e^s), computed in log space
    let ln_q1 = T::of((cfg.q - 1) as f64).ln();
    let dxent_ds = -((ln_q1 - ln_add_exp(ln_q1, s)).exp());
    let e = T::of(2.0) / cfg.k;
    // d(w^{2/k})/dw, with the sub-zero clamp making the term vanish there
    let dwd = |w: T, pi: T| -> T {
        if w > T::zero() {
            cfg.lambda * e * w.powf(e - T::one()) * pi * pi
        } else {
            T::zero()
        }
    };
    let dl_dwg = dxent_ds + dwd(w_g, cfg.pi_g);
    let dl_dwm = dxent_ds + dwd(w_m, cfg.pi_m);
    [
        dl_dwg * state.w_g2, // d/d w_g1
        dl_dwg * state.w_g1, // d/d w_g2
        dl_dwm * state.w_m2, // d/d w_m1
        dl_dwm * state.w_m1, // d/d w_m2
    ]
}

/// One simultaneous gradient-descent update of all four subweights.
pub fn sim_grad_step<T: Real>(state: &SimState<T>, cfg: &SimConfig<T>) -> Result<SimState<T>> {
    let g = sim_train_grad(state, cfg);
    for (i, gi) in g.iter().enumerate() {
        if gi.is_nan() {
            let names = ["w_g1", "w_g2", "w_m1", "w_m2"];
            return Err(Error::Numerical(format!(
                "NaN gradient for subweight {} at step {}",
                names[i], state.step
            )));
        }
    }
    Ok(SimState {
        w_g1: state.w_g1 - cfg.lr * g[0],
        w_g2: state.w_g2 - cfg.lr * g[1],
        w_m1: state.w_m1 - cfg.lr * g[2],
        w_m2: state.w_m2 - cfg.lr * g[3],
        step: state.step + 1,
    })
}

/// One recorded step of a simulation.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SimRow {
    pub step: u64,
    pub l_train: f64,
    pub l_test: f64,
    /// Unweighted weight-decay loss ||g||^2 + ||m||^2.
    pub l_wd: f64,
    pub w_g: f64,
    pub w_m: f64,
    /// sqrt(l_wd): the Euclidean norm of the modelled parameters.
    pub param_norm: f64,
}

/// Recorded trace of a simulation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimTrace {
    pub rows: Vec<SimRow>,
    /// Set when a subweight exceeded the divergence bound and the trace was truncated.
    pub diverged: bool,
}

const DIVERGENCE_BOUND: f64 = 1e12;

fn record<T: Real>(state: &SimState<T>, cfg: &SimConfig<T>) -> SimRow {
    let l_wd = sim_wd_loss(state, cfg).to_f64_lossy();
    SimRow {
        step: state.step,
        l_train: sim_train_loss(state, cfg).to_f64_lossy(),
        l_test: sim_test_loss(state, cfg).to_f64_lossy(),
        l_wd,
        w_g: state.w_g().to_f64_lossy(),
        w_m: state.w_m().to_f64_lossy(),
        param_norm: l_wd.sqrt(),
    }
}

/// Run the simulation, recording step 0, every `record_every`-th step, and the
/// final step. Deterministic: the trace is a pure function of `cfg`.
pub fn simulate<T: Real>(cfg: &SimConfig<T>, record_every: u64) -> Result<SimTrace> {
    cfg.validate()?;
    if record_every == 0 {
        return Err(Error::InvalidConfig("record_every must be >= 1".into()));
    }
    let mut state = cfg.initial_state();
    let mut rows = vec![record(&state, cfg)];
    let mut diverged = false;
    for _ in 0..cfg.steps {
        state = sim_grad_step(&state, cfg)?;
        let bound = T::of(DIVERGENCE_BOUND);
        if [state.w_g1, state.w_g2, state.w_m1, state.w_m2]
            .iter()
            .any(|w| w.abs() > bound)
        {
            diverged = true;
            break;
        }
        if state.step % record_every == 0 || state.step == cfg.steps {
            rows.push(record(&state, cfg));
        }
    }
    if diverged && rows.last().map(|r| r.step) != Some(state.step) {
        rows.push(record(&state, cfg));
    }
    Ok(SimTrace { rows, diverged })
}

impl SimTrace {
    pub const CSV_HEADER: &'static str = "step,l_train,l_test,l_wd,w_g,w_m,param_norm";

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.step,
                fmt_sig10(r.l_train),
                fmt_sig10(r.l_test),
                fmt_sig10(r.l_wd),
                fmt_sig10(r.w_g),
                fmt_sig10(r.w_m),
                fmt_sig10(r.param_norm)
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table_a() -> SimConfig<f64> {
        SimConfig::preset(SimPreset::A)
    }

    fn state(w_g1: f64, w_g2: f64, w_m1: f64, w_m2: f64) -> SimState<f64> {
        SimState {
            w_g1,
            w_g2,
            w_m1,
            w_m2,
            step: 0,
        }
    }

    #[test]
    fn zero_weights_give_uniform_softmax() {
        let cfg = table_a();
        let s = state(0.0, 0.0, 0.0, 0.0);
        let expected = 113f64.ln(); // 4.727387818712341
        assert!((sim_train_loss(&s, &cfg) - expected).abs() < 1e-12);
        let mut cfg0 = cfg;
        cfg0.lambda = 0.0;
        assert!((sim_test_loss(&s, &cfg0) - expected).abs() < 1e-12);
    }

    #[test]
    fn table_a_step0_matches_zero_weight_value() {
        let cfg = table_a();
        let s = cfg.initial_state();
        // w_g1 = w_m1 = 0, so both products are zero
        assert!((sim_train_loss(&s, &cfg) - 113f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn train_loss_frozen_oracle_value() {
        // w_g=10, w_m=0, pi_g=1, k=1.2, lambda=0.005, q=113
        // 50-digit-arithmetic oracle: 0.2371513499146943
        let mut cfg = table_a();
        cfg.pi_g = 1.0;
        let s = state(10.0, 1.0, 0.0, 0.0);
        assert!((sim_train_loss(&s, &cfg) - 0.2371513499146943).abs() < 1e-13);
    }

    #[test]
    fn test_loss_frozen_oracle_value() {
        // w_g=0, w_m=5, q=113, lambda=0 -> log(112 + e^5)
        // 50-digit-arithmetic oracle: 5.562269443245687
        let mut cfg = table_a();
        cfg.lambda = 0.0;
        let s = state(0.0, 0.0, 5.0, 1.0);
        assert!((sim_test_loss(&s, &cfg) - 5.562269443245687).abs() < 1e-13);
    }

    #[test]
    fn test_xent_exceeds_train_xent_at_equal_weights() {
        let mut cfg = table_a();
        cfg.lambda = 0.0;
        for w in [0.5, 1.0, 3.0, 7.0] {
            let s = state(w, 1.0, w, 1.0);
            assert!(sim_test_loss(&s, &cfg) > sim_train_loss(&s, &cfg));
        }
    }

    #[test]
    fn wd_loss_values() {
        let cfg = table_a();
        assert_eq!(sim_wd_loss(&state(0.0, 0.0, 0.0, 0.0), &cfg), 0.0);
        // unit weights make the exponent irrelevant: 1*1 + 1*4 = 5
        for k in [0.7, 1.0, 1.2, 2.0, 3.0] {
            let mut c = cfg;
            c.k = k;
            assert!((sim_wd_loss(&state(1.0, 1.0, 1.0, 1.0), &c) - 5.0).abs() < 1e-12);
        }
        // w_g=4, pi_g=1, w_m=0, k=2 -> 4^1 * 1 = 4
        let mut c = cfg;
        c.k = 2.0;
        assert!((sim_wd_loss(&state(4.0, 1.0, 0.0, 0.0), &c) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn gradient_flows_to_first_subweight_only_at_zero() {
        let cfg = table_a();
        let s = state(0.0, 0.7, 0.0, 1.3);
        let g = sim_train_grad(&s, &cfg);
        // cross-entropy gradient carries the sibling subweight as a factor
        assert!(g[0] < 0.0 && g[2] < 0.0);
        assert_eq!(g[1], 0.0);
        assert_eq!(g[3], 0.0);
        let next = sim_grad_step(&s, &cfg).unwrap();
        assert!(next.w_g1 > 0.0 && next.w_m1 > 0.0);
        assert_eq!(next.w_g2, s.w_g2);
        assert_eq!(next.w_m2, s.w_m2);
    }

    fn finite_diff_grad(s: &SimState<f64>, cfg: &SimConfig<f64>) -> [f64; 4] {
        let h = 1e-6;
        let mut out = [0.0; 4];
        for i in 0..4 {
            let mut plus = *s;
            let mut minus = *s;
            fn field(st: &mut SimState<f64>, i: usize) -> &mut f64 {
                match i {
                    0 => &mut st.w_g1,
                    1 => &mut st.w_g2,
                    2 => &mut st.w_m1,
                    _ => &mut st.w_m2,
                }
            }
            *field(&mut plus, i) += h;
            *field(&mut minus, i) -= h;
            out[i] = (sim_train_loss(&plus, cfg) - sim_train_loss(&minus, cfg)) / (2.0 * h);
        }
        out
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(7);
        for _ in 0..100 {
            let cfg = SimConfig::<f64> {
                pi_g: rng.gen_range(0.5..3.0),
                pi_m: rng.gen_range(0.5..3.0),
                k: rng.gen_range(0.8..2.5),
                lambda: rng.gen_range(0.0..0.05),
                q: rng.gen_range(2..200),
                lr: 0.01,
                w_g1_0: 0.0,
                w_g2_0: 0.0,
                w_m1_0: 0.0,
                w_m2_0: 0.0,
                steps: 0,
            };
            // keep products well away from the w=0 kink
            let s = state(
                rng.gen_range(0.05..2.0),
                rng.gen_range(0.05..2.0),
                rng.gen_range(0.05..2.0),
                rng.gen_range(0.05..2.0),
            );
            let a = sim_train_grad(&s, &cfg);
            let n = finite_diff_grad(&s, &cfg);
            for i in 0..4 {
                let scale = n[i].abs().max(1e-8);
                assert!(
                    (a[i] - n[i]).abs() / scale < 1e-6,
                    "partial {i}: analytic {} vs fd {}",
                    a[i],
                    n[i]
                );
            }
        }
    }

    #[test]
    fn monotone_logit_loss_relation() {
        // lambda = 0, w_m = 0: train loss strictly decreasing in w_g
        let mut cfg = table_a();
        cfg.lambda = 0.0;
        let mut prev = f64::INFINITY;
        for i in 0..200 {
            let w = i as f64 * 0.1;
            let l = sim_train_loss(&state(w, 1.0, 0.0, 0.0), &cfg);
            assert!(l < prev);
            prev = l;
        }
    }

    #[test]
    fn loss_floor() {
        let cfg = table_a();
        for (wg, wm) in [(0.0, 0.0), (1.0, 2.0), (10.0, 0.3)] {
            let s = state(wg, 1.0, wm, 1.0);
            let l = sim_train_loss(&s, &cfg);
            let floor = cfg.lambda * sim_wd_loss(&s, &cfg);
            assert!(l >= floor && floor >= 0.0);
        }
    }

    #[test]
    fn simulate_is_deterministic() {
        let cfg = table_a();
        let a = simulate(&cfg, 10).unwrap();
        let b = simulate(&cfg, 10).unwrap();
        let mut ca = Vec::new();
        let mut cb = Vec::new();
        a.write_csv(&mut ca).unwrap();
        b.write_csv(&mut cb).unwrap();
        assert_eq!(ca, cb);
    }

    #[test]
    fn rows_strictly_increasing_in_step() {
        let cfg = table_a();
        let t = simulate(&cfg, 97).unwrap();
        assert!(t.rows.windows(2).all(|w| w[0].step < w[1].step));
        assert_eq!(t.rows.last().unwrap().step, cfg.steps);
        assert!(!t.diverged);
    }

    #[test]
    fn divergent_config_truncates_and_flags() {
        let mut cfg = table_a();
        cfg.lr = 1e9; // absurd learning rate blows up the subweights
        cfg.steps = 1000;
        let t = simulate(&cfg, 1).unwrap();
        assert!(t.diverged);
        assert!(t.rows.last().unwrap().step < cfg.steps);
    }

    // Qualitative regime checks on the three presets (quantitative versions
    // live in the acceptance suite).

    #[test]
    fn preset_a_shows_delayed_generalization() {
        let t = simulate(&SimConfig::<f64>::preset(SimPreset::A), 1).unwrap();
        let xent_train =
            |r: &SimRow| r.l_train - 0.005 * r.l_wd;
        let t_train = t
            .rows
            .iter()
            .position(|r| xent_train(r) < 0.1)
            .expect("train xent never fell below 0.1");
        let argmin_test = t
            .rows
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.l_test.partial_cmp(&b.1.l_test).unwrap())
            .unwrap()
            .0;
        assert!(
            argmin_test >= 10 * t_train,
            "argmin(l_test) at {argmin_test}, train xent < 0.1 at {t_train}"
        );
        // parameter norm falls from its peak as Gen replaces Mem
        let peak = t.rows.iter().map(|r| r.param_norm).fold(0.0, f64::max);
        assert!(t.rows.last().unwrap().param_norm < peak - 1.0);
    }

    #[test]
    fn preset_b_never_generalizes() {
        let t = simulate(&SimConfig::<f64>::preset(SimPreset::B), 1).unwrap();
        let early_plateau = t.rows[0].l_test;
        assert!(t.rows.iter().all(|r| r.l_test > early_plateau - 1e-9));
        assert!(t.rows.last().unwrap().l_test > 2.0);
        // Mem dominates Gen throughout
        assert!(t.rows.iter().all(|r| r.w_g <= r.w_m + 1e-12));
    }

    #[test]
    fn preset_c_has_no_delayed_transition() {
        let t = simulate(&SimConfig::<f64>::preset(SimPreset::C), 1).unwrap();
        // test loss descends immediately alongside train loss: by the time
        // train xent is low, test loss is already within 0.5 of its final value
        let xent_train = |r: &SimRow| r.l_train - 0.005 * r.l_wd;
        let t_train = t.rows.iter().position(|r| xent_train(r) < 0.1).unwrap();
        let final_test = t.rows.last().unwrap().l_test;
        let shortly_after = &t.rows[(t_train * 4).min(t.rows.len() - 1)];
        assert!(shortly_after.l_test < final_test + 0.5);
    }
}
