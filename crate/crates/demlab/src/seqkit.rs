//! Sequential and Bayesian monitors: Wald's SPRT, the two-sample mixture SPRT with an
//! always-valid p-value, a Bayes-factor test on the standardised effect, checkpoint replay
//! and naive cross-experiment hyperparameter estimates.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, invalid, Error, Result};
use crate::testkit::{welch_t_test, Alternative, SampleSummary, TReference};

/// Decision after a sequential update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SprtDecision {
    AcceptH1,
    AcceptH0,
    Continue,
}

/// Wald's sequential probability ratio test on a cumulative log-likelihood ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SprtState {
    pub alpha: f64,
    pub beta: f64,
    /// Cumulative log-likelihood ratio, starting at 0.
    pub llr: f64,
    pub steps: u64,
}

impl SprtState {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        ensure(alpha > 0.0 && alpha < 1.0, || {
            format!("alpha must lie in (0, 1), got {alpha}")
        })?;
        ensure(beta > 0.0 && beta < 1.0, || {
            format!("beta must lie in (0, 1), got {beta}")
        })?;
        ensure(alpha + beta < 1.0, || "alpha + beta must be below 1".into())?;
        Ok(Self {
            alpha,
            beta,
            llr: 0.0,
            steps: 0,
        })
    }

    /// `log((1-β)/α)`.
    pub fn upper(&self) -> f64 {
        ((1.0 - self.beta) / self.alpha).ln()
    }

    /// `log(β/(1-α))`.
    pub fn lower(&self) -> f64 {
        (self.beta / (1.0 - self.alpha)).ln()
    }

    pub fn decision(&self) -> SprtDecision {
        if self.llr >= self.upper() {
            SprtDecision::AcceptH1
        } else if self.llr <= self.lower() {
            SprtDecision::AcceptH0
        } else {
            SprtDecision::Continue
        }
    }

    /// Adds one observation's log-likelihood ratio and returns the decision.
    pub fn step(&mut self, increment: f64) -> Result<SprtDecision> {
        if !increment.is_finite() {
            return invalid(format!(
                "log-likelihood increment must be finite, got {increment}"
            ));
        }
        self.llr += increment;
        self.steps += 1;
        Ok(self.decision())
    }
}

/// Log-likelihood ratio of one normal observation for `H1: μ = mu1` against `H0: μ = mu0`.
pub fn normal_llr_increment(x: f64, mu0: f64, mu1: f64, variance: f64) -> f64 {
    ((x - mu0).powi(2) - (x - mu1).powi(2)) / (2.0 * variance)
}

/// Two-sample mixture SPRT with a normal mixing distribution of variance `tau2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MsprtState {
    pub n: u64,
    /// Current mixture likelihood ratio `Λ̃`.
    pub lambda: f64,
    pub log_lambda: f64,
    /// Running minimum of `1/Λ̃`, capped at 1.
    pub p_running: f64,
    pub tau2: f64,
    pub theta0: f64,
    /// `σ²_X + σ²_Y`.
    pub var_sum: f64,
    pub alpha: f64,
}

impl MsprtState {
    pub fn new(tau2: f64, theta0: f64, var_sum: f64, alpha: f64) -> Result<Self> {
        check_msprt(tau2, var_sum)?;
        ensure(alpha > 0.0 && alpha < 1.0, || {
            format!("alpha must lie in (0, 1), got {alpha}")
        })?;
        ensure(theta0.is_finite(), || "theta0 must be finite".into())?;
        Ok(Self {
            n: 0,
            lambda: 1.0,
            log_lambda: 0.0,
            p_running: 1.0,
            tau2,
            theta0,
            var_sum,
            alpha,
        })
    }

    pub fn rejected(&self) -> bool {
        self.p_running < self.alpha
    }

    /// Updates with the running means of the first `n` pairs.
    pub fn update(&mut self, mean_a: f64, mean_b: f64, n: u64) -> Result<()> {
        self.update_with(mean_a, mean_b, n, self.var_sum, self.tau2)
    }

    /// Updates with plug-in variance sum and mixing variance for this step.
    pub fn update_with(
        &mut self,
        mean_a: f64,
        mean_b: f64,
        n: u64,
        var_sum: f64,
        tau2: f64,
    ) -> Result<()> {
        check_msprt(tau2, var_sum)?;
        if n < self.n {
            return invalid(format!(
                "mSPRT sample count went backwards from {} to {n}",
                self.n
            ));
        }
        ensure(mean_a.is_finite() && mean_b.is_finite(), || {
            "running means must be finite".into()
        })?;
        self.log_lambda = msprt_log_lambda(mean_b - mean_a - self.theta0, n as f64, var_sum, tau2);
        self.lambda = self.log_lambda.exp();
        self.p_running = self.p_running.min((-self.log_lambda).exp()).min(1.0);
        self.n = n;
        self.var_sum = var_sum;
        self.tau2 = tau2;
        Ok(())
    }
}

fn check_msprt(tau2: f64, var_sum: f64) -> Result<()> {
    ensure(tau2 > 0.0 && tau2.is_finite(), || {
        format!("tau2 must be positive, got {tau2}")
    })?;
    ensure(var_sum > 0.0 && var_sum.is_finite(), || {
        format!("variance sum must be positive, got {var_sum}")
    })
}

/// `log Λ̃` for centred mean difference `diff` after `n` pairs.
pub fn msprt_log_lambda(diff: f64, n: f64, var_sum: f64, tau2: f64) -> f64 {
    let inflated = var_sum + n * tau2;
    0.5 * (var_sum / inflated).ln() + n * n * tau2 * diff * diff / (2.0 * var_sum * inflated)
}

/// Terms of the Wald statistic decomposition `√W = (δ - Δ°)·√E`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaldDecomposition {
    /// `(Ȳ - X̄ - Δ) / √(s²_X/n + s²_Y/m)`.
    pub sqrt_w: f64,
    /// Standardised observed difference `δ`.
    pub delta: f64,
    /// Standardised hypothesised effect `Δ°`.
    pub delta_circ: f64,
    /// Effective sample size `1/(1/n + 1/m)`.
    pub effective_n: f64,
}

pub fn effective_sample_size(n: f64, m: f64) -> f64 {
    1.0 / (1.0 / n + 1.0 / m)
}

/// Decomposes the Wald statistic at unstandardised effect `effect`.
pub fn wald_decomposition(
    a: &SampleSummary,
    b: &SampleSummary,
    effect: f64,
) -> Result<WaldDecomposition> {
    ensure(a.count >= 2 && b.count >= 2, || {
        "Bayes test needs at least 2 observations per group".into()
    })?;
    let (n, m) = (a.count as f64, b.count as f64);
    let se2 = a.variance / n + b.variance / m;
    if se2 <= 0.0 {
        return Err(Error::Degenerate("both plug-in variances are zero".into()));
    }
    let e = effective_sample_size(n, m);
    let scale = (se2 * e).sqrt();
    Ok(WaldDecomposition {
        sqrt_w: (b.mean - a.mean - effect) / se2.sqrt(),
        delta: (b.mean - a.mean) / scale,
        delta_circ: effect / scale,
        effective_n: e,
    })
}

/// Bayes-factor monitor state after observing `n` and `m` samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BayesState {
    pub n: u64,
    pub m: u64,
    pub delta: f64,
    pub effective_n: f64,
    pub v2: f64,
    pub prior_h0: f64,
    pub bf10: f64,
    pub log_bf10: f64,
    pub posterior_h0: f64,
}

fn ln_normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * ((x - mean).powi(2) / var + (2.0 * std::f64::consts::PI * var).ln())
}

/// `H0: Δ° = θ₀` against `H1: Δ° ~ N(θ₀, V²)` with a normal likelihood for `δ`.
pub fn bayes_update(
    a: &SampleSummary,
    b: &SampleSummary,
    theta0: f64,
    v2: f64,
    prior_h0: f64,
) -> Result<BayesState> {
    ensure(v2 >= 0.0 && v2.is_finite(), || {
        format!("V² must be non-negative, got {v2}")
    })?;
    ensure(prior_h0 > 0.0 && prior_h0 < 1.0, || {
        format!("prior on H0 must lie in (0, 1), got {prior_h0}")
    })?;
    let dec = wald_decomposition(a, b, 0.0)?;
    let inv_e = 1.0 / dec.effective_n;
    let log_bf10 =
        ln_normal_pdf(dec.delta, theta0, v2 + inv_e) - ln_normal_pdf(dec.delta, theta0, inv_e);
    // posterior log-odds of H1 against H0
    let log_odds = log_bf10 + ((1.0 - prior_h0) / prior_h0).ln();
    let posterior_h0 = if log_odds > 0.0 {
        let r = (-log_odds).exp();
        r / (1.0 + r)
    } else {
        1.0 / (1.0 + log_odds.exp())
    };
    Ok(BayesState {
        n: a.count,
        m: b.count,
        delta: dec.delta,
        effective_n: dec.effective_n,
        v2,
        prior_h0,
        bf10: log_bf10.exp(),
        log_bf10,
        posterior_h0,
    })
}

/// End-of-experiment statistics collected for hyperparameter estimation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentEnd {
    /// Standardised difference `δ` at the end of the experiment.
    pub delta: f64,
    /// Cohen's d at the end of the experiment.
    pub cohens_d: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Sample variance of the collected `δ`, the prior variance `V²`.
    pub v2_hat: f64,
    /// Sample variance of the collected Cohen's d; a test uses `τ² = scale · s²_X`.
    pub tau2_scale_hat: f64,
    /// Set when either estimate is zero.
    pub degenerate: bool,
}

pub fn estimate_hyperparams(ends: &[ExperimentEnd]) -> Result<Hyperparams> {
    ensure(ends.len() >= 2, || {
        format!("need at least 2 experiments, got {}", ends.len())
    })?;
    let var = |xs: &mut dyn Iterator<Item = f64>| {
        let v: Vec<f64> = xs.collect();
        if v.iter().all(|x| *x == v[0]) {
            return 0.0;
        }
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
    };
    let v2_hat = var(&mut ends.iter().map(|e| e.delta));
    let tau2_scale_hat = var(&mut ends.iter().map(|e| e.cohens_d));
    ensure(v2_hat.is_finite() && tau2_scale_hat.is_finite(), || {
        "experiment statistics must be finite".into()
    })?;
    let degenerate = v2_hat == 0.0 || tau2_scale_hat == 0.0;
    if degenerate {
        log::warn!(
            "hyperparameter estimate is zero; every experiment ended with the same statistic"
        );
    }
    Ok(Hyperparams {
        v2_hat,
        tau2_scale_hat,
        degenerate,
    })
}

/// Cumulative per-arm statistics at one checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub t: f64,
    pub n_a: u64,
    pub mean_a: f64,
    pub var_a: f64,
    pub n_b: u64,
    pub mean_b: f64,
    pub var_b: f64,
}

impl Checkpoint {
    fn summaries(&self) -> Result<(SampleSummary, SampleSummary)> {
        Ok((
            SampleSummary::new(self.n_a.max(1), self.mean_a, self.var_a)?,
            SampleSummary::new(self.n_b.max(1), self.mean_b, self.var_b)?,
        ))
    }
}

/// Checks that cumulative counts never decrease and every value is usable.
pub fn validate_series(series: &[Checkpoint]) -> Result<()> {
    for (i, c) in series.iter().enumerate() {
        let row = i + 1;
        let finite = [c.t, c.mean_a, c.var_a, c.mean_b, c.var_b]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::DataIntegrity {
                row,
                message: "non-finite value".into(),
            });
        }
        if c.var_a < 0.0 || c.var_b < 0.0 {
            return Err(Error::DataIntegrity {
                row,
                message: "negative variance".into(),
            });
        }
        if i > 0 {
            let p = &series[i - 1];
            if c.n_a < p.n_a || c.n_b < p.n_b {
                return Err(Error::DataIntegrity {
                    row,
                    message: format!(
                        "cumulative count decreased ({}, {}) -> ({}, {})",
                        p.n_a, p.n_b, c.n_a, c.n_b
                    ),
                });
            }
        }
    }
    Ok(())
}

/// Mixing variance used by the mSPRT monitor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tau2 {
    Fixed(f64),
    /// `τ² = scale · s²_A` with the running control-arm variance.
    Scaled(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Monitor {
    Msprt { tau2: Tau2 },
    Bayes { v2: f64, prior_h0: f64 },
    FixedT { reference: TReference },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayConfig {
    pub alpha: f64,
    pub theta0: f64,
    /// Per-checkpoint significance levels; overrides `alpha` when present.
    pub alpha_schedule: Option<Vec<f64>>,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            theta0: 0.0,
            alpha_schedule: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Reject,
    Continue,
    NotReject,
}

/// One replayed checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub n: u64,
    pub m: u64,
    /// `Λ̃`, BF₁₀ or the t statistic; absent while a group has fewer than two samples.
    pub statistic: Option<f64>,
    /// p-value (mSPRT running p, fixed-horizon p) or posterior probability of H0.
    pub p_or_posterior: f64,
    pub decision: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replay {
    pub points: Vec<TrajectoryPoint>,
    pub reject: bool,
}

/// Replays a cumulative checkpoint series through a monitor. Sequential monitors reject
/// at the first checkpoint crossing their level (Bayes: posterior of H0 below the level)
/// and stay rejected; the fixed-horizon test decides only at the final checkpoint.
pub fn replay(series: &[Checkpoint], monitor: Monitor, config: &ReplayConfig) -> Result<Replay> {
    ensure(!series.is_empty(), || "checkpoint series is empty".into())?;
    validate_series(series)?;
    let levels: Vec<f64> = match &config.alpha_schedule {
        Some(s) => {
            ensure(s.len() == series.len(), || {
                format!(
                    "alpha schedule has {} entries for {} checkpoints",
                    s.len(),
                    series.len()
                )
            })?;
            s.clone()
        }
        None => vec![config.alpha; series.len()],
    };
    ensure(levels.iter().all(|a| *a > 0.0 && *a < 1.0), || {
        "significance levels must lie in (0, 1)".into()
    })?;

    let mut points = Vec::with_capacity(series.len());
    let mut rejected = false;
    let mut msprt: Option<MsprtState> = None;
    let mut p_running = 1.0f64;
    let last = series.len() - 1;
    for (i, c) in series.iter().enumerate() {
        let level = levels[i];
        let usable = c.n_a >= 2 && c.n_b >= 2 && (c.var_a > 0.0 || c.var_b > 0.0);
        let (statistic, value) = if !usable {
            let carry = match monitor {
                Monitor::Bayes { prior_h0, .. } => points
                    .last()
                    .map_or(prior_h0, |p: &TrajectoryPoint| p.p_or_posterior),
                _ => p_running,
            };
            (None, carry)
        } else {
            let (a, b) = c.summaries()?;
            match monitor {
                Monitor::Msprt { tau2 } => {
                    let var_sum = c.var_a + c.var_b;
                    let t2 = match tau2 {
                        Tau2::Fixed(v) => v,
                        Tau2::Scaled(s) => s * c.var_a,
                    };
                    let state = match msprt.as_mut() {
                        Some(s) => s,
                        None => msprt.insert(MsprtState::new(t2, config.theta0, var_sum, level)?),
                    };
                    state.update_with(c.mean_a, c.mean_b, c.n_a.min(c.n_b), var_sum, t2)?;
                    p_running = state.p_running;
                    (Some(state.lambda), state.p_running)
                }
                Monitor::Bayes { v2, prior_h0 } => {
                    let s = bayes_update(&a, &b, config.theta0, v2, prior_h0)?;
                    (Some(s.bf10), s.posterior_h0)
                }
                Monitor::FixedT { reference } => {
                    let out = welch_t_test(
                        &a,
                        &b,
                        config.theta0,
                        Alternative::TwoSided,
                        level,
                        reference,
                    )?;
                    (Some(out.statistic), out.p_value.unwrap_or(1.0))
                }
            }
        };
        let decision = match monitor {
            Monitor::FixedT { .. } => {
                if i < last {
                    Verdict::Continue
                } else if statistic.is_some() && value < level {
                    Verdict::Reject
                } else {
                    Verdict::NotReject
                }
            }
            _ => {
                if rejected || (statistic.is_some() && value < level) {
                    rejected = true;
                    Verdict::Reject
                } else if i < last {
                    Verdict::Continue
                } else {
                    Verdict::NotReject
                }
            }
        };
        points.push(TrajectoryPoint {
            t: c.t,
            n: c.n_a,
            m: c.n_b,
            statistic,
            p_or_posterior: value,
            decision,
        });
    }
    let reject = points.last().is_some_and(|p| p.decision == Verdict::Reject);
    Ok(Replay { points, reject })
}

/// Agreement between a monitor and a reference test across experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub both_reject: u64,
    /// Monitor rejects, reference does not: a quasi Type I error of the monitor.
    pub monitor_only: u64,
    pub reference_only: u64,
    pub neither: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.both_reject + self.monitor_only + self.reference_only + self.neither
    }
}

/// Tabulates `(monitor rejects, reference rejects)` pairs.
pub fn confusion_matrix(pairs: impl IntoIterator<Item = (bool, bool)>) -> ConfusionMatrix {
    let mut cm = ConfusionMatrix::default();
    for (monitor, reference) in pairs {
        match (monitor, reference) {
            (true, true) => cm.both_reject += 1,
            (true, false) => cm.monitor_only += 1,
            (false, true) => cm.reference_only += 1,
            (false, false) => cm.neither += 1,
        }
    }
    cm
}

/// Replays each series under `monitor` and under the fixed-horizon t test and tabulates
/// the final verdicts.
pub fn compare_with_fixed_t(
    series: &[Vec<Checkpoint>],
    monitor: Monitor,
    config: &ReplayConfig,
) -> Result<ConfusionMatrix> {
    let fixed = Monitor::FixedT {
        reference: TReference::Practical,
    };
    let mut pairs = Vec::with_capacity(series.len());
    for s in series {
        pairs.push((
            replay(s, monitor, config)?.reject,
            replay(s, fixed, config)?.reject,
        ));
    }
    Ok(confusion_matrix(pairs))
}
