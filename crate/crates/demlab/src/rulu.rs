//! Ranking under lower uncertainty.
//!
//! `N` candidate propositions have true values `V_i`. An organisation ranks them by a noisy
//! estimate, `H_i = V_i + e1_i` today or `L_i = V_i + e2_i` once it can measure better, and
//! delivers the top `M`. `W1`/`W2` are the mean true value of the selection under each noise
//! level and `D = W2 - W1` is the value of the sharper estimate. The closed forms below use
//! Blom-type plotting positions for expected order statistics and David's first-order
//! expansions for their (co)variances; only the normal family admits them.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::distkit::{
    normal_cdf, normal_pdf, normal_quantile, normal_sf, owens_t, BetaParams, Probability,
};
use crate::error::{ensure, invalid, Error, Result};
use crate::simlab::{run_indexed, McRng};

/// Distribution family of the true values and the estimation noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValueFamily {
    Normal,
    /// Student t with `dof` degrees of freedom, rescaled to the stated variance.
    StudentT {
        dof: f64,
    },
}

impl ValueFamily {
    fn validate(&self) -> Result<()> {
        match *self {
            ValueFamily::Normal => Ok(()),
            ValueFamily::StudentT { dof } => ensure(dof > 2.0 && dof.is_finite(), || {
                format!("student t needs more than 2 degrees of freedom for a finite variance, got {dof}")
            }),
        }
    }
}

/// Which estimate the items are ranked by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseLevel {
    /// Current estimation noise, variance `var_noise_high`.
    High,
    /// Improved estimation noise, variance `var_noise_low`.
    Low,
}

pub const DEFAULT_QUANTILE_CORRECTION: f64 = 0.4;

/// Model parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuluParams {
    pub n_items: usize,
    pub capacity: usize,
    pub mean_value: f64,
    pub mean_noise: f64,
    pub var_value: f64,
    pub var_noise_high: f64,
    pub var_noise_low: f64,
    pub value_family: ValueFamily,
    /// Plotting-position constant `c` in `(r - c) / (N - 2c + 1)`.
    #[serde(default = "default_c")]
    pub quantile_correction: f64,
}

fn default_c() -> f64 {
    DEFAULT_QUANTILE_CORRECTION
}

impl RuluParams {
    /// Normal-family parameters with the default plotting constant.
    pub fn new(
        n_items: usize,
        capacity: usize,
        mean_value: f64,
        mean_noise: f64,
        var_value: f64,
        var_noise_high: f64,
        var_noise_low: f64,
    ) -> Result<Self> {
        let p = Self {
            n_items,
            capacity,
            mean_value,
            mean_noise,
            var_value,
            var_noise_high,
            var_noise_low,
            value_family: ValueFamily::Normal,
            quantile_correction: DEFAULT_QUANTILE_CORRECTION,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_family(mut self, family: ValueFamily) -> Result<Self> {
        self.value_family = family;
        self.validate()?;
        Ok(self)
    }

    pub fn with_quantile_correction(mut self, c: f64) -> Result<Self> {
        self.quantile_correction = c;
        self.validate()?;
        Ok(self)
    }

    /// Checks the parameter invariants. A zero value variance is accepted here (the sampler
    /// handles it) but rejected by the closed forms.
    pub fn validate(&self) -> Result<()> {
        ensure(self.n_items >= 1, || "need at least one item".into())?;
        ensure(self.capacity >= 1 && self.capacity <= self.n_items, || {
            format!(
                "capacity must lie in 1..={}, got {}",
                self.n_items, self.capacity
            )
        })?;
        ensure(
            self.mean_value.is_finite() && self.mean_noise.is_finite(),
            || "means must be finite".into(),
        )?;
        ensure(self.var_value >= 0.0 && self.var_value.is_finite(), || {
            format!(
                "value variance must be non-negative, got {}",
                self.var_value
            )
        })?;
        ensure(
            self.var_noise_high > 0.0 && self.var_noise_low > 0.0,
            || {
                format!(
                    "noise variances must be positive, got {} and {}",
                    self.var_noise_high, self.var_noise_low
                )
            },
        )?;
        ensure(self.var_noise_high.is_finite(), || {
            "noise variance must be finite".into()
        })?;
        ensure(self.var_noise_low <= self.var_noise_high, || {
            format!(
                "the improved noise variance {} exceeds the current one {}",
                self.var_noise_low, self.var_noise_high
            )
        })?;
        let c = self.quantile_correction;
        ensure(
            c.is_finite() && c < 1.0 && c > -(self.n_items as f64),
            || format!("quantile correction must keep plotting positions inside (0, 1), got {c}"),
        )?;
        self.value_family.validate()
    }

    pub fn noise_var(&self, level: NoiseLevel) -> f64 {
        match level {
            NoiseLevel::High => self.var_noise_high,
            NoiseLevel::Low => self.var_noise_low,
        }
    }

    /// Top ranks `N - M + 1 ..= N` (rank `N` is the largest estimate).
    pub fn selected_ranks(&self) -> std::ops::RangeInclusive<usize> {
        self.n_items - self.capacity + 1..=self.n_items
    }

    fn closed_form(&self) -> Result<()> {
        self.validate()?;
        if let ValueFamily::StudentT { .. } = self.value_family {
            return invalid("closed forms exist only for the normal family; use simulate() for student t values");
        }
        if self.var_value == 0.0 {
            return Err(Error::Degenerate(
                "value variance is zero, so estimates carry no ranking information".into(),
            ));
        }
        Ok(())
    }

    fn check_rank(&self, r: usize) -> Result<()> {
        ensure(r >= 1 && r <= self.n_items, || {
            format!("rank {r} outside 1..={}", self.n_items)
        })
    }

    /// `Φ⁻¹((r - c) / (N - 2c + 1))`.
    fn plotting_quantile(&self, r: usize) -> Result<f64> {
        let c = self.quantile_correction;
        normal_quantile((r as f64 - c) / (self.n_items as f64 - 2.0 * c + 1.0))
    }

    /// `r (N - s + 1) / ((N + 1)² (N + 2))` for `r <= s`.
    fn david_factor(&self, r: usize, s: usize) -> f64 {
        let (r, s) = (r.min(s) as f64, r.max(s) as f64);
        let n = self.n_items as f64;
        r * (n - s + 1.0) / ((n + 1.0) * (n + 1.0) * (n + 2.0))
    }

    /// Standard normal density at the `r / (N + 1)` quantile.
    fn density_at_rank(&self, r: usize) -> Result<f64> {
        Ok(normal_pdf(normal_quantile(
            r as f64 / (self.n_items as f64 + 1.0),
        )?))
    }

    /// Concomitant shrinkage `σ²_V / (σ²_V + σ²_ε)`.
    fn shrinkage(&self, level: NoiseLevel) -> f64 {
        self.var_value / (self.var_value + self.noise_var(level))
    }
}

/// Expected `r`-th smallest estimate `E(E_(r))` under the given noise level.
pub fn expected_order_stat(r: usize, params: &RuluParams, level: NoiseLevel) -> Result<f64> {
    params.closed_form()?;
    params.check_rank(r)?;
    let sd = (params.var_value + params.noise_var(level)).sqrt();
    Ok(params.mean_value + params.mean_noise + sd * params.plotting_quantile(r)?)
}

/// Expected true value of the item ranked `r`-th by the estimate.
pub fn expected_concomitant(r: usize, params: &RuluParams, level: NoiseLevel) -> Result<f64> {
    params.closed_form()?;
    params.check_rank(r)?;
    let scale = params.var_value / (params.var_value + params.noise_var(level)).sqrt();
    Ok(params.mean_value + scale * params.plotting_quantile(r)?)
}

/// `E(W)`: expected mean true value of the top `M` items.
pub fn expected_selected_value(params: &RuluParams, level: NoiseLevel) -> Result<f64> {
    params.closed_form()?;
    let mut sum = 0.0;
    for r in params.selected_ranks() {
        sum += params.plotting_quantile(r)?;
    }
    let scale = params.var_value / (params.var_value + params.noise_var(level)).sqrt();
    Ok(params.mean_value + scale * sum / params.capacity as f64)
}

/// `E(D) = E(W2) - E(W1)`.
pub fn expected_gain(params: &RuluParams) -> Result<f64> {
    Ok(expected_selected_value(params, NoiseLevel::Low)?
        - expected_selected_value(params, NoiseLevel::High)?)
}

/// Gain relative to the value the current process already adds over `μ_V`:
/// `√((σ²_V + σ²_1) / (σ²_V + σ²_2)) - 1`, independent of `N` and `M`.
pub fn relative_gain(params: &RuluParams) -> Result<f64> {
    params.closed_form()?;
    Ok(
        ((params.var_value + params.var_noise_high) / (params.var_value + params.var_noise_low))
            .sqrt()
            - 1.0,
    )
}

/// Approximate `Var(E_(r))` of the `r`-th order statistic of the estimates.
pub fn order_stat_var(r: usize, params: &RuluParams, level: NoiseLevel) -> Result<f64> {
    order_stat_cov(r, r, params, level)
}

/// Approximate `Cov(E_(r), E_(s))`; symmetric in `r` and `s`.
pub fn order_stat_cov(r: usize, s: usize, params: &RuluParams, level: NoiseLevel) -> Result<f64> {
    params.closed_form()?;
    params.check_rank(r)?;
    params.check_rank(s)?;
    let var = params.var_value + params.noise_var(level);
    Ok(params.david_factor(r, s) * var
        / (params.density_at_rank(r)? * params.density_at_rank(s)?))
}

/// `Var(V_I(r))` by the law of total variance.
pub fn concomitant_var(r: usize, params: &RuluParams, level: NoiseLevel) -> Result<f64> {
    let os = order_stat_var(r, params, level)?;
    let (v, e) = (params.var_value, params.noise_var(level));
    let rho2 = params.shrinkage(level);
    Ok(v * e / (v + e) + rho2 * rho2 * os)
}

/// `Cov(V_I(r), V_I(s))` between concomitants under one noise level.
pub fn concomitant_cov(r: usize, s: usize, params: &RuluParams, level: NoiseLevel) -> Result<f64> {
    if r == s {
        return concomitant_var(r, params, level);
    }
    let rho2 = params.shrinkage(level);
    Ok(rho2 * rho2 * order_stat_cov(r, s, params, level)?)
}

/// `Cov(H_(r), L_(s))` between order statistics of the two estimates.
pub fn cross_order_stat_cov(r: usize, s: usize, params: &RuluParams) -> Result<f64> {
    params.closed_form()?;
    params.check_rank(r)?;
    params.check_rank(s)?;
    let v = params.var_value;
    let rho = v / ((v + params.var_noise_high).sqrt() * (v + params.var_noise_low).sqrt());
    // 1 / f_V(F_V⁻¹(p)) = σ_V / φ(Φ⁻¹(p))
    Ok(rho * params.david_factor(r, s) * v
        / (params.density_at_rank(r)? * params.density_at_rank(s)?))
}

/// `Var(V)` for an item ranked `r`-th by `H` and `s`-th by `L`.
fn same_index_var(r: usize, s: usize, params: &RuluParams) -> Result<f64> {
    let (v, e1, e2) = (
        params.var_value,
        params.var_noise_high,
        params.var_noise_low,
    );
    let denom = v * e1 + v * e2 + e1 * e2;
    let w_l = v * e1 / denom;
    let w_h = v / (v + e1);
    Ok(v * e1 * e2 / denom
        + w_l * w_l * order_stat_var(s, params, NoiseLevel::Low)?
        + w_h * w_h * order_stat_var(r, params, NoiseLevel::High)?)
}

/// `Cov(V_I(r), V_J(s))` when the two ranks belong to different items.
fn different_index_cov(r: usize, s: usize, params: &RuluParams) -> Result<f64> {
    Ok(params.shrinkage(NoiseLevel::High)
        * params.shrinkage(NoiseLevel::Low)
        * cross_order_stat_cov(r, s, params)?)
}

/// Beta mixing distribution for the `L` rank of the item ranked `r`-th by `H`.
///
/// `L_I(r)` is standardised, the probability that another item's `L` falls below it is
/// `Φ(L*)`, and the beta is fitted by moments to that probability.
pub fn rank_coincidence_fit(r: usize, params: &RuluParams) -> Result<BetaParams> {
    params.closed_form()?;
    params.check_rank(r)?;
    let (v, e1, e2) = (
        params.var_value,
        params.var_noise_high,
        params.var_noise_low,
    );
    let shift = v / (v + e1).sqrt() * params.plotting_quantile(r)?;
    let var_l = e1 * v / (v + e1)
        + v * v / (v + e1) * params.david_factor(r, r) / params.density_at_rank(r)?.powi(2)
        + e2;
    let scale = v + e2;
    let mu = shift / scale.sqrt();
    let sigma2 = var_l / scale;
    let h = mu / (1.0 + sigma2).sqrt();
    let mean = normal_cdf(h);
    let var = normal_cdf(h) * normal_sf(h) - 2.0 * owens_t(h, 1.0 / (1.0 + 2.0 * sigma2).sqrt());
    BetaParams::from_moments(mean, var).map_err(|e| match e {
        Error::Degenerate(m) => Error::Degenerate(format!("rank {r}: {m}")),
        other => other,
    })
}

/// Beta-binomial pmf over `s = 1..=N` for the given fit, by the ratio recursion.
fn coincidence_row(n_items: usize, fit: BetaParams) -> Vec<f64> {
    let n = (n_items - 1) as f64;
    let (a, b) = (fit.alpha, fit.beta);
    let mut log_p = Vec::with_capacity(n_items);
    // ln P(K = 0) = ln B(a, b + n) - ln B(a, b)
    let mut lp = ln_beta(a, b + n) - ln_beta(a, b);
    log_p.push(lp);
    for k in 0..n_items - 1 {
        let k = k as f64;
        lp += ((n - k) * (k + a) / ((k + 1.0) * (n - k - 1.0 + b))).ln();
        log_p.push(lp);
    }
    let max = log_p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut row: Vec<f64> = log_p.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = row.iter().sum();
    row.iter_mut().for_each(|p| *p /= total);
    row
}

fn ln_beta(a: f64, b: f64) -> f64 {
    libm::lgamma(a) + libm::lgamma(b) - libm::lgamma(a + b)
}

/// `P(I(r) = J(s))`: probability that the `r`-th item by `H` is the `s`-th item by `L`.
pub fn rank_coincidence_prob(r: usize, s: usize, params: &RuluParams) -> Result<Probability> {
    params.check_rank(s)?;
    if params.n_items == 1 {
        params.closed_form()?;
        return Probability::new(1.0);
    }
    let fit = rank_coincidence_fit(r, params)?;
    Probability::clamped(coincidence_row(params.n_items, fit)[s - 1])
}

/// Row `r` of the fitted coincidence matrix, `P(I(r) = J(s))` for `s = 1..=N`.
pub fn rank_coincidence_row(r: usize, params: &RuluParams) -> Result<Vec<f64>> {
    if params.n_items == 1 {
        params.closed_form()?;
        return Ok(vec![1.0]);
    }
    Ok(coincidence_row(
        params.n_items,
        rank_coincidence_fit(r, params)?,
    ))
}

/// Full `N × N` coincidence matrix, balanced so rows and columns each sum to one.
///
/// The per-row beta-binomial fits sum to one along rows only; each rank of `L` is held
/// by exactly one item, so the columns are scaled in as well by Sinkhorn iteration.
pub fn rank_coincidence_matrix(params: &RuluParams) -> Result<Vec<Vec<f64>>> {
    let n = params.n_items;
    let mut m = (1..=n)
        .map(|r| rank_coincidence_row(r, params))
        .collect::<Result<Vec<_>>>()?;
    for _ in 0..10_000 {
        let mut worst = 0.0f64;
        for s in 0..n {
            let col: f64 = m.iter().map(|row| row[s]).sum();
            worst = worst.max((col - 1.0).abs());
            m.iter_mut().for_each(|row| row[s] /= col);
        }
        for row in m.iter_mut() {
            let total: f64 = row.iter().sum();
            worst = worst.max((total - 1.0).abs());
            row.iter_mut().for_each(|p| *p /= total);
        }
        if worst < 1e-13 {
            return Ok(m);
        }
    }
    Err(Error::Numerical(
        "coincidence matrix balancing did not converge".into(),
    ))
}

/// Theoretical moments of the selection value under both noise levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuluMoments {
    pub expected_w_high: f64,
    pub expected_w_low: f64,
    pub expected_gain: f64,
    pub var_w_high: f64,
    pub var_w_low: f64,
    pub cov_w: f64,
    pub var_gain: f64,
    /// Rows whose beta fit failed and that used the different-index branch only.
    pub degenerate_fits: usize,
}

/// `Var(W)` under one noise level.
pub fn selected_value_var(params: &RuluParams, level: NoiseLevel) -> Result<f64> {
    params.closed_form()?;
    let ranks: Vec<usize> = params.selected_ranks().collect();
    let dens = ranks
        .iter()
        .map(|&r| params.density_at_rank(r))
        .collect::<Result<Vec<_>>>()?;
    let (v, e) = (params.var_value, params.noise_var(level));
    let rho2 = params.shrinkage(level);
    let os_scale = rho2 * rho2 * (v + e);
    let mut total = 0.0;
    for (i, &r) in ranks.iter().enumerate() {
        total += v * e / (v + e) + os_scale * params.david_factor(r, r) / (dens[i] * dens[i]);
        for (j, &s) in ranks.iter().enumerate().skip(i + 1) {
            total += 2.0 * os_scale * params.david_factor(r, s) / (dens[i] * dens[j]);
        }
    }
    let m = params.capacity as f64;
    Ok(total / (m * m))
}

/// `Cov(V_I(r), V_J(s))`: same-index and different-index branches mixed by `weight`.
pub fn cross_concomitant_cov(r: usize, s: usize, params: &RuluParams, weight: f64) -> Result<f64> {
    Ok(
        weight * same_index_var(r, s, params)?
            + (1.0 - weight) * different_index_cov(r, s, params)?,
    )
}

/// Full set of first and second moments, including `Var(D)`.
pub fn gain_variance(params: &RuluParams) -> Result<RuluMoments> {
    params.closed_form()?;
    let expected_w_high = expected_selected_value(params, NoiseLevel::High)?;
    let expected_w_low = expected_selected_value(params, NoiseLevel::Low)?;
    let var_w_high = selected_value_var(params, NoiseLevel::High)?;
    let var_w_low = selected_value_var(params, NoiseLevel::Low)?;

    let n = params.n_items;
    let ranks: Vec<usize> = params.selected_ranks().collect();
    let dens = ranks
        .iter()
        .map(|&r| params.density_at_rank(r))
        .collect::<Result<Vec<_>>>()?;
    let (v, e1, e2) = (
        params.var_value,
        params.var_noise_high,
        params.var_noise_low,
    );
    let denom = v * e1 + v * e2 + e1 * e2;
    let (w_l, w_h) = (v * e1 / denom, v / (v + e1));
    // per-rank pieces of the same-index variance
    let same_h: Vec<f64> = ranks
        .iter()
        .zip(&dens)
        .map(|(&r, d)| {
            v * e1 * e2 / denom + w_h * w_h * params.david_factor(r, r) * (v + e1) / (d * d)
        })
        .collect();
    let same_l: Vec<f64> = ranks
        .iter()
        .zip(&dens)
        .map(|(&r, d)| w_l * w_l * params.david_factor(r, r) * (v + e2) / (d * d))
        .collect();
    let diff_scale = params.shrinkage(NoiseLevel::High) * params.shrinkage(NoiseLevel::Low) * v * v
        / ((v + e1).sqrt() * (v + e2).sqrt());

    let mut degenerate_fits = 0;
    let mut cov = 0.0;
    for (i, &r) in ranks.iter().enumerate() {
        let row = if n == 1 {
            vec![1.0]
        } else {
            match rank_coincidence_fit(r, params) {
                Ok(fit) => coincidence_row(n, fit),
                Err(Error::Degenerate(msg)) => {
                    log::warn!(
                        "coincidence fit failed ({msg}); using the different-index covariance"
                    );
                    degenerate_fits += 1;
                    vec![0.0; n]
                }
                Err(e) => return Err(e),
            }
        };
        for (j, &s) in ranks.iter().enumerate() {
            let p = row[s - 1];
            let diff = diff_scale * params.david_factor(r, s) / (dens[i] * dens[j]);
            cov += p * (same_h[i] + same_l[j]) + (1.0 - p) * diff;
        }
    }
    let m = params.capacity as f64;
    let cov_w = cov / (m * m);
    let var_gain = (var_w_high + var_w_low - 2.0 * cov_w).max(0.0);
    Ok(RuluMoments {
        expected_w_high,
        expected_w_low,
        expected_gain: expected_w_low - expected_w_high,
        var_w_high,
        var_w_low,
        cov_w,
        var_gain,
        degenerate_fits,
    })
}

/// `(E(D) - risk_free) / √Var(D)`.
pub fn sharpe_ratio(expected_gain: f64, var_gain: f64, risk_free: f64) -> Result<f64> {
    ensure(var_gain > 0.0 && var_gain.is_finite(), || {
        format!("gain variance must be positive, got {var_gain}")
    })?;
    Ok((expected_gain - risk_free) / var_gain.sqrt())
}

/// Sampler options.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    /// Overrides the parameters' value family when set.
    pub family: Option<ValueFamily>,
    /// Share of items whose improved estimate has the low noise; the rest keep the high one.
    pub partial_noise_fraction: f64,
    /// Ranks `(r, s)` whose order statistics and concomitants are recorded per run.
    pub track: Option<(usize, usize)>,
    /// Worker threads, 0 for the global pool.
    pub workers: usize,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            family: None,
            partial_noise_fraction: 1.0,
            track: None,
            workers: 0,
        }
    }
}

/// Order statistics and concomitants at the tracked ranks of one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackedDraw {
    /// `H_(r)`
    pub h_r: f64,
    /// `L_(s)`
    pub l_s: f64,
    /// `V_I(r)`
    pub v_ir: f64,
    /// `V_J(s)`
    pub v_js: f64,
    /// Whether the same item holds rank `r` under `H` and rank `s` under `L`.
    pub same_item: bool,
}

/// Per-run outputs of [`simulate`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RuluSamples {
    pub w_high: Vec<f64>,
    pub w_low: Vec<f64>,
    pub gain: Vec<f64>,
    pub tracked: Vec<TrackedDraw>,
}

struct RunOutput {
    w_high: f64,
    w_low: f64,
    tracked: Option<TrackedDraw>,
}

enum Sampler {
    Normal,
    T(StudentT<f64>, f64),
}

impl Sampler {
    fn new(family: ValueFamily) -> Result<Self> {
        family.validate()?;
        Ok(match family {
            ValueFamily::Normal => Sampler::Normal,
            ValueFamily::StudentT { dof } => {
                let t = StudentT::new(dof).map_err(|e| Error::InvalidInput(e.to_string()))?;
                Sampler::T(t, ((dof - 2.0) / dof).sqrt())
            }
        })
    }

    /// Unit-variance draw.
    fn draw(&self, rng: &mut McRng) -> f64 {
        match self {
            Sampler::Normal => StandardNormal.sample(rng),
            Sampler::T(t, scale) => scale * t.sample(rng),
        }
    }
}

/// Index of the rank-`r` item (1-based, ascending) after partially sorting `idx` by `key`.
fn select_rank(idx: &mut [u32], key: &[f64], r: usize) -> usize {
    let (_, item, _) =
        idx.select_nth_unstable_by(r - 1, |&a, &b| key[a as usize].total_cmp(&key[b as usize]));
    *item as usize
}

/// Mean of `value` over the `m` items with the largest `key`.
fn top_mean(idx: &mut [u32], key: &[f64], value: &[f64], m: usize) -> f64 {
    let n = idx.len();
    if m < n {
        idx.select_nth_unstable_by(n - m, |&a, &b| key[a as usize].total_cmp(&key[b as usize]));
    }
    idx[n - m..].iter().map(|&i| value[i as usize]).sum::<f64>() / m as f64
}

/// Monte Carlo draws of the generative model.
///
/// Each run draws the true values, ranks them by `H = V + e1` and records `W1`, then ranks
/// by `L = V + e2` and records `W2`. With a partial-noise fraction `p`, the first
/// `round(p N)` items get the low noise in `L` and the others keep the high noise. Student t
/// draws are rescaled by `√((ν - 2)/ν)` so value and noise keep the stated variances.
/// Output is fixed by `(seed, runs)` regardless of worker count.
pub fn simulate(
    params: &RuluParams,
    runs: usize,
    seed: u64,
    options: &SimOptions,
) -> Result<RuluSamples> {
    params.validate()?;
    ensure(runs >= 1, || "at least one run is required".into())?;
    let p = options.partial_noise_fraction;
    ensure((0.0..=1.0).contains(&p), || {
        format!("partial noise fraction must lie in [0, 1], got {p}")
    })?;
    if let Some((r, s)) = options.track {
        params.check_rank(r)?;
        params.check_rank(s)?;
    }
    let sampler = Sampler::new(options.family.unwrap_or(params.value_family))?;
    let n = params.n_items;
    let m = params.capacity;
    let low_count = (p * n as f64).round() as usize;
    let sd_v = params.var_value.sqrt();
    let sd_1 = params.var_noise_high.sqrt();
    let sd_2 = params.var_noise_low.sqrt();

    let outputs = run_indexed(seed, runs, options.workers, |_, rng| {
        let v: Vec<f64> = (0..n)
            .map(|_| params.mean_value + sd_v * sampler.draw(rng))
            .collect();
        let h: Vec<f64> = v
            .iter()
            .map(|x| x + params.mean_noise + sd_1 * sampler.draw(rng))
            .collect();
        let l: Vec<f64> = v
            .iter()
            .enumerate()
            .map(|(i, x)| {
                x + params.mean_noise + if i < low_count { sd_2 } else { sd_1 } * sampler.draw(rng)
            })
            .collect();
        let mut idx: Vec<u32> = (0..n as u32).collect();
        let w_high = top_mean(&mut idx, &h, &v, m);
        let w_low = top_mean(&mut idx, &l, &v, m);
        let tracked = options.track.map(|(r, s)| {
            let i = select_rank(&mut idx, &h, r);
            let j = select_rank(&mut idx, &l, s);
            TrackedDraw {
                h_r: h[i],
                l_s: l[j],
                v_ir: v[i],
                v_js: v[j],
                same_item: i == j,
            }
        });
        RunOutput {
            w_high,
            w_low,
            tracked,
        }
    });

    let mut out = RuluSamples {
        w_high: Vec::with_capacity(runs),
        w_low: Vec::with_capacity(runs),
        gain: Vec::with_capacity(runs),
        tracked: Vec::new(),
    };
    for o in outputs {
        out.w_high.push(o.w_high);
        out.w_low.push(o.w_low);
        out.gain.push(o.w_low - o.w_high);
        out.tracked.extend(o.tracked);
    }
    Ok(out)
}

/// Empirical `P(I(r) = J(s))` from `runs` simulated rankings, row `r - 1`, column `s - 1`.
pub fn empirical_rank_coincidence(
    params: &RuluParams,
    runs: usize,
    seed: u64,
    workers: usize,
) -> Result<Vec<Vec<f64>>> {
    params.validate()?;
    ensure(runs >= 1, || "at least one run is required".into())?;
    let sampler = Sampler::new(params.value_family)?;
    let n = params.n_items;
    let sd_v = params.var_value.sqrt();
    let sd_1 = params.var_noise_high.sqrt();
    let sd_2 = params.var_noise_low.sqrt();
    let pairs = run_indexed(seed, runs, workers, |_, rng| {
        let v: Vec<f64> = (0..n).map(|_| sd_v * sampler.draw(rng)).collect();
        let h: Vec<f64> = v.iter().map(|x| x + sd_1 * sampler.draw(rng)).collect();
        let l: Vec<f64> = v.iter().map(|x| x + sd_2 * sampler.draw(rng)).collect();
        let rank_h = ranks(&h);
        let rank_l = ranks(&l);
        rank_h.into_iter().zip(rank_l).collect::<Vec<_>>()
    });
    let mut counts = vec![vec![0.0; n]; n];
    for run in pairs {
        for (r, s) in run {
            counts[r][s] += 1.0;
        }
    }
    let scale = 1.0 / runs as f64;
    counts.iter_mut().flatten().for_each(|c| *c *= scale);
    Ok(counts)
}

/// 0-based ascending rank of each element.
fn ranks(xs: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_unstable_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0; xs.len()];
    for (rank, &i) in idx.iter().enumerate() {
        out[i] = rank;
    }
    out
}

/// Ranges for random parameter draws in verification sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamRanges {
    /// `N = floor(10^U(lo, hi))`.
    pub log10_items: (f64, f64),
    /// `M = max(1, floor(N U(lo, hi)))`.
    pub capacity_share: (f64, f64),
    pub mean: (f64, f64),
    /// Standard deviations of value and current noise, drawn uniformly then squared.
    pub sd: (f64, f64),
    /// `σ_2 = σ_1 U(lo, hi)`.
    pub noise_reduction: (f64, f64),
    pub min_sd_low: f64,
}

impl Default for ParamRanges {
    fn default() -> Self {
        Self {
            log10_items: (1.0, 3.5),
            capacity_share: (0.01, 0.8),
            mean: (-10.0, 10.0),
            sd: (0.3, 10.0),
            noise_reduction: (0.1, 0.99),
            min_sd_low: 0.2,
        }
    }
}

impl ParamRanges {
    /// One random normal-family parameter set.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<RuluParams> {
        let u = |rng: &mut R, (lo, hi): (f64, f64)| lo + (hi - lo) * rng.random::<f64>();
        let n = (10f64.powf(u(rng, self.log10_items)).floor() as usize).max(1);
        let m = ((n as f64 * u(rng, self.capacity_share)).floor() as usize).clamp(1, n);
        let mean_value = u(rng, self.mean);
        let mean_noise = u(rng, self.mean);
        let sd_v = u(rng, self.sd);
        let sd_1 = u(rng, self.sd);
        let sd_2 = (sd_1 * u(rng, self.noise_reduction))
            .max(self.min_sd_low)
            .min(sd_1);
        RuluParams::new(
            n,
            m,
            mean_value,
            mean_noise,
            sd_v * sd_v,
            sd_1 * sd_1,
            sd_2 * sd_2,
        )
    }

    /// Independent uniform ranks among the selected ones.
    pub fn draw_ranks<R: Rng + ?Sized>(params: &RuluParams, rng: &mut R) -> (usize, usize) {
        let range = params.selected_ranks();
        (rng.random_range(range.clone()), rng.random_range(range))
    }
}
