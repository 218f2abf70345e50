//! Fixed-horizon tests, effect sizes, confidence intervals and the design calculators
//! (power, sample size, minimum detectable effect).
//!
//! Two-sample conventions: the effect is `b.mean - a.mean`, `Greater` means the
//! alternative `Δ > δ₀`, `Less` means `Δ < δ₀`.

use serde::{Deserialize, Serialize};

use crate::distkit::{
    binomial_cdf, binomial_pmf, binomial_quantile, binomial_sf, chi2_log_sf, chi2_sf, normal_cdf,
    normal_quantile, normal_sf, student_t_cdf, student_t_quantile,
};
use crate::error::{ensure, invalid, Error, Result};

/// Per-group sufficient statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub count: u64,
    pub mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
}

impl SampleSummary {
    pub fn new(count: u64, mean: f64, variance: f64) -> Result<Self> {
        ensure(count >= 1, || "sample count must be at least 1".into())?;
        ensure(mean.is_finite(), || {
            format!("sample mean must be finite, got {mean}")
        })?;
        ensure(variance >= 0.0 && variance.is_finite(), || {
            format!("sample variance must be non-negative, got {variance}")
        })?;
        Ok(Self {
            count,
            mean,
            variance,
        })
    }

    pub fn from_values(values: &[f64]) -> Result<Self> {
        ensure(!values.is_empty(), || {
            "cannot summarise an empty sample".into()
        })?;
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let variance = if values.len() > 1 {
            values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self::new(values.len() as u64, mean, variance)
    }

    fn n(&self) -> f64 {
        self.count as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    #[default]
    TwoSided,
    Greater,
    Less,
}

impl std::str::FromStr for Alternative {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two-sided" | "two_sided" | "two" => Ok(Self::TwoSided),
            "greater" => Ok(Self::Greater),
            "less" => Ok(Self::Less),
            other => invalid(format!(
                "unknown alternative '{other}' (two-sided, greater, less)"
            )),
        }
    }
}

/// Result of a hypothesis test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub statistic: f64,
    pub p_value: Option<f64>,
    pub dof: Option<f64>,
    pub reject: bool,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub alternative: Alternative,
    pub alpha: f64,
}

fn check_alpha(alpha: f64) -> Result<()> {
    ensure(alpha > 0.0 && alpha < 1.0, || {
        format!("alpha must lie in (0, 1), got {alpha}")
    })
}

/// p-value for a statistic whose null distribution has the given CDF and upper tail.
fn tail_p(
    stat: f64,
    alternative: Alternative,
    cdf: impl Fn(f64) -> Result<f64>,
    sf: impl Fn(f64) -> Result<f64>,
) -> Result<f64> {
    Ok(match alternative {
        Alternative::Greater => sf(stat)?,
        Alternative::Less => cdf(stat)?,
        Alternative::TwoSided => (2.0 * sf(stat.abs())?).min(1.0),
    })
}

/// Interval for the effect at the given confidence, one-sided for directional alternatives.
fn effect_interval(
    estimate: f64,
    se: f64,
    alpha: f64,
    alternative: Alternative,
    quantile: impl Fn(f64) -> Result<f64>,
) -> Result<(f64, f64)> {
    Ok(match alternative {
        Alternative::TwoSided => {
            let q = quantile(1.0 - 0.5 * alpha)?;
            (estimate - q * se, estimate + q * se)
        }
        Alternative::Greater => (estimate - quantile(1.0 - alpha)? * se, f64::INFINITY),
        Alternative::Less => (f64::NEG_INFINITY, estimate + quantile(1.0 - alpha)? * se),
    })
}

/// Reference distribution for the two-sample t statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TReference {
    /// Standard normal reference with plugged-in sample variances, the usual choice at
    /// online-experiment sample sizes.
    #[default]
    Practical,
    /// Student's t with Welch–Satterthwaite degrees of freedom.
    Welch,
}

/// Welch–Satterthwaite degrees of freedom.
pub fn welch_dof(a: &SampleSummary, b: &SampleSummary) -> f64 {
    let va = a.variance / a.n();
    let vb = b.variance / b.n();
    (va + vb).powi(2) / (va * va / (a.n() - 1.0) + vb * vb / (b.n() - 1.0))
}

/// Two-sample t test of `H0: b.mean - a.mean = delta0` with unpooled variances.
pub fn welch_t_test(
    a: &SampleSummary,
    b: &SampleSummary,
    delta0: f64,
    alternative: Alternative,
    alpha: f64,
    reference: TReference,
) -> Result<TestOutcome> {
    check_alpha(alpha)?;
    ensure(a.count >= 2 && b.count >= 2, || {
        "t test needs at least 2 observations per group".into()
    })?;
    if a.variance == 0.0 && b.variance == 0.0 {
        return Err(Error::Degenerate(
            "degenerate samples: both variances are zero".into(),
        ));
    }
    let se = (a.variance / a.n() + b.variance / b.n()).sqrt();
    let diff = b.mean - a.mean;
    let t = (diff - delta0) / se;
    let (p, dof, (lo, hi)) = match reference {
        TReference::Practical => (
            tail_p(t, alternative, |x| Ok(normal_cdf(x)), |x| Ok(normal_sf(x)))?,
            None,
            effect_interval(diff, se, alpha, alternative, normal_quantile)?,
        ),
        TReference::Welch => {
            let nu = welch_dof(a, b);
            (
                tail_p(
                    t,
                    alternative,
                    |x| student_t_cdf(x, nu),
                    |x| student_t_cdf(-x, nu),
                )?,
                Some(nu),
                effect_interval(diff, se, alpha, alternative, |q| student_t_quantile(q, nu))?,
            )
        }
    };
    Ok(TestOutcome {
        statistic: t,
        p_value: Some(p),
        dof,
        reject: p < alpha,
        ci_low: Some(lo),
        ci_high: Some(hi),
        alternative,
        alpha,
    })
}

/// Two-sample z test with known population variances.
pub fn z_test(
    a: &SampleSummary,
    b: &SampleSummary,
    delta0: f64,
    known_var_a: f64,
    known_var_b: f64,
    alternative: Alternative,
    alpha: f64,
) -> Result<TestOutcome> {
    check_alpha(alpha)?;
    ensure(known_var_a >= 0.0 && known_var_b >= 0.0, || {
        "population variances must be non-negative".into()
    })?;
    if known_var_a == 0.0 && known_var_b == 0.0 {
        return Err(Error::Degenerate(
            "degenerate samples: both population variances are zero".into(),
        ));
    }
    let se = (known_var_a / a.n() + known_var_b / b.n()).sqrt();
    let diff = b.mean - a.mean;
    let z = (diff - delta0) / se;
    let p = tail_p(z, alternative, |x| Ok(normal_cdf(x)), |x| Ok(normal_sf(x)))?;
    let (lo, hi) = effect_interval(diff, se, alpha, alternative, normal_quantile)?;
    Ok(TestOutcome {
        statistic: z,
        p_value: Some(p),
        dof: None,
        reject: p < alpha,
        ci_low: Some(lo),
        ci_high: Some(hi),
        alternative,
        alpha,
    })
}

/// Standardised mean difference `(b - a) / pooled sd`.
pub fn cohens_d(a: &SampleSummary, b: &SampleSummary) -> Result<f64> {
    ensure(a.count + b.count > 2, || {
        "Cohen's d needs more than two observations in total".into()
    })?;
    let pooled = ((a.n() - 1.0) * a.variance + (b.n() - 1.0) * b.variance) / (a.n() + b.n() - 2.0);
    if pooled <= 0.0 {
        return Err(Error::Degenerate("pooled variance is zero".into()));
    }
    Ok((b.mean - a.mean) / pooled.sqrt())
}

/// Inclusive range of outcome counts forming a rejection region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriticalSet {
    pub low: u64,
    pub high: u64,
}

impl CriticalSet {
    pub fn contains(&self, k: u64) -> bool {
        self.low <= k && k <= self.high
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinomialTestOutcome {
    pub outcome: TestOutcome,
    /// One-sided rejection region; `None` when it is empty or the test is two-sided.
    pub critical_set: Option<CriticalSet>,
    /// Set when no outcome can reach significance for a one-sided test.
    pub critical_set_empty: bool,
}

/// Relative slack for treating two binomial masses as equally likely.
const PMF_TIE: f64 = 1e-9;

/// Exact binomial test of `H0: θ = θ₀` from `k` successes in `n` trials.
pub fn binomial_exact_test(
    k: u64,
    n: u64,
    theta0: f64,
    alternative: Alternative,
    alpha: f64,
) -> Result<BinomialTestOutcome> {
    check_alpha(alpha)?;
    ensure(k <= n, || format!("successes {k} exceed trials {n}"))?;
    ensure(theta0 > 0.0 && theta0 < 1.0, || {
        format!("theta0 must lie in (0, 1), got {theta0}")
    })?;
    let p = match alternative {
        Alternative::Greater => {
            if k == 0 {
                1.0
            } else {
                binomial_sf(k - 1, n, theta0)?
            }
        }
        Alternative::Less => binomial_cdf(k, n, theta0)?,
        Alternative::TwoSided => {
            let dk = binomial_pmf(k, n, theta0)?;
            let limit = dk * (1.0 + PMF_TIE);
            let mut total = 0.0;
            for i in 0..=n {
                let d = binomial_pmf(i, n, theta0)?;
                if d <= limit {
                    total += d;
                }
            }
            total.min(1.0)
        }
    };
    let critical_set = match alternative {
        Alternative::Greater => {
            let q = binomial_quantile(1.0 - alpha, n, theta0)?;
            (q < n).then(|| CriticalSet {
                low: q + 1,
                high: n,
            })
        }
        Alternative::Less => {
            let q = binomial_quantile(alpha, n, theta0)?;
            (q > 0).then(|| CriticalSet {
                low: 0,
                high: q - 1,
            })
        }
        Alternative::TwoSided => None,
    };
    let critical_set_empty = alternative != Alternative::TwoSided && critical_set.is_none();
    Ok(BinomialTestOutcome {
        outcome: TestOutcome {
            statistic: k as f64,
            p_value: Some(p),
            dof: None,
            reject: p < alpha,
            ci_low: None,
            ci_high: None,
            alternative,
            alpha,
        },
        critical_set,
        critical_set_empty,
    })
}

/// How the Mann-Whitney p-value is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MannWhitneyMethod {
    /// Normal approximation with tie-corrected variance.
    #[default]
    Normal,
    /// Full permutation distribution of the midrank statistic; allowed when `n + m ≤ 20`.
    Exact,
}

/// Midranks of the pooled sample (1-based, ties share the average rank) and the tie
/// correction term `Σ (t³ - t)`.
fn midranks(pooled: &[f64]) -> (Vec<f64>, f64) {
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    order.sort_by(|&i, &j| pooled[i].total_cmp(&pooled[j]));
    let mut ranks = vec![0.0; pooled.len()];
    let mut ties = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && pooled[order[end]] == pooled[order[start]] {
            end += 1;
        }
        let avg = 0.5 * ((start + 1) + end) as f64;
        for &idx in &order[start..end] {
            ranks[idx] = avg;
        }
        let t = (end - start) as f64;
        ties += t * t * t - t;
        start = end;
    }
    (ranks, ties)
}

/// Mann-Whitney statistic `U = Σᵢ Σⱼ S(xᵢ, yⱼ)` where `S = 1` if `y < x`, `½` on ties.
pub fn mann_whitney_statistic(x: &[f64], y: &[f64]) -> Result<f64> {
    ensure(!x.is_empty() && !y.is_empty(), || {
        "Mann-Whitney needs two non-empty samples".into()
    })?;
    ensure(x.iter().chain(y).all(|v| !v.is_nan()), || {
        "Mann-Whitney samples contain NaN".into()
    })?;
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let (ranks, _) = midranks(&pooled);
    let n = x.len() as f64;
    let rank_sum: f64 = ranks[..x.len()].iter().sum();
    Ok(rank_sum - n * (n + 1.0) / 2.0)
}

/// Mann-Whitney U test. Large `U` means `x` tends to exceed `y`; `Greater` is the
/// alternative that `y` is stochastically larger than `x`, matching the `b - a`
/// convention of the other two-sample tests.
pub fn mann_whitney_u(
    x: &[f64],
    y: &[f64],
    alternative: Alternative,
    alpha: f64,
    method: MannWhitneyMethod,
) -> Result<TestOutcome> {
    check_alpha(alpha)?;
    let u = mann_whitney_statistic(x, y)?;
    let (n, m) = (x.len() as f64, y.len() as f64);
    let big_n = n + m;
    let mu = n * m / 2.0;
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let (ranks, ties) = midranks(&pooled);
    let p = match method {
        MannWhitneyMethod::Normal => {
            let var = n * m / 12.0 * ((big_n + 1.0) - ties / (big_n * (big_n - 1.0)).max(1.0));
            if var <= 0.0 {
                return Err(Error::Degenerate("all observations are tied".into()));
            }
            // y larger ⇔ U small, so the statistic is negated for the directional tails
            let z = (mu - u) / var.sqrt();
            tail_p(z, alternative, |v| Ok(normal_cdf(v)), |v| Ok(normal_sf(v)))?
        }
        MannWhitneyMethod::Exact => {
            ensure(x.len() + y.len() <= 20, || {
                "exact Mann-Whitney is limited to n + m ≤ 20".into()
            })?;
            exact_mw_p(&ranks, x.len(), u, alternative)
        }
    };
    Ok(TestOutcome {
        statistic: u,
        p_value: Some(p),
        dof: None,
        reject: p < alpha,
        ci_low: None,
        ci_high: None,
        alternative,
        alpha,
    })
}

/// Permutation p-value: enumerate every way to label `n` of the pooled midranks as `x`.
fn exact_mw_p(ranks: &[f64], n: usize, u_obs: f64, alternative: Alternative) -> f64 {
    let total = ranks.len();
    let shift = (n * (n + 1)) as f64 / 2.0;
    let mu = (n * (total - n)) as f64 / 2.0;
    let eps = 1e-9;
    let (mut le, mut ge, mut far, mut count) = (0u64, 0u64, 0u64, 0u64);
    let mut chosen = Vec::with_capacity(n);
    fn rec(
        ranks: &[f64],
        start: usize,
        left: usize,
        chosen: &mut Vec<usize>,
        visit: &mut dyn FnMut(&[usize]),
    ) {
        if left == 0 {
            visit(chosen);
            return;
        }
        for i in start..=ranks.len() - left {
            chosen.push(i);
            rec(ranks, i + 1, left - 1, chosen, visit);
            chosen.pop();
        }
    }
    let dev_obs = (u_obs - mu).abs();
    rec(ranks, 0, n, &mut chosen, &mut |idx: &[usize]| {
        let u = idx.iter().map(|&i| ranks[i]).sum::<f64>() - shift;
        count += 1;
        if u <= u_obs + eps {
            le += 1;
        }
        if u >= u_obs - eps {
            ge += 1;
        }
        if (u - mu).abs() >= dev_obs - eps {
            far += 1;
        }
    });
    let c = count as f64;
    match alternative {
        Alternative::Greater => le as f64 / c,
        Alternative::Less => ge as f64 / c,
        Alternative::TwoSided => far as f64 / c,
    }
}

/// Outcome of the χ² goodness-of-fit test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GofOutcome {
    pub outcome: TestOutcome,
    pub expected: Vec<f64>,
    /// Natural log of the p-value, finite even when the p-value underflows.
    pub log_p_value: f64,
    /// Some expected count is below 5, where the χ² approximation is poor.
    pub small_expected: bool,
}

/// Pearson χ² goodness-of-fit test of observed counts against expected ratios, the
/// sample-ratio-mismatch check. Uses a 5% level; see [`chi2_gof_at`].
pub fn chi2_gof(observed: &[u64], expected_ratios: &[f64]) -> Result<GofOutcome> {
    chi2_gof_at(observed, expected_ratios, 0.05)
}

pub fn chi2_gof_at(observed: &[u64], expected_ratios: &[f64], alpha: f64) -> Result<GofOutcome> {
    check_alpha(alpha)?;
    ensure(observed.len() >= 2, || {
        "goodness of fit needs at least two categories".into()
    })?;
    ensure(observed.len() == expected_ratios.len(), || {
        format!(
            "{} observed counts but {} ratios",
            observed.len(),
            expected_ratios.len()
        )
    })?;
    ensure(
        expected_ratios.iter().all(|r| r.is_finite() && *r >= 0.0),
        || "ratios must be finite and non-negative".into(),
    )?;
    let total: f64 = observed.iter().map(|&o| o as f64).sum();
    let weight: f64 = expected_ratios.iter().sum();
    ensure(total > 0.0, || "observed counts sum to zero".into())?;
    ensure(weight > 0.0, || "expected ratios sum to zero".into())?;
    let expected: Vec<f64> = expected_ratios.iter().map(|r| r / weight * total).collect();
    if let Some(i) = expected.iter().position(|&e| e <= 0.0) {
        return invalid(format!("expected count for category {i} is zero"));
    }
    let small_expected = expected.iter().any(|&e| e < 5.0);
    if small_expected {
        log::warn!("some expected counts are below 5; the chi-square approximation may be poor");
    }
    let stat: f64 = observed
        .iter()
        .zip(&expected)
        .map(|(&o, &e)| (o as f64 - e).powi(2) / e)
        .sum();
    let dof = (observed.len() - 1) as f64;
    let p = chi2_sf(stat, dof)?;
    let log_p = chi2_log_sf(stat, dof)?;
    Ok(GofOutcome {
        outcome: TestOutcome {
            statistic: stat,
            p_value: Some(p),
            dof: Some(dof),
            reject: p < alpha,
            ci_low: None,
            ci_high: None,
            alternative: Alternative::Greater,
            alpha,
        },
        expected,
        log_p_value: log_p,
        small_expected,
    })
}

/// Power formula variant for two-sided designs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PowerForm {
    /// Both rejection tails.
    #[default]
    Exact,
    /// Only the tail on the side of the effect. Close to exact once `|θ - θ₀|/SE`
    /// exceeds `z_{1-α/2} + 1`.
    Approx,
}

fn check_design(var_a: f64, var_b: f64, n: f64, m: f64, alpha: f64) -> Result<()> {
    check_alpha(alpha)?;
    ensure(var_a > 0.0 && var_b > 0.0, || {
        "variances must be positive".into()
    })?;
    ensure(n >= 1.0 && m >= 1.0, || {
        "group sizes must be at least 1".into()
    })
}

/// Standard error of the difference in means.
pub fn design_se(var_a: f64, var_b: f64, n: f64, m: f64) -> f64 {
    (var_a / n + var_b / m).sqrt()
}

/// Critical multiplier `z_{1-α}` (one-sided) or `z_{1-α/2}` (two-sided).
pub fn critical_z(alpha: f64, alternative: Alternative) -> Result<f64> {
    match alternative {
        Alternative::TwoSided => normal_quantile(1.0 - 0.5 * alpha),
        _ => normal_quantile(1.0 - alpha),
    }
}

/// Whether the single-tail two-sided power approximation is trustworthy.
pub fn approx_power_is_valid(theta: f64, theta0: f64, se: f64, alpha: f64) -> Result<bool> {
    Ok(((theta - theta0) / se).abs() > normal_quantile(1.0 - 0.5 * alpha)? + 1.0)
}

/// Power of the two-sample z test at true effect `theta`.
#[allow(clippy::too_many_arguments)]
pub fn power(
    theta: f64,
    theta0: f64,
    var_a: f64,
    var_b: f64,
    n: f64,
    m: f64,
    alpha: f64,
    alternative: Alternative,
    form: PowerForm,
) -> Result<f64> {
    check_design(var_a, var_b, n, m, alpha)?;
    power_at_se(
        theta - theta0,
        design_se(var_a, var_b, n, m),
        alpha,
        alternative,
        form,
    )
}

/// Power for an effect `delta` measured with standard error `se`.
pub fn power_at_se(
    delta: f64,
    se: f64,
    alpha: f64,
    alternative: Alternative,
    form: PowerForm,
) -> Result<f64> {
    check_alpha(alpha)?;
    ensure(se > 0.0, || "standard error must be positive".into())?;
    let d = delta / se;
    Ok(match alternative {
        Alternative::Greater => normal_sf(normal_quantile(1.0 - alpha)? - d),
        Alternative::Less => normal_cdf(-normal_quantile(1.0 - alpha)? - d),
        Alternative::TwoSided => {
            let z = normal_quantile(1.0 - 0.5 * alpha)?;
            match form {
                PowerForm::Exact => normal_cdf(-z - d) + normal_sf(z - d),
                PowerForm::Approx => {
                    if d.abs() <= z + 1.0 {
                        log::warn!(
                            "single-tail power approximation used at |effect|/SE = {:.3}, below z + 1 = {:.3}",
                            d.abs(),
                            z + 1.0
                        );
                    }
                    normal_sf(z - d.abs())
                }
            }
        }
    })
}

/// Per-group sample sizes from [`required_sample_size`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleSize {
    pub n: u64,
    pub m: u64,
    /// `(z_crit - z_{1-π})²`, about 7.85 at 5% two-sided and 80% power.
    pub multiplier: f64,
    /// `16 σ̄² / Δ²` with `σ̄²` the mean of the two variances.
    pub rule_of_thumb: f64,
}

/// Smallest group sizes `n` and `m = ⌈ratio·n⌉` reaching `power_target`.
#[allow(clippy::too_many_arguments)]
pub fn required_sample_size(
    theta: f64,
    theta0: f64,
    var_a: f64,
    var_b: f64,
    alpha: f64,
    power_target: f64,
    alternative: Alternative,
    allocation_ratio: f64,
) -> Result<SampleSize> {
    check_design(var_a, var_b, 1.0, 1.0, alpha)?;
    ensure(theta != theta0, || "theta must differ from theta0".into())?;
    ensure(power_target > alpha && power_target < 1.0, || {
        format!("power target must lie in (alpha, 1), got {power_target}")
    })?;
    ensure(
        allocation_ratio > 0.0 && allocation_ratio.is_finite(),
        || "allocation ratio must be positive".into(),
    )?;
    let delta = theta - theta0;
    if alternative == Alternative::Greater && delta < 0.0
        || alternative == Alternative::Less && delta > 0.0
    {
        return invalid("effect points away from the one-sided alternative");
    }
    let z = critical_z(alpha, alternative)? - normal_quantile(1.0 - power_target)?;
    let multiplier = z * z;
    let raw = multiplier * (var_a + var_b / allocation_ratio) / (delta * delta);
    let n = raw.ceil().max(1.0);
    let m = (allocation_ratio * n).ceil().max(1.0);
    Ok(SampleSize {
        n: n as u64,
        m: m as u64,
        multiplier,
        rule_of_thumb: 16.0 * 0.5 * (var_a + var_b) / (delta * delta),
    })
}

/// Minimum detectable effect `(z_crit - z_{1-π})·SE`.
pub fn mde(
    var_a: f64,
    var_b: f64,
    n: f64,
    m: f64,
    alpha: f64,
    power_target: f64,
    alternative: Alternative,
) -> Result<f64> {
    check_design(var_a, var_b, n, m, alpha)?;
    ensure(power_target > alpha && power_target < 1.0, || {
        format!("power target must lie in (alpha, 1), got {power_target}")
    })?;
    let z = critical_z(alpha, alternative)? - normal_quantile(1.0 - power_target)?;
    Ok(z * design_se(var_a, var_b, n, m))
}

/// Two-sided `1 - α` interval for a single mean.
pub fn ci_mean(s: &SampleSummary, alpha: f64) -> Result<(f64, f64)> {
    check_alpha(alpha)?;
    ensure(s.count >= 2, || {
        "confidence interval needs at least 2 observations".into()
    })?;
    let half = student_t_quantile(1.0 - 0.5 * alpha, s.n() - 1.0)? * (s.variance / s.n()).sqrt();
    Ok((s.mean - half, s.mean + half))
}

/// Moment coefficient of skewness `m₃ / m₂^{3/2}`.
pub fn sample_skewness(values: &[f64]) -> Result<f64> {
    ensure(values.len() >= 3, || {
        "skewness needs at least 3 values".into()
    })?;
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let m2 = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m3 = values.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / n;
    if m2 == 0.0 {
        return Err(Error::Degenerate("zero variance".into()));
    }
    Ok(m3 / m2.powf(1.5))
}

/// Minimum per-group size for the normal approximation under skewed responses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkewnessRule {
    pub min_n: u64,
    /// The rule is most useful when `|skewness| > 1`.
    pub informative: bool,
}

/// `⌈355 s²⌉`.
pub fn skewness_min_sample(sample_skewness: f64) -> Result<SkewnessRule> {
    ensure(sample_skewness.is_finite(), || {
        "skewness must be finite".into()
    })?;
    let raw = 355.0 * sample_skewness * sample_skewness;
    // guard against 355 * 1.0 rounding up to 356 through representation error
    let min_n = (raw - raw * 1e-12).ceil().max(0.0) as u64;
    Ok(SkewnessRule {
        min_n,
        informative: sample_skewness.abs() > 1.0,
    })
}
