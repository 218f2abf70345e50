//! Seeded Monte Carlo machinery: per-run random streams, bootstrap intervals,
//! percentile-rank calibration and noisy bisection.
//!
//! Run `i` always draws from stream `i` of a ChaCha generator keyed by the seed, so
//! results do not depend on how runs are scheduled across worker threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distkit::student_t_quantile;
use crate::error::{ensure, invalid, Error, Result};
use crate::testkit::chi2_gof;

pub type McRng = ChaCha8Rng;

/// Monte Carlo run configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub seed: u64,
    pub runs: usize,
    /// Worker threads; 0 uses the global rayon pool.
    pub workers: usize,
    pub bootstrap_resamples: usize,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            runs: 10_000,
            workers: 0,
            bootstrap_resamples: 2_000,
        }
    }
}

impl McConfig {
    pub fn new(seed: u64, runs: usize) -> Self {
        Self {
            seed,
            runs,
            ..Self::default()
        }
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }

    pub fn with_resamples(mut self, resamples: usize) -> Self {
        self.bootstrap_resamples = resamples;
        self
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.runs >= 1, || "at least one run is required".into())?;
        ensure(self.bootstrap_resamples >= 100, || {
            format!(
                "at least 100 bootstrap resamples are required, got {}",
                self.bootstrap_resamples
            )
        })
    }
}

/// Generator for stream `index` under `seed`.
pub fn stream_rng(seed: u64, index: u64) -> McRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Evaluates `f(i, rng_i)` for `i in 0..n` and returns the results in index order.
pub fn run_indexed<T, F>(seed: u64, n: usize, workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, &mut McRng) -> T + Sync,
{
    let job = || {
        (0..n)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream_rng(seed, i as u64);
                f(i, &mut rng)
            })
            .collect::<Vec<_>>()
    };
    if workers == 0 {
        job()
    } else {
        match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
            Ok(pool) => pool.install(job),
            Err(e) => {
                log::warn!("could not build a {workers}-thread pool ({e}); using the global pool");
                job()
            }
        }
    }
}

/// Statistic evaluated on each bootstrap resample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    Mean,
    Variance,
}

/// Percentile bootstrap interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapInterval {
    pub estimate: f64,
    pub low: f64,
    pub high: f64,
    /// Set when every sample is identical and the interval collapses to a point.
    pub degenerate: bool,
}

impl BootstrapInterval {
    pub fn contains(&self, x: f64) -> bool {
        self.low <= x && x <= self.high
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Equal-tailed quantile of an already sorted slice, linear interpolation between order statistics.
pub fn sorted_quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 >= n {
        sorted[n - 1]
    } else {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    }
}

fn percentile_interval(mut stats: Vec<f64>, alpha: f64) -> (f64, f64) {
    stats.sort_by(f64::total_cmp);
    (
        sorted_quantile(&stats, 0.5 * alpha),
        sorted_quantile(&stats, 1.0 - 0.5 * alpha),
    )
}

fn check_bootstrap_args(n: usize, resamples: usize, alpha: f64) -> Result<()> {
    ensure(n >= 2, || {
        format!("bootstrap needs at least 2 samples, got {n}")
    })?;
    ensure(resamples >= 1, || {
        "bootstrap needs at least one resample".into()
    })?;
    ensure(alpha > 0.0 && alpha < 1.0, || {
        format!("alpha must lie in (0, 1), got {alpha}")
    })
}

/// Percentile bootstrap interval of the mean or variance of `samples`.
pub fn bootstrap_ci(
    samples: &[f64],
    statistic: Statistic,
    resamples: usize,
    alpha: f64,
    seed: u64,
) -> Result<BootstrapInterval> {
    let out = bootstrap_mean_var(&[samples], resamples, alpha, seed)?;
    Ok(match statistic {
        Statistic::Mean => out[0].0,
        Statistic::Variance => out[0].1,
    })
}

/// Mean and variance intervals for several equally long columns, resampling the same
/// row indices for every column so paired columns keep their dependence.
pub fn bootstrap_mean_var(
    columns: &[&[f64]],
    resamples: usize,
    alpha: f64,
    seed: u64,
) -> Result<Vec<(BootstrapInterval, BootstrapInterval)>> {
    let n = columns.first().map_or(0, |c| c.len());
    check_bootstrap_args(n, resamples, alpha)?;
    ensure(columns.iter().all(|c| c.len() == n), || {
        "bootstrap columns differ in length".into()
    })?;
    if columns
        .iter()
        .flat_map(|c| c.iter())
        .any(|x| !x.is_finite())
    {
        return invalid("bootstrap samples must be finite");
    }
    // centring keeps the single-pass variance free of cancellation
    let centres: Vec<f64> = columns.iter().map(|c| mean(c)).collect();
    let centred: Vec<Vec<f64>> = columns
        .iter()
        .zip(&centres)
        .map(|(c, m)| c.iter().map(|x| x - m).collect())
        .collect();
    let k = columns.len();
    let nf = n as f64;
    let per_resample: Vec<Vec<(f64, f64)>> = run_indexed(seed, resamples, 0, |_, rng| {
        let mut s = vec![0.0; k];
        let mut ss = vec![0.0; k];
        for _ in 0..n {
            let j = rng.random_range(0..n);
            for c in 0..k {
                let x = centred[c][j];
                s[c] += x;
                ss[c] += x * x;
            }
        }
        (0..k)
            .map(|c| {
                (
                    s[c] / nf,
                    ((ss[c] - s[c] * s[c] / nf) / (nf - 1.0)).max(0.0),
                )
            })
            .collect()
    });
    let mut out = Vec::with_capacity(k);
    for c in 0..k {
        let degenerate = columns[c].iter().all(|&x| x == columns[c][0]);
        let m = centres[c];
        let v = variance(columns[c]);
        if degenerate {
            let point = |e| BootstrapInterval {
                estimate: e,
                low: e,
                high: e,
                degenerate: true,
            };
            out.push((point(m), point(0.0)));
            continue;
        }
        let (ml, mh) = percentile_interval(per_resample.iter().map(|r| r[c].0).collect(), alpha);
        let (vl, vh) = percentile_interval(per_resample.iter().map(|r| r[c].1).collect(), alpha);
        out.push((
            BootstrapInterval {
                estimate: m,
                low: ml + m,
                high: mh + m,
                degenerate: false,
            },
            BootstrapInterval {
                estimate: v,
                low: vl,
                high: vh,
                degenerate: false,
            },
        ));
    }
    Ok(out)
}

/// Fraction of `samples` strictly below `theoretical`.
pub fn percentile_rank_calibration(theoretical: f64, samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return invalid("percentile rank needs at least one sample");
    }
    if samples.len() < 100 {
        log::warn!(
            "percentile rank from only {} samples is coarse",
            samples.len()
        );
    }
    let below = samples.iter().filter(|&&x| x < theoretical).count();
    Ok(below as f64 / samples.len() as f64)
}

/// Shape of a percentile-rank histogram.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationShape {
    Uniform,
    /// ∪-shaped: the reference lands in the tails too often, the sampled spread is too narrow.
    UnderDispersed,
    /// ∩-shaped: the reference lands near the centre too often.
    OverDispersed,
    /// Mass piles up on one side: the samples are shifted relative to the reference.
    Biased,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub counts: Vec<u64>,
    pub statistic: f64,
    pub p_value: f64,
    pub shape: CalibrationShape,
}

/// Bins ranks in `[0, 1]` and tests the histogram for uniformity with a χ² test.
pub fn calibration_histogram(ranks: &[f64], bins: usize) -> Result<CalibrationReport> {
    ensure(bins >= 2, || "need at least two bins".into())?;
    ensure(!ranks.is_empty(), || "no ranks to bin".into())?;
    let mut counts = vec![0u64; bins];
    for &r in ranks {
        ensure((0.0..=1.0).contains(&r), || {
            format!("rank {r} outside [0, 1]")
        })?;
        let b = ((r * bins as f64) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let gof = chi2_gof(&counts, &vec![1.0; bins])?;
    let p_value = gof.outcome.p_value.unwrap_or(1.0);
    let shape = if p_value >= 0.01 {
        CalibrationShape::Uniform
    } else {
        classify(&counts)
    };
    Ok(CalibrationReport {
        counts,
        statistic: gof.outcome.statistic,
        p_value,
        shape,
    })
}

fn classify(counts: &[u64]) -> CalibrationShape {
    let k = counts.len();
    let expected = counts.iter().sum::<u64>() as f64 / k as f64;
    let edge = (k / 4).max(1);
    let lower: f64 = counts[..edge].iter().sum::<u64>() as f64 / edge as f64;
    let upper: f64 = counts[k - edge..].iter().sum::<u64>() as f64 / edge as f64;
    let tails = 0.5 * (lower + upper);
    if (lower - upper).abs() > (tails - expected).abs() {
        CalibrationShape::Biased
    } else if tails > expected {
        CalibrationShape::UnderDispersed
    } else {
        CalibrationShape::OverDispersed
    }
}

/// Sampling schedule for [`noisy_bisection`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BisectionBudget {
    pub iterations: u32,
    pub initial_samples: usize,
    pub max_samples: usize,
    /// Two-sided level for deciding the sign of `E f(x) - target` at a point.
    pub significance: f64,
}

impl Default for BisectionBudget {
    fn default() -> Self {
        Self {
            iterations: 10,
            initial_samples: 32,
            max_samples: 16_384,
            significance: 0.01,
        }
    }
}

/// Result of a noisy-bisection search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BisectionResult {
    pub estimate: f64,
    pub low: f64,
    pub high: f64,
    pub evaluations: usize,
    /// Decisions that fell back to the point estimate after the budget ran out.
    pub undecided_steps: u32,
}

enum Side {
    Below,
    Above,
}

/// Decides whether `E f(x)` lies above or below `target`, doubling the number of draws
/// until a t-test separates them.
fn decide(
    f: &mut impl FnMut(f64, &mut McRng) -> f64,
    x: f64,
    target: f64,
    budget: &BisectionBudget,
    rng: &mut McRng,
    evaluations: &mut usize,
) -> Result<(Side, bool)> {
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    let mut n = 0usize;
    let mut want = budget.initial_samples.max(2);
    // the level is split across the looks of the doubling schedule so repeated peeking
    // keeps the per-comparison error at `significance`
    let mut looks = 1u32;
    while want << looks <= budget.max_samples.max(want) {
        looks += 1;
    }
    let level = budget.significance / looks as f64;
    loop {
        while n < want {
            let y = f(x, rng) - target;
            if !y.is_finite() {
                return Err(Error::Numerical(format!(
                    "noisy function returned {y} at {x}"
                )));
            }
            sum += y;
            sumsq += y * y;
            n += 1;
            *evaluations += 1;
        }
        let nf = n as f64;
        let m = sum / nf;
        let var = ((sumsq - sum * sum / nf) / (nf - 1.0)).max(0.0);
        let se = (var / nf).sqrt();
        let side = if m < 0.0 { Side::Below } else { Side::Above };
        if se == 0.0 {
            return Ok((side, m != 0.0));
        }
        let crit = student_t_quantile(1.0 - 0.5 * level, nf - 1.0)?;
        if (m / se).abs() > crit {
            return Ok((side, true));
        }
        if n >= budget.max_samples {
            return Ok((side, false));
        }
        want = (2 * n).min(budget.max_samples);
    }
}

/// Finds `x` in `bracket` where the increasing-in-expectation noisy function `f` crosses
/// `target`. Each step samples the midpoint until the sign of `E f - target` is
/// significant or the per-point budget is spent, then keeps the half that straddles.
pub fn noisy_bisection(
    mut f: impl FnMut(f64, &mut McRng) -> f64,
    target: f64,
    bracket: (f64, f64),
    budget: BisectionBudget,
    seed: u64,
) -> Result<BisectionResult> {
    let (mut lo, mut hi) = bracket;
    ensure(lo < hi && lo.is_finite() && hi.is_finite(), || {
        format!("invalid bracket ({lo}, {hi})")
    })?;
    ensure(
        budget.significance > 0.0 && budget.significance < 1.0,
        || "significance must lie in (0, 1)".into(),
    )?;
    let mut rng = stream_rng(seed, 0);
    let mut evaluations = 0;
    if let (Side::Above, true) = decide(&mut f, lo, target, &budget, &mut rng, &mut evaluations)? {
        return invalid(format!(
            "function already exceeds the target at the lower bracket end {lo}"
        ));
    }
    if let (Side::Below, true) = decide(&mut f, hi, target, &budget, &mut rng, &mut evaluations)? {
        return invalid(format!(
            "function stays below the target at the upper bracket end {hi}"
        ));
    }
    let mut undecided_steps = 0;
    for _ in 0..budget.iterations {
        let mid = 0.5 * (lo + hi);
        let (side, significant) = decide(&mut f, mid, target, &budget, &mut rng, &mut evaluations)?;
        if !significant {
            undecided_steps += 1;
        }
        match side {
            Side::Below => lo = mid,
            Side::Above => hi = mid,
        }
    }
    Ok(BisectionResult {
        estimate: 0.5 * (lo + hi),
        low: lo,
        high: hi,
        evaluations,
        undecided_steps,
    })
}
