//! Standard errors for item-level metrics when randomisation happens per user.
//!
//! Rows sharing a user are dependent, so the i.i.d. standard error understates the spread of
//! the mean. The Poisson bootstrap reweights whole users (one-way) or users and products
//! jointly (two-way) and reads the SE off the spread of the reweighted means.
//!
//! Rows are folded into per-user (or per user × product) sums and counts first, so each
//! resample costs one pass over the clusters rather than over the rows, and the rows
//! themselves can be streamed from disk.

use std::collections::HashMap;

use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::distkit::{
    chi2_quantile, normal_cdf, normal_quantile, student_t_cdf, student_t_quantile, Probability,
};
use crate::error::{ensure, Error, Result};
use crate::simlab::{run_indexed, McRng};

/// One analysis unit: a transaction or item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteredRecord {
    pub user_id: String,
    #[serde(default)]
    pub product_id: Option<String>,
    pub value: f64,
}

impl ClusteredRecord {
    pub fn new(user_id: impl Into<String>, product_id: Option<String>, value: f64) -> Self {
        Self {
            user_id: user_id.into(),
            product_id,
            value,
        }
    }
}

/// A validated, non-empty set of records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteredRecords {
    rows: Vec<ClusteredRecord>,
}

impl ClusteredRecords {
    pub fn new(rows: Vec<ClusteredRecord>) -> Result<Self> {
        ensure(!rows.is_empty(), || "no records".into())?;
        for (i, r) in rows.iter().enumerate() {
            check_row(i + 1, r)?;
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[ClusteredRecord] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

fn check_row(row: usize, r: &ClusteredRecord) -> Result<()> {
    if r.user_id.is_empty() {
        return Err(Error::DataIntegrity {
            row,
            message: "empty user id".into(),
        });
    }
    if matches!(&r.product_id, Some(p) if p.is_empty()) {
        return Err(Error::DataIntegrity {
            row,
            message: "empty product id".into(),
        });
    }
    if !r.value.is_finite() {
        return Err(Error::DataIntegrity {
            row,
            message: format!("non-finite value {}", r.value),
        });
    }
    Ok(())
}

/// Sum and row count of one cluster.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
struct Cell {
    user: u32,
    product: u32,
    sum: f64,
    count: f64,
}

/// Sufficient statistics for the bootstrap: per user × product sums and counts, plus the
/// moments needed for the i.i.d. standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAggregates {
    cells: Vec<Cell>,
    users: usize,
    products: usize,
    has_products: bool,
    rows: usize,
    mean: f64,
    /// Sum of squared deviations from the running mean.
    m2: f64,
}

impl ClusterAggregates {
    /// Folds a stream of rows. Row numbers in errors are 1-based positions in the stream.
    /// Products are all-or-nothing: a mix of rows with and without product ids is rejected.
    pub fn from_rows<I>(rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = Result<ClusteredRecord>>,
    {
        let mut user_ix: HashMap<String, u32> = HashMap::new();
        let mut product_ix: HashMap<String, u32> = HashMap::new();
        let mut cell_ix: HashMap<(u32, u32), usize> = HashMap::new();
        let mut cells: Vec<Cell> = Vec::new();
        let mut has_products = None;
        let (mut n, mut mean, mut m2) = (0usize, 0.0, 0.0);
        for (i, row) in rows.into_iter().enumerate() {
            let r = row?;
            check_row(i + 1, &r)?;
            let with_product = r.product_id.is_some();
            match has_products {
                None => has_products = Some(with_product),
                Some(h) if h != with_product => {
                    return Err(Error::DataIntegrity {
                        row: i + 1,
                        message: "product id must be given on every row or on none".into(),
                    })
                }
                _ => {}
            }
            let next = user_ix.len() as u32;
            let u = *user_ix.entry(r.user_id).or_insert(next);
            let p = match r.product_id {
                Some(pid) => {
                    let next = product_ix.len() as u32;
                    *product_ix.entry(pid).or_insert(next)
                }
                None => 0,
            };
            let slot = *cell_ix.entry((u, p)).or_insert_with(|| {
                cells.push(Cell {
                    user: u,
                    product: p,
                    ..Cell::default()
                });
                cells.len() - 1
            });
            cells[slot].sum += r.value;
            cells[slot].count += 1.0;
            n += 1;
            let delta = r.value - mean;
            mean += delta / n as f64;
            m2 += delta * (r.value - mean);
        }
        ensure(n > 0, || "no records".into())?;
        Ok(Self {
            cells,
            users: user_ix.len(),
            products: product_ix.len().max(1),
            has_products: has_products.unwrap_or(false),
            rows: n,
            mean,
            m2,
        })
    }

    pub fn from_records(records: &ClusteredRecords) -> Result<Self> {
        Self::from_rows(records.rows.iter().cloned().map(Ok))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn products(&self) -> usize {
        if self.has_products {
            self.products
        } else {
            0
        }
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Sample variance of the row values.
    pub fn variance(&self) -> f64 {
        if self.rows < 2 {
            0.0
        } else {
            self.m2 / (self.rows - 1) as f64
        }
    }
}

/// A standard-error estimate with its own uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeEstimate {
    pub mean: f64,
    pub se: f64,
    pub se_ci_low: f64,
    pub se_ci_high: f64,
    /// Resamples used; 0 for the analytic estimate.
    pub b_resamples: usize,
    /// Resamples dropped because every weight was zero.
    pub skipped_resamples: usize,
    /// Estimated standard deviation of the SE estimate divided by the SE.
    pub coefficient_of_variation: f64,
    /// True when the data carry no spread, so `se` is 0.
    pub degenerate: bool,
}

const SE_CI_LEVEL: f64 = 0.95;

/// `√(s² / n)` over rows, ignoring clustering. The SE interval is the χ² interval for a
/// normal standard deviation.
pub fn vanilla_se(records: &ClusteredRecords) -> Result<SeEstimate> {
    vanilla_se_from(&ClusterAggregates::from_records(records)?)
}

pub fn vanilla_se_from(agg: &ClusterAggregates) -> Result<SeEstimate> {
    ensure(agg.rows >= 2, || {
        format!("need at least two rows, got {}", agg.rows)
    })?;
    let n = agg.rows as f64;
    let se = (agg.variance() / n).sqrt();
    let dof = n - 1.0;
    let a = 1.0 - SE_CI_LEVEL;
    let lo = se * (dof / chi2_quantile(1.0 - a / 2.0, dof)?).sqrt();
    let hi = se * (dof / chi2_quantile(a / 2.0, dof)?).sqrt();
    Ok(SeEstimate {
        mean: agg.mean,
        se,
        se_ci_low: lo,
        se_ci_high: hi,
        b_resamples: 0,
        skipped_resamples: 0,
        coefficient_of_variation: 1.0 / (2.0 * dof).sqrt(),
        degenerate: se == 0.0,
    })
}

/// Bootstrap reweighting scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// One Poisson(1) weight per user.
    OneWay,
    /// Independent Poisson(1) weights per user and per product, multiplied.
    TwoWay,
}

/// One-way Poisson bootstrap over users.
pub fn oneway_bootstrap_se(records: &ClusteredRecords, b: usize, seed: u64) -> Result<SeEstimate> {
    bootstrap_se(
        &ClusterAggregates::from_records(records)?,
        Scheme::OneWay,
        b,
        seed,
    )
}

/// Two-way Poisson bootstrap over users and products.
pub fn twoway_bootstrap_se(records: &ClusteredRecords, b: usize, seed: u64) -> Result<SeEstimate> {
    bootstrap_se(
        &ClusterAggregates::from_records(records)?,
        Scheme::TwoWay,
        b,
        seed,
    )
}

/// Bootstrap SE on pre-aggregated data. Resample `i` draws from stream `i` of `seed`, user
/// weights first, so a two-way run shares its user weights with the one-way run.
pub fn bootstrap_se(
    agg: &ClusterAggregates,
    scheme: Scheme,
    b: usize,
    seed: u64,
) -> Result<SeEstimate> {
    ensure(b >= 100, || {
        format!("at least 100 resamples are required, got {b}")
    })?;
    if scheme == Scheme::TwoWay && !agg.has_products {
        return Err(Error::InvalidInput(
            "two-way bootstrap needs a product id on every row".into(),
        ));
    }
    let poisson = Poisson::new(1.0).map_err(|e| Error::Numerical(e.to_string()))?;
    let means: Vec<Option<f64>> = run_indexed(seed, b, 0, |_, rng: &mut McRng| {
        let wu: Vec<f64> = (0..agg.users).map(|_| poisson.sample(rng)).collect();
        let wp: Vec<f64> = match scheme {
            Scheme::OneWay => Vec::new(),
            Scheme::TwoWay => (0..agg.products).map(|_| poisson.sample(rng)).collect(),
        };
        let (mut num, mut den) = (0.0, 0.0);
        for c in &agg.cells {
            let w = match scheme {
                Scheme::OneWay => wu[c.user as usize],
                Scheme::TwoWay => wu[c.user as usize] * wp[c.product as usize],
            };
            num += w * c.sum;
            den += w * c.count;
        }
        (den > 0.0).then(|| num / den)
    });
    let kept: Vec<f64> = means.iter().flatten().copied().collect();
    let skipped = b - kept.len();
    if skipped * 100 > b {
        log::warn!("{skipped} of {b} resamples had zero total weight and were skipped");
    }
    ensure(kept.len() >= 3, || {
        "fewer than three resamples had positive weight".into()
    })?;
    let (se, jk_sd) = sd_with_jackknife(&kept);
    let z = normal_quantile(0.5 + SE_CI_LEVEL / 2.0)?;
    let degenerate = se == 0.0;
    Ok(SeEstimate {
        mean: agg.mean,
        se,
        se_ci_low: (se - z * jk_sd).max(0.0),
        se_ci_high: se + z * jk_sd,
        b_resamples: kept.len(),
        skipped_resamples: skipped,
        coefficient_of_variation: if degenerate { 0.0 } else { jk_sd / se },
        degenerate,
    })
}

/// Sample standard deviation and its delete-one jackknife standard error, in O(n).
fn sd_with_jackknife(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    let sd = (ss / (n - 1.0)).sqrt();
    // leaving x out: the mean moves by (mean - x)/(n - 1) and ss drops by n/(n - 1) (x - mean)²
    let loo: Vec<f64> = xs
        .iter()
        .map(|x| ((ss - n / (n - 1.0) * (x - mean) * (x - mean)).max(0.0) / (n - 2.0)).sqrt())
        .collect();
    let loo_mean = loo.iter().sum::<f64>() / n;
    let jk_var = (n - 1.0) / n
        * loo
            .iter()
            .map(|v| (v - loo_mean) * (v - loo_mean))
            .sum::<f64>();
    (sd, jk_var.sqrt())
}

/// Power of a two-sided test when the true SE is `se`. `dof` selects a Student t reference;
/// `None` uses the normal limit.
pub fn power_under_se(theta: f64, se: f64, alpha: f64, dof: Option<f64>) -> Result<Probability> {
    ensure(se > 0.0 && se.is_finite(), || {
        format!("standard error must be positive, got {se}")
    })?;
    ensure(alpha > 0.0 && alpha < 1.0, || {
        format!("alpha must lie in (0, 1), got {alpha}")
    })?;
    let shift = theta / se;
    let p = match dof {
        None => {
            let crit = normal_quantile(1.0 - alpha / 2.0)?;
            1.0 - normal_cdf(crit - shift) + normal_cdf(-crit - shift)
        }
        Some(nu) => {
            let crit = student_t_quantile(1.0 - alpha / 2.0, nu)?;
            1.0 - student_t_cdf(crit - shift, nu)? + student_t_cdf(-crit - shift, nu)?
        }
    };
    Probability::clamped(p)
}

/// Actual coverage of a nominal `1 - alpha` normal interval when the true SE is `ratio`
/// times the one used to build it: `2Φ(z / ratio) - 1`.
pub fn coverage_under_se_ratio(ratio: f64, alpha: f64) -> Result<Probability> {
    ensure(ratio >= 1.0 && ratio.is_finite(), || {
        format!("SE ratio must be at least 1, got {ratio}")
    })?;
    ensure(alpha > 0.0 && alpha < 1.0, || {
        format!("alpha must lie in (0, 1), got {alpha}")
    })?;
    let z = normal_quantile(1.0 - alpha / 2.0)?;
    Probability::clamped(2.0 * normal_cdf(z / ratio) - 1.0)
}

/// Summary for reporting: both SEs and their ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeComparison {
    pub mean: f64,
    pub vanilla_se: f64,
    pub bootstrap_se: f64,
    /// `bootstrap_se / vanilla_se`.
    pub ratio: f64,
    pub ci: (f64, f64),
    pub b: usize,
    pub cv: f64,
}

pub fn compare_se(
    agg: &ClusterAggregates,
    scheme: Scheme,
    b: usize,
    seed: u64,
) -> Result<SeComparison> {
    let vanilla = vanilla_se_from(agg)?;
    let boot = bootstrap_se(agg, scheme, b, seed)?;
    Ok(SeComparison {
        mean: agg.mean,
        vanilla_se: vanilla.se,
        bootstrap_se: boot.se,
        ratio: if vanilla.se > 0.0 {
            boot.se / vanilla.se
        } else {
            f64::NAN
        },
        ci: (boot.se_ci_low, boot.se_ci_high),
        b: boot.b_resamples,
        cv: boot.coefficient_of_variation,
    })
}
