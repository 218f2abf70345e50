//! Evaluation of personalisation-strategy experiment setups.
//!
//! Users split into four groups by which of two strategies they qualify for: group 0
//! qualifies for neither, groups 1 and 2 for one strategy each and group 3 for both.
//! Each group has a control response (`C*`) and, where it qualifies, a treated
//! response (`I1`, `I2`, and `Iφ`/`Iψ` for group 3 under strategy 1/2).
//!
//! Four setups are compared:
//!
//! 1. group 3 only, strategy 1 vs strategy 2;
//! 2. all users, each analysis group receiving one strategy;
//! 3. as 2 but without group 0 (no dilution);
//! 4. dual control: a control and a treatment cell per strategy, difference of differences.
//!
//! Every random split is 50/50 and headcounts are treated as reals.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::distkit::normal_quantile;
use crate::error::{ensure, invalid, Result};
use crate::simlab::{
    bootstrap_ci, noisy_bisection, run_indexed, sorted_quantile, BisectionBudget,
    BootstrapInterval, McConfig, McRng, Statistic,
};

/// Response group: control or treatment arm of a user group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Group {
    C0,
    C1,
    C2,
    C3,
    I1,
    I2,
    IPhi,
    IPsi,
}

impl Group {
    pub const ALL: [Group; 8] = [
        Group::C0,
        Group::C1,
        Group::C2,
        Group::C3,
        Group::I1,
        Group::I2,
        Group::IPhi,
        Group::IPsi,
    ];

    /// Key suffix used in scenario files (`mu_<name>`, `var_<name>`).
    pub fn name(self) -> &'static str {
        match self {
            Group::C0 => "C0",
            Group::C1 => "C1",
            Group::C2 => "C2",
            Group::C3 => "C3",
            Group::I1 => "I1",
            Group::I2 => "I2",
            Group::IPhi => "Iphi",
            Group::IPsi => "Ipsi",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

fn default_alpha() -> f64 {
    0.05
}

fn default_power() -> f64 {
    0.8
}

/// User-group sizes, response moments, and test parameters.
///
/// Field names follow the flat key-value scenario file (`n0`, `mu_C0`, `var_Ipsi`, `power`, ...).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PseScenario {
    pub n0: f64,
    pub n1: f64,
    pub n2: f64,
    pub n3: f64,
    #[serde(rename = "mu_C0")]
    pub mu_c0: f64,
    #[serde(rename = "mu_C1")]
    pub mu_c1: f64,
    #[serde(rename = "mu_C2")]
    pub mu_c2: f64,
    #[serde(rename = "mu_C3")]
    pub mu_c3: f64,
    #[serde(rename = "mu_I1")]
    pub mu_i1: f64,
    #[serde(rename = "mu_I2")]
    pub mu_i2: f64,
    #[serde(rename = "mu_Iphi")]
    pub mu_iphi: f64,
    #[serde(rename = "mu_Ipsi")]
    pub mu_ipsi: f64,
    #[serde(rename = "var_C0")]
    pub var_c0: f64,
    #[serde(rename = "var_C1")]
    pub var_c1: f64,
    #[serde(rename = "var_C2")]
    pub var_c2: f64,
    #[serde(rename = "var_C3")]
    pub var_c3: f64,
    #[serde(rename = "var_I1")]
    pub var_i1: f64,
    #[serde(rename = "var_I2")]
    pub var_i2: f64,
    #[serde(rename = "var_Iphi")]
    pub var_iphi: f64,
    #[serde(rename = "var_Ipsi")]
    pub var_ipsi: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Minimum power π_min the MDE is defined at.
    #[serde(rename = "power", default = "default_power")]
    pub power_target: f64,
}

impl PseScenario {
    /// Scenario from group sizes `[n0, n1, n2, n3]` and means/variances in [`Group::ALL`] order,
    /// at α = 5% and 80% power.
    pub fn new(n: [f64; 4], mu: [f64; 8], var: [f64; 8]) -> Self {
        Self {
            n0: n[0],
            n1: n[1],
            n2: n[2],
            n3: n[3],
            mu_c0: mu[0],
            mu_c1: mu[1],
            mu_c2: mu[2],
            mu_c3: mu[3],
            mu_i1: mu[4],
            mu_i2: mu[5],
            mu_iphi: mu[6],
            mu_ipsi: mu[7],
            var_c0: var[0],
            var_c1: var[1],
            var_c2: var[2],
            var_c3: var[3],
            var_i1: var[4],
            var_i2: var[5],
            var_iphi: var[6],
            var_ipsi: var[7],
            alpha: default_alpha(),
            power_target: default_power(),
        }
    }

    pub fn with_test(mut self, alpha: f64, power_target: f64) -> Self {
        self.alpha = alpha;
        self.power_target = power_target;
        self
    }

    pub fn mu(&self, g: Group) -> f64 {
        self.means()[g.index()]
    }

    pub fn var(&self, g: Group) -> f64 {
        self.variances()[g.index()]
    }

    pub fn means(&self) -> [f64; 8] {
        [
            self.mu_c0,
            self.mu_c1,
            self.mu_c2,
            self.mu_c3,
            self.mu_i1,
            self.mu_i2,
            self.mu_iphi,
            self.mu_ipsi,
        ]
    }

    pub fn variances(&self) -> [f64; 8] {
        [
            self.var_c0,
            self.var_c1,
            self.var_c2,
            self.var_c3,
            self.var_i1,
            self.var_i2,
            self.var_iphi,
            self.var_ipsi,
        ]
    }

    pub fn sizes(&self) -> [f64; 4] {
        [self.n0, self.n1, self.n2, self.n3]
    }

    /// Number of users qualifying for at least one strategy.
    pub fn n_qualified(&self) -> f64 {
        self.n1 + self.n2 + self.n3
    }

    pub fn n_total(&self) -> f64 {
        self.n0 + self.n_qualified()
    }

    /// Checks the scenario-wide invariants; per-setup size requirements are checked by
    /// [`evaluate_setup`].
    pub fn validate(&self) -> Result<()> {
        for (i, n) in self.sizes().iter().enumerate() {
            ensure(n.is_finite() && *n >= 0.0, || {
                format!("group {i} size n{i} must be a non-negative count, got {n}")
            })?;
        }
        for g in Group::ALL {
            let (m, v) = (self.mu(g), self.var(g));
            ensure(m.is_finite(), || {
                format!("mean of group {} must be finite, got {m}", g.name())
            })?;
            ensure(v.is_finite() && v > 0.0, || {
                format!("variance of group {} must be positive, got {v}", g.name())
            })?;
        }
        ensure(self.alpha > 0.0 && self.alpha < 1.0, || {
            format!("alpha must lie in (0, 1), got {}", self.alpha)
        })?;
        ensure(
            self.power_target > 0.5 * self.alpha && self.power_target < 1.0,
            || format!("power must lie in (alpha/2, 1), got {}", self.power_target),
        )
    }

    /// Multiplier z_{1-α/2} − z_{1-π} of the MDE.
    pub fn z(&self) -> Result<f64> {
        z_multiplier(self.alpha, self.power_target)
    }

    /// Size-weighted treatment-minus-control sum
    /// η = n1(μ_C1 − μ_I1) + n2(μ_I2 − μ_C2) + n3(μ_Iψ − μ_Iφ).
    pub fn eta(&self) -> f64 {
        self.n1 * (self.mu_c1 - self.mu_i1)
            + self.n2 * (self.mu_i2 - self.mu_c2)
            + self.n3 * (self.mu_ipsi - self.mu_iphi)
    }

    /// Size-weighted variance sum
    /// ξ = n1(σ²_C1 + σ²_I1) + n2(σ²_C2 + σ²_I2) + n3(σ²_Iφ + σ²_Iψ).
    pub fn xi(&self) -> f64 {
        self.n1 * (self.var_c1 + self.var_i1)
            + self.n2 * (self.var_c2 + self.var_i2)
            + self.n3 * (self.var_iphi + self.var_ipsi)
    }

    fn dual_p(&self) -> f64 {
        self.n1 * (self.var_c1 + self.var_i1) + self.n3 * (self.var_c3 + self.var_iphi)
    }

    fn dual_q(&self) -> f64 {
        self.n2 * (self.var_c2 + self.var_i2) + self.n3 * (self.var_c3 + self.var_ipsi)
    }

    /// Strategy 1 lift over control among its qualifiers, (n1(μ_I1 − μ_C1) + n3(μ_Iφ − μ_C3))/(n1 + n3).
    fn lift_a(&self) -> f64 {
        (self.n1 * (self.mu_i1 - self.mu_c1) + self.n3 * (self.mu_iphi - self.mu_c3))
            / (self.n1 + self.n3)
    }

    /// Strategy 2 lift over control among its qualifiers.
    fn lift_b(&self) -> f64 {
        (self.n2 * (self.mu_i2 - self.mu_c2) + self.n3 * (self.mu_ipsi - self.mu_c3))
            / (self.n2 + self.n3)
    }

    fn check_setup(&self, setup_id: u8) -> Result<()> {
        self.validate()?;
        match setup_id {
            1 => ensure(self.n3 >= 2.0, || {
                format!(
                    "setup 1 needs at least 2 users in group 3 (n3), got {}",
                    self.n3
                )
            }),
            2 | 3 => ensure(self.n_qualified() >= 2.0, || {
                format!("setup {setup_id} needs at least 2 users across groups 1, 2 and 3 (n1+n2+n3), got {}", self.n_qualified())
            }),
            4 => {
                ensure(self.n_qualified() >= 2.0, || {
                    format!("setup 4 needs at least 2 users across groups 1, 2 and 3 (n1+n2+n3), got {}", self.n_qualified())
                })?;
                ensure(self.n1 + self.n3 > 0.0, || {
                    "setup 4 needs users in group 1 or group 3 (n1+n3 > 0)".into()
                })?;
                ensure(self.n2 + self.n3 > 0.0, || {
                    "setup 4 needs users in group 2 or group 3 (n2+n3 > 0)".into()
                })
            }
            other => invalid(format!("setup id must be 1, 2, 3 or 4, got {other}")),
        }
    }
}

/// z_{1-α/2} − z_{1-π}.
pub fn z_multiplier(alpha: f64, power: f64) -> Result<f64> {
    ensure(alpha > 0.0 && alpha < 1.0, || {
        format!("alpha must lie in (0, 1), got {alpha}")
    })?;
    ensure(power > 0.0 && power < 1.0, || {
        format!("power must lie in (0, 1), got {power}")
    })?;
    Ok(normal_quantile(1.0 - 0.5 * alpha)? - normal_quantile(1.0 - power)?)
}

/// Actual effect size and MDE of one setup.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SetupEvaluation {
    pub setup_id: u8,
    pub actual_effect: f64,
    pub mde: f64,
}

/// Δ and θ* of setup `setup_id` (1 to 4) under `scenario`.
pub fn evaluate_setup(setup_id: u8, scenario: &PseScenario) -> Result<SetupEvaluation> {
    let s = scenario;
    s.check_setup(setup_id)?;
    let z = s.z()?;
    let n123 = s.n_qualified();
    let ntot = s.n_total();
    let (actual_effect, mde) = match setup_id {
        1 => (
            s.mu_ipsi - s.mu_iphi,
            z * ((s.var_iphi + s.var_ipsi) / (0.5 * s.n3)).sqrt(),
        ),
        2 => (
            s.eta() / ntot,
            z * (2.0 * (2.0 * s.n0 * s.var_c0 + s.xi())).sqrt() / ntot,
        ),
        3 => (s.eta() / n123, z * (2.0 * s.xi()).sqrt() / n123),
        _ => {
            let a = s.n1 + s.n3;
            let b = s.n2 + s.n3;
            (
                s.lift_b() - s.lift_a(),
                2.0 * z * (s.dual_p() / (a * a) + s.dual_q() / (b * b)).sqrt(),
            )
        }
    };
    Ok(SetupEvaluation {
        setup_id,
        actual_effect,
        mde,
    })
}

/// Which side of a comparison came out ahead.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    ASuperior,
    BSuperior,
    Neither,
}

/// Rule that decided a comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    /// Higher actual effect and lower MDE.
    Dominance,
    /// Gain in actual effect exceeds the loss in sensitivity.
    GainOverLoss,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub verdict: Verdict,
    pub criterion: Criterion,
    /// Both effects were negative and were negated (analysis groups swapped).
    pub swapped: bool,
    /// The effects have opposite signs, which usually points at a mislabelled setup.
    pub likely_error: bool,
}

fn effect_sign(a: f64, b: f64) -> f64 {
    if a <= 0.0 && b <= 0.0 && (a < 0.0 || b < 0.0) {
        -1.0
    } else {
        1.0
    }
}

/// Compares two setups: dominance first, then gain over loss for `a`, then both for `b`.
pub fn compare(a: &SetupEvaluation, b: &SetupEvaluation) -> Comparison {
    let sign = effect_sign(a.actual_effect, b.actual_effect);
    let (da, db) = (sign * a.actual_effect, sign * b.actual_effect);
    let (ta, tb) = (a.mde, b.mde);
    let (verdict, criterion) = if da > db && ta < tb {
        (Verdict::ASuperior, Criterion::Dominance)
    } else if da - db > ta - tb {
        (Verdict::ASuperior, Criterion::GainOverLoss)
    } else if db > da && tb < ta {
        (Verdict::BSuperior, Criterion::Dominance)
    } else if db - da > tb - ta {
        (Verdict::BSuperior, Criterion::GainOverLoss)
    } else {
        (Verdict::Neither, Criterion::None)
    };
    Comparison {
        verdict,
        criterion,
        swapped: sign < 0.0,
        likely_error: a.actual_effect * b.actual_effect < 0.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DilutionVerdict {
    /// Including group 0 (setup 2) is worse than leaving it out (setup 3).
    DilutedWorse,
    DilutedBetter,
    Inconclusive,
}

/// Rearranged inequality that settled the dilution question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DilutionRule {
    /// σ²_C0 exceeds the variance threshold, so setup 3 has the lower MDE.
    VarianceThreshold,
    /// (n_tot/n0)·θ*_S3 ≤ Δ_S3.
    Strong,
    /// θ*_S3 ≤ Δ_S3: the undiluted experiment is already adequately powered.
    Weak,
    /// Squared comparison of the group-0 standard error against the gap θ*_S3 − Δ_S3.
    Fallback,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DilutionAdvice {
    pub verdict: DilutionVerdict,
    pub rule: DilutionRule,
    /// ξ(n0 + 2n_q)/(2n_q²): setup 3 has the lower MDE when σ²_C0 exceeds it.
    pub variance_threshold: f64,
    /// 2σ²_C0/n0, set when the fallback was evaluated.
    pub fallback_lhs: Option<f64>,
    /// ((θ*_S3 − Δ_S3 + aθ*_S3)² − (aθ*_S3)²)/(2z²) with a = n_q/n0.
    pub fallback_rhs: Option<f64>,
    /// Direct comparison of setup 3 (a) against setup 2 (b).
    pub direct: Comparison,
    /// Whether the rule verdict matches `direct`.
    pub consistent: bool,
}

/// Variance threshold with equal variances σ²_G across qualified groups: σ²_G(n0/n_q + 2).
pub fn equal_variance_dilution_threshold(var_g: f64, n0: f64, n_qualified: f64) -> f64 {
    var_g * (n0 / n_qualified + 2.0)
}

/// Whether diluting the experiment with group 0 helps, decided by the first rule that is decisive.
pub fn dilution_advice(scenario: &PseScenario) -> Result<DilutionAdvice> {
    let s = scenario;
    s.validate()?;
    ensure(s.n0 > 0.0, || {
        "no dilution possible: group 0 is empty (n0 = 0)".into()
    })?;
    let s2 = evaluate_setup(2, s)?;
    let s3 = evaluate_setup(3, s)?;
    let direct = compare(&s3, &s2);

    let z = s.z()?;
    let n0 = s.n0;
    let nq = s.n_qualified();
    let xi = s.xi();
    // both effects share the sign of η, so the swap convention is a sign flip of η
    let delta3 = s.eta().abs() / nq;
    let theta3 = z * (2.0 * xi).sqrt() / nq;
    let variance_threshold = xi * (n0 + 2.0 * nq) / (2.0 * nq * nq);

    let mut fallback_lhs = None;
    let mut fallback_rhs = None;
    let (verdict, rule) = if variance_threshold < s.var_c0 {
        (
            DilutionVerdict::DilutedWorse,
            DilutionRule::VarianceThreshold,
        )
    } else if (n0 + nq) / n0 * theta3 <= delta3 {
        (DilutionVerdict::DilutedWorse, DilutionRule::Strong)
    } else if theta3 <= delta3 {
        (DilutionVerdict::DilutedWorse, DilutionRule::Weak)
    } else {
        let a = nq / n0;
        let lhs = 2.0 * s.var_c0 / n0;
        let gap = theta3 - delta3 + a * theta3;
        let rhs = (gap * gap - (a * theta3).powi(2)) / (2.0 * z * z);
        fallback_lhs = Some(lhs);
        fallback_rhs = Some(rhs);
        let verdict = if lhs > rhs {
            DilutionVerdict::DilutedWorse
        } else if lhs < rhs {
            DilutionVerdict::DilutedBetter
        } else {
            DilutionVerdict::Inconclusive
        };
        (verdict, DilutionRule::Fallback)
    };
    let expected = match direct.verdict {
        Verdict::ASuperior => DilutionVerdict::DilutedWorse,
        Verdict::BSuperior => DilutionVerdict::DilutedBetter,
        Verdict::Neither => DilutionVerdict::Inconclusive,
    };
    let consistent = expected == verdict;
    if !consistent {
        log::warn!(
            "dilution rule {rule:?} gave {verdict:?} but the direct comparison gave {expected:?}"
        );
    }
    Ok(DilutionAdvice {
        verdict,
        rule,
        variance_threshold,
        fallback_lhs,
        fallback_rhs,
        direct,
        consistent,
    })
}

/// (2√12(√6 − 1)z)², the equal-size, equal-variance sample-size coefficient for dual control.
pub fn dual_control_coefficient(alpha: f64, power: f64) -> Result<f64> {
    let z = z_multiplier(alpha, power)?;
    Ok((2.0 * 12f64.sqrt() * (6f64.sqrt() - 1.0) * z).powi(2))
}

/// Users per group above which dual control beats the simple A/B test when sizes and
/// variances are equal: coefficient · σ²_G / Δ².
pub fn dual_control_min_n(var_g: f64, delta: f64, alpha: f64, power: f64) -> Result<f64> {
    ensure(var_g > 0.0 && var_g.is_finite(), || {
        format!("variance must be positive, got {var_g}")
    })?;
    ensure(delta > 0.0 && delta.is_finite(), || {
        format!("effect difference must be positive, got {delta}")
    })?;
    Ok(dual_control_coefficient(alpha, power)? * var_g / (delta * delta))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DualControlVerdict {
    S4Superior,
    S3Superior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualControlAdvice {
    pub verdict: DualControlVerdict,
    /// (n1·B − n2·A)/√ξ, with A and B the per-strategy lifts over control.
    pub lhs: f64,
    pub rhs: f64,
    /// RHS under equal variances, set when the seven qualified-group variances agree.
    pub rhs_equal_variance: Option<f64>,
    /// LHS under equal sizes, set when n1 = n2 = n3.
    pub lhs_equal_size: Option<f64>,
    /// Minimum users per group, set when both simplifications apply and the effect difference is positive.
    pub min_n_equalized: Option<f64>,
    /// Δ_S4 − Δ_S3 after the sign convention.
    pub effect_gain: f64,
    pub mde_loss: f64,
    pub note: Option<String>,
    /// Direct comparison of setup 4 (a) against setup 3 (b).
    pub direct: Comparison,
    pub consistent: bool,
}

const SIMPLIFICATION_TOL: f64 = 1e-9;

fn all_close(xs: &[f64]) -> bool {
    let scale = xs.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    xs.iter()
        .all(|x| (x - xs[0]).abs() <= SIMPLIFICATION_TOL * scale)
}

/// Whether dual control (setup 4) beats the simple A/B test (setup 3). Dual control
/// never has the lower MDE, so only the gain-over-loss inequality is evaluated.
pub fn dual_control_threshold(scenario: &PseScenario) -> Result<DualControlAdvice> {
    let s = scenario;
    s.validate()?;
    ensure(s.n1 >= 1.0 && s.n2 >= 1.0 && s.n3 >= 1.0, || {
        format!("dual control needs at least one user in each of groups 1, 2 and 3, got n1={}, n2={}, n3={}", s.n1, s.n2, s.n3)
    })?;
    let s3 = evaluate_setup(3, s)?;
    let s4 = evaluate_setup(4, s)?;
    let direct = compare(&s4, &s3);
    let sign = effect_sign(s4.actual_effect, s3.actual_effect);

    let z = s.z()?;
    let nq = s.n_qualified();
    let (na, nb) = (s.n1 + s.n3, s.n2 + s.n3);
    let xi = s.xi();
    let lhs = sign * (s.n1 * s.lift_b() - s.n2 * s.lift_a()) / xi.sqrt();
    let spread = 2.0 * ((nq / na).powi(2) * s.dual_p() + (nq / nb).powi(2) * s.dual_q()) / xi;
    let rhs = 2f64.sqrt() * z * (spread.sqrt() - 1.0);

    let qualified_vars = [
        s.var_c1, s.var_c2, s.var_c3, s.var_i1, s.var_i2, s.var_iphi, s.var_ipsi,
    ];
    let equal_var = all_close(&qualified_vars);
    let equal_n = all_close(&[s.n1, s.n2, s.n3]);
    let rhs_equal_variance =
        equal_var.then(|| 2f64.sqrt() * z * ((2.0 * (nq / na + nq / nb)).sqrt() - 1.0));
    let delta = sign * ((s.mu_i2 - s.mu_c2) - (s.mu_i1 - s.mu_c1) + s.mu_ipsi - s.mu_iphi);
    let lhs_equal_size = equal_n.then(|| {
        let six = s.var_c1 + s.var_i1 + s.var_c2 + s.var_i2 + s.var_iphi + s.var_ipsi;
        s.n1.sqrt() * delta / (2.0 * six.sqrt())
    });
    let min_n_equalized = if equal_var && equal_n && delta > 0.0 {
        Some(dual_control_min_n(
            s.var_c1,
            delta,
            s.alpha,
            s.power_target,
        )?)
    } else {
        None
    };

    let effect_gain = sign * (s4.actual_effect - s3.actual_effect);
    let mde_loss = s4.mde - s3.mde;
    let verdict = if lhs > rhs {
        DualControlVerdict::S4Superior
    } else {
        DualControlVerdict::S3Superior
    };
    let note = if effect_gain <= 0.0 {
        Some(
            "dual control gains no actual effect over the simple test, so it cannot be superior"
                .to_string(),
        )
    } else if direct.likely_error {
        Some("setups 3 and 4 have effects of opposite sign, check the group labels".to_string())
    } else {
        None
    };
    let consistent =
        (verdict == DualControlVerdict::S4Superior) == (direct.verdict == Verdict::ASuperior);
    if !consistent {
        log::warn!(
            "dual-control inequality gave {verdict:?} but the direct comparison gave {:?}",
            direct.verdict
        );
    }
    Ok(DualControlAdvice {
        verdict,
        lhs,
        rhs,
        rhs_equal_variance,
        lhs_equal_size,
        min_n_equalized,
        effect_gain,
        mde_loss,
        note,
        direct,
        consistent,
    })
}

/// Bounds for random scenarios. Means are uniform, variances uniform, and each group size
/// is `size_scale · 10^U(log10_size)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRanges {
    pub mean: (f64, f64),
    pub variance: (f64, f64),
    pub size_scale: f64,
    pub log10_size: (f64, f64),
}

impl Default for ScenarioRanges {
    fn default() -> Self {
        Self {
            mean: (-10.0, 10.0),
            variance: (1.0, 10.0),
            size_scale: 5.0,
            log10_size: (1.0, 3.5),
        }
    }
}

impl ScenarioRanges {
    pub fn draw(&self, rng: &mut impl Rng) -> PseScenario {
        let n = std::array::from_fn(|_| {
            self.size_scale * 10f64.powf(rng.random_range(self.log10_size.0..self.log10_size.1))
        });
        let mu = std::array::from_fn(|_| rng.random_range(self.mean.0..self.mean.1));
        let var = std::array::from_fn(|_| rng.random_range(self.variance.0..self.variance.1));
        PseScenario::new(n, mu, var)
    }
}

/// How verification draws analysis-group means.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseSampling {
    /// Each user-group cell mean drawn from its exact normal sampling distribution.
    CellMeans,
    /// Individual normal responses, with cell headcounts rounded to whole users.
    PerUser,
}

/// Empirical MDE search settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MdeSearch {
    pub budget: BisectionBudget,
    /// Null-effect draws used to fix the critical value.
    pub null_draws: usize,
}

impl Default for MdeSearch {
    fn default() -> Self {
        Self {
            budget: BisectionBudget::default(),
            null_draws: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    /// Seed, simulated effects per setup, workers and bootstrap resamples.
    pub mc: McConfig,
    /// Setups to verify; `None` takes every setup the scenario supports.
    pub setups: Option<Vec<u8>>,
    pub mde: Option<MdeSearch>,
    pub sampling: ResponseSampling,
    /// Two-sided level of the bootstrap interval.
    pub ci_alpha: f64,
}

impl VerifyConfig {
    pub fn new(seed: u64, runs: usize) -> Self {
        Self {
            mc: McConfig::new(seed, runs).with_resamples(1_000),
            setups: None,
            mde: None,
            sampling: ResponseSampling::CellMeans,
            ci_alpha: 0.05,
        }
    }

    pub fn with_setups(mut self, setups: Vec<u8>) -> Self {
        self.setups = Some(setups);
        self
    }

    pub fn with_mde(mut self, search: MdeSearch) -> Self {
        self.mde = Some(search);
        self
    }

    pub fn with_sampling(mut self, sampling: ResponseSampling) -> Self {
        self.sampling = sampling;
        self
    }

    pub fn with_resamples(mut self, resamples: usize) -> Self {
        self.mc.bootstrap_resamples = resamples;
        self
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.mc.workers = workers;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SetupVerification {
    pub setup_id: u8,
    pub theoretical_effect: f64,
    pub empirical_effect: f64,
    /// Monte Carlo standard error of `empirical_effect`.
    pub mc_se: f64,
    pub effect_ci: BootstrapInterval,
    pub effect_in_ci: bool,
    pub theoretical_mde: f64,
    pub empirical_mde: Option<f64>,
    /// (empirical − theoretical)/theoretical.
    pub mde_relative_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioVerification {
    pub runs: usize,
    pub setups: Vec<SetupVerification>,
}

/// One user-group cell inside an analysis group: its contribution to the effect estimate is
/// `coef · mean of k responses from group g`.
#[derive(Debug, Clone, Copy)]
struct Cell {
    coef: f64,
    mu: f64,
    sd: f64,
    k: f64,
}

/// Cells of an analysis group as (group, headcount) pairs.
type Arm = Vec<(Group, f64)>;

fn arms(setup_id: u8, s: &PseScenario) -> Vec<(f64, Arm)> {
    use Group::*;
    match setup_id {
        1 => vec![
            (-1.0, vec![(IPhi, s.n3 / 2.0)]),
            (1.0, vec![(IPsi, s.n3 / 2.0)]),
        ],
        2 => vec![
            (
                -1.0,
                vec![
                    (C0, s.n0 / 2.0),
                    (I1, s.n1 / 2.0),
                    (C2, s.n2 / 2.0),
                    (IPhi, s.n3 / 2.0),
                ],
            ),
            (
                1.0,
                vec![
                    (C0, s.n0 / 2.0),
                    (C1, s.n1 / 2.0),
                    (I2, s.n2 / 2.0),
                    (IPsi, s.n3 / 2.0),
                ],
            ),
        ],
        3 => vec![
            (
                -1.0,
                vec![(I1, s.n1 / 2.0), (C2, s.n2 / 2.0), (IPhi, s.n3 / 2.0)],
            ),
            (
                1.0,
                vec![(C1, s.n1 / 2.0), (I2, s.n2 / 2.0), (IPsi, s.n3 / 2.0)],
            ),
        ],
        _ => vec![
            (1.0, vec![(C1, s.n1 / 4.0), (C3, s.n3 / 4.0)]),
            (-1.0, vec![(I1, s.n1 / 4.0), (IPhi, s.n3 / 4.0)]),
            (-1.0, vec![(C2, s.n2 / 4.0), (C3, s.n3 / 4.0)]),
            (1.0, vec![(I2, s.n2 / 4.0), (IPsi, s.n3 / 4.0)]),
        ],
    }
}

fn cells(setup_id: u8, s: &PseScenario, null: bool, sampling: ResponseSampling) -> Vec<Cell> {
    let mut out = Vec::new();
    for (sign, arm) in arms(setup_id, s) {
        let arm: Vec<(Group, f64)> = match sampling {
            ResponseSampling::CellMeans => arm.into_iter().filter(|(_, k)| *k > 0.0).collect(),
            ResponseSampling::PerUser => arm
                .into_iter()
                .map(|(g, k)| (g, k.round()))
                .filter(|(_, k)| *k > 0.0)
                .collect(),
        };
        let size: f64 = arm.iter().map(|(_, k)| k).sum();
        for (g, k) in arm {
            out.push(Cell {
                coef: sign * k / size,
                mu: if null { 0.0 } else { s.mu(g) },
                sd: s.var(g).sqrt(),
                k,
            });
        }
    }
    out
}

fn draw_effect(cells: &[Cell], sampling: ResponseSampling, rng: &mut McRng) -> f64 {
    cells
        .iter()
        .map(|c| {
            let mean = match sampling {
                ResponseSampling::CellMeans => {
                    let z: f64 = StandardNormal.sample(rng);
                    c.mu + c.sd / c.k.sqrt() * z
                }
                ResponseSampling::PerUser => {
                    let users = c.k as usize;
                    let total: f64 = (0..users)
                        .map(|_| {
                            let z: f64 = StandardNormal.sample(rng);
                            c.mu + c.sd * z
                        })
                        .sum();
                    total / users as f64
                }
            };
            c.coef * mean
        })
        .sum()
}

fn setup_seed(seed: u64, setup_id: u8, salt: u64) -> u64 {
    seed ^ (u64::from(setup_id) << 56) ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

fn empirical_mde(
    setup_id: u8,
    s: &PseScenario,
    sampling: ResponseSampling,
    search: &MdeSearch,
    seed: u64,
    workers: usize,
) -> Result<f64> {
    ensure(search.null_draws >= 1_000, || {
        format!(
            "at least 1000 null draws are needed, got {}",
            search.null_draws
        )
    })?;
    let null_cells = cells(setup_id, s, true, sampling);
    let mut null: Vec<f64> = run_indexed(
        setup_seed(seed, setup_id, 2),
        search.null_draws,
        workers,
        |_, rng| draw_effect(&null_cells, sampling, rng).abs(),
    );
    null.sort_by(f64::total_cmp);
    let critical = sorted_quantile(&null, 1.0 - s.alpha);
    // |effect| under the null is half-normal, so its mean times √(π/2) is the spread
    let spread = null.iter().sum::<f64>() / null.len() as f64 * (std::f64::consts::PI / 2.0).sqrt();
    let power = |theta: f64, rng: &mut McRng| {
        let d = theta + draw_effect(&null_cells, sampling, rng);
        if d.abs() > critical {
            1.0
        } else {
            0.0
        }
    };
    let result = noisy_bisection(
        power,
        s.power_target,
        (0.0, 8.0 * spread),
        search.budget,
        setup_seed(seed, setup_id, 3),
    )?;
    Ok(result.estimate)
}

/// Simulates the effect estimate of each setup and compares its mean with Δ, and optionally
/// searches for the effect size that reaches the target power by noisy bisection.
pub fn verify_scenario(
    scenario: &PseScenario,
    config: &VerifyConfig,
) -> Result<ScenarioVerification> {
    scenario.validate()?;
    config.mc.validate()?;
    ensure(config.mc.runs >= 1_000, || {
        format!(
            "verification needs at least 1000 runs, got {}",
            config.mc.runs
        )
    })?;
    let setups: Vec<u8> = match &config.setups {
        Some(list) => list.clone(),
        None => (1..=4)
            .filter(|&id| scenario.check_setup(id).is_ok())
            .collect(),
    };
    let seed = config.mc.seed;
    let mut out = Vec::with_capacity(setups.len());
    for setup_id in setups {
        let theory = evaluate_setup(setup_id, scenario)?;
        let effect_cells = cells(setup_id, scenario, false, config.sampling);
        let samples: Vec<f64> = run_indexed(
            setup_seed(seed, setup_id, 0),
            config.mc.runs,
            config.mc.workers,
            |_, rng| draw_effect(&effect_cells, config.sampling, rng),
        );
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let ci = bootstrap_ci(
            &samples,
            Statistic::Mean,
            config.mc.bootstrap_resamples,
            config.ci_alpha,
            setup_seed(seed, setup_id, 1),
        )?;
        let empirical_mde = match &config.mde {
            Some(search) => Some(empirical_mde(
                setup_id,
                scenario,
                config.sampling,
                search,
                seed,
                config.mc.workers,
            )?),
            None => None,
        };
        out.push(SetupVerification {
            setup_id,
            theoretical_effect: theory.actual_effect,
            empirical_effect: mean,
            mc_se: (var / n).sqrt(),
            effect_ci: ci,
            effect_in_ci: ci.contains(theory.actual_effect),
            theoretical_mde: theory.mde,
            empirical_mde,
            mde_relative_error: empirical_mde.map(|m| (m - theory.mde) / theory.mde),
        });
    }
    Ok(ScenarioVerification {
        runs: config.mc.runs,
        setups: out,
    })
}
