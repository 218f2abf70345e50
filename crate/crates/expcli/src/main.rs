use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use demlab::clusterse::{bootstrap_se, compare_se, vanilla_se_from, Scheme};
use demlab::pse::{
    compare, dilution_advice, dual_control_threshold, evaluate_setup, verify_scenario, MdeSearch,
    PseScenario, ResponseSampling, SetupEvaluation, VerifyConfig,
};
use demlab::rulu::{
    expected_selected_value, gain_variance, relative_gain, sharpe_ratio, simulate, NoiseLevel,
    RuluParams, SimOptions, ValueFamily,
};
use demlab::seqkit::{replay, Checkpoint, Monitor, ReplayConfig, Tau2};
use demlab::simlab::{bootstrap_mean_var, run_indexed, BootstrapInterval};
use demlab::testkit::{
    binomial_exact_test, chi2_gof_at, cohens_d, mann_whitney_u, mde, power, required_sample_size,
    welch_t_test, z_test, Alternative, MannWhitneyMethod, PowerForm, SampleSummary, TReference,
};
use expcli::data::{aggregate_transactions_csv, read_checkpoint_csv, read_responses_csv};
use expcli::report::object;
use expcli::{read_scenario, CheckpointSeries, DataError, Format, Report};
use serde::Serialize;
use serde_json::{json, Value};

const DEFAULT_SEED: u64 = 20_240_601;

#[derive(Parser)]
#[command(
    name = "expcli",
    version,
    about = "Design, monitor and verify online experiments"
)]
struct Cli {
    /// Output format.
    #[arg(long, value_enum, default_value_t = Format::Json, global = true)]
    format: Format,
    /// Seed for stochastic commands.
    #[arg(long, env = "DEMLAB_SEED", default_value_t = DEFAULT_SEED, global = true)]
    seed: u64,
    /// Worker threads for Monte Carlo commands, 0 for all cores.
    #[arg(long, default_value_t = 0, global = true)]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Expected gain, its variance and Sharpe ratio from cutting estimation noise.
    RuluValue(RuluArgs),
    /// Monte Carlo check of the ranking-under-lower-uncertainty moments.
    RuluVerify(RuluVerifyArgs),
    /// Power of a two-sample test.
    Power(PowerArgs),
    /// Per-group sample size reaching a power target.
    Samplesize(SampleSizeArgs),
    /// Minimum detectable effect.
    Mde(MdeArgs),
    /// Hypothesis test on a responses CSV.
    Test(TestArgs),
    /// Sample-ratio-mismatch check.
    Srm(SrmArgs),
    /// Replay checkpoint series through the mixture SPRT.
    MsprtReplay(MsprtArgs),
    /// Replay checkpoint series through the Bayes-factor monitor.
    BayesReplay(BayesArgs),
    /// Compare a sequential monitor with the fixed-horizon t test over a directory of series.
    Confusion(ConfusionArgs),
    /// Clustered bootstrap standard error of a transactions CSV.
    BootstrapSe(BootstrapSeArgs),
    /// Actual effect and MDE of each experiment setup.
    PseEval(PseEvalArgs),
    /// Pairwise setup comparison.
    PseCompare(PseCompareArgs),
    /// Dilution and dual-control rules.
    PseAdvise(ScenarioArg),
    /// Monte Carlo check of setup effects and MDEs.
    PseVerify(PseVerifyArgs),
}

#[derive(Args)]
struct RuluArgs {
    /// Number of candidate items N.
    #[arg(long)]
    n: usize,
    /// Number of items selected M.
    #[arg(long)]
    m: usize,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    mu_v: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    mu_e: f64,
    /// Standard deviation of the true values.
    #[arg(long)]
    sigma_v: f64,
    /// Standard deviation of the current estimation noise.
    #[arg(long)]
    sigma1: f64,
    /// Standard deviation of the improved estimation noise.
    #[arg(long)]
    sigma2: f64,
    /// Plotting-position constant.
    #[arg(long, default_value_t = demlab::rulu::DEFAULT_QUANTILE_CORRECTION, allow_negative_numbers = true)]
    c: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    risk_free: f64,
}

impl RuluArgs {
    fn params(&self) -> Result<RuluParams> {
        Ok(RuluParams::new(
            self.n,
            self.m,
            self.mu_v,
            self.mu_e,
            self.sigma_v.powi(2),
            self.sigma1.powi(2),
            self.sigma2.powi(2),
        )?
        .with_quantile_correction(self.c)?)
    }
}

#[derive(Args)]
struct RuluVerifyArgs {
    #[command(flatten)]
    rulu: RuluArgs,
    #[arg(long, default_value_t = 10_000)]
    runs: usize,
    #[arg(long, default_value_t = 1_000)]
    resamples: usize,
    /// Draw values and noise from a Student t with this many degrees of freedom.
    #[arg(long)]
    dof: Option<f64>,
    /// Share of items that get the improved noise.
    #[arg(long, default_value_t = 1.0)]
    partial: f64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Form {
    Exact,
    Approx,
}

#[derive(Args)]
struct Design {
    #[arg(long)]
    var_a: f64,
    #[arg(long)]
    var_b: f64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value = "two-sided")]
    alternative: Alternative,
}

#[derive(Args)]
struct PowerArgs {
    #[command(flatten)]
    design: Design,
    #[arg(long, allow_negative_numbers = true)]
    theta: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    theta0: f64,
    #[arg(long)]
    n: f64,
    #[arg(long)]
    m: f64,
    #[arg(long, value_enum, default_value_t = Form::Exact)]
    form: Form,
}

#[derive(Args)]
struct SampleSizeArgs {
    #[command(flatten)]
    design: Design,
    #[arg(long, allow_negative_numbers = true)]
    theta: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    theta0: f64,
    #[arg(long, default_value_t = 0.8)]
    power: f64,
    /// Treatment size as a multiple of the control size.
    #[arg(long, default_value_t = 1.0)]
    ratio: f64,
}

#[derive(Args)]
struct MdeArgs {
    #[command(flatten)]
    design: Design,
    #[arg(long)]
    n: f64,
    #[arg(long)]
    m: f64,
    #[arg(long, default_value_t = 0.8)]
    power: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum TestName {
    Welch,
    Z,
    MannWhitney,
    CohensD,
    Binomial,
}

#[derive(Clone, Copy, ValueEnum)]
enum Reference {
    Practical,
    Welch,
}

#[derive(Clone, Copy, ValueEnum)]
enum MwMethod {
    Normal,
    Exact,
}

#[derive(Args)]
struct TestArgs {
    #[arg(long, value_enum)]
    test: TestName,
    /// Responses CSV (`unit_id,group,value`); not used by the binomial test.
    #[arg(long)]
    responses: Option<PathBuf>,
    /// Control group label; defaults to the first group in the file.
    #[arg(long)]
    control: Option<String>,
    /// Treatment group label; defaults to the second group in the file.
    #[arg(long)]
    treatment: Option<String>,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    delta0: f64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value = "two-sided")]
    alternative: Alternative,
    #[arg(long, value_enum, default_value_t = Reference::Practical)]
    reference: Reference,
    #[arg(long)]
    known_var_a: Option<f64>,
    #[arg(long)]
    known_var_b: Option<f64>,
    #[arg(long, value_enum, default_value_t = MwMethod::Normal)]
    method: MwMethod,
    #[arg(long)]
    successes: Option<u64>,
    #[arg(long)]
    trials: Option<u64>,
    #[arg(long, default_value_t = 0.5)]
    theta0: f64,
}

#[derive(Args)]
struct SrmArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    counts: Vec<u64>,
    #[arg(long, value_delimiter = ',', required = true)]
    ratios: Vec<f64>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
}

#[derive(Args)]
struct ReplayArgs {
    /// Checkpoint CSV (`experiment_id,variant_id,metric_id,time_index,count_c,mean_c,variance_c`).
    #[arg(long)]
    checkpoints: PathBuf,
    #[arg(long)]
    experiment: Option<String>,
    #[arg(long)]
    metric: Option<String>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    theta0: f64,
}

#[derive(Args)]
struct MixingArgs {
    /// Fixed mixing variance τ².
    #[arg(long, conflicts_with = "tau2_scale")]
    tau2: Option<f64>,
    /// Mixing variance as a multiple of the running control variance.
    #[arg(long)]
    tau2_scale: Option<f64>,
}

impl MixingArgs {
    fn tau2(&self) -> Result<Tau2> {
        match (self.tau2, self.tau2_scale) {
            (Some(t), None) => Ok(Tau2::Fixed(t)),
            (None, Some(s)) => Ok(Tau2::Scaled(s)),
            _ => Err(usage("one of --tau2 or --tau2-scale is required")),
        }
    }
}

#[derive(Args)]
struct MsprtArgs {
    #[command(flatten)]
    replay: ReplayArgs,
    #[command(flatten)]
    mixing: MixingArgs,
}

#[derive(Args)]
struct BayesPrior {
    /// Prior variance of the standardised effect under H1.
    #[arg(long)]
    v2: f64,
    #[arg(long, default_value_t = 0.5)]
    prior_h0: f64,
}

#[derive(Args)]
struct BayesArgs {
    #[command(flatten)]
    replay: ReplayArgs,
    #[command(flatten)]
    prior: BayesPrior,
}

#[derive(Clone, Copy, ValueEnum)]
enum MonitorKind {
    Msprt,
    Bayes,
}

#[derive(Args)]
struct ConfusionArgs {
    /// Directory of checkpoint CSVs; every `*.csv` file is read.
    #[arg(long)]
    dir: PathBuf,
    #[arg(long, value_enum)]
    monitor: MonitorKind,
    #[command(flatten)]
    mixing: MixingArgs,
    #[arg(long)]
    v2: Option<f64>,
    #[arg(long, default_value_t = 0.5)]
    prior_h0: f64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    theta0: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Oneway,
    Twoway,
}

#[derive(Args)]
struct BootstrapSeArgs {
    /// Transactions CSV (`user_id,product_id,value` or `user_id,value`).
    #[arg(long)]
    transactions: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Oneway)]
    mode: Mode,
    /// Bootstrap resamples.
    #[arg(long, default_value_t = 1_000)]
    b: usize,
}

#[derive(Args)]
struct ScenarioArg {
    /// Scenario file with keys n0..n3, mu_C0..mu_Ipsi, var_C0..var_Ipsi, alpha, power.
    #[arg(long)]
    scenario: PathBuf,
}

#[derive(Args)]
struct PseEvalArgs {
    #[command(flatten)]
    scenario: ScenarioArg,
    #[arg(long, value_delimiter = ',', default_values_t = [1u8, 2, 3, 4])]
    setups: Vec<u8>,
}

#[derive(Args)]
struct PseCompareArgs {
    #[command(flatten)]
    scenario: ScenarioArg,
    /// First setup; with `--b` compares one pair, otherwise every supported pair.
    #[arg(long, requires = "b")]
    a: Option<u8>,
    #[arg(long, requires = "a")]
    b: Option<u8>,
}

#[derive(Args)]
struct PseVerifyArgs {
    #[command(flatten)]
    scenario: ScenarioArg,
    #[arg(long, default_value_t = 10_000)]
    runs: usize,
    #[arg(long, value_delimiter = ',')]
    setups: Option<Vec<u8>>,
    /// Also search for the empirical MDE of each setup.
    #[arg(long)]
    mde: bool,
    /// Simulate individual users rather than cell means.
    #[arg(long)]
    per_user: bool,
    #[arg(long, default_value_t = 1_000)]
    resamples: usize,
}

/// A usage error raised after argument parsing.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct Usage(String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(report) => match report.render(cli.format) {
            Ok(text) => {
                print!("{text}");
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e:#}");
                ExitCode::from(3)
            }
        },
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(expcli::exit_code(&e))
        }
    }
}

fn run(cli: &Cli) -> Result<Report> {
    let seed = cli.seed;
    Ok(match &cli.command {
        Command::RuluValue(a) => rulu_value(a)?,
        Command::RuluVerify(a) => rulu_verify(a, seed, cli.workers)?,
        Command::Power(a) => {
            let d = &a.design;
            let form = match a.form {
                Form::Exact => PowerForm::Exact,
                Form::Approx => PowerForm::Approx,
            };
            let p = power(
                a.theta,
                a.theta0,
                d.var_a,
                d.var_b,
                a.n,
                a.m,
                d.alpha,
                d.alternative,
                form,
            )?;
            Report::new("power", json!({ "power": p }))?
        }
        Command::Samplesize(a) => {
            let d = &a.design;
            let s = required_sample_size(
                a.theta,
                a.theta0,
                d.var_a,
                d.var_b,
                d.alpha,
                a.power,
                d.alternative,
                a.ratio,
            )?;
            Report::new("samplesize", s)?
        }
        Command::Mde(a) => {
            let d = &a.design;
            let v = mde(d.var_a, d.var_b, a.n, a.m, d.alpha, a.power, d.alternative)?;
            Report::new("mde", json!({ "mde": v }))?
        }
        Command::Test(a) => test(a)?,
        Command::Srm(a) => {
            if a.counts.len() != a.ratios.len() {
                return Err(usage(format!(
                    "{} counts but {} ratios",
                    a.counts.len(),
                    a.ratios.len()
                )));
            }
            Report::new("srm", chi2_gof_at(&a.counts, &a.ratios, a.alpha)?)?
        }
        Command::MsprtReplay(a) => replay_command(
            "msprt-replay",
            &a.replay,
            Monitor::Msprt {
                tau2: a.mixing.tau2()?,
            },
        )?,
        Command::BayesReplay(a) => replay_command(
            "bayes-replay",
            &a.replay,
            Monitor::Bayes {
                v2: a.prior.v2,
                prior_h0: a.prior.prior_h0,
            },
        )?,
        Command::Confusion(a) => confusion(a, cli.workers)?,
        Command::BootstrapSe(a) => {
            let agg = aggregate_transactions_csv(&a.transactions)?;
            let scheme = match a.mode {
                Mode::Oneway => Scheme::OneWay,
                Mode::Twoway => Scheme::TwoWay,
            };
            let comparison = compare_se(&agg, scheme, a.b, seed)?;
            Report::new(
                "bootstrap-se",
                json!({
                    "mode": scheme,
                    "seed": seed,
                    "vanilla": vanilla_se_from(&agg)?,
                    "bootstrap": bootstrap_se(&agg, scheme, a.b, seed)?,
                    "ratio": comparison.ratio,
                }),
            )?
        }
        Command::PseEval(a) => pse_eval(a)?,
        Command::PseCompare(a) => pse_compare(a)?,
        Command::PseAdvise(a) => pse_advise(a)?,
        Command::PseVerify(a) => pse_verify(a, seed, cli.workers)?,
    })
}

fn rulu_value(a: &RuluArgs) -> Result<Report> {
    let p = a.params()?;
    let moments = gain_variance(&p)?;
    let sharpe = sharpe_ratio(moments.expected_gain, moments.var_gain, a.risk_free).ok();
    Report::new(
        "rulu-value",
        json!({
            "expected_w_high": moments.expected_w_high,
            "expected_w_low": moments.expected_w_low,
            "expected_gain": moments.expected_gain,
            "relative_gain": relative_gain(&p)?,
            "var_w_high": moments.var_w_high,
            "var_w_low": moments.var_w_low,
            "cov_w": moments.cov_w,
            "var_gain": moments.var_gain,
            "sharpe_ratio": sharpe,
            "risk_free": a.risk_free,
            "degenerate_fits": moments.degenerate_fits,
        }),
    )
    .map_err(Into::into)
}

#[derive(Serialize)]
struct MomentCheck {
    quantity: &'static str,
    theory: f64,
    empirical: f64,
    ci_low: f64,
    ci_high: f64,
    in_ci: bool,
}

fn check(quantity: &'static str, theory: f64, ci: &BootstrapInterval) -> MomentCheck {
    MomentCheck {
        quantity,
        theory,
        empirical: ci.estimate,
        ci_low: ci.low,
        ci_high: ci.high,
        in_ci: ci.contains(theory),
    }
}

fn rulu_verify(a: &RuluVerifyArgs, seed: u64, workers: usize) -> Result<Report> {
    let mut p = a.rulu.params()?;
    if let Some(dof) = a.dof {
        p = p.with_family(ValueFamily::StudentT { dof })?;
    }
    let options = SimOptions {
        partial_noise_fraction: a.partial,
        workers,
        ..SimOptions::default()
    };
    let samples = simulate(&p, a.runs, seed, &options)?;
    let cis = bootstrap_mean_var(
        &[&samples.w_high, &samples.w_low, &samples.gain],
        a.resamples,
        a.alpha,
        seed ^ 0x5eed,
    )?;
    let moments = gain_variance(&p)?;
    let rows = vec![
        check(
            "e_w_high",
            expected_selected_value(&p, NoiseLevel::High)?,
            &cis[0].0,
        ),
        check(
            "e_w_low",
            expected_selected_value(&p, NoiseLevel::Low)?,
            &cis[1].0,
        ),
        check("e_gain", moments.expected_gain, &cis[2].0),
        check("var_w_high", moments.var_w_high, &cis[0].1),
        check("var_w_low", moments.var_w_low, &cis[1].1),
        check("var_gain", moments.var_gain, &cis[2].1),
    ];
    let covered = rows.iter().filter(|r| r.in_ci).count();
    Report::new(
        "rulu-verify",
        json!({
            "runs": a.runs,
            "seed": seed,
            "family": p.value_family,
            "partial_noise_fraction": a.partial,
            "checks": rows,
            "covered": covered,
        }),
    )?
    .with_rows(&rows)
    .map_err(Into::into)
}

fn summaries_for(a: &TestArgs) -> Result<(String, String, Vec<f64>, Vec<f64>)> {
    let path = a
        .responses
        .as_deref()
        .ok_or_else(|| usage("--responses is required for this test"))?;
    let table = read_responses_csv(path)?;
    let groups = table.groups();
    let pick = |label: &Option<String>, i: usize| -> Result<String> {
        match label {
            Some(l) if groups.contains(&l.as_str()) => Ok(l.clone()),
            Some(l) => {
                Err(DataError::Invalid(format!("group '{l}' not in {}", path.display())).into())
            }
            None => groups.get(i).map(|g| g.to_string()).ok_or_else(|| {
                DataError::Invalid(format!(
                    "two-sample tests need at least two groups, found {}",
                    groups.len()
                ))
                .into()
            }),
        }
    };
    let control = pick(&a.control, 0)?;
    let treatment = pick(&a.treatment, 1)?;
    if control == treatment {
        return Err(usage("control and treatment must differ"));
    }
    let x = table.values(&control);
    let y = table.values(&treatment);
    Ok((control, treatment, x, y))
}

fn test(a: &TestArgs) -> Result<Report> {
    if let TestName::Binomial = a.test {
        let (k, n) = a
            .successes
            .zip(a.trials)
            .ok_or_else(|| usage("the binomial test needs --successes and --trials"))?;
        let out = binomial_exact_test(k, n, a.theta0, a.alternative, a.alpha)?;
        return Report::new("test", json!({ "test": "binomial", "result": out }))
            .map_err(Into::into);
    }
    let (control, treatment, x, y) = summaries_for(a)?;
    let sa = SampleSummary::from_values(&x)?;
    let sb = SampleSummary::from_values(&y)?;
    let groups = json!({ "control": control, "treatment": treatment, "a": sa, "b": sb });
    let (name, result): (&str, Value) = match a.test {
        TestName::Welch => {
            let reference = match a.reference {
                Reference::Practical => TReference::Practical,
                Reference::Welch => TReference::Welch,
            };
            let out = welch_t_test(&sa, &sb, a.delta0, a.alternative, a.alpha, reference)?;
            ("welch", serde_json::to_value(out)?)
        }
        TestName::Z => {
            let (va, vb) = a
                .known_var_a
                .zip(a.known_var_b)
                .ok_or_else(|| usage("the z test needs --known-var-a and --known-var-b"))?;
            let out = z_test(&sa, &sb, a.delta0, va, vb, a.alternative, a.alpha)?;
            ("z", serde_json::to_value(out)?)
        }
        TestName::MannWhitney => {
            let method = match a.method {
                MwMethod::Normal => MannWhitneyMethod::Normal,
                MwMethod::Exact => MannWhitneyMethod::Exact,
            };
            let out = mann_whitney_u(&x, &y, a.alternative, a.alpha, method)?;
            ("mann_whitney", serde_json::to_value(out)?)
        }
        TestName::CohensD => ("cohens_d", json!({ "d": cohens_d(&sa, &sb)? })),
        TestName::Binomial => unreachable!("handled above"),
    };
    Report::new(
        "test",
        json!({ "test": name, "groups": groups, "result": result }),
    )
    .map_err(Into::into)
}

fn select_series(a: &ReplayArgs) -> Result<Vec<CheckpointSeries>> {
    let all = read_checkpoint_csv(&a.checkpoints)?;
    let chosen: Vec<CheckpointSeries> = all
        .into_iter()
        .filter(|s| a.experiment.as_ref().is_none_or(|e| *e == s.experiment_id))
        .filter(|s| a.metric.as_ref().is_none_or(|m| *m == s.metric_id))
        .collect();
    if chosen.is_empty() {
        return Err(
            DataError::Invalid("no series match the experiment/metric filter".into()).into(),
        );
    }
    Ok(chosen)
}

#[derive(Serialize)]
struct PointRow<'a> {
    experiment_id: &'a str,
    metric_id: &'a str,
    #[serde(flatten)]
    point: demlab::seqkit::TrajectoryPoint,
}

fn replay_command(name: &str, a: &ReplayArgs, monitor: Monitor) -> Result<Report> {
    let config = ReplayConfig {
        alpha: a.alpha,
        theta0: a.theta0,
        alpha_schedule: None,
    };
    let series = select_series(a)?;
    let mut summaries = Vec::new();
    let mut rows = Vec::new();
    for s in &series {
        let cps = s.to_checkpoints()?;
        let r = replay(&cps, monitor, &config).with_context(|| {
            format!("experiment '{}' metric '{}'", s.experiment_id, s.metric_id)
        })?;
        let first_reject = r
            .points
            .iter()
            .find(|p| p.decision == demlab::seqkit::Verdict::Reject)
            .map(|p| p.t);
        let last = r.points.last().expect("replay of a non-empty series");
        summaries.push(json!({
            "experiment_id": s.experiment_id,
            "metric_id": s.metric_id,
            "control": s.variants[0].variant_id,
            "treatment": s.variants[1].variant_id,
            "reject": r.reject,
            "first_reject_t": first_reject,
            "final_statistic": last.statistic,
            "final_p_or_posterior": last.p_or_posterior,
        }));
        rows.extend(r.points.iter().map(|p| PointRow {
            experiment_id: &s.experiment_id,
            metric_id: &s.metric_id,
            point: *p,
        }));
    }
    Report::new(
        name,
        json!({ "monitor": monitor, "alpha": a.alpha, "theta0": a.theta0, "series": summaries }),
    )?
    .with_rows(&rows)
    .map_err(Into::into)
}

fn csv_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading directory {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(DataError::Invalid(format!("no .csv files in {}", dir.display())).into());
    }
    Ok(files)
}

fn confusion(a: &ConfusionArgs, workers: usize) -> Result<Report> {
    let monitor = match a.monitor {
        MonitorKind::Msprt => Monitor::Msprt {
            tau2: a.mixing.tau2()?,
        },
        MonitorKind::Bayes => Monitor::Bayes {
            v2: a.v2.ok_or_else(|| usage("the Bayes monitor needs --v2"))?,
            prior_h0: a.prior_h0,
        },
    };
    let config = ReplayConfig {
        alpha: a.alpha,
        theta0: a.theta0,
        alpha_schedule: None,
    };
    let mut series: Vec<(String, Vec<Checkpoint>)> = Vec::new();
    for file in csv_files(&a.dir)? {
        let sets = read_checkpoint_csv(&file).with_context(|| file.display().to_string())?;
        for s in sets {
            let label = format!("{}:{}:{}", file.display(), s.experiment_id, s.metric_id);
            let cps = s.to_checkpoints().with_context(|| label.clone())?;
            series.push((label, cps));
        }
    }
    log::info!("replaying {} series", series.len());
    let fixed = Monitor::FixedT {
        reference: TReference::Practical,
    };
    let outcomes = run_indexed(0, series.len(), workers, |i, _| {
        let (label, cps) = &series[i];
        let both = replay(cps, monitor, &config)
            .and_then(|m| Ok((m.reject, replay(cps, fixed, &config)?.reject)));
        both.map_err(|e| anyhow!(e).context(label.clone()))
    });
    let pairs = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
    let matrix = demlab::seqkit::confusion_matrix(pairs);
    Report::new(
        "confusion",
        json!({ "monitor": monitor, "reference": fixed, "series": matrix.total(), "matrix": matrix }),
    )
    .map_err(Into::into)
}

fn supported(
    s: &PseScenario,
    ids: &[u8],
) -> Vec<(u8, std::result::Result<SetupEvaluation, String>)> {
    ids.iter()
        .map(|&id| (id, evaluate_setup(id, s).map_err(|e| e.to_string())))
        .collect()
}

fn check_setup_ids(ids: &[u8]) -> Result<()> {
    if let Some(bad) = ids.iter().find(|id| !(1..=4).contains(*id)) {
        return Err(usage(format!("setup ids run from 1 to 4, got {bad}")));
    }
    Ok(())
}

fn pse_eval(a: &PseEvalArgs) -> Result<Report> {
    check_setup_ids(&a.setups)?;
    let s = read_scenario(&a.scenario.scenario)?;
    let rows: Vec<Value> = supported(&s, &a.setups)
        .into_iter()
        .map(|(id, r)| match r {
            Ok(e) => json!({
                "setup_id": id,
                "actual_effect": e.actual_effect,
                "mde": e.mde,
                "detectable": e.actual_effect.abs() >= e.mde,
                "error": null,
            }),
            Err(msg) => json!({
                "setup_id": id, "actual_effect": null, "mde": null, "detectable": null, "error": msg,
            }),
        })
        .collect();
    if rows.iter().all(|r| !r["error"].is_null()) {
        return Err(
            DataError::Invalid("no requested setup applies to this scenario".into()).into(),
        );
    }
    Report::new(
        "pse-eval",
        json!({ "z": s.z()?, "n_total": s.n_total(), "setups": rows }),
    )?
    .with_rows(&rows)
    .map_err(Into::into)
}

fn pse_compare(a: &PseCompareArgs) -> Result<Report> {
    let s = read_scenario(&a.scenario.scenario)?;
    let pairs: Vec<(u8, u8)> = match (a.a, a.b) {
        (Some(x), Some(y)) => {
            check_setup_ids(&[x, y])?;
            vec![(x, y)]
        }
        _ => (1..=4u8)
            .flat_map(|x| (x + 1..=4).map(move |y| (x, y)))
            .collect(),
    };
    let single = pairs.len() == 1;
    let mut rows = Vec::new();
    for (x, y) in pairs {
        let (ex, ey) = match (evaluate_setup(x, &s), evaluate_setup(y, &s)) {
            (Ok(ex), Ok(ey)) => (ex, ey),
            (Err(e), _) | (_, Err(e)) if single => return Err(e.into()),
            _ => continue,
        };
        let c = compare(&ex, &ey);
        rows.push(json!({
            "a": x,
            "b": y,
            "verdict": c.verdict,
            "criterion": c.criterion,
            "swapped": c.swapped,
            "likely_error": c.likely_error,
            "effect_a": ex.actual_effect,
            "mde_a": ex.mde,
            "effect_b": ey.actual_effect,
            "mde_b": ey.mde,
        }));
    }
    if rows.is_empty() {
        return Err(
            DataError::Invalid("fewer than two setups apply to this scenario".into()).into(),
        );
    }
    Report::new("pse-compare", json!({ "comparisons": rows }))?
        .with_rows(&rows)
        .map_err(Into::into)
}

fn pse_advise(a: &ScenarioArg) -> Result<Report> {
    let s = read_scenario(&a.scenario)?;
    let dilution = dilution_advice(&s);
    let dual = dual_control_threshold(&s);
    if let (Err(d), Err(_)) = (&dilution, &dual) {
        return Err(d.clone().into());
    }
    let as_value = |r: std::result::Result<Value, String>| {
        r.unwrap_or_else(|msg| object([("error", Value::String(msg))]))
    };
    Report::new(
        "pse-advise",
        json!({
            "dilution": as_value(dilution.map_err(|e| e.to_string()).and_then(|d| serde_json::to_value(d).map_err(|e| e.to_string()))),
            "dual_control": as_value(dual.map_err(|e| e.to_string()).and_then(|d| serde_json::to_value(d).map_err(|e| e.to_string()))),
        }),
    )
    .map_err(Into::into)
}

fn pse_verify(a: &PseVerifyArgs, seed: u64, workers: usize) -> Result<Report> {
    let s = read_scenario(&a.scenario.scenario)?;
    let mut cfg = VerifyConfig::new(seed, a.runs)
        .with_resamples(a.resamples)
        .with_workers(workers);
    if let Some(ids) = &a.setups {
        check_setup_ids(ids)?;
        cfg = cfg.with_setups(ids.clone());
    }
    if a.mde {
        cfg = cfg.with_mde(MdeSearch::default());
    }
    if a.per_user {
        cfg = cfg.with_sampling(ResponseSampling::PerUser);
    }
    let v = verify_scenario(&s, &cfg)?;
    if v.setups.is_empty() {
        bail!(DataError::Invalid(
            "no requested setup applies to this scenario".into()
        ));
    }
    let rows: Vec<Value> = v
        .setups
        .iter()
        .map(|r| {
            json!({
                "setup_id": r.setup_id,
                "theoretical_effect": r.theoretical_effect,
                "empirical_effect": r.empirical_effect,
                "mc_se": r.mc_se,
                "ci_low": r.effect_ci.low,
                "ci_high": r.effect_ci.high,
                "effect_in_ci": r.effect_in_ci,
                "theoretical_mde": r.theoretical_mde,
                "empirical_mde": r.empirical_mde,
                "mde_relative_error": r.mde_relative_error,
            })
        })
        .collect();
    Report::new(
        "pse-verify",
        json!({ "runs": v.runs, "seed": seed, "setups": rows }),
    )?
    .with_rows(&rows)
    .map_err(Into::into)
}
