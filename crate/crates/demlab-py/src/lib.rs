//! Python bindings. Structured results come back as plain dicts and lists; structured
//! inputs (scenarios, monitors) are accepted as dicts with the same field names as the
//! JSON reports of the command-line tool.

use demlab::clusterse::{
    bootstrap_se as boot_se, vanilla_se_from, ClusterAggregates, ClusteredRecord, Scheme,
};
use demlab::distkit;
use demlab::pse::{self, PseScenario};
use demlab::rulu::{self, RuluParams, SimOptions};
use demlab::seqkit::{self, Checkpoint, Monitor, ReplayConfig};
use demlab::testkit::{self, Alternative, PowerForm, SampleSummary, TReference};
use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

fn err(e: demlab::Error) -> PyErr {
    match e {
        demlab::Error::Numerical(_) => PyArithmeticError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match n.as_i64() {
            Some(i) => i.into_pyobject(py)?.into_any(),
            None => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(to_py(py, item)?)?;
            }
            list.into_any()
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, item) in map {
                dict.set_item(k, to_py(py, item)?)?;
            }
            dict.into_any()
        }
    })
}

fn output<'py>(py: Python<'py>, value: impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let v = serde_json::to_value(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    to_py(py, &v)
}

/// Round-trips a Python object through the `json` module into a Rust type.
fn input<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let json = obj.py().import("json")?;
    let text: String = json.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn alternative(s: &str) -> PyResult<Alternative> {
    s.parse().map_err(err)
}

#[pyfunction]
fn normal_cdf(x: f64) -> f64 {
    distkit::normal_cdf(x)
}

#[pyfunction]
fn normal_quantile(p: f64) -> PyResult<f64> {
    distkit::normal_quantile(p).map_err(err)
}

#[pyfunction]
fn student_t_cdf(x: f64, dof: f64) -> PyResult<f64> {
    distkit::student_t_cdf(x, dof).map_err(err)
}

#[pyfunction]
fn owens_t(h: f64, a: f64) -> f64 {
    distkit::owens_t(h, a)
}

#[allow(clippy::too_many_arguments)]
fn rulu_params(
    n: usize,
    m: usize,
    mu_v: f64,
    mu_e: f64,
    var_v: f64,
    var_1: f64,
    var_2: f64,
) -> PyResult<RuluParams> {
    RuluParams::new(n, m, mu_v, mu_e, var_v, var_1, var_2).map_err(err)
}

/// `E(W2)/E(W1) - 1` on value added over the mean.
#[pyfunction]
#[pyo3(signature = (n, m, var_v, var_1, var_2, mu_v = 0.0, mu_e = 0.0))]
fn relative_gain(
    n: usize,
    m: usize,
    var_v: f64,
    var_1: f64,
    var_2: f64,
    mu_v: f64,
    mu_e: f64,
) -> PyResult<f64> {
    rulu::relative_gain(&rulu_params(n, m, mu_v, mu_e, var_v, var_1, var_2)?).map_err(err)
}

/// Expected selection values, gain and their variances.
#[pyfunction]
#[pyo3(signature = (n, m, var_v, var_1, var_2, mu_v = 0.0, mu_e = 0.0))]
#[allow(clippy::too_many_arguments)]
fn rulu_moments<'py>(
    py: Python<'py>,
    n: usize,
    m: usize,
    var_v: f64,
    var_1: f64,
    var_2: f64,
    mu_v: f64,
    mu_e: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let p = rulu_params(n, m, mu_v, mu_e, var_v, var_1, var_2)?;
    output(py, rulu::gain_variance(&p).map_err(err)?)
}

/// Simulated `W1`, `W2` and `D = W2 - W1` per run.
#[pyfunction]
#[pyo3(signature = (n, m, var_v, var_1, var_2, runs, seed, mu_v = 0.0, mu_e = 0.0))]
#[allow(clippy::too_many_arguments)]
fn rulu_simulate<'py>(
    py: Python<'py>,
    n: usize,
    m: usize,
    var_v: f64,
    var_1: f64,
    var_2: f64,
    runs: usize,
    seed: u64,
    mu_v: f64,
    mu_e: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let p = rulu_params(n, m, mu_v, mu_e, var_v, var_1, var_2)?;
    let s = py
        .detach(|| rulu::simulate(&p, runs, seed, &SimOptions::default()))
        .map_err(err)?;
    output(py, s)
}

#[pyfunction]
#[pyo3(signature = (theta, var_a, var_b, n, m, theta0 = 0.0, alpha = 0.05, alternative = "two-sided"))]
#[allow(clippy::too_many_arguments)]
fn power(
    theta: f64,
    var_a: f64,
    var_b: f64,
    n: f64,
    m: f64,
    theta0: f64,
    alpha: f64,
    alternative: &str,
) -> PyResult<f64> {
    testkit::power(
        theta,
        theta0,
        var_a,
        var_b,
        n,
        m,
        alpha,
        self::alternative(alternative)?,
        PowerForm::Exact,
    )
    .map_err(err)
}

#[pyfunction]
#[pyo3(signature = (var_a, var_b, n, m, alpha = 0.05, power = 0.8, alternative = "two-sided"))]
fn mde(
    var_a: f64,
    var_b: f64,
    n: f64,
    m: f64,
    alpha: f64,
    power: f64,
    alternative: &str,
) -> PyResult<f64> {
    testkit::mde(
        var_a,
        var_b,
        n,
        m,
        alpha,
        power,
        self::alternative(alternative)?,
    )
    .map_err(err)
}

#[pyfunction]
#[pyo3(signature = (theta, var_a, var_b, theta0 = 0.0, alpha = 0.05, power = 0.8, alternative = "two-sided", ratio = 1.0))]
#[allow(clippy::too_many_arguments)]
fn required_sample_size<'py>(
    py: Python<'py>,
    theta: f64,
    var_a: f64,
    var_b: f64,
    theta0: f64,
    alpha: f64,
    power: f64,
    alternative: &str,
    ratio: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let s = testkit::required_sample_size(
        theta,
        theta0,
        var_a,
        var_b,
        alpha,
        power,
        self::alternative(alternative)?,
        ratio,
    )
    .map_err(err)?;
    output(py, s)
}

/// Welch t test of `mean(b) - mean(a)` on raw samples.
#[pyfunction]
#[pyo3(signature = (a, b, delta0 = 0.0, alpha = 0.05, alternative = "two-sided", welch_dof = false))]
fn welch_t_test<'py>(
    py: Python<'py>,
    a: Vec<f64>,
    b: Vec<f64>,
    delta0: f64,
    alpha: f64,
    alternative: &str,
    welch_dof: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let sa = SampleSummary::from_values(&a).map_err(err)?;
    let sb = SampleSummary::from_values(&b).map_err(err)?;
    let reference = if welch_dof {
        TReference::Welch
    } else {
        TReference::Practical
    };
    let out = testkit::welch_t_test(
        &sa,
        &sb,
        delta0,
        self::alternative(alternative)?,
        alpha,
        reference,
    )
    .map_err(err)?;
    output(py, out)
}

/// Sample-ratio-mismatch χ² test.
#[pyfunction]
#[pyo3(signature = (counts, ratios, alpha = 0.05))]
fn srm<'py>(
    py: Python<'py>,
    counts: Vec<u64>,
    ratios: Vec<f64>,
    alpha: f64,
) -> PyResult<Bound<'py, PyAny>> {
    output(
        py,
        testkit::chi2_gof_at(&counts, &ratios, alpha).map_err(err)?,
    )
}

/// Replays `(t, n_a, mean_a, var_a, n_b, mean_b, var_b)` checkpoints through a monitor
/// given as a dict, e.g. `{"kind": "msprt", "tau2": {"fixed": 0.1}}`.
#[pyfunction]
#[pyo3(signature = (checkpoints, monitor, alpha = 0.05, theta0 = 0.0))]
fn replay<'py>(
    py: Python<'py>,
    checkpoints: Vec<(f64, u64, f64, f64, u64, f64, f64)>,
    monitor: &Bound<'py, PyAny>,
    alpha: f64,
    theta0: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let monitor: Monitor = input(monitor)?;
    let series: Vec<Checkpoint> = checkpoints
        .into_iter()
        .map(|(t, n_a, mean_a, var_a, n_b, mean_b, var_b)| Checkpoint {
            t,
            n_a,
            mean_a,
            var_a,
            n_b,
            mean_b,
            var_b,
        })
        .collect();
    let cfg = ReplayConfig {
        alpha,
        theta0,
        alpha_schedule: None,
    };
    output(py, seqkit::replay(&series, monitor, &cfg).map_err(err)?)
}

/// Vanilla and Poisson-bootstrap standard errors of the mean of `values`, clustered by
/// `users` (and `products` for the two-way scheme).
#[pyfunction]
#[pyo3(signature = (users, values, products = None, two_way = false, b = 1000, seed = 0))]
fn bootstrap_se<'py>(
    py: Python<'py>,
    users: Vec<String>,
    values: Vec<f64>,
    products: Option<Vec<String>>,
    two_way: bool,
    b: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    if users.len() != values.len() || products.as_ref().is_some_and(|p| p.len() != values.len()) {
        return Err(PyValueError::new_err(
            "users, products and values must have equal length",
        ));
    }
    let mut products = products.map(|p| p.into_iter());
    let rows = users.into_iter().zip(values).map(|(u, v)| {
        Ok(ClusteredRecord::new(
            u,
            products.as_mut().and_then(|p| p.next()),
            v,
        ))
    });
    let agg = ClusterAggregates::from_rows(rows).map_err(err)?;
    let scheme = if two_way {
        Scheme::TwoWay
    } else {
        Scheme::OneWay
    };
    let (vanilla, boot) = py
        .detach(|| {
            Ok::<_, demlab::Error>((vanilla_se_from(&agg)?, boot_se(&agg, scheme, b, seed)?))
        })
        .map_err(err)?;
    output(
        py,
        serde_json::json!({ "vanilla": vanilla, "bootstrap": boot }),
    )
}

/// Actual effect and MDE of setup 1 to 4 for a scenario dict (`n0`, `mu_C0`, `var_Ipsi`, ...).
#[pyfunction]
fn pse_evaluate<'py>(
    py: Python<'py>,
    scenario: &Bound<'py, PyAny>,
    setup: u8,
) -> PyResult<Bound<'py, PyAny>> {
    let s: PseScenario = input(scenario)?;
    output(py, pse::evaluate_setup(setup, &s).map_err(err)?)
}

#[pyfunction]
fn pse_compare<'py>(
    py: Python<'py>,
    scenario: &Bound<'py, PyAny>,
    a: u8,
    b: u8,
) -> PyResult<Bound<'py, PyAny>> {
    let s: PseScenario = input(scenario)?;
    let ea = pse::evaluate_setup(a, &s).map_err(err)?;
    let eb = pse::evaluate_setup(b, &s).map_err(err)?;
    output(py, pse::compare(&ea, &eb))
}

/// Dilution advice and the dual-control threshold; either is `None` when its setups do not apply.
#[pyfunction]
fn pse_advise<'py>(py: Python<'py>, scenario: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
    let s: PseScenario = input(scenario)?;
    output(
        py,
        serde_json::json!({
            "dilution": pse::dilution_advice(&s).ok(),
            "dual_control": pse::dual_control_threshold(&s).ok(),
        }),
    )
}

#[pymodule]
fn pydemlab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(normal_cdf, m)?)?;
    m.add_function(wrap_pyfunction!(normal_quantile, m)?)?;
    m.add_function(wrap_pyfunction!(student_t_cdf, m)?)?;
    m.add_function(wrap_pyfunction!(owens_t, m)?)?;
    m.add_function(wrap_pyfunction!(relative_gain, m)?)?;
    m.add_function(wrap_pyfunction!(rulu_moments, m)?)?;
    m.add_function(wrap_pyfunction!(rulu_simulate, m)?)?;
    m.add_function(wrap_pyfunction!(power, m)?)?;
    m.add_function(wrap_pyfunction!(mde, m)?)?;
    m.add_function(wrap_pyfunction!(required_sample_size, m)?)?;
    m.add_function(wrap_pyfunction!(welch_t_test, m)?)?;
    m.add_function(wrap_pyfunction!(srm, m)?)?;
    m.add_function(wrap_pyfunction!(replay, m)?)?;
    m.add_function(wrap_pyfunction!(bootstrap_se, m)?)?;
    m.add_function(wrap_pyfunction!(pse_evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(pse_compare, m)?)?;
    m.add_function(wrap_pyfunction!(pse_advise, m)?)?;
    Ok(())
}
