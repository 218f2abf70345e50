mod common;

use common::{bisect, box_muller, mean, normal_cdf_by_quadrature, sample_variance};
use demlab::rulu::*;
use demlab::simlab::{bootstrap_ci, run_indexed, Statistic};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn params(n: usize, m: usize, v: f64, e1: f64, e2: f64) -> RuluParams {
    RuluParams::new(n, m, 0.0, 0.0, v, e1, e2).unwrap()
}

/// One draw of the generative model, sorted by each estimate (ascending).
struct Draw {
    v: Vec<f64>,
    h: Vec<f64>,
    l: Vec<f64>,
    by_h: Vec<usize>,
    by_l: Vec<usize>,
}

fn draw(p: &RuluParams, rng: &mut impl Rng) -> Draw {
    let n = p.n_items;
    let v: Vec<f64> = (0..n)
        .map(|_| p.mean_value + p.var_value.sqrt() * box_muller(rng))
        .collect();
    let h: Vec<f64> = v
        .iter()
        .map(|x| x + p.mean_noise + p.var_noise_high.sqrt() * box_muller(rng))
        .collect();
    let l: Vec<f64> = v
        .iter()
        .map(|x| x + p.mean_noise + p.var_noise_low.sqrt() * box_muller(rng))
        .collect();
    let mut by_h: Vec<usize> = (0..n).collect();
    by_h.sort_by(|&a, &b| h[a].partial_cmp(&h[b]).unwrap());
    let mut by_l: Vec<usize> = (0..n).collect();
    by_l.sort_by(|&a, &b| l[a].partial_cmp(&l[b]).unwrap());
    Draw {
        v,
        h,
        l,
        by_h,
        by_l,
    }
}

impl Draw {
    fn w(&self, m: usize, low: bool) -> f64 {
        let order = if low { &self.by_l } else { &self.by_h };
        order[order.len() - m..]
            .iter()
            .map(|&i| self.v[i])
            .sum::<f64>()
            / m as f64
    }
}

fn covariance(xs: &[f64], ys: &[f64]) -> f64 {
    let (mx, my) = (mean(xs), mean(ys));
    xs.iter()
        .zip(ys)
        .map(|(x, y)| (x - mx) * (y - my))
        .sum::<f64>()
        / (xs.len() - 1) as f64
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

#[test]
fn parameter_validation() {
    assert!(RuluParams::new(10, 11, 0.0, 0.0, 1.0, 1.0, 0.5).is_err());
    assert!(RuluParams::new(10, 0, 0.0, 0.0, 1.0, 1.0, 0.5).is_err());
    assert!(RuluParams::new(10, 5, 0.0, 0.0, 1.0, 0.5, 1.0).is_err());
    assert!(RuluParams::new(10, 5, 0.0, 0.0, 1.0, 0.0, 0.0).is_err());
    let p = params(10, 5, 1.0, 1.0, 0.5);
    assert!(p.with_family(ValueFamily::StudentT { dof: 2.0 }).is_err());
    let t = p.with_family(ValueFamily::StudentT { dof: 3.0 }).unwrap();
    assert!(expected_selected_value(&t, NoiseLevel::High).is_err());
    assert!(gain_variance(&t).is_err());
    let flat = params(10, 5, 0.0, 1.0, 0.5);
    assert!(matches!(
        expected_gain(&flat),
        Err(demlab::Error::Degenerate(_))
    ));
    assert!(simulate(&flat, 10, 1, &SimOptions::default()).is_ok());
    assert!(expected_order_stat(0, &p, NoiseLevel::High).is_err());
    assert!(expected_order_stat(11, &p, NoiseLevel::High).is_err());
    assert_eq!(p.quantile_correction, 0.4);
}

#[test]
fn median_rank_sits_at_the_mean() {
    let p = RuluParams::new(11, 3, 2.0, -1.0, 1.0, 0.5, 0.4).unwrap();
    assert!((expected_order_stat(6, &p, NoiseLevel::High).unwrap() - 1.0).abs() < 1e-12);
    assert!((expected_concomitant(6, &p, NoiseLevel::Low).unwrap() - 2.0).abs() < 1e-12);
}

#[test]
fn top_order_statistic_of_one_hundred() {
    let p = params(100, 1, 0.5, 0.5, 0.5);
    let got = expected_order_stat(100, &p, NoiseLevel::High).unwrap();
    let target = 99.6 / 100.2;
    let oracle = bisect(&|x| normal_cdf_by_quadrature(x) - target, -10.0, 10.0);
    assert!((got - oracle).abs() < 1e-8, "{got} vs {oracle}");
    assert!((got - 2.512).abs() < 1e-3);

    // Monte Carlo: mean maximum of 100 standard normals over 10^6 runs
    let runs = 1_000_000;
    let maxima = run_indexed(11, 100, 0, |_, rng| {
        (0..runs / 100)
            .map(|_| {
                (0..100)
                    .map(|_| box_muller(rng))
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .sum::<f64>()
    });
    let mc = maxima.iter().sum::<f64>() / runs as f64;
    assert!(rel(got, mc) < 0.005, "{got} vs {mc}");
}

#[test]
fn concomitant_of_the_top_item() {
    let p = params(50, 1, 1.0, 0.25, 0.25);
    let got = expected_concomitant(50, &p, NoiseLevel::High).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let runs = 200_000;
    let mc = (0..runs)
        .map(|_| {
            let d = draw(&p, &mut rng);
            d.v[d.by_h[49]]
        })
        .sum::<f64>()
        / runs as f64;
    assert!(rel(got, mc) < 0.01, "{got} vs {mc}");
}

#[test]
fn concomitants_shrink_to_the_mean_under_pure_noise() {
    let p = RuluParams::new(30, 5, 1.5, 0.0, 1.0, 1e12, 1e12).unwrap();
    for r in [1, 15, 30] {
        assert!((expected_concomitant(r, &p, NoiseLevel::High).unwrap() - 1.5).abs() < 1e-4);
    }
}

#[test]
fn selected_value_at_case_study_scale() {
    // six thousand seven hundred propositions, capacity one hundred, values in percent
    let p = params(6700, 100, 0.36, 1.0, 1.0);
    let got = expected_selected_value(&p, NoiseLevel::High).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let runs = 2000;
    let mc = (0..runs)
        .map(|_| draw(&p, &mut rng).w(100, false))
        .sum::<f64>()
        / runs as f64;
    assert!(rel(got, mc) < 0.01, "{got} vs {mc}");
}

#[test]
fn selected_value_identities() {
    let p = RuluParams::new(40, 40, 3.0, 0.0, 2.0, 1.0, 0.5).unwrap();
    assert!((expected_selected_value(&p, NoiseLevel::High).unwrap() - 3.0).abs() < 1e-12);
    let base = RuluParams::new(40, 7, 3.0, 0.0, 2.0, 1.0, 0.5).unwrap();
    let e = expected_selected_value(&base, NoiseLevel::High).unwrap();
    for shift in [-100.0, -1.0, 5.0, 1e4] {
        let moved = RuluParams {
            mean_noise: shift,
            ..base
        };
        assert_eq!(
            expected_selected_value(&moved, NoiseLevel::High).unwrap(),
            e
        );
    }
    let single = RuluParams::new(1, 1, 0.0, 0.0, 1.0, 2.0, 0.1).unwrap();
    assert_eq!(expected_gain(&single).unwrap(), 0.0);
    let same = RuluParams::new(20, 4, 0.0, 0.0, 1.0, 0.7, 0.7).unwrap();
    assert_eq!(expected_gain(&same).unwrap(), 0.0);
    assert_eq!(relative_gain(&same).unwrap(), 0.0);
}

#[test]
fn relative_gain_case_study() {
    let p = params(100, 10, 1.0, 0.25, 0.16);
    let g = relative_gain(&p).unwrap();
    assert!((g - 0.038).abs() < 5e-4, "{g}");
    // the ratio of excess values reproduces it for any N and M
    let ratio = (expected_selected_value(&p, NoiseLevel::Low).unwrap())
        / expected_selected_value(&p, NoiseLevel::High).unwrap()
        - 1.0;
    assert!((ratio - g).abs() < 1e-12);
}

fn column_variances(p: &RuluParams, rank: usize, runs: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, v): (Vec<f64>, Vec<f64>) = (0..runs)
        .map(|_| {
            let d = draw(p, &mut rng);
            (d.h[d.by_h[rank - 1]], d.v[d.by_h[rank - 1]])
        })
        .unzip();
    (sample_variance(&h), sample_variance(&v))
}

#[test]
fn order_statistic_moments_against_monte_carlo() {
    // with a long list the first-order expansion is tight
    let p = params(200, 5, 1.0, 0.5, 0.4);
    for (rank, seed) in [(100, 7), (160, 8)] {
        let (mc_h, mc_v) = column_variances(&p, rank, 50_000, seed);
        let var = order_stat_var(rank, &p, NoiseLevel::High).unwrap();
        assert!(rel(var, mc_h) < 0.03, "rank {rank}: {var} vs {mc_h}");
        let cvar = concomitant_var(rank, &p, NoiseLevel::High).unwrap();
        assert!(rel(cvar, mc_v) < 0.03, "rank {rank}: {cvar} vs {mc_v}");
    }

    // at N = 25 it understates the spread by six to seven per cent
    let p = params(25, 5, 1.0, 0.5, 0.4);
    let (mc_h, mc_v) = column_variances(&p, 20, 200_000, 9);
    let var = order_stat_var(20, &p, NoiseLevel::High).unwrap();
    assert!(var < mc_h && rel(var, mc_h) < 0.1, "{var} vs {mc_h}");
    let cvar = concomitant_var(20, &p, NoiseLevel::High).unwrap();
    assert!(cvar < mc_v && rel(cvar, mc_v) < 0.1, "{cvar} vs {mc_v}");
    assert!(cvar >= 1.0 * 0.5 / 1.5);
}

#[test]
fn covariance_helpers_are_symmetric() {
    let p = params(25, 5, 1.0, 0.5, 0.4);
    for (r, s) in [(3, 9), (22, 24), (1, 25)] {
        let a = order_stat_cov(r, s, &p, NoiseLevel::Low).unwrap();
        assert_eq!(a, order_stat_cov(s, r, &p, NoiseLevel::Low).unwrap());
        assert_eq!(
            concomitant_cov(r, s, &p, NoiseLevel::High).unwrap(),
            concomitant_cov(s, r, &p, NoiseLevel::High).unwrap()
        );
        assert_eq!(
            cross_order_stat_cov(r, s, &p).unwrap(),
            cross_order_stat_cov(s, r, &p).unwrap()
        );
    }
    assert_eq!(
        order_stat_cov(7, 7, &p, NoiseLevel::High).unwrap(),
        order_stat_var(7, &p, NoiseLevel::High).unwrap()
    );
    assert_eq!(
        concomitant_cov(7, 7, &p, NoiseLevel::High).unwrap(),
        concomitant_var(7, &p, NoiseLevel::High).unwrap()
    );
    let tiny = params(25, 5, 1e-12, 0.5, 0.4);
    assert!(
        concomitant_cov(3, 9, &tiny, NoiseLevel::High)
            .unwrap()
            .abs()
            < 1e-20
    );
}

/// Sample covariances of `pick(draw)` pairs over `batches` batches of 200 runs.
fn batch_covariances(
    p: &RuluParams,
    batches: usize,
    seed: u64,
    pick: impl Fn(&Draw) -> (f64, f64) + Sync,
) -> Vec<f64> {
    let mut covs = run_indexed(seed, batches, 0, |_, rng| {
        let (a, b): (Vec<f64>, Vec<f64>) = (0..200).map(|_| pick(&draw(p, rng))).unzip();
        covariance(&a, &b)
    });
    covs.sort_by(f64::total_cmp);
    covs
}

fn inside_central_95(sorted: &[f64], x: f64) -> bool {
    let lo = sorted[(sorted.len() as f64 * 0.025) as usize];
    let hi = sorted[(sorted.len() as f64 * 0.975) as usize - 1];
    lo <= x && x <= hi
}

#[test]
fn concomitant_covariance_from_batches() {
    let p = params(25, 5, 1.0, 0.5, 0.4);
    let covs = batch_covariances(&p, 1000, 8, |d| (d.v[d.by_h[21]], d.v[d.by_h[23]]));
    let mc = mean(&covs);
    let got = concomitant_cov(22, 24, &p, NoiseLevel::High).unwrap();
    // the first-order covariance sits a few per cent under the truth this far into the tail
    assert!(got < mc && rel(got, mc) < 0.1, "{got} vs {mc}");
    assert!(inside_central_95(&covs, got));
}

#[test]
fn cross_covariances_inside_batch_ranges() {
    let p = params(25, 5, 1.0, 0.5, 0.4);
    for (r, s) in [(22, 24), (21, 23), (24, 22)] {
        let hl = batch_covariances(&p, 1000, 9, |d| (d.h[d.by_h[r - 1]], d.l[d.by_l[s - 1]]));
        assert!(
            inside_central_95(&hl, cross_order_stat_cov(r, s, &p).unwrap()),
            "H/L at ({r}, {s})"
        );
        let vv = batch_covariances(&p, 1000, 10, |d| (d.v[d.by_h[r - 1]], d.v[d.by_l[s - 1]]));
        let weight = rank_coincidence_prob(r, s, &p).unwrap().value();
        assert!(
            inside_central_95(&vv, cross_concomitant_cov(r, s, &p, weight).unwrap()),
            "V/V at ({r}, {s})"
        );
    }
    // when both ranks are the top one the same item usually holds both, and the mixture
    // misses the gap between the two cases' conditional means
    let vv = batch_covariances(&p, 1000, 11, |d| (d.v[d.by_h[24]], d.v[d.by_l[24]]));
    let weight = rank_coincidence_prob(25, 25, &p).unwrap().value();
    assert!(cross_concomitant_cov(25, 25, &p, weight).unwrap() < mean(&vv));
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| a * (a / b).ln())
        .sum()
}

#[test]
fn coincidence_fit_matches_empirical_heatmap() {
    let p = params(25, 5, 1.0, 0.5, 0.4);
    let runs = 50_000;
    let mut counts = vec![vec![0.0; 25]; 25];
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..runs {
        let d = draw(&p, &mut rng);
        let mut rank_l = [0; 25];
        for (s, &j) in d.by_l.iter().enumerate() {
            rank_l[j] = s;
        }
        for (r, &i) in d.by_h.iter().enumerate() {
            counts[r][rank_l[i]] += 1.0 / runs as f64;
        }
    }
    let mut total = 0.0;
    for r in 1..=25 {
        let row = rank_coincidence_row(r, &p).unwrap();
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for s in [1, r, 25] {
            assert!((rank_coincidence_prob(r, s, &p).unwrap().value() - row[s - 1]).abs() < 1e-12);
        }
        total += kl(&counts[r - 1], &row);
    }
    let mean_kl = total / 25.0;
    assert!(mean_kl <= 0.01, "mean KL {mean_kl}");

    let ours = empirical_rank_coincidence(&p, 2000, 3, 0).unwrap();
    for row in &ours {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn coincidence_matrix_is_doubly_stochastic() {
    for p in [
        params(25, 5, 1.0, 0.5, 0.4),
        params(60, 5, 2.0, 3.0, 0.1),
        params(2, 1, 1.0, 1.0, 1.0),
    ] {
        let m = rank_coincidence_matrix(&p).unwrap();
        for i in 0..p.n_items {
            assert!((m[i].iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!((m.iter().map(|row| row[i]).sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
    let one = params(1, 1, 1.0, 0.5, 0.4);
    assert_eq!(rank_coincidence_prob(1, 1, &one).unwrap().value(), 1.0);
}

#[test]
fn gain_variance_agrees_with_pairwise_functions() {
    let p = RuluParams::new(40, 9, 1.0, -2.0, 2.0, 1.5, 0.3).unwrap();
    let m = gain_variance(&p).unwrap();
    let ranks: Vec<usize> = p.selected_ranks().collect();
    let k = ranks.len() as f64;
    let mut var1 = 0.0;
    let mut cov = 0.0;
    for &r in &ranks {
        for &s in &ranks {
            var1 += concomitant_cov(r, s, &p, NoiseLevel::High).unwrap();
            let w = rank_coincidence_prob(r, s, &p).unwrap().value();
            cov += cross_concomitant_cov(r, s, &p, w).unwrap();
        }
    }
    assert!(rel(m.var_w_high, var1 / (k * k)) < 1e-10);
    assert!(rel(m.cov_w, cov / (k * k)) < 1e-10);
    assert!(rel(m.var_gain, m.var_w_high + m.var_w_low - 2.0 * m.cov_w) < 1e-10);
    assert_eq!(m.degenerate_fits, 0);

    let single = gain_variance(&params(1, 1, 1.0, 0.5, 0.4)).unwrap();
    assert!(single.var_gain.abs() < 1e-12);
}

#[test]
fn gain_variance_tracks_monte_carlo() {
    let p = RuluParams::new(40, 9, 1.0, -2.0, 2.0, 1.5, 0.3).unwrap();
    let m = gain_variance(&p).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let runs = 40_000;
    let (w1, w2): (Vec<f64>, Vec<f64>) = (0..runs)
        .map(|_| {
            let d = draw(&p, &mut rng);
            (d.w(9, false), d.w(9, true))
        })
        .unzip();
    let gain: Vec<f64> = w2.iter().zip(&w1).map(|(a, b)| a - b).collect();
    assert!(
        rel(m.expected_gain, mean(&gain)) < 0.05,
        "{} vs {}",
        m.expected_gain,
        mean(&gain)
    );
    assert!(rel(m.var_w_high, sample_variance(&w1)) < 0.1);
    assert!(rel(m.var_w_low, sample_variance(&w2)) < 0.1);
    // Var(D) is not compared: the same/different-index mixture leaves out the spread of the
    // conditional means between the two cases, so Cov(W1, W2) runs low
    assert!(m.cov_w > 0.0 && m.cov_w < m.var_w_high.min(m.var_w_low));
}

#[test]
fn variance_of_w_inside_bootstrap_interval_in_most_trials() {
    let trials = 200;
    let hits = run_indexed(13, trials, 0, |i, rng| {
        let mut p = ParamRanges::default().draw(rng).unwrap();
        p.n_items = 300;
        p.capacity = 60;
        let theory = selected_value_var(&p, NoiseLevel::High).unwrap();
        let sd_e = p.var_noise_high.sqrt();
        let w: Vec<f64> = (0..10_000)
            .map(|_| {
                let mut vh: Vec<(f64, f64)> = (0..300)
                    .map(|_| {
                        let v = p.mean_value + p.var_value.sqrt() * box_muller(rng);
                        (v + p.mean_noise + sd_e * box_muller(rng), v)
                    })
                    .collect();
                vh.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
                vh[240..].iter().map(|x| x.1).sum::<f64>() / 60.0
            })
            .collect();
        bootstrap_ci(&w, Statistic::Variance, 2000, 0.05, i as u64)
            .unwrap()
            .contains(theory)
    });
    let rate = hits.iter().filter(|&&h| h).count() as f64 / trials as f64;
    assert!(rate >= 0.65, "inside rate {rate}");
}

#[test]
fn sharpe_ratio_arithmetic() {
    assert_eq!(sharpe_ratio(0.02, 1e-4, 0.0).unwrap(), 2.0);
    assert_eq!(sharpe_ratio(0.3, 0.5, 0.3).unwrap(), 0.0);
    let a = sharpe_ratio(0.2, 0.04, 0.05).unwrap();
    assert!((sharpe_ratio(0.2, 0.16, 0.05).unwrap() - a / 2.0).abs() < 1e-15);
    assert!(sharpe_ratio(0.2, 0.0, 0.0).is_err());
}

#[test]
fn sampler_matches_independent_sampler() {
    let p = RuluParams::new(80, 10, 1.0, 3.0, 2.0, 1.0, 0.2).unwrap();
    let opts = SimOptions {
        track: Some((75, 78)),
        ..SimOptions::default()
    };
    let sims = simulate(&p, 20_000, 4, &opts).unwrap();
    assert_eq!(
        sims,
        simulate(&p, 20_000, 4, &SimOptions { workers: 1, ..opts }).unwrap()
    );
    assert_eq!(sims.tracked.len(), 20_000);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let (w1, w2): (Vec<f64>, Vec<f64>) = (0..20_000)
        .map(|_| {
            let d = draw(&p, &mut rng);
            (d.w(10, false), d.w(10, true))
        })
        .unzip();
    let se = |xs: &[f64]| (sample_variance(xs) / xs.len() as f64).sqrt();
    for (ours, theirs) in [(&sims.w_high, &w1), (&sims.w_low, &w2)] {
        let gap = (mean(ours) - mean(theirs)).abs();
        assert!(gap < 4.0 * (se(ours).hypot(se(theirs))), "gap {gap}");
    }
    let v_ir: Vec<f64> = sims.tracked.iter().map(|t| t.v_ir).collect();
    let want = expected_concomitant(75, &p, NoiseLevel::High).unwrap();
    assert!(
        (mean(&v_ir) - want).abs() < 0.02,
        "{} vs {want}",
        mean(&v_ir)
    );
    assert!(sims
        .tracked
        .iter()
        .all(|t| t.h_r.is_finite() && t.l_s.is_finite()));
}

#[test]
fn equal_noise_gives_no_gain() {
    let p = RuluParams::new(50, 5, 0.0, 0.0, 1.0, 0.6, 0.6).unwrap();
    let sims = simulate(&p, 20_000, 15, &SimOptions::default()).unwrap();
    let se = (sample_variance(&sims.gain) / 20_000.0).sqrt();
    assert!(mean(&sims.gain).abs() < 3.0 * se);
}

#[test]
fn partial_noise_reduction() {
    let p = RuluParams::new(50, 5, 0.0, 0.0, 1.0, 1.0, 0.1).unwrap();
    let full = simulate(&p, 5000, 16, &SimOptions::default()).unwrap();
    let p1 = simulate(
        &p,
        5000,
        16,
        &SimOptions {
            partial_noise_fraction: 1.0,
            ..SimOptions::default()
        },
    )
    .unwrap();
    assert_eq!(full, p1);
    let none = simulate(
        &p,
        20_000,
        17,
        &SimOptions {
            partial_noise_fraction: 0.0,
            ..SimOptions::default()
        },
    )
    .unwrap();
    let se = (sample_variance(&none.gain) / 20_000.0).sqrt();
    assert!(mean(&none.gain).abs() < 3.0 * se);
    // the gain grows with the share of items measured more precisely
    let gains: Vec<f64> = [0.0, 0.25, 0.5, 0.75, 1.0]
        .iter()
        .map(|&f| {
            let s = simulate(
                &p,
                20_000,
                18,
                &SimOptions {
                    partial_noise_fraction: f,
                    ..SimOptions::default()
                },
            )
            .unwrap();
            mean(&s.gain)
        })
        .collect();
    assert!(gains.windows(2).all(|w| w[1] > w[0]), "{gains:?}");
    assert!(simulate(
        &p,
        10,
        1,
        &SimOptions {
            partial_noise_fraction: 1.5,
            ..SimOptions::default()
        }
    )
    .is_err());
}

#[test]
fn heavy_tailed_values_raise_the_gain_when_selecting_the_tail() {
    // a backlog in the thousands with capacity for a few per cent of it
    let ranges = ParamRanges {
        log10_items: (2.5, 3.3),
        capacity_share: (0.005, 0.05),
        ..ParamRanges::default()
    };
    let diffs = run_indexed(19, 100, 0, |i, rng| {
        let p = ranges.draw(rng).unwrap();
        let normal = simulate(
            &p,
            300,
            i as u64,
            &SimOptions {
                workers: 1,
                ..SimOptions::default()
            },
        )
        .unwrap();
        let t = SimOptions {
            family: Some(ValueFamily::StudentT { dof: 3.0 }),
            workers: 1,
            ..SimOptions::default()
        };
        let heavy = simulate(&p, 300, i as u64, &t).unwrap();
        mean(&heavy.gain) - mean(&normal.gain)
    });
    assert!(diffs.iter().sum::<f64>() > 0.0);
    let p = params(10, 2, 1.0, 0.5, 0.4);
    let bad = SimOptions {
        family: Some(ValueFamily::StudentT { dof: 2.0 }),
        ..SimOptions::default()
    };
    assert!(simulate(&p, 10, 1, &bad).is_err());
}

#[test]
fn random_draws_respect_the_ranges() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for _ in 0..1000 {
        let p = ParamRanges::default().draw(&mut rng).unwrap();
        assert!((10..=3162).contains(&p.n_items));
        assert!(p.capacity <= (0.8 * p.n_items as f64) as usize || p.capacity == 1);
        assert!(p.var_noise_low >= 0.04 - 1e-12 && p.var_noise_low <= p.var_noise_high);
        let (r, s) = ParamRanges::draw_ranks(&p, &mut rng);
        assert!(p.selected_ranks().contains(&r) && p.selected_ranks().contains(&s));
    }
}

#[test]
fn gain_variance_is_never_negative() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..1000 {
        let p = ParamRanges::default().draw(&mut rng).unwrap();
        let m = gain_variance(&p).unwrap();
        assert!(
            m.var_gain >= 0.0 && m.var_w_high >= 0.0 && m.var_w_low >= 0.0,
            "{p:?} {m:?}"
        );
    }
}

proptest! {
    #[test]
    fn concomitants_increase_with_rank(n in 2usize..300, v in 0.01f64..20.0, e in 0.01f64..20.0) {
        let p = RuluParams::new(n, 1, 0.0, 0.0, v, e, e).unwrap();
        let xs: Vec<f64> = (1..=n).map(|r| expected_concomitant(r, &p, NoiseLevel::High).unwrap()).collect();
        prop_assert!(xs.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn selected_value_falls_with_capacity(n in 2usize..300, v in 0.01f64..20.0, e in 0.01f64..20.0, mu in -10.0f64..10.0) {
        let mut last = f64::INFINITY;
        for m in 1..=n {
            let p = RuluParams::new(n, m, mu, 0.0, v, e, e).unwrap();
            let w = expected_selected_value(&p, NoiseLevel::High).unwrap();
            prop_assert!(w <= last + 1e-12);
            last = w;
        }
    }

    #[test]
    fn relative_gain_vanishes_as_noise_levels_meet(v in 0.01f64..20.0, e1 in 0.01f64..20.0, a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (lo, hi) = (a.min(b), a.max(b));
        let g = |f: f64| relative_gain(&RuluParams::new(20, 3, 0.0, 0.0, v, e1, e1 * f).unwrap()).unwrap();
        prop_assert!(g(hi) <= g(lo.max(1e-9)) + 1e-15);
        prop_assert!(g(1.0).abs() < 1e-15);
        prop_assert!(g(hi) >= 0.0);
    }

    #[test]
    fn coincidence_rows_sum_to_one(n in 2usize..120, v in 0.05f64..10.0, e1 in 0.05f64..10.0, f in 0.05f64..1.0, r_frac in 0.0f64..1.0) {
        let p = RuluParams::new(n, 1, 0.0, 0.0, v, e1, e1 * f).unwrap();
        let r = 1 + ((n - 1) as f64 * r_frac) as usize;
        let row = rank_coincidence_row(r, &p).unwrap();
        prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}
