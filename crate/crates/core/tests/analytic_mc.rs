use attn_align::analytic::{
    approx_entropy, approximation_fidelity, fit_gaussian, gaussian_samples, mc_oracle_expectations,
    normal_quantiles, qq_check, solve_tau_entropy, solve_tau_maxprob, temperature_curve,
    GaussianFit, SortedRowAccumulator,
};
use attn_align::softmax_stats::LogitVector;
use attn_align::tasks::{needle_pmax, NeedleMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn normal_row(rng: &mut ChaCha8Rng, n: usize, sigma: f64) -> Vec<f64> {
    (0..n)
        .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn population_std(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
}

#[test]
fn gaussian_moment_closed_forms() {
    for (sigma, tau) in [(1.0, 1.0), (2.0, 2.0), (1.0, 0.7)] {
        let r = mc_oracle_expectations(sigma, tau, 1_000_000, 42).unwrap();
        assert!(r.exp_rel_err < 0.01, "{r:?}");
        if sigma == 1.0 {
            assert!(r.lexp_rel_err < 0.02, "{r:?}");
        }
    }
    let r = mc_oracle_expectations(1.0, 1.0, 1_000_000, 7).unwrap();
    assert!((r.exp_closed_form - 1.648721).abs() < 1e-6);
    assert!((r.lexp_closed_form - 1.648721).abs() < 1e-6);
}

#[test]
fn entropy_approximation_against_plain_softmax() {
    let length = 4096;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let reps = 2000;
    let mut total = 0.0;
    for _ in 0..reps {
        let row = normal_row(&mut rng, length, 1.0);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = row.iter().map(|x| (x - max).exp()).collect();
        let z: f64 = w.iter().sum();
        total -= w.iter().map(|wi| (wi / z) * (wi / z).ln()).sum::<f64>();
    }
    let exact = total / reps as f64;
    let approx = approx_entropy(length, 1.0, 1.0).unwrap().value;
    assert!((exact - approx).abs() <= 0.05, "{exact} vs {approx}");

    let lib = approximation_fidelity(length, 1.0, 1.0, reps, 9).unwrap();
    assert!((lib.mc_mean_entropy - exact).abs() < 0.01);
}

#[test]
fn max_prob_approximation_with_empirical_max() {
    let r = approximation_fidelity(4096, 1.0, 1.0, 10_000, 3).unwrap();
    assert!(r.p_max_rel_err < 0.10, "{r:?}");
}

#[test]
fn average_vector_follows_order_statistics() {
    let (rows, length) = (10_000, 512);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut acc = SortedRowAccumulator::default();
    for _ in 0..rows {
        acc.push(&normal_row(&mut rng, length, 1.0)).unwrap();
    }
    let avg = acc.finish().unwrap();

    // independent oracle: expected order statistics from fresh sorted draws
    let mut oracle_rng = ChaCha8Rng::seed_from_u64(99);
    let mut expected = vec![0.0; length];
    let draws = 4000;
    for _ in 0..draws {
        let mut row = normal_row(&mut oracle_rng, length, 1.0);
        row.sort_by(f64::total_cmp);
        expected
            .iter_mut()
            .zip(&row)
            .for_each(|(e, x)| *e += x / draws as f64);
    }
    let got = population_std(avg.values());
    let want = population_std(&expected);
    assert!((got - want).abs() / want < 0.03, "{got} vs {want}");
}

#[test]
fn fit_recovers_sigma_of_wide_gaussian() {
    let values = gaussian_samples(4096, 2.0, 17);
    let fit = fit_gaussian(&LogitVector::synthetic(values).unwrap()).unwrap();
    assert!((fit.sigma - 2.0).abs() / 2.0 < 0.05, "{}", fit.sigma);
}

#[test]
fn qq_linearity() {
    let report = qq_check(&gaussian_samples(10_000, 1.0, 5)).unwrap();
    assert!(report.linearity >= 0.995);
    assert!((qq_check(&normal_quantiles(500)).unwrap().linearity - 1.0).abs() < 1e-9);
}

#[test]
fn needle_monte_carlo_agrees_with_closed_form() {
    let closed = needle_pmax(4.0, 1.0, 1024, 1.0, NeedleMode::ClosedForm).unwrap();
    let mc = needle_pmax(
        4.0,
        1.0,
        1024,
        1.0,
        NeedleMode::MonteCarlo {
            replicates: 10_000,
            seed: 8,
        },
    )
    .unwrap();
    assert!((mc - closed).abs() / closed < 0.05, "{mc} vs {closed}");
}

#[test]
fn temperatures_fall_as_length_grows() {
    let lengths = [1024, 2048, 4096, 8192, 15000];
    let mut last = solve_tau_entropy(512, 512, 1.0, 1.0).unwrap();
    for &l in &lengths {
        let tau = solve_tau_entropy(512, l, 1.0, 1.0).unwrap();
        assert!(tau < last);
        last = tau;
    }

    let train = GaussianFit::new(1.0, 4.0, 512);
    let fits: Vec<_> = lengths
        .iter()
        .enumerate()
        .map(|(i, &l)| GaussianFit::new(1.0 + 0.02 * i as f64, 4.5, l))
        .collect();
    let rows = temperature_curve(&train, 0.3, &fits);
    for pair in rows.windows(2) {
        for (a, b) in [
            (pair[0].tau_prop1, pair[1].tau_prop1),
            (pair[0].tau_prop2, pair[1].tau_prop2),
            (pair[0].tau_log, pair[1].tau_log),
        ] {
            assert!(b.unwrap() <= a.unwrap());
        }
    }
}

#[test]
fn entropy_alignment_is_sharper_than_max_prob_alignment() {
    for p_max_tr in [0.1, 0.3, 0.6] {
        for l_ex in [1024, 2048, 4096, 8192] {
            let ent = solve_tau_entropy(512, l_ex, 1.0, 1.0).unwrap();
            let max = solve_tau_maxprob(512, l_ex, p_max_tr, 1.0, 1.0).unwrap();
            assert!(ent <= max, "p={p_max_tr} L={l_ex}: {ent} > {max}");
        }
    }
}
