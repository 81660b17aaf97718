use proptest::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use zipscan::rng::substream;
use zipscan::zip::{zip_fit_em, zip_log_pmf, zip_moments, zip_sample, HistoricalSeries};
use zipscan::{Error, ZipParams};

/// Plain Poisson log-pmf with an independently summed log-factorial.
fn poisson_log_pmf(y: u32, mu: f64) -> f64 {
    let ln_fact: f64 = (2..=y).map(|k| f64::from(k).ln()).sum();
    f64::from(y) * mu.ln() - mu - ln_fact
}

fn support_end(mu: f64) -> u32 {
    (mu + 40.0 * mu.sqrt() + 60.0) as u32
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn pmf_sums_to_one(p in 0.0f64..0.95, mu in 0.05f64..40.0) {
        let z = ZipParams::new(p, mu).unwrap();
        let total: f64 = (0..=support_end(mu)).map(|y| zip_log_pmf(y, z).exp()).sum();
        prop_assert!((total - 1.0).abs() <= 1e-12, "sum = {total}");
    }

    #[test]
    fn moments_match_pmf(p in 0.0f64..0.95, mu in 0.05f64..30.0) {
        let z = ZipParams::new(p, mu).unwrap();
        let (mean, var) = zip_moments(z);
        let (mut m1, mut m2) = (0.0, 0.0);
        for y in 0..=support_end(mu) {
            let w = zip_log_pmf(y, z).exp();
            m1 += w * f64::from(y);
            m2 += w * f64::from(y) * f64::from(y);
        }
        prop_assert!((m1 - mean).abs() <= 1e-9 * mean.max(1.0));
        prop_assert!((m2 - m1 * m1 - var).abs() <= 1e-8 * var.max(1.0));
        prop_assert!(var >= mean);
    }

    #[test]
    fn zero_inflation_off_is_poisson(mu in 0.01f64..100.0, y in 0u32..300) {
        let z = ZipParams::new(0.0, mu).unwrap();
        let got = zip_log_pmf(y, z);
        let want = poisson_log_pmf(y, mu);
        prop_assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0), "{got} vs {want}");
    }

    #[test]
    fn zero_probability_matches_mixture(p in 0.0f64..0.99, mu in 0.01f64..50.0) {
        let z = ZipParams::new(p, mu).unwrap();
        let want = (p + (1.0 - p) * (-mu).exp()).ln();
        prop_assert!((zip_log_pmf(0, z) - want).abs() <= 1e-13 * want.abs().max(1.0));
    }

    #[test]
    fn positive_counts_scale_by_one_minus_p(p in 0.0f64..0.99, mu in 0.01f64..50.0, y in 1u32..100) {
        let z = ZipParams::new(p, mu).unwrap();
        let want = (1.0 - p).ln() + poisson_log_pmf(y, mu);
        prop_assert!((zip_log_pmf(y, z) - want).abs() <= 1e-11 * want.abs().max(1.0));
    }
}

#[test]
fn parameter_domain_is_enforced() {
    for (p, mu) in [
        (1.0, 1.0),
        (-0.1, 1.0),
        (0.2, 0.0),
        (0.2, -1.0),
        (f64::NAN, 1.0),
        (0.2, f64::INFINITY),
    ] {
        assert!(
            matches!(ZipParams::new(p, mu), Err(Error::ParameterDomain(_))),
            "({p}, {mu})"
        );
    }
}

#[test]
fn sampler_matches_pmf() {
    let z = ZipParams::new(0.3, 4.0).unwrap();
    let n = 40_000usize;
    let bins = 13usize;
    let mut observed = vec![0usize; bins + 1];
    let mut rng = substream(42, &[7]);
    for _ in 0..n {
        let y = zip_sample(z, &mut rng) as usize;
        observed[y.min(bins)] += 1;
    }
    let mut expected: Vec<f64> = (0..bins).map(|y| zip_log_pmf(y as u32, z).exp() * n as f64).collect();
    expected.push(n as f64 - expected.iter().sum::<f64>());
    let chi2: f64 = observed
        .iter()
        .zip(&expected)
        .map(|(&o, &e)| (o as f64 - e).powi(2) / e)
        .sum();
    let critical = ChiSquared::new(bins as f64).unwrap().inverse_cdf(0.999);
    assert!(chi2 < critical, "chi2 = {chi2}, critical = {critical}");
}

#[test]
fn sampler_is_reproducible() {
    let z = ZipParams::new(0.15, 5.0).unwrap();
    let draw = |seed| {
        let mut rng = substream(seed, &[1, 2]);
        (0..100).map(|_| zip_sample(z, &mut rng)).collect::<Vec<_>>()
    };
    assert_eq!(draw(3), draw(3));
    assert_ne!(draw(3), draw(4));
}

#[test]
fn fit_recovers_parameters() {
    for (p, mu, seed) in [(0.2, 6.0, 1u64), (0.5, 2.0, 2), (0.05, 10.0, 3)] {
        let z = ZipParams::new(p, mu).unwrap();
        let mut rng = substream(seed, &[0]);
        let counts: Vec<u32> = (0..20_000).map(|_| zip_sample(z, &mut rng)).collect();
        let fit = zip_fit_em(&HistoricalSeries::new(counts).unwrap(), 1e-12, 10_000).unwrap();
        assert!((fit.params.p() - p).abs() < 0.02, "p: {} vs {p}", fit.params.p());
        assert!(
            (fit.params.mu() - mu).abs() < 0.05 * mu,
            "mu: {} vs {mu}",
            fit.params.mu()
        );
        let trace = &fit.loglik_trace;
        assert!(trace.windows(2).all(|w| w[1] >= w[0] - 1e-9 * w[0].abs()));
    }
}

#[test]
fn fit_reports_degenerate_and_non_convergent_series() {
    let zeros = HistoricalSeries::new(vec![0; 10]).unwrap();
    assert!(matches!(zip_fit_em(&zeros, 1e-8, 100), Err(Error::DegenerateSample(_))));

    let series = HistoricalSeries::new(vec![0, 0, 0, 3, 4, 0, 5, 0, 2, 0]).unwrap();
    match zip_fit_em(&series, 1e-300, 2) {
        Err(Error::NonConvergence { last, iterations }) => {
            assert_eq!(iterations, 2);
            assert!(last.p() > 0.0 && last.mu() > 0.0);
        }
        other => panic!("expected non-convergence, got {other:?}"),
    }
    assert!(HistoricalSeries::new(vec![1]).is_err());
}
