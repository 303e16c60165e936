use fcvp_core::force::{mixture_draw, CandidateSource};
use fcvp_core::policy::sample_gaussian;
use fcvp_core::rng::rng_for;
use rand::Rng;

const DRAWS: usize = 10_000;
/// Two-sided Kolmogorov-Smirnov critical value at alpha = 0.01.
const KS_CRIT: f64 = 1.628;

fn ks_uniform(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let cdf = (x + 1.0) / 2.0;
            (cdf - i as f64 / n).abs().max(((i + 1) as f64 / n - cdf).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn p_one_is_uniform_on_every_dimension() {
    let mean = [0.9, -0.4, 0.0, 0.2, 0.7, -1.0];
    let mut rng = rng_for(8, &[]);
    let draws: Vec<_> = (0..DRAWS).map(|_| mixture_draw(&mean, 0.3, 1.0, &mut rng)).collect();
    assert!(draws.iter().all(|(_, s)| *s == CandidateSource::Uniform));
    for d in 0..6 {
        let xs: Vec<f64> = draws.iter().map(|(a, _)| a.to_array()[d]).collect();
        let stat = ks_uniform(xs);
        assert!(stat < KS_CRIT / (DRAWS as f64).sqrt(), "dim {d}: D = {stat}");
    }
}

#[test]
fn p_tenth_tags_a_tenth_uniform() {
    let mean = [0.1; 6];
    let mut rng = rng_for(9, &[]);
    let uniform = (0..DRAWS)
        .filter(|_| mixture_draw(&mean, 0.3, 0.1, &mut rng).1 == CandidateSource::Uniform)
        .count();
    let frac = uniform as f64 / DRAWS as f64;
    assert!((frac - 0.1).abs() <= 0.01, "uniform fraction {frac}");
}

#[test]
fn p_zero_is_the_policy_sample() {
    let mean = [0.3, -0.2, 0.5, 0.0, 0.1, -0.6];
    for seed in 0..200 {
        let mut a = rng_for(seed, &[]);
        let mut b = rng_for(seed, &[]);
        let (got, src) = mixture_draw(&mean, 0.3, 0.0, &mut a);
        // the mixture always spends one coin flip first
        let _: f64 = b.random();
        assert_eq!(src, CandidateSource::Policy);
        assert_eq!(got, sample_gaussian(&mean, 0.3, &mut b));
    }
}
