use ndarray::Array1;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Binomial, ChiSquared, Continuous, ContinuousCDF, Discrete, Normal};

use blv::model::cond_silence_probs;
use blv::synthesis::{
    build_membership, build_p, generate_word, sample_latent, sample_truncated_normal, synthesize_gt,
    SynthHyperparams,
};
use blv::{LatentVector, ModelParams};

/// Mean of N(mu, sd) truncated to [lo, hi].
fn truncated_normal_mean(mu: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    let std = Normal::new(0.0, 1.0).unwrap();
    let (a, b) = ((lo - mu) / sd, (hi - mu) / sd);
    mu + sd * (std.pdf(a) - std.pdf(b)) / (std.cdf(b) - std.cdf(a))
}

fn truncated_normal_var(mu: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    let std = Normal::new(0.0, 1.0).unwrap();
    let (a, b) = ((lo - mu) / sd, (hi - mu) / sd);
    let z = std.cdf(b) - std.cdf(a);
    let r = (std.pdf(a) - std.pdf(b)) / z;
    sd * sd * (1.0 + (a * std.pdf(a) - b * std.pdf(b)) / z - r * r)
}

fn chi_square_p(observed: &[u64], pmf: impl Fn(u64) -> f64, lo: u64, hi: u64) -> f64 {
    let total: u64 = observed.iter().sum();
    let norm: f64 = (lo..=hi).map(&pmf).sum();
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let (mut o, mut e) = (0.0, 0.0);
    for k in lo..=hi {
        o += observed[k as usize] as f64;
        e += pmf(k) / norm * total as f64;
        if e >= 5.0 {
            bins.push((o, e));
            o = 0.0;
            e = 0.0;
        }
    }
    if let Some(last) = bins.last_mut() {
        last.0 += o;
        last.1 += e;
    }
    let stat: f64 = bins.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
    1.0 - ChiSquared::new((bins.len() - 1).max(1) as f64).unwrap().cdf(stat)
}

#[test]
fn truncated_normal_mean_matches_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let draws = 100_000;
    let xs: Vec<f64> = (0..draws)
        .map(|_| sample_truncated_normal(0.96, 0.02, 0.0, 1.0, &mut rng).unwrap())
        .collect();
    assert!(xs.iter().all(|x| (0.0..=1.0).contains(x)));
    let mean = xs.iter().sum::<f64>() / draws as f64;
    let expected = truncated_normal_mean(0.96, 0.02, 0.0, 1.0);
    let se = (truncated_normal_var(0.96, 0.02, 0.0, 1.0) / draws as f64).sqrt();
    assert!((mean - expected).abs() < 3.0 * se, "{mean} vs {expected} (se {se})");
}

#[test]
fn column_sums_follow_truncated_binomial() {
    let (n, m, c, c_min, c_max) = (20, 20, 2, 1, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut counts = vec![0u64; n + 1];
    for _ in 0..10_000 / m {
        let s = build_membership(n, m, c, c_min, c_max, 50 * m, &mut rng).unwrap();
        for a in 0..m {
            counts[s.column(a).iter().filter(|&&b| b).count()] += 1;
        }
    }
    let bin = Binomial::new(c as f64 / n as f64, n as u64).unwrap();
    let p = chi_square_p(&counts, |k| bin.pmf(k), c_min as u64, c_max as u64);
    assert!(p > 0.01, "chi-square p = {p}, counts {counts:?}");
}

#[test]
fn latent_counts_follow_truncated_binomial() {
    let hyper = SynthHyperparams::natural_movie(20, 20);
    let q = 0.08;
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut counts = vec![0u64; 21];
    for _ in 0..100_000 {
        counts[sample_latent(&hyper, q, &mut rng).unwrap().cardinality()] += 1;
    }
    assert!(counts[hyper.k_max + 1..].iter().all(|&c| c == 0));
    let bin = Binomial::new(q, 20).unwrap();
    let p = chi_square_p(&counts, |k| bin.pmf(k), hyper.k_min as u64, hyper.k_max as u64);
    assert!(p > 0.01, "chi-square p = {p}, counts {counts:?}");
}

#[test]
fn member_entries_have_truncated_normal_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let s = build_membership(30, 30, 10, 5, 15, 0, &mut rng).unwrap();
    let mut values = Vec::new();
    for _ in 0..40 {
        let p = build_p(&s, 0.3, 0.1, &mut rng).unwrap();
        for ((i, a), &member) in s.indexed_iter() {
            if member {
                values.push(p[[i, a]]);
            } else {
                assert_eq!(p[[i, a]], 1.0);
            }
        }
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let expected = truncated_normal_mean(0.7, 0.1, 0.0, 1.0);
    let se = (truncated_normal_var(0.7, 0.1, 0.0, 1.0) / values.len() as f64).sqrt();
    assert!((mean - expected).abs() < 3.0 * se, "{mean} vs {expected}");
}

#[test]
fn word_firing_rates_match_silence_probabilities() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let gt = synthesize_gt(&SynthHyperparams::natural_movie(8, 6), &mut rng).unwrap();
    let z = LatentVector::new(vec![true, false, false, true, false, false]);
    let t = cond_silence_probs(&gt.params, &z).unwrap();
    let draws = 100_000;
    let mut fired = vec![0u64; 8];
    for _ in 0..draws {
        let y = generate_word(&gt, &z, &mut rng).unwrap();
        for (f, &b) in fired.iter_mut().zip(y.bits()) {
            *f += b as u64;
        }
    }
    for i in 0..8 {
        let p = 1.0 - t[i];
        let se = (p * (1.0 - p) / draws as f64).sqrt().max(1e-12);
        let est = fired[i] as f64 / draws as f64;
        assert!((est - p).abs() <= 3.0 * se.max(1.0 / draws as f64), "cell {i}: {est} vs {p}");
    }
}

#[test]
fn deterministic_assembly_reproduces_its_column() {
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    let mut gt = synthesize_gt(&SynthHyperparams::natural_movie(10, 4), &mut rng).unwrap();
    let p = gt.membership.mapv(|m| if m { 0.0 } else { 1.0 });
    gt.params = ModelParams::from_probabilities(&p, &Array1::ones(10), 0.25).unwrap();
    for a in 0..4 {
        let y = generate_word(&gt, &LatentVector::one_hot(4, a), &mut rng).unwrap();
        let column: Vec<bool> = gt.membership.column(a).to_vec();
        assert_eq!(y.bits(), column.as_slice());
    }
}
