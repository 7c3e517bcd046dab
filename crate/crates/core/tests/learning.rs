use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use blv::eval::model_members;
use blv::model::log_joint;
use blv::synthesis::{generate_dataset, synthesize_gt, SynthHyperparams};
use blv::{em_step, train, HEState, LatentVector, LearnConfig, ModelParams, PriorKind, SpikeWord};

#[test]
fn identical_words_carve_out_one_assembly() {
    let n = 10;
    let members = [1, 4, 7];
    let y = SpikeWord::new((0..n).map(|i| members.contains(&i)).collect());
    let corpus = vec![y; 2000];
    let cfg = LearnConfig {
        q_init: Some(0.1),
        ..LearnConfig::default()
    };
    let model = train(&corpus, &cfg).unwrap().model;
    let found = model_members(&model).iter().any(|set| {
        set.members == members && members.iter().all(|&i| model.p(i, set.assembly_index) < 0.5)
    });
    assert!(found, "no column isolates the planted members");
}

#[test]
fn first_pass_raises_the_log_joint() {
    let n = 12;
    let m = 4;
    // Four disjoint crisp assemblies of three cells each, little background.
    let p = Array2::from_shape_fn((n, m), |(i, a)| if i / 3 == a { 0.02 } else { 1.0 });
    let r = Array1::from_elem(n, 0.995);
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut gt = synthesize_gt(&SynthHyperparams::natural_movie(n, m), &mut rng).unwrap();
    gt.params = ModelParams::from_probabilities(&p, &r, 0.25).unwrap();
    gt.membership = p.mapv(|v| v < 1.0);
    let words = generate_dataset(&gt, 4000, &mut rng).unwrap().words();

    let cfg = LearnConfig::default();
    let mut model = blv::learning::init_model(n, m, &cfg).unwrap();
    let mut he = HEState::new(m);
    // Mean and standard error of the log joint over consecutive blocks.
    let mut blocks = Vec::new();
    for block in words.chunks(500) {
        let scores: Vec<f64> = block
            .iter()
            .map(|y| {
                let z = em_step(&mut model, y, &cfg, &mut he).unwrap();
                log_joint(&model, y, &z).unwrap()
            })
            .collect();
        let k = scores.len() as f64;
        let mean = scores.iter().sum::<f64>() / k;
        let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (k - 1.0);
        blocks.push((mean, (var / k).sqrt()));
    }
    for pair in blocks.windows(2) {
        let ((a, sa), (b, sb)) = (pair[0], pair[1]);
        assert!(b > a - 3.0 * (sa * sa + sb * sb).sqrt(), "{blocks:?}");
    }
    assert!(blocks.last().unwrap().0 > blocks[0].0, "{blocks:?}");
}

#[test]
fn training_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let gt = synthesize_gt(&SynthHyperparams::white_noise(8, 8), &mut rng).unwrap();
    let words = generate_dataset(&gt, 1500, &mut rng).unwrap().words();
    let cfg = LearnConfig {
        rng_seed: 4,
        n_passes: 2,
        ..LearnConfig::default()
    };
    let (a, b) = (train(&words, &cfg).unwrap(), train(&words, &cfg).unwrap());
    assert_eq!(a.model, b.model);
    assert_eq!(a.trace, b.trace);
}

#[test]
fn homeostatic_prior_uses_more_latents() {
    let (mut he_used, mut bin_used) = (0usize, 0usize);
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let gt = synthesize_gt(&SynthHyperparams::natural_movie(20, 20), &mut rng).unwrap();
        let words = generate_dataset(&gt, 5000, &mut rng).unwrap().words();
        let used = |prior_kind| {
            let cfg = LearnConfig {
                rng_seed: seed,
                n_passes: 1,
                prior_kind,
                ..LearnConfig::default()
            };
            let outcome = train(&words, &cfg).unwrap();
            outcome.trace.usage.iter().filter(|&&u| u > 0).count()
        };
        he_used += used(PriorKind::HomeostaticEgalitarian);
        bin_used += used(PriorKind::Binomial);
    }
    assert!(he_used > bin_used, "HE {he_used} vs binomial {bin_used}");
}

#[test]
fn silent_update_raises_every_background_rate() {
    let cfg = LearnConfig {
        q_init: Some(0.05),
        ..LearnConfig::default()
    };
    let mut model = blv::learning::init_model(5, 3, &cfg).unwrap();
    let before = model.r_logit().clone();
    let mut he = HEState::new(3);
    let z = em_step(&mut model, &SpikeWord::new(vec![false; 5]), &cfg, &mut he).unwrap();
    assert_eq!(z, LatentVector::new(vec![false; 3]));
    for (b, a) in before.iter().zip(model.r_logit()) {
        assert!(a > b);
    }
}
