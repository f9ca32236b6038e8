mod common;

use otssl::nn::{bce_loss, Architecture};
use otssl::ot::{build_cost_matrix, build_distance_cache, kernel_weight, DistanceCache};
use otssl::ssl::*;
use otssl::synth::{generate_dataset, Dataset, GeneratorConfig, GridSpec};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::OnceLock;

fn small_generator() -> GeneratorConfig {
    GeneratorConfig {
        grid: GridSpec {
            height: 8,
            width: 8,
            ..GridSpec::default()
        },
        ..GeneratorConfig::default()
    }
}

struct Fixture {
    train: Dataset,
    val: Dataset,
    cache: DistanceCache,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let cfg = small_generator();
        let (train, val) = generate_dataset(&cfg, 30, 10, 12, 40.0, 5).unwrap();
        let cache = build_distance_cache(&train, &build_cost_matrix(&cfg.grid).unwrap()).unwrap();
        Fixture { train, val, cache }
    })
}

fn small_arch() -> Architecture {
    Architecture {
        height: 8,
        width: 8,
        ..Architecture::default()
    }
}

fn ssl_cfg(lambda: f64) -> SSLConfig {
    SSLConfig {
        lambda,
        sigma: 1.0,
        batch_size: 8,
        epochs: 3,
        seed: 21,
        ..SSLConfig::default()
    }
}

fn choose(n: usize, k: usize) -> usize {
    if k > n {
        0
    } else {
        (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
    }
}

proptest! {
    #[test]
    fn pair_rule(mask in proptest::collection::vec(any::<bool>(), 0..40)) {
        let pairs = enumerate_pairs(&mask);
        let k = mask.len();
        let kl = mask.iter().filter(|&&l| l).count();
        prop_assert_eq!(pairs.len(), choose(k, 2) - choose(kl, 2));
        for &(a, b) in &pairs {
            prop_assert!(a < b);
            prop_assert!(!(mask[a] && mask[b]));
        }
        let mut dedup = pairs.clone();
        dedup.dedup();
        prop_assert_eq!(dedup.len(), pairs.len());
    }
}

#[test]
fn smoothness_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let k = rng.random_range(2..8);
        let mask: Vec<bool> = (0..k).map(|_| rng.random_bool(0.4)).collect();
        let pairs = enumerate_pairs(&mask);
        let weights = (0..pairs.len()).map(|_| rng.random::<f64>()).collect();
        let set = PairSet::new(pairs, weights).unwrap();
        let f: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
        let g = smoothness_grad(&set, &f);
        for i in 0..k {
            let mut up = f.clone();
            up[i] += 1e-6;
            let mut down = f.clone();
            down[i] -= 1e-6;
            let fd = (smoothness_term(&set, &up) - smoothness_term(&set, &down)) / 2e-6;
            assert!((fd - g[i]).abs() < 1e-8);
        }
    }
}

#[test]
fn smoothness_step_reduces_gap() {
    let set = PairSet::new(vec![(0, 1)], vec![0.6]).unwrap();
    let f = [0.8, 0.3];
    let g = smoothness_grad(&set, &f);
    let stepped: Vec<f64> = f.iter().zip(&g).map(|(x, d)| x - 0.1 * d).collect();
    assert!((stepped[0] - stepped[1]).powi(2) < (f[0] - f[1]).powi(2));
}

#[test]
fn batch_loss_is_permutation_invariant() {
    let fx = fixture();
    let params = init_params(small_arch(), 4).unwrap();
    let cfg = ssl_cfg(10.0);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..10 {
        let mut idx: Vec<usize> = (0..fx.train.len()).collect();
        idx.shuffle(&mut rng);
        let mut batch = idx[..8].to_vec();
        let a = composite_batch_loss(&params, &fx.train, &batch, &cfg, Some(&fx.cache)).unwrap();
        batch.shuffle(&mut rng);
        let b = composite_batch_loss(&params, &fx.train, &batch, &cfg, Some(&fx.cache)).unwrap();
        assert!((a.total - b.total).abs() <= 1e-12 * a.total.abs().max(1.0));
        assert_eq!(a.n_pairs, b.n_pairs);
    }
}

#[test]
fn batch_loss_separates_into_terms() {
    let fx = fixture();
    let params = init_params(small_arch(), 8).unwrap();
    let lambda = 100.0;
    let cfg = SSLConfig {
        sigma: 0.5,
        ..ssl_cfg(lambda)
    };
    let batch = [0, 3, 11, 12, 20, 29, 5];
    let loss = composite_batch_loss(&params, &fx.train, &batch, &cfg, Some(&fx.cache)).unwrap();

    let inputs = InputBank::new(&fx.train, false).unwrap();
    let single = |i: usize| params.predict(&inputs.gather(&[i])).unwrap()[0];
    let mut supervised = 0.0;
    for &i in &batch {
        let s = &fx.train.samples[i];
        if s.is_labelled {
            supervised += bce_loss(single(i), s.label.as_f64());
        }
    }
    let mut pair_sum = 0.0;
    for (a, &i) in batch.iter().enumerate() {
        for &j in &batch[a + 1..] {
            if fx.train.is_labelled(i) && fx.train.is_labelled(j) {
                continue;
            }
            let w = kernel_weight(fx.cache.get(i, j).unwrap(), 0.5).unwrap();
            pair_sum += w * (single(i) - single(j)).powi(2);
        }
    }
    let expected = supervised + lambda * pair_sum;
    assert!(
        (loss.total - expected).abs() < 1e-12 * expected.max(1.0),
        "{} vs {expected}",
        loss.total
    );
}

#[test]
fn unlabelled_batch_has_only_smoothness() {
    let fx = fixture();
    let params = init_params(small_arch(), 1).unwrap();
    let cfg = ssl_cfg(3.0);
    let batch = [15, 16, 17, 18];
    let loss = composite_batch_loss(&params, &fx.train, &batch, &cfg, Some(&fx.cache)).unwrap();
    assert_eq!(loss.supervised, 0.0);
    assert_eq!(loss.n_pairs, 6);
    assert!((loss.total - 3.0 * loss.smoothness).abs() < 1e-15);
}

#[test]
fn lambda_zero_matches_supervised_loop() {
    let fx = fixture();
    let cfg = SSLConfig {
        epochs: 4,
        ..ssl_cfg(0.0)
    };
    let mut ssl_losses = Vec::new();
    train_run_observed(&fx.train, &fx.val, &cfg, None, |e| {
        if let TrainEvent::Batch { loss, .. } = e {
            ssl_losses.push(loss.total);
        }
    })
    .unwrap();
    let reference = common::supervised::supervised_losses(&fx.train, &cfg);
    assert_eq!(ssl_losses.len(), reference.len());
    for (a, b) in ssl_losses.iter().zip(&reference) {
        assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
    }
}

#[test]
fn runs_are_deterministic_and_well_formed() {
    let fx = fixture();
    let cfg = ssl_cfg(10.0);
    let a = train_run(&fx.train, &fx.val, &cfg, Some(&fx.cache)).unwrap();
    let b = train_run(&fx.train, &fx.val, &cfg, Some(&fx.cache)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.val_accuracy.len(), 3);
    assert!(a.val_accuracy.iter().all(|&x| (0.0..=1.0).contains(&x)));
    assert_eq!(
        a.max_accuracy,
        a.val_accuracy.iter().copied().fold(0.0, f64::max)
    );

    let one = train_run(
        &fx.train,
        &fx.val,
        &SSLConfig { epochs: 1, ..cfg },
        Some(&fx.cache),
    )
    .unwrap();
    assert_eq!(one.val_accuracy.len(), 1);
}

#[test]
fn training_reduces_loss() {
    let fx = fixture();
    let cfg = SSLConfig {
        epochs: 30,
        ..ssl_cfg(1.0)
    };
    let r = train_run(&fx.train, &fx.val, &cfg, Some(&fx.cache)).unwrap();
    assert!(r.train_loss[29] < r.train_loss[0], "{:?}", r.train_loss);
}

#[test]
fn configuration_errors_before_training() {
    let fx = fixture();
    let missing_cache = train_run(&fx.train, &fx.val, &ssl_cfg(1.0), None);
    assert!(matches!(missing_cache, Err(otssl::Error::Config(_))));
    let wrong_cache = DistanceCache::new(3);
    assert!(train_run(&fx.train, &fx.val, &ssl_cfg(1.0), Some(&wrong_cache)).is_err());
    let bad = SSLConfig {
        sigma: -1.0,
        ..ssl_cfg(1.0)
    };
    assert!(train_run(&fx.train, &fx.val, &bad, Some(&fx.cache)).is_err());
    assert!(train_run(&fx.train, &fx.train, &ssl_cfg(0.0), None).is_err());
}

#[test]
fn init_uses_run_seed() {
    let a = init_params(small_arch(), 3).unwrap();
    let b = init_params(small_arch(), 3).unwrap();
    let c = init_params(small_arch(), 4).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}
