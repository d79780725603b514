use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vi_core::encoder::toy_encoder_config;
use vi_core::feature::FeatureKind;
use vi_core::synth::{planted_dataset, Informativeness, PlantedFeature, PlantedSpec};
use vi_core::trainer::{
    batch_triplet_loss, center_output_bias, mine_semi_hard, sample_batch, train_feature_model, TrainConfig, Triplet,
};
use vi_core::Error;

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Straightforward reference: for each anchor-positive pair, list the
/// negatives sorted by (distance, index) and take the first one matching
/// each rule in turn.
fn reference_mining(e: &[Vec<f64>], works: &[u32], margin: f64) -> Vec<Triplet> {
    let mut out = Vec::new();
    for a in 0..e.len() {
        for p in 0..e.len() {
            if p == a || works[p] != works[a] {
                continue;
            }
            let dap = dist(&e[a], &e[p]);
            let mut negs: Vec<(f64, usize)> =
                (0..e.len()).filter(|&n| works[n] != works[a]).map(|n| (dist(&e[a], &e[n]), n)).collect();
            negs.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap().then(x.1.cmp(&y.1)));
            let pick = negs
                .iter()
                .find(|(d, _)| *d > dap && *d < dap + margin)
                .or_else(|| negs.iter().find(|(d, _)| *d > dap))
                .unwrap_or(&negs[0]);
            out.push(Triplet { anchor: a, positive: p, negative: pick.1 });
        }
    }
    out
}

fn reference_loss(e: &[Vec<f64>], t: &[Triplet], margin: f64) -> f64 {
    t.iter()
        .map(|t| (dist(&e[t.anchor], &e[t.positive]) - dist(&e[t.anchor], &e[t.negative]) + margin).max(0.0))
        .sum::<f64>()
        / t.len() as f64
}

fn random_batch(seed: u64, n: usize, works: u32, quantize: bool) -> (Vec<Vec<f64>>, Vec<u32>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<u32> = (0..n).map(|_| rng.gen_range(0..works)).collect();
    labels[0] = 0;
    labels[1] = 1;
    let e = (0..n)
        .map(|_| {
            (0..3)
                .map(|_| {
                    let v: f64 = rng.gen_range(-1.0..1.0);
                    // coarse values create exact distance ties
                    if quantize { (v * 2.0).round() / 2.0 } else { v }
                })
                .collect()
        })
        .collect();
    (e, labels)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]
    #[test]
    fn mining_matches_reference(seed in any::<u64>(), n in 2usize..=16, works in 2u32..5, quantize: bool, margin in 0.05f64..1.0) {
        let (e, labels) = random_batch(seed, n, works, quantize);
        let got = mine_semi_hard(&e, &labels, margin).unwrap();
        let want = reference_mining(&e, &labels, margin);
        prop_assert_eq!(&got, &want);
        for t in &got {
            prop_assert!(labels[t.negative] != labels[t.anchor]);
            prop_assert_eq!(labels[t.positive], labels[t.anchor]);
        }
        if !got.is_empty() {
            let (loss, _, active) = batch_triplet_loss(&e, &got, margin);
            prop_assert!((loss - reference_loss(&e, &got, margin)).abs() < 1e-12);
            prop_assert!(active <= got.len());
        }
    }

    #[test]
    fn permuting_the_batch_keeps_the_loss(seed in any::<u64>(), n in 2usize..=16, margin in 0.05f64..1.0) {
        let (e, labels) = random_batch(seed, n, 3, false);
        let t = mine_semi_hard(&e, &labels, margin).unwrap();
        let (loss, _, _) = batch_triplet_loss(&e, &t, margin);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let mut order: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(&mut order[..], &mut rng);
        let pe: Vec<Vec<f64>> = order.iter().map(|&i| e[i].clone()).collect();
        let pl: Vec<u32> = order.iter().map(|&i| labels[i]).collect();
        let pt = mine_semi_hard(&pe, &pl, margin).unwrap();
        let (ploss, _, _) = batch_triplet_loss(&pe, &pt, margin);
        if t.is_empty() {
            prop_assert!(pt.is_empty());
        } else {
            prop_assert!((loss - ploss).abs() < 1e-12, "{} vs {}", loss, ploss);
        }
    }
}

#[test]
fn loss_gradient_matches_finite_differences() {
    let (e, labels) = random_batch(11, 12, 3, false);
    let margin = 0.5;
    let t = mine_semi_hard(&e, &labels, margin).unwrap();
    let (_, grads, active) = batch_triplet_loss(&e, &t, margin);
    assert!(active > 0);
    let h = 1e-6;
    for i in 0..e.len() {
        for k in 0..3 {
            let mut up = e.clone();
            let mut down = e.clone();
            up[i][k] += h;
            down[i][k] -= h;
            let fd = (reference_loss(&up, &t, margin) - reference_loss(&down, &t, margin)) / (2.0 * h);
            assert!((fd - grads[i][k]).abs() < 1e-6, "({i},{k}): fd {fd}, analytic {}", grads[i][k]);
        }
    }
}

#[test]
fn separated_clusters_give_no_gradient() {
    let mut e = Vec::new();
    let mut labels = Vec::new();
    for w in 0..4 {
        for v in 0..4 {
            e.push(vec![w as f64 * 10.0 + v as f64 * 0.01, 0.0]);
            labels.push(w);
        }
    }
    let t = mine_semi_hard(&e, &labels, 0.3).unwrap();
    assert_eq!(t.len(), 4 * 4 * 3);
    let (loss, grads, active) = batch_triplet_loss(&e, &t, 0.3);
    assert_eq!((loss, active), (0.0, 0));
    assert!(grads.iter().flatten().all(|&g| g == 0.0));
}

#[test]
fn single_work_batch_is_an_error() {
    let e = vec![vec![0.0], vec![1.0]];
    assert!(matches!(mine_semi_hard(&e, &[4, 4], 0.3), Err(Error::SingleWorkBatch)));
}

proptest! {
    #[test]
    fn batches_have_the_requested_structure(seed in any::<u64>(), works in 4usize..30, singles in 0usize..5) {
        let config = TrainConfig { works_per_batch: 4, versions_per_work: 3, batch_size: 12, ..TrainConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // works of 2..=5 tracks plus a few single-track works
        let mut labels = Vec::new();
        for w in 0..works as u32 {
            for _ in 0..rng.gen_range(2..=5) {
                labels.push(w);
            }
        }
        for s in 0..singles as u32 {
            labels.push(1000 + s);
        }
        let batch = sample_batch(&labels, &config, &mut rng).unwrap();
        prop_assert_eq!(batch.len(), 12);
        let mut per_work: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for &(t, w) in &batch {
            prop_assert_eq!(labels[t], w);
            per_work.entry(w).or_default().push(t);
        }
        prop_assert_eq!(per_work.len(), 4);
        for (w, tracks) in per_work {
            prop_assert!(w < 1000);
            prop_assert_eq!(tracks.len(), 3);
            let size = labels.iter().filter(|&&l| l == w).count();
            let mut distinct = tracks.clone();
            distinct.sort_unstable();
            distinct.dedup();
            // without replacement whenever the work is large enough
            prop_assert_eq!(distinct.len(), size.min(3));
        }
    }
}

#[test]
fn too_few_works_is_reported() {
    let labels = [0, 0, 1, 1, 2];
    let config = TrainConfig { works_per_batch: 3, versions_per_work: 2, batch_size: 6, ..TrainConfig::default() };
    let e = sample_batch(&labels, &config, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
    assert!(matches!(e, Error::NotEnoughWorks { needed: 3, found: 2 }), "{e}");
}

fn planted_ha(noise: f64, works: usize, seed: u64) -> (Vec<vi_core::feature::FeatureMatrix>, Vec<u32>) {
    let spec = PlantedSpec {
        works,
        versions: 4,
        seed,
        features: vec![PlantedFeature::toy(FeatureKind::Ha, noise, Informativeness::All)],
    };
    let tracks = planted_dataset(&spec).unwrap();
    let labels = tracks.iter().map(|t| t.work).collect();
    (tracks.into_iter().map(|t| t.features.into_iter().next().unwrap()).collect(), labels)
}

#[test]
fn planted_training_halves_the_loss() {
    let (features, labels) = planted_ha(0.6, 50, 3);
    let config = toy_encoder_config(FeatureKind::Ha, 16);
    let mut params = config.init_params(1);
    center_output_bias(&features, &config, &mut params).unwrap();
    let train = TrainConfig { seed: 5, ..TrainConfig::default() };
    let mut seen = 0;
    let (_, history) = train_feature_model(&features, &labels, &config, params, &train, |_, _| {
        seen += 1;
        Ok(())
    })
    .unwrap();
    assert_eq!(seen, 10);
    let first = history[0].mean_loss;
    let last = history[9].mean_loss;
    println!("planted Ha loss {first:.4} -> {last:.4}");
    assert!(last < 0.5 * first, "{first} -> {last}");
}

#[test]
fn training_is_deterministic_across_thread_counts() {
    let (features, labels) = planted_ha(1.0, 20, 8);
    let config = toy_encoder_config(FeatureKind::Ha, 8);
    let train = TrainConfig { epochs: 2, batches_per_epoch: 3, seed: 9, ..TrainConfig::default() };
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| train_feature_model(&features, &labels, &config, config.init_params(2), &train, |_, _| Ok(())))
            .unwrap()
    };
    let (p1, h1) = run(1);
    let (p3, h3) = run(3);
    assert_eq!(h1, h3);
    assert_eq!(p1, p3);
    assert_ne!(p1, config.init_params(2));
}

#[test]
fn mismatched_inputs_are_rejected() {
    let (features, labels) = planted_ha(1.0, 20, 8);
    let config = toy_encoder_config(FeatureKind::Me, 8);
    let train = TrainConfig::default();
    assert!(train_feature_model(&features, &labels, &config, config.init_params(0), &train, |_, _| Ok(())).is_err());
    let config = toy_encoder_config(FeatureKind::Ha, 8);
    assert!(train_feature_model(&features, &labels[1..], &config, config.init_params(0), &train, |_, _| Ok(())).is_err());
}
