use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vi_core::encoder::{
    build_encoder_config, encode, encode_with_cache, encoder_backward, mini_encoder_config, EncoderConfig,
};
use vi_core::feature::{FeatureKind, FeatureMatrix};
use vi_core::nn::{LayerSpec, Padding, Params, PoolKind};

fn random_feature(rng: &mut ChaCha8Rng, kind: FeatureKind, rows: usize, cols: usize) -> FeatureMatrix {
    let v = (0..rows * cols).map(|_| rng.gen_range(0.0..1.0)).collect();
    FeatureMatrix::new(kind, rows, cols, v).unwrap()
}

// frozen by hand from the table configurations
#[test]
fn golden_pre_dense_shapes() {
    let table = [
        (FeatureKind::Me, (16, 3, 1024)),
        (FeatureKind::Ha, (81, 1, 512)),
        (FeatureKind::Rh, (180, 1, 1024)),
        (FeatureKind::Ly, (5, 1, 1024)),
    ];
    for (kind, shape) in table {
        let cfg = build_encoder_config(kind);
        assert_eq!(cfg.pre_dense_shape(cfg.input_shape.0).unwrap(), shape, "{kind}");
    }
    let ha = build_encoder_config(FeatureKind::Ha);
    assert!(ha.pre_dense_shape(319).is_err());
    assert_eq!(ha.pre_dense_shape(320).unwrap(), (1, 1, 512));
}

#[test]
fn mini_shapes_agree_with_forward() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for kind in FeatureKind::ALL {
        let cfg = mini_encoder_config(kind, 16);
        let p = cfg.init_params(3);
        let (r, c) = cfg.input_shape;
        let x = random_feature(&mut rng, kind, r, c);
        let cache = encode_with_cache(&x, &cfg, &p, None).unwrap();
        assert_eq!(cache.embedding().len(), 16);
        assert!(cfg.pre_dense_shape(r).is_ok());
    }
}

#[test]
fn embeddings_are_unit_and_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for kind in FeatureKind::ALL {
        let cfg = mini_encoder_config(kind, 32);
        let p = cfg.init_params(kind.index() as u64);
        let (r, c) = cfg.input_shape;
        let a = random_feature(&mut rng, kind, r, c);
        let b = random_feature(&mut rng, kind, r, c);
        let ea = encode(&a, &cfg, &p, None).unwrap();
        let eb = encode(&b, &cfg, &p, None).unwrap();
        assert!((ea.norm() - 1.0).abs() < 1e-6);
        assert!((0.0..=2.0).contains(&ea.distance(&eb)));
        assert_eq!(ea, encode(&a, &cfg, &p, None).unwrap());
    }
}

#[test]
fn zero_input_still_unit_norm() {
    let cfg = mini_encoder_config(FeatureKind::Me, 8);
    let p = cfg.init_params(0);
    let e = encode(&FeatureMatrix::zeros(FeatureKind::Me, 32, 12), &cfg, &p, None).unwrap();
    assert!((e.norm() - 1.0).abs() < 1e-6);
}

fn loss(x: &FeatureMatrix, cfg: &EncoderConfig, p: &Params, u: &[f64], seed: Option<u64>) -> f64 {
    let cache = match seed {
        Some(s) => encode_with_cache(x, cfg, p, Some(&mut ChaCha8Rng::seed_from_u64(s))),
        None => encode_with_cache(x, cfg, p, None),
    }
    .unwrap();
    cache.embedding().iter().zip(u).map(|(a, b)| a * b).sum()
}

/// Largest relative error between analytic and central-difference gradients
/// over up to `per_tensor` sampled entries of every tensor.
fn max_rel_error(cfg: &EncoderConfig, x: &FeatureMatrix, seed: Option<u64>, per_tensor: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut p = cfg.init_params(5);
    // nonzero biases so every term is exercised
    for t in &mut p.tensors {
        if t.name.ends_with(".b") || t.name.ends_with(".c") {
            t.data.iter_mut().for_each(|v| *v = rng.gen_range(-0.05..0.05));
        }
    }
    let u: Vec<f64> = (0..cfg.output_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let cache = match seed {
        Some(s) => encode_with_cache(x, cfg, &p, Some(&mut ChaCha8Rng::seed_from_u64(s))),
        None => encode_with_cache(x, cfg, &p, None),
    }
    .unwrap();
    let g = encoder_backward(&cache, cfg, &p, &u);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for ti in 0..p.len() {
        let n = p.get(ti).len();
        for _ in 0..per_tensor.min(n) {
            let i = rng.gen_range(0..n);
            let orig = p.get(ti)[i];
            p.get_mut(ti)[i] = orig + h;
            let lp = loss(x, cfg, &p, &u, seed);
            p.get_mut(ti)[i] = orig - h;
            let lm = loss(x, cfg, &p, &u, seed);
            p.get_mut(ti)[i] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let an = g.get(ti)[i];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-4);
            worst = worst.max(rel);
        }
    }
    worst
}

#[test]
fn two_layer_gradients_match_finite_differences() {
    let layers = vec![
        LayerSpec::conv(3, (3, 3), Padding::Same).with_pool((2, 2), (2, 2), PoolKind::Max),
        LayerSpec::conv(4, (3, 3), Padding::Same).with_pool((1, 2), (1, 2), PoolKind::Max),
    ];
    let cfg = EncoderConfig {
        kind: FeatureKind::Me,
        layers,
        attention_hidden: 4,
        output_dim: 6,
        input_shape: (16, 8),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random_feature(&mut rng, FeatureKind::Me, 16, 8);
    let err = max_rel_error(&cfg, &x, None, 40);
    assert!(err <= 1e-4, "max relative error {err}");
}

#[test]
fn train_mode_gradients_replay_dropout() {
    let cfg = mini_encoder_config(FeatureKind::Rh, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random_feature(&mut rng, FeatureKind::Rh, 24, 50);
    let err = max_rel_error(&cfg, &x, Some(99), 6);
    assert!(err <= 1e-4, "max relative error {err}");
}

#[test]
fn zero_upstream_gives_zero_gradients() {
    let cfg = mini_encoder_config(FeatureKind::Ly, 8);
    let p = cfg.init_params(1);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = random_feature(&mut rng, FeatureKind::Ly, 128, 28);
    let cache = encode_with_cache(&x, &cfg, &p, None).unwrap();
    let g = encoder_backward(&cache, &cfg, &p, &[0.0; 8]);
    assert_eq!(g.max_abs(), 0.0);
}

#[test]
fn bias_free_stack_is_scale_invariant() {
    // with zero scorer and gate weights the attention is a plain average,
    // so the whole pre-normalisation map is positively homogeneous
    let cfg = mini_encoder_config(FeatureKind::Me, 16);
    let mut p = cfg.init_params(8);
    for t in &mut p.tensors {
        if t.name.starts_with("att.") || t.name.ends_with(".b") {
            t.data.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = random_feature(&mut rng, FeatureKind::Me, 32, 12);
    let e = encode(&x, &cfg, &p, None).unwrap();
    for c in [0.25f32, 2.0, 8.0] {
        let y = FeatureMatrix::new(FeatureKind::Me, 32, 12, x.values.iter().map(|v| v * c).collect()).unwrap();
        assert_eq!(encode(&y, &cfg, &p, None).unwrap(), e, "scale {c}");
    }
}

#[test]
fn train_mode_applies_dropout() {
    let cfg = mini_encoder_config(FeatureKind::Me, 16);
    let p = cfg.init_params(2);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = random_feature(&mut rng, FeatureKind::Me, 32, 12);
    let eval = encode(&x, &cfg, &p, None).unwrap();
    let a = encode(&x, &cfg, &p, Some(1)).unwrap();
    assert_ne!(a, eval);
    assert_eq!(a, encode(&x, &cfg, &p, Some(1)).unwrap());
    assert_ne!(a, encode(&x, &cfg, &p, Some(2)).unwrap());
}

#[test]
fn checkpoint_layout_is_checked() {
    let cfg = mini_encoder_config(FeatureKind::Me, 16);
    let other = mini_encoder_config(FeatureKind::Me, 8).init_params(0);
    let x = FeatureMatrix::zeros(FeatureKind::Me, 32, 12);
    assert!(encode(&x, &cfg, &other, None).is_err());
}
