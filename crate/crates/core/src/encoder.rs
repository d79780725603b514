//! Per-feature convolutional embedding encoders.
//!
//! Five conv blocks, a max over the remaining frequency axis, gated temporal
//! attention, a dense projection and L2 normalisation.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::feature::{FeatureKind, FeatureMatrix};
use crate::nn::{
    self, attention_backward, conv2d_backward, conv2d_forward, dense_backward, dense_forward,
    gated_temporal_attention, l2_normalize, l2_normalize_backward, AttentionCache, AttentionParams, ConvCache,
    LayerSpec, Padding, Params, PoolKind, Tensor3,
};

pub const EMBEDDING_DIM: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub kind: FeatureKind,
    pub layers: Vec<LayerSpec>,
    /// Hidden width of the attention scorer.
    pub attention_hidden: usize,
    pub output_dim: usize,
    /// Canonical `(rows, cols)` of the input feature; `cols` is fixed, `rows`
    /// may vary.
    pub input_shape: (usize, usize),
}

impl EncoderConfig {
    /// Ly treats its bins as channels of a 1-D signal.
    pub fn bins_as_channels(&self) -> bool {
        self.kind == FeatureKind::Ly
    }

    pub fn in_channels(&self) -> usize {
        if self.bins_as_channels() {
            self.input_shape.1
        } else {
            1
        }
    }

    pub fn final_channels(&self) -> usize {
        self.layers.last().map_or(self.in_channels(), |l| l.filters)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() || self.output_dim == 0 || self.attention_hidden == 0 || self.input_shape.1 == 0 {
            return Err(Error::InvalidArgument(format!("degenerate encoder config for {}", self.kind)));
        }
        self.layers.iter().try_for_each(LayerSpec::validate)
    }

    /// `(time, freq, chan)` entering the attention block for `rows` input frames.
    pub fn pre_dense_shape(&self, rows: usize) -> Result<(usize, usize, usize)> {
        let (mut t, mut f) = if self.bins_as_channels() {
            (rows, 1)
        } else {
            (rows, self.input_shape.1)
        };
        for l in &self.layers {
            (t, f) = l.output_shape(t, f)?;
        }
        Ok((t, f, self.final_channels()))
    }

    /// Fresh parameters: He-uniform convolution and dense weights, zero biases.
    pub fn init_params(&self, seed: u64) -> Params {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Params::default();
        let mut cin = self.in_channels();
        for (i, l) in self.layers.iter().enumerate() {
            let fan_in = l.kernel.0 * l.kernel.1 * cin;
            let limit = (6.0 / fan_in as f64).sqrt();
            p.push(
                format!("conv{i}.w"),
                vec![l.kernel.0, l.kernel.1, cin, l.filters],
                nn::uniform(&mut rng, l.weight_len(cin), limit),
            );
            p.push(format!("conv{i}.b"), vec![l.filters], vec![0.0; l.filters]);
            cin = l.filters;
        }
        let (c, h, d) = (cin, self.attention_hidden, self.output_dim);
        let glorot = |a: usize, b: usize| (6.0 / (a + b) as f64).sqrt();
        p.push("att.w", vec![h, c], nn::uniform(&mut rng, h * c, glorot(h, c)));
        p.push("att.b", vec![h], vec![0.0; h]);
        p.push("att.v", vec![h], nn::uniform(&mut rng, h, glorot(h, 1)));
        p.push("att.u", vec![c, c], nn::uniform(&mut rng, c * c, glorot(c, c)));
        p.push("att.c", vec![c], vec![0.0; c]);
        p.push("dense.w", vec![d, c], nn::uniform(&mut rng, d * c, (6.0 / c as f64).sqrt()));
        p.push("dense.b", vec![d], vec![0.0; d]);
        p
    }

    /// Tensor names and shapes that [`EncoderConfig::init_params`] produces.
    pub fn check_params(&self, params: &Params) -> Result<()> {
        let expected = self.init_layout();
        if !expected.same_layout(params) {
            return Err(Error::Shape(format!("weights do not match the {} encoder layout", self.kind)));
        }
        Ok(())
    }

    fn init_layout(&self) -> Params {
        let mut p = Params::default();
        let mut cin = self.in_channels();
        for (i, l) in self.layers.iter().enumerate() {
            p.push(format!("conv{i}.w"), vec![l.kernel.0, l.kernel.1, cin, l.filters], vec![0.0; l.weight_len(cin)]);
            p.push(format!("conv{i}.b"), vec![l.filters], vec![0.0; l.filters]);
            cin = l.filters;
        }
        let (c, h, d) = (cin, self.attention_hidden, self.output_dim);
        p.push("att.w", vec![h, c], vec![0.0; h * c]);
        p.push("att.b", vec![h], vec![0.0; h]);
        p.push("att.v", vec![h], vec![0.0; h]);
        p.push("att.u", vec![c, c], vec![0.0; c * c]);
        p.push("att.c", vec![c], vec![0.0; c]);
        p.push("dense.w", vec![d, c], vec![0.0; d * c]);
        p.push("dense.b", vec![d], vec![0.0; d]);
        p
    }

    fn att_index(&self) -> usize {
        2 * self.layers.len()
    }
}

fn five(
    filters: [usize; 5],
    kernels: [(usize, usize); 5],
    pools: [(usize, usize); 5],
    pool_strides: [(usize, usize); 5],
    dropouts: [f64; 5],
    padding: Padding,
    pool_kind: PoolKind,
) -> Vec<LayerSpec> {
    (0..5)
        .map(|i| {
            LayerSpec::conv(filters[i], kernels[i], padding)
                .with_pool(pools[i], pool_strides[i], pool_kind)
                .with_dropout(dropouts[i])
        })
        .collect()
}

/// The table configuration of each feature's encoder at its canonical input size.
pub fn build_encoder_config(kind: FeatureKind) -> EncoderConfig {
    let wide = [64, 128, 256, 512, 1024];
    let layers = match kind {
        FeatureKind::Me => five(wide, [(3, 3); 5], [(2, 2); 5], [(2, 2); 5], [0.0, 0.1, 0.1, 0.2, 0.3], Padding::Same, PoolKind::Max),
        FeatureKind::Ha => {
            let mut l = five(
                [256, 256, 256, 512, 512],
                [(180, 12), (5, 1), (5, 1), (5, 1), (5, 1)],
                [(1, 12), (1, 1), (1, 1), (1, 1), (1, 1)],
                [(1, 1); 5],
                [0.0; 5],
                Padding::Valid,
                PoolKind::Max,
            );
            l[2] = l[2].with_dilation((20, 1));
            l[4] = l[4].with_dilation((13, 1));
            l
        }
        FeatureKind::Rh => five(
            wide,
            [(3, 20), (3, 3), (3, 3), (3, 3), (3, 3)],
            [(1, 2); 5],
            [(1, 2); 5],
            [0.4, 0.3, 0.2, 0.1, 0.0],
            Padding::Same,
            PoolKind::Max,
        ),
        FeatureKind::Ly => five(wide, [(10, 1); 5], [(5, 1); 5], [(2, 1); 5], [0.3, 0.2, 0.1, 0.1, 0.0], Padding::Same, PoolKind::Mean),
    };
    let c = layers[4].filters;
    EncoderConfig {
        kind,
        layers,
        attention_hidden: c,
        output_dim: EMBEDDING_DIM,
        input_shape: canonical_input_shape(kind),
    }
}

/// Default input size per feature: Me 512×96, Ha 400×12, Rh 180×50, Ly 256×28.
pub fn canonical_input_shape(kind: FeatureKind) -> (usize, usize) {
    match kind {
        FeatureKind::Me => (512, 96),
        FeatureKind::Ha => (400, 12),
        FeatureKind::Rh => (180, 50),
        FeatureKind::Ly => (256, 28),
    }
}

/// Reduced-width variant of each table architecture for fast tests and toy
/// training. Kernel shapes, paddings, pooling kinds and Ha's dilations keep
/// the table's structure.
pub fn mini_encoder_config(kind: FeatureKind, output_dim: usize) -> EncoderConfig {
    let small = [4, 8, 8, 16, 16];
    let (layers, input_shape) = match kind {
        FeatureKind::Me => (
            five(small, [(3, 3); 5], [(2, 2); 5], [(2, 2); 5], [0.0, 0.1, 0.1, 0.2, 0.3], Padding::Same, PoolKind::Max),
            (32, 12),
        ),
        FeatureKind::Ha => {
            let mut l = five(
                [4, 4, 4, 8, 8],
                [(12, 6), (5, 1), (5, 1), (5, 1), (5, 1)],
                [(1, 6), (1, 1), (1, 1), (1, 1), (1, 1)],
                [(1, 1); 5],
                [0.0; 5],
                Padding::Valid,
                PoolKind::Max,
            );
            l[2] = l[2].with_dilation((20, 1));
            l[4] = l[4].with_dilation((13, 1));
            (l, (160, 12))
        }
        FeatureKind::Rh => (
            five(
                small,
                [(3, 20), (3, 3), (3, 3), (3, 3), (3, 3)],
                [(1, 2); 5],
                [(1, 2); 5],
                [0.4, 0.3, 0.2, 0.1, 0.0],
                Padding::Same,
                PoolKind::Max,
            ),
            (24, 50),
        ),
        FeatureKind::Ly => (
            five(small, [(10, 1); 5], [(5, 1); 5], [(2, 1); 5], [0.3, 0.2, 0.1, 0.1, 0.0], Padding::Same, PoolKind::Mean),
            (128, 28),
        ),
    };
    let c = layers.last().unwrap().filters;
    EncoderConfig {
        kind,
        layers,
        attention_hidden: c,
        output_dim,
        input_shape,
    }
}

/// Shallow two-layer encoder used for the planted synthetic experiment:
/// 3×3 (3×1 for Ly) same convolutions with 2×2 max pools, then the usual
/// attention, dense and normalisation head.
pub fn toy_encoder_config(kind: FeatureKind, output_dim: usize) -> EncoderConfig {
    let (kernel, pool, input_shape, widths) = match kind {
        FeatureKind::Me => ((3, 3), (2, 2), (32, 12), [16, 32]),
        FeatureKind::Ha => ((3, 3), (2, 2), (32, 12), [16, 32]),
        FeatureKind::Rh => ((3, 3), (2, 2), (24, 50), [8, 16]),
        FeatureKind::Ly => ((3, 1), (2, 1), (32, 28), [16, 32]),
    };
    let layers: Vec<LayerSpec> = widths
        .iter()
        .map(|&n| LayerSpec::conv(n, kernel, Padding::Same).with_pool(pool, pool, PoolKind::Max))
        .collect();
    EncoderConfig {
        kind,
        attention_hidden: widths[1],
        layers,
        output_dim,
        input_shape,
    }
}

/// Unit-norm embedding of one track under one feature.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub kind: FeatureKind,
    pub values: Vec<f32>,
}

impl Embedding {
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| v as f64).collect()
    }

    pub fn distance(&self, other: &Embedding) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// Activations kept by the forward pass for [`encoder_backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    convs: Vec<ConvCache>,
    conv_out: (usize, usize, usize),
    freq_argmax: Vec<usize>,
    attention: AttentionCache,
    pooled: Vec<f64>,
    embedding: Vec<f64>,
    norm: f64,
}

impl ForwardCache {
    pub fn embedding(&self) -> &[f64] {
        &self.embedding
    }

    /// Dense-layer output before normalisation.
    pub fn pre_normalization(&self) -> Vec<f64> {
        if self.norm == 0.0 {
            return vec![0.0; self.embedding.len()];
        }
        self.embedding.iter().map(|v| v * self.norm).collect()
    }
}

fn input_tensor(feature: &FeatureMatrix, config: &EncoderConfig) -> Result<Tensor3> {
    if feature.kind != config.kind {
        return Err(Error::InvalidArgument(format!(
            "{} feature given to the {} encoder",
            feature.kind, config.kind
        )));
    }
    if feature.cols != config.input_shape.1 || feature.rows == 0 {
        return Err(Error::Shape(format!(
            "{} encoder expects {} columns and at least one row, got {}x{}",
            config.kind, config.input_shape.1, feature.rows, feature.cols
        )));
    }
    let data = feature.values.iter().map(|&v| v as f64).collect();
    if config.bins_as_channels() {
        Tensor3::from_vec(feature.rows, 1, feature.cols, data)
    } else {
        Tensor3::from_vec(feature.rows, feature.cols, 1, data)
    }
}

fn attention_view<'a>(config: &EncoderConfig, params: &'a Params) -> AttentionParams<'a> {
    let a = config.att_index();
    AttentionParams {
        chan: config.final_channels(),
        hidden: config.attention_hidden,
        w: params.get(a),
        b: params.get(a + 1),
        v: params.get(a + 2),
        u: params.get(a + 3),
        c: params.get(a + 4),
    }
}

impl EncoderConfig {
    /// Index of the dense-layer bias in the parameter list.
    pub fn dense_bias_index(&self) -> usize {
        self.att_index() + 6
    }
}

/// Forward pass returning the f64 embedding and the cache. Dropout is applied
/// only when `dropout_rng` is given.
pub fn encode_with_cache(
    feature: &FeatureMatrix,
    config: &EncoderConfig,
    params: &Params,
    mut dropout_rng: Option<&mut dyn RngCore>,
) -> Result<ForwardCache> {
    config.validate()?;
    config.check_params(params)?;
    let mut x = input_tensor(feature, config)?;
    let mut convs = Vec::with_capacity(config.layers.len());
    for (i, spec) in config.layers.iter().enumerate() {
        let rng = dropout_rng.as_mut().map(|r| &mut **r as &mut dyn RngCore);
        let (y, cache) = conv2d_forward(&x, spec, params.get(2 * i), params.get(2 * i + 1), rng)?;
        convs.push(cache);
        x = y;
    }
    let conv_out = x.shape();

    // collapse frequency by max
    let (t, f, c) = conv_out;
    let mut seq = vec![f64::NEG_INFINITY; t * c];
    let mut freq_argmax = vec![0usize; t * c];
    for ti in 0..t {
        for fi in 0..f {
            for (ch, &v) in x.cell(ti, fi).iter().enumerate() {
                if v > seq[ti * c + ch] {
                    seq[ti * c + ch] = v;
                    freq_argmax[ti * c + ch] = fi;
                }
            }
        }
    }

    let att = attention_view(config, params);
    let (pooled, attention) = gated_temporal_attention(&seq, t, &att)?;
    let a = config.att_index();
    let z = dense_forward(params.get(a + 5), params.get(a + 6), &pooled);
    let (embedding, norm) = l2_normalize(&z);
    Ok(ForwardCache {
        convs,
        conv_out,
        freq_argmax,
        attention,
        pooled,
        embedding,
        norm,
    })
}

/// Inference or training-mode embedding. In training mode dropout masks are
/// drawn from `seed`.
pub fn encode(feature: &FeatureMatrix, config: &EncoderConfig, params: &Params, train_seed: Option<u64>) -> Result<Embedding> {
    let cache = match train_seed {
        Some(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            encode_with_cache(feature, config, params, Some(&mut rng))?
        }
        None => encode_with_cache(feature, config, params, None)?,
    };
    Ok(Embedding {
        kind: config.kind,
        values: cache.embedding.iter().map(|&v| v as f32).collect(),
    })
}

/// Gradients of `upstream · embedding` with respect to every parameter.
pub fn encoder_backward(cache: &ForwardCache, config: &EncoderConfig, params: &Params, upstream: &[f64]) -> Params {
    let mut grads = params.zeros_like();
    let a = config.att_index();

    let dz = l2_normalize_backward(&cache.embedding, cache.norm, upstream);
    let (dpooled, dw, db) = dense_backward(params.get(a + 5), &cache.pooled, &dz);
    grads.get_mut(a + 5).copy_from_slice(&dw);
    grads.get_mut(a + 6).copy_from_slice(&db);

    let att = attention_view(config, params);
    let (dseq, ag) = attention_backward(&cache.attention, &att, &dpooled);
    for (k, g) in [ag.w, ag.b, ag.v, ag.u, ag.c].into_iter().enumerate() {
        grads.get_mut(a + k).copy_from_slice(&g);
    }

    let (t, f, c) = cache.conv_out;
    let mut g = Tensor3::zeros(t, f, c);
    for ti in 0..t {
        for ch in 0..c {
            let fi = cache.freq_argmax[ti * c + ch];
            let o = g.offset(ti, fi);
            g.data[o + ch] = dseq[ti * c + ch];
        }
    }
    for (i, spec) in config.layers.iter().enumerate().rev() {
        let (dx, dw, db) = conv2d_backward(&cache.convs[i], spec, params.get(2 * i), &g);
        grads.get_mut(2 * i).copy_from_slice(&dw);
        grads.get_mut(2 * i + 1).copy_from_slice(&db);
        g = dx;
    }
    grads
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_configs() {
        let rh = build_encoder_config(FeatureKind::Rh);
        assert_eq!(rh.layers[0].kernel, (3, 20));
        assert!(rh.layers.iter().all(|l| l.pool == (1, 2) && l.pool_stride == (1, 2)));
        let ha = build_encoder_config(FeatureKind::Ha);
        assert_eq!((ha.layers[0].kernel, ha.layers[0].pool), ((180, 12), (1, 12)));
        assert_eq!(ha.layers[0].pool_stride, (1, 1));
        assert_eq!(ha.layers.iter().map(|l| l.dilation.0).collect::<Vec<_>>(), vec![1, 1, 20, 1, 13]);
        assert!(ha.layers.iter().all(|l| l.padding == Padding::Valid && l.dropout == 0.0));
        let ly = build_encoder_config(FeatureKind::Ly);
        assert_eq!(ly.layers.len(), 5);
        assert!(ly
            .layers
            .iter()
            .all(|l| l.kernel == (10, 1) && l.pool == (5, 1) && l.pool_stride == (2, 1) && l.pool_kind == PoolKind::Mean));
        let me = build_encoder_config(FeatureKind::Me);
        assert_eq!(me.layers.iter().map(|l| l.filters).collect::<Vec<_>>(), vec![64, 128, 256, 512, 1024]);
        assert_eq!(me.layers.iter().map(|l| l.dropout).collect::<Vec<_>>(), vec![0.0, 0.1, 0.1, 0.2, 0.3]);
        for k in FeatureKind::ALL {
            assert_eq!(build_encoder_config(k).output_dim, 512);
        }
    }

    #[test]
    fn kind_mismatch_rejected() {
        let cfg = mini_encoder_config(FeatureKind::Rh, 8);
        let p = cfg.init_params(0);
        let x = FeatureMatrix::zeros(FeatureKind::Me, 24, 50);
        assert!(encode(&x, &cfg, &p, None).is_err());
    }

    #[test]
    fn short_ha_input_rejected() {
        let cfg = mini_encoder_config(FeatureKind::Ha, 8);
        let p = cfg.init_params(0);
        let x = FeatureMatrix::zeros(FeatureKind::Ha, 60, 12);
        assert!(matches!(encode(&x, &cfg, &p, None), Err(Error::TooShort { .. })));
    }
}
