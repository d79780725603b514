//! Eight-layer convolutional acoustic model producing posteriorgrams.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Posteriorgram, N_SYMBOLS};
use crate::dsp::Spectrogram;
use crate::error::{Error, Result};
use crate::nn::{self, conv2d_backward, conv2d_forward, ConvCache, LayerSpec, Padding, Params, PoolKind, Tensor3};

#[derive(Debug, Clone, PartialEq)]
pub struct AlrModelConfig {
    pub layers: Vec<LayerSpec>,
    pub n_mels: usize,
}

impl AlrModelConfig {
    /// 64 filters doubling up to 512, 3×3 same convolutions, 2×2 pools on the
    /// first two layers and 1×2 after, dropout 0.3 everywhere.
    pub fn table() -> Self {
        Self::with_filters([64, 128, 256, 512, 512, 512, 512, 512], 0.3)
    }

    pub fn with_filters(filters: [usize; 8], dropout: f64) -> Self {
        let layers = filters
            .iter()
            .enumerate()
            .map(|(i, &n)| {
                let pool = if i < 2 { (2, 2) } else { (1, 2) };
                LayerSpec::conv(n, (3, 3), Padding::Same)
                    .with_pool(pool, pool, PoolKind::Max)
                    .with_dropout(dropout)
            })
            .collect();
        AlrModelConfig { layers, n_mels: 40 }
    }

    pub fn time_downsampling(&self) -> usize {
        self.layers.iter().map(|l| l.pool_stride.0).product()
    }

    pub fn init_params(&self, seed: u64) -> Params {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Params::default();
        let mut cin = 1;
        for (i, l) in self.layers.iter().enumerate() {
            let limit = (6.0 / (9 * cin) as f64).sqrt();
            p.push(
                format!("conv{i}.w"),
                vec![l.kernel.0, l.kernel.1, cin, l.filters],
                nn::uniform(&mut rng, l.weight_len(cin), limit),
            );
            p.push(format!("conv{i}.b"), vec![l.filters], vec![0.0; l.filters]);
            cin = l.filters;
        }
        p.push("head.w", vec![N_SYMBOLS, cin], nn::uniform(&mut rng, N_SYMBOLS * cin, (6.0 / cin as f64).sqrt()));
        p.push("head.b", vec![N_SYMBOLS], vec![0.0; N_SYMBOLS]);
        p
    }

    pub fn check_params(&self, params: &Params) -> Result<()> {
        let mut expected = self.init_params(0);
        expected.scale(0.0);
        if !expected.same_layout(params) {
            return Err(Error::Shape("weights do not match the acoustic model layout".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct AlrCache {
    convs: Vec<ConvCache>,
    conv_out: (usize, usize, usize),
    freq_argmax: Vec<usize>,
    pooled: Vec<f64>,
    pub posteriorgram: Posteriorgram,
}

/// Forward pass on a 40-band mel spectrogram (linear power, compressed with
/// `ln(1 + x)` on entry). Dropout runs only when `dropout_rng` is given.
pub fn alr_forward_with_cache(
    mel: &Spectrogram,
    config: &AlrModelConfig,
    params: &Params,
    mut dropout_rng: Option<&mut dyn RngCore>,
) -> Result<AlrCache> {
    if mel.n_bins != config.n_mels {
        return Err(Error::Shape(format!("acoustic model expects {} mel bands, got {}", config.n_mels, mel.n_bins)));
    }
    if mel.n_frames < config.time_downsampling() {
        return Err(Error::TooShort {
            needed: config.time_downsampling(),
            got: mel.n_frames,
            unit: "mel frames",
        });
    }
    config.check_params(params)?;
    let mut x = Tensor3::from_vec(mel.n_frames, mel.n_bins, 1, mel.values.iter().map(|v| v.max(0.0).ln_1p()).collect())?;
    let mut convs = Vec::with_capacity(config.layers.len());
    for (i, spec) in config.layers.iter().enumerate() {
        let rng = dropout_rng.as_mut().map(|r| &mut **r as &mut dyn RngCore);
        let (y, cache) = conv2d_forward(&x, spec, params.get(2 * i), params.get(2 * i + 1), rng)?;
        convs.push(cache);
        x = y;
    }
    let conv_out = x.shape();
    let (t, f, c) = conv_out;
    let mut pooled = vec![f64::NEG_INFINITY; t * c];
    let mut freq_argmax = vec![0; t * c];
    for ti in 0..t {
        for fi in 0..f {
            for (ch, &v) in x.cell(ti, fi).iter().enumerate() {
                if v > pooled[ti * c + ch] {
                    pooled[ti * c + ch] = v;
                    freq_argmax[ti * c + ch] = fi;
                }
            }
        }
    }
    let h = 2 * config.layers.len();
    let (hw, hb) = (params.get(h), params.get(h + 1));
    let mut logits = Vec::with_capacity(t * N_SYMBOLS);
    for ti in 0..t {
        logits.extend(nn::dense_forward(hw, hb, &pooled[ti * c..(ti + 1) * c]));
    }
    let hop = mel.frame_hop_s * config.time_downsampling() as f64;
    Ok(AlrCache {
        convs,
        conv_out,
        freq_argmax,
        pooled,
        posteriorgram: Posteriorgram::from_logits(&logits, hop)?,
    })
}

pub fn alr_forward(
    mel: &Spectrogram,
    config: &AlrModelConfig,
    params: &Params,
    dropout_rng: Option<&mut dyn RngCore>,
) -> Result<Posteriorgram> {
    alr_forward_with_cache(mel, config, params, dropout_rng).map(|c| c.posteriorgram)
}

/// Parameter gradients given the gradient with respect to the logits.
pub fn alr_backward(cache: &AlrCache, config: &AlrModelConfig, params: &Params, dlogits: &[f64]) -> Params {
    let mut grads = params.zeros_like();
    let (t, f, c) = cache.conv_out;
    let h = 2 * config.layers.len();
    let hw = params.get(h);
    let mut g = Tensor3::zeros(t, f, c);
    for ti in 0..t {
        let x = &cache.pooled[ti * c..(ti + 1) * c];
        let dy = &dlogits[ti * N_SYMBOLS..(ti + 1) * N_SYMBOLS];
        let (dx, dw, db) = nn::dense_backward(hw, x, dy);
        grads.get_mut(h).iter_mut().zip(&dw).for_each(|(a, b)| *a += b);
        grads.get_mut(h + 1).iter_mut().zip(&db).for_each(|(a, b)| *a += b);
        for ch in 0..c {
            let o = g.offset(ti, cache.freq_argmax[ti * c + ch]);
            g.data[o + ch] = dx[ch];
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

    fn mel(frames: usize, bins: usize) -> Spectrogram {
        Spectrogram {
            values: (0..frames * bins).map(|i| ((i * 7919) % 101) as f64 / 10.0).collect(),
            n_frames: frames,
            n_bins: bins,
            frame_hop_s: 0.01,
            bin_center_hz: vec![0.0; bins],
        }
    }

    #[test]
    fn table_schedule() {
        let c = AlrModelConfig::table();
        assert_eq!(c.layers.len(), 8);
        assert_eq!(c.layers.iter().map(|l| l.filters).collect::<Vec<_>>(), vec![64, 128, 256, 512, 512, 512, 512, 512]);
        assert_eq!(c.time_downsampling(), 4);
        let freq_down: usize = c.layers.iter().map(|l| l.pool_stride.1).product();
        assert_eq!(freq_down, 256);
        assert!(c.layers.iter().all(|l| l.dropout == 0.3 && l.kernel == (3, 3)));
    }

    #[test]
    fn output_shape_and_rows() {
        let c = AlrModelConfig::with_filters([2, 2, 4, 4, 4, 4, 4, 4], 0.3);
        let p = c.init_params(1);
        let post = alr_forward(&mel(400, 40), &c, &p, None).unwrap();
        assert_eq!(post.n_frames, 100);
        assert!((post.frame_hop_s - 0.04).abs() < 1e-12);
        for t in 0..post.n_frames {
            let s: f64 = post.row(t).iter().map(|v| v.exp()).sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_weights_give_uniform_rows() {
        let c = AlrModelConfig::with_filters([2; 8], 0.3);
        let mut p = c.init_params(1);
        p.scale(0.0);
        let post = alr_forward(&mel(16, 40), &c, &p, None).unwrap();
        assert!(post.log_probs.iter().all(|v| (v - (1.0f64 / 28.0).ln()).abs() < 1e-12));
        assert!((post.log_probs[0] - -3.3322).abs() < 1e-4);
    }

    #[test]
    fn wrong_band_count_rejected() {
        let c = AlrModelConfig::with_filters([2; 8], 0.3);
        let p = c.init_params(1);
        assert!(matches!(alr_forward(&mel(16, 36), &c, &p, None), Err(Error::Shape(_))));
    }
}
