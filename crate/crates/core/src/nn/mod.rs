//! Minimal CPU neural-network building blocks with hand-written reverse-mode
//! gradients. Activations are `time × freq × channels` tensors in `f64`.

pub mod attention;
pub mod conv;
pub mod dense;

pub use attention::{attention_backward, gated_temporal_attention, AttentionCache, AttentionGrads, AttentionParams};
pub use conv::{conv2d_forward, conv2d_backward, ConvCache, LayerSpec, Padding, PoolKind};
pub use dense::{dense_backward, dense_forward, l2_normalize, l2_normalize_backward, log_softmax_rows, log_softmax_rows_backward};

use rand::Rng;

use crate::error::{Error, Result};

/// Dense `time × freq × channels` tensor, channels fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    pub time: usize,
    pub freq: usize,
    pub chan: usize,
    pub data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(time: usize, freq: usize, chan: usize) -> Self {
        Tensor3 {
            time,
            freq,
            chan,
            data: vec![0.0; time * freq * chan],
        }
    }

    pub fn from_vec(time: usize, freq: usize, chan: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != time * freq * chan {
            return Err(Error::Shape(format!(
                "{time}x{freq}x{chan} tensor needs {} values, got {}",
                time * freq * chan,
                data.len()
            )));
        }
        Ok(Tensor3 { time, freq, chan, data })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.time, self.freq, self.chan)
    }

    #[inline]
    pub fn offset(&self, t: usize, f: usize) -> usize {
        (t * self.freq + f) * self.chan
    }

    pub fn cell(&self, t: usize, f: usize) -> &[f64] {
        let o = self.offset(t, f);
        &self.data[o..o + self.chan]
    }

    pub fn cell_mut(&mut self, t: usize, f: usize) -> &mut [f64] {
        let o = self.offset(t, f);
        let c = self.chan;
        &mut self.data[o..o + c]
    }
}

/// One named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Ordered collection of named parameter tensors. Models address their
/// tensors by position; names are used for checkpoints.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Params {
    pub tensors: Vec<Param>,
}

impl Params {
    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> usize {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.tensors.push(Param {
            name: name.into(),
            shape,
            data,
        });
        self.tensors.len() - 1
    }

    pub fn zeros_like(&self) -> Params {
        Params {
            tensors: self
                .tensors
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    data: vec![0.0; p.data.len()],
                })
                .collect(),
        }
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.tensors[i].data
    }

    pub fn get_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.tensors[i].data
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.tensors.iter().find(|p| p.name == name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(|p| p.data.len()).sum()
    }

    pub fn same_layout(&self, other: &Params) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.name == b.name && a.shape == b.shape)
    }

    /// `self += other`, elementwise.
    pub fn add_assign(&mut self, other: &Params) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for p in &mut self.tensors {
            p.data.iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|p| p.data.iter())
            .fold(0.0f64, |m, x| m.max(x.abs()))
    }
}

/// Uniform initialisation in `[-limit, limit]`.
pub(crate) fn uniform(rng: &mut impl Rng, n: usize, limit: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-limit..=limit)).collect()
}

/// Inverted dropout: kept units are scaled by `1 / (1 - rate)`. Returns the
/// per-element multiplier (0 or the scale).
pub fn dropout_mask<R: Rng + ?Sized>(rng: &mut R, n: usize, rate: f64) -> Vec<f64> {
    let keep = 1.0 - rate;
    let scale = 1.0 / keep;
    (0..n)
        .map(|_| if rng.gen::<f64>() < keep { scale } else { 0.0 })
        .collect()
}
