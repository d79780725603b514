//! Convolution blocks: dilated 2-D cross-correlation, bias, ReLU, max/mean
//! pooling and dropout, with their gradients.

use super::{dropout_mask, Tensor3};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Same,
    Valid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Mean,
}

/// One block of a convolutional stack. Pairs are `(time, freq)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerSpec {
    pub filters: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub pool: (usize, usize),
    pub pool_stride: (usize, usize),
    pub dropout: f64,
    pub padding: Padding,
    pub dilation: (usize, usize),
    pub pool_kind: PoolKind,
}

impl LayerSpec {
    /// `filters` kernels of size `kernel`, unit strides and dilation, no pooling.
    pub fn conv(filters: usize, kernel: (usize, usize), padding: Padding) -> Self {
        LayerSpec {
            filters,
            kernel,
            stride: (1, 1),
            pool: (1, 1),
            pool_stride: (1, 1),
            dropout: 0.0,
            padding,
            dilation: (1, 1),
            pool_kind: PoolKind::Max,
        }
    }

    pub fn with_pool(mut self, pool: (usize, usize), stride: (usize, usize), kind: PoolKind) -> Self {
        self.pool = pool;
        self.pool_stride = stride;
        self.pool_kind = kind;
        self
    }

    pub fn with_dropout(mut self, rate: f64) -> Self {
        self.dropout = rate;
        self
    }

    pub fn with_dilation(mut self, dilation: (usize, usize)) -> Self {
        self.dilation = dilation;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.filters,
            self.kernel.0,
            self.kernel.1,
            self.stride.0,
            self.stride.1,
            self.pool.0,
            self.pool.1,
            self.pool_stride.0,
            self.pool_stride.1,
            self.dilation.0,
            self.dilation.1,
        ];
        if dims.contains(&0) {
            return Err(Error::InvalidArgument(format!("layer extents must be >= 1: {self:?}")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn weight_len(&self, in_chan: usize) -> usize {
        self.kernel.0 * self.kernel.1 * in_chan * self.filters
    }

    /// Convolution output extent and leading pad along one axis.
    fn conv_axis(&self, extent: usize, k: usize, s: usize, d: usize) -> Result<(usize, usize)> {
        let eff = (k - 1) * d + 1;
        match self.padding {
            Padding::Valid => {
                if extent < eff {
                    return Err(Error::TooShort {
                        needed: eff,
                        got: extent,
                        unit: "cells under a valid kernel",
                    });
                }
                Ok(((extent - eff) / s + 1, 0))
            }
            Padding::Same => {
                let out = extent.div_ceil(s);
                let total = ((out - 1) * s + eff).saturating_sub(extent);
                Ok((out, total / 2))
            }
        }
    }

    /// `(time, freq)` after convolution, before pooling.
    pub fn conv_shape(&self, time: usize, freq: usize) -> Result<(usize, usize)> {
        let (t, _) = self.conv_axis(time, self.kernel.0, self.stride.0, self.dilation.0)?;
        let (f, _) = self.conv_axis(freq, self.kernel.1, self.stride.1, self.dilation.1)?;
        Ok((t, f))
    }

    /// `(time, freq)` of the block output.
    pub fn output_shape(&self, time: usize, freq: usize) -> Result<(usize, usize)> {
        let (t, f) = self.conv_shape(time, freq)?;
        Ok((pool_axis(t, self.pool.0, self.pool_stride.0).0, pool_axis(f, self.pool.1, self.pool_stride.1).0))
    }
}

/// Pooled extent and effective window. A window larger than the extent is
/// clipped to it, giving a single output.
fn pool_axis(extent: usize, p: usize, s: usize) -> (usize, usize) {
    if extent < p {
        (1, extent)
    } else {
        ((extent - p) / s + 1, p)
    }
}

/// Everything the backward pass needs from one block.
#[derive(Debug, Clone)]
pub struct ConvCache {
    pub input: Tensor3,
    /// Post-ReLU activations before pooling.
    pub activation: Tensor3,
    /// For max pooling, flat `(t * freq + f)` index of the winner per output element.
    pub argmax: Vec<usize>,
    pub dropout: Option<Vec<f64>>,
    pad: (usize, usize),
    window: (usize, usize),
}

fn convolve(input: &Tensor3, spec: &LayerSpec, weights: &[f64], bias: &[f64]) -> Result<(Tensor3, (usize, usize))> {
    let (kt, kf) = spec.kernel;
    let (st, sf) = spec.stride;
    let (dt, df) = spec.dilation;
    let (ot, pt) = spec.conv_axis(input.time, kt, st, dt)?;
    let (of, pf) = spec.conv_axis(input.freq, kf, sf, df)?;
    let cin = input.chan;
    let cout = spec.filters;
    if weights.len() != spec.weight_len(cin) || bias.len() != cout {
        return Err(Error::Shape(format!(
            "layer expects {} weights and {cout} biases for {cin} input channels, got {} and {}",
            spec.weight_len(cin),
            weights.len(),
            bias.len()
        )));
    }
    let mut out = Tensor3::zeros(ot, of, cout);
    for t in 0..ot {
        for f in 0..of {
            let o = out.offset(t, f);
            let acc = &mut out.data[o..o + cout];
            acc.copy_from_slice(bias);
            for a in 0..kt {
                let it = (t * st + a * dt) as isize - pt as isize;
                if it < 0 || it >= input.time as isize {
                    continue;
                }
                for b in 0..kf {
                    let iff = (f * sf + b * df) as isize - pf as isize;
                    if iff < 0 || iff >= input.freq as isize {
                        continue;
                    }
                    let x = input.cell(it as usize, iff as usize);
                    let wbase = (a * kf + b) * cin * cout;
                    for (ci, &xv) in x.iter().enumerate() {
                        if xv == 0.0 {
                            continue;
                        }
                        let w = &weights[wbase + ci * cout..wbase + (ci + 1) * cout];
                        for (z, &wv) in acc.iter_mut().zip(w) {
                            *z += xv * wv;
                        }
                    }
                }
            }
        }
    }
    Ok((out, (pt, pf)))
}

fn pool(act: &Tensor3, spec: &LayerSpec) -> (Tensor3, Vec<usize>, (usize, usize)) {
    let (ot, wt) = pool_axis(act.time, spec.pool.0, spec.pool_stride.0);
    let (of, wf) = pool_axis(act.freq, spec.pool.1, spec.pool_stride.1);
    let c = act.chan;
    if (wt, wf) == (1, 1) && (ot, of) == (act.time, act.freq) {
        let argmax = if spec.pool_kind == PoolKind::Max {
            (0..act.time * act.freq).flat_map(|i| std::iter::repeat_n(i, c)).collect()
        } else {
            Vec::new()
        };
        return (act.clone(), argmax, (1, 1));
    }
    let mut out = Tensor3::zeros(ot, of, c);
    let mut argmax = match spec.pool_kind {
        PoolKind::Max => vec![0usize; ot * of * c],
        PoolKind::Mean => Vec::new(),
    };
    let inv = 1.0 / (wt * wf) as f64;
    for t in 0..ot {
        for f in 0..of {
            let o = out.offset(t, f);
            let t0 = t * spec.pool_stride.0;
            let f0 = f * spec.pool_stride.1;
            match spec.pool_kind {
                PoolKind::Max => {
                    for ch in 0..c {
                        let mut best = f64::NEG_INFINITY;
                        let mut arg = 0;
                        for a in t0..t0 + wt {
                            for b in f0..f0 + wf {
                                let v = act.data[act.offset(a, b) + ch];
                                if v > best {
                                    best = v;
                                    arg = a * act.freq + b;
                                }
                            }
                        }
                        out.data[o + ch] = best;
                        argmax[o + ch] = arg;
                    }
                }
                PoolKind::Mean => {
                    for a in t0..t0 + wt {
                        for b in f0..f0 + wf {
                            let x = act.cell(a, b);
                            for (acc, v) in out.data[o..o + c].iter_mut().zip(x) {
                                *acc += v;
                            }
                        }
                    }
                    out.data[o..o + c].iter_mut().for_each(|v| *v *= inv);
                }
            }
        }
    }
    (out, argmax, (wt, wf))
}

/// Convolution + bias + ReLU, then pooling, then dropout when `rng` is given
/// and the layer's rate is positive.
pub fn conv2d_forward(
    input: &Tensor3,
    spec: &LayerSpec,
    weights: &[f64],
    bias: &[f64],
    rng: Option<&mut dyn rand::RngCore>,
) -> Result<(Tensor3, ConvCache)> {
    spec.validate()?;
    let (mut act, pad) = convolve(input, spec, weights, bias)?;
    act.data.iter_mut().for_each(|v| *v = v.max(0.0));
    let (mut out, argmax, window) = pool(&act, spec);
    let dropout = match rng {
        Some(rng) if spec.dropout > 0.0 => {
            let mask = dropout_mask(rng, out.data.len(), spec.dropout);
            out.data.iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
            Some(mask)
        }
        _ => None,
    };
    Ok((
        out,
        ConvCache {
            input: input.clone(),
            activation: act,
            argmax,
            dropout,
            pad,
            window,
        },
    ))
}

/// Gradients of one block: `(d_input, d_weights, d_bias)`.
pub fn conv2d_backward(
    cache: &ConvCache,
    spec: &LayerSpec,
    weights: &[f64],
    grad_out: &Tensor3,
) -> (Tensor3, Vec<f64>, Vec<f64>) {
    let act = &cache.activation;
    let c = act.chan;
    let mut g = grad_out.clone();
    if let Some(mask) = &cache.dropout {
        g.data.iter_mut().zip(mask).for_each(|(v, m)| *v *= m);
    }

    // unpool
    let mut dact = Tensor3::zeros(act.time, act.freq, c);
    match spec.pool_kind {
        PoolKind::Max => {
            for (i, gv) in g.data.iter().enumerate() {
                let ch = i % c;
                let cell = cache.argmax[i];
                dact.data[cell * c + ch] += gv;
            }
        }
        PoolKind::Mean => {
            let (wt, wf) = cache.window;
            let inv = 1.0 / (wt * wf) as f64;
            for t in 0..g.time {
                for f in 0..g.freq {
                    let go = g.cell(t, f).to_vec();
                    let t0 = t * spec.pool_stride.0;
                    let f0 = f * spec.pool_stride.1;
                    for a in t0..t0 + wt {
                        for b in f0..f0 + wf {
                            for (d, v) in dact.cell_mut(a, b).iter_mut().zip(&go) {
                                *d += v * inv;
                            }
                        }
                    }
                }
            }
        }
    }
    // ReLU
    for (d, &a) in dact.data.iter_mut().zip(&act.data) {
        if a <= 0.0 {
            *d = 0.0;
        }
    }

    let input = &cache.input;
    let cin = input.chan;
    let cout = spec.filters;
    let (kt, kf) = spec.kernel;
    let (st, sf) = spec.stride;
    let (dt, df) = spec.dilation;
    let (pt, pf) = cache.pad;
    let mut dx = Tensor3::zeros(input.time, input.freq, cin);
    let mut dw = vec![0.0; weights.len()];
    let mut db = vec![0.0; cout];
    for t in 0..dact.time {
        for f in 0..dact.freq {
            let dz = dact.cell(t, f);
            if dz.iter().all(|&v| v == 0.0) {
                continue;
            }
            for (b, v) in db.iter_mut().zip(dz) {
                *b += v;
            }
            for a in 0..kt {
                let it = (t * st + a * dt) as isize - pt as isize;
                if it < 0 || it >= input.time as isize {
                    continue;
                }
                for b in 0..kf {
                    let iff = (f * sf + b * df) as isize - pf as isize;
                    if iff < 0 || iff >= input.freq as isize {
                        continue;
                    }
                    let xo = input.offset(it as usize, iff as usize);
                    let wbase = (a * kf + b) * cin * cout;
                    for ci in 0..cin {
                        let xv = input.data[xo + ci];
                        let range = wbase + ci * cout..wbase + (ci + 1) * cout;
                        let w = &weights[range.clone()];
                        let mut acc = 0.0;
                        for (&wv, &d) in w.iter().zip(dz) {
                            acc += wv * d;
                        }
                        dx.data[xo + ci] += acc;
                        if xv != 0.0 {
                            for (gw, &d) in dw[range].iter_mut().zip(dz) {
                                *gw += xv * d;
                            }
                        }
                    }
                }
            }
        }
    }
    (dx, dw, db)
}
