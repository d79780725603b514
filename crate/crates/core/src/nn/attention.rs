//! Gated temporal attention pooling over a `time × channels` sequence.
//!
//! `s_t = v · tanh(W x_t + b)`, `α = softmax(s)`, `g_t = σ(U x_t + c)`,
//! `y = Σ_t α_t (g_t ⊙ x_t)`.

use crate::error::{Error, Result};

/// Borrowed attention weights. `w` is `hidden × chan`, `u` is `chan × chan`,
/// both row-major.
#[derive(Debug, Clone, Copy)]
pub struct AttentionParams<'a> {
    pub chan: usize,
    pub hidden: usize,
    pub w: &'a [f64],
    pub b: &'a [f64],
    pub v: &'a [f64],
    pub u: &'a [f64],
    pub c: &'a [f64],
}

impl AttentionParams<'_> {
    fn check(&self) -> Result<()> {
        let (c, h) = (self.chan, self.hidden);
        if self.w.len() != h * c || self.b.len() != h || self.v.len() != h || self.u.len() != c * c || self.c.len() != c {
            return Err(Error::Shape(format!("attention weights inconsistent with {c} channels, {h} hidden")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    pub time: usize,
    pub input: Vec<f64>,
    /// `tanh` activations, `time × hidden`.
    pub hidden: Vec<f64>,
    pub gate: Vec<f64>,
    pub alpha: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionGrads {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub v: Vec<f64>,
    pub u: Vec<f64>,
    pub c: Vec<f64>,
}

fn affine(m: &[f64], bias: &[f64], x: &[f64], out: &mut [f64]) {
    let n = x.len();
    for (i, o) in out.iter_mut().enumerate() {
        *o = bias[i] + m[i * n..(i + 1) * n].iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Pool `x` (`time × chan`, row-major) to one `chan` vector.
pub fn gated_temporal_attention(x: &[f64], time: usize, p: &AttentionParams) -> Result<(Vec<f64>, AttentionCache)> {
    p.check()?;
    let c = p.chan;
    if time == 0 || x.len() != time * c {
        return Err(Error::Shape(format!("attention input of {} values is not {time} x {c} with time >= 1", x.len())));
    }
    let mut hidden = vec![0.0; time * p.hidden];
    let mut gate = vec![0.0; time * c];
    let mut scores = vec![0.0; time];
    for t in 0..time {
        let xt = &x[t * c..(t + 1) * c];
        let h = &mut hidden[t * p.hidden..(t + 1) * p.hidden];
        affine(p.w, p.b, xt, h);
        h.iter_mut().for_each(|v| *v = v.tanh());
        scores[t] = h.iter().zip(p.v).map(|(a, b)| a * b).sum();
        let g = &mut gate[t * c..(t + 1) * c];
        affine(p.u, p.c, xt, g);
        g.iter_mut().for_each(|v| *v = sigmoid(*v));
    }
    let peak = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut alpha: Vec<f64> = scores.iter().map(|s| (s - peak).exp()).collect();
    let z: f64 = alpha.iter().sum();
    alpha.iter_mut().for_each(|a| *a /= z);

    let mut y = vec![0.0; c];
    for t in 0..time {
        for ch in 0..c {
            y[ch] += alpha[t] * gate[t * c + ch] * x[t * c + ch];
        }
    }
    Ok((
        y,
        AttentionCache {
            time,
            input: x.to_vec(),
            hidden,
            gate,
            alpha,
        },
    ))
}

/// Gradients with respect to the input sequence and every attention weight.
pub fn attention_backward(cache: &AttentionCache, p: &AttentionParams, dy: &[f64]) -> (Vec<f64>, AttentionGrads) {
    let (c, hd, time) = (p.chan, p.hidden, cache.time);
    let x = &cache.input;
    let mut g = AttentionGrads {
        w: vec![0.0; hd * c],
        b: vec![0.0; hd],
        v: vec![0.0; hd],
        u: vec![0.0; c * c],
        c: vec![0.0; c],
    };
    let mut dx = vec![0.0; time * c];

    // dα_t = dy · (g_t ⊙ x_t)
    let dalpha: Vec<f64> = (0..time)
        .map(|t| (0..c).map(|ch| dy[ch] * cache.gate[t * c + ch] * x[t * c + ch]).sum())
        .collect();
    let mean: f64 = cache.alpha.iter().zip(&dalpha).map(|(a, d)| a * d).sum();

    let mut da = vec![0.0; c];
    let mut dpre = vec![0.0; hd];
    for t in 0..time {
        let xt = &x[t * c..(t + 1) * c];
        let gt = &cache.gate[t * c..(t + 1) * c];
        let ht = &cache.hidden[t * hd..(t + 1) * hd];
        let dxt = &mut dx[t * c..(t + 1) * c];
        let at = cache.alpha[t];

        for ch in 0..c {
            let dz = at * dy[ch];
            dxt[ch] += dz * gt[ch];
            da[ch] = dz * xt[ch] * gt[ch] * (1.0 - gt[ch]);
        }
        for i in 0..c {
            if da[i] == 0.0 {
                continue;
            }
            g.c[i] += da[i];
            let row = i * c;
            for j in 0..c {
                g.u[row + j] += da[i] * xt[j];
                dxt[j] += p.u[row + j] * da[i];
            }
        }

        let ds = at * (dalpha[t] - mean);
        for k in 0..hd {
            g.v[k] += ds * ht[k];
            dpre[k] = ds * p.v[k] * (1.0 - ht[k] * ht[k]);
        }
        for k in 0..hd {
            g.b[k] += dpre[k];
            let row = k * c;
            for j in 0..c {
                g.w[row + j] += dpre[k] * xt[j];
                dxt[j] += p.w[row + j] * dpre[k];
            }
        }
    }
    (dx, g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Owned {
        w: Vec<f64>,
        b: Vec<f64>,
        v: Vec<f64>,
        u: Vec<f64>,
        c: Vec<f64>,
    }

    fn random(rng: &mut ChaCha8Rng, c: usize, h: usize) -> Owned {
        let mut r = |n| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
        Owned {
            w: r(h * c),
            b: r(h),
            v: r(h),
            u: r(c * c),
            c: r(c),
        }
    }

    fn view(o: &Owned, c: usize, h: usize) -> AttentionParams<'_> {
        AttentionParams {
            chan: c,
            hidden: h,
            w: &o.w,
            b: &o.b,
            v: &o.v,
            u: &o.u,
            c: &o.c,
        }
    }

    #[test]
    fn singleton_is_gated_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let o = random(&mut rng, 3, 2);
        let x = [0.3, -0.7, 1.1];
        let (y, cache) = gated_temporal_attention(&x, 1, &view(&o, 3, 2)).unwrap();
        assert_eq!(cache.alpha, vec![1.0]);
        for ch in 0..3 {
            assert!((y[ch] - cache.gate[ch] * x[ch]).abs() < 1e-15);
        }
    }

    #[test]
    fn identical_frames_give_uniform_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let o = random(&mut rng, 4, 4);
        let frame = [0.1, 0.2, -0.3, 0.4];
        let x: Vec<f64> = frame.iter().cycle().take(20).cloned().collect();
        let (y, cache) = gated_temporal_attention(&x, 5, &view(&o, 4, 4)).unwrap();
        assert!(cache.alpha.iter().all(|a| (a - 0.2).abs() < 1e-12));
        for ch in 0..4 {
            assert!((y[ch] - cache.gate[ch] * frame[ch]).abs() < 1e-12);
        }
    }

    #[test]
    fn weights_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let o = random(&mut rng, 5, 3);
            let t = rng.gen_range(1..30);
            let x: Vec<f64> = (0..t * 5).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let (_, cache) = gated_temporal_attention(&x, t, &view(&o, 5, 3)).unwrap();
            assert!((cache.alpha.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (c, h, t) = (3, 2, 4);
        let o = random(&mut rng, c, h);
        let p = view(&o, c, h);
        let x: Vec<f64> = (0..t * c).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let dy: Vec<f64> = (0..c).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let loss = |x: &[f64]| {
            let (y, _) = gated_temporal_attention(x, t, &p).unwrap();
            y.iter().zip(&dy).map(|(a, b)| a * b).sum::<f64>()
        };
        let (_, cache) = gated_temporal_attention(&x, t, &p).unwrap();
        let (dx, _) = attention_backward(&cache, &p, &dy);
        for i in 0..x.len() {
            let mut a = x.clone();
            let mut b = x.clone();
            a[i] += 1e-6;
            b[i] -= 1e-6;
            let fd = (loss(&a) - loss(&b)) / 2e-6;
            assert!((fd - dx[i]).abs() < 1e-7, "{i}: {fd} vs {}", dx[i]);
        }
    }

    #[test]
    fn empty_sequence_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let o = random(&mut rng, 2, 2);
        assert!(gated_temporal_attention(&[], 0, &view(&o, 2, 2)).is_err());
    }
}
