//! Connectionist temporal classification: loss, logit gradient and a
//! path-enumeration reference.

use super::{LabelSequence, Posteriorgram, BLANK, N_SYMBOLS};
use crate::error::{Error, Result};

fn lse2(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Minimum frames that can emit `target`: one per label plus a blank between
/// each adjacent repeat.
pub fn required_frames(target: &LabelSequence) -> usize {
    let l = target.indices();
    l.len() + l.windows(2).filter(|w| w[0] == w[1]).count()
}

fn extended(target: &LabelSequence) -> Vec<usize> {
    let mut ext = Vec::with_capacity(2 * target.len() + 1);
    ext.push(BLANK);
    for &c in target.indices() {
        ext.push(c);
        ext.push(BLANK);
    }
    ext
}

fn check(post: &Posteriorgram, target: &LabelSequence) -> Result<()> {
    let req = required_frames(target);
    if post.n_frames < req || post.n_frames == 0 {
        return Err(Error::CtcInfeasible {
            target_len: target.len(),
            required: req.max(1),
            frames: post.n_frames,
        });
    }
    Ok(())
}

struct Lattice {
    ext: Vec<usize>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    log_p: f64,
}

fn lattice(post: &Posteriorgram, target: &LabelSequence) -> Lattice {
    let ext = extended(target);
    let s_len = ext.len();
    let t_len = post.n_frames;
    let lp = |t: usize, k: usize| post.log_probs[t * N_SYMBOLS + k];
    let skip = |s: usize| s >= 2 && ext[s] != BLANK && ext[s] != ext[s - 2];

    let mut alpha = vec![f64::NEG_INFINITY; t_len * s_len];
    alpha[0] = lp(0, ext[0]);
    if s_len > 1 {
        alpha[1] = lp(0, ext[1]);
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let prev = &alpha[(t - 1) * s_len..t * s_len];
            let mut a = prev[s];
            if s >= 1 {
                a = lse2(a, prev[s - 1]);
            }
            if skip(s) {
                a = lse2(a, prev[s - 2]);
            }
            alpha[t * s_len + s] = a + lp(t, ext[s]);
        }
    }

    let mut beta = vec![f64::NEG_INFINITY; t_len * s_len];
    let last = (t_len - 1) * s_len;
    beta[last + s_len - 1] = lp(t_len - 1, ext[s_len - 1]);
    if s_len > 1 {
        beta[last + s_len - 2] = lp(t_len - 1, ext[s_len - 2]);
    }
    for t in (0..t_len - 1).rev() {
        for s in 0..s_len {
            let next = &beta[(t + 1) * s_len..(t + 2) * s_len];
            let mut b = next[s];
            if s + 1 < s_len {
                b = lse2(b, next[s + 1]);
            }
            if s + 2 < s_len && skip(s + 2) {
                b = lse2(b, next[s + 2]);
            }
            beta[t * s_len + s] = b + lp(t, ext[s]);
        }
    }

    let mut log_p = alpha[last + s_len - 1];
    if s_len > 1 {
        log_p = lse2(log_p, alpha[last + s_len - 2]);
    }
    Lattice { ext, alpha, beta, log_p }
}

/// `-ln P(target | posteriorgram)` by the forward recursion in log space.
pub fn ctc_loss(post: &Posteriorgram, target: &LabelSequence) -> Result<f64> {
    check(post, target)?;
    Ok(-lattice(post, target).log_p)
}

/// Loss and its gradient with respect to the pre-softmax logits that produced
/// `post`, as a `frames × 28` matrix.
pub fn ctc_loss_and_gradient(post: &Posteriorgram, target: &LabelSequence) -> Result<(f64, Vec<f64>)> {
    check(post, target)?;
    let lat = lattice(post, target);
    let s_len = lat.ext.len();
    let mut grad: Vec<f64> = post.log_probs.iter().map(|v| v.exp()).collect();
    for t in 0..post.n_frames {
        // occupancy per symbol, log domain
        let mut occ = [f64::NEG_INFINITY; N_SYMBOLS];
        for s in 0..s_len {
            let k = lat.ext[s];
            let v = lat.alpha[t * s_len + s] + lat.beta[t * s_len + s] - post.log_probs[t * N_SYMBOLS + k];
            occ[k] = lse2(occ[k], v);
        }
        for (k, o) in occ.iter().enumerate() {
            if *o > f64::NEG_INFINITY {
                grad[t * N_SYMBOLS + k] -= (o - lat.log_p).exp();
            }
        }
    }
    Ok((-lat.log_p, grad))
}

pub fn ctc_gradient(post: &Posteriorgram, target: &LabelSequence) -> Result<Vec<f64>> {
    ctc_loss_and_gradient(post, target).map(|(_, g)| g)
}

/// Sum of path probabilities over every frame-wise symbol sequence whose
/// collapse (merge repeats, drop blanks) equals `target`. `probs` is
/// `frames × 28`, linear domain.
///
/// Paths are enumerated depth first; a branch is abandoned once its collapsed
/// prefix stops being a prefix of the target, since no suffix can repair it.
pub fn ctc_brute_force(probs: &[f64], frames: usize, target: &LabelSequence) -> f64 {
    fn walk(probs: &[f64], frames: usize, target: &[usize], t: usize, last: usize, emitted: usize, p: f64) -> f64 {
        if t == frames {
            return if emitted == target.len() { p } else { 0.0 };
        }
        let row = &probs[t * N_SYMBOLS..(t + 1) * N_SYMBOLS];
        let mut total = 0.0;
        for (k, &pk) in row.iter().enumerate() {
            let next = if k == BLANK || k == last {
                Some(emitted)
            } else if emitted < target.len() && target[emitted] == k {
                Some(emitted + 1)
            } else {
                None
            };
            if let Some(e) = next {
                total += walk(probs, frames, target, t + 1, k, e, p * pk);
            }
        }
        total
    }
    assert_eq!(probs.len(), frames * N_SYMBOLS);
    walk(probs, frames, target.indices(), 0, BLANK, 0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(frames: usize) -> Posteriorgram {
        Posteriorgram::from_logits(&vec![0.0; frames * N_SYMBOLS], 0.04).unwrap()
    }

    fn text(s: &str) -> LabelSequence {
        LabelSequence::from_text(s).unwrap()
    }

    #[test]
    fn certain_single_path() {
        let mut logits = vec![-1e3; N_SYMBOLS];
        logits[0] = 0.0;
        let p = Posteriorgram::from_logits(&logits, 0.04).unwrap();
        assert!(ctc_loss(&p, &text("a")).unwrap().abs() < 1e-12);
    }

    #[test]
    fn uniform_two_frames() {
        let loss = ctc_loss(&uniform(2), &text("a")).unwrap();
        assert!((loss - -(3.0f64 / 784.0).ln()).abs() < 1e-12);
        assert!((loss - 5.5658).abs() < 1e-4);
    }

    #[test]
    fn uniform_repeat_needs_blank() {
        let loss = ctc_loss(&uniform(3), &text("aa")).unwrap();
        assert!((loss - 3.0 * 28f64.ln()).abs() < 1e-12);
        assert!((loss - 9.9966).abs() < 1e-4);
    }

    #[test]
    fn infeasible_is_an_error() {
        assert!(matches!(ctc_loss(&uniform(2), &text("aa")), Err(Error::CtcInfeasible { required: 3, .. })));
        assert!(ctc_loss(&uniform(2), &text("abc")).is_err());
    }

    #[test]
    fn single_frame_gradient() {
        let g = ctc_gradient(&uniform(1), &text("a")).unwrap();
        for (k, v) in g.iter().enumerate() {
            let want = 1.0 / 28.0 - if k == 0 { 1.0 } else { 0.0 };
            assert!((v - want).abs() < 1e-12);
        }
    }

    #[test]
    fn brute_force_edge_cases() {
        let p = uniform(1);
        let probs: Vec<f64> = p.log_probs.iter().map(|v| v.exp()).collect();
        assert!((ctc_brute_force(&probs, 1, &text("")) - 1.0 / 28.0).abs() < 1e-15);
        assert_eq!(ctc_brute_force(&probs, 1, &text("ab")), 0.0);
    }
}
