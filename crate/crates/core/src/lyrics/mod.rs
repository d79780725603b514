//! Lyrics recognition: 28-symbol posteriorgrams from a convolutional acoustic
//! model, CTC training signal, best-path decoding and character error rate.

pub mod ctc;
pub mod model;

pub use ctc::{ctc_brute_force, ctc_gradient, ctc_loss, ctc_loss_and_gradient, required_frames};
pub use model::{alr_backward, alr_forward, alr_forward_with_cache, AlrCache, AlrModelConfig};

use crate::error::{Error, Result};
use crate::feature::{FeatureKind, FeatureMatrix};
use crate::nn::log_softmax_rows;

pub const N_SYMBOLS: usize = 28;
pub const SPACE: usize = 26;
pub const BLANK: usize = 27;

/// `a`..`z`, space, then the CTC blank.
pub struct Alphabet;

impl Alphabet {
    pub fn len() -> usize {
        N_SYMBOLS
    }

    pub fn symbol(index: usize) -> Option<char> {
        match index {
            0..=25 => Some((b'a' + index as u8) as char),
            SPACE => Some(' '),
            _ => None,
        }
    }

    pub fn index(c: char) -> Option<usize> {
        match c {
            'a'..='z' => Some(c as usize - 'a' as usize),
            'A'..='Z' => Some(c as usize - 'A' as usize),
            ' ' => Some(SPACE),
            _ => None,
        }
    }
}

/// CTC target: label indices in `0..=26`; never the blank.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSequence(Vec<usize>);

impl LabelSequence {
    pub fn new(indices: Vec<usize>) -> Result<Self> {
        if let Some(i) = indices.iter().find(|&&i| i >= BLANK) {
            return Err(Error::InvalidArgument(format!("label index {i} is not a character")));
        }
        Ok(LabelSequence(indices))
    }

    /// Letters are case-folded; anything outside `a-z` and space is rejected.
    pub fn from_text(text: &str) -> Result<Self> {
        text.chars()
            .map(|c| Alphabet::index(c).ok_or_else(|| Error::InvalidArgument(format!("character {c:?} not in alphabet"))))
            .collect::<Result<Vec<_>>>()
            .map(LabelSequence)
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn to_text(&self) -> String {
        self.0.iter().filter_map(|&i| Alphabet::symbol(i)).collect()
    }
}

/// Frame-wise log-probabilities over the 28 symbols.
#[derive(Debug, Clone, PartialEq)]
pub struct Posteriorgram {
    pub log_probs: Vec<f64>,
    pub n_frames: usize,
    pub frame_hop_s: f64,
}

impl Posteriorgram {
    pub fn from_logits(logits: &[f64], frame_hop_s: f64) -> Result<Self> {
        if !logits.len().is_multiple_of(N_SYMBOLS) {
            return Err(Error::Shape(format!("{} logits is not a multiple of {N_SYMBOLS}", logits.len())));
        }
        Ok(Posteriorgram {
            log_probs: log_softmax_rows(logits, N_SYMBOLS),
            n_frames: logits.len() / N_SYMBOLS,
            frame_hop_s,
        })
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.log_probs[t * N_SYMBOLS..(t + 1) * N_SYMBOLS]
    }

    pub fn to_feature_matrix(&self) -> FeatureMatrix {
        FeatureMatrix {
            kind: FeatureKind::Ly,
            rows: self.n_frames,
            cols: N_SYMBOLS,
            values: self.log_probs.iter().map(|&v| v as f32).collect(),
        }
    }
}

/// Best-path decoding: per-frame argmax, merge repeats, drop blanks. Ties go
/// to the lowest index.
pub fn greedy_decode(post: &Posteriorgram) -> String {
    let mut out = String::new();
    let mut prev = BLANK;
    for t in 0..post.n_frames {
        let row = post.row(t);
        let best = (0..N_SYMBOLS).fold(0, |b, k| if row[k] > row[b] { k } else { b });
        if best != prev && best != BLANK {
            out.push(Alphabet::symbol(best).unwrap());
        }
        prev = best;
    }
    out
}

/// Levenshtein distance over characters divided by the reference length.
pub fn character_error_rate(hypothesis: &str, reference: &str) -> Result<f64> {
    let r: Vec<char> = reference.chars().collect();
    if r.is_empty() {
        return Err(Error::InvalidArgument("character error rate needs a nonempty reference".into()));
    }
    let h: Vec<char> = hypothesis.chars().collect();
    let mut prev: Vec<usize> = (0..=r.len()).collect();
    let mut cur = vec![0; r.len() + 1];
    for i in 1..=h.len() {
        cur[0] = i;
        for j in 1..=r.len() {
            let sub = prev[j - 1] + usize::from(h[i - 1] != r[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[r.len()] as f64 / r.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_hot(seq: &[usize]) -> Posteriorgram {
        let mut logits = vec![0.0; seq.len() * N_SYMBOLS];
        for (t, &k) in seq.iter().enumerate() {
            logits[t * N_SYMBOLS + k] = 50.0;
        }
        Posteriorgram::from_logits(&logits, 0.04).unwrap()
    }

    #[test]
    fn alphabet_layout() {
        assert_eq!(Alphabet::len(), 28);
        assert_eq!(Alphabet::symbol(0), Some('a'));
        assert_eq!(Alphabet::symbol(25), Some('z'));
        assert_eq!(Alphabet::symbol(26), Some(' '));
        assert_eq!(Alphabet::symbol(BLANK), None);
        assert!(LabelSequence::new(vec![27]).is_err());
        assert_eq!(LabelSequence::from_text("Hi yo").unwrap().to_text(), "hi yo");
        assert!(LabelSequence::from_text("x!").is_err());
    }

    #[test]
    fn decoding_rules() {
        assert_eq!(greedy_decode(&one_hot(&[0, 0, BLANK, 1])), "ab");
        assert_eq!(greedy_decode(&one_hot(&[BLANK, BLANK])), "");
        assert_eq!(greedy_decode(&one_hot(&[0, BLANK, 0])), "aa");
    }

    #[test]
    fn cer_examples() {
        assert_eq!(character_error_rate("abc", "abc").unwrap(), 0.0);
        assert!((character_error_rate("ab", "abc").unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(character_error_rate("", "abc").unwrap(), 1.0);
        assert!(character_error_rate("a", "").is_err());
    }

    #[test]
    fn rows_are_log_distributions() {
        let p = Posteriorgram::from_logits(&(0..56).map(|i| (i as f64 * 0.37).sin() * 5.0).collect::<Vec<_>>(), 0.04)
            .unwrap();
        for t in 0..2 {
            let s: f64 = p.row(t).iter().map(|v| v.exp()).sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(p.row(t).iter().all(|&v| v <= 0.0));
        }
    }
}
