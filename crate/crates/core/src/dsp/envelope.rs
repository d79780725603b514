//! Per-band loudness envelopes: mel bands grouped so that high bands are summed
//! into wide groups, then compressed to a floored decibel scale.

use super::audio::AudioBuffer;
use super::mel::mel_spectrogram;
use crate::error::{Error, Result};

/// Hop of the envelope analysis (10 ms → 100 frames per second).
pub const ENVELOPE_HOP_S: f64 = 0.010;
/// Floor relative to the loudest band frame.
pub const DB_FLOOR: f64 = -80.0;

/// Group widths for 36 mel bands into 12 bands, low to high.
pub const DEFAULT_BAND_WIDTHS: [usize; 12] = [1, 1, 1, 1, 1, 2, 2, 3, 5, 6, 6, 7];

/// Bands × frames nonnegative matrix, row-major by band.
#[derive(Debug, Clone, PartialEq)]
pub struct BandEnvelopes {
    pub values: Vec<f64>,
    pub n_bands: usize,
    pub n_frames: usize,
    pub envelope_rate_hz: f64,
}

impl BandEnvelopes {
    pub fn band(&self, b: usize) -> &[f64] {
        &self.values[b * self.n_frames..(b + 1) * self.n_frames]
    }
}

/// Monotone non-decreasing group widths summing to `n_mels`.
///
/// `(36, 12)` returns [`DEFAULT_BAND_WIDTHS`]; other shapes use exponentially
/// spaced group edges.
pub fn default_band_widths(n_mels: usize, n_bands: usize) -> Result<Vec<usize>> {
    if n_bands == 0 || n_bands > n_mels {
        return Err(Error::InvalidArgument(format!(
            "cannot group {n_mels} mel bands into {n_bands} bands"
        )));
    }
    if (n_mels, n_bands) == (36, 12) {
        return Ok(DEFAULT_BAND_WIDTHS.to_vec());
    }
    let growth = 2.0f64;
    let mut edges = vec![0usize];
    for i in 1..=n_bands {
        let x = (growth * i as f64 / n_bands as f64).exp_m1() / growth.exp_m1();
        let prev = *edges.last().unwrap();
        // leave room for one mel band per remaining group
        let max_edge = n_mels - (n_bands - i);
        let e = ((x * n_mels as f64).round() as usize).clamp(prev + 1, max_edge);
        edges.push(e);
    }
    *edges.last_mut().unwrap() = n_mels;
    let mut widths: Vec<usize> = edges.windows(2).map(|w| w[1] - w[0]).collect();
    widths.sort_unstable();
    Ok(widths)
}

/// Envelopes using [`default_band_widths`].
pub fn mel_band_envelopes(audio: &AudioBuffer, n_mels: usize, n_bands: usize) -> Result<BandEnvelopes> {
    let widths = default_band_widths(n_mels, n_bands)?;
    mel_band_envelopes_with(audio, &widths)
}

/// Envelopes with explicit group widths (their sum is the mel band count).
pub fn mel_band_envelopes_with(audio: &AudioBuffer, widths: &[usize]) -> Result<BandEnvelopes> {
    if widths.is_empty() || widths.contains(&0) {
        return Err(Error::InvalidArgument("band widths must be positive".into()));
    }
    let n_mels: usize = widths.iter().sum();
    let mel = mel_spectrogram(audio, n_mels, ENVELOPE_HOP_S)?;
    let n_bands = widths.len();
    let n_frames = mel.n_frames;
    let mut power = vec![0.0f64; n_bands * n_frames];
    for t in 0..n_frames {
        let frame = mel.frame(t);
        let mut start = 0;
        for (b, &w) in widths.iter().enumerate() {
            power[b * n_frames + t] = frame[start..start + w].iter().sum();
            start += w;
        }
    }
    let peak = power.iter().cloned().fold(0.0f64, f64::max);
    let values = if peak > 0.0 {
        power
            .iter()
            .map(|&p| {
                let db = if p > 0.0 { 10.0 * (p / peak).log10() } else { DB_FLOOR };
                db.max(DB_FLOOR) - DB_FLOOR
            })
            .collect()
    } else {
        vec![0.0; n_bands * n_frames]
    };
    Ok(BandEnvelopes {
        values,
        n_bands,
        n_frames,
        envelope_rate_hz: 1.0 / mel.frame_hop_s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn click_train(rate_hz: f64, secs: f64) -> AudioBuffer {
        let n = (16000.0 * secs) as usize;
        let period = (16000.0 / rate_hz) as usize;
        let mut s = vec![0.0f32; n];
        let mut state = 12345u32;
        for start in (0..n).step_by(period) {
            for j in 0..64.min(n - start) {
                state = state.wrapping_mul(1664525).wrapping_add(1013904223);
                s[start + j] = ((state >> 8) as f32 / (1u32 << 24) as f32 - 0.5) * 1.6;
            }
        }
        AudioBuffer::new(s, 16000).unwrap()
    }

    #[test]
    fn default_grouping_shape() {
        let w = default_band_widths(36, 12).unwrap();
        assert_eq!(w.iter().sum::<usize>(), 36);
        let env = mel_band_envelopes(&click_train(2.0, 3.0), 36, 12).unwrap();
        assert_eq!(env.n_bands, 12);
        assert_eq!(env.values.len(), 12 * env.n_frames);
        assert!((env.envelope_rate_hz - 100.0).abs() < 1e-9);
        assert!(env.values.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn generic_widths_are_monotone() {
        for (m, b) in [(40, 10), (36, 6), (20, 20), (64, 16), (12, 1)] {
            let w = default_band_widths(m, b).unwrap();
            assert_eq!(w.len(), b);
            assert_eq!(w.iter().sum::<usize>(), m);
            assert!(w.windows(2).all(|p| p[0] <= p[1]), "{w:?}");
        }
        assert!(default_band_widths(10, 11).is_err());
    }

    #[test]
    fn silence_is_flat_zero() {
        let env = mel_band_envelopes(&AudioBuffer::new(vec![0.0; 32000], 16000).unwrap(), 36, 12).unwrap();
        assert!(env.values.iter().all(|&v| v == 0.0));
    }

    // Oracle: direct mean-removed autocorrelation of each band envelope.
    #[test]
    fn click_period_shows_in_autocorrelation() {
        let env = mel_band_envelopes(&click_train(2.0, 6.0), 36, 12).unwrap();
        for b in 0..env.n_bands {
            let x = env.band(b);
            let mean = x.iter().sum::<f64>() / x.len() as f64;
            let ac = |lag: usize| -> f64 {
                (0..x.len() - lag).map(|i| (x[i] - mean) * (x[i + lag] - mean)).sum()
            };
            let best = (10..150).max_by(|&a, &b| ac(a).partial_cmp(&ac(b)).unwrap()).unwrap();
            assert!((best as i64 - 50).abs() <= 1, "band {b}: lag {best}");
        }
    }
}
