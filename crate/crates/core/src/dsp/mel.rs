//! Triangular mel filterbank on the HTK mel scale.

use super::audio::AudioBuffer;
use super::stft::{stft_power, Spectrogram};
use crate::error::{Error, Result};

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Dense `n_mels × n_bins` filterbank between 0 Hz and Nyquist.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    pub n_mels: usize,
    pub n_bins: usize,
    pub weights: Vec<f64>,
    pub center_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(n_mels: usize, n_bins: usize, sample_rate_hz: u32) -> Result<Self> {
        if n_mels == 0 {
            return Err(Error::InvalidArgument("n_mels must be at least 1".into()));
        }
        if n_mels > n_bins {
            return Err(Error::InvalidArgument(format!(
                "{n_mels} mel bands exceed the {n_bins} available linear bins"
            )));
        }
        let nyquist = sample_rate_hz as f64 / 2.0;
        let mel_max = hz_to_mel(nyquist);
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(mel_max * i as f64 / (n_mels + 1) as f64))
            .collect();
        let bin_hz = |k: usize| k as f64 * nyquist / (n_bins - 1).max(1) as f64;
        let mut weights = vec![0.0; n_mels * n_bins];
        for m in 0..n_mels {
            let (lo, c, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            for k in 0..n_bins {
                let f = bin_hz(k);
                let w = if f > lo && f <= c {
                    (f - lo) / (c - lo)
                } else if f > c && f < hi {
                    (hi - f) / (hi - c)
                } else {
                    0.0
                };
                weights[m * n_bins + k] = w;
            }
        }
        Ok(MelFilterbank {
            n_mels,
            n_bins,
            weights,
            center_hz: edges[1..=n_mels].to_vec(),
        })
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.weights[m * self.n_bins..(m + 1) * self.n_bins]
    }

    pub fn apply(&self, spec: &Spectrogram) -> Result<Spectrogram> {
        if spec.n_bins != self.n_bins {
            return Err(Error::Shape(format!(
                "filterbank expects {} bins, spectrogram has {}",
                self.n_bins, spec.n_bins
            )));
        }
        let mut values = Vec::with_capacity(spec.n_frames * self.n_mels);
        for t in 0..spec.n_frames {
            let frame = spec.frame(t);
            for m in 0..self.n_mels {
                values.push(self.row(m).iter().zip(frame).map(|(w, p)| w * p).sum());
            }
        }
        Ok(Spectrogram {
            values,
            n_frames: spec.n_frames,
            n_bins: self.n_mels,
            frame_hop_s: spec.frame_hop_s,
            bin_center_hz: self.center_hz.clone(),
        })
    }
}

/// Analysis window used for mel spectra: 64 ms rounded up to a power of two
/// (1024 samples at 16 kHz), never shorter than the hop.
pub fn mel_window_len(sample_rate_hz: u32, hop: usize) -> usize {
    let w = (0.064 * sample_rate_hz as f64).round() as usize;
    w.max(hop).max(2).next_power_of_two()
}

/// Mel power spectrogram with the given frame hop in seconds.
pub fn mel_spectrogram(audio: &AudioBuffer, n_mels: usize, frame_hop_s: f64) -> Result<Spectrogram> {
    if n_mels == 0 {
        return Err(Error::InvalidArgument("n_mels must be at least 1".into()));
    }
    if !(frame_hop_s > 0.0) {
        return Err(Error::InvalidArgument("frame hop must be positive".into()));
    }
    let hop = ((frame_hop_s * audio.sample_rate_hz as f64).round() as usize).max(1);
    let window = mel_window_len(audio.sample_rate_hz, hop);
    let bank = MelFilterbank::new(n_mels, window / 2 + 1, audio.sample_rate_hz)?;
    let power = stft_power(audio, window, hop)?;
    bank.apply(&power)
}
