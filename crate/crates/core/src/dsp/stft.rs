//! Short-time Fourier power spectra.

use std::f64::consts::PI;

use rustfft::{num_complex::Complex, FftPlanner};

use super::audio::AudioBuffer;
use crate::error::{Error, Result};

/// Frames × bins nonnegative power matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub values: Vec<f64>,
    pub n_frames: usize,
    pub n_bins: usize,
    pub frame_hop_s: f64,
    pub bin_center_hz: Vec<f64>,
}

impl Spectrogram {
    pub fn frame(&self, t: usize) -> &[f64] {
        &self.values[t * self.n_bins..(t + 1) * self.n_bins]
    }

    pub fn get(&self, t: usize, k: usize) -> f64 {
        self.values[t * self.n_bins + k]
    }
}

/// Periodic Hann window.
pub fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
        .collect()
}

/// Squared-magnitude STFT with a Hann window. Frames start at multiples of
/// `hop`; there is no padding, so `frames = 1 + (len - window_len) / hop`.
pub fn stft_power(audio: &AudioBuffer, window_len: usize, hop: usize) -> Result<Spectrogram> {
    if hop == 0 || window_len < hop {
        return Err(Error::InvalidArgument(format!(
            "need window_len >= hop >= 1, got window {window_len}, hop {hop}"
        )));
    }
    if audio.len() < window_len {
        return Err(Error::TooShort {
            needed: window_len,
            got: audio.len(),
            unit: "samples",
        });
    }
    let n_frames = 1 + (audio.len() - window_len) / hop;
    let n_bins = window_len / 2 + 1;
    let window = hann(window_len);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(window_len);
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut buf = vec![Complex::new(0.0, 0.0); window_len];
    let mut values = Vec::with_capacity(n_frames * n_bins);
    for t in 0..n_frames {
        let seg = &audio.samples[t * hop..t * hop + window_len];
        for ((b, &s), &w) in buf.iter_mut().zip(seg).zip(&window) {
            *b = Complex::new(s as f64 * w, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        values.extend(buf[..n_bins].iter().map(|c| c.norm_sqr()));
    }
    let rate = audio.sample_rate_hz as f64;
    Ok(Spectrogram {
        values,
        n_frames,
        n_bins,
        frame_hop_s: hop as f64 / rate,
        bin_center_hz: (0..n_bins).map(|k| k as f64 * rate / window_len as f64).collect(),
    })
}
