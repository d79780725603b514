//! Constant-Q analysis of loudness envelopes along time.
//!
//! Bin `k` is centred at `fmin * 2^(k / bins_per_octave)` with a Hann window
//! of `round(Q * rate / f_k)` envelope frames, so a change of the modulation
//! rate by a factor `r` translates the spectrum by `bins_per_octave * log2 r`
//! bins.

use std::f64::consts::PI;

use num_complex::Complex;

use super::envelope::BandEnvelopes;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CqParams {
    pub fmin_hz: f64,
    pub n_octaves: usize,
    pub bins_per_octave: usize,
    pub hop_frames: usize,
}

impl Default for CqParams {
    fn default() -> Self {
        CqParams {
            fmin_hz: 0.5,
            n_octaves: 5,
            bins_per_octave: 10,
            hop_frames: 100,
        }
    }
}

impl CqParams {
    pub fn n_bins(&self) -> usize {
        self.n_octaves * self.bins_per_octave
    }

    pub fn q(&self) -> f64 {
        1.0 / (2f64.powf(1.0 / self.bins_per_octave as f64) - 1.0)
    }

    pub fn bin_center_hz(&self) -> Vec<f64> {
        (0..self.n_bins())
            .map(|k| self.fmin_hz * 2f64.powf(k as f64 / self.bins_per_octave as f64))
            .collect()
    }

    /// Uncapped window length of every bin, in envelope frames.
    pub fn window_lengths(&self, envelope_rate_hz: f64) -> Vec<usize> {
        let q = self.q();
        self.bin_center_hz()
            .iter()
            .map(|f| ((q * envelope_rate_hz / f).round() as usize).max(1))
            .collect()
    }

    fn validate(&self) -> Result<()> {
        if !(self.fmin_hz > 0.0) || self.n_octaves == 0 || self.bins_per_octave == 0 || self.hop_frames == 0 {
            return Err(Error::InvalidArgument(format!("invalid constant-Q parameters {self:?}")));
        }
        Ok(())
    }
}

/// Bands × frames × bins magnitudes, row-major in that order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModulationTensor {
    pub values: Vec<f64>,
    pub n_bands: usize,
    pub n_frames: usize,
    pub n_bins: usize,
    pub bin_center_hz: Vec<f64>,
    pub frame_hop_s: f64,
}

impl ModulationTensor {
    pub fn get(&self, band: usize, frame: usize, bin: usize) -> f64 {
        self.values[(band * self.n_frames + frame) * self.n_bins + bin]
    }

    pub fn spectrum(&self, band: usize, frame: usize) -> &[f64] {
        let start = (band * self.n_frames + frame) * self.n_bins;
        &self.values[start..start + self.n_bins]
    }
}

struct Kernel {
    taps: Vec<Complex<f64>>,
    tap_sum: Complex<f64>,
}

fn kernel(len: usize, freq_hz: f64, rate_hz: f64) -> Kernel {
    let window: Vec<f64> = if len == 1 {
        vec![1.0]
    } else {
        (0..len)
            .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / (len - 1) as f64).cos())
            .collect()
    };
    let norm: f64 = window.iter().sum();
    let taps: Vec<Complex<f64>> = window
        .iter()
        .enumerate()
        .map(|(n, w)| Complex::from_polar(w / norm, -2.0 * PI * freq_hz * n as f64 / rate_hz))
        .collect();
    let tap_sum = taps.iter().sum();
    Kernel { taps, tap_sum }
}

/// Constant-Q magnitude of every band envelope.
///
/// Frames are centred every `hop_frames`; each window is shifted to lie
/// inside the envelope, and its mean is removed before correlation. A
/// sinusoidal envelope of amplitude `A` at a bin centre yields about `A / 2`.
pub fn cq_modulation_transform(envelopes: &BandEnvelopes, params: &CqParams) -> Result<ModulationTensor> {
    params.validate()?;
    let rate = envelopes.envelope_rate_hz;
    let len = envelopes.n_frames;
    let centres = params.bin_center_hz();
    let lengths = params.window_lengths(rate);
    let shortest = *lengths.iter().min().unwrap();
    if len < shortest {
        return Err(Error::TooShort {
            needed: shortest,
            got: len,
            unit: "envelope frames",
        });
    }
    let kernels: Vec<Kernel> = lengths
        .iter()
        .zip(&centres)
        .map(|(&n, &f)| kernel(n.min(len), f, rate))
        .collect();

    let n_bins = params.n_bins();
    let n_frames = 1 + (len - 1) / params.hop_frames;
    let mut values = Vec::with_capacity(envelopes.n_bands * n_frames * n_bins);
    for b in 0..envelopes.n_bands {
        let x = envelopes.band(b);
        for m in 0..n_frames {
            let centre = m * params.hop_frames;
            for k in &kernels {
                let n = k.taps.len();
                let start = centre.saturating_sub(n / 2).min(len - n);
                let seg = &x[start..start + n];
                let mean = seg.iter().sum::<f64>() / n as f64;
                let acc: Complex<f64> = k.taps.iter().zip(seg).map(|(t, &v)| t * v).sum();
                values.push((acc - k.tap_sum * mean).norm());
            }
        }
    }
    Ok(ModulationTensor {
        values,
        n_bands: envelopes.n_bands,
        n_frames,
        n_bins,
        bin_center_hz: centres,
        frame_hop_s: params.hop_frames as f64 / rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn envelope(f: impl Fn(f64) -> f64, secs: f64) -> BandEnvelopes {
        let n = (secs * 100.0) as usize;
        BandEnvelopes {
            values: (0..n).map(|i| f(i as f64 / 100.0)).collect(),
            n_bands: 1,
            n_frames: n,
            envelope_rate_hz: 100.0,
        }
    }

    fn mean_profile(t: &ModulationTensor) -> Vec<f64> {
        (0..t.n_bins)
            .map(|k| (0..t.n_frames).map(|m| t.get(0, m, k)).sum::<f64>() / t.n_frames as f64)
            .collect()
    }

    fn argmax(v: &[f64]) -> usize {
        (0..v.len()).max_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap()).unwrap()
    }

    #[test]
    fn canonical_bin_layout() {
        let p = CqParams::default();
        assert_eq!(p.n_bins(), 50);
        assert!((p.q() - 13.933).abs() < 1e-3);
        let c = p.bin_center_hz();
        assert!((c[0] - 0.5).abs() < 1e-12);
        assert!((c[49] * 2f64.powf(0.1) - 16.0).abs() < 1e-9);
    }

    #[test]
    fn sinusoid_lands_on_its_bin() {
        let env = envelope(|t| 1.0 + (2.0 * PI * 2.0 * t).sin(), 40.0);
        let out = cq_modulation_transform(&env, &CqParams::default()).unwrap();
        let expected = (10.0 * (2.0f64 / 0.5).log2()).round() as usize;
        assert_eq!(expected, 20);
        assert_eq!(argmax(&mean_profile(&out)), expected);
        let peak = mean_profile(&out)[20];
        assert!((peak - 0.5).abs() < 0.02, "peak {peak}");
    }

    #[test]
    fn octave_shift_is_ten_bins() {
        let p = CqParams::default();
        let one = cq_modulation_transform(&envelope(|t| (2.0 * PI * t).sin(), 40.0), &p).unwrap();
        let two = cq_modulation_transform(&envelope(|t| (4.0 * PI * t).sin(), 40.0), &p).unwrap();
        assert_eq!(argmax(&mean_profile(&two)) - argmax(&mean_profile(&one)), 10);
    }

    #[test]
    fn constant_envelope_has_no_modulation() {
        let out = cq_modulation_transform(&envelope(|_| 42.0, 30.0), &CqParams::default()).unwrap();
        assert!(out.values.iter().all(|&v| v < 1e-9));
    }

    #[test]
    fn frame_count_and_short_input() {
        let p = CqParams::default();
        let out = cq_modulation_transform(&envelope(|t| t.sin(), 30.0), &p).unwrap();
        assert_eq!(out.n_frames, 30);
        assert_eq!(out.n_bins, 50);
        let short = envelope(|t| t.sin(), 0.5);
        assert!(matches!(cq_modulation_transform(&short, &p), Err(Error::TooShort { .. })));
    }
}
