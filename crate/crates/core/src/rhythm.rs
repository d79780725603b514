//! Constant-Q fluctuation patterns (CQ-FP), the rhythm feature.
//!
//! Pipeline: grouped mel-band loudness envelopes → constant-Q modulation
//! analysis → fluctuation-strength weighting → mean over bands → max
//! normalisation → linear resampling of the time axis.

use crate::dsp::{self, cq_modulation_transform, AudioBuffer, CqParams, ModulationTensor, CANONICAL_RATE_HZ};
use crate::error::{Error, Result};
use crate::feature::{FeatureKind, FeatureMatrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CqfpParams {
    pub fmin_hz: f64,
    pub n_octaves: usize,
    pub bins_per_octave: usize,
    pub n_bands: usize,
    pub n_mels: usize,
    pub mod_hop_s: f64,
    pub target_frames: usize,
}

impl Default for CqfpParams {
    fn default() -> Self {
        CqfpParams {
            fmin_hz: 0.5,
            n_octaves: 5,
            bins_per_octave: 10,
            n_bands: 12,
            n_mels: 36,
            mod_hop_s: 1.0,
            target_frames: 180,
        }
    }
}

impl CqfpParams {
    pub fn n_bins(&self) -> usize {
        self.n_octaves * self.bins_per_octave
    }

    /// Highest analysed modulation frequency, `fmin * 2^n_octaves`.
    pub fn fmax_hz(&self) -> f64 {
        self.fmin_hz * 2f64.powi(self.n_octaves as i32)
    }

    fn cq(&self, envelope_rate_hz: f64) -> CqParams {
        CqParams {
            fmin_hz: self.fmin_hz,
            n_octaves: self.n_octaves,
            bins_per_octave: self.bins_per_octave,
            hop_frames: ((self.mod_hop_s * envelope_rate_hz).round() as usize).max(1),
        }
    }
}

/// Target-frames × modulation-bins pattern with values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct CqfpFeature {
    pub values: Vec<f64>,
    pub n_frames: usize,
    pub n_bins: usize,
    pub params: CqfpParams,
}

impl CqfpFeature {
    pub fn frame(&self, t: usize) -> &[f64] {
        &self.values[t * self.n_bins..(t + 1) * self.n_bins]
    }

    /// Mean over time of every modulation bin.
    pub fn time_averaged_profile(&self) -> Vec<f64> {
        let mut p = vec![0.0; self.n_bins];
        for t in 0..self.n_frames {
            for (acc, v) in p.iter_mut().zip(self.frame(t)) {
                *acc += v;
            }
        }
        p.iter_mut().for_each(|v| *v /= self.n_frames as f64);
        p
    }

    pub fn to_feature_matrix(&self) -> FeatureMatrix {
        FeatureMatrix {
            kind: FeatureKind::Rh,
            rows: self.n_frames,
            cols: self.n_bins,
            values: self.values.iter().map(|&v| v as f32).collect(),
        }
    }
}

/// Fluctuation-strength weight `1 / (f/4 + 4/f)`, maximal (0.5) at 4 Hz.
pub fn perceptual_weight(f_hz: f64) -> f64 {
    1.0 / (f_hz / 4.0 + 4.0 / f_hz)
}

/// Scale every modulation bin by [`perceptual_weight`] of its centre.
pub fn perceptual_weighting(modulation: &ModulationTensor) -> Result<ModulationTensor> {
    if modulation.bin_center_hz.len() != modulation.n_bins {
        return Err(Error::Shape("one centre frequency per modulation bin required".into()));
    }
    if let Some(f) = modulation.bin_center_hz.iter().find(|f| !(**f > 0.0)) {
        return Err(Error::InvalidArgument(format!("bin centre {f} Hz is not positive")));
    }
    let weights: Vec<f64> = modulation.bin_center_hz.iter().map(|&f| perceptual_weight(f)).collect();
    let mut out = modulation.clone();
    for row in out.values.chunks_exact_mut(modulation.n_bins) {
        for (v, w) in row.iter_mut().zip(&weights) {
            *v *= w;
        }
    }
    Ok(out)
}

/// Translation in bins expected for a tempo ratio on a log-frequency axis.
pub fn expected_tempo_shift_bins(ratio: f64, bins_per_octave: usize) -> i64 {
    assert!(ratio > 0.0, "tempo ratio must be positive");
    (bins_per_octave as f64 * ratio.log2()).round() as i64
}

/// Shortest audio (at the canonical rate) whose envelope covers the longest
/// constant-Q window.
pub fn min_audio_samples(params: &CqfpParams) -> usize {
    let hop = (dsp::envelope::ENVELOPE_HOP_S * CANONICAL_RATE_HZ as f64).round() as usize;
    let window = dsp::mel::mel_window_len(CANONICAL_RATE_HZ, hop);
    let rate = CANONICAL_RATE_HZ as f64 / hop as f64;
    let longest = *params.cq(rate).window_lengths(rate).iter().max().unwrap();
    (longest - 1) * hop + window
}

fn resample_time(rows: &[f64], n_frames: usize, n_bins: usize, target: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(target * n_bins);
    for j in 0..target {
        let pos = if target == 1 || n_frames == 1 {
            0.0
        } else {
            j as f64 * (n_frames - 1) as f64 / (target - 1) as f64
        };
        let lo = (pos.floor() as usize).min(n_frames - 1);
        let hi = (lo + 1).min(n_frames - 1);
        let frac = pos - lo as f64;
        for k in 0..n_bins {
            let a = rows[lo * n_bins + k];
            let b = rows[hi * n_bins + k];
            out.push(a + (b - a) * frac);
        }
    }
    out
}

/// Extract the CQ-FP of a track. Audio is resampled to 16 kHz and zero-padded
/// up to [`min_audio_samples`].
pub fn extract_cqfp(audio: &AudioBuffer, params: &CqfpParams) -> Result<CqfpFeature> {
    if audio.is_empty() {
        return Err(Error::InvalidArgument("cannot extract rhythm from empty audio".into()));
    }
    if params.target_frames == 0 || params.n_bands == 0 || !(params.mod_hop_s > 0.0) {
        return Err(Error::InvalidArgument(format!("invalid CQ-FP parameters {params:?}")));
    }
    let audio = dsp::resample(audio, CANONICAL_RATE_HZ)?.padded_to(min_audio_samples(params));
    let env = dsp::mel_band_envelopes(&audio, params.n_mels, params.n_bands)?;
    let modulation = cq_modulation_transform(&env, &params.cq(env.envelope_rate_hz))?;
    let weighted = perceptual_weighting(&modulation)?;

    let (n_frames, n_bins) = (weighted.n_frames, weighted.n_bins);
    let mut pattern = vec![0.0; n_frames * n_bins];
    for b in 0..weighted.n_bands {
        for m in 0..n_frames {
            for (acc, v) in pattern[m * n_bins..(m + 1) * n_bins].iter_mut().zip(weighted.spectrum(b, m)) {
                *acc += v;
            }
        }
    }
    let bands = weighted.n_bands as f64;
    pattern.iter_mut().for_each(|v| *v /= bands);
    let peak = pattern.iter().cloned().fold(0.0f64, f64::max);
    if peak > 0.0 {
        pattern.iter_mut().for_each(|v| *v /= peak);
    }
    Ok(CqfpFeature {
        values: resample_time(&pattern, n_frames, n_bins, params.target_frames),
        n_frames: params.target_frames,
        n_bins,
        params: *params,
    })
}
