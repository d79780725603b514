//! Synthetic audio and planted datasets for tests and demonstrations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dsp::{AudioBuffer, CANONICAL_RATE_HZ};
use crate::encoder::toy_encoder_config;
use crate::error::{Error, Result};
use crate::feature::{FeatureKind, FeatureMatrix};

/// Metronome of decaying noise bursts at `bpm`, 16 kHz.
///
/// Each burst decays exponentially by about 80 dB over one beat period, so the
/// decibel envelope is a sawtooth whose shape scales with the period; two
/// tracks at different tempi are exact time-stretches of each other.
pub fn click_track(bpm: f64, secs: f64, seed: u64) -> AudioBuffer {
    let rate = CANONICAL_RATE_HZ as f64;
    let n = (secs * rate) as usize;
    let period = 60.0 / bpm;
    // power falls 80 dB per period: exp(-2 t / tau) = 1e-8 at t = period
    let tau = 2.0 * period / (8.0 * std::f64::consts::LN_10);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / rate;
            let phase = t - (t / period).floor() * period;
            let noise: f64 = rng.gen_range(-1.0..1.0);
            (0.9 * noise * (-phase / tau).exp()) as f32
        })
        .collect();
    AudioBuffer {
        samples,
        sample_rate_hz: CANONICAL_RATE_HZ,
    }
}

/// Sum of sines with a slow tremolo, used as a stand-in for sung material.
pub fn tone_track(freqs_hz: &[f64], tremolo_hz: f64, secs: f64, gain: f64) -> AudioBuffer {
    let rate = CANONICAL_RATE_HZ as f64;
    let n = (secs * rate) as usize;
    let norm = gain / freqs_hz.len().max(1) as f64;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / rate;
            let am = 0.5 + 0.5 * (2.0 * std::f64::consts::PI * tremolo_hz * t).cos();
            let s: f64 = freqs_hz
                .iter()
                .map(|f| (2.0 * std::f64::consts::PI * f * t).sin())
                .sum();
            (norm * am * s).clamp(-1.0, 1.0) as f32
        })
        .collect();
    AudioBuffer {
        samples,
        sample_rate_hz: CANONICAL_RATE_HZ,
    }
}

/// How one planted feature relates to the work labels.
#[derive(Debug, Clone, PartialEq)]
pub enum Informativeness {
    /// Every version carries its work's signature.
    All,
    /// Each track gets its own independent signature.
    None,
    /// Only works in the range carry a shared signature.
    Works(std::ops::Range<usize>),
}

/// Shape of the signature patterns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignatureStyle {
    /// Blurred unit-variance Gaussian field.
    Gaussian,
    /// A few bumps across the columns with slowly varying strength, scaled
    /// to a maximum of 1, like a fluctuation pattern.
    Peaks,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedFeature {
    pub kind: FeatureKind,
    pub rows: usize,
    pub cols: usize,
    /// Standard deviation of the per-track noise relative to the unit-variance
    /// signature.
    pub noise: f64,
    /// Radius of the box blur applied to signatures along both axes.
    pub smooth: usize,
    pub style: SignatureStyle,
    pub informative: Informativeness,
}

impl PlantedFeature {
    /// A feature shaped like the toy encoder input for `kind`.
    pub fn toy(kind: FeatureKind, noise: f64, informative: Informativeness) -> Self {
        let (rows, cols) = toy_encoder_config(kind, 1).input_shape;
        PlantedFeature {
            kind,
            rows,
            cols,
            noise,
            smooth: 2,
            style: SignatureStyle::Gaussian,
            informative,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedSpec {
    pub works: usize,
    pub versions: usize,
    pub seed: u64,
    pub features: Vec<PlantedFeature>,
}

impl PlantedSpec {
    /// 50 works × 4 versions; Me and Ha carry noisy work signatures, Rh is
    /// unrelated to the labels.
    pub fn standard(seed: u64) -> Self {
        PlantedSpec {
            works: 50,
            versions: 4,
            seed,
            features: vec![
                PlantedFeature::toy(FeatureKind::Me, 1.0, Informativeness::All),
                PlantedFeature::toy(FeatureKind::Ha, 1.0, Informativeness::All),
                PlantedFeature {
                    style: SignatureStyle::Peaks,
                    ..PlantedFeature::toy(FeatureKind::Rh, 0.1, Informativeness::None)
                },
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedTrack {
    pub track_id: String,
    pub work_id: String,
    pub work: u32,
    pub features: Vec<FeatureMatrix>,
}

/// Separable box blur, rescaled back to unit variance.
fn smooth_signature(v: Vec<f64>, rows: usize, cols: usize, radius: usize) -> Vec<f64> {
    if radius == 0 {
        return v;
    }
    let blur = |v: &[f64], stride: usize, len: usize, count: usize, step: usize| {
        let mut out = vec![0.0; v.len()];
        for line in 0..count {
            let base = line * step;
            for i in 0..len {
                let lo = i.saturating_sub(radius);
                let hi = (i + radius).min(len - 1);
                let s: f64 = (lo..=hi).map(|j| v[base + j * stride]).sum();
                out[base + i * stride] = s / (hi - lo + 1) as f64;
            }
        }
        out
    };
    let t = blur(&v, cols, rows, cols, 1);
    let b = blur(&t, 1, cols, rows, cols);
    let mean = b.iter().sum::<f64>() / b.len() as f64;
    let sd = (b.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / b.len() as f64).sqrt();
    b.into_iter().map(|x| (x - mean) / sd.max(1e-12)).collect()
}

fn peak_signature(rng: &mut ChaCha8Rng, rows: usize, cols: usize, radius: usize) -> Vec<f64> {
    let mut v = vec![0.0; rows * cols];
    for _ in 0..3 {
        let centre = rng.gen_range(0.0..cols as f64);
        let width = rng.gen_range(1.0..3.0);
        let amp: f64 = rng.gen_range(0.3..1.0);
        let strength = smooth_signature(gaussian(rng, rows, 1.0), rows, 1, radius.max(1) * 2);
        for r in 0..rows {
            let a = amp / (1.0 + (-strength[r]).exp());
            for c in 0..cols {
                let z = (c as f64 - centre) / width;
                v[r * cols + c] += a * (-0.5 * z * z).exp();
            }
        }
    }
    let max = v.iter().cloned().fold(0.0, f64::max).max(1e-12);
    v.into_iter().map(|x| x / max).collect()
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Generate the planted dataset, tracks ordered work-major.
pub fn planted_dataset(spec: &PlantedSpec) -> Result<Vec<PlantedTrack>> {
    if spec.works == 0 || spec.versions == 0 {
        return Err(Error::InvalidArgument("planted dataset needs at least one work and version".into()));
    }
    let mut tracks: Vec<PlantedTrack> = (0..spec.works * spec.versions)
        .map(|i| {
            let w = i / spec.versions;
            PlantedTrack {
                track_id: format!("w{w:03}_v{}", i % spec.versions),
                work_id: format!("w{w:03}"),
                work: w as u32,
                features: Vec::with_capacity(spec.features.len()),
            }
        })
        .collect();
    for (fi, f) in spec.features.iter().enumerate() {
        if f.rows == 0 || f.cols == 0 || !(f.noise >= 0.0) {
            return Err(Error::InvalidArgument(format!("invalid planted feature {f:?}")));
        }
        let n = f.rows * f.cols;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ (fi as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03));
        let signature = |rng: &mut ChaCha8Rng| match f.style {
            SignatureStyle::Gaussian => smooth_signature(gaussian(rng, n, 1.0), f.rows, f.cols, f.smooth),
            SignatureStyle::Peaks => peak_signature(rng, f.rows, f.cols, f.smooth),
        };
        let signatures: Vec<Vec<f64>> = (0..spec.works).map(|_| signature(&mut rng)).collect();
        for t in tracks.iter_mut() {
            let w = t.work as usize;
            let shared = match &f.informative {
                Informativeness::All => true,
                Informativeness::None => false,
                Informativeness::Works(r) => r.contains(&w),
            };
            let own = (!shared).then(|| signature(&mut rng));
            let base = own.as_ref().unwrap_or(&signatures[w]);
            let noise = gaussian(&mut rng, n, f.noise);
            let values = base.iter().zip(&noise).map(|(s, e)| (s + e) as f32).collect();
            t.features.push(FeatureMatrix::new(f.kind, f.rows, f.cols, values)?);
        }
    }
    Ok(tracks)
}
