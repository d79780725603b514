//! Band-limited resampling with a Blackman-windowed sinc kernel.

use std::f64::consts::PI;

use super::audio::AudioBuffer;
use crate::error::{Error, Result};

/// Zero crossings of the sinc kernel on each side, at the output bandwidth.
const KERNEL_ZEROS: f64 = 24.0;

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

fn blackman(u: f64) -> f64 {
    // u in [-1, 1]
    let x = (u + 1.0) * 0.5;
    0.42 - 0.5 * (2.0 * PI * x).cos() + 0.08 * (4.0 * PI * x).cos()
}

/// Resample to `target_rate_hz`. The output has `round(len * target / source)`
/// samples; equal rates return an identical copy.
pub fn resample(audio: &AudioBuffer, target_rate_hz: u32) -> Result<AudioBuffer> {
    if target_rate_hz == 0 {
        return Err(Error::InvalidArgument("target sample rate must be positive".into()));
    }
    if target_rate_hz == audio.sample_rate_hz {
        return Ok(audio.clone());
    }
    let src_rate = audio.sample_rate_hz as f64;
    let ratio = target_rate_hz as f64 / src_rate;
    let out_len = (audio.len() as f64 * ratio).round() as usize;
    // Cutoff relative to the source Nyquist, slightly below the lower band edge.
    let cutoff = ratio.min(1.0) * 0.95;
    let half_width = KERNEL_ZEROS / cutoff;
    let src = &audio.samples;
    let n = src.len() as isize;

    let samples = (0..out_len)
        .map(|j| {
            let centre = j as f64 / ratio;
            let lo = (centre - half_width).ceil().max(0.0) as isize;
            let hi = ((centre + half_width).floor() as isize).min(n - 1);
            let mut acc = 0.0f64;
            for k in lo..=hi {
                let u = centre - k as f64;
                let h = cutoff * sinc(cutoff * u) * blackman(u / half_width);
                acc += h * src[k as usize] as f64;
            }
            acc.clamp(-1.0, 1.0) as f32
        })
        .collect();
    Ok(AudioBuffer {
        samples,
        sample_rate_hz: target_rate_hz,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rustfft::{num_complex::Complex, FftPlanner};

    fn sine(freq: f64, rate: u32, secs: f64, amp: f64) -> AudioBuffer {
        let n = (rate as f64 * secs) as usize;
        let samples = (0..n)
            .map(|i| (amp * (2.0 * PI * freq * i as f64 / rate as f64).sin()) as f32)
            .collect();
        AudioBuffer::new(samples, rate).unwrap()
    }

    // Independent oracle: peak of a plain FFT magnitude spectrum.
    fn peak_hz(audio: &AudioBuffer) -> f64 {
        let n = audio.len();
        let mut buf: Vec<Complex<f64>> = audio.samples.iter().map(|&s| Complex::new(s as f64, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let (k, _) = buf[..n / 2]
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.norm().partial_cmp(&b.1.norm()).unwrap())
            .unwrap();
        k as f64 * audio.sample_rate_hz as f64 / n as f64
    }

    #[test]
    fn same_rate_is_identity() {
        let a = sine(440.0, 16000, 0.5, 0.5);
        assert_eq!(resample(&a, 16000).unwrap(), a);
    }

    #[test]
    fn sine_peak_survives_downsampling() {
        let a = sine(440.0, 44100, 2.0, 0.8);
        let b = resample(&a, 16000).unwrap();
        assert!((peak_hz(&b) - 440.0).abs() <= 1.0, "peak {}", peak_hz(&b));
    }

    #[test]
    fn duration_is_preserved() {
        let a = sine(440.0, 44100, 2.0, 0.8);
        let b = resample(&a, 16000).unwrap();
        assert!((b.len() as i64 - 32000).abs() <= 1);
        let c = resample(&sine(100.0, 8000, 2.0, 0.5), 16000).unwrap();
        assert!((c.len() as i64 - 32000).abs() <= 1);
    }

    #[test]
    fn content_above_new_nyquist_is_removed() {
        // 10 kHz tone cannot be represented at 16 kHz.
        let a = sine(10000.0, 44100, 0.5, 0.8);
        let b = resample(&a, 16000).unwrap();
        let rms = (b.samples[2000..6000].iter().map(|&s| (s as f64).powi(2)).sum::<f64>() / 4000.0).sqrt();
        assert!(rms < 0.01, "rms {rms}");
    }

    #[test]
    fn zero_target_rejected() {
        assert!(resample(&sine(1.0, 100, 1.0, 0.1), 0).is_err());
    }
}
