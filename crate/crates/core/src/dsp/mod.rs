//! Signal-processing primitives: WAV I/O, resampling, STFT, mel filterbank,
//! band envelopes and the constant-Q modulation transform.

pub mod audio;
pub mod cqt;
pub mod envelope;
pub mod mel;
pub mod resample;
pub mod stft;

pub use audio::{load_audio, write_wav_pcm16, AudioBuffer};
pub use cqt::{cq_modulation_transform, CqParams, ModulationTensor};
pub use envelope::{default_band_widths, mel_band_envelopes, mel_band_envelopes_with, BandEnvelopes};
pub use mel::{mel_spectrogram, MelFilterbank};
pub use resample::resample;
pub use stft::{stft_power, Spectrogram};

/// Sample rate every extractor works at.
pub const CANONICAL_RATE_HZ: u32 = 16000;
