//! Waveform-side utilities: pitch tracking, log-mel analysis, a harmonic
//! vocoder and the adversarial vocoder loss formulas.

pub mod io;
pub mod losses;
pub mod mel;
pub mod pitch;
pub mod vocoder;

pub use io::{encode_wav_tagged, read_f0, read_wav, wav_comment, write_f0, write_wav};
pub use losses::{gan_losses, DiscriminatorOutputs, LossBundle, LAMBDA_FM, LAMBDA_RECON, MPD_PERIODS, MSD_SCALES};
pub use mel::{mel_spectrogram, MelConfig, MelSpectrogram};
pub use pitch::{extract_f0, PitchConfig};
pub use vocoder::{synthesize, TimbreEntry, TimbreTable};

pub const SAMPLE_RATE: u32 = 16_000;
/// Samples per 20 ms unit frame.
pub const HOP: usize = 320;

#[derive(Debug, thiserror::Error)]
pub enum DspError {
    #[error("expected a {expected} Hz signal, got {found} Hz")]
    SampleRate { found: u32, expected: u32 },
    #[error("length mismatch: {0} units vs {1} F0 frames")]
    LengthMismatch(usize, usize),
    #[error("signal shorter than one frame")]
    TooShort,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite sample at {0}")]
    NonFinite(usize),
    #[error("invalid F0 value {value} at line {line}")]
    F0Parse { line: usize, value: String },
    #[error("invalid wav file: {0}")]
    Wav(String),
    #[error("{speaker}/{emotion}/{unit} missing from the timbre table")]
    MissingTimbre { speaker: usize, emotion: usize, unit: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Mono signal at [`SAMPLE_RATE`].
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>) -> Result<Self, DspError> {
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(DspError::NonFinite(i));
        }
        Ok(Waveform { samples, sample_rate: SAMPLE_RATE })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub(crate) fn check_rate(&self) -> Result<(), DspError> {
        if self.sample_rate != SAMPLE_RATE {
            return Err(DspError::SampleRate { found: self.sample_rate, expected: SAMPLE_RATE });
        }
        Ok(())
    }
}
