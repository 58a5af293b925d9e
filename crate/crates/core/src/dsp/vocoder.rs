//! Deterministic harmonic-plus-noise vocoder driven by units and F0.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DspError, Waveform, HOP, SAMPLE_RATE};
use crate::corpus::ProsodyTrack;
use crate::emotion::Emotion;
use crate::units::UnitSequence;

pub const MAX_HARMONICS: usize = 10;
/// Envelope and voicing crossfade between frames (5 ms).
pub const CROSSFADE: usize = 80;
/// Unvoiced gaps shorter than this inside a voiced region hold the last F0.
pub const MAX_HELD_GAP: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimbreEntry {
    /// Amplitude ratio between consecutive harmonics.
    pub rolloff: f64,
    /// Aspiration noise mixed into voiced frames.
    pub noise_mix: f64,
    pub gain: f64,
}

/// Lookup table of spectral envelope parameters per (speaker, emotion, unit).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimbreTable {
    pub speakers: usize,
    pub units: usize,
    entries: Vec<TimbreEntry>,
}

impl TimbreTable {
    pub fn generate(speakers: usize, units: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let unit_base: Vec<(f64, f64)> =
            (0..units).map(|_| (rng.random_range(0.35..0.75), rng.random_range(0.0..0.06))).collect();
        let speaker_tilt: Vec<f64> = (0..speakers).map(|_| rng.random_range(-0.08..0.08)).collect();
        let emotion_tilt = |e: Emotion| match e {
            Emotion::Neutral => (0.0, 0.0, 1.0),
            Emotion::Amused => (0.05, 0.01, 1.05),
            Emotion::Angry => (0.12, 0.02, 1.25),
            Emotion::Sleepy => (-0.12, 0.04, 0.75),
            Emotion::Disgusted => (-0.04, 0.06, 0.9),
        };
        let mut entries = Vec::with_capacity(speakers * Emotion::ALL.len() * units);
        for &tilt in &speaker_tilt {
            for e in Emotion::ALL {
                let (dr, dn, g) = emotion_tilt(e);
                for &(r, n) in &unit_base {
                    entries.push(TimbreEntry {
                        rolloff: (r + tilt + dr).clamp(0.1, 0.9),
                        noise_mix: (n + dn).clamp(0.0, 0.2),
                        gain: 0.4 * g,
                    });
                }
            }
        }
        TimbreTable { speakers, units, entries }
    }

    pub fn get(&self, speaker: usize, emotion: Emotion, unit: u32) -> Option<&TimbreEntry> {
        if speaker >= self.speakers || unit as usize >= self.units {
            return None;
        }
        self.entries.get((speaker * Emotion::ALL.len() + emotion.index()) * self.units + unit as usize)
    }
}

/// Voiced flags with short interior gaps filled by holding the previous F0.
fn hold_gaps(f0: &[f64]) -> Vec<f64> {
    let mut out = f0.to_vec();
    let mut i = 0;
    while i < out.len() {
        if out[i] > 0.0 {
            i += 1;
            continue;
        }
        let start = i;
        while i < out.len() && out[i] <= 0.0 {
            i += 1;
        }
        if start > 0 && i < out.len() && i - start < MAX_HELD_GAP {
            let held = out[start - 1];
            out[start..i].iter_mut().for_each(|v| *v = held);
        }
    }
    out
}

/// Renders `units.len() * 320` samples. F0 is linearly interpolated between
/// frame centres, harmonic phase runs continuously across frames, and the
/// per-unit envelope is crossfaded over the first 5 ms of each frame.
pub fn synthesize(
    units: &UnitSequence,
    f0: &ProsodyTrack,
    speaker: usize,
    emotion: Emotion,
    timbre: &TimbreTable,
) -> Result<Waveform, DspError> {
    let frames = units.len();
    if frames != f0.len() {
        return Err(DspError::LengthMismatch(frames, f0.len()));
    }
    let params: Vec<TimbreEntry> = units
        .as_slice()
        .iter()
        .map(|&u| {
            timbre
                .get(speaker, emotion, u)
                .copied()
                .ok_or(DspError::MissingTimbre { speaker, emotion: emotion.index(), unit: u })
        })
        .collect::<Result<_, _>>()?;
    let track = hold_gaps(f0.values());
    let sr = SAMPLE_RATE as f64;
    let nyquist = 0.5 * sr;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0000 ^ ((speaker as u64) << 8) ^ emotion.index() as u64);
    let mut noise_state = 0.0f64;
    let mut phase = 0.0f64;
    let mut samples = Vec::with_capacity(frames * HOP);
    for f in 0..frames {
        let cur = params[f];
        let prev = if f > 0 { params[f - 1] } else { cur };
        let voiced_cur = if track[f] > 0.0 { 1.0 } else { 0.0 };
        let voiced_prev = if f > 0 { (track[f - 1] > 0.0) as u8 as f64 } else { voiced_cur };
        for j in 0..HOP {
            let s = f * HOP + j;
            let a = if j < CROSSFADE { (j as f64 + 0.5) / CROSSFADE as f64 } else { 1.0 };
            let mix = |x: f64, y: f64| x + (y - x) * a;
            let gain = mix(prev.gain, cur.gain);
            let rolloff = mix(prev.rolloff, cur.rolloff);
            let noise_mix = mix(prev.noise_mix, cur.noise_mix);
            let voicing = mix(voiced_prev, voiced_cur);

            let pos = s as f64 / HOP as f64 - 0.5;
            let i0 = pos.floor();
            let frac = pos - i0;
            let at = |i: f64| if i < 0.0 || i as usize >= frames { 0.0 } else { track[i as usize] };
            let (lo, hi) = (at(i0), at(i0 + 1.0));
            let freq = if lo > 0.0 && hi > 0.0 { lo + (hi - lo) * frac } else { track[f] };

            noise_state = 0.5 * noise_state + 0.5 * rng.random_range(-1.0..1.0);
            let mut harm = 0.0;
            if freq > 0.0 {
                phase = (phase + 2.0 * std::f64::consts::PI * freq / sr) % (2.0 * std::f64::consts::PI);
                let mut norm = 0.0;
                let mut amp = 1.0;
                for h in 1..=MAX_HARMONICS {
                    if h as f64 * freq >= nyquist {
                        break;
                    }
                    harm += amp * (h as f64 * phase).sin();
                    norm += amp;
                    amp *= rolloff;
                }
                harm /= norm;
            }
            let voiced = harm + noise_mix * noise_state;
            let x = gain * (voicing * voiced + (1.0 - voicing) * 0.3 * noise_state);
            samples.push(x.clamp(-1.0, 1.0) as f32);
        }
    }
    Waveform::new(samples)
}
