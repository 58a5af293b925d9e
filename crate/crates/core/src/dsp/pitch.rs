//! Normalized cross-correlation pitch tracker.

use serde::{Deserialize, Serialize};

use super::{DspError, Waveform, HOP};
use crate::corpus::ProsodyTrack;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PitchConfig {
    pub fmin: f64,
    pub fmax: f64,
    /// Minimum correlation peak for a frame to count as voiced.
    pub voicing_threshold: f64,
    /// Frames whose RMS is below this are unvoiced without analysis.
    pub silence_rms: f64,
    /// Candidate peaks within this fraction of the best peak are eligible;
    /// the shortest such lag wins, which keeps period multiples out.
    pub octave_tolerance: f64,
}

impl Default for PitchConfig {
    fn default() -> Self {
        PitchConfig { fmin: 60.0, fmax: 400.0, voicing_threshold: 0.5, silence_rms: 1e-4, octave_tolerance: 0.9 }
    }
}

fn sample(x: &[f32], i: isize) -> f64 {
    if i < 0 || i as usize >= x.len() {
        0.0
    } else {
        x[i as usize] as f64
    }
}

/// One F0 value per 320-sample frame, analysed around the frame centre.
pub fn extract_f0(wav: &Waveform, cfg: &PitchConfig) -> Result<ProsodyTrack, DspError> {
    wav.check_rate()?;
    if wav.len() < HOP {
        return Err(DspError::TooShort);
    }
    let sr = wav.sample_rate as f64;
    let min_lag = (sr / cfg.fmax).floor().max(2.0) as usize;
    let max_lag = (sr / cfg.fmin).ceil() as usize;
    let n = HOP;
    let frames = wav.len() / HOP;
    let mut out = Vec::with_capacity(frames);
    let mut seg = vec![0.0f64; n + max_lag + 1];
    let mut nccf = vec![0.0f64; max_lag + 2];
    for f in 0..frames {
        let centre = (f * HOP + HOP / 2) as isize;
        let start = centre - ((n + max_lag) / 2) as isize;
        for (j, s) in seg.iter_mut().enumerate() {
            *s = sample(&wav.samples, start + j as isize);
        }
        let mean = seg.iter().sum::<f64>() / seg.len() as f64;
        seg.iter_mut().for_each(|s| *s -= mean);
        let e0: f64 = seg[..n].iter().map(|s| s * s).sum();
        if (e0 / n as f64).sqrt() < cfg.silence_rms {
            out.push(0.0);
            continue;
        }
        // running energy of the lagged window
        let mut el: f64 = seg[min_lag - 1..min_lag - 1 + n].iter().map(|s| s * s).sum();
        let mut best = f64::NEG_INFINITY;
        for lag in min_lag - 1..=max_lag + 1 {
            if lag > min_lag - 1 {
                el += seg[lag + n - 1] * seg[lag + n - 1] - seg[lag - 1] * seg[lag - 1];
            }
            let cross: f64 = seg[..n].iter().zip(&seg[lag..lag + n]).map(|(a, b)| a * b).sum();
            let denom = (e0 * el.max(0.0)).sqrt();
            nccf[lag] = if denom > 0.0 { cross / denom } else { 0.0 };
            if (min_lag..=max_lag).contains(&lag) {
                best = best.max(nccf[lag]);
            }
        }
        if best < cfg.voicing_threshold {
            out.push(0.0);
            continue;
        }
        let is_peak = |l: usize| nccf[l] >= nccf[l - 1] && nccf[l] >= nccf[l + 1];
        let lag = (min_lag..=max_lag)
            .find(|&l| is_peak(l) && nccf[l] >= cfg.octave_tolerance * best)
            .unwrap_or_else(|| (min_lag..=max_lag).find(|&l| nccf[l] == best).unwrap());
        let (a, b, c) = (nccf[lag - 1], nccf[lag], nccf[lag + 1]);
        let curv = a - 2.0 * b + c;
        let delta = if curv < 0.0 { (0.5 * (a - c) / curv).clamp(-0.5, 0.5) } else { 0.0 };
        let f0 = (sr / (lag as f64 + delta)).clamp(cfg.fmin, cfg.fmax);
        out.push(f0);
    }
    Ok(ProsodyTrack::new(out).expect("tracker emits finite non-negative values"))
}
