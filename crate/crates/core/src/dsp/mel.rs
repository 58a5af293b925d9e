//! Log-mel spectrogram: Hann-windowed STFT power, HTK mel filterbank.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{DspError, Waveform};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MelConfig {
    pub n_fft: usize,
    pub hop: usize,
    pub win_length: usize,
    pub mel_bins: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub log_floor: f64,
    pub sample_rate: u32,
}

impl Default for MelConfig {
    fn default() -> Self {
        MelConfig {
            n_fft: 1024,
            hop: 320,
            win_length: 1024,
            mel_bins: 80,
            fmin: 0.0,
            fmax: 8000.0,
            log_floor: 1e-5,
            sample_rate: 16_000,
        }
    }
}

impl MelConfig {
    fn validate(&self) -> Result<(), DspError> {
        let ok = self.n_fft >= 2
            && self.hop > 0
            && self.win_length > 0
            && self.win_length <= self.n_fft
            && self.mel_bins > 0
            && self.fmin >= 0.0
            && self.fmax > self.fmin
            && self.fmax <= self.sample_rate as f64 / 2.0
            && self.log_floor > 0.0;
        if ok {
            Ok(())
        } else {
            Err(DspError::Shape(format!("invalid mel config {self:?}")))
        }
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Centre frequencies (Hz) of the `mel_bins` triangular filters.
pub fn filter_centres(cfg: &MelConfig) -> Vec<f64> {
    let lo = hz_to_mel(cfg.fmin);
    let hi = hz_to_mel(cfg.fmax);
    let step = (hi - lo) / (cfg.mel_bins + 1) as f64;
    (1..=cfg.mel_bins).map(|i| mel_to_hz(lo + step * i as f64)).collect()
}

/// `[mel_bins][n_fft/2 + 1]` triangular weights on FFT bin frequencies.
pub fn filterbank(cfg: &MelConfig) -> Vec<Vec<f64>> {
    let lo = hz_to_mel(cfg.fmin);
    let hi = hz_to_mel(cfg.fmax);
    let step = (hi - lo) / (cfg.mel_bins + 1) as f64;
    let edges: Vec<f64> = (0..cfg.mel_bins + 2).map(|i| mel_to_hz(lo + step * i as f64)).collect();
    let n_bins = cfg.n_fft / 2 + 1;
    let bin_hz = cfg.sample_rate as f64 / cfg.n_fft as f64;
    (0..cfg.mel_bins)
        .map(|m| {
            let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..n_bins)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    if f <= l || f >= r {
                        0.0
                    } else if f <= c {
                        (f - l) / (c - l)
                    } else {
                        (r - f) / (r - c)
                    }
                })
                .collect()
        })
        .collect()
}

/// Frame-major log-mel matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpectrogram {
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<f64>,
}

impl MelSpectrogram {
    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.bins..(t + 1) * self.bins]
    }
}

fn reflect(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut j = i.rem_euclid(period);
    if j >= len as isize {
        j = period - j;
    }
    j as usize
}

/// `ceil(len / hop)` frames; frame `t` is centred on sample `t * hop` with
/// reflection padding at both ends.
pub fn mel_spectrogram(wav: &Waveform, cfg: &MelConfig) -> Result<MelSpectrogram, DspError> {
    cfg.validate()?;
    if wav.sample_rate != cfg.sample_rate {
        return Err(DspError::SampleRate { found: wav.sample_rate, expected: cfg.sample_rate });
    }
    let n = wav.len();
    let frames = n.div_ceil(cfg.hop);
    let bank = filterbank(cfg);
    let window: Vec<f64> = (0..cfg.win_length)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / cfg.win_length as f64).cos())
        .collect();
    let win_offset = (cfg.n_fft - cfg.win_length) / 2;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.n_fft);
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.n_fft];
    let mut power = vec![0.0; cfg.n_fft / 2 + 1];
    let mut data = Vec::with_capacity(frames * cfg.mel_bins);
    let half = (cfg.n_fft / 2) as isize;
    for t in 0..frames {
        let start = (t * cfg.hop) as isize - half;
        for (j, b) in buf.iter_mut().enumerate() {
            let w = if j >= win_offset && j < win_offset + cfg.win_length { window[j - win_offset] } else { 0.0 };
            let x = wav.samples[reflect(start + j as isize, n)] as f64;
            *b = Complex::new(x * w, 0.0);
        }
        fft.process(&mut buf);
        for (p, b) in power.iter_mut().zip(&buf) {
            *p = b.norm_sqr();
        }
        for filt in &bank {
            let e: f64 = filt.iter().zip(&power).map(|(w, p)| w * p).sum();
            data.push(e.max(cfg.log_floor).ln());
        }
    }
    Ok(MelSpectrogram { frames, bins: cfg.mel_bins, data })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sine(freq: f64, amp: f64, n: usize) -> Waveform {
        Waveform::new((0..n).map(|i| (amp * (2.0 * PI * freq * i as f64 / 16000.0).sin()) as f32).collect()).unwrap()
    }

    #[test]
    fn silence_hits_floor() {
        let m = mel_spectrogram(&Waveform::new(vec![0.0; 1000]).unwrap(), &MelConfig::default()).unwrap();
        assert_eq!(m.frames, 4);
        assert!(m.data.iter().all(|&v| v == (1e-5f64).ln()));
    }

    #[test]
    fn sine_peaks_in_nearest_filter() {
        let cfg = MelConfig::default();
        let m = mel_spectrogram(&sine(440.0, 0.5, 16000), &cfg).unwrap();
        // nearest filter centre on the mel axis, recomputed from the HTK formula
        let target = 2595.0 * (1.0f64 + 440.0 / 700.0).log10();
        let step = 2595.0 * (1.0f64 + 8000.0 / 700.0).log10() / 81.0;
        let want = ((target / step).round() as usize) - 1;
        for t in 2..m.frames - 2 {
            let row = m.frame(t);
            let arg = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            assert_eq!(arg, want);
        }
    }

    #[test]
    fn doubling_amplitude_adds_log4() {
        let cfg = MelConfig::default();
        let a = mel_spectrogram(&sine(440.0, 0.25, 8000), &cfg).unwrap();
        let b = mel_spectrogram(&sine(440.0, 0.5, 8000), &cfg).unwrap();
        let t = 10;
        let row = a.frame(t);
        let k = (0..row.len()).max_by(|&x, &y| row[x].total_cmp(&row[y])).unwrap();
        assert!((b.frame(t)[k] - a.frame(t)[k] - 4f64.ln()).abs() < 1e-3);
    }

    #[test]
    fn deterministic_and_frame_count() {
        let w = sine(300.0, 0.3, 3201);
        let cfg = MelConfig::default();
        let a = mel_spectrogram(&w, &cfg).unwrap();
        assert_eq!(a.frames, 11);
        assert_eq!(a, mel_spectrogram(&w, &cfg).unwrap());
    }
}
