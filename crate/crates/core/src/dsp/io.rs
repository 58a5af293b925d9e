//! 16-bit PCM WAV and plain-text F0 files.

use std::fs;
use std::path::Path;

use super::{DspError, Waveform, SAMPLE_RATE};
use crate::corpus::ProsodyTrack;

pub fn encode_wav(wav: &Waveform) -> Vec<u8> {
    encode_wav_tagged(wav, None)
}

fn info_chunk(comment: &str) -> Vec<u8> {
    let mut text = comment.as_bytes().to_vec();
    text.push(0);
    if text.len() % 2 == 1 {
        text.push(0);
    }
    let mut c = Vec::with_capacity(20 + text.len());
    c.extend_from_slice(b"LIST");
    c.extend_from_slice(&(12 + text.len() as u32).to_le_bytes());
    c.extend_from_slice(b"INFOICMT");
    c.extend_from_slice(&(text.len() as u32).to_le_bytes());
    c.extend_from_slice(&text);
    c
}

/// Like [`encode_wav`], with an optional `LIST/INFO/ICMT` comment chunk
/// placed before the samples.
pub fn encode_wav_tagged(wav: &Waveform, comment: Option<&str>) -> Vec<u8> {
    let data_len = (wav.samples.len() * 2) as u32;
    let info = comment.map(info_chunk).unwrap_or_default();
    let mut out = Vec::with_capacity(44 + info.len() + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + info.len() as u32 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&wav.sample_rate.to_le_bytes());
    out.extend_from_slice(&(wav.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(&info);
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in &wav.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn le_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn le_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

pub fn decode_wav(bytes: &[u8]) -> Result<Waveform, DspError> {
    let bad = |m: &str| DspError::Wav(m.to_string());
    if bytes.len() < 12 || &bytes[..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(bad("missing RIFF/WAVE header"));
    }
    let mut pos = 12;
    let mut format = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let len = le_u32(bytes, pos + 4) as usize;
        let body = pos + 8;
        if body + len > bytes.len() {
            return Err(bad("truncated chunk"));
        }
        match id {
            b"fmt " => {
                if len < 16 {
                    return Err(bad("short fmt chunk"));
                }
                format = Some((le_u16(bytes, body), le_u16(bytes, body + 2), le_u32(bytes, body + 4), le_u16(bytes, body + 14)));
            }
            b"data" => {
                let (fmt, channels, rate, bits) = format.ok_or_else(|| bad("data before fmt"))?;
                if fmt != 1 || channels != 1 || bits != 16 {
                    return Err(bad("only mono 16-bit PCM is supported"));
                }
                if rate != SAMPLE_RATE {
                    return Err(DspError::SampleRate { found: rate, expected: SAMPLE_RATE });
                }
                let samples = bytes[body..body + len]
                    .chunks_exact(2)
                    .map(|c| i16::from_le_bytes([c[0], c[1]]) as f32 / 32767.0)
                    .collect();
                return Waveform::new(samples);
            }
            _ => {}
        }
        pos = body + len + (len & 1);
    }
    Err(bad("no data chunk"))
}

/// The `ICMT` comment of a WAV file, if present.
pub fn wav_comment(bytes: &[u8]) -> Option<String> {
    if bytes.len() < 12 || &bytes[..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return None;
    }
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let len = le_u32(bytes, pos + 4) as usize;
        let body = pos + 8;
        let end = body.checked_add(len).filter(|&e| e <= bytes.len())?;
        if &bytes[pos..pos + 4] == b"LIST" && len >= 4 && &bytes[body..body + 4] == b"INFO" {
            let mut p = body + 4;
            while p + 8 <= end {
                let sub = le_u32(bytes, p + 4) as usize;
                let text = bytes.get(p + 8..p + 8 + sub)?;
                if &bytes[p..p + 4] == b"ICMT" {
                    let text = text.split(|&b| b == 0).next().unwrap_or(&[]);
                    return String::from_utf8(text.to_vec()).ok();
                }
                p += 8 + sub + (sub & 1);
            }
        }
        pos = end + (len & 1);
    }
    None
}

pub fn write_wav(path: impl AsRef<Path>, wav: &Waveform) -> Result<(), DspError> {
    fs::write(path, encode_wav(wav))?;
    Ok(())
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform, DspError> {
    decode_wav(&fs::read(path)?)
}

/// One decimal Hz value per line, `0` for unvoiced frames.
pub fn format_f0(track: &ProsodyTrack) -> String {
    let mut s = String::new();
    for v in track.values() {
        if *v == 0.0 {
            s.push_str("0\n");
        } else {
            s.push_str(&format!("{v}\n"));
        }
    }
    s
}

pub fn parse_f0(text: &str) -> Result<ProsodyTrack, DspError> {
    let mut values = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let v: f64 = t.parse().map_err(|_| DspError::F0Parse { line: i + 1, value: t.to_string() })?;
        if !v.is_finite() || v < 0.0 {
            return Err(DspError::F0Parse { line: i + 1, value: t.to_string() });
        }
        values.push(v);
    }
    Ok(ProsodyTrack::new(values).expect("validated above"))
}

pub fn write_f0(path: impl AsRef<Path>, track: &ProsodyTrack) -> Result<(), DspError> {
    fs::write(path, format_f0(track))?;
    Ok(())
}

pub fn read_f0(path: impl AsRef<Path>) -> Result<ProsodyTrack, DspError> {
    parse_f0(&fs::read_to_string(path)?)
}
