use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CorpusError, ProsodyTrack, SpeakerId, Utterance};
use crate::emotion::Emotion;
use crate::nn::derive_seed;
use crate::units::{dedup, inflate_ids, round_frames, UnitSequence};

/// Word separator and leading/trailing silence.
pub const SILENCE: u32 = 0;
/// Lowest F0 a transform may produce.
const F0_FLOOR_HZ: f64 = 40.0;
const LEXICON_SALT: u64 = 0x1E81C0;
const TRANSCRIPT_SALT: u64 = 0x7A5C;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeakerConfig {
    pub base_hz: f64,
    pub sigma_hz: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotifPosition {
    /// Before the leading silence.
    Prefix,
    /// After the final word, before the trailing silence.
    AfterFinalWord,
    /// After a uniformly chosen word.
    AfterRandomWord,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Motif {
    pub units: Vec<u32>,
    pub probability: f64,
    pub position: MotifPosition,
    /// Frames per motif unit before duration scaling.
    pub frames: u32,
    /// F0 of the motif relative to the utterance mean, in speaker sigmas.
    pub f0_offset: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmotionTransformSpec {
    pub motifs: Vec<Motif>,
    pub duration_scale: f64,
    /// Mean F0 shift in speaker sigmas.
    pub f0_shift: f64,
    /// Multiplier on the F0 variance around the utterance mean.
    pub f0_var_scale: f64,
}

impl Default for EmotionTransformSpec {
    fn default() -> Self {
        EmotionTransformSpec { motifs: Vec::new(), duration_scale: 1.0, f0_shift: 0.0, f0_var_scale: 1.0 }
    }
}

impl EmotionTransformSpec {
    pub fn default_for(emotion: Emotion, content_units: u32) -> Self {
        let k = content_units;
        match emotion {
            Emotion::Neutral => Self::default(),
            Emotion::Amused => EmotionTransformSpec {
                motifs: vec![Motif {
                    units: vec![k, k + 1, k],
                    probability: 0.8,
                    position: MotifPosition::AfterFinalWord,
                    frames: 3,
                    f0_offset: 1.0,
                }],
                f0_shift: 0.5,
                ..Self::default()
            },
            Emotion::Angry => {
                EmotionTransformSpec { duration_scale: 0.8, f0_shift: 0.8, f0_var_scale: 1.5, ..Self::default() }
            }
            Emotion::Sleepy => EmotionTransformSpec {
                motifs: vec![Motif {
                    units: vec![k + 2, k + 3],
                    probability: 0.5,
                    position: MotifPosition::Prefix,
                    frames: 6,
                    f0_offset: -0.5,
                }],
                duration_scale: 1.6,
                f0_shift: -0.5,
                ..Self::default()
            },
            Emotion::Disgusted => EmotionTransformSpec {
                motifs: vec![Motif {
                    units: vec![k + 4, k + 5],
                    probability: 0.5,
                    position: MotifPosition::AfterRandomWord,
                    frames: 4,
                    f0_offset: -1.0,
                }],
                duration_scale: 1.1,
                f0_shift: -0.2,
                ..Self::default()
            },
        }
    }

    pub fn validate(&self, content_units: u32, vocab_size: u32) -> Result<(), CorpusError> {
        for m in &self.motifs {
            if let Some(&id) = m.units.iter().find(|&&u| u < content_units || u >= vocab_size) {
                return Err(CorpusError::MotifOutOfRange { id, lo: content_units, hi: vocab_size });
            }
            if m.units.is_empty() || m.units.windows(2).any(|w| w[0] == w[1]) {
                return Err(CorpusError::Config("motif units must be non-empty with no adjacent repeats".into()));
            }
            if !(0.0..=1.0).contains(&m.probability) || m.frames == 0 {
                return Err(CorpusError::Config("motif probability must be in [0,1] and frames >= 1".into()));
            }
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.duration_scale) || !positive(self.f0_var_scale) || !self.f0_shift.is_finite() {
            return Err(CorpusError::Config("scale factors must be positive and finite".into()));
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.motifs.is_empty() && self.duration_scale == 1.0 && self.f0_shift == 0.0 && self.f0_var_scale == 1.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    /// Total unit vocabulary `K`.
    pub vocab_size: u32,
    /// Content units `[0, K_c)`; `[K_c, K)` is reserved for vocalizations.
    pub content_units: u32,
    pub word_inventory: usize,
    pub word_len: (usize, usize),
    pub words_per_transcript: (usize, usize),
    pub n_transcripts: usize,
    pub speakers: Vec<SpeakerConfig>,
    /// Emotions rendered in addition to neutral.
    pub emotions: Vec<Emotion>,
    /// Overrides of the default per-emotion transforms.
    pub transforms: BTreeMap<Emotion, EmotionTransformSpec>,
    /// Probability that a content unit is unvoiced.
    pub unvoiced_fraction: f64,
    /// Probability that a run length is perturbed by one frame.
    pub duration_noise: f64,
    /// Half-width of the uniform per-frame F0 noise, in speaker sigmas.
    pub f0_noise: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            vocab_size: 64,
            content_units: 48,
            word_inventory: 60,
            word_len: (2, 5),
            words_per_transcript: (3, 6),
            n_transcripts: 500,
            speakers: vec![SpeakerConfig { base_hz: 120.0, sigma_hz: 20.0 }, SpeakerConfig { base_hz: 210.0, sigma_hz: 30.0 }],
            emotions: vec![Emotion::Amused, Emotion::Angry, Emotion::Sleepy, Emotion::Disgusted],
            transforms: BTreeMap::new(),
            unvoiced_fraction: 0.15,
            duration_noise: 0.3,
            f0_noise: 0.1,
        }
    }
}

impl CorpusConfig {
    pub fn transform(&self, emotion: Emotion) -> EmotionTransformSpec {
        self.transforms
            .get(&emotion)
            .cloned()
            .unwrap_or_else(|| EmotionTransformSpec::default_for(emotion, self.content_units))
    }

    /// Emotions present in the corpus, neutral first.
    pub fn all_emotions(&self) -> Vec<Emotion> {
        let mut v = vec![Emotion::Neutral];
        for &e in &self.emotions {
            if !v.contains(&e) {
                v.push(e);
            }
        }
        v
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let err = |m: &str| Err(CorpusError::Config(m.to_string()));
        if self.word_inventory == 0 {
            return err("word inventory must be positive");
        }
        if self.emotions.iter().all(|&e| e == Emotion::Neutral) {
            return err("emotion set is empty");
        }
        if self.speakers.is_empty() {
            return err("no speakers configured");
        }
        if self.content_units < 3 || self.content_units > self.vocab_size {
            return err("need 3 <= content_units <= vocab_size");
        }
        if self.word_len.0 == 0 || self.word_len.0 > self.word_len.1 {
            return err("word_len must be a non-empty range starting at 1 or more");
        }
        if self.words_per_transcript.0 == 0 || self.words_per_transcript.0 > self.words_per_transcript.1 {
            return err("words_per_transcript must be a non-empty range starting at 1 or more");
        }
        if self.speakers.iter().any(|s| !(s.base_hz > 0.0 && s.sigma_hz > 0.0)) {
            return err("speaker base pitch and sigma must be positive");
        }
        if !(0.0..1.0).contains(&self.unvoiced_fraction) || !(0.0..=1.0).contains(&self.duration_noise) {
            return err("probabilities out of range");
        }
        if !(self.f0_noise >= 0.0) {
            return err("f0_noise must be non-negative");
        }
        for e in self.all_emotions() {
            self.transform(e).validate(self.content_units, self.vocab_size)?;
        }
        Ok(())
    }
}

/// The fixed "language" behind a corpus: word spellings and per-unit
/// acoustic tendencies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lexicon {
    pub words: Vec<Vec<u32>>,
    /// Typical run length of each unit id.
    pub base_duration: Vec<u32>,
    /// Per-unit F0 offset in speaker sigmas.
    pub f0_offset: Vec<f64>,
    pub voiced: Vec<bool>,
    salt: u32,
}

impl Lexicon {
    pub fn generate(cfg: &CorpusConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, LEXICON_SALT));
        let k = cfg.vocab_size as usize;
        let words = (0..cfg.word_inventory)
            .map(|_| {
                let len = rng.random_range(cfg.word_len.0..=cfg.word_len.1);
                let mut w: Vec<u32> = Vec::with_capacity(len);
                while w.len() < len {
                    let u = rng.random_range(1..cfg.content_units);
                    if w.last() != Some(&u) {
                        w.push(u);
                    }
                }
                w
            })
            .collect();
        let base_duration = (0..k).map(|u| if u == 0 { 3 } else { rng.random_range(2..=5) }).collect();
        let f0_offset = (0..k).map(|u| if u == 0 { 0.0 } else { rng.random_range(-0.6..0.6) }).collect();
        let voiced = (0..k)
            .map(|u| u != 0 && (u as u32 >= cfg.content_units || rng.random::<f64>() >= cfg.unvoiced_fraction))
            .collect();
        Lexicon { words, base_duration, f0_offset, voiced, salt: rng.random_range(0..997) }
    }

    /// Coarticulation effect of the preceding unit: -1, 0 or +1 frames.
    fn context_shift(&self, prev: u32, unit: u32) -> i64 {
        ((prev as u64 * 31 + unit as u64 * 17 + self.salt as u64) % 3) as i64 - 1
    }
}

fn noisy_duration(base: i64, noise: f64, rng: &mut ChaCha8Rng) -> u32 {
    let jitter = if rng.random::<f64>() < noise { if rng.random::<bool>() { 1 } else { -1 } } else { 0 };
    (base + jitter).max(1) as u32
}

/// Neutral rendition of a transcript: deduped layout `[0, w1.., 0, w2.., 0]`.
fn render_neutral(
    lex: &Lexicon,
    transcript: &[usize],
    speaker: &SpeakerConfig,
    cfg: &CorpusConfig,
    rng: &mut ChaCha8Rng,
) -> (Vec<u32>, Vec<u32>, Vec<f64>) {
    let mut units = vec![SILENCE];
    let mut durations = vec![noisy_duration(4, cfg.duration_noise, rng)];
    let mut prev_word_len = None;
    for (wi, &w) in transcript.iter().enumerate() {
        let word = &lex.words[w];
        for (i, &u) in word.iter().enumerate() {
            let prev = *units.last().unwrap();
            let mut base = lex.base_duration[u as usize] as i64 + lex.context_shift(prev, u);
            if i + 1 == word.len() {
                base += 2;
            }
            // rhythmic compensation: a word following a short word starts slowly
            if i == 0 && prev_word_len.is_some_and(|n| n <= 3) {
                base += 2;
            }
            units.push(u);
            durations.push(noisy_duration(base, cfg.duration_noise, rng));
        }
        prev_word_len = Some(word.len());
        let last = wi + 1 == transcript.len();
        units.push(SILENCE);
        durations.push(noisy_duration(if last { 4 } else { 2 }, cfg.duration_noise, rng));
    }
    let frames = inflate_ids(&units, &durations).expect("durations are positive");
    let total = frames.len() as f64;
    let start = rng.random_range(0.2..0.6);
    let slope = rng.random_range(0.5..1.0);
    let f0 = frames
        .iter()
        .enumerate()
        .map(|(t, &u)| {
            if !lex.voiced[u as usize] {
                return 0.0;
            }
            let z = start - slope * t as f64 / total
                + lex.f0_offset[u as usize]
                + rng.random_range(-1.0..=1.0) * cfg.f0_noise;
            (speaker.base_hz + speaker.sigma_hz * z).max(F0_FLOOR_HZ)
        })
        .collect();
    (units, durations, f0)
}

fn resample(values: &[f64], len: usize) -> Vec<f64> {
    let n = values.len();
    if n == len {
        return values.to_vec();
    }
    (0..len)
        .map(|j| {
            let pos = ((j as f64 + 0.5) * n as f64 / len as f64 - 0.5).clamp(0.0, (n - 1) as f64);
            let i = pos.floor() as usize;
            let frac = pos - i as f64;
            if i + 1 < n {
                values[i] + (values[i + 1] - values[i]) * frac
            } else {
                values[i]
            }
        })
        .collect()
}

/// Renders `u` (neutral) in `target` emotion: motifs inserted, run lengths
/// scaled, F0 moved in speaker-normalized space around the utterance's
/// voiced mean. Content units are untouched.
pub fn apply_emotion_transform(
    u: &Utterance,
    target: Emotion,
    spec: &EmotionTransformSpec,
    speaker: &SpeakerConfig,
    content_units: u32,
    vocab_size: u32,
    seed: u64,
) -> Result<Utterance, CorpusError> {
    if u.emotion != Emotion::Neutral {
        return Err(CorpusError::NotNeutral(u.emotion));
    }
    spec.validate(content_units, vocab_size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (dd, durs) = dedup(&u.units);
    let z: Vec<f64> =
        u.prosody.values().iter().map(|&f| if f > 0.0 { (f - speaker.base_hz) / speaker.sigma_hz } else { f64::NAN }).collect();
    let voiced_z: Vec<f64> = z.iter().copied().filter(|v| !v.is_nan()).collect();
    let mean_z = crate::metrics::mean(voiced_z.iter().copied()).unwrap_or(0.0);

    // runs of (unit, frames of z) in the neutral rendition
    let mut runs: Vec<(u32, Vec<f64>)> = Vec::with_capacity(dd.len());
    let mut at = 0;
    for (&unit, &d) in dd.as_slice().iter().zip(durs.as_slice()) {
        runs.push((unit, z[at..at + d as usize].to_vec()));
        at += d as usize;
    }

    let word_ends: Vec<usize> = (0..runs.len().saturating_sub(1))
        .filter(|&i| runs[i].0 != SILENCE && runs[i + 1].0 == SILENCE)
        .collect();
    let mut inserts: Vec<(usize, &Motif)> = Vec::new();
    for m in &spec.motifs {
        if rng.random::<f64>() >= m.probability {
            continue;
        }
        let at = match m.position {
            MotifPosition::Prefix => Some(0),
            MotifPosition::AfterFinalWord => word_ends.last().map(|i| i + 1),
            MotifPosition::AfterRandomWord => {
                (!word_ends.is_empty()).then(|| word_ends[rng.random_range(0..word_ends.len())] + 1)
            }
        };
        if let Some(at) = at {
            inserts.push((at, m));
        }
    }
    inserts.sort_by_key(|(at, _)| std::cmp::Reverse(*at));
    for (at, m) in inserts {
        let motif_runs = m.units.iter().map(|&id| (id, vec![mean_z + m.f0_offset; m.frames as usize]));
        runs.splice(at..at, motif_runs);
    }

    let scale = spec.f0_var_scale.sqrt();
    let mut units = Vec::new();
    let mut f0 = Vec::new();
    for (unit, zs) in &runs {
        let len = round_frames(zs.len() as f64 * spec.duration_scale) as usize;
        let voiced = zs.iter().all(|v| !v.is_nan());
        let new = if voiced { resample(zs, len) } else { vec![f64::NAN; len] };
        for v in new {
            units.push(*unit);
            f0.push(if v.is_nan() {
                0.0
            } else {
                let moved = mean_z + (v - mean_z) * scale + spec.f0_shift;
                (speaker.base_hz + speaker.sigma_hz * moved).max(F0_FLOOR_HZ)
            });
        }
    }
    Utterance::new(
        utterance_id(&u.transcript_group, u.speaker, target),
        u.speaker,
        target,
        u.transcript_group.clone(),
        UnitSequence::new(units),
        ProsodyTrack::new(f0)?,
    )
}

pub fn utterance_id(group: &str, speaker: SpeakerId, emotion: Emotion) -> String {
    format!("{group}_s{speaker}_{emotion}")
}

pub fn group_name(index: usize) -> String {
    format!("t{index:05}")
}

/// Every transcript rendered by every speaker in neutral and each configured
/// emotion. Group `i` draws from its own seed, so the corpus does not depend
/// on generation order.
pub fn generate_corpus(cfg: &CorpusConfig, seed: u64) -> Result<Vec<Utterance>, CorpusError> {
    cfg.validate()?;
    let lex = Lexicon::generate(cfg, seed);
    let emotions = cfg.all_emotions();
    let specs: Vec<EmotionTransformSpec> = emotions.iter().map(|&e| cfg.transform(e)).collect();
    let mut out = Vec::with_capacity(cfg.n_transcripts * cfg.speakers.len() * emotions.len());
    for g in 0..cfg.n_transcripts {
        let group_seed = derive_seed(seed, g as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(group_seed, TRANSCRIPT_SALT));
        let n_words = rng.random_range(cfg.words_per_transcript.0..=cfg.words_per_transcript.1);
        let transcript: Vec<usize> = (0..n_words).map(|_| rng.random_range(0..lex.words.len())).collect();
        let group = group_name(g);
        for (s, speaker) in cfg.speakers.iter().enumerate() {
            let spk_seed = derive_seed(group_seed, 1 + s as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(spk_seed);
            let (units, durations, f0) = render_neutral(&lex, &transcript, speaker, cfg, &mut rng);
            let neutral = Utterance::new(
                utterance_id(&group, s, Emotion::Neutral),
                s,
                Emotion::Neutral,
                group.clone(),
                UnitSequence::new(inflate_ids(&units, &durations)?),
                ProsodyTrack::new(f0)?,
            )?;
            let mut rendered = Vec::with_capacity(emotions.len() - 1);
            for (&e, spec) in emotions.iter().zip(&specs).skip(1) {
                let t_seed = derive_seed(spk_seed, 100 + e.index() as u64);
                rendered.push(apply_emotion_transform(&neutral, e, spec, speaker, cfg.content_units, cfg.vocab_size, t_seed)?);
            }
            out.push(neutral);
            out.extend(rendered);
        }
    }
    Ok(out)
}

/// Content ids of a frame sequence: reserved ids removed, then deduped.
pub fn content_ids(units: &[u32], content_units: u32) -> Vec<u32> {
    crate::metrics::strip_reserved(units, &(content_units..u32::MAX))
}
