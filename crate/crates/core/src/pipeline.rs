//! Stage functions behind the command-line tool: corpus generation,
//! training, conversion, synthesis and evaluation over one working
//! directory. Every file a stage writes carries the hash of the config
//! that produced it.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::{ConfigError, DurationVariant, PipelineConfig};
use crate::corpus::{
    assign_groups, generate_corpus, load_manifest, make_parallel_pairs, partition_by_group, write_manifest, write_splits,
    CorpusError, ProsodyTrack, SpeakerId, Utterance,
};
use crate::dsp::io::{encode_wav_tagged, format_f0, read_f0, wav_comment};
use crate::dsp::{synthesize, DspError, TimbreTable};
use crate::metrics::{evaluate_pipeline, DecodedF0, EvalConfig, EvalError, EvalPair, EvalReport};
use crate::metrics::eval::DurationSystem;
use crate::nn::{decode_checkpoint, derive_seed, encode_checkpoint, NnError, TrainConfig, TrainHistory};
use crate::prosody::{
    decode_duration, decode_f0_model, duration_data, encode_duration, encode_f0_model, f0_examples, f0_grid, f0_grid_tsv,
    fit_bins, predict_durations, train_duration_cnn, train_f0, train_ngram, DurationModel, F0Model, ProsodyError,
};
use crate::translator::{
    decode_translator, encode_translator, finetune_pairs, pretrain_denoise, translate_batch, PairExample, TranslatorError,
    TranslatorModel,
};
use crate::units::{dedup, format_units, inflate_ids, parse_units, DedupedUnits, Durations, UnitSequence, UnitsError};
use crate::Emotion;

pub const HASH_KEY: &str = "config_hash";
/// Validation pairs scored per epoch while fine-tuning the translator.
const MAX_VALID_PAIRS: usize = 512;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("missing {what}: {path}")]
    Missing { what: String, path: String },
    #[error("{path} was produced by config {found}, current config is {expected} (use --force to override)")]
    HashMismatch { path: String, found: String, expected: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Translator(#[from] TranslatorError),
    #[error(transparent)]
    Prosody(#[from] ProsodyError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Units(#[from] UnitsError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PipelineError {
    /// Errors caused by bad inputs rather than by a failing computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            PipelineError::Config(_)
                | PipelineError::Missing { .. }
                | PipelineError::HashMismatch { .. }
                | PipelineError::Invalid(_)
        )
    }
}

type Result<T, E = PipelineError> = std::result::Result<T, E>;

/// File locations inside a working directory.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.root.join("corpus")
    }

    /// `split` is one of `train`, `valid`, `test`.
    pub fn manifest(&self, split: &str) -> PathBuf {
        self.corpus_dir().join(format!("corpus.{split}"))
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn translator_checkpoint(&self) -> PathBuf {
        self.checkpoint_dir().join("translator.ckpt")
    }

    pub fn duration_checkpoint(&self, emotion: Emotion) -> PathBuf {
        self.checkpoint_dir().join(format!("duration.{emotion}.ckpt"))
    }

    pub fn f0_checkpoint(&self) -> PathBuf {
        self.checkpoint_dir().join("f0.ckpt")
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.root.join("eval")
    }

    pub fn converted_dir(&self, emotion: Emotion) -> PathBuf {
        self.root.join("converted").join(emotion.as_str())
    }
}

// ---------------------------------------------------------------------------
// Config-hash stamping.

fn hash_comment(hash: &str) -> String {
    format!("{HASH_KEY} {hash}")
}

fn stamp_text(hash: &str, body: &str) -> String {
    format!("# {}\n{body}", hash_comment(hash))
}

/// Hash from the leading `#` comment lines of a text artifact.
pub fn text_hash(text: &str) -> Option<String> {
    text.lines()
        .take_while(|l| l.starts_with('#'))
        .find_map(|l| l.trim_start_matches('#').trim().strip_prefix(HASH_KEY).map(|h| h.trim().to_string()))
}

/// Re-encodes a checkpoint with the hash added to its header.
pub fn stamp_checkpoint(bytes: &[u8], hash: &str) -> Result<Vec<u8>> {
    let mut ck = decode_checkpoint(bytes)?;
    match ck.header.as_object_mut() {
        Some(obj) => {
            obj.insert(HASH_KEY.into(), serde_json::Value::String(hash.into()));
        }
        None => return Err(NnError::Checkpoint("header is not a JSON object".into()).into()),
    }
    Ok(encode_checkpoint(&ck.header, &ck.params)?)
}

pub fn checkpoint_hash(bytes: &[u8]) -> Result<Option<String>> {
    let ck = decode_checkpoint(bytes)?;
    Ok(ck.header.get(HASH_KEY).and_then(|v| v.as_str()).map(str::to_string))
}

/// Hash embedded in any artifact this module writes, chosen by extension.
pub fn artifact_hash(path: &Path) -> Result<Option<String>> {
    let bytes = fs::read(path)?;
    Ok(match path.extension().and_then(|e| e.to_str()) {
        Some("ckpt") => checkpoint_hash(&bytes)?,
        Some("wav") => wav_comment(&bytes).and_then(|c| c.strip_prefix(HASH_KEY).map(|h| h.trim().to_string())),
        Some("json") => {
            let v: serde_json::Value = serde_json::from_slice(&bytes)?;
            v.pointer("/config/config_hash").and_then(|h| h.as_str()).map(str::to_string)
        }
        _ => text_hash(&String::from_utf8_lossy(&bytes)),
    })
}

fn check_hash(path: &Path, found: Option<String>, expected: &str, force: bool) -> Result<()> {
    if found.as_deref() == Some(expected) {
        return Ok(());
    }
    let found = found.unwrap_or_else(|| "<none>".into());
    if force {
        log::warn!("{}: config hash {found} differs from {expected}, continuing", path.display());
        return Ok(());
    }
    Err(PipelineError::HashMismatch { path: path.display().to_string(), found, expected: expected.into() })
}

// ---------------------------------------------------------------------------
// Output handling: nothing half-written survives a failure.

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    let res = fs::write(&tmp, bytes).and_then(|_| fs::rename(&tmp, path));
    if res.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(res?)
}

/// A sibling directory that replaces `dest` on commit and is deleted if
/// dropped uncommitted.
struct Staging {
    dir: PathBuf,
    committed: bool,
}

impl Staging {
    fn new(dest: &Path) -> Result<Self> {
        let parent = dest.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        fs::create_dir_all(parent)?;
        let name = dest.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into());
        let dir = parent.join(format!(".{name}.staging"));
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        fs::create_dir_all(&dir)?;
        Ok(Staging { dir, committed: false })
    }

    fn path(&self) -> &Path {
        &self.dir
    }

    fn commit(mut self, dest: &Path) -> Result<()> {
        if dest.exists() {
            fs::remove_dir_all(dest)?;
        }
        fs::rename(&self.dir, dest)?;
        self.committed = true;
        Ok(())
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.dir);
        }
    }
}

/// Refuses to replace a directory that was not produced by us.
fn ensure_replaceable(dest: &Path, marker: &str) -> Result<()> {
    if dest.exists() && !dest.join(marker).exists() && fs::read_dir(dest)?.next().is_some() {
        return Err(PipelineError::Invalid(format!(
            "output directory {} exists and does not look like a previous output (no {marker})",
            dest.display()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Corpus.

#[derive(Clone, Debug, Serialize)]
pub struct CorpusSummary {
    pub config_hash: String,
    pub utterances: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    pub manifests: Vec<PathBuf>,
}

/// Generates the synthetic corpus and its transcript-disjoint splits under
/// `<root>/corpus`.
pub fn gen_corpus(cfg: &PipelineConfig, layout: &Layout) -> Result<CorpusSummary> {
    cfg.validate()?;
    let hash = cfg.hash();
    let dest = layout.corpus_dir();
    ensure_replaceable(&dest, "corpus.train")?;
    let utts = generate_corpus(&cfg.corpus, cfg.seed)?;
    let groups: Vec<String> = utts.iter().map(|u| u.transcript_group.clone()).collect();
    let assignment = assign_groups(&groups, cfg.split.ratios, derive_seed(cfg.seed, 1))?;
    let split = partition_by_group(&utts, |u| u.transcript_group.as_str(), &assignment);
    let staging = Staging::new(&dest)?;
    let comment = hash_comment(&hash);
    write_manifest(staging.path(), "corpus.all", &utts, Some(&comment))?;
    write_splits(staging.path(), "corpus", &split, Some(&comment))?;
    fs::write(staging.path().join("config.toml"), stamp_text(&hash, &cfg.to_toml()))?;
    staging.commit(&dest)?;
    Ok(CorpusSummary {
        config_hash: hash,
        utterances: utts.len(),
        train: split.train.len(),
        valid: split.valid.len(),
        test: split.test.len(),
        manifests: ["train", "valid", "test"].iter().map(|s| layout.manifest(s)).collect(),
    })
}

/// Loads one split, checking that it was generated by this config.
pub fn load_split(cfg: &PipelineConfig, layout: &Layout, split: &str, force: bool) -> Result<Vec<Utterance>> {
    let path = layout.manifest(split);
    if !path.exists() {
        return Err(PipelineError::Missing {
            what: format!("{split} manifest (run gen-corpus first)"),
            path: path.display().to_string(),
        });
    }
    check_hash(&path, artifact_hash(&path)?, &cfg.hash(), force)?;
    Ok(load_manifest(&path)?.utterances)
}

// ---------------------------------------------------------------------------
// Training.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Translator,
    Duration,
    F0,
    All,
}

impl std::str::FromStr for Stage {
    type Err = PipelineError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "translator" => Ok(Stage::Translator),
            "duration" => Ok(Stage::Duration),
            "f0" => Ok(Stage::F0),
            "all" => Ok(Stage::All),
            other => Err(PipelineError::Invalid(format!("unknown stage {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct StageReport {
    pub stage: String,
    pub checkpoint: PathBuf,
    pub epochs: usize,
    pub steps: u64,
    pub best_validation: Option<f64>,
}

impl StageReport {
    fn new(stage: impl Into<String>, checkpoint: PathBuf, h: Option<&TrainHistory>) -> Self {
        StageReport {
            stage: stage.into(),
            checkpoint,
            epochs: h.map_or(0, |h| h.epochs.len()),
            steps: h.map_or(0, |h| h.steps),
            best_validation: h.map(|h| h.best_validation),
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct TrainOptions {
    /// Denoising pretraining before fine-tuning (also enabled by the config).
    pub pretrain: bool,
    pub force: bool,
}

fn seeded(t: &TrainConfig, seed: u64) -> TrainConfig {
    TrainConfig { seed, ..t.clone() }
}

fn pair_examples(utts: &[Utterance]) -> Vec<PairExample> {
    make_parallel_pairs(utts)
        .iter()
        .map(|p| PairExample { source: dedup(&p.source.units).0, target: dedup(&p.target.units).0, target_emotion: p.target.emotion })
        .filter(|p| !p.source.is_empty())
        .collect()
}

/// Evenly spaced subset of at most `n` items.
fn thin<T: Clone>(items: Vec<T>, n: usize) -> Vec<T> {
    if items.len() <= n {
        return items;
    }
    (0..n).map(|i| items[i * items.len() / n].clone()).collect()
}

pub fn train_translator_stage(cfg: &PipelineConfig, layout: &Layout, opts: TrainOptions) -> Result<Vec<StageReport>> {
    let train = load_split(cfg, layout, "train", opts.force)?;
    let valid = load_split(cfg, layout, "valid", opts.force)?;
    let mut model = TranslatorModel::new(cfg.translator.model.clone(), derive_seed(cfg.seed, 10))?;
    let mut reports = Vec::new();
    let path = layout.translator_checkpoint();
    if opts.pretrain || cfg.translator.pretrain {
        let seqs = |u: &[Utterance]| -> Vec<DedupedUnits> { u.iter().map(|u| dedup(&u.units).0).collect() };
        let h = pretrain_denoise(
            &mut model,
            &seqs(&train),
            &seqs(&valid),
            &cfg.translator.noise,
            &seeded(&cfg.training.pretrain, derive_seed(cfg.seed, 11)),
        )?;
        log::info!("pretraining: {} epochs, best validation {:.4}", h.epochs.len(), h.best_validation);
        reports.push(StageReport::new("pretrain", path.clone(), Some(&h)));
    }
    let train_pairs = pair_examples(&train);
    let valid_pairs = thin(pair_examples(&valid), MAX_VALID_PAIRS);
    log::info!("translator: {} training pairs, {} validation pairs", train_pairs.len(), valid_pairs.len());
    let h = finetune_pairs(&mut model, &train_pairs, &valid_pairs, &seeded(&cfg.training.translator, derive_seed(cfg.seed, 12)))?;
    write_atomic(&path, &stamp_checkpoint(&encode_translator(&model)?, &cfg.hash())?)?;
    reports.push(StageReport::new("translator", path, Some(&h)));
    Ok(reports)
}

/// One duration model per emotion, each trained on that emotion's
/// utterances only.
pub fn train_duration_stage(cfg: &PipelineConfig, layout: &Layout, opts: TrainOptions) -> Result<Vec<StageReport>> {
    let train = load_split(cfg, layout, "train", opts.force)?;
    let valid = load_split(cfg, layout, "valid", opts.force)?;
    let mut reports = Vec::new();
    for (k, emotion) in cfg.corpus.all_emotions().into_iter().enumerate() {
        let tr = duration_data(train.iter().filter(|u| u.emotion == emotion));
        let va = duration_data(valid.iter().filter(|u| u.emotion == emotion));
        let path = layout.duration_checkpoint(emotion);
        let (model, history) = match cfg.duration.variant {
            DurationVariant::Cnn => {
                let tcfg = seeded(&cfg.training.duration, derive_seed(cfg.seed, 20 + k as u64));
                let (m, h) = train_duration_cnn(&tr, &va, cfg.duration.cnn.clone(), &tcfg)?;
                (DurationModel::Cnn(m), Some(h))
            }
            DurationVariant::Ngram => (DurationModel::Ngram(train_ngram(&tr, cfg.duration.ngram_order)?), None),
        };
        write_atomic(&path, &stamp_checkpoint(&encode_duration(&model)?, &cfg.hash())?)?;
        reports.push(StageReport::new(format!("duration/{emotion}"), path, history.as_ref()));
    }
    Ok(reports)
}

pub fn train_f0_stage(cfg: &PipelineConfig, layout: &Layout, opts: TrainOptions) -> Result<Vec<StageReport>> {
    let train = load_split(cfg, layout, "train", opts.force)?;
    let valid = load_split(cfg, layout, "valid", opts.force)?;
    let f = &cfg.f0;
    let bins = fit_bins(&train, f.strategy, f.bins, f.normalization)?;
    let tr = f0_examples(&train, &bins, f.blur_sigma)?;
    let va = f0_examples(&valid, &bins, f.blur_sigma)?;
    let model_cfg = crate::prosody::F0ModelConfig { select_rule: f.decode_rule, ..f.model.clone() };
    let (model, h) = train_f0(&tr, &va, model_cfg, bins, &seeded(&cfg.training.f0, derive_seed(cfg.seed, 30)))?;
    let path = layout.f0_checkpoint();
    write_atomic(&path, &stamp_checkpoint(&encode_f0_model(&model)?, &cfg.hash())?)?;
    Ok(vec![StageReport::new("f0", path, Some(&h))])
}

pub fn train(cfg: &PipelineConfig, layout: &Layout, stage: Stage, opts: TrainOptions) -> Result<Vec<StageReport>> {
    cfg.validate()?;
    let mut out = Vec::new();
    if matches!(stage, Stage::Translator | Stage::All) {
        out.extend(train_translator_stage(cfg, layout, opts)?);
    }
    if matches!(stage, Stage::Duration | Stage::All) {
        out.extend(train_duration_stage(cfg, layout, opts)?);
    }
    if matches!(stage, Stage::F0 | Stage::All) {
        out.extend(train_f0_stage(cfg, layout, opts)?);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Loading trained models.

fn read_stamped(path: &Path, what: &str, hash: &str, force: bool) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(PipelineError::Missing {
            what: format!("{what} checkpoint (run train first)"),
            path: path.display().to_string(),
        });
    }
    let bytes = fs::read(path)?;
    check_hash(path, checkpoint_hash(&bytes)?, hash, force)?;
    Ok(bytes)
}

/// Trained models of one working directory.
pub struct Models {
    pub translator: TranslatorModel,
    pub durations: PerEmotionDurations,
    pub f0: F0Model,
}

pub fn load_models(cfg: &PipelineConfig, layout: &Layout, force: bool) -> Result<Models> {
    let hash = cfg.hash();
    let translator = decode_translator(&read_stamped(&layout.translator_checkpoint(), "translator", &hash, force)?)?;
    let mut durations = BTreeMap::new();
    for e in cfg.corpus.all_emotions() {
        let bytes = read_stamped(&layout.duration_checkpoint(e), &format!("{e} duration"), &hash, force)?;
        durations.insert(e, decode_duration(&bytes)?);
    }
    let f0 = decode_f0_model(&read_stamped(&layout.f0_checkpoint(), "F0", &hash, force)?)?;
    Ok(Models { translator, durations: PerEmotionDurations(durations), f0 })
}

/// Duration models keyed by the emotion they were trained on.
pub struct PerEmotionDurations(pub BTreeMap<Emotion, DurationModel>);

impl PerEmotionDurations {
    pub fn get(&self, e: Emotion) -> Result<&DurationModel> {
        self.0.get(&e).ok_or_else(|| PipelineError::Invalid(format!("no duration model for emotion {e}")))
    }
}

impl DurationSystem for PerEmotionDurations {
    fn durations(&self, units: &DedupedUnits, pair: &EvalPair, seed: u64) -> Result<Durations, EvalError> {
        let model = self
            .0
            .get(&pair.target_emotion)
            .ok_or_else(|| EvalError::Mismatch(format!("no duration model for emotion {}", pair.target_emotion)))?;
        Ok(predict_durations(model, units, Some(seed))?)
    }
}

// ---------------------------------------------------------------------------
// Conversion and synthesis.

const CONVERTED_MANIFEST: &str = "converted.tsv";
const SYNTH_MANIFEST: &str = "synth.tsv";

/// One converted utterance: translated units, their durations, and the
/// frame-rate F0 under the target emotion.
#[derive(Clone, Debug, PartialEq)]
pub struct Converted {
    pub id: String,
    pub speaker: SpeakerId,
    pub emotion: Emotion,
    pub transcript_group: String,
    pub units: DedupedUnits,
    pub durations: Durations,
    pub f0: ProsodyTrack,
}

impl Converted {
    pub fn frames(&self) -> Result<UnitSequence, UnitsError> {
        Ok(UnitSequence::new(inflate_ids(self.units.as_slice(), self.durations.as_slice())?))
    }
}

/// Translates, predicts durations, inflates and predicts F0 for a batch of
/// utterances; the source speaker is kept.
pub fn convert_utterances(models: &Models, cfg: &PipelineConfig, utts: &[Utterance], target: Emotion) -> Result<Vec<Converted>> {
    let sources: Vec<DedupedUnits> = utts.iter().map(|u| dedup(&u.units).0).collect();
    let batch: Vec<(&DedupedUnits, Emotion)> = sources.iter().map(|s| (s, target)).collect();
    let translated = translate_batch(&models.translator, &batch)?;
    let dur_model = models.durations.get(target)?;
    let mut durations = Vec::with_capacity(utts.len());
    let mut frames = Vec::with_capacity(utts.len());
    for (i, units) in translated.iter().enumerate() {
        let d = if units.is_empty() {
            Durations::new(Vec::new())?
        } else {
            predict_durations(dur_model, units, Some(derive_seed(cfg.seed ^ 0xC0, i as u64)))?
        };
        frames.push(inflate_ids(units.as_slice(), d.as_slice())?);
        durations.push(d);
    }
    let mut f0 = vec![Vec::new(); utts.len()];
    let nonempty: Vec<usize> = (0..utts.len()).filter(|&i| !frames[i].is_empty()).collect();
    for chunk in nonempty.chunks(32) {
        let batch: Vec<(&[u32], Emotion, SpeakerId)> = chunk.iter().map(|&i| (frames[i].as_slice(), target, utts[i].speaker)).collect();
        for (&i, track) in chunk.iter().zip(models.f0.predict_batch(&batch, cfg.f0.decode_rule)?) {
            f0[i] = track;
        }
    }
    utts.iter()
        .zip(translated)
        .zip(durations)
        .zip(f0)
        .map(|(((u, units), durations), f0)| {
            Ok(Converted {
                id: u.id.clone(),
                speaker: u.speaker,
                emotion: target,
                transcript_group: u.transcript_group.clone(),
                units,
                durations,
                f0: ProsodyTrack::new(f0)?,
            })
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvertSummary {
    pub manifest: PathBuf,
    pub utterances: usize,
    pub emotion: Emotion,
}

/// Converts every utterance of `input` to `target` and writes per-utterance
/// `.units` (deduped), `.dur` and `.f0` files plus `converted.tsv` into `out`.
pub fn convert(
    cfg: &PipelineConfig,
    layout: &Layout,
    input: &Path,
    target: Emotion,
    out: &Path,
    force: bool,
) -> Result<ConvertSummary> {
    cfg.validate()?;
    if !cfg.corpus.all_emotions().contains(&target) {
        return Err(PipelineError::Invalid(format!("emotion {target} is not configured")));
    }
    if !input.exists() {
        return Err(PipelineError::Missing { what: "input manifest".into(), path: input.display().to_string() });
    }
    ensure_replaceable(out, CONVERTED_MANIFEST)?;
    let models = load_models(cfg, layout, force)?;
    let utts = load_manifest(input)?.utterances;
    let converted = convert_utterances(&models, cfg, &utts, target)?;
    let hash = cfg.hash();
    let staging = Staging::new(out)?;
    for sub in ["units", "dur", "f0"] {
        fs::create_dir_all(staging.path().join(sub))?;
    }
    let mut manifest = stamp_text(&hash, "# utt_id\tspeaker\temotion\ttranscript_group\tunits_path\tdurations_path\tf0_path\n");
    for c in &converted {
        fs::write(staging.path().join(format!("units/{}.units", c.id)), stamp_text(&hash, &format_units(c.units.as_slice())))?;
        fs::write(staging.path().join(format!("dur/{}.dur", c.id)), stamp_text(&hash, &format_units(c.durations.as_slice())))?;
        fs::write(staging.path().join(format!("f0/{}.f0", c.id)), stamp_text(&hash, &format_f0(&c.f0)))?;
        let _ = writeln!(
            manifest,
            "{}\t{}\t{}\t{}\tunits/{}.units\tdur/{}.dur\tf0/{}.f0",
            c.id, c.speaker, c.emotion, c.transcript_group, c.id, c.id, c.id
        );
    }
    fs::write(staging.path().join(CONVERTED_MANIFEST), manifest)?;
    staging.commit(out)?;
    Ok(ConvertSummary { manifest: out.join(CONVERTED_MANIFEST), utterances: converted.len(), emotion: target })
}

/// Reads a `converted.tsv` and the files it references.
pub fn load_converted(path: &Path) -> Result<Vec<Converted>> {
    let text = fs::read_to_string(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let bad = |line: usize, msg: String| PipelineError::Invalid(format!("{}:{line}: {msg}", path.display()));
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() || raw.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = raw.split('\t').collect();
        if f.len() != 7 {
            return Err(bad(i + 1, format!("expected 7 tab-separated fields, found {}", f.len())));
        }
        let speaker = f[1].parse().map_err(|_| bad(i + 1, format!("bad speaker {:?}", f[1])))?;
        let emotion: Emotion = f[2].parse().map_err(|e| bad(i + 1, format!("{e}")))?;
        let units = DedupedUnits::new(parse_units(&fs::read_to_string(base.join(f[4]))?, None)?.into_inner())?;
        let durations = Durations::new(parse_units(&fs::read_to_string(base.join(f[5]))?, None)?.into_inner())?;
        let f0 = read_f0(base.join(f[6]))?;
        if units.len() != durations.len() {
            return Err(bad(i + 1, format!("{} units but {} durations", units.len(), durations.len())));
        }
        if durations.total_frames() != f0.len() {
            return Err(bad(i + 1, format!("durations cover {} frames but F0 has {}", durations.total_frames(), f0.len())));
        }
        out.push(Converted {
            id: f[0].to_string(),
            speaker,
            emotion,
            transcript_group: f[3].to_string(),
            units,
            durations,
            f0,
        });
    }
    Ok(out)
}

pub fn timbre_table(cfg: &PipelineConfig) -> TimbreTable {
    TimbreTable::generate(cfg.corpus.speakers.len(), cfg.corpus.vocab_size as usize, derive_seed(cfg.seed, 40))
}

#[derive(Clone, Debug, Serialize)]
pub struct SynthSummary {
    pub dir: PathBuf,
    pub files: usize,
    pub samples: usize,
}

/// Renders every entry of a converted manifest to `<out>/<id>.wav`.
pub fn synth(cfg: &PipelineConfig, converted: &Path, out: &Path, force: bool) -> Result<SynthSummary> {
    cfg.validate()?;
    if !converted.exists() {
        return Err(PipelineError::Missing { what: "converted manifest (run convert first)".into(), path: converted.display().to_string() });
    }
    let hash = cfg.hash();
    check_hash(converted, artifact_hash(converted)?, &hash, force)?;
    ensure_replaceable(out, SYNTH_MANIFEST)?;
    let items = load_converted(converted)?;
    let timbre = timbre_table(cfg);
    let staging = Staging::new(out)?;
    let mut manifest = stamp_text(&hash, "# utt_id\tspeaker\temotion\taudio_path\n");
    let mut samples = 0;
    for c in &items {
        let wav = synthesize(&c.frames()?, &c.f0, c.speaker, c.emotion, &timbre)?;
        samples += wav.len();
        fs::write(staging.path().join(format!("{}.wav", c.id)), encode_wav_tagged(&wav, Some(&hash_comment(&hash))))?;
        let _ = writeln!(manifest, "{}\t{}\t{}\t{}.wav", c.id, c.speaker, c.emotion, c.id);
    }
    fs::write(staging.path().join(SYNTH_MANIFEST), manifest)?;
    staging.commit(out)?;
    Ok(SynthSummary { dir: out.to_path_buf(), files: items.len(), samples })
}

// ---------------------------------------------------------------------------
// Evaluation.

#[derive(Clone, Copy, Debug, Default)]
pub struct EvalOptions {
    pub force: bool,
    /// Also train and score the 12 F0 binning/decoding configurations.
    pub f0_grid: bool,
}

pub fn eval_config(cfg: &PipelineConfig, f0: &F0Model) -> EvalConfig {
    EvalConfig {
        seed: derive_seed(cfg.seed, 50),
        bleu_max_n: cfg.evaluation.bleu_max_n.unwrap_or(4),
        reserved: cfg.corpus.content_units..cfg.corpus.vocab_size,
        vocab_size: cfg.corpus.vocab_size,
        bins: Some(f0.bins.clone()),
    }
}

/// Scores the trained models on every ordered pair of the test split and
/// writes `report.json`, `report.tsv` and `subjective.tsv` to `<root>/eval`.
pub fn evaluate(cfg: &PipelineConfig, layout: &Layout, opts: EvalOptions) -> Result<EvalReport> {
    cfg.validate()?;
    let test = load_split(cfg, layout, "test", opts.force)?;
    let models = load_models(cfg, layout, opts.force)?;
    let pairs: Vec<EvalPair> = make_parallel_pairs(&test).iter().map(EvalPair::from_pair).collect();
    let hash = cfg.hash();
    let echo = serde_json::json!({ HASH_KEY: hash, "config": cfg });
    let f0 = DecodedF0 { model: &models.f0, rule: cfg.f0.decode_rule };
    let report = evaluate_pipeline(&models.translator, &models.durations, &f0, &pairs, &eval_config(cfg, &models.f0), echo)?;
    let dest = layout.eval_dir();
    let staging = Staging::new(&dest)?;
    fs::write(staging.path().join("report.json"), report.to_json()?)?;
    fs::write(staging.path().join("report.tsv"), stamp_text(&hash, &report.to_tsv()))?;
    fs::write(
        staging.path().join("subjective.tsv"),
        stamp_text(&hash, &report.subjective_manifest("audio", &cfg.corpus.all_emotions())),
    )?;
    if opts.f0_grid {
        let train = load_split(cfg, layout, "train", opts.force)?;
        let valid = load_split(cfg, layout, "valid", opts.force)?;
        let rows = f0_grid(
            &train,
            &valid,
            &test,
            cfg.f0.bins,
            cfg.f0.blur_sigma,
            &cfg.f0.model,
            &seeded(&cfg.training.f0, derive_seed(cfg.seed, 30)),
        )?;
        fs::write(staging.path().join("f0_grid.tsv"), stamp_text(&hash, &f0_grid_tsv(&rows)))?;
    }
    staging.commit(&dest)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_hash_reads_leading_comments() {
        assert_eq!(text_hash("# config_hash ab12\n1 2 3\n").as_deref(), Some("ab12"));
        assert_eq!(text_hash("# other\n# config_hash ff\nx"), Some("ff".into()));
        assert_eq!(text_hash("1 2\n# config_hash ff\n"), None);
    }

    #[test]
    fn checkpoint_stamp_survives_decoding() {
        let model = DurationModel::Ngram(train_ngram(&[(DedupedUnits::collapse(vec![1, 2, 3]), Durations::new(vec![1, 2, 3]).unwrap())], 2).unwrap());
        let bytes = stamp_checkpoint(&encode_duration(&model).unwrap(), "cafe").unwrap();
        assert_eq!(checkpoint_hash(&bytes).unwrap().as_deref(), Some("cafe"));
        assert_eq!(decode_duration(&bytes).unwrap(), model);
    }

    #[test]
    fn missing_manifest_is_a_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PipelineConfig::with_seed(1);
        let err = train(&cfg, &Layout::new(dir.path()), Stage::F0, TrainOptions::default()).unwrap_err();
        assert!(err.is_validation());
        assert!(err.to_string().contains("corpus.train"), "{err}");
    }

    #[test]
    fn staging_is_removed_on_drop() {
        let dir = tempfile::tempdir().unwrap();
        let dest = dir.path().join("out");
        {
            let s = Staging::new(&dest).unwrap();
            fs::write(s.path().join("x"), "1").unwrap();
        }
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
        let s = Staging::new(&dest).unwrap();
        fs::write(s.path().join("x"), "1").unwrap();
        s.commit(&dest).unwrap();
        assert!(dest.join("x").exists());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn foreign_directories_are_not_replaced() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("keep.txt"), "x").unwrap();
        assert!(ensure_replaceable(dir.path(), CONVERTED_MANIFEST).is_err());
        assert!(ensure_replaceable(&dir.path().join("new"), CONVERTED_MANIFEST).is_ok());
    }
}
