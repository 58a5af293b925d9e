//! Tab-separated manifests: `utt_id speaker emotion transcript_group units_path f0_path`.

use std::fs;
use std::path::{Path, PathBuf};

use super::{CorpusError, Split, Utterance};
use crate::dsp::io::{format_f0, read_f0};
use crate::emotion::Emotion;
use crate::units::{format_units, read_units};

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestLoad {
    pub utterances: Vec<Utterance>,
    /// Records whose unit and F0 lengths disagreed and were cut to the shorter.
    pub truncated: usize,
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Reads a manifest; relative data paths resolve against its directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<ManifestLoad, CorpusError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let err = |line: usize, msg: String| CorpusError::Manifest { path: path.display().to_string(), line, msg };
    let mut utterances = Vec::new();
    let mut truncated = 0;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() || raw.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').collect();
        if fields.len() != 6 {
            return Err(err(line, format!("expected 6 tab-separated fields, found {}", fields.len())));
        }
        let speaker: usize = fields[1].trim().parse().map_err(|_| err(line, format!("bad speaker {:?}", fields[1])))?;
        let emotion: Emotion = fields[2].parse().map_err(|e| err(line, format!("{e}")))?;
        let units_path = resolve(base, fields[4].trim());
        let f0_path = resolve(base, fields[5].trim());
        let mut units = read_units(&units_path, None).map_err(|e| err(line, format!("{}: {e}", units_path.display())))?;
        let mut f0 = read_f0(&f0_path).map_err(|e| err(line, format!("{}: {e}", f0_path.display())))?;
        if units.len() != f0.len() {
            let n = units.len().min(f0.len());
            log::warn!("{}:{line}: units {} vs F0 {} frames, truncating to {n}", path.display(), units.len(), f0.len());
            units.truncate(n);
            f0.truncate(n);
            truncated += 1;
        }
        utterances.push(Utterance::new(fields[0].trim(), speaker, emotion, fields[3].trim(), units, f0)?);
    }
    Ok(ManifestLoad { utterances, truncated })
}

fn manifest_text(utterances: &[&Utterance], header: Option<&str>) -> String {
    let mut s = header.map(|h| format!("# {h}\n")).unwrap_or_default();
    s.push_str("# utt_id\tspeaker\temotion\ttranscript_group\tunits_path\tf0_path\n");
    for u in utterances {
        s.push_str(&format!(
            "{}\t{}\t{}\t{}\tunits/{}.units\tf0/{}.f0\n",
            u.id, u.speaker, u.emotion, u.transcript_group, u.id, u.id
        ));
    }
    s
}

/// Writes `units/<id>.units`, `f0/<id>.f0` under `dir` and a manifest at
/// `dir/<name>` referencing them. A `header` becomes a leading `# ` comment
/// line in every file written.
pub fn write_manifest(
    dir: impl AsRef<Path>,
    name: &str,
    utterances: &[Utterance],
    header: Option<&str>,
) -> Result<PathBuf, CorpusError> {
    let comment = header.map(|h| format!("# {h}\n")).unwrap_or_default();
    let dir = dir.as_ref();
    fs::create_dir_all(dir.join("units"))?;
    fs::create_dir_all(dir.join("f0"))?;
    for u in utterances {
        fs::write(dir.join("units").join(format!("{}.units", u.id)), format!("{comment}{}", format_units(u.units.as_slice())))?;
        fs::write(dir.join("f0").join(format!("{}.f0", u.id)), format!("{comment}{}", format_f0(&u.prosody)))?;
    }
    let path = dir.join(name);
    fs::write(&path, manifest_text(&utterances.iter().collect::<Vec<_>>(), header))?;
    Ok(path)
}

/// Writes `<stem>.train`, `<stem>.valid`, `<stem>.test` manifests next to
/// data files already written by [`write_manifest`].
pub fn write_splits(
    dir: impl AsRef<Path>,
    stem: &str,
    split: &Split<Utterance>,
    header: Option<&str>,
) -> Result<[PathBuf; 3], CorpusError> {
    let dir = dir.as_ref();
    let mut out = Vec::new();
    for (suffix, items) in [("train", &split.train), ("valid", &split.valid), ("test", &split.test)] {
        let path = dir.join(format!("{stem}.{suffix}"));
        fs::write(&path, manifest_text(&items.iter().collect::<Vec<_>>(), header))?;
        out.push(path);
    }
    Ok([out[0].clone(), out[1].clone(), out[2].clone()])
}
