//! Checkpoint headers for the duration and F0 models.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::bins::BinSpec;
use super::duration::{DurationCnn, DurationCnnConfig, DurationModel, NgramModel};
use super::f0::{F0Model, F0ModelConfig};
use super::ProsodyError;
use crate::nn::{decode_checkpoint, encode_checkpoint, read_checkpoint, Checkpoint, ParamStore};

pub const KIND_DURATION_CNN: &str = "duration_cnn";
pub const KIND_DURATION_NGRAM: &str = "duration_ngram";
pub const KIND_F0: &str = "f0";

#[derive(Serialize, Deserialize)]
struct CnnHeader {
    model_kind: String,
    config: DurationCnnConfig,
}

#[derive(Serialize, Deserialize)]
struct NgramHeader {
    model_kind: String,
    table: NgramModel,
}

#[derive(Serialize, Deserialize)]
struct F0Header {
    model_kind: String,
    config: F0ModelConfig,
    bins: BinSpec,
}

fn expect_kind(ck: &Checkpoint, kinds: &[&str]) -> Result<String, ProsodyError> {
    match ck.model_kind() {
        Some(k) if kinds.contains(&k) => Ok(k.to_string()),
        other => Err(ProsodyError::Checkpoint(format!("expected model kind {kinds:?}, found {other:?}"))),
    }
}

pub fn encode_duration(model: &DurationModel) -> Result<Vec<u8>, ProsodyError> {
    Ok(match model {
        DurationModel::Cnn(m) => encode_checkpoint(
            &CnnHeader { model_kind: KIND_DURATION_CNN.into(), config: m.config.clone() },
            &m.params,
        )?,
        DurationModel::Ngram(m) => encode_checkpoint(
            &NgramHeader { model_kind: KIND_DURATION_NGRAM.into(), table: m.clone() },
            &ParamStore::new(),
        )?,
    })
}

fn duration_from(ck: Checkpoint) -> Result<DurationModel, ProsodyError> {
    if expect_kind(&ck, &[KIND_DURATION_CNN, KIND_DURATION_NGRAM])? == KIND_DURATION_NGRAM {
        return Ok(DurationModel::Ngram(ck.header_as::<NgramHeader>()?.table));
    }
    let header: CnnHeader = ck.header_as()?;
    let mut model = DurationCnn::new(header.config, 0);
    model.params.load_from(&ck.params)?;
    Ok(DurationModel::Cnn(model))
}

pub fn decode_duration(bytes: &[u8]) -> Result<DurationModel, ProsodyError> {
    duration_from(decode_checkpoint(bytes)?)
}

pub fn encode_f0_model(model: &F0Model) -> Result<Vec<u8>, ProsodyError> {
    let header = F0Header { model_kind: KIND_F0.into(), config: model.config.clone(), bins: model.bins.clone() };
    Ok(encode_checkpoint(&header, &model.params)?)
}

fn f0_from(ck: Checkpoint) -> Result<F0Model, ProsodyError> {
    expect_kind(&ck, &[KIND_F0])?;
    let header: F0Header = ck.header_as()?;
    header.bins.validate()?;
    let mut model = F0Model::new(header.config, header.bins, 0);
    model.params.load_from(&ck.params)?;
    Ok(model)
}

pub fn decode_f0_model(bytes: &[u8]) -> Result<F0Model, ProsodyError> {
    f0_from(decode_checkpoint(bytes)?)
}

pub fn save_duration(model: &DurationModel, path: impl AsRef<Path>) -> Result<(), ProsodyError> {
    Ok(std::fs::write(path, encode_duration(model)?)?)
}

pub fn load_duration(path: impl AsRef<Path>) -> Result<DurationModel, ProsodyError> {
    duration_from(read_checkpoint(path)?)
}

pub fn save_f0_model(model: &F0Model, path: impl AsRef<Path>) -> Result<(), ProsodyError> {
    Ok(std::fs::write(path, encode_f0_model(model)?)?)
}

pub fn load_f0_model(path: impl AsRef<Path>) -> Result<F0Model, ProsodyError> {
    f0_from(read_checkpoint(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prosody::{make_bins, train_ngram, Normalization, SpeakerStats, BinStrategy};
    use crate::units::{DedupedUnits, Durations};
    use std::collections::BTreeMap;

    #[test]
    fn duration_round_trips() {
        let cnn = DurationModel::Cnn(DurationCnn::new(DurationCnnConfig { vocab: 8, embed_dim: 4, channels: 6, ..Default::default() }, 3));
        assert_eq!(decode_duration(&encode_duration(&cnn).unwrap()).unwrap(), cnn);
        let data = vec![(DedupedUnits::new(vec![1, 2, 3]).unwrap(), Durations::new(vec![2, 3, 4]).unwrap())];
        let ngram = DurationModel::Ngram(train_ngram(&data, 3).unwrap());
        let bytes = encode_duration(&ngram).unwrap();
        assert_eq!(decode_duration(&bytes).unwrap(), ngram);
        assert_eq!(encode_duration(&decode_duration(&bytes).unwrap()).unwrap(), bytes);
    }

    #[test]
    fn f0_round_trip_and_kind_check() {
        let mut stats = BTreeMap::new();
        stats.insert(0, SpeakerStats { mean: 100.0, std: 10.0 });
        let vals: Vec<f64> = (0..40).map(|i| i as f64 / 10.0).collect();
        let bins = make_bins(&vals, BinStrategy::Adaptive, 4, Normalization::MeanStd, stats).unwrap();
        let cfg = F0ModelConfig { vocab: 8, unit_dim: 4, emotion_dim: 2, channels: 4, layers: 2, ..Default::default() };
        let m = F0Model::new(cfg, bins, 1);
        let bytes = encode_f0_model(&m).unwrap();
        assert_eq!(decode_f0_model(&bytes).unwrap(), m);
        assert!(decode_duration(&bytes).is_err());
    }
}
