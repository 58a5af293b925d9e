//! Translator checkpoints: config, scheme and vocabulary table in the header.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{TranslatorConfig, TranslatorModel};
use super::{Scheme, TranslatorError};
use crate::emotion::Emotion;
use crate::nn::{decode_checkpoint, encode_checkpoint, read_checkpoint, Checkpoint};

pub const KIND_TRANSLATOR: &str = "translator";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VocabTable {
    pub content: u32,
    pub pad: u32,
    pub bos: u32,
    pub eos: u32,
    pub mask: u32,
    pub emotion_tokens: BTreeMap<Emotion, u32>,
    pub total: u32,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model_kind: String,
    scheme: Scheme,
    trained: bool,
    config: TranslatorConfig,
    vocab: VocabTable,
}

pub fn vocab_table(config: &TranslatorConfig) -> VocabTable {
    let v = config.vocab();
    VocabTable {
        content: v.size(),
        pad: v.pad(),
        bos: v.bos(),
        eos: v.eos(),
        mask: v.mask(),
        emotion_tokens: Emotion::ALL.iter().map(|&e| (e, v.emotion_token(e))).collect(),
        total: v.total(),
    }
}

pub fn encode_translator(model: &TranslatorModel) -> Result<Vec<u8>, TranslatorError> {
    let header = Header {
        model_kind: KIND_TRANSLATOR.into(),
        scheme: model.config.scheme,
        trained: model.trained,
        config: model.config.clone(),
        vocab: vocab_table(&model.config),
    };
    Ok(encode_checkpoint(&header, &model.params)?)
}

fn from_checkpoint(ck: Checkpoint) -> Result<TranslatorModel, TranslatorError> {
    if ck.model_kind() != Some(KIND_TRANSLATOR) {
        return Err(TranslatorError::Checkpoint(format!("expected a translator checkpoint, found {:?}", ck.model_kind())));
    }
    let header: Header = ck.header_as()?;
    if header.scheme != header.config.scheme || header.vocab != vocab_table(&header.config) {
        return Err(TranslatorError::Checkpoint("header vocabulary or scheme is inconsistent".into()));
    }
    let mut model = TranslatorModel::new(header.config, 0)?;
    model.params.load_from(&ck.params)?;
    model.trained = header.trained;
    Ok(model)
}

pub fn decode_translator(bytes: &[u8]) -> Result<TranslatorModel, TranslatorError> {
    from_checkpoint(decode_checkpoint(bytes)?)
}

pub fn save_translator(model: &TranslatorModel, path: impl AsRef<Path>) -> Result<(), TranslatorError> {
    Ok(std::fs::write(path, encode_translator(model)?)?)
}

pub fn load_translator(path: impl AsRef<Path>) -> Result<TranslatorModel, TranslatorError> {
    from_checkpoint(read_checkpoint(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_every_scheme() {
        for scheme in Scheme::ALL {
            let cfg = TranslatorConfig { scheme, dim: 8, ffn: 8, layers: 1, ..Default::default() };
            let mut m = TranslatorModel::new(cfg, 2).unwrap();
            m.trained = true;
            let bytes = encode_translator(&m).unwrap();
            let back = decode_translator(&bytes).unwrap();
            assert_eq!(back, m);
            assert_eq!(encode_translator(&back).unwrap(), bytes);
        }
    }
}
