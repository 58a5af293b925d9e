//! Denoising pretraining and pair fine-tuning under token cross-entropy.

use std::cell::RefCell;
use std::collections::BTreeMap;

use super::model::TranslatorModel;
use super::noise::{corrupt, NoiseConfig};
use super::TranslatorError;
use crate::emotion::Emotion;
use crate::metrics::CompensatedSum;
use crate::nn::{derive_seed, fit, Graph, NnError, ParamStore, Real, Segments, TrainConfig, TrainHistory, Var};
use crate::units::DedupedUnits;

/// A source/target pair for fine-tuning, both deduped.
#[derive(Clone, Debug, PartialEq)]
pub struct PairExample {
    pub source: DedupedUnits,
    pub target: DedupedUnits,
    pub target_emotion: Emotion,
}

/// One teacher-forced item: encoder input ids, decoder stack selector and
/// clean target units.
pub(crate) struct Item<'a> {
    pub input: Vec<u32>,
    pub target: &'a [u32],
    pub emotion: Option<Emotion>,
}

/// Token-weighted mean cross-entropy of a batch, along with its token count.
///
/// Items are grouped by the stacks that serve them; decoder inputs are the
/// start token followed by the target, and the decoder predicts the target
/// followed by EOS.
pub(crate) fn batch_loss<T: Real>(
    model: &TranslatorModel,
    g: &mut Graph<'_, T>,
    items: &[Item<'_>],
) -> Result<(Var, usize), TranslatorError> {
    let eos = model.vocab().eos();
    let mut groups: BTreeMap<(usize, usize, u32), Vec<&Item<'_>>> = BTreeMap::new();
    for it in items {
        let (enc, dec) = model.stacks(it.emotion)?;
        groups.entry((enc, dec, model.start_token(it.emotion))).or_default().push(it);
    }
    let total: usize = items.iter().map(|it| it.target.len() + 1).sum();
    let mut loss: Option<Var> = None;
    for ((enc, dec, start), group) in groups {
        let src_ids: Vec<u32> = group.iter().flat_map(|it| it.input.iter().copied()).collect();
        let src_segs = Segments::from_lengths(group.iter().map(|it| it.input.len()));
        let memory = model.net.encode(g, enc, &src_ids, &src_segs)?;
        let mut dec_in = Vec::new();
        let mut dec_out = Vec::new();
        for it in &group {
            dec_in.push(start);
            dec_in.extend_from_slice(it.target);
            dec_out.extend_from_slice(it.target);
            dec_out.push(eos);
        }
        let dec_segs = Segments::from_lengths(group.iter().map(|it| it.target.len() + 1));
        let logits = model.net.decode(g, dec, &dec_in, &dec_segs, memory, &src_segs)?;
        let ce = g.cross_entropy(logits, &dec_out)?;
        let part = g.scale(ce, dec_out.len() as f64 / total as f64)?;
        loss = Some(match loss {
            Some(l) => g.add(l, part)?,
            None => part,
        });
    }
    Ok((loss.ok_or(TranslatorError::Empty)?, total))
}

/// Teacher-forced mean token cross-entropy over a dataset, no dropout.
pub(crate) fn dataset_loss(model: &TranslatorModel, items: &[Item<'_>], batch: usize) -> Result<f64, TranslatorError> {
    let mut sum = CompensatedSum::default();
    let mut tokens = 0usize;
    for chunk in items.chunks(batch.max(1)) {
        let mut g = Graph::new(&model.params);
        let (l, n) = batch_loss(model, &mut g, chunk)?;
        sum.add(g.value(l).item() as f64 * n as f64);
        tokens += n;
    }
    Ok(sum.total() / tokens.max(1) as f64)
}

fn pair_items<'a>(model: &TranslatorModel, data: &'a [PairExample]) -> Result<Vec<Item<'a>>, TranslatorError> {
    data.iter()
        .map(|p| {
            Ok(Item {
                input: model.encoder_input(p.source.as_slice())?,
                target: p.target.as_slice(),
                emotion: Some(p.target_emotion),
            })
        })
        .collect()
}

/// Mean teacher-forced cross-entropy (nats per token) of pairs.
pub fn teacher_forced_loss(model: &TranslatorModel, data: &[PairExample]) -> Result<f64, TranslatorError> {
    dataset_loss(model, &pair_items(model, data)?, 32)
}

/// Fraction of target tokens (EOS included) predicted correctly under
/// teacher forcing.
pub fn token_accuracy(model: &TranslatorModel, data: &[PairExample]) -> Result<f64, TranslatorError> {
    let items = pair_items(model, data)?;
    let eos = model.vocab().eos();
    let (mut hit, mut total) = (0usize, 0usize);
    for chunk in items.chunks(32) {
        for it in chunk {
            let (enc, dec) = model.stacks(it.emotion)?;
            let mut g = Graph::new(&model.params);
            let memory = model.net.encode(&mut g, enc, &it.input, &Segments::single(it.input.len()))?;
            let mut dec_in = vec![model.start_token(it.emotion)];
            dec_in.extend_from_slice(it.target);
            let logits = model.net.decode(
                &mut g,
                dec,
                &dec_in,
                &Segments::single(dec_in.len()),
                memory,
                &Segments::single(it.input.len()),
            )?;
            let t = g.value(logits);
            for (row, &want) in it.target.iter().chain(std::iter::once(&eos)).enumerate() {
                let r = t.row(row);
                let arg = (0..r.len()).fold(0, |b, j| if r[j] > r[b] { j } else { b });
                hit += usize::from(arg as u32 == want);
                total += 1;
            }
        }
    }
    Ok(hit as f64 / total.max(1) as f64)
}

fn run_fit<'a>(
    model: &mut TranslatorModel,
    tcfg: &TrainConfig,
    n: usize,
    make_batch: impl Fn(&TranslatorModel, &[usize], u64) -> Result<Vec<Item<'a>>, TranslatorError>,
    valid: impl Fn(&TranslatorModel) -> Result<f64, TranslatorError>,
) -> Result<TrainHistory, TranslatorError> {
    let probe_base = model.clone();
    let err: RefCell<Option<TranslatorError>> = RefCell::new(None);
    let keep = |e: TranslatorError| {
        let msg = e.to_string();
        *err.borrow_mut() = Some(e);
        NnError::Shape(msg)
    };
    let mut step = 0u64;
    let history = fit(
        &mut model.params,
        tcfg,
        n,
        |g, idx| {
            step += 1;
            let items = make_batch(&probe_base, idx, derive_seed(tcfg.seed ^ 0x5EED, step)).map_err(keep)?;
            batch_loss(&probe_base, g, &items).map(|(l, _)| l).map_err(keep)
        },
        |params: &ParamStore<f32>| {
            let probe = TranslatorModel { params: params.clone(), ..probe_base.clone() };
            valid(&probe).map_err(keep)
        },
    );
    if let Some(e) = err.into_inner() {
        return Err(e);
    }
    Ok(history?)
}

/// Trains the first encoder/decoder to reconstruct clean sequences from
/// corrupted ones, then copies those weights onto every other stack.
/// Validation uses a fixed corruption of `valid` (or of `train` if empty).
pub fn pretrain_denoise(
    model: &mut TranslatorModel,
    train: &[DedupedUnits],
    valid: &[DedupedUnits],
    noise: &NoiseConfig,
    tcfg: &TrainConfig,
) -> Result<TrainHistory, TranslatorError> {
    noise.validate()?;
    let train: Vec<&DedupedUnits> = train.iter().filter(|s| !s.is_empty()).collect();
    if train.is_empty() {
        return Err(TranslatorError::Empty);
    }
    let valid: Vec<&DedupedUnits> = if valid.is_empty() { train.clone() } else { valid.iter().collect() };
    let vocab = model.vocab();
    let fixed: Vec<Vec<u32>> = valid
        .iter()
        .enumerate()
        .map(|(i, s)| corrupt(s.as_slice(), noise, &vocab, derive_seed(tcfg.seed ^ 0xFA11, i as u64)))
        .collect();
    let fixed_items: Vec<Vec<u32>> =
        fixed.iter().map(|c| model.encoder_input(c)).collect::<Result<_, _>>()?;
    let history = run_fit(
        model,
        tcfg,
        train.len(),
        |m, idx, seed| {
            idx.iter()
                .map(|&i| {
                    let noisy = corrupt(train[i].as_slice(), noise, &vocab, derive_seed(seed, i as u64));
                    Ok(Item { input: m.encoder_input(&noisy)?, target: train[i].as_slice(), emotion: None })
                })
                .collect()
        },
        |m| {
            let items: Vec<Item<'_>> = fixed_items
                .iter()
                .zip(&valid)
                .map(|(inp, s)| Item { input: inp.clone(), target: s.as_slice(), emotion: None })
                .collect();
            dataset_loss(m, &items, 32)
        },
    )?;
    model.broadcast_first_stacks();
    model.trained = true;
    Ok(history)
}

/// Fine-tunes on translation pairs, early-stopping on validation
/// cross-entropy (`train` is reused when `valid` is empty).
pub fn finetune_pairs(
    model: &mut TranslatorModel,
    train: &[PairExample],
    valid: &[PairExample],
    tcfg: &TrainConfig,
) -> Result<TrainHistory, TranslatorError> {
    if train.is_empty() {
        return Err(TranslatorError::Empty);
    }
    for p in train.iter().chain(valid) {
        model.stacks(Some(p.target_emotion))?;
    }
    let train_items = pair_items(model, train)?;
    let valid_items = if valid.is_empty() { pair_items(model, train)? } else { pair_items(model, valid)? };
    let history = run_fit(
        model,
        tcfg,
        train.len(),
        |_, idx, _| {
            Ok(idx
                .iter()
                .map(|&i| Item { input: train_items[i].input.clone(), target: train_items[i].target, emotion: train_items[i].emotion })
                .collect())
        },
        |m| dataset_loss(m, &valid_items, 32),
    )?;
    model.trained = true;
    Ok(history)
}
