//! Greedy and beam decoding.

use std::collections::BTreeMap;

use super::model::TranslatorModel;
use super::TranslatorError;
use crate::emotion::Emotion;
use crate::nn::{Graph, Segments, Tensor};
use crate::units::DedupedUnits;

pub const DEFAULT_BEAM: usize = 1;

/// Output length cap for a source of `n` units.
pub fn length_cap(n: usize) -> usize {
    2 * n + 32
}

/// Mean over positions of the token cross-entropy of `logits` rows.
pub fn seq_ce_loss(logits: &[Vec<f64>], target: &[u32]) -> Result<f64, TranslatorError> {
    if logits.len() != target.len() || target.is_empty() {
        return Err(TranslatorError::LengthMismatch(logits.len(), target.len()));
    }
    let mut total = 0.0;
    for (row, &t) in logits.iter().zip(target) {
        let t = t as usize;
        if t >= row.len() {
            return Err(TranslatorError::Config(format!("target {t} outside {} classes", row.len())));
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        total += lse - row[t];
    }
    Ok(total / target.len() as f64)
}

fn log_softmax(row: &[f32]) -> Vec<f64> {
    let max = row.iter().map(|&z| z as f64).fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|&z| (z as f64 - max).exp()).sum::<f64>().ln();
    row.iter().map(|&z| z as f64 - lse).collect()
}

/// Keeps content units up to the first EOS and collapses repeats.
fn finish(model: &TranslatorModel, tokens: &[u32]) -> DedupedUnits {
    let v = model.vocab();
    DedupedUnits::collapse(tokens.iter().copied().take_while(|&t| t != v.eos()).filter(|&t| v.is_content(t)).collect())
}

/// Repeats memory rows of selected sources, one copy per hypothesis.
fn gather_rows(memory: &Tensor<f32>, segs: &Segments, picks: &[usize]) -> (Tensor<f32>, Segments) {
    let d = memory.cols();
    let mut data = Vec::new();
    for &p in picks {
        let (s, l) = segs.get(p);
        data.extend_from_slice(&memory.data()[s * d..(s + l) * d]);
    }
    let rows = data.len() / d;
    let lens: Vec<usize> = picks.iter().map(|&p| segs.get(p).1).collect();
    (Tensor::new(vec![rows, d], data).expect("rows times width"), Segments::from_lengths(lens))
}

/// Last-position log-probabilities for each hypothesis.
fn step_scores(
    model: &TranslatorModel,
    dec: usize,
    memory: &Tensor<f32>,
    mem_segs: &Segments,
    hyps: &[(usize, &[u32])],
) -> Result<Vec<Vec<f64>>, TranslatorError> {
    let picks: Vec<usize> = hyps.iter().map(|(src, _)| *src).collect();
    let (mem, msegs) = gather_rows(memory, mem_segs, &picks);
    let ids: Vec<u32> = hyps.iter().flat_map(|(_, t)| t.iter().copied()).collect();
    let segs = Segments::from_lengths(hyps.iter().map(|(_, t)| t.len()));
    let mut g = Graph::new(&model.params);
    let m = g.input(mem)?;
    let logits = model.net.decode(&mut g, dec, &ids, &segs, m, &msegs)?;
    let t = g.value(logits);
    Ok(segs.iter().map(|(s, l)| log_softmax(t.row(s + l - 1))).collect())
}

fn greedy(
    model: &TranslatorModel,
    dec: usize,
    start: u32,
    memory: &Tensor<f32>,
    mem_segs: &Segments,
    caps: &[usize],
) -> Result<Vec<Vec<u32>>, TranslatorError> {
    let eos = model.vocab().eos();
    let mut outs: Vec<Vec<u32>> = vec![vec![start]; caps.len()];
    let mut live: Vec<usize> = (0..caps.len()).collect();
    while !live.is_empty() {
        let hyps: Vec<(usize, &[u32])> = live.iter().map(|&i| (i, outs[i].as_slice())).collect();
        let scores = step_scores(model, dec, memory, mem_segs, &hyps)?;
        let mut next = Vec::with_capacity(live.len());
        for (&i, s) in live.iter().zip(&scores) {
            let arg = (0..s.len()).fold(0, |b, j| if s[j] > s[b] { j } else { b }) as u32;
            outs[i].push(arg);
            if arg != eos && outs[i].len() - 1 < caps[i] {
                next.push(i);
            }
        }
        live = next;
    }
    Ok(outs.into_iter().map(|mut o| {
        o.remove(0);
        o
    }).collect())
}

fn beam_one(
    model: &TranslatorModel,
    dec: usize,
    start: u32,
    memory: &Tensor<f32>,
    mem_segs: &Segments,
    src: usize,
    cap: usize,
    width: usize,
) -> Result<Vec<u32>, TranslatorError> {
    let eos = model.vocab().eos();
    let mut live: Vec<(Vec<u32>, f64)> = vec![(vec![start], 0.0)];
    let mut done: Vec<(Vec<u32>, f64)> = Vec::new();
    while !live.is_empty() && done.len() < width {
        let hyps: Vec<(usize, &[u32])> = live.iter().map(|(t, _)| (src, t.as_slice())).collect();
        let scores = step_scores(model, dec, memory, mem_segs, &hyps)?;
        let mut cand: Vec<(f64, usize, u32)> = Vec::new();
        for (h, s) in scores.iter().enumerate() {
            let mut idx: Vec<usize> = (0..s.len()).collect();
            idx.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
            cand.extend(idx.into_iter().take(width).map(|j| (live[h].1 + s[j], h, j as u32)));
        }
        cand.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
        let mut next = Vec::new();
        for (score, h, tok) in cand.into_iter().take(width) {
            let mut t = live[h].0.clone();
            t.push(tok);
            let produced = t.len() - 1;
            if tok == eos || produced >= cap {
                // length-normalised so longer outputs are not penalised
                done.push((t, score / produced as f64));
            } else {
                next.push((t, score));
            }
        }
        live = next;
    }
    let pool = if done.is_empty() {
        live.into_iter().map(|(t, s)| {
            let n = (t.len() - 1).max(1) as f64;
            (t, s / n)
        }).collect()
    } else {
        done
    };
    let best = pool.into_iter().fold(None::<(Vec<u32>, f64)>, |b, c| match b {
        Some(b) if b.1 >= c.1 => Some(b),
        _ => Some(c),
    });
    let mut t = best.map(|b| b.0).unwrap_or_default();
    t.remove(0);
    Ok(t)
}

/// Translates several sources, each to its own target emotion. Outputs
/// contain content units only, with adjacent repeats collapsed.
pub fn translate_batch(
    model: &TranslatorModel,
    batch: &[(&DedupedUnits, Emotion)],
) -> Result<Vec<DedupedUnits>, TranslatorError> {
    if !model.trained {
        return Err(TranslatorError::Untrained);
    }
    let mut groups: BTreeMap<(usize, usize, u32), Vec<usize>> = BTreeMap::new();
    for (i, (_, e)) in batch.iter().enumerate() {
        let (enc, dec) = model.stacks(Some(*e))?;
        groups.entry((enc, dec, model.start_token(Some(*e)))).or_default().push(i);
    }
    let mut out = vec![DedupedUnits::default(); batch.len()];
    for ((enc, dec, start), members) in groups {
        for chunk in members.chunks(64) {
            let inputs: Vec<Vec<u32>> =
                chunk.iter().map(|&i| model.encoder_input(batch[i].0.as_slice())).collect::<Result<_, _>>()?;
            let segs = Segments::from_lengths(inputs.iter().map(|x| x.len()));
            let ids: Vec<u32> = inputs.concat();
            let memory = {
                let mut g = Graph::new(&model.params);
                let m = model.net.encode(&mut g, enc, &ids, &segs)?;
                g.value(m).clone()
            };
            let caps: Vec<usize> = chunk.iter().map(|&i| length_cap(batch[i].0.len())).collect();
            let raw = if model.config.beam <= 1 {
                greedy(model, dec, start, &memory, &segs, &caps)?
            } else {
                (0..chunk.len())
                    .map(|k| beam_one(model, dec, start, &memory, &segs, k, caps[k], model.config.beam))
                    .collect::<Result<_, _>>()?
            };
            for (&i, r) in chunk.iter().zip(raw) {
                out[i] = finish(model, &r);
            }
        }
    }
    Ok(out)
}

pub fn translate(model: &TranslatorModel, src: &DedupedUnits, target: Emotion) -> Result<DedupedUnits, TranslatorError> {
    Ok(translate_batch(model, &[(src, target)])?.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::translator::{Scheme, TranslatorConfig};

    #[test]
    fn ce_examples() {
        let uniform = vec![vec![0.0; 64]; 3];
        assert!((seq_ce_loss(&uniform, &[1, 2, 3]).unwrap() - 64f64.ln()).abs() < 1e-12);
        let sharp = vec![vec![0.0, 60.0, 0.0]];
        assert!(seq_ce_loss(&sharp, &[1]).unwrap() < 1e-20);
        // hand softmax: rows [1,2,0] -> target 1, [0,0,3] -> target 0
        let got = seq_ce_loss(&[vec![1.0, 2.0, 0.0], vec![0.0, 0.0, 3.0]], &[1, 0]).unwrap();
        let a = -(2f64.exp() / (1f64.exp() + 2f64.exp() + 1.0)).ln();
        let b = -(1.0 / (2.0 + 3f64.exp())).ln();
        assert!((got - (a + b) / 2.0).abs() < 1e-12);
        assert!(seq_ce_loss(&uniform, &[1]).is_err());
    }

    #[test]
    fn untrained_model_refuses() {
        let cfg = TranslatorConfig { dim: 8, ffn: 8, layers: 1, ..Default::default() };
        let m = TranslatorModel::new(cfg, 0).unwrap();
        let src = DedupedUnits::new(vec![1, 2]).unwrap();
        assert!(matches!(translate(&m, &src, Emotion::Neutral), Err(TranslatorError::Untrained)));
    }

    #[test]
    fn outputs_are_filtered_and_capped() {
        for scheme in Scheme::ALL {
            for beam in [1, 3] {
                let cfg = TranslatorConfig { scheme, dim: 8, ffn: 8, layers: 1, beam, ..Default::default() };
                let mut m = TranslatorModel::new(cfg, 4).unwrap();
                m.trained = true;
                let v = m.vocab();
                let src = DedupedUnits::new(vec![3, 4, 5]).unwrap();
                let empty = DedupedUnits::default();
                let outs = translate_batch(&m, &[(&src, Emotion::Amused), (&empty, Emotion::Neutral)]).unwrap();
                for o in outs.iter().zip([3usize, 0]) {
                    assert!(o.0.len() <= length_cap(o.1));
                    assert!(o.0.as_slice().iter().all(|&u| v.is_content(u)));
                    assert!(o.0.as_slice().windows(2).all(|w| w[0] != w[1]));
                }
            }
        }
    }
}
