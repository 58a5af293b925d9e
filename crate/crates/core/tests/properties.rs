use std::collections::{BTreeMap, BTreeSet};

use emoconv::corpus::generate::content_ids;
use emoconv::corpus::{
    assign_groups, generate_corpus, make_parallel_pairs, partition_by_group, write_splits, CorpusConfig,
};
use emoconv::dsp::{gan_losses, mel_spectrogram, synthesize, DiscriminatorOutputs, MelConfig, TimbreTable};
use emoconv::dsp::Waveform;
use emoconv::corpus::ProsodyTrack;
use emoconv::metrics::{bleu, content_recovery, uer};
use emoconv::nn::{Graph, ParamStore, Tensor};
use emoconv::prosody::{duration_metrics, make_bins, BinStrategy, Normalization};
use emoconv::units::UnitSequence;
use emoconv::Emotion;
use proptest::prelude::*;

fn small_corpus(n: usize) -> CorpusConfig {
    CorpusConfig { n_transcripts: n, emotions: vec![Emotion::Amused, Emotion::Sleepy], ..CorpusConfig::default() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn generated_pairs_share_lexical_content(seed in 0u64..1000) {
        let cfg = small_corpus(4);
        let corpus = generate_corpus(&cfg, seed).unwrap();
        for p in make_parallel_pairs(&corpus) {
            prop_assert_eq!(
                content_ids(p.source.units.as_slice(), cfg.content_units),
                content_ids(p.target.units.as_slice(), cfg.content_units)
            );
        }
    }

    #[test]
    fn pairing_is_symmetric(seed in 0u64..1000) {
        let corpus = generate_corpus(&small_corpus(3), seed).unwrap();
        let pairs: BTreeSet<(String, String)> =
            make_parallel_pairs(&corpus).into_iter().map(|p| (p.source.id, p.target.id)).collect();
        for (a, b) in &pairs {
            prop_assert!(pairs.contains(&(b.clone(), a.clone())));
        }
    }

    #[test]
    fn splits_are_deterministic_files(seed in 0u64..1000) {
        let corpus = generate_corpus(&small_corpus(10), seed).unwrap();
        let write = || {
            let dir = tempfile::tempdir().unwrap();
            let groups: Vec<String> = corpus.iter().map(|u| u.transcript_group.clone()).collect();
            let a = assign_groups(&groups, (0.8, 0.1, 0.1), seed).unwrap();
            let split = partition_by_group(&corpus, |u| u.transcript_group.as_str(), &a);
            let paths = write_splits(dir.path(), "s", &split, None).unwrap();
            paths.iter().map(|p| std::fs::read(p).unwrap()).collect::<Vec<_>>()
        };
        prop_assert_eq!(write(), write());
    }
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one_and_sigmoid_is_open_unit(
        rows in 1usize..5,
        data in prop::collection::vec(-30.0f64..30.0, 20),
    ) {
        let cols = data.len() / rows;
        let t = Tensor::new(vec![rows, cols], data[..rows * cols].to_vec()).unwrap();
        let params = ParamStore::<f64>::new();
        let mut g = Graph::new(&params);
        let x = g.input(t).unwrap();
        let s = g.softmax(x).unwrap();
        let sig = g.sigmoid(x).unwrap();
        let sv = g.value(s).data().to_vec();
        for r in 0..rows {
            let total: f64 = sv[r * cols..(r + 1) * cols].iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-6);
        }
        prop_assert!(g.value(sig).data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn adaptive_bins_hold_equal_mass(
        values in prop::collection::btree_set(-100_000i64..100_000, 20..300),
        d in 2usize..12,
    ) {
        let values: Vec<f64> = values.into_iter().map(|v| v as f64 / 1000.0).collect();
        let spec = make_bins(&values, BinStrategy::Adaptive, d, Normalization::None, BTreeMap::new()).unwrap();
        let mut counts = vec![0usize; d];
        for &v in &values {
            counts[spec.bin_of(v).0] += 1;
        }
        let n = values.len();
        for c in counts {
            prop_assert!(c + 1 >= n / d && c <= n.div_ceil(d) + 1, "count {c} for n={n} d={d}");
        }
    }

    #[test]
    fn duration_accuracy_is_monotone(pairs in prop::collection::vec((1u32..30, 1u32..30), 1..50)) {
        let (p, t): (Vec<u32>, Vec<u32>) = pairs.into_iter().unzip();
        let m = duration_metrics(&p, &t).unwrap();
        prop_assert!(m.acc_0ms <= m.acc_20ms && m.acc_20ms <= m.acc_40ms);
        prop_assert!(m.mae_frames >= 0.0);
    }

    #[test]
    fn synthesis_conserves_length(
        frames in prop::collection::vec((0u32..8, prop::option::of(80.0f64..350.0)), 0..40),
        speaker in 0usize..2,
    ) {
        let units = UnitSequence::new(frames.iter().map(|f| f.0).collect());
        let f0 = ProsodyTrack::new(frames.iter().map(|f| f.1.unwrap_or(0.0)).collect()).unwrap();
        let timbre = TimbreTable::generate(2, 8, 3);
        let wav = synthesize(&units, &f0, speaker, Emotion::Angry, &timbre).unwrap();
        prop_assert_eq!(wav.len(), frames.len() * 320);
        prop_assert!(wav.samples.iter().all(|s| s.is_finite()));
    }

    #[test]
    fn mel_is_deterministic(samples in prop::collection::vec(-1.0f32..1.0, 1..2000)) {
        let wav = Waveform::new(samples).unwrap();
        let cfg = MelConfig::default();
        let a = mel_spectrogram(&wav, &cfg).unwrap();
        let b = mel_spectrogram(&wav, &cfg).unwrap();
        prop_assert_eq!(a.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn gan_losses_are_non_negative(
        scores in prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 1..6),
        feats in prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 1..6),
        mel in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..10),
    ) {
        let out = |pick: fn(&(f64, f64)) -> f64| DiscriminatorOutputs {
            scores: scores.iter().map(pick).collect(),
            features: vec![feats.iter().map(pick).collect()],
        };
        let real = [out(|p| p.0)];
        let fake = [out(|p| p.1)];
        let (mr, mf): (Vec<f64>, Vec<f64>) = mel.into_iter().unzip();
        let l = gan_losses(&real, &fake, &mr, &mf).unwrap();
        for v in l.l_adv.iter().chain(&l.l_d).chain(&l.l_fm).chain([&l.l_recon, &l.l_g_total, &l.l_d_total]) {
            prop_assert!(*v >= 0.0);
        }
        let perfect_g = gan_losses(&real, &[DiscriminatorOutputs { scores: vec![1.0; scores.len()], features: real[0].features.clone() }], &mr, &mr).unwrap();
        prop_assert_eq!(perfect_g.l_adv[0], 0.0);
    }

    #[test]
    fn bleu_self_is_perfect_and_uer_self_is_zero(seq in prop::collection::vec(0u32..16, 4..30)) {
        prop_assert!((bleu(&[&seq], &seq, 4).unwrap() - 100.0).abs() < 1e-9);
        prop_assert_eq!(uer(&seq, &seq).unwrap(), 0.0);
    }

    #[test]
    fn content_recovery_ignores_reserved_insertions(
        src in prop::collection::vec(0u32..48, 1..30),
        hyp in prop::collection::vec(0u32..48, 0..30),
        inserts in prop::collection::vec((0usize..64, 48u32..64), 0..10),
    ) {
        let reserved = 48..64;
        let base = content_recovery(&src, &hyp, &reserved).unwrap();
        let mut noisy = hyp.clone();
        for (at, id) in inserts {
            noisy.insert(at % (noisy.len() + 1), id);
        }
        prop_assert_eq!(content_recovery(&src, &noisy, &reserved).unwrap(), base);
    }
}

#[test]
fn bleu_is_permutation_sensitive() {
    let reference = [1u32, 2, 3, 4, 5, 6, 7, 8];
    let swapped = [1u32, 2, 3, 4, 8, 7, 6, 5];
    assert!(bleu(&[&reference], &swapped, 4).unwrap() < bleu(&[&reference], &reference, 4).unwrap());
}

fn edit_distance_oracle(a: &[u32], b: &[u32]) -> usize {
    // Plain full-matrix Wagner-Fischer.
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        d[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    d[a.len()][b.len()]
}

proptest! {
    #[test]
    fn uer_matches_edit_distance(
        r in prop::collection::vec(0u32..6, 1..25),
        h in prop::collection::vec(0u32..6, 0..25),
    ) {
        let expected = edit_distance_oracle(&r, &h) as f64 / r.len() as f64;
        prop_assert!((uer(&r, &h).unwrap() - expected).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn training_is_bit_reproducible(seed in 0u64..1000) {
        use emoconv::corpus::Utterance;
        use emoconv::nn::TrainConfig;
        use emoconv::prosody::{duration_data, train_duration_cnn, DurationCnnConfig};
        let corpus: Vec<Utterance> = generate_corpus(&small_corpus(6), seed).unwrap();
        let data = duration_data(&corpus);
        let cfg = DurationCnnConfig { embed_dim: 8, channels: 8, ..DurationCnnConfig::default() };
        let tcfg = TrainConfig { max_epochs: 2, batch_size: 4, seed, ..TrainConfig::default() };
        let run = || {
            let (m, h) = train_duration_cnn(&data, &data[..2], cfg.clone(), &tcfg).unwrap();
            let bits = emoconv::nn::encode_checkpoint(&"duration", &m.params).unwrap();
            (bits, h.epochs.iter().map(|e| e.train_loss.to_bits()).collect::<Vec<_>>())
        };
        prop_assert_eq!(run(), run());
    }
}
