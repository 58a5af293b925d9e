use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{CorpusError, ParallelPair, Utterance};

/// All ordered pairs of utterances that share a transcript group and differ
/// in emotion, speakers mixed freely. Groups are visited in sorted order.
pub fn make_parallel_pairs(corpus: &[Utterance]) -> Vec<ParallelPair> {
    let mut groups: BTreeMap<&str, Vec<&Utterance>> = BTreeMap::new();
    for u in corpus {
        groups.entry(u.transcript_group.as_str()).or_default().push(u);
    }
    let mut pairs = Vec::new();
    for members in groups.values() {
        for a in members {
            for b in members {
                if a.emotion != b.emotion {
                    pairs.push(ParallelPair { source: (*a).clone(), target: (*b).clone() });
                }
            }
        }
    }
    pairs
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub valid: Vec<T>,
    pub test: Vec<T>,
}

impl<T> Split<T> {
    pub fn map<U>(self, mut f: impl FnMut(Vec<T>) -> Vec<U>) -> Split<U> {
        Split { train: f(self.train), valid: f(self.valid), test: f(self.test) }
    }
}

/// Group counts from floor-plus-largest-remainder, then topped up so no
/// split is empty.
pub fn split_counts(n: usize, ratios: (f64, f64, f64)) -> Result<[usize; 3], CorpusError> {
    let r = [ratios.0, ratios.1, ratios.2];
    if r.iter().any(|v| !v.is_finite() || *v < 0.0) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(CorpusError::Ratios(ratios));
    }
    if n < 3 {
        return Err(CorpusError::TooFewGroups(n));
    }
    let exact: Vec<f64> = r.iter().map(|v| v * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|v| v.floor() as usize).collect();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let mut left = n - counts.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    for i in 0..3 {
        if counts[i] == 0 {
            let donor = (0..3).max_by_key(|&j| (counts[j], std::cmp::Reverse(j))).unwrap();
            counts[donor] -= 1;
            counts[i] += 1;
        }
    }
    Ok([counts[0], counts[1], counts[2]])
}

/// Shuffles the distinct groups with `seed` and deals them into
/// train/valid/test.
pub fn assign_groups(groups: &[String], ratios: (f64, f64, f64), seed: u64) -> Result<Split<String>, CorpusError> {
    let mut unique: Vec<String> = groups.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    let [a, b, _] = split_counts(unique.len(), ratios)?;
    unique.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = unique.split_off(a + b);
    let valid = unique.split_off(a);
    Ok(Split { train: unique, valid, test })
}

/// Partitions items by transcript group so no group spans two splits.
pub fn partition_by_group<T: Clone>(
    items: &[T],
    group_of: impl Fn(&T) -> &str,
    groups: &Split<String>,
) -> Split<T> {
    let index: BTreeMap<&str, usize> = [&groups.train, &groups.valid, &groups.test]
        .iter()
        .enumerate()
        .flat_map(|(k, v)| v.iter().map(move |g| (g.as_str(), k)))
        .collect();
    let mut out = Split { train: Vec::new(), valid: Vec::new(), test: Vec::new() };
    for item in items {
        match index.get(group_of(item)) {
            Some(0) => out.train.push(item.clone()),
            Some(1) => out.valid.push(item.clone()),
            Some(_) => out.test.push(item.clone()),
            None => {}
        }
    }
    out
}

pub fn split_by_transcript(
    pairs: &[ParallelPair],
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<Split<ParallelPair>, CorpusError> {
    let groups: Vec<String> = pairs.iter().map(|p| p.source.transcript_group.clone()).collect();
    let assignment = assign_groups(&groups, ratios, seed)?;
    Ok(partition_by_group(pairs, |p| p.source.transcript_group.as_str(), &assignment))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ProsodyTrack;
    use crate::emotion::Emotion;
    use crate::units::UnitSequence;
    use proptest::prelude::*;

    fn utt(group: &str, speaker: usize, emotion: Emotion) -> Utterance {
        Utterance::new(
            format!("{group}_{speaker}_{emotion}"),
            speaker,
            emotion,
            group,
            UnitSequence::new(vec![1, 2]),
            ProsodyTrack::new(vec![100.0, 0.0]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn pair_counts() {
        let one = [utt("a", 0, Emotion::Neutral), utt("a", 0, Emotion::Amused)];
        assert_eq!(make_parallel_pairs(&one).len(), 2);
        let two = [
            utt("a", 0, Emotion::Neutral),
            utt("a", 0, Emotion::Amused),
            utt("a", 1, Emotion::Neutral),
            utt("a", 1, Emotion::Amused),
        ];
        // brute force: ordered pairs of distinct utterances with distinct emotions
        let brute = (0..4).flat_map(|i| (0..4).map(move |j| (i, j))).filter(|&(i, j)| two[i].emotion != two[j].emotion).count();
        assert_eq!(brute, 8);
        let pairs = make_parallel_pairs(&two);
        assert_eq!(pairs.len(), brute);
        for p in &pairs {
            assert!(pairs.iter().any(|q| q.source == p.target && q.target == p.source));
        }
        assert!(make_parallel_pairs(&[]).is_empty());
    }

    #[test]
    fn counts_follow_largest_remainder() {
        assert_eq!(split_counts(100, (0.9, 0.05, 0.05)).unwrap(), [90, 5, 5]);
        assert_eq!(split_counts(20, (0.9, 0.05, 0.05)).unwrap(), [18, 1, 1]);
        assert_eq!(split_counts(3, (0.9, 0.05, 0.05)).unwrap(), [1, 1, 1]);
        assert_eq!(split_counts(10, (0.9, 0.05, 0.05)).unwrap(), [8, 1, 1]);
        assert!(split_counts(2, (0.9, 0.05, 0.05)).is_err());
        assert!(split_counts(10, (0.9, 0.2, 0.05)).is_err());
    }

    proptest! {
        #[test]
        fn splits_are_group_disjoint(n in 3usize..60, seed in any::<u64>()) {
            let groups: Vec<String> = (0..n).map(|i| format!("g{i}")).collect();
            let pairs: Vec<ParallelPair> = groups
                .iter()
                .map(|g| ParallelPair { source: utt(g, 0, Emotion::Neutral), target: utt(g, 0, Emotion::Angry) })
                .collect();
            let s = split_by_transcript(&pairs, (0.9, 0.05, 0.05), seed).unwrap();
            let names = |v: &[ParallelPair]| v.iter().map(|p| p.source.transcript_group.clone()).collect::<BTreeSet<_>>();
            let (a, b, c) = (names(&s.train), names(&s.valid), names(&s.test));
            prop_assert!(a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c));
            prop_assert_eq!(a.len() + b.len() + c.len(), n);
            prop_assert!(!b.is_empty() && !c.is_empty());
            prop_assert!((a.len() as f64 - 0.9 * n as f64).abs() <= 2.0);
            prop_assert_eq!(s, split_by_transcript(&pairs, (0.9, 0.05, 0.05), seed).unwrap());
        }
    }
}
