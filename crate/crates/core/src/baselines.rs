//! Heuristic selectors: target length, word rarity and trusted-set
//! denoising, each keeping a top fraction of the pool.

use std::io::Write;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{build_ngram_table, NGramTable, ParallelExample};
use crate::error::{Error, Result};
use crate::learner::{train_epoch, Learner};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredExample {
    pub id: u64,
    /// Higher is selected first.
    pub score: f64,
}

/// Target length in tokens.
pub fn score_length(example: &ParallelExample) -> f64 {
    example.target.len() as f64
}

/// Unigram frequencies of the target side of a pool.
#[derive(Debug, Clone)]
pub struct RarityTable {
    unigrams: NGramTable,
}

impl RarityTable {
    pub fn build(pool: &[ParallelExample]) -> Result<Self> {
        Ok(RarityTable {
            unigrams: build_ngram_table(pool.iter().map(|e| &e.target), 1)?,
        })
    }

    /// Relative frequency of `token`; unseen tokens get `1 / (2N)`.
    pub fn frequency(&self, token: crate::corpus::TokenId) -> f64 {
        let c = self.unigrams.count(&[token]);
        let n = self.unigrams.total() as f64;
        if c == 0 {
            1.0 / (2.0 * n)
        } else {
            c as f64 / n
        }
    }

    pub fn table(&self) -> &NGramTable {
        &self.unigrams
    }
}

/// `−(1/L)·Σ log f` over per-token frequencies.
pub fn rarity_from_frequencies(frequencies: &[f64]) -> f64 {
    -frequencies.iter().map(|f| f.ln()).sum::<f64>() / frequencies.len() as f64
}

/// Rarity of the target side.
pub fn score_rarity(example: &ParallelExample, table: &RarityTable) -> f64 {
    let f: Vec<f64> = example.target.ids().iter().map(|&w| table.frequency(w)).collect();
    rarity_from_frequencies(&f)
}

/// `(log p_trusted − log p_base) / L` for every example; higher is cleaner.
pub fn score_denoise<L: Learner>(examples: &[ParallelExample], base: &L, trusted: &L) -> Vec<f64> {
    let lb = base.log_likelihoods(examples);
    let lt = trusted.log_likelihoods(examples);
    examples
        .iter()
        .zip(lb.iter().zip(&lt))
        .map(|(e, (b, t))| (t - b) / e.target.len() as f64)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrustedConfig {
    pub epochs: usize,
    pub lr: f64,
}

impl Default for TrustedConfig {
    fn default() -> Self {
        TrustedConfig { epochs: 1, lr: 1e-4 }
    }
}

/// Copy of `base` fine-tuned on the trusted set.
pub fn train_trusted<L: Learner>(
    base: &L,
    trusted: &[ParallelExample],
    config: &TrustedConfig,
    rng: &mut ChaCha8Rng,
) -> Result<L> {
    if trusted.is_empty() {
        return Err(Error::InvalidInput("trusted set is empty".into()));
    }
    let mut model = base.clone();
    for _ in 0..config.epochs {
        train_epoch(&mut model, trusted, config.lr, rng);
    }
    Ok(model)
}

pub fn scored(examples: &[ParallelExample], scores: impl IntoIterator<Item = f64>) -> Vec<ScoredExample> {
    examples
        .iter()
        .zip(scores)
        .map(|(e, score)| ScoredExample { id: e.id, score })
        .collect()
}

/// Sorted by descending score, ties by ascending id.
pub fn rank(scored: &[ScoredExample]) -> Vec<ScoredExample> {
    let mut out = scored.to_vec();
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id)));
    out
}

/// The top `⌊fraction·n⌋` examples in rank order.
pub fn select_top(scored: &[ScoredExample], fraction: f64) -> Result<Vec<ScoredExample>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidInput(format!("fraction {fraction} outside (0, 1]")));
    }
    if let Some(bad) = scored.iter().find(|s| !s.score.is_finite()) {
        return Err(Error::InvalidInput(format!("example {} has a non-finite score", bad.id)));
    }
    let k = (fraction * scored.len() as f64).floor() as usize;
    let mut ranked = rank(scored);
    ranked.truncate(k);
    Ok(ranked)
}

/// `id<TAB>score<TAB>rank` with 1-based ranks, in rank order.
pub fn write_scores<W: Write>(out: &mut W, scored: &[ScoredExample]) -> Result<()> {
    writeln!(out, "id\tscore\trank")?;
    for (r, s) in rank(scored).iter().enumerate() {
        writeln!(out, "{}\t{}\t{}", s.id, s.score, r + 1)?;
    }
    Ok(())
}

pub fn read_scores(text: &str) -> Result<Vec<(ScoredExample, usize)>> {
    text.lines()
        .enumerate()
        .skip(1)
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let parse_err = |m: &str| Error::Parse {
                path: "<scores>".into(),
                line: i + 1,
                message: m.to_string(),
            };
            let cols: Vec<&str> = l.split('\t').collect();
            if cols.len() != 3 {
                return Err(parse_err("expected 3 columns"));
            }
            Ok((
                ScoredExample {
                    id: cols[0].parse().map_err(|_| parse_err("bad id"))?,
                    score: cols[1].parse().map_err(|_| parse_err("bad score"))?,
                },
                cols[2].parse().map_err(|_| parse_err("bad rank"))?,
            ))
        })
        .collect()
}

/// Mean of the first group minus mean of the second, over the pooled
/// standard deviation.
pub fn cohens_d(a: &[f64], b: &[f64]) -> f64 {
    let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
    let var = |x: &[f64], m: f64| x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64;
    let (ma, mb) = (mean(a), mean(b));
    let pooled = (((a.len() - 1) as f64 * var(a, ma) + (b.len() - 1) as f64 * var(b, mb))
        / (a.len() + b.len() - 2) as f64)
        .sqrt();
    (ma - mb) / pooled
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Sentence, TokenId};
    use crate::learner::{ToyModel, ToyModelConfig};
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn ex(id: u64, target: Vec<TokenId>) -> ParallelExample {
        ParallelExample::new(id, Sentence::new(vec![3, 4]).unwrap(), Sentence::new(target).unwrap())
    }

    fn pool() -> Vec<ParallelExample> {
        // target unigram counts: 3 → 6, 4 → 3, 5 → 1
        vec![
            ex(0, vec![3, 3, 3]),
            ex(1, vec![3, 3, 4]),
            ex(2, vec![4, 4, 5]),
            ex(3, vec![3]),
        ]
    }

    #[test]
    fn length_scores_and_ranking() {
        assert_eq!(score_length(&ex(0, vec![3, 4, 5, 6, 7])), 5.0);
        let set = vec![ex(7, vec![3, 3]), ex(8, vec![3, 3, 3, 3]), ex(9, vec![3])];
        let ranked = rank(&scored(&set, set.iter().map(score_length)));
        assert_eq!(ranked.iter().map(|s| s.id).collect::<Vec<_>>(), vec![8, 7, 9]);
    }

    #[test]
    fn rarity_matches_raw_counts() {
        let p = pool();
        let table = RarityTable::build(&p).unwrap();
        let counts = [(3u32, 6.0), (4, 3.0), (5, 1.0)];
        let total = 10.0f64;
        for e in &p {
            let manual = -e
                .target
                .ids()
                .iter()
                .map(|w| (counts.iter().find(|c| c.0 == *w).unwrap().1 / total).ln())
                .sum::<f64>()
                / e.target.len() as f64;
            assert!((score_rarity(e, &table) - manual).abs() <= 1e-12);
        }
        let unseen = ex(9, vec![42]);
        assert!((score_rarity(&unseen, &table) - (20.0f64).ln()).abs() <= 1e-12);
        assert!(score_rarity(&ex(10, vec![3, 3]), &table) < score_rarity(&ex(11, vec![5, 5]), &table));
    }

    #[test]
    fn rarity_of_frequency_e_inverse_is_one() {
        assert_eq!(rarity_from_frequencies(&[(-1.0f64).exp()]), 1.0);
    }

    #[test]
    fn denoise_is_zero_for_identical_models_and_antisymmetric() {
        let p = pool();
        let base = ToyModel::new(6, 6, ToyModelConfig::default());
        assert!(score_denoise(&p, &base, &base).iter().all(|&s| s == 0.0));
        let trusted = train_trusted(&base, &p[..2], &TrustedConfig { epochs: 3, lr: 0.1 }, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let a = score_denoise(&p, &base, &trusted);
        let b = score_denoise(&p, &trusted, &base);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(*x, -*y);
        }
        assert!(a.iter().any(|&s| s != 0.0));
        assert!(train_trusted(&base, &[], &TrustedConfig::default(), &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    }

    #[test]
    fn select_top_sizes_and_ties() {
        let s: Vec<ScoredExample> = (0..10).map(|i| ScoredExample { id: 9 - i, score: (i / 2) as f64 }).collect();
        assert_eq!(select_top(&s, 1.0).unwrap().len(), 10);
        let top = select_top(&s, 0.2).unwrap();
        assert_eq!(top.iter().map(|x| x.id).collect::<Vec<_>>(), vec![0, 1]);
        assert!(select_top(&s, 0.0).is_err());
        assert!(select_top(&s, 1.5).is_err());
        let bad = vec![ScoredExample { id: 1, score: f64::NAN }];
        assert!(select_top(&bad, 1.0).is_err());
    }

    #[test]
    fn scores_tsv_round_trips() {
        let s = vec![
            ScoredExample { id: 4, score: 0.5 },
            ScoredExample { id: 2, score: 1.25 },
            ScoredExample { id: 9, score: 0.5 },
        ];
        let mut out = Vec::new();
        write_scores(&mut out, &s).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text, "id\tscore\trank\n2\t1.25\t1\n4\t0.5\t2\n9\t0.5\t3\n");
        let back = read_scores(&text).unwrap();
        assert_eq!(back.iter().map(|(s, r)| (s.id, *r)).collect::<Vec<_>>(), vec![(2, 1), (4, 2), (9, 3)]);
        assert!(read_scores("id\tscore\trank\n1\tx\t1\n").is_err());
    }

    #[test]
    fn cohens_d_of_shifted_groups() {
        let a = [1.0, 2.0, 3.0];
        let b = [0.0, 1.0, 2.0];
        assert!((cohens_d(&a, &b) - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn select_top_is_a_prefix_of_the_full_sort(
            scores in prop::collection::vec(-5i32..5, 1..40),
            fraction in 0.01f64..=1.0,
        ) {
            let s: Vec<ScoredExample> = scores.iter().enumerate().map(|(i, &v)| ScoredExample { id: i as u64, score: v as f64 }).collect();
            let top = select_top(&s, fraction).unwrap();
            prop_assert_eq!(top.len(), (fraction * s.len() as f64).floor() as usize);
            let full = rank(&s);
            prop_assert_eq!(&full[..top.len()], &top[..]);
            for w in full.windows(2) {
                prop_assert!(w[0].score > w[1].score || (w[0].score == w[1].score && w[0].id < w[1].id));
            }
        }

        #[test]
        fn more_frequent_token_lowers_rarity(pos in 0usize..3) {
            let p = pool();
            let table = RarityTable::build(&p).unwrap();
            let mut target = vec![5, 4, 5];
            let before = score_rarity(&ex(0, target.clone()), &table);
            target[pos] = 3;
            prop_assert!(score_rarity(&ex(0, target), &table) < before);
        }
    }
}
