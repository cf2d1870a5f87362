//! Desk-scale stand-in for a real parallel corpus. Source sentences come from
//! a first-order Markov chain over a Zipfian vocabulary; targets are a
//! word-level substitution cipher of the reversed source. A configurable
//! fraction of targets is corrupted by shuffling or by appending spurious
//! words.

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{tokenize, Corpus, ParallelExample, Vocab};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub size: usize,
    /// Content words per language, reserved ids excluded.
    pub vocab_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub noise_rate: f64,
    /// Exponent of the Zipf law over source words.
    pub zipf_exponent: f64,
    /// Probability that a source word is drawn from its predecessor's
    /// successor list instead of the Zipf law.
    pub markov_strength: f64,
    /// Size of each word's successor list.
    pub successors: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            size: 5_000,
            vocab_size: 60,
            min_len: 3,
            max_len: 12,
            noise_rate: 0.3,
            zipf_exponent: 1.0,
            markov_strength: 0.8,
            successors: 3,
            seed: 1,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_owned()));
        if self.size == 0 {
            return fail("corpus size must be at least 1");
        }
        if !(0.0..1.0).contains(&self.noise_rate) {
            return fail("noise rate must lie in [0, 1)");
        }
        if self.vocab_size < 2 {
            return fail("vocabulary needs at least 2 words");
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return fail("need 1 <= min_len <= max_len");
        }
        if !self.zipf_exponent.is_finite() || self.zipf_exponent < 0.0 {
            return fail("zipf exponent must be finite and non-negative");
        }
        if !(0.0..=1.0).contains(&self.markov_strength) {
            return fail("markov strength must lie in [0, 1]");
        }
        if self.successors == 0 {
            return fail("each word needs at least one successor");
        }
        Ok(())
    }
}

const SUFFIX_MIN: usize = 2;
const SUFFIX_MAX: usize = 4;

pub struct SyntheticGenerator {
    config: SyntheticConfig,
    cipher: Vec<usize>,
    successors: Vec<Vec<usize>>,
    source_dist: WeightedIndex<f64>,
}

impl SyntheticGenerator {
    pub fn new(config: SyntheticConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(0);
        let mut cipher: Vec<usize> = (0..config.vocab_size).collect();
        cipher.shuffle(&mut rng);
        let weights: Vec<f64> = (1..=config.vocab_size)
            .map(|rank| (rank as f64).powf(-config.zipf_exponent))
            .collect();
        let source_dist = WeightedIndex::new(weights).map_err(|e| Error::Config(e.to_string()))?;
        let successors = (0..config.vocab_size)
            .map(|_| {
                (0..config.successors)
                    .map(|_| source_dist.sample(&mut rng))
                    .collect()
            })
            .collect();
        Ok(SyntheticGenerator {
            config,
            cipher,
            successors,
            source_dist,
        })
    }

    pub fn config(&self) -> &SyntheticConfig {
        &self.config
    }

    /// The clean translation of a source word.
    pub fn translate_word(&self, word: usize) -> usize {
        self.cipher[word]
    }

    fn sample_clean(&self, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
        let len = rng.gen_range(self.config.min_len..=self.config.max_len);
        let mut source: Vec<usize> = Vec::with_capacity(len);
        for i in 0..len {
            let word = if i > 0 && rng.gen_bool(self.config.markov_strength) {
                *self.successors[source[i - 1]].choose(rng).expect("non-empty successor list")
            } else {
                self.source_dist.sample(rng)
            };
            source.push(word);
        }
        let target = source.iter().rev().map(|&w| self.cipher[w]).collect();
        (source, target)
    }

    fn corrupt(&self, target: &mut Vec<usize>, rng: &mut ChaCha8Rng) {
        if rng.gen_bool(0.5) {
            let before = target.clone();
            target.shuffle(rng);
            if *target != before {
                return;
            }
            *target = before;
        }
        let extra = rng.gen_range(SUFFIX_MIN..=SUFFIX_MAX);
        for _ in 0..extra {
            target.push(rng.gen_range(0..self.config.vocab_size));
        }
    }

    fn render(prefix: char, words: &[usize]) -> String {
        words
            .iter()
            .map(|w| format!("{prefix}{w}"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// The noisy training split. Vocabularies grow in first-appearance order,
    /// so the corpus survives a TSV round trip unchanged.
    pub fn corpus(&self) -> Corpus {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(1);
        let mut source_vocab = Vocab::new();
        let mut target_vocab = Vocab::new();
        let mut examples = Vec::with_capacity(self.config.size);
        for id in 0..self.config.size {
            let (source, mut target) = self.sample_clean(&mut rng);
            let corrupted = rng.gen_bool(self.config.noise_rate);
            if corrupted {
                self.corrupt(&mut target, &mut rng);
            }
            let source = tokenize(&Self::render('s', &source), &mut source_vocab, true)
                .expect("non-empty source");
            let target = tokenize(&Self::render('t', &target), &mut target_vocab, true)
                .expect("non-empty target");
            examples.push(ParallelExample::new(id as u64, source, target).with_corruption(corrupted));
        }
        Corpus::new(examples, source_vocab, target_vocab)
    }

    /// A clean held-out split of `n` pairs, tokenized with `reference`'s
    /// vocabularies. Distinct `stream`s give independent splits.
    pub fn clean_split(&self, n: usize, stream: u64, reference: &Corpus) -> Corpus {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(2 + stream);
        let mut source_vocab = reference.source_vocab.clone();
        let mut target_vocab = reference.target_vocab.clone();
        let examples = (0..n)
            .map(|id| {
                let (source, target) = self.sample_clean(&mut rng);
                let source = tokenize(&Self::render('s', &source), &mut source_vocab, false)
                    .expect("non-empty source");
                let target = tokenize(&Self::render('t', &target), &mut target_vocab, false)
                    .expect("non-empty target");
                ParallelExample::new(id as u64, source, target)
            })
            .collect();
        Corpus::new(examples, source_vocab, target_vocab)
    }
}

pub fn generate_synthetic_corpus(config: &SyntheticConfig) -> Result<Corpus> {
    Ok(SyntheticGenerator::new(config.clone())?.corpus())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(size: usize, noise_rate: f64) -> SyntheticConfig {
        SyntheticConfig {
            size,
            noise_rate,
            seed: 11,
            ..SyntheticConfig::default()
        }
    }

    #[test]
    fn zero_noise_is_clean() {
        let corpus = generate_synthetic_corpus(&config(500, 0.0)).unwrap();
        assert!(corpus.examples.iter().all(|e| !e.is_corrupted()));
    }

    #[test]
    fn corruption_fraction_concentrates() {
        let corpus = generate_synthetic_corpus(&config(5_000, 0.3)).unwrap();
        let rate = corpus.corruption_rate();
        assert!((rate - 0.3).abs() <= 0.02, "rate {rate}");
    }

    #[test]
    fn deterministic_under_seed() {
        let a = generate_synthetic_corpus(&config(300, 0.3)).unwrap();
        let b = generate_synthetic_corpus(&config(300, 0.3)).unwrap();
        assert_eq!(a.to_tsv(), b.to_tsv());
        let c = generate_synthetic_corpus(&SyntheticConfig { seed: 12, ..config(300, 0.3) }).unwrap();
        assert_ne!(a.to_tsv(), c.to_tsv());
    }

    #[test]
    fn clean_targets_are_reversed_cipher() {
        let gen = SyntheticGenerator::new(config(200, 0.0)).unwrap();
        let corpus = gen.corpus();
        for ex in &corpus.examples {
            let src: Vec<usize> = ex
                .source
                .ids()
                .iter()
                .map(|&id| corpus.source_vocab.surface(id).unwrap()[1..].parse().unwrap())
                .collect();
            let tgt: Vec<usize> = ex
                .target
                .ids()
                .iter()
                .map(|&id| corpus.target_vocab.surface(id).unwrap()[1..].parse().unwrap())
                .collect();
            let expected: Vec<usize> = src.iter().rev().map(|&w| gen.translate_word(w)).collect();
            assert_eq!(tgt, expected);
        }
    }

    #[test]
    fn corrupted_targets_differ_from_clean() {
        let gen = SyntheticGenerator::new(config(400, 0.5)).unwrap();
        let corpus = gen.corpus();
        for ex in corpus.examples.iter().filter(|e| e.is_corrupted()) {
            let src: Vec<usize> = ex
                .source
                .ids()
                .iter()
                .map(|&id| corpus.source_vocab.surface(id).unwrap()[1..].parse().unwrap())
                .collect();
            let clean: Vec<String> = src.iter().rev().map(|&w| format!("t{}", gen.translate_word(w))).collect();
            assert_ne!(corpus.target_vocab.render(&ex.target), clean.join(" "));
        }
    }

    #[test]
    fn invalid_configs() {
        for bad in [
            SyntheticConfig { size: 0, ..Default::default() },
            SyntheticConfig { noise_rate: 1.0, ..Default::default() },
            SyntheticConfig { noise_rate: -0.1, ..Default::default() },
            SyntheticConfig { min_len: 5, max_len: 4, ..Default::default() },
        ] {
            assert!(matches!(generate_synthetic_corpus(&bad), Err(Error::Config(_))));
        }
    }

    #[test]
    fn held_out_split_is_clean_and_shares_vocab() {
        let gen = SyntheticGenerator::new(config(1_000, 0.3)).unwrap();
        let train = gen.corpus();
        let val = gen.clean_split(100, 0, &train);
        let test = gen.clean_split(100, 1, &train);
        assert_eq!(val.source_vocab, train.source_vocab);
        assert_eq!(val.corruption_rate(), 0.0);
        assert_ne!(val.to_tsv(), test.to_tsv());
    }
}
