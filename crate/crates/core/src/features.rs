//! Fixed-size per-example features: sentence lengths, length-normalized
//! log-likelihood, pooled n-gram rarity and pooled tagging values.

use std::sync::Arc;

use ndarray::Array2;
use serde::Serialize;

use crate::corpus::{
    build_ngram_table, build_tag_table, ngram_vector, tag_vector, Corpus, NGramTable, ParallelExample,
    RuleTagger, Sentence, TagScheme, TagTable, Tagger,
};
use crate::error::{Error, Result};
use crate::learner::Learner;

pub const POOL_STATS: usize = 8;
pub const SENLEN_DIM: usize = 2;
pub const LOGP_DIM: usize = 1;
/// Source and target sides × n ∈ {1, 2, 3, 4}.
pub const NGRAM_DIM: usize = 8 * POOL_STATS;
/// Source and target sides × {POS, NER}.
pub const TAG_DIM: usize = 4 * POOL_STATS;
pub const FEATURE_DIM: usize = SENLEN_DIM + LOGP_DIM + NGRAM_DIM + TAG_DIM;

pub const SENLEN_RANGE: std::ops::Range<usize> = 0..SENLEN_DIM;
pub const LOGP_RANGE: std::ops::Range<usize> = SENLEN_DIM..SENLEN_DIM + LOGP_DIM;
pub const NGRAM_RANGE: std::ops::Range<usize> = LOGP_RANGE.end..LOGP_RANGE.end + NGRAM_DIM;
pub const TAG_RANGE: std::ops::Range<usize> = NGRAM_RANGE.end..FEATURE_DIM;

/// Feature bundle of one example, laid out as
/// `[senlen(2) | logp(1) | ngram(64) | tags(32)]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RawFeatures(Vec<f64>);

impl RawFeatures {
    pub fn from_vec(values: Vec<f64>) -> Result<Self> {
        if values.len() != FEATURE_DIM {
            return Err(Error::Shape(format!(
                "feature vector has {} entries, expected {FEATURE_DIM}",
                values.len()
            )));
        }
        Ok(RawFeatures(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn senlen(&self) -> &[f64] {
        &self.0[SENLEN_RANGE]
    }

    pub fn logp(&self) -> f64 {
        self.0[LOGP_RANGE.start]
    }

    pub fn ngram_summary(&self) -> &[f64] {
        &self.0[NGRAM_RANGE]
    }

    pub fn tag_summary(&self) -> &[f64] {
        &self.0[TAG_RANGE]
    }
}

/// Stacks feature bundles into a `b × FEATURE_DIM` matrix.
pub fn stack(features: &[RawFeatures]) -> Array2<f64> {
    let mut m = Array2::zeros((features.len(), FEATURE_DIM));
    for (mut row, f) in m.rows_mut().into_iter().zip(features) {
        row.assign(&ndarray::ArrayView1::from(f.as_slice()));
    }
    m
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// `{mean, std, min, max, median, p25, p75, log(1+len)/log(1+max_len)}`;
/// all zeros for an empty vector. Percentiles interpolate linearly.
pub fn pool(values: &[f64], max_len: usize) -> [f64; POOL_STATS] {
    if values.is_empty() {
        return [0.0; POOL_STATS];
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let len_stat = ((1.0 + n).ln() / (1.0 + max_len.max(1) as f64).ln()).min(1.0);
    [
        mean,
        var.sqrt(),
        sorted[0],
        sorted[sorted.len() - 1],
        percentile(&sorted, 0.5),
        percentile(&sorted, 0.25),
        percentile(&sorted, 0.75),
        len_stat,
    ]
}

/// Corpus-wide tables and taggers that feature extraction reads from.
#[derive(Clone)]
pub struct FeatureContext {
    source_ngrams: Vec<NGramTable>,
    target_ngrams: Vec<NGramTable>,
    pos: Arc<dyn Tagger>,
    ner: Arc<dyn Tagger>,
    /// `[source POS, source NER, target POS, target NER]`.
    tag_tables: [TagTable; 4],
    max_len: usize,
}

impl FeatureContext {
    pub fn build(corpus: &Corpus, pos: Arc<dyn Tagger>, ner: Arc<dyn Tagger>) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::EmptyInput("feature tables need a non-empty corpus".into()));
        }
        let source_ngrams = (1..=4)
            .map(|n| build_ngram_table(corpus.sources(), n))
            .collect::<Result<Vec<_>>>()?;
        let target_ngrams = (1..=4)
            .map(|n| build_ngram_table(corpus.targets(), n))
            .collect::<Result<Vec<_>>>()?;
        let tag_tables = [
            build_tag_table(corpus.sources(), pos.as_ref())?,
            build_tag_table(corpus.sources(), ner.as_ref())?,
            build_tag_table(corpus.targets(), pos.as_ref())?,
            build_tag_table(corpus.targets(), ner.as_ref())?,
        ];
        let max_len = corpus
            .examples
            .iter()
            .map(|e| e.source.len().max(e.target.len()))
            .max()
            .unwrap_or(1);
        Ok(FeatureContext {
            source_ngrams,
            target_ngrams,
            pos,
            ner,
            tag_tables,
            max_len,
        })
    }

    /// Tables over `corpus` with the shipped rule taggers.
    pub fn with_rule_taggers(corpus: &Corpus) -> Result<Self> {
        Self::build(
            corpus,
            Arc::new(RuleTagger::new(TagScheme::Pos)),
            Arc::new(RuleTagger::new(TagScheme::Ner)),
        )
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn source_ngrams(&self, n: usize) -> &NGramTable {
        &self.source_ngrams[n - 1]
    }

    pub fn target_ngrams(&self, n: usize) -> &NGramTable {
        &self.target_ngrams[n - 1]
    }

    fn side_ngrams(&self, s: &Sentence, tables: &[NGramTable], out: &mut Vec<f64>) {
        for table in tables {
            out.extend(pool(&ngram_vector(s, table), self.max_len));
        }
    }

    /// Everything except the model-dependent log-likelihood, laid out as a
    /// full feature vector with `logp = 0`.
    pub fn static_features(&self, example: &ParallelExample) -> Result<RawFeatures> {
        let scale = self.max_len as f64;
        let mut v = Vec::with_capacity(FEATURE_DIM);
        v.push((example.source.len() as f64 / scale).min(1.0));
        v.push((example.target.len() as f64 / scale).min(1.0));
        v.push(0.0);
        self.side_ngrams(&example.source, &self.source_ngrams, &mut v);
        self.side_ngrams(&example.target, &self.target_ngrams, &mut v);
        let sides = [
            (&example.source, self.pos.as_ref(), &self.tag_tables[0]),
            (&example.source, self.ner.as_ref(), &self.tag_tables[1]),
            (&example.target, self.pos.as_ref(), &self.tag_tables[2]),
            (&example.target, self.ner.as_ref(), &self.tag_tables[3]),
        ];
        for (s, tagger, table) in sides {
            v.extend(pool(&tag_vector(s, table, tagger)?, self.max_len));
        }
        RawFeatures::from_vec(v)
    }

    pub fn static_features_all(&self, examples: &[ParallelExample]) -> Result<Vec<RawFeatures>> {
        examples.iter().map(|e| self.static_features(e)).collect()
    }
}

fn with_logp(mut base: RawFeatures, log_likelihood: f64, target_len: usize) -> RawFeatures {
    base.0[LOGP_RANGE.start] = log_likelihood / target_len as f64;
    base
}

pub fn extract<L: Learner>(
    example: &ParallelExample,
    model: &L,
    context: &FeatureContext,
) -> Result<RawFeatures> {
    let base = context.static_features(example)?;
    Ok(with_logp(base, model.log_likelihood(example), example.target.len()))
}

/// Features of a candidate batch; element `i` depends only on `examples[i]`.
pub fn batch_features<L: Learner>(
    examples: &[ParallelExample],
    model: &L,
    context: &FeatureContext,
) -> Result<Vec<RawFeatures>> {
    if examples.len() < 2 {
        return Err(Error::InvalidBatch(examples.len()));
    }
    let statics = context.static_features_all(examples)?;
    Ok(complete(statics, examples, model))
}

/// Fills in log-likelihoods for precomputed static features.
pub fn complete<L: Learner>(
    statics: Vec<RawFeatures>,
    examples: &[ParallelExample],
    model: &L,
) -> Vec<RawFeatures> {
    let lls = model.log_likelihoods(examples);
    statics
        .into_iter()
        .zip(lls)
        .zip(examples)
        .map(|((base, ll), ex)| with_logp(base, ll, ex.target.len()))
        .collect()
}

/// Debug dump: one JSON array per example.
pub fn dump_json(features: &[RawFeatures]) -> String {
    serde_json::to_string(features).expect("features serialize")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{SyntheticConfig, SyntheticGenerator};
    use crate::learner::{ToyModel, ToyModelConfig};
    use proptest::prelude::*;

    #[test]
    fn constant_vector_pools_flat() {
        let p = pool(&[0.5, 0.5], 10);
        assert_eq!(&p[..7], &[0.5, 0.0, 0.5, 0.5, 0.5, 0.5, 0.5]);
        assert!((p[7] - 3f64.ln() / 11f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn empty_vector_pools_to_zero() {
        assert_eq!(pool(&[], 10), [0.0; POOL_STATS]);
    }

    #[test]
    fn percentiles_interpolate() {
        let p = pool(&[4.0, 1.0, 3.0, 2.0], 4);
        assert_eq!(p[4], 2.5);
        assert_eq!(p[5], 1.75);
        assert_eq!(p[6], 3.25);
    }

    fn setup() -> (crate::corpus::Corpus, FeatureContext, ToyModel) {
        let gen = SyntheticGenerator::new(SyntheticConfig {
            size: 300,
            seed: 4,
            ..Default::default()
        })
        .unwrap();
        let corpus = gen.corpus();
        let ctx = FeatureContext::with_rule_taggers(&corpus).unwrap();
        let model = ToyModel::new(
            corpus.source_vocab.len(),
            corpus.target_vocab.len(),
            ToyModelConfig::default(),
        );
        (corpus, ctx, model)
    }

    #[test]
    fn features_are_bounded_and_sized() {
        let (corpus, ctx, model) = setup();
        for ex in corpus.examples.iter().take(50) {
            let f = extract(ex, &model, &ctx).unwrap();
            assert_eq!(f.as_slice().len(), FEATURE_DIM);
            assert!(f.logp() <= 0.0 && f.logp().is_finite());
            for &v in f.senlen().iter().chain(f.ngram_summary()).chain(f.tag_summary()) {
                assert!((0.0..=1.0).contains(&v), "{v}");
            }
        }
    }

    #[test]
    fn short_sentence_has_zero_block_for_long_ngrams() {
        let (corpus, ctx, model) = setup();
        let ex = ParallelExample::new(
            99,
            Sentence::new(vec![3, 4]).unwrap(),
            Sentence::new(vec![5]).unwrap(),
        );
        let f = extract(&ex, &model, &ctx).unwrap();
        // source trigram block and target bigram block
        let src_tri = &f.ngram_summary()[2 * POOL_STATS..3 * POOL_STATS];
        let tgt_bi = &f.ngram_summary()[5 * POOL_STATS..6 * POOL_STATS];
        assert!(src_tri.iter().all(|&v| v == 0.0));
        assert!(tgt_bi.iter().all(|&v| v == 0.0));
        drop(corpus);
    }

    #[test]
    fn batch_requires_two_examples() {
        let (corpus, ctx, model) = setup();
        assert!(matches!(
            batch_features(&corpus.examples[..1], &model, &ctx),
            Err(Error::InvalidBatch(1))
        ));
        let batch = batch_features(&corpus.examples[..16], &model, &ctx).unwrap();
        assert_eq!(batch.len(), 16);
    }

    #[test]
    fn restored_model_gives_identical_features() {
        let (corpus, ctx, mut model) = setup();
        let ex = &corpus.examples[3];
        let before = extract(ex, &model, &ctx).unwrap();
        let blob = crate::learner::Learner::snapshot(&model);
        crate::learner::Learner::train_on_example(&mut model, ex, 0.1);
        crate::learner::Learner::restore(&mut model, &blob).unwrap();
        assert_eq!(extract(ex, &model, &ctx).unwrap(), before);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn batch_features_are_permutation_equivariant(
            picks in prop::collection::vec(0usize..300, 2..10),
            seed in any::<u64>(),
        ) {
            let (corpus, ctx, model) = setup();
            let batch: Vec<_> = picks.iter().map(|&i| corpus.examples[i].clone()).collect();
            let mut order: Vec<usize> = (0..batch.len()).collect();
            use rand::{seq::SliceRandom, SeedableRng};
            order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let permuted: Vec<_> = order.iter().map(|&i| batch[i].clone()).collect();
            let a = batch_features(&batch, &model, &ctx).unwrap();
            let b = batch_features(&permuted, &model, &ctx).unwrap();
            for (k, &i) in order.iter().enumerate() {
                prop_assert_eq!(&b[k], &a[i]);
            }
        }
    }
}
