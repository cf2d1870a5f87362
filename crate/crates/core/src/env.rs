//! The selection environment: sample a candidate batch, let the agent pick
//! one example, train on it for one step and reward the change in
//! validation perplexity.

use std::io::Write;

use ndarray::Array2;
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{select_index, Action, Agent};
use crate::corpus::ParallelExample;
use crate::error::{Error, Result};
use crate::features::{complete, stack, RawFeatures};
use crate::learner::{scored_tokens, Learner};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub batch_size: usize,
    /// κ: reward = κ·(ppl_before − ppl_after).
    pub reward_scale: f64,
    /// Restore the model after every reward so it stays fixed within a round.
    pub revert_after_reward: bool,
    pub sample_lr: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            batch_size: 16,
            reward_scale: 100.0,
            revert_after_reward: true,
            sample_lr: 1e-4,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        if !(self.reward_scale > 0.0) {
            return Err(Error::Config("reward_scale must be positive".into()));
        }
        if !(self.sample_lr >= 0.0) {
            return Err(Error::Config("sample_lr must be non-negative".into()));
        }
        Ok(())
    }
}

/// `b` distinct indices into a pool of `pool` items, uniformly.
pub fn sample_batch(pool: usize, b: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    if pool < b {
        return Err(Error::InsufficientData {
            requested: b,
            available: pool,
        });
    }
    Ok(sample_indices(rng, pool, b).into_vec())
}

/// Result of applying one selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Feedback {
    pub reward: f64,
    pub example_id: Option<u64>,
    pub ppl_before: Option<f64>,
    pub ppl_after: Option<f64>,
}

/// Anything that presents candidate batches and rewards a choice.
pub trait SelectionEnv {
    fn batch_size(&self) -> usize;

    /// Draws a fresh candidate batch and returns its raw features.
    fn observe(&mut self, rng: &mut ChaCha8Rng) -> Result<Array2<f64>>;

    /// Applies the choice of candidate `index` from the last observed batch.
    fn apply(&mut self, index: usize) -> Result<Feedback>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub step: usize,
    pub features: Array2<f64>,
    pub action: Action,
    pub selected: usize,
    pub epsilon: f64,
    pub feedback: Feedback,
}

impl StepOutcome {
    pub fn reward(&self) -> f64 {
        self.feedback.reward
    }

    pub fn log_record(&self) -> StepLogRecord {
        StepLogRecord {
            step: self.step,
            example_id: self.feedback.example_id,
            selected: self.selected,
            reward: self.feedback.reward,
            ppl_before: self.feedback.ppl_before,
            ppl_after: self.feedback.ppl_after,
            epsilon: self.epsilon,
        }
    }
}

/// One line of the JSON-lines step log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLogRecord {
    pub step: usize,
    pub example_id: Option<u64>,
    pub selected: usize,
    pub reward: f64,
    pub ppl_before: Option<f64>,
    pub ppl_after: Option<f64>,
    pub epsilon: f64,
}

pub fn write_step_log<W: Write>(out: &mut W, records: &[StepLogRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut *out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_step_log(text: &str) -> Result<Vec<StepLogRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// Observe, act, select with exploration `epsilon`, apply. Does not touch
/// the replay buffer.
pub fn step<E: SelectionEnv>(
    env: &mut E,
    agent: &Agent,
    epsilon: f64,
    step: usize,
    rng: &mut ChaCha8Rng,
) -> Result<StepOutcome> {
    let features = env.observe(rng)?;
    let action = agent.act(features.view())?;
    let selected = select_index(&action, epsilon, rng);
    let feedback = env.apply(selected)?;
    Ok(StepOutcome {
        step,
        features,
        action,
        selected,
        epsilon,
        feedback,
    })
}

/// Validation perplexity keyed by model version.
#[derive(Debug, Clone, Default)]
pub struct ValidationCache {
    version: Option<u64>,
    nll: Vec<f64>,
    perplexity: f64,
    computations: usize,
}

impl ValidationCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Cached value for the model's version, computing it on a miss.
    pub fn perplexity<L: Learner>(&mut self, model: &L, val: &[ParallelExample]) -> Result<f64> {
        if self.version != Some(model.version()) {
            if val.is_empty() {
                return Err(Error::EmptyInput("validation set is empty".into()));
            }
            self.nll = model.log_likelihoods(val).into_iter().map(|ll| -ll).collect();
            let tokens: usize = val.iter().map(scored_tokens).sum();
            self.perplexity = (self.nll.iter().sum::<f64>() / tokens as f64).exp();
            self.version = Some(model.version());
            self.computations += 1;
        }
        Ok(self.perplexity)
    }

    /// Cached value without recomputation; a different model version is an
    /// error.
    pub fn cached<L: Learner>(&self, model: &L) -> Result<f64> {
        match self.version {
            Some(v) if v == model.version() => Ok(self.perplexity),
            cached => Err(Error::Cache {
                cached,
                current: model.version(),
            }),
        }
    }

    /// Per-example negative log-likelihoods of the cached version.
    pub fn nll(&self) -> &[f64] {
        &self.nll
    }

    pub fn computations(&self) -> usize {
        self.computations
    }
}

/// Translation-data environment over a training pool with precomputed
/// static features.
pub struct TranslationEnv<'a, L: Learner> {
    config: EnvConfig,
    model: L,
    pool: &'a [ParallelExample],
    statics: &'a [RawFeatures],
    val: &'a [ParallelExample],
    cache: ValidationCache,
    pending: Option<Vec<usize>>,
}

impl<'a, L: Learner> TranslationEnv<'a, L> {
    pub fn new(
        config: EnvConfig,
        model: L,
        pool: &'a [ParallelExample],
        statics: &'a [RawFeatures],
        val: &'a [ParallelExample],
    ) -> Result<Self> {
        config.validate()?;
        if statics.len() != pool.len() {
            return Err(Error::Shape("one static feature row per pool example is required".into()));
        }
        if val.is_empty() {
            return Err(Error::EmptyInput("validation set is empty".into()));
        }
        if pool.len() < config.batch_size {
            return Err(Error::InsufficientData {
                requested: config.batch_size,
                available: pool.len(),
            });
        }
        Ok(TranslationEnv {
            config,
            model,
            pool,
            statics,
            val,
            cache: ValidationCache::new(),
            pending: None,
        })
    }

    pub fn model(&self) -> &L {
        &self.model
    }

    pub fn into_model(self) -> L {
        self.model
    }

    pub fn cache(&self) -> &ValidationCache {
        &self.cache
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    /// Pool indices of the last observed batch.
    pub fn pending(&self) -> Option<&[usize]> {
        self.pending.as_deref()
    }

    /// Observes a given batch of pool indices instead of a random one.
    pub fn observe_indices(&mut self, indices: Vec<usize>) -> Result<Array2<f64>> {
        if indices.len() < 2 {
            return Err(Error::InvalidBatch(indices.len()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.pool.len()) {
            return Err(Error::InvalidInput(format!("pool index {bad} out of range")));
        }
        let examples: Vec<ParallelExample> = indices.iter().map(|&i| self.pool[i].clone()).collect();
        let statics = indices.iter().map(|&i| self.statics[i].clone()).collect();
        let features = stack(&complete(statics, &examples, &self.model));
        self.pending = Some(indices);
        Ok(features)
    }
}

impl<L: Learner> SelectionEnv for TranslationEnv<'_, L> {
    fn batch_size(&self) -> usize {
        self.config.batch_size
    }

    fn observe(&mut self, rng: &mut ChaCha8Rng) -> Result<Array2<f64>> {
        let indices = sample_batch(self.pool.len(), self.config.batch_size, rng)?;
        self.observe_indices(indices)
    }

    fn apply(&mut self, index: usize) -> Result<Feedback> {
        let indices = self
            .pending
            .take()
            .ok_or_else(|| Error::InvalidInput("apply called before observe".into()))?;
        let &chosen = indices
            .get(index)
            .ok_or_else(|| Error::InvalidInput(format!("index {index} outside batch of {}", indices.len())))?;
        let example = &self.pool[chosen];
        let ppl_before = self.cache.perplexity(&self.model, self.val)?;
        let snapshot = self.model.clone();
        self.model.train_on_example(example, self.config.sample_lr);
        let ppl_after = if self.config.revert_after_reward {
            let after = crate::learner::perplexity(&self.model, self.val)?;
            self.model = snapshot;
            after
        } else {
            self.cache.perplexity(&self.model, self.val)?
        };
        Ok(Feedback {
            reward: self.config.reward_scale * (ppl_before - ppl_after),
            example_id: Some(example.id),
            ppl_before: Some(ppl_before),
            ppl_after: Some(ppl_after),
        })
    }
}

/// Synthetic bandit: candidates have uniform random features and the
/// reward is one feature column of the chosen candidate.
#[derive(Debug, Clone)]
pub struct FeatureRewardEnv {
    batch_size: usize,
    column: usize,
    pending: Option<Array2<f64>>,
}

impl FeatureRewardEnv {
    pub fn new(batch_size: usize, column: usize) -> Result<Self> {
        if batch_size < 2 {
            return Err(Error::InvalidBatch(batch_size));
        }
        if column >= crate::features::FEATURE_DIM {
            return Err(Error::InvalidInput(format!("feature column {column} out of range")));
        }
        Ok(FeatureRewardEnv {
            batch_size,
            column,
            pending: None,
        })
    }

    /// A batch of uniform features in `[0, 1)`, with logp in `(−3, 0]`.
    pub fn draw(&self, rng: &mut ChaCha8Rng) -> Array2<f64> {
        let mut raw = Array2::from_shape_fn((self.batch_size, crate::features::FEATURE_DIM), |_| rng.gen::<f64>());
        raw.column_mut(crate::features::LOGP_RANGE.start).mapv_inplace(|v| -3.0 * v);
        raw
    }

    /// Index of the best candidate of `raw`.
    pub fn best(&self, raw: &Array2<f64>) -> usize {
        Action(raw.column(self.column).to_vec()).argmax()
    }
}

impl SelectionEnv for FeatureRewardEnv {
    fn batch_size(&self) -> usize {
        self.batch_size
    }

    fn observe(&mut self, rng: &mut ChaCha8Rng) -> Result<Array2<f64>> {
        let raw = self.draw(rng);
        self.pending = Some(raw.clone());
        Ok(raw)
    }

    fn apply(&mut self, index: usize) -> Result<Feedback> {
        let raw = self
            .pending
            .take()
            .ok_or_else(|| Error::InvalidInput("apply called before observe".into()))?;
        if index >= raw.nrows() {
            return Err(Error::InvalidInput(format!("index {index} outside batch of {}", raw.nrows())));
        }
        Ok(Feedback {
            reward: raw[(index, self.column)],
            example_id: None,
            ppl_before: None,
            ppl_after: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::AgentConfig;
    use crate::corpus::{Corpus, SyntheticConfig, SyntheticGenerator};
    use crate::features::FeatureContext;
    use crate::learner::{perplexity, ToyModel, ToyModelConfig};
    use rand::SeedableRng;

    struct Fixture {
        corpus: Corpus,
        val: Vec<ParallelExample>,
        statics: Vec<RawFeatures>,
        model: ToyModel,
    }

    fn fixture() -> Fixture {
        let gen = SyntheticGenerator::new(SyntheticConfig {
            size: 200,
            seed: 9,
            ..Default::default()
        })
        .unwrap();
        let corpus = gen.corpus();
        let val = gen.clean_split(40, 0, &corpus).examples;
        let ctx = FeatureContext::with_rule_taggers(&corpus).unwrap();
        let statics = ctx.static_features_all(&corpus.examples).unwrap();
        let model = ToyModel::new(corpus.source_vocab.len(), corpus.target_vocab.len(), ToyModelConfig::default());
        Fixture {
            corpus,
            val,
            statics,
            model,
        }
    }

    fn agent(b: usize) -> Agent {
        Agent::new(AgentConfig {
            batch_size: b,
            actor_hidden: [8, 8],
            critic_hidden: [8, 8],
            ..AgentConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn batches_are_distinct_reproducible_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut full = sample_batch(10, 10, &mut rng).unwrap();
        full.sort();
        assert_eq!(full, (0..10).collect::<Vec<_>>());
        let a = sample_batch(100, 16, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = sample_batch(100, 16, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
        let mut d = a.clone();
        d.sort();
        d.dedup();
        assert_eq!(d.len(), 16);
        assert!(matches!(
            sample_batch(3, 4, &mut rng),
            Err(Error::InsufficientData { requested: 4, available: 3 })
        ));
    }

    #[test]
    fn zero_rate_gives_zero_reward() {
        let f = fixture();
        let config = EnvConfig {
            batch_size: 4,
            sample_lr: 0.0,
            ..EnvConfig::default()
        };
        let mut env = TranslationEnv::new(config, f.model.clone(), &f.corpus.examples, &f.statics, &f.val).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let agent = agent(4);
        for s in 0..5 {
            let out = step(&mut env, &agent, 0.5, s, &mut rng).unwrap();
            assert_eq!(out.reward(), 0.0);
            assert_eq!(out.feedback.ppl_before, out.feedback.ppl_after);
        }
    }

    #[test]
    fn reward_is_scaled_perplexity_drop() {
        let f = fixture();
        let config = EnvConfig {
            batch_size: 4,
            sample_lr: 0.05,
            ..EnvConfig::default()
        };
        let mut env = TranslationEnv::new(config, f.model.clone(), &f.corpus.examples, &f.statics, &f.val).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        env.observe(&mut rng).unwrap();
        let chosen = f.corpus.examples[env.pending().unwrap()[1]].clone();
        let fb = env.apply(1).unwrap();
        let mut manual = f.model.clone();
        let before = perplexity(&manual, &f.val).unwrap();
        manual.train_on_example(&chosen, 0.05);
        let after = perplexity(&manual, &f.val).unwrap();
        assert_eq!(fb.ppl_before, Some(before));
        assert_eq!(fb.ppl_after, Some(after));
        assert!((fb.reward - 100.0 * (before - after)).abs() < 1e-12);
        // an untrained model improves on any step at this rate
        assert!(fb.reward > 0.0);
        assert_eq!(fb.example_id, Some(chosen.id));
    }

    #[test]
    fn reverting_keeps_the_model_fixed() {
        let f = fixture();
        let config = EnvConfig {
            batch_size: 4,
            sample_lr: 0.05,
            ..EnvConfig::default()
        };
        let mut env = TranslationEnv::new(config.clone(), f.model.clone(), &f.corpus.examples, &f.statics, &f.val).unwrap();
        let agent = agent(4);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let checksum = f.model.checksum();
        let mut befores = Vec::new();
        for s in 0..6 {
            befores.push(step(&mut env, &agent, 1.0, s, &mut rng).unwrap().feedback.ppl_before);
            assert_eq!(env.model().checksum(), checksum);
        }
        assert!(befores.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(env.cache().computations(), 1);

        let persistent = EnvConfig {
            revert_after_reward: false,
            ..config
        };
        let mut env = TranslationEnv::new(persistent, f.model.clone(), &f.corpus.examples, &f.statics, &f.val).unwrap();
        let a = step(&mut env, &agent, 1.0, 0, &mut rng).unwrap();
        let b = step(&mut env, &agent, 1.0, 1, &mut rng).unwrap();
        assert_ne!(env.model().checksum(), checksum);
        assert_eq!(b.feedback.ppl_before, a.feedback.ppl_after);
    }

    #[test]
    fn same_batch_twice_gives_identical_before() {
        let f = fixture();
        let config = EnvConfig {
            batch_size: 3,
            sample_lr: 0.05,
            ..EnvConfig::default()
        };
        let mut env = TranslationEnv::new(config, f.model.clone(), &f.corpus.examples, &f.statics, &f.val).unwrap();
        let x = env.observe_indices(vec![5, 9, 11]).unwrap();
        let r1 = env.apply(2).unwrap();
        let y = env.observe_indices(vec![5, 9, 11]).unwrap();
        let r2 = env.apply(2).unwrap();
        assert_eq!(x, y);
        assert_eq!(r1, r2);
    }

    #[test]
    fn cache_hits_misses_and_staleness() {
        let f = fixture();
        let mut model = f.model.clone();
        let mut cache = ValidationCache::new();
        assert!(matches!(cache.cached(&model), Err(Error::Cache { cached: None, .. })));
        let p = cache.perplexity(&model, &f.val).unwrap();
        assert!((p - perplexity(&model, &f.val).unwrap()).abs() <= 1e-12);
        cache.perplexity(&model, &f.val).unwrap();
        assert_eq!(cache.computations(), 1);
        assert_eq!(cache.cached(&model).unwrap(), p);
        model.train_on_example(&f.corpus.examples[0], 0.01);
        assert!(matches!(cache.cached(&model), Err(Error::Cache { .. })));
        cache.perplexity(&model, &f.val).unwrap();
        assert_eq!(cache.computations(), 2);
        assert_eq!(cache.nll().len(), f.val.len());
    }

    #[test]
    fn apply_needs_an_observed_batch() {
        let f = fixture();
        let mut env =
            TranslationEnv::new(EnvConfig::default(), f.model.clone(), &f.corpus.examples, &f.statics, &f.val).unwrap();
        assert!(env.apply(0).is_err());
        assert!(TranslationEnv::new(
            EnvConfig {
                batch_size: 1,
                ..EnvConfig::default()
            },
            f.model.clone(),
            &f.corpus.examples,
            &f.statics,
            &f.val
        )
        .is_err());
    }

    #[test]
    fn step_log_round_trips_as_json_lines() {
        let records = vec![
            StepLogRecord {
                step: 0,
                example_id: Some(4),
                selected: 1,
                reward: -0.25,
                ppl_before: Some(3.0),
                ppl_after: Some(3.0025),
                epsilon: 1.0,
            },
            StepLogRecord {
                step: 1,
                example_id: None,
                selected: 0,
                reward: 0.5,
                ppl_before: None,
                ppl_after: None,
                epsilon: 0.9,
            },
        ];
        let mut buf = Vec::new();
        write_step_log(&mut buf, &records).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.lines().next().unwrap().contains("\"ppl_before\":3.0"));
        assert_eq!(read_step_log(&text).unwrap(), records);
    }
}
