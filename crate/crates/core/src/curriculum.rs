//! Round-based driver: train a fresh agent against the current model, keep
//! the policy with the best trailing reward window, select one example per
//! candidate batch and fine-tune on the selection.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{Agent, AgentConfig, AgentNetworks};
use crate::corpus::{corruption_rate, ParallelExample};
use crate::env::{step, EnvConfig, SelectionEnv, StepLogRecord, TranslationEnv};
use crate::error::{Error, Result};
use crate::eval::evaluate_model;
use crate::features::{complete, stack, RawFeatures};
use crate::learner::{perplexity, train_epoch, Learner};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// The rate decays linearly to `lr · final_lr_fraction` at the last epoch.
    pub final_lr_fraction: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 30,
            lr: 0.02,
            final_lr_fraction: 0.02,
            seed: 3,
        }
    }
}

impl PretrainConfig {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.lr;
        }
        let t = epoch as f64 / (self.epochs - 1) as f64;
        self.lr * (1.0 + (self.final_lr_fraction - 1.0) * t)
    }

    pub fn final_lr(&self) -> f64 {
        self.lr_at(self.epochs.saturating_sub(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub train_loss: Vec<f64>,
    pub val_perplexity: Vec<f64>,
}

/// Epoch training from scratch with the decaying schedule.
pub fn pretrain<L: Learner>(
    model: &mut L,
    train: &[ParallelExample],
    val: &[ParallelExample],
    config: &PretrainConfig,
) -> Result<PretrainReport> {
    if train.is_empty() {
        return Err(Error::EmptyInput("pretraining data is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut report = PretrainReport {
        train_loss: Vec::with_capacity(config.epochs),
        val_perplexity: Vec::with_capacity(config.epochs),
    };
    for epoch in 0..config.epochs {
        report.train_loss.push(train_epoch(model, train, config.lr_at(epoch), &mut rng));
        report.val_perplexity.push(perplexity(model, val)?);
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneConfig {
    pub max_epochs: usize,
    pub lr: f64,
    /// Stop after this many epochs without a new best validation perplexity.
    pub patience: usize,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            max_epochs: 20,
            lr: 4e-4,
            patience: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneReport {
    /// Validation perplexity before training, then after every epoch run.
    pub val_perplexity: Vec<f64>,
    /// Epoch whose model is returned; 0 means the input model.
    pub best_epoch: usize,
}

impl FinetuneReport {
    pub fn best(&self) -> f64 {
        self.val_perplexity[self.best_epoch]
    }
}

/// Epoch training on `data`, keeping the model with the lowest validation
/// perplexity seen (the input model included).
pub fn finetune<L: Learner>(
    model: &mut L,
    data: &[ParallelExample],
    val: &[ParallelExample],
    config: &FinetuneConfig,
    rng: &mut ChaCha8Rng,
) -> Result<FinetuneReport> {
    if data.is_empty() {
        return Err(Error::InvalidInput("fine-tuning set is empty".into()));
    }
    let mut trace = vec![perplexity(model, val)?];
    let mut best = (0, trace[0], model.clone());
    for epoch in 1..=config.max_epochs {
        train_epoch(model, data, config.lr, rng);
        let ppl = perplexity(model, val)?;
        trace.push(ppl);
        if ppl < best.1 {
            best = (epoch, ppl, model.clone());
        } else if epoch - best.0 >= config.patience {
            break;
        }
    }
    *model = best.2;
    Ok(FinetuneReport {
        val_perplexity: trace,
        best_epoch: best.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoundConfig {
    pub batch_size: usize,
    pub steps: usize,
    /// Length of the trailing reward window used to pick the checkpoint.
    pub best_window: usize,
}

impl Default for RoundConfig {
    fn default() -> Self {
        RoundConfig {
            batch_size: 16,
            steps: 20_000,
            best_window: 1000,
        }
    }
}

impl RoundConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config("round batch_size must be at least 2".into()));
        }
        if self.best_window == 0 || self.steps < self.best_window {
            return Err(Error::Config("steps must be at least best_window, which must be positive".into()));
        }
        Ok(())
    }

    /// Number of examples selected from a pool of `pool` examples.
    pub fn selection_size(&self, pool: usize) -> usize {
        pool / self.batch_size
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Target networks at the best step.
    pub best_policy: AgentNetworks,
    pub best_step: usize,
    pub best_window_sum: f64,
    pub rewards: Vec<f64>,
    pub log: Vec<StepLogRecord>,
}

/// Sum of `rewards[end+1-window ..= end]`.
pub fn window_sum(rewards: &[f64], end: usize, window: usize) -> f64 {
    rewards[end + 1 - window..=end].iter().sum()
}

/// Step whose trailing window sum is largest, ties to the later step.
pub fn best_window_end(rewards: &[f64], window: usize) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for end in window.saturating_sub(1)..rewards.len() {
        let s = window_sum(rewards, end, window);
        if best.is_none_or(|(_, b)| s >= b) {
            best = Some((end, s));
        }
    }
    best
}

/// Runs `config.steps` environment steps; learning starts after the agent's
/// warm-up. Returns the target policy at the end of the best reward window.
pub fn train_agent<E: SelectionEnv>(
    env: &mut E,
    agent: &mut Agent,
    config: &RoundConfig,
    rng: &mut ChaCha8Rng,
) -> Result<TrainOutcome> {
    config.validate()?;
    if env.batch_size() != agent.config.batch_size {
        return Err(Error::Config(format!(
            "environment batch {} differs from agent batch {}",
            env.batch_size(),
            agent.config.batch_size
        )));
    }
    let mut rewards = Vec::with_capacity(config.steps);
    let mut log = Vec::with_capacity(config.steps);
    let mut best: Option<(usize, f64, AgentNetworks)> = None;
    for s in 0..config.steps {
        let out = step(env, agent, agent.epsilon(s), s, rng)?;
        rewards.push(out.reward());
        log.push(out.log_record());
        agent.record(out.features, out.selected, out.feedback.reward)?;
        if s >= agent.config.warmup {
            agent.learn()?;
        }
        if s + 1 >= config.best_window {
            let sum = window_sum(&rewards, s, config.best_window);
            if best.as_ref().is_none_or(|(_, b, _)| sum >= *b) {
                best = Some((s, sum, agent.target.clone()));
            }
        }
    }
    let (best_step, best_window_sum, best_policy) = best.expect("steps >= best_window");
    Ok(TrainOutcome {
        best_policy,
        best_step,
        best_window_sum,
        rewards,
        log,
    })
}

/// Shuffles `0..pool`, cuts it into batches of `b` (the remainder is
/// skipped) and keeps `choose(batch)` from each.
pub fn select_with<F>(pool: usize, b: usize, rng: &mut ChaCha8Rng, mut choose: F) -> Result<Vec<usize>>
where
    F: FnMut(&[usize]) -> Result<usize>,
{
    if b < 2 {
        return Err(Error::InvalidBatch(b));
    }
    let mut order: Vec<usize> = (0..pool).collect();
    order.shuffle(rng);
    order
        .chunks_exact(b)
        .map(|batch| {
            let k = choose(batch)?;
            batch
                .get(k)
                .copied()
                .ok_or_else(|| Error::InvalidInput(format!("choice {k} outside batch of {b}")))
        })
        .collect()
}

/// Greedy selection with `policy`; returns pool indices.
pub fn select_subset<L: Learner>(
    pool: &[ParallelExample],
    statics: &[RawFeatures],
    model: &L,
    policy: &AgentNetworks,
    b: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    if statics.len() != pool.len() {
        return Err(Error::Shape("one static feature row per pool example is required".into()));
    }
    select_with(pool.len(), b, rng, |batch| {
        let examples: Vec<ParallelExample> = batch.iter().map(|&i| pool[i].clone()).collect();
        let raw = batch.iter().map(|&i| statics[i].clone()).collect();
        let features = stack(&complete(raw, &examples, model));
        Ok(policy.act_raw(features.view())?.argmax())
    })
}

/// Uniformly random subset of `k` pool indices.
pub fn random_subset(pool: usize, k: usize, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    crate::env::sample_batch(pool, k, rng)
}

pub fn gather(pool: &[ParallelExample], indices: &[usize]) -> Vec<ParallelExample> {
    indices.iter().map(|&i| pool[i].clone()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub batch_size: usize,
    pub steps: usize,
    pub best_step: usize,
    pub best_window_sum: f64,
    /// Parameter checksum of the freshly built agent.
    pub initial_agent_checksum: u64,
    pub selected_ids: Vec<u64>,
    pub subset_size: usize,
    pub subset_corruption_rate: f64,
    pub val_perplexity_before: f64,
    pub val_perplexity_after: f64,
    pub finetune: FinetuneReport,
    pub test_bleu_before: f64,
    pub test_bleu_after: f64,
    pub rewards: Vec<f64>,
}

impl RoundReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// `step<TAB>reward` lines with a header.
    pub fn write_reward_trace<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "step\treward")?;
        for (s, r) in self.rewards.iter().enumerate() {
            writeln!(out, "{s}\t{r}")?;
        }
        Ok(())
    }
}

/// Everything a round reads besides the model.
#[derive(Clone, Copy)]
pub struct RoundData<'a> {
    pub pool: &'a [ParallelExample],
    pub statics: &'a [RawFeatures],
    pub val: &'a [ParallelExample],
    pub test: &'a [ParallelExample],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurriculumConfig {
    pub rounds: Vec<RoundConfig>,
    /// `batch_size` is taken from each round.
    pub agent: AgentConfig,
    /// `batch_size` is taken from each round.
    pub env: EnvConfig,
    pub finetune: FinetuneConfig,
    pub seed: u64,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        CurriculumConfig {
            rounds: vec![
                RoundConfig {
                    batch_size: 16,
                    ..RoundConfig::default()
                },
                RoundConfig {
                    batch_size: 128,
                    ..RoundConfig::default()
                },
            ],
            agent: AgentConfig::default(),
            env: EnvConfig::default(),
            finetune: FinetuneConfig::default(),
            seed: 5,
        }
    }
}

fn round_rng(seed: u64, round: usize, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (round as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    rng.set_stream(stream);
    rng
}

/// One round: fresh agent, training, selection, fine-tuning. Also returns
/// the agent as it stood after the last step.
pub fn run_round<L: Learner>(
    model: &mut L,
    data: RoundData<'_>,
    round: usize,
    round_config: &RoundConfig,
    config: &CurriculumConfig,
) -> Result<(RoundReport, TrainOutcome, Agent)> {
    round_config.validate()?;
    let b = round_config.batch_size;
    let agent_config = AgentConfig {
        batch_size: b,
        seed: config.agent.seed.wrapping_add(round as u64),
        ..config.agent.clone()
    };
    let mut agent = Agent::new(agent_config)?;
    let initial_agent_checksum = agent.online.checksum();
    let env_config = EnvConfig {
        batch_size: b,
        ..config.env.clone()
    };
    let mut env = TranslationEnv::new(env_config, model.clone(), data.pool, data.statics, data.val)?;
    let outcome = train_agent(&mut env, &mut agent, round_config, &mut round_rng(config.seed, round, 0))?;
    drop(env);

    let indices = select_subset(
        data.pool,
        data.statics,
        model,
        &outcome.best_policy,
        b,
        &mut round_rng(config.seed, round, 1),
    )?;
    let subset = gather(data.pool, &indices);
    let (before, _) = evaluate_model(model, data.test)?;
    let ft = finetune(model, &subset, data.val, &config.finetune, &mut round_rng(config.seed, round, 2))?;
    let (after, _) = evaluate_model(model, data.test)?;
    let report = RoundReport {
        round,
        batch_size: b,
        steps: round_config.steps,
        best_step: outcome.best_step,
        best_window_sum: outcome.best_window_sum,
        initial_agent_checksum,
        selected_ids: subset.iter().map(|e| e.id).collect(),
        subset_size: subset.len(),
        subset_corruption_rate: corruption_rate(&subset),
        val_perplexity_before: ft.val_perplexity[0],
        val_perplexity_after: ft.best(),
        finetune: ft,
        test_bleu_before: before.bleu,
        test_bleu_after: after.bleu,
        rewards: outcome.rewards.clone(),
    };
    Ok((report, outcome, agent))
}

/// All configured rounds; round k+1 starts from round k's fine-tuned model.
pub fn run<L: Learner>(mut model: L, data: RoundData<'_>, config: &CurriculumConfig) -> Result<(L, Vec<RoundReport>)> {
    let mut reports = Vec::with_capacity(config.rounds.len());
    for (k, rc) in config.rounds.iter().enumerate() {
        let (report, _, _) = run_round(&mut model, data, k + 1, rc, config)?;
        reports.push(report);
    }
    Ok((model, reports))
}
