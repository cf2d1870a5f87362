//! File-backed experiment pipeline: a TOML configuration plus the five
//! stages `generate`, `pretrain`, `run-rl`, `run-baseline` and `report`,
//! each reading the artifacts of the stages before it from one directory.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::AgentConfig;
use crate::baselines::{
    score_denoise, score_length, score_rarity, scored, select_top, train_trusted, write_scores, RarityTable,
    TrustedConfig,
};
use crate::corpus::{
    corruption_rate, load_corpus, load_corpus_with_vocab, save_corpus, Corpus, ParallelExample, SyntheticConfig,
    SyntheticGenerator,
};
use crate::curriculum::{
    finetune, pretrain, run_round, CurriculumConfig, FinetuneConfig, FinetuneReport, PretrainConfig, PretrainReport,
    RoundConfig, RoundData, RoundReport,
};
use crate::env::{write_step_log, EnvConfig};
use crate::error::{Error, Result};
use crate::eval::{evaluate_metrics, Metrics};
use crate::features::FeatureContext;
use crate::learner::{ToyModel, ToyModelConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub validation: usize,
    pub test: usize,
    /// Small clean set used only by the denoising baseline.
    pub trusted: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            validation: 500,
            test: 500,
            trusted: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RlConfig {
    pub rounds: Vec<RoundConfig>,
    pub agent: AgentConfig,
    pub env: EnvConfig,
    pub seed: u64,
}

impl Default for RlConfig {
    fn default() -> Self {
        let round = |batch_size| RoundConfig {
            batch_size,
            steps: 2_000,
            best_window: 1_000,
        };
        RlConfig {
            rounds: vec![round(8), round(32)],
            agent: AgentConfig {
                actor_batch: 8,
                anneal_end: 1_000,
                ..AgentConfig::default()
            },
            env: EnvConfig::default(),
            seed: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    /// Share of the pool each heuristic keeps.
    pub fraction: f64,
    pub trusted: TrustedConfig,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            fraction: 0.2,
            trusted: TrustedConfig::default(),
            seed: 9,
        }
    }
}

/// Whole-experiment configuration. `Default` is a laptop-sized run;
/// [`ExperimentConfig::full_scale`] uses 20k agent steps per round with
/// batches of 16 and 128.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    pub corpus: SyntheticConfig,
    pub splits: SplitConfig,
    pub model: ToyModelConfig,
    pub pretrain: PretrainConfig,
    /// Shared by the agent rounds and the baselines.
    pub finetune: FinetuneConfig,
    pub rl: RlConfig,
    pub baselines: BaselineConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            output_dir: PathBuf::from("runs/default"),
            corpus: SyntheticConfig::default(),
            splits: SplitConfig::default(),
            model: ToyModelConfig::default(),
            pretrain: PretrainConfig::default(),
            finetune: FinetuneConfig::default(),
            rl: RlConfig::default(),
            baselines: BaselineConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn full_scale() -> Self {
        let full = CurriculumConfig::default();
        ExperimentConfig {
            rl: RlConfig {
                rounds: full.rounds,
                agent: full.agent,
                env: full.env,
                seed: full.seed,
            },
            ..ExperimentConfig::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::ConfigFile {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::from_toml(&text).map_err(|e| Error::ConfigFile {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        for (name, n) in [
            ("validation", self.splits.validation),
            ("test", self.splits.test),
            ("trusted", self.splits.trusted),
        ] {
            if n == 0 {
                return Err(Error::Config(format!("splits.{name} must be positive")));
            }
        }
        if self.model.embed_dim == 0 || self.model.hidden == 0 || self.model.max_len == 0 {
            return Err(Error::Config("model sizes must be positive".into()));
        }
        if self.pretrain.epochs == 0 || !(self.pretrain.lr > 0.0) {
            return Err(Error::Config("pretrain needs epochs and a positive lr".into()));
        }
        if !(self.finetune.lr > 0.0) {
            return Err(Error::Config("finetune.lr must be positive".into()));
        }
        if self.rl.rounds.is_empty() {
            return Err(Error::Config("rl.rounds is empty".into()));
        }
        for rc in &self.rl.rounds {
            rc.validate()?;
            AgentConfig {
                batch_size: rc.batch_size,
                ..self.rl.agent.clone()
            }
            .validate()?;
            EnvConfig {
                batch_size: rc.batch_size,
                ..self.rl.env.clone()
            }
            .validate()?;
            if rc.batch_size > self.corpus.size {
                return Err(Error::Config(format!(
                    "round batch {} exceeds the corpus size {}",
                    rc.batch_size, self.corpus.size
                )));
            }
        }
        let f = self.baselines.fraction;
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::Config(format!("baselines.fraction {f} outside (0, 1]")));
        }
        Ok(())
    }

    pub fn curriculum(&self) -> CurriculumConfig {
        CurriculumConfig {
            rounds: self.rl.rounds.clone(),
            agent: self.rl.agent.clone(),
            env: self.rl.env.clone(),
            finetune: self.finetune.clone(),
            seed: self.rl.seed,
        }
    }

    pub fn artifacts(&self) -> Artifacts {
        Artifacts::new(&self.output_dir)
    }
}

/// Heuristic data-selection baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Baseline {
    SentLen,
    Rarity,
    Denoise,
}

impl Baseline {
    pub const ALL: [Baseline; 3] = [Baseline::SentLen, Baseline::Rarity, Baseline::Denoise];

    pub fn name(self) -> &'static str {
        match self {
            Baseline::SentLen => "SentLen",
            Baseline::Rarity => "Rarity",
            Baseline::Denoise => "Denoise",
        }
    }

    fn slug(self) -> &'static str {
        match self {
            Baseline::SentLen => "sentlen",
            Baseline::Rarity => "rarity",
            Baseline::Denoise => "denoise",
        }
    }
}

impl fmt::Display for Baseline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Baseline::ALL
            .into_iter()
            .find(|b| b.slug() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidInput(format!("unknown baseline {s:?} (sentlen, rarity, denoise)")))
    }
}

/// Paths of every file the pipeline reads or writes.
#[derive(Debug, Clone)]
pub struct Artifacts {
    root: PathBuf,
}

impl Artifacts {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Artifacts { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn corpus(&self) -> PathBuf {
        self.root.join("corpus.tsv")
    }
    pub fn validation(&self) -> PathBuf {
        self.root.join("validation.tsv")
    }
    pub fn test(&self) -> PathBuf {
        self.root.join("test.tsv")
    }
    pub fn trusted(&self) -> PathBuf {
        self.root.join("trusted.tsv")
    }
    pub fn base_model(&self) -> PathBuf {
        self.root.join("model_base.json")
    }
    pub fn base_metrics(&self) -> PathBuf {
        self.root.join("metrics_base.json")
    }
    pub fn pretrain_trace(&self) -> PathBuf {
        self.root.join("pretrain.json")
    }

    pub fn round_dir(&self, round: usize) -> PathBuf {
        self.root.join("rl").join(format!("round{round}"))
    }
    pub fn round_report(&self, round: usize) -> PathBuf {
        self.round_dir(round).join("report.json")
    }
    pub fn round_rewards(&self, round: usize) -> PathBuf {
        self.round_dir(round).join("rewards.tsv")
    }
    pub fn round_steps(&self, round: usize) -> PathBuf {
        self.round_dir(round).join("steps.jsonl")
    }
    pub fn round_agent(&self, round: usize) -> PathBuf {
        self.round_dir(round).join("agent.json")
    }
    pub fn round_policy(&self, round: usize) -> PathBuf {
        self.round_dir(round).join("policy.json")
    }
    pub fn round_model(&self, round: usize) -> PathBuf {
        self.round_dir(round).join("model.json")
    }
    pub fn round_metrics(&self, round: usize) -> PathBuf {
        self.round_dir(round).join("metrics.json")
    }

    pub fn baseline_dir(&self, method: Baseline) -> PathBuf {
        self.root.join("baselines").join(method.slug())
    }
    pub fn baseline_scores(&self, method: Baseline) -> PathBuf {
        self.baseline_dir(method).join("scores.tsv")
    }
    pub fn baseline_summary(&self, method: Baseline) -> PathBuf {
        self.baseline_dir(method).join("summary.json")
    }
    pub fn baseline_model(&self, method: Baseline) -> PathBuf {
        self.baseline_dir(method).join("model.json")
    }
    pub fn baseline_metrics(&self, method: Baseline) -> PathBuf {
        self.baseline_dir(method).join("metrics.json")
    }

    pub fn report_json(&self) -> PathBuf {
        self.root.join("report.json")
    }
    pub fn report_tsv(&self) -> PathBuf {
        self.root.join("report.tsv")
    }
}

fn require(path: &Path, stage: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::MissingArtifact {
            path: path.to_path_buf(),
            stage: stage.to_string(),
        })
    }
}

fn read_artifact(path: &Path, stage: &str) -> Result<String> {
    require(path, stage)?;
    Ok(fs::read_to_string(path)?)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, contents)?;
    Ok(())
}

/// The pool and the three clean splits, sharing one pair of vocabularies.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub corpus: Corpus,
    pub validation: Vec<ParallelExample>,
    pub test: Vec<ParallelExample>,
    pub trusted: Vec<ParallelExample>,
}

impl Dataset {
    pub fn load(artifacts: &Artifacts) -> Result<Self> {
        require(&artifacts.corpus(), "generate")?;
        let corpus = load_corpus(artifacts.corpus())?;
        let split = |path: PathBuf| -> Result<Vec<ParallelExample>> {
            require(&path, "generate")?;
            Ok(load_corpus_with_vocab(&path, &corpus)?.examples)
        };
        Ok(Dataset {
            validation: split(artifacts.validation())?,
            test: split(artifacts.test())?,
            trusted: split(artifacts.trusted())?,
            corpus,
        })
    }

    fn fresh_model(&self, config: &ToyModelConfig) -> ToyModel {
        ToyModel::new(
            self.corpus.source_vocab.len(),
            self.corpus.target_vocab.len(),
            config.clone(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateSummary {
    pub size: usize,
    pub corruption_rate: f64,
    pub source_vocab: usize,
    pub target_vocab: usize,
    pub validation: usize,
    pub test: usize,
    pub trusted: usize,
}

/// Writes the noisy pool and the clean validation, test and trusted splits.
pub fn generate(config: &ExperimentConfig) -> Result<GenerateSummary> {
    config.validate()?;
    let artifacts = config.artifacts();
    fs::create_dir_all(artifacts.root())?;
    let generator = SyntheticGenerator::new(config.corpus.clone())?;
    let corpus = generator.corpus();
    let validation = generator.clean_split(config.splits.validation, 0, &corpus);
    let test = generator.clean_split(config.splits.test, 1, &corpus);
    let trusted = generator.clean_split(config.splits.trusted, 2, &corpus);
    save_corpus(&corpus, artifacts.corpus())?;
    save_corpus(&validation, artifacts.validation())?;
    save_corpus(&test, artifacts.test())?;
    save_corpus(&trusted, artifacts.trusted())?;
    Ok(GenerateSummary {
        size: corpus.len(),
        corruption_rate: corpus.corruption_rate(),
        source_vocab: corpus.source_vocab.len(),
        target_vocab: corpus.target_vocab.len(),
        validation: validation.len(),
        test: test.len(),
        trusted: trusted.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainSummary {
    pub report: PretrainReport,
    pub metrics: Metrics,
}

/// Trains the base model on the whole pool and evaluates it on the test split.
pub fn run_pretrain(config: &ExperimentConfig) -> Result<PretrainSummary> {
    config.validate()?;
    let artifacts = config.artifacts();
    let data = Dataset::load(&artifacts)?;
    let mut model = data.fresh_model(&config.model);
    let report = pretrain(&mut model, &data.corpus.examples, &data.validation, &config.pretrain)?;
    let metrics = evaluate_metrics(&model, &data.test)?;
    write_file(&artifacts.base_model(), &model.to_json())?;
    write_file(&artifacts.pretrain_trace(), &serde_json::to_string_pretty(&report)?)?;
    write_file(&artifacts.base_metrics(), &metrics.to_json())?;
    Ok(PretrainSummary { report, metrics })
}

pub fn load_base_model(artifacts: &Artifacts) -> Result<ToyModel> {
    ToyModel::from_json(&read_artifact(&artifacts.base_model(), "pretrain")?)
}

/// All configured agent rounds starting from the base model. Round `k`
/// writes its report, reward trace, step log, agent and policy checkpoints,
/// fine-tuned model and test metrics under `rl/round{k}`.
pub fn run_rl(config: &ExperimentConfig) -> Result<Vec<RoundReport>> {
    config.validate()?;
    let artifacts = config.artifacts();
    let data = Dataset::load(&artifacts)?;
    let mut model = load_base_model(&artifacts)?;
    let context = FeatureContext::with_rule_taggers(&data.corpus)?;
    let statics = context.static_features_all(&data.corpus.examples)?;
    let round_data = RoundData {
        pool: &data.corpus.examples,
        statics: &statics,
        val: &data.validation,
        test: &data.test,
    };
    let curriculum = config.curriculum();
    let mut reports = Vec::with_capacity(curriculum.rounds.len());
    for (i, rc) in curriculum.rounds.iter().enumerate() {
        let round = i + 1;
        let (report, outcome, agent) = run_round(&mut model, round_data, round, rc, &curriculum)?;
        fs::create_dir_all(artifacts.round_dir(round))?;
        write_file(&artifacts.round_report(round), &report.to_json())?;
        let mut rewards = BufWriter::new(File::create(artifacts.round_rewards(round))?);
        report.write_reward_trace(&mut rewards)?;
        rewards.flush()?;
        let mut steps = BufWriter::new(File::create(artifacts.round_steps(round))?);
        write_step_log(&mut steps, &outcome.log)?;
        steps.flush()?;
        write_file(&artifacts.round_agent(round), &agent.to_json())?;
        write_file(&artifacts.round_policy(round), &outcome.best_policy.to_json())?;
        write_file(&artifacts.round_model(round), &model.to_json())?;
        write_file(&artifacts.round_metrics(round), &evaluate_metrics(&model, &data.test)?.to_json())?;
        reports.push(report);
    }
    Ok(reports)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineSummary {
    pub method: Baseline,
    pub selected: usize,
    pub selection_corruption_rate: f64,
    pub finetune: FinetuneReport,
    pub metrics: Metrics,
}

/// Per-example scores for `method` over the pool; higher means keep.
pub fn baseline_scores(method: Baseline, data: &Dataset, base: &ToyModel, config: &BaselineConfig) -> Result<Vec<f64>> {
    let pool = &data.corpus.examples;
    Ok(match method {
        Baseline::SentLen => pool.iter().map(score_length).collect(),
        Baseline::Rarity => {
            let table = RarityTable::build(pool)?;
            pool.iter().map(|e| score_rarity(e, &table)).collect()
        }
        Baseline::Denoise => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let trusted = train_trusted(base, &data.trusted, &config.trusted, &mut rng)?;
            score_denoise(pool, base, &trusted)
        }
    })
}

/// Scores the pool, keeps the top fraction and fine-tunes the base model on it.
pub fn run_baseline(config: &ExperimentConfig, method: Baseline) -> Result<BaselineSummary> {
    config.validate()?;
    let artifacts = config.artifacts();
    let data = Dataset::load(&artifacts)?;
    let base = load_base_model(&artifacts)?;
    let scores = scored(&data.corpus.examples, baseline_scores(method, &data, &base, &config.baselines)?);
    let top = select_top(&scores, config.baselines.fraction)?;
    let by_id: std::collections::HashMap<u64, &ParallelExample> =
        data.corpus.examples.iter().map(|e| (e.id, e)).collect();
    let subset: Vec<ParallelExample> = top.iter().map(|s| by_id[&s.id].clone()).collect();

    let mut model = base;
    let mut rng = ChaCha8Rng::seed_from_u64(config.baselines.seed.wrapping_add(1));
    let ft = finetune(&mut model, &subset, &data.validation, &config.finetune, &mut rng)?;
    let metrics = evaluate_metrics(&model, &data.test)?;

    fs::create_dir_all(artifacts.baseline_dir(method))?;
    let mut out = BufWriter::new(File::create(artifacts.baseline_scores(method))?);
    write_scores(&mut out, &scores)?;
    out.flush()?;
    let summary = BaselineSummary {
        method,
        selected: subset.len(),
        selection_corruption_rate: corruption_rate(&subset),
        finetune: ft,
        metrics,
    };
    write_file(&artifacts.baseline_summary(method), &serde_json::to_string_pretty(&summary)?)?;
    write_file(&artifacts.baseline_model(method), &model.to_json())?;
    write_file(&artifacts.baseline_metrics(method), &metrics.to_json())?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub bleu: f64,
    pub delta_bleu: f64,
    pub perplexity: f64,
    pub delta_perplexity: f64,
    /// Share of corrupted pairs in the data the model was last trained on.
    pub corruption_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub rows: Vec<ReportRow>,
}

impl ComparisonReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("method\tbleu\tdelta_bleu\tperplexity\tdelta_perplexity\tcorruption_rate\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{}\t{:.4}\t{:+.4}\t{:.4}\t{:+.4}\t{:.4}\n",
                r.method, r.bleu, r.delta_bleu, r.perplexity, r.delta_perplexity, r.corruption_rate
            ));
        }
        out
    }

    pub fn row(&self, method: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.method == method)
    }
}

/// Collects base, baseline and per-round metrics into one table with
/// differences against the base model.
pub fn report(config: &ExperimentConfig) -> Result<ComparisonReport> {
    let artifacts = config.artifacts();
    let base = Metrics::from_json(&read_artifact(&artifacts.base_metrics(), "pretrain")?)?;
    require(&artifacts.corpus(), "generate")?;
    let pool_rate = load_corpus(artifacts.corpus())?.corruption_rate();
    let row = |method: String, m: &Metrics, rate: f64| ReportRow {
        method,
        bleu: m.bleu,
        delta_bleu: m.bleu - base.bleu,
        perplexity: m.perplexity,
        delta_perplexity: m.perplexity - base.perplexity,
        corruption_rate: rate,
    };
    let mut rows = vec![row("Base".into(), &base, pool_rate)];
    for method in Baseline::ALL {
        let stage = format!("run-baseline {}", method.slug());
        let summary: BaselineSummary =
            serde_json::from_str(&read_artifact(&artifacts.baseline_summary(method), &stage)?)?;
        rows.push(row(method.name().into(), &summary.metrics, summary.selection_corruption_rate));
    }
    for round in 1..=config.rl.rounds.len() {
        let rr = RoundReport::from_json(&read_artifact(&artifacts.round_report(round), "run-rl")?)?;
        let m = Metrics::from_json(&read_artifact(&artifacts.round_metrics(round), "run-rl")?)?;
        let name = if round == 1 {
            "RL-1round".to_string()
        } else {
            format!("RL-{round}rounds")
        };
        rows.push(row(name, &m, rr.subset_corruption_rate));
    }
    let report = ComparisonReport { rows };
    write_file(&artifacts.report_json(), &report.to_json())?;
    write_file(&artifacts.report_tsv(), &report.to_tsv())?;
    Ok(report)
}
