//! Translation-model contract and the toy conditional model used for
//! desk-scale experiments.
//!
//! The toy model predicts target token `i` from the mean source embedding,
//! the embedding of the previous target token (BOS first), the scaled step
//! index and the scaled source length, through a ReLU layer and a softmax
//! over the target vocabulary. EOS is predicted and scored; BOS never is.

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{s, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{ParallelExample, Sentence, TokenId, BOS, EOS};
use crate::error::{Error, Result};
use crate::neural::{Activation, DenseLayer, Network, NetworkRecord, Parameterized, CHECKPOINT_VERSION};

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

/// A fresh, process-unique parameter version.
pub fn fresh_version() -> u64 {
    NEXT_VERSION.fetch_add(1, Ordering::Relaxed)
}

/// Number of scored positions of an example: every target token plus EOS.
pub fn scored_tokens(example: &ParallelExample) -> usize {
    example.target.len() + 1
}

/// Behaviour the selection framework needs from a translation model.
pub trait Learner: Clone + Send + Sync {
    /// `log p(y | x)` summed over target tokens and EOS.
    fn log_likelihood(&self, example: &ParallelExample) -> f64;

    fn log_likelihoods(&self, examples: &[ParallelExample]) -> Vec<f64> {
        examples.iter().map(|e| self.log_likelihood(e)).collect()
    }

    /// One SGD step on `−log p(y | x)`; returns the loss before the step.
    fn train_on_example(&mut self, example: &ParallelExample, lr: f64) -> f64;

    /// Greedy decoding; at most `max_len` tokens, EOS excluded.
    fn decode(&self, source: &Sentence, max_len: usize) -> Vec<TokenId>;

    fn snapshot(&self) -> Vec<u8>;

    fn restore(&mut self, blob: &[u8]) -> Result<()>;

    /// Changes whenever the parameters change; equal versions imply equal
    /// parameters.
    fn version(&self) -> u64;
}

/// Token-averaged perplexity, `exp(−Σ log p / Σ scored tokens)`.
pub fn perplexity<L: Learner>(model: &L, dataset: &[ParallelExample]) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyInput("perplexity of an empty dataset".into()));
    }
    let ll: f64 = model.log_likelihoods(dataset).iter().sum();
    let tokens: usize = dataset.iter().map(scored_tokens).sum();
    Ok((-ll / tokens as f64).exp())
}

/// One shuffled pass of per-example SGD; returns the mean pre-step loss.
pub fn train_epoch<L: Learner>(
    model: &mut L,
    examples: &[ParallelExample],
    lr: f64,
    rng: &mut impl Rng,
) -> f64 {
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(rng);
    let total: f64 = order
        .into_iter()
        .map(|i| model.train_on_example(&examples[i], lr))
        .sum();
    total / examples.len().max(1) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyModelConfig {
    pub embed_dim: usize,
    pub hidden: usize,
    /// Position and length inputs are divided by this.
    pub max_len: usize,
    pub seed: u64,
}

impl Default for ToyModelConfig {
    fn default() -> Self {
        ToyModelConfig {
            embed_dim: 16,
            hidden: 64,
            max_len: 16,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    config: ToyModelConfig,
    source_embeddings: Array2<f64>,
    target_embeddings: Array2<f64>,
    output: Network,
    version: u64,
}

/// Gradients of the toy model's loss, shaped like its parameters.
#[derive(Debug, Clone)]
pub struct ToyGradients {
    pub source_embeddings: Array2<f64>,
    pub target_embeddings: Array2<f64>,
    pub output: crate::neural::Gradients,
}

impl ToyGradients {
    pub fn flatten(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.source_embeddings.iter().copied().collect();
        v.extend(self.target_embeddings.iter());
        v.extend(self.output.flatten());
        v
    }
}

#[derive(Serialize, Deserialize)]
struct ToyCheckpoint {
    format_version: u32,
    config: ToyModelConfig,
    source_vocab: usize,
    target_vocab: usize,
    /// Row-major `source_vocab × embed_dim`.
    source_embeddings: Vec<f64>,
    target_embeddings: Vec<f64>,
    output: NetworkRecord,
}

impl ToyModel {
    pub fn new(source_vocab: usize, target_vocab: usize, config: ToyModelConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.embed_dim;
        let emb_bound = 1.0 / (d as f64).sqrt();
        let source_embeddings =
            Array2::from_shape_fn((source_vocab, d), |_| rng.gen_range(-emb_bound..emb_bound));
        let target_embeddings =
            Array2::from_shape_fn((target_vocab, d), |_| rng.gen_range(-emb_bound..emb_bound));
        let output = Network::new(vec![
            DenseLayer::new(Self::input_width(d), config.hidden, Activation::Relu, &mut rng),
            DenseLayer::new(config.hidden, target_vocab, Activation::Softmax, &mut rng),
        ])
        .expect("consistent layer sizes");
        ToyModel {
            config,
            source_embeddings,
            target_embeddings,
            output,
            version: fresh_version(),
        }
    }

    /// A model whose every conditional is uniform over the target vocabulary.
    pub fn uniform(source_vocab: usize, target_vocab: usize, config: ToyModelConfig) -> Self {
        let mut model = Self::new(source_vocab, target_vocab, config);
        let last = model.output.layers_mut().last_mut().expect("two layers");
        last.weights.fill(0.0);
        last.bias.fill(0.0);
        model
    }

    fn input_width(d: usize) -> usize {
        2 * d + 2
    }

    pub fn config(&self) -> &ToyModelConfig {
        &self.config
    }

    pub fn target_vocab_size(&self) -> usize {
        self.target_embeddings.nrows()
    }

    pub fn source_vocab_size(&self) -> usize {
        self.source_embeddings.nrows()
    }

    fn source_row(&self, id: TokenId) -> usize {
        (id as usize).min(self.source_embeddings.nrows() - 1)
    }

    fn target_row(&self, id: TokenId) -> usize {
        (id as usize).min(self.target_embeddings.nrows() - 1)
    }

    fn mean_source(&self, source: &Sentence) -> ndarray::Array1<f64> {
        let mut mean = ndarray::Array1::zeros(self.config.embed_dim);
        for &id in source.ids() {
            mean += &self.source_embeddings.row(self.source_row(id));
        }
        mean / source.len() as f64
    }

    fn write_step_input(
        &self,
        mut row: ndarray::ArrayViewMut1<f64>,
        mean_source: &ndarray::Array1<f64>,
        prev: TokenId,
        step: usize,
        source_len: usize,
    ) {
        let d = self.config.embed_dim;
        let scale = self.config.max_len.max(1) as f64;
        row.slice_mut(s![..d]).assign(mean_source);
        row.slice_mut(s![d..2 * d])
            .assign(&self.target_embeddings.row(self.target_row(prev)));
        row[2 * d] = step as f64 / scale;
        row[2 * d + 1] = source_len as f64 / scale;
    }

    /// Teacher-forced inputs for every scored step of `example`.
    fn step_inputs(&self, example: &ParallelExample) -> Array2<f64> {
        let steps = scored_tokens(example);
        let mut x = Array2::zeros((steps, Self::input_width(self.config.embed_dim)));
        let mean = self.mean_source(&example.source);
        let target = example.target.ids();
        for (i, row) in x.rows_mut().into_iter().enumerate() {
            let prev = if i == 0 { BOS } else { target[i - 1] };
            self.write_step_input(row, &mean, prev, i, example.source.len());
        }
        x
    }

    fn step_targets(&self, example: &ParallelExample) -> impl Iterator<Item = usize> + '_ {
        let ids = example.target.ids().to_vec();
        ids.into_iter()
            .chain(std::iter::once(EOS))
            .map(|t| self.target_row(t))
    }

    /// Next-token distribution after `prefix` (BOS implied).
    pub fn next_token_distribution(&self, source: &Sentence, prefix: &[TokenId]) -> Vec<f64> {
        let mut x = Array2::zeros((1, Self::input_width(self.config.embed_dim)));
        let prev = prefix.last().copied().unwrap_or(BOS);
        let mean = self.mean_source(source);
        self.write_step_input(x.row_mut(0), &mean, prev, prefix.len(), source.len());
        let probs = self.output.predict_batch(x.view()).expect("input width matches");
        probs.row(0).to_vec()
    }

    fn log_prob(p: f64) -> f64 {
        p.max(f64::MIN_POSITIVE).ln()
    }

    /// Loss `−log p(y | x)` and its gradient.
    pub fn loss_gradient(&self, example: &ParallelExample) -> (f64, ToyGradients) {
        let x = self.step_inputs(example);
        let (probs, cache) = self.output.forward_batch(x.view()).expect("input width matches");
        let mut out_grad = Array2::zeros(probs.raw_dim());
        let mut loss = 0.0;
        for (i, t) in self.step_targets(example).enumerate() {
            let p = probs[[i, t]].max(f64::MIN_POSITIVE);
            loss -= p.ln();
            out_grad[[i, t]] = -1.0 / p;
        }
        let (net_grads, input_grad) = self.output.backward(&cache, out_grad.view()).expect("cache matches");
        let d = self.config.embed_dim;
        let mut src = Array2::zeros(self.source_embeddings.raw_dim());
        let mean_grad = input_grad.slice(s![.., ..d]).sum_axis(Axis(0)) / example.source.len() as f64;
        for &id in example.source.ids() {
            let mut row = src.row_mut(self.source_row(id));
            row += &mean_grad;
        }
        let mut tgt = Array2::zeros(self.target_embeddings.raw_dim());
        let target = example.target.ids();
        for i in 0..input_grad.nrows() {
            let prev = if i == 0 { BOS } else { target[i - 1] };
            let mut row = tgt.row_mut(self.target_row(prev));
            row += &input_grad.slice(s![i, d..2 * d]);
        }
        (
            loss,
            ToyGradients {
                source_embeddings: src,
                target_embeddings: tgt,
                output: net_grads,
            },
        )
    }

    pub fn checksum(&self) -> u64 {
        let mut h = crate::neural::Fnv::default();
        for &w in self.source_embeddings.iter().chain(self.target_embeddings.iter()) {
            h.write(w.to_bits());
        }
        h.write(self.output.checksum());
        h.0
    }

    pub fn to_json(&self) -> String {
        let ckpt = ToyCheckpoint {
            format_version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            source_vocab: self.source_embeddings.nrows(),
            target_vocab: self.target_embeddings.nrows(),
            source_embeddings: self.source_embeddings.iter().copied().collect(),
            target_embeddings: self.target_embeddings.iter().copied().collect(),
            output: self.output.to_record(),
        };
        serde_json::to_string(&ckpt).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: ToyCheckpoint =
            serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if ckpt.format_version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {} is not supported",
                ckpt.format_version
            )));
        }
        let d = ckpt.config.embed_dim;
        let source_embeddings = Array2::from_shape_vec((ckpt.source_vocab, d), ckpt.source_embeddings)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let target_embeddings = Array2::from_shape_vec((ckpt.target_vocab, d), ckpt.target_embeddings)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let output = Network::from_record(&ckpt.output)?;
        if output.input_size() != Self::input_width(d) || output.output_size() != ckpt.target_vocab {
            return Err(Error::Checkpoint("output network does not fit the embeddings".into()));
        }
        Ok(ToyModel {
            config: ckpt.config,
            source_embeddings,
            target_embeddings,
            output,
            version: fresh_version(),
        })
    }

    fn apply_sgd(&mut self, grads: &ToyGradients, lr: f64) {
        self.source_embeddings.scaled_add(-lr, &grads.source_embeddings);
        self.target_embeddings.scaled_add(-lr, &grads.target_embeddings);
        for (l, g) in self.output.layers_mut().iter_mut().zip(&grads.output.layers) {
            l.weights.scaled_add(-lr, &g.weights);
            l.bias.scaled_add(-lr, &g.bias);
        }
        self.version = fresh_version();
    }
}

impl Learner for ToyModel {
    fn log_likelihood(&self, example: &ParallelExample) -> f64 {
        self.log_likelihoods(std::slice::from_ref(example))[0]
    }

    fn log_likelihoods(&self, examples: &[ParallelExample]) -> Vec<f64> {
        let rows: usize = examples.iter().map(scored_tokens).sum();
        let width = Self::input_width(self.config.embed_dim);
        let mut x = Array2::zeros((rows, width));
        let mut offset = 0;
        for ex in examples {
            let n = scored_tokens(ex);
            x.slice_mut(s![offset..offset + n, ..]).assign(&self.step_inputs(ex));
            offset += n;
        }
        let probs = self.output.predict_batch(x.view()).expect("input width matches");
        let mut offset = 0;
        examples
            .iter()
            .map(|ex| {
                let ll = self
                    .step_targets(ex)
                    .enumerate()
                    .map(|(i, t)| Self::log_prob(probs[[offset + i, t]]))
                    .sum();
                offset += scored_tokens(ex);
                ll
            })
            .collect()
    }

    fn train_on_example(&mut self, example: &ParallelExample, lr: f64) -> f64 {
        if lr == 0.0 {
            return -self.log_likelihood(example);
        }
        let (loss, grads) = self.loss_gradient(example);
        self.apply_sgd(&grads, lr);
        loss
    }

    fn decode(&self, source: &Sentence, max_len: usize) -> Vec<TokenId> {
        let mut out = Vec::new();
        while out.len() < max_len {
            let probs = self.next_token_distribution(source, &out);
            let mut best = EOS as usize;
            let mut best_p = f64::NEG_INFINITY;
            for (t, &p) in probs.iter().enumerate() {
                if t != BOS as usize && p > best_p {
                    best = t;
                    best_p = p;
                }
            }
            if best == EOS as usize {
                break;
            }
            out.push(best as TokenId);
        }
        out
    }

    fn snapshot(&self) -> Vec<u8> {
        self.to_json().into_bytes()
    }

    fn restore(&mut self, blob: &[u8]) -> Result<()> {
        let text = std::str::from_utf8(blob).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let restored = Self::from_json(text)?;
        if restored.source_embeddings.dim() != self.source_embeddings.dim()
            || restored.target_embeddings.dim() != self.target_embeddings.dim()
            || !restored.output.same_architecture(&self.output)
        {
            return Err(Error::Checkpoint("snapshot shape differs from this model".into()));
        }
        *self = restored;
        Ok(())
    }

    fn version(&self) -> u64 {
        self.version
    }
}

impl Parameterized for ToyModel {
    fn param_count(&self) -> usize {
        self.source_embeddings.len() + self.target_embeddings.len() + self.output.param_count()
    }

    fn get_param(&self, index: usize) -> f64 {
        let ns = self.source_embeddings.len();
        let nt = self.target_embeddings.len();
        if index < ns {
            self.source_embeddings.as_slice().expect("standard layout")[index]
        } else if index < ns + nt {
            self.target_embeddings.as_slice().expect("standard layout")[index - ns]
        } else {
            self.output.get_param(index - ns - nt)
        }
    }

    fn set_param(&mut self, index: usize, value: f64) {
        let ns = self.source_embeddings.len();
        let nt = self.target_embeddings.len();
        if index < ns {
            self.source_embeddings.as_slice_mut().expect("standard layout")[index] = value;
        } else if index < ns + nt {
            self.target_embeddings.as_slice_mut().expect("standard layout")[index - ns] = value;
        } else {
            self.output.set_param(index - ns - nt, value);
        }
        self.version = fresh_version();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::finite_difference_check;

    fn example(src: &[TokenId], tgt: &[TokenId]) -> ParallelExample {
        ParallelExample::new(0, Sentence::new(src.to_vec()).unwrap(), Sentence::new(tgt.to_vec()).unwrap())
    }

    /// Assigns probability `p` to every scored token.
    #[derive(Clone)]
    struct FixedProbability(f64);

    impl Learner for FixedProbability {
        fn log_likelihood(&self, example: &ParallelExample) -> f64 {
            scored_tokens(example) as f64 * self.0.ln()
        }
        fn train_on_example(&mut self, example: &ParallelExample, _lr: f64) -> f64 {
            -self.log_likelihood(example)
        }
        fn decode(&self, _source: &Sentence, _max_len: usize) -> Vec<TokenId> {
            Vec::new()
        }
        fn snapshot(&self) -> Vec<u8> {
            self.0.to_le_bytes().to_vec()
        }
        fn restore(&mut self, blob: &[u8]) -> Result<()> {
            self.0 = f64::from_le_bytes(blob.try_into().map_err(|_| Error::Checkpoint("bad blob".into()))?);
            Ok(())
        }
        fn version(&self) -> u64 {
            self.0.to_bits()
        }
    }

    #[test]
    fn perplexity_of_scripted_models() {
        let data = vec![example(&[3], &[4, 5]), example(&[3, 4], &[6])];
        assert_eq!(perplexity(&FixedProbability(1.0), &data).unwrap(), 1.0);
        let single = vec![example(&[3], &[4])];
        assert!((perplexity(&FixedProbability(0.25), &single).unwrap() - 4.0).abs() < 1e-12);
        assert!(matches!(perplexity(&FixedProbability(0.5), &[]), Err(Error::EmptyInput(_))));
    }

    fn random_example(rng: &mut ChaCha8Rng, vs: u32, vt: u32) -> ParallelExample {
        let ls = rng.gen_range(1..7);
        let lt = rng.gen_range(1..7);
        let src: Vec<TokenId> = (0..ls).map(|_| rng.gen_range(3..vs)).collect();
        let tgt: Vec<TokenId> = (0..lt).map(|_| rng.gen_range(3..vt)).collect();
        example(&src, &tgt)
    }

    fn small_config(seed: u64) -> ToyModelConfig {
        ToyModelConfig {
            embed_dim: 4,
            hidden: 8,
            max_len: 8,
            seed,
        }
    }

    #[test]
    fn uniform_model_log_likelihood_and_perplexity() {
        let v = 13;
        let model = ToyModel::uniform(10, v, small_config(1));
        let ex = example(&[3, 4, 5], &[6, 7]);
        let expected = scored_tokens(&ex) as f64 * (1.0 / v as f64).ln();
        assert!((model.log_likelihood(&ex) - expected).abs() < 1e-12);
        let data = vec![ex, example(&[4], &[8, 9, 10, 11])];
        assert!((perplexity(&model, &data).unwrap() - v as f64).abs() <= 1e-6);
    }

    #[test]
    fn perplexity_of_empty_dataset() {
        let model = ToyModel::new(10, 10, small_config(1));
        assert!(matches!(perplexity(&model, &[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn sentence_likelihood_is_sum_of_step_conditionals() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = ToyModel::new(12, 11, small_config(4));
        for _ in 0..50 {
            let ex = random_example(&mut rng, 12, 11);
            let mut prefix = Vec::new();
            let mut total = 0.0;
            for &t in ex.target.ids().iter().chain(std::iter::once(&EOS)) {
                let dist = model.next_token_distribution(&ex.source, &prefix);
                total += dist[t as usize].ln();
                prefix.push(t);
            }
            let ll = model.log_likelihood(&ex);
            assert!(ll <= 0.0);
            assert!((ll - total).abs() <= 1e-10, "{ll} vs {total}");
        }
    }

    #[test]
    fn batched_likelihoods_match_single() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = ToyModel::new(12, 11, small_config(5));
        let data: Vec<_> = (0..20).map(|_| random_example(&mut rng, 12, 11)).collect();
        let batched = model.log_likelihoods(&data);
        for (ex, b) in data.iter().zip(batched) {
            assert!((model.log_likelihood(ex) - b).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let mut model = ToyModel::new(9, 8, small_config(seed));
            for l in model.output.layers_mut() {
                l.bias.mapv_inplace(|_| rng.gen_range(-0.3..0.3));
            }
            let ex = random_example(&mut rng, 9, 8);
            let (_, grads) = model.loss_gradient(&ex);
            let report = finite_difference_check(
                &model,
                |m| -m.log_likelihood(&ex),
                &grads.flatten(),
                1e-5,
                None,
            );
            assert!(report.passes(1e-4), "seed {seed}: {report:?}");
        }
    }

    #[test]
    fn train_returns_pre_step_loss_and_zero_lr_is_a_no_op() {
        let mut model = ToyModel::new(10, 10, small_config(2));
        let ex = example(&[3, 4], &[5, 6, 7]);
        let before = model.clone();
        let loss = model.train_on_example(&ex, 0.0);
        assert_eq!(model, before);
        assert!((loss + before.log_likelihood(&ex)).abs() <= 1e-12);

        let loss = model.train_on_example(&ex, 1e-2);
        assert!((loss + before.log_likelihood(&ex)).abs() <= 1e-12);
        assert!(-model.log_likelihood(&ex) < loss);
        assert_ne!(model.version(), before.version());
    }

    #[test]
    fn small_step_descends_on_most_trials() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let trials = 1_000;
        let mut improved = 0;
        for t in 0..trials {
            let mut model = ToyModel::new(12, 11, small_config(t));
            let ex = random_example(&mut rng, 12, 11);
            let before = model.train_on_example(&ex, 1e-4);
            if -model.log_likelihood(&ex) < before {
                improved += 1;
            }
        }
        assert!(improved as f64 >= 0.95 * trials as f64, "{improved}/{trials}");
    }

    #[test]
    fn overfit_single_pair_decodes_target() {
        let mut model = ToyModel::new(10, 10, ToyModelConfig { embed_dim: 8, hidden: 32, max_len: 8, seed: 3 });
        let ex = example(&[3, 4, 5], &[6, 7, 8, 9]);
        for _ in 0..400 {
            model.train_on_example(&ex, 0.1);
        }
        assert_eq!(model.decode(&ex.source, 10), ex.target.ids());
        let again = model.decode(&ex.source, 10);
        assert_eq!(again, ex.target.ids());
        assert!(model.decode(&ex.source, 2).len() <= 2);
    }

    #[test]
    fn snapshot_restore_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut model = ToyModel::new(12, 11, small_config(9));
        let probes: Vec<_> = (0..100).map(|_| random_example(&mut rng, 12, 11)).collect();
        let expected = model.log_likelihoods(&probes);
        let blob = model.snapshot();
        assert_eq!(blob, model.snapshot());
        for p in probes.iter().take(5) {
            model.train_on_example(p, 0.5);
        }
        model.restore(&blob).unwrap();
        for (p, e) in probes.iter().zip(&expected) {
            assert_eq!(model.log_likelihood(p).to_bits(), e.to_bits());
        }
    }

    #[test]
    fn restore_rejects_corrupt_blobs() {
        let mut model = ToyModel::new(12, 11, small_config(9));
        let mut blob = model.snapshot();
        blob.truncate(blob.len() / 2);
        assert!(matches!(model.restore(&blob), Err(Error::Checkpoint(_))));
        let other = ToyModel::new(5, 11, small_config(9));
        assert!(matches!(model.restore(&other.snapshot()), Err(Error::Checkpoint(_))));
        let text = model.to_json().replace("\"format_version\":1", "\"format_version\":2");
        assert!(matches!(model.restore(text.as_bytes()), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn duplicating_dataset_keeps_perplexity() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let model = ToyModel::new(12, 11, small_config(10));
        let data: Vec<_> = (0..30).map(|_| random_example(&mut rng, 12, 11)).collect();
        let doubled: Vec<_> = data.iter().chain(&data).cloned().collect();
        let a = perplexity(&model, &data).unwrap();
        let b = perplexity(&model, &doubled).unwrap();
        assert!((a - b).abs() <= 1e-9);
    }
}
