//! Corpus BLEU and model evaluation.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{ParallelExample, TokenId};
use crate::error::{Error, Result};
use crate::learner::{perplexity, Learner};

pub const MAX_ORDER: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BleuReport {
    /// 0 to 100.
    pub bleu: f64,
    pub precisions: [f64; MAX_ORDER],
    pub brevity_penalty: f64,
    pub hypothesis_length: usize,
    pub reference_length: usize,
}

fn counts(tokens: &[TokenId], n: usize) -> HashMap<&[TokenId], usize> {
    let mut out = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w).or_insert(0) += 1;
        }
    }
    out
}

/// Clipped matches and hypothesis n-gram total for one sentence pair.
fn clipped(hyp: &[TokenId], reference: &[TokenId], n: usize) -> (usize, usize) {
    let refs = counts(reference, n);
    let matched = counts(hyp, n)
        .into_iter()
        .map(|(g, c)| c.min(refs.get(g).copied().unwrap_or(0)))
        .sum();
    (matched, hyp.len().saturating_sub(n - 1))
}

/// Corpus BLEU-4 with clipped counts aggregated over the corpus.
/// `smoothing` adds one to numerator and denominator of every zero-count
/// precision.
pub fn corpus_bleu<H: AsRef<[TokenId]>, R: AsRef<[TokenId]>>(
    hypotheses: &[H],
    references: &[R],
    smoothing: bool,
) -> Result<BleuReport> {
    if hypotheses.len() != references.len() {
        return Err(Error::InvalidInput(format!(
            "{} hypotheses but {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    if hypotheses.is_empty() {
        return Err(Error::InvalidInput("BLEU needs at least one sentence pair".into()));
    }
    let mut matched = [0usize; MAX_ORDER];
    let mut total = [0usize; MAX_ORDER];
    let (mut hyp_len, mut ref_len) = (0, 0);
    for (h, r) in hypotheses.iter().zip(references) {
        let (h, r) = (h.as_ref(), r.as_ref());
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=MAX_ORDER {
            let (m, t) = clipped(h, r, n);
            matched[n - 1] += m;
            total[n - 1] += t;
        }
    }
    let mut precisions = [0.0; MAX_ORDER];
    for n in 0..MAX_ORDER {
        precisions[n] = if matched[n] == 0 && smoothing {
            1.0 / (total[n] + 1) as f64
        } else if total[n] == 0 {
            0.0
        } else {
            matched[n] as f64 / total[n] as f64
        };
    }
    let brevity_penalty = if hyp_len == 0 {
        0.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp().min(1.0)
    };
    let bleu = if precisions.iter().any(|&p| p == 0.0) {
        0.0
    } else {
        let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / MAX_ORDER as f64;
        (100.0 * brevity_penalty * log_mean.exp()).min(100.0)
    };
    Ok(BleuReport {
        bleu,
        precisions,
        brevity_penalty,
        hypothesis_length: hyp_len,
        reference_length: ref_len,
    })
}

/// Greedy decoding budget for a source of `len` tokens.
pub fn decode_budget(len: usize) -> usize {
    2 * len + 5
}

pub fn translate<L: Learner>(model: &L, examples: &[ParallelExample]) -> Vec<Vec<TokenId>> {
    examples
        .iter()
        .map(|e| model.decode(&e.source, decode_budget(e.source.len())))
        .collect()
}

/// Metrics of one model on one test set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub bleu: f64,
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
    pub p4: f64,
    pub bp: f64,
    pub perplexity: f64,
}

impl Metrics {
    pub fn new(report: &BleuReport, perplexity: f64) -> Self {
        let [p1, p2, p3, p4] = report.precisions;
        Metrics {
            bleu: report.bleu,
            p1,
            p2,
            p3,
            p4,
            bp: report.brevity_penalty,
            perplexity,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Greedy-decode BLEU (smoothed) and perplexity on `test`.
pub fn evaluate_model<L: Learner>(model: &L, test: &[ParallelExample]) -> Result<(BleuReport, f64)> {
    let hyps = translate(model, test);
    let refs: Vec<&[TokenId]> = test.iter().map(|e| e.target.ids()).collect();
    let report = corpus_bleu(&hyps, &refs, true)?;
    Ok((report, perplexity(model, test)?))
}

pub fn evaluate_metrics<L: Learner>(model: &L, test: &[ParallelExample]) -> Result<Metrics> {
    let (report, ppl) = evaluate_model(model, test)?;
    Ok(Metrics::new(&report, ppl))
}
