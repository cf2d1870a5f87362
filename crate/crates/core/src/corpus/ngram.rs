use std::collections::HashMap;

use serde::Serialize;

use super::{Sentence, TokenId, Vocab};
use crate::error::{Error, Result};

/// N-gram key padded with `TokenId::MAX` beyond the table order.
pub type NGramKey = [TokenId; 4];

const PAD: TokenId = TokenId::MAX;

fn key_of(window: &[TokenId]) -> NGramKey {
    let mut key = [PAD; 4];
    key[..window.len()].copy_from_slice(window);
    key
}

/// Corpus-wide occurrence counts of contiguous n-grams of one order.
#[derive(Debug, Clone, PartialEq)]
pub struct NGramTable {
    order: usize,
    counts: HashMap<NGramKey, u64>,
    total: u64,
}

impl NGramTable {
    pub fn order(&self) -> usize {
        self.order
    }

    /// Total number of n-gram occurrences, `N⁽ⁿ⁾`.
    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn unique(&self) -> usize {
        self.counts.len()
    }

    pub fn count(&self, ngram: &[TokenId]) -> u64 {
        if ngram.len() != self.order {
            return 0;
        }
        self.counts.get(&key_of(ngram)).copied().unwrap_or(0)
    }

    /// Relative frequency of `ngram`; unseen n-grams have frequency 0.
    pub fn frequency(&self, ngram: &[TokenId]) -> Result<f64> {
        if self.total == 0 {
            return Err(Error::EmptyTable);
        }
        Ok(self.count(ngram) as f64 / self.total as f64)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[TokenId], u64)> {
        self.counts.iter().map(|(k, &c)| (&k[..self.order], c))
    }

    /// Inspection report, sorted by descending count.
    pub fn report(&self, vocab: Option<&Vocab>) -> serde_json::Value {
        #[derive(Serialize)]
        struct Entry {
            ngram: String,
            count: u64,
            frequency: f64,
        }
        let mut entries: Vec<Entry> = self
            .iter()
            .map(|(ids, count)| Entry {
                ngram: ids
                    .iter()
                    .map(|&id| match vocab.and_then(|v| v.surface(id)) {
                        Some(s) => s.to_owned(),
                        None => id.to_string(),
                    })
                    .collect::<Vec<_>>()
                    .join(" "),
                count,
                frequency: count as f64 / self.total.max(1) as f64,
            })
            .collect();
        entries.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.ngram.cmp(&b.ngram)));
        serde_json::json!({
            "order": self.order,
            "total": self.total,
            "unique": self.counts.len(),
            "ngrams": entries,
        })
    }
}

/// Counts every contiguous n-gram of every sentence. Duplicate sentences
/// contribute once per occurrence.
pub fn build_ngram_table<'a>(
    sentences: impl IntoIterator<Item = &'a Sentence>,
    n: usize,
) -> Result<NGramTable> {
    if !(1..=4).contains(&n) {
        return Err(Error::InvalidOrder(n));
    }
    let mut counts = HashMap::new();
    let mut total = 0u64;
    let mut any = false;
    for s in sentences {
        any = true;
        for window in s.ids().windows(n) {
            *counts.entry(key_of(window)).or_insert(0u64) += 1;
            total += 1;
        }
    }
    if !any {
        return Err(Error::EmptyInput("n-gram table needs at least one sentence".into()));
    }
    Ok(NGramTable {
        order: n,
        counts,
        total,
    })
}

/// Per-position relative frequencies of the n-grams of `s`.
pub fn ngram_vector(s: &Sentence, table: &NGramTable) -> Vec<f64> {
    let denom = table.total as f64;
    s.ids()
        .windows(table.order)
        .map(|w| {
            if table.total == 0 {
                0.0
            } else {
                table.count(w) as f64 / denom
            }
        })
        .collect()
}
