use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{Sentence, TokenId, FIRST_FREE_ID};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TagScheme {
    Pos,
    Ner,
}

/// Assigns exactly one tag per token of a sentence.
pub trait Tagger: Send + Sync {
    fn scheme(&self) -> TagScheme;
    fn tag(&self, sentence: &Sentence) -> Vec<String>;
}

fn checked_tags(tagger: &dyn Tagger, sentence: &Sentence) -> Result<Vec<String>> {
    let tags = tagger.tag(sentence);
    if tags.len() != sentence.len() {
        return Err(Error::TaggerContractViolation {
            expected: sentence.len(),
            got: tags.len(),
        });
    }
    Ok(tags)
}

/// Deterministic lexicon-plus-position tagger for the synthetic vocabulary.
///
/// POS: every content id has a base class `{N, V, A, O}[id % 4]`; ids divisible
/// by 3 are ambiguous and read as `N` after an adjective or in first position,
/// `V` otherwise. NER: ids divisible by 5 are entities unless sentence-initial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RuleTagger {
    scheme: TagScheme,
}

impl RuleTagger {
    pub fn new(scheme: TagScheme) -> Self {
        RuleTagger { scheme }
    }

    fn base_pos(id: TokenId) -> &'static str {
        if id < FIRST_FREE_ID {
            return "O";
        }
        ["N", "V", "A", "O"][(id % 4) as usize]
    }
}

impl Tagger for RuleTagger {
    fn scheme(&self) -> TagScheme {
        self.scheme
    }

    fn tag(&self, sentence: &Sentence) -> Vec<String> {
        let ids = sentence.ids();
        ids.iter()
            .enumerate()
            .map(|(pos, &id)| {
                let tag = match self.scheme {
                    TagScheme::Pos => {
                        if id >= FIRST_FREE_ID && id % 3 == 0 {
                            if pos == 0 || Self::base_pos(ids[pos - 1]) == "A" {
                                "N"
                            } else {
                                "V"
                            }
                        } else {
                            Self::base_pos(id)
                        }
                    }
                    TagScheme::Ner => {
                        if id >= FIRST_FREE_ID && id % 5 == 0 && pos > 0 {
                            "ENT"
                        } else {
                            "NONE"
                        }
                    }
                };
                tag.to_owned()
            })
            .collect()
    }
}

/// Per-word tag counts accumulated over a corpus side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagTable {
    scheme: TagScheme,
    counts: HashMap<TokenId, HashMap<String, u64>>,
    totals: HashMap<TokenId, u64>,
}

impl TagTable {
    pub fn scheme(&self) -> TagScheme {
        self.scheme
    }

    /// Occurrences of `word`, `N_w`.
    pub fn word_total(&self, word: TokenId) -> u64 {
        self.totals.get(&word).copied().unwrap_or(0)
    }

    pub fn count(&self, word: TokenId, tag: &str) -> u64 {
        self.counts
            .get(&word)
            .and_then(|m| m.get(tag))
            .copied()
            .unwrap_or(0)
    }

    /// Fraction of `word`'s occurrences tagged `tag`; 0 for unseen words.
    pub fn value(&self, word: TokenId, tag: &str) -> f64 {
        match self.totals.get(&word) {
            Some(&n) if n > 0 => self.count(word, tag) as f64 / n as f64,
            _ => 0.0,
        }
    }

    pub fn words(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.totals.keys().copied()
    }

    pub fn tags_of(&self, word: TokenId) -> impl Iterator<Item = (&str, u64)> {
        self.counts
            .get(&word)
            .into_iter()
            .flat_map(|m| m.iter().map(|(t, &c)| (t.as_str(), c)))
    }
}

pub fn build_tag_table<'a>(
    sentences: impl IntoIterator<Item = &'a Sentence>,
    tagger: &dyn Tagger,
) -> Result<TagTable> {
    let mut counts: HashMap<TokenId, HashMap<String, u64>> = HashMap::new();
    let mut totals: HashMap<TokenId, u64> = HashMap::new();
    for s in sentences {
        let tags = checked_tags(tagger, s)?;
        for (&word, tag) in s.ids().iter().zip(tags) {
            *counts.entry(word).or_default().entry(tag).or_insert(0) += 1;
            *totals.entry(word).or_insert(0) += 1;
        }
    }
    Ok(TagTable {
        scheme: tagger.scheme(),
        counts,
        totals,
    })
}

/// Tagging value of every token of `s` under its in-context tag.
pub fn tag_vector(s: &Sentence, table: &TagTable, tagger: &dyn Tagger) -> Result<Vec<f64>> {
    let tags = checked_tags(tagger, s)?;
    Ok(s.ids()
        .iter()
        .zip(&tags)
        .map(|(&w, t)| table.value(w, t))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const BOOK: TokenId = 10;
    const PEN: TokenId = 11;

    /// Tags BOOK as VERB only when it follows PEN; everything else is NOUN.
    struct Scripted;

    impl Tagger for Scripted {
        fn scheme(&self) -> TagScheme {
            TagScheme::Pos
        }
        fn tag(&self, s: &Sentence) -> Vec<String> {
            s.ids()
                .iter()
                .enumerate()
                .map(|(i, &w)| {
                    if w == BOOK && i > 0 && s.ids()[i - 1] == PEN {
                        "VERB".to_owned()
                    } else {
                        "NOUN".to_owned()
                    }
                })
                .collect()
        }
    }

    struct Broken;

    impl Tagger for Broken {
        fn scheme(&self) -> TagScheme {
            TagScheme::Ner
        }
        fn tag(&self, _: &Sentence) -> Vec<String> {
            vec!["X".into()]
        }
    }

    fn sent(ids: &[TokenId]) -> Sentence {
        Sentence::new(ids.to_vec()).unwrap()
    }

    #[test]
    fn book_noun_and_verb() {
        let corpus = [sent(&[BOOK]), sent(&[BOOK]), sent(&[BOOK]), sent(&[PEN, BOOK])];
        let table = build_tag_table(&corpus, &Scripted).unwrap();
        assert_eq!(table.value(BOOK, "NOUN"), 0.75);
        assert_eq!(table.value(BOOK, "VERB"), 0.25);
        assert_eq!(table.value(PEN, "NOUN"), 1.0);
        assert_eq!(table.value(99, "NOUN"), 0.0);

        assert_eq!(tag_vector(&sent(&[PEN, BOOK]), &table, &Scripted).unwrap(), vec![1.0, 0.25]);
        assert_eq!(tag_vector(&sent(&[PEN]), &table, &Scripted).unwrap(), vec![1.0]);
    }

    #[test]
    fn contract_violation() {
        let err = build_tag_table(&[sent(&[3, 4])], &Broken).unwrap_err();
        assert!(matches!(err, Error::TaggerContractViolation { expected: 2, got: 1 }));
        let table = build_tag_table(&[sent(&[3])], &Broken).unwrap();
        assert!(tag_vector(&sent(&[3, 4]), &table, &Broken).is_err());
    }

    #[test]
    fn rule_tagger_is_ambiguous_for_some_words() {
        let tagger = RuleTagger::new(TagScheme::Pos);
        // 6 is ambiguous: initial → N, after a non-adjective → V
        assert_eq!(tagger.tag(&sent(&[6, 7]))[0], "N");
        assert_eq!(tagger.tag(&sent(&[4, 6]))[1], "V");
        assert_eq!(tagger.tag(&sent(&[10, 6]))[1], "N");
        let ner = RuleTagger::new(TagScheme::Ner);
        assert_eq!(ner.tag(&sent(&[10, 10])), vec!["NONE", "ENT"]);
    }

    proptest! {
        #[test]
        fn per_word_values_sum_to_one(
            sentences in prop::collection::vec(prop::collection::vec(3u32..40, 1..10), 1..40),
            ner in any::<bool>(),
        ) {
            let sentences: Vec<Sentence> = sentences.into_iter().map(|s| Sentence::new(s).unwrap()).collect();
            let tagger = RuleTagger::new(if ner { TagScheme::Ner } else { TagScheme::Pos });
            let table = build_tag_table(&sentences, &tagger).unwrap();
            for w in table.words() {
                let total: u64 = table.tags_of(w).map(|(_, c)| c).sum();
                prop_assert_eq!(total, table.word_total(w));
                let sum: f64 = table.tags_of(w).map(|(t, _)| table.value(w, t)).sum();
                prop_assert!((sum - 1.0).abs() <= 1e-12);
                for (t, _) in table.tags_of(w) {
                    let v = table.value(w, t);
                    prop_assert!(v > 0.0 && v <= 1.0);
                }
            }
            for s in &sentences {
                prop_assert_eq!(tag_vector(s, &table, &tagger).unwrap().len(), s.len());
            }
        }
    }
}
