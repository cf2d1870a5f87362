//! Parallel-corpus data model: vocabularies, sentences, examples, TSV I/O and
//! the corpus-wide statistics used for featurization.

mod ngram;
mod synthetic;
mod tagging;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ngram::{build_ngram_table, ngram_vector, NGramKey, NGramTable};
pub use synthetic::{generate_synthetic_corpus, SyntheticConfig, SyntheticGenerator};
pub use tagging::{build_tag_table, tag_vector, RuleTagger, TagScheme, TagTable, Tagger};

pub type TokenId = u32;

pub const UNK: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
/// First id handed out to a non-reserved surface.
pub const FIRST_FREE_ID: TokenId = 3;

const RESERVED: [&str; 3] = ["<unk>", "<s>", "</s>"];

/// Surface ↔ id map. Ids 0..3 are reserved for UNK, BOS and EOS.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    surfaces: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl From<Vec<String>> for Vocab {
    fn from(surfaces: Vec<String>) -> Self {
        let mut vocab = Vocab {
            surfaces,
            index: HashMap::new(),
        };
        vocab.rebuild_index();
        vocab
    }
}

impl From<Vocab> for Vec<String> {
    fn from(vocab: Vocab) -> Self {
        vocab.surfaces
    }
}

impl Default for Vocab {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocab {
    pub fn new() -> Self {
        let mut vocab = Vocab {
            surfaces: Vec::new(),
            index: HashMap::new(),
        };
        for s in RESERVED {
            vocab.insert(s);
        }
        vocab
    }

    /// Builds a vocab from explicit `surface → id` pairs. Missing ids below
    /// the largest one are filled with placeholder surfaces.
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, TokenId)>) -> Result<Self> {
        let mut vocab = Vocab::new();
        let mut pairs: Vec<_> = pairs.into_iter().collect();
        pairs.sort_by_key(|&(_, id)| id);
        for (surface, id) in pairs {
            if id < FIRST_FREE_ID {
                return Err(Error::InvalidInput(format!(
                    "id {id} for {surface:?} collides with a reserved id"
                )));
            }
            if vocab.index.contains_key(surface) {
                return Err(Error::InvalidInput(format!("duplicate surface {surface:?}")));
            }
            while (vocab.surfaces.len() as TokenId) < id {
                let filler = format!("<pad{}>", vocab.surfaces.len());
                vocab.insert(&filler);
            }
            if (vocab.surfaces.len() as TokenId) != id {
                return Err(Error::InvalidInput(format!("duplicate id {id}")));
            }
            vocab.insert(surface);
        }
        Ok(vocab)
    }

    fn insert(&mut self, surface: &str) -> TokenId {
        let id = self.surfaces.len() as TokenId;
        self.surfaces.push(surface.to_owned());
        self.index.insert(surface.to_owned(), id);
        id
    }

    pub fn get(&self, surface: &str) -> Option<TokenId> {
        self.index.get(surface).copied()
    }

    pub fn get_or_insert(&mut self, surface: &str) -> TokenId {
        match self.index.get(surface) {
            Some(&id) => id,
            None => self.insert(surface),
        }
    }

    pub fn surface(&self, id: TokenId) -> Option<&str> {
        self.surfaces.get(id as usize).map(String::as_str)
    }

    /// Number of ids, reserved ones included.
    pub fn len(&self) -> usize {
        self.surfaces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surfaces.len() <= FIRST_FREE_ID as usize
    }

    pub fn surfaces(&self) -> &[String] {
        &self.surfaces
    }

    pub fn render(&self, sentence: &Sentence) -> String {
        let mut out = String::new();
        for (i, &id) in sentence.ids().iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(self.surface(id).unwrap_or(RESERVED[UNK as usize]));
        }
        out
    }

    fn rebuild_index(&mut self) {
        self.index = self
            .surfaces
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i as TokenId))
            .collect();
    }
}

/// A non-empty sequence of token ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Sentence(Vec<TokenId>);

impl Sentence {
    pub fn new(ids: Vec<TokenId>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::EmptyInput("sentence has no tokens".into()));
        }
        Ok(Sentence(ids))
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Whitespace tokenization. Unknown surfaces become [`UNK`] unless
/// `allow_new` is set, in which case the vocabulary grows.
pub fn tokenize(text: &str, vocab: &mut Vocab, allow_new: bool) -> Result<Sentence> {
    let ids: Vec<TokenId> = text
        .split_whitespace()
        .map(|w| {
            if allow_new {
                vocab.get_or_insert(w)
            } else {
                vocab.get(w).unwrap_or(UNK)
            }
        })
        .collect();
    if ids.is_empty() {
        return Err(Error::EmptyInput("text is empty after trimming".into()));
    }
    Ok(Sentence(ids))
}

/// One source/target pair. The corruption flag is ground truth for synthetic
/// data and is never read by feature extraction or selection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParallelExample {
    pub id: u64,
    pub source: Sentence,
    pub target: Sentence,
    is_corrupted: bool,
}

impl ParallelExample {
    pub fn new(id: u64, source: Sentence, target: Sentence) -> Self {
        ParallelExample {
            id,
            source,
            target,
            is_corrupted: false,
        }
    }

    pub fn with_corruption(mut self, corrupted: bool) -> Self {
        self.is_corrupted = corrupted;
        self
    }

    pub fn is_corrupted(&self) -> bool {
        self.is_corrupted
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub examples: Vec<ParallelExample>,
    pub source_vocab: Vocab,
    pub target_vocab: Vocab,
}

impl Corpus {
    pub fn new(examples: Vec<ParallelExample>, source_vocab: Vocab, target_vocab: Vocab) -> Self {
        Corpus {
            examples,
            source_vocab,
            target_vocab,
        }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn sources(&self) -> impl Iterator<Item = &Sentence> {
        self.examples.iter().map(|e| &e.source)
    }

    pub fn targets(&self) -> impl Iterator<Item = &Sentence> {
        self.examples.iter().map(|e| &e.target)
    }

    pub fn corruption_rate(&self) -> f64 {
        corruption_rate(&self.examples)
    }

    /// A corpus holding `examples` under this corpus's vocabularies.
    pub fn with_examples(&self, examples: Vec<ParallelExample>) -> Corpus {
        Corpus::new(examples, self.source_vocab.clone(), self.target_vocab.clone())
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for ex in &self.examples {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}",
                ex.id,
                self.source_vocab.render(&ex.source),
                self.target_vocab.render(&ex.target),
                u8::from(ex.is_corrupted)
            );
        }
        out
    }

    /// Parses TSV, growing fresh vocabularies in first-appearance order.
    pub fn from_tsv(text: &str, origin: &Path) -> Result<Corpus> {
        Self::parse_tsv(text, origin, Vocab::new(), Vocab::new(), true)
    }

    /// Parses TSV against existing vocabularies; unknown surfaces become UNK.
    pub fn from_tsv_with_vocab(
        text: &str,
        origin: &Path,
        source_vocab: &Vocab,
        target_vocab: &Vocab,
    ) -> Result<Corpus> {
        Self::parse_tsv(text, origin, source_vocab.clone(), target_vocab.clone(), false)
    }

    fn parse_tsv(
        text: &str,
        origin: &Path,
        mut source_vocab: Vocab,
        mut target_vocab: Vocab,
        allow_new: bool,
    ) -> Result<Corpus> {
        let parse_err = |line: usize, message: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            message,
        };
        let mut examples = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 4 {
                return Err(parse_err(
                    lineno,
                    format!("expected 4 tab-separated columns, found {}", cols.len()),
                ));
            }
            let id = cols[0]
                .trim()
                .parse::<u64>()
                .map_err(|e| parse_err(lineno, format!("bad id {:?}: {e}", cols[0])))?;
            let source = tokenize(cols[1], &mut source_vocab, allow_new)
                .map_err(|_| parse_err(lineno, "empty source sentence".into()))?;
            let target = tokenize(cols[2], &mut target_vocab, allow_new)
                .map_err(|_| parse_err(lineno, "empty target sentence".into()))?;
            let corrupted = match cols[3].trim() {
                "0" => false,
                "1" => true,
                other => return Err(parse_err(lineno, format!("bad corruption flag {other:?}"))),
            };
            examples.push(ParallelExample::new(id, source, target).with_corruption(corrupted));
        }
        if examples.is_empty() {
            return Err(parse_err(0, "no examples".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for ex in &examples {
            if !seen.insert(ex.id) {
                return Err(parse_err(0, format!("duplicate example id {}", ex.id)));
            }
        }
        Ok(Corpus::new(examples, source_vocab, target_vocab))
    }
}

pub fn corruption_rate(examples: &[ParallelExample]) -> f64 {
    if examples.is_empty() {
        return 0.0;
    }
    examples.iter().filter(|e| e.is_corrupted()).count() as f64 / examples.len() as f64
}

pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, corpus.to_tsv())?;
    Ok(())
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    Corpus::from_tsv(&text, path)
}

/// Loads a held-out split so that its ids agree with `reference`'s vocabularies.
pub fn load_corpus_with_vocab(path: impl AsRef<Path>, reference: &Corpus) -> Result<Corpus> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    Corpus::from_tsv_with_vocab(&text, path, &reference.source_vocab, &reference.target_vocab)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_direct_lookup() {
        let mut vocab = Vocab::from_pairs([("a", 3), ("b", 4)]).unwrap();
        let s = tokenize("a b a", &mut vocab, false).unwrap();
        assert_eq!(s.ids(), &[3, 4, 3]);
    }

    #[test]
    fn tokenize_unknown_maps_to_unk() {
        let mut vocab = Vocab::from_pairs([("a", 3)]).unwrap();
        let s = tokenize("a z", &mut vocab, false).unwrap();
        assert_eq!(s.ids(), &[3, UNK]);
        assert_eq!(vocab.get("z"), None);
    }

    #[test]
    fn tokenize_extends_vocab_from_first_free_id() {
        let mut vocab = Vocab::new();
        let s = tokenize("c c", &mut vocab, true).unwrap();
        // oracle: the reserved block is exactly UNK, BOS, EOS
        let expected = RESERVED.len() as TokenId;
        assert_eq!(s.ids(), &[expected, expected]);
        assert_eq!(vocab.get("c"), Some(expected));
        assert_eq!(vocab.len(), 4);
    }

    #[test]
    fn tokenize_rejects_blank_text() {
        let mut vocab = Vocab::new();
        assert!(matches!(
            tokenize("  \t ", &mut vocab, true),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn tsv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.tsv");
        let mut sv = Vocab::new();
        let mut tv = Vocab::new();
        let examples = vec![
            ParallelExample::new(
                7,
                tokenize("x y", &mut sv, true).unwrap(),
                tokenize("p q r", &mut tv, true).unwrap(),
            ),
            ParallelExample::new(
                9,
                tokenize("y", &mut sv, true).unwrap(),
                tokenize("r s", &mut tv, true).unwrap(),
            )
            .with_corruption(true),
        ];
        let corpus = Corpus::new(examples, sv, tv);
        save_corpus(&corpus, &path).unwrap();
        let loaded = load_corpus(&path).unwrap();
        assert_eq!(loaded, corpus);
    }

    #[test]
    fn tsv_single_column_is_a_parse_error() {
        let err = Corpus::from_tsv("1\ta b\tc\t0\nonly-one-column\n", Path::new("x.tsv")).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn tsv_empty_file_is_a_parse_error() {
        let err = Corpus::from_tsv("", Path::new("x.tsv")).unwrap_err();
        assert!(err.to_string().contains("no examples"), "{err}");
    }

    #[test]
    fn with_vocab_loading_keeps_reference_ids() {
        let reference =
            Corpus::from_tsv("1\ta b\tc d\t0\n", Path::new("train.tsv")).unwrap();
        let held_out =
            Corpus::from_tsv_with_vocab("4\tb zz\td\t0\n", Path::new("val.tsv"), &reference.source_vocab, &reference.target_vocab)
                .unwrap();
        assert_eq!(held_out.examples[0].source.ids(), &[4, UNK]);
        assert_eq!(held_out.examples[0].target.ids(), &[4]);
    }
}
