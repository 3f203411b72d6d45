//! Turning description text into encoder inputs.
//!
//! Two featurizations exist: a bag of boundary-marked character 3-grams with
//! a `log(1 + count)` transform (MLP encoder), and the column matrix of word
//! vectors of the token sequence (CNN encoder).

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::{NameIndex, WordVectorTable};
use crate::error::{Error, Result};
use crate::kernels::{SparseVector, Tensor};
use crate::Real;

/// Boundary mark added at both ends of a word before 3-gram extraction.
pub const BOUNDARY: char = '#';

/// Lowercases and splits on every run of non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::to_lowercase).collect()
}

/// All 3-grams of `#word#`, in order. A word of `L` characters gives `L` grams.
pub fn extract_3grams(word: &str) -> Vec<String> {
    if word.is_empty() {
        return Vec::new();
    }
    let chars: Vec<char> = std::iter::once(BOUNDARY).chain(word.chars()).chain(std::iter::once(BOUNDARY)).collect();
    chars.windows(3).map(|w| w.iter().collect()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeaturizeMode {
    /// Unseen grams extend the vocabulary.
    Train,
    /// Unseen grams are dropped and counted.
    Infer,
}

/// 3-gram ↔ index map; its size is the MLP input dimension.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NgramVocabulary {
    grams: NameIndex,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BagOfGrams {
    pub features: SparseVector,
    /// Gram occurrences not in the vocabulary (infer mode only).
    pub dropped: usize,
}

impl NgramVocabulary {
    /// Vocabulary of every 3-gram occurring in `texts`, in encounter order.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut vocab = NgramVocabulary::default();
        for text in texts {
            for token in tokenize(text) {
                for gram in extract_3grams(&token) {
                    vocab.grams.intern(&gram);
                }
            }
        }
        vocab
    }

    pub fn len(&self) -> usize {
        self.grams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grams.is_empty()
    }

    pub fn index_of(&self, gram: &str) -> Option<usize> {
        self.grams.get(gram)
    }

    /// Sparse `log(1 + counts)` features; never mutates the vocabulary.
    pub fn featurize(&self, text: &str) -> BagOfGrams {
        let mut counts = std::collections::BTreeMap::new();
        let mut dropped = 0;
        for token in tokenize(text) {
            for gram in extract_3grams(&token) {
                match self.grams.get(&gram) {
                    Some(i) => *counts.entry(i).or_insert(0usize) += 1,
                    None => dropped += 1,
                }
            }
        }
        BagOfGrams {
            features: SparseVector {
                dim: self.len(),
                entries: counts.into_iter().map(|(i, c)| (i, (c as Real).ln_1p())).collect(),
            },
            dropped,
        }
    }

    /// `gram\tindex` lines, ascending by index.
    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        for (i, g) in self.grams.names().iter().enumerate() {
            let _ = writeln!(out, "{g}\t{i}");
        }
        out
    }

    pub fn from_lines(text: &str) -> Result<Self> {
        let mut vocab = NgramVocabulary::default();
        for (lineno, line) in text.lines().enumerate() {
            let parse_err =
                |message: String| Error::Parse { source_name: "ngram vocabulary".into(), line: lineno + 1, message };
            let (gram, index) = line.rsplit_once('\t').ok_or_else(|| parse_err("missing tab".into()))?;
            let index: usize = index.parse().map_err(|_| parse_err(format!("bad index `{index}`")))?;
            if index != vocab.len() || vocab.grams.get(gram).is_some() {
                return Err(parse_err(format!("index {index} out of sequence")));
            }
            vocab.grams.intern(gram);
        }
        Ok(vocab)
    }
}

/// Bag-of-3-grams features as a dense vector of length `V`.
///
/// In [`FeaturizeMode::Train`] unseen grams are first added to `vocab`.
/// Returns the features and the number of dropped gram occurrences.
pub fn featurize_bong(text: &str, vocab: &mut NgramVocabulary, mode: FeaturizeMode) -> (Tensor, usize) {
    if mode == FeaturizeMode::Train {
        for token in tokenize(text) {
            for gram in extract_3grams(&token) {
                vocab.grams.intern(&gram);
            }
        }
    }
    let bag = vocab.featurize(text);
    (bag.features.to_dense(), bag.dropped)
}

/// Word-vector columns of a tokenized description.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptionMatrix {
    pub tokens: Vec<String>,
    /// Row of each column in the word-vector table; `None` is the UNK vector.
    pub token_ids: Vec<Option<usize>>,
    /// Shape `[d, k]`: column `i` is the vector of token `i`.
    pub matrix: Tensor,
}

/// Table rows for each token of `text`, truncated at `max_len`.
///
/// Unknown tokens map to `None` (UNK). Empty or all-unknown text gives a
/// single UNK.
pub fn token_ids(text: &str, words: &WordVectorTable, max_len: usize) -> (Vec<String>, Vec<Option<usize>>) {
    let mut tokens = tokenize(text);
    tokens.truncate(max_len.max(1));
    let ids: Vec<Option<usize>> = tokens.iter().map(|t| words.index_of(t)).collect();
    if ids.iter().all(Option::is_none) {
        return (tokens, vec![None]);
    }
    (tokens, ids)
}

/// Builds the `d × k` input matrix; the UNK vector is zero.
pub fn build_description_matrix(text: &str, words: &WordVectorTable, max_len: usize) -> DescriptionMatrix {
    let (tokens, token_ids) = token_ids(text, words, max_len);
    let d = words.dim();
    let k = token_ids.len();
    let mut data = vec![0.0; d * k];
    for (col, id) in token_ids.iter().enumerate() {
        if let Some(row) = id {
            for (r, v) in words.row(*row).iter().enumerate() {
                data[r * k + col] = *v;
            }
        }
    }
    DescriptionMatrix { tokens, token_ids, matrix: Tensor::new(vec![d, k], data).expect("d, k >= 1") }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn sorted(mut v: Vec<String>) -> Vec<String> {
        v.sort();
        v
    }

    #[test]
    fn three_grams_of_word() {
        assert_eq!(extract_3grams("word"), vec!["#wo", "wor", "ord", "rd#"]);
        assert_eq!(extract_3grams("a"), vec!["#a#"]);
        assert_eq!(
            sorted(extract_3grams("abab")),
            sorted(vec!["#ab".into(), "aba".into(), "bab".into(), "ab#".into()])
        );
        assert!(extract_3grams("").is_empty());
    }

    #[test]
    fn tokenizer_lowercases_and_splits() {
        assert_eq!(tokenize("Lily Burana, an American-writer!"), vec!["lily", "burana", "an", "american", "writer"]);
        assert!(tokenize("  ,; ").is_empty());
    }

    #[test]
    fn bong_single_word() {
        let mut vocab = NgramVocabulary::default();
        let (x, dropped) = featurize_bong("word", &mut vocab, FeaturizeMode::Train);
        assert_eq!(dropped, 0);
        assert_eq!(x.len(), 4);
        assert!(x.data().iter().all(|&v| (v - (2.0 as Real).ln()).abs() < 1e-15));

        let (x2, _) = featurize_bong("word word", &mut vocab, FeaturizeMode::Infer);
        assert_eq!(x2.len(), 4);
        assert!(x2.data().iter().all(|&v| (v - (3.0 as Real).ln()).abs() < 1e-15));

        let (empty, _) = featurize_bong("", &mut vocab, FeaturizeMode::Infer);
        assert!(empty.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn infer_mode_drops_unknown_grams() {
        let mut vocab = NgramVocabulary::build(["word"]);
        let before = vocab.clone();
        let (x, dropped) = featurize_bong("word zz", &mut vocab, FeaturizeMode::Infer);
        assert_eq!(vocab, before);
        assert_eq!(dropped, 2);
        assert_eq!(x.data().iter().filter(|v| **v != 0.0).count(), 4);
    }

    #[test]
    fn ngram_vocabulary_lines_round_trip() {
        let vocab = NgramVocabulary::build(["the cat sat", "on a mat"]);
        let lines = vocab.to_lines();
        assert!(lines.starts_with("#th\t0\n"));
        assert_eq!(NgramVocabulary::from_lines(&lines).unwrap(), vocab);
        assert!(NgramVocabulary::from_lines("abc\t1\n").is_err());
    }

    fn table() -> WordVectorTable {
        let mut t = WordVectorTable::new(2).unwrap();
        t.insert("cat", &[1.0, 0.0]).unwrap();
        t.insert("sat", &[0.5, -0.5]).unwrap();
        t
    }

    #[test]
    fn description_matrix_columns() {
        let m = build_description_matrix("cat", &table(), 10);
        assert_eq!(m.matrix.shape(), &[2, 1]);
        assert_eq!(m.matrix.data(), &[1.0, 0.0]);

        let m = build_description_matrix("cat dog", &table(), 10);
        assert_eq!(m.token_ids, vec![Some(0), None]);
        assert_eq!(m.matrix.data(), &[1.0, 0.0, 0.0, 0.0]);

        let m = build_description_matrix("", &table(), 10);
        assert_eq!(m.token_ids, vec![None]);
        let m = build_description_matrix("dog emu", &table(), 10);
        assert_eq!(m.token_ids, vec![None]);
    }

    #[test]
    fn description_matrix_truncates() {
        let text = vec!["cat"; 700].join(" ");
        let m = build_description_matrix(&text, &table(), 617);
        assert_eq!(m.matrix.shape(), &[2, 617]);
    }

    proptest! {
        #[test]
        fn gram_count_equals_word_length(word in "[a-z]{1,20}") {
            prop_assert_eq!(extract_3grams(&word).len(), word.chars().count());
        }

        #[test]
        fn bong_entries_bounded(text in "[a-z ]{0,60}") {
            let vocab = NgramVocabulary::build([text.as_str()]);
            let bag = vocab.featurize(&text);
            let total: usize = tokenize(&text).iter().map(|t| extract_3grams(t).len()).sum();
            let bound = (total as Real).ln_1p();
            prop_assert!(bag.features.entries.iter().all(|&(_, v)| v > 0.0 && v <= bound + 1e-12));
            prop_assert_eq!(bag.dropped, 0);
        }
    }
}
