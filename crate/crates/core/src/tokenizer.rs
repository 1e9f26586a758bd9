//! Word-level vocabulary and fixed-length integer sequences.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use crate::textprep::{CleanDocument, FrequencyTable};

pub const PAD_INDEX: usize = 0;
pub const OOV_INDEX: usize = 1;
pub const DEFAULT_MAX_SIZE: usize = 50_000;
pub const DEFAULT_SEQ_LEN: usize = 300;

#[derive(Debug, thiserror::Error)]
pub enum TokenizerError {
    #[error("training corpus contains no tokens")]
    EmptyCorpus,
    #[error("vocabulary max_size must be at least 3, got {0}")]
    MaxSizeTooSmall(usize),
    #[error("vocabulary file line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// Word → index mapping. Index 0 is padding, index 1 is the shared
/// out-of-vocabulary slot; content words occupy `2..max_size` ordered by
/// training frequency (descending), ties broken by the word itself.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    word_to_index: HashMap<String, usize>,
    index_to_word: Vec<String>,
    max_size: usize,
}

impl Vocabulary {
    /// Total number of indices, reserved slots included.
    pub fn len(&self) -> usize {
        self.index_to_word.len() + 2
    }

    pub fn is_empty(&self) -> bool {
        self.index_to_word.is_empty()
    }

    pub fn max_size(&self) -> usize {
        self.max_size
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.word_to_index.get(word).copied()
    }

    pub fn word(&self, index: usize) -> Option<&str> {
        index
            .checked_sub(2)
            .and_then(|i| self.index_to_word.get(i))
            .map(String::as_str)
    }

    /// Content words in index order (index 2 first).
    pub fn words(&self) -> &[String] {
        &self.index_to_word
    }

    fn from_ordered(words: Vec<String>, max_size: usize) -> Self {
        let word_to_index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i + 2))
            .collect();
        Vocabulary {
            word_to_index,
            index_to_word: words,
            max_size,
        }
    }

    /// Writes the two header lines (`#max_size`, `#seq_len`) followed by one
    /// `word<TAB>index` line per content word in index order.
    pub fn write<W: Write>(&self, mut w: W, seq_len: usize) -> std::io::Result<()> {
        writeln!(w, "#max_size\t{}", self.max_size)?;
        writeln!(w, "#seq_len\t{seq_len}")?;
        for (i, word) in self.index_to_word.iter().enumerate() {
            writeln!(w, "{word}\t{}", i + 2)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path, seq_len: usize) -> Result<(), TokenizerError> {
        let mut buf = Vec::new();
        self.write(&mut buf, seq_len)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    /// Parses the format produced by [`Vocabulary::write`]; returns the
    /// vocabulary and the recorded sequence length.
    pub fn parse(text: &str) -> Result<(Self, usize), TokenizerError> {
        let mut lines = text.lines().enumerate();
        let mut header = |key: &str| -> Result<usize, TokenizerError> {
            let (n, line) = lines.next().ok_or(TokenizerError::Format {
                line: 0,
                reason: format!("missing header `{key}`"),
            })?;
            let bad = || TokenizerError::Format {
                line: n + 1,
                reason: format!("expected `{key}<TAB>value`"),
            };
            let (k, v) = line.split_once('\t').ok_or_else(bad)?;
            if k != key {
                return Err(bad());
            }
            v.parse().map_err(|_| bad())
        };
        let max_size = header("#max_size")?;
        let seq_len = header("#seq_len")?;
        let mut words = Vec::new();
        for (n, line) in lines {
            let (word, idx) = line.split_once('\t').ok_or(TokenizerError::Format {
                line: n + 1,
                reason: "expected `word<TAB>index`".into(),
            })?;
            let idx: usize = idx.parse().map_err(|_| TokenizerError::Format {
                line: n + 1,
                reason: format!("bad index `{idx}`"),
            })?;
            if idx != words.len() + 2 {
                return Err(TokenizerError::Format {
                    line: n + 1,
                    reason: format!("index {idx} out of sequence"),
                });
            }
            words.push(word.to_string());
        }
        if words.len() + 2 > max_size {
            return Err(TokenizerError::Format {
                line: 1,
                reason: "more words than max_size allows".into(),
            });
        }
        Ok((Self::from_ordered(words, max_size), seq_len))
    }

    pub fn load(path: &Path) -> Result<(Self, usize), TokenizerError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

/// Builds the vocabulary from training documents only. At most
/// `max_size - 2` content words are kept; the rest map to OOV.
pub fn build_vocabulary(
    train_docs: &[CleanDocument],
    max_size: usize,
) -> Result<Vocabulary, TokenizerError> {
    if max_size < 3 {
        return Err(TokenizerError::MaxSizeTooSmall(max_size));
    }
    let table = FrequencyTable::from_token_lists(
        train_docs.iter().map(|d| d.tokens.as_slice()),
        Some(max_size - 2),
    );
    if table.entries.is_empty() {
        return Err(TokenizerError::EmptyCorpus);
    }
    let words = table.entries.into_iter().map(|(w, _)| w).collect();
    Ok(Vocabulary::from_ordered(words, max_size))
}

/// Position-wise lookup; unknown words map to [`OOV_INDEX`].
pub fn encode(tokens: &[String], vocab: &Vocabulary) -> Vec<usize> {
    tokens
        .iter()
        .map(|t| vocab.index_of(t).unwrap_or(OOV_INDEX))
        .collect()
}

/// Inverse of [`encode`] for in-vocabulary indices; PAD and OOV decode to
/// `None`.
pub fn decode(indices: &[usize], vocab: &Vocabulary) -> Vec<Option<String>> {
    indices
        .iter()
        .map(|&i| vocab.word(i).map(str::to_string))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum PadPolicy {
    /// pad at the end, keep the first `L` indices
    #[default]
    PostPadHeadTruncate,
}

/// Fixed-length index sequence. Positions at or beyond `valid_len` hold
/// [`PAD_INDEX`].
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    pub indices: Vec<usize>,
    pub valid_len: usize,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

pub fn pad_or_truncate(indices: &[usize], len: usize, policy: PadPolicy) -> TokenSequence {
    assert!(len >= 1, "sequence length must be positive");
    match policy {
        PadPolicy::PostPadHeadTruncate => {
            let valid_len = indices.len().min(len);
            let mut out = indices[..valid_len].to_vec();
            out.resize(len, PAD_INDEX);
            TokenSequence {
                indices: out,
                valid_len,
            }
        }
    }
}

/// `encode` followed by `pad_or_truncate` with the default policy.
pub fn encode_padded(tokens: &[String], vocab: &Vocabulary, len: usize) -> TokenSequence {
    pad_or_truncate(&encode(tokens, vocab), len, PadPolicy::default())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(tokens: &[&str]) -> CleanDocument {
        CleanDocument {
            article_id: "x".into(),
            tokens: tokens.iter().map(|t| t.to_string()).collect(),
            label: 1,
        }
    }

    fn toks(s: &[&str]) -> Vec<String> {
        s.iter().map(|t| t.to_string()).collect()
    }

    #[test]
    fn frequency_then_lexicographic() {
        let v = build_vocabulary(&[doc(&["ক", "খ", "ক"])], 10).unwrap();
        assert_eq!(v.index_of("ক"), Some(2));
        assert_eq!(v.index_of("খ"), Some(3));
        assert_eq!(v.len(), 4);
    }

    #[test]
    fn capacity_is_max_size_minus_reserved() {
        let v = build_vocabulary(&[doc(&["a", "b", "c", "d", "e"])], 3).unwrap();
        assert_eq!(v.words().len(), 1);
        assert!(matches!(
            build_vocabulary(&[doc(&[])], 10),
            Err(TokenizerError::EmptyCorpus)
        ));
        assert!(matches!(
            build_vocabulary(&[], 10),
            Err(TokenizerError::EmptyCorpus)
        ));
    }

    #[test]
    fn encode_with_oov() {
        let v = build_vocabulary(&[doc(&["ক", "খ", "ক"])], 10).unwrap();
        assert_eq!(encode(&toks(&["ক", "অজানা"]), &v), vec![2, 1]);
        assert!(encode(&[], &v).is_empty());
    }

    #[test]
    fn padding_and_truncation() {
        assert_eq!(
            pad_or_truncate(&[2, 3], 5, PadPolicy::default()).indices,
            vec![2, 3, 0, 0, 0]
        );
        let t = pad_or_truncate(&[2, 3, 4, 5, 6, 7], 4, PadPolicy::default());
        assert_eq!(t.indices, vec![2, 3, 4, 5]);
        assert_eq!(t.valid_len, 4);
        assert_eq!(
            pad_or_truncate(&[4, 5, 6], 3, PadPolicy::default()).indices,
            vec![4, 5, 6]
        );
    }

    #[test]
    fn file_round_trip() {
        let v = build_vocabulary(&[doc(&["ক", "খ", "ক", "গ"])], 100).unwrap();
        let mut buf = Vec::new();
        v.write(&mut buf, 300).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("#max_size\t100\n#seq_len\t300\n"));
        let (back, l) = Vocabulary::parse(&text).unwrap();
        assert_eq!(back, v);
        assert_eq!(l, 300);
        let mut again = Vec::new();
        back.write(&mut again, l).unwrap();
        assert_eq!(again, buf);
    }

    #[test]
    fn malformed_vocab_file() {
        assert!(Vocabulary::parse("#max_size\t10\n#seq_len\t5\nক\t3\n").is_err());
        assert!(Vocabulary::parse("#seq_len\t5\n").is_err());
    }
}
