//! Bengali text cleaning, stopword removal, the minimum-length retention
//! filter and word-frequency tables.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::Write;
use std::path::Path;

use crate::corpus::Article;

/// Stopword list bundled with the crate (stopwords-iso Bengali, 398 words).
pub const BENGALI_STOPWORDS: &str = include_str!("../data/stopwords-bn.txt");

#[derive(Debug, thiserror::Error)]
pub enum StopwordError {
    #[error("stopword list is empty")]
    Empty,
    #[error("stopword on line {line} contains whitespace: {word:?}")]
    Whitespace { line: usize, word: String },
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StopwordList {
    words: BTreeSet<String>,
}

impl StopwordList {
    /// Parses a newline-delimited list. Blank lines and lines starting with
    /// `#` are ignored; surrounding whitespace is trimmed.
    pub fn parse(text: &str) -> Result<Self, StopwordError> {
        let mut words = BTreeSet::new();
        for (i, line) in text.lines().enumerate() {
            let w = line.trim();
            if w.is_empty() || w.starts_with('#') {
                continue;
            }
            if w.chars().any(char::is_whitespace) {
                return Err(StopwordError::Whitespace {
                    line: i + 1,
                    word: w.to_string(),
                });
            }
            words.insert(w.to_string());
        }
        if words.is_empty() {
            return Err(StopwordError::Empty);
        }
        Ok(StopwordList { words })
    }

    pub fn from_file(path: &Path) -> Result<Self, StopwordError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn bengali() -> Self {
        Self::parse(BENGALI_STOPWORDS).expect("bundled list is valid")
    }

    pub fn from_words<I, S>(words: I) -> Result<Self, StopwordError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let joined: Vec<String> = words.into_iter().map(|w| w.as_ref().to_string()).collect();
        Self::parse(&joined.join("\n"))
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    /// Words in code-point order.
    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.words.iter().map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Characters deleted outright by [`clean_text`].
pub fn is_removed_char(c: char) -> bool {
    c.is_ascii_punctuation()
        || c.is_ascii_digit()
        || ('\u{09E6}'..='\u{09EF}').contains(&c) // Bengali digits
        || c == '\u{0964}' // danda
        || c == '\u{0965}' // double danda
        || ('\u{2010}'..='\u{2027}').contains(&c) // dashes, quotes, bullets, ellipsis
        || ('\u{2030}'..='\u{205E}').contains(&c)
}

/// Characters turned into a separating space: control characters and any
/// Unicode whitespace.
fn is_separator(c: char) -> bool {
    c.is_control() || c.is_whitespace()
}

/// Normalises raw article text: control characters and whitespace become
/// single spaces, digits and punctuation are deleted, and the result is
/// trimmed. Bengali letters and signs are left untouched.
pub fn clean_text(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut pending_space = false;
    for c in raw.chars() {
        if is_separator(c) {
            pending_space = true;
        } else if is_removed_char(c) {
            continue;
        } else {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.push(c);
        }
    }
    out
}

/// Splits cleaned text on spaces, skipping empty pieces.
pub fn tokenize_words(cleaned: &str) -> Vec<String> {
    cleaned
        .split(' ')
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Order-preserving stopword filter.
pub fn remove_stopwords(tokens: &[String], stops: &StopwordList) -> Vec<String> {
    tokens
        .iter()
        .filter(|t| !stops.contains(t))
        .cloned()
        .collect()
}

/// Minimum-length rule deciding which articles are kept.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RetentionFilter {
    pub threshold: usize,
    /// keep articles whose count equals the threshold
    pub inclusive: bool,
    /// count words before stopword removal (otherwise after)
    pub count_before_stopwords: bool,
}

impl Default for RetentionFilter {
    fn default() -> Self {
        RetentionFilter {
            threshold: 100,
            inclusive: true,
            count_before_stopwords: true,
        }
    }
}

impl RetentionFilter {
    pub fn retains(&self, word_count: usize) -> bool {
        if self.inclusive {
            word_count >= self.threshold
        } else {
            word_count > self.threshold
        }
    }
}

/// `true` iff `tokens.len() >= threshold`.
pub fn word_count_filter(tokens: &[String], threshold: usize) -> bool {
    tokens.len() >= threshold
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CleanDocument {
    pub article_id: String,
    pub tokens: Vec<String>,
    pub label: u8,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FilterReason {
    BelowThreshold { words: usize, threshold: usize },
}

impl fmt::Display for FilterReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FilterReason::BelowThreshold { words, threshold } => {
                write!(f, "below_threshold ({words} < {threshold})")
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Preprocessed {
    Kept(CleanDocument),
    Filtered(FilterReason),
}

/// clean → tokenize → retention filter → stopword removal, applied to the
/// article body.
pub fn preprocess_article(
    article: &Article,
    stops: &StopwordList,
    filter: &RetentionFilter,
) -> Preprocessed {
    let raw_tokens = tokenize_words(&clean_text(&article.content));
    let tokens = remove_stopwords(&raw_tokens, stops);
    let counted = if filter.count_before_stopwords {
        raw_tokens.len()
    } else {
        tokens.len()
    };
    if !filter.retains(counted) {
        return Preprocessed::Filtered(FilterReason::BelowThreshold {
            words: counted,
            threshold: filter.threshold,
        });
    }
    Preprocessed::Kept(CleanDocument {
        article_id: article.article_id.clone(),
        tokens,
        label: article.label,
    })
}

/// Token counts ordered by count descending, then token ascending.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FrequencyTable {
    pub entries: Vec<(String, u64)>,
}

/// Which stage of the pipeline the counted tokens come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TokenStage {
    Cleaned,
    StopwordsRemoved,
}

impl TokenStage {
    pub fn as_str(self) -> &'static str {
        match self {
            TokenStage::Cleaned => "cleaned",
            TokenStage::StopwordsRemoved => "stopwords_removed",
        }
    }
}

impl FrequencyTable {
    pub fn from_token_lists<'a, I>(lists: I, top_k: Option<usize>) -> Self
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        let mut counts: HashMap<&'a str, u64> = HashMap::new();
        for list in lists {
            for t in list {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
        let mut entries: Vec<(String, u64)> = counts
            .into_iter()
            .map(|(t, c)| (t.to_string(), c))
            .collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        if let Some(k) = top_k {
            entries.truncate(k);
        }
        FrequencyTable { entries }
    }

    pub fn total(&self) -> u64 {
        self.entries.iter().map(|e| e.1).sum()
    }

    /// Writes `token<TAB>count` lines. A leading `#` line names the split and
    /// token stage the counts were taken from.
    pub fn write_tsv<W: Write>(
        &self,
        mut w: W,
        split: &str,
        stage: TokenStage,
    ) -> std::io::Result<()> {
        writeln!(w, "# split={split} stage={}", stage.as_str())?;
        for (t, c) in &self.entries {
            writeln!(w, "{t}\t{c}")?;
        }
        Ok(())
    }
}

/// Counts tokens over all documents and keeps the `top_k` most frequent.
pub fn term_frequencies(docs: &[CleanDocument], top_k: usize) -> FrequencyTable {
    FrequencyTable::from_token_lists(docs.iter().map(|d| d.tokens.as_slice()), Some(top_k))
}
