//! CSV ingestion of the four news files and assembly of the fixed
//! train/test split (authentic + fake for training, the labeled pair for
//! testing; no random splitting).

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("{path}: header is missing mandatory column `{column}`")]
    MalformedHeader { path: PathBuf, column: String },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Related,
    Unrelated,
}

/// One news record. `label` is 1 for authentic, 0 for fake.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Article {
    pub article_id: String,
    pub domain: String,
    pub date: String,
    pub category: String,
    pub headline: String,
    pub content: String,
    pub label: u8,
    pub source: Option<String>,
    pub relation: Option<Relation>,
    pub f_type: Option<String>,
}

/// A rejected data row. `row` is 1-based and counts data rows only (the
/// header is not row 1).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RowError {
    pub row: usize,
    pub reason: String,
}

#[derive(Clone, Debug, Default)]
pub struct LoadReport {
    pub articles: Vec<Article>,
    pub errors: Vec<RowError>,
}

pub const MANDATORY_COLUMNS: [&str; 7] = [
    "articleID",
    "domain",
    "date",
    "category",
    "headline",
    "content",
    "label",
];

/// Parses one dataset file. Rows that fail validation are returned in
/// [`LoadReport::errors`] rather than dropped silently. Extended columns
/// (`source`, `relation`, `F-type`) are read only when `has_extended_columns`
/// is set.
pub fn load_articles(path: &Path, has_extended_columns: bool) -> Result<LoadReport, CorpusError> {
    if !path.is_file() {
        return Err(CorpusError::FileNotFound(path.to_path_buf()));
    }
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_articles(file, path, has_extended_columns)
}

fn parse_articles<R: Read>(
    reader: R,
    path: &Path,
    extended: bool,
) -> Result<LoadReport, CorpusError> {
    let csv_err = |source| CorpusError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim().trim_start_matches('\u{feff}') == name)
    };
    let mut idx = HashMap::new();
    for name in MANDATORY_COLUMNS {
        let i = col(name).ok_or_else(|| CorpusError::MalformedHeader {
            path: path.to_path_buf(),
            column: name.to_string(),
        })?;
        idx.insert(name, i);
    }
    let source_col = col("source");
    let relation_col = col("relation");
    let ftype_col = col("F-type");

    let mut report = LoadReport::default();
    let mut seen = HashSet::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                report.errors.push(RowError {
                    row,
                    reason: format!("unreadable record: {e}"),
                });
                continue;
            }
        };
        let field = |name: &str| rec.get(idx[name]).map(str::to_string);
        let opt = |c: Option<usize>| {
            c.and_then(|c| rec.get(c))
                .map(str::trim)
                .filter(|s| !s.is_empty())
        };

        let mut missing = Vec::new();
        for name in MANDATORY_COLUMNS {
            if rec.get(idx[name]).is_none() {
                missing.push(name);
            }
        }
        if !missing.is_empty() {
            report.errors.push(RowError {
                row,
                reason: format!("missing field(s): {}", missing.join(", ")),
            });
            continue;
        }
        let article_id = field("articleID").unwrap_or_default().trim().to_string();
        if article_id.is_empty() {
            report.errors.push(RowError {
                row,
                reason: "empty articleID".into(),
            });
            continue;
        }
        let label = match field("label").unwrap_or_default().trim() {
            "1" => 1,
            "0" => 0,
            "" => {
                report.errors.push(RowError {
                    row,
                    reason: "missing label".into(),
                });
                continue;
            }
            other => {
                report.errors.push(RowError {
                    row,
                    reason: format!("label `{other}` is not 0 or 1"),
                });
                continue;
            }
        };
        let content = field("content").unwrap_or_default();
        if content.trim().is_empty() {
            report.errors.push(RowError {
                row,
                reason: "empty content".into(),
            });
            continue;
        }
        let (source, relation, f_type) = if extended {
            let relation = match opt(relation_col) {
                None => None,
                Some(r) if r.eq_ignore_ascii_case("related") => Some(Relation::Related),
                Some(r) if r.eq_ignore_ascii_case("unrelated") => Some(Relation::Unrelated),
                Some(r) => {
                    report.errors.push(RowError {
                        row,
                        reason: format!("relation `{r}` is neither related nor unrelated"),
                    });
                    continue;
                }
            };
            let f_type = opt(ftype_col).map(str::to_string);
            if f_type.is_some() && label == 1 {
                report.errors.push(RowError {
                    row,
                    reason: "F-type present on an authentic article".into(),
                });
                continue;
            }
            (opt(source_col).map(str::to_string), relation, f_type)
        } else {
            (None, None, None)
        };
        if !seen.insert(article_id.clone()) {
            report.errors.push(RowError {
                row,
                reason: format!("duplicate articleID `{article_id}`"),
            });
            continue;
        }
        report.articles.push(Article {
            article_id,
            domain: field("domain").unwrap_or_default(),
            date: field("date").unwrap_or_default(),
            category: field("category").unwrap_or_default(),
            headline: field("headline").unwrap_or_default(),
            content,
            label,
            source,
            relation,
            f_type,
        });
    }
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Authentic,
    Fake,
}

/// An article id present in both a training file and the test file of the
/// same family. The test copy is dropped.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitOverlap {
    pub family: Family,
    pub article_id: String,
}

#[derive(Clone, Debug, Default)]
pub struct DatasetSplit {
    pub train: Vec<Article>,
    pub test: Vec<Article>,
    /// articles accepted per input file
    pub provenance: BTreeMap<String, usize>,
    pub row_errors: BTreeMap<String, Vec<RowError>>,
    pub overlaps: Vec<SplitOverlap>,
}

/// Paths of the four corpus files.
#[derive(Clone, Debug)]
pub struct CorpusFiles {
    pub authentic: PathBuf,
    pub fake: PathBuf,
    pub labeled_authentic: PathBuf,
    pub labeled_fake: PathBuf,
}

/// Builds the fixed split: train = authentic ∪ fake, test = labeled authentic
/// ∪ labeled fake, in file order. Ids shared between the train and test file
/// of one family are reported and kept in train only.
pub fn assemble_split(files: &CorpusFiles) -> Result<DatasetSplit, CorpusError> {
    let mut split = DatasetSplit::default();
    let families = [
        (
            Family::Authentic,
            &files.authentic,
            &files.labeled_authentic,
        ),
        (Family::Fake, &files.fake, &files.labeled_fake),
    ];
    let mut test_parts = Vec::new();
    for (family, train_path, test_path) in families {
        let train = load_articles(train_path, false)?;
        let test = load_articles(test_path, true)?;
        let train_ids: HashSet<&str> = train
            .articles
            .iter()
            .map(|a| a.article_id.as_str())
            .collect();
        let mut kept_test = Vec::with_capacity(test.articles.len());
        for a in test.articles {
            if train_ids.contains(a.article_id.as_str()) {
                split.overlaps.push(SplitOverlap {
                    family,
                    article_id: a.article_id,
                });
            } else {
                kept_test.push(a);
            }
        }
        split
            .provenance
            .insert(display(train_path), train.articles.len());
        split.provenance.insert(display(test_path), kept_test.len());
        split.row_errors.insert(display(train_path), train.errors);
        split.row_errors.insert(display(test_path), test.errors);
        split.train.extend(train.articles);
        test_parts.push(kept_test);
    }
    for part in test_parts {
        split.test.extend(part);
    }
    Ok(split)
}

fn display(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}
