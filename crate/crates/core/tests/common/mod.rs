#![allow(dead_code)]

use std::path::{Path, PathBuf};

use bnfake::corpus::CorpusFiles;
use bnfake::textprep::CleanDocument;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CONSONANTS: [char; 20] = [
    'ক', 'খ', 'গ', 'ঘ', 'চ', 'ছ', 'জ', 'ট', 'ড', 'ত', 'থ', 'দ', 'ন', 'প', 'ব', 'ম', 'র', 'ল', 'স',
    'হ',
];
const SIGNS: [char; 6] = [
    '\u{09BE}', '\u{09BF}', '\u{09C0}', '\u{09C1}', '\u{09C7}', '\u{09CB}',
];

/// Deterministic pseudo-Bengali word for index `i` (distinct for distinct `i`).
pub fn word(i: usize) -> String {
    let mut s = String::new();
    let mut n = i;
    loop {
        s.push(CONSONANTS[n % CONSONANTS.len()]);
        s.push(SIGNS[(n / CONSONANTS.len()) % SIGNS.len()]);
        n /= CONSONANTS.len() * SIGNS.len();
        if n == 0 {
            break;
        }
        n -= 1;
    }
    s
}

/// Balanced toy documents: every document mixes `signal` class-specific words
/// with shared filler words.
pub fn toy_documents(per_class: usize, len: usize, signal: usize, seed: u64) -> Vec<CleanDocument> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut docs = Vec::new();
    for i in 0..2 * per_class {
        let label = (i % 2) as u8;
        let mut tokens: Vec<String> = (0..len)
            .map(|_| word(100 + rng.random_range(0..40)))
            .collect();
        for _ in 0..signal {
            let pos = rng.random_range(0..len);
            tokens[pos] = word(usize::from(label) * 20 + rng.random_range(0..20));
        }
        docs.push(CleanDocument {
            article_id: format!("d{i}"),
            tokens,
            label,
        });
    }
    docs
}

fn csv_field(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\""))
}

/// Writes a corpus CSV. Test files (`extended`) carry the extra columns.
pub fn write_corpus(path: &Path, rows: &[(String, String, u8)], extended: bool) {
    let mut out = String::from("articleID,domain,date,category,headline,content,label");
    if extended {
        out.push_str(",source,relation,F-type");
    }
    out.push('\n');
    for (id, content, label) in rows {
        out.push_str(&format!(
            "{id},example.com,2019-01-01,national,{},{},{label}",
            csv_field("শিরোনাম"),
            csv_field(content)
        ));
        if extended {
            let f_type = if *label == 0 { "Fake" } else { "" };
            out.push_str(&format!(",সূত্র,Related,{f_type}"));
        }
        out.push('\n');
    }
    std::fs::write(path, out).unwrap();
}

/// Article text of roughly `words` words with some punctuation, digits and
/// stopwords mixed in; class signal carried by a few label-specific words.
pub fn article_text(rng: &mut ChaCha8Rng, label: u8, words: usize) -> String {
    let mut parts = Vec::new();
    for i in 0..words {
        let w = match rng.random_range(0..10) {
            0 => word(usize::from(label) * 15 + rng.random_range(0..15)),
            1 => "এবং".to_string(),
            _ => word(200 + rng.random_range(0..120)),
        };
        parts.push(w);
        if i % 17 == 16 {
            parts.push("।".into());
        }
        if i % 29 == 28 {
            parts.push(format!("{}", rng.random_range(0..2025)));
        }
    }
    parts.join(" ")
}

/// Four corpus files with the given article counts
/// (train authentic, train fake, test authentic, test fake).
pub fn write_fixture_corpus(dir: &Path, counts: [usize; 4], seed: u64) -> CorpusFiles {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names = [
        "authentic.csv",
        "fake.csv",
        "labeled_authentic.csv",
        "labeled_fake.csv",
    ];
    let labels = [1u8, 0, 1, 0];
    let mut next_id = 1usize;
    let mut paths: Vec<PathBuf> = Vec::new();
    for k in 0..4 {
        let rows: Vec<(String, String, u8)> = (0..counts[k])
            .map(|_| {
                let id = next_id;
                next_id += 1;
                let n = rng.random_range(100..140);
                (
                    id.to_string(),
                    article_text(&mut rng, labels[k], n),
                    labels[k],
                )
            })
            .collect();
        let p = dir.join(names[k]);
        write_corpus(&p, &rows, k >= 2);
        paths.push(p);
    }
    CorpusFiles {
        authentic: paths[0].clone(),
        fake: paths[1].clone(),
        labeled_authentic: paths[2].clone(),
        labeled_fake: paths[3].clone(),
    }
}
