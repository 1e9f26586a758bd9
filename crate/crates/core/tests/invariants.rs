use bnfake::evaluation::{auc, confusion, metrics_from_confusion, roc_points};
use bnfake::textprep::{clean_text, is_removed_char, tokenize_words, CleanDocument};
use bnfake::tokenizer::{build_vocabulary, decode, encode_padded, PAD_INDEX};
use bnfake::training::balance_by_oversampling;
use proptest::prelude::*;

fn mixed_text() -> impl Strategy<Value = String> {
    proptest::collection::vec(
        prop_oneof![
            4 => proptest::char::range('\u{0980}', '\u{09FF}'),
            2 => Just(' '),
            1 => proptest::char::range('!', '~'),
            1 => prop_oneof![Just('\n'), Just('\t'), Just('\u{00A0}'), Just('\u{2014}'), Just('\u{0964}')],
        ],
        0..80,
    )
    .prop_map(|v| v.into_iter().collect())
}

fn labelled_scores() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (2usize..40)
        .prop_flat_map(|n| {
            (
                proptest::collection::vec(
                    prop_oneof![0.0..1.0f64, (0u8..5).prop_map(|k| f64::from(k) / 4.0)],
                    n,
                ),
                proptest::collection::vec(0u8..2, n),
            )
        })
        .prop_filter("both classes", |(_, y)| y.contains(&0) && y.contains(&1))
}

proptest! {
    #[test]
    fn cleaning_is_idempotent_and_strips_removed_chars(raw in mixed_text()) {
        let once = clean_text(&raw);
        prop_assert_eq!(clean_text(&once), once.clone());
        prop_assert!(once.chars().count() <= raw.chars().count());
        prop_assert!(!once.chars().any(is_removed_char));
        prop_assert!(!once.starts_with(' ') && !once.ends_with(' ') && !once.contains("  "));
        let tokens = tokenize_words(&once);
        prop_assert_eq!(tokens.join(" "), once);
    }

    #[test]
    fn padded_encoding_has_fixed_length_and_round_trips(
        words in proptest::collection::vec(0usize..30, 0..50),
        len in 1usize..40,
    ) {
        let tokens: Vec<String> = words.iter().map(|w| format!("w{w}")).collect();
        let vocab_doc = CleanDocument {
            article_id: "v".into(),
            tokens: (0..20).map(|w| format!("w{w}")).collect(),
            label: 1,
        };
        let vocab = build_vocabulary(&[vocab_doc], 100).unwrap();
        let seq = encode_padded(&tokens, &vocab, len);
        prop_assert_eq!(seq.len(), len);
        prop_assert_eq!(seq.valid_len, tokens.len().min(len));
        prop_assert!(seq.indices[seq.valid_len..].iter().all(|&i| i == PAD_INDEX));
        let decoded = decode(&seq.indices[..seq.valid_len], &vocab);
        for (tok, back) in tokens.iter().zip(decoded) {
            let known: usize = tok[1..].parse().unwrap();
            prop_assert_eq!(back.as_deref(), (known < 20).then_some(tok.as_str()));
        }
    }

    #[test]
    fn confusion_counts_every_example_once(pairs in proptest::collection::vec((0u8..2, 0u8..2), 1..200)) {
        let (labels, preds): (Vec<u8>, Vec<u8>) = pairs.iter().copied().unzip();
        let cm = confusion(&labels, &preds).unwrap();
        prop_assert_eq!(cm.total() as usize, labels.len());
        let swapped = confusion(
            &labels.iter().map(|y| 1 - y).collect::<Vec<_>>(),
            &preds.iter().map(|p| 1 - p).collect::<Vec<_>>(),
        )
        .unwrap();
        prop_assert_eq!((swapped.tp, swapped.tn, swapped.fp, swapped.fn_), (cm.tn, cm.tp, cm.fn_, cm.fp));
        let m = metrics_from_confusion(cm, None, 0.5).unwrap();
        for v in [m.accuracy, m.precision, m.recall, m.f1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert!(m.f1 <= m.precision.max(m.recall) + 1e-12);
    }

    #[test]
    fn roc_is_monotone_and_auc_is_bounded((scores, labels) in labelled_scores()) {
        let curve = roc_points(&scores, &labels).unwrap();
        let first = curve.points[0];
        let last = curve.points[curve.points.len() - 1];
        prop_assert_eq!((first.fpr, first.tpr), (0.0, 0.0));
        prop_assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        for w in curve.points.windows(2) {
            prop_assert!(w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr);
            prop_assert!(w[1].threshold < w[0].threshold);
        }
        let a = auc(&curve);
        prop_assert!((0.0..=1.0).contains(&a));
        let swapped: Vec<u8> = labels.iter().map(|y| 1 - y).collect();
        let negated: Vec<f64> = scores.iter().map(|s| -s).collect();
        prop_assert!((auc(&roc_points(&negated, &swapped).unwrap()) - a).abs() < 1e-12);
    }

    #[test]
    fn oversampling_balances_and_keeps_originals(pos in 1usize..15, neg in 1usize..15, seed in any::<u64>()) {
        let docs: Vec<CleanDocument> = (0..pos + neg)
            .map(|i| CleanDocument {
                article_id: i.to_string(),
                tokens: vec![format!("t{i}")],
                label: u8::from(i < pos),
            })
            .collect();
        let out = balance_by_oversampling(&docs, seed).unwrap();
        let ones = out.iter().filter(|d| d.label == 1).count();
        prop_assert_eq!(ones, pos.max(neg));
        prop_assert_eq!(out.len() - ones, pos.max(neg));
        for d in &docs {
            prop_assert!(out.iter().any(|o| o == d));
        }
        prop_assert_eq!(balance_by_oversampling(&docs, seed).unwrap(), out);
    }
}
