//! Property tests for the manifest format: canonical round-trip, split
//! partition, and rejection of invalid lines.

use memodetector::data::{
    assign_splits, read_manifest, split_view, write_manifest, DataError, Split,
};
use proptest::prelude::*;
use std::io::Cursor;

fn label_names() -> impl Strategy<Value = Vec<String>> {
    proptest::collection::btree_set("[a-z]{2,8}", 2..6)
        .prop_map(|set| set.into_iter().collect())
}

#[derive(Debug, Clone)]
struct RawMeme {
    text: String,
    label_idx: usize,
    split: Option<Split>,
    language: Option<String>,
}

fn meme_strategy(labels: usize) -> impl Strategy<Value = RawMeme> {
    (
        "[ -~]{0,20}",
        0..labels,
        proptest::option::of(prop_oneof![
            Just(Split::Train),
            Just(Split::Val),
            Just(Split::Test)
        ]),
        proptest::option::of("[a-z]{2}"),
    )
        .prop_map(|(text, label_idx, split, language)| RawMeme {
            text,
            label_idx,
            split,
            language,
        })
}

fn manifest_strategy() -> impl Strategy<Value = String> {
    (label_names(), 0usize..12)
        .prop_flat_map(|(labels, n)| {
            let k = labels.len();
            (
                Just(labels),
                proptest::collection::vec(meme_strategy(k), n..=n),
            )
        })
        .prop_map(|(labels, memes)| {
            let mut lines = vec![serde_json::json!({
                "kind": "header",
                "name": "prop",
                "labels": labels,
            })
            .to_string()];
            for (i, meme) in memes.iter().enumerate() {
                let mut obj = serde_json::json!({
                    "kind": "meme",
                    "id": format!("m{i}"),
                    "image": format!("img{i}.png"),
                    "text": meme.text,
                    "label": labels[meme.label_idx],
                });
                if let Some(split) = meme.split {
                    obj["split"] = serde_json::json!(split.as_str());
                }
                if let Some(lang) = &meme.language {
                    obj["language"] = serde_json::json!(lang);
                }
                lines.push(obj.to_string());
            }
            lines.join("\n")
        })
}

/// Corpus-scale shapes: a bilingual 10,045-instance manifest with seven
/// labels and a 10,004-instance manifest with six, loaded in full.
#[test]
fn corpus_scale_manifests_load() {
    let build = |total: usize, labels: &[&str], bilingual: bool| -> String {
        let mut lines = vec![serde_json::json!({
            "kind": "header",
            "name": "corpus",
            "labels": labels,
        })
        .to_string()];
        for i in 0..total {
            let language = if bilingual && i >= 4000 { "zh" } else { "en" };
            lines.push(format!(
                r#"{{"kind":"meme","id":"m{i}","image":"img/{i}.png","text":"t{i}","label":"{}","split":"train","language":"{language}"}}"#,
                labels[i % labels.len()]
            ));
        }
        lines.join("\n")
    };

    let seven = ["a", "b", "c", "d", "e", "f", "g"];
    let manifest = read_manifest(
        Cursor::new(build(10_045, &seven, true).as_bytes()),
        None,
    )
    .unwrap();
    assert_eq!(manifest.instances.len(), 10_045);
    assert_eq!(manifest.vocab.size(), 7);
    let english = manifest
        .instances
        .iter()
        .filter(|m| m.language.as_deref() == Some("en"))
        .count();
    assert_eq!(english, 4_000);
    assert_eq!(manifest.instances.len() - english, 6_045);

    let six = ["a", "b", "c", "d", "e", "f"];
    let manifest = read_manifest(Cursor::new(build(10_004, &six, false).as_bytes()), None).unwrap();
    assert_eq!(manifest.instances.len(), 10_004);
    assert_eq!(manifest.vocab.size(), 6);
}

proptest! {
    /// write(load(x)) is a fixed point: loading the canonical form and
    /// writing again is byte-identical.
    #[test]
    fn round_trip_reaches_canonical_fixed_point(raw in manifest_strategy()) {
        let manifest = read_manifest(Cursor::new(raw.as_bytes()), None).unwrap();
        let mut first = Vec::new();
        write_manifest(&manifest, &mut first).unwrap();
        let reparsed = read_manifest(Cursor::new(first.as_slice()), None).unwrap();
        let mut second = Vec::new();
        write_manifest(&reparsed, &mut second).unwrap();
        prop_assert_eq!(first, second);
    }

    /// The three split views are disjoint and, once tags are assigned,
    /// their union is the full instance set.
    #[test]
    fn split_views_partition(raw in manifest_strategy(), seed in 0u64..100) {
        let mut manifest = read_manifest(Cursor::new(raw.as_bytes()), None).unwrap();
        assign_splits(&mut manifest, seed, (8, 1, 1));
        let train = split_view(&manifest, Split::Train);
        let val = split_view(&manifest, Split::Val);
        let test = split_view(&manifest, Split::Test);
        prop_assert_eq!(train.len() + val.len() + test.len(), manifest.instances.len());
        let mut ids: Vec<&str> = train.iter().chain(&val).chain(&test).map(|m| m.id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        prop_assert_eq!(ids.len(), manifest.instances.len());
    }

    /// A duplicated id is rejected wherever it appears.
    #[test]
    fn duplicate_ids_rejected(raw in manifest_strategy(), dup_line in 1usize..12) {
        let mut lines: Vec<&str> = raw.lines().collect();
        if lines.len() > 2 {
            let src = lines[1.max(dup_line % lines.len()).min(lines.len() - 1)];
            if src.contains("\"kind\":\"meme\"") {
                lines.push(src);
                let joined = lines.join("\n");
                let result = read_manifest(Cursor::new(joined.as_bytes()), None);
                let is_duplicate = matches!(result, Err(DataError::DuplicateId { .. }));
                prop_assert!(is_duplicate);
            }
        }
    }

    /// Any undeclared label name is rejected with its line number.
    #[test]
    fn undeclared_labels_rejected(raw in manifest_strategy()) {
        let mut lines: Vec<String> = raw.lines().map(str::to_string).collect();
        lines.push(
            r#"{"kind":"meme","id":"zz-bad","image":"x.png","text":"t","label":"never-declared","split":"train"}"#
                .to_string(),
        );
        let joined = lines.join("\n");
        let result = read_manifest(Cursor::new(joined.as_bytes()), None);
        let expected_line = lines.len();
        match result {
            Err(DataError::UnknownLabel { line, .. }) => prop_assert_eq!(line, expected_line),
            other => prop_assert!(false, "expected UnknownLabel, got {:?}", other),
        }
    }

    /// Random garbage lines surface as parse errors with line numbers,
    /// never panics.
    #[test]
    fn garbage_lines_are_parse_errors(raw in manifest_strategy(), junk in "[^\\s{][ -~]{0,30}") {
        let joined = format!("{raw}\n{junk}");
        let expected_line = joined.lines().count();
        match read_manifest(Cursor::new(joined.as_bytes()), None) {
            Err(DataError::Parse { line, .. }) => prop_assert_eq!(line, expected_line),
            Err(_) | Ok(_) => {
                // a junk string that happens to parse as a valid record is fine
            }
        }
    }
}
