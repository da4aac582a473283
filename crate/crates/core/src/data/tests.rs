use std::collections::HashSet;

use proptest::prelude::{prop_assert_eq, proptest};

use super::*;
use crate::task::{HeadKind, Split};

fn write(dir: &tempfile::TempDir, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn vocab_reserves_pad_and_unk() {
    let v = Vocab::from_tokens(["a", "b"]);
    assert_eq!(v.get(PAD_TOKEN), PAD);
    assert_eq!(v.get(UNK_TOKEN), UNK);
    assert_eq!(v.get("a"), 2);
    assert_eq!(v.get("never"), UNK);
    assert_eq!(v.len(), 4);
}

#[test]
fn vocab_build_orders_by_count_then_token() {
    let seqs: Vec<Vec<String>> = vec![
        vec!["b".into(), "a".into(), "c".into()],
        vec!["c".into(), "a".into()],
    ];
    let v = Vocab::build(seqs.iter().map(Vec::as_slice), 1);
    assert_eq!(&v.tokens()[2..], &["a", "c", "b"]);
    let v2 = Vocab::build(seqs.iter().map(Vec::as_slice), 2);
    assert_eq!(v2.len(), 4);
}

#[test]
fn vocab_save_load() {
    let dir = tempfile::tempdir().unwrap();
    let v = Vocab::from_tokens(["x", "y", "z"]);
    let p = dir.path().join("vocab.txt");
    v.save(&p).unwrap();
    let back = Vocab::load(&p).unwrap();
    assert_eq!(back, v);
    assert_eq!(back.hash(), v.hash());
    assert_ne!(Vocab::from_tokens(["x"]).hash(), v.hash());
}

proptest! {
    #[test]
    fn vocab_roundtrip(words in proptest::collection::vec("[a-z]{1,6}", 1..30)) {
        let v = Vocab::from_tokens(&words);
        prop_assert_eq!(v.decode(&v.encode(&words)), words);
    }
}

#[test]
fn classification_split_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let text: String = (0..10).map(|i| format!("{}\tline number {i}\n", i % 2)).collect();
    let p = write(&dir, "c.tsv", &text);
    let s = load_classification(&p, 1).unwrap();
    assert_eq!((s.train.len(), s.dev.len(), s.test.len()), (7, 1, 2));
    let again = load_classification(&p, 1).unwrap();
    assert_eq!(s, again);
    let all: HashSet<_> = s
        .train
        .iter()
        .chain(&s.dev)
        .chain(&s.test)
        .map(|r| r.tokens.clone())
        .collect();
    assert_eq!(all.len(), 10);
}

#[test]
fn classification_line_is_tokenised_and_lowercased() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(&dir, "c.tsv", "1\tGreat  Toy\n");
    let r = read_classification(&p).unwrap();
    assert_eq!(r[0].tokens, vec!["great", "toy"]);
    assert_eq!(r[0].label, 1);
}

#[test]
fn classification_truncates_long_lines() {
    let dir = tempfile::tempdir().unwrap();
    let long = vec!["t"; MAX_TOKENS + 50].join(" ");
    let p = write(&dir, "c.tsv", &format!("0\t{long}\n"));
    assert_eq!(read_classification(&p).unwrap()[0].tokens.len(), MAX_TOKENS);
}

#[test]
fn classification_malformed_line_reports_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(&dir, "c.tsv", "0\tfine\n\nno tab here\n");
    match read_classification(&p) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("expected parse error, got {other:?}"),
    }
    let p = write(&dir, "d.tsv", "x\ttext\n");
    assert!(matches!(read_classification(&p), Err(Error::Parse { line: 1, .. })));
}

#[test]
fn conll_two_sentences() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(
        &dir,
        "a.conll",
        "-DOCSTART- -X- O\n\nEU NNP B-ORG\nrejects VBZ O\n\nPeter NNP B-PER\n",
    );
    let s = load_conll(&p).unwrap();
    assert_eq!(s.len(), 2);
    assert_eq!(s[0].tokens, vec!["EU", "rejects"]);
    assert_eq!(s[0].tags, vec!["B-ORG", "O"]);
    assert_eq!(tagset(&s), vec!["O", "B-ORG", "B-PER"]);
}

#[test]
fn conll_empty_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(&dir, "e.conll", "");
    assert!(load_conll(&p).unwrap().is_empty());
}

#[test]
fn conll_ragged_columns() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(&dir, "r.conll", "a X O\nb O\n");
    assert!(matches!(load_conll(&p), Err(Error::Parse { line: 2, .. })));
}

#[test]
fn conll_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let sents = vec![
        TaggedSentence {
            tokens: vec!["He".into(), "reckons".into(), ".".into()],
            tags: vec!["B-NP".into(), "B-VP".into(), "O".into()],
        },
        TaggedSentence {
            tokens: vec!["Ok".into()],
            tags: vec!["I-NP".into()],
        },
    ];
    let p = dir.path().join("rt.conll");
    write_conll(&p, &sents).unwrap();
    assert_eq!(load_conll(&p).unwrap(), sents);
}

#[test]
fn tagging_encoding_lowercases_tokens() {
    let v = Vocab::from_tokens(["eu"]);
    let s = vec![TaggedSentence {
        tokens: vec!["EU".into(), "x".into()],
        tags: vec!["B".into(), "O".into()],
    }];
    let tags = tagset(&s);
    let ex = encode_tagging(&s, &v, &tags).unwrap();
    assert_eq!(ex[0].tokens, vec![2, UNK]);
    assert_eq!(ex[0].label, Label::Tags(vec![1, 0]));
    assert!(encode_tagging(&s, &v, &tags[..1]).is_err());
}

#[test]
fn embeddings_full_coverage() {
    let dir = tempfile::tempdir().unwrap();
    let v = Vocab::from_tokens(["a", "b"]);
    let p = write(&dir, "e.txt", "a 1 2\nb 3 4\nzzz 5 6\n");
    let t = load_embeddings(&p, &v, 2, 0).unwrap();
    assert_eq!(t.random_rows, 0);
    assert_eq!(t.found, 2);
    assert_eq!(t.matrix.row(2), &[1.0, 2.0]);
    assert_eq!(t.matrix.row(3), &[3.0, 4.0]);
    assert_eq!(t.matrix.row(PAD), &[0.0, 0.0]);
}

#[test]
fn embeddings_empty_file_is_random_and_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let v = Vocab::from_tokens(["a", "b", "c"]);
    let p = write(&dir, "e.txt", "");
    let t1 = load_embeddings(&p, &v, 4, 9).unwrap();
    let t2 = load_embeddings(&p, &v, 4, 9).unwrap();
    assert_eq!(t1.random_rows, 3);
    assert_eq!(t1.matrix, t2.matrix);
    assert!(t1.matrix.as_slice().iter().all(|x| x.abs() < 0.1));
}

#[test]
fn embeddings_coverage_is_set_intersection() {
    let dir = tempfile::tempdir().unwrap();
    let vocab_words = ["a", "b", "c", "d", "e"];
    let file_words = ["c", "e", "q", "a", "r", "c"];
    let v = Vocab::from_tokens(vocab_words);
    let text: String = file_words.iter().map(|w| format!("{w} 0.5\n")).collect();
    let p = write(&dir, "e.txt", &text);
    let t = load_embeddings(&p, &v, 1, 0).unwrap();
    let a: HashSet<&str> = vocab_words.into_iter().collect();
    let b: HashSet<&str> = file_words.into_iter().collect();
    assert_eq!(t.found, a.intersection(&b).count());
    assert_eq!(t.random_rows, vocab_words.len() - t.found);
}

#[test]
fn embeddings_wrong_length_names_token() {
    let dir = tempfile::tempdir().unwrap();
    let v = Vocab::from_tokens(["a"]);
    let p = write(&dir, "e.txt", "a 1 2 3\n");
    let err = load_embeddings(&p, &v, 2, 0).unwrap_err();
    assert!(err.to_string().contains("`a`"), "{err}");
}

#[test]
fn written_embeddings_load_back_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let v = Vocab::from_tokens(["a", "b", "c"]);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let table = Matrix::uniform(v.len(), 3, 1.0, &mut rng);
    let p = dir.path().join("e.txt");
    write_embeddings(&p, &v, &table).unwrap();
    let t = load_embeddings(&p, &v, 3, 0).unwrap();
    assert_eq!(t.found, 3);
    for i in 2..v.len() {
        assert_eq!(t.matrix.row(i), table.row(i));
    }
    let short = Matrix::zeros(2, 3);
    assert!(write_embeddings(&p, &v, &short).is_err());
}

#[test]
fn batches_cover_every_index_once() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let b = batches(37, 16, &mut rng);
    assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![16, 16, 5]);
    let mut all: Vec<usize> = b.concat();
    all.sort_unstable();
    assert_eq!(all, (0..37).collect::<Vec<_>>());
}

#[test]
fn synth_is_deterministic() {
    let a = synth_tasks(3, 5);
    let b = synth_tasks(3, 5);
    assert_eq!(a.tasks, b.tasks);
    assert_ne!(a.tasks[0].corpus, synth_tasks(3, 6).tasks[0].corpus);
}

#[test]
fn synth_shapes_balance_and_disjointness() {
    let s = synth_tasks(4, 1);
    assert_eq!(s.vocab.len(), 52);
    let ids: HashSet<_> = s.tasks.iter().map(|t| t.id.clone()).collect();
    assert_eq!(ids.len(), 4);
    for (k, task) in s.tasks.iter().enumerate() {
        task.validate(s.vocab.len()).unwrap();
        assert_eq!(task.head, HeadKind::Classification { n_classes: 2 });
        let mut seen = HashSet::new();
        for (split, n) in [(Split::Train, 600), (Split::Dev, 100), (Split::Test, 200)] {
            let ex = task.corpus.split(split);
            assert_eq!(ex.len(), n);
            let pos = ex.iter().filter(|e| e.label == Label::Class(1)).count();
            let frac = pos as f64 / n as f64;
            assert!((0.45..=0.55).contains(&frac), "{frac}");
            for e in ex {
                assert!((8..=15).contains(&e.tokens.len()));
                assert!(seen.insert(e.tokens.clone()), "splits overlap");
                let Label::Class(c) = e.label else { panic!() };
                assert_eq!(s.oracle_label(k, &e.tokens), Some(c));
                assert_eq!(s.trigger_positions(k, &e.tokens).len(), 1);
            }
        }
    }
}
