use proptest::prelude::{prop_assert, proptest};

use super::*;
use crate::cells::LstmParams;
use crate::multitask::{build_model, Architecture, ModelConfig};
use crate::task::{Corpus, TaskSpec};

fn cls() -> TaskSpec {
    TaskSpec::new("c", HeadKind::Classification { n_classes: 2 }, Corpus::default())
}

fn tagger() -> TaskSpec {
    TaskSpec::new(
        "t",
        HeadKind::Tagging {
            tags: vec!["O".into(), "B-X".into(), "I-X".into()],
        },
        Corpus::default(),
    )
}

fn tiny() -> ModelConfig {
    ModelConfig {
        d: 4,
        h: 5,
        m: 3,
        z: 3,
        shared_h: 3,
        private_embeddings: false,
    }
}

#[test]
fn weight_change_of_identical_matrices_is_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let w = Matrix::uniform(4, 3, 1.0, &mut rng);
    assert_eq!(weight_change(&w, &w).unwrap(), 0.0);
}

#[test]
fn weight_change_of_doubled_matrix_is_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let w = Matrix::uniform(4, 3, 1.0, &mut rng).map(|x| x + x.signum() * 0.1);
    let v = weight_change(&w.scale(2.0), &w).unwrap();
    assert!((v - 1.0).abs() < 1e-6, "{v}");
}

#[test]
fn weight_change_matches_elementwise_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let a = Matrix::uniform(3, 3, 2.0, &mut rng);
        let b = Matrix::uniform(3, 3, 2.0, &mut rng);
        let mut total = 0.0;
        for r in 0..3 {
            for c in 0..3 {
                total += (a.get(r, c) - b.get(r, c)).abs() / (b.get(r, c).abs() + 1e-8);
            }
        }
        assert!((weight_change(&a, &b).unwrap() - total / 9.0).abs() < 1e-12);
    }
    assert!(weight_change(&Matrix::zeros(2, 2), &Matrix::zeros(2, 3)).is_err());
}

proptest! {
    #[test]
    fn weight_change_scales_inversely_with_reference(c in 1.5f64..50.0, seed in 0u64..500) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prev = Matrix::uniform(3, 4, 1.0, &mut rng).map(|x| x + x.signum() * 0.2);
        let delta = Matrix::uniform(3, 4, 0.5, &mut rng);
        let mut moved = prev.clone();
        moved.add_assign(&delta);
        let base = weight_change(&moved, &prev).unwrap();
        let scaled_prev = prev.scale(c);
        let mut scaled_moved = scaled_prev.clone();
        scaled_moved.add_assign(&delta);
        let scaled = weight_change(&scaled_moved, &scaled_prev).unwrap();
        prop_assert!((scaled * c - base).abs() <= 1e-6 * base.max(1.0));
    }
}

#[test]
fn spans_follow_bio_with_stray_inside_tags() {
    assert_eq!(
        bio_spans(&["B-PER", "I-PER", "O", "B-LOC"]),
        vec![(0, 2, "PER".to_string()), (3, 4, "LOC".to_string())]
    );
    assert_eq!(bio_spans(&["O", "I-X", "I-X"]), vec![(1, 3, "X".to_string())]);
    assert_eq!(
        bio_spans(&["B-X", "I-Y"]),
        vec![(0, 1, "X".to_string()), (1, 2, "Y".to_string())]
    );
    assert_eq!(
        bio_spans(&["B-X", "B-X"]),
        vec![(0, 1, "X".to_string()), (1, 2, "X".to_string())]
    );
}

#[test]
fn span_f1_hand_computed_case() {
    let gold = vec![
        vec!["B-PER", "I-PER", "O", "B-LOC"],
        vec!["B-ORG", "I-ORG"],
    ];
    let pred = vec![
        vec!["B-PER", "O", "O", "B-LOC"],
        vec!["B-ORG", "I-ORG"],
    ];
    let s = span_f1(&gold, &pred);
    assert_eq!((s.gold, s.predicted, s.correct), (3, 3, 2));
    assert!((s.f1 - 2.0 / 3.0).abs() < 1e-15);
    let perfect = span_f1(&gold, &gold);
    assert_eq!(perfect.f1, 1.0);
}

proptest! {
    #[test]
    fn f1_is_harmonic_mean(gold in 0usize..20, predicted in 0usize..20, correct in 0usize..20) {
        let correct = correct.min(gold).min(predicted);
        let s = SpanScores::from_counts(gold, predicted, correct);
        if s.precision + s.recall > 0.0 {
            prop_assert!(s.f1 == 2.0 * s.precision * s.recall / (s.precision + s.recall));
        } else {
            prop_assert!(s.f1 == 0.0);
        }
    }
}

#[test]
fn constant_predictor_on_balanced_set() {
    let mut model = build_model(Architecture::MetaMtl, &[cls()], &tiny(), 8, 0).unwrap();
    model.private[0].set_value("head.W", Matrix::zeros(2, 5)).unwrap();
    model.private[0].set_value("head.b", Matrix::column(&[0.0, 3.0])).unwrap();
    let examples: Vec<Example> = (0..10)
        .map(|i| Example {
            tokens: vec![2 + i % 5, 3],
            label: Label::Class(i % 2),
        })
        .collect();
    let r = evaluate(&model, 0, &examples).unwrap();
    assert_eq!(r.accuracy, 0.5);
    let ones: Vec<Example> = examples.iter().filter(|e| e.label == Label::Class(1)).cloned().collect();
    assert_eq!(evaluate(&model, 0, &ones).unwrap().accuracy, 1.0);
    assert!(r.to_kv().starts_with("task\tc\nexamples\t10\n"));
    assert!(evaluate(&model, 0, &[]).is_err());
}

#[test]
fn tagging_report_has_spans_and_token_accuracy() {
    let model = build_model(Architecture::MetaMtl, &[tagger()], &tiny(), 8, 0).unwrap();
    let ex = Example {
        tokens: vec![2, 3, 4],
        label: Label::Tags(vec![1, 2, 0]),
    };
    let r = evaluate(&model, 0, &[ex.clone(), ex]).unwrap();
    let spans = r.spans.unwrap();
    assert_eq!(spans.gold, 2);
    assert!((0.0..=1.0).contains(&r.accuracy));
    assert_eq!(r.primary(), spans.f1);
    assert!(r.to_kv().contains("\nf1\t"));
}

#[test]
fn parallel_and_serial_evaluation_agree() {
    let model = build_model(Architecture::Psp, &[cls()], &tiny(), 8, 4).unwrap();
    let examples: Vec<Example> = (0..23)
        .map(|i| Example {
            tokens: vec![2 + i % 6, 3 + i % 4, 2],
            label: Label::Class(i % 2),
        })
        .collect();
    let all = predict_all(&model, 0, &examples).unwrap();
    for (ex, got) in examples.iter().zip(&all) {
        assert_eq!(&model.evaluate_example(0, ex).unwrap(), got);
    }
}

#[test]
fn trace_first_position_has_no_diff() {
    let model = build_model(Architecture::MetaMtl, &[cls()], &tiny(), 8, 1).unwrap();
    let vocab = Vocab::from_tokens(["a", "b", "c", "d", "e", "f"]);
    let t = trace_sequence(&model, 0, &[3], &vocab).unwrap();
    assert_eq!(t.len(), 1);
    assert_eq!(t[0].diffs, None);
    assert_eq!(t[0].token, "b");
    let t = trace_sequence(&model, 0, &[3, 4, 5], &vocab).unwrap();
    assert!(t[1..].iter().all(|r| r.diffs.is_some()));
    let text = format_trace(&t);
    assert_eq!(text.lines().next().unwrap(), "pos\ttoken\tdiff_i\tdiff_g\tdiff_f\tdiff_o\tscore");
    assert!(text.lines().nth(1).unwrap().starts_with("1\tb\tNA\tNA\tNA\tNA\t"));
    assert!(trace_sequence(&model, 0, &[], &vocab).is_err());
}

#[test]
fn trace_score_matches_prediction() {
    let model = build_model(Architecture::SingleMeta, &[cls()], &tiny(), 8, 2).unwrap();
    let vocab = Vocab::from_tokens(["a", "b", "c", "d", "e", "f"]);
    let tokens = [2, 7, 4, 4];
    let t = trace_sequence(&model, 0, &tokens, &vocab).unwrap();
    let Prediction::Class { logits, .. } = model.predict(0, &tokens).unwrap() else { panic!() };
    assert!((t[3].score - (logits[1] - logits[0])).abs() < 1e-12);
}

#[test]
fn trace_with_zero_meta_has_zero_diffs() {
    let mut model = build_model(Architecture::MetaMtl, &[cls()], &tiny(), 8, 1).unwrap();
    for name in model.meta_names() {
        let shape = model.shared.value(&name).unwrap().shape();
        model.shared.set_value(&name, Matrix::zeros(shape.0, shape.1)).unwrap();
    }
    let vocab = Vocab::from_tokens(["a", "b", "c", "d", "e", "f"]);
    let t = trace_sequence(&model, 0, &[2, 3, 4, 5], &vocab).unwrap();
    for r in &t[1..] {
        assert_eq!(r.diffs.unwrap().max(), 0.0);
    }
}

#[test]
fn trace_needs_a_meta_classifier() {
    let vocab = Vocab::from_tokens(["a", "b"]);
    let lstm = build_model(Architecture::Ssp, &[cls()], &tiny(), 4, 1).unwrap();
    assert!(matches!(trace_sequence(&lstm, 0, &[2], &vocab), Err(Error::Unsupported(_))));
    let tag = build_model(Architecture::MetaMtl, &[tagger()], &tiny(), 4, 1).unwrap();
    assert!(matches!(trace_sequence(&tag, 0, &[2], &vocab), Err(Error::Unsupported(_))));
}

fn reference_dims() -> ModelConfig {
    ModelConfig {
        d: 100,
        h: 100,
        m: 20,
        z: 20,
        shared_h: 100,
        private_embeddings: false,
    }
}

#[test]
fn report_standard_lstm_cell() {
    let model = build_model(Architecture::SingleLstm, &[cls()], &reference_dims(), 5, 0).unwrap();
    let r = param_report(&model).unwrap();
    assert_eq!(r.cells.len(), 1);
    assert_eq!(r.cells[0].formula, 80_400);
    assert_eq!(r.cells[0].enumerated, 80_400);
    let direct = LstmParams::zeros(100, 100);
    assert_eq!(direct.count(), 80_400);
}

#[test]
fn report_meta_cells_total() {
    let model = build_model(Architecture::SingleMeta, &[cls()], &reference_dims(), 5, 0).unwrap();
    let r = param_report(&model).unwrap();
    let formula: usize = r.cells.iter().map(|c| c.formula).sum();
    assert_eq!(formula, 42_080);
    let meta = r.cells.iter().find(|c| c.kind == CellKind::Meta).unwrap();
    assert_eq!((meta.formula, meta.enumerated), (18_080, 18_080));
    let basic = r.cells.iter().find(|c| c.kind == CellKind::Basic).unwrap();
    assert_eq!((basic.formula, basic.with_bias, basic.enumerated), (24_000, 32_000, 32_000));
}

#[test]
fn report_totals_are_consistent() {
    for arch in Architecture::ALL {
        let model = build_model(arch, &[cls(), tagger()], &tiny(), 9, 0).unwrap();
        let r = param_report(&model).unwrap();
        assert_eq!(r.rows.iter().map(|row| row.count).sum::<usize>(), r.total);
        assert_eq!(r.total, model.param_count());
        for (label, total) in &r.store_totals {
            let sum: usize = r.rows.iter().filter(|row| &row.store == label).map(|row| row.count).sum();
            assert_eq!(sum, *total);
        }
        for c in &r.cells {
            if c.kind != CellKind::Basic {
                assert_eq!(c.enumerated, c.formula, "{arch} {}", c.prefix);
            } else {
                assert_eq!(c.enumerated, c.with_bias, "{arch} {}", c.prefix);
            }
        }
        assert!(r.to_tsv().contains(&format!("all\t{}", r.total)));
    }
}

#[test]
fn model_gradients_check_out_for_every_architecture() {
    let cls_batch = vec![
        Example {
            tokens: vec![2, 4, 3],
            label: Label::Class(1),
        },
        Example {
            tokens: vec![5, 2],
            label: Label::Class(0),
        },
    ];
    let tag_batch = vec![Example {
        tokens: vec![2, 4, 3],
        label: Label::Tags(vec![1, 2, 0]),
    }];
    for arch in Architecture::ALL {
        let model = build_model(arch, &[cls(), tagger()], &tiny(), 7, 5).unwrap();
        let r = model_grad_check(&model, 0, &cls_batch, 1e-5, 6, 1).unwrap();
        assert!(r.max_rel_error < 1e-4, "{arch} classifier: {r:?}");
        let r = model_grad_check(&model, 1, &tag_batch, 1e-5, 6, 1).unwrap();
        assert!(r.max_rel_error < 1e-4, "{arch} tagger: {r:?}");
        assert!(r.coordinates > 0);
    }
}

