use numbase::analysis::{classify_addition, mul_edge_stats, truncate, PatternTag};
use numbase::datagen::{generate_eval, generate_train, Operation, Sample};
use numbase::grid::LengthGrid;
use numbase::metrics::{edit_distance, ned, rel_err_log, score_sample};
use numbase::model::{forward_logits, loss, Batch, ModelConfig, TransformerParams};
use numbase::numeral::{
    decode_answer, encode_answer, encode_sample, from_groups, to_groups, token_length, Decoded, Number, NumeralSystem,
    Vocabulary,
};
use proptest::prelude::*;

fn system() -> impl Strategy<Value = NumeralSystem> {
    prop_oneof![Just(NumeralSystem::Base10), Just(NumeralSystem::Base100), Just(NumeralSystem::Base1000)]
}

fn digits(max_len: usize) -> impl Strategy<Value = String> {
    proptest::collection::vec(prop_oneof![Just('0'), Just('1'), Just('2'), Just('7')], 0..=max_len)
        .prop_map(|v| v.into_iter().collect())
}

fn tiny_params() -> TransformerParams<f32> {
    let cfg = ModelConfig { n_layers: 1, n_heads: 2, d_model: 16, d_ff: 32, context_length: 24, vocab_size: 15, ..Default::default() };
    TransformerParams::init(cfg, 21).unwrap()
}

proptest! {
    #[test]
    fn groups_round_trip(n in any::<u128>(), sys in system()) {
        let n = Number::from(n);
        let g = to_groups(&n, sys);
        prop_assert!(g.groups().iter().all(|&x| x < sys.base()));
        prop_assert!(g.len() == 1 || g.groups()[0] != 0);
        prop_assert_eq!(from_groups(g.groups(), sys).unwrap(), n);
    }

    #[test]
    fn regrouping_base10_digits_under_base1000(n in any::<u64>()) {
        let n = Number::from(n);
        let d = to_groups(&n, NumeralSystem::Base10).0;
        let pad = (3 - d.len() % 3) % 3;
        let padded: Vec<u32> = std::iter::repeat(0).take(pad).chain(d).collect();
        let regrouped: Vec<u32> = padded.chunks(3).map(|c| c[0] * 100 + c[1] * 10 + c[2]).collect();
        prop_assert_eq!(from_groups(&regrouped, NumeralSystem::Base1000).unwrap(), n);
    }

    #[test]
    fn token_length_is_monotone(a in any::<u64>(), b in any::<u64>(), sys in system()) {
        let (lo, hi) = (a.min(b), a.max(b));
        prop_assert!(token_length(&Number::from(lo), sys) <= token_length(&Number::from(hi), sys));
    }

    #[test]
    fn answer_tokens_decode_to_result(a in any::<u64>(), b in any::<u64>(), mul in any::<bool>(), sys in system()) {
        let op = if mul { Operation::Mul } else { Operation::Add };
        let (a, b) = (Number::from(a), Number::from(b));
        let v = Vocabulary::new(sys);
        let enc = encode_sample(&a, &b, op, &v);
        prop_assert_eq!(*enc.answer.last().unwrap(), v.eos());
        prop_assert_eq!(decode_answer(&enc.answer, &v), Decoded::Valid(op.apply(&a, &b)));
    }

    #[test]
    fn edit_distance_is_a_metric(a in digits(7), b in digits(7), c in digits(7)) {
        prop_assert_eq!(edit_distance(&a, &b), edit_distance(&b, &a));
        prop_assert_eq!(edit_distance(&a, &a), 0);
        prop_assert_eq!(edit_distance(&a, &b) == 0, a == b);
        prop_assert!(edit_distance(&a, &c) <= edit_distance(&a, &b) + edit_distance(&b, &c));
    }

    #[test]
    fn ned_is_a_similarity(a in digits(8), b in digits(8)) {
        let s = ned(&a, &b);
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert_eq!(s == 1.0, a == b);
    }

    #[test]
    fn rel_err_log_symmetry_and_scale(o in 1u64..u32::MAX as u64, g in 1u64..u32::MAX as u64, k in 1u64..1_000_000) {
        let e = |x: u64, y: u64| rel_err_log(&Decoded::Valid(Number::from(x)), &Number::from(y)).unwrap();
        prop_assert!((e(o, g) - e(g, o)).abs() < 1e-12);
        prop_assert!((e(o * k, g * k) - e(o, g)).abs() < 1e-12);
    }

    #[test]
    fn exact_match_implies_full_similarity(n in any::<u64>(), sys in system()) {
        let v = Vocabulary::new(sys);
        let gold = Number::from(n);
        let s = score_sample(&encode_answer(&gold, &v), &gold, &v);
        prop_assert!(s.exact_match);
        prop_assert_eq!(s.ned, 1.0);
    }

    #[test]
    fn truncate_is_idempotent(n in any::<u128>(), sys in system(), max in 1usize..12) {
        let n = Number::from(n);
        let t = truncate(&n, sys, max);
        prop_assert_eq!(truncate(&t, sys, max), t.clone());
        prop_assert!(token_length(&t, sys) <= max);
        if token_length(&n, sys) <= max {
            prop_assert_eq!(t, n);
        }
    }

    #[test]
    fn in_distribution_correct_answers_are_exact(a in 1u64..10_000_000_000, b in 1u64..10_000_000_000, sys in system()) {
        let s = Sample::new(Number::from(a), Number::from(b), Operation::Add);
        let max = sys.tokens_for_digits(10);
        let label = classify_addition(&s, &Decoded::Valid(s.answer.clone()), sys, max);
        prop_assert_eq!(label.tag, PatternTag::Exact);
    }

    #[test]
    fn classification_is_total_and_deterministic(a in any::<u64>(), b in any::<u64>(), out in proptest::option::of(any::<u64>()), max in 1usize..8, sys in system()) {
        let s = Sample::new(Number::from(a), Number::from(b), Operation::Add);
        let d = out.map_or(Decoded::Invalid, |o| Decoded::Valid(Number::from(o)));
        let first = classify_addition(&s, &d, sys, max);
        prop_assert_eq!(&first, &classify_addition(&s, &d, sys, max));
        let needs_evidence = !matches!(first.tag, PatternTag::Exact | PatternTag::Other);
        prop_assert!(!needs_evidence || first.evidence.is_some());
    }

    #[test]
    fn mul_edge_stats_ignore_order(pairs in proptest::collection::vec((1u64..100_000, 1u64..100_000, any::<bool>()), 1..20), rot in 0usize..20) {
        let v = Vocabulary::new(NumeralSystem::Base10);
        let mut items: Vec<(Sample, Vec<u32>)> = pairs
            .iter()
            .map(|&(a, b, right)| {
                let s = Sample::new(Number::from(a), Number::from(b), Operation::Mul);
                let out = if right { encode_answer(&s.answer, &v) } else { encode_answer(&Number::from(a), &v) };
                (s, out)
            })
            .collect();
        let stats = |items: &[(Sample, Vec<u32>)]| {
            let (s, o): (Vec<_>, Vec<_>) = items.iter().cloned().unzip();
            mul_edge_stats(&s, &o, &v, 2)
        };
        let before = stats(&items);
        let r = rot % items.len();
        items.rotate_left(r);
        prop_assert_eq!(before.clone(), stats(&items));
        for f in [before.leading, before.trailing, before.length] {
            prop_assert!((0.0..=1.0).contains(&f));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn generated_splits_are_clean(seed in any::<u64>(), scale in 6u32..10, max in 2usize..4, mul in any::<bool>()) {
        let op = if mul { Operation::Mul } else { Operation::Add };
        let grid = LengthGrid::square(max).unwrap();
        let eval = generate_eval(op, 30, grid, seed).unwrap();
        let train = generate_train(op, 1 << scale, grid, &eval, seed).unwrap();
        prop_assert_eq!(eval.duplicate_count(), 0);
        prop_assert_eq!(train.duplicate_count(), 0);
        prop_assert_eq!(train.overlap_count(&eval), 0);
        for s in eval.samples.iter().chain(&train.samples) {
            prop_assert!(s.is_consistent());
            prop_assert!(grid.contains(s.cell().0, s.cell().1));
        }
        let again = generate_train(op, 1 << scale, grid, &eval, seed).unwrap();
        prop_assert_eq!(train.content_hash(), again.content_hash());
    }

    #[test]
    fn logits_are_causal(prefix in proptest::collection::vec(0u32..15, 2..12), tail in proptest::collection::vec(0u32..15, 1..8), other in proptest::collection::vec(0u32..15, 1..8)) {
        let p = tiny_params();
        let a: Vec<u32> = prefix.iter().chain(&tail).copied().collect();
        let b: Vec<u32> = prefix.iter().chain(&other).copied().collect();
        let (la, lb) = (forward_logits(&p, &a).unwrap(), forward_logits(&p, &b).unwrap());
        let n = prefix.len() * 15;
        prop_assert_eq!(&la[..n], &lb[..n]);
        for row in la.chunks(15) {
            let m = row.iter().cloned().fold(f32::MIN, f32::max);
            let z: f64 = row.iter().map(|&x| ((x - m) as f64).exp()).sum();
            let probs: f64 = row.iter().map(|&x| ((x - m) as f64).exp() / z).sum();
            prop_assert!((probs - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn loss_ignores_padding_targets(a in 0u64..1000, b in 0u64..1000, c in 0u64..1_000_000, d in 0u64..1_000_000, junk in 0u32..15) {
        let p = tiny_params();
        let v = Vocabulary::new(NumeralSystem::Base10);
        let s1 = encode_sample(&Number::from(a), &Number::from(b), Operation::Add, &v);
        let s2 = encode_sample(&Number::from(c), &Number::from(d), Operation::Add, &v);
        let batch = Batch::from_samples(&[&s1, &s2], v.pad());
        let base = loss(&p, &batch).unwrap();
        let mut mutated = batch.clone();
        for row in 0..mutated.batch_size {
            for t in 0..mutated.seq_len {
                let i = row * mutated.seq_len + t;
                if t >= mutated.lengths[row] {
                    mutated.tokens[i] = junk;
                }
            }
        }
        prop_assert_eq!(loss(&p, &mutated).unwrap(), base);
    }
}
