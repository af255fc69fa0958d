use capedit::edit_script::{apply_script, edit_distance, min_edit_script, tokenize, TokenSeq};
use capedit::metrics::{bleu, cider_d, decompose_all, decompose_compound, es_of_trace, rouge_l, CompoundOp, OpCounts};
use capedit::round_engine::{
    apply_del_tags, expand_pair, fill_masks, oracle_policy, place_masks, run_rounds, ExpansionConfig, Slot, Stage,
};
use capedit::dataset::{compute_stats, EceInstance, Split};
use proptest::prelude::*;

const WORDS: [&str; 6] = ["a", "b", "c", "d", "e", "f"];

fn seq_strategy(max_len: usize, alphabet: usize) -> impl Strategy<Value = TokenSeq> {
    prop::collection::vec(0..alphabet, 0..=max_len)
        .prop_map(|idx| TokenSeq::new(idx.into_iter().map(|i| WORDS[i])).unwrap())
}

/// LCS by enumerating every subsequence of `a`.
fn brute_lcs(a: &TokenSeq, b: &TokenSeq) -> usize {
    let a = a.tokens();
    let mut best = 0;
    for mask in 0u32..(1 << a.len()) {
        let mut it = b.iter();
        let ok = (0..a.len()).filter(|i| mask >> i & 1 == 1).all(|i| it.any(|x| *x == a[i]));
        if ok {
            best = best.max(mask.count_ones() as usize);
        }
    }
    best
}

proptest! {
    #[test]
    fn script_reconstructs_target(src in seq_strategy(12, 5), dst in seq_strategy(12, 5)) {
        let script = min_edit_script(&src, &dst);
        prop_assert_eq!(apply_script(&src, &script).unwrap(), dst.clone());
        prop_assert_eq!(script.keeps() + script.deletes(), src.len());
        prop_assert_eq!(script.source_len(), src.len());
    }

    #[test]
    fn script_is_minimal_against_brute_force(src in seq_strategy(8, 4), dst in seq_strategy(8, 4)) {
        let lcs = brute_lcs(&src, &dst);
        let script = min_edit_script(&src, &dst);
        prop_assert_eq!(script.steps(), src.len() + dst.len() - 2 * lcs);
        prop_assert_eq!(edit_distance(&src, &dst).steps(), script.steps());
    }

    #[test]
    fn distance_symmetric_and_bounded(a in seq_strategy(10, 4), b in seq_strategy(10, 4)) {
        let d = edit_distance(&a, &b).steps();
        prop_assert_eq!(d, edit_distance(&b, &a).steps());
        prop_assert!(d <= a.len() + b.len());
    }

    #[test]
    fn tokenize_round_trips(text in "[A-Za-z.,!? \t]{0,40}") {
        let once = tokenize(&text);
        prop_assert_eq!(tokenize(&once.to_string()), once.clone());
        prop_assert!(once.iter().all(|t| !t.is_empty() && !t.contains(char::is_whitespace)));
    }

    #[test]
    fn oracle_completes_within_max_gap(reference in seq_strategy(10, 6), target in seq_strategy(10, 6)) {
        let oracle = oracle_policy(&reference, &target);
        let cfg = ExpansionConfig { lambda: 1.5, max_rounds: oracle.max_gap().max(1) };
        let (out, trace) = run_rounds(&reference, &oracle, "p", &cfg).unwrap();
        prop_assert_eq!(&out, &target);
        prop_assert!(trace.converged);
        prop_assert_eq!(trace.replay(&reference).unwrap(), out);
        let steps = es_of_trace(&trace);
        prop_assert_eq!(steps.es, min_edit_script(&reference, &target).steps());
    }

    #[test]
    fn rounds_insert_one_word_per_anchor_and_never_shrink(
        reference in seq_strategy(10, 6),
        target in seq_strategy(10, 6),
        max_rounds in 1usize..6,
    ) {
        let oracle = oracle_policy(&reference, &target);
        let cfg = ExpansionConfig { lambda: 1.5, max_rounds };
        let (out, trace) = run_rounds(&reference, &oracle, "p", &cfg).unwrap();
        prop_assert!(trace.rounds.len() <= max_rounds);
        let mut current = apply_del_tags(&reference, &trace.del).unwrap();
        for record in &trace.rounds {
            let masked = place_masks(&current, &record.add_slots).unwrap();
            let adjacent = masked.items().windows(2).any(|w| w[0] == Slot::Mask && w[1] == Slot::Mask);
            prop_assert!(!adjacent);
            let next = fill_masks(&masked, &record.inserted).unwrap();
            prop_assert!(next.len() >= current.len());
            prop_assert_eq!(&next, &record.result);
            current = next;
        }
        prop_assert_eq!(current, out);
    }

    #[test]
    fn expansion_replays_oracle_states(
        reference in seq_strategy(10, 6),
        target in seq_strategy(10, 6),
        lambda in prop::sample::select(vec![1.0, 1.2, 1.5, 2.0]),
    ) {
        let cfg = ExpansionConfig { lambda, max_rounds: 20 };
        let oracle = oracle_policy(&reference, &target);
        let samples = expand_pair(&reference, &target, &cfg);
        let g = oracle.max_gap();
        prop_assert_eq!(samples.len(), if g == 0 { 2 } else { 1 + 2 * g });

        let del_tags = oracle.del_tags().to_vec();
        let mut current = apply_del_tags(&reference, &del_tags).unwrap();
        let mut run_cfg = cfg;
        for pair in samples[1..].chunks(2) {
            let add = &pair[0];
            prop_assert_eq!(add.stage, Stage::TaggerAdd);
            prop_assert_eq!(&add.tokens[1..], current.tokens());
            if let Some(ins) = pair.get(1) {
                let slots: Vec<_> = add.labels.iter().map(|l| if l == "ADD" {
                    capedit::round_engine::AddTag::Add
                } else {
                    capedit::round_engine::AddTag::Keep
                }).collect();
                let masked = place_masks(&current, &slots).unwrap();
                prop_assert_eq!(masked.to_strings(), ins.tokens.clone());
                current = fill_masks(&masked, ins.targets.as_ref().unwrap()).unwrap();
                // oracle state after this round
                run_cfg.max_rounds = ins.round;
                let (state, _) = run_rounds(&reference, &oracle, "p", &run_cfg).unwrap();
                prop_assert_eq!(&current, &state);
            }
        }
        prop_assert_eq!(current, target);
        for s in &samples {
            for (label, w) in s.labels.iter().zip(&s.weights) {
                let expected = if label == "KEEP" { lambda } else { 1.0 };
                prop_assert_eq!(*w, expected);
            }
        }
    }

    #[test]
    fn metrics_are_order_invariant(
        pairs in prop::collection::vec((seq_strategy(8, 6), seq_strategy(8, 6)), 1..8),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let pairs: Vec<_> = pairs.into_iter().filter(|(_, r)| !r.is_empty()).collect();
        prop_assume!(!pairs.is_empty());
        let mut shuffled = pairs.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let split = |v: &[(TokenSeq, TokenSeq)]| -> (Vec<TokenSeq>, Vec<TokenSeq>) {
            v.iter().cloned().unzip()
        };
        let (c1, r1) = split(&pairs);
        let (c2, r2) = split(&shuffled);
        for n in 1..=4 {
            prop_assert!((bleu(&c1, &r1, n).unwrap() - bleu(&c2, &r2, n).unwrap()).abs() < 1e-9);
        }
        prop_assert!((rouge_l(&c1, &r1).unwrap() - rouge_l(&c2, &r2).unwrap()).abs() < 1e-9);
        prop_assert!((cider_d(&c1, &r1, &r1).unwrap() - cider_d(&c2, &r2, &r2).unwrap()).abs() < 1e-9);
        // self-evaluation maxima
        prop_assert!((rouge_l(&r1, &r1).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn decomposition_is_additive(ns in prop::collection::vec((0usize..6, 0usize..5), 0..12)) {
        let ops: Vec<CompoundOp> = ns.iter().map(|&(kind, n)| match kind {
            0 => CompoundOp::KeepN { n },
            1 => CompoundOp::DeleteN { n },
            2 => CompoundOp::PhraseKeep { phrase: vec!["w".into(); n] },
            3 => CompoundOp::PhraseDelete { phrase: vec!["w".into(); n] },
            4 => CompoundOp::Replace { word: "w".into() },
            _ => CompoundOp::Reorder,
        }).collect();
        let total = decompose_all(&ops);
        let mut manual = OpCounts::default();
        for op in &ops {
            let c = decompose_compound(op);
            manual.del += c.del;
            manual.add += c.add;
            manual.reorder += c.reorder;
        }
        prop_assert_eq!(total, manual);
    }

    #[test]
    fn stats_order_invariant(
        pairs in prop::collection::vec((seq_strategy(6, 6), seq_strategy(6, 6), 0usize..4), 1..10),
    ) {
        let instances: Vec<EceInstance> = pairs
            .into_iter()
            .filter_map(|(r, g, img)| EceInstance::new(format!("i{img}"), r, g, Split::Train).ok())
            .collect();
        prop_assume!(!instances.is_empty());
        let mut reversed = instances.clone();
        reversed.reverse();
        let a = compute_stats(&instances).unwrap();
        let b = compute_stats(&reversed).unwrap();
        prop_assert_eq!(a.vocab_size, b.vocab_size);
        prop_assert_eq!(a.n_images, b.n_images);
        prop_assert!((a.mean_edit_distance - b.mean_edit_distance).abs() < 1e-12);
    }
}
