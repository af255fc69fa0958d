//! Expected values computed independently of the library code paths.

mod common;

use capedit::dataset::{build_cocoee_split, compute_stats, CaptionPool, DatasetError, EceInstance, FilterConfig, Split};
use capedit::metrics::{bleu, cider_d, rouge_l};
use capedit::{tokenize, TokenSeq};

fn corpus(lines: &[&str]) -> Vec<TokenSeq> {
    lines.iter().map(|l| tokenize(l)).collect()
}

const BLEU_CANDS: [&str; 5] = [
    "a cat sits on the mat",
    "a dog runs",
    "two men ride horses",
    "the the the",
    "a red car parked on a street",
];
const BLEU_REFS: [&str; 5] = [
    "the cat sat on the mat",
    "a dog runs fast",
    "two men are riding horses",
    "the bird flies",
    "a red car on the street",
];

#[test]
fn bleu_matches_hand_counts() {
    // clipped matches / totals per order, counted pair by pair:
    //   unigrams 4+3+3+1+5 / 6+3+4+3+7, bigrams 2+2+1+0+2 / 5+2+3+2+6,
    //   trigrams 1+1+0+0+1 / 4+1+2+1+5, 4-grams 0 / 8
    // candidate length 23, reference length 24
    let bp = (1.0f64 - 24.0 / 23.0).exp();
    let p = [16.0 / 23.0, 7.0 / 18.0, 3.0 / 13.0];
    let expected = [
        bp * p[0],
        bp * (p[0] * p[1]).sqrt(),
        bp * (p[0] * p[1] * p[2]).cbrt(),
        0.0,
    ];
    let cands = corpus(&BLEU_CANDS);
    let refs = corpus(&BLEU_REFS);
    for n in 1..=4 {
        let got = bleu(&cands, &refs, n).unwrap();
        assert!((got - expected[n - 1]).abs() < 1e-12, "BLEU-{n}: {got} vs {}", expected[n - 1]);
    }
}

#[test]
fn rouge_matches_brute_force_lcs() {
    fn brute_lcs(a: &[String], b: &[String]) -> usize {
        let mut best = 0;
        for mask in 0u32..(1 << a.len()) {
            let sub: Vec<&String> = (0..a.len()).filter(|i| mask >> i & 1 == 1).map(|i| &a[i]).collect();
            let mut it = b.iter();
            if sub.iter().all(|w| it.any(|x| x == *w)) {
                best = best.max(sub.len());
            }
        }
        best
    }
    let cands = corpus(&BLEU_CANDS);
    let refs = corpus(&BLEU_REFS);
    let mut total = 0.0;
    for (c, r) in cands.iter().zip(&refs) {
        let lcs = brute_lcs(c.tokens(), r.tokens()) as f64;
        if lcs > 0.0 {
            let (p, rec) = (lcs / c.len() as f64, lcs / r.len() as f64);
            total += 2.44 * p * rec / (rec + 1.44 * p);
        }
    }
    let expected = total / 5.0;
    assert!((rouge_l(&cands, &refs).unwrap() - expected).abs() < 1e-12);
}

#[test]
fn cider_matches_brute_force() {
    let refs = corpus(&common::CIDER_REFS);
    let cands = corpus(&common::CIDER_CANDS);
    for (c, expected) in [
        (&cands, common::brute_cider_d(&common::CIDER_CANDS, &common::CIDER_REFS)),
        (&refs, common::brute_cider_d(&common::CIDER_REFS, &common::CIDER_REFS)),
    ] {
        let got = cider_d(c, &refs, &refs).unwrap();
        assert!(((got - expected) / expected).abs() < 1e-9, "{got} vs {expected}");
    }
    // all three references are at least four tokens long and distinct
    assert!((common::brute_cider_d(&common::CIDER_REFS, &common::CIDER_REFS) - 10.0).abs() < 1e-12);
}

fn key(inst: &EceInstance) -> (String, String, String) {
    (
        inst.image_id.clone(),
        inst.ref_id.clone().unwrap_or_default(),
        inst.gt_id.clone().unwrap_or_default(),
    )
}

fn hand_cfg() -> FilterConfig {
    FilterConfig {
        topk_similar: 3,
        sample_k: 3,
        ..FilterConfig::default()
    }
}

#[test]
fn cocoee_cascade_matches_hand_walk() {
    let (captions, sim, spice) = common::hand_fixture();
    let built = build_cocoee_split(&captions, &sim, &spice, &hand_cfg(), 1).unwrap();
    let keys: Vec<_> = built.iter().map(key).collect();
    let expected: Vec<(String, String, String)> = [("i1", "x4", "g1a"), ("i2", "x2", "g2a"), ("i3", "x6", "g3a")]
        .iter()
        .map(|(a, b, c)| (a.to_string(), b.to_string(), c.to_string()))
        .collect();
    assert_eq!(keys, expected);
    assert_eq!(built[1].ref_cap.to_string(), "a cat sleeping on a couch");
    assert_eq!(built[1].gt_cap.to_string(), "a cat sleeping on a red couch");
    assert!(built.iter().all(|i| i.split == Split::Train));

    let pool = CaptionPool::new(&captions);
    for inst in &built {
        pool.verify(inst, &spice, &hand_cfg()).unwrap();
    }
}

#[test]
fn cocoee_missing_score_names_pair() {
    let (captions, sim, mut spice) = common::hand_fixture();
    spice = capedit::ScoreTable::from_records(
        spice.kind(),
        [("x4", "g1a", 0.30)].map(|(a, b, s)| capedit::dataset::ScoreRecord {
            a: a.into(),
            b: b.into(),
            score: s,
        }),
    );
    match build_cocoee_split(&captions, &sim, &spice, &hand_cfg(), 1) {
        Err(DatasetError::MissingScore { a, b, .. }) => assert_eq!((a.as_str(), b.as_str()), ("x4", "g1b")),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn cocoee_empty_pool() {
    let (_, sim, spice) = common::hand_fixture();
    assert!(build_cocoee_split(&[], &sim, &spice, &hand_cfg(), 1).unwrap().is_empty());
}

#[test]
fn stats_match_recount() {
    // (ref, gt, distance counted by hand)
    let rows = [
        ("a b c", "a b d", 2),
        ("a b", "a b c", 1),
        ("x y z", "z y x", 4),
        ("one", "two", 2),
        ("p q r s", "p r", 2),
        ("a cat", "a big cat", 1),
        ("a dog runs", "the dog walks", 4),
        ("m n", "m n o p", 2),
        ("red car", "blue car", 2),
        ("sun", "sun moon", 1),
    ];
    let instances: Vec<EceInstance> = rows
        .iter()
        .enumerate()
        .map(|(i, (r, g, _))| EceInstance::new(format!("img{}", i % 7), tokenize(r), tokenize(g), Split::Test).unwrap())
        .collect();
    let stats = compute_stats(&instances).unwrap();
    // ref lengths 3+2+3+1+4+2+3+2+2+1, gt lengths 3+3+3+1+2+3+3+4+2+2
    assert_eq!(stats.n_instances, 10);
    assert_eq!(stats.n_images, 7);
    assert!((stats.mean_ref_len - 2.3).abs() < 1e-12);
    assert!((stats.mean_gt_len - 2.6).abs() < 1e-12);
    let dist: usize = rows.iter().map(|r| r.2).sum();
    assert!((stats.mean_edit_distance - dist as f64 / 10.0).abs() < 1e-12);
    // a b c d x y z one two p q r s cat big dog runs the walks m n o red car blue sun moon
    assert_eq!(stats.vocab_size, 27);
}
