#![allow(dead_code)]

use std::collections::BTreeMap;

use capedit::dataset::{CaptionRecord, ScoreKind, ScoreTable, Split};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn caption(image: &str, id: &str, text: &str, is_gt: bool) -> CaptionRecord {
    CaptionRecord {
        image_id: image.into(),
        caption_id: id.into(),
        text: text.into(),
        is_gt,
        split: Split::Train,
    }
}

/// Three images with two ground truths each plus six free captions. With
/// `topk_similar = sample_k = 3` the cascade walks out by hand as:
///
/// - i1: top3 = x4, x1, g2a. x4 passes everything (min SPICE 0.20) and pairs
///   with g1a (distance 2). x1 passes BLEU but its min SPICE is 0.38. g2a
///   has no trigram overlap with either ground truth.
/// - i2: top3 = x2, x5, g1a. x2 passes (min SPICE 0.34) and pairs with g2a
///   (distance 1). x5 and g1a share no trigram with i2's ground truths.
/// - i3: top3 = x6, x3, g2b. x6 passes (min SPICE 0.10) and pairs with g3a
///   (distance 2). x3 passes BLEU but its min SPICE is exactly 0.35. g2b
///   shares no trigram with i3's ground truths.
pub fn hand_fixture() -> (Vec<CaptionRecord>, ScoreTable, ScoreTable) {
    let captions = vec![
        caption("i1", "g1a", "A man riding a brown horse on a beach", true),
        caption("i1", "g1b", "A person rides a horse near the ocean", true),
        caption("i2", "g2a", "A cat sleeping on a red couch", true),
        caption("i2", "g2b", "A small cat lies on the sofa", true),
        caption("i3", "g3a", "Two dogs playing with a frisbee in a park", true),
        caption("i3", "g3b", "Dogs chase a frisbee on the grass", true),
        caption("extra", "x1", "A man riding a horse on the sand", false),
        caption("extra", "x2", "A cat sleeping on a couch", false),
        caption("extra", "x3", "Two dogs playing in a park", false),
        caption("extra", "x4", "A woman riding a brown horse on a beach", false),
        caption("extra", "x5", "A red car on the road", false),
        caption("extra", "x6", "Two dogs playing with a ball in a park", false),
    ];
    let mut sim = ScoreTable::new(ScoreKind::ImageCaptionSimilarity);
    for image in ["i1", "i2", "i3"] {
        for c in &captions {
            sim.insert(image, c.caption_id.as_str(), 0.1);
        }
    }
    for (image, cap, score) in [
        ("i1", "x4", 0.9),
        ("i1", "x1", 0.8),
        ("i1", "g2a", 0.5),
        ("i2", "x2", 0.9),
        ("i2", "x5", 0.7),
        ("i2", "g1a", 0.6),
        ("i3", "x6", 0.95),
        ("i3", "x3", 0.9),
        ("i3", "g2b", 0.6),
    ] {
        sim.insert(image, cap, score);
    }
    let mut spice = ScoreTable::new(ScoreKind::CaptionSpice);
    for (a, b, score) in [
        ("x4", "g1a", 0.30),
        ("x4", "g1b", 0.20),
        ("x1", "g1a", 0.40),
        ("x1", "g1b", 0.38),
        ("x2", "g2a", 0.34),
        ("x2", "g2b", 0.36),
        ("x3", "g3a", 0.35),
        ("x3", "g3b", 0.50),
        ("x6", "g3a", 0.30),
        ("x6", "g3b", 0.10),
    ] {
        spice.insert(a, b, score);
    }
    (captions, sim, spice)
}

const SUBJECTS: [&str; 6] = ["man", "woman", "dog", "cat", "child", "horse"];
const VERBS: [&str; 5] = ["riding", "holding", "watching", "near", "beside"];
const OBJECTS: [&str; 6] = ["bike", "ball", "car", "tree", "boat", "kite"];
const PLACES: [&str; 5] = ["street", "beach", "park", "field", "river"];
const ADJS: [&str; 5] = ["red", "small", "old", "white", "large"];

fn sentence(rng: &mut ChaCha8Rng) -> Vec<&'static str> {
    vec![
        "a",
        ADJS.choose(rng).unwrap(),
        SUBJECTS.choose(rng).unwrap(),
        VERBS.choose(rng).unwrap(),
        "a",
        OBJECTS.choose(rng).unwrap(),
        "in",
        "the",
        PLACES.choose(rng).unwrap(),
    ]
}

fn mutate(rng: &mut ChaCha8Rng, base: &[&'static str]) -> Vec<&'static str> {
    let mut out = base.to_vec();
    for _ in 0..rng.gen_range(1..=2) {
        match rng.gen_range(0..3) {
            0 => out[1] = ADJS.choose(rng).unwrap(),
            1 => out[5] = OBJECTS.choose(rng).unwrap(),
            _ => out[8] = PLACES.choose(rng).unwrap(),
        }
    }
    if rng.gen_bool(0.3) {
        out.remove(1);
    }
    out
}

/// Generated corpus: per image five ground truths around a base sentence and
/// four free captions, all scores drawn from a seeded generator. Every
/// image's pool is fully covered by both score tables.
pub fn synthetic_fixture(n_images: usize, seed: u64) -> (Vec<CaptionRecord>, ScoreTable, ScoreTable) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut captions = Vec::new();
    for i in 0..n_images {
        let base = sentence(&mut rng);
        let image = format!("img{i:03}");
        for g in 0..5 {
            let text = mutate(&mut rng, &base).join(" ");
            captions.push(caption(&image, &format!("{image}-gt{g}"), &text, true));
        }
        for x in 0..4 {
            let text = mutate(&mut rng, &base).join(" ");
            captions.push(caption("pool", &format!("{image}-x{x}"), &text, false));
        }
    }
    let mut sim = ScoreTable::new(ScoreKind::ImageCaptionSimilarity);
    let mut spice = ScoreTable::new(ScoreKind::CaptionSpice);
    let gts: Vec<&CaptionRecord> = captions.iter().filter(|c| c.is_gt).collect();
    for i in 0..n_images {
        let image = format!("img{i:03}");
        for c in &captions {
            let own = c.caption_id.starts_with(&image);
            let score = if own { rng.gen_range(0.5..1.0) } else { rng.gen_range(0.0..0.6) };
            sim.insert(image.as_str(), c.caption_id.as_str(), score);
        }
    }
    for c in &captions {
        for g in &gts {
            spice.insert(c.caption_id.as_str(), g.caption_id.as_str(), rng.gen_range(0.15..0.5));
        }
    }
    (captions, sim, spice)
}

/// CIDEr-D written directly from its definition, with n-grams as joined
/// strings and document frequency found by linear scans.
pub fn brute_cider_d(cands: &[&str], refs: &[&str]) -> f64 {
    fn grams(s: &str, n: usize) -> Vec<String> {
        let w: Vec<&str> = s.split(' ').collect();
        if w.len() < n {
            return vec![];
        }
        (0..=w.len() - n).map(|i| w[i..i + n].join(" ")).collect()
    }
    let docs = refs.len() as f64;
    let df = |g: &str, n: usize| refs.iter().filter(|r| grams(r, n).iter().any(|x| x == g)).count() as f64;
    let vec_of = |s: &str, n: usize| {
        let mut tf: BTreeMap<String, f64> = BTreeMap::new();
        for g in grams(s, n) {
            *tf.entry(g).or_default() += 1.0;
        }
        tf.into_iter()
            .map(|(g, t)| {
                let w = t * (docs.ln() - df(&g, n).max(1.0).ln());
                (g, w)
            })
            .collect::<BTreeMap<String, f64>>()
    };
    let mut sum = 0.0;
    for (c, r) in cands.iter().zip(refs) {
        let len_c = c.split(' ').count() as f64;
        let len_r = r.split(' ').count() as f64;
        let gauss = (-(len_c - len_r).powi(2) / 72.0).exp();
        let mut per_n = 0.0;
        for n in 1..=4 {
            let vc = vec_of(c, n);
            let vr = vec_of(r, n);
            let norm_c = vc.values().map(|v| v * v).sum::<f64>().sqrt();
            let norm_r = vr.values().map(|v| v * v).sum::<f64>().sqrt();
            let mut dot = 0.0;
            for (g, wc) in &vc {
                if let Some(wr) = vr.get(g) {
                    dot += wc.min(*wr) * wr;
                }
            }
            if norm_c > 0.0 && norm_r > 0.0 {
                dot /= norm_c * norm_r;
            }
            per_n += dot * gauss;
        }
        sum += 10.0 * per_n / 4.0;
    }
    sum / cands.len() as f64
}

pub const CIDER_REFS: [&str; 3] = [
    "a man is riding a horse on the beach",
    "two cats sleep on a red couch",
    "a man is throwing a frisbee in the park",
];
pub const CIDER_CANDS: [&str; 3] = [
    "a man riding a horse on a beach",
    "a cat sleeps on the couch",
    "a boy is throwing a frisbee in a park",
];
