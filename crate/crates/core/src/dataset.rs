//! Editing-instance construction and dataset statistics.
//!
//! COCO-style builds run a four-stage cascade per image: rank the other
//! captions of the split by image-caption similarity and sample reference
//! candidates from the top of the ranking, keep candidates that overlap some
//! ground truth (BLEU-2 and BLEU-3 above their thresholds), drop candidates
//! whose closest scene match is too similar (SPICE), then pair each survivor
//! with its nearest ground truth by edit distance. Similarity and SPICE
//! scores are read from precomputed tables.
//!
//! Visual-entailment builds pair the contradiction hypothesis (reference)
//! with the entailment hypothesis (ground truth) of the same premise.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::BufRead;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::edit_script::{edit_distance, tokenize, TokenSeq};
use crate::metrics::sentence_bleu;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("missing {kind} score for ({a}, {b})")]
    MissingScore { kind: ScoreKind, a: String, b: String },
    #[error("no split known for image {0}")]
    MissingSplit(String),
    #[error("invalid instance for image {image_id}: {reason}")]
    InvalidInstance { image_id: String, reason: &'static str },
    #[error("invalid filter config: {0}")]
    Config(String),
    #[error("no instances")]
    Empty,
    #[error("failed to start worker pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

/// An (image, reference caption, ground-truth caption) triple.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EceInstance {
    pub image_id: String,
    #[serde(rename = "ref")]
    pub ref_cap: TokenSeq,
    #[serde(rename = "gt")]
    pub gt_cap: TokenSeq,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_id: Option<String>,
}

impl EceInstance {
    pub fn new(image_id: impl Into<String>, ref_cap: TokenSeq, gt_cap: TokenSeq, split: Split) -> Result<Self, DatasetError> {
        let inst = Self {
            image_id: image_id.into(),
            ref_cap,
            gt_cap,
            split,
            ref_id: None,
            gt_id: None,
        };
        inst.validate()?;
        Ok(inst)
    }

    /// Both captions non-empty and different.
    pub fn validate(&self) -> Result<(), DatasetError> {
        let reason = if self.ref_cap.is_empty() || self.gt_cap.is_empty() {
            "empty caption"
        } else if self.ref_cap == self.gt_cap {
            "reference equals ground truth"
        } else {
            return Ok(());
        };
        Err(DatasetError::InvalidInstance {
            image_id: self.image_id.clone(),
            reason,
        })
    }
}

/// Parses one JSON value per non-blank line; errors carry 1-based line numbers.
pub fn read_jsonl<T: DeserializeOwned, R: BufRead>(reader: R) -> Result<Vec<T>, DatasetError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| DatasetError::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(value);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub image_id: String,
    pub caption_id: String,
    pub text: String,
    pub is_gt: bool,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub a: String,
    pub b: String,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    ImageCaptionSimilarity,
    CaptionSpice,
}

impl fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScoreKind::ImageCaptionSimilarity => "image-caption similarity",
            ScoreKind::CaptionSpice => "SPICE",
        })
    }
}

/// Externally computed pair scores. Lookups never fall back to a default.
#[derive(Debug, Clone)]
pub struct ScoreTable {
    kind: ScoreKind,
    scores: HashMap<(String, String), f64>,
}

impl ScoreTable {
    pub fn new(kind: ScoreKind) -> Self {
        Self {
            kind,
            scores: HashMap::new(),
        }
    }

    pub fn from_records(kind: ScoreKind, records: impl IntoIterator<Item = ScoreRecord>) -> Self {
        let mut table = Self::new(kind);
        for r in records {
            table.insert(r.a, r.b, r.score);
        }
        table
    }

    pub fn insert(&mut self, a: impl Into<String>, b: impl Into<String>, score: f64) {
        self.scores.insert((a.into(), b.into()), score);
    }

    pub fn kind(&self) -> ScoreKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn get(&self, a: &str, b: &str) -> Result<f64, DatasetError> {
        // (String, String) keys cannot borrow as (&str, &str)
        self.scores
            .get(&(a.to_string(), b.to_string()))
            .copied()
            .ok_or_else(|| DatasetError::MissingScore {
                kind: self.kind,
                a: a.to_string(),
                b: b.to_string(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub topk_similar: usize,
    pub sample_k: usize,
    pub bleu2_min: f64,
    pub bleu3_min: f64,
    pub spice_max: f64,
    pub rng_seed: u64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            topk_similar: 300,
            sample_k: 30,
            bleu2_min: 0.4,
            bleu3_min: 0.3,
            spice_max: 0.35,
            rng_seed: 0,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), DatasetError> {
        for (name, v) in [
            ("bleu2_min", self.bleu2_min),
            ("bleu3_min", self.bleu3_min),
            ("spice_max", self.spice_max),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(DatasetError::Config(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if self.sample_k > self.topk_similar {
            return Err(DatasetError::Config(format!(
                "sample_k ({}) exceeds topk_similar ({})",
                self.sample_k, self.topk_similar
            )));
        }
        Ok(())
    }

    /// Both BLEU thresholds, strictly exceeded against one ground truth.
    pub fn passes_bleu(&self, cand: &TokenSeq, gt: &TokenSeq) -> bool {
        let b2 = sentence_bleu(cand, gt, 2).unwrap_or(0.0);
        let b3 = sentence_bleu(cand, gt, 3).unwrap_or(0.0);
        b2 > self.bleu2_min && b3 > self.bleu3_min
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(*b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Per-image generator so that builds agree regardless of scheduling.
fn image_rng(seed: u64, image_id: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ fnv1a(image_id.as_bytes()))
}

#[derive(Debug, Clone)]
struct Caption {
    image_id: String,
    caption_id: String,
    tokens: TokenSeq,
    is_gt: bool,
}

/// Captions indexed for per-image candidate selection.
#[derive(Debug, Clone)]
pub struct CaptionPool {
    by_split: Vec<(Split, Vec<Caption>)>,
    // (split index, image id, positions of GT captions within the split)
    images: Vec<(usize, String, Vec<usize>)>,
}

impl CaptionPool {
    pub fn new(records: &[CaptionRecord]) -> Self {
        let mut by_split: Vec<(Split, Vec<Caption>)> = Vec::new();
        let mut images: Vec<(usize, String, Vec<usize>)> = Vec::new();
        let mut image_slot: HashMap<(Split, String), usize> = HashMap::new();
        for rec in records {
            let split_idx = match by_split.iter().position(|(s, _)| *s == rec.split) {
                Some(i) => i,
                None => {
                    by_split.push((rec.split, Vec::new()));
                    by_split.len() - 1
                }
            };
            let captions = &mut by_split[split_idx].1;
            captions.push(Caption {
                image_id: rec.image_id.clone(),
                caption_id: rec.caption_id.clone(),
                tokens: tokenize(&rec.text),
                is_gt: rec.is_gt,
            });
            if rec.is_gt {
                let pos = captions.len() - 1;
                let slot = *image_slot.entry((rec.split, rec.image_id.clone())).or_insert_with(|| {
                    images.push((split_idx, rec.image_id.clone(), Vec::new()));
                    images.len() - 1
                });
                images[slot].2.push(pos);
            }
        }
        Self { by_split, images }
    }

    pub fn n_images(&self) -> usize {
        self.images.len()
    }

    /// Ground-truth captions of `image_id` as (caption id, tokens).
    pub fn ground_truths(&self, image_id: &str) -> Vec<(&str, &TokenSeq)> {
        self.images
            .iter()
            .filter(|(_, id, _)| id == image_id)
            .flat_map(|(split_idx, _, gts)| {
                let captions = &self.by_split[*split_idx].1;
                gts.iter().map(move |&p| (captions[p].caption_id.as_str(), &captions[p].tokens))
            })
            .collect()
    }

    fn build_image(
        &self,
        image: usize,
        similarity: &ScoreTable,
        spice: &ScoreTable,
        cfg: &FilterConfig,
    ) -> Result<Vec<EceInstance>, DatasetError> {
        let (split_idx, image_id, gt_pos) = &self.images[image];
        let (split, captions) = &self.by_split[*split_idx];
        let gts: Vec<&Caption> = gt_pos.iter().map(|&p| &captions[p]).collect();

        // 1. similarity ranking, then a seeded sample from the top
        let mut ranked = Vec::new();
        for (pos, cap) in captions.iter().enumerate() {
            if cap.is_gt && cap.image_id == *image_id {
                continue;
            }
            ranked.push((similarity.get(image_id, &cap.caption_id)?, pos));
        }
        ranked.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
        ranked.truncate(cfg.topk_similar);
        let mut rng = image_rng(cfg.rng_seed, image_id);
        let mut picks = index::sample(&mut rng, ranked.len(), cfg.sample_k.min(ranked.len())).into_vec();
        picks.sort_unstable();

        let mut out = Vec::new();
        for pick in picks {
            let cand = &captions[ranked[pick].1];
            if cand.tokens.is_empty() {
                continue;
            }
            // 2. some ground truth overlaps enough
            if !gts.iter().any(|gt| cfg.passes_bleu(&cand.tokens, &gt.tokens)) {
                continue;
            }
            // 3. the closest scene match still differs enough
            let mut min_spice = f64::INFINITY;
            for gt in &gts {
                min_spice = min_spice.min(spice.get(&cand.caption_id, &gt.caption_id)?);
            }
            if min_spice >= cfg.spice_max {
                continue;
            }
            // 4. nearest ground truth, first one on ties
            let Some(best) = gts
                .iter()
                .filter(|gt| !gt.tokens.is_empty())
                .min_by_key(|gt| edit_distance(&cand.tokens, &gt.tokens))
            else {
                continue;
            };
            if best.tokens == cand.tokens {
                continue;
            }
            out.push(EceInstance {
                image_id: image_id.clone(),
                ref_cap: cand.tokens.clone(),
                gt_cap: best.tokens.clone(),
                split: *split,
                ref_id: Some(cand.caption_id.clone()),
                gt_id: Some(best.caption_id.clone()),
            });
        }
        Ok(out)
    }

    /// Runs the cascade for every image with ground-truth captions, in input
    /// order, on `jobs` worker threads (0 = all cores).
    pub fn build(
        &self,
        similarity: &ScoreTable,
        spice: &ScoreTable,
        cfg: &FilterConfig,
        jobs: usize,
    ) -> Result<Vec<EceInstance>, DatasetError> {
        cfg.validate()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| DatasetError::Pool(e.to_string()))?;
        let per_image: Vec<Result<Vec<EceInstance>, DatasetError>> = pool.install(|| {
            (0..self.images.len())
                .into_par_iter()
                .map(|i| self.build_image(i, similarity, spice, cfg))
                .collect()
        });
        let mut out = Vec::new();
        for r in per_image {
            out.extend(r?);
        }
        Ok(out)
    }

    /// Re-checks a built instance against the thresholds and the
    /// nearest-ground-truth pairing.
    pub fn verify(&self, inst: &EceInstance, spice: &ScoreTable, cfg: &FilterConfig) -> Result<(), String> {
        let gts = self.ground_truths(&inst.image_id);
        if gts.is_empty() {
            return Err(format!("image {} has no ground truths", inst.image_id));
        }
        inst.validate().map_err(|e| e.to_string())?;
        if !gts.iter().any(|(_, gt)| cfg.passes_bleu(&inst.ref_cap, gt)) {
            return Err("no ground truth passes both BLEU thresholds".into());
        }
        let ref_id = inst.ref_id.as_deref().ok_or("instance lacks ref_id")?;
        let mut min_spice = f64::INFINITY;
        for (gt_id, _) in &gts {
            min_spice = min_spice.min(spice.get(ref_id, gt_id).map_err(|e| e.to_string())?);
        }
        if min_spice.partial_cmp(&cfg.spice_max) != Some(std::cmp::Ordering::Less) {
            return Err(format!("minimum SPICE {min_spice} not below {}", cfg.spice_max));
        }
        let best = gts
            .iter()
            .map(|(_, gt)| edit_distance(&inst.ref_cap, gt))
            .min()
            .expect("non-empty");
        if edit_distance(&inst.ref_cap, &inst.gt_cap) != best {
            return Err("ground truth is not the nearest candidate".into());
        }
        Ok(())
    }
}

/// Convenience wrapper over [`CaptionPool::build`].
pub fn build_cocoee_split(
    captions: &[CaptionRecord],
    similarity: &ScoreTable,
    spice: &ScoreTable,
    cfg: &FilterConfig,
    jobs: usize,
) -> Result<Vec<EceInstance>, DatasetError> {
    CaptionPool::new(captions).build(similarity, spice, cfg, jobs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntailmentLabel {
    Entailment,
    Neutral,
    Contradiction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisRecord {
    pub image_id: String,
    pub premise_id: String,
    pub label: EntailmentLabel,
    pub sentence: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

/// image id -> split, for records that do not carry their own split.
pub type SplitManifest = HashMap<String, Split>;

#[derive(Debug, Clone, Deserialize)]
struct ManifestRecord {
    image_id: String,
    split: Split,
}

pub fn read_split_manifest<R: BufRead>(reader: R) -> Result<SplitManifest, DatasetError> {
    Ok(read_jsonl::<ManifestRecord, _>(reader)?
        .into_iter()
        .map(|r| (r.image_id, r.split))
        .collect())
}

/// Pairs the first contradiction (reference) with the first entailment
/// (ground truth) of every (image, premise) group, in order of first
/// appearance. Neutral hypotheses are ignored.
pub fn build_flickr30kee(
    records: &[HypothesisRecord],
    manifest: Option<&SplitManifest>,
) -> Result<Vec<EceInstance>, DatasetError> {
    let mut order: Vec<(&str, &str)> = Vec::new();
    // (first contradiction, first entailment)
    type Pair<'r> = (Option<&'r HypothesisRecord>, Option<&'r HypothesisRecord>);
    let mut groups: HashMap<(&str, &str), Pair<'_>> = HashMap::new();
    for rec in records {
        let key = (rec.image_id.as_str(), rec.premise_id.as_str());
        let group = groups.entry(key).or_insert_with(|| {
            order.push(key);
            (None, None)
        });
        match rec.label {
            EntailmentLabel::Contradiction => {
                group.0.get_or_insert(rec);
            }
            EntailmentLabel::Entailment => {
                group.1.get_or_insert(rec);
            }
            EntailmentLabel::Neutral => {}
        }
    }

    let mut out = Vec::new();
    for key in order {
        let (Some(contra), Some(entail)) = groups[&key] else {
            continue;
        };
        let split = contra
            .split
            .or(entail.split)
            .or_else(|| manifest.and_then(|m| m.get(&contra.image_id).copied()))
            .ok_or_else(|| DatasetError::MissingSplit(contra.image_id.clone()))?;
        let inst = EceInstance {
            image_id: contra.image_id.clone(),
            ref_cap: tokenize(&contra.sentence),
            gt_cap: tokenize(&entail.sentence),
            split,
            ref_id: None,
            gt_id: None,
        };
        if inst.validate().is_ok() {
            out.push(inst);
        }
    }
    Ok(out)
}

/// Parses hypothesis JSONL (line-numbered errors) and builds instances.
pub fn build_flickr30kee_jsonl<R: BufRead>(
    reader: R,
    manifest: Option<&SplitManifest>,
) -> Result<Vec<EceInstance>, DatasetError> {
    let records: Vec<HypothesisRecord> = read_jsonl(reader)?;
    build_flickr30kee(&records, manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_instances: usize,
    pub n_images: usize,
    pub mean_ref_len: f64,
    pub mean_gt_len: f64,
    pub mean_edit_distance: f64,
    pub vocab_size: usize,
}

pub fn compute_stats(instances: &[EceInstance]) -> Result<DatasetStats, DatasetError> {
    if instances.is_empty() {
        return Err(DatasetError::Empty);
    }
    let n = instances.len() as f64;
    let mut images = HashSet::new();
    let mut vocab: HashSet<&str> = HashSet::new();
    let (mut ref_len, mut gt_len, mut dist) = (0usize, 0usize, 0usize);
    for inst in instances {
        images.insert(inst.image_id.as_str());
        vocab.extend(inst.ref_cap.iter().map(String::as_str));
        vocab.extend(inst.gt_cap.iter().map(String::as_str));
        ref_len += inst.ref_cap.len();
        gt_len += inst.gt_cap.len();
        dist += edit_distance(&inst.ref_cap, &inst.gt_cap).steps();
    }
    Ok(DatasetStats {
        n_instances: instances.len(),
        n_images: images.len(),
        mean_ref_len: ref_len as f64 / n,
        mean_gt_len: gt_len as f64 / n,
        mean_edit_distance: dist as f64 / n,
        vocab_size: vocab.len(),
    })
}

/// Statistics per split, in split order.
pub fn compute_split_stats(instances: &[EceInstance]) -> Result<Vec<(Split, DatasetStats)>, DatasetError> {
    let mut splits: Vec<Split> = instances.iter().map(|i| i.split).collect();
    splits.sort();
    splits.dedup();
    splits
        .into_iter()
        .map(|s| {
            let subset: Vec<EceInstance> = instances.iter().filter(|i| i.split == s).cloned().collect();
            compute_stats(&subset).map(|st| (s, st))
        })
        .collect()
}

pub fn render_stats_table(rows: &[(Split, DatasetStats)]) -> String {
    let mut out = format!(
        "{:<8}{:>12}{:>10}{:>10}{:>10}{:>12}{:>10}\n",
        "split", "instances", "images", "ref len", "gt len", "edit dist", "vocab"
    );
    for (split, s) in rows {
        out.push_str(&format!(
            "{:<8}{:>12}{:>10}{:>10.2}{:>10.2}{:>12.2}{:>10}\n",
            split.to_string(),
            s.n_instances,
            s.n_images,
            s.mean_ref_len,
            s.mean_gt_len,
            s.mean_edit_distance,
            s.vocab_size
        ));
    }
    out
}
