//! Caption quality metrics against a single ground truth, and editing
//! efficiency accounting.
//!
//! BLEU is aggregated over the corpus without smoothing. ROUGE-L is the mean
//! per-instance LCS F-measure with `beta = 1.2`. CIDEr-D uses tf-idf
//! weighted n-grams (n = 1..4) with clipping and a gaussian length penalty
//! (`sigma = 6`), scaled by 10. Functions return raw scores; [`evaluate`]
//! reports everything multiplied by 100.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::edit_script::{lcs_len, TokenSeq};
use crate::round_engine::{EngineError, RoundTrace};

pub const MAX_NGRAM: usize = 4;
pub const ROUGE_BETA: f64 = 1.2;
pub const CIDER_SIGMA: f64 = 6.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("{cands} candidates but {refs} references")]
    LengthMismatch { cands: usize, refs: usize },
    #[error("n-gram order must be within 1..=4, got {0}")]
    Order(usize),
    #[error("GPS is undefined when the mean editing steps are zero")]
    UndefinedGps,
    #[error("instance {id}: trace does not reproduce the output ({source})")]
    Trace { id: String, source: EngineError },
    #[error("instance {id}: trace result differs from the recorded output")]
    TraceOutput { id: String },
}

type Ngrams<'a> = HashMap<&'a [String], usize>;

fn ngram_counts(seq: &TokenSeq, n: usize) -> Ngrams<'_> {
    let mut counts = HashMap::new();
    for gram in seq.tokens().windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

fn check_corpus(cands: &[TokenSeq], refs: &[TokenSeq]) -> Result<(), MetricError> {
    if cands.len() != refs.len() {
        return Err(MetricError::LengthMismatch {
            cands: cands.len(),
            refs: refs.len(),
        });
    }
    if cands.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    Ok(())
}

/// Sufficient statistics for BLEU; merging is plain addition.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub matches: [usize; MAX_NGRAM],
    pub totals: [usize; MAX_NGRAM],
    pub cand_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    pub fn from_pair(cand: &TokenSeq, reference: &TokenSeq) -> Self {
        let mut stats = BleuStats {
            cand_len: cand.len(),
            ref_len: reference.len(),
            ..Default::default()
        };
        for n in 1..=MAX_NGRAM {
            let ref_counts = ngram_counts(reference, n);
            for (gram, count) in ngram_counts(cand, n) {
                stats.matches[n - 1] += count.min(ref_counts.get(gram).copied().unwrap_or(0));
                stats.totals[n - 1] += count;
            }
        }
        stats
    }

    pub fn merge(mut self, other: &BleuStats) -> Self {
        for i in 0..MAX_NGRAM {
            self.matches[i] += other.matches[i];
            self.totals[i] += other.totals[i];
        }
        self.cand_len += other.cand_len;
        self.ref_len += other.ref_len;
        self
    }

    pub fn brevity_penalty(&self) -> f64 {
        if self.cand_len == 0 {
            0.0
        } else if self.cand_len > self.ref_len {
            1.0
        } else {
            (1.0 - self.ref_len as f64 / self.cand_len as f64).exp()
        }
    }

    /// BLEU-`n` with uniform weights over orders `1..=n`.
    pub fn score(&self, n: usize) -> Result<f64, MetricError> {
        if !(1..=MAX_NGRAM).contains(&n) {
            return Err(MetricError::Order(n));
        }
        let mut log_sum = 0.0;
        for i in 0..n {
            if self.matches[i] == 0 {
                return Ok(0.0);
            }
            log_sum += (self.matches[i] as f64 / self.totals[i] as f64).ln();
        }
        Ok(self.brevity_penalty() * (log_sum / n as f64).exp())
    }
}

/// Corpus-level BLEU-`n`.
pub fn bleu(cands: &[TokenSeq], refs: &[TokenSeq], n: usize) -> Result<f64, MetricError> {
    check_corpus(cands, refs)?;
    corpus_bleu_stats(cands, refs).score(n)
}

pub fn corpus_bleu_stats(cands: &[TokenSeq], refs: &[TokenSeq]) -> BleuStats {
    cands
        .iter()
        .zip(refs)
        .map(|(c, r)| BleuStats::from_pair(c, r))
        .fold(BleuStats::default(), |acc, s| acc.merge(&s))
}

/// BLEU-`n` of a single candidate against a single reference.
pub fn sentence_bleu(cand: &TokenSeq, reference: &TokenSeq, n: usize) -> Result<f64, MetricError> {
    BleuStats::from_pair(cand, reference).score(n)
}

/// LCS-based F-measure of one pair.
pub fn rouge_l_pair(cand: &TokenSeq, reference: &TokenSeq) -> f64 {
    let lcs = lcs_len(cand.tokens(), reference.tokens());
    if lcs == 0 {
        return 0.0;
    }
    let precision = lcs as f64 / cand.len() as f64;
    let recall = lcs as f64 / reference.len() as f64;
    let beta2 = ROUGE_BETA * ROUGE_BETA;
    (1.0 + beta2) * precision * recall / (recall + beta2 * precision)
}

/// Mean ROUGE-L over the corpus.
pub fn rouge_l(cands: &[TokenSeq], refs: &[TokenSeq]) -> Result<f64, MetricError> {
    check_corpus(cands, refs)?;
    let total: f64 = cands.iter().zip(refs).map(|(c, r)| rouge_l_pair(c, r)).sum();
    Ok(total / cands.len() as f64)
}

/// CIDEr-D scorer with document frequencies taken from a fixed corpus.
#[derive(Debug, Clone)]
pub struct CiderD {
    doc_freq: HashMap<Vec<String>, usize>,
    log_docs: f64,
}

struct TfIdf {
    weights: [HashMap<Vec<String>, f64>; MAX_NGRAM],
    norms: [f64; MAX_NGRAM],
    len: usize,
}

impl CiderD {
    /// Each entry of `idf_corpus` is one document (one reference caption).
    pub fn new(idf_corpus: &[TokenSeq]) -> Result<Self, MetricError> {
        if idf_corpus.is_empty() {
            return Err(MetricError::EmptyCorpus);
        }
        let mut doc_freq: HashMap<Vec<String>, usize> = HashMap::new();
        for doc in idf_corpus {
            let mut seen: HashSet<&[String]> = HashSet::new();
            for n in 1..=MAX_NGRAM {
                seen.extend(doc.tokens().windows(n));
            }
            for gram in seen {
                *doc_freq.entry(gram.to_vec()).or_insert(0) += 1;
            }
        }
        Ok(Self {
            doc_freq,
            log_docs: (idf_corpus.len() as f64).ln(),
        })
    }

    fn idf(&self, gram: &[String]) -> f64 {
        let df = self.doc_freq.get(gram).copied().unwrap_or(0).max(1);
        self.log_docs - (df as f64).ln()
    }

    fn vectorize(&self, seq: &TokenSeq) -> TfIdf {
        let mut weights: [HashMap<Vec<String>, f64>; MAX_NGRAM] = Default::default();
        let mut norms = [0.0; MAX_NGRAM];
        for n in 1..=MAX_NGRAM {
            for (gram, tf) in ngram_counts(seq, n) {
                let w = tf as f64 * self.idf(gram);
                norms[n - 1] += w * w;
                weights[n - 1].insert(gram.to_vec(), w);
            }
        }
        TfIdf {
            weights,
            norms: norms.map(f64::sqrt),
            len: seq.len(),
        }
    }

    /// CIDEr-D of one candidate against its single reference (0..=10 scale).
    pub fn score_pair(&self, cand: &TokenSeq, reference: &TokenSeq) -> f64 {
        let hyp = self.vectorize(cand);
        let gt = self.vectorize(reference);
        let delta = hyp.len as f64 - gt.len as f64;
        let penalty = (-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
        let mut total = 0.0;
        for n in 0..MAX_NGRAM {
            let mut dot = 0.0;
            for (gram, &h) in &hyp.weights[n] {
                if let Some(&r) = gt.weights[n].get(gram) {
                    dot += h.min(r) * r;
                }
            }
            if hyp.norms[n] != 0.0 && gt.norms[n] != 0.0 {
                dot /= hyp.norms[n] * gt.norms[n];
            }
            total += dot * penalty;
        }
        10.0 * total / MAX_NGRAM as f64
    }

    pub fn score_corpus(&self, cands: &[TokenSeq], refs: &[TokenSeq]) -> Result<f64, MetricError> {
        check_corpus(cands, refs)?;
        let total: f64 = cands.iter().zip(refs).map(|(c, r)| self.score_pair(c, r)).sum();
        Ok(total / cands.len() as f64)
    }
}

/// Mean CIDEr-D over the corpus, document frequencies from `idf_corpus`.
pub fn cider_d(cands: &[TokenSeq], refs: &[TokenSeq], idf_corpus: &[TokenSeq]) -> Result<f64, MetricError> {
    CiderD::new(idf_corpus)?.score_corpus(cands, refs)
}

/// Meaningful editing steps split into deletions and additions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditSteps {
    pub del: usize,
    pub add: usize,
    pub es: usize,
}

impl EditSteps {
    pub fn new(del: usize, add: usize) -> Self {
        Self { del, add, es: del + add }
    }
}

/// Deletions of the first round plus every inserted word; `KEEP` is free.
pub fn es_of_trace(trace: &RoundTrace) -> EditSteps {
    EditSteps::new(trace.deletions(), trace.insertions())
}

/// Steps charged to a model that rewrites the caption from scratch: every
/// reference word is deleted and every output word added.
pub fn es_implicit(reference: &TokenSeq, out: &TokenSeq) -> usize {
    es_implicit_steps(reference, out).es
}

pub fn es_implicit_steps(reference: &TokenSeq, out: &TokenSeq) -> EditSteps {
    EditSteps::new(reference.len(), out.len())
}

/// Edit operations that bundle several basic operations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CompoundOp {
    /// Keep the token and add `n` words after it.
    KeepN { n: usize },
    /// Delete the token and add `n` words after it.
    DeleteN { n: usize },
    /// Keep the token and add a phrase before it.
    PhraseKeep { phrase: Vec<String> },
    /// Delete the token and add a phrase before it.
    PhraseDelete { phrase: Vec<String> },
    Replace { word: String },
    /// Any operation that only moves tokens around.
    Reorder,
}

/// Basic-operation counts behind a [`CompoundOp`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounts {
    pub del: usize,
    pub add: usize,
    pub reorder: usize,
}

impl OpCounts {
    pub fn steps(&self) -> usize {
        self.del + self.add + self.reorder
    }
}

impl std::ops::Add for OpCounts {
    type Output = OpCounts;

    fn add(self, rhs: OpCounts) -> OpCounts {
        OpCounts {
            del: self.del + rhs.del,
            add: self.add + rhs.add,
            reorder: self.reorder + rhs.reorder,
        }
    }
}

impl std::iter::Sum for OpCounts {
    fn sum<I: Iterator<Item = OpCounts>>(iter: I) -> OpCounts {
        iter.fold(OpCounts::default(), |a, b| a + b)
    }
}

pub fn decompose_compound(op: &CompoundOp) -> OpCounts {
    let (del, add, reorder) = match op {
        CompoundOp::KeepN { n } => (0, *n, 0),
        CompoundOp::DeleteN { n } => (1, *n, 0),
        CompoundOp::PhraseKeep { phrase } => (0, phrase.len(), 0),
        CompoundOp::PhraseDelete { phrase } => (1, phrase.len(), 0),
        CompoundOp::Replace { .. } => (1, 1, 0),
        CompoundOp::Reorder => (0, 0, 1),
    };
    OpCounts { del, add, reorder }
}

pub fn decompose_all<'a>(ops: impl IntoIterator<Item = &'a CompoundOp>) -> OpCounts {
    ops.into_iter().map(decompose_compound).sum()
}

/// Corpus-level gains per step: CIDEr-D improvement over the reference
/// captions divided by the mean number of editing steps.
pub fn gps(cider_ref: f64, cider_out: f64, mean_es: f64) -> Result<f64, MetricError> {
    if mean_es <= 0.0 {
        return Err(MetricError::UndefinedGps);
    }
    Ok((cider_out - cider_ref) / mean_es)
}

/// One line of `eval` input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub id: String,
    #[serde(rename = "ref")]
    pub ref_cap: TokenSeq,
    pub out: TokenSeq,
    pub gt: TokenSeq,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<RoundTrace>,
    /// Pre-computed SPICE of `out` against `gt`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spice: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref_spice: Option<f64>,
}

/// Quality scores, all ×100.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityScores {
    pub bleu: [f64; MAX_NGRAM],
    pub rouge_l: f64,
    pub cider_d: f64,
    pub spice: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n_instances: usize,
    #[serde(flatten)]
    pub quality: QualityScores,
    pub es: f64,
    pub gps_c: Option<f64>,
    pub del_steps: f64,
    pub add_steps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceScores {
    pub id: String,
    pub bleu: [f64; MAX_NGRAM],
    pub rouge_l: f64,
    pub cider_d: f64,
    pub del: usize,
    pub add: usize,
    pub es: usize,
}

/// Scores of the untouched reference captions next to the edited outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub ref_cap: QualityScores,
    pub output: MetricReport,
    #[serde(skip)]
    pub instances: Vec<InstanceScores>,
}

fn quality(
    cider: &CiderD,
    cands: &[TokenSeq],
    gts: &[TokenSeq],
    spice: Option<f64>,
) -> Result<QualityScores, MetricError> {
    check_corpus(cands, gts)?;
    let stats = corpus_bleu_stats(cands, gts);
    let mut bleu_scores = [0.0; MAX_NGRAM];
    for (n, slot) in bleu_scores.iter_mut().enumerate() {
        *slot = 100.0 * stats.score(n + 1)?;
    }
    Ok(QualityScores {
        bleu: bleu_scores,
        rouge_l: 100.0 * rouge_l(cands, gts)?,
        cider_d: 100.0 * cider.score_corpus(cands, gts)?,
        spice,
    })
}

fn mean_spice(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let values: Option<Vec<f64>> = values.collect();
    let values = values?;
    if values.is_empty() {
        return None;
    }
    Some(100.0 * values.iter().sum::<f64>() / values.len() as f64)
}

/// Scores a batch of edited captions against their ground truths.
///
/// Editing steps come from the trace when present (the trace must replay
/// to `out`); otherwise the rewrite-from-scratch convention applies. SPICE
/// is reported only when every record carries it.
pub fn evaluate(records: &[EvalRecord]) -> Result<Evaluation, MetricError> {
    if records.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    let gts: Vec<TokenSeq> = records.iter().map(|r| r.gt.clone()).collect();
    let outs: Vec<TokenSeq> = records.iter().map(|r| r.out.clone()).collect();
    let refs: Vec<TokenSeq> = records.iter().map(|r| r.ref_cap.clone()).collect();
    let cider = CiderD::new(&gts)?;

    let mut instances = Vec::with_capacity(records.len());
    for rec in records {
        let steps = match &rec.trace {
            Some(trace) => {
                let replayed = trace.replay(&rec.ref_cap).map_err(|source| MetricError::Trace {
                    id: rec.id.clone(),
                    source,
                })?;
                if replayed != rec.out {
                    return Err(MetricError::TraceOutput { id: rec.id.clone() });
                }
                es_of_trace(trace)
            }
            None => es_implicit_steps(&rec.ref_cap, &rec.out),
        };
        let pair = BleuStats::from_pair(&rec.out, &rec.gt);
        let mut bleu_scores = [0.0; MAX_NGRAM];
        for (n, slot) in bleu_scores.iter_mut().enumerate() {
            *slot = 100.0 * pair.score(n + 1)?;
        }
        instances.push(InstanceScores {
            id: rec.id.clone(),
            bleu: bleu_scores,
            rouge_l: 100.0 * rouge_l_pair(&rec.out, &rec.gt),
            cider_d: 100.0 * cider.score_pair(&rec.out, &rec.gt),
            del: steps.del,
            add: steps.add,
            es: steps.es,
        });
    }

    let ref_cap = quality(&cider, &refs, &gts, mean_spice(records.iter().map(|r| r.ref_spice)))?;
    let out_quality = quality(&cider, &outs, &gts, mean_spice(records.iter().map(|r| r.spice)))?;
    let n = records.len() as f64;
    let del_steps = instances.iter().map(|i| i.del as f64).sum::<f64>() / n;
    let add_steps = instances.iter().map(|i| i.add as f64).sum::<f64>() / n;
    let es = del_steps + add_steps;
    let gps_c = gps(ref_cap.cider_d, out_quality.cider_d, es).ok();
    Ok(Evaluation {
        ref_cap,
        output: MetricReport {
            n_instances: records.len(),
            quality: out_quality,
            es,
            gps_c,
            del_steps,
            add_steps,
        },
        instances,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.1}"))
}

/// Text table with the columns B-1..4, R, C, S, ES, GPS(C), D, A.
pub fn render_table(eval: &Evaluation) -> String {
    let header = format!(
        "{:<10}{:>7}{:>7}{:>7}{:>7}{:>7}{:>8}{:>7}{:>8}{:>8}{:>8}{:>8}\n",
        "", "B-1", "B-2", "B-3", "B-4", "R", "C", "S", "ES", "GPS(C)", "D", "A"
    );
    let row = |name: &str, q: &QualityScores, tail: [String; 4]| {
        format!(
            "{:<10}{:>7.1}{:>7.1}{:>7.1}{:>7.1}{:>7.1}{:>8.1}{:>7}{:>8}{:>8}{:>8}{:>8}\n",
            name,
            q.bleu[0],
            q.bleu[1],
            q.bleu[2],
            q.bleu[3],
            q.rouge_l,
            q.cider_d,
            cell(q.spice),
            tail[0],
            tail[1],
            tail[2],
            tail[3]
        )
    };
    let out = &eval.output;
    let dash = || "-".to_string();
    let mut table = header;
    table.push_str(&row("Ref-Cap", &eval.ref_cap, [dash(), dash(), dash(), dash()]));
    table.push_str(&row(
        "Output",
        &out.quality,
        [
            format!("{:.2}", out.es),
            out.gps_c.map_or_else(dash, |g| format!("{g:.2}")),
            format!("{:.2}", out.del_steps),
            format!("{:.2}", out.add_steps),
        ],
    ));
    table
}
