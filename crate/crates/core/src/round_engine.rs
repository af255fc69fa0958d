//! Multi-round tag-and-insert editing.
//!
//! Editing starts with a single deletion pass over the reference caption.
//! Every following round tags each slot (the leading `[CLS]` slot plus one
//! slot per token) as `KEEP` or `ADD`, places one mask after every `ADD`
//! slot and lets the policy fill the masks. Editing stops after the first
//! round that adds nothing, or when the round budget runs out.
//!
//! The decisions come from a [`Policy`]. [`OraclePolicy`] replays the
//! canonical minimal script, inserting the words of each gap left to right
//! with one word per gap per round, which makes the number of rounds needed
//! equal to the largest gap.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::EceInstance;
use crate::edit_script::{min_edit_script, EditOp, TokenError, TokenSeq};

pub const MASK_TOKEN: &str = "[MASK]";
pub const CLS_TOKEN: &str = "[CLS]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum DelTag {
    Keep,
    Delete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum AddTag {
    Keep,
    Add,
}

impl DelTag {
    pub fn label(self) -> &'static str {
        match self {
            DelTag::Keep => "KEEP",
            DelTag::Delete => "DELETE",
        }
    }
}

impl AddTag {
    pub fn label(self) -> &'static str {
        match self {
            AddTag::Keep => "KEEP",
            AddTag::Add => "ADD",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    TaggerDel,
    TaggerAdd,
    Inserter,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::TaggerDel => "tagger_del",
            Stage::TaggerAdd => "tagger_add",
            Stage::Inserter => "inserter",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Slot {
    Word(String),
    Mask,
}

/// A caption with zero or more mask placeholders.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct MaskedSeq(Vec<Slot>);

impl MaskedSeq {
    pub fn new(items: Vec<Slot>) -> Self {
        Self(items)
    }

    pub fn items(&self) -> &[Slot] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn mask_count(&self) -> usize {
        self.0.iter().filter(|s| matches!(s, Slot::Mask)).count()
    }

    /// Items as strings, masks rendered as [`MASK_TOKEN`].
    pub fn to_strings(&self) -> Vec<String> {
        self.0
            .iter()
            .map(|s| match s {
                Slot::Word(w) => w.clone(),
                Slot::Mask => MASK_TOKEN.to_string(),
            })
            .collect()
    }
}

impl fmt::Display for MaskedSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_strings().join(" "))
    }
}

impl From<&TokenSeq> for MaskedSeq {
    fn from(seq: &TokenSeq) -> Self {
        Self(seq.iter().cloned().map(Slot::Word).collect())
    }
}

/// Per-call context handed to a policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EditContext<'a> {
    pub instance_id: &'a str,
    /// 1-based editing round; the deletion pass belongs to round 1.
    pub round: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct PolicyError(pub String);

/// Decision maker behind the three editing stages.
pub trait Policy {
    /// One tag per input token.
    fn tag_del(&self, ctx: &EditContext<'_>, tokens: &TokenSeq) -> Result<Vec<DelTag>, PolicyError>;

    /// One tag per slot: the `[CLS]` slot first, then one per token.
    fn tag_add(&self, ctx: &EditContext<'_>, tokens: &TokenSeq) -> Result<Vec<AddTag>, PolicyError>;

    /// One word per mask, in order.
    fn insert(&self, ctx: &EditContext<'_>, masked: &MaskedSeq) -> Result<Vec<String>, PolicyError>;
}

impl<P: Policy + ?Sized> Policy for &P {
    fn tag_del(&self, ctx: &EditContext<'_>, tokens: &TokenSeq) -> Result<Vec<DelTag>, PolicyError> {
        (**self).tag_del(ctx, tokens)
    }

    fn tag_add(&self, ctx: &EditContext<'_>, tokens: &TokenSeq) -> Result<Vec<AddTag>, PolicyError> {
        (**self).tag_add(ctx, tokens)
    }

    fn insert(&self, ctx: &EditContext<'_>, masked: &MaskedSeq) -> Result<Vec<String>, PolicyError> {
        (**self).insert(ctx, masked)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("{stage} returned {found} decisions, expected {expected}")]
    Contract {
        stage: Stage,
        expected: usize,
        found: usize,
    },
    #[error("policy failed: {0}")]
    Policy(#[from] PolicyError),
    #[error("inserted word rejected: {0}")]
    Word(#[from] TokenError),
    #[error("{stage} called in round {round}: {reason}")]
    OutOfOrder {
        stage: Stage,
        round: usize,
        reason: &'static str,
    },
    #[error("trace replay diverged in round {round}")]
    TraceMismatch { round: usize },
    #[error("invalid config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpansionConfig {
    /// Loss weight carried by `KEEP` labels; other labels weigh 1.0.
    pub lambda: f64,
    pub max_rounds: usize,
}

impl Default for ExpansionConfig {
    fn default() -> Self {
        Self {
            lambda: 1.5,
            max_rounds: 4,
        }
    }
}

impl ExpansionConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(EngineError::Config(format!("lambda must be positive, got {}", self.lambda)));
        }
        if self.max_rounds == 0 {
            return Err(EngineError::Config("max_rounds must be at least 1".into()));
        }
        Ok(())
    }

    fn weight(&self, is_keep: bool) -> f64 {
        if is_keep {
            self.lambda
        } else {
            1.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditorState {
    pub current: TokenSeq,
    /// Current round; 0 until the deletion pass has run.
    pub round: usize,
    pub converged: bool,
}

impl EditorState {
    pub fn new(reference: TokenSeq) -> Self {
        Self {
            current: reference,
            round: 0,
            converged: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub add_slots: Vec<AddTag>,
    pub inserted: Vec<String>,
    pub result: TokenSeq,
}

/// The full editing path of one instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundTrace {
    pub del: Vec<DelTag>,
    pub rounds: Vec<RoundRecord>,
    pub converged: bool,
}

impl RoundTrace {
    /// Re-executes the recorded decisions from `reference`, checking every
    /// recorded intermediate result along the way.
    pub fn replay(&self, reference: &TokenSeq) -> Result<TokenSeq, EngineError> {
        let mut current = apply_del_tags(reference, &self.del)?;
        for (i, record) in self.rounds.iter().enumerate() {
            let masked = place_masks(&current, &record.add_slots)?;
            current = fill_masks(&masked, &record.inserted)?;
            if current != record.result {
                return Err(EngineError::TraceMismatch { round: i + 1 });
            }
        }
        Ok(current)
    }

    pub fn deletions(&self) -> usize {
        self.del.iter().filter(|t| **t == DelTag::Delete).count()
    }

    pub fn insertions(&self) -> usize {
        self.rounds.iter().map(|r| r.inserted.len()).sum()
    }
}

/// Drops every token tagged `DELETE`.
pub fn apply_del_tags(tokens: &TokenSeq, tags: &[DelTag]) -> Result<TokenSeq, EngineError> {
    if tags.len() != tokens.len() {
        return Err(EngineError::Contract {
            stage: Stage::TaggerDel,
            expected: tokens.len(),
            found: tags.len(),
        });
    }
    let kept = tokens
        .iter()
        .zip(tags)
        .filter(|(_, t)| **t == DelTag::Keep)
        .map(|(w, _)| w.clone())
        .collect();
    Ok(TokenSeq::from_trusted(kept))
}

/// Places one mask after every slot tagged `ADD`; `tags[0]` is the `[CLS]`
/// slot, so tagging it puts a mask at the front.
pub fn place_masks(tokens: &TokenSeq, tags: &[AddTag]) -> Result<MaskedSeq, EngineError> {
    if tags.len() != tokens.len() + 1 {
        return Err(EngineError::Contract {
            stage: Stage::TaggerAdd,
            expected: tokens.len() + 1,
            found: tags.len(),
        });
    }
    let mut items = Vec::with_capacity(2 * tokens.len() + 1);
    if tags[0] == AddTag::Add {
        items.push(Slot::Mask);
    }
    for (word, tag) in tokens.iter().zip(&tags[1..]) {
        items.push(Slot::Word(word.clone()));
        if *tag == AddTag::Add {
            items.push(Slot::Mask);
        }
    }
    Ok(MaskedSeq(items))
}

/// Replaces the masks with `words`, in order.
pub fn fill_masks(masked: &MaskedSeq, words: &[String]) -> Result<TokenSeq, EngineError> {
    if words.len() != masked.mask_count() {
        return Err(EngineError::Contract {
            stage: Stage::Inserter,
            expected: masked.mask_count(),
            found: words.len(),
        });
    }
    TokenSeq::new(words.iter().map(String::as_str))?;
    let mut fill = words.iter();
    let out = masked
        .items()
        .iter()
        .map(|slot| match slot {
            Slot::Word(w) => w.clone(),
            Slot::Mask => fill.next().cloned().unwrap_or_default(),
        })
        .collect();
    Ok(TokenSeq::from_trusted(out))
}

/// Runs the deletion pass and moves the state into round 1.
pub fn run_tagger_del<P: Policy + ?Sized>(
    state: &mut EditorState,
    policy: &P,
    instance_id: &str,
) -> Result<Vec<DelTag>, EngineError> {
    if state.round != 0 {
        return Err(EngineError::OutOfOrder {
            stage: Stage::TaggerDel,
            round: state.round,
            reason: "deletion only runs before the first round",
        });
    }
    let ctx = EditContext { instance_id, round: 1 };
    let tags = policy.tag_del(&ctx, &state.current)?;
    state.current = apply_del_tags(&state.current, &tags)?;
    state.round = 1;
    Ok(tags)
}

/// Tags the current round's slots and places the masks. Sets `converged`
/// when no slot is tagged `ADD`.
pub fn run_tagger_add<P: Policy + ?Sized>(
    state: &mut EditorState,
    policy: &P,
    instance_id: &str,
) -> Result<(MaskedSeq, Vec<AddTag>), EngineError> {
    if state.round == 0 {
        return Err(EngineError::OutOfOrder {
            stage: Stage::TaggerAdd,
            round: 0,
            reason: "the deletion pass has not run",
        });
    }
    let ctx = EditContext {
        instance_id,
        round: state.round,
    };
    let tags = policy.tag_add(&ctx, &state.current)?;
    let masked = place_masks(&state.current, &tags)?;
    state.converged = !tags.contains(&AddTag::Add);
    Ok((masked, tags))
}

/// Fills every mask with the policy's words.
pub fn run_inserter<P: Policy + ?Sized>(
    masked: &MaskedSeq,
    policy: &P,
    ctx: &EditContext<'_>,
) -> Result<(TokenSeq, Vec<String>), EngineError> {
    let words = if masked.mask_count() == 0 {
        Vec::new()
    } else {
        policy.insert(ctx, masked)?
    };
    let filled = fill_masks(masked, &words)?;
    Ok((filled, words))
}

/// Runs the deletion pass once, then add/insert rounds until a round adds
/// nothing or `cfg.max_rounds` rounds have run.
///
/// When the budget runs out the policy is asked for one more set of add
/// tags, without inserting anything, so that `converged` reports whether
/// editing had actually finished.
pub fn run_rounds<P: Policy + ?Sized>(
    reference: &TokenSeq,
    policy: &P,
    instance_id: &str,
    cfg: &ExpansionConfig,
) -> Result<(TokenSeq, RoundTrace), EngineError> {
    cfg.validate()?;
    let mut state = EditorState::new(reference.clone());
    let del = run_tagger_del(&mut state, policy, instance_id)?;
    let mut rounds = Vec::new();
    loop {
        let (masked, add_slots) = run_tagger_add(&mut state, policy, instance_id)?;
        if state.converged {
            rounds.push(RoundRecord {
                add_slots,
                inserted: Vec::new(),
                result: state.current.clone(),
            });
            break;
        }
        let ctx = EditContext {
            instance_id,
            round: state.round,
        };
        let (next, inserted) = run_inserter(&masked, policy, &ctx)?;
        state.current = next;
        rounds.push(RoundRecord {
            add_slots,
            inserted,
            result: state.current.clone(),
        });
        if state.round >= cfg.max_rounds {
            let probe_ctx = EditContext {
                instance_id,
                round: state.round + 1,
            };
            let probe = policy.tag_add(&probe_ctx, &state.current)?;
            if probe.len() != state.current.len() + 1 {
                return Err(EngineError::Contract {
                    stage: Stage::TaggerAdd,
                    expected: state.current.len() + 1,
                    found: probe.len(),
                });
            }
            state.converged = !probe.contains(&AddTag::Add);
            break;
        }
        state.round += 1;
    }
    let trace = RoundTrace {
        del,
        rounds,
        converged: state.converged,
    };
    Ok((state.current, trace))
}

/// Keeps every token and never adds.
#[derive(Debug, Clone, Copy, Default)]
pub struct KeepAllPolicy;

impl Policy for KeepAllPolicy {
    fn tag_del(&self, _: &EditContext<'_>, tokens: &TokenSeq) -> Result<Vec<DelTag>, PolicyError> {
        Ok(vec![DelTag::Keep; tokens.len()])
    }

    fn tag_add(&self, _: &EditContext<'_>, tokens: &TokenSeq) -> Result<Vec<AddTag>, PolicyError> {
        Ok(vec![AddTag::Keep; tokens.len() + 1])
    }

    fn insert(&self, _: &EditContext<'_>, masked: &MaskedSeq) -> Result<Vec<String>, PolicyError> {
        Err(PolicyError(format!("keep-all policy cannot fill {} masks", masked.mask_count())))
    }
}

/// Replays the decisions of a recorded trace.
#[derive(Debug, Clone)]
pub struct TracePolicy {
    trace: RoundTrace,
}

impl TracePolicy {
    pub fn new(trace: RoundTrace) -> Self {
        Self { trace }
    }
}

impl Policy for TracePolicy {
    fn tag_del(&self, _: &EditContext<'_>, tokens: &TokenSeq) -> Result<Vec<DelTag>, PolicyError> {
        if self.trace.del.len() != tokens.len() {
            return Err(PolicyError(format!(
                "trace deletes over {} tokens but the reference has {}",
                self.trace.del.len(),
                tokens.len()
            )));
        }
        Ok(self.trace.del.clone())
    }

    fn tag_add(&self, ctx: &EditContext<'_>, tokens: &TokenSeq) -> Result<Vec<AddTag>, PolicyError> {
        match self.trace.rounds.get(ctx.round - 1) {
            Some(record) => Ok(record.add_slots.clone()),
            None => Ok(vec![AddTag::Keep; tokens.len() + 1]),
        }
    }

    fn insert(&self, ctx: &EditContext<'_>, _: &MaskedSeq) -> Result<Vec<String>, PolicyError> {
        self.trace
            .rounds
            .get(ctx.round - 1)
            .map(|r| r.inserted.clone())
            .ok_or_else(|| PolicyError(format!("trace has no round {}", ctx.round)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct OracleRound {
    slots: Vec<AddTag>,
    words: Vec<String>,
}

/// Deterministic policy reconstructing a known target caption.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OraclePolicy {
    del: Vec<DelTag>,
    rounds: Vec<OracleRound>,
    max_gap: usize,
}

impl OraclePolicy {
    /// Largest number of words inserted into a single gap, which is also
    /// the number of add rounds the oracle needs.
    pub fn max_gap(&self) -> usize {
        self.max_gap
    }

    pub fn del_tags(&self) -> &[DelTag] {
        &self.del
    }

    /// Add tags for round `round` (1-based) over a sentence of `len` tokens.
    fn slots_for(&self, round: usize, len: usize) -> Result<Vec<AddTag>, PolicyError> {
        match self.rounds.get(round.wrapping_sub(1)) {
            Some(r) if r.slots.len() == len + 1 => Ok(r.slots.clone()),
            Some(r) => Err(PolicyError(format!(
                "oracle round {round} expects {} tokens, got {len}",
                r.slots.len() - 1
            ))),
            None => Ok(vec![AddTag::Keep; len + 1]),
        }
    }
}

/// Builds the oracle policy that edits `reference` into `target`.
///
/// Deletions follow [`min_edit_script`]. The words the script adds between
/// two kept tokens form a gap; in round `r` every gap with at least `r`
/// words receives its `r`-th word, anchored after the word inserted in round
/// `r - 1` (or after the kept token, or `[CLS]`, in round 1).
pub fn oracle_policy(reference: &TokenSeq, target: &TokenSeq) -> OraclePolicy {
    let script = min_edit_script(reference, target);
    let mut del = Vec::with_capacity(reference.len());
    // gaps[0] sits after [CLS]; gaps[k] after the k-th kept token
    let mut gaps: Vec<Vec<String>> = vec![Vec::new()];
    for op in script.ops() {
        match op {
            EditOp::Keep => {
                del.push(DelTag::Keep);
                gaps.push(Vec::new());
            }
            EditOp::Delete => del.push(DelTag::Delete),
            EditOp::Add { word } => gaps.last_mut().expect("non-empty").push(word.clone()),
        }
    }
    let max_gap = gaps.iter().map(Vec::len).max().unwrap_or(0);

    let rounds = (1..=max_gap)
        .map(|round| {
            let mut slots = Vec::new();
            let mut words = Vec::new();
            for gap in &gaps {
                // the anchor (CLS or kept token), then the words already inserted
                let block = 1 + gap.len().min(round - 1);
                slots.extend(std::iter::repeat_n(AddTag::Keep, block));
                if gap.len() >= round {
                    *slots.last_mut().expect("block is non-empty") = AddTag::Add;
                    words.push(gap[round - 1].clone());
                }
            }
            OracleRound { slots, words }
        })
        .collect();

    OraclePolicy { del, rounds, max_gap }
}

impl Policy for OraclePolicy {
    fn tag_del(&self, _: &EditContext<'_>, tokens: &TokenSeq) -> Result<Vec<DelTag>, PolicyError> {
        if tokens.len() != self.del.len() {
            return Err(PolicyError(format!(
                "oracle built for {} reference tokens, got {}",
                self.del.len(),
                tokens.len()
            )));
        }
        Ok(self.del.clone())
    }

    fn tag_add(&self, ctx: &EditContext<'_>, tokens: &TokenSeq) -> Result<Vec<AddTag>, PolicyError> {
        self.slots_for(ctx.round, tokens.len())
    }

    fn insert(&self, ctx: &EditContext<'_>, masked: &MaskedSeq) -> Result<Vec<String>, PolicyError> {
        match self.rounds.get(ctx.round.wrapping_sub(1)) {
            Some(r) if r.words.len() == masked.mask_count() => Ok(r.words.clone()),
            _ => Err(PolicyError(format!(
                "oracle has no insertion schedule for round {} with {} masks",
                ctx.round,
                masked.mask_count()
            ))),
        }
    }
}

/// One supervised example for a single editing stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub stage: Stage,
    /// Input sequence. Add-tagger inputs start with `[CLS]`; inserter inputs
    /// contain `[MASK]` placeholders.
    pub tokens: Vec<String>,
    /// One label per input token for the taggers, one `ADD` per mask for the
    /// inserter.
    pub labels: Vec<String>,
    pub weights: Vec<f64>,
    /// Words the inserter should produce, one per mask.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub targets: Option<Vec<String>>,
    pub round: usize,
}

/// Expands an instance into per-round training samples following the oracle
/// schedule: one deletion sample, then an add-tagger and an inserter sample
/// for every round that inserts words. An instance with nothing to insert
/// yields a single all-`KEEP` add-tagger sample instead.
pub fn expand_instance(inst: &EceInstance, cfg: &ExpansionConfig) -> Vec<TrainingSample> {
    expand_pair(&inst.ref_cap, &inst.gt_cap, cfg)
}

pub fn expand_pair(reference: &TokenSeq, target: &TokenSeq, cfg: &ExpansionConfig) -> Vec<TrainingSample> {
    let oracle = oracle_policy(reference, target);
    let mut samples = Vec::with_capacity(1 + 2 * oracle.max_gap());
    samples.push(TrainingSample {
        stage: Stage::TaggerDel,
        tokens: reference.tokens().to_vec(),
        labels: oracle.del.iter().map(|t| t.label().to_string()).collect(),
        weights: oracle.del.iter().map(|t| cfg.weight(*t == DelTag::Keep)).collect(),
        targets: None,
        round: 1,
    });

    let mut current = apply_del_tags(reference, &oracle.del).expect("oracle deletions fit the reference");
    let add_rounds = oracle.rounds.len().min(cfg.max_rounds);
    if add_rounds == 0 {
        samples.push(add_sample(&current, &vec![AddTag::Keep; current.len() + 1], 1, cfg));
        return samples;
    }
    for (i, round) in oracle.rounds.iter().take(add_rounds).enumerate() {
        let r = i + 1;
        samples.push(add_sample(&current, &round.slots, r, cfg));
        let masked = place_masks(&current, &round.slots).expect("oracle slots fit the sentence");
        samples.push(TrainingSample {
            stage: Stage::Inserter,
            tokens: masked.to_strings(),
            labels: vec![AddTag::Add.label().to_string(); round.words.len()],
            weights: vec![1.0; round.words.len()],
            targets: Some(round.words.clone()),
            round: r,
        });
        current = fill_masks(&masked, &round.words).expect("oracle words fill the masks");
    }
    samples
}

fn add_sample(current: &TokenSeq, slots: &[AddTag], round: usize, cfg: &ExpansionConfig) -> TrainingSample {
    let tokens = std::iter::once(CLS_TOKEN.to_string())
        .chain(current.iter().cloned())
        .collect();
    TrainingSample {
        stage: Stage::TaggerAdd,
        tokens,
        labels: slots.iter().map(|t| t.label().to_string()).collect(),
        weights: slots.iter().map(|t| cfg.weight(*t == AddTag::Keep)).collect(),
        targets: None,
        round,
    }
}
