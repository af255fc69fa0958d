//! Word-level captions and minimal KEEP/DELETE/ADD edit scripts.
//!
//! A script is read left to right against the source caption: `KEEP` copies
//! the next source token, `DELETE` skips it and `ADD` emits its word without
//! consuming anything. Minimal scripts are derived from a suffix LCS table,
//! so the number of non-`KEEP` operations is always
//! `len(src) + len(dst) - 2 * LCS(src, dst)`.

use std::fmt;

use serde::de::Deserializer;
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Punctuation split off the end of a word by [`tokenize`].
const TERMINAL_PUNCT: [char; 4] = ['.', ',', '!', '?'];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TokenError {
    #[error("empty token at position {0}")]
    Empty(usize),
    #[error("token {0:?} contains whitespace")]
    Whitespace(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScriptError {
    #[error("script consumes {script} source tokens but the source has {source_len}")]
    LengthMismatch { script: usize, source_len: usize },
}

/// A caption as an ordered list of word tokens.
///
/// Serializes as the tokens joined by single spaces and deserializes through
/// [`tokenize`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TokenSeq(Vec<String>);

impl TokenSeq {
    /// Builds a sequence from already-split tokens, checking that none is
    /// empty or contains whitespace.
    pub fn new<I, S>(tokens: I) -> Result<Self, TokenError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() {
                return Err(TokenError::Empty(i));
            }
            if t.chars().any(char::is_whitespace) {
                return Err(TokenError::Whitespace(t.clone()));
            }
        }
        Ok(Self(tokens))
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, String> {
        self.0.iter()
    }

    pub fn into_inner(self) -> Vec<String> {
        self.0
    }

    // Callers guarantee the token invariants.
    pub(crate) fn from_trusted(tokens: Vec<String>) -> Self {
        Self(tokens)
    }
}

impl fmt::Display for TokenSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join(" "))
    }
}

impl std::ops::Index<usize> for TokenSeq {
    type Output = String;

    fn index(&self, i: usize) -> &String {
        &self.0[i]
    }
}

impl<'a> IntoIterator for &'a TokenSeq {
    type Item = &'a String;
    type IntoIter = std::slice::Iter<'a, String>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

impl Serialize for TokenSeq {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TokenSeq {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        Ok(tokenize(&text))
    }
}

/// Lowercases `text`, splits it on whitespace and detaches trailing
/// `. , ! ?` characters as tokens of their own.
pub fn tokenize(text: &str) -> TokenSeq {
    let mut tokens = Vec::new();
    for chunk in text.split_whitespace() {
        let lower = chunk.to_lowercase();
        let word = lower.trim_end_matches(TERMINAL_PUNCT);
        if !word.is_empty() {
            tokens.push(word.to_string());
        }
        tokens.extend(lower[word.len()..].chars().map(String::from));
    }
    TokenSeq(tokens)
}

/// One atomic edit operation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "UPPERCASE")]
pub enum EditOp {
    Keep,
    Delete,
    Add { word: String },
}

impl EditOp {
    pub fn add(word: impl Into<String>) -> Self {
        EditOp::Add { word: word.into() }
    }

    /// Whether the operation consumes a source token.
    pub fn consumes(&self) -> bool {
        matches!(self, EditOp::Keep | EditOp::Delete)
    }

    pub fn is_keep(&self) -> bool {
        matches!(self, EditOp::Keep)
    }
}

impl fmt::Display for EditOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EditOp::Keep => f.write_str("KEEP"),
            EditOp::Delete => f.write_str("DELETE"),
            EditOp::Add { word } => write!(f, "ADD_{word}"),
        }
    }
}

/// An ordered script of edit operations over a source of `source_len` tokens.
///
/// Serialized as the bare JSON array of operations.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct EditScript {
    ops: Vec<EditOp>,
    source_len: usize,
}

impl EditScript {
    pub fn new(ops: Vec<EditOp>) -> Self {
        let source_len = ops.iter().filter(|op| op.consumes()).count();
        Self { ops, source_len }
    }

    pub fn ops(&self) -> &[EditOp] {
        &self.ops
    }

    pub fn source_len(&self) -> usize {
        self.source_len
    }

    pub fn keeps(&self) -> usize {
        self.ops.iter().filter(|op| op.is_keep()).count()
    }

    pub fn deletes(&self) -> usize {
        self.ops.iter().filter(|op| matches!(op, EditOp::Delete)).count()
    }

    pub fn adds(&self) -> usize {
        self.ops.iter().filter(|op| matches!(op, EditOp::Add { .. })).count()
    }

    /// Number of non-`KEEP` operations.
    pub fn steps(&self) -> usize {
        self.ops.len() - self.keeps()
    }
}

impl fmt::Display for EditScript {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, op) in self.ops.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{op}")?;
        }
        Ok(())
    }
}

impl Serialize for EditScript {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.ops.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for EditScript {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        Vec::<EditOp>::deserialize(deserializer).map(EditScript::new)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EditDistance(pub usize);

impl EditDistance {
    pub fn steps(self) -> usize {
        self.0
    }
}

impl fmt::Display for EditDistance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// `table[i][j]` = LCS length of `a[i..]` and `b[j..]`, stored row-major
/// with stride `b.len() + 1`.
fn suffix_lcs_table<T: PartialEq>(a: &[T], b: &[T]) -> Vec<u32> {
    let width = b.len() + 1;
    let mut table = vec![0u32; (a.len() + 1) * width];
    for i in (0..a.len()).rev() {
        for j in (0..b.len()).rev() {
            table[i * width + j] = if a[i] == b[j] {
                table[(i + 1) * width + j + 1] + 1
            } else {
                table[(i + 1) * width + j].max(table[i * width + j + 1])
            };
        }
    }
    table
}

/// Derives the canonical minimal script turning `src` into `dst`.
///
/// Walking forward from the first tokens, a matching pair is kept whenever
/// keeping it stays on an optimal path, otherwise a deletion is preferred
/// over an addition. Within each gap between kept tokens this puts every
/// `DELETE` before the `ADD` run, and each kept source token is matched to
/// the earliest usable target occurrence.
pub fn min_edit_script(src: &TokenSeq, dst: &TokenSeq) -> EditScript {
    let (a, b) = (src.tokens(), dst.tokens());
    let width = b.len() + 1;
    let table = suffix_lcs_table(a, b);
    let lcs = |i: usize, j: usize| table[i * width + j];

    let mut ops = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        if i < a.len() && j < b.len() && a[i] == b[j] && lcs(i, j) == lcs(i + 1, j + 1) + 1 {
            ops.push(EditOp::Keep);
            i += 1;
            j += 1;
        } else if i < a.len() && lcs(i + 1, j) == lcs(i, j) {
            ops.push(EditOp::Delete);
            i += 1;
        } else {
            ops.push(EditOp::add(b[j].clone()));
            j += 1;
        }
    }
    EditScript { ops, source_len: a.len() }
}

/// Evaluates `script` against `src` left to right.
pub fn apply_script(src: &TokenSeq, script: &EditScript) -> Result<TokenSeq, ScriptError> {
    if script.source_len != src.len() {
        return Err(ScriptError::LengthMismatch {
            script: script.source_len,
            source_len: src.len(),
        });
    }
    let mut source = src.iter();
    let mut out = Vec::with_capacity(src.len() + script.adds());
    for op in &script.ops {
        match op {
            // source_len matches, so the iterator cannot run dry
            EditOp::Keep => out.extend(source.next().cloned()),
            EditOp::Delete => {
                source.next();
            }
            EditOp::Add { word } => out.push(word.clone()),
        }
    }
    Ok(TokenSeq(out))
}

/// Minimum number of DELETE and ADD operations turning `a` into `b`.
pub fn edit_distance(a: &TokenSeq, b: &TokenSeq) -> EditDistance {
    EditDistance(a.len() + b.len() - 2 * lcs_len(a.tokens(), b.tokens()))
}

/// Longest common subsequence length with O(min(m, n)) memory.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    let mut prev = vec![0usize; short.len() + 1];
    let mut curr = vec![0usize; short.len() + 1];
    for x in long {
        for (j, y) in short.iter().enumerate() {
            curr[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(curr[j])
            };
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[short.len()]
}
