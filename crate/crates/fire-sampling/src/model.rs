//! Deterministic model sources that feed the decode loop.
//!
//! A [`ModelSource`] maps a token context to a logit vector; the same
//! context always yields the same logits. Two local sources live here: an
//! explicit [`TableModel`] (the exact oracle substrate for tests) and an
//! additive-smoothed [`NGramModel`] (a desk-scale stand-in for a language
//! model). The HTTP-backed source is in [`crate::remote`].

use crate::logits::{ConfigError, LogitVector};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

pub type TokenId = usize;

/// Conventional end-of-sequence token string for local models.
pub const END_TOKEN_TEXT: &str = "</s>";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unknown token {0:?} in prompt")]
    UnknownToken(String),
    #[error("invalid model definition: {0}")]
    InvalidDefinition(String),
    #[error("model produced invalid logits: {0}")]
    InvalidLogits(#[from] ConfigError),
    #[error("remote model request failed after {attempts} attempt(s): {message}")]
    Remote { attempts: u32, message: String },
    #[error("remote model returned a malformed response: {0}")]
    InvalidResponse(String),
}

impl ModelError {
    /// Transport-level remote failures are worth retrying; everything else
    /// is a hard error.
    pub fn is_retriable(&self) -> bool {
        matches!(self, ModelError::Remote { .. })
    }
}

/// Token list with string rendering.
///
/// `separator` is inserted between tokens when rendering ("" for char-level
/// vocabularies, " " for word-level ones). The end token renders as empty.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    separator: String,
    #[serde(skip)]
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    pub fn new<S: Into<String>>(tokens: Vec<S>, separator: &str) -> Self {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self {
            tokens,
            separator: separator.to_string(),
            index,
        }
    }

    /// Rebuild the string-to-id index after deserialization.
    pub fn reindex(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn id_of(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn separator(&self) -> &str {
        &self.separator
    }

    /// Join token strings with the separator, skipping the given end token.
    pub fn render(&self, ids: &[TokenId], end_token: TokenId) -> String {
        let mut out = String::new();
        for &id in ids.iter().filter(|&&id| id != end_token) {
            if !out.is_empty() {
                out.push_str(&self.separator);
            }
            if let Some(tok) = self.token(id) {
                out.push_str(tok);
            }
        }
        out
    }

    /// Split `text` on the separator (or into chars when the separator is
    /// empty) and look up each piece.
    pub fn tokenize(&self, text: &str) -> Result<Vec<TokenId>, ModelError> {
        let pieces: Vec<String> = if self.separator.is_empty() {
            text.chars().map(|c| c.to_string()).collect()
        } else {
            text.split(&self.separator)
                .filter(|p| !p.is_empty())
                .map(str::to_string)
                .collect()
        };
        pieces
            .iter()
            .map(|p| {
                self.id_of(p)
                    .ok_or_else(|| ModelError::UnknownToken(p.clone()))
            })
            .collect()
    }
}

/// A deterministic next-token scorer over a token vocabulary.
///
/// Implementations must be shareable read-only across generation workers.
pub trait ModelSource: Send + Sync {
    /// Logits for the next token given the full context (prompt plus
    /// generated tokens). Same context, same logits.
    fn next_logits(&self, context: &[TokenId]) -> Result<LogitVector, ModelError>;

    /// Render a token sequence as text.
    fn render(&self, tokens: &[TokenId]) -> String;

    /// Convert a prompt string into context tokens.
    fn prompt_tokens(&self, text: &str) -> Result<Vec<TokenId>, ModelError>;

    fn end_token(&self) -> TokenId;

    fn vocab_size(&self) -> usize;
}

/// Explicit map from context to logit vector, total via a fallback row.
#[derive(Debug, Clone)]
pub struct TableModel {
    vocab: Vocabulary,
    end_token: TokenId,
    rows: HashMap<Vec<TokenId>, Vec<f64>>,
    fallback: Vec<f64>,
}

impl TableModel {
    pub fn builder<S: Into<String>>(tokens: Vec<S>, separator: &str) -> TableModelBuilder {
        TableModelBuilder {
            vocab: Vocabulary::new(tokens, separator),
            end_token_text: END_TOKEN_TEXT.to_string(),
            default_logit: -30.0,
            rows: Vec::new(),
            fallback: Vec::new(),
        }
    }

    pub fn from_spec(spec: TableModelSpec) -> Result<Self, ModelError> {
        let mut builder = Self::builder(spec.tokens, &spec.separator);
        builder.end_token_text = spec.end_token;
        builder.default_logit = spec.default_logit;
        for row in spec.rows {
            let entries: Vec<(String, f64)> = row.logits.into_iter().collect();
            builder.rows.push((row.context, entries));
        }
        builder.fallback = spec.fallback.into_iter().collect();
        builder.build()
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn row_for(&self, context: &[TokenId]) -> &[f64] {
        self.rows
            .get(context)
            .map(Vec::as_slice)
            .unwrap_or(&self.fallback)
    }
}

impl ModelSource for TableModel {
    fn next_logits(&self, context: &[TokenId]) -> Result<LogitVector, ModelError> {
        Ok(LogitVector::new(self.row_for(context).to_vec())?)
    }

    fn render(&self, tokens: &[TokenId]) -> String {
        self.vocab.render(tokens, self.end_token)
    }

    fn prompt_tokens(&self, text: &str) -> Result<Vec<TokenId>, ModelError> {
        self.vocab.tokenize(text)
    }

    fn end_token(&self) -> TokenId {
        self.end_token
    }

    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }
}

type RowEntries = Vec<(String, f64)>;

pub struct TableModelBuilder {
    vocab: Vocabulary,
    end_token_text: String,
    default_logit: f64,
    rows: Vec<(Vec<String>, RowEntries)>,
    fallback: RowEntries,
}

impl TableModelBuilder {
    /// Logit assigned to every token a row does not mention.
    pub fn default_logit(mut self, logit: f64) -> Self {
        self.default_logit = logit;
        self
    }

    pub fn end_token(mut self, text: &str) -> Self {
        self.end_token_text = text.to_string();
        self
    }

    /// Add a row: at `context` (token strings), the listed tokens get the
    /// given logits and everything else gets the default.
    pub fn row(mut self, context: &[&str], entries: &[(&str, f64)]) -> Self {
        self.rows.push((
            context.iter().map(|s| s.to_string()).collect(),
            entries.iter().map(|(t, l)| (t.to_string(), *l)).collect(),
        ));
        self
    }

    /// Row used for any context not listed explicitly.
    pub fn fallback(mut self, entries: &[(&str, f64)]) -> Self {
        self.fallback = entries.iter().map(|(t, l)| (t.to_string(), *l)).collect();
        self
    }

    pub fn build(self) -> Result<TableModel, ModelError> {
        let end_token = self.vocab.id_of(&self.end_token_text).ok_or_else(|| {
            ModelError::InvalidDefinition(format!(
                "end token {:?} not in vocabulary",
                self.end_token_text
            ))
        })?;
        let width = self.vocab.len();
        let fill = |entries: &[(String, f64)]| -> Result<Vec<f64>, ModelError> {
            let mut row = vec![self.default_logit; width];
            for (token, logit) in entries {
                if !logit.is_finite() {
                    return Err(ModelError::InvalidDefinition(format!(
                        "non-finite logit for token {token:?}"
                    )));
                }
                let id = self
                    .vocab
                    .id_of(token)
                    .ok_or_else(|| ModelError::UnknownToken(token.clone()))?;
                row[id] = *logit;
            }
            Ok(row)
        };
        let fallback = if self.fallback.is_empty() {
            // Default fallback: end the generation.
            fill(&[(self.end_token_text.clone(), 30.0)])?
        } else {
            fill(&self.fallback)?
        };
        let mut rows = HashMap::new();
        for (context, entries) in &self.rows {
            let ids = context
                .iter()
                .map(|t| {
                    self.vocab
                        .id_of(t)
                        .ok_or_else(|| ModelError::UnknownToken(t.clone()))
                })
                .collect::<Result<Vec<_>, _>>()?;
            rows.insert(ids, fill(entries)?);
        }
        Ok(TableModel {
            vocab: self.vocab,
            end_token,
            rows,
            fallback,
        })
    }
}

/// On-disk form of a [`TableModel`] (the `kind = "table"` model source).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableModelSpec {
    pub separator: String,
    pub tokens: Vec<String>,
    #[serde(default = "default_end_token")]
    pub end_token: String,
    #[serde(default = "default_table_logit")]
    pub default_logit: f64,
    #[serde(default)]
    pub fallback: std::collections::BTreeMap<String, f64>,
    pub rows: Vec<TableRowSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableRowSpec {
    pub context: Vec<String>,
    pub logits: std::collections::BTreeMap<String, f64>,
}

fn default_end_token() -> String {
    END_TOKEN_TEXT.to_string()
}

fn default_table_logit() -> f64 {
    -30.0
}

/// Corpus tokenization mode for the n-gram model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tokenizer {
    Whitespace,
    Char,
}

impl Tokenizer {
    fn split(&self, line: &str) -> Vec<String> {
        match self {
            Tokenizer::Whitespace => line.split_whitespace().map(str::to_string).collect(),
            Tokenizer::Char => line
                .chars()
                .filter(|c| !c.is_control())
                .map(|c| c.to_string())
                .collect(),
        }
    }
}

pub const DEFAULT_NGRAM_ORDER: usize = 3;
pub const DEFAULT_NGRAM_ALPHA: f64 = 0.01;

/// Additive-smoothed n-gram model trained on a text corpus.
///
/// Counts are kept for every context length up to `order - 1`, so the start
/// of a generation backs onto shorter contexts. With smoothing constant
/// `alpha > 0` every token keeps strictly positive probability, which gives
/// the hot stage genuine candidates to spread over:
/// `p(w | ctx) = (count(ctx, w) + alpha) / (count(ctx) + alpha * V)`.
#[derive(Debug, Clone)]
pub struct NGramModel {
    vocab: Vocabulary,
    order: usize,
    alpha: f64,
    end_token: TokenId,
    // counts[len] maps a length-`len` context to next-token counts.
    counts: Vec<HashMap<Vec<TokenId>, HashMap<TokenId, u64>>>,
}

impl NGramModel {
    /// Train from a corpus, one sequence per line. Each line is terminated
    /// by the end token so generations learn to stop.
    pub fn train(
        corpus: &str,
        order: usize,
        alpha: f64,
        tokenizer: Tokenizer,
    ) -> Result<Self, ModelError> {
        if !(2..=5).contains(&order) {
            return Err(ModelError::InvalidDefinition(format!(
                "n-gram order must be in 2..=5, got {order}"
            )));
        }
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(ModelError::InvalidDefinition(format!(
                "smoothing alpha must be positive, got {alpha}"
            )));
        }
        let mut token_set: Vec<String> = Vec::new();
        let mut seen = HashMap::new();
        let mut lines: Vec<Vec<String>> = Vec::new();
        for line in corpus.lines() {
            let toks = tokenizer.split(line);
            if toks.is_empty() {
                continue;
            }
            for t in &toks {
                if !seen.contains_key(t) {
                    seen.insert(t.clone(), true);
                    token_set.push(t.clone());
                }
            }
            lines.push(toks);
        }
        if lines.is_empty() {
            return Err(ModelError::InvalidDefinition(
                "corpus contains no tokens".to_string(),
            ));
        }
        token_set.push(END_TOKEN_TEXT.to_string());
        let separator = match tokenizer {
            Tokenizer::Whitespace => " ",
            Tokenizer::Char => "",
        };
        let vocab = Vocabulary::new(token_set, separator);
        let end_token = vocab.id_of(END_TOKEN_TEXT).unwrap();

        let mut counts: Vec<HashMap<Vec<TokenId>, HashMap<TokenId, u64>>> =
            vec![HashMap::new(); order];
        for line in &lines {
            let mut ids: Vec<TokenId> = line.iter().map(|t| vocab.id_of(t).unwrap()).collect();
            ids.push(end_token);
            for i in 0..ids.len() {
                for len in 0..order.min(i + 1) {
                    let context = ids[i - len..i].to_vec();
                    *counts[len]
                        .entry(context)
                        .or_default()
                        .entry(ids[i])
                        .or_insert(0) += 1;
                }
            }
        }
        Ok(Self {
            vocab,
            order,
            alpha,
            end_token,
            counts,
        })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Smoothed next-token probabilities for a context.
    pub fn next_probs(&self, context: &[TokenId]) -> Vec<f64> {
        let len = (self.order - 1).min(context.len());
        let key = &context[context.len() - len..];
        let empty = HashMap::new();
        let row = self.counts[len].get(key).unwrap_or(&empty);
        let total: u64 = row.values().sum();
        let v = self.vocab.len() as f64;
        let denom = total as f64 + self.alpha * v;
        (0..self.vocab.len())
            .map(|id| (row.get(&id).copied().unwrap_or(0) as f64 + self.alpha) / denom)
            .collect()
    }
}

impl ModelSource for NGramModel {
    fn next_logits(&self, context: &[TokenId]) -> Result<LogitVector, ModelError> {
        let logits = self.next_probs(context).iter().map(|p| p.ln()).collect();
        Ok(LogitVector::new(logits)?)
    }

    fn render(&self, tokens: &[TokenId]) -> String {
        self.vocab.render(tokens, self.end_token)
    }

    fn prompt_tokens(&self, text: &str) -> Result<Vec<TokenId>, ModelError> {
        self.vocab.tokenize(text)
    }

    fn end_token(&self) -> TokenId {
        self.end_token
    }

    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }
}
