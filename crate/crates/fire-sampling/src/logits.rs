//! Exact, composable transforms from a raw logit vector to a normalized
//! sampling distribution.
//!
//! The normative pipeline order is temperature → top-k → softmax → top-p →
//! min-p. Masked-out tokens are tracked with an explicit mask rather than a
//! sentinel float so the arithmetic stays NaN-free, and softmax always
//! subtracts the running maximum before exponentiating.
//!
//! Tie-breaking at the top-k and top-p boundaries keeps the lower token
//! index; tokens sitting exactly on the min-p threshold are kept. Filters
//! renormalize only when they actually removed mass, so a no-op filter is a
//! bitwise no-op.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative tolerance for checking that a probability vector sums to one.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("temperature must be positive and finite, got {0}")]
    Temperature(f64),
    #[error("top-k must be at least 1 when enabled")]
    TopK,
    #[error("top-p must lie in (0, 1], got {0}")]
    TopP(f64),
    #[error("min-p must lie in [0, 1), got {0}")]
    MinP(f64),
    #[error("logit vector must be non-empty")]
    EmptyLogits,
    #[error("logit at index {0} is not finite")]
    NonFiniteLogit(usize),
    #[error("invalid probability vector: {0}")]
    BadDistribution(String),
}

/// Raw unnormalized scores over a vocabulary for one decoding step.
///
/// Every entry is finite; filtered-out tokens are tracked by the mask, not
/// by overwriting scores with a sentinel.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitVector {
    scores: Vec<f64>,
    masked: Vec<bool>,
}

impl LogitVector {
    /// Build a logit vector with all tokens active.
    pub fn new(scores: Vec<f64>) -> Result<Self, ConfigError> {
        if scores.is_empty() {
            return Err(ConfigError::EmptyLogits);
        }
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(ConfigError::NonFiniteLogit(i));
        }
        let masked = vec![false; scores.len()];
        Ok(Self { scores, masked })
    }

    /// Build a logit vector with an explicit mask (`true` = excluded).
    /// At least one token must remain active.
    pub fn with_mask(scores: Vec<f64>, masked: Vec<bool>) -> Result<Self, ConfigError> {
        if scores.is_empty() || scores.len() != masked.len() {
            return Err(ConfigError::EmptyLogits);
        }
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(ConfigError::NonFiniteLogit(i));
        }
        if masked.iter().all(|&m| m) {
            return Err(ConfigError::BadDistribution(
                "all tokens masked".to_string(),
            ));
        }
        Ok(Self { scores, masked })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn score(&self, index: usize) -> f64 {
        self.scores[index]
    }

    pub fn is_masked(&self, index: usize) -> bool {
        self.masked[index]
    }

    /// Indices still in play, ascending.
    pub fn active(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&i| !self.masked[i])
    }

    pub fn active_count(&self) -> usize {
        self.masked.iter().filter(|&&m| !m).count()
    }
}

/// One stage's transform parameters.
///
/// `top_k`/`top_p` are `None` when disabled; `min_p == 0.0` means min-p is
/// not used.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    pub temperature: f64,
    pub top_k: Option<usize>,
    pub top_p: Option<f64>,
    pub min_p: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            top_k: None,
            top_p: None,
            min_p: 0.0,
        }
    }
}

impl SamplingConfig {
    pub fn new(temperature: f64) -> Self {
        Self {
            temperature,
            ..Self::default()
        }
    }

    pub fn with_top_k(mut self, k: usize) -> Self {
        self.top_k = Some(k);
        self
    }

    pub fn with_top_p(mut self, p: f64) -> Self {
        self.top_p = Some(p);
        self
    }

    pub fn with_min_p(mut self, min_p: f64) -> Self {
        self.min_p = min_p;
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(ConfigError::Temperature(self.temperature));
        }
        if self.top_k == Some(0) {
            return Err(ConfigError::TopK);
        }
        if let Some(p) = self.top_p {
            if !(p.is_finite() && p > 0.0 && p <= 1.0) {
                return Err(ConfigError::TopP(p));
            }
        }
        if !(self.min_p.is_finite() && (0.0..1.0).contains(&self.min_p)) {
            return Err(ConfigError::MinP(self.min_p));
        }
        Ok(())
    }
}

/// A normalized sampling distribution over the vocabulary.
///
/// Probabilities sum to 1 within [`NORMALIZATION_TOLERANCE`], every entry is
/// non-negative, and the support is non-empty. Equality is bitwise, which is
/// what the determinism contracts assert on.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    probs: Vec<f64>,
}

impl Distribution {
    pub fn from_probs(probs: Vec<f64>) -> Result<Self, ConfigError> {
        if probs.is_empty() {
            return Err(ConfigError::BadDistribution("empty".to_string()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(ConfigError::BadDistribution(
                "negative or non-finite entry".to_string(),
            ));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(ConfigError::BadDistribution(format!(
                "probabilities sum to {sum}, not 1"
            )));
        }
        if !probs.iter().any(|&p| p > 0.0) {
            return Err(ConfigError::BadDistribution("empty support".to_string()));
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, index: usize) -> f64 {
        self.probs[index]
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Token indices with positive probability, ascending.
    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.probs
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(i, _)| i)
    }

    pub fn support_len(&self) -> usize {
        self.probs.iter().filter(|&&p| p > 0.0).count()
    }
}

/// Divide every logit by `temperature`. Monotone, so ranking is preserved.
pub fn apply_temperature(logits: &LogitVector, temperature: f64) -> Result<LogitVector, ConfigError> {
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(ConfigError::Temperature(temperature));
    }
    let scores = logits.scores.iter().map(|s| s / temperature).collect();
    Ok(LogitVector {
        scores,
        masked: logits.masked.clone(),
    })
}

/// Keep the `k` highest-logit active tokens, masking the rest. Ties at the
/// k-th position are broken in favor of the lower token index. `k` at or
/// above the active count is a no-op.
pub fn top_k_filter(logits: &LogitVector, k: usize) -> Result<LogitVector, ConfigError> {
    if k == 0 {
        return Err(ConfigError::TopK);
    }
    if k >= logits.active_count() {
        return Ok(logits.clone());
    }
    let mut order: Vec<usize> = logits.active().collect();
    order.sort_by(|&a, &b| {
        logits.scores[b]
            .total_cmp(&logits.scores[a])
            .then(a.cmp(&b))
    });
    let mut masked = vec![true; logits.len()];
    for &i in order.iter().take(k) {
        masked[i] = false;
    }
    Ok(LogitVector {
        scores: logits.scores.clone(),
        masked,
    })
}

/// Numerically stable softmax over the active tokens. Masked tokens get
/// probability zero.
pub fn softmax(logits: &LogitVector) -> Distribution {
    let max = logits
        .active()
        .map(|i| logits.scores[i])
        .fold(f64::NEG_INFINITY, f64::max);
    let mut probs = vec![0.0; logits.len()];
    let mut sum = 0.0;
    for i in logits.active() {
        let e = (logits.scores[i] - max).exp();
        probs[i] = e;
        sum += e;
    }
    for p in &mut probs {
        *p /= sum;
    }
    Distribution { probs }
}

/// Nucleus filter: keep the smallest prefix of tokens, in descending
/// probability order (ascending index among ties), whose cumulative
/// probability reaches `p`, then renormalize. `p = 1` keeps the full
/// support untouched.
pub fn top_p_filter(dist: &Distribution, p: f64) -> Result<Distribution, ConfigError> {
    if !(p.is_finite() && p > 0.0 && p <= 1.0) {
        return Err(ConfigError::TopP(p));
    }
    let mut order: Vec<usize> = dist.support().collect();
    order.sort_by(|&a, &b| dist.probs[b].total_cmp(&dist.probs[a]).then(a.cmp(&b)));
    let mut kept = Vec::with_capacity(order.len());
    let mut cumulative = 0.0;
    for &i in &order {
        kept.push(i);
        cumulative += dist.probs[i];
        if cumulative >= p {
            break;
        }
    }
    if kept.len() == order.len() {
        return Ok(dist.clone());
    }
    Ok(renormalize(dist, &kept))
}

/// Drop tokens whose probability falls strictly below `min_p` times the
/// maximum probability, then renormalize. Tokens exactly at the threshold
/// are kept; `min_p = 0` is a bitwise no-op.
pub fn min_p_filter(dist: &Distribution, min_p: f64) -> Result<Distribution, ConfigError> {
    if !(min_p.is_finite() && (0.0..1.0).contains(&min_p)) {
        return Err(ConfigError::MinP(min_p));
    }
    if min_p == 0.0 {
        return Ok(dist.clone());
    }
    let max = dist.probs.iter().copied().fold(0.0, f64::max);
    let threshold = min_p * max;
    let kept: Vec<usize> = dist.support().filter(|&i| dist.probs[i] >= threshold).collect();
    if kept.len() == dist.support_len() {
        return Ok(dist.clone());
    }
    Ok(renormalize(dist, &kept))
}

fn renormalize(dist: &Distribution, kept: &[usize]) -> Distribution {
    let sum: f64 = kept.iter().map(|&i| dist.probs[i]).sum();
    let mut probs = vec![0.0; dist.len()];
    for &i in kept {
        probs[i] = dist.probs[i] / sum;
    }
    Distribution { probs }
}

/// Run the full pipeline: temperature → top-k → softmax → top-p → min-p.
///
/// The result is always a valid distribution: top-k keeps at least one
/// token, top-p keeps at least one token, and min-p always keeps the
/// highest-probability token.
pub fn build_distribution(
    logits: &LogitVector,
    config: &SamplingConfig,
) -> Result<Distribution, ConfigError> {
    config.validate()?;
    let tempered = apply_temperature(logits, config.temperature)?;
    let filtered = match config.top_k {
        Some(k) => top_k_filter(&tempered, k)?,
        None => tempered,
    };
    let mut dist = softmax(&filtered);
    if let Some(p) = config.top_p {
        dist = top_p_filter(&dist, p)?;
    }
    dist = min_p_filter(&dist, config.min_p)?;
    debug_assert!(dist.support_len() > 0);
    Ok(dist)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lv(scores: &[f64]) -> LogitVector {
        LogitVector::new(scores.to_vec()).unwrap()
    }

    fn dist(probs: &[f64]) -> Distribution {
        Distribution::from_probs(probs.to_vec()).unwrap()
    }

    #[test]
    fn temperature_identity() {
        let out = apply_temperature(&lv(&[2.0, 1.0]), 1.0).unwrap();
        assert_eq!(out.scores, vec![2.0, 1.0]);
    }

    #[test]
    fn temperature_divides() {
        let out = apply_temperature(&lv(&[2.0, 1.0]), 2.0).unwrap();
        assert_eq!(out.scores, vec![1.0, 0.5]);
    }

    #[test]
    fn temperature_thirty_near_uniform() {
        // softmax([0.1, 0, -0.1]) lands within 0.034 of uniform in max-norm.
        let out = apply_temperature(&lv(&[3.0, 0.0, -3.0]), 30.0).unwrap();
        let probs = softmax(&out);
        let expected = {
            let es = [0.1f64.exp(), 1.0, (-0.1f64).exp()];
            let z: f64 = es.iter().sum();
            [es[0] / z, es[1] / z, es[2] / z]
        };
        for (p, e) in probs.probs().iter().zip(expected.iter()) {
            assert!((p - e).abs() < 1e-15);
        }
        let max_norm = probs
            .probs()
            .iter()
            .map(|p| (p - 1.0 / 3.0).abs())
            .fold(0.0, f64::max);
        assert!(max_norm < 0.034, "max-norm distance {max_norm}");
    }

    #[test]
    fn temperature_rejects_bad_values() {
        for t in [0.0, -1.0, f64::NAN, f64::INFINITY] {
            assert!(apply_temperature(&lv(&[1.0]), t).is_err());
        }
    }

    #[test]
    fn top_k_keeps_highest() {
        let out = top_k_filter(&lv(&[2.0, 1.0, 0.0, -1.0]), 2).unwrap();
        assert_eq!(out.active().collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn top_k_full_width_is_noop() {
        let input = lv(&[5.0, 5.0, 5.0]);
        let out = top_k_filter(&input, 3).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn top_k_tie_breaks_to_lower_index() {
        let out = top_k_filter(&lv(&[1.0, 1.0, 0.0]), 1).unwrap();
        assert_eq!(out.active().collect::<Vec<_>>(), vec![0]);
    }

    #[test]
    fn top_k_zero_is_error() {
        assert_eq!(top_k_filter(&lv(&[1.0]), 0), Err(ConfigError::TopK));
    }

    #[test]
    fn top_p_truncates_and_renormalizes() {
        // cumulative 0.5 < 0.7 <= 0.8, so tokens 0 and 1 survive.
        let out = top_p_filter(&dist(&[0.5, 0.3, 0.2]), 0.7).unwrap();
        assert_eq!(out.support().collect::<Vec<_>>(), vec![0, 1]);
        assert!((out.prob(0) - 0.625).abs() < 1e-15);
        assert!((out.prob(1) - 0.375).abs() < 1e-15);
        assert_eq!(out.prob(2), 0.0);
    }

    #[test]
    fn top_p_one_keeps_everything() {
        let input = dist(&[0.5, 0.3, 0.2]);
        let out = top_p_filter(&input, 1.0).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn top_p_first_token_covers() {
        let out = top_p_filter(&dist(&[0.9, 0.1]), 0.5).unwrap();
        assert_eq!(out.probs(), &[1.0, 0.0]);
    }

    #[test]
    fn top_p_rejects_out_of_range() {
        let d = dist(&[1.0]);
        assert!(top_p_filter(&d, 0.0).is_err());
        assert!(top_p_filter(&d, 1.5).is_err());
        assert!(top_p_filter(&d, -0.2).is_err());
    }

    #[test]
    fn min_p_boundary_token_kept() {
        // threshold = 0.1 * 0.5 = 0.05 and the 0.05 entry sits exactly on it.
        let input = dist(&[0.5, 0.3, 0.15, 0.05]);
        let out = min_p_filter(&input, 0.1).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn min_p_zero_is_bitwise_noop() {
        let input = dist(&[0.6, 0.3, 0.1]);
        let out = min_p_filter(&input, 0.0).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn min_p_filters_below_threshold() {
        // threshold = 0.2 * 0.8 = 0.16; only the 0.8 entry survives.
        let out = min_p_filter(&dist(&[0.8, 0.15, 0.05]), 0.2).unwrap();
        assert_eq!(out.probs(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn min_p_rejects_out_of_range() {
        let d = dist(&[1.0]);
        assert!(min_p_filter(&d, 1.0).is_err());
        assert!(min_p_filter(&d, -0.1).is_err());
    }

    #[test]
    fn build_uniform_on_equal_logits() {
        let out = build_distribution(&lv(&[0.0; 4]), &SamplingConfig::default()).unwrap();
        for &p in out.probs() {
            assert!((p - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn build_top_k_two_matches_pair_softmax() {
        let cfg = SamplingConfig::new(1.0).with_top_k(2).with_top_p(1.0);
        let out = build_distribution(&lv(&[10.0, 0.0, 0.0]), &cfg).unwrap();
        assert_eq!(out.support().collect::<Vec<_>>(), vec![0, 1]);
        let expected = 1.0 / (1.0 + (-10.0f64).exp());
        assert!((out.prob(0) - expected).abs() < 1e-15);
        assert!((out.prob(1) - (1.0 - expected)).abs() < 1e-15);
    }

    #[test]
    fn build_equal_logits_tie_rule() {
        let cfg = SamplingConfig::new(30.0).with_top_k(4).with_top_p(1.0);
        let out = build_distribution(&lv(&[1.0; 6]), &cfg).unwrap();
        assert_eq!(out.support().collect::<Vec<_>>(), vec![0, 1, 2, 3]);
        for i in 0..4 {
            assert!((out.prob(i) - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn logit_vector_rejects_non_finite() {
        assert!(LogitVector::new(vec![1.0, f64::NAN]).is_err());
        assert!(LogitVector::new(vec![]).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(SamplingConfig::new(1.0).validate().is_ok());
        assert!(SamplingConfig::new(0.0).validate().is_err());
        assert!(SamplingConfig::new(1.0).with_top_k(0).validate().is_err());
        assert!(SamplingConfig::new(1.0).with_top_p(0.0).validate().is_err());
        assert!(SamplingConfig::new(1.0).with_min_p(1.0).validate().is_err());
    }

    /// Plain softmax written independently of the pipeline types.
    fn naive_softmax(scores: &[f64]) -> Vec<f64> {
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        exps.iter().map(|e| e / z).collect()
    }

    fn logits_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-20.0f64..20.0, 1..64)
    }

    proptest! {
        #[test]
        fn identity_config_equals_plain_softmax(scores in logits_strategy()) {
            let out = build_distribution(&lv(&scores), &SamplingConfig::default()).unwrap();
            let expected = naive_softmax(&scores);
            for (p, e) in out.probs().iter().zip(expected.iter()) {
                prop_assert!((p - e).abs() <= 1e-12);
            }
        }

        #[test]
        fn uniform_limit_bound(
            scores in prop::collection::vec(0.0f64..10.0, 2..64),
            k in 1usize..64,
        ) {
            // Spread <= 10 at T = 1000 keeps the top-k distribution within
            // e^(B/T) - 1 < 0.011 of uniform in max-norm.
            let cfg = SamplingConfig::new(1000.0).with_top_k(k);
            let out = build_distribution(&lv(&scores), &cfg).unwrap();
            let support = out.support_len() as f64;
            let bound = (10.0f64 / 1000.0).exp() - 1.0;
            for i in out.support() {
                prop_assert!((out.prob(i) - 1.0 / support).abs() <= bound);
                prop_assert!((out.prob(i) - 1.0 / support).abs() < 0.011);
            }
        }

        #[test]
        fn always_normalized(
            scores in logits_strategy(),
            t in 0.25f64..50.0,
            k in prop::option::of(1usize..64),
            p in prop::option::of(0.05f64..1.0),
            mp in 0.0f64..0.9,
        ) {
            let cfg = SamplingConfig { temperature: t, top_k: k, top_p: p, min_p: mp };
            let out = build_distribution(&lv(&scores), &cfg).unwrap();
            let sum: f64 = out.probs().iter().sum();
            prop_assert!((sum - 1.0).abs() <= NORMALIZATION_TOLERANCE);
            prop_assert!(out.support_len() > 0);
            prop_assert!(out.probs().iter().all(|&p| p >= 0.0));
        }

        #[test]
        fn temperature_preserves_ranking(scores in logits_strategy(), t in 0.01f64..100.0) {
            let before = lv(&scores);
            let after = apply_temperature(&before, t).unwrap();
            for i in 0..scores.len() {
                for j in 0..scores.len() {
                    let ord_before = before.score(i).total_cmp(&before.score(j));
                    let ord_after = after.score(i).total_cmp(&after.score(j));
                    prop_assert_eq!(ord_before, ord_after);
                }
            }
        }

        #[test]
        fn top_k_support_monotone(scores in logits_strategy(), k1 in 1usize..32, extra in 0usize..32) {
            let k2 = k1 + extra;
            let s1: Vec<usize> = top_k_filter(&lv(&scores), k1).unwrap().active().collect();
            let s2: Vec<usize> = top_k_filter(&lv(&scores), k2).unwrap().active().collect();
            for i in &s1 {
                prop_assert!(s2.contains(i));
            }
        }

        #[test]
        fn top_p_support_monotone(scores in logits_strategy(), p1 in 0.05f64..1.0, p2 in 0.05f64..1.0) {
            let (lo, hi) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
            let base = softmax(&lv(&scores));
            let s1: Vec<usize> = top_p_filter(&base, lo).unwrap().support().collect();
            let s2: Vec<usize> = top_p_filter(&base, hi).unwrap().support().collect();
            for i in &s1 {
                prop_assert!(s2.contains(i));
            }
        }

        #[test]
        fn pipeline_is_deterministic(
            scores in logits_strategy(),
            t in 0.25f64..50.0,
            k in prop::option::of(1usize..64),
        ) {
            let cfg = SamplingConfig { temperature: t, top_k: k, top_p: Some(0.95), min_p: 0.05 };
            let a = build_distribution(&lv(&scores), &cfg).unwrap();
            let b = build_distribution(&lv(&scores), &cfg).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
