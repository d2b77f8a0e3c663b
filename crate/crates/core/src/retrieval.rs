//! Object retrieval: global cosine similarity over `[CLS]`-style embeddings,
//! re-ranked among the Top-K candidates by the fraction of confident local
//! matches.

use std::cmp::Ordering;

use nalgebra::Point2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Correspondence;

/// Paper defaults: σ = 0.9, K = 3.
pub const DEFAULT_SIGMA: f64 = 0.9;
pub const DEFAULT_TOP_K: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RetrievalError {
    #[error("embedding is empty")]
    EmptyEmbedding,
    #[error("embedding has non-finite entries")]
    NonFinite,
    #[error("embedding has zero norm")]
    Degenerate,
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{0} list is empty")]
    EmptyList(&'static str),
    #[error("invalid retrieval config: {0}")]
    InvalidConfig(String),
    #[error("match set has mismatched lengths ({a}, {b}, {c})")]
    MatchLengthMismatch { a: usize, b: usize, c: usize },
    #[error("match set has non-finite confidences")]
    NonFiniteConfidence,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self, RetrievalError> {
        if values.is_empty() {
            return Err(RetrievalError::EmptyEmbedding);
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(RetrievalError::NonFinite);
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, s: f64) -> Result<Self, RetrievalError> {
        Self::new(self.0.iter().map(|v| v * s).collect())
    }
}

pub fn normalize_embedding(e: &Embedding) -> Result<Embedding, RetrievalError> {
    let n = e.norm();
    if !(n > 0.0) {
        return Err(RetrievalError::Degenerate);
    }
    Embedding::new(e.0.iter().map(|v| v / n).collect())
}

/// Cosine similarities, one row per prompt and one column per proposal.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, prompt: usize, proposal: usize) -> f64 {
        self.values[prompt * self.cols + proposal]
    }

    pub fn row(&self, prompt: usize) -> &[f64] {
        &self.values[prompt * self.cols..(prompt + 1) * self.cols]
    }
}

fn check_dims(list: &[Embedding], dim: usize) -> Result<(), RetrievalError> {
    match list.iter().find(|e| e.dim() != dim) {
        Some(e) => Err(RetrievalError::DimensionMismatch { expected: dim, got: e.dim() }),
        None => Ok(()),
    }
}

pub fn similarity_matrix(prompts: &[Embedding], proposals: &[Embedding]) -> Result<SimilarityMatrix, RetrievalError> {
    let first = prompts.first().ok_or(RetrievalError::EmptyList("prompt"))?;
    if proposals.is_empty() {
        return Err(RetrievalError::EmptyList("proposal"));
    }
    let dim = first.dim();
    check_dims(prompts, dim)?;
    check_dims(proposals, dim)?;
    let p: Vec<Embedding> = prompts.iter().map(normalize_embedding).collect::<Result<_, _>>()?;
    let q: Vec<Embedding> = proposals.iter().map(normalize_embedding).collect::<Result<_, _>>()?;
    let mut values = Vec::with_capacity(p.len() * q.len());
    for a in &p {
        for b in &q {
            let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
            values.push(dot.clamp(-1.0, 1.0));
        }
    }
    Ok(SimilarityMatrix { rows: p.len(), cols: q.len(), values })
}

fn by_similarity(row: &[f64], a: usize, b: usize) -> Ordering {
    row[b].total_cmp(&row[a]).then(a.cmp(&b))
}

/// Indices of the `k` most similar proposals, most similar first; equal
/// similarities keep the smaller index first. `k` larger than the row clamps.
pub fn top_k_proposals(row: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| by_similarity(row, a, b));
    idx.truncate(k.min(row.len()));
    idx
}

/// Local matches between a prompt and one proposal (or between two views).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchSet {
    points_a: Vec<Point2<f64>>,
    points_b: Vec<Point2<f64>>,
    confidences: Vec<f64>,
}

impl MatchSet {
    pub fn new(
        points_a: Vec<Point2<f64>>,
        points_b: Vec<Point2<f64>>,
        confidences: Vec<f64>,
    ) -> Result<Self, RetrievalError> {
        if points_a.len() != points_b.len() || points_a.len() != confidences.len() {
            return Err(RetrievalError::MatchLengthMismatch {
                a: points_a.len(),
                b: points_b.len(),
                c: confidences.len(),
            });
        }
        if !confidences.iter().all(|c| c.is_finite()) {
            return Err(RetrievalError::NonFiniteConfidence);
        }
        Ok(Self { points_a, points_b, confidences })
    }

    /// Match set with confidences only; used when coordinates are irrelevant.
    pub fn from_confidences(confidences: Vec<f64>) -> Result<Self, RetrievalError> {
        let n = confidences.len();
        Self::new(vec![Point2::origin(); n], vec![Point2::origin(); n], confidences)
    }

    pub fn len(&self) -> usize {
        self.confidences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.confidences.is_empty()
    }

    pub fn points_a(&self) -> &[Point2<f64>] {
        &self.points_a
    }

    pub fn points_b(&self) -> &[Point2<f64>] {
        &self.points_b
    }

    pub fn confidences(&self) -> &[f64] {
        &self.confidences
    }

    pub fn correspondences(&self) -> Vec<Correspondence> {
        self.points_a.iter().zip(&self.points_b).map(|(a, b)| Correspondence::new(*a, *b)).collect()
    }
}

/// `(1/n) * #{i : c_i >= sigma}`, zero for an empty set.
pub fn match_confidence_criterion(matches: &MatchSet, sigma: f64) -> f64 {
    if matches.is_empty() {
        return 0.0;
    }
    let hits = matches.confidences.iter().filter(|&&c| c >= sigma).count();
    hits as f64 / matches.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetrievalConfig {
    pub top_k: usize,
    pub sigma: f64,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self { top_k: DEFAULT_TOP_K, sigma: DEFAULT_SIGMA }
    }
}

impl RetrievalConfig {
    pub fn new(top_k: usize, sigma: f64) -> Result<Self, RetrievalError> {
        let cfg = Self { top_k, sigma };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), RetrievalError> {
        if self.top_k == 0 {
            return Err(RetrievalError::InvalidConfig("top_k must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.sigma) {
            return Err(RetrievalError::InvalidConfig(format!("sigma must lie in [0, 1], got {}", self.sigma)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalOutcome {
    pub best_index: usize,
    /// Cosine similarity of the prompt to every proposal.
    pub similarity_row: Vec<f64>,
    /// Criterion per proposal; `None` outside the Top-K candidates.
    pub criteria_scores: Vec<Option<f64>>,
    /// Top-K candidate indices in similarity order.
    pub candidates: Vec<usize>,
}

/// Global retrieval only: the most similar proposal.
pub fn global_retrieve(prompt: &Embedding, proposals: &[Embedding]) -> Result<RetrievalOutcome, RetrievalError> {
    let sim = similarity_matrix(std::slice::from_ref(prompt), proposals)?;
    let row = sim.row(0).to_vec();
    let candidates = top_k_proposals(&row, 1);
    Ok(RetrievalOutcome {
        best_index: candidates[0],
        criteria_scores: vec![None; row.len()],
        similarity_row: row,
        candidates,
    })
}

/// Top-K by similarity, then the candidate with the largest match-confidence
/// criterion. Ties go to the higher similarity, then the smaller index. The
/// matcher is only called for candidates; a failing matcher scores 0.
pub fn hierarchical_retrieve<F, E>(
    prompt: &Embedding,
    proposals: &[Embedding],
    mut matcher: F,
    cfg: &RetrievalConfig,
) -> Result<RetrievalOutcome, RetrievalError>
where
    F: FnMut(usize) -> Result<MatchSet, E>,
{
    cfg.validate()?;
    let sim = similarity_matrix(std::slice::from_ref(prompt), proposals)?;
    let row = sim.row(0).to_vec();
    let candidates = top_k_proposals(&row, cfg.top_k);
    let mut criteria_scores = vec![None; row.len()];
    let mut best: Option<(usize, f64)> = None;
    // Candidates arrive in tie-break order, so a strict comparison is enough.
    for &i in &candidates {
        let score = matcher(i).map(|m| match_confidence_criterion(&m, cfg.sigma)).unwrap_or(0.0);
        criteria_scores[i] = Some(score);
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((i, score));
        }
    }
    Ok(RetrievalOutcome {
        best_index: best.map(|(i, _)| i).expect("at least one candidate"),
        similarity_row: row,
        criteria_scores,
        candidates,
    })
}

/// JSON record emitted for one prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalRecord {
    pub prompt_id: String,
    pub best_proposal: usize,
    pub similarity_row: Vec<f64>,
    pub criteria_scores: Vec<Option<f64>>,
}

impl RetrievalRecord {
    pub fn new(prompt_id: impl Into<String>, outcome: &RetrievalOutcome) -> Self {
        Self {
            prompt_id: prompt_id.into(),
            best_proposal: outcome.best_index,
            similarity_row: outcome.similarity_row.clone(),
            criteria_scores: outcome.criteria_scores.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn emb(v: &[f64]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    #[test]
    fn normalize_examples() {
        let n = normalize_embedding(&emb(&[3.0, 4.0])).unwrap();
        assert_eq!(n.as_slice(), &[0.6, 0.8]);
        let u = emb(&[0.0, 1.0, 0.0]);
        assert_eq!(normalize_embedding(&u).unwrap(), u);
        assert_eq!(normalize_embedding(&emb(&[0.0, 0.0])), Err(RetrievalError::Degenerate));
        assert!(Embedding::new(vec![]).is_err());
        assert!(Embedding::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn similarity_examples() {
        let a = emb(&[1.0, 2.0, 3.0]);
        let b = emb(&[-2.0, 1.0, 0.0]);
        let s = similarity_matrix(std::slice::from_ref(&a), &[a.clone(), b.clone()]).unwrap();
        assert!((s.get(0, 0) - 1.0).abs() < 1e-15);
        assert_eq!(s.get(0, 1), 0.0);
        let scaled = similarity_matrix(&[a.scaled(7.3).unwrap()], &[a.clone(), b]).unwrap();
        assert!(s.row(0).iter().zip(scaled.row(0)).all(|(x, y)| (x - y).abs() < 1e-15));
    }

    #[test]
    fn similarity_errors() {
        let a = emb(&[1.0, 0.0]);
        let b = emb(&[1.0, 0.0, 0.0]);
        assert!(matches!(similarity_matrix(std::slice::from_ref(&a), &[b]), Err(RetrievalError::DimensionMismatch { .. })));
        assert_eq!(similarity_matrix(&[], std::slice::from_ref(&a)), Err(RetrievalError::EmptyList("prompt")));
        assert_eq!(similarity_matrix(&[a], &[]), Err(RetrievalError::EmptyList("proposal")));
    }

    #[test]
    fn top_k_examples() {
        assert_eq!(top_k_proposals(&[0.9, 0.1, 0.5], 2), vec![0, 2]);
        assert_eq!(top_k_proposals(&[0.5, 0.5], 1), vec![0]);
        assert_eq!(top_k_proposals(&[0.2, 0.7], 5), vec![1, 0]);
    }

    #[test]
    fn criterion_examples() {
        let m = MatchSet::from_confidences(vec![0.95, 0.85, 0.91]).unwrap();
        assert_eq!(match_confidence_criterion(&m, 0.9), 2.0 / 3.0);
        assert_eq!(match_confidence_criterion(&MatchSet::default(), 0.9), 0.0);
        let all = MatchSet::from_confidences(vec![0.9; 4]).unwrap();
        assert_eq!(match_confidence_criterion(&all, 0.9), 1.0);
    }

    #[test]
    fn config_validation() {
        assert!(RetrievalConfig::new(0, 0.5).is_err());
        assert!(RetrievalConfig::new(3, 1.5).is_err());
        assert!(RetrievalConfig::new(3, -0.1).is_err());
        assert_eq!(RetrievalConfig::default(), RetrievalConfig::new(3, 0.9).unwrap());
    }

    #[test]
    fn single_proposal_always_wins() {
        let out = hierarchical_retrieve(
            &emb(&[1.0, 0.0]),
            &[emb(&[0.0, 1.0])],
            |_| Ok::<_, ()>(MatchSet::default()),
            &RetrievalConfig::default(),
        )
        .unwrap();
        assert_eq!(out.best_index, 0);
    }

    #[test]
    fn equal_criteria_fall_back_to_similarity() {
        let proposals = [emb(&[0.2, 1.0]), emb(&[1.0, 0.1]), emb(&[1.0, 0.5]), emb(&[1.0, 0.0])];
        let out = hierarchical_retrieve(
            &emb(&[1.0, 0.0]),
            &proposals,
            |_| MatchSet::from_confidences(vec![0.95, 0.5]),
            &RetrievalConfig::default(),
        )
        .unwrap();
        assert_eq!(out.best_index, 3);
        assert_eq!(out.candidates, vec![3, 1, 2]);
        assert_eq!(out.criteria_scores[0], None);
    }

    #[test]
    fn matcher_only_called_for_candidates_and_failures_score_zero() {
        let proposals = [emb(&[1.0, 0.0]), emb(&[0.9, 0.1]), emb(&[0.0, 1.0]), emb(&[0.8, 0.3])];
        let mut called = Vec::new();
        let out = hierarchical_retrieve(
            &emb(&[1.0, 0.0]),
            &proposals,
            |i| {
                called.push(i);
                match i {
                    0 => Err("matcher crashed"),
                    1 => Ok(MatchSet::from_confidences(vec![0.5, 0.95]).unwrap()),
                    _ => Ok(MatchSet::from_confidences(vec![0.1]).unwrap()),
                }
            },
            &RetrievalConfig::default(),
        )
        .unwrap();
        called.sort();
        assert_eq!(called, vec![0, 1, 3]);
        assert_eq!(out.best_index, 1);
        assert_eq!(out.criteria_scores[0], Some(0.0));
    }

    proptest! {
        #[test]
        fn criterion_bounded_and_monotone(
            confs in prop::collection::vec(0.0f64..1.0, 1..40),
            s1 in 0.0f64..1.0,
            s2 in 0.0f64..1.0,
        ) {
            let m = MatchSet::from_confidences(confs.clone()).unwrap();
            let (lo, hi) = if s1 <= s2 { (s1, s2) } else { (s2, s1) };
            let a = match_confidence_criterion(&m, lo);
            let b = match_confidence_criterion(&m, hi);
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert!(b <= a);
            let all = confs.iter().all(|&c| c >= lo);
            prop_assert_eq!(a == 1.0, all);
        }

        #[test]
        fn positive_scaling_does_not_change_ranking(
            raw in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 2..8),
            prompt in prop::collection::vec(-1.0f64..1.0, 4),
            scales in prop::collection::vec(0.01f64..100.0, 9),
        ) {
            prop_assume!(prompt.iter().any(|v| v.abs() > 1e-3));
            prop_assume!(raw.iter().all(|v| v.iter().any(|x| x.abs() > 1e-3)));
            let proposals: Vec<_> = raw.iter().map(|v| emb(v)).collect();
            let p = emb(&prompt);
            let scaled: Vec<_> = proposals.iter().zip(&scales).map(|(e, s)| e.scaled(*s).unwrap()).collect();
            let ps = p.scaled(scales[8]).unwrap();
            let sim = similarity_matrix(std::slice::from_ref(&p), &proposals).unwrap();
            let sim_s = similarity_matrix(std::slice::from_ref(&ps), &scaled).unwrap();
            // Cosines agree to rounding; compare rankings only where gaps exceed it.
            let row = sim.row(0);
            let gaps_ok = row.iter().enumerate().all(|(i, a)| row.iter().skip(i + 1).all(|b| (a - b).abs() > 1e-9));
            prop_assume!(gaps_ok);
            prop_assert_eq!(top_k_proposals(row, 3), top_k_proposals(sim_s.row(0), 3));
            let matcher = |i: usize| MatchSet::from_confidences(vec![0.1 * (i % 3) as f64 + 0.7; 3]);
            let a = hierarchical_retrieve(&p, &proposals, matcher, &RetrievalConfig::default()).unwrap();
            let b = hierarchical_retrieve(&ps, &scaled, matcher, &RetrievalConfig::default()).unwrap();
            prop_assert_eq!(a.best_index, b.best_index);
        }

        #[test]
        fn similarity_entries_bounded(
            a in prop::collection::vec(-10.0f64..10.0, 5),
            b in prop::collection::vec(-10.0f64..10.0, 5),
        ) {
            prop_assume!(a.iter().any(|v| v.abs() > 1e-6) && b.iter().any(|v| v.abs() > 1e-6));
            let s = similarity_matrix(&[emb(&a)], &[emb(&b)]).unwrap();
            prop_assert!(s.get(0, 0).abs() <= 1.0);
        }
    }
}
