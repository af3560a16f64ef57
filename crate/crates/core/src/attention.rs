//! Attention-based document scoring.
//!
//! Each document token is scored by the attention it receives from the query
//! tokens, summed over every layer and head and averaged over the query
//! tokens. The same score computed with the content-free query `N/A` is
//! subtracted token-wise; tokens whose calibrated score falls more than two
//! standard deviations below their document's mean are dropped, and the rest
//! are summed into the document score.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::layout::PromptLayout;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoreError {
    #[error("attention rows {rows:?} do not cover the query span {expected:?}")]
    RowCoverageMismatch { rows: Vec<usize>, expected: Range<usize> },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("score tables cover different document spans")]
    SpanMismatch,
    #[error("cannot filter an empty token span")]
    EmptySpan,
    #[error("document `{0}` has no retriever rank")]
    MissingRetrieverRank(String),
    #[error("mode `{0}` requires a calibration pass")]
    MissingCalibration(ScoreMode),
    #[error("non-finite score for document `{0}`")]
    NonFinite(String),
}

/// Query-token rows of the attention tensor for every layer and head.
///
/// Values are stored layer-major, then head, then row, each row a dense vector
/// of `context_len` weights (the on-disk dump layout).
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionSlice {
    layers: usize,
    heads: usize,
    context_len: usize,
    rows: Vec<usize>,
    weights: Vec<f32>,
}

impl AttentionSlice {
    pub fn new(
        layers: usize,
        heads: usize,
        context_len: usize,
        rows: Vec<usize>,
        weights: Vec<f32>,
    ) -> Result<Self, ScoreError> {
        if layers == 0 || heads == 0 {
            return Err(ScoreError::ShapeMismatch("layers and heads must be positive".into()));
        }
        if rows.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ScoreError::ShapeMismatch(
                "row indices must be strictly increasing".into(),
            ));
        }
        if rows.last().is_some_and(|&r| r >= context_len) {
            return Err(ScoreError::ShapeMismatch("row index beyond context length".into()));
        }
        let expected = layers * heads * rows.len() * context_len;
        if weights.len() != expected {
            return Err(ScoreError::ShapeMismatch(format!(
                "expected {expected} weights, got {}",
                weights.len()
            )));
        }
        Ok(Self {
            layers,
            heads,
            context_len,
            rows,
            weights,
        })
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn context_len(&self) -> usize {
        self.context_len
    }

    pub fn row_indices(&self) -> &[usize] {
        &self.rows
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    /// Weights of stored row `r` (an index into [`row_indices`](Self::row_indices)).
    pub fn row(&self, layer: usize, head: usize, r: usize) -> &[f32] {
        let n = self.rows.len();
        let start = ((layer * self.heads + head) * n + r) * self.context_len;
        &self.weights[start..start + self.context_len]
    }

    pub fn row_mut(&mut self, layer: usize, head: usize, r: usize) -> &mut [f32] {
        let n = self.rows.len();
        let start = ((layer * self.heads + head) * n + r) * self.context_len;
        &mut self.weights[start..start + self.context_len]
    }

    /// Keep only the stored rows whose positions satisfy `keep`.
    pub fn select_rows(&self, keep: impl Fn(usize) -> bool) -> AttentionSlice {
        let picked: Vec<usize> = (0..self.rows.len()).filter(|&r| keep(self.rows[r])).collect();
        let mut weights = Vec::with_capacity(self.layers * self.heads * picked.len() * self.context_len);
        for l in 0..self.layers {
            for h in 0..self.heads {
                for &r in &picked {
                    weights.extend_from_slice(self.row(l, h, r));
                }
            }
        }
        AttentionSlice {
            layers: self.layers,
            heads: self.heads,
            context_len: self.context_len,
            rows: picked.iter().map(|&r| self.rows[r]).collect(),
            weights,
        }
    }
}

/// Attention mass each position receives, averaged over the stored rows and
/// summed over layers and heads. Accumulates in f64, layer-major, head-minor,
/// ascending row.
pub fn received_attention(attn: &AttentionSlice, positions: Range<usize>) -> Vec<f64> {
    let mut acc = vec![0.0f64; positions.len()];
    let n = attn.rows.len();
    for l in 0..attn.layers {
        for h in 0..attn.heads {
            for r in 0..n {
                let row = &attn.row(l, h, r)[positions.clone()];
                for (a, &w) in acc.iter_mut().zip(row) {
                    *a += f64::from(w);
                }
            }
        }
    }
    if n > 0 {
        let inv = n as f64;
        acc.iter_mut().for_each(|a| *a /= inv);
    }
    acc
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PassTag {
    Query,
    Calibration,
    Calibrated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocTokenScores {
    pub doc_id: String,
    pub span: Range<usize>,
    pub values: Vec<f64>,
}

/// Per-token scores for every document, in presentation order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenScoreTable {
    pub pass: PassTag,
    pub docs: Vec<DocTokenScores>,
}

impl TokenScoreTable {
    pub fn get(&self, doc_id: &str) -> Option<&DocTokenScores> {
        self.docs.iter().find(|d| d.doc_id == doc_id)
    }
}

fn check_alignment(attn: &AttentionSlice, layout: &PromptLayout) -> Result<(), ScoreError> {
    if attn.context_len != layout.total_len() {
        return Err(ScoreError::ShapeMismatch(format!(
            "slice context length {} != layout length {}",
            attn.context_len,
            layout.total_len()
        )));
    }
    Ok(())
}

/// Score every document token by the attention it receives from the query
/// tokens. The slice must hold exactly the rows of the layout's query span.
pub fn aggregate_query_attention(
    attn: &AttentionSlice,
    layout: &PromptLayout,
    pass: PassTag,
) -> Result<TokenScoreTable, ScoreError> {
    check_alignment(attn, layout)?;
    let expected = layout.query_span();
    if !attn.rows.iter().copied().eq(expected.clone()) {
        return Err(ScoreError::RowCoverageMismatch {
            rows: attn.rows.clone(),
            expected,
        });
    }
    Ok(table_from_rows(attn, layout, pass))
}

/// Like [`aggregate_query_attention`] but with only the final query token's
/// row, which is what attention sorting uses.
pub fn aggregate_last_token_attention(
    attn: &AttentionSlice,
    layout: &PromptLayout,
    pass: PassTag,
) -> Result<TokenScoreTable, ScoreError> {
    check_alignment(attn, layout)?;
    let last = layout.query_span().end - 1;
    if !attn.rows.contains(&last) {
        return Err(ScoreError::RowCoverageMismatch {
            rows: attn.rows.clone(),
            expected: last..last + 1,
        });
    }
    let slice = attn.select_rows(|k| k == last);
    Ok(table_from_rows(&slice, layout, pass))
}

fn table_from_rows(attn: &AttentionSlice, layout: &PromptLayout, pass: PassTag) -> TokenScoreTable {
    let docs = layout
        .documents
        .iter()
        .map(|d| DocTokenScores {
            doc_id: d.doc_id.clone(),
            span: d.tokens.clone(),
            values: received_attention(attn, d.tokens.clone()),
        })
        .collect();
    TokenScoreTable { pass, docs }
}

/// Subtract calibration scores from query scores token-wise.
pub fn calibrate(query: &TokenScoreTable, calibration: &TokenScoreTable) -> Result<TokenScoreTable, ScoreError> {
    if query.docs.len() != calibration.docs.len() {
        return Err(ScoreError::SpanMismatch);
    }
    let docs = query
        .docs
        .iter()
        .zip(&calibration.docs)
        .map(|(q, c)| {
            if q.doc_id != c.doc_id || q.span != c.span || q.values.len() != c.values.len() {
                return Err(ScoreError::SpanMismatch);
            }
            Ok(DocTokenScores {
                doc_id: q.doc_id.clone(),
                span: q.span.clone(),
                values: q.values.iter().zip(&c.values).map(|(a, b)| a - b).collect(),
            })
        })
        .collect::<Result<_, _>>()?;
    Ok(TokenScoreTable {
        pass: PassTag::Calibrated,
        docs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentScore {
    pub doc_id: String,
    pub score: f64,
    pub kept_token_count: usize,
    pub dropped_token_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilteredSum {
    pub sum: f64,
    pub kept: usize,
    pub dropped: usize,
    pub threshold: f64,
}

/// Drop abnormally low tokens and sum the rest.
///
/// Uses the document's own mean `m` and population standard deviation `σ`.
/// Tokens with `score > m - 2σ` are kept. When `σ == 0` every token is kept,
/// since the strict comparison would otherwise empty a constant document.
pub fn filter_and_sum(scores: &[f64]) -> Result<FilteredSum, ScoreError> {
    if scores.is_empty() {
        return Err(ScoreError::EmptySpan);
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
    let sigma = var.sqrt();
    let threshold = mean - 2.0 * sigma;
    let (mut sum, mut kept) = (0.0, 0);
    for &s in scores {
        if sigma == 0.0 || s > threshold {
            sum += s;
            kept += 1;
        }
    }
    Ok(FilteredSum {
        sum,
        kept,
        dropped: scores.len() - kept,
        threshold,
    })
}

/// Sum without filtering (attention sorting).
fn plain_sum(scores: &[f64]) -> Result<FilteredSum, ScoreError> {
    if scores.is_empty() {
        return Err(ScoreError::EmptySpan);
    }
    Ok(FilteredSum {
        sum: scores.iter().sum(),
        kept: scores.len(),
        dropped: 0,
        threshold: f64::NEG_INFINITY,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedDoc {
    pub doc_id: String,
    pub score: f64,
    pub retriever_rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub entries: Vec<RankedDoc>,
}

impl Ranking {
    pub fn doc_ids(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.doc_id.as_str()).collect()
    }

    pub fn position(&self, doc_id: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.doc_id == doc_id)
    }
}

/// Sort by descending score; ties go to the better retriever rank.
pub fn rank(doc_scores: &[DocumentScore], retriever_ranks: &HashMap<String, usize>) -> Result<Ranking, ScoreError> {
    let mut entries = doc_scores
        .iter()
        .map(|d| {
            if !d.score.is_finite() {
                return Err(ScoreError::NonFinite(d.doc_id.clone()));
            }
            let r = retriever_ranks
                .get(&d.doc_id)
                .ok_or_else(|| ScoreError::MissingRetrieverRank(d.doc_id.clone()))?;
            Ok(RankedDoc {
                doc_id: d.doc_id.clone(),
                score: d.score,
                retriever_rank: *r,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    entries.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(Ordering::Equal)
            .then(a.retriever_rank.cmp(&b.retriever_rank))
    });
    Ok(Ranking { entries })
}

/// Which parts of the scoring pipeline are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    /// All query tokens, calibrated, filtered.
    #[default]
    Full,
    /// All query tokens, no calibration; the filter runs on raw scores.
    NoCalibration,
    /// Last query token only, calibrated, filtered.
    LastTokenOnly,
    /// Last query token only, uncalibrated, unfiltered: attention sorting.
    Neither,
}

impl ScoreMode {
    pub const ALL: [ScoreMode; 4] = [
        ScoreMode::Full,
        ScoreMode::NoCalibration,
        ScoreMode::LastTokenOnly,
        ScoreMode::Neither,
    ];

    pub fn uses_calibration(self) -> bool {
        matches!(self, ScoreMode::Full | ScoreMode::LastTokenOnly)
    }
}

impl fmt::Display for ScoreMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScoreMode::Full => "full",
            ScoreMode::NoCalibration => "no_calibration",
            ScoreMode::LastTokenOnly => "last_token_only",
            ScoreMode::Neither => "neither",
        })
    }
}

impl FromStr for ScoreMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ScoreMode::ALL
            .into_iter()
            .find(|m| m.to_string() == s)
            .ok_or_else(|| format!("unknown scoring mode `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreOutput {
    pub ranking: Ranking,
    pub doc_scores: Vec<DocumentScore>,
    /// The per-token scores that were summed (calibrated when calibration ran).
    pub token_scores: TokenScoreTable,
}

/// Run the scoring pipeline for one query.
pub fn score_documents(
    layout: &PromptLayout,
    attn: &AttentionSlice,
    calibration: Option<(&PromptLayout, &AttentionSlice)>,
    mode: ScoreMode,
) -> Result<ScoreOutput, ScoreError> {
    let last_only = matches!(mode, ScoreMode::LastTokenOnly | ScoreMode::Neither);
    let aggregate = |a: &AttentionSlice, l: &PromptLayout, tag| {
        if last_only {
            aggregate_last_token_attention(a, l, tag)
        } else {
            aggregate_query_attention(a, l, tag)
        }
    };

    let query_table = aggregate(attn, layout, PassTag::Query)?;
    let table = if mode.uses_calibration() {
        let (cal_layout, cal_attn) = calibration.ok_or(ScoreError::MissingCalibration(mode))?;
        let cal_table = aggregate(cal_attn, cal_layout, PassTag::Calibration)?;
        calibrate(&query_table, &cal_table)?
    } else {
        query_table
    };

    let doc_scores = table
        .docs
        .iter()
        .map(|d| {
            let f = if mode == ScoreMode::Neither {
                plain_sum(&d.values)?
            } else {
                filter_and_sum(&d.values)?
            };
            Ok(DocumentScore {
                doc_id: d.doc_id.clone(),
                score: f.sum,
                kept_token_count: f.kept,
                dropped_token_count: f.dropped,
            })
        })
        .collect::<Result<Vec<_>, ScoreError>>()?;

    let ranking = rank(&doc_scores, &layout.retriever_ranks())?;
    Ok(ScoreOutput {
        ranking,
        doc_scores,
        token_scores: table,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn slice_shape_checks() {
        assert!(AttentionSlice::new(1, 1, 4, vec![3], vec![0.25; 4]).is_ok());
        assert!(AttentionSlice::new(1, 1, 4, vec![3], vec![0.25; 3]).is_err());
        assert!(AttentionSlice::new(1, 1, 4, vec![4], vec![0.25; 4]).is_err());
        assert!(AttentionSlice::new(1, 1, 4, vec![2, 2], vec![0.25; 8]).is_err());
        assert!(AttentionSlice::new(0, 1, 4, vec![], vec![]).is_err());
    }

    #[test]
    fn uniform_row_scores_quarter() {
        let a = AttentionSlice::new(1, 1, 5, vec![4], vec![0.25, 0.25, 0.25, 0.25, 0.0]).unwrap();
        let s = received_attention(&a, 0..4);
        assert!(s.iter().all(|&x| close(x, 0.25, 1e-12)));
    }

    #[test]
    fn causal_uniform_two_by_two() {
        // rows at 1-indexed positions 5 and 6 → 0-indexed 4 and 5
        let t = 6;
        let mut w = Vec::new();
        for _l in 0..2 {
            for _h in 0..2 {
                for k in [4usize, 5] {
                    let kk = (k + 1) as f32;
                    w.extend((0..t).map(|j| if j <= k { 1.0 / kk } else { 0.0 }));
                }
            }
        }
        let a = AttentionSlice::new(2, 2, t, vec![4, 5], w).unwrap();
        let s = received_attention(&a, 0..5);
        for x in s {
            assert!(close(x, 11.0 / 15.0, 1e-6), "{x}");
        }
    }

    #[test]
    fn one_hot_rows_score_l_times_h() {
        let (l, h, t) = (3, 2, 5);
        let mut w = Vec::new();
        for _ in 0..l * h {
            for _row in 0..2 {
                w.extend([0.0, 0.0, 1.0, 0.0, 0.0]);
            }
        }
        let a = AttentionSlice::new(l, h, t, vec![3, 4], w).unwrap();
        let s = received_attention(&a, 0..5);
        assert_eq!(s, vec![0.0, 0.0, 6.0, 0.0, 0.0]);
    }

    fn table(values: &[&[f64]]) -> TokenScoreTable {
        let mut start = 0;
        TokenScoreTable {
            pass: PassTag::Query,
            docs: values
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    let span = start..start + v.len();
                    start += v.len();
                    DocTokenScores {
                        doc_id: format!("d{i}"),
                        span,
                        values: v.to_vec(),
                    }
                })
                .collect(),
        }
    }

    #[test]
    fn calibrate_examples() {
        let q = table(&[&[0.5, 0.2]]);
        let c = table(&[&[0.1, 0.3]]);
        let out = calibrate(&q, &c).unwrap();
        assert_eq!(out.pass, PassTag::Calibrated);
        assert!(close(out.docs[0].values[0], 0.4, 1e-15));
        assert!(close(out.docs[0].values[1], -0.1, 1e-15));

        let same = calibrate(&q, &q).unwrap();
        assert!(same.docs[0].values.iter().all(|&v| v == 0.0));

        let zero = table(&[&[0.0, 0.0]]);
        assert_eq!(calibrate(&q, &zero).unwrap().docs[0].values, q.docs[0].values);
    }

    #[test]
    fn calibrate_span_mismatch() {
        let q = table(&[&[0.5, 0.2]]);
        let c = table(&[&[0.1]]);
        assert_eq!(calibrate(&q, &c), Err(ScoreError::SpanMismatch));
        let c2 = table(&[&[0.1, 0.2], &[0.3]]);
        assert_eq!(calibrate(&q, &c2), Err(ScoreError::SpanMismatch));
    }

    #[test]
    fn filter_boundary_outlier_dropped() {
        let f = filter_and_sum(&[1.0, 1.0, 1.0, 1.0, -10.0]).unwrap();
        assert_eq!(f.threshold, -10.0);
        assert_eq!(f.sum, 4.0);
        assert_eq!((f.kept, f.dropped), (4, 1));
    }

    #[test]
    fn filter_constant_keeps_all() {
        let f = filter_and_sum(&[0.3, 0.3, 0.3, 0.3]).unwrap();
        assert_eq!((f.kept, f.dropped), (4, 0));
        assert!(close(f.sum, 1.2, 1e-12));
        let single = filter_and_sum(&[-2.5]).unwrap();
        assert_eq!((single.sum, single.kept), (-2.5, 1));
    }

    #[test]
    fn filter_no_outlier() {
        let f = filter_and_sum(&[2.0, 3.0, -1.0]).unwrap();
        assert!(close(f.threshold, -2.066_013_009_7, 1e-9));
        assert_eq!(f.sum, 4.0);
        assert_eq!(f.kept, 3);
    }

    #[test]
    fn filter_empty() {
        assert_eq!(filter_and_sum(&[]), Err(ScoreError::EmptySpan));
    }

    fn ds(id: &str, score: f64) -> DocumentScore {
        DocumentScore {
            doc_id: id.into(),
            score,
            kept_token_count: 1,
            dropped_token_count: 0,
        }
    }

    fn ranks(pairs: &[(&str, usize)]) -> HashMap<String, usize> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn rank_examples() {
        let r = rank(&[ds("A", 2.0), ds("B", 1.0)], &ranks(&[("A", 1), ("B", 2)])).unwrap();
        assert_eq!(r.doc_ids(), ["A", "B"]);
        let r = rank(&[ds("A", 1.0), ds("B", 1.0)], &ranks(&[("A", 2), ("B", 1)])).unwrap();
        assert_eq!(r.doc_ids(), ["B", "A"]);
        let r = rank(
            &[ds("A", 0.1), ds("B", 0.3), ds("C", 0.2)],
            &ranks(&[("A", 1), ("B", 2), ("C", 3)]),
        )
        .unwrap();
        assert_eq!(r.doc_ids(), ["B", "C", "A"]);
    }

    #[test]
    fn rank_errors() {
        assert_eq!(
            rank(&[ds("A", 1.0)], &ranks(&[])),
            Err(ScoreError::MissingRetrieverRank("A".into()))
        );
        assert!(matches!(
            rank(&[ds("A", f64::NAN)], &ranks(&[("A", 1)])),
            Err(ScoreError::NonFinite(_))
        ));
    }

    #[test]
    fn mode_parse_roundtrip() {
        for m in ScoreMode::ALL {
            assert_eq!(m.to_string().parse::<ScoreMode>().unwrap(), m);
        }
        assert!("bogus".parse::<ScoreMode>().is_err());
    }

    #[test]
    fn select_rows_keeps_layout() {
        let w: Vec<f32> = (0..2 * 2 * 3).map(|i| i as f32).collect();
        let a = AttentionSlice::new(2, 1, 3, vec![1, 2], w).unwrap();
        let s = a.select_rows(|k| k == 2);
        assert_eq!(s.row_indices(), &[2]);
        assert_eq!(s.row(0, 0, 0), a.row(0, 0, 1));
        assert_eq!(s.row(1, 0, 0), a.row(1, 0, 1));
    }
}
