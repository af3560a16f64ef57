//! Prompt assembly and token span bookkeeping.
//!
//! A prompt is laid out as
//!
//! ```text
//! {prefix}{instruction}\n\n[1] {title}\n{text}\n\n[2] ...\n\nQuery: {query}{suffix}
//! ```
//!
//! with documents presented in reverse retriever order by default and the
//! query last, so that every document token precedes every query token. Token
//! spans are derived from byte offsets on the tokenized full prompt rather
//! than by tokenizing segments separately, because real tokenizers merge
//! across segment boundaries. A token belongs to the segment holding its first
//! byte; a token that starts in unowned text (separators, labels) belongs to
//! the first segment it overlaps.
//!
//! The calibration layout replaces only the query text with `N/A`. Everything
//! before the query text is byte-identical, so document spans and token ids
//! agree between the two layouts and a KV cache of the prefix can be reused.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::ops::Range;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tokenizer::{Token, Tokenizer};

pub const QA_INSTRUCTION: &str =
    "Here are some paragraphs. Please answer the question based on the relevant information in the paragraphs.";
pub const IE_INSTRUCTION: &str = "Here are some paragraphs. Please find information that are relevant to the query.";
pub const QUERY_LABEL: &str = "Query: ";
pub const CALIBRATION_QUERY: &str = "N/A";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LayoutError {
    #[error("candidate set is empty")]
    EmptyCandidateSet,
    #[error("duplicate document id `{0}`")]
    DuplicateDocumentId(String),
    #[error("document id is empty")]
    EmptyDocumentId,
    #[error("document `{0}` has empty text")]
    EmptyDocumentText(String),
    #[error("query text is empty")]
    EmptyQuery,
    #[error("segment {segment} (bytes {start}..{end}) maps to zero tokens")]
    TokenizerOffsetMismatch { segment: usize, start: usize, end: usize },
    #[error("segment {segment} maps to non-contiguous tokens")]
    NonContiguousSpan { segment: usize },
    #[error("segment ranges must be ordered, disjoint and inside the text")]
    InvalidSegments,
    #[error("calibration prompt tokenizes differently before the query (first divergence at token {0})")]
    PrefixDivergence(usize),
    #[error("invalid model profile: {0}")]
    InvalidProfile(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    pub text: String,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            title: None,
            text: text.into(),
        }
    }

    pub fn with_title(mut self, title: impl Into<String>) -> Self {
        self.title = Some(title.into());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum QueryStyle {
    /// Questions: the model is asked to answer from the paragraphs.
    #[default]
    Qa,
    /// Claims and keyword queries: the model is asked to find relevant information.
    Ie,
}

impl QueryStyle {
    pub fn instruction(self) -> &'static str {
        match self {
            QueryStyle::Qa => QA_INSTRUCTION,
            QueryStyle::Ie => IE_INSTRUCTION,
        }
    }
}

impl FromStr for QueryStyle {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "qa" => Ok(QueryStyle::Qa),
            "ie" => Ok(QueryStyle::Ie),
            other => Err(format!("unknown query style `{other}` (expected qa or ie)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub text: String,
    pub style: QueryStyle,
}

impl Query {
    pub fn new(id: impl Into<String>, text: impl Into<String>, style: QueryStyle) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            style,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModelProfile {
    pub name: String,
    pub prefix_marker: String,
    pub suffix_marker: String,
    pub layers: usize,
    pub heads: usize,
    pub tokenizer: Arc<dyn Tokenizer>,
}

impl ModelProfile {
    pub fn new(
        name: impl Into<String>,
        layers: usize,
        heads: usize,
        tokenizer: Arc<dyn Tokenizer>,
    ) -> Result<Self, LayoutError> {
        if layers == 0 || heads == 0 {
            return Err(LayoutError::InvalidProfile(format!(
                "layers and heads must be positive (got {layers}x{heads})"
            )));
        }
        Ok(Self {
            name: name.into(),
            prefix_marker: String::new(),
            suffix_marker: String::new(),
            layers,
            heads,
            tokenizer,
        })
    }

    pub fn with_markers(mut self, prefix: impl Into<String>, suffix: impl Into<String>) -> Self {
        self.prefix_marker = prefix.into();
        self.suffix_marker = suffix.into();
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", content = "seed", rename_all = "lowercase")]
pub enum OrderMode {
    Retriever,
    #[default]
    Reversed,
    Random(u64),
}

impl fmt::Display for OrderMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OrderMode::Retriever => f.write_str("retriever"),
            OrderMode::Reversed => f.write_str("reversed"),
            OrderMode::Random(seed) => write!(f, "random({seed})"),
        }
    }
}

impl OrderMode {
    /// Indices into the retriever-ordered list, in presentation order.
    pub fn presentation(self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        match self {
            OrderMode::Retriever => {}
            OrderMode::Reversed => idx.reverse(),
            OrderMode::Random(seed) => idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed)),
        }
        idx
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptOptions {
    /// Render the `[k] ` identifier in front of each document.
    pub number_documents: bool,
    /// Count identifier tokens as part of the document span.
    pub span_includes_identifier: bool,
    /// Count title tokens as part of the document span. When false the span
    /// starts at the document text, so the identifier is left out as well.
    pub span_includes_title: bool,
    /// Keep only the first n whitespace-separated words of each document text.
    pub max_words: Option<usize>,
}

impl Default for PromptOptions {
    fn default() -> Self {
        Self {
            number_documents: true,
            span_includes_identifier: true,
            span_includes_title: true,
            max_words: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pass {
    Query,
    Calibration,
}

impl Pass {
    /// File-name infix for attention dumps and layout exports.
    pub fn tag(self) -> &'static str {
        match self {
            Pass::Query => "q",
            Pass::Calibration => "cal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DocSegment {
    pub doc_id: String,
    /// The number shown as `[k]`, 1-based in presentation order.
    pub identifier: usize,
    /// 1-based position in the retriever's list.
    pub retriever_rank: usize,
    pub chars: Range<usize>,
    pub tokens: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub chars: Range<usize>,
    pub tokens: Range<usize>,
}

/// An assembled prompt with every document's token span and the query span.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptLayout {
    pub query_id: String,
    pub query_text: String,
    pub style: QueryStyle,
    pub pass: Pass,
    pub prompt: String,
    pub token_ids: Vec<u32>,
    pub token_offsets: Vec<(usize, usize)>,
    pub instruction: Segment,
    /// Documents in presentation order.
    pub documents: Vec<DocSegment>,
    pub query: Segment,
    /// Byte offset of the `Query: ` label.
    pub query_label_start: usize,
    pub order_mode: OrderMode,
    pub options: PromptOptions,
    pub tokenizer_is_local: bool,
}

impl PromptLayout {
    pub fn total_len(&self) -> usize {
        self.token_ids.len()
    }

    /// Token indices of the query text (I_Q).
    pub fn query_span(&self) -> Range<usize> {
        self.query.tokens.clone()
    }

    pub fn doc_span(&self, doc_id: &str) -> Option<Range<usize>> {
        self.documents
            .iter()
            .find(|d| d.doc_id == doc_id)
            .map(|d| d.tokens.clone())
    }

    pub fn presentation_order(&self) -> Vec<&str> {
        self.documents.iter().map(|d| d.doc_id.as_str()).collect()
    }

    pub fn retriever_order(&self) -> Vec<&str> {
        let mut docs: Vec<&DocSegment> = self.documents.iter().collect();
        docs.sort_by_key(|d| d.retriever_rank);
        docs.into_iter().map(|d| d.doc_id.as_str()).collect()
    }

    pub fn identifier_map(&self) -> BTreeMap<usize, &str> {
        self.documents
            .iter()
            .map(|d| (d.identifier, d.doc_id.as_str()))
            .collect()
    }

    pub fn retriever_ranks(&self) -> HashMap<String, usize> {
        self.documents
            .iter()
            .map(|d| (d.doc_id.clone(), d.retriever_rank))
            .collect()
    }

    /// Text of each token, sliced from the prompt.
    pub fn token_text(&self, index: usize) -> &str {
        let (s, e) = self.token_offsets[index];
        &self.prompt[s..e]
    }
}

fn truncate_words(text: &str, max_words: Option<usize>) -> &str {
    let Some(max) = max_words else { return text };
    if max == 0 {
        return "";
    }
    let mut end = text.len();
    let mut words = 0;
    let mut in_word = false;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if in_word {
                words += 1;
                in_word = false;
                if words == max {
                    end = i;
                    break;
                }
            }
        } else {
            in_word = true;
        }
    }
    &text[..end]
}

fn check_candidates(docs: &[Document]) -> Result<(), LayoutError> {
    if docs.is_empty() {
        return Err(LayoutError::EmptyCandidateSet);
    }
    let mut seen = HashSet::new();
    for d in docs {
        if d.id.is_empty() {
            return Err(LayoutError::EmptyDocumentId);
        }
        if d.text.trim().is_empty() {
            return Err(LayoutError::EmptyDocumentText(d.id.clone()));
        }
        if !seen.insert(d.id.as_str()) {
            return Err(LayoutError::DuplicateDocumentId(d.id.clone()));
        }
    }
    Ok(())
}

/// Build the re-ranking prompt with default [`PromptOptions`].
pub fn build_prompt(
    docs: &[Document],
    query: &Query,
    profile: &ModelProfile,
    order_mode: OrderMode,
) -> Result<PromptLayout, LayoutError> {
    build_prompt_with(docs, query, profile, order_mode, &PromptOptions::default())
}

pub fn build_prompt_with(
    docs: &[Document],
    query: &Query,
    profile: &ModelProfile,
    order_mode: OrderMode,
    options: &PromptOptions,
) -> Result<PromptLayout, LayoutError> {
    check_candidates(docs)?;
    if query.text.trim().is_empty() {
        return Err(LayoutError::EmptyQuery);
    }

    let mut prompt = String::new();
    prompt.push_str(&profile.prefix_marker);
    let instruction = prompt.len()..prompt.len() + query.style.instruction().len();
    prompt.push_str(query.style.instruction());
    prompt.push_str("\n\n");

    let order = order_mode.presentation(docs.len());
    let mut doc_chars = Vec::with_capacity(docs.len());
    for (pos, &di) in order.iter().enumerate() {
        let doc = &docs[di];
        let mut start = prompt.len();
        if options.number_documents {
            prompt.push_str(&format!("[{}] ", pos + 1));
            if !options.span_includes_identifier {
                start = prompt.len();
            }
        }
        if let Some(title) = doc.title.as_deref().filter(|t| !t.trim().is_empty()) {
            prompt.push_str(title);
            prompt.push('\n');
            if !options.span_includes_title {
                start = prompt.len();
            }
        }
        prompt.push_str(truncate_words(&doc.text, options.max_words));
        doc_chars.push(start..prompt.len());
        prompt.push_str("\n\n");
    }

    let query_label_start = prompt.len();
    prompt.push_str(QUERY_LABEL);
    let query_chars = prompt.len()..prompt.len() + query.text.len();
    prompt.push_str(&query.text);
    prompt.push_str(&profile.suffix_marker);

    let mut segments = Vec::with_capacity(docs.len() + 2);
    segments.push(instruction);
    segments.extend(doc_chars.iter().cloned());
    segments.push(query_chars);

    let tokens = profile.tokenizer.tokenize(&prompt);
    let spans = assign_spans(&tokens, &segments, prompt.len())?;

    let documents = order
        .iter()
        .enumerate()
        .map(|(pos, &di)| DocSegment {
            doc_id: docs[di].id.clone(),
            identifier: pos + 1,
            retriever_rank: di + 1,
            chars: segments[pos + 1].clone(),
            tokens: spans[pos + 1].clone(),
        })
        .collect();

    Ok(PromptLayout {
        query_id: query.id.clone(),
        query_text: query.text.clone(),
        style: query.style,
        pass: Pass::Query,
        token_ids: tokens.iter().map(|t| t.id).collect(),
        token_offsets: tokens.iter().map(|t| (t.start, t.end)).collect(),
        instruction: Segment {
            chars: segments[0].clone(),
            tokens: spans[0].clone(),
        },
        documents,
        query: Segment {
            chars: segments[segments.len() - 1].clone(),
            tokens: spans[spans.len() - 1].clone(),
        },
        query_label_start,
        order_mode,
        options: options.clone(),
        tokenizer_is_local: profile.tokenizer.is_local(),
        prompt,
    })
}

/// Derive the content-free calibration layout: same prompt with the query text
/// replaced by `N/A`.
pub fn build_calibration_layout(layout: &PromptLayout, profile: &ModelProfile) -> Result<PromptLayout, LayoutError> {
    let qs = layout.query.chars.start;
    let qe = layout.query.chars.end;
    let mut prompt = String::with_capacity(layout.prompt.len());
    prompt.push_str(&layout.prompt[..qs]);
    prompt.push_str(CALIBRATION_QUERY);
    prompt.push_str(&layout.prompt[qe..]);

    let mut segments = Vec::with_capacity(layout.documents.len() + 2);
    segments.push(layout.instruction.chars.clone());
    segments.extend(layout.documents.iter().map(|d| d.chars.clone()));
    let query_chars = qs..qs + CALIBRATION_QUERY.len();
    segments.push(query_chars.clone());

    let tokens = profile.tokenizer.tokenize(&prompt);
    let spans = assign_spans(&tokens, &segments, prompt.len())?;
    let query_tokens = spans[spans.len() - 1].clone();

    let shared = layout.query.tokens.start;
    if query_tokens.start != shared || tokens.len() < shared {
        return Err(LayoutError::PrefixDivergence(shared.min(query_tokens.start)));
    }
    for (i, tok) in tokens[..shared].iter().enumerate() {
        if tok.id != layout.token_ids[i] || (tok.start, tok.end) != layout.token_offsets[i] {
            return Err(LayoutError::PrefixDivergence(i));
        }
    }
    for (doc, span) in layout.documents.iter().zip(&spans[1..spans.len() - 1]) {
        if doc.tokens != *span {
            return Err(LayoutError::PrefixDivergence(doc.tokens.start.min(span.start)));
        }
    }

    Ok(PromptLayout {
        query_text: CALIBRATION_QUERY.to_string(),
        pass: Pass::Calibration,
        token_ids: tokens.iter().map(|t| t.id).collect(),
        token_offsets: tokens.iter().map(|t| (t.start, t.end)).collect(),
        query: Segment {
            chars: query_chars,
            tokens: query_tokens,
        },
        prompt,
        ..layout.clone()
    })
}

/// Map byte-range segments of `full_text` to token index ranges.
pub fn locate_spans(
    full_text: &str,
    segments: &[Range<usize>],
    tokenizer: &dyn Tokenizer,
) -> Result<Vec<Range<usize>>, LayoutError> {
    let tokens = tokenizer.tokenize(full_text);
    assign_spans(&tokens, segments, full_text.len())
}

/// Assign tokens to segments: the segment holding the token's first byte, else
/// the first segment the token overlaps.
pub fn assign_spans(
    tokens: &[Token],
    segments: &[Range<usize>],
    text_len: usize,
) -> Result<Vec<Range<usize>>, LayoutError> {
    let mut prev_end = 0;
    for seg in segments {
        if seg.start < prev_end || seg.start >= seg.end || seg.end > text_len {
            return Err(LayoutError::InvalidSegments);
        }
        prev_end = seg.end;
    }

    let mut owned: Vec<Vec<usize>> = vec![Vec::new(); segments.len()];
    // Tokens and segments are both ordered, so one forward cursor suffices.
    let mut cursor = 0;
    for (i, tok) in tokens.iter().enumerate() {
        while cursor < segments.len() && segments[cursor].end <= tok.start {
            cursor += 1;
        }
        let Some(seg) = segments.get(cursor) else { break };
        let starts_inside = seg.start <= tok.start;
        let overlaps = tok.start < seg.end && seg.start < tok.end;
        if starts_inside || overlaps {
            owned[cursor].push(i);
        }
    }

    owned
        .into_iter()
        .enumerate()
        .map(|(s, idx)| {
            let (Some(&first), Some(&last)) = (idx.first(), idx.last()) else {
                return Err(LayoutError::TokenizerOffsetMismatch {
                    segment: s,
                    start: segments[s].start,
                    end: segments[s].end,
                });
            };
            if last - first + 1 != idx.len() {
                return Err(LayoutError::NonContiguousSpan { segment: s });
            }
            Ok(first..last + 1)
        })
        .collect()
}

/// JSON export of a layout, consumed by external attention exporters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutExport {
    pub schema_version: u32,
    pub model: String,
    pub query_id: String,
    pub pass: Pass,
    pub style: QueryStyle,
    pub query_text: String,
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_ids: Option<Vec<u32>>,
    pub total_len: usize,
    pub instruction: SegmentExport,
    pub documents: Vec<DocumentExport>,
    pub query: SegmentExport,
    pub order: OrderExport,
}

/// Offsets are given both in bytes (UTF-8) and in Unicode scalar values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentExport {
    pub byte_range: [usize; 2],
    pub char_range: [usize; 2],
    pub token_span: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentExport {
    pub doc_id: String,
    pub identifier: usize,
    pub retriever_rank: usize,
    #[serde(flatten)]
    pub segment: SegmentExport,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderExport {
    pub mode: OrderMode,
    pub presentation_order: Vec<String>,
    pub retriever_order: Vec<String>,
}

pub const LAYOUT_SCHEMA_VERSION: u32 = 1;

impl PromptLayout {
    pub fn to_export(&self, model: &str) -> LayoutExport {
        let char_at = |byte: usize| self.prompt[..byte].chars().count();
        let seg = |chars: &Range<usize>, tokens: &Range<usize>| SegmentExport {
            byte_range: [chars.start, chars.end],
            char_range: [char_at(chars.start), char_at(chars.end)],
            token_span: [tokens.start, tokens.end],
        };
        LayoutExport {
            schema_version: LAYOUT_SCHEMA_VERSION,
            model: model.to_string(),
            query_id: self.query_id.clone(),
            pass: self.pass,
            style: self.style,
            query_text: self.query_text.clone(),
            prompt: self.prompt.clone(),
            token_ids: self.tokenizer_is_local.then(|| self.token_ids.clone()),
            total_len: self.total_len(),
            instruction: seg(&self.instruction.chars, &self.instruction.tokens),
            documents: self
                .documents
                .iter()
                .map(|d| DocumentExport {
                    doc_id: d.doc_id.clone(),
                    identifier: d.identifier,
                    retriever_rank: d.retriever_rank,
                    segment: seg(&d.chars, &d.tokens),
                })
                .collect(),
            query: seg(&self.query.chars, &self.query.tokens),
            order: OrderExport {
                mode: self.order_mode,
                presentation_order: self.presentation_order().iter().map(|s| s.to_string()).collect(),
                retriever_order: self.retriever_order().iter().map(|s| s.to_string()).collect(),
            },
        }
    }
}

#[cfg(test)]
#[allow(clippy::single_range_in_vec_init)]
mod tests {
    use super::*;
    use crate::tokenizer::{ChunkTokenizer, WhitespaceTokenizer};

    fn profile() -> ModelProfile {
        ModelProfile::new("toy", 1, 1, Arc::new(WhitespaceTokenizer::new(1000))).unwrap()
    }

    fn docs() -> Vec<Document> {
        vec![
            Document::new("d1", "alpha beta"),
            Document::new("d2", "gamma").with_title("Title Two"),
            Document::new("d3", "delta epsilon zeta"),
        ]
    }

    fn q(text: &str) -> Query {
        Query::new("q1", text, QueryStyle::Qa)
    }

    #[test]
    fn instructions_verbatim() {
        let p = profile();
        let l = build_prompt(&docs(), &q("who?"), &p, OrderMode::Reversed).unwrap();
        assert!(l.prompt.starts_with(
            "Here are some paragraphs. Please answer the question based on the relevant information in the paragraphs.\n\n"
        ));
        let ie = Query::new("q", "claim", QueryStyle::Ie);
        let l = build_prompt(&docs(), &ie, &p, OrderMode::Reversed).unwrap();
        assert!(l
            .prompt
            .contains("Here are some paragraphs. Please find information that are relevant to the query."));
    }

    #[test]
    fn reversed_presentation() {
        let l = build_prompt(&docs(), &q("x"), &profile(), OrderMode::Reversed).unwrap();
        assert_eq!(l.presentation_order(), ["d3", "d2", "d1"]);
        let ids: Vec<_> = l.identifier_map().into_iter().collect();
        assert_eq!(ids, [(1, "d3"), (2, "d2"), (3, "d1")]);
        assert_eq!(l.retriever_order(), ["d1", "d2", "d3"]);
    }

    #[test]
    fn exact_prompt_text() {
        let p = profile().with_markers("<s>[INST] ", " [/INST]");
        let l = build_prompt(&docs(), &q("who is it?"), &p, OrderMode::Retriever).unwrap();
        let expected = format!(
            "<s>[INST] {QA_INSTRUCTION}\n\n[1] alpha beta\n\n[2] Title Two\ngamma\n\n[3] delta epsilon zeta\n\nQuery: who is it? [/INST]"
        );
        assert_eq!(l.prompt, expected);
        assert_eq!(l.token_text(l.query.tokens.start), "who");
        assert_eq!(l.token_text(l.query.tokens.end - 1), "it?");
        // suffix marker follows I_Q
        assert_eq!(l.query.tokens.end, l.total_len() - 1);
    }

    #[test]
    fn query_is_last_without_suffix() {
        let l = build_prompt(&docs(), &q("a b"), &profile(), OrderMode::Reversed).unwrap();
        assert_eq!(l.query.tokens.end, l.total_len());
        assert!(l.documents.iter().all(|d| d.tokens.end <= l.query.tokens.start));
    }

    #[test]
    fn candidate_errors() {
        let p = profile();
        assert_eq!(
            build_prompt(&[], &q("x"), &p, OrderMode::Reversed).unwrap_err(),
            LayoutError::EmptyCandidateSet
        );
        let dup = vec![Document::new("a", "x"), Document::new("a", "y")];
        assert_eq!(
            build_prompt(&dup, &q("x"), &p, OrderMode::Reversed).unwrap_err(),
            LayoutError::DuplicateDocumentId("a".into())
        );
        let blank = vec![Document::new("a", "   ")];
        assert!(matches!(
            build_prompt(&blank, &q("x"), &p, OrderMode::Reversed),
            Err(LayoutError::EmptyDocumentText(_))
        ));
        assert_eq!(
            build_prompt(&docs(), &q(" "), &p, OrderMode::Reversed).unwrap_err(),
            LayoutError::EmptyQuery
        );
    }

    #[test]
    fn invalid_profile() {
        assert!(ModelProfile::new("m", 0, 1, Arc::new(WhitespaceTokenizer::new(10))).is_err());
    }

    #[test]
    fn locate_whitespace_example() {
        let text = "[1] cat sat\nQuery: x";
        let tok = WhitespaceTokenizer::new(100);
        let spans = locate_spans(text, &[4..11], &tok).unwrap();
        assert_eq!(spans, vec![1..3]);
    }

    #[test]
    fn locate_zero_token_segment() {
        let text = "ab  cd";
        let tok = WhitespaceTokenizer::new(100);
        // segment covering only whitespace
        let err = locate_spans(text, &[2..4], &tok).unwrap_err();
        assert!(matches!(err, LayoutError::TokenizerOffsetMismatch { segment: 0, .. }));
    }

    #[test]
    fn straddling_token_goes_to_first_char_segment() {
        // chunks of 3: "abc" "def" "ghi"; segments "abcd" and "efghi"
        let text = "abcdefghi";
        let tok = ChunkTokenizer::new(3, 100);
        let spans = locate_spans(text, &[0..4, 4..9], &tok).unwrap();
        // "def" starts at 3, inside the first segment
        assert_eq!(spans, vec![0..2, 2..3]);
        // disjoint
        assert!(spans[0].end <= spans[1].start);
    }

    #[test]
    fn straddle_can_starve_a_segment() {
        let text = "abcdefghi";
        // "abcd" starts in the first segment and swallows the second one
        let err = locate_spans(text, &[0..2, 2..3], &ChunkTokenizer::new(4, 100)).unwrap_err();
        assert!(matches!(err, LayoutError::TokenizerOffsetMismatch { segment: 1, .. }));
        assert_eq!(
            locate_spans(text, &[0..2, 2..3], &ChunkTokenizer::new(2, 100)).unwrap(),
            vec![0..1, 1..2]
        );
    }

    #[test]
    fn bad_segments_rejected() {
        let tok = WhitespaceTokenizer::new(10);
        assert_eq!(
            locate_spans("abc def", &[4..7, 0..3], &tok),
            Err(LayoutError::InvalidSegments)
        );
        assert_eq!(locate_spans("abc", &[0..9], &tok), Err(LayoutError::InvalidSegments));
    }

    #[test]
    fn token_starting_in_gap_joins_next_segment() {
        let tokens = [
            Token {
                id: 0,
                start: 0,
                end: 3,
            },
            Token {
                id: 1,
                start: 3,
                end: 7,
            }, // " cat" style token with leading space
        ];
        let spans = assign_spans(&tokens, &[0..3, 4..7], 7).unwrap();
        assert_eq!(spans, vec![0..1, 1..2]);
    }

    #[test]
    fn calibration_shares_prefix() {
        let p = profile();
        let l = build_prompt(&docs(), &q("a b"), &p, OrderMode::Reversed).unwrap();
        let c = build_calibration_layout(&l, &p).unwrap();
        assert_eq!(c.total_len() + 1, l.total_len());
        assert_eq!(c.query_text, "N/A");
        assert_eq!(c.pass, Pass::Calibration);
        assert_eq!(c.documents, l.documents);
        let s = l.query.tokens.start;
        assert_eq!(c.token_ids[..s], l.token_ids[..s]);
        assert_eq!(c.query.tokens, s..s + 1);
        assert!(c.prompt.ends_with("Query: N/A"));
    }

    #[test]
    fn calibration_with_chunk_tokenizer() {
        let p = ModelProfile::new("chunk", 1, 1, Arc::new(ChunkTokenizer::new(2, 500))).unwrap();
        let l = build_prompt(&docs(), &q("who directed X?"), &p, OrderMode::Reversed).unwrap();
        let c = build_calibration_layout(&l, &p).unwrap();
        assert_eq!(c.documents, l.documents);
        let s = l.query.tokens.start;
        assert_eq!(c.token_ids[..s], l.token_ids[..s]);
    }

    #[test]
    fn truncation() {
        assert_eq!(truncate_words("a b  c d", Some(2)), "a b");
        assert_eq!(truncate_words("a b", Some(5)), "a b");
        assert_eq!(truncate_words("a b", None), "a b");
        let opts = PromptOptions {
            max_words: Some(1),
            ..Default::default()
        };
        let l = build_prompt_with(&docs(), &q("x"), &profile(), OrderMode::Retriever, &opts).unwrap();
        assert!(l.prompt.contains("[3] delta\n\nQuery"));
    }

    #[test]
    fn identifiers_optional() {
        let opts = PromptOptions {
            number_documents: false,
            ..Default::default()
        };
        let l = build_prompt_with(&docs(), &q("x"), &profile(), OrderMode::Retriever, &opts).unwrap();
        assert!(!l.prompt.contains("[1]"));
        let opts = PromptOptions {
            span_includes_identifier: false,
            ..Default::default()
        };
        let l = build_prompt_with(&docs(), &q("x"), &profile(), OrderMode::Retriever, &opts).unwrap();
        assert_eq!(l.token_text(l.documents[0].tokens.start), "alpha");
        let opts = PromptOptions {
            span_includes_title: false,
            ..Default::default()
        };
        let l = build_prompt_with(&docs(), &q("x"), &profile(), OrderMode::Retriever, &opts).unwrap();
        let titled = l.documents.iter().find(|d| d.doc_id == "d2").unwrap();
        assert_eq!(l.token_text(titled.tokens.start), "gamma");
        assert!(l.prompt.contains("Title Two\ngamma"));
    }

    #[test]
    fn random_order_is_seeded() {
        let a = OrderMode::Random(3).presentation(10);
        assert_eq!(a, OrderMode::Random(3).presentation(10));
        let mut sorted = a.clone();
        sorted.sort();
        assert_eq!(sorted, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn export_offsets() {
        let d = vec![Document::new("d1", "héllo wörld")];
        let l = build_prompt(&d, &q("ü"), &profile(), OrderMode::Reversed).unwrap();
        let ex = l.to_export("toy");
        let [cs, ce] = ex.query.char_range;
        let chars: Vec<char> = l.prompt.chars().collect();
        assert_eq!(chars[cs..ce].iter().collect::<String>(), "ü");
        assert_eq!(ex.token_ids.as_ref().unwrap().len(), ex.total_len);
        let json = serde_json::to_string(&ex).unwrap();
        let back: LayoutExport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, ex);
    }
}
