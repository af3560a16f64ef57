//! HTML heatmaps of token-level document scores.
//!
//! Positive scores are shaded blue with opacity proportional to the score
//! divided by the largest positive score in that document. Negative scores
//! are shaded red, scaled by the most negative score. Zero is left unshaded.

use std::fmt::Write;

use crate::pipeline::{QueryResult, ScoredDocument, TokenScoreFile};

pub const POSITIVE_RGB: (u8, u8, u8) = (30, 100, 230);
pub const NEGATIVE_RGB: (u8, u8, u8) = (220, 40, 40);

pub fn escape_html(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            _ => out.push(c),
        }
    }
    out
}

/// RGB color and opacity; `None` leaves a token unshaded.
pub type Shade = Option<((u8, u8, u8), f64)>;

/// Background shade for each score: `None` for zero, else color and opacity in (0, 1].
pub fn token_shades(scores: &[f64]) -> Vec<Shade> {
    let max_pos = scores.iter().copied().filter(|s| *s > 0.0).fold(0.0, f64::max);
    let max_neg = scores
        .iter()
        .copied()
        .filter(|s| *s < 0.0)
        .fold(0.0, |a: f64, s| a.max(-s));
    scores
        .iter()
        .map(|&s| {
            if s > 0.0 {
                Some((POSITIVE_RGB, s / max_pos))
            } else if s < 0.0 {
                Some((NEGATIVE_RGB, -s / max_neg))
            } else {
                None
            }
        })
        .collect()
}

fn render_document(out: &mut String, doc: &ScoredDocument) {
    let _ = writeln!(
        out,
        "<div class=\"doc\"><div class=\"meta\">#{} {} (retriever rank {}, score {:.6}, kept {}, dropped {})</div><p>",
        doc.rank,
        escape_html(&doc.doc_id),
        doc.retriever_rank,
        doc.score,
        doc.kept_tokens,
        doc.dropped_tokens
    );
    for (tok, shade) in doc.tokens.iter().zip(token_shades(&doc.token_scores)) {
        let text = escape_html(tok);
        match shade {
            Some(((r, g, b), a)) => {
                let _ = write!(
                    out,
                    "<span style=\"background:rgba({r},{g},{b},{a:.3})\">{text}</span> "
                );
            }
            None => {
                let _ = write!(out, "<span>{text}</span> ");
            }
        }
    }
    out.push_str("</p></div>\n");
}

fn render_query(out: &mut String, q: &QueryResult) {
    let _ = writeln!(
        out,
        "<section><h2>{}: {}</h2>",
        escape_html(&q.qid),
        escape_html(&q.query)
    );
    for d in &q.documents {
        render_document(out, d);
    }
    out.push_str("</section>\n");
}

/// One heatmap per document, grouped by query.
pub fn render_heatmap(file: &TokenScoreFile) -> String {
    let mut out = String::from(
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>token scores</title>\n\
         <style>body{font-family:sans-serif;max-width:60em;margin:auto}.doc{margin:1em 0}\
         .meta{font-size:.85em;color:#555}span{white-space:pre-wrap}</style></head><body>\n",
    );
    let _ = writeln!(out, "<h1>{} ({})</h1>", escape_html(&file.backend), file.mode);
    for q in &file.queries {
        render_query(&mut out, q);
    }
    out.push_str("</body></html>\n");
    out
}
