//! Ranking metrics, TREC file formats and listwise output parsing.
//!
//! nDCG uses linear gain and a `log2(i + 1)` discount (the trec_eval
//! `ndcg_cut` convention). Recall-type metrics skip queries with no relevant
//! document; nDCG scores such queries as 0 as long as the query is judged.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("query `{0}` has no relevance judgments")]
    UnknownQuery(String),
    #[error("k must be at least 1")]
    InvalidK,
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("run is empty")]
    EmptyRun,
    #[error("query `{query}` lists document `{doc}` twice")]
    DuplicateDoc { query: String, doc: String },
}

/// Relevance judgments: query id → doc id → grade.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    judgments: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query: impl Into<String>, doc: impl Into<String>, grade: u32) {
        self.judgments
            .entry(query.into())
            .or_default()
            .insert(doc.into(), grade);
    }

    pub fn query(&self, query: &str) -> Option<&BTreeMap<String, u32>> {
        self.judgments.get(query)
    }

    pub fn queries(&self) -> impl Iterator<Item = &str> {
        self.judgments.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.judgments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.judgments.is_empty()
    }

    /// Parse TREC qrels: `qid 0 docid grade`, or `qid docid grade`.
    /// Fields may be separated by tabs or spaces. Negative grades are clamped to 0.
    pub fn parse(text: &str) -> Result<Self, EvalError> {
        let mut qrels = Qrels::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let fields: Vec<&str> = line.split_whitespace().collect();
            let (q, d, g) = match fields[..] {
                [] => continue,
                [q, _, d, g] => (q, d, g),
                [q, d, g] => (q, d, g),
                _ => {
                    return Err(EvalError::Format {
                        line: line_no,
                        message: format!("expected 3 or 4 fields, found {}", fields.len()),
                    })
                }
            };
            let grade: i64 = g.parse().map_err(|_| EvalError::Format {
                line: line_no,
                message: format!("grade `{g}` is not an integer"),
            })?;
            qrels.insert(q, d, grade.max(0) as u32);
        }
        Ok(qrels)
    }
}

/// A ranked list per query.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Run {
    pub queries: BTreeMap<String, Vec<(String, f64)>>,
}

impl Run {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query: impl Into<String>, ranking: Vec<(String, f64)>) {
        self.queries.insert(query.into(), ranking);
    }

    pub fn doc_ids(&self, query: &str) -> Option<Vec<&str>> {
        self.queries
            .get(query)
            .map(|r| r.iter().map(|(d, _)| d.as_str()).collect())
    }

    /// Parse `qid Q0 docid rank score tag` lines. Each query's list is ordered
    /// by the rank column.
    pub fn parse(text: &str) -> Result<Self, EvalError> {
        let mut rows: BTreeMap<String, Vec<(usize, String, f64)>> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            let [q, _, d, r, s, _] = fields[..] else {
                return Err(EvalError::Format {
                    line: line_no,
                    message: format!("expected 6 fields, found {}", fields.len()),
                });
            };
            let rank: usize = r.parse().map_err(|_| EvalError::Format {
                line: line_no,
                message: format!("rank `{r}` is not an integer"),
            })?;
            let score: f64 = s.parse().map_err(|_| EvalError::Format {
                line: line_no,
                message: format!("score `{s}` is not a number"),
            })?;
            rows.entry(q.to_string())
                .or_default()
                .push((rank, d.to_string(), score));
        }
        if rows.is_empty() {
            return Err(EvalError::EmptyRun);
        }
        let mut run = Run::new();
        for (q, mut list) in rows {
            list.sort_by_key(|(r, _, _)| *r);
            let mut seen = HashSet::new();
            for (_, d, _) in &list {
                if !seen.insert(d.clone()) {
                    return Err(EvalError::DuplicateDoc {
                        query: q,
                        doc: d.clone(),
                    });
                }
            }
            run.insert(q, list.into_iter().map(|(_, d, s)| (d, s)).collect());
        }
        Ok(run)
    }

    /// Write TREC run lines; the rank column is the 1-based list position.
    pub fn write_trec<W: Write>(&self, tag: &str, mut w: W) -> std::io::Result<()> {
        for (q, list) in &self.queries {
            for (i, (d, s)) in list.iter().enumerate() {
                writeln!(w, "{q} Q0 {d} {} {s:.10} {tag}", i + 1)?;
            }
        }
        Ok(())
    }
}

fn check_k(k: usize) -> Result<(), EvalError> {
    if k == 0 {
        Err(EvalError::InvalidK)
    } else {
        Ok(())
    }
}

/// nDCG@k of one ranked list against one query's judgments. 0 when no
/// judged document is relevant.
pub fn ndcg_at_k(ranking: &[&str], judgments: &BTreeMap<String, u32>, k: usize) -> Result<f64, EvalError> {
    check_k(k)?;
    let dcg: f64 = ranking
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, d)| f64::from(judgments.get(*d).copied().unwrap_or(0)) / ((i + 2) as f64).log2())
        .sum();
    let mut ideal: Vec<u32> = judgments.values().copied().filter(|&g| g > 0).collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| f64::from(g) / ((i + 2) as f64).log2())
        .sum();
    Ok(if idcg > 0.0 { dcg / idcg } else { 0.0 })
}

fn relevant(judgments: &BTreeMap<String, u32>) -> HashSet<&str> {
    judgments
        .iter()
        .filter(|(_, &g)| g > 0)
        .map(|(d, _)| d.as_str())
        .collect()
}

/// Fraction of relevant documents in the top k; `None` without relevant documents.
pub fn recall_at_k(ranking: &[&str], judgments: &BTreeMap<String, u32>, k: usize) -> Result<Option<f64>, EvalError> {
    check_k(k)?;
    let rel = relevant(judgments);
    if rel.is_empty() {
        return Ok(None);
    }
    let hits = ranking.iter().take(k).filter(|d| rel.contains(*d)).count();
    Ok(Some(hits as f64 / rel.len() as f64))
}

/// 1 when every relevant document is in the top k; `None` without relevant documents.
pub fn all_recall_at_k(
    ranking: &[&str],
    judgments: &BTreeMap<String, u32>,
    k: usize,
) -> Result<Option<f64>, EvalError> {
    Ok(recall_at_k(ranking, judgments, k)?.map(|r| if r >= 1.0 { 1.0 } else { 0.0 }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Metric {
    Ndcg(usize),
    Recall(usize),
    AllRecall(usize),
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Ndcg(k) => write!(f, "ndcg@{k}"),
            Metric::Recall(k) => write!(f, "recall@{k}"),
            Metric::AllRecall(k) => write!(f, "all_recall@{k}"),
        }
    }
}

impl FromStr for Metric {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (name, k) = s.split_once('@').ok_or_else(|| format!("metric `{s}` lacks @k"))?;
        let k: usize = k.parse().map_err(|_| format!("bad cutoff in `{s}`"))?;
        if k == 0 {
            return Err(format!("cutoff must be positive in `{s}`"));
        }
        match name.to_ascii_lowercase().as_str() {
            "ndcg" => Ok(Metric::Ndcg(k)),
            "recall" => Ok(Metric::Recall(k)),
            "all_recall" | "allrecall" => Ok(Metric::AllRecall(k)),
            _ => Err(format!("unknown metric `{name}`")),
        }
    }
}

impl Metric {
    /// Per-query value; `None` means the query is skipped for this metric.
    pub fn score(self, ranking: &[&str], judgments: &BTreeMap<String, u32>) -> Result<Option<f64>, EvalError> {
        match self {
            Metric::Ndcg(k) => ndcg_at_k(ranking, judgments, k).map(Some),
            Metric::Recall(k) => recall_at_k(ranking, judgments, k),
            Metric::AllRecall(k) => all_recall_at_k(ranking, judgments, k),
        }
    }

    /// The metric families reported per cutoff.
    pub fn for_cutoffs(ks: &[usize]) -> Vec<Metric> {
        let mut out: Vec<Metric> = ks
            .iter()
            .flat_map(|&k| [Metric::Ndcg(k), Metric::Recall(k), Metric::AllRecall(k)])
            .collect();
        out.sort();
        out.dedup();
        out
    }
}

/// Per-query values of `metric` for every query in the run.
pub fn evaluate(run: &Run, qrels: &Qrels, metric: Metric) -> Result<BTreeMap<String, f64>, EvalError> {
    let mut out = BTreeMap::new();
    for (q, list) in &run.queries {
        let judgments = qrels.query(q).ok_or_else(|| EvalError::UnknownQuery(q.clone()))?;
        let ids: Vec<&str> = list.iter().map(|(d, _)| d.as_str()).collect();
        if let Some(v) = metric.score(&ids, judgments)? {
            out.insert(q.clone(), v);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub task: String,
    pub per_query: BTreeMap<String, f64>,
    pub mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: String,
    pub tasks: Vec<TaskResult>,
    /// Mean over all pooled queries.
    pub micro: Option<f64>,
    /// Unweighted mean of task means.
    pub macro_avg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metrics: Vec<MetricSummary>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Evaluate several tasks, each a (name, run, qrels) triple.
pub fn report(tasks: &[(String, Run, Qrels)], metrics: &[Metric]) -> Result<MetricReport, EvalError> {
    let mut out = Vec::with_capacity(metrics.len());
    for &metric in metrics {
        let mut results = Vec::with_capacity(tasks.len());
        for (name, run, qrels) in tasks {
            let per_query = evaluate(run, qrels, metric)?;
            let m = mean(per_query.values().copied());
            results.push(TaskResult {
                task: name.clone(),
                per_query,
                mean: m,
            });
        }
        let micro = mean(results.iter().flat_map(|t| t.per_query.values().copied()));
        let macro_avg = mean(results.iter().filter_map(|t| t.mean));
        out.push(MetricSummary {
            metric: metric.to_string(),
            tasks: results,
            micro,
            macro_avg,
        });
    }
    Ok(MetricReport { metrics: out })
}

impl MetricReport {
    /// Plain-text table: one row per metric, one column per task plus averages.
    pub fn to_table(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{:.4}", v));
        let mut s = String::new();
        let Some(first) = self.metrics.first() else { return s };
        s.push_str(&format!("{:<16}", "metric"));
        for t in &first.tasks {
            s.push_str(&format!(" {:>12}", t.task));
        }
        s.push_str(&format!(" {:>12} {:>12}\n", "micro", "macro"));
        for m in &self.metrics {
            s.push_str(&format!("{:<16}", m.metric));
            for t in &m.tasks {
                s.push_str(&format!(" {:>12}", fmt(t.mean)));
            }
            s.push_str(&format!(" {:>12} {:>12}\n", fmt(m.micro), fmt(m.macro_avg)));
        }
        s
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("malformed ranking: {0}")]
pub struct MalformedRanking(pub String);

/// Parse a generated listwise ranking such as `[1] > [3] > [2]` into
/// identifiers. The leading `[` may be missing (when the prompt already ended
/// with it). Anything after the first line break is ignored. The identifiers
/// must be a permutation of `1..=n`.
pub fn parse_listwise_ranking(text: &str, n: usize) -> Result<Vec<usize>, MalformedRanking> {
    let bad = |m: &str| Err(MalformedRanking(m.to_string()));
    let line = text.trim_start().lines().next().unwrap_or("").trim();
    if line.is_empty() {
        return bad("empty output");
    }
    let mut ids = Vec::new();
    for (i, part) in line.split('>').enumerate() {
        let part = part.trim();
        let inner = part
            .strip_suffix(']')
            .ok_or(MalformedRanking(format!("`{part}` lacks `]`")))?;
        let inner = match inner.strip_prefix('[') {
            Some(rest) => rest,
            None if i == 0 => inner,
            None => return bad("identifier lacks `[`"),
        };
        let id: usize = inner
            .trim()
            .parse()
            .map_err(|_| MalformedRanking(format!("`{inner}` is not an identifier")))?;
        ids.push(id);
    }
    if ids.len() != n {
        return Err(MalformedRanking(format!(
            "expected {n} identifiers, found {}",
            ids.len()
        )));
    }
    let mut seen = vec![false; n];
    for &id in &ids {
        if id == 0 || id > n || std::mem::replace(&mut seen[id - 1], true) {
            return Err(MalformedRanking(format!("identifier {id} invalid or repeated")));
        }
    }
    Ok(ids)
}

/// Fraction of parse results that are well-formed; `None` for no results.
pub fn success_rate<T, E>(results: &[Result<T, E>]) -> Option<f64> {
    if results.is_empty() {
        return None;
    }
    Some(results.iter().filter(|r| r.is_ok()).count() as f64 / results.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn judg(pairs: &[(&str, u32)]) -> BTreeMap<String, u32> {
        pairs.iter().map(|(d, g)| (d.to_string(), *g)).collect()
    }

    #[test]
    fn ndcg_cases() {
        let j = judg(&[("a", 1), ("b", 0)]);
        assert_eq!(ndcg_at_k(&["a", "b"], &j, 10).unwrap(), 1.0);
        let v = ndcg_at_k(&["b", "a"], &j, 10).unwrap();
        assert!((v - 1.0 / 3f64.log2()).abs() < 1e-12);
        assert_eq!(ndcg_at_k(&["b", "x"], &j, 10).unwrap(), 0.0);
        assert_eq!(ndcg_at_k(&["a"], &judg(&[("a", 0)]), 10).unwrap(), 0.0);
        assert_eq!(ndcg_at_k(&["a"], &j, 0), Err(EvalError::InvalidK));
    }

    #[test]
    fn graded_ndcg() {
        // ideal: 2,1 ; run: 1,2
        let j = judg(&[("a", 2), ("b", 1)]);
        let dcg = 1.0 + 2.0 / 3f64.log2();
        let idcg = 2.0 + 1.0 / 3f64.log2();
        assert!((ndcg_at_k(&["b", "a"], &j, 10).unwrap() - dcg / idcg).abs() < 1e-12);
    }

    #[test]
    fn recall_cases() {
        let j = judg(&[("a", 1), ("b", 1)]);
        assert_eq!(recall_at_k(&["a", "x", "b"], &j, 5).unwrap(), Some(1.0));
        assert_eq!(recall_at_k(&["a", "x", "b"], &j, 2).unwrap(), Some(0.5));
        let j3 = judg(&[("a", 1), ("b", 1), ("c", 2)]);
        let r = recall_at_k(&["a", "b", "x", "y", "z", "c"], &j3, 5).unwrap().unwrap();
        assert!((r - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(recall_at_k(&["a"], &judg(&[("a", 0)]), 5).unwrap(), None);
    }

    #[test]
    fn all_recall_cases() {
        let j = judg(&[("a", 1), ("b", 1)]);
        assert_eq!(all_recall_at_k(&["a", "b"], &j, 5).unwrap(), Some(1.0));
        assert_eq!(all_recall_at_k(&["a", "x"], &j, 5).unwrap(), Some(0.0));
        assert_eq!(all_recall_at_k(&["a"], &judg(&[]), 5).unwrap(), None);
    }

    #[test]
    fn qrels_formats() {
        let q = Qrels::parse("q1\t0\td1\t2\nq1 d2 1\n\nq2 0 d3 -1\n").unwrap();
        assert_eq!(q.query("q1").unwrap()["d1"], 2);
        assert_eq!(q.query("q1").unwrap()["d2"], 1);
        assert_eq!(q.query("q2").unwrap()["d3"], 0);
        let err = Qrels::parse("q1 d1\n").unwrap_err();
        assert!(matches!(err, EvalError::Format { line: 1, .. }));
        assert!(matches!(
            Qrels::parse("a 0 b x"),
            Err(EvalError::Format { line: 1, .. })
        ));
    }

    #[test]
    fn run_parse_and_write() {
        let text = "q1 Q0 d2 2 0.5 t\nq1 Q0 d1 1 0.9 t\n";
        let run = Run::parse(text).unwrap();
        assert_eq!(run.doc_ids("q1").unwrap(), ["d1", "d2"]);
        let mut out = Vec::new();
        run.write_trec("icr", &mut out).unwrap();
        let again = Run::parse(std::str::from_utf8(&out).unwrap()).unwrap();
        assert_eq!(again, run);
        assert_eq!(Run::parse("\n"), Err(EvalError::EmptyRun));
        assert!(matches!(
            Run::parse("q1 Q0 d1 1\n"),
            Err(EvalError::Format { line: 1, .. })
        ));
        assert!(matches!(
            Run::parse("q Q0 d 1 1 t\nq Q0 d 2 0 t"),
            Err(EvalError::DuplicateDoc { .. })
        ));
    }

    #[test]
    fn unknown_query() {
        let mut run = Run::new();
        run.insert("q9", vec![("d".into(), 1.0)]);
        assert_eq!(
            evaluate(&run, &Qrels::new(), Metric::Ndcg(10)),
            Err(EvalError::UnknownQuery("q9".into()))
        );
    }

    #[test]
    fn macro_and_micro() {
        let mut qa = Qrels::new();
        let mut ra = Run::new();
        for q in ["a1", "a2", "a3"] {
            qa.insert(q, "d", 1);
            ra.insert(q, vec![("d".into(), 1.0)]);
        }
        let mut qb = Qrels::new();
        let mut rb = Run::new();
        qb.insert("b1", "d", 1);
        rb.insert("b1", vec![("x".into(), 1.0)]);
        let rep = report(&[("A".into(), ra, qa), ("B".into(), rb, qb)], &[Metric::Ndcg(10)]).unwrap();
        let m = &rep.metrics[0];
        assert_eq!(m.macro_avg, Some(0.5));
        assert_eq!(m.micro, Some(0.75));
        assert!(rep.to_table().contains("ndcg@10"));
    }

    #[test]
    fn metric_names() {
        for m in [Metric::Ndcg(10), Metric::Recall(2), Metric::AllRecall(5)] {
            assert_eq!(m.to_string().parse::<Metric>().unwrap(), m);
        }
        assert!("ndcg@0".parse::<Metric>().is_err());
        assert!("map@10".parse::<Metric>().is_err());
    }

    #[test]
    fn listwise_parse() {
        assert_eq!(parse_listwise_ranking("[1] > [3] > [2]", 3).unwrap(), vec![1, 3, 2]);
        assert_eq!(parse_listwise_ranking("2] > [1] > [3]", 3).unwrap(), vec![2, 1, 3]);
        assert_eq!(parse_listwise_ranking("[2]>[1]\nbecause...", 2).unwrap(), vec![2, 1]);
        assert!(parse_listwise_ranking("the ranking is unclear", 3).is_err());
        assert!(parse_listwise_ranking("[2] > [1]", 3).is_err());
        assert!(parse_listwise_ranking("[1] > [1] > [2]", 3).is_err());
        assert!(parse_listwise_ranking("[0] > [1]", 2).is_err());
        assert!(parse_listwise_ranking("", 1).is_err());
    }

    #[test]
    fn success_rates() {
        let r: Vec<Result<(), ()>> = vec![Ok(()), Ok(()), Err(()), Ok(())];
        assert_eq!(success_rate(&r), Some(0.75));
        assert_eq!(success_rate(&r[..2]), Some(1.0));
        assert_eq!(success_rate(&r[2..3]), Some(0.0));
        assert_eq!(success_rate::<(), ()>(&[]), None);
    }
}
