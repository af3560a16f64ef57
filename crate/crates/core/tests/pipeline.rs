mod common;

use std::collections::HashMap;
use std::path::Path;

use icr::backend::{BackendError, PlantConfig};
use icr::bench::{bench_pipeline, BenchConfig};
use icr::icra::{dump_path, validate_dir, write_dump_file};
use icr::layout::{LayoutExport, Pass, QA_INSTRUCTION};
use icr::metrics::Run;
use icr::pipeline::{
    export_layouts, open_backend, run_rerank, write_rerank_output, BackendSpec, PipelineError, Reranker, RunConfig,
    TokenScoreFile,
};
use icr::viz::render_heatmap;
use icr::{ScoreMode, ToyConfig, ToyModel};

use common::write_fixture;

fn config(dir: &Path) -> RunConfig {
    RunConfig::new(
        dir.join("corpus.jsonl"),
        dir.join("queries.jsonl"),
        dir.join("candidates.jsonl"),
    )
}

fn run_text(dir: &Path, cfg: &RunConfig, name: &str) -> String {
    let out = run_rerank(cfg).unwrap();
    let path = dir.join(name);
    write_rerank_output(&out, cfg.mode, &path).unwrap();
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn toy_run_has_one_block_per_query() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    let text = run_text(dir.path(), &config(dir.path()), "run.trec");
    let run = Run::parse(&text).unwrap();
    assert_eq!(run.queries.len(), 3);
    assert_eq!(run.queries["q3"].len(), 5);
    // input order, rank column = position, non-increasing scores
    let qids: Vec<&str> = text.lines().map(|l| l.split(' ').next().unwrap()).collect();
    assert_eq!(qids.first(), Some(&"q1"));
    assert_eq!(qids.last(), Some(&"q3"));
    for list in run.queries.values() {
        assert!(list.windows(2).all(|w| w[0].1 >= w[1].1));
    }
    for (i, line) in text.lines().filter(|l| l.starts_with("q1 ")).enumerate() {
        assert_eq!(line.split(' ').nth(3).unwrap(), (i + 1).to_string());
    }
}

#[test]
fn top_k_truncates_candidates() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    let mut cfg = config(dir.path());
    cfg.top_k = Some(2);
    let run = Run::parse(&run_text(dir.path(), &cfg, "run.trec")).unwrap();
    assert!(run.queries.values().all(|l| l.len() == 2));
}

#[test]
fn token_scores_cover_every_document() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    let cfg = config(dir.path());
    let out = run_rerank(&cfg).unwrap();
    let tokens = write_rerank_output(&out, cfg.mode, &dir.path().join("run.trec")).unwrap();
    let file: TokenScoreFile = serde_json::from_str(&std::fs::read_to_string(tokens).unwrap()).unwrap();
    assert_eq!(file.queries.len(), 3);
    for q in &file.queries {
        for d in &q.documents {
            assert_eq!(d.tokens.len(), d.token_scores.len());
            assert_eq!(d.kept_tokens + d.dropped_tokens, d.tokens.len());
            assert!(d.tokens[0].starts_with('['));
        }
        assert_eq!(q.forward_passes, 2);
        assert!(q.reused_prefix_tokens > 0);
    }
    let html = render_heatmap(&file);
    assert_eq!(html.matches("class=\"doc\"").count(), 12);
}

fn planted_fixture(dir: &Path) -> RunConfig {
    let words = [
        "red fox runs fast today",
        "blue sea is deep now",
        "tall tree grows old here",
        "cold wind blows all day",
    ];
    let corpus: String = words
        .iter()
        .enumerate()
        .map(|(i, t)| format!("{{\"_id\":\"p{i}\",\"text\":\"{t}\"}}\n"))
        .collect();
    std::fs::write(dir.join("corpus.jsonl"), corpus).unwrap();
    std::fs::write(dir.join("queries.jsonl"), "{\"_id\":\"q\",\"text\":\"which one?\"}\n").unwrap();
    std::fs::write(
        dir.join("candidates.jsonl"),
        "{\"qid\":\"q\",\"docids\":[\"p0\",\"p1\",\"p2\",\"p3\"]}\n",
    )
    .unwrap();
    // p2 is the target; the document shown first (p3 under reversed order) gets a bias above the boost
    let plant = PlantConfig {
        boost: 1.0,
        base: 1.0,
        position_bias: vec![2.0, 0.0, 0.0, 0.0],
        layers: 2,
        heads: 2,
        targets: HashMap::from([("q".to_string(), "p2".to_string())]),
    };
    let plant_path = dir.join("plant.json");
    std::fs::write(&plant_path, serde_json::to_string(&plant).unwrap()).unwrap();
    let mut cfg = config(dir);
    cfg.backend = BackendSpec::Planted { plant: plant_path };
    cfg
}

#[test]
fn planted_bias_needs_calibration() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = planted_fixture(dir.path());
    let top = |cfg: &RunConfig| run_rerank(cfg).unwrap().results[0].documents[0].doc_id.clone();
    assert_eq!(top(&cfg), "p2");
    cfg.mode = ScoreMode::NoCalibration;
    assert_eq!(top(&cfg), "p3");
}

#[test]
fn dump_backend_matches_toy_backend() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    let toy_cfg = ToyConfig {
        seed: 5,
        ..ToyConfig::default()
    };
    let mut cfg = config(dir.path());
    cfg.backend = BackendSpec::Toy(toy_cfg);
    let toy_run = run_text(dir.path(), &cfg, "toy.trec");

    // write dumps the way an external exporter would
    let dumps = dir.path().join("dumps");
    std::fs::create_dir(&dumps).unwrap();
    let model = ToyModel::new(toy_cfg).unwrap();
    let (backend, profile) = open_backend(&cfg).unwrap();
    let rr = Reranker::new(profile, backend.as_ref());
    for (q, docs) in icr::pipeline::load_batch(&cfg).unwrap() {
        let (l, c) = rr.layouts(&q, &docs).unwrap();
        for (layout, pass) in [(&l, Pass::Query), (&c, Pass::Calibration)] {
            let slice = model.forward_rows(&layout.token_ids, layout.query_span()).unwrap();
            write_dump_file(&dump_path(&dumps, &q.id, pass), &slice, "toy").unwrap();
        }
    }
    assert!(validate_dir(&dumps, 1e-3)
        .unwrap()
        .iter()
        .all(|(_, r)| r.as_ref().unwrap().is_clean()));

    cfg.backend = BackendSpec::Dump { dir: dumps.clone() };
    assert_eq!(run_text(dir.path(), &cfg, "dump.trec"), toy_run);

    std::fs::remove_file(dump_path(&dumps, "q2", Pass::Calibration)).unwrap();
    let err = run_rerank(&cfg).unwrap_err();
    assert!(
        matches!(err, PipelineError::Backend { ref query, source: BackendError::MissingCalibrationDump(_) } if query == "q2"),
        "{err}"
    );
    // the uncalibrated ablation does not need the calibration dump
    cfg.mode = ScoreMode::NoCalibration;
    assert!(run_rerank(&cfg).is_ok());
}

#[test]
fn layout_export_pairs() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    let out = dir.path().join("layouts");
    let written = export_layouts(&config(dir.path()), &out).unwrap();
    assert_eq!(written.len(), 6);
    let read = |name: &str| -> LayoutExport {
        serde_json::from_str(&std::fs::read_to_string(out.join(name)).unwrap()).unwrap()
    };
    let (q, c) = (read("q1.q.layout.json"), read("q1.cal.layout.json"));
    assert!(q.prompt.contains(QA_INSTRUCTION));
    assert_eq!(c.query_text, "N/A");
    assert_eq!(q.documents, c.documents);
    assert_eq!(q.query_text, "What is the highest mountain?");
    let span = q.query.byte_range;
    assert_eq!(&q.prompt[span[0]..span[1]], q.query_text);
    let ie = read("q2.q.layout.json");
    assert!(ie.prompt.starts_with(icr::layout::IE_INSTRUCTION));
}

#[test]
fn missing_query_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    std::fs::write(
        dir.path().join("candidates.jsonl"),
        "{\"qid\":\"q9\",\"docids\":[\"d1\"]}\n",
    )
    .unwrap();
    assert!(matches!(run_rerank(&config(dir.path())), Err(PipelineError::UnknownQuery(q)) if q == "q9"));
}

#[test]
fn bench_reports_two_passes() {
    let cfg = BenchConfig {
        toy: ToyConfig {
            layers: 1,
            heads: 1,
            model_dim: 8,
            ..BenchConfig::default().toy
        },
        ks: vec![6, 2, 4],
        trials: 2,
        doc_words: 5,
        ..BenchConfig::default()
    };
    let rep = bench_pipeline(&cfg).unwrap();
    let ks: Vec<usize> = rep.rows.iter().map(|r| r.k).collect();
    assert_eq!(ks, vec![2, 2, 4, 4, 6, 6]);
    assert!(rep.rows.iter().all(|r| r.attention_passes == 2 && r.method == "icr"));
    assert!(rep.summary.iter().all(|s| s.icr_forward_passes == 2));
    assert!(rep.summary[2].context_tokens > rep.summary[0].context_tokens);
    let csv = rep.to_csv();
    assert!(csv.starts_with("method,K,trial,ms\nicr,2,0,"));
    assert_eq!(csv.lines().count(), 7);
}
