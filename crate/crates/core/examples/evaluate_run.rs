//! Score TREC runs for two tasks with nDCG@10, Recall@2/5 and All-Recall@5,
//! reporting per-task means plus micro and macro averages.
//!
//!     cargo run --example evaluate_run

use icr::metrics::{report, Metric, Qrels, Run};

fn main() -> anyhow::Result<()> {
    let qrels_a = Qrels::parse("q1 0 d1 1\nq1 0 d4 1\nq2 0 d2 2\nq2 0 d3 1\n")?;
    let run_a = Run::parse(
        "q1 Q0 d1 1 9.0 icr\nq1 Q0 d2 2 8.0 icr\nq1 Q0 d4 3 7.0 icr\n\
         q2 Q0 d3 1 3.0 icr\nq2 Q0 d2 2 2.0 icr\n",
    )?;
    let qrels_b = Qrels::parse("q9 0 x 1\n")?;
    let run_b = Run::parse("q9 Q0 y 1 1.0 icr\nq9 Q0 x 2 0.5 icr\n")?;

    let mut metrics = vec![
        Metric::Ndcg(10),
        Metric::Recall(2),
        Metric::Recall(5),
        Metric::AllRecall(5),
    ];
    metrics.sort();
    let rep = report(
        &[("multi-hop".into(), run_a, qrels_a), ("single".into(), run_b, qrels_b)],
        &metrics,
    )?;
    print!("{}", rep.to_table());
    Ok(())
}
