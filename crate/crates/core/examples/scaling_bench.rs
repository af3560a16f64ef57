//! Wall-clock of the toy pipeline as the number of candidates grows. The
//! attention pass count stays at two while the context gets longer.
//!
//!     cargo run --release --example scaling_bench

use icr::bench::{bench_pipeline, BenchConfig};

fn main() -> anyhow::Result<()> {
    let config = BenchConfig {
        ks: vec![10, 20, 40],
        trials: 3,
        doc_words: 16,
        ..BenchConfig::default()
    };
    let report = bench_pipeline(&config)?;
    println!(
        "{:>4} {:>8} {:>8} {:>10} {:>8} {:>12}",
        "K", "tokens", "reused", "median ms", "icr FP", "listwise FP"
    );
    for s in &report.summary {
        println!(
            "{:>4} {:>8} {:>8} {:>10.2} {:>8} {:>12}",
            s.k, s.context_tokens, s.reused_prefix_tokens, s.median_ms, s.icr_forward_passes, s.listwise_forward_passes
        );
    }
    print!("\n{}", report.to_csv());
    Ok(())
}
