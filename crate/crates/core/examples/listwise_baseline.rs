//! The generative listwise baseline this method is compared against: a
//! sliding window walks from the tail of the candidate list to the head,
//! asking the model to output an ordering like `[2] > [1] > [3]` per window.
//! Here the "model" is simulated and sometimes produces malformed output.
//!
//!     cargo run --example listwise_baseline

use icr::complexity::{apply_sliding_window, count_forward_passes, sliding_window_schedule, CostParams, Method};
use icr::metrics::{parse_listwise_ranking, success_rate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> anyhow::Result<()> {
    // candidate i has hidden relevance (i * 37) % 100
    let candidates: Vec<u32> = (0..100).map(|i| (i * 37) % 100).collect();
    let schedule = sliding_window_schedule(candidates.len(), 20, 10)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut outputs = Vec::new();

    let (ranked, stats) = apply_sliding_window(&candidates, &schedule, |window| {
        let mut ids: Vec<usize> = (1..=window.len()).collect();
        ids.sort_by_key(|&i| std::cmp::Reverse(window[i - 1]));
        let mut text = ids.iter().map(|i| format!("[{i}]")).collect::<Vec<_>>().join(" > ");
        if rng.gen_bool(0.2) {
            text.truncate(text.len() / 2); // the model stopped early
        }
        let parsed = parse_listwise_ranking(&text, window.len());
        outputs.push(parsed.clone());
        parsed
    });

    println!(
        "{} windows, {} malformed, success rate {:.2}",
        stats.windows,
        stats.malformed,
        success_rate(&outputs).unwrap_or(0.0)
    );
    println!("top 10 after re-ranking: {:?}", &ranked[..10]);
    let p = CostParams {
        decode_per_window: Some(20),
        ..CostParams::default()
    };
    println!(
        "forward passes: listwise {} vs attention re-ranking {}",
        count_forward_passes(Method::ListwiseWindow, 100, &p)?.total(),
        count_forward_passes(Method::Icr, 100, &p)?.total()
    );
    Ok(())
}
