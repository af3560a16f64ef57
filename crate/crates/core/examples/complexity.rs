//! Forward-pass counts of LLM re-ranking strategies as the candidate list grows.
//!
//!     cargo run --example complexity

use icr::complexity::{count_forward_passes, CostParams, Method};

fn main() -> anyhow::Result<()> {
    let p = CostParams::default();
    print!("{:<18}", "N");
    let ns = [10, 20, 50, 100, 200, 500];
    for n in ns {
        print!("{n:>10}");
    }
    println!();
    for m in Method::ALL {
        print!("{:<18}", m.to_string());
        for n in ns {
            print!("{:>10}", count_forward_passes(m, n, &p)?.total());
        }
        println!();
    }
    Ok(())
}
