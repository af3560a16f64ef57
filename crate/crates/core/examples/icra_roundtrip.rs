//! Write query-row attention to the binary dump format, read it back and
//! validate it, then show what a corrupted row looks like to the validator.
//!
//!     cargo run --example icra_roundtrip

use icr::icra::{dump_to_bytes, read_dump, validate_dump, DEFAULT_ROW_SUM_TOLERANCE};
use icr::{ToyConfig, ToyModel};

fn main() -> anyhow::Result<()> {
    let model = ToyModel::new(ToyConfig {
        layers: 2,
        heads: 4,
        seed: 1,
        ..ToyConfig::default()
    })?;
    let ids: Vec<u32> = (0..24).map(|i| (i * 37 % 4096) as u32).collect();
    let slice = model.forward_rows(&ids, 20..24)?;

    let bytes = dump_to_bytes(&slice, "toy-l2h4");
    let back = read_dump(&bytes)?;
    assert_eq!(back.slice, slice);
    println!(
        "{} bytes, model {:?}, {} rows per head",
        bytes.len(),
        back.model_name,
        back.slice.row_indices().len()
    );
    let report = validate_dump(&back.slice, DEFAULT_ROW_SUM_TOLERANCE);
    println!(
        "clean dump: {} rows checked, {} violations",
        report.rows_checked,
        report.violations.len()
    );

    let mut bad = back.slice.clone();
    bad.row_mut(1, 2, 0).iter_mut().for_each(|v| *v *= 2.0);
    for v in validate_dump(&bad, DEFAULT_ROW_SUM_TOLERANCE).violations {
        println!(
            "corrupted: layer {} head {} row {}: {:?}",
            v.layer, v.head, v.row, v.kind
        );
    }

    match read_dump(&bytes[..bytes.len() - 3]) {
        Err(e) => println!("truncated file: {e}"),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
