//! Verifies tape gradients against central finite differences.
//!
//!     cargo run --example gradcheck
//!
//! Both model variants are checked on a fixed two-graph fixture. Every
//! parameter group gets its own line; the relative error should sit
//! around 1e-7 for a correct gradient at h = 1e-5, far below the 1e-4
//! gate. The trainable path weights are the subtle part: the tape holds
//! the normalization partition fixed, so the probe replays the captured
//! partitions instead of recomputing them.

use pan::gradcheck::{check_fixture, fixture_config};
use pan::model::Variant;

fn main() -> pan::Result<()> {
    let mut all_pass = true;
    for variant in [Variant::Pan, Variant::Hpan] {
        let config = fixture_config(variant);
        let report = check_fixture(&config, 1e-5, 1e-4)?;
        println!("{report}");
        all_pass &= report.all_pass();
    }
    if !all_pass {
        std::process::exit(5);
    }
    Ok(())
}
