//! Central finite differences against reverse-mode gradients, for every
//! primitive and for both full models.

use teachlab::model::{gradient_check, DecoderKind};
use teachlab::numerics::gradcheck::{op_suite, TOLERANCE};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut reports = op_suite(1)?;
    reports.push(gradient_check(DecoderKind::LinearHead, 1)?);
    reports.push(gradient_check(DecoderKind::ArDecoder, 1)?);
    for r in &reports {
        println!("{:<20} {:>9.2e}  ({} elements)", r.label, r.max_rel_error, r.elements);
    }
    let worst = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    println!("worst {worst:.2e}, tolerance {TOLERANCE:e}: {}", if worst < TOLERANCE { "ok" } else { "FAILED" });
    Ok(())
}
