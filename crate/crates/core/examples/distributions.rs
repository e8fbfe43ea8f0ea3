//! Closed-form class-row element distributions against simulation.
//!
//! Run with `cargo run --release --example distributions`.

use qubithd::hv::{BinaryHV, IntHV};
use qubithd::rng::{RngStream, StreamLabel};
use qubithd::stats::{class_element_pmf, irwin_hall_pdf, row_sigma};

fn main() -> qubithd::Result<()> {
    // bundle n random vectors; every element is a sum of n fair signs
    let (n, dim) = (9u64, 20_000);
    let mut rng = RngStream::new(2, StreamLabel::BaseVectors);
    let mut row = IntHV::zeros(dim)?;
    for _ in 0..n {
        row.accumulate(&BinaryHV::random(dim, &mut rng)?, 1)?;
    }
    println!("value  pmf      empirical");
    for v in (-(n as i64)..=n as i64).step_by(2) {
        let seen = row.values().iter().filter(|&&x| x as i64 == v).count() as f64 / dim as f64;
        println!("{v:>5}  {:.5}  {seen:.5}", class_element_pmf(n, v)?);
    }
    println!(
        "row sigma {:.3}, sqrt(n) {:.3}",
        row_sigma(&row)?,
        (n as f64).sqrt()
    );

    println!("\nsum of 12 uniforms on [-1, 1] against Normal(0, 2):");
    for x in [0.0, 1.0, 2.0, 4.0, 6.0] {
        let normal = (-x * x / 8.0f64).exp() / (2.0 * (2.0 * std::f64::consts::PI).sqrt());
        println!("  x = {x:>3}: {:.5} vs {normal:.5}", irwin_hall_pdf(x, 12)?);
    }
    Ok(())
}
