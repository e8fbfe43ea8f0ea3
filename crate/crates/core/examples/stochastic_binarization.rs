//! Empirical mean of the stochastic binarizer inside and outside the cutoff band.
//!
//! Run with `cargo run --release --example stochastic_binarization`.

use qubithd::hv::{sign_binarize, stochastic_binarize, IntHV};
use qubithd::rng::{RngStream, StreamLabel};

fn main() -> qubithd::Result<()> {
    let b = 100.0;
    let draws = 100_000;
    let mut rng = RngStream::new(11, StreamLabel::FlipNoise);
    println!("{:>6}  {:>8}  {:>8}  {:>4}", "x", "mean", "x/b", "sign");
    for x in [-150, -100, -50, -10, 0, 10, 50, 100, 150] {
        let row = IntHV::from_values(vec![x; draws])?;
        let bits = stochastic_binarize(&row, b, &mut rng)?;
        let mean = (2.0 * bits.count_ones() as f64 - draws as f64) / draws as f64;
        let expected = (x as f64 / b).clamp(-1.0, 1.0);
        let sign = sign_binarize(&IntHV::from_values(vec![x])?).get(0);
        println!("{x:>6}  {mean:>8.4}  {expected:>8.4}  {sign:>4}");
    }
    Ok(())
}
