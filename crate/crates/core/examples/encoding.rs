//! Random hypervectors, binding, level vectors and point encoding.
//!
//! Run with `cargo run --release --example encoding`.

use qubithd::encoder::{Codebook, CodebookParams, FeatureScaler};
use qubithd::hv::{bind, hamming, BinaryHV};
use qubithd::rng::{RngStream, StreamLabel};

fn main() -> qubithd::Result<()> {
    let dim = 10_000;
    let mut rng = RngStream::new(7, StreamLabel::BaseVectors);

    // independent draws sit near D/2 apart
    let a = BinaryHV::random(dim, &mut rng)?;
    let b = BinaryHV::random(dim, &mut rng)?;
    println!("hamming(a, b) = {} (D/2 = {})", hamming(&a, &b)?, dim / 2);

    // binding is its own inverse under XNOR
    let bound = bind(&a, &b)?;
    println!(
        "hamming(bind(bind(a, b), b), a) = {}",
        hamming(&bind(&bound, &b)?, &a)?
    );

    let scaler = FeatureScaler::from_ranges(vec![0.0; 4], vec![1.0; 4])?;
    let codebook = Codebook::new(
        CodebookParams {
            dim,
            levels: 16,
            seed: 7,
        },
        scaler,
    )?;
    let levels = codebook.level_family();
    println!("\nlevel distances from L_0:");
    for q in [0, 1, 4, 8, 15] {
        println!(
            "  L_{q:<2} {:>5}",
            hamming(levels.level(0), levels.level(q))?
        );
    }

    let near = codebook.encode(&[0.1, 0.2, 0.3, 0.4])?;
    let close = codebook.encode(&[0.1, 0.2, 0.3, 0.5])?;
    let far = codebook.encode(&[0.9, 0.8, 0.7, 0.6])?;
    println!(
        "\ncosine(x, x') = {:.3}",
        qubithd::hv::cosine(&near, &close)?
    );
    println!("cosine(x, y)  = {:.3}", qubithd::hv::cosine(&near, &far)?);
    Ok(())
}
