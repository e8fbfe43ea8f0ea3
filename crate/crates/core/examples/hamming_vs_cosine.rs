//! Accuracy and per-query latency of Hamming and cosine inference.
//!
//! Run with `cargo run --release --example hamming_vs_cosine`.

use qubithd::cli::{evaluate, EvalSplit};
use qubithd::encoder::EncodedSet;
use qubithd::hv::{BinaryHV, IntHV};
use qubithd::model::{train_encoded, TrainConfig};
use qubithd::rng::{RngStream, StreamLabel};

fn main() -> qubithd::Result<()> {
    // 26 prototypes; each point keeps 70% of its prototype's bits
    let (dim, classes) = (10_000, 26);
    let mut rng = RngStream::new(5, StreamLabel::BaseVectors);
    let protos: Vec<BinaryHV> = (0..classes)
        .map(|_| BinaryHV::random(dim, &mut rng))
        .collect::<Result<_, _>>()?;
    let noisy = |k: usize, rng: &mut RngStream| -> qubithd::Result<(IntHV, usize)> {
        let mut v = protos[k].clone();
        for i in 0..dim {
            if rng.unit() < 0.3 {
                v.flip(i);
            }
        }
        Ok((v.to_int(), k))
    };
    let points = |n: usize, rng: &mut RngStream| -> qubithd::Result<EncodedSet> {
        let pts = (0..n * classes)
            .map(|i| noisy(i % classes, rng))
            .collect::<qubithd::Result<Vec<_>>>()?;
        EncodedSet::from_points(pts)
    };
    let train = points(20, &mut rng)?;
    let validation = points(5, &mut rng)?;
    let test = points(40, &mut rng)?;

    let config = TrainConfig {
        dim,
        max_epochs: 5,
        ..TrainConfig::default()
    };
    let report = train_encoded(&config, &train, &validation, classes)?;
    let eval = evaluate(&report.best, &test, EvalSplit::Test, 1000).expect("evaluation");
    println!("binary accuracy {:.3}", eval.accuracy_binary);
    println!(
        "cosine accuracy {:.3}",
        eval.accuracy_cosine.unwrap_or(f64::NAN)
    );
    println!(
        "binary median   {:.0} ns/query",
        eval.latency.binary_median_ns
    );
    if let (Some(c), Some(s)) = (eval.latency.cosine_median_ns, eval.latency.speedup) {
        println!("cosine median   {c:.0} ns/query ({s:.1}x slower)");
    }
    Ok(())
}
