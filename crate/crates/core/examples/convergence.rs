//! Convergence of cosine, deterministic and stochastic feedback over seeds.
//!
//! Run with `cargo run --release --example convergence`. The metrics stream
//! goes to stderr; the table goes to stdout.

use qubithd::cli::{cmd_compare, CompareArgs, DatasetKind, DatasetSource};
use qubithd::data::SyntheticSpec;
use qubithd::model::TrainConfig;

fn main() {
    let mut source = DatasetSource::new(DatasetKind::Synthetic);
    source.synthetic = SyntheticSpec {
        classes: 10,
        features: 200,
        per_class: 120,
        noise: 0.8,
        seed: 1,
    };
    let args = CompareArgs {
        source,
        config: TrainConfig {
            dim: 4096,
            max_epochs: 15,
            seed: 1,
            ..TrainConfig::default()
        },
        seeds: 3,
        timing: false,
    };
    let summary = match cmd_compare(&args, &mut std::io::stderr()) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("compare failed: {e}");
            std::process::exit(e.exit_code());
        }
    };
    println!(
        "{:<14} {:>6} {:>8} {:>6}",
        "variant", "peak", "epochs", "test"
    );
    for v in &summary.variants {
        println!(
            "{:<14} {:>6.3} {:>8.1} {:>6.3}",
            format!("{:?}", v.variant).to_lowercase(),
            v.median_peak_validation_accuracy,
            v.median_epochs_to_within_1pct,
            v.median_best_test_accuracy
        );
    }
    println!(
        "one-shot binary test accuracy {:.3}",
        summary.median_one_shot_binary_test_accuracy
    );
    match summary.convergence_reduction_pct {
        Some(p) => println!("stochastic vs deterministic epochs: {p:+.0}% reduction"),
        None => println!("deterministic variant peaked at epoch 0"),
    }
}
