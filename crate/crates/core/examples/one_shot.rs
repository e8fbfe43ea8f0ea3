//! One-shot training followed by retraining on synthetic clusters.
//!
//! Run with `cargo run --release --example one_shot`.

use qubithd::data::{split_validation, synthetic_clusters, SyntheticSpec};
use qubithd::encoder::{Codebook, CodebookParams, FeatureScaler};
use qubithd::model::{train, BinarizerMode, Model, TrainConfig};
use qubithd::rng::{RngStream, StreamLabel};

fn main() -> qubithd::Result<()> {
    let data = synthetic_clusters(&SyntheticSpec {
        classes: 8,
        features: 32,
        per_class: 100,
        noise: 0.35,
        seed: 3,
    })?;
    let split = split_validation(&data, 0.2, 3)?;
    let scaler = FeatureScaler::fit(split.train.points())?;
    let codebook = Codebook::new(
        CodebookParams {
            dim: 4096,
            levels: 32,
            seed: 3,
        },
        scaler,
    )?;

    let train_set = codebook.encode_batch(split.train.points(), split.train.labels())?;
    let val_set = codebook.encode_batch(split.validation.points(), split.validation.labels())?;
    let mut rng = RngStream::new(3, StreamLabel::FlipNoise);
    let (one_shot, _) = Model::initial_train(
        &train_set,
        data.classes(),
        BinarizerMode::Deterministic,
        0.5,
        &mut rng,
    )?;
    println!(
        "one-shot: binary {:.3}, cosine {:.3}",
        one_shot.accuracy_binary(&val_set),
        one_shot.accuracy_cosine(&val_set)?
    );

    let config = TrainConfig {
        dim: 4096,
        levels: 32,
        seed: 3,
        max_epochs: 20,
        ..TrainConfig::default()
    };
    let report = train(&config, &split.train, &split.validation, &codebook)?;
    for s in &report.history {
        println!(
            "epoch {:>2}  errors {:>4}  validation {:.3}",
            s.epoch,
            s.train_errors,
            s.validation_accuracy.unwrap_or(0.0)
        );
    }
    println!(
        "best epoch {} at {:.3} (one-shot snapshot was {:.3})",
        report.best_epoch, report.best_validation_accuracy, report.initial_validation_accuracy
    );
    Ok(())
}
