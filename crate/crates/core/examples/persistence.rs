//! Storing a trained model and loading it back bit for bit.
//!
//! Run with `cargo run --release --example persistence`.

use qubithd::data::{split_validation, synthetic_clusters, SyntheticSpec};
use qubithd::encoder::{Codebook, CodebookParams, FeatureScaler};
use qubithd::model::{train, TrainConfig};
use qubithd::persist::{load_model, store_model, ModelFile};

fn main() -> qubithd::Result<()> {
    let data = synthetic_clusters(&SyntheticSpec {
        classes: 3,
        features: 8,
        per_class: 40,
        noise: 0.1,
        seed: 9,
    })?;
    let split = split_validation(&data, 0.25, 9)?;
    let params = CodebookParams {
        dim: 2048,
        levels: 16,
        seed: 9,
    };
    let codebook = Codebook::new(params.clone(), FeatureScaler::fit(split.train.points())?)?;
    let config = TrainConfig {
        dim: 2048,
        levels: 16,
        seed: 9,
        max_epochs: 5,
        ..TrainConfig::default()
    };
    let report = train(&config, &split.train, &split.validation, &codebook)?;

    let file = ModelFile {
        codebook: params,
        scaler: codebook.scaler().clone(),
        labels: data.label_map().clone(),
        train_seed: 9,
        alpha: config.alpha,
        model: report.best,
        manifest_digest: [0; 32],
    };
    let path = std::env::temp_dir().join(format!("qubithd-example-{}.model", std::process::id()));
    store_model(&path, &file)?;
    let loaded = load_model(&path)?;
    let bytes = std::fs::read(&path)?;
    println!("stored {} bytes to {}", bytes.len(), path.display());
    println!("loaded model equal: {}", loaded == file);
    println!("re-serialized bytes equal: {}", loaded.to_bytes()? == bytes);

    // the codebook is regenerated from its seed, so encodings match too
    let again = loaded.codebook()?.encode(split.validation.point(0))?;
    println!(
        "encoding equal after reload: {}",
        again == codebook.encode(split.validation.point(0))?
    );

    // a single flipped byte is caught by the trailing digest
    let mut corrupt = bytes.clone();
    corrupt[40] ^= 1;
    println!(
        "corrupted load: {}",
        ModelFile::from_bytes(&corrupt).unwrap_err()
    );
    std::fs::remove_file(&path)?;
    Ok(())
}
