//! Reading delimited and IDX files, and the stratified validation split.
//!
//! Run with `cargo run --release --example loading`. With arguments
//! `<images> <labels>` it reads an IDX pair (such as MNIST) instead of the
//! small files it writes itself.

use std::fs;

use qubithd::data::{load_csv, load_idx, split_validation, CsvSchema};

fn main() -> qubithd::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let dir = std::env::temp_dir().join(format!("qubithd-loading-{}", std::process::id()));
    fs::create_dir_all(&dir)?;

    let csv = dir.join("points.csv");
    fs::write(
        &csv,
        "0.1,0.5,cat\n0.2,0.4,cat\n0.9,0.1,dog\n0.8,0.3,dog\n0.85,0.2,dog\n0.15,0.45,cat\n",
    )?;
    let ds = load_csv(&csv, &CsvSchema::default())?;
    println!(
        "csv: {} points, {} features, labels {:?}",
        ds.len(),
        ds.features(),
        ds.label_map().names()
    );
    println!("     sha256 {}", ds.provenance()[0].sha256);
    let split = split_validation(&ds, 0.34, 1)?;
    println!(
        "     split {} train / {} validation",
        split.train.len(),
        split.validation.len()
    );

    let (images, labels) = if args.len() == 2 {
        (args[0].clone().into(), args[1].clone().into())
    } else {
        // two 2x2 images
        let mut img = Vec::new();
        for x in [0x803u32, 2, 2, 2] {
            img.extend_from_slice(&x.to_be_bytes());
        }
        img.extend_from_slice(&[0, 255, 255, 0, 10, 20, 30, 40]);
        let mut lab = Vec::new();
        for x in [0x801u32, 2] {
            lab.extend_from_slice(&x.to_be_bytes());
        }
        lab.extend_from_slice(&[3, 7]);
        let (ip, lp) = (dir.join("images-idx3-ubyte"), dir.join("labels-idx1-ubyte"));
        fs::write(&ip, img)?;
        fs::write(&lp, lab)?;
        (ip, lp)
    };
    let idx = load_idx(&images, &labels)?;
    println!(
        "idx: {} images of {} pixels, class counts {:?}",
        idx.len(),
        idx.features(),
        idx.class_counts()
    );
    println!(
        "     first image {:?}",
        &idx.point(0)[..idx.features().min(8)]
    );
    fs::remove_dir_all(&dir)?;
    Ok(())
}
