//! Write a paired Poisson dataset and its manifest to a temporary directory.

use wienerlab::dataset::{make_dataset, synthetic_specimen, DatasetOptions, Protocol, Split};
use wienerlab::io::write_image;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = std::env::temp_dir().join(format!("wienerlab-example-{}", std::process::id()));
    let (src, out) = (root.join("sources"), root.join("dataset"));
    std::fs::create_dir_all(&src)?;
    for i in 0..2 {
        write_image(&src.join(format!("s{i}.wkimg")), &synthetic_specimen(128, 128, i))?;
    }
    let opts = DatasetOptions {
        patch: 32,
        ..Default::default()
    };
    let m = make_dataset(&src, &out, Protocol::Poisson, 9, &opts)?;
    for split in [Split::Train, Split::Val, Split::Test] {
        println!("{split}: {} pairs", m.split(split).count());
    }
    if let Some(r) = m.records.first() {
        println!("first record: {}", m.to_jsonl().lines().next().unwrap_or(""));
        println!("  psf {} noise {:?} peak {:?}", r.psf, r.noise, r.peak);
    }
    println!("written to {}", out.display());
    Ok(())
}

