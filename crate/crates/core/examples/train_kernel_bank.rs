//! Learn a kernel bank on a small synthetic Gaussian-noise set.

use wienerlab::dataset::{build_pairs, synthetic_specimen, DatasetOptions, Protocol, Sample, Split};
use wienerlab::trainer::{evaluate, input_quality, train, Pipeline, TrainConfig};
use wienerlab::KernelBank;

fn main() -> wienerlab::Result<()> {
    let truths = (0..12).map(|i| synthetic_specimen(48, 48, 200 + i)).collect();
    let opts = DatasetOptions {
        levels: Some(vec![0.01]),
        ..Default::default()
    };
    let samples: Vec<Sample> = build_pairs(truths, Protocol::Gaussian, 1, &opts)?
        .into_iter()
        .map(|(_, s)| s)
        .collect();
    let part = |s: Split| -> Vec<Sample> { samples.iter().filter(|p| p.split == s).cloned().collect() };
    let (tr, va, te) = (part(Split::Train), part(Split::Val), part(Split::Test));

    let init = KernelBank::dct(8, 3, -4.0)?;
    let cfg = TrainConfig {
        lr: 1e-3,
        epochs: 60,
        batch: 2,
        seed: 1,
        patience: Some(20),
        ..Default::default()
    };
    let out = train(&tr, &va, &init, &cfg, None)?;
    for r in out.history.iter().step_by(10) {
        let val = r.val.map(|q| q.psnr.to_string()).unwrap_or_default();
        println!("epoch {:>3}  loss {:>10.4}  val psnr {val}", r.epoch, r.train_loss);
    }
    println!("stop: {:?}, alpha {:.3}", out.stop, out.selected().alpha());
    println!("test input   {:?}", input_quality(&te)?);
    println!("test initial {:?}", evaluate(&te, &init, Pipeline::Direct)?);
    println!("test trained {:?}", evaluate(&te, out.selected(), Pipeline::Direct)?);
    Ok(())
}
