use wienerlab::dataset::{build_pairs, synthetic_specimen, DatasetOptions, Protocol, Sample, Split};
use wienerlab::degrade::{Noise, PsfSpec};
use wienerlab::gradients::{fd_check, FD_STEP};
use wienerlab::rng::SampleRng;
use wienerlab::trainer::{loss, sample_gradient, train, Pipeline, StopReason, TrainConfig};
use wienerlab::{ImageGrid, KernelBank, Psf};

fn noiseless_pair() -> Sample {
    let x = synthetic_specimen(16, 16, 3);
    Sample {
        id: "p".into(),
        split: Split::Train,
        truth: x.clone(),
        degraded: x,
        psf_spec: PsfSpec::boxcar(1),
        psf: Psf::delta(),
        noise: Noise::Gaussian { std: 0.0 },
    }
}

fn small_set(protocol: Protocol, level: f64, n: u64) -> Vec<Sample> {
    let truths = (0..n).map(|i| synthetic_specimen(24, 24, 40 + i)).collect();
    let opts = DatasetOptions {
        levels: Some(vec![level]),
        ..Default::default()
    };
    build_pairs(truths, protocol, 6, &opts)
        .unwrap()
        .into_iter()
        .map(|(_, s)| s)
        .collect()
}

#[test]
fn overfits_a_single_noiseless_pair() {
    let pair = vec![noiseless_pair()];
    // Without first-moment momentum the sign-like L1 gradients do not overshoot.
    let cfg = TrainConfig {
        lr: 0.02,
        beta1: 0.0,
        epochs: 50,
        batch: 1,
        ..Default::default()
    };
    let out = train(&pair, &[], &KernelBank::default_bank(), &cfg, None).unwrap();
    assert_eq!(out.stop, StopReason::Completed);
    let losses: Vec<f64> = out.history[1..].iter().map(|r| r.train_loss).collect();
    let last = *losses.last().unwrap();
    // The loss sums over pixels; the bound is per pixel.
    let pixels = 16.0 * 16.0;
    assert!(last / pixels < 1e-3, "final loss {last}");
    assert!(last < 1e-3 * losses[0], "{} -> {last}", losses[0]);
    for w in losses.windows(2) {
        assert!(w[1] <= w[0] * 1.05 + 1e-9, "{} -> {}", w[0], w[1]);
    }
}

#[test]
fn loss_gradient_matches_differences_away_from_kinks() {
    let mut rng = SampleRng::new(8);
    let truth = ImageGrid::from_fn(8, 8, |_, _| rng.normal());
    let pred = ImageGrid::from_fn(8, 8, |_, _| rng.normal());
    let (_, g) = loss(&pred, &truth, 0.7).unwrap();
    let h = 1e-6;
    let mut checked = 0;
    for idx in 0..64 {
        let mut p = pred.clone();
        p.as_mut_slice()[idx] += h;
        let up = loss(&p, &truth, 0.7).unwrap().0;
        p.as_mut_slice()[idx] -= 2.0 * h;
        let down = loss(&p, &truth, 0.7).unwrap().0;
        // Skip coordinates near a kink of any term they touch.
        let (r, c) = (idx / 8, idx % 8);
        let e = |i: usize, j: usize| pred.get(i % 8, j % 8) - truth.get(i % 8, j % 8);
        let near = [
            e(r, c),
            e(r, c + 1) - e(r, c),
            e(r + 1, c) - e(r, c),
            e(r, c) - e(r, c + 7),
            e(r, c) - e(r + 7, c),
        ]
        .iter()
        .any(|v| v.abs() < 1e-3);
        if near {
            continue;
        }
        let fd = (up - down) / (2.0 * h);
        assert!((fd - g.as_slice()[idx]).abs() <= 1e-4 * fd.abs().max(1.0), "{idx}: {fd} vs {}", g.as_slice()[idx]);
        checked += 1;
    }
    assert!(checked > 40);
}

#[test]
fn pipeline_gradients_match_differences() {
    for (protocol, level, pipeline) in [
        (Protocol::Gaussian, 0.05, Pipeline::Direct),
        (Protocol::Poisson, 10.0, Pipeline::Vst),
        (Protocol::Poisson, 10.0, Pipeline::Direct),
    ] {
        let sample = &small_set(protocol, level, 1)[0];
        let mut rng = SampleRng::new(1);
        let mut bank = KernelBank::dct(3, 3, -1.0).unwrap();
        for k in bank.kernels_mut() {
            k.taps_mut().iter_mut().for_each(|t| *t += 0.1 * rng.normal());
        }
        let (_, grad) = sample_gradient(sample, &bank, pipeline, 1.0).unwrap();
        let params = bank.to_params();
        let report = fd_check(
            |p| {
                let b = bank.with_params(p).unwrap();
                sample_gradient(sample, &b, pipeline, 1.0).unwrap().0
            },
            &params,
            &grad.to_params(),
            FD_STEP,
        )
        .unwrap();
        // The L1 loss has kinks; a handful of pixels crossing one blurs single entries.
        assert!(report.max_rel_error() < 1e-2, "{pipeline:?}: {}", report.max_rel_error());
    }
}

#[test]
fn training_is_deterministic_across_thread_counts() {
    let set = small_set(Protocol::Gaussian, 0.01, 8);
    let (tr, va): (Vec<Sample>, Vec<Sample>) = set.into_iter().partition(|s| s.split == Split::Train);
    let cfg = TrainConfig {
        epochs: 3,
        batch: 2,
        seed: 5,
        lr: 1e-2,
        ..Default::default()
    };
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| train(&tr, &va, &KernelBank::default_bank(), &cfg, None).unwrap())
    };
    let a = run(1);
    let b = run(4);
    assert_eq!(a.bank.to_params(), b.bank.to_params());
    assert_eq!(a.adam, b.adam);
    assert_eq!(a.history_csv(), b.history_csv());
    let c = train(&tr, &va, &KernelBank::default_bank(), &TrainConfig { seed: 6, ..cfg }, None).unwrap();
    assert_ne!(a.bank.to_params(), c.bank.to_params());
}

#[test]
fn resuming_from_adam_state_continues_the_run() {
    let set = small_set(Protocol::Gaussian, 0.01, 4);
    let cfg = TrainConfig {
        epochs: 2,
        batch: 4,
        lr: 1e-2,
        ..Default::default()
    };
    let full = train(&set, &[], &KernelBank::default_bank(), &cfg, None).unwrap();
    let half = train(&set, &[], &KernelBank::default_bank(), &TrainConfig { epochs: 1, ..cfg }, None).unwrap();
    assert_eq!(half.adam.step, 1);
    assert_eq!(full.adam.step, 2);
    assert!(half.history.len() == 2 && full.history.len() == 3);
}

#[test]
fn early_stopping_respects_patience() {
    let set = small_set(Protocol::Gaussian, 0.01, 6);
    let cfg = TrainConfig {
        epochs: 200,
        batch: 2,
        lr: 0.5,
        patience: Some(3),
        ..Default::default()
    };
    let (tr, va): (Vec<Sample>, Vec<Sample>) = set.into_iter().partition(|s| s.split == Split::Train);
    let va = if va.is_empty() { tr.clone() } else { va };
    let out = train(&tr, &va, &KernelBank::default_bank(), &cfg, None).unwrap();
    if let StopReason::EarlyStop { epoch } = out.stop {
        let (best, _) = out.best.as_ref().unwrap();
        assert_eq!(epoch - best, 3);
    }
    assert!(out.bank.alpha().abs() <= 49.0);
    assert!(out.bank.to_params().iter().all(|v| v.is_finite()));
}
