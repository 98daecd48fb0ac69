//! Supervised training of a kernel bank with Adam.
//!
//! The loss on one pair is
//!
//! ```text
//! L = ‖x̂ − x‖₁ + w·‖∇x̂ − ∇x‖₁
//! ```
//!
//! with periodic forward differences for `∇`. Gradients flow back into the bank
//! through [`grad_bank`].

use std::fmt::Write as _;
use std::path::Path;

use log::{debug, info, warn};
use rayon::prelude::*;

use crate::dataset::{load_samples, Manifest, Sample, Split};
use crate::degrade::Noise;
use crate::error::{Error, Result};
use crate::gradients::{grad_bank, BankGradient};
use crate::grid::ImageGrid;
use crate::iterative::{forward_diff, forward_diff_adjoint};
use crate::metrics::{psnr, ssim, Psnr};
use crate::rng::SampleRng;
use crate::vst::{anscombe, inverse_clamped_derivative, inverse_clamped_value};
use crate::wiener::{wiener_solve, KernelBank, WienerPlan};

/// Updates that would push `|α|` past this bound are clamped.
pub const ALPHA_BOUND: f64 = 49.0;

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Loss and its subgradient with respect to `pred`.
pub fn loss(pred: &ImageGrid, truth: &ImageGrid, weight: f64) -> Result<(f64, ImageGrid)> {
    let e = pred.sub(truth)?;
    let (ex, ey) = forward_diff(&e);
    let data: f64 = e.as_slice().iter().map(|v| v.abs()).sum();
    let edges: f64 = ex
        .as_slice()
        .iter()
        .chain(ey.as_slice())
        .map(|v| v.abs())
        .sum();
    let grad = forward_diff_adjoint(&ex.map(sign), &ey.map(sign))
        .axpby(weight, &e.map(sign), 1.0)?;
    Ok((data + weight * edges, grad))
}

/// How a degraded observation is turned into an estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pipeline {
    /// Restore the observation (Poisson counts divided by the peak) directly.
    Direct,
    /// Anscombe transform, restore, exact unbiased inverse, divide by the peak.
    Vst,
}

fn peak_of(sample: &Sample) -> Result<f64> {
    match sample.noise {
        Noise::Poisson { peak } => Ok(peak),
        Noise::Gaussian { .. } => Err(Error::invalid(format!(
            "pair {} has gaussian noise; the VST pipeline needs poisson pairs",
            sample.id
        ))),
    }
}

struct Forward {
    input: ImageGrid,
    restored: ImageGrid,
    plan: WienerPlan,
    estimate: ImageGrid,
}

fn forward(sample: &Sample, bank: &KernelBank, pipeline: Pipeline) -> Result<Forward> {
    let (h, w) = sample.degraded.dims();
    let plan = WienerPlan::new(&sample.psf, bank, h, w)?;
    let input = match pipeline {
        Pipeline::Direct => sample.degraded_normalized(),
        Pipeline::Vst => anscombe(&sample.degraded)?,
    };
    let restored = wiener_solve(&input, &plan)?;
    let estimate = match pipeline {
        Pipeline::Direct => restored.clone(),
        Pipeline::Vst => {
            let peak = peak_of(sample)?;
            restored.map(|z| inverse_clamped_value(z) / peak)
        }
    };
    Ok(Forward {
        input,
        restored,
        plan,
        estimate,
    })
}

/// The pipeline's estimate of the ground truth for one pair.
pub fn restore_sample(sample: &Sample, bank: &KernelBank, pipeline: Pipeline) -> Result<ImageGrid> {
    Ok(forward(sample, bank, pipeline)?.estimate)
}

/// Loss on one pair and its gradient with respect to the bank.
pub fn sample_gradient(
    sample: &Sample,
    bank: &KernelBank,
    pipeline: Pipeline,
    weight: f64,
) -> Result<(f64, BankGradient)> {
    let f = forward(sample, bank, pipeline)?;
    let (value, q) = loss(&f.estimate, &sample.truth, weight)?;
    let upstream = match pipeline {
        Pipeline::Direct => q,
        Pipeline::Vst => {
            let peak = peak_of(sample)?;
            ImageGrid::new(
                q.height(),
                q.width(),
                q.as_slice()
                    .iter()
                    .zip(f.restored.as_slice())
                    .map(|(g, &z)| g * inverse_clamped_derivative(z) / peak)
                    .collect(),
            )?
        }
    };
    let grad = grad_bank(&f.input, &f.plan, bank, &upstream)?;
    Ok((value, grad))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityReport {
    pub psnr: Psnr,
    pub ssim: f64,
}

/// Mean PSNR / SSIM of `estimate` against truth over `samples`. Identical pairs
/// are left out of the PSNR mean; the result is `Identical` only if all are.
pub fn mean_quality(pairs: &[(ImageGrid, &ImageGrid)]) -> Result<QualityReport> {
    if pairs.is_empty() {
        return Err(Error::invalid("no pairs to evaluate"));
    }
    let mut sum_db = 0.0;
    let mut n_db = 0usize;
    let mut sum_ssim = 0.0;
    for (est, truth) in pairs {
        if let Psnr::Db(v) = psnr(est, truth, 1.0)? {
            sum_db += v;
            n_db += 1;
        }
        sum_ssim += ssim(est, truth)?;
    }
    Ok(QualityReport {
        psnr: if n_db == 0 {
            Psnr::Identical
        } else {
            Psnr::Db(sum_db / n_db as f64)
        },
        ssim: sum_ssim / pairs.len() as f64,
    })
}

/// Quality of the pipeline's estimates over `samples`.
pub fn evaluate(samples: &[Sample], bank: &KernelBank, pipeline: Pipeline) -> Result<QualityReport> {
    let estimates = samples
        .par_iter()
        .map(|s| restore_sample(s, bank, pipeline))
        .collect::<Result<Vec<_>>>()?;
    let pairs: Vec<(ImageGrid, &ImageGrid)> = estimates
        .into_iter()
        .zip(samples.iter().map(|s| &s.truth))
        .collect();
    mean_quality(&pairs)
}

/// Quality of the observations themselves (on the truth's scale).
pub fn input_quality(samples: &[Sample]) -> Result<QualityReport> {
    let pairs: Vec<(ImageGrid, &ImageGrid)> = samples
        .iter()
        .map(|s| (s.degraded_normalized(), &s.truth))
        .collect();
    mean_quality(&pairs)
}

// --- Adam ------------------------------------------------------------------

pub const ADAM_MAGIC: &[u8; 6] = b"WKADAM";
pub const ADAM_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(n: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    /// One in-place update of `params` along `grad`.
    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::invalid(format!(
                "adam state has {} entries, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grad.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
        Ok(())
    }

    /// Sidecar layout: magic, `u32` version, `u64` step, `u64` n, then `m` and `v`
    /// as little-endian `f64`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(22 + 16 * self.m.len());
        out.extend_from_slice(ADAM_MAGIC);
        out.extend_from_slice(&ADAM_VERSION.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&(self.m.len() as u64).to_le_bytes());
        for v in self.m.iter().chain(&self.v) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Restores the moments and step; hyperparameters come from the caller.
    pub fn from_bytes(bytes: &[u8], lr: f64, beta1: f64, beta2: f64, eps: f64) -> Result<Self> {
        let bad = |m: &str| Error::format("adam state", m);
        if bytes.len() < 26 || &bytes[..6] != ADAM_MAGIC {
            return Err(bad("missing WKADAM header"));
        }
        let version = u32::from_le_bytes(bytes[6..10].try_into().unwrap());
        if version != ADAM_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let step = u64::from_le_bytes(bytes[10..18].try_into().unwrap());
        let n = u64::from_le_bytes(bytes[18..26].try_into().unwrap()) as usize;
        let body = &bytes[26..];
        if body.len() != 16 * n {
            return Err(bad(&format!("expected {} moment bytes, found {}", 16 * n, body.len())));
        }
        let vals: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self {
            lr,
            beta1,
            beta2,
            eps,
            step,
            m: vals[..n].to_vec(),
            v: vals[n..].to_vec(),
        })
    }
}

// --- training loop ---------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    pub batch: usize,
    /// Weight of the gradient term in the loss.
    pub weight: f64,
    pub seed: u64,
    /// Stop after this many epochs without a validation PSNR improvement.
    pub patience: Option<usize>,
    pub pipeline: Pipeline,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            epochs: 100,
            batch: 4,
            weight: 1.0,
            seed: 0,
            patience: None,
            pipeline: Pipeline::Direct,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1)")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::invalid("eps must be positive"));
        }
        if self.batch == 0 {
            return Err(Error::invalid("batch must be at least 1"));
        }
        if !(self.weight >= 0.0 && self.weight.is_finite()) {
            return Err(Error::invalid("loss weight must be nonnegative"));
        }
        Ok(())
    }

    pub fn adam(&self, n: usize) -> Adam {
        Adam::new(n, self.lr, self.beta1, self.beta2, self.eps)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val: Option<QualityReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StopReason {
    Completed,
    EarlyStop { epoch: usize },
    /// A non-finite loss or gradient; the bank is the last finite one.
    NonFinite { epoch: usize, step: u64 },
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Bank after the last successful update.
    pub bank: KernelBank,
    /// Bank with the best validation PSNR, and its epoch (0 is the initial bank).
    pub best: Option<(usize, KernelBank)>,
    pub history: Vec<EpochRecord>,
    pub adam: Adam,
    pub stop: StopReason,
}

impl TrainOutcome {
    /// The validation-selected bank when there is one, otherwise the final bank.
    pub fn selected(&self) -> &KernelBank {
        self.best.as_ref().map_or(&self.bank, |(_, b)| b)
    }

    /// CSV with header `epoch,train_loss,val_psnr,val_ssim`.
    pub fn history_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_psnr,val_ssim\n");
        for r in &self.history {
            let (p, q) = match r.val {
                Some(v) => (v.psnr.to_string(), format!("{:.6}", v.ssim)),
                None => (String::new(), String::new()),
            };
            let _ = writeln!(s, "{},{},{},{}", r.epoch, r.train_loss, p, q);
        }
        s
    }
}

/// Keeps only the validation pairs at the most common noise level (smallest on ties).
pub fn fixed_level_subset(val: Vec<Sample>) -> Vec<Sample> {
    let mut levels: Vec<(f64, usize)> = Vec::new();
    for s in &val {
        let l = s.noise.level();
        match levels.iter_mut().find(|(v, _)| *v == l) {
            Some(e) => e.1 += 1,
            None => levels.push((l, 1)),
        }
    }
    let Some(&(chosen, _)) = levels
        .iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.total_cmp(&a.0)))
    else {
        return val;
    };
    val.into_iter().filter(|s| s.noise.level() == chosen).collect()
}

fn batch_gradient(
    batch: &[&Sample],
    bank: &KernelBank,
    cfg: &TrainConfig,
) -> Result<(f64, Vec<f64>)> {
    let parts = batch
        .par_iter()
        .map(|s| sample_gradient(s, bank, cfg.pipeline, cfg.weight))
        .collect::<Result<Vec<_>>>()?;
    let n = parts.len() as f64;
    let mut total = 0.0;
    let mut grad = vec![0.0; bank.param_len()];
    for (l, g) in parts {
        total += l;
        for (acc, v) in grad.iter_mut().zip(g.to_params()) {
            *acc += v / n;
        }
    }
    Ok((total / n, grad))
}

/// Trains `init` on `train`, validating on `val` after every epoch.
/// Deterministic for a given seed regardless of the thread count.
pub fn train(
    train_set: &[Sample],
    val_set: &[Sample],
    init: &KernelBank,
    cfg: &TrainConfig,
    adam: Option<Adam>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let mut adam = match adam {
        Some(a) if a.m.len() == init.param_len() => a,
        Some(a) => {
            return Err(Error::invalid(format!(
                "adam state has {} entries but the bank has {} parameters",
                a.m.len(),
                init.param_len()
            )))
        }
        None => cfg.adam(init.param_len()),
    };
    let mut bank = init.clone();
    let mut params = bank.to_params();
    let mut history = Vec::with_capacity(cfg.epochs + 1);

    let validate = |b: &KernelBank| -> Result<Option<QualityReport>> {
        if val_set.is_empty() {
            Ok(None)
        } else {
            evaluate(val_set, b, cfg.pipeline).map(Some)
        }
    };
    let val_db = |q: &Option<QualityReport>| match q.map(|q| q.psnr) {
        Some(Psnr::Db(v)) => Some(v),
        Some(Psnr::Identical) => Some(f64::INFINITY),
        None => None,
    };

    let initial_val = validate(&bank)?;
    let mut best = val_db(&initial_val).map(|v| (v, 0usize, bank.clone()));
    history.push(EpochRecord {
        epoch: 0,
        train_loss: f64::NAN,
        val: initial_val,
    });

    let mut stop = StopReason::Completed;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    'epochs: for epoch in 1..=cfg.epochs {
        SampleRng::stream(cfg.seed, epoch as u64).shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (l, g) = batch_gradient(&batch, &bank, cfg)?;
            if !l.is_finite() || g.iter().any(|v| !v.is_finite()) {
                warn!("non-finite loss or gradient at epoch {epoch}; keeping the last good bank");
                stop = StopReason::NonFinite {
                    epoch,
                    step: adam.step + 1,
                };
                break 'epochs;
            }
            let mut next = params.clone();
            let mut next_adam = adam.clone();
            next_adam.update(&mut next, &g)?;
            next[0] = next[0].clamp(-ALPHA_BOUND, ALPHA_BOUND);
            if next.iter().any(|v| !v.is_finite()) {
                stop = StopReason::NonFinite {
                    epoch,
                    step: next_adam.step,
                };
                break 'epochs;
            }
            params = next;
            adam = next_adam;
            bank = bank.with_params(&params)?;
            epoch_loss += l * chunk.len() as f64;
        }
        let val = validate(&bank)?;
        let train_loss = epoch_loss / train_set.len() as f64;
        debug!("epoch {epoch}: loss {train_loss:.6} alpha {:.4}", bank.alpha());
        history.push(EpochRecord {
            epoch,
            train_loss,
            val,
        });
        if let Some(v) = val_db(&val) {
            let (best_v, best_epoch, _) = best.as_ref().expect("set with validation");
            if v > *best_v {
                best = Some((v, epoch, bank.clone()));
            } else if let Some(p) = cfg.patience {
                if epoch - best_epoch >= p {
                    info!("early stop at epoch {epoch}");
                    stop = StopReason::EarlyStop { epoch };
                    break;
                }
            }
        }
    }
    Ok(TrainOutcome {
        bank,
        best: best.map(|(_, e, b)| (e, b)),
        history,
        adam,
        stop,
    })
}

/// Loads the manifest's train and validation pairs and trains on them.
pub fn train_wfk(
    manifest: &Manifest,
    base: &Path,
    init: &KernelBank,
    cfg: &TrainConfig,
    adam: Option<Adam>,
) -> Result<TrainOutcome> {
    let train_set = load_samples(manifest, base, Some(Split::Train))?;
    let val_set = if manifest.split(Split::Val).next().is_some() {
        fixed_level_subset(load_samples(manifest, base, Some(Split::Val))?)
    } else {
        Vec::new()
    };
    train(&train_set, &val_set, init, cfg, adam)
}
