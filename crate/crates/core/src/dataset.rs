//! Synthetic specimens, dataset generation and the pair manifest.
//!
//! A manifest is a JSON-lines file; each line describes one ground-truth /
//! degraded pair with its PSF, noise, seed and file names (relative to the
//! manifest's directory).

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::degrade::{
    degrade_with, synthesize_psf, Noise, PsfSpec, GAUSSIAN_STD_LEVELS, POISSON_PEAK_LEVELS,
};
use crate::error::{Error, Result};
use crate::grid::{ImageGrid, Psf};
use crate::io::{read_image, write_atomic, write_image};
use crate::rng::{SampleRng, ALGORITHM};

pub const MANIFEST_NAME: &str = "manifest.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::invalid(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    Gaussian,
    Poisson,
}

impl FromStr for Protocol {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Protocol::Gaussian),
            "poisson" => Ok(Protocol::Poisson),
            _ => Err(Error::invalid(format!("unknown protocol {s:?}"))),
        }
    }
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub id: String,
    pub split: Split,
    pub psf: PsfSpec,
    pub noise: Noise,
    /// Peak intensity for Poisson pairs; the truth file is stored with maximum 1.
    pub peak: Option<f64>,
    pub seed: u64,
    pub rng: String,
    pub truth: String,
    pub degraded: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub records: Vec<PairRecord>,
}

impl Manifest {
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&serde_json::to_string(r).expect("records serialize"));
            s.push('\n');
        }
        s
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let records = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l)
                    .map_err(|e| Error::format("manifest", format!("line {}: {e}", i + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { records })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_jsonl(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_jsonl().as_bytes())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &PairRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }
}

/// A loaded pair.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub split: Split,
    pub truth: ImageGrid,
    pub degraded: ImageGrid,
    pub psf_spec: PsfSpec,
    pub psf: Psf,
    pub noise: Noise,
}

impl Sample {
    /// Degraded image on the truth's intensity scale (counts divided by the peak).
    pub fn degraded_normalized(&self) -> ImageGrid {
        match self.noise {
            Noise::Poisson { peak } => self.degraded.scale(1.0 / peak),
            Noise::Gaussian { .. } => self.degraded.clone(),
        }
    }
}

fn load_record(rec: &PairRecord, base: &Path) -> Result<Sample> {
    let truth = read_image(&base.join(&rec.truth))?;
    let degraded = read_image(&base.join(&rec.degraded))?;
    truth.check_same(&degraded)?;
    Ok(Sample {
        id: rec.id.clone(),
        split: rec.split,
        truth,
        degraded,
        psf_spec: rec.psf,
        psf: synthesize_psf(&rec.psf)?,
        noise: rec.noise,
    })
}

/// Loads every pair of `split` (or all pairs). Unreadable pairs are skipped
/// with a warning; an error is returned only if none could be read.
pub fn load_samples(manifest: &Manifest, base: &Path, split: Option<Split>) -> Result<Vec<Sample>> {
    let wanted: Vec<&PairRecord> = manifest
        .records
        .iter()
        .filter(|r| split.is_none_or(|s| r.split == s))
        .collect();
    if wanted.is_empty() {
        return Err(Error::invalid(match split {
            Some(s) => format!("manifest has no {s} pairs"),
            None => "manifest is empty".to_string(),
        }));
    }
    let mut out = Vec::with_capacity(wanted.len());
    for rec in wanted {
        match load_record(rec, base) {
            Ok(s) => out.push(s),
            Err(e) => warn!("skipping pair {}: {e}", rec.id),
        }
    }
    if out.is_empty() {
        return Err(Error::invalid("no pair in the manifest could be loaded"));
    }
    Ok(out)
}

/// Synthetic fluorescence-like specimen in `[0, 1]` with maximum 1:
/// soft-edged cells with brighter nuclei and a few thin filaments on a dim background.
pub fn synthetic_specimen(height: usize, width: usize, seed: u64) -> ImageGrid {
    let mut rng = SampleRng::new(seed);
    let scale = (height.min(width) as f64 / 64.0).max(0.25);
    let n_cells = ((height * width) as f64 / (18.0 * 18.0 * scale * scale)).ceil() as usize + 2;
    struct Cell {
        cy: f64,
        cx: f64,
        ry: f64,
        rx: f64,
        rot: f64,
        level: f64,
    }
    let cells: Vec<Cell> = (0..n_cells)
        .map(|_| Cell {
            cy: rng.uniform_in(0.0, height as f64),
            cx: rng.uniform_in(0.0, width as f64),
            ry: rng.uniform_in(3.0, 8.0) * scale,
            rx: rng.uniform_in(3.0, 8.0) * scale,
            rot: rng.uniform_in(0.0, std::f64::consts::PI),
            level: rng.uniform_in(0.3, 1.0),
        })
        .collect();
    let n_fil = 2 + rng.index(3);
    let filaments: Vec<(f64, f64, f64, f64, f64)> = (0..n_fil)
        .map(|_| {
            (
                rng.uniform_in(0.0, height as f64),
                rng.uniform_in(0.0, width as f64),
                rng.uniform_in(0.0, std::f64::consts::PI),
                rng.uniform_in(10.0, 30.0) * scale,
                rng.uniform_in(0.2, 0.6),
            )
        })
        .collect();
    let img = ImageGrid::from_fn(height, width, |i, j| {
        let (y, x) = (i as f64, j as f64);
        let mut v = 0.03;
        for c in &cells {
            let (dy, dx) = (y - c.cy, x - c.cx);
            let (s, co) = c.rot.sin_cos();
            let u = (co * dx + s * dy) / c.rx;
            let w = (-s * dx + co * dy) / c.ry;
            let r = (u * u + w * w).sqrt();
            let body = 1.0 / (1.0 + ((r - 1.0) * 6.0).exp());
            let nucleus = (-(r * r) / (2.0 * 0.35 * 0.35)).exp();
            v += c.level * (0.6 * body + 0.4 * nucleus);
        }
        for &(fy, fx, ang, len, level) in &filaments {
            let (s, co) = ang.sin_cos();
            let (dy, dx) = (y - fy, x - fx);
            let along = co * dx + s * dy;
            let across = -s * dx + co * dy;
            if along.abs() <= len {
                v += level * (-(across * across) / (2.0 * 0.8 * 0.8)).exp();
            }
        }
        v
    });
    let m = img.max();
    img.map(|v| (v / m).clamp(0.0, 1.0))
}

/// Disjoint train / val / test PSF pools.
#[derive(Debug, Clone, PartialEq)]
pub struct PsfPool {
    pub train: Vec<PsfSpec>,
    pub val: Vec<PsfSpec>,
    pub test: Vec<PsfSpec>,
}

impl PsfPool {
    /// 35 PSFs split 25 / 5 / 5. Gaussian protocol: sizes 7–13; Poisson protocol: 5×5.
    pub fn generate(protocol: Protocol, seed: u64) -> Self {
        let mut rng = SampleRng::stream(seed, u64::MAX);
        let mut specs: Vec<PsfSpec> = (0..35)
            .map(|i| {
                let size = match protocol {
                    Protocol::Gaussian => [7, 9, 11, 13][i % 4],
                    Protocol::Poisson => 5,
                };
                let s = size as f64;
                if i % 2 == 0 {
                    let hi = match protocol {
                        Protocol::Gaussian => s / 6.0,
                        Protocol::Poisson => 1.2,
                    };
                    PsfSpec::gaussian(size, rng.uniform_in(0.7, hi))
                } else {
                    let hi = match protocol {
                        Protocol::Gaussian => s / 4.0,
                        Protocol::Poisson => 2.2,
                    };
                    PsfSpec::airy(size, rng.uniform_in(1.4, hi))
                }
            })
            .collect();
        rng.shuffle(&mut specs);
        let test = specs.split_off(30);
        let val = specs.split_off(25);
        Self {
            train: specs,
            val,
            test,
        }
    }

    pub fn for_split(&self, split: Split) -> &[PsfSpec] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetOptions {
    /// Side of the square patches cut from each source.
    pub patch: usize,
    /// Patches whose mean is below this fraction of the source mean are dropped.
    pub discard_factor: f64,
    /// Fractions of pairs assigned to validation and test.
    pub val_fraction: f64,
    pub test_fraction: f64,
    /// Noise levels to draw from; must be a subset of the protocol's set.
    pub levels: Option<Vec<f64>>,
    /// Keep at most this many pairs (after shuffling).
    pub max_pairs: Option<usize>,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        Self {
            patch: 256,
            discard_factor: 0.5,
            val_fraction: 0.15,
            test_fraction: 0.15,
            levels: None,
            max_pairs: None,
        }
    }
}

/// Crops non-overlapping `patch`×`patch` tiles, dropping near-empty ones.
pub fn crop_patches(src: &ImageGrid, patch: usize, discard_factor: f64) -> Vec<ImageGrid> {
    let mean = src.mean();
    let mut out = Vec::new();
    let mut top = 0;
    while top + patch <= src.height() {
        let mut left = 0;
        while left + patch <= src.width() {
            let p = src.crop(top, left, patch, patch).expect("in bounds");
            if p.mean() >= discard_factor * mean {
                out.push(p);
            }
            left += patch;
        }
        top += patch;
    }
    out
}

fn protocol_levels(protocol: Protocol, opts: &DatasetOptions) -> Result<Vec<f64>> {
    let full: &[f64] = match protocol {
        Protocol::Gaussian => &GAUSSIAN_STD_LEVELS,
        Protocol::Poisson => &POISSON_PEAK_LEVELS,
    };
    match &opts.levels {
        None => Ok(full.to_vec()),
        Some(ls) if ls.is_empty() => Err(Error::invalid("empty noise level list")),
        Some(ls) => {
            for l in ls {
                if !full.contains(l) {
                    return Err(Error::invalid(format!(
                        "noise level {l} not in the protocol set {full:?}"
                    )));
                }
            }
            Ok(ls.clone())
        }
    }
}

/// Derived per-pair seed.
pub fn pair_seed(seed: u64, index: usize) -> u64 {
    SampleRng::stream(seed, index as u64).next_u64()
}

/// Builds degraded pairs from ground-truth patches in memory.
pub fn build_pairs(
    truths: Vec<ImageGrid>,
    protocol: Protocol,
    seed: u64,
    opts: &DatasetOptions,
) -> Result<Vec<(PairRecord, Sample)>> {
    if truths.is_empty() {
        return Err(Error::invalid("no ground-truth patches"));
    }
    let levels = protocol_levels(protocol, opts)?;
    let pool = PsfPool::generate(protocol, seed);

    let mut order: Vec<usize> = (0..truths.len()).collect();
    SampleRng::stream(seed, u64::MAX - 1).shuffle(&mut order);
    if let Some(m) = opts.max_pairs {
        order.truncate(m.max(1));
    }
    let n = order.len();
    let n_val = (n as f64 * opts.val_fraction).round() as usize;
    let n_test = (n as f64 * opts.test_fraction).round() as usize;
    let n_train = n.saturating_sub(n_val + n_test);

    order
        .par_iter()
        .enumerate()
        .map(|(i, &src_idx)| {
            let split = if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
            let pseed = pair_seed(seed, i);
            let mut rng = SampleRng::new(pseed);
            let pool_split = pool.for_split(split);
            let psf_spec = pool_split[rng.index(pool_split.len())];
            let level = levels[rng.index(levels.len())];
            let noise = match protocol {
                Protocol::Gaussian => Noise::Gaussian { std: level },
                Protocol::Poisson => Noise::Poisson { peak: level },
            };
            let psf = synthesize_psf(&psf_spec)?;
            let mut truth = truths[src_idx].clone();
            if protocol == Protocol::Poisson {
                let m = truth.max();
                if m > 0.0 {
                    truth = truth.scale(1.0 / m);
                }
            }
            let degraded = degrade_with(&truth, &psf, &noise, &mut rng)?;
            let id = format!("pair_{i:04}");
            let record = PairRecord {
                id: id.clone(),
                split,
                psf: psf_spec,
                noise,
                peak: match noise {
                    Noise::Poisson { peak } => Some(peak),
                    Noise::Gaussian { .. } => None,
                },
                seed: pseed,
                rng: ALGORITHM.to_string(),
                truth: format!("{id}_gt.wkimg"),
                degraded: format!("{id}_y.wkimg"),
            };
            let sample = Sample {
                id,
                split,
                truth,
                degraded,
                psf_spec,
                psf,
                noise,
            };
            Ok((record, sample))
        })
        .collect()
}

fn list_sources(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
                Some("pgm") | Some("wkimg")
            )
        })
        .collect();
    paths.sort();
    Ok(paths)
}

/// Reads every `.pgm`/`.wkimg` in `source_dir`, crops patches, degrades them and
/// writes pairs plus `manifest.jsonl` into `out_dir`.
pub fn make_dataset(
    source_dir: &Path,
    out_dir: &Path,
    protocol: Protocol,
    seed: u64,
    opts: &DatasetOptions,
) -> Result<Manifest> {
    if opts.patch < 1 {
        return Err(Error::invalid("patch size must be positive"));
    }
    let sources = list_sources(source_dir)?;
    if sources.is_empty() {
        return Err(Error::invalid(format!(
            "no .pgm or .wkimg images in {}",
            source_dir.display()
        )));
    }
    let mut patches = Vec::new();
    for p in &sources {
        let img = read_image(p)?;
        patches.extend(crop_patches(&img, opts.patch, opts.discard_factor));
    }
    if patches.is_empty() {
        return Err(Error::invalid(format!(
            "no {0}x{0} patch survived cropping",
            opts.patch
        )));
    }
    let pairs = build_pairs(patches, protocol, seed, opts)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    for (rec, s) in &pairs {
        write_image(&out_dir.join(&rec.truth), &s.truth)?;
        write_image(&out_dir.join(&rec.degraded), &s.degraded)?;
    }
    let manifest = Manifest {
        records: pairs.into_iter().map(|(r, _)| r).collect(),
    };
    manifest.save(&out_dir.join(MANIFEST_NAME))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn specimen_is_normalized_and_seeded() {
        let a = synthetic_specimen(48, 64, 5);
        assert_eq!(a.dims(), (48, 64));
        assert!((a.max() - 1.0).abs() < 1e-12);
        assert!(a.min() >= 0.0);
        assert_eq!(a, synthetic_specimen(48, 64, 5));
        assert_ne!(a, synthetic_specimen(48, 64, 6));
    }

    #[test]
    fn pools_are_disjoint() {
        for proto in [Protocol::Gaussian, Protocol::Poisson] {
            let pool = PsfPool::generate(proto, 3);
            assert_eq!((pool.train.len(), pool.val.len(), pool.test.len()), (25, 5, 5));
            for t in &pool.test {
                assert!(!pool.train.contains(t) && !pool.val.contains(t));
            }
            for s in pool.train.iter().chain(&pool.val).chain(&pool.test) {
                assert!(synthesize_psf(s).is_ok());
                if proto == Protocol::Poisson {
                    assert_eq!(s.size, 5);
                }
            }
        }
    }

    #[test]
    fn crop_discards_dark_patches() {
        let img = ImageGrid::from_fn(8, 8, |_, c| if c < 4 { 1.0 } else { 0.0 });
        let patches = crop_patches(&img, 4, 0.5);
        assert_eq!(patches.len(), 2);
        assert!(patches.iter().all(|p| p.mean() == 1.0));
    }

    #[test]
    fn levels_must_come_from_the_protocol() {
        let opts = DatasetOptions {
            levels: Some(vec![0.02]),
            ..Default::default()
        };
        assert!(protocol_levels(Protocol::Gaussian, &opts).is_err());
        let opts = DatasetOptions {
            levels: Some(vec![0.01]),
            ..Default::default()
        };
        assert_eq!(protocol_levels(Protocol::Gaussian, &opts).unwrap(), vec![0.01]);
    }

    #[test]
    fn manifest_roundtrip() {
        let truths = vec![synthetic_specimen(16, 16, 1), synthetic_specimen(16, 16, 2)];
        let pairs = build_pairs(truths, Protocol::Poisson, 9, &DatasetOptions::default()).unwrap();
        let m = Manifest {
            records: pairs.into_iter().map(|(r, _)| r).collect(),
        };
        let text = m.to_jsonl();
        assert_eq!(Manifest::from_jsonl(&text).unwrap(), m);
        assert!(text.contains("\"kind\":\"poisson\""));
        assert!(Manifest::from_jsonl("{not json}\n").is_err());
    }

    #[test]
    fn empty_source_dir_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        let err = make_dataset(dir.path(), &out, Protocol::Gaussian, 1, &DatasetOptions::default());
        assert!(matches!(err, Err(Error::InvalidInput(_))));
    }
}
