//! File formats.
//!
//! * PGM (`P5`), 8- or 16-bit. Samples map to `[0, 1]` by dividing by maxval;
//!   writing clamps to `[0, 1]` and rounds to the nearest level.
//! * `WKIMG1`: magic, `u32` height, `u32` width, then little-endian `f32` samples, row-major.
//! * `WKFLD1`: magic, `u32` height, width, k, then `height·width·k·k` little-endian
//!   `f32` taps, pixel-major and row-major within each kernel.
//! * `WKBANK 1` text banks, see [`KernelBank::to_text`].
//!
//! Every writer goes through [`write_atomic`], so a failed write leaves no partial file.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::grid::ImageGrid;
use crate::spatial_cg::PixelKernelField;
use crate::wiener::KernelBank;

pub const WKIMG_MAGIC: &[u8; 6] = b"WKIMG1";
pub const WKFLD_MAGIC: &[u8; 6] = b"WKFLD1";

/// Writes `bytes` to a temporary sibling and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn read_u32(bytes: &[u8], at: usize, ctx: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::format(ctx, "truncated header"))
}

// --- PGM -------------------------------------------------------------------

/// Parses a binary PGM.
pub fn decode_pgm(bytes: &[u8]) -> Result<ImageGrid> {
    let ctx = "pgm";
    let mut pos = 0;
    let mut tokens = Vec::with_capacity(4);
    while tokens.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(ctx, "truncated header"));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if tokens[0] != "P5" {
        return Err(Error::format(ctx, format!("unsupported magic {:?}", tokens[0])));
    }
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|e| Error::format(ctx, format!("bad header number {s:?}: {e}")))
    };
    let (w, h, maxval) = (num(&tokens[1])?, num(&tokens[2])?, num(&tokens[3])?);
    if w == 0 || h == 0 || maxval == 0 || maxval > 65535 {
        return Err(Error::format(ctx, format!("bad header {w}x{h} maxval {maxval}")));
    }
    // exactly one whitespace byte separates header from raster
    pos += 1;
    let bpp = if maxval < 256 { 1 } else { 2 };
    let need = w * h * bpp;
    let raster = bytes
        .get(pos..pos + need)
        .ok_or_else(|| Error::format(ctx, format!("raster needs {need} bytes")))?;
    let m = maxval as f64;
    let data = if bpp == 1 {
        raster.iter().map(|&b| b as f64 / m).collect()
    } else {
        raster
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / m)
            .collect()
    };
    ImageGrid::new(h, w, data)
}

/// Encodes as 16-bit (`maxval` 65535) or 8-bit PGM, clamping to `[0, 1]`.
pub fn encode_pgm(img: &ImageGrid, sixteen_bit: bool) -> Vec<u8> {
    let maxval: u32 = if sixteen_bit { 65535 } else { 255 };
    let mut out = format!("P5\n{} {}\n{}\n", img.width(), img.height(), maxval).into_bytes();
    for &v in img.as_slice() {
        let q = (v.clamp(0.0, 1.0) * maxval as f64).round() as u32;
        if sixteen_bit {
            out.extend_from_slice(&(q as u16).to_be_bytes());
        } else {
            out.push(q as u8);
        }
    }
    out
}

// --- WKIMG -----------------------------------------------------------------

pub fn encode_wkimg(img: &ImageGrid) -> Vec<u8> {
    let mut out = Vec::with_capacity(14 + 4 * img.len());
    out.extend_from_slice(WKIMG_MAGIC);
    out.extend_from_slice(&(img.height() as u32).to_le_bytes());
    out.extend_from_slice(&(img.width() as u32).to_le_bytes());
    for &v in img.as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_wkimg(bytes: &[u8]) -> Result<ImageGrid> {
    let ctx = "wkimg";
    if bytes.len() < 14 || &bytes[..6] != WKIMG_MAGIC {
        return Err(Error::format(ctx, "missing WKIMG1 magic"));
    }
    let h = read_u32(bytes, 6, ctx)? as usize;
    let w = read_u32(bytes, 10, ctx)? as usize;
    let body = &bytes[14..];
    if body.len() != h * w * 4 {
        return Err(Error::format(
            ctx,
            format!("expected {} sample bytes, found {}", h * w * 4, body.len()),
        ));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    ImageGrid::new(h, w, data).map_err(|e| Error::format(ctx, e.to_string()))
}

// --- WKFLD -----------------------------------------------------------------

pub fn encode_field(field: &PixelKernelField) -> Vec<u8> {
    let mut out = Vec::with_capacity(18 + 4 * field.taps().len());
    out.extend_from_slice(WKFLD_MAGIC);
    for v in [field.height(), field.width(), field.k()] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for &t in field.taps() {
        out.extend_from_slice(&(t as f32).to_le_bytes());
    }
    out
}

pub fn decode_field(bytes: &[u8]) -> Result<PixelKernelField> {
    let ctx = "wkfld";
    if bytes.len() < 18 || &bytes[..6] != WKFLD_MAGIC {
        return Err(Error::format(ctx, "missing WKFLD1 magic"));
    }
    let h = read_u32(bytes, 6, ctx)? as usize;
    let w = read_u32(bytes, 10, ctx)? as usize;
    let k = read_u32(bytes, 14, ctx)? as usize;
    let body = &bytes[18..];
    let n = h * w * k * k;
    if body.len() != n * 4 {
        return Err(Error::format(
            ctx,
            format!("expected {} tap bytes, found {}", n * 4, body.len()),
        ));
    }
    let taps = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    PixelKernelField::new(h, w, k, taps).map_err(|e| Error::format(ctx, e.to_string()))
}

// --- path-level helpers ----------------------------------------------------

fn extension(path: &Path) -> String {
    path.extension()
        .map(|e| e.to_string_lossy().to_ascii_lowercase())
        .unwrap_or_default()
}

/// Reads `.pgm` or `.wkimg`, chosen by extension.
pub fn read_image(path: &Path) -> Result<ImageGrid> {
    let bytes = read_bytes(path)?;
    let decoded = match extension(path).as_str() {
        "pgm" => decode_pgm(&bytes),
        "wkimg" => decode_wkimg(&bytes),
        other => Err(Error::invalid(format!(
            "unknown image extension {other:?} (expected .pgm or .wkimg)"
        ))),
    };
    decoded.map_err(|e| match e {
        Error::Format { context, message } => Error::Format {
            context: format!("{context} {}", path.display()),
            message,
        },
        e => e,
    })
}

/// Writes `.pgm` (16-bit, clamped) or `.wkimg`, chosen by extension.
pub fn write_image(path: &Path, img: &ImageGrid) -> Result<()> {
    let bytes = match extension(path).as_str() {
        "pgm" => encode_pgm(img, true),
        "wkimg" => encode_wkimg(img),
        other => {
            return Err(Error::invalid(format!(
                "unknown image extension {other:?} (expected .pgm or .wkimg)"
            )))
        }
    };
    write_atomic(path, &bytes)
}

pub fn read_bank(path: &Path) -> Result<KernelBank> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    KernelBank::from_text(&text)
}

pub fn write_bank(path: &Path, bank: &KernelBank) -> Result<()> {
    write_atomic(path, bank.to_text().as_bytes())
}

pub fn read_field(path: &Path) -> Result<PixelKernelField> {
    decode_field(&read_bytes(path)?)
}

pub fn write_field(path: &Path, field: &PixelKernelField) -> Result<()> {
    write_atomic(path, &encode_field(field))
}
