//! On-disk formats: binary PPM/PGM (8-bit), raw little-endian `f32` mattes
//! with a JSON size sidecar, sequence directories and metric reports.

use std::fs;
use std::path::{Path, PathBuf};

use adamatte_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{Matte, MetricReport};

/// Writes through a temporary sibling file and renames it into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::io(path, std::io::Error::other("path has no file name")))?;
    let tmp = path.with_file_name(format!(
        ".{}.tmp{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// `round(255·v)` with halves rounded up, after clamping to `[0, 1]`.
pub fn quantize(v: f32) -> u8 {
    (255.0 * (v as f64).clamp(0.0, 1.0) + 0.5).floor() as u8
}

/// Binary PGM (1 channel) or PPM (3 channels) bytes of a `C×H×W` tensor.
pub fn encode_pnm(image: &Tensor) -> Result<Vec<u8>> {
    let s = image.shape();
    let magic = match s {
        [1, _, _] => "P5",
        [3, _, _] => "P6",
        _ => return Err(Error::Dimension(format!("cannot encode {s:?} as PGM/PPM"))),
    };
    let (c, h, w) = (s[0], s[1], s[2]);
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    let d = image.data();
    for i in 0..h * w {
        for ch in 0..c {
            out.push(quantize(d[ch * h * w + i]));
        }
    }
    Ok(out)
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Header<'_> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::MalformedHeader {
            path: self.path.to_path_buf(),
            msg: msg.into(),
        }
    }

    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&b| b != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| self.err(format!("missing {what}")))
    }
}

/// Decodes binary PGM/PPM bytes into a `C×H×W` tensor with values `b/255`.
pub fn decode_pnm(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let mut hd = Header {
        bytes,
        pos: 0,
        path,
    };
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(hd.err("expected binary PGM (P5) or PPM (P6) magic")),
    };
    hd.pos = 2;
    let w = hd.number("width")?;
    let h = hd.number("height")?;
    let maxval = hd.number("maximum value")?;
    if maxval != 255 {
        return Err(hd.err(format!("maximum value {maxval} is not 255")));
    }
    if w == 0 || h == 0 {
        return Err(hd.err("zero image extent"));
    }
    if !bytes.get(hd.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(hd.err("missing whitespace after header"));
    }
    let data = &bytes[hd.pos + 1..];
    if data.len() != channels * h * w {
        return Err(hd.err(format!(
            "{} data bytes for a {w}×{h}×{channels} image",
            data.len()
        )));
    }
    let mut out = vec![0f32; channels * h * w];
    for i in 0..h * w {
        for c in 0..channels {
            out[c * h * w + i] = data[i * channels + c] as f32 / 255.0;
        }
    }
    Ok(Tensor::from_vec(&[channels, h, w], out)?)
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_pnm(path: &Path, image: &Tensor) -> Result<()> {
    atomic_write(path, &encode_pnm(image)?)
}

pub fn read_pnm(path: &Path) -> Result<Tensor> {
    decode_pnm(&read_bytes(path)?, path)
}

/// Reads a PGM mask as a `1×H×W` tensor.
pub fn read_mask(path: &Path) -> Result<Tensor> {
    let t = read_pnm(path)?;
    if t.shape()[0] != 1 {
        return Err(Error::MalformedHeader {
            path: path.to_path_buf(),
            msg: "mask must be a single-channel PGM".into(),
        });
    }
    Ok(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawSize {
    pub h: usize,
    pub w: usize,
}

fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes a `1×H×W` matte as raw little-endian `f32` plus `{h, w}` sidecar.
pub fn write_f32(path: &Path, matte: &Tensor) -> Result<()> {
    let s = matte.shape();
    if s.len() != 3 || s[0] != 1 {
        return Err(Error::Dimension(format!(
            "raw mattes must be 1×H×W, got {s:?}"
        )));
    }
    let bytes: Vec<u8> = matte.data().iter().flat_map(|v| v.to_le_bytes()).collect();
    atomic_write(path, &bytes)?;
    let size = serde_json::to_vec(&RawSize { h: s[1], w: s[2] })?;
    atomic_write(&sidecar(path), &size)
}

pub fn read_f32(path: &Path) -> Result<Tensor> {
    let size: RawSize = serde_json::from_slice(&read_bytes(&sidecar(path))?)?;
    let bytes = read_bytes(path)?;
    if bytes.len() != 4 * size.h * size.w {
        return Err(Error::Dimension(format!(
            "{}: {} bytes for a {}×{} matte",
            path.display(),
            bytes.len(),
            size.h,
            size.w
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok(Tensor::from_vec(&[1, size.h, size.w], data)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceMeta {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub fps: f64,
    /// Free-form origin tag, e.g. `static_bg` or `inferred`.
    pub mode: String,
}

/// Contents of a sequence directory; absent parts are `None`.
#[derive(Debug, Clone)]
pub struct SequenceData {
    pub meta: Option<SequenceMeta>,
    pub frames: Option<Vec<Tensor>>,
    /// Mattes, from the `f32` files when present, else the PGMs.
    pub alphas: Option<Vec<Tensor>>,
    pub initial_mask: Option<Tensor>,
}

pub fn frame_path(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("frame_{i:05}.ppm"))
}

pub fn alpha_path(dir: &Path, i: usize, ext: &str) -> PathBuf {
    dir.join(format!("alpha_{i:05}.{ext}"))
}

pub fn mask_path(dir: &Path) -> PathBuf {
    dir.join("mask_00000.pgm")
}

/// Writes the given parts into `dir` (created if missing).
pub fn write_sequence_dir(
    dir: &Path,
    meta: &SequenceMeta,
    frames: Option<&[Tensor]>,
    alphas: &[Tensor],
    initial_mask: Option<&Tensor>,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, f) in frames.unwrap_or_default().iter().enumerate() {
        write_pnm(&frame_path(dir, i), f)?;
    }
    for (i, a) in alphas.iter().enumerate() {
        write_pnm(&alpha_path(dir, i, "pgm"), a)?;
        write_f32(&alpha_path(dir, i, "f32"), a)?;
    }
    if let Some(m) = initial_mask {
        write_pnm(&mask_path(dir), m)?;
    }
    atomic_write(&dir.join("meta.json"), &serde_json::to_vec_pretty(meta)?)
}

/// Indices `n` of files named `{prefix}{n:05}.{ext}`, checked to be 0..len.
fn indices(dir: &Path, names: &[String], prefix: &str, ext: &str) -> Result<usize> {
    let mut found: Vec<usize> = names
        .iter()
        .filter_map(|n| {
            n.strip_prefix(prefix)?
                .strip_suffix(&format!(".{ext}"))?
                .parse()
                .ok()
        })
        .collect();
    found.sort_unstable();
    for (expected, &got) in found.iter().enumerate() {
        if got != expected {
            return Err(Error::IndexGap {
                dir: dir.to_path_buf(),
                expected: format!("{prefix}{expected:05}.{ext}"),
            });
        }
    }
    Ok(found.len())
}

fn check_sizes(
    dir: &Path,
    what: &str,
    items: &[Tensor],
    size: &mut Option<(usize, usize)>,
) -> Result<()> {
    for (i, t) in items.iter().enumerate() {
        let s = (t.shape()[1], t.shape()[2]);
        match size {
            Some(expected) if *expected != s => {
                return Err(Error::Dimension(format!(
                    "{}: {what} {i} is {}×{}, expected {}×{}",
                    dir.display(),
                    s.0,
                    s.1,
                    expected.0,
                    expected.1
                )))
            }
            _ => *size = Some(s),
        }
    }
    Ok(())
}

pub fn read_sequence_dir(dir: &Path) -> Result<SequenceData> {
    let names: Vec<String> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.file_name().to_string_lossy().into_owned()))
        .collect();
    let meta_path = dir.join("meta.json");
    let meta: Option<SequenceMeta> = if meta_path.exists() {
        Some(serde_json::from_slice(&read_bytes(&meta_path)?)?)
    } else {
        None
    };
    let n_frames = indices(dir, &names, "frame_", "ppm")?;
    let n_pgm = indices(dir, &names, "alpha_", "pgm")?;
    let n_f32 = indices(dir, &names, "alpha_", "f32")?;
    let frames = (n_frames > 0)
        .then(|| {
            (0..n_frames)
                .map(|i| read_pnm(&frame_path(dir, i)))
                .collect::<Result<Vec<_>>>()
        })
        .transpose()?;
    let alphas = if n_f32 > 0 {
        Some(
            (0..n_f32)
                .map(|i| read_f32(&alpha_path(dir, i, "f32")))
                .collect::<Result<Vec<_>>>()?,
        )
    } else if n_pgm > 0 {
        Some(
            (0..n_pgm)
                .map(|i| read_mask(&alpha_path(dir, i, "pgm")))
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        None
    };
    let initial_mask = mask_path(dir)
        .exists()
        .then(|| read_mask(&mask_path(dir)))
        .transpose()?;
    let mut size = meta.as_ref().map(|m| (m.height, m.width));
    if let Some(f) = &frames {
        if f.iter().any(|t| t.shape()[0] != 3) {
            return Err(Error::MalformedHeader {
                path: dir.to_path_buf(),
                msg: "frames must be colour PPM images".into(),
            });
        }
        check_sizes(dir, "frame", f, &mut size)?;
    }
    if let Some(a) = &alphas {
        check_sizes(dir, "alpha", a, &mut size)?;
    }
    if let Some(m) = &initial_mask {
        check_sizes(dir, "mask", std::slice::from_ref(m), &mut size)?;
    }
    if let (Some(f), Some(a)) = (&frames, &alphas) {
        if f.len() != a.len() {
            return Err(Error::Dimension(format!(
                "{}: {} frames but {} mattes",
                dir.display(),
                f.len(),
                a.len()
            )));
        }
    }
    Ok(SequenceData {
        meta,
        frames,
        alphas,
        initial_mask,
    })
}

/// `1×H×W` tensor to an `f64` matte.
pub fn to_matte(t: &Tensor) -> Result<Matte> {
    let s = t.shape();
    if s.len() != 3 || s[0] != 1 {
        return Err(Error::Dimension(format!("matte must be 1×H×W, got {s:?}")));
    }
    Matte::new(s[1], s[2], t.data().iter().map(|&v| v as f64).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceMetrics {
    pub name: String,
    #[serde(flatten)]
    pub report: MetricReport,
}

/// Metric report document; absent metrics serialize as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsDocument {
    pub build: String,
    pub config: serde_json::Value,
    pub sequences: Vec<SequenceMetrics>,
    pub aggregate: Option<MetricReport>,
}

impl MetricsDocument {
    pub fn new(config: serde_json::Value, sequences: Vec<SequenceMetrics>) -> Self {
        let reports: Vec<MetricReport> = sequences.iter().map(|s| s.report).collect();
        Self {
            build: format!("adamatte {}", env!("CARGO_PKG_VERSION")),
            config,
            aggregate: MetricReport::aggregate(&reports),
            sequences,
        }
    }
}
