//! File formats: Middlebury `.flo`, PNG/PGM/PPM frames, JSON documents and
//! the dataset manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, ImageFormat, RgbImage};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{FlowField, Frame, ValidityMask};
use crate::synthesis::SamplerConfig;

pub const FLO_MAGIC: &[u8; 4] = b"PIEH";
/// Values at or above this magnitude mark an unknown flow vector.
pub const FLO_UNKNOWN: f32 = 1e9;
const FLO_UNKNOWN_THRESHOLD: f32 = 1e9;
pub const FLO_MAX_SIDE: usize = 99_999;

pub const MANIFEST_VERSION: &str = "1";

/// Encodes a flow field in Middlebury layout; invalid pixels become `1e9`.
pub fn encode_flo(flow: &FlowField) -> Result<Vec<u8>> {
    let (w, h) = flow.dims();
    if w > FLO_MAX_SIDE || h > FLO_MAX_SIDE {
        return Err(Error::DimensionOverflow { width: w, height: h });
    }
    let mut out = Vec::with_capacity(12 + 8 * w * h);
    out.extend_from_slice(FLO_MAGIC);
    out.extend_from_slice(&(w as i32).to_le_bytes());
    out.extend_from_slice(&(h as i32).to_le_bytes());
    for y in 0..h {
        for x in 0..w {
            let (u, v) = match flow.get(x, y) {
                Some((u, v)) => (u as f32, v as f32),
                None => (FLO_UNKNOWN, FLO_UNKNOWN),
            };
            out.extend_from_slice(&u.to_le_bytes());
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Decodes Middlebury bytes; `path` is only used in error messages.
pub fn decode_flo(bytes: &[u8], path: &Path) -> Result<FlowField> {
    if bytes.len() < 4 {
        return Err(Error::TruncatedFile(path.into()));
    }
    if &bytes[..4] != FLO_MAGIC {
        return Err(Error::BadMagic(path.into()));
    }
    if bytes.len() < 12 {
        return Err(Error::TruncatedFile(path.into()));
    }
    let w = i32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    let h = i32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if w < 1 || h < 1 || w as usize > FLO_MAX_SIDE || h as usize > FLO_MAX_SIDE {
        return Err(Error::DimensionOverflow {
            width: w.max(0) as usize,
            height: h.max(0) as usize,
        });
    }
    let (w, h) = (w as usize, h as usize);
    let n = w * h;
    if bytes.len() < 12 + 8 * n {
        return Err(Error::TruncatedFile(path.into()));
    }
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut valid = vec![true; n];
    for i in 0..n {
        let off = 12 + 8 * i;
        let fu = f32::from_le_bytes(bytes[off..off + 4].try_into().expect("4 bytes"));
        let fv = f32::from_le_bytes(bytes[off + 4..off + 8].try_into().expect("4 bytes"));
        if !(fu.abs() < FLO_UNKNOWN_THRESHOLD && fv.abs() < FLO_UNKNOWN_THRESHOLD) {
            valid[i] = false;
        } else {
            u[i] = fu as f64;
            v[i] = fv as f64;
        }
    }
    FlowField::new(w, h, u, v, ValidityMask::from_vec(w, h, valid)?)
}

pub fn write_flo(flow: &FlowField, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_flo(flow)?;
    write_bytes(path, &bytes)
}

pub fn read_flo(path: impl AsRef<Path>) -> Result<FlowField> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_flo(&bytes, path)
}

fn format_for(path: &Path) -> Result<ImageFormat> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase());
    match ext.as_deref() {
        Some("png") => Ok(ImageFormat::Png),
        Some("pgm") | Some("ppm") | Some("pnm") => Ok(ImageFormat::Pnm),
        _ => Err(Error::UnsupportedFormat(path.into())),
    }
}

/// True when the extension names a raster format this module reads.
pub fn is_frame_path(path: &Path) -> bool {
    format_for(path).is_ok()
}

pub fn read_frame(path: impl AsRef<Path>) -> Result<Frame> {
    let path = path.as_ref();
    let format = format_for(path)?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = image::load_from_memory_with_format(&bytes, format).map_err(|e| Error::CorruptFile {
        path: path.into(),
        reason: e.to_string(),
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let frame = match img {
        DynamicImage::ImageLuma8(g) => Frame::new(w, h, 1, g.into_raw()),
        DynamicImage::ImageRgb8(c) => Frame::new(w, h, 3, c.into_raw()),
        other if other.color().has_color() => Frame::new(w, h, 3, other.to_rgb8().into_raw()),
        other => Frame::new(w, h, 1, other.to_luma8().into_raw()),
    };
    frame.map_err(|e| Error::CorruptFile {
        path: path.into(),
        reason: e.to_string(),
    })
}

/// Encodes a frame in the format implied by `path`'s extension.
pub fn encode_frame(frame: &Frame, path: &Path) -> Result<Vec<u8>> {
    let format = format_for(path)?;
    let (w, h) = (frame.width() as u32, frame.height() as u32);
    let img = match frame.channels() {
        1 => DynamicImage::ImageLuma8(
            GrayImage::from_raw(w, h, frame.data().to_vec()).expect("frame length checked"),
        ),
        _ => DynamicImage::ImageRgb8(RgbImage::from_raw(w, h, frame.data().to_vec()).expect("frame length checked")),
    };
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, format).map_err(|e| Error::CorruptFile {
        path: path.into(),
        reason: e.to_string(),
    })?;
    Ok(buf.into_inner())
}

pub fn write_frame(frame: &Frame, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_frame(frame, path)?;
    write_bytes(path, &bytes)
}

/// Masks are stored as 8-bit gray images with 0 / 255.
pub fn write_mask(mask: &ValidityMask, path: impl AsRef<Path>) -> Result<()> {
    let (w, h) = mask.dims();
    let data = mask.as_slice().iter().map(|&b| if b { 255 } else { 0 }).collect();
    write_frame(&Frame::new(w, h, 1, data)?, path)
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<ValidityMask> {
    let f = read_frame(path)?.to_gray();
    let (w, h) = f.dims();
    ValidityMask::from_vec(w, h, f.data().iter().map(|&v| v >= 128).collect())
}

pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::Json {
        path: path.into(),
        source: e,
    })?;
    bytes.push(b'\n');
    write_bytes(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Json {
        path: path.into(),
        source: e,
    })
}

pub fn write_text(text: &str, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), text.as_bytes())
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

/// One distorted source sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceRecord {
    pub source_id: String,
    /// Fisheye frames, in source order.
    pub frames: Vec<PathBuf>,
    /// Resized distortion-free frames matching `frames`.
    pub references: Vec<PathBuf>,
    pub flow: PathBuf,
    pub params: PathBuf,
}

/// One overlapping window of a sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimestampRecord {
    pub timestamp_id: String,
    pub source_id: String,
    pub frame_indices: Vec<usize>,
    pub frames: Vec<PathBuf>,
    pub references: Vec<PathBuf>,
    pub flow: PathBuf,
    pub params: PathBuf,
}

/// Dataset index; every path is relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: String,
    pub dataset_id: String,
    pub generator: SamplerConfig,
    pub sequences: Vec<SequenceRecord>,
    pub timestamps: Vec<TimestampRecord>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Manifest> {
        let path = path.as_ref();
        let m: Manifest = read_json(path)?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::CorruptFile {
                path: path.into(),
                reason: format!("unsupported manifest version {:?}", m.version),
            });
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(self, path)
    }

    /// Every artifact the manifest references, plus the manifest itself,
    /// sorted and deduplicated.
    pub fn files(&self) -> Vec<PathBuf> {
        let mut out: Vec<PathBuf> = vec![PathBuf::from(MANIFEST_FILE)];
        for s in &self.sequences {
            out.extend(s.frames.iter().cloned());
            out.extend(s.references.iter().cloned());
            out.push(s.flow.clone());
            out.push(s.params.clone());
        }
        for t in &self.timestamps {
            out.extend(t.frames.iter().cloned());
            out.extend(t.references.iter().cloned());
            out.push(t.flow.clone());
            out.push(t.params.clone());
        }
        out.sort();
        out.dedup();
        out
    }
}
