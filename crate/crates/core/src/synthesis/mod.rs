//! Synthetic fisheye video benchmark.
//!
//! Planar sequences are resized, warped through the radial model with
//! randomly drawn coefficients and cut into overlapping windows
//! ("timestamps") of `n` frames with stride one.

pub mod scene;

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distortion::{frame_center, half_diagonal, intra_frame_flow, undistorted_of, DistortionParams, PixelCoord};
use crate::error::{Error, Result};
use crate::io::{self, Manifest, SequenceRecord, TimestampRecord, MANIFEST_FILE, MANIFEST_VERSION};
use crate::raster::{quantize, resize_bilinear, sample_bilinear, FlowField, Frame};

pub const MAX_SAMPLING_ATTEMPTS: usize = 100;

/// Random lens generator and dataset layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub k1_range: [f64; 2],
    pub k2_range: [f64; 2],
    pub k3_range: [f64; 2],
    /// Radius in pixels of the disk the distortion center is drawn from.
    pub center_jitter: f64,
    pub seed: u64,
    /// Frames per timestamp.
    pub frames_per_timestamp: usize,
    pub width: usize,
    pub height: usize,
    /// Upper bound on the number of timestamps written; `None` keeps all.
    pub count: Option<usize>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            k1_range: [-0.35, -0.05],
            k2_range: [-0.05, 0.05],
            k3_range: [-0.01, 0.01],
            center_jitter: 2.0,
            seed: 0,
            frames_per_timestamp: 5,
            width: 256,
            height: 256,
            count: None,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [("k1", self.k1_range), ("k2", self.k2_range), ("k3", self.k3_range)] {
            if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]) {
                return Err(Error::InvalidInput(format!("{name} range {r:?} is not a finite interval")));
            }
        }
        if !(self.center_jitter >= 0.0 && self.center_jitter.is_finite()) {
            return Err(Error::InvalidInput("center_jitter must be non-negative".into()));
        }
        if self.frames_per_timestamp < 2 {
            return Err(Error::InvalidInput("frames_per_timestamp must be at least 2".into()));
        }
        if self.width < 2 || self.height < 2 {
            return Err(Error::InvalidInput("output size must be at least 2x2".into()));
        }
        Ok(())
    }
}

/// Window of consecutive fisheye frames sharing one lens.
#[derive(Debug, Clone, PartialEq)]
pub struct Timestamp {
    pub frames: Vec<Frame>,
    /// Resized planar frames the fisheye frames were made from.
    pub references: Vec<Frame>,
    pub params: DistortionParams,
    pub source_id: String,
    pub frame_indices: Vec<usize>,
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    r[0] + (r[1] - r[0]) * rng.gen::<f64>()
}

/// Draw number `draw_index` of the configured lens distribution.
///
/// Draws are rejected until the radial map is monotone over the frame.
pub fn sample_params(cfg: &SamplerConfig, draw_index: u64) -> Result<DistortionParams> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(draw_index);
    let base = frame_center(cfg.width, cfg.height);
    let norm = half_diagonal(cfg.width, cfg.height);
    for _ in 0..MAX_SAMPLING_ATTEMPTS {
        let k = [
            uniform(&mut rng, cfg.k1_range),
            uniform(&mut rng, cfg.k2_range),
            uniform(&mut rng, cfg.k3_range),
        ];
        let rad = cfg.center_jitter * rng.gen::<f64>().sqrt();
        let theta = rng.gen::<f64>() * std::f64::consts::TAU;
        let center = [base[0] + rad * theta.cos(), base[1] + rad * theta.sin()];
        let p = DistortionParams::new(k, center, norm)?;
        if p.passes_guard() {
            return Ok(p);
        }
    }
    Err(Error::SamplingExhausted {
        attempts: MAX_SAMPLING_ATTEMPTS,
    })
}

/// Renders one fisheye frame: `fisheye(pd) = planar(undistorted_of(pd))`.
pub fn distort_frame(planar: &Frame, params: &DistortionParams) -> Frame {
    let (w, h, ch) = (planar.width(), planar.height(), planar.channels());
    let mut data = vec![0u8; w * h * ch];
    let fill_row = |y: usize, row: &mut [u8]| {
        for x in 0..w {
            let pu = undistorted_of(PixelCoord::new(x as f64, y as f64), params);
            if let Some(vals) = sample_bilinear(planar, pu) {
                for c in 0..ch {
                    row[x * ch + c] = quantize(vals[c]);
                }
            }
        }
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        data.par_chunks_mut(w * ch).enumerate().for_each(|(y, row)| fill_row(y, row));
    }
    #[cfg(not(feature = "parallel"))]
    data.chunks_mut(w * ch).enumerate().for_each(|(y, row)| fill_row(y, row));
    Frame::new(w, h, ch, data).expect("same layout as the planar frame")
}

/// Resizes every planar frame to `size` and distorts it with `params`.
///
/// Returns the timestamp and the ground-truth correction field.
pub fn synthesize_timestamp(
    planar: &[Frame],
    params: &DistortionParams,
    size: (usize, usize),
    source_id: &str,
    frame_indices: &[usize],
) -> Result<(Timestamp, FlowField)> {
    if planar.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "a timestamp needs at least 2 frames, got {}",
            planar.len()
        )));
    }
    if frame_indices.len() != planar.len() {
        return Err(Error::LengthMismatch {
            expected: planar.len(),
            found: frame_indices.len(),
        });
    }
    let dims = planar[0].dims();
    if let Some(f) = planar.iter().find(|f| f.dims() != dims) {
        return Err(Error::DimensionMismatch {
            expected: dims,
            found: f.dims(),
        });
    }
    let references = planar
        .iter()
        .map(|f| resize_bilinear(f, size.0, size.1))
        .collect::<Result<Vec<_>>>()?;
    let frames = references.iter().map(|f| distort_frame(f, params)).collect();
    let flow = intra_frame_flow(params, size.0, size.1)?;
    Ok((
        Timestamp {
            frames,
            references,
            params: *params,
            source_id: source_id.to_owned(),
            frame_indices: frame_indices.to_vec(),
        },
        flow,
    ))
}

/// Number of stride-one windows of length `n` in a sequence of `len` frames.
pub fn window_count(len: usize, n: usize) -> usize {
    if len < n {
        0
    } else {
        len - n + 1
    }
}

/// Ordered image sequences under `source_dir`, one per subdirectory.
pub fn discover_sequences(source_dir: &Path) -> Result<Vec<(String, Vec<PathBuf>)>> {
    let entries = fs::read_dir(source_dir).map_err(|e| Error::io(source_dir, e))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    let mut out = Vec::new();
    for d in dirs {
        let mut frames: Vec<PathBuf> = fs::read_dir(&d)
            .map_err(|e| Error::io(&d, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && io::is_frame_path(p))
            .collect();
        frames.sort();
        if !frames.is_empty() {
            let id = d
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            out.push((id, frames));
        }
    }
    Ok(out)
}

struct SequencePlan {
    index: usize,
    source_id: String,
    paths: Vec<PathBuf>,
    windows: usize,
}

/// Writes a dataset under `out_dir` and returns its manifest.
///
/// Each source sequence gets one lens (draw index = sequence position), so
/// all of its overlapping timestamps share the same ground truth.
pub fn build_dataset(source_dir: &Path, cfg: &SamplerConfig, out_dir: &Path) -> Result<Manifest> {
    cfg.validate()?;
    let sequences = discover_sequences(source_dir)?;
    let n = cfg.frames_per_timestamp;
    let mut remaining = cfg.count.unwrap_or(usize::MAX);
    let mut plans = Vec::new();
    for (index, (source_id, paths)) in sequences.into_iter().enumerate() {
        let windows = window_count(paths.len(), n).min(remaining);
        if windows == 0 {
            continue;
        }
        remaining -= windows;
        let used = windows + n - 1;
        plans.push(SequencePlan {
            index,
            source_id,
            paths: paths[..used].to_vec(),
            windows,
        });
    }
    if plans.is_empty() {
        return Err(Error::EmptySource(source_dir.into()));
    }

    let run = |plan: &SequencePlan| write_sequence(plan, cfg, out_dir);
    #[cfg(feature = "parallel")]
    let written: Vec<Result<(SequenceRecord, Vec<TimestampRecord>)>> = {
        use rayon::prelude::*;
        plans.par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let written: Vec<Result<(SequenceRecord, Vec<TimestampRecord>)>> = plans.iter().map(run).collect();

    let mut seq_records = Vec::new();
    let mut ts_records = Vec::new();
    for w in written {
        let (s, t) = w?;
        seq_records.push(s);
        ts_records.extend(t);
    }
    for (i, t) in ts_records.iter_mut().enumerate() {
        let id = format!("ts_{i:06}");
        let params_rel = PathBuf::from("timestamps").join(&id).join("params.json");
        let params: DistortionParams = io::read_json(out_dir.join(&t.params))?;
        io::write_json(&params, out_dir.join(&params_rel))?;
        t.timestamp_id = id;
        t.params = params_rel;
    }
    let dataset_id = format!(
        "{}-seed{}",
        source_dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into()),
        cfg.seed
    );
    let manifest = Manifest {
        version: MANIFEST_VERSION.into(),
        dataset_id,
        generator: cfg.clone(),
        sequences: seq_records,
        timestamps: ts_records,
    };
    manifest.save(out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

fn write_sequence(
    plan: &SequencePlan,
    cfg: &SamplerConfig,
    out_dir: &Path,
) -> Result<(SequenceRecord, Vec<TimestampRecord>)> {
    let params = sample_params(cfg, plan.index as u64)?;
    let planar = plan.paths.iter().map(io::read_frame).collect::<Result<Vec<_>>>()?;
    let indices: Vec<usize> = (0..planar.len()).collect();
    let (ts, flow) = synthesize_timestamp(&planar, &params, (cfg.width, cfg.height), &plan.source_id, &indices)?;

    let seq_dir = PathBuf::from("sequences").join(&plan.source_id);
    let mut frames = Vec::new();
    let mut references = Vec::new();
    for (i, (fish, reference)) in ts.frames.iter().zip(&ts.references).enumerate() {
        let f = seq_dir.join("fisheye").join(format!("{i:06}.png"));
        let r = seq_dir.join("planar").join(format!("{i:06}.png"));
        io::write_frame(fish, out_dir.join(&f))?;
        io::write_frame(reference, out_dir.join(&r))?;
        frames.push(f);
        references.push(r);
    }
    let flow_rel = seq_dir.join("gt_flow.flo");
    let params_rel = seq_dir.join("params.json");
    io::write_flo(&flow, out_dir.join(&flow_rel))?;
    io::write_json(&params, out_dir.join(&params_rel))?;

    let n = cfg.frames_per_timestamp;
    let timestamps = (0..plan.windows)
        .map(|start| TimestampRecord {
            timestamp_id: String::new(),
            source_id: plan.source_id.clone(),
            frame_indices: (start..start + n).collect(),
            frames: frames[start..start + n].to_vec(),
            references: references[start..start + n].to_vec(),
            flow: flow_rel.clone(),
            params: params_rel.clone(),
        })
        .collect();
    Ok((
        SequenceRecord {
            source_id: plan.source_id.clone(),
            frames,
            references,
            flow: flow_rel,
            params: params_rel,
        },
        timestamps,
    ))
}

/// Writes procedural pan scenes as `<dir>/<scene_id>/NNNNNN.png`.
pub fn write_scenes(scenes: &[scene::SceneConfig], dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for (i, cfg) in scenes.iter().enumerate() {
        let (frames, _) = scene::pan_sequence(cfg);
        let sdir = dir.join(format!("scene_{i:03}"));
        for (t, f) in frames.iter().enumerate() {
            io::write_frame(f, sdir.join(format!("{t:06}.png")))?;
        }
        out.push(sdir);
    }
    Ok(out)
}
