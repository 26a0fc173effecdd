//! End-to-end correction and evaluation of benchmark videos.
//!
//! A benchmark video is one source sequence of a dataset. Following the
//! overlapping-window protocol, the corrected video consists of the last
//! frame of every timestamp, corrected either with its own per-frame
//! estimate or with the temporally blended field of its window.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::distortion::{intra_frame_flow, DistortionParams};
use crate::error::{Error, Result};
use crate::estimators::{estimator_by_name, EstimateContext, EstimatorOptions, FrameEstimate, FrameEstimator};
use crate::flow::{estimate_flow, FlowConfig};
use crate::io::{self, Manifest, MANIFEST_FILE};
use crate::metrics::{
    camera_path_from_flows, epe, jitter_score, pair_flows, psnr, ssim, stability_triple, CameraPath, MetricReport,
};
use crate::raster::{warp_backward, FlowField, Frame, ValidityMask};
use crate::temporal::{tws_combine_partial, WeightScheme};

/// Frames, references and windows of one source sequence.
#[derive(Debug, Clone)]
pub struct Video {
    /// Position within the dataset; selects per-video random streams.
    pub index: usize,
    pub source_id: String,
    pub fisheye: Vec<Frame>,
    pub references: Vec<Frame>,
    pub params: DistortionParams,
    /// Frame indices of each timestamp, in manifest order.
    pub windows: Vec<Vec<usize>>,
}

/// Reads every sequence of the dataset rooted at `dir`.
pub fn load_dataset(dir: &Path) -> Result<(Manifest, Vec<Video>)> {
    let manifest = Manifest::load(dir.join(MANIFEST_FILE))?;
    let mut videos = Vec::new();
    for (index, s) in manifest.sequences.iter().enumerate() {
        let fisheye = s
            .frames
            .iter()
            .map(|p| io::read_frame(dir.join(p)))
            .collect::<Result<Vec<_>>>()?;
        let references = s
            .references
            .iter()
            .map(|p| io::read_frame(dir.join(p)))
            .collect::<Result<Vec<_>>>()?;
        let params: DistortionParams = io::read_json(dir.join(&s.params))?;
        let windows = manifest
            .timestamps
            .iter()
            .filter(|t| t.source_id == s.source_id)
            .map(|t| t.frame_indices.clone())
            .collect();
        videos.push(Video {
            index,
            source_id: s.source_id.clone(),
            fisheye,
            references,
            params,
            windows,
        });
    }
    Ok((manifest, videos))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedFrame {
    pub frame_index: usize,
    pub reason: String,
}

/// Per-frame estimates of a video; failures are kept with their reason.
pub fn estimate_video(video: &Video, estimator: &dyn FrameEstimator) -> Vec<std::result::Result<FrameEstimate, SkippedFrame>> {
    let one = |i: usize| {
        let ctx = EstimateContext {
            video_index: video.index,
            frame_index: i,
            fisheye: &video.fisheye[i],
            reference: video.references.get(i),
            ground_truth: Some(&video.params),
        };
        estimator.estimate(&ctx).map_err(|e| SkippedFrame {
            frame_index: i,
            reason: e.to_string(),
        })
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..video.fisheye.len()).into_par_iter().map(one).collect()
    }
    #[cfg(not(feature = "parallel"))]
    (0..video.fisheye.len()).map(one).collect()
}

/// A corrected video: one output frame per timestamp.
#[derive(Debug, Clone)]
pub struct CorrectedVideo {
    pub source_id: String,
    pub frame_indices: Vec<usize>,
    pub frames: Vec<Frame>,
    pub masks: Vec<ValidityMask>,
    /// Correction field applied to each output frame.
    pub fields: Vec<FlowField>,
    pub references: Vec<Frame>,
    pub skipped: Vec<SkippedFrame>,
}

/// Corrects the last frame of every window. With `scheme`, the fields of
/// the window's frames (oldest first) are blended; windows longer than the
/// scheme use their newest `n` frames.
pub fn assemble(
    video: &Video,
    estimates: &[std::result::Result<FrameEstimate, SkippedFrame>],
    scheme: Option<&WeightScheme>,
) -> Result<CorrectedVideo> {
    if estimates.len() != video.fisheye.len() {
        return Err(Error::LengthMismatch {
            expected: video.fisheye.len(),
            found: estimates.len(),
        });
    }
    let (w, h) = video.fisheye[0].dims();
    let mut fields: Vec<Option<FlowField>> = vec![None; estimates.len()];
    let mut field_of = |i: usize| -> Result<Option<FlowField>> {
        if fields[i].is_none() {
            if let Ok(e) = &estimates[i] {
                fields[i] = Some(intra_frame_flow(&e.params, w, h)?);
            }
        }
        Ok(fields[i].clone())
    };

    let mut out = CorrectedVideo {
        source_id: video.source_id.clone(),
        frame_indices: Vec::new(),
        frames: Vec::new(),
        masks: Vec::new(),
        fields: Vec::new(),
        references: Vec::new(),
        skipped: estimates.iter().filter_map(|e| e.as_ref().err().cloned()).collect(),
    };
    for window in &video.windows {
        let Some(&last) = window.last() else { continue };
        if estimates[last].is_err() {
            continue;
        }
        let field = match scheme {
            None => field_of(last)?.expect("estimate present"),
            Some(s) => {
                let take = window.len().min(s.n());
                let mut members = Vec::new();
                for &i in &window[window.len() - take..] {
                    if let Some(f) = field_of(i)? {
                        members.push(f);
                    }
                }
                tws_combine_partial(&members, s)?
            }
        };
        let (frame, mask) = warp_backward(&video.fisheye[last], &field)?;
        out.frame_indices.push(last);
        out.frames.push(frame);
        out.masks.push(mask);
        out.fields.push(field);
        out.references.push(video.references[last].clone());
    }
    if out.frames.is_empty() {
        return Err(Error::InvalidInput(format!(
            "video {} has no correctable timestamps",
            video.source_id
        )));
    }
    Ok(out)
}

/// Scores and per-frame traces of a corrected video.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: MetricReport,
    pub path: CameraPath,
    /// Per output frame: mean distance of its field from the video's mean field.
    pub frame_jitter: Vec<f64>,
}

/// Mean PSNR and SSIM against the references, mean EPE of corrected versus
/// reference motion, camera-path stability and field jitter.
pub fn evaluate(video: &CorrectedVideo, flow_cfg: &FlowConfig) -> Result<Evaluation> {
    evaluate_with(video, flow_cfg, None)
}

/// Flows between consecutive reference frames of a whole video.
pub fn reference_flows(video: &Video, flow_cfg: &FlowConfig) -> Result<Vec<FlowField>> {
    pair_flows(&video.references, None, flow_cfg)
}

/// [`evaluate`] with precomputed [`reference_flows`]; entry `j` must be the
/// flow from reference frame `j` to `j + 1`.
pub fn evaluate_with(
    video: &CorrectedVideo,
    flow_cfg: &FlowConfig,
    reference_pairs: Option<&[FlowField]>,
) -> Result<Evaluation> {
    let n = video.frames.len();
    let (mut p, mut s, mut valid_pixels) = (0.0, 0.0, 0usize);
    for i in 0..n {
        p += psnr(&video.frames[i], &video.references[i], &video.masks[i])?;
        s += ssim(&video.frames[i], &video.references[i], &video.masks[i])?;
        valid_pixels += video.masks[i].count();
    }
    let corrected = pair_flows(&video.frames, Some(&video.masks), flow_cfg)?;
    let mut e = 0.0;
    let mut pairs = 0usize;
    for (i, flow) in corrected.iter().enumerate() {
        let (a, b) = (video.frame_indices[i], video.frame_indices[i + 1]);
        let cached = reference_pairs.filter(|_| b == a + 1).and_then(|r| r.get(a));
        let reference = match cached {
            Some(r) => r.clone(),
            None => estimate_flow(&video.references[i], &video.references[i + 1], flow_cfg)?,
        };
        if let Ok(v) = epe(flow, &reference) {
            e += v;
            pairs += 1;
        }
    }
    if pairs == 0 {
        return Err(Error::EmptyValidRegion);
    }
    let path = camera_path_from_flows(&corrected)?;
    let triple = stability_triple(&path)?;
    let jitter = jitter_score(&video.fields)?;
    Ok(Evaluation {
        report: MetricReport {
            psnr: p / n as f64,
            ssim: s / n as f64,
            epe: e / pairs as f64,
            cropping: triple.cropping,
            distortion: triple.distortion,
            stability: triple.stability,
            jitter,
            frames: n,
            valid_pixels,
        },
        path,
        frame_jitter: frame_jitter(&video.fields),
    })
}

fn frame_jitter(fields: &[FlowField]) -> Vec<f64> {
    let Some(first) = fields.first() else { return Vec::new() };
    let len = first.u().len();
    let joint: Vec<bool> = (0..len).map(|i| fields.iter().all(|f| f.valid().as_slice()[i])).collect();
    let m = fields.len() as f64;
    let mean_u: Vec<f64> = (0..len)
        .map(|i| fields.iter().map(|f| f.u()[i] - first.u()[i]).sum::<f64>() / m)
        .collect();
    let mean_v: Vec<f64> = (0..len)
        .map(|i| fields.iter().map(|f| f.v()[i] - first.v()[i]).sum::<f64>() / m)
        .collect();
    fields
        .iter()
        .map(|f| {
            let (mut sum, mut cnt) = (0.0, 0usize);
            for i in (0..len).filter(|&i| joint[i]) {
                let du = f.u()[i] - first.u()[i] - mean_u[i];
                let dv = f.v()[i] - first.v()[i] - mean_v[i];
                sum += du.hypot(dv);
                cnt += 1;
            }
            if cnt == 0 {
                0.0
            } else {
                sum / cnt as f64
            }
        })
        .collect()
}

/// Settings shared by correction and benchmarking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub estimator: String,
    pub estimator_options: EstimatorOptions,
    pub scheme: WeightScheme,
    pub flow: FlowConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            estimator: "ground-truth".into(),
            estimator_options: EstimatorOptions::default(),
            scheme: WeightScheme::default(),
            flow: FlowConfig::default(),
        }
    }
}

/// Estimates, corrects and evaluates one video.
pub fn correct_video(video: &Video, cfg: &PipelineConfig, stabilize: bool) -> Result<(CorrectedVideo, Evaluation)> {
    let estimator = estimator_by_name(&cfg.estimator, &cfg.estimator_options)?;
    let estimates = estimate_video(video, estimator.as_ref());
    let corrected = assemble(video, &estimates, stabilize.then_some(&cfg.scheme))?;
    let evaluation = evaluate(&corrected, &cfg.flow)?;
    Ok((corrected, evaluation))
}

/// One cell of the benchmark grid.
#[derive(Debug, Clone)]
pub struct BenchRow {
    pub estimator: String,
    pub stabilize: bool,
    pub source_id: String,
    pub evaluation: Evaluation,
}

impl BenchRow {
    pub fn label(&self) -> String {
        format!(
            "{}/{}/{}",
            self.source_id,
            self.estimator,
            if self.stabilize { "tws" } else { "raw" }
        )
    }
}

/// Runs `{estimators} x {raw, stabilized}` on every video. Estimates are
/// shared between the raw and stabilized runs of an estimator.
pub fn bench(videos: &[Video], estimators: &[String], cfg: &PipelineConfig) -> Result<Vec<BenchRow>> {
    let references = videos
        .iter()
        .map(|v| reference_flows(v, &cfg.flow))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for name in estimators {
        let estimator = estimator_by_name(name, &cfg.estimator_options)?;
        let per_video = |(video, refs): (&Video, &Vec<FlowField>)| -> Result<Vec<BenchRow>> {
            let estimates = estimate_video(video, estimator.as_ref());
            [false, true]
                .into_iter()
                .map(|stabilize| {
                    let corrected = assemble(video, &estimates, stabilize.then_some(&cfg.scheme))?;
                    Ok(BenchRow {
                        estimator: name.clone(),
                        stabilize,
                        source_id: video.source_id.clone(),
                        evaluation: evaluate_with(&corrected, &cfg.flow, Some(refs))?,
                    })
                })
                .collect()
        };
        #[cfg(feature = "parallel")]
        let done: Vec<Result<Vec<BenchRow>>> = {
            use rayon::prelude::*;
            videos.par_iter().zip(&references).map(per_video).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let done: Vec<Result<Vec<BenchRow>>> = videos.iter().zip(&references).map(per_video).collect();
        for d in done {
            rows.extend(d?);
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthesis::scene::{pan_sequence, SceneConfig};
    use crate::synthesis::{distort_frame, window_count};

    fn video(frames: usize, size: usize) -> Video {
        let (planar, _) = pan_sequence(&SceneConfig {
            width: size,
            height: size,
            frames,
            velocity: [1.5, 0.5],
            texture_sigma: 2.5,
            seed: 12,
        });
        let params = DistortionParams::for_frame([-0.2, 0.01, 0.0], size, size);
        let n = 5;
        Video {
            index: 0,
            source_id: "v".into(),
            fisheye: planar.iter().map(|f| distort_frame(f, &params)).collect(),
            references: planar,
            params,
            windows: (0..window_count(frames, n)).map(|s| (s..s + n).collect()).collect(),
        }
    }

    #[test]
    fn ground_truth_correction_restores_references() {
        let v = video(14, 96);
        let (c, e) = correct_video(&v, &PipelineConfig::default(), false).unwrap();
        assert_eq!(c.frames.len(), 10);
        assert_eq!(c.frame_indices, (4..14).collect::<Vec<_>>());
        assert!(e.report.psnr >= 35.0, "{:?}", e.report);
        assert!(e.report.ssim >= 0.95);
        assert_eq!(e.report.jitter, 0.0);
        assert!(e.frame_jitter.iter().all(|&j| j == 0.0));
        let (_, s) = correct_video(&v, &PipelineConfig::default(), true).unwrap();
        assert!((s.report.psnr - e.report.psnr).abs() < 1e-6);
    }

    #[test]
    fn failed_estimates_are_skipped() {
        let v = video(14, 64);
        let est = estimator_by_name("ground-truth", &EstimatorOptions::default()).unwrap();
        let mut estimates = estimate_video(&v, est.as_ref());
        estimates[13] = Err(SkippedFrame {
            frame_index: 13,
            reason: "test".into(),
        });
        let raw = assemble(&v, &estimates, None).unwrap();
        assert_eq!(raw.frames.len(), 9);
        assert_eq!(raw.skipped.len(), 1);
        let tws = assemble(&v, &estimates, Some(&WeightScheme::default())).unwrap();
        assert_eq!(tws.frames.len(), 9);
    }

    #[test]
    fn stabilized_fields_jitter_less() {
        let v = video(16, 64);
        let cfg = PipelineConfig {
            estimator: "oracle-noisy".into(),
            ..PipelineConfig::default()
        };
        let est = estimator_by_name(&cfg.estimator, &cfg.estimator_options).unwrap();
        let estimates = estimate_video(&v, est.as_ref());
        let raw = assemble(&v, &estimates, None).unwrap();
        let tws = assemble(&v, &estimates, Some(&cfg.scheme)).unwrap();
        let (jr, js) = (jitter_score(&raw.fields).unwrap(), jitter_score(&tws.fields).unwrap());
        assert!(js <= 0.7 * jr, "{js} {jr}");
    }
}
