use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use fvl_core::dual_flow::{fisheye_flows, refine_params, residual_heatmap, window_residuals};
use fvl_core::flow::estimate_flow;
use fvl_core::io;
use fvl_core::metrics::{write_reports, LabeledReport};
use fvl_core::pipeline::{bench as run_bench, correct_video, evaluate, load_dataset, CorrectedVideo, Video};
use fvl_core::raster::{resize_bilinear, Frame};
use fvl_core::synthesis::{build_dataset, scene::benchmark_scenes, write_scenes};
use fvl_core::temporal::{make_weights, stabilize_stream, FlowStream};
use serde::Serialize;

use crate::config::{record_run, RunConfig};
use crate::{BenchArgs, CorrectArgs, DualflowArgs, EvalArgs, FlowArgs, PipelineArgs, SceneArgs, StabilizeArgs, SynthArgs};
use crate::ExitError;

type CmdResult = Result<(), ExitError>;

/// Residual magnitude mapped to white in heatmaps, in pixels.
const HEATMAP_MAX_PX: f64 = 2.0;

fn io_err(e: impl Into<anyhow::Error>) -> ExitError {
    ExitError::Io(e.into())
}

fn start_run(dir: &Path, command: &str, cfg: &RunConfig) -> Result<String, ExitError> {
    cfg.validate()?;
    fs::create_dir_all(dir)
        .with_context(|| format!("creating run directory {}", dir.display()))
        .map_err(io_err)?;
    record_run(dir, command, cfg).map_err(io_err)
}

fn apply_pipeline(cfg: &mut RunConfig, a: &PipelineArgs) -> Result<(), ExitError> {
    let p = &mut cfg.pipeline;
    if let Some(e) = &a.estimator {
        p.estimator = e.clone();
    }
    if let Some(s) = a.sigma {
        p.estimator_options.sigma[0] = s;
    }
    if let Some(s) = a.estimator_seed {
        p.estimator_options.seed = s;
    }
    if a.window.is_some() || a.a1.is_some() {
        let n = a.window.unwrap_or(p.scheme.n());
        let a1 = a.a1.unwrap_or(p.scheme.a1());
        p.scheme = make_weights(n, a1)?;
    }
    Ok(())
}

pub fn scene(cfg: &mut RunConfig, a: &SceneArgs) -> CmdResult {
    let s = &mut cfg.scene;
    if let Some(v) = a.count {
        s.count = v;
    }
    if let Some(v) = a.frames {
        s.frames = v;
    }
    if let Some(v) = a.size {
        s.width = v;
        s.height = v;
    }
    if let Some(v) = a.seed {
        s.seed = v;
    }
    if s.count == 0 || s.frames == 0 || s.width < 2 || s.height < 2 {
        return Err(ExitError::Config(anyhow!("scene count, frames and size must be positive")));
    }
    start_run(&a.out, "scene", cfg)?;
    let s = &cfg.scene;
    let dirs = write_scenes(&benchmark_scenes(s.count, s.frames, s.width, s.height, s.seed), &a.out)?;
    log::info!("wrote {} scenes to {}", dirs.len(), a.out.display());
    Ok(())
}

pub fn synth(cfg: &mut RunConfig, a: &SynthArgs) -> CmdResult {
    let s = &mut cfg.sampler;
    if let Some(v) = a.seed {
        s.seed = v;
    }
    if let Some(v) = a.count {
        s.count = Some(v);
    }
    if let Some(v) = a.size {
        s.width = v;
        s.height = v;
    }
    if let Some(v) = a.frames_per_timestamp {
        s.frames_per_timestamp = v;
    }
    cfg.validate()?;
    if !a.src.is_dir() {
        return Err(io_err(anyhow!("source directory {} does not exist", a.src.display())));
    }
    let manifest = build_dataset(&a.src, &cfg.sampler, &a.out)?;
    start_run(&a.out, "synth", cfg)?;
    log::info!(
        "wrote {} timestamps from {} sequences to {}",
        manifest.timestamps.len(),
        manifest.sequences.len(),
        a.out.display()
    );
    Ok(())
}

fn load(dir: &Path) -> Result<Vec<Video>, ExitError> {
    let (_, videos) = load_dataset(dir)?;
    if videos.is_empty() {
        return Err(io_err(anyhow!("dataset {} has no sequences", dir.display())));
    }
    Ok(videos)
}

fn write_corrected(dir: &Path, c: &CorrectedVideo) -> fvl_core::Result<()> {
    for (k, &i) in c.frame_indices.iter().enumerate() {
        io::write_frame(&c.frames[k], dir.join("frames").join(format!("{i:06}.png")))?;
        io::write_mask(&c.masks[k], dir.join("masks").join(format!("{i:06}.png")))?;
        io::write_flo(&c.fields[k], dir.join("fields").join(format!("{i:06}.flo")))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct SkippedRecord<'a> {
    video: &'a str,
    frame_index: usize,
    reason: &'a str,
}

pub fn correct(cfg: &mut RunConfig, a: &CorrectArgs) -> CmdResult {
    apply_pipeline(cfg, &a.pipeline)?;
    let hash = start_run(&a.out, "correct", cfg)?;
    let videos = load(&a.dataset)?;
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for video in &videos {
        let (corrected, evaluation) = correct_video(video, &cfg.pipeline, a.stabilize)?;
        for s in &corrected.skipped {
            log::warn!("{}: frame {} skipped: {}", video.source_id, s.frame_index, s.reason);
        }
        write_corrected(&a.out.join(&video.source_id), &corrected)?;
        rows.push(LabeledReport {
            video: video.source_id.clone(),
            report: evaluation.report,
        });
        skipped.push(corrected.skipped);
    }
    let records: Vec<SkippedRecord> = videos
        .iter()
        .zip(&skipped)
        .flat_map(|(v, s)| {
            s.iter().map(|s| SkippedRecord {
                video: &v.source_id,
                frame_index: s.frame_index,
                reason: &s.reason,
            })
        })
        .collect();
    io::write_json(&serde_json::json!({ "config_hash": hash, "skipped": records }), a.out.join("skipped.json"))?;
    write_reports(&rows, &hash, &a.out.join("report.csv"), &a.out.join("report.json"))?;
    Ok(())
}

fn list_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>, ExitError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))
        .map_err(io_err)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case(ext)))
        .collect();
    files.sort();
    Ok(files)
}

pub fn eval(cfg: &RunConfig, a: &EvalArgs) -> CmdResult {
    let out = a.run.join("eval");
    let hash = start_run(&out, "eval", cfg)?;
    let videos = load(&a.dataset)?;
    let mut rows = Vec::new();
    for video in &videos {
        let dir = a.run.join(&video.source_id);
        let mut c = CorrectedVideo {
            source_id: video.source_id.clone(),
            frame_indices: Vec::new(),
            frames: Vec::new(),
            masks: Vec::new(),
            fields: Vec::new(),
            references: Vec::new(),
            skipped: Vec::new(),
        };
        for path in list_files(&dir.join("frames"), "png")? {
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            let i: usize = stem
                .parse()
                .map_err(|_| io_err(anyhow!("unexpected frame name {}", path.display())))?;
            let reference = video
                .references
                .get(i)
                .ok_or_else(|| io_err(anyhow!("frame {} is not in the dataset", path.display())))?;
            c.frames.push(io::read_frame(&path)?);
            c.masks.push(io::read_mask(dir.join("masks").join(format!("{stem}.png")))?);
            c.fields.push(io::read_flo(dir.join("fields").join(format!("{stem}.flo")))?);
            c.references.push(reference.clone());
            c.frame_indices.push(i);
        }
        if c.frames.is_empty() {
            return Err(io_err(anyhow!("no corrected frames in {}", dir.display())));
        }
        rows.push(LabeledReport {
            video: video.source_id.clone(),
            report: evaluate(&c, cfg.flow())?.report,
        });
    }
    write_reports(&rows, &hash, &out.join("report.csv"), &out.join("report.json"))?;
    Ok(())
}

pub fn flow(cfg: &RunConfig, a: &FlowArgs) -> CmdResult {
    cfg.validate()?;
    let fa = io::read_frame(&a.a)?;
    let fb = io::read_frame(&a.b)?;
    let field = estimate_flow(&fa, &fb, cfg.flow())?;
    io::write_flo(&field, &a.out)?;
    Ok(())
}

pub fn stabilize(cfg: &mut RunConfig, a: &StabilizeArgs) -> CmdResult {
    if a.window.is_some() || a.a1.is_some() {
        let s = &cfg.pipeline.scheme;
        cfg.pipeline.scheme = make_weights(a.window.unwrap_or(s.n()), a.a1.unwrap_or(s.a1()))?;
    }
    let files = list_files(&a.fields, "flo")?;
    if files.is_empty() {
        return Err(io_err(anyhow!("no .flo files in {}", a.fields.display())));
    }
    start_run(&a.out, "stabilize", cfg)?;
    let fields = files.iter().map(io::read_flo).collect::<fvl_core::Result<Vec<_>>>()?;
    let blended = stabilize_stream(&FlowStream::from_fields(fields)?, &cfg.pipeline.scheme)?;
    for (path, field) in files.iter().zip(blended.fields()) {
        let name = path.file_name().expect("listed files have names");
        io::write_flo(field, a.out.join(name))?;
    }
    Ok(())
}

/// Evenly spaced positions of `take` items among `total`.
fn spread(total: usize, take: Option<usize>) -> Vec<usize> {
    match take {
        Some(t) if t < total => (0..t).map(|i| i * total / t).collect(),
        _ => (0..total).collect(),
    }
}

#[derive(Serialize)]
struct WindowSummary {
    video: String,
    start: usize,
    pair: usize,
    summary: f64,
}

#[derive(Serialize)]
struct RefineRecord {
    video: String,
    start: usize,
    gt_k: [f64; 3],
    init_k: [f64; 3],
    refined_k: Option<[f64; 3]>,
    k1_error: Option<f64>,
    init_objective: Option<f64>,
    objective: Option<f64>,
    evaluations: usize,
    status: String,
}

pub fn dualflow(cfg: &mut RunConfig, a: &DualflowArgs) -> CmdResult {
    let d = &mut cfg.dualflow;
    if let Some(v) = a.k1_offset {
        d.k1_offset = v;
    }
    if a.refine {
        d.refine = true;
    }
    if a.max_windows.is_some() {
        d.max_windows = a.max_windows;
    }
    let hash = start_run(&a.out, "dualflow", cfg)?;
    let d = cfg.dualflow.clone();
    let videos = load(&a.dataset)?;
    let windows: Vec<(&Video, &Vec<usize>)> = videos.iter().flat_map(|v| v.windows.iter().map(move |w| (v, w))).collect();
    let chosen = spread(windows.len(), d.max_windows);

    let mut summaries = Vec::new();
    let mut refinements = Vec::new();
    for &wi in &chosen {
        let (video, indices) = windows[wi];
        let start = indices[0];
        let take = d.frames.min(indices.len());
        let (w, h) = video.fisheye[0].dims();
        let ww = d.work_width.min(w).max(2);
        let wh = ((h * ww) as f64 / w as f64).round().max(2.0) as usize;
        let frames = indices[..take]
            .iter()
            .map(|&i| resize_bilinear(&video.fisheye[i], ww, wh))
            .collect::<fvl_core::Result<Vec<Frame>>>()?;
        let gt = video.params.resized((w, h), (ww, wh));
        let mut candidate = gt;
        candidate.k[0] += d.k1_offset;
        if !candidate.passes_guard() {
            return Err(ExitError::Config(anyhow!(
                "k1 offset {} makes the lens of {} non-monotone",
                d.k1_offset,
                video.source_id
            )));
        }
        let mf = fisheye_flows(&frames, cfg.flow())?;
        let tag = format!("{}_{start:06}", video.source_id);
        match window_residuals(&candidate, &frames, &mf, cfg.flow()) {
            Ok(residuals) => {
                for (p, r) in residuals.iter().enumerate() {
                    let heat = residual_heatmap(&r.residual, HEATMAP_MAX_PX)?;
                    io::write_frame(&heat, a.out.join("heatmaps").join(format!("{tag}_{p}.png")))?;
                    io::write_flo(&r.residual, a.out.join("residuals").join(format!("{tag}_{p}.flo")))?;
                    summaries.push(WindowSummary {
                        video: video.source_id.clone(),
                        start,
                        pair: p,
                        summary: r.summary,
                    });
                }
            }
            Err(e) => log::warn!("{tag}: residual unavailable: {e}"),
        }
        if d.refine {
            let mut record = RefineRecord {
                video: video.source_id.clone(),
                start,
                gt_k: gt.k,
                init_k: candidate.k,
                refined_k: None,
                k1_error: None,
                init_objective: None,
                objective: None,
                evaluations: 0,
                status: "ok".into(),
            };
            match refine_params(&candidate, &frames, &cfg.refine) {
                Ok(r) => {
                    record.refined_k = Some(r.params.k);
                    record.k1_error = Some((r.params.k[0] - gt.k[0]).abs());
                    record.init_objective = Some(r.init_objective);
                    record.objective = Some(r.objective);
                    record.evaluations = r.evaluations;
                }
                Err(e) => {
                    log::warn!("{tag}: refinement failed: {e}");
                    record.status = e.to_string();
                }
            }
            refinements.push(record);
        }
    }

    let mut csv = String::from("video,start,pair,summary,config_hash\n");
    for s in &summaries {
        csv.push_str(&format!("{},{},{},{:.6},{hash}\n", s.video, s.start, s.pair, s.summary));
    }
    io::write_text(&csv, a.out.join("summaries.csv"))?;
    if d.refine {
        let mut csv = String::from("video,start,gt_k1,init_k1,refined_k1,k1_error,init_objective,objective,evaluations,status,config_hash\n");
        let opt = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
        for r in &refinements {
            csv.push_str(&format!(
                "{},{},{:.6},{:.6},{},{},{},{},{},{},{hash}\n",
                r.video,
                r.start,
                r.gt_k[0],
                r.init_k[0],
                opt(r.refined_k.map(|k| k[0])),
                opt(r.k1_error),
                opt(r.init_objective),
                opt(r.objective),
                r.evaluations,
                r.status.replace(',', ";"),
            ));
        }
        io::write_text(&csv, a.out.join("refine.csv"))?;
        io::write_json(
            &serde_json::json!({ "config_hash": hash, "refinements": refinements }),
            a.out.join("refine.json"),
        )?;
    }
    Ok(())
}

pub fn bench(cfg: &mut RunConfig, a: &BenchArgs) -> CmdResult {
    apply_pipeline(cfg, &a.pipeline)?;
    if let Some(e) = &a.estimators {
        cfg.bench.estimators = e.clone();
    }
    if cfg.bench.estimators.is_empty() {
        return Err(ExitError::Config(anyhow!("bench needs at least one estimator")));
    }
    let hash = start_run(&a.out, "bench", cfg)?;
    let videos = load(&a.dataset)?;
    let rows = run_bench(&videos, &cfg.bench.estimators, &cfg.pipeline)?;

    let labeled: Vec<LabeledReport> = rows
        .iter()
        .map(|r| LabeledReport {
            video: r.label(),
            report: r.evaluation.report,
        })
        .collect();
    write_reports(&labeled, &hash, &a.out.join("bench.csv"), &a.out.join("bench.json"))?;

    let mut series = String::from("row,series,index,value,config_hash\n");
    for r in &rows {
        let label = r.label();
        for (i, v) in r.evaluation.frame_jitter.iter().enumerate() {
            series.push_str(&format!("{label},jitter,{i},{v:.6},{hash}\n"));
        }
        for (i, t) in r.evaluation.path.transforms.iter().enumerate() {
            series.push_str(&format!("{label},path_tx,{i},{:.6},{hash}\n", t.tx));
        }
    }
    io::write_text(&series, a.out.join("series.csv"))?;

    let (pw, ph) = (cfg.bench.plot_width, cfg.bench.plot_height);
    for name in &cfg.bench.estimators {
        let mine: Vec<_> = rows.iter().filter(|r| &r.estimator == name).collect();
        let jitter: Vec<Vec<f64>> = mine.iter().map(|r| r.evaluation.frame_jitter.clone()).collect();
        let path: Vec<Vec<f64>> = mine
            .iter()
            .map(|r| r.evaluation.path.transforms.iter().map(|t| t.tx).collect())
            .collect();
        let plot = |s: &[Vec<f64>]| fvl_core::plot::line_chart(s, pw, ph).map_err(|e| ExitError::Config(e.into()));
        io::write_frame(&plot(&jitter)?, a.out.join(format!("jitter_{name}.png")))?;
        io::write_frame(&plot(&path)?, a.out.join(format!("path_tx_{name}.png")))?;
    }
    Ok(())
}
