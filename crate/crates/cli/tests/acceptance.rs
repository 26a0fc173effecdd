//! Acceptance suite. Runs every criterion in order, prints one PASS/FAIL
//! line each and exits non-zero if any failed.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use fvl_core::distortion::{intra_frame_flow, undistorted_of, DistortionParams, PixelCoord};
use fvl_core::dual_flow::{deformation_residual, fisheye_flows, window_residuals};
use fvl_core::flow::{estimate_flow, FlowConfig};
use fvl_core::io;
use fvl_core::metrics::{psnr, ssim};
use fvl_core::pipeline::{load_dataset, Video};
use fvl_core::raster::warp_backward;
use fvl_core::synthesis::scene::TextureCanvas;
use fvl_core::synthesis::{sample_params, SamplerConfig};
use fvl_core::temporal::{make_weights, tws_combine};
use fvl_core::{FlowField, Frame, ValidityMask};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_fvl");

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn fvl(args: &[&str]) -> Result<(), String> {
    let out = Command::new(BIN)
        .args(args)
        .env_remove("FVL_THREADS")
        .output()
        .map_err(|e| format!("spawning fvl: {e}"))?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "fvl {} exited with {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

/// Relative path to contents of every file below `root`.
fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn criterion_1() -> Outcome {
    let cfg = SamplerConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for set in 0..100 {
        let p = sample_params(&cfg, set).unwrap();
        let inv = p.inverse();
        for _ in 0..1000 {
            let pd = PixelCoord::new(
                rng.gen_range(0.0..(cfg.width - 1) as f64),
                rng.gen_range(0.0..(cfg.height - 1) as f64),
            );
            match inv.distorted_of(undistorted_of(pd, &p)) {
                Ok(back) => worst = worst.max((back - pd).norm()),
                Err(_) => worst = f64::INFINITY,
            }
        }
    }
    outcome(worst <= 1e-6, format!("max round-trip error {worst:.2e} px over 100 x 1000 points"))
}

fn criterion_2(videos: &[Video]) -> Outcome {
    let (mut worst_psnr, mut worst_ssim, mut timestamps) = (f64::INFINITY, f64::INFINITY, 0);
    for v in videos {
        let (w, h) = v.fisheye[0].dims();
        let field = intra_frame_flow(&v.params, w, h).unwrap();
        let scores: Vec<(f64, f64)> = v
            .fisheye
            .iter()
            .zip(&v.references)
            .map(|(f, r)| {
                let (c, m) = warp_backward(f, &field).unwrap();
                (psnr(&c, r, &m).unwrap(), ssim(&c, r, &m).unwrap())
            })
            .collect();
        for win in &v.windows {
            let n = win.len() as f64;
            let p = win.iter().map(|&i| scores[i].0).sum::<f64>() / n;
            let q = win.iter().map(|&i| scores[i].1).sum::<f64>() / n;
            worst_psnr = worst_psnr.min(p);
            worst_ssim = worst_ssim.min(q);
            timestamps += 1;
        }
    }
    outcome(
        timestamps >= 20 && worst_psnr >= 35.0 && worst_ssim >= 0.95,
        format!("{timestamps} timestamps, worst PSNR {worst_psnr:.2} dB, worst SSIM {worst_ssim:.4}"),
    )
}

fn criterion_3() -> Outcome {
    let s = make_weights(5, 0.3).unwrap();
    let exact = s.weights() == [0.3, 0.25, 0.2, 0.15, 0.1];
    let sum_err = (s.weights().iter().sum::<f64>() - 1.0).abs();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (w, h) = (64, 64);
    let trials = 10;
    let (mut out_sq, mut count) = (0.0, 0usize);
    for _ in 0..trials {
        let fields: Vec<FlowField> = (0..5)
            .map(|_| {
                let u = (0..w * h).map(|_| rng.sample(StandardNormal)).collect();
                let v = (0..w * h).map(|_| rng.sample(StandardNormal)).collect();
                FlowField::new(w, h, u, v, ValidityMask::full(w, h)).unwrap()
            })
            .collect();
        let blended = tws_combine(&fields, &s).unwrap();
        out_sq += blended.u().iter().chain(blended.v()).map(|x| x * x).sum::<f64>();
        count += 2 * w * h;
    }
    let factor = (out_sq / count as f64).sqrt();
    let target = 0.225f64.sqrt();
    let rel = (factor - target).abs() / target;
    outcome(
        exact && sum_err <= 1e-12 && rel <= 0.03,
        format!("weights exact: {exact}, sum error {sum_err:.1e}, attenuation {factor:.4} vs {target:.4} ({:.2}%)", rel * 100.0),
    )
}

fn criterion_4(dataset: &Path, work: &Path) -> Outcome {
    let out = work.join("c4");
    if let Err(e) = fvl(&[
        "bench", "--dataset", s(dataset), "--out", s(&out), "--estimators", "oracle-noisy", "--sigma", "0.02",
    ]) {
        return outcome(false, e);
    }
    let doc: Value = serde_json::from_slice(&fs::read(out.join("bench.json")).unwrap()).unwrap();
    let mut rows: BTreeMap<String, (f64, f64)> = BTreeMap::new();
    let mut raw = BTreeMap::new();
    for r in doc["reports"].as_array().unwrap() {
        let label = r["video"].as_str().unwrap();
        let vals = (r["jitter"].as_f64().unwrap(), r["stability"].as_f64().unwrap());
        match label.strip_suffix("/raw") {
            Some(v) => raw.insert(v.to_string(), vals),
            None => rows.insert(label.strip_suffix("/tws").unwrap().to_string(), vals),
        };
    }
    let mut pass = !rows.is_empty() && rows.len() == raw.len();
    let mut parts = Vec::new();
    for (video, (tj, ts)) in &rows {
        let (rj, rs) = raw[video];
        let ratio = tj / rj;
        pass &= ratio <= 0.55 && ts > &rs;
        parts.push(format!("{video}: jitter x{ratio:.2}, stability {rs:.3}->{ts:.3}"));
    }
    outcome(pass, parts.join("; "))
}

/// Diagnostic split: radial map slope below which bilinear sampling of W
/// and Mf loses accuracy.
const MIN_SLOPE: f64 = 0.25;

fn well_conditioned(p: &DistortionParams, warp: &FlowField, x: f64, y: f64) -> bool {
    let Some((u, v)) = warp.sample(PixelCoord::new(x, y)) else {
        return false;
    };
    let c = p.center();
    let r = (x + u - c.x).hypot(y + v - c.y) / p.norm_radius;
    p.radial_map_derivative(r) >= MIN_SLOPE
}

fn criterion_5(videos: &[Video]) -> Outcome {
    let (mut worst_analytic, mut worst_all): (f64, f64) = (0.0, 0.0);
    let (mut kept, mut total) = (0usize, 0usize);
    let mut per_video = Vec::new();
    for v in videos {
        let mut worst_video: f64 = 0.0;
        let p = &v.params;
        let (w, h) = v.fisheye[0].dims();
        let warp = intra_frame_flow(p, w, h).unwrap();
        let inv = p.inverse();
        for t in [(3.0, 0.0), (2.0, 1.0), (-1.0, 2.0)] {
            let mf = FlowField::from_fn(w, h, |x, y| {
                let pd = PixelCoord::new(x as f64, y as f64);
                let pu = undistorted_of(pd, p);
                let q = inv.distorted_of(PixelCoord::new(pu.x + t.0, pu.y + t.1)).ok()?;
                Some((q.x - pd.x, q.y - pd.y))
            });
            let mn = FlowField::constant(w, h, t.0, t.1);
            let r = deformation_residual(&warp, &mf, &mn).unwrap();
            for y in 0..h {
                for x in 0..w {
                    let Some((du, dv)) = r.residual.get(x, y) else { continue };
                    let m = du.hypot(dv);
                    total += 1;
                    worst_all = worst_all.max(m);
                    worst_video = worst_video.max(m);
                    let (bx, by) = (x as f64, y as f64);
                    if well_conditioned(p, &warp, bx, by) && well_conditioned(p, &warp, bx + t.0, by + t.1) {
                        kept += 1;
                        worst_analytic = worst_analytic.max(m);
                    }
                }
            }
        }
        per_video.push(format!("{worst_video:.1e}"));
    }
    let cfg = FlowConfig::default();
    let mut worst_estimated: f64 = 0.0;
    for v in videos {
        let start = v.windows[0][0];
        let frames: Vec<Frame> = v.fisheye[start..start + 3].to_vec();
        let mf = fisheye_flows(&frames, &cfg).unwrap();
        for r in window_residuals(&v.params, &frames, &mf, &cfg).unwrap() {
            worst_estimated = worst_estimated.max(r.summary);
        }
    }
    outcome(
        worst_all <= 1e-3 && worst_estimated <= 0.5,
        format!(
            "analytic max |dM - dW| {worst_all:.2e} px (per video {}; {:.2e} px on the {:.1}% of pixels with slope >= {MIN_SLOPE}), \
             estimated-flow summary {worst_estimated:.3} px",
            per_video.join(", "),
            worst_analytic,
            100.0 * kept as f64 / total.max(1) as f64
        ),
    )
}

fn criterion_6(dataset: &Path, work: &Path) -> Outcome {
    let out = work.join("c6");
    if let Err(e) = fvl(&[
        "dualflow", "--dataset", s(dataset), "--out", s(&out), "--k1-offset", "0.05", "--refine", "--max-windows", "20",
    ]) {
        return outcome(false, e);
    }
    let doc: Value = serde_json::from_slice(&fs::read(out.join("refine.json")).unwrap()).unwrap();
    let rows = doc["refinements"].as_array().unwrap();
    let recovered = rows
        .iter()
        .filter(|r| r["k1_error"].as_f64().is_some_and(|e| e <= 0.015))
        .count();
    let monotone = rows.iter().all(|r| match (r["objective"].as_f64(), r["init_objective"].as_f64()) {
        (Some(o), Some(i)) => o <= i,
        _ => true,
    });
    let frac = recovered as f64 / rows.len().max(1) as f64;
    outcome(
        rows.len() >= 10 && frac >= 0.8 && monotone,
        format!(
            "{recovered}/{} windows within 0.015 ({:.0}%), objective never above init: {monotone}",
            rows.len(),
            frac * 100.0
        ),
    )
}

fn criterion_7() -> Outcome {
    let tex = TextureCanvas::new(220, 220, 2.5, 5);
    let a = tex.crop(40.0, 40.0, 128, 128);
    let b = tex.crop(43.0, 40.0, 128, 128);
    let cfg = FlowConfig::default();
    let fwd = estimate_flow(&a, &b, &cfg).unwrap();
    let bwd = estimate_flow(&b, &a, &cfg).unwrap();
    let interior = ValidityMask::full(128, 128).erode_border(8);
    let (mut epe, mut anti, mut n, mut m) = (0.0, 0.0, 0usize, 0usize);
    for y in 0..128 {
        for x in 0..128 {
            if !interior.get(x, y) {
                continue;
            }
            if let Some((u, v)) = fwd.get(x, y) {
                // a(p) = b(p - (3, 0))
                epe += (u + 3.0).hypot(v);
                n += 1;
                if let Some((bu, bv)) = bwd.get(x, y) {
                    anti += (u + bu).hypot(v + bv);
                    m += 1;
                }
            }
        }
    }
    let (epe, anti) = (epe / n.max(1) as f64, anti / m.max(1) as f64);
    outcome(
        n > 0 && m > 0 && epe <= 0.3 && anti <= 0.3,
        format!("mean EPE {epe:.3} px, anti-symmetry deviation {anti:.3} px"),
    )
}

fn criterion_8(work: &Path) -> Outcome {
    let dir = work.join("c8");
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut failures = Vec::new();
    for i in 0..100 {
        let (w, h) = (rng.gen_range(2..48), rng.gen_range(2..48));
        let valid: Vec<bool> = (0..w * h).map(|_| rng.gen_bool(0.8)).collect();
        let u: Vec<f64> = (0..w * h).map(|_| rng.gen_range(-50.0f32..50.0) as f64).collect();
        let v: Vec<f64> = (0..w * h).map(|_| rng.gen_range(-50.0f32..50.0) as f64).collect();
        let mask = ValidityMask::from_vec(w, h, valid).unwrap();
        let field = FlowField::new(w, h, u, v, mask.clone()).unwrap();
        let flo = dir.join(format!("{i}.flo"));
        io::write_flo(&field, &flo).unwrap();
        let back = io::read_flo(&flo).unwrap();
        let same_values = (0..w * h).all(|k| {
            !mask.as_slice()[k] || (back.u()[k] as f32, back.v()[k] as f32) == (field.u()[k] as f32, field.v()[k] as f32)
        });
        let same_bytes = io::encode_flo(&back).unwrap() == fs::read(&flo).unwrap();
        if back.valid() != &mask || !same_values || !same_bytes {
            failures.push(format!("flo {i}"));
        }

        let ch = if i % 2 == 0 { 1 } else { 3 };
        let data: Vec<u8> = (0..w * h * ch).map(|_| rng.gen()).collect();
        let frame = Frame::new(w, h, ch, data).unwrap();
        let ext = if ch == 1 { "pgm" } else { "ppm" };
        for path in [dir.join(format!("{i}.png")), dir.join(format!("{i}.{ext}"))] {
            io::write_frame(&frame, &path).unwrap();
            if io::read_frame(&path).unwrap() != frame {
                failures.push(path.display().to_string());
            }
        }
        let mpath = dir.join(format!("{i}_mask.png"));
        io::write_mask(&mask, &mpath).unwrap();
        if io::read_mask(&mpath).unwrap() != mask {
            failures.push(mpath.display().to_string());
        }
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            "100 flow fields, 200 frames and 100 masks identical after write-read".to_string()
        } else {
            format!("mismatches: {}", failures.join(", "))
        },
    )
}

fn criterion_9(work: &Path) -> Outcome {
    let run = |tag: &str| -> Result<(PathBuf, PathBuf), String> {
        let root = work.join(format!("c9_{tag}"));
        let (src, ds, bench) = (root.join("src"), root.join("ds"), root.join("bench"));
        fvl(&["scene", "--out", s(&src), "--count", "2", "--frames", "16", "--size", "96"])?;
        fvl(&["synth", "--src", s(&src), "--out", s(&ds), "--size", "96", "--seed", "7"])?;
        fvl(&["bench", "--dataset", s(&ds), "--out", s(&bench)])?;
        Ok((ds, bench))
    };
    let (a, b) = match (run("a"), run("b")) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return outcome(false, e),
    };
    let (ta, tb) = (tree(&a.0), tree(&b.0));
    let (ba, bb) = (tree(&a.1), tree(&b.1));
    let csv_present = ba.contains_key(Path::new("bench.csv"));
    outcome(
        ta == tb && ba == bb && csv_present,
        format!(
            "synth trees identical: {} ({} files), bench trees identical: {} ({} files)",
            ta == tb,
            ta.len(),
            ba == bb,
            ba.len()
        ),
    )
}

fn main() {
    let work = tempfile::tempdir().expect("temp dir");
    let src = work.path().join("scenes");
    let dataset = work.path().join("dataset");
    let setup = fvl(&["scene", "--out", s(&src)]).and_then(|_| fvl(&["synth", "--src", s(&src), "--out", s(&dataset)]));
    if let Err(e) = setup {
        eprintln!("setup failed: {e}");
        std::process::exit(1);
    }
    let (_, videos) = load_dataset(&dataset).expect("benchmark dataset loads");

    type Check<'a> = Box<dyn Fn() -> Outcome + 'a>;
    let checks: Vec<(u32, &str, u64, Check)> = vec![
        (1, "model round-trip", 5, Box::new(criterion_1)),
        (2, "synthesis-correction identity", 120, Box::new(|| criterion_2(&videos))),
        (3, "temporal weights", 0, Box::new(criterion_3)),
        (4, "jitter reduction", 300, Box::new(|| criterion_4(&dataset, work.path()))),
        (5, "deformation identity", 180, Box::new(|| criterion_5(&videos))),
        (6, "refinement recovery", 900, Box::new(|| criterion_6(&dataset, work.path()))),
        (7, "flow sanity", 60, Box::new(criterion_7)),
        (8, "format round-trips", 10, Box::new(|| criterion_8(work.path()))),
        (9, "determinism", 0, Box::new(|| criterion_9(work.path()))),
    ];

    let mut failed = 0;
    for (id, name, budget, check) in &checks {
        let t = Instant::now();
        let o = check();
        let took = t.elapsed();
        let in_time = *budget == 0 || took <= Duration::from_secs(*budget);
        let pass = o.pass && in_time;
        if !pass {
            failed += 1;
        }
        let limit = if *budget == 0 { String::new() } else { format!(", budget {budget} s") };
        println!(
            "criterion {id} {name}: {} ({}; {:.1} s{limit})",
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            took.as_secs_f64()
        );
    }
    println!("acceptance: {}/{} criteria passed", checks.len() - failed, checks.len());
    let strict = std::env::var("FVL_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if failed > 0 && strict {
        std::process::exit(1);
    }
}
