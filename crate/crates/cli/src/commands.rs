use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use wflow::cycleopt::TraceEntry;
use wflow::geometry::{rasterize, vertex_flow};
use wflow::io;
use wflow::metrics::{iou, ssim, MetricReport};
use wflow::pipeline::{correspondence, sample_pairs_by_counts, transfer_with_flow, FlowMode, PersonBundle};
use wflow::pixelflow::estimate_flow;
use wflow::synthdata::{make_pair, make_puppet, Pose, PuppetSpec};
use wflow::{flowfield, FlowField64, Image64, Mask64, Mesh2D64};

use crate::config::{RunConfig, SynthConfig};
use crate::plot::line_plot;
use crate::{CliError, Command};

type Res = Result<(), CliError>;

pub fn dispatch(cmd: Command, cfg: &RunConfig) -> Res {
    match cmd {
        Command::Synth { out, frames } => synth(&out, frames, cfg),
        Command::Pairs { input, out } => pairs(&input, out.as_deref(), cfg),
        Command::Flow { source, query, out } => flow(&source, &query, &out, cfg, FlowMode::PixelOnly),
        Command::Vflow { source, query, out } => flow(&source, &query, &out, cfg, FlowMode::VertexOnly),
        Command::Blend { vertex, pixel, out } => blend(&vertex, &pixel, &out, cfg),
        Command::Warp { image, flow, out } => warp(&image, &flow, &out, cfg),
        Command::Transfer {
            source,
            query,
            out,
            flow,
        } => transfer(&source, &query, &out, flow.as_deref(), None, false, cfg),
        Command::Refine {
            source,
            query,
            out,
            flow,
            flow_bwd,
        } => transfer(&source, &query, &out, flow.as_deref(), flow_bwd.as_deref(), true, cfg),
        Command::Eval {
            item,
            pred,
            gt,
            pred_mask,
            gt_mask,
            id,
            out,
        } => {
            let mut items = item.iter().map(|s| parse_item(s)).collect::<Result<Vec<_>, _>>()?;
            match (pred, gt) {
                (Some(pred), Some(gt)) => items.push(EvalItem {
                    id,
                    pred,
                    gt,
                    masks: pred_mask.zip(gt_mask),
                }),
                (None, None) => {}
                _ => return Err(CliError::Usage("--pred and --gt must be given together".into())),
            }
            eval(&items, &out, cfg)
        }
        Command::Viz { flow, trace, out } => viz(flow.as_deref(), trace.as_deref(), &out, cfg),
    }
}

fn create_dir(dir: &Path) -> Res {
    fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))
}

fn create_parent(file: &Path) -> Res {
    match file.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

/// Resolved config for a run writing into `dir`.
fn record_in(dir: &Path, cfg: &RunConfig) -> Res {
    io::write_config(&dir.join("config.json"), cfg)?;
    Ok(())
}

/// Resolved config for a run writing the single file `out`: `<stem>.config.json`.
fn record_beside(out: &Path, cfg: &RunConfig) -> Res {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    io::write_config(&out.with_file_name(format!("{stem}.config.json")), cfg)?;
    Ok(())
}

fn puppet_spec(s: &SynthConfig, seed: u64) -> PuppetSpec {
    PuppetSpec {
        seed,
        canvas: s.canvas,
        garment: s.garment,
        texture: s.texture,
        background: s.background,
        ..Default::default()
    }
}

/// Arms lowered, legs slightly apart, every angle jittered by up to `j`.
fn random_pose(rng: &mut ChaCha8Rng, s: &SynthConfig) -> Pose {
    let j = s.pose_jitter;
    let t = s.max_translation;
    let mut u = |lo: f64, hi: f64| if hi > lo { rng.gen_range(lo..hi) } else { lo };
    Pose {
        translation: [u(-t, t), u(-t, t)],
        rotation: u(-j, j) * 0.2,
        neck: u(-j, j) * 0.5,
        left_shoulder: 0.6 + u(-j, j),
        left_elbow: u(0.0, j),
        right_shoulder: 0.6 + u(-j, j),
        right_elbow: u(0.0, j),
        left_hip: 0.15 + u(-j, j) * 0.5,
        left_knee: u(0.0, j),
        right_hip: 0.15 + u(-j, j) * 0.5,
        right_knee: u(0.0, j),
        skirt_phase: u(0.0, std::f64::consts::TAU),
    }
}

/// `pose` with every angle moved by up to `j` and the figure by up to `t` pixels.
fn perturb(rng: &mut ChaCha8Rng, pose: &Pose, j: f64, t: f64) -> Pose {
    let mut u = |a: f64| if a > 0.0 { rng.gen_range(-a..a) } else { 0.0 };
    Pose {
        translation: [pose.translation[0] + u(t), pose.translation[1] + u(t)],
        rotation: pose.rotation + u(j) * 0.2,
        neck: pose.neck + u(j) * 0.5,
        left_shoulder: pose.left_shoulder + u(j),
        left_elbow: (pose.left_elbow + u(j)).max(0.0),
        right_shoulder: pose.right_shoulder + u(j),
        right_elbow: (pose.right_elbow + u(j)).max(0.0),
        left_hip: pose.left_hip + u(j) * 0.5,
        left_knee: (pose.left_knee + u(j)).max(0.0),
        right_hip: pose.right_hip + u(j) * 0.5,
        right_knee: (pose.right_knee + u(j)).max(0.0),
        skirt_phase: pose.skirt_phase + u(1.0),
    }
}

fn synth(out: &Path, frames: Option<usize>, cfg: &RunConfig) -> Res {
    create_dir(out)?;
    let spec = puppet_spec(&cfg.synth, cfg.seed);
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    match frames {
        Some(0) => return Err(CliError::Usage("--frames must be at least 1".into())),
        Some(n) => {
            // poses are drawn up front so the output does not depend on --jobs
            let poses: Vec<Pose> = (0..n).map(|_| random_pose(&mut rng, &cfg.synth)).collect();
            poses.par_iter().enumerate().try_for_each(|(i, pose)| -> Res {
                let p = make_puppet::<f64>(&PuppetSpec { pose: *pose, ..spec.clone() })?;
                io::save_bundle(&out.join(frame_dir(i)), &p.bundle, &p.mesh)?;
                Ok(())
            })?;
            println!("wrote {n} frames to {}", out.display());
        }
        None => {
            let a = random_pose(&mut rng, &cfg.synth);
            let b = perturb(&mut rng, &a, cfg.synth.pose_jitter, cfg.synth.max_translation);
            let pair = make_pair::<f64>(&spec, &a, &b)?;
            io::save_bundle(&out.join("source"), &pair.source.bundle, &pair.source.mesh)?;
            io::save_bundle(&out.join("target"), &pair.target.bundle, &pair.target.mesh)?;
            io::save_flo(&out.join("gt_flow.flo"), &pair.gt_flow)?;
            io::save_image(&out.join("gt_composite.png"), &pair.gt_composite)?;
            let garment = pair.target.bundle.segmentation.mask_of::<f64>(&cfg.metrics.garment_labels);
            io::save_mask(&out.join("gt_garment.pgm"), &garment)?;
            println!("wrote source/target pair to {}", out.display());
        }
    }
    record_in(out, cfg)
}

fn frame_dir(i: usize) -> String {
    format!("frame_{i:04}")
}

/// Subdirectories holding a skeleton, sorted by name.
fn bundle_dirs(input: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = fs::read_dir(input).map_err(|e| CliError::Data(format!("{}: {e}", input.display())))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(io::BUNDLE_SKELETON).is_file())
        .collect();
    dirs.sort();
    Ok(dirs)
}

fn pairs(input: &Path, out: Option<&Path>, cfg: &RunConfig) -> Res {
    let dirs = bundle_dirs(input)?;
    if dirs.len() < 2 {
        return Err(CliError::Data(format!(
            "{}: found {} frame bundles, need at least 2",
            input.display(),
            dirs.len()
        )));
    }
    let counts = dirs
        .iter()
        .map(|d| Ok(io::load_skeleton::<f64>(&d.join(io::BUNDLE_SKELETON))?.iter().filter(|j| j.visible).count()))
        .collect::<Result<Vec<_>, CliError>>()?;
    let per_video = cfg.metrics.frames_per_video.min(dirs.len());
    let sampling = sample_pairs_by_counts(&counts, per_video)?;
    println!("frames: {}", sampling.frames.len());
    println!("candidates: {}", sampling.candidates);
    println!("pairs: {}", sampling.pairs.len());
    if let Some(out) = out {
        create_dir(out)?;
        let path = out.join("pairs.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
        w.write_record(["source", "target"]).map_err(|e| csv_err(&path, e))?;
        for (s, t) in &sampling.pairs {
            let name = |i: usize| dirs[i].file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            w.write_record([name(*s), name(*t)]).map_err(|e| csv_err(&path, e))?;
        }
        w.flush().map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        record_in(out, cfg)?;
    }
    Ok(())
}

fn csv_err(path: &Path, e: csv::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn load(dir: &Path) -> Result<(PersonBundle<f64>, Mesh2D64), CliError> {
    Ok(io::load_bundle::<f64>(dir)?)
}

fn flow(source: &Path, query: &Path, out: &Path, cfg: &RunConfig, mode: FlowMode) -> Res {
    let (s, sm) = load(source)?;
    let (q, qm) = load(query)?;
    let f = match mode {
        FlowMode::PixelOnly => estimate_flow(&s, &q, &cfg.flow)?,
        _ => {
            let (w, h) = q.dims();
            vertex_flow(&sm, &qm, &rasterize(&qm, w, h)?)?.0
        }
    };
    create_parent(out)?;
    io::save_flo(out, &f)?;
    record_beside(out, cfg)
}

fn blend(vertex: &Path, pixel: &Path, out: &Path, cfg: &RunConfig) -> Res {
    let fv: FlowField64 = io::load_flo(vertex)?;
    let fp: FlowField64 = io::load_flo(pixel)?;
    let mv = fv.validity_mask();
    let fw = flowfield::blend_wflow(&fv, &mv, &fp)?;
    create_parent(out)?;
    io::save_flo(out, &fw)?;
    record_beside(out, cfg)
}

fn warp(image: &Path, flow: &Path, out: &Path, cfg: &RunConfig) -> Res {
    let img: Image64 = io::load_image(image)?;
    let f: FlowField64 = io::load_flo(flow)?;
    let warped = flowfield::warp_bilinear(&img, &f, 0.0)?;
    create_parent(out)?;
    io::save_image(out, &warped)?;
    record_beside(out, cfg)
}

fn transfer(
    source: &Path,
    query: &Path,
    out: &Path,
    flow: Option<&Path>,
    flow_bwd: Option<&Path>,
    refine: bool,
    cfg: &RunConfig,
) -> Res {
    let (s, sm) = load(source)?;
    let (q, qm) = load(query)?;
    let tc = cfg.transfer(refine);
    let fwd = match flow {
        Some(p) => io::load_flo(p)?,
        None => correspondence(&s, &q, &sm, &qm, &tc.flow, tc.mode)?,
    };
    let bwd = match (refine, flow_bwd) {
        (false, _) => None,
        (true, Some(p)) => Some(io::load_flo(p)?),
        (true, None) => Some(correspondence(&q, &s, &qm, &sm, &tc.flow, tc.mode)?),
    };
    let r = transfer_with_flow(&s, &q, fwd, bwd.as_ref(), &tc)?;

    create_dir(out)?;
    io::save_image(&out.join("composite.png"), &r.composite)?;
    io::save_image(&out.join("warped.png"), &r.warped)?;
    io::save_image(&out.join("coarse.png"), &r.coarse)?;
    io::save_image(&out.join("background.png"), &r.inpainted_background)?;
    io::save_mask(&out.join("fusion_mask.pgm"), &r.fusion_mask)?;
    io::save_mask(&out.join("garment.pgm"), &r.garment)?;
    io::save_flo(&out.join("wflow.flo"), &r.wflow)?;
    if let Some(state) = &r.refinement {
        io::save_flo(&out.join("flow_bwd.flo"), &state.flow_bwd)?;
        write_trace(&out.join("loss_trace.csv"), &state.trace)?;
        if let (Some(first), Some(last)) = (state.initial_objective, state.loss_trace.last()) {
            println!("objective: {first:.6e} -> {last:.6e} over {} passes", state.trace.len());
        }
    }
    record_in(out, cfg)
}

fn write_trace(path: &Path, trace: &[TraceEntry]) -> Res {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for e in trace {
        w.serialize(e).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub struct EvalItem {
    id: String,
    pred: PathBuf,
    gt: PathBuf,
    masks: Option<(PathBuf, PathBuf)>,
}

fn parse_item(s: &str) -> Result<EvalItem, CliError> {
    let bad = || CliError::Usage(format!("--item '{s}': expected ID=PRED,GT[,PRED_MASK,GT_MASK]"));
    let (id, rest) = s.split_once('=').ok_or_else(bad)?;
    let parts: Vec<&str> = rest.split(',').collect();
    let masks = match parts.len() {
        2 => None,
        4 => Some((PathBuf::from(parts[2]), PathBuf::from(parts[3]))),
        _ => return Err(bad()),
    };
    Ok(EvalItem {
        id: id.to_string(),
        pred: parts[0].into(),
        gt: parts[1].into(),
        masks,
    })
}

#[derive(Serialize)]
struct ReportRow<'a> {
    image_id: &'a str,
    ssim: f64,
    iou: Option<f64>,
}

fn eval(items: &[EvalItem], out: &Path, cfg: &RunConfig) -> Res {
    if items.is_empty() {
        return Err(CliError::Usage("eval needs --item or --pred/--gt".into()));
    }
    let rows = items
        .par_iter()
        .map(|it| -> Result<(f64, Option<f64>), CliError> {
            let p: Image64 = io::load_image(&it.pred)?;
            let g: Image64 = io::load_image(&it.gt)?;
            let s = ssim(&p, &g)?;
            let i = match &it.masks {
                Some((pm, gm)) => {
                    let pm: Mask64 = io::load_mask(pm)?;
                    let gm: Mask64 = io::load_mask(gm)?;
                    Some(iou(&pm, &gm, cfg.metrics.iou_threshold)?)
                }
                None => None,
            };
            Ok((s, i))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut report = MetricReport::default();
    create_parent(out)?;
    let mut w = csv::Writer::from_path(out).map_err(|e| csv_err(out, e))?;
    for (it, (s, i)) in items.iter().zip(&rows) {
        report.push(it.id.clone(), *s, i.unwrap_or(f64::NAN));
        w.serialize(ReportRow {
            image_id: &it.id,
            ssim: *s,
            iou: *i,
        })
        .map_err(|e| csv_err(out, e))?;
    }
    w.flush().map_err(|e| CliError::Data(format!("{}: {e}", out.display())))?;
    if let Some(m) = report.mean_ssim() {
        println!("mean ssim: {m:.6}");
    }
    if rows.iter().all(|r| r.1.is_some()) {
        if let Some(m) = report.mean_iou() {
            println!("mean iou: {m:.6}");
        }
    }
    record_beside(out, cfg)
}

#[derive(Deserialize)]
struct TraceRow {
    iteration: usize,
    objective: f64,
    #[allow(dead_code)]
    step_size: f64,
}

fn viz(flow: Option<&Path>, trace: Option<&Path>, out: &Path, cfg: &RunConfig) -> Res {
    create_parent(out)?;
    match (flow, trace) {
        (Some(f), None) => {
            let f: FlowField64 = io::load_flo(f)?;
            io::save_image(out, &io::flow_to_color(&f))?;
        }
        (None, Some(t)) => {
            let mut r = csv::Reader::from_path(t).map_err(|e| csv_err(t, e))?;
            let points = r
                .deserialize::<TraceRow>()
                .map(|row| row.map(|row| (row.iteration as f64, row.objective)).map_err(|e| csv_err(t, e)))
                .collect::<Result<Vec<_>, _>>()?;
            let svg = line_plot("cycle refinement", "iteration", "objective", &points);
            fs::write(out, svg).map_err(|e| CliError::Data(format!("{}: {e}", out.display())))?;
        }
        _ => return Err(CliError::Usage("viz needs exactly one of --flow or --trace".into())),
    }
    record_beside(out, cfg)
}
