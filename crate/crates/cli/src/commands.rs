use std::fs;
use std::path::{Path, PathBuf};

use fingeo::grid::{ensure_same_dims, DEFAULT_PITCH_MM};
use fingeo::imgio::{self, AnyGrid, Manifest};
use fingeo::metrics::{self, Comparison, Field, Weighting};
use fingeo::phantom::{self, PhantomSpec, Shape};
use fingeo::preprocess::{self, PreprocessOptions};
use fingeo::silhouette::{self, ViewInput};
use fingeo::surface::{self, MlsParams};
use fingeo::texture;
use fingeo::unwarp;
use fingeo::{Dims, GradientMap, GrayImage, Mask, OrientationField};
use serde_json::json;

use crate::args::*;
use crate::batch::{self, Item};
use crate::{Failure, Stage};

pub fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Preprocess(a) => preprocess_cmd(&a),
        Command::Gradient(a) => gradient_cmd(&a),
        Command::Reconstruct(a) => reconstruct_cmd(&a),
        Command::Unwarp(a) => unwarp_cmd(&a),
        Command::Pipeline(a) => pipeline_cmd(&a),
        Command::Silhouette(a) => silhouette_cmd(&a),
        Command::Phantom(a) => phantom_cmd(&a),
        Command::Eval(a) => eval_cmd(&a),
    }
}

// --- shared I/O -------------------------------------------------------------

fn pitch_for(path: &Path, pitch: &PitchArg) -> f32 {
    pitch.pitch.unwrap_or_else(|| {
        imgio::read_manifest(imgio::manifest_path(path))
            .ok()
            .and_then(|m| m.pitch_mm)
            .unwrap_or(DEFAULT_PITCH_MM)
    })
}

fn read_image(path: &Path, pitch: &PitchArg, stage: &str) -> Result<GrayImage, Failure> {
    imgio::read_pgm(path, pitch_for(path, pitch)).at(stage)
}

fn create_dir(dir: &Path, stage: &str) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(fingeo::Error::from).at(stage)
}

fn ensure_parent(path: &Path, stage: &str) -> Result<(), Failure> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p, stage),
        _ => Ok(()),
    }
}

/// `dir/name.pgm` → `dir/name_mask.pgm`.
fn mask_sibling(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}_mask.pgm"))
}

fn source_name(path: &Path) -> Option<String> {
    path.file_name().map(|s| s.to_string_lossy().into_owned())
}

fn mls_params(flags: &MlsFlags) -> Option<MlsParams> {
    flags.enabled().then(MlsParams::default)
}

fn preprocess_options(flags: &PreprocessFlags) -> PreprocessOptions {
    PreprocessOptions {
        threshold: flags.threshold,
        tile_px: flags.tile,
        clip: flags.clip,
        target_period: flags.target_period,
        ..PreprocessOptions::default()
    }
}

fn write_scalar(grid: &fingeo::Grid<f32>, pitch: f32, path: &Path, stage: &str) -> Result<(), Failure> {
    imgio::write_grid(&AnyGrid::Scalar(grid.clone()), pitch, path).at(stage)
}

// --- preprocess ---------------------------------------------------------------

fn preprocess_item(item: &Item, flags: &PreprocessFlags, pitch: &PitchArg) -> Result<(), Failure> {
    let stage = "preprocess";
    let image = read_image(&item.image, pitch, stage)?;
    let mask = item.mask.as_deref().map(imgio::read_mask).transpose().at(stage)?;
    let pre = preprocess::preprocess(&image, mask.as_ref(), &preprocess_options(flags)).at(stage)?;
    create_dir(&item.out_dir, stage)?;
    let out = item.out_dir.join("enhanced.pgm");
    imgio::write_pgm(&pre.image, &out).at(stage)?;
    imgio::write_mask(&pre.mask, item.out_dir.join("mask.pgm")).at(stage)?;
    let manifest = Manifest {
        stage: Some(stage.into()),
        scale_factor: Some(pre.report.scale_factor),
        yaw_deg: Some(pre.report.yaw_deg),
        pitch_mm: Some(pre.image.pitch_mm()),
        source: source_name(&item.image),
        mean_period_px: Some(pre.report.mean_period_px),
        ..Manifest::default()
    };
    imgio::write_manifest(&manifest, imgio::manifest_path(&out)).at(stage)?;
    log::info!(
        "{}: scale {:.4}, yaw {:.2} deg",
        item.image.display(),
        pre.report.scale_factor,
        pre.report.yaw_deg
    );
    Ok(())
}

fn preprocess_cmd(a: &PreprocessArgs) -> Result<(), Failure> {
    let items = batch::expand(&a.input, a.mask.as_deref(), &a.out_dir, "preprocess")?;
    batch::run_all(&items, "preprocess", |item| preprocess_item(item, &a.flags, &a.pitch))
}

// --- gradient -------------------------------------------------------------------

fn gradient_cmd(a: &GradientArgs) -> Result<(), Failure> {
    let stage = "gradient";
    let mask = imgio::read_mask(&a.mask).at(stage)?;
    let (grad, pitch, p0) = match a.method {
        GradientMethod::Texture => {
            let input = a
                .input
                .as_deref()
                .ok_or_else(|| Failure::usage(stage, "--method texture needs --in IMG"))?;
            let image = read_image(input, &a.pitch, stage)?;
            let t = &a.texture;
            let est = texture::estimate_texture_gradient(&image, &mask, t.block, t.window, t.p0).at(stage)?;
            (est.gradient, image.pitch_mm(), Some(est.p0))
        }
        GradientMethod::File => {
            let file = a
                .grad_file
                .as_deref()
                .ok_or_else(|| Failure::usage(stage, "--method file needs --grad-file F"))?;
            let (mut grad, pitch) = imgio::read_gradient(file).at(stage)?;
            ensure_same_dims(&grad, &mask, "gradient/mask").at(stage)?;
            for y in 0..mask.height() {
                for x in 0..mask.width() {
                    if !mask.get(x, y) {
                        grad.set(x, y, (0.0, 0.0));
                    }
                }
            }
            (grad, pitch, None)
        }
    };
    ensure_parent(&a.out, stage)?;
    imgio::write_gradient(&grad, pitch, &a.out).at(stage)?;
    let manifest = Manifest {
        stage: Some(stage.into()),
        pitch_mm: Some(pitch),
        reference_period_px: p0,
        ..Manifest::default()
    };
    imgio::write_manifest(&manifest, imgio::manifest_path(&a.out)).at(stage)
}

// --- reconstruct ------------------------------------------------------------------

fn reconstruct_cmd(a: &ReconstructArgs) -> Result<(), Failure> {
    let stage = "reconstruct";
    let (grad, pitch) = imgio::read_gradient(&a.grad).at(stage)?;
    let mask = imgio::read_mask(&a.mask).at(stage)?;
    let rec = surface::reconstruct(&grad, &mask, mls_params(&a.mls).as_ref()).at(stage)?;
    ensure_parent(&a.out, stage)?;
    imgio::write_depth(&rec.depth, pitch, &a.out).at(stage)?;
    let manifest = Manifest {
        stage: Some(stage.into()),
        zero_point: Some([rec.zero.0 as f64, rec.zero.1 as f64]),
        pitch_mm: Some(pitch),
        ..Manifest::default()
    };
    imgio::write_manifest(&manifest, imgio::manifest_path(&a.out)).at(stage)
}

// --- unwarp -----------------------------------------------------------------------

fn write_unwarped(out: &Path, u: &unwarp::Unwarped, pitch: f32, source: Option<String>) -> Result<(), Failure> {
    let stage = "unwarp";
    imgio::write_pgm(&u.image, out).at(stage)?;
    imgio::write_mask(&u.mask, mask_sibling(out)).at(stage)?;
    let manifest = Manifest {
        stage: Some(stage.into()),
        zero_point: Some([u.zero_point.0, u.zero_point.1]),
        canvas_offset: Some([u.canvas_offset.0, u.canvas_offset.1]),
        pitch_mm: Some(pitch),
        source,
        ..Manifest::default()
    };
    imgio::write_manifest(&manifest, imgio::manifest_path(out)).at(stage)
}

fn unwarp_cmd(a: &UnwarpArgs) -> Result<(), Failure> {
    let stage = "unwarp";
    let image = read_image(&a.input, &a.pitch, stage)?;
    let (grad, _) = imgio::read_gradient(&a.grad).at(stage)?;
    let mask = imgio::read_mask(&a.mask).at(stage)?;
    let zero = surface::find_zero_point(&grad, &mask).at(stage)?;
    let coords = unwarp::arc_length_coords(&grad, &mask, zero).at(stage)?;
    let u = unwarp::unwarp_image(&image, &mask, &coords).at(stage)?;
    ensure_parent(&a.out, stage)?;
    write_unwarped(&a.out, &u, image.pitch_mm(), source_name(&a.input))
}

// --- pipeline ---------------------------------------------------------------------

fn pipeline_item(item: &Item, a: &PipelineArgs) -> Result<(), Failure> {
    let image = read_image(&item.image, &a.pitch, "preprocess")?;
    let mask = item.mask.as_deref().map(imgio::read_mask).transpose().at("preprocess")?;
    let pre = preprocess::preprocess(&image, mask.as_ref(), &preprocess_options(&a.flags)).at("preprocess")?;
    let t = &a.texture;
    let est = texture::estimate_texture_gradient(&pre.image, &pre.mask, t.block, t.window, t.p0).at("gradient")?;
    let rec = surface::reconstruct(&est.gradient, &pre.mask, mls_params(&a.mls).as_ref()).at("reconstruct")?;
    let coords = unwarp::arc_length_coords(&est.gradient, &pre.mask, rec.zero).at("unwarp")?;
    let u = unwarp::unwarp_image(&pre.image, &pre.mask, &coords).at("unwarp")?;

    let dir = &item.out_dir;
    let pitch = pre.image.pitch_mm();
    create_dir(dir, "pipeline")?;
    imgio::write_pgm(&pre.image, dir.join("enhanced.pgm")).at("preprocess")?;
    imgio::write_mask(&pre.mask, dir.join("mask.pgm")).at("preprocess")?;
    write_scalar(&est.orientation, pitch, &dir.join("orientation.fgrd"), "gradient")?;
    write_scalar(&est.period, pitch, &dir.join("period.fgrd"), "gradient")?;
    imgio::write_gradient(&est.gradient, pitch, dir.join("gradient.fgrd")).at("gradient")?;
    imgio::write_depth(&rec.depth, pitch, dir.join("depth.fgrd")).at("reconstruct")?;
    write_unwarped(&dir.join("unwarped.pgm"), &u, pitch, source_name(&item.image))?;
    let manifest = Manifest {
        stage: Some("pipeline".into()),
        scale_factor: Some(pre.report.scale_factor),
        yaw_deg: Some(pre.report.yaw_deg),
        zero_point: Some([rec.zero.0 as f64, rec.zero.1 as f64]),
        canvas_offset: Some([u.canvas_offset.0, u.canvas_offset.1]),
        pitch_mm: Some(pitch),
        source: source_name(&item.image),
        mean_period_px: Some(pre.report.mean_period_px),
        reference_period_px: Some(est.p0),
    };
    imgio::write_manifest(&manifest, dir.join("manifest.json")).at("pipeline")?;
    log::info!(
        "{}: zero point {:?}, p0 {:.3} px, {} clamped",
        item.image.display(),
        rec.zero,
        est.p0,
        est.report.clamped
    );
    Ok(())
}

fn pipeline_cmd(a: &PipelineArgs) -> Result<(), Failure> {
    let items = batch::expand(&a.input, a.mask.as_deref(), &a.out_dir, "pipeline")?;
    batch::run_all(&items, "pipeline", |item| pipeline_item(item, a))
}

// --- silhouette -------------------------------------------------------------------

fn silhouette_cmd(a: &SilhouetteArgs) -> Result<(), Failure> {
    let stage = "silhouette";
    let load = |p: &Path| -> Result<(GrayImage, Mask), Failure> {
        Ok((read_image(p, &a.pitch, stage)?, imgio::read_mask(p).at(stage)?))
    };
    let (fi, fm) = load(&a.front)?;
    let (ri, rm) = load(&a.right)?;
    let (li, lm) = load(&a.left)?;
    let axis = a.axis.unwrap_or((fm.width() / 2) as f64);
    let views = [
        ViewInput { mask: &fm, image: Some(&fi) },
        ViewInput { mask: &rm, image: Some(&ri) },
        ViewInput { mask: &lm, image: Some(&li) },
    ];
    let rec = silhouette::reconstruct_from_views(views, axis, a.angle).at(stage)?;
    create_dir(&a.out_dir, stage)?;
    let pitch = fi.pitch_mm();
    let d = &rec.depths;
    imgio::write_depth(&d.front, pitch, a.out_dir.join("depth_front.fgrd")).at(stage)?;
    imgio::write_depth(&d.right, pitch, a.out_dir.join("depth_right.fgrd")).at(stage)?;
    imgio::write_depth(&d.left, pitch, a.out_dir.join("depth_left.fgrd")).at(stage)?;
    let rows: Vec<_> = rec
        .fit
        .ellipses
        .iter()
        .map(|e| json!({ "row": e.row, "a": e.a, "b": e.b, "c_z": e.c_z, "center_x": e.center_x }))
        .collect();
    let summary = json!({
        "side_angle_deg": a.angle,
        "axis_x": axis,
        "pitch_mm": pitch,
        "rows": rows,
        "degenerate_rows": rec.fit.degenerate_rows,
        "hole_pixels": d.holes,
    });
    write_json(&summary, &a.out_dir.join("ellipses.json"), stage)
}

fn write_json(value: &serde_json::Value, path: &Path, stage: &str) -> Result<(), Failure> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(fingeo::Error::from).at(stage)?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(fingeo::Error::from).at(stage)
}

// --- phantom ----------------------------------------------------------------------

fn parse_size(s: &str) -> Option<(usize, usize)> {
    match s.split_once(['x', 'X']) {
        Some((w, h)) => Some((w.trim().parse().ok()?, h.trim().parse().ok()?)),
        None => s.trim().parse().ok().map(|n| (n, n)),
    }
}

fn phantom_cmd(a: &PhantomArgs) -> Result<(), Failure> {
    let stage = "phantom";
    let (width, height) =
        parse_size(&a.size).ok_or_else(|| Failure::usage(stage, format!("bad --size {:?}", a.size)))?;
    let radii = match a.radius[..] {
        [r] => (r, r, r),
        [rx, ry, rz] => (rx, ry, rz),
        _ => return Err(Failure::usage(stage, "--radius takes one value or Rx,Ry,Rz")),
    };
    let spec = PhantomSpec {
        shape: match a.shape {
            ShapeArg::Hemisphere => Shape::Hemisphere,
            ShapeArg::Ellipsoid => Shape::Ellipsoid,
        },
        radii,
        ridge_period: a.period,
        width,
        height,
        center_depth: 0.0,
    };
    spec.validate().map_err(|e| Failure::usage(stage, e.to_string()))?;
    if !(a.pitch > 0.0) {
        return Err(Failure::usage(stage, "--pitch must be positive"));
    }
    let ph = phantom::generate(&spec).at(stage)?;
    let dir = &a.out_dir;
    create_dir(dir, stage)?;
    let image = GrayImage::new(ph.image.pixels().clone(), a.pitch).at(stage)?;
    imgio::write_pgm(&image, dir.join("image.pgm")).at(stage)?;
    let manifest = Manifest {
        stage: Some(stage.into()),
        pitch_mm: Some(a.pitch),
        reference_period_px: Some(a.period as f32),
        ..Manifest::default()
    };
    imgio::write_manifest(&manifest, dir.join("image.json")).at(stage)?;
    imgio::write_mask(&ph.mask, dir.join("mask.pgm")).at(stage)?;
    imgio::write_mask(&ph.slant_mask(50.0), dir.join("slant50_mask.pgm")).at(stage)?;
    imgio::write_depth(&ph.depth, a.pitch, dir.join("depth.fgrd")).at(stage)?;
    imgio::write_gradient(&ph.gradient, a.pitch, dir.join("gradient.fgrd")).at(stage)?;
    imgio::write_period(&ph.period_truth, a.pitch, dir.join("period.fgrd")).at(stage)?;

    if spec.shape == Shape::Ellipsoid {
        let views = phantom::generate_three_views(&spec).at(stage)?;
        for (name, v) in [("front", &views.front), ("right", &views.right), ("left", &views.left)] {
            let sil = GrayImage::new(v.silhouette.pixels().clone(), a.pitch).at(stage)?;
            imgio::write_pgm(&sil, dir.join(format!("view_{name}.pgm"))).at(stage)?;
            imgio::write_mask(&v.mask, dir.join(format!("view_{name}_mask.pgm"))).at(stage)?;
            imgio::write_depth(&v.depth, a.pitch, dir.join(format!("depth_{name}.fgrd"))).at(stage)?;
        }
        let rows: Vec<_> = phantom::row_sections(&spec)
            .iter()
            .map(|s| json!({ "row": s.row, "a": s.a, "b": s.b, "c_z": s.c_z }))
            .collect();
        write_json(&json!({ "rows": rows }), &dir.join("sections.json"), stage)?;
    }
    Ok(())
}

// --- eval -------------------------------------------------------------------------

fn read_orientation(path: &Path, stage: &str) -> Result<(OrientationField, f32), Failure> {
    match imgio::read_grid(path).at(stage)? {
        (AnyGrid::Scalar(g), pitch) => Ok((OrientationField(g), pitch)),
        (AnyGrid::Vector(_), _) => Err(Failure::from_error(
            stage,
            &fingeo::Error::TypeMismatch {
                expected: "1-channel grid",
                found: "2-channel grid",
            },
        )),
    }
}

/// Reference gradient for slope weighting: `--weight-grad` if given, else
/// one derived from the truth, else a usage error.
fn weight_gradient(
    a: &EvalArgs,
    derive: impl FnOnce() -> Result<Option<GradientMap>, Failure>,
) -> Result<Option<GradientMap>, Failure> {
    if !a.weighted {
        return Ok(None);
    }
    if let Some(p) = &a.weight_grad {
        return Ok(Some(imgio::read_gradient(p).at("eval")?.0));
    }
    derive()?
        .map(Some)
        .ok_or_else(|| Failure::usage("eval", "--weighted on this kind needs --weight-grad"))
}

fn weighting<'a>(a: &EvalArgs, grad: Option<&'a GradientMap>) -> Weighting<'a> {
    match grad {
        Some(g) => Weighting::Slope {
            truth_gradient: g,
            sigma: a.sigma,
        },
        None => Weighting::Uniform,
    }
}

fn eval_cmd(a: &EvalArgs) -> Result<(), Failure> {
    let stage = "eval";
    let mask = imgio::read_mask(&a.mask).at(stage)?;
    if a.weighted && a.kind == EvalKind::Orientation {
        return Err(Failure::usage(stage, "--weighted does not apply to orientation"));
    }
    let report = match a.kind {
        EvalKind::Depth => {
            let (pred, _) = imgio::read_depth(&a.pred).at(stage)?;
            let (truth, pitch) = imgio::read_depth(&a.truth).at(stage)?;
            let w = weight_gradient(a, || Ok(Some(surface::depth_to_gradient(&truth, &mask).at(stage)?)))?;
            let cmp = Comparison::Maps(Field::Depth(&pred), Field::Depth(&truth));
            metrics::evaluate(cmp, &mask, a.margin, pitch, weighting(a, w.as_ref()))
        }
        EvalKind::Gradient => {
            let (pred, _) = imgio::read_gradient(&a.pred).at(stage)?;
            let (truth, pitch) = imgio::read_gradient(&a.truth).at(stage)?;
            let w = weight_gradient(a, || Ok(Some(truth.clone())))?;
            let cmp = Comparison::Maps(Field::Gradient(&pred), Field::Gradient(&truth));
            metrics::evaluate(cmp, &mask, a.margin, pitch, weighting(a, w.as_ref()))
        }
        EvalKind::Period => {
            let (pred, _) = imgio::read_period(&a.pred).at(stage)?;
            let (truth, pitch) = imgio::read_period(&a.truth).at(stage)?;
            let w = weight_gradient(a, || Ok(None))?;
            let cmp = Comparison::Maps(Field::Period(&pred), Field::Period(&truth));
            metrics::evaluate(cmp, &mask, a.margin, pitch, weighting(a, w.as_ref()))
        }
        EvalKind::Orientation => {
            let (pred, _) = read_orientation(&a.pred, stage)?;
            let (truth, pitch) = read_orientation(&a.truth, stage)?;
            let cmp = Comparison::Orientation(&pred, &truth);
            metrics::evaluate(cmp, &mask, a.margin, pitch, Weighting::Uniform)
        }
    }
    .at(stage)?;
    let line = serde_json::to_string(&report).map_err(fingeo::Error::from).at(stage)?;
    println!("{line}");
    Ok(())
}
