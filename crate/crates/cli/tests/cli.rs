use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fingeo::phantom::{generate, PhantomSpec};
use fingeo::{imgio, GrayImage, Mask};

fn fingeo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fingeo"))
        .args(args)
        .env("FINGEO_LOG", "error")
        .output()
        .unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn error_json(out: &Output) -> serde_json::Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().expect("stderr has an error line");
    serde_json::from_str(line).unwrap_or_else(|e| panic!("{e}: {stderr}"))
}

fn eval_value(out: &Output) -> f64 {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    v["value"].as_f64().unwrap()
}

fn phantom_dir(root: &Path, extra: &[&str]) -> std::path::PathBuf {
    let dir = root.join("phantom");
    let mut args = vec!["phantom", "--out-dir", p(&dir)];
    args.extend_from_slice(extra);
    let out = fingeo(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    dir
}

#[test]
fn usage_errors_exit_one() {
    let out = fingeo(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    let e = error_json(&out);
    assert_eq!(e["code"], 1);
    assert_eq!(e["stage"], "usage");
    assert_eq!(fingeo(&[]).status.code(), Some(1));
    assert_eq!(fingeo(&["eval", "--kind", "depth"]).status.code(), Some(1));
    assert_eq!(fingeo(&["--help"]).status.code(), Some(0));
}

#[test]
fn texture_chain_meets_depth_tolerance() {
    let tmp = tempfile::tempdir().unwrap();
    let ph = phantom_dir(tmp.path(), &[]);
    for f in ["image.pgm", "image.json", "mask.pgm", "depth.fgrd", "gradient.fgrd", "period.fgrd"] {
        assert!(ph.join(f).is_file(), "{f}");
    }
    let g = tmp.path().join("g.fgrd");
    let z = tmp.path().join("z.fgrd");
    let out = fingeo(&[
        "gradient",
        "--method",
        "texture",
        "--in",
        p(&ph.join("image.pgm")),
        "--mask",
        p(&ph.join("mask.pgm")),
        "--out",
        p(&g),
    ]);
    assert!(out.status.success());
    let out = fingeo(&["reconstruct", "--grad", p(&g), "--mask", p(&ph.join("mask.pgm")), "--out", p(&z)]);
    assert!(out.status.success());
    let zero = imgio::read_manifest(imgio::manifest_path(&z)).unwrap().zero_point.unwrap();
    assert!((zero[0] - 80.0).abs() <= 8.0 && (zero[1] - 80.0).abs() <= 8.0, "{zero:?}");
    let out = fingeo(&[
        "eval",
        "--pred",
        p(&z),
        "--truth",
        p(&ph.join("depth.fgrd")),
        "--mask",
        p(&ph.join("mask.pgm")),
        "--kind",
        "depth",
    ]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["unit"], "mm");
    assert_eq!(v["margin_px"], 3);
    assert!(eval_value(&out) <= 0.3);
}

#[test]
fn eval_of_identical_files_is_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let ph = phantom_dir(tmp.path(), &[]);
    let mask = ph.join("mask.pgm");
    for (kind, file) in [("depth", "depth.fgrd"), ("gradient", "gradient.fgrd"), ("period", "period.fgrd")] {
        let f = ph.join(file);
        let out = fingeo(&["eval", "--pred", p(&f), "--truth", p(&f), "--mask", p(&mask), "--kind", kind]);
        assert_eq!(eval_value(&out), 0.0, "{kind}");
    }
    let g = ph.join("gradient.fgrd");
    let weighted = fingeo(&[
        "eval", "--pred", p(&g), "--truth", p(&g), "--mask", p(&mask), "--kind", "gradient", "--weighted",
    ]);
    assert_eq!(eval_value(&weighted), 0.0);
    let period = ph.join("period.fgrd");
    let out = fingeo(&[
        "eval", "--pred", p(&period), "--truth", p(&period), "--mask", p(&mask), "--kind", "period", "--weighted",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn input_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let ph = phantom_dir(tmp.path(), &[]);
    let missing = tmp.path().join("nope.fgrd");
    let out = fingeo(&["reconstruct", "--grad", p(&missing), "--mask", p(&ph.join("mask.pgm")), "--out", "x.fgrd"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["stage"], "reconstruct");

    let junk = tmp.path().join("junk.fgrd");
    fs::write(&junk, b"FGRDnot really a grid").unwrap();
    let out = fingeo(&["reconstruct", "--grad", p(&junk), "--mask", p(&ph.join("mask.pgm")), "--out", "x.fgrd"]);
    assert_eq!(out.status.code(), Some(2));

    // A depth map where a gradient is expected.
    let out = fingeo(&[
        "reconstruct",
        "--grad",
        p(&ph.join("depth.fgrd")),
        "--mask",
        p(&ph.join("mask.pgm")),
        "--out",
        p(&tmp.path().join("x.fgrd")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(error_json(&out)["message"].as_str().unwrap().contains("mismatch"));
}

#[test]
fn numerical_failures_exit_three() {
    let tmp = tempfile::tempdir().unwrap();
    let flat = GrayImage::from_fn(64, 64, 0.05, |_, _| 0.5).unwrap();
    let img = tmp.path().join("flat.pgm");
    let mask = tmp.path().join("flat_mask.pgm");
    imgio::write_pgm(&flat, &img).unwrap();
    imgio::write_mask(&Mask::full(64, 64), &mask).unwrap();
    let out = fingeo(&["gradient", "--in", p(&img), "--mask", p(&mask), "--out", p(&tmp.path().join("g.fgrd"))]);
    assert_eq!(out.status.code(), Some(3));
    let e = error_json(&out);
    assert_eq!(e["code"], 3);
    assert_eq!(e["stage"], "gradient");
}

#[test]
fn gradient_file_method_masks_input() {
    let tmp = tempfile::tempdir().unwrap();
    let ph = phantom_dir(tmp.path(), &[]);
    let out_path = tmp.path().join("copy.fgrd");
    let no_file = fingeo(&["gradient", "--method", "file", "--mask", p(&ph.join("mask.pgm")), "--out", p(&out_path)]);
    assert_eq!(no_file.status.code(), Some(1));
    let out = fingeo(&[
        "gradient",
        "--method",
        "file",
        "--grad-file",
        p(&ph.join("gradient.fgrd")),
        "--mask",
        p(&ph.join("slant50_mask.pgm")),
        "--out",
        p(&out_path),
    ]);
    assert!(out.status.success());
    let (g, pitch) = imgio::read_gradient(&out_path).unwrap();
    let m = imgio::read_mask(ph.join("slant50_mask.pgm")).unwrap();
    assert_eq!(pitch, 0.05);
    assert_eq!(g.get(2, 2), (0.0, 0.0));
    assert!(m.iter_set().all(|(x, y)| g.magnitude(x, y) <= 50f64.to_radians().tan() + 1e-4));
}

#[test]
fn unwarp_writes_image_mask_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let ph = phantom_dir(tmp.path(), &[]);
    let u = tmp.path().join("flat").join("u.pgm");
    let out = fingeo(&[
        "unwarp",
        "--in",
        p(&ph.join("image.pgm")),
        "--grad",
        p(&ph.join("gradient.fgrd")),
        "--mask",
        p(&ph.join("mask.pgm")),
        "--out",
        p(&u),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = imgio::read_manifest(imgio::manifest_path(&u)).unwrap();
    assert_eq!(m.stage.as_deref(), Some("unwarp"));
    assert!(m.zero_point.is_some() && m.canvas_offset.is_some());
    let mask = imgio::read_mask(u.with_file_name("u_mask.pgm")).unwrap();
    let original = imgio::read_mask(ph.join("mask.pgm")).unwrap();
    assert!(mask.count() >= original.count());
}

#[test]
fn preprocess_and_batch_layout() {
    let tmp = tempfile::tempdir().unwrap();
    let inputs = tmp.path().join("in");
    fs::create_dir_all(&inputs).unwrap();
    for (name, period) in [("one", 10.0), ("two", 12.0)] {
        let ph = generate(&PhantomSpec::hemisphere(60.0, period, 160)).unwrap();
        imgio::write_pgm(&ph.image, inputs.join(format!("{name}.pgm"))).unwrap();
        imgio::write_mask(&ph.mask, inputs.join(format!("{name}_mask.pgm"))).unwrap();
    }
    let out = tmp.path().join("out");
    let run = fingeo(&["--jobs", "2", "preprocess", "--in", p(&inputs), "--out-dir", p(&out)]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    for name in ["one", "two"] {
        let m = imgio::read_manifest(out.join(name).join("enhanced.json")).unwrap();
        assert_eq!(m.source.as_deref(), Some(format!("{name}.pgm").as_str()));
        assert!(m.scale_factor.unwrap() > 0.0);
        assert!(out.join(name).join("mask.pgm").is_file());
    }
    let s1 = imgio::read_manifest(out.join("one").join("enhanced.json")).unwrap().scale_factor.unwrap();
    let s2 = imgio::read_manifest(out.join("two").join("enhanced.json")).unwrap().scale_factor.unwrap();
    assert!(s2 < s1, "longer period shrinks more: {s1} vs {s2}");

    let with_mask = fingeo(&[
        "preprocess",
        "--in",
        p(&inputs),
        "--mask",
        p(&inputs.join("one_mask.pgm")),
        "--out-dir",
        p(&out),
    ]);
    assert_eq!(with_mask.status.code(), Some(1));
}

#[test]
fn batch_reports_each_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let inputs = tmp.path().join("in");
    fs::create_dir_all(&inputs).unwrap();
    let ph = generate(&PhantomSpec::hemisphere(60.0, 10.0, 160)).unwrap();
    imgio::write_pgm(&ph.image, inputs.join("good.pgm")).unwrap();
    imgio::write_mask(&ph.mask, inputs.join("good_mask.pgm")).unwrap();
    fs::write(inputs.join("broken.pgm"), b"P5 garbage").unwrap();
    let out = fingeo(&["pipeline", "--in", p(&inputs), "--out-dir", p(&tmp.path().join("out"))]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    let lines: Vec<serde_json::Value> = stderr.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0]["message"].as_str().unwrap().contains("broken.pgm"));
    assert_eq!(lines[1]["stage"], "pipeline");
    assert!(tmp.path().join("out").join("good").join("depth.fgrd").is_file());
}

#[test]
fn silhouette_recovers_phantom_sections() {
    let tmp = tempfile::tempdir().unwrap();
    let ph = phantom_dir(tmp.path(), &["--shape", "ellipsoid", "--radius", "60,90,45", "--size", "160x210"]);
    let out_dir = tmp.path().join("sil");
    let out = fingeo(&[
        "silhouette",
        "--front",
        p(&ph.join("view_front.pgm")),
        "--right",
        p(&ph.join("view_right.pgm")),
        "--left",
        p(&ph.join("view_left.pgm")),
        "--out-dir",
        p(&out_dir),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let fit: serde_json::Value = serde_json::from_slice(&fs::read(out_dir.join("ellipses.json")).unwrap()).unwrap();
    let truth: serde_json::Value = serde_json::from_slice(&fs::read(ph.join("sections.json")).unwrap()).unwrap();
    let rows = fit["rows"].as_array().unwrap();
    assert!(rows.len() > 150);
    for r in rows {
        let t = truth["rows"]
            .as_array()
            .unwrap()
            .iter()
            .find(|t| t["row"] == r["row"])
            .expect("truth row");
        for key in ["a", "b"] {
            let (got, want) = (r[key].as_f64().unwrap(), t[key].as_f64().unwrap());
            assert!((got - want).abs() <= 0.02 * want, "row {} {key}: {got} vs {want}", r["row"]);
        }
    }
    let e = fingeo(&[
        "eval",
        "--pred",
        p(&out_dir.join("depth_front.fgrd")),
        "--truth",
        p(&ph.join("depth_front.fgrd")),
        "--mask",
        p(&ph.join("view_front_mask.pgm")),
        "--kind",
        "depth",
    ]);
    assert!(eval_value(&e) <= 0.5 * 0.05);
}

#[test]
fn phantom_rejects_bad_geometry() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("x");
    assert_eq!(fingeo(&["phantom", "--radius", "90", "--out-dir", p(&d)]).status.code(), Some(1));
    assert_eq!(fingeo(&["phantom", "--radius", "1,2", "--out-dir", p(&d)]).status.code(), Some(1));
    assert_eq!(fingeo(&["phantom", "--size", "big", "--out-dir", p(&d)]).status.code(), Some(1));
}

#[test]
fn library_entry_point_matches_binary() {
    assert_eq!(fingeo_cli::run(["fingeo", "nonsense"]), fingeo_cli::EXIT_USAGE);
    assert_eq!(fingeo_cli::run(["fingeo", "--version"]), fingeo_cli::EXIT_OK);
}
