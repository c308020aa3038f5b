use std::process::Command;

use msreg::image::GrayImage;
use msreg::io::save_image;
use msreg::synthetic::{synthetic_pair, textured_image, trial_transform, IntensityMode};
use msreg::transform::TransformModel;

fn msreg(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_msreg")).args(args).output().unwrap()
}

#[test]
fn usage_and_io_errors_exit_1() {
    assert_eq!(msreg(&["register", "--fixed", "a.png"]).status.code(), Some(1));
    assert_eq!(msreg(&["frobnicate"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.png");
    let out = dir.path().join("out");
    let m = missing.to_str().unwrap();
    let o = msreg(&["register", "--fixed", m, "--moving", m, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.png"));
    assert_eq!(msreg(&["--help"]).status.code(), Some(0));
}

#[test]
fn register_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let src = textured_image(512, 512, 31);
    let gt = trial_transform((512, 512), 0.25, 0.95, (5.0, 8.0), 1);
    let pair = synthetic_pair(&src, &gt, IntensityMode::Gamma(0.5), 0.0, (512, 512), 1).unwrap();
    let (f, m) = (dir.path().join("f.png"), dir.path().join("m.pgm"));
    save_image(&pair.fixed, &f).unwrap();
    save_image(&pair.moving, &m).unwrap();
    let out = dir.path().join("out");
    let o = msreg(&[
        "register", "--fixed", f.to_str().unwrap(), "--moving", m.to_str().unwrap(), "--out", out.to_str().unwrap(),
        "--model", "similarity", "--dump",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for name in ["transform.txt", "matches.csv", "warped.png", "checkerboard.png", "fusion.png", "report.json",
        "fixed_keypoints.csv", "moving_descriptors.bin", "fixed_pyramid/pyr_o2_l3.pgm"] {
        assert!(out.join(name).exists(), "{name}");
    }
    let t = TransformModel::read_from(std::io::BufReader::new(std::fs::File::open(out.join("transform.txt")).unwrap())).unwrap();
    assert_eq!(t.kind.to_string(), "similarity");
    for p in [(0.0, 0.0), (511.0, 0.0), (0.0, 511.0), (511.0, 511.0)] {
        let (a, b) = (t.apply(p).unwrap(), gt.apply(p).unwrap());
        assert!((a.0 - b.0).hypot(a.1 - b.1) < 2.0);
    }
    let report = std::fs::read_to_string(out.join("report.json")).unwrap();
    assert!(report.contains("\"filtered_matches\"") && report.contains("\"timings_ms\""));
    let warped = msreg::io::load_image(out.join("warped.png"), 0).unwrap();
    assert_eq!(warped.dims(), (512, 512));
}

#[test]
fn constant_moving_image_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let (f, m) = (dir.path().join("f.png"), dir.path().join("m.png"));
    save_image(&textured_image(256, 256, 32), &f).unwrap();
    save_image(&GrayImage::filled(256, 256, 0.2), &m).unwrap();
    let out = dir.path().join("out");
    let o = msreg(&["register", "--fixed", f.to_str().unwrap(), "--moving", m.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bench_prints_table_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("src.png");
    let o = msreg(&["texture", "--out", src.to_str().unwrap(), "--seed", "4"]);
    assert!(o.status.success());
    let o = msreg(&[
        "bench", "--source", src.to_str().unwrap(), "--trials", "2", "--rotation-range", "10", "--scale-range", "0.9:1.1",
        "--intensity", "affine", "--noise", "0.01", "--seed", "9",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("# synthetic ground truth"));
    assert_eq!(text.lines().filter(|l| l.trim_start().starts_with(|c: char| c.is_ascii_digit())).count(), 2);
    assert!(text.lines().last().unwrap().starts_with("summary: success 2/2"));
    let bad = msreg(&["bench", "--source", src.to_str().unwrap(), "--scale-range", "2:1"]);
    assert_eq!(bad.status.code(), Some(1));
}
