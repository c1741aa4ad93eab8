use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use msgs_core::scene::load_scene;
use msgs_core::style::{hungarian_assign, CostMatrix};

fn msgs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_msgs")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Small synthetic dataset plus a short reconstruction of it.
fn prepared(dir: &Path) {
    let data = dir.join("data");
    assert_eq!(code(&msgs(&["--out", p(&data), "synth", "--gaussians", "45", "--views", "3", "--resolution", "20"])), 0);
    let out = msgs(&["--out", p(&dir.join("recon")), "recon", "--manifest", p(&data.join("manifest.txt")), "--iters", "10"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn recon_writes_scene_report_and_previews() {
    let dir = tempfile::tempdir().unwrap();
    prepared(dir.path());
    let r = dir.path().join("recon");
    assert!(r.join("scene.msgs").exists());
    let csv = fs::read_to_string(r.join("recon_report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 11);
    for i in 0..3 {
        assert!(r.join(format!("preview_{i:03}.png")).exists());
    }
}

#[test]
fn recon_with_zero_iterations_keeps_the_scene() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_eq!(code(&msgs(&["--out", p(&data), "synth", "--gaussians", "30", "--views", "2", "--resolution", "16"])), 0);
    let out = dir.path().join("r");
    assert_eq!(code(&msgs(&["--out", p(&out), "recon", "--manifest", p(&data.join("manifest.txt")), "--iters", "0"])), 0);
    assert_eq!(load_scene(&out.join("scene.msgs")).unwrap(), load_scene(&data.join("init.msgs")).unwrap());
}

#[test]
fn recon_with_missing_image_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_eq!(code(&msgs(&["--out", p(&data), "synth", "--gaussians", "30", "--views", "2", "--resolution", "16"])), 0);
    fs::remove_file(data.join("image_001.png")).unwrap();
    let out = msgs(&["--out", p(&dir.path().join("r")), "recon", "--manifest", p(&data.join("manifest.txt"))]);
    assert_eq!(code(&out), 2);
    assert!(!dir.path().join("r").join("scene.msgs").exists());
}

#[test]
fn divergent_learning_rate_exits_with_numeric_code_and_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_eq!(code(&msgs(&["--out", p(&data), "synth", "--gaussians", "30", "--views", "2", "--resolution", "16"])), 0);
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "lr_sem = 1e300\n").unwrap();
    let out = dir.path().join("r");
    let res = msgs(&["--config", p(&cfg), "--out", p(&out), "recon", "--manifest", p(&data.join("manifest.txt")), "--iters", "5"]);
    assert_eq!(code(&res), 3);
    assert!(out.join("snapshot.msgs").exists());
}

#[test]
fn unknown_config_key_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.cfg");
    fs::write(&cfg, "lamda_seg = 1\n").unwrap();
    let res = msgs(&["--config", p(&cfg), "recon", "--manifest", p(&dir.path().join("m.txt"))]);
    assert_eq!(code(&res), 2);
}

#[test]
fn automatic_match_is_optimal_for_the_written_cost() {
    let dir = tempfile::tempdir().unwrap();
    prepared(dir.path());
    let m = dir.path().join("m");
    let data = dir.path().join("data");
    let res = msgs(&[
        "--out",
        p(&m),
        "match",
        "--scene",
        p(&dir.path().join("recon/scene.msgs")),
        "--manifest",
        p(&data.join("manifest.txt")),
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let q = CostMatrix::from_csv(&fs::read_to_string(m.join("cost.csv")).unwrap()).unwrap();
    assert_eq!((q.rows(), q.cols()), (3, 2));
    let expect = hungarian_assign(&q);
    assert_eq!(fs::read_to_string(m.join("assignment.txt")).unwrap(), expect.to_text());
}

#[test]
fn manual_match_is_written_verbatim() {
    let dir = tempfile::tempdir().unwrap();
    prepared(dir.path());
    let m = dir.path().join("m");
    let args = |manual: &str| {
        msgs(&[
            "--out",
            p(&m),
            "match",
            "--scene",
            p(&dir.path().join("recon/scene.msgs")),
            "--trajectory",
            p(&dir.path().join("data/trajectory.txt")),
            "--styles",
            p(&dir.path().join("data/styles.txt")),
            "--manual",
            manual,
        ])
    };
    assert_eq!(code(&args("0:1,1:1,2:0")), 0);
    assert_eq!(fs::read_to_string(m.join("assignment.txt")).unwrap(), "0 1\n1 1\n2 0\n");
    assert_eq!(code(&args("0:1,1:5,2:0")), 2);
    assert_eq!(code(&args("0:1")), 2);
}

#[test]
fn single_class_single_style_matches_trivially() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let blob = msgs_core::synthetic::blob_scene(2, 20, 4, 1);
    msgs_core::scene::save_scene(&blob.scene, &d.join("one.msgs")).unwrap();
    let cams = msgs_core::synthetic::orbit_cameras(2, 4.0, 16, 16);
    fs::write(d.join("traj.txt"), msgs_core::dataset::trajectory_to_text(&cams)).unwrap();
    msgs_core::synthetic::checker_style(16, 16).save_png(&d.join("s.png")).unwrap();
    fs::write(d.join("styles.txt"), "checker\ts.png\t-\t-\n").unwrap();
    let res = msgs(&[
        "--out",
        p(&d.join("m")),
        "match",
        "--scene",
        p(&d.join("one.msgs")),
        "--trajectory",
        p(&d.join("traj.txt")),
        "--styles",
        p(&d.join("styles.txt")),
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(fs::read_to_string(d.join("m/assignment.txt")).unwrap(), "0 0\n");
}

#[test]
fn stylize_is_deterministic_and_rejects_bad_assignments() {
    let dir = tempfile::tempdir().unwrap();
    prepared(dir.path());
    let d = dir.path();
    fs::write(d.join("a.txt"), "0 1\n1 0\n2 1\n").unwrap();
    fs::write(d.join("bad.txt"), "0 1\n1 2\n2 1\n").unwrap();
    let run = |assignment: &str, out: &str| {
        msgs(&[
            "--out",
            p(&d.join(out)),
            "stylize",
            "--scene",
            p(&d.join("recon/scene.msgs")),
            "--assignment",
            p(&d.join(assignment)),
            "--manifest",
            p(&d.join("data/manifest.txt")),
            "--iters",
            "6",
        ])
    };
    assert_eq!(code(&run("a.txt", "s1")), 0);
    assert_eq!(code(&run("a.txt", "s2")), 0);
    assert_eq!(fs::read(d.join("s1/stylized.msgs")).unwrap(), fs::read(d.join("s2/stylized.msgs")).unwrap());
    assert_eq!(
        fs::read_to_string(d.join("s1/stylize_report.csv")).unwrap(),
        fs::read_to_string(d.join("s2/stylize_report.csv")).unwrap()
    );
    assert!(d.join("s1/before_000.png").exists() && d.join("s1/after_002.png").exists());
    assert_eq!(code(&run("bad.txt", "s3")), 2);
    assert!(!d.join("s3/stylized.msgs").exists());
}

#[test]
fn render_writes_one_padded_frame_per_pose() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let blob = msgs_core::synthetic::three_blob_scene(1, 30, 4);
    msgs_core::scene::save_scene(&blob.scene, &d.join("s.msgs")).unwrap();
    let cams = msgs_core::synthetic::orbit_cameras(8, 4.0, 12, 10);
    fs::write(d.join("traj.txt"), msgs_core::dataset::trajectory_to_text(&cams)).unwrap();
    let res = msgs(&[
        "--out",
        p(&d.join("v")),
        "render",
        "--scene",
        p(&d.join("s.msgs")),
        "--trajectory",
        p(&d.join("traj.txt")),
        "--labels",
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let mut names: Vec<String> =
        fs::read_dir(d.join("v")).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    let mut expect: Vec<String> = (0..8).map(|i| format!("label_{i:03}.png")).collect();
    expect.extend((0..8).map(|i| format!("view_{i:03}.png")));
    assert_eq!(names, expect);
    let img = image::open(d.join("v/view_007.png")).unwrap();
    assert_eq!((img.width(), img.height()), (12, 10));
}

#[test]
fn render_rejects_empty_trajectory_and_missing_scene() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let blob = msgs_core::synthetic::three_blob_scene(1, 30, 4);
    msgs_core::scene::save_scene(&blob.scene, &d.join("s.msgs")).unwrap();
    fs::write(d.join("empty.txt"), "").unwrap();
    let args = |scene: &str| {
        msgs(&["--out", p(&d.join("v")), "render", "--scene", p(&d.join(scene)), "--trajectory", p(&d.join("empty.txt"))])
    };
    assert_eq!(code(&args("s.msgs")), 2);
    assert_eq!(code(&args("missing.msgs")), 2);
}

#[test]
fn check_grad_reports_and_rejects_unknown_losses() {
    let ok = msgs(&["check-grad", "--loss", "mask", "--seeds", "2"]);
    assert_eq!(code(&ok), 0);
    assert!(String::from_utf8_lossy(&ok.stdout).contains("mask"));
    assert_eq!(code(&msgs(&["check-grad", "--loss", "bogus"])), 2);
}
