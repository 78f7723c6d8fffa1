use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use etr_core::synthesis::procedural_texture;
use etr_core::{load_image, save_image};

fn etr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_etr"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn sharp_dir(root: &Path, h: usize, w: usize) -> std::path::PathBuf {
    let dir = root.join("sharp");
    fs::create_dir_all(&dir).unwrap();
    save_image(&procedural_texture(h, w, 3, 4).unwrap(), dir.join("tex.png")).unwrap();
    dir
}

#[test]
fn help_lists_every_flag() {
    let out = etr(&["--help"]);
    assert_eq!(code(&out), 0);
    let expected: &[(&str, &[&str])] = &[
        ("synth", &["--sharp-dir", "--out", "--count", "--motion", "--max-disp", "--seed"]),
        (
            "recover",
            &[
                "--blurry", "--sharp", "--mode", "--n", "--iters", "--lambda-ssim", "--lambda-reg",
                "--lambda-tv", "--boundary", "--out", "--report",
            ],
        ),
        ("reblur", &["--sharp", "--traj", "--out"]),
        ("extract", &["--sharp", "--traj", "--frames", "--reverse", "--out-dir"]),
        ("eval", &["--a", "--b", "--est-flow", "--gt-flow"]),
        ("viz", &["--traj", "--flow", "--image", "--stride", "--out"]),
    ];
    for (cmd, flags) in expected {
        let out = etr(&[cmd, "--help"]);
        assert_eq!(code(&out), 0);
        let text = String::from_utf8_lossy(&out.stdout);
        for flag in *flags {
            assert!(text.contains(flag), "{cmd} help lacks {flag}");
        }
        assert!(text.contains("--threads"));
    }
    let text = String::from_utf8_lossy(&etr(&["recover", "--help"]).stdout).to_string();
    assert!(text.contains("[paper]") && text.contains("[tuned]"));
    assert!(text.contains("0.1") && text.contains("0.00002") && text.contains("0.0005"));
}

#[test]
fn argument_errors_exit_3() {
    assert_eq!(code(&etr(&["recover", "--bogus"])), 3);
    assert_eq!(code(&etr(&[])), 3);
    let tmp = tempfile::tempdir().unwrap();
    let img = tmp.path().join("a.png");
    save_image(&procedural_texture(16, 16, 1, 0).unwrap(), &img).unwrap();
    let out = etr(&["recover", "--blurry", p(&img), "--sharp", p(&img), "--n", "4"]);
    assert_eq!(code(&out), 3);
    let traj = tmp.path().join("t.etrf");
    let t = etr_core::TrajectoryField::zeros(etr_core::ConstraintMode::Linear, 15, 16, 16).unwrap();
    etr_core::etrf::write_trajectory(&t, &traj).unwrap();
    let out = etr(&["extract", "--sharp", p(&img), "--traj", p(&traj), "--frames", "1", "--out-dir", p(tmp.path())]);
    assert_eq!(code(&out), 3);
}

#[test]
fn io_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("missing.png");
    assert_eq!(code(&etr(&["eval", "--a", p(&missing), "--b", p(&missing)])), 2);
    let junk = tmp.path().join("junk.etrf");
    fs::write(&junk, b"not a trajectory").unwrap();
    let img = tmp.path().join("a.png");
    save_image(&procedural_texture(8, 8, 1, 0).unwrap(), &img).unwrap();
    let out = etr(&["reblur", "--sharp", p(&img), "--traj", p(&junk), "--out", p(&tmp.path().join("o.png"))]);
    assert_eq!(code(&out), 2);
}

#[test]
fn eval_identical_images() {
    let tmp = tempfile::tempdir().unwrap();
    let img = tmp.path().join("x.png");
    save_image(&procedural_texture(24, 24, 3, 1).unwrap(), &img).unwrap();
    let out = etr(&["eval", "--a", p(&img), "--b", p(&img)]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("psnr: inf"), "{text}");
    assert!(text.contains("ssim: 1.0"), "{text}");
}

#[test]
fn synth_count_zero_writes_empty_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let src = sharp_dir(tmp.path(), 16, 16);
    let out_dir = tmp.path().join("out");
    let out = etr(&["synth", "--sharp-dir", p(&src), "--out", p(&out_dir), "--count", "0"]);
    assert_eq!(code(&out), 0);
    assert_eq!(fs::read_to_string(out_dir.join("manifest.tsv")).unwrap(), "");
}

#[test]
fn synth_zero_displacement_is_sharp() {
    let tmp = tempfile::tempdir().unwrap();
    let src = sharp_dir(tmp.path(), 20, 24);
    let out_dir = tmp.path().join("out");
    let out = etr(&[
        "synth", "--sharp-dir", p(&src), "--out", p(&out_dir), "--count", "2", "--max-disp", "0", "--motion", "affine",
    ]);
    assert_eq!(code(&out), 0);
    for k in 0..2 {
        let b = load_image(out_dir.join(format!("tex_{k:04}_blurry.png"))).unwrap();
        let s = load_image(out_dir.join(format!("tex_{k:04}_sharp.png"))).unwrap();
        assert_eq!(b, s);
    }
}

#[test]
fn reblur_reproduces_synth_blurry() {
    let tmp = tempfile::tempdir().unwrap();
    let src = sharp_dir(tmp.path(), 32, 28);
    let out_dir = tmp.path().join("out");
    let out = etr(&["synth", "--sharp-dir", p(&src), "--out", p(&out_dir), "--motion", "two-layer", "--seed", "9"]);
    assert_eq!(code(&out), 0);
    let re = tmp.path().join("re.png");
    let out = etr(&[
        "reblur",
        "--sharp",
        p(&out_dir.join("tex_0000_sharp.png")),
        "--traj",
        p(&out_dir.join("tex_0000_flow.etrf")),
        "--out",
        p(&re),
    ]);
    assert_eq!(code(&out), 0);
    assert_eq!(fs::read(&re).unwrap(), fs::read(out_dir.join("tex_0000_blurry.png")).unwrap());

    // the ground-truth flow scores perfectly against itself
    let flow = out_dir.join("tex_0000_flow.etrf");
    let out = etr(&["eval", "--est-flow", p(&flow), "--gt-flow", p(&flow)]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("motion_mse: 0.0") && text.contains("epe: 0.0"), "{text}");
}

#[test]
fn recover_no_blur_and_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let img = tmp.path().join("x.png");
    save_image(&procedural_texture(32, 32, 3, 2).unwrap(), &img).unwrap();
    let traj = tmp.path().join("t.etrf");
    let report = tmp.path().join("r.txt");
    let out = etr(&[
        "recover", "--blurry", p(&img), "--sharp", p(&img), "--iters", "60", "--out", p(&traj), "--report", p(&report),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&report).unwrap();
    let final_loss: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("final_loss: "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(final_loss < 1e-4, "{final_loss}");
    assert!(text.contains("iterations_run: 180"));

    let frames = tmp.path().join("frames");
    let out = etr(&["extract", "--sharp", p(&img), "--traj", p(&traj), "--frames", "5", "--reverse", "--out-dir", p(&frames)]);
    assert_eq!(code(&out), 0);
    assert_eq!(fs::read_dir(&frames).unwrap().count(), 5);
    assert_eq!(fs::read(frames.join("frame_002.png")).unwrap(), fs::read(&img).unwrap());

    let viz = tmp.path().join("v.png");
    assert_eq!(code(&etr(&["viz", "--traj", p(&traj), "--image", p(&img), "--stride", "4", "--out", p(&viz)])), 0);
    assert_eq!(load_image(&viz).unwrap().height(), 32);
    let fviz = tmp.path().join("f.png");
    assert_eq!(code(&etr(&["viz", "--flow", p(&traj), "--out", p(&fviz)])), 0);
    assert!(fviz.exists());
}
