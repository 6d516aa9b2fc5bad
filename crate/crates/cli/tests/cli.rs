use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn exploregs(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_exploregs")).current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = exploregs(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn stages_chain_through_files() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("run.cfg"), "[world]\nseed = 42\n").unwrap();
    ok(d, &["explore", "--config", "run.cfg", "--out-dir", "frames"]);
    for f in [
        "frames/poses.txt",
        "frames/timestamps.txt",
        "frames/grid.bin",
        "frames/trajectory.txt",
        "frames/frame_00000.ppm",
        "frames/depth_00000.pgm",
    ] {
        assert!(d.join(f).is_file(), "missing {f}");
    }
    ok(d, &["select-pairs", "--images", "frames", "--vocab", "vocab.bin", "--out", "pairs.txt", "--tau", "0.03", "--thr-in", "0.04"]);
    assert!(d.join("vocab.bin").is_file());
    let pairs = fs::read_to_string(d.join("pairs.txt")).unwrap();
    assert!(!pairs.trim().is_empty());
    ok(d, &["infer", "--backend", "oracle", "--pairs", "pairs.txt", "--out-dir", "preds", "--config", "run.cfg"]);
    assert_eq!(fs::read_dir(d.join("preds")).unwrap().count(), pairs.lines().filter(|l| !l.starts_with('#')).count());
    ok(d, &["align", "--preds", "preds", "--pairs", "pairs.txt", "--out", "cloud.ply", "--poses", "poses_est.txt"]);
    assert!(fs::read_to_string(d.join("cloud.ply")).unwrap().starts_with("ply\n"));
    ok(d, &["render", "--scene", "scene.egss", "--poses", "poses_est.txt", "--cam", "run.cfg", "--out-dir", "renders"]);
    ok(d, &["eval", "--renders", "renders", "--truth", "frames", "--report", "metrics.txt"]);
    let metrics = fs::read_to_string(d.join("metrics.txt")).unwrap();
    let rows: Vec<Vec<f64>> =
        metrics.lines().filter(|l| !l.starts_with('#')).map(|l| l.split_whitespace().map(|x| x.parse().unwrap()).collect()).collect();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r[1] > r[2]), "{metrics}");

    let table = ok(d, &["table1", "--images", "frames", "--vocab", "vocab.bin"]);
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[3].starts_with("60 3540 300 "));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("bad.cfg"), "[world]\nbogus = 1\n").unwrap();
    let out = exploregs(d, &["pipeline", "--config", "bad.cfg", "--out-dir", "run"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
    assert_eq!(exploregs(d, &["pipeline", "--config", "missing.cfg", "--out-dir", "run"]).status.code(), Some(2));
    assert_eq!(exploregs(d, &["render", "--scene", "x"]).status.code(), Some(2));

    fs::write(d.join("pairs.txt"), "0 1 1.0\n").unwrap();
    let out = exploregs(d, &["align", "--preds", "preds", "--pairs", "pairs.txt", "--out", "c.ply", "--poses", "p.txt"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("align"));
    fs::create_dir(d.join("renders")).unwrap();
    assert_eq!(exploregs(d, &["eval", "--renders", "renders", "--truth", "frames", "--report", "m.txt"]).status.code(), Some(3));
}

#[test]
fn pipeline_writes_report() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("run.cfg"), "[explore]\nv_max = 1.0\n").unwrap();
    let stdout = ok(d, &["pipeline", "--config", "run.cfg", "--out-dir", "run1"]);
    let report = fs::read_to_string(d.join("run1/report.txt")).unwrap();
    assert_eq!(stdout, report);
    assert!(report.contains("frames_captured = 66\n"));
}
