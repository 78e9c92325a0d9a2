use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn blobcg(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blobcg"))
        .args(args)
        .current_dir(cwd)
        .env_remove("BLOBCG_WORKERS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = blobcg(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str], cwd: &Path) -> String {
    let out = blobcg(args, cwd);
    assert!(!out.status.success(), "{args:?} should fail");
    String::from_utf8(out.stderr).unwrap()
}

const SCENE: &str = r#"{
  "dims": [48, 48, 48],
  "spacing_mm": [1.0, 1.0, 1.0],
  "background": -810,
  "units": "HU",
  "primitives": [
    {"kind": "sphere", "center_mm": [24, 24, 24], "diameter_mm": 9.7429, "intensity": -100}
  ]
}"#;

fn scene_volume(dir: &Path) {
    fs::write(dir.join("scene.json"), SCENE).unwrap();
    ok(&["phantom", "--scene", "scene.json", "--out", "v.json"], dir);
}

#[test]
fn plan_scales_prints_default_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["plan-scales"], dir.path());
    assert!(out.starts_with("k = 1.2656\n"));
    assert!(out.contains("6                        9.74     2.81  8.62 - 10.91"));
    assert_eq!(out.lines().count(), 14);
    let csv = ok(&["plan-scales", "--format", "csv"], dir.path());
    assert!(csv.contains("\n10,25.0000,7.2169,22.1197,27.9957,false\n"));
    let json = ok(&["plan-scales", "--format", "json"], dir.path());
    assert!(json.contains("\"entries\""));
}

#[test]
fn plan_scales_reports_violations() {
    let dir = tempfile::tempdir().unwrap();
    let out = blobcg(&["plan-scales", "--n", "3"], dir.path());
    assert!(out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("warning: shape-confusion bound exceeded"), "{err}");
}

#[test]
fn detect_is_deterministic_and_finds_the_sphere() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    scene_volume(d);
    ok(&["detect", "--volume", "v.json", "--out", "a.csv"], d);
    ok(&["--workers", "2", "detect", "--volume", "v.json", "--out", "b.csv"], d);
    let a = fs::read(d.join("a.csv")).unwrap();
    assert_eq!(a, fs::read(d.join("b.csv")).unwrap());
    let text = String::from_utf8(a).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 1, "{text}");
    assert!(rows[0].starts_with("24.0000,24.0000,24.0000,24,24,24,6,"), "{text}");
}

#[test]
fn detect_thresholds_and_dumps() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    scene_volume(d);
    ok(&["detect", "--volume", "v.json", "--threshold", "1000", "--out", "hi.csv"], d);
    assert_eq!(fs::read_to_string(d.join("hi.csv")).unwrap().lines().count(), 1);
    ok(
        &[
            "detect", "--volume", "v.json", "--no-threshold", "--out", "all.csv", "--dump-scale", "6", "--dump-out",
            "r6.json",
        ],
        d,
    );
    assert!(fs::read_to_string(d.join("all.csv")).unwrap().lines().count() >= 2);
    assert!(d.join("r6.json").exists() && d.join("r6.raw").exists());
}

#[test]
fn detect_nonsolid_mode_runs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    scene_volume(d);
    ok(&["detect", "--mode", "nonsolid", "--volume", "v.json", "--out", "n.csv"], d);
    let text = fs::read_to_string(d.join("n.csv")).unwrap();
    assert!(text.lines().nth(1).unwrap().starts_with("24.0000,24.0000,24.0000,"), "{text}");
}

#[test]
fn errors_name_the_offending_path() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let err = fails(&["detect", "--volume", "missing_volume.json", "--out", "c.csv"], d);
    assert!(err.contains("missing_volume.json"), "{err}");
    assert!(!d.join("c.csv").exists());

    scene_volume(d);
    let err = fails(&["detect", "--volume", "v.json", "--mask", "no_mask.json", "--out", "c.csv"], d);
    assert!(err.contains("no_mask.json"), "{err}");
    assert!(!d.join("c.csv").exists());

    let err = fails(&["detect", "--volume", "v.json", "--out", "nodir/c.csv"], d);
    assert!(err.contains("nodir/c.csv"), "{err}");

    fs::write(d.join("bad.json"), "{").unwrap();
    let err = fails(&["phantom", "--scene", "bad.json", "--out", "x.json"], d);
    assert!(err.contains("bad.json"), "{err}");

    let err = fails(&["--workers", "0", "plan-scales"], d);
    assert!(err.contains("worker"), "{err}");
}

#[test]
fn evaluate_writes_report_and_per_nodule_table() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    scene_volume(d);
    ok(&["detect", "--volume", "v.json", "--out", "c.csv"], d);
    fs::write(
        d.join("truth.csv"),
        "ix,iy,iz,length_mm,width_mm,class\n24,24,24,10,9.5,solid\n5,5,5,6,4,nonsolid\n",
    )
    .unwrap();
    let json = ok(
        &[
            "evaluate", "--truth", "truth.csv", "--candidates", "c.csv", "--volume", "v.json", "--per-nodule", "n.csv",
        ],
        d,
    );
    assert!(json.contains("\"sensitivity\": 0.5"), "{json}");
    let table = fs::read_to_string(d.join("n.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
    assert!(table.lines().nth(1).unwrap().contains(",true,0,"), "{table}");
}

#[test]
fn analytic_curves() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["analytic", "--d", "10", "--steps", "4", "--max", "4"], dir.path());
    assert_eq!(out.lines().next().unwrap(), "sigma_mm,sphere,cylinder,rect_1d");
    assert_eq!(out.lines().count(), 5);
    let out = ok(&["analytic", "--curve", "quantization", "--steps", "2", "--max", "1.5"], dir.path());
    assert_eq!(out, "k,r_dip,d_ue,d_oe\n1.2500,0.8913,0.1019,0.1227\n1.5000,0.8187,0.1723,0.2415\n");
}

#[test]
fn simulate_writes_sweep_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(
        &[
            "simulate", "--mode", "wall", "--d", "10", "--distances", "2,1", "--dims", "48", "--dmin", "6", "--dmax",
            "14", "--n", "8",
        ],
        dir.path(),
    );
    let lines: Vec<&str> = out.lines().collect();
    assert!(lines[0].starts_with("distance_diameters,response,size_estimate_mm,merged,scale_index"));
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("2.0000,"));
}
