use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;
use tpsurf_cli::report::Report;

fn tpsurf(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tpsurf"))
        .args(args)
        .current_dir(dir)
        .env_remove("TPSURF_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = tpsurf(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}\n{}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(dir: &Path, args: &[&str]) -> Value {
    let mut a = args.to_vec();
    a.extend(["--out", "-"]);
    serde_json::from_str(&ok(dir, &a)).unwrap()
}

fn fixture(dir: &Path, args: &[&str]) {
    let mut a = vec!["fixture"];
    a.extend(args);
    ok(dir, &a);
}

fn workspace() -> TempDir {
    tempfile::tempdir().unwrap()
}

#[test]
fn exit_codes_follow_the_contract() {
    let tmp = workspace();
    let d = tmp.path();
    fixture(d, &["icosphere", "s.obj", "--level", "1"]);
    let bad_q = tpsurf(d, &["energy", "s.obj", "--q", "0"]);
    assert_eq!(bad_q.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&bad_q.stderr).contains("q must be positive"));
    assert_eq!(tpsurf(d, &["energy", "missing.obj"]).status.code(), Some(2));
    std::fs::write(d.join("broken.obj"), "v 0 0 0\nv 1 0\nf 1 2 3\n").unwrap();
    assert_eq!(tpsurf(d, &["energy", "broken.obj"]).status.code(), Some(2));
    // the regularity battery needs a supercritical exponent
    assert_eq!(tpsurf(d, &["verify", "s.obj", "--q", "4"]).status.code(), Some(3));
    assert_eq!(tpsurf(d, &["energy", "s.obj", "--eta", "1"]).status.code(), Some(3));
}

#[test]
fn clustered_mode_reports_an_error_bound() {
    let tmp = workspace();
    fixture(tmp.path(), &["icosphere", "s.obj", "--level", "3"]);
    let r = json(tmp.path(), &["energy", "s.obj", "--mode", "bvh", "--theta", "0.5"]);
    let e = &r["result"]["energy"];
    assert!(e["acceleration_error_bound"].as_f64().unwrap() > 0.0);
    let exact = json(tmp.path(), &["energy", "s.obj"]);
    let (a, b) = (
        e["total_energy"].as_f64().unwrap(),
        exact["result"]["energy"]["total_energy"].as_f64().unwrap(),
    );
    assert!((a - b).abs() <= e["acceleration_error_bound"].as_f64().unwrap());
}

#[test]
fn hopf_link_has_parity_one() {
    let tmp = workspace();
    let d = tmp.path();
    fixture(d, &["hopf-a", "hopf_a.ndmesh", "--segments", "48"]);
    fixture(d, &["hopf-b", "hopf_b.ndmesh", "--segments", "48"]);
    assert_eq!(ok(d, &["linking", "hopf_a.ndmesh", "hopf_b.ndmesh"]), "parity: 1\n");
    fixture(d, &["icosphere", "s.obj", "--level", "2"]);
    assert_eq!(ok(d, &["linking", "s.obj", "--points", "0,0,0.5;0,0,1.5"]), "parity: 1\n");
    assert_eq!(ok(d, &["linking", "s.obj", "--points", "0,0,1.5;0,0,2.5"]), "parity: 0\n");
}

#[test]
fn stopping_distance_on_a_disk_pair_matches_the_gap() {
    let tmp = workspace();
    let h = 0.3;
    fixture(tmp.path(), &["parallel-disks", "disk_pair.ndmesh", "--segments", "48", "--gap", "0.3"]);
    let r = json(tmp.path(), &["stopping", "disk_pair.ndmesh", "--x-index", "0"]);
    let d = r["result"]["d_min"].as_f64().unwrap();
    assert!(d >= h / 2.0 && d <= 2.0 * h, "d_s = {d}");
    assert!(r["result"]["r1"].as_f64().unwrap() < d);
}

#[test]
fn verify_outcomes_on_reference_shapes() {
    let tmp = workspace();
    let d = tmp.path();
    fixture(d, &["flat-disk", "disk.obj", "--segments", "24"]);
    let disk = json(d, &["verify", "disk.obj"]);
    assert_eq!(disk["result"]["energy"]["total_energy"].as_f64(), Some(0.0));
    for c in disk["result"]["criteria"].as_array().unwrap() {
        assert_eq!(c["status"], "flat-input");
    }

    fixture(d, &["icosphere", "sphere.obj", "--level", "4"]);
    let out = tpsurf(d, &["verify", "sphere.obj", "--q", "6", "--probes", "8"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{text}");
    assert_eq!(text.matches(": PASS").count(), 4, "{text}");

    fixture(d, &["thin-finger", "finger.obj"]);
    let out = tpsurf(d, &["verify", "finger.obj", "--probes", "8", "--out", "-"]);
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    let ahlfors = r["result"]["criteria"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["name"] == "ahlfors")
        .unwrap();
    assert_eq!(ahlfors["status"], "expected-fail");
    assert_eq!(ahlfors["measured"]["violations"], 0);
}

#[test]
fn beta_writes_a_radius_table() {
    let tmp = workspace();
    let d = tmp.path();
    fixture(d, &["icosphere", "sphere.obj", "--level", "5"]);
    ok(
        d,
        &["beta", "sphere.obj", "--center-index", "0", "--radii", "0.05:0.5:log10", "--csv", "beta.csv"],
    );
    let csv = std::fs::read_to_string(d.join("beta.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("radius,beta,lower,points"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 8);
    assert!((rows[0][0] - 0.05).abs() < 1e-15 && (rows[7][0] - 0.5).abs() < 1e-15);
    for r in &rows {
        assert!(r[2] <= r[1], "{r:?}");
    }
    // beta = d/2 on the unit sphere once the ball holds enough points
    let resolved: Vec<_> = rows.iter().filter(|r| r[3] >= 50.0).collect();
    assert!(resolved.len() >= 5);
    for r in resolved {
        assert!((r[1] - r[0] / 2.0).abs() < 0.1 * r[0] / 2.0, "{r:?}");
    }
}

#[test]
fn flow_writes_series_with_warnings() {
    let tmp = workspace();
    let d = tmp.path();
    fixture(d, &["perturbed-circle", "c.ndmesh", "--segments", "32"]);
    ok(
        d,
        &["flow", "c.ndmesh", "--q", "2", "--steps", "3", "--csv", "f.csv", "--mesh-out", "end.ndmesh"],
    );
    let csv = std::fs::read_to_string(d.join("f.csv")).unwrap();
    assert!(csv.starts_with("# critical exponent"));
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 5);
    ok(d, &["energy", "end.ndmesh", "--q", "4"]);
}

#[test]
fn reports_round_trip_and_echo_their_inputs() {
    let tmp = workspace();
    let d = tmp.path();
    fixture(d, &["torus", "t.ndmesh", "--segments", "16"]);
    ok(d, &["energy", "t.ndmesh", "--deterministic", "--out", "r.json"]);
    let text = std::fs::read_to_string(d.join("r.json")).unwrap();
    let r: Report = serde_json::from_str(&text).unwrap();
    assert_eq!(r.to_json().unwrap(), text);
    assert_eq!(r.schema, "tpsurf.report/1");
    assert!(r.timing.is_none());
    let input = &r.provenance.inputs[0];
    assert_eq!(input.bytes, std::fs::metadata(d.join("t.ndmesh")).unwrap().len());
    assert_eq!(input.sha256.len(), 64);
    let cfg = r.config.unwrap();
    assert_eq!((cfg.intrinsic_dim, cfg.q), (2, 6.0));
    assert!((cfg.constants.mu - 1.0 / 3.0).abs() < 1e-15);

    let timed = json(d, &["energy", "t.ndmesh", "--threads", "2"]);
    assert_eq!(timed["timing"]["threads"], 2);
}
