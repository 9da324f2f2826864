use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Output, Stdio};

use serde_json::Value;

fn iotecs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_iotecs"))
        .args(args)
        .output()
        .unwrap()
}

fn spec_dir() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../specs"))
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

const SMALL: &str = "Cloud: C { IP:127.0.0.1 port:PORT }
Simulator: { duration:600ms step:200ms simulationNodes:{N} }
SimulationNode: N { platform:P EdgeDevices:{E[2]} }
Platform: P { type:Native }
EdgeDevice: E { protocol:PROTO speed:MAX cloud:C devices:{D[3]} }
Device: D { period:2 payload:\"23C\" }
";

#[test]
fn validate_reference_fleet() {
    let out = iotecs(&[
        "validate",
        spec_dir().join("reference_fleet.iotecs").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["nodes"], 6);
    assert_eq!(v["ok"], true);
}

#[test]
fn dangling_cloud_is_a_located_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(
        dir.path(),
        "bad.iotecs",
        &SMALL
            .replace("cloud:C", "cloud:C9")
            .replace("PORT", "9")
            .replace("PROTO", "UDP"),
    );
    let out = iotecs(&["validate", &p]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.iotecs:5:") && err.contains("C9"), "{err}");
}

#[test]
fn mqtt_warns_unless_strict() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(
        dir.path(),
        "m.iotecs",
        &SMALL.replace("PROTO", "MQTT").replace("PORT", "9"),
    );
    let out = iotecs(&["validate", &p]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning: MQTT not supported by runtime"));
    assert_eq!(iotecs(&["validate", "--strict", &p]).status.code(), Some(1));
    let run = iotecs(&["run", &p, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(1));
}

#[test]
fn oracle_commands() {
    let out = iotecs(&["recommend-step", "4s", "6s"]);
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "2s");
    assert_eq!(iotecs(&["recommend-step"]).status.code(), Some(2));
    assert_eq!(
        iotecs(&["recommend-step", "4parsecs"]).status.code(),
        Some(2)
    );

    let dir = tempfile::tempdir().unwrap();
    let p = write(
        dir.path(),
        "s.iotecs",
        &SMALL.replace("PROTO", "UDP").replace("PORT", "9"),
    );
    let v: Value = serde_json::from_slice(&iotecs(&["expected", &p]).stdout).unwrap();
    // 3 steps, period 2: steps 0 and 2, three devices each
    assert_eq!(v, serde_json::json!({"0/0": 6, "0/1": 6}));
}

#[test]
fn run_without_cloud_exits_2_with_hint() {
    let dir = tempfile::tempdir().unwrap();
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let p = write(
        dir.path(),
        "s.iotecs",
        &SMALL
            .replace("PROTO", "UDP")
            .replace("PORT", &port.to_string()),
    );
    let out = iotecs(&["run", &p, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("iotecs cloud"));
}

#[test]
fn cloud_process_serves_a_run_and_stops() {
    let mut cloud = Command::new(env!("CARGO_BIN_EXE_iotecs"))
        .args([
            "cloud",
            "--protocol",
            "tcp",
            "--port",
            "23411",
            "--compute",
            "1ms",
        ])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut first = String::new();
    BufReader::new(cloud.stdout.take().unwrap())
        .read_line(&mut first)
        .unwrap();
    assert!(first.starts_with('{'));

    let busy = iotecs(&["cloud", "--protocol", "tcp", "--port", "23411"]);
    assert_eq!(busy.status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let p = write(
        dir.path(),
        "s.iotecs",
        &SMALL.replace("PROTO", "TCP").replace("PORT", "23411"),
    );
    let out_dir = dir.path().join("o");
    let out = iotecs(&[
        "run",
        &p,
        "--out",
        out_dir.to_str().unwrap(),
        "--reps",
        "2",
        "--seed",
        "42",
        "--start-delay",
        "200ms",
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = std::fs::read_to_string(out_dir.join("report.csv")).unwrap();
    assert!(
        csv.lines()
            .nth(1)
            .unwrap()
            .starts_with("Native,1,MAX,1000000,0,0,"),
        "{csv}"
    );

    let rep = iotecs(&["report", out_dir.to_str().unwrap(), "--format", "json"]);
    let v: Value = serde_json::from_slice(&rep.stdout).unwrap();
    assert_eq!(v[0]["per_repetition"].as_array().unwrap().len(), 2);

    let stop = std::net::TcpStream::connect("127.0.0.1:23412").unwrap();
    use std::io::Write;
    (&stop).write_all(b"STOP\n").unwrap();
    assert!(cloud.wait().unwrap().success());
}

#[test]
fn report_on_empty_dir_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = iotecs(&["report", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no run results"));
}

#[test]
fn deploy_writes_descriptors() {
    let dir = tempfile::tempdir().unwrap();
    let out = iotecs(&[
        "deploy",
        spec_dir().join("reference_fleet.iotecs").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let files: Vec<String> = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(files.len(), 12);
    assert!(dir.path().join("node_5.docker.json").exists());
    assert!(dir.path().join("node_0.sh").exists());
}
