use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_icl-iml"))
}

fn run(args: &[&str], out: &Path) -> Output {
    bin().args(args).arg("--out-dir").arg(out).output().expect("spawn icl-iml")
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

const EXPLAIN: &[&str] = &[
    "explain",
    "--seed",
    "2",
    "--methods",
    "pd,kernel_shap,loco,loo",
    "--samples",
    "10",
    "--grid-size",
    "5",
    "--max-local-rows",
    "3",
];

#[test]
fn external_backend_reproduces_reference_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("ref"), dir.path().join("ext"));
    let reference = run(EXPLAIN, &a);
    assert!(reference.status.success(), "{}", String::from_utf8_lossy(&reference.stderr));

    let server = format!("'{}' serve --mock reference", env!("CARGO_BIN_EXE_icl-iml"));
    let mut args = EXPLAIN.to_vec();
    args.extend(["--external-cmd", &server]);
    let external = run(&args, &b);
    assert!(external.status.success(), "{}", String::from_utf8_lossy(&external.stderr));

    let mut names: Vec<String> =
        std::fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    names.sort();
    assert!(names.iter().any(|n| n == "kernel_shap.csv"));
    for name in names.iter().filter(|n| *n != "manifest.json") {
        assert_eq!(read(&a.join(name)), read(&b.join(name)), "{name}");
    }
    // Only the backend name differs between the manifests.
    let body = |dir: &Path| {
        let text = read(&dir.join("manifest.json"));
        text.lines().filter(|l| !l.trim_start().starts_with("\"backend\"")).collect::<Vec<_>>().join("\n")
    };
    assert_eq!(body(&a), body(&b));
    assert!(read(&b.join("manifest.json")).contains("\"backend\": \"external:"));
}

#[test]
fn config_file_values_are_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("pd.toml");
    std::fs::write(&config, "experiment = \"pd_runtime\"\nseeds = [5]\n\n[pd_runtime]\nsizes = [40]\ngrid_sizes = [3]\np = 2\nrepetitions = 1\n")
        .unwrap();
    let out = dir.path().join("out");
    let status =
        run(&["bench-pd", "--config", config.to_str().unwrap(), "--grid-sizes", "4", "--seed", "7"], &out).status;
    assert!(status.success());
    let table = read(&out.join("pd_runtime.csv"));
    let mut lines = table.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][col("seed")], "7");
    assert_eq!(rows[0][col("grid_size")], "4");
    assert_eq!(rows[0][col("n")], "40");
}

#[test]
fn config_for_another_experiment_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("c.toml");
    std::fs::write(&config, "experiment = \"shap_error\"\n").unwrap();
    let out = run(&["bench-pd", "--config", config.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn conflicting_flags_exit_with_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cases: [&[&str]; 5] = [
        &["explain", "--backend", "reference", "--external-cmd", "x serve"],
        &["explain", "--backend", "external"],
        &["explain", "--external-cmd", "x serve", "--bandwidth", "2"],
        &["explain", "--data", "missing.csv", "--task", "xor"],
        &["synth", "--format", "json"],
    ];
    for args in cases {
        let out = run(args, dir.path());
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let usage = run(&["bench-pd", "--no-such-flag"], dir.path());
    assert_eq!(usage.status.code(), Some(2));
}

#[test]
fn unreachable_predictor_is_a_transport_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["explain", "--methods", "pd", "--external-cmd", "/nonexistent/predictor"], dir.path());
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn failed_check_exits_with_one_and_still_writes() {
    let dir = tempfile::tempdir().unwrap();
    // A single seed that loses to the random sketch.
    let out = run(&["bench-context", "--seed", "2"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("[FAIL] selected_context_beats_random"));
    assert!(dir.path().join("context_opt.csv").exists());
}

#[test]
fn synth_output_feeds_explain() {
    let dir = tempfile::tempdir().unwrap();
    let synth = run(&["synth", "--task", "xor", "--n", "60", "--p", "3", "--seed", "1"], dir.path());
    assert!(synth.status.success());
    let data = dir.path().join("synth.csv");
    assert_eq!(read(&data).lines().next().unwrap(), "x0,x1,x2,label");
    let out = dir.path().join("explain");
    let explain = run(&["explain", "--data", data.to_str().unwrap(), "--methods", "loco", "--format", "json"], &out);
    assert!(explain.status.success(), "{}", String::from_utf8_lossy(&explain.stderr));
    assert!(out.join("loco.json").exists());
}

#[test]
fn serve_answers_hello() {
    use std::io::Write;
    let mut child = bin()
        .args(["serve", "--mock", "constant"])
        .stdin(std::process::Stdio::piped())
        .stdout(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(b"{\"op\":\"hello\",\"version\":1}\n").unwrap();
    let out = child.wait_with_output().unwrap();
    let reply = String::from_utf8(out.stdout).unwrap();
    assert_eq!(reply.trim(), r#"{"op":"hello","version":1,"max_context":1024}"#);
}
