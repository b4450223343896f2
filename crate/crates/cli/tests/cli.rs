use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use maskopt::io::{read_policy, RunSummary, ScenarioFile};
use maskopt::{ConditioningMode, PolicyParams, SynthesisTraceF64};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_maskopt"));
    c.env_remove("MASKOPT_OUTPUT_DIR");
    c
}

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn field(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")))
        .unwrap_or_else(|| panic!("no `{key}` in:\n{text}"))
        .parse()
        .unwrap()
}

const TINY: &str = r#"
transitions = [["a", "b", 0.5], ["a", "c", 0.5], ["b", "b", 1], ["c", "c", 1]]

[states]
names = ["a", "b", "c"]

[[sensors]]
name = "X"
coverage = ["b"]
detection_prob = 0.9

[[mask_actions]]
name = "X"
masks = ["X"]

[[mask_actions]]
name = "N"
masks = []

[mask_costs]
base = { X = 5, N = 0 }
repeat_factor = 0.5

[initial]
dist = { a = 1 }
config = "N"

[secret]
states = ["b"]

[problem]
horizon = 2
budget = 5
"#;

fn write_scenario(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("model.toml");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn synthesize_writes_loadable_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "synthesize",
        scenario("illustrative").to_str().unwrap(),
        "--epsilon",
        "60",
        "--seed",
        "7",
        "--output-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let summary = RunSummary::parse(&fs::read_to_string(dir.path().join("summary.txt")).unwrap()).unwrap();
    assert!(summary.entropy > 0.6, "{summary:?}");
    assert_eq!(summary.entropy_mode, "exact");
    assert_eq!(summary.epsilon, 60.0);
    assert_eq!(summary.iterations, 1000);

    let trace = SynthesisTraceF64::from_csv(&fs::read_to_string(dir.path().join("trace.csv")).unwrap()).unwrap();
    assert_eq!(trace.len(), 1000);
    let mdp = ScenarioFile::<f64>::load(&scenario("illustrative.toml"))
        .unwrap()
        .to_scenario()
        .unwrap()
        .build_mask_mdp()
        .unwrap();
    read_policy(&mdp, &fs::read_to_string(dir.path().join("policy.txt")).unwrap()).unwrap();
}

#[test]
fn missing_scenario_is_a_parse_error() {
    let out = run(&["synthesize", "missing.toml"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn syntax_errors_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_scenario(dir.path(), "[states]\nnames = [\"a\"\n");
    let out = run(&["evaluate", path.to_str().unwrap(), "--baseline", "uniform"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("line"), "{}", stderr(&out));
}

#[test]
fn bad_flag_values_are_rejected_before_running() {
    let out = run(&["synthesize", scenario("illustrative").to_str().unwrap(), "--eta", "fast"]);
    assert_eq!(code(&out), 2);
    let out = run(&["synthesize", scenario("illustrative").to_str().unwrap(), "--eta", "-1"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn zero_iterations_keep_the_initial_policy() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["synthesize", scenario("illustrative").to_str().unwrap(), "--iterations", "0"])
        .env("MASKOPT_OUTPUT_DIR", dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let trace = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert_eq!(trace.trim_end(), "iter,entropy,value,lambda,grad_norm,wall_s");
    let mdp = ScenarioFile::<f64>::load(&scenario("illustrative.toml"))
        .unwrap()
        .to_scenario()
        .unwrap()
        .build_mask_mdp()
        .unwrap();
    let policy = read_policy(&mdp, &fs::read_to_string(dir.path().join("policy.txt")).unwrap()).unwrap();
    assert_eq!(policy, PolicyParams::zeros(&mdp, ConditioningMode::Augmented));
}

#[test]
fn same_seed_gives_byte_identical_traces() {
    let traces: Vec<Vec<u8>> = (0..2)
        .map(|_| {
            let dir = tempfile::tempdir().unwrap();
            let out = run(&[
                "synthesize",
                scenario("illustrative").to_str().unwrap(),
                "--iterations",
                "40",
                "--seed",
                "11",
                "--no-timing",
                "--output-dir",
                dir.path().to_str().unwrap(),
            ]);
            assert_eq!(code(&out), 0, "{}", stderr(&out));
            fs::read(dir.path().join("trace.csv")).unwrap()
        })
        .collect();
    assert_eq!(traces[0], traces[1]);
}

#[test]
fn divergence_exits_3_and_keeps_the_trace() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "synthesize",
        scenario("illustrative").to_str().unwrap(),
        "--eta",
        "1e9",
        "--iterations",
        "50",
        "--output-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(dir.path().join("trace.csv").exists());
}

#[test]
fn evaluate_rejects_a_policy_for_another_model() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "synthesize",
        scenario("illustrative").to_str().unwrap(),
        "--iterations",
        "0",
        "--output-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let policy = dir.path().join("policy.txt");
    let out = run(&["evaluate", scenario("gridworld").to_str().unwrap(), "--policy", policy.to_str().unwrap()]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
}

#[test]
fn evaluate_round_trips_a_written_policy() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "synthesize",
        scenario("illustrative").to_str().unwrap(),
        "--iterations",
        "20",
        "--output-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let summary = RunSummary::parse(&fs::read_to_string(dir.path().join("summary.txt")).unwrap()).unwrap();
    let policy = dir.path().join("policy.txt");
    let out = run(&["evaluate", scenario("illustrative").to_str().unwrap(), "--policy", policy.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert_eq!(field(&stdout(&out), "entropy"), summary.entropy);
    assert_eq!(field(&stdout(&out), "expected_cost"), summary.expected_cost);
}

#[test]
fn evaluate_gridworld_no_masking_baseline() {
    let out = run(&["evaluate", scenario("gridworld").to_str().unwrap(), "--baseline", "no-mask"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    assert!((field(&text, "entropy") - 0.168).abs() <= 0.05, "{text}");
    assert!(field(&text, "expected_cost").abs() < 1e-6);
    assert!(text.contains("entropy_mode = \"sampled\""));
}

#[test]
fn evaluate_without_sensors_gives_the_prior_entropy() {
    let dir = tempfile::tempdir().unwrap();
    let text = TINY
        .replace("[[sensors]]\nname = \"X\"\ncoverage = [\"b\"]\ndetection_prob = 0.9\n", "")
        .replace("[[mask_actions]]\nname = \"X\"\nmasks = [\"X\"]\n", "")
        .replace("base = { X = 5, N = 0 }", "base = { N = 0 }");
    let path = write_scenario(dir.path(), &text);
    let out = run(&["evaluate", path.to_str().unwrap(), "--baseline", "no-mask"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!((field(&stdout(&out), "entropy") - 1.0).abs() < 1e-9, "{}", stdout(&out));
}

#[test]
fn gradcheck_passes_on_the_illustrative_example() {
    let out = run(&["gradcheck", scenario("illustrative").to_str().unwrap(), "--probes", "20"]);
    assert_eq!(code(&out), 0, "{}{}", stdout(&out), stderr(&out));
    assert_eq!(stdout(&out).matches(" ok").count(), 4);
}

#[test]
fn gradcheck_passes_on_a_small_model() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_scenario(dir.path(), TINY);
    let out = run(&["gradcheck", path.to_str().unwrap(), "--probes", "10", "--seed", "5"]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
}

#[test]
fn gradcheck_with_one_configuration() {
    let dir = tempfile::tempdir().unwrap();
    let text = TINY
        .replace("[[mask_actions]]\nname = \"X\"\nmasks = [\"X\"]\n", "")
        .replace("base = { X = 5, N = 0 }", "base = { N = 0 }");
    let path = write_scenario(dir.path(), &text);
    let out = run(&["gradcheck", path.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
}

#[test]
fn enumerate_check_passes() {
    let out = run(&["enumerate-check", scenario("illustrative").to_str().unwrap(), "--seed", "4"]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
}

#[test]
fn enumerate_check_respects_the_cap() {
    let out = run(&["enumerate-check", scenario("gridworld").to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("cap"), "{}", stderr(&out));
}
