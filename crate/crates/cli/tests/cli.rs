use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const GRAPH: &str = r#"
hidden = [5]

[[skill]]
id = "walk"
task = "walk"

[[skill]]
id = "stand"
task = "stand"

[[skill]]
id = "door-easy"
task = "door-easy"
parents = ["walk", "stand"]
parent_goal_dims = [0, 0]
"#;

const CONFIG: &str = r#"
graph = "graph.toml"
library = "lib"
out = "out"
methods = ["ccrl", "vanilla"]
seeds = [7]
eval_episodes = 2
[ppo]
n_envs = 4
horizon = 32
minibatch = 64
epochs = 1
total_env_steps = 256
eval_every = 0
eval_episodes = 2
critic_hidden = [8]
"#;

fn setup(dir: &Path) -> std::path::PathBuf {
    fs::write(dir.join("graph.toml"), GRAPH).unwrap();
    let cfg = dir.join("exp.toml");
    fs::write(&cfg, CONFIG).unwrap();
    cfg
}

fn ccrl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ccrl"))
        .args(args)
        .env_remove("CCRL_LIBRARY")
        .output()
        .unwrap()
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).to_string()
}

#[test]
fn validate_graph_prints_the_training_order() {
    let out = ccrl(&["validate-graph"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let order = text(&out.stdout);
    let lines: Vec<&str> = order.lines().collect();
    assert_eq!(lines.len(), 10);
    let pos = |id: &str| lines.iter().position(|l| *l == id).unwrap();
    assert!(pos("walk") < pos("reach-easy") && pos("reach-easy") < pos("door-hard") && pos("door-hard") < pos("interactive-reach"));
}

#[test]
fn invalid_graph_exits_with_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("bad.toml");
    fs::write(&g, "[[skill]]\nid = \"a\"\ntask = \"walk\"\nparents = [\"ghost\"]\n").unwrap();
    let out = ccrl(&["validate-graph", g.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("ghost"));
}

#[test]
fn config_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let c = cfg.to_str().unwrap();
    let out = ccrl(&["--config", c, "train", "--skill", "fly", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(2));
    let err = text(&out.stderr);
    assert!(err.contains("fly") && err.contains("walk") && err.contains("door-easy"), "{err}");

    let missing = dir.path().join("nope.toml");
    let out = ccrl(&["--config", missing.to_str().unwrap(), "compare"]);
    assert_eq!(out.status.code(), Some(2));

    let out = ccrl(&["--config", c, "train"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_eval_compare_and_export() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let c = cfg.to_str().unwrap();
    let out = ccrl(&["--config", c, "train", "--all", "--seed", "7"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    assert_eq!(text(&out.stdout).lines().count(), 3);
    let run = dir.path().join("out/runs/ccrl/walk/seed-7");
    assert!(run.join("metrics.jsonl").is_file() && run.join("summary.json").is_file());
    assert!(dir.path().join("lib/walk/manifest.toml").is_file());

    let out = ccrl(&["--config", c, "train", "--skill", "door-easy", "--baseline", "vanilla", "--seeds", "7,8", "--jobs", "2"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));

    let out = ccrl(&["--config", c, "eval", "--skill", "door-easy", "--baseline", "vanilla", "--seeds", "7,8"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let lines: Vec<serde_json::Value> = text(&out.stdout).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[1]["run_id"], "vanilla/door-easy/seed-8");

    let out = ccrl(&["--config", c, "compare", "--task", "door-easy"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("out/compare/comparison.csv")).unwrap();
    assert!(csv.contains("ccrl,door-easy,door-easy,") && csv.contains("vanilla,door-easy,door-easy,"), "{csv}");
    assert!(dir.path().join("out/compare/comparison.json").is_file());

    let out = ccrl(&["--config", c, "heatmap", "--skill", "door-easy", "--index", "0", "--grid", "-2,-1,2,-1,1,2"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let first = fs::read(dir.path().join("out/heatmap/ccrl-door-easy-w0-seed-7.csv")).unwrap();
    ccrl(&["--config", c, "heatmap", "--skill", "door-easy", "--index", "0", "--grid", "-2,-1,2,-1,1,2"]);
    assert_eq!(first, fs::read(dir.path().join("out/heatmap/ccrl-door-easy-w0-seed-7.csv")).unwrap());
    let out = ccrl(&["--config", c, "heatmap", "--skill", "door-easy", "--index", "9"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("2 = residual"));

    let out = ccrl(&["--config", c, "effort", "--task", "door-easy", "--baseline", "ccrl,vanilla"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("out/effort/door-easy.csv")).unwrap();
    assert!(csv.contains("\nccrl,door-easy,7,0,") && csv.contains("\nvanilla,door-easy,7,0,"));

    let out = ccrl(&["--config", c, "trajectories", "--skill", "door-easy", "--n", "1"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let dump = fs::read_to_string(dir.path().join("out/trajectories/ccrl-door-easy-door-easy-seed-7.jsonl")).unwrap();
    assert!(dump.lines().next().unwrap().contains("\"kind\":\"header\""));
}

#[test]
fn library_env_var_overrides_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let lib = dir.path().join("elsewhere");
    let out = Command::new(env!("CARGO_BIN_EXE_ccrl"))
        .args(["--config", cfg.to_str().unwrap(), "train", "--skill", "walk"])
        .env("CCRL_LIBRARY", &lib)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    assert!(lib.join("walk/manifest.toml").is_file());
    assert!(!dir.path().join("lib/walk").exists());
}

#[test]
fn corrupted_library_is_an_invariant_breach() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let c = cfg.to_str().unwrap();
    for skill in ["walk", "stand"] {
        let out = ccrl(&["--config", c, "train", "--skill", skill]);
        assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    }
    let blob = fs::read_dir(dir.path().join("lib/walk"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|e| e == "ccrl"))
        .unwrap();
    let mut bytes = fs::read(&blob).unwrap();
    let n = bytes.len();
    bytes[n - 12] ^= 0x40;
    fs::write(&blob, bytes).unwrap();
    let out = ccrl(&["--config", c, "train", "--skill", "door-easy"]);
    assert_eq!(out.status.code(), Some(4), "{}", text(&out.stderr));
    assert!(text(&out.stderr).contains("checksum"));
}
