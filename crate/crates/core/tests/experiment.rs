use std::fs;
use std::path::Path;

use ccrl_core::env::{GridSpec, TaskKind};
use ccrl_core::experiment::*;
use ccrl_core::ppo::{Method, ScriptedReach, ZeroController};
use ccrl_core::Error;

const GRAPH: &str = r#"
hidden = [5]

[[skill]]
id = "walk"
task = "walk"

[[skill]]
id = "turn-left"
task = "turn-left"

[[skill]]
id = "turn-right"
task = "turn-right"

[[skill]]
id = "stand"
task = "stand"

[[skill]]
id = "reach-easy"
task = "reach-easy"
parents = ["walk", "stand", "turn-left", "turn-right"]
parent_goal_dims = [0, 0, 0, 0]
goal_range = 3.0

[[skill]]
id = "door-easy"
task = "door-easy"
parents = ["walk"]
parent_goal_dims = [0]

[[skill]]
id = "door-hard"
task = "door-hard"
parents = ["reach-easy", "door-easy"]
parent_goal_dims = [2, 0]
"#;

fn experiment(dir: &Path, seeds: &str) -> Experiment {
    fs::write(dir.join("graph.toml"), GRAPH).unwrap();
    let text = format!(
        r#"
        graph = "graph.toml"
        seeds = {seeds}
        eval_episodes = 3
        checkpoint_every = 1
        [ppo]
        n_envs = 4
        horizon = 32
        minibatch = 64
        epochs = 1
        total_env_steps = 256
        eval_every = 0
        eval_episodes = 2
        critic_hidden = [8]
        "#
    );
    let cfg = ExperimentConfig::parse(&text).unwrap().resolved(dir);
    Experiment::open(cfg).unwrap()
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    fs::read(p).unwrap()
}

#[test]
fn train_all_follows_topological_order_and_promotes() {
    let dir = tempfile::tempdir().unwrap();
    let exp = experiment(dir.path(), "[0]");
    let mut seen = Vec::new();
    let runs = exp.train_all(Method::Ccrl, 0, false, |s| seen.push(s.skill.clone())).unwrap();
    assert_eq!(seen, exp.graph.topological_order().unwrap());
    assert_eq!(runs.len(), 7);
    for id in &seen {
        assert!(exp.library.contains(id), "{id}");
        assert!(exp.run_exists(Method::Ccrl, id, 0));
    }
    let metrics = fs::read_to_string(exp.run_dir(Method::Ccrl, "door-hard", 0).join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 2);
    assert!(!exp.run_dir(Method::Ccrl, "door-hard", 0).join("checkpoint").exists());
}

#[test]
fn run_artifacts_are_byte_identical_across_repeats() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (ea, eb) = (experiment(a.path(), "[7]"), experiment(b.path(), "[7]"));
    let sa = ea.train("walk", Method::Ccrl, 7, RunOptions::default()).unwrap();
    let sb = eb.train("walk", Method::Ccrl, 7, RunOptions::default()).unwrap();
    assert_eq!(sa, sb);
    for f in ["metrics.jsonl", "summary.json", "policy/checkpoint.toml", "policy/critic.ccrl"] {
        assert_eq!(read(ea.run_dir(Method::Ccrl, "walk", 7).join(f)), read(eb.run_dir(Method::Ccrl, "walk", 7).join(f)), "{f}");
    }
    let text = fs::read_to_string(ea.run_dir(Method::Ccrl, "walk", 7).join("metrics.jsonl")).unwrap();
    assert!(text.lines().all(|l| l.contains(&sa.config_hash) && l.contains("\"seed\":7")));
}

#[test]
fn unknown_skill_names_the_valid_ids() {
    let dir = tempfile::tempdir().unwrap();
    let exp = experiment(dir.path(), "[0]");
    let err = exp.train("fly", Method::Vanilla, 0, RunOptions::default()).unwrap_err();
    match err {
        Error::UnknownSkill { id, known } => {
            assert_eq!(id, "fly");
            assert!(known.contains(&"walk".to_string()));
        }
        e => panic!("unexpected error {e}"),
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::parse("seeds = [0]\n[tasks]\nwalk = \"stand\"").unwrap().resolved(dir.path());
    assert!(matches!(Experiment::open(cfg), Err(Error::Config(_))));
    let cfg = ExperimentConfig::parse("seeds = [0]\n[skill_ppo.fly]\nlr = 1.0").unwrap().resolved(dir.path());
    assert!(matches!(Experiment::open(cfg), Err(Error::UnknownSkill { .. })));
    assert!(ExperimentConfig::parse("baseline = \"ccrl\"").is_err());
    assert!(ExperimentConfig::parse("methods = [\"clever\"]").is_err());
}

#[test]
fn interrupted_runs_resume_from_their_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let exp = experiment(dir.path(), "[0]");
    let run_dir = exp.run_dir(Method::Vanilla, "walk", 0);
    exp.train("walk", Method::Vanilla, 0, RunOptions::default()).unwrap();
    // Turn the finished policy into a checkpoint taken after iteration 1.
    fs::rename(run_dir.join("policy"), run_dir.join("checkpoint")).unwrap();
    let meta_path = run_dir.join("checkpoint/checkpoint.toml");
    let meta = fs::read_to_string(&meta_path).unwrap().replace("iteration = 2", "iteration = 1").replace("env_steps = 256", "env_steps = 128");
    fs::write(&meta_path, meta).unwrap();
    fs::remove_file(run_dir.join("summary.json")).unwrap();

    let resumed = exp.train("walk", Method::Vanilla, 0, RunOptions { resume: true, promote: false }).unwrap();
    assert_eq!((resumed.iterations, resumed.env_steps), (2, 256));
    let text = fs::read_to_string(run_dir.join("metrics.jsonl")).unwrap();
    let iters: Vec<u64> = text.lines().map(|l| serde_json::from_str::<ccrl_core::ppo::IterationMetrics>(l).unwrap().iter).collect();
    assert_eq!(iters, [1, 2]);
    assert!(!run_dir.join("checkpoint").exists());

    // A checkpoint from a differently configured run is refused.
    exp.train("walk", Method::Vanilla, 0, RunOptions::default()).unwrap();
    fs::rename(run_dir.join("policy"), run_dir.join("checkpoint")).unwrap();
    let mut other = exp.config.clone();
    other.ppo.insert("lr".into(), toml::Value::Float(1e-3));
    let other = Experiment::open(other).unwrap();
    let refused = other.train("walk", Method::Vanilla, 0, RunOptions { resume: true, promote: false });
    assert!(matches!(refused, Err(Error::Config(_))));
}

#[test]
fn compare_pairs_seeds_and_marks_missing_cells() {
    let dir = tempfile::tempdir().unwrap();
    let exp = experiment(dir.path(), "[0, 1, 2]");
    for seed in [0, 1, 2] {
        exp.train("walk", Method::Vanilla, seed, RunOptions::default()).unwrap();
    }
    exp.train("walk", Method::BigPolicy, 1, RunOptions::default()).unwrap();
    let table = compare(&exp, &[TaskKind::Walk], &[Method::Vanilla, Method::BigPolicy, Method::Ccrl]).unwrap();
    let v = table.cell(Method::Vanilla, TaskKind::Walk).unwrap();
    assert_eq!(v.n(), 3);
    assert_eq!(v.seeds, [0, 1, 2]);
    assert_eq!(v.run_ids[2], "vanilla/walk/seed-2");
    assert!(v.mean.is_some() && v.stderr.is_some());
    let big = table.cell(Method::BigPolicy, TaskKind::Walk).unwrap();
    assert_eq!(big.seeds, [1]);
    assert_eq!(big.stderr, Some(0.0));
    assert!(table.cell(Method::Ccrl, TaskKind::Walk).unwrap().mean.is_none());
    assert_eq!(table.missing.len(), 5);
    assert!(table.missing.contains(&"ccrl/walk/seed-0".to_string()));

    let again = compare(&exp, &[TaskKind::Walk], &[Method::Vanilla, Method::BigPolicy, Method::Ccrl]).unwrap();
    assert_eq!(table.to_csv(), again.to_csv());
    assert_eq!(table.to_json().unwrap(), again.to_json().unwrap());
    let csv = table.to_csv();
    assert!(csv.lines().any(|l| l.starts_with("ccrl,walk,walk,,,0,,")), "{csv}");
    assert!(csv.contains(&exp.hash()));
}

#[test]
fn big_policy_matches_the_ccrl_parameter_count() {
    let dir = tempfile::tempdir().unwrap();
    let exp = experiment(dir.path(), "[0]");
    exp.train_all(Method::Ccrl, 0, false, |_| {}).unwrap();
    let s = exp.train("reach-easy", Method::BigPolicy, 0, RunOptions::default()).unwrap();
    let (_, big) = exp.load_policy(Method::BigPolicy, "reach-easy", 0).unwrap();
    let (_, ccrl) = exp.load_policy(Method::Ccrl, "reach-easy", 0).unwrap();
    assert_eq!(big.learnable_params(), ccrl.total_params());
    assert!(s.frozen.is_empty());
}

#[test]
fn heatmaps_cover_the_grid_and_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let exp = experiment(dir.path(), "[0]");
    exp.train_all(Method::Ccrl, 0, false, |_| {}).unwrap();
    let (s, tree) = exp.load_policy(Method::Ccrl, "door-hard", 0).unwrap();
    let meta = ArtifactMeta {
        skill: s.skill.clone(),
        method: "ccrl".into(),
        seed: 0,
        config_hash: s.config_hash.clone(),
    };
    let grid = GridSpec {
        x_min: -2.0,
        x_max: -1.0,
        y_min: -1.0,
        y_max: 1.0,
        nx: 2,
        ny: 2,
    };
    let h = weight_heatmap(&tree, TaskKind::DoorHard, &exp.scene, 1, grid, meta.clone()).unwrap();
    assert_eq!(h.values.len(), 4);
    assert!(h.values.iter().all(|w| (1e-4..=1.0).contains(w)), "{:?}", h.values);
    assert_eq!(h.source, "door-easy");
    let csv = h.to_csv();
    assert!(csv.contains("nx=2") && csv.contains(&s.config_hash));
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 2);
    let again = weight_heatmap(&tree, TaskKind::DoorHard, &exp.scene, 1, grid, meta.clone()).unwrap();
    assert_eq!(csv, again.to_csv());
    assert!(h.mean_where(|p| p.x < -1.5).is_some());
    assert!(h.mean_where(|p| p.x > 0.0).is_none());

    let msg = weight_heatmap(&tree, TaskKind::DoorHard, &exp.scene, 3, grid, meta).unwrap_err().to_string();
    assert!(msg.contains("0 = reach-easy") && msg.contains("2 = residual"), "{msg}");
}

#[test]
fn effort_series_is_deterministic_and_near_zero_at_rest() {
    let scene = ccrl_core::env::SceneConfig::default();
    let meta = ArtifactMeta {
        skill: "none".into(),
        method: "zero".into(),
        seed: 3,
        config_hash: "0".into(),
    };
    let rest = effort_series(&mut ZeroController, TaskKind::ReachEasy, &scene, 2, 3, meta.clone()).unwrap();
    assert!(rest.mean_step_effort < 1e-9, "{}", rest.mean_step_effort);
    assert!(rest.points.iter().all(|p| p.effort < 1e-9 && p.action_change == 0.0));
    let a = effort_series(&mut ScriptedReach, TaskKind::ReachEasy, &scene, 2, 3, meta.clone()).unwrap();
    let b = effort_series(&mut ScriptedReach, TaskKind::ReachEasy, &scene, 2, 3, meta).unwrap();
    assert!(a.mean_step_effort > 1e-3);
    let csv = effort_csv(&[a, rest]);
    assert_eq!(csv, effort_csv(&[b, effort_series(&mut ZeroController, TaskKind::ReachEasy, &scene, 2, 3, rest_meta()).unwrap()]));
    assert!(csv.contains("method,skill,seed,step,effort,action_change,episodes\n"));
}

fn rest_meta() -> ArtifactMeta {
    ArtifactMeta {
        skill: "none".into(),
        method: "zero".into(),
        seed: 3,
        config_hash: "0".into(),
    }
}

#[test]
fn trajectory_dumps_are_reproducible() {
    let targets = trajectory_targets();
    assert!(targets.iter().any(|t| t.x < 0.0) && targets.iter().any(|t| t.x > 0.0));
    let dir = tempfile::tempdir().unwrap();
    let exp = experiment(dir.path(), "[0]");
    exp.train("walk", Method::Ccrl, 0, RunOptions { resume: false, promote: true }).unwrap();
    exp.train("stand", Method::Ccrl, 0, RunOptions { resume: false, promote: true }).unwrap();
    exp.train("turn-left", Method::Ccrl, 0, RunOptions { resume: false, promote: true }).unwrap();
    exp.train("turn-right", Method::Ccrl, 0, RunOptions { resume: false, promote: true }).unwrap();
    exp.train("reach-easy", Method::Ccrl, 0, RunOptions::default()).unwrap();
    let (s, tree) = exp.load_policy(Method::Ccrl, "reach-easy", 0).unwrap();
    let meta = ArtifactMeta {
        skill: s.skill,
        method: "ccrl".into(),
        seed: 5,
        config_hash: s.config_hash,
    };
    let mut a = Vec::new();
    let mut b = Vec::new();
    trajectories(&tree, TaskKind::ReachEasy, &exp.scene, 1, meta.clone(), &mut a).unwrap();
    trajectories(&tree, TaskKind::ReachEasy, &exp.scene, 1, meta, &mut b).unwrap();
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    let lines: Vec<TrajectoryLine> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(matches!(lines[0], TrajectoryLine::Header { episodes: 1, .. }));
    match &lines[1] {
        TrajectoryLine::Step { episode, step, target, weights, .. } => {
            assert_eq!((*episode, *step), (0, 0));
            assert_eq!(*target, Some([targets[0].x, targets[0].y]));
            assert_eq!(weights.len(), 5);
        }
        l => panic!("unexpected line {l:?}"),
    }
    assert!(matches!(lines.last().unwrap(), TrajectoryLine::Step { done: true, .. }));
}

#[test]
fn ablations_produce_their_summaries() {
    let dir = tempfile::tempdir().unwrap();
    let exp = experiment(dir.path(), "[0]");
    for id in ["walk", "stand", "turn-left", "turn-right"] {
        exp.train(id, Method::Ccrl, 0, RunOptions { resume: false, promote: true }).unwrap();
    }
    let before = exp.library.load("walk").unwrap().checksums();
    let r = ablate(&exp, Ablation::RedundantParent, &[0]).unwrap();
    assert!(r.summary["tracking_ratio"].is_finite());
    assert_eq!(r.rows.len(), 2);
    let r = ablate(&exp, Ablation::ClumsyParent, &[0]).unwrap();
    assert!(r.summary.contains_key("success_change"));
    assert!(r.summary["clumsy_weight"] > 0.0);
    assert!(!exp.library.contains("clumsy"));
    let r = ablate(&exp, Ablation::NoPenalty, &[0]).unwrap();
    assert!(r.summary.contains_key("no-penalty_residual_weight"));
    assert!(exp.config.out.join("ablate/no-penalty/report.json").is_file());
    assert_eq!(exp.library.load("walk").unwrap().checksums(), before);
    assert_eq!("clumsy-parent".parse::<Ablation>().unwrap(), Ablation::ClumsyParent);
    assert!("dropout".parse::<Ablation>().is_err());
}
