use ccrl_core::env::{SceneConfig, TaskKind};
use ccrl_core::numeric::{Mlp, NetworkSpec};
use ccrl_core::policy::{PolicyTree, ACTION_DIM};
use ccrl_core::ppo::*;
use ccrl_core::skills::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const TINY_GRAPH: &str = r#"
hidden = [5]

[[skill]]
id = "walk"
task = "walk"

[[skill]]
id = "stand"
task = "stand"

[[skill]]
id = "reach-easy"
task = "reach-easy"
parents = ["walk", "stand"]

[[skill]]
id = "door-easy"
task = "door-easy"
parents = ["walk"]

[[skill]]
id = "door-hard"
task = "door-hard"
parents = ["reach-easy", "door-easy"]
"#;

fn tiny_graph() -> SkillGraph {
    SkillGraph::parse(TINY_GRAPH).unwrap()
}

fn stub_library(dir: &std::path::Path, g: &SkillGraph, upto: &str) -> SkillLibrary {
    let lib = SkillLibrary::open(dir).unwrap();
    for (i, id) in g.ancestors(upto).unwrap().iter().enumerate() {
        let tree = assemble_policy(g, id, &lib, Init::Fresh(100 + i as u64)).unwrap();
        let decl = g.get(id).unwrap();
        let record = SkillRecord::from_slots(Manifest::for_skill(decl, g.hidden_for(decl), "stub"), &top_slots(&tree));
        lib.save(&record, false).unwrap();
    }
    lib
}

fn critic_for(tree: &PolicyTree, seed: u64) -> Critic {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Critic {
        mlp: Mlp::init(NetworkSpec::new(tree.input_dim(), &[6], 1), &mut rng, 1.0).unwrap(),
    }
}

/// Collects a small batch and perturbs the behavior log-probs so that the
/// ratios spread over both sides of the clip range.
fn small_batch(tree: &PolicyTree, critic: &Critic, task: TaskKind) -> RolloutBatch {
    let mut c = Collector::new(3, task, &SceneConfig::default(), 11, 12).unwrap();
    let (mut b, _) = c.collect(tree, critic, 8, 0.05, 0.99).unwrap();
    b.finish(0.99, 0.95).unwrap();
    for (i, lp) in b.log_probs.iter_mut().enumerate() {
        *lp += [0.05, -0.07, 0.3, -0.4, 0.0, 0.12][i % 6];
    }
    b
}

fn total_loss(batch: &RolloutBatch, idx: &[usize], tree: &PolicyTree, critic: &Critic, coef: &LossCoefficients) -> f64 {
    ppo_loss(batch, idx, tree, critic, coef, None, &mut LossScratch::default()).unwrap().total
}

fn check_loss_gradients(tree: PolicyTree, task: TaskKind, tol: f64) {
    let mut tree = tree;
    let mut critic = critic_for(&tree, 5);
    let batch = small_batch(&tree, &critic, task);
    let idx: Vec<usize> = (0..batch.len()).collect();
    let coef = LossCoefficients {
        clip: 0.2,
        c1: 1.0,
        c2: 0.01,
        c3: 0.5,
        c4: 0.3,
    };
    let mut grads = tree.grads();
    let mut cgrad = vec![0.0; critic.mlp.param_count()];
    ppo_loss(
        &batch,
        &idx,
        &tree,
        &critic,
        &coef,
        Some(LossGrads {
            policy: &mut grads,
            critic: &mut cgrad,
        }),
        &mut LossScratch::default(),
    )
    .unwrap();

    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-3);
    let slots: Vec<usize> = tree.trainable_slots().collect();
    for &s in &slots {
        let n = tree.slots()[s].mlp.param_count();
        for p in (0..n).step_by(3) {
            let orig = tree.slots()[s].mlp.store().params()[p];
            tree.slots_mut()[s].mlp.store_mut().params_mut()[p] = orig + h;
            let up = total_loss(&batch, &idx, &tree, &critic, &coef);
            tree.slots_mut()[s].mlp.store_mut().params_mut()[p] = orig - h;
            let down = total_loss(&batch, &idx, &tree, &critic, &coef);
            tree.slots_mut()[s].mlp.store_mut().params_mut()[p] = orig;
            let e = rel(grads.params[s][p], (up - down) / (2.0 * h));
            assert!(e < tol, "slot {s} param {p}: analytic {} numeric {}", grads.params[s][p], (up - down) / (2.0 * h));
            worst = worst.max(e);
            checked += 1;
        }
        for d in 0..tree.slots()[s].log_std.len() {
            let orig = tree.slots()[s].log_std[d];
            tree.slots_mut()[s].log_std[d] = orig + h;
            let up = total_loss(&batch, &idx, &tree, &critic, &coef);
            tree.slots_mut()[s].log_std[d] = orig - h;
            let down = total_loss(&batch, &idx, &tree, &critic, &coef);
            tree.slots_mut()[s].log_std[d] = orig;
            let e = rel(grads.log_std[s][d], (up - down) / (2.0 * h));
            assert!(e < tol, "slot {s} log_std {d}");
            checked += 1;
        }
    }
    for p in 0..critic.mlp.param_count() {
        let orig = critic.mlp.store().params()[p];
        critic.mlp.store_mut().params_mut()[p] = orig + h;
        let up = total_loss(&batch, &idx, &tree, &critic, &coef);
        critic.mlp.store_mut().params_mut()[p] = orig - h;
        let down = total_loss(&batch, &idx, &tree, &critic, &coef);
        critic.mlp.store_mut().params_mut()[p] = orig;
        assert!(rel(cgrad[p], (up - down) / (2.0 * h)) < tol, "critic param {p}");
        checked += 1;
    }
    assert!(checked > 20);
    assert!(worst < tol);
}

#[test]
fn loss_gradient_matches_finite_differences_on_two_level_composite() {
    let g = tiny_graph();
    let dir = tempfile::tempdir().unwrap();
    let lib = stub_library(dir.path(), &g, "door-hard");
    let tree = assemble_policy(&g, "door-hard", &lib, Init::Fresh(3)).unwrap();
    check_loss_gradients(tree, TaskKind::DoorHard, 1e-3);
}

#[test]
fn loss_gradient_matches_finite_differences_all_trainable() {
    let g = tiny_graph();
    let tree = assemble_scratch(&g, "reach-easy", 4).unwrap();
    check_loss_gradients(tree, TaskKind::ReachEasy, 1e-3);
}

#[test]
fn loss_gradient_matches_finite_differences_flat_policy() {
    let g = tiny_graph();
    let tree = assemble_flat(&g, "walk", &[5], 6).unwrap();
    check_loss_gradients(tree, TaskKind::Walk, 1e-3);
}

#[test]
fn residual_mean_penalty_cancels_opposite_signs() {
    let v = [0.4, -0.2, 0.1, 0.3];
    let neg: Vec<f64> = v.iter().map(|x| -x).collect();
    let means: Vec<&[f64]> = (0..10).map(|i| if i % 2 == 0 { &v[..] } else { &neg[..] }).collect();
    let (_, l_rm) = residual_penalties(vec![0.3; 10], means.iter().copied());
    assert!(l_rm.abs() < 1e-15);
    let per_step: f64 = means.iter().map(|m| m.iter().map(|x| x.abs()).sum::<f64>()).sum::<f64>() / 10.0;
    assert!(per_step > 0.9);
}

#[test]
fn residual_mean_penalty_of_constant_mean() {
    let m = [0.2, -0.1];
    let (_, l_rm) = residual_penalties([0.0], [&m[..], &m[..], &m[..]]);
    assert!((l_rm - 0.3).abs() < 1e-15);
}

#[test]
fn zero_residual_weights_give_zero_weight_penalty() {
    let (l_rw, _) = residual_penalties([0.0; 7], std::iter::empty());
    assert_eq!(l_rw, 0.0);
}

fn reach_setup(dir: &std::path::Path) -> (PolicyTree, Critic, RolloutBatch) {
    let g = tiny_graph();
    let lib = stub_library(dir, &g, "reach-easy");
    let tree = assemble_policy(&g, "reach-easy", &lib, Init::Fresh(9)).unwrap();
    let critic = critic_for(&tree, 8);
    let mut c = Collector::new(4, TaskKind::ReachEasy, &SceneConfig::default(), 21, 22).unwrap();
    let (mut b, _) = c.collect(&tree, &critic, 16, 0.05, 0.99).unwrap();
    b.finish(0.99, 0.95).unwrap();
    (tree, critic, b)
}

#[test]
fn unchanged_policy_has_unit_ratio_and_mean_advantage_clip_term() {
    let dir = tempfile::tempdir().unwrap();
    let (tree, critic, b) = reach_setup(dir.path());
    let idx: Vec<usize> = (0..b.len()).step_by(3).collect();
    let rep = ppo_loss(&b, &idx, &tree, &critic, &LossCoefficients::default(), None, &mut LossScratch::default()).unwrap();
    let mean_adv = idx.iter().map(|&i| b.advantages[i]).sum::<f64>() / idx.len() as f64;
    assert!((rep.clip - mean_adv).abs() < 1e-12);
    assert!(rep.approx_kl.abs() < 1e-12);
    assert_eq!(rep.clip_frac, 0.0);
}

#[test]
fn clipped_ratio_uses_clip_bound() {
    let dir = tempfile::tempdir().unwrap();
    let (tree, critic, mut b) = reach_setup(dir.path());
    b.log_probs[0] -= 1.5f64.ln();
    b.advantages[0] = 1.0;
    let rep = ppo_loss(&b, &[0], &tree, &critic, &LossCoefficients::default(), None, &mut LossScratch::default()).unwrap();
    assert!((rep.clip - 1.2).abs() < 1e-9, "{}", rep.clip);
    assert_eq!(rep.clip_frac, 1.0);
}

#[test]
fn non_finite_ratio_skips_minibatch() {
    let dir = tempfile::tempdir().unwrap();
    let (tree, critic, mut b) = reach_setup(dir.path());
    b.log_probs[1] = -1e6;
    let rep = ppo_loss(&b, &[0, 1, 2], &tree, &critic, &LossCoefficients::default(), None, &mut LossScratch::default()).unwrap();
    assert!(rep.skipped);
}

#[test]
fn zero_penalty_coefficients_give_the_standard_ppo_loss() {
    let dir = tempfile::tempdir().unwrap();
    let (tree, critic, b) = reach_setup(dir.path());
    let idx: Vec<usize> = (0..b.len()).collect();
    let coef = LossCoefficients {
        c3: 0.0,
        c4: 0.0,
        ..LossCoefficients::default()
    };
    let rep = ppo_loss(&b, &idx, &tree, &critic, &coef, None, &mut LossScratch::default()).unwrap();
    let standard = -rep.clip + coef.c1 * rep.value - coef.c2 * rep.entropy;
    assert_eq!(rep.total.to_bits(), standard.to_bits());
    assert!(rep.l_rw > 0.0 && rep.l_rm > 0.0);
}

#[test]
fn batch_penalties_match_loss_penalties_on_the_full_batch() {
    let dir = tempfile::tempdir().unwrap();
    let (tree, critic, b) = reach_setup(dir.path());
    let idx: Vec<usize> = (0..b.len()).collect();
    let rep = ppo_loss(&b, &idx, &tree, &critic, &LossCoefficients::default(), None, &mut LossScratch::default()).unwrap();
    let (l_rw, l_rm) = batch_penalties(&b);
    assert!((rep.l_rw - l_rw).abs() < 1e-12);
    assert!((rep.l_rm - l_rm).abs() < 1e-12);
}

#[test]
fn scripted_reach_controller_always_succeeds() {
    let rep = evaluate_controller(&mut ScriptedReach, TaskKind::ReachEasy, &SceneConfig::default(), None, 20, 3, None).unwrap();
    assert_eq!(rep.success_rate, 1.0);
}

#[test]
fn random_policy_rarely_opens_the_door_from_afar() {
    let g = tiny_graph();
    let tree = assemble_flat(&g, "door-hard", &[5], 1).unwrap();
    let critic = critic_for(&tree, 2);
    let mut c = Collector::new(8, TaskKind::DoorHard, &SceneConfig::default(), 40, 41).unwrap();
    let mut episodes = 0;
    let mut successes = 0;
    for _ in 0..4 {
        let (_, s) = c.collect(&tree, &critic, 200, 0.05, 0.99).unwrap();
        episodes += s.episodes;
        successes += s.successes;
    }
    assert!(episodes >= 8);
    assert!((successes as f64) / (episodes as f64) <= 0.15, "{successes}/{episodes}");
}

#[test]
fn evaluation_is_reproducible() {
    let g = tiny_graph();
    let tree = assemble_flat(&g, "walk", &[5], 2).unwrap();
    let a = evaluate(&tree, TaskKind::Walk, &SceneConfig::default(), 3, 9).unwrap();
    let b = evaluate(&tree, TaskKind::Walk, &SceneConfig::default(), 3, 9).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.records.len(), 3);
}

#[test]
fn zero_action_effort_is_the_lag_floor() {
    let rep = evaluate_controller(&mut ZeroController, TaskKind::Walk, &SceneConfig::default(), None, 2, 0, None).unwrap();
    assert!(rep.mean_step_effort < 1e-12);
}

fn tiny_cfg(seed: u64) -> PpoConfig {
    PpoConfig {
        n_envs: 4,
        horizon: 32,
        minibatch: 64,
        epochs: 2,
        total_env_steps: 4 * 32 * 3,
        eval_every: 2,
        eval_episodes: 2,
        critic_hidden: vec![8],
        seed,
        ..PpoConfig::default()
    }
}

#[test]
fn training_is_deterministic_and_keeps_parents_frozen() {
    let g = tiny_graph();
    let dir = tempfile::tempdir().unwrap();
    let lib = stub_library(dir.path(), &g, "reach-easy");
    let before: Vec<_> = ["walk", "stand"].iter().map(|id| lib.load(id).unwrap().checksums()).collect();
    let scene = SceneConfig::default();
    let run = || {
        let mut out = Vec::new();
        let cfg = tiny_cfg(7);
        let run = SkillRun::new(&g, "reach-easy", Method::Ccrl, Some(&lib), &scene, &cfg);
        let opts = TrainOptions {
            sink: Some(&mut out),
            ..TrainOptions::default()
        };
        let (rec, tp) = train_skill(&run, opts).unwrap();
        (out, rec, tp.metrics.len())
    };
    let (a, ra, n) = run();
    let (b, rb, _) = run();
    assert_eq!(a, b);
    assert_eq!(ra, rb);
    assert_eq!(n, 3);
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 3);
    let after: Vec<_> = ["walk", "stand"].iter().map(|id| lib.load(id).unwrap().checksums()).collect();
    assert_eq!(before, after);
    assert!(!lib.contains("reach-easy"));
}

#[test]
fn training_saves_the_record() {
    let g = tiny_graph();
    let dir = tempfile::tempdir().unwrap();
    let lib = stub_library(dir.path(), &g, "walk");
    let (scene, cfg) = (SceneConfig::default(), tiny_cfg(1));
    let run = SkillRun {
        save: true,
        overwrite: true,
        ..SkillRun::new(&g, "walk", Method::Ccrl, Some(&lib), &scene, &cfg)
    };
    train_skill(&run, TrainOptions::default()).unwrap();
    let rec = lib.load("walk").unwrap();
    assert_eq!(rec.manifest.iterations, 3);
    assert_eq!(rec.manifest.seeds, [1]);
    assert_eq!(rec.manifest.config_hash.len(), 64);
}

#[test]
fn config_hash_ignores_the_seed_only() {
    let g = tiny_graph();
    let scene = SceneConfig::default();
    let (a, b) = (tiny_cfg(1), tiny_cfg(2));
    let c = PpoConfig { lr: 1e-3, ..tiny_cfg(1) };
    let h = |cfg, m| SkillRun::new(&g, "walk", m, None, &scene, cfg).config_hash();
    assert_eq!(h(&a, Method::Vanilla), h(&b, Method::Vanilla));
    assert_ne!(h(&a, Method::Vanilla), h(&c, Method::Vanilla));
    assert_ne!(h(&a, Method::Vanilla), h(&a, Method::BigPolicy));
}

#[test]
fn checkpoints_resume_the_run() {
    let g = tiny_graph();
    let dir = tempfile::tempdir().unwrap();
    let lib = stub_library(dir.path(), &g, "reach-easy");
    let scene = SceneConfig::default();
    let cp = CheckpointPolicy {
        dir: dir.path().join("cp"),
        every: 1,
        resume: true,
    };
    let full = tiny_cfg(3);
    let run = SkillRun::new(&g, "reach-easy", Method::Ccrl, Some(&lib), &scene, &full);
    let mut failing = FailAfter { lines: 2 };
    let interrupted = train_skill(
        &run,
        TrainOptions {
            sink: Some(&mut failing),
            checkpoint: Some(cp.clone()),
            ..TrainOptions::default()
        },
    );
    assert!(interrupted.is_err());
    assert!(checkpoint_exists(&cp.dir));
    let opts = || TrainOptions {
        checkpoint: Some(cp.clone()),
        ..TrainOptions::default()
    };
    let mut tree = build_tree(&g, "reach-easy", Method::Ccrl, Some(&lib), 0).unwrap();
    let (meta, _) = load_checkpoint(&cp.dir, &mut tree).unwrap();
    assert_eq!(meta.iteration, 2);
    assert_eq!(meta.env_steps, 2 * 4 * 32);
    let fresh = build_tree(&g, "reach-easy", Method::Ccrl, Some(&lib), 0).unwrap();
    let top = tree.trainable_slots().next().unwrap();
    assert_ne!(tree.slots()[top].checksum(), fresh.slots()[top].checksum());
    let resumed = train_skill(&run, opts()).unwrap();
    assert_eq!(resumed.1.iterations, 3);
    assert_eq!(resumed.1.metrics.len(), 1);
    assert_eq!(resumed.1.metrics[0].iter, 3);
    assert_eq!(resumed.1.env_steps, full.total_env_steps);
    let other = train_skill(&SkillRun::new(&g, "reach-easy", Method::Vanilla, None, &scene, &full), opts());
    assert!(other.is_err());
}

#[test]
fn baselines_build_expected_architectures() {
    let g = tiny_graph();
    let dir = tempfile::tempdir().unwrap();
    let lib = stub_library(dir.path(), &g, "door-hard");
    let ccrl = build_tree(&g, "door-hard", Method::Ccrl, Some(&lib), 0).unwrap();
    let big = build_tree(&g, "door-hard", Method::BigPolicy, None, 0).unwrap();
    let flat = build_tree(&g, "door-hard", Method::Vanilla, None, 0).unwrap();
    assert_eq!(big.learnable_params(), ccrl.total_params());
    assert!(ccrl.learnable_params() < ccrl.total_params());
    assert!(!flat.is_composite());
    assert!(build_tree(&g, "door-hard", Method::Ccrl, None, 0).is_err());
}

#[test]
fn config_validation_names_bad_fields() {
    let cfg = PpoConfig {
        clip: 1.5,
        gamma: 1.0,
        c3: Some(-1.0),
        ..PpoConfig::default()
    };
    let msg = cfg.validate().unwrap_err().to_string();
    assert!(msg.contains("clip") && msg.contains("gamma") && msg.contains("c3"), "{msg}");
    assert!(PpoConfig::default().validate().is_ok());
}

#[test]
fn advantages_are_normalized_per_batch() {
    let dir = tempfile::tempdir().unwrap();
    let (_, _, b) = reach_setup(dir.path());
    let n = b.advantages.len() as f64;
    let mean = b.advantages.iter().sum::<f64>() / n;
    let var = b.advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    assert!(mean.abs() < 1e-10);
    assert!((var - 1.0).abs() < 1e-6);
    assert_eq!(b.actions.len(), b.len() * ACTION_DIM);
}

struct FailAfter {
    lines: usize,
}

impl std::io::Write for FailAfter {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        if self.lines == 0 {
            return Err(std::io::Error::other("interrupted"));
        }
        self.lines -= buf.iter().filter(|b| **b == b'\n').count();
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}
