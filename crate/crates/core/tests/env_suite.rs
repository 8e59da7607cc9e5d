use ccrl_core::env::task::{sample_episode, DOOR_HINGE};
use ccrl_core::env::world::{Door, Puck, RobotBody, DOOR_MAX};
use ccrl_core::env::{Env, SceneConfig, TaskConfig, TaskKind, VectorEnv, Vec2, World};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_actions(seed: u64, steps: usize) -> Vec<[f64; 4]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..steps)
        .map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0)))
        .collect()
}

fn rollout(task: TaskKind, seed: u64, actions: &[[f64; 4]]) -> Vec<(Vec<f64>, f64, bool)> {
    let scene = SceneConfig::default();
    let mut env = Env::new(task, &scene, seed).unwrap();
    let mut out = Vec::new();
    for a in actions {
        let o = env.step(a).unwrap();
        let mut obs = env.features().as_slice().to_vec();
        obs.extend(env.goal());
        out.push((obs, o.reward, o.done));
        if o.done {
            env.reset();
        }
    }
    out
}

#[test]
fn same_seed_same_trajectory() {
    for task in TaskKind::ALL {
        let actions = random_actions(3, 300);
        let a = rollout(task, 11, &actions);
        let b = rollout(task, 11, &actions);
        assert_eq!(a, b, "{task}");
    }
}

#[test]
fn same_seed_same_initial_observation() {
    let scene = SceneConfig::default();
    for task in TaskKind::ALL {
        let a = Env::new(task, &scene, 5).unwrap();
        let b = Env::new(task, &scene, 5).unwrap();
        assert_eq!(a.features(), b.features());
        assert_eq!(a.goal(), b.goal());
        assert_eq!(a.goal().len(), task.goal_dim());
    }
}

#[test]
fn single_vector_env_matches_scalar() {
    let scene = SceneConfig::default();
    let actions = random_actions(9, 500);
    let mut scalar = Env::new(TaskKind::DoorHard, &scene, 40).unwrap();
    let mut vec = VectorEnv::new(1, TaskKind::DoorHard, &scene, 40).unwrap();
    for a in &actions {
        let s = scalar.step(a).unwrap();
        let v = vec.step(a).unwrap().pop().unwrap();
        assert_eq!(s.reward, v.reward);
        assert_eq!(s.done, v.done);
        if s.done {
            scalar.reset();
        }
        assert_eq!(scalar.features(), vec.features(0));
    }
}

#[test]
fn permuted_step_order_is_invisible() {
    let scene = SceneConfig::default();
    let n = 8;
    let mut a = VectorEnv::new(n, TaskKind::Push, &scene, 100).unwrap();
    let mut b = VectorEnv::new(n, TaskKind::Push, &scene, 100).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let order: Vec<usize> = vec![5, 2, 7, 0, 3, 6, 1, 4];
    for _ in 0..200 {
        let acts: Vec<f64> = (0..n * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ra = a.step(&acts).unwrap();
        let rb = b.step_in_order(&acts, &order).unwrap();
        for i in 0..n {
            assert_eq!(ra[i].reward, rb[i].reward);
            assert_eq!(a.features(i), b.features(i));
        }
    }
    assert!(a.step_in_order(&vec![0.0; n * 4], &[0, 0, 1, 2, 3, 4, 5, 6]).is_err());
}

#[test]
fn random_policy_rarely_reaches() {
    let scene = SceneConfig::default();
    let n = 64;
    let mut venv = VectorEnv::new(n, TaskKind::ReachEasy, &scene, 1000).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut finished = vec![None; n];
    for _ in 0..venv.envs()[0].max_steps() {
        let acts: Vec<f64> = (0..n * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let out = venv.step(&acts).unwrap();
        for (i, o) in out.iter().enumerate() {
            if o.done && finished[i].is_none() {
                finished[i] = Some(o.success);
            }
        }
    }
    let successes = finished.iter().filter(|s| **s == Some(true)).count();
    assert!(successes as f64 / n as f64 <= 0.15, "random reach success {successes}/{n}");
}

#[test]
fn zero_command_energy_never_grows() {
    let scene = SceneConfig::default();
    for task in [TaskKind::Push, TaskKind::DoorHard, TaskKind::Walk] {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = TaskConfig::default_for(task);
        let (mut world, _) = sample_episode(task, &cfg, &scene, None, &mut rng);
        // Give every body some motion, then let it coast with zero commands.
        world.robot.actuator = [0.8, 0.5, 0.2, 0.0];
        if let Some(p) = &mut world.puck {
            p.vel = Vec2::new(0.6, -0.3);
        }
        if let Some(d) = &mut world.door {
            d.angle = 0.7;
            d.angle_rate = 1.0;
        }
        let mut e = world.mechanical_energy();
        for _ in 0..200 {
            world.step(&[0.0; 4]);
            let next = world.mechanical_energy();
            assert!(next <= e + 1e-12, "{task}: {next} > {e}");
            e = next;
        }
    }
}

#[test]
fn driving_into_door_opens_it() {
    let mut w = World::empty(RobotBody::at(Vec2::new(-0.6, 0.1), 0.0), 1.0);
    w.door = Some(Door::closed(DOOR_HINGE));
    let mut max_q: f64 = 0.0;
    for _ in 0..60 {
        w.step(&[1.0, 0.0, 0.0, 0.0]);
        max_q = max_q.max(w.door.as_ref().unwrap().angle);
    }
    assert!(max_q > 0.3);
    for _ in 0..400 {
        w.step(&[0.0, 0.0, 0.0, 0.0]);
        w.robot.pos = Vec2::new(-2.0, 0.0);
    }
    assert!(w.door.as_ref().unwrap().angle < max_q);
}

#[test]
fn puck_moves_when_pushed() {
    let mut w = World::empty(RobotBody::at(Vec2::ZERO, 0.0), 1.0);
    w.puck = Some(Puck {
        pos: Vec2::new(0.5, 0.0),
        vel: Vec2::ZERO,
    });
    for _ in 0..40 {
        w.step(&[1.0, 0.0, 0.0, 0.0]);
    }
    assert!(w.puck.as_ref().unwrap().pos.x > 0.8);
}

#[test]
fn non_finite_action_aborts() {
    let scene = SceneConfig::default();
    let mut env = Env::new(TaskKind::Walk, &scene, 0).unwrap();
    let o = env.step(&[f64::NAN, 0.0, 0.0, 0.0]).unwrap();
    assert!(o.done && o.aborted && !o.success);
    assert!(env.step(&[0.0; 4]).is_err());
    env.reset();
    assert!(env.step(&[0.0; 3]).is_err());
}

#[test]
fn timeout_returns_terminal_observation() {
    let scene = SceneConfig::default();
    let mut env = Env::new(TaskKind::Stand, &scene, 3).unwrap();
    let mut last = None;
    for _ in 0..env.max_steps() {
        let o = env.step(&[0.0; 4]).unwrap();
        if o.done {
            last = Some(o);
            break;
        }
    }
    let o = last.expect("stand episode ends");
    if !o.fell {
        assert!(o.timeout && o.terminal.is_some());
        assert_eq!(o.summary.unwrap().steps, env.max_steps());
    }
}

#[test]
fn standing_still_succeeds_at_timeout() {
    // Pulses push the robot around; holding a zero command should still keep
    // drift well inside the tolerance on most seeds.
    let scene = SceneConfig::default();
    let mut ok = 0;
    for seed in 0..10 {
        let mut env = Env::new(TaskKind::Stand, &scene, seed).unwrap();
        loop {
            let o = env.step(&[0.0; 4]).unwrap();
            if o.done {
                ok += usize::from(o.success);
                break;
            }
        }
    }
    assert!(ok >= 5, "{ok}/10");
}

fn check_step_invariants(task: TaskKind, seed: u64, actions: &[[f64; 4]]) -> Result<(), TestCaseError> {
    let scene = SceneConfig::default();
    let mut env = Env::new(task, &scene, seed).unwrap();
    for a in actions {
        let o = env.step(a).unwrap();
        let t = &o.breakdown.terms;
        for k in [0, 1] {
            prop_assert!(t[k] > 0.0 && t[k] <= 1.0);
        }
        for k in [8, 9] {
            prop_assert!(t[k] >= 0.0 && t[k] <= 1.0);
        }
        for k in 2..7 {
            prop_assert!(t[k] >= 0.0);
        }
        let w = env.world();
        prop_assert!(w.static_penetration() <= 1e-6, "penetration {}", w.static_penetration());
        if let Some(d) = &w.door {
            prop_assert!((0.0..=DOOR_MAX).contains(&d.angle));
        }
        let h = w.robot.height;
        prop_assert!((0.12..=0.30).contains(&h));
        if o.done {
            env.reset();
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn step_invariants_hold(task_idx in 0usize..10, seed in 0u64..1000, action_seed in 0u64..1000) {
        let task = TaskKind::ALL[task_idx];
        check_step_invariants(task, seed, &random_actions(action_seed, 250))?;
    }

    #[test]
    fn ram_wall_at_full_speed(seed in 0u64..1000, yaw in -3.2f64..3.2) {
        // Drive straight with a fixed heading in the door scene; walls and
        // the door must hold.
        let scene = SceneConfig::default();
        let mut env = Env::new(TaskKind::DoorHard, &scene, seed).unwrap();
        let mut world = env.world().clone();
        world.robot.yaw = yaw;
        let layout = env.layout().clone();
        env.reset_to(world, layout);
        for _ in 0..200 {
            let o = env.step(&[1.0, 0.0, 0.3, 0.0]).unwrap();
            prop_assert!(env.world().static_penetration() <= 1e-6);
            if o.done { break; }
        }
    }
}

#[test]
fn crawl_violation_counts_as_contact() {
    let scene = SceneConfig::default();
    let mut env = Env::new(TaskKind::Crawl, &scene, 0).unwrap();
    // Full speed at full height runs into the tunnel as the ramp drops below
    // the body.
    let mut violated = false;
    for _ in 0..env.max_steps() {
        let o = env.step(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        if o.done {
            violated = o.breakdown.terms[4] > 0.0 && !o.success;
            break;
        }
    }
    assert!(violated);
}

#[test]
fn crawling_low_passes_the_zone() {
    let scene = SceneConfig::default();
    let mut env = Env::new(TaskKind::Crawl, &scene, 0).unwrap();
    let mut world = env.world().clone();
    world.robot.pos = Vec2::new(0.0, 0.0);
    world.robot.yaw = 0.0;
    let layout = env.layout().clone();
    env.reset_to(world, layout);
    let mut success = false;
    for _ in 0..env.max_steps() {
        let o = env.step(&[1.0, 0.0, 0.0, -1.0]).unwrap();
        if o.done {
            success = o.success;
            break;
        }
    }
    assert!(success);
}
