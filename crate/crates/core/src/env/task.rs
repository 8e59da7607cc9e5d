//! The ten tasks: scene construction, initial-state sampling, velocity
//! targets for the tracking terms, and success predicates.
//!
//! Scene layout shared by the door and interactive tasks: an 8 m x 6 m arena
//! split by a wall at x = 0; the doorway spans y in [-0.45, 0.45] with the
//! door hinged at (0, -0.45), opening toward the right room.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::geometry::{Aabb, Vec2};
use super::reward::RewardConfig;
use super::world::{
    ClearanceZone, Door, Puck, PulseSchedule, RobotBody, World, DOOR_LENGTH, PUCK_RADIUS, ROBOT_RADIUS,
};
use crate::error::{Error, Result};
use crate::observation::FeatureGroup;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Walk,
    TurnLeft,
    TurnRight,
    Stand,
    ReachEasy,
    DoorEasy,
    DoorHard,
    Push,
    Crawl,
    InteractiveReach,
}

impl TaskKind {
    pub const ALL: [TaskKind; 10] = [
        TaskKind::Walk,
        TaskKind::TurnLeft,
        TaskKind::TurnRight,
        TaskKind::Stand,
        TaskKind::ReachEasy,
        TaskKind::DoorEasy,
        TaskKind::DoorHard,
        TaskKind::Push,
        TaskKind::Crawl,
        TaskKind::InteractiveReach,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Walk => "walk",
            TaskKind::TurnLeft => "turn-left",
            TaskKind::TurnRight => "turn-right",
            TaskKind::Stand => "stand",
            TaskKind::ReachEasy => "reach-easy",
            TaskKind::DoorEasy => "door-easy",
            TaskKind::DoorHard => "door-hard",
            TaskKind::Push => "push",
            TaskKind::Crawl => "crawl",
            TaskKind::InteractiveReach => "interactive-reach",
        }
    }

    /// Feature groups a policy for this task observes, in order.
    pub fn groups(self) -> Vec<FeatureGroup> {
        use FeatureGroup::*;
        match self {
            TaskKind::Walk | TaskKind::TurnLeft | TaskKind::TurnRight | TaskKind::Stand | TaskKind::ReachEasy => {
                vec![Proprio]
            }
            TaskKind::DoorEasy | TaskKind::DoorHard => vec![Proprio, Door],
            TaskKind::Push => vec![Proprio, Puck],
            TaskKind::Crawl => vec![Proprio, Clearance],
            TaskKind::InteractiveReach => vec![Proprio, Door, Clearance, Ranges],
        }
    }

    /// Width of the task goal vector (target position in the robot frame).
    pub fn goal_dim(self) -> usize {
        match self {
            TaskKind::ReachEasy | TaskKind::Push | TaskKind::InteractiveReach => 2,
            _ => 0,
        }
    }

    /// Range synthetic goals are scaled to when this skill is used as a parent.
    pub fn goal_range(self) -> f64 {
        if self.goal_dim() > 0 {
            3.0
        } else {
            0.0
        }
    }

    /// Whether success is judged when the episode times out rather than as
    /// a terminal event.
    pub fn judged_at_timeout(self) -> bool {
        matches!(self, TaskKind::Walk | TaskKind::Stand)
    }

    pub fn has_stages(self) -> bool {
        matches!(self, TaskKind::ReachEasy | TaskKind::DoorHard | TaskKind::InteractiveReach)
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        TaskKind::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown task `{s}`")))
    }
}

/// Per-task knobs: reward weights and tracking targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub rewards: RewardConfig,
    /// Speed (m/s) of the linear velocity target.
    pub speed_target: f64,
    /// Yaw rate target (rad/s) of the angular tracking term.
    pub yaw_rate_target: f64,
    pub timeout_s: f64,
}

/// Discount the default success bonuses are derived from: the bonus equals
/// the discounted value of collecting the best per-step reward forever, so
/// finishing is never worse than lingering.
pub const BONUS_DISCOUNT: f64 = 0.99;

impl TaskConfig {
    pub fn default_for(task: TaskKind) -> Self {
        let base = RewardConfig::default();
        let (rewards, speed, yaw) = match task {
            TaskKind::Walk => (
                RewardConfig {
                    lin_vel: 1.0,
                    ang_vel: 0.5,
                    ..base
                },
                0.6,
                0.0,
            ),
            TaskKind::TurnLeft | TaskKind::TurnRight => (
                RewardConfig {
                    lin_vel: 0.5,
                    ang_vel: 1.0,
                    ..base
                },
                0.0,
                if task == TaskKind::TurnLeft { 1.0 } else { -1.0 },
            ),
            TaskKind::Stand => (
                RewardConfig {
                    lin_vel: 1.0,
                    ang_vel: 0.5,
                    ..base
                },
                0.0,
                0.0,
            ),
            TaskKind::ReachEasy | TaskKind::InteractiveReach => (
                RewardConfig {
                    lin_vel: 0.3,
                    target_distance: 1.0,
                    ..base
                },
                0.6,
                0.0,
            ),
            TaskKind::DoorEasy | TaskKind::DoorHard => (
                RewardConfig {
                    lin_vel: 0.5,
                    door_angle: 0.3,
                    ..base
                },
                0.5,
                0.0,
            ),
            TaskKind::Push => (
                RewardConfig {
                    lin_vel: 0.2,
                    object_distance: 1.0,
                    ..base
                },
                0.4,
                0.0,
            ),
            TaskKind::Crawl => (
                RewardConfig {
                    lin_vel: 1.0,
                    ang_vel: 0.2,
                    ..base
                },
                0.3,
                0.0,
            ),
        };
        let mut rewards = rewards;
        if !task.judged_at_timeout() {
            rewards.success_bonus = rewards.max_step_reward() * BONUS_DISCOUNT / (1.0 - BONUS_DISCOUNT);
        }
        TaskConfig {
            rewards,
            speed_target: speed,
            yaw_rate_target: yaw,
            timeout_s: 20.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.rewards.validate().map_err(Error::Config)?;
        if !(self.timeout_s > 0.0) {
            return Err(Error::Config("timeout must be positive".into()));
        }
        Ok(())
    }
}

/// Scene-level settings for every task; tasks missing from `tasks` use
/// [`TaskConfig::default_for`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub friction_min: f64,
    pub friction_max: f64,
    pub tasks: BTreeMap<TaskKind, TaskConfig>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            friction_min: 0.5,
            friction_max: 1.25,
            tasks: BTreeMap::new(),
        }
    }
}

impl SceneConfig {
    pub fn task(&self, task: TaskKind) -> TaskConfig {
        self.tasks.get(&task).cloned().unwrap_or_else(|| TaskConfig::default_for(task))
    }

    /// Every task's effective configuration, for writing a full config file.
    pub fn expanded(&self) -> SceneConfig {
        SceneConfig {
            tasks: TaskKind::ALL.into_iter().map(|t| (t, self.task(t))).collect(),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.friction_min && self.friction_min <= self.friction_max) {
            return Err(Error::Config("friction range must satisfy 0 < min <= max".into()));
        }
        for t in self.tasks.values() {
            t.validate()?;
        }
        Ok(())
    }
}

pub const ARENA_HALF: Vec2 = Vec2::new(4.0, 3.0);
pub const DOOR_HINGE: Vec2 = Vec2::new(0.0, -0.45);
const WALL: f64 = 0.2;
const DIVIDER_HALF: f64 = 0.05;

/// Where a sampled episode puts the goal-relevant objects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLayout {
    pub target: Option<Vec2>,
    pub puck_target: Option<Vec2>,
}

fn arena_walls(half: Vec2) -> Vec<Aabb> {
    let (hx, hy) = (half.x, half.y);
    vec![
        Aabb::new(Vec2::new(-hx - WALL, -hy - WALL), Vec2::new(hx + WALL, -hy)),
        Aabb::new(Vec2::new(-hx - WALL, hy), Vec2::new(hx + WALL, hy + WALL)),
        Aabb::new(Vec2::new(-hx - WALL, -hy), Vec2::new(-hx, hy)),
        Aabb::new(Vec2::new(hx, -hy), Vec2::new(hx + WALL, hy)),
    ]
}

fn divider_walls() -> Vec<Aabb> {
    let top = DOOR_HINGE.y + DOOR_LENGTH;
    vec![
        Aabb::new(
            Vec2::new(-DIVIDER_HALF, -ARENA_HALF.y),
            Vec2::new(DIVIDER_HALF, DOOR_HINGE.y),
        ),
        Aabb::new(Vec2::new(-DIVIDER_HALF, top), Vec2::new(DIVIDER_HALF, ARENA_HALF.y)),
    ]
}

/// Crawl tunnel: x in [1, 4], y in [-0.6, 0.6], with side walls.
pub fn crawl_zone() -> ClearanceZone {
    ClearanceZone {
        rect: Aabb::new(Vec2::new(1.0, -0.6), Vec2::new(4.0, 0.6)),
        clearance_start: 0.30,
        clearance_end: 0.15,
    }
}

/// Target positions for interactive reach: grid corners in both rooms.
pub fn target_grid() -> Vec<Vec2> {
    let mut out = Vec::new();
    for &x in &[-3.0, -1.5, 1.5, 3.0] {
        for &y in &[-2.0, 0.0, 2.0] {
            out.push(Vec2::new(x, y));
        }
    }
    out
}

/// Fixed start used for trajectory dumps of interactive reach.
pub const INTERACTIVE_START: Vec2 = Vec2::new(-3.0, 0.0);

fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

fn pulse_schedule(rng: &mut impl Rng, horizon: f64) -> PulseSchedule {
    let mut pulses = Vec::new();
    let mut t = uniform(rng, 0.5, 1.5);
    while t < horizon {
        let mag = uniform(rng, 2.0, 8.0);
        let dir = uniform(rng, -PI, PI);
        pulses.push((t, t + 0.25, Vec2::from_angle(dir) * mag));
        t += uniform(rng, 0.5, 1.5);
    }
    PulseSchedule { pulses }
}

/// Samples an episode. `stage` selects a curriculum stage (0 to 2) for the
/// tasks that have one; `None` is the full task.
pub fn sample_episode(
    task: TaskKind,
    cfg: &TaskConfig,
    scene: &SceneConfig,
    stage: Option<u8>,
    rng: &mut impl Rng,
) -> (World, EpisodeLayout) {
    let friction = uniform(rng, scene.friction_min, scene.friction_max);
    let stage = stage.unwrap_or(2).min(2);
    let mut layout = EpisodeLayout {
        target: None,
        puck_target: None,
    };
    let world = match task {
        TaskKind::Walk | TaskKind::TurnLeft | TaskKind::TurnRight | TaskKind::Stand => {
            let yaw = uniform(rng, -PI, PI);
            let mut w = World::empty(RobotBody::at(Vec2::ZERO, yaw), friction);
            if task == TaskKind::Stand {
                w.pulses = Some(pulse_schedule(rng, cfg.timeout_s));
            }
            w
        }
        TaskKind::ReachEasy => {
            let yaw = uniform(rng, -PI, PI);
            let r_max = [1.5, 2.25, 3.0][stage as usize];
            // Uniform over the annulus area.
            let r_min = 0.75f64;
            let u = uniform(rng, 0.0, 1.0);
            let r = (r_min * r_min + u * (r_max * r_max - r_min * r_min)).sqrt();
            let phi = uniform(rng, -PI, PI);
            layout.target = Some(Vec2::from_angle(phi) * r);
            World::empty(RobotBody::at(Vec2::ZERO, yaw), friction)
        }
        TaskKind::DoorEasy | TaskKind::DoorHard => {
            let (pos, yaw) = if task == TaskKind::DoorEasy || stage == 0 {
                (
                    Vec2::new(uniform(rng, -1.6, -0.8), uniform(rng, -0.3, 0.3)),
                    uniform(rng, -0.3, 0.3),
                )
            } else if stage == 1 {
                (
                    Vec2::new(uniform(rng, -2.5, -0.8), uniform(rng, -1.5, 1.5)),
                    uniform(rng, -FRAC_PI_2, FRAC_PI_2),
                )
            } else {
                (
                    Vec2::new(uniform(rng, -3.5, -0.8), uniform(rng, -2.5, 2.5)),
                    uniform(rng, -PI, PI),
                )
            };
            let mut w = World::empty(RobotBody::at(pos, yaw), friction);
            w.obstacles = arena_walls(ARENA_HALF);
            w.obstacles.extend(divider_walls());
            w.door = Some(Door::closed(DOOR_HINGE));
            w
        }
        TaskKind::Push => {
            let half = Vec2::new(3.0, 3.0);
            let margin = 0.5;
            loop {
                let robot = Vec2::new(uniform(rng, -1.5, 1.5), uniform(rng, -1.5, 1.5));
                let yaw = uniform(rng, -PI, PI);
                let puck = robot + Vec2::from_angle(uniform(rng, -PI, PI)) * uniform(rng, 0.6, 1.5);
                let target = puck + Vec2::from_angle(uniform(rng, -PI, PI)) * uniform(rng, 0.5, 1.5);
                let inside = |p: Vec2| p.x.abs() < half.x - margin && p.y.abs() < half.y - margin;
                let clear = (puck - robot).norm() > ROBOT_RADIUS + PUCK_RADIUS + 0.1
                    && (target - puck).norm() > 0.3
                    && (target - robot).norm() > ROBOT_RADIUS + 0.1;
                if inside(puck) && inside(target) && clear {
                    layout.puck_target = Some(target);
                    let mut w = World::empty(RobotBody::at(robot, yaw), friction);
                    w.obstacles = arena_walls(half);
                    w.puck = Some(Puck { pos: puck, vel: Vec2::ZERO });
                    break w;
                }
            }
        }
        TaskKind::Crawl => {
            let pos = Vec2::new(uniform(rng, -0.5, 0.5), uniform(rng, -0.2, 0.2));
            let mut w = World::empty(RobotBody::at(pos, uniform(rng, -0.2, 0.2)), friction);
            let z = crawl_zone();
            w.obstacles = vec![
                Aabb::new(Vec2::new(z.rect.min.x, z.rect.max.y), Vec2::new(z.rect.max.x, z.rect.max.y + WALL)),
                Aabb::new(Vec2::new(z.rect.min.x, z.rect.min.y - WALL), Vec2::new(z.rect.max.x, z.rect.min.y)),
            ];
            w.zone = Some(z);
            w
        }
        TaskKind::InteractiveReach => sample_interactive(stage, friction, &mut layout, rng),
    };
    (world, layout)
}

fn sample_interactive(stage: u8, friction: f64, layout: &mut EpisodeLayout, rng: &mut impl Rng) -> World {
    let grid = target_grid();
    let candidates: Vec<Vec2> = if stage == 0 {
        grid.iter().copied().filter(|p| p.x < 0.0).collect()
    } else {
        grid
    };
    let start = Vec2::new(uniform(rng, -3.5, -2.5), uniform(rng, -1.0, 1.0));
    let yaw = uniform(rng, -PI, PI);
    let target = loop {
        let t = candidates[rng.random_range(0..candidates.len())];
        if (t - start).norm() > 1.0 {
            break t;
        }
    };
    layout.target = Some(target);

    let mut w = World::empty(RobotBody::at(start, yaw), friction);
    w.obstacles = arena_walls(ARENA_HALF);
    w.obstacles.extend(divider_walls());
    w.door = Some(Door::closed(DOOR_HINGE));

    // Table zone in the right room, clear of the doorway lane.
    let ty = if rng.random_bool(0.5) { 1.6 } else { -1.6 };
    let table = ClearanceZone {
        rect: Aabb::from_center(Vec2::new(uniform(rng, 1.5, 2.5), ty), Vec2::new(0.6, 0.5)),
        clearance_start: 0.18,
        clearance_end: 0.18,
    };

    let n_furniture = match stage {
        0 => 0,
        1 => 2,
        _ => rng.random_range(2..=4),
    };
    let mut placed: Vec<Aabb> = Vec::new();
    let mut attempts = 0;
    while placed.len() < n_furniture && attempts < 200 {
        attempts += 1;
        let half = Vec2::new(uniform(rng, 0.2, 0.4), uniform(rng, 0.2, 0.4));
        let c = Vec2::new(
            uniform(rng, -ARENA_HALF.x + 0.5, ARENA_HALF.x - 0.5),
            uniform(rng, -ARENA_HALF.y + 0.5, ARENA_HALF.y - 0.5),
        );
        let rect = Aabb::from_center(c, half);
        let keep_out = rect.inflate(0.6);
        let lane = Aabb::new(Vec2::new(-1.5, -0.9), Vec2::new(1.5, 0.9));
        let blocked = keep_out.contains(start)
            || keep_out.contains(target)
            || overlaps(&rect.inflate(0.1), &lane)
            || overlaps(&keep_out, &table.rect)
            || c.x.abs() < half.x + 0.7
            || placed.iter().any(|p| overlaps(&p.inflate(0.6), &rect));
        if !blocked {
            placed.push(rect);
        }
    }
    w.obstacles.extend(placed);
    w.zone = Some(table);
    w
}

fn overlaps(a: &Aabb, b: &Aabb) -> bool {
    a.min.x < b.max.x && b.min.x < a.max.x && a.min.y < b.max.y && b.min.y < a.max.y
}

/// Progress a task's success predicate depends on beyond the world state.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EpisodeProgress {
    pub start: Vec2,
    pub yaw_travelled: f64,
    pub steps: usize,
    pub tracking_error_sum: f64,
    pub fell: bool,
    pub timed_out: bool,
}

impl EpisodeProgress {
    pub fn mean_tracking_error(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.tracking_error_sum / self.steps as f64
        }
    }
}

pub const REACH_RADIUS: f64 = 0.5;
pub const PUSH_RADIUS: f64 = 0.1;
/// Robot center must pass this x to count as having crossed the door.
pub const DOOR_CROSS_X: f64 = 0.3;
pub const WALK_MAX_TRACKING_ERROR: f64 = 0.25;
pub const STAND_MAX_DRIFT: f64 = 0.5;

pub fn success_predicate(task: TaskKind, world: &World, layout: &EpisodeLayout, progress: &EpisodeProgress) -> bool {
    let pos = world.robot.pos;
    match task {
        TaskKind::Walk => {
            progress.timed_out && !progress.fell && progress.mean_tracking_error() <= WALK_MAX_TRACKING_ERROR
        }
        TaskKind::Stand => progress.timed_out && !progress.fell && (pos - progress.start).norm() <= STAND_MAX_DRIFT,
        TaskKind::TurnLeft => progress.yaw_travelled >= 2.0 * PI,
        TaskKind::TurnRight => progress.yaw_travelled <= -2.0 * PI,
        TaskKind::ReachEasy | TaskKind::InteractiveReach => {
            layout.target.is_some_and(|t| (pos - t).norm() < REACH_RADIUS)
        }
        TaskKind::Push => match (&world.puck, layout.puck_target) {
            (Some(p), Some(t)) => (p.pos - t).norm() < PUSH_RADIUS,
            _ => false,
        },
        TaskKind::DoorEasy | TaskKind::DoorHard => pos.x > DOOR_CROSS_X,
        TaskKind::Crawl => world.zone.as_ref().is_some_and(|z| pos.x > z.rect.max.x + ROBOT_RADIUS),
    }
}

/// Body-frame linear velocity target and yaw-rate target for the tracking
/// terms. Target tasks track a fixed speed toward their target; locomotion,
/// crawl and door tasks track a fixed forward speed.
pub fn velocity_targets(task: TaskKind, cfg: &TaskConfig, world: &World, layout: &EpisodeLayout) -> (Vec2, f64) {
    let robot = &world.robot;
    let toward = |p: Vec2| robot.to_body(p).normalized() * cfg.speed_target;
    let v = match task {
        TaskKind::Walk | TaskKind::Crawl | TaskKind::DoorEasy | TaskKind::DoorHard => Vec2::new(cfg.speed_target, 0.0),
        TaskKind::TurnLeft | TaskKind::TurnRight | TaskKind::Stand => Vec2::ZERO,
        TaskKind::ReachEasy | TaskKind::InteractiveReach => layout.target.map_or(Vec2::ZERO, toward),
        TaskKind::Push => world.puck.as_ref().map_or(Vec2::ZERO, |p| toward(p.pos)),
    };
    (v, cfg.yaw_rate_target)
}

/// Grid of positions used by the weight heatmap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub nx: usize,
    pub ny: usize,
}

impl GridSpec {
    pub fn points(&self) -> Vec<Vec2> {
        let step = |lo: f64, hi: f64, n: usize, i: usize| {
            if n == 1 {
                0.5 * (lo + hi)
            } else {
                lo + (hi - lo) * i as f64 / (n - 1) as f64
            }
        };
        let mut out = Vec::with_capacity(self.nx * self.ny);
        for j in 0..self.ny {
            for i in 0..self.nx {
                out.push(Vec2::new(step(self.x_min, self.x_max, self.nx, i), step(self.y_min, self.y_max, self.ny, j)));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn task_names_round_trip() {
        for t in TaskKind::ALL {
            assert_eq!(t.name().parse::<TaskKind>().unwrap(), t);
            let json = serde_json::to_string(&t).unwrap();
            assert_eq!(json, format!("\"{}\"", t.name()));
        }
        assert!("flyy".parse::<TaskKind>().is_err());
    }

    #[test]
    fn reach_targets_within_three_meters() {
        let scene = SceneConfig::default();
        let cfg = TaskConfig::default_for(TaskKind::ReachEasy);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            let (w, l) = sample_episode(TaskKind::ReachEasy, &cfg, &scene, None, &mut rng);
            let d = (l.target.unwrap() - w.robot.pos).norm();
            assert!(d <= 3.0 && d >= 0.75);
            assert!((0.5..=1.25).contains(&w.friction));
        }
    }

    #[test]
    fn push_layout_is_valid() {
        let scene = SceneConfig::default();
        let cfg = TaskConfig::default_for(TaskKind::Push);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let (w, l) = sample_episode(TaskKind::Push, &cfg, &scene, None, &mut rng);
            let puck = w.puck.as_ref().unwrap().pos;
            let target = l.puck_target.unwrap();
            for p in [puck, target, w.robot.pos] {
                assert!(p.x.abs() < 3.0 && p.y.abs() < 3.0);
            }
            assert!((puck - w.robot.pos).norm() > ROBOT_RADIUS + PUCK_RADIUS);
            assert!((target - puck).norm() > PUCK_RADIUS);
        }
    }

    #[test]
    fn reach_success_boundary() {
        let mut w = World::empty(RobotBody::at(Vec2::ZERO, 0.0), 1.0);
        let layout = EpisodeLayout {
            target: Some(Vec2::new(0.49, 0.0)),
            puck_target: None,
        };
        let p = EpisodeProgress::default();
        assert!(success_predicate(TaskKind::ReachEasy, &w, &layout, &p));
        w.robot.pos = Vec2::new(-0.02, 0.0);
        assert!(!success_predicate(TaskKind::ReachEasy, &w, &layout, &p));
    }

    #[test]
    fn push_and_door_success() {
        let mut w = World::empty(RobotBody::at(Vec2::ZERO, 0.0), 1.0);
        w.puck = Some(Puck {
            pos: Vec2::new(1.0, 0.09),
            vel: Vec2::ZERO,
        });
        let layout = EpisodeLayout {
            target: None,
            puck_target: Some(Vec2::new(1.0, 0.0)),
        };
        let p = EpisodeProgress::default();
        assert!(success_predicate(TaskKind::Push, &w, &layout, &p));
        w.robot.pos = Vec2::new(0.35, 0.1);
        assert!(success_predicate(TaskKind::DoorHard, &w, &layout, &p));
        w.robot.pos = Vec2::new(-0.2, 0.1);
        assert!(!success_predicate(TaskKind::DoorHard, &w, &layout, &p));
    }

    #[test]
    fn interactive_targets_cover_both_rooms() {
        let grid = target_grid();
        assert!(grid.iter().any(|p| p.x < 0.0) && grid.iter().any(|p| p.x > 0.0));
        let scene = SceneConfig::default();
        let cfg = TaskConfig::default_for(TaskKind::InteractiveReach);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let (w, l) = sample_episode(TaskKind::InteractiveReach, &cfg, &scene, None, &mut rng);
            let t = l.target.unwrap();
            assert!(w.obstacles.iter().all(|o| !o.inflate(ROBOT_RADIUS).contains(t)));
            assert!(w.static_penetration() == 0.0);
        }
    }

    #[test]
    fn default_bonus_covers_lingering() {
        let cfg = TaskConfig::default_for(TaskKind::ReachEasy);
        let linger = cfg.rewards.max_step_reward() * BONUS_DISCOUNT / (1.0 - BONUS_DISCOUNT);
        assert!(cfg.rewards.success_bonus >= linger - 1e-9);
        assert_eq!(TaskConfig::default_for(TaskKind::Walk).rewards.success_bonus, 0.0);
    }
}
