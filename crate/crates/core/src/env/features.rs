//! Observation features and task goals computed from world state.
//!
//! Every group is always filled; objects missing from the scene give zeros
//! (or the open-space value for clearances and ranges).

use std::f64::consts::FRAC_PI_4;

use super::geometry::{ray_vs_aabb, ray_vs_segment, Vec2};
use super::task::{EpisodeLayout, TaskKind};
use super::world::{World, HEIGHT_MAX};
use crate::observation::{FeatureGroup, Features};

pub const RAY_COUNT: usize = 8;
pub const RAY_MAX: f64 = 3.0;
/// Distance ahead of the robot at which the second clearance reading is taken.
pub const CLEARANCE_LOOKAHEAD: f64 = 0.5;
const HEIGHT_CENTER: f64 = 0.21;
const HEIGHT_HALF_SPAN: f64 = 0.09;

fn normalize_height(h: f64) -> f64 {
    (h - HEIGHT_CENTER) / HEIGHT_HALF_SPAN
}

pub fn observe(world: &World, layout: &EpisodeLayout) -> Features {
    let mut f = Features::default();
    let r = &world.robot;

    let p = f.group_mut(FeatureGroup::Proprio);
    let v = r.body_velocity();
    p[0] = v.x;
    p[1] = v.y;
    p[2] = r.yaw_rate();
    p[3] = r.wobble_rate[0];
    p[4] = r.wobble_rate[1];
    p[5] = r.yaw.sin();
    p[6] = r.yaw.cos();
    p[7] = normalize_height(r.height);
    p[8..12].copy_from_slice(&r.prev_action);

    if let Some(door) = &world.door {
        let d = f.group_mut(FeatureGroup::Door);
        let rel = [r.to_body(door.hinge), r.to_body(door.doorway_center()), r.to_body(door.tip())];
        for (k, x) in rel.iter().enumerate() {
            d[2 * k] = x.x;
            d[2 * k + 1] = x.y;
        }
        d[6] = door.angle;
    }

    if let Some(puck) = &world.puck {
        let q = f.group_mut(FeatureGroup::Puck);
        let rel = r.to_body(puck.pos);
        q[0] = rel.x;
        q[1] = rel.y;
        if let Some(t) = layout.puck_target {
            let t2o = (t - puck.pos).rotate(-r.yaw);
            q[2] = t2o.x;
            q[3] = t2o.y;
        }
    }

    let c = f.group_mut(FeatureGroup::Clearance);
    let open = normalize_height(HEIGHT_MAX);
    c[2] = open;
    c[3] = open;
    if let Some(z) = &world.zone {
        let entry = Vec2::new(z.rect.min.x, z.rect.center().y);
        let rel = r.to_body(entry);
        c[0] = rel.x;
        c[1] = rel.y;
        if let Some(h) = z.clearance_under(r.pos) {
            c[2] = normalize_height(h);
        }
        let ahead = r.pos + Vec2::from_angle(r.yaw) * CLEARANCE_LOOKAHEAD;
        if let Some(h) = z.clearance_under(ahead) {
            c[3] = normalize_height(h);
        }
    }

    let ranges = range_scan(world);
    f.group_mut(FeatureGroup::Ranges).copy_from_slice(&ranges);
    f
}

/// Range readings at `k * 45` degrees from the heading, scaled to `[0, 1]`.
pub fn range_scan(world: &World) -> [f64; RAY_COUNT] {
    let r = &world.robot;
    let mut out = [1.0; RAY_COUNT];
    for (k, o) in out.iter_mut().enumerate() {
        let dir = Vec2::from_angle(r.yaw + k as f64 * FRAC_PI_4);
        let mut best = RAY_MAX;
        for rect in &world.obstacles {
            if let Some(t) = ray_vs_aabb(r.pos, dir, rect) {
                best = best.min(t);
            }
        }
        if let Some(door) = &world.door {
            if let Some(t) = ray_vs_segment(r.pos, dir, &door.segment()) {
                best = best.min(t);
            }
        }
        *o = best.clamp(0.0, RAY_MAX) / RAY_MAX;
    }
    out
}

/// Task goal: the target position in the robot frame, or empty for tasks
/// without one.
pub fn goal(task: TaskKind, world: &World, layout: &EpisodeLayout) -> Vec<f64> {
    let target = match task {
        TaskKind::ReachEasy | TaskKind::InteractiveReach => layout.target,
        TaskKind::Push => layout.puck_target,
        _ => None,
    };
    match target {
        Some(t) => {
            let rel = world.robot.to_body(t);
            vec![rel.x, rel.y]
        }
        None => Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::geometry::Aabb;
    use crate::env::world::RobotBody;

    #[test]
    fn range_hits_wall_ahead() {
        let mut w = World::empty(RobotBody::at(Vec2::ZERO, 0.0), 1.0);
        w.obstacles.push(Aabb::new(Vec2::new(1.5, -1.0), Vec2::new(2.0, 1.0)));
        let s = range_scan(&w);
        assert!((s[0] - 0.5).abs() < 1e-12);
        assert_eq!(s[4], 1.0);
    }

    #[test]
    fn goal_in_body_frame() {
        let w = World::empty(RobotBody::at(Vec2::new(1.0, 0.0), std::f64::consts::FRAC_PI_2), 1.0);
        let layout = EpisodeLayout {
            target: Some(Vec2::new(1.0, 2.0)),
            puck_target: None,
        };
        let g = goal(TaskKind::ReachEasy, &w, &layout);
        assert!((g[0] - 2.0).abs() < 1e-12 && g[1].abs() < 1e-12);
        assert!(goal(TaskKind::Walk, &w, &layout).is_empty());
    }

    #[test]
    fn proprio_encodes_height_and_heading() {
        let w = World::empty(RobotBody::at(Vec2::ZERO, 0.0), 1.0);
        let f = observe(&w, &EpisodeLayout { target: None, puck_target: None });
        let p = f.group(FeatureGroup::Proprio);
        assert!((p[6] - 1.0).abs() < 1e-12);
        assert!((p[7] - (0.28 - 0.21) / 0.09).abs() < 1e-12);
        assert_eq!(f.group(FeatureGroup::Ranges), &[1.0; 8]);
    }
}
