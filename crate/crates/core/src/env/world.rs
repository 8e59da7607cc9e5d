//! Planar physics of the proxy robot, the door, the puck and static geometry.
//!
//! The robot is a disk driven by four velocity-like actuators (forward speed,
//! yaw rate, lateral speed, height rate). Each actuator follows its command
//! through a first-order lag with time constant [`ACTUATOR_TAU`], integrated
//! exactly over a step. The per-channel tracking error `command - actual`,
//! in action units, is the effort proxy.
//!
//! Roll and pitch are replaced by two damped "wobble" oscillators excited by
//! body accelerations, collisions and push disturbances. A wobble angle past
//! [`FALL_ANGLE`] counts as a fall.
//!
//! Contacts are resolved by position projection plus an inelastic normal
//! impulse. Pushing the door or the puck splits the correction by effective
//! mass; the robot's effective pushing mass scales with the ground friction
//! coefficient.

use serde::{Deserialize, Serialize};

use super::geometry::{circle_vs_aabb, circle_vs_circle, circle_vs_segment, Aabb, Segment, Vec2};
use crate::policy::ACTION_DIM;

pub const DT: f64 = 0.05;
pub const ROBOT_RADIUS: f64 = 0.25;
pub const ROBOT_MASS: f64 = 12.0;
pub const ACTUATOR_TAU: f64 = 0.1;
pub const HEIGHT_MIN: f64 = 0.12;
pub const HEIGHT_MAX: f64 = 0.30;
pub const HEIGHT_NOMINAL: f64 = 0.28;
/// Actuator ranges for action = 1: forward m/s, yaw rad/s, lateral m/s, height m/s.
pub const ACTION_SCALE: [f64; ACTION_DIM] = [1.0, 1.5, 0.5, 0.3];
pub const FALL_ANGLE: f64 = 0.6;

const WOBBLE_FREQ: f64 = 8.0;
const WOBBLE_ZETA: f64 = 0.5;
const WOBBLE_ACCEL_GAIN: f64 = 0.64;
const WOBBLE_IMPACT_GAIN: f64 = 1.5;
const GRAVITY: f64 = 9.81;
const RESOLVE_PASSES: usize = 4;

pub const DOOR_LENGTH: f64 = 0.9;
const DOOR_MASS: f64 = 8.0;
const DOOR_SPRING: f64 = 2.0;
const DOOR_DAMPING: f64 = 3.0;
pub const DOOR_MAX: f64 = std::f64::consts::FRAC_PI_2;

pub const PUCK_RADIUS: f64 = 0.1;
const PUCK_MASS: f64 = 1.0;
const PUCK_FRICTION_SCALE: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotBody {
    pub pos: Vec2,
    pub yaw: f64,
    /// Actual actuator velocities: forward, yaw rate, lateral, height rate.
    pub actuator: [f64; ACTION_DIM],
    pub height: f64,
    /// Roll and pitch proxies (rad) and their rates (rad/s).
    pub wobble: [f64; 2],
    pub wobble_rate: [f64; 2],
    pub prev_action: [f64; ACTION_DIM],
}

impl RobotBody {
    pub fn at(pos: Vec2, yaw: f64) -> Self {
        RobotBody {
            pos,
            yaw,
            actuator: [0.0; ACTION_DIM],
            height: HEIGHT_NOMINAL,
            wobble: [0.0; 2],
            wobble_rate: [0.0; 2],
            prev_action: [0.0; ACTION_DIM],
        }
    }

    /// Body-frame planar velocity (forward, lateral).
    pub fn body_velocity(&self) -> Vec2 {
        Vec2::new(self.actuator[0], self.actuator[2])
    }

    pub fn world_velocity(&self) -> Vec2 {
        self.body_velocity().rotate(self.yaw)
    }

    pub fn yaw_rate(&self) -> f64 {
        self.actuator[1]
    }

    /// World point expressed in the robot frame.
    pub fn to_body(&self, p: Vec2) -> Vec2 {
        (p - self.pos).rotate(-self.yaw)
    }

    fn set_world_velocity(&mut self, v: Vec2) {
        let b = v.rotate(-self.yaw);
        self.actuator[0] = b.x;
        self.actuator[2] = b.y;
    }
}

/// Planar speeds shrink as the body lowers.
pub fn speed_scale(height: f64) -> f64 {
    0.4 + 0.6 * (height - HEIGHT_MIN) / (HEIGHT_MAX - HEIGHT_MIN)
}

/// A hinged door that opens toward +x. At angle `q` its free end sits at
/// `hinge + length * (sin q, cos q)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Door {
    pub hinge: Vec2,
    pub angle: f64,
    pub angle_rate: f64,
}

impl Door {
    pub fn closed(hinge: Vec2) -> Self {
        Door {
            hinge,
            angle: 0.0,
            angle_rate: 0.0,
        }
    }

    pub fn direction(&self) -> Vec2 {
        Vec2::new(self.angle.sin(), self.angle.cos())
    }

    pub fn tip(&self) -> Vec2 {
        self.hinge + self.direction() * DOOR_LENGTH
    }

    pub fn segment(&self) -> Segment {
        Segment::new(self.hinge, self.tip())
    }

    /// Center of the doorway opening (the closed door's midpoint).
    pub fn doorway_center(&self) -> Vec2 {
        self.hinge + Vec2::new(0.0, DOOR_LENGTH * 0.5)
    }

    pub fn inertia() -> f64 {
        DOOR_MASS * DOOR_LENGTH * DOOR_LENGTH / 3.0
    }

    fn integrate(&mut self, dt: f64) {
        let i = Door::inertia();
        // Backward Euler on the damped spring never adds energy.
        let rate = (self.angle_rate - DOOR_SPRING * self.angle / i * dt)
            / (1.0 + DOOR_DAMPING / i * dt + DOOR_SPRING / i * dt * dt);
        self.angle_rate = rate;
        self.angle += rate * dt;
        self.clamp_angle();
    }

    fn clamp_angle(&mut self) {
        if self.angle <= 0.0 {
            self.angle = 0.0;
            self.angle_rate = self.angle_rate.max(0.0);
        } else if self.angle >= DOOR_MAX {
            self.angle = DOOR_MAX;
            self.angle_rate = self.angle_rate.min(0.0);
        }
    }

    pub fn kinetic_energy(&self) -> f64 {
        0.5 * Door::inertia() * self.angle_rate * self.angle_rate
    }

    /// Energy stored in the closing spring.
    pub fn spring_energy(&self) -> f64 {
        0.5 * DOOR_SPRING * self.angle * self.angle
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Puck {
    pub pos: Vec2,
    pub vel: Vec2,
}

/// Region under a slab whose clearance falls linearly along +x.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClearanceZone {
    pub rect: Aabb,
    pub clearance_start: f64,
    pub clearance_end: f64,
}

impl ClearanceZone {
    pub fn clearance_at(&self, x: f64) -> f64 {
        let t = ((x - self.rect.min.x) / (self.rect.max.x - self.rect.min.x)).clamp(0.0, 1.0);
        self.clearance_start + (self.clearance_end - self.clearance_start) * t
    }

    /// Lowest clearance over the part of the zone covered by a robot at
    /// `pos`, or `None` when the robot does not overlap the zone.
    pub fn clearance_under(&self, pos: Vec2) -> Option<f64> {
        let r = ROBOT_RADIUS;
        let overlaps = pos.x + r > self.rect.min.x
            && pos.x - r < self.rect.max.x
            && pos.y + r > self.rect.min.y
            && pos.y - r < self.rect.max.y;
        overlaps.then(|| {
            let lo = self.clearance_at(self.rect.max.x.min(pos.x + r));
            let hi = self.clearance_at(self.rect.min.x.max(pos.x - r));
            lo.min(hi)
        })
    }
}

/// Scheduled push disturbances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseSchedule {
    /// (start time, end time, world force in N), in time order.
    pub pulses: Vec<(f64, f64, Vec2)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub robot: RobotBody,
    pub door: Option<Door>,
    pub puck: Option<Puck>,
    pub obstacles: Vec<Aabb>,
    pub zone: Option<ClearanceZone>,
    pub friction: f64,
    pub pulses: Option<PulseSchedule>,
    pub time: f64,
}

/// Physical quantities produced by one step.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StepPhysics {
    pub command: [f64; ACTION_DIM],
    pub prev_actuator: [f64; ACTION_DIM],
    pub tau: [f64; ACTION_DIM],
    pub static_contacts: u32,
    pub clearance_violation: bool,
    pub door_contact: bool,
    pub puck_contact: bool,
    pub fell: bool,
}

impl StepPhysics {
    pub fn n_contact(&self) -> u32 {
        self.static_contacts + u32::from(self.clearance_violation)
    }
}

impl World {
    pub fn empty(robot: RobotBody, friction: f64) -> Self {
        World {
            robot,
            door: None,
            puck: None,
            obstacles: Vec::new(),
            zone: None,
            friction,
            pulses: None,
            time: 0.0,
        }
    }

    /// Commanded actuator targets for a clamped action at the current height.
    pub fn command(&self, action: &[f64; ACTION_DIM]) -> [f64; ACTION_DIM] {
        let s = speed_scale(self.robot.height);
        [
            action[0] * ACTION_SCALE[0] * s,
            action[1] * ACTION_SCALE[1],
            action[2] * ACTION_SCALE[2] * s,
            action[3] * ACTION_SCALE[3],
        ]
    }

    pub fn kinetic_energy(&self) -> f64 {
        let v = self.robot.world_velocity();
        let mut e = 0.5 * ROBOT_MASS * v.norm_sq();
        if let Some(p) = &self.puck {
            e += 0.5 * PUCK_MASS * p.vel.norm_sq();
        }
        if let Some(d) = &self.door {
            e += d.kinetic_energy();
        }
        e
    }

    /// Kinetic energy plus the energy held by the door spring.
    pub fn mechanical_energy(&self) -> f64 {
        self.kinetic_energy() + self.door.as_ref().map_or(0.0, Door::spring_energy)
    }

    /// Advances the world by one step. `action` must already be clamped to
    /// `[-1, 1]`.
    pub fn step(&mut self, action: &[f64; ACTION_DIM]) -> StepPhysics {
        let dt = DT;
        let cmd = self.command(action);
        let prev = self.robot.actuator;
        let decay = (-dt / ACTUATOR_TAU).exp();
        for (k, u) in self.robot.actuator.iter_mut().enumerate() {
            *u = cmd[k] + (*u - cmd[k]) * decay;
        }

        let mut impact = Vec2::ZERO;
        if let Some(sched) = &self.pulses {
            for &(t0, t1, force) in &sched.pulses {
                if self.time >= t0 && self.time < t1 {
                    let dv = force * (dt / ROBOT_MASS);
                    let v = self.robot.world_velocity() + dv;
                    self.robot.set_world_velocity(v);
                    impact += dv;
                }
            }
        }

        // Semi-implicit Euler on pose.
        self.robot.yaw += self.robot.actuator[1] * dt;
        self.robot.pos += self.robot.world_velocity() * dt;
        let h = self.robot.height + self.robot.actuator[3] * dt;
        self.robot.height = h.clamp(HEIGHT_MIN, HEIGHT_MAX);
        if self.robot.height != h {
            self.robot.actuator[3] = 0.0;
        }

        if let Some(d) = &mut self.door {
            d.integrate(dt);
        }
        if let Some(p) = &mut self.puck {
            let speed = p.vel.norm();
            let decel = PUCK_FRICTION_SCALE * self.friction * GRAVITY * dt;
            p.vel = if speed <= decel { Vec2::ZERO } else { p.vel * ((speed - decel) / speed) };
            p.pos += p.vel * dt;
        }

        let mut phys = StepPhysics {
            command: cmd,
            prev_actuator: prev,
            ..Default::default()
        };
        let v_before = self.robot.world_velocity();
        for _ in 0..RESOLVE_PASSES {
            self.resolve_door(&mut phys);
            self.resolve_puck(&mut phys);
            self.resolve_static();
        }
        phys.static_contacts = self.count_static_contacts();
        impact += self.robot.world_velocity() - v_before;

        if let Some(z) = &self.zone {
            if let Some(c) = z.clearance_under(self.robot.pos) {
                phys.clearance_violation = self.robot.height > c;
            }
        }

        self.update_wobble(&prev, impact);
        phys.fell = self.robot.wobble.iter().any(|a| a.abs() > FALL_ANGLE);

        for k in 0..ACTION_DIM {
            let scale = ACTION_SCALE[k];
            phys.tau[k] = (cmd[k] - self.robot.actuator[k]) / scale;
        }
        self.robot.prev_action = *action;
        self.time += dt;
        phys
    }

    fn update_wobble(&mut self, prev: &[f64; ACTION_DIM], impact: Vec2) {
        let dt = DT;
        let u = &self.robot.actuator;
        let a_fwd = (u[0] - prev[0]) / dt;
        let a_lat = (u[2] - prev[2]) / dt + u[0] * u[1];
        let body_impact = impact.rotate(-self.robot.yaw);
        // Roll responds to lateral excitation, pitch to longitudinal.
        let drive = [
            WOBBLE_ACCEL_GAIN * a_lat,
            WOBBLE_ACCEL_GAIN * a_fwd,
        ];
        let kicks = [body_impact.y, body_impact.x];
        let w2 = WOBBLE_FREQ * WOBBLE_FREQ;
        let c = 2.0 * WOBBLE_ZETA * WOBBLE_FREQ;
        for k in 0..2 {
            let r = &mut self.robot.wobble_rate[k];
            *r += WOBBLE_IMPACT_GAIN * kicks[k];
            *r += (-w2 * self.robot.wobble[k] - c * *r + drive[k]) * dt;
            self.robot.wobble[k] += *r * dt;
        }
    }

    fn resolve_static(&mut self) {
        let r = ROBOT_RADIUS;
        for rect in &self.obstacles {
            if let Some(c) = circle_vs_aabb(self.robot.pos, r, rect) {
                self.robot.pos += c.normal * c.depth;
                let v = self.robot.world_velocity();
                let vn = v.dot(c.normal);
                if vn < 0.0 {
                    self.robot.set_world_velocity(v - c.normal * vn);
                }
            }
        }
        if let Some(p) = &mut self.puck {
            for rect in &self.obstacles {
                if let Some(c) = circle_vs_aabb(p.pos, PUCK_RADIUS, rect) {
                    p.pos += c.normal * c.depth;
                    let vn = p.vel.dot(c.normal);
                    if vn < 0.0 {
                        p.vel -= c.normal * vn;
                    }
                }
            }
        }
    }

    fn count_static_contacts(&self) -> u32 {
        // Touching within a hair of the surface still counts as contact.
        let r = ROBOT_RADIUS + 1e-6;
        self.obstacles
            .iter()
            .filter(|rect| circle_vs_aabb(self.robot.pos, r, rect).is_some())
            .count() as u32
    }

    fn robot_push_mass(&self) -> f64 {
        ROBOT_MASS * self.friction
    }

    fn resolve_door(&mut self, phys: &mut StepPhysics) {
        let m_r = self.robot_push_mass();
        let Some(door) = &mut self.door else { return };
        let Some((c, t)) = circle_vs_segment(self.robot.pos, ROBOT_RADIUS, &door.segment()) else {
            return;
        };
        phys.door_contact = true;
        let arm = (t * DOOR_LENGTH).max(0.05);
        let e_q = Vec2::new(door.angle.cos(), -door.angle.sin());
        // Door point motion along -normal per unit angle.
        let s = -e_q.dot(c.normal);
        let inertia = Door::inertia();
        let movable = s.abs() > 1e-6
            && !(door.angle <= 0.0 && s < 0.0)
            && !(door.angle >= DOOR_MAX && s > 0.0);
        let m_d = if movable { inertia / (arm * arm * s * s) } else { f64::INFINITY };
        let door_share = if m_d.is_finite() { m_r / (m_r + m_d) } else { 0.0 };

        // Positional split; whatever the door cannot take goes to the robot.
        let mut door_move = c.depth * door_share;
        if door_move > 0.0 {
            let dq = door_move / (arm * s);
            let q_new = (door.angle + dq).clamp(0.0, DOOR_MAX);
            door_move = (q_new - door.angle) * arm * s;
            door.angle = q_new;
        }
        self.robot.pos += c.normal * (c.depth - door_move);

        // Inelastic normal impulse.
        let v_r = self.robot.world_velocity();
        let v_d = e_q * (arm * door.angle_rate);
        let v_rel = (v_r - v_d).dot(c.normal);
        if v_rel < 0.0 {
            let inv_m = 1.0 / m_r + if m_d.is_finite() { 1.0 / m_d } else { 0.0 };
            let j = -v_rel / inv_m;
            self.robot.set_world_velocity(v_r + c.normal * (j / m_r));
            if m_d.is_finite() {
                door.angle_rate += j * arm * s / inertia;
            }
        }
        door.clamp_angle();
    }

    fn resolve_puck(&mut self, phys: &mut StepPhysics) {
        let m_r = self.robot_push_mass();
        let Some(p) = &mut self.puck else { return };
        let Some(c) = circle_vs_circle(self.robot.pos, ROBOT_RADIUS, p.pos, PUCK_RADIUS) else {
            return;
        };
        phys.puck_contact = true;
        let total = m_r + PUCK_MASS;
        self.robot.pos += c.normal * (c.depth * PUCK_MASS / total);
        p.pos -= c.normal * (c.depth * m_r / total);
        let v_r = self.robot.world_velocity();
        let v_rel = (v_r - p.vel).dot(c.normal);
        if v_rel < 0.0 {
            let j = -v_rel / (1.0 / m_r + 1.0 / PUCK_MASS);
            self.robot.set_world_velocity(v_r + c.normal * (j / m_r));
            p.vel -= c.normal * (j / PUCK_MASS);
        }
    }

    /// Deepest penetration of the robot into static geometry.
    pub fn static_penetration(&self) -> f64 {
        self.obstacles
            .iter()
            .filter_map(|r| circle_vs_aabb(self.robot.pos, ROBOT_RADIUS, r))
            .map(|c| c.depth)
            .fold(0.0, f64::max)
    }
}
