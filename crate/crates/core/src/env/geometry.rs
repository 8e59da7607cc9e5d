//! Planar vectors, shapes, contact tests and ray casts.

use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn from_angle(theta: f64) -> Self {
        Vec2::new(theta.cos(), theta.sin())
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// Unit vector, or zero for a zero vector.
    pub fn normalized(self) -> Vec2 {
        let n = self.norm();
        if n > 0.0 {
            self * (1.0 / n)
        } else {
            Vec2::ZERO
        }
    }

    /// Counter-clockwise rotation by `theta`.
    pub fn rotate(self, theta: f64) -> Vec2 {
        let (s, c) = theta.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, o: Vec2) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl SubAssign for Vec2 {
    fn sub_assign(&mut self, o: Vec2) {
        self.x -= o.x;
        self.y -= o.y;
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Axis-aligned rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec2,
    pub max: Vec2,
}

impl Aabb {
    pub fn new(min: Vec2, max: Vec2) -> Self {
        debug_assert!(min.x < max.x && min.y < max.y, "degenerate rectangle");
        Aabb { min, max }
    }

    pub fn from_center(center: Vec2, half: Vec2) -> Self {
        Aabb::new(center - half, center + half)
    }

    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    pub fn center(&self) -> Vec2 {
        (self.min + self.max) * 0.5
    }

    pub fn closest_point(&self, p: Vec2) -> Vec2 {
        Vec2::new(p.x.clamp(self.min.x, self.max.x), p.y.clamp(self.min.y, self.max.y))
    }

    /// Grows the rectangle by `r` on every side.
    pub fn inflate(&self, r: f64) -> Aabb {
        Aabb::new(self.min - Vec2::new(r, r), self.max + Vec2::new(r, r))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub a: Vec2,
    pub b: Vec2,
}

impl Segment {
    pub fn new(a: Vec2, b: Vec2) -> Self {
        Segment { a, b }
    }

    /// Closest point on the segment and its parameter in `[0, 1]`.
    pub fn closest_point(&self, p: Vec2) -> (Vec2, f64) {
        let d = self.b - self.a;
        let len2 = d.norm_sq();
        let t = if len2 > 0.0 {
            ((p - self.a).dot(d) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        (self.a + d * t, t)
    }
}

/// Penetration of a circle into another shape. `normal` points from the
/// shape toward the circle center; moving the circle by `normal * depth`
/// separates the two.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contact {
    pub normal: Vec2,
    pub depth: f64,
    pub point: Vec2,
}

pub fn circle_vs_aabb(center: Vec2, radius: f64, rect: &Aabb) -> Option<Contact> {
    if rect.contains(center) {
        // Center inside: push out through the nearest face.
        let faces = [
            (center.x - rect.min.x, Vec2::new(-1.0, 0.0)),
            (rect.max.x - center.x, Vec2::new(1.0, 0.0)),
            (center.y - rect.min.y, Vec2::new(0.0, -1.0)),
            (rect.max.y - center.y, Vec2::new(0.0, 1.0)),
        ];
        let (dist, normal) = faces
            .into_iter()
            .fold((f64::INFINITY, Vec2::ZERO), |best, f| if f.0 < best.0 { f } else { best });
        return Some(Contact {
            normal,
            depth: dist + radius,
            point: center - normal * dist,
        });
    }
    let q = rect.closest_point(center);
    let d = center - q;
    let dist2 = d.norm_sq();
    if dist2 >= radius * radius {
        return None;
    }
    let dist = dist2.sqrt();
    Some(Contact {
        normal: d * (1.0 / dist),
        depth: radius - dist,
        point: q,
    })
}

pub fn circle_vs_segment(center: Vec2, radius: f64, seg: &Segment) -> Option<(Contact, f64)> {
    let (q, t) = seg.closest_point(center);
    let d = center - q;
    let dist2 = d.norm_sq();
    if dist2 >= radius * radius {
        return None;
    }
    let dist = dist2.sqrt();
    let normal = if dist > 1e-12 {
        d * (1.0 / dist)
    } else {
        (seg.b - seg.a).perp().normalized()
    };
    Some((
        Contact {
            normal,
            depth: radius - dist,
            point: q,
        },
        t,
    ))
}

/// Contact of circle `a` against circle `b`; the normal points from `b` to `a`.
pub fn circle_vs_circle(ca: Vec2, ra: f64, cb: Vec2, rb: f64) -> Option<Contact> {
    let d = ca - cb;
    let dist2 = d.norm_sq();
    let r = ra + rb;
    if dist2 >= r * r {
        return None;
    }
    let dist = dist2.sqrt();
    let normal = if dist > 1e-12 {
        d * (1.0 / dist)
    } else {
        Vec2::new(1.0, 0.0)
    };
    Some(Contact {
        normal,
        depth: r - dist,
        point: cb + normal * rb,
    })
}

/// Distance along a unit ray to the rectangle boundary, if hit.
pub fn ray_vs_aabb(origin: Vec2, dir: Vec2, rect: &Aabb) -> Option<f64> {
    let mut t_min = 0.0f64;
    let mut t_max = f64::INFINITY;
    for (o, d, lo, hi) in [
        (origin.x, dir.x, rect.min.x, rect.max.x),
        (origin.y, dir.y, rect.min.y, rect.max.y),
    ] {
        if d.abs() < 1e-12 {
            if o < lo || o > hi {
                return None;
            }
        } else {
            let inv = 1.0 / d;
            let (t0, t1) = {
                let a = (lo - o) * inv;
                let b = (hi - o) * inv;
                if a < b {
                    (a, b)
                } else {
                    (b, a)
                }
            };
            t_min = t_min.max(t0);
            t_max = t_max.min(t1);
            if t_min > t_max {
                return None;
            }
        }
    }
    Some(t_min)
}

pub fn ray_vs_segment(origin: Vec2, dir: Vec2, seg: &Segment) -> Option<f64> {
    let e = seg.b - seg.a;
    let denom = dir.cross(e);
    if denom.abs() < 1e-12 {
        return None;
    }
    let w = seg.a - origin;
    let t = w.cross(e) / denom;
    let u = w.cross(dir) / denom;
    (t >= 0.0 && (0.0..=1.0).contains(&u)).then_some(t)
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut r = a % two_pi;
    if r <= -std::f64::consts::PI {
        r += two_pi;
    } else if r > std::f64::consts::PI {
        r -= two_pi;
    }
    r
}
