//! Angle arithmetic and planar rigid transforms.
//!
//! Angles that are stored are kept in degrees on `[0, 360)`. Signed
//! differences use the half-open `[-180, 180)` convention. Trigonometry is
//! done in radians at the call site.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An angle in degrees, always wrapped to `[0, 360)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct AngleDeg(f64);

impl AngleDeg {
    pub const ZERO: AngleDeg = AngleDeg(0.0);

    /// Wraps any finite value into `[0, 360)`.
    ///
    /// Panics on non-finite input; use [`wrap_deg`] for a fallible version.
    pub fn new(deg: f64) -> Self {
        wrap_deg(deg).expect("angle must be finite")
    }

    pub fn deg(self) -> f64 {
        self.0
    }

    pub fn rad(self) -> f64 {
        self.0.to_radians()
    }

    /// Signed minimal difference `self - other` in `[-180, 180)`.
    pub fn diff(self, other: AngleDeg) -> f64 {
        diff_unchecked(self.0, other.0)
    }

    pub fn offset(self, delta_deg: f64) -> Self {
        AngleDeg::new(self.0 + delta_deg)
    }
}

impl TryFrom<f64> for AngleDeg {
    type Error = Error;

    fn try_from(v: f64) -> Result<Self> {
        wrap_deg(v)
    }
}

impl From<AngleDeg> for f64 {
    fn from(a: AngleDeg) -> f64 {
        a.0
    }
}

impl std::fmt::Display for AngleDeg {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}°", self.0)
    }
}

/// Reduces `a` modulo 360 into `[0, 360)`.
pub fn wrap_deg(a: f64) -> Result<AngleDeg> {
    if !a.is_finite() {
        return Err(Error::Domain(format!("cannot wrap non-finite angle {a}")));
    }
    let mut w = a.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs.
    if w >= 360.0 {
        w = 0.0;
    }
    Ok(AngleDeg(w))
}

/// Signed minimal difference `a - b` in `[-180, 180)`, so that
/// `wrap(b + d) == wrap(a)`.
pub fn angle_diff_deg(a: f64, b: f64) -> Result<f64> {
    if !a.is_finite() || !b.is_finite() {
        return Err(Error::Domain(format!(
            "cannot difference non-finite angles {a}, {b}"
        )));
    }
    Ok(diff_unchecked(a, b))
}

fn diff_unchecked(a: f64, b: f64) -> f64 {
    let mut d = (a - b + 180.0).rem_euclid(360.0) - 180.0;
    if d >= 180.0 {
        d -= 360.0;
    }
    d
}

/// Wraps to the signed range `[-180, 180)`.
pub fn wrap_signed_deg(a: f64) -> f64 {
    diff_unchecked(a, 0.0)
}

/// A planar point in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }
}

/// Rigid transform mapping world coordinates into a body frame.
///
/// A body frame sitting at `origin` with heading `rotation` (radians) has
/// `world_to_frame(p) = R(-rotation) (p - origin)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transform2D {
    pub rotation: f64,
    pub translation: (f64, f64),
}

impl Transform2D {
    pub fn identity() -> Self {
        Self {
            rotation: 0.0,
            translation: (0.0, 0.0),
        }
    }

    /// Frame attached to a body at `origin` with heading `heading`.
    pub fn from_pose(origin: Point2, heading: AngleDeg) -> Self {
        Self {
            rotation: heading.rad(),
            translation: (origin.x, origin.y),
        }
    }

    /// Transform whose frame is placed by `self` and then `other` relative
    /// to it, i.e. `compose(a, b).frame_to_world(p) == a.frame_to_world(b.frame_to_world(p))`.
    pub fn compose(&self, other: &Transform2D) -> Transform2D {
        let (s, c) = self.rotation.sin_cos();
        let (tx, ty) = other.translation;
        Transform2D {
            rotation: self.rotation + other.rotation,
            translation: (
                self.translation.0 + c * tx - s * ty,
                self.translation.1 + s * tx + c * ty,
            ),
        }
    }

    pub fn inverse(&self) -> Transform2D {
        let (s, c) = self.rotation.sin_cos();
        let (tx, ty) = self.translation;
        Transform2D {
            rotation: -self.rotation,
            translation: (-(c * tx + s * ty), s * tx - c * ty),
        }
    }

    pub fn is_identity(&self, tol: f64) -> bool {
        let r = wrap_signed_deg(self.rotation.to_degrees()).to_radians();
        r.abs() <= tol && self.translation.0.abs() <= tol && self.translation.1.abs() <= tol
    }
}

/// Expresses a world-frame point in the frame described by `t`.
pub fn world_to_frame(t: &Transform2D, p: Point2) -> Point2 {
    let (s, c) = t.rotation.sin_cos();
    let dx = p.x - t.translation.0;
    let dy = p.y - t.translation.1;
    Point2::new(c * dx + s * dy, -s * dx + c * dy)
}

/// Inverse of [`world_to_frame`].
pub fn frame_to_world(t: &Transform2D, p: Point2) -> Point2 {
    let (s, c) = t.rotation.sin_cos();
    Point2::new(
        t.translation.0 + c * p.x - s * p.y,
        t.translation.1 + s * p.x + c * p.y,
    )
}

/// Circular mean of angles in degrees with non-negative weights.
///
/// Returns `None` when the resultant vector vanishes.
pub fn circular_mean_deg(angles: &[(f64, f64)]) -> Option<AngleDeg> {
    let (mut s, mut c) = (0.0, 0.0);
    for &(a, w) in angles {
        let r = a.to_radians();
        s += w * r.sin();
        c += w * r.cos();
    }
    if s.hypot(c) < 1e-12 {
        return None;
    }
    Some(AngleDeg::new(s.atan2(c).to_degrees()))
}
