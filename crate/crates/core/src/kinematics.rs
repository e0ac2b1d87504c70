//! Unicycle kinematics of the two robots and the relative state between them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{world_to_frame, AngleDeg, Point2, Transform2D};

/// Default limits on the commanded velocities.
pub const DEFAULT_V_MAX: f64 = 2.0;
pub const DEFAULT_OMEGA_MAX_DEG: f64 = 180.0;
/// Range below which the relative-state dynamics are treated as singular.
pub const DEFAULT_R_MIN: f64 = 1e-3;

/// Absolute pose of a robot in the world frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub phi: AngleDeg,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, phi_deg: f64) -> Self {
        Self {
            x,
            y,
            phi: AngleDeg::new(phi_deg),
        }
    }

    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }

    pub fn frame(&self) -> Transform2D {
        Transform2D::from_pose(self.position(), self.phi)
    }
}

/// Linear velocity (m/s) and yaw rate (deg/s) of one robot.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    pub v: f64,
    pub phi_dot: f64,
}

impl ControlInput {
    pub fn new(v: f64, phi_dot: f64) -> Self {
        Self { v, phi_dot }
    }

    pub fn within_limits(&self, v_max: f64, omega_max: f64) -> bool {
        self.v.abs() <= v_max + 1e-12 && self.phi_dot.abs() <= omega_max + 1e-12
    }
}

/// Bearing of B seen from A together with the range between the two.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativeState {
    pub theta_a: AngleDeg,
    pub r_rel: f64,
}

impl RelativeState {
    pub fn new(theta_a_deg: f64, r_rel: f64) -> Self {
        Self {
            theta_a: AngleDeg::new(theta_a_deg),
            r_rel,
        }
    }
}

/// One explicit-Euler step of the unicycle model.
pub fn step_pose(p: &Pose2D, u: &ControlInput, dt: f64) -> Pose2D {
    debug_assert!(dt > 0.0);
    let (s, c) = p.phi.rad().sin_cos();
    Pose2D {
        x: p.x + u.v * c * dt,
        y: p.y + u.v * s * dt,
        phi: if u.phi_dot == 0.0 {
            p.phi
        } else {
            p.phi.offset(u.phi_dot * dt)
        },
    }
}

/// Ground-truth range and bearing of `pb` as seen from `pa`.
pub fn true_relative_state(pa: &Pose2D, pb: &Pose2D) -> Result<RelativeState> {
    let local = world_to_frame(&pa.frame(), pb.position());
    let r_rel = local.norm();
    if r_rel == 0.0 || !r_rel.is_finite() {
        return Err(Error::DegenerateGeometry(format!(
            "robots coincide at ({}, {})",
            pa.x, pa.y
        )));
    }
    Ok(RelativeState {
        theta_a: AngleDeg::new(local.y.atan2(local.x).to_degrees()),
        r_rel,
    })
}

/// Bearing of A seen from B, given the bearing of B seen from A and both headings.
pub fn theta_b_from_theta_a(theta_a: AngleDeg, phi_a: AngleDeg, phi_b: AngleDeg) -> AngleDeg {
    AngleDeg::new(theta_a.deg() + phi_a.deg() - phi_b.deg() + 180.0)
}

/// Time derivative of the relative state.
///
/// Returns `(theta_dot, r_dot)` in deg/s and m/s.
pub fn relative_state_derivative(
    x: &RelativeState,
    va: f64,
    vb: f64,
    phi_dot_a: f64,
    theta_b: AngleDeg,
    r_min: f64,
) -> Result<(f64, f64)> {
    if x.r_rel <= r_min {
        return Err(Error::Singularity {
            range: x.r_rel,
            floor: r_min,
        });
    }
    let (sa, ca) = x.theta_a.rad().sin_cos();
    let (sb, cb) = theta_b.rad().sin_cos();
    let theta_dot = -phi_dot_a + ((vb * sb + va * sa) / x.r_rel).to_degrees();
    let r_dot = -(vb * cb + va * ca);
    Ok((theta_dot, r_dot))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::wrap_signed_deg;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn step_pose_examples() {
        let p = step_pose(
            &Pose2D::new(0.0, 0.0, 0.0),
            &ControlInput::new(1.0, 0.0),
            1.0,
        );
        assert_abs_diff_eq!(p.x, 1.0);
        assert_abs_diff_eq!(p.y, 0.0);
        assert_eq!(p.phi.deg(), 0.0);

        let p = step_pose(
            &Pose2D::new(0.0, 0.0, 90.0),
            &ControlInput::new(1.0, 0.0),
            1.0,
        );
        assert_abs_diff_eq!(p.x, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.y, 1.0);
        assert_eq!(p.phi.deg(), 90.0);

        let p = step_pose(
            &Pose2D::new(0.0, 0.0, 0.0),
            &ControlInput::new(0.0, 90.0),
            1.0,
        );
        assert_eq!((p.x, p.y), (0.0, 0.0));
        assert_eq!(p.phi.deg(), 90.0);
    }

    #[test]
    fn relative_state_examples() {
        let s =
            true_relative_state(&Pose2D::new(0.0, 0.0, 0.0), &Pose2D::new(3.0, 4.0, 17.0)).unwrap();
        assert_abs_diff_eq!(s.r_rel, 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            s.theta_a.deg(),
            4f64.atan2(3.0).to_degrees(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(s.theta_a.deg(), 53.130_102_354, epsilon = 1e-8);

        let s =
            true_relative_state(&Pose2D::new(0.0, 0.0, 90.0), &Pose2D::new(0.0, 1.0, 0.0)).unwrap();
        assert_abs_diff_eq!(s.r_rel, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(wrap_signed_deg(s.theta_a.deg()), 0.0, epsilon = 1e-12);

        let s =
            true_relative_state(&Pose2D::new(0.0, 0.0, 0.0), &Pose2D::new(-1.0, 0.0, 0.0)).unwrap();
        assert_abs_diff_eq!(s.r_rel, 1.0);
        assert_abs_diff_eq!(s.theta_a.deg(), 180.0);

        let err = true_relative_state(&Pose2D::new(1.0, 1.0, 0.0), &Pose2D::new(1.0, 1.0, 30.0));
        assert!(matches!(err, Err(Error::DegenerateGeometry(_))));
    }

    #[test]
    fn theta_b_examples() {
        let a = |d| AngleDeg::new(d);
        assert_eq!(theta_b_from_theta_a(a(0.0), a(0.0), a(0.0)).deg(), 180.0);
        assert_eq!(theta_b_from_theta_a(a(90.0), a(45.0), a(45.0)).deg(), 270.0);
        assert_eq!(
            theta_b_from_theta_a(a(350.0), a(10.0), a(30.0)).deg(),
            150.0
        );
    }

    #[test]
    fn derivative_examples() {
        let (td, rd) = relative_state_derivative(
            &RelativeState::new(40.0, 3.0),
            0.0,
            0.0,
            10.0,
            AngleDeg::new(123.0),
            DEFAULT_R_MIN,
        )
        .unwrap();
        assert_abs_diff_eq!(td, -10.0);
        assert_abs_diff_eq!(rd, 0.0);

        let (td, rd) = relative_state_derivative(
            &RelativeState::new(0.0, 2.0),
            1.0,
            1.0,
            0.0,
            AngleDeg::new(180.0),
            DEFAULT_R_MIN,
        )
        .unwrap();
        assert_abs_diff_eq!(td, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(rd, 0.0, epsilon = 1e-12);

        let (_, rd) = relative_state_derivative(
            &RelativeState::new(180.0, 2.0),
            1.0,
            1.0,
            0.0,
            AngleDeg::new(180.0),
            DEFAULT_R_MIN,
        )
        .unwrap();
        assert_abs_diff_eq!(rd, 2.0, epsilon = 1e-12);

        let err = relative_state_derivative(
            &RelativeState::new(0.0, 5e-4),
            1.0,
            1.0,
            0.0,
            AngleDeg::ZERO,
            DEFAULT_R_MIN,
        );
        assert!(matches!(err, Err(Error::Singularity { .. })));
    }

    /// Derivation intermediates kept here only: the relative position
    /// vector B - A expressed in A's frame differentiated directly with the
    /// rotating-frame (transport) rule, compared against the closed form.
    #[test]
    fn closed_form_matches_rotating_frame_derivative() {
        let pa = Pose2D::new(0.3, -1.2, 37.0);
        let pb = Pose2D::new(2.1, 0.4, 250.0);
        let (ua, ub) = (ControlInput::new(0.7, 25.0), ControlInput::new(1.1, -40.0));
        let rel = true_relative_state(&pa, &pb).unwrap();

        // d/dt of OB - OA in the world frame.
        let vw = (
            ub.v * pb.phi.rad().cos() - ua.v * pa.phi.rad().cos(),
            ub.v * pb.phi.rad().sin() - ua.v * pa.phi.rad().sin(),
        );
        // Rotate into A's frame and subtract the frame rotation term omega x r.
        let (s, c) = pa.phi.rad().sin_cos();
        let omega = ua.phi_dot.to_radians();
        let local = world_to_frame(&pa.frame(), pb.position());
        let dx = c * vw.0 + s * vw.1 + omega * local.y;
        let dy = -s * vw.0 + c * vw.1 - omega * local.x;
        let r_dot = (local.x * dx + local.y * dy) / rel.r_rel;
        let theta_dot = ((local.x * dy - local.y * dx) / rel.r_rel.powi(2)).to_degrees();

        let theta_b = theta_b_from_theta_a(rel.theta_a, pa.phi, pb.phi);
        let (td, rd) =
            relative_state_derivative(&rel, ua.v, ub.v, ua.phi_dot, theta_b, DEFAULT_R_MIN)
                .unwrap();
        assert_abs_diff_eq!(td, theta_dot, epsilon = 1e-9);
        assert_abs_diff_eq!(rd, r_dot, epsilon = 1e-12);
    }

    fn integrate_pair(dt: f64, seconds: f64, seed: [f64; 5]) -> (f64, f64) {
        // Smooth controls parameterized by seed values.
        let mut pa = Pose2D::new(0.0, 0.0, seed[0] * 360.0);
        let mut pb = Pose2D::new(3.0 * seed[1].cos(), 3.0 * seed[1].sin(), seed[2] * 360.0);
        let mut rel = true_relative_state(&pa, &pb).unwrap();
        let steps = (seconds / dt).round() as usize;
        let (mut max_th, mut max_r) = (0.0f64, 0.0f64);
        for k in 0..steps {
            let t = k as f64 * dt;
            let ua = ControlInput::new(
                0.3 + 0.2 * (0.5 * t + seed[3]).sin(),
                30.0 * (0.3 * t).sin(),
            );
            let ub = ControlInput::new(
                0.4 + 0.2 * (0.7 * t).cos(),
                40.0 * (0.2 * t + seed[4]).cos(),
            );
            let theta_b = theta_b_from_theta_a(rel.theta_a, pa.phi, pb.phi);
            let (td, rd) =
                relative_state_derivative(&rel, ua.v, ub.v, ua.phi_dot, theta_b, DEFAULT_R_MIN)
                    .unwrap();
            rel = RelativeState {
                theta_a: rel.theta_a.offset(td * dt),
                r_rel: rel.r_rel + rd * dt,
            };
            pa = step_pose(&pa, &ua, dt);
            pb = step_pose(&pb, &ub, dt);
            let truth = true_relative_state(&pa, &pb).unwrap();
            max_th = max_th.max(truth.theta_a.diff(rel.theta_a).abs());
            max_r = max_r.max((truth.r_rel - rel.r_rel).abs());
        }
        (max_th, max_r)
    }

    #[test]
    fn relative_integration_converges_first_order() {
        let seed = [0.1, 0.7, 0.4, 1.3, 2.2];
        let (th1, r1) = integrate_pair(4e-3, 20.0, seed);
        let (th2, r2) = integrate_pair(2e-3, 20.0, seed);
        let (th3, r3) = integrate_pair(1e-3, 20.0, seed);
        assert!(th3 < 0.5 && r3 < 5e-3, "{th3} {r3}");
        // Halving dt roughly halves the discrepancy.
        for (a, b) in [(th1, th2), (th2, th3), (r1, r2), (r2, r3)] {
            let ratio = a / b;
            assert!((1.6..2.4).contains(&ratio), "ratio {ratio}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn consistency_over_random_smooth_controls(
            a in 0.0f64..1.0, b in 0.0f64..6.28, c in 0.0f64..1.0, d in 0.0f64..6.28, e in 0.0f64..6.28
        ) {
            let (th, r) = integrate_pair(1e-3, 20.0, [a, b, c, d, e]);
            prop_assert!(th < 0.5, "angle drift {}", th);
            prop_assert!(r < 5e-3, "range drift {}", r);
        }

        #[test]
        fn step_pose_preserves_untouched_components(
            x in -10.0f64..10.0, y in -10.0f64..10.0, h in 0.0f64..360.0,
            v in -2.0f64..2.0, w in -180.0f64..180.0, dt in 1e-4f64..0.1
        ) {
            let p = Pose2D::new(x, y, h);
            let q = step_pose(&p, &ControlInput::new(v, 0.0), dt);
            prop_assert_eq!(q.phi, p.phi);
            let q = step_pose(&p, &ControlInput::new(0.0, w), dt);
            prop_assert_eq!((q.x, q.y), (p.x, p.y));
        }

        #[test]
        fn relative_state_is_rigid_motion_invariant(
            ax in -5.0f64..5.0, ay in -5.0f64..5.0, ah in 0.0f64..360.0,
            bx in -5.0f64..5.0, by in -5.0f64..5.0, bh in 0.0f64..360.0,
            rot in 0.0f64..360.0, tx in -20.0f64..20.0, ty in -20.0f64..20.0
        ) {
            let pa = Pose2D::new(ax, ay, ah);
            let pb = Pose2D::new(bx, by, bh);
            prop_assume!(pa.position().x != pb.position().x || pa.position().y != pb.position().y);
            let s0 = true_relative_state(&pa, &pb).unwrap();
            let (s, c) = rot.to_radians().sin_cos();
            let mv = |p: &Pose2D| Pose2D::new(c * p.x - s * p.y + tx, s * p.x + c * p.y + ty, p.phi.deg() + rot);
            let s1 = true_relative_state(&mv(&pa), &mv(&pb)).unwrap();
            prop_assert!((s0.r_rel - s1.r_rel).abs() < 1e-9);
            prop_assert!(s0.theta_a.diff(s1.theta_a).abs() < 1e-6);
        }
    }
}
