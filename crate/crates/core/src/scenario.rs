//! Motion scenarios: initial poses and control programs for both robots.
//!
//! Each scenario carries ten fully resolved variants, one per value of its
//! sweep parameter, so that a catalog round-trips through a config file
//! without any code-side templating.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{true_relative_state, ControlInput, Pose2D};

pub const DEFAULT_DURATION_S: f64 = 20.0;
pub const SWEEP_COUNT: usize = 10;
pub const MIN_INITIAL_SEPARATION_M: f64 = 0.3;

/// Time-parameterized commands for one robot. Yaw rates are in deg/s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControlProgram {
    Constant {
        v: f64,
        phi_dot: f64,
    },
    /// Constant speed, sinusoidal yaw rate.
    Sinusoidal {
        v: f64,
        amplitude: f64,
        frequency_hz: f64,
        #[serde(default)]
        phase_deg: f64,
    },
    /// Speed ramps linearly from `v0` and saturates at `v_cap`.
    Ramp {
        v0: f64,
        accel: f64,
        v_cap: f64,
        phi_dot: f64,
    },
    /// Turning radius changes linearly in time: `radius0 + radius_rate * t`.
    Spiral {
        v: f64,
        radius0: f64,
        radius_rate: f64,
        /// +1 turns left, -1 turns right.
        direction: f64,
    },
    /// Piecewise-constant commands; the last segment is held afterwards.
    Piecewise {
        segments: Vec<Segment>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub duration: f64,
    pub v: f64,
    pub phi_dot: f64,
}

impl ControlProgram {
    pub fn still() -> Self {
        ControlProgram::Constant {
            v: 0.0,
            phi_dot: 0.0,
        }
    }

    pub fn at(&self, t: f64) -> ControlInput {
        match *self {
            ControlProgram::Constant { v, phi_dot } => ControlInput::new(v, phi_dot),
            ControlProgram::Sinusoidal {
                v,
                amplitude,
                frequency_hz,
                phase_deg,
            } => ControlInput::new(
                v,
                amplitude * (TAU * frequency_hz * t + phase_deg.to_radians()).sin(),
            ),
            ControlProgram::Ramp {
                v0,
                accel,
                v_cap,
                phi_dot,
            } => {
                let v = v0 + accel * t;
                let v = if accel >= 0.0 {
                    v.min(v_cap)
                } else {
                    v.max(v_cap)
                };
                ControlInput::new(v, phi_dot)
            }
            ControlProgram::Spiral {
                v,
                radius0,
                radius_rate,
                direction,
            } => {
                let r = radius0 + radius_rate * t;
                ControlInput::new(v, direction * (v / r).to_degrees())
            }
            ControlProgram::Piecewise { ref segments } => {
                let mut start = 0.0;
                for s in segments {
                    if t < start + s.duration {
                        return ControlInput::new(s.v, s.phi_dot);
                    }
                    start += s.duration;
                }
                segments
                    .last()
                    .map(|s| ControlInput::new(s.v, s.phi_dot))
                    .unwrap_or_default()
            }
        }
    }

    /// Seeded random piecewise-constant program.
    pub fn random_piecewise(
        seed: u64,
        duration: f64,
        segment_s: f64,
        v_max: f64,
        phi_dot_max: f64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = (duration / segment_s).ceil() as usize;
        let segments = (0..n)
            .map(|_| Segment {
                duration: segment_s,
                v: rng.random_range(0.0..=v_max),
                phi_dot: rng.random_range(-phi_dot_max..=phi_dot_max),
            })
            .collect();
        ControlProgram::Piecewise { segments }
    }
}

/// One concrete run setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioVariant {
    pub sweep_value: f64,
    pub pose_a: Pose2D,
    pub pose_b: Pose2D,
    pub control_a: ControlProgram,
    pub control_b: ControlProgram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub description: String,
    pub duration_s: f64,
    pub sweep_parameter: String,
    pub variants: Vec<ScenarioVariant>,
}

impl Scenario {
    /// Checks the initial separation and that commands stay within limits
    /// at every physics step.
    pub fn validate(&self, physics_dt: f64, v_max: f64, omega_max: f64) -> Result<()> {
        if !(self.duration_s > 0.0) {
            return Err(Error::Config(format!(
                "scenario {}: duration must be positive",
                self.id
            )));
        }
        if self.variants.is_empty() {
            return Err(Error::Config(format!("scenario {}: no variants", self.id)));
        }
        let steps = (self.duration_s / physics_dt).round() as usize;
        for (i, v) in self.variants.iter().enumerate() {
            let sep = v.pose_a.position();
            let d = (sep.x - v.pose_b.x).hypot(sep.y - v.pose_b.y);
            if d < MIN_INITIAL_SEPARATION_M {
                return Err(Error::Config(format!(
                    "scenario {} variant {i}: initial separation {d:.3} m below {MIN_INITIAL_SEPARATION_M} m",
                    self.id
                )));
            }
            true_relative_state(&v.pose_a, &v.pose_b)?;
            for (who, prog) in [("A", &v.control_a), ("B", &v.control_b)] {
                for k in 0..=steps {
                    let t = k as f64 * physics_dt;
                    let u = prog.at(t);
                    if !u.v.is_finite()
                        || !u.phi_dot.is_finite()
                        || !u.within_limits(v_max, omega_max)
                    {
                        return Err(Error::Config(format!(
                            "scenario {} variant {i}: robot {who} command (v={}, phi_dot={}) at t={t:.3} s exceeds limits",
                            self.id, u.v, u.phi_dot
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

fn sweep(f: impl Fn(usize) -> f64) -> impl Iterator<Item = (usize, f64)> {
    (0..SWEEP_COUNT).map(move |k| (k, f(k)))
}

fn scenario(
    id: &str,
    description: &str,
    sweep_parameter: &str,
    variants: impl Iterator<Item = ScenarioVariant>,
) -> Scenario {
    Scenario {
        id: id.to_string(),
        description: description.to_string(),
        duration_s: DEFAULT_DURATION_S,
        sweep_parameter: sweep_parameter.to_string(),
        variants: variants.collect(),
    }
}

fn constant(v: f64, phi_dot: f64) -> ControlProgram {
    ControlProgram::Constant { v, phi_dot }
}

/// The fourteen built-in scenarios, from both robots standing still to both
/// spiraling around each other.
pub fn builtin_scenarios() -> Vec<Scenario> {
    let still = ControlProgram::still;
    vec![
        scenario(
            "both-still",
            "Both robots stand still; B placed 2 m away at a swept bearing",
            "bearing_deg",
            sweep(|k| 10.0 + 36.0 * k as f64).map(|(_, b)| {
                let r = b.to_radians();
                ScenarioVariant {
                    sweep_value: b,
                    pose_a: Pose2D::new(0.0, 0.0, 0.0),
                    pose_b: Pose2D::new(2.0 * r.cos(), 2.0 * r.sin(), 0.0),
                    control_a: still(),
                    control_b: still(),
                }
            }),
        ),
        scenario(
            "b-line",
            "A still; B drives a straight line passing 1.5 m to A's left",
            "speed_mps",
            sweep(|k| 0.1 * (k + 1) as f64).map(|(_, v)| ScenarioVariant {
                sweep_value: v,
                pose_a: Pose2D::new(0.0, 0.0, 0.0),
                pose_b: Pose2D::new(-4.0, 1.5, 0.0),
                control_a: still(),
                control_b: constant(v, 0.0),
            }),
        ),
        scenario(
            "b-circles-a",
            "A still; B circles A at 0.5 m/s on a swept radius",
            "radius_m",
            sweep(|k| 0.6 + 0.5 * k as f64).map(|(_, r)| ScenarioVariant {
                sweep_value: r,
                pose_a: Pose2D::new(0.0, 0.0, 30.0),
                pose_b: Pose2D::new(r, 0.0, 90.0),
                control_a: still(),
                control_b: constant(0.5, (0.5 / r).to_degrees()),
            }),
        ),
        scenario(
            "parallel",
            "Both drive straight and parallel; B 25% faster, starting behind",
            "speed_mps",
            sweep(|k| 0.1 * (k + 1) as f64).map(|(_, v)| ScenarioVariant {
                sweep_value: v,
                pose_a: Pose2D::new(0.0, 0.0, 0.0),
                pose_b: Pose2D::new(-2.0, 1.5, 0.0),
                control_a: constant(v, 0.0),
                control_b: constant(1.25 * v, 0.0),
            }),
        ),
        scenario(
            "converging",
            "Head-on approach in lanes 1 m apart, crossing and separating",
            "speed_mps",
            sweep(|k| 0.3 + 0.05 * k as f64).map(|(_, v)| ScenarioVariant {
                sweep_value: v,
                pose_a: Pose2D::new(0.0, 0.0, 0.0),
                pose_b: Pose2D::new(12.0, 1.0, 180.0),
                control_a: constant(v, 0.0),
                control_b: constant(v, 0.0),
            }),
        ),
        scenario(
            "diverging",
            "Both start close together and drive apart",
            "speed_mps",
            sweep(|k| 0.05 * (k + 1) as f64).map(|(_, v)| ScenarioVariant {
                sweep_value: v,
                pose_a: Pose2D::new(0.0, 0.0, 180.0),
                pose_b: Pose2D::new(0.5, 0.5, 45.0),
                control_a: constant(v, 0.0),
                control_b: constant(v, 0.0),
            }),
        ),
        scenario(
            "line-and-circle",
            "A drives straight at 0.3 m/s; B circles a point 3 m ahead-left",
            "speed_b_mps",
            sweep(|k| 0.2 * (k + 1) as f64).map(|(_, v)| ScenarioVariant {
                sweep_value: v,
                pose_a: Pose2D::new(0.0, 0.0, 0.0),
                pose_b: Pose2D::new(4.5, 3.0, 90.0),
                control_a: constant(0.3, 0.0),
                control_b: constant(v, (v / 1.5).to_degrees()),
            }),
        ),
        scenario(
            "concentric-circles",
            "A on a 1 m circle, B on a 3 m circle around the same center",
            "speed_b_mps",
            sweep(|k| 0.2 * (k + 1) as f64).map(|(_, v)| ScenarioVariant {
                sweep_value: v,
                pose_a: Pose2D::new(1.0, 0.0, 90.0),
                pose_b: Pose2D::new(-3.0, 0.0, 270.0),
                control_a: constant(0.3, 0.3f64.to_degrees()),
                control_b: constant(v, (v / 3.0).to_degrees()),
            }),
        ),
        scenario(
            "spiraling",
            "Both spiral inward around a common center, staying opposite",
            "speed_mps",
            sweep(|k| 0.2 + 0.1 * k as f64).map(|(_, v)| {
                let prog = ControlProgram::Spiral {
                    v,
                    radius0: 2.0,
                    radius_rate: -0.05,
                    direction: 1.0,
                };
                ScenarioVariant {
                    sweep_value: v,
                    pose_a: Pose2D::new(2.0, 0.0, 90.0),
                    pose_b: Pose2D::new(-2.0, 0.0, 270.0),
                    control_a: prog.clone(),
                    control_b: prog,
                }
            }),
        ),
        scenario(
            "a-spinning",
            "A spins in place at a swept rate; B still",
            "yaw_rate_dps",
            sweep(|k| 18.0 * (k + 1) as f64).map(|(_, w)| ScenarioVariant {
                sweep_value: w,
                pose_a: Pose2D::new(0.0, 0.0, 0.0),
                pose_b: Pose2D::new(2.0, 1.0, 0.0),
                control_a: constant(0.0, w),
                control_b: still(),
            }),
        ),
        scenario(
            "accelerating-pass",
            "A still; B accelerates from rest past A",
            "accel_mps2",
            sweep(|k| 0.02 * (k + 1) as f64).map(|(_, a)| ScenarioVariant {
                sweep_value: a,
                pose_a: Pose2D::new(0.0, 0.0, 90.0),
                pose_b: Pose2D::new(-5.0, 1.0, 0.0),
                control_a: still(),
                control_b: ControlProgram::Ramp {
                    v0: 0.0,
                    accel: a,
                    v_cap: 2.0,
                    phi_dot: 0.0,
                },
            }),
        ),
        scenario(
            "oscillating",
            "Both weave with sinusoidal yaw rates at a swept frequency",
            "frequency_hz",
            sweep(|k| 0.1 * (k + 1) as f64).map(|(_, f)| ScenarioVariant {
                sweep_value: f,
                pose_a: Pose2D::new(0.0, 0.0, 0.0),
                pose_b: Pose2D::new(3.0, 0.0, 0.0),
                control_a: ControlProgram::Sinusoidal {
                    v: 0.2,
                    amplitude: 30.0,
                    frequency_hz: f,
                    phase_deg: 0.0,
                },
                control_b: ControlProgram::Sinusoidal {
                    v: 0.3,
                    amplitude: 45.0,
                    frequency_hz: f,
                    phase_deg: 90.0,
                },
            }),
        ),
        scenario(
            "close-approach",
            "A still; B slowly passes 0.3 m abeam of A at t = 15 s",
            "initial_distance_m",
            sweep(|k| 1.0 + 0.5 * k as f64).map(|(_, d)| ScenarioVariant {
                sweep_value: d,
                pose_a: Pose2D::new(0.0, 0.0, 0.0),
                pose_b: Pose2D::new(d, 0.3, 180.0),
                control_a: still(),
                control_b: constant(d / 15.0, 0.0),
            }),
        ),
        scenario(
            "random-walk",
            "Both follow seeded random piecewise-constant commands",
            "seed",
            sweep(|k| k as f64).map(|(k, _)| ScenarioVariant {
                sweep_value: k as f64,
                pose_a: Pose2D::new(0.0, 0.0, 0.0),
                pose_b: Pose2D::new(9.0, 0.0, 180.0),
                control_a: ControlProgram::random_piecewise(
                    2 * k as u64,
                    DEFAULT_DURATION_S,
                    2.0,
                    0.2,
                    45.0,
                ),
                control_b: ControlProgram::random_piecewise(
                    2 * k as u64 + 1,
                    DEFAULT_DURATION_S,
                    2.0,
                    0.2,
                    45.0,
                ),
            }),
        ),
    ]
}

/// Serialized scenario catalog.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioCatalog {
    pub schema_version: u32,
    pub scenarios: Vec<Scenario>,
}

impl ScenarioCatalog {
    pub fn new(scenarios: Vec<Scenario>) -> Self {
        Self {
            schema_version: 1,
            scenarios,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario catalog serializes")
    }
}
