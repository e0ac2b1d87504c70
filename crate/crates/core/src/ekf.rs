//! Extended Kalman filter over the relative state `[theta_a (deg), r_rel (m)]`.
//!
//! Two process models are provided. Case 1 knows both robots' motion
//! (robot B's speed and bearing are shared over the radio link); Case 2 only
//! knows robot A's own odometry. Both use the same observation model: three
//! linear calibration branches (chosen per tick by the baseline) and the
//! ranging distance.

use nalgebra::{Matrix2, Matrix2x4, Matrix4, Matrix4x2, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::AngleDeg;
use crate::kinematics::{RelativeState, DEFAULT_R_MIN};
use crate::uwb::{MeasurementVector, PairCalibration, SensorModel, Slope};

const DEG_PER_RAD: f64 = 180.0 / std::f64::consts::PI;
const RAD_PER_DEG: f64 = std::f64::consts::PI / 180.0;

/// Default estimator period.
pub const DEFAULT_DT: f64 = 1.0 / 28.0;
/// Eigenvalue below which a covariance counts as not positive semi-definite.
pub const PSD_TOLERANCE: f64 = -1e-9;
/// Relative Cholesky pivot below which the innovation covariance is treated
/// as singular.
const MIN_RCOND: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Case {
    /// Robot B's speed and bearing are available.
    Case1,
    /// Only robot A's odometry is available.
    Case2,
}

/// Filter tuning. Process noise is given in SI state units (rad², m²).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EkfConfig {
    pub q_case1: [f64; 2],
    pub q_case2: [f64; 2],
    pub initial_sigma_theta_deg: f64,
    pub initial_sigma_r_m: f64,
    pub r_min: f64,
}

impl Default for EkfConfig {
    fn default() -> Self {
        Self {
            q_case1: [1e-6, 1e-6],
            q_case2: [1e-3, 1e-3],
            initial_sigma_theta_deg: 5.0,
            initial_sigma_r_m: 0.1,
            r_min: DEFAULT_R_MIN,
        }
    }
}

impl EkfConfig {
    /// Process covariance in filter units (deg², m²).
    pub fn q(&self, case: Case) -> Matrix2<f64> {
        let q = match case {
            Case::Case1 => self.q_case1,
            Case::Case2 => self.q_case2,
        };
        Matrix2::from_diagonal(&Vector2::new(q[0] * DEG_PER_RAD * DEG_PER_RAD, q[1]))
    }

    pub fn initial_p(&self) -> Matrix2<f64> {
        Matrix2::from_diagonal(&Vector2::new(
            self.initial_sigma_theta_deg.powi(2),
            self.initial_sigma_r_m.powi(2),
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EkfState {
    pub x: RelativeState,
    pub p: Matrix2<f64>,
    pub q: Matrix2<f64>,
    pub dt: f64,
}

impl EkfState {
    pub fn new(x: RelativeState, p: Matrix2<f64>, q: Matrix2<f64>) -> Self {
        Self {
            x,
            p,
            q,
            dt: DEFAULT_DT,
        }
    }

    fn vector(&self) -> Vector2<f64> {
        Vector2::new(self.x.theta_a.deg(), self.x.r_rel)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlVectorCase1 {
    pub v_a: f64,
    /// deg/s
    pub phi_dot_a: f64,
    pub v_b: f64,
    pub theta_b: AngleDeg,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlVectorCase2 {
    pub v_a: f64,
    /// deg/s
    pub phi_dot_a: f64,
}

impl From<ControlVectorCase1> for ControlVectorCase2 {
    fn from(u: ControlVectorCase1) -> Self {
        Self {
            v_a: u.v_a,
            phi_dot_a: u.phi_dot_a,
        }
    }
}

/// Robot B's contribution to the process model; zero for Case 2.
#[derive(Debug, Clone, Copy)]
struct RemoteTerm {
    v_b: f64,
    theta_b_rad: f64,
}

/// Discrete transition `F(x, u)` and its Jacobian, in filter units.
fn transition(
    theta_deg: f64,
    r: f64,
    v_a: f64,
    phi_dot_a: f64,
    remote: Option<RemoteTerm>,
    dt: f64,
) -> (Vector2<f64>, Matrix2<f64>) {
    let (sa, ca) = (theta_deg * RAD_PER_DEG).sin_cos();
    let (sb_term, cb_term) = match remote {
        Some(rt) => {
            let (sb, cb) = rt.theta_b_rad.sin_cos();
            (rt.v_b * sb, rt.v_b * cb)
        }
        None => (0.0, 0.0),
    };
    let lateral = v_a * sa + sb_term;
    let next = Vector2::new(
        theta_deg + dt * (-phi_dot_a + DEG_PER_RAD * lateral / r),
        r + dt * (-v_a * ca - cb_term),
    );
    let jac = Matrix2::new(
        1.0 + dt * v_a * ca / r,
        -dt * DEG_PER_RAD * lateral / (r * r),
        dt * v_a * sa * RAD_PER_DEG,
        1.0,
    );
    (next, jac)
}

/// Case 1 transition evaluated at a raw state vector.
pub fn transition_case1(
    x: Vector2<f64>,
    u: &ControlVectorCase1,
    dt: f64,
) -> (Vector2<f64>, Matrix2<f64>) {
    transition(
        x[0],
        x[1],
        u.v_a,
        u.phi_dot_a,
        Some(RemoteTerm {
            v_b: u.v_b,
            theta_b_rad: u.theta_b.rad(),
        }),
        dt,
    )
}

/// Case 2 transition evaluated at a raw state vector.
pub fn transition_case2(
    x: Vector2<f64>,
    u: &ControlVectorCase2,
    dt: f64,
) -> (Vector2<f64>, Matrix2<f64>) {
    transition(x[0], x[1], u.v_a, u.phi_dot_a, None, dt)
}

/// Running record of numerical events over a filter's lifetime.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FilterHealth {
    pub updates: u64,
    pub skipped_updates: u64,
    pub singularity_guards: u64,
    pub psd_violations: u64,
    pub min_eigenvalue: f64,
}

impl FilterHealth {
    fn observe(&mut self, p: &Matrix2<f64>) {
        let e = min_eigenvalue(p);
        self.min_eigenvalue = self.min_eigenvalue.min(e);
        if e < PSD_TOLERANCE {
            self.psd_violations += 1;
        }
    }

    pub fn merge(&mut self, other: &FilterHealth) {
        self.updates += other.updates;
        self.skipped_updates += other.skipped_updates;
        self.singularity_guards += other.singularity_guards;
        self.psd_violations += other.psd_violations;
        self.min_eigenvalue = self.min_eigenvalue.min(other.min_eigenvalue);
    }
}

/// Smallest eigenvalue of a symmetric 2×2 matrix.
pub fn min_eigenvalue(p: &Matrix2<f64>) -> f64 {
    let a = p[(0, 0)];
    let d = p[(1, 1)];
    let b = 0.5 * (p[(0, 1)] + p[(1, 0)]);
    let mean = 0.5 * (a + d);
    let half_diff = 0.5 * (a - d);
    mean - (half_diff * half_diff + b * b).sqrt()
}

fn symmetrize(p: &Matrix2<f64>) -> Matrix2<f64> {
    0.5 * (p + p.transpose())
}

/// Selected calibration branches plus the measurement covariance for one tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservationModel {
    pub pairs: [PairCalibration; 3],
    pub slopes: [Slope; 3],
    /// Diagonal of `R_k`: three reading variances (deg²) and the range variance (m²).
    pub r_diag: [f64; 4],
}

impl ObservationModel {
    /// Measurement covariance looked up at the current bearing estimate.
    pub fn at_estimate(sensor: &SensorModel, slopes: [Slope; 3], theta_est: AngleDeg) -> Self {
        let r_diag = [
            sensor.angle_variance(0, theta_est),
            sensor.angle_variance(1, theta_est),
            sensor.angle_variance(2, theta_est),
            sensor.distance_variance(),
        ];
        Self {
            pairs: sensor.calibration.pairs,
            slopes,
            r_diag,
        }
    }

    /// Predicted measurement for a state.
    pub fn predict(&self, x: &RelativeState) -> [f64; 4] {
        let mut h = [0.0; 4];
        for p in 0..3 {
            h[p] = self.pairs[p].predict(self.slopes[p], x.theta_a);
        }
        h[3] = x.r_rel;
        h
    }

    pub fn jacobian(&self) -> Matrix4x2<f64> {
        let a = |p: usize| self.pairs[p].line(self.slopes[p]).slope;
        Matrix4x2::new(a(0), 0.0, a(1), 0.0, a(2), 0.0, 0.0, 1.0)
    }

    /// Innovation with the three reading channels wrapped to `[-180, 180)`.
    pub fn innovation(&self, y: &MeasurementVector, x: &RelativeState) -> Vector4<f64> {
        let h = self.predict(x);
        Vector4::new(
            y.pdoa_angles[0].diff(AngleDeg::new(h[0])),
            y.pdoa_angles[1].diff(AngleDeg::new(h[1])),
            y.pdoa_angles[2].diff(AngleDeg::new(h[2])),
            y.distance - h[3],
        )
    }
}

/// The filter: state plus guard settings and health counters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ekf {
    pub state: EkfState,
    pub r_min: f64,
    pub health: FilterHealth,
}

impl Ekf {
    pub fn new(state: EkfState, r_min: f64) -> Self {
        let mut health = FilterHealth::default();
        health.min_eigenvalue = min_eigenvalue(&state.p);
        Self {
            state,
            r_min,
            health,
        }
    }

    fn apply_prediction(&mut self, next: Vector2<f64>, jac: Matrix2<f64>) {
        let s = &mut self.state;
        let mut p = symmetrize(&(jac * s.p * jac.transpose() + s.q));
        let mut r = next[1];
        if !(r > self.r_min) {
            r = self.r_min;
            p[(1, 1)] *= 10.0;
            self.health.singularity_guards += 1;
        }
        s.x = RelativeState {
            theta_a: AngleDeg::new(next[0]),
            r_rel: r,
        };
        s.p = p;
        self.health.observe(&s.p);
    }

    /// Guarded range used when evaluating the process model.
    fn guarded_vector(&mut self) -> Vector2<f64> {
        let mut v = self.state.vector();
        if !(v[1] > self.r_min) {
            v[1] = self.r_min;
            self.state.p[(1, 1)] *= 10.0;
            self.health.singularity_guards += 1;
        }
        v
    }

    pub fn predict_case1(&mut self, u: &ControlVectorCase1) {
        let x = self.guarded_vector();
        let (next, jac) = transition_case1(x, u, self.state.dt);
        self.apply_prediction(next, jac);
    }

    pub fn predict_case2(&mut self, u: &ControlVectorCase2) {
        let x = self.guarded_vector();
        let (next, jac) = transition_case2(x, u, self.state.dt);
        self.apply_prediction(next, jac);
    }

    /// Measurement update. Returns `false` when the innovation covariance
    /// was singular and the update was skipped.
    pub fn update(&mut self, y: &MeasurementVector, obs: &ObservationModel) -> Result<bool> {
        if obs.r_diag.iter().any(|r| !(*r > 0.0)) {
            return Err(Error::Domain(format!(
                "measurement variances must be positive: {:?}",
                obs.r_diag
            )));
        }
        let s = &mut self.state;
        let h: Matrix4x2<f64> = obs.jacobian();
        let r_k = Matrix4::from_diagonal(&Vector4::from(obs.r_diag));
        let innov_cov = h * s.p * h.transpose() + r_k;
        let Some(inv) = invert_checked(&innov_cov) else {
            self.health.skipped_updates += 1;
            return Ok(false);
        };
        let gain: Matrix2x4<f64> = s.p * h.transpose() * inv;
        let nu = obs.innovation(y, &s.x);
        let dx = gain * nu;
        let mut r = s.x.r_rel + dx[1];
        if !(r > self.r_min) {
            r = self.r_min;
            self.health.singularity_guards += 1;
        }
        s.x = RelativeState {
            theta_a: s.x.theta_a.offset(dx[0]),
            r_rel: r,
        };
        s.p = symmetrize(&((Matrix2::identity() - gain * h) * s.p));
        self.health.updates += 1;
        self.health.observe(&s.p);
        Ok(true)
    }
}

fn invert_checked(m: &Matrix4<f64>) -> Option<Matrix4<f64>> {
    if !m.iter().all(|v| v.is_finite()) {
        return None;
    }
    let chol = m.cholesky()?;
    // Each pivot relative to its diagonal entry: how much of that channel's
    // variance survives after conditioning on the previous channels.
    let l = chol.l_dirty();
    for i in 0..4 {
        let pivot = l[(i, i)] * l[(i, i)];
        if !(pivot > MIN_RCOND * m[(i, i)]) {
            return None;
        }
    }
    let inv = chol.inverse();
    inv.iter().all(|v| v.is_finite()).then_some(inv)
}

/// Inputs for one estimator tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EkfTick {
    pub dt: f64,
    pub control: ControlVectorCase1,
    pub measurement: MeasurementVector,
    pub slopes: [Slope; 3],
}

/// Estimated trajectory plus the filter's health counters.
#[derive(Debug, Clone, PartialEq)]
pub struct EkfRun {
    pub trajectory: Vec<RelativeState>,
    pub health: FilterHealth,
}

/// Runs one filter over time-aligned input streams, starting at the true state.
///
/// For Case 2 the remote fields of each tick's control are ignored.
pub fn run_estimator(
    case: Case,
    ticks: &[EkfTick],
    init: RelativeState,
    sensor: &SensorModel,
    cfg: &EkfConfig,
) -> Result<EkfRun> {
    let mut ekf = Ekf::new(EkfState::new(init, cfg.initial_p(), cfg.q(case)), cfg.r_min);
    let mut trajectory = Vec::with_capacity(ticks.len());
    for tick in ticks {
        ekf.state.dt = tick.dt;
        match case {
            Case::Case1 => ekf.predict_case1(&tick.control),
            Case::Case2 => ekf.predict_case2(&tick.control.into()),
        }
        let obs = ObservationModel::at_estimate(sensor, tick.slopes, ekf.state.x.theta_a);
        ekf.update(&tick.measurement, &obs)?;
        trajectory.push(ekf.state.x);
    }
    Ok(EkfRun {
        trajectory,
        health: ekf.health,
    })
}
