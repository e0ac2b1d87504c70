//! Multirate simulation of one scenario variant and the batch protocol.
//!
//! Physics advances on a 1 ms grid. Estimator ticks fall on the whole
//! millisecond nearest to `k / rate`, so the 28 Hz schedule alternates 35 and
//! 36 ms intervals and lands exactly on 560 ticks in 20 s; each filter
//! predicts over the actual interval. Robot B's speed and bearing reach the
//! Case 1 filter only on every `divisor`-th tick and are held in between.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::{self, BaselineConfig, BaselineState};
use crate::ekf::{run_estimator, Case, ControlVectorCase1, EkfConfig, EkfTick, FilterHealth};
use crate::error::{Error, Result};
use crate::geometry::AngleDeg;
use crate::kinematics::{
    relative_state_derivative, step_pose, theta_b_from_theta_a, true_relative_state, ControlInput,
    RelativeState, DEFAULT_OMEGA_MAX_DEG, DEFAULT_R_MIN, DEFAULT_V_MAX,
};
use crate::scenario::{builtin_scenarios, Scenario, ScenarioVariant};
use crate::stats::rmse;
use crate::uwb::SensorModel;

pub const MAX_DIVISOR: u32 = 10;
pub const ALL_DIVISORS: [u32; 10] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Baseline,
    #[serde(rename = "ekf_case1")]
    Case1,
    #[serde(rename = "ekf_case2")]
    Case2,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 3] = [
        EstimatorKind::Baseline,
        EstimatorKind::Case1,
        EstimatorKind::Case2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Baseline => "baseline",
            EstimatorKind::Case1 => "ekf_case1",
            EstimatorKind::Case2 => "ekf_case2",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    /// Sort key placing the baseline first, then Case 2, then Case 1.
    fn order(self) -> u8 {
        match self {
            EstimatorKind::Baseline => 0,
            EstimatorKind::Case2 => 1,
            EstimatorKind::Case1 => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EstimatorSet {
    pub baseline: bool,
    pub ekf_case1: bool,
    pub ekf_case2: bool,
}

impl Default for EstimatorSet {
    fn default() -> Self {
        Self {
            baseline: true,
            ekf_case1: true,
            ekf_case2: true,
        }
    }
}

impl EstimatorSet {
    pub fn contains(&self, k: EstimatorKind) -> bool {
        match k {
            EstimatorKind::Baseline => self.baseline,
            EstimatorKind::Case1 => self.ekf_case1,
            EstimatorKind::Case2 => self.ekf_case2,
        }
    }

    pub fn from_kinds(kinds: &[EstimatorKind]) -> Self {
        Self {
            baseline: kinds.contains(&EstimatorKind::Baseline),
            ekf_case1: kinds.contains(&EstimatorKind::Case1),
            ekf_case2: kinds.contains(&EstimatorKind::Case2),
        }
    }
}

/// Timing and actuator limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimSettings {
    pub physics_step_ms: u32,
    pub estimator_rate_hz: f64,
    pub v_max: f64,
    pub omega_max_deg: f64,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self {
            physics_step_ms: 1,
            estimator_rate_hz: 28.0,
            v_max: DEFAULT_V_MAX,
            omega_max_deg: DEFAULT_OMEGA_MAX_DEG,
        }
    }
}

impl SimSettings {
    pub fn physics_dt(&self) -> f64 {
        self.physics_step_ms as f64 * 1e-3
    }

    /// Estimator tick times in milliseconds, starting with 0.
    pub fn tick_times_ms(&self, duration_s: f64) -> Vec<u64> {
        let n = (duration_s * self.estimator_rate_hz + 1e-9).floor() as u64;
        let step = self.physics_step_ms as f64;
        (0..=n)
            .map(|k| {
                let t = k as f64 * 1000.0 / self.estimator_rate_hz;
                ((t / step).round() * step) as u64
            })
            .collect()
    }

    /// Rate actually achieved by the quantized schedule.
    pub fn effective_rate_hz(&self, duration_s: f64) -> f64 {
        let t = self.tick_times_ms(duration_s);
        let last = *t.last().unwrap();
        if last == 0 {
            return 0.0;
        }
        (t.len() - 1) as f64 / (last as f64 * 1e-3)
    }

    pub fn validate(&self) -> Result<()> {
        if self.physics_step_ms == 0 {
            return Err(Error::Config("physics_step_ms must be positive".into()));
        }
        if !(self.estimator_rate_hz > 0.0)
            || self.estimator_rate_hz > 1000.0 / self.physics_step_ms as f64
        {
            return Err(Error::Config(format!(
                "estimator_rate_hz {} must be positive and not exceed the physics rate",
                self.estimator_rate_hz
            )));
        }
        if !(self.v_max > 0.0) || !(self.omega_max_deg > 0.0) {
            return Err(Error::Config("velocity limits must be positive".into()));
        }
        Ok(())
    }
}

/// Request for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub scenario: String,
    pub sweep_index: usize,
    pub data_rate_divisor: u32,
    pub estimators: EstimatorSet,
    pub master_seed: u64,
}

/// One row of the results: one estimator on one run (and one divisor for
/// Case 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub scenario: String,
    pub scenario_index: usize,
    pub sweep_index: usize,
    pub sweep_value: f64,
    pub estimator: EstimatorKind,
    /// Robot-B data-rate divisor; only meaningful for Case 1.
    pub divisor: Option<u32>,
    pub master_seed: u64,
    pub run_seed: u64,
    pub ticks: usize,
    pub effective_rate_hz: f64,
    pub rmse_angle_deg: f64,
    pub rmse_distance_m: f64,
    pub min_range_m: f64,
    pub updates: u64,
    pub skipped_updates: u64,
    pub singularity_guards: u64,
    pub psd_violations: u64,
    pub min_eigenvalue: Option<f64>,
    pub trajectory_path: Option<String>,
}

impl RunRecord {
    /// Canonical ordering: scenario, sweep, estimator, divisor.
    pub fn sort_key(&self) -> (usize, usize, u8, u32) {
        (
            self.scenario_index,
            self.sweep_index,
            self.estimator.order(),
            self.divisor.unwrap_or(0),
        )
    }
}

/// One estimator tick of a trajectory dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: f64,
    pub theta_true: f64,
    pub r_true: f64,
    pub theta_est: f64,
    pub r_est: f64,
    pub estimator: EstimatorKind,
    pub divisor: Option<u32>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunOutput {
    pub records: Vec<RunRecord>,
    pub trajectory: Vec<TrajectoryRow>,
}

/// Per-run seed from the master seed and the run's coordinates.
pub fn derive_run_seed(master: u64, scenario_index: usize, sweep_index: usize) -> u64 {
    let counter = ((scenario_index as u64) << 32) | sweep_index as u64;
    splitmix64(splitmix64(master) ^ splitmix64(counter.wrapping_add(0x632b_e59b_d9b4_e019)))
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Ground truth sampled at one estimator tick.
#[derive(Debug, Clone, Copy)]
struct TruthSample {
    t_ms: u64,
    rel: RelativeState,
    theta_b: AngleDeg,
    u_a: ControlInput,
    u_b: ControlInput,
}

/// Everything needed to run the scenario catalog.
#[derive(Debug, Clone)]
pub struct Harness {
    pub scenarios: Vec<Scenario>,
    pub sensor: SensorModel,
    pub baseline: BaselineConfig,
    pub ekf: EkfConfig,
    pub sim: SimSettings,
}

impl Default for Harness {
    fn default() -> Self {
        Self {
            scenarios: builtin_scenarios(),
            sensor: SensorModel::default(),
            baseline: BaselineConfig::default(),
            ekf: EkfConfig::default(),
            sim: SimSettings::default(),
        }
    }
}

/// Result of a batch: successful records in canonical order plus any runs
/// that failed.
#[derive(Debug, Clone, Default)]
pub struct BatchOutcome {
    pub records: Vec<RunRecord>,
    pub trajectories: Vec<(String, usize, Vec<TrajectoryRow>)>,
    pub failures: Vec<RunFailure>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunFailure {
    pub scenario: String,
    pub sweep_index: usize,
    pub message: String,
}

impl Harness {
    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.sensor.calibration.validate()?;
        if !(0.0 < self.baseline.ema_alpha && self.baseline.ema_alpha <= 1.0) {
            return Err(Error::Config("baseline.ema_alpha must be in (0, 1]".into()));
        }
        let mut ids = std::collections::HashSet::new();
        for s in &self.scenarios {
            if !ids.insert(s.id.as_str()) {
                return Err(Error::Config(format!("duplicate scenario id {}", s.id)));
            }
            s.validate(
                self.sim.physics_dt(),
                self.sim.v_max,
                self.sim.omega_max_deg,
            )?;
        }
        Ok(())
    }

    pub fn scenario_index(&self, id: &str) -> Result<usize> {
        self.scenarios
            .iter()
            .position(|s| s.id == id)
            .ok_or_else(|| Error::UnknownScenario(id.to_string()))
    }

    /// Runs one scenario variant for the requested estimators and divisors.
    pub fn run_one(&self, cfg: &RunConfig, with_trajectory: bool) -> Result<RunOutput> {
        check_divisors(&[cfg.data_rate_divisor])?;
        let idx = self.scenario_index(&cfg.scenario)?;
        let s = &self.scenarios[idx];
        s.validate(
            self.sim.physics_dt(),
            self.sim.v_max,
            self.sim.omega_max_deg,
        )?;
        self.simulate(
            idx,
            cfg.sweep_index,
            &[cfg.data_rate_divisor],
            cfg.estimators,
            cfg.master_seed,
            with_trajectory,
        )
    }

    /// Simulates one variant once and runs every requested estimator over the
    /// same ground truth and measurement stream.
    pub fn simulate(
        &self,
        scenario_index: usize,
        sweep_index: usize,
        divisors: &[u32],
        estimators: EstimatorSet,
        master_seed: u64,
        with_trajectory: bool,
    ) -> Result<RunOutput> {
        check_divisors(divisors)?;
        let scenario = self
            .scenarios
            .get(scenario_index)
            .ok_or_else(|| Error::UnknownScenario(format!("#{scenario_index}")))?;
        let variant = scenario.variants.get(sweep_index).ok_or_else(|| {
            Error::Config(format!(
                "scenario {} has {} sweep values; index {sweep_index} out of range",
                scenario.id,
                scenario.variants.len()
            ))
        })?;
        let run_seed = derive_run_seed(master_seed, scenario_index, sweep_index);
        let tick_ms = self.sim.tick_times_ms(scenario.duration_s);
        let (samples, min_range) = self.ground_truth(variant, &tick_ms)?;
        let effective_rate = self.sim.effective_rate_hz(scenario.duration_s);

        // One measurement per estimator tick, drawn in tick order.
        let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
        let measurements: Vec<_> = samples[1..]
            .iter()
            .map(|s| self.sensor.measure(&s.rel, &mut rng))
            .collect();

        let cal = &self.sensor.calibration;
        let mut bl_state = BaselineState::new(self.baseline.ema_alpha);
        let bl: Vec<_> = measurements
            .iter()
            .map(|m| baseline::estimate(m, cal, &self.baseline, &mut bl_state))
            .collect();

        let truth = &samples[1..];
        let record = |kind: EstimatorKind,
                      divisor: Option<u32>,
                      est: &[RelativeState],
                      health: Option<FilterHealth>|
         -> Result<RunRecord> {
            let ang: Vec<f64> = truth
                .iter()
                .zip(est)
                .map(|(t, e)| e.theta_a.diff(t.rel.theta_a))
                .collect();
            let dist: Vec<f64> = truth
                .iter()
                .zip(est)
                .map(|(t, e)| e.r_rel - t.rel.r_rel)
                .collect();
            let h = health.unwrap_or_default();
            Ok(RunRecord {
                scenario: scenario.id.clone(),
                scenario_index,
                sweep_index,
                sweep_value: variant.sweep_value,
                estimator: kind,
                divisor,
                master_seed,
                run_seed,
                ticks: est.len(),
                effective_rate_hz: effective_rate,
                rmse_angle_deg: rmse(&ang)?,
                rmse_distance_m: rmse(&dist)?,
                min_range_m: min_range,
                updates: h.updates,
                skipped_updates: h.skipped_updates,
                singularity_guards: h.singularity_guards,
                psd_violations: h.psd_violations,
                min_eigenvalue: health.map(|h| h.min_eigenvalue),
                trajectory_path: None,
            })
        };

        let mut out = RunOutput::default();
        let mut emit = |kind: EstimatorKind,
                        divisor: Option<u32>,
                        est: &[RelativeState],
                        health: Option<FilterHealth>|
         -> Result<()> {
            out.records.push(record(kind, divisor, est, health)?);
            if with_trajectory {
                out.trajectory
                    .extend(truth.iter().zip(est).map(|(t, e)| TrajectoryRow {
                        t: t.t_ms as f64 * 1e-3,
                        theta_true: t.rel.theta_a.deg(),
                        r_true: t.rel.r_rel,
                        theta_est: e.theta_a.deg(),
                        r_est: e.r_rel,
                        estimator: kind,
                        divisor,
                        seed: master_seed,
                    }));
            }
            Ok(())
        };

        if estimators.baseline {
            let est: Vec<_> = bl
                .iter()
                .map(|b| RelativeState {
                    theta_a: b.angle,
                    r_rel: b.distance,
                })
                .collect();
            emit(EstimatorKind::Baseline, None, &est, None)?;
        }

        let init = samples[0].rel;
        let ekf_ticks = |divisor: u32| -> Vec<EkfTick> {
            let mut held = (samples[0].u_b.v, samples[0].theta_b);
            (1..samples.len())
                .map(|k| {
                    let prev = &samples[k - 1];
                    if (k - 1) % divisor as usize == 0 {
                        held = (prev.u_b.v, prev.theta_b);
                    }
                    EkfTick {
                        dt: (samples[k].t_ms - prev.t_ms) as f64 * 1e-3,
                        control: ControlVectorCase1 {
                            v_a: prev.u_a.v,
                            phi_dot_a: prev.u_a.phi_dot,
                            v_b: held.0,
                            theta_b: held.1,
                        },
                        measurement: measurements[k - 1],
                        slopes: bl[k - 1].slopes.chosen,
                    }
                })
                .collect()
        };

        if estimators.ekf_case2 {
            let run = run_estimator(Case::Case2, &ekf_ticks(1), init, &self.sensor, &self.ekf)?;
            emit(
                EstimatorKind::Case2,
                None,
                &run.trajectory,
                Some(run.health),
            )?;
        }
        if estimators.ekf_case1 {
            for &d in divisors {
                let run = run_estimator(Case::Case1, &ekf_ticks(d), init, &self.sensor, &self.ekf)?;
                emit(
                    EstimatorKind::Case1,
                    Some(d),
                    &run.trajectory,
                    Some(run.health),
                )?;
            }
        }
        out.records.sort_by_key(RunRecord::sort_key);
        Ok(out)
    }

    /// Integrates both robots on the physics grid and samples the truth at
    /// every estimator tick. Also returns the minimum range over all steps.
    fn ground_truth(
        &self,
        v: &ScenarioVariant,
        tick_ms: &[u64],
    ) -> Result<(Vec<TruthSample>, f64)> {
        let dt = self.sim.physics_dt();
        let step = self.sim.physics_step_ms as u64;
        let end = *tick_ms.last().unwrap();
        let (mut pa, mut pb) = (v.pose_a, v.pose_b);
        let mut samples = Vec::with_capacity(tick_ms.len());
        let mut next = 0;
        let mut min_range = f64::INFINITY;
        let mut t_ms = 0;
        loop {
            let rel = true_relative_state(&pa, &pb)?;
            if rel.r_rel <= self.ekf.r_min {
                return Err(Error::DegenerateGeometry(format!(
                    "robots collide at t = {:.3} s (range {:.2e} m)",
                    t_ms as f64 * 1e-3,
                    rel.r_rel
                )));
            }
            min_range = min_range.min(rel.r_rel);
            let t = t_ms as f64 * 1e-3;
            let (u_a, u_b) = (v.control_a.at(t), v.control_b.at(t));
            if next < tick_ms.len() && tick_ms[next] == t_ms {
                samples.push(TruthSample {
                    t_ms,
                    rel,
                    theta_b: theta_b_from_theta_a(rel.theta_a, pa.phi, pb.phi),
                    u_a,
                    u_b,
                });
                next += 1;
            }
            if t_ms >= end {
                break;
            }
            pa = step_pose(&pa, &u_a, dt);
            pb = step_pose(&pb, &u_b, dt);
            t_ms += step;
        }
        Ok((samples, min_range))
    }

    /// Runs every variant of every scenario in parallel. Output order is
    /// canonical and independent of the thread count.
    pub fn run_batch(
        &self,
        divisors: &[u32],
        estimators: EstimatorSet,
        master_seed: u64,
        jobs: Option<usize>,
        with_trajectories: bool,
    ) -> Result<BatchOutcome> {
        check_divisors(divisors)?;
        self.validate()?;
        let mut divisors = divisors.to_vec();
        divisors.sort_unstable();
        divisors.dedup();
        let work: Vec<(usize, usize)> = self
            .scenarios
            .iter()
            .enumerate()
            .flat_map(|(i, s)| (0..s.variants.len()).map(move |j| (i, j)))
            .collect();
        let run = || -> Vec<(usize, usize, Result<RunOutput>)> {
            work.par_iter()
                .map(|&(i, j)| {
                    (
                        i,
                        j,
                        self.simulate(i, j, &divisors, estimators, master_seed, with_trajectories),
                    )
                })
                .collect()
        };
        let results = match jobs {
            Some(n) => rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?
                .install(run),
            None => run(),
        };
        let mut out = BatchOutcome::default();
        for (i, j, r) in results {
            match r {
                Ok(o) => {
                    out.records.extend(o.records);
                    if with_trajectories {
                        out.trajectories
                            .push((self.scenarios[i].id.clone(), j, o.trajectory));
                    }
                }
                Err(e) => out.failures.push(RunFailure {
                    scenario: self.scenarios[i].id.clone(),
                    sweep_index: j,
                    message: e.to_string(),
                }),
            }
        }
        out.records.sort_by_key(RunRecord::sort_key);
        Ok(out)
    }
}

fn check_divisors(divisors: &[u32]) -> Result<()> {
    if divisors.is_empty() {
        return Err(Error::Config(
            "at least one data-rate divisor is required".into(),
        ));
    }
    for &d in divisors {
        if !(1..=MAX_DIVISOR).contains(&d) {
            return Err(Error::Config(format!(
                "data-rate divisor {d} outside 1..={MAX_DIVISOR}"
            )));
        }
    }
    Ok(())
}

/// Largest disagreement between the relative state from integrated absolute
/// poses and from directly integrating the relative-state dynamics, both
/// with explicit Euler on the physics grid. Returns `(degrees, meters)`.
pub fn kinematic_consistency(
    v: &ScenarioVariant,
    duration_s: f64,
    sim: &SimSettings,
) -> Result<(f64, f64)> {
    let dt = sim.physics_dt();
    let steps = (duration_s / dt).round() as usize;
    let (mut pa, mut pb) = (v.pose_a, v.pose_b);
    let mut rel = true_relative_state(&pa, &pb)?;
    let (mut max_th, mut max_r) = (0.0f64, 0.0f64);
    for k in 0..steps {
        let t = k as f64 * dt;
        let (ua, ub) = (v.control_a.at(t), v.control_b.at(t));
        let theta_b = theta_b_from_theta_a(rel.theta_a, pa.phi, pb.phi);
        let (td, rd) =
            relative_state_derivative(&rel, ua.v, ub.v, ua.phi_dot, theta_b, DEFAULT_R_MIN)?;
        rel = RelativeState {
            theta_a: rel.theta_a.offset(td * dt),
            r_rel: rel.r_rel + rd * dt,
        };
        pa = step_pose(&pa, &ua, dt);
        pb = step_pose(&pb, &ub, dt);
        let truth = true_relative_state(&pa, &pb)?;
        max_th = max_th.max(truth.theta_a.diff(rel.theta_a).abs());
        max_r = max_r.max((truth.r_rel - rel.r_rel).abs());
    }
    Ok((max_th, max_r))
}
