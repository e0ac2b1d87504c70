//! The reference angle-fusion estimator used as the comparison baseline.
//!
//! Per tick it (1) inverts each pair's reading on both calibration branches
//! and scores each candidate, (2) scores each branch by how many of the other
//! pairs' candidates fall inside that branch's sector, (3) keeps the
//! candidate on the better branch of every pair and (4) fuses the surviving
//! three, then smooths the result with an exponential moving average.

use serde::{Deserialize, Serialize};

use crate::geometry::{circular_mean_deg, AngleDeg};
use crate::uwb::{candidate_angles, Calibration, Candidate, MeasurementVector, Slope};

/// How branch scores are reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertaintyMode {
    /// The two branch certainties of a pair sum to one.
    #[default]
    Normalized,
    /// Each branch certainty is its vote share of all other-pair certainty.
    Unnormalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub closeness_threshold_deg: f64,
    pub ema_alpha: f64,
    pub certainty_mode: CertaintyMode,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            closeness_threshold_deg: 10.0,
            ema_alpha: 0.3,
            certainty_mode: CertaintyMode::Normalized,
        }
    }
}

/// Branch chosen for each pair together with both branch certainties.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeSelection {
    pub chosen: [Slope; 3],
    /// `[rising, falling]` certainty per pair.
    pub certainty: [[f64; 2]; 3],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineState {
    pub ema_angle: Option<AngleDeg>,
    pub ema_alpha: f64,
    pub last_distance: f64,
}

impl BaselineState {
    pub fn new(ema_alpha: f64) -> Self {
        assert!(
            ema_alpha > 0.0 && ema_alpha <= 1.0,
            "ema_alpha must be in (0, 1]"
        );
        Self {
            ema_angle: None,
            ema_alpha,
            last_distance: 0.0,
        }
    }

    pub fn reset(self) -> Self {
        Self::new(self.ema_alpha)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineEstimate {
    pub angle: AngleDeg,
    /// Fused angle before smoothing.
    pub fused: AngleDeg,
    pub distance: f64,
    pub slopes: SlopeSelection,
}

/// Scores both branches of every pair from the other pairs' candidates.
pub fn select_slopes(
    cands: &[Candidate; 6],
    cal: &Calibration,
    mode: CertaintyMode,
) -> SlopeSelection {
    let mut chosen = [Slope::Rising; 3];
    let mut certainty = [[0.0; 2]; 3];
    for (p, pair) in cal.pairs.iter().enumerate() {
        let mut votes = [0.0; 2];
        let mut total = 0.0;
        for c in cands.iter().filter(|c| c.pair != p) {
            total += c.certainty;
            let local = pair.local_angle(c.angle).deg();
            for (s, slope) in Slope::BOTH.into_iter().enumerate() {
                if pair.line(slope).contains(local) {
                    votes[s] += c.certainty;
                }
            }
        }
        let scores = match mode {
            CertaintyMode::Normalized => {
                let sum = votes[0] + votes[1];
                if sum > 0.0 {
                    [votes[0] / sum, votes[1] / sum]
                } else {
                    [0.5, 0.5]
                }
            }
            CertaintyMode::Unnormalized => {
                if total > 0.0 {
                    [(votes[0] / total).min(1.0), (votes[1] / total).min(1.0)]
                } else {
                    [0.0, 0.0]
                }
            }
        };
        certainty[p] = scores;
        chosen[p] = if scores[1] > scores[0] {
            Slope::Falling
        } else {
            Slope::Rising
        };
    }
    SlopeSelection { chosen, certainty }
}

/// Combines three bearings: the closest two if they agree within
/// `threshold`, otherwise all three.
pub fn fuse(angles: [AngleDeg; 3], threshold: f64) -> AngleDeg {
    let pairs = [(0, 1), (0, 2), (1, 2)];
    let (i, j) = pairs
        .into_iter()
        .min_by(|&(a, b), &(c, d)| {
            let x = angles[a].diff(angles[b]).abs();
            let y = angles[c].diff(angles[d]).abs();
            x.total_cmp(&y)
        })
        .unwrap();
    if angles[i].diff(angles[j]).abs() <= threshold {
        // Midpoint along the short arc.
        angles[j].offset(0.5 * angles[i].diff(angles[j]))
    } else {
        circular_mean_deg(&angles.map(|a| (a.deg(), 1.0))).unwrap_or(angles[0])
    }
}

/// One tick of the baseline estimator.
pub fn estimate(
    m: &MeasurementVector,
    cal: &Calibration,
    cfg: &BaselineConfig,
    state: &mut BaselineState,
) -> BaselineEstimate {
    let cands = candidate_angles(m, cal);
    let slopes = select_slopes(&cands, cal, cfg.certainty_mode);
    let picked = [0, 1, 2].map(|p| {
        let s = match slopes.chosen[p] {
            Slope::Rising => 0,
            Slope::Falling => 1,
        };
        cands[2 * p + s].angle
    });
    let fused = fuse(picked, cfg.closeness_threshold_deg);
    let angle = match state.ema_angle {
        None => fused,
        Some(prev) => prev.offset(state.ema_alpha * fused.diff(prev)),
    };
    state.ema_angle = Some(angle);
    state.last_distance = m.distance;
    BaselineEstimate {
        angle,
        fused,
        distance: m.distance,
        slopes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::RelativeState;
    use crate::uwb::{default_calibration, SensorModel};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn noiseless_measure(deg: f64) -> MeasurementVector {
        SensorModel::noiseless(default_calibration()).measure(
            &RelativeState::new(deg, 2.0),
            &mut ChaCha8Rng::seed_from_u64(0),
        )
    }

    #[test]
    fn noiseless_fresh_estimate_is_exact() {
        let cal = default_calibration();
        let cfg = BaselineConfig::default();
        let mut st = BaselineState::new(cfg.ema_alpha);
        let e = estimate(&noiseless_measure(30.0), &cal, &cfg, &mut st);
        assert_abs_diff_eq!(e.angle.diff(AngleDeg::new(30.0)), 0.0, epsilon = 1e-9);
        assert_eq!(e.distance, 2.0);
        assert_eq!(e.slopes.chosen[0], Slope::Rising);
        assert_eq!(e.slopes.chosen[2], Slope::Falling);
    }

    #[test]
    fn fuse_two_closest() {
        let f = fuse([29.0, 31.0, 170.0].map(AngleDeg::new), 10.0);
        assert_abs_diff_eq!(f.deg(), 30.0, epsilon = 1e-12);
        let f = fuse([355.0, 3.0, 170.0].map(AngleDeg::new), 10.0);
        assert_abs_diff_eq!(f.deg(), 359.0, epsilon = 1e-12);
        // Too far apart: circular mean of all three.
        let f = fuse([0.0, 40.0, 80.0].map(AngleDeg::new), 10.0);
        assert_abs_diff_eq!(f.deg(), 40.0, epsilon = 1e-9);
    }

    #[test]
    fn reset_clears_history() {
        let cal = default_calibration();
        let cfg = BaselineConfig::default();
        let mut st = BaselineState::new(cfg.ema_alpha);
        for deg in [100.0, 120.0, 200.0] {
            estimate(&noiseless_measure(deg), &cal, &cfg, &mut st);
        }
        let mut st = st.reset();
        assert_eq!(st.reset(), st);
        assert_eq!(st, BaselineState::new(cfg.ema_alpha));
        let e = estimate(&noiseless_measure(30.0), &cal, &cfg, &mut st);
        assert_abs_diff_eq!(e.angle.diff(AngleDeg::new(30.0)), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn ema_converges_geometrically() {
        let cal = default_calibration();
        let cfg = BaselineConfig::default();
        let mut st = BaselineState::new(cfg.ema_alpha);
        estimate(&noiseless_measure(350.0), &cal, &cfg, &mut st);
        let mut prev_err = AngleDeg::new(350.0).diff(AngleDeg::new(20.0)).abs();
        for _ in 0..20 {
            let e = estimate(&noiseless_measure(20.0), &cal, &cfg, &mut st);
            let err = e.angle.diff(AngleDeg::new(20.0)).abs();
            assert_abs_diff_eq!(err, prev_err * (1.0 - cfg.ema_alpha), epsilon = 1e-9);
            prev_err = err;
        }
    }

    #[test]
    fn normalized_certainties_sum_to_one() {
        let cal = default_calibration();
        let m = noiseless_measure(75.0);
        let sel = select_slopes(&candidate_angles(&m, &cal), &cal, CertaintyMode::Normalized);
        for c in sel.certainty {
            assert_abs_diff_eq!(c[0] + c[1], 1.0, epsilon = 1e-12);
        }
        let sel = select_slopes(
            &candidate_angles(&m, &cal),
            &cal,
            CertaintyMode::Unnormalized,
        );
        for c in sel.certainty {
            assert!(c.iter().all(|x| (0.0..=1.0).contains(x)));
        }
    }

    proptest! {
        #[test]
        fn noiseless_is_exact_everywhere(deg in 0.0f64..360.0) {
            let cal = default_calibration();
            let cfg = BaselineConfig::default();
            let mut st = BaselineState::new(cfg.ema_alpha);
            for _ in 0..3 {
                let e = estimate(&noiseless_measure(deg), &cal, &cfg, &mut st);
                prop_assert!(e.angle.diff(AngleDeg::new(deg)).abs() < 1e-6, "{} -> {}", deg, e.angle);
            }
        }

        #[test]
        fn output_is_a_wrapped_angle(seed in any::<u64>(), deg in 0.0f64..360.0) {
            let cal = default_calibration();
            let sensor = SensorModel::new(cal.clone());
            let cfg = BaselineConfig::default();
            let mut st = BaselineState::new(cfg.ema_alpha);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..10 {
                let m = sensor.measure(&RelativeState::new(deg, 2.0), &mut rng);
                let e = estimate(&m, &cal, &cfg, &mut st);
                prop_assert!((0.0..360.0).contains(&e.angle.deg()));
            }
        }
    }
}
