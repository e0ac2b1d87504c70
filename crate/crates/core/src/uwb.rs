//! Synthetic UWB telemetry: two-way-ranging distance plus one PDoA-derived
//! angle per antenna pair.
//!
//! Each of the three antenna pairs measures the bearing of the other robot
//! relative to its own baseline normal (`orientation_offset`). A pair cannot
//! tell which side of its baseline the signal came from, so its reading
//! follows a rising calibration line on the pair-local interval `[-90, 90]`
//! and a falling line on `[90, 270]`. Readings past either extremity fold
//! back into range, and near the extremities the reading can also jump to the
//! opposite extremity (a phase wrap).

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wrap_deg, wrap_signed_deg, AngleDeg};
use crate::kinematics::RelativeState;

pub const CALIBRATION_SCHEMA_VERSION: u32 = 1;
/// Standard deviation of the TWR distance noise, meters.
pub const DISTANCE_SIGMA_M: f64 = 0.0343;
/// Angular spacing of the dispersion table, degrees.
pub const DISPERSION_BIN_WIDTH_DEG: f64 = 3.66;
pub const ANTENNA_SPACING_M: f64 = 0.027;

pub const DEFAULT_SIGMA_MIN_DEG: f64 = 3.0;
pub const DEFAULT_SIGMA_MAX_DEG: f64 = 15.0;
pub const DEFAULT_WRAP_PROBABILITY_MAX: f64 = 0.1;

/// Variance scale applied to the filter noise model when sensor noise is off.
const NOISELESS_VARIANCE_SCALE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slope {
    Rising,
    Falling,
}

impl Slope {
    pub const BOTH: [Slope; 2] = [Slope::Rising, Slope::Falling];
}

/// One linear calibration branch: `reading = slope * local + intercept`
/// for pair-local angles `local` in `valid_range`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeLine {
    pub slope: f64,
    pub intercept: f64,
    pub valid_range: (f64, f64),
}

impl SlopeLine {
    fn center(&self) -> f64 {
        0.5 * (self.valid_range.0 + self.valid_range.1)
    }

    /// Representative of a pair-local angle in the window centered on this line's range.
    pub fn local_repr(&self, local_deg: f64) -> f64 {
        self.center() + wrap_signed_deg(local_deg - self.center())
    }

    pub fn contains(&self, local_deg: f64) -> bool {
        let l = self.local_repr(local_deg);
        l >= self.valid_range.0 - 1e-9 && l <= self.valid_range.1 + 1e-9
    }

    pub fn forward(&self, local_deg: f64) -> f64 {
        self.slope * self.local_repr(local_deg) + self.intercept
    }

    /// Pair-local angle producing `reading`, clamped to the valid range.
    /// The flag is set when clamping was needed.
    pub fn inverse(&self, reading: f64) -> (f64, bool) {
        let local = (reading - self.intercept) / self.slope;
        let (lo, hi) = self.valid_range;
        if local < lo - 1e-9 {
            (lo, true)
        } else if local > hi + 1e-9 {
            (hi, true)
        } else {
            (local.clamp(lo, hi), false)
        }
    }
}

/// Calibration of one antenna pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairCalibration {
    pub pair_id: u8,
    pub orientation_offset: AngleDeg,
    pub rising: SlopeLine,
    pub falling: SlopeLine,
}

impl PairCalibration {
    /// Default pair: unit slopes, extremities at ±90°.
    pub fn symmetric(pair_id: u8, offset_deg: f64) -> Self {
        Self {
            pair_id,
            orientation_offset: AngleDeg::new(offset_deg),
            rising: SlopeLine {
                slope: 1.0,
                intercept: 0.0,
                valid_range: (-90.0, 90.0),
            },
            falling: SlopeLine {
                slope: -1.0,
                intercept: 180.0,
                valid_range: (90.0, 270.0),
            },
        }
    }

    pub fn line(&self, slope: Slope) -> &SlopeLine {
        match slope {
            Slope::Rising => &self.rising,
            Slope::Falling => &self.falling,
        }
    }

    /// Pair-local angle in `[0, 360)` of a global bearing.
    pub fn local_angle(&self, theta_a: AngleDeg) -> AngleDeg {
        AngleDeg::new(theta_a.deg() - self.orientation_offset.deg())
    }

    /// The branch a pair-local angle physically lies on.
    pub fn true_slope(&self, local: AngleDeg) -> Slope {
        if self.rising.contains(local.deg()) {
            Slope::Rising
        } else {
            Slope::Falling
        }
    }

    /// Range of readings the pair can report.
    pub fn reading_range(&self) -> (f64, f64) {
        let a = self.rising.slope * self.rising.valid_range.0 + self.rising.intercept;
        let b = self.rising.slope * self.rising.valid_range.1 + self.rising.intercept;
        (a.min(b), a.max(b))
    }

    fn reading_repr(&self, reading: f64) -> f64 {
        let (lo, hi) = self.reading_range();
        let c = 0.5 * (lo + hi);
        c + wrap_signed_deg(reading - c)
    }

    /// Reflects a reading that overshot an extremity back into range.
    pub fn fold(&self, reading: f64) -> f64 {
        let (lo, hi) = self.reading_range();
        let mut r = reading;
        for _ in 0..4 {
            if r > hi {
                r = 2.0 * hi - r;
            } else if r < lo {
                r = 2.0 * lo - r;
            } else {
                break;
            }
        }
        r.clamp(lo, hi)
    }

    /// Jumps a reading to the mirror position near the opposite extremity.
    pub fn wrap_to_opposite(&self, reading: f64) -> f64 {
        let (lo, hi) = self.reading_range();
        lo + hi - reading
    }

    /// Reading predicted on the given branch for a global bearing.
    pub fn predict(&self, slope: Slope, theta_a: AngleDeg) -> f64 {
        self.line(slope).forward(self.local_angle(theta_a).deg())
    }

    /// Global-bearing candidate obtained by inverting one branch at `reading`.
    pub fn candidate(&self, slope: Slope, reading: AngleDeg) -> (AngleDeg, f64, bool) {
        let r = self.reading_repr(reading.deg());
        let (local, clamped) = self.line(slope).inverse(r);
        (
            AngleDeg::new(local + self.orientation_offset.deg()),
            local,
            clamped,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let id = self.pair_id;
        if !(self.rising.slope > 0.0) {
            return Err(Error::Calibration(format!(
                "pair {id}: rising slope must be positive, got {}",
                self.rising.slope
            )));
        }
        if !(self.falling.slope < 0.0) {
            return Err(Error::Calibration(format!(
                "pair {id}: falling slope must be negative, got {}",
                self.falling.slope
            )));
        }
        let (rl, rh) = self.rising.valid_range;
        let (fl, fh) = self.falling.valid_range;
        if !(rl < rh && fl < fh) {
            return Err(Error::Calibration(format!("pair {id}: empty valid range")));
        }
        // The two branches must tile the full circle.
        let gap_hi = (fl - rh).abs();
        let gap_lo = (fh - 360.0 - rl).abs();
        if gap_hi > 1e-9 || gap_lo > 1e-9 {
            return Err(Error::Calibration(format!(
                "pair {id}: valid ranges [{rl}, {rh}] and [{fl}, {fh}] do not cover the circle"
            )));
        }
        Ok(())
    }
}

/// One angular bin of the per-pair noise model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DispersionBin {
    pub center_deg: f64,
    pub mean_offset: f64,
    pub std_dev: f64,
    pub wrap_probability: f64,
}

/// Per-pair reading noise indexed by pair-local angle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispersionTable {
    pub bin_width_deg: f64,
    pub pair1: Vec<DispersionBin>,
    pub pair2: Vec<DispersionBin>,
    pub pair3: Vec<DispersionBin>,
}

/// Parametric noise profile used to build the default table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DispersionProfile {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub wrap_probability_max: f64,
}

impl Default for DispersionProfile {
    fn default() -> Self {
        Self {
            sigma_min: DEFAULT_SIGMA_MIN_DEG,
            sigma_max: DEFAULT_SIGMA_MAX_DEG,
            wrap_probability_max: DEFAULT_WRAP_PROBABILITY_MAX,
        }
    }
}

impl DispersionProfile {
    /// Standard deviation at a pair-local angle: smallest facing the pair,
    /// largest at the ±90° extremities.
    pub fn sigma(&self, local_deg: f64) -> f64 {
        let s = local_deg.to_radians().sin().abs();
        self.sigma_min + (self.sigma_max - self.sigma_min) * s.powi(3)
    }

    /// Wrap probability: zero within 60° of either broadside direction,
    /// rising quadratically to the maximum at the extremities.
    pub fn wrap_probability(&self, local_deg: f64) -> f64 {
        let s = local_deg.to_radians().sin().abs();
        let edge = 60f64.to_radians().sin();
        let u = ((s - edge) / (1.0 - edge)).clamp(0.0, 1.0);
        self.wrap_probability_max * u * u
    }

    pub fn table(&self, bin_width_deg: f64) -> DispersionTable {
        let n = bin_count(bin_width_deg);
        let bins: Vec<DispersionBin> = (0..n)
            .map(|i| {
                let c = i as f64 * bin_width_deg;
                DispersionBin {
                    center_deg: c,
                    mean_offset: 0.0,
                    std_dev: self.sigma(c),
                    wrap_probability: self.wrap_probability(c),
                }
            })
            .collect();
        DispersionTable {
            bin_width_deg,
            pair1: bins.clone(),
            pair2: bins.clone(),
            pair3: bins,
        }
    }
}

fn bin_count(width: f64) -> usize {
    (360.0 / width - 1e-9).ceil() as usize
}

impl DispersionTable {
    pub fn pair(&self, idx: usize) -> &[DispersionBin] {
        match idx {
            0 => &self.pair1,
            1 => &self.pair2,
            2 => &self.pair3,
            _ => panic!("pair index {idx} out of range"),
        }
    }

    /// Bin whose center is circularly nearest the pair-local angle.
    pub fn lookup(&self, pair_idx: usize, local: AngleDeg) -> &DispersionBin {
        let bins = self.pair(pair_idx);
        let n = bins.len();
        let pos = local.deg() / self.bin_width_deg;
        let lo = (pos.floor() as usize) % n;
        let hi = (lo + 1) % n;
        let d_lo = local.diff(AngleDeg::new(bins[lo].center_deg)).abs();
        let d_hi = local.diff(AngleDeg::new(bins[hi].center_deg)).abs();
        if d_hi < d_lo {
            &bins[hi]
        } else {
            &bins[lo]
        }
    }

    pub fn min_std_dev(&self) -> f64 {
        (0..3)
            .flat_map(|p| self.pair(p).iter().map(|b| b.std_dev))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bin_width_deg > 0.0 && self.bin_width_deg <= 360.0) {
            return Err(Error::Calibration(format!(
                "bin_width_deg must be in (0, 360], got {}",
                self.bin_width_deg
            )));
        }
        let n = bin_count(self.bin_width_deg);
        for p in 0..3 {
            let bins = self.pair(p);
            if bins.len() != n {
                return Err(Error::Calibration(format!(
                    "dispersion.pair{}: expected {n} bins for width {}, found {}",
                    p + 1,
                    self.bin_width_deg,
                    bins.len()
                )));
            }
            for (i, b) in bins.iter().enumerate() {
                let at = format!(
                    "dispersion.pair{} bin {i} (center {}°)",
                    p + 1,
                    b.center_deg
                );
                let expected = i as f64 * self.bin_width_deg;
                if (b.center_deg - expected).abs() > 1e-6 {
                    return Err(Error::Calibration(format!(
                        "{at}: center should be {expected}"
                    )));
                }
                if !(b.std_dev > 0.0) || !b.std_dev.is_finite() {
                    return Err(Error::Calibration(format!(
                        "{at}: std_dev must be > 0, got {}",
                        b.std_dev
                    )));
                }
                if !(0.0..=1.0).contains(&b.wrap_probability) {
                    return Err(Error::Calibration(format!(
                        "{at}: wrap_probability must be in [0, 1], got {}",
                        b.wrap_probability
                    )));
                }
                if !b.mean_offset.is_finite() {
                    return Err(Error::Calibration(format!("{at}: mean_offset not finite")));
                }
            }
        }
        Ok(())
    }
}

/// Complete calibration set: the three pairs plus their dispersion tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub schema_version: u32,
    pub antenna_spacing_m: f64,
    pub pairs: [PairCalibration; 3],
    pub dispersion: DispersionTable,
}

impl Default for Calibration {
    fn default() -> Self {
        default_calibration()
    }
}

/// Pairs at 0°, 120° and 240° with the default dispersion profile.
pub fn default_calibration() -> Calibration {
    calibration_with_profile(&DispersionProfile::default())
}

pub fn calibration_with_profile(profile: &DispersionProfile) -> Calibration {
    Calibration {
        schema_version: CALIBRATION_SCHEMA_VERSION,
        antenna_spacing_m: ANTENNA_SPACING_M,
        pairs: [
            PairCalibration::symmetric(1, 0.0),
            PairCalibration::symmetric(2, 120.0),
            PairCalibration::symmetric(3, 240.0),
        ],
        dispersion: profile.table(DISPERSION_BIN_WIDTH_DEG),
    }
}

impl Calibration {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CALIBRATION_SCHEMA_VERSION {
            return Err(Error::Calibration(format!(
                "unsupported schema_version {} (expected {CALIBRATION_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        for (i, p) in self.pairs.iter().enumerate() {
            if p.pair_id as usize != i + 1 {
                return Err(Error::Calibration(format!(
                    "pairs[{i}]: pair_id must be {}, got {}",
                    i + 1,
                    p.pair_id
                )));
            }
            p.validate()?;
        }
        self.dispersion.validate()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("calibration serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cal: Calibration =
            toml::from_str(text).map_err(|e| Error::Calibration(e.to_string()))?;
        cal.validate()?;
        Ok(cal)
    }
}

/// Measured outputs at one estimator tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementVector {
    pub pdoa_angles: [AngleDeg; 3],
    pub distance: f64,
}

/// A bearing hypothesis from inverting one branch of one pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub pair: usize,
    pub slope: Slope,
    pub angle: AngleDeg,
    /// Pair-local angle on the branch.
    pub local_deg: f64,
    pub certainty: f64,
    pub clamped: bool,
}

/// Penalty applied to a candidate whose reading fell outside its branch.
const CLAMPED_CERTAINTY_FACTOR: f64 = 0.1;

/// Six bearing candidates, two per pair, ordered pair-major with the rising
/// branch first.
pub fn candidate_angles(m: &MeasurementVector, cal: &Calibration) -> [Candidate; 6] {
    let sigma_floor = cal.dispersion.min_std_dev();
    let mut out = [Candidate {
        pair: 0,
        slope: Slope::Rising,
        angle: AngleDeg::ZERO,
        local_deg: 0.0,
        certainty: 0.0,
        clamped: false,
    }; 6];
    for (p, pair) in cal.pairs.iter().enumerate() {
        for (s, slope) in Slope::BOTH.into_iter().enumerate() {
            let (angle, local, clamped) = pair.candidate(slope, m.pdoa_angles[p]);
            let sigma = cal.dispersion.lookup(p, AngleDeg::new(local)).std_dev;
            let mut certainty = (sigma_floor / sigma).clamp(0.0, 1.0);
            if clamped {
                certainty *= CLAMPED_CERTAINTY_FACTOR;
            }
            out[2 * p + s] = Candidate {
                pair: p,
                slope,
                angle,
                local_deg: local,
                certainty,
                clamped,
            };
        }
    }
    out
}

/// The UWB sensor: calibration, distance noise, and a noise switch.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorModel {
    pub calibration: Calibration,
    pub distance_sigma_m: f64,
    pub noise_enabled: bool,
}

impl Default for SensorModel {
    fn default() -> Self {
        Self::new(default_calibration())
    }
}

impl SensorModel {
    pub fn new(calibration: Calibration) -> Self {
        Self {
            calibration,
            distance_sigma_m: DISTANCE_SIGMA_M,
            noise_enabled: true,
        }
    }

    pub fn noiseless(calibration: Calibration) -> Self {
        Self {
            noise_enabled: false,
            ..Self::new(calibration)
        }
    }

    /// Draws one measurement vector for the given true relative state.
    ///
    /// Random draws happen in a fixed order (distance, then each pair's
    /// reading noise and wrap test) so streams are reproducible per seed.
    pub fn measure<R: Rng + ?Sized>(
        &self,
        truth: &RelativeState,
        rng: &mut R,
    ) -> MeasurementVector {
        let cal = &self.calibration;
        let distance = if self.noise_enabled {
            let z: f64 = rng.sample(StandardNormal);
            truth.r_rel + self.distance_sigma_m * z
        } else {
            truth.r_rel
        };
        let mut readings = [AngleDeg::ZERO; 3];
        for (p, pair) in cal.pairs.iter().enumerate() {
            let local = pair.local_angle(truth.theta_a);
            let slope = pair.true_slope(local);
            let mut reading = pair.line(slope).forward(local.deg());
            if self.noise_enabled {
                let bin = cal.dispersion.lookup(p, local);
                let z: f64 = rng.sample(StandardNormal);
                let u: f64 = rng.random();
                reading = pair.fold(reading + bin.mean_offset + bin.std_dev * z);
                if u < bin.wrap_probability {
                    reading = pair.wrap_to_opposite(reading);
                }
            }
            readings[p] = wrap_deg(reading).expect("finite reading");
        }
        MeasurementVector {
            pdoa_angles: readings,
            // Keep the reported range strictly positive.
            distance: distance.max(1e-6),
        }
    }

    /// Variance of each pair's reading at the given bearing estimate, deg².
    pub fn angle_variance(&self, pair: usize, theta_est: AngleDeg) -> f64 {
        let local = self.calibration.pairs[pair].local_angle(theta_est);
        let sd = self.calibration.dispersion.lookup(pair, local).std_dev;
        let var = sd * sd;
        if self.noise_enabled {
            var
        } else {
            var * NOISELESS_VARIANCE_SCALE
        }
    }

    pub fn distance_variance(&self) -> f64 {
        let var = self.distance_sigma_m * self.distance_sigma_m;
        if self.noise_enabled {
            var
        } else {
            var * NOISELESS_VARIANCE_SCALE
        }
    }
}
