//! Estimator comparison over a batch of run records, plus the file formats
//! the records and report are written in.
//!
//! Records CSV columns (frozen, in this order):
//! `scenario, scenario_index, sweep_index, sweep_value, estimator, divisor,
//! master_seed, run_seed, ticks, effective_rate_hz, rmse_angle_deg,
//! rmse_distance_m, min_range_m, updates, skipped_updates,
//! singularity_guards, psd_violations, min_eigenvalue, trajectory_path`.
//! `divisor` is empty for the baseline and Case 2; `min_eigenvalue` is empty
//! for the baseline.
//!
//! Trajectory CSV columns: `t, theta_true, r_true, theta_est, r_est,
//! estimator, divisor, seed`.
//!
//! Boxplot CSV columns: `estimator, metric, divisor, rate_hz, n, median, q1,
//! q3, whisker_low, whisker_high, outlier_count, outliers` with outliers
//! joined by `;`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{EstimatorKind, RunRecord, TrajectoryRow};
use crate::stats::{
    boxplot_summary, median, wilcoxon_signed_rank, BoxplotSummary, WilcoxonResult, EXACT_CUTOFF,
};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    AngleDeg,
    DistanceM,
}

impl Metric {
    pub const ALL: [Metric; 2] = [Metric::AngleDeg, Metric::DistanceM];

    pub fn of(self, r: &RunRecord) -> f64 {
        match self {
            Metric::AngleDeg => r.rmse_angle_deg,
            Metric::DistanceM => r.rmse_distance_m,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::AngleDeg => "angle_deg",
            Metric::DistanceM => "distance_m",
        }
    }
}

/// Pairing key: runs are matched on scenario, sweep index and master seed.
type RunKey = (String, usize, u64);

fn key(r: &RunRecord) -> RunKey {
    (r.scenario.clone(), r.sweep_index, r.master_seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedianEntry {
    pub estimator: EstimatorKind,
    pub metric: Metric,
    pub divisor: Option<u32>,
    pub rate_hz: Option<f64>,
    pub n: usize,
    pub median: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonEntry {
    /// Estimator compared against the baseline.
    pub against: EstimatorKind,
    pub metric: Metric,
    pub divisor: Option<u32>,
    pub rate_hz: Option<f64>,
    pub result: WilcoxonResult,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxplotEntry {
    pub estimator: EstimatorKind,
    pub metric: Metric,
    pub divisor: Option<u32>,
    pub rate_hz: Option<f64>,
    pub n: usize,
    pub summary: BoxplotSummary,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HealthSummary {
    pub updates: u64,
    pub skipped_updates: u64,
    pub skipped_fraction: f64,
    pub singularity_guards: u64,
    pub psd_violations: u64,
    pub min_eigenvalue: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub schema_version: u32,
    pub runs: usize,
    pub effective_rate_hz: f64,
    pub exact_test_cutoff: usize,
    pub significance_level: f64,
    pub medians: Vec<MedianEntry>,
    pub wilcoxon: Vec<WilcoxonEntry>,
    pub boxplots: Vec<BoxplotEntry>,
    pub health: HealthSummary,
}

impl CompareReport {
    pub fn median_of(
        &self,
        est: EstimatorKind,
        metric: Metric,
        divisor: Option<u32>,
    ) -> Option<f64> {
        self.medians
            .iter()
            .find(|m| m.estimator == est && m.metric == metric && m.divisor == divisor)
            .map(|m| m.median)
    }

    pub fn wilcoxon_of(
        &self,
        against: EstimatorKind,
        metric: Metric,
        divisor: Option<u32>,
    ) -> Option<&WilcoxonResult> {
        self.wilcoxon
            .iter()
            .find(|w| w.against == against && w.metric == metric && w.divisor == divisor)
            .map(|w| &w.result)
    }

    pub fn case1_divisors(&self) -> Vec<u32> {
        let set: BTreeSet<u32> = self
            .medians
            .iter()
            .filter(|m| m.estimator == EstimatorKind::Case1)
            .filter_map(|m| m.divisor)
            .collect();
        set.into_iter().collect()
    }
}

/// Groups records by (estimator, divisor), with each group's values ordered
/// by pairing key.
fn groups(
    records: &[RunRecord],
) -> Result<BTreeMap<(EstimatorKind, Option<u32>), BTreeMap<RunKey, &RunRecord>>> {
    let mut g: BTreeMap<_, BTreeMap<RunKey, &RunRecord>> = BTreeMap::new();
    for r in records {
        let slot = g.entry((r.estimator, r.divisor)).or_default();
        if slot.insert(key(r), r).is_some() {
            return Err(Error::Pairing(format!(
                "duplicate record for {} sweep {} seed {} ({}, divisor {:?})",
                r.scenario,
                r.sweep_index,
                r.master_seed,
                r.estimator.name(),
                r.divisor
            )));
        }
    }
    Ok(g)
}

/// Per-estimator medians, signed-rank tests against the baseline, boxplot
/// summaries and aggregated filter health.
pub fn compare_report(records: &[RunRecord]) -> Result<CompareReport> {
    if records.is_empty() {
        return Err(Error::Pairing("no records to compare".into()));
    }
    let g = groups(records)?;
    let keys: BTreeSet<&RunKey> = g.values().next().unwrap().keys().collect();
    for ((est, div), runs) in &g {
        let these: BTreeSet<&RunKey> = runs.keys().collect();
        if these != keys {
            let missing = keys.symmetric_difference(&these).next().unwrap();
            return Err(Error::Pairing(format!(
                "{} (divisor {:?}) covers a different run set; first mismatch: {} sweep {} seed {}",
                est.name(),
                div,
                missing.0,
                missing.1,
                missing.2
            )));
        }
    }
    let rate = records[0].effective_rate_hz;
    let rate_for = |est: EstimatorKind, div: Option<u32>| match est {
        EstimatorKind::Case1 => div.map(|d| rate / d as f64),
        _ => None,
    };

    let mut medians = Vec::new();
    let mut boxplots = Vec::new();
    for (&(est, div), runs) in &g {
        for metric in Metric::ALL {
            let v: Vec<f64> = runs.values().map(|r| metric.of(r)).collect();
            medians.push(MedianEntry {
                estimator: est,
                metric,
                divisor: div,
                rate_hz: rate_for(est, div),
                n: v.len(),
                median: median(&v)?,
            });
            boxplots.push(BoxplotEntry {
                estimator: est,
                metric,
                divisor: div,
                rate_hz: rate_for(est, div),
                n: v.len(),
                summary: boxplot_summary(&v)?,
            });
        }
    }

    let mut wilcoxon = Vec::new();
    if let Some(base) = g.get(&(EstimatorKind::Baseline, None)) {
        for (&(est, div), runs) in &g {
            if est == EstimatorKind::Baseline {
                continue;
            }
            for metric in Metric::ALL {
                let a: Vec<f64> = base.values().map(|r| metric.of(r)).collect();
                let b: Vec<f64> = runs.values().map(|r| metric.of(r)).collect();
                let result = wilcoxon_signed_rank(&a, &b)?;
                wilcoxon.push(WilcoxonEntry {
                    against: est,
                    metric,
                    divisor: div,
                    rate_hz: rate_for(est, div),
                    significant: !result.degenerate && result.p_value < SIGNIFICANCE_LEVEL,
                    result,
                });
            }
        }
    }

    let mut health = HealthSummary::default();
    for r in records
        .iter()
        .filter(|r| r.estimator != EstimatorKind::Baseline)
    {
        health.updates += r.updates;
        health.skipped_updates += r.skipped_updates;
        health.singularity_guards += r.singularity_guards;
        health.psd_violations += r.psd_violations;
        if let Some(e) = r.min_eigenvalue {
            health.min_eigenvalue = Some(health.min_eigenvalue.map_or(e, |m: f64| m.min(e)));
        }
    }
    let attempts = health.updates + health.skipped_updates;
    health.skipped_fraction = if attempts > 0 {
        health.skipped_updates as f64 / attempts as f64
    } else {
        0.0
    };

    Ok(CompareReport {
        schema_version: REPORT_SCHEMA_VERSION,
        runs: keys.len(),
        effective_rate_hz: rate,
        exact_test_cutoff: EXACT_CUTOFF,
        significance_level: SIGNIFICANCE_LEVEL,
        medians,
        wilcoxon,
        boxplots,
        health,
    })
}

pub fn write_records<W: Write>(w: W, records: &[RunRecord]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in records {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_records<R: Read>(r: R) -> Result<Vec<RunRecord>> {
    let mut rd = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for row in rd.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

pub fn write_trajectory<W: Write>(w: W, rows: &[TrajectoryRow]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_boxplots<W: Write>(w: W, report: &CompareReport) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record([
        "estimator",
        "metric",
        "divisor",
        "rate_hz",
        "n",
        "median",
        "q1",
        "q3",
        "whisker_low",
        "whisker_high",
        "outlier_count",
        "outliers",
    ])?;
    for b in &report.boxplots {
        let s = &b.summary;
        let outliers: Vec<String> = s.outliers.iter().map(|o| o.to_string()).collect();
        wr.write_record([
            b.estimator.name().to_string(),
            b.metric.name().to_string(),
            b.divisor.map(|d| d.to_string()).unwrap_or_default(),
            b.rate_hz.map(|r| r.to_string()).unwrap_or_default(),
            b.n.to_string(),
            s.median.to_string(),
            s.q1.to_string(),
            s.q3.to_string(),
            s.whisker_low.to_string(),
            s.whisker_high.to_string(),
            s.outliers.len().to_string(),
            outliers.join(";"),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn to_json(report: &CompareReport) -> String {
    serde_json::to_string_pretty(report).expect("report serializes")
}

fn fmt_p(p: f64) -> String {
    if p >= 0.001 {
        format!("{p:.3}")
    } else {
        format!("{p:.2e}")
    }
}

/// Human-readable median table and signed-rank p-value table.
pub fn render_text(report: &CompareReport) -> String {
    let mut s = String::new();
    let divs = report.case1_divisors();
    let rate = report.effective_rate_hz;
    let _ = writeln!(
        s,
        "Median RMSE over {} runs (estimator rate {:.2} Hz)",
        report.runs, rate
    );
    let _ = writeln!(
        s,
        "{:<26} {:>12} {:>12}",
        "estimator", "angle [deg]", "dist [m]"
    );
    let row = |s: &mut String, label: String, est, div| {
        let a = report.median_of(est, Metric::AngleDeg, div);
        let d = report.median_of(est, Metric::DistanceM, div);
        if let (Some(a), Some(d)) = (a, d) {
            let _ = writeln!(s, "{label:<26} {a:>12.4} {d:>12.4}");
        }
    };
    row(&mut s, "baseline".into(), EstimatorKind::Baseline, None);
    for &d in &divs {
        row(
            &mut s,
            format!("ekf_case1 @ {:.2} Hz", rate / d as f64),
            EstimatorKind::Case1,
            Some(d),
        );
    }
    row(&mut s, "ekf_case2".into(), EstimatorKind::Case2, None);

    if !report.wilcoxon.is_empty() {
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "Wilcoxon signed-rank p-values against the baseline (two-sided, alpha {})",
            report.significance_level
        );
        let _ = writeln!(
            s,
            "{:>10} {:>14} {:>14} {:>14} {:>14}",
            "rate [Hz]", "case1 angle", "case1 dist", "case2 angle", "case2 dist"
        );
        let p = |est, m, d| {
            report
                .wilcoxon_of(est, m, d)
                .map(|w| fmt_p(w.p_value))
                .unwrap_or_else(|| "-".into())
        };
        let rows: Vec<Option<u32>> = if divs.is_empty() {
            vec![None]
        } else {
            divs.iter().map(|&d| Some(d)).collect()
        };
        for d in rows {
            let label = d
                .map(|d| format!("{:.2}", rate / d as f64))
                .unwrap_or_else(|| "-".into());
            let _ = writeln!(
                s,
                "{:>10} {:>14} {:>14} {:>14} {:>14}",
                label,
                p(EstimatorKind::Case1, Metric::AngleDeg, d),
                p(EstimatorKind::Case1, Metric::DistanceM, d),
                p(EstimatorKind::Case2, Metric::AngleDeg, None),
                p(EstimatorKind::Case2, Metric::DistanceM, None),
            );
        }
    }
    let h = &report.health;
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "Filter health: {} updates, {} skipped ({:.4}%), {} singularity guards, {} PSD violations",
        h.updates,
        h.skipped_updates,
        100.0 * h.skipped_fraction,
        h.singularity_guards,
        h.psd_violations
    );
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{EstimatorSet, Harness};

    fn small_batch() -> Vec<RunRecord> {
        let mut h = Harness::default();
        h.scenarios.truncate(2);
        h.run_batch(&[1, 5], EstimatorSet::default(), 3, Some(2), false)
            .unwrap()
            .records
    }

    #[test]
    fn one_median_per_estimator_metric_divisor() {
        let recs = small_batch();
        let rep = compare_report(&recs).unwrap();
        assert_eq!(rep.runs, 20);
        // baseline + case2 + case1 x 2, two metrics each.
        assert_eq!(rep.medians.len(), 8);
        let mut seen = BTreeSet::new();
        for m in &rep.medians {
            assert!(seen.insert((m.estimator, m.metric, m.divisor)));
        }
        assert_eq!(rep.wilcoxon.len(), 6);
        assert_eq!(rep.case1_divisors(), vec![1, 5]);
    }

    #[test]
    fn mismatched_runs_are_rejected() {
        let mut recs = small_batch();
        let i = recs
            .iter()
            .position(|r| r.estimator == EstimatorKind::Case2)
            .unwrap();
        recs.remove(i);
        assert!(matches!(compare_report(&recs), Err(Error::Pairing(_))));
        let mut recs = small_batch();
        let dup = recs[0].clone();
        recs.push(dup);
        assert!(matches!(compare_report(&recs), Err(Error::Pairing(_))));
    }

    #[test]
    fn records_csv_round_trip() {
        let recs = small_batch();
        let mut buf = Vec::new();
        write_records(&mut buf, &recs).unwrap();
        let header = String::from_utf8(buf.clone())
            .unwrap()
            .lines()
            .next()
            .unwrap()
            .to_string();
        assert_eq!(
            header,
            "scenario,scenario_index,sweep_index,sweep_value,estimator,divisor,master_seed,run_seed,ticks,\
effective_rate_hz,rmse_angle_deg,rmse_distance_m,min_range_m,updates,skipped_updates,\
singularity_guards,psd_violations,min_eigenvalue,trajectory_path"
        );
        let back = read_records(&buf[..]).unwrap();
        assert_eq!(back, recs);
        assert_eq!(
            compare_report(&back).unwrap(),
            compare_report(&recs).unwrap()
        );
    }

    #[test]
    fn text_and_boxplots_render() {
        let rep = compare_report(&small_batch()).unwrap();
        let t = render_text(&rep);
        assert!(t.contains("ekf_case1 @ 28.00 Hz"));
        assert!(t.contains("ekf_case1 @ 5.60 Hz"));
        let mut buf = Vec::new();
        write_boxplots(&mut buf, &rep).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + rep.boxplots.len());
        let json: serde_json::Value = serde_json::from_str(&to_json(&rep)).unwrap();
        assert_eq!(json["medians"].as_array().unwrap().len(), 8);
    }
}
