//! Campaign reports: per-run records, aggregate statistics, and the
//! JSON/CSV writers. Float formatting uses the shortest round-trip
//! representation throughout, so identical campaigns produce byte-identical
//! files.

use crate::constants::{DAYS_PER_YEAR, SECS_PER_DAY};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManeuverRecord {
    pub epoch_s: f64,
    pub ta_deg: f64,
    pub dv_cm_s: f64,
    pub triggered: bool,
    pub converged: bool,
    pub iterations: usize,
    pub predicted_violation_m_s: f64,
    pub achieved_violation_m_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilterRunStats {
    pub recorded_steps: usize,
    /// Fraction of recorded steps with the truth inside the 3-sigma
    /// position ellipsoid.
    pub containment_3sigma: f64,
    pub rms_pos_err_km: f64,
    pub rms_vel_err_m_s: f64,
    pub measurements_accepted: usize,
    pub measurements_skipped: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub run: usize,
    pub success: bool,
    pub failure: Option<String>,
    pub duration_days: f64,
    pub cumulative_dv_cm_s: f64,
    pub yearly_dv_cm_s: f64,
    pub perilune_radius_min_km: f64,
    pub perilune_radius_max_km: f64,
    pub maneuvers: Vec<ManeuverRecord>,
    pub filter: Option<FilterRunStats>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Aggregate {
    pub runs: usize,
    pub success_rate: f64,
    pub mean_yearly_dv_cm_s: f64,
    pub p95_yearly_dv_cm_s: f64,
    pub max_yearly_dv_cm_s: f64,
    pub mean_maneuver_iterations: f64,
    pub mean_containment_3sigma: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub kind: String,
    pub seed: u64,
    pub runs: Vec<RunReport>,
    pub aggregate: Aggregate,
    /// Mean filter velocity-z standard deviation against true anomaly,
    /// averaged over runs and revolutions (filter campaigns only).
    pub sigma_vz_profile: Option<Vec<(f64, f64)>>,
}

/// Yearly normalization of a cumulative cost.
pub fn yearly_cost(cumulative_dv_cm_s: f64, duration_days: f64) -> f64 {
    cumulative_dv_cm_s * DAYS_PER_YEAR / duration_days
}

pub fn duration_days(duration_s: f64) -> f64 {
    duration_s / SECS_PER_DAY
}

/// Percentile with the linear-interpolation definition: rank
/// p*(n-1) on the sorted sample, interpolated between neighbors.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    if sorted.len() == 1 {
        return sorted[0];
    }
    let rank = p * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Reduce per-run reports to the campaign aggregate.
pub fn aggregate_report(runs: &[RunReport]) -> Aggregate {
    assert!(!runs.is_empty());
    let mut yearly: Vec<f64> = runs.iter().map(|r| r.yearly_dv_cm_s).collect();
    yearly.sort_by(f64::total_cmp);
    let successes = runs.iter().filter(|r| r.success).count();
    let mut iter_sum = 0usize;
    let mut iter_count = 0usize;
    for r in runs {
        for m in &r.maneuvers {
            if m.triggered {
                iter_sum += m.iterations;
                iter_count += 1;
            }
        }
    }
    let containments: Vec<f64> = runs
        .iter()
        .filter_map(|r| r.filter.as_ref().map(|f| f.containment_3sigma))
        .collect();
    Aggregate {
        runs: runs.len(),
        success_rate: successes as f64 / runs.len() as f64,
        mean_yearly_dv_cm_s: yearly.iter().sum::<f64>() / yearly.len() as f64,
        p95_yearly_dv_cm_s: percentile(&yearly, 0.95),
        max_yearly_dv_cm_s: *yearly.last().unwrap(),
        mean_maneuver_iterations: if iter_count > 0 {
            iter_sum as f64 / iter_count as f64
        } else {
            0.0
        },
        mean_containment_3sigma: if containments.is_empty() {
            None
        } else {
            Some(containments.iter().sum::<f64>() / containments.len() as f64)
        },
    }
}

/// One row of the per-run time series CSV.
#[derive(Debug, Clone)]
pub struct RecordRow {
    pub t_s: f64,
    pub ta_deg: f64,
    pub kind: RowKind,
    pub truth: [f64; 6],
    pub estimate: Option<[f64; 6]>,
    pub sigma: Option<[f64; 6]>,
    pub flag: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    Record,
    Measurement,
    MeasurementSkipped,
    Maneuver,
    Perilune,
}

impl RowKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            RowKind::Record => "record",
            RowKind::Measurement => "measurement",
            RowKind::MeasurementSkipped => "measurement-skipped",
            RowKind::Maneuver => "maneuver",
            RowKind::Perilune => "perilune",
        }
    }
}

pub const SERIES_HEADER: &str = "t_s,ta_deg,kind,truth_x_km,truth_y_km,truth_z_km,truth_vx_km_s,truth_vy_km_s,truth_vz_km_s,est_x_km,est_y_km,est_z_km,est_vx_km_s,est_vy_km_s,est_vz_km_s,sig_x_km,sig_y_km,sig_z_km,sig_vx_km_s,sig_vy_km_s,sig_vz_km_s,flag";

pub fn series_csv(rows: &[RecordRow]) -> String {
    let mut out = String::from(SERIES_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&format!("{},{},{}", row.t_s, row.ta_deg, row.kind.as_str()));
        for v in row.truth {
            out.push_str(&format!(",{v}"));
        }
        match &row.estimate {
            Some(e) => {
                for v in e {
                    out.push_str(&format!(",{v}"));
                }
            }
            None => out.push_str(",,,,,,"),
        }
        match &row.sigma {
            Some(s) => {
                for v in s {
                    out.push_str(&format!(",{v}"));
                }
            }
            None => out.push_str(",,,,,,"),
        }
        out.push(',');
        if let Some(flag) = &row.flag {
            out.push_str(flag);
        }
        out.push('\n');
    }
    out
}

/// Write summary.json plus runs/run_NNN.csv under `out_dir`.
pub fn write_campaign(
    report: &MonteCarloReport,
    series: &[Vec<RecordRow>],
    out_dir: &Path,
) -> std::io::Result<()> {
    std::fs::create_dir_all(out_dir.join("runs"))?;
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    std::fs::write(out_dir.join("summary.json"), json + "\n")?;
    for (i, rows) in series.iter().enumerate() {
        std::fs::write(
            out_dir.join("runs").join(format!("run_{i:03}.csv")),
            series_csv(rows),
        )?;
    }
    Ok(())
}
