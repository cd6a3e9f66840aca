//! Re-emit a campaign's outputs as tidy long-format CSV for external
//! plotting tools.

use super::report::{MonteCarloReport, SERIES_HEADER};
use super::HarnessError;
use std::path::Path;

/// Read `summary.json` and `runs/run_*.csv` under `campaign_dir`, writing
/// `tidy_series.csv` (run, t_s, ta_deg, kind, series, value) and
/// `maneuvers.csv` into `out_dir`.
pub fn emit_plot_data(campaign_dir: &Path, out_dir: &Path) -> Result<(), HarnessError> {
    let summary_path = campaign_dir.join("summary.json");
    let report: MonteCarloReport =
        serde_json::from_str(&std::fs::read_to_string(&summary_path)?)
            .map_err(|e| HarnessError::BadConfig(format!("{}: {e}", summary_path.display())))?;
    std::fs::create_dir_all(out_dir)?;

    let header_cols: Vec<&str> = SERIES_HEADER.split(',').collect();
    let mut tidy = String::from("run,t_s,ta_deg,kind,series,value\n");
    let runs_dir = campaign_dir.join("runs");
    let mut run_files: Vec<_> = std::fs::read_dir(&runs_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    run_files.sort();
    for path in &run_files {
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default();
        let run_idx = stem.trim_start_matches("run_").trim_start_matches('0');
        let run_idx = if run_idx.is_empty() { "0" } else { run_idx };
        for (lineno, line) in std::fs::read_to_string(path)?.lines().enumerate() {
            if lineno == 0 || line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() < header_cols.len() {
                continue;
            }
            let (t_s, ta, kind) = (cols[0], cols[1], cols[2]);
            for (i, name) in header_cols.iter().enumerate().skip(3) {
                if *name == "flag" || cols[i].is_empty() {
                    continue;
                }
                tidy.push_str(&format!("{run_idx},{t_s},{ta},{kind},{name},{}\n", cols[i]));
            }
        }
    }
    std::fs::write(out_dir.join("tidy_series.csv"), tidy)?;

    let mut maneuvers = String::from(
        "run,epoch_s,ta_deg,dv_cm_s,triggered,converged,iterations,predicted_violation_m_s,achieved_violation_m_s\n",
    );
    for run in &report.runs {
        for m in &run.maneuvers {
            maneuvers.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                run.run,
                m.epoch_s,
                m.ta_deg,
                m.dv_cm_s,
                m.triggered,
                m.converged,
                m.iterations,
                m.predicted_violation_m_s,
                m.achieved_violation_m_s
            ));
        }
    }
    std::fs::write(out_dir.join("maneuvers.csv"), maneuvers)?;

    if let Some(profile) = &report.sigma_vz_profile {
        let mut csv = String::from("ta_deg,mean_sigma_vz_km_s\n");
        for (ta, sig) in profile {
            csv.push_str(&format!("{ta},{sig}\n"));
        }
        std::fs::write(out_dir.join("sigma_vz_profile.csv"), csv)?;
    }
    Ok(())
}
