//! Output artifacts: coefficient tables, simulation reports, and
//! efficiency curves, written atomically as CSV and JSON.

use std::path::{Path, PathBuf};

use excursion_core::bench::{EfficiencyCurve, SimulationReport};
use excursion_core::inference::CoefficientTable;

use crate::schema::format_f64;
use crate::CliResult;

/// Write via a temp file + rename so readers never observe partial output.
pub fn write_atomic(path: &Path, contents: &str) -> CliResult<()> {
    let tmp = path.with_extension(format!("tmp.{}", std::process::id()));
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn opt(x: Option<f64>) -> String {
    x.map(format_f64).unwrap_or_default()
}

/// `coefficients.csv`: one row per coefficient.
pub fn coefficients_csv(table: &CoefficientTable<f64>) -> String {
    let mut out = String::from("name,estimate,se,ci_lower,ci_upper,p_value,degenerate\n");
    for row in &table.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            row.name,
            format_f64(row.estimate),
            format_f64(row.se),
            format_f64(row.ci_lower),
            format_f64(row.ci_upper),
            format_f64(row.p_value),
            u8::from(row.degenerate),
        ));
    }
    out
}

/// `report.csv`: per-estimator, per-coefficient replication metrics.
pub fn report_csv(report: &SimulationReport<f64>) -> String {
    let mut out = String::from(
        "estimator,coefficient,truth,bias,sd,rmse,cp_unadj,cp_adj,median_se_unadj,median_se_adj,n_converged,n_failed\n",
    );
    for est in &report.estimators {
        for (j, pm) in est.params.iter().enumerate() {
            out.push_str(&format!(
                "{},beta_{j},{},{},{},{},{},{},{},{},{},{}\n",
                est.label,
                format_f64(report.true_values[j]),
                format_f64(pm.bias),
                opt(pm.sd),
                opt(pm.rmse),
                format_f64(pm.cp_unadj),
                format_f64(pm.cp_adj),
                format_f64(pm.median_se_unadj),
                format_f64(pm.median_se_adj),
                est.n_converged,
                est.n_failed,
            ));
        }
    }
    out
}

/// `curve.csv`: one row per sweep point.
pub fn curve_csv(curve: &EfficiencyCurve<f64>) -> String {
    let mut out = String::from("axis,x,rel_eff,mc_se,used_reps\n");
    for pt in &curve.points {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            curve.axis,
            format_f64(pt.x),
            format_f64(pt.rel_eff),
            format_f64(pt.mc_se),
            pt.used_reps,
        ));
    }
    out
}

/// Write a serializable value as pretty JSON.
pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| crate::CliError::Io(format!("serialize: {e}")))?;
    write_atomic(path, &text)
}

pub fn out_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}
