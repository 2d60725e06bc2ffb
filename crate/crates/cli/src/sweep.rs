//! Grid sweeps: one independent experiment per grid point, merged into `summary.csv`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use irl_core::config::{Experiment, ExperimentConfig};
use irl_core::sim::Telemetry;
use irl_core::IrlError;
use rayon::prelude::*;

use crate::{default_out, fail, EXIT_CONFIG};

/// Parses `key=v1,v2,...` into one override string per value.
pub fn parse_axis(text: &str) -> Result<Vec<String>, IrlError> {
    let (key, values) = text
        .split_once('=')
        .ok_or_else(|| IrlError::config(text, "grid axis must look like section.key=v1,v2"))?;
    let values: Vec<&str> = values.split(',').map(str::trim).filter(|v| !v.is_empty()).collect();
    if values.is_empty() {
        return Err(IrlError::config(key, "grid axis has no values"));
    }
    Ok(values.iter().map(|v| format!("{}={v}", key.trim())).collect())
}

/// Cross-product of the axes, first axis varying slowest.
pub fn cross_product(axes: &[Vec<String>]) -> Vec<Vec<String>> {
    axes.iter().fold(vec![Vec::new()], |acc, axis| {
        acc.iter()
            .flat_map(|prefix| {
                axis.iter().map(move |v| {
                    let mut p = prefix.clone();
                    p.push(v.clone());
                    p
                })
            })
            .collect()
    })
}

#[derive(Debug, Clone)]
struct Row {
    overrides: Vec<String>,
    echo: Option<ExperimentConfig>,
    status: String,
    e_hat_rms_last: f64,
    peak_z_norm: f64,
    settling_time_s: f64,
    final_error_norm: f64,
    final_weight_norm: f64,
    wall_time_s: f64,
}

/// Earliest time after which the tracking-error norm stays within 5% of its peak.
fn settling_time(tel: &Telemetry) -> f64 {
    let norms: Vec<(f64, f64)> = tel
        .records
        .iter()
        .map(|r| (r.t, r.z.rows(0, tel.n).norm()))
        .collect();
    let peak = norms.iter().map(|p| p.1).fold(0.0, f64::max);
    let band = 0.05 * peak;
    let mut settle = norms.first().map_or(f64::NAN, |p| p.0);
    for (t, v) in &norms {
        if *v > band {
            settle = *t;
        }
    }
    settle
}

fn summarize(tel: &Telemetry, overrides: Vec<String>, echo: ExperimentConfig, status: String, wall: f64) -> Row {
    let n = tel.records.len();
    let window = (n / 10).max(1).min(n);
    let last = &tel.records[n.saturating_sub(window)..];
    let e_hat_rms_last = if last.is_empty() {
        f64::NAN
    } else {
        (last.iter().map(|r| r.e_hat * r.e_hat).sum::<f64>() / last.len() as f64).sqrt()
    };
    let final_rec = tel.records.last();
    Row {
        overrides,
        echo: Some(echo),
        status,
        e_hat_rms_last,
        peak_z_norm: tel.stats.peak_z_norm,
        settling_time_s: settling_time(tel),
        final_error_norm: final_rec.map_or(f64::NAN, |r| r.z.rows(0, tel.n).norm()),
        final_weight_norm: final_rec.map_or(f64::NAN, |r| r.w_hat.norm()),
        wall_time_s: wall,
    }
}

fn run_point(path: &Path, base: &[String], point: Vec<String>) -> Row {
    let start = Instant::now();
    let all: Vec<String> = base.iter().cloned().chain(point.iter().cloned()).collect();
    let failed = |status: String, echo: Option<ExperimentConfig>| Row {
        overrides: point.clone(),
        echo,
        status,
        e_hat_rms_last: f64::NAN,
        peak_z_norm: f64::NAN,
        settling_time_s: f64::NAN,
        final_error_norm: f64::NAN,
        final_weight_norm: f64::NAN,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    let cfg = match ExperimentConfig::load(path, &all) {
        Ok(c) => c,
        Err(e) => return failed(format!("config: {e}"), None),
    };
    let exp = match Experiment::build(&cfg) {
        Ok(e) => e,
        Err(e) => return failed(format!("config: {e}"), Some(cfg)),
    };
    let (tel, status) = match exp.run() {
        Ok(t) => (t, "ok".to_string()),
        Err(f) => (f.telemetry, format!("failed: {}", f.error)),
    };
    summarize(&tel, point, cfg, status, start.elapsed().as_secs_f64())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

const HEADER: &str = "run,overrides,status,law,alpha,q2,k2,interval_s,gamma_per_s,e_hat_rms_last10,peak_z_norm,settling_time_s,final_error_norm,final_weight_norm,wall_time_s";

fn render(rows: &[Row]) -> String {
    let mut out = String::from(HEADER);
    out.push('\n');
    for (i, r) in rows.iter().enumerate() {
        let echo = match &r.echo {
            Some(c) => format!(
                "{},{},{},{},{},{}",
                c.experiment.law, c.learner.alpha, c.learner.q2, c.learner.k2, c.learner.interval_s, c.learner.gamma_per_s
            ),
            None => ",,,,,".to_string(),
        };
        let _ = writeln!(
            out,
            "{i},{},{},{echo},{},{},{},{},{},{}",
            csv_field(&r.overrides.join(";")),
            csv_field(&r.status),
            r.e_hat_rms_last,
            r.peak_z_norm,
            r.settling_time_s,
            r.final_error_norm,
            r.final_weight_norm,
            r.wall_time_s
        );
    }
    out
}

pub fn cmd_sweep(path: &Path, grid: &[String], overrides: &[String], out: Option<PathBuf>) -> ExitCode {
    let axes: Result<Vec<_>, _> = grid.iter().map(|g| parse_axis(g)).collect();
    let axes = match axes {
        Ok(a) => a,
        Err(e) => return fail(&e),
    };
    let base = match ExperimentConfig::load(path, overrides) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    let points = cross_product(&axes);
    let rows: Vec<Row> = points
        .into_par_iter()
        .map(|p| run_point(path, overrides, p))
        .collect();

    let dir = out.unwrap_or_else(|| default_out(&base).join("sweep"));
    if let Err(e) = std::fs::create_dir_all(&dir) {
        return fail(&e.into());
    }
    let summary = dir.join("summary.csv");
    if let Err(e) = std::fs::write(&summary, render(&rows)) {
        return fail(&e.into());
    }
    let bad = rows.iter().filter(|r| r.status.starts_with("config")).count();
    for (i, r) in rows.iter().enumerate() {
        println!("run {i} [{}]: {}", r.overrides.join(" "), r.status);
    }
    println!("{} runs -> {}", rows.len(), summary.display());
    if bad > 0 {
        ExitCode::from(EXIT_CONFIG)
    } else {
        ExitCode::SUCCESS
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_product_size_and_order() {
        let axes = vec![
            parse_axis("experiment.law=novel,baseline").unwrap(),
            parse_axis("learner.q2=0.0,0.1").unwrap(),
        ];
        let pts = cross_product(&axes);
        assert_eq!(pts.len(), 4);
        assert_eq!(pts[1], vec!["experiment.law=novel".to_string(), "learner.q2=0.1".to_string()]);
    }

    #[test]
    fn axis_without_values_is_rejected() {
        assert!(parse_axis("learner.q2=").is_err());
        assert!(parse_axis("learner.q2").is_err());
    }
}
