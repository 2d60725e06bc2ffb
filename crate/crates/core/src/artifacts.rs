//! Run directories: telemetry CSV, manifest and per-panel plot data.
//!
//! Each `series/*.dat` file holds one panel as gnuplot-style blocks: a
//! `# name` line followed by `t value` rows, blocks separated by two blank lines.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;

use crate::config::ExperimentConfig;
use crate::error::{IrlError, Result};
use crate::sim::Telemetry;

/// One named curve of a panel.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

/// One plot panel, written to `series/<name>.dat`.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub name: String,
    pub curves: Vec<Curve>,
}

impl Panel {
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, c) in self.curves.iter().enumerate() {
            if k > 0 {
                out.push_str("\n\n");
            }
            let _ = writeln!(out, "# {}", c.name);
            for (t, v) in &c.points {
                let _ = writeln!(out, "{t} {v}");
            }
        }
        out
    }
}

fn curve(tel: &Telemetry, name: &str, scale: f64, f: impl Fn(&crate::sim::Record) -> f64) -> Curve {
    Curve {
        name: name.to_string(),
        points: tel.records.iter().map(|r| (r.t, f(r) * scale)).collect(),
    }
}

/// True when the telemetry carries the attitude columns of the UAV scenario.
pub fn is_attitude_run(tel: &Telemetry) -> bool {
    ["phi", "theta", "psi", "phi_des", "theta_des", "psi_des"]
        .iter()
        .all(|c| tel.aux_names.iter().any(|a| a == c))
}

/// The six standard panels, plus the weight error when an oracle is known.
///
/// Attitude runs report angles, rates and deflections in degrees.
pub fn panels(tel: &Telemetry, oracle: Option<&DVector<f64>>) -> Vec<Panel> {
    let n = tel.n;
    let attitude = is_attitude_run(tel);
    let deg = if attitude { 1f64.to_degrees() } else { 1.0 };
    let aux = |name: &str| tel.aux_names.iter().position(|a| a == name);
    let mut out = Vec::new();

    let tracking = if attitude {
        let mut curves = Vec::new();
        for name in ["phi", "theta", "psi"] {
            let a = aux(name).expect("attitude column");
            let d = aux(&format!("{name}_des")).expect("attitude column");
            curves.push(curve(tel, name, deg, |r| r.aux[a]));
            curves.push(curve(tel, &format!("{name}_des"), deg, |r| r.aux[d]));
        }
        curves
    } else {
        let mut curves = Vec::new();
        for i in 0..n {
            curves.push(curve(tel, &format!("x{i}"), 1.0, |r| r.z[i] + r.z[n + i]));
            curves.push(curve(tel, &format!("xd{i}"), 1.0, |r| r.z[n + i]));
        }
        curves
    };
    out.push(Panel {
        name: "tracking".into(),
        curves: tracking,
    });

    let err_names: Vec<String> = if attitude {
        ["e_p", "e_q", "e_r"].iter().map(|s| s.to_string()).collect()
    } else {
        (0..n).map(|i| format!("e{i}")).collect()
    };
    out.push(Panel {
        name: "errors".into(),
        curves: err_names
            .iter()
            .enumerate()
            .map(|(i, name)| curve(tel, name, deg, |r| r.z[i]))
            .collect(),
    });

    let state_names: Vec<String> = if attitude {
        ["p", "q", "r"].iter().map(|s| s.to_string()).collect()
    } else {
        (0..n).map(|i| format!("x{i}")).collect()
    };
    out.push(Panel {
        name: "states".into(),
        curves: state_names
            .iter()
            .enumerate()
            .map(|(i, name)| curve(tel, name, deg, |r| r.z[i] + r.z[n + i]))
            .collect(),
    });

    let ctrl_names: Vec<String> = if attitude && tel.m == 3 {
        ["delta_e", "delta_a", "delta_r"].iter().map(|s| s.to_string()).collect()
    } else {
        (0..tel.m).map(|i| format!("u{i}")).collect()
    };
    out.push(Panel {
        name: "controls".into(),
        curves: ctrl_names
            .iter()
            .enumerate()
            .map(|(i, name)| curve(tel, name, deg, |r| r.control[i]))
            .collect(),
    });

    out.push(Panel {
        name: "weights".into(),
        curves: (0..tel.n_features)
            .map(|i| curve(tel, &format!("w{i}"), 1.0, |r| r.w_hat[i]))
            .collect(),
    });

    out.push(Panel {
        name: "value".into(),
        curves: vec![curve(tel, "v_hat", 1.0, |r| r.v_hat)],
    });

    if let Some(w) = oracle {
        let scale = w.norm().max(f64::MIN_POSITIVE);
        out.push(Panel {
            name: "weight_error".into(),
            curves: vec![curve(tel, "relative_weight_error", 1.0, |r| (&r.w_hat - w).norm() / scale)],
        });
    }
    out
}

const PLOT_SCRIPT: &str = r##"#!/usr/bin/env python3
"""Plots every series/*.dat panel of a run directory into series/<panel>.png."""
import pathlib
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def blocks(path):
    name, rows = None, []
    for line in path.read_text().splitlines():
        if line.startswith("# "):
            if name is not None:
                yield name, rows
            name, rows = line[2:], []
        elif line.strip():
            t, v = line.split()
            rows.append((float(t), float(v)))
    if name is not None:
        yield name, rows


def main(run_dir):
    for path in sorted(pathlib.Path(run_dir, "series").glob("*.dat")):
        fig, ax = plt.subplots(figsize=(7, 3.5))
        for name, rows in blocks(path):
            ax.plot([r[0] for r in rows], [r[1] for r in rows], label=name, lw=0.8)
        ax.set_xlabel("t [s]")
        ax.set_title(path.stem)
        if len(ax.lines) <= 8:
            ax.legend(fontsize=7)
        fig.tight_layout()
        fig.savefig(path.with_suffix(".png"), dpi=120)
        plt.close(fig)


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else ".")
"##;

/// How a run ended, for the manifest.
#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Completed,
    Failed(IrlError),
}

/// Writes a run directory and returns the paths written.
///
/// The manifest holds no wall-clock data, so identical configs give identical files.
pub fn write_run(
    dir: &Path,
    cfg: &ExperimentConfig,
    tel: &Telemetry,
    oracle: Option<&DVector<f64>>,
    status: &RunStatus,
) -> Result<Vec<PathBuf>> {
    let series_dir = dir.join("series");
    fs::create_dir_all(&series_dir)?;
    let mut written = Vec::new();

    let mut csv = Vec::new();
    tel.write_csv(&mut csv)?;
    let path = dir.join("telemetry.csv");
    fs::write(&path, csv)?;
    written.push(path);

    for panel in panels(tel, oracle) {
        let path = series_dir.join(format!("{}.dat", panel.name));
        fs::write(&path, panel.render())?;
        written.push(path);
    }

    let path = dir.join("plot.py");
    fs::write(&path, PLOT_SCRIPT)?;
    written.push(path);

    let path = dir.join("manifest.txt");
    fs::write(&path, manifest(cfg, tel, oracle, status))?;
    written.push(path);
    Ok(written)
}

/// Plain-text run summary followed by the resolved config.
pub fn manifest(cfg: &ExperimentConfig, tel: &Telemetry, oracle: Option<&DVector<f64>>, status: &RunStatus) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# irl-core {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(out, "experiment = {}", cfg.experiment.name);
    let _ = writeln!(out, "law = {}", tel.law);
    match status {
        RunStatus::Completed => {
            let _ = writeln!(out, "status = completed");
        }
        RunStatus::Failed(e) => {
            let _ = writeln!(out, "status = failed: {e}");
        }
    }
    let s = &tel.stats;
    let _ = writeln!(out, "records = {}", tel.records.len());
    let _ = writeln!(out, "steps = {}", s.steps);
    let _ = writeln!(out, "updates = {}", s.updates);
    let _ = writeln!(out, "max_abs_control = {}", s.max_abs_control);
    let _ = writeln!(out, "u_max = {}", tel.u_max);
    let _ = writeln!(out, "max_weight_norm = {}", s.max_weight_norm);
    let _ = writeln!(out, "peak_z_norm = {}", s.peak_z_norm);
    if let Some(last) = tel.records.last() {
        let _ = writeln!(out, "final_t = {}", last.t);
        let w: Vec<String> = last.w_hat.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "final_weights = [{}]", w.join(", "));
    }
    if let Some(w) = oracle {
        let v: Vec<String> = w.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "oracle_weights = [{}]", v.join(", "));
    }
    let _ = writeln!(out, "\n# config\n{}", cfg.to_toml());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn panel_blocks_are_two_column() {
        let p = Panel {
            name: "x".into(),
            curves: vec![
                Curve { name: "a".into(), points: vec![(0.0, 1.0), (0.5, 2.0)] },
                Curve { name: "b".into(), points: vec![(0.0, -1.0)] },
            ],
        };
        assert_eq!(p.render(), "# a\n0 1\n0.5 2\n\n\n# b\n0 -1\n");
    }
}
