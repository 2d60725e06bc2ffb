//! Browser bindings: saturation curves, the excitation signal and short linear runs.
//!
//! Every export is a thin wrapper over a plain function so the numerics are
//! testable natively.

use irl_core::config::{Experiment, ExperimentConfig};
use irl_core::policy::{penalty_closed, saturate_tau, SaturationSpec};
use irl_core::sim::dither_with_decay;
use irl_core::UpdateLaw;
use nalgebra::DVector;
use wasm_bindgen::prelude::*;

const LINEAR_CONFIG: &str = include_str!("../../../configs/linear_benchmark.toml");

/// Upper bound on the simulated horizon accepted from the page.
pub const MAX_T_END: f64 = 120.0;

/// Samples `(tau, u, penalty)` of one saturated channel, interleaved.
pub fn saturation_samples(u_max: f64, r: f64, tau_span: f64, n: usize) -> Result<Vec<f64>, String> {
    let sat = SaturationSpec::new(u_max, vec![r]).map_err(|e| e.to_string())?;
    if !(tau_span > 0.0) || n < 2 {
        return Err("tau span must be positive and n at least 2".into());
    }
    let mut out = Vec::with_capacity(3 * n);
    for k in 0..n {
        let t = -tau_span + 2.0 * tau_span * k as f64 / (n - 1) as f64;
        let tau = DVector::from_element(1, t);
        out.push(t);
        out.push(saturate_tau(&tau, &sat)[0]);
        out.push(penalty_closed(&tau, &sat));
    }
    Ok(out)
}

/// Samples `(t, n(t))` of the scaled excitation signal, interleaved.
pub fn dither_samples(gain: f64, decay: f64, t_end: f64, n: usize) -> Result<Vec<f64>, String> {
    if !(t_end > 0.0) || n < 2 || !gain.is_finite() || !(decay >= 0.0) {
        return Err("need t_end > 0, n >= 2, finite gain and decay >= 0".into());
    }
    let mut out = Vec::with_capacity(2 * n);
    for k in 0..n {
        let t = t_end * k as f64 / (n - 1) as f64;
        out.push(t);
        out.push(gain * dither_with_decay(t, decay));
    }
    Ok(out)
}

/// Traces of one run of the bundled linear benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearTraces {
    pub t: Vec<f64>,
    pub x0: Vec<f64>,
    pub xd0: Vec<f64>,
    pub e_hat: Vec<f64>,
    pub weight_error: Vec<f64>,
    pub control: Vec<f64>,
    pub status: String,
}

/// Runs the bundled linear benchmark with the given gain, exponent, law and horizon.
pub fn linear_traces(alpha: f64, q2: f64, baseline: bool, t_end: f64) -> Result<LinearTraces, String> {
    if !(t_end > 0.0 && t_end <= MAX_T_END) {
        return Err(format!("horizon must lie in (0, {MAX_T_END}] s"));
    }
    let law = if baseline { UpdateLaw::Baseline } else { UpdateLaw::Novel };
    let overrides = vec![
        format!("learner.alpha={alpha:?}"),
        format!("learner.q2={q2:?}"),
        format!("sim.t_end_s={t_end:?}"),
        format!("experiment.law=\"{law}\""),
    ];
    let cfg = ExperimentConfig::from_toml_with_overrides(LINEAR_CONFIG, &overrides).map_err(|e| e.to_string())?;
    let exp = Experiment::build(&cfg).map_err(|e| e.to_string())?;
    let oracle = exp.oracle.as_ref().map(|o| o.weights.clone()).ok_or("benchmark has no oracle")?;
    let (tel, status) = match exp.run() {
        Ok(t) => (t, "completed".to_string()),
        Err(f) => (f.telemetry, format!("stopped: {}", f.error)),
    };
    let n = tel.n;
    let scale = oracle.norm();
    let mut out = LinearTraces {
        t: Vec::new(),
        x0: Vec::new(),
        xd0: Vec::new(),
        e_hat: Vec::new(),
        weight_error: Vec::new(),
        control: Vec::new(),
        status,
    };
    for r in &tel.records {
        out.t.push(r.t);
        out.x0.push(r.z[0] + r.z[n]);
        out.xd0.push(r.z[n]);
        out.e_hat.push(r.e_hat);
        out.weight_error.push((&r.w_hat - &oracle).norm() / scale);
        out.control.push(r.control[0]);
    }
    Ok(out)
}

#[wasm_bindgen(js_name = saturationCurve)]
pub fn saturation_curve(u_max: f64, r: f64, tau_span: f64, n: usize) -> Result<Vec<f64>, JsError> {
    saturation_samples(u_max, r, tau_span, n).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = ditherSeries)]
pub fn dither_series(gain: f64, decay: f64, t_end: f64, n: usize) -> Result<Vec<f64>, JsError> {
    dither_samples(gain, decay, t_end, n).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub struct LinearRun(LinearTraces);

#[wasm_bindgen]
impl LinearRun {
    #[wasm_bindgen(getter)]
    pub fn t(&self) -> Vec<f64> {
        self.0.t.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn x0(&self) -> Vec<f64> {
        self.0.x0.clone()
    }

    #[wasm_bindgen(getter, js_name = xd0)]
    pub fn xd0(&self) -> Vec<f64> {
        self.0.xd0.clone()
    }

    #[wasm_bindgen(getter, js_name = eHat)]
    pub fn e_hat(&self) -> Vec<f64> {
        self.0.e_hat.clone()
    }

    #[wasm_bindgen(getter, js_name = weightError)]
    pub fn weight_error(&self) -> Vec<f64> {
        self.0.weight_error.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn control(&self) -> Vec<f64> {
        self.0.control.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn status(&self) -> String {
        self.0.status.clone()
    }
}

#[wasm_bindgen(js_name = runLinear)]
pub fn run_linear(alpha: f64, q2: f64, baseline: bool, t_end: f64) -> Result<LinearRun, JsError> {
    linear_traces(alpha, q2, baseline, t_end)
        .map(LinearRun)
        .map_err(|e| JsError::new(&e))
}
