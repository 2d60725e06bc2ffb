//! Fixed-step simulation of a learner in closed loop with a plant.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::RegressorBasis;
use crate::error::{ensure_finite, IrlError, Result};
use crate::learner::{
    baseline_update_step, evaluate_point, update_step, CriticState, LearnerConfig, PenaltyInput,
    ReinforcementBuffer, Sample, StepContext, UpdateLaw,
};
use crate::policy::penalty_of_control;
use crate::model::{eval_augmented_flat, AugmentedDynamics, AugmentedState};

/// Seconds since the call; reads zero on targets without a clock.
#[cfg(not(target_arch = "wasm32"))]
pub(crate) fn stopwatch() -> impl Fn() -> f64 {
    let start = std::time::Instant::now();
    move || start.elapsed().as_secs_f64()
}

#[cfg(target_arch = "wasm32")]
pub(crate) fn stopwatch() -> impl Fn() -> f64 {
    || 0.0
}

/// Classical fourth-order Runge-Kutta step.
pub fn rk4_step<F>(field: F, t: f64, state: &DVector<f64>, dt: f64) -> Result<DVector<f64>>
where
    F: Fn(f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    if !(dt > 0.0) {
        return Err(IrlError::config("dt", "must be positive"));
    }
    let stage = |k: DVector<f64>, idx: usize| -> Result<DVector<f64>> {
        match crate::error::first_non_finite(k.iter()) {
            Some(_) => Err(IrlError::numeric(format!("rk4 stage {idx}"), idx)),
            None => Ok(k),
        }
    };
    let half = 0.5 * dt;
    let k1 = stage(field(t, state)?, 1)?;
    let k2 = stage(field(t + half, &(state + &k1 * half))?, 2)?;
    let k3 = stage(field(t + half, &(state + &k2 * half))?, 3)?;
    let k4 = stage(field(t + dt, &(state + &k3 * dt))?, 4)?;
    Ok(state + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0))
}

pub const DITHER_DECAY: f64 = 0.009;

/// Decaying multi-sine excitation signal.
pub fn dither(t: f64) -> f64 {
    dither_with_decay(t, DITHER_DECAY)
}

/// The same multi-sine under a different envelope decay rate (1/s).
pub fn dither_with_decay(t: f64, decay: f64) -> f64 {
    let sq = |w: f64| (w * t).sin().powi(2);
    2.0 * (-decay * t).exp()
        * (sq(11.9) * (19.5 * t).cos()
            + sq(2.2) * (5.8 * t).cos()
            + sq(1.2) * (9.5 * t).cos()
            + (2.4 * t).sin().powi(5))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub t_end: f64,
    /// Reserved; every signal in a run is deterministic.
    pub seed: u64,
    pub record_every: usize,
    /// Multiplier applied to the dither signal on every control channel.
    pub dither_gain: f64,
    /// Envelope decay rate of the dither (1/s).
    pub dither_decay: f64,
    /// Time before which the critic is held at its initial weights (s).
    pub learning_start: f64,
}

impl SimConfig {
    pub fn validate(&self, interval: f64) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(IrlError::config("sim.dt_s", "must be positive"));
        }
        if self.dt > interval * (1.0 + 1e-9) {
            return Err(IrlError::config(
                "sim.dt_s",
                "integration step must not exceed the reinforcement interval T",
            ));
        }
        if !(self.t_end.is_finite() && self.t_end > interval) {
            return Err(IrlError::config(
                "sim.t_end_s",
                "run must be longer than one reinforcement interval",
            ));
        }
        if self.record_every == 0 {
            return Err(IrlError::config("sim.record_every", "must be at least 1"));
        }
        if !self.dither_gain.is_finite() {
            return Err(IrlError::config("sim.dither_gain", "must be finite"));
        }
        if !(self.learning_start.is_finite() && self.learning_start >= 0.0) {
            return Err(IrlError::config("sim.learning_start_s", "must be non-negative"));
        }
        if !(self.dither_decay.is_finite() && self.dither_decay >= 0.0) {
            return Err(IrlError::config("sim.dither_decay_per_s", "must be non-negative"));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }
}

/// A closed-loop environment seen through its augmented state.
pub trait Scenario {
    fn n(&self) -> usize;
    fn m(&self) -> usize;
    /// Current augmented state `[e; x_d]`.
    fn z(&self) -> DVector<f64>;
    /// Input coupling `G(z)` at the current state.
    fn coupling(&self) -> Result<DMatrix<f64>>;
    /// Advances by `dt` holding `u` constant over the step.
    fn advance(&mut self, t: f64, dt: f64, u: &DVector<f64>) -> Result<()>;

    fn aux_names(&self) -> Vec<String> {
        Vec::new()
    }

    fn aux(&self) -> Vec<f64> {
        Vec::new()
    }
}

/// Plant and reference integrated jointly in augmented coordinates.
#[derive(Debug, Clone)]
pub struct AffineScenario {
    dynamics: AugmentedDynamics,
    z: DVector<f64>,
}

impl AffineScenario {
    /// Starts from plant state `x0` and the reference's initial state (`e0 = x0 - x_d0`).
    pub fn new(dynamics: AugmentedDynamics, x0: &DVector<f64>) -> Result<Self> {
        if x0.len() != dynamics.n() {
            return Err(IrlError::config("plant.x0", "length must equal the plant dimension"));
        }
        let z = AugmentedState::from_plant(x0, dynamics.reference().initial()).flat();
        Ok(AffineScenario { dynamics, z })
    }

    pub fn dynamics(&self) -> &AugmentedDynamics {
        &self.dynamics
    }
}

impl Scenario for AffineScenario {
    fn n(&self) -> usize {
        self.dynamics.n()
    }

    fn m(&self) -> usize {
        self.dynamics.m()
    }

    fn z(&self) -> DVector<f64> {
        self.z.clone()
    }

    fn coupling(&self) -> Result<DMatrix<f64>> {
        self.dynamics.coupling(&self.z)
    }

    fn advance(&mut self, t: f64, dt: f64, u: &DVector<f64>) -> Result<()> {
        let dynamics = &self.dynamics;
        self.z = rk4_step(|_, z| eval_augmented_flat(dynamics, z, u), t, &self.z, dt)?;
        Ok(())
    }
}

/// One logged instant.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub t: f64,
    pub z: DVector<f64>,
    /// Commanded control.
    pub control: DVector<f64>,
    /// Control delivered to the plant after dither and clipping.
    pub applied: DVector<f64>,
    pub noise: f64,
    pub e_hat: f64,
    pub sigma: f64,
    pub xi: u8,
    pub i_hat: f64,
    pub v_hat: f64,
    pub w_hat: DVector<f64>,
    pub aux: Vec<f64>,
}

/// Extremes and timing over every simulated step, recorded or not.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunStats {
    pub steps: usize,
    pub updates: usize,
    pub max_abs_control: f64,
    pub max_weight_norm: f64,
    pub peak_z_norm: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Telemetry {
    pub n: usize,
    pub m: usize,
    pub n_features: usize,
    pub law: UpdateLaw,
    pub u_max: f64,
    pub aux_names: Vec<String>,
    pub records: Vec<Record>,
    pub stats: RunStats,
}

impl Telemetry {
    pub fn header(&self) -> Vec<String> {
        let mut cols = vec!["t".to_string()];
        cols.extend((0..2 * self.n).map(|i| format!("z{i}")));
        cols.extend((0..self.n).map(|i| format!("x{i}")));
        cols.extend((0..self.n).map(|i| format!("xd{i}")));
        cols.extend((0..self.m).map(|i| format!("u{i}")));
        cols.extend((0..self.m).map(|i| format!("u_applied{i}")));
        for name in ["noise", "e_hat", "sigma", "xi", "i_hat", "v_hat"] {
            cols.push(name.to_string());
        }
        cols.extend((0..self.n_features).map(|i| format!("w{i}")));
        cols.extend(self.aux_names.iter().cloned());
        cols
    }

    pub fn plant_state(&self, r: &Record) -> DVector<f64> {
        r.z.rows(0, self.n) + r.z.rows(self.n, self.n)
    }

    pub fn row(&self, r: &Record) -> Vec<f64> {
        let mut row = vec![r.t];
        row.extend(r.z.iter());
        row.extend(self.plant_state(r).iter());
        row.extend(r.z.rows(self.n, self.n).iter());
        row.extend(r.control.iter());
        row.extend(r.applied.iter());
        row.extend([
            r.noise,
            r.e_hat,
            r.sigma,
            f64::from(r.xi),
            r.i_hat,
            r.v_hat,
        ]);
        row.extend(r.w_hat.iter());
        row.extend(r.aux.iter());
        row
    }

    /// Comma-separated, header row first, shortest round-trip float formatting.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "{}", self.header().join(","))?;
        for r in &self.records {
            let line: Vec<String> = self.row(r).iter().map(|v| format!("{v}")).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.header().iter().position(|c| c == name)?;
        Some(self.records.iter().map(|r| self.row(r)[idx]).collect())
    }
}

/// A run that stopped early; carries what was logged up to the fault.
#[derive(Debug, Clone)]
pub struct RunFailure {
    pub error: IrlError,
    pub telemetry: Telemetry,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} after {} records",
            self.error,
            self.telemetry.records.len()
        )
    }
}

impl std::error::Error for RunFailure {}

/// Runs the closed loop for `sim.t_end` seconds.
///
/// Each step evaluates the policy, buffers `(theta, Q + U, W^T M)`, updates
/// the critic once the buffer spans `T`, logs, then advances the plant with
/// the clipped sum of command and dither.
pub fn run_experiment(
    scenario: &mut dyn Scenario,
    basis: &dyn RegressorBasis,
    cfg: &LearnerConfig,
    sim: &SimConfig,
    law: UpdateLaw,
    initial_weights: Option<DVector<f64>>,
) -> std::result::Result<Telemetry, RunFailure> {
    let elapsed = stopwatch();
    let mut telemetry = Telemetry {
        n: scenario.n(),
        m: scenario.m(),
        n_features: basis.len(),
        law,
        u_max: cfg.sat.u_max(),
        aux_names: scenario.aux_names(),
        records: Vec::new(),
        stats: RunStats::default(),
    };
    let result = simulate(scenario, basis, cfg, sim, law, initial_weights, &mut telemetry);
    telemetry.stats.wall_time_s = elapsed();
    match result {
        Ok(()) => Ok(telemetry),
        Err(error) => Err(RunFailure { error, telemetry }),
    }
}

fn simulate(
    scenario: &mut dyn Scenario,
    basis: &dyn RegressorBasis,
    cfg: &LearnerConfig,
    sim: &SimConfig,
    law: UpdateLaw,
    initial_weights: Option<DVector<f64>>,
    telemetry: &mut Telemetry,
) -> Result<()> {
    let dim_z = 2 * scenario.n();
    if basis.dim_in() != dim_z {
        return Err(IrlError::config("basis.dim", "must equal twice the plant dimension"));
    }
    if cfg.sat.m() != scenario.m() {
        return Err(IrlError::config("saturation.r_diag", "length must equal the control dimension"));
    }
    cfg.validate(basis.len(), dim_z, sim.dt)?;
    sim.validate(cfg.interval)?;

    let w0 = initial_weights.unwrap_or_else(|| DVector::zeros(basis.len()));
    if w0.len() != basis.len() {
        return Err(IrlError::config("learner.initial_weights", "length must equal N1"));
    }
    let mut critic = CriticState::new(w0);
    let mut buffer = ReinforcementBuffer::new(cfg.interval, sim.dt)?;
    let mut z_prev: Option<DVector<f64>> = None;
    let u_max = cfg.sat.u_max();
    let steps = sim.steps();

    for k in 0..=steps {
        let t = k as f64 * sim.dt;
        let z = scenario.z();
        ensure_finite(z.iter(), "augmented state")?;
        let coupling = scenario.coupling()?;
        let w_used = critic.w_hat.clone();
        let point = evaluate_point(cfg, basis, &z, &coupling, &w_used)?;
        let noise = if k < steps { sim.dither_gain * dither_with_decay(t, sim.dither_decay) } else { 0.0 };
        let applied = point.control.map(|u| (u + noise).clamp(-u_max, u_max));
        let penalty = match cfg.penalty_input {
            PenaltyInput::Commanded => point.penalty,
            PenaltyInput::Applied => penalty_of_control(&applied, &cfg.sat)?,
        };
        buffer.push(Sample {
            t,
            z: z.clone(),
            theta: point.theta.clone(),
            cost: point.state_cost + penalty,
            m_scalar: point.m_scalar,
        })?;

        if buffer.is_warm() && t >= sim.learning_start {
            if let Some(prev) = &z_prev {
                critic = match law {
                    UpdateLaw::Novel => {
                        let ctx = StepContext {
                            z: &z,
                            z_prev: prev,
                            coupling: &coupling,
                            dt: sim.dt,
                        };
                        update_step(&critic, cfg, &buffer, &ctx, basis)?
                    }
                    UpdateLaw::Baseline => {
                        let mut next = baseline_update_step(&critic, cfg, &buffer, sim.dt)?;
                        next.sigma = crate::learner::sigma_rate(&z, prev, sim.dt)?;
                        next
                    }
                };
                telemetry.stats.updates += 1;
            }
        }


        let stats = &mut telemetry.stats;
        stats.steps = k + 1;
        stats.max_abs_control = stats.max_abs_control.max(point.control.amax());
        stats.max_weight_norm = stats.max_weight_norm.max(critic.w_hat.norm());
        stats.peak_z_norm = stats.peak_z_norm.max(z.norm());

        if k % sim.record_every == 0 || k == steps {
            telemetry.records.push(Record {
                t,
                v_hat: w_used.dot(&point.theta),
                z: z.clone(),
                control: point.control.clone(),
                applied: applied.clone(),
                noise,
                e_hat: critic.e_hat,
                sigma: critic.sigma,
                xi: critic.xi,
                i_hat: critic.i_hat,
                w_hat: critic.w_hat.clone(),
                aux: scenario.aux(),
            });
        }

        if k == steps {
            break;
        }
        scenario.advance(t, sim.dt, &applied)?;
        z_prev = Some(z);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::quad_basis;
    use crate::model::{augment, catalog};
    use crate::policy::SaturationSpec;

    #[test]
    fn rk4_zero_and_constant_fields() {
        let x = DVector::from_vec(vec![1.0, -2.0]);
        let same = rk4_step(|_, s| Ok(DVector::zeros(s.len())), 0.0, &x, 0.1).unwrap();
        assert_eq!(same, x);
        let shifted = rk4_step(|_, _| Ok(DVector::from_vec(vec![2.0, 0.5])), 0.0, &x, 0.25).unwrap();
        assert_eq!(shifted.as_slice(), &[1.5, -1.875]);
    }

    #[test]
    fn rk4_exponential_decay() {
        let x = DVector::from_element(1, 1.0);
        let next = rk4_step(|_, s| Ok(-s), 0.0, &x, 0.1).unwrap();
        assert!((next[0] - (-0.1f64).exp()).abs() <= 1e-7);
    }

    #[test]
    fn rk4_reports_stage() {
        let x = DVector::from_element(1, 1.0);
        let err = rk4_step(
            |t, s| Ok(if t > 0.0 { s * f64::NAN } else { s.clone() }),
            0.0,
            &x,
            0.1,
        )
        .unwrap_err();
        assert_eq!(err, IrlError::numeric("rk4 stage 2", 2));
    }

    #[test]
    fn dither_at_origin_and_bound() {
        assert_eq!(dither(0.0), 0.0);
        let mut t = 0.0;
        while t < 200.0 {
            assert!(dither(t).abs() <= 8.0);
            t += 0.01;
        }
        assert!(dither(2000.0).abs() < 8.0 * (-18.0f64).exp());
    }

    #[test]
    fn dither_matches_independent_evaluation() {
        // mpmath, 30 digits
        assert!((dither(1.0) - 0.311_736_228_380_132_688).abs() < 1e-12);
        assert!((dither(2.5) + 0.234_406_042_232_130_034).abs() < 1e-12);
    }

    fn frozen_run() -> Telemetry {
        let dynamics = augment(catalog::zero_plant(1, 1), catalog::zero_reference(1)).unwrap();
        let mut scenario = AffineScenario::new(dynamics, &DVector::from_element(1, 0.5)).unwrap();
        let basis = quad_basis(2);
        let sat = SaturationSpec::new(1.0, vec![1.0]).unwrap();
        let q1 = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.0]));
        let cfg = LearnerConfig::new(1.0, 0.1, 0.01, 0.1, 0.01, q1, sat, basis.len());
        let sim = SimConfig {
            dt: 0.001,
            t_end: 0.05,
            seed: 0,
            record_every: 1,
            dither_gain: 1.0,
            dither_decay: DITHER_DECAY,
            learning_start: 0.0,
        };
        run_experiment(&mut scenario, &basis, &cfg, &sim, UpdateLaw::Novel, None).unwrap()
    }

    #[test]
    fn frozen_dynamics_keep_state_and_integrate_cost() {
        let tel = frozen_run();
        for r in &tel.records {
            assert_eq!(r.z.as_slice(), &[0.5, 0.0]);
        }
        // With constant z and zero weights, I = Q(z) (1 - e^{-gamma T}) / gamma up to the trapezoid error.
        let last = tel.records.last().unwrap();
        let expected = 0.5 * (1.0 - (-0.1f64 * 0.01).exp()) / 0.1;
        assert!((last.i_hat - expected).abs() < 1e-10);
        assert_eq!(tel.stats.updates, 41);
    }

    #[test]
    fn telemetry_is_deterministic() {
        let mut a = Vec::new();
        let mut b = Vec::new();
        frozen_run().write_csv(&mut a).unwrap();
        frozen_run().write_csv(&mut b).unwrap();
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        assert!(text.starts_with("t,z0,z1,x0,xd0,u0,u_applied0,noise,e_hat,sigma,xi,i_hat,v_hat,w0"));
    }

    #[test]
    fn dt_longer_than_interval_is_rejected() {
        let sim = SimConfig {
            dt: 0.01,
            t_end: 1.0,
            seed: 0,
            record_every: 1,
            dither_gain: 0.0,
            dither_decay: DITHER_DECAY,
            learning_start: 0.0,
        };
        assert!(sim.validate(0.001).is_err());
        assert!(sim.validate(0.01).is_ok());
    }
}
