//! Reinforcement-integral bookkeeping and the critic update laws.
//!
//! Over a sliding window `[t - T, t]` the learner forms the discounted
//! reinforcement integral `I`, the regressor difference
//! `dtheta = e^{-gamma T} theta(z_t) - theta(z_{t-T})` and the HJB error
//! `e = I + W^T dtheta`. The variable-gain law then moves the weights by
//!
//! ```text
//! W' = - a |e|^q2 tb e
//!      + (a/2) |S|^k2 X grad(theta) G (I - diag(tanh^2 tau2)) G^T z
//!      + a |e|^q2 ((K1 phi^T - K2) W - tb int(e^{-gamma(s-t+T)} W^T M ds))
//! ```
//!
//! with `tb = dtheta / ms^2`, `phi = dtheta / ms`, `ms = 1 + dtheta^T dtheta`,
//! `S = z^T z'` from a backward difference and `X` the indicator of `S >= 0`.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::RegressorBasis;
use crate::error::{ensure_finite, IrlError, Result};
use crate::policy::{penalty_closed, sign0, tau2_from_parts, SaturationSpec};

/// Control signal charged in the reinforcement integrand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyInput {
    /// The policy output before dither.
    #[default]
    Commanded,
    /// The clipped command plus dither actually sent to the plant.
    Applied,
}

/// Which critic update law drives the weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum UpdateLaw {
    /// Variable-gain law with the indicator-gated stabilizing term.
    #[default]
    Novel,
    /// Constant-gain normalized gradient descent on the HJB error.
    Baseline,
}

impl std::str::FromStr for UpdateLaw {
    type Err = IrlError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "novel" => Ok(UpdateLaw::Novel),
            "baseline" => Ok(UpdateLaw::Baseline),
            other => Err(IrlError::config("law", format!("unknown law `{other}`"))),
        }
    }
}

impl std::fmt::Display for UpdateLaw {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            UpdateLaw::Novel => write!(f, "novel"),
            UpdateLaw::Baseline => write!(f, "baseline"),
        }
    }
}

/// How the stabilizing-term indicator is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum IndicatorMode {
    #[default]
    Auto,
    /// Indicator pinned to zero (disables the stabilizing term).
    ForceOff,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnerConfig {
    pub alpha: f64,
    /// Exponent on `|e|` in the HJB and robust terms.
    pub q2: f64,
    /// Exponent on `|S|` in the stabilizing term.
    pub k2: f64,
    pub gamma: f64,
    /// Reinforcement interval `T` in seconds.
    pub interval: f64,
    pub robust_k1: DVector<f64>,
    pub robust_k2: DMatrix<f64>,
    pub q1: DMatrix<f64>,
    pub sat: SaturationSpec,
    /// Include the discounted `W^T M` integral in the robust term.
    pub m_term: bool,
    pub indicator: IndicatorMode,
    pub penalty_input: PenaltyInput,
}

impl LearnerConfig {
    /// Config with `K1 = 0.01 * 1`, `K2 = 0.01 * I`.
    pub fn new(
        alpha: f64,
        q2: f64,
        k2: f64,
        gamma: f64,
        interval: f64,
        q1: DMatrix<f64>,
        sat: SaturationSpec,
        n_features: usize,
    ) -> Self {
        LearnerConfig {
            alpha,
            q2,
            k2,
            gamma,
            interval,
            robust_k1: DVector::from_element(n_features, 0.01),
            robust_k2: DMatrix::identity(n_features, n_features) * 0.01,
            q1,
            sat,
            m_term: true,
            indicator: IndicatorMode::Auto,
            penalty_input: PenaltyInput::Commanded,
        }
    }

    /// Checks every invariant against the basis size, state size and step.
    pub fn validate(&self, n_features: usize, dim_z: usize, dt: f64) -> Result<()> {
        let positive = |v: f64, field: &str| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(IrlError::config(field, "must be positive"))
            }
        };
        let nonneg = |v: f64, field: &str| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(IrlError::config(field, "must be non-negative"))
            }
        };
        positive(self.alpha, "learner.alpha")?;
        nonneg(self.q2, "learner.q2")?;
        nonneg(self.k2, "learner.k2")?;
        nonneg(self.gamma, "learner.gamma")?;
        positive(self.interval, "learner.interval_s")?;
        interval_steps(self.interval, dt)?;
        if self.robust_k1.len() != n_features {
            return Err(IrlError::config("learner.k1", "length must equal the number of features"));
        }
        if self.robust_k2.shape() != (n_features, n_features) {
            return Err(IrlError::config("learner.k2_gain", "must be N1 x N1"));
        }
        if self.q1.shape() != (dim_z, dim_z) {
            return Err(IrlError::config("learner.q1", "must be 2n x 2n"));
        }
        let asym = (&self.q1 - self.q1.transpose()).amax();
        if asym > 1e-12 * (1.0 + self.q1.amax()) {
            return Err(IrlError::config("learner.q1", "must be symmetric"));
        }
        let eig = self.q1.clone().symmetric_eigen();
        if eig.eigenvalues.min() < -1e-12 * (1.0 + self.q1.amax()) {
            return Err(IrlError::config("learner.q1", "must be positive semidefinite"));
        }
        Ok(())
    }

    pub fn state_cost(&self, z: &DVector<f64>) -> f64 {
        (z.transpose() * &self.q1 * z)[(0, 0)]
    }
}

/// Number of integration steps per reinforcement window. `T` must be a whole multiple of `dt`.
pub fn interval_steps(interval: f64, dt: f64) -> Result<usize> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(IrlError::config("sim.dt_s", "must be positive"));
    }
    let ratio = interval / dt;
    if ratio < 1.0 - 1e-9 {
        return Err(IrlError::config(
            "learner.interval_s",
            "reinforcement interval T must be at least dt",
        ));
    }
    let steps = ratio.round();
    if (ratio - steps).abs() > 1e-6 * steps {
        return Err(IrlError::config(
            "learner.interval_s",
            "reinforcement interval T must be a whole multiple of dt",
        ));
    }
    Ok(steps as usize)
}

/// One time-stamped entry of the reinforcement window.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub z: DVector<f64>,
    pub theta: DVector<f64>,
    /// `Q(z) + U` at sample time.
    pub cost: f64,
    /// `W^T M` with the weights in effect at sample time.
    pub m_scalar: f64,
}

/// Samples covering the last reinforcement interval.
#[derive(Debug, Clone)]
pub struct ReinforcementBuffer {
    samples: VecDeque<Sample>,
    interval: f64,
    capacity: usize,
}

impl ReinforcementBuffer {
    pub fn new(interval: f64, dt: f64) -> Result<Self> {
        let steps = interval_steps(interval, dt)?;
        Ok(ReinforcementBuffer {
            samples: VecDeque::with_capacity(steps + 1),
            interval,
            capacity: steps + 1,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn interval(&self) -> f64 {
        self.interval
    }

    /// Appends a sample, dropping the oldest once the window is full.
    pub fn push(&mut self, sample: Sample) -> Result<()> {
        if let Some(last) = self.samples.back() {
            if sample.t <= last.t {
                return Err(IrlError::config("buffer", "timestamps must be strictly increasing"));
            }
        }
        self.samples.push_back(sample);
        while self.samples.len() > self.capacity {
            self.samples.pop_front();
        }
        Ok(())
    }

    pub fn is_warm(&self) -> bool {
        self.samples.len() == self.capacity
    }

    pub fn newest(&self) -> Option<&Sample> {
        self.samples.back()
    }

    pub fn oldest(&self) -> Option<&Sample> {
        self.samples.front()
    }

    pub fn samples(&self) -> impl Iterator<Item = &Sample> {
        self.samples.iter()
    }

    /// Trapezoidal quadrature of `e^{-gamma (s - t + T)} value(s)` over the window.
    pub fn discounted_integral(&self, gamma: f64, value: impl Fn(&Sample) -> f64) -> Result<f64> {
        if !self.is_warm() {
            return Err(IrlError::NotReady);
        }
        let t_now = self.samples.back().expect("warm buffer is non-empty").t;
        let weighted = |s: &Sample| (-gamma * (s.t - t_now + self.interval)).exp() * value(s);
        let mut total = 0.0;
        let mut iter = self.samples.iter();
        let mut prev = iter.next().expect("warm buffer is non-empty");
        let mut prev_value = weighted(prev);
        for s in iter {
            let v = weighted(s);
            total += 0.5 * (s.t - prev.t) * (prev_value + v);
            prev = s;
            prev_value = v;
        }
        Ok(total)
    }
}

/// Discounted integral of `Q(z) + U` over the window.
pub fn reinforcement_integral(buf: &ReinforcementBuffer, gamma: f64) -> Result<f64> {
    buf.discounted_integral(gamma, |s| s.cost)
}

/// Discounted integral of the stored `W^T M` values over the window.
pub fn m_integral(buf: &ReinforcementBuffer, gamma: f64) -> Result<f64> {
    buf.discounted_integral(gamma, |s| s.m_scalar)
}

/// `e^{-gamma T} theta(z_t) - theta(z_{t-T})`.
pub fn delta_theta(
    theta_t: &DVector<f64>,
    theta_tm_t: &DVector<f64>,
    gamma: f64,
    interval: f64,
) -> DVector<f64> {
    theta_t * (-gamma * interval).exp() - theta_tm_t
}

/// HJB error `I + W^T dtheta`.
pub fn hjb_error(i_hat: f64, dtheta: &DVector<f64>, w_hat: &DVector<f64>) -> f64 {
    i_hat + w_hat.dot(dtheta)
}

/// `S = z_t^T (z_t - z_prev) / dt`.
pub fn sigma_rate(z_t: &DVector<f64>, z_prev: &DVector<f64>, dt: f64) -> Result<f64> {
    if !(dt > 0.0) {
        return Err(IrlError::config("dt", "must be positive"));
    }
    Ok(z_t.dot(&((z_t - z_prev) / dt)))
}

/// 0 when the Lyapunov function is strictly decreasing, 1 otherwise.
pub fn indicator(sigma: f64) -> u8 {
    if sigma < 0.0 {
        0
    } else {
        1
    }
}

/// `|x|^p` with `0^p = 0` for `p > 0` and `0^0 = 1`.
pub fn gain_power(x: f64, p: f64) -> f64 {
    if p == 0.0 {
        return 1.0;
    }
    let abs = x.abs();
    if abs == 0.0 {
        0.0
    } else {
        (p * abs.ln()).exp()
    }
}

/// `grad(theta) G u_m (tanh(tau2) - sgn(tau2))` from precomputed parts.
pub fn m_vector_from_parts(
    grad: &DMatrix<f64>,
    coupling: &DMatrix<f64>,
    tau: &DVector<f64>,
    sat: &SaturationSpec,
) -> DVector<f64> {
    let gap = tau.map(|t| sat.u_max() * (t.tanh() - sign0(t)));
    grad * (coupling * gap)
}

pub fn m_vector(
    z: &DVector<f64>,
    w_hat: &DVector<f64>,
    coupling: &DMatrix<f64>,
    basis: &dyn RegressorBasis,
    sat: &SaturationSpec,
) -> Result<DVector<f64>> {
    let tau = crate::policy::tau2(z, w_hat, coupling, basis, sat)?;
    Ok(m_vector_from_parts(&basis.grad(z), coupling, &tau, sat))
}

/// Everything the learner evaluates at a sample instant.
#[derive(Debug, Clone)]
pub struct PointEvaluation {
    pub theta: DVector<f64>,
    pub grad: DMatrix<f64>,
    pub tau: DVector<f64>,
    pub control: DVector<f64>,
    /// Closed-form penalty of the commanded control.
    pub penalty: f64,
    pub state_cost: f64,
    pub m_scalar: f64,
}

/// Evaluates the policy and the buffered quantities at `z`.
pub fn evaluate_point(
    cfg: &LearnerConfig,
    basis: &dyn RegressorBasis,
    z: &DVector<f64>,
    coupling: &DMatrix<f64>,
    w_hat: &DVector<f64>,
) -> Result<PointEvaluation> {
    ensure_finite(z.iter(), "augmented state")?;
    let theta = basis.eval(z);
    let grad = basis.grad(z);
    let tau = tau2_from_parts(&grad, coupling, w_hat, &cfg.sat);
    let control = crate::policy::saturate_tau(&tau, &cfg.sat);
    let penalty = penalty_closed(&tau, &cfg.sat);
    let m_scalar = w_hat.dot(&m_vector_from_parts(&grad, coupling, &tau, &cfg.sat));
    Ok(PointEvaluation {
        theta,
        grad,
        tau,
        control,
        penalty,
        state_cost: cfg.state_cost(z),
        m_scalar,
    })
}

/// Current critic weights plus the last learning signals.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticState {
    pub w_hat: DVector<f64>,
    pub e_hat: f64,
    pub sigma: f64,
    pub xi: u8,
    pub i_hat: f64,
}

impl CriticState {
    pub fn new(w_hat: DVector<f64>) -> Self {
        CriticState {
            w_hat,
            e_hat: 0.0,
            sigma: 0.0,
            xi: 0,
            i_hat: 0.0,
        }
    }

    pub fn zeros(n_features: usize) -> Self {
        CriticState::new(DVector::zeros(n_features))
    }
}

/// Frozen drivers of one update; each term of the law is evaluated from these.
#[derive(Debug, Clone, Copy)]
pub struct TermInputs<'a> {
    pub e_hat: f64,
    pub sigma: f64,
    pub xi: u8,
    pub dtheta: &'a DVector<f64>,
    pub m_integral: f64,
    pub grad: &'a DMatrix<f64>,
    pub coupling: &'a DMatrix<f64>,
    pub tau: &'a DVector<f64>,
    pub z: &'a DVector<f64>,
    pub w_hat: &'a DVector<f64>,
}

/// Weight derivative split into its three parts.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateTerms {
    pub hjb: DVector<f64>,
    pub stabilizing: DVector<f64>,
    pub robust: DVector<f64>,
}

impl UpdateTerms {
    pub fn total(&self) -> DVector<f64> {
        &self.hjb + &self.stabilizing + &self.robust
    }
}

/// Normalized regressors `(dtheta / ms^2, dtheta / ms)`.
pub fn normalized_regressors(dtheta: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let ms = 1.0 + dtheta.dot(dtheta);
    (dtheta / (ms * ms), dtheta / ms)
}

pub fn update_terms(cfg: &LearnerConfig, inputs: &TermInputs<'_>) -> UpdateTerms {
    let (theta_bar, phi) = normalized_regressors(inputs.dtheta);
    let error_gain = cfg.alpha * gain_power(inputs.e_hat, cfg.q2);

    let hjb = &theta_bar * (-error_gain * inputs.e_hat);

    let stabilizing = if inputs.xi == 0 {
        DVector::zeros(inputs.w_hat.len())
    } else {
        let sigma_gain = 0.5 * cfg.alpha * gain_power(inputs.sigma, cfg.k2);
        // G^T L_2z with L_2 = z^T z / 2, then shaped by I - diag(tanh^2 tau2).
        let mut shaped = inputs.coupling.tr_mul(inputs.z);
        for (s, t) in shaped.iter_mut().zip(inputs.tau.iter()) {
            *s *= 1.0 - t.tanh().powi(2);
        }
        inputs.grad * (inputs.coupling * shaped) * sigma_gain
    };

    let k1_part = &cfg.robust_k1 * phi.dot(inputs.w_hat);
    let k2_part = &cfg.robust_k2 * inputs.w_hat;
    let robust = (k1_part - k2_part - &theta_bar * inputs.m_integral) * error_gain;

    UpdateTerms {
        hjb,
        stabilizing,
        robust,
    }
}

/// State consumed by one step of either law.
#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    /// Current augmented state; must equal the newest buffered sample.
    pub z: &'a DVector<f64>,
    pub z_prev: &'a DVector<f64>,
    /// `G(z)` at the current state.
    pub coupling: &'a DMatrix<f64>,
    pub dt: f64,
}

struct WindowSignals {
    i_hat: f64,
    dtheta: DVector<f64>,
    e_hat: f64,
}

fn window_signals(
    state: &CriticState,
    cfg: &LearnerConfig,
    buf: &ReinforcementBuffer,
) -> Result<WindowSignals> {
    let i_hat = reinforcement_integral(buf, cfg.gamma)?;
    let newest = buf.newest().ok_or(IrlError::NotReady)?;
    let oldest = buf.oldest().ok_or(IrlError::NotReady)?;
    let dtheta = delta_theta(&newest.theta, &oldest.theta, cfg.gamma, buf.interval());
    let e_hat = hjb_error(i_hat, &dtheta, &state.w_hat);
    Ok(WindowSignals {
        i_hat,
        dtheta,
        e_hat,
    })
}

fn finish(w_hat: DVector<f64>) -> Result<DVector<f64>> {
    ensure_finite(w_hat.iter(), "critic weights")?;
    Ok(w_hat)
}

/// One explicit-Euler step of the variable-gain law, also returning the term split.
pub fn update_step_with_terms(
    state: &CriticState,
    cfg: &LearnerConfig,
    buf: &ReinforcementBuffer,
    ctx: &StepContext<'_>,
    basis: &dyn RegressorBasis,
) -> Result<(CriticState, UpdateTerms)> {
    let signals = window_signals(state, cfg, buf)?;
    let sigma = sigma_rate(ctx.z, ctx.z_prev, ctx.dt)?;
    let xi = match cfg.indicator {
        IndicatorMode::Auto => indicator(sigma),
        IndicatorMode::ForceOff => 0,
    };
    let m_int = if cfg.m_term {
        m_integral(buf, cfg.gamma)?
    } else {
        0.0
    };
    let grad = basis.grad(ctx.z);
    let tau = tau2_from_parts(&grad, ctx.coupling, &state.w_hat, &cfg.sat);
    let terms = update_terms(
        cfg,
        &TermInputs {
            e_hat: signals.e_hat,
            sigma,
            xi,
            dtheta: &signals.dtheta,
            m_integral: m_int,
            grad: &grad,
            coupling: ctx.coupling,
            tau: &tau,
            z: ctx.z,
            w_hat: &state.w_hat,
        },
    );
    let w_hat = finish(&state.w_hat + terms.total() * ctx.dt)?;
    Ok((
        CriticState {
            w_hat,
            e_hat: signals.e_hat,
            sigma,
            xi,
            i_hat: signals.i_hat,
        },
        terms,
    ))
}

/// One explicit-Euler step of the variable-gain law.
pub fn update_step(
    state: &CriticState,
    cfg: &LearnerConfig,
    buf: &ReinforcementBuffer,
    ctx: &StepContext<'_>,
    basis: &dyn RegressorBasis,
) -> Result<CriticState> {
    update_step_with_terms(state, cfg, buf, ctx, basis).map(|(s, _)| s)
}

/// `W <- W - dt * alpha * tb * (I + W^T dtheta)`.
pub fn baseline_update_step(
    state: &CriticState,
    cfg: &LearnerConfig,
    buf: &ReinforcementBuffer,
    dt: f64,
) -> Result<CriticState> {
    let signals = window_signals(state, cfg, buf)?;
    let (theta_bar, _) = normalized_regressors(&signals.dtheta);
    let w_hat = finish(&state.w_hat + &theta_bar * (-cfg.alpha * signals.e_hat) * dt)?;
    Ok(CriticState {
        w_hat,
        e_hat: signals.e_hat,
        sigma: state.sigma,
        xi: 0,
        i_hat: signals.i_hat,
    })
}
