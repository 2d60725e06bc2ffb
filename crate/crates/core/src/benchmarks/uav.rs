//! Six-degree-of-freedom fixed-wing model and the cascaded attitude loop.
//!
//! Rigid-body kinematics and dynamics follow the usual NED / body-frame
//! formulation with Euler angles. Aerodynamic forces and moments use the
//! linear-in-coefficients model with a sigmoid blend of the lift curve into
//! flat-plate lift past stall. Only the three moment channels (elevator,
//! aileron, rudder) are driven by the learner; throttle is held at trim.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, IrlError, Result};
use crate::sim::{rk4_step, Scenario, Telemetry};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassProps {
    pub mass_kg: f64,
    pub gravity_mps2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inertia {
    pub jx: f64,
    pub jy: f64,
    pub jz: f64,
    pub jxz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub wing_area_m2: f64,
    pub span_m: f64,
    pub chord_m: f64,
    pub prop_area_m2: f64,
    pub air_density_kgpm3: f64,
    pub oswald: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Propulsion {
    pub k_motor: f64,
    pub c_prop: f64,
}

/// Nondimensional stability and control derivatives (per radian).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aero {
    pub c_l_0: f64,
    pub c_l_alpha: f64,
    pub c_l_q: f64,
    pub c_l_delta_e: f64,
    pub c_d_p: f64,
    pub c_d_q: f64,
    pub c_d_delta_e: f64,
    pub c_m_0: f64,
    pub c_m_alpha: f64,
    pub c_m_q: f64,
    pub c_m_delta_e: f64,
    pub c_y_0: f64,
    pub c_y_beta: f64,
    pub c_y_p: f64,
    pub c_y_r: f64,
    pub c_y_delta_a: f64,
    pub c_y_delta_r: f64,
    pub c_ell_0: f64,
    pub c_ell_beta: f64,
    pub c_ell_p: f64,
    pub c_ell_r: f64,
    pub c_ell_delta_a: f64,
    pub c_ell_delta_r: f64,
    pub c_n_0: f64,
    pub c_n_beta: f64,
    pub c_n_p: f64,
    pub c_n_r: f64,
    pub c_n_delta_a: f64,
    pub c_n_delta_r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Limits {
    /// Stall blending angle.
    pub stall_alpha_rad: f64,
    /// Sharpness of the stall blend.
    pub stall_blend_rate: f64,
}

/// Airframe description loaded from a nested plain-text config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Airframe {
    pub name: String,
    pub mass: MassProps,
    pub inertia: Inertia,
    pub geometry: Geometry,
    pub propulsion: Propulsion,
    pub aero: Aero,
    pub limits: Limits,
}

pub const AEROSONDE_TOML: &str = include_str!("../../../../configs/airframe_aerosonde.toml");

impl Airframe {
    pub fn aerosonde() -> Self {
        Airframe::from_toml(AEROSONDE_TOML).expect("bundled airframe parses")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let airframe: Airframe =
            toml::from_str(text).map_err(|e| IrlError::config("airframe", e.to_string()))?;
        airframe.validate()?;
        Ok(airframe)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("mass.mass_kg", self.mass.mass_kg),
            ("mass.gravity_mps2", self.mass.gravity_mps2),
            ("inertia.jx", self.inertia.jx),
            ("inertia.jy", self.inertia.jy),
            ("inertia.jz", self.inertia.jz),
            ("geometry.wing_area_m2", self.geometry.wing_area_m2),
            ("geometry.span_m", self.geometry.span_m),
            ("geometry.chord_m", self.geometry.chord_m),
            ("geometry.air_density_kgpm3", self.geometry.air_density_kgpm3),
            ("geometry.oswald", self.geometry.oswald),
            ("limits.stall_alpha_rad", self.limits.stall_alpha_rad),
        ];
        for (field, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(IrlError::config(format!("airframe.{field}"), "must be positive"));
            }
        }
        if self.inertia.jx * self.inertia.jz - self.inertia.jxz.powi(2) <= 0.0 {
            return Err(IrlError::config("airframe.inertia", "Jx Jz - Jxz^2 must be positive"));
        }
        Ok(())
    }

    fn aspect_ratio(&self) -> f64 {
        self.geometry.span_m.powi(2) / self.geometry.wing_area_m2
    }

    fn stall_alpha(&self) -> f64 {
        self.limits.stall_alpha_rad
    }

    /// Inertia combinations used by the rotational dynamics.
    pub fn gammas(&self) -> [f64; 9] {
        let Inertia { jx, jy, jz, jxz } = self.inertia;
        let g = jx * jz - jxz * jxz;
        [
            g,
            jxz * (jx - jy + jz) / g,
            (jz * (jz - jy) + jxz * jxz) / g,
            jz / g,
            jxz / g,
            (jz - jx) / jy,
            jxz / jy,
            ((jx - jy) * jx + jxz * jxz) / g,
            jx / g,
        ]
    }
}

/// Twelve-state rigid-body state in NED position, body velocity, Euler angles and body rates.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UavState {
    pub pn: f64,
    pub pe: f64,
    pub pd: f64,
    pub u: f64,
    pub v: f64,
    pub w: f64,
    pub phi: f64,
    pub theta: f64,
    pub psi: f64,
    pub p: f64,
    pub q: f64,
    pub r: f64,
}

impl UavState {
    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_vec(vec![
            self.pn, self.pe, self.pd, self.u, self.v, self.w, self.phi, self.theta, self.psi,
            self.p, self.q, self.r,
        ])
    }

    pub fn from_vector(x: &DVector<f64>) -> Self {
        UavState {
            pn: x[0],
            pe: x[1],
            pd: x[2],
            u: x[3],
            v: x[4],
            w: x[5],
            phi: x[6],
            theta: x[7],
            psi: x[8],
            p: x[9],
            q: x[10],
            r: x[11],
        }
    }

    pub fn attitude(&self) -> Vector3<f64> {
        Vector3::new(self.phi, self.theta, self.psi)
    }

    pub fn rates(&self) -> Vector3<f64> {
        Vector3::new(self.p, self.q, self.r)
    }

    pub fn airspeed(&self) -> f64 {
        (self.u * self.u + self.v * self.v + self.w * self.w).sqrt()
    }

    /// Angle of attack and sideslip; both zero at zero airspeed.
    pub fn air_angles(&self) -> (f64, f64) {
        let va = self.airspeed();
        if va < 1e-9 {
            return (0.0, 0.0);
        }
        (self.w.atan2(self.u), (self.v / va).clamp(-1.0, 1.0).asin())
    }
}

/// Surface deflections (rad) and throttle in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControlInputs {
    pub elevator: f64,
    pub aileron: f64,
    pub rudder: f64,
    pub throttle: f64,
}

/// Body-frame forces (N) and moments (N m).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForcesMoments {
    pub force: Vector3<f64>,
    pub moment: Vector3<f64>,
}

fn lift_coefficient(af: &Airframe, alpha: f64) -> f64 {
    let m = af.limits.stall_blend_rate;
    let a0 = af.stall_alpha();
    let e1 = (-m * (alpha - a0)).exp();
    let e2 = (m * (alpha + a0)).exp();
    let sigma = (1.0 + e1 + e2) / ((1.0 + e1) * (1.0 + e2));
    let linear = af.aero.c_l_0 + af.aero.c_l_alpha * alpha;
    let plate = 2.0 * alpha.signum() * alpha.sin().powi(2) * alpha.cos();
    (1.0 - sigma) * linear + sigma * plate
}

fn drag_coefficient(af: &Airframe, alpha: f64) -> f64 {
    let cl = af.aero.c_l_0 + af.aero.c_l_alpha * alpha;
    af.aero.c_d_p + cl * cl / (PI * af.geometry.oswald * af.aspect_ratio())
}

pub fn dynamic_pressure(af: &Airframe, airspeed: f64) -> f64 {
    0.5 * af.geometry.air_density_kgpm3 * airspeed * airspeed
}

/// Gravity, aerodynamic and propeller loads in the body frame.
pub fn forces_moments(af: &Airframe, x: &UavState, c: &ControlInputs) -> ForcesMoments {
    let mg = af.mass.mass_kg * af.mass.gravity_mps2;
    let gravity = Vector3::new(
        -mg * x.theta.sin(),
        mg * x.theta.cos() * x.phi.sin(),
        mg * x.theta.cos() * x.phi.cos(),
    );
    let va = x.airspeed();
    let g = &af.geometry;
    let a = &af.aero;
    let prop = 0.5
        * g.air_density_kgpm3
        * g.prop_area_m2
        * af.propulsion.c_prop
        * ((af.propulsion.k_motor * c.throttle).powi(2) - va * va);
    let thrust = Vector3::new(prop, 0.0, 0.0);
    if va < 1e-6 {
        return ForcesMoments {
            force: gravity + thrust,
            moment: Vector3::zeros(),
        };
    }
    let (alpha, beta) = x.air_angles();
    let qbar_s = dynamic_pressure(af, va) * g.wing_area_m2;
    let (ca, sa) = (alpha.cos(), alpha.sin());
    let cl = lift_coefficient(af, alpha);
    let cd = drag_coefficient(af, alpha);
    let c_x = -cd * ca + cl * sa;
    let c_xq = -a.c_d_q * ca + a.c_l_q * sa;
    let c_xde = -a.c_d_delta_e * ca + a.c_l_delta_e * sa;
    let c_z = -cd * sa - cl * ca;
    let c_zq = -a.c_d_q * sa - a.c_l_q * ca;
    let c_zde = -a.c_d_delta_e * sa - a.c_l_delta_e * ca;
    let cq = g.chord_m / (2.0 * va);
    let bq = g.span_m / (2.0 * va);

    let aero_force = Vector3::new(
        qbar_s * (c_x + c_xq * cq * x.q + c_xde * c.elevator),
        qbar_s
            * (a.c_y_0 + a.c_y_beta * beta + a.c_y_p * bq * x.p + a.c_y_r * bq * x.r
                + a.c_y_delta_a * c.aileron
                + a.c_y_delta_r * c.rudder),
        qbar_s * (c_z + c_zq * cq * x.q + c_zde * c.elevator),
    );
    let moment = Vector3::new(
        qbar_s
            * g.span_m
            * (a.c_ell_0 + a.c_ell_beta * beta + a.c_ell_p * bq * x.p + a.c_ell_r * bq * x.r
                + a.c_ell_delta_a * c.aileron
                + a.c_ell_delta_r * c.rudder),
        qbar_s
            * g.chord_m
            * (a.c_m_0 + a.c_m_alpha * alpha + a.c_m_q * cq * x.q + a.c_m_delta_e * c.elevator),
        qbar_s
            * g.span_m
            * (a.c_n_0 + a.c_n_beta * beta + a.c_n_p * bq * x.p + a.c_n_r * bq * x.r
                + a.c_n_delta_a * c.aileron
                + a.c_n_delta_r * c.rudder),
    );
    ForcesMoments {
        force: gravity + thrust + aero_force,
        moment,
    }
}

/// Time derivative of the twelve-state model.
pub fn uav_dynamics(af: &Airframe, x: &UavState, c: &ControlInputs) -> UavState {
    let fm = forces_moments(af, x, c);
    let m = af.mass.mass_kg;
    let [_, g1, g2, g3, g4, g5, g6, g7, g8] = af.gammas();
    let (sp, cp) = x.phi.sin_cos();
    let (st, ct) = x.theta.sin_cos();
    let (ss, cs) = x.psi.sin_cos();
    let body_to_ned = Matrix3::new(
        ct * cs,
        sp * st * cs - cp * ss,
        cp * st * cs + sp * ss,
        ct * ss,
        sp * st * ss + cp * cs,
        cp * st * ss - sp * cs,
        -st,
        sp * ct,
        cp * ct,
    );
    let pos_dot = body_to_ned * Vector3::new(x.u, x.v, x.w);
    let (l, mm, n) = (fm.moment.x, fm.moment.y, fm.moment.z);
    UavState {
        pn: pos_dot.x,
        pe: pos_dot.y,
        pd: pos_dot.z,
        u: x.r * x.v - x.q * x.w + fm.force.x / m,
        v: x.p * x.w - x.r * x.u + fm.force.y / m,
        w: x.q * x.u - x.p * x.v + fm.force.z / m,
        phi: x.p + x.q * sp * st / ct + x.r * cp * st / ct,
        theta: x.q * cp - x.r * sp,
        psi: x.q * sp / ct + x.r * cp / ct,
        p: g1 * x.p * x.q - g2 * x.q * x.r + g3 * l + g4 * n,
        q: g5 * x.p * x.r - g6 * (x.p * x.p - x.r * x.r) + mm / af.inertia.jy,
        r: g7 * x.p * x.q - g1 * x.q * x.r + g4 * l + g8 * n,
    }
}

/// Sensitivity of `(p', q', r')` to `(elevator, aileron, rudder)` at the given airspeed.
pub fn rate_coupling(af: &Airframe, airspeed: f64) -> Matrix3<f64> {
    let [_, _, _, g3, g4, _, _, _, g8] = af.gammas();
    let qbar_s = dynamic_pressure(af, airspeed) * af.geometry.wing_area_m2;
    let span = qbar_s * af.geometry.span_m;
    let a = &af.aero;
    Matrix3::new(
        0.0,
        span * (g3 * a.c_ell_delta_a + g4 * a.c_n_delta_a),
        span * (g3 * a.c_ell_delta_r + g4 * a.c_n_delta_r),
        qbar_s * af.geometry.chord_m * a.c_m_delta_e / af.inertia.jy,
        0.0,
        0.0,
        0.0,
        span * (g4 * a.c_ell_delta_a + g8 * a.c_n_delta_a),
        span * (g4 * a.c_ell_delta_r + g8 * a.c_n_delta_r),
    )
}

/// Wings-level, constant-altitude trim.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trim {
    pub airspeed: f64,
    pub alpha: f64,
    pub elevator: f64,
    pub throttle: f64,
}

impl Trim {
    pub fn state(&self) -> UavState {
        UavState {
            u: self.airspeed * self.alpha.cos(),
            w: self.airspeed * self.alpha.sin(),
            theta: self.alpha,
            ..UavState::default()
        }
    }

    pub fn controls(&self) -> ControlInputs {
        ControlInputs {
            elevator: self.elevator,
            throttle: self.throttle,
            ..ControlInputs::default()
        }
    }
}

fn trim_residual(af: &Airframe, airspeed: f64, unknowns: &Vector3<f64>) -> Vector3<f64> {
    let trim = Trim {
        airspeed,
        alpha: unknowns.x,
        elevator: unknowns.y,
        throttle: unknowns.z,
    };
    let d = uav_dynamics(af, &trim.state(), &trim.controls());
    Vector3::new(d.u, d.w, d.q)
}

/// Newton solve of `u' = w' = q' = 0` for angle of attack, elevator and throttle.
pub fn solve_trim(af: &Airframe, airspeed: f64) -> Result<Trim> {
    if !(airspeed > 0.0) {
        return Err(IrlError::config("plant.airspeed_mps", "must be positive"));
    }
    let mut x = Vector3::new(0.05, -0.1, 0.5);
    for _ in 0..100 {
        let res = trim_residual(af, airspeed, &x);
        if res.norm() < 1e-11 {
            let trim = Trim {
                airspeed,
                alpha: x.x,
                elevator: x.y,
                throttle: x.z,
            };
            if !(0.0..=1.0).contains(&trim.throttle) {
                return Err(IrlError::Oracle(format!(
                    "trim throttle {:.3} outside [0, 1]",
                    trim.throttle
                )));
            }
            return Ok(trim);
        }
        let mut jac = Matrix3::zeros();
        for k in 0..3 {
            let mut xp = x;
            let h = 1e-7;
            xp[k] += h;
            let col = (trim_residual(af, airspeed, &xp) - res) / h;
            jac.set_column(k, &col);
        }
        let step = jac
            .lu()
            .solve(&(-res))
            .ok_or_else(|| IrlError::Oracle("singular trim Jacobian".into()))?;
        x += step;
    }
    Err(IrlError::Oracle("trim solver did not converge".into()))
}

/// Outer-loop rate gains on roll, pitch and yaw error (1/s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuterLoopGains {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl Default for OuterLoopGains {
    fn default() -> Self {
        OuterLoopGains {
            roll: 8.0,
            pitch: 10.0,
            yaw: 12.0,
        }
    }
}

fn wrap_angle(a: f64) -> f64 {
    let wrapped = (a + PI).rem_euclid(2.0 * PI) - PI;
    if wrapped == -PI {
        PI
    } else {
        wrapped
    }
}

/// Desired body rates from attitude error: `rate_des = rate_ff - k (att - att_des)`.
pub fn outer_loop(
    attitude: &Vector3<f64>,
    attitude_des: &Vector3<f64>,
    attitude_des_rate: &Vector3<f64>,
    gains: &OuterLoopGains,
) -> Vector3<f64> {
    let err = attitude - attitude_des;
    let err = Vector3::new(err.x, err.y, wrap_angle(err.z));
    Vector3::new(
        attitude_des_rate.x - gains.roll * err.x,
        attitude_des_rate.y - gains.pitch * err.y,
        attitude_des_rate.z - gains.yaw * err.z,
    )
}

/// Piecewise-constant attitude command starting at `t_start` (radians).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Setpoint {
    pub t_start: f64,
    pub attitude: Vector3<f64>,
}

pub fn setpoint_at(schedule: &[Setpoint], t: f64) -> Vector3<f64> {
    schedule
        .iter()
        .rev()
        .find(|s| s.t_start <= t)
        .or(schedule.first())
        .map(|s| s.attitude)
        .unwrap_or_else(Vector3::zeros)
}

/// Attitude tracking with the learner closing the rate loop.
///
/// The learner's plant state is `(p, q, r)`; the reference half of the augmented
/// state is the outer loop's live rate command.
#[derive(Debug, Clone)]
pub struct UavScenario {
    airframe: Airframe,
    trim: Trim,
    gains: OuterLoopGains,
    schedule: Vec<Setpoint>,
    state: UavState,
    t: f64,
    last_applied: Vector3<f64>,
    rate_limit: Option<f64>,
}

impl UavScenario {
    pub fn new(
        airframe: Airframe,
        airspeed: f64,
        gains: OuterLoopGains,
        schedule: Vec<Setpoint>,
    ) -> Result<Self> {
        if schedule.is_empty() {
            return Err(IrlError::config("reference.schedule", "needs at least one setpoint"));
        }
        if schedule.windows(2).any(|w| w[1].t_start <= w[0].t_start) {
            return Err(IrlError::config("reference.schedule", "start times must increase"));
        }
        let trim = solve_trim(&airframe, airspeed)?;
        Ok(UavScenario {
            state: trim.state(),
            airframe,
            trim,
            gains,
            schedule,
            t: 0.0,
            last_applied: Vector3::zeros(),
            rate_limit: None,
        })
    }

    pub fn schedule(&self) -> &[Setpoint] {
        &self.schedule
    }

    pub fn trim(&self) -> &Trim {
        &self.trim
    }

    pub fn state(&self) -> &UavState {
        &self.state
    }

    pub fn attitude_command(&self) -> Vector3<f64> {
        setpoint_at(&self.schedule, self.t)
    }

    /// Clamps each commanded rate to `[-limit, limit]` (rad/s).
    pub fn with_rate_limit(mut self, limit: Option<f64>) -> Self {
        self.rate_limit = limit;
        self
    }

    pub fn rate_command(&self) -> Vector3<f64> {
        let rates = outer_loop(
            &self.state.attitude(),
            &self.attitude_command(),
            &Vector3::zeros(),
            &self.gains,
        );
        match self.rate_limit {
            Some(l) => rates.map(|r| r.clamp(-l, l)),
            None => rates,
        }
    }

    fn controls(&self, u: &Vector3<f64>) -> ControlInputs {
        ControlInputs {
            elevator: self.trim.elevator + u.x,
            aileron: u.y,
            rudder: u.z,
            throttle: self.trim.throttle,
        }
    }
}

impl Scenario for UavScenario {
    fn n(&self) -> usize {
        3
    }

    fn m(&self) -> usize {
        3
    }

    fn z(&self) -> DVector<f64> {
        let des = self.rate_command();
        let err = self.state.rates() - des;
        DVector::from_vec(vec![err.x, err.y, err.z, des.x, des.y, des.z])
    }

    fn coupling(&self) -> Result<DMatrix<f64>> {
        let g = rate_coupling(&self.airframe, self.state.airspeed());
        let mut out = DMatrix::zeros(6, 3);
        for i in 0..3 {
            for j in 0..3 {
                out[(i, j)] = g[(i, j)];
            }
        }
        Ok(out)
    }

    fn advance(&mut self, t: f64, dt: f64, u: &DVector<f64>) -> Result<()> {
        let u = Vector3::new(u[0], u[1], u[2]);
        let controls = self.controls(&u);
        let af = &self.airframe;
        let next = rk4_step(
            |_, x| Ok(uav_dynamics(af, &UavState::from_vector(x), &controls).to_vector()),
            t,
            &self.state.to_vector(),
            dt,
        )?;
        ensure_finite(next.iter(), "uav state")?;
        let next = UavState::from_vector(&next);
        if next.theta.abs() >= 0.5 * PI - 1e-6 {
            return Err(IrlError::Domain {
                component: 7,
                message: "pitch reached the Euler-angle singularity".into(),
            });
        }
        self.state = next;
        self.t = t + dt;
        self.last_applied = u;
        Ok(())
    }

    fn aux_names(&self) -> Vec<String> {
        [
            "phi", "theta", "psi", "phi_des", "theta_des", "psi_des", "pn", "pe", "pd", "u_body",
            "v_body", "w_body", "airspeed", "alpha", "beta", "stall",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect()
    }

    fn aux(&self) -> Vec<f64> {
        let s = &self.state;
        let des = self.attitude_command();
        let (alpha, beta) = s.air_angles();
        let stall = if alpha.abs() > self.airframe.stall_alpha() { 1.0 } else { 0.0 };
        vec![
            s.phi,
            s.theta,
            s.psi,
            des.x,
            des.y,
            des.z,
            s.pn,
            s.pe,
            s.pd,
            s.u,
            s.v,
            s.w,
            s.airspeed(),
            alpha,
            beta,
            stall,
        ]
    }
}

/// Tracking summary of a UAV run.
#[derive(Debug, Clone, PartialEq)]
pub struct UavMetrics {
    pub finite: bool,
    pub weight_norm_max: f64,
    pub weight_norm_final: f64,
    /// Per segment, mean absolute attitude error (deg) over the last second before it ends.
    pub segment_errors_deg: Vec<[f64; 3]>,
    pub v_hat_max_abs: f64,
    pub v_hat_final: f64,
}

impl UavMetrics {
    pub fn worst_error_deg(&self) -> f64 {
        self.segment_errors_deg
            .iter()
            .flatten()
            .fold(0.0, |a: f64, b| a.max(*b))
    }
}

/// Summarizes a telemetry log whose aux columns come from [`UavScenario`].
pub fn uav_metrics(tel: &Telemetry, schedule: &[Setpoint], t_end: f64) -> Result<UavMetrics> {
    let col = |name: &str| {
        tel.aux_names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| IrlError::Unsupported(format!("telemetry has no `{name}` column")))
    };
    let att = [col("phi")?, col("theta")?, col("psi")?];
    let des = [col("phi_des")?, col("theta_des")?, col("psi_des")?];
    let last = tel.records.last().ok_or(IrlError::NotReady)?;
    let finite = tel.records.iter().all(|r| {
        r.z.iter().chain(r.w_hat.iter()).chain(r.aux.iter()).all(|v| v.is_finite()) && r.v_hat.is_finite()
    });
    let weight_norm_max = tel.records.iter().map(|r| r.w_hat.norm()).fold(0.0, f64::max);
    let v_hat_max_abs = tel.records.iter().map(|r| r.v_hat.abs()).fold(0.0, f64::max);
    let mut ends: Vec<f64> = schedule.iter().skip(1).map(|s| s.t_start).collect();
    ends.push(t_end);
    let segment_errors_deg = ends
        .iter()
        .map(|&end| {
            let window: Vec<_> = tel.records.iter().filter(|r| r.t > end - 1.0 && r.t <= end).collect();
            let mut out = [f64::NAN; 3];
            for k in 0..3 {
                let sum: f64 = window.iter().map(|r| wrap_angle(r.aux[att[k]] - r.aux[des[k]]).abs()).sum();
                out[k] = (sum / window.len() as f64).to_degrees();
            }
            out
        })
        .collect();
    Ok(UavMetrics {
        finite,
        weight_norm_max,
        weight_norm_final: last.w_hat.norm(),
        segment_errors_deg,
        v_hat_max_abs,
        v_hat_final: last.v_hat,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_airframe_loads() {
        let af = Airframe::aerosonde();
        assert_eq!(af.mass.mass_kg, 13.5);
        assert!(af.validate().is_ok());
    }

    #[test]
    fn trim_balances_pitch_and_forces() {
        let af = Airframe::aerosonde();
        let trim = solve_trim(&af, 25.0).unwrap();
        let d = uav_dynamics(&af, &trim.state(), &trim.controls());
        assert!(d.u.abs() < 1e-9 && d.w.abs() < 1e-9 && d.q.abs() < 1e-9);
        // symmetric flight: no rolling or yawing moment
        let fm = forces_moments(&af, &trim.state(), &trim.controls());
        assert!(fm.moment.x.abs() < 1e-12 && fm.moment.z.abs() < 1e-12);
        assert!(trim.alpha > 0.0 && trim.alpha < 0.2);
        assert!((0.0..1.0).contains(&trim.throttle));
    }

    #[test]
    fn positive_aileron_rolls_right() {
        let af = Airframe::aerosonde();
        let trim = solve_trim(&af, 25.0).unwrap();
        let mut c = trim.controls();
        c.aileron = 0.1;
        let d = uav_dynamics(&af, &trim.state(), &c);
        assert!(d.p > 0.0);
        assert!(d.p.abs() > d.r.abs());
    }

    #[test]
    fn zero_airspeed_has_no_aero_loads() {
        let af = Airframe::aerosonde();
        let x = UavState::default();
        let c = ControlInputs {
            elevator: 0.3,
            aileron: 0.2,
            rudder: -0.1,
            throttle: 0.0,
        };
        let fm = forces_moments(&af, &x, &c);
        assert_eq!(fm.moment, Vector3::zeros());
        assert_eq!(fm.force.x, 0.0);
        assert_eq!(fm.force.z, af.mass.mass_kg * af.mass.gravity_mps2);
    }

    #[test]
    fn rate_coupling_matches_finite_differences() {
        let af = Airframe::aerosonde();
        let trim = solve_trim(&af, 25.0).unwrap();
        let x = trim.state();
        let g = rate_coupling(&af, x.airspeed());
        let base = trim.controls();
        let h = 1e-6;
        for j in 0..3 {
            let mut c = base;
            match j {
                0 => c.elevator += h,
                1 => c.aileron += h,
                _ => c.rudder += h,
            }
            let d1 = uav_dynamics(&af, &x, &c);
            let d0 = uav_dynamics(&af, &x, &base);
            let fd = [(d1.p - d0.p) / h, (d1.q - d0.q) / h, (d1.r - d0.r) / h];
            for i in 0..3 {
                assert!((g[(i, j)] - fd[i]).abs() < 1e-4 * (1.0 + g[(i, j)].abs()));
            }
        }
    }

    #[test]
    fn outer_loop_cases() {
        let gains = OuterLoopGains::default();
        let zero = Vector3::zeros();
        let att = Vector3::new(0.1, -0.2, 0.3);
        assert_eq!(outer_loop(&att, &att, &zero, &gains), zero);
        let one_deg = Vector3::new(1f64.to_radians(), 0.0, 0.0);
        let rates = outer_loop(&one_deg, &zero, &zero, &gains);
        assert!((rates.x - (-8f64).to_radians()).abs() < 1e-15);
        let des = Vector3::new(-30f64.to_radians(), 0.0, -10f64.to_radians());
        let rates = outer_loop(&zero, &des, &zero, &gains);
        assert!((rates.x.to_degrees() + 240.0).abs() < 1e-9);
        assert!((rates.z.to_degrees() + 120.0).abs() < 1e-9);
    }

    #[test]
    fn yaw_error_wraps() {
        let gains = OuterLoopGains::default();
        let att = Vector3::new(0.0, 0.0, 179f64.to_radians());
        let des = Vector3::new(0.0, 0.0, -179f64.to_radians());
        let rates = outer_loop(&att, &des, &Vector3::zeros(), &gains);
        assert!((rates.z - 12.0 * 2f64.to_radians()).abs() < 1e-9);
    }

    #[test]
    fn schedule_lookup() {
        let sched = [
            Setpoint { t_start: 0.0, attitude: Vector3::new(1.0, 0.0, 0.0) },
            Setpoint { t_start: 7.0, attitude: Vector3::new(2.0, 0.0, 0.0) },
        ];
        assert_eq!(setpoint_at(&sched, 6.999).x, 1.0);
        assert_eq!(setpoint_at(&sched, 7.0).x, 2.0);
    }

    #[test]
    fn augmented_state_layout() {
        let sched = vec![Setpoint {
            t_start: 0.0,
            attitude: Vector3::new(-30f64.to_radians(), 0.0, -10f64.to_radians()),
        }];
        let sc = UavScenario::new(Airframe::aerosonde(), 25.0, OuterLoopGains::default(), sched).unwrap();
        let z = sc.z();
        let des = sc.rate_command();
        assert_eq!(z.len(), 6);
        assert_eq!(z[3], des.x);
        assert_eq!(z[0], sc.state().p - des.x);
        let g = sc.coupling().unwrap();
        assert!(g.rows(3, 3).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn trimmed_flight_holds_without_input() {
        let sched = vec![Setpoint { t_start: 0.0, attitude: Vector3::new(0.0, 1.0f64.to_radians(), 0.0) }];
        let mut sc = UavScenario::new(Airframe::aerosonde(), 25.0, OuterLoopGains::default(), sched).unwrap();
        let zero = DVector::zeros(3);
        for k in 0..1000 {
            sc.advance(k as f64 * 1e-3, 1e-3, &zero).unwrap();
        }
        let s = sc.state();
        assert!(s.q.abs() < 1e-6 && s.p.abs() < 1e-9);
        assert!((s.airspeed() - 25.0).abs() < 1e-6);
    }
}
