//! Saturated policy and the matching non-quadratic control penalty.
//!
//! With `tau2 = (1 / 2u_m) R^-1 G(z)^T grad(theta)^T W`, the policy is
//! `u = -u_m tanh(tau2)` and the penalty
//! `U(u) = 2 u_m sum_i R_i int_0^{u_i} atanh(v / u_m) dv`
//! has the closed form
//! `2 u_m^2 tau^T R tanh(tau) + u_m^2 sum_i R_i ln(1 - tanh^2(tau_i))`
//! when `u = -u_m tanh(tau)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::RegressorBasis;
use crate::error::{IrlError, Result};
use crate::quad;

/// Actuator bound `u_m` and diagonal control weight `R`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaturationSpec {
    u_max: f64,
    r_diag: Vec<f64>,
}

impl SaturationSpec {
    pub fn new(u_max: f64, r_diag: Vec<f64>) -> Result<Self> {
        if !(u_max.is_finite() && u_max > 0.0) {
            return Err(IrlError::config("saturation.u_max", "must be a positive finite number"));
        }
        if r_diag.is_empty() {
            return Err(IrlError::config("saturation.r_diag", "must not be empty"));
        }
        if let Some(i) = r_diag.iter().position(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(IrlError::config(
                "saturation.r_diag",
                format!("entry {i} must be positive"),
            ));
        }
        Ok(SaturationSpec { u_max, r_diag })
    }

    pub fn u_max(&self) -> f64 {
        self.u_max
    }

    pub fn r_diag(&self) -> &[f64] {
        &self.r_diag
    }

    pub fn m(&self) -> usize {
        self.r_diag.len()
    }

    pub fn r_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(&self.r_diag))
    }
}

/// Symmetric sign with `sign(0) = 0`.
pub fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `ln(1 - tanh^2 a)` without overflow for large `|a|`.
pub fn ln_sech2(a: f64) -> f64 {
    let abs = a.abs();
    2.0 * (std::f64::consts::LN_2 - abs - (-2.0 * abs).exp().ln_1p())
}

/// Saturation argument from a precomputed Jacobian and coupling matrix.
pub fn tau2_from_parts(
    grad: &DMatrix<f64>,
    coupling: &DMatrix<f64>,
    w_hat: &DVector<f64>,
    sat: &SaturationSpec,
) -> DVector<f64> {
    // grad(theta)^T W is the approximate value gradient in z-space.
    let value_grad = grad.tr_mul(w_hat);
    let mut tau = coupling.tr_mul(&value_grad);
    for (i, t) in tau.iter_mut().enumerate() {
        *t /= 2.0 * sat.u_max * sat.r_diag[i];
    }
    tau
}

fn check_shapes(
    z: &DVector<f64>,
    w_hat: &DVector<f64>,
    coupling: &DMatrix<f64>,
    basis: &dyn RegressorBasis,
    sat: &SaturationSpec,
) -> Result<()> {
    if z.len() != basis.dim_in() {
        return Err(IrlError::config("z", "length does not match basis input dimension"));
    }
    if w_hat.len() != basis.len() {
        return Err(IrlError::config("w_hat", "length does not match basis size"));
    }
    if coupling.shape() != (z.len(), sat.m()) {
        return Err(IrlError::config("G", "coupling must be 2n x m"));
    }
    Ok(())
}

/// `tau2(z) = (1 / 2u_m) R^-1 G(z)^T grad(theta)(z)^T W`.
pub fn tau2(
    z: &DVector<f64>,
    w_hat: &DVector<f64>,
    coupling: &DMatrix<f64>,
    basis: &dyn RegressorBasis,
    sat: &SaturationSpec,
) -> Result<DVector<f64>> {
    check_shapes(z, w_hat, coupling, basis, sat)?;
    Ok(tau2_from_parts(&basis.grad(z), coupling, w_hat, sat))
}

/// `u = -u_m tanh(tau)`.
pub fn saturate_tau(tau: &DVector<f64>, sat: &SaturationSpec) -> DVector<f64> {
    tau.map(|t| -sat.u_max * t.tanh())
}

/// Approximate optimal control `u = -u_m tanh(tau2(z))`.
pub fn policy_eval(
    z: &DVector<f64>,
    w_hat: &DVector<f64>,
    coupling: &DMatrix<f64>,
    basis: &dyn RegressorBasis,
    sat: &SaturationSpec,
) -> Result<DVector<f64>> {
    Ok(saturate_tau(&tau2(z, w_hat, coupling, basis, sat)?, sat))
}

/// Penalty by adaptive quadrature of the inverse-tanh integrand.
pub fn penalty_integral(u: &DVector<f64>, sat: &SaturationSpec) -> Result<f64> {
    if u.len() != sat.m() {
        return Err(IrlError::config("u", "control dimension mismatch"));
    }
    let um = sat.u_max;
    let edge = um * (1.0 - 1e-12);
    let mut total = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        if !ui.is_finite() || ui.abs() >= um {
            return Err(IrlError::Domain {
                component: i,
                message: format!("|u| = {} must be below u_max = {um}", ui.abs()),
            });
        }
        // The integrand is odd, so the integral is even in u_i.
        let upper = ui.abs().min(edge);
        let integrand = |v: f64| 0.5 * ((um + v) / (um - v)).ln();
        let value = quad::integrate(integrand, 0.0, upper, 1e-13);
        total += sat.r_diag[i] * value;
    }
    Ok(2.0 * um * total)
}

/// Closed-form penalty of `u = -u_m tanh(tau)`.
pub fn penalty_closed(tau: &DVector<f64>, sat: &SaturationSpec) -> f64 {
    let um2 = sat.u_max * sat.u_max;
    tau.iter()
        .zip(sat.r_diag.iter())
        .map(|(&t, &r)| r * (2.0 * um2 * t * t.tanh() + um2 * ln_sech2(t)))
        .sum()
}

/// Penalty of an arbitrary control inside the box, in closed form.
///
/// Entries at the bound are evaluated just inside it, where the penalty
/// stays finite (`2 u_m^2 R ln 2` per channel).
pub fn penalty_of_control(u: &DVector<f64>, sat: &SaturationSpec) -> Result<f64> {
    if u.len() != sat.m() {
        return Err(IrlError::config("control", "length must equal the control dimension"));
    }
    let um = sat.u_max;
    let mut total = 0.0;
    for (i, (&v, &r)) in u.iter().zip(sat.r_diag.iter()).enumerate() {
        if !(v.abs() <= um) {
            return Err(IrlError::Domain {
                component: i,
                message: format!("|u| = {} outside the saturation bound {}", v.abs(), um),
            });
        }
        // (1+s)ln(1+s) + (1-s)ln(1-s), finite at |s| = 1
        let s = (v / um).abs();
        let lower = if s < 1.0 { (1.0 - s) * (-s).ln_1p() } else { 0.0 };
        total += r * um * um * ((1.0 + s) * s.ln_1p() + lower);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::quad_basis;
    use proptest::prelude::*;

    fn scalar_sat(um: f64) -> SaturationSpec {
        SaturationSpec::new(um, vec![1.0]).unwrap()
    }

    #[test]
    fn spec_validation() {
        assert!(SaturationSpec::new(-1.0, vec![1.0]).is_err());
        assert!(SaturationSpec::new(1.0, vec![1.0, 0.0]).is_err());
        assert!(SaturationSpec::new(1.0, vec![]).is_err());
        assert_eq!(SaturationSpec::new(2.0, vec![1.0, 3.0]).unwrap().r_matrix()[(1, 1)], 3.0);
    }

    #[test]
    fn zero_weights_give_zero_tau_and_control() {
        let basis = quad_basis(2);
        let sat = scalar_sat(1.0);
        let g = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        let z = DVector::from_vec(vec![0.4, -1.0]);
        let w = DVector::zeros(5);
        assert_eq!(tau2(&z, &w, &g, &basis, &sat).unwrap()[0], 0.0);
        assert_eq!(policy_eval(&z, &w, &g, &basis, &sat).unwrap()[0], 0.0);
    }

    #[test]
    fn scalar_tau_formula() {
        // Linear basis in one input with W = 3 gives G^T grad^T W = 3.
        let basis = quad_basis(1);
        let g = DMatrix::from_element(1, 1, 1.0);
        let z = DVector::from_element(1, 0.0);
        let w = DVector::from_vec(vec![3.0, 0.0]);
        let tau = tau2(&z, &w, &g, &basis, &scalar_sat(1.0)).unwrap();
        assert!((tau[0] - 1.5).abs() < 1e-15);
        let doubled = tau2(&z, &w, &g, &basis, &scalar_sat(2.0)).unwrap();
        assert!((doubled[0] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn deep_tau_saturates_at_bound() {
        let sat = scalar_sat(1.5);
        let u = saturate_tau(&DVector::from_element(1, 1e6), &sat);
        assert_eq!(u[0], -1.5);
        let u = saturate_tau(&DVector::from_element(1, -1e6), &sat);
        assert_eq!(u[0], 1.5);
    }

    #[test]
    fn penalty_of_zero_control() {
        let sat = SaturationSpec::new(1.0, vec![1.0, 2.0]).unwrap();
        assert_eq!(penalty_integral(&DVector::zeros(2), &sat).unwrap(), 0.0);
        assert_eq!(penalty_closed(&DVector::zeros(2), &sat), 0.0);
    }

    #[test]
    fn penalty_matches_antiderivative() {
        // 2 u_m [u atanh(u/u_m) + (u_m/2) ln(1 - u^2/u_m^2)] at u = 0.5, u_m = 1
        let expected = 2.0 * (0.5 * 0.5f64.atanh() + 0.5 * (1.0 - 0.25f64).ln());
        let got = penalty_integral(&DVector::from_element(1, 0.5), &scalar_sat(1.0)).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
        assert!((expected - 0.261_624_071_882_273_9).abs() < 1e-15);
    }

    #[test]
    fn penalty_at_bound_is_domain_error() {
        let sat = SaturationSpec::new(1.0, vec![1.0, 1.0]).unwrap();
        let err = penalty_integral(&DVector::from_vec(vec![0.2, -1.0]), &sat).unwrap_err();
        assert!(matches!(err, IrlError::Domain { component: 1, .. }));
    }

    #[test]
    fn deep_saturation_is_finite() {
        let sat = scalar_sat(1.0);
        let v = penalty_closed(&DVector::from_element(1, 50.0), &sat);
        // 100 tanh(50) + 2 (ln 2 - 50 - ln(1 + e^-100))
        let expected = 100.0 + 2.0 * (std::f64::consts::LN_2 - 50.0);
        assert!(v.is_finite());
        assert!((v - expected).abs() < 1e-12);
    }

    #[test]
    fn stable_log_matches_naive_in_range() {
        for a in [-3.0, -0.5, 0.0, 0.1, 2.0] {
            let naive = (1.0 - (a as f64).tanh().powi(2)).ln();
            assert!((ln_sech2(a) - naive).abs() < 1e-12);
        }
    }

    #[test]
    fn sign_of_zero_is_zero() {
        assert_eq!(sign0(0.0), 0.0);
        assert_eq!(sign0(-0.0), 0.0);
        assert_eq!(sign0(-2.0), -1.0);
    }

    #[test]
    fn penalty_of_control_agrees_with_both_forms() {
        let sat = SaturationSpec::new(2.0, vec![1.0, 0.5]).unwrap();
        for tau in [[0.0, 0.0], [0.3, -1.2], [-2.5, 4.0]] {
            let tau = DVector::from_row_slice(&tau);
            let u = saturate_tau(&tau, &sat);
            let direct = penalty_of_control(&u, &sat).unwrap();
            assert!((direct - penalty_closed(&tau, &sat)).abs() <= 1e-9 * (1.0 + direct));
            assert!((direct - penalty_integral(&u, &sat).unwrap()).abs() <= 1e-9 * (1.0 + direct));
        }
        let edge = DVector::from_row_slice(&[2.0, -2.0]);
        let limit = 2.0 * 4.0 * 2f64.ln() * 1.5;
        assert!((penalty_of_control(&edge, &sat).unwrap() - limit).abs() < 1e-6);
        assert!(penalty_of_control(&DVector::from_row_slice(&[2.1, 0.0]), &sat).is_err());
    }

    proptest! {
        #[test]
        fn penalty_is_even(u in -0.999f64..0.999) {
            let sat = scalar_sat(1.0);
            let a = penalty_integral(&DVector::from_element(1, u), &sat).unwrap();
            let b = penalty_integral(&DVector::from_element(1, -u), &sat).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn closed_penalty_is_nonnegative(tau in prop::collection::vec(-60.0f64..60.0, 3)) {
            let sat = SaturationSpec::new(0.7, vec![1.0, 0.5, 2.0]).unwrap();
            prop_assert!(penalty_closed(&DVector::from_vec(tau), &sat) >= 0.0);
        }

        #[test]
        fn policy_respects_bound(
            z in prop::collection::vec(-5.0f64..5.0, 4),
            w in prop::collection::vec(-50.0f64..50.0, 14),
            g in prop::collection::vec(-5.0f64..5.0, 4),
        ) {
            let sat = SaturationSpec::new(std::f64::consts::FRAC_PI_2, vec![1.0]).unwrap();
            let basis = quad_basis(4);
            let g = DMatrix::from_vec(4, 1, g);
            let u = policy_eval(&DVector::from_vec(z), &DVector::from_vec(w), &g, &basis, &sat).unwrap();
            prop_assert!(u[0].abs() <= sat.u_max());
        }
    }
}
