//! Linear tracking benchmark with a discounted Riccati oracle.

use nalgebra::{DMatrix, DVector};

use crate::basis::{QuadFeature, RegressorBasis};
use crate::error::{IrlError, Result};
use crate::model::{augment, AffinePlant, AugmentedDynamics, ReferenceModel};

/// Augmented linear dynamics `z' = A z + B u` for a linear plant tracking a linear reference.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearBenchmark {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    plant_a: DMatrix<f64>,
    plant_b: DMatrix<f64>,
    reference_s: DMatrix<f64>,
}

impl LinearBenchmark {
    /// `A = [[Ap, Ap - S], [0, S]]`, `B = [Bp; 0]`.
    pub fn new(plant_a: DMatrix<f64>, plant_b: DMatrix<f64>, reference_s: DMatrix<f64>) -> Result<Self> {
        let n = plant_a.nrows();
        if plant_a.shape() != (n, n) || reference_s.shape() != (n, n) || plant_b.nrows() != n {
            return Err(IrlError::config("benchmark", "inconsistent linear benchmark dimensions"));
        }
        let m = plant_b.ncols();
        let mut a = DMatrix::zeros(2 * n, 2 * n);
        a.view_mut((0, 0), (n, n)).copy_from(&plant_a);
        a.view_mut((0, n), (n, n)).copy_from(&(&plant_a - &reference_s));
        a.view_mut((n, n), (n, n)).copy_from(&reference_s);
        let mut b = DMatrix::zeros(2 * n, m);
        b.view_mut((0, 0), (n, m)).copy_from(&plant_b);
        Ok(LinearBenchmark {
            a,
            b,
            plant_a,
            plant_b,
            reference_s,
        })
    }

    /// The same system as plant and reference models.
    pub fn dynamics(&self, xd0: DVector<f64>) -> Result<AugmentedDynamics> {
        let plant = AffinePlant::linear(self.plant_a.clone(), self.plant_b.clone())?;
        let reference = ReferenceModel::linear(self.reference_s.clone(), xd0)?;
        augment(plant, reference)
    }
}

/// Frobenius norm of the discounted algebraic Riccati residual.
pub fn riccati_residual(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q1: &DMatrix<f64>,
    r: &DMatrix<f64>,
    gamma: f64,
    p: &DMatrix<f64>,
) -> Result<f64> {
    let r_inv = r
        .clone()
        .try_inverse()
        .ok_or_else(|| IrlError::Oracle("R is singular".into()))?;
    Ok(riccati_rhs(&shifted(a, gamma), &(b * r_inv * b.transpose()), q1, p).norm())
}

fn shifted(a: &DMatrix<f64>, gamma: f64) -> DMatrix<f64> {
    a - DMatrix::identity(a.nrows(), a.ncols()) * (0.5 * gamma)
}

fn riccati_rhs(
    a_shift: &DMatrix<f64>,
    s: &DMatrix<f64>,
    q1: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> DMatrix<f64> {
    a_shift.transpose() * p + p * a_shift - p * s * p + q1
}

fn symmetrize(p: &DMatrix<f64>) -> DMatrix<f64> {
    (p + p.transpose()) * 0.5
}

/// Solves `Ac^T P + P Ac + C = 0` through its Kronecker form.
fn lyapunov(ac: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = ac.nrows();
    let eye = DMatrix::<f64>::identity(k, k);
    let act = ac.transpose();
    let op = eye.kronecker(&act) + act.kronecker(&eye);
    let rhs = DVector::from_column_slice((-c).as_slice());
    let sol = op
        .lu()
        .solve(&rhs)
        .ok_or_else(|| IrlError::Oracle("Lyapunov operator is singular".into()))?;
    Ok(symmetrize(&DMatrix::from_column_slice(k, k, sol.as_slice())))
}

const RESIDUAL_TOL: f64 = 1e-9;

/// Solves `(A - g/2 I)^T P + P (A - g/2 I) - P B R^-1 B^T P + Q1 = 0`.
///
/// The differential Riccati equation is integrated backward from `P = 0`
/// until it settles, then Newton-Kleinman iterations polish the result.
pub fn discounted_riccati(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q1: &DMatrix<f64>,
    r: &DMatrix<f64>,
    gamma: f64,
) -> Result<DMatrix<f64>> {
    let k = a.nrows();
    if a.shape() != (k, k) || q1.shape() != (k, k) || b.nrows() != k || r.shape() != (b.ncols(), b.ncols()) {
        return Err(IrlError::config("riccati", "inconsistent matrix shapes"));
    }
    let r_inv = r
        .clone()
        .try_inverse()
        .ok_or_else(|| IrlError::Oracle("R is singular".into()))?;
    let a_shift = shifted(a, gamma);
    let s = b * &r_inv * b.transpose();
    let scale = 1.0 + a_shift.norm() + s.norm() * (1.0 + q1.norm()).sqrt();
    let h = 0.02 / scale;

    let mut p = DMatrix::zeros(k, k);
    let seed_tol = 1e-4 * (1.0 + q1.norm());
    let mut settled = false;
    for _ in 0..2_000_000 {
        let residual = riccati_rhs(&a_shift, &s, q1, &p);
        if residual.norm() <= seed_tol {
            settled = true;
            break;
        }
        let f = |pm: &DMatrix<f64>| riccati_rhs(&a_shift, &s, q1, pm);
        let k1 = residual;
        let k2 = f(&(&p + &k1 * (0.5 * h)));
        let k3 = f(&(&p + &k2 * (0.5 * h)));
        let k4 = f(&(&p + &k3 * h));
        p = symmetrize(&(&p + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)));
        if p.iter().any(|v| !v.is_finite()) {
            return Err(IrlError::Oracle("Riccati flow diverged".into()));
        }
    }
    if !settled {
        return Err(IrlError::Oracle(
            "Riccati flow did not settle; is the shifted pair stabilizable?".into(),
        ));
    }

    for _ in 0..50 {
        if riccati_rhs(&a_shift, &s, q1, &p).norm() <= 1e-3 * RESIDUAL_TOL {
            break;
        }
        let gain = &r_inv * b.transpose() * &p;
        let closed = &a_shift - b * &gain;
        let c = q1 + gain.transpose() * r * &gain;
        p = lyapunov(&closed, &c)?;
    }
    let residual = riccati_rhs(&a_shift, &s, q1, &p).norm();
    if residual > RESIDUAL_TOL {
        return Err(IrlError::Oracle(format!("Riccati residual {residual:.3e} above tolerance")));
    }
    Ok(p)
}

/// Weights that reproduce `z^T P z` in the bundled quadratic basis.
pub fn ideal_weights(p: &DMatrix<f64>, basis: &dyn RegressorBasis) -> Result<DVector<f64>> {
    let quad = basis
        .as_quadratic()
        .ok_or_else(|| IrlError::Unsupported("ideal weights need the quadratic basis".into()))?;
    if p.shape() != (quad.dim_in(), quad.dim_in()) {
        return Err(IrlError::config("P", "dimension must match the basis input"));
    }
    Ok(DVector::from_iterator(
        quad.len(),
        quad.features().map(|f| match f {
            QuadFeature::Linear(_) => 0.0,
            QuadFeature::Square(i) => p[(i, i)],
            QuadFeature::Cross(i, j) => p[(i, j)] + p[(j, i)],
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::quad_basis;
    use proptest::prelude::*;

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn scalar_integrator() {
        let p = discounted_riccati(&scalar(0.0), &scalar(1.0), &scalar(1.0), &scalar(1.0), 0.0).unwrap();
        assert!((p[(0, 0)] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn scalar_stable_plant() {
        let p = discounted_riccati(&scalar(-1.0), &scalar(1.0), &scalar(1.0), &scalar(1.0), 0.0).unwrap();
        assert!((p[(0, 0)] - (2f64.sqrt() - 1.0)).abs() < 1e-10);
    }

    #[test]
    fn zero_cost_gives_zero_value() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.3, 0.0, -2.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let p = discounted_riccati(&a, &b, &DMatrix::zeros(2, 2), &scalar(1.0), 0.1).unwrap();
        assert_eq!(p, DMatrix::zeros(2, 2));
    }

    #[test]
    fn discount_shifts_the_scalar_solution() {
        // a = 0, gamma = 0.2: -0.2 p - p^2 + 1 = 0
        let p = discounted_riccati(&scalar(0.0), &scalar(1.0), &scalar(1.0), &scalar(1.0), 0.2).unwrap();
        let expected = (-0.2 + (0.04f64 + 4.0).sqrt()) / 2.0;
        assert!((p[(0, 0)] - expected).abs() < 1e-10);
    }

    #[test]
    fn tracking_benchmark_residual() {
        let (a, b) = crate::model::catalog::linear2_matrices();
        let s = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let bench = LinearBenchmark::new(a, b, s).unwrap();
        let q1 = DMatrix::from_diagonal(&DVector::from_vec(vec![10.0, 10.0, 0.0, 0.0]));
        let p = discounted_riccati(&bench.a, &bench.b, &q1, &scalar(1.0), 0.1).unwrap();
        let res = riccati_residual(&bench.a, &bench.b, &q1, &scalar(1.0), 0.1, &p).unwrap();
        assert!(res <= 1e-9);
        assert!(p.clone().symmetric_eigen().eigenvalues.min() >= -1e-12);
    }

    #[test]
    fn augmentation_blocks() {
        let a = DMatrix::from_row_slice(1, 1, &[-2.0]);
        let b = DMatrix::from_row_slice(1, 1, &[3.0]);
        let s = DMatrix::from_row_slice(1, 1, &[0.5]);
        let bench = LinearBenchmark::new(a, b, s).unwrap();
        assert_eq!(bench.a.as_slice(), &[-2.0, 0.0, -2.5, 0.5]);
        assert_eq!(bench.b.as_slice(), &[3.0, 0.0]);
    }

    #[test]
    fn identity_value_weights() {
        let w = ideal_weights(&DMatrix::identity(2, 2), &quad_basis(2)).unwrap();
        assert_eq!(w.as_slice(), &[0.0, 0.0, 1.0, 1.0, 0.0]);
        let w0 = ideal_weights(&DMatrix::zeros(3, 3), &quad_basis(3)).unwrap();
        assert!(w0.iter().all(|v| *v == 0.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn quadratic_form_round_trip(
            entries in prop::collection::vec(-3.0f64..3.0, 16),
            z in prop::collection::vec(-2.0f64..2.0, 4),
        ) {
            let m = DMatrix::from_vec(4, 4, entries);
            let p = (&m + m.transpose()) * 0.5;
            let basis = quad_basis(4);
            let w = ideal_weights(&p, &basis).unwrap();
            let z = DVector::from_vec(z);
            let direct = (z.transpose() * &p * &z)[(0, 0)];
            prop_assert!((w.dot(&basis.eval(&z)) - direct).abs() <= 1e-12);
        }
    }
}
