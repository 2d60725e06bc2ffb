//! Critic regressors `theta(z)` and their Jacobians.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{ensure_finite, IrlError, Result};

/// A feature map `theta: R^d -> R^N` with an analytic Jacobian (`N x d`).
pub trait RegressorBasis: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;
    fn dim_in(&self) -> usize;
    fn len(&self) -> usize;
    fn eval(&self, z: &DVector<f64>) -> DVector<f64>;
    fn grad(&self, z: &DVector<f64>) -> DMatrix<f64>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Whether the basis is the bundled quadratic basis (enables the linear-quadratic oracle).
    fn as_quadratic(&self) -> Option<&QuadraticBasis> {
        None
    }
}

/// Linear terms, then squares, then pairwise products `z_i z_j` (i < j) in lexicographic order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuadraticBasis {
    dim: usize,
}

/// Feature index bookkeeping for [`QuadraticBasis`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuadFeature {
    Linear(usize),
    Square(usize),
    Cross(usize, usize),
}

pub fn quad_feature_count(dim: usize) -> usize {
    2 * dim + dim * dim.saturating_sub(1) / 2
}

pub fn quad_basis(dim_in: usize) -> QuadraticBasis {
    assert!(dim_in >= 1, "quadratic basis needs at least one input");
    QuadraticBasis { dim: dim_in }
}

impl QuadraticBasis {
    pub fn features(&self) -> impl Iterator<Item = QuadFeature> + '_ {
        let d = self.dim;
        let linear = (0..d).map(QuadFeature::Linear);
        let squares = (0..d).map(QuadFeature::Square);
        let cross = (0..d).flat_map(move |i| ((i + 1)..d).map(move |j| QuadFeature::Cross(i, j)));
        linear.chain(squares).chain(cross)
    }
}

impl RegressorBasis for QuadraticBasis {
    fn name(&self) -> &str {
        "quadratic"
    }

    fn dim_in(&self) -> usize {
        self.dim
    }

    fn len(&self) -> usize {
        quad_feature_count(self.dim)
    }

    fn eval(&self, z: &DVector<f64>) -> DVector<f64> {
        debug_assert_eq!(z.len(), self.dim);
        DVector::from_iterator(
            self.len(),
            self.features().map(|f| match f {
                QuadFeature::Linear(i) => z[i],
                QuadFeature::Square(i) => z[i] * z[i],
                QuadFeature::Cross(i, j) => z[i] * z[j],
            }),
        )
    }

    fn grad(&self, z: &DVector<f64>) -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(self.len(), self.dim);
        for (k, f) in self.features().enumerate() {
            match f {
                QuadFeature::Linear(i) => jac[(k, i)] = 1.0,
                QuadFeature::Square(i) => jac[(k, i)] = 2.0 * z[i],
                QuadFeature::Cross(i, j) => {
                    jac[(k, i)] = z[j];
                    jac[(k, j)] = z[i];
                }
            }
        }
        jac
    }

    fn as_quadratic(&self) -> Option<&QuadraticBasis> {
        Some(self)
    }
}

type FeatureFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
type JacobianFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// User-supplied basis. The Jacobian is checked against finite differences on construction.
#[derive(Clone)]
pub struct CustomBasis {
    name: String,
    dim: usize,
    len: usize,
    eval: FeatureFn,
    grad: JacobianFn,
}

impl fmt::Debug for CustomBasis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomBasis")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("len", &self.len)
            .finish()
    }
}

impl CustomBasis {
    /// `probes` are the points where the Jacobian is validated.
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        eval: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        grad: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
        probes: &[DVector<f64>],
    ) -> Result<Self> {
        let name = name.into();
        let len = eval(&DVector::zeros(dim)).len();
        let basis = CustomBasis {
            name,
            dim,
            len,
            eval: Arc::new(eval),
            grad: Arc::new(grad),
        };
        for p in probes {
            let err = jacobian_fd_error(&basis, p, 1e-5);
            if err > 1e-6 {
                return Err(IrlError::config(
                    "basis",
                    format!("gradient of `{}` disagrees with finite differences ({err:.3e})", basis.name),
                ));
            }
        }
        Ok(basis)
    }
}

impl RegressorBasis for CustomBasis {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim_in(&self) -> usize {
        self.dim
    }

    fn len(&self) -> usize {
        self.len
    }

    fn eval(&self, z: &DVector<f64>) -> DVector<f64> {
        (self.eval)(z)
    }

    fn grad(&self, z: &DVector<f64>) -> DMatrix<f64> {
        (self.grad)(z)
    }
}

/// Jacobian of `basis` at `z`, rejecting non-finite inputs.
pub fn eval_grad(basis: &dyn RegressorBasis, z: &DVector<f64>) -> Result<DMatrix<f64>> {
    ensure_finite(z.iter(), "basis input")?;
    Ok(basis.grad(z))
}

/// Largest entrywise relative error between the analytic Jacobian and central differences.
///
/// Entries are compared as `|a - fd| / max(1, |fd|)`.
pub fn jacobian_fd_error(basis: &dyn RegressorBasis, z: &DVector<f64>, h: f64) -> f64 {
    let jac = basis.grad(z);
    let mut worst: f64 = 0.0;
    for col in 0..basis.dim_in() {
        let mut zp = z.clone();
        let mut zm = z.clone();
        zp[col] += h;
        zm[col] -= h;
        let fd = (basis.eval(&zp) - basis.eval(&zm)) / (2.0 * h);
        for row in 0..basis.len() {
            let err = (jac[(row, col)] - fd[row]).abs() / fd[row].abs().max(1.0);
            worst = worst.max(err);
        }
    }
    worst
}

/// Looks up a bundled basis by name.
pub fn basis_by_name(name: &str, dim: usize) -> Result<Arc<dyn RegressorBasis>> {
    match name {
        "quadratic" if dim >= 1 => Ok(Arc::new(quad_basis(dim))),
        "quadratic" => Err(IrlError::config("basis.dim", "must be at least 1")),
        other => Err(IrlError::config("basis.id", format!("unknown basis `{other}`"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn six_inputs_give_27_features() {
        assert_eq!(quad_basis(6).len(), 27);
    }

    #[test]
    fn two_dimensional_ordering() {
        let b = quad_basis(2);
        let theta = b.eval(&DVector::from_vec(vec![1.0, 2.0]));
        assert_eq!(theta.as_slice(), &[1.0, 2.0, 1.0, 4.0, 2.0]);
    }

    #[test]
    fn six_dimensional_cross_terms_follow_listing() {
        let b = quad_basis(6);
        let cross: Vec<_> = b
            .features()
            .skip(12)
            .map(|f| match f {
                QuadFeature::Cross(i, j) => (i + 1, j + 1),
                _ => panic!("expected cross term"),
            })
            .collect();
        assert_eq!(cross[0], (1, 2));
        assert_eq!(cross[4], (1, 6));
        assert_eq!(cross[5], (2, 3));
        assert_eq!(cross[14], (5, 6));
    }

    #[test]
    fn origin_maps_to_zero() {
        for d in 1..=8 {
            let b = quad_basis(d);
            assert!(b.eval(&DVector::zeros(d)).iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn cross_row_of_gradient() {
        let b = quad_basis(2);
        let jac = b.grad(&DVector::from_vec(vec![1.0, 2.0]));
        assert_eq!((jac[(4, 0)], jac[(4, 1)]), (2.0, 1.0));
    }

    #[test]
    fn gradient_at_origin() {
        let d = 4;
        let b = quad_basis(d);
        let jac = b.grad(&DVector::zeros(d));
        for k in 0..b.len() {
            for col in 0..d {
                let expected = if k < d && k == col { 1.0 } else { 0.0 };
                assert_eq!(jac[(k, col)], expected);
            }
        }
    }

    #[test]
    fn feature_count_formula() {
        for d in 1..=8 {
            assert_eq!(quad_basis(d).len(), 2 * d + d * (d - 1) / 2);
        }
    }

    #[test]
    fn non_finite_input_rejected() {
        let b = quad_basis(2);
        let err = eval_grad(&b, &DVector::from_vec(vec![0.0, f64::NAN])).unwrap_err();
        assert_eq!(err, IrlError::numeric("basis input", 1));
    }

    #[test]
    fn custom_basis_with_wrong_gradient_is_rejected() {
        let probes = [DVector::from_vec(vec![0.3, -0.4])];
        let bad = CustomBasis::new(
            "bad",
            2,
            |z| DVector::from_vec(vec![z[0].sin(), z[0] * z[1]]),
            |z| DMatrix::from_row_slice(2, 2, &[z[0].cos(), 0.0, z[1], 0.0]),
            &probes,
        );
        assert!(bad.is_err());
        let good = CustomBasis::new(
            "good",
            2,
            |z| DVector::from_vec(vec![z[0].sin(), z[0] * z[1]]),
            |z| DMatrix::from_row_slice(2, 2, &[z[0].cos(), 0.0, z[1], z[0]]),
            &probes,
        );
        assert_eq!(good.unwrap().len(), 2);
    }

    #[test]
    fn unknown_basis_name() {
        assert!(basis_by_name("rbf", 3).is_err());
        assert_eq!(basis_by_name("quadratic", 3).unwrap().len(), 9);
    }

    proptest! {
        #[test]
        fn block_homogeneity(z in prop::collection::vec(-2.0f64..2.0, 5), c in -3.0f64..3.0) {
            let b = quad_basis(5);
            let z = DVector::from_vec(z);
            let base = b.eval(&z);
            let scaled = b.eval(&(&z * c));
            for k in 0..b.len() {
                let expected = if k < 5 { c * base[k] } else { c * c * base[k] };
                prop_assert!((scaled[k] - expected).abs() <= 1e-12 * (1.0 + expected.abs()));
            }
        }
    }
}
