//! Control-affine plants, reference generators and the augmented tracking system.
//!
//! The augmented state stacks the tracking error on top of the reference,
//! `z = [e; x_d]`, so that tracking becomes a regulation problem with
//!
//! ```text
//! F(z) = [ f(e + x_d) - H(x_d) ]     G(z) = [ g(e + x_d) ]
//!        [ H(x_d)              ]            [ 0          ]
//! ```

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{ensure_finite, IrlError, Result};

pub type VectorField = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type MatrixField = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// Per-component box used to flag excursions from the operating domain.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatingBox {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl OperatingBox {
    pub fn contains(&self, x: &DVector<f64>) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(self.upper.iter()))
            .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }
}

/// `x' = f(x) + g(x) u` with `x` in R^n and `u` in R^m.
#[derive(Clone)]
pub struct AffinePlant {
    n: usize,
    m: usize,
    drift: VectorField,
    coupling: MatrixField,
    domain: Option<OperatingBox>,
}

impl fmt::Debug for AffinePlant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AffinePlant")
            .field("n", &self.n)
            .field("m", &self.m)
            .field("domain", &self.domain)
            .finish()
    }
}

impl AffinePlant {
    pub fn new(
        n: usize,
        m: usize,
        drift: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        coupling: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        AffinePlant {
            n,
            m,
            drift: Arc::new(drift),
            coupling: Arc::new(coupling),
            domain: None,
        }
    }

    /// Linear plant `x' = A x + B u`.
    pub fn linear(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() {
            return Err(IrlError::config("plant.a", "matrix must be square"));
        }
        if b.nrows() != a.nrows() {
            return Err(IrlError::config("plant.b", "row count must match plant.a"));
        }
        let (n, m) = (a.nrows(), b.ncols());
        Ok(AffinePlant::new(n, m, move |x| &a * x, move |_| b.clone()))
    }

    pub fn with_domain(mut self, domain: OperatingBox) -> Self {
        self.domain = Some(domain);
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn domain(&self) -> Option<&OperatingBox> {
        self.domain.as_ref()
    }

    pub fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.drift)(x)
    }

    pub fn coupling(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let g = (self.coupling)(x);
        if g.shape() != (self.n, self.m) {
            return Err(IrlError::config(
                "plant.g",
                format!(
                    "coupling has shape {:?}, expected {:?}",
                    g.shape(),
                    (self.n, self.m)
                ),
            ));
        }
        Ok(g)
    }
}

/// Reference generator `x_d' = H(x_d)` with `H(0) = 0`.
#[derive(Clone)]
pub struct ReferenceModel {
    n: usize,
    field: VectorField,
    initial: DVector<f64>,
}

impl fmt::Debug for ReferenceModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ReferenceModel")
            .field("n", &self.n)
            .field("initial", &self.initial)
            .finish()
    }
}

impl ReferenceModel {
    /// Builds a reference model. Fails if `H(0) != 0`.
    pub fn new(
        field: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        initial: DVector<f64>,
    ) -> Result<Self> {
        let n = initial.len();
        let at_origin = field(&DVector::zeros(n));
        if at_origin.len() != n {
            return Err(IrlError::config("reference", "H must map R^n to R^n"));
        }
        if at_origin.iter().any(|v| *v != 0.0) {
            return Err(IrlError::config("reference", "H(0) must be 0"));
        }
        Ok(ReferenceModel {
            n,
            field: Arc::new(field),
            initial,
        })
    }

    /// `x_d' = S x_d`.
    pub fn linear(s: DMatrix<f64>, initial: DVector<f64>) -> Result<Self> {
        if s.shape() != (initial.len(), initial.len()) {
            return Err(IrlError::config(
                "reference",
                "generator matrix must be n x n matching the initial state",
            ));
        }
        ReferenceModel::new(move |xd| &s * xd, initial)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn initial(&self) -> &DVector<f64> {
        &self.initial
    }

    pub fn field(&self, xd: &DVector<f64>) -> DVector<f64> {
        (self.field)(xd)
    }
}

/// Augmented state `z = [e; x_d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedState {
    pub e: DVector<f64>,
    pub xd: DVector<f64>,
}

impl AugmentedState {
    pub fn new(e: DVector<f64>, xd: DVector<f64>) -> Self {
        assert_eq!(e.len(), xd.len(), "error and reference must share dimension");
        AugmentedState { e, xd }
    }

    /// Error defined from a plant state: `e = x - x_d`.
    pub fn from_plant(x: &DVector<f64>, xd: &DVector<f64>) -> Self {
        AugmentedState::new(x - xd, xd.clone())
    }

    pub fn from_flat(z: &DVector<f64>) -> Self {
        let n = z.len() / 2;
        AugmentedState {
            e: z.rows(0, n).into_owned(),
            xd: z.rows(n, n).into_owned(),
        }
    }

    pub fn flat(&self) -> DVector<f64> {
        let n = self.e.len();
        let mut z = DVector::zeros(2 * n);
        z.rows_mut(0, n).copy_from(&self.e);
        z.rows_mut(n, n).copy_from(&self.xd);
        z
    }

    pub fn plant_state(&self) -> DVector<f64> {
        &self.e + &self.xd
    }
}

/// Augmented drift `F` and coupling `G` assembled from a plant and a reference.
#[derive(Debug, Clone)]
pub struct AugmentedDynamics {
    plant: AffinePlant,
    reference: ReferenceModel,
}

/// Assembles the augmented system. Dimensions of plant and reference must agree.
pub fn augment(plant: AffinePlant, reference: ReferenceModel) -> Result<AugmentedDynamics> {
    if plant.n() != reference.n() {
        return Err(IrlError::config(
            "reference",
            format!(
                "reference dimension {} does not match plant dimension {}",
                reference.n(),
                plant.n()
            ),
        ));
    }
    Ok(AugmentedDynamics { plant, reference })
}

impl AugmentedDynamics {
    pub fn n(&self) -> usize {
        self.plant.n()
    }

    pub fn m(&self) -> usize {
        self.plant.m()
    }

    pub fn plant(&self) -> &AffinePlant {
        &self.plant
    }

    pub fn reference(&self) -> &ReferenceModel {
        &self.reference
    }

    fn split(&self, z: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let n = self.n();
        let e = z.rows(0, n).into_owned();
        let xd = z.rows(n, n).into_owned();
        (e, xd)
    }

    pub fn drift(&self, z: &DVector<f64>) -> DVector<f64> {
        let n = self.n();
        let (e, xd) = self.split(z);
        let h = self.reference.field(&xd);
        let fx = self.plant.drift(&(&e + &xd));
        let mut out = DVector::zeros(2 * n);
        out.rows_mut(0, n).copy_from(&(fx - &h));
        out.rows_mut(n, n).copy_from(&h);
        out
    }

    pub fn coupling(&self, z: &DVector<f64>) -> Result<DMatrix<f64>> {
        let n = self.n();
        let (e, xd) = self.split(z);
        let g = self.plant.coupling(&(&e + &xd))?;
        let mut out = DMatrix::zeros(2 * n, self.m());
        out.view_mut((0, 0), (n, self.m())).copy_from(&g);
        Ok(out)
    }
}

/// `z' = F(z) + G(z) u`.
pub fn eval_augmented(
    dynamics: &AugmentedDynamics,
    z: &AugmentedState,
    u: &DVector<f64>,
) -> Result<DVector<f64>> {
    let flat = z.flat();
    eval_augmented_flat(dynamics, &flat, u)
}

pub(crate) fn eval_augmented_flat(
    dynamics: &AugmentedDynamics,
    z: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<DVector<f64>> {
    if u.len() != dynamics.m() {
        return Err(IrlError::config("u", "control dimension mismatch"));
    }
    let out = dynamics.drift(z) + dynamics.coupling(z)? * u;
    ensure_finite(out.iter(), "augmented dynamics")?;
    Ok(out)
}

/// Built-in plants and references, addressable by string identifier.
pub mod catalog {
    use super::*;

    pub const PLANTS: &[&str] = &["zero", "integrator", "linear2", "linear"];
    pub const REFERENCES: &[&str] = &["zero", "identity", "harmonic", "linear"];

    /// Damped second-order plant used by the bundled linear benchmark.
    pub fn linear2_matrices() -> (DMatrix<f64>, DMatrix<f64>) {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -1.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        (a, b)
    }

    /// `x' = 0` with zero coupling in `n` states and `m` controls.
    pub fn zero_plant(n: usize, m: usize) -> AffinePlant {
        AffinePlant::new(n, m, move |_| DVector::zeros(n), move |_| DMatrix::zeros(n, m))
    }

    /// `x' = u`, scalar.
    pub fn integrator() -> AffinePlant {
        AffinePlant::new(1, 1, |_| DVector::zeros(1), |_| DMatrix::identity(1, 1))
    }

    pub fn zero_reference(n: usize) -> ReferenceModel {
        ReferenceModel::new(move |_| DVector::zeros(n), DVector::zeros(n))
            .expect("zero field vanishes at the origin")
    }

    /// Planar oscillator `x_d' = [[0, w], [-w, 0]] x_d`.
    pub fn harmonic(omega: f64, initial: DVector<f64>) -> Result<ReferenceModel> {
        if initial.len() != 2 {
            return Err(IrlError::config(
                "reference.x0",
                "harmonic reference is two-dimensional",
            ));
        }
        let s = DMatrix::from_row_slice(2, 2, &[0.0, omega, -omega, 0.0]);
        ReferenceModel::linear(s, initial)
    }
}
