//! Parametrizations `u = Phi(q)` of states in a Hilbert space.
//!
//! A [`Model`] bundles the map `Phi`, its Jacobian `Phi'(q)` and the inner
//! product of the ambient space, which is everything the regularized
//! least-squares core needs to turn `u' = f(u)` into a parameter ODE.
//! Implementations range from linear frames over quadrature grids to a small
//! neural network and an analytic Gaussian-sum family.

mod gaussian;
mod linear;
mod mlp;
mod space;
mod toy;

pub use gaussian::{fit_frozen_coefficients, GaussJacobian, GaussianSumModel};
pub use linear::LinearModel;
pub use mlp::MlpModel;
pub use space::SampleSpace;
pub use toy::ScalarQuadratic;

use crate::reglsq::RegLsqError;
use crate::Field;
use nalgebra::{ComplexField, DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("parameter vector has length {got}, model expects {want}")]
    WrongLength { want: usize, got: usize },
    #[error("parameter {index} is not finite")]
    NonFiniteParam { index: usize },
    #[error("{0}")]
    Unsupported(String),
    #[error(transparent)]
    Lsq(#[from] RegLsqError),
}

/// Vector-space operations every state representation must support.
pub trait StateVec<T: Field>: Clone {
    /// `self += a * x`.
    fn add_scaled(&mut self, a: T, x: &Self);
    fn scale_by(&mut self, a: T);
    fn zeros_like(&self) -> Self;
}

impl<T: Field> StateVec<T> for DVector<T> {
    fn add_scaled(&mut self, a: T, x: &Self) {
        self.axpy(a, x, T::one());
    }

    fn scale_by(&mut self, a: T) {
        *self *= a;
    }

    fn zeros_like(&self) -> Self {
        DVector::zeros(self.len())
    }
}

/// The linearization `A = Phi'(q)` at a fixed parameter point.
///
/// `adjoint_apply` and `gram` are taken with respect to the model's ambient
/// inner product, so `gram` is exactly the matrix of the normal equations.
pub trait Jacobian<T: Field> {
    type State: StateVec<T>;

    /// `A v`.
    fn apply(&self, v: &DVector<T>) -> Self::State;
    /// `A* u`.
    fn adjoint_apply(&self, u: &Self::State) -> DVector<T>;
    /// `A* A`, Hermitian positive semidefinite.
    fn gram(&self) -> DMatrix<T>;
    fn ncols(&self) -> usize;
}

/// A parametrization together with the inner product it targets.
pub trait Model {
    type Scalar: Field;
    type State: StateVec<Self::Scalar>;
    type Jac: Jacobian<Self::Scalar, State = Self::State>;

    /// Number of (scalar) parameters.
    fn dim(&self) -> usize;
    fn eval(&self, q: &DVector<Self::Scalar>) -> Result<Self::State, ModelError>;
    fn jacobian(&self, q: &DVector<Self::Scalar>) -> Result<Self::Jac, ModelError>;
    fn inner(&self, u: &Self::State, v: &Self::State) -> Self::Scalar;

    fn norm_sq(&self, u: &Self::State) -> f64 {
        self.inner(u, u).real().max(0.0)
    }

    fn norm(&self, u: &Self::State) -> f64 {
        self.norm_sq(u).sqrt()
    }
}

/// Best tangent-space representation of the Laplacian of the current state.
///
/// Returns `w` minimizing `|Phi'(q) w - lap Phi(q)|^2 + lift_eps^2 |w|^2`
/// together with the attained residual norm. Models whose tangent spaces
/// contain the Laplacian exactly report residual zero.
pub trait TangentLift: Model {
    fn tangent_lift_laplacian(
        &self,
        q: &DVector<Self::Scalar>,
        lift_eps: f64,
    ) -> Result<(DVector<Self::Scalar>, f64), ModelError>;
}

/// Exact propagation under the free equation `psi_t = i k psi_xx`, re-fitted
/// into the model class.
///
/// Returns the new parameters and the re-fit residual in the ambient norm.
pub trait FreeFlow: Model {
    fn free_flow_step(
        &self,
        q: &DVector<Self::Scalar>,
        t: f64,
        kinetic: f64,
        eps: f64,
    ) -> Result<(DVector<Self::Scalar>, f64), ModelError>;
}

pub(crate) fn check_params<T: Field>(q: &DVector<T>, want: usize) -> Result<(), ModelError> {
    if q.len() != want {
        return Err(ModelError::WrongLength { want, got: q.len() });
    }
    for (index, x) in q.iter().enumerate() {
        if !(x.real().is_finite() && x.imaginary().is_finite()) {
            return Err(ModelError::NonFiniteParam { index });
        }
    }
    Ok(())
}

/// Jacobian stored as a dense matrix over a [`SampleSpace`], with the
/// weighted copy kept alongside so adjoints and Gram matrices are plain
/// matrix products.
pub struct DenseJacobian<T: Field> {
    mat: DMatrix<T>,
    wmat: DMatrix<T>,
}

impl<T: Field> DenseJacobian<T> {
    pub fn new(mat: DMatrix<T>, space: &SampleSpace) -> Self {
        assert_eq!(mat.nrows(), space.flat_dim(), "jacobian rows must match space");
        let mut wmat = mat.clone();
        for (k, mut row) in wmat.row_iter_mut().enumerate() {
            let w = T::from_real(space.flat_weight(k));
            for x in row.iter_mut() {
                *x *= w;
            }
        }
        DenseJacobian { mat, wmat }
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.mat
    }
}

impl<T: Field> Jacobian<T> for DenseJacobian<T> {
    type State = DVector<T>;

    fn apply(&self, v: &DVector<T>) -> DVector<T> {
        &self.mat * v
    }

    fn adjoint_apply(&self, u: &DVector<T>) -> DVector<T> {
        self.wmat.ad_mul(u)
    }

    fn gram(&self) -> DMatrix<T> {
        self.wmat.ad_mul(&self.mat)
    }

    fn ncols(&self) -> usize {
        self.mat.ncols()
    }
}
