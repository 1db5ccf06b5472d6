//! Linear parametrizations `Phi(q) = B q` over a sample space.

use super::{check_params, DenseJacobian, Model, ModelError, SampleSpace, TangentLift};
use crate::Field;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

/// Fixed frame `B` of basis vectors, one column per parameter.
///
/// The Jacobian is constant, so regularized dynamics on a linear model is
/// the test bed where every quantity has a matrix-analysis counterpart.
pub struct LinearModel<T: Field> {
    basis: DMatrix<T>,
    space: SampleSpace,
    laplacian_eigs: Option<DVector<f64>>,
}

impl<T: Field> LinearModel<T> {
    pub fn new(space: SampleSpace, basis: DMatrix<T>) -> Self {
        assert_eq!(basis.nrows(), space.flat_dim());
        LinearModel { basis, space, laplacian_eigs: None }
    }

    /// `Phi = Id` on the flattened space; turns the parameter ODE into the
    /// (regularized) original ODE.
    pub fn identity(space: SampleSpace) -> Self {
        let n = space.flat_dim();
        LinearModel::new(space, DMatrix::identity(n, n))
    }

    /// Declare that the basis diagonalizes the Laplacian: `B_j'' = eig_j B_j`.
    pub fn with_laplacian_eigenvalues(mut self, eigs: DVector<f64>) -> Self {
        assert_eq!(eigs.len(), self.basis.ncols());
        self.laplacian_eigs = Some(eigs);
        self
    }

    pub fn space(&self) -> &SampleSpace {
        &self.space
    }

    pub fn basis(&self) -> &DMatrix<T> {
        &self.basis
    }
}

impl LinearModel<Complex64> {
    /// Orthonormal Fourier frame `e^{i k x} / sqrt(L)` for `|k| <= kmax` on a
    /// uniform periodic grid over `[lo, hi)`, with exact Laplacian
    /// eigenvalues `-k^2`.
    pub fn fourier(lo: f64, hi: f64, n_grid: usize, kmax: usize) -> Self {
        assert!(2 * kmax < n_grid, "modes above Nyquist");
        let space = SampleSpace::uniform_periodic(lo, hi, n_grid, 1);
        let l = hi - lo;
        let scale = 1.0 / l.sqrt();
        let n_modes = 2 * kmax + 1;
        let mut basis = DMatrix::zeros(n_grid, n_modes);
        let mut eigs = DVector::zeros(n_modes);
        for j in 0..n_modes {
            let k = j as f64 - kmax as f64;
            let freq = 2.0 * std::f64::consts::PI * k / l;
            for i in 0..n_grid {
                let x = space.point(i)[0];
                basis[(i, j)] = Complex64::from_polar(scale, freq * x);
            }
            eigs[j] = -freq * freq;
        }
        LinearModel::new(space, basis).with_laplacian_eigenvalues(eigs)
    }
}

impl<T: Field> Model for LinearModel<T> {
    type Scalar = T;
    type State = DVector<T>;
    type Jac = DenseJacobian<T>;

    fn dim(&self) -> usize {
        self.basis.ncols()
    }

    fn eval(&self, q: &DVector<T>) -> Result<DVector<T>, ModelError> {
        check_params(q, self.dim())?;
        Ok(&self.basis * q)
    }

    fn jacobian(&self, q: &DVector<T>) -> Result<DenseJacobian<T>, ModelError> {
        check_params(q, self.dim())?;
        Ok(DenseJacobian::new(self.basis.clone(), &self.space))
    }

    fn inner(&self, u: &DVector<T>, v: &DVector<T>) -> T {
        self.space.inner(u, v)
    }
}

impl<T: Field> TangentLift for LinearModel<T> {
    fn tangent_lift_laplacian(
        &self,
        q: &DVector<T>,
        _lift_eps: f64,
    ) -> Result<(DVector<T>, f64), ModelError> {
        check_params(q, self.dim())?;
        match &self.laplacian_eigs {
            Some(eigs) => {
                let w = DVector::from_fn(q.len(), |j, _| q[j] * T::from_real(eigs[j]));
                Ok((w, 0.0))
            }
            None => Err(ModelError::Unsupported(
                "tangent lift needs a basis with known Laplacian eigenvalues".into(),
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Jacobian;
    use approx::assert_relative_eq;

    #[test]
    fn fourier_frame_is_orthonormal() {
        let m = LinearModel::fourier(-1.0, 1.0, 32, 5);
        let q = DVector::from_element(m.dim(), Complex64::new(0.0, 0.0));
        let gram = m.jacobian(&q).unwrap().gram();
        let eye = DMatrix::<Complex64>::identity(m.dim(), m.dim());
        assert!((gram - eye).norm() < 1e-12);
    }

    #[test]
    fn fourier_lift_matches_grid_second_difference() {
        let m = LinearModel::fourier(0.0, 2.0 * std::f64::consts::PI, 64, 3);
        let mut q = DVector::from_element(m.dim(), Complex64::new(0.0, 0.0));
        q[1] = Complex64::new(0.7, -0.2); // k = -2
        q[4] = Complex64::new(0.1, 0.4); // k = 1
        let (w, res) = m.tangent_lift_laplacian(&q, 0.0).unwrap();
        assert_eq!(res, 0.0);
        assert_relative_eq!((w[1] / q[1]).re, -4.0, max_relative = 1e-12);
        assert_relative_eq!((w[4] / q[4]).re, -1.0, max_relative = 1e-12);

        // Phi'(q) w evaluated on the grid equals the analytic Laplacian.
        let lap = m.eval(&w).unwrap();
        for i in 0..8 {
            let x = m.space().point(i * 7)[0];
            let scale = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
            let analytic = q[1] * Complex64::from_polar(scale, -2.0 * x) * (-4.0)
                + q[4] * Complex64::from_polar(scale, x) * (-1.0);
            assert!((lap[i * 7] - analytic).norm() < 1e-12);
        }
    }

    #[test]
    fn plain_frame_has_no_lift() {
        let space = SampleSpace::single_point(2);
        let m = LinearModel::new(space, DMatrix::<f64>::identity(2, 2));
        let q = DVector::from_vec(vec![1.0, 2.0]);
        assert!(matches!(
            m.tangent_lift_laplacian(&q, 0.0),
            Err(ModelError::Unsupported(_))
        ));
    }
}
