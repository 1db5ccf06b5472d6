//! Tiny closed-form models used to pin down the behavior of the
//! least-squares core and the integrators.

use super::{check_params, DenseJacobian, Model, ModelError, SampleSpace};
use nalgebra::{DMatrix, DVector};

/// `Phi(q) = q^2 / 2` into `H = R`.
///
/// With `f = 1` everything is explicit: the regularized parameter velocity
/// is `q / (q^2 + eps^2)` and the defect is `eps / sqrt(q^2 + eps^2)`, which
/// makes this the reference problem for step-size and defect bookkeeping.
pub struct ScalarQuadratic {
    space: SampleSpace,
}

impl ScalarQuadratic {
    pub fn new() -> Self {
        ScalarQuadratic { space: SampleSpace::single_point(1) }
    }
}

impl Default for ScalarQuadratic {
    fn default() -> Self {
        Self::new()
    }
}

impl Model for ScalarQuadratic {
    type Scalar = f64;
    type State = DVector<f64>;
    type Jac = DenseJacobian<f64>;

    fn dim(&self) -> usize {
        1
    }

    fn eval(&self, q: &DVector<f64>) -> Result<DVector<f64>, ModelError> {
        check_params(q, 1)?;
        Ok(DVector::from_element(1, 0.5 * q[0] * q[0]))
    }

    fn jacobian(&self, q: &DVector<f64>) -> Result<DenseJacobian<f64>, ModelError> {
        check_params(q, 1)?;
        Ok(DenseJacobian::new(DMatrix::from_element(1, 1, q[0]), &self.space))
    }

    fn inner(&self, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        self.space.inner(u, v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reglsq::{gram_system_dense, solve_normal, MetricQ};
    use approx::assert_relative_eq;

    #[test]
    fn velocity_and_defect_match_closed_forms() {
        let m = ScalarQuadratic::new();
        for (q0, eps) in [(1.0, 0.1), (0.3, 0.01), (2.0, 1.0), (0.0, 0.5)] {
            let q = DVector::from_element(1, q0);
            let a = m.jacobian(&q).unwrap();
            let b = DVector::from_element(1, 1.0);
            let gs = gram_system_dense(a.matrix(), &b, eps, MetricQ::Identity).unwrap();
            let r = solve_normal(&gs).unwrap();
            assert_relative_eq!(r.qdot[0], q0 / (q0 * q0 + eps * eps), max_relative = 1e-13);
            assert_relative_eq!(
                r.defect,
                eps / (q0 * q0 + eps * eps).sqrt(),
                max_relative = 1e-12
            );
        }
    }
}
