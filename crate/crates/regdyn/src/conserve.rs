//! Conservation of invariants under the regularized parameter flow.
//!
//! A conserved functional enters the least-squares problem through a
//! Lagrange multiplier: the velocity solves the regularized normal equations
//! shifted by multiples of the lifted constraint gradients, and the (real)
//! multipliers are chosen so the functional is exactly preserved across the
//! discrete step. One factorization of the regularized Gram matrix serves
//! the unconstrained velocity, every lifted gradient, and the projection
//! matrix of the multiplier iteration.

use crate::integrate::RegFlow;
use crate::model::{Jacobian, Model, ModelError, StateVec};
use crate::reglsq::RegLsqError;
use crate::Field;
use nalgebra::{Cholesky, ComplexField, DMatrix, DVector, SymmetricEigen};

/// A real-valued functional with a Riesz gradient: `d/ds g(u + s v)|_0 =
/// Re <gradient(u), v>` in the model's inner product.
pub trait Constraint<M: Model> {
    fn label(&self) -> &str;
    fn value(&self, model: &M, u: &M::State) -> f64;
    fn gradient(&self, model: &M, u: &M::State) -> M::State;
}

/// `g(u) = |u|^2`, gradient `2 u`.
pub struct NormSquared;

impl<M: Model> Constraint<M> for NormSquared {
    fn label(&self) -> &str {
        "norm_squared"
    }

    fn value(&self, model: &M, u: &M::State) -> f64 {
        model.norm_sq(u)
    }

    fn gradient(&self, _model: &M, u: &M::State) -> M::State {
        let mut g = u.clone();
        g.scale_by(M::Scalar::from_real(2.0));
        g
    }
}

/// Constraint defined by closures; the bridge for model-specific invariants
/// such as energies of self-adjoint operators.
pub struct FnConstraint<V, G> {
    pub name: String,
    pub value_fn: V,
    pub gradient_fn: G,
}

impl<M, V, G> Constraint<M> for FnConstraint<V, G>
where
    M: Model,
    V: Fn(&M, &M::State) -> f64,
    G: Fn(&M, &M::State) -> M::State,
{
    fn label(&self) -> &str {
        &self.name
    }

    fn value(&self, model: &M, u: &M::State) -> f64 {
        (self.value_fn)(model, u)
    }

    fn gradient(&self, model: &M, u: &M::State) -> M::State {
        (self.gradient_fn)(model, u)
    }
}

/// Everything recorded about one constrained step.
#[derive(Debug, Clone)]
pub struct ConservedStepRecord {
    pub t: f64,
    pub h: f64,
    pub eps: f64,
    /// Defect of the unconstrained velocity.
    pub defect_unconstrained: f64,
    /// Defect of the constrained velocity; never smaller up to roundoff.
    pub defect_constrained: f64,
    pub multipliers: Vec<f64>,
    pub newton_iters: u32,
    /// `g_j(u_{n+1}) - g_j(u_n)` after the step, one per constraint.
    pub constraint_errors: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ConservedTrajectory<T: Field> {
    pub times: Vec<f64>,
    pub params: Vec<DVector<T>>,
    pub records: Vec<ConservedStepRecord>,
    pub completed: bool,
    pub failure: Option<String>,
}

const NEWTON_MAXIT: u32 = 25;
const GPG_MAX_CONDITION: f64 = 1e12;

/// Regularized flow stepped so the given functionals stay constant.
pub struct ConstrainedFlow<'a, M, F>
where
    M: Model,
    F: Fn(&M::State) -> M::State,
{
    pub flow: &'a RegFlow<'a, M, F>,
    pub constraints: Vec<Box<dyn Constraint<M> + 'a>>,
    /// Where along the predicted step the constraint gradients are frozen:
    /// 0 is the step start, 1/2 the midpoint.
    pub theta: f64,
}

impl<'a, M, F> ConstrainedFlow<'a, M, F>
where
    M: Model,
    F: Fn(&M::State) -> M::State,
{
    pub fn new(flow: &'a RegFlow<'a, M, F>, constraints: Vec<Box<dyn Constraint<M> + 'a>>) -> Self {
        ConstrainedFlow { flow, constraints, theta: 0.5 }
    }

    /// One Euler step that preserves every constraint to Newton tolerance.
    pub fn euler_step(
        &self,
        t: f64,
        q0: &DVector<M::Scalar>,
        h: f64,
        eps: f64,
    ) -> Result<(DVector<M::Scalar>, ConservedStepRecord), ModelError> {
        let model = self.flow.model;
        let m = self.constraints.len();
        let u0 = model.eval(q0)?;
        let jac = model.jacobian(q0)?;
        let b = (self.flow.f)(&u0);

        let mut m_eps = jac.gram();
        self.flow.metric.add_scaled_to(&mut m_eps, eps * eps);
        let chol = Cholesky::new(m_eps)
            .ok_or(ModelError::Lsq(RegLsqError::FactorizationFailed))?;
        let rhs = jac.adjoint_apply(&b);
        let qdot0 = chol.solve(&rhs);
        let defect_unconstrained = self.defect_of(&jac, &qdot0, &b, eps);

        if m == 0 {
            let mut q1 = q0.clone();
            q1.axpy(M::Scalar::from_real(h), &qdot0, M::Scalar::from_real(1.0));
            let rec = ConservedStepRecord {
                t,
                h,
                eps,
                defect_unconstrained,
                defect_constrained: defect_unconstrained,
                multipliers: vec![],
                newton_iters: 0,
                constraint_errors: vec![],
            };
            return Ok((q1, rec));
        }

        // Freeze gradients at the theta-point of the unconstrained
        // prediction; conservation itself is enforced exactly by Newton.
        let mut q_theta = q0.clone();
        q_theta.axpy(M::Scalar::from_real(self.theta * h), &qdot0, M::Scalar::from_real(1.0));
        let u_theta = model.eval(&q_theta)?;

        let targets: Vec<f64> = self.constraints.iter().map(|c| c.value(model, &u0)).collect();
        let grads: Vec<M::State> =
            self.constraints.iter().map(|c| c.gradient(model, &u_theta)).collect();
        let lifted: Vec<DVector<M::Scalar>> =
            grads.iter().map(|g| jac.adjoint_apply(g)).collect();
        let solved: Vec<DVector<M::Scalar>> = lifted.iter().map(|c| chol.solve(c)).collect();

        // Projection matrix S_ij = Re <lifted_i, M^-1 lifted_j>; symmetric
        // positive semidefinite, singular exactly when the constraint
        // gradients are dependent along the tangent space.
        let mut s = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                s[(i, j)] = lifted[i].dotc(&solved[j]).real();
            }
        }
        for i in 0..m {
            for j in (i + 1)..m {
                let avg = 0.5 * (s[(i, j)] + s[(j, i)]);
                s[(i, j)] = avg;
                s[(j, i)] = avg;
            }
        }
        let cond = condition_number(&s);
        if !cond.is_finite() || cond > GPG_MAX_CONDITION {
            return Err(ModelError::Unsupported(format!(
                "constraint projection matrix is numerically singular (condition {cond:.2e})"
            )));
        }
        let hs = &s * h;
        let hs_chol = Cholesky::new(hs)
            .ok_or(ModelError::Lsq(RegLsqError::FactorizationFailed))?;

        // Tight per-step enforcement: drift over a run accumulates roughly
        // n_steps * tol, and long runs must stay below 1e-9 overall.
        let tol = 1e-12
            * (1.0 + targets.iter().map(|v| v.abs()).fold(0.0, f64::max));
        let mut mu = DVector::<f64>::zeros(m);
        let mut iters = 0u32;
        let (q1, errs) = loop {
            if iters > NEWTON_MAXIT {
                return Err(ModelError::Unsupported(format!(
                    "constraint iteration did not converge in {NEWTON_MAXIT} steps"
                )));
            }
            iters += 1;
            let mut qdot = qdot0.clone();
            for j in 0..m {
                qdot.axpy(M::Scalar::from_real(-mu[j]), &solved[j], M::Scalar::from_real(1.0));
            }
            let mut q1 = q0.clone();
            q1.axpy(M::Scalar::from_real(h), &qdot, M::Scalar::from_real(1.0));
            let u1 = model.eval(&q1)?;
            let phi = DVector::from_fn(m, |j, _| {
                self.constraints[j].value(model, &u1) - targets[j]
            });
            let err = phi.amax();
            if !err.is_finite() {
                return Err(ModelError::Unsupported(
                    "constraint iteration produced non-finite values".into(),
                ));
            }
            if err <= tol {
                break (q1, phi.iter().copied().collect::<Vec<_>>());
            }
            mu += hs_chol.solve(&phi);
        };

        let mut qdot = qdot0;
        for j in 0..m {
            qdot.axpy(M::Scalar::from_real(-mu[j]), &solved[j], M::Scalar::from_real(1.0));
        }
        let defect_constrained = self.defect_of(&jac, &qdot, &b, eps);

        let rec = ConservedStepRecord {
            t,
            h,
            eps,
            defect_unconstrained,
            defect_constrained,
            multipliers: mu.iter().copied().collect(),
            newton_iters: iters,
            constraint_errors: errs,
        };
        Ok((q1, rec))
    }

    /// Fixed-step constrained integration.
    pub fn integrate(
        &self,
        q0: &DVector<M::Scalar>,
        t0: f64,
        t_end: f64,
        h: f64,
        eps: f64,
    ) -> ConservedTrajectory<M::Scalar> {
        assert!(t_end > t0 && h > 0.0);
        let n = ((t_end - t0) / h).round().max(1.0) as usize;
        let h = (t_end - t0) / n as f64;
        let mut out = ConservedTrajectory {
            times: vec![t0],
            params: vec![q0.clone()],
            records: Vec::with_capacity(n),
            completed: false,
            failure: None,
        };
        let mut q = q0.clone();
        for k in 0..n {
            let t = t0 + k as f64 * h;
            match self.euler_step(t, &q, h, eps) {
                Ok((q1, rec)) => {
                    q = q1;
                    out.times.push(t + h);
                    out.params.push(q.clone());
                    out.records.push(rec);
                }
                Err(e) => {
                    out.failure = Some(format!("constrained step at t={t} failed: {e}"));
                    return out;
                }
            }
        }
        out.completed = true;
        out
    }

    fn defect_of(
        &self,
        jac: &M::Jac,
        qdot: &DVector<M::Scalar>,
        b: &M::State,
        eps: f64,
    ) -> f64 {
        let mut r = jac.apply(qdot);
        r.add_scaled(M::Scalar::from_real(-1.0), b);
        let res_sq = self.flow.model.norm_sq(&r);
        (res_sq + eps * eps * self.flow.metric.norm_sq(qdot)).sqrt()
    }
}

fn condition_number(s: &DMatrix<f64>) -> f64 {
    if s.nrows() == 1 {
        return if s[(0, 0)] > 0.0 { 1.0 } else { f64::INFINITY };
    }
    let eig = SymmetricEigen::new(s.clone());
    let max = eig.eigenvalues.amax();
    let min = eig.eigenvalues.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Drift `g(u_n) - g(u_0)` of one functional along a parameter history.
pub fn drift_series<M: Model>(
    model: &M,
    constraint: &dyn Constraint<M>,
    params: &[DVector<M::Scalar>],
) -> Result<Vec<f64>, ModelError> {
    let mut out = Vec::with_capacity(params.len());
    let mut base = 0.0;
    for (i, q) in params.iter().enumerate() {
        let v = constraint.value(model, &model.eval(q)?);
        if i == 0 {
            base = v;
        }
        out.push(v - base);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{LinearModel, SampleSpace};
    use approx::assert_relative_eq;

    type Flow<'a> = RegFlow<'a, LinearModel<f64>, fn(&DVector<f64>) -> DVector<f64>>;

    fn spiral(u: &DVector<f64>) -> DVector<f64> {
        // Rotation plus outward growth; does not conserve the norm.
        DVector::from_vec(vec![u[1] + 0.1 * u[0], -u[0] + 0.1 * u[1]])
    }

    fn rotation(u: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(vec![u[1], -u[0]])
    }

    fn model2() -> LinearModel<f64> {
        LinearModel::identity(SampleSpace::single_point(2))
    }

    #[test]
    fn norm_is_preserved_against_a_growing_field() {
        let m = model2();
        let flow: Flow = RegFlow::new(&m, spiral);
        let cf = ConstrainedFlow::new(&flow, vec![Box::new(NormSquared)]);
        let q0 = DVector::from_vec(vec![1.0, 0.0]);
        let tr = cf.integrate(&q0, 0.0, 2.0, 0.01, 1e-3);
        assert!(tr.completed, "{:?}", tr.failure);
        let drift = drift_series(&m, &NormSquared, &tr.params).unwrap();
        let max_drift = drift.iter().fold(0.0f64, |a, d| a.max(d.abs()));
        assert!(max_drift < 1e-8, "drift {max_drift:e}");

        // The unconstrained flow grows visibly over the same horizon.
        let plain = flow.integrate(&crate::integrate::RkTableau::euler(), &q0, 0.0, 2.0, 0.01, 1e-3);
        let grown = m.eval(plain.final_params()).unwrap().norm();
        assert!(grown > 1.15);
    }

    #[test]
    fn constrained_defect_is_never_smaller() {
        let m = model2();
        let flow: Flow = RegFlow::new(&m, spiral);
        let cf = ConstrainedFlow::new(&flow, vec![Box::new(NormSquared)]);
        let q0 = DVector::from_vec(vec![0.8, 0.6]);
        let (_, rec) = cf.euler_step(0.0, &q0, 0.05, 1e-2).unwrap();
        assert!(rec.defect_constrained >= rec.defect_unconstrained - 1e-14);
        assert!(rec.multipliers[0].abs() > 1e-6, "growth must activate the multiplier");
    }

    #[test]
    fn multiplier_sleeps_when_the_field_already_conserves() {
        let m = model2();
        let flow: Flow = RegFlow::new(&m, rotation);
        let cf = ConstrainedFlow::new(&flow, vec![Box::new(NormSquared)]);
        let q0 = DVector::from_vec(vec![1.0, 0.0]);
        // The multiplier correction scales with h, so for h << eps the
        // constrained defect is indistinguishable from the plain one.
        let (_, rec) = cf.euler_step(0.0, &q0, 1e-5, 1e-2).unwrap();
        assert!(rec.multipliers[0].abs() < 1e-4);
        assert_relative_eq!(
            rec.defect_constrained,
            rec.defect_unconstrained,
            max_relative = 1e-4
        );
    }

    #[test]
    fn two_compatible_constraints_hold_simultaneously() {
        let m = LinearModel::identity(SampleSpace::single_point(3));
        // Rotation about the z axis plus radial growth in the xy plane.
        let f = |u: &DVector<f64>| {
            DVector::from_vec(vec![u[1] + 0.05 * u[0], -u[0] + 0.05 * u[1], 0.02])
        };
        let flow = RegFlow::new(&m, f);
        let vertical = FnConstraint {
            name: "z_component".into(),
            value_fn: |m: &LinearModel<f64>, u: &DVector<f64>| {
                let e3 = DVector::from_vec(vec![0.0, 0.0, 1.0]);
                m.inner(&e3, u)
            },
            gradient_fn: |_: &LinearModel<f64>, _: &DVector<f64>| {
                DVector::from_vec(vec![0.0, 0.0, 1.0])
            },
        };
        let cf = ConstrainedFlow::new(&flow, vec![Box::new(NormSquared), Box::new(vertical)]);
        let q0 = DVector::from_vec(vec![1.0, 0.0, 0.5]);
        let tr = cf.integrate(&q0, 0.0, 1.0, 0.01, 1e-3);
        assert!(tr.completed, "{:?}", tr.failure);
        let qf = tr.params.last().unwrap();
        assert_relative_eq!(qf.norm_squared(), 1.25, max_relative = 1e-9);
        assert_relative_eq!(qf[2], 0.5, max_relative = 1e-9);
    }

    #[test]
    fn duplicate_constraints_are_rejected_as_singular() {
        let m = model2();
        let flow: Flow = RegFlow::new(&m, spiral);
        let cf = ConstrainedFlow::new(&flow, vec![Box::new(NormSquared), Box::new(NormSquared)]);
        let q0 = DVector::from_vec(vec![1.0, 0.0]);
        let err = cf.euler_step(0.0, &q0, 0.01, 1e-3).unwrap_err();
        assert!(err.to_string().contains("singular"), "{err}");
    }

    #[test]
    fn gradient_freezing_point_does_not_affect_conservation() {
        let m = model2();
        let flow: Flow = RegFlow::new(&m, spiral);
        let q0 = DVector::from_vec(vec![1.0, 0.0]);
        for theta in [0.0, 0.5, 1.0] {
            let mut cf = ConstrainedFlow::new(&flow, vec![Box::new(NormSquared)]);
            cf.theta = theta;
            let (q1, rec) = cf.euler_step(0.0, &q0, 0.05, 1e-3).unwrap();
            let g1 = m.eval(&q1).unwrap().norm_squared();
            assert_relative_eq!(g1, 1.0, epsilon = 1e-9);
            assert!(rec.newton_iters <= 25);
        }
    }
}
