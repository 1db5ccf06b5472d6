//! Time integration of the regularized parameter ODE.
//!
//! Each right-hand-side evaluation solves the regularized least-squares
//! problem at the current parameter point, so Runge-Kutta stages carry a
//! defect value alongside the velocity. Step records keep everything needed
//! for a-posteriori error accounting: stage defects, the locally realized
//! residual of the step, and the embedded error estimate when the tableau
//! has one.

use crate::model::{Jacobian, Model, ModelError, StateVec};
use crate::reglsq::{solve_normal_at, GramSystem, MetricQ};
use crate::Field;
use nalgebra::{ComplexField, DVector};

/// Explicit Runge-Kutta tableau, optionally with an embedded error weight
/// vector of lower order.
#[derive(Debug, Clone)]
pub struct RkTableau {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub order: usize,
    pub bhat: Option<Vec<f64>>,
}

impl RkTableau {
    pub fn n_stages(&self) -> usize {
        self.b.len()
    }

    pub fn euler() -> Self {
        RkTableau {
            a: vec![vec![]],
            b: vec![1.0],
            c: vec![0.0],
            order: 1,
            bhat: None,
        }
    }

    pub fn rk4_classic() -> Self {
        RkTableau {
            a: vec![
                vec![],
                vec![0.5],
                vec![0.0, 0.5],
                vec![0.0, 0.0, 1.0],
            ],
            b: vec![1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0],
            c: vec![0.0, 0.5, 0.5, 1.0],
            order: 4,
            bhat: None,
        }
    }

    /// Classical RK4 extended by one stage so that a third-order error
    /// estimate comes almost for free.
    pub fn rk4_embedded() -> Self {
        RkTableau {
            a: vec![
                vec![],
                vec![0.5],
                vec![0.0, 0.5],
                vec![0.0, 0.0, 1.0],
                vec![5.0 / 32.0, 7.0 / 32.0, 13.0 / 32.0, -1.0 / 32.0],
            ],
            b: vec![1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0, 0.0],
            c: vec![0.0, 0.5, 0.5, 1.0, 0.75],
            order: 4,
            bhat: Some(vec![-0.5, 7.0 / 3.0, 7.0 / 3.0, 13.0 / 6.0, -16.0 / 3.0]),
        }
    }
}

/// Everything recorded about one accepted step.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub t: f64,
    pub h: f64,
    pub eps: f64,
    /// Defect of the regularized least-squares problem at each stage.
    pub stage_defects: Vec<f64>,
    pub defect_max: f64,
    /// `|Phi(q1) - Phi(q0) - h sum_j b_j A(q_j) qdot_j|` in the ambient norm;
    /// how far the realized state increment is from the tangent prediction.
    pub aposteriori_local: f64,
    /// Whether `h * defect_max <= restriction_c * eps^2` held.
    pub restriction_satisfied: bool,
    /// Ambient-norm distance between the step and its embedded companion.
    pub embedded_error: Option<f64>,
    /// Rejections before this step was accepted (filled by adaptive drivers).
    pub rejects: u32,
    /// Defect target the regularization selector aimed at; NaN outside
    /// adaptive runs.
    pub defect_target: f64,
    /// Whether the selected regularization hit a bound of `eps_bounds`.
    pub eps_clamped: bool,
    /// Residual of any re-fit the step performed outside the tangent space
    /// (exact sub-flows in splitting methods); zero for plain steps.
    pub refit_residual: f64,
    /// Fixed-point iterations used by implicit steps; zero for explicit.
    pub fp_iterations: u32,
}

/// Parameter velocity at one point, with its defect and realized tangent.
pub struct Velocity<M: Model> {
    pub qdot: DVector<M::Scalar>,
    pub defect: f64,
    pub residual_norm: f64,
    /// `Phi'(q) qdot`.
    pub tangent: M::State,
}

/// Integration result; on failure the fields hold the completed prefix.
#[derive(Debug, Clone)]
pub struct Trajectory<T: Field> {
    pub times: Vec<f64>,
    pub params: Vec<DVector<T>>,
    pub records: Vec<StepRecord>,
    pub completed: bool,
    pub failure: Option<String>,
    /// Trapezoid rule over the nodal defects.
    pub defect_integral: f64,
    pub final_defect: f64,
}

impl<T: Field> Trajectory<T> {
    pub fn final_params(&self) -> &DVector<T> {
        self.params.last().expect("trajectory holds at least the initial point")
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("trajectory holds at least the initial point")
    }

    /// One CSV row per step with the running defect integral.
    pub fn write_csv<W: std::io::Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(
            w,
            "t,h,eps,defect_start,defect_max,aposteriori_local,embedded_error,cum_defect_integral"
        )?;
        let mut cum = 0.0;
        for (i, r) in self.records.iter().enumerate() {
            let d0 = r.stage_defects.first().copied().unwrap_or(0.0);
            let d1 = self
                .records
                .get(i + 1)
                .map(|n| n.stage_defects.first().copied().unwrap_or(0.0))
                .unwrap_or(self.final_defect);
            cum += 0.5 * (d0 + d1) * r.h;
            writeln!(
                w,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                r.t,
                r.h,
                r.eps,
                d0,
                r.defect_max,
                r.aposteriori_local,
                r.embedded_error.unwrap_or(f64::NAN),
                cum
            )?;
        }
        Ok(())
    }
}

/// The regularized flow `qdot = argmin |Phi'(q) qdot - f(Phi(q))|^2 +
/// eps^2 |qdot|_Q^2` together with its integrators.
pub struct RegFlow<'a, M: Model, F>
where
    F: Fn(&M::State) -> M::State,
{
    pub model: &'a M,
    pub f: F,
    pub metric: MetricQ<M::Scalar>,
    /// Constant in the recorded step-size restriction `h delta <= c eps^2`.
    pub restriction_c: f64,
}

const FP_MAX_ITERS: u32 = 120;
const FP_MIN_DAMPING: f64 = 1e-3;

impl<'a, M: Model, F> RegFlow<'a, M, F>
where
    F: Fn(&M::State) -> M::State,
{
    pub fn new(model: &'a M, f: F) -> Self {
        RegFlow { model, f, metric: MetricQ::Identity, restriction_c: 1.0 }
    }

    pub fn with_metric(mut self, metric: MetricQ<M::Scalar>) -> Self {
        self.metric = metric;
        self
    }

    /// Normal equations at `q` (Gram matrix, right-hand side, `|b|^2`),
    /// reusable across several regularization strengths.
    pub fn assemble(
        &self,
        q: &DVector<M::Scalar>,
        eps: f64,
    ) -> Result<(GramSystem<M::Scalar>, M::Jac), ModelError> {
        let u = self.model.eval(q)?;
        let jac = self.model.jacobian(q)?;
        let b = (self.f)(&u);
        let gs = GramSystem {
            gram: jac.gram(),
            rhs: jac.adjoint_apply(&b),
            eps,
            metric: self.metric.clone(),
            b_norm_sq: self.model.norm_sq(&b),
        };
        Ok((gs, jac))
    }

    pub fn velocity(&self, q: &DVector<M::Scalar>, eps: f64) -> Result<Velocity<M>, ModelError> {
        let (gs, jac) = self.assemble(q, eps)?;
        let r = solve_normal_at(&gs, eps)?;
        let tangent = jac.apply(&r.qdot);
        Ok(Velocity { qdot: r.qdot, defect: r.defect, residual_norm: r.residual_norm, tangent })
    }

    /// One explicit Runge-Kutta step from `(t, q0)`.
    pub fn rk_step(
        &self,
        tab: &RkTableau,
        t: f64,
        q0: &DVector<M::Scalar>,
        h: f64,
        eps: f64,
    ) -> Result<(DVector<M::Scalar>, StepRecord), ModelError> {
        assert!(h >= 0.0, "negative step size");
        let s = tab.n_stages();
        let mut qdots: Vec<DVector<M::Scalar>> = Vec::with_capacity(s);
        let mut tangents: Vec<M::State> = Vec::with_capacity(s);
        let mut stage_defects = Vec::with_capacity(s);

        for i in 0..s {
            let mut qi = q0.clone();
            for (j, &aij) in tab.a[i].iter().enumerate() {
                if aij != 0.0 {
                    qi.axpy(M::Scalar::from_real(h * aij), &qdots[j], M::Scalar::from_real(1.0));
                }
            }
            let v = self.velocity(&qi, eps)?;
            stage_defects.push(v.defect);
            qdots.push(v.qdot);
            tangents.push(v.tangent);
        }

        let mut q1 = q0.clone();
        for (j, &bj) in tab.b.iter().enumerate() {
            if bj != 0.0 {
                q1.axpy(M::Scalar::from_real(h * bj), &qdots[j], M::Scalar::from_real(1.0));
            }
        }

        // Realized increment versus the tangent prediction.
        let u1 = self.model.eval(&q1)?;
        let u0 = self.model.eval(q0)?;
        let mut diff = u1.clone();
        diff.add_scaled(M::Scalar::from_real(-1.0), &u0);
        for (j, &bj) in tab.b.iter().enumerate() {
            if bj != 0.0 {
                diff.add_scaled(M::Scalar::from_real(-h * bj), &tangents[j]);
            }
        }
        let aposteriori_local = self.model.norm(&diff);

        let embedded_error = tab.bhat.as_ref().map(|bhat| {
            let mut qh = q0.clone();
            for (j, &bj) in bhat.iter().enumerate() {
                if bj != 0.0 {
                    qh.axpy(M::Scalar::from_real(h * bj), &qdots[j], M::Scalar::from_real(1.0));
                }
            }
            match self.model.eval(&qh) {
                Ok(uh) => {
                    let mut d = u1.clone();
                    d.add_scaled(M::Scalar::from_real(-1.0), &uh);
                    self.model.norm(&d)
                }
                Err(_) => f64::INFINITY,
            }
        });

        let defect_max = stage_defects.iter().cloned().fold(0.0, f64::max);
        let record = StepRecord {
            t,
            h,
            eps,
            defect_max,
            stage_defects,
            aposteriori_local,
            restriction_satisfied: h * defect_max <= self.restriction_c * eps * eps,
            embedded_error,
            rejects: 0,
            defect_target: f64::NAN,
            eps_clamped: false,
            refit_residual: 0.0,
            fp_iterations: 0,
        };
        Ok((q1, record))
    }

    pub fn euler_step(
        &self,
        t: f64,
        q0: &DVector<M::Scalar>,
        h: f64,
        eps: f64,
    ) -> Result<(DVector<M::Scalar>, StepRecord), ModelError> {
        self.rk_step(&RkTableau::euler(), t, q0, h, eps)
    }

    /// One implicit Euler step `q1 = q0 + h qdot(q1)`, solved by damped
    /// fixed-point iteration. The damping halves whenever the update
    /// distance grows three times in a row, which restores convergence for
    /// stiff right-hand sides where the plain iteration diverges.
    pub fn implicit_euler_step(
        &self,
        t: f64,
        q0: &DVector<M::Scalar>,
        h: f64,
        eps: f64,
    ) -> Result<(DVector<M::Scalar>, StepRecord), ModelError> {
        let tol = 1e-12 * (1.0 + self.metric.norm_sq(q0).sqrt());
        let mut x = q0.clone();
        let mut omega = 1.0;
        let mut last_dist = f64::INFINITY;
        let mut growths = 0u32;
        let mut iters = 0u32;

        loop {
            if iters >= FP_MAX_ITERS {
                return Err(ModelError::Unsupported(format!(
                    "implicit Euler did not converge in {FP_MAX_ITERS} iterations (h={h}, eps={eps})"
                )));
            }
            iters += 1;
            let v = self.velocity(&x, eps)?;
            // phi(x) - x = q0 + h qdot(x) - x.
            let mut delta = q0 - &x;
            delta.axpy(M::Scalar::from_real(h), &v.qdot, M::Scalar::from_real(1.0));
            let dist = self.metric.norm_sq(&delta).sqrt();
            if !dist.is_finite() {
                return Err(ModelError::Unsupported(
                    "implicit Euler iteration diverged to non-finite values".into(),
                ));
            }
            if dist <= tol {
                x.axpy(M::Scalar::from_real(omega), &delta, M::Scalar::from_real(1.0));
                break;
            }
            if dist > last_dist {
                growths += 1;
                if growths >= 3 {
                    omega *= 0.5;
                    growths = 0;
                    last_dist = f64::INFINITY;
                    if omega < FP_MIN_DAMPING {
                        return Err(ModelError::Unsupported(format!(
                            "implicit Euler stalled: damping fell below {FP_MIN_DAMPING}"
                        )));
                    }
                    continue;
                }
            } else {
                growths = 0;
            }
            last_dist = dist;
            x.axpy(M::Scalar::from_real(omega), &delta, M::Scalar::from_real(1.0));
        }

        let v = self.velocity(&x, eps)?;
        let u1 = self.model.eval(&x)?;
        let u0 = self.model.eval(q0)?;
        let mut diff = u1;
        diff.add_scaled(M::Scalar::from_real(-1.0), &u0);
        diff.add_scaled(M::Scalar::from_real(-h), &v.tangent);
        let record = StepRecord {
            t,
            h,
            eps,
            stage_defects: vec![v.defect],
            defect_max: v.defect,
            aposteriori_local: self.model.norm(&diff),
            restriction_satisfied: h * v.defect <= self.restriction_c * eps * eps,
            embedded_error: None,
            rejects: 0,
            defect_target: f64::NAN,
            eps_clamped: false,
            refit_residual: 0.0,
            fp_iterations: iters,
        };
        Ok((x, record))
    }

    /// Fixed-step integration from `t0` to `t_end`; `h` is adjusted to the
    /// nearest divisor of the span. On a step failure the trajectory is
    /// returned incomplete with the failure message.
    pub fn integrate(
        &self,
        tab: &RkTableau,
        q0: &DVector<M::Scalar>,
        t0: f64,
        t_end: f64,
        h: f64,
        eps: f64,
    ) -> Trajectory<M::Scalar> {
        assert!(t_end > t0 && h > 0.0);
        let n = ((t_end - t0) / h).round().max(1.0) as usize;
        let h = (t_end - t0) / n as f64;

        let mut times = Vec::with_capacity(n + 1);
        let mut params = Vec::with_capacity(n + 1);
        let mut records = Vec::with_capacity(n);
        times.push(t0);
        params.push(q0.clone());

        let mut q = q0.clone();
        for k in 0..n {
            let t = t0 + k as f64 * h;
            match self.rk_step(tab, t, &q, h, eps) {
                Ok((q1, rec)) => {
                    if q1.iter().any(|x| !(x.real().is_finite() && x.imaginary().is_finite())) {
                        return self.finish(times, params, records, false,
                            Some(format!("parameters became non-finite at t={t}")), eps);
                    }
                    q = q1;
                    times.push(t + h);
                    params.push(q.clone());
                    records.push(rec);
                }
                Err(e) => {
                    return self.finish(times, params, records, false,
                        Some(format!("step at t={t} failed: {e}")), eps);
                }
            }
        }
        self.finish(times, params, records, true, None, eps)
    }

    fn finish(
        &self,
        times: Vec<f64>,
        params: Vec<DVector<M::Scalar>>,
        records: Vec<StepRecord>,
        completed: bool,
        failure: Option<String>,
        eps: f64,
    ) -> Trajectory<M::Scalar> {
        let final_defect = self
            .velocity(params.last().unwrap(), eps)
            .map(|v| v.defect)
            .unwrap_or(f64::NAN);
        let mut defect_integral = 0.0;
        for (i, r) in records.iter().enumerate() {
            let d0 = r.stage_defects.first().copied().unwrap_or(0.0);
            let d1 = records
                .get(i + 1)
                .map(|n| n.stage_defects.first().copied().unwrap_or(0.0))
                .unwrap_or(final_defect);
            if d1.is_finite() {
                defect_integral += 0.5 * (d0 + d1) * r.h;
            }
        }
        Trajectory { times, params, records, completed, failure, defect_integral, final_defect }
    }
}
