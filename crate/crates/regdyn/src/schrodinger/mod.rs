//! Schrödinger-specific velocity fields and steppers on Gaussian sums.
//!
//! The equation is `i psi_t = -k psi_xx + V psi` with a real polynomial
//! potential. Besides the plain regularized velocity (the generic flow with
//! `f(u) = -i H u`), this module provides the two modified velocity fields
//! that treat the kinetic part through the tangent lift, the splitting step
//! whose kinetic half-steps use the exact free flow, mass and energy
//! observables, and the double-well setup with its Gauss-Hermite
//! initialization.

pub mod fourier;

use crate::gauss::{self, GaussState, GaussTerm};
use crate::integrate::{RegFlow, RkTableau, StepRecord, Trajectory};
use crate::model::{
    fit_frozen_coefficients, FreeFlow, GaussianSumModel, Jacobian, Model, ModelError, TangentLift,
};
use crate::reglsq::{solve_normal, GramSystem, MetricQ};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64 as C64;

/// Hamiltonian `H = -kinetic * d^2/dx^2 + V(x)` with a real polynomial
/// potential, plus the regularization used for tangent-space lifts.
#[derive(Debug, Clone)]
pub struct SchrodingerOp {
    pub kinetic: f64,
    /// Potential coefficients, lowest degree first.
    pub potential: Vec<f64>,
    /// Regularization for the Laplacian and Taylor lifts and for free-flow
    /// re-fits; tiny, it only stabilizes those solves.
    pub lift_eps: f64,
}

impl SchrodingerOp {
    pub fn new(kinetic: f64, potential: Vec<f64>) -> Self {
        SchrodingerOp { kinetic, potential, lift_eps: 1e-10 }
    }

    /// The quartic double well `-x^2/8 + x^4/64` with kinetic constant 1/2.
    pub fn double_well() -> Self {
        SchrodingerOp::new(0.5, vec![0.0, 0.0, -0.125, 0.0, 0.015625])
    }

    pub fn potential_value(&self, x: f64) -> f64 {
        poly_eval(&self.potential, x)
    }

    /// `H u` in the exact Gaussian algebra.
    pub fn apply(&self, u: &GaussState) -> GaussState {
        let mut out = u.ddx();
        out.scale(C64::new(-self.kinetic, 0.0));
        out.add_scaled(C64::new(1.0, 0.0), &u.mul_poly(&self.potential));
        out
    }

    /// `-i H u`, the right-hand side of the plain regularized flow.
    pub fn rhs(&self, u: &GaussState) -> GaussState {
        let mut out = self.apply(u);
        out.scale(C64::new(0.0, -1.0));
        out
    }
}

/// Which velocity field or stepping scheme a run uses.
///
/// `Modified1` treats the kinetic part through the tangent lift; for the
/// frozen Gaussian family that lift has an order-one residual, so the
/// faithful discrete realization is the splitting driver, and run drivers
/// map `Modified1` to the same stepping as `Strang`. `SelfAdjoint`
/// sandwiches the potential between quasi-projections, trading energy
/// conservation for exact mass conservation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitStepVariant {
    Plain,
    Modified1,
    SelfAdjoint,
    Strang,
}

impl std::str::FromStr for SplitStepVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "plain" => Ok(SplitStepVariant::Plain),
            "modified1" => Ok(SplitStepVariant::Modified1),
            "modified2" | "selfadjoint" => Ok(SplitStepVariant::SelfAdjoint),
            "strang" => Ok(SplitStepVariant::Strang),
            other => Err(format!(
                "unknown variant '{other}' (expected plain, modified1, modified2 or strang)"
            )),
        }
    }
}

/// The regularized flow of `qdot = argmin |A qdot + i H u|^2 + eps^2 |qdot|^2`.
pub fn plain_flow(
    model: &GaussianSumModel,
    op: SchrodingerOp,
) -> RegFlow<'_, GaussianSumModel, impl Fn(&GaussState) -> GaussState> {
    RegFlow::new(model, move |u: &GaussState| op.rhs(u))
}

#[derive(Debug, Clone, Copy)]
pub struct Observables {
    pub mass: f64,
    pub energy: f64,
    /// Imaginary part of `<u, H u>`; zero up to roundoff for a self-adjoint
    /// evaluation, kept as a consistency diagnostic.
    pub energy_imag: f64,
}

pub fn observables(
    model: &GaussianSumModel,
    q: &DVector<C64>,
    op: &SchrodingerOp,
) -> Result<Observables, ModelError> {
    let u = model.eval(q)?;
    let e = gauss::inner(&u, &op.apply(&u));
    Ok(Observables { mass: gauss::norm_sq(&u), energy: e.re, energy_imag: e.im })
}

/// Velocity of the first modified equation: the kinetic part rides the
/// tangent lift of the Laplacian, the potential part is a regularized
/// least-squares solve.
pub struct ModifiedVelocity {
    pub qdot: DVector<C64>,
    /// The least-squares part of the velocity.
    pub p: DVector<C64>,
    /// Defect of the potential subproblem.
    pub defect: f64,
    /// Residual of the Laplacian tangent lift (the frozen family is not
    /// closed under the Laplacian, so this is genuinely nonzero).
    pub lift_residual: f64,
    /// Residual of the Taylor-polynomial lift; zero when disabled.
    pub taylor_residual: f64,
}

/// `qdot = i k q_lap + p` with `p` minimizing `|A p + i V u|^2 + eps^2 |p|^2`.
///
/// With `taylor` set, the second-order Taylor polynomial of `V` around each
/// Gaussian's position center is lifted into the tangent space as well, and
/// the least-squares problem only sees the Taylor remainder. For a quadratic
/// potential the remainder vanishes identically, so the defect is zero.
pub fn qdot_modified1(
    model: &GaussianSumModel,
    q: &DVector<C64>,
    op: &SchrodingerOp,
    eps: f64,
    taylor: bool,
) -> Result<ModifiedVelocity, ModelError> {
    let u = model.eval(q)?;
    let jac = model.jacobian(q)?;
    let (q_lap, lift_residual) = model.tangent_lift_laplacian(q, op.lift_eps)?;

    let (b, q_taylor, taylor_residual) = if taylor {
        let lift = taylor_potential_lift(model, q, op)?;
        let mut b = lift.remainder;
        b.scale(C64::new(0.0, -1.0));
        (b, Some(lift.q_taylor), lift.residual)
    } else {
        let mut b = u.mul_poly(&op.potential);
        b.scale(C64::new(0.0, -1.0));
        (b, None, 0.0)
    };

    let gs = GramSystem {
        gram: jac.gram(),
        rhs: jac.adjoint_apply(&b),
        eps,
        metric: MetricQ::Identity,
        b_norm_sq: gauss::norm_sq(&b),
    };
    let r = solve_normal(&gs)?;

    let mut qdot = r.qdot.clone();
    let ik = C64::new(0.0, op.kinetic);
    qdot.axpy(ik, &q_lap, C64::new(1.0, 0.0));
    if let Some(qt) = q_taylor {
        qdot.axpy(C64::new(0.0, -1.0), &qt, C64::new(1.0, 0.0));
    }
    Ok(ModifiedVelocity {
        qdot,
        p: r.qdot,
        defect: r.defect,
        lift_residual,
        taylor_residual,
    })
}

/// Tangent-space lift of the per-term second-order Taylor part of `V u`.
pub struct TaylorLift {
    pub q_taylor: DVector<C64>,
    /// `V u` minus the lifted Taylor part, exactly representable in the
    /// Gaussian algebra.
    pub remainder: GaussState,
    /// Least-squares residual of the lift itself.
    pub residual: f64,
}

/// Splits `V u = sum_m U_m c_m g_m + remainder` where `U_m` is the
/// second-order Taylor polynomial of `V` at the position center of the m-th
/// Gaussian, and lifts the first part into the tangent space.
pub fn taylor_potential_lift(
    model: &GaussianSumModel,
    q: &DVector<C64>,
    op: &SchrodingerOp,
) -> Result<TaylorLift, ModelError> {
    let jac = model.jacobian(q)?;
    let d1 = poly_derivative(&op.potential);
    let d2 = poly_derivative(&d1);

    let mut taylor_part = GaussState::zero();
    let mut remainder = GaussState::zero();
    let one = C64::new(1.0, 0.0);
    for m in 0..model.n_gauss() {
        let (c, kappa) = (q[2 * m], q[2 * m + 1]);
        let a = -kappa.re;
        let (v0, v1, v2) = (
            poly_eval(&op.potential, a),
            poly_eval(&d1, a),
            poly_eval(&d2, a),
        );
        // U(x) = v0 + v1 (x - a) + v2/2 (x - a)^2 in monomial form.
        let u_poly = vec![
            v0 - v1 * a + 0.5 * v2 * a * a,
            v1 - v2 * a,
            0.5 * v2,
        ];
        let mut chi_poly = vec![0.0; op.potential.len().max(3)];
        for (i, &v) in op.potential.iter().enumerate() {
            chi_poly[i] += v;
        }
        for (i, &v) in u_poly.iter().enumerate() {
            chi_poly[i] -= v;
        }
        let term = GaussState::new(vec![GaussTerm::frozen(c, kappa)]);
        taylor_part.add_scaled(one, &term.mul_poly(&u_poly));
        remainder.add_scaled(one, &term.mul_poly(&chi_poly));
    }

    let gs = GramSystem {
        gram: jac.gram(),
        rhs: jac.adjoint_apply(&taylor_part),
        eps: op.lift_eps,
        metric: MetricQ::Identity,
        b_norm_sq: gauss::norm_sq(&taylor_part),
    };
    let r = solve_normal(&gs)?;
    Ok(TaylorLift { q_taylor: r.qdot, remainder, residual: r.residual_norm })
}

pub struct SelfAdjointVelocity {
    pub qdot: DVector<C64>,
    /// Defect of replacing the sandwiched potential term by its
    /// quasi-projection.
    pub defect: f64,
    pub lift_residual: f64,
}

/// Potential part of the second modified equation: `y` solving the sandwich
/// `Phi' y ~ V P_eps u` with both regularized solves sharing one
/// factorization of the normal-equation matrix. The parameter velocity of
/// the sandwiched potential flow is `-i y`.
pub fn potential_sandwich(
    model: &GaussianSumModel,
    q: &DVector<C64>,
    op: &SchrodingerOp,
    eps: f64,
) -> Result<(DVector<C64>, f64), ModelError> {
    let u = model.eval(q)?;
    let jac = model.jacobian(q)?;
    let n = jac.ncols();
    let mut m = jac.gram();
    for i in 0..n {
        m[(i, i)] += C64::new(eps * eps, 0.0);
    }
    let solve = factor_hermitian(m)?;

    let y1 = solve(&jac.adjoint_apply(&u));
    let w = jac.apply(&y1).mul_poly(&op.potential);
    let y2 = solve(&jac.adjoint_apply(&w));

    let mut resid = jac.apply(&y2);
    resid.add_scaled(C64::new(-1.0, 0.0), &w);
    let defect = (gauss::norm_sq(&resid) + eps * eps * y2.norm_squared()).sqrt();
    Ok((y2, defect))
}

/// Velocity of the second modified equation: the potential acts as
/// `P_eps V P_eps`; the continuous flow of this field conserves mass.
pub fn qdot_selfadjoint(
    model: &GaussianSumModel,
    q: &DVector<C64>,
    op: &SchrodingerOp,
    eps: f64,
) -> Result<SelfAdjointVelocity, ModelError> {
    let (q_lap, lift_residual) = model.tangent_lift_laplacian(q, op.lift_eps)?;
    let (y2, defect) = potential_sandwich(model, q, op, eps)?;

    let mut qdot = q_lap;
    qdot *= C64::new(0.0, op.kinetic);
    qdot.axpy(C64::new(0.0, -1.0), &y2, C64::new(1.0, 0.0));
    Ok(SelfAdjointVelocity { qdot, defect, lift_residual })
}

/// One factorization of a Hermitian positive definite matrix, reusable for
/// several solves; falls back to a spectral pseudo-solve when the Cholesky
/// factorization fails.
fn factor_hermitian(
    m: DMatrix<C64>,
) -> Result<impl Fn(&DVector<C64>) -> DVector<C64>, ModelError> {
    enum Factor {
        Chol(nalgebra::Cholesky<C64, nalgebra::Dyn>),
        Eig(SymmetricEigen<C64, nalgebra::Dyn>),
    }
    let f = match nalgebra::Cholesky::new(m.clone()) {
        Some(c) => Factor::Chol(c),
        None => Factor::Eig(SymmetricEigen::new(m)),
    };
    Ok(move |b: &DVector<C64>| match &f {
        Factor::Chol(c) => c.solve(b),
        Factor::Eig(e) => {
            let floor = e.eigenvalues.amax() * 1e-15;
            let mut y = e.eigenvectors.ad_mul(b);
            for (i, v) in y.iter_mut().enumerate() {
                let ev = e.eigenvalues[i];
                *v = if ev.abs() > floor { *v / C64::new(ev, 0.0) } else { C64::new(0.0, 0.0) };
            }
            &e.eigenvectors * y
        }
    })
}

/// One splitting step: exact free flow over `h/2` (re-fit onto the frozen
/// family, residual recorded), one Runge-Kutta step of the regularized
/// potential-only flow over `h`, and a second free half-step.
pub fn strang_step(
    model: &GaussianSumModel,
    q: &DVector<C64>,
    op: &SchrodingerOp,
    eps: f64,
    h: f64,
    tab: &RkTableau,
) -> Result<(DVector<C64>, StepRecord), ModelError> {
    let (q_half, refit1) = model.free_flow_step(q, 0.5 * h, op.kinetic, op.lift_eps)?;

    let pot = op.potential.clone();
    let flow = RegFlow::new(model, move |u: &GaussState| {
        let mut w = u.mul_poly(&pot);
        w.scale(C64::new(0.0, -1.0));
        w
    });
    let (q_minus, mut rec) = flow.rk_step(tab, 0.0, &q_half, h, eps)?;

    let (q_new, refit2) = model.free_flow_step(&q_minus, 0.5 * h, op.kinetic, op.lift_eps)?;
    rec.refit_residual = refit1 + refit2;
    Ok((q_new, rec))
}

/// Splitting step whose potential substep follows the sandwiched flow
/// `udot = -i P_eps V P_eps u` instead of the regularized least-squares
/// projection of `-i V u`; the substep conserves mass exactly at the ODE
/// level, so the whole step drifts only by the re-fit residuals and the
/// Runge-Kutta truncation of the invariant.
pub fn strang_step_selfadjoint(
    model: &GaussianSumModel,
    q: &DVector<C64>,
    op: &SchrodingerOp,
    eps: f64,
    h: f64,
    tab: &RkTableau,
) -> Result<(DVector<C64>, StepRecord), ModelError> {
    let (q_half, refit1) = model.free_flow_step(q, 0.5 * h, op.kinetic, op.lift_eps)?;

    let s = tab.n_stages();
    let mut qdots: Vec<DVector<C64>> = Vec::with_capacity(s);
    let mut stage_defects = Vec::with_capacity(s);
    for i in 0..s {
        let mut qi = q_half.clone();
        for (j, &aij) in tab.a[i].iter().enumerate() {
            if aij != 0.0 {
                qi.axpy(C64::new(h * aij, 0.0), &qdots[j], C64::new(1.0, 0.0));
            }
        }
        let (y2, defect) = potential_sandwich(model, &qi, op, eps)?;
        stage_defects.push(defect);
        qdots.push(y2.map(|z| C64::new(0.0, -1.0) * z));
    }
    let mut q_minus = q_half.clone();
    for (j, &bj) in tab.b.iter().enumerate() {
        if bj != 0.0 {
            q_minus.axpy(C64::new(h * bj, 0.0), &qdots[j], C64::new(1.0, 0.0));
        }
    }

    let (q_new, refit2) = model.free_flow_step(&q_minus, 0.5 * h, op.kinetic, op.lift_eps)?;
    let defect_max = stage_defects.iter().cloned().fold(0.0, f64::max);
    let record = StepRecord {
        t: 0.0,
        h,
        eps,
        defect_max,
        stage_defects,
        aposteriori_local: 0.0,
        restriction_satisfied: h * defect_max <= eps * eps,
        embedded_error: None,
        rejects: 0,
        defect_target: f64::NAN,
        eps_clamped: false,
        refit_residual: refit1 + refit2,
        fp_iterations: 0,
    };
    Ok((q_new, record))
}

/// Fixed-step splitting integration from 0 to `t_end`, recording per-step
/// potential defects and free-flow re-fit residuals. With `sandwich` the
/// potential substep uses the mass-conserving sandwiched flow.
pub fn strang_integrate(
    model: &GaussianSumModel,
    q0: &DVector<C64>,
    op: &SchrodingerOp,
    eps: f64,
    h: f64,
    t_end: f64,
    tab: &RkTableau,
    sandwich: bool,
) -> Trajectory<C64> {
    let n = (t_end / h).round().max(1.0) as usize;
    let h = t_end / n as f64;
    let mut times = vec![0.0];
    let mut params = vec![q0.clone()];
    let mut records = Vec::with_capacity(n);
    let mut q = q0.clone();
    let mut defect_integral = 0.0;
    let mut final_defect = 0.0;

    for i in 0..n {
        let step = if sandwich {
            strang_step_selfadjoint(model, &q, op, eps, h, tab)
        } else {
            strang_step(model, &q, op, eps, h, tab)
        };
        match step {
            Ok((q1, mut rec)) => {
                if q1.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                    return Trajectory {
                        times,
                        params,
                        records,
                        completed: false,
                        failure: Some(format!(
                            "parameters became non-finite at t={}",
                            i as f64 * h
                        )),
                        defect_integral,
                        final_defect,
                    };
                }
                rec.t = i as f64 * h;
                let weighted: f64 = tab
                    .b
                    .iter()
                    .zip(rec.stage_defects.iter())
                    .map(|(b, d)| b * d)
                    .sum();
                defect_integral += h * weighted;
                final_defect = *rec.stage_defects.last().unwrap_or(&0.0);
                records.push(rec);
                times.push((i + 1) as f64 * h);
                params.push(q1.clone());
                q = q1;
            }
            Err(e) => {
                return Trajectory {
                    times,
                    params,
                    records,
                    completed: false,
                    failure: Some(format!("splitting step {i} failed: {e}")),
                    defect_integral,
                    final_defect,
                }
            }
        }
    }
    Trajectory {
        times,
        params,
        records,
        completed: true,
        failure: None,
        defect_integral,
        final_defect,
    }
}

#[derive(Debug, Clone)]
pub struct DoubleWellConfig {
    pub alpha2: f64,
    pub alpha4: f64,
    pub q_ell: f64,
    pub t_end: f64,
    /// Gauss-Hermite nodes per position direction.
    pub nx: usize,
    /// Gauss-Hermite nodes per momentum direction.
    pub nxi: usize,
    pub grid_scale: f64,
    /// Regularization of the initial coefficient fit.
    pub eps_init: f64,
}

impl Default for DoubleWellConfig {
    fn default() -> Self {
        DoubleWellConfig {
            alpha2: -0.125,
            alpha4: 0.015625,
            q_ell: -2.0,
            t_end: 12.0,
            nx: 6,
            nxi: 6,
            grid_scale: 1.0,
            eps_init: 1e-10,
        }
    }
}

impl DoubleWellConfig {
    /// Smaller setup for routine runs: 12 Gaussians over a shorter interval.
    pub fn desk() -> Self {
        DoubleWellConfig { nx: 4, nxi: 3, t_end: 3.0, ..DoubleWellConfig::default() }
    }
}

pub struct DoubleWell {
    pub model: GaussianSumModel,
    pub op: SchrodingerOp,
    pub q0: DVector<C64>,
    pub psi0: GaussState,
    /// Norm distance between the fitted initial state and `psi0`.
    pub fit_residual: f64,
}

/// Sets up the double-well problem: a phase-space grid of Gauss-Hermite
/// nodes centered at the left well gives the Gaussian centers, and the
/// initial coefficients solve the linear fit of the normalized ground-state
/// Gaussian.
pub fn build_double_well(cfg: &DoubleWellConfig) -> Result<DoubleWell, ModelError> {
    let op = SchrodingerOp::new(0.5, vec![0.0, 0.0, cfg.alpha2, 0.0, cfg.alpha4]);
    let xs = hermite_nodes(cfg.nx);
    let xis = hermite_nodes(cfg.nxi);
    let mut centers = Vec::with_capacity(cfg.nx * cfg.nxi);
    for &x in &xs {
        for &xi in &xis {
            let pos = cfg.q_ell + cfg.grid_scale * x;
            let mom = cfg.grid_scale * xi;
            centers.push(C64::new(-pos, -mom));
        }
    }

    let amp = std::f64::consts::PI.powf(-0.25) * (-0.5 * cfg.q_ell * cfg.q_ell).exp();
    let psi0 = GaussState::new(vec![GaussTerm::frozen(
        C64::new(amp, 0.0),
        C64::new(-cfg.q_ell, 0.0),
    )]);

    let (coef, fit_residual) = fit_frozen_coefficients(&centers, &psi0, cfg.eps_init)?;
    let model = GaussianSumModel::new(centers.len());
    let mut q0 = DVector::zeros(model.dim());
    for (m, &k) in centers.iter().enumerate() {
        q0[2 * m] = coef[m];
        q0[2 * m + 1] = k;
    }
    Ok(DoubleWell { model, op, q0, psi0, fit_residual })
}

/// Nodes of the n-point Gauss-Hermite rule (weight `exp(-x^2)`), computed as
/// eigenvalues of the Jacobi matrix.
pub fn hermite_nodes(n: usize) -> Vec<f64> {
    assert!(n > 0);
    if n == 1 {
        return vec![0.0];
    }
    let mut j = DMatrix::<f64>::zeros(n, n);
    for i in 1..n {
        let b = (i as f64 / 2.0).sqrt();
        j[(i - 1, i)] = b;
        j[(i, i - 1)] = b;
    }
    let mut eigs: Vec<f64> = SymmetricEigen::new(j).eigenvalues.iter().cloned().collect();
    eigs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    eigs
}

fn poly_eval(p: &[f64], x: f64) -> f64 {
    p.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

fn poly_derivative(p: &[f64]) -> Vec<f64> {
    if p.len() <= 1 {
        return vec![0.0];
    }
    p.iter().enumerate().skip(1).map(|(i, &c)| i as f64 * c).collect()
}
