//! Regularized linear least squares in a Hilbert space.
//!
//! The central problem: given a linear map `A: Q -> H` (columns of a Jacobian,
//! basis functions, ...), data `b` in H and a regularization parameter
//! `eps > 0`, minimize
//!
//! ```text
//!   |A x - b|_H^2 + eps^2 |x|_Q^2
//! ```
//!
//! The minimizer solves the normal equations `(A*A + eps^2 Q) x = A* b`.
//! H may be infinite dimensional; the solver only needs the Gram matrix
//! `A*A`, the right-hand side `A* b` and `|b|_H^2`, which is what
//! [`GramSystem`] carries. When `A` is available as an ordinary matrix the
//! dense entry points ([`solve_dense`], [`solve_svd`], [`solve_truncated`])
//! recompute the residual directly instead of through the quadratic form.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::Field;

/// Errors from the least-squares solvers.
#[derive(Debug, Clone, thiserror::Error)]
pub enum RegLsqError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("regularization parameter must satisfy {need}, got {got:e}")]
    BadEps { need: &'static str, got: f64 },
    #[error("metric is not Hermitian positive definite (eigenvalue {0:e})")]
    IndefiniteMetric(f64),
    #[error(
        "normal matrix could not be factorized and the spectral fallback found no positive \
         eigenvalues; the Gram matrix is badly corrupted"
    )]
    FactorizationFailed,
    #[error(
        "defect^2 = {value:e} is negative beyond roundoff (breakdown threshold {threshold:e}); \
         the Gram system is inconsistent"
    )]
    NegativeDefect { value: f64, threshold: f64 },
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
}

/// Inner-product metric on the parameter space Q.
///
/// `Identity` is the Euclidean metric. `Dense` holds a Hermitian positive
/// definite matrix; `|x|_Q^2 = x^* Q x`.
#[derive(Debug, Clone)]
pub enum MetricQ<T: Field> {
    Identity,
    Dense(DMatrix<T>),
}

impl<T: Field> MetricQ<T> {
    /// `Q x`.
    pub fn apply(&self, x: &DVector<T>) -> DVector<T> {
        match self {
            MetricQ::Identity => x.clone(),
            MetricQ::Dense(q) => q * x,
        }
    }

    /// `x^* Q x`, clamped to be nonnegative.
    pub fn norm_sq(&self, x: &DVector<T>) -> f64 {
        let v = match self {
            MetricQ::Identity => x.dotc(x).real(),
            MetricQ::Dense(q) => x.dotc(&(q * x)).real(),
        };
        v.max(0.0)
    }

    /// Adds `eps^2 Q` onto `m` in place.
    pub fn add_scaled_to(&self, m: &mut DMatrix<T>, eps_sq: f64) {
        let s = T::from_real(eps_sq);
        match self {
            MetricQ::Identity => {
                for i in 0..m.nrows() {
                    m[(i, i)] += s;
                }
            }
            MetricQ::Dense(q) => {
                *m += q * s;
            }
        }
    }

    /// `(Q^{1/2}, Q^{-1/2})` through a Hermitian eigendecomposition.
    ///
    /// Used to reduce the weighted problem to a Euclidean one inside the SVD
    /// solver. Errors if Q is not positive definite.
    pub fn sqrt_pair(&self, dim: usize) -> Result<(DMatrix<T>, DMatrix<T>), RegLsqError> {
        match self {
            MetricQ::Identity => Ok((DMatrix::identity(dim, dim), DMatrix::identity(dim, dim))),
            MetricQ::Dense(q) => {
                if q.nrows() != dim || q.ncols() != dim {
                    return Err(RegLsqError::DimensionMismatch(format!(
                        "metric is {}x{}, parameter dimension is {dim}",
                        q.nrows(),
                        q.ncols()
                    )));
                }
                let eig = SymmetricEigen::new(q.clone());
                let min = eig.eigenvalues.min();
                if !(min > 0.0) {
                    return Err(RegLsqError::IndefiniteMetric(min));
                }
                let u = &eig.eigenvectors;
                let mut sqrt = DMatrix::zeros(dim, dim);
                let mut inv_sqrt = DMatrix::zeros(dim, dim);
                for j in 0..dim {
                    let l = eig.eigenvalues[j].sqrt();
                    let col = u.column(j);
                    for r in 0..dim {
                        sqrt[(r, j)] = col[r] * T::from_real(l);
                        inv_sqrt[(r, j)] = col[r] * T::from_real(1.0 / l);
                    }
                }
                let uh = u.adjoint();
                Ok((&sqrt * &uh, &inv_sqrt * &uh))
            }
        }
    }
}

/// Normal-equation data for one regularized solve.
///
/// `gram = A*A` (Hermitian PSD in exact arithmetic), `rhs = A* b`, and
/// `b_norm_sq = |b|_H^2` so the defect can be evaluated without access to H.
#[derive(Debug, Clone)]
pub struct GramSystem<T: Field> {
    pub gram: DMatrix<T>,
    pub rhs: DVector<T>,
    pub eps: f64,
    pub metric: MetricQ<T>,
    pub b_norm_sq: f64,
}

/// Result of a regularized least-squares solve.
///
/// `defect^2 = residual_norm^2 + reg_norm^2` holds by construction, with
/// `residual_norm = |A qdot - b|_H` and `reg_norm = eps |qdot|_Q`.
#[derive(Debug, Clone)]
pub struct RegLsqResult<T: Field> {
    pub qdot: DVector<T>,
    pub defect: f64,
    pub residual_norm: f64,
    pub reg_norm: f64,
    pub eps: f64,
}

/// Relative threshold below which a negative computed defect^2 is treated as
/// breakdown rather than roundoff.
const DEFECT_BREAKDOWN_REL: f64 = 1e-12;

/// Solves the normal equations of `gs` at its stored epsilon.
pub fn solve_normal<T: Field>(gs: &GramSystem<T>) -> Result<RegLsqResult<T>, RegLsqError> {
    solve_normal_at(gs, gs.eps)
}

/// Solves the normal equations of `gs` at a caller-supplied epsilon.
///
/// The Gram matrix and right-hand side are reused as-is, so sweeping epsilon
/// over a fixed system costs one k x k factorization per value. Tries a
/// Cholesky factorization of `M = gram + eps^2 Q` first and falls back to a
/// Hermitian eigendecomposition with clamped eigenvalues if that fails.
pub fn solve_normal_at<T: Field>(
    gs: &GramSystem<T>,
    eps: f64,
) -> Result<RegLsqResult<T>, RegLsqError> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(RegLsqError::BadEps {
            need: "eps > 0",
            got: eps,
        });
    }
    let k = gs.gram.nrows();
    if gs.gram.ncols() != k || gs.rhs.len() != k {
        return Err(RegLsqError::DimensionMismatch(format!(
            "gram is {}x{}, rhs has length {}",
            gs.gram.nrows(),
            gs.gram.ncols(),
            gs.rhs.len()
        )));
    }
    if !gs.b_norm_sq.is_finite() || gs.b_norm_sq < 0.0 {
        return Err(RegLsqError::NonFinite("b_norm_sq"));
    }

    let mut m = gs.gram.clone();
    gs.metric.add_scaled_to(&mut m, eps * eps);
    let qdot = match m.clone().cholesky() {
        Some(chol) => chol.solve(&gs.rhs),
        None => spectral_solve(&m, &gs.rhs)?,
    };
    if qdot.iter().any(|c| !c.is_finite()) {
        return Err(RegLsqError::NonFinite("solution"));
    }
    finish_from_quadform(gs, eps, qdot)
}

/// Defect bookkeeping for a solution obtained from Gram data only.
fn finish_from_quadform<T: Field>(
    gs: &GramSystem<T>,
    eps: f64,
    qdot: DVector<T>,
) -> Result<RegLsqResult<T>, RegLsqError> {
    let quad = qdot.dotc(&(&gs.gram * &qdot)).real();
    let cross = 2.0 * qdot.dotc(&gs.rhs).real();
    let reg_sq = eps * eps * gs.metric.norm_sq(&qdot);
    let defect_sq = gs.b_norm_sq - cross + quad + reg_sq;
    let threshold = -DEFECT_BREAKDOWN_REL * gs.b_norm_sq;
    if defect_sq < threshold {
        return Err(RegLsqError::NegativeDefect {
            value: defect_sq,
            threshold,
        });
    }
    let residual_sq = (defect_sq - reg_sq).max(0.0);
    let residual_norm = residual_sq.sqrt();
    let reg_norm = reg_sq.sqrt();
    Ok(RegLsqResult {
        qdot,
        defect: residual_norm.hypot(reg_norm),
        residual_norm,
        reg_norm,
        eps,
    })
}

/// Eigenvalue-based solve of the Hermitian system `m x = rhs`.
///
/// Eigenvalues below `max_eig * 1e-14` are clamped up; exactly the kind of
/// safety net needed when the Gram matrix carries roundoff-scale negative
/// eigenvalues that break Cholesky.
fn spectral_solve<T: Field>(
    m: &DMatrix<T>,
    rhs: &DVector<T>,
) -> Result<DVector<T>, RegLsqError> {
    let eig = SymmetricEigen::new(m.clone());
    let max = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    if !(max > 0.0) {
        return Err(RegLsqError::FactorizationFailed);
    }
    let floor = max * 1e-14;
    let u = &eig.eigenvectors;
    let mut y = u.ad_mul(rhs);
    for (i, c) in y.iter_mut().enumerate() {
        *c *= T::from_real(1.0 / eig.eigenvalues[i].max(floor));
    }
    Ok(u * y)
}

/// Builds the Gram system for a dense `A` with H = Euclidean coordinate space.
pub fn gram_system_dense<T: Field>(
    a: &DMatrix<T>,
    b: &DVector<T>,
    eps: f64,
    metric: MetricQ<T>,
) -> Result<GramSystem<T>, RegLsqError> {
    if a.nrows() != b.len() {
        return Err(RegLsqError::DimensionMismatch(format!(
            "A is {}x{}, b has length {}",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    Ok(GramSystem {
        gram: a.ad_mul(a),
        rhs: a.ad_mul(b),
        eps,
        metric,
        b_norm_sq: b.dotc(b).real(),
    })
}

/// Normal-equation solve for a dense `A`, with the residual recomputed from
/// `A qdot - b` rather than through the quadratic form.
pub fn solve_dense<T: Field>(
    a: &DMatrix<T>,
    b: &DVector<T>,
    eps: f64,
    metric: &MetricQ<T>,
) -> Result<RegLsqResult<T>, RegLsqError> {
    let gs = gram_system_dense(a, b, eps, metric.clone())?;
    let sol = solve_normal(&gs)?;
    Ok(finish_dense(a, b, eps, metric, sol.qdot))
}

fn finish_dense<T: Field>(
    a: &DMatrix<T>,
    b: &DVector<T>,
    eps: f64,
    metric: &MetricQ<T>,
    qdot: DVector<T>,
) -> RegLsqResult<T> {
    let r = a * &qdot - b;
    let residual_norm = r.dotc(&r).real().max(0.0).sqrt();
    let reg_norm = eps * metric.norm_sq(&qdot).sqrt();
    RegLsqResult {
        qdot,
        defect: residual_norm.hypot(reg_norm),
        residual_norm,
        reg_norm,
        eps,
    }
}

/// Regularized solve through the singular value decomposition:
///
/// ```text
///   x = sum_i  sigma_i / (sigma_i^2 + eps^2) <u_i, b> v_i
/// ```
///
/// applied to `A Q^{-1/2}` and mapped back, so a non-Euclidean metric is
/// handled by substitution. Valid for `eps >= 0` (at zero this is the
/// pseudoinverse). Serves as the independent cross-check for
/// [`solve_normal`].
pub fn solve_svd<T: Field>(
    a: &DMatrix<T>,
    b: &DVector<T>,
    eps: f64,
    metric: &MetricQ<T>,
) -> Result<RegLsqResult<T>, RegLsqError> {
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(RegLsqError::BadEps {
            need: "eps >= 0",
            got: eps,
        });
    }
    if a.nrows() != b.len() {
        return Err(RegLsqError::DimensionMismatch(format!(
            "A is {}x{}, b has length {}",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    let k = a.ncols();
    let (_, inv_sqrt) = metric.sqrt_pair(k)?;
    let at = match metric {
        MetricQ::Identity => a.clone(),
        MetricQ::Dense(_) => a * &inv_sqrt,
    };
    let z = svd_filtered(&at, b, |s| s / (s * s + eps * eps))?;
    let qdot = match metric {
        MetricQ::Identity => z,
        MetricQ::Dense(_) => &inv_sqrt * z,
    };
    Ok(finish_dense(a, b, eps, metric, qdot))
}

/// Truncated-SVD alternative: singular values below `eps` are discarded,
/// the rest inverted exactly. Euclidean metric.
pub fn solve_truncated<T: Field>(
    a: &DMatrix<T>,
    b: &DVector<T>,
    eps: f64,
) -> Result<RegLsqResult<T>, RegLsqError> {
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(RegLsqError::BadEps {
            need: "eps >= 0",
            got: eps,
        });
    }
    if a.nrows() != b.len() {
        return Err(RegLsqError::DimensionMismatch(format!(
            "A is {}x{}, b has length {}",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    let qdot = svd_filtered(a, b, |s| if s >= eps { 1.0 / s } else { 0.0 })?;
    Ok(finish_dense(a, b, eps, &MetricQ::Identity, qdot))
}

/// `V f(Sigma) U^* b` for a scalar filter `f` of the singular values.
fn svd_filtered<T: Field>(
    a: &DMatrix<T>,
    b: &DVector<T>,
    filter: impl Fn(f64) -> f64,
) -> Result<DVector<T>, RegLsqError> {
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().ok_or(RegLsqError::FactorizationFailed)?;
    let v_t = svd.v_t.as_ref().ok_or(RegLsqError::FactorizationFailed)?;
    let mut y = u.ad_mul(b);
    for (i, c) in y.iter_mut().enumerate() {
        let s = svd.singular_values[i];
        if !s.is_finite() {
            return Err(RegLsqError::NonFinite("singular values"));
        }
        *c *= T::from_real(filter(s));
    }
    Ok(v_t.ad_mul(&y))
}

/// Value and derivative of `theta(alpha) = min_x |A x - b|^2 + alpha |x|^2`.
///
/// The derivative is `theta'(alpha) = |x(alpha)|^2` with `x(alpha)` the
/// minimizer; it is what makes a Newton iteration in `alpha = eps^2` cheap,
/// since no extra solve is needed. `theta` is concave and increasing, and
/// `theta(alpha)/alpha` is nonincreasing.
pub fn theta_and_derivative<T: Field>(
    a: &DMatrix<T>,
    b: &DVector<T>,
    alpha: f64,
) -> Result<(f64, f64), RegLsqError> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(RegLsqError::BadEps {
            need: "alpha > 0",
            got: alpha,
        });
    }
    let sol = solve_dense(a, b, alpha.sqrt(), &MetricQ::Identity)?;
    let x_sq = sol.qdot.dotc(&sol.qdot).real();
    Ok((sol.defect * sol.defect, x_sq))
}

/// Spectral norms of the three regularized-inverse operators together with
/// their a priori bounds.
///
/// The primary norms come from the singular values of `A`: with `A = U S V*`
/// every one of the three operators is diagonalized by the same bases, so its
/// spectral norm is the maximum of a scalar transfer function of sigma. That
/// route is numerically stable, which is what allows the bounds to be
/// asserted at ulp accuracy. The `direct_*` values form the same operators
/// explicitly (Cholesky inverse and matrix products) and are only expected to
/// agree up to an `eps`-conditioning-limited tolerance.
#[derive(Debug, Clone)]
pub struct OperatorNormReport {
    /// `|A M^{-1} A*|`, bounded by 1 (quasi-projection contraction).
    pub norm_projection: f64,
    /// `|A M^{-1}|`, bounded by `1/(2 eps)`; attained when a singular value
    /// equals eps.
    pub norm_a_minv: f64,
    /// `|M^{-1}|`, bounded by `1/eps^2`.
    pub norm_minv: f64,
    pub bound_projection: f64,
    pub bound_a_minv: f64,
    pub bound_minv: f64,
    /// True when every norm is within its bound up to 8 ulps.
    pub within_bounds: bool,
    pub direct_projection: f64,
    pub direct_a_minv: f64,
    pub direct_minv: f64,
    /// Worst relative deviation between the two routes.
    pub route_disagreement: f64,
}

/// Computes `|A M^{-1} A*|`, `|A M^{-1}|`, `|M^{-1}|` for `M = A*A + eps^2 I`
/// and compares against the closed bounds `1`, `1/(2 eps)`, `1/eps^2`.
pub fn operator_norm_checks<T: Field>(
    a: &DMatrix<T>,
    eps: f64,
) -> Result<OperatorNormReport, RegLsqError> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(RegLsqError::BadEps {
            need: "eps > 0",
            got: eps,
        });
    }
    let e2 = eps * eps;
    let singular = a.clone().svd(false, false).singular_values;
    // k can exceed m, in which case M has eigenvalue eps^2 on the missing
    // directions; a zero sigma covers that case in all three formulas.
    let mut sigmas: Vec<f64> = singular.iter().cloned().collect();
    if a.ncols() > a.nrows() || sigmas.is_empty() {
        sigmas.push(0.0);
    }
    let mut norm_projection = 0.0_f64;
    let mut norm_a_minv = 0.0_f64;
    let mut min_m_eig = f64::INFINITY;
    for &s in &sigmas {
        if !s.is_finite() {
            return Err(RegLsqError::NonFinite("singular values"));
        }
        norm_projection = norm_projection.max(s * s / (s * s + e2));
        norm_a_minv = norm_a_minv.max(s / (s * s + e2));
        min_m_eig = min_m_eig.min(s * s + e2);
    }
    let norm_minv = 1.0 / min_m_eig;

    let mut m = a.ad_mul(a);
    MetricQ::<T>::Identity.add_scaled_to(&mut m, e2);
    let minv = match m.clone().cholesky() {
        Some(c) => c.inverse(),
        None => return Err(RegLsqError::FactorizationFailed),
    };
    let a_minv = a * &minv;
    let direct_projection = spectral_norm(&(&a_minv * &a.adjoint()));
    let direct_a_minv = spectral_norm(&a_minv);
    let direct_minv = spectral_norm(&minv);
    let rel = |x: f64, y: f64| (x - y).abs() / x.abs().max(y.abs()).max(f64::MIN_POSITIVE);
    let route_disagreement = rel(norm_projection, direct_projection)
        .max(rel(norm_a_minv, direct_a_minv))
        .max(rel(norm_minv, direct_minv));

    let ulps = 1.0 + 8.0 * f64::EPSILON;
    let bound_projection = 1.0;
    let bound_a_minv = 0.5 / eps;
    let bound_minv = 1.0 / e2;
    let within = norm_projection <= bound_projection * ulps
        && norm_a_minv <= bound_a_minv * ulps
        && norm_minv <= bound_minv * ulps;
    Ok(OperatorNormReport {
        norm_projection,
        norm_a_minv,
        norm_minv,
        bound_projection,
        bound_a_minv,
        bound_minv,
        within_bounds: within,
        direct_projection,
        direct_a_minv,
        direct_minv,
        route_disagreement,
    })
}

/// Largest singular value.
fn spectral_norm<T: Field>(m: &DMatrix<T>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .cloned()
        .fold(0.0_f64, f64::max)
}
