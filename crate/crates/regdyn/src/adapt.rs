//! Adaptive choice of the regularization strength and the step size.
//!
//! The defect `delta(eps)` of the regularized least-squares problem is, as a
//! function of `alpha = eps^2`, the square root of a concave increasing
//! function whose derivative is `|qdot(eps)|_Q^2`. Newton's method on that
//! scalar equation therefore converges monotonically from below, and every
//! iteration reuses the Gram matrix assembled once per parameter point. The
//! step size balances the defect against the measured curvature of the
//! parametrization along the current direction.

use crate::integrate::{RegFlow, RkTableau, Trajectory};
use crate::model::{Jacobian, Model, ModelError};
use crate::reglsq::{solve_normal_at, GramSystem, RegLsqError};
use crate::Field;
use nalgebra::{ComplexField, DVector};

/// Which search the adaptive driver uses for the regularization parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpsSelector {
    /// Newton iteration on `alpha = eps^2`, warm-started between steps.
    Newton,
    /// Geometric bracket search multiplying or dividing by `lm_factor`.
    Lm,
}

#[derive(Debug, Clone)]
pub struct AdaptConfig {
    /// Probe regularization used to estimate the best attainable defect.
    pub eps_star: f64,
    /// Floor for the defect target.
    pub delta_min: f64,
    /// Defect target as a multiple of the probe defect.
    pub target_factor: f64,
    /// Newton iterations per step after the first.
    pub newton_iters: usize,
    /// Newton iterations on the first step, where no warm start exists.
    pub first_step_newton_iters: usize,
    /// Fallback factor when a Newton update leaves the feasible range.
    pub lm_factor: f64,
    pub eps_bounds: (f64, f64),
    pub h_bounds: (f64, f64),
    /// A step is rejected while the embedded estimate exceeds
    /// `reject_factor * h * defect`.
    pub reject_factor: f64,
    pub max_rejects: u32,
    pub max_steps: usize,
    pub selector: EpsSelector,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            eps_star: 1e-8,
            delta_min: 1e-12,
            target_factor: 17.0,
            newton_iters: 2,
            first_step_newton_iters: 10,
            lm_factor: 3.0,
            eps_bounds: (1e-8, 1.0),
            h_bounds: (1e-6, 1.0),
            reject_factor: 5.0,
            max_rejects: 10,
            max_steps: 1_000_000,
            selector: EpsSelector::Newton,
        }
    }
}

/// Regularization chosen for one parameter point.
pub struct EpsChoice<T: Field> {
    pub eps: f64,
    pub defect: f64,
    pub qdot: DVector<T>,
    /// The chosen value sits on a boundary of `eps_bounds`.
    pub clamped: bool,
}

/// Defect target at the current point: `max(target_factor * delta(eps_star),
/// delta_min)`.
pub fn delta_tol<T: Field>(gs: &GramSystem<T>, cfg: &AdaptConfig) -> Result<f64, RegLsqError> {
    let probe = solve_normal_at(gs, cfg.eps_star)?;
    Ok((cfg.target_factor * probe.defect).max(cfg.delta_min))
}

/// Largest regularization whose defect meets `delta_tol`, found by Newton in
/// `alpha = eps^2` on the shared Gram system.
pub fn choose_eps_newton<T: Field>(
    gs: &GramSystem<T>,
    target: f64,
    eps_init: f64,
    iters: usize,
    cfg: &AdaptConfig,
) -> Result<EpsChoice<T>, RegLsqError> {
    let (lo, hi) = (cfg.eps_bounds.0 * cfg.eps_bounds.0, cfg.eps_bounds.1 * cfg.eps_bounds.1);
    let lm2 = cfg.lm_factor * cfg.lm_factor;
    let mut alpha = (eps_init * eps_init).clamp(lo, hi);
    let mut last = solve_normal_at(gs, alpha.sqrt())?;

    for _ in 0..iters {
        let slope = gs.metric.norm_sq(&last.qdot);
        if slope == 0.0 {
            // The velocity vanishes at every regularization; take the
            // largest allowed smoothing.
            alpha = hi;
            last = solve_normal_at(gs, alpha.sqrt())?;
            break;
        }
        let g = last.defect * last.defect - target * target;
        let mut next = alpha - g / slope;
        if !next.is_finite() || next <= 0.0 {
            next = if g > 0.0 { alpha / lm2 } else { alpha * lm2 };
        }
        next = next.clamp(lo, hi);
        if next == alpha {
            break;
        }
        alpha = next;
        last = solve_normal_at(gs, alpha.sqrt())?;
    }
    Ok(EpsChoice {
        eps: alpha.sqrt(),
        defect: last.defect,
        qdot: last.qdot,
        clamped: alpha == lo || alpha == hi,
    })
}

/// Largest regularization whose defect meets `delta_tol`, found by a
/// geometric bracket search: grow `eps` by `lm_factor` while the defect stays
/// within the target, otherwise shrink until it does. The result satisfies
/// `delta(eps) <= target < delta(lm_factor * eps)` unless a bound was hit.
pub fn choose_eps_lm<T: Field>(
    gs: &GramSystem<T>,
    target: f64,
    eps_init: f64,
    cfg: &AdaptConfig,
) -> Result<EpsChoice<T>, RegLsqError> {
    let (lo, hi) = cfg.eps_bounds;
    let mut eps = eps_init.clamp(lo, hi);
    let mut last = solve_normal_at(gs, eps)?;
    let mut clamped = eps == lo || eps == hi;

    if last.defect <= target {
        while eps < hi {
            let cand = (cfg.lm_factor * eps).min(hi);
            let trial = solve_normal_at(gs, cand)?;
            if trial.defect <= target {
                eps = cand;
                last = trial;
                clamped = eps == hi;
            } else {
                clamped = false;
                break;
            }
        }
    } else {
        while last.defect > target && eps > lo {
            let cand = eps / cfg.lm_factor;
            eps = cand.max(lo);
            clamped = cand < lo;
            last = solve_normal_at(gs, eps)?;
        }
        if last.defect > target {
            clamped = true;
        }
    }
    Ok(EpsChoice { eps, defect: last.defect, qdot: last.qdot, clamped })
}

/// Step size balancing the defect against the curvature of the
/// parametrization along `qdot`: `h = h0 * defect / |(Phi'(q + h0 qdot) -
/// Phi'(q)) qdot|`.
pub fn choose_h<M, F>(
    flow: &RegFlow<M, F>,
    q: &DVector<M::Scalar>,
    choice: &EpsChoice<M::Scalar>,
    h0: f64,
    cfg: &AdaptConfig,
) -> Result<f64, ModelError>
where
    M: Model,
    F: Fn(&M::State) -> M::State,
{
    use crate::model::StateVec;
    let jac = flow.model.jacobian(q)?;
    let mut probe = q.clone();
    probe.axpy(M::Scalar::from_real(h0), &choice.qdot, M::Scalar::from_real(1.0));
    let jac_probe = match flow.model.jacobian(&probe) {
        Ok(j) => j,
        Err(_) => return Ok(cfg.h_bounds.0),
    };
    let mut diff = jac_probe.apply(&choice.qdot);
    diff.add_scaled(M::Scalar::from_real(-1.0), &jac.apply(&choice.qdot));
    let curvature = flow.model.norm(&diff);
    if curvature < 1e-30 * choice.defect.max(1e-300) {
        return Ok(cfg.h_bounds.1);
    }
    Ok((h0 * choice.defect / curvature).clamp(cfg.h_bounds.0, cfg.h_bounds.1))
}

/// Adaptive integration: per accepted step the regularization is re-targeted
/// with a warm-started Newton iteration and the step size follows the
/// defect-curvature balance; steps whose embedded error estimate exceeds
/// `reject_factor * h * defect` are halved and retried.
pub fn integrate_adaptive<M, F>(
    flow: &RegFlow<M, F>,
    tab: &RkTableau,
    q0: &DVector<M::Scalar>,
    t0: f64,
    t_end: f64,
    cfg: &AdaptConfig,
) -> Trajectory<M::Scalar>
where
    M: Model,
    F: Fn(&M::State) -> M::State,
{
    assert!(tab.bhat.is_some(), "adaptive driver needs an embedded tableau");
    assert!(t_end > t0);

    let fail = |times: Vec<f64>, params: Vec<DVector<M::Scalar>>, records, msg: String| Trajectory {
        times,
        params,
        records,
        completed: false,
        failure: Some(msg),
        defect_integral: f64::NAN,
        final_defect: f64::NAN,
    };

    let mut times = vec![t0];
    let mut params = vec![q0.clone()];
    let mut records = Vec::new();
    let mut defect_integral = 0.0;

    // First point: cold-started regularization and step size.
    let (mut eps, mut h, mut defect_prev, mut target_prev, mut clamped_prev);
    match setup_point(flow, q0, None, cfg.first_step_newton_iters, cfg) {
        Ok((choice, h_new, target)) => {
            eps = choice.eps;
            h = h_new;
            defect_prev = choice.defect;
            target_prev = target;
            clamped_prev = choice.clamped;
        }
        Err(e) => return fail(times, params, records, format!("initial adaptation failed: {e}")),
    }

    let mut t = t0;
    let mut q = q0.clone();
    let mut steps = 0usize;

    while t < t_end - 1e-14 * (t_end - t0) {
        steps += 1;
        if steps > cfg.max_steps {
            return fail(times, params, records, format!("exceeded {} steps", cfg.max_steps));
        }
        let h_try = h.min(t_end - t);
        let mut rejects = 0u32;
        let mut h_cur = h_try;
        let (q1, mut rec) = loop {
            match flow.rk_step(tab, t, &q, h_cur, eps) {
                Ok((q1, rec)) => {
                    let est = rec.embedded_error.unwrap_or(0.0);
                    let bad = !est.is_finite()
                        || est > cfg.reject_factor * h_cur * rec.defect_max.max(cfg.delta_min);
                    if bad && rejects < cfg.max_rejects && h_cur > cfg.h_bounds.0 {
                        rejects += 1;
                        h_cur = (0.5 * h_cur).max(cfg.h_bounds.0);
                        continue;
                    }
                    break (q1, rec);
                }
                Err(e) => {
                    return fail(times, params, records, format!("step at t={t} failed: {e}"));
                }
            }
        };
        rec.rejects = rejects;
        rec.defect_target = target_prev;
        rec.eps_clamped = clamped_prev;
        if q1.iter().any(|x| !(x.real().is_finite() && x.imaginary().is_finite())) {
            return fail(times, params, records, format!("parameters became non-finite at t={t}"));
        }

        t += h_cur;
        times.push(t);
        params.push(q1.clone());

        // Re-target regularization and step size at the new point.
        match setup_point(flow, &q1, Some(eps), cfg.newton_iters, cfg) {
            Ok((choice, h_new, target)) => {
                defect_integral += 0.5 * (defect_prev + choice.defect) * h_cur;
                defect_prev = choice.defect;
                target_prev = target;
                clamped_prev = choice.clamped;
                eps = choice.eps;
                h = h_new;
                records.push(rec);
                q = q1;
            }
            Err(e) => {
                records.push(rec);
                return fail(times, params, records, format!("adaptation at t={t} failed: {e}"));
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
        final_defect: defect_prev,
    }
}

fn setup_point<M, F>(
    flow: &RegFlow<M, F>,
    q: &DVector<M::Scalar>,
    warm_eps: Option<f64>,
    iters: usize,
    cfg: &AdaptConfig,
) -> Result<(EpsChoice<M::Scalar>, f64, f64), ModelError>
where
    M: Model,
    F: Fn(&M::State) -> M::State,
{
    let (gs, _jac) = flow.assemble(q, cfg.eps_star)?;
    let target = delta_tol(&gs, cfg)?;
    let eps_init = warm_eps.unwrap_or(cfg.eps_star);
    let choice = match cfg.selector {
        EpsSelector::Newton => choose_eps_newton(&gs, target, eps_init, iters, cfg)?,
        EpsSelector::Lm => choose_eps_lm(&gs, target, eps_init, cfg)?,
    };
    let h0 = cfg.h_bounds.0.max(1e-4);
    let h = choose_h(flow, q, &choice, h0, cfg)?;
    Ok((choice, h, target))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrate::RegFlow;
    use crate::model::{LinearModel, Model, SampleSpace, ScalarQuadratic};
    use approx::assert_relative_eq;

    fn scalar_flow(m: &ScalarQuadratic) -> RegFlow<'_, ScalarQuadratic, impl Fn(&DVector<f64>) -> DVector<f64>> {
        RegFlow::new(m, |u: &DVector<f64>| u.map(|_| 1.0))
    }

    #[test]
    fn newton_hits_the_defect_target_on_the_scalar_model() {
        // delta(eps) = eps / sqrt(q^2 + eps^2) at q = 1, so the exact answer
        // for target d is eps = q d / sqrt(1 - d^2).
        let m = ScalarQuadratic::new();
        let flow = scalar_flow(&m);
        let q = DVector::from_element(1, 1.0);
        let (gs, _) = flow.assemble(&q, 1e-8).unwrap();
        let cfg = AdaptConfig::default();
        let target = 0.05;
        let choice = choose_eps_newton(&gs, target, 1e-6, 12, &cfg).unwrap();
        let exact = target / (1.0 - target * target).sqrt();
        assert_relative_eq!(choice.eps, exact, max_relative = 1e-6);
        assert_relative_eq!(choice.defect, target, max_relative = 1e-6);
    }

    #[test]
    fn newton_converges_from_above_as_well() {
        let m = ScalarQuadratic::new();
        let flow = scalar_flow(&m);
        let q = DVector::from_element(1, 1.0);
        let (gs, _) = flow.assemble(&q, 1e-8).unwrap();
        let cfg = AdaptConfig::default();
        let target = 0.01;
        let choice = choose_eps_newton(&gs, target, 0.5, 20, &cfg).unwrap();
        assert_relative_eq!(choice.defect, target, max_relative = 1e-5);
    }

    #[test]
    fn defect_target_combines_probe_and_floor() {
        let m = ScalarQuadratic::new();
        let flow = scalar_flow(&m);
        let q = DVector::from_element(1, 1.0);
        let cfg = AdaptConfig::default();
        let (gs, _) = flow.assemble(&q, cfg.eps_star).unwrap();
        // Probe defect is about eps_star here, so the probe term wins.
        let target = delta_tol(&gs, &cfg).unwrap();
        let probe = cfg.eps_star / (1.0 + cfg.eps_star.powi(2)).sqrt();
        assert_relative_eq!(target, 17.0 * probe, max_relative = 1e-6);

        // A large floor takes over when the probe defect is tiny.
        let cfg_floor = AdaptConfig { delta_min: 1e-3, ..cfg };
        let target = delta_tol(&gs, &cfg_floor).unwrap();
        assert_eq!(target, 1e-3);
    }

    #[test]
    fn zero_velocity_selects_maximal_smoothing() {
        let m = ScalarQuadratic::new();
        let mflow = RegFlow::new(&m, |u: &DVector<f64>| u.map(|_| 0.0));
        let q = DVector::from_element(1, 1.0);
        let (gs, _) = mflow.assemble(&q, 1e-8).unwrap();
        let cfg = AdaptConfig::default();
        let choice = choose_eps_newton(&gs, 1e-6, 1e-4, 5, &cfg).unwrap();
        assert_eq!(choice.eps, cfg.eps_bounds.1);
        assert_eq!(choice.qdot.norm(), 0.0);
    }

    #[test]
    fn lm_search_brackets_the_target() {
        // delta(eps) = eps / sqrt(1 + eps^2) at q = 1 is strictly increasing,
        // so the bracket delta(eps) <= target < delta(3 eps) must hold.
        let m = ScalarQuadratic::new();
        let flow = scalar_flow(&m);
        let q = DVector::from_element(1, 1.0);
        let (gs, _) = flow.assemble(&q, 1e-8).unwrap();
        let cfg = AdaptConfig::default();
        let target = 0.05;
        for eps_init in [1e-7, 1e-3, 0.4] {
            let choice = choose_eps_lm(&gs, target, eps_init, &cfg).unwrap();
            assert!(!choice.clamped);
            assert!(choice.defect <= target);
            let above = solve_normal_at(&gs, cfg.lm_factor * choice.eps).unwrap();
            assert!(above.defect > target, "init {eps_init}: no bracket");
        }
    }

    #[test]
    fn lm_search_reports_bound_clamps() {
        let m = ScalarQuadratic::new();
        let flow = scalar_flow(&m);
        let q = DVector::from_element(1, 1.0);
        let (gs, _) = flow.assemble(&q, 1e-8).unwrap();
        let cfg = AdaptConfig::default();

        // Unreachable from above: every eps in bounds satisfies the target.
        let choice = choose_eps_lm(&gs, 2.0, 1e-2, &cfg).unwrap();
        assert_eq!(choice.eps, cfg.eps_bounds.1);
        assert!(choice.clamped);

        // Unreachable from below: no eps in bounds gets that small.
        let choice = choose_eps_lm(&gs, 1e-12, 1e-2, &cfg).unwrap();
        assert_eq!(choice.eps, cfg.eps_bounds.0);
        assert!(choice.clamped);
    }

    #[test]
    fn lm_driver_run_keeps_the_bracket_at_every_step() {
        let m = ScalarQuadratic::new();
        let flow = scalar_flow(&m);
        let q0 = DVector::from_element(1, 1.0);
        let cfg = AdaptConfig {
            delta_min: 1e-3,
            selector: EpsSelector::Lm,
            ..AdaptConfig::default()
        };
        let tr = integrate_adaptive(&flow, &RkTableau::rk4_embedded(), &q0, 0.0, 0.5, &cfg);
        assert!(tr.completed, "failure: {:?}", tr.failure);
        for (rec, q) in tr.records.iter().zip(tr.params.iter()) {
            if rec.eps_clamped {
                continue;
            }
            let (gs, _) = flow.assemble(q, cfg.eps_star).unwrap();
            let here = solve_normal_at(&gs, rec.eps).unwrap();
            let above = solve_normal_at(&gs, cfg.lm_factor * rec.eps).unwrap();
            assert!(here.defect <= rec.defect_target + 1e-15);
            assert!(above.defect > rec.defect_target);
        }
    }

    #[test]
    fn step_size_matches_the_scalar_curvature_formula() {
        // Phi'(q) = q, so the probe difference is h0 * qdot^2 and the
        // formula collapses to defect / qdot^2.
        let m = ScalarQuadratic::new();
        let flow = scalar_flow(&m);
        let q = DVector::from_element(1, 1.0);
        let eps = 0.1;
        let (gs, _) = flow.assemble(&q, eps).unwrap();
        let r = solve_normal_at(&gs, eps).unwrap();
        let choice = EpsChoice { eps, defect: r.defect, qdot: r.qdot.clone(), clamped: false };
        let cfg = AdaptConfig::default();
        let h = choose_h(&flow, &q, &choice, 1e-4, &cfg).unwrap();
        let expect = r.defect / (r.qdot[0] * r.qdot[0]);
        assert_relative_eq!(h, expect.clamp(1e-6, 1.0), max_relative = 1e-9);
    }

    #[test]
    fn flat_directions_give_the_largest_step() {
        // An identity parametrization has no curvature at all.
        let space = SampleSpace::single_point(1);
        let m = LinearModel::identity(space);
        let flow = RegFlow::new(&m, |u: &DVector<f64>| u.clone());
        let q = DVector::from_element(1, 1.0);
        let eps = 1e-2;
        let (gs, _) = flow.assemble(&q, eps).unwrap();
        let r = solve_normal_at(&gs, eps).unwrap();
        let choice = EpsChoice { eps, defect: r.defect, qdot: r.qdot, clamped: false };
        let cfg = AdaptConfig::default();
        let h = choose_h(&flow, &q, &choice, 1e-4, &cfg).unwrap();
        assert_eq!(h, cfg.h_bounds.1);
    }

    #[test]
    fn adaptive_driver_completes_and_respects_bounds() {
        let m = ScalarQuadratic::new();
        let flow = scalar_flow(&m);
        let q0 = DVector::from_element(1, 1.0);
        let cfg = AdaptConfig { delta_min: 1e-3, ..AdaptConfig::default() };
        let tr = integrate_adaptive(&flow, &RkTableau::rk4_embedded(), &q0, 0.0, 1.0, &cfg);
        assert!(tr.completed, "failure: {:?}", tr.failure);
        assert_relative_eq!(tr.final_time(), 1.0, epsilon = 1e-12);
        for r in &tr.records {
            assert!(r.eps >= cfg.eps_bounds.0 && r.eps <= cfg.eps_bounds.1);
            assert!(r.h >= cfg.h_bounds.0 && r.h <= cfg.h_bounds.1 + 1e-15);
        }
        // The exact flow of qdot = 1/q reaches sqrt(3); the regularized one
        // with small defects lands nearby.
        assert_relative_eq!(tr.final_params()[0], 3.0_f64.sqrt(), max_relative = 1e-2);
        assert!(tr.defect_integral > 0.0 && tr.defect_integral < 2e-3);
    }

    #[test]
    fn impossible_reject_threshold_is_capped() {
        let m = ScalarQuadratic::new();
        let flow = scalar_flow(&m);
        let q0 = DVector::from_element(1, 1.0);
        let cfg = AdaptConfig {
            reject_factor: 1e-12,
            delta_min: 1e-3,
            max_steps: 20_000,
            ..AdaptConfig::default()
        };
        let tr = integrate_adaptive(&flow, &RkTableau::rk4_embedded(), &q0, 0.0, 0.01, &cfg);
        assert!(tr.completed, "failure: {:?}", tr.failure);
        assert!(tr.records.iter().any(|r| r.rejects > 0));
    }

    #[test]
    fn defect_stays_near_target_along_the_trajectory() {
        let m = ScalarQuadratic::new();
        let flow = scalar_flow(&m);
        let q0 = DVector::from_element(1, 1.0);
        let cfg = AdaptConfig { delta_min: 1e-3, ..AdaptConfig::default() };
        let tr = integrate_adaptive(&flow, &RkTableau::rk4_embedded(), &q0, 0.0, 0.5, &cfg);
        assert!(tr.completed);
        for r in &tr.records {
            // Newton targets delta_min here (probe defect is ~eps_star).
            assert!(
                r.defect_max < 20.0 * cfg.delta_min,
                "defect {} drifted from target {}",
                r.defect_max,
                cfg.delta_min
            );
        }
    }
}
