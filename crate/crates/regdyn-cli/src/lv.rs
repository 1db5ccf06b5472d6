//! Predator-prey flow-map benchmark.
//!
//! The state is a map `u: D -> R^2` on the square `D`, discretized at
//! quadrature nodes. The flow-map ODE applies the predator-prey vector field
//! pointwise to the current values, starting from the identity map, which is
//! itself only available as a fitted network, so reference solutions start
//! from the achieved initial values rather than the exact identity.

use nalgebra::DVector;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use regdyn::integrate::{RegFlow, RkTableau, Trajectory};
use regdyn::model::{Model, ModelError, SampleSpace};

#[derive(Debug, Clone)]
pub struct LvProblem {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub lo: f64,
    pub hi: f64,
    /// Quadrature subintervals per direction (4 Gauss nodes each).
    pub panels: usize,
}

impl Default for LvProblem {
    fn default() -> Self {
        LvProblem {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            delta: 1.0,
            lo: 0.5,
            hi: 2.5,
            panels: 10,
        }
    }
}

impl LvProblem {
    pub fn space(&self) -> SampleSpace {
        SampleSpace::gauss_legendre_square(self.lo, self.hi, self.panels, 2)
    }

    /// The vector field at one phase-space point.
    pub fn field(&self, x: f64, y: f64) -> [f64; 2] {
        [
            self.alpha * x - self.beta * x * y,
            self.delta * x * y - self.gamma * y,
        ]
    }

    /// Right-hand side of the flow-map ODE: the field applied to the values
    /// of `u` at every node.
    pub fn rhs(&self, space: &SampleSpace, u: &DVector<f64>) -> DVector<f64> {
        space.map_nodes(u, |_p, vals, out| {
            let f = self.field(vals[0], vals[1]);
            out[0] = f[0];
            out[1] = f[1];
        })
    }

    /// Node-wise reference values at time `t`: each node's 2-D system is
    /// integrated with classical RK4 at a step count high enough for
    /// discretization error far below the tolerances of interest.
    pub fn oracle(
        &self,
        space: &SampleSpace,
        u0: &DVector<f64>,
        t: f64,
        n_steps: usize,
    ) -> DVector<f64> {
        let h = t / n_steps as f64;
        let mut out = DVector::zeros(u0.len());
        for i in 0..space.n_nodes() {
            let mut v = [u0[2 * i], u0[2 * i + 1]];
            for _ in 0..n_steps {
                let k1 = self.field(v[0], v[1]);
                let k2 = self.field(v[0] + 0.5 * h * k1[0], v[1] + 0.5 * h * k1[1]);
                let k3 = self.field(v[0] + 0.5 * h * k2[0], v[1] + 0.5 * h * k2[1]);
                let k4 = self.field(v[0] + h * k3[0], v[1] + h * k3[1]);
                v[0] += h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]);
                v[1] += h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]);
            }
            out[2 * i] = v[0];
            out[2 * i + 1] = v[1];
        }
        out
    }

    /// Flat vector of node coordinates, the identity map's values.
    pub fn identity_values(&self, space: &SampleSpace) -> DVector<f64> {
        let mut out = DVector::zeros(space.flat_dim());
        for i in 0..space.n_nodes() {
            let p = space.point(i);
            out[2 * i] = p[0];
            out[2 * i + 1] = p[1];
        }
        out
    }
}

/// Uniform random parameters in [-0.5, 0.5], the documented initialization
/// of the benchmark network.
pub fn random_init(dim: usize, seed: u64) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DVector::from_fn(dim, |_, _| rng.gen::<f64>() - 0.5)
}

pub struct IdentityFit {
    pub q: DVector<f64>,
    pub initial_error: f64,
    pub final_error: f64,
    /// Set when the final error exceeds the configured threshold; the fit is
    /// still returned because no target value is guaranteed.
    pub warned: bool,
    pub trajectory: Trajectory<f64>,
}

/// Relax the model toward a target state by integrating `qdot` for the
/// constant right-hand side `target - Phi(q_init)` over [0, relax_t]; at
/// `relax_t = 1` the linear interpolant ends at the target.
pub fn fit_to_target<M>(
    model: &M,
    q_init: &DVector<f64>,
    target: &DVector<f64>,
    eps: f64,
    n_steps: usize,
    relax_t: f64,
    warn_threshold: f64,
) -> Result<IdentityFit, ModelError>
where
    M: Model<Scalar = f64, State = DVector<f64>>,
{
    let u0 = model.eval(q_init)?;
    let g = target - &u0;
    let flow = RegFlow::new(model, move |_u: &DVector<f64>| g.clone());
    let h = relax_t / n_steps as f64;
    let trajectory = flow.integrate(&RkTableau::rk4_classic(), q_init, 0.0, relax_t, h, eps);
    if !trajectory.completed {
        return Err(ModelError::Unsupported(format!(
            "relaxation failed: {}",
            trajectory.failure.clone().unwrap_or_default()
        )));
    }

    let err = |q: &DVector<f64>| -> Result<f64, ModelError> {
        let d = model.eval(q)? - target;
        Ok(model.norm(&d))
    };
    let initial_error = err(q_init)?;
    let final_error = err(trajectory.final_params())?;
    Ok(IdentityFit {
        q: trajectory.final_params().clone(),
        initial_error,
        final_error,
        warned: final_error > warn_threshold,
        trajectory,
    })
}
