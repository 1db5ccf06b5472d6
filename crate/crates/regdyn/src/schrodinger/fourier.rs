//! Split-step Fourier reference solutions on a periodic grid.
//!
//! The grid is wide enough that the states of interest decay below roundoff
//! at the boundary, so the periodic wrap-around is invisible and the
//! propagator serves as an independent reference for the Gaussian-sum
//! integrators.

use super::SchrodingerOp;
use crate::gauss::GaussState;
use num_complex::Complex64 as C64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

pub struct FourierGrid {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    xs: Vec<f64>,
    /// Angular frequency of each FFT bin.
    freqs: Vec<f64>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl FourierGrid {
    pub fn new(lo: f64, hi: f64, n: usize) -> Self {
        assert!(n >= 2 && hi > lo);
        let length = hi - lo;
        let dx = length / n as f64;
        let xs = (0..n).map(|i| lo + i as f64 * dx).collect();
        let freqs = (0..n)
            .map(|j| {
                let k = if j <= n / 2 { j as f64 } else { j as f64 - n as f64 };
                2.0 * std::f64::consts::PI * k / length
            })
            .collect();
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        FourierGrid { lo, hi, n, xs, freqs, fwd, inv }
    }

    /// The standard reference grid: [-12, 12] with 2048 points.
    pub fn reference() -> Self {
        FourierGrid::new(-12.0, 12.0, 2048)
    }

    pub fn dx(&self) -> f64 {
        (self.hi - self.lo) / self.n as f64
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn sample(&self, f: impl Fn(f64) -> C64) -> Vec<C64> {
        self.xs.iter().map(|&x| f(x)).collect()
    }

    pub fn sample_state(&self, u: &GaussState) -> Vec<C64> {
        self.sample(|x| u.eval(x))
    }

    /// L2 norm with the grid weight.
    pub fn norm(&self, v: &[C64]) -> f64 {
        (v.iter().map(|z| z.norm_sqr()).sum::<f64>() * self.dx()).sqrt()
    }

    pub fn error(&self, a: &[C64], b: &[C64]) -> f64 {
        let d: Vec<C64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        self.norm(&d)
    }

    /// Strang split-step propagation of `i psi_t = -k psi_xx + V psi` over
    /// time `t` with steps of at most `dt`.
    pub fn propagate(&self, psi0: &[C64], op: &SchrodingerOp, t: f64, dt: f64) -> Vec<C64> {
        assert_eq!(psi0.len(), self.n);
        if t == 0.0 {
            return psi0.to_vec();
        }
        let steps = (t / dt).ceil().max(1.0) as usize;
        let tau = t / steps as f64;

        let kin_half: Vec<C64> = self
            .freqs
            .iter()
            .map(|&xi| (-C64::i() * op.kinetic * xi * xi * 0.5 * tau).exp())
            .collect();
        let pot: Vec<C64> = self
            .xs
            .iter()
            .map(|&x| (-C64::i() * op.potential_value(x) * tau).exp())
            .collect();

        let scale = 1.0 / self.n as f64;
        let mut psi = psi0.to_vec();
        for _ in 0..steps {
            self.fwd.process(&mut psi);
            for (z, f) in psi.iter_mut().zip(&kin_half) {
                *z *= f;
            }
            self.inv.process(&mut psi);
            for (z, f) in psi.iter_mut().zip(&pot) {
                *z = *z * *f * scale;
            }
            self.fwd.process(&mut psi);
            for (z, f) in psi.iter_mut().zip(&kin_half) {
                *z *= f;
            }
            self.inv.process(&mut psi);
            for z in psi.iter_mut() {
                *z *= scale;
            }
        }
        psi
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gauss::{free_evolve, GaussTerm};
    use approx::assert_relative_eq;

    fn gaussian_state() -> GaussState {
        GaussState::new(vec![GaussTerm::frozen(C64::new(0.8, 0.1), C64::new(0.5, -1.0))])
    }

    #[test]
    fn grid_norm_matches_analytic_norm() {
        let grid = FourierGrid::reference();
        let u = gaussian_state();
        let v = grid.sample_state(&u);
        assert_relative_eq!(grid.norm(&v), crate::gauss::norm(&u), max_relative = 1e-12);
    }

    #[test]
    fn free_propagation_matches_the_closed_form() {
        let grid = FourierGrid::reference();
        let op = SchrodingerOp::new(0.5, vec![0.0]);
        let u0 = gaussian_state();
        let t = 0.7;
        let psi = grid.propagate(&grid.sample_state(&u0), &op, t, 1e-3);
        let exact = free_evolve(&u0, t, op.kinetic).unwrap();
        let err = grid.error(&psi, &grid.sample_state(&exact));
        assert!(err < 1e-10, "split-step free error {err:e}");
    }

    #[test]
    fn propagation_conserves_mass_and_is_second_order() {
        let grid = FourierGrid::new(-12.0, 12.0, 1024);
        let op = SchrodingerOp::double_well();
        let u0 = gaussian_state();
        let v0 = grid.sample_state(&u0);
        let mass0 = grid.norm(&v0);
        let t = 0.5;

        let fine = grid.propagate(&v0, &op, t, 1e-4);
        assert_relative_eq!(grid.norm(&fine), mass0, max_relative = 1e-12);

        let e1 = grid.error(&grid.propagate(&v0, &op, t, 2e-2), &fine);
        let e2 = grid.error(&grid.propagate(&v0, &op, t, 1e-2), &fine);
        let order = (e1 / e2).log2();
        assert!(
            (order - 2.0).abs() < 0.2,
            "split-step order {order}, errors {e1:e} {e2:e}"
        );
    }
}
