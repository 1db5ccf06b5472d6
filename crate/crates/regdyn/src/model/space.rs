//! Discretized function spaces: quadrature nodes, weights and the induced
//! inner product on flattened node values.

use crate::Field;
use nalgebra::{DMatrix, DVector};

// 4-point Gauss-Legendre rule on [-1, 1].
const GL4_X: [f64; 4] = [
    -0.8611363115940526,
    -0.3399810435848563,
    0.3399810435848563,
    0.8611363115940526,
];
const GL4_W: [f64; 4] = [
    0.3478548451374538,
    0.6521451548625461,
    0.6521451548625461,
    0.3478548451374538,
];

/// Quadrature nodes with weights; state vectors hold `value_dim` components
/// per node, flattened node-major.
#[derive(Debug, Clone)]
pub struct SampleSpace {
    points: DMatrix<f64>,
    weights: DVector<f64>,
    value_dim: usize,
}

impl SampleSpace {
    pub fn new(points: DMatrix<f64>, weights: DVector<f64>, value_dim: usize) -> Self {
        assert_eq!(points.nrows(), weights.len());
        assert!(value_dim >= 1);
        assert!(weights.iter().all(|&w| w > 0.0), "weights must be positive");
        SampleSpace { points, weights, value_dim }
    }

    /// One abstract point with unit weight; for scalar toy problems the
    /// ambient space is then plain `R^value_dim`.
    pub fn single_point(value_dim: usize) -> Self {
        SampleSpace::new(DMatrix::zeros(1, 1), DVector::from_element(1, 1.0), value_dim)
    }

    /// Composite 4-point Gauss-Legendre rule on `[lo, hi]^2`, `panels`
    /// subintervals per direction.
    pub fn gauss_legendre_square(lo: f64, hi: f64, panels: usize, value_dim: usize) -> Self {
        let (x, w) = composite_gl4(lo, hi, panels);
        let n1 = x.len();
        let mut points = DMatrix::zeros(n1 * n1, 2);
        let mut weights = DVector::zeros(n1 * n1);
        for i in 0..n1 {
            for j in 0..n1 {
                let k = i * n1 + j;
                points[(k, 0)] = x[i];
                points[(k, 1)] = x[j];
                weights[k] = w[i] * w[j];
            }
        }
        SampleSpace::new(points, weights, value_dim)
    }

    /// Uniform periodic grid on `[lo, hi)` with the rectangle rule, which is
    /// exact for trigonometric polynomials below the Nyquist frequency.
    pub fn uniform_periodic(lo: f64, hi: f64, n: usize, value_dim: usize) -> Self {
        let h = (hi - lo) / n as f64;
        let points = DMatrix::from_fn(n, 1, |i, _| lo + i as f64 * h);
        let weights = DVector::from_element(n, h);
        SampleSpace::new(points, weights, value_dim)
    }

    pub fn n_nodes(&self) -> usize {
        self.points.nrows()
    }

    pub fn space_dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn value_dim(&self) -> usize {
        self.value_dim
    }

    /// Length of the flattened state vector.
    pub fn flat_dim(&self) -> usize {
        self.n_nodes() * self.value_dim
    }

    /// Coordinates of node `i`.
    pub fn point(&self, i: usize) -> Vec<f64> {
        self.points.row(i).iter().copied().collect()
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    /// Weight of flat component `k` (the weight of its node).
    pub fn flat_weight(&self, k: usize) -> f64 {
        self.weights[k / self.value_dim]
    }

    /// Weighted inner product, conjugate-linear in the first argument.
    pub fn inner<T: Field>(&self, u: &DVector<T>, v: &DVector<T>) -> T {
        assert_eq!(u.len(), self.flat_dim());
        assert_eq!(v.len(), self.flat_dim());
        let mut acc = T::zero();
        for k in 0..u.len() {
            acc += u[k].conjugate() * v[k] * T::from_real(self.flat_weight(k));
        }
        acc
    }

    pub fn norm_sq<T: Field>(&self, u: &DVector<T>) -> f64 {
        self.inner(u, u).real().max(0.0)
    }

    pub fn norm<T: Field>(&self, u: &DVector<T>) -> f64 {
        self.norm_sq(u).sqrt()
    }

    /// Evaluate a node-wise map `g: values -> values` on a flattened state.
    pub fn map_nodes<T: Field>(
        &self,
        u: &DVector<T>,
        mut g: impl FnMut(&[f64], &[T], &mut [T]),
    ) -> DVector<T> {
        assert_eq!(u.len(), self.flat_dim());
        let d = self.value_dim;
        let mut out = DVector::zeros(u.len());
        let mut buf = vec![T::zero(); d];
        for i in 0..self.n_nodes() {
            let p = self.point(i);
            let vals: Vec<T> = (0..d).map(|c| u[i * d + c]).collect();
            g(&p, &vals, &mut buf);
            for c in 0..d {
                out[i * d + c] = buf[c];
            }
        }
        out
    }
}

fn composite_gl4(lo: f64, hi: f64, panels: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(panels >= 1 && hi > lo);
    let dx = (hi - lo) / panels as f64;
    let mut xs = Vec::with_capacity(4 * panels);
    let mut ws = Vec::with_capacity(4 * panels);
    for p in 0..panels {
        let mid = lo + (p as f64 + 0.5) * dx;
        for (x, w) in GL4_X.iter().zip(GL4_W.iter()) {
            xs.push(mid + 0.5 * dx * x);
            ws.push(0.5 * dx * w);
        }
    }
    (xs, ws)
}
