//! A fully connected sigmoid network as a nonlinear parametrization of
//! functions on a sample space.

use super::{check_params, DenseJacobian, Model, ModelError, SampleSpace};
use nalgebra::{DMatrix, DVector};

/// Multilayer perceptron `x -> net(x)` evaluated at every node of the
/// sample space; parameters are all weights and biases.
///
/// Layout: layer by layer, each layer's weight matrix row-major followed by
/// its bias vector. Hidden layers use the logistic sigmoid, the output layer
/// is affine. The Jacobian with respect to the parameters is computed in
/// forward mode, which is exact and cheap at these widths.
pub struct MlpModel {
    layers: Vec<usize>,
    space: SampleSpace,
    n_params: usize,
}

struct LayerParams {
    w: DMatrix<f64>,
    b: DVector<f64>,
    offset: usize,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl MlpModel {
    /// Network `space_dim -> hidden... -> value_dim` over the given space.
    pub fn new(space: SampleSpace, hidden: &[usize]) -> Self {
        assert!(!hidden.is_empty());
        assert!(hidden.iter().all(|&w| w >= 1));
        let mut layers = Vec::with_capacity(hidden.len() + 2);
        layers.push(space.space_dim());
        layers.extend_from_slice(hidden);
        layers.push(space.value_dim());
        let n_params = layers.windows(2).map(|w| w[1] * (w[0] + 1)).sum();
        MlpModel { layers, space, n_params }
    }

    pub fn space(&self) -> &SampleSpace {
        &self.space
    }

    pub fn layer_widths(&self) -> &[usize] {
        &self.layers
    }

    fn unpack(&self, q: &DVector<f64>) -> Vec<LayerParams> {
        let mut out = Vec::with_capacity(self.layers.len() - 1);
        let mut offset = 0;
        for lw in self.layers.windows(2) {
            let (n_in, n_out) = (lw[0], lw[1]);
            let w = DMatrix::from_fn(n_out, n_in, |i, j| q[offset + i * n_in + j]);
            let b = DVector::from_fn(n_out, |i, _| q[offset + n_out * n_in + i]);
            out.push(LayerParams { w, b, offset });
            offset += n_out * (n_in + 1);
        }
        out
    }

    fn forward(&self, params: &[LayerParams], x: &[f64], acts: &mut [DVector<f64>]) {
        for (c, &v) in x.iter().enumerate() {
            acts[0][c] = v;
        }
        for (l, p) in params.iter().enumerate() {
            let (lo, hi) = acts.split_at_mut(l + 1);
            let (a, z) = (&lo[l], &mut hi[0]);
            p.w.mul_to(a, z);
            *z += &p.b;
            if l + 1 < self.layers.len() - 1 {
                z.apply(|v| *v = sigmoid(*v));
            }
        }
    }
}

impl Model for MlpModel {
    type Scalar = f64;
    type State = DVector<f64>;
    type Jac = DenseJacobian<f64>;

    fn dim(&self) -> usize {
        self.n_params
    }

    fn eval(&self, q: &DVector<f64>) -> Result<DVector<f64>, ModelError> {
        check_params(q, self.n_params)?;
        let params = self.unpack(q);
        let mut acts: Vec<DVector<f64>> =
            self.layers.iter().map(|&w| DVector::zeros(w)).collect();
        let d = self.space.value_dim();
        let mut out = DVector::zeros(self.space.flat_dim());
        for i in 0..self.space.n_nodes() {
            self.forward(&params, &self.space.point(i), &mut acts);
            let y = acts.last().unwrap();
            for c in 0..d {
                out[i * d + c] = y[c];
            }
        }
        Ok(out)
    }

    fn jacobian(&self, q: &DVector<f64>) -> Result<DenseJacobian<f64>, ModelError> {
        check_params(q, self.n_params)?;
        let params = self.unpack(q);
        let np = self.n_params;
        let d = self.space.value_dim();
        let mut acts: Vec<DVector<f64>> =
            self.layers.iter().map(|&w| DVector::zeros(w)).collect();
        let mut tans: Vec<DMatrix<f64>> =
            self.layers.iter().map(|&w| DMatrix::zeros(w, np)).collect();
        let mut mat = DMatrix::zeros(self.space.flat_dim(), np);

        for node in 0..self.space.n_nodes() {
            for (c, &v) in self.space.point(node).iter().enumerate() {
                acts[0][c] = v;
            }
            tans[0].fill(0.0);
            for (l, p) in params.iter().enumerate() {
                let n_in = self.layers[l];
                let n_out = self.layers[l + 1];
                {
                    let (lo, hi) = acts.split_at_mut(l + 1);
                    p.w.mul_to(&lo[l], &mut hi[0]);
                    hi[0] += &p.b;
                }
                {
                    let (lo, hi) = tans.split_at_mut(l + 1);
                    p.w.mul_to(&lo[l], &mut hi[0]);
                }
                // Sensitivities to this layer's own weights and biases.
                for i in 0..n_out {
                    for j in 0..n_in {
                        tans[l + 1][(i, p.offset + i * n_in + j)] += acts[l][j];
                    }
                    tans[l + 1][(i, p.offset + n_out * n_in + i)] += 1.0;
                }
                if l + 1 < self.layers.len() - 1 {
                    for i in 0..n_out {
                        let s = sigmoid(acts[l + 1][i]);
                        acts[l + 1][i] = s;
                        let ds = s * (1.0 - s);
                        for v in tans[l + 1].row_mut(i).iter_mut() {
                            *v *= ds;
                        }
                    }
                }
            }
            let ty = tans.last().unwrap();
            for c in 0..d {
                mat.row_mut(node * d + c).copy_from(&ty.row(c));
            }
        }
        Ok(DenseJacobian::new(mat, &self.space))
    }

    fn inner(&self, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        self.space.inner(u, v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn square_space() -> SampleSpace {
        SampleSpace::gauss_legendre_square(0.5, 2.5, 2, 2)
    }

    #[test]
    fn parameter_count_for_two_four_four_four_two() {
        let m = MlpModel::new(square_space(), &[4, 4, 4]);
        assert_eq!(m.layer_widths(), &[2, 4, 4, 4, 2]);
        assert_eq!(m.dim(), 62);
    }

    #[test]
    fn zero_parameters_give_zero_output() {
        let m = MlpModel::new(square_space(), &[4, 4, 4]);
        let u = m.eval(&DVector::zeros(62)).unwrap();
        assert_eq!(u.norm(), 0.0);
    }

    #[test]
    fn tiny_net_matches_hand_formula() {
        let space = SampleSpace::new(
            DMatrix::from_element(1, 1, 0.7),
            DVector::from_element(1, 1.0),
            1,
        );
        let m = MlpModel::new(space, &[1]);
        // Layout: w0, b0, w1, b1.
        let q = DVector::from_vec(vec![2.0, -0.3, 1.5, 0.25]);
        let u = m.eval(&q).unwrap();
        let hidden = 1.0 / (1.0 + f64::exp(-(2.0 * 0.7 - 0.3)));
        assert_relative_eq!(u[0], 1.5 * hidden + 0.25, max_relative = 1e-15);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let m = MlpModel::new(square_space(), &[4, 4, 4]);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let q = DVector::from_fn(m.dim(), |_, _| rng.gen_range(-0.8..0.8));
        let jac = m.jacobian(&q).unwrap();
        let h = 1e-6;
        for p in (0..m.dim()).step_by(5) {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[p] += h;
            qm[p] -= h;
            let col = (m.eval(&qp).unwrap() - m.eval(&qm).unwrap()) / (2.0 * h);
            let diff = (&col - jac.matrix().column(p)).norm();
            assert!(
                diff <= 1e-6 * (1.0 + col.norm()),
                "param {p}: fd mismatch {diff:e}"
            );
        }
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(800.0), 1.0);
        assert_eq!(sigmoid(-800.0), 0.0);
        assert!(sigmoid(-745.0) > 0.0);
        assert_relative_eq!(sigmoid(0.0), 0.5);
    }

    #[test]
    fn non_finite_parameter_is_reported_by_index() {
        let m = MlpModel::new(square_space(), &[4, 4, 4]);
        let mut q = DVector::zeros(62);
        q[17] = f64::INFINITY;
        match m.eval(&q) {
            Err(ModelError::NonFiniteParam { index }) => assert_eq!(index, 17),
            other => panic!("expected NonFiniteParam, got {other:?}"),
        }
    }
}
