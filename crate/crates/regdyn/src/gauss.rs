//! Closed-form algebra of polynomial-times-Gaussian functions on the line.
//!
//! Elements have the form `sum_m p_m(x) exp(-alpha_m x^2 / 2 - beta_m x)`
//! with complex polynomials `p_m` and complex exponents, `Re alpha_m > 0`.
//! The family is closed under addition, differentiation, multiplication by
//! polynomials (potentials) and L2 inner products, all of which reduce to the
//! moment integrals
//!
//! ```text
//!   N_j(s, t) = int x^j exp(-s x^2 / 2 - t x) dx
//!             = sqrt(2 pi / s) exp(t^2 / (2 s))  for j = 0,
//!   N_{j+1}   = (j N_{j-1} - t N_j) / s.
//! ```
//!
//! This is the workhorse behind the Gaussian-sum model: Gram matrices,
//! defects, observables and reference errors are all exact integrals here,
//! no quadrature grid involved.

use num_complex::Complex64;

pub type C64 = Complex64;

/// Largest real part of `t^2/(2s)` before `exp` overflows; beyond this the
/// integral is meaningless in f64 anyway.
const EXP_ARG_LIMIT: f64 = 700.0;

/// `N_j(s, t)` for `j = 0..=jmax`. Requires `Re s > 0`.
pub fn moments(s: C64, t: C64, jmax: usize) -> Vec<C64> {
    debug_assert!(s.re > 0.0, "moment integrals need Re s > 0, got {s}");
    let arg = t * t / (s * 2.0);
    let n0 = (C64::new(2.0 * std::f64::consts::PI, 0.0) / s).sqrt()
        * if arg.re > EXP_ARG_LIMIT {
            C64::new(f64::INFINITY, 0.0)
        } else {
            arg.exp()
        };
    let mut out = Vec::with_capacity(jmax + 1);
    out.push(n0);
    if jmax == 0 {
        return out;
    }
    out.push(-t / s * n0);
    for j in 1..jmax {
        let next = (out[j - 1] * j as f64 - t * out[j]) / s;
        out.push(next);
    }
    out
}

/// One term `p(x) exp(-alpha x^2/2 - beta x)`; `poly[k]` is the coefficient
/// of `x^k`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussTerm {
    pub poly: Vec<C64>,
    pub alpha: C64,
    pub beta: C64,
}

impl GaussTerm {
    pub fn new(poly: Vec<C64>, alpha: C64, beta: C64) -> Self {
        GaussTerm { poly, alpha, beta }
    }

    /// Frozen unit-width Gaussian `c * exp(-x^2/2 - kappa x)`.
    pub fn frozen(c: C64, kappa: C64) -> Self {
        GaussTerm::new(vec![c], C64::new(1.0, 0.0), kappa)
    }

    pub fn degree(&self) -> usize {
        self.poly.len().saturating_sub(1)
    }

    pub fn eval(&self, x: f64) -> C64 {
        let mut p = C64::new(0.0, 0.0);
        for &c in self.poly.iter().rev() {
            p = p * x + c;
        }
        let arg = -self.alpha * (0.5 * x * x) - self.beta * x;
        if arg.re > EXP_ARG_LIMIT {
            return C64::new(f64::INFINITY, 0.0);
        }
        p * arg.exp()
    }

    /// d/dx: `(p' - (alpha x + beta) p) e^{...}`.
    pub fn dx(&self) -> GaussTerm {
        let deg = self.degree();
        let mut poly = vec![C64::new(0.0, 0.0); deg + 2];
        for (k, &c) in self.poly.iter().enumerate() {
            if k >= 1 {
                poly[k - 1] += c * k as f64;
            }
            poly[k + 1] -= c * self.alpha;
            poly[k] -= c * self.beta;
        }
        trim(&mut poly);
        GaussTerm::new(poly, self.alpha, self.beta)
    }

    /// Multiplication by a real polynomial in x.
    pub fn mul_poly(&self, v: &[f64]) -> GaussTerm {
        let mut poly = vec![C64::new(0.0, 0.0); self.poly.len() + v.len() - 1];
        for (i, &a) in self.poly.iter().enumerate() {
            for (j, &b) in v.iter().enumerate() {
                poly[i + j] += a * b;
            }
        }
        trim(&mut poly);
        GaussTerm::new(poly, self.alpha, self.beta)
    }

    fn scaled(&self, c: C64) -> GaussTerm {
        GaussTerm::new(self.poly.iter().map(|&p| p * c).collect(), self.alpha, self.beta)
    }
}

fn trim(poly: &mut Vec<C64>) {
    while poly.len() > 1 && poly.last() == Some(&C64::new(0.0, 0.0)) {
        poly.pop();
    }
}

/// `<a, b> = int conj(a) b dx`, conjugate-linear in the first argument.
pub fn inner_terms(a: &GaussTerm, b: &GaussTerm) -> C64 {
    let s = a.alpha.conj() + b.alpha;
    let t = a.beta.conj() + b.beta;
    let jmax = a.degree() + b.degree();
    let n = moments(s, t, jmax);
    let mut acc = C64::new(0.0, 0.0);
    for (i, &pa) in a.poly.iter().enumerate() {
        let ca = pa.conj();
        for (j, &pb) in b.poly.iter().enumerate() {
            acc += ca * pb * n[i + j];
        }
    }
    acc
}

/// A finite sum of [`GaussTerm`]s; the state representation of the
/// Gaussian-sum model.
#[derive(Debug, Clone, Default)]
pub struct GaussState {
    pub terms: Vec<GaussTerm>,
}

impl GaussState {
    pub fn new(terms: Vec<GaussTerm>) -> Self {
        GaussState { terms }
    }

    pub fn zero() -> Self {
        GaussState { terms: Vec::new() }
    }

    pub fn eval(&self, x: f64) -> C64 {
        self.terms.iter().map(|t| t.eval(x)).sum()
    }

    pub fn dx(&self) -> GaussState {
        GaussState::new(self.terms.iter().map(GaussTerm::dx).collect())
    }

    /// Second derivative; used for kinetic terms.
    pub fn ddx(&self) -> GaussState {
        self.dx().dx()
    }

    pub fn mul_poly(&self, v: &[f64]) -> GaussState {
        GaussState::new(self.terms.iter().map(|t| t.mul_poly(v)).collect())
    }

    pub fn scale(&mut self, c: C64) {
        for t in &mut self.terms {
            for p in &mut t.poly {
                *p *= c;
            }
        }
    }

    /// `self += c * other`, merging terms that share exponents bit-for-bit so
    /// states assembled from the same parameter vector stay compact.
    pub fn add_scaled(&mut self, c: C64, other: &GaussState) {
        for t in &other.terms {
            let nt = t.scaled(c);
            match self
                .terms
                .iter_mut()
                .find(|e| e.alpha == nt.alpha && e.beta == nt.beta)
            {
                Some(e) => {
                    if e.poly.len() < nt.poly.len() {
                        e.poly.resize(nt.poly.len(), C64::new(0.0, 0.0));
                    }
                    for (k, &p) in nt.poly.iter().enumerate() {
                        e.poly[k] += p;
                    }
                }
                None => self.terms.push(nt),
            }
        }
    }
}

/// `<a, b>` for sums; all pairwise closed-form integrals.
pub fn inner(a: &GaussState, b: &GaussState) -> C64 {
    let mut acc = C64::new(0.0, 0.0);
    for ta in &a.terms {
        for tb in &b.terms {
            acc += inner_terms(ta, tb);
        }
    }
    acc
}

pub fn norm_sq(a: &GaussState) -> f64 {
    inner(a, a).re.max(0.0)
}

pub fn norm(a: &GaussState) -> f64 {
    norm_sq(a).sqrt()
}

/// Exact free-flow evolution `psi_t = i k psi_xx` over time `t` for states
/// whose terms have constant polynomial part.
///
/// Each Gaussian evolves in closed form:
///
/// ```text
///   alpha(t) = alpha0 / (1 + 2 i k alpha0 t),    beta likewise,
///   amp(t)   = amp0 (1 + c t)^{-1/2} exp( beta0^2/(2 alpha0) * ct/(1+ct) ),
///   c        = 2 i k alpha0.
/// ```
///
/// Terms with polynomial degree > 0 are rejected: the evolved prefactor
/// would no longer be a polynomial of the same degree in this
/// parametrization, and nothing in the integrators needs that case.
pub fn free_evolve(state: &GaussState, t: f64, kinetic: f64) -> Result<GaussState, String> {
    let mut out = Vec::with_capacity(state.terms.len());
    for term in &state.terms {
        if term.degree() > 0 {
            return Err(format!(
                "free_evolve supports degree-0 terms only, got degree {}",
                term.degree()
            ));
        }
        let a0 = term.alpha;
        let b0 = term.beta;
        let c = C64::new(0.0, 2.0 * kinetic) * a0;
        let den = C64::new(1.0, 0.0) + c * t;
        let alpha = a0 / den;
        let beta = b0 / den;
        let amp = term.poly[0] * den.powf(-0.5) * (b0 * b0 / (a0 * 2.0) * (c * t) / den).exp();
        out.push(GaussTerm::new(vec![amp], alpha, beta));
    }
    Ok(GaussState::new(out))
}
