//! Dense-matrix reference computations.
//!
//! Everything here builds full `2^n × 2^n` operators with Kronecker products
//! and never calls into the statevector kernels; only amplitudes are read
//! from library states.

#![allow(dead_code)]

use ghz_core::qsim::{PauliAxis, StateVector};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type Mat = DMatrix<Complex64>;
pub type Vector = DVector<Complex64>;

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn pauli(axis: PauliAxis) -> Mat {
    match axis {
        PauliAxis::X => Mat::from_row_slice(2, 2, &[c(0., 0.), c(1., 0.), c(1., 0.), c(0., 0.)]),
        PauliAxis::Y => Mat::from_row_slice(2, 2, &[c(0., 0.), c(0., -1.), c(0., 1.), c(0., 0.)]),
        PauliAxis::Z => Mat::from_row_slice(2, 2, &[c(1., 0.), c(0., 0.), c(0., 0.), c(-1., 0.)]),
    }
}

pub fn identity(dim: usize) -> Mat {
    Mat::identity(dim, dim)
}

/// Operator acting as `op` on `site` of an `n`-site register (site 0 = lowest bit).
pub fn on_site(n: usize, site: usize, op: &Mat) -> Mat {
    let mut full = identity(1);
    for k in (0..n).rev() {
        let factor = if k == site { op.clone() } else { identity(2) };
        full = full.kronecker(&factor);
    }
    full
}

/// Product of single-site Paulis, multiplied left to right.
pub fn product_op(n: usize, factors: &[(usize, PauliAxis)]) -> Mat {
    factors
        .iter()
        .fold(identity(1 << n), |acc, &(s, a)| acc * on_site(n, s, &pauli(a)))
}

pub fn vector(state: &StateVector) -> Vector {
    Vector::from_iterator(state.dim(), state.amplitudes().iter().copied())
}

pub fn expectation(psi: &Vector, op: &Mat) -> Complex64 {
    (psi.adjoint() * op * psi)[(0, 0)]
}

/// `(I + s·O)/2`.
pub fn eigen_projector(op: &Mat, sign: f64) -> Mat {
    let dim = op.nrows();
    (identity(dim) + op * c(sign, 0.0)) * c(0.5, 0.0)
}

pub fn norm_sqr(v: &Vector) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

/// Born probabilities of all outcome tuples, tuples listed with +1 before -1
/// at every position (position 0 most significant).
pub fn joint_probabilities(psi: &Vector, n: usize, axes: &[(usize, PauliAxis)]) -> Vec<(Vec<i8>, f64)> {
    let k = axes.len();
    (0..1usize << k)
        .map(|mask| {
            let signs: Vec<i8> = (0..k)
                .map(|j| if mask & (1 << (k - 1 - j)) != 0 { -1 } else { 1 })
                .collect();
            let mut proj = identity(1 << n);
            for (&(site, axis), &s) in axes.iter().zip(&signs) {
                proj = eigen_projector(&on_site(n, site, &pauli(axis)), f64::from(s)) * proj;
            }
            (signs, norm_sqr(&(proj * psi)))
        })
        .collect()
}

/// Partial trace keeping `sites` (sites[k] becomes bit k of the reduced index).
pub fn partial_trace(psi: &Vector, n: usize, sites: &[usize]) -> Mat {
    let rho = psi * psi.adjoint();
    let dim = 1usize << sites.len();
    let mut out = Mat::zeros(dim, dim);
    for i in 0..1usize << n {
        for j in 0..1usize << n {
            let rest_equal = (0..n)
                .filter(|s| !sites.contains(s))
                .all(|s| (i >> s) & 1 == (j >> s) & 1);
            if !rest_equal {
                continue;
            }
            let sub = |x: usize| {
                sites
                    .iter()
                    .enumerate()
                    .map(|(k, &s)| ((x >> s) & 1) << k)
                    .sum::<usize>()
            };
            out[(sub(i), sub(j))] += rho[(i, j)];
        }
    }
    out
}

/// Two-site Bell vector on `(s1, s2)` written in the z basis, `s1` first.
pub fn bell_vector(kind: &str) -> [f64; 4] {
    // index = b(s1) + 2·b(s2)
    let h = std::f64::consts::FRAC_1_SQRT_2;
    match kind {
        "phi+" => [h, 0., 0., h],
        "phi-" => [h, 0., 0., -h],
        "psi+" => [0., h, h, 0.],
        "psi-" => [0., -h, h, 0.],
        _ => panic!("unknown Bell state {kind}"),
    }
}

/// Projector onto a Bell state on sites `(s1, s2)` of an `n`-site register.
pub fn bell_projector(n: usize, s1: usize, s2: usize, kind: &str) -> Mat {
    let v = bell_vector(kind);
    let dim = 1usize << n;
    let mut p = Mat::zeros(dim, dim);
    for i in 0..dim {
        for j in 0..dim {
            let rest = (0..n)
                .filter(|&s| s != s1 && s != s2)
                .all(|s| (i >> s) & 1 == (j >> s) & 1);
            if !rest {
                continue;
            }
            let li = ((i >> s1) & 1) + 2 * ((i >> s2) & 1);
            let lj = ((j >> s1) & 1) + 2 * ((j >> s2) & 1);
            p[(i, j)] = c(v[li] * v[lj], 0.0);
        }
    }
    p
}

/// ABL probability of `sign` for `op`, post-selecting with `post` projector.
pub fn abl(psi: &Vector, op: &Mat, post: &Mat, sign: f64) -> f64 {
    let w = |s: f64| norm_sqr(&(post * eigen_projector(op, s) * psi));
    w(sign) / (w(1.0) + w(-1.0))
}

pub fn max_abs(m: &Mat) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// z-score bound check for a Bernoulli frequency.
pub fn within_sigma(count: u64, n: u64, p: f64, k: f64) -> bool {
    let expected = n as f64 * p;
    let sd = (n as f64 * p * (1.0 - p)).sqrt();
    (count as f64 - expected).abs() <= k * sd + 1e-9
}
