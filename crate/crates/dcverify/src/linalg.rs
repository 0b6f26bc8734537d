//! Small dense complex-matrix helpers.
//!
//! Matrices are square, row-major `Vec<Complex64>` with an explicit
//! dimension. These routines back the oracle and validation paths only;
//! nothing here is performance critical beyond ~2^10 dimensions.

use num_complex::Complex64;

pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

pub fn zeros(dim: usize) -> Vec<C64> {
    vec![ZERO; dim * dim]
}

pub fn eye(dim: usize) -> Vec<C64> {
    let mut m = zeros(dim);
    for k in 0..dim {
        m[k * dim + k] = ONE;
    }
    m
}

pub fn matmul(a: &[C64], b: &[C64], dim: usize) -> Vec<C64> {
    debug_assert_eq!(a.len(), dim * dim);
    debug_assert_eq!(b.len(), dim * dim);
    let mut out = zeros(dim);
    for i in 0..dim {
        for k in 0..dim {
            let aik = a[i * dim + k];
            if aik == ZERO {
                continue;
            }
            for j in 0..dim {
                out[i * dim + j] += aik * b[k * dim + j];
            }
        }
    }
    out
}

pub fn matvec(a: &[C64], v: &[C64], dim: usize) -> Vec<C64> {
    let mut out = vec![ZERO; dim];
    for i in 0..dim {
        let mut acc = ZERO;
        for j in 0..dim {
            acc += a[i * dim + j] * v[j];
        }
        out[i] = acc;
    }
    out
}

pub fn dagger(a: &[C64], dim: usize) -> Vec<C64> {
    let mut out = zeros(dim);
    for i in 0..dim {
        for j in 0..dim {
            out[j * dim + i] = a[i * dim + j].conj();
        }
    }
    out
}

/// Kronecker product `high ⊗ low`: the `low` factor occupies the
/// least-significant index bits of the result.
pub fn kron(high: &[C64], dh: usize, low: &[C64], dl: usize) -> Vec<C64> {
    let dim = dh * dl;
    let mut out = zeros(dim);
    for ih in 0..dh {
        for jh in 0..dh {
            let h = high[ih * dh + jh];
            if h == ZERO {
                continue;
            }
            for il in 0..dl {
                for jl in 0..dl {
                    out[(ih * dl + il) * dim + (jh * dl + jl)] = h * low[il * dl + jl];
                }
            }
        }
    }
    out
}

pub fn max_abs(a: &[C64]) -> f64 {
    a.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn max_abs_diff(a: &[C64], b: &[C64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

/// Max-abs deviation of `a·a† − I`.
pub fn unitarity_deviation(a: &[C64], dim: usize) -> f64 {
    let prod = matmul(a, &dagger(a, dim), dim);
    max_abs_diff(&prod, &eye(dim))
}

pub fn pauli_i() -> [[C64; 2]; 2] {
    [[ONE, ZERO], [ZERO, ONE]]
}

pub fn pauli_x() -> [[C64; 2]; 2] {
    [[ZERO, ONE], [ONE, ZERO]]
}

pub fn pauli_y() -> [[C64; 2]; 2] {
    [[ZERO, -I], [I, ZERO]]
}

pub fn pauli_z() -> [[C64; 2]; 2] {
    [[ONE, ZERO], [ZERO, -ONE]]
}

pub fn mat2_to_dense(m: &[[C64; 2]; 2]) -> Vec<C64> {
    vec![m[0][0], m[0][1], m[1][0], m[1][1]]
}

/// Eigendecomposition of a Hermitian matrix by cyclic complex Jacobi
/// rotations. Returns `(eigenvalues, eigenvectors)` with eigenvectors as
/// rows of the second vector, sorted by descending eigenvalue, so that
/// `a ≈ Σ_k λ_k v_k v_k†`.
pub fn hermitian_eigen(a: &[C64], dim: usize) -> (Vec<f64>, Vec<Vec<C64>>) {
    debug_assert_eq!(a.len(), dim * dim);
    let mut m = a.to_vec();
    // v accumulates the product of rotations; columns are eigenvectors.
    let mut v = eye(dim);
    let scale = max_abs(a).max(1.0);
    let tol = 1e-14 * scale;

    for _sweep in 0..60 {
        let mut off = 0.0f64;
        for p in 0..dim {
            for q in (p + 1)..dim {
                off = off.max(m[p * dim + q].norm());
            }
        }
        if off <= tol {
            break;
        }
        for p in 0..dim {
            for q in (p + 1)..dim {
                let apq = m[p * dim + q];
                let r = apq.norm();
                if r <= tol {
                    continue;
                }
                let phase = apq / r; // e^{iφ}
                let app = m[p * dim + p].re;
                let aqq = m[q * dim + q].re;
                // Real Jacobi angle for [[app, r], [r, aqq]].
                let theta = (aqq - app) / (2.0 * r);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // Rotation G = D·P with D = diag(1, e^{-iφ}) removing the
                // phase and P the real Jacobi rotation; m ← G† m G.
                let ph = phase;
                for i in 0..dim {
                    let mip = m[i * dim + p];
                    let miq = m[i * dim + q];
                    m[i * dim + p] = mip * c - miq * (ph.conj() * s);
                    m[i * dim + q] = mip * s + miq * (ph.conj() * c);
                }
                for j in 0..dim {
                    let mpj = m[p * dim + j];
                    let mqj = m[q * dim + j];
                    m[p * dim + j] = mpj * c - mqj * (ph * s);
                    m[q * dim + j] = mpj * s + mqj * (ph * c);
                }
                for i in 0..dim {
                    let vip = v[i * dim + p];
                    let viq = v[i * dim + q];
                    v[i * dim + p] = vip * c - viq * (ph.conj() * s);
                    v[i * dim + q] = vip * s + viq * (ph.conj() * c);
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&i, &j| {
        m[j * dim + j]
            .re
            .partial_cmp(&m[i * dim + i].re)
            .expect("eigenvalues are finite")
    });
    let eigenvalues: Vec<f64> = order.iter().map(|&k| m[k * dim + k].re).collect();
    let eigenvectors: Vec<Vec<C64>> = order
        .iter()
        .map(|&k| (0..dim).map(|i| v[i * dim + k]).collect())
        .collect();
    (eigenvalues, eigenvectors)
}
