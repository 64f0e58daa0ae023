//! Small dense complex matrix kernels used pointwise on grid fields.
//!
//! Matrices are row-major slices of length `n * n`. The hot paths (n ≤ 3)
//! use closed forms; larger sizes fall back to LU elimination or to
//! `nalgebra`'s hermitian eigensolver.

use nalgebra::DMatrix;
use num_complex::Complex64;

pub type C64 = Complex64;

pub fn identity(n: usize) -> Vec<C64> {
    let mut m = vec![C64::new(0.0, 0.0); n * n];
    for i in 0..n {
        m[i * n + i] = C64::new(1.0, 0.0);
    }
    m
}

/// Largest |m_ij - conj(m_ji)| relative to the largest entry (absolute when the matrix is tiny).
pub fn hermitian_deviation(m: &[C64], n: usize) -> f64 {
    let scale = m.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1.0);
    let mut dev = 0.0f64;
    for i in 0..n {
        for j in i..n {
            dev = dev.max((m[i * n + j] - m[j * n + i].conj()).norm());
        }
    }
    dev / scale
}

pub fn det(m: &[C64], n: usize) -> C64 {
    match n {
        0 => C64::new(1.0, 0.0),
        1 => m[0],
        2 => m[0] * m[3] - m[1] * m[2],
        3 => {
            m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6])
                + m[2] * (m[3] * m[7] - m[4] * m[6])
        }
        _ => det_lu(m, n),
    }
}

fn det_lu(m: &[C64], n: usize) -> C64 {
    let mut a = m.to_vec();
    let mut d = C64::new(1.0, 0.0);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i * n + col].norm().total_cmp(&a[j * n + col].norm()))
            .unwrap();
        if a[pivot * n + col].norm() == 0.0 {
            return C64::new(0.0, 0.0);
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            d = -d;
        }
        let p = a[col * n + col];
        d *= p;
        for row in col + 1..n {
            let f = a[row * n + col] / p;
            for k in col..n {
                let v = a[col * n + k];
                a[row * n + k] -= f * v;
            }
        }
    }
    d
}

/// Inverse by Gauss-Jordan elimination; `None` if a pivot vanishes.
pub fn inverse(m: &[C64], n: usize) -> Option<Vec<C64>> {
    if n == 1 {
        return (m[0].norm() > 0.0).then(|| vec![m[0].inv()]);
    }
    if n == 2 {
        let d = det(m, 2);
        if d.norm() == 0.0 {
            return None;
        }
        return Some(vec![m[3] / d, -m[1] / d, -m[2] / d, m[0] / d]);
    }
    let mut a = m.to_vec();
    let mut inv = identity(n);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i * n + col].norm().total_cmp(&a[j * n + col].norm()))
            .unwrap();
        if a[pivot * n + col].norm() == 0.0 {
            return None;
        }
        for k in 0..n {
            a.swap(col * n + k, pivot * n + k);
            inv.swap(col * n + k, pivot * n + k);
        }
        let p = a[col * n + col].inv();
        for k in 0..n {
            a[col * n + k] *= p;
            inv[col * n + k] *= p;
        }
        for row in 0..n {
            if row == col {
                continue;
            }
            let f = a[row * n + col];
            if f.norm() == 0.0 {
                continue;
            }
            for k in 0..n {
                let (ak, ik) = (a[col * n + k], inv[col * n + k]);
                a[row * n + k] -= f * ak;
                inv[row * n + k] -= f * ik;
            }
        }
    }
    Some(inv)
}

/// Trace of `a * b`.
pub fn trace_product(a: &[C64], b: &[C64], n: usize) -> C64 {
    let mut s = C64::new(0.0, 0.0);
    for i in 0..n {
        for k in 0..n {
            s += a[i * n + k] * b[k * n + i];
        }
    }
    s
}

/// Eigenvalues of a hermitian matrix in ascending order.
pub fn eigenvalues(m: &[C64], n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![m[0].re],
        2 => {
            let (a, d) = (m[0].re, m[3].re);
            let mid = 0.5 * (a + d);
            let half = 0.5 * (a - d);
            let r = (half * half + m[1].norm_sqr()).sqrt();
            vec![mid - r, mid + r]
        }
        _ => {
            let mat = DMatrix::from_row_slice(n, n, m);
            let mut ev: Vec<f64> = mat.symmetric_eigenvalues().iter().copied().collect();
            ev.sort_by(f64::total_cmp);
            ev
        }
    }
}

/// Smallest eigenvalue of a hermitian matrix.
pub fn min_eigenvalue(m: &[C64], n: usize) -> f64 {
    match n {
        1 => m[0].re,
        2 => {
            let (a, d) = (m[0].re, m[3].re);
            let half = 0.5 * (a - d);
            0.5 * (a + d) - (half * half + m[1].norm_sqr()).sqrt()
        }
        _ => eigenvalues(m, n)[0],
    }
}
