//! Cohomology-level arithmetic for constant (1,1)-classes on the torus.
//!
//! A class is represented by its constant hermitian coefficient matrix, the
//! Kähler cone is the positive-definite cone and the nef cone its closure.
//! Intersection numbers reduce to mixed discriminants.

use std::cmp::Ordering;

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::herm::{self, C64};

/// Constant hermitian representative of a real (1,1)-class.
#[derive(Clone, Debug, PartialEq)]
pub struct CohomologyClass {
    n: usize,
    entries: Vec<C64>,
}

impl CohomologyClass {
    pub const HERMITIAN_TOL: f64 = 1e-12;

    /// Builds a class from row-major entries, rejecting non-hermitian input.
    pub fn new(n: usize, entries: Vec<C64>) -> Result<Self> {
        if entries.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                found: entries.len(),
            });
        }
        if entries.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite(0));
        }
        let dev = herm::hermitian_deviation(&entries, n);
        if dev > Self::HERMITIAN_TOL {
            return Err(Error::NotHermitian(dev));
        }
        Ok(Self { n, entries })
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut entries = vec![C64::new(0.0, 0.0); n * n];
        for (i, &d) in diag.iter().enumerate() {
            entries[i * n + i] = C64::new(d, 0.0);
        }
        Self { n, entries }
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![1.0; n])
    }

    pub fn zero(n: usize) -> Self {
        Self::diagonal(&vec![0.0; n])
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn entries(&self) -> &[C64] {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.entries[i * self.n + j]
    }

    fn check_dim(&self, other: &Self) -> Result<()> {
        if self.n != other.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: other.n,
            });
        }
        Ok(())
    }

    /// `a·self + b·other`
    pub fn combine(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        self.check_dim(other)?;
        let entries = self.entries.iter().zip(&other.entries).map(|(x, y)| x * a + y * b).collect();
        Ok(Self { n: self.n, entries })
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            n: self.n,
            entries: self.entries.iter().map(|z| z * c).collect(),
        }
    }

    pub fn det(&self) -> f64 {
        herm::det(&self.entries, self.n).re
    }

    pub fn min_eigenvalue(&self) -> f64 {
        herm::min_eigenvalue(&self.entries, self.n)
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        herm::eigenvalues(&self.entries, self.n)
    }

    fn scale(&self) -> f64 {
        self.eigenvalues().iter().fold(1.0f64, |m, v| m.max(v.abs()))
    }

    /// Nef test: positive semidefinite up to round-off relative to the class size.
    pub fn is_nef(&self) -> bool {
        self.min_eigenvalue() >= -1e-12 * self.scale()
    }
}

/// `ω_t = L + e^{−t}(ω_0 − L)`.
pub fn class_path(l: &CohomologyClass, omega0: &CohomologyClass, t: f64) -> Result<CohomologyClass> {
    let s = (-t).exp();
    l.combine(1.0 - s, omega0, s)
}

/// Positive-definiteness test.
pub fn kahler_check(a: &CohomologyClass) -> bool {
    a.min_eigenvalue() > 0.0
}

/// Supremum of the times for which the class path stays Kähler (`f64::INFINITY` if it always does).
///
/// The smallest eigenvalue of `L + s(ω_0 − L)` is concave in `s`, so it is
/// positive on an interval ending at `s = 1`. If it is nonnegative at `s = 0`
/// (nef `L`) the path is Kähler for every `s ∈ (0, 1]`; otherwise the root is
/// bracketed in `(0, 1)` and found by bisection.
pub fn singularity_time(l: &CohomologyClass, omega0: &CohomologyClass) -> Result<f64> {
    l.check_dim(omega0)?;
    let top = omega0.min_eigenvalue();
    if !(top > 0.0) {
        return Err(Error::NotKahler(top));
    }
    if l.is_nef() {
        return Ok(f64::INFINITY);
    }
    let lambda = |s: f64| l.combine(1.0 - s, omega0, s).map(|c| c.min_eigenvalue());
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        if hi - lo <= 1e-15 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if lambda(mid)? > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(-(0.5 * (lo + hi)).ln())
}

fn lex_cmp(a: &CohomologyClass, b: &CohomologyClass) -> Ordering {
    a.entries
        .iter()
        .zip(&b.entries)
        .map(|(x, y)| x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im)))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Mixed discriminant `D(A_1, …, A_n)`, normalized so that `D(A, …, A) = det A`.
///
/// Computed by polarization of `det(Σ λ_i A_i)` over subsets. Arguments are
/// put in a canonical order first, so permuting them gives bit-identical
/// results.
pub fn mixed_discriminant(args: &[&CohomologyClass]) -> Result<f64> {
    let Some(first) = args.first() else {
        return Err(Error::ArgumentCount { expected: 1, got: 0 });
    };
    let n = first.n;
    if args.len() != n {
        return Err(Error::ArgumentCount {
            expected: n,
            got: args.len(),
        });
    }
    for a in args {
        first.check_dim(a)?;
    }
    if args.iter().all(|a| a.entries == first.entries) {
        return Ok(first.det());
    }
    let mut sorted: Vec<&CohomologyClass> = args.to_vec();
    sorted.sort_by(|a, b| lex_cmp(a, b));

    let mut total = 0.0;
    let mut sum = vec![C64::new(0.0, 0.0); n * n];
    for mask in 1u32..(1 << n) {
        sum.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
        for (i, a) in sorted.iter().enumerate() {
            if mask & (1 << i) != 0 {
                for (s, v) in sum.iter_mut().zip(&a.entries) {
                    *s += v;
                }
            }
        }
        let sign = if (n as u32 - mask.count_ones()).is_multiple_of(2) { 1.0 } else { -1.0 };
        total += sign * herm::det(&sum, n).re;
    }
    let factorial: f64 = (1..=n).map(|k| k as f64).product();
    Ok(total / factorial)
}

/// Intersection number `[A]^{n−k} · [B]^k`.
pub fn intersection(a: &CohomologyClass, b: &CohomologyClass, k: usize) -> Result<f64> {
    a.check_dim(b)?;
    let n = a.n;
    let args: Vec<&CohomologyClass> = (0..n).map(|i| if i < n - k { a } else { b }).collect();
    mixed_discriminant(&args)
}

/// Relative threshold below which an intersection number counts as zero.
pub const VANISHING_THRESHOLD: f64 = 1e-12;

/// Smallest `k` with `[L]^{n−k}·[ω_0]^k ≠ 0`.
pub fn collapse_order(l: &CohomologyClass, omega0: &CohomologyClass) -> Result<usize> {
    l.check_dim(omega0)?;
    let top = omega0.min_eigenvalue();
    if !(top > 0.0) {
        return Err(Error::NotKahler(top));
    }
    if !l.is_nef() {
        return Err(Error::NotNef(l.min_eigenvalue()));
    }
    let threshold = VANISHING_THRESHOLD * omega0.det();
    for k in 0..=l.n {
        if intersection(l, omega0, k)? > threshold {
            return Ok(k);
        }
    }
    // unreachable for Kähler ω_0: k = n gives det ω_0 > 0
    Ok(l.n)
}

/// Coefficients `c_0..c_n` of `det(L + sM)` with `M = ω_0 − L`, `s = e^{−t}`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VolumePolynomial {
    pub coefficients: Vec<f64>,
}

impl VolumePolynomial {
    pub fn eval(&self, s: f64) -> f64 {
        self.coefficients.iter().rev().fold(0.0, |acc, c| acc * s + c)
    }

    /// Class volume `[ω_t]^n`.
    pub fn at_time(&self, t: f64) -> f64 {
        self.eval((-t).exp())
    }

    /// Index of the first coefficient above `threshold` in absolute value.
    pub fn lowest_degree(&self, threshold: f64) -> Option<usize> {
        self.coefficients.iter().position(|c| c.abs() > threshold)
    }
}

/// Expands `det(L + sM)` symbolically (Leibniz formula over polynomial entries).
pub fn volume_polynomial(l: &CohomologyClass, omega0: &CohomologyClass) -> Result<VolumePolynomial> {
    l.check_dim(omega0)?;
    let n = l.n;
    let m = omega0.combine(1.0, l, -1.0)?;
    let mut coeffs = vec![Complex64::new(0.0, 0.0); n + 1];
    for (perm, sign) in permutations(n) {
        // product over rows of (L_{i,σ(i)} + s M_{i,σ(i)})
        let mut poly = vec![Complex64::new(0.0, 0.0); n + 1];
        poly[0] = Complex64::new(sign, 0.0);
        for (i, &j) in perm.iter().enumerate() {
            let (a, b) = (l.get(i, j), m.get(i, j));
            for deg in (0..=i + 1).rev() {
                let lower = if deg > 0 { poly[deg - 1] * b } else { Complex64::new(0.0, 0.0) };
                poly[deg] = poly[deg] * a + lower;
            }
        }
        for (c, p) in coeffs.iter_mut().zip(&poly) {
            *c += p;
        }
    }
    Ok(VolumePolynomial {
        coefficients: coeffs.iter().map(|c| c.re).collect(),
    })
}

/// All permutations of `0..n` with their signs (Heap's algorithm).
fn permutations(n: usize) -> Vec<(Vec<usize>, f64)> {
    fn heap(k: usize, a: &mut Vec<usize>, sign: &mut f64, out: &mut Vec<(Vec<usize>, f64)>) {
        if k <= 1 {
            out.push((a.clone(), *sign));
            return;
        }
        heap(k - 1, a, sign, out);
        for i in 0..k - 1 {
            if k.is_multiple_of(2) {
                a.swap(i, k - 1);
            } else {
                a.swap(0, k - 1);
            }
            *sign = -*sign;
            heap(k - 1, a, sign, out);
        }
    }
    let mut out = Vec::new();
    let mut a: Vec<usize> = (0..n).collect();
    let mut sign = 1.0;
    heap(n, &mut a, &mut sign, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hermitian(n: usize, rows: &[(f64, f64)]) -> CohomologyClass {
        CohomologyClass::new(n, rows.iter().map(|&(r, i)| C64::new(r, i)).collect()).unwrap()
    }

    #[test]
    fn permutation_signs() {
        let perms = permutations(3);
        assert_eq!(perms.len(), 6);
        let total: f64 = perms.iter().map(|(_, s)| s).sum();
        assert_eq!(total, 0.0);
        let id = perms.iter().find(|(p, _)| p == &vec![0, 1, 2]).unwrap();
        assert_eq!(id.1, 1.0);
        let swap = perms.iter().find(|(p, _)| p == &vec![1, 0, 2]).unwrap();
        assert_eq!(swap.1, -1.0);
    }

    #[test]
    fn rejects_non_hermitian() {
        let r = CohomologyClass::new(2, vec![C64::new(1.0, 0.0), C64::new(0.0, 1.0), C64::new(0.0, 1.0), C64::new(1.0, 0.0)]);
        assert!(matches!(r, Err(Error::NotHermitian(_))));
    }

    #[test]
    fn class_path_examples() {
        let l = CohomologyClass::diagonal(&[1.0, 0.0]);
        let w = CohomologyClass::identity(2);
        assert_eq!(class_path(&l, &w, 0.0).unwrap(), w);
        assert_eq!(class_path(&w, &w, 3.0).unwrap(), w);
        let p = class_path(&l, &w, 1.0).unwrap();
        assert!((p.get(1, 1).re - (-1.0f64).exp()).abs() < 1e-16);
        assert_eq!(p.get(0, 0).re, 1.0);
    }

    #[test]
    fn kahler_check_examples() {
        assert!(kahler_check(&CohomologyClass::identity(2)));
        assert!(!kahler_check(&CohomologyClass::diagonal(&[1.0, 0.0])));
        assert!(kahler_check(&hermitian(2, &[(2.0, 0.0), (0.0, 1.0), (0.0, -1.0), (2.0, 0.0)])));
    }

    #[test]
    fn singularity_time_examples() {
        let w = CohomologyClass::identity(2);
        assert_eq!(singularity_time(&CohomologyClass::diagonal(&[1.0, 0.0]), &w).unwrap(), f64::INFINITY);
        assert_eq!(singularity_time(&w, &w).unwrap(), f64::INFINITY);
        let t = singularity_time(&CohomologyClass::diagonal(&[2.0, -1.0]), &w).unwrap();
        assert!((t - 2f64.ln()).abs() < 1e-12, "{t}");
        assert!(matches!(
            singularity_time(&w, &CohomologyClass::diagonal(&[1.0, 0.0])),
            Err(Error::NotKahler(_))
        ));
    }

    #[test]
    fn mixed_discriminant_examples() {
        let a = CohomologyClass::diagonal(&[1.0, 0.0]);
        let i = CohomologyClass::identity(2);
        assert_eq!(mixed_discriminant(&[&a, &i]).unwrap(), 0.5);
        assert_eq!(mixed_discriminant(&[&i, &i]).unwrap(), 1.0);
        let h = hermitian(2, &[(2.0, 0.0), (0.0, 1.0), (0.0, -1.0), (2.0, 0.0)]);
        assert_eq!(mixed_discriminant(&[&h, &h]).unwrap(), h.det());
        assert!(matches!(mixed_discriminant(&[&i]), Err(Error::ArgumentCount { .. })));
    }

    #[test]
    fn collapse_order_examples() {
        let w = CohomologyClass::identity(2);
        assert_eq!(collapse_order(&w, &w).unwrap(), 0);
        assert_eq!(collapse_order(&CohomologyClass::zero(2), &w).unwrap(), 2);
        assert_eq!(collapse_order(&CohomologyClass::diagonal(&[1.0, 0.0]), &w).unwrap(), 1);
        assert!(matches!(
            collapse_order(&CohomologyClass::diagonal(&[2.0, -1.0]), &w),
            Err(Error::NotNef(_))
        ));
        let w3 = CohomologyClass::identity(3);
        assert_eq!(collapse_order(&CohomologyClass::diagonal(&[1.0, 0.0, 0.0]), &w3).unwrap(), 2);
    }

    #[test]
    fn volume_polynomial_examples() {
        let w = CohomologyClass::identity(2);
        let p = volume_polynomial(&CohomologyClass::diagonal(&[1.0, 0.0]), &w).unwrap();
        assert_eq!(p.coefficients, vec![0.0, 1.0, 0.0]);
        let p = volume_polynomial(&w, &w.scaled(2.0)).unwrap();
        assert_eq!(p.coefficients, vec![1.0, 2.0, 1.0]);
        let p = volume_polynomial(&CohomologyClass::zero(2), &w).unwrap();
        assert_eq!(p.coefficients, vec![0.0, 0.0, 1.0]);
        assert!((p.at_time(1.0) - (-2.0f64).exp()).abs() < 1e-16);
    }
}
