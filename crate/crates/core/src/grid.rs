//! Periodic-grid calculus on the flat torus `C^n / (2π Z)^{2n}`.
//!
//! Fields depend only on a declared subset of the `2n` real axes. Matrices
//! stay `n × n` regardless of how many axes are active; derivatives along
//! inactive axes vanish identically.
//!
//! Conventions: `z_j = x_j + i y_j`, `∂_{z_j} = ½(∂_{x_j} − i ∂_{y_j})`, and the
//! complex Hessian is `H_{jk̄} = ∂_{z_j} ∂_{z̄_k} φ`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::class::CohomologyClass;
use crate::error::{Error, Result};
use crate::herm::{self, C64};

/// Differentiation backend.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    /// Fourier multipliers (Nyquist mode dropped for odd-order symbols).
    #[default]
    Spectral,
    /// Fourth-order centered finite differences.
    Fd4,
}

impl FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spectral" => Ok(Backend::Spectral),
            "fd4" => Ok(Backend::Fd4),
            other => Err(Error::Config(format!("unknown backend `{other}` (expected spectral|fd4)"))),
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backend::Spectral => "spectral",
            Backend::Fd4 => "fd4",
        })
    }
}

/// One of the real coordinate axes; indices are zero-based, names one-based (`x1`, `y2`, ...).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RealAxis {
    X(usize),
    Y(usize),
}

impl RealAxis {
    /// Position among the `2n` real axes: `x_j ↦ j`, `y_j ↦ n + j`.
    pub fn index(self, n: usize) -> usize {
        match self {
            RealAxis::X(j) => j,
            RealAxis::Y(j) => n + j,
        }
    }

    pub fn from_index(index: usize, n: usize) -> Self {
        if index < n {
            RealAxis::X(index)
        } else {
            RealAxis::Y(index - n)
        }
    }

    pub fn complex_index(self) -> usize {
        match self {
            RealAxis::X(j) | RealAxis::Y(j) => j,
        }
    }
}

impl fmt::Display for RealAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RealAxis::X(j) => write!(f, "x{}", j + 1),
            RealAxis::Y(j) => write!(f, "y{}", j + 1),
        }
    }
}

impl FromStr for RealAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("invalid axis name `{s}` (expected x1, y1, x2, ...)"));
        let (head, tail) = s.split_at(s.char_indices().nth(1).map_or(s.len(), |(i, _)| i));
        let j: usize = tail.parse().map_err(|_| bad())?;
        if j == 0 {
            return Err(bad());
        }
        match head {
            "x" => Ok(RealAxis::X(j - 1)),
            "y" => Ok(RealAxis::Y(j - 1)),
            _ => Err(bad()),
        }
    }
}

/// Forward and inverse plans.
type FftPair = (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>);

/// Uniform periodic grid over the active real axes, period 2π each.
pub struct PeriodicGrid {
    n: usize,
    active: Vec<RealAxis>,
    resolution: usize,
    backend: Backend,
    points: usize,
    /// active position of each real axis, if active
    slot: Vec<Option<usize>>,
    wavenumbers: Vec<f64>,
    fft: Option<FftPair>,
}

impl fmt::Debug for PeriodicGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PeriodicGrid")
            .field("n", &self.n)
            .field("active", &self.active)
            .field("resolution", &self.resolution)
            .field("backend", &self.backend)
            .finish()
    }
}

impl PartialEq for PeriodicGrid {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n
            && self.active == other.active
            && self.resolution == other.resolution
            && self.backend == other.backend
    }
}

impl PeriodicGrid {
    pub fn new(n: usize, active: &[RealAxis], resolution: usize, backend: Backend) -> Result<Arc<Self>> {
        if n == 0 {
            return Err(Error::InvalidGrid("complex dimension must be at least 1".into()));
        }
        if resolution < 4 || !resolution.is_multiple_of(2) {
            return Err(Error::InvalidGrid(format!(
                "resolution must be even and at least 4, got {resolution}"
            )));
        }
        let mut active = active.to_vec();
        active.sort_by_key(|a| a.index(n));
        active.dedup();
        if let Some(bad) = active.iter().find(|a| a.complex_index() >= n) {
            return Err(Error::InvalidGrid(format!("axis {bad} exceeds complex dimension {n}")));
        }
        let d = active.len();
        let points = resolution
            .checked_pow(d as u32)
            .filter(|&p| p <= 1 << 24)
            .ok_or_else(|| Error::InvalidGrid("grid too large".into()))?;
        let mut slot = vec![None; 2 * n];
        for (pos, a) in active.iter().enumerate() {
            slot[a.index(n)] = Some(pos);
        }
        let half = resolution / 2;
        let wavenumbers = (0..resolution)
            .map(|j| match j.cmp(&half) {
                std::cmp::Ordering::Less => j as f64,
                std::cmp::Ordering::Equal => 0.0,
                std::cmp::Ordering::Greater => j as f64 - resolution as f64,
            })
            .collect();
        let fft = (backend == Backend::Spectral && d > 0).then(|| {
            let mut planner = FftPlanner::new();
            (planner.plan_fft_forward(resolution), planner.plan_fft_inverse(resolution))
        });
        Ok(Arc::new(Self {
            n,
            active,
            resolution,
            backend,
            points,
            slot,
            wavenumbers,
            fft,
        }))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn active_axes(&self) -> &[RealAxis] {
        &self.active
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }

    pub fn num_points(&self) -> usize {
        self.points
    }

    pub fn spacing(&self) -> f64 {
        std::f64::consts::TAU / self.resolution as f64
    }

    pub fn is_active(&self, axis: RealAxis) -> bool {
        self.slot.get(axis.index(self.n)).copied().flatten().is_some()
    }

    /// Same grid with a different differentiation backend.
    pub fn with_backend(&self, backend: Backend) -> Result<Arc<Self>> {
        Self::new(self.n, &self.active, self.resolution, backend)
    }

    fn stride(&self, pos: usize) -> usize {
        self.resolution.pow((self.active.len() - 1 - pos) as u32)
    }

    /// Real coordinates (length `2n`, inactive axes at 0) of a grid point.
    pub fn coordinates(&self, point: usize) -> Vec<f64> {
        let mut x = vec![0.0; 2 * self.n];
        let h = self.spacing();
        for (pos, a) in self.active.iter().enumerate() {
            let j = (point / self.stride(pos)) % self.resolution;
            x[a.index(self.n)] = j as f64 * h;
        }
        x
    }

    fn apply_along_axes(&self, data: &mut [C64], inverse: bool) {
        let Some((fwd, inv)) = &self.fft else { return };
        let plan = if inverse { inv } else { fwd };
        let nres = self.resolution;
        let mut line = vec![C64::new(0.0, 0.0); nres];
        let mut scratch = vec![C64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        for pos in 0..self.active.len() {
            let stride = self.stride(pos);
            let block = stride * nres;
            for outer in (0..self.points).step_by(block) {
                for inner in 0..stride {
                    let base = outer + inner;
                    for (k, slot) in line.iter_mut().enumerate() {
                        *slot = data[base + k * stride];
                    }
                    plan.process_with_scratch(&mut line, &mut scratch);
                    for (k, v) in line.iter().enumerate() {
                        data[base + k * stride] = *v;
                    }
                }
            }
        }
        if inverse {
            let scale = 1.0 / self.points as f64;
            data.iter_mut().for_each(|v| *v *= scale);
        }
    }

    fn wavenumber(&self, point: usize, pos: usize) -> f64 {
        self.wavenumbers[(point / self.stride(pos)) % self.resolution]
    }

    fn shifted(&self, point: usize, pos: usize, offset: isize) -> usize {
        let stride = self.stride(pos);
        let j = (point / stride) % self.resolution;
        let nres = self.resolution as isize;
        let jn = ((j as isize + offset).rem_euclid(nres)) as usize;
        point - j * stride + jn * stride
    }

    fn fd4_first(&self, values: &[f64], pos: usize) -> Vec<f64> {
        let inv = 1.0 / (12.0 * self.spacing());
        (0..self.points)
            .map(|p| {
                let f = |o| values[self.shifted(p, pos, o)];
                (f(-2) - 8.0 * f(-1) + 8.0 * f(1) - f(2)) * inv
            })
            .collect()
    }

    fn fd4_second(&self, values: &[f64], pos: usize) -> Vec<f64> {
        let h = self.spacing();
        let inv = 1.0 / (12.0 * h * h);
        (0..self.points)
            .map(|p| {
                let f = |o| values[self.shifted(p, pos, o)];
                (-f(-2) + 16.0 * f(-1) - 30.0 * f(0) + 16.0 * f(1) - f(2)) * inv
            })
            .collect()
    }

    /// First partial derivative along an active axis (zero along inactive ones).
    pub fn first_partial(&self, values: &[f64], axis: RealAxis) -> Vec<f64> {
        let Some(pos) = self.slot[axis.index(self.n)] else {
            return vec![0.0; self.points];
        };
        match self.backend {
            Backend::Fd4 => self.fd4_first(values, pos),
            Backend::Spectral => {
                let mut hat: Vec<C64> = values.iter().map(|&v| C64::new(v, 0.0)).collect();
                self.apply_along_axes(&mut hat, false);
                for (p, z) in hat.iter_mut().enumerate() {
                    *z *= C64::new(0.0, self.wavenumber(p, pos));
                }
                self.apply_along_axes(&mut hat, true);
                hat.into_iter().map(|z| z.re).collect()
            }
        }
    }

    /// Second partials `∂_a ∂_b` for all active position pairs `a ≤ b`, in
    /// the order produced by [`pair_index`].
    fn second_partials(&self, values: &[f64]) -> Vec<Vec<f64>> {
        let d = self.active.len();
        let mut out = Vec::with_capacity(d * (d + 1) / 2);
        match self.backend {
            Backend::Fd4 => {
                let firsts: Vec<Vec<f64>> = (0..d).map(|a| self.fd4_first(values, a)).collect();
                for (a, first) in firsts.iter().enumerate() {
                    for b in a..d {
                        out.push(if a == b {
                            self.fd4_second(values, a)
                        } else {
                            self.fd4_first(first, b)
                        });
                    }
                }
            }
            Backend::Spectral => {
                let mut hat: Vec<C64> = values.iter().map(|&v| C64::new(v, 0.0)).collect();
                self.apply_along_axes(&mut hat, false);
                let mut buf = hat.clone();
                for a in 0..d {
                    for b in a..d {
                        for (p, z) in buf.iter_mut().enumerate() {
                            *z = hat[p] * (-self.wavenumber(p, a) * self.wavenumber(p, b));
                        }
                        self.apply_along_axes(&mut buf, true);
                        out.push(buf.iter().map(|z| z.re).collect());
                    }
                }
            }
        }
        out
    }

    /// Second partial derivative `∂_a ∂_b` of grid values.
    pub fn second_partial(&self, values: &[f64], a: RealAxis, b: RealAxis) -> Vec<f64> {
        let (Some(pa), Some(pb)) = (self.slot[a.index(self.n)], self.slot[b.index(self.n)]) else {
            return vec![0.0; self.points];
        };
        let all = self.second_partials(values);
        all[pair_index(pa.min(pb), pa.max(pb), self.active.len())].clone()
    }
}

fn pair_index(a: usize, b: usize, d: usize) -> usize {
    // rows a = 0..d, columns b = a..d
    a * d - a * (a + 1) / 2 + b
}

fn same_grid(a: &Arc<PeriodicGrid>, b: &Arc<PeriodicGrid>) -> Result<()> {
    if Arc::ptr_eq(a, b) || **a == **b {
        Ok(())
    } else {
        Err(Error::GridMismatch)
    }
}

/// Real scalar field sampled on a periodic grid.
#[derive(Clone, Debug)]
pub struct ScalarField {
    grid: Arc<PeriodicGrid>,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Arc<PeriodicGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.num_points() {
            return Err(Error::DimensionMismatch {
                expected: grid.num_points(),
                found: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: Arc<PeriodicGrid>, c: f64) -> Self {
        let values = vec![c; grid.num_points()];
        Self { grid, values }
    }

    pub fn zeros(grid: Arc<PeriodicGrid>) -> Self {
        Self::constant(grid, 0.0)
    }

    /// Samples `f` at each grid point; `f` receives all `2n` real coordinates.
    pub fn from_fn(grid: Arc<PeriodicGrid>, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let values = (0..grid.num_points()).map(|p| f(&grid.coordinates(p))).collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Arc<PeriodicGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn argmin(&self) -> usize {
        (0..self.values.len())
            .min_by(|&i, &j| self.values[i].total_cmp(&self.values[j]))
            .unwrap_or(0)
    }

    /// Pointwise map; the result is checked for finiteness.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.grid.clone(), self.values.iter().map(|&v| f(v)).collect())
    }

    /// Pointwise combination of two fields on the same grid.
    pub fn zip_with(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        same_grid(&self.grid, &other.grid)?;
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        Self::new(self.grid.clone(), values)
    }

    fn ensure_finite(&self) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::NonFinite(i)),
            None => Ok(()),
        }
    }

    /// True if the field does not vary over the grid.
    pub fn is_constant(&self) -> bool {
        self.values.iter().all(|&v| v == self.values[0])
    }
}

/// Field of `n × n` hermitian matrices (row-major per point).
#[derive(Clone, Debug)]
pub struct HermitianMatrixField {
    grid: Arc<PeriodicGrid>,
    values: Vec<C64>,
}

impl HermitianMatrixField {
    const HERMITIAN_TOL: f64 = 1e-12;

    pub fn new(grid: Arc<PeriodicGrid>, values: Vec<C64>) -> Result<Self> {
        let n = grid.n();
        let expected = grid.num_points() * n * n;
        if values.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: values.len(),
            });
        }
        for m in values.chunks(n * n) {
            let dev = herm::hermitian_deviation(m, n);
            if !(dev <= Self::HERMITIAN_TOL) {
                return Err(Error::NotHermitian(dev));
            }
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: Arc<PeriodicGrid>, class: &CohomologyClass) -> Result<Self> {
        if class.n() != grid.n() {
            return Err(Error::DimensionMismatch {
                expected: grid.n(),
                found: class.n(),
            });
        }
        let values = class.entries().repeat(grid.num_points());
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &Arc<PeriodicGrid> {
        &self.grid
    }

    pub fn n(&self) -> usize {
        self.grid.n()
    }

    /// Matrix entries at one grid point.
    pub fn at(&self, point: usize) -> &[C64] {
        let nn = self.n() * self.n();
        &self.values[point * nn..(point + 1) * nn]
    }

    pub fn points(&self) -> impl Iterator<Item = &[C64]> {
        let nn = self.n() * self.n();
        self.values.chunks(nn)
    }

    /// Component `(j, k̄)` as a complex sequence over the grid.
    pub fn component(&self, j: usize, k: usize) -> Vec<C64> {
        let n = self.n();
        self.points().map(|m| m[j * n + k]).collect()
    }

    /// Grid mean of every matrix entry.
    pub fn mean_matrix(&self) -> Vec<C64> {
        let n = self.n();
        let mut acc = vec![C64::new(0.0, 0.0); n * n];
        for m in self.points() {
            for (a, v) in acc.iter_mut().zip(m) {
                *a += v;
            }
        }
        let inv = 1.0 / self.grid.num_points() as f64;
        acc.iter().map(|a| a * inv).collect()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }

    /// Largest pointwise |entry| difference to another field.
    pub fn max_abs_diff(&self, other: &HermitianMatrixField) -> Result<f64> {
        same_grid(&self.grid, &other.grid)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max))
    }

    pub fn hermitian_deviation(&self) -> f64 {
        let n = self.n();
        self.points().map(|m| herm::hermitian_deviation(m, n)).fold(0.0, f64::max)
    }
}

/// Coefficient matrix of `i∂∂̄φ`.
pub fn complex_hessian(phi: &ScalarField) -> Result<HermitianMatrixField> {
    phi.ensure_finite()?;
    let grid = phi.grid();
    let n = grid.n();
    let d = grid.active.len();
    let partials = grid.second_partials(phi.values());
    let d2 = |r: usize, s: usize| -> Option<&Vec<f64>> {
        let (a, b) = (grid.slot[r]?, grid.slot[s]?);
        Some(&partials[pair_index(a.min(b), a.max(b), d)])
    };
    let mut values = vec![C64::new(0.0, 0.0); grid.num_points() * n * n];
    for j in 0..n {
        for k in 0..n {
            let (xj, yj, xk, yk) = (j, n + j, k, n + k);
            let terms = [
                (d2(xj, xk), 0.25, false),
                (d2(yj, yk), 0.25, false),
                (d2(xj, yk), 0.25, true),
                (d2(yj, xk), -0.25, true),
            ];
            for (src, coef, imaginary) in terms {
                let Some(src) = src else { continue };
                for (p, v) in src.iter().enumerate() {
                    let slot = &mut values[p * n * n + j * n + k];
                    if imaginary {
                        slot.im += coef * v;
                    } else {
                        slot.re += coef * v;
                    }
                }
            }
        }
    }
    Ok(HermitianMatrixField {
        grid: grid.clone(),
        values,
    })
}

/// Constant representative plus potential: `A + i∂∂̄φ`.
pub fn form_field(class: &CohomologyClass, phi: &ScalarField) -> Result<HermitianMatrixField> {
    let n = phi.grid().n();
    if class.n() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: class.n(),
        });
    }
    let mut h = complex_hessian(phi)?;
    let a = class.entries();
    for m in h.values.chunks_mut(n * n) {
        for (v, c) in m.iter_mut().zip(a) {
            *v += c;
        }
    }
    Ok(h)
}

/// Pointwise determinant (real for hermitian input).
pub fn ma_determinant(g: &HermitianMatrixField) -> ScalarField {
    let n = g.n();
    ScalarField {
        grid: g.grid.clone(),
        values: g.points().map(|m| herm::det(m, n).re).collect(),
    }
}

/// Pointwise smallest eigenvalue.
pub fn min_eigenvalue(g: &HermitianMatrixField) -> ScalarField {
    let n = g.n();
    ScalarField {
        grid: g.grid.clone(),
        values: g.points().map(|m| herm::min_eigenvalue(m, n)).collect(),
    }
}

fn ensure_positive(g: &HermitianMatrixField) -> Result<()> {
    let n = g.n();
    for (index, m) in g.points().enumerate() {
        let min_eig = herm::min_eigenvalue(m, n);
        if !(min_eig > 0.0) {
            return Err(Error::GuardBreach { min_eig, index });
        }
    }
    Ok(())
}

/// Trace of `α` with respect to the metric `g`: `g^{k̄j} α_{jk̄}`.
pub fn trace_pair(g: &HermitianMatrixField, alpha: &HermitianMatrixField) -> Result<ScalarField> {
    same_grid(&g.grid, &alpha.grid)?;
    ensure_positive(g)?;
    let n = g.n();
    let mut values = Vec::with_capacity(g.grid.num_points());
    for (index, (m, a)) in g.points().zip(alpha.points()).enumerate() {
        let inv = herm::inverse(m, n).ok_or(Error::GuardBreach { min_eig: 0.0, index })?;
        values.push(herm::trace_product(&inv, a, n).re);
    }
    ScalarField::new(g.grid.clone(), values)
}

/// Metric Laplacian `Δf = g^{k̄j} ∂_j ∂_k̄ f`.
pub fn laplacian(g: &HermitianMatrixField, f: &ScalarField) -> Result<ScalarField> {
    trace_pair(g, &complex_hessian(f)?)
}

/// `Ric(Ω) = −i∂∂̄ log ρ` for `Ω = ρ dμ`.
pub fn ricci_of_density(rho: &ScalarField) -> Result<HermitianMatrixField> {
    rho.ensure_finite()?;
    if let Some((index, &value)) = rho.values().iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
        return Err(Error::NonPositiveDensity { index, value });
    }
    let log_rho = rho.map(f64::ln)?;
    Ok(complex_hessian(&log_rho)?.scaled(-1.0))
}

/// `Ric(g) = −i∂∂̄ log det g`.
pub fn ricci_of_metric(g: &HermitianMatrixField) -> Result<HermitianMatrixField> {
    ensure_positive(g)?;
    let log_det = ma_determinant(g).map(f64::ln)?;
    Ok(complex_hessian(&log_det)?.scaled(-1.0))
}

/// Normalized-Haar integral `∫ f w dμ` (grid average); `w` defaults to 1.
pub fn integrate(f: &ScalarField, w: Option<&ScalarField>) -> Result<f64> {
    match w {
        None => Ok(f.mean()),
        Some(w) => {
            same_grid(f.grid(), w.grid())?;
            if let Some(i) = w.values().iter().position(|&v| !(v >= 0.0)) {
                return Err(Error::NonPositiveDensity {
                    index: i,
                    value: w.values()[i],
                });
            }
            let s: f64 = f.values().iter().zip(w.values()).map(|(a, b)| a * b).sum();
            Ok(s / f.values().len() as f64)
        }
    }
}
