//! Grids, quadrature and the discrete Laplacian.
//!
//! Two quadratures live side by side. `integrate` is the composite trapezoid
//! rule. The energy functionals use cell volumes instead, because with those
//! weights the edge-sum gradient energy and the Laplacian stencil are exact
//! discrete adjoints, so solver residuals are true gradients of the energies.
//! On one-dimensional grids the two rules coincide for fields that vanish on
//! the Dirichlet boundary.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Dimension, half-exponent and coupling of the system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProblemParams {
    pub n: usize,
    pub p: f64,
    pub beta: f64,
}

impl ProblemParams {
    pub fn new(n: usize, p: f64, beta: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::validation("dimension must be at least 1"));
        }
        if !p.is_finite() || 2.0 * p <= 2.0 {
            return Err(Error::validation(format!("need 2p > 2, got 2p = {}", 2.0 * p)));
        }
        if n >= 3 {
            let crit = 2.0 * n as f64 / (n as f64 - 2.0);
            if 2.0 * p >= crit {
                return Err(Error::validation(format!(
                    "need 2p < {crit} in dimension {n}, got 2p = {}",
                    2.0 * p
                )));
            }
        }
        if !beta.is_finite() {
            return Err(Error::validation("coupling must be finite"));
        }
        Ok(Self { n, p, beta })
    }

    pub fn with_beta(&self, beta: f64) -> Self {
        Self { beta, ..*self }
    }

    /// Critical Sobolev power 2N/(N-2), if finite.
    pub fn critical_power(&self) -> Option<f64> {
        (self.n >= 3).then(|| 2.0 * self.n as f64 / (self.n as f64 - 2.0))
    }

    /// Exponent of alpha in the ground-energy scaling law.
    pub fn scaling_exponent(&self) -> f64 {
        self.p / (self.p - 1.0) - self.n as f64 / 2.0
    }
}

/// Surface measure of the unit sphere in R^n (2 for n = 1).
pub fn unit_sphere_area(n: usize) -> f64 {
    2.0 * PI.powf(n as f64 / 2.0) / gamma_half(n)
}

// Gamma(n/2) by the half-integer recurrence.
fn gamma_half(n: usize) -> f64 {
    let (mut g, mut k) = if n.is_multiple_of(2) { (1.0, 2) } else { (PI.sqrt(), 1) };
    while k < n {
        g *= k as f64 / 2.0;
        k += 2;
    }
    g
}

pub type Point = [f64; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct RadialGrid {
    dim: usize,
    r_max: f64,
    n: usize,
    rows: Vec<(f64, f64, f64)>,
    vols: Vec<f64>,
}

impl RadialGrid {
    pub fn new(dim: usize, r_max: f64, n: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::validation("radial grid dimension must be at least 1"));
        }
        if !(r_max.is_finite() && r_max > 0.0) {
            return Err(Error::validation("r_max must be positive"));
        }
        if n < 16 {
            return Err(Error::validation(format!("radial grid needs n >= 16, got {n}")));
        }
        let mut g = Self {
            dim,
            r_max,
            n,
            rows: Vec::new(),
            vols: Vec::new(),
        };
        g.vols = (0..n).map(|i| g.volume(i)).collect();
        g.rows = (0..n).map(|i| g.row(i)).collect();
        Ok(g)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn r_max(&self) -> f64 {
        self.r_max
    }
    pub fn len(&self) -> usize {
        self.n
    }
    pub fn is_empty(&self) -> bool {
        false
    }
    pub fn h(&self) -> f64 {
        self.r_max / (self.n - 1) as f64
    }
    pub fn r(&self, i: usize) -> f64 {
        i as f64 * self.h()
    }

    fn face(&self, i: usize) -> f64 {
        // area factor at r_i + h/2, without the sphere constant
        (self.r(i) + 0.5 * self.h()).powi(self.dim as i32 - 1)
    }

    fn volume(&self, i: usize) -> f64 {
        if let Some(v) = self.vols.get(i) {
            return *v;
        }
        let h = self.h();
        let d = self.dim as i32;
        let hi = (self.r(i) + 0.5 * h).powi(d);
        let lo = (self.r(i) - 0.5 * h).max(0.0).powi(d);
        unit_sphere_area(self.dim) * (hi - lo) / self.dim as f64
    }

    /// Laplacian row i as (lower, diag, upper) coefficients.
    fn row(&self, i: usize) -> (f64, f64, f64) {
        if let Some(r) = self.rows.get(i) {
            return *r;
        }
        let h = self.h();
        let scale = unit_sphere_area(self.dim) / (h * self.volume(i));
        let up = self.face(i) * scale;
        let down = if i == 0 { 0.0 } else { self.face(i - 1) * scale };
        (down, -(up + down), up)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoxGrid {
    dim: usize,
    half_width: f64,
    n_per_axis: usize,
}

impl BoxGrid {
    pub fn new(dim: usize, half_width: f64, n_per_axis: usize) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::validation(format!("box grids need 1 <= N <= 3, got {dim}")));
        }
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::validation("box half-width must be positive"));
        }
        if n_per_axis < 5 {
            return Err(Error::validation(format!(
                "box grid needs at least 5 points per axis, got {n_per_axis}"
            )));
        }
        let total = (n_per_axis as u128).pow(dim as u32);
        if total > (1u128 << 31) {
            return Err(Error::validation(format!("box grid with {total} points is too large")));
        }
        Ok(Self {
            dim,
            half_width,
            n_per_axis,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn half_width(&self) -> f64 {
        self.half_width
    }
    pub fn n_per_axis(&self) -> usize {
        self.n_per_axis
    }
    pub fn len(&self) -> usize {
        self.n_per_axis.pow(self.dim as u32)
    }
    pub fn is_empty(&self) -> bool {
        false
    }
    pub fn h(&self) -> f64 {
        2.0 * self.half_width / (self.n_per_axis - 1) as f64
    }
    pub fn axis(&self, k: usize) -> f64 {
        -self.half_width + k as f64 * self.h()
    }

    /// Multi-index of a flat index; the first axis varies slowest.
    pub fn unflatten(&self, mut i: usize) -> [usize; 3] {
        let n = self.n_per_axis;
        let mut idx = [0usize; 3];
        for d in (0..self.dim).rev() {
            idx[d] = i % n;
            i /= n;
        }
        idx
    }

    pub fn flatten(&self, idx: [usize; 3]) -> usize {
        (0..self.dim).fold(0, |acc, d| acc * self.n_per_axis + idx[d])
    }

    fn stride(&self, d: usize) -> usize {
        self.n_per_axis.pow((self.dim - 1 - d) as u32)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Grid {
    Radial(RadialGrid),
    Box(BoxGrid),
}

impl From<RadialGrid> for Grid {
    fn from(g: RadialGrid) -> Self {
        Grid::Radial(g)
    }
}

impl From<BoxGrid> for Grid {
    fn from(g: BoxGrid) -> Self {
        Grid::Box(g)
    }
}

impl Grid {
    pub fn len(&self) -> usize {
        match self {
            Grid::Radial(g) => g.len(),
            Grid::Box(g) => g.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        match self {
            Grid::Radial(g) => g.dim,
            Grid::Box(g) => g.dim,
        }
    }

    pub fn h(&self) -> f64 {
        match self {
            Grid::Radial(g) => g.h(),
            Grid::Box(g) => g.h(),
        }
    }

    pub fn is_one_dimensional_stencil(&self) -> bool {
        match self {
            Grid::Radial(_) => true,
            Grid::Box(g) => g.dim == 1,
        }
    }

    /// Physical position of node i. Radial nodes sit on the first axis.
    pub fn point(&self, i: usize) -> Point {
        let mut x = [0.0; 3];
        match self {
            Grid::Radial(g) => x[0] = g.r(i),
            Grid::Box(g) => {
                let idx = g.unflatten(i);
                for d in 0..g.dim {
                    x[d] = g.axis(idx[d]);
                }
            }
        }
        x
    }

    /// Nodes where homogeneous Dirichlet data are imposed by the solvers.
    pub fn is_dirichlet(&self, i: usize) -> bool {
        match self {
            Grid::Radial(g) => i == g.n - 1,
            Grid::Box(g) => {
                let idx = g.unflatten(i);
                (0..g.dim).any(|d| idx[d] == 0 || idx[d] == g.n_per_axis - 1)
            }
        }
    }

    /// Composite trapezoid weights (full-space measure).
    pub fn weights(&self) -> Vec<f64> {
        match self {
            Grid::Radial(g) => {
                let omega = unit_sphere_area(g.dim);
                let h = g.h();
                (0..g.n)
                    .map(|i| {
                        let end = if i == 0 || i == g.n - 1 { 0.5 } else { 1.0 };
                        end * omega * h * g.r(i).powi(g.dim as i32 - 1)
                    })
                    .collect()
            }
            Grid::Box(g) => {
                let h = g.h();
                (0..g.len())
                    .map(|i| {
                        let idx = g.unflatten(i);
                        (0..g.dim)
                            .map(|d| {
                                if idx[d] == 0 || idx[d] == g.n_per_axis - 1 {
                                    0.5 * h
                                } else {
                                    h
                                }
                            })
                            .product()
                    })
                    .collect()
            }
        }
    }

    /// Cell volumes paired with the Laplacian stencil.
    pub fn volumes(&self) -> Vec<f64> {
        match self {
            Grid::Radial(g) => g.vols.clone(),
            Grid::Box(g) => vec![g.h().powi(g.dim as i32); g.len()],
        }
    }

    /// Coefficients (lower, diag, upper) of the Laplacian on a 1-D stencil.
    pub fn tridiagonal_row(&self, i: usize) -> (f64, f64, f64) {
        match self {
            Grid::Radial(g) => g.row(i),
            Grid::Box(g) => {
                assert_eq!(g.dim, 1, "tridiagonal rows exist only for 1-D grids");
                let h2 = g.h() * g.h();
                (1.0 / h2, -2.0 / h2, 1.0 / h2)
            }
        }
    }

    /// Diagonal entry of the Laplacian at node i.
    pub fn laplacian_diagonal(&self, i: usize) -> f64 {
        match self {
            Grid::Radial(g) => g.row(i).1,
            Grid::Box(g) => -2.0 * g.dim as f64 / (g.h() * g.h()),
        }
    }

    pub fn apply_laplacian(&self, f: &[f64], out: &mut [f64]) {
        debug_assert_eq!(f.len(), self.len());
        match self {
            Grid::Radial(g) => {
                let n = g.n;
                for i in 0..n {
                    let (lo, di, up) = g.row(i);
                    let left = if i == 0 { 0.0 } else { f[i - 1] };
                    let right = if i + 1 < n { f[i + 1] } else { 0.0 };
                    out[i] = lo * left + di * f[i] + up * right;
                }
            }
            Grid::Box(g) => {
                let n = g.n_per_axis;
                let inv = 1.0 / (g.h() * g.h());
                for (i, o) in out.iter_mut().enumerate() {
                    let idx = g.unflatten(i);
                    let mut acc = -2.0 * g.dim as f64 * f[i];
                    for d in 0..g.dim {
                        let s = g.stride(d);
                        if idx[d] > 0 {
                            acc += f[i - s];
                        }
                        if idx[d] + 1 < n {
                            acc += f[i + s];
                        }
                    }
                    *o = acc * inv;
                }
            }
        }
    }

    /// Edge-sum approximation of the integral of |grad f|^2, with zero
    /// ghost values beyond the outer boundary.
    pub fn gradient_energy(&self, f: &[f64]) -> f64 {
        match self {
            Grid::Radial(g) => {
                let omega = unit_sphere_area(g.dim);
                let h = g.h();
                (0..g.n)
                    .map(|i| {
                        let next = if i + 1 < g.n { f[i + 1] } else { 0.0 };
                        g.face(i) * (next - f[i]).powi(2)
                    })
                    .sum::<f64>()
                    * omega
                    / h
            }
            Grid::Box(g) => {
                let n = g.n_per_axis;
                let mut acc = 0.0;
                for i in 0..g.len() {
                    let idx = g.unflatten(i);
                    for d in 0..g.dim {
                        let s = g.stride(d);
                        let next = if idx[d] + 1 < n { f[i + s] } else { 0.0 };
                        acc += (next - f[i]).powi(2);
                        if idx[d] == 0 {
                            acc += f[i] * f[i];
                        }
                    }
                }
                acc * g.h().powi(g.dim as i32 - 2)
            }
        }
    }

    /// Linear (radial) or multilinear (box) interpolation; zero off the grid.
    pub fn interpolate(&self, f: &[f64], x: &[f64]) -> f64 {
        match self {
            Grid::Radial(g) => {
                let r = x.iter().take(g.dim).map(|v| v * v).sum::<f64>().sqrt();
                if r >= g.r_max {
                    return 0.0;
                }
                let t = r / g.h();
                let k = (t.floor() as usize).min(g.n - 2);
                let w = t - k as f64;
                (1.0 - w) * f[k] + w * f[k + 1]
            }
            Grid::Box(g) => {
                let h = g.h();
                let n = g.n_per_axis;
                let mut base = [0usize; 3];
                let mut frac = [0.0; 3];
                for d in 0..g.dim {
                    let t = (x[d] + g.half_width) / h;
                    if t < 0.0 || t > (n - 1) as f64 {
                        return 0.0;
                    }
                    let k = (t.floor() as usize).min(n - 2);
                    base[d] = k;
                    frac[d] = t - k as f64;
                }
                let mut acc = 0.0;
                for corner in 0..(1usize << g.dim) {
                    let mut idx = [0usize; 3];
                    let mut w = 1.0;
                    for d in 0..g.dim {
                        let bit = (corner >> d) & 1;
                        idx[d] = base[d] + bit;
                        w *= if bit == 1 { frac[d] } else { 1.0 - frac[d] };
                    }
                    if w != 0.0 {
                        acc += w * f[g.flatten(idx)];
                    }
                }
                acc
            }
        }
    }
}

/// Values of a function on a shared grid.
#[derive(Debug, Clone)]
pub struct ScalarField {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::validation(format!(
                "field has {} values for a grid of {} points",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("field contains non-finite values"));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Arc<Grid>) -> Self {
        let values = vec![0.0; grid.len()];
        Self { grid, values }
    }

    pub fn from_fn(grid: Arc<Grid>, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(&grid.point(i))).collect();
        Self { grid, values }
    }

    pub(crate) fn from_raw(grid: Arc<Grid>, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_raw(self.grid.clone(), self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn scaled(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    pub fn same_grid(&self, other: &ScalarField) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid
    }

    pub fn at(&self, x: &[f64]) -> f64 {
        self.grid.interpolate(&self.values, x)
    }
}

/// Two components on the same grid.
#[derive(Debug, Clone)]
pub struct FieldPair {
    pub u1: ScalarField,
    pub u2: ScalarField,
}

impl FieldPair {
    pub fn new(u1: ScalarField, u2: ScalarField) -> Result<Self> {
        if !u1.same_grid(&u2) {
            return Err(Error::validation("pair components live on different grids"));
        }
        Ok(Self { u1, u2 })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.u1.grid()
    }

    pub fn swapped(&self) -> Self {
        Self {
            u1: self.u2.clone(),
            u2: self.u1.clone(),
        }
    }
}

pub fn laplacian(f: &ScalarField) -> Result<ScalarField> {
    let small = match f.grid.as_ref() {
        Grid::Radial(g) => g.len() < 5,
        Grid::Box(g) => g.n_per_axis() < 5,
    };
    if small {
        return Err(Error::validation("grid too small for the Laplacian stencil"));
    }
    let mut out = vec![0.0; f.values.len()];
    f.grid.apply_laplacian(&f.values, &mut out);
    Ok(ScalarField::from_raw(f.grid.clone(), out))
}

/// Trapezoid quadrature over the whole space.
pub fn integrate(f: &ScalarField) -> f64 {
    dot(&f.grid.weights(), &f.values)
}

/// Cell-volume quadrature matching the Laplacian stencil.
pub fn integrate_cells(f: &ScalarField) -> f64 {
    dot(&f.grid.volumes(), &f.values)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn cell_sum(grid: &Grid, f: impl Fn(usize) -> f64) -> f64 {
    grid.volumes().iter().enumerate().map(|(i, w)| w * f(i)).sum()
}

/// Integral of |grad f|^2.
pub fn gradient_sq(f: &ScalarField) -> f64 {
    f.grid.gradient_energy(&f.values)
}

/// The quadratic form of -Delta + alpha, in gradient form.
pub fn norm_h1_alpha(f: &ScalarField, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::validation(format!("alpha must be positive, got {alpha}")));
    }
    Ok(gradient_sq(f) + alpha * cell_sum(&f.grid, |i| f.values[i] * f.values[i]))
}

/// The same quadratic form computed as the integral of f(-Delta f) + alpha f^2.
pub fn norm_h1_alpha_by_parts(f: &ScalarField, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::validation(format!("alpha must be positive, got {alpha}")));
    }
    let lap = laplacian(f)?;
    Ok(cell_sum(&f.grid, |i| {
        f.values[i] * (alpha * f.values[i] - lap.values[i])
    }))
}

/// Integral of |f|^q.
pub fn lp_power(f: &ScalarField, q: f64) -> f64 {
    cell_sum(&f.grid, |i| f.values[i].abs().powf(q))
}
