//! The autonomous limit system `-Lap u_i + alpha_i u_i = u_i^{2p-1} + beta u_i^{p-1} u_j^p`,
//! its scalar reductions, energies and the Nehari 2x2 algebra.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{self, cell_sum, FieldPair, Grid, ProblemParams, RadialGrid, ScalarField};
use crate::linalg::{bisect, solve_tridiagonal, M2};
use crate::newton::{self, LocalTerms, NewtonOptions};

/// Sup-norm floor separating nontrivial components from vanishing ones.
pub const NONSTANDARD_FLOOR: f64 = 1e-3;

/// Label, first and second component values, and which components are free.
type Start = (String, Vec<f64>, Vec<f64>, [bool; 2]);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimitParams {
    pub params: ProblemParams,
    pub alpha1: f64,
    pub alpha2: f64,
}

impl LimitParams {
    pub fn new(params: ProblemParams, alpha1: f64, alpha2: f64) -> Result<Self> {
        if !(alpha1 > 0.0 && alpha2 > 0.0) || !alpha1.is_finite() || !alpha2.is_finite() {
            return Err(Error::validation(format!(
                "alphas must be positive, got ({alpha1}, {alpha2})"
            )));
        }
        Ok(Self { params, alpha1, alpha2 })
    }

    pub fn swapped(&self) -> Self {
        Self {
            alpha1: self.alpha2,
            alpha2: self.alpha1,
            ..*self
        }
    }
}

/// The scalar products entering the Nehari system of a pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NehariData {
    pub x1: f64,
    pub x2: f64,
    pub y1: f64,
    pub y2: f64,
    pub z: f64,
}

impl NehariData {
    pub fn of(w: &FieldPair, lp: &LimitParams) -> Result<Self> {
        let p = lp.params.p;
        let (a, b) = (w.u1.values(), w.u2.values());
        let g = w.grid();
        Ok(Self {
            x1: grid::norm_h1_alpha(&w.u1, lp.alpha1)?,
            x2: grid::norm_h1_alpha(&w.u2, lp.alpha2)?,
            y1: grid::lp_power(&w.u1, 2.0 * p),
            y2: grid::lp_power(&w.u2, 2.0 * p),
            z: cell_sum(g, |i| (a[i] * b[i]).abs().powf(p)),
        })
    }

    /// `J((t u1, s u2))` expressed through the data.
    pub fn scaled_energy(&self, p: f64, beta: f64, t: f64, s: f64) -> f64 {
        0.5 * t * t * self.x1 + 0.5 * s * s * self.x2
            - t.powf(2.0 * p) * self.y1 / (2.0 * p)
            - s.powf(2.0 * p) * self.y2 / (2.0 * p)
            - beta / p * (t * s).powf(p) * self.z
    }

    /// Relative residuals of the two Nehari equations at (t, s).
    pub fn residuals(&self, p: f64, beta: f64, t: f64, s: f64) -> [f64; 2] {
        let cross = beta * (t * s).powf(p) * self.z;
        let l1 = t * t * self.x1;
        let r1 = t.powf(2.0 * p) * self.y1 + cross;
        let l2 = s * s * self.x2;
        let r2 = s.powf(2.0 * p) * self.y2 + cross;
        [
            (l1 - r1).abs() / l1.abs().max(r1.abs()).max(1e-300),
            (l2 - r2).abs() / l2.abs().max(r2.abs()).max(1e-300),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NehariReport {
    pub data: NehariData,
    pub t: f64,
    pub s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyBreakdown {
    pub quad1: f64,
    pub quad2: f64,
    pub self1: f64,
    pub self2: f64,
    pub cross: f64,
    pub total: f64,
}

/// `||u||_alpha^2 / 2 - (1 + beta_plus) |u|_{2p}^{2p} / (2p)`.
pub fn energy_scalar(u: &ScalarField, alpha: f64, beta_plus: f64, params: &ProblemParams) -> Result<f64> {
    if beta_plus < 0.0 {
        return Err(Error::validation("beta_plus must be nonnegative"));
    }
    let p = params.p;
    Ok(0.5 * grid::norm_h1_alpha(u, alpha)? - (1.0 + beta_plus) * grid::lp_power(u, 2.0 * p) / (2.0 * p))
}

pub fn energy_coupled(w: &FieldPair, lp: &LimitParams) -> Result<EnergyBreakdown> {
    if !w.u1.same_grid(&w.u2) {
        return Err(Error::validation("fields live on different grids"));
    }
    let d = NehariData::of(w, lp)?;
    let p = lp.params.p;
    let quad1 = 0.5 * d.x1;
    let quad2 = 0.5 * d.x2;
    let self1 = -d.y1 / (2.0 * p);
    let self2 = -d.y2 / (2.0 * p);
    let cross = -lp.params.beta * d.z / p;
    Ok(EnergyBreakdown {
        quad1,
        quad2,
        self1,
        self2,
        cross,
        total: quad1 + quad2 + self1 + self2 + cross,
    })
}

/// Maximizer of `t -> J(t u)` for the scalar energy.
pub fn nehari_scale_scalar(u: &ScalarField, alpha: f64, beta_plus: f64, params: &ProblemParams) -> Result<f64> {
    let p = params.p;
    let y = (1.0 + beta_plus) * grid::lp_power(u, 2.0 * p);
    if !(y > 0.0) {
        return Err(Error::validation("field has zero L^2p norm"));
    }
    let x = grid::norm_h1_alpha(u, alpha)?;
    Ok((x / y).powf(1.0 / (2.0 * p - 2.0)))
}

/// All positive solutions (t, s) of the Nehari system, ordered by t + s.
pub fn nehari_roots(d: &NehariData, p: f64, beta: f64) -> Result<Vec<(f64, f64)>> {
    if !(d.x1 > 0.0 && d.x2 > 0.0 && d.y1 > 0.0 && d.y2 > 0.0 && d.z >= 0.0) {
        return Err(Error::validation(
            "Nehari data must have positive X, Y and nonnegative Z",
        ));
    }
    let e = 2.0 * p - 2.0;
    if beta == 0.0 || d.z == 0.0 {
        return Ok(vec![((d.x1 / d.y1).powf(1.0 / e), (d.x2 / d.y2).powf(1.0 / e))]);
    }
    if p == 2.0 {
        let det = d.y1 * d.y2 - beta * beta * d.z * d.z;
        if det == 0.0 || det.abs() <= 1e-14 * d.y1 * d.y2 {
            return Err(Error::Degenerate(format!("Y1 Y2 - beta^2 Z^2 = {det:e} vanishes")));
        }
        let t2 = (d.x1 * d.y2 - beta * d.z * d.x2) / det;
        let s2 = (d.x2 * d.y1 - beta * d.z * d.x1) / det;
        return Ok(if t2 > 0.0 && s2 > 0.0 {
            vec![(t2.sqrt(), s2.sqrt())]
        } else {
            vec![]
        });
    }
    let t_of = |x: f64| {
        let den = d.y1 + beta * d.z * x.powf(p);
        (den > 0.0).then(|| (d.x1 / den).powf(1.0 / e))
    };
    let det = d.y1 * d.y2 - beta * beta * d.z * d.z;
    if p > 2.0 && beta > 0.0 && det > 0.0 {
        let bz = beta * d.z;
        let q = (2.0 - p) / p;
        let g = |m: f64| (d.y1 / bz).powf(q) * (d.x2 / d.x1) * m.powf(q) - d.y2 / bz + det / (bz * d.y1) / (1.0 + m);
        let (mut lo, mut hi) = (-1.0f64, 1.0f64);
        while g(lo.exp()) <= 0.0 && lo > -700.0 {
            lo *= 2.0;
        }
        while g(hi.exp()) >= 0.0 && hi < 700.0 {
            hi *= 2.0;
        }
        let lm = bisect(|l| g(l.exp()), lo, hi, 1e-15)
            .ok_or_else(|| Error::solver("zero of g(M) not bracketed", f64::NAN))?;
        let x = (d.y1 / bz * lm.exp()).powf(1.0 / p);
        let t = t_of(x).ok_or_else(|| Error::solver("nonpositive Nehari scale", f64::NAN))?;
        return Ok(vec![(t, x * t)]);
    }
    // General case: all zeros of the ratio equation in x = s/t.
    let h = |lx: f64| {
        let x = lx.exp();
        d.x1 * x.powf(p - 2.0) * (d.y2 * x.powf(p) + beta * d.z) - d.x2 * (d.y1 + beta * d.z * x.powf(p))
    };
    let steps = 6000;
    let (a, b) = (-40.0f64, 40.0f64);
    let mut roots = Vec::new();
    let mut prev = (a, h(a));
    for k in 1..=steps {
        let l = a + (b - a) * k as f64 / steps as f64;
        let v = h(l);
        if prev.1 == 0.0 {
            roots.push(prev.0);
        } else if v != 0.0 && prev.1.signum() != v.signum() {
            if let Some(r) = bisect(h, prev.0, l, 1e-15) {
                roots.push(r);
            }
        }
        prev = (l, v);
    }
    let mut out: Vec<(f64, f64)> = roots
        .into_iter()
        .filter_map(|lx| {
            let x = lx.exp();
            t_of(x).map(|t| (t, x * t))
        })
        .filter(|(t, s)| t.is_finite() && s.is_finite() && *t > 0.0 && *s > 0.0)
        .collect();
    out.sort_by(|u, v| (u.0 + u.1).total_cmp(&(v.0 + v.1)));
    Ok(out)
}

/// Positive solution of the Nehari system; with several roots the one with
/// smallest t + s is returned.
pub fn solve_nehari_2x2(d: &NehariData, p: f64, beta: f64) -> Result<(f64, f64)> {
    let roots = nehari_roots(d, p, beta)?;
    let &(t, s) = roots
        .first()
        .ok_or_else(|| Error::solver("no positive Nehari root", f64::NAN))?;
    let r = d.residuals(p, beta, t, s);
    let worst = r[0].max(r[1]);
    if worst > 1e-10 {
        return Err(Error::solver("Nehari root failed the residual check", worst));
    }
    Ok((t, s))
}

/// The Nehari root maximizing `J((t u1, s u2))`.
pub fn nehari_maximizer(d: &NehariData, p: f64, beta: f64) -> Result<(f64, f64)> {
    let roots = nehari_roots(d, p, beta)?;
    roots
        .into_iter()
        .max_by(|a, b| {
            d.scaled_energy(p, beta, a.0, a.1)
                .total_cmp(&d.scaled_energy(p, beta, b.0, b.1))
        })
        .ok_or_else(|| Error::solver("no positive Nehari root", f64::NAN))
}

/// Pointwise terms of the limit system with self-interaction coefficient `a`.
struct LimitSystem {
    alpha: [f64; 2],
    p: f64,
    a: f64,
    beta: f64,
}

impl LimitSystem {
    fn nonlinearity(&self, c: usize, u: [f64; 2]) -> f64 {
        let (x, y) = (u[c].max(0.0), u[1 - c].max(0.0));
        let p = self.p;
        let mut v = self.a * x.powf(2.0 * p - 1.0);
        if self.beta != 0.0 && x > 0.0 && y > 0.0 {
            v += self.beta * x.powf(p - 1.0) * y.powf(p);
        }
        v
    }
}

impl LocalTerms for LimitSystem {
    fn eval(&self, _i: usize, u: [f64; 2]) -> ([f64; 2], M2) {
        let p = self.p;
        let mut f = [0.0; 2];
        let mut j = [[0.0; 2]; 2];
        for c in 0..2 {
            let (x, y) = (u[c].max(0.0), u[1 - c].max(0.0));
            f[c] = self.alpha[c] * u[c] - self.nonlinearity(c, u);
            let mut dd = self.alpha[c] - self.a * (2.0 * p - 1.0) * x.powf(2.0 * p - 2.0);
            let mut off = 0.0;
            if self.beta != 0.0 && x > 1e-12 && y > 0.0 {
                dd -= self.beta * (p - 1.0) * x.powf(p - 2.0) * y.powf(p);
                off = -self.beta * p * x.powf(p - 1.0) * y.powf(p - 1.0);
            }
            j[c][c] = dd;
            j[c][1 - c] = off;
        }
        (f, j)
    }
}

/// A converged critical point of the limit system from one start.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub label: String,
    pub pair: FieldPair,
    pub energy: f64,
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct CoupledGround {
    pub pair: FieldPair,
    pub energy: f64,
    pub residual: f64,
    pub candidates: Vec<Candidate>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundCase {
    /// p >= 2 and 0 < beta < 1: bound by C_{alpha1,beta} + C_{alpha2,beta}.
    Attractive,
    /// beta <= 0: bound by C_{alpha1,0} + C_{alpha2,0}.
    Repulsive,
}

#[derive(Debug, Clone, Copy)]
pub struct LowerBoundReport {
    pub case: BoundCase,
    pub energy: f64,
    pub bound: f64,
    pub margin: f64,
    pub holds: bool,
    pub t_beta: f64,
    pub s_beta: f64,
    pub maximizer_is_unit: bool,
}

/// Radial solver for the limit problem on a fixed grid.
#[derive(Debug, Clone)]
pub struct LimitSolver {
    grid: Arc<Grid>,
    pub tol: f64,
    pub max_iter: usize,
}

impl LimitSolver {
    pub fn new(grid: RadialGrid, tol: f64) -> Result<Self> {
        if !(tol > 0.0) {
            return Err(Error::validation("tolerance must be positive"));
        }
        Ok(Self {
            grid: Arc::new(grid.into()),
            tol,
            max_iter: 50_000,
        })
    }

    /// Grid resolving decay rates in [alpha_min, alpha_max] so that grounds
    /// fall below 1e-8 well inside the domain.
    pub fn for_range(dim: usize, alpha_min: f64, alpha_max: f64, spacing: f64) -> Result<Self> {
        if !(alpha_min > 0.0 && alpha_max >= alpha_min && spacing > 0.0) {
            return Err(Error::validation("invalid alpha range or spacing"));
        }
        let r_max = 26.0 / alpha_min.sqrt() + 2.0 * (dim as f64 - 1.0);
        let h = spacing / alpha_max.sqrt();
        let n = (r_max / h).ceil() as usize + 1;
        Self::new(RadialGrid::new(dim, r_max, n)?, 1e-8)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn radial(&self) -> &RadialGrid {
        match self.grid.as_ref() {
            Grid::Radial(g) => g,
            Grid::Box(_) => unreachable!("limit solver grids are radial"),
        }
    }

    fn with_grid(&self, grid: RadialGrid) -> Self {
        Self {
            grid: Arc::new(grid.into()),
            ..self.clone()
        }
    }

    /// Ground state of `-Lap u + alpha u = (1 + beta_plus) u^{2p-1}`, obtained
    /// from the beta_plus = 0 ground by exact rescaling.
    pub fn solve_scalar_ground(&self, alpha: f64, beta_plus: f64, params: &ProblemParams) -> Result<ScalarField> {
        if beta_plus < 0.0 {
            return Err(Error::validation("beta_plus must be nonnegative"));
        }
        let u = self.solve_scalar_ground_direct(alpha, 0.0, params)?;
        Ok(u.scaled((1.0 + beta_plus).powf(-1.0 / (2.0 * params.p - 2.0))))
    }

    /// Direct solve without the rescaling shortcut, retried on a doubled
    /// domain when the profile has not decayed at the boundary.
    pub fn solve_scalar_ground_direct(
        &self,
        alpha: f64,
        beta_plus: f64,
        params: &ProblemParams,
    ) -> Result<ScalarField> {
        let mut solver = self.clone();
        for _ in 0..3 {
            let u = solver.scalar_ground_here(alpha, beta_plus, params)?;
            let n = u.values().len();
            if u.values()[n - 2].abs() <= 1e-8 * u.sup_norm().max(1.0) {
                return Ok(u);
            }
            let g = solver.radial();
            let grown = RadialGrid::new(g.dim(), 2.0 * g.r_max(), 2 * g.len() - 1)?;
            solver = solver.with_grid(grown);
        }
        Err(Error::solver("ground did not decay inside the radial domain", f64::NAN))
    }

    fn scalar_ground_here(&self, alpha: f64, beta_plus: f64, params: &ProblemParams) -> Result<ScalarField> {
        if !(alpha > 0.0) {
            return Err(Error::validation(format!("alpha must be positive, got {alpha}")));
        }
        let p = params.p;
        let sys = LimitSystem {
            alpha: [alpha, alpha],
            p,
            a: 1.0 + beta_plus,
            beta: 0.0,
        };
        let g = self.radial();
        let amp = (p * alpha / (1.0 + beta_plus)).powf(1.0 / (2.0 * p - 2.0));
        let k = (p - 1.0) * alpha.sqrt();
        let u0: Vec<f64> = (0..g.len())
            .map(|i| {
                if i + 1 == g.len() {
                    0.0
                } else {
                    amp / (k * g.r(i)).cosh().powf(1.0 / (p - 1.0))
                }
            })
            .collect();
        let zeros = vec![0.0; g.len()];
        let (u, _, res) = self.flow_then_newton(&sys, u0, zeros, [true, false])?;
        let f = ScalarField::new(self.grid.clone(), u)?;
        if f.sup_norm() < NONSTANDARD_FLOOR {
            return Err(Error::solver("scalar solve collapsed to zero", res));
        }
        Ok(f)
    }

    /// Semi-implicit gradient flow with Nehari rescaling, switching to
    /// Newton once the residual is small.
    fn flow_then_newton(
        &self,
        sys: &LimitSystem,
        mut u1: Vec<f64>,
        mut u2: Vec<f64>,
        active: [bool; 2],
    ) -> Result<(Vec<f64>, Vec<f64>, f64)> {
        let g = self.grid.as_ref();
        let n = g.len();
        let alpha_max = sys.alpha[0].max(sys.alpha[1]);
        let mut tau = 0.1 * (1.0f64).min(1.0 / alpha_max);
        let mut switch = 1e-2;
        let vol = g.volumes();
        let rows: Vec<(f64, f64, f64)> = (0..n).map(|i| g.tridiagonal_row(i)).collect();
        renormalize(g, &vol, sys, &mut u1, &mut u2, active);
        let mut energy = pair_energy(g, &vol, sys, &u1, &u2);
        let mut res = {
            let (f1, f2) = newton::residual(g, 1.0, sys, &u1, &u2);
            newton::sup(&f1, &f2)
        };
        let mut iter = 0;
        let mut best = (res, 0);
        while iter < self.max_iter {
            if !res.is_finite() || res > 1e6 * best.0.max(self.tol) {
                return Err(Error::solver("ground-state iteration diverged", res));
            }
            if res < 0.9 * best.0 {
                best = (res, iter);
            } else if iter - best.1 > 2000 {
                return Err(Error::solver("ground-state iteration stagnated", res));
            }
            if res <= self.tol {
                return Ok((u1, u2, res));
            }
            if res <= switch {
                let out = newton::newton(
                    g,
                    1.0,
                    sys,
                    u1.clone(),
                    u2.clone(),
                    NewtonOptions {
                        tol: self.tol,
                        max_iter: 60,
                    },
                );
                let sup1 = out.u1.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                let sup2 = out.u2.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                let alive = (!active[0] || sup1 >= NONSTANDARD_FLOOR) && (!active[1] || sup2 >= NONSTANDARD_FLOOR);
                if out.converged && alive {
                    return Ok((out.u1, out.u2, out.residual));
                }
                switch *= 0.1;
                if switch < self.tol {
                    switch = self.tol;
                }
            }
            iter += 1;
            let mut v1 = u1.clone();
            let mut v2 = u2.clone();
            for (c, v) in [&mut v1, &mut v2].into_iter().enumerate() {
                if !active[c] {
                    continue;
                }
                let mut lower = vec![0.0; n];
                let mut diag = vec![0.0; n];
                let mut upper = vec![0.0; n];
                let mut rhs = vec![0.0; n];
                for i in 0..n {
                    if g.is_dirichlet(i) {
                        diag[i] = 1.0;
                        continue;
                    }
                    let (lo, di, up) = rows[i];
                    lower[i] = -tau * lo;
                    upper[i] = -tau * up;
                    diag[i] = 1.0 + tau * (sys.alpha[c] - di);
                    rhs[i] = [&u1, &u2][c][i] + tau * sys.nonlinearity(c, [u1[i], u2[i]]);
                }
                solve_tridiagonal(&lower, &diag, &upper, &mut rhs)
                    .ok_or_else(|| Error::solver("singular implicit step", res))?;
                *v = rhs;
            }
            renormalize(g, &vol, sys, &mut v1, &mut v2, active);
            let e = pair_energy(g, &vol, sys, &v1, &v2);
            if e > energy + 1e-14 * energy.abs() && tau > 1e-6 {
                tau *= 0.5;
                continue;
            }
            energy = e;
            u1 = v1;
            u2 = v2;
            let (f1, f2) = newton::residual(g, 1.0, sys, &u1, &u2);
            res = newton::sup(&f1, &f2);
        }
        Err(Error::solver("ground-state iteration did not converge", res))
    }

    /// Coupled ground state of the limit system: the lowest-energy critical
    /// point reached from synchronized and semitrivial starts.
    pub fn solve_coupled_ground(&self, lp: &LimitParams) -> Result<CoupledGround> {
        let params = lp.params;
        let p = params.p;
        let beta = params.beta;
        let bp = beta.max(0.0);
        let n = self.grid.len();
        let zeros = vec![0.0; n];
        let g1 = self.solve_scalar_ground(lp.alpha1, 0.0, &params)?;
        let g2 = self.solve_scalar_ground(lp.alpha2, 0.0, &params)?;
        let sys = LimitSystem {
            alpha: [lp.alpha1, lp.alpha2],
            p,
            a: 1.0,
            beta,
        };
        let mut starts: Vec<Start> = vec![
            (
                "semitrivial-1".into(),
                g1.values().to_vec(),
                zeros.clone(),
                [true, false],
            ),
            (
                "semitrivial-2".into(),
                zeros.clone(),
                g2.values().to_vec(),
                [false, true],
            ),
        ];
        if beta != 0.0 {
            let s = (1.0 + bp).powf(-1.0 / (2.0 * p - 2.0));
            starts.push((
                "synchronized".into(),
                g1.values().iter().map(|v| v * s).collect(),
                g2.values().iter().map(|v| v * s).collect(),
                [true, true],
            ));
        }
        if beta > 0.0 {
            for (label, base, other, swap) in [
                ("perturbed-1", &g1, lp.alpha2, false),
                ("perturbed-2", &g2, lp.alpha1, true),
            ] {
                let u = base.values();
                let x = grid::norm_h1_alpha(base, other)?;
                let z = grid::lp_power(base, 2.0 * p);
                let eta = if p < 2.0 {
                    (beta * z / x).powf(1.0 / (2.0 - p)).min(0.5)
                } else {
                    0.1
                };
                let small: Vec<f64> = u.iter().map(|v| eta * v).collect();
                let (a, b) = if swap { (small, u.to_vec()) } else { (u.to_vec(), small) };
                starts.push((label.into(), a, b, [true, true]));
            }
        }
        let mut candidates = Vec::new();
        let mut last_err = None;
        for (label, a, b, active) in starts {
            match self.flow_then_newton(&sys, a, b, active) {
                Ok((a, b, res)) => {
                    let pair = FieldPair::new(
                        ScalarField::new(self.grid.clone(), a)?,
                        ScalarField::new(self.grid.clone(), b)?,
                    )?;
                    let (f1, f2) = newton::residual(&self.grid, 1.0, &sys, pair.u1.values(), pair.u2.values());
                    let full = newton::sup(&f1, &f2);
                    if full > self.tol.max(res) * 10.0 {
                        continue;
                    }
                    let energy = energy_coupled(&pair, lp)?.total;
                    candidates.push(Candidate {
                        label,
                        pair,
                        energy,
                        residual: full,
                    });
                }
                Err(e) => last_err = Some(e),
            }
        }
        let best = candidates
            .iter()
            .min_by(|a, b| a.energy.total_cmp(&b.energy))
            .cloned()
            .ok_or_else(|| last_err.unwrap_or_else(|| Error::solver("no start converged", f64::NAN)))?;
        Ok(CoupledGround {
            pair: best.pair,
            energy: best.energy,
            residual: best.residual,
            candidates,
        })
    }

    /// Converges the synchronized start only.
    pub fn solve_synchronized(&self, lp: &LimitParams) -> Result<Candidate> {
        let params = lp.params;
        let p = params.p;
        let bp = params.beta.max(0.0);
        let s = (1.0 + bp).powf(-1.0 / (2.0 * p - 2.0));
        let a = self.solve_scalar_ground(lp.alpha1, 0.0, &params)?.scaled(s);
        let b = self.solve_scalar_ground(lp.alpha2, 0.0, &params)?.scaled(s);
        let sys = LimitSystem {
            alpha: [lp.alpha1, lp.alpha2],
            p,
            a: 1.0,
            beta: params.beta,
        };
        let (a, b, res) = self.flow_then_newton(&sys, a.into_values(), b.into_values(), [true, true])?;
        let pair = FieldPair::new(
            ScalarField::new(self.grid.clone(), a)?,
            ScalarField::new(self.grid.clone(), b)?,
        )?;
        let energy = energy_coupled(&pair, lp)?.total;
        Ok(Candidate {
            label: "synchronized".into(),
            pair,
            energy,
            residual: res,
        })
    }

    /// Ground energy of the scalar equation with coupling beta_plus.
    pub fn ground_energy(&self, alpha: f64, beta_plus: f64, params: &ProblemParams) -> Result<f64> {
        let u = self.solve_scalar_ground(alpha, beta_plus, params)?;
        energy_scalar(&u, alpha, beta_plus, params)
    }

    /// Compares the energy of a nonstandard critical point with the lower
    /// bound for its coupling regime.
    pub fn lower_bound_check(&self, w: &FieldPair, lp: &LimitParams) -> Result<LowerBoundReport> {
        let params = lp.params;
        let (p, beta) = (params.p, params.beta);
        if w.u1.sup_norm() < NONSTANDARD_FLOOR || w.u2.sup_norm() < NONSTANDARD_FLOOR {
            return Err(Error::Inapplicable("pair is standard: a component vanishes".into()));
        }
        let (case, b) = if beta <= 0.0 {
            (BoundCase::Repulsive, 0.0)
        } else if p >= 2.0 && beta < 1.0 {
            (BoundCase::Attractive, beta)
        } else {
            return Err(Error::Inapplicable(format!(
                "no lower bound for p = {p}, beta = {beta}"
            )));
        };
        let bound = self.ground_energy(lp.alpha1, b, &params)? + self.ground_energy(lp.alpha2, b, &params)?;
        let energy = energy_coupled(w, lp)?.total;
        let data = NehariData::of(w, lp)?;
        let (t, s) = nehari_maximizer(&data, p, beta)?;
        let margin = energy - bound;
        Ok(LowerBoundReport {
            case,
            energy,
            bound,
            margin,
            holds: margin >= -1e-3 * bound.abs(),
            t_beta: t,
            s_beta: s,
            maximizer_is_unit: (t - 1.0).abs() <= 1e-6 && (s - 1.0).abs() <= 1e-6,
        })
    }
}

fn pair_energy(g: &Grid, vol: &[f64], sys: &LimitSystem, u1: &[f64], u2: &[f64]) -> f64 {
    let p = sys.p;
    let mut e = 0.5 * (g.gradient_energy(u1) + g.gradient_energy(u2));
    for i in 0..g.len() {
        let (a, b) = (u1[i], u2[i]);
        e += vol[i]
            * (0.5 * (sys.alpha[0] * a * a + sys.alpha[1] * b * b)
                - sys.a * (a.abs().powf(2.0 * p) + b.abs().powf(2.0 * p)) / (2.0 * p)
                - sys.beta / p * (a * b).abs().powf(p));
    }
    e
}

/// Projects the iterate onto the Nehari set, choosing the root nearest to
/// the identity scaling when several exist.
fn renormalize(g: &Grid, vol: &[f64], sys: &LimitSystem, u1: &mut [f64], u2: &mut [f64], active: [bool; 2]) {
    let p = sys.p;
    let x = |u: &[f64], a: f64| g.gradient_energy(u) + a * vol.iter().zip(u).map(|(w, v)| w * v * v).sum::<f64>();
    let y = |u: &[f64]| sys.a * vol.iter().zip(u).map(|(w, v)| w * v.abs().powf(2.0 * p)).sum::<f64>();
    let scale = |u: &mut [f64], c: f64| u.iter_mut().for_each(|v| *v *= c);
    let e = 2.0 * p - 2.0;
    match active {
        [true, true] => {
            let d = NehariData {
                x1: x(u1, sys.alpha[0]),
                x2: x(u2, sys.alpha[1]),
                y1: y(u1),
                y2: y(u2),
                z: vol
                    .iter()
                    .enumerate()
                    .map(|(i, w)| w * (u1[i] * u2[i]).abs().powf(p))
                    .sum(),
            };
            let roots = if d.y1 > 0.0 && d.y2 > 0.0 {
                match nehari_roots(&d, p, sys.beta) {
                    Ok(r) => r,
                    Err(Error::Degenerate(_)) => {
                        let t = ((d.x1 + d.x2) / (d.y1 + d.y2 + 2.0 * sys.beta * d.z)).powf(1.0 / e);
                        if t.is_finite() && t > 0.0 {
                            scale(u1, t);
                            scale(u2, t);
                        }
                        return;
                    }
                    Err(_) => vec![],
                }
            } else {
                vec![]
            };
            let best = roots.into_iter().min_by(|a, b| {
                let da = a.0.ln().powi(2) + a.1.ln().powi(2);
                let db = b.0.ln().powi(2) + b.1.ln().powi(2);
                da.total_cmp(&db)
            });
            match best {
                Some((t, s)) => {
                    scale(u1, t);
                    scale(u2, s);
                }
                None => {
                    if d.y1 > 0.0 {
                        scale(u1, (d.x1 / d.y1).powf(1.0 / e));
                    }
                    if d.y2 > 0.0 {
                        scale(u2, (d.x2 / d.y2).powf(1.0 / e));
                    }
                }
            }
        }
        [true, false] => {
            let (xv, yv) = (x(u1, sys.alpha[0]), y(u1));
            if yv > 0.0 {
                scale(u1, (xv / yv).powf(1.0 / e));
            }
        }
        [false, true] => {
            let (xv, yv) = (x(u2, sys.alpha[1]), y(u2));
            if yv > 0.0 {
                scale(u2, (xv / yv).powf(1.0 / e));
            }
        }
        [false, false] => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cubic() -> ProblemParams {
        ProblemParams::new(1, 2.0, 0.0).unwrap()
    }

    fn solver() -> LimitSolver {
        LimitSolver::for_range(1, 1.0, 4.0, 0.01).unwrap()
    }

    #[test]
    fn ground_matches_sech_profile() {
        let s = solver();
        let u = s.solve_scalar_ground(1.0, 0.0, &cubic()).unwrap();
        assert!((u.sup_norm() - 2f64.sqrt()).abs() < 1e-3);
        let e = energy_scalar(&u, 1.0, 0.0, &cubic()).unwrap();
        assert!((e - 4.0 / 3.0).abs() < 1e-4, "{e}");
        assert!((nehari_scale_scalar(&u, 1.0, 0.0, &cubic()).unwrap() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn rescaled_and_direct_grounds_agree() {
        let s = solver();
        let a = s.solve_scalar_ground(1.0, 1.0, &cubic()).unwrap();
        let b = s.solve_scalar_ground_direct(1.0, 1.0, &cubic()).unwrap();
        let ea = energy_scalar(&a, 1.0, 1.0, &cubic()).unwrap();
        let eb = energy_scalar(&b, 1.0, 1.0, &cubic()).unwrap();
        assert!((ea - 2.0 / 3.0).abs() < 1e-4 && (eb - ea).abs() < 1e-8);
        let e4 = s.ground_energy(4.0, 0.0, &cubic()).unwrap();
        assert!((e4 - 32.0 / 3.0).abs() < 1e-3, "{e4}");
    }

    #[test]
    fn nehari_scale_of_doubled_ground_is_half() {
        let s = solver();
        let u = s.solve_scalar_ground(1.0, 0.0, &cubic()).unwrap().scaled(2.0);
        let t = nehari_scale_scalar(&u, 1.0, 0.0, &cubic()).unwrap();
        assert!((t - 0.5).abs() < 1e-8);
        assert!(nehari_scale_scalar(&u, 2.0, 0.0, &cubic()).unwrap() > t);
    }

    #[test]
    fn nehari_linear_case() {
        let d = NehariData {
            x1: 1.0,
            x2: 1.0,
            y1: 2.0,
            y2: 2.0,
            z: 1.0,
        };
        let (t, s) = solve_nehari_2x2(&d, 2.0, 0.5).unwrap();
        assert!((t - 0.4f64.sqrt()).abs() < 1e-12 && (s - t).abs() < 1e-12);
        let d0 = NehariData {
            x1: 3.0,
            x2: 1.0,
            y1: 2.0,
            y2: 5.0,
            z: 1.0,
        };
        let (t, s) = solve_nehari_2x2(&d0, 2.5, 0.0).unwrap();
        assert!((t - 1.5f64.powf(1.0 / 3.0)).abs() < 1e-12 && (s - 0.2f64.powf(1.0 / 3.0)).abs() < 1e-12);
        let deg = NehariData {
            x1: 1.0,
            x2: 1.0,
            y1: 1.0,
            y2: 1.0,
            z: 1.0,
        };
        assert!(matches!(solve_nehari_2x2(&deg, 2.0, 1.0), Err(Error::Degenerate(_))));
    }

    #[test]
    fn nehari_nonlinear_cases_satisfy_the_system() {
        let d = NehariData {
            x1: 1.3,
            x2: 0.7,
            y1: 2.0,
            y2: 1.1,
            z: 0.9,
        };
        for (p, beta) in [(2.5, 0.4), (3.0, 0.9), (1.5, 0.3), (1.2, 2.0), (2.5, -0.3)] {
            let (t, s) = solve_nehari_2x2(&d, p, beta).unwrap();
            let r = d.residuals(p, beta, t, s);
            assert!(r[0] < 1e-10 && r[1] < 1e-10, "p={p} beta={beta} {r:?}");
        }
    }

    #[test]
    fn coupled_decoupled_ground_is_the_smaller_scalar() {
        let s = solver();
        let lp = LimitParams::new(cubic(), 1.0, 2.0).unwrap();
        let g = s.solve_coupled_ground(&lp).unwrap();
        assert!((g.energy - 4.0 / 3.0).abs() < 1e-3);
        assert!(g.pair.u2.sup_norm() < NONSTANDARD_FLOOR);
    }

    #[test]
    fn weak_coupling_keeps_the_semitrivial_ground() {
        let s = solver();
        let lp = LimitParams::new(cubic().with_beta(0.5), 1.0, 1.5).unwrap();
        let g = s.solve_coupled_ground(&lp).unwrap();
        assert!((g.energy - 4.0 / 3.0).abs() < 1e-3, "{}", g.energy);
        assert!(g.pair.u2.sup_norm() < NONSTANDARD_FLOOR);
    }

    #[test]
    fn synchronized_pair_sits_on_its_nehari_set() {
        let s = solver();
        let lp = LimitParams::new(cubic().with_beta(0.5), 1.0, 1.0).unwrap();
        let c = s.solve_synchronized(&lp).unwrap();
        assert!((c.energy - 2.0 * (4.0 / 3.0) / 1.5).abs() < 1e-3);
        let d = NehariData::of(&c.pair, &lp).unwrap();
        let (t, u) = solve_nehari_2x2(&d, 2.0, 0.5).unwrap();
        assert!((t - 1.0).abs() < 1e-6 && (u - 1.0).abs() < 1e-6);
        let rep = s.lower_bound_check(&c.pair, &lp).unwrap();
        assert!(rep.holds && rep.maximizer_is_unit && rep.margin.abs() < 1e-3);
    }

    #[test]
    fn energy_breakdown_and_symmetry() {
        let s = solver();
        let u = s.solve_scalar_ground(1.0, 0.0, &cubic()).unwrap();
        let w = FieldPair::new(u.clone(), u.clone()).unwrap();
        let lp = LimitParams::new(cubic(), 1.0, 1.0).unwrap();
        let e = energy_coupled(&w, &lp).unwrap();
        assert!((e.total - 8.0 / 3.0).abs() < 1e-3);
        let lp = LimitParams::new(cubic().with_beta(0.5), 1.0, 1.0).unwrap();
        let e = energy_coupled(&w, &lp).unwrap();
        assert!((e.total - 4.0 / 3.0).abs() < 1e-3);
        let parts = e.quad1 + e.quad2 + e.self1 + e.self2 + e.cross;
        assert!((parts - e.total).abs() < 1e-12);
        let v = u.scaled(0.5);
        let w = FieldPair::new(u, v).unwrap();
        let lp = LimitParams::new(cubic().with_beta(0.3), 1.0, 2.0).unwrap();
        let a = energy_coupled(&w, &lp).unwrap().total;
        let b = energy_coupled(&w.swapped(), &lp.swapped()).unwrap().total;
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn standard_pairs_are_rejected_by_the_bound() {
        let s = solver();
        let u = s.solve_scalar_ground(1.0, 0.0, &cubic()).unwrap();
        let z = ScalarField::zeros(u.grid().clone());
        let lp = LimitParams::new(cubic().with_beta(0.5), 1.0, 1.0).unwrap();
        let w = FieldPair::new(u, z).unwrap();
        assert!(matches!(s.lower_bound_check(&w, &lp), Err(Error::Inapplicable(_))));
    }
}
