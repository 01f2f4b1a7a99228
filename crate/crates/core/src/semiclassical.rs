//! Small-epsilon solves of the penalized system and their diagnostics:
//! peaks, energy windows, decay fits, barriers, the pointwise penalty check
//! and local Pohozaev balances.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{cell_sum, FieldPair, Grid, Point, ProblemParams, ScalarField};
use crate::limit::{nehari_maximizer, LimitParams, LimitSolver, NehariData, NONSTANDARD_FLOOR};
use crate::linalg::linear_fit;
use crate::newton::{self, NewtonOptions};
use crate::penalty::{
    build_penalty, hardy_constant, DecayClass, PenalizedSystem, Penalty, PenaltyCase, PenaltySpec, PotentialSpec,
};

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn smooth_step(t: f64) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    if t >= 1.0 {
        return 0.0;
    }
    let a = (-1.0 / (1.0 - t)).exp();
    let b = (-1.0 / t).exp();
    a / (a + b)
}

/// Starting guess of a penalized solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// The limit ground state at (V1(z), V2(z)), rescaled by eps and centred at z.
    GroundBump { z: Point },
    /// (t U_{m1,beta}, s U_{m2,beta}) rescaled by eps at z, with (t, s) the
    /// Nehari maximizer of the limit energy.
    Synchronized { z: Point },
}

impl Init {
    fn z(&self) -> Point {
        match *self {
            Init::GroundBump { z } | Init::Synchronized { z } => z,
        }
    }
}

/// A converged penalized solve.
#[derive(Debug, Clone)]
pub struct PenalizedRun {
    pub pair: FieldPair,
    pub epsilon: f64,
    pub residual: f64,
    pub energy: f64,
    pub energy_over_eps_n: f64,
    pub penalty: Penalty,
    pub init: Init,
    /// Nehari scalars of the synchronized start, when used.
    pub init_scalars: Option<(f64, f64)>,
}

fn limit_solver_for(dim: usize, a: f64, b: f64) -> Result<LimitSolver> {
    LimitSolver::for_range(dim, a.min(b), a.max(b), 0.02)
}

fn place(grid: &Arc<Grid>, profile: &ScalarField, z: &Point, eps: f64, scale: f64) -> Vec<f64> {
    (0..grid.len())
        .map(|i| {
            if grid.is_dirichlet(i) {
                return 0.0;
            }
            let x = grid.point(i);
            let rho = dist(&x[..grid.dim()], &z[..grid.dim()]) / eps;
            scale * profile.at(&[rho, 0.0, 0.0])
        })
        .collect()
}

/// Damped Newton solve of the penalized system from the given start.
pub fn solve_penalized(
    grid: &Arc<Grid>,
    pot: &PotentialSpec,
    ps: &PenaltySpec,
    params: &ProblemParams,
    init: Init,
    tol: f64,
) -> Result<PenalizedRun> {
    let eps = ps.epsilon;
    if grid.h() > eps / 8.0 {
        return Err(Error::Resolution(format!(
            "spacing {} does not resolve eps = {eps} with 8 points",
            grid.h()
        )));
    }
    if !pot.covered_by(grid) {
        return Err(Error::validation("grid does not cover the ball U"));
    }
    if matches!(grid.as_ref(), Grid::Radial(_)) && norm(&pot.center) != 0.0 {
        return Err(Error::validation("radial grids need potentials centred at the origin"));
    }
    let z = init.z();
    if !pot.in_lambda(&z) {
        return Err(Error::validation("initial bump centre lies outside Lambda"));
    }
    if !(tol > 0.0) {
        return Err(Error::validation("tolerance must be positive"));
    }
    let pen = build_penalty(ps, pot, params)?;
    let dim = grid.dim();
    let (a1, a2) = (pot.v1.eval(&z), pot.v2.eval(&z));
    let (u1, u2, scalars) = match init {
        Init::GroundBump { .. } => {
            let solver = limit_solver_for(dim, a1, a2)?;
            let lp = LimitParams::new(*params, a1, a2)?;
            let ground = solver.solve_coupled_ground(&lp)?;
            (
                place(grid, &ground.pair.u1, &z, eps, 1.0),
                place(grid, &ground.pair.u2, &z, eps, 1.0),
                None,
            )
        }
        Init::Synchronized { .. } => {
            let (m1, m2) = (pot.m1, pot.m2);
            let solver = limit_solver_for(dim, m1, m2)?;
            let bp = params.beta.max(0.0);
            let g1 = solver.solve_scalar_ground(m1, bp, params)?;
            let g2 = solver.solve_scalar_ground(m2, bp, params)?;
            let lp = LimitParams::new(*params, m1, m2)?;
            let data = NehariData::of(&FieldPair::new(g1.clone(), g2.clone())?, &lp)?;
            let (t, s) = nehari_maximizer(&data, params.p, params.beta)?;
            (place(grid, &g1, &z, eps, t), place(grid, &g2, &z, eps, s), Some((t, s)))
        }
    };
    let sys = PenalizedSystem::new(grid, pot, &pen, params);
    let out = newton::newton(grid, eps * eps, &sys, u1, u2, NewtonOptions { tol, max_iter: 200 });
    if !out.converged {
        return Err(Error::solver("penalized Newton iteration stalled", out.residual));
    }
    let sup = newton::sup(&out.u1, &out.u2);
    let low = out.u1.iter().chain(&out.u2).fold(0.0f64, |m, v| m.min(*v));
    if low < -1e-6 * sup.max(1e-300) {
        return Err(Error::solver(
            format!("converged to a sign-changing pair (min {low:.3e})"),
            out.residual,
        ));
    }
    let pair = FieldPair::new(
        ScalarField::new(grid.clone(), out.u1)?,
        ScalarField::new(grid.clone(), out.u2)?,
    )?;
    let energy = crate::penalty::penalized_energy(&pair, pot, &pen, params)?;
    let run = PenalizedRun {
        pair,
        epsilon: eps,
        residual: out.residual,
        energy,
        energy_over_eps_n: energy / eps.powi(dim as i32),
        penalty: pen,
        init,
        init_scalars: scalars,
    };
    let peaks = find_peaks(&run.pair)?;
    for x in [peaks.x1, peaks.x2, peaks.x_sum] {
        if near_boundary(grid, &x) {
            return Err(Error::solver("peak migrated to the grid boundary", run.residual));
        }
    }
    Ok(run)
}

fn near_boundary(grid: &Grid, x: &Point) -> bool {
    let h = grid.h();
    match grid {
        Grid::Radial(g) => x[0] >= g.r_max() - 2.0 * h,
        Grid::Box(g) => (0..g.dim()).any(|d| x[d].abs() >= g.half_width() - 2.0 * h),
    }
}

/// Argmaxes of u1, u2 and u1 + u2 with sub-grid refinement.
#[derive(Debug, Clone, PartialEq)]
pub struct Peaks {
    pub x1: Point,
    pub x2: Point,
    pub x_sum: Point,
    pub values: [f64; 3],
    /// Another node, away from the chosen one, attains the same maximum.
    pub tie: bool,
    /// Components below the peak floor; their peak falls back to `x_sum`.
    pub vanishing: [bool; 2],
}

const PEAK_FLOOR: f64 = 1e-10;

fn refine(grid: &Grid, f: &[f64], i: usize) -> Point {
    let mut x = grid.point(i);
    let h = grid.h();
    let vertex = |l: f64, c: f64, r: f64| {
        let den = l - 2.0 * c + r;
        if den < 0.0 {
            (0.5 * (l - r) / den).clamp(-0.5, 0.5)
        } else {
            0.0
        }
    };
    match grid {
        Grid::Radial(g) => {
            if i == 0 {
                return x;
            }
            if i + 1 < g.len() {
                x[0] += h * vertex(f[i - 1], f[i], f[i + 1]);
            }
        }
        Grid::Box(g) => {
            let idx = g.unflatten(i);
            for d in 0..g.dim() {
                if idx[d] == 0 || idx[d] + 1 == g.n_per_axis() {
                    continue;
                }
                let mut lo = idx;
                let mut hi = idx;
                lo[d] -= 1;
                hi[d] += 1;
                x[d] += h * vertex(f[g.flatten(lo)], f[i], f[g.flatten(hi)]);
            }
        }
    }
    x
}

fn argmax(grid: &Grid, f: &[f64]) -> Result<(usize, Point, f64, bool)> {
    let mut best = 0;
    for (i, v) in f.iter().enumerate() {
        if *v > f[best] {
            best = i;
        }
    }
    let m = f[best];
    if !(m > PEAK_FLOOR) {
        return Err(Error::DegenerateField(format!("maximum {m:.3e} below the peak floor")));
    }
    let at = grid.point(best);
    let tie = f
        .iter()
        .enumerate()
        .any(|(i, v)| i != best && *v >= m * (1.0 - 1e-9) && dist(&grid.point(i), &at) > 2.0 * grid.h());
    Ok((best, refine(grid, f, best), m, tie))
}

pub fn find_peaks(w: &FieldPair) -> Result<Peaks> {
    let grid = w.grid();
    let (a, b) = (w.u1.values(), w.u2.values());
    let sum: Vec<f64> = a.iter().zip(b).map(|(x, y)| x + y).collect();
    let (_, xs, vs, ts) = argmax(grid, &sum)?;
    let single = |f: &[f64]| match argmax(grid, f) {
        Ok((_, x, v, t)) => (x, v, t, false),
        Err(_) => (xs, f.iter().copied().fold(0.0, f64::max), false, true),
    };
    let (x1, v1, t1, z1) = single(a);
    let (x2, v2, t2, z2) = single(b);
    Ok(Peaks {
        x1,
        x2,
        x_sum: xs,
        values: [v1, v2, vs],
        tie: t1 || t2 || ts,
        vanishing: [z1, z2],
    })
}

/// Log-linear fit of the decay of u1 + u2 away from the concentration point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    pub model: DecayModel,
    /// Rate c of the exponential models, or the exponent of the power law.
    pub rate: f64,
    pub intercept: f64,
    pub r2: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DecayModel {
    /// log v = a - c (|x - x0|/eps)^(1 - sigma), sigma < 1.
    Stretched { sigma: f64 },
    /// log v = a - k log|x - x0|.
    Power,
    /// log v = a - c m1 |x - x0| / (eps (1 + |x - x0|)) - log(1 + |x|^(N-2)).
    Product { m1: f64 },
}

impl DecayModel {
    pub fn for_run(pot: &PotentialSpec, pen: &Penalty) -> Self {
        match (pen.case, pot.decay_class) {
            (PenaltyCase::Fast, _) | (_, DecayClass::FastOrCompact) => DecayModel::Product { m1: pot.m1 },
            (PenaltyCase::Slow { sigma }, _) if sigma >= 1.0 => DecayModel::Power,
            (PenaltyCase::Slow { sigma }, _) => DecayModel::Stretched { sigma },
        }
    }
}

/// Fits the model to log(u1 + u2) at nodes with rho_min <= |x - x0| <= rho_max
/// where the field exceeds 1e-12.
pub fn decay_fit_in(
    w: &FieldPair,
    x0: &Point,
    epsilon: f64,
    model: DecayModel,
    rho_min: f64,
    rho_max: f64,
) -> Result<DecayFit> {
    let grid = w.grid();
    let dim = grid.dim();
    let (a, b) = (w.u1.values(), w.u2.values());
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for i in 0..grid.len() {
        if grid.is_dirichlet(i) {
            continue;
        }
        let v = a[i] + b[i];
        if !(v > 1e-12) {
            continue;
        }
        let x = grid.point(i);
        let rho = dist(&x[..dim], &x0[..dim]);
        if rho < rho_min || rho > rho_max {
            continue;
        }
        let (feature, y) = match model {
            DecayModel::Stretched { sigma } => ((rho / epsilon).powf(1.0 - sigma), v.ln()),
            DecayModel::Power => (rho.ln(), v.ln()),
            DecayModel::Product { m1 } => (
                m1 * rho / (epsilon * (1.0 + rho)),
                v.ln() + (1.0 + norm(&x[..dim]).powf(dim as f64 - 2.0)).ln(),
            ),
        };
        xs.push(feature);
        ys.push(y);
    }
    if xs.len() < 20 {
        return Err(Error::FitDegenerate(format!("{} annulus samples, need 20", xs.len())));
    }
    let (lo, hi) = ys
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &y| (l.min(y), h.max(y)));
    if hi - lo < 1.0 {
        return Err(Error::FitDegenerate("less than one e-fold of dynamic range".into()));
    }
    let (intercept, slope, r2) =
        linear_fit(&xs, &ys).ok_or_else(|| Error::FitDegenerate("samples share one abscissa".into()))?;
    Ok(DecayFit {
        model,
        rate: -slope,
        intercept,
        r2,
        samples: xs.len(),
    })
}

/// Decay fit on the part of Lambda outside B_{4 eps}(x_omega).
pub fn decay_fit(w: &FieldPair, report: &ConcentrationReport, pot: &PotentialSpec, pen: &Penalty) -> Result<DecayFit> {
    let model = DecayModel::for_run(pot, pen);
    let reach = pot.dist_to_lambda_boundary(&report.x_omega).max(0.0) + 0.0;
    decay_fit_in(w, &report.x_omega, pen.epsilon, model, 4.0 * pen.epsilon, reach)
}

/// Measured concentration quantities of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationReport {
    pub epsilon: f64,
    pub x1_peak: Point,
    pub x2_peak: Point,
    pub x_sum_peak: Point,
    pub x_omega: Point,
    pub peak_values: [f64; 3],
    pub dist_scaled: f64,
    pub dist_to_m: f64,
    pub energy_over_eps_n: f64,
    pub residual: f64,
    pub tie: bool,
    /// One component has sup-norm below the nonstandard floor.
    pub standard: bool,
    pub peaks_in_lambda: bool,
    pub decay: Option<DecayFit>,
}

pub fn concentration_report(run: &PenalizedRun, pot: &PotentialSpec) -> Result<ConcentrationReport> {
    let peaks = find_peaks(&run.pair)?;
    let x_omega: Point = std::array::from_fn(|d| (peaks.x1[d] + peaks.x2[d] + peaks.x_sum[d]) / 3.0);
    let dim = run.pair.grid().dim();
    let standard = run.pair.u1.sup_norm() < NONSTANDARD_FLOOR || run.pair.u2.sup_norm() < NONSTANDARD_FLOOR;
    let mut report = ConcentrationReport {
        epsilon: run.epsilon,
        x1_peak: peaks.x1,
        x2_peak: peaks.x2,
        x_sum_peak: peaks.x_sum,
        x_omega,
        peak_values: peaks.values,
        dist_scaled: dist(&peaks.x1[..dim], &peaks.x2[..dim]) / run.epsilon,
        dist_to_m: pot.dist_to_m(&peaks.x_sum),
        energy_over_eps_n: run.energy_over_eps_n,
        residual: run.residual,
        tie: peaks.tie,
        standard,
        peaks_in_lambda: [peaks.x1, peaks.x2, peaks.x_sum].iter().all(|x| pot.in_lambda(x)),
        decay: None,
    };
    report.decay = decay_fit(&run.pair, &report, pot, &run.penalty).ok();
    Ok(report)
}

/// Energy bounds checked against J_eps / eps^N.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EnergyWindow {
    /// Ground runs: value <= bound.
    Ground { bound: f64 },
    /// Higher-energy runs: lower <= value <= upper.
    Higher { lower: f64, upper: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowReport {
    pub value: f64,
    pub lower: Option<f64>,
    pub upper: f64,
    pub slack: f64,
    pub margin_lower: Option<f64>,
    pub margin_upper: f64,
    pub pass: bool,
}

/// Relative slack applied to both ends of an energy window by default.
pub const WINDOW_SLACK: f64 = 0.05;

pub fn energy_window_check(value: f64, window: EnergyWindow, slack: f64) -> WindowReport {
    let (lower, upper) = match window {
        EnergyWindow::Ground { bound } => (None, bound),
        EnergyWindow::Higher { lower, upper } => (Some(lower), upper),
    };
    let margin_upper = upper * (1.0 + slack) - value;
    let margin_lower = lower.map(|l| value - l * (1.0 - slack));
    let pass = margin_upper >= 0.0 && margin_lower.is_none_or(|m| m >= 0.0);
    WindowReport {
        value,
        lower,
        upper,
        slack,
        margin_lower,
        margin_upper,
        pass,
    }
}

/// Which supersolution to build.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BarrierKind {
    /// eps^2 p^nu w_mu (slow case) or its eps^(3/(2p-2)) variant (fast case).
    Power,
    /// cosh(lambda (r - |x - x_omega|)/eps) on B_r glued to the outer profile.
    Cosh,
}

#[derive(Debug, Clone)]
pub struct BarrierReport {
    pub field: ScalarField,
    /// Grid values of -eps^2 Lap U + (1 - delta) V_min U - P U.
    pub residual: Vec<f64>,
    pub checked: usize,
    pub violations: Vec<usize>,
    pub worst: f64,
    pub min_in_core: f64,
    pub c_tilde: f64,
    pub nu: f64,
    pub r: f64,
    pub c_bar: f64,
    pub mu: f64,
    /// Off-Lambda nodes where U^(2p-2) >= P.
    pub power_excess: usize,
    /// The unscaled outer extension of the cosh barrier, when built.
    pub extension: Option<ScalarField>,
}

fn outer_profile(pen: &Penalty, pot: &PotentialSpec, mu: f64, x: &[f64]) -> f64 {
    let s = dist(x, &pot.center[..x.len()]);
    let inner = match pen.case {
        PenaltyCase::Slow { .. } => 1.0 / (norm(&pot.center) + pot.lambda_radius),
        PenaltyCase::Fast => 1.0,
    };
    let r = norm(x).max(1e-300);
    let tail = match pen.case {
        PenaltyCase::Slow { .. } => r.powf(-mu),
        PenaltyCase::Fast => {
            let edge = (pot.u_radius - norm(&pot.center)).max(1e-12);
            let c = 0.5 * edge.powf(pen.varrho);
            r.powf(-mu) * (1.0 - c * r.powf(-pen.varrho))
        }
    };
    if s <= pot.lambda_radius {
        return inner;
    }
    if s >= pot.u_radius {
        return tail;
    }
    let chi = smooth_step((s - pot.lambda_radius) / (pot.u_radius - pot.lambda_radius));
    chi * inner + (1.0 - chi) * tail
}

/// Builds a barrier around x_omega dominating C~ = sup over Lambda of u1 + u2
/// on B_{R eps}(x_omega) and checks its differential inequality on the grid.
pub fn barrier_supersolution(
    run: &PenalizedRun,
    pot: &PotentialSpec,
    ps: &PenaltySpec,
    params: &ProblemParams,
    report: &ConcentrationReport,
    kind: BarrierKind,
    tol: f64,
) -> Result<BarrierReport> {
    let grid = run.pair.grid().clone();
    let dim = grid.dim();
    let pen = &run.penalty;
    let eps = pen.epsilon;
    let bp = &ps.barrier;
    let xw = report.x_omega;
    if !pot.in_lambda(&[0.0; 3]) {
        return Err(Error::validation(
            "the barrier construction needs the origin inside Lambda",
        ));
    }
    let space = pot.dist_to_lambda_boundary(&xw);
    if !(space > 0.0) {
        return Err(Error::validation("x_omega lies outside Lambda"));
    }
    let r = bp.r.unwrap_or(space / 3.0);
    if !(r > 0.0 && r < space) {
        return Err(Error::validation(
            "barrier radius r must lie in (0, dist(x_omega, boundary of Lambda))",
        ));
    }
    let core = bp.core * eps;
    if !(core < r) {
        return Err(Error::validation(format!(
            "core radius R eps = {core} is not below r = {r}"
        )));
    }
    let loss = bp.linear_loss;
    let b = bp.exponent;
    let (a, u) = (run.pair.u1.values(), run.pair.u2.values());
    let c_tilde = (0..grid.len())
        .filter(|&i| pot.in_lambda(&grid.point(i)))
        .map(|i| a[i] + u[i])
        .fold(0.0, f64::max);
    let m1 = pot.m1;
    let mu = bp.mu.unwrap_or(match pen.case {
        PenaltyCase::Slow { sigma } => (2.0 * sigma + 2.0 * pen.kappa) / (2.0 * params.p - 2.0),
        PenaltyCase::Fast => dim as f64 - 2.0,
    });
    // eps-power of the prefactor: 2 in the slow case, 3/(2p-2) in the fast one
    let lead = match pen.case {
        PenaltyCase::Slow { .. } => 2.0,
        PenaltyCase::Fast => 3.0 / (2.0 * params.p - 2.0),
    };
    let inner_w = outer_profile(pen, pot, mu, &xw[..dim]);
    let (field, nu, c_bar, extension): (Vec<f64>, f64, f64, Option<ScalarField>) = match kind {
        BarrierKind::Power => {
            let nu = bp
                .nu
                .unwrap_or((1.0 - loss) * m1 * eps.powf(lead - 2.0) / (b * (b - 1.0) * r.powf(b - 2.0)));
            let c_bar = bp.c_bar.unwrap_or_else(|| {
                let need = c_tilde * eps.powf(lead - 2.0) / (nu * (r - core).powf(b) * inner_w);
                match pen.case {
                    PenaltyCase::Slow { .. } => need,
                    PenaltyCase::Fast => need.max(1.0),
                }
            });
            let field = (0..grid.len())
                .map(|i| {
                    let x = grid.point(i);
                    let s = dist(&x[..dim], &xw[..dim]);
                    let bump = if s < r {
                        nu * (r - s).powf(b) / eps.powf(lead)
                    } else {
                        0.0
                    };
                    eps.powf(lead) * c_bar * (1.0 + bump) * outer_profile(pen, pot, mu, &x[..dim])
                })
                .collect();
            (field, nu, c_bar, None)
        }
        BarrierKind::Cosh => {
            let rate = m1.min((1.0 - loss) * m1.sqrt());
            let k = (rate * (r / eps - bp.core)).cosh();
            let c_bar = bp.c_bar.unwrap_or(c_tilde / k);
            let inner: Vec<f64> = (0..grid.len())
                .map(|i| {
                    let x = grid.point(i);
                    let s = dist(&x[..dim], &xw[..dim]);
                    if s < r {
                        (rate * (r - s) / eps).cosh()
                    } else {
                        outer_profile(pen, pot, mu, &x[..dim])
                    }
                })
                .collect();
            let ext = ScalarField::from_fn(grid.clone(), |x| k * outer_profile(pen, pot, mu, &x[..dim]));
            (inner.iter().map(|v| c_bar * v).collect(), rate, c_bar, Some(ext))
        }
    };
    let n = grid.len();
    let mut lap = vec![0.0; n];
    grid.apply_laplacian(&field, &mut lap);
    let mut residual = vec![0.0; n];
    let mut violations = Vec::new();
    let mut checked = 0;
    let mut worst = 0.0f64;
    let mut min_in_core = f64::INFINITY;
    let mut power_excess = 0;
    let q = 2.0 * params.p - 2.0;
    for i in 0..n {
        let x = grid.point(i);
        let s = dist(&x[..dim], &xw[..dim]);
        let vmin = pot.v_min(&x);
        let pv = pen.eval(&x);
        let diff = -eps * eps * lap[i];
        let pot_term = (1.0 - loss) * vmin * field[i];
        let pen_term = pv * field[i];
        residual[i] = diff + pot_term - pen_term;
        if !pen.in_lambda(&x) && field[i].powf(q) >= pv {
            power_excess += 1;
        }
        if s < core {
            min_in_core = min_in_core.min(field[i]);
            continue;
        }
        if grid.is_dirichlet(i) {
            continue;
        }
        checked += 1;
        let scale = diff.abs() + pot_term.abs() + pen_term.abs();
        if residual[i] < -tol * scale.max(1e-300) {
            violations.push(i);
            worst = worst.min(residual[i] / scale);
        }
    }
    if violations.len() * 1000 > checked {
        return Err(Error::Barrier {
            violations: violations.len(),
            checked,
            worst,
            indices: violations,
        });
    }
    Ok(BarrierReport {
        field: ScalarField::new(grid.clone(), field)?,
        residual,
        checked,
        violations,
        worst,
        min_in_core,
        c_tilde,
        nu,
        r,
        c_bar,
        mu,
        power_excess,
        extension,
    })
}

/// Pointwise comparison of the components with P_eps off Lambda.
#[derive(Debug, Clone, PartialEq)]
pub struct OriginalCheck {
    pub checked: usize,
    /// Nodes off Lambda where (u_i)_+^(2p-2) > P for i = 1, 2 or for the sum.
    pub violations: Vec<(usize, Point)>,
    /// min over off-Lambda nodes of P - (u1 + u2)_+^(2p-2).
    pub margin: f64,
    /// Off-Lambda nodes where the coupling cap sqrt(P/p) is active.
    pub coupling_cap_active: usize,
    pub margin_field: Vec<f64>,
}

impl OriginalCheck {
    pub fn pass(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn verify_original(w: &FieldPair, pen: &Penalty) -> OriginalCheck {
    let grid = w.grid();
    let q = 2.0 * pen.p - 2.0;
    let (a, b) = (w.u1.values(), w.u2.values());
    let mut violations = Vec::new();
    let mut margin = f64::INFINITY;
    let mut checked = 0;
    let mut cap = 0;
    let mut field = vec![f64::INFINITY; grid.len()];
    for i in 0..grid.len() {
        let x = grid.point(i);
        if pen.in_lambda(&x) {
            continue;
        }
        checked += 1;
        let pv = pen.eval(&x);
        let (u1, u2) = (a[i].max(0.0), b[i].max(0.0));
        let sum = (u1 + u2).powf(q);
        field[i] = pv - sum;
        margin = margin.min(pv - sum);
        if u1.powf(q) > pv || u2.powf(q) > pv || sum > pv {
            violations.push((i, x));
        }
        if u1.max(u2).powf(q) > pv / pen.p {
            cap += 1;
        }
    }
    OriginalCheck {
        checked,
        violations,
        margin: if checked == 0 { f64::INFINITY } else { margin },
        coupling_cap_active: cap,
        margin_field: field,
    }
}

/// Local Pohozaev balance on the sphere of radius delta around `center`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PohozaevReport {
    pub axis: usize,
    pub delta: f64,
    /// Flux, gradient-square, potential and nonlinear boundary integrals.
    pub surface_terms: [f64; 4],
    /// Integrals of the absolute values of the same four integrands.
    pub term_magnitudes: [f64; 4],
    pub surface: f64,
    /// Integral over the sphere of the absolute values of the four integrands.
    pub surface_magnitude: f64,
    pub volume: f64,
    pub volume_parts: [f64; 2],
    pub residual: f64,
}

fn sphere_quadrature(dim: usize, delta: f64) -> Vec<(Point, f64)> {
    use std::f64::consts::PI;
    match dim {
        1 => vec![([1.0, 0.0, 0.0], 1.0), ([-1.0, 0.0, 0.0], 1.0)],
        2 => {
            let m = 512;
            (0..m)
                .map(|k| {
                    let t = 2.0 * PI * (k as f64 + 0.5) / m as f64;
                    ([t.cos(), t.sin(), 0.0], 2.0 * PI * delta / m as f64)
                })
                .collect()
        }
        _ => {
            let (mt, mp) = (96, 192);
            let mut out = Vec::with_capacity(mt * mp);
            for i in 0..mt {
                let th = PI * (i as f64 + 0.5) / mt as f64;
                for j in 0..mp {
                    let ph = 2.0 * PI * (j as f64 + 0.5) / mp as f64;
                    let w = delta * delta * th.sin() * (PI / mt as f64) * (2.0 * PI / mp as f64);
                    out.push(([th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos()], w));
                }
            }
            out
        }
    }
}

/// Surface minus volume terms of the local Pohozaev identity along `axis`,
/// all divided by eps^N.
pub fn pohozaev_residual(
    w: &FieldPair,
    pot: &PotentialSpec,
    params: &ProblemParams,
    epsilon: f64,
    center: &Point,
    delta: f64,
    axis: usize,
) -> Result<PohozaevReport> {
    let grid = w.grid();
    let dim = grid.dim();
    let h = grid.h();
    if axis >= dim {
        return Err(Error::validation(format!(
            "axis {axis} out of range for dimension {dim}"
        )));
    }
    if delta < 4.0 * h {
        return Err(Error::Resolution(format!(
            "ball radius {delta} is below 4h = {}",
            4.0 * h
        )));
    }
    let inside = match grid.as_ref() {
        Grid::Radial(g) => norm(&center[..dim]) + delta + 2.0 * h < g.r_max(),
        Grid::Box(g) => (0..dim).all(|d| center[d].abs() + delta + 2.0 * h < g.half_width()),
    };
    if !inside {
        return Err(Error::validation("Pohozaev ball leaves the grid"));
    }
    let p = params.p;
    let beta = params.beta;
    let eps2 = epsilon * epsilon;
    let field = |f: &ScalarField, x: &Point| f.at(&x[..dim]);
    let grad = |f: &ScalarField, x: &Point| {
        let mut g = [0.0; 3];
        for d in 0..dim {
            let mut a = *x;
            let mut b = *x;
            a[d] += h;
            b[d] -= h;
            g[d] = (field(f, &a) - field(f, &b)) / (2.0 * h);
        }
        g
    };
    let mut terms = [0.0; 4];
    let mut mags = [0.0; 4];
    for (nu, wgt) in sphere_quadrature(dim, delta) {
        let mut x = *center;
        for d in 0..dim {
            x[d] += delta * nu[d];
        }
        let ni = nu[axis];
        let mut t = [0.0; 4];
        let mut vals = [0.0; 2];
        for (j, (f, v)) in [(&w.u1, &pot.v1), (&w.u2, &pot.v2)].into_iter().enumerate() {
            let g = grad(f, &x);
            let gn: f64 = (0..dim).map(|d| g[d] * nu[d]).sum();
            let g2: f64 = (0..dim).map(|d| g[d] * g[d]).sum();
            let u = field(f, &x);
            vals[j] = u;
            t[0] += -eps2 * gn * g[axis];
            t[1] += 0.5 * eps2 * g2 * ni;
            t[2] += 0.5 * v.eval(&x) * u * u * ni;
        }
        let (a, b) = (vals[0].max(0.0), vals[1].max(0.0));
        let big_f = (a.powf(2.0 * p) + b.powf(2.0 * p)) / (2.0 * p) + beta / p * (a * b).powf(p);
        t[3] = -big_f * ni;
        for k in 0..4 {
            terms[k] += wgt * t[k];
            mags[k] += wgt * t[k].abs();
        }
    }
    let (a, b) = (w.u1.values(), w.u2.values());
    let mut parts = [0.0; 2];
    parts[0] = 0.5
        * cell_sum(grid, |i| {
            let x = grid.point(i);
            if dist(&x[..dim], &center[..dim]) < delta {
                a[i] * a[i] * pot.v1.partial(&x, axis)
            } else {
                0.0
            }
        });
    parts[1] = 0.5
        * cell_sum(grid, |i| {
            let x = grid.point(i);
            if dist(&x[..dim], &center[..dim]) < delta {
                b[i] * b[i] * pot.v2.partial(&x, axis)
            } else {
                0.0
            }
        });
    let scale = epsilon.powi(dim as i32);
    let surface: f64 = terms.iter().sum();
    let volume = parts[0] + parts[1];
    Ok(PohozaevReport {
        axis,
        delta,
        surface_terms: terms.map(|t| t / scale),
        surface: surface / scale,
        term_magnitudes: mags.map(|t| t / scale),
        surface_magnitude: mags.iter().sum::<f64>() / scale,
        volume: volume / scale,
        volume_parts: parts.map(|t| t / scale),
        residual: (surface - volume) / scale,
    })
}

/// A sweep over decreasing epsilon with a fixed potential and grid.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub grid: Arc<Grid>,
    pub potential: PotentialSpec,
    pub penalty: PenaltySpec,
    pub params: ProblemParams,
    pub epsilons: Vec<f64>,
    pub init: Init,
    pub tol: f64,
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub runs: Vec<PenalizedRun>,
    pub reports: Vec<ConcentrationReport>,
    /// max / min of dist_scaled across levels.
    pub dist_scaled_spread: f64,
    pub dist_to_m_decreasing: bool,
    /// Largest relative change of J/eps^N between consecutive levels.
    pub energy_drift: f64,
    /// Error of the first failing level; earlier levels are kept.
    pub error: Option<Error>,
}

pub fn epsilon_sweep(cfg: &SweepConfig) -> Result<SweepReport> {
    if cfg.epsilons.is_empty() {
        return Err(Error::validation("empty epsilon list"));
    }
    if cfg.epsilons.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::validation("epsilon list must be strictly decreasing"));
    }
    let outcomes: Vec<Result<(PenalizedRun, ConcentrationReport)>> = cfg
        .epsilons
        .par_iter()
        .map(|&eps| {
            let ps = cfg.penalty.with_epsilon(eps);
            let run = solve_penalized(&cfg.grid, &cfg.potential, &ps, &cfg.params, cfg.init, cfg.tol)?;
            let rep = concentration_report(&run, &cfg.potential)?;
            Ok((run, rep))
        })
        .collect();
    let mut runs = Vec::new();
    let mut reports = Vec::new();
    let mut error = None;
    for o in outcomes {
        match o {
            Ok((run, rep)) => {
                runs.push(run);
                reports.push(rep);
            }
            Err(e) => {
                error = Some(e);
                break;
            }
        }
    }
    let ds: Vec<f64> = reports.iter().map(|r| r.dist_scaled).collect();
    let (lo, hi) = ds
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(l, h), &d| (l.min(d), h.max(d)));
    let spread = if ds.is_empty() {
        f64::NAN
    } else if hi == 0.0 {
        1.0
    } else {
        hi / lo
    };
    let decreasing = reports.windows(2).all(|w| w[1].dist_to_m < w[0].dist_to_m);
    let drift = reports
        .windows(2)
        .map(|w| ((w[1].energy_over_eps_n - w[0].energy_over_eps_n) / w[0].energy_over_eps_n).abs())
        .fold(0.0, f64::max);
    Ok(SweepReport {
        runs,
        reports,
        dist_scaled_spread: spread,
        dist_to_m_decreasing: decreasing,
        energy_drift: drift,
        error,
    })
}

/// Critical Hardy constant of the grid dimension.
pub fn hardy_limit(grid: &Grid) -> f64 {
    hardy_constant(grid.dim())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{BoxGrid, RadialGrid};
    use crate::penalty::Potential;

    fn box1(l: f64, n: usize) -> Arc<Grid> {
        Arc::new(BoxGrid::new(1, l, n).unwrap().into())
    }

    fn flat(alpha: f64, lambda: f64, u: f64) -> PotentialSpec {
        PotentialSpec::new(
            Potential::constant(alpha),
            Potential::constant(alpha),
            1,
            [0.0; 3],
            lambda,
            u,
            DecayClass::InversePower { sigma: 0.0 },
        )
        .unwrap()
    }

    #[test]
    fn constant_potential_collapses_to_the_limit_energy() {
        let grid = box1(4.0, 1601);
        let params = ProblemParams::new(1, 2.0, 0.5).unwrap();
        let pot = flat(1.0, 3.0, 3.5);
        let solver = LimitSolver::for_range(1, 1.0, 1.0, 0.02).unwrap();
        let lp = LimitParams::new(params, 1.0, 1.0).unwrap();
        let c = solver.solve_coupled_ground(&lp).unwrap().energy;
        for eps in [0.2, 0.1] {
            let ps = PenaltySpec::slow(eps, 0.0, 2.0);
            let run = solve_penalized(&grid, &pot, &ps, &params, Init::GroundBump { z: [0.0; 3] }, 1e-9).unwrap();
            let rel = (run.energy_over_eps_n - c).abs() / c;
            assert!(rel < 2e-3, "eps {eps}: {} vs {c}", run.energy_over_eps_n);
        }
    }

    #[test]
    fn bump_outside_lambda_is_rejected() {
        let grid = box1(4.0, 801);
        let params = ProblemParams::new(1, 2.0, 0.5).unwrap();
        let pot = flat(1.0, 1.0, 2.0);
        let ps = PenaltySpec::slow(0.2, 0.0, 2.0);
        let e = solve_penalized(&grid, &pot, &ps, &params, Init::GroundBump { z: [1.5, 0.0, 0.0] }, 1e-9);
        assert!(e.unwrap_err().is_validation());
        let coarse = box1(4.0, 81);
        let e = solve_penalized(&coarse, &pot, &ps, &params, Init::GroundBump { z: [0.0; 3] }, 1e-9);
        assert!(matches!(e, Err(Error::Resolution(_))));
    }

    #[test]
    fn peaks_of_translated_and_double_bumps() {
        let grid = box1(5.0, 1001);
        let z = 0.4321;
        let u = ScalarField::from_fn(grid.clone(), |x| 1.0 / ((x[0] - z) / 0.3).cosh());
        let w = FieldPair::new(u.clone(), u.clone()).unwrap();
        let pk = find_peaks(&w).unwrap();
        assert!((pk.x1[0] - z).abs() < grid.h());
        assert!((pk.x1[0] - pk.x2[0]).abs() <= grid.h());
        assert!(!pk.tie);
        let two = ScalarField::from_fn(grid.clone(), |x| {
            1.0 / ((x[0] - 2.0) / 0.3).cosh() + 1.0 / ((x[0] + 2.0) / 0.3).cosh()
        });
        let pk = find_peaks(&FieldPair::new(two.clone(), two).unwrap()).unwrap();
        assert!(pk.tie);
        assert!(pk.x1[0] < 0.0);
        let zero = FieldPair::new(ScalarField::zeros(grid.clone()), ScalarField::zeros(grid)).unwrap();
        assert!(matches!(find_peaks(&zero), Err(Error::DegenerateField(_))));
    }

    #[test]
    fn decay_fit_recovers_exponential_rate() {
        let grid = box1(3.0, 3001);
        let eps = 0.1;
        let u = ScalarField::from_fn(grid.clone(), |x| (-x[0].abs() / eps).exp());
        let w = FieldPair::new(u, ScalarField::zeros(grid.clone())).unwrap();
        let fit = decay_fit_in(&w, &[0.0; 3], eps, DecayModel::Stretched { sigma: 0.0 }, 0.4, 2.5).unwrap();
        assert!((fit.rate - 1.0).abs() < 0.01, "{}", fit.rate);
        let short = decay_fit_in(&w, &[0.0; 3], eps, DecayModel::Stretched { sigma: 0.0 }, 0.4, 0.405);
        assert!(matches!(short, Err(Error::FitDegenerate(_))));
    }

    #[test]
    fn soliton_tail_rate_approaches_one() {
        let grid = box1(8.0, 8001);
        let eps = 0.2;
        let u = ScalarField::from_fn(grid.clone(), |x| 2f64.sqrt() / (x[0] / eps).cosh());
        let w = FieldPair::new(u, ScalarField::zeros(grid.clone())).unwrap();
        let near = decay_fit_in(&w, &[0.0; 3], eps, DecayModel::Stretched { sigma: 0.0 }, 0.2, 1.0).unwrap();
        let far = decay_fit_in(&w, &[0.0; 3], eps, DecayModel::Stretched { sigma: 0.0 }, 1.5, 3.0).unwrap();
        assert!((far.rate - 1.0).abs() < (near.rate - 1.0).abs());
        assert!((far.rate - 1.0).abs() < 1e-3);
    }

    #[test]
    fn window_checks() {
        let r = energy_window_check(
            1.7,
            EnergyWindow::Higher {
                lower: 4.0 / 3.0,
                upper: 16.0 / 9.0,
            },
            WINDOW_SLACK,
        );
        assert!(r.pass);
        let r = energy_window_check(
            1.9,
            EnergyWindow::Higher {
                lower: 4.0 / 3.0,
                upper: 16.0 / 9.0,
            },
            WINDOW_SLACK,
        );
        assert!(!r.pass);
        let r = energy_window_check(1.0, EnergyWindow::Higher { lower: 1.0, upper: 1.0 }, 0.0);
        assert!(r.pass);
        assert!(energy_window_check(1.3, EnergyWindow::Ground { bound: 4.0 / 3.0 }, WINDOW_SLACK).pass);
    }

    #[test]
    fn verify_original_paths() {
        let grid = box1(4.0, 801);
        let params = ProblemParams::new(1, 2.0, 1.5).unwrap();
        let pot = flat(1.0, 1.5, 2.0);
        let ps = PenaltySpec::slow(0.1, 0.0, 2.0);
        let run = solve_penalized(&grid, &pot, &ps, &params, Init::GroundBump { z: [0.0; 3] }, 1e-9).unwrap();
        let ok = verify_original(&run.pair, &run.penalty);
        assert!(ok.pass() && ok.checked > 0 && ok.margin > 0.0);
        let big = FieldPair::new(run.pair.u1.scaled(1e6), run.pair.u2.scaled(1e6)).unwrap();
        let bad = verify_original(&big, &run.penalty);
        assert!(!bad.pass());
        assert!(bad.violations.iter().all(|(_, x)| x[0].abs() >= 1.5));
        let inside = ScalarField::from_fn(grid.clone(), |x| (1.0 - x[0] * x[0]).max(0.0));
        let w = FieldPair::new(inside.clone(), inside).unwrap();
        assert!(verify_original(&w, &run.penalty).pass());
    }

    #[test]
    fn pohozaev_constant_potential_balances() {
        let grid = box1(4.0, 1601);
        let params = ProblemParams::new(1, 2.0, 1.5).unwrap();
        let pot = flat(1.0, 2.0, 3.0);
        let eps = 0.2;
        let ps = PenaltySpec::slow(eps, 0.0, 2.0);
        let run = solve_penalized(&grid, &pot, &ps, &params, Init::GroundBump { z: [0.0; 3] }, 1e-10).unwrap();
        let rep = concentration_report(&run, &pot).unwrap();
        let ph = pohozaev_residual(&run.pair, &pot, &params, eps, &rep.x_omega, 0.5, 0).unwrap();
        assert_eq!(ph.volume, 0.0);
        assert!(ph.residual.abs() <= 1e-6 * ph.surface_magnitude, "{ph:?}");
        let e = pohozaev_residual(&run.pair, &pot, &params, eps, &rep.x_omega, 3.0 * grid.h(), 0);
        assert!(matches!(e, Err(Error::Resolution(_))));
    }

    #[test]
    fn power_barrier_holds_off_the_core() {
        let grid = box1(6.0, 2401);
        let params = ProblemParams::new(1, 2.0, 1.5).unwrap();
        let pot = flat(1.0, 3.0, 4.0);
        let eps = 0.05;
        let ps = PenaltySpec::slow(eps, 0.0, 2.0);
        let run = solve_penalized(&grid, &pot, &ps, &params, Init::GroundBump { z: [0.0; 3] }, 1e-9).unwrap();
        let rep = concentration_report(&run, &pot).unwrap();
        let bar = barrier_supersolution(&run, &pot, &ps, &params, &rep, BarrierKind::Power, 1e-8).unwrap();
        assert!(bar.violations.is_empty(), "{} violations", bar.violations.len());
        assert!(bar.min_in_core >= bar.c_tilde * (1.0 - 1e-12));
        assert!(bar.field.values().iter().all(|v| *v > 0.0));
    }

    #[test]
    fn cosh_extension_is_constant_deep_inside() {
        let grid: Arc<Grid> = Arc::new(RadialGrid::new(3, 6.0, 1201).unwrap().into());
        let params = ProblemParams::new(3, 2.5, 2.5).unwrap();
        let v = Potential::compact_support(0.5, 0.5, 2.5);
        let pot = PotentialSpec::new(v.clone(), v, 3, [0.0; 3], 2.0, 3.0, DecayClass::FastOrCompact).unwrap();
        let eps = 0.1;
        let ps = PenaltySpec::fast(eps);
        let run = solve_penalized(&grid, &pot, &ps, &params, Init::GroundBump { z: [0.0; 3] }, 1e-9).unwrap();
        let rep = concentration_report(&run, &pot).unwrap();
        let bar = barrier_supersolution(&run, &pot, &ps, &params, &rep, BarrierKind::Cosh, 1e-6).unwrap();
        let k = (pot.m1 * (bar.r / eps - ps.barrier.core)).cosh();
        let ext = bar.extension.unwrap();
        for i in 0..grid.len() {
            let x = grid.point(i);
            if pot.dist_to_lambda_boundary(&x) >= bar.r {
                assert!((ext.values()[i] - k).abs() <= 1e-12 * k);
            }
        }
    }

    #[test]
    fn sweep_validates_epsilon_lists() {
        let grid = box1(4.0, 801);
        let params = ProblemParams::new(1, 2.0, 1.5).unwrap();
        let pot = flat(1.0, 1.5, 2.0);
        let mut cfg = SweepConfig {
            grid,
            potential: pot,
            penalty: PenaltySpec::slow(0.4, 0.0, 2.0),
            params,
            epsilons: vec![],
            init: Init::GroundBump { z: [0.0; 3] },
            tol: 1e-9,
        };
        assert!(epsilon_sweep(&cfg).unwrap_err().is_validation());
        cfg.epsilons = vec![0.4, 0.2, 0.1];
        let rep = epsilon_sweep(&cfg).unwrap();
        assert!(rep.error.is_none());
        assert_eq!(rep.reports.len(), 3);
        assert!(rep.energy_drift < 0.02, "{}", rep.energy_drift);
    }
}
