//! Closed-form ground-energy constants, coupling thresholds and the
//! separation scan for sums of shifted ground energies.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::ProblemParams;
use crate::limit::{nehari_maximizer, LimitParams, LimitSolver, NehariData};
use crate::linalg::bisect;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledEnergy {
    pub value: f64,
    /// Set when the alpha exponent p/(p-1) - N/2 is not positive.
    pub nonpositive_exponent: bool,
}

/// `C_{alpha,beta} = alpha^{p/(p-1) - N/2} (1 + beta)^{-1/(p-1)} C_{1,0}`.
pub fn scaled_ground_energy(alpha: f64, beta: f64, c10: f64, params: &ProblemParams) -> Result<ScaledEnergy> {
    if !(alpha > 0.0) || !(beta > -1.0) || !(c10 > 0.0) {
        return Err(Error::validation(format!(
            "need alpha > 0, beta > -1, C10 > 0; got ({alpha}, {beta}, {c10})"
        )));
    }
    let p = params.p;
    let e = params.scaling_exponent();
    Ok(ScaledEnergy {
        value: alpha.powf(e) * (1.0 + beta).powf(-1.0 / (p - 1.0)) * c10,
        nonpositive_exponent: e <= 0.0,
    })
}

/// `(1 + omega^{p/(p-1) - N/2})^{p-1} - 1`.
pub fn beta_omega_p(omega: f64, p: f64, n: usize) -> Result<f64> {
    if !(omega > 0.0 && omega <= 1.0) {
        return Err(Error::validation(format!("omega must lie in (0, 1], got {omega}")));
    }
    let e = p / (p - 1.0) - n as f64 / 2.0;
    Ok((1.0 + omega.powf(e)).powf(p - 1.0) - 1.0)
}

/// Integer and fractional parts of `(C_{m1,0} + C_{m2,0}) / C_{m1,0}` and
/// the resulting target level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Levels {
    pub ratio: f64,
    pub l_tilde: u64,
    pub l_hat: f64,
    pub target: f64,
}

pub fn levels(m1: f64, m2: f64, params: &ProblemParams) -> Result<Levels> {
    if !(m1 > 0.0 && m2 >= m1) {
        return Err(Error::validation(format!("need 0 < m1 <= m2, got ({m1}, {m2})")));
    }
    let e = params.scaling_exponent();
    let ratio = 1.0 + (m2 / m1).powf(e);
    let mut l_tilde = ratio.floor();
    let mut l_hat = ratio - l_tilde;
    if l_hat > 1.0 - 1e-12 {
        l_tilde += 1.0;
        l_hat = 0.0;
    } else if l_hat < 1e-12 {
        l_hat = 0.0;
    }
    let target = if l_hat == 0.0 { l_tilde - 1.0 } else { l_tilde };
    Ok(Levels {
        ratio,
        l_tilde: l_tilde as u64,
        l_hat,
        target,
    })
}

/// The coupling at which `(C_{m1,b} + C_{m2,b}) / C_{m1,0}` drops to the
/// target level; 1 when m1 = m2.
pub fn beta_tilde(m1: f64, m2: f64, params: &ProblemParams) -> Result<f64> {
    let lv = levels(m1, m2, params)?;
    if m1 == m2 {
        return Ok(1.0);
    }
    let p = params.p;
    let f = |b: f64| lv.ratio * (1.0 + b).powf(-1.0 / (p - 1.0)) - lv.target;
    let mut hi = 1.0;
    while f(hi) > 0.0 {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::Domain(format!(
                "target level {} not bracketed (ratio {})",
                lv.target, lv.ratio
            )));
        }
    }
    if f(0.0) <= 0.0 {
        return Err(Error::Domain(format!(
            "target level {} not below ratio {}",
            lv.target, lv.ratio
        )));
    }
    bisect(f, 0.0, hi, 1e-10).ok_or_else(|| Error::Domain(format!("no sign change for target {}", lv.target)))
}

/// The shift `theta(beta)` for which `(C_{m1,beta} + C_{m2,beta}) / C_{m1+theta,0}`
/// equals the target level.
pub fn theta_of_beta(m1: f64, m2: f64, beta: f64, params: &ProblemParams) -> Result<f64> {
    let bt = beta_tilde(m1, m2, params)?;
    if !(beta > 0.0 && beta < bt) {
        return Err(Error::Domain(format!("beta = {beta} outside (0, {bt})")));
    }
    let p = params.p;
    let e = params.scaling_exponent();
    if m1 == m2 {
        let q = 2.0 / (1.0 + beta).powf(1.0 / (p - 1.0));
        return Ok((q.powf(1.0 / e) - 1.0) * m1);
    }
    let lv = levels(m1, m2, params)?;
    let num = (m1.powf(e) + m2.powf(e)) * (1.0 + beta).powf(-1.0 / (p - 1.0));
    let f = |th: f64| num / (m1 + th).powf(e) - lv.target;
    let mut hi = m1;
    while f(hi) > 0.0 {
        hi *= 2.0;
        if hi > 1e12 * m1 {
            return Err(Error::Domain("theta not bracketed".into()));
        }
    }
    bisect(f, 0.0, hi, 1e-12).ok_or_else(|| Error::Domain("theta not bracketed".into()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CstarReport {
    pub value: f64,
    pub t: f64,
    pub s: f64,
    /// `C_{m1,beta} + C_{m2,beta}` on the same grid.
    pub lower: f64,
    /// `C_{m1,0} + C_{m2,0}` on the same grid.
    pub upper: f64,
}

/// Maximum of `J((t U_{m1,beta}, s U_{m2,beta}))` over t, s > 0.
pub fn cstar(m1: f64, m2: f64, beta: f64, params: &ProblemParams, solver: &LimitSolver) -> Result<CstarReport> {
    if !(m1 > 0.0 && m2 > 0.0) || beta < 0.0 {
        return Err(Error::validation("cstar needs m1, m2 > 0 and beta >= 0"));
    }
    let p = params.p;
    let u1 = solver.solve_scalar_ground(m1, beta, params)?;
    let u2 = solver.solve_scalar_ground(m2, beta, params)?;
    let lp = LimitParams::new(params.with_beta(beta), m1, m2)?;
    let w = crate::grid::FieldPair::new(u1, u2)?;
    let d = NehariData::of(&w, &lp)?;
    let g = |lt: f64, ls: f64| d.scaled_energy(p, beta, lt.exp(), ls.exp());
    let steps = 80;
    let (lo, hi) = (-5.0f64, 5.0f64);
    let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
    for a in 0..=steps {
        for b in 0..=steps {
            let lt = lo + (hi - lo) * a as f64 / steps as f64;
            let ls = lo + (hi - lo) * b as f64 / steps as f64;
            let v = g(lt, ls);
            if v > best.0 {
                best = (v, lt, ls);
            }
        }
    }
    let (mut v, mut lt, mut ls) = best;
    let mut step = (hi - lo) / steps as f64;
    while step > 1e-13 {
        let mut moved = false;
        for (dt, ds) in [
            (1.0, 0.0),
            (-1.0, 0.0),
            (0.0, 1.0),
            (0.0, -1.0),
            (1.0, 1.0),
            (-1.0, -1.0),
            (1.0, -1.0),
            (-1.0, 1.0),
        ] {
            let c = g(lt + dt * step, ls + ds * step);
            if c > v {
                v = c;
                lt += dt * step;
                ls += ds * step;
                moved = true;
                break;
            }
        }
        if !moved {
            step *= 0.5;
        }
    }
    let (mut t, mut s) = (lt.exp(), ls.exp());
    if let Ok((rt, rs)) = nehari_maximizer(&d, p, beta) {
        let rv = d.scaled_energy(p, beta, rt, rs);
        if rv >= v {
            v = rv;
            t = rt;
            s = rs;
        }
    }
    let c = 0.5 - 1.0 / (2.0 * p);
    let lower = c * (d.x1 + d.x2);
    let upper = lower * (1.0 + beta).powf(1.0 / (p - 1.0));
    if v < lower * (1.0 - 1e-3) || v > upper * (1.0 + 1e-3) {
        return Err(Error::Consistency(format!("C* = {v} outside [{lower}, {upper}]")));
    }
    Ok(CstarReport {
        value: v,
        t,
        s,
        lower,
        upper,
    })
}

/// Attainable sums for one k: the interval `[k C_{m1,0}, k C_{m1+theta,0}]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SumInterval {
    pub k: u32,
    pub lo: f64,
    pub hi: f64,
    pub enters_window: bool,
    pub touches_boundary: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeparationReport {
    pub window_lo: f64,
    pub window_hi: f64,
    pub intervals: Vec<SumInterval>,
    pub closest_below: Option<f64>,
    pub closest_above: Option<f64>,
    pub boundary_hits: Vec<u32>,
    /// Number of grid sums found strictly inside the window.
    pub grid_violations: usize,
    pub pass: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanInputs {
    pub m1: f64,
    pub m2: f64,
    pub beta: f64,
    pub theta: f64,
    pub c10: f64,
    pub cstar: f64,
}

/// Checks that no sum of k shifted ground energies `C_{m1+delta_i,0}`,
/// `delta_i in [0, theta]`, lands strictly inside
/// `[C_{m1,beta} + C_{m2,beta}, C*]`. Endpoint contacts are reported separately.
pub fn separation_scan(
    inp: &ScanInputs,
    params: &ProblemParams,
    k_max: u32,
    grid_steps: usize,
) -> Result<SeparationReport> {
    if k_max < 1 || grid_steps < 100 || inp.theta < 0.0 {
        return Err(Error::validation("need k_max >= 1, grid_steps >= 100, theta >= 0"));
    }
    let c = |a: f64, b: f64| scaled_ground_energy(a, b, inp.c10, params).map(|v| v.value);
    let window_lo = c(inp.m1, inp.beta)? + c(inp.m2, inp.beta)?;
    let window_hi = inp.cstar;
    let tol = 1e-12 * window_hi.abs().max(1.0);
    let inside = |x: f64| x > window_lo + tol && x < window_hi - tol;
    let touches = |lo: f64, hi: f64| [window_lo, window_hi].iter().any(|&w| lo <= w + tol && hi >= w - tol);
    let base = c(inp.m1, 0.0)?;
    let top = c(inp.m1 + inp.theta, 0.0)?;
    let mut intervals = Vec::new();
    let mut closest_below: Option<f64> = None;
    let mut closest_above: Option<f64> = None;
    let mut grid_violations = 0;
    let deltas: Vec<f64> = (0..grid_steps)
        .map(|j| c(inp.m1 + inp.theta * j as f64 / (grid_steps - 1) as f64, 0.0))
        .collect::<Result<_>>()?;
    for k in 1..=k_max {
        let kf = k as f64;
        let (lo, hi) = (kf * base, kf * top);
        let enters = hi > window_lo + tol && lo < window_hi - tol && window_hi - window_lo > 2.0 * tol;
        for v in [lo, hi] {
            if v <= window_lo + tol {
                closest_below = Some(closest_below.map_or(v, |b: f64| b.max(v)));
            }
            if v >= window_hi - tol {
                closest_above = Some(closest_above.map_or(v, |b: f64| b.min(v)));
            }
        }
        for &dv in &deltas {
            let low_side = (kf - 1.0) * base + dv;
            let high_side = (kf - 1.0) * top + dv;
            grid_violations += inside(low_side) as usize + inside(high_side) as usize;
        }
        intervals.push(SumInterval {
            k,
            lo,
            hi,
            enters_window: enters,
            touches_boundary: touches(lo, hi),
        });
    }
    let boundary_hits = intervals.iter().filter(|i| i.touches_boundary).map(|i| i.k).collect();
    let pass = intervals.iter().all(|i| !i.enters_window) && grid_violations == 0;
    Ok(SeparationReport {
        window_lo,
        window_hi,
        intervals,
        closest_below,
        closest_above,
        boundary_hits,
        grid_violations,
        pass,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BetaGroundEstimate {
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
    pub probes: Vec<(f64, f64)>,
}

/// Largest coupling for which the minimum over sampled (V1(z), V2(z)) of the
/// coupled ground energy still equals `C_{m1,0}`, bracketed to width 0.02.
pub fn beta_ground_estimate(
    samples: &[(f64, f64)],
    params: &ProblemParams,
    solver: &LimitSolver,
) -> Result<BetaGroundEstimate> {
    if samples.len() < 9 {
        return Err(Error::validation(format!(
            "need at least 9 potential samples, got {}",
            samples.len()
        )));
    }
    if samples.iter().any(|&(a, b)| !(a > 0.0 && b > 0.0)) {
        return Err(Error::validation("potential samples must be positive"));
    }
    let m1 = samples.iter().map(|&(a, b)| a.min(b)).fold(f64::INFINITY, f64::min);
    let c_m1 = solver.ground_energy(m1, 0.0, params)?;
    let mut distinct: Vec<(f64, f64)> = samples.to_vec();
    distinct.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    distinct.dedup();
    let mut probes = Vec::new();
    let mut gap = |beta: f64| -> Result<f64> {
        let energies: Vec<Result<f64>> = distinct
            .par_iter()
            .map(|&(a, b)| {
                let lp = LimitParams::new(params.with_beta(beta), a, b)?;
                solver.solve_coupled_ground(&lp).map(|g| g.energy)
            })
            .collect();
        let mut min = f64::INFINITY;
        for e in energies {
            min = min.min(e?);
        }
        let d = min - c_m1;
        probes.push((beta, d));
        Ok(d)
    };
    let below = |d: f64| d < -1e-8 * c_m1.abs();
    let mut lo = 0.0;
    let mut hi = 0.02;
    loop {
        if below(gap(hi)?) {
            break;
        }
        lo = hi;
        hi *= 2.0;
        if hi > 1024.0 {
            return Err(Error::Domain("coupled ground energy never drops below C_{m1,0}".into()));
        }
    }
    while hi - lo > 0.02 {
        let mid = 0.5 * (lo + hi);
        if below(gap(mid)?) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(BetaGroundEstimate {
        estimate: 0.5 * (lo + hi),
        lo,
        hi,
        probes,
    })
}

/// Every threshold quantity for one (m1, m2, beta, N, p).
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdReport {
    pub c10: f64,
    pub c_alpha_beta: Vec<((f64, f64), f64)>,
    pub beta_omega_p: f64,
    pub beta_tilde: f64,
    pub theta: Option<f64>,
    pub cstar: f64,
    pub beta_ground: Option<f64>,
    pub l_tilde: u64,
    pub l_hat: f64,
}

impl ThresholdReport {
    pub fn compute(m1: f64, m2: f64, beta: f64, params: &ProblemParams, solver: &LimitSolver) -> Result<Self> {
        let lv = levels(m1, m2, params)?;
        let c10 = solver.ground_energy(1.0, 0.0, params)?;
        let mut c_alpha_beta = Vec::new();
        for a in [m1, m2] {
            for b in [0.0, beta] {
                c_alpha_beta.push(((a, b), scaled_ground_energy(a, b, c10, params)?.value));
            }
        }
        let bt = beta_tilde(m1, m2, params)?;
        let theta = if beta > 0.0 && beta < bt {
            Some(theta_of_beta(m1, m2, beta, params)?)
        } else {
            None
        };
        Ok(Self {
            c10,
            c_alpha_beta,
            beta_omega_p: beta_omega_p(m1 / m2, params.p, params.n)?,
            beta_tilde: bt,
            theta,
            cstar: cstar(m1, m2, beta, params, solver)?.value,
            beta_ground: None,
            l_tilde: lv.l_tilde,
            l_hat: lv.l_hat,
        })
    }
}
