//! Run kinds: each turns a validated config into tables.

use std::collections::BTreeMap;
use std::time::Instant;

use solitonlab_core::grid::{laplacian, ProblemParams, ScalarField};
use solitonlab_core::limit::{energy_scalar, LimitParams, LimitSolver};
use solitonlab_core::semiclassical::{
    concentration_report, energy_window_check, epsilon_sweep, pohozaev_residual, solve_penalized, verify_original,
    ConcentrationReport, DecayModel, EnergyWindow, Init, PenalizedRun, SweepConfig,
};
use solitonlab_core::thresholds::{scaled_ground_energy, ThresholdReport};
use solitonlab_core::Error;

use crate::config::{ExperimentConfig, RunKind, Semiclassical};
use crate::output::{ConcentrationRow, DecayRow, EnergyRow, PohozaevRow, Tables, ThresholdRow};
use crate::Failure;

pub struct Outcome {
    pub tables: Tables,
    pub timings: BTreeMap<String, f64>,
    /// Set when a solver error interrupted the run after partial output.
    pub error: Option<Failure>,
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    params: ProblemParams,
    hash: String,
    timings: BTreeMap<String, f64>,
}

impl Ctx<'_> {
    fn time<T>(&mut self, key: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        *self.timings.entry(key.to_string()).or_default() += t.elapsed().as_secs_f64();
        out
    }
}

pub fn execute(cfg: &ExperimentConfig, kind: RunKind, hash: &str) -> Result<Outcome, Failure> {
    cfg.validate(kind)?;
    let mut ctx = Ctx {
        cfg,
        params: cfg.problem()?,
        hash: hash.to_string(),
        timings: BTreeMap::new(),
    };
    let mut tables = Tables::default();
    let error = match kind {
        RunKind::LimitGround => {
            limit_ground(&mut ctx, &mut tables)?;
            None
        }
        RunKind::CoupledGround => {
            coupled_ground(&mut ctx, &mut tables)?;
            None
        }
        RunKind::Thresholds => {
            thresholds(&mut ctx, &mut tables)?;
            None
        }
        RunKind::Sweep => sweep(&mut ctx, &mut tables, true)?,
        RunKind::Verify => sweep(&mut ctx, &mut tables, false)?,
        RunKind::Pohozaev => pohozaev(&mut ctx, &mut tables)?,
    };
    Ok(Outcome {
        tables,
        timings: ctx.timings,
        error,
    })
}

fn scalar_residual(u: &ScalarField, alpha: f64, beta_plus: f64, p: f64) -> Result<f64, Error> {
    let lap = laplacian(u)?;
    let grid = u.grid();
    Ok(u.values()
        .iter()
        .zip(lap.values())
        .enumerate()
        .filter(|(i, _)| !grid.is_dirichlet(*i))
        .map(|(_, (v, l))| (-l + alpha * v - (1.0 + beta_plus) * v.max(0.0).powf(2.0 * p - 1.0)).abs())
        .fold(0.0, f64::max))
}

fn limit_ground(ctx: &mut Ctx, t: &mut Tables) -> Result<(), Failure> {
    let l = ctx.cfg.limit()?.clone();
    let params = ctx.params;
    let alphas: Vec<f64> = std::iter::once(l.alpha1).chain(l.alpha2).collect();
    let lo = alphas.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = alphas.iter().copied().fold(0.0, f64::max);
    let solver = LimitSolver::for_range(params.n, lo, hi, l.spacing)?;
    let bp = params.beta.max(0.0);
    for a in alphas {
        for b in if bp > 0.0 { vec![0.0, bp] } else { vec![0.0] } {
            let u = ctx.time("solve", || solver.solve_scalar_ground_direct(a, b, &params))?;
            let base = params.with_beta(0.0);
            t.energies.push(EnergyRow {
                config_hash: ctx.hash.clone(),
                kind: if b == 0.0 {
                    "scalar_ground".into()
                } else {
                    "scalar_ground_coupled".into()
                },
                n: params.n,
                p: params.p,
                beta: b,
                alpha1: a,
                alpha2: a,
                epsilon: None,
                energy: energy_scalar(&u, a, b, &base)?,
                residual: scalar_residual(&u, a, b, params.p)?,
                sup1: u.sup_norm(),
                sup2: 0.0,
                standard: true,
            });
        }
    }
    Ok(())
}

fn coupled_ground(ctx: &mut Ctx, t: &mut Tables) -> Result<(), Failure> {
    let l = ctx.cfg.limit()?.clone();
    let params = ctx.params;
    let a2 = l.alpha2.unwrap_or(l.alpha1);
    let solver = LimitSolver::for_range(params.n, l.alpha1.min(a2), l.alpha1.max(a2), l.spacing)?;
    let lp = LimitParams::new(params, l.alpha1, a2)?;
    let g = ctx.time("solve", || solver.solve_coupled_ground(&lp))?;
    let floor = solitonlab_core::limit::NONSTANDARD_FLOOR;
    let row = |kind: String, pair: &solitonlab_core::FieldPair, energy: f64, residual: f64| {
        let (s1, s2) = (pair.u1.sup_norm(), pair.u2.sup_norm());
        EnergyRow {
            config_hash: ctx.hash.clone(),
            kind,
            n: params.n,
            p: params.p,
            beta: params.beta,
            alpha1: l.alpha1,
            alpha2: a2,
            epsilon: None,
            energy,
            residual,
            sup1: s1,
            sup2: s2,
            standard: s1 < floor || s2 < floor,
        }
    };
    t.energies
        .push(row("coupled_ground".into(), &g.pair, g.energy, g.residual));
    for c in &g.candidates {
        t.energies
            .push(row(format!("candidate:{}", c.label), &c.pair, c.energy, c.residual));
    }
    Ok(())
}

fn thresholds(ctx: &mut Ctx, t: &mut Tables) -> Result<(), Failure> {
    let lv = ctx.cfg.levels()?.clone();
    let params = ctx.params;
    let solver = LimitSolver::for_range(params.n, lv.m1, lv.m2, 0.01)?;
    let r = ctx.time("thresholds", || {
        ThresholdReport::compute(lv.m1, lv.m2, params.beta, &params, &solver)
    })?;
    let c = |a: f64, b: f64| {
        r.c_alpha_beta
            .iter()
            .find(|((x, y), _)| *x == a && *y == b)
            .map(|(_, v)| *v)
            .unwrap_or(f64::NAN)
    };
    t.thresholds.push(ThresholdRow {
        config_hash: ctx.hash.clone(),
        n: params.n,
        p: params.p,
        beta: params.beta,
        m1: lv.m1,
        m2: lv.m2,
        omega: lv.m1 / lv.m2,
        c10: r.c10,
        c_m1_0: c(lv.m1, 0.0),
        c_m2_0: c(lv.m2, 0.0),
        c_m1_beta: c(lv.m1, params.beta),
        c_m2_beta: c(lv.m2, params.beta),
        beta_omega_p: r.beta_omega_p,
        beta_tilde: r.beta_tilde,
        theta: r.theta,
        cstar: r.cstar,
        l_tilde: r.l_tilde,
        l_hat: r.l_hat,
    });
    Ok(())
}

/// Energy window of the run kind: the ground bound at the first point of
/// the minimum set, or the higher-energy window.
fn window(sc: &Semiclassical, params: &ProblemParams) -> Result<EnergyWindow, Failure> {
    let pot = &sc.potential;
    let (lo, hi) = (pot.m1.min(pot.m2), pot.m1.max(pot.m2));
    let solver = LimitSolver::for_range(params.n, lo, hi, 0.02)?;
    match sc.init {
        Init::GroundBump { .. } => {
            let z = pot.m_set.first().copied().unwrap_or(pot.center);
            let z = &z[..params.n];
            let lp = LimitParams::new(*params, pot.v1.eval(z), pot.v2.eval(z))?;
            Ok(EnergyWindow::Ground {
                bound: solver.solve_coupled_ground(&lp)?.energy,
            })
        }
        Init::Synchronized { .. } => {
            let r = ThresholdReport::compute(pot.m1, pot.m2, params.beta, params, &solver)?;
            let c = |m: f64| scaled_ground_energy(m, params.beta, r.c10, params).map(|v| v.value);
            let lower = c(pot.m1)? + c(pot.m2)?;
            Ok(EnergyWindow::Higher { lower, upper: r.cstar })
        }
    }
}

fn concentration_row(
    hash: &str,
    rep: &ConcentrationReport,
    run: &PenalizedRun,
    window: EnergyWindow,
    slack: f64,
) -> ConcentrationRow {
    let v = verify_original(&run.pair, &run.penalty);
    ConcentrationRow {
        config_hash: hash.to_string(),
        epsilon: rep.epsilon,
        x1_0: rep.x1_peak[0],
        x1_1: rep.x1_peak[1],
        x1_2: rep.x1_peak[2],
        x2_0: rep.x2_peak[0],
        x2_1: rep.x2_peak[1],
        x2_2: rep.x2_peak[2],
        x_sum_0: rep.x_sum_peak[0],
        x_sum_1: rep.x_sum_peak[1],
        x_sum_2: rep.x_sum_peak[2],
        x_omega_0: rep.x_omega[0],
        x_omega_1: rep.x_omega[1],
        x_omega_2: rep.x_omega[2],
        peak1: rep.peak_values[0],
        peak2: rep.peak_values[1],
        peak_sum: rep.peak_values[2],
        dist_scaled: rep.dist_scaled,
        dist_to_m: rep.dist_to_m,
        energy_over_eps_n: rep.energy_over_eps_n,
        residual: rep.residual,
        standard: rep.standard,
        tie: rep.tie,
        peaks_in_lambda: rep.peaks_in_lambda,
        window_pass: energy_window_check(rep.energy_over_eps_n, window, slack).pass,
        violations: v.violations.len(),
        margin: v.margin,
    }
}

fn energy_row(ctx: &Ctx, sc: &Semiclassical, run: &PenalizedRun, rep: &ConcentrationReport) -> EnergyRow {
    EnergyRow {
        config_hash: ctx.hash.clone(),
        kind: match run.init {
            Init::GroundBump { .. } => "penalized_ground".into(),
            Init::Synchronized { .. } => "penalized_synchronized".into(),
        },
        n: ctx.params.n,
        p: ctx.params.p,
        beta: ctx.params.beta,
        alpha1: sc.potential.m1,
        alpha2: sc.potential.m2,
        epsilon: Some(run.epsilon),
        energy: run.energy_over_eps_n,
        residual: run.residual,
        sup1: rep.peak_values[0],
        sup2: rep.peak_values[1],
        standard: rep.standard,
    }
}

fn model_name(m: DecayModel) -> String {
    match m {
        DecayModel::Stretched { sigma } => format!("stretched(sigma={sigma})"),
        DecayModel::Power => "power".into(),
        DecayModel::Product { m1 } => format!("product(m1={m1})"),
    }
}

fn sweep(ctx: &mut Ctx, t: &mut Tables, with_decay: bool) -> Result<Option<Failure>, Failure> {
    let sc = ctx.cfg.semiclassical()?;
    let eps = ctx.cfg.epsilons()?.to_vec();
    let params = ctx.params;
    let win = ctx.time("window", || window(&sc, &params))?;
    let cfg = SweepConfig {
        grid: sc.grid.clone(),
        potential: sc.potential.clone(),
        penalty: sc.penalty,
        params: ctx.params,
        epsilons: eps,
        init: sc.init,
        tol: ctx.cfg.tolerances.newton,
    };
    let rep = ctx.time("sweep", || epsilon_sweep(&cfg))?;
    let slack = ctx.cfg.tolerances.window_slack;
    for (run, c) in rep.runs.iter().zip(&rep.reports) {
        t.energies.push(energy_row(ctx, &sc, run, c));
        t.concentration.push(concentration_row(&ctx.hash, c, run, win, slack));
        if let (true, Some(f)) = (with_decay, c.decay) {
            t.decay.push(DecayRow {
                config_hash: ctx.hash.clone(),
                epsilon: c.epsilon,
                model: model_name(f.model),
                rate: f.rate,
                intercept: f.intercept,
                r2: f.r2,
                samples: f.samples,
            });
        }
    }
    Ok(rep.error.map(Failure::from))
}

fn pohozaev(ctx: &mut Ctx, t: &mut Tables) -> Result<Option<Failure>, Failure> {
    let sc = ctx.cfg.semiclassical()?;
    let eps = ctx.cfg.epsilons()?.to_vec();
    let params = ctx.params;
    let win = ctx.time("window", || window(&sc, &params))?;
    let pc = ctx.cfg.pohozaev.clone();
    let delta = pc
        .as_ref()
        .and_then(|p| p.delta)
        .unwrap_or(sc.potential.lambda_radius / 4.0);
    let axis = pc.map(|p| p.axis).unwrap_or(0);
    let tol = ctx.cfg.tolerances.newton;
    let slack = ctx.cfg.tolerances.window_slack;
    for e in eps {
        let ps = sc.penalty.with_epsilon(e);
        let run = match ctx.time("solve", || {
            solve_penalized(&sc.grid, &sc.potential, &ps, &params, sc.init, tol)
        }) {
            Ok(r) => r,
            Err(err) => return Ok(Some(err.into())),
        };
        let c = concentration_report(&run, &sc.potential)?;
        let ph = ctx.time("pohozaev", || {
            pohozaev_residual(&run.pair, &sc.potential, &params, e, &c.x_omega, delta, axis)
        })?;
        t.energies.push(energy_row(ctx, &sc, &run, &c));
        t.concentration.push(concentration_row(&ctx.hash, &c, &run, win, slack));
        t.pohozaev.push(PohozaevRow {
            config_hash: ctx.hash.clone(),
            epsilon: e,
            axis,
            delta,
            flux: ph.surface_terms[0],
            gradient_square: ph.surface_terms[1],
            potential: ph.surface_terms[2],
            nonlinear: ph.surface_terms[3],
            surface: ph.surface,
            surface_magnitude: ph.surface_magnitude,
            volume: ph.volume,
            volume_1: ph.volume_parts[0],
            volume_2: ph.volume_parts[1],
            residual: ph.residual,
        });
    }
    Ok(None)
}
