//! Damped Newton iteration for two-component systems of the form
//! `-kappa * Lap(u_c) + local_c(x, u1, u2) = 0` with homogeneous Dirichlet
//! data on the outer grid nodes.

use crate::grid::Grid;
use crate::linalg::{gmres, solve_block_tridiagonal, M2};

/// Pointwise part of the residual and its 2x2 derivative.
pub(crate) trait LocalTerms: Sync {
    fn eval(&self, i: usize, u: [f64; 2]) -> ([f64; 2], M2);
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct NewtonOutcome {
    pub u1: Vec<f64>,
    pub u2: Vec<f64>,
    pub residual: f64,
    pub converged: bool,
}

pub(crate) fn residual(
    grid: &Grid,
    kappa: f64,
    local: &dyn LocalTerms,
    u1: &[f64],
    u2: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let n = grid.len();
    let mut l1 = vec![0.0; n];
    let mut l2 = vec![0.0; n];
    grid.apply_laplacian(u1, &mut l1);
    grid.apply_laplacian(u2, &mut l2);
    for i in 0..n {
        if grid.is_dirichlet(i) {
            l1[i] = u1[i];
            l2[i] = u2[i];
            continue;
        }
        let (f, _) = local.eval(i, [u1[i], u2[i]]);
        l1[i] = -kappa * l1[i] + f[0];
        l2[i] = -kappa * l2[i] + f[1];
    }
    (l1, l2)
}

pub(crate) fn sup(a: &[f64], b: &[f64]) -> f64 {
    a.iter().chain(b).fold(0.0, |m, v| m.max(v.abs()))
}

fn merit(a: &[f64], b: &[f64]) -> f64 {
    a.iter().chain(b).map(|v| v * v).sum::<f64>().sqrt()
}

/// Solves J d = -F for the Newton direction.
fn direction(
    grid: &Grid,
    kappa: f64,
    local: &dyn LocalTerms,
    u1: &[f64],
    u2: &[f64],
    f1: &[f64],
    f2: &[f64],
) -> Option<(Vec<f64>, Vec<f64>)> {
    let n = grid.len();
    let mut blocks: Vec<M2> = Vec::with_capacity(n);
    for i in 0..n {
        if grid.is_dirichlet(i) {
            blocks.push([[1.0, 0.0], [0.0, 1.0]]);
        } else {
            let (_, mut jac) = local.eval(i, [u1[i], u2[i]]);
            let d = -kappa * grid.laplacian_diagonal(i);
            jac[0][0] += d;
            jac[1][1] += d;
            blocks.push(jac);
        }
    }
    if grid.is_one_dimensional_stencil() {
        let mut lower = vec![0.0; n];
        let mut upper = vec![0.0; n];
        for i in 0..n {
            if grid.is_dirichlet(i) {
                continue;
            }
            let (lo, _, up) = grid.tridiagonal_row(i);
            lower[i] = -kappa * lo;
            upper[i] = -kappa * up;
        }
        let mut rhs: Vec<[f64; 2]> = (0..n).map(|i| [-f1[i], -f2[i]]).collect();
        solve_block_tridiagonal(&lower, &blocks, &upper, &mut rhs)?;
        let d1 = rhs.iter().map(|v| v[0]).collect();
        let d2 = rhs.iter().map(|v| v[1]).collect();
        return Some((d1, d2));
    }
    let inv: Vec<M2> = blocks
        .iter()
        .map(|m| {
            let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
            if det.abs() > 1e-300 {
                [[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]]
            } else {
                [[1.0, 0.0], [0.0, 1.0]]
            }
        })
        .collect();
    let apply = |v: &[f64], out: &mut [f64]| {
        let (a, b) = v.split_at(n);
        let mut la = vec![0.0; n];
        let mut lb = vec![0.0; n];
        grid.apply_laplacian(a, &mut la);
        grid.apply_laplacian(b, &mut lb);
        let (oa, ob) = out.split_at_mut(n);
        for i in 0..n {
            if grid.is_dirichlet(i) {
                oa[i] = a[i];
                ob[i] = b[i];
                continue;
            }
            let m = &blocks[i];
            let d = -kappa * grid.laplacian_diagonal(i);
            // blocks already include the Laplacian diagonal
            oa[i] = -kappa * la[i] - d * a[i] + m[0][0] * a[i] + m[0][1] * b[i];
            ob[i] = -kappa * lb[i] - d * b[i] + m[1][0] * a[i] + m[1][1] * b[i];
        }
    };
    let precond = |v: &[f64], out: &mut [f64]| {
        for i in 0..n {
            let m = &inv[i];
            out[i] = m[0][0] * v[i] + m[0][1] * v[n + i];
            out[n + i] = m[1][0] * v[i] + m[1][1] * v[n + i];
        }
    };
    let rhs: Vec<f64> = f1.iter().chain(f2).map(|v| -v).collect();
    let mut x = vec![0.0; 2 * n];
    let rel = gmres(&apply, &precond, &rhs, &mut x, 80, 4000, 1e-10);
    if !rel.is_finite() || rel > 1e-4 {
        return None;
    }
    let d2 = x.split_off(n);
    Some((x, d2))
}

pub(crate) fn newton(
    grid: &Grid,
    kappa: f64,
    local: &dyn LocalTerms,
    mut u1: Vec<f64>,
    mut u2: Vec<f64>,
    opts: NewtonOptions,
) -> NewtonOutcome {
    let (mut f1, mut f2) = residual(grid, kappa, local, &u1, &u2);
    let mut res = sup(&f1, &f2);
    let mut m = merit(&f1, &f2);
    for _ in 0..opts.max_iter {
        if res <= opts.tol {
            return NewtonOutcome {
                u1,
                u2,
                residual: res,
                converged: true,
            };
        }
        let Some((d1, d2)) = direction(grid, kappa, local, &u1, &u2, &f1, &f2) else {
            break;
        };
        let mut lambda = 1.0;
        let mut accepted = false;
        while lambda >= 1.0 / 4096.0 {
            let t1: Vec<f64> = u1.iter().zip(&d1).map(|(a, d)| a + lambda * d).collect();
            let t2: Vec<f64> = u2.iter().zip(&d2).map(|(a, d)| a + lambda * d).collect();
            let (g1, g2) = residual(grid, kappa, local, &t1, &t2);
            let mt = merit(&g1, &g2);
            if mt.is_finite() && mt <= (1.0 - 1e-4 * lambda) * m {
                u1 = t1;
                u2 = t2;
                f1 = g1;
                f2 = g2;
                m = mt;
                res = sup(&f1, &f2);
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    NewtonOutcome {
        converged: res <= opts.tol,
        u1,
        u2,
        residual: res,
    }
}
