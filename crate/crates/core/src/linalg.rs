//! Small dense and banded solvers used by the Newton iterations.

/// Solves a tridiagonal system in place (Thomas algorithm).
/// `lower[0]` and `upper[n-1]` are ignored. Returns `None` on a zero pivot.
pub fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &mut [f64]) -> Option<()> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut b = diag[0];
    if b == 0.0 || !b.is_finite() {
        return None;
    }
    rhs[0] /= b;
    for i in 1..n {
        c[i - 1] = upper[i - 1] / b;
        b = diag[i] - lower[i] * c[i - 1];
        if b == 0.0 || !b.is_finite() {
            return None;
        }
        rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / b;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= c[i] * rhs[i + 1];
    }
    Some(())
}

pub type M2 = [[f64; 2]; 2];

fn inv2(m: &M2) -> Option<M2> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let scale = m.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
    if !det.is_finite() || det.abs() <= 1e-300 || det.abs() <= 1e-15 * scale * scale {
        return None;
    }
    Some([[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]])
}

fn mulv(a: &M2, v: [f64; 2]) -> [f64; 2] {
    [a[0][0] * v[0] + a[0][1] * v[1], a[1][0] * v[0] + a[1][1] * v[1]]
}

/// Block-tridiagonal solve where the off-diagonal blocks are scalar
/// multiples of the identity: row i reads
/// `lower[i] x[i-1] + diag[i] x[i] + upper[i] x[i+1] = rhs[i]`.
pub fn solve_block_tridiagonal(lower: &[f64], diag: &[M2], upper: &[f64], rhs: &mut [[f64; 2]]) -> Option<()> {
    let n = diag.len();
    let mut cprime: Vec<M2> = vec![[[0.0; 2]; 2]; n];
    let mut binv = inv2(&diag[0])?;
    rhs[0] = mulv(&binv, rhs[0]);
    for i in 1..n {
        // c'_{i-1} = B_{i-1}^{-1} * upper[i-1]
        let mut cp = binv;
        for row in cp.iter_mut() {
            for v in row.iter_mut() {
                *v *= upper[i - 1];
            }
        }
        cprime[i - 1] = cp;
        let mut b = diag[i];
        for r in 0..2 {
            for c in 0..2 {
                b[r][c] -= lower[i] * cp[r][c];
            }
        }
        binv = inv2(&b)?;
        let prev = rhs[i - 1];
        let t = [rhs[i][0] - lower[i] * prev[0], rhs[i][1] - lower[i] * prev[1]];
        rhs[i] = mulv(&binv, t);
    }
    for i in (0..n - 1).rev() {
        let corr = mulv(&cprime[i], rhs[i + 1]);
        rhs[i][0] -= corr[0];
        rhs[i][1] -= corr[1];
    }
    Some(())
}

/// Restarted GMRES with a left preconditioner. Returns the final relative
/// residual; the solution is written into `x`.
pub fn gmres(
    apply: &dyn Fn(&[f64], &mut [f64]),
    precond: &dyn Fn(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    restart: usize,
    max_iter: usize,
    tol: f64,
) -> f64 {
    let n = b.len();
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let mut pb = vec![0.0; n];
    precond(b, &mut pb);
    let bnorm = norm(&pb).max(1e-300);
    let mut tmp = vec![0.0; n];
    let mut r = vec![0.0; n];
    let mut iters = 0;
    loop {
        apply(x, &mut tmp);
        for i in 0..n {
            tmp[i] = b[i] - tmp[i];
        }
        precond(&tmp, &mut r);
        let beta = norm(&r);
        if beta / bnorm <= tol || iters >= max_iter {
            return beta / bnorm;
        }
        let mut v: Vec<Vec<f64>> = vec![r.iter().map(|a| a / beta).collect()];
        let mut hmat = vec![vec![0.0; restart]; restart + 1];
        let mut cs = vec![0.0; restart];
        let mut sn = vec![0.0; restart];
        let mut g = vec![0.0; restart + 1];
        g[0] = beta;
        let mut k_used = 0;
        for k in 0..restart {
            iters += 1;
            apply(&v[k], &mut tmp);
            let mut w = vec![0.0; n];
            precond(&tmp, &mut w);
            for j in 0..=k {
                let hjk: f64 = w.iter().zip(&v[j]).map(|(a, b)| a * b).sum();
                hmat[j][k] = hjk;
                for i in 0..n {
                    w[i] -= hjk * v[j][i];
                }
            }
            let wn = norm(&w);
            hmat[k + 1][k] = wn;
            for j in 0..k {
                let t = cs[j] * hmat[j][k] + sn[j] * hmat[j + 1][k];
                hmat[j + 1][k] = -sn[j] * hmat[j][k] + cs[j] * hmat[j + 1][k];
                hmat[j][k] = t;
            }
            let den = (hmat[k][k].powi(2) + hmat[k + 1][k].powi(2)).sqrt().max(1e-300);
            cs[k] = hmat[k][k] / den;
            sn[k] = hmat[k + 1][k] / den;
            hmat[k][k] = den;
            hmat[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            k_used = k + 1;
            if wn > 0.0 {
                v.push(w.iter().map(|a| a / wn).collect());
            }
            if g[k + 1].abs() / bnorm <= tol || iters >= max_iter || wn == 0.0 {
                break;
            }
        }
        let mut y = vec![0.0; k_used];
        for i in (0..k_used).rev() {
            let mut s = g[i];
            for j in i + 1..k_used {
                s -= hmat[i][j] * y[j];
            }
            y[i] = s / hmat[i][i];
        }
        for (j, yj) in y.iter().enumerate() {
            for i in 0..n {
                x[i] += yj * v[j][i];
            }
        }
    }
}

/// Least-squares line fit; returns (intercept, slope, r_squared).
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<(f64, f64, f64)> {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    Some((intercept, slope, r2))
}

/// Bisection for a sign change of `f` on [a, b].
pub fn bisect(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> Option<f64> {
    let mut fa = f(a);
    let fb = f(b);
    if fa == 0.0 {
        return Some(a);
    }
    if fb == 0.0 {
        return Some(b);
    }
    if fa.signum() == fb.signum() || !fa.is_finite() || !fb.is_finite() {
        return None;
    }
    for _ in 0..400 {
        let m = 0.5 * (a + b);
        if (b - a).abs() <= tol * (1.0 + m.abs()) {
            return Some(m);
        }
        let fm = f(m);
        if fm == 0.0 {
            return Some(m);
        }
        if fm.signum() == fa.signum() {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    Some(0.5 * (a + b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tridiagonal_solves_poisson() {
        let n = 50;
        let lower = vec![-1.0; n];
        let diag = vec![2.0; n];
        let upper = vec![-1.0; n];
        let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.1).sin()).collect();
        let mut rhs: Vec<f64> = (0..n)
            .map(|i| {
                let l = if i > 0 { x[i - 1] } else { 0.0 };
                let r = if i + 1 < n { x[i + 1] } else { 0.0 };
                2.0 * x[i] - l - r
            })
            .collect();
        solve_tridiagonal(&lower, &diag, &upper, &mut rhs).unwrap();
        for i in 0..n {
            assert!((rhs[i] - x[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn block_tridiagonal_round_trip() {
        let n = 30;
        let lower = vec![-1.0; n];
        let upper = vec![-0.5; n];
        let diag: Vec<M2> = (0..n).map(|i| [[4.0, 0.3], [0.2 + 0.01 * i as f64, 3.0]]).collect();
        let x: Vec<[f64; 2]> = (0..n).map(|i| [i as f64, 1.0 - i as f64 * 0.5]).collect();
        let mut rhs: Vec<[f64; 2]> = (0..n)
            .map(|i| {
                let mut r = mulv(&diag[i], x[i]);
                if i > 0 {
                    r[0] += lower[i] * x[i - 1][0];
                    r[1] += lower[i] * x[i - 1][1];
                }
                if i + 1 < n {
                    r[0] += upper[i] * x[i + 1][0];
                    r[1] += upper[i] * x[i + 1][1];
                }
                r
            })
            .collect();
        solve_block_tridiagonal(&lower, &diag, &upper, &mut rhs).unwrap();
        for i in 0..n {
            assert!((rhs[i][0] - x[i][0]).abs() < 1e-9);
            assert!((rhs[i][1] - x[i][1]).abs() < 1e-9);
        }
    }

    #[test]
    fn gmres_matches_direct_solution() {
        let n = 40;
        let apply = |v: &[f64], out: &mut [f64]| {
            for i in 0..n {
                let l = if i > 0 { v[i - 1] } else { 0.0 };
                let r = if i + 1 < n { v[i + 1] } else { 0.0 };
                out[i] = 3.0 * v[i] - l - 0.5 * r;
            }
        };
        let pre = |v: &[f64], out: &mut [f64]| out.copy_from_slice(v);
        let b: Vec<f64> = (0..n).map(|i| 1.0 + i as f64).collect();
        let mut x = vec![0.0; n];
        let res = gmres(&apply, &pre, &b, &mut x, 20, 500, 1e-12);
        assert!(res < 1e-10);
        let mut check = vec![0.0; n];
        apply(&x, &mut check);
        for i in 0..n {
            assert!((check[i] - b[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn fit_recovers_line() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 - 3.0 * x).collect();
        let (a, b, r2) = linear_fit(&xs, &ys).unwrap();
        assert!((a - 2.0).abs() < 1e-12 && (b + 3.0).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bisection_finds_root() {
        let r = bisect(|x| x * x - 2.0, 0.0, 2.0, 1e-14).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-12);
        assert!(bisect(|x| x * x + 1.0, 0.0, 2.0, 1e-10).is_none());
    }
}
