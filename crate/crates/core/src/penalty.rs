//! Potentials, penalized potentials and the penalized functional.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{cell_sum, FieldPair, Grid, Point, ProblemParams, ScalarField};
use crate::linalg::M2;
use crate::newton::LocalTerms;

type PotentialFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// A named position-to-value evaluator. Positions are padded to three
/// coordinates; unused axes are zero.
#[derive(Clone)]
pub struct Potential {
    name: String,
    f: Arc<PotentialFn>,
}

impl fmt::Debug for Potential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Potential({})", self.name)
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// C-infinity step: 1 for t <= 0, 0 for t >= 1.
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

impl Potential {
    pub fn new(name: impl Into<String>, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            name: name.into(),
            f: Arc::new(f),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }

    /// Central-difference partial derivative along `axis`.
    pub fn partial(&self, x: &[f64], axis: usize) -> f64 {
        let step = 1e-5 * (1.0 + norm(x));
        let mut a: Point = [0.0; 3];
        a[..x.len().min(3)].copy_from_slice(&x[..x.len().min(3)]);
        let mut b = a;
        a[axis] += step;
        b[axis] -= step;
        (self.eval(&a) - self.eval(&b)) / (2.0 * step)
    }

    pub fn constant(value: f64) -> Self {
        Self::new("constant", move |_| value)
    }

    /// Minimum of a deep and a shallow quadratic well. The deep well has
    /// bottom `depth` at `z0` and is stiffer on the positive side of the
    /// first axis when `skew > 0`; the shallow one has bottom `shallow` at `z1`.
    pub fn double_well(depth: f64, shallow: f64, stiffness: f64, skew: f64, z0: Point, z1: Point) -> Self {
        Self::new("double-well", move |x| {
            let r0 = dist(x, &z0[..x.len().min(3)]);
            let dx = x[0] - z0[0];
            let deep = depth + stiffness * (r0 * r0 + skew * r0 * dx);
            let r1 = dist(x, &z1[..x.len().min(3)]);
            let far = shallow + stiffness * r1 * r1;
            deep.min(far)
        })
    }

    /// (m + a|x|^2) / (1 + b|x|^(2+2 sigma)): bottom m at the origin and a
    /// tail of order |x|^(-2 sigma).
    pub fn inverse_power(m: f64, a: f64, b: f64, sigma: f64) -> Self {
        Self::new("inverse-power", move |x| {
            let r = norm(x);
            (m + a * r * r) / (1.0 + b * r.powf(2.0 + 2.0 * sigma))
        })
    }

    /// (m + a|x|^2) times a smooth cutoff equal to 1 on |x| <= radius and 0
    /// beyond 2 radius.
    pub fn compact_support(m: f64, a: f64, radius: f64) -> Self {
        Self::new("compact-support", move |x| {
            let r = norm(x);
            (m + a * r * r) * smooth_step((r - radius) / radius)
        })
    }
}

/// Parameter listing of the named potential presets.
#[derive(Debug, Clone, Copy)]
pub struct PresetInfo {
    pub name: &'static str,
    pub summary: &'static str,
    pub params: &'static [(&'static str, &'static str)],
}

pub const PRESETS: &[PresetInfo] = &[
    PresetInfo {
        name: "constant",
        summary: "V(x) = value",
        params: &[("value", "positive level")],
    },
    PresetInfo {
        name: "double-well",
        summary: "min(depth + k(|x-z0|^2 + skew |x-z0| (x-z0)_1), shallow + k|x-z1|^2)",
        params: &[
            ("depth", "bottom of the deep well"),
            ("shallow", "bottom of the shallow well"),
            ("stiffness", "curvature k"),
            ("skew", "asymmetry of the deep well, |skew| < 1"),
            ("z0", "deep well centre"),
            ("z1", "shallow well centre"),
        ],
    },
    PresetInfo {
        name: "inverse-power",
        summary: "(m + a|x|^2)/(1 + b|x|^(2+2 sigma)), tail ~ |x|^(-2 sigma)",
        params: &[
            ("m", "value at the origin"),
            ("a", "quadratic coefficient"),
            ("b", "tail coefficient"),
            ("sigma", "tail exponent in [0, 1]"),
        ],
    },
    PresetInfo {
        name: "compact-support",
        summary: "(m + a|x|^2) times a smooth cutoff supported in |x| < 2 radius",
        params: &[
            ("m", "value at the origin"),
            ("a", "quadratic coefficient"),
            ("radius", "plateau radius"),
        ],
    },
];

/// Behaviour of min(V1, V2) at infinity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DecayClass {
    /// liminf V_min |x|^(2 sigma) > 0 with sigma in [0, 1].
    InversePower { sigma: f64 },
    /// Faster decay or compact support; needs the Hardy-based penalty.
    FastOrCompact,
}

/// Two potentials with concentric balls Lambda inside U.
#[derive(Debug, Clone)]
pub struct PotentialSpec {
    pub v1: Potential,
    pub v2: Potential,
    pub dim: usize,
    pub center: Point,
    pub lambda_radius: f64,
    pub u_radius: f64,
    pub m1: f64,
    pub m2: f64,
    pub omega: f64,
    pub decay_class: DecayClass,
    pub m_set: Vec<Point>,
    /// Whether inf over Lambda of V1 + V2 lies strictly below its inf over
    /// U minus Lambda on the sample lattice.
    pub strict_well: bool,
}

fn lattice(dim: usize, center: Point, radius: f64, per_axis: usize) -> Vec<Point> {
    let n = per_axis.max(3);
    let total = n.pow(dim as u32);
    let mut out = Vec::with_capacity(total);
    for k in 0..total {
        let mut x = center;
        let mut rest = k;
        for item in x.iter_mut().take(dim) {
            let j = rest % n;
            rest /= n;
            *item += radius * (2.0 * j as f64 / (n - 1) as f64 - 1.0);
        }
        out.push(x);
    }
    out
}

impl PotentialSpec {
    pub fn new(
        v1: Potential,
        v2: Potential,
        dim: usize,
        center: Point,
        lambda_radius: f64,
        u_radius: f64,
        decay_class: DecayClass,
    ) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::validation("potentials are sampled in dimensions 1 to 3"));
        }
        if !(lambda_radius > 0.0 && u_radius > lambda_radius) {
            return Err(Error::validation("need 0 < lambda_radius < u_radius"));
        }
        if let DecayClass::InversePower { sigma } = decay_class {
            if !(0.0..=1.0).contains(&sigma) {
                return Err(Error::validation(format!("sigma must lie in [0, 1], got {sigma}")));
            }
        }
        let per_axis = match dim {
            1 => 4001,
            2 => 161,
            _ => 41,
        };
        let pts = lattice(dim, center, u_radius, per_axis);
        let (mut inner, mut ring): (Vec<Point>, Vec<Point>) = pts
            .into_iter()
            .filter(|x| dist(x, &center) <= u_radius)
            .partition(|x| dist(x, &center) <= lambda_radius);
        inner.push(center);
        if ring.is_empty() {
            ring.push(center);
        }
        let mut m1 = f64::INFINITY;
        let mut m2 = f64::INFINITY;
        let mut sum_in = f64::INFINITY;
        for x in &inner {
            let (a, b) = (v1.eval(x), v2.eval(x));
            if !(a.is_finite() && b.is_finite()) || a < 0.0 || b < 0.0 {
                return Err(Error::validation("potentials must be finite and nonnegative"));
            }
            m1 = m1.min(a);
            m2 = m2.min(b);
            sum_in = sum_in.min(a + b);
        }
        let mut ring1 = f64::INFINITY;
        let mut ring2 = f64::INFINITY;
        let mut sum_ring = f64::INFINITY;
        for x in &ring {
            let (a, b) = (v1.eval(x), v2.eval(x));
            if !(a.is_finite() && b.is_finite()) || a < 0.0 || b < 0.0 {
                return Err(Error::validation("potentials must be finite and nonnegative"));
            }
            ring1 = ring1.min(a);
            ring2 = ring2.min(b);
            sum_ring = sum_ring.min(a + b);
        }
        if !(m1 > 0.0) {
            return Err(Error::validation("inf of V1 over Lambda must be positive"));
        }
        if m1 > m2 {
            return Err(Error::validation(format!(
                "need m1 <= m2, got m1 = {m1}, m2 = {m2}; swap the components"
            )));
        }
        if m1 > ring1 || m2 > ring2 {
            return Err(Error::validation("inf over Lambda exceeds inf over U minus Lambda"));
        }
        let tol1 = 1e-9 * m1.max(1.0);
        let tol2 = 1e-9 * m2.max(1.0);
        let m_set = inner
            .iter()
            .filter(|x| v1.eval(x.as_slice()) <= m1 + tol1 && v2.eval(x.as_slice()) <= m2 + tol2)
            .copied()
            .collect();
        Ok(Self {
            v1,
            v2,
            dim,
            center,
            lambda_radius,
            u_radius,
            m1,
            m2,
            omega: m1 / m2,
            decay_class,
            m_set,
            strict_well: sum_in < sum_ring,
        })
    }

    /// Replaces the sampled common-minimum set by known points.
    pub fn with_m_set(mut self, points: Vec<Point>) -> Self {
        self.m_set = points;
        self
    }

    pub fn in_lambda(&self, x: &[f64]) -> bool {
        dist(x, &self.center[..x.len().min(3)]) < self.lambda_radius
    }

    pub fn in_u(&self, x: &[f64]) -> bool {
        dist(x, &self.center[..x.len().min(3)]) < self.u_radius
    }

    pub fn v_min(&self, x: &[f64]) -> f64 {
        self.v1.eval(x).min(self.v2.eval(x))
    }

    /// Distance to the sampled common-minimum set (infinite when empty).
    pub fn dist_to_m(&self, x: &[f64]) -> f64 {
        self.m_set.iter().map(|m| dist(x, m)).fold(f64::INFINITY, f64::min)
    }

    /// Distance from x to the boundary of Lambda (positive inside).
    pub fn dist_to_lambda_boundary(&self, x: &[f64]) -> f64 {
        self.lambda_radius - dist(x, &self.center[..x.len().min(3)])
    }

    pub fn covered_by(&self, grid: &Grid) -> bool {
        match grid {
            Grid::Radial(g) => norm(&self.center) == 0.0 && g.r_max() >= self.u_radius,
            Grid::Box(g) => (0..g.dim()).all(|d| self.center[d].abs() + self.u_radius <= g.half_width()),
        }
    }
}

/// Which construction of P_eps is used off Lambda.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PenaltyCase {
    /// eps^delta |x|^(-(2+kappa) sigma).
    Slow { sigma: f64 },
    /// eps^(5/2) |x|^(-(2 + 2 varrho)); needs N >= 3 and 2p - 2 > 2/(N-2).
    Fast,
}

/// Parameters of the barrier supersolution. `None` entries take the
/// default rules of the barrier construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierParams {
    pub exponent: f64,
    pub nu: Option<f64>,
    pub r: Option<f64>,
    pub core: f64,
    pub c_bar: Option<f64>,
    pub mu: Option<f64>,
    pub linear_loss: f64,
}

impl Default for BarrierParams {
    fn default() -> Self {
        Self {
            exponent: 3.0,
            nu: None,
            r: None,
            core: 4.0,
            c_bar: None,
            mu: None,
            linear_loss: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltySpec {
    pub epsilon: f64,
    pub case: PenaltyCase,
    pub kappa: f64,
    pub delta_exp: f64,
    pub barrier: BarrierParams,
}

impl PenaltySpec {
    /// Slow-decay penalty with delta at the middle of (0, 4p - 4).
    pub fn slow(epsilon: f64, sigma: f64, p: f64) -> Self {
        Self {
            epsilon,
            case: PenaltyCase::Slow { sigma },
            kappa: 0.1,
            delta_exp: 2.0 * p - 2.0,
            barrier: BarrierParams::default(),
        }
    }

    pub fn fast(epsilon: f64) -> Self {
        Self {
            epsilon,
            case: PenaltyCase::Fast,
            kappa: 0.1,
            delta_exp: 1.0,
            barrier: BarrierParams::default(),
        }
    }

    /// Picks the case matching the decay class of the potentials.
    pub fn for_potential(epsilon: f64, pot: &PotentialSpec, p: f64) -> Self {
        match pot.decay_class {
            DecayClass::InversePower { sigma } => Self::slow(epsilon, sigma, p),
            DecayClass::FastOrCompact => Self::fast(epsilon),
        }
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Self {
        Self { epsilon, ..*self }
    }
}

/// Exponent ((2p-2)(N-2) - 2)/4 of the fast-decay penalty.
pub fn varrho(params: &ProblemParams) -> f64 {
    ((2.0 * params.p - 2.0) * (params.n as f64 - 2.0) - 2.0) / 4.0
}

/// (N-2)^2/4.
pub fn hardy_constant(n: usize) -> f64 {
    (n as f64 - 2.0).powi(2) / 4.0
}

/// The evaluator x -> P_eps(x).
#[derive(Debug, Clone, PartialEq)]
pub struct Penalty {
    pub epsilon: f64,
    pub case: PenaltyCase,
    pub kappa: f64,
    pub delta_exp: f64,
    pub varrho: f64,
    pub p: f64,
    pub center: Point,
    pub lambda_radius: f64,
}

impl Penalty {
    pub fn in_lambda(&self, x: &[f64]) -> bool {
        dist(x, &self.center[..x.len().min(3)]) < self.lambda_radius
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        if self.in_lambda(x) {
            return 0.0;
        }
        let r = norm(x).max(1e-300);
        match self.case {
            PenaltyCase::Slow { sigma } => self.epsilon.powf(self.delta_exp) * r.powf(-(2.0 + self.kappa) * sigma),
            PenaltyCase::Fast => self.epsilon.powf(2.5) * r.powf(-(2.0 + 2.0 * self.varrho)),
        }
    }

    /// The quantity whose supremum off Lambda must vanish as eps -> 0:
    /// P |x|^((2+kappa) sigma) in the slow case, eps^-2 P |x|^2 in the fast one.
    pub fn decay_weight(&self, x: &[f64]) -> f64 {
        let r = norm(x);
        let pen = self.eval(x);
        match self.case {
            PenaltyCase::Slow { sigma } => pen * r.powf((2.0 + self.kappa) * sigma),
            PenaltyCase::Fast => pen * r * r / (self.epsilon * self.epsilon),
        }
    }

    /// Supremum of `decay_weight` over the samples lying off Lambda.
    pub fn vanishing_sup(&self, samples: &[Point]) -> f64 {
        samples
            .iter()
            .filter(|x| !self.in_lambda(x.as_slice()))
            .map(|x| self.decay_weight(x))
            .fold(0.0, f64::max)
    }

    pub fn nonlinearity(&self, x: &[f64]) -> PenalizedNonlinearity {
        PenalizedNonlinearity {
            p: self.p,
            pen: self.eval(x),
            in_lambda: self.in_lambda(x),
        }
    }
}

pub fn build_penalty(ps: &PenaltySpec, pot: &PotentialSpec, params: &ProblemParams) -> Result<Penalty> {
    if !(ps.epsilon > 0.0 && ps.epsilon.is_finite()) {
        return Err(Error::validation("epsilon must be positive"));
    }
    if !(ps.kappa > 0.0) {
        return Err(Error::validation("penalty kappa must be positive"));
    }
    let rho = varrho(params);
    match ps.case {
        PenaltyCase::Slow { sigma } => {
            if !(0.0..=1.0).contains(&sigma) {
                return Err(Error::validation(format!("sigma must lie in [0, 1], got {sigma}")));
            }
            let hi = 4.0 * params.p - 4.0;
            if !(ps.delta_exp > 0.0 && ps.delta_exp < hi) {
                return Err(Error::validation(format!(
                    "delta must lie in (0, {hi}), got {}",
                    ps.delta_exp
                )));
            }
        }
        PenaltyCase::Fast => {
            if params.n < 3 {
                return Err(Error::validation("the fast-decay penalty needs N >= 3"));
            }
            if !(2.0 * params.p - 2.0 > 2.0 / (params.n as f64 - 2.0)) {
                return Err(Error::validation("the fast-decay penalty needs 2p - 2 > 2/(N - 2)"));
            }
            if !(rho > 0.0) {
                return Err(Error::validation("varrho must be positive"));
            }
        }
    }
    let b = &ps.barrier;
    if !(b.exponent > 2.0) {
        return Err(Error::validation("barrier exponent must exceed 2"));
    }
    if !(b.core > 0.0) || !(b.linear_loss > 0.0 && b.linear_loss < 1.0) {
        return Err(Error::validation(
            "barrier core radius must be positive and the loss in (0, 1)",
        ));
    }
    Ok(Penalty {
        epsilon: ps.epsilon,
        case: ps.case,
        kappa: ps.kappa,
        delta_exp: ps.delta_exp,
        varrho: rho,
        p: params.p,
        center: pot.center,
        lambda_radius: pot.lambda_radius,
    })
}

/// The capped nonlinearities at one position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenalizedNonlinearity {
    pub p: f64,
    pub pen: f64,
    pub in_lambda: bool,
}

impl PenalizedNonlinearity {
    fn switch_g(&self) -> f64 {
        self.pen.powf(1.0 / (2.0 * self.p - 2.0))
    }

    fn cap_tilde(&self) -> f64 {
        (self.pen / self.p).sqrt()
    }

    fn switch_tilde(&self) -> f64 {
        self.cap_tilde().powf(1.0 / (self.p - 1.0))
    }

    pub fn g(&self, s: f64) -> f64 {
        let s = s.max(0.0);
        let pure = s.powf(2.0 * self.p - 1.0);
        if self.in_lambda {
            pure
        } else {
            pure.min(self.pen * s)
        }
    }

    pub fn g_prime(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        if self.in_lambda || s <= self.switch_g() {
            (2.0 * self.p - 1.0) * s.powf(2.0 * self.p - 2.0)
        } else {
            self.pen
        }
    }

    pub fn big_g(&self, s: f64) -> f64 {
        let s = s.max(0.0);
        let q = 2.0 * self.p;
        if self.in_lambda {
            return s.powf(q) / q;
        }
        let t = self.switch_g();
        if s <= t {
            s.powf(q) / q
        } else {
            t.powf(q) / q + 0.5 * self.pen * (s * s - t * t)
        }
    }

    pub fn g_tilde(&self, s: f64) -> f64 {
        let s = s.max(0.0);
        let pure = s.powf(self.p - 1.0);
        if self.in_lambda {
            pure
        } else {
            pure.min(self.cap_tilde())
        }
    }

    pub fn g_tilde_prime(&self, s: f64) -> f64 {
        if s <= 1e-12 {
            return if self.p >= 2.0 && s > 0.0 {
                (self.p - 1.0) * s.powf(self.p - 2.0)
            } else {
                0.0
            };
        }
        if self.in_lambda || s <= self.switch_tilde() {
            (self.p - 1.0) * s.powf(self.p - 2.0)
        } else {
            0.0
        }
    }

    pub fn big_g_tilde(&self, s: f64) -> f64 {
        let s = s.max(0.0);
        if self.in_lambda {
            return s.powf(self.p) / self.p;
        }
        let t = self.switch_tilde();
        if s <= t {
            s.powf(self.p) / self.p
        } else {
            t.powf(self.p) / self.p + self.cap_tilde() * (s - t)
        }
    }
}

pub fn g_eps(s: f64, p: f64, pen: f64, in_lambda: bool) -> f64 {
    PenalizedNonlinearity { p, pen, in_lambda }.g(s)
}

pub fn g_tilde(s: f64, p: f64, pen: f64, in_lambda: bool) -> f64 {
    PenalizedNonlinearity { p, pen, in_lambda }.g_tilde(s)
}

pub fn big_g_eps(s: f64, p: f64, pen: f64, in_lambda: bool) -> f64 {
    PenalizedNonlinearity { p, pen, in_lambda }.big_g(s)
}

pub fn big_g_tilde(s: f64, p: f64, pen: f64, in_lambda: bool) -> f64 {
    PenalizedNonlinearity { p, pen, in_lambda }.big_g_tilde(s)
}

/// Per-node data of the penalized system, with kappa = eps^2 in front of
/// the Laplacian.
pub(crate) struct PenalizedSystem {
    pub v1: Vec<f64>,
    pub v2: Vec<f64>,
    pub nl: Vec<PenalizedNonlinearity>,
    pub beta: f64,
    pub p: f64,
}

impl PenalizedSystem {
    pub fn new(grid: &Grid, pot: &PotentialSpec, pen: &Penalty, params: &ProblemParams) -> Self {
        let n = grid.len();
        let mut v1 = Vec::with_capacity(n);
        let mut v2 = Vec::with_capacity(n);
        let mut nl = Vec::with_capacity(n);
        for i in 0..n {
            let x = grid.point(i);
            v1.push(pot.v1.eval(&x));
            v2.push(pot.v2.eval(&x));
            nl.push(pen.nonlinearity(&x));
        }
        Self {
            v1,
            v2,
            nl,
            beta: params.beta,
            p: params.p,
        }
    }

    pub fn energy_density(&self, i: usize, u1: f64, u2: f64) -> f64 {
        let g = &self.nl[i];
        0.5 * (self.v1[i] * u1 * u1 + self.v2[i] * u2 * u2)
            - g.big_g(u1)
            - g.big_g(u2)
            - self.p * self.beta * g.big_g_tilde(u1) * g.big_g_tilde(u2)
    }
}

impl LocalTerms for PenalizedSystem {
    fn eval(&self, i: usize, u: [f64; 2]) -> ([f64; 2], M2) {
        let g = &self.nl[i];
        let pb = self.p * self.beta;
        let (a, b) = (u[0], u[1]);
        let (ta, tb) = (g.g_tilde(a), g.g_tilde(b));
        let (pa, pb_) = (g.big_g_tilde(a), g.big_g_tilde(b));
        let f = [
            self.v1[i] * a - g.g(a) - pb * ta * pb_,
            self.v2[i] * b - g.g(b) - pb * tb * pa,
        ];
        let off = -pb * ta * tb;
        let jac = [
            [self.v1[i] - g.g_prime(a) - pb * g.g_tilde_prime(a) * pb_, off],
            [off, self.v2[i] - g.g_prime(b) - pb * g.g_tilde_prime(b) * pa],
        ];
        (f, jac)
    }
}

fn check_cover(w: &FieldPair, pot: &PotentialSpec) -> Result<()> {
    if !pot.covered_by(w.grid()) {
        return Err(Error::validation("grid does not cover the ball U"));
    }
    Ok(())
}

/// J_eps(w) with cell-volume quadrature.
pub fn penalized_energy(w: &FieldPair, pot: &PotentialSpec, pen: &Penalty, params: &ProblemParams) -> Result<f64> {
    check_cover(w, pot)?;
    let grid = w.grid();
    let sys = PenalizedSystem::new(grid, pot, pen, params);
    let (a, b) = (w.u1.values(), w.u2.values());
    let eps2 = pen.epsilon * pen.epsilon;
    let grad = 0.5 * eps2 * (grid.gradient_energy(a) + grid.gradient_energy(b));
    Ok(grad + cell_sum(grid, |i| sys.energy_density(i, a[i], b[i])))
}

/// Pointwise residuals of the penalized system at every node.
pub fn penalized_residual(
    w: &FieldPair,
    pot: &PotentialSpec,
    pen: &Penalty,
    params: &ProblemParams,
) -> Result<FieldPair> {
    check_cover(w, pot)?;
    let grid = w.grid();
    let sys = PenalizedSystem::new(grid, pot, pen, params);
    let (a, b) = (w.u1.values(), w.u2.values());
    let n = grid.len();
    let mut l1 = vec![0.0; n];
    let mut l2 = vec![0.0; n];
    grid.apply_laplacian(a, &mut l1);
    grid.apply_laplacian(b, &mut l2);
    let eps2 = pen.epsilon * pen.epsilon;
    for i in 0..n {
        let (f, _) = sys.eval(i, [a[i], b[i]]);
        l1[i] = -eps2 * l1[i] + f[0];
        l2[i] = -eps2 * l2[i] + f[1];
    }
    FieldPair::new(ScalarField::new(grid.clone(), l1)?, ScalarField::new(grid.clone(), l2)?)
}

/// (int |grad u|^2 - theta int u^2/|x|^2) / int u^2 for u vanishing near
/// the origin.
pub fn hardy_quotient(u: &ScalarField, theta: f64) -> Result<f64> {
    let grid = u.grid();
    if grid.dim() < 3 {
        return Err(Error::validation("the Hardy quotient needs N >= 3"));
    }
    let v = u.values();
    let sup = u.sup_norm();
    if sup == 0.0 {
        return Err(Error::validation("the Hardy quotient of the zero field is undefined"));
    }
    let ball = 2.0 * grid.h();
    for (i, val) in v.iter().enumerate() {
        if norm(&grid.point(i)) < ball && val.abs() > 1e-14 * sup {
            return Err(Error::validation("field must vanish near the origin"));
        }
    }
    let mass = cell_sum(grid, |i| v[i] * v[i]);
    let weighted = cell_sum(grid, |i| {
        let r = norm(&grid.point(i));
        if v[i] == 0.0 {
            0.0
        } else {
            v[i] * v[i] / (r * r)
        }
    });
    Ok((grid.gradient_energy(v) - theta * weighted) / mass)
}

/// int P phi^2 / (eps^2 int |grad phi|^2 + int V_min phi^2).
pub fn domination_check(phi: &ScalarField, pot: &PotentialSpec, pen: &Penalty) -> Result<f64> {
    let grid = phi.grid();
    let v = phi.values();
    let pts: Vec<Point> = (0..grid.len()).map(|i| grid.point(i)).collect();
    let num = cell_sum(grid, |i| pen.eval(&pts[i]) * v[i] * v[i]);
    let den =
        pen.epsilon * pen.epsilon * grid.gradient_energy(v) + cell_sum(grid, |i| pot.v_min(&pts[i]) * v[i] * v[i]);
    if !(den > 0.0) {
        return Err(Error::validation("domination ratio has a zero denominator"));
    }
    Ok(num / den)
}

/// Smooth compactly supported bumps with random centres and widths. Each
/// field is a sum of one to three bumps placed at distance at least
/// `inner` from the origin and at most `outer`.
pub fn bump_suite(grid: &Arc<Grid>, count: usize, seed: u64, inner: f64, outer: f64) -> Vec<ScalarField> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = grid.dim();
    let radial = matches!(grid.as_ref(), Grid::Radial(_));
    let h = grid.h();
    (0..count)
        .map(|_| {
            let k = rng.gen_range(1..=3);
            let mut bumps = Vec::with_capacity(k);
            for _ in 0..k {
                let width = rng.gen_range((4.0 * h).max(0.05 * (outer - inner))..=(0.5 * (outer - inner)).max(8.0 * h));
                let lo = inner + width;
                let hi = (outer - width).max(lo);
                let r = rng.gen_range(lo..=hi);
                let mut c: Point = [0.0; 3];
                if radial {
                    c[0] = r;
                } else {
                    let mut dir = [0.0; 3];
                    for d in dir.iter_mut().take(dim) {
                        *d = rng.gen_range(-1.0..1.0);
                    }
                    let n = norm(&dir[..dim]).max(1e-12);
                    for d in 0..dim {
                        c[d] = r * dir[d] / n;
                    }
                }
                let amp = rng.gen_range(0.2..2.0);
                bumps.push((c, width, amp));
            }
            ScalarField::from_fn(grid.clone(), |x| {
                bumps
                    .iter()
                    .map(|(c, w, a)| {
                        let d = if radial {
                            (norm(x) - c[0]).abs()
                        } else {
                            dist(x, &c[..x.len()])
                        };
                        let t = d / w;
                        if t < 1.0 {
                            a * (-1.0 / (1.0 - t * t)).exp() * std::f64::consts::E
                        } else {
                            0.0
                        }
                    })
                    .sum()
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{BoxGrid, RadialGrid};
    use crate::limit::{energy_coupled, LimitParams};

    fn box1(l: f64, n: usize) -> Arc<Grid> {
        Arc::new(BoxGrid::new(1, l, n).unwrap().into())
    }

    fn constant_spec(alpha: f64, lambda: f64, u: f64) -> PotentialSpec {
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
    fn penalty_formulas() {
        let params = ProblemParams::new(1, 2.0, 0.0).unwrap();
        let pot = constant_spec(1.0, 1.0, 3.0);
        let mut ps = PenaltySpec::slow(0.01, 1.0, 2.0);
        ps.kappa = 0.1;
        ps.delta_exp = 1.0;
        let pen = build_penalty(&ps, &pot, &params).unwrap();
        assert_eq!(pen.eval(&[0.5, 0.0, 0.0]), 0.0);
        let v = pen.eval(&[2.0, 0.0, 0.0]);
        assert!((v - 0.01 * 2f64.powf(-2.1)).abs() < 1e-15);
        assert!((v - 2.333e-3).abs() < 1e-6);

        let p3 = ProblemParams::new(3, 2.5, 0.0).unwrap();
        assert!((varrho(&p3) - 0.25).abs() < 1e-15);
        let pot3 = PotentialSpec::new(
            Potential::compact_support(1.0, 0.0, 2.0),
            Potential::compact_support(1.0, 0.0, 2.0),
            3,
            [0.0; 3],
            1.0,
            2.0,
            DecayClass::FastOrCompact,
        )
        .unwrap();
        let pen3 = build_penalty(&PenaltySpec::fast(0.1), &pot3, &p3).unwrap();
        let x = [3.0, 0.0, 0.0];
        assert!((pen3.eval(&x) - 0.1f64.powf(2.5) * 3f64.powf(-2.5)).abs() < 1e-15);
    }

    #[test]
    fn fast_case_preconditions() {
        let pot = constant_spec(1.0, 1.0, 3.0);
        let p1 = ProblemParams::new(1, 2.0, 0.0).unwrap();
        assert!(build_penalty(&PenaltySpec::fast(0.1), &pot, &p1)
            .unwrap_err()
            .is_validation());
        let p3 = ProblemParams::new(3, 1.9, 0.0).unwrap();
        assert!(build_penalty(&PenaltySpec::fast(0.1), &pot, &p3).is_err());
    }

    #[test]
    fn nonlinearity_examples() {
        for f in [g_eps, g_tilde, big_g_eps, big_g_tilde] {
            assert_eq!(f(-1.0, 2.0, 1.0, false), 0.0);
            assert_eq!(f(0.0, 2.0, 1.0, true), 0.0);
        }
        assert!((g_eps(2.0, 2.0, 0.0, true) - 8.0).abs() < 1e-14);
        assert!((big_g_eps(2.0, 2.0, 0.0, true) - 4.0).abs() < 1e-14);
        assert!((g_eps(2.0, 2.0, 1.0, false) - 2.0).abs() < 1e-14);
        assert!((big_g_eps(2.0, 2.0, 1.0, false) - 1.75).abs() < 1e-14);
    }

    #[test]
    fn antiderivatives_match_quadrature() {
        for &(p, pen) in &[(2.0, 1.0), (2.5, 0.3), (1.5, 2.0), (3.0, 1e-3)] {
            let nl = PenalizedNonlinearity {
                p,
                pen,
                in_lambda: false,
            };
            let s_max = 3.0;
            let m = 200_000;
            let h = s_max / m as f64;
            let mut acc_g = 0.0;
            let mut acc_t = 0.0;
            for k in 0..m {
                let a = k as f64 * h;
                let mid = a + 0.5 * h;
                acc_g += h * (nl.g(a) + 4.0 * nl.g(mid) + nl.g(a + h)) / 6.0;
                acc_t += h * (nl.g_tilde(a) + 4.0 * nl.g_tilde(mid) + nl.g_tilde(a + h)) / 6.0;
            }
            assert!(
                (acc_g - nl.big_g(s_max)).abs() < 1e-6 * (1.0 + acc_g),
                "G p={p} P={pen}"
            );
            assert!(
                (acc_t - nl.big_g_tilde(s_max)).abs() < 1e-6 * (1.0 + acc_t),
                "G~ p={p} P={pen}"
            );
        }
    }

    #[test]
    fn constant_potential_energy_matches_limit_energy() {
        let grid = box1(15.0, 3001);
        let params = ProblemParams::new(1, 2.0, 0.5).unwrap();
        let pot = constant_spec(1.3, 14.0, 14.5);
        let mut ps = PenaltySpec::slow(1.0, 0.0, 2.0);
        ps.epsilon = 1.0;
        let pen = build_penalty(&ps, &pot, &params).unwrap();
        let u1 = ScalarField::from_fn(grid.clone(), |x| 1.2 / x[0].cosh());
        let u2 = ScalarField::from_fn(grid.clone(), |x| 0.7 / (1.3 * x[0]).cosh());
        let w = FieldPair::new(u1, u2).unwrap();
        let je = penalized_energy(&w, &pot, &pen, &params).unwrap();
        let lp = LimitParams::new(params, 1.3, 1.3).unwrap();
        let jl = energy_coupled(&w, &lp).unwrap().total;
        assert!((je - jl).abs() < 1e-10, "{je} vs {jl}");
        let zero = FieldPair::new(ScalarField::zeros(grid.clone()), ScalarField::zeros(grid)).unwrap();
        assert_eq!(penalized_energy(&zero, &pot, &pen, &params).unwrap(), 0.0);
    }

    #[test]
    fn residual_is_the_energy_gradient() {
        let grid = box1(4.0, 401);
        let params = ProblemParams::new(1, 2.0, 0.8).unwrap();
        let pot = PotentialSpec::new(
            Potential::double_well(0.5, 1.5, 1.0, 0.3, [0.0; 3], [3.0, 0.0, 0.0]),
            Potential::double_well(0.7, 1.5, 1.0, 0.0, [0.0; 3], [3.0, 0.0, 0.0]),
            1,
            [0.0; 3],
            1.0,
            2.0,
            DecayClass::InversePower { sigma: 0.0 },
        )
        .unwrap();
        let mut ps = PenaltySpec::slow(0.3, 0.0, 2.0);
        ps.delta_exp = 0.5;
        let pen = build_penalty(&ps, &pot, &params).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = grid.len();
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..2.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..2.0)).collect();
        let da: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let db: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let make = |t: f64| {
            let x: Vec<f64> = a.iter().zip(&da).map(|(v, d)| v + t * d).collect();
            let y: Vec<f64> = b.iter().zip(&db).map(|(v, d)| v + t * d).collect();
            FieldPair::new(
                ScalarField::new(grid.clone(), x).unwrap(),
                ScalarField::new(grid.clone(), y).unwrap(),
            )
            .unwrap()
        };
        let w = make(0.0);
        let r = penalized_residual(&w, &pot, &pen, &params).unwrap();
        let vol = grid.volumes();
        let analytic: f64 = (0..n)
            .map(|i| vol[i] * (r.u1.values()[i] * da[i] + r.u2.values()[i] * db[i]))
            .sum();
        let t = 1e-5;
        let fd = (penalized_energy(&make(t), &pot, &pen, &params).unwrap()
            - penalized_energy(&make(-t), &pot, &pen, &params).unwrap())
            / (2.0 * t);
        assert!((fd - analytic).abs() <= 1e-5 * analytic.abs(), "{fd} vs {analytic}");
    }

    #[test]
    fn hardy_quotient_cases() {
        assert!((hardy_constant(3) - 0.25).abs() < 1e-15);
        let grid: Arc<Grid> = Arc::new(RadialGrid::new(3, 10.0, 1001).unwrap().into());
        let suite = bump_suite(&grid, 50, 11, 0.1, 9.0);
        for u in &suite {
            let q0 = hardy_quotient(u, 0.0).unwrap();
            assert!(q0 > 0.0);
            assert!(hardy_quotient(u, 0.225).unwrap() >= 0.0);
        }
        assert!(hardy_quotient(&ScalarField::zeros(grid.clone()), 0.1).is_err());
        let near = ScalarField::from_fn(grid, |x| (-x[0] * x[0]).exp());
        assert!(hardy_quotient(&near, 0.1).is_err());
    }

    #[test]
    fn domination_bounds() {
        let grid = box1(6.0, 601);
        let params = ProblemParams::new(1, 2.0, 0.0).unwrap();
        let pot = constant_spec(0.8, 1.0, 2.0);
        let ps = PenaltySpec::slow(0.1, 0.0, 2.0);
        let pen = build_penalty(&ps, &pot, &params).unwrap();
        let inside = ScalarField::from_fn(grid.clone(), |x| (1.0 - 4.0 * x[0] * x[0]).max(0.0).powi(3));
        assert_eq!(domination_check(&inside, &pot, &pen).unwrap(), 0.0);
        let bound = 0.1f64.powf(ps.delta_exp) / 0.8;
        let mut prev: Option<Vec<f64>> = None;
        for eps in [0.1, 0.05, 0.02] {
            let pen = build_penalty(&ps.with_epsilon(eps), &pot, &params).unwrap();
            let vals: Vec<f64> = bump_suite(&grid, 20, 3, 0.0, 5.5)
                .iter()
                .map(|f| domination_check(f, &pot, &pen).unwrap())
                .collect();
            if eps == 0.1 {
                assert!(vals.iter().all(|&t| t <= bound * (1.0 + 1e-12)));
            }
            if let Some(p) = prev {
                assert!(vals.iter().zip(&p).all(|(a, b)| a < b));
            }
            prev = Some(vals);
        }
        assert!(domination_check(&ScalarField::zeros(grid), &pot, &pen).is_err());
    }

    #[test]
    fn potential_spec_checks() {
        let pot = PotentialSpec::new(
            Potential::double_well(1.0, 2.0, 2.0, 0.2, [0.0; 3], [4.0, 0.0, 0.0]),
            Potential::double_well(1.5, 2.5, 2.0, 0.0, [0.0; 3], [4.0, 0.0, 0.0]),
            1,
            [0.0; 3],
            1.0,
            2.0,
            DecayClass::InversePower { sigma: 0.0 },
        )
        .unwrap();
        assert!((pot.m1 - 1.0).abs() < 1e-12 && (pot.m2 - 1.5).abs() < 1e-12);
        assert!((pot.omega - 2.0 / 3.0).abs() < 1e-12);
        assert!(pot.dist_to_m(&[0.3, 0.0, 0.0]) < 0.3 + 1e-12);
        assert!(pot.m_set.iter().all(|m| m[0].abs() < 1e-3));
        let swapped = PotentialSpec::new(
            pot.v2.clone(),
            pot.v1.clone(),
            1,
            [0.0; 3],
            1.0,
            2.0,
            DecayClass::InversePower { sigma: 0.0 },
        );
        assert!(swapped.unwrap_err().is_validation());
        let flat = PotentialSpec::new(
            Potential::constant(1.0),
            Potential::constant(1.0),
            2,
            [0.0; 3],
            1.0,
            2.0,
            DecayClass::InversePower { sigma: 0.0 },
        );
        assert!(!flat.unwrap().strict_well);
        assert!(pot.strict_well);
    }
}
