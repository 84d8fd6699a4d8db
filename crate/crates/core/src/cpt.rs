//! Carr-Pelts-Tehranchi price surfaces.
//!
//! A CPT surface is built from a log-concave density `f = e^{-h}/Z` and a
//! nondecreasing time change `τ(T)`. The call price is
//!
//! ```text
//! C(K,T) = D·(F·Ω(d + τ) − K·Ω(d)),   d = sup{z : h(τ+z) − h(z) = −k}
//! ```
//!
//! with `Ω` the distribution function of `f` and `k = log(K/F)`. Puts use the
//! survival function, which is parity with the call.
//!
//! Here `h` is convex, piecewise quadratic and continuously differentiable:
//! `h'` is piecewise linear through node values, and beyond the end nodes `h`
//! continues as a parabola whose curvature is the end segment's, floored at
//! [`TAIL_CURVATURE_FLOOR`]. Segment masses are closed form through `erfcx`.

use serde::{Deserialize, Serialize};

use crate::calibration::{Basket, OptionResidual, WeightScheme};
use crate::lsq::{self, LsqOptions, Termination};
use crate::market_data::MarketSnapshot;
use crate::pricing::OptionKind;
use crate::special::erfcx;
use crate::{Error, Result};

pub const TAIL_CURVATURE_FLOOR: f64 = 1e-3;
/// Below this `κ·L²` a segment is integrated as an exponential.
const LINEAR_SEGMENT: f64 = 1e-12;
const ROOT_LIMIT: f64 = 1e6;

/// `h(x) = h0 + s0·(x − x0) + ½κ·(x − x0)²` on `[a, b]`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Piece {
    a: f64,
    b: f64,
    x0: f64,
    h0: f64,
    s0: f64,
    kappa: f64,
}

impl Piece {
    fn h(&self, x: f64) -> f64 {
        let u = x - self.x0;
        self.h0 + u * (self.s0 + 0.5 * self.kappa * u)
    }

    fn dh(&self, x: f64) -> f64 {
        self.s0 + self.kappa * (x - self.x0)
    }

    fn vertex(&self) -> f64 {
        self.x0 - self.s0 / self.kappa
    }

    /// `e^{−h(x)}·erfcx(|y(x)|)`, zero at infinity.
    fn tail_term(&self, x: f64) -> f64 {
        if x.is_infinite() {
            return 0.0;
        }
        let y = (0.5 * self.kappa).sqrt() * (x - self.vertex());
        (-self.h(x)).exp() * erfcx(y.abs())
    }

    /// `∫_a^b e^{−h}` for `self.a ≤ a ≤ b ≤ self.b`.
    fn mass(&self, a: f64, b: f64) -> f64 {
        if !(b > a) {
            return 0.0;
        }
        let len = b - a;
        if len.is_finite() && self.kappa * len * len < LINEAR_SEGMENT {
            // exponential segment with the exact mean slope
            let slope = 0.5 * (self.dh(a) + self.dh(b));
            let x = slope * len;
            let ratio = if x.abs() < 1e-300 { 1.0 } else { -(-x).exp_m1() / x };
            return (-self.h(a)).exp() * len * ratio;
        }
        let c = (std::f64::consts::PI / (2.0 * self.kappa)).sqrt();
        let m = self.vertex();
        if a >= m {
            c * (self.tail_term(a) - self.tail_term(b))
        } else if b <= m {
            c * (self.tail_term(b) - self.tail_term(a))
        } else {
            let h_min = self.h0 - self.s0 * self.s0 / (2.0 * self.kappa);
            c * (2.0 * (-h_min).exp() - self.tail_term(a) - self.tail_term(b))
        }
    }
}

/// Convex, piecewise-quadratic exponent with closed-form normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct HFunction {
    nodes: Vec<f64>,
    slopes: Vec<f64>,
    left_curvature: f64,
    right_curvature: f64,
    pieces: Vec<Piece>,
    /// `cum[i]` = mass of pieces `0..i`.
    cum: Vec<f64>,
    total: f64,
}

impl HFunction {
    /// `h'` through `(nodes[j], slopes[j])`; tails take the end-segment
    /// curvature floored at [`TAIL_CURVATURE_FLOOR`].
    pub fn new(nodes: Vec<f64>, slopes: Vec<f64>) -> Result<Self> {
        check_nodes(&nodes, &slopes)?;
        let m = nodes.len();
        let curv = |j: usize| (slopes[j + 1] - slopes[j]) / (nodes[j + 1] - nodes[j]);
        let left = curv(0).max(TAIL_CURVATURE_FLOOR);
        let right = curv(m - 2).max(TAIL_CURVATURE_FLOOR);
        Self::with_tails(nodes, slopes, left, right)
    }

    pub fn with_tails(nodes: Vec<f64>, slopes: Vec<f64>, left_curvature: f64, right_curvature: f64) -> Result<Self> {
        check_nodes(&nodes, &slopes)?;
        if !(left_curvature > 0.0 && right_curvature > 0.0) {
            return Err(Error::domain("tail curvatures must be positive"));
        }
        let m = nodes.len();
        let mut values = vec![0.0; m];
        for j in 0..m - 1 {
            values[j + 1] = values[j] + 0.5 * (slopes[j] + slopes[j + 1]) * (nodes[j + 1] - nodes[j]);
        }
        let mut pieces = Vec::with_capacity(m + 1);
        pieces.push(Piece {
            a: f64::NEG_INFINITY,
            b: nodes[0],
            x0: nodes[0],
            h0: values[0],
            s0: slopes[0],
            kappa: left_curvature,
        });
        for j in 0..m - 1 {
            pieces.push(Piece {
                a: nodes[j],
                b: nodes[j + 1],
                x0: nodes[j],
                h0: values[j],
                s0: slopes[j],
                kappa: (slopes[j + 1] - slopes[j]) / (nodes[j + 1] - nodes[j]),
            });
        }
        pieces.push(Piece {
            a: nodes[m - 1],
            b: f64::INFINITY,
            x0: nodes[m - 1],
            h0: values[m - 1],
            s0: slopes[m - 1],
            kappa: right_curvature,
        });
        // shift so that min h = 0
        let h_min = pieces
            .iter()
            .map(|p| {
                let ends = [p.a, p.b].into_iter().filter(|x| x.is_finite()).map(|x| p.h(x));
                let inner = (p.kappa > 0.0)
                    .then(|| p.vertex())
                    .filter(|v| *v > p.a && *v < p.b)
                    .map(|v| p.h(v));
                ends.chain(inner).fold(f64::INFINITY, f64::min)
            })
            .fold(f64::INFINITY, f64::min);
        for p in &mut pieces {
            p.h0 -= h_min;
        }
        let mut cum = Vec::with_capacity(pieces.len() + 1);
        cum.push(0.0);
        for p in &pieces {
            cum.push(cum.last().unwrap() + p.mass(p.a, p.b));
        }
        let total = *cum.last().unwrap();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::domain(format!("density of h does not normalize (mass {total})")));
        }
        Ok(Self {
            nodes,
            slopes,
            left_curvature,
            right_curvature,
            pieces,
            cum,
            total,
        })
    }

    /// `h(z) = z²/2` up to a constant: the standard normal member.
    pub fn standard_normal(nodes: Vec<f64>) -> Result<Self> {
        let slopes = nodes.clone();
        Self::with_tails(nodes, slopes, 1.0, 1.0)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// `h'` at the nodes.
    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    pub fn tail_curvatures(&self) -> (f64, f64) {
        (self.left_curvature, self.right_curvature)
    }

    /// Second-derivative coefficient of each finite segment.
    pub fn segment_curvatures(&self) -> Vec<f64> {
        self.pieces[1..self.pieces.len() - 1].iter().map(|p| p.kappa).collect()
    }

    pub fn normalization(&self) -> f64 {
        self.total
    }

    fn piece_index(&self, z: f64) -> usize {
        self.nodes.partition_point(|&n| n <= z)
    }

    /// `h(z)` shifted so that its minimum is 0.
    pub fn h(&self, z: f64) -> f64 {
        self.pieces[self.piece_index(z)].h(z)
    }

    pub fn h_prime(&self, z: f64) -> f64 {
        self.pieces[self.piece_index(z)].dh(z)
    }

    pub fn density(&self, z: f64) -> f64 {
        (-self.h(z)).exp() / self.total
    }

    /// `Ω(z) = ∫_{−∞}^z f`.
    pub fn omega(&self, z: f64) -> f64 {
        if z == f64::NEG_INFINITY {
            return 0.0;
        }
        if z == f64::INFINITY {
            return 1.0;
        }
        let i = self.piece_index(z);
        let p = &self.pieces[i];
        ((self.cum[i] + p.mass(p.a, z)) / self.total).min(1.0)
    }

    /// `1 − Ω(z)`, accurate in the right tail.
    pub fn survival(&self, z: f64) -> f64 {
        if z == f64::NEG_INFINITY {
            return 1.0;
        }
        if z == f64::INFINITY {
            return 0.0;
        }
        let i = self.piece_index(z);
        let p = &self.pieces[i];
        ((self.total - self.cum[i + 1] + p.mass(z, p.b)) / self.total).min(1.0)
    }

    /// `z` with `Ω(z) = p` for `p ∈ (0, 1)`.
    pub fn omega_inverse(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::domain(format!("probability must lie in (0, 1), got {p}")));
        }
        let g = |z: f64| if p < 0.5 { self.omega(z) - p } else { (1.0 - p) - self.survival(z) };
        let (mut lo, mut hi) = (-1.0, 1.0);
        while g(lo) > 0.0 {
            lo *= 2.0;
        }
        while g(hi) < 0.0 {
            hi *= 2.0;
        }
        let mut z = 0.5 * (lo + hi);
        for _ in 0..300 {
            let v = g(z);
            if v == 0.0 {
                return Ok(z);
            }
            if v < 0.0 {
                lo = z;
            } else {
                hi = z;
            }
            let newton = z - v / self.density(z);
            if (newton - z).abs() <= 1e-15 * z.abs().max(1.0) {
                return Ok(newton);
            }
            z = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
            if hi - lo <= 4.0 * f64::EPSILON * z.abs().max(1.0) {
                break;
            }
        }
        Ok(z)
    }
}

fn check_nodes(nodes: &[f64], slopes: &[f64]) -> Result<()> {
    if nodes.len() < 2 || nodes.len() != slopes.len() {
        return Err(Error::domain(format!(
            "h needs at least two nodes and one slope per node ({} nodes, {} slopes)",
            nodes.len(),
            slopes.len()
        )));
    }
    if nodes.iter().chain(slopes).any(|v| !v.is_finite()) {
        return Err(Error::domain("h nodes and slopes must be finite"));
    }
    if nodes.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::domain("h nodes must be strictly increasing"));
    }
    if slopes.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::domain("h' must be nondecreasing (h convex)"));
    }
    Ok(())
}

/// `d_f(τ, k) = sup{z : h(τ+z) − h(z) = −k}`; `±∞` when unattainable.
pub fn d_f(h: &HFunction, tau: f64, k: f64) -> f64 {
    assert!(tau > 0.0, "d_f needs τ > 0");
    let target = -k;
    let g = |z: f64| h.h(tau + z) - h.h(z);
    let dg = |z: f64| h.h_prime(tau + z) - h.h_prime(z);
    let (mut lo, mut hi) = (-1.0, 1.0);
    while g(lo) > target {
        lo *= 2.0;
        if lo < -ROOT_LIMIT {
            return f64::NEG_INFINITY;
        }
    }
    while g(hi) <= target {
        hi *= 2.0;
        if hi > ROOT_LIMIT {
            return f64::INFINITY;
        }
    }
    // invariant: g(lo) ≤ target < g(hi). Newton accelerates; once it stalls
    // both sides of the estimate are probed, so a flat stretch of g is still
    // walked to its right end by bisection.
    let width = |z: f64| 1e-13 * z.abs().max(1.0);
    // values of g on a flat stretch agree only to rounding
    let slack = 1e-14 * (1.0 + target.abs());
    let mut z = 0.5 * (lo + hi);
    for _ in 0..400 {
        let v = g(z) - target;
        if v <= slack {
            lo = z;
        } else {
            hi = z;
        }
        if hi - lo <= width(z) {
            break;
        }
        let slope = dg(z);
        let newton = if slope > 0.0 { z - v / slope } else { f64::NAN };
        if !(newton > lo && newton < hi) {
            z = 0.5 * (lo + hi);
            continue;
        }
        if (newton - z).abs() > 0.5 * width(z) {
            z = newton;
            continue;
        }
        let below = (newton - width(z)).max(lo);
        let above = (newton + width(z)).min(hi);
        if g(below) <= target + slack {
            lo = below;
        }
        if g(above) > target + slack {
            hi = above;
        } else {
            lo = above;
        }
        z = 0.5 * (lo + hi);
    }
    lo
}

/// Piecewise-linear `τ(T)` with `τ(0) = 0`, nondecreasing.
#[derive(Debug, Clone, PartialEq)]
pub struct TauCurve {
    maturities: Vec<f64>,
    values: Vec<f64>,
}

impl TauCurve {
    pub fn new(maturities: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if maturities.is_empty() || maturities.len() != values.len() {
            return Err(Error::domain("tau curve needs one value per maturity"));
        }
        if !(maturities[0] > 0.0) || maturities.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::domain("tau maturities must be positive and increasing"));
        }
        if !(values[0] >= 0.0) || values.windows(2).any(|w| !(w[1] >= w[0])) {
            return Err(Error::domain("tau values must be nonnegative and nondecreasing"));
        }
        Ok(Self { maturities, values })
    }

    pub fn maturities(&self) -> &[f64] {
        &self.maturities
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Linear between nodes and from the origin; the last slope continues
    /// past the final node.
    pub fn at(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let (ms, vs) = (&self.maturities, &self.values);
        let i = ms.partition_point(|&m| m < t);
        let (t0, v0, t1, v1) = match i {
            0 => (0.0, 0.0, ms[0], vs[0]),
            i if i == ms.len() && i == 1 => (0.0, 0.0, ms[0], vs[0]),
            i if i == ms.len() => (ms[i - 2], vs[i - 2], ms[i - 1], vs[i - 1]),
            i => (ms[i - 1], vs[i - 1], ms[i], vs[i]),
        };
        if t == t1 {
            return v1;
        }
        v0 + (v1 - v0) * (t - t0) / (t1 - t0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CptModel {
    pub h: HFunction,
    pub tau: TauCurve,
}

/// Discounted CPT price at time change `tau`.
pub fn cpt_price_tau(h: &HFunction, kind: OptionKind, forward: f64, strike: f64, discount: f64, tau: f64) -> f64 {
    if tau <= 0.0 {
        return discount
            * match kind {
                OptionKind::Call => (forward - strike).max(0.0),
                OptionKind::Put => (strike - forward).max(0.0),
            };
    }
    let k = (strike / forward).ln();
    let d = d_f(h, tau, k);
    let undiscounted = match kind {
        OptionKind::Call => forward * h.omega(d + tau) - strike * h.omega(d),
        OptionKind::Put => strike * h.survival(d) - forward * h.survival(d + tau),
    };
    discount * undiscounted.max(0.0)
}

impl CptModel {
    pub fn new(h: HFunction, tau: TauCurve) -> Self {
        Self { h, tau }
    }

    pub fn price(&self, kind: OptionKind, forward: f64, strike: f64, discount: f64, maturity: f64) -> f64 {
        cpt_price_tau(&self.h, kind, forward, strike, discount, self.tau.at(maturity))
    }

    pub fn omega(&self, z: f64) -> f64 {
        self.h.omega(z)
    }
}

/// Shape coordinates: node width and square roots of the `h'` increments.
///
/// Nodes sit at `width·u_j` on a fixed symmetric grid `u`; `h'` rises by
/// `q_j²` across segment `j`, and the mode is pinned at `z = 0` by
/// `h'(0) = 0` (the midpoint of the two central nodes).
#[derive(Debug, Clone, PartialEq)]
pub struct CptShape {
    pub grid: Vec<f64>,
    pub width: f64,
    pub q: Vec<f64>,
}

impl CptShape {
    /// Symmetric grid of `2·n_cpt` points on `[−half_span, half_span]`.
    pub fn grid(n_cpt: usize, half_span: f64) -> Vec<f64> {
        let m = 2 * n_cpt;
        (0..m).map(|j| -half_span + 2.0 * half_span * j as f64 / (m - 1) as f64).collect()
    }

    /// The standard normal: unit width, unit curvature.
    pub fn standard_normal(n_cpt: usize, half_span: f64) -> Self {
        let grid = Self::grid(n_cpt, half_span);
        let q = grid.windows(2).map(|w| (w[1] - w[0]).sqrt()).collect();
        Self { grid, width: 1.0, q }
    }

    pub fn h_function(&self) -> Result<HFunction> {
        let m = self.grid.len();
        assert!(m >= 4 && m.is_multiple_of(2), "shape grid needs an even number of nodes");
        let nodes: Vec<f64> = self.grid.iter().map(|u| self.width * u).collect();
        let mut slopes = vec![0.0; m];
        for j in 0..m - 1 {
            slopes[j + 1] = slopes[j] + self.q[j] * self.q[j];
        }
        let mid = 0.5 * (slopes[m / 2 - 1] + slopes[m / 2]);
        for s in &mut slopes {
            *s -= mid;
        }
        HFunction::new(nodes, slopes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CptConfig {
    pub n_cpt: usize,
    pub weights: WeightScheme,
    pub max_evals: usize,
    pub ftol: f64,
    pub xtol: f64,
    pub gtol: f64,
}

impl Default for CptConfig {
    fn default() -> Self {
        Self {
            n_cpt: 6,
            weights: WeightScheme::Uniform,
            max_evals: 1000,
            ftol: 1e-8,
            xtol: 1e-8,
            gtol: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CptFit {
    pub model: CptModel,
    pub shape: CptShape,
    pub objective_value: f64,
    pub initial_objective: f64,
    pub residuals: Vec<OptionResidual>,
    pub evals_used: usize,
    pub converged: bool,
    pub termination: Termination,
    /// `N + 2·n_cpt`
    pub n_params: usize,
}

const WIDTH_BOUNDS: (f64, f64) = (0.05, 20.0);
const Q_MAX: f64 = 10.0;
const TAU_INCREMENT_MIN: f64 = 1e-6;
const TAU_INCREMENT_MAX: f64 = 3.0;

/// Layout: `[δ₁..δ_N, width, q₀..q_{2n−2}]` with `τᵢ = τᵢ₋₁ + δᵢ²`.
fn unpack(x: &[f64], n: usize, grid: &[f64]) -> (Vec<f64>, CptShape) {
    let mut taus = Vec::with_capacity(n);
    let mut acc = 0.0;
    for d in &x[..n] {
        acc += d * d;
        taus.push(acc);
    }
    let shape = CptShape {
        grid: grid.to_vec(),
        width: x[n],
        q: x[n + 1..].to_vec(),
    };
    (taus, shape)
}

fn basket_prices(basket: &Basket, h: &HFunction, taus: &[f64]) -> Vec<f64> {
    basket
        .options
        .iter()
        .map(|o| cpt_price_tau(h, o.option.kind, o.forward, o.option.strike, o.discount, taus[o.slice]))
        .collect()
}

/// Fit `τ` at the snapshot maturities and the `2·n_cpt` shape coordinates.
pub fn cpt_calibrate(snapshot: &MarketSnapshot, config: &CptConfig) -> Result<CptFit> {
    if config.n_cpt < 2 {
        return Err(Error::domain(format!("n_cpt must be at least 2, got {}", config.n_cpt)));
    }
    let basket = Basket::from_snapshot(snapshot, config.weights)?;
    if basket.is_empty() {
        return Err(Error::Calibration("no usable options in the snapshot".into()));
    }
    let n = basket.maturities.len();
    // start from Black-Scholes: τᵢ = √θ̂ᵢ
    let mut tau0: Vec<f64> = basket.atm_estimates().iter().map(|w| w.sqrt()).collect();
    for i in 1..n {
        tau0[i] = tau0[i].max(tau0[i - 1] + TAU_INCREMENT_MIN * TAU_INCREMENT_MIN);
    }
    let tau_max = tau0[n - 1];
    let start_shape = CptShape::standard_normal(config.n_cpt, 3.0 + tau_max);
    let grid = start_shape.grid.clone();

    let mut x0 = Vec::with_capacity(n + 2 * config.n_cpt);
    let mut prev = 0.0;
    for &t in &tau0 {
        x0.push((t - prev).max(0.0).sqrt().clamp(TAU_INCREMENT_MIN, TAU_INCREMENT_MAX));
        prev = t;
    }
    x0.push(start_shape.width);
    x0.extend_from_slice(&start_shape.q);
    let mut lo = vec![TAU_INCREMENT_MIN; n];
    let mut hi = vec![TAU_INCREMENT_MAX; n];
    lo.push(WIDTH_BOUNDS.0);
    hi.push(WIDTH_BOUNDS.1);
    lo.extend(std::iter::repeat_n(0.0, start_shape.q.len()));
    hi.extend(std::iter::repeat_n(Q_MAX, start_shape.q.len()));

    let residual = |x: &[f64]| -> Vec<f64> {
        let (taus, shape) = unpack(x, n, &grid);
        match shape.h_function() {
            Ok(h) => basket
                .options
                .iter()
                .zip(basket_prices(&basket, &h, &taus))
                .map(|(o, p)| o.weight.sqrt() * (p - o.option.price))
                .collect(),
            Err(_) => vec![f64::INFINITY; basket.options.len()],
        }
    };
    let opts = LsqOptions {
        ftol: config.ftol,
        xtol: config.xtol,
        gtol: config.gtol,
        max_evals: config.max_evals,
        ..LsqOptions::default()
    };
    let sol = lsq::minimize(residual, &x0, &lo, &hi, &opts);
    let x = if sol.cost.is_finite() { sol.x.clone() } else { x0.clone() };
    let (taus, shape) = unpack(&x, n, &grid);
    let h = shape.h_function()?;
    let prices = basket_prices(&basket, &h, &taus);
    let residuals = basket
        .options
        .iter()
        .zip(&prices)
        .map(|(o, &p)| OptionResidual {
            maturity: o.option.maturity,
            strike: o.option.strike,
            kind: o.option.kind,
            market_price: o.option.price,
            model_price: p,
            weight: o.weight,
            inside_bid_ask: o.option.inside_band(p),
        })
        .collect();
    let objective_value = basket
        .options
        .iter()
        .zip(&prices)
        .map(|(o, p)| o.weight * (p - o.option.price).powi(2))
        .sum();
    Ok(CptFit {
        model: CptModel::new(h, TauCurve::new(basket.maturities.clone(), taus)?),
        shape,
        objective_value,
        initial_objective: sol.initial_cost,
        residuals,
        evals_used: sol.evals,
        converged: sol.converged() && sol.cost.is_finite(),
        termination: sol.termination,
        n_params: n + 2 * config.n_cpt,
    })
}

/// Serialized CPT model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CptDocument {
    pub n_cpt: usize,
    pub nodes: Vec<f64>,
    /// `h'` at the nodes.
    pub slopes: Vec<f64>,
    pub segment_curvatures: Vec<f64>,
    pub left_curvature: f64,
    pub right_curvature: f64,
    pub tau_maturities: Vec<f64>,
    pub tau_values: Vec<f64>,
}

impl CptDocument {
    pub fn new(model: &CptModel) -> Self {
        let (left, right) = model.h.tail_curvatures();
        Self {
            n_cpt: model.h.nodes().len() / 2,
            nodes: model.h.nodes().to_vec(),
            slopes: model.h.slopes().to_vec(),
            segment_curvatures: model.h.segment_curvatures(),
            left_curvature: left,
            right_curvature: right,
            tau_maturities: model.tau.maturities().to_vec(),
            tau_values: model.tau.values().to_vec(),
        }
    }

    pub fn model(&self) -> Result<CptModel> {
        if self.nodes.len() != 2 * self.n_cpt {
            return Err(Error::Schema(format!(
                "CPT document lists {} nodes for n_cpt = {}",
                self.nodes.len(),
                self.n_cpt
            )));
        }
        let h = HFunction::with_tails(self.nodes.clone(), self.slopes.clone(), self.left_curvature, self.right_curvature)?;
        let tau = TauCurve::new(self.tau_maturities.clone(), self.tau_values.clone())?;
        Ok(CptModel::new(h, tau))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}
