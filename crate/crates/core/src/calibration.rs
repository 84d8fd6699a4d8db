//! Global eSSVI calibration on weighted price residuals.
//!
//! Each iterate of the bounded least-squares solver is a point of the box
//! domain, mapped to slices by [`to_slices`]; every evaluated surface is
//! therefore free of static arbitrage by construction.
//!
//! The parameter vector is laid out as `[ρ₁..ρ_N, θ₁, a₂..a_N, c₁..c_N]`.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::format::fmt_num;
use crate::global_param::{to_slices, GlobalParams};
use crate::lsq::{self, LsqOptions, Termination};
use crate::market_data::{AggregatedOption, MarketSnapshot};
use crate::no_arbitrage::ButterflyRule;
use crate::pricing::{bs_price, bs_vega, implied_total_variance, OptionKind, SsviSlice};
use crate::{Error, Result};

pub const THETA_FLOOR: f64 = 1e-8;
pub const A_FLOOR: f64 = 1e-8;
pub const C_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum WeightScheme {
    #[default]
    #[serde(rename = "uniform")]
    Uniform,
    /// `ω = 1/vega²` from the market implied variance.
    #[serde(rename = "ivega2")]
    InverseVegaSquared,
}

impl fmt::Display for WeightScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WeightScheme::Uniform => "uniform",
            WeightScheme::InverseVegaSquared => "ivega2",
        })
    }
}

impl FromStr for WeightScheme {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "uniform" => Ok(WeightScheme::Uniform),
            "ivega2" | "inverse-vega-squared" => Ok(WeightScheme::InverseVegaSquared),
            other => Err(format!("unknown weight scheme `{other}` (expected uniform or ivega2)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibConfig {
    pub weights: WeightScheme,
    pub rule: ButterflyRule,
    /// Upper bound on `aᵢ`; doubled once if the initial guess exceeds it.
    pub a_upper: f64,
    /// `ρᵢ ∈ [−rho_bound, rho_bound]`.
    pub rho_bound: f64,
    pub max_evals: usize,
    pub ftol: f64,
    pub xtol: f64,
    pub gtol: f64,
}

impl Default for CalibConfig {
    fn default() -> Self {
        Self {
            weights: WeightScheme::Uniform,
            rule: ButterflyRule::gj(),
            a_upper: 0.05,
            rho_bound: 0.95,
            max_evals: 1000,
            ftol: 1e-8,
            xtol: 1e-8,
            gtol: 1e-8,
        }
    }
}

impl CalibConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.a_upper > A_FLOOR && self.a_upper.is_finite()) {
            return Err(Error::domain(format!("a_upper must exceed {A_FLOOR}, got {}", self.a_upper)));
        }
        if !(self.rho_bound > 0.0 && self.rho_bound < 1.0) {
            return Err(Error::domain(format!("rho bound must lie in (0, 1), got {}", self.rho_bound)));
        }
        if self.max_evals == 0 {
            return Err(Error::domain("max_evals must be at least 1"));
        }
        Ok(())
    }

    fn lsq_options(&self) -> LsqOptions {
        LsqOptions {
            ftol: self.ftol,
            xtol: self.xtol,
            gtol: self.gtol,
            max_evals: self.max_evals,
            ..LsqOptions::default()
        }
    }
}

/// One option of the calibration basket with its pricing inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasketOption {
    pub option: AggregatedOption,
    /// Index into [`Basket::maturities`].
    pub slice: usize,
    pub forward: f64,
    pub discount: f64,
    /// Time to expiry from the option's timestamp.
    pub expiry: f64,
    /// `log(K/F)`
    pub k: f64,
    /// Market implied total variance.
    pub market_w: f64,
    pub vega: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Basket {
    pub maturities: Vec<f64>,
    pub options: Vec<BasketOption>,
    /// Options left out because their price has no implied variance.
    pub skipped: Vec<AggregatedOption>,
}

impl Basket {
    /// Out-of-the-money options of `snapshot`, one per `(maturity, strike)`.
    pub fn from_snapshot(snapshot: &MarketSnapshot, weights: WeightScheme) -> Result<Self> {
        let agg = &snapshot.aggregated;
        let mut options = Vec::new();
        let mut skipped = Vec::new();
        let mut maturities: Vec<f64> = Vec::new();
        let mut i = 0;
        while i < agg.len() {
            // aggregated rows are sorted by (maturity, strike, kind)
            let mut j = i + 1;
            while j < agg.len() && agg[j].maturity == agg[i].maturity && agg[j].strike == agg[i].strike {
                j += 1;
            }
            let group = &agg[i..j];
            let f = snapshot.forward(&group[0]);
            let otm = if group[0].strike >= f { OptionKind::Call } else { OptionKind::Put };
            let pick = group.iter().find(|o| o.kind == otm).unwrap_or(&group[0]);
            i = j;

            let forward = snapshot.forward(pick);
            let discount = snapshot.discount(pick);
            let expiry = snapshot.time_to_expiry(pick);
            let Ok(market_w) = implied_total_variance(pick.kind, forward, pick.strike, discount, pick.price) else {
                skipped.push(*pick);
                continue;
            };
            let vega = bs_vega(forward, pick.strike, discount, market_w, expiry)?;
            if maturities.last() != Some(&pick.maturity) {
                maturities.push(pick.maturity);
            }
            options.push(BasketOption {
                option: *pick,
                slice: maturities.len() - 1,
                forward,
                discount,
                expiry,
                k: (pick.strike / forward).ln(),
                market_w,
                vega,
                weight: 1.0,
            });
        }
        let mut basket = Self {
            maturities,
            options,
            skipped,
        };
        basket.reweight(weights);
        Ok(basket)
    }

    pub fn reweight(&mut self, weights: WeightScheme) {
        for o in &mut self.options {
            o.weight = match weights {
                WeightScheme::Uniform => 1.0,
                WeightScheme::InverseVegaSquared => 1.0 / (o.vega * o.vega),
            };
        }
    }

    pub fn is_empty(&self) -> bool {
        self.options.is_empty()
    }

    pub fn model_price(&self, o: &BasketOption, slices: &[SsviSlice]) -> f64 {
        let w = slices[o.slice].total_variance(o.k);
        bs_price(o.option.kind, o.forward, o.option.strike, o.discount, w)
            .expect("basket inputs validated at construction")
    }

    pub fn model_prices(&self, slices: &[SsviSlice]) -> Vec<f64> {
        self.options.iter().map(|o| self.model_price(o, slices)).collect()
    }

    /// `√ω·(C̃ − C)` per option.
    pub fn residuals(&self, slices: &[SsviSlice]) -> Vec<f64> {
        self.options
            .iter()
            .map(|o| o.weight.sqrt() * (self.model_price(o, slices) - o.option.price))
            .collect()
    }

    /// `Σ ω (C̃ − C)²`
    pub fn objective(&self, slices: &[SsviSlice]) -> f64 {
        self.residuals(slices).iter().map(|r| r * r).sum()
    }

    /// ATM total variance per maturity.
    ///
    /// Linear interpolation in `k` between the options bracketing `k = 0`,
    /// otherwise the option closest to the money.
    pub fn atm_estimates(&self) -> Vec<f64> {
        (0..self.maturities.len())
            .map(|s| {
                let mut pts: Vec<(f64, f64)> = self
                    .options
                    .iter()
                    .filter(|o| o.slice == s)
                    .map(|o| (o.k, o.market_w))
                    .collect();
                pts.sort_by(|a, b| a.0.total_cmp(&b.0));
                if let Some(w) = pts.windows(2).find(|w| w[0].0 <= 0.0 && w[1].0 >= 0.0) {
                    let ((k0, w0), (k1, w1)) = (w[0], w[1]);
                    if k1 == k0 {
                        return w0;
                    }
                    return w0 + (w1 - w0) * (0.0 - k0) / (k1 - k0);
                }
                pts.iter()
                    .min_by(|a, b| a.0.abs().total_cmp(&b.0.abs()))
                    .map(|p| p.1)
                    .expect("every basket maturity has an option")
            })
            .collect()
    }
}

/// Starting point and box derived from the market.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialGuess {
    pub params: GlobalParams,
    pub atm: Vec<f64>,
    /// Effective `a` upper bound after the doubling rule.
    pub a_upper: f64,
    pub theta_cap: f64,
    /// Maturities whose `a` hit the floor (decreasing ATM variance).
    pub clipped: Vec<usize>,
}

pub fn initial_guess(basket: &Basket, config: &CalibConfig) -> Result<InitialGuess> {
    if basket.is_empty() {
        return Err(Error::Calibration("no usable options in the snapshot".into()));
    }
    let atm = basket.atm_estimates();
    let n = atm.len();
    let raw_a: Vec<f64> = atm.windows(2).map(|w| w[1] - w[0]).collect();
    let mut a_upper = config.a_upper;
    if raw_a.iter().any(|&a| a > a_upper) {
        a_upper *= 2.0;
    }
    let mut clipped = Vec::new();
    let a = raw_a
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            if a <= A_FLOOR {
                clipped.push(i + 1);
            }
            a.clamp(A_FLOOR, a_upper)
        })
        .collect();
    let theta_cap = 4.0 * atm.iter().cloned().fold(0.0, f64::max);
    let params = GlobalParams::new(
        basket.maturities.clone(),
        vec![0.0; n],
        atm[0].clamp(THETA_FLOOR, theta_cap),
        a,
        vec![0.5; n],
    )?;
    Ok(InitialGuess {
        params,
        atm,
        a_upper,
        theta_cap,
        clipped,
    })
}

fn bounds(n: usize, config: &CalibConfig, a_upper: f64, theta_cap: f64) -> (Vec<f64>, Vec<f64>) {
    let mut lo = Vec::with_capacity(3 * n);
    let mut hi = Vec::with_capacity(3 * n);
    lo.extend(std::iter::repeat_n(-config.rho_bound, n));
    hi.extend(std::iter::repeat_n(config.rho_bound, n));
    lo.push(THETA_FLOOR);
    hi.push(theta_cap.max(2.0 * THETA_FLOOR));
    lo.extend(std::iter::repeat_n(A_FLOOR, n - 1));
    hi.extend(std::iter::repeat_n(a_upper, n - 1));
    lo.extend(std::iter::repeat_n(C_MARGIN, n));
    hi.extend(std::iter::repeat_n(1.0 - C_MARGIN, n));
    (lo, hi)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptionResidual {
    pub maturity: f64,
    pub strike: f64,
    pub kind: OptionKind,
    pub market_price: f64,
    pub model_price: f64,
    pub weight: f64,
    /// `None` when the option has no bid/ask band.
    pub inside_bid_ask: Option<bool>,
}

#[derive(Debug, Clone)]
pub struct CalibResult {
    pub params: GlobalParams,
    pub slices: Vec<SsviSlice>,
    pub objective_value: f64,
    pub initial_objective: f64,
    pub residuals: Vec<OptionResidual>,
    pub evals_used: usize,
    pub converged: bool,
    pub termination: Termination,
    pub a_upper: f64,
    pub theta_cap: f64,
    /// Slices where the map's degenerate guard fired at the solution.
    pub degenerate: Vec<usize>,
}

impl CalibResult {
    pub fn write_residuals(&self, w: impl Write) -> Result<()> {
        write_residuals(&self.residuals, w)
    }
}

pub fn write_residuals(rows: &[OptionResidual], w: impl Write) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let csv_err = |e: csv::Error| Error::Schema(format!("writing residuals: {e}"));
    wtr.write_record([
        "maturity",
        "strike",
        "kind",
        "market_price",
        "model_price",
        "weight",
        "inside_bid_ask",
    ])
    .map_err(csv_err)?;
    for r in rows {
        let inside = r.inside_bid_ask.map(|b| b.to_string()).unwrap_or_default();
        wtr.write_record([
            fmt_num(r.maturity),
            fmt_num(r.strike),
            r.kind.to_string(),
            fmt_num(r.market_price),
            fmt_num(r.model_price),
            fmt_num(r.weight),
            inside,
        ])
        .map_err(csv_err)?;
    }
    wtr.flush().map_err(|e| Error::io("<residuals>", e))
}

/// Residual vector for a box point, as seen by the solver.
pub fn residuals(gp: &GlobalParams, basket: &Basket, rule: &ButterflyRule) -> Vec<f64> {
    basket.residuals(&to_slices(gp, rule).0)
}

pub fn calibrate(snapshot: &MarketSnapshot, config: &CalibConfig) -> Result<CalibResult> {
    calibrate_observed(snapshot, config, None, |_, _| {})
}

/// Calibrate from a fixed starting point (box bounds still come from the data).
pub fn calibrate_from(snapshot: &MarketSnapshot, config: &CalibConfig, initial: &GlobalParams) -> Result<CalibResult> {
    calibrate_observed(snapshot, config, Some(initial), |_, _| {})
}

/// Full calibration; `observe` sees every box point the solver evaluates.
pub fn calibrate_observed(
    snapshot: &MarketSnapshot,
    config: &CalibConfig,
    initial: Option<&GlobalParams>,
    mut observe: impl FnMut(&GlobalParams, &[SsviSlice]),
) -> Result<CalibResult> {
    config.validate()?;
    let basket = Basket::from_snapshot(snapshot, config.weights)?;
    let guess = initial_guess(&basket, config)?;
    let start = match initial {
        Some(p) => {
            if p.maturities != basket.maturities {
                return Err(Error::Calibration(format!(
                    "initial parameters have maturities {:?}, snapshot has {:?}",
                    p.maturities, basket.maturities
                )));
            }
            p.validate()?;
            p.clone()
        }
        None => guess.params.clone(),
    };
    let n = basket.maturities.len();
    let (lo, hi) = bounds(n, config, guess.a_upper, guess.theta_cap);
    let rule = config.rule;
    let mats = basket.maturities.clone();
    let f = |x: &[f64]| {
        let gp = GlobalParams::from_vector(&mats, x);
        let (slices, _) = to_slices(&gp, &rule);
        observe(&gp, &slices);
        basket.residuals(&slices)
    };
    let sol = lsq::minimize(f, &start.to_vector(), &lo, &hi, &config.lsq_options());

    let (params, converged, objective) = if sol.cost.is_finite() {
        (GlobalParams::from_vector(&mats, &sol.x), sol.converged(), sol.cost)
    } else {
        let c0 = basket.objective(&to_slices(&start, &rule).0);
        (start.clone(), false, c0)
    };
    let (slices, aux) = to_slices(&params, &rule);
    let prices = basket.model_prices(&slices);
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
    Ok(CalibResult {
        params,
        slices,
        objective_value: objective,
        initial_objective: sol.initial_cost,
        residuals,
        evals_used: sol.evals,
        converged,
        termination: sol.termination,
        a_upper: guess.a_upper,
        theta_cap: guess.theta_cap,
        degenerate: aux.degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_data::{CurvePoint, PriceSource, SnapshotMeta};
    use crate::no_arbitrage::surface_check;
    use approx::assert_relative_eq;

    fn meta() -> SnapshotMeta {
        SnapshotMeta {
            close_spot: 100.0,
            close_time: 0.0,
            window: 600.0,
        }
    }

    /// Flat-vol snapshot, both calls and puts at every strike.
    fn flat_snapshot(sigma: f64, mats: &[f64]) -> MarketSnapshot {
        let curve: Vec<CurvePoint> = mats
            .iter()
            .map(|&t| CurvePoint {
                maturity: t,
                forward_close: 100.0,
                discount_close: 1.0,
            })
            .collect();
        let mut opts = Vec::new();
        for &t in mats {
            for i in 0..9 {
                let k = 80.0 + 5.0 * i as f64;
                for kind in [OptionKind::Call, OptionKind::Put] {
                    let price = bs_price(kind, 100.0, k, 1.0, sigma * sigma * t).unwrap();
                    opts.push(AggregatedOption {
                        maturity: t,
                        strike: k,
                        kind,
                        source: PriceSource::Mid,
                        timestamp: 0.0,
                        price,
                        bid: Some(price * 0.99),
                        ask: Some(price * 1.01),
                        spot_at_ts: 100.0,
                    });
                }
            }
        }
        MarketSnapshot::from_aggregated(meta(), curve, &opts).unwrap()
    }

    /// Snapshot priced from the given slices, calls only.
    fn snapshot_from(slices: &[SsviSlice], strikes: &[f64]) -> MarketSnapshot {
        let curve: Vec<CurvePoint> = slices
            .iter()
            .map(|s| CurvePoint {
                maturity: s.maturity,
                forward_close: 100.0,
                discount_close: 0.98,
            })
            .collect();
        let mut opts = Vec::new();
        for s in slices {
            for &k in strikes {
                let kind = if k >= 100.0 { OptionKind::Call } else { OptionKind::Put };
                let price = bs_price(kind, 100.0, k, 0.98, s.total_variance((k / 100.0f64).ln())).unwrap();
                opts.push(AggregatedOption {
                    maturity: s.maturity,
                    strike: k,
                    kind,
                    source: PriceSource::Trade,
                    timestamp: 0.0,
                    price,
                    bid: None,
                    ask: None,
                    spot_at_ts: 100.0,
                });
            }
        }
        MarketSnapshot::from_aggregated(meta(), curve, &opts).unwrap()
    }

    fn generator() -> GlobalParams {
        GlobalParams::new(vec![0.25, 0.5, 1.0], vec![-0.4, -0.3, -0.2], 0.01, vec![0.01, 0.015], vec![0.6, 0.5, 0.4])
            .unwrap()
    }

    #[test]
    fn basket_picks_out_of_the_money_side() {
        let b = Basket::from_snapshot(&flat_snapshot(0.2, &[0.5]), WeightScheme::Uniform).unwrap();
        assert_eq!(b.options.len(), 9);
        for o in &b.options {
            let want = if o.option.strike >= 100.0 { OptionKind::Call } else { OptionKind::Put };
            assert_eq!(o.option.kind, want);
            assert_relative_eq!(o.market_w, 0.02, max_relative = 1e-9);
        }
    }

    #[test]
    fn flat_vol_initial_guess() {
        let b = Basket::from_snapshot(&flat_snapshot(0.2, &[0.1, 0.5]), WeightScheme::Uniform).unwrap();
        let g = initial_guess(&b, &CalibConfig::default()).unwrap();
        assert_relative_eq!(g.atm[0], 0.004, max_relative = 1e-9);
        assert_relative_eq!(g.atm[1], 0.02, max_relative = 1e-9);
        assert_relative_eq!(g.params.a[0], 0.016, max_relative = 1e-8);
        assert_eq!(g.params.rhos, vec![0.0, 0.0]);
        assert_eq!(g.params.c, vec![0.5, 0.5]);
        assert_eq!(g.a_upper, 0.05);
    }

    #[test]
    fn single_maturity_guess() {
        let b = Basket::from_snapshot(&flat_snapshot(0.3, &[1.0]), WeightScheme::Uniform).unwrap();
        let g = initial_guess(&b, &CalibConfig::default()).unwrap();
        assert!(g.params.a.is_empty());
        assert_relative_eq!(g.params.theta1, 0.09, max_relative = 1e-9);
    }

    #[test]
    fn decreasing_atm_is_clipped_and_flagged() {
        let s = vec![
            SsviSlice::new(0.04, 0.0, 0.2, 0.5).unwrap(),
            SsviSlice::new(0.03, 0.0, 0.2, 1.0).unwrap(),
        ];
        let b = Basket::from_snapshot(&snapshot_from(&s, &[90.0, 100.0, 110.0]), WeightScheme::Uniform).unwrap();
        let g = initial_guess(&b, &CalibConfig::default()).unwrap();
        assert_eq!(g.params.a, vec![A_FLOOR]);
        assert_eq!(g.clipped, vec![1]);
    }

    #[test]
    fn large_initial_a_doubles_upper_bound() {
        let s = vec![
            SsviSlice::new(0.04, 0.0, 0.2, 0.5).unwrap(),
            SsviSlice::new(0.11, 0.0, 0.3, 1.0).unwrap(),
        ];
        let b = Basket::from_snapshot(&snapshot_from(&s, &[90.0, 100.0, 110.0]), WeightScheme::Uniform).unwrap();
        let g = initial_guess(&b, &CalibConfig::default()).unwrap();
        assert_eq!(g.a_upper, 0.1);
        assert_relative_eq!(g.params.a[0], 0.07, max_relative = 1e-8);
    }

    #[test]
    fn generator_has_zero_residuals() {
        let rule = ButterflyRule::gj();
        let (slices, _) = to_slices(&generator(), &rule);
        let snap = snapshot_from(&slices, &[80.0, 95.0, 100.0, 105.0, 120.0]);
        let b = Basket::from_snapshot(&snap, WeightScheme::Uniform).unwrap();
        let r = residuals(&generator(), &b, &rule);
        assert!(r.iter().all(|v| v.abs() < 1e-12), "{r:?}");
    }

    #[test]
    fn uniform_residual_is_price_difference() {
        let rule = ButterflyRule::gj();
        let snap = flat_snapshot(0.2, &[0.5]);
        let b = Basket::from_snapshot(&snap, WeightScheme::Uniform).unwrap();
        let gp = GlobalParams::new(vec![0.5], vec![0.1], 0.03, vec![], vec![0.3]).unwrap();
        let (slices, _) = to_slices(&gp, &rule);
        let r = b.residuals(&slices);
        for (o, ri) in b.options.iter().zip(&r) {
            assert_eq!(*ri, b.model_price(o, &slices) - o.option.price);
        }
    }

    #[test]
    fn vega_weights_scale_quadratically() {
        let rule = ButterflyRule::gj();
        let mut b = Basket::from_snapshot(&flat_snapshot(0.2, &[0.5, 1.0]), WeightScheme::InverseVegaSquared).unwrap();
        let gp = GlobalParams::new(vec![0.5, 1.0], vec![0.1, 0.0], 0.03, vec![0.02], vec![0.3, 0.5]).unwrap();
        let slices = to_slices(&gp, &rule).0;
        let base = b.objective(&slices);
        for o in &mut b.options {
            o.vega *= 2.0;
        }
        b.reweight(WeightScheme::InverseVegaSquared);
        assert_eq!(b.objective(&slices), 0.25 * base);
    }

    #[test]
    fn vega_weighted_residual_tracks_vol_error() {
        // a small vol bump shows up as roughly the same vol difference
        let snap = flat_snapshot(0.2, &[1.0]);
        let b = Basket::from_snapshot(&snap, WeightScheme::InverseVegaSquared).unwrap();
        let bumped = 0.201f64;
        let slice = SsviSlice {
            theta: bumped * bumped,
            rho: 0.0,
            psi: 1e-12,
            maturity: 1.0,
        };
        for r in b.residuals(&[slice]) {
            assert!((r - 0.001).abs() < 2e-5, "{r}");
        }
    }

    #[test]
    fn empty_snapshot_errors() {
        let curve = vec![CurvePoint {
            maturity: 1.0,
            forward_close: 100.0,
            discount_close: 1.0,
        }];
        let snap = MarketSnapshot::build(meta(), curve, vec![]).unwrap();
        assert!(matches!(calibrate(&snap, &CalibConfig::default()), Err(Error::Calibration(_))));
    }

    #[test]
    fn recovers_generator_prices() {
        let rule = ButterflyRule::gj();
        let (slices, _) = to_slices(&generator(), &rule);
        let strikes: Vec<f64> = (0..15).map(|i| 75.0 + 4.0 * i as f64).collect();
        let snap = snapshot_from(&slices, &strikes);
        let res = calibrate(&snap, &CalibConfig::default()).unwrap();
        assert!(surface_check(&res.slices, &rule).passed());
        let worst = res
            .residuals
            .iter()
            .map(|r| (r.model_price - r.market_price).abs() / 100.0)
            .fold(0.0, f64::max);
        assert!(worst < 1e-5, "worst {worst}, {:?}", res.termination);
        assert!(res.objective_value <= res.initial_objective);
    }

    #[test]
    fn deterministic_from_fixed_start() {
        let snap = flat_snapshot(0.25, &[0.25, 1.0]);
        let cfg = CalibConfig {
            max_evals: 40,
            ..CalibConfig::default()
        };
        let start = GlobalParams::new(vec![0.25, 1.0], vec![0.0, 0.0], 0.01, vec![0.05], vec![0.5, 0.5]).unwrap();
        let a = calibrate_from(&snap, &cfg, &start).unwrap();
        let b = calibrate_from(&snap, &cfg, &start).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.objective_value, b.objective_value);
    }

    #[test]
    fn residual_csv_marks_missing_band() {
        let rows = vec![
            OptionResidual {
                maturity: 0.5,
                strike: 100.0,
                kind: OptionKind::Call,
                market_price: 2.1,
                model_price: 2.05,
                weight: 1.0,
                inside_bid_ask: Some(true),
            },
            OptionResidual {
                maturity: 0.5,
                strike: 110.0,
                kind: OptionKind::Call,
                market_price: 0.5,
                model_price: 0.4,
                weight: 1.0,
                inside_bid_ask: None,
            },
        ];
        let mut buf = Vec::new();
        write_residuals(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "maturity,strike,kind,market_price,model_price,weight,inside_bid_ask\n\
             0.5,100,call,2.1,2.05,1,true\n\
             0.5,110,call,0.5,0.4,1,\n"
        );
    }
}
