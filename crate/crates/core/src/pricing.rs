//! eSSVI total variance and Black-Scholes pricing on total variance.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::special::{norm_cdf, norm_pdf};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptionKind {
    Call,
    Put,
}

impl fmt::Display for OptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptionKind::Call => "call",
            OptionKind::Put => "put",
        })
    }
}

impl FromStr for OptionKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "call" | "c" => Ok(OptionKind::Call),
            "put" | "p" => Ok(OptionKind::Put),
            other => Err(format!("unknown option kind `{other}`")),
        }
    }
}

/// One maturity of an eSSVI surface in `(theta, rho, psi)` form, where
/// `psi = theta * phi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsviSlice {
    /// ATM total implied variance.
    pub theta: f64,
    pub rho: f64,
    pub psi: f64,
    pub maturity: f64,
}

impl SsviSlice {
    pub fn new(theta: f64, rho: f64, psi: f64, maturity: f64) -> Result<Self> {
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(Error::domain(format!("theta must be positive, got {theta}")));
        }
        if !(rho.abs() < 1.0) {
            return Err(Error::domain(format!("rho must lie in (-1, 1), got {rho}")));
        }
        if !(psi > 0.0 && psi.is_finite()) {
            return Err(Error::domain(format!("psi must be positive, got {psi}")));
        }
        if !(maturity > 0.0 && maturity.is_finite()) {
            return Err(Error::domain(format!("maturity must be positive, got {maturity}")));
        }
        Ok(Self {
            theta,
            rho,
            psi,
            maturity,
        })
    }

    /// The classic SSVI curvature parameter `phi = psi / theta`.
    pub fn phi(&self) -> f64 {
        self.psi / self.theta
    }

    /// Total implied variance at log-forward moneyness `k`.
    #[inline]
    pub fn total_variance(&self, k: f64) -> f64 {
        total_variance(self, k)
    }

    /// Implied volatility at `k`, using the slice maturity.
    pub fn implied_vol(&self, k: f64) -> f64 {
        (self.total_variance(k) / self.maturity).sqrt()
    }
}

/// `½(θ + ρψk + √((ψk + θρ)² + θ²(1 − ρ²)))`
#[inline]
pub fn total_variance(slice: &SsviSlice, k: f64) -> f64 {
    let SsviSlice {
        theta, rho, psi, ..
    } = *slice;
    let shifted = psi * k + theta * rho;
    0.5 * (theta + rho * psi * k + (shifted * shifted + theta * theta * (1.0 - rho * rho)).sqrt())
}

fn check_market_inputs(forward: f64, strike: f64, discount: f64) -> Result<()> {
    if !(forward > 0.0 && forward.is_finite()) {
        return Err(Error::domain(format!("forward must be positive, got {forward}")));
    }
    if !(strike > 0.0 && strike.is_finite()) {
        return Err(Error::domain(format!("strike must be positive, got {strike}")));
    }
    if !(discount > 0.0 && discount <= 1.0) {
        return Err(Error::domain(format!("discount must lie in (0, 1], got {discount}")));
    }
    Ok(())
}

/// Undiscounted Black price given total variance, without input checks.
#[inline]
pub(crate) fn black_undiscounted(kind: OptionKind, forward: f64, strike: f64, total_var: f64) -> f64 {
    if total_var <= 0.0 {
        return match kind {
            OptionKind::Call => (forward - strike).max(0.0),
            OptionKind::Put => (strike - forward).max(0.0),
        };
    }
    let sd = total_var.sqrt();
    let k = (strike / forward).ln();
    let d1 = 0.5 * sd - k / sd;
    let d2 = d1 - sd;
    match kind {
        OptionKind::Call => forward * norm_cdf(d1) - strike * norm_cdf(d2),
        OptionKind::Put => strike * norm_cdf(-d2) - forward * norm_cdf(-d1),
    }
}

/// Discounted Black-Scholes price on total variance `w = σ²T`.
///
/// `w = 0` returns the discounted intrinsic value. Puts are evaluated with
/// their own closed form (not through parity) so deep out-of-the-money puts
/// keep full relative precision; parity holds to rounding.
pub fn bs_price(
    kind: OptionKind,
    forward: f64,
    strike: f64,
    discount: f64,
    total_var: f64,
) -> Result<f64> {
    check_market_inputs(forward, strike, discount)?;
    if total_var < 0.0 || total_var.is_nan() {
        return Err(Error::domain(format!(
            "total variance must be non-negative, got {total_var}"
        )));
    }
    Ok(discount * black_undiscounted(kind, forward, strike, total_var))
}

/// Vega (price per unit of volatility): `D·F·φ(d₁)·√T`.
pub fn bs_vega(
    forward: f64,
    strike: f64,
    discount: f64,
    total_var: f64,
    maturity: f64,
) -> Result<f64> {
    check_market_inputs(forward, strike, discount)?;
    if !(total_var > 0.0) {
        return Err(Error::domain(format!(
            "vega needs positive total variance, got {total_var}"
        )));
    }
    if !(maturity > 0.0) {
        return Err(Error::domain(format!("maturity must be positive, got {maturity}")));
    }
    let sd = total_var.sqrt();
    let d1 = 0.5 * sd - (strike / forward).ln() / sd;
    Ok(discount * forward * norm_pdf(d1) * maturity.sqrt())
}

/// Bracket for [`implied_total_variance`].
pub const IMPLIED_VARIANCE_BRACKET: (f64, f64) = (1e-10, 16.0);

/// Invert a discounted price to total implied variance.
///
/// Safeguarded Newton on `w` inside [`IMPLIED_VARIANCE_BRACKET`], falling back
/// to bisection whenever a Newton step leaves the current bracket. In-the-money
/// prices are mapped to the out-of-the-money side by parity first. Stops at a
/// relative price tolerance of 1e-12.
pub fn implied_total_variance(
    kind: OptionKind,
    forward: f64,
    strike: f64,
    discount: f64,
    price: f64,
) -> Result<f64> {
    check_market_inputs(forward, strike, discount)?;
    let target = price / discount;
    let (intrinsic, cap) = match kind {
        OptionKind::Call => ((forward - strike).max(0.0), forward),
        OptionKind::Put => ((strike - forward).max(0.0), strike),
    };
    if !(target > intrinsic && target < cap) {
        return Err(Error::domain(format!(
            "price {price} outside the no-arbitrage band ({}, {}) for {kind} K={strike} F={forward}",
            discount * intrinsic,
            discount * cap
        )));
    }
    // invert the out-of-the-money side so the tolerance applies to time value
    let (kind, target) = match kind {
        OptionKind::Call if intrinsic > 0.0 => (OptionKind::Put, target - intrinsic),
        OptionKind::Put if intrinsic > 0.0 => (OptionKind::Call, target - intrinsic),
        _ => (kind, target),
    };
    let (mut lo, mut hi) = IMPLIED_VARIANCE_BRACKET;
    let f = |w: f64| black_undiscounted(kind, forward, strike, w) - target;
    if f(lo) > 0.0 || f(hi) < 0.0 {
        return Err(Error::domain(format!(
            "implied total variance for price {price} outside bracket [{lo}, {hi}]"
        )));
    }
    let k = (strike / forward).ln();
    let mut w = 0.5 * (lo + hi);
    // a decent start: the ATM approximation clamped into the bracket
    let atm_guess = {
        let sd = (target / forward) * (2.0 * std::f64::consts::PI).sqrt();
        (sd * sd + 2.0 * k.abs()).clamp(lo, hi)
    };
    if atm_guess > lo && atm_guess < hi {
        w = atm_guess;
    }
    for _ in 0..200 {
        let diff = f(w);
        if diff.abs() <= 1e-12 * target {
            return Ok(w);
        }
        if diff > 0.0 {
            hi = w;
        } else {
            lo = w;
        }
        let sd = w.sqrt();
        let d1 = 0.5 * sd - k / sd;
        let dprice_dw = forward * norm_pdf(d1) / (2.0 * sd);
        let newton = w - diff / dprice_dw;
        w = if dprice_dw > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= 1e-15 * hi {
            return Ok(w);
        }
    }
    Ok(w)
}
