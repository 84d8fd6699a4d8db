//! Arbitrage-free eSSVI implied-volatility surfaces.
//!
//! The crate fits extended SSVI surfaces to option-price snapshots through a
//! box-domain reparametrization whose every point maps to a surface free of
//! butterfly and calendar-spread arbitrage. Around that core it provides:
//!
//! - [`market_data`]: quote/trade ingestion, windowed aggregation, timestamped forwards
//! - [`pricing`]: eSSVI total variance, Black-Scholes prices, vega and implied variance
//! - [`no_arbitrage`]: Gatheral-Jacquier and Martini-Mingone butterfly caps, calendar checks
//! - [`global_param`]: the box-domain map to and from SSVI slices
//! - [`calibration`]: bounded least-squares fit of the global parameters
//! - [`term_structure`]: arbitrage-free interpolation and extrapolation in maturity
//! - [`cpt`]: the Carr-Pelts-Tehranchi comparison model
//! - [`arb_detector`]: static-arbitrage audit of a call-price grid

// NaN must fail validation, so `!(x > y)` is used on purpose throughout.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod arb_detector;
pub mod calibration;
pub mod cpt;
mod error;
pub mod format;
pub mod global_param;
pub mod lsq;
pub mod market_data;
pub mod no_arbitrage;
pub mod pricing;
pub mod special;
pub mod term_structure;

pub use error::{Error, Result};
pub use global_param::{GlobalParams, ParamsDocument};
pub use no_arbitrage::{ButterflyKind, ButterflyRule};
pub use pricing::{OptionKind, SsviSlice};
