//! Random feasible surfaces and synthetic snapshots shared by the integration tests.
#![allow(dead_code)]

use essvi::market_data::{AggregatedOption, CurvePoint, MarketSnapshot, PriceSource, SnapshotMeta};
use essvi::pricing::bs_price;
use essvi::{GlobalParams, OptionKind, SsviSlice};
use rand::Rng;

/// A point of the global parameter box with `n` maturities.
pub fn random_params(rng: &mut impl Rng, n: usize) -> GlobalParams {
    let mut t = 0.0;
    let maturities = (0..n)
        .map(|_| {
            t += rng.random_range(0.05..1.0);
            t
        })
        .collect();
    GlobalParams::new(
        maturities,
        (0..n).map(|_| rng.random_range(-0.95..0.95)).collect(),
        rng.random_range(1e-3..0.3),
        (1..n).map(|_| rng.random_range(1e-4..0.2)).collect(),
        (0..n).map(|_| rng.random_range(0.01..0.99)).collect(),
    )
    .unwrap()
}

pub fn meta() -> SnapshotMeta {
    SnapshotMeta {
        close_spot: 100.0,
        close_time: 0.0,
        window: 600.0,
    }
}

/// OTM trades priced from `slices` at the given strikes, forward 100.
pub fn snapshot_from(slices: &[SsviSlice], strikes: &[f64], discount: f64) -> MarketSnapshot {
    let curve: Vec<CurvePoint> = slices
        .iter()
        .map(|s| CurvePoint {
            maturity: s.maturity,
            forward_close: 100.0,
            discount_close: discount,
        })
        .collect();
    let mut opts = Vec::new();
    for s in slices {
        for &k in strikes {
            let kind = if k >= 100.0 { OptionKind::Call } else { OptionKind::Put };
            let price = bs_price(kind, 100.0, k, discount, s.total_variance((k / 100.0f64).ln())).unwrap();
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
