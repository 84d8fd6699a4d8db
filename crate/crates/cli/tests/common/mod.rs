//! Synthetic snapshot fixtures priced from known eSSVI parameters.

use std::fs;
use std::path::Path;

use essvi::market_data::{write_curve, write_quotes, AggregatedOption, CurvePoint, PriceSource};
use essvi::pricing::bs_price;
use essvi::{ButterflyKind, GlobalParams, OptionKind, ParamsDocument, ButterflyRule};
use essvi::global_param::to_slices;

pub const FORWARD: f64 = 1000.0;
pub const DISCOUNT: f64 = 0.99;

pub fn generator() -> GlobalParams {
    GlobalParams::new(
        vec![0.25, 0.5, 1.0, 2.0],
        vec![-0.5, -0.4, -0.3, -0.25],
        0.01,
        vec![0.012, 0.02, 0.035],
        vec![0.6, 0.5, 0.45, 0.4],
    )
    .unwrap()
}

/// Writes quotes.csv, curve.csv, meta.toml and generator.json into `dir`.
///
/// Prices carry a deterministic relative perturbation of size up to `noise`.
pub fn write_fixture(dir: &Path, noise: f64) {
    let gp = generator();
    let (slices, _) = to_slices(&gp, &ButterflyRule::gj());
    let curve: Vec<CurvePoint> = gp
        .maturities
        .iter()
        .map(|&t| CurvePoint {
            maturity: t,
            forward_close: FORWARD,
            discount_close: DISCOUNT,
        })
        .collect();
    let mut records = Vec::new();
    for (m, s) in slices.iter().enumerate() {
        for i in 0..15 {
            let strike = 700.0 + 50.0 * i as f64;
            let kind = if strike >= FORWARD { OptionKind::Call } else { OptionKind::Put };
            let w = s.total_variance((strike / FORWARD).ln());
            let bump = noise * ((7 * m + 3 * i) as f64).sin();
            let price = bs_price(kind, FORWARD, strike, DISCOUNT, w).unwrap() * (1.0 + bump);
            let opt = AggregatedOption {
                maturity: s.maturity,
                strike,
                kind,
                source: PriceSource::Mid,
                timestamp: 0.0,
                price,
                bid: Some(price * 0.99),
                ask: Some(price * 1.01),
                spot_at_ts: 1000.0,
            };
            records.extend(opt.to_records());
        }
    }
    write_quotes(&records, fs::File::create(dir.join("quotes.csv")).unwrap()).unwrap();
    write_curve(&curve, fs::File::create(dir.join("curve.csv")).unwrap()).unwrap();
    fs::write(dir.join("meta.toml"), "close_spot = 1000.0\nclose_time = 0.0\n").unwrap();
    let doc = ParamsDocument::new(&gp, ButterflyKind::Gj);
    fs::write(dir.join("generator.json"), doc.to_json().unwrap()).unwrap();
}
