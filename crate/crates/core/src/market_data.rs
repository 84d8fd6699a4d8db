//! Option quote/trade ingestion and per-option synthetic prices.
//!
//! A snapshot is built from three files: the quote CSV
//! (`maturity,strike,kind,record_kind,timestamp,bid,ask,trade_price,spot_at_ts`),
//! the curve CSV (`maturity,forward_close,discount_close`) and a TOML metadata
//! file with `close_spot`, `close_time` and an optional `window` in seconds.
//!
//! Aggregation keeps records with `close_time - window <= timestamp <= close_time`.
//! Per `(strike, maturity, kind)` the latest trade wins (ties: last in file
//! order); otherwise the latest two-sided quote supplies a bid/ask midpoint.
//! One-sided quotes never produce a price.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::format::{fmt_num, fmt_opt};
use crate::pricing::OptionKind;
use crate::{Error, Result};

pub const DEFAULT_WINDOW: f64 = 600.0;
pub const SECONDS_PER_YEAR: f64 = 365.0 * 86_400.0;

const QUOTE_HEADER: [&str; 9] = [
    "maturity",
    "strike",
    "kind",
    "record_kind",
    "timestamp",
    "bid",
    "ask",
    "trade_price",
    "spot_at_ts",
];
const CURVE_HEADER: [&str; 3] = ["maturity", "forward_close", "discount_close"];
const AGGREGATED_HEADER: [&str; 9] = [
    "maturity",
    "strike",
    "kind",
    "source",
    "timestamp",
    "price",
    "bid",
    "ask",
    "spot_at_ts",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordKind {
    Trade,
    Quote,
}

impl FromStr for RecordKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "trade" => Ok(RecordKind::Trade),
            "quote" => Ok(RecordKind::Quote),
            other => Err(format!("unknown record kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptionRecord {
    pub maturity: f64,
    pub strike: f64,
    pub kind: OptionKind,
    pub record_kind: RecordKind,
    /// Seconds since the snapshot open.
    pub timestamp: f64,
    pub bid: Option<f64>,
    pub ask: Option<f64>,
    pub trade_price: Option<f64>,
    pub spot_at_ts: f64,
}

impl OptionRecord {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(self.maturity > 0.0 && self.maturity.is_finite()) {
            return Err(format!("maturity must be positive, got {}", self.maturity));
        }
        if !(self.strike > 0.0 && self.strike.is_finite()) {
            return Err(format!("strike must be positive, got {}", self.strike));
        }
        if !(self.timestamp >= 0.0 && self.timestamp.is_finite()) {
            return Err(format!("timestamp must be non-negative, got {}", self.timestamp));
        }
        if !(self.spot_at_ts > 0.0 && self.spot_at_ts.is_finite()) {
            return Err(format!("spot_at_ts must be positive, got {}", self.spot_at_ts));
        }
        for (name, v) in [("bid", self.bid), ("ask", self.ask)] {
            if let Some(v) = v {
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(format!("{name} must be non-negative, got {v}"));
                }
            }
        }
        if let Some(t) = self.trade_price {
            if !(t > 0.0 && t.is_finite()) {
                return Err(format!("trade_price must be positive, got {t}"));
            }
        }
        if let (Some(b), Some(a)) = (self.bid, self.ask) {
            if b > a {
                return Err(format!("bid {b} above ask {a}"));
            }
        }
        let two_sided = self.bid.is_some() && self.ask.is_some();
        let has_trade = self.trade_price.is_some();
        let one_sided = self.bid.is_some() != self.ask.is_some();
        if !two_sided && !has_trade && !one_sided {
            return Err("row has neither a bid/ask quote nor a trade price".into());
        }
        if self.record_kind == RecordKind::Trade && !has_trade {
            return Err("trade row without trade_price".into());
        }
        Ok(())
    }

    fn mid(&self) -> Option<f64> {
        Some(0.5 * (self.bid? + self.ask?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub maturity: f64,
    pub forward_close: f64,
    pub discount_close: f64,
}

/// `F_t(T) = F_C(T)·S_t/S_C`.
pub fn forward_at(point: &CurvePoint, spot_at_ts: f64, close_spot: f64) -> Result<f64> {
    if !(close_spot > 0.0) || !(spot_at_ts > 0.0) || !(point.forward_close > 0.0) {
        return Err(Error::domain(format!(
            "forward needs positive inputs: F_C={}, S_t={spot_at_ts}, S_C={close_spot}",
            point.forward_close
        )));
    }
    Ok(point.forward_close * spot_at_ts / close_spot)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriceSource {
    Trade,
    Mid,
}

impl fmt::Display for PriceSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PriceSource::Trade => "trade",
            PriceSource::Mid => "mid",
        })
    }
}

/// Synthetic market price for one `(strike, maturity, kind)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregatedOption {
    pub maturity: f64,
    pub strike: f64,
    pub kind: OptionKind,
    pub source: PriceSource,
    /// Timestamp of the record the price came from.
    pub timestamp: f64,
    pub price: f64,
    pub bid: Option<f64>,
    pub ask: Option<f64>,
    pub spot_at_ts: f64,
}

impl AggregatedOption {
    /// Records that aggregate back to exactly this option.
    pub fn to_records(&self) -> Vec<OptionRecord> {
        let quote = OptionRecord {
            maturity: self.maturity,
            strike: self.strike,
            kind: self.kind,
            record_kind: RecordKind::Quote,
            timestamp: self.timestamp,
            bid: self.bid,
            ask: self.ask,
            trade_price: None,
            spot_at_ts: self.spot_at_ts,
        };
        match self.source {
            PriceSource::Mid => vec![quote],
            PriceSource::Trade => {
                let trade = OptionRecord {
                    record_kind: RecordKind::Trade,
                    bid: None,
                    ask: None,
                    trade_price: Some(self.price),
                    ..quote
                };
                if self.bid.is_some() && self.ask.is_some() {
                    vec![quote, trade]
                } else {
                    vec![trade]
                }
            }
        }
    }

    pub fn has_band(&self) -> bool {
        self.bid.is_some() && self.ask.is_some()
    }

    /// `Some(bid <= x <= ask)` when a band exists.
    pub fn inside_band(&self, x: f64) -> Option<bool> {
        Some(self.bid? <= x && x <= self.ask?)
    }
}

type Key = (u64, u64, OptionKind);

fn key_of(maturity: f64, strike: f64, kind: OptionKind) -> Key {
    (maturity.to_bits(), strike.to_bits(), kind)
}

/// Aggregate records into per-option synthetic prices.
///
/// `close_time` anchors the trailing window. The result is sorted by
/// `(maturity, strike, kind)`.
pub fn aggregate(records: &[OptionRecord], window: f64, close_time: f64) -> Vec<AggregatedOption> {
    assert!(window > 0.0, "aggregation window must be positive");
    let start = close_time - window;
    #[derive(Default)]
    struct Best<'a> {
        trade: Option<&'a OptionRecord>,
        quote: Option<&'a OptionRecord>,
    }
    // `>=` so later rows win ties
    fn newer(cand: &OptionRecord, cur: Option<&OptionRecord>) -> bool {
        cur.is_none_or(|c| cand.timestamp >= c.timestamp)
    }
    let mut best: BTreeMap<Key, Best> = BTreeMap::new();
    for r in records {
        if r.timestamp < start || r.timestamp > close_time {
            continue;
        }
        let b = best.entry(key_of(r.maturity, r.strike, r.kind)).or_default();
        if r.trade_price.is_some() && newer(r, b.trade) {
            b.trade = Some(r);
        }
        if r.mid().is_some() && newer(r, b.quote) {
            b.quote = Some(r);
        }
    }
    let mut out: Vec<AggregatedOption> = best
        .into_values()
        .filter_map(|b| {
            let (src, rec, price) = match (b.trade, b.quote) {
                (Some(t), _) => (PriceSource::Trade, t, t.trade_price?),
                (None, Some(q)) => (PriceSource::Mid, q, q.mid()?),
                (None, None) => return None,
            };
            Some(AggregatedOption {
                maturity: rec.maturity,
                strike: rec.strike,
                kind: rec.kind,
                source: src,
                timestamp: rec.timestamp,
                price,
                bid: b.quote.and_then(|q| q.bid),
                ask: b.quote.and_then(|q| q.ask),
                spot_at_ts: rec.spot_at_ts,
            })
        })
        .filter(|a| a.price > 0.0)
        .collect();
    out.sort_by(|a, b| {
        a.maturity
            .total_cmp(&b.maturity)
            .then(a.strike.total_cmp(&b.strike))
            .then(a.kind.cmp(&b.kind))
    });
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnapshotMeta {
    pub close_spot: f64,
    /// Snapshot close, in the same seconds as record timestamps.
    pub close_time: f64,
    #[serde(default = "default_window")]
    pub window: f64,
}

fn default_window() -> f64 {
    DEFAULT_WINDOW
}

impl SnapshotMeta {
    pub fn from_toml(text: &str) -> Result<Self> {
        let meta: SnapshotMeta =
            toml::from_str(text).map_err(|e| Error::Schema(format!("metadata: {e}")))?;
        if !(meta.close_spot > 0.0) {
            return Err(Error::Schema(format!("close_spot must be positive, got {}", meta.close_spot)));
        }
        if !(meta.window > 0.0) {
            return Err(Error::Schema(format!("window must be positive, got {}", meta.window)));
        }
        if !meta.close_time.is_finite() {
            return Err(Error::Schema("close_time must be finite".into()));
        }
        Ok(meta)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Schema(m) => Error::Schema(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

/// Aggregated market data plus the curve needed to price it.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketSnapshot {
    pub close_spot: f64,
    pub close_time: f64,
    pub window: f64,
    pub curve: Vec<CurvePoint>,
    pub records: Vec<OptionRecord>,
    pub aggregated: Vec<AggregatedOption>,
    /// Options removed by the noise filter.
    pub filtered: Vec<AggregatedOption>,
}

impl MarketSnapshot {
    /// Aggregate and noise-filter `records`.
    pub fn build(meta: SnapshotMeta, curve: Vec<CurvePoint>, records: Vec<OptionRecord>) -> Result<Self> {
        check_curve(&curve)?;
        let mut snap = Self {
            close_spot: meta.close_spot,
            close_time: meta.close_time,
            window: meta.window,
            curve,
            records,
            aggregated: Vec::new(),
            filtered: Vec::new(),
        };
        for r in &snap.records {
            if snap.curve_point(r.maturity).is_none() {
                return Err(Error::Schema(format!(
                    "record maturity {} has no curve point",
                    r.maturity
                )));
            }
        }
        let all = aggregate(&snap.records, snap.window, snap.close_time);
        let (keep, drop): (Vec<_>, Vec<_>) = all.into_iter().partition(|a| !snap.is_noise(a));
        snap.aggregated = keep;
        snap.filtered = drop;
        Ok(snap)
    }

    pub fn load(quotes: impl AsRef<Path>, curve: impl AsRef<Path>, meta: impl AsRef<Path>) -> Result<Self> {
        let meta = SnapshotMeta::load(meta)?;
        let curve = parse_curve_file(curve)?;
        let records = parse_quote_file(quotes)?;
        Self::build(meta, curve, records)
    }

    /// Build directly from aggregated options (e.g. a synthetic fixture).
    pub fn from_aggregated(meta: SnapshotMeta, curve: Vec<CurvePoint>, options: &[AggregatedOption]) -> Result<Self> {
        let records = options.iter().flat_map(|o| o.to_records()).collect();
        Self::build(meta, curve, records)
    }

    pub fn curve_point(&self, maturity: f64) -> Option<&CurvePoint> {
        self.curve
            .iter()
            .find(|c| (c.maturity - maturity).abs() <= 1e-12 * maturity.abs().max(1.0))
    }

    /// Distinct maturities present in the aggregated table.
    pub fn maturities(&self) -> Vec<f64> {
        let mut m: Vec<f64> = self.aggregated.iter().map(|a| a.maturity).collect();
        m.dedup();
        m
    }

    /// Forward at the option's own timestamp.
    pub fn forward(&self, opt: &AggregatedOption) -> f64 {
        let cp = self.curve_point(opt.maturity).expect("maturity checked at build");
        cp.forward_close * opt.spot_at_ts / self.close_spot
    }

    pub fn discount(&self, opt: &AggregatedOption) -> f64 {
        self.curve_point(opt.maturity).expect("maturity checked at build").discount_close
    }

    /// Time to expiry measured from the option's timestamp.
    pub fn time_to_expiry(&self, opt: &AggregatedOption) -> f64 {
        opt.maturity + (self.close_time - opt.timestamp) / SECONDS_PER_YEAR
    }

    /// Price at or below discounted intrinsic value (no time value).
    fn is_noise(&self, a: &AggregatedOption) -> bool {
        let f = self.forward(a);
        let d = self.discount(a);
        let intrinsic = match a.kind {
            OptionKind::Call => d * (f - a.strike).max(0.0),
            OptionKind::Put => d * (a.strike - f).max(0.0),
        };
        a.price <= intrinsic
    }

    pub fn write_aggregated(&self, w: impl Write) -> Result<()> {
        write_aggregated(&self.aggregated, w)
    }
}

fn check_curve(curve: &[CurvePoint]) -> Result<()> {
    for (i, c) in curve.iter().enumerate() {
        if !(c.maturity > 0.0 && c.forward_close > 0.0) || !(c.discount_close > 0.0 && c.discount_close <= 1.0) {
            return Err(Error::Schema(format!(
                "curve point {i}: need maturity > 0, forward > 0, discount in (0, 1], got {c:?}"
            )));
        }
    }
    if let Some(w) = curve.windows(2).find(|w| !(w[1].maturity > w[0].maturity)) {
        return Err(Error::Schema(format!(
            "curve maturities not strictly increasing: {} then {}",
            w[0].maturity, w[1].maturity
        )));
    }
    Ok(())
}

struct Columns(Vec<usize>);

fn columns(path: &Path, headers: &csv::StringRecord, wanted: &[&str]) -> Result<Columns> {
    let idx = wanted
        .iter()
        .map(|name| {
            headers.iter().position(|h| h.trim() == *name).ok_or_else(|| {
                Error::Schema(format!("{}: missing column `{name}`", path.display()))
            })
        })
        .collect::<Result<_>>()?;
    Ok(Columns(idx))
}

struct Row<'a> {
    path: &'a Path,
    line: u64,
    rec: &'a csv::StringRecord,
    cols: &'a Columns,
}

impl Row<'_> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            line: self.line,
            message: message.into(),
        }
    }

    fn raw(&self, i: usize) -> &str {
        self.rec.get(self.cols.0[i]).unwrap_or("").trim()
    }

    fn opt(&self, i: usize, name: &str) -> Result<Option<f64>> {
        let s = self.raw(i);
        if s.is_empty() {
            return Ok(None);
        }
        s.parse::<f64>()
            .map(Some)
            .map_err(|_| self.err(format!("{name}: cannot parse `{s}` as a number")))
    }

    fn num(&self, i: usize, name: &str) -> Result<f64> {
        self.opt(i, name)?.ok_or_else(|| self.err(format!("{name}: missing value")))
    }

    fn parsed<T: FromStr<Err = String>>(&self, i: usize) -> Result<T> {
        self.raw(i).parse().map_err(|e: String| self.err(e))
    }
}

fn for_each_row(
    path: &Path,
    reader: impl Read,
    header: &[&str],
    mut f: impl FnMut(Row<'_>) -> Result<()>,
) -> Result<()> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?
        .clone();
    let cols = columns(path, &headers, header)?;
    let mut rec = csv::StringRecord::new();
    loop {
        let line = rdr.position().line();
        match rdr.read_record(&mut rec) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: e.to_string(),
                })
            }
        }
        if rec.iter().all(|s| s.trim().is_empty()) {
            continue;
        }
        let line = rec.position().map_or(line, |p| p.line());
        f(Row {
            path,
            line,
            rec: &rec,
            cols: &cols,
        })?;
    }
    Ok(())
}

fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|e| Error::io(path, e))
}

/// Parse quote CSV rows; file order is preserved.
pub fn read_quotes(path: &Path, reader: impl Read) -> Result<Vec<OptionRecord>> {
    let mut out = Vec::new();
    for_each_row(path, reader, &QUOTE_HEADER, |row| {
        let rec = OptionRecord {
            maturity: row.num(0, "maturity")?,
            strike: row.num(1, "strike")?,
            kind: row.parsed(2)?,
            record_kind: row.parsed(3)?,
            timestamp: row.num(4, "timestamp")?,
            bid: row.opt(5, "bid")?,
            ask: row.opt(6, "ask")?,
            trade_price: row.opt(7, "trade_price")?,
            spot_at_ts: row.num(8, "spot_at_ts")?,
        };
        rec.validate().map_err(|m| row.err(m))?;
        out.push(rec);
        Ok(())
    })?;
    Ok(out)
}

pub fn parse_quote_file(path: impl AsRef<Path>) -> Result<Vec<OptionRecord>> {
    let path = path.as_ref();
    read_quotes(path, open(path)?)
}

pub fn read_curve(path: &Path, reader: impl Read) -> Result<Vec<CurvePoint>> {
    let mut out = Vec::new();
    for_each_row(path, reader, &CURVE_HEADER, |row| {
        out.push(CurvePoint {
            maturity: row.num(0, "maturity")?,
            forward_close: row.num(1, "forward_close")?,
            discount_close: row.num(2, "discount_close")?,
        });
        Ok(())
    })?;
    check_curve(&out).map_err(|e| match e {
        Error::Schema(m) => Error::Schema(format!("{}: {m}", path.display())),
        other => other,
    })?;
    Ok(out)
}

pub fn parse_curve_file(path: impl AsRef<Path>) -> Result<Vec<CurvePoint>> {
    let path = path.as_ref();
    read_curve(path, open(path)?)
}

pub fn write_curve(curve: &[CurvePoint], w: impl Write) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let csv_err = |e: csv::Error| Error::Schema(format!("writing curve: {e}"));
    wtr.write_record(CURVE_HEADER).map_err(csv_err)?;
    for c in curve {
        wtr.write_record([fmt_num(c.maturity), fmt_num(c.forward_close), fmt_num(c.discount_close)])
            .map_err(csv_err)?;
    }
    wtr.flush().map_err(|e| Error::io("<curve>", e))
}

pub fn write_quotes(records: &[OptionRecord], w: impl Write) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let csv_err = |e: csv::Error| Error::Schema(format!("writing quotes: {e}"));
    wtr.write_record(QUOTE_HEADER).map_err(csv_err)?;
    for r in records {
        let rk = match r.record_kind {
            RecordKind::Trade => "trade",
            RecordKind::Quote => "quote",
        };
        wtr.write_record([
            fmt_num(r.maturity),
            fmt_num(r.strike),
            r.kind.to_string(),
            rk.to_string(),
            fmt_num(r.timestamp),
            fmt_opt(r.bid),
            fmt_opt(r.ask),
            fmt_opt(r.trade_price),
            fmt_num(r.spot_at_ts),
        ])
        .map_err(csv_err)?;
    }
    wtr.flush().map_err(|e| Error::io("<quotes>", e))
}

pub fn write_aggregated(options: &[AggregatedOption], w: impl Write) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let csv_err = |e: csv::Error| Error::Schema(format!("writing aggregated table: {e}"));
    wtr.write_record(AGGREGATED_HEADER).map_err(csv_err)?;
    for a in options {
        wtr.write_record([
            fmt_num(a.maturity),
            fmt_num(a.strike),
            a.kind.to_string(),
            a.source.to_string(),
            fmt_num(a.timestamp),
            fmt_num(a.price),
            fmt_opt(a.bid),
            fmt_opt(a.ask),
            fmt_num(a.spot_at_ts),
        ])
        .map_err(csv_err)?;
    }
    wtr.flush().map_err(|e| Error::io("<aggregated>", e))
}

pub fn read_aggregated(path: &Path, reader: impl Read) -> Result<Vec<AggregatedOption>> {
    let mut out = Vec::new();
    for_each_row(path, reader, &AGGREGATED_HEADER, |row| {
        let source = match row.raw(3) {
            "trade" => PriceSource::Trade,
            "mid" => PriceSource::Mid,
            other => return Err(row.err(format!("unknown price source `{other}`"))),
        };
        out.push(AggregatedOption {
            maturity: row.num(0, "maturity")?,
            strike: row.num(1, "strike")?,
            kind: row.parsed(2)?,
            source,
            timestamp: row.num(4, "timestamp")?,
            price: row.num(5, "price")?,
            bid: row.opt(6, "bid")?,
            ask: row.opt(7, "ask")?,
            spot_at_ts: row.num(8, "spot_at_ts")?,
        });
        Ok(())
    })?;
    Ok(out)
}
