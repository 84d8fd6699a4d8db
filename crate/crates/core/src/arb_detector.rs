//! Static-arbitrage audit of a call-price grid.
//!
//! Prices are normalized per maturity to `c = C/(D·F)` at moneyness
//! `κ = K/F`, and tolerances likewise to `tol/(D·F)`. With `ε` the normalized
//! tolerance the checks are:
//!
//! | kind | condition flagged |
//! |---|---|
//! | `Positivity` | `C < −tol` |
//! | `VerticalSpread` | `c_{j+1} − c_j > ε` or `c_{j+1} − c_j < −(κ_{j+1} − κ_j) − ε` |
//! | `VerticalButterfly` | `c_j − chord(c_{j−1}, c_{j+1})(κ_j) > ε` |
//! | `CalendarSpread` | `c'(κ) < c(κ) − ε` at equal moneyness |
//! | `CalendarVerticalSpread` | `c'(κ⁻) < c(κ) − ε` or `c'(κ⁺) < c(κ) − (κ⁺ − κ) − ε` |
//! | `CalendarButterfly` | `chord(c'(κ⁻), c'(κ⁺))(κ) < c(κ) − ε` |
//!
//! where `c'` belongs to a later maturity and `κ⁻ < κ < κ⁺` are its nearest
//! grid moneynesses around an earlier grid point `κ`. The calendar family is
//! checked for every ordered pair of maturities, not just neighbours, using
//! the larger of the two normalized tolerances. A calendar butterfly compares
//! against a linearly interpolated later price and is marked `interpolated`.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::format::fmt_num;
use crate::{Error, Result};

/// Relative tolerance for treating two moneynesses as aligned.
const ALIGN_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct GridSlice {
    pub maturity: f64,
    pub forward: f64,
    pub discount: f64,
    pub strikes: Vec<f64>,
    pub calls: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriceGrid {
    slices: Vec<GridSlice>,
}

impl PriceGrid {
    pub fn new(slices: Vec<GridSlice>) -> Result<Self> {
        for (i, s) in slices.iter().enumerate() {
            if !(s.maturity > 0.0 && s.forward > 0.0) || !(s.discount > 0.0 && s.discount <= 1.0) {
                return Err(Error::Grid(format!(
                    "maturity {i}: need T > 0, F > 0 and D in (0, 1], got T={} F={} D={}",
                    s.maturity, s.forward, s.discount
                )));
            }
            if s.strikes.len() != s.calls.len() {
                return Err(Error::Grid(format!(
                    "maturity {i}: {} strikes but {} prices",
                    s.strikes.len(),
                    s.calls.len()
                )));
            }
            if !(s.strikes.first().is_none_or(|&k| k > 0.0)) || s.strikes.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::Grid(format!("maturity {i}: strikes must be positive and strictly increasing")));
            }
            if s.calls.iter().any(|c| !c.is_finite()) {
                return Err(Error::Grid(format!("maturity {i}: non-finite price")));
            }
        }
        if slices.windows(2).any(|w| !(w[1].maturity > w[0].maturity)) {
            return Err(Error::Grid("maturities must be strictly increasing".into()));
        }
        Ok(Self { slices })
    }

    /// Call prices of a model on the strikes `F·eᵏ` for each maturity.
    ///
    /// `curve` holds `(maturity, forward, discount)`; `price(i, F, K, D)` is the
    /// model's undiscounted-forward call price for maturity index `i`.
    pub fn from_model(
        curve: &[(f64, f64, f64)],
        ks: &[f64],
        mut price: impl FnMut(usize, f64, f64, f64) -> f64,
    ) -> Result<Self> {
        let slices = curve
            .iter()
            .enumerate()
            .map(|(i, &(maturity, forward, discount))| {
                let strikes: Vec<f64> = ks.iter().map(|k| forward * k.exp()).collect();
                let calls = strikes.iter().map(|&k| price(i, forward, k, discount)).collect();
                GridSlice {
                    maturity,
                    forward,
                    discount,
                    strikes,
                    calls,
                }
            })
            .collect();
        Self::new(slices)
    }

    pub fn slices(&self) -> &[GridSlice] {
        &self.slices
    }

    /// Grid without maturity `index`.
    pub fn without(&self, index: usize) -> Self {
        let mut slices = self.slices.clone();
        slices.remove(index);
        Self { slices }
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let csv_err = |e: csv::Error| Error::Grid(format!("writing grid: {e}"));
        wtr.write_record(["maturity", "strike", "call_price", "forward", "discount"])
            .map_err(csv_err)?;
        for s in &self.slices {
            for (k, c) in s.strikes.iter().zip(&s.calls) {
                wtr.write_record([
                    fmt_num(s.maturity),
                    fmt_num(*k),
                    fmt_num(*c),
                    fmt_num(s.forward),
                    fmt_num(s.discount),
                ])
                .map_err(csv_err)?;
            }
        }
        wtr.flush().map_err(|e| Error::io("<grid>", e))
    }

    /// Rows must be grouped by maturity; forward and discount constant within a group.
    pub fn read_csv(path: &Path, reader: impl Read) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            maturity: f64,
            strike: f64,
            call_price: f64,
            forward: f64,
            discount: f64,
        }
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut slices: Vec<GridSlice> = Vec::new();
        for (i, row) in rdr.deserialize::<Row>().enumerate() {
            let row = row.map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: e.position().map_or(i as u64 + 2, |p| p.line()),
                message: e.to_string(),
            })?;
            match slices.last_mut() {
                Some(s) if s.maturity == row.maturity => {
                    if s.forward != row.forward || s.discount != row.discount {
                        return Err(Error::Grid(format!(
                            "{}: forward/discount change within maturity {}",
                            path.display(),
                            row.maturity
                        )));
                    }
                    s.strikes.push(row.strike);
                    s.calls.push(row.call_price);
                }
                _ => slices.push(GridSlice {
                    maturity: row.maturity,
                    forward: row.forward,
                    discount: row.discount,
                    strikes: vec![row.strike],
                    calls: vec![row.call_price],
                }),
            }
        }
        Self::new(slices)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(path, file)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ArbKind {
    Positivity,
    VerticalSpread,
    VerticalButterfly,
    CalendarSpread,
    CalendarVerticalSpread,
    CalendarButterfly,
}

impl fmt::Display for ArbKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ArbKind,
    pub maturity_index: usize,
    pub strike_index: usize,
    /// Later maturity for the calendar family.
    pub partner_maturity: Option<usize>,
    /// Later-maturity strike index involved, when one grid point is.
    pub partner_strike: Option<usize>,
    /// Amount by which the inequality fails, in currency.
    pub magnitude: f64,
    pub interpolated: bool,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at maturity {} strike {}", self.kind, self.maturity_index, self.strike_index)?;
        if let Some(p) = self.partner_maturity {
            write!(f, " vs maturity {p}")?;
            if let Some(s) = self.partner_strike {
                write!(f, " strike {s}")?;
            }
        }
        write!(f, ": magnitude {}", fmt_num(self.magnitude))?;
        if self.interpolated {
            f.write_str(" (interpolated)")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ArbReport {
    pub violations: Vec<Violation>,
}

impl ArbReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, kind: ArbKind) -> usize {
        self.violations.iter().filter(|v| v.kind == kind).count()
    }

    pub fn to_text(&self) -> String {
        if self.violations.is_empty() {
            return "no static arbitrage detected\n".into();
        }
        self.violations.iter().map(|v| format!("{v}\n")).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Tolerance {
    /// Currency units.
    Absolute(f64),
    /// Multiple of each maturity's forward.
    RelativeToForward(f64),
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance::RelativeToForward(1e-8)
    }
}

impl Tolerance {
    fn currency(&self, forward: f64) -> f64 {
        match *self {
            Tolerance::Absolute(t) => t,
            Tolerance::RelativeToForward(r) => r * forward,
        }
    }
}

struct Normalized {
    scale: f64,
    kappa: Vec<f64>,
    c: Vec<f64>,
    tol: f64,
}

fn normalize(s: &GridSlice, tol: Tolerance) -> Normalized {
    let scale = s.discount * s.forward;
    Normalized {
        scale,
        kappa: s.strikes.iter().map(|k| k / s.forward).collect(),
        c: s.calls.iter().map(|c| c / scale).collect(),
        tol: tol.currency(s.forward) / scale,
    }
}

pub fn detect(grid: &PriceGrid, tol: Tolerance) -> ArbReport {
    let norm: Vec<Normalized> = grid.slices.iter().map(|s| normalize(s, tol)).collect();
    let mut out = Vec::new();
    let mut push = |kind, i, j, partner: Option<(usize, Option<usize>)>, magnitude: f64, interpolated| {
        out.push(Violation {
            kind,
            maturity_index: i,
            strike_index: j,
            partner_maturity: partner.map(|p| p.0),
            partner_strike: partner.and_then(|p| p.1),
            magnitude,
            interpolated,
        })
    };

    for (i, (s, n)) in grid.slices.iter().zip(&norm).enumerate() {
        let abs_tol = tol.currency(s.forward);
        for (j, &c) in s.calls.iter().enumerate() {
            if c < -abs_tol {
                push(ArbKind::Positivity, i, j, None, -c, false);
            }
        }
        for j in 0..n.c.len().saturating_sub(1) {
            let dc = n.c[j + 1] - n.c[j];
            let dk = n.kappa[j + 1] - n.kappa[j];
            if dc > n.tol {
                push(ArbKind::VerticalSpread, i, j, None, dc * n.scale, false);
            } else if dc < -dk - n.tol {
                push(ArbKind::VerticalSpread, i, j, None, (-dk - dc) * n.scale, false);
            }
        }
        for j in 1..n.c.len().saturating_sub(1) {
            let chord = interpolate(n.kappa[j - 1], n.c[j - 1], n.kappa[j + 1], n.c[j + 1], n.kappa[j]);
            let excess = n.c[j] - chord;
            if excess > n.tol {
                push(ArbKind::VerticalButterfly, i, j, None, excess * n.scale, false);
            }
        }
    }

    for i in 0..norm.len() {
        for ip in i + 1..norm.len() {
            let (a, b) = (&norm[i], &norm[ip]);
            let eps = a.tol.max(b.tol);
            // report in the earlier slice's currency
            let scale = a.scale;
            for (j, (&kappa, &c)) in a.kappa.iter().zip(&a.c).enumerate() {
                let above = b.kappa.partition_point(|&x| x < kappa);
                let aligned = [above.checked_sub(1), Some(above)]
                    .into_iter()
                    .flatten()
                    .filter(|&q| q < b.kappa.len())
                    .find(|&q| (b.kappa[q] - kappa).abs() <= ALIGN_TOL * kappa);
                if let Some(q) = aligned {
                    let gap = c - b.c[q];
                    if gap > eps {
                        push(ArbKind::CalendarSpread, i, j, Some((ip, Some(q))), gap * scale, false);
                    }
                    continue;
                }
                // nearest later moneyness strictly below and above
                let lower = above.checked_sub(1);
                let upper = (above < b.kappa.len()).then_some(above);
                if let Some(q) = lower {
                    let gap = c - b.c[q];
                    if gap > eps {
                        push(ArbKind::CalendarVerticalSpread, i, j, Some((ip, Some(q))), gap * scale, false);
                    }
                }
                if let Some(q) = upper {
                    let gap = c - (b.kappa[q] - kappa) - b.c[q];
                    if gap > eps {
                        push(ArbKind::CalendarVerticalSpread, i, j, Some((ip, Some(q))), gap * scale, false);
                    }
                }
                if let (Some(l), Some(u)) = (lower, upper) {
                    let chord = interpolate(b.kappa[l], b.c[l], b.kappa[u], b.c[u], kappa);
                    let gap = c - chord;
                    if gap > eps {
                        push(ArbKind::CalendarButterfly, i, j, Some((ip, None)), gap * scale, true);
                    }
                }
            }
        }
    }

    out.sort_by(|x, y| {
        (x.maturity_index, x.strike_index, x.kind, x.partner_maturity, x.partner_strike).cmp(&(
            y.maturity_index,
            y.strike_index,
            y.kind,
            y.partner_maturity,
            y.partner_strike,
        ))
    });
    ArbReport { violations: out }
}

fn interpolate(x0: f64, y0: f64, x1: f64, y1: f64, x: f64) -> f64 {
    let w = (x1 - x) / (x1 - x0);
    w * y0 + (1.0 - w) * y1
}
