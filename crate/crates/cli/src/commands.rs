use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use essvi::arb_detector::{detect, ArbReport, PriceGrid, Tolerance};
use essvi::calibration::{calibrate, Basket, WeightScheme};
use essvi::cpt::{cpt_calibrate, CptDocument, CptModel};
use essvi::format::{fmt_num, fmt_opt};
use essvi::global_param::to_slices;
use essvi::market_data::MarketSnapshot;
use essvi::pricing::{bs_price, implied_total_variance};
use essvi::term_structure::SurfaceCurve;
use essvi::{OptionKind, ParamsDocument, SsviSlice};

use crate::config::RunConfig;

/// How a successful run ended; errors are reported separately.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    /// Converged and no arbitrage found.
    Clean,
    /// Not converged, or arbitrage found.
    Flagged,
}

impl Status {
    fn from(ok: bool) -> Self {
        if ok {
            Status::Clean
        } else {
            Status::Flagged
        }
    }

    pub fn exit_code(self) -> u8 {
        match self {
            Status::Clean => 0,
            Status::Flagged => 2,
        }
    }
}

pub fn load_snapshot(cfg: &RunConfig) -> anyhow::Result<MarketSnapshot> {
    let (quotes, curve, meta) = cfg.snapshot_paths()?;
    // check up front so the message names the missing file
    for p in [&quotes, &curve, &meta] {
        if !p.is_file() {
            bail!("input file not found: {}", p.display());
        }
    }
    Ok(MarketSnapshot::load(&quotes, &curve, &meta)?)
}

fn create(dir: &Path, name: &str) -> anyhow::Result<(PathBuf, fs::File)> {
    let path = dir.join(name);
    let file = fs::File::create(&path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok((path, file))
}

fn write_text(dir: &Path, name: &str, text: &str) -> anyhow::Result<()> {
    let (path, mut f) = create(dir, name)?;
    f.write_all(text.as_bytes()).with_context(|| format!("writing {}", path.display()))
}

fn out_dir(cfg: &RunConfig) -> anyhow::Result<PathBuf> {
    let dir = cfg.out_dir();
    fs::create_dir_all(&dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
    Ok(dir)
}

/// `(maturity, forward, discount)` at the close for each maturity.
fn close_curve(snapshot: &MarketSnapshot, maturities: &[f64]) -> anyhow::Result<Vec<(f64, f64, f64)>> {
    maturities
        .iter()
        .map(|&t| {
            let cp = snapshot
                .curve_point(t)
                .with_context(|| format!("no curve point for maturity {t}"))?;
            Ok((t, cp.forward_close, cp.discount_close))
        })
        .collect()
}

/// Call prices of eSSVI slices on the strikes `F·eᵏ`.
pub fn essvi_grid(slices: &[SsviSlice], curve: &[(f64, f64, f64)], ks: &[f64]) -> anyhow::Result<PriceGrid> {
    Ok(PriceGrid::from_model(curve, ks, |i, f, k, d| {
        let w = slices[i].total_variance((k / f).ln());
        bs_price(OptionKind::Call, f, k, d, w).unwrap_or(f64::NAN)
    })?)
}

fn write_smiles(dir: &Path, slices: &[SsviSlice], ks: &[f64]) -> anyhow::Result<()> {
    let mut s = String::from("maturity,k,total_variance,implied_vol\n");
    for sl in slices {
        for &k in ks {
            let w = sl.total_variance(k);
            s += &format!("{},{},{},{}\n", fmt_num(sl.maturity), fmt_num(k), fmt_num(w), fmt_num((w / sl.maturity).sqrt()));
        }
    }
    write_text(dir, "smiles.csv", &s)
}

fn write_grid_and_report(dir: &Path, prefix: &str, grid: &PriceGrid, tol: Tolerance) -> anyhow::Result<ArbReport> {
    let (path, f) = create(dir, &format!("{prefix}price_grid.csv"))?;
    grid.write_csv(f).with_context(|| format!("writing {}", path.display()))?;
    let report = detect(grid, tol);
    write_text(dir, &format!("{prefix}arb_report.json"), &(report.to_json()? + "\n"))?;
    Ok(report)
}

pub fn run_calibrate(cfg: &RunConfig) -> anyhow::Result<Status> {
    let calib = cfg.calib_config()?;
    let ks = cfg.k_grid()?;
    let tol = cfg.tolerance()?;
    let snapshot = load_snapshot(cfg)?;
    let res = calibrate(&snapshot, &calib)?;
    let dir = out_dir(cfg)?;

    let doc = ParamsDocument::new(&res.params, calib.rule.kind);
    write_text(&dir, "params.json", &(doc.to_json()? + "\n"))?;
    let (path, f) = create(&dir, "residuals.csv")?;
    res.write_residuals(f).with_context(|| format!("writing {}", path.display()))?;
    write_smiles(&dir, &res.slices, &ks)?;
    let curve = close_curve(&snapshot, &res.params.maturities)?;
    let grid = essvi_grid(&res.slices, &curve, &ks)?;
    let report = write_grid_and_report(&dir, "", &grid, tol)?;

    println!(
        "eSSVI ({} rule): objective {:.9e} after {} evaluations, {} ({:?})",
        calib.rule.kind,
        res.objective_value,
        res.evals_used,
        if res.converged { "converged" } else { "not converged" },
        res.termination
    );
    print!("{}", report.to_text());
    println!("artifacts written to {}", dir.display());
    Ok(Status::from(res.converged && report.is_clean()))
}

fn cpt_grid(model: &CptModel, curve: &[(f64, f64, f64)], ks: &[f64]) -> anyhow::Result<PriceGrid> {
    Ok(PriceGrid::from_model(curve, ks, |i, f, k, d| {
        model.price(OptionKind::Call, f, k, d, curve[i].0)
    })?)
}

pub fn run_cpt_calibrate(cfg: &RunConfig) -> anyhow::Result<Status> {
    let ccfg = cfg.cpt_config();
    let ks = cfg.k_grid()?;
    let tol = cfg.tolerance()?;
    let snapshot = load_snapshot(cfg)?;
    let fit = cpt_calibrate(&snapshot, &ccfg)?;
    let dir = out_dir(cfg)?;

    write_text(&dir, "cpt_params.json", &(CptDocument::new(&fit.model).to_json()? + "\n"))?;
    let (path, f) = create(&dir, "cpt_residuals.csv")?;
    essvi::calibration::write_residuals(&fit.residuals, f).with_context(|| format!("writing {}", path.display()))?;
    let curve = close_curve(&snapshot, fit.model.tau.maturities())?;

    let mut s = String::from("maturity,k,total_variance,implied_vol\n");
    for &(t, f, d) in &curve {
        for &k in &ks {
            let strike = f * k.exp();
            let c = fit.model.price(OptionKind::Call, f, strike, d, t);
            let w = implied_total_variance(OptionKind::Call, f, strike, d, c).ok();
            s += &format!("{},{},{},{}\n", fmt_num(t), fmt_num(k), fmt_opt(w), fmt_opt(w.map(|w| (w / t).sqrt())));
        }
    }
    write_text(&dir, "cpt_smiles.csv", &s)?;
    let grid = cpt_grid(&fit.model, &curve, &ks)?;
    let report = write_grid_and_report(&dir, "cpt_", &grid, tol)?;

    println!(
        "CPT (n_cpt = {}, {} parameters): objective {:.9e} after {} evaluations, {} ({:?})",
        ccfg.n_cpt,
        fit.n_params,
        fit.objective_value,
        fit.evals_used,
        if fit.converged { "converged" } else { "not converged" },
        fit.termination
    );
    print!("{}", report.to_text());
    println!("artifacts written to {}", dir.display());
    Ok(Status::from(fit.converged && report.is_clean()))
}

fn read_params(path: &Path) -> anyhow::Result<ParamsDocument> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    ParamsDocument::from_json(&text).with_context(|| format!("parameter document {}", path.display()))
}

fn read_cpt(path: &Path) -> anyhow::Result<CptModel> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let doc = CptDocument::from_json(&text).with_context(|| format!("CPT document {}", path.display()))?;
    Ok(doc.model()?)
}

/// Slices and smiles at arbitrary maturities from a parameter document.
pub fn run_slice(cfg: &RunConfig, params: &Path, ts: &[f64], right_slope: Option<f64>) -> anyhow::Result<String> {
    let ks = cfg.k_grid()?;
    let doc = read_params(params)?;
    let rule = doc.butterfly_rule();
    let (slices, _) = to_slices(&doc.params()?, &rule);
    let mut curve = SurfaceCurve::new(slices, &rule)?;
    if let Some(s) = right_slope {
        curve = curve.with_right_slope(s)?;
    }
    let mut out = String::from("maturity,theta,rho,psi,k,total_variance,implied_vol\n");
    for &t in ts {
        let s = curve.slice_at(t)?;
        for &k in &ks {
            let w = curve.total_variance_at(t, k)?;
            out += &format!(
                "{},{},{},{},{},{},{}\n",
                fmt_num(t),
                fmt_num(s.theta),
                fmt_num(s.rho),
                fmt_num(s.psi),
                fmt_num(k),
                fmt_num(w),
                fmt_num((w / t).sqrt())
            );
        }
    }
    if cfg.out.is_some() {
        write_text(&out_dir(cfg)?, "slices.csv", &out)?;
    }
    Ok(out)
}

pub fn run_check_arb(cfg: &RunConfig, grid: &Path, abs_tol: Option<f64>) -> anyhow::Result<Status> {
    let tol = match abs_tol {
        Some(t) if t >= 0.0 && t.is_finite() => Tolerance::Absolute(t),
        Some(t) => bail!("abs-tol must be a non-negative number, got {t}"),
        None => cfg.tolerance()?,
    };
    if !grid.is_file() {
        bail!("input file not found: {}", grid.display());
    }
    let grid = PriceGrid::load(grid)?;
    let report = detect(&grid, tol);
    print!("{}", report.to_text());
    if cfg.out.is_some() {
        write_text(&out_dir(cfg)?, "arb_report.json", &(report.to_json()? + "\n"))?;
    }
    Ok(Status::from(report.is_clean()))
}

/// Pricing error in basis points of the forward.
pub fn bp_error(model: f64, market: f64, forward: f64) -> f64 {
    1e4 * (model - market).abs() / forward
}

/// One option of the comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub maturity: f64,
    pub strike: f64,
    pub kind: OptionKind,
    pub forward: f64,
    pub market: f64,
    pub bid: Option<f64>,
    pub ask: Option<f64>,
    /// `(price, bp error, inside bid-ask)` per model, in column order.
    pub models: Vec<(f64, f64, Option<bool>)>,
}

fn same_maturities(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-12 * x.abs().max(1.0))
}

/// Comparison rows for the OTM basket of `snapshot`.
pub fn report_rows(
    snapshot: &MarketSnapshot,
    essvi: Option<&ParamsDocument>,
    cpt: Option<&CptModel>,
) -> anyhow::Result<Vec<ReportRow>> {
    let basket = Basket::from_snapshot(snapshot, WeightScheme::Uniform)?;
    let slices = match essvi {
        Some(doc) => {
            let gp = doc.params()?;
            if !same_maturities(&gp.maturities, &basket.maturities) {
                bail!(
                    "eSSVI parameters have maturities {:?} but the snapshot has {:?}",
                    gp.maturities,
                    basket.maturities
                );
            }
            Some(to_slices(&gp, &doc.butterfly_rule()).0)
        }
        None => None,
    };
    if let Some(m) = cpt {
        if !same_maturities(m.tau.maturities(), &basket.maturities) {
            bail!(
                "CPT parameters have maturities {:?} but the snapshot has {:?}",
                m.tau.maturities(),
                basket.maturities
            );
        }
    }
    Ok(basket
        .options
        .iter()
        .map(|o| {
            let market = o.option.price;
            let mut models = Vec::new();
            let mut push = |p: f64| models.push((p, bp_error(p, market, o.forward), o.option.inside_band(p)));
            if let Some(s) = &slices {
                push(basket.model_price(o, s));
            }
            if let Some(m) = cpt {
                push(m.price(o.option.kind, o.forward, o.option.strike, o.discount, o.option.maturity));
            }
            ReportRow {
                maturity: o.option.maturity,
                strike: o.option.strike,
                kind: o.option.kind,
                forward: o.forward,
                market,
                bid: o.option.bid,
                ask: o.option.ask,
                models,
            }
        })
        .collect())
}

pub fn format_report(rows: &[ReportRow], names: &[&str]) -> String {
    let mut s = String::from("maturity,strike,kind,forward,market_price,bid,ask");
    for n in names {
        s += &format!(",{n}_price,{n}_bp,{n}_inside_bid_ask");
    }
    s.push('\n');
    for r in rows {
        s += &format!(
            "{},{},{},{},{},{},{}",
            fmt_num(r.maturity),
            fmt_num(r.strike),
            r.kind,
            fmt_num(r.forward),
            fmt_num(r.market),
            fmt_opt(r.bid),
            fmt_opt(r.ask)
        );
        for (p, bp, inside) in &r.models {
            s += &format!(",{},{},{}", fmt_num(*p), fmt_num(*bp), inside.map(|b| b.to_string()).unwrap_or_default());
        }
        s.push('\n');
    }
    s
}

pub fn run_report(cfg: &RunConfig, essvi: Option<&Path>, cpt: Option<&Path>) -> anyhow::Result<Status> {
    if essvi.is_none() && cpt.is_none() {
        bail!("report needs --essvi and/or --cpt");
    }
    let snapshot = load_snapshot(cfg)?;
    let doc = essvi.map(read_params).transpose()?;
    let model = cpt.map(read_cpt).transpose()?;
    let rows = report_rows(&snapshot, doc.as_ref(), model.as_ref())?;
    let mut names = Vec::new();
    if doc.is_some() {
        names.push("essvi");
    }
    if model.is_some() {
        names.push("cpt");
    }
    let text = format_report(&rows, &names);
    let dir = out_dir(cfg)?;
    write_text(&dir, "report.csv", &text)?;
    for (i, n) in names.iter().enumerate() {
        let max_bp = rows.iter().map(|r| r.models[i].1).fold(0.0, f64::max);
        let outside = rows.iter().filter(|r| r.models[i].2 == Some(false)).count();
        println!("{n}: max error {} bp, {outside} of {} options outside bid-ask", fmt_num(max_bp), rows.len());
    }
    println!("report written to {}", dir.join("report.csv").display());
    Ok(Status::Clean)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bp_of_forward() {
        assert!((bp_error(100.5, 100.0, 1000.0) - 5.0).abs() < 1e-12);
        assert_eq!(bp_error(3.0, 3.0, 100.0), 0.0);
    }
}
