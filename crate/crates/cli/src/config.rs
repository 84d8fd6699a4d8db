//! Run configuration: a flat TOML file overlaid by command-line flags.
//!
//! Recognized keys (all optional, flags of the same name win):
//!
//! ```toml
//! data = "fixture"          # directory holding quotes.csv, curve.csv, meta.toml
//! quotes = "quotes.csv"
//! curve = "curve.csv"
//! meta = "meta.toml"
//! out = "out"
//! rule = "gj"               # gj | mm
//! weights = "uniform"       # uniform | ivega2
//! a_upper = 0.05
//! rho_bound = 0.95
//! max_evals = 1000
//! n_cpt = 6
//! k_min = -1.5
//! k_max = 1.5
//! k_points = 61
//! tol = 1e-8                # arbitrage tolerance, multiple of the forward
//! ```
//!
//! Relative paths in the file are taken relative to the file itself.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::Args;
use essvi::arb_detector::Tolerance;
use essvi::calibration::{CalibConfig, WeightScheme};
use essvi::cpt::CptConfig;
use essvi::{ButterflyKind, ButterflyRule};
use serde::Deserialize;

#[derive(Debug, Clone, Default, PartialEq, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Directory with quotes.csv, curve.csv and meta.toml
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Quote/trade CSV (overrides <data>/quotes.csv)
    #[arg(long)]
    pub quotes: Option<PathBuf>,
    /// Forward/discount curve CSV (overrides <data>/curve.csv)
    #[arg(long)]
    pub curve: Option<PathBuf>,
    /// Snapshot metadata TOML (overrides <data>/meta.toml)
    #[arg(long)]
    pub meta: Option<PathBuf>,
    /// Output directory [default: out]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Butterfly rule: gj or mm [default: gj]
    #[arg(long)]
    pub rule: Option<ButterflyKind>,
    /// Calibration weights: uniform or ivega2 [default: uniform]
    #[arg(long)]
    pub weights: Option<WeightScheme>,
    /// Initial upper bound for the θ increments a₂..a_N
    #[arg(long)]
    pub a_upper: Option<f64>,
    /// Bound on |ρ|
    #[arg(long)]
    pub rho_bound: Option<f64>,
    /// Residual-evaluation budget
    #[arg(long)]
    pub max_evals: Option<usize>,
    /// Number of positive CPT nodes
    #[arg(long)]
    pub n_cpt: Option<usize>,
    /// Lower end of the log-moneyness grid for smiles and price grids
    #[arg(long, allow_negative_numbers = true)]
    pub k_min: Option<f64>,
    /// Upper end of the log-moneyness grid
    #[arg(long, allow_negative_numbers = true)]
    pub k_max: Option<f64>,
    /// Number of log-moneyness points
    #[arg(long)]
    pub k_points: Option<usize>,
    /// Arbitrage tolerance as a multiple of the forward
    #[arg(long)]
    pub tol: Option<f64>,
}

macro_rules! overlay {
    ($hi:expr, $lo:expr, $($f:ident),*) => {
        RunConfig { $($f: $hi.$f.or($lo.$f)),* }
    };
}

impl RunConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let mut cfg = Self::from_toml(&text).with_context(|| format!("config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.data, &mut cfg.quotes, &mut cfg.curve, &mut cfg.meta, &mut cfg.out]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// `self` with gaps filled from `file`.
    pub fn over(self, file: RunConfig) -> Self {
        overlay!(
            self, file, data, quotes, curve, meta, out, rule, weights, a_upper, rho_bound, max_evals, n_cpt, k_min,
            k_max, k_points, tol
        )
    }

    fn input(&self, explicit: &Option<PathBuf>, default_name: &str, what: &str) -> anyhow::Result<PathBuf> {
        match (explicit, &self.data) {
            (Some(p), _) => Ok(p.clone()),
            (None, Some(d)) => Ok(d.join(default_name)),
            (None, None) => bail!("no {what} file: pass --{what} or --data"),
        }
    }

    /// `(quotes, curve, meta)` paths.
    pub fn snapshot_paths(&self) -> anyhow::Result<(PathBuf, PathBuf, PathBuf)> {
        Ok((
            self.input(&self.quotes, "quotes.csv", "quotes")?,
            self.input(&self.curve, "curve.csv", "curve")?,
            self.input(&self.meta, "meta.toml", "meta")?,
        ))
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn rule(&self) -> ButterflyRule {
        ButterflyRule::of(self.rule.unwrap_or(ButterflyKind::Gj))
    }

    pub fn calib_config(&self) -> anyhow::Result<CalibConfig> {
        let d = CalibConfig::default();
        let cfg = CalibConfig {
            weights: self.weights.unwrap_or(d.weights),
            rule: self.rule(),
            a_upper: self.a_upper.unwrap_or(d.a_upper),
            rho_bound: self.rho_bound.unwrap_or(d.rho_bound),
            max_evals: self.max_evals.unwrap_or(d.max_evals),
            ..d
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn cpt_config(&self) -> CptConfig {
        let d = CptConfig::default();
        CptConfig {
            n_cpt: self.n_cpt.unwrap_or(d.n_cpt),
            weights: self.weights.unwrap_or(d.weights),
            max_evals: self.max_evals.unwrap_or(d.max_evals),
            ..d
        }
    }

    /// Log-moneyness grid used for smiles and price grids.
    pub fn k_grid(&self) -> anyhow::Result<Vec<f64>> {
        let (lo, hi, n) = (self.k_min.unwrap_or(-1.5), self.k_max.unwrap_or(1.5), self.k_points.unwrap_or(61));
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            bail!("k-range must be finite with k_min < k_max, got [{lo}, {hi}]");
        }
        if n < 2 {
            bail!("k_points must be at least 2, got {n}");
        }
        Ok((0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect())
    }

    pub fn tolerance(&self) -> anyhow::Result<Tolerance> {
        match self.tol {
            None => Ok(Tolerance::default()),
            Some(t) if t >= 0.0 && t.is_finite() => Ok(Tolerance::RelativeToForward(t)),
            Some(t) => bail!("tol must be a non-negative number, got {t}"),
        }
    }
}
