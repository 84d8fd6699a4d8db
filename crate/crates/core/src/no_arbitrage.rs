//! Butterfly and calendar-spread conditions for chains of SSVI slices.
//!
//! A slice `(θ, ρ, ψ)` is butterfly-free when `ψ ≤ min(4/(1+|ρ|), √𝔣(θ,|ρ|))`
//! with `𝔣` either the explicit Gatheral-Jacquier bound `4θ/(1+|ρ|)` or the
//! Martini-Mingone infimum, which is exact but needs a one-dimensional
//! minimization. Two consecutive slices are calendar-free when
//! `θ₂ > θ₁`, `ψ₂ ≥ ψ₁·max((1+ρ₁)/(1+ρ₂), (1−ρ₁)/(1−ρ₂))` and
//! `ψ₂ ≤ (ψ₁/θ₁)·θ₂`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::pricing::SsviSlice;
use crate::{Error, Result};

/// Relative slack on the inclusive (`≤`) clauses: a handful of ulps, enough
/// to absorb rounding when a quantity sits exactly on its bound.
const INCLUSIVE_SLACK: f64 = 8.0 * f64::EPSILON;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ButterflyKind {
    /// Gatheral-Jacquier sufficient bound.
    Gj,
    /// Martini-Mingone necessary and sufficient bound.
    Mm,
}

impl fmt::Display for ButterflyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ButterflyKind::Gj => "gj",
            ButterflyKind::Mm => "mm",
        })
    }
}

impl FromStr for ButterflyKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gj" => Ok(ButterflyKind::Gj),
            "mm" => Ok(ButterflyKind::Mm),
            other => Err(format!("unknown butterfly rule `{other}` (expected gj or mm)")),
        }
    }
}

/// Which butterfly bound to use, plus the discretization of the MM infimum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ButterflyRule {
    pub kind: ButterflyKind,
    pub mm_grid_size: usize,
    pub mm_refine_tol: f64,
}

impl ButterflyRule {
    pub const DEFAULT_MM_GRID: usize = 1024;
    pub const DEFAULT_MM_TOL: f64 = 1e-10;

    pub fn new(kind: ButterflyKind, mm_grid_size: usize, mm_refine_tol: f64) -> Result<Self> {
        if mm_grid_size < 64 {
            return Err(Error::domain(format!(
                "MM grid size must be at least 64, got {mm_grid_size}"
            )));
        }
        if !(mm_refine_tol > 0.0 && mm_refine_tol <= 1e-6) {
            return Err(Error::domain(format!(
                "MM refinement tolerance must lie in (0, 1e-6], got {mm_refine_tol}"
            )));
        }
        Ok(Self {
            kind,
            mm_grid_size,
            mm_refine_tol,
        })
    }

    pub fn gj() -> Self {
        Self::of(ButterflyKind::Gj)
    }

    pub fn mm() -> Self {
        Self::of(ButterflyKind::Mm)
    }

    pub fn of(kind: ButterflyKind) -> Self {
        Self {
            kind,
            mm_grid_size: Self::DEFAULT_MM_GRID,
            mm_refine_tol: Self::DEFAULT_MM_TOL,
        }
    }

    /// Largest butterfly-free `ψ` for a slice with ATM variance `theta`.
    pub fn psi_cap(&self, theta: f64, abs_rho: f64) -> f64 {
        match self.kind {
            ButterflyKind::Gj => gj_psi_cap(theta, abs_rho),
            ButterflyKind::Mm => mm_psi_cap(theta, abs_rho, self),
        }
    }
}

impl Default for ButterflyRule {
    fn default() -> Self {
        Self::gj()
    }
}

/// Lee moment bound `4/(1+|ρ|)`.
#[inline]
pub fn lee_cap(abs_rho: f64) -> f64 {
    4.0 / (1.0 + abs_rho)
}

/// `min(4/(1+|ρ|), √(4θ/(1+|ρ|)))`
pub fn gj_psi_cap(theta: f64, abs_rho: f64) -> f64 {
    lee_cap(abs_rho).min((4.0 * theta / (1.0 + abs_rho)).sqrt())
}

/// Lower end `l₂(|ρ|) = cot(arccos(−|ρ|)/3)` of the MM infimum domain.
pub fn l2_threshold(abs_rho: f64) -> f64 {
    1.0 / ((-abs_rho).acos() / 3.0).tan()
}

/// The auxiliary functions of the MM condition at `(l, |ρ|)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MmAux {
    pub n: f64,
    pub dn: f64,
    pub d2n: f64,
    pub g: f64,
    pub h: f64,
    pub g2: f64,
}

pub fn mm_aux(l: f64, abs_rho: f64) -> MmAux {
    let rho = abs_rho;
    let s = (1.0 - rho * rho).sqrt();
    let r = l.hypot(1.0);
    let n = s + rho * l + r;
    let dn = rho + l / r;
    let d2n = 1.0 / (r * r * r);
    let g = dn / 4.0;
    let h = 1.0 - (l - rho / s) * dn / (2.0 * n);
    let g2 = d2n - dn * dn / (2.0 * n);
    MmAux {
        n,
        dn,
        d2n,
        g,
        h,
        g2,
    }
}

/// `4θ√(1−ρ²)h² / (θ√(1−ρ²)g² − g₂)` at a point `l`.
///
/// Panics when the denominator is not positive: it is positive on
/// `l ≥ l₂(|ρ|)` for every valid `(θ, |ρ|)`, so a failure is a bug.
pub fn mm_bound_expression(theta: f64, abs_rho: f64, l: f64) -> f64 {
    let aux = mm_aux(l, abs_rho);
    let ts = theta * (1.0 - abs_rho * abs_rho).sqrt();
    let denom = ts * aux.g * aux.g - aux.g2;
    assert!(
        denom > 0.0,
        "MM denominator non-positive at l={l}, |rho|={abs_rho}, theta={theta}: {denom}"
    );
    4.0 * ts * aux.h * aux.h / denom
}

/// The MM infimum `𝔣_MM(θ, |ρ|)` over `l > l₂(|ρ|)`.
///
/// The half-line is compactified through `l = l₂ + u/(1−u)`; a uniform scan
/// over `u ∈ [0, 1)` locates the minimum, which golden-section search then
/// refines to `rule.mm_refine_tol` in `u`. The value at `u = 0` is the limit
/// `l → l₂⁺`; the limit `l → ∞` equals `(4/(1+|ρ|))²` and is covered by the
/// Lee term of the cap.
pub fn mm_infimum(theta: f64, abs_rho: f64, rule: &ButterflyRule) -> f64 {
    let l2 = l2_threshold(abs_rho);
    let eval = |u: f64| mm_bound_expression(theta, abs_rho, l2 + u / (1.0 - u));
    let n = rule.mm_grid_size;
    let step = 1.0 / (n + 1) as f64;
    let mut best_j = 0;
    let mut best = f64::INFINITY;
    for j in 0..=n {
        let v = eval(j as f64 * step);
        if v < best {
            best = v;
            best_j = j;
        }
    }
    let lo = best_j.saturating_sub(1) as f64 * step;
    let hi = ((best_j + 1).min(n)) as f64 * step;
    best.min(golden_section_min(eval, lo, hi, rule.mm_refine_tol))
}

/// `min(4/(1+|ρ|), √𝔣_MM(θ,|ρ|))`
pub fn mm_psi_cap(theta: f64, abs_rho: f64, rule: &ButterflyRule) -> f64 {
    lee_cap(abs_rho).min(mm_infimum(theta, abs_rho, rule).sqrt())
}

fn golden_section_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while b - a > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    fc.min(fd)
}

/// Raw SVI parameters of an SSVI slice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SviParams {
    pub a: f64,
    pub b: f64,
    pub rho: f64,
    pub m: f64,
    pub sigma: f64,
}

impl SviParams {
    pub fn from_slice(s: &SsviSlice) -> Self {
        let root = (1.0 - s.rho * s.rho).sqrt();
        Self {
            a: s.theta * (1.0 - s.rho * s.rho) / 2.0,
            b: s.psi / 2.0,
            rho: s.rho,
            m: -s.theta * s.rho / s.psi,
            sigma: s.theta * root / s.psi,
        }
    }

    pub fn total_variance(&self, k: f64) -> f64 {
        let x = k - self.m;
        self.a + self.b * (self.rho * x + x.hypot(self.sigma))
    }

    /// `(θ, φ)` recovered from `(b, ρ, σ)`.
    pub fn theta_phi(&self) -> (f64, f64) {
        let root = (1.0 - self.rho * self.rho).sqrt();
        (2.0 * self.b * self.sigma / root, root / self.sigma)
    }
}

/// Calendar ratio `p = max((1+ρ₁)/(1+ρ₂), (1−ρ₁)/(1−ρ₂)) ≥ 1`.
#[inline]
pub fn calendar_ratio(rho1: f64, rho2: f64) -> f64 {
    ((1.0 + rho1) / (1.0 + rho2)).max((1.0 - rho1) / (1.0 - rho2))
}

/// The clause of the calendar conditions that a pair of slices broke.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "clause", rename_all = "snake_case")]
pub enum CalendarFailure {
    /// `θ₂ > θ₁` fails.
    ThetaNotIncreasing { theta1: f64, theta2: f64 },
    /// `ψ₂ ≥ ψ₁·p` fails.
    PsiBelowRatioBound { psi2: f64, bound: f64 },
    /// `ψ₂ ≤ (ψ₁/θ₁)·θ₂` fails.
    PsiAboveSlopeBound { psi2: f64, bound: f64 },
}

impl fmt::Display for CalendarFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CalendarFailure::ThetaNotIncreasing { theta1, theta2 } => {
                write!(f, "theta not increasing: {theta1} -> {theta2}")
            }
            CalendarFailure::PsiBelowRatioBound { psi2, bound } => {
                write!(f, "psi {psi2} below calendar lower bound {bound}")
            }
            CalendarFailure::PsiAboveSlopeBound { psi2, bound } => {
                write!(f, "psi {psi2} above calendar upper bound {bound}")
            }
        }
    }
}

/// Calendar-spread conditions between an earlier slice `s1` and a later `s2`.
///
/// Clauses are tested in order (θ, lower ψ bound, upper ψ bound) and the
/// first failing one is reported.
pub fn calendar_check(s1: &SsviSlice, s2: &SsviSlice) -> std::result::Result<(), CalendarFailure> {
    if !(s2.theta > s1.theta) {
        return Err(CalendarFailure::ThetaNotIncreasing {
            theta1: s1.theta,
            theta2: s2.theta,
        });
    }
    let lower = s1.psi * calendar_ratio(s1.rho, s2.rho);
    if !(s2.psi >= lower) {
        return Err(CalendarFailure::PsiBelowRatioBound {
            psi2: s2.psi,
            bound: lower,
        });
    }
    let upper = s1.psi / s1.theta * s2.theta;
    if !(s2.psi <= upper * (1.0 + INCLUSIVE_SLACK)) {
        return Err(CalendarFailure::PsiAboveSlopeBound {
            psi2: s2.psi,
            bound: upper,
        });
    }
    Ok(())
}

/// Whether `psi` respects the butterfly cap of `rule` at `(theta, rho)`.
pub fn butterfly_ok(slice: &SsviSlice, rule: &ButterflyRule) -> bool {
    slice.psi <= rule.psi_cap(slice.theta, slice.rho.abs()) * (1.0 + INCLUSIVE_SLACK)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SurfaceFailure {
    MaturityOrder { index: usize },
    Butterfly { index: usize, psi: f64, cap: f64 },
    Calendar { first: usize, second: usize, failure: CalendarFailure },
}

impl fmt::Display for SurfaceFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SurfaceFailure::MaturityOrder { index } => {
                write!(f, "slice {index}: maturity not after previous slice")
            }
            SurfaceFailure::Butterfly { index, psi, cap } => {
                write!(f, "slice {index}: psi {psi} exceeds butterfly cap {cap}")
            }
            SurfaceFailure::Calendar {
                first,
                second,
                failure,
            } => write!(f, "slices {first}/{second}: {failure}"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SurfaceReport {
    pub failures: Vec<SurfaceFailure>,
}

impl SurfaceReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Full arbitrage audit of an ordered chain of slices: each butterfly cap and
/// every adjacent calendar pair.
pub fn surface_check(slices: &[SsviSlice], rule: &ButterflyRule) -> SurfaceReport {
    let mut failures = Vec::new();
    for (i, s) in slices.iter().enumerate() {
        if i > 0 && !(s.maturity > slices[i - 1].maturity) {
            failures.push(SurfaceFailure::MaturityOrder { index: i });
        }
        if !butterfly_ok(s, rule) {
            failures.push(SurfaceFailure::Butterfly {
                index: i,
                psi: s.psi,
                cap: rule.psi_cap(s.theta, s.rho.abs()),
            });
        }
    }
    for (i, pair) in slices.windows(2).enumerate() {
        if let Err(failure) = calendar_check(&pair[0], &pair[1]) {
            failures.push(SurfaceFailure::Calendar {
                first: i,
                second: i + 1,
                failure,
            });
        }
    }
    SurfaceReport { failures }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn slice(theta: f64, rho: f64, psi: f64, maturity: f64) -> SsviSlice {
        SsviSlice::new(theta, rho, psi, maturity).unwrap()
    }

    #[test]
    fn gj_cap_values() {
        assert_eq!(gj_psi_cap(1.0, 0.0), 2.0);
        assert_eq!(gj_psi_cap(4.0, 0.0), 4.0);
        assert_relative_eq!(gj_psi_cap(0.04, 0.5), 0.326_598_632_371_090_4, max_relative = 1e-15);
    }

    #[test]
    fn gj_cap_monotonicity() {
        for i in 0..30 {
            let theta = 1e-3 + i as f64 * 0.2;
            for j in 0..30 {
                let r = j as f64 * 0.033;
                let c = gj_psi_cap(theta, r);
                assert!(gj_psi_cap(theta + 0.1, r) >= c);
                assert!(gj_psi_cap(theta, r + 0.01) <= c);
            }
        }
    }

    #[test]
    fn l2_closed_forms() {
        assert!((l2_threshold(0.0) - 3f64.sqrt()).abs() < 1e-12);
        assert!((l2_threshold(1.0 - 1e-15) - 1.0 / 3f64.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn l2_decreases_toward_inverse_sqrt3() {
        // arccos(-|ρ|) grows with |ρ|, so the cotangent falls from √3 to 1/√3
        let mut prev = f64::INFINITY;
        for j in 0..=99 {
            let v = l2_threshold(j as f64 * 0.01);
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn aux_functions_at_origin() {
        let a = mm_aux(0.0, 0.0);
        assert_eq!(a.n, 2.0);
        assert_eq!(a.dn, 0.0);
        assert_eq!(a.g, 0.0);
        assert_eq!(a.h, 1.0);
    }

    #[test]
    fn g2_vanishes_at_l2_and_is_negative_beyond() {
        for &r in &[0.0, 0.3, 0.7, 0.95] {
            let l2 = l2_threshold(r);
            assert!(mm_aux(l2, r).g2.abs() < 1e-14, "r={r}");
            for j in 1..200 {
                let l = l2 + j as f64 * 0.25;
                assert!(mm_aux(l, r).g2 < 0.0);
            }
        }
    }

    #[test]
    fn mm_cap_matches_dense_grid_oracle() {
        // brute-force infimum over 10⁵ compactified points with central
        // finite-difference derivatives of N, computed offline
        let cases = [
            (0.04, 0.0, 0.876_248_266_497),
            (0.04, 0.5, 0.623_406_908_695),
            (1.0, 0.3, 2.639_159_94),
            (0.2, 0.9, 0.981_515_656_798),
        ];
        let rule = ButterflyRule::mm();
        for (theta, r, oracle) in cases {
            assert_relative_eq!(mm_psi_cap(theta, r, &rule), oracle, max_relative = 1e-7);
        }
    }

    #[test]
    fn mm_cap_dominates_gj() {
        for i in 0..20 {
            let theta = 1e-3 + (1.0 - 1e-3) * i as f64 / 19.0;
            for j in 0..20 {
                let r = 0.95 * j as f64 / 19.0;
                let mm = mm_psi_cap(theta, r, &ButterflyRule::mm());
                let gj = gj_psi_cap(theta, r);
                assert!(mm >= gj, "theta={theta} rho={r}: mm={mm} gj={gj}");
            }
        }
    }

    #[test]
    fn mm_cap_is_tight_svi_condition() {
        // at ψ = cap (when the infimum binds) the SVI form of the condition,
        // σ ≥ −b g₂ / (2(h² − b²g²)), holds with equality at the argmin
        let theta = 0.04;
        let rule = ButterflyRule::mm();
        let psi = mm_psi_cap(theta, 0.0, &rule);
        assert!(psi < lee_cap(0.0));
        let svi = SviParams::from_slice(&slice(theta, 0.0, psi, 1.0));
        let l2 = l2_threshold(0.0);
        let mut worst = f64::INFINITY;
        for j in 1..200_000 {
            let l = l2 + j as f64 * 1e-4;
            let a = mm_aux(l, 0.0);
            let need = -svi.b * a.g2 / (2.0 * (a.h * a.h - svi.b * svi.b * a.g * a.g));
            worst = worst.min(svi.sigma - need);
        }
        assert!(worst.abs() < 1e-9 * svi.sigma, "slack {worst}");
    }

    #[test]
    fn svi_mapping_reproduces_ssvi() {
        let s = slice(0.09, -0.35, 0.4, 1.0);
        let svi = SviParams::from_slice(&s);
        assert_relative_eq!(svi.b, s.psi / 2.0);
        for &k in &[-1.0, -0.2, 0.0, 0.4, 2.0] {
            assert_relative_eq!(svi.total_variance(k), s.total_variance(k), max_relative = 1e-14);
        }
        let (theta, phi) = svi.theta_phi();
        assert_relative_eq!(theta, s.theta, max_relative = 1e-14);
        assert_relative_eq!(phi, s.phi(), max_relative = 1e-14);
    }

    #[test]
    fn rule_validation() {
        assert!(ButterflyRule::new(ButterflyKind::Mm, 63, 1e-10).is_err());
        assert!(ButterflyRule::new(ButterflyKind::Mm, 64, 1e-5).is_err());
        assert!(ButterflyRule::new(ButterflyKind::Mm, 64, 0.0).is_err());
        assert!(ButterflyRule::new(ButterflyKind::Mm, 64, 1e-6).is_ok());
    }

    #[test]
    fn calendar_examples() {
        let s = slice(0.01, 0.0, 0.1, 0.5);
        assert!(matches!(
            calendar_check(&s, &s),
            Err(CalendarFailure::ThetaNotIncreasing { .. })
        ));

        let s1 = slice(0.01, 0.0, 0.1, 0.5);
        let s2 = slice(0.02, 0.0, 0.15, 1.0);
        assert_eq!(calendar_check(&s1, &s2), Ok(()));

        let s2 = slice(0.02, 0.9, 0.101, 1.0);
        match calendar_check(&s1, &s2) {
            Err(CalendarFailure::PsiBelowRatioBound { bound, .. }) => {
                assert_relative_eq!(bound, 1.0, max_relative = 1e-15)
            }
            other => panic!("unexpected {other:?}"),
        }

        let s2 = slice(0.02, 0.0, 0.2000001, 1.0);
        assert!(matches!(
            calendar_check(&s1, &s2),
            Err(CalendarFailure::PsiAboveSlopeBound { .. })
        ));
    }

    #[test]
    fn calendar_swap_fails_theta_clause() {
        let s1 = slice(0.01, -0.2, 0.1, 0.5);
        let s2 = slice(0.02, -0.25, 0.15, 1.0);
        assert!(calendar_check(&s1, &s2).is_ok());
        assert!(matches!(
            calendar_check(&s2, &s1),
            Err(CalendarFailure::ThetaNotIncreasing { .. })
        ));
    }

    #[test]
    fn butterfly_cap_is_inclusive() {
        let theta = 0.04;
        let cap = gj_psi_cap(theta, 0.3);
        let rule = ButterflyRule::gj();
        assert!(surface_check(&[slice(theta, 0.3, cap, 1.0)], &rule).passed());
        let over = slice(theta, 0.3, cap * (1.0 + 1e-9), 1.0);
        let report = surface_check(&[over], &rule);
        assert!(matches!(report.failures[..], [SurfaceFailure::Butterfly { index: 0, .. }]));
    }

    #[test]
    fn surface_check_names_failing_pair() {
        let rule = ButterflyRule::gj();
        let slices = [
            slice(0.01, 0.0, 0.1, 0.25),
            slice(0.02, 0.0, 0.15, 0.5),
            slice(0.015, 0.0, 0.16, 1.0),
        ];
        let report = surface_check(&slices, &rule);
        assert_eq!(
            report.failures,
            vec![SurfaceFailure::Calendar {
                first: 1,
                second: 2,
                failure: CalendarFailure::ThetaNotIncreasing {
                    theta1: 0.02,
                    theta2: 0.015
                }
            }]
        );
    }

    #[test]
    fn surface_check_flags_maturity_order() {
        let rule = ButterflyRule::gj();
        let slices = [slice(0.01, 0.0, 0.1, 0.5), slice(0.02, 0.0, 0.15, 0.5)];
        let report = surface_check(&slices, &rule);
        assert!(report.failures.contains(&SurfaceFailure::MaturityOrder { index: 1 }));
    }
}
