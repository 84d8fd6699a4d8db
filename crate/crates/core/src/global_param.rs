//! Box-domain parametrization of arbitrage-free eSSVI surfaces.
//!
//! For `N` maturities the coordinates are
//! `(ρ₁..ρ_N, θ₁, a₂..a_N, c₁..c_N) ∈ (−1,1)ᴺ × (0,∞)ᴺ × (0,1)ᴺ`. The slices
//! follow from the ordered relations
//!
//! ```text
//! p_i   = max((1+ρ_{i-1})/(1+ρ_i), (1-ρ_{i-1})/(1-ρ_i))
//! θ_i   = θ_{i-1} p_i + a_i
//! f_i   = min(4/(1+|ρ_i|), √𝔣(θ_i, |ρ_i|))
//! A_1   = 0,              A_i = ψ_{i-1} p_i
//! C_1   = min(f_1, f_2/p_2, …, f_N/∏p),
//! C_i   = min(ψ_{i-1} θ_i/θ_{i-1}, f_i, f_{i+1}/p_{i+1}, …)
//! ψ_i   = c_i (C_i − A_i) + A_i
//! ```
//!
//! and any point of the box yields slices that pass
//! [`surface_check`](crate::no_arbitrage::surface_check).

use serde::{Deserialize, Serialize};

use crate::no_arbitrage::{calendar_ratio, ButterflyKind, ButterflyRule};
use crate::pricing::SsviSlice;
use crate::{Error, Result};

/// Width below which `C_ψ − A_ψ` is treated as collapsed.
pub const DEGENERATE_WIDTH: f64 = 1e-30;

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalParams {
    pub maturities: Vec<f64>,
    pub rhos: Vec<f64>,
    pub theta1: f64,
    /// `a₂..a_N`
    pub a: Vec<f64>,
    pub c: Vec<f64>,
}

impl GlobalParams {
    pub fn new(
        maturities: Vec<f64>,
        rhos: Vec<f64>,
        theta1: f64,
        a: Vec<f64>,
        c: Vec<f64>,
    ) -> Result<Self> {
        let gp = Self {
            maturities,
            rhos,
            theta1,
            a,
            c,
        };
        gp.validate()?;
        Ok(gp)
    }

    pub fn len(&self) -> usize {
        self.maturities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maturities.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.maturities.len();
        if n == 0 {
            return Err(Error::domain("global parameters need at least one maturity"));
        }
        if self.rhos.len() != n || self.c.len() != n || self.a.len() + 1 != n {
            return Err(Error::domain(format!(
                "inconsistent lengths: {n} maturities, {} rhos, {} a, {} c",
                self.rhos.len(),
                self.a.len(),
                self.c.len()
            )));
        }
        if !(self.maturities[0] > 0.0) || self.maturities.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::domain("maturities must be positive and strictly increasing"));
        }
        if let Some(r) = self.rhos.iter().find(|r| !(r.abs() < 1.0)) {
            return Err(Error::domain(format!("rho {r} outside (-1, 1)")));
        }
        if !(self.theta1 > 0.0 && self.theta1.is_finite()) {
            return Err(Error::domain(format!("theta1 {} must be positive", self.theta1)));
        }
        if let Some(a) = self.a.iter().find(|a| !(**a > 0.0 && a.is_finite())) {
            return Err(Error::domain(format!("a {a} must be positive")));
        }
        if let Some(c) = self.c.iter().find(|c| !(**c > 0.0 && **c < 1.0)) {
            return Err(Error::domain(format!("c {c} outside (0, 1)")));
        }
        Ok(())
    }

    /// Flatten as `[ρ₁..ρ_N, θ₁, a₂..a_N, c₁..c_N]`.
    pub fn to_vector(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(3 * self.len());
        v.extend_from_slice(&self.rhos);
        v.push(self.theta1);
        v.extend_from_slice(&self.a);
        v.extend_from_slice(&self.c);
        v
    }

    /// Inverse of [`to_vector`](Self::to_vector); no validation.
    pub fn from_vector(maturities: &[f64], x: &[f64]) -> Self {
        let n = maturities.len();
        assert_eq!(x.len(), 3 * n, "parameter vector length");
        Self {
            maturities: maturities.to_vec(),
            rhos: x[..n].to_vec(),
            theta1: x[n],
            a: x[n + 1..2 * n].to_vec(),
            c: x[2 * n..].to_vec(),
        }
    }
}

/// Intermediate quantities of the map.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AuxQuantities {
    /// `p₂..p_N`
    pub p: Vec<f64>,
    pub f: Vec<f64>,
    pub a_psi: Vec<f64>,
    pub c_psi: Vec<f64>,
    /// Slices where `C_ψ − A_ψ` collapsed below [`DEGENERATE_WIDTH`].
    pub degenerate: Vec<usize>,
}

/// `θ`, `p` and `f` for a chain, shared by the forward and inverse maps.
struct Chain {
    thetas: Vec<f64>,
    p: Vec<f64>,
    f: Vec<f64>,
    /// `suffix[i] = min(f_i, f_{i+1}/p_{i+1}, …, f_N/∏_{j>i} p_j)`
    suffix: Vec<f64>,
}

fn chain(thetas: Vec<f64>, rhos: &[f64], rule: &ButterflyRule) -> Chain {
    let n = thetas.len();
    let p: Vec<f64> = rhos.windows(2).map(|w| calendar_ratio(w[0], w[1])).collect();
    let f: Vec<f64> = thetas
        .iter()
        .zip(rhos)
        .map(|(&t, r)| rule.psi_cap(t, r.abs()))
        .collect();
    let mut suffix = f.clone();
    for i in (0..n.saturating_sub(1)).rev() {
        suffix[i] = f[i].min(suffix[i + 1] / p[i]);
    }
    Chain {
        thetas,
        p,
        f,
        suffix,
    }
}

/// Lower and upper `ψ` bounds for slice `i` given the previous slice.
fn psi_bounds(ch: &Chain, i: usize, prev_psi: f64) -> (f64, f64) {
    if i == 0 {
        (0.0, ch.suffix[0])
    } else {
        let lower = prev_psi * ch.p[i - 1];
        let slope = prev_psi / ch.thetas[i - 1] * ch.thetas[i];
        (lower, slope.min(ch.suffix[i]))
    }
}

/// Map box coordinates to SSVI slices.
pub fn to_slices(gp: &GlobalParams, rule: &ButterflyRule) -> (Vec<SsviSlice>, AuxQuantities) {
    let n = gp.len();
    let mut thetas = Vec::with_capacity(n);
    thetas.push(gp.theta1);
    for i in 1..n {
        let p = calendar_ratio(gp.rhos[i - 1], gp.rhos[i]);
        thetas.push(thetas[i - 1] * p + gp.a[i - 1]);
    }
    let ch = chain(thetas, &gp.rhos, rule);

    let mut slices = Vec::with_capacity(n);
    let mut a_psi = Vec::with_capacity(n);
    let mut c_psi = Vec::with_capacity(n);
    let mut degenerate = Vec::new();
    let mut prev_psi = 0.0;
    for i in 0..n {
        let (lower, upper) = psi_bounds(&ch, i, prev_psi);
        let width = upper - lower;
        let psi = if width < DEGENERATE_WIDTH {
            degenerate.push(i);
            lower + gp.c[i] * DEGENERATE_WIDTH
        } else {
            (gp.c[i] * width + lower).min(upper)
        };
        a_psi.push(lower);
        c_psi.push(upper);
        slices.push(SsviSlice {
            theta: ch.thetas[i],
            rho: gp.rhos[i],
            psi,
            maturity: gp.maturities[i],
        });
        prev_psi = psi;
    }
    let aux = AuxQuantities {
        p: ch.p,
        f: ch.f,
        a_psi,
        c_psi,
        degenerate,
    };
    (slices, aux)
}

/// Recover box coordinates from slices (inverse of [`to_slices`]).
pub fn from_slices(slices: &[SsviSlice], rule: &ButterflyRule) -> Result<GlobalParams> {
    let n = slices.len();
    if n == 0 {
        return Err(Error::domain("no slices to invert"));
    }
    for (i, s) in slices.iter().enumerate() {
        if !(s.rho.abs() < 1.0) {
            return Err(Error::Inversion {
                slice: i,
                coordinate: "rho",
                value: s.rho,
            });
        }
    }
    if !(slices[0].theta > 0.0) {
        return Err(Error::Inversion {
            slice: 0,
            coordinate: "theta1",
            value: slices[0].theta,
        });
    }
    let rhos: Vec<f64> = slices.iter().map(|s| s.rho).collect();
    let ch = chain(slices.iter().map(|s| s.theta).collect(), &rhos, rule);

    let mut a = Vec::with_capacity(n.saturating_sub(1));
    for i in 1..n {
        let ai = ch.thetas[i] - ch.thetas[i - 1] * ch.p[i - 1];
        if !(ai > 0.0) {
            return Err(Error::Inversion {
                slice: i,
                coordinate: "a",
                value: ai,
            });
        }
        a.push(ai);
    }
    let mut c = Vec::with_capacity(n);
    let mut prev_psi = 0.0;
    for (i, s) in slices.iter().enumerate() {
        let (lower, upper) = psi_bounds(&ch, i, prev_psi);
        let ci = (s.psi - lower) / (upper - lower);
        if !(ci > 0.0 && ci < 1.0) {
            return Err(Error::Inversion {
                slice: i,
                coordinate: "c",
                value: ci,
            });
        }
        c.push(ci);
        prev_psi = s.psi;
    }
    let maturities = slices.iter().map(|s| s.maturity).collect();
    GlobalParams::new(maturities, rhos, slices[0].theta, a, c)
}

/// Distances of each `ψ_i` to its bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SliceMargin {
    /// `C_ψ − ψ`
    pub to_upper: f64,
    /// `ψ − A_ψ`
    pub to_lower: f64,
    /// `f − ψ`
    pub to_butterfly: f64,
}

pub fn feasibility_margin(gp: &GlobalParams, rule: &ButterflyRule) -> Vec<SliceMargin> {
    let (slices, aux) = to_slices(gp, rule);
    slices
        .iter()
        .enumerate()
        .map(|(i, s)| SliceMargin {
            to_upper: aux.c_psi[i] - s.psi,
            to_lower: s.psi - aux.a_psi[i],
            to_butterfly: aux.f[i] - s.psi,
        })
        .collect()
}

/// Flat JSON document for a parameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsDocument {
    pub n: usize,
    pub maturities: Vec<f64>,
    pub rhos: Vec<f64>,
    pub theta1: f64,
    #[serde(rename = "as")]
    pub a: Vec<f64>,
    pub cs: Vec<f64>,
    pub rule: ButterflyKind,
}

impl ParamsDocument {
    pub fn new(gp: &GlobalParams, rule: ButterflyKind) -> Self {
        Self {
            n: gp.len(),
            maturities: gp.maturities.clone(),
            rhos: gp.rhos.clone(),
            theta1: gp.theta1,
            a: gp.a.clone(),
            cs: gp.c.clone(),
            rule,
        }
    }

    pub fn params(&self) -> Result<GlobalParams> {
        if self.n != self.maturities.len() {
            return Err(Error::Schema(format!(
                "document says n = {} but lists {} maturities",
                self.n,
                self.maturities.len()
            )));
        }
        GlobalParams::new(
            self.maturities.clone(),
            self.rhos.clone(),
            self.theta1,
            self.a.clone(),
            self.cs.clone(),
        )
    }

    pub fn butterfly_rule(&self) -> ButterflyRule {
        ButterflyRule::of(self.rule)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::no_arbitrage::surface_check;
    use approx::assert_relative_eq;

    fn two_slice() -> GlobalParams {
        GlobalParams::new(vec![0.5, 1.0], vec![0.0, 0.0], 0.01, vec![0.01], vec![0.5, 0.5]).unwrap()
    }

    #[test]
    fn single_slice_example() {
        let gp = GlobalParams::new(vec![1.0], vec![0.0], 0.04, vec![], vec![0.5]).unwrap();
        let (slices, aux) = to_slices(&gp, &ButterflyRule::gj());
        assert_relative_eq!(aux.f[0], 0.4, max_relative = 1e-15);
        assert_relative_eq!(slices[0].psi, 0.2, max_relative = 1e-15);
        assert_eq!(aux.a_psi[0], 0.0);
    }

    #[test]
    fn two_slice_example() {
        let (slices, aux) = to_slices(&two_slice(), &ButterflyRule::gj());
        assert_eq!(aux.p, vec![1.0]);
        assert_relative_eq!(slices[1].theta, 0.02, max_relative = 1e-15);
        assert_relative_eq!(aux.f[0], 0.2, max_relative = 1e-15);
        assert_relative_eq!(aux.f[1], 0.282_842_712_474_619, max_relative = 1e-14);
        assert_relative_eq!(aux.c_psi[0], 0.2, max_relative = 1e-15);
        assert_relative_eq!(slices[0].psi, 0.1, max_relative = 1e-15);
        assert_relative_eq!(aux.a_psi[1], 0.1, max_relative = 1e-15);
        assert_relative_eq!(aux.c_psi[1], 0.2, max_relative = 1e-15);
        assert_relative_eq!(slices[1].psi, 0.15, max_relative = 1e-15);
        assert!(surface_check(&slices, &ButterflyRule::gj()).passed());
    }

    #[test]
    fn equal_rhos_give_unit_ratio() {
        for &r in &[-0.9, -0.3, 0.0, 0.42] {
            assert_eq!(calendar_ratio(r, r), 1.0);
        }
        assert!(calendar_ratio(0.1, 0.3) > 1.0);
    }

    #[test]
    fn two_slice_round_trip() {
        let gp = two_slice();
        let rule = ButterflyRule::gj();
        let (slices, _) = to_slices(&gp, &rule);
        let back = from_slices(&slices, &rule).unwrap();
        assert_eq!(back.rhos, vec![0.0, 0.0]);
        assert_relative_eq!(back.theta1, 0.01, max_relative = 1e-14);
        assert_relative_eq!(back.a[0], 0.01, max_relative = 1e-12);
        assert_relative_eq!(back.c[0], 0.5, max_relative = 1e-12);
        assert_relative_eq!(back.c[1], 0.5, max_relative = 1e-12);
    }

    #[test]
    fn inversion_rejects_psi_on_upper_bound() {
        let rule = ButterflyRule::gj();
        let (mut slices, aux) = to_slices(&two_slice(), &rule);
        slices[1].psi = aux.c_psi[1];
        match from_slices(&slices, &rule) {
            Err(Error::Inversion {
                slice: 1,
                coordinate: "c",
                ..
            }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn inversion_rejects_flat_theta() {
        let rule = ButterflyRule::gj();
        let (mut slices, _) = to_slices(&two_slice(), &rule);
        slices[1].theta = slices[0].theta;
        assert!(matches!(
            from_slices(&slices, &rule),
            Err(Error::Inversion {
                slice: 1,
                coordinate: "a",
                ..
            })
        ));
    }

    #[test]
    fn margins_single_slice() {
        let gp = GlobalParams::new(vec![1.0], vec![0.0], 0.04, vec![], vec![0.5]).unwrap();
        let m = feasibility_margin(&gp, &ButterflyRule::gj());
        assert_relative_eq!(m[0].to_upper, 0.2, max_relative = 1e-15);
        assert_relative_eq!(m[0].to_lower, 0.2, max_relative = 1e-15);
        assert_relative_eq!(m[0].to_butterfly, 0.2, max_relative = 1e-15);
    }

    #[test]
    fn margin_shrinks_linearly_in_c() {
        let rule = ButterflyRule::gj();
        let mut prev = f64::INFINITY;
        for &c in &[0.5, 0.9, 0.99, 0.999_999] {
            let gp = GlobalParams::new(vec![1.0], vec![0.2], 0.04, vec![], vec![c]).unwrap();
            let m = feasibility_margin(&gp, &rule)[0].to_upper;
            assert!(m > 0.0 && m < prev);
            let cap = to_slices(&gp, &rule).1.c_psi[0];
            assert_relative_eq!(m, (1.0 - c) * cap, max_relative = 1e-9);
            prev = m;
        }
    }

    #[test]
    fn margins_unchanged_by_non_binding_far_slice() {
        let rule = ButterflyRule::gj();
        let gp = GlobalParams::new(
            vec![0.25, 0.5, 1.0],
            vec![-0.3, -0.2, -0.1],
            0.01,
            vec![0.005, 0.01],
            vec![0.4, 0.6, 0.5],
        )
        .unwrap();
        let base = feasibility_margin(&gp, &rule);
        let mut extended = gp.clone();
        extended.maturities.push(30.0);
        extended.rhos.push(-0.1);
        extended.a.push(50.0);
        extended.c.push(0.5);
        let (_, aux) = to_slices(&extended, &rule);
        assert_relative_eq!(aux.f[3], 4.0 / 1.1, max_relative = 1e-15);
        let ext = feasibility_margin(&extended, &rule);
        assert_eq!(&ext[..3], &base[..]);
    }

    #[test]
    fn vector_layout_round_trip() {
        let gp = GlobalParams::new(
            vec![0.25, 0.5, 1.0],
            vec![-0.3, -0.2, -0.1],
            0.01,
            vec![0.005, 0.01],
            vec![0.4, 0.6, 0.5],
        )
        .unwrap();
        let v = gp.to_vector();
        assert_eq!(v.len(), 9);
        assert_eq!(v[3], 0.01);
        assert_eq!(GlobalParams::from_vector(&gp.maturities, &v), gp);
    }

    #[test]
    fn box_validation() {
        assert!(GlobalParams::new(vec![1.0], vec![1.0], 0.04, vec![], vec![0.5]).is_err());
        assert!(GlobalParams::new(vec![1.0], vec![0.0], 0.0, vec![], vec![0.5]).is_err());
        assert!(GlobalParams::new(vec![1.0], vec![0.0], 0.04, vec![], vec![1.0]).is_err());
        assert!(GlobalParams::new(vec![1.0, 2.0], vec![0.0, 0.0], 0.04, vec![0.0], vec![0.5, 0.5]).is_err());
        assert!(GlobalParams::new(vec![1.0, 1.0], vec![0.0, 0.0], 0.04, vec![0.1], vec![0.5, 0.5]).is_err());
        assert!(GlobalParams::new(vec![1.0, 2.0], vec![0.0], 0.04, vec![0.1], vec![0.5, 0.5]).is_err());
    }

    #[test]
    fn document_json_round_trip() {
        let gp = two_slice();
        let doc = ParamsDocument::new(&gp, ButterflyKind::Mm);
        let json = doc.to_json().unwrap();
        assert!(json.contains("\"as\""));
        assert!(json.contains("\"rule\": \"mm\""));
        let back = ParamsDocument::from_json(&json).unwrap();
        assert_eq!(back.params().unwrap(), gp);
        assert_eq!(back.butterfly_rule().kind, ButterflyKind::Mm);
    }
}
