//! Slices at arbitrary maturities from a calibrated surface.
//!
//! Between calibrated maturities `θ`, `ψ` and `ψρ` are linear in `t`. Below
//! `T₁` the first slice is scaled along the ray `(λθ₁, λψ₁, ρ₁)`, `λ = t/T₁`,
//! which keeps implied volatility at fixed `k` unchanged. Above `T_N`, `ψ` and
//! `ρ` are frozen and `θ` grows with a positive slope (the last calibrated
//! slope by default, `θ₁/T₁` for a one-slice surface).

use crate::no_arbitrage::{surface_check, ButterflyRule};
use crate::pricing::SsviSlice;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceCurve {
    slices: Vec<SsviSlice>,
    right_slope: f64,
}

impl SurfaceCurve {
    /// Fails unless `slices` pass [`surface_check`] under `rule`.
    pub fn new(slices: Vec<SsviSlice>, rule: &ButterflyRule) -> Result<Self> {
        if slices.is_empty() {
            return Err(Error::domain("surface curve needs at least one slice"));
        }
        let report = surface_check(&slices, rule);
        if !report.passed() {
            let reasons: Vec<String> = report.failures.iter().map(|f| f.to_string()).collect();
            return Err(Error::domain(format!(
                "surface is not arbitrage-free: {}",
                reasons.join("; ")
            )));
        }
        let n = slices.len();
        let right_slope = if n == 1 {
            slices[0].theta / slices[0].maturity
        } else {
            let (a, b) = (&slices[n - 2], &slices[n - 1]);
            (b.theta - a.theta) / (b.maturity - a.maturity)
        };
        Ok(Self {
            slices,
            right_slope,
        })
    }

    /// Replace the right-extrapolation slope of `θ`.
    pub fn with_right_slope(mut self, slope: f64) -> Result<Self> {
        if !(slope > 0.0 && slope.is_finite()) {
            return Err(Error::domain(format!("extrapolation slope must be positive, got {slope}")));
        }
        self.right_slope = slope;
        Ok(self)
    }

    pub fn slices(&self) -> &[SsviSlice] {
        &self.slices
    }

    pub fn right_slope(&self) -> f64 {
        self.right_slope
    }

    /// Calibrated slices adjacent to `t`: `(below, above)` indices.
    pub fn bracket(&self, t: f64) -> (Option<usize>, Option<usize>) {
        let n = self.slices.len();
        let above = self.slices.partition_point(|s| s.maturity < t);
        if above < n && self.slices[above].maturity == t {
            return (Some(above), Some(above));
        }
        (above.checked_sub(1), (above < n).then_some(above))
    }

    pub fn slice_at(&self, t: f64) -> Result<SsviSlice> {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::domain(format!("maturity must be positive, got {t}")));
        }
        let first = &self.slices[0];
        let last = &self.slices[self.slices.len() - 1];
        Ok(match self.bracket(t) {
            (Some(i), Some(j)) if i == j => self.slices[i],
            (None, _) => {
                let lambda = t / first.maturity;
                SsviSlice {
                    theta: lambda * first.theta,
                    rho: first.rho,
                    psi: lambda * first.psi,
                    maturity: t,
                }
            }
            (Some(_), None) => SsviSlice {
                theta: last.theta + self.right_slope * (t - last.maturity),
                rho: last.rho,
                psi: last.psi,
                maturity: t,
            },
            (Some(i), Some(j)) => {
                let (a, b) = (&self.slices[i], &self.slices[j]);
                let lambda = (t - a.maturity) / (b.maturity - a.maturity);
                let psi = (1.0 - lambda) * a.psi + lambda * b.psi;
                let psi_rho = (1.0 - lambda) * a.psi * a.rho + lambda * b.psi * b.rho;
                // rounding can push the ratio a hair outside the hull
                let (rlo, rhi) = (a.rho.min(b.rho), a.rho.max(b.rho));
                SsviSlice {
                    theta: (1.0 - lambda) * a.theta + lambda * b.theta,
                    rho: (psi_rho / psi).clamp(rlo, rhi),
                    psi,
                    maturity: t,
                }
            }
        })
    }

    /// Total variance at `(t, k)`; below `T₁` this is exactly `(t/T₁)·w₁(k)`.
    pub fn total_variance_at(&self, t: f64, k: f64) -> Result<f64> {
        let first = &self.slices[0];
        if t > 0.0 && t < first.maturity {
            return Ok(t / first.maturity * first.total_variance(k));
        }
        Ok(self.slice_at(t)?.total_variance(k))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::global_param::{to_slices, GlobalParams};
    use crate::no_arbitrage::{butterfly_ok, calendar_check};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn simple() -> SurfaceCurve {
        let s = vec![
            SsviSlice::new(0.01, 0.0, 0.1, 0.5).unwrap(),
            SsviSlice::new(0.02, 0.0, 0.15, 1.0).unwrap(),
        ];
        SurfaceCurve::new(s, &ButterflyRule::gj()).unwrap()
    }

    #[test]
    fn nodes_are_exact() {
        let c = simple();
        assert_eq!(c.slice_at(0.5).unwrap(), c.slices()[0]);
        assert_eq!(c.slice_at(1.0).unwrap(), c.slices()[1]);
    }

    #[test]
    fn midpoint_interpolation() {
        let s = simple().slice_at(0.75).unwrap();
        assert_relative_eq!(s.theta, 0.015, max_relative = 1e-15);
        assert_relative_eq!(s.psi, 0.125, max_relative = 1e-15);
        assert_eq!(s.rho, 0.0);
    }

    #[test]
    fn left_extrapolation_halves() {
        let c = simple();
        let s = c.slice_at(0.25).unwrap();
        assert_relative_eq!(s.theta, 0.005, max_relative = 1e-15);
        assert_relative_eq!(s.psi, 0.05, max_relative = 1e-15);
        for &k in &[-1.0, 0.0, 0.4] {
            let w1 = c.slices()[0].total_variance(k);
            assert_eq!(c.total_variance_at(0.25, k).unwrap(), 0.5 * w1);
            assert_relative_eq!(s.total_variance(k), 0.5 * w1, max_relative = 1e-14);
        }
    }

    #[test]
    fn atm_identity() {
        let c = simple();
        for &t in &[0.1, 0.6, 2.0] {
            assert_eq!(c.total_variance_at(t, 0.0).unwrap(), c.slice_at(t).unwrap().theta);
        }
    }

    #[test]
    fn right_extrapolation_slope() {
        let c = simple();
        let s = c.slice_at(2.0).unwrap();
        assert_relative_eq!(s.theta, 0.04, max_relative = 1e-14);
        assert_eq!((s.psi, s.rho), (0.15, 0.0));
        assert!(calendar_check(&c.slices()[1], &s).is_ok());
        let c = c.with_right_slope(0.001).unwrap();
        assert_relative_eq!(c.slice_at(2.0).unwrap().theta, 0.021, max_relative = 1e-14);
        assert!(simple().with_right_slope(0.0).is_err());
    }

    #[test]
    fn single_slice_uses_ray_slope() {
        let c = SurfaceCurve::new(vec![SsviSlice::new(0.04, -0.3, 0.2, 1.0).unwrap()], &ButterflyRule::gj()).unwrap();
        assert_relative_eq!(c.right_slope(), 0.04, max_relative = 1e-15);
        assert_relative_eq!(c.slice_at(3.0).unwrap().theta, 0.12, max_relative = 1e-15);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(simple().slice_at(0.0).is_err());
        assert!(simple().slice_at(-1.0).is_err());
        let s = vec![
            SsviSlice::new(0.02, 0.0, 0.1, 0.5).unwrap(),
            SsviSlice::new(0.01, 0.0, 0.1, 1.0).unwrap(),
        ];
        assert!(SurfaceCurve::new(s, &ButterflyRule::gj()).is_err());
    }

    fn curve_from(rhos: Vec<f64>, theta1: f64, a: Vec<f64>, c: Vec<f64>) -> SurfaceCurve {
        let n = rhos.len();
        let mats: Vec<f64> = (1..=n).map(|i| 0.25 * i as f64).collect();
        let gp = GlobalParams::new(mats, rhos, theta1, a, c).unwrap();
        let rule = ButterflyRule::gj();
        SurfaceCurve::new(to_slices(&gp, &rule).0, &rule).unwrap()
    }

    fn surface() -> impl Strategy<Value = SurfaceCurve> {
        (2usize..6).prop_flat_map(|n| {
            (
                prop::collection::vec(-0.9f64..0.9, n),
                0.001f64..0.1,
                prop::collection::vec(0.001f64..0.05, n - 1),
                prop::collection::vec(0.05f64..0.95, n),
            )
                .prop_map(|(r, t, a, c)| curve_from(r, t, a, c))
        })
    }

    proptest! {
        #[test]
        fn interpolated_pairs_pass_calendar(curve in surface(), u in 0.0f64..1.0, v in 0.0f64..1.0) {
            let tmax = curve.slices().last().unwrap().maturity;
            let (t1, t2) = (0.25 + u.min(v) * (tmax - 0.25), 0.25 + u.max(v) * (tmax - 0.25));
            prop_assume!(t2 > t1);
            let (s1, s2) = (curve.slice_at(t1).unwrap(), curve.slice_at(t2).unwrap());
            prop_assert!(calendar_check(&s1, &s2).is_ok(), "{s1:?} {s2:?}");
            prop_assert!(butterfly_ok(&s1, &ButterflyRule::gj()));
        }

        #[test]
        fn rho_stays_in_hull(curve in surface(), u in 0.0f64..1.0) {
            let tmax = curve.slices().last().unwrap().maturity;
            let t = 0.25 + u * (tmax - 0.25);
            let s = curve.slice_at(t).unwrap();
            if let (Some(i), Some(j)) = curve.bracket(t) {
                let (a, b) = (curve.slices()[i].rho, curve.slices()[j].rho);
                prop_assert!(s.rho >= a.min(b) && s.rho <= a.max(b));
            }
        }

        #[test]
        fn total_variance_nondecreasing_in_t(curve in surface(), k in -2.0f64..2.0) {
            let mut prev = 0.0;
            for i in 1..=60 {
                let w = curve.total_variance_at(0.05 * i as f64, k).unwrap();
                prop_assert!(w >= prev * (1.0 - 1e-14), "t={} k={k}", 0.05 * i as f64);
                prev = w;
            }
        }

        #[test]
        fn continuous_at_nodes(curve in surface()) {
            for s in curve.slices() {
                let eps = 1e-15 * s.maturity;
                for t in [s.maturity - eps, s.maturity + eps] {
                    let near = curve.slice_at(t).unwrap();
                    prop_assert!((near.theta - s.theta).abs() <= 1e-12 * s.theta);
                    prop_assert!((near.psi - s.psi).abs() <= 1e-12 * s.psi);
                    prop_assert!((near.rho - s.rho).abs() <= 1e-12);
                }
            }
        }
    }
}
