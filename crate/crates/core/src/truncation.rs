//! Truncation machinery: the growth bound `phi`, its inverse, the step-size
//! function `h(dt) = K dt^{-kappa}` and the radial projection onto the ball of
//! radius `phi^{-1}(h(dt))`.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Result, TemError};
use crate::measure::norm_sq;

/// Default exponent in `h(dt) = K dt^{-kappa}`.
pub const DEFAULT_KAPPA: f64 = 1.0 / 3.0;

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Strictly increasing growth bound `phi` together with its inverse.
#[derive(Clone)]
pub enum Growth {
    /// `phi(u) = 2L (1 + u^alpha)`, `phi^{-1}(v) = (v / 2L - 1)^{1/alpha}`.
    Polynomial { alpha: f64, l: f64 },
    /// User-supplied `phi` and inverse.
    Custom { phi: ScalarFn, phi_inv: ScalarFn },
}

impl fmt::Debug for Growth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Growth::Polynomial { alpha, l } => f
                .debug_struct("Polynomial")
                .field("alpha", alpha)
                .field("l", l)
                .finish(),
            Growth::Custom { .. } => f.write_str("Custom"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TruncationRule {
    growth: Growth,
    trunc_constant: f64,
    kappa: f64,
}

/// Serializable description of a rule.
#[derive(Debug, Clone, Serialize)]
pub struct RuleSummary {
    pub kind: &'static str,
    pub alpha: Option<f64>,
    pub l: Option<f64>,
    pub k: f64,
    pub kappa: f64,
}

fn check_kappa(kappa: f64) -> Result<()> {
    if kappa > 0.0 && kappa <= DEFAULT_KAPPA {
        Ok(())
    } else {
        Err(TemError::config(
            "truncation.kappa",
            format!("kappa must lie in (0, 1/3], got {kappa}"),
        ))
    }
}

/// `kappa = q alpha / (2 (p - q))`, the exponent tuned for the strong rate in L^q.
pub fn rate_kappa(q: f64, p: f64, alpha: f64) -> Result<f64> {
    if !(p > q && q >= 2.0) {
        return Err(TemError::config("truncation.kappa", "need p > q >= 2"));
    }
    let kappa = q * alpha / (2.0 * (p - q));
    check_kappa(kappa)?;
    Ok(kappa)
}

/// Polynomial rule `phi(u) = 2L(1 + u^alpha)` with `h(dt) = K dt^{-kappa}`.
///
/// Requires `h(1) = K > phi(0) = 2L`, which makes every `dt` in `(0, 1]` admissible.
pub fn polynomial_rule(alpha: f64, l: f64, k: f64, kappa: f64) -> Result<TruncationRule> {
    if alpha == 0.0 {
        return Err(TemError::DegenerateGrowth);
    }
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(TemError::config(
            "truncation.alpha",
            "alpha must be nonnegative",
        ));
    }
    if !(l > 0.0) {
        return Err(TemError::config("truncation.L", "L must be positive"));
    }
    if !(k > 0.0) {
        return Err(TemError::config("truncation.K", "K must be positive"));
    }
    check_kappa(kappa)?;
    let rule = TruncationRule {
        growth: Growth::Polynomial { alpha, l },
        trunc_constant: k,
        kappa,
    };
    rule.check_step(1.0)?;
    Ok(rule)
}

impl TruncationRule {
    /// Rule from a user-supplied strictly increasing `phi` and its inverse.
    pub fn custom(
        phi: impl Fn(f64) -> f64 + Send + Sync + 'static,
        phi_inv: impl Fn(f64) -> f64 + Send + Sync + 'static,
        k: f64,
        kappa: f64,
    ) -> Result<Self> {
        if !(k > 0.0) {
            return Err(TemError::config("truncation.K", "K must be positive"));
        }
        check_kappa(kappa)?;
        let rule = TruncationRule {
            growth: Growth::Custom {
                phi: Arc::new(phi),
                phi_inv: Arc::new(phi_inv),
            },
            trunc_constant: k,
            kappa,
        };
        rule.check_step(1.0)?;
        Ok(rule)
    }

    pub fn growth(&self) -> &Growth {
        &self.growth
    }

    pub fn trunc_constant(&self) -> f64 {
        self.trunc_constant
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn phi(&self, u: f64) -> f64 {
        match &self.growth {
            Growth::Polynomial { alpha, l } => 2.0 * l * (1.0 + u.powf(*alpha)),
            Growth::Custom { phi, .. } => phi(u),
        }
    }

    pub fn phi_inv(&self, v: f64) -> f64 {
        match &self.growth {
            Growth::Polynomial { alpha, l } => {
                let base = v / (2.0 * l) - 1.0;
                if *alpha == 1.0 {
                    base
                } else if *alpha == 2.0 {
                    base.sqrt()
                } else {
                    base.powf(1.0 / alpha)
                }
            }
            Growth::Custom { phi_inv, .. } => phi_inv(v),
        }
    }

    /// `h(dt) = K dt^{-kappa}`.
    pub fn h(&self, dt: f64) -> f64 {
        if self.kappa == DEFAULT_KAPPA {
            self.trunc_constant / dt.cbrt()
        } else {
            self.trunc_constant * dt.powf(-self.kappa)
        }
    }

    fn check_step(&self, dt: f64) -> Result<()> {
        if !(dt > 0.0 && dt <= 1.0) {
            return Err(TemError::config(
                "dt",
                format!("step size must lie in (0, 1], got {dt}"),
            ));
        }
        let h = self.h(dt);
        let phi0 = self.phi(0.0);
        if h > phi0 {
            Ok(())
        } else {
            Err(TemError::StepSizeTooLarge { dt, h, phi0 })
        }
    }

    /// Truncation radius `phi^{-1}(h(dt))`.
    pub fn radius(&self, dt: f64) -> Result<f64> {
        self.check_step(dt)?;
        Ok(self.phi_inv(self.h(dt)))
    }

    pub fn summary(&self) -> RuleSummary {
        match &self.growth {
            Growth::Polynomial { alpha, l } => RuleSummary {
                kind: "polynomial",
                alpha: Some(*alpha),
                l: Some(*l),
                k: self.trunc_constant,
                kappa: self.kappa,
            },
            Growth::Custom { .. } => RuleSummary {
                kind: "custom",
                alpha: None,
                l: None,
                k: self.trunc_constant,
                kappa: self.kappa,
            },
        }
    }
}

/// Radial projection onto the closed ball of radius `r`, in place.
///
/// The output norm never exceeds `r` as computed, which makes the map idempotent.
pub fn project_in_place(x: &mut [f64], r: f64) {
    debug_assert!(r > 0.0);
    if let [v] = x {
        if v.abs() > r {
            *v = r.copysign(*v);
        }
        return;
    }
    let n2 = norm_sq(x);
    if n2 <= r * r {
        return;
    }
    let mut scale = r / n2.sqrt();
    loop {
        let scaled: f64 = x.iter().map(|v| (v * scale) * (v * scale)).sum();
        if scaled <= r * r {
            break;
        }
        scale *= 1.0 - f64::EPSILON;
    }
    for v in x.iter_mut() {
        *v *= scale;
    }
}

/// Radial projection `(|x| ^ r) x / |x|`, with `0 -> 0`.
pub fn project(x: &[f64], r: f64) -> Vec<f64> {
    let mut y = x.to_vec();
    project_in_place(&mut y, r);
    y
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vol32_rule() -> TruncationRule {
        polynomial_rule(1.0, 2.0, 8.0, DEFAULT_KAPPA).unwrap()
    }

    fn double_well_rule() -> TruncationRule {
        polynomial_rule(2.0, 3.0, 12.0, DEFAULT_KAPPA).unwrap()
    }

    #[test]
    fn vol32_radius_closed_form() {
        let rule = vol32_rule();
        for j in 0..=16 {
            let dt = 2f64.powi(-j);
            let expected = 2.0 * dt.powf(-1.0 / 3.0) - 1.0;
            let got = rule.radius(dt).unwrap();
            assert!((got - expected).abs() <= 1e-12 * expected, "dt = 2^-{j}");
        }
        assert_eq!(rule.radius(1.0).unwrap(), 1.0);
        let r10 = rule.radius(2f64.powi(-10)).unwrap();
        assert!((r10 - (2.0 * 2f64.powf(10.0 / 3.0) - 1.0)).abs() < 1e-12);
        assert!((r10 - 19.159).abs() < 1e-3);
    }

    #[test]
    fn double_well_radius_closed_form() {
        let rule = double_well_rule();
        for j in 0..=16 {
            let dt = 2f64.powi(-j);
            let expected = (2.0 * dt.powf(-1.0 / 3.0) - 1.0).sqrt();
            let got = rule.radius(dt).unwrap();
            assert!((got - expected).abs() <= 1e-12 * expected);
        }
        assert_eq!(rule.radius(1.0).unwrap(), 1.0);
    }

    #[test]
    fn radius_grows_as_step_shrinks() {
        for rule in [vol32_rule(), double_well_rule()] {
            let radii: Vec<f64> = (0..30)
                .map(|j| rule.radius(2f64.powi(-j)).unwrap())
                .collect();
            assert!(radii.windows(2).all(|w| w[1] > w[0]));
        }
    }

    #[test]
    fn phi_inverse_round_trip() {
        for rule in [vol32_rule(), double_well_rule()] {
            for i in 1..200 {
                let u = i as f64 * 0.37;
                let back = rule.phi_inv(rule.phi(u));
                assert!((back - u).abs() <= 1e-10 * u);
            }
        }
    }

    #[test]
    fn construction_errors() {
        assert!(matches!(
            polynomial_rule(0.0, 2.0, 8.0, DEFAULT_KAPPA),
            Err(TemError::DegenerateGrowth)
        ));
        assert!(matches!(
            polynomial_rule(1.0, 4.0, 8.0, DEFAULT_KAPPA),
            Err(TemError::StepSizeTooLarge { .. })
        ));
        assert!(polynomial_rule(1.0, 2.0, 8.0, 0.5).is_err());
        assert!(polynomial_rule(1.0, 2.0, 8.0, 0.0).is_err());
        assert!(vol32_rule().radius(2.0).is_err());
        assert!(vol32_rule().radius(0.0).is_err());
    }

    #[test]
    fn rate_kappa_values() {
        // q = 2, alpha = 1, p = 5: kappa = 2 / 6 = 1/3.
        assert!((rate_kappa(2.0, 5.0, 1.0).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(rate_kappa(2.0, 10.0, 1.0).unwrap(), 0.125);
        assert!(rate_kappa(2.0, 3.0, 1.0).is_err());
        let rule = polynomial_rule(1.0, 2.0, 8.0, 0.125).unwrap();
        assert!((rule.h(2f64.powi(-8)) - 8.0 * 2.0).abs() < 1e-12);
    }

    #[test]
    fn custom_rule() {
        let rule =
            TruncationRule::custom(|u| 1.0 + u.exp(), |v| (v - 1.0).ln(), 8.0, DEFAULT_KAPPA)
                .unwrap();
        let r = rule.radius(0.125).unwrap();
        assert!((r - 15f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn projection_examples() {
        assert_eq!(project(&[0.0, 0.0], 1.0), vec![0.0, 0.0]);
        assert_eq!(project(&[0.0], 1.0), vec![0.0]);
        assert_eq!(project(&[0.3, -0.4], 1.0), vec![0.3, -0.4]);
        let y = project(&[3.0, 4.0], 1.0);
        assert!((y[0] - 0.6).abs() < 1e-15 && (y[1] - 0.8).abs() < 1e-15);
        assert_eq!(project(&[-7.0], 2.5), vec![-2.5]);
    }

    #[test]
    fn projection_is_idempotent_and_bounded() {
        let xs = [
            vec![1e6, -3.0, 2.0],
            vec![0.1, 0.2, 0.3, 0.4, 0.5],
            vec![1.0, 1.0],
            vec![-19.5],
        ];
        for x in xs {
            for r in [0.1, 1.0, 19.16, 1e3] {
                let once = project(&x, r);
                assert!(norm_sq(&once).sqrt() <= r + 1e-12);
                assert_eq!(project(&once, r), once);
            }
        }
    }
}
