use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SourceCondition;
use crate::spectrum::Spectrum;

/// Ill-posedness class with its smoothness parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum RateClass {
    Poly { nu: f64, q: f64 },
    Exp { p: f64, a: f64 },
}

/// Inputs to the closed-form rate and a-priori-choice formulas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateSpec {
    pub class: RateClass,
    pub rho: f64,
    pub delta: f64,
}

impl RateSpec {
    pub fn validate(&self) -> Result<()> {
        match self.class {
            RateClass::Poly { nu, q } => {
                if !(nu.is_finite() && nu > 0.0 && q.is_finite() && q > 0.0) {
                    return Err(Error::invalid(format!(
                        "polynomial class needs nu > 0 and q > 0, got nu={nu}, q={q}"
                    )));
                }
            }
            RateClass::Exp { p, a } => {
                if !(p.is_finite() && p > 0.0 && a.is_finite() && a > 0.0) {
                    return Err(Error::invalid(format!(
                        "exponential class needs p > 0 and a > 0, got p={p}, a={a}"
                    )));
                }
            }
        }
        if !(self.rho.is_finite() && self.rho > 0.0) {
            return Err(Error::invalid(format!("source radius must be > 0, got {}", self.rho)));
        }
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return Err(Error::invalid(format!("noise level must be > 0, got {}", self.delta)));
        }
        let ratio = self.delta / self.rho;
        if ratio >= 1.0 {
            log::warn!(
                "asymptotic formulas assume delta/rho in (0,1); got {ratio} (continuing)"
            );
        }
        Ok(())
    }
}

/// Ceiling with a snap to the nearest integer when the input is within
/// 1e-9 relative of it, so grid values like 1000^{2/3} land on 100
/// instead of 101 after rounding noise in powf.
fn ceil_snapped(t: f64) -> f64 {
    let r = t.round();
    if (t - r).abs() <= 1e-9 * t.abs().max(1.0) {
        r
    } else {
        t.ceil()
    }
}

/// Error-minimizing truncation level ceil((rho/delta)^{2/((nu+1)q+1)})
/// for the polynomial class.
pub fn apriori_k_poly(spec: &RateSpec) -> Result<usize> {
    spec.validate()?;
    let RateClass::Poly { nu, q } = spec.class else {
        return Err(Error::invalid("a-priori level formula applies to the polynomial class"));
    };
    let t = (spec.rho / spec.delta).powf(2.0 / ((nu + 1.0) * q + 1.0));
    if !(t < 9.0e15) {
        return Err(Error::invalid(format!(
            "a-priori level overflows integer range (rho/delta = {})",
            spec.rho / spec.delta
        )));
    }
    Ok((ceil_snapped(t).max(1.0)) as usize)
}

/// Minimax error rate rho^{(q+1)/((nu+1)q+1)} * delta^{nu/(nu+1+1/q)}
/// for the polynomial class.
pub fn rate_poly(spec: &RateSpec) -> Result<f64> {
    spec.validate()?;
    let RateClass::Poly { nu, q } = spec.class else {
        return Err(Error::invalid("polynomial rate requested for a non-polynomial class"));
    };
    let e_rho = (q + 1.0) / ((nu + 1.0) * q + 1.0);
    let e_delta = nu / (nu + 1.0 + 1.0 / q);
    Ok(spec.rho.powf(e_rho) * spec.delta.powf(e_delta))
}

/// Constant in front of the polynomial rate for the stopping rule with
/// threshold tau:
/// (2/(tau-1)+1)^{2/((nu+1)q)} (tau+1)/2 + ((3tau+1)/2)^{nu/(nu+1)} + 1.
pub fn rate_constant_poly(tau: f64, nu: f64, q: f64) -> Result<f64> {
    if !(tau.is_finite() && tau > 1.0) {
        return Err(Error::invalid(format!("threshold multiplier tau must be > 1, got {tau}")));
    }
    if !(nu.is_finite() && nu > 0.0 && q.is_finite() && q > 0.0) {
        return Err(Error::invalid(format!("need nu > 0 and q > 0, got nu={nu}, q={q}")));
    }
    let first = (2.0 / (tau - 1.0) + 1.0).powf(2.0 / ((nu + 1.0) * q)) * (tau + 1.0) / 2.0;
    let second = ((3.0 * tau + 1.0) / 2.0).powf(nu / (nu + 1.0));
    Ok(first + second + 1.0)
}

/// Minimax error rate rho * (-log(delta^2/rho^2))^{-p/2} for the
/// exponential class. Needs delta < rho so the log is positive.
pub fn rate_exp(spec: &RateSpec) -> Result<f64> {
    spec.validate()?;
    let RateClass::Exp { p, .. } = spec.class else {
        return Err(Error::invalid("exponential rate requested for a non-exponential class"));
    };
    if spec.delta >= spec.rho {
        return Err(Error::invalid(format!(
            "exponential rate needs delta < rho, got delta/rho = {}",
            spec.delta / spec.rho
        )));
    }
    let neg_log = 2.0 * (spec.rho.ln() - spec.delta.ln());
    Ok(spec.rho * neg_log.powf(-p / 2.0))
}

/// Unique positive root of x^b e^{ax} = y, found by bracketing plus
/// safeguarded Newton on g(x) = b log x + a x - log y. Relative residual
/// is at worst 1e-12.
pub fn solve_power_exp(a: f64, b: f64, y: f64) -> Result<f64> {
    if !(a.is_finite() && a > 0.0) {
        return Err(Error::invalid(format!("exponent scale a must be > 0, got {a}")));
    }
    if !(b.is_finite() && b >= 0.0) {
        return Err(Error::invalid(format!("power b must be >= 0, got {b}")));
    }
    if !(y.is_finite() && y > 0.0) {
        return Err(Error::invalid(format!("target y must be > 0, got {y}")));
    }
    let ln_y = y.ln();
    if b == 0.0 {
        let x = ln_y / a;
        if x <= 0.0 {
            return Err(Error::invalid(format!("e^(ax) = {y} has no positive root")));
        }
        return Ok(x);
    }

    let g = |x: f64| b * x.ln() + a * x - ln_y;
    let (mut lo, mut hi);
    if y > std::f64::consts::E {
        let z = power_exp_asymptote(a, b, y)?;
        lo = (z - 2.0).max(1e-12);
        hi = z + 2.0;
        if hi <= lo {
            hi = lo + 4.0;
        }
    } else {
        lo = 1e-12;
        hi = (ln_y / a + b + 2.0).max(1.0);
    }
    // Safeguard expansion; g is strictly increasing from -inf to +inf.
    while g(lo) > 0.0 && lo > 1e-300 {
        lo *= 0.25;
    }
    while g(hi) < 0.0 {
        hi = hi * 2.0 + 1.0;
    }
    for _ in 0..20 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..60 {
        let gx = g(x);
        if gx == 0.0 {
            break;
        }
        if gx > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let mut next = x - gx / (b / x + a);
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        let done = (next - x).abs() <= 1e-15 * x.abs();
        x = next;
        if done {
            break;
        }
    }
    Ok(x)
}

/// Large-y approximation of the root of x^b e^{ax} = y:
/// z(y) = (1/a) log y - (1/a) log((log(y)/a)^b).
pub fn power_exp_asymptote(a: f64, b: f64, y: f64) -> Result<f64> {
    if !(a.is_finite() && a > 0.0) {
        return Err(Error::invalid(format!("exponent scale a must be > 0, got {a}")));
    }
    if !(b.is_finite() && b >= 0.0) {
        return Err(Error::invalid(format!("power b must be >= 0, got {b}")));
    }
    if !(y.is_finite() && y > 0.0) {
        return Err(Error::invalid(format!("target y must be > 0, got {y}")));
    }
    let ln_y = y.ln();
    if b == 0.0 {
        return Ok(ln_y / a);
    }
    if ln_y <= 0.0 {
        return Err(Error::invalid(format!("asymptotic form needs y > 1, got {y}")));
    }
    Ok(ln_y / a - (ln_y / a).powf(b).ln() / a)
}

/// Optimal continuous discretization level for the exponential class:
/// (1/a) log(rho^2/delta^2) - (1/a) log(((1/a) log(rho^2/delta^2))^{p+1}).
/// Callers round up to an integer level.
pub fn m_opt_exp(delta: f64, rho: f64, p: f64, a: f64) -> Result<f64> {
    for (name, v) in [("delta", delta), ("rho", rho), ("p", p), ("a", a)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::invalid(format!("{name} must be > 0, got {v}")));
        }
    }
    let l = 2.0 * (rho.ln() - delta.ln());
    if l <= 0.0 {
        return Err(Error::invalid(format!(
            "optimal level needs delta < rho, got delta/rho = {}",
            delta / rho
        )));
    }
    let base = l / a;
    let m = base - base.powf(p + 1.0).ln() / a;
    if !(m.is_finite() && m > 0.0) {
        return Err(Error::invalid(format!(
            "no positive discretization level at delta/rho = {} (formula gives {m})",
            delta / rho
        )));
    }
    Ok(m)
}

/// Analytic mean squared error split of a cut-off estimator at level k:
/// (variance, worst-case squared bias over the source ball of radius rho).
pub fn analytic_mse(
    spectrum: &Spectrum,
    condition: &SourceCondition,
    rho: f64,
    k: usize,
    delta: f64,
) -> Result<(f64, f64)> {
    if !(rho.is_finite() && rho >= 0.0) {
        return Err(Error::invalid(format!("source radius must be >= 0, got {rho}")));
    }
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::invalid(format!("noise level must be > 0, got {delta}")));
    }
    let vs = spectrum.variance_sum(k)?;
    if !vs.is_finite() {
        return Err(Error::VarianceOverflow { k });
    }
    let variance = delta * delta * vs;
    let next_sq = spectrum.singular_value_sq(k + 1)?;
    let bias_sq = match *condition {
        SourceCondition::Hoelder { nu } => next_sq.powf(nu) * rho * rho,
        SourceCondition::Logarithmic { p } => {
            if next_sq >= 1.0 {
                return Err(Error::invalid(format!(
                    "logarithmic class needs sigma^2 < 1 at level {}",
                    k + 1
                )));
            }
            (-next_sq.ln()).powf(-p) * rho * rho
        }
    };
    Ok((variance, bias_sq))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn poly_spec(rho: f64, delta: f64, nu: f64, q: f64) -> RateSpec {
        RateSpec {
            class: RateClass::Poly { nu, q },
            rho,
            delta,
        }
    }

    fn exp_spec(rho: f64, delta: f64, p: f64, a: f64) -> RateSpec {
        RateSpec {
            class: RateClass::Exp { p, a },
            rho,
            delta,
        }
    }

    #[test]
    fn apriori_level_hand_values() {
        assert_eq!(apriori_k_poly(&poly_spec(1.0, 1e-3, 1.0, 1.0)).unwrap(), 100);
        assert_eq!(apriori_k_poly(&poly_spec(1.0, 1.0, 1.0, 1.0)).unwrap(), 1);
        assert_eq!(apriori_k_poly(&poly_spec(2.5, 2.5, 3.0, 0.5)).unwrap(), 1);
        // 10^{12/5} = 251.19..., ceiling 252 (cross-checked by the
        // brute-force minimization below).
        assert_eq!(apriori_k_poly(&poly_spec(1.0, 1e-6, 1.0, 2.0)).unwrap(), 252);
    }

    #[test]
    fn apriori_level_matches_brute_force_minimum_up_to_factor_four() {
        // The returned level's analytic MSE is within 4x of the best
        // level found by scanning.
        for (nu, q) in [(1.0, 1.0), (1.0, 2.0), (2.0, 1.0)] {
            for ratio in [1e2, 1e3, 1e4] {
                let delta = 1.0 / ratio;
                let spec = poly_spec(1.0, delta, nu, q);
                let k_star = apriori_k_poly(&spec).unwrap();
                let spectrum = Spectrum::Polynomial { q };
                let cond = SourceCondition::Hoelder { nu };
                let mse_at = |k: usize| {
                    let (v, b) = analytic_mse(&spectrum, &cond, 1.0, k, delta).unwrap();
                    v + b
                };
                let returned = mse_at(k_star);
                let best = (0..=10 * k_star).map(mse_at).fold(f64::INFINITY, f64::min);
                assert!(
                    returned <= 4.0 * best,
                    "nu={nu} q={q} ratio={ratio}: {returned} vs best {best}"
                );
            }
        }
    }

    #[test]
    fn poly_rate_hand_values() {
        assert!((rate_poly(&poly_spec(1.0, 1e-3, 1.0, 1.0)).unwrap() - 0.1).abs() < 1e-12);
        assert!((rate_poly(&poly_spec(1.0, 1.0, 2.0, 3.0)).unwrap() - 1.0).abs() < 1e-12);
        let expect = 2.0f64.powf(2.0 / 3.0) * 0.1;
        assert!((rate_poly(&poly_spec(2.0, 1e-3, 1.0, 1.0)).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn rate_constant_hand_values() {
        let l = rate_constant_poly(2.0, 1.0, 2.0).unwrap();
        let expect = 3.0f64.sqrt() * 1.5 + 3.5f64.sqrt() + 1.0;
        assert!((l - expect).abs() < 1e-12, "{l}");
        assert!((l - 5.4689).abs() < 1e-4);

        let l = rate_constant_poly(3.0, 1.0, 1.0).unwrap();
        let expect = 4.0 + 5.0f64.sqrt() + 1.0;
        assert!((l - expect).abs() < 1e-12);
        assert!((l - 7.2361).abs() < 1e-4);

        assert!(rate_constant_poly(1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn rate_constant_grows_with_tau() {
        let mut prev = 0.0;
        for i in 1..40 {
            let tau = 1.0 + 0.5 * i as f64;
            let l = rate_constant_poly(tau, 1.0, 1.0).unwrap();
            if i > 4 {
                // Far from the tau -> 1 blow-up the growth is monotone.
                assert!(l > prev, "tau={tau}: {l} <= {prev}");
            }
            prev = l;
        }
    }

    #[test]
    fn exp_rate_hand_values() {
        let r = rate_exp(&exp_spec(1.0, (-50.0f64).exp(), 2.0, 1.0)).unwrap();
        assert!((r - 0.01).abs() < 1e-12, "{r}");

        let r = rate_exp(&exp_spec(3.0, 3.0 * (-8.0f64).exp(), 1.0, 1.0)).unwrap();
        assert!((r - 0.75).abs() < 1e-12, "{r}");

        // p -> 0 degenerates toward rho.
        let r = rate_exp(&exp_spec(1.0, 1e-4, 1e-9, 1.0)).unwrap();
        assert!((r - 1.0).abs() < 1e-7, "{r}");

        assert!(rate_exp(&exp_spec(1.0, 1.0, 2.0, 1.0)).is_err());
        assert!(rate_exp(&exp_spec(1.0, 2.0, 2.0, 1.0)).is_err());
    }

    #[test]
    fn solver_hand_values() {
        let x = solve_power_exp(1.0, 0.0, 3.0f64.exp()).unwrap();
        assert!((x - 3.0).abs() < 1e-12);

        let x = solve_power_exp(1.0, 1.0, std::f64::consts::E).unwrap();
        assert!((x - 1.0).abs() < 1e-12);

        // Independent bisection oracle froze this to 1e-10.
        let x = solve_power_exp(1.0, 2.0, 100.0).unwrap();
        assert!((x - 2.6534493304844).abs() < 1e-10, "{x}");

        assert!(solve_power_exp(1.0, 0.0, 0.5).is_err());
        assert!(solve_power_exp(1.0, 1.0, 0.0).is_err());
        assert!(solve_power_exp(0.0, 1.0, 2.0).is_err());
    }

    #[test]
    fn solver_residual_on_random_inputs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31337);
        for _ in 0..300 {
            let a = rng.random_range(0.1..5.0);
            let b = rng.random_range(0.1..5.0);
            let y = 10f64.powf(rng.random_range(0.0..8.0));
            let x = solve_power_exp(a, b, y).unwrap();
            let residual = (x.powf(b) * (a * x).exp() - y).abs() / y;
            assert!(residual <= 1e-12, "a={a} b={b} y={y}: residual {residual}");
        }
    }

    #[test]
    fn asymptote_hand_values() {
        // b = 1, a = 1: z(y) = log y - log log y.
        let z = power_exp_asymptote(1.0, 1.0, 1e6).unwrap();
        let ln_y = 1e6f64.ln();
        assert!((z - (ln_y - ln_y.ln())).abs() < 1e-12, "{z}");
        assert!(power_exp_asymptote(1.0, 1.0, 0.9).is_err());
        let z = power_exp_asymptote(2.0, 0.0, 4.0f64.exp()).unwrap();
        assert!((z - 2.0).abs() < 1e-12);
    }

    #[test]
    fn optimal_level_hand_values() {
        let m = m_opt_exp((-5.0f64).exp(), 1.0, 1.0, 1.0).unwrap();
        assert!((m - (10.0 - 100.0f64.ln())).abs() < 1e-12, "{m}");
        assert!((m - 5.394829814011908).abs() < 1e-12);

        // a = 2, p = 1, rho^2/delta^2 = e^20: 10 - ln(10) by the formula.
        let m = m_opt_exp((-10.0f64).exp(), 1.0, 1.0, 2.0).unwrap();
        assert!((m - (10.0 - 10.0f64.ln())).abs() < 1e-12, "{m}");
        assert!((m - 7.697414907005954).abs() < 1e-12);

        assert!(m_opt_exp(1.0, 1.0, 1.0, 1.0).is_err());
        // Positive-result domain violation: base > 1 but the log term wins.
        assert!(m_opt_exp((-1.0f64).exp(), 1.0, 3.0, 1.0).is_err());
    }

    #[test]
    fn optimal_level_tracks_root_solver() {
        // The closed form is the asymptote of x^{p+1} e^{ax} = rho^2/delta^2.
        for (p, a, l) in [(1.0, 1.0, 30.0), (2.0, 0.5, 40.0), (0.5, 2.0, 24.0)] {
            let rho = 1.0;
            let delta = (-l / 2.0f64).exp();
            let m = m_opt_exp(delta, rho, p, a).unwrap();
            let z = power_exp_asymptote(a, p + 1.0, (rho / delta).powi(2)).unwrap();
            assert!((m - z).abs() <= 1e-9 * z.abs(), "p={p} a={a}: {m} vs {z}");
        }
    }

    #[test]
    fn analytic_mse_hand_values() {
        let spectrum = Spectrum::polynomial(1.0).unwrap();
        let cond = SourceCondition::Hoelder { nu: 1.0 };
        let (v, b) = analytic_mse(&spectrum, &cond, 1.0, 3, 0.1).unwrap();
        assert!((v - 0.06).abs() < 1e-14, "{v}");
        assert!((b - 0.25).abs() < 1e-14, "{b}");

        let (v, b) = analytic_mse(&spectrum, &cond, 2.0, 0, 0.1).unwrap();
        assert_eq!(v, 0.0);
        assert!((b - 4.0).abs() < 1e-12);

        let spectrum = Spectrum::exponential(1.0).unwrap();
        let cond = SourceCondition::Logarithmic { p: 2.0 };
        let (_, b) = analytic_mse(&spectrum, &cond, 1.0, 2, 0.1).unwrap();
        assert!((b - 1.0 / 9.0).abs() < 1e-12, "{b}");
    }

    #[test]
    fn analytic_mse_rejects_overflowed_variance() {
        let spectrum = Spectrum::exponential(1.0).unwrap();
        let cond = SourceCondition::Logarithmic { p: 1.0 };
        let err = analytic_mse(&spectrum, &cond, 1.0, 700, 0.1).unwrap_err();
        assert!(matches!(err, Error::VarianceOverflow { .. }));
    }

    #[test]
    fn exp_variance_bias_ratio_shrinks_along_grid() {
        // At the theorem's balancing level the variance term becomes
        // negligible relative to the bias term as delta shrinks.
        let (a, p, rho) = (1.0, 2.0, 1.0);
        let spectrum = Spectrum::exponential(a).unwrap();
        let cond = SourceCondition::Logarithmic { p };
        let mut prev = f64::INFINITY;
        for e in 3..=8 {
            let delta = 10f64.powi(-e);
            let y = p * (std::f64::consts::E - 1.0) * a.powf(-(p + 1.0)) * (rho / delta).powi(2);
            let k = solve_power_exp(a, p + 1.0, y).unwrap().round() as usize;
            let (v, b) = analytic_mse(&spectrum, &cond, rho, k, delta).unwrap();
            let ratio = v / b;
            assert!(ratio < prev, "delta=1e-{e}: ratio {ratio} vs prev {prev}");
            prev = ratio;
        }
    }
}
