use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kahan::{kahan_sum, KahanSum};
use crate::model::Observation;
use crate::spectrum::Spectrum;

/// Search policy for the discretization level m.
///
/// `FixedM` tries every m up to the given bound (clamped to the data
/// length). `NormBound` scans up to the largest m with sqrt(m)*delta <=
/// sigma_m * r, the level where measurement error starts to dominate a
/// signal of norm r; falls back to m = 1 when no level qualifies.
/// `Heuristic` grows m geometrically and stops once the stopping index
/// stays below theta*m at `window` consecutive checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum MPolicy {
    FixedM {
        m: usize,
    },
    NormBound {
        r: f64,
    },
    Heuristic {
        #[serde(default = "default_theta")]
        theta: f64,
        #[serde(default = "default_window")]
        window: usize,
        #[serde(default = "default_growth")]
        growth: f64,
        /// None means the observation length.
        #[serde(default)]
        cap: Option<usize>,
    },
}

fn default_theta() -> f64 {
    0.1
}

fn default_window() -> usize {
    3
}

fn default_growth() -> f64 {
    2.0
}

impl MPolicy {
    pub fn heuristic_defaults() -> Self {
        MPolicy::Heuristic {
            theta: default_theta(),
            window: default_window(),
            growth: default_growth(),
            cap: None,
        }
    }
}

/// Threshold multiplier and level-search policy for the stopping rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpConfig {
    pub tau: f64,
    pub m_policy: MPolicy,
}

impl DpConfig {
    pub fn validate(&self) -> Result<()> {
        validate_tau(self.tau)?;
        match self.m_policy {
            MPolicy::FixedM { m } => {
                if m == 0 {
                    return Err(Error::invalid("level bound m must be >= 1"));
                }
            }
            MPolicy::NormBound { r } => {
                if !(r.is_finite() && r > 0.0) {
                    return Err(Error::invalid(format!("norm bound must be > 0, got {r}")));
                }
            }
            MPolicy::Heuristic {
                theta,
                window,
                growth,
                cap,
            } => {
                if !(theta.is_finite() && 0.0 < theta && theta < 1.0) {
                    return Err(Error::invalid(format!(
                        "heuristic threshold must lie in (0,1), got {theta}"
                    )));
                }
                if window == 0 {
                    return Err(Error::invalid("heuristic window must be >= 1"));
                }
                if !(growth.is_finite() && growth > 1.0) {
                    return Err(Error::invalid(format!(
                        "heuristic growth must be > 1, got {growth}"
                    )));
                }
                if cap == Some(0) {
                    return Err(Error::invalid("heuristic cap must be >= 1"));
                }
            }
        }
        Ok(())
    }
}

fn validate_tau(tau: f64) -> Result<()> {
    if !(tau.is_finite() && tau > 1.0) {
        return Err(Error::invalid(format!(
            "threshold multiplier tau must be > 1, got {tau}"
        )));
    }
    Ok(())
}

/// Outcome of the level-maximized stopping rule.
#[derive(Debug, Clone, PartialEq)]
pub struct DpResult {
    /// max over evaluated m of the per-level stopping index.
    pub k_dp: usize,
    /// Every (m, k(m)) actually evaluated, in evaluation order.
    pub trace: Vec<(usize, usize)>,
    /// Largest m evaluated.
    pub m_searched: usize,
    /// First m attaining the maximum.
    pub argmax_m: usize,
}

/// Compensated prefix sums of squares: out[k] = sum of y[..k]^2.
fn prefix_squares(y: &[f64]) -> Vec<f64> {
    let mut acc = KahanSum::new();
    let mut out = Vec::with_capacity(y.len() + 1);
    out.push(0.0);
    for &v in y {
        acc.add(v * v);
        out.push(acc.total());
    }
    out
}

/// Smallest k in 0..=m whose data tail past k is within the threshold:
/// P(k) >= P(m) - tau^2 m delta^2, found by binary search over the
/// nondecreasing prefix array. k = m always qualifies (empty tail).
fn index_from_prefix(prefix: &[f64], delta: f64, tau: f64, m: usize) -> usize {
    let threshold = prefix[m] - tau * tau * m as f64 * delta * delta;
    prefix[..=m].partition_point(|&p| p < threshold)
}

/// Stopping index for a single discretization level m: the smallest
/// 0 <= k <= m with sqrt(sum_{j=k+1..m} y_j^2) <= tau sqrt(m) delta.
pub fn discrepancy_index(y: &[f64], delta: f64, tau: f64, m: usize) -> Result<usize> {
    validate_tau(tau)?;
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::invalid(format!("noise level must be > 0, got {delta}")));
    }
    if m == 0 || m > y.len() {
        return Err(Error::invalid(format!(
            "level m = {m} out of range 1..={}",
            y.len()
        )));
    }
    let prefix = prefix_squares(&y[..m]);
    Ok(index_from_prefix(&prefix, delta, tau, m))
}

fn norm_bound_limit(obs: &Observation, spectrum: &Spectrum, r: f64) -> Result<usize> {
    let scan = obs.n().min(spectrum.max_index().unwrap_or(usize::MAX));
    let mut best = None;
    for m in 1..=scan {
        let sigma = spectrum.singular_value(m)?;
        if (m as f64).sqrt() * obs.delta <= sigma * r {
            best = Some(m);
        }
    }
    Ok(best.unwrap_or(1))
}

/// Runs the stopping rule at every level the policy selects and takes the
/// maximum. The returned trace lists every level actually evaluated.
pub fn modified_discrepancy(
    obs: &Observation,
    cfg: &DpConfig,
    spectrum: &Spectrum,
) -> Result<DpResult> {
    cfg.validate()?;
    let n = obs.n();
    if n == 0 {
        return Err(Error::invalid("empty observation"));
    }
    let prefix = prefix_squares(&obs.y);

    let mut trace = Vec::new();
    let mut eval = |m: usize| -> usize {
        let k = index_from_prefix(&prefix, obs.delta, cfg.tau, m);
        trace.push((m, k));
        k
    };

    match cfg.m_policy {
        MPolicy::FixedM { m } => {
            let limit = m.min(n);
            for lvl in 1..=limit {
                eval(lvl);
            }
        }
        MPolicy::NormBound { r } => {
            let limit = norm_bound_limit(obs, spectrum, r)?;
            for lvl in 1..=limit {
                eval(lvl);
            }
        }
        MPolicy::Heuristic {
            theta,
            window,
            growth,
            cap,
        } => {
            let limit = cap.unwrap_or(n).min(n);
            let mut below = 0usize;
            let mut exp = 0i32;
            let mut checkpoint = 1usize;
            let mut m = 1usize;
            while m <= limit {
                let k = eval(m);
                if m == checkpoint || m == limit {
                    if (k as f64) < theta * m as f64 {
                        below += 1;
                        if below >= window {
                            break;
                        }
                    } else {
                        below = 0;
                    }
                    checkpoint = next_checkpoint(&mut exp, growth, m, limit);
                }
                m += 1;
            }
        }
    }

    let (mut k_dp, mut argmax_m) = (0usize, trace[0].0);
    for &(m, k) in &trace {
        if k > k_dp {
            k_dp = k;
            argmax_m = m;
        }
    }
    let m_searched = trace.iter().map(|&(m, _)| m).max().unwrap();
    Ok(DpResult {
        k_dp,
        trace,
        m_searched,
        argmax_m,
    })
}

/// First checkpoint ceil(growth^i) strictly past `after`, clamped to `cap`.
fn next_checkpoint(exp: &mut i32, growth: f64, after: usize, cap: usize) -> usize {
    loop {
        *exp += 1;
        let raw = growth.powi(*exp).ceil();
        if !raw.is_finite() || raw >= cap as f64 {
            return cap;
        }
        if raw as usize > after {
            return raw as usize;
        }
    }
}

/// Truncated estimate: the first k coefficients y_j / sigma_j.
pub fn cutoff_estimate(obs: &Observation, spectrum: &Spectrum, k: usize) -> Result<Vec<f64>> {
    if k > obs.n() {
        return Err(Error::invalid(format!(
            "cut-off {k} exceeds observation length {}",
            obs.n()
        )));
    }
    let mut est = Vec::with_capacity(k);
    for j in 1..=k {
        est.push(obs.y[j - 1] / spectrum.singular_value(j)?);
    }
    Ok(est)
}

/// Squared error split into its two sources. `total` is the root of the
/// sum; `approximation_sq` includes the representation tail bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorBreakdown {
    pub data_propagation_sq: f64,
    pub approximation_sq: f64,
}

impl ErrorBreakdown {
    pub fn total(&self) -> f64 {
        (self.data_propagation_sq + self.approximation_sq).sqrt()
    }
}

/// Error of a truncated estimate against the represented truth, with the
/// worst-case tail of the unrepresented coefficients added in squared form.
pub fn estimation_error(estimate: &[f64], xhat: &[f64], tail_sq: f64) -> Result<ErrorBreakdown> {
    if estimate.len() > xhat.len() {
        return Err(Error::invalid(format!(
            "estimate has {} coefficients but the truth only {}",
            estimate.len(),
            xhat.len()
        )));
    }
    if !(tail_sq.is_finite() && tail_sq >= 0.0) {
        return Err(Error::invalid(format!("tail bound must be >= 0, got {tail_sq}")));
    }
    let k = estimate.len();
    let data = kahan_sum(
        estimate
            .iter()
            .zip(xhat)
            .map(|(&e, &x)| (e - x) * (e - x)),
    );
    let approx = kahan_sum(xhat[k..].iter().map(|&x| x * x));
    Ok(ErrorBreakdown {
        data_propagation_sq: data,
        approximation_sq: approx + tail_sq,
    })
}

/// Two-column text form of a stopping trace, one "m k" row per level.
pub fn trace_lines(trace: &[(usize, usize)]) -> String {
    let mut out = String::new();
    for &(m, k) in trace {
        out.push_str(&format!("{m} {k}\n"));
    }
    out
}

pub fn write_trace(trace: &[(usize, usize)], path: &Path) -> Result<()> {
    fs::write(path, trace_lines(trace)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NoiseKind;

    fn obs(y: &[f64], delta: f64) -> Observation {
        Observation {
            y: y.to_vec(),
            delta,
            noise: NoiseKind::Gaussian,
            seed: 0,
        }
    }

    /// The definition, evaluated literally with naive sums.
    fn literal_index(y: &[f64], delta: f64, tau: f64, m: usize) -> usize {
        for k in 0..=m {
            let tail: f64 = y[k..m].iter().map(|v| v * v).sum();
            if tail.sqrt() <= tau * (m as f64).sqrt() * delta {
                return k;
            }
        }
        m
    }

    #[test]
    fn zeros_stop_at_zero() {
        let y = [0.0; 7];
        assert_eq!(discrepancy_index(&y, 0.5, 1.2, 7).unwrap(), 0);
    }

    #[test]
    fn hand_example_three_terms() {
        // sqrt(14) > 1.5*sqrt(3) at k=0, sqrt(5) <= it at k=1.
        let y = [3.0, 2.0, 1.0];
        assert_eq!(discrepancy_index(&y, 1.0, 1.5, 3).unwrap(), 1);
    }

    #[test]
    fn hand_example_scaled_by_ten() {
        let y = [30.0, 20.0, 10.0];
        assert_eq!(discrepancy_index(&y, 10.0, 1.5, 3).unwrap(), 1);
    }

    #[test]
    fn rejects_bad_parameters() {
        let y = [1.0, 2.0];
        assert!(discrepancy_index(&y, 1.0, 1.0, 2).is_err());
        assert!(discrepancy_index(&y, 0.0, 1.5, 2).is_err());
        assert!(discrepancy_index(&y, 1.0, 1.5, 3).is_err());
        assert!(discrepancy_index(&y, 1.0, 1.5, 0).is_err());
    }

    #[test]
    fn matches_literal_scan_on_random_data() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1213);
        for _ in 0..200 {
            let n = rng.random_range(1..=64);
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let delta = rng.random_range(0.05..2.0);
            let tau = rng.random_range(1.0001..3.0);
            for m in 1..=n {
                let fast = discrepancy_index(&y, delta, tau, m).unwrap();
                let slow = literal_index(&y, delta, tau, m);
                assert_eq!(fast, slow, "n={n} m={m} delta={delta} tau={tau}");
            }
        }
    }

    #[test]
    fn modified_hand_example_with_trace() {
        let o = obs(&[10.0, 0.0, 3.0, 0.0, 0.0], 1.0);
        let spectrum = Spectrum::polynomial(1.0).unwrap();
        let cfg = DpConfig {
            tau: 1.5,
            m_policy: MPolicy::FixedM { m: 5 },
        };
        let res = modified_discrepancy(&o, &cfg, &spectrum).unwrap();
        assert_eq!(res.k_dp, 3);
        assert_eq!(res.argmax_m, 3);
        assert_eq!(res.m_searched, 5);
        assert_eq!(res.trace, vec![(1, 1), (2, 1), (3, 3), (4, 1), (5, 1)]);
    }

    #[test]
    fn modified_zeros() {
        let o = obs(&[0.0; 6], 0.3);
        let spectrum = Spectrum::polynomial(1.0).unwrap();
        let cfg = DpConfig {
            tau: 2.0,
            m_policy: MPolicy::FixedM { m: 6 },
        };
        let res = modified_discrepancy(&o, &cfg, &spectrum).unwrap();
        assert_eq!(res.k_dp, 0);
        assert_eq!(res.argmax_m, 1);
    }

    #[test]
    fn single_level_scalar_case() {
        let o = obs(&[0.9, 5.0], 1.0);
        let spectrum = Spectrum::polynomial(1.0).unwrap();
        let cfg = DpConfig {
            tau: 1.5,
            m_policy: MPolicy::FixedM { m: 1 },
        };
        // |y_1| = 0.9 <= tau*delta = 1.5.
        let res = modified_discrepancy(&o, &cfg, &spectrum).unwrap();
        assert_eq!(res.k_dp, 0);
        assert_eq!(res.trace, vec![(1, 0)]);
    }

    #[test]
    fn fixed_m_max_equals_per_level_max() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        let spectrum = Spectrum::polynomial(1.0).unwrap();
        for _ in 0..100 {
            let n = rng.random_range(1..=64);
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-4.0..4.0)).collect();
            let delta = rng.random_range(0.05..1.5);
            let tau = rng.random_range(1.01..3.0);
            let o = obs(&y, delta);
            let cfg = DpConfig {
                tau,
                m_policy: MPolicy::FixedM { m: n },
            };
            let res = modified_discrepancy(&o, &cfg, &spectrum).unwrap();
            let brute = (1..=n)
                .map(|m| discrepancy_index(&y, delta, tau, m).unwrap())
                .max()
                .unwrap();
            assert_eq!(res.k_dp, brute);
        }
    }

    #[test]
    fn norm_bound_limits_search() {
        // sigma_m = m^{-1/2}; sqrt(m)*delta <= sigma_m*r iff m <= r/delta.
        let spectrum = Spectrum::polynomial(1.0).unwrap();
        let o = obs(&[1.0; 20], 0.5);
        let cfg = DpConfig {
            tau: 1.5,
            m_policy: MPolicy::NormBound { r: 3.0 },
        };
        let res = modified_discrepancy(&o, &cfg, &spectrum).unwrap();
        assert_eq!(res.m_searched, 6);
        assert_eq!(res.trace.len(), 6);
    }

    #[test]
    fn norm_bound_falls_back_to_one() {
        let spectrum = Spectrum::exponential(3.0).unwrap();
        let o = obs(&[1.0; 10], 50.0);
        let cfg = DpConfig {
            tau: 1.5,
            m_policy: MPolicy::NormBound { r: 0.1 },
        };
        let res = modified_discrepancy(&o, &cfg, &spectrum).unwrap();
        assert_eq!(res.m_searched, 1);
    }

    #[test]
    fn heuristic_stops_on_quiet_tail() {
        // One strong coefficient, then silence: k(m)/m shrinks quickly.
        let mut y = vec![0.0; 4096];
        y[0] = 100.0;
        let o = obs(&y, 1.0);
        let spectrum = Spectrum::polynomial(1.0).unwrap();
        let cfg = DpConfig {
            tau: 1.5,
            m_policy: MPolicy::heuristic_defaults(),
        };
        let res = modified_discrepancy(&o, &cfg, &spectrum).unwrap();
        assert_eq!(res.k_dp, 1);
        // Stopped well before the cap.
        assert!(res.m_searched < 1024, "searched {}", res.m_searched);
        // All intermediate levels are in the trace.
        assert_eq!(res.trace.len(), res.m_searched);
        for (i, &(m, _)) in res.trace.iter().enumerate() {
            assert_eq!(m, i + 1);
        }
    }

    #[test]
    fn heuristic_honors_cap() {
        let o = obs(&vec![10.0; 64], 0.01);
        let spectrum = Spectrum::polynomial(1.0).unwrap();
        let cfg = DpConfig {
            tau: 1.5,
            m_policy: MPolicy::Heuristic {
                theta: 0.1,
                window: 3,
                growth: 2.0,
                cap: Some(9),
            },
        };
        let res = modified_discrepancy(&o, &cfg, &spectrum).unwrap();
        assert_eq!(res.m_searched, 9);
    }

    #[test]
    fn tau_monotonicity() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5150);
        for _ in 0..200 {
            let n = rng.random_range(1..=48);
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let delta = rng.random_range(0.05..1.0);
            let t1 = rng.random_range(1.001..2.0);
            let t2 = t1 + rng.random_range(0.0001..1.0);
            let m = rng.random_range(1..=n);
            let k1 = discrepancy_index(&y, delta, t1, m).unwrap();
            let k2 = discrepancy_index(&y, delta, t2, m).unwrap();
            assert!(k2 <= k1, "tau {t1} -> k {k1}, tau {t2} -> k {k2}");
        }
    }

    #[test]
    fn scale_invariance_power_of_two() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let spectrum = Spectrum::polynomial(1.0).unwrap();
        for _ in 0..100 {
            let n = rng.random_range(1..=32);
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let delta = rng.random_range(0.05..1.0);
            let tau = rng.random_range(1.01..3.0);
            let c = [0.25, 0.5, 2.0, 4.0, 1024.0][rng.random_range(0..5)];
            let scaled: Vec<f64> = y.iter().map(|v| v * c).collect();
            let cfg = DpConfig {
                tau,
                m_policy: MPolicy::FixedM { m: n },
            };
            let a = modified_discrepancy(&obs(&y, delta), &cfg, &spectrum).unwrap();
            let b = modified_discrepancy(&obs(&scaled, delta * c), &cfg, &spectrum).unwrap();
            assert_eq!(a.k_dp, b.k_dp);
            assert_eq!(a.trace, b.trace);
        }
    }

    #[test]
    fn estimate_hand_values() {
        let spectrum = Spectrum::polynomial(2.0).unwrap();
        let o = obs(&[1.0, 1.0], 0.1);
        assert!(cutoff_estimate(&o, &spectrum, 0).unwrap().is_empty());
        let est = cutoff_estimate(&o, &spectrum, 2).unwrap();
        assert!((est[0] - 1.0).abs() < 1e-15);
        assert!((est[1] - 2.0).abs() < 1e-15);
        assert!(cutoff_estimate(&o, &spectrum, 3).is_err());
    }

    #[test]
    fn noiseless_estimate_recovers_solution() {
        use crate::model::{forward, make_solution, Profile, SolutionSpec, SourceCondition};
        let spec = SolutionSpec {
            condition: SourceCondition::Hoelder { nu: 1.0 },
            rho: 1.0,
            profile: Profile::PowerDecay { s: 1.0 },
            n_rep: 32,
        };
        let spectrum = Spectrum::polynomial(2.0).unwrap();
        let xhat = make_solution(&spec, &spectrum).unwrap();
        let y = forward(&xhat, &spectrum).unwrap();
        let o = obs(&y, 1.0);
        let est = cutoff_estimate(&o, &spectrum, 32).unwrap();
        for (e, x) in est.iter().zip(&xhat) {
            assert!((e - x).abs() <= 1e-14 * x.abs());
        }
    }

    #[test]
    fn error_breakdown_hand_values() {
        let b = estimation_error(&[], &[3.0, 4.0], 0.0).unwrap();
        assert_eq!(b.total(), 5.0);
        assert_eq!(b.data_propagation_sq, 0.0);

        let b = estimation_error(&[1.0], &[0.0, 2.0], 0.0).unwrap();
        assert!((b.total() - 5.0f64.sqrt()).abs() < 1e-15);
        assert_eq!(b.data_propagation_sq, 1.0);
        assert_eq!(b.approximation_sq, 4.0);

        let xhat = [1.0, 0.5, 0.25];
        let b = estimation_error(&xhat, &xhat, 0.0).unwrap();
        assert_eq!(b.total(), 0.0);

        assert!(estimation_error(&[1.0, 1.0], &[1.0], 0.0).is_err());
        assert!(estimation_error(&[1.0], &[1.0, 1.0], -0.5).is_err());
    }

    #[test]
    fn trace_text_is_two_columns() {
        assert_eq!(trace_lines(&[(1, 1), (2, 1), (3, 3)]), "1 1\n2 1\n3 3\n");
    }
}
