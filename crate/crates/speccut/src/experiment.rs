use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discrepancy::{modified_discrepancy, DpConfig, MPolicy};
use crate::error::{Error, Result};
use crate::fmt::fmt_g17;
use crate::kahan::{kahan_sum, KahanSum};
use crate::model::{
    derive_stream_seed, forward, make_solution, observe, tail_bound, NoiseKind, SolutionSpec,
    SourceCondition,
};
use crate::spectrum::Spectrum;
use crate::theory::{
    apriori_k_poly, m_opt_exp, rate_constant_poly, rate_exp, rate_poly, RateClass, RateSpec,
};

/// Hindsight error minimization scans cut-offs up to this many levels.
pub const ORACLE_SCAN_CAP: usize = 5000;

/// Slack multiplier forming a finite-sample bound from the asymptotic
/// exponential-class rate, whose own constant is 1 + o(1) with no
/// finite-noise value.
pub const EXP_RATE_SLACK: f64 = 1.5;

/// Observation length: fixed, or derived per noise level so the search
/// region comfortably contains the theoretically optimal cut-off.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum NPolicy {
    Fixed { n: usize },
    Auto,
}

/// Full description of a Monte Carlo run. Everything downstream,
/// including noise, derives deterministically from `root_seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub spectrum: Spectrum,
    pub solution: SolutionSpec,
    pub delta_grid: Vec<f64>,
    pub replications: usize,
    pub dp: DpConfig,
    #[serde(default)]
    pub noise: NoiseKind,
    pub root_seed: u64,
    pub n_policy: NPolicy,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.spectrum.validate()?;
        self.solution.validate()?;
        self.dp.validate()?;
        if self.replications == 0 {
            return Err(Error::invalid("replication count must be >= 1"));
        }
        if self.delta_grid.is_empty() {
            return Err(Error::invalid("noise grid must not be empty"));
        }
        for (i, &d) in self.delta_grid.iter().enumerate() {
            if !(d.is_finite() && d > 0.0) {
                return Err(Error::invalid(format!("noise level {d} at position {i} must be > 0")));
            }
            if i > 0 && d >= self.delta_grid[i - 1] {
                return Err(Error::invalid("noise grid must be strictly decreasing"));
            }
        }
        if let Some(len) = self.spectrum.max_index() {
            if self.solution.n_rep > len {
                return Err(Error::invalid(format!(
                    "representation length {} exceeds table spectrum length {len}",
                    self.solution.n_rep
                )));
            }
        }
        for &delta in &self.delta_grid {
            let n = resolve_n(self, delta)?;
            if let Some(len) = self.spectrum.max_index() {
                if n > len {
                    return Err(Error::invalid(format!(
                        "observation length {n} at noise level {delta} exceeds table spectrum length {len}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Observation length for one noise level under the config's policy.
pub fn resolve_n(cfg: &ExperimentConfig, delta: f64) -> Result<usize> {
    let n = match cfg.n_policy {
        NPolicy::Fixed { n } => {
            if n == 0 {
                return Err(Error::invalid("observation length must be >= 1"));
            }
            n
        }
        NPolicy::Auto => match (&cfg.spectrum, cfg.solution.condition) {
            (&Spectrum::Polynomial { q }, SourceCondition::Hoelder { nu }) => {
                let spec = RateSpec {
                    class: RateClass::Poly { nu, q },
                    rho: cfg.solution.rho,
                    delta,
                };
                let k = apriori_k_poly(&spec)?;
                let hint = match cfg.dp.m_policy {
                    MPolicy::FixedM { m } => m,
                    // Largest m with sqrt(m)*delta <= m^{-q/2}*r.
                    MPolicy::NormBound { r } => {
                        ((r / delta).powf(2.0 / (q + 1.0)).floor() as usize).max(1)
                    }
                    MPolicy::Heuristic { cap, .. } => cap.unwrap_or(0),
                };
                hint.saturating_mul(4).max(k.saturating_mul(10))
            }
            (&Spectrum::Exponential { a }, SourceCondition::Logarithmic { p }) => {
                let m = m_opt_exp(delta, cfg.solution.rho, p, a)?;
                (4.0 * m).ceil().max(1.0) as usize
            }
            _ => {
                return Err(Error::invalid(
                    "automatic observation length is defined for a polynomial spectrum with a \
                     hoelder source or an exponential spectrum with a logarithmic source; \
                     use the fixed length policy otherwise",
                ))
            }
        },
    };
    if n > 50_000_000 {
        return Err(Error::invalid(format!("observation length {n} is unreasonably large")));
    }
    Ok(n)
}

/// Theoretically optimal cut-off for the configured class, when one is
/// defined for it.
fn theory_level(cfg: &ExperimentConfig, delta: f64) -> Option<usize> {
    match (&cfg.spectrum, cfg.solution.condition) {
        (&Spectrum::Polynomial { q }, SourceCondition::Hoelder { nu }) => {
            let spec = RateSpec {
                class: RateClass::Poly { nu, q },
                rho: cfg.solution.rho,
                delta,
            };
            apriori_k_poly(&spec).ok()
        }
        (&Spectrum::Exponential { a }, SourceCondition::Logarithmic { p }) => {
            m_opt_exp(delta, cfg.solution.rho, p, a)
                .ok()
                .map(|m| (m.ceil() as usize).max(1))
        }
        _ => None,
    }
}

/// Finite-sample error bound the stopping rule is measured against:
/// constant times the class rate. Only the two exact decay classes have
/// proven constants; other spectra get no bound.
fn theory_bound(cfg: &ExperimentConfig, delta: f64) -> Option<f64> {
    match (&cfg.spectrum, cfg.solution.condition) {
        (&Spectrum::Polynomial { q }, SourceCondition::Hoelder { nu }) => {
            let spec = RateSpec {
                class: RateClass::Poly { nu, q },
                rho: cfg.solution.rho,
                delta,
            };
            let rate = rate_poly(&spec).ok()?;
            let l = rate_constant_poly(cfg.dp.tau, nu, q).ok()?;
            Some(l * rate)
        }
        (&Spectrum::Exponential { a }, SourceCondition::Logarithmic { p }) => {
            let spec = RateSpec {
                class: RateClass::Exp { p, a },
                rho: cfg.solution.rho,
                delta,
            };
            rate_exp(&spec).ok().map(|r| EXP_RATE_SLACK * r)
        }
        _ => None,
    }
}

/// One replication's outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub delta: f64,
    pub rep: usize,
    pub k_dp: usize,
    pub err_dp: f64,
    pub err_oracle: f64,
    pub err_apriori: Option<f64>,
    pub bound: Option<f64>,
    pub within_bound: Option<bool>,
}

/// suffix[k] = sum of xhat[k..]^2, compensated; suffix[len] = 0.
fn suffix_squares(xhat: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; xhat.len() + 1];
    let mut acc = KahanSum::new();
    for j in (0..xhat.len()).rev() {
        acc.add(xhat[j] * xhat[j]);
        out[j] = acc.total();
    }
    out
}

struct DeltaPlan {
    delta: f64,
    n: usize,
    sigma: Vec<f64>,
    k_th: Option<usize>,
    bound: Option<f64>,
}

/// Runs the full grid: for every (noise level, replication) pair, draw an
/// observation, apply the stopping rule, and record its realized error
/// next to the hindsight-oracle and a-priori baselines. Deterministic
/// given the config; records are ordered by (grid position, replication).
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    let xhat = make_solution(&cfg.solution, &cfg.spectrum)?;
    let tail = tail_bound(&cfg.solution, &cfg.spectrum)?;
    let yhat = forward(&xhat, &cfg.spectrum)?;
    let suffix = suffix_squares(&xhat);

    let mut plans = Vec::with_capacity(cfg.delta_grid.len());
    for &delta in &cfg.delta_grid {
        let n = resolve_n(cfg, delta)?;
        let mut sigma = Vec::with_capacity(n);
        for j in 1..=n {
            sigma.push(cfg.spectrum.singular_value(j)?);
        }
        plans.push(DeltaPlan {
            delta,
            n,
            sigma,
            k_th: theory_level(cfg, delta),
            bound: theory_bound(cfg, delta),
        });
    }

    let jobs: Vec<(usize, usize)> = (0..plans.len())
        .flat_map(|di| (0..cfg.replications).map(move |r| (di, r)))
        .collect();

    jobs.par_iter()
        .map(|&(di, rep)| {
            let plan = &plans[di];
            let seed = derive_stream_seed(cfg.root_seed, di as u64, rep as u64);
            let obs = observe(&yhat, plan.delta, plan.n, cfg.noise, seed)?;
            let dp = modified_discrepancy(&obs, &cfg.dp, &cfg.spectrum)?;

            // Realized error for every cut-off at once: compensated
            // prefix of squared data deviations, shared solution suffix.
            let mut acc = KahanSum::new();
            let mut prefix = Vec::with_capacity(plan.n + 1);
            prefix.push(0.0);
            for j in 0..plan.n {
                let x = xhat.get(j).copied().unwrap_or(0.0);
                let d = obs.y[j] / plan.sigma[j] - x;
                acc.add(d * d);
                prefix.push(acc.total());
            }
            let suffix_at = |k: usize| suffix.get(k).copied().unwrap_or(0.0);
            let err_at = |k: usize| (prefix[k] + suffix_at(k) + tail).sqrt();

            let err_dp = err_at(dp.k_dp);
            // A-priori levels beyond the data are clamped to what is
            // observable.
            let err_apriori = plan.k_th.map(|k| err_at(k.min(plan.n)));
            let mut err_oracle = match err_apriori {
                Some(e) => err_dp.min(e),
                None => err_dp,
            };
            for k in 0..=plan.n.min(ORACLE_SCAN_CAP) {
                let e = err_at(k);
                if e < err_oracle {
                    err_oracle = e;
                }
            }

            Ok(RunRecord {
                delta: plan.delta,
                rep,
                k_dp: dp.k_dp,
                err_dp,
                err_oracle,
                err_apriori,
                bound: plan.bound,
                within_bound: plan.bound.map(|b| err_dp <= b),
            })
        })
        .collect()
}

/// Least-squares slope of log(error) against log(delta).
pub fn rate_regression(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::invalid("regression needs at least two points"));
    }
    for &(d, e) in points {
        if !(d.is_finite() && d > 0.0) {
            return Err(Error::invalid(format!("noise level must be > 0, got {d}")));
        }
        if !(e.is_finite() && e > 0.0) {
            return Err(Error::invalid(format!("error must be > 0 to take logs, got {e}")));
        }
    }
    if points.iter().all(|&(d, _)| d == points[0].0) {
        return Err(Error::invalid("regression needs at least two distinct noise levels"));
    }
    let lx: Vec<f64> = points.iter().map(|&(d, _)| d.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|&(_, e)| e.ln()).collect();
    let n = points.len() as f64;
    let mx = kahan_sum(lx.iter().copied()) / n;
    let my = kahan_sum(ly.iter().copied()) / n;
    let sxy = kahan_sum(lx.iter().zip(&ly).map(|(&x, &y)| (x - mx) * (y - my)));
    let sxx = kahan_sum(lx.iter().map(|&x| (x - mx) * (x - mx)));
    Ok(sxy / sxx)
}

/// Fraction of replications at the given noise level whose stopping-rule
/// error landed inside the theoretical bound.
pub fn coverage(records: &[RunRecord], delta: f64) -> Result<f64> {
    let selected: Vec<&RunRecord> = records.iter().filter(|r| r.delta == delta).collect();
    if selected.is_empty() {
        return Err(Error::invalid(format!("no records at noise level {delta}")));
    }
    let mut hits = 0usize;
    for r in &selected {
        match r.within_bound {
            Some(true) => hits += 1,
            Some(false) => {}
            None => {
                return Err(Error::invalid(
                    "records carry no theoretical bound for this configuration",
                ))
            }
        }
    }
    Ok(hits as f64 / selected.len() as f64)
}

/// Empirical vs analytic mean squared error at a fixed cut-off.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MseComparison {
    pub empirical: f64,
    pub analytic: f64,
    /// Gap between the two, in units of the empirical standard error.
    pub z_score: f64,
}

/// Monte Carlo check of the analytic error split at a fixed cut-off k,
/// run at the first (largest) noise level of the grid.
pub fn mse_vs_analytic(cfg: &ExperimentConfig, k: usize) -> Result<MseComparison> {
    cfg.validate()?;
    if cfg.replications < 100 {
        return Err(Error::invalid(
            "mean-squared-error comparison needs at least 100 replications",
        ));
    }
    let delta = cfg.delta_grid[0];
    let n = resolve_n(cfg, delta)?;
    if k > n {
        return Err(Error::invalid(format!("cut-off {k} exceeds observation length {n}")));
    }
    let xhat = make_solution(&cfg.solution, &cfg.spectrum)?;
    let tail = tail_bound(&cfg.solution, &cfg.spectrum)?;
    let yhat = forward(&xhat, &cfg.spectrum)?;
    let suffix = suffix_squares(&xhat);
    let suffix_at = |k: usize| suffix.get(k).copied().unwrap_or(0.0);
    let mut sigma = Vec::with_capacity(k);
    for j in 1..=k {
        sigma.push(cfg.spectrum.singular_value(j)?);
    }

    let vs = cfg.spectrum.variance_sum(k)?;
    if !vs.is_finite() {
        return Err(Error::VarianceOverflow { k });
    }
    let analytic = delta * delta * vs + suffix_at(k) + tail;

    let sq_errors: Vec<f64> = (0..cfg.replications)
        .into_par_iter()
        .map(|rep| {
            let seed = derive_stream_seed(cfg.root_seed, 0, rep as u64);
            let obs = observe(&yhat, delta, n, cfg.noise, seed)?;
            let mut acc = KahanSum::new();
            for j in 0..k {
                let x = xhat.get(j).copied().unwrap_or(0.0);
                let d = obs.y[j] / sigma[j] - x;
                acc.add(d * d);
            }
            Ok(acc.total() + suffix_at(k) + tail)
        })
        .collect::<Result<Vec<f64>>>()?;

    let r = sq_errors.len() as f64;
    let degenerate = sq_errors.iter().all(|&v| v == sq_errors[0]);
    let (empirical, se) = if degenerate {
        (sq_errors[0], 0.0)
    } else {
        let mean = kahan_sum(sq_errors.iter().copied()) / r;
        let var = kahan_sum(sq_errors.iter().map(|&v| (v - mean) * (v - mean))) / (r - 1.0);
        (mean, (var / r).sqrt())
    };
    let gap = empirical - analytic;
    let z_score = if se == 0.0 {
        if gap == 0.0 {
            0.0
        } else {
            f64::INFINITY.copysign(gap)
        }
    } else {
        gap / se
    };
    Ok(MseComparison {
        empirical,
        analytic,
        z_score,
    })
}

fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for t in i..=j {
            ranks[idx[t]] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Rank correlation with average ranks on ties; 0 when either side is
/// constant.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::invalid("rank correlation needs two equal-length nonempty sequences"));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::invalid("rank correlation needs finite inputs"));
    }
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    let n = ra.len() as f64;
    let ma = kahan_sum(ra.iter().copied()) / n;
    let mb = kahan_sum(rb.iter().copied()) / n;
    let cov = kahan_sum(ra.iter().zip(&rb).map(|(&x, &y)| (x - ma) * (y - mb)));
    let va = kahan_sum(ra.iter().map(|&x| (x - ma) * (x - ma)));
    let vb = kahan_sum(rb.iter().map(|&y| (y - mb) * (y - mb)));
    if va == 0.0 || vb == 0.0 {
        return Ok(0.0);
    }
    Ok(cov / (va * vb).sqrt())
}

/// Median; averages the middle pair for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    })
}

/// Per-noise-level aggregate of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaSummary {
    pub delta: f64,
    pub median_err_dp: f64,
    pub median_err_oracle: f64,
    pub median_err_apriori: Option<f64>,
    pub coverage: Option<f64>,
}

/// Run aggregate: config echo, per-level medians and coverage, and the
/// log-log slope of median error against noise level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config: ExperimentConfig,
    pub root_seed: u64,
    pub per_delta: Vec<DeltaSummary>,
    pub rate_slope: Option<f64>,
}

pub fn summarize(cfg: &ExperimentConfig, records: &[RunRecord]) -> Result<Summary> {
    let mut per_delta = Vec::with_capacity(cfg.delta_grid.len());
    for &delta in &cfg.delta_grid {
        let here: Vec<&RunRecord> = records.iter().filter(|r| r.delta == delta).collect();
        if here.is_empty() {
            return Err(Error::invalid(format!("no records at noise level {delta}")));
        }
        let dp: Vec<f64> = here.iter().map(|r| r.err_dp).collect();
        let oracle: Vec<f64> = here.iter().map(|r| r.err_oracle).collect();
        let apriori: Option<Vec<f64>> = here.iter().map(|r| r.err_apriori).collect();
        let cov = if here.iter().all(|r| r.within_bound.is_some()) {
            Some(coverage(records, delta)?)
        } else {
            None
        };
        per_delta.push(DeltaSummary {
            delta,
            median_err_dp: median(&dp).unwrap(),
            median_err_oracle: median(&oracle).unwrap(),
            median_err_apriori: apriori.as_deref().and_then(median),
            coverage: cov,
        });
    }
    let points: Vec<(f64, f64)> = per_delta
        .iter()
        .map(|d| (d.delta, d.median_err_dp))
        .collect();
    let rate_slope = rate_regression(&points).ok();
    Ok(Summary {
        config: cfg.clone(),
        root_seed: cfg.root_seed,
        per_delta,
        rate_slope,
    })
}

fn opt_to_field(v: Option<f64>) -> String {
    v.map(fmt_g17).unwrap_or_default()
}

/// CSV with one row per replication, floats at full precision.
pub fn records_to_csv(records: &[RunRecord]) -> String {
    let mut out = String::from("delta,rep,k_dp,err_dp,err_oracle,err_apriori,bound,within_bound\n");
    for r in records {
        let within = match r.within_bound {
            Some(true) => "true",
            Some(false) => "false",
            None => "",
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            fmt_g17(r.delta),
            r.rep,
            r.k_dp,
            fmt_g17(r.err_dp),
            fmt_g17(r.err_oracle),
            opt_to_field(r.err_apriori),
            opt_to_field(r.bound),
            within,
        ));
    }
    out
}

pub fn write_records_csv(records: &[RunRecord], path: &Path) -> Result<()> {
    fs::write(path, records_to_csv(records)).map_err(|e| Error::io(path, e))
}

pub fn read_records_csv(path: &Path) -> Result<Vec<RunRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let header = lines.next().map(|(_, l)| l).unwrap_or_default();
    if header != "delta,rep,k_dp,err_dp,err_oracle,err_apriori,bound,within_bound" {
        return Err(Error::Malformed {
            path: path.to_owned(),
            line: 1,
            msg: "unrecognized header".into(),
        });
    }
    let mut records = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let malformed = |msg: String| Error::Malformed {
            path: path.to_owned(),
            line: i + 1,
            msg,
        };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(malformed(format!("expected 8 fields, got {}", fields.len())));
        }
        let f = |s: &str, what: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| malformed(format!("{what} is not a number: '{s}'")))
        };
        let opt_f = |s: &str, what: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                f(s, what).map(Some)
            }
        };
        let within_bound = match fields[7] {
            "" => None,
            "true" => Some(true),
            "false" => Some(false),
            other => return Err(malformed(format!("bad boolean '{other}'"))),
        };
        records.push(RunRecord {
            delta: f(fields[0], "delta")?,
            rep: fields[1]
                .parse()
                .map_err(|_| malformed(format!("bad replication index '{}'", fields[1])))?,
            k_dp: fields[2]
                .parse()
                .map_err(|_| malformed(format!("bad cut-off '{}'", fields[2])))?,
            err_dp: f(fields[3], "err_dp")?,
            err_oracle: f(fields[4], "err_oracle")?,
            err_apriori: opt_f(fields[5], "err_apriori")?,
            bound: opt_f(fields[6], "bound")?,
            within_bound,
        });
    }
    Ok(records)
}

pub fn write_summary_json(summary: &Summary, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(summary)?;
    fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_summary_json(path: &Path) -> Result<Summary> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
