use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use speccut::discrepancy::{
    cutoff_estimate, modified_discrepancy, trace_lines, write_trace, DpConfig, MPolicy,
};
use speccut::error::{Error, Result};
use speccut::experiment::{
    run_experiment, summarize, write_records_csv, write_summary_json, ExperimentConfig,
};
use speccut::fmt::fmt_g17;
use speccut::model::{NoiseKind, Observation};
use speccut::spectrum::Spectrum;
use speccut::theory::{
    apriori_k_poly, m_opt_exp, rate_constant_poly, rate_exp, rate_poly, RateClass, RateSpec,
};

/// Spectral cut-off estimation with a data-driven discrepancy stopping rule.
#[derive(Parser)]
#[command(name = "speccut", version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a Monte Carlo experiment described by a JSON config file
    Simulate {
        /// Path to the experiment config (JSON)
        #[arg(long)]
        config: PathBuf,
        /// Directory receiving records.csv and summary.json
        #[arg(long, env = "SPECCUT_OUT_DIR", default_value = ".")]
        out: PathBuf,
        /// Override the config's root seed
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Apply the stopping rule to a data file with rows "j sigma_j y_j"
    Estimate {
        #[arg(long)]
        data: PathBuf,
        /// Noise level of the data
        #[arg(long)]
        delta: f64,
        /// Threshold multiplier (> 1)
        #[arg(long)]
        tau: f64,
        #[command(flatten)]
        policy: PolicyArgs,
        /// Directory receiving estimate.txt and trace.txt
        #[arg(long, env = "SPECCUT_OUT_DIR", default_value = ".")]
        out: PathBuf,
    },
    /// Print closed-form oracle values for a decay class
    Theory {
        #[command(subcommand)]
        class: TheoryClass,
    },
    /// Print the (m, k(m)) curve for a data file without estimating
    Trace {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        tau: f64,
        #[command(flatten)]
        policy: PolicyArgs,
    },
}

#[derive(Subcommand)]
enum TheoryClass {
    /// Polynomial decay sigma_j^2 = j^{-q} with a hoelder source
    Poly {
        #[arg(long)]
        nu: f64,
        #[arg(long)]
        q: f64,
        #[arg(long)]
        rho: f64,
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        tau: f64,
    },
    /// Exponential decay sigma_j^2 = e^{-aj} with a logarithmic source
    Exp {
        #[arg(long)]
        p: f64,
        #[arg(long)]
        a: f64,
        #[arg(long)]
        rho: f64,
        #[arg(long)]
        delta: f64,
    },
}

/// Level-search policy; at most one may be given, default is a full scan.
#[derive(Args)]
struct PolicyArgs {
    /// Scan every level up to M
    #[arg(long, conflicts_with_all = ["norm_bound", "heuristic"])]
    fixed_m: Option<usize>,
    /// Scan up to the largest m with sqrt(m)*delta <= sigma_m * R
    #[arg(long, conflicts_with = "heuristic")]
    norm_bound: Option<f64>,
    /// Grow the level geometrically and stop once the curve flattens
    #[arg(long)]
    heuristic: bool,
}

impl PolicyArgs {
    fn to_policy(&self, n: usize) -> MPolicy {
        if let Some(m) = self.fixed_m {
            MPolicy::FixedM { m }
        } else if let Some(r) = self.norm_bound {
            MPolicy::NormBound { r }
        } else if self.heuristic {
            MPolicy::heuristic_defaults()
        } else {
            MPolicy::FixedM { m: n }
        }
    }
}

/// Rows "j sigma_j y_j" (whitespace or comma separated), indices
/// consecutive from 1, sigma positive and non-increasing. Blank lines and
/// '#' comments are skipped; one leading header line is tolerated.
fn load_data_file(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut sigma: Vec<f64> = Vec::new();
    let mut y = Vec::new();
    let mut header_allowed = true;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let malformed = |msg: String| Error::Malformed {
            path: path.to_owned(),
            line: lineno + 1,
            msg,
        };
        let cleaned = line.replace(',', " ");
        let fields: Vec<&str> = cleaned.split_whitespace().collect();
        let parsed: Option<(usize, f64, f64)> = if fields.len() == 3 {
            match (fields[0].parse(), fields[1].parse(), fields[2].parse()) {
                (Ok(j), Ok(s), Ok(v)) => Some((j, s, v)),
                _ => None,
            }
        } else {
            None
        };
        let Some((j, s, v)) = parsed else {
            if header_allowed {
                header_allowed = false;
                continue;
            }
            return Err(malformed(format!("expected a row 'j sigma y', got '{line}'")));
        };
        header_allowed = false;
        if j != sigma.len() + 1 {
            return Err(malformed(format!("expected index {}, got {j}", sigma.len() + 1)));
        }
        if !(s.is_finite() && s > 0.0) {
            return Err(malformed(format!("singular value must be > 0, got {s}")));
        }
        if let Some(&prev) = sigma.last() {
            if s > prev {
                return Err(malformed(format!(
                    "singular values must not increase, got {prev} then {s}"
                )));
            }
        }
        if !v.is_finite() {
            return Err(malformed(format!("observation value must be finite, got {v}")));
        }
        sigma.push(s);
        y.push(v);
    }
    if sigma.is_empty() {
        return Err(Error::Malformed {
            path: path.to_owned(),
            line: 0,
            msg: "no data rows".into(),
        });
    }
    Ok((sigma, y))
}

fn stopping_run(
    data: &Path,
    delta: f64,
    tau: f64,
    policy: &PolicyArgs,
) -> Result<(Observation, Spectrum, speccut::discrepancy::DpResult)> {
    let (sigma, y) = load_data_file(data)?;
    let spectrum = Spectrum::table(sigma)?;
    let obs = Observation {
        y,
        delta,
        noise: NoiseKind::Gaussian,
        seed: 0,
    };
    let cfg = DpConfig {
        tau,
        m_policy: policy.to_policy(obs.n()),
    };
    let res = modified_discrepancy(&obs, &cfg, &spectrum)?;
    Ok((obs, spectrum, res))
}

fn cmd_simulate(config: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let text = fs::read_to_string(config).map_err(|e| Error::io(config, e))?;
    let mut cfg: ExperimentConfig = serde_json::from_str(&text)?;
    if let Some(s) = seed {
        cfg.root_seed = s;
    }
    cfg.validate()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let records = run_experiment(&cfg)?;
    let summary = summarize(&cfg, &records)?;
    let rec_path = out.join("records.csv");
    let sum_path = out.join("summary.json");
    write_records_csv(&records, &rec_path)?;
    write_summary_json(&summary, &sum_path)?;
    println!("wrote {} ({} rows)", rec_path.display(), records.len());
    println!("wrote {}", sum_path.display());
    if let Some(slope) = summary.rate_slope {
        println!("rate_slope = {slope}");
    }
    Ok(())
}

fn cmd_estimate(data: &Path, delta: f64, tau: f64, policy: &PolicyArgs, out: &Path) -> Result<()> {
    let (obs, spectrum, res) = stopping_run(data, delta, tau, policy)?;
    let est = cutoff_estimate(&obs, &spectrum, res.k_dp)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let est_path = out.join("estimate.txt");
    let mut body = String::new();
    for (i, v) in est.iter().enumerate() {
        body.push_str(&format!("{} {}\n", i + 1, fmt_g17(*v)));
    }
    fs::write(&est_path, body).map_err(|e| Error::io(&est_path, e))?;
    let trace_path = out.join("trace.txt");
    write_trace(&res.trace, &trace_path)?;
    println!("k_dp = {}", res.k_dp);
    println!("wrote {}", est_path.display());
    println!("wrote {}", trace_path.display());
    Ok(())
}

fn cmd_theory(class: &TheoryClass) -> Result<()> {
    match *class {
        TheoryClass::Poly {
            nu,
            q,
            rho,
            delta,
            tau,
        } => {
            let spec = RateSpec {
                class: RateClass::Poly { nu, q },
                rho,
                delta,
            };
            let k = apriori_k_poly(&spec)?;
            let rate = rate_poly(&spec)?;
            let l = rate_constant_poly(tau, nu, q)?;
            println!("k={k}");
            println!("rate={rate}");
            println!("L={l}");
        }
        TheoryClass::Exp { p, a, rho, delta } => {
            let m_opt = m_opt_exp(delta, rho, p, a)?;
            let spec = RateSpec {
                class: RateClass::Exp { p, a },
                rho,
                delta,
            };
            let rate = rate_exp(&spec)?;
            println!("m_opt={m_opt}");
            println!("rate={rate}");
        }
    }
    Ok(())
}

fn cmd_trace(data: &Path, delta: f64, tau: f64, policy: &PolicyArgs) -> Result<()> {
    let (_, _, res) = stopping_run(data, delta, tau, policy)?;
    print!("{}", trace_lines(&res.trace));
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Simulate { config, out, seed } => cmd_simulate(&config, &out, seed),
        Cmd::Estimate {
            data,
            delta,
            tau,
            policy,
            out,
        } => cmd_estimate(&data, delta, tau, &policy, &out),
        Cmd::Theory { class } => cmd_theory(&class),
        Cmd::Trace {
            data,
            delta,
            tau,
            policy,
        } => cmd_trace(&data, delta, tau, &policy),
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Io { .. } => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}
