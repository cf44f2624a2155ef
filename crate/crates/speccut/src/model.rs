use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmt::fmt_g17;
use crate::kahan::kahan_sum;
use crate::spectrum::Spectrum;

/// Smoothness class of the true solution relative to the spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SourceCondition {
    Hoelder { nu: f64 },
    Logarithmic { p: f64 },
}

/// Direction of the solution inside the source ball of radius rho.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Profile {
    /// Equal weight on the first `j` components.
    FlatJ { j: usize },
    /// Weights proportional to j^{-s}, normalized to the full radius.
    PowerDecay {
        #[serde(default = "default_power_decay_s")]
        s: f64,
    },
    /// Uniformly random direction, scaled to the full radius.
    RandomSphere { seed: u64 },
}

fn default_power_decay_s() -> f64 {
    1.0
}

/// Recipe for the true solution: condition, radius, direction, and the
/// finite representation length. Coefficients beyond `n_rep` are not
/// stored; their worst-case contribution is carried as `tail_bound`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionSpec {
    pub condition: SourceCondition,
    pub rho: f64,
    pub profile: Profile,
    pub n_rep: usize,
}

impl SolutionSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho.is_finite() && self.rho >= 0.0) {
            return Err(Error::invalid(format!(
                "source radius must be a finite nonnegative number, got {}",
                self.rho
            )));
        }
        if self.n_rep == 0 {
            return Err(Error::invalid("representation length must be >= 1"));
        }
        match self.condition {
            SourceCondition::Hoelder { nu } => {
                if !(nu.is_finite() && nu > 0.0) {
                    return Err(Error::invalid(format!("hoelder exponent must be > 0, got {nu}")));
                }
            }
            SourceCondition::Logarithmic { p } => {
                if !(p.is_finite() && p > 0.0) {
                    return Err(Error::invalid(format!(
                        "logarithmic exponent must be > 0, got {p}"
                    )));
                }
            }
        }
        match self.profile {
            Profile::FlatJ { j } => {
                if j == 0 {
                    return Err(Error::invalid("flat profile width must be >= 1"));
                }
                if j > self.n_rep {
                    return Err(Error::invalid(format!(
                        "flat profile width {j} exceeds representation length {}",
                        self.n_rep
                    )));
                }
            }
            Profile::PowerDecay { s } => {
                if !(s.is_finite() && s > 0.5) {
                    return Err(Error::invalid(format!(
                        "power-decay exponent must be > 1/2, got {s}"
                    )));
                }
            }
            Profile::RandomSphere { .. } => {}
        }
        Ok(())
    }
}

fn xi_profile(spec: &SolutionSpec) -> Result<Vec<f64>> {
    let n = spec.n_rep;
    match spec.profile {
        Profile::FlatJ { j } => {
            let w = spec.rho / (j as f64).sqrt();
            let mut xi = vec![0.0; n];
            for x in xi.iter_mut().take(j) {
                *x = w;
            }
            Ok(xi)
        }
        Profile::PowerDecay { s } => {
            let norm_sq = kahan_sum((1..=n).map(|j| (j as f64).powf(-2.0 * s)));
            let c = spec.rho / norm_sq.sqrt();
            Ok((1..=n).map(|j| c * (j as f64).powf(-s)).collect())
        }
        Profile::RandomSphere { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let norm = kahan_sum(g.iter().map(|v| v * v)).sqrt();
            if norm == 0.0 {
                return Err(Error::invalid("degenerate random direction"));
            }
            let c = spec.rho / norm;
            Ok(g.into_iter().map(|v| c * v).collect())
        }
    }
}

/// Per-index smoothing factor linking the direction xi to the solution.
fn source_factor(condition: SourceCondition, spectrum: &Spectrum, j: usize) -> Result<f64> {
    match condition {
        SourceCondition::Hoelder { nu } => Ok(spectrum.singular_value(j)?.powf(nu)),
        SourceCondition::Logarithmic { p } => {
            let sq = spectrum.singular_value_sq(j)?;
            if sq >= 1.0 {
                return Err(Error::invalid(format!(
                    "logarithmic source condition needs sigma_j^2 < 1, violated at j = {j}"
                )));
            }
            Ok((-sq.ln()).powf(-p / 2.0))
        }
    }
}

/// Synthesizes the first `n_rep` coefficients of the true solution.
pub fn make_solution(spec: &SolutionSpec, spectrum: &Spectrum) -> Result<Vec<f64>> {
    spec.validate()?;
    spectrum.validate()?;
    let xi = xi_profile(spec)?;
    let mut xhat = Vec::with_capacity(spec.n_rep);
    for (i, &x) in xi.iter().enumerate() {
        xhat.push(source_factor(spec.condition, spectrum, i + 1)? * x);
    }
    Ok(xhat)
}

/// Worst-case squared norm of the discarded coefficients past `n_rep`.
/// Zero for a table spectrum that ends exactly at `n_rep`.
pub fn tail_bound(spec: &SolutionSpec, spectrum: &Spectrum) -> Result<f64> {
    spec.validate()?;
    if spectrum.max_index() == Some(spec.n_rep) {
        return Ok(0.0);
    }
    let f = source_factor(spec.condition, spectrum, spec.n_rep + 1)?;
    Ok(f * f * spec.rho * spec.rho)
}

/// Applies the diagonal forward map y_j = sigma_j * x_j.
pub fn forward(xhat: &[f64], spectrum: &Spectrum) -> Result<Vec<f64>> {
    let mut y = Vec::with_capacity(xhat.len());
    for (i, &x) in xhat.iter().enumerate() {
        y.push(spectrum.singular_value(i + 1)? * x);
    }
    Ok(y)
}

/// Unit-variance noise families admissible for the observation model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    #[default]
    Gaussian,
    Rademacher,
    UniformUnitVar,
}

impl FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(NoiseKind::Gaussian),
            "rademacher" => Ok(NoiseKind::Rademacher),
            "uniform_unit_var" | "uniform" => Ok(NoiseKind::UniformUnitVar),
            other => Err(Error::invalid(format!("unknown noise kind '{other}'"))),
        }
    }
}

/// Noisy discretized data y_j = yhat_j + delta * Z_j, j = 1..=n, together
/// with its provenance. Reconstructible bit-for-bit from (seed, kind, n).
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub y: Vec<f64>,
    pub delta: f64,
    pub noise: NoiseKind,
    pub seed: u64,
}

impl Observation {
    pub fn n(&self) -> usize {
        self.y.len()
    }
}

fn draw_noise(kind: NoiseKind, rng: &mut ChaCha8Rng) -> f64 {
    const SQRT_3: f64 = 1.7320508075688772;
    match kind {
        NoiseKind::Gaussian => rng.sample(StandardNormal),
        NoiseKind::Rademacher => {
            if rng.random::<bool>() {
                1.0
            } else {
                -1.0
            }
        }
        NoiseKind::UniformUnitVar => rng.random_range(-SQRT_3..SQRT_3),
    }
}

/// Draws the observation. `yhat` is zero-extended when shorter than `n`.
pub fn observe(yhat: &[f64], delta: f64, n: usize, kind: NoiseKind, seed: u64) -> Result<Observation> {
    if n == 0 {
        return Err(Error::invalid("observation length must be >= 1"));
    }
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::invalid(format!("noise level must be > 0, got {delta}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y = Vec::with_capacity(n);
    for j in 0..n {
        let base = yhat.get(j).copied().unwrap_or(0.0);
        y.push(base + delta * draw_noise(kind, &mut rng));
    }
    Ok(Observation {
        y,
        delta,
        noise: kind,
        seed,
    })
}

fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream seed for work unit (`lane`, `member`) under `root`. Distinct
/// inputs give statistically independent ChaCha streams.
pub fn derive_stream_seed(root: u64, lane: u64, member: u64) -> u64 {
    mix64(mix64(mix64(root) ^ lane) ^ member)
}

#[derive(Serialize, Deserialize)]
struct ObservationMeta {
    delta: f64,
    noise_kind: NoiseKind,
    seed: u64,
    n: usize,
}

fn meta_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

/// Writes the values as two-column text (index, value) plus a JSON
/// sidecar `<path>.meta.json` holding delta, noise kind, seed, and n.
pub fn write_observation(obs: &Observation, path: &Path) -> Result<()> {
    let mut body = String::new();
    for (i, v) in obs.y.iter().enumerate() {
        body.push_str(&format!("{} {}\n", i + 1, fmt_g17(*v)));
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))?;

    let meta = ObservationMeta {
        delta: obs.delta,
        noise_kind: obs.noise,
        seed: obs.seed,
        n: obs.y.len(),
    };
    let mp = meta_path(path);
    let json = serde_json::to_string_pretty(&meta)?;
    fs::write(&mp, json + "\n").map_err(|e| Error::io(mp.clone(), e))?;
    Ok(())
}

/// Reads an observation written by `write_observation`.
pub fn read_observation(path: &Path) -> Result<Observation> {
    let mp = meta_path(path);
    let meta_text = fs::read_to_string(&mp).map_err(|e| Error::io(mp.clone(), e))?;
    let meta: ObservationMeta = serde_json::from_str(&meta_text)?;

    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut y = Vec::with_capacity(meta.n);
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let malformed = |msg: &str| Error::Malformed {
            path: path.to_owned(),
            line: lineno + 1,
            msg: msg.to_owned(),
        };
        let idx: usize = parts
            .next()
            .ok_or_else(|| malformed("missing index column"))?
            .parse()
            .map_err(|_| malformed("index is not an integer"))?;
        if idx != y.len() + 1 {
            return Err(malformed(&format!("expected index {}, got {idx}", y.len() + 1)));
        }
        let val: f64 = parts
            .next()
            .ok_or_else(|| malformed("missing value column"))?
            .parse()
            .map_err(|_| malformed("value is not a number"))?;
        if parts.next().is_some() {
            return Err(malformed("trailing fields"));
        }
        y.push(val);
    }
    if y.len() != meta.n {
        return Err(Error::Malformed {
            path: path.to_owned(),
            line: 0,
            msg: format!("expected {} rows per sidecar metadata, found {}", meta.n, y.len()),
        });
    }
    Ok(Observation {
        y,
        delta: meta.delta,
        noise: meta.noise_kind,
        seed: meta.seed,
    })
}
