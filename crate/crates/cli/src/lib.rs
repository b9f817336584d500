//! Experiment configuration, dispatch and report emission for the `polarsrc`
//! command-line tool.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use polarsrc::gauss::GaussianKeySource;
use polarsrc::keygen::{
    derive_at_a, key_rate, keygen_construct, keygen_construct_exact, recover_with, secrecy_audit,
    AuditReport, AUDIT_MAX_BITS,
};
use polarsrc::layered::{
    layered_construct, layered_construct_exact, DiscreteObservations, LayerSelection,
    LayeredDecoder, LayeredSource, LayeredSpec, SymbolLikelihood,
};
use polarsrc::sim::{
    scaling_point, simulate_binary, simulate_gauss_keygen, simulate_keygen, simulate_layered,
    simulate_sw, trial_rng, ErrorCounts, KeyCounts, LayeredCounts, Sampler, ScalingPoint,
    SEED_DERIVATION,
};
use polarsrc::sw::{sw_construct, sw_construct_exact, MultiUserSource, SwCode};
use polarsrc::{
    construct_degraded, exact_construct, select_indices, BinParams, CodeSpec, JointSource,
    Selection,
};

/// Binning resolution used when no `k` is configured.
pub const DEFAULT_K: u32 = 64;

pub const DEFAULT_TARGET_ERROR: f64 = 1e-2;

/// Quantizer resolution for `Y` when constructing Gaussian key codes.
pub const DEFAULT_GAUSS_K_Y: usize = 64;

const MAX_N: u32 = 24;
const MAX_TRIALS: u64 = 1_000_000_000;

#[derive(Debug)]
pub enum CliError {
    /// Invalid configuration or input; exit code 2.
    Config(String),
    /// A resource budget would be exceeded; exit code 3.
    Budget(String),
    Other(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Budget(_) => 3,
            CliError::Other(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Budget(m) => write!(f, "resource budget exceeded: {m}"),
            CliError::Other(e) => write!(f, "{e:#}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<polarsrc::Error> for CliError {
    fn from(e: polarsrc::Error) -> Self {
        use polarsrc::Error as E;
        match e {
            E::BudgetExceeded { .. } => CliError::Budget(e.to_string()),
            E::Quadrature(_) => CliError::Other(e.into()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(e.into())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn config_err<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Config(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Construct,
    Encode,
    Decode,
    Simulate,
    Layered,
    Keygen,
    Gauss,
    Sw,
    Scaling,
}

impl Task {
    pub fn is_stochastic(self) -> bool {
        matches!(
            self,
            Task::Simulate | Task::Layered | Task::Keygen | Task::Sw | Task::Scaling
        )
    }
}

/// Where the source law comes from. File contents are stored inline so that a
/// report fully determines its reproduction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceSpec {
    /// Uniform `X` observed through a binary symmetric channel.
    Bsc { p: f64 },
    /// Lines `y p0 p1`.
    Binary { text: String },
    /// Lines `x y mass` over `2^m` symbols.
    Layered { m: u32, text: String },
    /// Lines `bits [y] mass`, user 1 first.
    MultiUser { text: String },
    /// Standard normal pair with correlation `rho`; `X` quantized to `2^m` cells.
    Gaussian { rho: f64, m: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "snake_case")]
pub enum SelectionSpec {
    Rate(f64),
    /// Rate `H + gap` per layer.
    Gap(f64),
    ZThreshold(f64),
    EntropyThreshold(f64),
}

impl SelectionSpec {
    fn layer(self) -> LayerSelection {
        match self {
            SelectionSpec::Rate(r) => LayerSelection::Rate(r),
            SelectionSpec::Gap(g) => LayerSelection::Gap(g),
            SelectionSpec::ZThreshold(t) => LayerSelection::ZThreshold(t),
            SelectionSpec::EntropyThreshold(t) => LayerSelection::EntropyThreshold(t),
        }
    }

    fn binary(self, s: &JointSource) -> Selection {
        match self {
            SelectionSpec::Rate(r) => Selection::Rate(r),
            SelectionSpec::Gap(g) => Selection::Rate((s.cond_entropy() + g).clamp(0.0, 1.0)),
            SelectionSpec::ZThreshold(t) => Selection::ZThreshold(t),
            SelectionSpec::EntropyThreshold(t) => Selection::EntropyThreshold(t),
        }
    }

    fn validate(self) -> CliResult<()> {
        let (name, v, range) = match self {
            SelectionSpec::Rate(v) => ("rate", v, 0.0..=1.0),
            SelectionSpec::Gap(v) => ("gap", v, -1.0..=1.0),
            SelectionSpec::ZThreshold(v) => ("z threshold", v, 0.0..=1.0),
            SelectionSpec::EntropyThreshold(v) => ("entropy threshold", v, 0.0..=1.0),
        };
        if !range.contains(&v) {
            return config_err(format!(
                "{name} {v} outside [{}, {}]",
                range.start(),
                range.end()
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub task: Task,
    pub source: SourceSpec,
    /// `log2` of the block length.
    pub n: u32,
    /// Binning resolution; ignored with `exact`.
    #[serde(default)]
    pub k: Option<u32>,
    #[serde(default)]
    pub exact: bool,
    pub selection: SelectionSpec,
    pub trials: u64,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Inclusive range of `n` for the scaling study.
    #[serde(default)]
    pub n_range: Option<(u32, u32)>,
    #[serde(default = "default_target")]
    pub target_error: f64,
    /// Report per-layer errors with the lower layers known exactly.
    #[serde(default)]
    pub genie: bool,
}

fn default_target() -> f64 {
    DEFAULT_TARGET_ERROR
}

impl ExperimentConfig {
    pub fn validate(&self) -> CliResult<()> {
        if self.task.is_stochastic() && self.seed.is_none() {
            return config_err(format!("task {:?} needs a seed", self.task));
        }
        if !(1..=MAX_N).contains(&self.n) && self.task != Task::Scaling {
            return config_err(format!("n = {} outside 1..={MAX_N}", self.n));
        }
        if self.k == Some(0) {
            return config_err("k must be positive");
        }
        if self.trials > MAX_TRIALS {
            return config_err(format!("trials = {} above {MAX_TRIALS}", self.trials));
        }
        if !(self.target_error > 0.0 && self.target_error < 1.0) {
            return config_err(format!("target error {} outside (0, 1)", self.target_error));
        }
        self.selection.validate()?;
        match self.source {
            SourceSpec::Bsc { p } if !(0.0..=1.0).contains(&p) => {
                return config_err(format!("bsc p = {p} outside [0, 1]"))
            }
            SourceSpec::Gaussian { rho, .. } if !(rho.abs() < 1.0) => {
                return config_err(format!("rho = {rho} needs |rho| < 1"))
            }
            SourceSpec::Gaussian { m, .. } | SourceSpec::Layered { m, .. }
                if !(1..=12).contains(&m) =>
            {
                return config_err(format!("m = {m} outside 1..=12"))
            }
            _ => {}
        }
        if self.task == Task::Scaling {
            match self.n_range {
                Some((lo, hi)) if 8 <= lo && lo <= hi && hi <= 18 => {}
                Some((lo, hi)) => {
                    return config_err(format!("scaling range {lo}..={hi} must lie in 8..=18"))
                }
                None => return config_err("scaling needs an n range"),
            }
        }
        Ok(())
    }

    fn bins(&self, n: u32) -> CliResult<BinParams> {
        Ok(match self.k {
            Some(k) => BinParams::new(k)?,
            None => BinParams::new(DEFAULT_K.min(BinParams::for_gap(n, 0.1)?.k()))?,
        })
    }

    fn seed(&self) -> u64 {
        self.seed.expect("validated")
    }
}

pub fn binary_source(spec: &SourceSpec) -> CliResult<JointSource> {
    match spec {
        SourceSpec::Bsc { p } => Ok(JointSource::bsc(*p)),
        SourceSpec::Binary { text } => Ok(JointSource::parse(text)?),
        other => config_err(format!(
            "a binary source is required, got {}",
            source_kind(other)
        )),
    }
}

pub fn layered_source(spec: &SourceSpec) -> CliResult<LayeredSource> {
    match spec {
        SourceSpec::Layered { m, text } => Ok(LayeredSource::parse(*m, text)?),
        SourceSpec::Bsc { .. } | SourceSpec::Binary { .. } => {
            Ok(LayeredSource::from_binary(&binary_source(spec)?))
        }
        other => config_err(format!(
            "a discrete source is required, got {}",
            source_kind(other)
        )),
    }
}

pub fn multi_user_source(spec: &SourceSpec) -> CliResult<MultiUserSource> {
    match spec {
        SourceSpec::MultiUser { text } => Ok(MultiUserSource::parse(text)?),
        other => config_err(format!(
            "a multi-user source is required, got {}",
            source_kind(other)
        )),
    }
}

fn source_kind(spec: &SourceSpec) -> &'static str {
    match spec {
        SourceSpec::Bsc { .. } => "bsc",
        SourceSpec::Binary { .. } => "binary",
        SourceSpec::Layered { .. } => "layered",
        SourceSpec::MultiUser { .. } => "multi_user",
        SourceSpec::Gaussian { .. } => "gaussian",
    }
}

/// Binary code for `cfg`, constructed and selected.
pub fn build_code(cfg: &ExperimentConfig) -> CliResult<CodeSpec> {
    let s = binary_source(&cfg.source)?;
    let spec = if cfg.exact {
        exact_construct(&s, cfg.n)?
    } else {
        construct_degraded(&s, cfg.n, cfg.bins(cfg.n)?)
    };
    Ok(select_indices(&spec, cfg.selection.binary(&s))?)
}

pub fn build_layered(cfg: &ExperimentConfig, ls: &LayeredSource) -> CliResult<LayeredSpec> {
    let sel = cfg.selection.layer();
    Ok(if cfg.exact {
        layered_construct_exact(ls, cfg.n, sel)?
    } else {
        layered_construct(ls, cfg.n, cfg.bins(cfg.n)?, sel)?
    })
}

pub fn build_sw(cfg: &ExperimentConfig, src: &MultiUserSource) -> CliResult<SwCode> {
    let sel = cfg.selection.layer();
    Ok(if cfg.exact {
        sw_construct_exact(src, cfg.n, sel)?
    } else {
        sw_construct(src, cfg.n, cfg.bins(cfg.n)?, sel)?
    })
}

fn build_keygen(cfg: &ExperimentConfig, ls: &LayeredSource) -> CliResult<LayeredSpec> {
    let sel = cfg.selection.layer();
    Ok(if cfg.exact {
        keygen_construct_exact(ls, cfg.n, sel)?
    } else {
        keygen_construct(ls, cfg.n, cfg.bins(cfg.n)?, sel)?
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Outcome {
    Binary(ErrorCounts),
    Layered(LayeredCounts),
    Key {
        #[serde(flatten)]
        counts: KeyCounts,
        key_rate: f64,
        #[serde(skip_serializing_if = "Option::is_none")]
        audit: Option<AuditReport>,
        /// The exchange of trial 0, in hex.
        sample: KeySample,
    },
    Scaling(Vec<ScalingPoint>),
}

/// Public message, key and key estimate of one exchange. Bits are
/// concatenated layer by layer and packed MSB first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct KeySample {
    pub public_hex: String,
    pub key_hex: String,
    pub estimate_hex: String,
}

fn pack_hex(bits: &[Vec<u8>]) -> String {
    let flat: Vec<u8> = bits.iter().flatten().copied().collect();
    let bytes: Vec<u8> = flat
        .chunks(8)
        .map(|c| {
            c.iter()
                .enumerate()
                .fold(0u8, |a, (i, &b)| a | (b << (7 - i)))
        })
        .collect();
    hex::encode(bytes)
}

fn key_sample<L: SymbolLikelihood>(spec: &LayeredSpec, x: &[u32], obs: &L) -> CliResult<KeySample> {
    let km = derive_at_a(spec, x)?;
    let est = recover_with(&mut LayeredDecoder::new(spec), spec, obs, &km.public)?;
    Ok(KeySample {
        public_hex: pack_hex(&km.public),
        key_hex: pack_hex(&km.key),
        estimate_hex: pack_hex(&est),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Timings {
    pub construct_seconds: f64,
    pub simulate_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub config: ExperimentConfig,
    pub seed_derivation: &'static str,
    /// Rate per layer or user (one entry for binary codes).
    pub rates: Vec<f64>,
    /// Conditional entropy per layer or user.
    pub entropies: Vec<f64>,
    pub outcome: Outcome,
    pub timings: Timings,
}

/// Runs a stochastic task.
pub fn run_simulation(cfg: &ExperimentConfig) -> CliResult<SimReport> {
    cfg.validate()?;
    let seed = cfg.seed();
    let t0 = Instant::now();
    let (rates, entropies, construct_seconds, outcome) = match cfg.task {
        Task::Simulate => {
            let s = binary_source(&cfg.source)?;
            let code = build_code(cfg)?;
            let tc = t0.elapsed().as_secs_f64();
            let counts = simulate_binary(&s, &code, cfg.trials, seed)?;
            (
                vec![code.rate()],
                vec![s.cond_entropy()],
                tc,
                Outcome::Binary(counts),
            )
        }
        Task::Layered => {
            let ls = layered_source(&cfg.source)?;
            let spec = build_layered(cfg, &ls)?;
            let tc = t0.elapsed().as_secs_f64();
            let counts = simulate_layered(&ls, &spec, cfg.trials, seed)?;
            (
                spec.rates(),
                ls.layer_entropies(),
                tc,
                Outcome::Layered(counts),
            )
        }
        Task::Sw => {
            let src = multi_user_source(&cfg.source)?;
            let code = build_sw(cfg, &src)?;
            let tc = t0.elapsed().as_secs_f64();
            let counts = simulate_sw(&src, &code, cfg.trials, seed)?;
            (
                code.rates(),
                code.entropies.clone(),
                tc,
                Outcome::Layered(counts),
            )
        }
        Task::Keygen => {
            let (spec, ls, counts, sample, tc) = match cfg.source {
                SourceSpec::Gaussian { rho, m } => {
                    let g = GaussianKeySource::new(rho, m, DEFAULT_GAUSS_K_Y)?;
                    let ls = g.discretized()?;
                    let spec = build_keygen(cfg, &ls)?;
                    let tc = t0.elapsed().as_secs_f64();
                    let counts = simulate_gauss_keygen(&g, &spec, cfg.trials, seed)?;
                    let (xr, yr) = g.sample(&mut trial_rng(seed, 0), spec.block_len());
                    let sample = key_sample(&spec, &g.symbols(&xr), &g.observations(&yr))?;
                    (spec, ls, counts, sample, tc)
                }
                _ => {
                    let ls = layered_source(&cfg.source)?;
                    let spec = build_keygen(cfg, &ls)?;
                    let tc = t0.elapsed().as_secs_f64();
                    let counts = simulate_keygen(&ls, &spec, cfg.trials, seed)?;
                    let (x, y) = Sampler::new(&ls).block(&mut trial_rng(seed, 0), spec.block_len());
                    let sample = key_sample(&spec, &x, &DiscreteObservations::new(&ls, &y)?)?;
                    (spec, ls, counts, sample, tc)
                }
            };
            let audit = if spec.block_len() * spec.m as usize <= AUDIT_MAX_BITS {
                Some(secrecy_audit(&spec, &ls)?)
            } else {
                None
            };
            let outcome = Outcome::Key {
                counts,
                key_rate: key_rate(&spec),
                audit,
                sample,
            };
            (spec.rates(), ls.layer_entropies(), tc, outcome)
        }
        Task::Scaling => {
            let s = binary_source(&cfg.source)?;
            let (lo, hi) = cfg.n_range.expect("validated");
            let mut points = Vec::new();
            let mut tc = 0.0;
            for n in lo..=hi {
                let t = Instant::now();
                let spec = construct_degraded(&s, n, cfg.bins(n)?);
                tc += t.elapsed().as_secs_f64();
                points.push(scaling_point(
                    &s,
                    &spec,
                    cfg.target_error,
                    cfg.trials,
                    seed,
                )?);
            }
            let rates = points.iter().map(|p| p.rate.unwrap_or(f64::NAN)).collect();
            (rates, vec![s.cond_entropy()], tc, Outcome::Scaling(points))
        }
        other => return config_err(format!("task {other:?} is not a simulation")),
    };
    let total = t0.elapsed().as_secs_f64();
    Ok(SimReport {
        config: cfg.clone(),
        seed_derivation: SEED_DERIVATION,
        rates,
        entropies,
        outcome,
        timings: Timings {
            construct_seconds,
            simulate_seconds: total - construct_seconds,
        },
    })
}

/// Header and data rows of a report. Timings are left out so that rows are
/// reproducible byte for byte.
pub fn csv_table(report: &SimReport) -> (Vec<&'static str>, Vec<Vec<String>>) {
    let seed = report.config.seed.unwrap_or(0).to_string();
    let trials = report.config.trials.to_string();
    match &report.outcome {
        Outcome::Binary(c) => (
            vec![
                "rate",
                "entropy",
                "block_errors",
                "bit_errors",
                "trials",
                "seed",
            ],
            vec![vec![
                fmt(report.rates[0]),
                fmt(report.entropies[0]),
                c.block_errors.to_string(),
                c.bit_errors.to_string(),
                c.trials.to_string(),
                seed,
            ]],
        ),
        Outcome::Layered(c) => {
            let label = if report.config.task == Task::Sw {
                "user"
            } else {
                "layer"
            };
            let errors = if report.config.genie {
                &c.isolated_errors
            } else {
                &c.layer_errors
            };
            let mut rows: Vec<Vec<String>> = errors
                .iter()
                .enumerate()
                .map(|(i, e)| {
                    vec![
                        (i + 1).to_string(),
                        fmt(report.rates[i]),
                        e.to_string(),
                        trials.clone(),
                        seed.clone(),
                    ]
                })
                .collect();
            if !report.config.genie {
                let sum = fmt(report.rates.iter().sum());
                rows.push(vec![
                    "all".into(),
                    sum,
                    c.block_errors.to_string(),
                    trials.clone(),
                    seed.clone(),
                ]);
            }
            (vec![label, "rate", "errors", "trials", "seed"], rows)
        }
        Outcome::Key {
            counts, key_rate, ..
        } => (
            vec![
                "public_rate",
                "key_rate",
                "key_bits",
                "key_errors",
                "key_bit_errors",
                "trials",
                "seed",
            ],
            vec![vec![
                fmt(report.rates.iter().sum()),
                fmt(*key_rate),
                counts.key_bits.to_string(),
                counts.key_errors.to_string(),
                counts.key_bit_errors.to_string(),
                counts.trials.to_string(),
                seed,
            ]],
        ),
        Outcome::Scaling(points) => (
            vec![
                "n",
                "block_len",
                "rate",
                "gap",
                "block_error",
                "trials",
                "seed",
            ],
            points
                .iter()
                .map(|p| {
                    vec![
                        p.n.to_string(),
                        p.block_len.to_string(),
                        p.rate.map(fmt).unwrap_or_default(),
                        p.gap.map(fmt).unwrap_or_default(),
                        p.block_error.map(fmt).unwrap_or_default(),
                        trials.clone(),
                        seed.clone(),
                    ]
                })
                .collect(),
        ),
    }
}

/// Fixed-precision decimal so rows do not depend on float formatting quirks.
pub fn fmt(v: f64) -> String {
    format!("{v:.9}")
}

/// Writes a CSV table.
pub fn write_csv<W: std::io::Write>(
    out: W,
    header: &[&str],
    rows: &[Vec<String>],
) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| CliError::Other(e.into());
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(r).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}
