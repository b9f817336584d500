use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use polarsrc::gauss::{
    build_quantizer, induced_correlation, lemma7_bound, mi_gaussian, mi_quantized, MiEstimate,
    DEFAULT_LEMMA7_C,
};
use polarsrc::{compress, llr_from_side_info, sc_decode, CodeSpec, CompressedBlock};
use polarsrc_cli::{
    binary_source, build_code, build_layered, csv_table, fmt, layered_source, run_simulation,
    write_csv, CliError, CliResult, ExperimentConfig, SelectionSpec, SourceSpec, Task,
    DEFAULT_TARGET_ERROR,
};

#[derive(Parser)]
#[command(
    name = "polarsrc",
    version,
    about = "Polar codes for source coding with side information"
)]
struct Cli {
    /// Seed for stochastic tasks; trial t draws from stream t.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Write the result here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args, Clone)]
struct SourceArgs {
    /// Uniform X seen through a binary symmetric channel with this crossover.
    #[arg(long, conflicts_with = "source_file")]
    bsc: Option<f64>,
    /// Source law: `y p0 p1` lines, or `x y mass` lines with --m.
    #[arg(long)]
    source_file: Option<PathBuf>,
    /// Bits per symbol of a layered source file.
    #[arg(long)]
    m: Option<u32>,
}

#[derive(Args, Clone)]
struct CodeArgs {
    /// log2 of the block length.
    #[arg(long, short)]
    n: u32,
    /// Binning resolution for construction.
    #[arg(long, short)]
    k: Option<u32>,
    /// Construct without binning (small n only).
    #[arg(long)]
    exact: bool,
    #[arg(long, group = "sel")]
    rate: Option<f64>,
    /// Rate of H(X|Y) plus this gap, per layer.
    #[arg(long, group = "sel")]
    gap: Option<f64>,
    #[arg(long, group = "sel")]
    z_threshold: Option<f64>,
    #[arg(long, group = "sel")]
    h_threshold: Option<f64>,
}

impl CodeArgs {
    fn selection(&self, default: SelectionSpec) -> SelectionSpec {
        if let Some(r) = self.rate {
            SelectionSpec::Rate(r)
        } else if let Some(g) = self.gap {
            SelectionSpec::Gap(g)
        } else if let Some(t) = self.z_threshold {
            SelectionSpec::ZThreshold(t)
        } else if let Some(t) = self.h_threshold {
            SelectionSpec::EntropyThreshold(t)
        } else {
            default
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Rank indices and select the transmitted set.
    Construct {
        #[command(flatten)]
        source: SourceArgs,
        #[command(flatten)]
        code: CodeArgs,
    },
    /// Compress a block of bits (a line of 0/1) to the wire format, in hex.
    Encode {
        #[arg(long)]
        code: PathBuf,
        #[arg(long)]
        input: PathBuf,
    },
    /// Recover a block from its wire form and the side symbols.
    Decode {
        #[arg(long)]
        code: PathBuf,
        #[command(flatten)]
        source: SourceArgs,
        /// Hex wire block.
        #[arg(long)]
        block: PathBuf,
        /// Whitespace-separated side symbols.
        #[arg(long)]
        side: PathBuf,
    },
    /// Block error of binary compression with side information.
    Simulate {
        #[command(flatten)]
        source: SourceArgs,
        #[command(flatten)]
        code: CodeArgs,
        #[arg(long, default_value_t = 1000)]
        trials: u64,
    },
    /// Bit-layered coding of a 2^m-ary source.
    Layered {
        #[command(flatten)]
        source: SourceArgs,
        #[command(flatten)]
        code: CodeArgs,
        #[arg(long, default_value_t = 1000)]
        trials: u64,
        /// Report per-layer errors with lower layers known exactly.
        #[arg(long)]
        genie: bool,
    },
    /// Secret-key agreement from correlated observations.
    Keygen {
        #[command(flatten)]
        source: SourceArgs,
        /// Correlated standard normal pair instead of a discrete source.
        #[arg(long, conflicts_with_all = ["bsc", "source_file"])]
        gauss_rho: Option<f64>,
        #[command(flatten)]
        code: CodeArgs,
        #[arg(long, default_value_t = 1000)]
        trials: u64,
    },
    /// Equiprobable Gaussian quantizer report.
    Gauss {
        #[arg(long, allow_hyphen_values = true)]
        rho: f64,
        #[arg(long, short)]
        k: usize,
        /// Also evaluate the rate-loss bound and whether it holds.
        #[arg(long)]
        check_lemma7: bool,
        /// Constant of the rate-loss bound.
        #[arg(long, default_value_t = DEFAULT_LEMMA7_C)]
        c: f64,
    },
    /// Slepian-Wolf coding of several users with one decoder.
    Sw {
        /// Number of users; must match the source file.
        #[arg(long)]
        users: u32,
        /// Lines `bits [y] mass`, bits listing user 1 first.
        #[arg(long)]
        source_file: PathBuf,
        #[command(flatten)]
        code: CodeArgs,
        #[arg(long, default_value_t = 1000)]
        trials: u64,
        /// Decode each user from the true blocks of earlier users.
        #[arg(long)]
        genie: bool,
    },
    /// Smallest rate reaching a target block error, per block length.
    Scaling {
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long, default_value_t = 10)]
        n_min: u32,
        #[arg(long, default_value_t = 14)]
        n_max: u32,
        #[arg(long, short)]
        k: Option<u32>,
        #[arg(long, default_value_t = DEFAULT_TARGET_ERROR)]
        target: f64,
        #[arg(long, default_value_t = 1000)]
        trials: u64,
    },
}

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn source_spec(a: &SourceArgs) -> CliResult<SourceSpec> {
    match (a.bsc, &a.source_file, a.m) {
        (Some(p), None, None) => Ok(SourceSpec::Bsc { p }),
        (None, Some(f), None) => Ok(SourceSpec::Binary { text: read(f)? }),
        (None, Some(f), Some(m)) => Ok(SourceSpec::Layered { m, text: read(f)? }),
        (Some(_), _, Some(_)) => Err(CliError::Config("--m applies to source files only".into())),
        _ => Err(CliError::Config("give --bsc or --source-file".into())),
    }
}

fn config(
    task: Task,
    source: SourceSpec,
    code: &CodeArgs,
    default: SelectionSpec,
    trials: u64,
    seed: Option<u64>,
) -> ExperimentConfig {
    ExperimentConfig {
        task,
        source,
        n: code.n,
        k: code.k,
        exact: code.exact,
        selection: code.selection(default),
        trials,
        seed,
        n_range: None,
        target_error: DEFAULT_TARGET_ERROR,
        genie: false,
    }
}

struct Output {
    path: Option<PathBuf>,
}

impl Output {
    fn write(&self, text: &str) -> CliResult<()> {
        match &self.path {
            Some(p) => fs::write(p, text)?,
            None => std::io::stdout().write_all(text.as_bytes())?,
        }
        Ok(())
    }

    fn json<T: Serialize>(&self, value: &T) -> CliResult<()> {
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Other(e.into()))?;
        self.write(&(text + "\n"))
    }

    fn csv(&self, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
        let mut buf = Vec::new();
        write_csv(&mut buf, header, rows)?;
        self.write(&String::from_utf8(buf).expect("csv is utf-8"))
    }
}

#[derive(Serialize)]
struct GaussReport {
    rho: f64,
    k: usize,
    rho_tilde: f64,
    mi_exact: f64,
    mi_quantized: f64,
    mi_quantized_error: f64,
    lemma7_rhs: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    lemma7_holds: Option<bool>,
    lower_bound: f64,
}

fn gauss(rho: f64, k: usize, check: bool, c: f64) -> CliResult<GaussReport> {
    let q = build_quantizer(k)?;
    let rho_tilde = induced_correlation(&q, rho);
    let MiEstimate { bits, error, .. } = mi_quantized(&q, rho)?;
    let lemma7_rhs = lemma7_bound(rho, k, c)?;
    Ok(GaussReport {
        rho,
        k,
        rho_tilde,
        mi_exact: mi_gaussian(rho)?,
        mi_quantized: bits,
        mi_quantized_error: error,
        lemma7_rhs,
        lemma7_holds: check.then_some(bits >= lemma7_rhs - error.max(1e-5)),
        lower_bound: -0.5 * (1.0 - rho_tilde * rho_tilde).log2(),
    })
}

fn parse_bits(text: &str) -> CliResult<Vec<u8>> {
    text.chars()
        .filter(|c| !c.is_whitespace())
        .map(|c| match c {
            '0' => Ok(0),
            '1' => Ok(1),
            other => Err(CliError::Config(format!(
                "unexpected character {other:?} in bit block"
            ))),
        })
        .collect()
}

fn load_code(path: &Path) -> CliResult<CodeSpec> {
    Ok(CodeSpec::from_json(&read(path)?)?)
}

fn run(cli: Cli) -> CliResult<()> {
    let out = Output { path: cli.out };
    let seed = cli.seed;
    let format = cli.format;
    let report = |cfg: ExperimentConfig| -> CliResult<()> {
        let r = run_simulation(&cfg)?;
        match format {
            Format::Json => out.json(&r),
            Format::Csv => {
                let (header, rows) = csv_table(&r);
                eprintln!(
                    "construct {:.3}s, simulate {:.3}s",
                    r.timings.construct_seconds, r.timings.simulate_seconds
                );
                out.csv(&header, &rows)
            }
        }
    };
    match cli.command {
        Command::Construct { source, code } => {
            let src = source_spec(&source)?;
            let cfg = config(
                Task::Construct,
                src.clone(),
                &code,
                SelectionSpec::Gap(0.05),
                0,
                seed,
            );
            cfg.validate()?;
            if let SourceSpec::Layered { .. } = src {
                let spec = build_layered(&cfg, &layered_source(&src)?)?;
                return match format {
                    Format::Json => out.write(&(spec.to_json() + "\n")),
                    Format::Csv => {
                        let rows: Vec<Vec<String>> = spec
                            .layers
                            .iter()
                            .enumerate()
                            .flat_map(|(l, c)| metric_rows(c, Some(l + 1)))
                            .collect();
                        out.csv(&["layer", "index", "h", "z", "selected"], &rows)
                    }
                };
            }
            let spec = build_code(&cfg)?;
            match format {
                Format::Json => out.write(&(spec.to_json() + "\n")),
                Format::Csv => out.csv(&["index", "h", "z", "selected"], &metric_rows(&spec, None)),
            }
        }
        Command::Encode { code, input } => {
            let spec = load_code(&code)?;
            let bits = parse_bits(&read(&input)?)?;
            let block = compress(&bits, &spec)?;
            out.write(&(hex::encode(block.to_bytes()) + "\n"))
        }
        Command::Decode {
            code,
            source,
            block,
            side,
        } => {
            let spec = load_code(&code)?;
            let s = binary_source(&source_spec(&source)?)?;
            let bytes = hex::decode(read(&block)?.trim())
                .map_err(|e| CliError::Config(format!("block: {e}")))?;
            let blk = CompressedBlock::from_bytes(&spec, &bytes)?;
            let y = read(&side)?
                .split_whitespace()
                .map(|t| {
                    t.parse::<u64>()
                        .map_err(|e| CliError::Config(format!("side symbol {t:?}: {e}")))
                })
                .collect::<CliResult<Vec<_>>>()?;
            let llr = llr_from_side_info(&s, &y)?;
            let x = sc_decode(&llr, &spec, blk.payload())?;
            let line: String = x.iter().map(|b| char::from(b'0' + b)).collect();
            out.write(&(line + "\n"))
        }
        Command::Simulate {
            source,
            code,
            trials,
        } => report(config(
            Task::Simulate,
            source_spec(&source)?,
            &code,
            SelectionSpec::Gap(0.1),
            trials,
            seed,
        )),
        Command::Layered {
            source,
            code,
            trials,
            genie,
        } => {
            let mut cfg = config(
                Task::Layered,
                source_spec(&source)?,
                &code,
                SelectionSpec::Gap(0.1),
                trials,
                seed,
            );
            cfg.genie = genie;
            report(cfg)
        }
        Command::Keygen {
            source,
            gauss_rho,
            code,
            trials,
        } => {
            let src = match gauss_rho {
                Some(rho) => SourceSpec::Gaussian {
                    rho,
                    m: source.m.unwrap_or(1),
                },
                None => source_spec(&source)?,
            };
            report(config(
                Task::Keygen,
                src,
                &code,
                SelectionSpec::Gap(0.1),
                trials,
                seed,
            ))
        }
        Command::Gauss {
            rho,
            k,
            check_lemma7,
            c,
        } => {
            let r = gauss(rho, k, check_lemma7, c)?;
            match format {
                Format::Json => out.json(&r),
                Format::Csv => out.csv(
                    &[
                        "rho",
                        "k",
                        "rho_tilde",
                        "mi_exact",
                        "mi_quantized",
                        "lemma7_rhs",
                    ],
                    &[vec![
                        fmt(r.rho),
                        r.k.to_string(),
                        fmt(r.rho_tilde),
                        fmt(r.mi_exact),
                        fmt(r.mi_quantized),
                        fmt(r.lemma7_rhs),
                    ]],
                ),
            }
        }
        Command::Sw {
            users,
            source_file,
            code,
            trials,
            genie,
        } => {
            let text = read(&source_file)?;
            let src = polarsrc::sw::MultiUserSource::parse(&text)?;
            if src.users() != users {
                return Err(CliError::Config(format!(
                    "--users {users} but the source has {} users",
                    src.users()
                )));
            }
            let mut cfg = config(
                Task::Sw,
                SourceSpec::MultiUser { text },
                &code,
                SelectionSpec::Gap(0.1),
                trials,
                seed,
            );
            cfg.genie = genie;
            report(cfg)
        }
        Command::Scaling {
            source,
            n_min,
            n_max,
            k,
            target,
            trials,
        } => {
            let cfg = ExperimentConfig {
                task: Task::Scaling,
                source: source_spec(&source)?,
                n: n_min,
                k,
                exact: false,
                selection: SelectionSpec::Rate(1.0),
                trials,
                seed,
                n_range: Some((n_min, n_max)),
                target_error: target,
                genie: false,
            };
            report(cfg)
        }
    }
}

fn metric_rows(spec: &CodeSpec, layer: Option<usize>) -> Vec<Vec<String>> {
    let mask = spec.selected_mask();
    spec.metrics()
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let mut row: Vec<String> = layer.map(|l| l.to_string()).into_iter().collect();
            row.extend([
                i.to_string(),
                fmt(m.h_upper),
                fmt(m.z_upper),
                u8::from(mask[i]).to_string(),
            ]);
            row
        })
        .collect()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
