//! `tbswap` command-line front end.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use crate::config::{parse_config, OutputFormat, RunConfig};
use crate::error::Error;
use crate::experiment::{run_fringe_scan_with, run_qkd_session_with, Execution};
use crate::finite_key::{
    analyze, key_rate_one_way, phase_error_bound, serfling_gap, simulate_rate_curve,
};
use crate::fit::fit_visibility;
use crate::report::{
    curve_csv, fringe_csv, write_atomic, CurvePayload, FringePayload, QkdPayload, Report,
};
use crate::selftest;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;
pub const EXIT_SELFTEST: i32 = 4;

/// Environment variable consulted when `--workers` is not given.
pub const WORKERS_ENV: &str = "TBSWAP_WORKERS";

#[derive(Debug, Parser)]
#[command(
    name = "tbswap",
    version,
    about = "Time-bin entanglement swapping simulator and finite-key calculator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML configuration file; defaults apply to anything left out.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Master seed in [0, 2^63); overrides the config file.
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(..=i64::MAX as u64))]
    seed: Option<u64>,

    /// Write the report here instead of standard output.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,

    #[arg(long, global = true, value_enum)]
    format: Option<Format>,

    /// Worker threads (0 = all cores); overrides TBSWAP_WORKERS.
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl From<OutputFormat> for Format {
    fn from(f: OutputFormat) -> Self {
        match f {
            OutputFormat::Csv => Format::Csv,
            OutputFormat::Json => Format::Json,
        }
    }
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Four-fold coincidence scan over Alice's phase, with a sinusoid fit.
    Fringe,
    /// Simulated QKD session followed by the secure-key analysis.
    Qkd,
    /// Secure-key analysis of the sifted-key summary in the config.
    Keyrate,
    /// Rate per sifted bit against the bit error rate.
    Curve,
    /// Pinned regression checks.
    Selftest,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Fringe => "fringe",
            Command::Qkd => "qkd",
            Command::Keyrate => "keyrate",
            Command::Curve => "curve",
            Command::Selftest => "selftest",
        }
    }

    fn default_format(self) -> Format {
        match self {
            Command::Fringe | Command::Curve => Format::Csv,
            _ => Format::Json,
        }
    }
}

struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config { .. } => EXIT_CONFIG,
            _ => EXIT_RUNTIME,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

fn resolve_workers(flag: Option<usize>, env: Option<String>) -> Result<usize, Failure> {
    if let Some(w) = flag {
        return Ok(w);
    }
    match env {
        Some(v) if !v.trim().is_empty() => v
            .trim()
            .parse()
            .map_err(|_| Failure::usage(format!("{WORKERS_ENV}={v:?} is not a worker count"))),
        _ => Ok(0),
    }
}

fn load_config(path: Option<&PathBuf>) -> Result<RunConfig, Failure> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| Failure {
        code: EXIT_CONFIG,
        message: format!("cannot read {}: {e}", path.display()),
    })?;
    parse_config(&text).map_err(Failure::from)
}

struct Output {
    text: String,
    code: i32,
}

fn execute(cli: &Cli, cfg: &RunConfig, exec: Execution, format: Format) -> Result<Output, Failure> {
    let name = cli.command.name();
    let ok = |text| Output {
        text,
        code: EXIT_OK,
    };
    match cli.command {
        Command::Fringe => {
            let grid = cfg.fringe_grid();
            let points = run_fringe_scan_with(&cfg.experiment(), cfg.fringe.phi_b, &grid, exec)?;
            let payload = FringePayload::new(
                cfg.fringe.phi_b,
                cfg.windows,
                &points,
                fit_visibility(&points),
            );
            let report = Report::new(name, cfg, payload);
            Ok(ok(match format {
                Format::Csv => fringe_csv(&report),
                Format::Json => report.to_json(),
            }))
        }
        Command::Qkd => {
            if format == Format::Csv {
                return Err(Failure::usage("qkd reports are only available as json"));
            }
            let session = run_qkd_session_with(&cfg.experiment(), exec)?;
            let summary = session.summary;
            let payload = match analyze(&summary.sifted_summary(), &cfg.security) {
                Ok(mut kr) => {
                    kr.q = Some(summary.q);
                    QkdPayload {
                        summary,
                        key_rate: Some(kr),
                        key_rate_error: None,
                    }
                }
                Err(e) => QkdPayload {
                    summary,
                    key_rate: None,
                    key_rate_error: Some(e.to_string()),
                },
            };
            Ok(ok(Report::new(name, cfg, payload).to_json()))
        }
        Command::Keyrate => {
            if format == Format::Csv {
                return Err(Failure::usage("keyrate reports are only available as json"));
            }
            let kr = analyze(&cfg.keyrate, &cfg.security)?;
            Ok(ok(Report::new(name, cfg, kr).to_json()))
        }
        Command::Curve => {
            let n = cfg.curve.n_per_basis;
            let grid = cfg.curve_grid();
            let bstep = simulate_rate_curve(n, &grid, &cfg.security)?;
            let gap = serfling_gap(cfg.security.epsilon, n, n)?;
            let one_way: Vec<f64> = grid
                .iter()
                .map(|&e| key_rate_one_way(1.0, e, phase_error_bound(e, gap), &cfg.security))
                .collect();
            let report = Report::new(name, cfg, CurvePayload::new(n, gap, &bstep, &one_way));
            Ok(ok(match format {
                Format::Csv => curve_csv(&report),
                Format::Json => report.to_json(),
            }))
        }
        Command::Selftest => {
            if format == Format::Csv {
                return Err(Failure::usage(
                    "selftest reports are only available as json",
                ));
            }
            let result = selftest::run();
            let code = if result.passed {
                EXIT_OK
            } else {
                EXIT_SELFTEST
            };
            Ok(Output {
                text: Report::new(name, cfg, result).to_json(),
                code,
            })
        }
    }
}

/// Runs the CLI on `args` (including the program name) and returns the
/// process exit code.
pub fn run<I, T>(
    args: I,
    env_workers: Option<String>,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK {
                write!(stdout, "{text}")
            } else {
                write!(stderr, "{text}")
            };
            return code;
        }
    };
    match run_parsed(&cli, env_workers, stdout) {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(stderr, "tbswap: {}", f.message);
            f.code
        }
    }
}

fn run_parsed(
    cli: &Cli,
    env_workers: Option<String>,
    stdout: &mut dyn Write,
) -> Result<i32, Failure> {
    let workers = resolve_workers(cli.workers, env_workers)?;
    let mut cfg = load_config(cli.config.as_ref())?;
    cfg.seed = Some(
        cli.seed
            .or(cfg.seed)
            .unwrap_or_else(|| rand::random::<u64>() >> 1),
    );
    let format = cli
        .format
        .or(cfg.output.format.map(Format::from))
        .unwrap_or(cli.command.default_format());
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.output.path.as_ref().map(PathBuf::from));

    let output = execute(cli, &cfg, Execution::with_workers(workers), format)?;
    match out {
        Some(path) => write_atomic(&path, &output.text).map_err(|e| Failure {
            code: EXIT_RUNTIME,
            message: format!("cannot write {}: {e}", path.display()),
        })?,
        None => stdout
            .write_all(output.text.as_bytes())
            .map_err(|e| Failure {
                code: EXIT_RUNTIME,
                message: format!("cannot write to stdout: {e}"),
            })?,
    }
    Ok(output.code)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_capture(args: &[&str], env: Option<&str>) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(
            std::iter::once("tbswap").chain(args.iter().copied()),
            env.map(String::from),
            &mut out,
            &mut err,
        );
        (
            code,
            String::from_utf8(out).unwrap(),
            String::from_utf8(err).unwrap(),
        )
    }

    #[test]
    fn worker_precedence() {
        assert_eq!(resolve_workers(Some(3), Some("5".into())).ok(), Some(3));
        assert_eq!(resolve_workers(None, Some("5".into())).ok(), Some(5));
        assert_eq!(resolve_workers(None, None).ok(), Some(0));
        assert!(resolve_workers(None, Some("many".into())).is_err());
    }

    #[test]
    fn usage_and_help_codes() {
        assert_eq!(run_capture(&[], None).0, EXIT_USAGE);
        assert_eq!(run_capture(&["frobnicate"], None).0, EXIT_USAGE);
        assert_eq!(run_capture(&["keyrate", "--seed", "x"], None).0, EXIT_USAGE);
        let too_big = u64::MAX.to_string();
        assert_eq!(
            run_capture(&["keyrate", "--seed", &too_big], None).0,
            EXIT_USAGE
        );
        let (code, out, _) = run_capture(&["--help"], None);
        assert_eq!(code, EXIT_OK);
        assert!(out.contains("keyrate"));
        assert_eq!(run_capture(&["keyrate"], Some("lots")).0, EXIT_USAGE);
        assert_eq!(
            run_capture(&["keyrate", "--format", "csv"], None).0,
            EXIT_USAGE
        );
    }

    #[test]
    fn keyrate_defaults_to_field_run() {
        let (code, out, err) = run_capture(&["keyrate", "--seed", "1"], None);
        assert_eq!(code, EXIT_OK, "{err}");
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["payload"]["secure_bits"]["total"], 118);
        assert_eq!(v["metadata"]["seed"], 1);
    }

    #[test]
    fn missing_config_file_is_a_config_error() {
        let (code, _, err) = run_capture(&["keyrate", "--config", "/nonexistent/x.toml"], None);
        assert_eq!(code, EXIT_CONFIG);
        assert!(err.contains("cannot read"));
    }
}
