//! `convtail`: command-line front end for tail-of-convolution analysis.
//!
//! Exit codes: 0 all checks pass, 2 something inconclusive, 3 a check failed
//! or a computation hit a precondition or budget, 1 usage or I/O error.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use convtail::{
    construct_h, exp_tilt, integrated_tail, ratio_curve, ratio_curve_pair, ratio_curve_stopped, read_spec,
    test_class, theorem_consistency, verify_h, AnalysisConfig, ClassTag, DistSpec, Distribution, GridSpec,
    RatioCurve, Status, StoppingTimePmf,
};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "convtail", version, about = "Tails of convolutions of distributions on the half-line")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Clone)]
struct Common {
    /// Largest x examined.
    #[arg(long, global = true, default_value_t = 1e3)]
    horizon: f64,
    /// Points on a ratio curve.
    #[arg(long, global = true, default_value_t = 256)]
    points: usize,
    /// Relative tolerance of verdicts; violations need twice this margin.
    #[arg(long, global = true, default_value_t = 0.05)]
    tol: f64,
    /// Lim-inf window is [window * horizon, horizon].
    #[arg(long, global = true, default_value_t = 0.5)]
    window: f64,
    /// Output file; standard output when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Cmd {
    /// Cross-check the limit theorems on a distribution.
    ///
    /// Writes the JSON report; the ratio curve goes to `--curve`, or next to
    /// `--out` with a .csv extension.
    Analyze {
        spec: PathBuf,
        #[arg(long)]
        curve: Option<PathBuf>,
    },
    /// Tail of F^{*n}, of a stopped sum, or of F1*F2 (`--pair`), as a ratio curve.
    Convolve {
        spec: PathBuf,
        second: Option<PathBuf>,
        #[arg(long, conflicts_with_all = ["pair", "geometric", "tau_probs"])]
        n: Option<usize>,
        #[arg(long, requires = "second")]
        pair: bool,
        /// Geometric stopping time P(τ = n) = (1 − q) q^{n−1}.
        #[arg(long, value_name = "Q")]
        geometric: Option<f64>,
        /// Stopping-time probabilities P(τ = 1), P(τ = 2), ...
        #[arg(long, value_delimiter = ',')]
        tau_probs: Option<Vec<f64>>,
    },
    /// Exponential change of measure G(du) = e^{γu} F(du) / φ(γ).
    Tilt {
        spec: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        gamma: f64,
    },
    /// Integrated-tail distribution with density F̄(x)/E[ξ].
    Itail {
        spec: PathBuf,
        /// Grid step when the result must be tabulated (default horizon/4096).
        #[arg(long)]
        dx: Option<f64>,
    },
    /// Subadditive h with E e^{h(ξ)} < ∞ and E ξ e^{h(ξ)} = ∞, plus its checks.
    Hfunc {
        spec: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        delta: f64,
        #[arg(long, default_value_t = 8)]
        levels: usize,
        #[arg(long, default_value_t = 20_000)]
        pairs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Atomic distribution on the points 3^n violating condition2.
    Counterexample {
        #[arg(long, default_value_t = 1)]
        variant: u8,
        #[arg(long, default_value_t = 1e-3)]
        gamma: f64,
        #[arg(long, default_value_t = 8)]
        atoms: usize,
    },
    /// Test membership in one class: heavy, light, L, S, S_star, S_gamma, S_lattice, condition2.
    Classify {
        spec: PathBuf,
        #[arg(long = "class")]
        class: String,
        #[arg(long)]
        gamma: Option<f64>,
    },
}

/// Failure with its exit code.
struct Fail {
    code: u8,
    err: anyhow::Error,
}

impl From<anyhow::Error> for Fail {
    fn from(err: anyhow::Error) -> Self {
        Fail { code: 1, err }
    }
}

fn compute<T>(r: convtail::Result<T>) -> Result<T, Fail> {
    r.map_err(|e| Fail { code: 3, err: e.into() })
}

fn load(path: &Path) -> Result<Distribution, Fail> {
    read_spec(path).map_err(|e| Fail { code: 1, err: e.into() })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(1);
    }
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}

fn init_threads() -> anyhow::Result<()> {
    let Ok(v) = std::env::var("CONVTAIL_THREADS") else {
        return Ok(());
    };
    let n: usize = v.trim().parse().with_context(|| format!("CONVTAIL_THREADS={v} is not a count"))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn config(c: &Common) -> anyhow::Result<AnalysisConfig> {
    if !(c.horizon > 0.0 && c.horizon.is_finite()) {
        bail!("--horizon must be positive, got {}", c.horizon);
    }
    if c.points < 16 {
        bail!("--points must be at least 16, got {}", c.points);
    }
    if !(c.tol > 0.0 && c.tol < 0.5) {
        bail!("--tol must lie in (0, 0.5), got {}", c.tol);
    }
    if !(c.window > 0.0 && c.window < 1.0) {
        bail!("--window must lie in (0, 1), got {}", c.window);
    }
    Ok(AnalysisConfig {
        horizon: c.horizon,
        n_points: c.points,
        tol: c.tol,
        window: c.window,
        ..AnalysisConfig::default()
    })
}

fn exit_for(s: Status) -> u8 {
    match s {
        Status::Satisfied => 0,
        Status::Inconclusive => 2,
        Status::Violated => 3,
    }
}

fn run(cli: Cli) -> Result<u8, Fail> {
    let cfg = config(&cli.common)?;
    let out = cli.common.out.as_deref();
    match cli.cmd {
        Cmd::Analyze { spec, curve } => {
            let f = load(&spec)?;
            let report = theorem_consistency(&f, &cfg);
            let curve_path = curve.or_else(|| out.map(|p| p.with_extension("csv")));
            if let (Some(p), Some(c)) = (&curve_path, &report.curve) {
                write_to(Some(p), &c.to_csv())?;
            }
            write_to(out, &json(&report)?)?;
            Ok(exit_for(report.status()))
        }
        Cmd::Convolve {
            spec,
            second,
            n,
            pair,
            geometric,
            tau_probs,
        } => {
            let f = load(&spec)?;
            let curve = if pair {
                let g = load(second.as_deref().expect("clap enforces a second spec"))?;
                compute(ratio_curve_pair(&f, &g, &cfg))?
            } else {
                if second.is_some() {
                    return Err(anyhow::anyhow!("a second spec needs --pair").into());
                }
                let tau = match (n, geometric, tau_probs) {
                    (_, Some(q), _) => compute(StoppingTimePmf::geometric(q))?,
                    (_, _, Some(p)) => compute(StoppingTimePmf::from_probs(&p))?,
                    // pairwise quadrature beats tabulating F*F on a grid
                    (Some(2) | None, _, _) => return emit_curve(compute(ratio_curve(&f, &cfg))?, &cli.common),
                    (Some(k), _, _) => compute(StoppingTimePmf::degenerate(k))?,
                };
                compute(ratio_curve_stopped(&f, &tau, &cfg))?
            };
            emit_curve(curve, &cli.common)
        }
        Cmd::Tilt { spec, gamma } => {
            let f = load(&spec)?;
            emit_spec(&compute(exp_tilt(&f, gamma))?, out)
        }
        Cmd::Itail { spec, dx } => {
            let f = load(&spec)?;
            let grid = compute(GridSpec::new(dx.unwrap_or(cfg.horizon / 4096.0), cfg.horizon))?;
            emit_spec(&compute(integrated_tail(&f, grid))?, out)
        }
        Cmd::Hfunc {
            spec,
            delta,
            levels,
            pairs,
            seed,
        } => {
            let f = load(&spec)?;
            let h = compute(construct_h(&f, delta, levels))?;
            let diagnostics = compute(verify_h(&h, &f, pairs, seed))?;
            #[derive(Serialize)]
            struct HOut<'a> {
                h: &'a convtail::HFunction,
                diagnostics: &'a convtail::HDiagnostics,
            }
            write_to(out, &json(&HOut { h: &h, diagnostics: &diagnostics })?)?;
            Ok(if diagnostics.pass { 0 } else { 3 })
        }
        Cmd::Counterexample { variant, gamma, atoms } => {
            let f = compute(convtail::counterexample(variant, gamma, atoms))?;
            emit_spec(&f, out)
        }
        Cmd::Classify { spec, class, gamma } => {
            let f = load(&spec)?;
            let tag = ClassTag::parse(&class, gamma).map_err(|e| Fail { code: 1, err: e.into() })?;
            let v = compute(test_class(&f, tag, &cfg))?;
            write_to(out, &json(&v)?)?;
            Ok(exit_for(v.status))
        }
    }
}

fn emit_curve(c: RatioCurve, common: &Common) -> Result<u8, Fail> {
    let text = match common.format {
        Some(Format::Json) => json(&c)?,
        _ => c.to_csv(),
    };
    write_to(common.out.as_deref(), &text)?;
    Ok(0)
}

fn emit_spec(f: &Distribution, out: Option<&Path>) -> Result<u8, Fail> {
    write_to(out, &DistSpec::of(f).to_json())?;
    Ok(0)
}

fn json<T: Serialize>(v: &T) -> anyhow::Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

fn write_to(path: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut o = std::io::stdout().lock();
            o.write_all(text.as_bytes())?;
            Ok(o.flush()?)
        }
    }
}
