//! Command-line front end.
//!
//! Every command writes one CSV artifact (to `--out`, or a per-command
//! default file name) and a short summary on standard output. Exit codes:
//! `0` success, `1` computed but the verdict is negative, `2` bad
//! configuration or numerical failure.

use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::counterexample::{
    limsup_liminf_demo, slope_search, DemoConfig, JointDensityModel, PerturbationBlock,
    SlopeSearchConfig, WindowAnalysis, DEFAULT_BETA_FRACTION,
};
use crate::density::DensityModel;
use crate::error::{Error, Result};
use crate::lin::{check_lin_condition, check_lin_values, geometric_grid, lin_function};
use crate::product::{
    positivity_integrand_check, product_csv, product_monotonicity_scan, product_table,
    ProductDensity, DEFAULT_SEED,
};
use crate::quadrature::QuadratureSpec;

#[derive(Debug, Parser)]
#[command(
    name = "lincond",
    version,
    about = "Lin's functions, products of densities, and a dependent-product counterexample"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// CSV output path; defaults to `<command>.csv`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Seed for sampled checks.
    #[arg(long, global = true, default_value_t = DEFAULT_SEED)]
    pub seed: u64,

    /// Relative tolerance for integrals (module default when omitted).
    #[arg(long, global = true)]
    pub rel_tol: Option<f64>,

    /// Absolute tolerance for integrals (module default when omitted).
    #[arg(long, global = true)]
    pub abs_tol: Option<f64>,

    /// Subdivision budget for integrals (module default when omitted).
    #[arg(long, global = true)]
    pub max_subdivisions: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct GridArgs {
    #[arg(long, default_value_t = 0.1)]
    pub x0: f64,
    #[arg(long, default_value_t = 100.0)]
    pub xmax: f64,
    #[arg(long, default_value_t = 64)]
    pub points: usize,
}

#[derive(Debug, Clone, Args)]
pub struct PairArgs {
    #[arg(long)]
    pub f1: String,
    #[arg(long)]
    pub f2: String,
}

#[derive(Debug, Clone, Args)]
pub struct BlockArgs {
    #[arg(long, default_value_t = 2.0)]
    pub v: f64,
    #[arg(long, default_value_t = 1.0)]
    pub a: f64,
    #[arg(long, default_value_t = 0.2)]
    pub r: f64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Lin's function of one density on a grid, with the Lin-condition verdict.
    Lin {
        /// Density as `family:p1,p2`, e.g. `gamma:2,1`.
        #[arg(long)]
        density: String,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Product density and its Lin function; verdict is monotonicity.
    Product {
        #[command(flatten)]
        pair: PairArgs,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Lower bound `L_g(x) ≥ ½ min L_fi(√x)`; verdict is the bound at every node.
    Bound {
        #[command(flatten)]
        pair: PairArgs,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// One perturbation block tuned until the product density has slopes `≥ A` and `≤ −B`.
    Counterexample {
        #[command(flatten)]
        pair: PairArgs,
        #[command(flatten)]
        block: BlockArgs,
        #[arg(long = "A", default_value_t = 10.0)]
        slope_up: f64,
        #[arg(long = "B", default_value_t = 10.0)]
        slope_down: f64,
    },
    /// Several blocks with growing slope targets.
    Demo {
        #[command(flatten)]
        pair: PairArgs,
        #[command(flatten)]
        block: BlockArgs,
        /// Slope target of the first window.
        #[arg(long = "A", default_value_t = 1e-3)]
        base_slope: f64,
        #[arg(long, default_value_t = 3)]
        n_blocks: usize,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Lin { .. } => "lin",
            Command::Product { .. } => "product",
            Command::Bound { .. } => "bound",
            Command::Counterexample { .. } => "counterexample",
            Command::Demo { .. } => "demo",
        }
    }
}

/// Validated run parameters.
#[derive(Debug)]
pub struct RunConfig {
    pub command: Command,
    pub common: CommonArgs,
    pub out: PathBuf,
}

impl RunConfig {
    pub fn from_cli(cli: Cli) -> Result<Self> {
        let out = cli
            .common
            .out
            .clone()
            .unwrap_or_else(|| PathBuf::from(format!("{}.csv", cli.command.name())));
        let config = Self {
            command: cli.command,
            common: cli.common,
            out,
        };
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<()> {
        let grid = match &self.command {
            Command::Lin { density, grid } => {
                parse_density(density)?;
                Some(grid)
            }
            Command::Product { pair, grid } | Command::Bound { pair, grid } => {
                parse_pair(pair)?;
                Some(grid)
            }
            Command::Counterexample {
                pair,
                block,
                slope_up,
                slope_down,
            } => {
                parse_pair(pair)?;
                check_block(block)?;
                if !(*slope_up > 0.0 && *slope_down > 0.0) {
                    return Err(Error::Config("--A and --B must be positive".into()));
                }
                None
            }
            Command::Demo {
                pair,
                block,
                base_slope,
                n_blocks,
            } => {
                parse_pair(pair)?;
                check_block(block)?;
                if !(*base_slope > 0.0) {
                    return Err(Error::Config("--A must be positive".into()));
                }
                if *n_blocks < 2 {
                    return Err(Error::Config("--n-blocks must be at least 2".into()));
                }
                None
            }
        };
        if let Some(g) = grid {
            if !(g.x0 > 0.0 && g.xmax > g.x0 && g.xmax.is_finite()) {
                return Err(Error::Config(format!(
                    "need 0 < --x0 < --xmax, got {} and {}",
                    g.x0, g.xmax
                )));
            }
            if g.points < 16 {
                return Err(Error::Config("--points must be at least 16".into()));
            }
        }
        self.spec_override(QuadratureSpec::default())?;
        Ok(())
    }

    /// `base` with any tolerance flags applied.
    fn spec_override(&self, base: QuadratureSpec) -> Result<QuadratureSpec> {
        let spec = QuadratureSpec {
            rel_tol: self.common.rel_tol.unwrap_or(base.rel_tol),
            abs_tol: self.common.abs_tol.unwrap_or(base.abs_tol),
            max_subdivisions: self
                .common
                .max_subdivisions
                .unwrap_or(base.max_subdivisions),
        };
        spec.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(spec)
    }
}

fn parse_density(text: &str) -> Result<DensityModel> {
    text.parse::<DensityModel>()
}

fn parse_pair(pair: &PairArgs) -> Result<(DensityModel, DensityModel)> {
    Ok((parse_density(&pair.f1)?, parse_density(&pair.f2)?))
}

fn check_block(b: &BlockArgs) -> Result<()> {
    PerturbationBlock::new(b.v, b.a, b.r, 1.0, 1.0)
        .map(|_| ())
        .map_err(|e| Error::Config(e.to_string()))
}

/// What a command produced: CSV body, summary lines, verdict.
struct Outcome {
    csv: String,
    summary: Vec<String>,
    verdict: bool,
}

fn product_density(config: &RunConfig, pair: &PairArgs) -> Result<ProductDensity> {
    let (f1, f2) = parse_pair(pair)?;
    let pd = ProductDensity::new(f1, f2);
    let spec = config.spec_override(pd.spec)?;
    Ok(pd.with_spec(spec))
}

fn execute(config: &RunConfig) -> Result<Outcome> {
    match &config.command {
        Command::Lin { density, grid } => {
            let d = parse_density(density)?;
            let report = check_lin_condition(&d, grid.x0, grid.xmax, grid.points)?;
            Ok(Outcome {
                csv: report.to_csv(),
                summary: vec![format!("density={d}"), report.summary()],
                verdict: report.monotone,
            })
        }
        Command::Product { pair, grid } => {
            let pd = product_density(config, pair)?;
            let nodes = geometric_grid(grid.x0, grid.xmax, grid.points);
            let rows = product_table(&pd, &nodes)?;
            let report = product_monotonicity_scan(&pd, grid.x0, grid.xmax, grid.points)?;
            let positive = positivity_integrand_check(&pd, 1.0, 2.0, 1000, config.common.seed)?;
            Ok(Outcome {
                csv: product_csv(&rows),
                summary: vec![
                    format!("f1={} f2={}", pd.f1, pd.f2),
                    report.summary(),
                    format!("integrand_nonnegative={positive}"),
                ],
                verdict: report.monotone && positive,
            })
        }
        Command::Bound { pair, grid } => {
            let pd = product_density(config, pair)?;
            let nodes = geometric_grid(grid.x0, grid.xmax, grid.points);
            let rows = product_table(&pd, &nodes)?;
            let failures = rows.iter().filter(|r| !r.holds).count();
            Ok(Outcome {
                csv: product_csv(&rows),
                summary: vec![
                    format!("f1={} f2={}", pd.f1, pd.f2),
                    format!("bound_holds={} failures={failures}", failures == 0),
                ],
                verdict: failures == 0,
            })
        }
        Command::Counterexample {
            pair,
            block,
            slope_up,
            slope_down,
        } => {
            let (f1, f2) = parse_pair(pair)?;
            let b = PerturbationBlock::admissible(
                &f1,
                &f2,
                block.v,
                block.a,
                block.r,
                DEFAULT_BETA_FRACTION,
            )?;
            let mut model = JointDensityModel::new(f1, f2, vec![b])?;
            model.spec = config.spec_override(model.spec)?;
            let (tuned, w) = slope_search(
                &model,
                0,
                *slope_up,
                *slope_down,
                &SlopeSearchConfig::default(),
            )?;
            let (lo, hi) = w.window;
            let g = tuned.product_density();
            let report = check_lin_values(|z| lin_function(&g, z, f64::INFINITY), lo, hi, 257)?;
            let mut summary = vec![
                format!("beta={} window=({lo}, {hi})", tuned.blocks()[0].beta),
                WindowAnalysis::SUMMARY_HEADER.to_string(),
                w.summary_line(),
            ];
            summary.push(report.summary());
            Ok(Outcome {
                csv: w.to_csv(),
                summary,
                verdict: w.lin_max > 0.0 && w.lin_min < 0.0 && !report.monotone,
            })
        }
        Command::Demo {
            pair,
            block,
            base_slope,
            n_blocks,
        } => {
            let (f1, f2) = parse_pair(pair)?;
            let demo = DemoConfig {
                v1: block.v,
                a: block.a,
                r: block.r,
                base_slope: *base_slope,
                beta_fraction: DEFAULT_BETA_FRACTION,
            };
            let outcome =
                limsup_liminf_demo(&f1, &f2, *n_blocks, &demo, &SlopeSearchConfig::default())?;
            let mut csv = format!("{}\n", WindowAnalysis::SUMMARY_HEADER);
            for w in &outcome.windows {
                csv.push_str(&w.summary_line());
                csv.push('\n');
            }
            let escalates = outcome.escalates();
            Ok(Outcome {
                csv,
                summary: vec![
                    format!("base_lin={}", outcome.base_lin),
                    format!(
                        "escalates={escalates} exceeds_base={}",
                        outcome.exceeds_base()
                    ),
                ],
                verdict: escalates,
            })
        }
    }
}

/// Runs one command, writing the CSV artifact and the summary to `stdout`.
/// Returns the process exit code.
pub fn run(config: &RunConfig, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    let outcome = match execute(config) {
        Ok(o) => o,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            return 2;
        }
    };
    if let Err(e) = fs::write(&config.out, &outcome.csv) {
        let _ = writeln!(stderr, "error: cannot write {}: {e}", config.out.display());
        return 2;
    }
    for line in &outcome.summary {
        let _ = writeln!(stdout, "{line}");
    }
    let _ = writeln!(stdout, "csv={}", config.out.display());
    if outcome.verdict {
        0
    } else {
        1
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with_args<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = if code == 0 {
                write!(stdout, "{e}")
            } else {
                write!(stderr, "{e}")
            };
            return code;
        }
    };
    match RunConfig::from_cli(cli) {
        Ok(config) => run(&config, stdout, stderr),
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            2
        }
    }
}
