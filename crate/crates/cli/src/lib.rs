//! `rdp` command-line front end.
//!
//! Exit codes: 0 success, 1 numerical failure, 2 infeasible or outside the
//! asymptotic regime, 3 Monte-Carlo validation failure, 64 usage error,
//! 74 I/O error.

pub mod format;
pub mod sweep;

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use rdp_core::asymptotics::{asymptotic_gap, FmdBranch, GapCase, Regime, MIN_GAP_EPS};
use rdp_core::monte_carlo::{simulate, validate_solution};
use rdp_core::rdp_solver::{solve_horizon, FrameSolution, RateProfile, SolverOptions};
use rdp_core::source_model::build_joint;
use rdp_core::{PlfKind, Rate, RdpError, SourceSpec};

use format::fmt_g;
use sweep::{fmt_rate, write_rows, SweepRow};

pub const EXIT_OK: i32 = 0;
pub const EXIT_NUMERICAL: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;
pub const EXIT_USAGE: i32 = 64;
pub const EXIT_IO: i32 = 74;

#[derive(Debug, Parser)]
#[command(
    name = "rdp",
    version,
    about = "Rate-distortion-perception tradeoffs for Gauss-Markov sources"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve every frame of one instance.
    Solve(SolveArgs),
    /// Sweep one frame's rate and write the last frame's distortion as CSV.
    Sweep(SweepArgs),
    /// Compare closed-form asymptotics with numeric solves.
    Asymptotics(AsymptoticsArgs),
    /// Solve, sample the resulting policy, and validate the solution.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SourceArgs {
    /// Correlation coefficient in [0, 1].
    #[arg(long)]
    pub rho: f64,
    #[arg(long, default_value_t = 1.0)]
    pub sigma2: f64,
    /// Step of the fallback grid search.
    #[arg(long, default_value_t = 0.005)]
    pub grid_step: f64,
}

impl SourceArgs {
    fn options(&self) -> SolverOptions {
        SolverOptions {
            grid_step: self.grid_step,
            ..SolverOptions::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Perception loss: fmd, jd or sa.
    #[arg(long)]
    pub plf: PlfKind,
    /// Comma-separated rates in bits, `inf` allowed; the count sets the horizon.
    #[arg(long, value_delimiter = ',', required = true)]
    pub rates: Vec<Rate<f64>>,
    #[command(flatten)]
    pub source: SourceArgs,
    /// Also print the last frame as a CSV row.
    #[arg(long)]
    pub csv: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Comma-separated perception losses.
    #[arg(long, value_delimiter = ',', default_value = "fmd,jd,sa")]
    pub plf: Vec<PlfKind>,
    /// Fixed rates, at most three; the swept entry is overwritten.
    #[arg(long, value_delimiter = ',', required = true)]
    pub rates: Vec<Rate<f64>>,
    /// Rate to sweep: R1, R2 or R3.
    #[arg(long)]
    pub sweep_axis: Axis,
    /// `min:max` in bits.
    #[arg(long)]
    pub sweep_range: SweepRange,
    /// Number of evenly spaced grid points.
    #[arg(long, default_value_t = 20)]
    pub steps: usize,
    #[command(flatten)]
    pub source: SourceArgs,
    /// Output path; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AsymptoticsArgs {
    /// low_R1, high_R1_eps_inf or high_R1_low_rest.
    #[arg(long)]
    pub regime: Regime,
    #[arg(long, value_delimiter = ',', default_value = "fmd,jd,sa")]
    pub plf: Vec<PlfKind>,
    /// Rate of frame 2 in the low_R1 regime.
    #[arg(long, default_value = "1")]
    pub r2: Rate<f64>,
    /// Decreasing eps values; a single 0 evaluates the exact endpoint without a fit.
    #[arg(long, value_delimiter = ',', default_value = "0.01,0.001,0.0001")]
    pub eps: Vec<f64>,
    /// FMD branch in the high-rate regimes: large or small; chosen from rho when absent.
    #[arg(long)]
    pub fmd_branch: Option<Branch>,
    #[command(flatten)]
    pub source: SourceArgs,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub plf: PlfKind,
    #[arg(long, value_delimiter = ',', required = true)]
    pub rates: Vec<Rate<f64>>,
    #[command(flatten)]
    pub source: SourceArgs,
    /// Sampled trajectories.
    #[arg(long, default_value_t = 1_000_000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Added to the source coefficient of frame 2 before sampling; the
    /// analytic reference keeps the solved value.
    #[arg(long)]
    pub perturb: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Axis(pub usize);

impl FromStr for Axis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let digits = s.trim_start_matches(['R', 'r']);
        match digits.parse::<usize>() {
            Ok(k @ 1..=3) => Ok(Axis(k)),
            _ => Err(format!("expected R1, R2 or R3, got {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRange {
    pub min: f64,
    pub max: f64,
}

impl FromStr for SweepRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (a, b) = s
            .split_once(':')
            .ok_or_else(|| format!("expected min:max, got {s:?}"))?;
        let parse = |x: &str| x.trim().parse::<f64>().map_err(|_| format!("not a number: {x:?}"));
        let (min, max) = (parse(a)?, parse(b)?);
        if !(min >= 0.0 && max >= min && max.is_finite()) {
            return Err(format!("need 0 <= min <= max < inf, got {s:?}"));
        }
        Ok(SweepRange { min, max })
    }
}

impl SweepRange {
    pub fn grid(&self, steps: usize) -> Vec<f64> {
        if steps <= 1 {
            return vec![self.min];
        }
        let h = (self.max - self.min) / (steps - 1) as f64;
        (0..steps)
            .map(|i| {
                if i + 1 == steps {
                    self.max
                } else {
                    self.min + h * i as f64
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Branch(pub FmdBranch);

impl FromStr for Branch {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "large" => Ok(Branch(FmdBranch::LargeRho)),
            "small" => Ok(Branch(FmdBranch::SmallRho)),
            _ => Err(format!("expected large or small, got {s:?}")),
        }
    }
}

/// Failure of a command, carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<RdpError> for Failure {
    fn from(e: RdpError) -> Self {
        let code = match e.root() {
            RdpError::Infeasible { .. }
            | RdpError::OutOfRegime(_)
            | RdpError::BranchAmbiguity(_)
            | RdpError::RegimeMismatch(_) => EXIT_INFEASIBLE,
            RdpError::ParameterDomain(_) | RdpError::Shape(_) | RdpError::UnknownLabel(_) => EXIT_USAGE,
            RdpError::NumericalFailure { .. }
            | RdpError::NumericalDegeneracy(_)
            | RdpError::NotImplemented(_)
            | RdpError::Frame { .. } => EXIT_NUMERICAL,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Self {
            code: EXIT_IO,
            message: e.to_string(),
        }
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Self {
            code: EXIT_IO,
            message: e.to_string(),
        }
    }
}

/// Parse `args` and run, writing results to `out`; returns the exit code.
pub fn run<I, W>(args: I, out: &mut W, err: &mut dyn Write) -> i32
where
    I: IntoIterator,
    I::Item: Into<OsString> + Clone,
    W: Write,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = write!(err, "{}", e.render());
            return code;
        }
    };
    let result = match cli.command {
        Command::Solve(a) => cmd_solve(&a, out),
        Command::Sweep(a) => cmd_sweep(&a, out),
        Command::Asymptotics(a) => cmd_asymptotics(&a, out),
        Command::Simulate(a) => cmd_simulate(&a, out),
    };
    let _ = out.flush();
    match result {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

type CmdResult = Result<i32, Failure>;

fn spec_for(source: &SourceArgs, horizon: usize) -> Result<SourceSpec<f64>, Failure> {
    if source.grid_step.is_nan() || source.grid_step <= 0.0 {
        return Err(Failure::usage(format!(
            "--grid-step must be positive, got {}",
            source.grid_step
        )));
    }
    Ok(SourceSpec::new(source.rho, source.sigma2, horizon)?)
}

type Solved = (SourceSpec<f64>, rdp_core::ReconPolicyF64, Vec<FrameSolution<f64>>);

fn solve(kind: PlfKind, rates: &[Rate<f64>], source: &SourceArgs) -> Result<Solved, Failure> {
    let spec = spec_for(source, rates.len())?;
    let profile = RateProfile::new(rates.to_vec())?;
    let (policy, sols) = solve_horizon(kind, &profile, &spec, &source.options())?;
    Ok((spec, policy, sols))
}

pub fn cmd_solve<W: Write>(a: &SolveArgs, out: &mut W) -> CmdResult {
    let (_, _, sols) = solve(a.plf, &a.rates, &a.source)?;
    writeln!(
        out,
        "plf={} rho={} sigma2={} horizon={}",
        a.plf,
        fmt_g(a.source.rho, 9),
        fmt_g(a.source.sigma2, 9),
        a.rates.len()
    )?;
    writeln!(
        out,
        "{:>5}  {:>12}  {:>14}  {:>14}  {:>12}  {:<17}  coefficients (past..., source; noise)",
        "frame", "rate", "distortion", "rate_used", "plf_resid", "status"
    )?;
    for (sol, rate) in sols.iter().zip(&a.rates) {
        let coeffs: Vec<String> = sol.coeffs.weights().iter().map(|&x| fmt_g(x, 6)).collect();
        writeln!(
            out,
            "{:>5}  {:>12}  {:>14}  {:>14}  {:>12}  {:<17}  [{}; {}]",
            sol.frame(),
            fmt_rate(*rate),
            fmt_g(sol.distortion, 9),
            fmt_rate(sol.rate_used),
            fmt_g(sol.perception_residual, 3),
            sol.solver_status.to_string(),
            coeffs.join(", "),
            fmt_g(sol.coeffs.noise_var, 6)
        )?;
    }
    if a.csv {
        let last = sols.last().expect("horizon is at least one frame");
        write_rows(
            &mut *out,
            &[SweepRow::from_solution(last, &a.rates, a.source.rho, a.source.sigma2)],
        )?;
    }
    Ok(EXIT_OK)
}

pub fn cmd_sweep<W: Write>(a: &SweepArgs, out: &mut W) -> CmdResult {
    let horizon = a.rates.len();
    if !(1..=3).contains(&horizon) {
        return Err(Failure::usage(format!("sweeps take 1 to 3 rates, got {horizon}")));
    }
    let axis = a.sweep_axis.0;
    if axis > horizon {
        return Err(Failure::usage(format!(
            "--sweep-axis R{axis} beyond the {horizon} given rates"
        )));
    }
    if a.steps == 0 {
        return Err(Failure::usage("--steps must be at least 1"));
    }
    if a.plf.is_empty() {
        return Err(Failure::usage("--plf needs at least one loss"));
    }
    spec_for(&a.source, horizon)?;

    let grid = a.sweep_range.grid(a.steps);
    let jobs: Vec<(PlfKind, f64)> = a.plf.iter().flat_map(|&k| grid.iter().map(move |&r| (k, r))).collect();
    let results: Vec<Result<(f64, SweepRow), Failure>> = jobs
        .par_iter()
        .map(|&(kind, r)| {
            let mut rates = a.rates.clone();
            rates[axis - 1] = Rate::Finite(r);
            let (_, _, sols) = solve(kind, &rates, &a.source)?;
            let last = sols.last().expect("horizon is at least one frame");
            Ok((r, SweepRow::from_solution(last, &rates, a.source.rho, a.source.sigma2)))
        })
        .collect();
    let mut rows = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    rows.sort_by(|x, y| x.1.plf.tag().cmp(y.1.plf.tag()).then(x.0.total_cmp(&y.0)));
    let rows: Vec<SweepRow> = rows.into_iter().map(|(_, row)| row).collect();

    match &a.out {
        Some(path) => {
            let file = File::create(path).map_err(|e| Failure {
                code: EXIT_IO,
                message: format!("{}: {e}", path.display()),
            })?;
            write_rows(BufWriter::new(file), &rows)?;
        }
        None => write_rows(&mut *out, &rows)?,
    }
    Ok(EXIT_OK)
}

pub fn cmd_asymptotics<W: Write>(a: &AsymptoticsArgs, out: &mut W) -> CmdResult {
    spec_for(&a.source, 1)?;
    if a.eps.is_empty() {
        return Err(Failure::usage("--eps needs at least one value"));
    }
    let frames: &[usize] = match a.regime {
        Regime::LowR1 => &[2],
        _ => &[2, 3],
    };
    let opts = a.source.options();
    let fit_possible = a.eps.len() >= 2 && a.eps.iter().all(|&e| e >= MIN_GAP_EPS);

    writeln!(
        out,
        "regime={} rho={} sigma2={}{}",
        a.regime,
        fmt_g(a.source.rho, 9),
        fmt_g(a.source.sigma2, 9),
        if a.regime == Regime::LowR1 {
            format!(" R2={}", fmt_rate(a.r2))
        } else {
            String::new()
        }
    )?;
    writeln!(
        out,
        "{:<4}  {:>5}  {:>10}  {:>14}  {:>14}  {:>12}  {:>12}  {:>10}",
        "plf", "frame", "eps", "asymptotic", "numeric", "gap", "C", "fit_resid"
    )?;
    for &kind in &a.plf {
        for &frame in frames {
            let case = GapCase {
                kind,
                frame,
                regime: a.regime,
                rho: a.source.rho,
                sigma2: a.source.sigma2,
                r2: a.r2,
                fmd_branch: a.fmd_branch.map(|b| b.0),
            };
            let (points, fit) = if fit_possible {
                let fit = asymptotic_gap(&case, &a.eps, &opts)?;
                (fit.points.clone(), Some((fit.c, fit.residual)))
            } else {
                let mut points = Vec::new();
                for &eps in &a.eps {
                    let asymptotic = case.asymptotic(eps)?;
                    let numeric = case.numeric(eps, &opts)?;
                    points.push(rdp_core::asymptotics::GapPoint {
                        eps,
                        numeric,
                        asymptotic,
                        gap: (numeric - asymptotic).abs(),
                    });
                }
                (points, None)
            };
            let (c, res) = match fit {
                Some((c, r)) => (fmt_g(c, 4), fmt_g(r, 3)),
                None => ("-".into(), "-".into()),
            };
            for p in points {
                writeln!(
                    out,
                    "{:<4}  {:>5}  {:>10}  {:>14}  {:>14}  {:>12}  {:>12}  {:>10}",
                    kind.tag(),
                    frame,
                    fmt_g(p.eps, 4),
                    fmt_g(p.asymptotic, 9),
                    fmt_g(p.numeric, 9),
                    fmt_g(p.gap, 3),
                    c,
                    res
                )?;
            }
        }
    }
    Ok(EXIT_OK)
}

pub fn cmd_simulate<W: Write>(a: &SimulateArgs, out: &mut W) -> CmdResult {
    let (spec, mut policy, sols) = solve(a.plf, &a.rates, &a.source)?;
    let analytic = build_joint(&spec, &policy)?;
    if let Some(delta) = a.perturb {
        if !delta.is_finite() {
            return Err(Failure::usage(format!("--perturb must be finite, got {delta}")));
        }
        let j = policy.len().min(2);
        policy.frames[j - 1].source_coeff += delta;
        writeln!(
            out,
            "perturbed: source coefficient of frame {j} shifted by {}",
            fmt_g(delta, 6)
        )?;
    }
    let stats = simulate(&spec, &policy, a.n, a.seed)?;
    let report = validate_solution(&stats, &analytic, &sols)?;
    writeln!(
        out,
        "plf={} rho={} sigma2={} seed={}",
        a.plf,
        fmt_g(a.source.rho, 9),
        fmt_g(a.source.sigma2, 9),
        a.seed
    )?;
    writeln!(out, "{report}")?;
    Ok(if report.passed() { EXIT_OK } else { EXIT_VALIDATION })
}
