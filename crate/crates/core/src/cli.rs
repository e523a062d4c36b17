//! `nfsic <command> [flags]`: tests on CSV data, simulations, data generation
//! and witness surfaces.
//!
//! Output documents are deterministic under `--seed`: wall-clock columns are
//! only filled in when `--timing` is given.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::baselines::{check_hsic_size, hsic_test};
use crate::csvio::{read_matrix_file, write_matrix_file};
use crate::data::{JointSample, TestLocations};
use crate::error::{invalid, Error, Result};
use crate::kernels::GaussianKernel;
use crate::matrix::Matrix;
use crate::power::{
    median_kernels, power_vs_j_sweep, simulate_rejection_rate, GridParam, SimMethod, SimulationPlan,
    SimulationResult, SweepConfig,
};
use crate::problems::{ProblemKind, ProblemSpec};
use crate::rng::{derive_seed, rng_from_seed};
use crate::statistic::{nfsic_statistic, witness_surface};
use crate::testing::{check_alpha, test_chi2, test_permutation, TestOutcome, ThresholdMethod};
use crate::tuning::{adaptive_test_with_restarts, TuningConfig};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Sample size below which the asymptotic threshold earns a hint.
const PERMUTATION_HINT_N: usize = 1000;

#[derive(Debug, Parser)]
#[command(name = "nfsic", version, about = "Linear-time adaptive kernel independence test")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Test independence of the rows of two CSV files.
    Test(TestArgs),
    /// Type-I error of a method on independent Gaussian data.
    NullSim(NullSimArgs),
    /// Rejection rate of a method over a parameter grid.
    Power(PowerArgs),
    /// Power of random-location tests on the sinusoid problem, per J.
    SweepJ(SweepArgs),
    /// Write a synthetic sample as two CSV files.
    Gen(GenArgs),
    /// Single-location statistic over a grid, for 1-D x and y.
    Witness(WitnessArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdArg {
    Chi2,
    Permutation,
}

impl From<ThresholdArg> for ThresholdMethod {
    fn from(t: ThresholdArg) -> Self {
        match t {
            ThresholdArg::Chi2 => ThresholdMethod::Chi2,
            ThresholdArg::Permutation => ThresholdMethod::Permutation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodArg {
    /// NFSIC; tuned when --optimize is given.
    Nfsic,
    #[value(alias = "nfsic_opt")]
    NfsicOpt,
    #[value(alias = "nfsic_med")]
    NfsicMed,
    Qhsic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemArg {
    Sg,
    Sin,
    Gsign,
    NegLinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GridArg {
    N,
    Omega,
    Dx,
    Dy,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TestOptions {
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Number of test locations.
    #[arg(long = "j", default_value_t = 10)]
    pub j: usize,
    /// Tune widths and locations on a training split.
    #[arg(long)]
    pub optimize: bool,
    #[arg(long, default_value_t = 0.5)]
    pub train_fraction: f64,
    #[arg(long, value_enum, default_value_t = ThresholdArg::Chi2)]
    pub threshold: ThresholdArg,
    #[arg(long, default_value_t = 300)]
    pub perms: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = OutputFormat::Json)]
    pub output: OutputFormat,
    #[arg(long, value_enum, default_value_t = MethodArg::Nfsic)]
    pub method: MethodArg,
    /// Independent optimizer restarts (best objective wins).
    #[arg(long, default_value_t = 1)]
    pub restarts: usize,
    /// Permit quadratic-time HSIC above its sample-size guard.
    #[arg(long)]
    pub allow_large: bool,
}

impl TestOptions {
    fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        if self.j == 0 {
            return Err(invalid("--j must be at least 1"));
        }
        if self.perms == 0 {
            return Err(invalid("--perms must be at least 1"));
        }
        if self.restarts == 0 {
            return Err(invalid("--restarts must be at least 1"));
        }
        self.tuning(self.seed).validate()
    }

    fn tuning(&self, seed: u64) -> TuningConfig {
        TuningConfig {
            train_fraction: self.train_fraction,
            gamma: self.gamma,
            seed,
            threshold: self.threshold.into(),
            num_perms: self.perms,
            ..TuningConfig::default()
        }
    }

    fn sim_method(&self) -> SimMethod {
        match self.method {
            MethodArg::Nfsic if self.optimize => SimMethod::NfsicOpt,
            MethodArg::Nfsic | MethodArg::NfsicMed => SimMethod::NfsicMed,
            MethodArg::NfsicOpt => SimMethod::NfsicOpt,
            MethodArg::Qhsic => SimMethod::Qhsic,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TestArgs {
    #[arg(long)]
    pub x: PathBuf,
    #[arg(long)]
    pub y: PathBuf,
    /// Ignore the first line of each CSV file.
    #[arg(long)]
    pub skip_header: bool,
    #[command(flatten)]
    #[serde(flatten)]
    pub opts: TestOptions,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimOptions {
    #[arg(long, default_value_t = 300)]
    pub trials: usize,
    /// Fill in wall-clock columns (makes output run-dependent).
    #[arg(long)]
    pub timing: bool,
    /// Also write per-trial records to this CSV file.
    #[arg(long)]
    pub records: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct NullSimArgs {
    /// Sample sizes (comma-separated).
    #[arg(long, value_delimiter = ',', default_value = "1000")]
    pub n: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    pub dx: usize,
    #[arg(long, default_value_t = 1)]
    pub dy: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub sim: SimOptions,
    #[command(flatten)]
    #[serde(flatten)]
    pub opts: TestOptions,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PowerArgs {
    #[arg(long, value_enum, default_value_t = ProblemArg::Sin)]
    pub problem: ProblemArg,
    /// Parameter varied over --grid.
    #[arg(long, value_enum, default_value_t = GridArg::Omega)]
    pub param: GridArg,
    /// Grid values (comma-separated).
    #[arg(long, value_delimiter = ',', required = true)]
    pub grid: Vec<f64>,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 1.0)]
    pub omega: f64,
    #[arg(long, default_value_t = 1)]
    pub dx: usize,
    #[arg(long, default_value_t = 1)]
    pub dy: usize,
    #[arg(long, default_value_t = 0.3)]
    pub noise_sd: f64,
    #[command(flatten)]
    #[serde(flatten)]
    pub sim: SimOptions,
    #[command(flatten)]
    #[serde(flatten)]
    pub opts: TestOptions,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SweepArgs {
    #[arg(long, default_value_t = 2.0)]
    pub omega: f64,
    #[arg(long, default_value_t = 800)]
    pub n: usize,
    /// Numbers of locations (comma-separated).
    #[arg(long, value_delimiter = ',', default_value = "1,10,100")]
    pub j_grid: Vec<usize>,
    #[arg(long, default_value_t = 200)]
    pub trials: usize,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = OutputFormat::Json)]
    pub output: OutputFormat,
    #[arg(long)]
    pub timing: bool,
    #[arg(long)]
    pub records: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GenArgs {
    #[arg(value_enum)]
    pub problem: ProblemArg,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 1)]
    pub dx: usize,
    #[arg(long, default_value_t = 1)]
    pub dy: usize,
    #[arg(long, default_value_t = 1.0)]
    pub omega: f64,
    #[arg(long, default_value_t = 0.3)]
    pub noise_sd: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "x.csv")]
    pub out_x: PathBuf,
    #[arg(long, default_value = "y.csv")]
    pub out_y: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct WitnessArgs {
    #[arg(long)]
    pub x: PathBuf,
    #[arg(long)]
    pub y: PathBuf,
    #[arg(long)]
    pub skip_header: bool,
    /// Grid points along x.
    #[arg(long, default_value_t = 50)]
    pub nv: usize,
    /// Grid points along y.
    #[arg(long, default_value_t = 50)]
    pub nw: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = OutputFormat::Csv)]
    pub output: OutputFormat,
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let rendered = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(err, "{rendered}");
            } else {
                let _ = write!(out, "{rendered}");
            }
            return code;
        }
    };
    let echo: Vec<String> = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match dispatch(&cli.command, &echo, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}

fn dispatch(cmd: &Command, echo: &[String], out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Test(a) => cmd_test(a, echo, out, err),
        Command::NullSim(a) => cmd_null_sim(a, echo, out),
        Command::Power(a) => cmd_power(a, echo, out),
        Command::SweepJ(a) => cmd_sweep_j(a, echo, out),
        Command::Gen(a) => cmd_gen(a, echo, out),
        Command::Witness(a) => cmd_witness(a, echo, out),
    }
}

struct Document<'a> {
    command: &'a str,
    echo: &'a [String],
    config: Value,
    seed: u64,
}

impl Document<'_> {
    fn json(&self, result: Value) -> Value {
        json!({
            "tool": "nfsic",
            "version": VERSION,
            "command": self.command,
            "args": self.echo,
            "seed": self.seed,
            "config": self.config,
            "result": result,
        })
    }

    fn write_json(&self, out: &mut dyn Write, result: Value) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.json(result)).map_err(|e| Error::Io(e.to_string()))?;
        writeln!(out, "{text}")?;
        Ok(())
    }

    fn write_csv_preamble(&self, out: &mut dyn Write) -> Result<()> {
        writeln!(out, "# nfsic {VERSION}")?;
        writeln!(out, "# command: {}", self.command)?;
        writeln!(out, "# args: {}", serde_json::to_string(self.echo).unwrap_or_default())?;
        writeln!(out, "# seed: {}", self.seed)?;
        writeln!(out, "# config: {}", serde_json::to_string(&self.config).unwrap_or_default())?;
        Ok(())
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

fn csv_field(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn read_pair(x: &Path, y: &Path, skip_header: bool) -> Result<JointSample> {
    let xs = read_matrix_file(x, skip_header)?;
    let ys = read_matrix_file(y, skip_header)?;
    if xs.rows() != ys.rows() {
        return Err(invalid(format!(
            "row-count mismatch: x file has {} rows but y file has {} rows",
            xs.rows(),
            ys.rows()
        )));
    }
    JointSample::new(xs, ys)
}

/// Per-coordinate Gaussian fitted to the data.
fn moment_matched_locations(sample: &JointSample, j: usize, seed: u64) -> Result<TestLocations> {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = rng_from_seed(seed);
    let mut draw = |m: &Matrix| -> Result<Matrix> {
        let n = m.rows() as f64;
        let stats: Vec<(f64, f64)> = (0..m.cols())
            .map(|c| {
                let mean = m.iter_rows().map(|r| r[c]).sum::<f64>() / n;
                let var = m.iter_rows().map(|r| (r[c] - mean).powi(2)).sum::<f64>() / n;
                (mean, var.sqrt())
            })
            .collect();
        let mut data = Vec::with_capacity(j * m.cols());
        for _ in 0..j {
            for &(mean, sd) in &stats {
                let z: f64 = StandardNormal.sample(&mut rng);
                data.push(mean + sd * z);
            }
        }
        Matrix::from_vec(j, m.cols(), data)
    };
    let vs = draw(sample.xs())?;
    let ws = draw(sample.ys())?;
    TestLocations::new(vs, ws)
}

fn run_test(sample: &JointSample, o: &TestOptions) -> Result<TestOutcome> {
    match o.sim_method() {
        SimMethod::Qhsic => {
            check_hsic_size(sample.n(), o.allow_large)?;
            let (kx, ky) = median_kernels(sample)?;
            hsic_test(sample, &kx, &ky, o.alpha, o.perms, derive_seed(o.seed, &[2]))
        }
        SimMethod::NfsicOpt => adaptive_test_with_restarts(sample, o.j, o.alpha, &o.tuning(o.seed), o.restarts),
        SimMethod::NfsicMed => {
            let (kx, ky) = median_kernels(sample)?;
            let locs = moment_matched_locations(sample, o.j, derive_seed(o.seed, &[1]))?;
            match o.threshold {
                ThresholdArg::Chi2 => test_chi2(&nfsic_statistic(sample, &kx, &ky, &locs, o.gamma)?, o.alpha),
                ThresholdArg::Permutation => {
                    test_permutation(sample, &kx, &ky, &locs, o.gamma, o.alpha, o.perms, derive_seed(o.seed, &[2]))
                }
            }
        }
    }
}

fn method_name(m: SimMethod) -> &'static str {
    match m {
        SimMethod::NfsicOpt => "nfsic_opt",
        SimMethod::NfsicMed => "nfsic_med",
        SimMethod::Qhsic => "qhsic",
    }
}

fn cmd_test(a: &TestArgs, echo: &[String], out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    a.opts.validate()?;
    let sample = read_pair(&a.x, &a.y, a.skip_header)?;
    let method = a.opts.sim_method();
    if sample.n() < PERMUTATION_HINT_N && method != SimMethod::Qhsic && a.opts.threshold == ThresholdArg::Chi2 {
        writeln!(
            err,
            "hint: n = {} < {PERMUTATION_HINT_N}; the chi2 threshold is asymptotic, consider --threshold permutation",
            sample.n()
        )?;
    }
    let o = run_test(&sample, &a.opts)?;
    let j = if method == SimMethod::Qhsic { None } else { Some(a.opts.j) };
    let doc = Document {
        command: "test",
        echo,
        config: to_value(a),
        seed: a.opts.seed,
    };
    match a.opts.output {
        OutputFormat::Json => {
            let mut result = json!({
                "method": method_name(method),
                "n": sample.n(),
                "dx": sample.dx(),
                "dy": sample.dy(),
                "J": j,
                "alpha": o.alpha,
                "statistic": o.statistic,
                "threshold": o.threshold,
                "p_value": o.p_value,
                "reject": o.reject,
                "threshold_method": o.method,
            });
            if let Some(t) = &o.tuned_params {
                result["tuned"] = json!({
                    "sigma2_x": t.sigma2_x,
                    "sigma2_y": t.sigma2_y,
                    "locations": { "v": rows(t.locations.vs()), "w": rows(t.locations.ws()) },
                });
            }
            doc.write_json(out, result)
        }
        OutputFormat::Csv => {
            doc.write_csv_preamble(out)?;
            writeln!(out, "method,n,dx,dy,J,alpha,statistic,threshold,p_value,reject,threshold_method,sigma2_x,sigma2_y")?;
            let tm = match o.method {
                ThresholdMethod::Chi2 => "chi2",
                ThresholdMethod::Permutation => "permutation",
            };
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                method_name(method),
                sample.n(),
                sample.dx(),
                sample.dy(),
                j.map(|v| v.to_string()).unwrap_or_default(),
                o.alpha,
                o.statistic,
                o.threshold,
                o.p_value,
                o.reject,
                tm,
                csv_field(o.tuned_params.as_ref().map(|t| t.sigma2_x)),
                csv_field(o.tuned_params.as_ref().map(|t| t.sigma2_y)),
            )?;
            Ok(())
        }
    }
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.iter_rows().map(<[f64]>::to_vec).collect()
}

fn problem_spec(kind: ProblemArg, dx: usize, dy: usize, omega: f64, noise_sd: f64) -> ProblemSpec {
    let kind = match kind {
        ProblemArg::Sg => ProblemKind::Sg,
        ProblemArg::Sin => ProblemKind::Sin,
        ProblemArg::Gsign => ProblemKind::Gsign,
        ProblemArg::NegLinear => ProblemKind::NegLinear,
    };
    ProblemSpec {
        kind,
        dx,
        dy,
        omega,
        noise_sd,
    }
}

fn plan_from(problem: ProblemSpec, n: usize, param: GridParam, grid: Vec<f64>, sim: &SimOptions, o: &TestOptions) -> Result<SimulationPlan> {
    o.validate()?;
    let plan = SimulationPlan {
        alpha: o.alpha,
        j: o.j,
        master_seed: o.seed,
        gamma: o.gamma,
        threshold: o.threshold.into(),
        num_perms: o.perms,
        tuning: o.tuning(o.seed),
        allow_large_hsic: o.allow_large,
        ..SimulationPlan::new(problem, o.sim_method(), n, param, grid, sim.trials)
    };
    plan.validate()?;
    Ok(plan)
}

fn write_table(
    doc: &Document,
    format: OutputFormat,
    grid_name: &str,
    res: &SimulationResult,
    timing: bool,
    records: Option<&Path>,
    out: &mut dyn Write,
) -> Result<()> {
    if let Some(path) = records {
        write_records(path, res, timing)?;
    }
    match format {
        OutputFormat::Json => {
            let rows: Vec<Value> = res
                .rows
                .iter()
                .map(|r| {
                    json!({
                        "grid_value": r.grid_value,
                        "trials": r.trials,
                        "rejections": r.rejections,
                        "rate": r.rate,
                        "mean_runtime_ms": if timing { Some(r.mean_runtime_ms) } else { None },
                        "failures": r.failures,
                    })
                })
                .collect();
            doc.write_json(out, json!({ "grid_param": grid_name, "rows": rows }))
        }
        OutputFormat::Csv => {
            doc.write_csv_preamble(out)?;
            writeln!(out, "# grid_param: {grid_name}")?;
            writeln!(out, "grid_value,trials,rejections,rate,mean_runtime_ms,failures")?;
            for r in &res.rows {
                let rt = if timing { format!("{}", r.mean_runtime_ms) } else { String::new() };
                writeln!(out, "{},{},{},{},{},{}", r.grid_value, r.trials, r.rejections, r.rate, rt, r.failures)?;
            }
            Ok(())
        }
    }
}

fn write_records(path: &Path, res: &SimulationResult, timing: bool) -> Result<()> {
    let mut s = String::from("grid_index,grid_value,trial,seed,reject,statistic,p_value,error");
    s.push_str(if timing { ",runtime_ms\n" } else { "\n" });
    for r in &res.records {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}",
            r.grid_index,
            r.grid_value,
            r.trial,
            r.seed,
            r.reject.map(|b| b.to_string()).unwrap_or_default(),
            csv_field(r.statistic),
            csv_field(r.p_value),
            r.error.as_deref().unwrap_or("").replace([',', '\n'], ";"),
        ));
        if timing {
            s.push_str(&format!(",{}", r.runtime_ms));
        }
        s.push('\n');
    }
    std::fs::write(path, s).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn cmd_null_sim(a: &NullSimArgs, echo: &[String], out: &mut dyn Write) -> Result<()> {
    let grid: Vec<f64> = a.n.iter().map(|&n| n as f64).collect();
    let n0 = a.n.first().copied().unwrap_or(0);
    let plan = plan_from(ProblemSpec::sg(a.dx, a.dy), n0, GridParam::N, grid, &a.sim, &a.opts)?;
    let res = simulate_rejection_rate(&plan)?;
    let doc = Document {
        command: "null-sim",
        echo,
        config: json!({ "args": to_value(a), "method": method_name(plan.method), "problem": to_value(&plan.problem) }),
        seed: a.opts.seed,
    };
    write_table(&doc, a.opts.output, "n", &res, a.sim.timing, a.sim.records.as_deref(), out)
}

fn cmd_power(a: &PowerArgs, echo: &[String], out: &mut dyn Write) -> Result<()> {
    let problem = problem_spec(a.problem, a.dx, a.dy, a.omega, a.noise_sd);
    let (param, name) = match a.param {
        GridArg::N => (GridParam::N, "n"),
        GridArg::Omega => (GridParam::Omega, "omega"),
        GridArg::Dx => (GridParam::Dx, "dx"),
        GridArg::Dy => (GridParam::Dy, "dy"),
    };
    let plan = plan_from(problem, a.n, param, a.grid.clone(), &a.sim, &a.opts)?;
    let res = simulate_rejection_rate(&plan)?;
    let doc = Document {
        command: "power",
        echo,
        config: json!({ "args": to_value(a), "method": method_name(plan.method), "problem": to_value(&plan.problem) }),
        seed: a.opts.seed,
    };
    write_table(&doc, a.opts.output, name, &res, a.sim.timing, a.sim.records.as_deref(), out)
}

fn cmd_sweep_j(a: &SweepArgs, echo: &[String], out: &mut dyn Write) -> Result<()> {
    let cfg = SweepConfig {
        problem: ProblemSpec::sin(a.omega),
        j_grid: a.j_grid.clone(),
        n: a.n,
        trials: a.trials,
        alpha: a.alpha,
        gamma: a.gamma,
        master_seed: a.seed,
    };
    let res = power_vs_j_sweep(&cfg)?;
    let doc = Document {
        command: "sweep-j",
        echo,
        config: to_value(a),
        seed: a.seed,
    };
    write_table(&doc, a.output, "J", &res, a.timing, a.records.as_deref(), out)
}

fn cmd_gen(a: &GenArgs, echo: &[String], out: &mut dyn Write) -> Result<()> {
    let (dx, dy) = match a.problem {
        ProblemArg::Sg => (a.dx, a.dy),
        ProblemArg::Gsign => (a.dx, 1),
        ProblemArg::Sin | ProblemArg::NegLinear => (1, 1),
    };
    let spec = problem_spec(a.problem, dx, dy, a.omega, a.noise_sd);
    let sample = spec.sample(a.n, a.seed)?;
    write_matrix_file(&a.out_x, sample.xs())?;
    write_matrix_file(&a.out_y, sample.ys())?;
    let doc = Document {
        command: "gen",
        echo,
        config: json!({ "args": to_value(a), "problem": to_value(&spec) }),
        seed: a.seed,
    };
    doc.write_json(
        out,
        json!({
            "n": sample.n(),
            "dx": sample.dx(),
            "dy": sample.dy(),
            "x_path": a.out_x,
            "y_path": a.out_y,
        }),
    )
}

/// `count` evenly spaced points from `lo` to `hi` inclusive.
fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..count).map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64).collect()
}

fn padded_range(m: &Matrix) -> (f64, f64) {
    let v = m.as_slice();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo - sd, hi + sd)
}

fn cmd_witness(a: &WitnessArgs, echo: &[String], out: &mut dyn Write) -> Result<()> {
    if a.nv == 0 || a.nw == 0 {
        return Err(invalid("--nv and --nw must be at least 1"));
    }
    let sample = read_pair(&a.x, &a.y, a.skip_header)?;
    if sample.dx() != 1 || sample.dy() != 1 {
        return Err(invalid(format!(
            "witness needs one-dimensional x and y, got dx = {}, dy = {}",
            sample.dx(),
            sample.dy()
        )));
    }
    let kx = GaussianKernel::from_median_heuristic(sample.xs())?;
    let ky = GaussianKernel::from_median_heuristic(sample.ys())?;
    let (vlo, vhi) = padded_range(sample.xs());
    let (wlo, whi) = padded_range(sample.ys());
    let vgrid = linspace(vlo, vhi, a.nv);
    let wgrid = linspace(wlo, whi, a.nw);
    let mut vs = Vec::with_capacity(a.nv * a.nw);
    let mut ws = Vec::with_capacity(a.nv * a.nw);
    for &v in &vgrid {
        for &w in &wgrid {
            vs.push(v);
            ws.push(w);
        }
    }
    let grid = TestLocations::new(Matrix::column(&vs), Matrix::column(&ws))?;
    let points = witness_surface(&sample, &kx, &ky, &grid, a.gamma)?;
    let doc = Document {
        command: "witness",
        echo,
        config: json!({ "args": to_value(a), "sigma2_x": kx.width_sq(), "sigma2_y": ky.width_sq() }),
        seed: a.seed,
    };
    match a.output {
        OutputFormat::Csv => {
            doc.write_csv_preamble(out)?;
            writeln!(out, "v,w,mu_xy_hat,mu_x_mu_y_hat,sigma_hat,lambda_hat")?;
            for ((v, w), p) in vs.iter().zip(&ws).zip(&points) {
                writeln!(out, "{v},{w},{},{},{},{}", p.mu_xy_hat, p.mu_x_mu_y_hat, p.sigma_hat, p.lambda_hat)?;
            }
            Ok(())
        }
        OutputFormat::Json => {
            let rows: Vec<Value> = vs
                .iter()
                .zip(&ws)
                .zip(&points)
                .map(|((v, w), p)| {
                    json!({
                        "v": v,
                        "w": w,
                        "mu_xy_hat": p.mu_xy_hat,
                        "mu_x_mu_y_hat": p.mu_x_mu_y_hat,
                        "sigma_hat": p.sigma_hat,
                        "lambda_hat": p.lambda_hat,
                    })
                })
                .collect();
            doc.write_json(out, json!({ "nv": a.nv, "nw": a.nw, "rows": rows }))
        }
    }
}
