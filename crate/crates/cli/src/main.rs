//! `esp`: command-line front end for empirical saddlepoint estimation.
//!
//! Exit codes: 0 on success, 2 for input errors (bad flags, unreadable or
//! malformed data), 3 for numerical failures. Output is written only after
//! the whole computation succeeded.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use esp_core::report::{estimate_json, mc_csv, profile_csv, region_csv, test_json};
use esp_core::{
    alr_test, builtin_crra, builtin_hall_horowitz, estimate_constrained, estimate_esp, estimate_mm_et, et_test,
    evaluate, invert_confidence_region, lm_test, profile, run_mc, wald_test, CrraColumns, Dataset, EspError, Execution,
    McConfig, MomentModel, RegionKind, RestrictionSpec,
};

#[derive(Parser)]
#[command(
    name = "esp",
    version,
    about = "Empirical saddlepoint estimation for moment-condition models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Point estimate with plug-in standard errors (JSON).
    Estimate(EstimateArgs),
    /// Wald, LM, ALR and ET statistics for component restrictions (JSON).
    Test(TestArgs),
    /// Confidence region by ALR inversion over a grid (CSV).
    Region(RegionArgs),
    /// Objective decomposition and normalized densities over a grid (CSV).
    Profile(ProfileArgs),
    /// Monte-Carlo comparison of ET and ESP on the Hall-Horowitz design (CSV).
    Mc(McArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelKind {
    HallHorowitz,
    Crra,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodKind {
    Et,
    Mm,
    Esp,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Alr,
    AlrEt,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, value_enum)]
    model: ModelKind,
    /// CSV file with a header line.
    #[arg(long)]
    data: PathBuf,
    /// CRRA column names as `c_ratio,r_m,r_f`.
    #[arg(long, value_delimiter = ',')]
    columns: Option<Vec<String>>,
    /// Start point as comma-separated values; repeatable.
    #[arg(long = "start", allow_hyphen_values = true)]
    starts: Vec<String>,
    /// Output file (standard output when omitted).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    common: ModelArgs,
    #[arg(long, value_enum, default_value = "esp")]
    method: MethodKind,
}

#[derive(Args)]
struct TestArgs {
    #[command(flatten)]
    common: ModelArgs,
    /// Restriction `index=value`; repeatable.
    #[arg(long = "null", required = true, allow_hyphen_values = true)]
    nulls: Vec<String>,
}

#[derive(Args)]
struct RegionArgs {
    #[command(flatten)]
    common: ModelArgs,
    #[arg(long, value_enum, default_value = "alr")]
    kind: KindArg,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Grid as `lo:hi:count`; defaults to 1024 points over the parameter box.
    #[arg(long, allow_hyphen_values = true)]
    grid: Option<String>,
}

#[derive(Args)]
struct ProfileArgs {
    #[command(flatten)]
    common: ModelArgs,
    /// Grid as `lo:hi:count`; defaults to 1024 points over the parameter box.
    #[arg(long, allow_hyphen_values = true)]
    grid: Option<String>,
}

#[derive(Args)]
struct McArgs {
    /// Sample sizes, comma-separated.
    #[arg(long = "T", value_delimiter = ',', default_value = "25,50,100,200")]
    sample_sizes: Vec<usize>,
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "noise-sd", default_value_t = 0.4)]
    noise_sd: f64,
    #[arg(long)]
    output: Option<PathBuf>,
}

/// Failure carrying its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<EspError> for Failure {
    fn from(e: EspError) -> Self {
        Failure {
            code: if e.is_input_error() { 2 } else { 3 },
            message: e.to_string(),
        }
    }
}

fn input_error(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

fn parse_vector(s: &str) -> Result<Vec<f64>, Failure> {
    s.split(',')
        .map(|p| {
            let v: f64 = p
                .trim()
                .parse()
                .map_err(|_| input_error(format!("cannot parse {p:?} as a number")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(input_error(format!("non-finite value {p:?}")))
            }
        })
        .collect()
}

/// Parses `lo:hi:count` with `lo < hi` and `count ≥ 2`.
fn parse_grid(s: &str) -> Result<Vec<f64>, Failure> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || input_error(format!("grid {s:?} must be lo:hi:count with lo < hi and count >= 2"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let n: usize = parts[2].trim().parse().map_err(|_| bad())?;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) || n < 2 {
        return Err(bad());
    }
    Ok(linspace(lo, hi, n))
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            if i == n - 1 {
                hi
            } else {
                lo + (hi - lo) * i as f64 / (n - 1) as f64
            }
        })
        .collect()
}

fn parse_null(s: &str) -> Result<(usize, f64), Failure> {
    let bad = || input_error(format!("restriction {s:?} must be index=value"));
    let (i, v) = s.split_once('=').ok_or_else(bad)?;
    let i: usize = i.trim().parse().map_err(|_| bad())?;
    let v: f64 = v.trim().parse().map_err(|_| bad())?;
    if !v.is_finite() {
        return Err(bad());
    }
    Ok((i, v))
}

struct Loaded {
    model: Box<dyn MomentModel>,
    data: Dataset,
    starts: Vec<Vec<f64>>,
}

fn load(args: &ModelArgs) -> Result<Loaded, Failure> {
    let data = Dataset::from_csv_path(&args.data).map_err(|e| input_error(format!("{}: {e}", args.data.display())))?;
    let model: Box<dyn MomentModel> = match args.model {
        ModelKind::HallHorowitz => {
            let m = builtin_hall_horowitz();
            m.validate_data(&data).map_err(|e| input_error(e.to_string()))?;
            Box::new(m)
        }
        ModelKind::Crra => {
            let columns = match &args.columns {
                Some(c) if c.len() == 3 => CrraColumns {
                    c_ratio: c[0].clone(),
                    r_m: c[1].clone(),
                    r_f: c[2].clone(),
                },
                Some(c) => return Err(input_error(format!("--columns needs 3 names, got {}", c.len()))),
                None => CrraColumns::default(),
            };
            Box::new(
                builtin_crra(columns)
                    .bind(&data)
                    .map_err(|e| input_error(e.to_string()))?,
            )
        }
    };
    let mut starts = Vec::new();
    for s in &args.starts {
        let v = parse_vector(s)?;
        if v.len() != model.param_dim() {
            return Err(input_error(format!(
                "start {s:?} has {} values, model has {} parameters",
                v.len(),
                model.param_dim()
            )));
        }
        starts.push(v);
    }
    if starts.is_empty() {
        let b = model.param_box();
        starts.push(b.lower().iter().zip(b.upper()).map(|(l, u)| 0.5 * (l + u)).collect());
    }
    Ok(Loaded { model, data, starts })
}

fn grid_for(model: &dyn MomentModel, spec: &Option<String>) -> Result<Vec<f64>, Failure> {
    if model.param_dim() != 1 {
        return Err(input_error("grid commands need a one-parameter model"));
    }
    match spec {
        Some(s) => parse_grid(s),
        None => {
            let b = model.param_box();
            Ok(linspace(b.lower()[0], b.upper()[0], 1024))
        }
    }
}

fn emit(output: &Option<PathBuf>, text: &str) -> Result<(), Failure> {
    match output {
        Some(path) => std::fs::write(path, text).map_err(|e| input_error(format!("{}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_estimate(args: &EstimateArgs) -> Result<(), Failure> {
    let l = load(&args.common)?;
    let result = match args.method {
        MethodKind::Et | MethodKind::Mm => estimate_mm_et(l.model.as_ref(), &l.data, &l.starts)?,
        MethodKind::Esp => estimate_esp(l.model.as_ref(), &l.data, &l.starts)?,
    };
    emit(&args.common.output, &estimate_json(&result, &l.model.param_names()))
}

fn cmd_test(args: &TestArgs) -> Result<(), Failure> {
    let l = load(&args.common)?;
    let model = l.model.as_ref();
    let fixed = args
        .nulls
        .iter()
        .map(|s| parse_null(s))
        .collect::<Result<Vec<_>, _>>()?;
    let restriction = RestrictionSpec::FixComponents(fixed);
    restriction.validate(model.param_dim())?;

    let unc = estimate_esp(model, &l.data, &l.starts)?;
    let mut starts = vec![unc.theta_hat.clone()];
    starts.extend(l.starts.iter().cloned());
    let con = estimate_constrained(model, &l.data, &restriction, &starts)?;
    let e_unc = evaluate(model, &l.data, &unc.theta_hat)?;
    let e_con = evaluate(model, &l.data, &con.theta_hat)?;
    let results = vec![
        wald_test(model, &l.data, &unc, &restriction)?,
        lm_test(model, &l.data, &con, &restriction)?,
        alr_test(&e_unc, &e_con, restriction.dof())?,
        et_test(model, &l.data, &con, &restriction)?,
    ];
    emit(&args.common.output, &test_json(&results))
}

fn cmd_region(args: &RegionArgs) -> Result<(), Failure> {
    if !(args.level > 0.0 && args.level < 1.0) {
        return Err(input_error(format!("level {} must lie in (0, 1)", args.level)));
    }
    let l = load(&args.common)?;
    let grid = grid_for(l.model.as_ref(), &args.grid)?;
    let kind = match args.kind {
        KindArg::Alr => RegionKind::Alr,
        KindArg::AlrEt => RegionKind::AlrEt,
    };
    let region = invert_confidence_region(
        l.model.as_ref(),
        &l.data,
        kind,
        args.level,
        &grid,
        &l.starts,
        Execution::default(),
    )?;
    emit(&args.common.output, &region_csv(&region))
}

fn cmd_profile(args: &ProfileArgs) -> Result<(), Failure> {
    let l = load(&args.common)?;
    let grid: Vec<Vec<f64>> = grid_for(l.model.as_ref(), &args.grid)?
        .into_iter()
        .map(|g| vec![g])
        .collect();
    let rows = profile(l.model.as_ref(), &l.data, &grid, Execution::default())?;
    emit(&args.common.output, &profile_csv(&rows))
}

fn cmd_mc(args: &McArgs) -> Result<(), Failure> {
    if args.sample_sizes.is_empty() {
        return Err(input_error("--T needs at least one sample size"));
    }
    let mut summaries = Vec::new();
    for &t in &args.sample_sizes {
        let config = McConfig {
            sample_size: t,
            replications: args.reps,
            seed: args.seed,
            noise_sd: args.noise_sd,
            ..McConfig::default()
        };
        summaries.push(run_mc(&config)?);
    }
    emit(&args.output, &mc_csv(&summaries))
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("ESP_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| input_error(format!("ESP_THREADS={v:?} is not a positive integer")))?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| input_error(e.to_string()))?;
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Failure> {
    configure_threads()?;
    match &cli.command {
        Command::Estimate(a) => cmd_estimate(a),
        Command::Test(a) => cmd_test(a),
        Command::Region(a) => cmd_region(a),
        Command::Profile(a) => cmd_profile(a),
        Command::Mc(a) => cmd_mc(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("esp: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
