//! `deconv` command-line front end.
//!
//! Every subcommand prints one JSON document on stdout. `--pretty` adds a
//! readable table on stderr. Exit codes: 0 success, 2 invalid input,
//! 3 numerical failure.
//!
//! Option precedence: command-line flags, then the `--config` file, then
//! built-in defaults. For `experiment` the config file is the experiment
//! description; for every other subcommand it is a flat TOML table whose keys
//! are long flag names (`f0 = "gaussian"`, `s_lo = 0.5`).

use std::path::{Path, PathBuf};
use std::io::Write;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use deconv::adaptive::{
    build_grid, calibrate_cstar, calibrate_cstar_stable, run_test_poly, run_test_stable, run_test_stable_known,
    GridBounds, GridRegime,
};
use deconv::fourier::QuadratureSpec;
use deconv::harness::{parse_density, parse_noise, run_experiment_to, ExperimentConfig};
use deconv::model::{sample_convolution, NoiseSpec, Sample};
use deconv::rng::replicate_rng;
use deconv::semiparam::{
    density_at_with_index, estimate_density_at, estimate_quadratic_functional, quadratic_functional_with_index,
};
use deconv::stable_index::{estimate_s, StableIndexParams, StepRecipe};
use deconv::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "deconv", version, about = "Adaptive tests and estimators in deconvolution models")]
#[command(args_override_self = true)]
struct Cli {
    /// TOML file with defaults (or the experiment description for `experiment`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed of every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory for files.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Also print a table on stderr.
    #[arg(long, global = true)]
    pretty: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a sample from f * g.
    Simulate(SimulateArgs),
    /// Estimate the index of stable noise.
    EstimateS(EstimateSArgs),
    /// Plug-in density estimate at a point under stable noise.
    EstimateDensity(EstimateDensityArgs),
    /// Plug-in estimate of the integral of f squared under stable noise.
    Quadfunc(QuadfuncArgs),
    /// Adaptive goodness-of-fit test under polynomially smooth noise.
    TestPoly(TestPolyArgs),
    /// Goodness-of-fit test under stable noise.
    TestStable(TestStableArgs),
    /// Calibrate the test constant by simulation under the null.
    Calibrate(CalibrateArgs),
    /// Run a Monte Carlo experiment from --config; writes results.csv and summary.json.
    Experiment(ExperimentArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Density of X, e.g. `laplace:scale=1`.
    #[arg(long)]
    f: String,
    /// Noise, e.g. `poly:sigma=2,gamma=1` or `stable:s=1.5`.
    #[arg(long)]
    noise: String,
    #[arg(long)]
    n: usize,
    /// Stream index within the seed.
    #[arg(long, default_value_t = 0)]
    replicate: u64,
}

#[derive(Args, Debug)]
struct SampleArg {
    /// Sample file, one observation per line.
    #[arg(long)]
    sample: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum RecipeArg {
    Prop1,
    Cor1,
    Cor2,
    Cor3,
}

impl From<RecipeArg> for StepRecipe {
    fn from(r: RecipeArg) -> Self {
        match r {
            RecipeArg::Prop1 => StepRecipe::Prop1,
            RecipeArg::Cor1 => StepRecipe::Cor1,
            RecipeArg::Cor2 => StepRecipe::Cor2,
            RecipeArg::Cor3 => StepRecipe::Cor3,
        }
    }
}

#[derive(Args, Debug)]
struct IndexArgs {
    #[arg(long)]
    s_lo: Option<f64>,
    #[arg(long)]
    s_hi: Option<f64>,
    /// Decay exponent of the lower envelope A|u|^-beta' of |CF of f|.
    #[arg(long)]
    beta_prime: Option<f64>,
    /// Constant A of that envelope.
    #[arg(long)]
    big_a: Option<f64>,
    /// Exponent a > 1 of the frequency u_n (default depends on the recipe).
    #[arg(long)]
    a: Option<f64>,
    /// Upper smoothness bound of f.
    #[arg(long)]
    beta_bar: Option<f64>,
}

impl IndexArgs {
    fn params(&self, recipe: StepRecipe) -> Result<StableIndexParams> {
        let req = |v: Option<f64>, name: &str| v.ok_or_else(|| Error::Config(format!("--{name} is required")));
        let (lo, hi) = (req(self.s_lo, "s-lo")?, req(self.s_hi, "s-hi")?);
        let (bp, big_a) = (req(self.beta_prime, "beta-prime")?, req(self.big_a, "big-a")?);
        match (self.a, recipe, self.beta_bar) {
            (Some(a), _, bb) => StableIndexParams::new(lo, hi, bp, big_a, a, recipe, bb),
            (None, StepRecipe::Prop1, None) => StableIndexParams::standalone(lo, hi, bp, big_a),
            (None, _, Some(bb)) => StableIndexParams::for_recipe(recipe, lo, hi, bp, big_a, bb),
            (None, _, None) => Err(Error::Config(format!("--beta-bar is required for the {recipe:?} step"))),
        }
    }

    fn beta_bar(&self) -> Result<f64> {
        self.beta_bar.ok_or_else(|| Error::Config("--beta-bar is required".into()))
    }
}

#[derive(Args, Debug)]
struct QuadArgs {
    /// Fourier integration range for the tail term.
    #[arg(long)]
    u_max: Option<f64>,
    /// Trapezoid intervals (even, at least 256).
    #[arg(long)]
    m_points: Option<usize>,
}

impl QuadArgs {
    fn resolve(&self) -> Result<QuadratureSpec> {
        let d = QuadratureSpec::default();
        QuadratureSpec::new(self.u_max.unwrap_or(d.u_max), self.m_points.unwrap_or(d.m_points))
    }
}

#[derive(Args, Debug)]
struct EstimateSArgs {
    #[command(flatten)]
    sample: SampleArg,
    #[command(flatten)]
    index: IndexArgs,
    #[arg(long, value_enum, default_value = "prop1")]
    recipe: RecipeArg,
}

#[derive(Args, Debug)]
struct EstimateDensityArgs {
    #[command(flatten)]
    sample: SampleArg,
    #[arg(long, allow_hyphen_values = true)]
    x: f64,
    /// Use this noise index instead of estimating it.
    #[arg(long)]
    s: Option<f64>,
    #[command(flatten)]
    index: IndexArgs,
    #[command(flatten)]
    quad: QuadArgs,
}

#[derive(Args, Debug)]
struct QuadfuncArgs {
    #[command(flatten)]
    sample: SampleArg,
    #[arg(long)]
    s: Option<f64>,
    #[command(flatten)]
    index: IndexArgs,
    #[command(flatten)]
    quad: QuadArgs,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum RegimeArg {
    Thm1,
    Thm2,
}

#[derive(Args, Debug)]
struct GridArgs {
    /// Sobolev grid (thm1) or supersmooth grid (thm2).
    #[arg(long, value_enum, default_value = "thm1")]
    regime: RegimeArg,
    #[arg(long, default_value_t = 0.0)]
    alpha_lo: f64,
    #[arg(long, default_value_t = 0.0)]
    alpha_hi: f64,
    #[arg(long, default_value_t = 0.0)]
    r_lo: f64,
    #[arg(long, default_value_t = 0.0)]
    r_hi: f64,
    #[arg(long, default_value_t = 0.5)]
    beta_lo: f64,
    #[arg(long, default_value_t = 2.0)]
    beta_hi: f64,
    /// Supersmooth bandwidth constant.
    #[arg(long)]
    c: Option<f64>,
}

impl GridArgs {
    fn build(&self, n: usize, sigma: f64) -> Result<deconv::adaptive::AdaptiveGrid> {
        let regime = match self.regime {
            RegimeArg::Thm1 => GridRegime::Thm1,
            RegimeArg::Thm2 => GridRegime::Thm2,
        };
        let bounds = GridBounds {
            alpha_lo: self.alpha_lo,
            alpha_hi: self.alpha_hi,
            r_lo: self.r_lo,
            r_hi: self.r_hi,
            beta_lo: self.beta_lo,
            beta_hi: self.beta_hi,
        };
        build_grid(regime, n, &bounds, sigma, self.c)
    }
}

#[derive(Args, Debug)]
struct TestPolyArgs {
    #[command(flatten)]
    sample: SampleArg,
    /// Null density, e.g. `gaussian:mean=0,sd=1`.
    #[arg(long)]
    f0: String,
    #[arg(long)]
    noise: String,
    /// Test constant, usually from `calibrate`.
    #[arg(long)]
    c_star: f64,
    #[command(flatten)]
    grid: GridArgs,
    #[command(flatten)]
    quad: QuadArgs,
}

#[derive(Args, Debug)]
struct TestStableArgs {
    #[command(flatten)]
    sample: SampleArg,
    #[arg(long)]
    f0: String,
    #[arg(long)]
    c_star: f64,
    /// Use this noise index instead of estimating it.
    #[arg(long)]
    s: Option<f64>,
    #[command(flatten)]
    index: IndexArgs,
    #[command(flatten)]
    quad: QuadArgs,
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    #[arg(long)]
    f0: String,
    /// Polynomial noise calibrates the adaptive test, stable noise the stable-noise test.
    #[arg(long)]
    noise: String,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0.1)]
    eps: f64,
    #[arg(long, default_value_t = 2000)]
    reps: usize,
    #[command(flatten)]
    grid: GridArgs,
    #[command(flatten)]
    index: IndexArgs,
    #[command(flatten)]
    quad: QuadArgs,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    /// Override the replication count of the config file.
    #[arg(long)]
    reps: Option<usize>,
}

fn load_sample(a: &SampleArg) -> Result<Sample> {
    let s = Sample::read(&a.sample)?;
    if s.is_empty() {
        return Err(Error::Config(format!("{}: no observations", a.sample.display())));
    }
    Ok(s)
}

fn polynomial_sigma(g: &NoiseSpec) -> Result<f64> {
    g.sigma()
        .ok_or_else(|| Error::Config("this subcommand needs polynomially smooth noise (poly:sigma=..)".into()))
}

fn simulate(cli: &Cli, a: &SimulateArgs) -> Result<Value> {
    let f = parse_density(&a.f)?;
    let g = parse_noise(&a.noise)?;
    let seed = cli.seed.unwrap_or(0);
    let mut s = sample_convolution(&f, &g, a.n, &mut replicate_rng(seed, a.replicate))?;
    s.meta.seed = Some(seed);
    let n = s.len() as f64;
    let mean = s.y.iter().sum::<f64>() / n;
    let sd = (s.y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    let mut out = json!({
        "n": a.n,
        "seed": seed,
        "replicate": a.replicate,
        "f": s.meta.f,
        "noise": g,
        "mean": mean,
        "sd": sd,
    });
    match &cli.out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let path = dir.join("sample.txt");
            s.write(&path)?;
            out["path"] = json!(path);
        }
        None => out["y"] = json!(s.y),
    }
    Ok(out)
}

fn estimate_s_cmd(a: &EstimateSArgs) -> Result<Value> {
    let s = load_sample(&a.sample)?;
    let sip = a.index.params(a.recipe.into())?;
    Ok(json!(estimate_s(&s.y, &sip)?))
}

fn estimate_density_cmd(a: &EstimateDensityArgs) -> Result<Value> {
    let s = load_sample(&a.sample)?;
    let quad = a.quad.resolve()?;
    let est = match a.s {
        Some(idx) => density_at_with_index(&s.y, a.x, idx, a.index.beta_bar()?, &quad)?,
        None => estimate_density_at(&s.y, a.x, &a.index.params(StepRecipe::Cor1)?, &quad)?,
    };
    Ok(json!(est))
}

fn quadfunc_cmd(a: &QuadfuncArgs) -> Result<Value> {
    let s = load_sample(&a.sample)?;
    let quad = a.quad.resolve()?;
    let est = match a.s {
        Some(idx) => quadratic_functional_with_index(&s.y, idx, a.index.beta_bar()?, &quad)?,
        None => estimate_quadratic_functional(&s.y, &a.index.params(StepRecipe::Cor2)?, &quad)?,
    };
    Ok(json!(est))
}

fn test_poly_cmd(a: &TestPolyArgs) -> Result<Value> {
    let s = load_sample(&a.sample)?;
    let f0 = parse_density(&a.f0)?;
    let g = parse_noise(&a.noise)?;
    let grid = a.grid.build(s.len(), polynomial_sigma(&g)?)?;
    let outcome = run_test_poly(&s.y, &grid, a.c_star, &f0, &g, &a.quad.resolve()?)?;
    Ok(json!({ "outcome": outcome, "grid": grid }))
}

fn test_stable_cmd(a: &TestStableArgs) -> Result<Value> {
    let s = load_sample(&a.sample)?;
    let f0 = parse_density(&a.f0)?;
    let quad = a.quad.resolve()?;
    match a.s {
        Some(idx) => {
            let outcome = run_test_stable_known(&s.y, &f0, idx, a.index.beta_bar()?, a.c_star, &quad)?;
            Ok(json!({ "outcome": outcome, "s_used": idx, "estimate": null }))
        }
        None => Ok(json!(run_test_stable(&s.y, &f0, &a.index.params(StepRecipe::Cor3)?, a.c_star, &quad)?)),
    }
}

fn calibrate_cmd(cli: &Cli, a: &CalibrateArgs) -> Result<Value> {
    let f0 = parse_density(&a.f0)?;
    let g = parse_noise(&a.noise)?;
    let quad = a.quad.resolve()?;
    let seed = cli.seed.unwrap_or(0);
    let (cal, grid) = match g {
        NoiseSpec::Stable { s } => {
            let sip = a.index.params(StepRecipe::Cor3)?;
            (calibrate_cstar_stable(&f0, s, a.n, &sip, a.eps, a.reps, seed, &quad)?, None)
        }
        _ => {
            let grid = a.grid.build(a.n, polynomial_sigma(&g)?)?;
            (calibrate_cstar(&f0, &g, &grid, a.eps, a.reps, seed, &quad)?, Some(grid))
        }
    };
    if let Some(dir) = &cli.out {
        std::fs::create_dir_all(dir)?;
        let text: String = cal.max_ratios.iter().map(|r| format!("{r}\n")).collect();
        std::fs::write(dir.join("null_ratios.txt"), text)?;
    }
    Ok(json!({
        "c_star": cal.c_star,
        "eps": cal.eps,
        "reps": cal.reps,
        "exceed_rate": cal.exceed_rate,
        "quantile": cal.quantile,
        "seed": seed,
        "n": a.n,
        "grid": grid,
    }))
}

fn experiment_cmd(cli: &Cli, a: &ExperimentArgs) -> Result<Value> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("experiment needs --config".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(reps) = a.reps {
        cfg.reps = reps;
    }
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    let summary = run_experiment_to(&cfg, &out)?;
    let mut v = json!(summary);
    v["out"] = json!(out);
    Ok(v)
}

fn toml_to_flags(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path)?;
    let table: toml::Table = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut args = Vec::new();
    for (k, v) in table {
        let flag = format!("--{}", k.replace('_', "-"));
        match v {
            toml::Value::Boolean(true) => args.push(flag),
            toml::Value::Boolean(false) => {}
            toml::Value::String(s) => args.extend([flag, s]),
            toml::Value::Integer(i) => args.extend([flag, i.to_string()]),
            toml::Value::Float(x) => args.extend([flag, x.to_string()]),
            other => {
                return Err(Error::Config(format!("{}: `{k}` must be a scalar, got {}", path.display(), other.type_str())))
            }
        }
    }
    Ok(args)
}

const SUBCOMMANDS: [&str; 8] = [
    "simulate",
    "estimate-s",
    "estimate-density",
    "quadfunc",
    "test-poly",
    "test-stable",
    "calibrate",
    "experiment",
];

fn config_path(argv: &[String]) -> Option<PathBuf> {
    argv.iter().enumerate().find_map(|(i, a)| match a.strip_prefix("--config") {
        Some("") => argv.get(i + 1).map(PathBuf::from),
        Some(rest) => rest.strip_prefix('=').map(PathBuf::from),
        None => None,
    })
}

/// Parses the command line, splicing in defaults from a flag-style config
/// file right after the subcommand name so that explicit flags win.
fn parse_cli() -> std::result::Result<Cli, Error> {
    let argv: Vec<String> = std::env::args().collect();
    let sub = argv.iter().skip(1).position(|a| SUBCOMMANDS.contains(&a.as_str())).map(|p| p + 1);
    let merged = match (config_path(&argv), sub) {
        (Some(path), Some(pos)) if argv[pos] != "experiment" => {
            let mut merged = argv[..=pos].to_vec();
            merged.extend(toml_to_flags(&path)?);
            merged.extend_from_slice(&argv[pos + 1..]);
            merged
        }
        _ => argv,
    };
    let m = Cli::command().try_get_matches_from(&merged).unwrap_or_else(|e| e.exit());
    Ok(Cli::from_arg_matches(&m).unwrap_or_else(|e| e.exit()))
}

fn pretty_table(v: &Value) -> String {
    let mut out = String::new();
    let mut emit = |k: &str, val: &Value| {
        let s = match val {
            Value::Array(a) if a.len() > 8 => format!("[{} values]", a.len()),
            Value::Object(_) | Value::Array(_) => serde_json::to_string(val).unwrap_or_default(),
            other => other.to_string(),
        };
        out.push_str(&format!("{k:<16} {s}\n"));
    };
    match v.get("results").and_then(Value::as_array) {
        Some(rows) => {
            emit("scenario", &v["scenario"]);
            out.push_str(&format!("{:>10} {:>16} {:>12} {:>24} {:>9}\n", "n", "metric", "value", "ci99", "failures"));
            for r in rows {
                let ci = match (&r["ci99"]["lo"], &r["ci99"]["hi"]) {
                    (Value::Number(lo), Value::Number(hi)) => format!(
                        "[{:.4}, {:.4}]",
                        lo.as_f64().unwrap_or(f64::NAN),
                        hi.as_f64().unwrap_or(f64::NAN)
                    ),
                    _ => "-".into(),
                };
                out.push_str(&format!(
                    "{:>10} {:>16} {:>12.6} {:>24} {:>9}\n",
                    r["n"],
                    r["metric"].as_str().unwrap_or(""),
                    r["value"].as_f64().unwrap_or(f64::NAN),
                    ci,
                    r["failures"]
                ));
            }
        }
        None => match v.as_object() {
            Some(map) => map.iter().for_each(|(k, val)| emit(k, val)),
            None => emit("value", v),
        },
    }
    out
}

fn run(cli: &Cli) -> Result<Value> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    match &cli.command {
        Command::Simulate(a) => simulate(cli, a),
        Command::EstimateS(a) => estimate_s_cmd(a),
        Command::EstimateDensity(a) => estimate_density_cmd(a),
        Command::Quadfunc(a) => quadfunc_cmd(a),
        Command::TestPoly(a) => test_poly_cmd(a),
        Command::TestStable(a) => test_stable_cmd(a),
        Command::Calibrate(a) => calibrate_cmd(cli, a),
        Command::Experiment(a) => experiment_cmd(cli, a),
    }
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    let numerical = !(e.is_validation() || matches!(e, Error::Io(_)));
    ExitCode::from(if numerical { 3 } else { 2 })
}

fn main() -> ExitCode {
    let cli = match parse_cli() {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    match run(&cli) {
        Ok(v) => {
            let text = serde_json::to_string_pretty(&v).expect("json");
            // A closed stdout (e.g. `| head`) is not an error worth a panic.
            let _ = writeln!(std::io::stdout().lock(), "{text}");
            if cli.pretty {
                eprint!("{}", pretty_table(&v));
            }
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e),
    }
}
