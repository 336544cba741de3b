use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use spde_cpt::coords::{approx_coordinate, partial_qv, CoordinatePath};
use spde_cpt::cpt::{kolmogorov_cdf, kolmogorov_quantile, run_test};
use spde_cpt::dataset::FieldDataset;
use spde_cpt::estimation::{self, methodology_a, methodology_b, two_d};
use spde_cpt::harness::{export_results, run_experiment, ExperimentConfig};
use spde_cpt::model::{GammaRule, NoiseSpec, OperatorParams, SpaceTimeGrid, ThinningPlan, VolatilityProfile};
use spde_cpt::simulate::{assemble_field, simulate_coefficients, InitialState, ModeSet, SimulationConfig};

#[derive(Parser)]
#[command(name = "spde-cpt", version, about = "Simulate, estimate and test volatility change points in SPDE data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a field on a space-time grid and write it as a dataset.
    Simulate(SimulateArgs),
    /// Fit the operator and volatility parameters of a dataset.
    Estimate(EstimateArgs),
    /// Run the change-point test on a dataset or a coordinate CSV.
    Test(TestArgs),
    /// Run a Monte Carlo experiment from a JSON config.
    Mc(McArgs),
    /// Print Kolmogorov CDF and quantile tables as CSV.
    TableKolmogorov(TableArgs),
}

#[derive(Parser)]
struct SimulateArgs {
    /// Simulation config as JSON; defaults to the one-dimensional reference model.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides as key=value with dotted keys.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Spatial grid size per axis.
    #[arg(long, default_value_t = 500)]
    m_space: usize,
    #[arg(long)]
    out: PathBuf,
    /// Also write the field as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    A,
    B,
    #[value(name = "2d")]
    TwoD,
}

#[derive(Clone, Copy, ValueEnum)]
enum Gamma {
    Spectral,
    Polynomial,
}

#[derive(Parser)]
struct PlanArgs {
    #[arg(long, default_value_t = 0.05)]
    b: f64,
    #[arg(long, default_value_t = 50)]
    m: usize,
    /// Thinned time points; defaults to every step of the dataset.
    #[arg(long)]
    n: Option<usize>,
}

impl PlanArgs {
    fn plan(&self, ds: &FieldDataset) -> Result<ThinningPlan> {
        Ok(ThinningPlan::new(self.b, self.m, self.n.unwrap_or(ds.grid().n_time))?)
    }
}

#[derive(Parser)]
struct EstimateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "b")]
    method: Method,
    #[command(flatten)]
    plan: PlanArgs,
    /// Noise rule for the two-dimensional fit.
    #[arg(long, value_enum, default_value = "polynomial")]
    gamma: Gamma,
    /// Polynomial shift μ₀.
    #[arg(long, default_value_t = 0.0)]
    mu0: f64,
}

#[derive(Parser)]
struct TestArgs {
    /// Dataset to rebuild the coordinate from.
    #[arg(long, conflicts_with = "coords")]
    data: Option<PathBuf>,
    /// Coordinate path CSV as written by this tool.
    #[arg(long)]
    coords: Option<PathBuf>,
    /// Tested mode, comma separated per axis.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    ell: Vec<usize>,
    /// Known κ per axis; estimated with Methodology B when omitted.
    #[arg(long, value_delimiter = ',')]
    kappa: Vec<f64>,
    #[command(flatten)]
    plan: PlanArgs,
    /// Test grid size for the rebuilt coordinate.
    #[arg(long, default_value_t = 400)]
    n_test: usize,
    /// β² to normalize by; the realized QV of the coordinate when omitted.
    #[arg(long)]
    beta_sq: Option<f64>,
    /// Use V̂ from Methodology B as β².
    #[arg(long, conflicts_with = "beta_sq")]
    regression: bool,
    #[arg(long, default_value_t = 0.05)]
    level: f64,
    /// Write the rebuilt coordinate here.
    #[arg(long)]
    write_coords: Option<PathBuf>,
}

#[derive(Parser)]
struct McArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Parser)]
struct TableArgs {
    #[arg(long, default_value_t = 0.2)]
    from: f64,
    #[arg(long, default_value_t = 3.0)]
    to: f64,
    #[arg(long, default_value_t = 0.05)]
    step: f64,
    /// Print quantiles at these levels instead of the CDF.
    #[arg(long, value_delimiter = ',')]
    quantiles: Vec<f64>,
}

fn parse_overrides(raw: &[String]) -> Result<Vec<(String, String)>> {
    raw.iter()
        .map(|s| {
            let (k, v) = s.split_once('=').with_context(|| format!("override {s:?} is not KEY=VALUE"))?;
            Ok((k.trim().to_string(), v.trim().to_string()))
        })
        .collect()
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn reference_simulation() -> serde_json::Value {
    let cfg = SimulationConfig {
        params: OperatorParams::new_1d(0.0, 0.2, 0.2).expect("valid"),
        noise: NoiseSpec::cylindrical(),
        profile: VolatilityProfile::constant(1.0).expect("valid"),
        n_time: 2000,
        modes: ModeSet::new(vec![2000]).expect("valid"),
        seed: 0,
        replication: 0,
        initial: InitialState::Zero,
    };
    serde_json::to_value(cfg).expect("serializes")
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let mut value = match &args.config {
        Some(path) => serde_json::from_str(&fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?)?,
        None => reference_simulation(),
    };
    for (key, raw) in parse_overrides(&args.overrides)? {
        let mut slot = &mut value;
        for part in key.split('.') {
            slot = slot
                .as_object_mut()
                .with_context(|| format!("override {key}: {part} is not inside an object"))?
                .entry(part.to_string())
                .or_insert(serde_json::Value::Null);
        }
        *slot = serde_json::from_str(&raw).unwrap_or(serde_json::Value::String(raw));
    }
    let mut cfg: SimulationConfig = serde_json::from_value(value)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let d = cfg.params.dim();
    let coeffs = simulate_coefficients(&cfg)?;
    let grid = SpaceTimeGrid::new(cfg.n_time, vec![args.m_space; d])?;
    let ds = assemble_field(&coeffs, &grid)?;
    ds.save(&args.out)?;
    if let Some(csv) = &args.csv {
        ds.export_csv(csv)?;
    }
    log::info!("wrote {} ({} time steps, {:?} grid)", args.out.display(), cfg.n_time, grid.m_space);
    Ok(())
}

fn gamma_rule(g: Gamma, mu0: f64) -> GammaRule {
    match g {
        Gamma::Spectral => GammaRule::Spectral,
        Gamma::Polynomial => GammaRule::Polynomial { mu0 },
    }
}

fn estimate(args: EstimateArgs) -> Result<()> {
    let ds = FieldDataset::load(&args.data)?;
    let plan = args.plan.plan(&ds)?;
    match args.method {
        Method::A => print_json(&estimation::fit_methodology_a(&ds, &plan, &methodology_a::default_box())?),
        Method::B => print_json(&estimation::fit_methodology_b(&ds, &plan, &methodology_b::default_box())?),
        Method::TwoD => {
            let coarse = two_d::coarse_plan(&plan)?;
            let alpha = estimation::estimate_alpha(&ds, &plan, &coarse)?;
            let stats = two_d::rectangle_stats(&ds, &plan, alpha)?;
            let est = two_d::fit_from_statistics(&stats, &two_d::default_box(stats.r), gamma_rule(args.gamma, args.mu0))?;
            print_json(&est)
        }
    }
}

fn test(args: TestArgs) -> Result<()> {
    let (path, v_hat) = match (&args.data, &args.coords) {
        (Some(data), None) => {
            let ds = FieldDataset::load(data)?;
            let plan = args.plan.plan(&ds)?;
            let need_fit = args.kappa.is_empty() || args.regression;
            let fit = if need_fit {
                Some(estimation::fit_methodology_b(&ds, &plan, &methodology_b::default_box())?)
            } else {
                None
            };
            let kappa = if args.kappa.is_empty() {
                vec![fit.as_ref().expect("fitted").kappa_hat]
            } else {
                args.kappa.clone()
            };
            let test_plan = ThinningPlan::new(args.plan.b, args.plan.m, args.n_test)?;
            let path = approx_coordinate(&ds, &args.ell, &kappa, &test_plan)?;
            (path, fit.map(|f| f.v_hat))
        }
        (None, Some(coords)) => {
            if args.regression {
                bail!("--regression needs a dataset");
            }
            let file = fs::File::open(coords).with_context(|| format!("opening {}", coords.display()))?;
            (CoordinatePath::read_csv(file, args.ell.clone())?, None)
        }
        _ => bail!("give exactly one of --data and --coords"),
    };
    if let Some(out) = &args.write_coords {
        path.write_csv(fs::File::create(out).with_context(|| format!("creating {}", out.display()))?)?;
    }
    let qv = partial_qv(&path)?;
    let beta_sq = match (args.beta_sq, v_hat) {
        (Some(b), _) => b,
        (None, Some(v)) if args.regression => v,
        _ => qv.total(),
    };
    print_json(&run_test(&qv, beta_sq, args.level)?)
}

fn mc(args: McArgs) -> Result<()> {
    let text = fs::read_to_string(&args.config).with_context(|| format!("reading {}", args.config.display()))?;
    let base = ExperimentConfig::from_json(&text)?;
    let mut overrides = parse_overrides(&args.overrides)?;
    overrides.push(("seed".into(), args.seed.to_string()));
    let cfg = base.with_overrides(&overrides)?;
    let result = run_experiment(&cfg)?;
    export_results(&result, &cfg, &args.out)?;
    let mut out = io::stdout().lock();
    writeln!(out, "label,n,replications,failures,power")?;
    for row in &result.table.rows {
        writeln!(out, "{},{},{},{},{:.4}", row.label, row.n, row.replications, row.failures, row.power)?;
    }
    log::info!("results in {} after {:.1} s", args.out.display(), result.wall_time_s);
    Ok(())
}

fn table(args: TableArgs) -> Result<()> {
    let mut out = io::stdout().lock();
    if !args.quantiles.is_empty() {
        writeln!(out, "p,quantile")?;
        for p in args.quantiles {
            writeln!(out, "{p},{:.10}", kolmogorov_quantile(p)?)?;
        }
        return Ok(());
    }
    if !(args.step > 0.0 && args.to >= args.from) {
        bail!("need step > 0 and to ≥ from");
    }
    writeln!(out, "x,cdf")?;
    let steps = ((args.to - args.from) / args.step + 1e-9).floor() as usize;
    for i in 0..=steps {
        let x = args.from + i as f64 * args.step;
        writeln!(out, "{x:.6},{:.15}", kolmogorov_cdf(x))?;
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Simulate(a) => simulate(a),
        Command::Estimate(a) => estimate(a),
        Command::Test(a) => test(a),
        Command::Mc(a) => mc(a),
        Command::TableKolmogorov(a) => table(a),
    }
}
