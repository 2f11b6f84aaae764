use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use funbias::biasred::{
    projector_weights_with_cap, BandwidthDesign, LinkColumn, DEFAULT_CONDITION_CAP,
};
use funbias::curves::{
    generate_sample, true_regression, Curve, CurveProcessParams, FunctionalSample, Grid, Metric,
};
use funbias::design::DesignSpec;
use funbias::estimator::{DistanceProfile, PhiTransform};
use funbias::kernels::{OneSidedKernel, SymmetricKernel};
use funbias::sim::{self, ExperimentConfig, TableOverrides, TableRow};
use funbias::theory::{self, SmallBallModel};

/// Bias-reduced kernel estimation for functional data.
#[derive(Debug, Parser)]
#[command(name = "funbias", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the bias-reducing combination weights of a bandwidth design.
    Weights(WeightsArgs),
    /// Print the kernel constants M0, M1, M3, M2 and the variance factor.
    Constants(ConstantsArgs),
    /// Evaluate the estimator at a query curve.
    Estimate(EstimateArgs),
    /// Run the Monte Carlo study from a config file or a preset table.
    Simulate(SimulateArgs),
    /// Write a sample from the synthetic curve process as CSV.
    Generate(GenerateArgs),
}

#[derive(Debug, Args)]
struct WeightsArgs {
    /// Bandwidth design, e.g. `centered:1.0,21,0.01`, `fixed:0.9,1.1,20`,
    /// `cluster:0.9,0.91,1.09,1.1,20,0.5` or `explicit:1,1.5,2`.
    #[arg(long)]
    design: DesignSpec,
    /// Response bandwidths for a joint (h, b) design; must have the same length.
    #[arg(long)]
    b_design: Option<DesignSpec>,
    /// Link of the response bandwidth column.
    #[arg(long, value_enum, default_value_t = BLink::Linear, requires = "b_design")]
    b_link: BLink,
    /// Reject designs whose normal matrix has a larger condition number.
    #[arg(long, default_value_t = DEFAULT_CONDITION_CAP)]
    condition_cap: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BLink {
    Linear,
    Square,
}

#[derive(Debug, Args)]
struct ConstantsArgs {
    /// One-sided kernel: quadratic, shifted_linear or triangular.
    #[arg(long)]
    kernel: OneSidedKernel,
    /// Exponent of the small-ball model tau(s) = s^gamma.
    #[arg(long, conflicts_with = "dirac")]
    gamma: Option<f64>,
    /// Use the point-mass model tau(s) = 1{s = 1} instead.
    #[arg(long)]
    dirac: bool,
    /// Bandwidth design for the variance factor; a single pilot bandwidth if omitted.
    #[arg(long)]
    design: Option<DesignSpec>,
    /// Pilot bandwidth used as the centre of `centered:B,sw` designs.
    #[arg(long)]
    h: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PhiKind {
    Reg,
    Cdf,
    Pdf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MetricArg {
    L2,
    L2Mean,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    /// Sample CSV: header of grid points then `Y`, one curve per row.
    #[arg(long)]
    sample: PathBuf,
    /// Query curve CSV with columns `t,value`.
    #[arg(long)]
    query: PathBuf,
    /// Pilot bandwidth.
    #[arg(long)]
    h: f64,
    #[arg(long, default_value = "quadratic")]
    kernel: OneSidedKernel,
    #[arg(long, value_enum, default_value_t = PhiKind::Reg)]
    phi: PhiKind,
    /// Response level for `cdf` and `pdf`.
    #[arg(long)]
    y: Option<f64>,
    /// Response bandwidth for `pdf`.
    #[arg(long)]
    b: Option<f64>,
    /// Response kernel for `pdf`.
    #[arg(long, default_value = "epanechnikov")]
    k0: SymmetricKernel,
    /// Combine pilots over this design instead of returning the pilot.
    #[arg(long)]
    design: Option<DesignSpec>,
    /// Curve distance: plain L2 or L2 normalised by the interval length.
    #[arg(long, value_enum, default_value_t = MetricArg::L2)]
    metric: MetricArg,
    /// Output file (default stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// JSON experiment config.
    #[arg(long, conflicts_with = "table", required_unless_present = "table")]
    config: Option<PathBuf>,
    /// Preset table 1-10.
    #[arg(long)]
    table: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replications: Option<usize>,
    /// Sample size override.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    grid_points: Option<usize>,
    /// Output CSV (default stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; does not affect the output.
    #[arg(long, env = "FUNBIAS_THREADS")]
    threads: Option<usize>,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 101)]
    grid_points: usize,
    /// Response noise standard deviation.
    #[arg(long, default_value_t = 2f64.sqrt())]
    noise_sd: f64,
    /// Output CSV (default stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the reference query curve (`t,value`) here.
    #[arg(long)]
    query_out: Option<PathBuf>,
}

fn output(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn open(path: &Path) -> anyhow::Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("cannot open {}", path.display()))?,
    ))
}

fn weights(args: WeightsArgs) -> anyhow::Result<()> {
    let h_design = args.design.build(None)?;
    let design = match &args.b_design {
        None => h_design,
        Some(spec) => {
            let b = spec.build(None)?;
            let b_col = match args.b_link {
                BLink::Linear => LinkColumn::B,
                BLink::Square => LinkColumn::B_SQUARED,
            };
            BandwidthDesign::new(
                h_design.bandwidths().to_vec(),
                Some(b.bandwidths().to_vec()),
                vec![LinkColumn::H, b_col],
                h_design.base(),
                Some(b.base()),
            )?
        }
    };
    let w = projector_weights_with_cap(&design, args.condition_cap)?;
    let residuals: Vec<_> = w
        .column_residuals()
        .into_iter()
        .map(|(c, r)| json!({"column": c.to_string(), "residual": r}))
        .collect();
    let out = json!({
        "design": args.design.to_string(),
        "h": design.bandwidths(),
        "b": design.response_bandwidths(),
        "g": w.g(),
        "sum_g": w.sum(),
        "residuals": residuals,
        "condition_number": w.condition_number(),
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn constants(args: ConstantsArgs) -> anyhow::Result<()> {
    let tau = match (args.gamma, args.dirac) {
        (_, true) => SmallBallModel::Dirac,
        (Some(g), false) => SmallBallModel::power(g)?,
        (None, false) => bail!("one of --gamma or --dirac is required"),
    };
    let design = match &args.design {
        Some(spec) => spec.build(args.h)?,
        None => BandwidthDesign::pilot(args.h.unwrap_or(1.0))?,
    };
    let w = funbias::biasred::projector_weights(&design)?;
    let c = theory::theory_constants(args.kernel, &tau, &w, None)?;
    let out = json!({
        "kernel": args.kernel.name(),
        "tau": tau,
        "h": design.bandwidths(),
        "m0": c.m0,
        "m1": c.m1,
        "m3": c.m3,
        "m2": c.m2,
        "gamma_var": c.gamma_var,
        "second_moment_ratio": c.second_moment_ratio,
        "gamma_var_direct": c.gamma_var_direct,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn estimate(args: EstimateArgs) -> anyhow::Result<()> {
    let sample = FunctionalSample::read_csv(open(&args.sample)?)?;
    let chi = Curve::read_csv(open(&args.query)?)?;
    let need_y = || args.y.context("--y is required for this --phi");
    let phi = match args.phi {
        PhiKind::Reg => PhiTransform::Identity,
        PhiKind::Cdf => PhiTransform::Indicator { y: need_y()? },
        PhiKind::Pdf => PhiTransform::density(
            need_y()?,
            args.b.context("--b is required for --phi pdf")?,
            args.k0,
        )?,
    };
    let metric = match args.metric {
        MetricArg::L2 => Metric::L2,
        MetricArg::L2Mean => Metric::L2Mean,
    };
    let profile = DistanceProfile::with_metric(&sample, &chi, metric)?;
    let (value, neighbors) = match &args.design {
        None => {
            let e = profile.estimate(args.h, args.kernel, &phi)?;
            (e.value, e.neighbor_count)
        }
        Some(spec) => {
            let design = spec.build(Some(args.h))?;
            let w = funbias::biasred::projector_weights(&design)?;
            let e = profile.estimate_reduced(&design, &w, args.kernel, &phi)?;
            let smallest = e.pilots.iter().map(|p| p.neighbor_count).min().unwrap_or(0);
            (e.value, smallest)
        }
    };
    let mut out = output(args.out.as_deref())?;
    writeln!(out, "value,neighbor_count")?;
    writeln!(out, "{value},{neighbors}")?;
    out.flush()?;
    Ok(())
}

fn simulate(args: SimulateArgs) -> anyhow::Result<()> {
    let overrides = TableOverrides {
        n: args.n,
        replications: args.replications,
        seed: args.seed,
        grid_points: args.grid_points,
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = args.threads {
        if t == 0 {
            bail!("--threads must be positive");
        }
        builder = builder.num_threads(t);
    }
    let pool = builder.build()?;

    let rows: Vec<TableRow> = match (&args.config, args.table) {
        (Some(path), _) => {
            let mut config: ExperimentConfig = serde_json::from_reader(open(path)?)
                .map_err(|e| funbias::Error::InvalidConfig(e.to_string()))?;
            if let Some(n) = overrides.n {
                config.n = n;
            }
            if let Some(r) = overrides.replications {
                config.replications = r;
            }
            if let Some(s) = overrides.seed {
                config.seed = s;
            }
            if let Some(g) = overrides.grid_points {
                config.grid_points = g;
            }
            let report = pool.install(|| sim::run_experiment(&config))?;
            vec![TableRow {
                table: None,
                row_label: "config".into(),
                report,
            }]
        }
        (None, Some(t)) => pool.install(|| sim::run_table(t, &overrides))?,
        (None, None) => bail!("one of --config or --table is required"),
    };
    let mut out = output(args.out.as_deref())?;
    sim::write_rows_csv(&rows, &mut out)?;
    out.flush()?;
    Ok(())
}

fn generate(args: GenerateArgs) -> anyhow::Result<()> {
    let grid = Grid::new(-1.0, 1.0, args.grid_points)?;
    let params = CurveProcessParams {
        noise_sd: args.noise_sd,
        seed: args.seed,
        ..CurveProcessParams::default()
    };
    let sample = generate_sample(&params, args.n, grid, true_regression)?;
    let mut out = output(args.out.as_deref())?;
    sample.write_csv(&mut out)?;
    out.flush()?;
    if let Some(p) = &args.query_out {
        let chi = funbias::curves::ProcessDraw::REFERENCE.curve(grid);
        chi.write_csv(output(Some(p))?)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Weights(a) => weights(a),
        Command::Constants(a) => constants(a),
        Command::Estimate(a) => estimate(a),
        Command::Simulate(a) => simulate(a),
        Command::Generate(a) => generate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            // numerical and domain failures exit 2, everything else (I/O, flags) 1
            let (kind, code) = match err.downcast_ref::<funbias::Error>() {
                Some(e) => (e.kind(), 2),
                None => ("usage", 1),
            };
            let line = json!({"error": kind, "message": format!("{err:#}")});
            eprintln!("{line}");
            ExitCode::from(code)
        }
    }
}
