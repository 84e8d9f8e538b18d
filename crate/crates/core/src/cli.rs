//! Batch front end: config file in, CSV tables out.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crate::analysis::{classify_regime, duality_check, fit_growth_rate, predicted_growth_law, Regime};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::Site;
use crate::moments::{evolve_higher_moments, integral_moment_oracle_all, solve_generating_function, Flavor};
use crate::montecarlo::{estimate_moments, run as run_replicas, InitialCondition, SimulationPlan};
use crate::ode::OdeOptions;
use crate::operators::{principal_eigenvalue, transition_probabilities, LatticeBox, TruncatedOperator};
use crate::output::{self, GrowthFitRow, MomentExtras};
use crate::vaccination::vaccination_sweep;

/// Environment variable that overrides the configured seed.
pub const SEED_ENV: &str = "BRWLAB_SEED";

#[derive(Debug, Parser)]
#[command(name = "brwlab", version, about = "Branching random walks with a single source: moments, simulation, criticality")]
pub struct Cli {
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Directory for the CSV outputs.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Principal eigenvalue against beta, critical intensity and regime.
    Analyze { config: PathBuf },
    /// Moment equations on the truncated lattice.
    Moments {
        config: PathBuf,
        /// Add cross-check columns from an independent route.
        #[arg(long, value_enum)]
        oracle: Option<Oracle>,
        /// Compare against the all-sites forward equation.
        #[arg(long)]
        duality: bool,
    },
    /// Monte Carlo estimates of the moments.
    Simulate { config: PathBuf },
    /// Principal eigenvalue over a grid of vaccination strengths.
    VaccinateSweep { config: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Oracle {
    /// Variation-of-constants integral by Simpson quadrature.
    Integral,
}

/// 1 for configuration problems, 2 for numerical failures, 3 when the
/// particle cap aborts a batch.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. }
        | Error::InvalidParameter(_)
        | Error::InadmissibleModel(_)
        | Error::BoxTooSmall { .. }
        | Error::Io(_) => 1,
        Error::ParticleCap { .. } | Error::CapAbort { .. } => 3,
        _ => 2,
    }
}

pub fn main_entry() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("brwlab: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    match cli.threads {
        Some(0) => Err(Error::invalid("--threads must be positive")),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
            pool.install(|| dispatch(cli))
        }
        None => dispatch(cli),
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Analyze { config } => analyze(&RunConfig::from_file(config)?, cli),
        Command::Moments { config, oracle, duality } => moments(&RunConfig::from_file(config)?, cli, *oracle, *duality),
        Command::Simulate { config } => simulate(&RunConfig::from_file(config)?, cli),
        Command::VaccinateSweep { config } => sweep(&RunConfig::from_file(config)?, cli),
    }
}

fn analyze(cfg: &RunConfig, cli: &Cli) -> Result<()> {
    let model = cfg.model()?;
    let kernel = model.kernel().clone();
    let betas = if cfg.analyze_betas.is_empty() {
        vec![model.beta()]
    } else {
        cfg.analyze_betas.clone()
    };
    let pairs: Vec<(usize, f64)> = cfg
        .schedule
        .iter()
        .flat_map(|&l| betas.iter().map(move |&b| (l, b)))
        .collect();
    let curve: Vec<(usize, f64, f64)> = pairs
        .par_iter()
        .map(|&(l, beta)| {
            let op = TruncatedOperator::walk(&kernel, LatticeBox::new(cfg.dimension, l)?)?.with_branching(beta);
            Ok((l, beta, principal_eigenvalue(&op)?))
        })
        .collect::<Result<_>>()?;
    output::write_eigenvalue_vs_beta(&mut output::create(&cli.out, "eigenvalue_vs_beta.csv")?, &curve)?;

    let report = classify_regime(&model, &cfg.schedule)?;
    let mut w = output::create(&cli.out, "critical_intensity.csv")?;
    w.write_record(["L", "beta_c", "green_beta_c"])?;
    for b in &report.critical.per_box {
        w.write_record([b.half_width.to_string(), output::fmt_f64(b.beta_c), output::fmt_f64(b.green_beta_c)])?;
    }
    w.write_record(["extrapolated".to_string(), output::fmt_f64(report.beta_c()), String::new()])?;
    w.flush()?;

    let mut w = output::create(&cli.out, "regime_summary.csv")?;
    w.write_record(["beta", "regime", "lambda0", "largest_L", "beta_c"])?;
    let largest = cfg.schedule.iter().max().copied().unwrap_or(cfg.half_width);
    w.write_record([
        output::fmt_f64(report.beta),
        report.class.to_string(),
        output::fmt_f64(report.lambda0),
        largest.to_string(),
        output::fmt_f64(report.beta_c()),
    ])?;
    w.flush()?;

    if !cfg.transition_times.is_empty() {
        let lattice = cfg.lattice()?;
        let op = TruncatedOperator::walk(&kernel, lattice)?;
        let entries = cfg
            .transition_times
            .iter()
            .map(|&t| {
                let p = transition_probabilities(&op, t)?;
                Ok((t, (0..p.nrows()).map(|i| p.row(i).iter().copied().collect()).collect()))
            })
            .collect::<Result<Vec<_>>>()?;
        let sites: Vec<Site> = lattice.sites().collect();
        output::write_transition_kernel(&mut output::create(&cli.out, "transition_kernel.csv")?, cfg.dimension, &sites, &entries)?;
    }

    println!(
        "regime: {} (beta = {}, lambda0 = {:.6e} on L = {largest}, beta_c ~ {:.6e})",
        report.class,
        report.beta,
        report.lambda0,
        report.beta_c()
    );
    Ok(())
}

fn moments(cfg: &RunConfig, cli: &Cli, oracle: Option<Oracle>, duality: bool) -> Result<()> {
    let model = cfg.model()?;
    let lattice = cfg.lattice()?;
    let grid = cfg.time_grid()?;
    let opts = OdeOptions::default();
    let flavor = cfg.flavor();
    let sites: Vec<Site> = match &cfg.moments_sites {
        Some(s) => s.clone(),
        None => lattice.sites().collect(),
    };
    if let Some(s) = sites.iter().find(|s| !lattice.contains(s)) {
        return Err(Error::invalid(format!("site {s} lies outside the box")));
    }

    let fields = evolve_higher_moments(&model, lattice, flavor, cfg.moments_order, &grid, &opts)?;
    let oracle_fields = match oracle {
        Some(Oracle::Integral) => Some(integral_moment_oracle_all(&model, lattice, flavor, cfg.moments_order, &grid, &opts)?),
        None => None,
    };
    let report = if duality { Some(duality_check(&model, lattice, &grid, &opts)?) } else { None };
    let forward = match (&report, flavor) {
        (Some(_), Flavor::Total) => Some(crate::moments::evolve_forward_first_moment(&model, lattice, &grid, &opts)?),
        _ => None,
    };
    let extras = MomentExtras {
        oracle: oracle_fields.as_deref(),
        forward: forward.as_ref(),
    };
    let (max_rel, _) = output::write_moments(&mut output::create(&cli.out, "moments.csv")?, &fields, &sites, &extras)?;
    println!("moments: flavor {flavor}, orders 1..={}, {} times", cfg.moments_order, grid.len());
    if oracle_fields.is_some() {
        println!("integral oracle: max relative discrepancy {max_rel:.3e}");
    }
    if let Some(r) = &report {
        output::write_duality_report(&mut output::create(&cli.out, "duality_report.csv")?, r, &sites)?;
        println!(
            "duality: max gap {:.3e} ({})",
            r.max_gap,
            if r.passes() { "pass" } else { "FAIL" }
        );
    }

    if !cfg.extinction_z.is_empty() {
        let gfs = cfg
            .extinction_z
            .iter()
            .map(|&z| solve_generating_function(&model, lattice, z, flavor, &grid, &opts))
            .collect::<Result<Vec<_>>>()?;
        output::write_extinction(&mut output::create(&cli.out, "extinction.csv")?, &gfs, &sites)?;
    }

    if let Some(window) = cfg.fit_window {
        let regime_report = classify_regime(&model, &cfg.schedule)?;
        let regime = Regime::from(regime_report.class);
        let origin = Site::origin(cfg.dimension);
        let laws: Vec<_> = (1..=cfg.moments_order)
            .map(|n| predicted_growth_law(regime, cfg.dimension, n))
            .collect::<Result<_>>()?;
        let mut fits = Vec::new();
        for (field, law) in fields.iter().zip(&laws) {
            let form = match flavor {
                Flavor::Local { .. } => law.local,
                _ => law.total,
            };
            let series = field.series(&origin).expect("origin is in every box");
            let fit = fit_growth_rate(grid.times(), &series, window, &form)?;
            fits.push((law, form, fit));
        }
        let rows: Vec<GrowthFitRow<'_>> = fits
            .iter()
            .map(|(law, form, fit)| GrowthFitRow {
                law,
                form,
                fit,
                expected: form.expected_slope(regime_report.lambda0),
            })
            .collect();
        output::write_growth_fit(&mut output::create(&cli.out, "growth_fit.csv")?, &rows)?;
        println!("growth fit: regime {regime}, lambda0 = {:.6e}", regime_report.lambda0);
    }
    Ok(())
}

fn seed(cfg: &RunConfig) -> Result<u64> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| Error::Config {
            line: 0,
            message: format!("{SEED_ENV} = `{v}` is not an unsigned integer"),
        }),
        Err(_) => Ok(cfg.seed),
    }
}

fn simulate(cfg: &RunConfig, cli: &Cli) -> Result<()> {
    let model = cfg.model()?;
    let ic = cfg.initial_condition();
    let sites = cfg.simulate_sites();
    let grid = cfg.time_grid()?;
    let plan = SimulationPlan::new(ic, cfg.t_max, cfg.replicas, seed(cfg)?)
        .with_checkpoints(grid.times().to_vec())
        .with_sites(sites.clone())
        .with_particle_cap(cfg.particle_cap);
    let stats = run_replicas(&model, &plan)?;
    let estimates = estimate_moments(&stats, cfg.simulate_orders)?;
    let label = match ic {
        InitialCondition::Single(x) => format!("single@{x}"),
        InitialCondition::Window(w) => format!("window:{w}"),
    };
    output::write_mc_moments(&mut output::create(&cli.out, "mc_moments.csv")?, &label, &sites, &estimates)?;
    println!(
        "simulate: {} replicas ({} capped and excluded), seed {}",
        stats.replicas, stats.capped, plan.seed
    );
    Ok(())
}

fn sweep(cfg: &RunConfig, cli: &Cli) -> Result<()> {
    let model = cfg.base_model()?;
    let alphas = if cfg.sweep_alphas.is_empty() {
        (1..=10).rev().map(|k| k as f64 / 10.0).collect()
    } else {
        cfg.sweep_alphas.clone()
    };
    let points = vaccination_sweep(&model, cfg.lattice()?, &alphas)?;
    output::write_vaccination_sweep(&mut output::create(&cli.out, "vaccination_sweep.csv")?, &points)?;
    let crossings = points
        .windows(2)
        .filter(|w| (w[0].lambda0 > 0.0) != (w[1].lambda0 > 0.0))
        .count();
    println!("vaccinate-sweep: {} alphas, {crossings} sign change(s) of lambda0", points.len());
    Ok(())
}
