use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use num_complex::Complex64;
use serde_json::json;

use phaseflow::config::{load_config, ResolvedConfig};
use phaseflow::constitutive::Side;
use phaseflow::diagnostics::{conservation_budgets, DiagnosticsReport};
use phaseflow::driver::{simulate, Driver};
use phaseflow::geometry::ExtendedHeight;
use phaseflow::heat::{HeatParams, HeatSolver};
use phaseflow::io::{write_json, Snapshot};
use phaseflow::manufactured::{observed_orders, run_two_layer, StokesManufactured};
use phaseflow::plots::emit_plots;
use phaseflow::selfcheck::invariant_suite;
use phaseflow::stokes::{resolvent_sweep, sector_lambdas, Sector, StokesFields, StokesParams, StokesSolver};
use phaseflow::{Error, Result};

/// Two-phase Navier-Stokes-Fourier flow with phase transition in flattened coordinates.
#[derive(Parser, Debug)]
#[command(name = "phaseflow", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct ConfigArgs {
    /// Configuration file (TOML); defaults apply to every missing key.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set grid.m_tan=128` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate closures, the equilibrium condition and initial compatibility.
    CheckModel {
        #[command(flatten)]
        args: ConfigArgs,
        /// Also run the full invariant suite.
        #[arg(long)]
        seed_check: bool,
    },
    /// Run the nonlinear fixed-point driver to `grid.t_final`.
    Simulate {
        #[command(flatten)]
        args: ConfigArgs,
    },
    /// Manufactured-solution checks of the linear Stokes and heat interface solvers.
    SolveLinear {
        #[command(flatten)]
        args: ConfigArgs,
        /// Normal resolutions of the Stokes convergence study.
        #[arg(long, value_delimiter = ',', default_value = "32,64,128")]
        levels: Vec<usize>,
    },
    /// Condition numbers of every Stokes mode block over a resolvent sector.
    ResolventSweep {
        #[command(flatten)]
        args: ConfigArgs,
        #[arg(long, default_value_t = 1.0)]
        lambda0: f64,
        /// Sector half-opening margin: `|arg lambda| <= pi - sector_epsilon`.
        #[arg(long, default_value_t = 0.1)]
        sector_epsilon: f64,
        #[arg(long, default_value_t = 7)]
        n_radii: usize,
        #[arg(long, default_value_t = 9)]
        n_angles: usize,
    },
    /// Recompute diagnostics and budgets from the snapshots of a run directory.
    Diagnose {
        run_dir: PathBuf,
        /// Output directory (default `<run_dir>/diagnose`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write SVG plots of a run or diagnose directory into `<dir>/plots`.
    Plot { dir: PathBuf },
}

fn out_dir(args: &ConfigArgs, default: &str) -> Result<PathBuf> {
    let dir = args.out.clone().unwrap_or_else(|| PathBuf::from(default));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

/// Prints `value`; a closed stdout (e.g. a pipe into `head`) is not an error.
fn print_json(value: &serde_json::Value) {
    let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(value).unwrap_or_default());
}

fn resolve(args: &ConfigArgs) -> Result<ResolvedConfig> {
    let resolved = load_config(args.config.as_deref(), &args.set)?;
    resolved.config.validate()?;
    Ok(resolved)
}

fn check_model(args: &ConfigArgs, seed_check: bool) -> Result<i32> {
    let resolved = resolve(args)?;
    let config = &resolved.config;
    let material = config.build_material()?;
    let sample = material.default_box();
    let validation = material.validate(&sample)?;
    let consistency = material.thermo_consistency(&sample)?;
    let checks: Vec<_> = validation
        .checks
        .iter()
        .map(|c| json!({ "name": c.name, "passed": c.passed, "worst": c.worst, "at": c.at }))
        .collect();
    let driver = Driver::new(config)?;
    let (compat, init_error) = match driver.initialize() {
        Ok(init) => (Some(init.compatibility), None),
        Err(e) => (None, Some(e)),
    };
    let suite = if seed_check { Some(invariant_suite(&material, config.rhs_options())?) } else { None };
    let report = json!({
        "equilibrium_residual": material.equilibrium_residual(),
        "closures": checks,
        "specific_heat_positive": consistency.specific_heat_positive(),
        "kappa_deviation": [consistency.kappa_deviation_plus, consistency.kappa_deviation_minus],
        "pressure_deviation": consistency.pressure_deviation,
        "compatibility": compat,
        "initialization_error": init_error.as_ref().map(|e| e.to_string()),
        "invariant_suite": suite,
    });
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)?;
        write_json(&dir.join("model_check.json"), &report)?;
    }
    print_json(&report);
    if !validation.passed() {
        return Err(Error::Model("closure validation failed".into()));
    }
    if let Some(e) = init_error {
        return Err(e);
    }
    let suite_failed = suite.as_ref().is_some_and(|s| s.iter().any(|c| !c.passed));
    Ok(if suite_failed { 1 } else { 0 })
}

fn run_simulate(args: &ConfigArgs) -> Result<i32> {
    let resolved = resolve(args)?;
    let dir = out_dir(args, "phaseflow-run")?;
    let outcome = simulate(&resolved, Some(&dir))?;
    print_json(&serde_json::to_value(&outcome.summary).map_err(|e| Error::Format(e.to_string()))?);
    Ok(outcome.termination.exit_code)
}

fn solve_linear(args: &ConfigArgs, levels: &[usize]) -> Result<i32> {
    let resolved = resolve(args)?;
    let config = &resolved.config;
    let grid = config.build_grid()?;
    let material = config.build_material()?;
    let sp = StokesParams::from_material(&material);

    let ms = StokesManufactured::new(grid.l_nrm, 1.0, Complex64::new(1.0 / grid.dt, 0.0));
    let errors = levels.iter().map(|&m| ms.errors(&sp, m)).collect::<Result<Vec<_>>>()?;
    let orders = observed_orders(&errors);

    // One full-grid step from rest with smooth forcing on every row and interface equation.
    let mut fields = StokesFields::zeros(&grid);
    for i in 0..grid.dim {
        fields.f_plus[i] = grid.sample(Side::Plus, |x, z| (x[0] + i as f64).sin() * (-z * z).exp());
        fields.f_minus[i] = grid.sample(Side::Minus, |x, z| (x[0] - i as f64).cos() * (-z * z).exp());
    }
    fields.d = grid.sample_line(|x| 0.1 * (2.0 * x[0]).cos());
    let solver = StokesSolver::new(&grid, sp, Complex64::new(1.0 / grid.dt, 0.0))?;
    let (_, stokes_report) = solver.solve(&grid, &fields)?;

    let hp = HeatParams::from_material(&material);
    let heat = HeatSolver::new(&grid, hp, Complex64::new(1.0 / grid.dt, 0.0))?;
    let fp = grid.sample(Side::Plus, |x, z| (-z * z).exp() * (1.0 + x[0].sin()));
    let fm = grid.sample(Side::Minus, |x, z| (-z * z).exp() * x[0].cos());
    let (_, _, heat_report) = heat.solve(&grid, &fp, &fm, &grid.sample_line(|x| 0.3 * x[0].cos()))?;
    let two_layer = run_two_layer(&grid, hp, grid.t_final)?;

    let report = json!({
        "stokes_manufactured": errors,
        "stokes_observed_orders": orders.iter().map(|o| json!({ "velocity": o[0], "pressure": o[1], "height": o[2] })).collect::<Vec<_>>(),
        "stokes_full_grid": {
            "max_residual": stokes_report.modes.max_residual(),
            "max_condition": stokes_report.modes.max_condition(),
            "interface_equations": stokes_report.equations.max(),
        },
        "heat_full_grid": {
            "max_residual": heat_report.max_residual(),
            "max_condition": heat_report.max_condition(),
        },
        "heat_two_layer": two_layer,
    });
    let dir = out_dir(args, "phaseflow-linear")?;
    write_json(&dir.join("solve_linear.json"), &report)?;
    print_json(&report);
    Ok(0)
}

fn run_sweep(args: &ConfigArgs, sector: Sector, n_radii: usize, n_angles: usize) -> Result<i32> {
    let resolved = resolve(args)?;
    let grid = resolved.config.build_grid()?;
    let material = resolved.config.build_material()?;
    let lambdas = sector_lambdas(sector, n_radii, n_angles);
    let rows = resolvent_sweep(&grid, StokesParams::from_material(&material), &lambdas)?;
    let mut csv = String::from("lambda_re,lambda_im,mode,wave_1,wave_2,condition,residual\n");
    for r in &rows {
        csv.push_str(&format!(
            "{:.17e},{:.17e},{},{:.17e},{:.17e},{:.17e},{:.17e}\n",
            r.lambda_re, r.lambda_im, r.mode, r.wave[0], r.wave[1], r.condition, r.residual
        ));
    }
    let dir = out_dir(args, "phaseflow-sweep")?;
    std::fs::write(dir.join("sweep.csv"), csv)?;
    let report = json!({
        "lambda0": sector.lambda0,
        "sector_epsilon": sector.epsilon,
        "n_lambda": lambdas.len(),
        "n_rows": rows.len(),
        "max_condition": rows.iter().map(|r| r.condition).fold(0.0, f64::max),
        "max_residual": rows.iter().map(|r| r.residual).fold(0.0, f64::max),
    });
    write_json(&dir.join("sweep_summary.json"), &report)?;
    print_json(&report);
    Ok(0)
}

fn diagnose(run_dir: &Path, out: Option<&Path>) -> Result<i32> {
    let resolved = load_config(Some(&run_dir.join("config.toml")), &[])?;
    let config = &resolved.config;
    let driver = Driver::new(config)?;
    let grid = &driver.grid;
    let snaps = run_dir.join("snapshots");
    let mut files: Vec<PathBuf> = std::fs::read_dir(&snaps)
        .map_err(|e| Error::Format(format!("{}: {e}", snaps.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "bps"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Format(format!("no binary snapshots in {}", snaps.display())));
    }
    let options = config.rhs_options();
    let mut csv = String::new();
    let mut totals = Vec::new();
    for path in &files {
        let snap = Snapshot::read_binary(path)?;
        snap.check_grid(grid)?;
        let dhdt = match &snap.dhdt {
            Some(d) => d.clone(),
            None => driver.kinematic_rate(&snap.state)?,
        };
        let geometry = ExtendedHeight::new(grid, &snap.state.h, Some(&dhdt))?;
        let report = DiagnosticsReport::evaluate(
            grid,
            &driver.material,
            options.curvature,
            &snap.state,
            &geometry,
            &dhdt,
            options.delta_j,
        )?;
        if csv.is_empty() {
            csv = report.csv_header();
            csv.push('\n');
        }
        csv.push_str(&report.csv_row());
        csv.push('\n');
        totals.push(report.totals);
    }
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| run_dir.join("diagnose"));
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("diagnostics.csv"), csv)?;
    let budgets = if totals.len() >= 2 { Some(conservation_budgets(&totals)?) } else { None };
    write_json(&dir.join("budgets.json"), &budgets)?;
    print_json(&json!({ "snapshots": files.len(), "out": dir, "budgets": budgets }));
    Ok(0)
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::CheckModel { args, seed_check } => check_model(&args, seed_check),
        Command::Simulate { args } => run_simulate(&args),
        Command::SolveLinear { args, levels } => solve_linear(&args, &levels),
        Command::ResolventSweep { args, lambda0, sector_epsilon, n_radii, n_angles } => {
            run_sweep(&args, Sector { epsilon: sector_epsilon, lambda0 }, n_radii, n_angles)
        }
        Command::Diagnose { run_dir, out } => diagnose(&run_dir, out.as_deref()),
        Command::Plot { dir } => {
            for p in emit_plots(&dir)? {
                let _ = writeln!(std::io::stdout(), "{}", p.display());
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
