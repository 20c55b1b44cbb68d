//! `obshom` — solve classical and oscillatory obstacle problems, compute
//! periodic correctors and their height, and run eps-sweep convergence
//! experiments from JSON scenario files.
//!
//! Exit codes: 0 success; 1 a quantitative bound was violated beyond its
//! slack (the CI signal); 2 usage, config or runtime errors.

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use obshom_core::corrector::{emu_sweep_records, solve_corrector};
use obshom_core::error::Error as CoreError;
use obshom_core::experiments::{
    report_csv, report_summary_json, run_convergence, sweep_csv, verify_convergence,
    ScenarioConfig,
};
use obshom_core::grid::{extend_periodic, ScalarField};
use obshom_core::io;
use obshom_core::solver::{
    height_fields, solve_complementarity_with_guess, solve_u0, verify_complementarity,
    ObstacleProblemSpec,
};
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "obshom", version, about = "Oscillatory obstacle problems on uniform grids")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON scenario document.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (the OBSHOM_OUT environment variable overrides this).
    #[arg(long, default_value = "obshom-out")]
    out_dir: PathBuf,
    /// Worker threads; 0 picks the number of cores.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the background and oscillatory obstacle problems for every eps.
    Solve {
        #[command(flatten)]
        common: Common,
    },
    /// Solve the periodic cell problem across the configured mu list.
    Corrector {
        #[command(flatten)]
        common: Common,
    },
    /// Sweep E(mu) and fit its decay rate.
    SweepEmu {
        #[command(flatten)]
        common: Common,
    },
    /// Run the full eps-sweep convergence experiment.
    Converge {
        #[command(flatten)]
        common: Common,
        /// Re-check a previous run's fields instead of solving.
        #[arg(long)]
        verify_from: Option<PathBuf>,
    },
    /// Solve per eps and report only the ball-averaged gradient estimate.
    Gradcheck {
        #[command(flatten)]
        common: Common,
    },
}

enum CliError {
    /// A paper-derived bound failed beyond slack.
    Invariant(String),
    /// Usage, config or runtime problem.
    Operational(String),
}

impl From<CoreError> for CliError {
    fn from(err: CoreError) -> Self {
        match err {
            CoreError::InvariantViolation { .. } => CliError::Invariant(err.to_string()),
            other => CliError::Operational(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let common = match &cli.command {
        Command::Solve { common }
        | Command::Corrector { common }
        | Command::SweepEmu { common }
        | Command::Converge { common, .. }
        | Command::Gradcheck { common } => common,
    };
    init_logging(common.verbose);
    if common.threads > 0 {
        if let Err(err) = rayon::ThreadPoolBuilder::new()
            .num_threads(common.threads)
            .build_global()
        {
            warn!("could not size the thread pool: {err}");
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Invariant(msg)) => {
            eprintln!("invariant failure: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Operational(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

fn out_dir(common: &Common) -> PathBuf {
    // Per the interface contract, OBSHOM_OUT overrides the flag.
    std::env::var_os("OBSHOM_OUT")
        .map(PathBuf::from)
        .unwrap_or_else(|| common.out_dir.clone())
}

fn load_config(path: &Path) -> Result<(ScenarioConfig, String), CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Operational(format!("cannot read {}: {e}", path.display())))?;
    let config = ScenarioConfig::from_json(&text)?;
    Ok((config, text))
}

fn prepare_out(common: &Common) -> Result<PathBuf, CliError> {
    let dir = out_dir(common);
    std::fs::create_dir_all(&dir)
        .map_err(|e| CliError::Operational(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

fn threads_in_use(common: &Common) -> usize {
    if common.threads > 0 {
        common.threads
    } else {
        rayon::current_num_threads()
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Solve { common } => cmd_solve(common),
        Command::Corrector { common } => cmd_corrector(common),
        Command::SweepEmu { common } => cmd_sweep_emu(common),
        Command::Converge { common, verify_from } => cmd_converge(common, verify_from.as_deref()),
        Command::Gradcheck { common } => cmd_gradcheck(common),
    }
}

#[derive(Serialize)]
struct SolveEntry {
    label: String,
    eps: Option<f64>,
    cells_per_axis: usize,
    sweeps: usize,
    residual: f64,
    field_residual: f64,
    tol: f64,
    tol_effective: f64,
    verify_residual: f64,
    contact_nodes: usize,
}

fn cmd_solve(common: &Common) -> Result<(), CliError> {
    let (config, echo) = load_config(&common.config)?;
    let dir = prepare_out(common)?;
    let params = config.solver.params()?;
    let psi_cell = config.psi.cell_field(config.dim, config.cell_resolution)?;
    let mut entries = Vec::new();

    let mut u0_by_cells: BTreeMap<usize, (obshom_core::ComplementaritySolution, ScalarField)> =
        BTreeMap::new();
    for (k, &eps) in config.eps_list.iter().enumerate() {
        let (grid, _m) = config.grid_for_eps(eps)?;
        let cells = grid.shape()[0] - 1;
        if !u0_by_cells.contains_key(&cells) {
            let phi0 = obshom_core::grid::sample(config.obstacle_fn(), &grid)?;
            let boundary = ScalarField::constant(grid, 0.0);
            let sol = solve_u0(&phi0, &boundary, config.lambda, &params)?;
            let spec = ObstacleProblemSpec::new(
                phi0.clone(),
                ScalarField::constant(grid, 0.0),
                Some(boundary),
                &params,
            )?;
            let diag = verify_complementarity(&sol, &spec)?;
            io::save_field(&sol.u, &dir, &format!("u0_c{cells}"))?;
            io::save_mask(&sol.contact, &dir, &format!("contact0_c{cells}"))?;
            if let Some(log) = &sol.log {
                io::write_atomic(
                    &dir.join(format!("convergence_u0_c{cells}.json")),
                    serde_json::to_string(log).map_err(CoreError::from)?.as_bytes(),
                )?;
            }
            entries.push(SolveEntry {
                label: format!("u0_c{cells}"),
                eps: None,
                cells_per_axis: cells,
                sweeps: sol.sweeps_used,
                residual: sol.residual,
                field_residual: sol.field_residual,
                tol: spec.tol,
                tol_effective: sol.tol_effective,
                verify_residual: diag.residual,
                contact_nodes: sol.contact.count(),
            });
            u0_by_cells.insert(cells, (sol, phi0));
        }
        let (u0_sol, phi0) = &u0_by_cells[&cells];
        let psi_ext = extend_periodic(&psi_cell, &grid, eps)?;
        let amp = eps.powf(config.p);
        let phi_eps = ScalarField::from_values(
            grid,
            phi0.values
                .iter()
                .zip(&psi_ext.values)
                .map(|(a, b)| a + amp * b)
                .collect(),
        )?;
        let spec = ObstacleProblemSpec::new(
            phi_eps,
            ScalarField::constant(grid, 0.0),
            Some(ScalarField::constant(grid, 0.0)),
            &params,
        )?;
        let sol = solve_complementarity_with_guess(&spec, &u0_sol.u)?;
        let diag = verify_complementarity(&sol, &spec)?;
        io::save_field(&sol.u, &dir, &format!("ueps_{k}"))?;
        io::save_mask(&sol.contact, &dir, &format!("contacteps_{k}"))?;
        if let Some(log) = &sol.log {
            io::write_atomic(
                &dir.join(format!("convergence_ueps_{k}.json")),
                serde_json::to_string(log).map_err(CoreError::from)?.as_bytes(),
            )?;
        }
        entries.push(SolveEntry {
            label: format!("ueps_{k}"),
            eps: Some(eps),
            cells_per_axis: cells,
            sweeps: sol.sweeps_used,
            residual: sol.residual,
            field_residual: sol.field_residual,
            tol: spec.tol,
            tol_effective: sol.tol_effective,
            verify_residual: diag.residual,
            contact_nodes: sol.contact.count(),
        });
        info!("solved eps = {eps} on {cells} cells per axis");
    }

    write_summary(&dir, &config.name, &echo, config.seed, common, &entries)?;
    Ok(())
}

fn cmd_corrector(common: &Common) -> Result<(), CliError> {
    let (config, echo) = load_config(&common.config)?;
    let dir = prepare_out(common)?;
    let params = config.solver.params()?;
    let scale = config.length_scale_params();
    let (mu_list, resolution) = match &config.sweep {
        Some(sweep) => (sweep.mu_list.clone(), sweep.cell_resolution),
        None => (
            config.eps_list.iter().map(|e| scale.mu_of_eps(*e)).collect(),
            config.cell_resolution,
        ),
    };
    let psi = config.psi.cell_field(config.dim, resolution)?;
    let mut records = Vec::new();
    for (k, &mu) in mu_list.iter().enumerate() {
        let rec = solve_corrector(&psi, mu, &params)?;
        io::save_field(&rec.chi, &dir, &format!("chi_{k}"))?;
        info!("mu = {mu:.3e}: E = {:.6e}, energy = {:.6e}", rec.height, rec.energy);
        records.push(rec);
    }
    io::write_atomic(&dir.join("corrector.csv"), sweep_csv(&records).as_bytes())?;
    let entries: Vec<_> = records
        .iter()
        .map(|r| {
            serde_json::json!({
                "mu": r.mu,
                "E": r.height,
                "energy": r.energy,
                "active_fraction": r.active_fraction,
                "sweeps": r.sweeps_used,
            })
        })
        .collect();
    write_summary(&dir, &config.name, &echo, config.seed, common, &entries)?;
    Ok(())
}

fn cmd_sweep_emu(common: &Common) -> Result<(), CliError> {
    let (config, echo) = load_config(&common.config)?;
    let dir = prepare_out(common)?;
    let sweep = config
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::Operational("sweep-emu needs a sweep section in the config".into()))?;
    let params = config.solver.params()?;
    let psi = config.psi.cell_field(config.dim, sweep.cell_resolution)?;
    let (fit, records) = emu_sweep_records(&psi, &sweep.mu_list, sweep.cell_resolution, &params)?;
    io::write_atomic(&dir.join("sweep.csv"), sweep_csv(&records).as_bytes())?;
    let fit_doc = serde_json::json!({
        "slope": fit.slope,
        "log_corrected_slope": fit.log_corrected_slope,
        "residual": fit.fit_residual,
        "window": {
            "mu_max": fit.samples.first().map(|s| s.0),
            "mu_min": fit.samples.last().map(|s| s.0),
        },
        "discarded_largest_mu": fit.discarded_largest_mu,
        "config_echo": echo,
    });
    io::write_atomic(
        &dir.join("fit.json"),
        serde_json::to_string_pretty(&fit_doc).map_err(CoreError::from)?.as_bytes(),
    )?;
    println!(
        "slope {:.4}, log-corrected slope {:.4}, fit residual {:.3e}",
        fit.slope, fit.log_corrected_slope, fit.fit_residual
    );
    Ok(())
}

fn cmd_converge(common: &Common, verify_from: Option<&Path>) -> Result<(), CliError> {
    let (config, echo) = load_config(&common.config)?;
    let dir = prepare_out(common)?;
    let report = match verify_from {
        Some(prev) => verify_convergence(&config, prev)?,
        None => run_convergence(&config, Some(&dir))?,
    };
    io::write_atomic(&dir.join("report.csv"), report_csv(&report).as_bytes())?;
    io::write_atomic(
        &dir.join("summary.json"),
        report_summary_json(&report, &echo, config.seed, threads_in_use(common))?.as_bytes(),
    )?;
    for row in &report.rows {
        println!(
            "eps {:.6e}: r {:.6e}, dH(contact) {:.6e}, dH(fb) {:.6e}, {}",
            row.eps, row.r_eps, row.dh_contact, row.dh_fb, row.status
        );
    }
    if report.rows.iter().any(|r| r.invariant_failure) {
        return Err(CliError::Invariant(
            "one or more rows violated a quantitative bound beyond slack".into(),
        ));
    }
    Ok(())
}

fn cmd_gradcheck(common: &Common) -> Result<(), CliError> {
    let (config, echo) = load_config(&common.config)?;
    let dir = prepare_out(common)?;
    let params = config.solver.params()?;
    let psi_cell = config.psi.cell_field(config.dim, config.cell_resolution)?;
    let scale = config.length_scale_params();

    let mut csv = String::from("eps,r_eps,grad_rms_ratio,status\n");
    let mut entries = Vec::new();
    let mut u0_by_cells: BTreeMap<usize, (obshom_core::ComplementaritySolution, ScalarField)> =
        BTreeMap::new();
    for &eps in &config.eps_list {
        let result = (|| -> Result<(f64, f64), CoreError> {
            let (grid, _) = config.grid_for_eps(eps)?;
            let cells = grid.shape()[0] - 1;
            if !u0_by_cells.contains_key(&cells) {
                let phi0 = obshom_core::grid::sample(config.obstacle_fn(), &grid)?;
                let boundary = ScalarField::constant(grid, 0.0);
                let sol = solve_u0(&phi0, &boundary, config.lambda, &params)?;
                u0_by_cells.insert(cells, (sol, phi0));
            }
            let (u0_sol, phi0) = &u0_by_cells[&cells];
            let mu = scale.mu_of_eps(eps);
            let rec = solve_corrector(&psi_cell, mu, &params)?;
            let r_eps = (eps.powf(config.p) * rec.height).sqrt();
            let psi_ext = extend_periodic(&psi_cell, &grid, eps)?;
            let amp = eps.powf(config.p);
            let phi_eps = ScalarField::from_values(
                grid,
                phi0.values
                    .iter()
                    .zip(&psi_ext.values)
                    .map(|(a, b)| a + amp * b)
                    .collect(),
            )?;
            let spec = ObstacleProblemSpec::new(
                phi_eps,
                ScalarField::constant(grid, 0.0),
                Some(ScalarField::constant(grid, 0.0)),
                &params,
            )?;
            let ueps = solve_complementarity_with_guess(&spec, &u0_sol.u)?;
            let (w0, weps) = height_fields(u0_sol, &ueps, phi0)?;
            let report =
                obshom_core::experiments::gradient_check(&w0, &weps, r_eps, config.probe_target)?;
            Ok((r_eps, report.ratio))
        })();
        match result {
            Ok((r_eps, ratio)) => {
                csv.push_str(&format!("{eps:.17e},{r_eps:.17e},{ratio:.17e},ok\n"));
                entries.push(serde_json::json!({"eps": eps, "r_eps": r_eps, "ratio": ratio}));
            }
            Err(err) => {
                warn!("eps = {eps}: gradcheck failed: {err}");
                csv.push_str(&format!("{eps:.17e},nan,nan,failed\n"));
            }
        }
    }
    io::write_atomic(&dir.join("gradcheck.csv"), csv.as_bytes())?;
    write_summary(&dir, &config.name, &echo, config.seed, common, &entries)?;
    Ok(())
}

fn write_summary<T: Serialize>(
    dir: &Path,
    name: &str,
    echo: &str,
    seed: u64,
    common: &Common,
    entries: &[T],
) -> Result<(), CliError> {
    let doc = serde_json::json!({
        "scenario": name,
        "entries": entries,
        "seed": seed,
        "threads": threads_in_use(common),
        "config_echo": echo,
    });
    io::write_atomic(
        &dir.join("summary.json"),
        serde_json::to_string_pretty(&doc).map_err(CoreError::from)?.as_bytes(),
    )?;
    Ok(())
}
