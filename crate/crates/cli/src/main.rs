//! matchkit: equilibrium, identification, estimation, and comparative
//! statics for separable one-to-one matching markets, plus a finite-agent
//! simulation oracle.
//!
//! Exit status: 0 on success, 1 on domain errors (machine-readable JSON on
//! stderr), 2 on I/O or argument errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use matchkit::comparative::one_type::{
    one_type_differentials, one_type_identify, solve_one_type, Logistic, OneTypeModel,
    OneTypeShock, ScalarShockDist, StdNormal,
};
use matchkit::comparative::{assemble_hessians, differential_response, welfare_derivatives, Shock};
use matchkit::equilibrium::{ipfp_logit, solve_equilibrium, SolveOptions};
use matchkit::heterogeneity::{HeterogeneitySpec, ShockKind, Side};
use matchkit::identification::{estimate_lambda, recover_surplus, recover_u, EstimateOptions};
use matchkit::io::{
    read_basis, read_heterogeneity, read_json, read_market, read_matching_csv, rows_to_matrix,
    write_json, write_matching_csv, write_matrix_csv, CsReportFile, EquilibriumFile, FileError,
    ShockFile,
};
use matchkit::market::{Matching, ValidatedMarket};
use matchkit::micro::{aggregate, sample_population, solve_assignment};
use matchkit::{selftest, Error as DomainError};

#[derive(Parser)]
#[command(
    name = "matchkit",
    version,
    about = "Separable transferable-utility matching: solve, identify, estimate, differentiate, simulate"
)]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SolverChoice {
    Newton,
    Ipfp,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DistChoice {
    Logistic,
    Normal,
}

impl DistChoice {
    fn build(self) -> Box<dyn ScalarShockDist + Send + Sync> {
        match self {
            DistChoice::Logistic => Box::new(Logistic),
            DistChoice::Normal => Box::new(StdNormal::new()),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Compute the equilibrium of a market.
    Solve {
        /// Market JSON file (types, masses, surplus matrix).
        #[arg(long)]
        market: PathBuf,
        /// Heterogeneity for both sides: "logit", "logit:SCALE", or a JSON path.
        #[arg(long, default_value = "logit")]
        het: String,
        /// Override the men-side heterogeneity.
        #[arg(long)]
        het_men: Option<String>,
        /// Override the women-side heterogeneity.
        #[arg(long)]
        het_women: Option<String>,
        #[arg(long, value_enum, default_value_t = SolverChoice::Newton)]
        solver: SolverChoice,
        /// Convergence tolerance on the equilibrium-condition residual.
        #[arg(long, default_value_t = 1e-9)]
        tolerance: f64,
        #[arg(long)]
        max_iterations: Option<usize>,
        /// Output equilibrium JSON.
        #[arg(long)]
        out: PathBuf,
        /// Also write the equilibrium matching as CSV.
        #[arg(long)]
        out_matching: Option<PathBuf>,
    },
    /// Recover U, V, and the joint surplus from an observed matching.
    Identify {
        #[arg(long)]
        market: PathBuf,
        /// Observed matching CSV (header x,y,mu; 0 marks the singles side).
        #[arg(long)]
        matching: PathBuf,
        #[arg(long, default_value = "logit")]
        het: String,
        #[arg(long)]
        het_men: Option<String>,
        #[arg(long)]
        het_women: Option<String>,
        /// Add this mass to every cell and re-balance the margins before
        /// identifying (explicit smoothing of empirical zeros).
        #[arg(long)]
        laplace: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate basis coefficients of the surplus by comoment matching.
    Estimate {
        #[arg(long)]
        market: PathBuf,
        #[arg(long)]
        matching: PathBuf,
        /// Basis family JSON.
        #[arg(long)]
        basis: PathBuf,
        #[arg(long, default_value = "logit")]
        het: String,
        #[arg(long)]
        het_men: Option<String>,
        #[arg(long)]
        het_women: Option<String>,
        #[arg(long)]
        laplace: Option<f64>,
        /// Sup-norm tolerance on the moment gap.
        #[arg(long, default_value_t = 1e-8)]
        tolerance: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Differentiate an equilibrium with respect to a shock in (n, m, Phi).
    Cs {
        #[arg(long)]
        market: PathBuf,
        /// Equilibrium JSON produced by `solve`.
        #[arg(long)]
        eq: PathBuf,
        /// Shock JSON: {"dn": [...], "dm": [...], "dphi": [[...]]}.
        #[arg(long)]
        shock: PathBuf,
        #[arg(long, default_value = "logit")]
        het: String,
        #[arg(long)]
        het_men: Option<String>,
        #[arg(long)]
        het_women: Option<String>,
        #[arg(long)]
        out: PathBuf,
        /// Also emit the four population welfare-derivative blocks as CSV
        /// matrices (du_dn, du_dm, dv_dn, dv_dm) into this directory.
        #[arg(long)]
        blocks: Option<PathBuf>,
    },
    /// Solve, identify, and differentiate the scalar one-type model.
    Onetype {
        #[arg(long)]
        n: f64,
        #[arg(long)]
        m: f64,
        /// Joint surplus; omit when identifying it from --mu.
        #[arg(long)]
        phi: Option<f64>,
        /// Observed number of matches; identifies phi when given.
        #[arg(long)]
        mu: Option<f64>,
        #[arg(long, value_enum, default_value_t = DistChoice::Logistic)]
        dist: DistChoice,
        #[arg(long, default_value_t = 0.0)]
        dlogn: f64,
        #[arg(long, default_value_t = 0.0)]
        dlogm: f64,
        #[arg(long, default_value_t = 0.0)]
        dphi: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample a finite population, solve the assignment exactly, and
    /// compare frequencies with the continuum equilibrium.
    Simulate {
        #[arg(long)]
        market: PathBuf,
        #[arg(long, default_value = "logit")]
        het: String,
        #[arg(long)]
        het_men: Option<String>,
        #[arg(long)]
        het_women: Option<String>,
        /// Agents per unit of population mass.
        #[arg(long, default_value_t = 1000.0)]
        scale: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the built-in desk-scale acceptance suite.
    Selftest,
}

enum CliError {
    Domain(DomainError),
    File(FileError),
}

impl From<DomainError> for CliError {
    fn from(e: DomainError) -> Self {
        CliError::Domain(e)
    }
}

impl From<FileError> for CliError {
    fn from(e: FileError) -> Self {
        match e {
            FileError::Domain(d) => CliError::Domain(d),
            other => CliError::File(other),
        }
    }
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    code: &'a str,
    message: String,
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    error: ErrorBody<'a>,
}

fn emit_error(code: &str, message: String) {
    let report = ErrorReport {
        error: ErrorBody { code, message },
    };
    eprintln!(
        "{}",
        serde_json::to_string(&report)
            .unwrap_or_else(|_| format!("{{\"error\":{{\"code\":\"{code}\"}}}}"))
    );
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .init();

    match run(cli.command) {
        Ok(code) => code,
        Err(CliError::Domain(e)) => {
            emit_error(e.code(), e.to_string());
            ExitCode::from(1)
        }
        Err(CliError::File(e)) => {
            let code = match &e {
                FileError::Io { .. } => "IO_ERROR",
                _ => "PARSE_ERROR",
            };
            emit_error(code, e.to_string());
            ExitCode::from(2)
        }
    }
}

/// Worker threads from MATCHKIT_THREADS; default 1 for bitwise
/// reproducibility.
fn threads_from_env() -> Result<usize, CliError> {
    match std::env::var("MATCHKIT_THREADS") {
        Ok(raw) => {
            let t: usize = raw.parse().map_err(|_| {
                CliError::Domain(DomainError::InvalidParameter(format!(
                    "MATCHKIT_THREADS must be a positive integer, got '{raw}'"
                )))
            })?;
            if t == 0 {
                return Err(CliError::Domain(DomainError::InvalidParameter(
                    "MATCHKIT_THREADS must be at least 1".into(),
                )));
            }
            Ok(t)
        }
        Err(_) => Ok(1),
    }
}

/// Parse a heterogeneity argument: "logit", "logit:SCALE", or a path to a
/// heterogeneity JSON file.
fn parse_het(
    spec: &str,
    side: Side,
    num_types: usize,
    num_choices: usize,
) -> Result<HeterogeneitySpec, CliError> {
    if spec == "logit" {
        return Ok(HeterogeneitySpec::logit(side, 1.0)?);
    }
    if let Some(scale) = spec.strip_prefix("logit:") {
        let scale: f64 = scale.parse().map_err(|_| {
            CliError::Domain(DomainError::InvalidParameter(format!(
                "bad logit scale '{scale}'"
            )))
        })?;
        return Ok(HeterogeneitySpec::logit(side, scale)?);
    }
    Ok(read_heterogeneity(
        Path::new(spec),
        side,
        num_types,
        num_choices,
    )?)
}

fn het_pair(
    market: &ValidatedMarket,
    het: &str,
    het_men: &Option<String>,
    het_women: &Option<String>,
) -> Result<(HeterogeneitySpec, HeterogeneitySpec), CliError> {
    let men_spec = het_men.as_deref().unwrap_or(het);
    let women_spec = het_women.as_deref().unwrap_or(het);
    Ok((
        parse_het(men_spec, Side::Men, market.num_x(), market.num_y())?,
        parse_het(women_spec, Side::Women, market.num_y(), market.num_x())?,
    ))
}

/// Add mass to every cell and rebalance onto the market margins by
/// alternating proportional row/column scalings.
fn laplace_smooth(
    matching: &Matching,
    market: &ValidatedMarket,
    eps: f64,
) -> Result<Matching, CliError> {
    if eps <= 0.0 || !eps.is_finite() {
        return Err(CliError::Domain(DomainError::InvalidParameter(format!(
            "laplace mass must be positive, got {eps}"
        ))));
    }
    log::info!("laplace smoothing with mass {eps} per cell, rebalancing margins");
    let (nx, ny) = (market.num_x(), market.num_y());
    let mut mu = matching.mu.map(|v| v + eps);
    let mut mu_x0 = matching.mu_x0.map(|v| v + eps);
    let mut mu_0y = matching.mu_0y.map(|v| v + eps);
    for _ in 0..10_000 {
        for x in 0..nx {
            let row_sum: f64 = mu.row(x).sum() + mu_x0[x];
            let scale = market.n()[x] / row_sum;
            for y in 0..ny {
                mu[(x, y)] *= scale;
            }
            mu_x0[x] *= scale;
        }
        for y in 0..ny {
            let col_sum: f64 = mu.column(y).sum() + mu_0y[y];
            let scale = market.m()[y] / col_sum;
            for x in 0..nx {
                mu[(x, y)] *= scale;
            }
            mu_0y[y] *= scale;
        }
        let mut worst = 0.0f64;
        for x in 0..nx {
            let row_sum: f64 = mu.row(x).sum() + mu_x0[x];
            worst = worst.max((row_sum - market.n()[x]).abs());
        }
        if worst <= 1e-13 {
            return Ok(Matching::new(mu, mu_x0, mu_0y));
        }
    }
    Err(CliError::Domain(DomainError::NoConvergence {
        solver: "laplace margin rebalancing",
        iterations: 10_000,
        residual: f64::NAN,
    }))
}

fn load_matching(
    path: &Path,
    market: &ValidatedMarket,
    laplace: Option<f64>,
) -> Result<Matching, CliError> {
    let matching = read_matching_csv(path, market)?;
    match laplace {
        Some(eps) => laplace_smooth(&matching, market, eps),
        None => Ok(matching),
    }
}

#[derive(Serialize)]
struct IdentifyReport {
    #[serde(rename = "U")]
    u: Vec<Vec<f64>>,
    #[serde(rename = "V")]
    v: Vec<Vec<f64>>,
    phi: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct EstimateFileReport {
    lambda: Vec<f64>,
    basis_names: Vec<String>,
    iterations: usize,
    moment_gap: f64,
    phi: Vec<Vec<f64>>,
    fitted: EquilibriumFile,
}

#[derive(Serialize)]
struct OneTypeReport {
    n: f64,
    m: f64,
    phi: f64,
    #[serde(rename = "U")]
    u_split: f64,
    mu: f64,
    u: f64,
    v: f64,
    k_p: f64,
    k_q: f64,
    t_scalar: f64,
    e_n: f64,
    e_m: f64,
    s_fraction: f64,
    #[serde(rename = "dU")]
    du_split: f64,
    du: f64,
    dv: f64,
    dmu: f64,
}

#[derive(Serialize)]
struct SimulateReport {
    scale: f64,
    seed: u64,
    counts_men: Vec<usize>,
    counts_women: Vec<usize>,
    mu_hat: Vec<Vec<f64>>,
    mu_x0_hat: Vec<f64>,
    mu_0y_hat: Vec<f64>,
    total_surplus: f64,
    mu_star: Vec<Vec<f64>>,
    sup_gap: f64,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

fn run(command: Command) -> Result<ExitCode, CliError> {
    match command {
        Command::Solve {
            market,
            het,
            het_men,
            het_women,
            solver,
            tolerance,
            max_iterations,
            out,
            out_matching,
        } => {
            let (market, phi) = read_market(&market)?;
            let (hm, hw) = het_pair(&market, &het, &het_men, &het_women)?;
            let options = SolveOptions {
                tolerance,
                max_iterations,
                start: None,
                threads: threads_from_env()?,
            };
            let result = match solver {
                SolverChoice::Newton => solve_equilibrium(&market, &hm, &hw, &phi, &options)?,
                SolverChoice::Ipfp => {
                    let scale_of = |spec: &HeterogeneitySpec| match spec.kind {
                        ShockKind::ExtremeValueLogit { scale } => Ok(scale),
                        _ => Err(DomainError::NotLogit),
                    };
                    ipfp_logit(&market, scale_of(&hm)?, scale_of(&hw)?, &phi, &options)?
                }
            };
            log::info!(
                "solved in {} iterations, residual {:.3e}",
                result.diagnostics.iterations,
                result.diagnostics.residual
            );
            write_json(&out, &EquilibriumFile::from_result(&result))?;
            if let Some(path) = out_matching {
                write_matching_csv(&path, &result.matching, market.types())?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Identify {
            market,
            matching,
            het,
            het_men,
            het_women,
            laplace,
            out,
        } => {
            let (market, _) = read_market(&market)?;
            let (hm, hw) = het_pair(&market, &het, &het_men, &het_women)?;
            let matching = load_matching(&matching, &market, laplace)?;
            let u = recover_u(&matching, &market, &hm)?;
            let phi = recover_surplus(&matching, &market, &hm, &hw)?;
            let v = phi.phi() - &u;
            let report = IdentifyReport {
                u: rows(&u),
                v: rows(&v),
                phi: rows(phi.phi()),
            };
            match out {
                Some(path) => write_json(&path, &report)?,
                None => println!(
                    "{}",
                    serde_json::to_string_pretty(&report).expect("serializable report")
                ),
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Estimate {
            market,
            matching,
            basis,
            het,
            het_men,
            het_women,
            laplace,
            tolerance,
            out,
        } => {
            let (market, _) = read_market(&market)?;
            let (hm, hw) = het_pair(&market, &het, &het_men, &het_women)?;
            let observed = load_matching(&matching, &market, laplace)?;
            let (basis, names) = read_basis(&basis)?;
            let options = EstimateOptions {
                moment_tolerance: tolerance,
                ..EstimateOptions::default()
            };
            let report = estimate_lambda(&observed, &market, &hm, &hw, &basis, &options)?;
            let phi = basis.combine(&report.lambda);
            write_json(
                &out,
                &EstimateFileReport {
                    lambda: report.lambda.iter().copied().collect(),
                    basis_names: names,
                    iterations: report.iterations,
                    moment_gap: report.moment_gap,
                    phi: rows(&phi),
                    fitted: EquilibriumFile::from_result(&report.fitted),
                },
            )?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Cs {
            market,
            eq,
            shock,
            het,
            het_men,
            het_women,
            out,
            blocks,
        } => {
            let (market, _) = read_market(&market)?;
            let (hm, hw) = het_pair(&market, &het, &het_men, &het_women)?;
            let eq_file: EquilibriumFile = read_json(&eq)?;
            let equilibrium = eq_file.into_result()?;
            let shock_file: ShockFile = read_json(&shock)?;
            let shock = Shock {
                dn: DVector::from_vec(shock_file.dn),
                dm: DVector::from_vec(shock_file.dm),
                dphi: rows_to_matrix(&shock_file.dphi, "shock dphi")?,
            };
            let bundle = assemble_hessians(&market, &hm, &hw, &equilibrium)?;
            let response = differential_response(&bundle, &market, &equilibrium, &shock)?;
            let welfare_blocks = welfare_derivatives(&bundle, &market, &equilibrium)?;
            write_json(&out, &CsReportFile::from_parts(&response, &welfare_blocks))?;
            if let Some(dir) = blocks {
                std::fs::create_dir_all(&dir).map_err(|e| {
                    CliError::File(FileError::Io {
                        path: dir.display().to_string(),
                        source: e,
                    })
                })?;
                write_matrix_csv(&dir.join("du_dn.csv"), &rows(&welfare_blocks.du_dn))?;
                write_matrix_csv(&dir.join("du_dm.csv"), &rows(&welfare_blocks.du_dm))?;
                write_matrix_csv(&dir.join("dv_dn.csv"), &rows(&welfare_blocks.dv_dn))?;
                write_matrix_csv(&dir.join("dv_dm.csv"), &rows(&welfare_blocks.dv_dm))?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Onetype {
            n,
            m,
            phi,
            mu,
            dist,
            dlogn,
            dlogm,
            dphi,
            out,
        } => {
            let phi = match (phi, mu) {
                (Some(p), None) => p,
                (None, Some(observed_mu)) => one_type_identify(
                    observed_mu,
                    n,
                    m,
                    dist.build().as_ref(),
                    dist.build().as_ref(),
                )?,
                _ => {
                    return Err(CliError::Domain(DomainError::InvalidParameter(
                        "provide exactly one of --phi or --mu".into(),
                    )))
                }
            };
            let model = OneTypeModel::new(n, m, phi, dist.build(), dist.build())?;
            let solution = solve_one_type(&model)?;
            let shock = OneTypeShock {
                dlog_n: dlogn,
                dlog_m: dlogm,
                dphi,
            };
            let d = one_type_differentials(&model, &solution, &shock);
            let report = OneTypeReport {
                n,
                m,
                phi,
                u_split: solution.u_split,
                mu: solution.mu,
                u: solution.u,
                v: solution.v,
                k_p: d.local.k_p,
                k_q: d.local.k_q,
                t_scalar: d.local.t_scalar,
                e_n: d.e_n,
                e_m: d.e_m,
                s_fraction: d.s_fraction,
                du_split: d.du_split,
                du: d.du,
                dv: d.dv,
                dmu: d.dmu,
            };
            match out {
                Some(path) => write_json(&path, &report)?,
                None => println!(
                    "{}",
                    serde_json::to_string_pretty(&report).expect("serializable report")
                ),
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Simulate {
            market,
            het,
            het_men,
            het_women,
            scale,
            seed,
            out,
        } => {
            let (market, phi) = read_market(&market)?;
            let (hm, hw) = het_pair(&market, &het, &het_men, &het_women)?;
            let population = sample_population(&market, &hm, &hw, scale, seed)?;
            log::info!(
                "sampled {} men, {} women",
                population.men.len(),
                population.women.len()
            );
            let assignment = solve_assignment(&population, &phi)?;
            let empirical = aggregate(&population, &assignment);
            let options = SolveOptions {
                threads: threads_from_env()?,
                ..SolveOptions::default()
            };
            let continuum = solve_equilibrium(&market, &hm, &hw, &phi, &options)?;
            let sup_gap = (&empirical.mu - &continuum.matching.mu).amax();
            write_json(
                &out,
                &SimulateReport {
                    scale,
                    seed,
                    counts_men: population.counts_men.clone(),
                    counts_women: population.counts_women.clone(),
                    mu_hat: rows(&empirical.mu),
                    mu_x0_hat: empirical.mu_x0.iter().copied().collect(),
                    mu_0y_hat: empirical.mu_0y.iter().copied().collect(),
                    total_surplus: assignment.total_surplus,
                    mu_star: rows(&continuum.matching.mu),
                    sup_gap,
                },
            )?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Selftest => {
            let results = selftest::run_all();
            for r in &results {
                println!("{}", r.line());
            }
            if selftest::all_pass(&results) {
                println!("all {} criteria passed", results.len());
                Ok(ExitCode::SUCCESS)
            } else {
                let failed = results.iter().filter(|r| !r.pass).count();
                emit_error(
                    "SELFTEST_FAILED",
                    format!("{failed} of {} criteria failed", results.len()),
                );
                Ok(ExitCode::from(1))
            }
        }
    }
}
