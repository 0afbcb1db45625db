//! Command-line front end. One experiment per process: resolve the model and
//! experiment settings (flags win over the config file), run the experiment,
//! write the CSV and JSON summary atomically, and exit 0 only when every
//! assertion passed. Config problems exit 2, numerical failures exit 3.

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod config;
mod experiments;
mod output;

use config::{
    barycenter_ray, integer_grid, load_file_config, parse_grid, parse_observable, parse_rational,
    preset_listing, resolve_model, FileConfig, ResolvedConfig,
};
use output::{summary_json, write_atomic, ExperimentResult, Logger};
use stabfn_core::geometry::{DelzantPolytope, Rat};

/// Errors split by exit code: configuration problems exit 2 and carry the
/// offending field in the message, numerical failures exit 3 and carry the
/// failing module's error verbatim.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numerical(String),
}

#[derive(Parser)]
#[command(
    name = "stabfn",
    version,
    about = "stability functions of symplectic quotients: evaluation, norms, and asymptotics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate the stability function on random stable points by every method.
    Psi(PsiCmd),
    /// Monomial-section norms upstairs and on the quotient at a fixed power.
    Norms(NormsCmd),
    /// Large-parameter experiments: halfform, laplace, moments, dos.
    Asymptotics(AsymptoticsCmd),
    /// Closed form against the definition on matrix families.
    MatrixPsi(MatrixPsiCmd),
    /// Eigenvalues of the chain endpoint on generated level points.
    ChainEigen(ChainEigenCmd),
    /// List compiled-in model presets.
    ListPresets,
}

#[derive(Args)]
struct Shared {
    /// Compiled-in model preset, e.g. cp1 or hirzebruch1.
    #[arg(long)]
    preset: Option<String>,
    /// TOML config file.
    #[arg(long)]
    config: Option<String>,
    /// Write per-point rows to this CSV file.
    #[arg(long)]
    out_csv: Option<String>,
    /// Write the JSON summary to this file as well as stdout.
    #[arg(long)]
    out_json: Option<String>,
    /// Worker threads for sampling experiments (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Random seed; required for any experiment that samples.
    #[arg(long)]
    seed: Option<u64>,
    /// Assertion tolerance override.
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Args)]
struct PsiCmd {
    #[command(flatten)]
    shared: Shared,
    /// Experiment: psi-grid or psi-cross-check (default psi-grid).
    #[arg(long)]
    experiment: Option<String>,
    /// Number of random stable points.
    #[arg(long)]
    samples: Option<u32>,
}

#[derive(Args)]
struct NormsCmd {
    #[command(flatten)]
    shared: Shared,
    /// Tensor power of the line bundle.
    #[arg(long)]
    k: Option<u32>,
}

#[derive(Args)]
struct AsymptoticsCmd {
    #[command(flatten)]
    shared: Shared,
    /// Experiment: halfform, laplace, moments, or dos.
    #[arg(long)]
    experiment: Option<String>,
    /// Grid spec start:stop:step or start:stop:*factor.
    #[arg(long, visible_aliases = ["k", "lambda", "n"])]
    grid: Option<String>,
    /// Moment order for the moments experiment.
    #[arg(long, visible_alias = "l")]
    order: Option<u32>,
    /// Interior ray as comma-separated rationals, e.g. 1/2,2,1/2,1/2.
    #[arg(long)]
    ray: Option<String>,
    /// Observable for the dos experiment: 1, t, or q<i>, optional ^<p>.
    #[arg(long)]
    observable: Option<String>,
    /// Also run the upstairs-to-downstairs transfer comparison.
    #[arg(long)]
    transfer: bool,
}

#[derive(Args)]
struct MatrixPsiCmd {
    #[command(flatten)]
    shared: Shared,
    /// Family: grassmannian, chain, or polygon.
    #[arg(long)]
    family: Option<String>,
    /// Number of random points.
    #[arg(long)]
    samples: Option<u32>,
}

#[derive(Args)]
struct ChainEigenCmd {
    #[command(flatten)]
    shared: Shared,
    /// Number of generated level points.
    #[arg(long)]
    samples: Option<u32>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(CliError::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Numerical(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}

fn dispatch(cli: Cli) -> Result<bool, CliError> {
    let logger = Logger::from_env();
    match cli.command {
        Command::ListPresets => {
            for (name, what) in preset_listing() {
                println!("{name:<16} {what}");
            }
            Ok(true)
        }
        Command::Psi(cmd) => {
            let (cfg, result) = run_psi_cmd(&cmd, &logger)?;
            emit(&cmd.shared, &load(&cmd.shared)?, &cfg, &result, &logger)
        }
        Command::Norms(cmd) => {
            let (cfg, result) = run_norms_cmd(&cmd, &logger)?;
            emit(&cmd.shared, &load(&cmd.shared)?, &cfg, &result, &logger)
        }
        Command::Asymptotics(cmd) => {
            let (cfg, result) = run_asymptotics_cmd(&cmd, &logger)?;
            emit(&cmd.shared, &load(&cmd.shared)?, &cfg, &result, &logger)
        }
        Command::MatrixPsi(cmd) => {
            let (cfg, result) = run_matrix_psi_cmd(&cmd, &logger)?;
            emit(&cmd.shared, &load(&cmd.shared)?, &cfg, &result, &logger)
        }
        Command::ChainEigen(cmd) => {
            let (cfg, result) = run_chain_eigen_cmd(&cmd, &logger)?;
            emit(&cmd.shared, &load(&cmd.shared)?, &cfg, &result, &logger)
        }
    }
}

fn load(shared: &Shared) -> Result<FileConfig, CliError> {
    match &shared.config {
        Some(path) => load_file_config(path),
        None => Ok(FileConfig::default()),
    }
}

fn require_seed(seed: Option<u64>) -> Result<u64, CliError> {
    seed.ok_or_else(|| CliError::Config("seed: required for sampling experiments".into()))
}

fn positive_tol(tol: f64) -> Result<f64, CliError> {
    if tol > 0.0 && tol.is_finite() {
        Ok(tol)
    } else {
        Err(CliError::Config(format!("tol: must be positive (got {tol})")))
    }
}

/// Run a closure on a dedicated thread pool when --jobs is given; otherwise
/// the global pool is used. The output never depends on the thread count.
fn with_pool<T: Send>(
    jobs: Option<usize>,
    f: impl FnOnce() -> Result<T, CliError> + Send,
) -> Result<T, CliError> {
    match jobs {
        None => f(),
        Some(j) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(j)
                .build()
                .map_err(|e| CliError::Config(format!("jobs: {e}")))?;
            pool.install(f)
        }
    }
}

fn emit(
    shared: &Shared,
    file: &FileConfig,
    cfg: &ResolvedConfig,
    result: &ExperimentResult,
    logger: &Logger,
) -> Result<bool, CliError> {
    let out = file.output.clone().unwrap_or_default();
    let summary = summary_json(cfg, result);
    let mut json_text =
        serde_json::to_string_pretty(&summary).expect("summary serialization cannot fail");
    json_text.push('\n');
    if let Some(path) = shared.out_csv.clone().or(out.csv) {
        write_atomic(&path, result.csv.to_text().as_bytes())?;
        logger.info(&format!("wrote {path}"));
    }
    if let Some(path) = shared.out_json.clone().or(out.json) {
        write_atomic(&path, json_text.as_bytes())?;
        logger.info(&format!("wrote {path}"));
    }
    print!("{json_text}");
    for a in &result.assertions {
        let line = format!("assertion {}: {}", a.name, a.detail);
        if a.passed {
            logger.debug(&line);
        } else {
            logger.warn(&line);
        }
    }
    Ok(result.passed())
}

fn build_polytope(ws: &stabfn_core::geometry::WeightSystem) -> Result<DelzantPolytope, CliError> {
    DelzantPolytope::new(ws).map_err(|e| CliError::Config(format!("model: {e}")))
}

fn run_psi_cmd(
    cmd: &PsiCmd,
    logger: &Logger,
) -> Result<(ResolvedConfig, ExperimentResult), CliError> {
    let file = load(&cmd.shared)?;
    let exp = file.experiment.clone().unwrap_or_default();
    let name = cmd
        .experiment
        .clone()
        .or(exp.name)
        .unwrap_or_else(|| "psi-grid".into());
    let cross = match name.as_str() {
        "psi-grid" => false,
        "psi-cross-check" => true,
        other => {
            return Err(CliError::Config(format!(
                "experiment: \"{other}\" is not one of psi-grid, psi-cross-check"
            )))
        }
    };
    let (ws, model) = resolve_model(cmd.shared.preset.as_deref(), &file)?;
    let poly = build_polytope(&ws)?;
    let samples = cmd.samples.or(exp.samples).unwrap_or(50);
    let seed = require_seed(cmd.shared.seed.or(exp.seed))?;
    let tol = positive_tol(cmd.shared.tol.or(exp.tol).unwrap_or(1e-8))?;
    logger.info(&format!("{name}: {samples} samples, seed {seed}"));
    let preset_name = model.preset.clone();
    let result = with_pool(cmd.shared.jobs, || {
        experiments::run_psi(&poly, preset_name.as_deref(), samples, seed, tol, cross)
    })?;
    let cfg = ResolvedConfig {
        experiment: name,
        model: Some(model),
        samples: Some(samples),
        seed: Some(seed),
        tol,
        jobs: cmd.shared.jobs,
        ..Default::default()
    };
    Ok((cfg, result))
}

fn run_norms_cmd(
    cmd: &NormsCmd,
    logger: &Logger,
) -> Result<(ResolvedConfig, ExperimentResult), CliError> {
    let file = load(&cmd.shared)?;
    let exp = file.experiment.clone().unwrap_or_default();
    let (ws, model) = resolve_model(cmd.shared.preset.as_deref(), &file)?;
    let poly = build_polytope(&ws)?;
    let k = cmd.k.or(exp.k).unwrap_or(3);
    let tol = positive_tol(cmd.shared.tol.or(exp.tol).unwrap_or(1e-10))?;
    logger.info(&format!("norms: power {k}"));
    let result = experiments::run_norms(&poly, k, tol)?;
    let cfg = ResolvedConfig {
        experiment: "norms".into(),
        model: Some(model),
        tol,
        k: Some(k),
        ..Default::default()
    };
    Ok((cfg, result))
}

fn run_asymptotics_cmd(
    cmd: &AsymptoticsCmd,
    logger: &Logger,
) -> Result<(ResolvedConfig, ExperimentResult), CliError> {
    let file = load(&cmd.shared)?;
    let exp = file.experiment.clone().unwrap_or_default();
    let name = cmd.experiment.clone().or(exp.name).ok_or_else(|| {
        CliError::Config("experiment: missing; expected one of halfform, laplace, moments, dos".into())
    })?;
    let (ws, model) = resolve_model(cmd.shared.preset.as_deref(), &file)?;
    let poly = build_polytope(&ws)?;
    let d = ws.d();
    let default_grid = match name.as_str() {
        "halfform" => "4:64:*2",
        "laplace" => "25:200:*2",
        // Lattice moments need n * ray integral; powers divisible by 24 work
        // for every preset's barycenter ray.
        "moments" => "24:192:*2",
        // Counting lattice sections grows like n^rank, so surfaces get a
        // shorter default grid than curves.
        "dos" => {
            if ws.torus_rank() == 1 {
                "12:96:*2"
            } else {
                "10:20:2"
            }
        }
        other => {
            return Err(CliError::Config(format!(
                "experiment: \"{other}\" is not one of halfform, laplace, moments, dos"
            )))
        }
    };
    let grid_spec = cmd
        .grid
        .clone()
        .or(exp.grid)
        .unwrap_or_else(|| default_grid.into());
    let grid = parse_grid(&grid_spec)?;
    let ray_strings: Option<Vec<String>> = cmd
        .ray
        .clone()
        .map(|s| s.split(',').map(|t| t.trim().to_string()).collect())
        .or(exp.ray);
    let ray: Vec<Rat> = match &ray_strings {
        Some(parts) => parts
            .iter()
            .map(|p| parse_rational(p))
            .collect::<Result<_, _>>()?,
        None => barycenter_ray(&poly),
    };
    if ray.len() != d {
        return Err(CliError::Config(format!(
            "ray: expected {d} coordinates, got {}",
            ray.len()
        )));
    }
    let ray_echo: Vec<String> = ray.iter().map(|r| r.to_string()).collect();
    let transfer = cmd.transfer || exp.transfer == Some(true);
    let mut cfg = ResolvedConfig {
        experiment: name.clone(),
        model: Some(model),
        grid: Some(grid.clone()),
        jobs: cmd.shared.jobs,
        ..Default::default()
    };
    logger.info(&format!("{name}: grid {grid_spec}"));
    let result = match name.as_str() {
        "halfform" => {
            let ks = integer_grid(&grid)?;
            let tol = positive_tol(cmd.shared.tol.or(exp.tol).unwrap_or(1e-3))?;
            cfg.tol = tol;
            cfg.ray = Some(ray_echo);
            experiments::run_halfform(&poly, &ray, &ks, tol)?
        }
        "laplace" => {
            let seed = require_seed(cmd.shared.seed.or(exp.seed))?;
            let tol = positive_tol(cmd.shared.tol.or(exp.tol).unwrap_or(1e-8))?;
            cfg.tol = tol;
            cfg.seed = Some(seed);
            with_pool(cmd.shared.jobs, || {
                experiments::run_laplace(&poly, &grid, seed, tol)
            })?
        }
        "moments" => {
            let ns = integer_grid(&grid)?;
            let l = cmd.order.or(exp.l).unwrap_or(2);
            let tol = positive_tol(cmd.shared.tol.or(exp.tol).unwrap_or(1e-8))?;
            cfg.tol = tol;
            cfg.l = Some(l);
            cfg.ray = Some(ray_echo);
            cfg.transfer = Some(transfer);
            experiments::run_moments(&poly, &ray, l, &ns, transfer, tol)?
        }
        "dos" => {
            let ns = integer_grid(&grid)?;
            let obs = cmd
                .observable
                .clone()
                .or(exp.observable)
                .unwrap_or_else(|| "t".into());
            let f = parse_observable(&obs, d)?;
            let tol = positive_tol(cmd.shared.tol.or(exp.tol).unwrap_or(1e-4))?;
            cfg.tol = tol;
            cfg.observable = Some(obs);
            cfg.ray = Some(ray_echo);
            cfg.transfer = Some(transfer);
            experiments::run_dos(&poly, &f, &ns, &ray, transfer, tol)?
        }
        _ => unreachable!(),
    };
    Ok((cfg, result))
}

fn run_matrix_psi_cmd(
    cmd: &MatrixPsiCmd,
    logger: &Logger,
) -> Result<(ResolvedConfig, ExperimentResult), CliError> {
    let file = load(&cmd.shared)?;
    let exp = file.experiment.clone().unwrap_or_default();
    let mut section = file.matrix.clone().unwrap_or_default();
    if let Some(f) = cmd.family.clone() {
        section.family = Some(f);
    }
    let samples = cmd.samples.or(exp.samples).unwrap_or(20);
    let seed = require_seed(cmd.shared.seed.or(exp.seed))?;
    let tol = positive_tol(cmd.shared.tol.or(exp.tol).unwrap_or(1e-8))?;
    logger.info(&format!(
        "matrix-psi: family {}, {samples} samples, seed {seed}",
        section.family.as_deref().unwrap_or("grassmannian")
    ));
    let result = with_pool(cmd.shared.jobs, || {
        experiments::run_matrix_psi(&section, samples, seed, tol)
    })?;
    let cfg = ResolvedConfig {
        experiment: "matrix-psi".into(),
        matrix: Some(section),
        samples: Some(samples),
        seed: Some(seed),
        tol,
        jobs: cmd.shared.jobs,
        ..Default::default()
    };
    Ok((cfg, result))
}

fn run_chain_eigen_cmd(
    cmd: &ChainEigenCmd,
    logger: &Logger,
) -> Result<(ResolvedConfig, ExperimentResult), CliError> {
    let file = load(&cmd.shared)?;
    let exp = file.experiment.clone().unwrap_or_default();
    let section = file.matrix.clone().unwrap_or_default();
    let samples = cmd.samples.or(exp.samples).unwrap_or(20);
    let seed = require_seed(cmd.shared.seed.or(exp.seed))?;
    let tol = positive_tol(cmd.shared.tol.or(exp.tol).unwrap_or(1e-10))?;
    logger.info(&format!("chain-eigen: {samples} samples, seed {seed}"));
    let result = with_pool(cmd.shared.jobs, || {
        experiments::run_chain_eigen(&section, samples, seed, tol)
    })?;
    let cfg = ResolvedConfig {
        experiment: "chain-eigen".into(),
        matrix: Some(section),
        samples: Some(samples),
        seed: Some(seed),
        tol,
        jobs: cmd.shared.jobs,
        ..Default::default()
    };
    Ok((cfg, result))
}
