//! The `planit` command line.

use crate::api::{self, AppState};
use crate::store::{self, DataStore, StoreError};
use clap::{Parser, Subcommand, ValueEnum};
use planit_core::affordance::ModelParameters;
use planit_core::costmap::{rasterize, CostMapError, DEFAULT_RESOLUTION};
use planit_core::em::{self, EMConfig, EmError};
use planit_core::eval::{evaluate, evaluate_chance, BaselineKind, EvalError, EvalRow, Scorer};
use planit_core::geometry::Vec2;
use planit_core::io;
use planit_core::planner::{plan, PlanError, PlanRequest};
use planit_core::synth::{reference_parameters, EnvironmentConfig, FeedbackConfig, SyntheticSuite};
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::str::FromStr;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

/// Draws averaged into the chance row of `eval`.
pub const CHANCE_DRAWS: usize = 100;

#[derive(Debug, Parser)]
#[command(name = "planit", version, about = "Learn human-activity planning costs and plan with them")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a data directory and write its index.
    Ingest { dir: PathBuf },
    /// Generate synthetic environments, trajectories and labels.
    Synth {
        #[arg(long)]
        envs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Environment id prefix.
        #[arg(long, default_value = "env-")]
        prefix: String,
        /// Trajectories per environment.
        #[arg(long, default_value_t = FeedbackConfig::default().trajectories)]
        trajectories: usize,
        /// Probability of a randomly flipped label.
        #[arg(long, default_value_t = FeedbackConfig::default().p_noise)]
        p_noise: f64,
    },
    /// Fit a model to the bad-labeled segments of a data directory.
    Train {
        #[arg(long, env = "PLANIT_DATA_DIR")]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = EMConfig::default().max_iters)]
        max_iters: usize,
        #[arg(long, default_value_t = EMConfig::default().tol)]
        tol: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = EMConfig::default().restarts)]
        restarts: usize,
        /// Also write the per-iteration log-likelihood trace (TSV).
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Score labeled trajectories and write the metrics table.
    Eval {
        #[arg(long, env = "PLANIT_DATA_DIR")]
        data: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        /// `all`, `none` or a comma-separated list of chance, mcp, mcc, hic, hicmcc.
        #[arg(long, default_value = "all")]
        baselines: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Plan a trajectory through the learned cost map.
    Plan {
        #[arg(long, env = "PLANIT_DATA_DIR")]
        data: PathBuf,
        #[arg(long)]
        env: String,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_parser = parse_point)]
        start: Vec2,
        #[arg(long, value_parser = parse_point)]
        goal: Vec2,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
        res: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rasterize the learned cost of one environment.
    Heatmap {
        #[arg(long, env = "PLANIT_DATA_DIR")]
        data: PathBuf,
        #[arg(long)]
        env: String,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
        res: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = HeatmapFormat::Grid)]
        format: HeatmapFormat,
    },
    /// Serve the HTTP API over a data directory.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, env = "PLANIT_DATA_DIR")]
        data: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum HeatmapFormat {
    Grid,
    Json,
}

fn parse_point(s: &str) -> Result<Vec2, String> {
    let (x, y) = s.split_once(',').ok_or_else(|| format!("expected `x,y`, got `{s}`"))?;
    let p = |v: &str| f64::from_str(v.trim()).map_err(|e| format!("`{v}`: {e}"));
    Ok(Vec2::new(p(x)?, p(y)?))
}

/// A failed command with the exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn validation(message: impl ToString) -> Self {
        CliError { code: EXIT_VALIDATION, message: message.to_string() }
    }

    fn runtime(message: impl ToString) -> Self {
        CliError { code: EXIT_RUNTIME, message: message.to_string() }
    }
}

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        if e.is_validation() { CliError::validation(e) } else { CliError::runtime(e) }
    }
}

impl From<EmError> for CliError {
    fn from(e: EmError) -> Self {
        match e {
            EmError::AllZeroDensity(_) => CliError::runtime(e),
            _ => CliError::validation(e),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::validation(e)
    }
}

impl From<CostMapError> for CliError {
    fn from(e: CostMapError) -> Self {
        CliError::validation(e)
    }
}

impl From<PlanError> for CliError {
    fn from(e: PlanError) -> Self {
        match e {
            PlanError::NoPathFound(_) => CliError::runtime(e),
            PlanError::InvalidRequest(_) => CliError::validation(e),
        }
    }
}

/// Parses `args` (program name first) and runs the command. Returns the exit code.
pub fn main_with<I, T>(args: I, stdout: &mut dyn std::io::Write, stderr: &mut dyn std::io::Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(stderr, "{text}");
            } else {
                let _ = write!(stdout, "{text}");
            }
            return code;
        }
    };
    match run(cli.command, stdout, stderr) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {}", e.message);
            e.code
        }
    }
}

fn environment(store: &DataStore, id: &str) -> Result<planit_core::env::Environment, CliError> {
    store.environments.get(id).cloned().ok_or_else(|| CliError::validation(format!("unknown environment `{id}`")))
}

fn load_model(path: &Path) -> Result<ModelParameters, CliError> {
    Ok(store::load_model(path)?)
}

pub fn run(command: Command, stdout: &mut dyn std::io::Write, stderr: &mut dyn std::io::Write) -> Result<(), CliError> {
    match command {
        Command::Ingest { dir } => {
            let store = DataStore::open(&dir)?;
            let path = store.write_index()?;
            let _ = writeln!(
                stdout,
                "{} environments, {} trajectories, {} labels; index written to {}",
                store.environments.len(),
                store.trajectories.len(),
                store.labels.len(),
                path.display()
            );
        }
        Command::Synth { envs, seed, out, prefix, trajectories, p_noise } => {
            if !(0.0..=1.0).contains(&p_noise) {
                return Err(CliError::validation("--p-noise must lie in [0, 1]"));
            }
            let fb = FeedbackConfig { trajectories, p_noise, ..FeedbackConfig::default() };
            let suite = SyntheticSuite::generate(envs, &prefix, seed, &reference_parameters(), &EnvironmentConfig::default(), &fb)
                .map_err(CliError::runtime)?;
            store::write_suite(&out, &suite)?;
            let _ = writeln!(
                stdout,
                "wrote {} environments, {} trajectories, {} labels to {}",
                suite.environments.len(),
                suite.trajectories.len(),
                suite.labels.len(),
                out.display()
            );
        }
        Command::Train { data, out, max_iters, tol, seed, restarts, trace } => {
            if !(tol.is_finite() && tol >= 0.0) {
                return Err(CliError::validation("--tol must be finite and >= 0"));
            }
            let store = DataStore::open(&data)?;
            let set = store.training_set()?;
            let config = EMConfig { max_iters, tol, seed, restarts, ..EMConfig::default() };
            let (params, tr) = em::fit(&set, &config)?;
            store::save_model(&out, &params)?;
            if let Some(path) = trace {
                store::write_file(&path, tr.to_tsv())?;
            }
            let _ = writeln!(
                stderr,
                "{} waypoints, {} iterations, avg log-likelihood {:.6} -> {:.6}{}",
                set.waypoint_count(),
                params.iteration_count,
                tr.avg_log_likelihood[0],
                tr.final_avg_log_likelihood(),
                if tr.converged { "" } else { " (not converged)" }
            );
            for w in &tr.warnings {
                log::warn!("{w:?}");
            }
        }
        Command::Eval { data, model, baselines, out, seed } => {
            let store = DataStore::open(&data)?;
            let kinds = parse_baselines(&baselines)?;
            let envs = store.environment_list();
            let trajs = store.trajectory_list();
            let truths = store.truths();
            let mut rows: Vec<EvalRow> = Vec::new();
            if let Some(path) = model {
                let params = load_model(&path)?;
                rows.push(evaluate(&envs, &trajs, &truths, &Scorer::Learned(&params))?);
            }
            for k in kinds {
                rows.push(match k {
                    BaselineKind::Chance => evaluate_chance(&envs, &trajs, &truths, seed, CHANCE_DRAWS)?,
                    _ => evaluate(&envs, &trajs, &truths, &Scorer::Baseline(k, seed))?,
                });
            }
            let mut csv = String::from(EvalRow::CSV_HEADER);
            csv.push('\n');
            for r in &rows {
                csv.push_str(&r.to_csv());
                csv.push('\n');
            }
            match out {
                Some(path) => store::write_file(&path, csv)?,
                None => {
                    let _ = write!(stdout, "{csv}");
                }
            }
        }
        Command::Plan { data, env, model, start, goal, seed, res, out } => {
            let store = DataStore::open(&data)?;
            let env = environment(&store, &env)?;
            let params = load_model(&model)?;
            let map = rasterize(&env, &params, res)?;
            let traj = plan(&map, &PlanRequest::new(start, goal, seed), &env.id)?;
            let text = io::to_pretty(&traj);
            match out {
                Some(path) => store::write_file(&path, text)?,
                None => {
                    let _ = write!(stdout, "{text}");
                }
            }
        }
        Command::Heatmap { data, env, model, res, out, format } => {
            let store = DataStore::open(&data)?;
            let env = environment(&store, &env)?;
            let params = load_model(&model)?;
            let map = rasterize(&env, &params, res)?;
            match format {
                HeatmapFormat::Grid => store::write_file(&out, map.encode())?,
                HeatmapFormat::Json => store::write_file(&out, io::to_pretty(&api::HeatmapJson::from(&map)))?,
            }
        }
        Command::Serve { port, host, data } => {
            let store = DataStore::open(&data)?;
            let state = AppState::new(store, EMConfig::default())?;
            let addr: std::net::SocketAddr =
                format!("{host}:{port}").parse().map_err(|e| CliError::validation(format!("bad address: {e}")))?;
            let rt = tokio::runtime::Runtime::new().map_err(CliError::runtime)?;
            rt.block_on(api::serve(state, addr)).map_err(CliError::runtime)?;
        }
    }
    Ok(())
}

fn parse_baselines(arg: &str) -> Result<Vec<BaselineKind>, CliError> {
    match arg {
        "all" => Ok(BaselineKind::ALL.to_vec()),
        "none" | "" => Ok(Vec::new()),
        list => list.split(',').map(|s| BaselineKind::from_str(s.trim()).map_err(CliError::validation)).collect(),
    }
}
