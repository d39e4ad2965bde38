use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use hdsa_core::calibration::{assemble_sensitivity, calibrate, posterior_optimum_ensemble};
use hdsa_core::discrepancy::CalibrationDataset;
use hdsa_core::hyper_init::{initialize, InitOptions};
use hdsa_core::scenario::{ProblemKind, Scenario, ScenarioConfig};
use hdsa_core::studio::{Session, View};
use hdsa_studio::{router, AppState};
use serde_json::{json, Value};

type CliResult<T> = Result<T, Box<dyn std::error::Error>>;

#[derive(Parser)]
#[command(name = "hdsa", about = "Discrepancy priors for optimization under model error")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario JSON file; overrides --problem and --n-space.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long, default_value = "stationary-1d")]
    problem: String,
    #[arg(long, default_value_t = 65)]
    n_space: usize,
}

impl ScenarioArgs {
    fn load(&self) -> CliResult<ScenarioConfig> {
        if let Some(path) = &self.scenario {
            return Ok(serde_json::from_str(&fs::read_to_string(path)?)?);
        }
        let problem: ProblemKind = serde_json::from_value(Value::String(self.problem.clone()))?;
        Ok(ScenarioConfig::new(problem, self.n_space))
    }
}

#[derive(Args)]
struct InitArgs {
    #[arg(long)]
    delta_kappa: Option<f64>,
    #[arg(long, default_value_t = 200)]
    mc_gamma: usize,
    #[arg(long, default_value_t = 10_000)]
    mc_eig: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl InitArgs {
    fn options(&self) -> InitOptions {
        InitOptions {
            delta_kappa: self.delta_kappa,
            mc_gamma: self.mc_gamma,
            mc_eig: self.mc_eig,
            seed: self.seed,
            ..InitOptions::default()
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Initialize hyper-parameters from a dataset.
    InitHyper {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Dataset JSON; generated from the scenario when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        #[command(flatten)]
        init: InitArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Data generation, initialization, calibration and the optimum ensemble.
    Run {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[command(flatten)]
        init: InitArgs,
        /// Posterior ensemble size.
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Serve the sample review API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
    /// Generate a sample dataset and write the overview and snapshot.
    Sample {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value_t = 200)]
        q: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn write_json(path: &Path, value: &Value) -> CliResult<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn init_hyper(scenario: ScenarioArgs, data: Option<PathBuf>, init: InitArgs, out: Option<PathBuf>) -> CliResult<()> {
    let sc = Scenario::build(scenario.load()?)?;
    let data = match data {
        Some(p) => CalibrationDataset::from_json(serde_json::from_str(&fs::read_to_string(p)?)?)?,
        None => sc.default_data()?,
    };
    let report = initialize(&data, sc.state().clone(), sc.control().clone(), sc.lowfi(), &init.options())?;
    let value = serde_json::to_value(&report.hyper)?;
    match out {
        Some(p) => write_json(&p, &value),
        None => {
            println!("{}", serde_json::to_string_pretty(&value)?);
            Ok(())
        }
    }
}

fn run(scenario: ScenarioArgs, init: InitArgs, n: usize, out: PathBuf) -> CliResult<()> {
    let config = scenario.load()?;
    let seed = config.seed;
    let sc = Arc::new(Scenario::build(config)?);
    let data = sc.default_data()?;
    let report = initialize(&data, sc.state().clone(), sc.control().clone(), sc.lowfi(), &init.options())?;
    let session = Session::from_parts(sc.clone(), data.clone(), report.hyper.clone(), Some(report))?;
    let problem = sc.lowfi_problem()?;
    let sens = assemble_sensitivity(&problem, data.z_tilde())?;
    let post = calibrate(Some(&data), session.prior())?;
    let ensemble = posterior_optimum_ensemble(&sens, &post, n, seed)?;
    let hifi = sc.highfi_problem()?.solve_optimum()?;
    fs::create_dir_all(&out)?;
    write_json(&out.join("hyperparams.json"), &serde_json::to_value(session.hyper())?)?;
    write_json(&out.join("dataset.json"), &data.to_json())?;
    write_json(
        &out.join("ensemble.json"),
        &json!({
            "z_tilde": data.z_tilde().as_slice(),
            "samples": ensemble.iter().map(|z| z.as_slice().to_vec()).collect::<Vec<_>>(),
            "hifi_optimum": hifi.as_slice(),
        }),
    )?;
    println!("wrote hyperparams.json, dataset.json and ensemble.json to {}", out.display());
    Ok(())
}

fn sample(scenario: ScenarioArgs, q: usize, seed: u64, out: PathBuf) -> CliResult<()> {
    let mut session = Session::create(scenario.load()?, &InitOptions::default())?;
    session.generate_samples(Some(q), Some(seed))?;
    let doc = json!({
        "snapshot": session.export(),
        "overview": {
            "control": session.overview(View::Control)?,
            "state": session.overview(View::State)?,
        },
    });
    write_json(&out, &doc)?;
    println!("wrote {} records to {}", session.samples().map_or(0, |d| d.n_records()), out.display());
    Ok(())
}

async fn serve(host: String, port: u16) -> CliResult<()> {
    let listener = tokio::net::TcpListener::bind((host.as_str(), port)).await?;
    println!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(AppState::new(InitOptions::default()))).await?;
    Ok(())
}

#[tokio::main]
async fn main() {
    let result = match Cli::parse().command {
        Command::InitHyper {
            scenario,
            data,
            init,
            out,
        } => init_hyper(scenario, data, init, out),
        Command::Run { scenario, init, n, out } => run(scenario, init, n, out),
        Command::Serve { port, host } => serve(host, port).await,
        Command::Sample { scenario, q, seed, out } => sample(scenario, q, seed, out),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
