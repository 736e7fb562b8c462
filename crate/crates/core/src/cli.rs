//! Command-line front end.

use std::collections::BTreeMap;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use edgemesh::clock::SystemClock;
use edgemesh::node::runtime::{serve_worker, WorkerSpec};
use edgemesh::node::{NodeConfig, NodeDaemon, NodeError};
use edgemesh::planner::{self, PlanError, PlanInstance};
use edgemesh::sim::{export_results, run_scenario, Scenario, SimError};
use serde_json::json;
use tracing_subscriber::EnvFilter;

#[derive(Debug, Parser)]
#[command(name = "edgemesh", version, about = "Energy-aware workload offloading for battery-powered edge nodes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a node daemon until terminated
    Node(NodeArgs),
    /// Run a scenario and write metrics, events, summary and plot
    Sim(SimArgs),
    /// Solve a placement instance exactly
    Plan(PlanArgs),
    /// Summarize the artifacts of a sim run
    Report(ReportArgs),
    /// Serve one workload (started by the subprocess and container runtimes)
    #[command(hide = true)]
    Workload(WorkloadArgs),
}

#[derive(Debug, Args)]
pub struct NodeArgs {
    /// Node configuration file (JSON)
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimArgs {
    /// Scenario file (JSON)
    #[arg(long, value_name = "PATH")]
    pub scenario: PathBuf,
    /// Directory for the artifacts; created if missing
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Overrides the scenario's seed
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    /// Instance file (JSON)
    #[arg(long, value_name = "PATH")]
    pub instance: PathBuf,
    /// Plan output (JSON); the per-slot CSV goes next to it. Prints to stdout when absent
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory written by `sim`
    #[arg(long = "in", value_name = "DIR")]
    pub input: PathBuf,
}

#[derive(Debug, Args)]
pub struct WorkloadArgs {
    #[arg(long, env = "EDGEMESH_WORKLOAD_ID")]
    pub workload_id: String,
    #[arg(long, env = "EDGEMESH_IMAGE")]
    pub image: String,
    #[arg(long, env = "EDGEMESH_SOURCE")]
    pub source: SocketAddr,
    #[arg(long, env = "EDGEMESH_SENSOR")]
    pub sensor: String,
    #[arg(long, env = "EDGEMESH_ACTUATOR")]
    pub actuator: String,
    #[arg(long, env = "EDGEMESH_SERVICE_TIME_MS")]
    pub service_time_ms: u64,
    #[arg(long, env = "EDGEMESH_BIND")]
    pub bind: SocketAddr,
}

/// A failure with its process exit status.
#[derive(Debug)]
pub struct Failure {
    pub category: &'static str,
    pub message: String,
}

impl Failure {
    fn new(category: &'static str, message: impl ToString) -> Self {
        Self {
            category,
            message: message.to_string(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.category {
            "ConfigInvalid" => 2,
            "ScenarioInvalid" => 3,
            "PlanInfeasible" => 4,
            _ => 5,
        }
    }

    /// One JSON line for stderr.
    pub fn line(&self) -> String {
        json!({ "error": self.category, "message": self.message }).to_string()
    }
}

impl From<NodeError> for Failure {
    fn from(e: NodeError) -> Self {
        match e {
            NodeError::ConfigInvalid(_) => Failure::new("ConfigInvalid", e),
            NodeError::Io(_) => Failure::new("IoError", e),
        }
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::ScenarioInvalid(_) => Failure::new("ScenarioInvalid", e),
            _ => Failure::new("IoError", e),
        }
    }
}

impl From<PlanError> for Failure {
    fn from(e: PlanError) -> Self {
        match e {
            PlanError::Infeasible(_) => Failure::new("PlanInfeasible", e),
            _ => Failure::new("ConfigInvalid", e),
        }
    }
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Failure + '_ {
    move |e| Failure::new("IoError", format!("{}: {e}", path.display()))
}

pub fn init_logging() {
    let filter = std::env::var("EDGEMESH_LOG").unwrap_or_else(|_| "info".into());
    let _ = tracing_subscriber::fmt()
        .json()
        .with_env_filter(EnvFilter::try_new(&filter).unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .try_init();
}

pub fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Node(args) => run_node(&args),
        Command::Sim(args) => run_sim(&args),
        Command::Plan(args) => run_plan(&args),
        Command::Report(args) => run_report(&args),
        Command::Workload(args) => run_workload(args),
    }
}

fn runtime() -> Result<tokio::runtime::Runtime, Failure> {
    tokio::runtime::Runtime::new().map_err(|e| Failure::new("IoError", e))
}

fn run_node(args: &NodeArgs) -> Result<(), Failure> {
    let config = NodeConfig::load(&args.config)?;
    runtime()?.block_on(async {
        let daemon = NodeDaemon::start(config, Arc::new(SystemClock)).await?;
        daemon.run_until_ctrl_c().await?;
        Ok(())
    })
}

fn run_sim(args: &SimArgs) -> Result<(), Failure> {
    let text = std::fs::read_to_string(&args.scenario)
        .map_err(|e| Failure::new("ScenarioInvalid", format!("{}: {e}", args.scenario.display())))?;
    let mut scenario = Scenario::from_json(&text)?;
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    let record = run_scenario(&scenario)?;
    let written = export_results(&record, &args.out)?;
    for path in written {
        println!("{}", path.display());
    }
    Ok(())
}

fn run_plan(args: &PlanArgs) -> Result<(), Failure> {
    let text = std::fs::read_to_string(&args.instance)
        .map_err(|e| Failure::new("ConfigInvalid", format!("{}: {e}", args.instance.display())))?;
    let instance = PlanInstance::from_json(&text)?;
    let plan = planner::solve_exact(&instance)?;
    let body = serde_json::to_string_pretty(&plan).expect("plan serializes");
    match &args.out {
        None => {
            // a closed pipe (`| head`) is not an error worth reporting
            let _ = writeln!(std::io::stdout().lock(), "{body}");
        }
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(io(dir))?;
            }
            std::fs::write(path, format!("{body}\n")).map_err(io(path))?;
            let csv_path = path.with_extension("csv");
            let file = std::fs::File::create(&csv_path).map_err(io(&csv_path))?;
            plan.write_csv(file).map_err(|e| Failure::new("IoError", e))?;
            println!("objective {}", plan.objective);
        }
    }
    Ok(())
}

#[derive(Debug, Default)]
struct NodeReport {
    slots: usize,
    final_battery_pct: f64,
    min_battery_pct: f64,
    mean_cpu_pct: f64,
    generated: u64,
    processed: u64,
}

fn run_report(args: &ReportArgs) -> Result<(), Failure> {
    let metrics = args.input.join("metrics.csv");
    let events = args.input.join("events.csv");
    let mut nodes: BTreeMap<String, NodeReport> = BTreeMap::new();
    let mut reader = csv::Reader::from_path(&metrics).map_err(|e| Failure::new("IoError", format!("{}: {e}", metrics.display())))?;
    for row in reader.records() {
        let row = row.map_err(|e| Failure::new("IoError", e))?;
        let field = |i: usize| row.get(i).unwrap_or_default();
        let num = |i: usize| field(i).parse::<f64>().unwrap_or(0.0);
        let node = nodes.entry(field(1).to_string()).or_insert_with(|| NodeReport {
            min_battery_pct: f64::INFINITY,
            ..NodeReport::default()
        });
        node.slots += 1;
        node.final_battery_pct = num(2);
        node.min_battery_pct = node.min_battery_pct.min(num(2));
        node.mean_cpu_pct += num(3);
        node.generated += num(5) as u64;
        node.processed += num(6) as u64;
    }
    for node in nodes.values_mut() {
        if node.slots > 0 {
            node.mean_cpu_pct /= node.slots as f64;
        }
    }
    let mut kinds: BTreeMap<String, usize> = BTreeMap::new();
    let mut reader = csv::Reader::from_path(&events).map_err(|e| Failure::new("IoError", format!("{}: {e}", events.display())))?;
    for row in reader.records() {
        let row = row.map_err(|e| Failure::new("IoError", e))?;
        *kinds.entry(row.get(3).unwrap_or_default().to_string()).or_default() += 1;
    }
    println!(
        "{:<12} {:>6} {:>10} {:>10} {:>8} {:>10} {:>10}",
        "node", "slots", "final_%", "min_%", "cpu_%", "generated", "processed"
    );
    for (id, n) in &nodes {
        println!(
            "{:<12} {:>6} {:>10.2} {:>10.2} {:>8.1} {:>10} {:>10}",
            id, n.slots, n.final_battery_pct, n.min_battery_pct, n.mean_cpu_pct, n.generated, n.processed
        );
    }
    println!();
    for (kind, count) in &kinds {
        println!("{kind:<12} {count}");
    }
    Ok(())
}

fn run_workload(args: WorkloadArgs) -> Result<(), Failure> {
    let spec = WorkerSpec {
        workload_id: args.workload_id,
        image_ref: args.image,
        source_service: args.source,
        sensor_id: args.sensor,
        actuator_id: args.actuator,
        service_time_ms: args.service_time_ms,
        bind_ip: args.bind.ip(),
    };
    runtime()?
        .block_on(serve_worker(spec, args.bind.port()))
        .map_err(|e| Failure::new("IoError", e))
}
