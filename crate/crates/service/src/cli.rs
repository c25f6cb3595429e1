//! The `reactor` command line.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use reactor_core::registry::parse_config;
use reactor_core::{Event, SessionStatus, ToolDescriptor};
use reactor_harness::scenario::{run_scenario_blocking, Scenario};

use crate::api;
use crate::client::{Client, ClientError, DEFAULT_SERVER};
use crate::config::ServiceConfig;
use crate::engine::{Engine, TaskView};
use crate::render::{render_event, ColorChoice};
use crate::taskfile::TaskFile;

#[derive(Debug, Parser)]
#[command(name = "reactor", version, about = "ReAct tool orchestration: service, one-shot runs and experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Start the HTTP service.
    Serve {
        /// Service config (TOML).
        #[arg(long, short)]
        config: Option<PathBuf>,
        /// Overrides the configured listen address.
        #[arg(long)]
        listen: Option<String>,
    },
    /// Run one task file and print its trace, then the answer.
    Run {
        taskfile: PathBuf,
        /// Service config for the in-process engine.
        #[arg(long, short, conflicts_with = "server")]
        config: Option<PathBuf>,
        /// Submit to a running service instead of running in-process.
        #[arg(long)]
        server: Option<String>,
        #[arg(long, value_enum, default_value_t)]
        color: ColorChoice,
    },
    /// Inspect or change a running service's tool registry.
    Registry {
        #[arg(long, env = "REACTOR_SERVER", default_value = DEFAULT_SERVER, global = true)]
        server: String,
        #[command(subcommand)]
        op: RegistryOp,
    },
    /// Print a session's event stream, one line per event.
    Tail {
        session_id: String,
        #[arg(long, env = "REACTOR_SERVER", default_value = DEFAULT_SERVER)]
        server: String,
        /// First sequence number to print.
        #[arg(long, default_value_t = 0)]
        from: u64,
        #[arg(long, value_enum, default_value_t)]
        color: ColorChoice,
    },
    /// Run an experiment scenario on a virtual clock.
    Simulate {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Print the full report as JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Subcommand)]
pub enum RegistryOp {
    /// Register the descriptor (or list of descriptors) in a JSON file.
    Add { file: PathBuf },
    /// Deregister a tool.
    Rm { name: String },
    /// List registered tools.
    Ls,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error(transparent)]
    Engine(#[from] crate::engine::EngineError),
    #[error(transparent)]
    TaskFile(#[from] crate::taskfile::TaskFileError),
    #[error(transparent)]
    Scenario(#[from] reactor_harness::scenario::ScenarioError),
    #[error("{0}")]
    Submit(#[from] crate::engine::SubmitError),
    #[error("{0}")]
    Other(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub const EXIT_OK: i32 = 0;
/// The session or scenario ran and failed.
pub const EXIT_FAILED: i32 = 1;
/// The command could not be carried out.
pub const EXIT_ERROR: i32 = 2;

/// Parses `args` and runs the command on a fresh runtime.
pub fn main_with_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { err.write_all(text.as_bytes()) } else { out.write_all(text.as_bytes()) };
            return code;
        }
    };
    let runtime = match tokio::runtime::Builder::new_multi_thread().enable_all().build() {
        Ok(rt) => rt,
        Err(e) => {
            let _ = writeln!(err, "error: starting runtime: {e}");
            return EXIT_ERROR;
        }
    };
    match runtime.block_on(execute(cli.command, out)) {
        Ok(code) => code,
        Err(CliError::Io(e)) if e.kind() == std::io::ErrorKind::BrokenPipe => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_ERROR
        }
    }
}

pub async fn execute(command: Command, out: &mut dyn Write) -> Result<i32, CliError> {
    match command {
        Command::Serve { config, listen } => serve(config.as_deref(), listen, out).await,
        Command::Run { taskfile, config, server, color } => {
            let styled = color.enabled();
            match server {
                Some(server) => run_remote(&taskfile, &Client::new(server), styled, out).await,
                None => run_local(&taskfile, config.as_deref(), styled, out).await,
            }
        }
        Command::Registry { server, op } => registry(&Client::new(server), op, out).await,
        Command::Tail { session_id, server, from, color } => {
            let styled = color.enabled();
            let mut failed = None;
            Client::new(server)
                .follow(&session_id, from, |e| {
                    if let Err(e) = writeln!(out, "{}", render_event(&e, styled)) {
                        failed.get_or_insert(e);
                    }
                })
                .await?;
            failed.map_or(Ok(EXIT_OK), |e| Err(e.into()))
        }
        Command::Simulate { scenario, seed, json } => {
            let text = simulate(&scenario, seed, json).await?;
            out.write_all(text.0.as_bytes())?;
            Ok(if text.1 { EXIT_OK } else { EXIT_FAILED })
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<ServiceConfig, CliError> {
    Ok(match path {
        Some(path) => ServiceConfig::from_file(path)?,
        None => ServiceConfig::default(),
    })
}

async fn serve(config: Option<&Path>, listen: Option<String>, out: &mut dyn Write) -> Result<i32, CliError> {
    let mut config = load_config(config)?;
    if let Some(listen) = listen {
        config.listen = listen;
    }
    let listener = tokio::net::TcpListener::bind(&config.listen).await?;
    let engine = Engine::new(config)?;
    writeln!(out, "listening on http://{}", listener.local_addr()?)?;
    out.flush()?;
    let shutdown = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    api::serve(engine, listener, shutdown).await?;
    Ok(EXIT_OK)
}

fn finish(view: &TaskView, out: &mut dyn Write) -> Result<i32, CliError> {
    match view.status {
        SessionStatus::Done => {
            writeln!(out, "answer: {}", view.answer.as_deref().unwrap_or_default())?;
            Ok(EXIT_OK)
        }
        status => {
            let reason = view.error.as_deref().unwrap_or("session did not finish");
            writeln!(out, "session {} ({status:?}): {reason}", view.session_id)?;
            Ok(EXIT_FAILED)
        }
    }
}

fn print_event(event: &Event, styled: bool, out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(out, "{}", render_event(event, styled))
}

async fn run_local(taskfile: &Path, config: Option<&Path>, styled: bool, out: &mut dyn Write) -> Result<i32, CliError> {
    let file = TaskFile::load(taskfile)?;
    let mut config = load_config(config)?;
    for tools in &file.builtin_tools {
        if !config.builtin_tools.contains(tools) {
            config.builtin_tools.push(*tools);
        }
    }
    let engine = Engine::new(config)?;
    let accepted = engine.submit(file.to_submission()?)?;
    let mut events = engine
        .events()
        .subscribe(&accepted.session_id, 0)
        .map_err(|e| CliError::Other(e.to_string()))?;
    while let Some(event) = events.next().await {
        print_event(&event, styled, out)?;
    }
    let view = engine
        .wait(&accepted.session_id)
        .await
        .ok_or_else(|| CliError::Other(format!("session {} vanished", accepted.session_id)))?;
    finish(&view, out)
}

async fn run_remote(taskfile: &Path, client: &Client, styled: bool, out: &mut dyn Write) -> Result<i32, CliError> {
    let file = TaskFile::load(taskfile)?;
    let accepted = client.submit(&file.to_submission()?).await?;
    let mut write_error = None;
    client
        .follow(&accepted.session_id, 0, |e| {
            if let Err(e) = print_event(&e, styled, out) {
                write_error.get_or_insert(e);
            }
        })
        .await?;
    if let Some(e) = write_error {
        return Err(e.into());
    }
    let view = client.task(&accepted.session_id).await?;
    finish(&view, out)
}

/// `name  status  locality  max_parallel  endpoint`, one row per tool after
/// a header row.
pub fn tool_table(tools: &[ToolDescriptor]) -> String {
    let status = |d: &ToolDescriptor| serde_json::to_value(d.status).ok().and_then(|v| v.as_str().map(String::from));
    let locality = |d: &ToolDescriptor| serde_json::to_value(d.locality).ok().and_then(|v| v.as_str().map(String::from));
    let width = tools.iter().map(|t| t.name.len()).max().unwrap_or(0).max(4);
    let mut out = String::new();
    writeln!(out, "{:<width$}  {:<11}  {:<8}  {:>12}  ENDPOINT", "NAME", "STATUS", "LOCALITY", "MAX_PARALLEL").unwrap();
    for t in tools {
        writeln!(
            out,
            "{:<width$}  {:<11}  {:<8}  {:>12}  {}",
            t.name,
            status(t).unwrap_or_default(),
            locality(t).unwrap_or_default(),
            t.max_parallel,
            t.endpoint
        )
        .unwrap();
    }
    out
}

/// A descriptor object, a list of them, or `{"tools": [...]}`.
pub fn read_descriptors(path: &Path) -> Result<Vec<ToolDescriptor>, CliError> {
    let text = std::fs::read_to_string(path)?;
    if let Ok(one) = serde_json::from_str::<ToolDescriptor>(&text) {
        return Ok(vec![one]);
    }
    parse_config(&text).map_err(|e| CliError::Other(format!("{}: {e}", path.display())))
}

async fn registry(client: &Client, op: RegistryOp, out: &mut dyn Write) -> Result<i32, CliError> {
    match op {
        RegistryOp::Add { file } => {
            for descriptor in read_descriptors(&file)? {
                let stored = client.add_tool(&descriptor).await?;
                writeln!(out, "registered {}", stored.name)?;
            }
        }
        RegistryOp::Rm { name } => {
            client.remove_tool(&name).await?;
            writeln!(out, "removed {name}")?;
        }
        RegistryOp::Ls => {
            let mut tools = client.list_tools().await?;
            tools.sort_by(|a, b| a.name.cmp(&b.name));
            out.write_all(tool_table(&tools).as_bytes())?;
        }
    }
    Ok(EXIT_OK)
}

/// Report text and whether every check passed.
pub async fn simulate(path: &Path, seed: Option<u64>, json: bool) -> Result<(String, bool), CliError> {
    let mut scenario = Scenario::from_file(path)?;
    if let Some(seed) = seed {
        scenario = scenario.with_seed(seed);
    }
    let result = tokio::task::spawn_blocking(move || run_scenario_blocking(&scenario))
        .await
        .map_err(|e| CliError::Other(format!("scenario runner crashed: {e}")))??;
    let text = if json { result.to_json() + "\n" } else { result.to_table() };
    Ok((text, result.passed))
}
