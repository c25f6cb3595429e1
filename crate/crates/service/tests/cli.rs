mod common;

use std::process::Command as Process;

use clap::Parser;
use reactor_core::observability::parse_sse;
use reactor_core::{Event, ToolDescriptor};
use reactor_service::cli::{execute, tool_table, Cli, EXIT_FAILED, EXIT_OK};
use reactor_service::config::ServiceConfig;
use reactor_service::render::render_event;
use reactor_service::{Engine, TaskView};

use common::*;

async fn cli(args: &[&str]) -> (i32, String) {
    let parsed = Cli::try_parse_from(std::iter::once("reactor").chain(args.iter().copied())).unwrap();
    let mut out = Vec::new();
    let code = execute(parsed.command, &mut out).await.unwrap();
    (code, String::from_utf8(out).unwrap())
}

async fn http_events(base: &str, id: &str) -> Vec<Event> {
    let body = reqwest::get(format!("{base}/tasks/{id}/events")).await.unwrap().text().await.unwrap();
    parse_sse(&body).iter().map(|f| f.to_event().unwrap()).collect()
}

fn bin() -> Process {
    Process::new(env!("CARGO_BIN_EXE_reactor"))
}

#[tokio::test(flavor = "multi_thread")]
async fn run_and_tail_match_the_http_stream() {
    let engine = Engine::new(documents_config()).unwrap();
    let base = serve(engine.clone()).await;
    let task = golden_task();
    let (code, out) = cli(&["run", "--color", "never", "--server", &base, task.to_str().unwrap()]).await;
    assert_eq!(code, EXIT_OK, "{out}");

    let events = http_events(&base, "task-1").await;
    let view: TaskView = reqwest::get(format!("{base}/tasks/task-1")).await.unwrap().json().await.unwrap();
    let mut expected: Vec<String> = events.iter().map(|e| render_event(e, false)).collect();
    expected.push(format!("answer: {}", view.answer.as_deref().unwrap()));
    assert_eq!(out.lines().collect::<Vec<_>>(), expected);
    assert!(out.trim_end().ends_with("about 13% higher than the $4.6M in Q1 2013."));
    assert_eq!(events, engine.events().history("task-1", 0).unwrap());
    assert_eq!(Some(view), engine.view("task-1"));

    let (code, tail) = cli(&["tail", "--color", "never", "--server", &base, "task-1"]).await;
    assert_eq!(code, EXIT_OK);
    assert_eq!(tail.lines().count(), events.len());
    assert_eq!(tail.lines().collect::<Vec<_>>(), expected[..events.len()]);
    let (_, from) = cli(&["tail", "--color", "never", "--server", &base, "--from", "10", "task-1"]).await;
    assert_eq!(from.lines().collect::<Vec<_>>(), expected[10..events.len()]);
}

#[tokio::test(flavor = "multi_thread")]
async fn local_run_prints_the_same_trace() {
    let engine = Engine::new(documents_config()).unwrap();
    let base = serve(engine).await;
    let task = golden_task();
    let (_, remote) = cli(&["run", "--color", "never", "--server", &base, task.to_str().unwrap()]).await;
    let (code, local) = cli(&["run", "--color", "never", task.to_str().unwrap()]).await;
    assert_eq!(code, EXIT_OK);
    assert_eq!(local, remote);
}

#[tokio::test(flavor = "multi_thread")]
async fn registry_commands_and_http_agree() {
    let engine = Engine::new(ServiceConfig::default()).unwrap();
    let base = serve(engine.clone()).await;

    let (code, empty) = cli(&["registry", "ls", "--server", &base]).await;
    assert_eq!(code, EXIT_OK);
    assert_eq!(empty, tool_table(&[]));
    assert_eq!(empty.lines().count(), 1);

    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("echo.json");
    std::fs::write(&file, r#"{"name": "Echo", "endpoint": "http://127.0.0.1:9/echo", "max_parallel": 2}"#).unwrap();
    let (code, added) = cli(&["registry", "add", "--server", &base, file.to_str().unwrap()]).await;
    assert_eq!((code, added.as_str()), (EXIT_OK, "registered Echo\n"));
    let over_http: Vec<ToolDescriptor> = reqwest::get(format!("{base}/registry/tools")).await.unwrap().json().await.unwrap();
    assert_eq!(over_http, engine.registry().list_tools());
    assert_eq!(over_http[0].max_parallel, 2);

    let lookup = ToolDescriptor::new("Lookup", "local://lookup");
    let response = reqwest::Client::new().post(format!("{base}/registry/tools")).json(&lookup).send().await.unwrap();
    assert_eq!(response.status(), 201);
    let (_, listed) = cli(&["registry", "ls", "--server", &base]).await;
    let mut tools = engine.registry().list_tools();
    tools.sort_by(|a, b| a.name.cmp(&b.name));
    assert_eq!(listed, tool_table(&tools));
    assert!(listed.lines().nth(1).unwrap().starts_with("Echo "));

    let (code, _) = cli(&["registry", "rm", "--server", &base, "Echo"]).await;
    assert_eq!(code, EXIT_OK);
    let gone = reqwest::get(format!("{base}/registry/tools/Echo")).await.unwrap();
    assert_eq!(gone.status(), 404);
    assert!(engine.registry().list_tools().iter().all(|t| t.name != "Echo"));

    let parsed = Cli::try_parse_from(["reactor", "registry", "rm", "--server", &base, "Echo"]).unwrap();
    let err = execute(parsed.command, &mut Vec::new()).await.unwrap_err();
    assert!(err.to_string().contains("404"), "{err}");
}

#[test]
fn simulate_is_byte_identical_across_processes() {
    let scenario = repo_path("scenarios/robustness.scenario");
    let run = || bin().args(["simulate", scenario.to_str().unwrap(), "--seed", "7"]).output().unwrap();
    let (a, b) = (run(), run());
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert!(!a.stdout.is_empty());
    assert_eq!(a.stdout, b.stdout);
    assert!(String::from_utf8_lossy(&a.stdout).ends_with("scenario passed\n"));

    let json = bin().args(["simulate", scenario.to_str().unwrap(), "--seed", "7", "--json"]).output().unwrap();
    let parsed: serde_json::Value = serde_json::from_slice(&json.stdout).unwrap();
    assert_eq!(parsed["passed"], true);
}

#[test]
fn golden_run_through_the_binary() {
    let output = bin().args(["run", golden_task().to_str().unwrap()]).output().unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert!(stdout.starts_with("thought: "));
    assert_eq!(
        stdout.lines().last().unwrap(),
        "answer: In Q1 2014 the ARR was $5.2M, which is about 13% higher than the $4.6M in Q1 2013."
    );
}

#[test]
fn failed_session_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let task = dir.path().join("broken.task");
    std::fs::write(&task, r#"{"task": "nothing scripted", "backend": {"kind": "scripted", "script": {"steps": []}}}"#).unwrap();
    let output = bin().args(["run", task.to_str().unwrap()]).output().unwrap();
    assert_eq!(output.status.code(), Some(EXIT_FAILED));
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert!(stdout.lines().last().unwrap().starts_with("session task-1 (Failed): "), "{stdout}");
}

#[test]
fn usage_errors() {
    let unknown = bin().arg("frobnicate").output().unwrap();
    assert!(!unknown.status.success());
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("Usage: reactor"));
    let bare = bin().output().unwrap();
    assert!(!bare.status.success());
    let help = bin().arg("--help").output().unwrap();
    assert!(help.status.success());
    for sub in ["serve", "run", "registry", "tail", "simulate"] {
        assert!(String::from_utf8_lossy(&help.stdout).contains(sub), "{sub}");
    }
}

#[test]
fn unreachable_server_is_an_error_not_a_failure() {
    let output = bin().args(["registry", "ls", "--server", "http://127.0.0.1:9"]).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).starts_with("error: "));
}
