#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use reactor_service::config::{BuiltinTools, ServiceConfig};
use reactor_service::taskfile::TaskFile;
use reactor_service::{api, Engine, TaskSubmission};

pub fn repo_path(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

pub fn golden_task() -> PathBuf {
    repo_path("tasks/golden.task")
}

pub fn golden_submission() -> TaskSubmission {
    TaskFile::load(golden_task()).unwrap().to_submission().unwrap()
}

pub fn documents_config() -> ServiceConfig {
    ServiceConfig { builtin_tools: vec![BuiltinTools::Documents], ..Default::default() }
}

/// Serves `engine` on an ephemeral port; returns the base URL.
pub async fn serve(engine: Arc<Engine>) -> String {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(api::serve(engine, listener, std::future::pending()));
    format!("http://{addr}")
}
