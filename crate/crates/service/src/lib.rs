//! HTTP service and command-line front end for the reactor engine.

pub mod api;
pub mod cli;
pub mod client;
pub mod config;
pub mod engine;
pub mod render;
pub mod taskfile;

pub use config::ServiceConfig;
pub use engine::{Accepted, Engine, SubmitError, TaskSubmission, TaskView};
