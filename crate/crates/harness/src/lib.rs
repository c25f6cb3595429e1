//! Simulation harness: synthetic tools, document fakes, the golden session,
//! experiment runners and scenario files.

pub mod experiments;
pub mod fakes;
pub mod golden;
pub mod policy;
pub mod report;
pub mod scenario;
pub mod synthetic;
