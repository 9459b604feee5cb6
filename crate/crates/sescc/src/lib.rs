//! File formats, job configuration and the job runner behind the `sescc`
//! command.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod compare;
pub mod config;
mod error;
pub mod fcidump;
pub mod report;
pub mod tasks;

pub use compare::{compare, Comparison};
pub use config::{JobConfig, Task};
pub use error::CliError;
pub use fcidump::{parse_fcidump, write_fcidump, Fcidump};
pub use tasks::{run_job, JobOutcome, Status};
