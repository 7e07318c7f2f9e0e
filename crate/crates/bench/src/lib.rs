//! Benchmark harness behind the `dualarm` command: instance files, batch
//! evaluation, timing fits and report output.

use std::path::{Path, PathBuf};

use thiserror::Error;

pub mod cli;
pub mod data;
pub mod eval;
pub mod report;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("{0}")]
    Args(String),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("malformed data: {0}")]
    Data(String),
    #[error("policy failed: {0}")]
    Policy(String),
}

impl BenchError {
    pub fn io(path: &Path) -> impl FnOnce(std::io::Error) -> BenchError + '_ {
        move |e| BenchError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }

    /// Process exit status: 2 bad arguments, 3 I/O or malformed input,
    /// 4 policy failure.
    pub fn exit_code(&self) -> u8 {
        match self {
            BenchError::Args(_) => 2,
            BenchError::Io { .. } | BenchError::Data(_) => 3,
            BenchError::Policy(_) => 4,
        }
    }
}
