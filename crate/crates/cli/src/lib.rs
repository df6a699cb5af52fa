//! Experiment runner behind the `fdmask` binary. Every command is a
//! function of (config, input files, seed) and writes its outputs
//! atomically under the output directory.

pub mod commands;
pub mod config;
pub mod sweep;

use std::fmt;

pub use commands::{Context, VERSION};
pub use config::ExperimentConfig;

/// An error with a fixed machine-readable kind.
#[derive(Debug)]
pub struct Failure {
    pub kind: &'static str,
    pub message: String,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Failure {}

pub fn fail(kind: &'static str, message: impl Into<String>) -> anyhow::Error {
    Failure {
        kind,
        message: message.into(),
    }
    .into()
}

/// Kind of the innermost recognised cause.
pub fn error_kind(err: &anyhow::Error) -> &'static str {
    for cause in err.chain() {
        if let Some(f) = cause.downcast_ref::<Failure>() {
            return f.kind;
        }
        if let Some(e) = cause.downcast_ref::<fdmask::Error>() {
            return match e {
                fdmask::Error::InvalidDimensions(_) => "dimensions",
                fdmask::Error::InvalidArgument(_) => "invalid-argument",
                fdmask::Error::ShapeMismatch(_) => "shape",
                fdmask::Error::UnsupportedFormat(_) => "format",
                fdmask::Error::Malformed { .. } => "malformed",
                fdmask::Error::Diverged(_) => "diverged",
                fdmask::Error::Empty(_) => "empty",
                fdmask::Error::Io { .. } => "io",
                fdmask::Error::Codec(_) => "codec",
                fdmask::Error::Json(_) => "json",
            };
        }
        if cause.is::<std::io::Error>() {
            return "io";
        }
    }
    "error"
}

/// `error<TAB>kind<TAB>message` on one line.
pub fn error_line(err: &anyhow::Error) -> String {
    let message: Vec<String> = err
        .chain()
        .map(|c| c.to_string().split_whitespace().collect::<Vec<_>>().join(" "))
        .collect();
    format!("error\t{}\t{}", error_kind(err), message.join(": ").replace('\t', " "))
}
