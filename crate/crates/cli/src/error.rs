//! Command failures and their process exit codes.

use std::io;
use std::process::ExitCode;

use flownet_core::ccc::CccError;
use flownet_core::decompose::DecomposeError;
use flownet_core::ewggm::EwggmError;
use flownet_core::glasso::GlassoError;
use flownet_core::panel::PanelError;
use flownet_core::preprocess::PreprocessError;
use flownet_core::synth::SpecError;
use flownet_server::ServerError;
use thiserror::Error;

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_ENVIRONMENT: u8 = 4;
pub const EXIT_CONVERGENCE: u8 = 5;

#[derive(Debug, Error)]
pub enum CliError {
    /// Flag combinations clap cannot reject on its own.
    #[error("{0}")]
    Usage(String),
    /// Malformed input, domain violations, singular or degenerate data.
    #[error("{0}")]
    Data(String),
    /// Files, sockets and other resources outside the input itself.
    #[error("{0}")]
    Environment(String),
    #[error("{0}")]
    Convergence(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Environment(_) => EXIT_ENVIRONMENT,
            CliError::Convergence(_) => EXIT_CONVERGENCE,
        })
    }

    pub fn io(context: impl std::fmt::Display, e: io::Error) -> Self {
        CliError::Environment(format!("{context}: {e}"))
    }
}

impl From<PanelError> for CliError {
    fn from(e: PanelError) -> Self {
        match e {
            PanelError::Io(_) => CliError::Environment(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<PreprocessError> for CliError {
    fn from(e: PreprocessError) -> Self {
        match e {
            PreprocessError::InvalidGamma(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

fn glasso(e: &GlassoError, message: String) -> CliError {
    match e {
        GlassoError::Convergence { .. } => CliError::Convergence(message),
        _ => CliError::Data(message),
    }
}

impl From<DecomposeError> for CliError {
    fn from(e: DecomposeError) -> Self {
        let message = e.to_string();
        match e {
            DecomposeError::Preprocess(p) => p.into(),
            DecomposeError::Ewggm(EwggmError::Window { source, .. }) => glasso(&source, message),
            DecomposeError::Ewggm(EwggmError::Glasso(source)) => glasso(&source, message),
            _ => CliError::Data(message),
        }
    }
}

impl From<CccError> for CliError {
    fn from(e: CccError) -> Self {
        match e {
            CccError::Preprocess(p) => p.into(),
            CccError::Alpha(_) | CccError::AlphaOne => CliError::Usage(e.to_string()),
            CccError::Convergence(_) => CliError::Convergence(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<SpecError> for CliError {
    fn from(e: SpecError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ServerError> for CliError {
    fn from(e: ServerError) -> Self {
        match e {
            ServerError::Replay { .. } => CliError::Data(e.to_string()),
            ServerError::Cors(_) => CliError::Usage(e.to_string()),
            _ => CliError::Environment(e.to_string()),
        }
    }
}
