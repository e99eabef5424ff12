//! Error classification for process exit codes: 1 for usage problems,
//! 2 for numeric failures (blow-up / non-finite values), 3 for I/O.

use std::fmt;

use cegnn_core::mesh::MeshError;
use cegnn_core::model::ModelError;
use cegnn_core::pde::PdeError;
use cegnn_core::tensor::TensorError;
use cegnn_core::train::TrainError;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Numeric(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Numeric(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Numeric(m) => write!(f, "{m}"),
            CliError::Io(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        match e {
            TensorError::NonFinite { .. } => CliError::Numeric(e.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<PdeError> for CliError {
    fn from(e: PdeError) -> Self {
        match e {
            PdeError::BlowUp { .. } => CliError::Numeric(e.to_string()),
            PdeError::Io(m) => CliError::Io(m),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<MeshError> for CliError {
    fn from(e: MeshError) -> Self {
        match e {
            MeshError::Io(m) => CliError::Io(m),
            MeshError::Tensor(t) => t.into(),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Tensor(t) => t.into(),
            ModelError::Mesh(m) => m.into(),
            // Checkpoint problems are file problems: corrupt or unreadable.
            ModelError::Checkpoint(m) => CliError::Io(m),
            ModelError::ParamShape { .. } => CliError::Io(e.to_string()),
            ModelError::Config(m) => CliError::Usage(m),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Model(m) => m.into(),
            TrainError::Tensor(t) => t.into(),
            TrainError::Config(m) | TrainError::Data(m) => CliError::Usage(m),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn categories_map_to_exit_codes() {
        assert_eq!(CliError::Usage(String::new()).exit_code(), 1);
        assert_eq!(CliError::Numeric(String::new()).exit_code(), 2);
        assert_eq!(CliError::Io(String::new()).exit_code(), 3);
    }

    #[test]
    fn nested_numeric_errors_surface_as_code_2() {
        let e: CliError = TrainError::Model(ModelError::Tensor(TensorError::NonFinite {
            op: "matmul",
        }))
        .into();
        assert_eq!(e.exit_code(), 2);
        let e: CliError = PdeError::BlowUp { step: 3 }.into();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn config_errors_are_usage() {
        let e: CliError = TrainError::Config("bad".to_string()).into();
        assert_eq!(e.exit_code(), 1);
        let e: CliError = ModelError::Config("bad".to_string()).into();
        assert_eq!(e.exit_code(), 1);
    }
}
