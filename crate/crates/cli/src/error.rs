use mdep_core::MdepError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Data(String),

    #[error("{0}")]
    Numerical(String),

    #[error("cannot write `{path}`: {source}")]
    Output {
        path: String,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) | CliError::Output { .. } => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<MdepError> for CliError {
    fn from(e: MdepError) -> Self {
        classify(e, |_| None)
    }
}

/// Maps a library error onto an exit class. `column_name` resolves
/// instrument indices to user-facing names; reported rows are 1-based.
pub fn classify(e: MdepError, column_name: impl Fn(usize) -> Option<String>) -> CliError {
    if e.is_numerical() {
        return CliError::Numerical(e.to_string());
    }
    match e {
        MdepError::NonFinite { what, row } => {
            CliError::Data(format!("non-finite value in {what} at row {}", row + 1))
        }
        MdepError::LinkDomain { family, row, value } => CliError::Data(format!(
            "outcome {value} at row {} is outside the domain of the {family} link",
            row + 1
        )),
        MdepError::ConstantInstrument { column } => match column_name(column) {
            Some(name) => CliError::Data(format!(
                "instrument `{name}` is constant; a constant carries no identifying variation"
            )),
            None => CliError::Data(e.to_string()),
        },
        MdepError::DimensionMismatch { .. }
        | MdepError::TooFewObservations { .. }
        | MdepError::SampleTooLarge { .. }
        | MdepError::IdentificationOrder { .. } => CliError::Data(e.to_string()),
        _ => CliError::Usage(e.to_string()),
    }
}
