use thiserror::Error;

pub type Result<T> = std::result::Result<T, MdepError>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MdepError {
    #[error("non-finite value in {what} at row {row}")]
    NonFinite { what: &'static str, row: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("too few observations: need at least {required}, found {found}")]
    TooFewObservations { required: usize, found: usize },

    #[error("sample size {n} exceeds the dense-matrix limit of {limit}")]
    SampleTooLarge { n: usize, limit: usize },

    #[error("outcome {value} at row {row} is outside the domain of the {family} link")]
    LinkDomain {
        family: &'static str,
        row: usize,
        value: f64,
    },

    #[error("instrument column {column} is constant; a constant carries no identifying variation")]
    ConstantInstrument { column: usize },

    #[error("identification order condition fails: {instruments} instrument column(s) for {parameters} parameter(s)")]
    IdentificationOrder {
        instruments: usize,
        parameters: usize,
    },

    #[error("mean intercept derivative {value:e} is too close to zero; the implicit intercept is singular")]
    SingularIntercept { value: f64 },

    #[error("implicit intercept is not identified: {reason}")]
    NonIdentifiedIntercept { reason: String },

    #[error("rank-deficient design in {stage} (condition number {condition:e})")]
    RankDeficient { stage: &'static str, condition: f64 },

    #[error("Hessian estimate is singular (condition number {condition:e}); use bootstrap standard errors instead")]
    SingularHessian { condition: f64 },

    #[error("{failed} of {total} bootstrap refits failed; test aborted")]
    TooManyFailures { failed: usize, total: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown simulation specification `{0}`")]
    UnknownSpec(String),
}

impl MdepError {
    /// True for errors caused by the numerical behaviour of a fit rather than by bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            MdepError::SingularIntercept { .. }
                | MdepError::NonIdentifiedIntercept { .. }
                | MdepError::RankDeficient { .. }
                | MdepError::SingularHessian { .. }
                | MdepError::TooManyFailures { .. }
        )
    }
}
