use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("ket is not normalized (squared norm {norm_sqr})")]
    NotNormalized { norm_sqr: f64 },

    #[error("matrix is not Hermitian (max |A - A^H| entry {defect:e})")]
    NotHermitian { defect: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("infeasible target: {0}")]
    Infeasible(String),

    #[error("filter annihilates input (post-selected trace {trace:e})")]
    FilterAnnihilatesInput { trace: f64 },

    #[error("degenerate dataset: {0}")]
    DegenerateDataset(String),

    #[error("linear inversion system is singular (rank {rank})")]
    SingularSystem { rank: usize },

    #[error("{quantity} = {value} lies outside its admissible range")]
    OutOfRange { quantity: &'static str, value: f64 },

    #[error("bootstrap skipped {skipped} of {total} resamples")]
    BootstrapFailed { skipped: usize, total: usize },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}
