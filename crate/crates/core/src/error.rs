use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("tangent frame construction lost rank (pivot norm {pivot_norm:e})")]
    RankDeficient { pivot_norm: f64 },

    #[error("constraint Gram matrix is numerically singular (smallest eigenvalue {min_eig:e})")]
    SingularGram { min_eig: f64 },

    #[error("constraint violated: |xi(x)| = {residual:e} exceeds {tol:e}")]
    ConstraintViolated { residual: f64, tol: f64 },

    #[error("constraint map has no univariate polynomial structure")]
    NoPolyStructure,

    #[error("polynomial degenerates to a nonzero constant and has no roots")]
    DegenerateLeadingCoefficient,

    #[error("polynomial is identically zero")]
    InfinitelyManyRoots,

    #[error("ranked omega policy has no row for {n} solutions")]
    RankTableMissing { n: usize },

    #[error("chain statistics are empty")]
    EmptyStats,

    #[error("point is off the manifold (residual {residual:e})")]
    OffManifold { residual: f64 },

    #[error("sign pattern {signs:?} matches no connected component")]
    InvalidSignPattern { signs: [i8; 3] },

    #[error("histogram bin {bin} has expected count {expected:.3} < 5")]
    SparseBins { bin: usize, expected: f64 },

    #[error("unknown problem '{0}'")]
    UnknownProblem(String),

    #[error("missing parameter '{0}'")]
    MissingParam(String),

    #[error("invalid value for '{field}': {message}")]
    InvalidConfig { field: String, message: String },

    #[error("chain aborted at iteration {iteration}: {source}")]
    ChainAbort {
        iteration: u64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable snake-case identifier of the variant.
    pub fn code(&self) -> &'static str {
        match self {
            Error::RankDeficient { .. } => "rank_deficient",
            Error::SingularGram { .. } => "singular_gram",
            Error::ConstraintViolated { .. } => "constraint_violated",
            Error::NoPolyStructure => "no_poly_structure",
            Error::DegenerateLeadingCoefficient => "degenerate_leading_coefficient",
            Error::InfinitelyManyRoots => "infinitely_many_roots",
            Error::RankTableMissing { .. } => "rank_table_missing",
            Error::EmptyStats => "empty_stats",
            Error::OffManifold { .. } => "off_manifold",
            Error::InvalidSignPattern { .. } => "invalid_sign_pattern",
            Error::SparseBins { .. } => "sparse_bins",
            Error::UnknownProblem(_) => "unknown_problem",
            Error::MissingParam(_) => "missing_param",
            Error::InvalidConfig { .. } => "invalid_config",
            Error::ChainAbort { .. } => "chain_abort",
            Error::Io(_) => "io",
        }
    }

    /// Whether the error stems from user input rather than from the numerics.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::UnknownProblem(_) | Error::MissingParam(_) | Error::InvalidConfig { .. } | Error::RankTableMissing { .. }
        )
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            message: message.into(),
        }
    }
}
