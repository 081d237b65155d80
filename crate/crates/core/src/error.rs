use thiserror::Error;

/// Errors raised anywhere in the estimation and inference pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("column `{0}` not found in input")]
    MissingColumn(String),
    #[error("treatment value {value} on row {row} is not 0 or 1")]
    NonBinaryTreatment { row: usize, value: f64 },
    #[error("cell `{cell}` on row {row}, column `{column}` is not a finite number")]
    NonNumericCell {
        row: usize,
        column: String,
        cell: String,
    },
    #[error("need at least {needed} rows, found {found}")]
    TooFewRows { needed: usize, found: usize },
    #[error("need at least 2 covariates, found {0}")]
    TooFewColumns(usize),
    #[error("covariate column {0} has zero sample variance")]
    ConstantColumn(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("observational mode requires a propensity vector")]
    PropensityMissing,
    #[error("propensity {value} on row {row} is outside (0, 1)")]
    PropensityOutOfRange { row: usize, value: f64 },

    #[error("kernel denominator underflowed to zero at point {0}")]
    DegenerateDenominator(usize),
    #[error("iterate became non-finite at iteration {0}")]
    NonFinite(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("lambda grid is empty")]
    EmptyGrid,

    #[error("linear program is infeasible")]
    Infeasible,
    #[error("linear program is unbounded")]
    Unbounded,
    #[error("simplex hit the iteration limit ({0} pivots)")]
    IterationLimit(usize),
    #[error("nodewise solver failed for coordinate {coord}: {reason}")]
    SolverFailure { coord: usize, reason: String },
    #[error("tau^2 for coordinate {coord} is too close to zero ({value:e})")]
    ZeroTau { coord: usize, value: f64 },
    #[error("alpha = {0} must lie strictly inside (0, 1)")]
    AlphaOutOfRange(f64),

    #[error("hypothesis group is empty")]
    EmptyGroup,
    #[error("group index {0} is outside 2..=p")]
    GroupIndexOutOfRange(usize),
    #[error("group index {0} appears more than once")]
    DuplicateGroupIndex(usize),

    #[error("treatment is constant; propensity model is not identifiable")]
    ConstantTreatment,
    #[error("logistic loss is unbounded below (perfect separation)")]
    Separation,
    #[error("proximal gradient did not converge in {0} iterations")]
    NonConvergence(usize),

    #[error("unknown design `{0}`")]
    UnknownDesign(String),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("no subject received the treatment recommended by the rule")]
    NoMatches,

    #[error("i/o error: {0}")]
    Io(String),
    #[error("csv error: {0}")]
    Csv(String),
}

impl Error {
    /// Module-qualified code used in structured CLI error output.
    pub fn code(&self) -> &'static str {
        use Error::*;
        match self {
            MissingColumn(_) => "data.missing_column",
            NonBinaryTreatment { .. } => "data.non_binary_treatment",
            NonNumericCell { .. } => "data.non_numeric_cell",
            TooFewRows { .. } => "data.too_few_rows",
            TooFewColumns(_) => "data.too_few_columns",
            ConstantColumn(_) => "data.constant_column",
            DimensionMismatch(_) => "data.dimension_mismatch",
            PropensityMissing => "data.propensity_missing",
            PropensityOutOfRange { .. } => "data.propensity_out_of_range",
            DegenerateDenominator(_) => "kernel.degenerate_denominator",
            NonFinite(_) => "estimator.non_finite",
            InvalidConfig(_) => "estimator.invalid_config",
            EmptyGrid => "estimator.empty_grid",
            Infeasible => "lp.infeasible",
            Unbounded => "lp.unbounded",
            IterationLimit(_) => "lp.iteration_limit",
            SolverFailure { .. } => "debias.solver_failure",
            ZeroTau { .. } => "debias.zero_tau",
            AlphaOutOfRange(_) => "debias.alpha_out_of_range",
            EmptyGroup => "bootstrap.empty_group",
            GroupIndexOutOfRange(_) => "bootstrap.group_index_out_of_range",
            DuplicateGroupIndex(_) => "bootstrap.duplicate_group_index",
            ConstantTreatment => "observational.constant_treatment",
            Separation => "observational.separation",
            NonConvergence(_) => "observational.non_convergence",
            UnknownDesign(_) => "simulation.unknown_design",
            LengthMismatch { .. } => "simulation.length_mismatch",
            NoMatches => "simulation.no_matches",
            Io(_) => "io.error",
            Csv(_) => "io.csv",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
