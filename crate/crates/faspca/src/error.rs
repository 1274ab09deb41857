//! Error type shared by all modules of the crate.

use thiserror::Error;

/// Errors raised by basis construction, smoothing, weight building, the
/// Moran statistics, the eigenproblems and the simulation generators.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain endpoints must be finite with lo < hi (got [{lo}, {hi}])")]
    BadDomain { lo: f64, hi: f64 },

    #[error("spline order must be at least 2 (got {0})")]
    BadOrder(usize),

    #[error("need n_basis >= order (got n_basis {n_basis}, order {order})")]
    TooFewBasis { n_basis: usize, order: usize },

    #[error("abscissa {x} outside the domain [{lo}, {hi}]")]
    OutOfDomain { x: f64, lo: f64, hi: f64 },

    #[error("basis Gram matrix is not positive definite")]
    GramNotPositiveDefinite,

    #[error("smoothing for unit {unit} variable {variable} is underdetermined: \
             {distinct} distinct abscissae for {n_basis} basis functions with zero penalty")]
    UnderdeterminedSmoothing {
        unit: String,
        variable: String,
        distinct: usize,
        n_basis: usize,
    },

    #[error("normal equations for unit {unit} variable {variable} are singular")]
    SingularSmoothing { unit: String, variable: String },

    #[error("roughness penalty must be nonnegative (got {0})")]
    NegativePenalty(f64),

    #[error("panel has no observations for unit {unit} variable {variable}")]
    MissingSeries { unit: String, variable: String },

    #[error("expected one basis per variable: {n_bases} bases for {d_vars} variables")]
    BasisCountMismatch { n_bases: usize, d_vars: usize },

    #[error("sample is already centered")]
    AlreadyCentered,

    #[error("operation requires a centered sample; call center() first")]
    NotCentered,

    #[error("variable index {index} out of range for {d_vars} variables")]
    BadVariable { index: usize, d_vars: usize },

    #[error("need at least 2 units (got {0})")]
    TooFewUnits(usize),

    #[error("k must satisfy 1 <= k <= n-1 (got k {k} for n {n})")]
    BadNeighbourCount { k: usize, n: usize },

    #[error("duplicate lattice cell ({row}, {col})")]
    DuplicateCell { row: i64, col: i64 },

    #[error("weight entry ({i}, {j}) out of range for {n} units")]
    WeightIndexOutOfRange { i: usize, j: usize, n: usize },

    #[error("negative weight {w} at ({i}, {j})")]
    NegativeWeight { i: usize, j: usize, w: f64 },

    #[error("diagonal weight at unit {0} is not allowed")]
    DiagonalWeight(usize),

    #[error("data covers {left} units but the weight matrix has {right}")]
    UnitCountMismatch { left: usize, right: usize },

    #[error("vector has zero variance; Moran's I is undefined")]
    ZeroVariance,

    #[error("sample curves are identically zero after centering")]
    DegenerateSample,

    #[error("Moran curve is fully masked; trace is undefined")]
    DegenerateCurve,

    #[error("need at least 1 permutation (got {0})")]
    BadPermutationCount(usize),

    #[error("requested {requested} components but only {available} are available")]
    BadComponentCount { requested: usize, available: usize },

    #[error("n_pos + n_neg = {requested} exceeds the score dimension p = {p}")]
    TooManyComponents { requested: usize, p: usize },

    #[error("total variance is zero")]
    ZeroTotalVariance,

    #[error("coordinate count {coords} does not match unit count {units}")]
    CoordCountMismatch { coords: usize, units: usize },

    #[error("autoregressive system (I - rho W) is singular for rho {rho}")]
    SingularAutoregression { rho: f64 },

    #[error("spatial coefficient rho must lie in (-1, 1) (got {0})")]
    BadRho(f64),

    #[error("invalid simulation config: {0}")]
    BadSimConfig(String),

    #[error("Gaussian process covariance is not positive definite after jitter")]
    CovarianceNotPositiveDefinite,

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Csv {
        context: String,
        #[source]
        source: csv::Error,
    },

    #[error("parse error in {file} line {line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },

    #[error("invalid config value for {key}: {message}")]
    BadConfig { key: String, message: String },

    #[error("missing input: {0}")]
    MissingInput(String),

    #[error("unit id {unit} in {file} does not appear in the panel")]
    UnknownUnit { unit: String, file: String },

    #[error("log transform impossible: value {value} plus constant {constant} is not positive")]
    NonPositiveAfterShift { value: f64, constant: f64 },
}

impl Error {
    /// Stable machine-readable code, used by the CLI's single-line error output.
    pub fn code(&self) -> &'static str {
        use Error::*;
        match self {
            BadDomain { .. } | BadOrder(_) | TooFewBasis { .. } => "bad_basis",
            OutOfDomain { .. } => "out_of_domain",
            GramNotPositiveDefinite => "gram_not_spd",
            UnderdeterminedSmoothing { .. } => "underdetermined_smoothing",
            SingularSmoothing { .. } => "singular_smoothing",
            NegativePenalty(_) => "bad_penalty",
            MissingSeries { .. } => "missing_series",
            BasisCountMismatch { .. } => "basis_count_mismatch",
            AlreadyCentered => "already_centered",
            NotCentered => "not_centered",
            BadVariable { .. } => "bad_variable",
            TooFewUnits(_) => "too_few_units",
            BadNeighbourCount { .. } => "bad_k",
            DuplicateCell { .. } => "duplicate_cell",
            WeightIndexOutOfRange { .. } => "weight_index_out_of_range",
            NegativeWeight { .. } => "negative_weight",
            DiagonalWeight(_) => "diagonal_weight",
            UnitCountMismatch { .. } => "unit_count_mismatch",
            ZeroVariance => "zero_variance",
            DegenerateSample => "degenerate_sample",
            DegenerateCurve => "degenerate_curve",
            BadPermutationCount(_) => "bad_permutation_count",
            BadComponentCount { .. } | TooManyComponents { .. } => "bad_component_count",
            ZeroTotalVariance => "zero_total_variance",
            CoordCountMismatch { .. } => "coord_count_mismatch",
            SingularAutoregression { .. } => "singular_autoregression",
            BadRho(_) => "bad_rho",
            BadSimConfig(_) => "bad_sim_config",
            CovarianceNotPositiveDefinite => "covariance_not_spd",
            Io { .. } => "io_error",
            Csv { .. } => "csv_error",
            Parse { .. } => "parse_error",
            BadConfig { .. } => "bad_config",
            MissingInput(_) => "missing_input",
            UnknownUnit { .. } => "unknown_unit",
            NonPositiveAfterShift { .. } => "nonpositive_after_shift",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
