//! Functional areal spatial statistics: B-spline smoothing of curve panels,
//! functional Moran statistics over spatial weights, and spatially informed
//! functional principal component analysis.

pub mod basis;
pub mod error;
pub mod guide;
pub mod io;
pub mod moran;
pub mod pipeline;
pub mod sample;
pub mod sim;
pub mod spca;
pub mod weights;

pub use basis::BSplineBasis;
pub use error::{Error, Result};
pub use moran::{
    bivariate_functional_moran, classical_moran, classical_moran_test, functional_moran_curve,
    moran_grid, permutation_test, pooled_moran, trace_moran, trace_moran_test, Alternative,
    MoranCurve, MoranTest, PermutationConfig, TraceMoran,
};
pub use pipeline::{
    cmd_moran, cmd_reconstruct, cmd_simulate, cmd_smooth, cmd_spca, significance_stars,
    sim_config_from_kv, stars_legend, summarize_experiment, MoranOutput, PipelineConfig,
    ReconstructOutput, SimulateOutput, SmoothOutput, SpcaOutput, WeightsSource,
};
pub use sample::{smooth, FunctionalSample, ObservationPanel};
pub use sim::{
    gp_sample, model1, multivariate_sar, run_experiment, ExperimentRow, SarDraw, SimConfig,
    WeightSpec,
};
pub use spca::{
    mfaspca, mfpca, reconstruct, score_table, variance_explained, Component, FpcaResult,
    ScoreRecord, SpcaResult,
};
pub use weights::{
    contiguity_weights, edge_list_weights, knn_weights, lattice_cells, ContiguityRule,
    SpatialWeights, WeightKind,
};
