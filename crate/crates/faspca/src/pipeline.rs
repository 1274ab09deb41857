//! Batch pipeline behind the command-line front-end: parse flat `key=value`
//! configs, ingest CSV inputs, smooth, build weights, run the Moran
//! statistics and the eigenproblems, and write every result table into the
//! output directory. Lives in the library so the whole flow is callable and
//! testable without spawning a process.

use std::path::{Path, PathBuf};

use crate::basis::BSplineBasis;
use crate::error::{Error, Result};
use crate::io::{
    self, ComponentTestRow, EigenRow, EigenfunctionRow, ScoreRow, SummaryRow,
};
use crate::moran::{
    bivariate_functional_moran, classical_moran_test, moran_grid, pooled_moran, trace_moran_test,
    Alternative, MoranTest, PermutationConfig, TraceMoran,
};
use crate::sample::{linspace, smooth, FunctionalSample, ObservationPanel};
use crate::sim::{iqr, median, run_experiment, ExperimentRow, SimConfig, WeightSpec};
use crate::spca::{mfaspca, mfpca, reconstruct, score_table, Component};
use crate::weights::{
    contiguity_weights, edge_list_weights, knn_weights, ContiguityRule, SpatialWeights,
};

pub const BASIS_FILE: &str = "basis.csv";
pub const COEF_FILE: &str = "coefficients.csv";
pub const CURVES_FILE: &str = "curves.csv";
pub const SMOOTH_META_FILE: &str = "smooth_meta.txt";
pub const MORAN_CURVE_FILE: &str = "moran_curve.csv";
pub const MORAN_TEST_FILE: &str = "moran_test.csv";
pub const MORAN_META_FILE: &str = "moran_meta.txt";
pub const BIVARIATE_FILE: &str = "bivariate_curve.csv";
pub const EIGEN_FILE: &str = "eigen.csv";
pub const COMPONENT_TESTS_FILE: &str = "component_tests.csv";
pub const EIGENFUNCTIONS_FILE: &str = "eigenfunctions.csv";
pub const SCORES_FILE: &str = "scores.csv";
pub const SCORE_TABLE_FILE: &str = "score_table.csv";
pub const SPCA_META_FILE: &str = "spca_meta.txt";
pub const RECONSTRUCTION_FILE: &str = "reconstruction.csv";
pub const RECONSTRUCT_META_FILE: &str = "reconstruct_meta.txt";
pub const EXPERIMENT_FILE: &str = "experiment.csv";
pub const SUMMARY_FILE: &str = "experiment_summary.csv";

/// Where the pipeline gets its spatial weights.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightsSource {
    /// K nearest neighbours over the coordinate table.
    Knn { k: usize },
    /// Edge contiguity; coordinates must be integer lattice cells.
    Rook,
    /// Edge-or-corner contiguity; coordinates must be integer lattice cells.
    Queen,
    /// Explicit `i,j,w` entries from a weight CSV.
    WeightFile(PathBuf),
    /// Symmetric binary weights from an edge-list CSV.
    EdgeFile(PathBuf),
}

/// Everything a pipeline command needs. Intermediate files (the smoothed
/// sample, result tables) live in `out_dir`; commands that consume them read
/// them back from there.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub panel: PathBuf,
    pub coords: Option<PathBuf>,
    pub weights: WeightsSource,
    /// Basis size for every variable unless overridden by name.
    pub n_basis: usize,
    pub n_basis_overrides: Vec<(String, usize)>,
    pub order: usize,
    pub penalty: f64,
    /// Shift values by the smallest positive panel value, then log.
    pub log_transform: bool,
    pub n_pos: usize,
    pub n_neg: usize,
    /// Classical baseline instead of the spatial method. `n_pos` becomes the
    /// component count, 0 meaning all.
    pub fpca: bool,
    pub row_standardize: bool,
    pub n_permutations: usize,
    pub seed: u64,
    /// Variable pair for the bivariate Moran curve.
    pub bivariate: Option<(String, String)>,
    /// Components used for reconstruction; defaults to all kept.
    pub reconstruct_k: Option<usize>,
    /// Evaluation grid size for curve outputs.
    pub n_grid: usize,
    pub out_dir: PathBuf,
}

impl PipelineConfig {
    /// Defaults: knn(5) weights, 10 cubic basis functions, zero penalty, no
    /// log transform, 3 positive and 2 negative components, row-standardized
    /// weights, 999 permutations, seed 1, 101-point output grids.
    pub fn new(panel: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            panel: panel.into(),
            coords: None,
            weights: WeightsSource::Knn { k: 5 },
            n_basis: 10,
            n_basis_overrides: Vec::new(),
            order: 4,
            penalty: 0.0,
            log_transform: false,
            n_pos: 3,
            n_neg: 2,
            fpca: false,
            row_standardize: true,
            n_permutations: 999,
            seed: 1,
            bivariate: None,
            reconstruct_k: None,
            n_grid: 101,
            out_dir: out_dir.into(),
        }
    }

    /// Defaults plus the `key=value` pairs of a config file.
    pub fn from_kv_file(path: &Path) -> Result<Self> {
        let mut config = Self::new("panel.csv", "out");
        config.apply_kv(&io::read_kv(path)?)?;
        Ok(config)
    }

    /// Apply `key=value` pairs; unknown keys are errors. `n_basis.<name>`
    /// overrides the basis size of one variable.
    pub fn apply_kv(&mut self, pairs: &[(String, String)]) -> Result<()> {
        for (key, value) in pairs {
            match key.as_str() {
                "panel" => self.panel = PathBuf::from(value),
                "coords" => self.coords = Some(PathBuf::from(value)),
                "weights" => self.weights = parse_weights_source(value)?,
                "n_basis" => self.n_basis = parse_num(key, value)?,
                "order" => self.order = parse_num(key, value)?,
                "penalty" => self.penalty = parse_num(key, value)?,
                "log_transform" => self.log_transform = parse_bool(key, value)?,
                "n_pos" => self.n_pos = parse_num(key, value)?,
                "n_neg" => self.n_neg = parse_num(key, value)?,
                "fpca" => self.fpca = parse_bool(key, value)?,
                "row_standardize" => self.row_standardize = parse_bool(key, value)?,
                "n_permutations" => self.n_permutations = parse_num(key, value)?,
                "seed" => self.seed = parse_num(key, value)?,
                "bivariate" => {
                    let (a, b) = value.split_once(',').ok_or_else(|| Error::BadConfig {
                        key: key.clone(),
                        message: format!("expected two comma-separated variables, got {value:?}"),
                    })?;
                    self.bivariate = Some((a.trim().to_string(), b.trim().to_string()));
                }
                "reconstruct_k" => self.reconstruct_k = Some(parse_num(key, value)?),
                "n_grid" => {
                    let n: usize = parse_num(key, value)?;
                    if n < 2 {
                        return Err(Error::BadConfig {
                            key: key.clone(),
                            message: format!("need at least 2 grid points, got {n}"),
                        });
                    }
                    self.n_grid = n;
                }
                "out_dir" => self.out_dir = PathBuf::from(value),
                _ => match key.strip_prefix("n_basis.") {
                    Some(variable) => {
                        let n = parse_num(key, value)?;
                        self.n_basis_overrides.retain(|(name, _)| name != variable);
                        self.n_basis_overrides.push((variable.to_string(), n));
                    }
                    None => {
                        return Err(Error::BadConfig {
                            key: key.clone(),
                            message: "unknown key".into(),
                        })
                    }
                },
            }
        }
        Ok(())
    }
}

/// Parse a weights flag: `knn:<k>`, `rook`, `queen`, `file:<path>` or
/// `edges:<path>`.
pub fn parse_weights_source(text: &str) -> Result<WeightsSource> {
    if text == "rook" {
        return Ok(WeightsSource::Rook);
    }
    if text == "queen" {
        return Ok(WeightsSource::Queen);
    }
    if let Some(k) = text.strip_prefix("knn:") {
        return Ok(WeightsSource::Knn {
            k: parse_num("weights", k)?,
        });
    }
    if let Some(path) = text.strip_prefix("file:") {
        return Ok(WeightsSource::WeightFile(PathBuf::from(path)));
    }
    if let Some(path) = text.strip_prefix("edges:") {
        return Ok(WeightsSource::EdgeFile(PathBuf::from(path)));
    }
    Err(Error::BadConfig {
        key: "weights".into(),
        message: format!("expected knn:<k>, rook, queen, file:<path> or edges:<path>, got {text:?}"),
    })
}

/// Build a simulation config from `key=value` pairs. Omitted keys keep the
/// defaults of [`SimConfig::new`] with 100 units, one variable, rho 0.5 and
/// seed 1; unknown keys are errors.
pub fn sim_config_from_kv(pairs: &[(String, String)]) -> Result<SimConfig> {
    let mut config = SimConfig::new(100, 1, 0.5, 1);
    let mut weights_text: Option<&str> = None;
    for (key, value) in pairs {
        match key.as_str() {
            "n_units" => config.n_units = parse_num(key, value)?,
            "grid_side" => config.grid_side = parse_num(key, value)?,
            "d_vars" => config.d_vars = parse_num(key, value)?,
            "n_timepoints" => config.n_timepoints = parse_num(key, value)?,
            "rho" => config.rho = parse_num(key, value)?,
            "weights" => weights_text = Some(value),
            "gp_lengthscale" => config.gp_lengthscale = parse_num(key, value)?,
            "gp_variance" => config.gp_variance = parse_num(key, value)?,
            "noise_sd" => config.noise_sd = parse_num(key, value)?,
            "n_replicates" => config.n_replicates = parse_num(key, value)?,
            "seed" => config.seed = parse_num(key, value)?,
            "n_basis" => config.n_basis = parse_num(key, value)?,
            "n_permutations" => config.n_permutations = parse_num(key, value)?,
            _ => {
                return Err(Error::BadConfig {
                    key: key.clone(),
                    message: "unknown simulation key".into(),
                })
            }
        }
    }
    // Weights may reference files whose size checks need the final n_units,
    // so they are resolved after every scalar key.
    if let Some(text) = weights_text {
        config.weight_spec = parse_sim_weight_spec(text, config.n_units)?;
    }
    Ok(config)
}

fn parse_sim_weight_spec(text: &str, n_units: usize) -> Result<WeightSpec> {
    Ok(match parse_weights_source(text)? {
        WeightsSource::Knn { k } => WeightSpec::Knn { k },
        WeightsSource::Rook => WeightSpec::Rook,
        WeightsSource::Queen => WeightSpec::Queen,
        WeightsSource::WeightFile(path) => {
            let entries = io::read_weight_entries(&path)?;
            WeightSpec::Custom(SpatialWeights::from_entries(n_units, &entries)?)
        }
        WeightsSource::EdgeFile(path) => {
            let edges = io::read_edge_list(&path)?;
            WeightSpec::Custom(edge_list_weights(n_units, &edges)?)
        }
    })
}

/// Legend for the significance markers used in result tables.
pub fn stars_legend() -> &'static str {
    "significance: *** p<0.001, ** p<0.01, * p<0.05, † p<0.1"
}

/// Significance marker for a p-value, smallest threshold that applies:
/// `***` below 0.001, `**` below 0.01, `*` below 0.05, `†` below 0.1.
pub fn significance_stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else if p < 0.1 {
        "†"
    } else {
        ""
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| Error::BadConfig {
        key: key.into(),
        message: format!("{e} (got {value:?})"),
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::BadConfig {
            key: key.into(),
            message: format!("expected a boolean, got {value:?}"),
        }),
    }
}

fn ensure_out_dir(config: &PipelineConfig) -> Result<()> {
    std::fs::create_dir_all(&config.out_dir).map_err(|e| Error::Io {
        context: format!("creating {}", config.out_dir.display()),
        source: e,
    })
}

/// Coordinates joined to `unit_ids` order. Every file row must name a known
/// unit exactly once, and every unit must be covered.
fn load_coords(path: &Path, unit_ids: &[String]) -> Result<Vec<(f64, f64)>> {
    let rows = io::read_coords(path)?;
    let file = path.display().to_string();
    let mut map = std::collections::HashMap::new();
    for (idx, row) in rows.iter().enumerate() {
        if !unit_ids.contains(&row.unit) {
            return Err(Error::UnknownUnit {
                unit: row.unit.clone(),
                file,
            });
        }
        if map.insert(row.unit.clone(), (row.s1, row.s2)).is_some() {
            return Err(Error::Parse {
                file,
                line: idx + 2,
                message: format!("duplicate coordinates for unit {}", row.unit),
            });
        }
    }
    unit_ids
        .iter()
        .map(|unit| {
            map.get(unit)
                .copied()
                .ok_or_else(|| Error::MissingInput(format!("coordinates for unit {unit} in {file}")))
        })
        .collect()
}

fn require_coords(config: &PipelineConfig, unit_ids: &[String]) -> Result<Vec<(f64, f64)>> {
    let path = config.coords.as_ref().ok_or_else(|| {
        Error::MissingInput("coordinates file for the requested weights".into())
    })?;
    load_coords(path, unit_ids)
}

fn integer_cells(coords: &[(f64, f64)]) -> Result<Vec<(i64, i64)>> {
    coords
        .iter()
        .map(|&(s1, s2)| {
            let r = s1.round();
            let c = s2.round();
            if (s1 - r).abs() > 1e-9 || (s2 - c).abs() > 1e-9 {
                return Err(Error::BadConfig {
                    key: "weights".into(),
                    message: format!(
                        "contiguity weights need integer lattice coordinates, got ({s1}, {s2})"
                    ),
                });
            }
            Ok((r as i64, c as i64))
        })
        .collect()
}

/// Build the spatial weights for `unit_ids`, row-standardized when the
/// config asks for it (the default).
pub fn build_weights(config: &PipelineConfig, unit_ids: &[String]) -> Result<SpatialWeights> {
    let raw = match &config.weights {
        WeightsSource::Knn { k } => {
            let coords = require_coords(config, unit_ids)?;
            knn_weights(&coords, *k)?
        }
        WeightsSource::Rook | WeightsSource::Queen => {
            let coords = require_coords(config, unit_ids)?;
            let cells = integer_cells(&coords)?;
            let rule = if config.weights == WeightsSource::Rook {
                ContiguityRule::Rook
            } else {
                ContiguityRule::Queen
            };
            contiguity_weights(&cells, rule)?
        }
        WeightsSource::WeightFile(path) => {
            let entries = io::read_weight_entries(path)?;
            SpatialWeights::from_entries(unit_ids.len(), &entries)?
        }
        WeightsSource::EdgeFile(path) => {
            let edges = io::read_edge_list(path)?;
            edge_list_weights(unit_ids.len(), &edges)?
        }
    };
    Ok(if config.row_standardize {
        raw.row_standardize().0
    } else {
        raw
    })
}

fn load_sample(config: &PipelineConfig) -> Result<FunctionalSample> {
    let basis_path = config.out_dir.join(BASIS_FILE);
    let coef_path = config.out_dir.join(COEF_FILE);
    if !basis_path.exists() || !coef_path.exists() {
        return Err(Error::MissingInput(format!(
            "smoothed sample in {} (run the smooth step first)",
            config.out_dir.display()
        )));
    }
    io::read_sample(&basis_path, &coef_path)
}

/// Evaluate per-variable curves on `n_grid` points of each domain and write
/// them in the long panel format, variables outermost.
fn write_evaluated(
    path: &Path,
    sample: &FunctionalSample,
    n_grid: usize,
    mut values_for: impl FnMut(usize, &[f64]) -> Result<nalgebra::DMatrix<f64>>,
) -> Result<()> {
    let mut out = ObservationPanel::new();
    for j in 0..sample.d_vars() {
        let (lo, hi) = sample.basis(j).domain();
        let grid = linspace(lo, hi, n_grid);
        let values = values_for(j, &grid)?;
        for (i, unit) in sample.unit_ids().iter().enumerate() {
            for (g, &x) in grid.iter().enumerate() {
                out.push(unit, &sample.variable_ids()[j], x, values[(i, g)]);
            }
        }
    }
    io::write_panel(path, &out)
}

/// Files written by the smoothing step.
#[derive(Debug)]
pub struct SmoothOutput {
    pub basis_file: PathBuf,
    pub coef_file: PathBuf,
    pub curves_file: PathBuf,
    pub meta_file: PathBuf,
    /// Constant added before the log transform, when enabled.
    pub log_constant: Option<f64>,
}

/// Ingest the panel, optionally log-transform, smooth every series, and
/// persist the sample plus evaluated curves.
pub fn cmd_smooth(config: &PipelineConfig) -> Result<SmoothOutput> {
    let mut panel = io::read_panel(&config.panel)?;
    if panel.records().is_empty() {
        return Err(Error::MissingInput(format!(
            "panel {} has no observations",
            config.panel.display()
        )));
    }
    let log_constant = if config.log_transform {
        let constant = panel.min_positive_value().unwrap_or(0.0);
        for rec in panel.records() {
            if rec.value + constant <= 0.0 {
                return Err(Error::NonPositiveAfterShift {
                    value: rec.value,
                    constant,
                });
            }
        }
        panel.map_values(|v| (v + constant).ln());
        Some(constant)
    } else {
        None
    };

    let mut bases = Vec::with_capacity(panel.d_vars());
    for (j, variable) in panel.variable_ids().iter().enumerate() {
        let n_basis = config
            .n_basis_overrides
            .iter()
            .find(|(name, _)| name == variable)
            .map(|(_, n)| *n)
            .unwrap_or(config.n_basis);
        let (lo, hi) = panel.variable_range(j).ok_or_else(|| Error::MissingSeries {
            unit: "*".into(),
            variable: variable.clone(),
        })?;
        bases.push(BSplineBasis::new(lo, hi, n_basis, config.order)?);
    }
    let sample = smooth(&panel, bases, config.penalty)?;

    ensure_out_dir(config)?;
    let basis_file = config.out_dir.join(BASIS_FILE);
    let coef_file = config.out_dir.join(COEF_FILE);
    io::write_sample(&basis_file, &coef_file, &sample)?;
    let curves_file = config.out_dir.join(CURVES_FILE);
    write_evaluated(&curves_file, &sample, config.n_grid, |j, grid| {
        sample.evaluate(j, grid)
    })?;

    let mut meta = vec![
        ("log_transform", config.log_transform.to_string()),
        ("penalty", config.penalty.to_string()),
        ("order", config.order.to_string()),
    ];
    if let Some(c) = log_constant {
        meta.push(("log_constant", c.to_string()));
    }
    let basis_meta: Vec<(String, String)> = sample
        .variable_ids()
        .iter()
        .enumerate()
        .map(|(j, v)| (format!("n_basis.{v}"), sample.basis(j).n_basis().to_string()))
        .collect();
    for (key, value) in &basis_meta {
        meta.push((key.as_str(), value.clone()));
    }
    let meta_file = config.out_dir.join(SMOOTH_META_FILE);
    io::write_kv(&meta_file, &meta)?;

    Ok(SmoothOutput {
        basis_file,
        coef_file,
        curves_file,
        meta_file,
        log_constant,
    })
}

/// Results of the Moran step.
#[derive(Debug)]
pub struct MoranOutput {
    pub trace: TraceMoran,
    pub test: MoranTest,
    /// Pooled panel-matrix Moran, reported alongside the trace index.
    pub pooled: f64,
    pub curve_file: PathBuf,
    pub test_file: PathBuf,
    pub meta_file: PathBuf,
    pub bivariate_file: Option<PathBuf>,
}

/// Load the smoothed sample, build weights, and run the trace Moran
/// permutation test plus the pointwise curve; with a configured variable
/// pair, also the bivariate curve.
pub fn cmd_moran(config: &PipelineConfig) -> Result<MoranOutput> {
    let sample = load_sample(config)?;
    let weights = build_weights(config, sample.unit_ids())?;
    let (centered, _) = sample.center()?;
    let grid = moran_grid(&centered, config.n_grid);
    let perm = PermutationConfig::new(config.seed).with_permutations(config.n_permutations);
    let (trace, test) = trace_moran_test(&centered, &weights, &grid, &perm)?;
    let pooled = pooled_moran(&centered, &weights)?;

    ensure_out_dir(config)?;
    let curve_file = config.out_dir.join(MORAN_CURVE_FILE);
    io::write_curve(&curve_file, &trace.curve)?;
    let test_file = config.out_dir.join(MORAN_TEST_FILE);
    io::write_test(&test_file, &test)?;
    let meta_file = config.out_dir.join(MORAN_META_FILE);
    io::write_kv(
        &meta_file,
        &[
            ("trace_statistic", trace.statistic.to_string()),
            ("raw_integral", trace.raw_integral.to_string()),
            ("unmasked_measure", trace.unmasked_measure.to_string()),
            ("pooled_moran", pooled.to_string()),
        ],
    )?;

    let bivariate_file = match &config.bivariate {
        Some((a, b)) => {
            let var_index = |name: &str| {
                centered
                    .variable_ids()
                    .iter()
                    .position(|v| v == name)
                    .ok_or_else(|| Error::BadConfig {
                        key: "bivariate".into(),
                        message: format!("unknown variable {name:?}"),
                    })
            };
            let curve =
                bivariate_functional_moran(&centered, var_index(a)?, var_index(b)?, &weights, &grid)?;
            let path = config.out_dir.join(BIVARIATE_FILE);
            io::write_curve(&path, &curve)?;
            Some(path)
        }
        None => None,
    };

    Ok(MoranOutput {
        trace,
        test,
        pooled,
        curve_file,
        test_file,
        meta_file,
        bivariate_file,
    })
}

struct FitResult {
    components: Vec<Component>,
    all_eigenvalues: Vec<f64>,
    total_variance: f64,
    method: &'static str,
}

fn fit_components(
    centered: &FunctionalSample,
    weights: Option<&SpatialWeights>,
    config: &PipelineConfig,
) -> Result<FitResult> {
    if config.fpca {
        let n_comp = if config.n_pos == 0 {
            centered.score_dim()
        } else {
            config.n_pos
        };
        let result = mfpca(centered, n_comp)?;
        Ok(FitResult {
            components: result.components,
            all_eigenvalues: result.all_eigenvalues,
            total_variance: result.total_variance,
            method: "mfpca",
        })
    } else {
        let weights = weights.expect("spatial method needs weights");
        let result = mfaspca(centered, weights, config.n_pos, config.n_neg)?;
        Ok(FitResult {
            components: result.components,
            all_eigenvalues: result.all_eigenvalues,
            total_variance: result.total_variance,
            method: "mfaspca",
        })
    }
}

/// Results of the eigenanalysis step.
#[derive(Debug)]
pub struct SpcaOutput {
    pub eigen_rows: Vec<EigenRow>,
    pub eigen_file: PathBuf,
    pub component_tests_file: PathBuf,
    pub eigenfunctions_file: PathBuf,
    pub scores_file: PathBuf,
    pub score_table_file: Option<PathBuf>,
    pub reconstruction_file: PathBuf,
    pub meta_file: PathBuf,
}

/// Load the smoothed sample, run the configured eigenproblem, test each
/// component's scores for spatial autocorrelation, and write the eigen
/// table, per-component tests, eigenfunction curves, scores, the score map
/// (when coordinates exist) and the truncated reconstruction.
pub fn cmd_spca(config: &PipelineConfig) -> Result<SpcaOutput> {
    let sample = load_sample(config)?;
    let weights = build_weights(config, sample.unit_ids())?;
    let (centered, _) = sample.center()?;
    let fit = fit_components(&centered, Some(&weights), config)?;

    let mut eigen_rows = Vec::new();
    let mut test_rows = Vec::new();
    for comp in &fit.components {
        let positive = comp.eigenvalue >= 0.0;
        let alternative = if positive {
            Alternative::Greater
        } else {
            Alternative::Less
        };
        let test = classical_moran_test(
            &comp.scores,
            &weights,
            &PermutationConfig::new(config.seed)
                .with_permutations(config.n_permutations)
                .with_alternative(alternative),
        )?;
        eigen_rows.push(EigenRow {
            component: comp.label.clone(),
            eigenvalue: comp.eigenvalue,
            sign: if positive { "pos" } else { "neg" }.into(),
            var_explained: comp.var_explained,
            score_moran: Some(test.statistic),
        });
        test_rows.push(ComponentTestRow {
            component: comp.label.clone(),
            statistic: test.statistic,
            p_value: test.p_value,
            perm_mean: test.perm_mean,
            perm_sd: test.perm_sd,
            n_permutations: test.n_permutations,
            seed: test.seed,
            stars: significance_stars(test.p_value).to_string(),
        });
    }

    let mut phi_rows = Vec::new();
    for comp in &fit.components {
        for (j, variable) in centered.variable_ids().iter().enumerate() {
            let (lo, hi) = centered.basis(j).domain();
            let grid = linspace(lo, hi, config.n_grid);
            let design = centered.basis(j).eval_matrix(&grid)?;
            let phi = &design * &comp.eigenfn_coefs[j];
            for (g, &x) in grid.iter().enumerate() {
                phi_rows.push(EigenfunctionRow {
                    component: comp.label.clone(),
                    variable: variable.clone(),
                    x,
                    phi: phi[g],
                });
            }
        }
    }

    let mut score_rows = Vec::new();
    for comp in &fit.components {
        for (i, unit) in centered.unit_ids().iter().enumerate() {
            score_rows.push(ScoreRow {
                unit: unit.clone(),
                component: comp.label.clone(),
                score: comp.scores[i],
            });
        }
    }

    ensure_out_dir(config)?;
    let eigen_file = config.out_dir.join(EIGEN_FILE);
    io::write_eigen_table(&eigen_file, &eigen_rows)?;
    let component_tests_file = config.out_dir.join(COMPONENT_TESTS_FILE);
    io::write_component_tests(&component_tests_file, &test_rows)?;
    let eigenfunctions_file = config.out_dir.join(EIGENFUNCTIONS_FILE);
    io::write_eigenfunctions(&eigenfunctions_file, &phi_rows)?;
    let scores_file = config.out_dir.join(SCORES_FILE);
    io::write_scores(&scores_file, &score_rows)?;

    let score_table_file = match &config.coords {
        Some(path) => {
            let coords = load_coords(path, centered.unit_ids())?;
            let records = score_table(&fit.components, centered.unit_ids(), &coords)?;
            let path = config.out_dir.join(SCORE_TABLE_FILE);
            io::write_score_table(&path, &records)?;
            Some(path)
        }
        None => None,
    };

    let k = config.reconstruct_k.unwrap_or(fit.components.len());
    let reconstruction_file = config.out_dir.join(RECONSTRUCTION_FILE);
    write_evaluated(&reconstruction_file, &centered, config.n_grid, |j, grid| {
        reconstruct(&centered, &fit.components, k, j, grid)
    })?;

    let meta_file = config.out_dir.join(SPCA_META_FILE);
    io::write_kv(
        &meta_file,
        &[
            ("method", fit.method.to_string()),
            ("n_components", fit.components.len().to_string()),
            ("reconstruct_k", k.to_string()),
            ("total_variance", fit.total_variance.to_string()),
            ("stars", stars_legend().to_string()),
            (
                "all_eigenvalues",
                fit.all_eigenvalues
                    .iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
        ],
    )?;

    Ok(SpcaOutput {
        eigen_rows,
        eigen_file,
        component_tests_file,
        eigenfunctions_file,
        scores_file,
        score_table_file,
        reconstruction_file,
        meta_file,
    })
}

/// Results of the standalone reconstruction step.
#[derive(Debug)]
pub struct ReconstructOutput {
    pub reconstruction_file: PathBuf,
    pub meta_file: PathBuf,
    pub k: usize,
    /// Frobenius error of the reconstruction against the smoothed curves,
    /// relative to their norm, over the evaluation grid.
    pub relative_error: f64,
}

/// Re-run the configured eigenproblem and write the truncated
/// reconstruction for the chosen number of components.
pub fn cmd_reconstruct(config: &PipelineConfig) -> Result<ReconstructOutput> {
    let sample = load_sample(config)?;
    let weights = if config.fpca {
        None
    } else {
        Some(build_weights(config, sample.unit_ids())?)
    };
    let (centered, _) = sample.center()?;
    let fit = fit_components(&centered, weights.as_ref(), config)?;
    let k = config.reconstruct_k.unwrap_or(fit.components.len());

    ensure_out_dir(config)?;
    let reconstruction_file = config.out_dir.join(RECONSTRUCTION_FILE);
    let mut num = 0.0;
    let mut den = 0.0;
    write_evaluated(&reconstruction_file, &centered, config.n_grid, |j, grid| {
        let approx = reconstruct(&centered, &fit.components, k, j, grid)?;
        let exact = sample.evaluate(j, grid)?;
        num += (&approx - &exact).norm_squared();
        den += exact.norm_squared();
        Ok(approx)
    })?;
    let relative_error = if den > 0.0 { (num / den).sqrt() } else { 0.0 };
    let meta_file = config.out_dir.join(RECONSTRUCT_META_FILE);
    io::write_kv(
        &meta_file,
        &[
            ("method", fit.method.to_string()),
            ("k", k.to_string()),
            ("relative_error", relative_error.to_string()),
        ],
    )?;
    Ok(ReconstructOutput {
        reconstruction_file,
        meta_file,
        k,
        relative_error,
    })
}

/// Median and IQR of variance explained, median score Moran, and the share
/// of replicates significant at 5%, per (method, component, sign) in first
/// appearance order.
pub fn summarize_experiment(rows: &[ExperimentRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(String, String, String)> = Vec::new();
    for row in rows {
        let key = (row.method.clone(), row.component.clone(), row.sign.clone());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(method, component, sign)| {
            let group: Vec<&ExperimentRow> = rows
                .iter()
                .filter(|r| r.method == method && r.component == component && r.sign == sign)
                .collect();
            let var: Vec<f64> = group.iter().map(|r| r.var_explained).collect();
            let moran: Vec<f64> = group.iter().map(|r| r.score_moran).collect();
            let significant = group.iter().filter(|r| r.p_value < 0.05).count();
            SummaryRow {
                method,
                component,
                sign,
                median_var_explained: median(&var),
                iqr_var_explained: iqr(&var),
                median_score_moran: median(&moran),
                share_significant: significant as f64 / group.len() as f64,
            }
        })
        .collect()
}

/// Results of the simulation step.
#[derive(Debug)]
pub struct SimulateOutput {
    pub experiment_file: PathBuf,
    pub summary_file: PathBuf,
    pub n_rows: usize,
}

/// Run the replicated experiment and write the replicate table plus its
/// summary into `out_dir`.
pub fn cmd_simulate(config: &SimConfig, out_dir: &Path) -> Result<SimulateOutput> {
    let rows = run_experiment(config)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::Io {
        context: format!("creating {}", out_dir.display()),
        source: e,
    })?;
    let experiment_file = out_dir.join(EXPERIMENT_FILE);
    io::write_experiment(&experiment_file, &rows)?;
    let summary_file = out_dir.join(SUMMARY_FILE);
    io::write_summary(&summary_file, &summarize_experiment(&rows))?;
    Ok(SimulateOutput {
        experiment_file,
        summary_file,
        n_rows: rows.len(),
    })
}
