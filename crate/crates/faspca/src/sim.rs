//! Simulation of spatially autocorrelated functional data: Gaussian-process
//! curves fed through a simultaneous autoregressive (SAR) coupling over a
//! spatial weight matrix, plus the replicated method-comparison experiment.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::moran::{classical_moran_test, Alternative, PermutationConfig};
use crate::sample::{linspace, ObservationPanel};
use crate::spca::{mfaspca, mfpca};
use crate::weights::{
    contiguity_weights, knn_weights, ContiguityRule, SpatialWeights,
};

/// How simulated units are wired together.
#[derive(Debug, Clone)]
pub enum WeightSpec {
    /// Units placed uniformly at random on the lattice, k nearest neighbours.
    Knn { k: usize },
    /// Units on a compact rectangle, edge contiguity.
    Rook,
    /// Units on a compact rectangle, edge-or-corner contiguity.
    Queen,
    /// User-supplied weights; units are laid out on a compact rectangle so
    /// coordinates exist for score maps.
    Custom(SpatialWeights),
}

/// Simulation settings. `model1` uses one variable and no observation noise;
/// the multivariate SAR uses all fields.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub n_units: usize,
    /// Units are placed on a `grid_side x grid_side` lattice.
    pub grid_side: usize,
    pub d_vars: usize,
    pub n_timepoints: usize,
    /// Autoregressive coupling strength, in `(-1, 1)`.
    pub rho: f64,
    pub weight_spec: WeightSpec,
    pub gp_lengthscale: f64,
    pub gp_variance: f64,
    /// White observation noise standard deviation.
    pub noise_sd: f64,
    pub n_replicates: usize,
    pub seed: u64,
    /// Cubic B-spline basis size used when the experiment smooths its data.
    pub n_basis: usize,
    /// Permutations per score Moran test in the experiment.
    pub n_permutations: usize,
}

impl SimConfig {
    /// Defaults: 50x50 lattice, 101 time points, 5 nearest neighbours,
    /// lengthscale 0.1, unit GP variance, noise sd 0.1, 50 replicates,
    /// 10 basis functions, 999 permutations.
    pub fn new(n_units: usize, d_vars: usize, rho: f64, seed: u64) -> Self {
        Self {
            n_units,
            grid_side: 50,
            d_vars,
            n_timepoints: 101,
            rho,
            weight_spec: WeightSpec::Knn { k: 5 },
            gp_lengthscale: 0.1,
            gp_variance: 1.0,
            noise_sd: 0.1,
            n_replicates: 50,
            seed,
            n_basis: 10,
            n_permutations: 999,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_units < 2 {
            return Err(Error::BadSimConfig(format!(
                "need at least 2 units, got {}",
                self.n_units
            )));
        }
        if self.d_vars == 0 {
            return Err(Error::BadSimConfig("need at least 1 variable".into()));
        }
        if self.n_timepoints < 2 {
            return Err(Error::BadSimConfig(format!(
                "need at least 2 time points, got {}",
                self.n_timepoints
            )));
        }
        if !self.rho.is_finite() || self.rho.abs() >= 1.0 {
            return Err(Error::BadRho(self.rho));
        }
        if !(self.gp_lengthscale > 0.0) || !(self.gp_variance > 0.0) {
            return Err(Error::BadSimConfig(
                "GP lengthscale and variance must be positive".into(),
            ));
        }
        if !(self.noise_sd >= 0.0) || !self.noise_sd.is_finite() {
            return Err(Error::BadSimConfig(format!(
                "noise sd must be finite and nonnegative, got {}",
                self.noise_sd
            )));
        }
        if self.n_basis < 4 || self.n_basis > self.n_timepoints {
            return Err(Error::BadSimConfig(format!(
                "basis size {} must lie in 4..={}",
                self.n_basis, self.n_timepoints
            )));
        }
        match &self.weight_spec {
            WeightSpec::Knn { k } => {
                if *k == 0 || *k >= self.n_units {
                    return Err(Error::BadNeighbourCount {
                        k: *k,
                        n: self.n_units,
                    });
                }
                if self.n_units > self.grid_side * self.grid_side {
                    return Err(Error::BadSimConfig(format!(
                        "{} units do not fit a {side} x {side} lattice",
                        self.n_units,
                        side = self.grid_side
                    )));
                }
            }
            WeightSpec::Custom(w) => {
                if w.n_units() != self.n_units {
                    return Err(Error::UnitCountMismatch {
                        left: self.n_units,
                        right: w.n_units(),
                    });
                }
            }
            WeightSpec::Rook | WeightSpec::Queen => {}
        }
        Ok(())
    }
}

/// Reusable sampler for a Gaussian process with exponential covariance
/// `K(t, u) = variance * exp(-|t - u| / lengthscale)` on a fixed grid.
/// A `1e-10 * variance` diagonal jitter keeps the Cholesky factorization
/// stable without breaking the scale equivariance of the draws.
pub struct GpSampler {
    chol: DMatrix<f64>,
}

impl GpSampler {
    pub fn new(grid: &[f64], lengthscale: f64, variance: f64) -> Result<Self> {
        if !(lengthscale > 0.0) || !(variance > 0.0) {
            return Err(Error::BadSimConfig(
                "GP lengthscale and variance must be positive".into(),
            ));
        }
        let n = grid.len();
        let mut cov = DMatrix::from_fn(n, n, |i, j| {
            variance * (-(grid[i] - grid[j]).abs() / lengthscale).exp()
        });
        for i in 0..n {
            cov[(i, i)] += 1e-10 * variance;
        }
        let chol = cov
            .cholesky()
            .ok_or(Error::CovarianceNotPositiveDefinite)?
            .l();
        Ok(Self { chol })
    }

    /// One mean-zero draw on the grid.
    pub fn draw(&self, rng: &mut impl Rng) -> DVector<f64> {
        let z = DVector::from_fn(self.chol.nrows(), |_, _| rng.sample(StandardNormal));
        &self.chol * z
    }
}

/// One draw from `N(0, K)` with the exponential covariance, via Cholesky of
/// `K + 1e-10 I`.
pub fn gp_sample(
    grid: &[f64],
    lengthscale: f64,
    variance: f64,
    rng: &mut impl Rng,
) -> Result<DVector<f64>> {
    Ok(GpSampler::new(grid, lengthscale, variance)?.draw(rng))
}

/// A simulated SAR data set with its intermediate stages exposed.
pub struct SarDraw {
    /// Unit coordinates (lattice row, lattice column).
    pub coords: Vec<(f64, f64)>,
    /// Row-standardized weights actually used in the autoregression.
    pub weights: SpatialWeights,
    /// Evaluation grid on `[0, 1]`.
    pub timepoints: Vec<f64>,
    /// Per variable, the latent `n_units x n_timepoints` signal
    /// `X_i(t) = t alpha_i + gp_i(t)`.
    pub x: Vec<DMatrix<f64>>,
    /// Per variable, the right-hand side of the solve: `x` plus white noise.
    pub rhs: Vec<DMatrix<f64>>,
    /// Per variable, the response solved from `(I - rho W) Y = rhs`.
    pub y: Vec<DMatrix<f64>>,
}

impl SarDraw {
    /// Long-format observation panel of the response, with coordinates
    /// attached. Units are `u0..`, variables `v0..`.
    pub fn panel(&self) -> ObservationPanel {
        let mut panel = ObservationPanel::new();
        let n = self.coords.len();
        for i in 0..n {
            for (j, y) in self.y.iter().enumerate() {
                for (g, &t) in self.timepoints.iter().enumerate() {
                    panel.push(&format!("u{i}"), &format!("v{j}"), t, y[(i, g)]);
                }
            }
        }
        panel
            .set_coords(self.coords.clone())
            .expect("one coordinate per unit");
        panel
    }
}

/// Compact `nrows x ncols` rectangle containing exactly `n` cells: the most
/// square divisor pair, row-major. Prime `n` degenerates to a strip.
pub fn compact_rectangle(n: usize) -> (usize, usize) {
    let mut best = 1;
    let mut d = 1;
    while d * d <= n {
        if n % d == 0 {
            best = d;
        }
        d += 1;
    }
    (best, n / best)
}

fn place_units(
    config: &SimConfig,
    rng: &mut impl Rng,
) -> Result<(Vec<(f64, f64)>, SpatialWeights)> {
    match &config.weight_spec {
        WeightSpec::Knn { k } => {
            let side = config.grid_side;
            let chosen = rand::seq::index::sample(rng, side * side, config.n_units);
            let coords: Vec<(f64, f64)> = chosen
                .iter()
                .map(|cell| ((cell / side) as f64, (cell % side) as f64))
                .collect();
            let weights = knn_weights(&coords, *k)?;
            Ok((coords, weights))
        }
        WeightSpec::Rook | WeightSpec::Queen => {
            let (nrows, ncols) = compact_rectangle(config.n_units);
            let cells = crate::weights::lattice_cells(nrows, ncols);
            let rule = match config.weight_spec {
                WeightSpec::Rook => ContiguityRule::Rook,
                _ => ContiguityRule::Queen,
            };
            let weights = contiguity_weights(&cells, rule)?;
            let coords = cells.iter().map(|&(r, c)| (r as f64, c as f64)).collect();
            Ok((coords, weights))
        }
        WeightSpec::Custom(w) => {
            let (nrows, ncols) = compact_rectangle(config.n_units);
            let cells = crate::weights::lattice_cells(nrows, ncols);
            let coords = cells.iter().map(|&(r, c)| (r as f64, c as f64)).collect();
            Ok((coords, w.clone()))
        }
    }
}

/// Core SAR generator shared by both models. `noise_sd` overrides the config
/// so the first model can force noiseless generation.
fn sar_draw_with_noise(
    config: &SimConfig,
    noise_sd: f64,
    rng: &mut impl Rng,
) -> Result<SarDraw> {
    config.validate()?;
    let n = config.n_units;
    let (coords, raw_weights) = place_units(config, rng)?;
    let (weights, _isolated) = raw_weights.row_standardize();
    let timepoints = linspace(0.0, 1.0, config.n_timepoints);
    let sampler = GpSampler::new(&timepoints, config.gp_lengthscale, config.gp_variance)?;

    let mut x = Vec::with_capacity(config.d_vars);
    for _ in 0..config.d_vars {
        let mut xj = DMatrix::zeros(n, config.n_timepoints);
        for i in 0..n {
            let alpha = rng.random_range(-3.0..3.0);
            let gp = sampler.draw(rng);
            for (g, &t) in timepoints.iter().enumerate() {
                xj[(i, g)] = t * alpha + gp[g];
            }
        }
        x.push(xj);
    }
    let rhs: Vec<DMatrix<f64>> = if noise_sd > 0.0 {
        x.iter()
            .map(|xj| {
                xj.map(|v| {
                    let eps: f64 = rng.sample(StandardNormal);
                    v + noise_sd * eps
                })
            })
            .collect()
    } else {
        x.clone()
    };

    let system = DMatrix::identity(n, n) - weights.to_dense() * config.rho;
    let lu = system.lu();
    let mut y = Vec::with_capacity(config.d_vars);
    for rhs_j in &rhs {
        let solved = lu
            .solve(rhs_j)
            .ok_or(Error::SingularAutoregression { rho: config.rho })?;
        y.push(solved);
    }
    Ok(SarDraw {
        coords,
        weights,
        timepoints,
        x,
        rhs,
        y,
    })
}

/// First simulation model: one variable, `X_i(t) = t alpha_i + gp_i(t)` with
/// `alpha_i` uniform on `(-3, 3)`, coupled through `(I - rho W)` with no
/// observation noise. `noise_sd` in the config is ignored.
pub fn model1(config: &SimConfig, rng: &mut impl Rng) -> Result<SarDraw> {
    if config.d_vars != 1 {
        return Err(Error::BadSimConfig(format!(
            "the first model is univariate, got d = {}",
            config.d_vars
        )));
    }
    sar_draw_with_noise(config, 0.0, rng)
}

/// Multivariate SAR model: independent latent signals per variable, white
/// observation noise of sd `noise_sd` added before the spatial solve.
pub fn multivariate_sar(config: &SimConfig, rng: &mut impl Rng) -> Result<SarDraw> {
    sar_draw_with_noise(config, config.noise_sd, rng)
}

/// One row of the replicated comparison experiment.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ExperimentRow {
    /// 1-based replicate index.
    pub replicate: usize,
    /// `mfaspca` or `mfpca`.
    pub method: String,
    /// Component label within the method, e.g. `pos1` or `pc2`.
    pub component: String,
    /// `pos` or `neg` eigenvalue class.
    pub sign: String,
    /// Percent of the component's eigenvalue class it carries. For the
    /// classical method all eigenvalues are one class, so this is the usual
    /// eigenvalue share.
    pub var_explained: f64,
    /// Classical Moran's I of the component scores.
    pub score_moran: f64,
    /// Permutation p-value of the score Moran statistic, one-sided toward
    /// the component's eigenvalue sign.
    pub p_value: f64,
}

/// Run the replicated experiment: per replicate, simulate, smooth, center,
/// run both methods with 3 components per class, and record each kept
/// component. Replicates use independent RNG streams, so the table is
/// deterministic given the seed and identical under any thread schedule.
pub fn run_experiment(config: &SimConfig) -> Result<Vec<ExperimentRow>> {
    config.validate()?;
    let mut results: Vec<Result<Vec<ExperimentRow>>> = Vec::new();
    (0..config.n_replicates)
        .into_par_iter()
        .map(|r| run_replicate(config, r))
        .collect_into_vec(&mut results);
    let mut table = Vec::new();
    for rows in results {
        table.extend(rows?);
    }
    Ok(table)
}

fn run_replicate(config: &SimConfig, replicate: usize) -> Result<Vec<ExperimentRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(replicate as u64 + 1);
    let draw = multivariate_sar(config, &mut rng)?;
    let panel = draw.panel();
    let bases = (0..config.d_vars)
        .map(|_| crate::basis::BSplineBasis::new(0.0, 1.0, config.n_basis, 4))
        .collect::<Result<Vec<_>>>()?;
    let sample = crate::sample::smooth(&panel, bases, 0.0)?;
    let (centered, _) = sample.center()?;

    // Permutation seed varies per replicate but not per component.
    let perm_seed = config.seed.wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(replicate as u64 + 1));
    let mut rows = Vec::new();

    let spatial = mfaspca(&centered, &draw.weights, 3, 3)?;
    let pos_total: f64 = spatial
        .all_eigenvalues
        .iter()
        .filter(|&&a| a > 0.0)
        .sum();
    let neg_total: f64 = spatial
        .all_eigenvalues
        .iter()
        .filter(|&&a| a < 0.0)
        .map(|a| a.abs())
        .sum();
    for comp in &spatial.components {
        let positive = comp.eigenvalue > 0.0;
        let class_total = if positive { pos_total } else { neg_total };
        let alternative = if positive {
            Alternative::Greater
        } else {
            Alternative::Less
        };
        let test = classical_moran_test(
            &comp.scores,
            &draw.weights,
            &PermutationConfig::new(perm_seed)
                .with_permutations(config.n_permutations)
                .with_alternative(alternative),
        )?;
        rows.push(ExperimentRow {
            replicate: replicate + 1,
            method: "mfaspca".into(),
            component: comp.label.clone(),
            sign: if positive { "pos".into() } else { "neg".into() },
            var_explained: 100.0 * comp.eigenvalue.abs() / class_total,
            score_moran: test.statistic,
            p_value: test.p_value,
        });
    }

    let classical = mfpca(&centered, 3)?;
    for comp in &classical.components {
        let test = classical_moran_test(
            &comp.scores,
            &draw.weights,
            &PermutationConfig::new(perm_seed).with_permutations(config.n_permutations),
        )?;
        rows.push(ExperimentRow {
            replicate: replicate + 1,
            method: "mfpca".into(),
            component: comp.label.clone(),
            sign: "pos".into(),
            var_explained: comp.var_explained,
            score_moran: test.statistic,
            p_value: test.p_value,
        });
    }
    Ok(rows)
}

/// Sum of `var_explained` over a replicate's positive-class components of
/// one method, counting at most the first `k` by rank.
pub fn top_positive_share(
    rows: &[ExperimentRow],
    method: &str,
    replicate: usize,
    k: usize,
) -> f64 {
    let mut shares: Vec<f64> = rows
        .iter()
        .filter(|r| r.replicate == replicate && r.method == method && r.sign == "pos")
        .map(|r| r.var_explained)
        .collect();
    shares.sort_by(|a, b| b.partial_cmp(a).unwrap());
    shares.into_iter().take(k).sum()
}

/// Median of a sample; the midpoint of the central pair for even sizes.
pub fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Interquartile range via the linear-interpolation quartile convention.
pub fn iqr(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    if n < 2 {
        return 0.0;
    }
    let quantile = |q: f64| -> f64 {
        let pos = q * (n - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
    };
    quantile(0.75) - quantile(0.25)
}
