//! Spatially informed functional principal component analysis. The spatial
//! variant finds score directions with extreme spatially weighted variance,
//! so its eigenvalues split into a positive (global structure) and a negative
//! (local contrast) class; the classical multivariate FPCA baseline maximizes
//! plain variance.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::moran::classical_moran;
use crate::sample::FunctionalSample;
use crate::weights::SpatialWeights;

/// Kept components with eigenvalues below this relative threshold are
/// considered degenerate and dropped.
const DEGENERATE_EPS: f64 = 1e-12;

/// One kept principal component.
#[derive(Debug, Clone)]
pub struct Component {
    /// Stable label: `pos<k>` / `neg<k>` for the spatial method, `pc<k>` for
    /// the classical baseline, ranked within each class.
    pub label: String,
    /// `α_k` (spatial) or `λ_k` (classical).
    pub eigenvalue: f64,
    /// Unit-norm loading in the orthonormal coefficient space, length `p`.
    pub loading: DVector<f64>,
    /// Score per unit, the data matrix applied to the loading.
    pub scores: DVector<f64>,
    /// Per variable, eigenfunction coefficients in the raw B-spline basis.
    pub eigenfn_coefs: Vec<DVector<f64>>,
    /// Percent of total functional variance carried by the scores.
    pub var_explained: f64,
    /// Classical Moran's I of the score vector, when a weight matrix applies.
    pub score_moran: Option<f64>,
}

impl Component {
    /// Score variance `χᵀχ / n`.
    pub fn score_variance(&self) -> f64 {
        self.scores.norm_squared() / self.scores.len() as f64
    }
}

/// Result of the spatial eigenproblem.
#[derive(Debug, Clone)]
pub struct SpcaResult {
    /// Kept components ordered by `|α_k|` descending, positive eigenvalues
    /// before negative ones at ties.
    pub components: Vec<Component>,
    pub n_pos_kept: usize,
    pub n_neg_kept: usize,
    /// All `p` eigenvalues, descending.
    pub all_eigenvalues: Vec<f64>,
    /// Total functional variance of the centered sample.
    pub total_variance: f64,
}

/// Result of the classical baseline.
#[derive(Debug, Clone)]
pub struct FpcaResult {
    /// Kept components in descending eigenvalue order.
    pub components: Vec<Component>,
    /// All `p` eigenvalues, descending, clamped at zero.
    pub all_eigenvalues: Vec<f64>,
    pub total_variance: f64,
}

/// One row of the score-map table behind areal score plots.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ScoreRecord {
    pub unit: String,
    pub s1: f64,
    pub s2: f64,
    pub component: String,
    pub score: f64,
    pub abs_score: f64,
    /// `+`, `-`, or `0`.
    pub sign: char,
}

/// Descending symmetric eigendecomposition as (eigenvalue, eigenvector)
/// pairs with the sign convention applied: the first largest-magnitude entry
/// of each vector is nonnegative.
fn sorted_symmetric_eigen(h: &DMatrix<f64>) -> Vec<(f64, DVector<f64>)> {
    let eigen = h.clone().symmetric_eigen();
    let mut pairs: Vec<(f64, DVector<f64>)> = eigen
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(k, &val)| (val, eigen.eigenvectors.column(k).clone_owned()))
        .collect();
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    for (_, vec) in &mut pairs {
        let mut idx = 0;
        for (i, v) in vec.iter().enumerate() {
            if v.abs() > vec[idx].abs() {
                idx = i;
            }
        }
        if vec[idx] < 0.0 {
            *vec = -&*vec;
        }
    }
    pairs
}

/// Map an orthonormal-space loading back to per-variable raw B-spline
/// coefficients of the eigenfunction.
fn eigenfunction_coefs(sample: &FunctionalSample, loading: &DVector<f64>) -> Result<Vec<DVector<f64>>> {
    let mut out = Vec::with_capacity(sample.d_vars());
    for (j, range) in sample.score_blocks().into_iter().enumerate() {
        let block = DVector::from_iterator(range.len(), loading.rows(range.start, range.len()).iter().cloned());
        out.push(sample.basis(j).raw_from_orthonormal(&block));
    }
    Ok(out)
}

/// Total functional variance `(1/n) Σᵢ ‖X row i‖²` of the score matrix.
fn total_variance_of(x: &DMatrix<f64>) -> f64 {
    x.norm_squared() / x.nrows() as f64
}

fn build_component(
    label: String,
    eigenvalue: f64,
    loading: DVector<f64>,
    x: &DMatrix<f64>,
    sample: &FunctionalSample,
    total_variance: f64,
    weights: Option<&SpatialWeights>,
) -> Result<Component> {
    let scores = x * &loading;
    let score_moran = match weights {
        Some(w) => Some(classical_moran(&scores, w)?),
        None => None,
    };
    let var_explained = 100.0 * (scores.norm_squared() / scores.len() as f64) / total_variance;
    Ok(Component {
        label,
        eigenvalue,
        loading: loading.clone(),
        scores,
        eigenfn_coefs: eigenfunction_coefs(sample, &loading)?,
        var_explained,
        score_moran,
    })
}

/// The spatial cross-product matrix `H = (1/2n) Xᵀ(W + Wᵀ)X` in the
/// orthonormal coefficient space.
fn spatial_h(x: &DMatrix<f64>, weights: &SpatialWeights) -> DMatrix<f64> {
    let wx = weights.symmetrized().apply_matrix(x);
    (x.transpose() * wx) / x.nrows() as f64
}

fn mfaspca_core(
    sample: &FunctionalSample,
    x: &DMatrix<f64>,
    h: &DMatrix<f64>,
    weights: Option<&SpatialWeights>,
    n_pos: usize,
    n_neg: usize,
) -> Result<SpcaResult> {
    let p = x.ncols();
    if n_pos + n_neg > p {
        return Err(Error::TooManyComponents {
            requested: n_pos + n_neg,
            p,
        });
    }
    let pairs = sorted_symmetric_eigen(h);
    let all_eigenvalues: Vec<f64> = pairs.iter().map(|(val, _)| *val).collect();
    let max_abs = all_eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max_abs == 0.0 {
        return Err(Error::DegenerateSample);
    }
    let keep = |val: f64| val.abs() >= DEGENERATE_EPS * max_abs;
    let total_variance = total_variance_of(x);

    let mut kept: Vec<(String, f64, DVector<f64>)> = Vec::new();
    let mut n_pos_kept = 0;
    for (val, vec) in pairs.iter().take(n_pos) {
        if *val > 0.0 && keep(*val) {
            n_pos_kept += 1;
            kept.push((format!("pos{n_pos_kept}"), *val, vec.clone()));
        }
    }
    let mut n_neg_kept = 0;
    for (val, vec) in pairs.iter().rev().take(n_neg) {
        if *val < 0.0 && keep(*val) {
            n_neg_kept += 1;
            kept.push((format!("neg{n_neg_kept}"), *val, vec.clone()));
        }
    }
    // Order by |eigenvalue| descending, positives first at exact ties.
    kept.sort_by(|a, b| {
        b.1.abs()
            .partial_cmp(&a.1.abs())
            .unwrap()
            .then_with(|| b.1.partial_cmp(&a.1).unwrap())
    });

    let components = kept
        .into_iter()
        .map(|(label, val, vec)| {
            build_component(label, val, vec, x, sample, total_variance, weights)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SpcaResult {
        components,
        n_pos_kept,
        n_neg_kept,
        all_eigenvalues,
        total_variance,
    })
}

/// Multivariate functional areal spatial PCA: eigendecomposition of the
/// spatially weighted score cross-product `H = (1/2n) Xᵀ(W+Wᵀ)X`, keeping
/// the `n_pos` largest and `n_neg` smallest eigenpairs. Eigenvalues satisfy
/// `α_k = var(χ_k) · Ĩ(χ_k)`: spatially smooth directions score positive,
/// locally contrasting directions negative. Degenerate (near-zero)
/// eigenvalues are never kept, so fewer than `n_pos + n_neg` components can
/// come back.
pub fn mfaspca(
    sample: &FunctionalSample,
    weights: &SpatialWeights,
    n_pos: usize,
    n_neg: usize,
) -> Result<SpcaResult> {
    if !sample.is_centered() {
        return Err(Error::NotCentered);
    }
    if sample.n_units() != weights.n_units() {
        return Err(Error::UnitCountMismatch {
            left: sample.n_units(),
            right: weights.n_units(),
        });
    }
    let x = sample.orthonormal_scores()?;
    let h = spatial_h(&x, weights);
    mfaspca_core(sample, &x, &h, Some(weights), n_pos, n_neg)
}

/// Classical multivariate functional PCA baseline: eigendecomposition of
/// `(1/n) XᵀX`, top `n_comp` components. Components beyond the nondegenerate
/// rank are dropped.
pub fn mfpca(sample: &FunctionalSample, n_comp: usize) -> Result<FpcaResult> {
    if !sample.is_centered() {
        return Err(Error::NotCentered);
    }
    let x = sample.orthonormal_scores()?;
    let p = x.ncols();
    if n_comp > p {
        return Err(Error::TooManyComponents {
            requested: n_comp,
            p,
        });
    }
    let m = (x.transpose() * &x) / x.nrows() as f64;
    let pairs = sorted_symmetric_eigen(&m);
    let all_eigenvalues: Vec<f64> = pairs.iter().map(|(val, _)| val.max(0.0)).collect();
    let max_val = all_eigenvalues.first().copied().unwrap_or(0.0);
    if max_val == 0.0 {
        return Err(Error::DegenerateSample);
    }
    let total_variance = total_variance_of(&x);
    let mut components = Vec::new();
    for (rank, (val, vec)) in pairs.into_iter().take(n_comp).enumerate() {
        let val = val.max(0.0);
        if val < DEGENERATE_EPS * max_val {
            break;
        }
        components.push(build_component(
            format!("pc{}", rank + 1),
            val,
            vec,
            &x,
            sample,
            total_variance,
            None,
        )?);
    }
    Ok(FpcaResult {
        components,
        all_eigenvalues,
        total_variance,
    })
}

/// Percent of `total_variance` carried by each component's scores.
pub fn variance_explained(components: &[Component], total_variance: f64) -> Result<Vec<f64>> {
    if !(total_variance > 0.0) {
        return Err(Error::ZeroTotalVariance);
    }
    Ok(components
        .iter()
        .map(|c| 100.0 * c.score_variance() / total_variance)
        .collect())
}

/// Truncated expansion: the mean curve plus the first `k` components,
/// `X̂_i(x) = μ̂(x) + Σ χ_{c,i} φ̂_c(x)`, evaluated for one variable. Scores
/// are the expansion coefficients because loadings are orthonormal. Returns
/// an `n_units x |abscissae|` matrix.
pub fn reconstruct(
    sample: &FunctionalSample,
    components: &[Component],
    k: usize,
    variable: usize,
    abscissae: &[f64],
) -> Result<DMatrix<f64>> {
    if k > components.len() {
        return Err(Error::BadComponentCount {
            requested: k,
            available: components.len(),
        });
    }
    if variable >= sample.d_vars() {
        return Err(Error::BadVariable {
            index: variable,
            d_vars: sample.d_vars(),
        });
    }
    let mean = sample.evaluate_mean(variable, abscissae)?;
    let design = sample.basis(variable).eval_matrix(abscissae)?;
    let mut out = DMatrix::zeros(sample.n_units(), abscissae.len());
    for mut row in out.row_iter_mut() {
        row.copy_from(&mean.transpose());
    }
    for comp in &components[..k] {
        let phi = &design * &comp.eigenfn_coefs[variable];
        for i in 0..sample.n_units() {
            for (g, &value) in phi.iter().enumerate() {
                out[(i, g)] += comp.scores[i] * value;
            }
        }
    }
    Ok(out)
}

/// Flatten components into per-unit score map records with coordinates.
pub fn score_table(
    components: &[Component],
    unit_ids: &[String],
    coords: &[(f64, f64)],
) -> Result<Vec<ScoreRecord>> {
    if coords.len() != unit_ids.len() {
        return Err(Error::CoordCountMismatch {
            coords: coords.len(),
            units: unit_ids.len(),
        });
    }
    let mut out = Vec::new();
    for comp in components {
        if comp.scores.len() != unit_ids.len() {
            return Err(Error::UnitCountMismatch {
                left: comp.scores.len(),
                right: unit_ids.len(),
            });
        }
        for (i, unit) in unit_ids.iter().enumerate() {
            let score = comp.scores[i];
            out.push(ScoreRecord {
                unit: unit.clone(),
                s1: coords[i].0,
                s2: coords[i].1,
                component: comp.label.clone(),
                score,
                abs_score: score.abs(),
                sign: if score > 0.0 {
                    '+'
                } else if score < 0.0 {
                    '-'
                } else {
                    '0'
                },
            });
        }
    }
    Ok(out)
}
