//! Moran's I spatial autocorrelation statistics: the classical scalar form,
//! pointwise and trace statistics for curves, a bivariate cross-variable
//! curve, and permutation inference for all of them.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::sample::FunctionalSample;
use crate::weights::SpatialWeights;

/// Relative denominator threshold below which curve points are masked.
const MASK_EPS: f64 = 1e-10;

/// Tail direction of a permutation test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Alternative {
    /// Observed statistic larger than the permutation draws.
    #[default]
    Greater,
    Less,
    TwoSided,
}

impl Alternative {
    pub fn as_str(&self) -> &'static str {
        match self {
            Alternative::Greater => "greater",
            Alternative::Less => "less",
            Alternative::TwoSided => "two-sided",
        }
    }
}

/// Settings for permutation inference.
#[derive(Debug, Clone, Copy)]
pub struct PermutationConfig {
    pub n_permutations: usize,
    pub seed: u64,
    pub alternative: Alternative,
}

impl PermutationConfig {
    /// 999 permutations, one-sided greater.
    pub fn new(seed: u64) -> Self {
        Self {
            n_permutations: 999,
            seed,
            alternative: Alternative::Greater,
        }
    }

    pub fn with_permutations(mut self, n: usize) -> Self {
        self.n_permutations = n;
        self
    }

    pub fn with_alternative(mut self, alternative: Alternative) -> Self {
        self.alternative = alternative;
        self
    }
}

/// Outcome of a permutation test on a scalar statistic.
#[derive(Debug, Clone)]
pub struct MoranTest {
    pub statistic: f64,
    pub n_permutations: usize,
    pub perm_mean: f64,
    pub perm_sd: f64,
    pub p_value: f64,
    pub alternative: Alternative,
    pub seed: u64,
}

/// A pointwise Moran statistic over a grid. Points where the denominator
/// nearly vanishes are masked; their values are NaN and excluded from
/// integrals.
#[derive(Debug, Clone)]
pub struct MoranCurve {
    pub abscissae: Vec<f64>,
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
    /// Domain the abscissae live on: the shared variable domain, or `[0, 1]`
    /// when variables have different domains and the grid is normalized.
    pub domain: (f64, f64),
}

impl MoranCurve {
    /// Unmasked `(x, value)` pairs in grid order.
    pub fn unmasked(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.abscissae
            .iter()
            .zip(&self.values)
            .zip(&self.mask)
            .filter(|&(_, &keep)| keep)
            .map(|((&x, &v), _)| (x, v))
    }

    pub fn n_unmasked(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn domain_measure(&self) -> f64 {
        self.domain.1 - self.domain.0
    }
}

/// The trace statistic with the curve it integrates.
#[derive(Debug, Clone)]
pub struct TraceMoran {
    pub curve: MoranCurve,
    /// Integral of the curve over the unmasked region, rescaled so a constant
    /// curve `c` yields `c` times the domain measure.
    pub statistic: f64,
    /// Raw trapezoid integral over the unmasked region, unrescaled.
    pub raw_integral: f64,
    /// Measure of the unmasked region actually integrated.
    pub unmasked_measure: f64,
}

/// Classical Moran's I, `Ĩ(x) = xᵀWx / xᵀx` on the centered vector. With a
/// row-standardized `W` this is the conventional scaling (`s0 = n`).
pub fn classical_moran(x: &DVector<f64>, weights: &SpatialWeights) -> Result<f64> {
    let n = weights.n_units();
    if x.len() != n {
        return Err(Error::UnitCountMismatch {
            left: x.len(),
            right: n,
        });
    }
    let mean = x.sum() / n as f64;
    let centered = x.map(|v| v - mean);
    let denom = centered.norm_squared();
    if denom == 0.0 {
        return Err(Error::ZeroVariance);
    }
    let mut num = 0.0;
    for (i, j, w) in weights.entries() {
        num += w * centered[i] * centered[j];
    }
    Ok(num / denom)
}

/// Classical Moran's I with a unit-label permutation test.
pub fn classical_moran_test(
    x: &DVector<f64>,
    weights: &SpatialWeights,
    config: &PermutationConfig,
) -> Result<MoranTest> {
    let n = weights.n_units();
    if x.len() != n {
        return Err(Error::UnitCountMismatch {
            left: x.len(),
            right: n,
        });
    }
    let mean = x.sum() / n as f64;
    let centered = x.map(|v| v - mean);
    let denom = centered.norm_squared();
    if denom == 0.0 {
        return Err(Error::ZeroVariance);
    }
    let entries = weights.entries();
    let stat = |perm: &[usize]| {
        let mut num = 0.0;
        for &(i, j, w) in &entries {
            num += w * centered[perm[i]] * centered[perm[j]];
        }
        num / denom
    };
    let observed = stat(&identity_permutation(n));
    permutation_test(observed, n, config, stat)
}

/// Shared precomputation for the functional Moran curve and trace: design
/// matrices per variable plus pointwise numerators and denominators.
struct CurveInternals {
    abscissae: Vec<f64>,
    /// Per variable, the `n_basis x n_points` transposed design matrix.
    designs: Vec<DMatrix<f64>>,
    num: Vec<f64>,
    den: Vec<f64>,
    mask: Vec<bool>,
    domain: (f64, f64),
}

/// Quadratic form `bᵀ A b` where `b` is column `g` of `bmat`. Skips the zero
/// entries that dominate B-spline design columns.
fn quad_form_col(a: &DMatrix<f64>, bmat: &DMatrix<f64>, g: usize) -> f64 {
    let m = a.nrows();
    let mut acc = 0.0;
    for r in 0..m {
        let br = bmat[(r, g)];
        if br == 0.0 {
            continue;
        }
        let mut inner = 0.0;
        for c in 0..m {
            inner += a[(r, c)] * bmat[(c, g)];
        }
        acc += br * inner;
    }
    acc
}

fn identity_permutation(n: usize) -> Vec<usize> {
    (0..n).collect()
}

fn curve_internals(
    sample: &FunctionalSample,
    weights: &SpatialWeights,
    abscissae: &[f64],
) -> Result<CurveInternals> {
    let n = sample.n_units();
    if n != weights.n_units() {
        return Err(Error::UnitCountMismatch {
            left: n,
            right: weights.n_units(),
        });
    }
    let domain = sample.common_domain().unwrap_or((0.0, 1.0));
    let normalized = sample.common_domain().is_none();
    let n_points = abscissae.len();

    let mut designs = Vec::with_capacity(sample.d_vars());
    let mut num = vec![0.0; n_points];
    let mut den = vec![0.0; n_points];
    for j in 0..sample.d_vars() {
        let mapped: Vec<f64> = if normalized {
            abscissae
                .iter()
                .map(|&t| sample.map_normalized(j, t))
                .collect()
        } else {
            abscissae.to_vec()
        };
        let design = sample.basis(j).eval_matrix(&mapped)?.transpose();
        let coefs = sample.coefs(j);
        let a = coefs.transpose() * weights.left_multiply(coefs);
        let d = coefs.transpose() * coefs;
        for g in 0..n_points {
            num[g] += quad_form_col(&a, &design, g);
            den[g] += quad_form_col(&d, &design, g);
        }
        designs.push(design);
    }
    let max_den = den.iter().cloned().fold(0.0f64, f64::max);
    if max_den <= 0.0 {
        return Err(Error::DegenerateSample);
    }
    let mask: Vec<bool> = den.iter().map(|&d| d >= MASK_EPS * max_den).collect();
    Ok(CurveInternals {
        abscissae: abscissae.to_vec(),
        designs,
        num,
        den,
        mask,
        domain,
    })
}

impl CurveInternals {
    fn curve(&self) -> MoranCurve {
        let values = self
            .num
            .iter()
            .zip(&self.den)
            .zip(&self.mask)
            .map(|((&n, &d), &keep)| if keep { n / d } else { f64::NAN })
            .collect();
        MoranCurve {
            abscissae: self.abscissae.clone(),
            values,
            mask: self.mask.clone(),
            domain: self.domain,
        }
    }

    /// Trapezoid integral of `num/den` over maximal unmasked runs, returning
    /// `(trace, raw_integral, unmasked_measure)`.
    fn trace_of(&self, num: &[f64]) -> Result<(f64, f64, f64)> {
        let mut integral = 0.0;
        let mut measure = 0.0;
        for g in 0..self.abscissae.len().saturating_sub(1) {
            if !(self.mask[g] && self.mask[g + 1]) {
                continue;
            }
            let dx = self.abscissae[g + 1] - self.abscissae[g];
            let left = num[g] / self.den[g];
            let right = num[g + 1] / self.den[g + 1];
            integral += 0.5 * dx * (left + right);
            measure += dx;
        }
        if measure <= 0.0 {
            return Err(Error::DegenerateCurve);
        }
        let span = self.domain.1 - self.domain.0;
        Ok((integral / measure * span, integral, measure))
    }

    /// Pointwise numerators after relabeling units by `perm`.
    fn permuted_num(&self, sample: &FunctionalSample, weights: &SpatialWeights, perm: &[usize]) -> Vec<f64> {
        let n = sample.n_units();
        let mut num = vec![0.0; self.abscissae.len()];
        for (j, design) in self.designs.iter().enumerate() {
            let coefs = sample.coefs(j);
            let permuted = DMatrix::from_fn(n, coefs.ncols(), |r, c| coefs[(perm[r], c)]);
            let a = permuted.transpose() * weights.left_multiply(&permuted);
            for g in 0..num.len() {
                if self.mask[g] {
                    num[g] += quad_form_col(&a, design, g);
                }
            }
        }
        num
    }
}

/// Equally spaced default grid for Moran curves: the shared variable domain
/// or, when domains differ, the normalized domain `[0, 1]`.
pub fn moran_grid(sample: &FunctionalSample, n_points: usize) -> Vec<f64> {
    let (lo, hi) = sample.common_domain().unwrap_or((0.0, 1.0));
    crate::sample::linspace(lo, hi, n_points)
}

/// Pointwise functional Moran curve. At each grid point the statistic is the
/// spatially weighted cross product of the centered curve values over their
/// total squared norm, computed through the basis-coefficient identities.
/// With several variables the grid is shared: the variables' common domain,
/// or a normalized grid mapped onto each domain when they differ.
pub fn functional_moran_curve(
    sample: &FunctionalSample,
    weights: &SpatialWeights,
    abscissae: &[f64],
) -> Result<MoranCurve> {
    let centered = sample.centered_copy();
    Ok(curve_internals(&centered, weights, abscissae)?.curve())
}

/// Trace Moran statistic: the curve integrated over its unmasked region and
/// rescaled by the domain measure, so a curve constantly `c` on `[0, 1]`
/// traces to `c`.
pub fn trace_moran(
    sample: &FunctionalSample,
    weights: &SpatialWeights,
    abscissae: &[f64],
) -> Result<TraceMoran> {
    let centered = sample.centered_copy();
    let internals = curve_internals(&centered, weights, abscissae)?;
    let (statistic, raw_integral, unmasked_measure) = internals.trace_of(&internals.num)?;
    Ok(TraceMoran {
        curve: internals.curve(),
        statistic,
        raw_integral,
        unmasked_measure,
    })
}

/// Trace Moran with a unit-label permutation test. The denominator and mask
/// are permutation invariant, so only numerators are recomputed per draw.
pub fn trace_moran_test(
    sample: &FunctionalSample,
    weights: &SpatialWeights,
    abscissae: &[f64],
    config: &PermutationConfig,
) -> Result<(TraceMoran, MoranTest)> {
    let centered = sample.centered_copy();
    let internals = curve_internals(&centered, weights, abscissae)?;
    let (statistic, raw_integral, unmasked_measure) = internals.trace_of(&internals.num)?;
    let stat = |perm: &[usize]| {
        let num = internals.permuted_num(&centered, weights, perm);
        match internals.trace_of(&num) {
            Ok((trace, _, _)) => trace,
            Err(_) => f64::NAN,
        }
    };
    let observed = stat(&identity_permutation(centered.n_units()));
    let test = permutation_test(observed, centered.n_units(), config, stat)?;
    Ok((
        TraceMoran {
            curve: internals.curve(),
            statistic,
            raw_integral,
            unmasked_measure,
        },
        test,
    ))
}

/// Pooled panel Moran: the sample treated as one panel data matrix,
/// `Σᵢⱼ wᵢⱼ⟨yᵢ, yⱼ⟩ / Σᵢ ‖yᵢ‖²` over the centered curves, computed exactly
/// as `tr(XᵀWX) / tr(XᵀX)` on the orthonormal scores. Unlike the trace
/// index, which integrates the pointwise ratio, this is a ratio of
/// integrals, so low-variance regions of the domain contribute little.
pub fn pooled_moran(sample: &FunctionalSample, weights: &SpatialWeights) -> Result<f64> {
    if sample.n_units() != weights.n_units() {
        return Err(Error::UnitCountMismatch {
            left: sample.n_units(),
            right: weights.n_units(),
        });
    }
    let centered = sample.centered_copy();
    let x = centered.orthonormal_scores()?;
    let den = x.norm_squared();
    if den <= 0.0 {
        return Err(Error::DegenerateSample);
    }
    Ok(x.dot(&weights.left_multiply(&x)) / den)
}

/// Bivariate functional Moran curve between variables `var_k` and `var_l`:
/// the spatially weighted cross product of variable `k` values against
/// variable `l` values, normalized by the product of their norms.
pub fn bivariate_functional_moran(
    sample: &FunctionalSample,
    var_k: usize,
    var_l: usize,
    weights: &SpatialWeights,
    abscissae: &[f64],
) -> Result<MoranCurve> {
    let d = sample.d_vars();
    for var in [var_k, var_l] {
        if var >= d {
            return Err(Error::BadVariable {
                index: var,
                d_vars: d,
            });
        }
    }
    let centered = sample.centered_copy();
    let n = centered.n_units();
    if n != weights.n_units() {
        return Err(Error::UnitCountMismatch {
            left: n,
            right: weights.n_units(),
        });
    }
    let domain = centered.common_domain().unwrap_or((0.0, 1.0));
    let normalized = centered.common_domain().is_none();
    let mapped = |j: usize| -> Vec<f64> {
        if normalized {
            abscissae
                .iter()
                .map(|&t| centered.map_normalized(j, t))
                .collect()
        } else {
            abscissae.to_vec()
        }
    };
    let vk = centered.evaluate(var_k, &mapped(var_k))?;
    let vl = centered.evaluate(var_l, &mapped(var_l))?;
    let n_points = abscissae.len();
    let entries = weights.entries();
    let mut num = vec![0.0; n_points];
    let mut den = vec![0.0; n_points];
    for g in 0..n_points {
        for &(i, j, w) in &entries {
            num[g] += w * vk[(i, g)] * vl[(j, g)];
        }
        den[g] = vk.column(g).norm() * vl.column(g).norm();
    }
    let max_den = den.iter().cloned().fold(0.0f64, f64::max);
    if max_den <= 0.0 {
        return Err(Error::DegenerateSample);
    }
    let mask: Vec<bool> = den.iter().map(|&d| d >= MASK_EPS * max_den).collect();
    let values = num
        .iter()
        .zip(&den)
        .zip(&mask)
        .map(|((&n, &d), &keep)| if keep { n / d } else { f64::NAN })
        .collect();
    Ok(MoranCurve {
        abscissae: abscissae.to_vec(),
        values,
        mask,
        domain,
    })
}

/// Permutation test of any statistic of unit labels. Each of the
/// `n_permutations` draws shuffles the labels with its own RNG stream derived
/// from the seed, so results are reproducible regardless of thread schedule.
/// `statistic` receives the permutation as a lookup `new index -> old index`.
pub fn permutation_test<F>(
    observed: f64,
    n_units: usize,
    config: &PermutationConfig,
    statistic: F,
) -> Result<MoranTest>
where
    F: Fn(&[usize]) -> f64 + Sync,
{
    if config.n_permutations == 0 {
        return Err(Error::BadPermutationCount(0));
    }
    let draws: Vec<f64> = (0..config.n_permutations)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(t as u64 + 1);
            let mut perm = identity_permutation(n_units);
            perm.shuffle(&mut rng);
            statistic(&perm)
        })
        .collect();
    let m = draws.len() as f64;
    let perm_mean = draws.iter().sum::<f64>() / m;
    let perm_sd = if draws.len() > 1 {
        (draws.iter().map(|d| (d - perm_mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt()
    } else {
        0.0
    };
    let greater = (1 + draws.iter().filter(|&&d| d >= observed).count()) as f64 / (m + 1.0);
    let less = (1 + draws.iter().filter(|&&d| d <= observed).count()) as f64 / (m + 1.0);
    let p_value = match config.alternative {
        Alternative::Greater => greater,
        Alternative::Less => less,
        Alternative::TwoSided => (2.0 * greater.min(less)).min(1.0),
    };
    Ok(MoranTest {
        statistic: observed,
        n_permutations: config.n_permutations,
        perm_mean,
        perm_sd,
        p_value,
        alternative: config.alternative,
        seed: config.seed,
    })
}
