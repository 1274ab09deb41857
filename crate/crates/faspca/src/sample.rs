//! Functional samples: discrete observation panels, basis smoothing, and the
//! orthonormal score matrix that all spatial statistics operate on.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::basis::BSplineBasis;
use crate::error::{Error, Result};

/// One discrete observation of one variable at one spatial unit.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelRecord {
    pub unit: usize,
    pub variable: usize,
    pub x: f64,
    pub value: f64,
}

/// Long-format panel of noisy curve observations, with optional planar
/// coordinates per unit. Unit and variable ids are interned in order of first
/// appearance; all downstream indices refer to that ordering.
#[derive(Debug, Clone, Default)]
pub struct ObservationPanel {
    unit_ids: Vec<String>,
    variable_ids: Vec<String>,
    records: Vec<PanelRecord>,
    coords: Option<Vec<(f64, f64)>>,
}

impl ObservationPanel {
    pub fn new() -> Self {
        Self::default()
    }

    /// Append an observation, interning ids as needed.
    pub fn push(&mut self, unit: &str, variable: &str, x: f64, value: f64) {
        let unit_idx = Self::intern(&mut self.unit_ids, unit);
        let var_idx = Self::intern(&mut self.variable_ids, variable);
        self.records.push(PanelRecord {
            unit: unit_idx,
            variable: var_idx,
            x,
            value,
        });
    }

    fn intern(ids: &mut Vec<String>, id: &str) -> usize {
        match ids.iter().position(|existing| existing == id) {
            Some(idx) => idx,
            None => {
                ids.push(id.to_string());
                ids.len() - 1
            }
        }
    }

    pub fn n_units(&self) -> usize {
        self.unit_ids.len()
    }

    pub fn d_vars(&self) -> usize {
        self.variable_ids.len()
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn variable_ids(&self) -> &[String] {
        &self.variable_ids
    }

    pub fn records(&self) -> &[PanelRecord] {
        &self.records
    }

    /// Attach one planar coordinate per unit, in unit order.
    pub fn set_coords(&mut self, coords: Vec<(f64, f64)>) -> Result<()> {
        if coords.len() != self.n_units() {
            return Err(Error::CoordCountMismatch {
                coords: coords.len(),
                units: self.n_units(),
            });
        }
        self.coords = Some(coords);
        Ok(())
    }

    pub fn coords(&self) -> Option<&[(f64, f64)]> {
        self.coords.as_deref()
    }

    /// Transform all values by `f` in place.
    pub fn map_values(&mut self, f: impl Fn(f64) -> f64) {
        for rec in &mut self.records {
            rec.value = f(rec.value);
        }
    }

    /// Smallest strictly positive value in the panel, if any.
    pub fn min_positive_value(&self) -> Option<f64> {
        self.records
            .iter()
            .map(|r| r.value)
            .filter(|v| *v > 0.0)
            .fold(None, |acc, v| match acc {
                None => Some(v),
                Some(best) => Some(best.min(v)),
            })
    }

    /// Observed abscissa range per variable.
    pub fn variable_range(&self, variable: usize) -> Option<(f64, f64)> {
        let mut range: Option<(f64, f64)> = None;
        for rec in self.records.iter().filter(|r| r.variable == variable) {
            range = Some(match range {
                None => (rec.x, rec.x),
                Some((lo, hi)) => (lo.min(rec.x), hi.max(rec.x)),
            });
        }
        range
    }

    /// Per-(unit, variable) lists of (x, value), in unit-major order.
    fn series(&self) -> Vec<Vec<Vec<(f64, f64)>>> {
        let mut out = vec![vec![Vec::new(); self.d_vars()]; self.n_units()];
        for rec in &self.records {
            out[rec.unit][rec.variable].push((rec.x, rec.value));
        }
        out
    }
}

/// A smoothed sample: `n_units` curves per variable, stored as raw B-spline
/// coefficients plus the per-variable evaluation grid used for quadrature.
#[derive(Debug, Clone)]
pub struct FunctionalSample {
    bases: Vec<BSplineBasis>,
    /// Per variable, an `n_units x n_basis_j` coefficient matrix.
    coefs: Vec<DMatrix<f64>>,
    grids: Vec<Vec<f64>>,
    centered: bool,
    mean_coefs: Option<Vec<DVector<f64>>>,
    unit_ids: Vec<String>,
    variable_ids: Vec<String>,
}

/// Default number of evaluation grid points per variable.
pub const DEFAULT_GRID_POINTS: usize = 101;

/// Equally spaced grid of `n` points on `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

impl FunctionalSample {
    /// Assemble a sample directly from coefficient matrices.
    pub fn from_coefs(
        bases: Vec<BSplineBasis>,
        coefs: Vec<DMatrix<f64>>,
        unit_ids: Vec<String>,
        variable_ids: Vec<String>,
    ) -> Result<Self> {
        if bases.len() != coefs.len() || bases.len() != variable_ids.len() {
            return Err(Error::BasisCountMismatch {
                n_bases: bases.len(),
                d_vars: coefs.len().max(variable_ids.len()),
            });
        }
        let n_units = unit_ids.len();
        for (basis, matrix) in bases.iter().zip(&coefs) {
            if matrix.nrows() != n_units || matrix.ncols() != basis.n_basis() {
                return Err(Error::CoordCountMismatch {
                    coords: matrix.nrows(),
                    units: n_units,
                });
            }
        }
        let grids = bases
            .iter()
            .map(|b| {
                let (lo, hi) = b.domain();
                linspace(lo, hi, DEFAULT_GRID_POINTS)
            })
            .collect();
        Ok(Self {
            bases,
            coefs,
            grids,
            centered: false,
            mean_coefs: None,
            unit_ids,
            variable_ids,
        })
    }

    pub fn n_units(&self) -> usize {
        self.unit_ids.len()
    }

    pub fn d_vars(&self) -> usize {
        self.bases.len()
    }

    pub fn bases(&self) -> &[BSplineBasis] {
        &self.bases
    }

    pub fn basis(&self, variable: usize) -> &BSplineBasis {
        &self.bases[variable]
    }

    pub fn coefs(&self, variable: usize) -> &DMatrix<f64> {
        &self.coefs[variable]
    }

    pub fn grid(&self, variable: usize) -> &[f64] {
        &self.grids[variable]
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn variable_ids(&self) -> &[String] {
        &self.variable_ids
    }

    /// Mean coefficients removed by [`FunctionalSample::center`], if any.
    pub fn mean_coefs(&self) -> Option<&[DVector<f64>]> {
        self.mean_coefs.as_deref()
    }

    /// Total score dimension `p`, summed over variables.
    pub fn score_dim(&self) -> usize {
        self.bases.iter().map(|b| b.n_basis()).sum()
    }

    /// Subtract the per-variable column means. Returns the centered sample and
    /// the mean coefficient vectors, which evaluate the empirical mean curve.
    pub fn center(&self) -> Result<(Self, Vec<DVector<f64>>)> {
        if self.centered {
            return Err(Error::AlreadyCentered);
        }
        let n = self.n_units() as f64;
        let mut centered = self.clone();
        let mut means = Vec::with_capacity(self.d_vars());
        for (j, matrix) in centered.coefs.iter_mut().enumerate() {
            let mean = DVector::from_fn(self.bases[j].n_basis(), |m, _| {
                matrix.column(m).sum() / n
            });
            for mut row in matrix.row_iter_mut() {
                for m in 0..mean.len() {
                    row[m] -= mean[m];
                }
            }
            means.push(mean);
        }
        centered.centered = true;
        centered.mean_coefs = Some(means.clone());
        Ok((centered, means))
    }

    /// Mark the sample as centered without touching the coefficients, for
    /// curves that were centered upstream. Statistics trust this flag and
    /// skip their internal centering pass.
    pub fn assume_centered(mut self) -> Self {
        self.centered = true;
        self
    }

    /// Centered view of the sample: a no-op clone when already centered.
    pub(crate) fn centered_copy(&self) -> Self {
        if self.centered {
            self.clone()
        } else {
            self.center().expect("uncentered sample").0
        }
    }

    /// The `n_units x p` orthonormal score matrix: per variable, raw
    /// coefficients mapped through the Gram Cholesky factor and concatenated.
    /// Row dot products equal inner products of the centered curves.
    pub fn orthonormal_scores(&self) -> Result<DMatrix<f64>> {
        if !self.centered {
            return Err(Error::NotCentered);
        }
        let p = self.score_dim();
        let mut out = DMatrix::zeros(self.n_units(), p);
        let mut offset = 0;
        for (basis, coefs) in self.bases.iter().zip(&self.coefs) {
            let block = coefs * basis.orth_factor().transpose();
            out.view_mut((0, offset), (self.n_units(), basis.n_basis()))
                .copy_from(&block);
            offset += basis.n_basis();
        }
        Ok(out)
    }

    /// Per-variable column ranges of the concatenated score matrix.
    pub fn score_blocks(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::with_capacity(self.d_vars());
        let mut offset = 0;
        for basis in &self.bases {
            out.push(offset..offset + basis.n_basis());
            offset += basis.n_basis();
        }
        out
    }

    /// Evaluate one variable's curves: `n_units x |abscissae|`.
    pub fn evaluate(&self, variable: usize, abscissae: &[f64]) -> Result<DMatrix<f64>> {
        if variable >= self.d_vars() {
            return Err(Error::BadVariable {
                index: variable,
                d_vars: self.d_vars(),
            });
        }
        let design = self.bases[variable].eval_matrix(abscissae)?;
        Ok(&self.coefs[variable] * design.transpose())
    }

    /// Evaluate the removed mean curve of one variable, if the sample is centered.
    pub fn evaluate_mean(&self, variable: usize, abscissae: &[f64]) -> Result<DVector<f64>> {
        let design = self.bases[variable].eval_matrix(abscissae)?;
        match &self.mean_coefs {
            Some(means) => Ok(&design * &means[variable]),
            None => Ok(DVector::zeros(abscissae.len())),
        }
    }

    /// Map the normalized abscissa `t` in `[0, 1]` onto a variable's domain.
    pub fn map_normalized(&self, variable: usize, t: f64) -> f64 {
        let (lo, hi) = self.bases[variable].domain();
        lo + (hi - lo) * t
    }

    /// True when every variable shares the same domain (to a relative 1e-12).
    pub fn common_domain(&self) -> Option<(f64, f64)> {
        let (lo, hi) = self.bases[0].domain();
        let tol = 1e-12 * (hi - lo).abs().max(1.0);
        for basis in &self.bases[1..] {
            let (l, h) = basis.domain();
            if (l - lo).abs() > tol || (h - hi).abs() > tol {
                return None;
            }
        }
        Some((lo, hi))
    }
}

/// Penalized least-squares smoothing of a panel into basis coefficients.
///
/// Per (unit, variable) the coefficients minimize the residual sum of squares
/// plus `penalty` times the integrated squared second derivative. A zero
/// penalty is ordinary least squares and requires at least `n_basis` distinct
/// abscissae per series.
pub fn smooth(
    panel: &ObservationPanel,
    bases: Vec<BSplineBasis>,
    penalty: f64,
) -> Result<FunctionalSample> {
    if penalty < 0.0 || !penalty.is_finite() {
        return Err(Error::NegativePenalty(penalty));
    }
    if bases.len() != panel.d_vars() {
        return Err(Error::BasisCountMismatch {
            n_bases: bases.len(),
            d_vars: panel.d_vars(),
        });
    }
    let series = panel.series();
    let penalties: Vec<DMatrix<f64>> = if penalty > 0.0 {
        bases.iter().map(|b| b.roughness_matrix()).collect()
    } else {
        Vec::new()
    };

    let jobs: Vec<(usize, usize)> = (0..panel.n_units())
        .flat_map(|i| (0..panel.d_vars()).map(move |j| (i, j)))
        .collect();

    let fitted: Vec<Result<(usize, usize, DVector<f64>)>> = jobs
        .par_iter()
        .map(|&(i, j)| {
            let obs = &series[i][j];
            if obs.is_empty() {
                return Err(Error::MissingSeries {
                    unit: panel.unit_ids()[i].clone(),
                    variable: panel.variable_ids()[j].clone(),
                });
            }
            let basis = &bases[j];
            if penalty == 0.0 {
                let distinct = count_distinct(obs.iter().map(|(x, _)| *x));
                if distinct < basis.n_basis() {
                    return Err(Error::UnderdeterminedSmoothing {
                        unit: panel.unit_ids()[i].clone(),
                        variable: panel.variable_ids()[j].clone(),
                        distinct,
                        n_basis: basis.n_basis(),
                    });
                }
            }
            let xs: Vec<f64> = obs.iter().map(|(x, _)| *x).collect();
            let ys = DVector::from_iterator(obs.len(), obs.iter().map(|(_, y)| *y));
            let design = basis.eval_matrix(&xs)?;
            let mut normal = design.transpose() * &design;
            if penalty > 0.0 {
                normal += &penalties[j] * penalty;
            }
            let rhs = design.transpose() * ys;
            let coef = normal
                .cholesky()
                .map(|chol| chol.solve(&rhs))
                .ok_or_else(|| Error::SingularSmoothing {
                    unit: panel.unit_ids()[i].clone(),
                    variable: panel.variable_ids()[j].clone(),
                })?;
            Ok((i, j, coef))
        })
        .collect();

    let mut coefs: Vec<DMatrix<f64>> = bases
        .iter()
        .map(|b| DMatrix::zeros(panel.n_units(), b.n_basis()))
        .collect();
    for item in fitted {
        let (i, j, coef) = item?;
        coefs[j].row_mut(i).copy_from(&coef.transpose());
    }
    FunctionalSample::from_coefs(
        bases,
        coefs,
        panel.unit_ids().to_vec(),
        panel.variable_ids().to_vec(),
    )
}

fn count_distinct(values: impl Iterator<Item = f64>) -> usize {
    let mut seen: Vec<f64> = values.collect();
    seen.sort_by(|a, b| a.partial_cmp(b).unwrap());
    seen.dedup_by(|a, b| (*a - *b).abs() <= f64::EPSILON * a.abs().max(1.0));
    seen.len()
}

/// Trapezoid rule on an arbitrary sorted grid.
pub fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    xs.windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
        .sum()
}
