//! B-spline basis systems.
//!
//! A [`BSplineBasis`] carries a clamped, uniform-knot B-spline basis on a
//! compact interval together with its Gram matrix of pairwise inner products
//! and the Cholesky factor that maps raw coefficients into an orthonormal
//! coordinate system. All matrix statistics in this crate (Moran curves,
//! eigenproblems) are computed on those orthonormal coordinates, so the usual
//! score-matrix formulas hold even though B-splines are not orthonormal.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative slack allowed when deciding whether an abscissa lies in the domain.
const DOMAIN_SLACK: f64 = 1e-9;

/// Univariate B-spline basis with precomputed Gram matrix and its Cholesky factor.
#[derive(Debug, Clone)]
pub struct BSplineBasis {
    domain_lo: f64,
    domain_hi: f64,
    order: usize,
    interior_knots: Vec<f64>,
    /// Full clamped knot vector of length `n_basis + order`.
    knots: Vec<f64>,
    n_basis: usize,
    gram: DMatrix<f64>,
    /// Upper-triangular factor `U` with `U^T U = gram`.
    orth_factor: DMatrix<f64>,
}

impl BSplineBasis {
    /// Build a basis of `n_basis` functions of the given order (degree + 1)
    /// on `[domain_lo, domain_hi]` with equally spaced interior knots.
    pub fn new(domain_lo: f64, domain_hi: f64, n_basis: usize, order: usize) -> Result<Self> {
        if !domain_lo.is_finite() || !domain_hi.is_finite() || domain_lo >= domain_hi {
            return Err(Error::BadDomain {
                lo: domain_lo,
                hi: domain_hi,
            });
        }
        if order < 2 {
            return Err(Error::BadOrder(order));
        }
        if n_basis < order {
            return Err(Error::TooFewBasis { n_basis, order });
        }

        let n_interior = n_basis - order;
        let span = domain_hi - domain_lo;
        let interior_knots: Vec<f64> = (1..=n_interior)
            .map(|i| domain_lo + span * i as f64 / (n_interior + 1) as f64)
            .collect();

        let mut knots = Vec::with_capacity(n_basis + order);
        knots.extend(std::iter::repeat(domain_lo).take(order));
        knots.extend_from_slice(&interior_knots);
        knots.extend(std::iter::repeat(domain_hi).take(order));

        let mut basis = Self {
            domain_lo,
            domain_hi,
            order,
            interior_knots,
            knots,
            n_basis,
            gram: DMatrix::zeros(n_basis, n_basis),
            orth_factor: DMatrix::zeros(n_basis, n_basis),
        };
        // Product of two degree-(order-1) pieces has degree 2*order - 2;
        // `order` Gauss points are exact up to degree 2*order - 1. Five points
        // per span is the default for the cubic case.
        basis.gram = basis.product_quadrature(0, basis.quad_points());
        let chol = basis
            .gram
            .clone()
            .cholesky()
            .ok_or(Error::GramNotPositiveDefinite)?;
        basis.orth_factor = chol.l().transpose();
        Ok(basis)
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.domain_lo, self.domain_hi)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn n_basis(&self) -> usize {
        self.n_basis
    }

    pub fn interior_knots(&self) -> &[f64] {
        &self.interior_knots
    }

    /// Gram matrix of pairwise inner products on the domain.
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// Upper-triangular `U` with `U^T U = gram`. Raw coefficient rows `c`
    /// become orthonormal coordinates as `c U^T`.
    pub fn orth_factor(&self) -> &DMatrix<f64> {
        &self.orth_factor
    }

    fn quad_points(&self) -> usize {
        self.order.max(5)
    }

    fn check_domain(&self, x: f64) -> Result<f64> {
        let slack = DOMAIN_SLACK * (self.domain_hi - self.domain_lo);
        if x < self.domain_lo - slack || x > self.domain_hi + slack || !x.is_finite() {
            return Err(Error::OutOfDomain {
                x,
                lo: self.domain_lo,
                hi: self.domain_hi,
            });
        }
        Ok(x.clamp(self.domain_lo, self.domain_hi))
    }

    /// Index of the knot span containing `x`: largest `i` with `knots[i] <= x`,
    /// clamped so the right endpoint belongs to the last nontrivial span.
    fn find_span(&self, x: f64) -> usize {
        let p = self.order - 1;
        if x >= self.knots[self.n_basis] {
            return self.n_basis - 1;
        }
        let mut lo = p;
        let mut hi = self.n_basis;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if x < self.knots[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    }

    /// The `order` basis values that are nonzero at `x` (Cox-de Boor).
    fn nonzero_values(&self, span: usize, x: f64) -> Vec<f64> {
        let p = self.order - 1;
        let mut vals = vec![0.0; self.order];
        let mut left = vec![0.0; self.order];
        let mut right = vec![0.0; self.order];
        vals[0] = 1.0;
        for j in 1..=p {
            left[j] = x - self.knots[span + 1 - j];
            right[j] = self.knots[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = vals[r] / denom;
                vals[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            vals[j] = saved;
        }
        vals
    }

    /// Nonzero basis values and derivatives up to `n_deriv` at `x`.
    /// Row `k` of the result holds the k-th derivatives of the `order`
    /// functions that are nonzero on the span.
    fn nonzero_derivatives(&self, span: usize, x: f64, n_deriv: usize) -> Vec<Vec<f64>> {
        let p = self.order - 1;
        let n = n_deriv.min(p);
        let mut ndu = vec![vec![0.0; self.order]; self.order];
        let mut left = vec![0.0; self.order];
        let mut right = vec![0.0; self.order];
        ndu[0][0] = 1.0;
        for j in 1..=p {
            left[j] = x - self.knots[span + 1 - j];
            right[j] = self.knots[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }

        let mut ders = vec![vec![0.0; self.order]; n_deriv + 1];
        for j in 0..=p {
            ders[0][j] = ndu[j][p];
        }
        let mut a = vec![vec![0.0; self.order]; 2];
        for r in 0..=p {
            let mut s1 = 0;
            let mut s2 = 1;
            a[0][0] = 1.0;
            for k in 1..=n {
                let mut d = 0.0;
                let rk = r as isize - k as isize;
                let pk = p - k;
                if r >= k {
                    a[s2][0] = a[s1][0] / ndu[pk + 1][rk as usize];
                    d = a[s2][0] * ndu[rk as usize][pk];
                }
                let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
                let j2 = if r as isize - 1 <= pk as isize {
                    k - 1
                } else {
                    p - r
                };
                for j in j1..=j2 {
                    a[s2][j] =
                        (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][(rk + j as isize) as usize];
                    d += a[s2][j] * ndu[(rk + j as isize) as usize][pk];
                }
                if r <= pk {
                    a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                    d += a[s2][k] * ndu[r][pk];
                }
                ders[k][r] = d;
                std::mem::swap(&mut s1, &mut s2);
            }
        }
        let mut factor = p as f64;
        for k in 1..=n {
            for j in 0..=p {
                ders[k][j] *= factor;
            }
            factor *= (p - k) as f64;
        }
        ders
    }

    /// Evaluate every basis function at `x`.
    pub fn eval_at(&self, x: f64) -> Result<DVector<f64>> {
        let x = self.check_domain(x)?;
        let span = self.find_span(x);
        let vals = self.nonzero_values(span, x);
        let mut out = DVector::zeros(self.n_basis);
        let first = span + 1 - self.order;
        for (offset, v) in vals.iter().enumerate() {
            out[first + offset] = *v;
        }
        Ok(out)
    }

    /// Design matrix: one row per abscissa, one column per basis function.
    pub fn eval_matrix(&self, abscissae: &[f64]) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(abscissae.len(), self.n_basis);
        for (i, &x) in abscissae.iter().enumerate() {
            let x = self.check_domain(x)?;
            let span = self.find_span(x);
            let vals = self.nonzero_values(span, x);
            let first = span + 1 - self.order;
            for (offset, v) in vals.iter().enumerate() {
                out[(i, first + offset)] = *v;
            }
        }
        Ok(out)
    }

    /// Evaluate the `n_deriv`-th derivative of every basis function at `x`.
    pub fn eval_deriv_at(&self, x: f64, n_deriv: usize) -> Result<DVector<f64>> {
        let x = self.check_domain(x)?;
        let span = self.find_span(x);
        let ders = self.nonzero_derivatives(span, x, n_deriv);
        let mut out = DVector::zeros(self.n_basis);
        let first = span + 1 - self.order;
        for offset in 0..self.order {
            out[first + offset] = ders[n_deriv.min(self.order - 1)][offset];
        }
        // Derivatives of order >= spline order vanish identically.
        if n_deriv > self.order - 1 {
            out.fill(0.0);
        }
        Ok(out)
    }

    /// Matrix of inner products of `deriv`-th derivatives, by composite
    /// Gauss-Legendre quadrature with `points` nodes per knot span. Exact for
    /// the piecewise-polynomial integrands whenever `2 * points - 1` is at
    /// least the product degree.
    fn product_quadrature(&self, deriv: usize, points: usize) -> DMatrix<f64> {
        let (nodes, weights) = gauss_legendre(points);
        let mut out = DMatrix::zeros(self.n_basis, self.n_basis);
        let p = self.order - 1;
        for span in p..self.n_basis {
            let a = self.knots[span];
            let b = self.knots[span + 1];
            if b <= a {
                continue;
            }
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            let first = span + 1 - self.order;
            for (node, weight) in nodes.iter().zip(&weights) {
                let x = mid + half * node;
                let vals: Vec<f64> = if deriv == 0 {
                    self.nonzero_values(span, x)
                } else {
                    self.nonzero_derivatives(span, x, deriv)[deriv].clone()
                };
                let w = weight * half;
                for (mi, &vm) in vals.iter().enumerate() {
                    for (li, &vl) in vals.iter().enumerate() {
                        out[(first + mi, first + li)] += w * vm * vl;
                    }
                }
            }
        }
        out
    }

    /// Gram of second derivatives, the integrand of the roughness penalty.
    pub fn roughness_matrix(&self) -> DMatrix<f64> {
        if self.order < 3 {
            return DMatrix::zeros(self.n_basis, self.n_basis);
        }
        self.product_quadrature(2, self.quad_points())
    }

    #[cfg(test)]
    fn gram_with_points(&self, points: usize) -> DMatrix<f64> {
        self.product_quadrature(0, points)
    }

    /// Map an orthonormal-coordinate vector back to raw basis coefficients:
    /// solves `U a = u` with the upper-triangular factor.
    pub fn raw_from_orthonormal(&self, u: &DVector<f64>) -> DVector<f64> {
        let mut a = u.clone();
        self.orth_factor.solve_upper_triangular_mut(&mut a);
        a
    }
}

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`.
pub(crate) fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = (n + 1) / 2;
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2.0 * j as f64 + 1.0) * z * p2 - j as f64 * p3) / (j as f64 + 1.0);
            }
            pp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        weights[i] = 2.0 / ((1.0 - z * z) * pp * pp);
        weights[n - 1 - i] = weights[i];
    }
    (nodes, weights)
}
