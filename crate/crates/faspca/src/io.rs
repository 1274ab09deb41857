//! Readers and writers for every on-disk format: observation panels,
//! coordinate tables, weight matrices, Moran curves and tests, eigen tables,
//! eigenfunction curves, score tables, experiment tables and smoothed-sample
//! persistence. All files are UTF-8 CSV with `.` as the decimal separator.
//! Writers are deterministic: identical data produces identical bytes, and
//! every writer's output parses back through the matching reader.

use std::fs::File;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::basis::BSplineBasis;
use crate::error::{Error, Result};
use crate::moran::{MoranCurve, MoranTest};
use crate::sample::{FunctionalSample, ObservationPanel};
use crate::sim::ExperimentRow;
use crate::spca::ScoreRecord;
use crate::weights::SpatialWeights;

/// One row of a long-format panel file (`unit,variable,x,value`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelRow {
    pub unit: String,
    pub variable: String,
    pub x: f64,
    pub value: f64,
}

/// One row of a coordinate file (`unit,s1,s2`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordRow {
    pub unit: String,
    pub s1: f64,
    pub s2: f64,
}

/// One row of a weight file (`i,j,w`), 0-based unit indices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightRow {
    pub i: usize,
    pub j: usize,
    pub w: f64,
}

/// One row of an edge-list file (`i,j`); each edge implies a symmetric
/// binary weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeRow {
    pub i: usize,
    pub j: usize,
}

/// One row of a Moran curve file (`x,moran`); masked points carry NaN.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub x: f64,
    pub moran: f64,
}

/// The single row of a permutation test file
/// (`statistic,p_value,perm_mean,perm_sd,n_permutations,seed`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestRow {
    pub statistic: f64,
    pub p_value: f64,
    pub perm_mean: f64,
    pub perm_sd: f64,
    pub n_permutations: usize,
    pub seed: u64,
}

impl From<&MoranTest> for TestRow {
    fn from(test: &MoranTest) -> Self {
        Self {
            statistic: test.statistic,
            p_value: test.p_value,
            perm_mean: test.perm_mean,
            perm_sd: test.perm_sd,
            n_permutations: test.n_permutations,
            seed: test.seed,
        }
    }
}

/// One row of an eigen table
/// (`component,eigenvalue,sign,var_explained,score_moran`); `score_moran`
/// is empty when no weight matrix applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenRow {
    pub component: String,
    pub eigenvalue: f64,
    pub sign: String,
    pub var_explained: f64,
    pub score_moran: Option<f64>,
}

/// One row of an eigenfunction curve file (`component,variable,x,phi`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenfunctionRow {
    pub component: String,
    pub variable: String,
    pub x: f64,
    pub phi: f64,
}

/// One row of a score file (`unit,component,score`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub unit: String,
    pub component: String,
    pub score: f64,
}

/// One row of a basis file (`variable,domain_lo,domain_hi,n_basis,order`).
/// Bases use uniform clamped knots, so these fields rebuild them exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisRow {
    pub variable: String,
    pub domain_lo: f64,
    pub domain_hi: f64,
    pub n_basis: usize,
    pub order: usize,
}

/// One row of a coefficient file (`unit,variable,index,coef`), 0-based
/// coefficient index within the variable's basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefRow {
    pub unit: String,
    pub variable: String,
    pub index: usize,
    pub coef: f64,
}

/// One row of a per-component permutation test table
/// (`component,statistic,p_value,perm_mean,perm_sd,n_permutations,seed,stars`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentTestRow {
    pub component: String,
    pub statistic: f64,
    pub p_value: f64,
    pub perm_mean: f64,
    pub perm_sd: f64,
    pub n_permutations: usize,
    pub seed: u64,
    /// Significance marker for the p-value; empty when not significant.
    pub stars: String,
}

/// One row of an experiment summary
/// (`method,component,sign,median_var_explained,iqr_var_explained,median_score_moran,share_significant`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub component: String,
    pub sign: String,
    pub median_var_explained: f64,
    pub iqr_var_explained: f64,
    pub median_score_moran: f64,
    /// Fraction of replicates with score-Moran p-value below 0.05.
    pub share_significant: f64,
}

fn io_error(context: &str, path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        context: format!("{} {}", context, path.display()),
        source,
    }
}

fn csv_error(path: &Path, source: csv::Error) -> Error {
    Error::Csv {
        context: path.display().to_string(),
        source,
    }
}

fn read_rows<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| io_error("opening", path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut rows = Vec::new();
    for record in rdr.deserialize() {
        rows.push(record.map_err(|e| csv_error(path, e))?);
    }
    Ok(rows)
}

/// The header is written explicitly so empty tables still carry one.
fn write_rows<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| io_error("creating", path, e))?;
    let mut wtr = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(file);
    wtr.write_record(header).map_err(|e| csv_error(path, e))?;
    for row in rows {
        wtr.serialize(row).map_err(|e| csv_error(path, e))?;
    }
    wtr.flush().map_err(|e| io_error("writing", path, e))?;
    Ok(())
}

/// Read a long-format observation panel. Unit and variable ids are interned
/// in order of first appearance.
pub fn read_panel(path: &Path) -> Result<ObservationPanel> {
    let rows: Vec<PanelRow> = read_rows(path)?;
    let mut panel = ObservationPanel::new();
    for row in &rows {
        panel.push(&row.unit, &row.variable, row.x, row.value);
    }
    Ok(panel)
}

pub fn write_panel(path: &Path, panel: &ObservationPanel) -> Result<()> {
    let units = panel.unit_ids();
    let variables = panel.variable_ids();
    let rows: Vec<PanelRow> = panel
        .records()
        .iter()
        .map(|rec| PanelRow {
            unit: units[rec.unit].clone(),
            variable: variables[rec.variable].clone(),
            x: rec.x,
            value: rec.value,
        })
        .collect();
    write_rows(path, &["unit", "variable", "x", "value"], &rows)
}

/// Read a coordinate table; join order is the file's row order.
pub fn read_coords(path: &Path) -> Result<Vec<CoordRow>> {
    read_rows(path)
}

pub fn write_coords(path: &Path, unit_ids: &[String], coords: &[(f64, f64)]) -> Result<()> {
    if unit_ids.len() != coords.len() {
        return Err(Error::CoordCountMismatch {
            coords: coords.len(),
            units: unit_ids.len(),
        });
    }
    let rows: Vec<CoordRow> = unit_ids
        .iter()
        .zip(coords)
        .map(|(unit, &(s1, s2))| CoordRow {
            unit: unit.clone(),
            s1,
            s2,
        })
        .collect();
    write_rows(path, &["unit", "s1", "s2"], &rows)
}

/// Read weight entries; the caller supplies the unit count when rebuilding
/// the matrix, since isolated trailing units never appear in the file.
pub fn read_weight_entries(path: &Path) -> Result<Vec<(usize, usize, f64)>> {
    let rows: Vec<WeightRow> = read_rows(path)?;
    Ok(rows.into_iter().map(|r| (r.i, r.j, r.w)).collect())
}

pub fn write_weights(path: &Path, weights: &SpatialWeights) -> Result<()> {
    let rows: Vec<WeightRow> = weights
        .entries()
        .into_iter()
        .map(|(i, j, w)| WeightRow { i, j, w })
        .collect();
    write_rows(path, &["i", "j", "w"], &rows)
}

pub fn read_edge_list(path: &Path) -> Result<Vec<(usize, usize)>> {
    let rows: Vec<EdgeRow> = read_rows(path)?;
    Ok(rows.into_iter().map(|r| (r.i, r.j)).collect())
}

pub fn write_edge_list(path: &Path, edges: &[(usize, usize)]) -> Result<()> {
    let rows: Vec<EdgeRow> = edges.iter().map(|&(i, j)| EdgeRow { i, j }).collect();
    write_rows(path, &["i", "j"], &rows)
}

/// Write a Moran curve; masked points are written as NaN.
pub fn write_curve(path: &Path, curve: &MoranCurve) -> Result<()> {
    let rows: Vec<CurveRow> = curve
        .abscissae
        .iter()
        .zip(&curve.values)
        .map(|(&x, &moran)| CurveRow { x, moran })
        .collect();
    write_rows(path, &["x", "moran"], &rows)
}

pub fn read_curve(path: &Path) -> Result<Vec<CurveRow>> {
    read_rows(path)
}

pub fn write_test(path: &Path, test: &MoranTest) -> Result<()> {
    write_rows(
        path,
        &[
            "statistic",
            "p_value",
            "perm_mean",
            "perm_sd",
            "n_permutations",
            "seed",
        ],
        &[TestRow::from(test)],
    )
}

pub fn read_test(path: &Path) -> Result<TestRow> {
    let rows: Vec<TestRow> = read_rows(path)?;
    match <[TestRow; 1]>::try_from(rows) {
        Ok([row]) => Ok(row),
        Err(rows) => Err(Error::Parse {
            file: path.display().to_string(),
            line: rows.len() + 1,
            message: format!("expected exactly one test row, found {}", rows.len()),
        }),
    }
}

pub fn write_eigen_table(path: &Path, rows: &[EigenRow]) -> Result<()> {
    write_rows(
        path,
        &[
            "component",
            "eigenvalue",
            "sign",
            "var_explained",
            "score_moran",
        ],
        rows,
    )
}

pub fn read_eigen_table(path: &Path) -> Result<Vec<EigenRow>> {
    read_rows(path)
}

pub fn write_eigenfunctions(path: &Path, rows: &[EigenfunctionRow]) -> Result<()> {
    write_rows(path, &["component", "variable", "x", "phi"], rows)
}

pub fn read_eigenfunctions(path: &Path) -> Result<Vec<EigenfunctionRow>> {
    read_rows(path)
}

pub fn write_scores(path: &Path, rows: &[ScoreRow]) -> Result<()> {
    write_rows(path, &["unit", "component", "score"], rows)
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreRow>> {
    read_rows(path)
}

/// Write the score-map table that backs areal score plots.
pub fn write_score_table(path: &Path, rows: &[ScoreRecord]) -> Result<()> {
    write_rows(
        path,
        &[
            "unit",
            "s1",
            "s2",
            "component",
            "score",
            "abs_score",
            "sign",
        ],
        rows,
    )
}

pub fn read_score_table(path: &Path) -> Result<Vec<ScoreRecord>> {
    read_rows(path)
}

pub fn write_experiment(path: &Path, rows: &[ExperimentRow]) -> Result<()> {
    write_rows(
        path,
        &[
            "replicate",
            "method",
            "component",
            "sign",
            "var_explained",
            "score_moran",
            "p_value",
        ],
        rows,
    )
}

pub fn read_experiment(path: &Path) -> Result<Vec<ExperimentRow>> {
    read_rows(path)
}

pub fn write_component_tests(path: &Path, rows: &[ComponentTestRow]) -> Result<()> {
    write_rows(
        path,
        &[
            "component",
            "statistic",
            "p_value",
            "perm_mean",
            "perm_sd",
            "n_permutations",
            "seed",
            "stars",
        ],
        rows,
    )
}

pub fn read_component_tests(path: &Path) -> Result<Vec<ComponentTestRow>> {
    read_rows(path)
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    write_rows(
        path,
        &[
            "method",
            "component",
            "sign",
            "median_var_explained",
            "iqr_var_explained",
            "median_score_moran",
            "share_significant",
        ],
        rows,
    )
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    read_rows(path)
}

/// Persist a smoothed sample as a basis table plus a long coefficient table.
/// Centering state is not stored; samples round-trip uncentered and are
/// re-centered downstream.
pub fn write_sample(basis_path: &Path, coef_path: &Path, sample: &FunctionalSample) -> Result<()> {
    let basis_rows: Vec<BasisRow> = sample
        .variable_ids()
        .iter()
        .zip(sample.bases())
        .map(|(variable, basis)| {
            let (domain_lo, domain_hi) = basis.domain();
            BasisRow {
                variable: variable.clone(),
                domain_lo,
                domain_hi,
                n_basis: basis.n_basis(),
                order: basis.order(),
            }
        })
        .collect();
    write_rows(
        basis_path,
        &["variable", "domain_lo", "domain_hi", "n_basis", "order"],
        &basis_rows,
    )?;

    let mut coef_rows = Vec::new();
    for (j, variable) in sample.variable_ids().iter().enumerate() {
        let coefs = sample.coefs(j);
        for (i, unit) in sample.unit_ids().iter().enumerate() {
            for index in 0..coefs.ncols() {
                coef_rows.push(CoefRow {
                    unit: unit.clone(),
                    variable: variable.clone(),
                    index,
                    coef: coefs[(i, index)],
                });
            }
        }
    }
    write_rows(coef_path, &["unit", "variable", "index", "coef"], &coef_rows)
}

/// Rebuild a smoothed sample from its basis and coefficient tables. Unit
/// order follows first appearance in the coefficient file; variable order
/// follows the basis file.
pub fn read_sample(basis_path: &Path, coef_path: &Path) -> Result<FunctionalSample> {
    let basis_rows: Vec<BasisRow> = read_rows(basis_path)?;
    let mut variable_ids = Vec::with_capacity(basis_rows.len());
    let mut bases = Vec::with_capacity(basis_rows.len());
    for row in &basis_rows {
        variable_ids.push(row.variable.clone());
        bases.push(BSplineBasis::new(
            row.domain_lo,
            row.domain_hi,
            row.n_basis,
            row.order,
        )?);
    }

    let coef_rows: Vec<CoefRow> = read_rows(coef_path)?;
    let mut unit_ids: Vec<String> = Vec::new();
    for row in &coef_rows {
        if !unit_ids.contains(&row.unit) {
            unit_ids.push(row.unit.clone());
        }
    }
    let coef_file = coef_path.display().to_string();
    let mut coefs: Vec<DMatrix<f64>> = bases
        .iter()
        .map(|b| DMatrix::from_element(unit_ids.len(), b.n_basis(), f64::NAN))
        .collect();
    // Data rows start on line 2, after the header.
    for (idx, row) in coef_rows.iter().enumerate() {
        let line = idx + 2;
        let j = variable_ids
            .iter()
            .position(|v| *v == row.variable)
            .ok_or_else(|| Error::Parse {
                file: coef_file.clone(),
                line,
                message: format!("variable {} has no basis row", row.variable),
            })?;
        if row.index >= bases[j].n_basis() {
            return Err(Error::Parse {
                file: coef_file.clone(),
                line,
                message: format!(
                    "coefficient index {} out of range for basis size {}",
                    row.index,
                    bases[j].n_basis()
                ),
            });
        }
        let i = unit_ids.iter().position(|u| *u == row.unit).unwrap();
        coefs[j][(i, row.index)] = row.coef;
    }
    for (j, matrix) in coefs.iter().enumerate() {
        for i in 0..matrix.nrows() {
            if matrix.row(i).iter().any(|c| c.is_nan()) {
                return Err(Error::MissingSeries {
                    unit: unit_ids[i].clone(),
                    variable: variable_ids[j].clone(),
                });
            }
        }
    }
    FunctionalSample::from_coefs(bases, coefs, unit_ids, variable_ids)
}

/// Write a flat `key=value` file readable by [`read_kv`].
pub fn write_kv(path: &Path, pairs: &[(&str, String)]) -> Result<()> {
    let mut text = String::new();
    for (key, value) in pairs {
        text.push_str(key);
        text.push('=');
        text.push_str(value);
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| io_error("writing", path, e))
}

/// Read a flat `key=value` config file. Blank lines and `#` comments are
/// skipped; keys keep file order.
pub fn read_kv(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| io_error("opening", path, e))?;
    let mut pairs = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            file: path.display().to_string(),
            line: idx + 1,
            message: format!("expected key=value, got {line:?}"),
        })?;
        pairs.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}
