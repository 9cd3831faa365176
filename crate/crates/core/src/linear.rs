//! Least squares with rank detection, heteroskedasticity-robust covariance,
//! and covariate encoding for design matrices.
//!
//! The solver is a column-pivoted Householder QR. Pivoting stops when the
//! best remaining column norm falls below 1e-10 of the first pivot's norm;
//! columns left behind are reported as dropped and get coefficient 0, so a
//! duplicated column changes nothing but the report. This keeps fits
//! deterministic and reproducible where a pseudo-inverse would silently pick
//! one of many solutions.

use std::collections::BTreeSet;

use nalgebra::DMatrix;

use crate::data::{EpisodeRecord, XValue};
use crate::error::{Error, Result};

/// Relative pivot tolerance for declaring a column collinear.
const PIVOT_RTOL: f64 = 1e-10;

/// A dense design: `names.len()` columns (intercept included by the builder).
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    pub names: Vec<String>,
    pub m: DMatrix<f64>,
}

impl DesignMatrix {
    pub fn new(names: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let p = names.len();
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::estimation("design matrix: ragged rows"));
        }
        let m = DMatrix::from_row_iterator(rows.len(), p, rows.iter().flatten().copied());
        Ok(Self { names, m })
    }

    pub fn n_rows(&self) -> usize {
        self.m.nrows()
    }
}

/// A fitted least-squares model. `coef` is aligned with `names`; dropped
/// columns carry coefficient 0 so `predict_row` accepts full-width rows.
#[derive(Debug, Clone)]
pub struct LinearModel {
    pub names: Vec<String>,
    pub coef: Vec<f64>,
    /// Column indices retained, ascending.
    pub kept: Vec<usize>,
    /// Names of columns dropped as collinear, in column order.
    pub dropped: Vec<String>,
    pub n: usize,
    pub rank: usize,
    /// SSE / (n − rank); `None` when the fit is saturated (n = rank).
    pub resid_var: Option<f64>,
}

impl LinearModel {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        debug_assert_eq!(row.len(), self.coef.len());
        self.coef.iter().zip(row).map(|(c, x)| c * x).sum()
    }
}

/// Ordinary least squares via column-pivoted Householder QR.
pub fn fit_ols(x: &DesignMatrix, y: &[f64]) -> Result<LinearModel> {
    let n = x.m.nrows();
    let p = x.m.ncols();
    if n == 0 {
        return Err(Error::estimation("least squares: zero rows"));
    }
    if y.len() != n {
        return Err(Error::estimation(format!(
            "least squares: {n} rows but {} responses",
            y.len()
        )));
    }
    if p == 0 {
        return Err(Error::estimation("least squares: zero columns"));
    }

    let mut a = x.m.clone();
    let mut rhs = DMatrix::from_column_slice(n, 1, y);
    // pivot[s] = original index of the column moved into position s
    let mut pivot: Vec<usize> = (0..p).collect();
    let mut rank = 0usize;
    let mut first_pivot_norm = 0.0f64;

    for s in 0..p.min(n) {
        // Column norms over rows s..n; ties go to the lowest original index,
        // and comparisons are on exact squared norms, so the pivot sequence
        // is reproducible.
        let mut best = s;
        let mut best_norm2 = f64::NEG_INFINITY;
        for c in s..p {
            let norm2: f64 = (s..n).map(|r| a[(r, c)] * a[(r, c)]).sum();
            if norm2 > best_norm2 {
                best_norm2 = norm2;
                best = c;
            }
        }
        let norm = best_norm2.max(0.0).sqrt();
        if s == 0 {
            first_pivot_norm = norm;
            if norm == 0.0 {
                break; // all-zero design
            }
        } else if norm <= PIVOT_RTOL * first_pivot_norm {
            break;
        }
        a.swap_columns(s, best);
        pivot.swap(s, best);

        // Householder vector for column s, rows s..n.
        let alpha = -a[(s, s)].signum() * norm;
        let mut v: Vec<f64> = (s..n).map(|r| a[(r, s)]).collect();
        v[0] -= alpha;
        let v_norm2: f64 = v.iter().map(|t| t * t).sum();
        if v_norm2 > 0.0 {
            for c in s..p {
                let dot: f64 = (s..n).map(|r| a[(r, c)] * v[r - s]).sum();
                let scale = 2.0 * dot / v_norm2;
                for r in s..n {
                    a[(r, c)] -= scale * v[r - s];
                }
            }
            let dot: f64 = (s..n).map(|r| rhs[(r, 0)] * v[r - s]).sum();
            let scale = 2.0 * dot / v_norm2;
            for r in s..n {
                rhs[(r, 0)] -= scale * v[r - s];
            }
        }
        a[(s, s)] = alpha;
        rank += 1;
    }

    // Back-substitution on the leading rank×rank triangle.
    let mut beta_pivoted = vec![0.0f64; rank];
    for s in (0..rank).rev() {
        let mut acc = rhs[(s, 0)];
        for c in s + 1..rank {
            acc -= a[(s, c)] * beta_pivoted[c];
        }
        beta_pivoted[s] = acc / a[(s, s)];
    }

    let mut coef = vec![0.0f64; p];
    for s in 0..rank {
        coef[pivot[s]] = beta_pivoted[s];
    }
    let kept: BTreeSet<usize> = pivot[..rank].iter().copied().collect();
    let dropped: Vec<String> = (0..p).filter(|i| !kept.contains(i)).map(|i| x.names[i].clone()).collect();

    let sse: f64 = (rank..n).map(|r| rhs[(r, 0)] * rhs[(r, 0)]).sum();
    let resid_var = (n > rank).then(|| sse / (n - rank) as f64);

    Ok(LinearModel {
        names: x.names.clone(),
        coef,
        kept: kept.into_iter().collect(),
        dropped,
        n,
        rank,
        resid_var,
    })
}

/// Heteroskedasticity-robust (HC1) covariance of the retained coefficients:
/// (XᵀX)⁻¹ (Σ eᵢ² xᵢxᵢᵀ) (XᵀX)⁻¹ · n/(n−rank), over kept columns only.
#[derive(Debug, Clone)]
pub struct RobustCovariance {
    /// Names of the kept columns, aligned with the covariance dimensions.
    pub names: Vec<String>,
    pub cov: DMatrix<f64>,
}

impl RobustCovariance {
    pub fn se_for(&self, name: &str) -> Option<f64> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(self.cov[(i, i)].max(0.0).sqrt())
    }
}

pub fn hc1_covariance(x: &DesignMatrix, y: &[f64], model: &LinearModel) -> Result<RobustCovariance> {
    let n = x.m.nrows();
    let rank = model.rank;
    if n <= rank {
        return Err(Error::estimation(
            "robust covariance: no residual degrees of freedom",
        ));
    }
    let xk = x.m.select_columns(model.kept.iter());
    let xtx = xk.tr_mul(&xk);
    let xtx_inv = xtx
        .try_inverse()
        .ok_or_else(|| Error::estimation("robust covariance: singular normal matrix"))?;
    let mut meat = DMatrix::zeros(rank, rank);
    for r in 0..n {
        let row = xk.row(r);
        let e = y[r] - model.predict_row(x.m.row(r).iter().copied().collect::<Vec<_>>().as_slice());
        let e2 = e * e;
        for a in 0..rank {
            for b in 0..rank {
                meat[(a, b)] += e2 * row[a] * row[b];
            }
        }
    }
    let scale = n as f64 / (n - rank) as f64;
    let cov = (&xtx_inv * meat * &xtx_inv) * scale;
    let names = model.kept.iter().map(|&i| model.names[i].clone()).collect();
    Ok(RobustCovariance { names, cov })
}

/// How one covariate column enters a design matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum ColumnEncoding {
    Numeric,
    /// Sorted observed levels; the first is the reference (no indicator).
    Categorical { levels: Vec<String> },
}

/// Maps records to design rows: numeric passthrough, categoricals as
/// reference-coded indicators. Build it over the full analysis population so
/// prediction never meets an unseen level that the data actually contains.
#[derive(Debug, Clone)]
pub struct CovariateEncoder {
    columns: Vec<(String, ColumnEncoding)>,
}

impl CovariateEncoder {
    pub fn build<'a>(
        records: impl Iterator<Item = &'a EpisodeRecord> + Clone,
        covariates: &[String],
    ) -> Result<Self> {
        let mut columns = Vec::with_capacity(covariates.len());
        for name in covariates {
            let mut levels: BTreeSet<String> = BTreeSet::new();
            let mut numeric = false;
            for rec in records.clone() {
                match rec.x.get(name) {
                    Some(XValue::Numeric(_)) => numeric = true,
                    Some(XValue::Categorical(s)) => {
                        levels.insert(s.clone());
                    }
                    None => {
                        return Err(Error::estimation(format!(
                            "{}: missing covariate '{name}'",
                            rec.locator()
                        )))
                    }
                }
            }
            let encoding = match (numeric, levels.is_empty()) {
                (true, true) => ColumnEncoding::Numeric,
                (false, false) => ColumnEncoding::Categorical { levels: levels.into_iter().collect() },
                (true, false) => {
                    return Err(Error::estimation(format!(
                        "covariate '{name}' mixes numeric and categorical values"
                    )))
                }
                (false, true) => {
                    return Err(Error::estimation(format!(
                        "covariate '{name}' has no values in the analysis population"
                    )))
                }
            };
            columns.push((name.clone(), encoding));
        }
        Ok(Self { columns })
    }

    /// Encoded column names, intercept not included.
    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, enc) in &self.columns {
            match enc {
                ColumnEncoding::Numeric => out.push(name.clone()),
                ColumnEncoding::Categorical { levels } => {
                    for level in &levels[1..] {
                        out.push(format!("{name}={level}"));
                    }
                }
            }
        }
        out
    }

    /// Encoded row for one record, intercept not included.
    pub fn row(&self, rec: &EpisodeRecord) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        for (name, enc) in &self.columns {
            let value = rec.x.get(name).ok_or_else(|| {
                Error::estimation(format!("{}: missing covariate '{name}'", rec.locator()))
            })?;
            match (enc, value) {
                (ColumnEncoding::Numeric, XValue::Numeric(v)) => out.push(*v),
                (ColumnEncoding::Categorical { levels }, XValue::Categorical(s)) => {
                    if !levels.contains(s) {
                        return Err(Error::estimation(format!(
                            "{}: unseen level '{s}' for covariate '{name}'",
                            rec.locator()
                        )));
                    }
                    for level in &levels[1..] {
                        out.push(if s == level { 1.0 } else { 0.0 });
                    }
                }
                _ => {
                    return Err(Error::estimation(format!(
                        "{}: covariate '{name}' type mismatch",
                        rec.locator()
                    )))
                }
            }
        }
        Ok(out)
    }

    /// Design matrix with a leading intercept column.
    pub fn design<'a>(
        &self,
        records: impl Iterator<Item = &'a EpisodeRecord>,
    ) -> Result<DesignMatrix> {
        let mut names = vec!["(intercept)".to_string()];
        names.extend(self.names());
        let mut rows = Vec::new();
        for rec in records {
            let mut row = Vec::with_capacity(names.len());
            row.push(1.0);
            row.extend(self.row(rec)?);
            rows.push(row);
        }
        DesignMatrix::new(names, &rows)
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn design(names: &[&str], rows: &[Vec<f64>]) -> DesignMatrix {
        DesignMatrix::new(names.iter().map(|s| s.to_string()).collect(), rows).unwrap()
    }

    #[test]
    fn intercept_only_fits_the_mean() {
        let x = design(&["(intercept)"], &[vec![1.0], vec![1.0], vec![1.0]]);
        let m = fit_ols(&x, &[2.0, 2.0, 2.0]).unwrap();
        assert_eq!(m.coef, vec![2.0]);
        assert_eq!(m.predict_row(&[1.0]), 2.0);
        assert!(m.dropped.is_empty());
    }

    #[test]
    fn exact_line_is_recovered() {
        let xs = [0.0, 1.0, 2.0, 5.0];
        let rows: Vec<Vec<f64>> = xs.iter().map(|&v| vec![1.0, v]).collect();
        let y: Vec<f64> = xs.iter().map(|&v| 3.0 + 2.0 * v).collect();
        let m = fit_ols(&design(&["(intercept)", "x"], &rows), &y).unwrap();
        assert_abs_diff_eq!(m.coef[0], 3.0, epsilon = 1e-10);
        assert_abs_diff_eq!(m.coef[1], 2.0, epsilon = 1e-10);
        assert_abs_diff_eq!(m.resid_var.unwrap(), 0.0, epsilon = 1e-18);
    }

    #[test]
    fn duplicated_column_is_dropped_without_changing_predictions() {
        let xs = [0.0, 1.0, 2.0, 4.0];
        let y = [1.0, 2.0, 2.5, 5.0];
        let single: Vec<Vec<f64>> = xs.iter().map(|&v| vec![1.0, v]).collect();
        let doubled: Vec<Vec<f64>> = xs.iter().map(|&v| vec![1.0, v, v]).collect();
        let m1 = fit_ols(&design(&["(intercept)", "x"], &single), &y).unwrap();
        let m2 = fit_ols(&design(&["(intercept)", "x", "x_copy"], &doubled), &y).unwrap();
        assert_eq!(m2.dropped, vec!["x_copy".to_string()]);
        for (&v, row) in xs.iter().zip(&doubled) {
            let p1 = m1.predict_row(&[1.0, v]);
            assert_abs_diff_eq!(m2.predict_row(row), p1, epsilon = 1e-10);
        }
    }

    #[test]
    fn residuals_are_orthogonal_to_kept_columns() {
        let rows: Vec<Vec<f64>> = (0..7)
            .map(|i| {
                let t = i as f64;
                vec![1.0, t, (t * 0.7).sin(), t * t * 0.1]
            })
            .collect();
        let y: Vec<f64> = (0..7).map(|i| ((i * 37 % 11) as f64) * 0.3 - 1.0).collect();
        let x = design(&["(intercept)", "a", "b", "c"], &rows);
        let m = fit_ols(&x, &y).unwrap();
        let resid: Vec<f64> = rows.iter().zip(&y).map(|(r, &yi)| yi - m.predict_row(r)).collect();
        let y_norm: f64 = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        for &c in &m.kept {
            let dot: f64 = rows.iter().zip(&resid).map(|(r, &e)| r[c] * e).sum();
            let col_norm: f64 = rows.iter().map(|r| r[c] * r[c]).sum::<f64>().sqrt();
            assert!(dot.abs() <= 1e-8 * col_norm * y_norm.max(1.0), "column {c}: {dot}");
        }
    }

    #[test]
    fn adding_a_constant_shifts_only_the_intercept() {
        let rows: Vec<Vec<f64>> = (0..6).map(|i| vec![1.0, i as f64, (i as f64).powi(2)]).collect();
        let y: Vec<f64> = (0..6).map(|i| (i as f64) * 1.3 + ((i * i % 5) as f64)).collect();
        let shifted: Vec<f64> = y.iter().map(|v| v + 10.0).collect();
        let x = design(&["(intercept)", "a", "b"], &rows);
        let m0 = fit_ols(&x, &y).unwrap();
        let m1 = fit_ols(&x, &shifted).unwrap();
        assert_abs_diff_eq!(m1.coef[0], m0.coef[0] + 10.0, epsilon = 1e-10);
        assert_abs_diff_eq!(m1.coef[1], m0.coef[1], epsilon = 1e-10);
        assert_abs_diff_eq!(m1.coef[2], m0.coef[2], epsilon = 1e-10);
    }

    #[test]
    fn zero_rows_is_an_error() {
        let x = design(&["(intercept)"], &[]);
        assert!(fit_ols(&x, &[]).is_err());
    }

    #[test]
    fn hc1_matches_hand_computation() {
        // x = 0,1,2; y = 0,1,3: slope HC1 variance is exactly 1/24.
        let rows = vec![vec![1.0, 0.0], vec![1.0, 1.0], vec![1.0, 2.0]];
        let y = [0.0, 1.0, 3.0];
        let x = design(&["(intercept)", "x"], &rows);
        let m = fit_ols(&x, &y).unwrap();
        let rc = hc1_covariance(&x, &y, &m).unwrap();
        let i = rc.names.iter().position(|n| n == "x").unwrap();
        assert_abs_diff_eq!(rc.cov[(i, i)], 1.0 / 24.0, epsilon = 1e-10);
        let j = rc.names.iter().position(|n| n == "(intercept)").unwrap();
        assert_abs_diff_eq!(rc.cov[(j, j)], 7.0 / 72.0, epsilon = 1e-10);
        assert_abs_diff_eq!(rc.se_for("x").unwrap(), (1.0f64 / 24.0).sqrt(), epsilon = 1e-10);
    }

    #[test]
    fn encoder_reference_codes_categoricals() {
        use crate::data::{DataSchema, parse_records};
        let schema_json = r#"{
            "participant_id": "pid", "episode": "episode", "arm": "arm", "outcome": "y",
            "covariates": {
                "size": {"role": "x", "type": "categorical"},
                "age": {"role": "x", "type": "numeric"}
            }
        }"#;
        let schema = DataSchema::from_reader(schema_json.as_bytes()).unwrap();
        let csv = "pid,episode,arm,y,size,age\n\
                   a,1,1,1,small,30\n\
                   b,1,1,1,large,40\n\
                   c,1,1,1,medium,50\n";
        let (rs, _) = parse_records(csv.as_bytes(), &schema).unwrap();
        let enc =
            CovariateEncoder::build(rs.records().iter(), &["size".into(), "age".into()]).unwrap();
        // reference = first sorted level ("large")
        assert_eq!(enc.names(), vec!["size=medium", "size=small", "age"]);
        assert_eq!(enc.row(&rs.records()[0]).unwrap(), vec![0.0, 1.0, 30.0]);
        assert_eq!(enc.row(&rs.records()[1]).unwrap(), vec![0.0, 0.0, 40.0]);
        assert_eq!(enc.row(&rs.records()[2]).unwrap(), vec![1.0, 0.0, 50.0]);
        let d = enc.design(rs.records().iter()).unwrap();
        assert_eq!(d.names[0], "(intercept)");
        assert_eq!(d.n_rows(), 3);

        // unseen level at encode time errors
        let csv2 = "pid,episode,arm,y,size,age\nz,1,1,1,tiny,20\n";
        let (rs2, _) = parse_records(csv2.as_bytes(), &schema).unwrap();
        let err = enc.row(&rs2.records()[0]).unwrap_err();
        assert!(err.to_string().contains("unseen level"), "{err}");
    }
}
