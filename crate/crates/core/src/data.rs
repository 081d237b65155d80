//! Dataset representation, CSV ingestion, covariate standardization and the
//! modified-response transform.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Covariates, binary treatment and outcome for `n` subjects.
///
/// Rows of `covariates` are subjects. All entries are finite and every
/// treatment value is exactly `0.0` or `1.0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    covariates: DMatrix<f64>,
    treatment: DVector<f64>,
    outcome: DVector<f64>,
    column_names: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(
        covariates: DMatrix<f64>,
        treatment: DVector<f64>,
        outcome: DVector<f64>,
        column_names: Option<Vec<String>>,
    ) -> Result<Self> {
        let (n, p) = covariates.shape();
        if n < 2 {
            return Err(Error::TooFewRows { needed: 2, found: n });
        }
        if p < 2 {
            return Err(Error::TooFewColumns(p));
        }
        if treatment.len() != n || outcome.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{n} covariate rows, {} treatments, {} outcomes",
                treatment.len(),
                outcome.len()
            )));
        }
        if let Some(names) = &column_names {
            if names.len() != p {
                return Err(Error::DimensionMismatch(format!(
                    "{p} covariates but {} column names",
                    names.len()
                )));
            }
        }
        for i in 0..n {
            for j in 0..p {
                let v = covariates[(i, j)];
                if !v.is_finite() {
                    return Err(Error::NonNumericCell {
                        row: i,
                        column: column_label(&column_names, j),
                        cell: v.to_string(),
                    });
                }
            }
            let a = treatment[i];
            if a != 0.0 && a != 1.0 {
                return Err(Error::NonBinaryTreatment { row: i, value: a });
            }
            if !outcome[i].is_finite() {
                return Err(Error::NonNumericCell {
                    row: i,
                    column: "outcome".into(),
                    cell: outcome[i].to_string(),
                });
            }
        }
        Ok(Self {
            covariates,
            treatment,
            outcome,
            column_names,
        })
    }

    pub fn n(&self) -> usize {
        self.covariates.nrows()
    }

    pub fn p(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn covariates(&self) -> &DMatrix<f64> {
        &self.covariates
    }

    pub fn treatment(&self) -> &DVector<f64> {
        &self.treatment
    }

    pub fn outcome(&self) -> &DVector<f64> {
        &self.outcome
    }

    pub fn column_names(&self) -> Option<&[String]> {
        self.column_names.as_deref()
    }

    /// Label for covariate `j` (0-based), falling back to `x{j+1}`.
    pub fn column_name(&self, j: usize) -> String {
        column_label(&self.column_names, j)
    }

    /// Rows selected by `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let p = self.p();
        let x = DMatrix::from_fn(idx.len(), p, |r, c| self.covariates[(idx[r], c)]);
        let a = DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.treatment[i]));
        let y = DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.outcome[i]));
        Dataset {
            covariates: x,
            treatment: a,
            outcome: y,
            column_names: self.column_names.clone(),
        }
    }

    /// Appends every pairwise product `x_j * x_k` (`j < k`) after the main
    /// effects. Names are joined with `:`.
    pub fn with_interactions(&self) -> Dataset {
        let (n, p) = self.covariates.shape();
        let q = p + p * (p - 1) / 2;
        let mut x = DMatrix::zeros(n, q);
        x.columns_mut(0, p).copy_from(&self.covariates);
        let mut names: Vec<String> = (0..p).map(|j| self.column_name(j)).collect();
        let mut col = p;
        for j in 0..p {
            for k in (j + 1)..p {
                for i in 0..n {
                    x[(i, col)] = self.covariates[(i, j)] * self.covariates[(i, k)];
                }
                names.push(format!("{}:{}", names[j], names[k]));
                col += 1;
            }
        }
        Dataset {
            covariates: x,
            treatment: self.treatment.clone(),
            outcome: self.outcome.clone(),
            column_names: Some(names),
        }
    }
}

fn column_label(names: &Option<Vec<String>>, j: usize) -> String {
    names
        .as_ref()
        .and_then(|v| v.get(j).cloned())
        .unwrap_or_else(|| format!("x{}", j + 1))
}

/// Which columns of a CSV file hold the covariates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CovariateSelector {
    /// Every column other than outcome and treatment, in file order.
    Remaining,
    List(Vec<String>),
    /// Columns whose header starts with the prefix, in file order.
    Prefix(String),
}

impl CovariateSelector {
    /// Parses `a,b,c` as a list and `x*` as a prefix glob. An empty string
    /// selects the remaining columns.
    pub fn parse(spec: &str) -> Self {
        let spec = spec.trim();
        if spec.is_empty() {
            CovariateSelector::Remaining
        } else if let Some(prefix) = spec.strip_suffix('*') {
            CovariateSelector::Prefix(prefix.to_string())
        } else {
            CovariateSelector::List(spec.split(',').map(|s| s.trim().to_string()).collect())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnSchema {
    pub outcome: String,
    pub treatment: String,
    pub covariates: CovariateSelector,
}

impl Default for ColumnSchema {
    fn default() -> Self {
        Self {
            outcome: "y".into(),
            treatment: "a".into(),
            covariates: CovariateSelector::Remaining,
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &ColumnSchema) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    read_csv(file, schema)
}

/// Parses a headed CSV from any reader. See [`load_csv`].
pub fn read_csv<R: std::io::Read>(reader: R, schema: &ColumnSchema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let y_col = find(&schema.outcome)?;
    let a_col = find(&schema.treatment)?;
    let x_cols: Vec<usize> = match &schema.covariates {
        CovariateSelector::Remaining => (0..headers.len())
            .filter(|&c| c != y_col && c != a_col)
            .collect(),
        CovariateSelector::List(names) => names.iter().map(|s| find(s)).collect::<Result<_>>()?,
        CovariateSelector::Prefix(prefix) => {
            let cols: Vec<usize> = (0..headers.len())
                .filter(|&c| c != y_col && c != a_col && headers[c].starts_with(prefix.as_str()))
                .collect();
            if cols.is_empty() {
                return Err(Error::MissingColumn(format!("{prefix}*")));
            }
            cols
        }
    };
    let p = x_cols.len();

    let mut xs = Vec::new();
    let mut a = Vec::new();
    let mut y = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let cell = |c: usize| -> Result<f64> {
            let raw = rec.get(c).unwrap_or("");
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::NonNumericCell {
                    row,
                    column: headers[c].clone(),
                    cell: raw.to_string(),
                })
        };
        let av = cell(a_col)?;
        if av != 0.0 && av != 1.0 {
            return Err(Error::NonBinaryTreatment { row, value: av });
        }
        a.push(av);
        y.push(cell(y_col)?);
        for &c in &x_cols {
            xs.push(cell(c)?);
        }
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::TooFewRows { needed: 2, found: n });
    }
    let names = x_cols.iter().map(|&c| headers[c].clone()).collect();
    Dataset::new(
        DMatrix::from_row_slice(n, p, &xs),
        DVector::from_vec(a),
        DVector::from_vec(y),
        Some(names),
    )
}

/// Writes `y,a,<covariates>` with 17 significant digits per value.
pub fn write_csv<W: std::io::Write>(d: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["y".to_string(), "a".to_string()];
    header.extend((0..d.p()).map(|j| d.column_name(j)));
    w.write_record(&header)?;
    for i in 0..d.n() {
        let mut rec = Vec::with_capacity(d.p() + 2);
        rec.push(format!("{:.16e}", d.outcome[i]));
        rec.push(format!("{}", d.treatment[i]));
        for j in 0..d.p() {
            rec.push(format!("{:.16e}", d.covariates[(i, j)]));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Centers every covariate to mean zero and scales to sample variance one
/// (divisor `n - 1`). Treatment and outcome are untouched.
pub fn standardize(d: &Dataset) -> Result<Dataset> {
    let n = d.n() as f64;
    let mut x = d.covariates.clone();
    for (j, mut col) in x.column_iter_mut().enumerate() {
        let (lo, hi) = col
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        if lo == hi {
            return Err(Error::ConstantColumn(j));
        }
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let sd = var.sqrt();
        col.apply(|v| *v = (*v - mean) / sd);
    }
    Ok(Dataset {
        covariates: x,
        ..d.clone()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseMode {
    Randomized,
    Observational,
}

/// The transformed outcome whose conditional mean given `x` isolates the
/// treatment-covariate interaction.
#[derive(Debug, Clone, PartialEq)]
pub struct ModifiedResponse {
    pub values: DVector<f64>,
    pub mode: ResponseMode,
    pub propensity: Option<DVector<f64>>,
}

/// `2(2A - 1)Y` for randomized data, `4(A - pi(x))Y` for observational data.
pub fn modify_response(
    d: &Dataset,
    mode: ResponseMode,
    propensity: Option<&DVector<f64>>,
) -> Result<ModifiedResponse> {
    let a = &d.treatment;
    let y = &d.outcome;
    match mode {
        ResponseMode::Randomized => Ok(ModifiedResponse {
            values: DVector::from_fn(d.n(), |i, _| 2.0 * (2.0 * a[i] - 1.0) * y[i]),
            mode,
            propensity: None,
        }),
        ResponseMode::Observational => {
            let pi = propensity.ok_or(Error::PropensityMissing)?;
            if pi.len() != d.n() {
                return Err(Error::DimensionMismatch(format!(
                    "{} subjects but {} propensities",
                    d.n(),
                    pi.len()
                )));
            }
            if let Some((row, &value)) = pi
                .iter()
                .enumerate()
                .find(|(_, v)| !(**v > 0.0 && **v < 1.0))
            {
                return Err(Error::PropensityOutOfRange { row, value });
            }
            Ok(ModifiedResponse {
                values: DVector::from_fn(d.n(), |i, _| 4.0 * (a[i] - pi[i]) * y[i]),
                mode,
                propensity: Some(pi.clone()),
            })
        }
    }
}

/// Index coefficient with the first entry pinned to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    rest: DVector<f64>,
}

impl Coefficient {
    /// `(1, rest)`.
    pub fn new(rest: DVector<f64>) -> Self {
        Self { rest }
    }

    pub fn zeros(p: usize) -> Self {
        Self::new(DVector::zeros(p - 1))
    }

    /// Builds from a full length-`p` vector whose first entry must be one.
    pub fn from_full(full: &[f64]) -> Result<Self> {
        match full.first() {
            Some(&1.0) => Ok(Self::new(DVector::from_column_slice(&full[1..]))),
            Some(&f) => Err(Error::InvalidConfig(format!(
                "first coefficient must be 1, got {f}"
            ))),
            None => Err(Error::InvalidConfig("empty coefficient".into())),
        }
    }

    pub fn first(&self) -> f64 {
        1.0
    }

    pub fn rest(&self) -> &DVector<f64> {
        &self.rest
    }

    pub fn p(&self) -> usize {
        self.rest.len() + 1
    }

    pub fn full(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.p());
        v[0] = 1.0;
        v.rows_mut(1, self.rest.len()).copy_from(&self.rest);
        v
    }

    /// `X beta` for every row of `x`.
    pub fn index_values(&self, x: &DMatrix<f64>) -> DVector<f64> {
        let mut u = x.column(0).clone_owned();
        u.gemv(1.0, &x.columns(1, self.rest.len()), &self.rest, 1.0);
        u
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Dataset {
        Dataset::new(
            DMatrix::from_row_slice(3, 2, &[1.0, 4.0, 2.0, 5.0, 3.0, 9.0]),
            DVector::from_vec(vec![1.0, 0.0, 1.0]),
            DVector::from_vec(vec![2.0, 2.0, -1.0]),
            None,
        )
        .unwrap()
    }

    #[test]
    fn loads_three_row_file() {
        let text = "y,a,x1,x2\n1.5,1,0.1,0.2\n2.5,0,0.3,0.4\n-1,1,0.5,0.6\n";
        let d = read_csv(text.as_bytes(), &ColumnSchema::default()).unwrap();
        assert_eq!((d.n(), d.p()), (3, 2));
        assert_eq!(d.outcome()[2], -1.0);
        assert_eq!(d.covariates()[(1, 1)], 0.4);
        assert_eq!(d.column_names().unwrap(), ["x1", "x2"]);
    }

    #[test]
    fn rejects_bad_files() {
        let schema = ColumnSchema::default();
        let bad_a = "y,a,x1,x2\n1,2,0,0\n1,0,1,1\n";
        assert!(matches!(
            read_csv(bad_a.as_bytes(), &schema),
            Err(Error::NonBinaryTreatment { row: 0, .. })
        ));
        let missing = "y,t,x1,x2\n1,1,0,0\n1,0,1,1\n";
        assert_eq!(
            read_csv(missing.as_bytes(), &schema),
            Err(Error::MissingColumn("a".into()))
        );
        let text = "y,a,x1,x2\n1,1,abc,0\n1,0,1,1\n";
        assert!(matches!(
            read_csv(text.as_bytes(), &schema),
            Err(Error::NonNumericCell { .. })
        ));
        let empty_cell = "y,a,x1,x2\n1,1,,0\n1,0,1,1\n";
        assert!(matches!(
            read_csv(empty_cell.as_bytes(), &schema),
            Err(Error::NonNumericCell { .. })
        ));
        let one_row = "y,a,x1,x2\n1,1,0,0\n";
        assert_eq!(
            read_csv(one_row.as_bytes(), &schema),
            Err(Error::TooFewRows { needed: 2, found: 1 })
        );
    }

    #[test]
    fn covariate_selectors() {
        let text = "id,x1,y,x2,a,z\n0,1,2,3,1,5\n1,6,7,8,0,9\n";
        let prefix = ColumnSchema {
            covariates: CovariateSelector::parse("x*"),
            ..Default::default()
        };
        let d = read_csv(text.as_bytes(), &prefix).unwrap();
        assert_eq!(d.column_names().unwrap(), ["x1", "x2"]);
        let list = ColumnSchema {
            covariates: CovariateSelector::parse("z, x1"),
            ..Default::default()
        };
        let d = read_csv(text.as_bytes(), &list).unwrap();
        assert_eq!(d.covariates()[(1, 0)], 9.0);
        let rest = read_csv(text.as_bytes(), &ColumnSchema::default()).unwrap();
        assert_eq!(rest.p(), 4);
    }

    #[test]
    fn standardize_small_column() {
        let d = tiny();
        let s = standardize(&d).unwrap();
        let col: Vec<f64> = s.covariates().column(0).iter().copied().collect();
        assert_eq!(col, vec![-1.0, 0.0, 1.0]);
        assert_eq!(s.outcome(), d.outcome());
        assert_eq!(s.treatment(), d.treatment());
        let again = standardize(&s).unwrap();
        for (a, b) in again.covariates().iter().zip(s.covariates().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn standardize_rejects_constant_column() {
        let d = Dataset::new(
            DMatrix::from_row_slice(3, 2, &[1.0, 0.3, 2.0, 0.3, 3.0, 0.3]),
            DVector::from_vec(vec![1.0, 0.0, 1.0]),
            DVector::zeros(3),
            None,
        )
        .unwrap();
        assert_eq!(standardize(&d), Err(Error::ConstantColumn(1)));
    }

    #[test]
    fn modified_response_values() {
        let d = Dataset::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
            DVector::from_vec(vec![1.0, 0.0]),
            DVector::from_vec(vec![2.0, 2.0]),
            None,
        )
        .unwrap();
        let r = modify_response(&d, ResponseMode::Randomized, None).unwrap();
        assert_eq!(r.values.as_slice(), &[4.0, -4.0]);
        let half = DVector::from_element(2, 0.5);
        let o = modify_response(&d, ResponseMode::Observational, Some(&half)).unwrap();
        assert_eq!(o.values.as_slice(), &[4.0, -4.0]);
        assert_eq!(
            modify_response(&d, ResponseMode::Observational, None),
            Err(Error::PropensityMissing)
        );
        let bad = DVector::from_vec(vec![0.5, 1.0]);
        assert!(matches!(
            modify_response(&d, ResponseMode::Observational, Some(&bad)),
            Err(Error::PropensityOutOfRange { row: 1, .. })
        ));
    }

    #[test]
    fn interactions_append_products() {
        let d = tiny().with_interactions();
        assert_eq!(d.p(), 3);
        assert_eq!(d.covariates()[(2, 2)], 27.0);
        assert_eq!(d.column_name(2), "x1:x2");
    }

    #[test]
    fn coefficient_layout() {
        let b = Coefficient::new(DVector::from_vec(vec![-1.0, 0.5]));
        assert_eq!(b.full().as_slice(), &[1.0, -1.0, 0.5]);
        assert_eq!(Coefficient::from_full(&[1.0, -1.0, 0.5]).unwrap(), b);
        assert!(Coefficient::from_full(&[2.0, 0.0]).is_err());
        let x = DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 1.0, 0.0, 2.0, 4.0]);
        assert_eq!(b.index_values(&x).as_slice(), &[0.5, 0.0]);
    }
}
