//! Covariate/outcome datasets and covariate normalization.

use crate::error::{PrxError, Result};

/// `n` observations of a `p`-dimensional covariate and a scalar outcome.
///
/// Covariates are stored row-major. When `tag_column` is set, that covariate
/// doubles as the per-observation tag consumed by tagged kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    p: usize,
    x: Vec<f64>,
    y: Vec<f64>,
    tag_column: Option<usize>,
}

impl Dataset {
    pub fn new(rows: Vec<Vec<f64>>, y: Vec<f64>) -> Result<Self> {
        if rows.len() != y.len() {
            return Err(PrxError::usage(format!(
                "{} covariate rows but {} outcomes",
                rows.len(),
                y.len()
            )));
        }
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return Err(PrxError::usage("covariate rows have differing dimensions"));
        }
        Self::from_flat(p, rows.into_iter().flatten().collect(), y)
    }

    pub fn from_flat(p: usize, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != p * y.len() {
            return Err(PrxError::usage(format!(
                "covariate buffer of length {} does not match {} rows of dimension {p}",
                x.len(),
                y.len()
            )));
        }
        Ok(Self { p, x, y, tag_column: None })
    }

    /// Univariate covariate convenience constructor.
    pub fn univariate(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        Self::from_flat(1, x, y)
    }

    pub fn with_tag_column(mut self, column: usize) -> Result<Self> {
        if column >= self.p {
            return Err(PrxError::usage(format!(
                "tag column {column} out of range for {} covariates",
                self.p
            )));
        }
        self.tag_column = Some(column);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        (0..self.len()).map(move |i| self.row(i))
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn x_flat(&self) -> &[f64] {
        &self.x
    }

    pub fn tag_column(&self) -> Option<usize> {
        self.tag_column
    }

    /// Tag of observation `i`.
    pub fn tag(&self, i: usize) -> Option<f64> {
        self.tag_column.map(|c| self.x[i * self.p + c])
    }

    /// Tag carried by an arbitrary covariate vector.
    pub fn tag_of(&self, x: &[f64]) -> Option<f64> {
        self.tag_column.map(|c| x[c])
    }

    /// Rows selected (and reordered) by `indices`.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut x = Vec::with_capacity(indices.len() * self.p);
        let mut y = Vec::with_capacity(indices.len());
        for &i in indices {
            x.extend_from_slice(self.row(i));
            y.push(self.y[i]);
        }
        Self { p: self.p, x, y, tag_column: self.tag_column }
    }
}

/// Min-max scaling of covariates onto `[0, 1]^p`.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
}

impl Normalizer {
    /// Identity scaling for covariates already on the unit cube.
    pub fn unit(p: usize) -> Self {
        Self { mins: vec![0.0; p], maxs: vec![1.0; p] }
    }

    pub fn fit(data: &Dataset) -> Self {
        let p = data.dim();
        let mut mins = vec![f64::INFINITY; p];
        let mut maxs = vec![f64::NEG_INFINITY; p];
        for row in data.rows() {
            for j in 0..p {
                mins[j] = mins[j].min(row[j]);
                maxs[j] = maxs[j].max(row[j]);
            }
        }
        Self { mins, maxs }
    }

    /// Columns with zero range; they normalize to all zeros.
    pub fn constant_columns(&self) -> Vec<usize> {
        (0..self.mins.len()).filter(|&j| self.maxs[j] <= self.mins[j]).collect()
    }

    pub fn apply_point(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(j, v)| {
                let range = self.maxs[j] - self.mins[j];
                if range > 0.0 {
                    (v - self.mins[j]) / range
                } else {
                    0.0
                }
            })
            .collect()
    }

    pub fn invert_point(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .enumerate()
            .map(|(j, v)| self.mins[j] + v * (self.maxs[j] - self.mins[j]))
            .collect()
    }

    pub fn apply(&self, data: &Dataset) -> Dataset {
        let mut x = Vec::with_capacity(data.x.len());
        for row in data.rows() {
            x.extend(self.apply_point(row));
        }
        Dataset { p: data.p, x, y: data.y.clone(), tag_column: data.tag_column }
    }
}
