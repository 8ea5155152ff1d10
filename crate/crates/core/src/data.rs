//! Datasets: CSV ingestion, splitting, standardization, synthetic generators
//! and two-dimensional test functions for optimizer trajectories.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{GalError, Result};
use crate::linalg::{Matrix, SeededRng};
use crate::loss::{FeatureLoss, Targets};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Regression,
    Classification,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub x: Matrix,
    pub y: Targets,
    pub feature_names: Vec<String>,
    pub target_names: Vec<String>,
    /// Rows skipped at load time because a cell was missing or not numeric.
    pub dropped_rows: usize,
}

impl Dataset {
    pub fn new(name: impl Into<String>, x: Matrix, y: Targets) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(GalError::Dataset(format!(
                "{} feature rows but {} targets",
                x.rows(),
                y.len()
            )));
        }
        let feature_names = (0..x.cols()).map(|i| format!("x{i}")).collect();
        let target_names = match &y {
            Targets::Real(m) => (0..m.cols()).map(|i| format!("y{i}")).collect(),
            Targets::Classes(_) => vec!["class".into()],
        };
        Ok(Self {
            name: name.into(),
            x,
            y,
            feature_names,
            target_names,
            dropped_rows: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn task(&self) -> Task {
        match self.y {
            Targets::Real(_) => Task::Regression,
            Targets::Classes(_) => Task::Classification,
        }
    }

    /// Output width a model needs: target columns, or the class count.
    pub fn output_dim(&self) -> usize {
        match &self.y {
            Targets::Real(m) => m.cols(),
            Targets::Classes(c) => c.iter().max().map_or(0, |m| m + 1),
        }
    }

    pub fn select_rows(&self, indices: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            x: self.x.select_rows(indices),
            y: self.y.select_rows(indices),
            feature_names: self.feature_names.clone(),
            target_names: self.target_names.clone(),
            dropped_rows: 0,
        }
    }
}

fn parse_cell(s: &str) -> Option<f64> {
    let v: f64 = s.trim().parse().ok()?;
    v.is_finite().then_some(v)
}

/// Reads a headed CSV. Every non-target column becomes a feature. Rows with
/// a missing or non-numeric cell are dropped and counted in
/// [`Dataset::dropped_rows`]. Classification targets must be non-negative
/// integers.
pub fn load_csv_dataset(
    path: impl AsRef<Path>,
    target_columns: &[String],
    task: Task,
) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)?;
    let headers: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if headers.is_empty() {
        return Err(GalError::Dataset(format!("{}: empty file", path.display())));
    }
    if target_columns.is_empty() {
        return Err(GalError::Dataset("no target column given".into()));
    }
    let mut target_idx = Vec::with_capacity(target_columns.len());
    for name in target_columns {
        let idx = headers.iter().position(|h| h == name).ok_or_else(|| {
            GalError::Dataset(format!(
                "{}: missing target column {name:?}",
                path.display()
            ))
        })?;
        target_idx.push(idx);
    }
    if task == Task::Classification && target_idx.len() != 1 {
        return Err(GalError::Dataset(
            "classification takes exactly one target column".into(),
        ));
    }
    let feature_idx: Vec<usize> = (0..headers.len())
        .filter(|i| !target_idx.contains(i))
        .collect();
    if feature_idx.is_empty() {
        return Err(GalError::Dataset(format!(
            "{}: no feature columns",
            path.display()
        )));
    }

    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut rows = 0;
    let mut dropped = 0;
    for record in reader.records() {
        let record = record?;
        let parsed: Option<Vec<f64>> = (0..headers.len())
            .map(|i| record.get(i).and_then(parse_cell))
            .collect();
        let Some(values) = parsed else {
            dropped += 1;
            continue;
        };
        if task == Task::Classification {
            let c = values[target_idx[0]];
            if c < 0.0 || c.fract() != 0.0 {
                dropped += 1;
                continue;
            }
        }
        xs.extend(feature_idx.iter().map(|&i| values[i]));
        ys.extend(target_idx.iter().map(|&i| values[i]));
        rows += 1;
    }
    if rows == 0 {
        return Err(GalError::Dataset(format!(
            "{}: no usable rows",
            path.display()
        )));
    }
    let x = Matrix::new(rows, feature_idx.len(), xs)?;
    let y = match task {
        Task::Regression => Targets::Real(Matrix::new(rows, target_idx.len(), ys)?),
        Task::Classification => Targets::Classes(ys.into_iter().map(|c| c as usize).collect()),
    };
    let name = path
        .file_stem()
        .map_or_else(|| "dataset".into(), |s| s.to_string_lossy().into_owned());
    Ok(Dataset {
        name,
        x,
        y,
        feature_names: feature_idx.iter().map(|&i| headers[i].clone()).collect(),
        target_names: target_columns.to_vec(),
        dropped_rows: dropped,
    })
}

/// Shuffled split with `floor(n · train_fraction)` training rows.
pub fn split(
    dataset: &Dataset,
    train_fraction: f64,
    rng: &mut SeededRng,
) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(GalError::InvalidConfig(format!(
            "train fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    let n = dataset.len();
    let n_train = (n as f64 * train_fraction).floor() as usize;
    if n_train == 0 || n_train == n {
        return Err(GalError::InvalidConfig(format!(
            "fraction {train_fraction} of {n} rows leaves one side empty"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut idx);
    Ok((
        dataset.select_rows(&idx[..n_train]),
        dataset.select_rows(&idx[n_train..]),
    ))
}

/// Per-column affine map `(v − mean) / std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ColumnScaler {
    /// Population statistics of each column. A constant column maps to
    /// itself (mean 0, std 1) so it is left untouched.
    pub fn fit(m: &Matrix) -> Result<Self> {
        if m.rows() == 0 {
            return Err(GalError::Dataset(
                "cannot fit statistics on zero rows".into(),
            ));
        }
        let n = m.rows() as f64;
        let mut mean = m.column_sums();
        mean.iter_mut().for_each(|v| *v /= n);
        let mut var = vec![0.0; m.cols()];
        for row in m.row_iter() {
            for ((v, x), mu) in var.iter_mut().zip(row).zip(&mean) {
                *v += (x - mu) * (x - mu);
            }
        }
        let mut std = Vec::with_capacity(m.cols());
        for (c, v) in var.iter().enumerate() {
            let s = (v / n).sqrt();
            if s > 0.0 {
                std.push(s);
            } else {
                mean[c] = 0.0;
                std.push(1.0);
            }
        }
        Ok(Self { mean, std })
    }

    pub fn transform(&self, m: &Matrix) -> Result<Matrix> {
        self.check(m)?;
        let mut out = m.clone();
        for r in 0..out.rows() {
            for ((v, mu), s) in out.row_mut(r).iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - mu) / s;
            }
        }
        Ok(out)
    }

    pub fn inverse(&self, m: &Matrix) -> Result<Matrix> {
        self.check(m)?;
        let mut out = m.clone();
        for r in 0..out.rows() {
            for ((v, mu), s) in out.row_mut(r).iter_mut().zip(&self.mean).zip(&self.std) {
                *v = *v * s + mu;
            }
        }
        Ok(out)
    }

    fn check(&self, m: &Matrix) -> Result<()> {
        if m.cols() != self.mean.len() {
            return Err(GalError::LengthMismatch {
                expected: self.mean.len(),
                got: m.cols(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub features: ColumnScaler,
    /// Present for regression targets only.
    pub targets: Option<ColumnScaler>,
}

impl StandardizationStats {
    /// Maps standardized predictions back to original target units.
    pub fn inverse_targets(&self, m: &Matrix) -> Result<Matrix> {
        match &self.targets {
            Some(s) => s.inverse(m),
            None => Ok(m.clone()),
        }
    }
}

fn apply(stats: &StandardizationStats, d: &Dataset) -> Result<Dataset> {
    let mut out = d.clone();
    out.x = stats.features.transform(&d.x)?;
    if let (Some(s), Targets::Real(y)) = (&stats.targets, &d.y) {
        out.y = Targets::Real(s.transform(y)?);
    }
    Ok(out)
}

/// Z-scores features (and real targets) with training-split statistics.
pub fn standardize(
    train: &Dataset,
    test: &Dataset,
) -> Result<(StandardizationStats, Dataset, Dataset)> {
    if train.is_empty() {
        return Err(GalError::Dataset("empty training split".into()));
    }
    let targets = match &train.y {
        Targets::Real(y) => Some(ColumnScaler::fit(y)?),
        Targets::Classes(_) => None,
    };
    let stats = StandardizationStats {
        features: ColumnScaler::fit(&train.x)?,
        targets,
    };
    let train_s = apply(&stats, train)?;
    let test_s = apply(&stats, test)?;
    Ok((stats, train_s, test_s))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SyntheticTask {
    /// Gaussian clusters around centers drawn uniformly from `[−1, 1]^dim`.
    Blobs {
        classes: usize,
        dim: usize,
        n: usize,
        spread: f64,
    },
    /// `y = xᵀw + noise·ε` with `x, w, ε ~ N(0, 1)`.
    LinearRegression { dim: usize, n: usize, noise: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub dataset: Dataset,
    /// Cluster centers (`classes × dim`) or true weights (`dim × 1`).
    pub truth: Matrix,
}

pub fn make_synthetic(task: SyntheticTask, rng: &mut SeededRng) -> Result<SyntheticData> {
    match task {
        SyntheticTask::Blobs {
            classes,
            dim,
            n,
            spread,
        } => {
            if classes < 2 || dim == 0 || n < classes || !(spread >= 0.0) {
                return Err(GalError::InvalidConfig(format!(
                    "blobs need classes >= 2, dim >= 1, n >= classes and spread >= 0 (got {classes}, {dim}, {n}, {spread})"
                )));
            }
            let centers = Matrix::new(
                classes,
                dim,
                (0..classes * dim).map(|_| rng.uniform(-1.0, 1.0)).collect(),
            )?;
            let mut x = Matrix::zeros(n, dim);
            let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
            for (i, &c) in labels.iter().enumerate() {
                for (j, v) in x.row_mut(i).iter_mut().enumerate() {
                    *v = centers.get(c, j) + spread * rng.standard_normal();
                }
            }
            let dataset = Dataset::new("blobs", x, Targets::Classes(labels))?;
            Ok(SyntheticData {
                dataset,
                truth: centers,
            })
        }
        SyntheticTask::LinearRegression { dim, n, noise } => {
            if dim == 0 || n == 0 || !(noise >= 0.0) {
                return Err(GalError::InvalidConfig(
                    "linear regression needs dim, n >= 1 and noise >= 0".into(),
                ));
            }
            let w = Matrix::new(dim, 1, (0..dim).map(|_| rng.standard_normal()).collect())?;
            let x = Matrix::new(
                n,
                dim,
                (0..n * dim).map(|_| rng.standard_normal()).collect(),
            )?;
            let mut y = x.matmul(&w)?;
            for v in y.as_mut_slice() {
                *v += noise * rng.standard_normal();
            }
            let dataset = Dataset::new("linear", x, Targets::Real(y))?;
            Ok(SyntheticData { dataset, truth: w })
        }
    }
}

/// Two-dimensional test functions with analytic gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyKind {
    /// `x² + y²`.
    QuadraticBowl,
    /// `(1 − x)² + 100(y − x²)²`.
    Rosenbrock,
    /// `x² − y² + y⁴/4`: a saddle at the origin, minima at `(0, ±√2)`.
    SaddleEscape,
    /// `½(x² + 100y²)`.
    IllConditionedQuadratic,
    /// `½ Σ (xᵢ⁴ − 16xᵢ² + 5xᵢ)`.
    StyblinskiTang2D,
}

impl ToyKind {
    pub const ALL: [ToyKind; 5] = [
        ToyKind::QuadraticBowl,
        ToyKind::Rosenbrock,
        ToyKind::SaddleEscape,
        ToyKind::IllConditionedQuadratic,
        ToyKind::StyblinskiTang2D,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ToyKind::QuadraticBowl => "quadratic_bowl",
            ToyKind::Rosenbrock => "rosenbrock",
            ToyKind::SaddleEscape => "saddle_escape",
            ToyKind::IllConditionedQuadratic => "ill_conditioned_quadratic",
            ToyKind::StyblinskiTang2D => "styblinski_tang_2d",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        let key = name.to_ascii_lowercase().replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|k| k.name() == key)
            .ok_or_else(|| GalError::InvalidConfig(format!("unknown toy problem {name:?}")))
    }
}

const STYBLINSKI_ARGMIN: f64 = -2.903_534_027_771_177_6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyProblem {
    pub kind: ToyKind,
    pub start: [f64; 2],
}

impl ToyProblem {
    /// The problem with its conventional start point.
    pub fn new(kind: ToyKind) -> Self {
        let start = match kind {
            ToyKind::QuadraticBowl => [1.5, -1.0],
            ToyKind::Rosenbrock => [-1.5, 2.0],
            ToyKind::SaddleEscape => [1.0, 1e-3],
            ToyKind::IllConditionedQuadratic => [2.0, 0.2],
            ToyKind::StyblinskiTang2D => [0.5, 0.5],
        };
        Self { kind, start }
    }

    /// `1/L` for the quadratics, where `L` is the gradient's Lipschitz
    /// constant; a conservative fixed step for the others.
    pub fn default_learning_rate(&self) -> f64 {
        match self.kind {
            ToyKind::QuadraticBowl => 0.5,
            ToyKind::IllConditionedQuadratic => 0.01,
            ToyKind::Rosenbrock => 1e-3,
            ToyKind::SaddleEscape => 0.05,
            ToyKind::StyblinskiTang2D => 0.01,
        }
    }

    pub fn with_start(kind: ToyKind, start: [f64; 2]) -> Self {
        Self { kind, start }
    }

    pub fn value_at(&self, p: [f64; 2]) -> f64 {
        let [x, y] = p;
        match self.kind {
            ToyKind::QuadraticBowl => x * x + y * y,
            ToyKind::Rosenbrock => (1.0 - x).powi(2) + 100.0 * (y - x * x).powi(2),
            ToyKind::SaddleEscape => x * x - y * y + 0.25 * y.powi(4),
            ToyKind::IllConditionedQuadratic => 0.5 * (x * x + 100.0 * y * y),
            ToyKind::StyblinskiTang2D => {
                0.5 * [x, y]
                    .iter()
                    .map(|v| v.powi(4) - 16.0 * v * v + 5.0 * v)
                    .sum::<f64>()
            }
        }
    }

    pub fn gradient_at(&self, p: [f64; 2]) -> [f64; 2] {
        let [x, y] = p;
        match self.kind {
            ToyKind::QuadraticBowl => [2.0 * x, 2.0 * y],
            ToyKind::Rosenbrock => [
                -2.0 * (1.0 - x) - 400.0 * x * (y - x * x),
                200.0 * (y - x * x),
            ],
            ToyKind::SaddleEscape => [2.0 * x, -2.0 * y + y.powi(3)],
            ToyKind::IllConditionedQuadratic => [x, 100.0 * y],
            ToyKind::StyblinskiTang2D => [x, y].map(|v| 0.5 * (4.0 * v.powi(3) - 32.0 * v + 5.0)),
        }
    }

    /// Global minimizer and minimum value.
    pub fn known_minimum(&self) -> ([f64; 2], f64) {
        let at = match self.kind {
            ToyKind::QuadraticBowl | ToyKind::IllConditionedQuadratic => [0.0, 0.0],
            ToyKind::Rosenbrock => [1.0, 1.0],
            ToyKind::SaddleEscape => [0.0, 2f64.sqrt()],
            ToyKind::StyblinskiTang2D => [STYBLINSKI_ARGMIN, STYBLINSKI_ARGMIN],
        };
        (at, self.value_at(at))
    }

    fn check(z: &Matrix) -> Result<()> {
        if z.cols() != 2 || z.rows() == 0 {
            return Err(GalError::ShapeMismatch(format!(
                "toy problems take n x 2 points, got {}x{}",
                z.rows(),
                z.cols()
            )));
        }
        Ok(())
    }
}

/// Mean of the test function over the rows of `z`.
impl FeatureLoss for ToyProblem {
    fn value(&self, z: &Matrix) -> Result<f64> {
        Self::check(z)?;
        let total: f64 = z.row_iter().map(|r| self.value_at([r[0], r[1]])).sum();
        Ok(total / z.rows() as f64)
    }

    fn value_and_grad(&self, z: &Matrix) -> Result<(f64, Matrix)> {
        let value = self.value(z)?;
        let n = z.rows() as f64;
        let mut g = Matrix::zeros(z.rows(), 2);
        for r in 0..z.rows() {
            let [a, b] = self.gradient_at([z.get(r, 0), z.get(r, 1)]);
            g.set(r, 0, a / n);
            g.set(r, 1, b / n);
        }
        Ok((value, g))
    }
}
