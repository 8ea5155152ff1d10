//! Closed-form generalization bound and an empirical check of the
//! angle-refined Taylor remainder bound.
//!
//! For `f` with `L`-Lipschitz gradient and `d = z⁺ − z`, the conventional
//! bound is `|f(z⁺) − f(z) − ∇f(z)ᵀd| ≤ (L/2)‖d‖²`. The refined bound
//! multiplies it by `|cos γ|`, the largest cosine between `d` and the
//! gradient change `∇f(z + τd) − ∇f(z)` along the segment.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::error::{GalError, Result};
use crate::linalg::{cosine_similarity, dot, l2_norm, Matrix, SeededRng};

pub const DEFAULT_TAU_GRID: usize = 101;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundInputs {
    /// Size of the finite hypothesis set.
    pub hypothesis_count: f64,
    pub delta: f64,
    /// Dimension of the adjustment vector.
    pub dim: usize,
    /// Every adjustment coordinate lies in `[a, b]`.
    pub a: f64,
    pub b: f64,
    pub p: f64,
    pub sample_count: usize,
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(GalError::InvalidConfig(msg));
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta must be in (0, 1), got {}", self.delta));
        }
        if !(self.hypothesis_count >= 1.0) {
            return bad(format!(
                "hypothesis count must be at least 1, got {}",
                self.hypothesis_count
            ));
        }
        if self.dim == 0 || self.sample_count == 0 {
            return bad("dimension and sample count must be positive".into());
        }
        if !(self.a <= self.b) {
            return bad(format!("need a <= b, got a = {}, b = {}", self.a, self.b));
        }
        if !(self.p >= 1.0) {
            return bad(format!("p must be at least 1, got {}", self.p));
        }
        Ok(())
    }
}

/// `(d(b − a)^p)^{1/p} · √((ln|H| + ln(2/δ)) / (2|D|))`.
pub fn generalization_bound(inputs: &BoundInputs) -> Result<f64> {
    inputs.validate()?;
    let range = (inputs.dim as f64 * (inputs.b - inputs.a).powf(inputs.p)).powf(1.0 / inputs.p);
    let complexity = (inputs.hypothesis_count.ln() + (2.0 / inputs.delta).ln())
        / (2.0 * inputs.sample_count as f64);
    Ok(range * complexity.sqrt())
}

/// Smooth functions with a known Lipschitz constant for the gradient.
#[derive(Debug, Clone, PartialEq)]
pub enum SmoothTestFunction {
    /// `½ zᵀAz` with symmetric `A`.
    Quadratic(Matrix),
    /// Cross-entropy of softmax logits against a target distribution,
    /// `LSE(z) − yᵀz`. The Hessian `diag(p) − ppᵀ` has spectral norm at
    /// most ½.
    LogSumExp(Vec<f64>),
    /// `½‖z − y‖²`.
    MseOnFeatures(Vec<f64>),
}

impl SmoothTestFunction {
    pub fn quadratic(a: Matrix) -> Result<Self> {
        if a.rows() != a.cols() {
            return Err(GalError::ShapeMismatch(format!(
                "quadratic form must be square, got {}x{}",
                a.rows(),
                a.cols()
            )));
        }
        for i in 0..a.rows() {
            for j in 0..i {
                let (x, y) = (a.get(i, j), a.get(j, i));
                if (x - y).abs() > 1e-12 * (1.0 + x.abs().max(y.abs())) {
                    return Err(GalError::InvalidConfig(
                        "quadratic form must be symmetric".into(),
                    ));
                }
            }
        }
        Ok(SmoothTestFunction::Quadratic(a))
    }

    pub fn dim(&self) -> usize {
        match self {
            SmoothTestFunction::Quadratic(a) => a.rows(),
            SmoothTestFunction::LogSumExp(y) | SmoothTestFunction::MseOnFeatures(y) => y.len(),
        }
    }

    /// Lipschitz constant of the gradient.
    pub fn lipschitz(&self) -> f64 {
        match self {
            SmoothTestFunction::Quadratic(a) => {
                let m = DMatrix::from_row_slice(a.rows(), a.cols(), a.as_slice());
                SymmetricEigen::new(m)
                    .eigenvalues
                    .iter()
                    .fold(0.0, |acc, e| acc.max(e.abs()))
            }
            SmoothTestFunction::LogSumExp(_) => 0.5,
            SmoothTestFunction::MseOnFeatures(_) => 1.0,
        }
    }

    fn check(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.dim() {
            return Err(GalError::LengthMismatch {
                expected: self.dim(),
                got: z.len(),
            });
        }
        Ok(())
    }

    pub fn value(&self, z: &[f64]) -> Result<f64> {
        self.check(z)?;
        Ok(match self {
            SmoothTestFunction::Quadratic(a) => {
                0.5 * dot(
                    z,
                    &a.matmul(&Matrix::new(z.len(), 1, z.to_vec())?)?.into_vec(),
                )
            }
            SmoothTestFunction::LogSumExp(y) => {
                let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                y.iter().sum::<f64>() * lse - dot(y, z)
            }
            SmoothTestFunction::MseOnFeatures(y) => {
                0.5 * z.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
            }
        })
    }

    pub fn gradient(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check(z)?;
        Ok(match self {
            SmoothTestFunction::Quadratic(a) => {
                a.matmul(&Matrix::new(z.len(), 1, z.to_vec())?)?.into_vec()
            }
            SmoothTestFunction::LogSumExp(y) => {
                let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
                let total: f64 = exps.iter().sum();
                let mass: f64 = y.iter().sum();
                exps.iter()
                    .zip(y)
                    .map(|(e, t)| mass * e / total - t)
                    .collect()
            }
            SmoothTestFunction::MseOnFeatures(y) => z.iter().zip(y).map(|(a, b)| a - b).collect(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RemainderBoundCheck {
    pub lhs: f64,
    pub rhs_revisited: f64,
    pub rhs_conventional: f64,
    pub cos_gamma: f64,
}

impl RemainderBoundCheck {
    /// `lhs ≤ rhs_revisited ≤ rhs_conventional` up to `tol`.
    pub fn holds(&self, tol: f64) -> bool {
        self.lhs <= self.rhs_revisited + tol && self.rhs_revisited <= self.rhs_conventional + tol
    }
}

pub fn remainder_bound_check(
    f: &SmoothTestFunction,
    z: &[f64],
    z_plus: &[f64],
    tau_grid: usize,
) -> Result<RemainderBoundCheck> {
    if z.len() != z_plus.len() {
        return Err(GalError::LengthMismatch {
            expected: z.len(),
            got: z_plus.len(),
        });
    }
    if tau_grid < 2 {
        return Err(GalError::InvalidConfig(format!(
            "tau grid needs at least 2 points, got {tau_grid}"
        )));
    }
    let d: Vec<f64> = z_plus.iter().zip(z).map(|(a, b)| a - b).collect();
    let d_norm = l2_norm(&d)?;
    if d_norm == 0.0 {
        return Err(GalError::InvalidConfig("z and z_plus coincide".into()));
    }
    let grad_z = f.gradient(z)?;
    let lhs = (f.value(z_plus)? - f.value(z)? - dot(&grad_z, &d)).abs();

    let mut cos_gamma: f64 = 0.0;
    for k in 0..tau_grid {
        let tau = k as f64 / (tau_grid - 1) as f64;
        let point: Vec<f64> = z.iter().zip(&d).map(|(a, b)| a + tau * b).collect();
        let change: Vec<f64> = f
            .gradient(&point)?
            .iter()
            .zip(&grad_z)
            .map(|(a, b)| a - b)
            .collect();
        if change.iter().all(|&c| c == 0.0) {
            continue;
        }
        cos_gamma = cos_gamma.max(cosine_similarity(&change, &d)?.abs());
    }
    let rhs_conventional = 0.5 * f.lipschitz() * d_norm * d_norm;
    Ok(RemainderBoundCheck {
        lhs,
        rhs_revisited: rhs_conventional * cos_gamma,
        rhs_conventional,
        cos_gamma,
    })
}

/// A random symmetric positive definite `n×n` matrix, `BBᵀ + εI`.
pub fn random_spd(n: usize, rng: &mut SeededRng) -> Matrix {
    let b = Matrix::new(n, n, (0..n * n).map(|_| rng.standard_normal()).collect())
        .expect("square buffer");
    let mut a = b.matmul_t(&b).expect("square product");
    for i in 0..n {
        a.set(i, i, a.get(i, i) + 1e-3);
    }
    // Symmetrize exactly against rounding in the product.
    for i in 0..n {
        for j in 0..i {
            let m = 0.5 * (a.get(i, j) + a.get(j, i));
            a.set(i, j, m);
            a.set(j, i, m);
        }
    }
    a
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct SweepSummary {
    pub trials: usize,
    pub violations: usize,
    pub ordering_violations: usize,
    pub max_excess: f64,
}

/// Checks the refined bound on `trials` random SPD quadratics of dimension
/// 2 to 10 with random endpoints.
pub fn quadratic_sweep(
    trials: usize,
    tau_grid: usize,
    tol: f64,
    rng: &mut SeededRng,
) -> Result<(SweepSummary, Vec<RemainderBoundCheck>)> {
    let mut summary = SweepSummary {
        trials,
        ..Default::default()
    };
    let mut rows = Vec::with_capacity(trials);
    for _ in 0..trials {
        let n = 2 + rng.below(9);
        let f = SmoothTestFunction::quadratic(random_spd(n, rng))?;
        let z: Vec<f64> = (0..n).map(|_| rng.uniform(-2.0, 2.0)).collect();
        let z_plus: Vec<f64> = (0..n).map(|_| rng.uniform(-2.0, 2.0)).collect();
        let check = remainder_bound_check(&f, &z, &z_plus, tau_grid)?;
        if check.lhs > check.rhs_revisited + tol {
            summary.violations += 1;
        }
        if check.rhs_revisited > check.rhs_conventional + 1e-12 {
            summary.ordering_violations += 1;
        }
        summary.max_excess = summary.max_excess.max(check.lhs - check.rhs_revisited);
        rows.push(check);
    }
    Ok((summary, rows))
}
