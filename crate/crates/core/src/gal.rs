//! Gradient adjustment learning.
//!
//! A small MLP `h` reads the model output `z` and predicts an adjustment
//! direction `v` for the feature-space gradient `∂ℓ/∂z`. The adjustment is
//! rescaled to `ṽ = α‖∂ℓ/∂z‖·v/‖v‖` and added to the gradient,
//! `g = ∂ℓ/∂z + ṽ`. A probe step `z − η̃g` (with `η̃ = β·η`) decides whether
//! the task model is updated with `g` or with the vanilla gradient, and `h`
//! is trained to minimize the absolute first-order Taylor remainder
//!
//! ```text
//! r = ℓ(z − η̃g) − ℓ(z) + η̃·⟨∇ℓ(z), g⟩
//! ```
//!
//! All batch quantities are row-wise: every sample gets its own adjustment,
//! normalized by its own gradient row, while the update decision compares
//! batch-mean losses.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{GalError, Result};
use crate::linalg::{cosine_similarity, dot, l2_norm, Matrix, SeededRng};
use crate::loss::{FeatureLoss, LossKind, SupervisedLoss, Targets};
use crate::mlp::{ForwardCache, MlpArchitecture, MlpModel};
use crate::optim::{Optimizer, OptimizerSpec};

/// Which gradient drives the task-model update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdatePolicy {
    /// Adjusted iff tentative loss ≤ loss.
    #[default]
    ConditionalLe,
    /// Adjusted iff tentative loss < loss.
    ConditionalLt,
    AlwaysAdjusted,
    AlwaysVanilla,
}

impl UpdatePolicy {
    pub const ALL: [UpdatePolicy; 4] = [
        UpdatePolicy::ConditionalLe,
        UpdatePolicy::ConditionalLt,
        UpdatePolicy::AlwaysAdjusted,
        UpdatePolicy::AlwaysVanilla,
    ];

    pub fn name(self) -> &'static str {
        match self {
            UpdatePolicy::ConditionalLe => "conditional_le",
            UpdatePolicy::ConditionalLt => "conditional_lt",
            UpdatePolicy::AlwaysAdjusted => "always_adjusted",
            UpdatePolicy::AlwaysVanilla => "always_vanilla",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Adjusted,
    Vanilla,
}

/// Where the raw adjustment `v` comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdjustmentSource {
    #[default]
    Learned,
    NoiseUniform,
    NoiseNormal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseDistribution {
    /// `U(−1, 1)` per coordinate.
    Uniform,
    /// `N(0, 1)` per coordinate.
    Normal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GalConfig {
    /// Adjustment magnitude relative to the gradient norm, in `[0, 1]`.
    pub alpha: f64,
    /// Tentative learning rate multiplier, `η̃ = β·η`.
    pub beta: f64,
    pub policy: UpdatePolicy,
    /// Adjuster layout; input and output size must equal the feature dimension.
    pub adjuster_arch: MlpArchitecture,
    pub adjuster_optimizer: OptimizerSpec,
    pub adjustment_source: AdjustmentSource,
    /// For noise sources: rescale by the gradient norm (`true`) or use
    /// `α·v/‖v‖` (`false`).
    pub noise_scaled: bool,
}

impl GalConfig {
    /// Learned adjustment with the default conditional policy.
    pub fn new(
        alpha: f64,
        beta: f64,
        adjuster_arch: MlpArchitecture,
        adjuster_optimizer: OptimizerSpec,
    ) -> Self {
        Self {
            alpha,
            beta,
            policy: UpdatePolicy::default(),
            adjuster_arch,
            adjuster_optimizer,
            adjustment_source: AdjustmentSource::Learned,
            noise_scaled: true,
        }
    }

    pub fn validate(&self, feature_dim: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(GalError::InvalidConfig(format!(
                "alpha must be in [0, 1], got {}",
                self.alpha
            )));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(GalError::InvalidConfig(format!(
                "beta must be positive, got {}",
                self.beta
            )));
        }
        self.adjuster_arch.validate()?;
        if self.adjuster_arch.input_dim != feature_dim
            || self.adjuster_arch.output_dim != feature_dim
        {
            return Err(GalError::InvalidConfig(format!(
                "adjuster maps {} -> {}, feature dimension is {}",
                self.adjuster_arch.input_dim, self.adjuster_arch.output_dim, feature_dim
            )));
        }
        self.adjuster_optimizer.validate()
    }
}

/// One record of the per-step log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub tentative_loss: f64,
    pub remainder: f64,
    pub abs_remainder: f64,
    /// Mean over rows of cos(∂ℓ/∂z, ṽ).
    pub cos_sim: f64,
    pub branch: Branch,
    pub grad_norm: f64,
    pub adj_norm: f64,
    pub wall_ms: f64,
}

fn scaled_direction(v: &[f64], magnitude: f64) -> Result<Vec<f64>> {
    let norm = l2_norm(v)?;
    if norm == 0.0 || magnitude == 0.0 {
        return Ok(vec![0.0; v.len()]);
    }
    Ok(v.iter().map(|x| magnitude * x / norm).collect())
}

/// `ṽ = α‖grad‖·v/‖v‖` and `g = grad + ṽ`, returned as `(g, ṽ)`.
///
/// `ṽ` is the zero vector when `α`, `‖grad‖` or `‖v‖` is zero, in which case
/// `g` is exactly `grad`.
pub fn compute_adjusted_gradient(
    grad_row: &[f64],
    v_raw: &[f64],
    alpha: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if grad_row.len() != v_raw.len() {
        return Err(GalError::LengthMismatch {
            expected: grad_row.len(),
            got: v_raw.len(),
        });
    }
    let v_tilde = scaled_direction(v_raw, alpha * l2_norm(grad_row)?)?;
    if v_tilde.iter().all(|&x| x == 0.0) {
        return Ok((grad_row.to_vec(), v_tilde));
    }
    let g = grad_row.iter().zip(&v_tilde).map(|(a, b)| a + b).collect();
    Ok((g, v_tilde))
}

/// Random adjustment in place of the learned one: `v` is drawn per
/// coordinate, then normalized to `α‖grad‖` (scaled) or to `α` (unscaled).
pub fn noise_adjustment(
    dist: NoiseDistribution,
    scaled: bool,
    grad_row: &[f64],
    alpha: f64,
    rng: &mut SeededRng,
) -> Result<Vec<f64>> {
    let v: Vec<f64> = (0..grad_row.len())
        .map(|_| match dist {
            NoiseDistribution::Uniform => rng.uniform(-1.0, 1.0),
            NoiseDistribution::Normal => rng.standard_normal(),
        })
        .collect();
    let magnitude = if scaled {
        alpha * l2_norm(grad_row)?
    } else {
        alpha
    };
    scaled_direction(&v, magnitude)
}

/// `ℓ(z − η̃g)`.
pub fn tentative_loss<L: FeatureLoss>(
    z: &Matrix,
    g: &Matrix,
    eta_tilde: f64,
    loss: &L,
) -> Result<f64> {
    loss.value(&z.add_scaled(g, -eta_tilde)?)
}

/// `ℓ(z − η̃g) − ℓ(z) + η̃·⟨∇ℓ(z), g⟩`, the inner product taken over every
/// entry of the batch.
pub fn remainder<L: FeatureLoss>(z: &Matrix, g: &Matrix, eta_tilde: f64, loss: &L) -> Result<f64> {
    let (value, grad) = loss.value_and_grad(z)?;
    let tentative = tentative_loss(z, g, eta_tilde, loss)?;
    Ok(tentative - value + eta_tilde * grad.frobenius_dot(g)?)
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `Jᵀx` for the Jacobian of `ṽ = c·v/‖v‖`, `J = c(I/‖v‖ − vvᵀ/‖v‖³)`.
/// Evaluated as `c/‖v‖·(x − v̂(v̂·x))`, which is exactly zero in 1-D.
fn normalization_vjp(v: &[f64], c: f64, x: &[f64]) -> Vec<f64> {
    let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if norm == 0.0 || c == 0.0 {
        return vec![0.0; v.len()];
    }
    let unit: Vec<f64> = v.iter().map(|a| a / norm).collect();
    let proj = dot(&unit, x);
    unit.iter()
        .zip(x)
        .map(|(ui, xi)| c * (xi - ui * proj) / norm)
        .collect()
}

/// Row-wise `∂|r|/∂v` given `sign(r)` and `∂r/∂g = η̃(∇ℓ(z) − ∇ℓ(z − η̃g))`.
fn abs_remainder_grad_rows(
    v_raw: &Matrix,
    grad: &Matrix,
    alpha: f64,
    r_sign: f64,
    dr_dg: &Matrix,
) -> Result<Matrix> {
    let mut out = Matrix::zeros(v_raw.rows(), v_raw.cols());
    if r_sign == 0.0 || alpha == 0.0 {
        return Ok(out);
    }
    for i in 0..v_raw.rows() {
        let c = alpha * l2_norm(grad.row(i))?;
        let row = normalization_vjp(v_raw.row(i), c, dr_dg.row(i));
        for (o, x) in out.row_mut(i).iter_mut().zip(row) {
            *o = r_sign * x;
        }
    }
    Ok(out)
}

fn adjust_rows(grad: &Matrix, v_raw: &Matrix, alpha: f64) -> Result<(Matrix, Matrix)> {
    if grad.shape() != v_raw.shape() {
        return Err(GalError::ShapeMismatch(format!(
            "gradient {}x{} vs adjustment {}x{}",
            grad.rows(),
            grad.cols(),
            v_raw.rows(),
            v_raw.cols()
        )));
    }
    let mut g = Matrix::zeros(grad.rows(), grad.cols());
    let mut v_tilde = Matrix::zeros(grad.rows(), grad.cols());
    for i in 0..grad.rows() {
        let (gi, vi) = compute_adjusted_gradient(grad.row(i), v_raw.row(i), alpha)?;
        g.row_mut(i).copy_from_slice(&gi);
        v_tilde.row_mut(i).copy_from_slice(&vi);
    }
    Ok((g, v_tilde))
}

/// `∂|r|/∂v` for raw adjustments `v_raw` (one row per sample), where `grad`
/// is the vanilla feature gradient `∇ℓ(z)`. Rows with `‖v‖ = 0` get a zero
/// gradient, and so does the whole batch when `r = 0`.
pub fn remainder_grad_wrt_v<L: FeatureLoss>(
    z: &Matrix,
    v_raw: &Matrix,
    grad: &Matrix,
    alpha: f64,
    eta_tilde: f64,
    loss: &L,
) -> Result<Matrix> {
    let (g, _) = adjust_rows(grad, v_raw, alpha)?;
    let shifted = z.add_scaled(&g, -eta_tilde)?;
    let (tentative, grad_tentative) = loss.value_and_grad(&shifted)?;
    let r = tentative - loss.value(z)? + eta_tilde * grad.frobenius_dot(&g)?;
    let dr_dg = grad.sub(&grad_tentative)?.scale(eta_tilde);
    abs_remainder_grad_rows(v_raw, grad, alpha, sign(r), &dr_dg)
}

pub fn select_update(policy: UpdatePolicy, loss: f64, tentative: f64) -> Result<Branch> {
    if loss.is_nan() || tentative.is_nan() {
        return Err(GalError::NonFinite("loss in update selection".into()));
    }
    let adjusted = match policy {
        UpdatePolicy::ConditionalLe => tentative <= loss,
        UpdatePolicy::ConditionalLt => tentative < loss,
        UpdatePolicy::AlwaysAdjusted => true,
        UpdatePolicy::AlwaysVanilla => false,
    };
    Ok(if adjusted {
        Branch::Adjusted
    } else {
        Branch::Vanilla
    })
}

/// Everything computed at `z` before any parameter moves.
#[derive(Debug, Clone)]
pub struct Proposal {
    pub loss: f64,
    /// Vanilla feature gradient `∇ℓ(z)`.
    pub grad: Matrix,
    /// Adjusted gradient `g`.
    pub adjusted: Matrix,
    pub v_raw: Matrix,
    pub v_tilde: Matrix,
    pub eta_tilde: f64,
    pub tentative_loss: f64,
    pub remainder: f64,
    pub branch: Branch,
    adjuster_cache: Option<ForwardCache>,
}

impl Proposal {
    /// The feature gradient selected by the update policy.
    pub fn update_gradient(&self) -> &Matrix {
        match self.branch {
            Branch::Adjusted => &self.adjusted,
            Branch::Vanilla => &self.grad,
        }
    }

    pub fn cos_sim(&self) -> Result<f64> {
        let n = self.grad.rows();
        let mut total = 0.0;
        for i in 0..n {
            total += cosine_similarity(self.grad.row(i), self.v_tilde.row(i))?;
        }
        Ok(total / n as f64)
    }

    pub fn diagnostics(&self, epoch: usize, step: usize, wall_ms: f64) -> Result<StepDiagnostics> {
        Ok(StepDiagnostics {
            epoch,
            step,
            loss: self.loss,
            tentative_loss: self.tentative_loss,
            remainder: self.remainder,
            abs_remainder: self.remainder.abs(),
            cos_sim: self.cos_sim()?,
            branch: self.branch,
            grad_norm: self.grad.frobenius_norm(),
            adj_norm: self.v_tilde.frobenius_norm(),
            wall_ms,
        })
    }
}

/// The adjuster `h`, its optimizer and the noise source.
#[derive(Debug, Clone)]
pub struct GalStepper {
    config: GalConfig,
    adjuster: MlpModel,
    adjuster_opt: Optimizer,
    rng: SeededRng,
}

impl GalStepper {
    /// Initializes the adjuster from `rng`, which is then kept for noise draws.
    pub fn new(config: GalConfig, feature_dim: usize, mut rng: SeededRng) -> Result<Self> {
        config.validate(feature_dim)?;
        let adjuster = MlpModel::init(&config.adjuster_arch, &mut rng)?;
        let adjuster_opt = Optimizer::new(config.adjuster_optimizer.clone())?;
        Ok(Self {
            config,
            adjuster,
            adjuster_opt,
            rng,
        })
    }

    pub fn config(&self) -> &GalConfig {
        &self.config
    }

    pub fn adjuster(&self) -> &MlpModel {
        &self.adjuster
    }

    pub fn adjuster_mut(&mut self) -> &mut MlpModel {
        &mut self.adjuster
    }

    /// Forward pass, adjustment and update decision at `z`.
    pub fn propose<L: FeatureLoss>(
        &mut self,
        z: &Matrix,
        loss: &L,
        learning_rate: f64,
    ) -> Result<Proposal> {
        let (value, grad) = loss.value_and_grad(z)?;
        if !value.is_finite() {
            return Err(GalError::NonFinite("loss".into()));
        }
        let alpha = self.config.alpha;
        let (v_raw, adjuster_cache, adjusted, v_tilde) = match self.config.adjustment_source {
            AdjustmentSource::Learned => {
                // z enters the adjuster as plain data; nothing flows back into the task model.
                let (v_raw, cache) = self.adjuster.forward(z)?;
                let (g, v_tilde) = adjust_rows(&grad, &v_raw, alpha)?;
                (v_raw, Some(cache), g, v_tilde)
            }
            AdjustmentSource::NoiseUniform | AdjustmentSource::NoiseNormal => {
                let dist = if self.config.adjustment_source == AdjustmentSource::NoiseUniform {
                    NoiseDistribution::Uniform
                } else {
                    NoiseDistribution::Normal
                };
                let mut v_tilde = Matrix::zeros(grad.rows(), grad.cols());
                for i in 0..grad.rows() {
                    let row = noise_adjustment(
                        dist,
                        self.config.noise_scaled,
                        grad.row(i),
                        alpha,
                        &mut self.rng,
                    )?;
                    v_tilde.row_mut(i).copy_from_slice(&row);
                }
                let g = grad.add(&v_tilde)?;
                (v_tilde.clone(), None, g, v_tilde)
            }
        };
        let eta_tilde = self.config.beta * learning_rate;
        let tentative = tentative_loss(z, &adjusted, eta_tilde, loss)?;
        let branch = select_update(self.config.policy, value, tentative)?;
        let remainder = tentative - value + eta_tilde * grad.frobenius_dot(&adjusted)?;
        Ok(Proposal {
            loss: value,
            grad,
            adjusted,
            v_raw,
            v_tilde,
            eta_tilde,
            tentative_loss: tentative,
            remainder,
            branch,
            adjuster_cache,
        })
    }

    /// One optimizer step of the adjuster on `|r|` at the proposal's point.
    /// A no-op for noise sources.
    pub fn learn<L: FeatureLoss>(
        &mut self,
        z: &Matrix,
        loss: &L,
        proposal: &Proposal,
    ) -> Result<()> {
        let Some(cache) = &proposal.adjuster_cache else {
            return Ok(());
        };
        let shifted = z.add_scaled(&proposal.adjusted, -proposal.eta_tilde)?;
        let (_, grad_tentative) = loss.value_and_grad(&shifted)?;
        let dr_dg = proposal
            .grad
            .sub(&grad_tentative)?
            .scale(proposal.eta_tilde);
        let dv = abs_remainder_grad_rows(
            &proposal.v_raw,
            &proposal.grad,
            self.config.alpha,
            sign(proposal.remainder),
            &dr_dg,
        )?;
        let grads = self.adjuster.backprop(cache, &dv)?.to_flat();
        let mut params = self.adjuster.flat_params();
        self.adjuster_opt.apply_update(&mut params, &grads)?;
        self.adjuster.set_flat_params(&params)
    }
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

fn update_model(model: &mut MlpModel, optimizer: &mut Optimizer, grads: &[f64]) -> Result<()> {
    let mut params = model.flat_params();
    optimizer.apply_update(&mut params, grads)?;
    model.set_flat_params(&params)
}

/// One step of gradient adjustment learning on a batch: forward pass,
/// adjusted gradient, policy-selected update of the task model, then one
/// update of the adjuster on `|r|`.
#[allow(clippy::too_many_arguments)]
pub fn gal_train_step(
    model: &mut MlpModel,
    stepper: &mut GalStepper,
    optimizer: &mut Optimizer,
    x: &Matrix,
    y: &Targets,
    kind: LossKind,
    epoch: usize,
    step: usize,
) -> Result<StepDiagnostics> {
    let start = Instant::now();
    let (z, cache) = model.forward(x)?;
    let loss = SupervisedLoss::new(kind, y);
    let proposal = stepper.propose(&z, &loss, optimizer.learning_rate())?;
    let grads = model
        .backprop(&cache, proposal.update_gradient())?
        .to_flat();
    update_model(model, optimizer, &grads)?;
    stepper.learn(&z, &loss, &proposal)?;
    proposal.diagnostics(epoch, step, elapsed_ms(start))
}

/// A plain training step. Diagnostics report no probe: the tentative loss
/// equals the loss and the remainder is zero.
pub fn vanilla_train_step(
    model: &mut MlpModel,
    optimizer: &mut Optimizer,
    x: &Matrix,
    y: &Targets,
    kind: LossKind,
    epoch: usize,
    step: usize,
) -> Result<StepDiagnostics> {
    let start = Instant::now();
    let (z, cache) = model.forward(x)?;
    let (loss, grad) = SupervisedLoss::new(kind, y).value_and_grad(&z)?;
    if !loss.is_finite() {
        return Err(GalError::NonFinite("loss".into()));
    }
    let grads = model.backprop(&cache, &grad)?.to_flat();
    update_model(model, optimizer, &grads)?;
    Ok(StepDiagnostics {
        epoch,
        step,
        loss,
        tentative_loss: loss,
        remainder: 0.0,
        abs_remainder: 0.0,
        cos_sim: 0.0,
        branch: Branch::Vanilla,
        grad_norm: grad.frobenius_norm(),
        adj_norm: 0.0,
        wall_ms: elapsed_ms(start),
    })
}
