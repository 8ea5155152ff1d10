//! First-order optimizers over flat parameter vectors, plus the Lookahead
//! wrapper.
//!
//! Every optimizer consumes a gradient and moves the parameters in place.
//! Weight decay is coupled (added to the gradient) for every kind except
//! AdamW, where it is decoupled from the adaptive step.

use serde::{Deserialize, Serialize};

use crate::error::{GalError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    RmsProp,
    Adam,
    AdamW,
    Adabound,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 5] = [
        OptimizerKind::Sgd,
        OptimizerKind::RmsProp,
        OptimizerKind::Adam,
        OptimizerKind::AdamW,
        OptimizerKind::Adabound,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::RmsProp => "rmsprop",
            OptimizerKind::Adam => "adam",
            OptimizerKind::AdamW => "adamw",
            OptimizerKind::Adabound => "adabound",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == name.to_ascii_lowercase())
            .ok_or_else(|| GalError::InvalidConfig(format!("unknown optimizer {name:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LookaheadSpec {
    /// Inner steps between synchronizations.
    pub k: u64,
    /// Interpolation factor toward the fast weights.
    pub slow_alpha: f64,
}

impl Default for LookaheadSpec {
    fn default() -> Self {
        Self {
            k: 5,
            slow_alpha: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSpec {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default = "default_final_lr")]
    pub final_lr: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default)]
    pub lookahead: Option<LookaheadSpec>,
}

fn default_rho() -> f64 {
    0.9
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_final_lr() -> f64 {
    0.1
}
fn default_gamma() -> f64 {
    1e-3
}

impl OptimizerSpec {
    /// Spec with the defaults published alongside each method.
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        Self {
            kind,
            learning_rate,
            momentum: 0.0,
            rho: default_rho(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            weight_decay: if kind == OptimizerKind::AdamW {
                1e-2
            } else {
                0.0
            },
            final_lr: default_final_lr(),
            gamma: default_gamma(),
            lookahead: None,
        }
    }

    pub fn sgd(learning_rate: f64) -> Self {
        Self::new(OptimizerKind::Sgd, learning_rate)
    }

    pub fn adam(learning_rate: f64) -> Self {
        Self::new(OptimizerKind::Adam, learning_rate)
    }

    pub fn with_lookahead(mut self, k: u64, slow_alpha: f64) -> Self {
        self.lookahead = Some(LookaheadSpec { k, slow_alpha });
        self
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..1.0).contains(&v) {
                Ok(())
            } else {
                Err(GalError::InvalidConfig(format!(
                    "{name} must be in [0, 1), got {v}"
                )))
            }
        };
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(GalError::InvalidConfig(format!(
                    "{name} must be positive, got {v}"
                )))
            }
        };
        positive("learning_rate", self.learning_rate)?;
        positive("eps", self.eps)?;
        positive("final_lr", self.final_lr)?;
        positive("gamma", self.gamma)?;
        unit("momentum", self.momentum)?;
        unit("rho", self.rho)?;
        unit("beta1", self.beta1)?;
        unit("beta2", self.beta2)?;
        if !(self.weight_decay >= 0.0) {
            return Err(GalError::InvalidConfig(
                "weight_decay must be non-negative".into(),
            ));
        }
        if let Some(la) = self.lookahead {
            if la.k < 1 {
                return Err(GalError::InvalidConfig(
                    "lookahead k must be at least 1".into(),
                ));
            }
            if !(la.slow_alpha > 0.0 && la.slow_alpha <= 1.0) {
                return Err(GalError::InvalidConfig(format!(
                    "lookahead slow_alpha must be in (0, 1], got {}",
                    la.slow_alpha
                )));
            }
        }
        Ok(())
    }

    /// A short human-readable label, e.g. `lookahead(sgd)`.
    pub fn label(&self) -> String {
        match self.lookahead {
            Some(_) => format!("lookahead({})", self.kind.name()),
            None => self.kind.name().to_string(),
        }
    }
}

/// Adabound's clip interval for the per-coordinate step factor at step `t`.
pub fn adabound_bounds(final_lr: f64, gamma: f64, t: u64) -> (f64, f64) {
    let t = t as f64;
    (
        final_lr * (1.0 - 1.0 / (gamma * t + 1.0)),
        final_lr * (1.0 + 1.0 / (gamma * t)),
    )
}

/// Accumulators, sized on first use to the parameter vector.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptimizerState {
    /// Inner steps taken.
    pub t: u64,
    /// Momentum buffer (SGD), squared-gradient average (RMSProp) or first
    /// moment (Adam family).
    pub first: Vec<f64>,
    /// Second moment (Adam family).
    pub second: Vec<f64>,
    /// Lookahead slow weights.
    pub slow: Option<Vec<f64>>,
    /// Adabound step factors of the last step, after clipping.
    pub step_factors: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    spec: OptimizerSpec,
    state: OptimizerState,
}

impl Optimizer {
    pub fn new(spec: OptimizerSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            spec,
            state: OptimizerState::default(),
        })
    }

    pub fn spec(&self) -> &OptimizerSpec {
        &self.spec
    }

    pub fn state(&self) -> &OptimizerState {
        &self.state
    }

    pub fn learning_rate(&self) -> f64 {
        self.spec.learning_rate
    }

    /// One optimizer step followed, when Lookahead is enabled, by
    /// [`Optimizer::lookahead_sync`].
    pub fn apply_update(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if self.spec.lookahead.is_some() && self.state.slow.is_none() {
            self.state.slow = Some(params.to_vec());
        }
        self.inner_step(params, grads)?;
        self.lookahead_sync(params)
    }

    /// The wrapped optimizer's update only.
    pub fn inner_step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(GalError::LengthMismatch {
                expected: params.len(),
                got: grads.len(),
            });
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(GalError::NonFinite("gradient".into()));
        }
        let n = params.len();
        let st = &mut self.state;
        if st.t == 0 {
            st.first = vec![0.0; n];
            st.second = vec![0.0; n];
        } else if st.first.len() != n {
            return Err(GalError::LengthMismatch {
                expected: st.first.len(),
                got: n,
            });
        }
        st.t += 1;
        let s = &self.spec;
        let lr = s.learning_rate;
        let coupled_decay = if s.kind == OptimizerKind::AdamW {
            0.0
        } else {
            s.weight_decay
        };

        match s.kind {
            OptimizerKind::Sgd => {
                for i in 0..n {
                    let g = grads[i] + coupled_decay * params[i];
                    let step = if s.momentum > 0.0 {
                        st.first[i] = if st.t == 1 {
                            g
                        } else {
                            s.momentum * st.first[i] + g
                        };
                        st.first[i]
                    } else {
                        g
                    };
                    params[i] -= lr * step;
                }
            }
            OptimizerKind::RmsProp => {
                for i in 0..n {
                    let g = grads[i] + coupled_decay * params[i];
                    st.first[i] = s.rho * st.first[i] + (1.0 - s.rho) * g * g;
                    params[i] -= lr * g / (st.first[i].sqrt() + s.eps);
                }
            }
            OptimizerKind::Adam | OptimizerKind::AdamW => {
                let t = st.t as i32;
                let bc1 = 1.0 - s.beta1.powi(t);
                let bc2 = 1.0 - s.beta2.powi(t);
                for i in 0..n {
                    if s.kind == OptimizerKind::AdamW {
                        params[i] *= 1.0 - lr * s.weight_decay;
                    }
                    let g = grads[i] + coupled_decay * params[i];
                    st.first[i] = s.beta1 * st.first[i] + (1.0 - s.beta1) * g;
                    st.second[i] = s.beta2 * st.second[i] + (1.0 - s.beta2) * g * g;
                    let m_hat = st.first[i] / bc1;
                    let v_hat = st.second[i] / bc2;
                    params[i] -= lr * m_hat / (v_hat.sqrt() + s.eps);
                }
            }
            OptimizerKind::Adabound => {
                let t = st.t as i32;
                let step_size = lr * (1.0 - s.beta2.powi(t)).sqrt() / (1.0 - s.beta1.powi(t));
                let (lower, upper) = adabound_bounds(s.final_lr, s.gamma, st.t);
                st.step_factors.resize(n, 0.0);
                for i in 0..n {
                    let g = grads[i] + coupled_decay * params[i];
                    st.first[i] = s.beta1 * st.first[i] + (1.0 - s.beta1) * g;
                    st.second[i] = s.beta2 * st.second[i] + (1.0 - s.beta2) * g * g;
                    let factor = (step_size / (st.second[i].sqrt() + s.eps)).clamp(lower, upper);
                    st.step_factors[i] = factor;
                    params[i] -= factor * st.first[i];
                }
            }
        }
        Ok(())
    }

    /// Every `k` inner steps: `slow ← slow + α(fast − slow)` and
    /// `fast ← slow`. A no-op without Lookahead.
    pub fn lookahead_sync(&mut self, params: &mut [f64]) -> Result<()> {
        let Some(la) = self.spec.lookahead else {
            return Ok(());
        };
        let slow = self.state.slow.get_or_insert_with(|| params.to_vec());
        if slow.len() != params.len() {
            return Err(GalError::LengthMismatch {
                expected: slow.len(),
                got: params.len(),
            });
        }
        if self.state.t.is_multiple_of(la.k) {
            for (s, p) in slow.iter_mut().zip(params.iter_mut()) {
                *s += la.slow_alpha * (*p - *s);
                *p = *s;
            }
        }
        Ok(())
    }
}
