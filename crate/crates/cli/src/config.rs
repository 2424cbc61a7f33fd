//! Flat TOML run configuration. Every key is optional; each command fills the
//! gaps from its own defaults. Unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use eqprop::dynamics::{AlphaOrder, EulerSign, Phase1Init};
use eqprop::learning::UpdateMode;
use eqprop::rbp::DerivativeScheme;
use eqprop::{Activation, Execution, FieldKind, HyperParams};
use serde::Deserialize;

use crate::error::CliError;

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Layer sizes from input to output.
    pub architecture: Option<Vec<usize>>,
    pub activation: Option<Activation>,
    pub field_kind: Option<FieldKind>,

    pub epsilon: Option<f64>,
    pub beta: Option<f64>,
    pub alphas: Option<Vec<f64>>,
    pub alpha_order: Option<AlphaOrder>,
    pub iters_phase1: Option<usize>,
    pub iters_phase2: Option<usize>,
    pub lambda: Option<f64>,
    pub minibatch: Option<usize>,
    pub seed: Option<u64>,
    pub residual_tol: Option<f64>,
    pub euler_sign: Option<EulerSign>,
    pub phase1_init: Option<Phase1Init>,
    pub update_mode: Option<UpdateMode>,
    pub execution: Option<Execution>,

    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    pub subset: Option<usize>,
    pub epochs: Option<usize>,
    /// Weights snapshot (JSON) to start from instead of a Glorot draw.
    pub init_weights: Option<PathBuf>,

    pub fleet_size: Option<u64>,
    pub target_at_free_output: Option<bool>,
    pub fd_step: Option<f64>,
    pub t_horizon: Option<f64>,
    pub weight_cap: Option<usize>,
    pub temporal_beta: Option<f64>,
    pub include_scalar_case: Option<bool>,
    pub min_fraction_positive: Option<f64>,
    pub scalar_case: Option<bool>,
    pub record_every: Option<usize>,
    pub derivative_scheme: Option<DerivativeScheme>,
    pub example_index: Option<usize>,
}

impl RunConfig {
    /// Parses `path`; relative dataset and snapshot paths are resolved
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.train_images,
            &mut cfg.train_labels,
            &mut cfg.test_images,
            &mut cfg.test_labels,
            &mut cfg.init_weights,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        if let Some(arch) = &cfg.architecture {
            if arch.len() < 2 || arch.contains(&0) {
                return Err("architecture needs at least an input and an output layer, all nonempty".into());
            }
        }
        Ok(cfg)
    }

    /// `base` with every hyperparameter key present in the config applied.
    pub fn hyper_params(&self, base: HyperParams) -> HyperParams {
        HyperParams {
            epsilon: self.epsilon.unwrap_or(base.epsilon),
            beta: self.beta.unwrap_or(base.beta),
            alphas: self.alphas.clone().unwrap_or(base.alphas),
            alpha_order: self.alpha_order.unwrap_or(base.alpha_order),
            iters_phase1: self.iters_phase1.unwrap_or(base.iters_phase1),
            iters_phase2: self.iters_phase2.unwrap_or(base.iters_phase2),
            lambda: self.lambda.unwrap_or(base.lambda),
            minibatch: self.minibatch.unwrap_or(base.minibatch),
            seed: self.seed.unwrap_or(base.seed),
            residual_tol: self.residual_tol.or(base.residual_tol),
            euler_sign: self.euler_sign.unwrap_or(base.euler_sign),
            phase1_init: self.phase1_init.unwrap_or(base.phase1_init),
            execution: self.execution.unwrap_or(base.execution),
        }
    }

    pub fn architecture_or(&self, default: &[usize]) -> Vec<usize> {
        self.architecture.clone().unwrap_or_else(|| default.to_vec())
    }
}
