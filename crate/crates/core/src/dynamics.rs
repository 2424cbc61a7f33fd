//! Vector fields, cost, and the clipped-Euler fixed-point solver.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::network::{FieldKind, LayeredNetwork, NetworkState};

/// Residual tolerance assumed by the exact-gradient routines when
/// [`HyperParams::residual_tol`] is unset.
pub const DEFAULT_FIXED_POINT_TOL: f64 = 1e-8;

/// Sign of the Euler step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EulerSign {
    /// `s <- s + eps * mu`, integrating `ds/dt = mu`.
    #[default]
    Plus,
    /// `s <- s - eps * mu`, as printed in the published update rule. This does
    /// not converge to zeros of `mu` in general; kept for comparison runs.
    Minus,
}

impl EulerSign {
    fn factor(self) -> f64 {
        match self {
            EulerSign::Plus => 1.0,
            EulerSign::Minus => -1.0,
        }
    }
}

/// Which end of the network the first learning rate applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaOrder {
    /// `alphas[0]` scales the input-to-hidden connection.
    #[default]
    InputFirst,
    /// `alphas[0]` scales the connection into the output layer.
    OutputFirst,
}

/// Initial state of the free phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase1Init {
    #[default]
    Zeros,
    /// Start from the example's previous free fixed point when one is cached.
    WarmStart,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams {
    /// Euler step in units of the neuron time constant.
    pub epsilon: f64,
    /// Influence parameter of the nudged phase.
    pub beta: f64,
    /// One learning rate per connection layer, ordered by `alpha_order`.
    pub alphas: Vec<f64>,
    pub alpha_order: AlphaOrder,
    pub iters_phase1: usize,
    pub iters_phase2: usize,
    /// Weight-decay coefficient of the cost, `lambda/2 * |theta|^2`.
    pub lambda: f64,
    pub minibatch: usize,
    pub seed: u64,
    /// Optional early stop once `|mu^beta|_inf` drops below this value.
    pub residual_tol: Option<f64>,
    pub euler_sign: EulerSign,
    pub phase1_init: Phase1Init,
    pub execution: Execution,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            epsilon: 0.1,
            beta: 0.5,
            alphas: Vec::new(),
            alpha_order: AlphaOrder::InputFirst,
            iters_phase1: 200,
            iters_phase2: 100,
            lambda: 0.0,
            minibatch: 20,
            seed: 0,
            residual_tol: None,
            euler_sign: EulerSign::Plus,
            phase1_init: Phase1Init::Zeros,
            execution: Execution::default(),
        }
    }
}

impl HyperParams {
    /// First row of the published MNIST hyperparameter table
    /// (784-512-512-10).
    pub fn table1_two_hidden() -> Self {
        HyperParams {
            epsilon: 0.001,
            beta: 1.0,
            alphas: vec![0.4, 0.1, 0.01],
            iters_phase1: 200,
            iters_phase2: 100,
            minibatch: 20,
            ..Default::default()
        }
    }

    /// Second row of the table (784-512-512-512-10).
    pub fn table1_three_hidden() -> Self {
        HyperParams { alphas: vec![1.0, 0.1, 0.04, 0.002], ..Self::table1_two_hidden() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidHyperParams(msg.into()));
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon must be positive");
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad("beta must be nonnegative");
        }
        if self.alphas.iter().any(|a| !(*a >= 0.0 && a.is_finite())) {
            return bad("learning rates must be nonnegative");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be nonnegative");
        }
        if self.iters_phase1 == 0 || self.iters_phase2 == 0 {
            return bad("iteration counts must be positive");
        }
        if self.minibatch == 0 {
            return bad("minibatch must be positive");
        }
        if let Some(tol) = self.residual_tol {
            if !(tol >= 0.0) {
                return bad("residual_tol must be nonnegative");
            }
        }
        Ok(())
    }

    /// Learning rate of connection layer `k`, where `forward[k]` is `W_{k,k+1}`.
    pub(crate) fn alpha_for_forward(&self, net: &LayeredNetwork, k: usize) -> f64 {
        match self.alpha_order {
            AlphaOrder::InputFirst => self.alphas[net.num_connection_layers() - 1 - k],
            AlphaOrder::OutputFirst => self.alphas[k],
        }
    }
}

/// Outcome of one relaxation.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointResult {
    pub state: NetworkState,
    /// [`projected_residual`] of `mu^beta` at `state`, evaluated after the
    /// solver loop finished.
    pub residual_inf_norm: f64,
    pub iterations_used: usize,
    /// Per layer and unit: the clip was active on the final step.
    pub saturated: Vec<Vec<bool>>,
}

impl FixedPointResult {
    pub fn saturated_count(&self) -> usize {
        self.saturated.iter().flatten().filter(|&&b| b).count()
    }
}

/// Element-wise activation.
pub fn rho(v: &DVector<f64>, activation: Activation) -> DVector<f64> {
    crate::activation::rho(v, activation)
}

/// Evaluates the free vector field at `s`.
pub fn mu(net: &LayeredNetwork, x: &DVector<f64>, s: &NetworkState) -> Result<NetworkState> {
    net.check_input(x)?;
    net.check_state(s)?;
    let mut ws = Workspace::new(net, x);
    let mut out = NetworkState::zeros(net);
    ws.field(net, s, &mut out);
    Ok(out)
}

/// `mu` plus the nudging force `beta * (y - s_0)` on the output layer.
pub fn mu_augmented(
    net: &LayeredNetwork,
    x: &DVector<f64>,
    y: &DVector<f64>,
    s: &NetworkState,
    beta: f64,
) -> Result<NetworkState> {
    net.check_target(y)?;
    let mut out = mu(net, x, s)?;
    out.layers[0].axpy(beta, y, 1.0);
    out.layers[0].axpy(-beta, &s.layers[0], 1.0);
    Ok(out)
}

/// Reusable buffers for repeated field evaluations on one input.
pub(crate) struct Workspace {
    input_drive: DVector<f64>,
    rates: Vec<DVector<f64>>,
}

impl Workspace {
    pub(crate) fn new(net: &LayeredNetwork, x: &DVector<f64>) -> Self {
        let rx = rho(x, net.activation());
        let input_drive = net.forward.last().expect("validated") * rx;
        let rates = net.layer_sizes()[..net.num_layers()].iter().map(|&n| DVector::zeros(n)).collect();
        Workspace { input_drive, rates }
    }

    pub(crate) fn field(&mut self, net: &LayeredNetwork, s: &NetworkState, out: &mut NetworkState) {
        let act = net.activation();
        let l = net.num_layers();
        for (rate, layer) in self.rates.iter_mut().zip(&s.layers) {
            rate.zip_apply(layer, |r, v| *r = act.eval(v));
        }
        for k in 0..l {
            let o = &mut out.layers[k];
            if k + 1 < l {
                o.gemv(1.0, &net.forward[k], &self.rates[k + 1], 0.0);
            } else {
                o.copy_from(&self.input_drive);
            }
            if k > 0 {
                o.gemv(1.0, &net.feedback[k - 1], &self.rates[k - 1], 1.0);
            }
            match net.field_kind() {
                FieldKind::Leaky => {
                    o.zip_apply(&s.layers[k], |m, v| *m -= v);
                }
                FieldKind::HopfieldGradient => {
                    o.zip_apply(&s.layers[k], |m, v| *m = act.derivative(v) * *m - v);
                }
            }
        }
    }
}

/// Integrates `ds/dt = mu^beta` with the clipped Euler scheme.
///
/// Runs `iters` steps, or fewer when `hp.residual_tol` is set and reached.
/// Clipping to `[0, 1]` applies only to the hard sigmoid. `y` may be omitted
/// when `beta` is zero.
pub fn relax(
    net: &LayeredNetwork,
    x: &DVector<f64>,
    y: Option<&DVector<f64>>,
    beta: f64,
    init: &NetworkState,
    hp: &HyperParams,
    iters: usize,
) -> Result<FixedPointResult> {
    relax_impl(net, x, y, beta, init, hp, iters, None)
}

/// Like [`relax`], also returning every visited state (the initial state
/// included). Early stopping is disabled so the trajectory has `iters + 1`
/// entries.
pub fn relax_with_trajectory(
    net: &LayeredNetwork,
    x: &DVector<f64>,
    y: Option<&DVector<f64>>,
    beta: f64,
    init: &NetworkState,
    hp: &HyperParams,
    iters: usize,
) -> Result<(FixedPointResult, Vec<NetworkState>)> {
    let mut trajectory = Vec::with_capacity(iters + 1);
    let hp = HyperParams { residual_tol: None, ..hp.clone() };
    let fp = relax_impl(net, x, y, beta, init, &hp, iters, Some(&mut trajectory))?;
    Ok((fp, trajectory))
}

#[allow(clippy::too_many_arguments)]
fn relax_impl(
    net: &LayeredNetwork,
    x: &DVector<f64>,
    y: Option<&DVector<f64>>,
    beta: f64,
    init: &NetworkState,
    hp: &HyperParams,
    iters: usize,
    mut trajectory: Option<&mut Vec<NetworkState>>,
) -> Result<FixedPointResult> {
    net.check_input(x)?;
    net.check_state(init)?;
    if !(hp.epsilon > 0.0) {
        return Err(Error::InvalidHyperParams("epsilon must be positive".into()));
    }
    let zero_target;
    let y = match y {
        Some(y) => {
            net.check_target(y)?;
            y
        }
        None if beta == 0.0 => {
            zero_target = DVector::zeros(net.output_size());
            &zero_target
        }
        None => return Err(Error::InvalidHyperParams("a target is required when beta is nonzero".into())),
    };

    let clip = net.activation().clips_state();
    let step = hp.euler_sign.factor() * hp.epsilon;
    let mut ws = Workspace::new(net, x);
    let mut s = init.clone();
    let mut field = NetworkState::zeros(net);
    let mut saturated: Vec<Vec<bool>> = s.layers.iter().map(|l| vec![false; l.len()]).collect();
    let mut used = 0;

    if let Some(t) = trajectory.as_deref_mut() {
        t.push(s.clone());
    }
    for it in 0..iters {
        ws.field(net, &s, &mut field);
        if beta != 0.0 {
            let out = &mut field.layers[0];
            for ((m, &target), &v) in out.iter_mut().zip(y.iter()).zip(s.layers[0].iter()) {
                *m += beta * (target - v);
            }
        }
        if let Some(tol) = hp.residual_tol {
            if projected_residual(net, &s, &field, hp.euler_sign) < tol {
                break;
            }
        }
        for ((layer, f), sat) in s.layers.iter_mut().zip(&field.layers).zip(saturated.iter_mut()) {
            for ((v, &m), flag) in layer.iter_mut().zip(f.iter()).zip(sat.iter_mut()) {
                let next = *v + step * m;
                if clip {
                    *flag = !(0.0..=1.0).contains(&next);
                    *v = next.clamp(0.0, 1.0);
                } else {
                    *v = next;
                }
            }
        }
        used = it + 1;
        if !s.is_finite() {
            return Err(Error::Divergence { iteration: it });
        }
        if let Some(t) = trajectory.as_deref_mut() {
            t.push(s.clone());
        }
    }

    let field = mu_augmented(net, x, y, &s, beta)?;
    let residual = projected_residual(net, &s, &field, hp.euler_sign);
    Ok(FixedPointResult { state: s, residual_inf_norm: residual, iterations_used: used, saturated })
}

/// `|field|_inf` over the components the clipped Euler step can still move.
///
/// With the hard sigmoid, a unit sitting on a bound of `[0, 1]` whose step
/// points outward is held by the clip and contributes zero; for the other
/// activations this is the plain infinity norm.
pub fn projected_residual(net: &LayeredNetwork, s: &NetworkState, field: &NetworkState, euler_sign: EulerSign) -> f64 {
    let clip = net.activation().clips_state();
    let sign = euler_sign.factor();
    let mut r: f64 = 0.0;
    for (layer, f) in s.layers.iter().zip(&field.layers) {
        for (&v, &m) in layer.iter().zip(f.iter()) {
            let held = clip && ((v <= 0.0 && sign * m < 0.0) || (v >= 1.0 && sign * m > 0.0));
            if !held {
                r = r.max(m.abs());
            }
        }
    }
    r
}

/// `1/2 |y - s_0|^2 + lambda/2 |theta|^2`.
pub fn cost(y: &DVector<f64>, s: &NetworkState, net: &LayeredNetwork, lambda: f64) -> f64 {
    let data = 0.5 * (y - &s.layers[0]).norm_squared();
    if lambda == 0.0 {
        data
    } else {
        data + 0.5 * lambda * net.squared_norm()
    }
}

/// Free relaxation from `init` that fails unless the residual ends up within
/// `tol` (defaulting to `hp.residual_tol`, then [`DEFAULT_FIXED_POINT_TOL`]).
pub fn free_fixed_point(
    net: &LayeredNetwork,
    x: &DVector<f64>,
    init: &NetworkState,
    hp: &HyperParams,
) -> Result<FixedPointResult> {
    let fp = relax(net, x, None, 0.0, init, hp, hp.iters_phase1)?;
    let tol = hp.residual_tol.unwrap_or(DEFAULT_FIXED_POINT_TOL);
    if fp.residual_inf_norm > tol {
        return Err(Error::NonConvergence { residual: fp.residual_inf_norm, tol });
    }
    Ok(fp)
}

/// Objective `J`: the cost at the free fixed point reached from the zero state.
pub fn objective(net: &LayeredNetwork, x: &DVector<f64>, y: &DVector<f64>, hp: &HyperParams) -> Result<f64> {
    objective_from(net, x, y, &NetworkState::zeros(net), hp)
}

/// Objective with an explicit initial state.
pub fn objective_from(
    net: &LayeredNetwork,
    x: &DVector<f64>,
    y: &DVector<f64>,
    init: &NetworkState,
    hp: &HyperParams,
) -> Result<f64> {
    net.check_target(y)?;
    let fp = free_fixed_point(net, x, init, hp)?;
    Ok(cost(y, &fp.state, net, hp.lambda))
}

/// Index of the largest output at the free fixed point; ties go to the
/// lowest index.
pub fn predict(net: &LayeredNetwork, x: &DVector<f64>, hp: &HyperParams) -> Result<usize> {
    let fp = relax(net, x, None, 0.0, &NetworkState::zeros(net), hp, hp.iters_phase1)?;
    Ok(argmax(fp.state.output()))
}

/// Lowest index of the maximum entry.
pub fn argmax(v: &DVector<f64>) -> usize {
    let mut best = 0;
    for (i, &value) in v.iter().enumerate() {
        if value > v[best] {
            best = i;
        }
    }
    best
}
