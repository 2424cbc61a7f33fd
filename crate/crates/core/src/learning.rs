//! Two-phase training and the closed-form update and gradient.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    argmax, cost, free_fixed_point, relax, relax_with_trajectory, FixedPointResult, HyperParams, Phase1Init,
};
use crate::error::{Error, Phase, Result};
use crate::exec::try_map_indexed;
use crate::linearize::{JacobianSolver, Linearization, ParamMap};
use crate::network::{FieldKind, LayeredNetwork, NetworkState, ParamDelta};

/// Free and nudged fixed points of one example.
#[derive(Debug, Clone)]
pub struct PhasePair {
    pub free: FixedPointResult,
    pub nudged: FixedPointResult,
    pub beta_used: f64,
    /// Every state of the nudged phase, starting at `free.state`. Present only
    /// when requested.
    pub trajectory: Option<Vec<NetworkState>>,
}

/// How the weight change is read out of the nudged phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateMode {
    /// One update from the two fixed points, presynaptic rates taken at the
    /// free fixed point.
    #[default]
    Endpoint,
    /// Accumulate `rho(s_j(t)) (s_i(t + eps) - s_i(t)) / beta` along the
    /// nudged trajectory.
    Continuous,
}

/// Runs the free phase from the zero state and the nudged phase from the
/// free fixed point.
pub fn run_two_phases(net: &LayeredNetwork, x: &DVector<f64>, y: &DVector<f64>, hp: &HyperParams) -> Result<PhasePair> {
    run_two_phases_from(net, x, y, hp, &NetworkState::zeros(net), false)
}

/// [`run_two_phases`] with an explicit free-phase initial state, optionally
/// recording the nudged trajectory.
pub fn run_two_phases_from(
    net: &LayeredNetwork,
    x: &DVector<f64>,
    y: &DVector<f64>,
    hp: &HyperParams,
    init: &NetworkState,
    record_trajectory: bool,
) -> Result<PhasePair> {
    if !(hp.beta > 0.0) {
        return Err(Error::ZeroBeta);
    }
    let free = relax(net, x, None, 0.0, init, hp, hp.iters_phase1).map_err(|e| e.in_phase(Phase::Free))?;
    let (nudged, trajectory) = if record_trajectory {
        let (fp, t) = relax_with_trajectory(net, x, Some(y), hp.beta, &free.state, hp, hp.iters_phase2)
            .map_err(|e| e.in_phase(Phase::Nudged))?;
        (fp, Some(t))
    } else {
        let fp =
            relax(net, x, Some(y), hp.beta, &free.state, hp, hp.iters_phase2).map_err(|e| e.in_phase(Phase::Nudged))?;
        (fp, None)
    };
    Ok(PhasePair { free, nudged, beta_used: hp.beta, trajectory })
}

/// Two-phase estimate of `nu`.
///
/// Endpoint mode: `dW_ij = d mu_i/d W_ij (s^0) * (s_i^beta - s_i^0) / beta`,
/// which is `rho(s_j^0) (s_i^beta - s_i^0) / beta` for the leaky field.
/// Continuous mode sums the same local product over every step of the
/// recorded nudged trajectory. `lambda > 0` adds `-lambda * theta`.
pub fn nu_estimate(
    net: &LayeredNetwork,
    x: &DVector<f64>,
    pair: &PhasePair,
    mode: UpdateMode,
    lambda: f64,
) -> Result<ParamDelta> {
    if pair.beta_used == 0.0 {
        return Err(Error::ZeroBeta);
    }
    let inv_beta = 1.0 / pair.beta_used;
    let mut delta = match mode {
        UpdateMode::Endpoint => {
            let map = ParamMap::at(net, x, &pair.free.state)?;
            let ds = (pair.nudged.state.flat() - pair.free.state.flat()) * inv_beta;
            map.transpose_apply(&ds)
        }
        UpdateMode::Continuous => {
            let trajectory = pair
                .trajectory
                .as_ref()
                .filter(|t| t.len() >= 2)
                .ok_or(Error::TrajectoryTooShort { len: pair.trajectory.as_ref().map_or(0, |t| t.len()) })?;
            let mut acc = ParamDelta::zeros_like(net);
            for window in trajectory.windows(2) {
                let map = ParamMap::at(net, x, &window[0])?;
                let ds = window[1].flat() - window[0].flat();
                map.transpose_apply_into(inv_beta, &ds, &mut acc);
            }
            acc
        }
    };
    if lambda != 0.0 {
        delta.add_scaled(-lambda, &ParamDelta::from_network(net));
    }
    Ok(delta)
}

/// `W <- W + alpha_k * dW` per connection layer; the forward and feedback
/// matrices between the same two layers share `alpha_k`.
///
/// For the Hopfield gradient field the weights stay tied: the shared matrix
/// moves by `alpha_k (dW_fwd + dW_fb^T)`.
pub fn apply_update(net: &LayeredNetwork, delta: &ParamDelta, hp: &HyperParams) -> Result<LayeredNetwork> {
    let expected = net.num_connection_layers();
    if hp.alphas.len() != expected {
        return Err(Error::AlphaCountMismatch { expected, got: hp.alphas.len() });
    }
    if delta.forward.len() != net.forward.len() || delta.feedback.len() != net.feedback.len() {
        return Err(Error::ShapeMismatch {
            what: "parameter delta matrix count",
            expected: net.forward.len() + net.feedback.len(),
            got: delta.forward.len() + delta.feedback.len(),
        });
    }
    for (a, b) in net.forward.iter().chain(&net.feedback).zip(delta.matrices()) {
        if a.shape() != b.shape() {
            return Err(Error::ShapeMismatch { what: "parameter delta matrix", expected: a.len(), got: b.len() });
        }
    }
    let mut out = net.clone();
    let tied = net.field_kind() == FieldKind::HopfieldGradient;
    for k in 0..expected {
        let alpha = hp.alpha_for_forward(net, k);
        if alpha == 0.0 {
            continue;
        }
        out.forward[k] += &delta.forward[k] * alpha;
        if k < out.feedback.len() {
            if tied {
                out.forward[k] += delta.feedback[k].transpose() * alpha;
                out.feedback[k] = out.forward[k].transpose();
            } else {
                out.feedback[k] += &delta.feedback[k] * alpha;
            }
        }
    }
    Ok(out)
}

/// Free fixed point (from zeros) and its linearization, refusing
/// non-converged, saturated, or kink-bound fixed points and ill-conditioned
/// Jacobians.
pub fn free_linearization(
    net: &LayeredNetwork,
    x: &DVector<f64>,
    y: &DVector<f64>,
    hp: &HyperParams,
) -> Result<(Linearization, JacobianSolver)> {
    let fp = free_fixed_point(net, x, &NetworkState::zeros(net), hp)?;
    linearize_interior(net, x, y, &fp, hp.lambda)
}

pub(crate) fn linearize_interior(
    net: &LayeredNetwork,
    x: &DVector<f64>,
    y: &DVector<f64>,
    fp: &FixedPointResult,
    lambda: f64,
) -> Result<(Linearization, JacobianSolver)> {
    let act = net.activation();
    let kinks = fp.state.layers.iter().flat_map(|l| l.iter()).filter(|&&v| act.on_kink(v)).count();
    let count = fp.saturated_count().max(kinks);
    if count > 0 {
        return Err(Error::Saturated { count });
    }
    let lin = Linearization::at(net, x, y, &fp.state, lambda)?;
    let solver = JacobianSolver::new(&lin.jacobian)?;
    Ok((lin, solver))
}

/// Closed-form `nu = -dC/dtheta + (dC/ds) (A^T)^{-1} (d mu/d theta)` at the
/// free fixed point, with `A = d mu / d s` and `lambda = hp.lambda`.
pub fn nu_exact(net: &LayeredNetwork, x: &DVector<f64>, y: &DVector<f64>, hp: &HyperParams) -> Result<ParamDelta> {
    let (lin, solver) = free_linearization(net, x, y, hp)?;
    lin.nu(&solver)
}

/// Closed-form `dJ/dtheta = dC/dtheta - (dC/ds) A^{-1} (d mu/d theta)` at the
/// free fixed point.
pub fn grad_exact(net: &LayeredNetwork, x: &DVector<f64>, y: &DVector<f64>, hp: &HyperParams) -> Result<ParamDelta> {
    let (lin, solver) = free_linearization(net, x, y, hp)?;
    lin.gradient(&solver)
}

/// Labeled examples consumed by [`train_epoch`].
pub trait Examples: Sync {
    fn len(&self) -> usize;
    fn input(&self, i: usize) -> DVector<f64>;
    fn target(&self, i: usize) -> DVector<f64>;
    /// Class index used for the error rate; defaults to the target's argmax.
    fn label(&self, i: usize) -> usize {
        argmax(&self.target(i))
    }
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Examples for [(DVector<f64>, DVector<f64>)] {
    fn len(&self) -> usize {
        <[_]>::len(self)
    }
    fn input(&self, i: usize) -> DVector<f64> {
        self[i].0.clone()
    }
    fn target(&self, i: usize) -> DVector<f64> {
        self[i].1.clone()
    }
}

impl Examples for Vec<(DVector<f64>, DVector<f64>)> {
    fn len(&self) -> usize {
        <[_]>::len(self)
    }
    fn input(&self, i: usize) -> DVector<f64> {
        self[i].0.clone()
    }
    fn target(&self, i: usize) -> DVector<f64> {
        self[i].1.clone()
    }
}

/// Statistics gathered at the free fixed points during one epoch, each
/// example measured with the weights in effect when it was visited.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub mean_cost: f64,
    pub error_rate: f64,
    pub examples: usize,
}

/// Free fixed points remembered per example position, for
/// [`Phase1Init::WarmStart`].
#[derive(Debug, Clone, Default)]
pub struct WarmStartCache {
    states: Vec<Option<NetworkState>>,
}

impl WarmStartCache {
    pub fn new(len: usize) -> Self {
        WarmStartCache { states: vec![None; len] }
    }

    pub fn get(&self, i: usize) -> Option<&NetworkState> {
        self.states.get(i).and_then(|s| s.as_ref())
    }
}

struct ExampleOutcome {
    delta: ParamDelta,
    cost: f64,
    correct: bool,
    free_state: NetworkState,
}

/// One pass over `data` in order. Each minibatch runs both phases for every
/// example (in parallel when enabled), averages the update estimates in
/// example order, and applies them once.
pub fn train_epoch<D: Examples + ?Sized>(
    net: &LayeredNetwork,
    data: &D,
    hp: &HyperParams,
    mode: UpdateMode,
) -> Result<(LayeredNetwork, EpochStats)> {
    train_epoch_impl(net, data, hp, mode, None)
}

/// [`train_epoch`] that reads and refreshes warm-start states when
/// `hp.phase1_init` is [`Phase1Init::WarmStart`].
pub fn train_epoch_warm<D: Examples + ?Sized>(
    net: &LayeredNetwork,
    data: &D,
    hp: &HyperParams,
    mode: UpdateMode,
    cache: &mut WarmStartCache,
) -> Result<(LayeredNetwork, EpochStats)> {
    if cache.states.len() < data.len() {
        cache.states.resize(data.len(), None);
    }
    train_epoch_impl(net, data, hp, mode, Some(cache))
}

fn train_epoch_impl<D: Examples + ?Sized>(
    net: &LayeredNetwork,
    data: &D,
    hp: &HyperParams,
    mode: UpdateMode,
    mut cache: Option<&mut WarmStartCache>,
) -> Result<(LayeredNetwork, EpochStats)> {
    hp.validate()?;
    if data.is_empty() {
        return Err(Error::Dataset("cannot train on an empty dataset".into()));
    }
    if hp.alphas.len() != net.num_connection_layers() {
        return Err(Error::AlphaCountMismatch { expected: net.num_connection_layers(), got: hp.alphas.len() });
    }
    let mut net = net.clone();
    let mut total_cost = 0.0;
    let mut errors = 0usize;
    let n = data.len();
    let zeros = NetworkState::zeros(&net);

    let mut start = 0;
    while start < n {
        let end = (start + hp.minibatch).min(n);
        let current = &net;
        let warm = cache.as_deref();
        let outcomes = try_map_indexed(hp.execution, end - start, |offset| {
            let i = start + offset;
            let x = data.input(i);
            let y = data.target(i);
            let init = match (hp.phase1_init, warm.and_then(|c| c.get(i))) {
                (Phase1Init::WarmStart, Some(s)) => s,
                _ => &zeros,
            };
            let pair = run_two_phases_from(current, &x, &y, hp, init, mode == UpdateMode::Continuous)
                .map_err(|e| e.at_example(i))?;
            let delta = nu_estimate(current, &x, &pair, mode, hp.lambda).map_err(|e| e.at_example(i))?;
            Ok::<_, Error>(ExampleOutcome {
                delta,
                cost: cost(&y, &pair.free.state, current, hp.lambda),
                correct: argmax(pair.free.state.output()) == data.label(i),
                free_state: pair.free.state,
            })
        })?;

        let mut mean = ParamDelta::zeros_like(&net);
        let scale = 1.0 / outcomes.len() as f64;
        for (offset, outcome) in outcomes.into_iter().enumerate() {
            mean.add_scaled(scale, &outcome.delta);
            total_cost += outcome.cost;
            if !outcome.correct {
                errors += 1;
            }
            if let Some(c) = cache.as_deref_mut() {
                c.states[start + offset] = Some(outcome.free_state);
            }
        }
        net = apply_update(&net, &mean, hp)?;
        start = end;
    }

    Ok((net, EpochStats { mean_cost: total_cost / n as f64, error_rate: errors as f64 / n as f64, examples: n }))
}

/// Fraction of misclassified examples at the free fixed point.
pub fn error_rate<D: Examples + ?Sized>(net: &LayeredNetwork, data: &D, hp: &HyperParams) -> Result<f64> {
    let wrong = try_map_indexed(hp.execution, data.len(), |i| {
        crate::dynamics::predict(net, &data.input(i), hp).map(|p| p != data.label(i)).map_err(|e| e.at_example(i))
    })?;
    Ok(wrong.iter().filter(|&&w| w).count() as f64 / data.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::Activation;
    use crate::dynamics::objective;
    use crate::exec::Execution;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    fn scalar_net(w: f64) -> LayeredNetwork {
        LayeredNetwork::from_weights(
            vec![1, 1],
            vec![DMatrix::from_element(1, 1, w)],
            vec![],
            Activation::HardSigmoid,
            FieldKind::Leaky,
        )
        .unwrap()
    }

    fn tight() -> HyperParams {
        HyperParams {
            epsilon: 0.5,
            iters_phase1: 5000,
            iters_phase2: 5000,
            residual_tol: Some(1e-14),
            ..Default::default()
        }
    }

    fn random_smooth(seed: u64, field: FieldKind) -> (LayeredNetwork, DVector<f64>, DVector<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = LayeredNetwork::glorot(vec![3, 4, 5], Activation::Logistic, field, &mut rng).unwrap();
        let x = DVector::from_fn(5, |_, _| rng.random_range(0.0..1.0));
        let mut y = DVector::zeros(3);
        y[rng.random_range(0..3)] = 1.0;
        (net, x, y)
    }

    #[test]
    fn zero_weight_phases() {
        let net = LayeredNetwork::zeros(vec![1, 1], Activation::HardSigmoid, FieldKind::Leaky).unwrap();
        let hp = HyperParams { beta: 1.0, ..tight() };
        let pair = run_two_phases(&net, &dv(&[1.0]), &dv(&[1.0]), &hp).unwrap();
        assert!(pair.free.state.layers[0][0].abs() < 1e-12);
        assert!((pair.nudged.state.layers[0][0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn target_at_free_output_leaves_state_unchanged() {
        let net = scalar_net(0.3);
        let hp = HyperParams { beta: 0.7, ..tight() };
        let pair = run_two_phases(&net, &dv(&[1.0]), &dv(&[0.3]), &hp).unwrap();
        assert!(pair.nudged.state.max_abs_diff(&pair.free.state) < 1e-14);
        let delta = nu_estimate(&net, &dv(&[1.0]), &pair, UpdateMode::Endpoint, 0.0).unwrap();
        assert!(delta.norm() < 1e-13);
    }

    #[test]
    fn zero_beta_is_rejected() {
        let net = scalar_net(0.3);
        let hp = HyperParams { beta: 0.0, ..tight() };
        assert!(matches!(run_two_phases(&net, &dv(&[1.0]), &dv(&[1.0]), &hp), Err(Error::ZeroBeta)));
    }

    #[test]
    fn nudging_moves_output_toward_target() {
        // Output units held at a bound by the clip may not move at all.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut moved = 0;
        for _ in 0..10 {
            let net =
                LayeredNetwork::glorot(vec![4, 8, 10], Activation::HardSigmoid, FieldKind::Leaky, &mut rng).unwrap();
            let x = DVector::from_fn(10, |_, _| rng.random_range(0.0..1.0));
            let mut y = DVector::zeros(4);
            y[rng.random_range(0..4)] = 1.0;
            let hp =
                HyperParams { epsilon: 0.2, beta: 0.5, iters_phase1: 500, iters_phase2: 500, ..Default::default() };
            let pair = run_two_phases(&net, &x, &y, &hp).unwrap();
            let before = (&y - pair.free.state.output()).norm();
            let after = (&y - pair.nudged.state.output()).norm();
            assert!(after <= before);
            if after < before {
                moved += 1;
            }
        }
        assert!(moved > 0);
    }

    #[test]
    fn scalar_estimate_approaches_negative_gradient() {
        let net = scalar_net(0.3);
        let hp = HyperParams { beta: 1e-6, ..tight() };
        let pair = run_two_phases(&net, &dv(&[1.0]), &dv(&[1.0]), &hp).unwrap();
        let delta = nu_estimate(&net, &dv(&[1.0]), &pair, UpdateMode::Endpoint, 0.0).unwrap();
        assert!((delta.forward[0][(0, 0)] - 0.7).abs() < 1e-5);
    }

    #[test]
    fn scalar_exact_values() {
        let net = scalar_net(0.3);
        let hp = tight();
        let nu = nu_exact(&net, &dv(&[1.0]), &dv(&[1.0]), &hp).unwrap();
        let grad = grad_exact(&net, &dv(&[1.0]), &dv(&[1.0]), &hp).unwrap();
        assert!((nu.forward[0][(0, 0)] - 0.7).abs() < 1e-12);
        assert!((grad.forward[0][(0, 0)] + 0.7).abs() < 1e-12);
        // Zero cost gradient gives zero updates.
        let nu0 = nu_exact(&net, &dv(&[1.0]), &dv(&[0.3]), &hp).unwrap();
        let g0 = grad_exact(&net, &dv(&[1.0]), &dv(&[0.3]), &hp).unwrap();
        assert!(nu0.norm() < 1e-13 && g0.norm() < 1e-13);
    }

    #[test]
    fn continuous_mode_tracks_endpoint_for_small_steps() {
        let (net, x, y) = random_smooth(3, FieldKind::Leaky);
        let hp =
            HyperParams { epsilon: 0.01, beta: 1e-3, iters_phase1: 4000, iters_phase2: 3000, ..Default::default() };
        let pair = run_two_phases_from(&net, &x, &y, &hp, &NetworkState::zeros(&net), true).unwrap();
        let endpoint = nu_estimate(&net, &x, &pair, UpdateMode::Endpoint, 0.0).unwrap();
        let continuous = nu_estimate(&net, &x, &pair, UpdateMode::Continuous, 0.0).unwrap();
        assert!(continuous.relative_error(&endpoint) < 1e-2);
        let mut no_trajectory = pair.clone();
        no_trajectory.trajectory = None;
        assert!(matches!(
            nu_estimate(&net, &x, &no_trajectory, UpdateMode::Continuous, 0.0),
            Err(Error::TrajectoryTooShort { len: 0 })
        ));
    }

    #[test]
    fn weight_decay_term_in_estimate() {
        let net = scalar_net(0.3);
        let hp = HyperParams { beta: 0.5, ..tight() };
        let pair = run_two_phases(&net, &dv(&[1.0]), &dv(&[0.3]), &hp).unwrap();
        let delta = nu_estimate(&net, &dv(&[1.0]), &pair, UpdateMode::Endpoint, 0.1).unwrap();
        assert!((delta.forward[0][(0, 0)] + 0.03).abs() < 1e-12);
    }

    #[test]
    fn update_is_local() {
        // Perturbing units outside (i, j) leaves dW_ij unchanged.
        let (net, x, y) = random_smooth(4, FieldKind::Leaky);
        let hp = HyperParams { beta: 0.3, ..tight() };
        let pair = run_two_phases(&net, &x, &y, &hp).unwrap();
        let base = nu_estimate(&net, &x, &pair, UpdateMode::Endpoint, 0.0).unwrap();
        // Entry (i=1, j=2) of W_01: post unit s_0[1], pre unit s_1[2].
        let mut touched = pair.clone();
        for (k, layer) in touched.free.state.layers.iter_mut().enumerate() {
            for (u, v) in layer.iter_mut().enumerate() {
                if !((k == 0 && u == 1) || (k == 1 && u == 2)) {
                    *v = 0.0;
                }
            }
        }
        for (k, layer) in touched.nudged.state.layers.iter_mut().enumerate() {
            for (u, v) in layer.iter_mut().enumerate() {
                if !(k == 0 && u == 1) {
                    *v = 0.0;
                }
            }
        }
        let local = nu_estimate(&net, &x, &touched, UpdateMode::Endpoint, 0.0).unwrap();
        assert_eq!(local.forward[0][(1, 2)], base.forward[0][(1, 2)]);
    }

    #[test]
    fn apply_update_examples() {
        let net = scalar_net(0.3);
        let hp = HyperParams { alphas: vec![0.1], ..Default::default() };
        let zero = ParamDelta::zeros_like(&net);
        assert_eq!(apply_update(&net, &zero, &hp).unwrap(), net);
        let mut delta = zero.clone();
        delta.forward[0][(0, 0)] = 0.7;
        let updated = apply_update(&net, &delta, &hp).unwrap();
        assert!((updated.forward[0][(0, 0)] - 0.37).abs() < 1e-15);
        let wrong = HyperParams { alphas: vec![0.1, 0.2], ..Default::default() };
        assert!(matches!(apply_update(&net, &delta, &wrong), Err(Error::AlphaCountMismatch { expected: 1, got: 2 })));
    }

    #[test]
    fn table_alphas_scale_each_connection_layer() {
        let net = LayeredNetwork::zeros(vec![10, 512, 512, 784], Activation::HardSigmoid, FieldKind::Leaky).unwrap();
        let mut delta = ParamDelta::zeros_like(&net);
        for w in delta.matrices_mut() {
            w.fill(1.0);
        }
        let hp = HyperParams::table1_two_hidden();
        let out = apply_update(&net, &delta, &hp).unwrap();
        // forward[2] reads the input, forward[0] feeds the output layer.
        assert_eq!(out.forward[2][(0, 0)], 0.4);
        assert_eq!(out.forward[1][(0, 0)], 0.1);
        assert_eq!(out.feedback[1][(0, 0)], 0.1);
        assert_eq!(out.forward[0][(0, 0)], 0.01);
        assert_eq!(out.feedback[0][(0, 0)], 0.01);

        let reversed = HyperParams { alpha_order: crate::dynamics::AlphaOrder::OutputFirst, ..hp };
        let out = apply_update(&net, &delta, &reversed).unwrap();
        assert_eq!(out.forward[0][(0, 0)], 0.4);
        assert_eq!(out.forward[2][(0, 0)], 0.01);
    }

    #[test]
    fn hopfield_update_keeps_weights_tied() {
        let (net, x, y) = random_smooth(5, FieldKind::HopfieldGradient);
        let hp = HyperParams { beta: 0.2, alphas: vec![0.5, 0.5], ..tight() };
        let pair = run_two_phases(&net, &x, &y, &hp).unwrap();
        let delta = nu_estimate(&net, &x, &pair, UpdateMode::Endpoint, 0.0).unwrap();
        let out = apply_update(&net, &delta, &hp).unwrap();
        assert_eq!(out.feedback[0], out.forward[0].transpose());
        assert_ne!(out.forward[0], net.forward[0]);
    }

    #[test]
    fn symmetric_jacobian_gives_nu_equal_minus_gradient() {
        for seed in 0..5 {
            let (net, x, y) = random_smooth(seed, FieldKind::HopfieldGradient);
            let hp = tight();
            let nu = nu_exact(&net, &x, &y, &hp).unwrap();
            let mut grad = grad_exact(&net, &x, &y, &hp).unwrap();
            grad.scale(-1.0);
            for (a, b) in nu.flat().iter().zip(grad.flat()) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn symmetrized_jacobian_cross_identity() {
        let (net, x, y) = random_smooth(8, FieldKind::Leaky);
        let (mut lin, _) = free_linearization(&net, &x, &y, &tight()).unwrap();
        lin.jacobian = (&lin.jacobian + lin.jacobian.transpose()) * 0.5;
        let solver = JacobianSolver::new(&lin.jacobian).unwrap();
        let nu = lin.nu(&solver).unwrap();
        let grad = lin.gradient(&solver).unwrap();
        for (a, b) in nu.flat().iter().zip(grad.flat()) {
            assert!((a + b).abs() < 1e-12);
        }
    }

    #[test]
    fn weight_decay_only_nu_is_minus_lambda_theta() {
        let (net, x, _) = random_smooth(9, FieldKind::Leaky);
        let hp = HyperParams { lambda: 0.05, ..tight() };
        let fp = free_fixed_point(&net, &x, &NetworkState::zeros(&net), &hp).unwrap();
        let y = fp.state.output().clone();
        let nu = nu_exact(&net, &x, &y, &hp).unwrap();
        let mut expected = ParamDelta::from_network(&net);
        expected.scale(-0.05);
        assert_eq!(nu, expected);
    }

    #[test]
    fn saturated_fixed_point_is_refused() {
        let net = LayeredNetwork::from_weights(
            vec![1, 1],
            vec![DMatrix::from_element(1, 1, 2.0)],
            vec![],
            Activation::HardSigmoid,
            FieldKind::Leaky,
        )
        .unwrap();
        let hp = HyperParams { residual_tol: Some(10.0), ..tight() };
        assert!(matches!(nu_exact(&net, &dv(&[1.0]), &dv(&[0.0]), &hp), Err(Error::Saturated { count: 1 })));
    }

    #[test]
    fn zero_learning_rates_leave_network_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let net = LayeredNetwork::glorot(vec![3, 6, 8], Activation::HardSigmoid, FieldKind::Leaky, &mut rng).unwrap();
        let data: Vec<(DVector<f64>, DVector<f64>)> = (0..7)
            .map(|i| {
                let x = DVector::from_fn(8, |_, _| rng.random_range(0.0..1.0));
                let mut y = DVector::zeros(3);
                y[i % 3] = 1.0;
                (x, y)
            })
            .collect();
        let hp = HyperParams { epsilon: 0.2, beta: 0.5, alphas: vec![0.0, 0.0], minibatch: 3, ..Default::default() };
        let (out, stats) = train_epoch(&net, &data, &hp, UpdateMode::Endpoint).unwrap();
        assert_eq!(out, net);
        assert_eq!(stats.examples, 7);
        assert!(stats.mean_cost > 0.0);
    }

    #[test]
    fn repeated_example_objective_does_not_increase() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let net = LayeredNetwork::glorot(vec![3, 6, 8], Activation::HardSigmoid, FieldKind::Leaky, &mut rng).unwrap();
        let x = DVector::from_fn(8, |_, _| rng.random_range(0.2..1.0));
        let y = dv(&[0.0, 1.0, 0.0]);
        let data = vec![(x.clone(), y.clone())];
        let hp = HyperParams {
            epsilon: 0.2,
            beta: 0.2,
            alphas: vec![0.05, 0.05],
            iters_phase1: 400,
            iters_phase2: 400,
            minibatch: 1,
            ..Default::default()
        };
        let mut current = net;
        let mut last = objective(&current, &x, &y, &hp).unwrap();
        for _ in 0..10 {
            current = train_epoch(&current, &data, &hp, UpdateMode::Endpoint).unwrap().0;
            let j = objective(&current, &x, &y, &hp).unwrap();
            assert!(j <= last + 1e-12, "{j} > {last}");
            last = j;
        }
    }

    #[test]
    fn sequential_and_parallel_epochs_are_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let net = LayeredNetwork::glorot(vec![3, 6, 8], Activation::HardSigmoid, FieldKind::Leaky, &mut rng).unwrap();
        let data: Vec<(DVector<f64>, DVector<f64>)> = (0..13)
            .map(|i| {
                let x = DVector::from_fn(8, |_, _| rng.random_range(0.0..1.0));
                let mut y = DVector::zeros(3);
                y[i % 3] = 1.0;
                (x, y)
            })
            .collect();
        let base = HyperParams { epsilon: 0.2, beta: 0.5, alphas: vec![0.1, 0.05], minibatch: 4, ..Default::default() };
        let seq = HyperParams { execution: Execution::Sequential, ..base.clone() };
        let par = HyperParams { execution: Execution::Parallel, ..base };
        let a = train_epoch(&net, &data, &seq, UpdateMode::Endpoint).unwrap();
        let b = train_epoch(&net, &data, &par, UpdateMode::Endpoint).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn warm_start_cache_fills() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let net = LayeredNetwork::glorot(vec![2, 4, 3], Activation::Tanh, FieldKind::Leaky, &mut rng).unwrap();
        let data: Vec<(DVector<f64>, DVector<f64>)> =
            (0..5).map(|i| (DVector::from_element(3, 0.2 * i as f64), dv(&[1.0, 0.0]))).collect();
        let hp = HyperParams {
            epsilon: 0.2,
            beta: 0.5,
            alphas: vec![0.0, 0.0],
            phase1_init: Phase1Init::WarmStart,
            ..Default::default()
        };
        let mut cache = WarmStartCache::new(data.len());
        let (_, first) = train_epoch_warm(&net, &data, &hp, UpdateMode::Endpoint, &mut cache).unwrap();
        assert!((0..5).all(|i| cache.get(i).is_some()));
        let (_, second) = train_epoch_warm(&net, &data, &hp, UpdateMode::Endpoint, &mut cache).unwrap();
        assert!((first.mean_cost - second.mean_cost).abs() < 1e-9);
    }

    #[test]
    fn example_errors_carry_index() {
        let mut net = scalar_net(0.3);
        let data = vec![(dv(&[1.0]), dv(&[1.0])), (dv(&[f64::NAN]), dv(&[1.0]))];
        net.forward[0][(0, 0)] = 0.3;
        let hp = HyperParams { alphas: vec![0.1], minibatch: 2, ..Default::default() };
        let err = train_epoch(&net, &data, &hp, UpdateMode::Endpoint).unwrap_err();
        assert!(matches!(err, Error::AtExample { index: 1, .. }), "{err}");
    }
}
