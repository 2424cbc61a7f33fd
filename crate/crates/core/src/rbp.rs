//! Recurrent backpropagation and the process of temporal derivatives.
//!
//! The adjoint process integrates `dS/dt = A^T S`, `dTheta/dt = (d mu/d theta)^T S`
//! from `S_0 = dC/ds`, `Theta_0 = dC/dtheta`, with `A = d mu/d s` frozen at the
//! free fixed point; `Theta_t` tends to `dJ/dtheta`. The temporal process reads
//! the same quantities off the nudged phase: `S~_t = -(1/beta) ds/dt` and
//! `Theta~_t = dC/dtheta - (1/beta) (d mu/d theta)^T (s(t) - s^0)`, which obey
//! the same equations with `A` in place of `A^T`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dynamics::{cost, free_fixed_point, relax, relax_with_trajectory, HyperParams};
use crate::error::{Error, Phase, Result};
use crate::learning::{linearize_interior, PhasePair};
use crate::linearize::{Linearization, ParamMap};
use crate::network::{LayeredNetwork, NetworkState, ParamDelta};

/// Default integration horizon, in units of the neuron time constant.
pub const DEFAULT_T_HORIZON: f64 = 50.0;

/// Error derivatives of the adjoint process on the Euler grid.
#[derive(Debug, Clone)]
pub struct AdjointTrace {
    pub times: Vec<f64>,
    pub s_bar: Vec<DVector<f64>>,
    pub theta_bar: Vec<ParamDelta>,
}

impl AdjointTrace {
    pub fn final_theta(&self) -> &ParamDelta {
        self.theta_bar.last().expect("trace holds the initial value")
    }
}

/// Rescaled temporal derivatives of the nudged phase.
#[derive(Debug, Clone)]
pub struct TemporalTrace {
    pub times: Vec<f64>,
    pub s_tilde: Vec<DVector<f64>>,
    pub theta_tilde: Vec<ParamDelta>,
}

impl TemporalTrace {
    pub fn final_theta(&self) -> &ParamDelta {
        self.theta_tilde.last().expect("trace is never empty")
    }
}

/// Finite-difference scheme for `ds/dt` along the stored trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeScheme {
    /// Centered differences in the interior, one-sided at both ends.
    #[default]
    Centered,
    /// `(s_{k+1} - s_k) / eps`, i.e. the Euler increment itself; backward
    /// difference at the last state.
    Forward,
}

fn steps_for(t_horizon: f64, epsilon: f64) -> Result<usize> {
    if !(t_horizon >= 0.0 && t_horizon.is_finite()) {
        return Err(Error::InvalidHyperParams("t_horizon must be nonnegative".into()));
    }
    Ok((t_horizon / epsilon).round() as usize)
}

/// Cost after flowing the free dynamics from `init` for `t_horizon` time
/// units (Euler step `hp.epsilon`, no early stop).
pub fn projected_cost(
    net: &LayeredNetwork,
    x: &DVector<f64>,
    y: &DVector<f64>,
    init: &NetworkState,
    t_horizon: f64,
    hp: &HyperParams,
) -> Result<f64> {
    net.check_target(y)?;
    let steps = steps_for(t_horizon, hp.epsilon)?;
    let flow = HyperParams { residual_tol: None, ..hp.clone() };
    let fp = relax(net, x, None, 0.0, init, &flow, steps)?;
    Ok(cost(y, &fp.state, net, hp.lambda))
}

/// Adjoint process at the free fixed point reached from the zero state,
/// integrated to `t_horizon` with step `hp.epsilon`.
pub fn recurrent_backprop(
    net: &LayeredNetwork,
    x: &DVector<f64>,
    y: &DVector<f64>,
    hp: &HyperParams,
    t_horizon: f64,
) -> Result<AdjointTrace> {
    let steps = steps_for(t_horizon, hp.epsilon)?;
    let fp = free_fixed_point(net, x, &NetworkState::zeros(net), hp)?;
    let (lin, _) = linearize_interior(net, x, y, &fp, hp.lambda)?;
    integrate_adjoint(&lin, hp.epsilon, steps)
}

/// Euler integration of the adjoint equations for a given linearization.
pub fn integrate_adjoint(lin: &Linearization, epsilon: f64, steps: usize) -> Result<AdjointTrace> {
    let at = lin.jacobian.transpose();
    let mut times = Vec::with_capacity(steps + 1);
    let mut s_bar = Vec::with_capacity(steps + 1);
    let mut theta_bar = Vec::with_capacity(steps + 1);
    let mut s = lin.cost_grad_state.clone();
    let mut theta = lin.cost_grad_params.clone();
    let mut next = DVector::zeros(s.len());
    times.push(0.0);
    s_bar.push(s.clone());
    theta_bar.push(theta.clone());
    for k in 0..steps {
        lin.params.transpose_apply_into(epsilon, &s, &mut theta);
        next.copy_from(&s);
        next.gemv(epsilon, &at, &s, 1.0);
        std::mem::swap(&mut s, &mut next);
        if !s.iter().all(|v| v.is_finite()) {
            return Err(Error::Divergence { iteration: k });
        }
        times.push((k + 1) as f64 * epsilon);
        s_bar.push(s.clone());
        theta_bar.push(theta.clone());
    }
    Ok(AdjointTrace { times, s_bar, theta_bar })
}

/// Runs the free phase to a converged fixed point, records a nudged phase of
/// `hp.iters_phase2` steps, and returns its temporal-derivative process.
pub fn temporal_derivatives(
    net: &LayeredNetwork,
    x: &DVector<f64>,
    y: &DVector<f64>,
    hp: &HyperParams,
) -> Result<TemporalTrace> {
    let pair = recorded_two_phases(net, x, y, hp)?;
    temporal_from_pair(net, x, &pair, hp.epsilon, hp.lambda, DerivativeScheme::default())
}

/// Free phase checked for convergence, then a fully recorded nudged phase.
pub fn recorded_two_phases(
    net: &LayeredNetwork,
    x: &DVector<f64>,
    y: &DVector<f64>,
    hp: &HyperParams,
) -> Result<PhasePair> {
    if !(hp.beta > 0.0) {
        return Err(Error::ZeroBeta);
    }
    let free = free_fixed_point(net, x, &NetworkState::zeros(net), hp).map_err(|e| e.in_phase(Phase::Free))?;
    let (nudged, trajectory) = relax_with_trajectory(net, x, Some(y), hp.beta, &free.state, hp, hp.iters_phase2)
        .map_err(|e| e.in_phase(Phase::Nudged))?;
    Ok(PhasePair { free, nudged, beta_used: hp.beta, trajectory: Some(trajectory) })
}

/// Temporal-derivative process of a recorded nudged phase with Euler step
/// `epsilon`.
pub fn temporal_from_pair(
    net: &LayeredNetwork,
    x: &DVector<f64>,
    pair: &PhasePair,
    epsilon: f64,
    lambda: f64,
    scheme: DerivativeScheme,
) -> Result<TemporalTrace> {
    if pair.beta_used == 0.0 {
        return Err(Error::ZeroBeta);
    }
    let trajectory = pair.trajectory.as_deref().unwrap_or(&[]);
    let n = trajectory.len();
    if n < 2 {
        return Err(Error::TrajectoryTooShort { len: n });
    }
    let flat: Vec<DVector<f64>> = trajectory.iter().map(NetworkState::flat).collect();
    let inv_beta = 1.0 / pair.beta_used;
    let scale = -inv_beta / epsilon;
    let s_tilde = (0..n)
        .map(|k| match (scheme, k) {
            (_, 0) => (&flat[1] - &flat[0]) * scale,
            (_, k) if k == n - 1 => (&flat[k] - &flat[k - 1]) * scale,
            (DerivativeScheme::Centered, k) => (&flat[k + 1] - &flat[k - 1]) * (0.5 * scale),
            (DerivativeScheme::Forward, k) => (&flat[k + 1] - &flat[k]) * scale,
        })
        .collect();

    let map = ParamMap::at(net, x, &trajectory[0])?;
    let mut decay = ParamDelta::from_network(net);
    decay.scale(lambda);
    let theta_tilde = flat
        .iter()
        .map(|s| {
            let mut out = decay.clone();
            map.transpose_apply_into(-inv_beta, &(s - &flat[0]), &mut out);
            out
        })
        .collect();
    Ok(TemporalTrace { times: (0..n).map(|k| k as f64 * epsilon).collect(), s_tilde, theta_tilde })
}

/// Largest `|S~_t - S_t|` and `|Theta~_t - Theta_t|` (Euclidean norms) over
/// the common prefix of the two traces.
pub fn trace_gaps(temporal: &TemporalTrace, adjoint: &AdjointTrace) -> Vec<(f64, f64, f64)> {
    temporal
        .s_tilde
        .iter()
        .zip(&temporal.theta_tilde)
        .zip(adjoint.s_bar.iter().zip(&adjoint.theta_bar))
        .zip(&temporal.times)
        .map(|(((st, tt), (sb, tb)), &t)| {
            let mut d = tt.clone();
            d.add_scaled(-1.0, tb);
            (t, (st - sb).norm(), d.norm())
        })
        .collect()
}

/// Sup over the common grid of the two gap series returned by [`trace_gaps`].
pub fn sup_gaps(temporal: &TemporalTrace, adjoint: &AdjointTrace) -> (f64, f64) {
    trace_gaps(temporal, adjoint).into_iter().fold((0.0, 0.0), |(a, b), (_, s, t)| (a.max(s), b.max(t)))
}
