//! Independent checks of the closed-form quantities: finite-difference
//! gradients and fixed-point derivatives, Jacobian asymmetry, and the angle
//! between `nu` and the negative gradient.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::activation::Activation;
use crate::dynamics::{
    free_fixed_point, objective_from, relax, FixedPointResult, HyperParams, DEFAULT_FIXED_POINT_TOL,
};
use crate::error::{Error, Result};
use crate::exec::{map_indexed, try_map_indexed};
use crate::learning::{free_linearization, linearize_interior};
use crate::linearize::{asymmetry, state_jacobian};
use crate::network::{layer_sizes_from_architecture, FieldKind, LayeredNetwork, NetworkState, ParamDelta};

/// Default finite-difference step.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Norm below which `nu` or the gradient counts as zero.
pub const DEGENERATE_NORM: f64 = 1e-12;

/// Central differences `(J(theta + h e_k) - J(theta - h e_k)) / 2h` over every
/// weight, each objective computed by a full relaxation from the zero state.
pub fn finite_diff_grad(
    net: &LayeredNetwork,
    x: &DVector<f64>,
    y: &DVector<f64>,
    hp: &HyperParams,
    h: f64,
) -> Result<ParamDelta> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidHyperParams("finite-difference step must be positive".into()));
    }
    net.check_input(x)?;
    net.check_target(y)?;
    let base = net.params_flat();
    let zeros = NetworkState::zeros(net);
    let objective_at = |k: usize, offset: f64| -> Result<f64> {
        let mut params = base.clone();
        params[k] += offset;
        let mut perturbed = net.clone();
        perturbed.set_params_flat(&params)?;
        objective_from(&perturbed, x, y, &zeros, hp)
    };
    let grad = try_map_indexed(hp.execution, base.len(), |k| {
        let plus = objective_at(k, h).map_err(|e| e.at_coordinate(k))?;
        let minus = objective_at(k, -h).map_err(|e| e.at_coordinate(k))?;
        Ok::<_, Error>((plus - minus) / (2.0 * h))
    })?;
    ParamDelta::from_flat(net, &grad)
}

/// Relative errors of the analytic fixed-point derivatives against central
/// differences of re-relaxed fixed points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lemma1Report {
    /// `|ds/dbeta - fd| / |fd|` at `beta = 0`.
    pub beta_rel_err: f64,
    /// Frobenius-norm relative error of `ds/dtheta`.
    pub theta_rel_err: f64,
}

impl Lemma1Report {
    pub fn max(&self) -> f64 {
        self.beta_rel_err.max(self.theta_rel_err)
    }
}

fn converged_fixed_point(
    net: &LayeredNetwork,
    x: &DVector<f64>,
    y: &DVector<f64>,
    beta: f64,
    hp: &HyperParams,
) -> Result<FixedPointResult> {
    let fp = relax(net, x, Some(y), beta, &NetworkState::zeros(net), hp, hp.iters_phase1)?;
    let tol = hp.residual_tol.unwrap_or(DEFAULT_FIXED_POINT_TOL);
    if fp.residual_inf_norm > tol {
        return Err(Error::NonConvergence { residual: fp.residual_inf_norm, tol });
    }
    Ok(fp)
}

fn relative(analytic: &DMatrix<f64>, reference: &DMatrix<f64>) -> f64 {
    let scale = reference.norm();
    let diff = (analytic - reference).norm();
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Checks `ds/dbeta = A^{-1} dC/ds` and `ds/dtheta = -A^{-1} d mu/d theta` at
/// the free fixed point against central differences with step `h`.
pub fn check_lemma1(
    net: &LayeredNetwork,
    x: &DVector<f64>,
    y: &DVector<f64>,
    hp: &HyperParams,
    h: f64,
) -> Result<Lemma1Report> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidHyperParams("finite-difference step must be positive".into()));
    }
    let (lin, solver) = free_linearization(net, x, y, hp)?;

    let ds_dbeta = solver.solve(&lin.cost_grad_state)?;
    let plus = converged_fixed_point(net, x, y, h, hp)?.state.flat();
    let minus = converged_fixed_point(net, x, y, -h, hp)?.state.flat();
    let fd_beta = (plus - minus) / (2.0 * h);
    let beta_rel_err = relative(
        &DMatrix::from_column_slice(ds_dbeta.len(), 1, ds_dbeta.as_slice()),
        &DMatrix::from_column_slice(fd_beta.len(), 1, fd_beta.as_slice()),
    );

    let dmu = lin.params.dense(net);
    let n = net.state_size();
    let mut ds_dtheta = DMatrix::zeros(n, dmu.ncols());
    for c in 0..dmu.ncols() {
        let col = solver.solve(&dmu.column(c).into_owned())?;
        ds_dtheta.set_column(c, &(-col));
    }
    let base = net.params_flat();
    let zeros = NetworkState::zeros(net);
    let columns = try_map_indexed(hp.execution, base.len(), |k| {
        let state_at = |offset: f64| -> Result<DVector<f64>> {
            let mut params = base.clone();
            params[k] += offset;
            let mut perturbed = net.clone();
            perturbed.set_params_flat(&params)?;
            Ok(free_fixed_point(&perturbed, x, &zeros, hp)?.state.flat())
        };
        let plus = state_at(h).map_err(|e| e.at_coordinate(k))?;
        let minus = state_at(-h).map_err(|e| e.at_coordinate(k))?;
        Ok::<_, Error>((plus - minus) / (2.0 * h))
    })?;
    let fd_theta = DMatrix::from_columns(&columns);
    Ok(Lemma1Report { beta_rel_err, theta_rel_err: relative(&ds_dtheta, &fd_theta) })
}

/// `|A - A^T|_F / |A|_F` for `A = d mu / d s` at the free fixed point.
pub fn jacobian_asymmetry(net: &LayeredNetwork, x: &DVector<f64>, hp: &HyperParams) -> Result<f64> {
    let fp = free_fixed_point(net, x, &NetworkState::zeros(net), hp)?;
    Ok(asymmetry(&state_jacobian(net, x, &fp.state)))
}

/// Agreement between `nu` and `-dJ/dtheta` over all weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentReport {
    /// `None` when either norm is below [`DEGENERATE_NORM`].
    pub cosine: Option<f64>,
    pub asymmetry: f64,
    pub grad_norm: f64,
    pub nu_norm: f64,
    pub condition_estimate: f64,
}

impl AlignmentReport {
    pub fn is_degenerate(&self) -> bool {
        self.cosine.is_none()
    }
}

pub fn alignment_report(
    net: &LayeredNetwork,
    x: &DVector<f64>,
    y: &DVector<f64>,
    hp: &HyperParams,
) -> Result<AlignmentReport> {
    let fp = free_fixed_point(net, x, &NetworkState::zeros(net), hp)?;
    let (lin, solver) = linearize_interior(net, x, y, &fp, hp.lambda)?;
    let nu = lin.nu(&solver)?;
    let grad = lin.gradient(&solver)?;
    let (nu_norm, grad_norm) = (nu.norm(), grad.norm());
    let cosine = (nu_norm > DEGENERATE_NORM && grad_norm > DEGENERATE_NORM)
        .then(|| (-nu.dot(&grad) / (nu_norm * grad_norm)).clamp(-1.0, 1.0));
    Ok(AlignmentReport {
        cosine,
        asymmetry: asymmetry(&lin.jacobian),
        grad_norm,
        nu_norm,
        condition_estimate: solver.condition(),
    })
}

/// Recipe for seeded test networks.
#[derive(Debug, Clone, PartialEq)]
pub struct FleetSpec {
    /// Layer sizes from input to output, e.g. `[5, 4, 3]`.
    pub architecture: Vec<usize>,
    pub activation: Activation,
    pub field_kind: FieldKind,
    /// Replace the target by the free output, zeroing the cost gradient.
    pub target_at_free_output: bool,
}

impl Default for FleetSpec {
    fn default() -> Self {
        FleetSpec {
            architecture: vec![5, 4, 3],
            activation: Activation::Logistic,
            field_kind: FieldKind::Leaky,
            target_at_free_output: false,
        }
    }
}

/// One fleet member: Glorot weights, input uniform on `[0, 1]`, one-hot
/// target, all drawn from a ChaCha8 stream seeded with `seed`.
pub fn fleet_member(spec: &FleetSpec, seed: u64) -> Result<(LayeredNetwork, DVector<f64>, DVector<f64>)> {
    if spec.architecture.len() < 2 {
        return Err(Error::InvalidNetwork("architecture needs an input and an output layer".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sizes = layer_sizes_from_architecture(&spec.architecture);
    let net = LayeredNetwork::glorot(sizes, spec.activation, spec.field_kind, &mut rng)?;
    let x = DVector::from_fn(net.input_size(), |_, _| rng.random_range(0.0..1.0));
    let mut y = DVector::zeros(net.output_size());
    y[rng.random_range(0..net.output_size())] = 1.0;
    Ok((net, x, y))
}

/// Fleet member whose target may be moved to the free output.
pub fn fleet_case(
    spec: &FleetSpec,
    seed: u64,
    hp: &HyperParams,
) -> Result<(LayeredNetwork, DVector<f64>, DVector<f64>)> {
    let (net, x, mut y) = fleet_member(spec, seed)?;
    if spec.target_at_free_output {
        y = free_fixed_point(&net, &x, &NetworkState::zeros(&net), hp)?.state.output().clone();
    }
    Ok((net, x, y))
}

/// Alignment reports for every seed, computed independently per member and
/// returned in seed order.
pub fn alignment_fleet(spec: &FleetSpec, seeds: &[u64], hp: &HyperParams) -> Vec<(u64, Result<AlignmentReport>)> {
    map_indexed(hp.execution, seeds.len(), |i| {
        let seed = seeds[i];
        let report = fleet_case(spec, seed, hp).and_then(|(net, x, y)| alignment_report(&net, &x, &y, hp));
        (seed, report)
    })
}

/// Fraction of non-degenerate reports with positive cosine, out of all
/// successful ones.
pub fn fraction_positive<'a>(reports: impl IntoIterator<Item = &'a AlignmentReport>) -> f64 {
    let (mut total, mut positive) = (0usize, 0usize);
    for r in reports {
        total += 1;
        if r.cosine.is_some_and(|c| c > 0.0) {
            positive += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        positive as f64 / total as f64
    }
}
