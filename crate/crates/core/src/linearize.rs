//! First-order structure of the dynamics at a state: the state Jacobian
//! `d mu / d s`, products with `d mu / d theta`, and the dense solves used by
//! the closed-form gradient and `nu` formulas.

use nalgebra::{DMatrix, DVector};

use crate::dynamics::rho;
use crate::error::{Error, Result};
use crate::network::{FieldKind, LayeredNetwork, NetworkState, ParamDelta};

/// Condition-number ceiling for the Jacobian solves.
pub const MAX_CONDITION: f64 = 1e12;

/// Structure of `d mu / d theta` at one state.
///
/// Weight `W_ij` only enters `mu_i`, with derivative `gain_i * rho(pre_j)`;
/// the gain is 1 for the leaky field and `rho'(s_i)` for the Hopfield
/// gradient field.
#[derive(Debug, Clone)]
pub struct ParamMap {
    /// `rho` of each dynamic layer, then `rho(x)` last.
    rates: Vec<DVector<f64>>,
    gains: Vec<DVector<f64>>,
    offsets: Vec<usize>,
}

impl ParamMap {
    pub fn at(net: &LayeredNetwork, x: &DVector<f64>, state: &NetworkState) -> Result<Self> {
        net.check_input(x)?;
        net.check_state(state)?;
        let act = net.activation();
        let mut rates: Vec<DVector<f64>> = state.layers.iter().map(|l| rho(l, act)).collect();
        rates.push(rho(x, act));
        let gains = match net.field_kind() {
            FieldKind::Leaky => state.layers.iter().map(|l| DVector::from_element(l.len(), 1.0)).collect(),
            FieldKind::HopfieldGradient => state.layers.iter().map(|l| l.map(|v| act.derivative(v))).collect(),
        };
        Ok(ParamMap { rates, gains, offsets: net.state_offsets() })
    }

    fn post(&self, v: &DVector<f64>, k: usize) -> DVector<f64> {
        v.rows(self.offsets[k], self.gains[k].len()).component_mul(&self.gains[k])
    }

    /// `(d mu / d theta)^T v` for a flattened state-space vector `v`; every
    /// block is an outer product `(v_post * gain) rho(pre)^T`.
    pub fn transpose_apply(&self, v: &DVector<f64>) -> ParamDelta {
        let l = self.gains.len();
        let forward = (0..l).map(|k| self.post(v, k) * self.rates[k + 1].transpose()).collect();
        let feedback = (0..l - 1).map(|k| self.post(v, k + 1) * self.rates[k].transpose()).collect();
        ParamDelta { forward, feedback }
    }

    /// Accumulates `scale * (d mu / d theta)^T v` into `out` without
    /// allocating the intermediate delta.
    pub fn transpose_apply_into(&self, scale: f64, v: &DVector<f64>, out: &mut ParamDelta) {
        let l = self.gains.len();
        for k in 0..l {
            let post = self.post(v, k);
            out.forward[k].ger(scale, &post, &self.rates[k + 1], 1.0);
            if k + 1 < l {
                let post = self.post(v, k + 1);
                out.feedback[k].ger(scale, &post, &self.rates[k], 1.0);
            }
        }
    }

    /// `(d mu / d theta) dtheta`, flattened over the state.
    pub fn apply(&self, dtheta: &ParamDelta) -> DVector<f64> {
        let l = self.gains.len();
        let mut out = DVector::zeros(self.offsets[l]);
        for k in 0..l {
            let mut acc = &dtheta.forward[k] * &self.rates[k + 1];
            if k > 0 {
                acc += &dtheta.feedback[k - 1] * &self.rates[k - 1];
            }
            out.rows_mut(self.offsets[k], acc.len()).copy_from(&acc.component_mul(&self.gains[k]));
        }
        out
    }

    /// Dense `d mu / d theta` with one column per parameter in flat order.
    pub fn dense(&self, net: &LayeredNetwork) -> DMatrix<f64> {
        let p = net.num_params();
        let mut out = DMatrix::zeros(net.state_size(), p);
        let mut unit = vec![0.0; p];
        for c in 0..p {
            unit[c] = 1.0;
            let dtheta = ParamDelta::from_flat(net, &unit).expect("sized from net");
            out.set_column(c, &self.apply(&dtheta));
            unit[c] = 0.0;
        }
        out
    }
}

/// Linearization of `mu` and of the cost at one state.
#[derive(Debug, Clone)]
pub struct Linearization {
    pub state: NetworkState,
    /// `d mu / d s` over the flattened state; row `i` differentiates `mu_i`.
    pub jacobian: DMatrix<f64>,
    /// `dC / ds` flattened: `s_0 - y` on the output layer, zero elsewhere.
    pub cost_grad_state: DVector<f64>,
    /// `dC / d theta = lambda * theta`.
    pub cost_grad_params: ParamDelta,
    pub params: ParamMap,
}

impl Linearization {
    pub fn at(
        net: &LayeredNetwork,
        x: &DVector<f64>,
        y: &DVector<f64>,
        state: &NetworkState,
        lambda: f64,
    ) -> Result<Self> {
        net.check_target(y)?;
        let params = ParamMap::at(net, x, state)?;
        let jacobian = state_jacobian(net, x, state);
        let mut cost_grad_state = DVector::zeros(net.state_size());
        cost_grad_state.rows_mut(0, net.output_size()).copy_from(&(&state.layers[0] - y));
        let mut cost_grad_params = ParamDelta::from_network(net);
        cost_grad_params.scale(lambda);
        Ok(Linearization { state: state.clone(), jacobian, cost_grad_state, cost_grad_params, params })
    }

    /// `-dC/dtheta + (dC/ds) (A^T)^{-1} (d mu / d theta)`: solve `A w = dC/ds`
    /// and map `w` into parameter space.
    pub fn nu(&self, solver: &JacobianSolver) -> Result<ParamDelta> {
        let w = solver.solve(&self.cost_grad_state)?;
        let mut out = self.params.transpose_apply(&w);
        out.add_scaled(-1.0, &self.cost_grad_params);
        Ok(out)
    }

    /// `dC/dtheta - (dC/ds) A^{-1} (d mu / d theta)`: solve `A^T z = dC/ds`
    /// and map `z` into parameter space.
    pub fn gradient(&self, solver: &JacobianSolver) -> Result<ParamDelta> {
        let z = solver.solve_transpose(&self.cost_grad_state)?;
        let mut out = self.params.transpose_apply(&z);
        out.scale(-1.0);
        out.add_scaled(1.0, &self.cost_grad_params);
        Ok(out)
    }
}

/// `d mu / d s` at `state`, assembled block by block.
///
/// Leaky field: `A_ij = W_ij rho'(s_j)` on connected pairs, `-1` on the
/// diagonal. Hopfield gradient field: `A_ij = rho'(s_i) W_ij rho'(s_j)` and
/// `A_ii = rho''(s_i) h_i - 1` with `h_i` the weighted input.
pub fn state_jacobian(net: &LayeredNetwork, x: &DVector<f64>, state: &NetworkState) -> DMatrix<f64> {
    let act = net.activation();
    let l = net.num_layers();
    let offsets = net.state_offsets();
    let n = net.state_size();
    let slopes: Vec<DVector<f64>> = state.layers.iter().map(|v| v.map(|s| act.derivative(s))).collect();
    let hopfield = net.field_kind() == FieldKind::HopfieldGradient;
    let mut a = DMatrix::<f64>::zeros(n, n);

    for k in 0..l {
        let post_gain = |i: usize| if hopfield { slopes[k][i] } else { 1.0 };
        if k + 1 < l {
            let w = &net.forward[k];
            for i in 0..w.nrows() {
                for j in 0..w.ncols() {
                    a[(offsets[k] + i, offsets[k + 1] + j)] = post_gain(i) * w[(i, j)] * slopes[k + 1][j];
                }
            }
        }
        if k > 0 {
            let w = &net.feedback[k - 1];
            for i in 0..w.nrows() {
                for j in 0..w.ncols() {
                    a[(offsets[k] + i, offsets[k - 1] + j)] = post_gain(i) * w[(i, j)] * slopes[k - 1][j];
                }
            }
        }
    }
    for i in 0..n {
        a[(i, i)] = -1.0;
    }
    if hopfield {
        let mut drive: Vec<DVector<f64>> = Vec::with_capacity(l);
        let rates: Vec<DVector<f64>> = state.layers.iter().map(|v| rho(v, act)).collect();
        let rx = rho(x, act);
        for k in 0..l {
            let mut h = if k + 1 < l { &net.forward[k] * &rates[k + 1] } else { &net.forward[k] * &rx };
            if k > 0 {
                h += &net.feedback[k - 1] * &rates[k - 1];
            }
            drive.push(h);
        }
        for k in 0..l {
            for i in 0..state.layers[k].len() {
                a[(offsets[k] + i, offsets[k] + i)] += act.second_derivative(state.layers[k][i]) * drive[k][i];
            }
        }
    }
    a
}

/// `|A - A^T|_F / |A|_F`.
pub fn asymmetry(a: &DMatrix<f64>) -> f64 {
    let norm = a.norm();
    assert!(norm > 0.0, "asymmetry of a zero matrix is undefined");
    (a - a.transpose()).norm() / norm
}

/// LU factorizations (partial pivoting) of `A` and `A^T` plus the 1-norm
/// condition number `|A|_1 |A^{-1}|_1`.
#[derive(Debug, Clone)]
pub struct JacobianSolver {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    lu_t: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    condition: f64,
}

impl JacobianSolver {
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        let lu = a.clone().lu();
        let inverse = lu.try_inverse().ok_or(Error::SingularJacobian { condition: f64::INFINITY })?;
        let condition = one_norm(a) * one_norm(&inverse);
        if !condition.is_finite() || condition > MAX_CONDITION {
            return Err(Error::SingularJacobian { condition });
        }
        Ok(JacobianSolver { lu, lu_t: a.transpose().lu(), condition })
    }

    pub fn condition(&self) -> f64 {
        self.condition
    }

    /// Solves `A w = b`.
    pub fn solve(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        self.lu.solve(b).ok_or(Error::SingularJacobian { condition: self.condition })
    }

    /// Solves `A^T z = b`.
    pub fn solve_transpose(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        self.lu_t.solve(b).ok_or(Error::SingularJacobian { condition: self.condition })
    }
}

fn one_norm(a: &DMatrix<f64>) -> f64 {
    a.column_iter().map(|c| c.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}
