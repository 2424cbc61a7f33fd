use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::error::{Error, Result};

/// Form of the state vector field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    /// Leaky integrator: `mu_i = sum_j W_ij rho(s_j) - s_i`, untied weights.
    Leaky,
    /// Gradient of the Hopfield energy
    /// `E = |s|^2 / 2 - sum_{connections} W_ij rho(s_i) rho(s_j)`:
    /// `mu_i = rho'(s_i) sum_j W_ij rho(s_j) - s_i`. Weights are tied on
    /// construction and the activation must be smooth.
    HopfieldGradient,
}

/// Layered recurrent network without biases.
///
/// `layer_sizes` runs from the output layer to the input:
/// `[n_0, n_1, .., n_{L-1}, n_x]`. `forward[k]` is `W_{k,k+1}` (shape
/// `n_k x n_{k+1}`, the last one reading the clamped input) and
/// `feedback[k]` is `W_{k+1,k}` (shape `n_{k+1} x n_k`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayeredNetwork {
    layer_sizes: Vec<usize>,
    pub forward: Vec<DMatrix<f64>>,
    pub feedback: Vec<DMatrix<f64>>,
    activation: Activation,
    field_kind: FieldKind,
}

impl LayeredNetwork {
    /// All-zero weights.
    pub fn zeros(layer_sizes: Vec<usize>, activation: Activation, field_kind: FieldKind) -> Result<Self> {
        check_sizes(&layer_sizes)?;
        let forward = (0..layer_sizes.len() - 1).map(|k| DMatrix::zeros(layer_sizes[k], layer_sizes[k + 1])).collect();
        let feedback = (0..layer_sizes.len().saturating_sub(2))
            .map(|k| DMatrix::zeros(layer_sizes[k + 1], layer_sizes[k]))
            .collect();
        Self::from_weights(layer_sizes, forward, feedback, activation, field_kind)
    }

    /// Glorot-uniform initialization of every matrix, limit
    /// `sqrt(6 / (fan_in + fan_out))`.
    pub fn glorot<R: Rng + ?Sized>(
        layer_sizes: Vec<usize>,
        activation: Activation,
        field_kind: FieldKind,
        rng: &mut R,
    ) -> Result<Self> {
        check_sizes(&layer_sizes)?;
        let mut glorot = |rows: usize, cols: usize| {
            let limit = (6.0 / (rows + cols) as f64).sqrt();
            DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-limit..limit))
        };
        let forward: Vec<_> = (0..layer_sizes.len() - 1).map(|k| glorot(layer_sizes[k], layer_sizes[k + 1])).collect();
        let feedback: Vec<_> =
            (0..layer_sizes.len().saturating_sub(2)).map(|k| glorot(layer_sizes[k + 1], layer_sizes[k])).collect();
        Self::from_weights(layer_sizes, forward, feedback, activation, field_kind)
    }

    /// Builds a network from explicit matrices. For
    /// [`FieldKind::HopfieldGradient`] the feedback matrices are replaced by the
    /// transposes of the forward ones.
    pub fn from_weights(
        layer_sizes: Vec<usize>,
        forward: Vec<DMatrix<f64>>,
        mut feedback: Vec<DMatrix<f64>>,
        activation: Activation,
        field_kind: FieldKind,
    ) -> Result<Self> {
        check_sizes(&layer_sizes)?;
        if field_kind == FieldKind::HopfieldGradient && !activation.is_smooth() {
            return Err(Error::InvalidNetwork("the Hopfield gradient field needs a smooth activation".into()));
        }
        if field_kind == FieldKind::HopfieldGradient && forward.len() + 1 == layer_sizes.len() {
            feedback = forward.iter().take(layer_sizes.len() - 2).map(|w| w.transpose()).collect();
        }
        let net = LayeredNetwork { layer_sizes, forward, feedback, activation, field_kind };
        net.validate()?;
        Ok(net)
    }

    /// Checks that every matrix shape agrees with `layer_sizes`. Called on
    /// construction; call it again after deserializing a snapshot.
    pub fn validate(&self) -> Result<()> {
        check_sizes(&self.layer_sizes)?;
        let l = self.num_layers();
        if self.forward.len() != l {
            return Err(Error::ShapeMismatch { what: "forward matrix count", expected: l, got: self.forward.len() });
        }
        if self.feedback.len() != l - 1 {
            return Err(Error::ShapeMismatch {
                what: "feedback matrix count",
                expected: l - 1,
                got: self.feedback.len(),
            });
        }
        for (k, w) in self.forward.iter().enumerate() {
            check_shape(w, self.layer_sizes[k], self.layer_sizes[k + 1], "forward matrix")?;
        }
        for (k, w) in self.feedback.iter().enumerate() {
            check_shape(w, self.layer_sizes[k + 1], self.layer_sizes[k], "feedback matrix")?;
        }
        if self.field_kind == FieldKind::HopfieldGradient && !self.activation.is_smooth() {
            return Err(Error::InvalidNetwork("the Hopfield gradient field needs a smooth activation".into()));
        }
        Ok(())
    }

    /// Sizes listed output first, input last.
    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    /// Number of dynamic (non-input) layers `L`.
    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    /// Number of connection layers, which is also the number of learning rates.
    pub fn num_connection_layers(&self) -> usize {
        self.forward.len()
    }

    pub fn input_size(&self) -> usize {
        *self.layer_sizes.last().expect("validated")
    }

    pub fn output_size(&self) -> usize {
        self.layer_sizes[0]
    }

    /// Total number of dynamic units.
    pub fn state_size(&self) -> usize {
        self.layer_sizes[..self.num_layers()].iter().sum()
    }

    /// Offsets of each dynamic layer in the flattened state vector.
    pub fn state_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.num_layers() + 1);
        let mut acc = 0;
        for &n in &self.layer_sizes[..self.num_layers()] {
            offsets.push(acc);
            acc += n;
        }
        offsets.push(acc);
        offsets
    }

    pub fn num_params(&self) -> usize {
        self.forward.iter().chain(&self.feedback).map(|w| w.len()).sum()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn field_kind(&self) -> FieldKind {
        self.field_kind
    }

    /// Flattened weights in [`ParamDelta::flat`] order.
    pub fn params_flat(&self) -> Vec<f64> {
        self.forward.iter().chain(&self.feedback).flat_map(|w| w.iter().copied()).collect()
    }

    /// Overwrites the weights from a flat vector. Tied weights are not
    /// re-tied, so single coordinates can be perturbed independently.
    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::ShapeMismatch {
                what: "flat parameter vector",
                expected: self.num_params(),
                got: flat.len(),
            });
        }
        let mut rest = flat;
        for w in self.forward.iter_mut().chain(self.feedback.iter_mut()) {
            let (head, tail) = rest.split_at(w.len());
            w.as_mut_slice().copy_from_slice(head);
            rest = tail;
        }
        Ok(())
    }

    /// Sum of squares of every weight entry.
    pub fn squared_norm(&self) -> f64 {
        self.forward.iter().chain(&self.feedback).map(|w| w.norm_squared()).sum()
    }

    pub(crate) fn check_input(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.input_size() {
            return Err(Error::ShapeMismatch { what: "input vector", expected: self.input_size(), got: x.len() });
        }
        Ok(())
    }

    pub(crate) fn check_target(&self, y: &DVector<f64>) -> Result<()> {
        if y.len() != self.output_size() {
            return Err(Error::ShapeMismatch { what: "target vector", expected: self.output_size(), got: y.len() });
        }
        Ok(())
    }

    pub(crate) fn check_state(&self, s: &NetworkState) -> Result<()> {
        if s.layers.len() != self.num_layers() {
            return Err(Error::ShapeMismatch {
                what: "state layer count",
                expected: self.num_layers(),
                got: s.layers.len(),
            });
        }
        for (k, layer) in s.layers.iter().enumerate() {
            if layer.len() != self.layer_sizes[k] {
                return Err(Error::ShapeMismatch {
                    what: "state layer",
                    expected: self.layer_sizes[k],
                    got: layer.len(),
                });
            }
        }
        Ok(())
    }
}

fn check_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 {
        return Err(Error::InvalidNetwork("need at least an output and an input layer".into()));
    }
    if sizes.contains(&0) {
        return Err(Error::InvalidNetwork("layer sizes must be positive".into()));
    }
    Ok(())
}

fn check_shape(w: &DMatrix<f64>, rows: usize, cols: usize, what: &'static str) -> Result<()> {
    if w.nrows() != rows {
        return Err(Error::ShapeMismatch { what, expected: rows, got: w.nrows() });
    }
    if w.ncols() != cols {
        return Err(Error::ShapeMismatch { what, expected: cols, got: w.ncols() });
    }
    Ok(())
}

/// Converts an input-first architecture such as `784-512-512-10` into the
/// output-first `layer_sizes` layout.
pub fn layer_sizes_from_architecture(architecture: &[usize]) -> Vec<usize> {
    architecture.iter().rev().copied().collect()
}

/// Per-layer activity of the dynamic units; `layers[0]` is the output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    pub layers: Vec<DVector<f64>>,
}

impl NetworkState {
    pub fn zeros(net: &LayeredNetwork) -> Self {
        NetworkState { layers: net.layer_sizes[..net.num_layers()].iter().map(|&n| DVector::zeros(n)).collect() }
    }

    pub fn output(&self) -> &DVector<f64> {
        &self.layers[0]
    }

    pub fn flat(&self) -> DVector<f64> {
        let total = self.layers.iter().map(|l| l.len()).sum();
        let mut out = DVector::zeros(total);
        let mut at = 0;
        for layer in &self.layers {
            out.rows_mut(at, layer.len()).copy_from(layer);
            at += layer.len();
        }
        out
    }

    /// Inverse of [`NetworkState::flat`], using the layer layout of `net`.
    pub fn from_flat(net: &LayeredNetwork, flat: &DVector<f64>) -> Result<Self> {
        if flat.len() != net.state_size() {
            return Err(Error::ShapeMismatch {
                what: "flat state vector",
                expected: net.state_size(),
                got: flat.len(),
            });
        }
        let offsets = net.state_offsets();
        Ok(NetworkState { layers: offsets.windows(2).map(|w| flat.rows(w[0], w[1] - w[0]).into_owned()).collect() })
    }

    pub fn max_abs_diff(&self, other: &NetworkState) -> f64 {
        self.layers.iter().zip(&other.layers).map(|(a, b)| (a - b).amax()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.iter().all(|v| v.is_finite()))
    }
}

/// A direction in parameter space, shaped like the network's weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamDelta {
    pub forward: Vec<DMatrix<f64>>,
    pub feedback: Vec<DMatrix<f64>>,
}

impl ParamDelta {
    pub fn zeros_like(net: &LayeredNetwork) -> Self {
        ParamDelta {
            forward: net.forward.iter().map(|w| DMatrix::zeros(w.nrows(), w.ncols())).collect(),
            feedback: net.feedback.iter().map(|w| DMatrix::zeros(w.nrows(), w.ncols())).collect(),
        }
    }

    /// The network's own weights as a parameter-space vector.
    pub fn from_network(net: &LayeredNetwork) -> Self {
        ParamDelta { forward: net.forward.clone(), feedback: net.feedback.clone() }
    }

    pub fn from_flat(net: &LayeredNetwork, flat: &[f64]) -> Result<Self> {
        let mut delta = Self::zeros_like(net);
        if flat.len() != net.num_params() {
            return Err(Error::ShapeMismatch {
                what: "flat parameter vector",
                expected: net.num_params(),
                got: flat.len(),
            });
        }
        let mut rest = flat;
        for w in delta.matrices_mut() {
            let (head, tail) = rest.split_at(w.len());
            w.as_mut_slice().copy_from_slice(head);
            rest = tail;
        }
        Ok(delta)
    }

    /// Forward matrices first, then feedback, each column-major.
    pub fn flat(&self) -> Vec<f64> {
        self.matrices().flat_map(|w| w.iter().copied()).collect()
    }

    pub fn matrices(&self) -> impl Iterator<Item = &DMatrix<f64>> {
        self.forward.iter().chain(&self.feedback)
    }

    pub fn matrices_mut(&mut self) -> impl Iterator<Item = &mut DMatrix<f64>> {
        self.forward.iter_mut().chain(self.feedback.iter_mut())
    }

    pub fn len(&self) -> usize {
        self.matrices().map(|w| w.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, scale: f64, other: &ParamDelta) {
        for (a, b) in self.matrices_mut().zip(other.matrices()) {
            *a += b * scale;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for w in self.matrices_mut() {
            *w *= factor;
        }
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dot(&self, other: &ParamDelta) -> f64 {
        self.matrices().zip(other.matrices()).map(|(a, b)| a.dot(b)).sum()
    }

    /// `|self - other| / |other|`.
    pub fn relative_error(&self, reference: &ParamDelta) -> f64 {
        let mut diff = self.clone();
        diff.add_scaled(-1.0, reference);
        diff.norm() / reference.norm()
    }

    pub fn is_finite(&self) -> bool {
        self.matrices().all(|w| w.iter().all(|v| v.is_finite()))
    }
}
