//! Fully connected ReLU networks used as ground-truth targets.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::rng_from_seed;
use crate::oracle::BlackBox;
use crate::scalar::Scalar;

/// Pre-activations with magnitude at or below this count as on a bent hyperplane.
pub const BOUNDARY_TOL: f64 = 1e-12;

/// Layer widths `n₀, n₁, …, n_m` with `n_m = 1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Architecture(Vec<usize>);

impl Architecture {
    pub fn new(widths: Vec<usize>) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::InvalidArchitecture(format!("need at least two widths, got {}", widths.len())));
        }
        if widths.contains(&0) {
            return Err(Error::InvalidArchitecture("all widths must be positive".into()));
        }
        if *widths.last().unwrap() != 1 {
            return Err(Error::InvalidArchitecture(format!(
                "output width must be 1, got {}",
                widths.last().unwrap()
            )));
        }
        Ok(Self(widths))
    }

    pub fn widths(&self) -> &[usize] {
        &self.0
    }

    pub fn input_dim(&self) -> usize {
        self.0[0]
    }

    /// Number of affine layers `m`.
    pub fn depth(&self) -> usize {
        self.0.len() - 1
    }

    /// Neurons in every layer but the output layer.
    pub fn hidden_neurons(&self) -> usize {
        self.0[1..self.0.len() - 1].iter().sum()
    }

    /// `D = Σᵢ nᵢ (nᵢ₋₁ + 1)`.
    pub fn param_count(&self) -> usize {
        self.0.windows(2).map(|w| w[1] * (w[0] + 1)).sum()
    }
}

impl TryFrom<Vec<usize>> for Architecture {
    type Error = Error;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<Architecture> for Vec<usize> {
    fn from(a: Architecture) -> Self {
        a.0
    }
}

impl FromStr for Architecture {
    type Err = Error;

    /// Parses `"n0,n1,...,1"`.
    fn from_str(s: &str) -> Result<Self> {
        let widths = s
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<usize>()
                    .map_err(|e| Error::InvalidArchitecture(format!("bad width {t:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(widths)
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|w| w.to_string()).collect();
        write!(f, "{}", parts.join(","))
    }
}

/// `x ↦ W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineLayer<T> {
    pub weights: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> AffineLayer<T> {
    pub fn new(weights: Array2<T>, bias: Array1<T>) -> Result<Self> {
        if weights.nrows() != bias.len() {
            return Err(Error::DimensionMismatch { expected: weights.nrows(), got: bias.len() });
        }
        Ok(Self { weights, bias })
    }

    pub fn apply(&self, x: ArrayView1<T>) -> Array1<T> {
        self.weights.dot(&x) + &self.bias
    }
}

/// Identifies one neuron: `layer` is the 0-based affine layer index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NeuronId {
    pub layer: usize,
    pub index: usize,
}

impl NeuronId {
    pub fn new(layer: usize, index: usize) -> Self {
        Self { layer, index }
    }
}

/// On/off bit per hidden neuron, layer by layer.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ActivationPattern(pub Vec<bool>);

impl fmt::Display for ActivationPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// A deep ReLU network `σ∘Aᵐ∘…∘σ∘A¹`.
///
/// With `final_activation = false` (the default) the last ReLU is dropped and
/// the output is the raw affine value of the final layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ReluNetwork<T> {
    arch: Architecture,
    layers: Vec<AffineLayer<T>>,
    final_activation: bool,
}

impl<T: Scalar> ReluNetwork<T> {
    pub fn new(arch: Architecture, layers: Vec<AffineLayer<T>>, final_activation: bool) -> Result<Self> {
        if layers.len() != arch.depth() {
            return Err(Error::Schema(format!("expected {} layers, got {}", arch.depth(), layers.len())));
        }
        for (i, layer) in layers.iter().enumerate() {
            let (rows, cols) = layer.weights.dim();
            let (out, inp) = (arch.0[i + 1], arch.0[i]);
            if rows != out || cols != inp {
                return Err(Error::Schema(format!(
                    "layer {i}: W is {rows}x{cols}, architecture requires {out}x{inp}"
                )));
            }
            if layer.bias.len() != out {
                return Err(Error::Schema(format!("layer {i}: b has length {}, expected {out}", layer.bias.len())));
            }
        }
        Ok(Self { arch, layers, final_activation })
    }

    /// Weights and biases i.i.d. uniform on `[-scale, scale]`, row-major per layer.
    pub fn random(arch: &Architecture, seed: u64, scale: T) -> Result<Self> {
        if !(scale > T::zero()) {
            return Err(Error::InvalidArgument("scale must be positive".into()));
        }
        let mut rng = rng_from_seed(seed);
        let mut draw = || scale * T::lit(rng.random_range(-1.0..=1.0));
        let layers = arch
            .0
            .windows(2)
            .map(|w| {
                let weights = Array2::from_shape_simple_fn((w[1], w[0]), &mut draw);
                let bias = Array1::from_shape_simple_fn(w[1], &mut draw);
                AffineLayer { weights, bias }
            })
            .collect();
        Self::new(arch.clone(), layers, false)
    }

    pub fn with_final_activation(mut self, on: bool) -> Self {
        self.final_activation = on;
        self
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn layers(&self) -> &[AffineLayer<T>] {
        &self.layers
    }

    pub fn final_activation(&self) -> bool {
        self.final_activation
    }

    pub fn input_dim(&self) -> usize {
        self.arch.input_dim()
    }

    /// Width of the first hidden layer.
    pub fn first_layer_width(&self) -> usize {
        self.arch.0[1]
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    fn check_dim(&self, x: ArrayView1<T>) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), got: x.len() });
        }
        Ok(())
    }

    /// Pre-activation vectors of every layer, output layer included.
    pub fn pre_activations(&self, x: ArrayView1<T>) -> Result<Vec<Array1<T>>> {
        self.check_dim(x)?;
        let mut out = Vec::with_capacity(self.layers.len());
        let mut a = x.to_owned();
        for layer in &self.layers {
            let z = layer.apply(a.view());
            a = z.mapv(relu);
            out.push(z);
        }
        Ok(out)
    }

    pub fn eval(&self, x: ArrayView1<T>) -> Result<T> {
        self.check_dim(x)?;
        Ok(self.forward(x))
    }

    /// Evaluation without the dimension check.
    pub(crate) fn forward(&self, x: ArrayView1<T>) -> T {
        let last = self.layers.len() - 1;
        let mut a = x.to_owned();
        for layer in &self.layers[..last] {
            a = layer.apply(a.view()).mapv(relu);
        }
        let z = self.layers[last].apply(a.view())[0];
        if self.final_activation {
            relu(z)
        } else {
            z
        }
    }

    /// Bit `1` iff the hidden pre-activation is strictly positive.
    pub fn activation_pattern(&self, x: ArrayView1<T>) -> Result<ActivationPattern> {
        let pre = self.pre_activations(x)?;
        let hidden = &pre[..pre.len() - 1];
        Ok(ActivationPattern(hidden.iter().flat_map(|z| z.iter().map(|&v| v > T::zero())).collect()))
    }

    /// Value of one neuron's pre-activation.
    pub fn preactivation(&self, x: ArrayView1<T>, neuron: NeuronId) -> Result<T> {
        self.check_neuron(neuron)?;
        Ok(self.pre_activations(x)?[neuron.layer][neuron.index])
    }

    fn check_neuron(&self, neuron: NeuronId) -> Result<()> {
        if neuron.layer >= self.layers.len() || neuron.index >= self.arch.0[neuron.layer + 1] {
            return Err(Error::InvalidArgument(format!("no neuron {neuron:?} in architecture {}", self.arch)));
        }
        Ok(())
    }

    /// Jacobian rows of layer `upto` pre-activations w.r.t. the input, masking
    /// earlier layers by their activation at `x`. Errors when an earlier
    /// pre-activation sits on its boundary.
    fn masked_jacobian(&self, x: ArrayView1<T>, upto: usize) -> Result<Array2<T>> {
        let pre = self.pre_activations(x)?;
        let tol = T::lit(BOUNDARY_TOL);
        let mut jac = self.layers[0].weights.clone();
        for (l, z_l) in pre.iter().enumerate().take(upto) {
            for (i, &z) in z_l.iter().enumerate() {
                if z.abs() <= tol {
                    return Err(Error::OnBoundary { layer: l, neuron: i, value: z.to_f64_lossy() });
                }
                if z < T::zero() {
                    jac.row_mut(i).fill(T::zero());
                }
            }
            jac = self.layers[l + 1].weights.dot(&jac);
        }
        Ok(jac)
    }

    /// Gradient of one neuron's pre-activation; valid where no earlier neuron is on its boundary.
    pub fn preactivation_gradient(&self, x: ArrayView1<T>, neuron: NeuronId) -> Result<Array1<T>> {
        self.check_neuron(neuron)?;
        Ok(self.masked_jacobian(x, neuron.layer)?.row(neuron.index).to_owned())
    }

    /// Gradient of the local linear piece containing `x`.
    pub fn analytic_gradient(&self, x: ArrayView1<T>) -> Result<Array1<T>> {
        let last = self.layers.len() - 1;
        let jac = self.masked_jacobian(x, last)?;
        let grad = jac.row(0).to_owned();
        if self.final_activation {
            let z = self.pre_activations(x)?[last][0];
            if z.abs() <= T::lit(BOUNDARY_TOL) {
                return Err(Error::OnBoundary { layer: last, neuron: 0, value: z.to_f64_lossy() });
            }
            if z < T::zero() {
                return Ok(Array1::zeros(grad.len()));
            }
        }
        Ok(grad)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&NetworkDoc::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: NetworkDoc<T> = serde_json::from_str(text)?;
        doc.try_into()
    }
}

impl<T: Scalar> BlackBox<T> for ReluNetwork<T> {
    fn input_dim(&self) -> usize {
        self.arch.input_dim()
    }

    fn value(&self, x: ArrayView1<T>) -> T {
        self.forward(x)
    }
}

#[inline]
fn relu<T: Scalar>(v: T) -> T {
    v.max(T::zero())
}

#[derive(Serialize, Deserialize)]
struct LayerDoc<T> {
    #[serde(rename = "W")]
    w: Vec<Vec<T>>,
    b: Vec<T>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkDoc<T> {
    arch: Vec<usize>,
    #[serde(default)]
    final_activation: bool,
    layers: Vec<LayerDoc<T>>,
}

impl<T: Scalar> From<&ReluNetwork<T>> for NetworkDoc<T> {
    fn from(net: &ReluNetwork<T>) -> Self {
        Self {
            arch: net.arch.0.clone(),
            final_activation: net.final_activation,
            layers: net
                .layers
                .iter()
                .map(|l| LayerDoc {
                    w: l.weights.rows().into_iter().map(|r| r.to_vec()).collect(),
                    b: l.bias.to_vec(),
                })
                .collect(),
        }
    }
}

impl<T: Scalar> TryFrom<NetworkDoc<T>> for ReluNetwork<T> {
    type Error = Error;

    fn try_from(doc: NetworkDoc<T>) -> Result<Self> {
        let arch = Architecture::new(doc.arch)?;
        let mut layers = Vec::with_capacity(doc.layers.len());
        for (i, l) in doc.layers.into_iter().enumerate() {
            let rows = l.w.len();
            let cols = l.w.first().map_or(0, Vec::len);
            if l.w.iter().any(|r| r.len() != cols) {
                return Err(Error::Schema(format!("layer {i}: ragged W rows")));
            }
            let flat: Vec<T> = l.w.into_iter().flatten().collect();
            let weights = Array2::from_shape_vec((rows, cols), flat).map_err(|e| Error::Schema(e.to_string()))?;
            layers.push(AffineLayer { weights, bias: Array1::from(l.b) });
        }
        ReluNetwork::new(arch, layers, doc.final_activation)
    }
}
