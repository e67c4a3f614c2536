use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Dense layer `y = act(x Wᵀ + b)` with `W` stored `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }
}

/// A fixed-topology multilayer perceptron: relu hidden layers and an
/// identity output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MlpRecord", into = "MlpRecord")]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

/// Cached activations from a forward pass, consumed by [`MlpParams::backprop`].
#[derive(Debug, Clone)]
pub struct Trace {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    pub output: Array2<f64>,
}

/// Gradients (or optimizer moments) shaped like an [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
}

impl Gradients {
    pub fn zeros_like(p: &MlpParams) -> Self {
        Gradients {
            layers: p
                .layers
                .iter()
                .map(|l| (Array2::zeros(l.weight.raw_dim()), Array1::zeros(l.bias.raw_dim())))
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|(w, b)| w.iter().chain(b.iter()).all(|v| v.is_finite()))
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            *w += ow;
            *b += ob;
        }
    }

    pub fn scale(&mut self, c: f64) {
        for (w, b) in &mut self.layers {
            *w *= c;
            *b *= c;
        }
    }

    /// Flattened in layer order, weights (row-major) before biases.
    pub fn to_flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied().collect::<Vec<_>>())
            .collect()
    }
}

impl MlpParams {
    /// He-scaled normal weights for relu layers, 1/fan-in for the output
    /// layer, zero biases.
    pub fn init(sizes: &[usize], seed: u64) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::config(
                "layer_sizes",
                format!("need at least 2 layer sizes, got {}", sizes.len()),
            ));
        }
        if sizes.contains(&0) {
            return Err(Error::config("layer_sizes", "layer sizes must be positive"));
        }
        let mut rng = rng::derived_rng(seed, &[rng::stream::INIT]);
        let n_layers = sizes.len() - 1;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(l, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let activation = if l + 1 == n_layers {
                    Activation::Identity
                } else {
                    Activation::Relu
                };
                let gain = match activation {
                    Activation::Relu => 2.0,
                    Activation::Identity => 1.0,
                };
                let normal = Normal::new(0.0, (gain / fan_in as f64).sqrt()).expect("finite std");
                let weight = Array2::from_shape_simple_fn((fan_out, fan_in), || normal.sample(&mut rng));
                Layer {
                    weight,
                    bias: Array1::zeros(fan_out),
                    activation,
                }
            })
            .collect();
        Ok(MlpParams { layers })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Contract("network has no layers".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::Contract(format!(
                    "layer {i} emits {} values but layer {} expects {}",
                    pair[0].outputs(),
                    i + 1,
                    pair[1].inputs()
                )));
            }
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.outputs() {
                return Err(Error::Contract(format!("layer {i} bias length mismatch")));
            }
        }
        Ok(MlpParams { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Layer::outputs))
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Contract(format!(
                "network expects {} input columns, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let mut a = x.to_owned();
        for layer in &self.layers {
            let mut z = a.dot(&layer.weight.t()) + &layer.bias;
            z.mapv_inplace(|v| layer.activation.apply(v));
            a = z;
        }
        Ok(a)
    }

    /// Forward pass that keeps what backprop needs. Fails on the first layer
    /// producing a non-finite activation.
    pub fn forward_trace(&self, x: ArrayView2<f64>) -> Result<Trace> {
        self.check_input(&x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut a = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = a.dot(&layer.weight.t()) + &layer.bias;
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::numeric(format!("forward pass, layer {i}"), "non-finite activation"));
            }
            let next = z.mapv(|v| layer.activation.apply(v));
            inputs.push(a);
            pre.push(z);
            a = next;
        }
        Ok(Trace {
            inputs,
            pre,
            output: a,
        })
    }

    /// Reverse pass: parameter gradients and the gradient with respect to
    /// the network input, given `dL/d(output)`.
    pub fn backprop(&self, trace: &Trace, grad_output: ArrayView2<f64>) -> Result<(Gradients, Array2<f64>)> {
        if grad_output.dim() != trace.output.dim() {
            return Err(Error::Contract(format!(
                "output gradient is {:?}, output is {:?}",
                grad_output.dim(),
                trace.output.dim()
            )));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = grad_output.to_owned();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            if layer.activation != Activation::Identity {
                ndarray::Zip::from(&mut delta)
                    .and(&trace.pre[i])
                    .for_each(|d, &z| *d *= layer.activation.derivative(z));
            }
            let gw = delta.t().dot(&trace.inputs[i]);
            let gb = delta.sum_axis(Axis(0));
            let next = delta.dot(&layer.weight);
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::numeric(format!("backward pass, layer {i}"), "non-finite gradient"));
            }
            grads.push((gw, gb));
            delta = next;
        }
        grads.reverse();
        Ok((Gradients { layers: grads }, delta))
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied().collect::<Vec<_>>())
            .collect()
    }

    /// Overwrites all parameters from a vector laid out like [`Self::to_flat`].
    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Contract(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let mut it = flat.iter();
        for l in &mut self.layers {
            for v in l.weight.iter_mut().chain(l.bias.iter_mut()) {
                *v = *it.next().expect("length checked");
            }
        }
        Ok(())
    }
}

/// Inputs and targets for one optimisation step.
#[derive(Debug, Clone)]
pub struct Batch {
    pub inputs: Array2<f64>,
    pub targets: Array2<f64>,
}

impl Batch {
    pub fn new(inputs: Array2<f64>, targets: Array2<f64>) -> Result<Self> {
        if inputs.nrows() == 0 || inputs.nrows() != targets.nrows() {
            return Err(Error::Contract(format!(
                "batch has {} inputs and {} targets",
                inputs.nrows(),
                targets.nrows()
            )));
        }
        if inputs.iter().chain(targets.iter()).any(|v| !v.is_finite()) {
            return Err(Error::numeric("batch", "non-finite entry"));
        }
        Ok(Batch { inputs, targets })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// Mean over every output entry of the squared residual.
    Mse,
}

pub fn mse(pred: ArrayView2<f64>, target: ArrayView2<f64>) -> f64 {
    let n = pred.len() as f64;
    pred.iter().zip(target.iter()).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n
}

pub fn mse_grad(pred: ArrayView2<f64>, target: ArrayView2<f64>) -> Array2<f64> {
    let n = pred.len() as f64;
    (&pred - &target) * (2.0 / n)
}

/// Loss value and exact parameter gradients on a batch.
pub fn backward(p: &MlpParams, batch: &Batch, loss: LossKind) -> Result<(f64, Gradients)> {
    let trace = p.forward_trace(batch.inputs.view())?;
    if trace.output.dim() != batch.targets.dim() {
        return Err(Error::Contract(format!(
            "targets are {:?}, network emits {:?}",
            batch.targets.dim(),
            trace.output.dim()
        )));
    }
    let (value, grad) = match loss {
        LossKind::Mse => (
            mse(trace.output.view(), batch.targets.view()),
            mse_grad(trace.output.view(), batch.targets.view()),
        ),
    };
    let (g, _) = p.backprop(&trace, grad.view())?;
    Ok((value, g))
}

#[derive(Serialize, Deserialize)]
struct LayerRecord {
    inputs: usize,
    outputs: usize,
    activation: Activation,
    weight: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MlpRecord {
    layers: Vec<LayerRecord>,
}

impl From<MlpParams> for MlpRecord {
    fn from(p: MlpParams) -> Self {
        MlpRecord {
            layers: p
                .layers
                .into_iter()
                .map(|l| LayerRecord {
                    inputs: l.inputs(),
                    outputs: l.outputs(),
                    activation: l.activation,
                    weight: l.weight.iter().copied().collect(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
        }
    }
}

impl TryFrom<MlpRecord> for MlpParams {
    type Error = String;

    fn try_from(r: MlpRecord) -> std::result::Result<Self, String> {
        let layers = r
            .layers
            .into_iter()
            .map(|l| {
                let weight = Array2::from_shape_vec((l.outputs, l.inputs), l.weight)
                    .map_err(|e| format!("weight shape: {e}"))?;
                if l.bias.len() != l.outputs {
                    return Err("bias length mismatch".to_string());
                }
                Ok(Layer {
                    weight,
                    bias: Array1::from(l.bias),
                    activation: l.activation,
                })
            })
            .collect::<std::result::Result<Vec<_>, String>>()?;
        MlpParams::from_layers(layers).map_err(|e| e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng as _;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut r = rng::rng_from_seed(seed);
        Array2::from_shape_simple_fn((rows, cols), || r.random_range(-1.0..1.0))
    }

    #[test]
    fn init_is_deterministic_and_chained() {
        assert_eq!(MlpParams::init(&[2, 1], 5).unwrap(), MlpParams::init(&[2, 1], 5).unwrap());
        let p = MlpParams::init(&[8, 64, 64, 1], 1).unwrap();
        assert_eq!(p.layers.len(), 3);
        assert_eq!(p.layer_sizes(), vec![8, 64, 64, 1]);
        assert_eq!(p.layers[2].activation, Activation::Identity);
        assert!(p.layers.iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
        assert!(MlpParams::init(&[], 1).is_err());
        assert!(MlpParams::init(&[3], 1).is_err());
    }

    #[test]
    fn he_variance() {
        // 100 x 100 = 10^4 first-layer draws
        let p = MlpParams::init(&[100, 100, 1], 11).unwrap();
        let w = &p.layers[0].weight;
        let n = w.len() as f64;
        let mean = w.sum() / n;
        let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let expected = 2.0 / 100.0;
        assert!((var / expected - 1.0).abs() < 0.2, "var {var}");
    }

    #[test]
    fn zero_net_outputs_zero_and_identity_passthrough() {
        let mut p = MlpParams::init(&[3, 4, 2], 0).unwrap();
        p.set_flat(&vec![0.0; p.num_params()]).unwrap();
        let x = random_matrix(5, 3, 1);
        assert!(p.forward(x.view()).unwrap().iter().all(|&v| v == 0.0));

        let id = MlpParams::from_layers(vec![Layer {
            weight: Array2::eye(3),
            bias: Array1::zeros(3),
            activation: Activation::Identity,
        }])
        .unwrap();
        assert_eq!(id.forward(x.view()).unwrap(), x);
        assert!(id.forward(random_matrix(2, 4, 0).view()).is_err());
    }

    #[test]
    fn forward_matches_elementwise_reimplementation() {
        let p = MlpParams::init(&[4, 6, 5, 2], 3).unwrap();
        let x = random_matrix(7, 4, 2);
        let got = p.forward(x.view()).unwrap();
        for r in 0..x.nrows() {
            let mut a: Vec<f64> = x.row(r).to_vec();
            for l in &p.layers {
                let mut next = vec![0.0; l.outputs()];
                for o in 0..l.outputs() {
                    let mut s = l.bias[o];
                    for i in 0..l.inputs() {
                        s += l.weight[[o, i]] * a[i];
                    }
                    next[o] = if l.activation == Activation::Relu { s.max(0.0) } else { s };
                }
                a = next;
            }
            for (c, v) in a.iter().enumerate() {
                assert!((got[[r, c]] - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_residual_gives_zero_gradient() {
        let p = MlpParams::init(&[3, 5, 2], 4).unwrap();
        let x = random_matrix(6, 3, 5);
        let y = p.forward(x.view()).unwrap();
        let (loss, g) = backward(&p, &Batch::new(x, y).unwrap(), LossKind::Mse).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.to_flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_mse_gradient_matches_normal_equations() {
        // y = X w, dL/dw = 2/b Xᵀ(Xw - y)  (single output, so mean over b)
        let w = array![[0.3, -0.7, 1.1]];
        let lin = MlpParams::from_layers(vec![Layer {
            weight: w.clone(),
            bias: Array1::zeros(1),
            activation: Activation::Identity,
        }])
        .unwrap();
        let x = random_matrix(9, 3, 8);
        let y = random_matrix(9, 1, 9);
        let (_, g) = backward(&lin, &Batch::new(x.clone(), y.clone()).unwrap(), LossKind::Mse).unwrap();
        let resid = x.dot(&w.t()) - &y;
        let expected = x.t().dot(&resid) * (2.0 / 9.0);
        for i in 0..3 {
            assert!((g.layers[0].0[[0, i]] - expected[[i, 0]]).abs() < 1e-12);
        }
    }

    #[test]
    fn positive_homogeneity_without_biases() {
        let p = MlpParams::init(&[4, 8, 8, 3], 21).unwrap();
        let x = random_matrix(5, 4, 22);
        let a = p.forward((&x * 2.5).view()).unwrap();
        let b = p.forward(x.view()).unwrap() * 2.5;
        assert!(a.iter().zip(b.iter()).all(|(u, v)| (u - v).abs() < 1e-12));
    }

    #[test]
    fn flat_roundtrip_and_serde() {
        let p = MlpParams::init(&[3, 4, 2], 2).unwrap();
        let mut q = MlpParams::init(&[3, 4, 2], 3).unwrap();
        q.set_flat(&p.to_flat()).unwrap();
        assert_eq!(p, q);
        let json = serde_json::to_string(&p).unwrap();
        let back: MlpParams = serde_json::from_str(&json).unwrap();
        assert_eq!(back, p);
        let bad = json.replacen("\"inputs\":3", "\"inputs\":2", 1);
        assert!(serde_json::from_str::<MlpParams>(&bad).is_err());
    }
}
