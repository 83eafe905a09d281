//! Dense softmax classifiers with analytic gradients.
//!
//! Parameters of every model are one flat [`ParamVector`]. Layers are laid
//! out in order, each as a row-major `out x in` weight matrix followed by its
//! `out` biases. Multinomial logistic regression is the zero-hidden-layer
//! case; the MLP uses ReLU between layers.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::seed;

/// Flat model parameters; every entry finite.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput);
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteParam { index });
        }
        Ok(ParamVector(values))
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0);
        ParamVector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    #[serde(alias = "multinomial_logistic")]
    Logistic,
    Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub num_classes: usize,
    pub hidden: Vec<usize>,
    pub init_seed: u64,
}

/// One dense layer, unflattened.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ModelSpec {
    pub fn logistic(input_dim: usize, num_classes: usize, init_seed: u64) -> Self {
        ModelSpec {
            kind: ModelKind::Logistic,
            input_dim,
            num_classes,
            hidden: Vec::new(),
            init_seed,
        }
    }

    pub fn mlp(input_dim: usize, hidden: Vec<usize>, num_classes: usize, init_seed: u64) -> Self {
        ModelSpec {
            kind: ModelKind::Mlp,
            input_dim,
            num_classes,
            hidden,
            init_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::config("model.num_classes", "must be >= 2"));
        }
        if self.input_dim < 1 {
            return Err(Error::config("model.input_dim", "must be >= 1"));
        }
        match self.kind {
            ModelKind::Logistic if !self.hidden.is_empty() => Err(Error::config(
                "model.hidden",
                "logistic model takes no hidden layers",
            )),
            ModelKind::Mlp if self.hidden.is_empty() => {
                Err(Error::config("model.hidden", "mlp needs at least one hidden layer"))
            }
            _ if self.hidden.contains(&0) => {
                Err(Error::config("model.hidden", "hidden layer sizes must be >= 1"))
            }
            _ => Ok(()),
        }
    }

    /// `(inputs, outputs)` of each layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut widths = Vec::with_capacity(self.hidden.len() + 2);
        widths.push(self.input_dim);
        widths.extend(&self.hidden);
        widths.push(self.num_classes);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|(i, o)| i * o + o).sum()
    }

    /// Uniform `[-a, a]` weights with `a = sqrt(6 / (fan_in + fan_out))`,
    /// zero biases.
    pub fn init_params(&self) -> ParamVector {
        let mut rng = seed::derive_rng(self.init_seed, &[seed::purpose::INIT]);
        let mut values = Vec::with_capacity(self.param_count());
        for (fan_in, fan_out) in self.layer_shapes() {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            values.extend((0..fan_in * fan_out).map(|_| rng.random_range(-limit..=limit)));
            values.extend(std::iter::repeat_n(0.0, fan_out));
        }
        ParamVector(values)
    }

    pub fn unflatten(&self, params: &ParamVector) -> Result<Vec<Layer>> {
        self.check_dim(params)?;
        let mut offset = 0;
        let values = params.as_slice();
        Ok(self
            .layer_shapes()
            .into_iter()
            .map(|(inputs, outputs)| {
                let w_end = offset + inputs * outputs;
                let b_end = w_end + outputs;
                let layer = Layer {
                    inputs,
                    outputs,
                    weights: values[offset..w_end].to_vec(),
                    bias: values[w_end..b_end].to_vec(),
                };
                offset = b_end;
                layer
            })
            .collect())
    }

    pub fn flatten(&self, layers: &[Layer]) -> Result<ParamVector> {
        let shapes = self.layer_shapes();
        if layers.len() != shapes.len() {
            return Err(Error::Shape {
                expected: shapes.len(),
                found: layers.len(),
            });
        }
        let mut values = Vec::with_capacity(self.param_count());
        for (layer, (inputs, outputs)) in layers.iter().zip(shapes) {
            if layer.weights.len() != inputs * outputs || layer.bias.len() != outputs {
                return Err(Error::Shape {
                    expected: inputs * outputs + outputs,
                    found: layer.weights.len() + layer.bias.len(),
                });
            }
            values.extend(&layer.weights);
            values.extend(&layer.bias);
        }
        ParamVector::new(values)
    }

    fn check_dim(&self, params: &ParamVector) -> Result<()> {
        let expected = self.param_count();
        if params.dim() != expected {
            return Err(Error::Shape {
                expected,
                found: params.dim(),
            });
        }
        Ok(())
    }

    fn check_data(&self, params: &ParamVector, data: &Dataset) -> Result<()> {
        self.check_dim(params)?;
        if data.is_empty() {
            return Err(Error::EmptyData);
        }
        if data.input_dim() != self.input_dim {
            return Err(Error::Shape {
                expected: self.input_dim,
                found: data.input_dim(),
            });
        }
        Ok(())
    }

    /// Mean softmax cross-entropy over `data`.
    pub fn loss(&self, params: &ParamVector, data: &Dataset) -> Result<f64> {
        self.check_data(params, data)?;
        let net = Network::new(self, params.as_slice());
        let mut scratch = net.scratch();
        let total: f64 = (0..data.len())
            .map(|row| {
                net.forward(data.features(row), &mut scratch);
                cross_entropy(scratch.logits(), data.label(row))
            })
            .sum();
        Ok(total / data.len() as f64)
    }

    /// Gradient of the mean loss over all of `data`.
    pub fn gradient(&self, params: &ParamVector, data: &Dataset) -> Result<ParamVector> {
        let rows: Vec<usize> = (0..data.len()).collect();
        self.batch_gradient(params, data, &rows)
    }

    /// Gradient of the mean loss over the rows `batch` of `data`.
    pub fn batch_gradient(
        &self,
        params: &ParamVector,
        data: &Dataset,
        batch: &[usize],
    ) -> Result<ParamVector> {
        self.check_data(params, data)?;
        if batch.is_empty() {
            return Err(Error::EmptyData);
        }
        let net = Network::new(self, params.as_slice());
        let mut scratch = net.scratch();
        let mut grad = vec![0.0; params.dim()];
        for &row in batch {
            net.forward(data.features(row), &mut scratch);
            net.backward(data.features(row), data.label(row), &mut scratch, &mut grad);
        }
        let scale = 1.0 / batch.len() as f64;
        grad.iter_mut().for_each(|g| *g *= scale);
        ParamVector::new(grad)
    }

    pub fn predict(&self, params: &ParamVector, data: &Dataset) -> Result<Vec<usize>> {
        self.check_data(params, data)?;
        let net = Network::new(self, params.as_slice());
        let mut scratch = net.scratch();
        Ok((0..data.len())
            .map(|row| {
                net.forward(data.features(row), &mut scratch);
                argmax(scratch.logits())
            })
            .collect())
    }

    /// Fraction of rows whose argmax prediction (lowest index on ties)
    /// matches the label.
    pub fn accuracy(&self, params: &ParamVector, data: &Dataset) -> Result<f64> {
        let predictions = self.predict(params, data)?;
        let correct = predictions
            .iter()
            .enumerate()
            .filter(|&(row, &p)| p == data.label(row))
            .count();
        Ok(correct as f64 / data.len() as f64)
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
}

fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    (log_sum_exp(logits) - logits[label]).max(0.0)
}

struct LayerView<'a> {
    inputs: usize,
    outputs: usize,
    /// Offset of the weight block in the flat vector.
    offset: usize,
    weights: &'a [f64],
    bias: &'a [f64],
}

struct Network<'a> {
    layers: Vec<LayerView<'a>>,
}

/// Per-layer activations, reused across examples.
struct Scratch {
    /// Post-activation outputs of each layer; the last entry holds logits.
    activations: Vec<Vec<f64>>,
    delta: Vec<f64>,
    next_delta: Vec<f64>,
}

impl Scratch {
    fn logits(&self) -> &[f64] {
        self.activations.last().expect("network has an output layer")
    }
}

impl<'a> Network<'a> {
    fn new(spec: &ModelSpec, values: &'a [f64]) -> Self {
        let mut offset = 0;
        let layers = spec
            .layer_shapes()
            .into_iter()
            .map(|(inputs, outputs)| {
                let w_end = offset + inputs * outputs;
                let view = LayerView {
                    inputs,
                    outputs,
                    offset,
                    weights: &values[offset..w_end],
                    bias: &values[w_end..w_end + outputs],
                };
                offset = w_end + outputs;
                view
            })
            .collect();
        Network { layers }
    }

    fn scratch(&self) -> Scratch {
        let widest = self.layers.iter().map(|l| l.outputs.max(l.inputs)).max().unwrap_or(1);
        Scratch {
            activations: self.layers.iter().map(|l| vec![0.0; l.outputs]).collect(),
            delta: Vec::with_capacity(widest),
            next_delta: Vec::with_capacity(widest),
        }
    }

    fn forward(&self, x: &[f64], scratch: &mut Scratch) {
        let last = self.layers.len() - 1;
        for (idx, layer) in self.layers.iter().enumerate() {
            let (done, rest) = scratch.activations.split_at_mut(idx);
            let input: &[f64] = if idx == 0 { x } else { &done[idx - 1] };
            let out = &mut rest[0];
            for (o, value) in out.iter_mut().enumerate() {
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                let z = layer.bias[o] + row.iter().zip(input).map(|(w, a)| w * a).sum::<f64>();
                *value = if idx < last { z.max(0.0) } else { z };
            }
        }
    }

    /// Accumulate the gradient of one example's loss into `grad`.
    fn backward(&self, x: &[f64], label: usize, scratch: &mut Scratch, grad: &mut [f64]) {
        let logits = scratch.activations.last().expect("network has an output layer");
        let lse = log_sum_exp(logits);
        scratch.delta.clear();
        scratch
            .delta
            .extend(logits.iter().enumerate().map(|(k, z)| (z - lse).exp() - f64::from(k == label)));

        for idx in (0..self.layers.len()).rev() {
            let layer = &self.layers[idx];
            let input: &[f64] = if idx == 0 { x } else { &scratch.activations[idx - 1] };
            let w_grad = &mut grad[layer.offset..layer.offset + layer.inputs * layer.outputs];
            for (o, &d) in scratch.delta.iter().enumerate() {
                for (g, a) in w_grad[o * layer.inputs..(o + 1) * layer.inputs].iter_mut().zip(input) {
                    *g += d * a;
                }
            }
            let b_start = layer.offset + layer.inputs * layer.outputs;
            for (g, d) in grad[b_start..b_start + layer.outputs].iter_mut().zip(&scratch.delta) {
                *g += d;
            }
            if idx == 0 {
                break;
            }
            scratch.next_delta.clear();
            scratch.next_delta.resize(layer.inputs, 0.0);
            for (o, &d) in scratch.delta.iter().enumerate() {
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (nd, w) in scratch.next_delta.iter_mut().zip(row) {
                    *nd += d * w;
                }
            }
            // ReLU derivative, taken as 0 at the kink.
            for (nd, a) in scratch.next_delta.iter_mut().zip(input) {
                if *a <= 0.0 {
                    *nd = 0.0;
                }
            }
            std::mem::swap(&mut scratch.delta, &mut scratch.next_delta);
        }
    }
}
