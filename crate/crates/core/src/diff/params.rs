use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
    pub trainable: bool,
}

/// Owns every parameter of a model. Names are unique within a store.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.find(&name).is_some() {
            return Err(Error::DuplicateParam(name));
        }
        self.params.push(Parameter {
            name,
            tensor,
            trainable: true,
        });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].tensor
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].tensor
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.tensor.clear_grad();
        }
    }

    /// Adds the gradients of a backward pass into each trainable parameter.
    /// Trainable parameters the loss does not reach receive a zero gradient.
    pub fn accumulate(&mut self, grads: &super::graph::Gradients) {
        for (i, p) in self.params.iter_mut().enumerate() {
            if !p.trainable {
                continue;
            }
            let n = p.tensor.len();
            let incoming = grads.param(ParamId(i));
            match p.tensor.grad_mut() {
                Some(g) => {
                    if let Some(inc) = incoming {
                        g.iter_mut().zip(inc).for_each(|(a, b)| *a += b);
                    }
                }
                None => {
                    let g = incoming.map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
                    p.tensor.set_grad(g).expect("gradient length matches parameter");
                }
            }
        }
    }

    /// Euclidean norm over all populated gradients.
    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .filter_map(|p| p.tensor.grad())
            .flat_map(|g| g.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Gradient norm restricted to parameters whose name starts with `prefix`.
    pub fn grad_norm_of(&self, prefix: &str) -> f64 {
        self.params
            .iter()
            .filter(|p| p.name.starts_with(prefix))
            .filter_map(|p| p.tensor.grad())
            .flat_map(|g| g.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales all gradients so their global norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let scale = max_norm / norm;
            for p in &mut self.params {
                if let Some(g) = p.tensor.grad_mut() {
                    g.iter_mut().for_each(|v| *v *= scale);
                }
            }
        }
        norm
    }
}

/// Uniform Glorot initialization, limit `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<R: Rng + ?Sized>(rng: &mut R, fan_out: usize, fan_in: usize) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..fan_in * fan_out).map(|_| rng.gen_range(-limit..=limit)).collect()
}

/// Fully connected layer `y = W x + b` with `W` stored as `[out, in]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let w = Tensor::matrix(out_dim, in_dim, glorot_uniform(rng, out_dim, in_dim))?;
        let weight = store.add(format!("{name}.weight"), w)?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim])?)?;
        Ok(Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        g.affine(x, w, b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(self, g: &mut Graph<'_>, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Relu => g.relu(x),
            Activation::Tanh => g.tanh(x),
        }
    }
}

/// Stack of linear layers with a shared hidden activation and a separate
/// activation on the output layer.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub hidden: Activation,
    pub output: Activation,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::config(format!("mlp `{name}` needs at least input and output dims")));
        }
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Mlp {
            layers,
            hidden,
            output,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let last = self.layers.len() - 1;
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, h)?;
            let act = if i == last { self.output } else { self.hidden };
            h = act.apply(g, h);
        }
        Ok(h)
    }
}
