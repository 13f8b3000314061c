use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::Model;

/// Fully connected risk network: input -> hidden layers (ReLU, dropout)
/// -> one linear output unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    /// Hidden layer widths; empty means a plain linear model.
    pub hidden: Vec<usize>,
    /// Dropout probability after each hidden activation, in [0, 1).
    /// Applied only when a training RNG is supplied to `forward`.
    pub dropout: f64,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden: Vec<usize>, dropout: f64) -> Result<MlpSpec> {
        let spec = MlpSpec {
            input_dim,
            hidden,
            dropout,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::config("input_dim must be positive"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::config("hidden layer widths must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }

    /// Layer widths including input and the scalar output.
    fn dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden);
        dims.push(1);
        dims
    }
}

#[derive(Debug, Clone)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub weights: Vec<Tensor>,
    pub biases: Vec<Tensor>,
}

/// Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights, zero biases.
pub fn init_mlp(spec: &MlpSpec, rng: &mut ChaCha8Rng) -> Result<Mlp> {
    spec.validate()?;
    let dims = spec.dims();
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for l in 0..dims.len() - 1 {
        let (fan_in, fan_out) = (dims[l], dims[l + 1]);
        let bound = 1.0 / (fan_in as f64).sqrt();
        let values: Vec<f64> = (0..fan_in * fan_out)
            .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * bound)
            .collect();
        let w = Tensor::from_vec(vec![fan_in, fan_out], values);
        w.set_name(format!("layer{l}.w"));
        let b = Tensor::zeros(vec![fan_out]);
        b.set_name(format!("layer{l}.b"));
        weights.push(w);
        biases.push(b);
    }
    Ok(Mlp {
        spec: spec.clone(),
        weights,
        biases,
    })
}

impl Mlp {
    /// Risk scores for a `[n, input_dim]` batch, shape `[n, 1]`.
    ///
    /// Passing a RNG turns on dropout (training); `None` is deterministic
    /// evaluation.
    pub fn forward(&self, x: &Tensor, mut rng: Option<&mut ChaCha8Rng>) -> Result<Tensor> {
        let (n, d) = x.dims2("mlp forward")?;
        if d != self.spec.input_dim {
            return Err(Error::ShapeMismatch {
                op: "mlp forward",
                left: vec![n, d],
                right: vec![n, self.spec.input_dim],
            });
        }
        let last = self.weights.len() - 1;
        let mut h = x.clone();
        for l in 0..=last {
            h = h.matmul(&self.weights[l])?.add_bias(&self.biases[l])?;
            if l < last {
                h = h.relu();
                if let Some(r) = rng.as_deref_mut() {
                    h = h.dropout(self.spec.dropout, r)?;
                }
            }
        }
        Ok(h)
    }
}

impl Model for Mlp {
    fn params(&self) -> Vec<&Tensor> {
        self.weights.iter().chain(self.biases.iter()).collect()
    }

    fn clone_detached(&self) -> Mlp {
        Mlp {
            spec: self.spec.clone(),
            weights: self.weights.iter().map(Tensor::detached_clone).collect(),
            biases: self.biases.iter().map(Tensor::detached_clone).collect(),
        }
    }
}
