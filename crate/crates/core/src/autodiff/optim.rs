use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

/// SGD or Adam over a fixed set of parameters. Moment buffers are lazily
/// sized on the first step and checked against the parameter list afterwards,
/// so reusing an optimizer across models is caught instead of corrupting
/// state. Gradient reset is explicit ([`zero_grads`]), never implicit.
pub struct Optimizer {
    method: Method,
    lr: f64,
    step_count: usize,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn sgd(lr: f64) -> Optimizer {
        Optimizer::new(Method::Sgd, lr)
    }

    /// Adam with the usual defaults (beta1 0.9, beta2 0.999, eps 1e-8).
    pub fn adam(lr: f64) -> Optimizer {
        Optimizer::new(
            Method::Adam {
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            },
            lr,
        )
    }

    pub fn new(method: Method, lr: f64) -> Optimizer {
        assert!(lr > 0.0 && lr.is_finite(), "learning rate must be positive");
        Optimizer {
            method,
            lr,
            step_count: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step_count(&self) -> usize {
        self.step_count
    }

    /// Apply one update. Every parameter must already hold a gradient; a
    /// non-finite gradient aborts with a divergence error before any value is
    /// touched.
    pub fn step(&mut self, params: &[&Tensor]) -> Result<()> {
        let step = self.step_count + 1;
        let mut grads = Vec::with_capacity(params.len());
        for p in params {
            let g = p
                .grad()
                .ok_or_else(|| Error::MissingGradient { name: p.name() })?;
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::Diverged {
                    step,
                    what: "gradient",
                });
            }
            grads.push(g);
        }

        if let Method::Adam { .. } = self.method {
            if self.m.is_empty() {
                self.m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
                self.v = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            } else if self.m.len() != params.len()
                || self
                    .m
                    .iter()
                    .zip(params)
                    .any(|(buf, p)| buf.len() != p.numel())
            {
                return Err(Error::config(
                    "optimizer moment buffers do not match the parameter list",
                ));
            }
        }

        self.step_count = step;
        match self.method {
            Method::Sgd => {
                for (p, g) in params.iter().zip(&grads) {
                    let mut vals = p.inner.values.borrow_mut();
                    for (x, gi) in vals.iter_mut().zip(g) {
                        *x -= self.lr * gi;
                    }
                }
            }
            Method::Adam { beta1, beta2, eps } => {
                let bc1 = 1.0 - beta1.powi(step as i32);
                let bc2 = 1.0 - beta2.powi(step as i32);
                for (i, (p, g)) in params.iter().zip(&grads).enumerate() {
                    let mut vals = p.inner.values.borrow_mut();
                    for (j, (x, gi)) in vals.iter_mut().zip(g).enumerate() {
                        let m = &mut self.m[i][j];
                        let v = &mut self.v[i][j];
                        *m = beta1 * *m + (1.0 - beta1) * gi;
                        *v = beta2 * *v + (1.0 - beta2) * gi * gi;
                        let mh = *m / bc1;
                        let vh = *v / bc2;
                        *x -= self.lr * mh / (vh.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Clear gradients on all given parameters.
pub fn zero_grads<'a>(params: impl IntoIterator<Item = &'a Tensor>) {
    for p in params {
        p.clear_grad();
    }
}
