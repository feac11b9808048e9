//! Parameterized layers built on the tape.

use rand::Rng;

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Affine layer `x·W + b` with `W: fan_in × fan_out`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    /// He-uniform weights, zero bias.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Self {
        let bound = (6.0 / fan_in.max(1) as f64).sqrt();
        let w: Vec<f64> = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)).collect();
        let w = store.add(
            format!("{name}.w"),
            Tensor::matrix(fan_in, fan_out, w).expect("weight shape"),
        );
        let b = store.add(format!("{name}.b"), Tensor::zeros(vec![fan_out]));
        Self { w, b, fan_in, fan_out }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let w = g.param(self.w);
        let b = g.param(self.b);
        g.linear(x, w, Some(b))
    }
}

#[derive(Debug, Clone)]
struct Norm {
    gamma: ParamId,
    beta: ParamId,
}

/// Shared per-row MLP: ReLU after every hidden layer, identity output.
///
/// With normalization enabled each hidden pre-activation is standardized
/// over the rows of the input set before the ReLU.
#[derive(Debug, Clone)]
pub struct Mlp {
    widths: Vec<usize>,
    layers: Vec<Linear>,
    norms: Vec<Option<Norm>>,
}

impl Mlp {
    /// `widths[0]` is the input width; every later entry adds a layer.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        widths: &[usize],
        norm: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Config(format!("{name}: invalid MLP widths {widths:?}")));
        }
        let n_layers = widths.len() - 1;
        let mut layers = Vec::with_capacity(n_layers);
        let mut norms = Vec::with_capacity(n_layers);
        for (i, pair) in widths.windows(2).enumerate() {
            layers.push(Linear::new(store, &format!("{name}.{i}"), pair[0], pair[1], rng));
            let hidden = i + 1 < n_layers;
            norms.push((hidden && norm).then(|| Norm {
                gamma: store.add(format!("{name}.{i}.gamma"), Tensor::vector(vec![1.0; pair[1]])),
                beta: store.add(format!("{name}.{i}.beta"), Tensor::zeros(vec![pair[1]])),
            }));
        }
        Ok(Self {
            widths: widths.to_vec(),
            layers,
            norms,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn in_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.widths.last().expect("non-empty widths")
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, (layer, norm)) in self.layers.iter().zip(&self.norms).enumerate() {
            h = layer.forward(g, h)?;
            if i < last {
                if let Some(n) = norm {
                    let gamma = g.param(n.gamma);
                    let beta = g.param(n.beta);
                    h = g.set_norm(h, gamma, beta)?;
                }
                h = g.relu(h)?;
            }
        }
        Ok(h)
    }
}
