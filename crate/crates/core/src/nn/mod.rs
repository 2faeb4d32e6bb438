//! Dense feedforward networks with explicit reverse-mode gradients.
//!
//! Everything is `f64`. A forward pass that will be differentiated returns a
//! [`Tape`] holding the layer inputs and outputs; [`Mlp::backward`] consumes
//! the tape exactly once (it is moved) and rejects tapes recorded before the
//! parameters were last mutated. Gradients are summed over the batch; scale
//! the upstream seed gradient by `1/batch` for mean losses.

pub mod adam;
pub mod norm;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

use crate::error::{Error, Result};

pub use adam::{AdamHyper, AdamState};
pub use norm::{normalize_backward, normalize_vector, NORM_EPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation output `a = act(z)`.
    #[inline]
    fn grad_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Layer {
    /// Weight matrix, `out_dim x in_dim`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub act: Activation,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.w.ncols()
    }
    pub fn out_dim(&self) -> usize {
        self.w.nrows()
    }
}

/// Multilayer perceptron. Parameters live in [`Layer`]s; the flat parameter
/// order (used by optimizers and checkpoints) is, per layer, the weight
/// matrix row-major followed by the bias.
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<Layer>,
    version: u64,
}

/// Recorded intermediates of one differentiable forward pass.
///
/// `values[0]` is the input batch, `values[i + 1]` the activation output of
/// layer `i`. The tape is consumed by [`Mlp::backward`]; recording it and
/// then mutating the network makes it stale.
#[derive(Debug)]
pub struct Tape {
    version: u64,
    values: Vec<Array2<f64>>,
}

impl Tape {
    /// Activation output of layer `i` (batch x out_dim of that layer).
    pub fn layer_output(&self, i: usize) -> ArrayView2<'_, f64> {
        self.values[i + 1].view()
    }
}

/// Per-layer parameter gradients, shape-congruent with the network.
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub dw: Vec<Array2<f64>>,
    pub db: Vec<Array1<f64>>,
}

impl MlpGrads {
    pub fn add(&mut self, other: &MlpGrads) {
        assert_eq!(self.dw.len(), other.dw.len(), "gradient layer count");
        for (a, b) in self.dw.iter_mut().zip(&other.dw) {
            *a += b;
        }
        for (a, b) in self.db.iter_mut().zip(&other.db) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in &mut self.dw {
            *a *= s;
        }
        for a in &mut self.db {
            *a *= s;
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.dw.iter().zip(&self.db) {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }
}

impl Mlp {
    /// Build a network from consecutive layer sizes. `sizes` has one entry
    /// per interface, so `sizes = [4, 64, 2]` is a single hidden layer of 64
    /// units. Weights and biases are uniform in `[-1/sqrt(fan_in), +1/sqrt(fan_in)]`,
    /// drawn row-major weights first, then bias, layer by layer.
    pub fn new<R: Rng>(sizes: &[usize], acts: &[Activation], rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::config("mlp needs at least input and output sizes"));
        }
        if acts.len() != sizes.len() - 1 {
            return Err(Error::config(format!(
                "expected {} activations for {} layers, got {}",
                sizes.len() - 1,
                sizes.len() - 1,
                acts.len()
            )));
        }
        if sizes.iter().any(|&s| s == 0) {
            return Err(Error::config("zero-width layer"));
        }
        let mut layers = Vec::with_capacity(acts.len());
        for (i, &act) in acts.iter().enumerate() {
            let (fan_in, fan_out) = (sizes[i], sizes[i + 1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let mut w = Array2::zeros((fan_out, fan_in));
            for v in w.iter_mut() {
                *v = rng.gen_range(-bound..=bound);
            }
            let mut b = Array1::zeros(fan_out);
            for v in b.iter_mut() {
                *v = rng.gen_range(-bound..=bound);
            }
            layers.push(Layer { w, b, act });
        }
        Ok(Mlp { layers, version: 0 })
    }

    /// Relu hidden layers, linear output.
    pub fn feedforward<R: Rng>(
        in_dim: usize,
        hidden: &[usize],
        out_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(in_dim);
        sizes.extend_from_slice(hidden);
        sizes.push(out_dim);
        let mut acts = vec![Activation::Relu; hidden.len()];
        acts.push(Activation::Identity);
        Mlp::new(&sizes, &acts, rng)
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Rebuild from explicit layers (used by checkpoint loading and
    /// plain-policy stitching). Validates that consecutive shapes chain.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("mlp needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::shape(format!(
                    "layer chain broken: {} -> {}",
                    pair[0].out_dim(),
                    pair[1].in_dim()
                )));
            }
        }
        Ok(Mlp { layers, version: 0 })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    /// Monotone counter bumped on every parameter mutation. Tapes remember
    /// the version they were recorded at.
    pub fn version(&self) -> u64 {
        self.version
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.in_dim() {
            return Err(Error::shape(format!(
                "input width {} does not match first layer fan-in {}",
                x.ncols(),
                self.in_dim()
            )));
        }
        Ok(())
    }

    /// Batched forward pass, `x` is `batch x in_dim`.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let mut a = x.to_owned();
        for layer in &self.layers {
            let mut z = a.dot(&layer.w.t());
            z += &layer.b;
            z.mapv_inplace(|v| layer.act.apply(v));
            a = z;
        }
        Ok(a)
    }

    /// Single-sample forward pass.
    pub fn forward1(&self, x: &[f64]) -> Result<Vec<f64>> {
        let v = ArrayView2::from_shape((1, x.len()), x)
            .map_err(|e| Error::shape(format!("bad input slice: {e}")))?;
        Ok(self.forward(v)?.row(0).to_vec())
    }

    /// Single-sample forward pass that also returns the activation of the
    /// last hidden layer (the layer feeding the output layer). Used by
    /// latent probes. Errors on single-layer networks.
    pub fn forward1_hidden(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if self.layers.len() < 2 {
            return Err(Error::usage("network has no hidden layer to expose"));
        }
        let v = ArrayView2::from_shape((1, x.len()), x)
            .map_err(|e| Error::shape(format!("bad input slice: {e}")))?;
        self.check_input(&v)?;
        let mut a = v.to_owned();
        let mut hidden = None;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = a.dot(&layer.w.t());
            z += &layer.b;
            z.mapv_inplace(|val| layer.act.apply(val));
            if i + 2 == self.layers.len() {
                hidden = Some(z.row(0).to_vec());
            }
            a = z;
        }
        Ok((a.row(0).to_vec(), hidden.unwrap()))
    }

    /// Forward pass recording a tape for a later backward pass.
    pub fn forward_tape(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, Tape)> {
        self.check_input(&x)?;
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        values.push(x.to_owned());
        for layer in &self.layers {
            let mut z = values.last().unwrap().dot(&layer.w.t());
            z += &layer.b;
            z.mapv_inplace(|v| layer.act.apply(v));
            values.push(z);
        }
        let out = values.last().unwrap().clone();
        Ok((
            out,
            Tape {
                version: self.version,
                values,
            },
        ))
    }

    /// Reverse pass. `dy` is the loss gradient at the network output
    /// (`batch x out_dim`). Returns parameter gradients summed over the
    /// batch and the gradient at the network input.
    pub fn backward(&self, tape: Tape, dy: ArrayView2<f64>) -> Result<(MlpGrads, Array2<f64>)> {
        if tape.version != self.version {
            return Err(Error::StaleTape(format!(
                "tape recorded at parameter version {}, network is at {}",
                tape.version, self.version
            )));
        }
        let n = self.layers.len();
        if tape.values.len() != n + 1 {
            return Err(Error::usage("tape does not belong to this network"));
        }
        let last = &tape.values[n];
        if dy.shape() != last.shape() {
            return Err(Error::shape(format!(
                "upstream gradient shape {:?} does not match output {:?}",
                dy.shape(),
                last.shape()
            )));
        }
        let mut dw = Vec::with_capacity(n);
        let mut db = Vec::with_capacity(n);
        let mut delta = dy.to_owned();
        for i in (0..n).rev() {
            let layer = &self.layers[i];
            // push through the activation using its recorded output
            Zip::from(&mut delta)
                .and(&tape.values[i + 1])
                .for_each(|d, &a| *d *= layer.act.grad_from_output(a));
            dw.push(delta.t().dot(&tape.values[i]));
            db.push(delta.sum_axis(Axis(0)));
            delta = delta.dot(&layer.w);
        }
        dw.reverse();
        db.reverse();
        Ok((MlpGrads { dw, db }, delta))
    }

    pub fn zero_grads(&self) -> MlpGrads {
        MlpGrads {
            dw: self
                .layers
                .iter()
                .map(|l| Array2::zeros((l.out_dim(), l.in_dim())))
                .collect(),
            db: self.layers.iter().map(|l| Array1::zeros(l.out_dim())).collect(),
        }
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.out_dim() * (l.in_dim() + 1))
            .sum()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend(l.w.iter().copied());
            out.extend(l.b.iter().copied());
        }
        out
    }

    pub fn set_params_flat(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.n_params() {
            return Err(Error::shape(format!(
                "expected {} parameters, got {}",
                self.n_params(),
                p.len()
            )));
        }
        let mut off = 0;
        for l in &mut self.layers {
            for v in l.w.iter_mut() {
                *v = p[off];
                off += 1;
            }
            for v in l.b.iter_mut() {
                *v = p[off];
                off += 1;
            }
        }
        self.version += 1;
        Ok(())
    }

    /// One Adam step. Grad shapes must match; the optimizer state must have
    /// been sized for this network.
    pub fn adam_update(&mut self, grads: &MlpGrads, opt: &mut AdamState) -> Result<()> {
        let mut p = self.params_flat();
        let g = grads.flat();
        opt.update(&mut p, &g)?;
        self.set_params_flat(&p)
    }

    /// Polyak averaging toward `online`: `self = tau * online + (1 - tau) * self`.
    pub fn polyak_from(&mut self, online: &Mlp, tau: f64) -> Result<()> {
        if self.n_params() != online.n_params() {
            return Err(Error::shape("polyak source has different parameter count"));
        }
        let mut p = self.params_flat();
        let q = online.params_flat();
        for (a, b) in p.iter_mut().zip(q.iter()) {
            *a = tau * b + (1.0 - tau) * *a;
        }
        self.set_params_flat(&p)
    }

    /// Shape summary: `(in_dim, out_dim, activation)` per layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize, Activation)> {
        self.layers
            .iter()
            .map(|l| (l.in_dim(), l.out_dim(), l.act))
            .collect()
    }
}
