//! Fixed-topology feed-forward network.
//!
//! Each [`Dense`] layer computes `y = act(x · W + b)` on a batch of row
//! vectors, with `W` stored `in_dim × out_dim`. The forward pass returns a
//! [`ForwardCache`] holding every layer input and pre-activation; the backward
//! pass consumes it and returns parameter gradients plus the gradient with
//! respect to the network input.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::tensor::Matrix;

/// Negative-side slope of [`Activation::LeakyRelu`].
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    LeakyRelu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Relu => z.max(T::zero()),
            Activation::LeakyRelu => {
                if z > T::zero() {
                    z
                } else {
                    z * T::of(LEAKY_SLOPE)
                }
            }
            Activation::Identity => z,
        }
    }

    /// Derivative at pre-activation `z`. The kink at 0 takes the left slope.
    #[inline]
    fn derivative<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Relu => {
                if z > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::LeakyRelu => {
                if z > T::zero() {
                    T::one()
                } else {
                    T::of(LEAKY_SLOPE)
                }
            }
            Activation::Identity => T::one(),
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::LeakyRelu => 1,
            Activation::Identity => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Relu),
            1 => Some(Activation::LeakyRelu),
            2 => Some(Activation::Identity),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    /// `in_dim × out_dim`.
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
    pub activation: Activation,
}

impl<T: Scalar> Dense<T> {
    pub fn new(weight: Matrix<T>, bias: Vec<T>, activation: Activation) -> Result<Self> {
        if bias.len() != weight.cols() {
            return Err(Error::shape("Dense::new", weight.cols(), bias.len()));
        }
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for weights and biases.
    pub fn init_uniform(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut SeededRng,
    ) -> Self {
        let limit = 1.0 / (in_dim as f64).sqrt();
        let weight = (0..in_dim * out_dim)
            .map(|_| T::of(rng.uniform(-limit, limit)))
            .collect();
        let bias = (0..out_dim)
            .map(|_| T::of(rng.uniform(-limit, limit)))
            .collect();
        Self {
            weight: Matrix::from_vec(in_dim, out_dim, weight).expect("sized by construction"),
            bias,
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }

    fn pre_activation(&self, input: &Matrix<T>) -> Matrix<T> {
        let mut z = input.matmul(&self.weight).expect("dims checked by caller");
        for r in 0..z.rows() {
            for (v, &b) in z.row_mut(r).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        z
    }
}

/// Gradient of one [`Dense`] layer, shaped like its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad<T> {
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> DenseGrad<T> {
    pub fn zeros_like(layer: &Dense<T>) -> Self {
        Self {
            weight: Matrix::zeros(layer.in_dim(), layer.out_dim()),
            bias: vec![T::zero(); layer.out_dim()],
        }
    }

    pub(crate) fn slices(&self) -> [&[T]; 2] {
        [self.weight.as_slice(), &self.bias]
    }

    pub(crate) fn slices_mut(&mut self) -> [&mut [T]; 2] {
        [self.weight.as_mut_slice(), &mut self.bias]
    }
}

/// Per-layer parameter gradients of an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<DenseGrad<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(model: &Mlp<T>) -> Self {
        Self {
            layers: model.layers.iter().map(DenseGrad::zeros_like).collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = T> + '_ {
        self.layers
            .iter()
            .flat_map(|g| g.weight.as_slice().iter().chain(&g.bias).copied())
    }

    pub fn to_flat(&self) -> Vec<T> {
        self.iter().collect()
    }

    pub fn norm(&self) -> T {
        self.iter().map(|v| v * v).sum::<T>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }

    pub fn scale(&mut self, s: T) {
        for g in &mut self.layers {
            for part in g.slices_mut() {
                part.iter_mut().for_each(|v| *v *= s);
            }
        }
    }

    /// Elementwise `self += other`. Shapes must match.
    pub fn accumulate(&mut self, other: &Self) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::shape(
                "Gradients::accumulate",
                self.layers.len(),
                other.layers.len(),
            ));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            if a.weight.shape() != b.weight.shape() || a.bias.len() != b.bias.len() {
                return Err(Error::shape(
                    "Gradients::accumulate",
                    format!("{:?}", a.weight.shape()),
                    format!("{:?}", b.weight.shape()),
                ));
            }
            for (pa, pb) in a.slices_mut().into_iter().zip(b.slices()) {
                pa.iter_mut().zip(pb).for_each(|(x, &y)| *x += y);
            }
        }
        Ok(())
    }
}

static NEXT_MODEL_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_MODEL_ID.fetch_add(1, Ordering::Relaxed)
}

/// Feed-forward network of [`Dense`] layers.
///
/// Every parameter mutation through the public API bumps an internal
/// revision; a [`ForwardCache`] remembers the revision it was produced at and
/// [`Mlp::backward`] rejects caches from another model or an older revision.
#[derive(Debug)]
pub struct Mlp<T> {
    layers: Vec<Dense<T>>,
    id: u64,
    revision: u64,
}

impl<T: Clone> Clone for Mlp<T> {
    fn clone(&self) -> Self {
        Self {
            layers: self.layers.clone(),
            id: fresh_id(),
            revision: 0,
        }
    }
}

impl<T: PartialEq> PartialEq for Mlp<T> {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

/// Activations recorded by [`Mlp::forward`].
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    model_id: u64,
    revision: u64,
    /// Input to each layer.
    inputs: Vec<Matrix<T>>,
    /// Pre-activation of each layer.
    pre: Vec<Matrix<T>>,
}

impl<T> ForwardCache<T> {
    pub fn batch_size(&self) -> usize {
        self.inputs.first().map_or(0, |m| m.rows())
    }
}

impl<T: Scalar> Mlp<T> {
    pub fn new(layers: Vec<Dense<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Usage("an MLP needs at least one layer".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::shape(
                    "Mlp::new",
                    format!("layer {} input {}", i + 1, pair[0].out_dim()),
                    pair[1].in_dim(),
                ));
            }
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weight.rows() == 0 || l.weight.cols() == 0 {
                return Err(Error::Usage(format!("layer {i} has a zero dimension")));
            }
            if !l.weight.is_finite() || l.bias.iter().any(|b| !b.is_finite()) {
                return Err(Error::NonFinite(format!("layer {i} parameters")));
            }
        }
        Ok(Self {
            layers,
            id: fresh_id(),
            revision: 0,
        })
    }

    /// Randomly initialized network with layer widths `dims[0] → … → dims[n]`.
    /// Hidden layers use `hidden`, the last layer uses `output`.
    pub fn init_uniform(
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Usage(format!("invalid layer widths {dims:?}")));
        }
        let n = dims.len() - 1;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i + 1 == n { output } else { hidden };
                Dense::init_uniform(w[0], w[1], act, rng)
            })
            .collect();
        Self::new(layers)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn layers(&self) -> &[Dense<T>] {
        &self.layers
    }

    /// Mutable access to the layers. Invalidates outstanding caches.
    pub fn layers_mut(&mut self) -> &mut [Dense<T>] {
        self.revision += 1;
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.as_slice().len() + l.bias.len())
            .sum()
    }

    /// All parameters, layer by layer, weights (row-major) then bias.
    pub fn params_flat(&self) -> Vec<T> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.as_slice().iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn set_params_flat(&mut self, params: &[T]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::shape(
                "Mlp::set_params_flat",
                self.param_count(),
                params.len(),
            ));
        }
        let mut it = params.iter();
        for l in self.layers_mut() {
            for v in l.weight.as_mut_slice().iter_mut().chain(l.bias.iter_mut()) {
                *v = *it.next().expect("length checked");
            }
        }
        Ok(())
    }

    fn check_input(&self, input: &Matrix<T>) -> Result<()> {
        if input.cols() != self.input_dim() {
            return Err(Error::shape("mlp_forward", self.input_dim(), input.cols()));
        }
        Ok(())
    }

    /// Forward pass without recording activations.
    pub fn predict(&self, input: &Matrix<T>) -> Result<Matrix<T>> {
        self.check_input(input)?;
        let mut x = input.clone();
        for l in &self.layers {
            let act = l.activation;
            x = l.pre_activation(&x).map(|z| act.apply(z));
        }
        Ok(x)
    }

    pub fn forward(&self, input: &Matrix<T>) -> Result<(Matrix<T>, ForwardCache<T>)> {
        self.check_input(input)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for l in &self.layers {
            let z = l.pre_activation(&x);
            let act = l.activation;
            let y = z.map(|v| act.apply(v));
            inputs.push(x);
            pre.push(z);
            x = y;
        }
        let cache = ForwardCache {
            model_id: self.id,
            revision: self.revision,
            inputs,
            pre,
        };
        Ok((x, cache))
    }

    /// Backpropagates `output_grad` (dLoss/dOutput, one row per input row).
    /// Returns parameter gradients and dLoss/dInput.
    pub fn backward(
        &self,
        cache: &ForwardCache<T>,
        output_grad: &Matrix<T>,
    ) -> Result<(Gradients<T>, Matrix<T>)> {
        if cache.model_id != self.id || cache.revision != self.revision {
            return Err(Error::Usage(
                "forward cache does not belong to the current model parameters".into(),
            ));
        }
        let expected = (cache.batch_size(), self.output_dim());
        if output_grad.shape() != expected {
            return Err(Error::shape(
                "mlp_backward",
                format!("{expected:?}"),
                format!("{:?}", output_grad.shape()),
            ));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = output_grad.clone();
        for (i, l) in self.layers.iter().enumerate().rev() {
            let z = &cache.pre[i];
            let act = l.activation;
            for (d, &zv) in delta.as_mut_slice().iter_mut().zip(z.as_slice()) {
                *d *= act.derivative(zv);
            }
            let weight = cache.inputs[i].matmul_tn(&delta)?;
            let bias = delta.column_sums();
            let next = delta.matmul_nt(&l.weight)?;
            grads.push(DenseGrad { weight, bias });
            delta = next;
        }
        grads.reverse();
        Ok((Gradients { layers: grads }, delta))
    }
}
