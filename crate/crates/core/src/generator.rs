//! Pseudo-feature generator.
//!
//! A moment-matching network: the input row is the class embedding followed by
//! a Gaussian noise vector of the same length, and the output is one feature
//! vector. It is trained two ways:
//!
//! * against real (backbone) features of a seen class with [`mmd2`](crate::kernel::mmd2);
//! * against confidence-weighted pseudo labels of an unseen class with
//!   [`zs_mmd2`](crate::kernel::zs_mmd2), the loss divided by a coefficient
//!   so the recursive signal stays weaker than the supervised one.

use crate::error::{Error, Result};
use crate::kernel::{
    mmd2_raw_with_grad, zs_mmd2_raw_with_grad, FeatureSet, KernelSpec, Origin, WeightedFeatureSet,
};
use crate::rng::{gaussian_sample, SeededRng};
use crate::scalar::Scalar;
use crate::tensor::{Activation, ForwardCache, Gradients, Matrix, Mlp, OptimizerState};

/// Fixed semantic vector of one class. Never trained.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassEmbedding<T> {
    pub class_id: usize,
    pub vector: Vec<T>,
}

impl<T: Scalar> ClassEmbedding<T> {
    pub fn new(class_id: usize, vector: Vec<T>) -> Result<Self> {
        if vector.is_empty() {
            return Err(Error::Domain(format!("class {class_id}: empty embedding")));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("embedding of class {class_id}")));
        }
        Ok(Self { class_id, vector })
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

/// Width of both hidden layers for feature dimension `feature_dim`.
pub fn hidden_width(feature_dim: usize) -> usize {
    (2 * feature_dim).max(64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorModel<T> {
    mlp: Mlp<T>,
    embed_dim: usize,
}

impl<T: Scalar> GeneratorModel<T> {
    /// `2·d_e → h → h → d_f`, leaky-ReLU hidden layers, identity output.
    pub fn new(embed_dim: usize, feature_dim: usize, rng: &mut SeededRng) -> Result<Self> {
        let h = hidden_width(feature_dim);
        let mlp = Mlp::init_uniform(
            &[2 * embed_dim, h, h, feature_dim],
            Activation::LeakyRelu,
            Activation::Identity,
            rng,
        )?;
        Ok(Self { mlp, embed_dim })
    }

    /// Wraps an existing network whose input is `embedding ∥ noise`.
    pub fn from_mlp(mlp: Mlp<T>, embed_dim: usize) -> Result<Self> {
        if mlp.input_dim() != 2 * embed_dim {
            return Err(Error::shape(
                "GeneratorModel::from_mlp",
                2 * embed_dim,
                mlp.input_dim(),
            ));
        }
        Ok(Self { mlp, embed_dim })
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn feature_dim(&self) -> usize {
        self.mlp.output_dim()
    }

    pub fn mlp(&self) -> &Mlp<T> {
        &self.mlp
    }

    pub fn mlp_mut(&mut self) -> &mut Mlp<T> {
        &mut self.mlp
    }

    fn inputs(&self, emb: &ClassEmbedding<T>, rng: &mut SeededRng, n: usize) -> Result<Matrix<T>> {
        if emb.dim() != self.embed_dim {
            return Err(Error::shape("generate", self.embed_dim, emb.dim()));
        }
        if n == 0 {
            return Err(Error::Domain("generate: count must be at least 1".into()));
        }
        let noise = gaussian_sample(rng, n, self.embed_dim);
        let mut repeated = Matrix::zeros(n, self.embed_dim);
        for r in 0..n {
            repeated.row_mut(r).copy_from_slice(&emb.vector);
        }
        repeated.hstack(&noise)
    }

    fn generate_cached(
        &self,
        emb: &ClassEmbedding<T>,
        rng: &mut SeededRng,
        n: usize,
    ) -> Result<(Matrix<T>, ForwardCache<T>)> {
        let input = self.inputs(emb, rng, n)?;
        self.mlp.forward(&input)
    }

    /// `n` pseudo features for `emb`, one fresh noise draw per row.
    pub fn generate(
        &self,
        emb: &ClassEmbedding<T>,
        rng: &mut SeededRng,
        n: usize,
    ) -> Result<FeatureSet<T>> {
        let input = self.inputs(emb, rng, n)?;
        let features = self.mlp.predict(&input)?;
        FeatureSet::new(features, emb.class_id, Origin::Generated)
    }

    /// Loss and parameter gradients of one seen-class moment-matching step,
    /// without updating the model.
    pub fn seen_gradients(
        &self,
        emb: &ClassEmbedding<T>,
        real: &FeatureSet<T>,
        rng: &mut SeededRng,
        batch: usize,
        kernel: &KernelSpec,
    ) -> Result<(T, Gradients<T>)> {
        let (generated, cache) = self.generate_cached(emb, rng, batch)?;
        let (loss, out_grad) = mmd2_raw_with_grad(&real.features, &generated, kernel)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite("seen-class MMD loss".into()));
        }
        let (grads, _) = self.mlp.backward(&cache, &out_grad)?;
        Ok((loss, grads))
    }

    /// One MMD step against real features of the embedding's class. Returns
    /// the loss measured before the update.
    pub fn train_seen(
        &mut self,
        emb: &ClassEmbedding<T>,
        real: &FeatureSet<T>,
        opt: &mut OptimizerState<T>,
        rng: &mut SeededRng,
        batch: usize,
        kernel: &KernelSpec,
    ) -> Result<T> {
        let (loss, grads) = self.seen_gradients(emb, real, rng, batch, kernel)?;
        opt.step(&mut self.mlp, &grads)?;
        Ok(loss)
    }

    /// Scaled loss `zs_mmd2 / divide_coefficient` and its parameter gradients.
    #[allow(clippy::too_many_arguments)]
    pub fn recursive_gradients(
        &self,
        emb: &ClassEmbedding<T>,
        pseudo: &WeightedFeatureSet<T>,
        rng: &mut SeededRng,
        batch: usize,
        divide_coefficient: f64,
        q_min: usize,
        kernel: &KernelSpec,
    ) -> Result<(T, Gradients<T>)> {
        if pseudo.len() < q_min {
            return Err(Error::SelectionTooSmall {
                found: pseudo.len(),
                q_min,
            });
        }
        if !(divide_coefficient.is_finite() && divide_coefficient > 0.0) {
            return Err(Error::Domain(format!(
                "divide coefficient {divide_coefficient} must be positive"
            )));
        }
        let (generated, cache) = self.generate_cached(emb, rng, batch)?;
        let (loss, mut out_grad) =
            zs_mmd2_raw_with_grad(&pseudo.features, &pseudo.weights, &generated, kernel)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite("recursive ZS-MMD loss".into()));
        }
        let inv = T::one() / T::of(divide_coefficient);
        out_grad.scale(inv);
        let (grads, _) = self.mlp.backward(&cache, &out_grad)?;
        Ok((loss * inv, grads))
    }

    /// One recursive step against weighted pseudo labels. Returns the scaled
    /// loss measured before the update.
    #[allow(clippy::too_many_arguments)]
    pub fn train_recursive(
        &mut self,
        emb: &ClassEmbedding<T>,
        pseudo: &WeightedFeatureSet<T>,
        opt: &mut OptimizerState<T>,
        rng: &mut SeededRng,
        batch: usize,
        divide_coefficient: f64,
        q_min: usize,
        kernel: &KernelSpec,
    ) -> Result<T> {
        let (loss, grads) =
            self.recursive_gradients(emb, pseudo, rng, batch, divide_coefficient, q_min, kernel)?;
        opt.step(&mut self.mlp, &grads)?;
        Ok(loss)
    }
}
