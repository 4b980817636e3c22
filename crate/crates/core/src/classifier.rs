//! Per-pixel classification layer.
//!
//! A 1×1 convolution applied to an `H × W × d_f` feature map is the same
//! linear map applied to each pixel's feature vector, so the classifier is a
//! single identity-activation dense layer over rows of flattened features.

use crate::error::{Error, Result};
use crate::loss::{softmax_cross_entropy, softmax_rows};
use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::tensor::{Activation, Dense, Matrix, Mlp, OptimizerState};

/// Softmax output for a batch of rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction<T> {
    /// Argmax class per row, ties going to the lowest class id.
    pub labels: Vec<usize>,
    /// Softmax probability at the argmax, capped at the largest float below 1.
    pub confidence: Vec<T>,
    pub probabilities: Matrix<T>,
}

impl<T> Prediction<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PixelClassifier<T> {
    mlp: Mlp<T>,
}

impl<T: Scalar> PixelClassifier<T> {
    pub fn new(feature_dim: usize, classes: usize, rng: &mut SeededRng) -> Result<Self> {
        Self::check_classes(classes)?;
        let layer = Dense::init_uniform(feature_dim, classes, Activation::Identity, rng);
        Self::from_mlp(Mlp::new(vec![layer])?)
    }

    pub fn zeros(feature_dim: usize, classes: usize) -> Result<Self> {
        Self::check_classes(classes)?;
        let layer = Dense::new(
            Matrix::zeros(feature_dim, classes),
            vec![T::zero(); classes],
            Activation::Identity,
        )?;
        Self::from_mlp(Mlp::new(vec![layer])?)
    }

    fn check_classes(classes: usize) -> Result<()> {
        if classes < 2 {
            return Err(Error::Domain(format!(
                "classifier needs ≥ 2 classes, got {classes}"
            )));
        }
        Ok(())
    }

    /// Accepts only a single identity layer.
    pub fn from_mlp(mlp: Mlp<T>) -> Result<Self> {
        match mlp.layers() {
            [layer] if layer.activation == Activation::Identity => {
                Self::check_classes(layer.out_dim())?;
                Ok(Self { mlp })
            }
            _ => Err(Error::Usage(
                "pixel classifier must be exactly one identity-activation layer".into(),
            )),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.mlp.input_dim()
    }

    pub fn classes(&self) -> usize {
        self.mlp.output_dim()
    }

    pub fn mlp(&self) -> &Mlp<T> {
        &self.mlp
    }

    pub fn mlp_mut(&mut self) -> &mut Mlp<T> {
        &mut self.mlp
    }

    pub fn logits(&self, feats: &Matrix<T>) -> Result<Matrix<T>> {
        if feats.cols() != self.feature_dim() {
            return Err(Error::shape("classify", self.feature_dim(), feats.cols()));
        }
        self.mlp.predict(feats)
    }

    pub fn classify(&self, feats: &Matrix<T>) -> Result<Prediction<T>> {
        let probabilities = softmax_rows(&self.logits(feats)?);
        let mut labels = Vec::with_capacity(probabilities.rows());
        let mut confidence = Vec::with_capacity(probabilities.rows());
        // a saturated softmax rounds to 1; the true value is always below it
        let below_one = T::one() - T::epsilon() / (T::one() + T::one());
        for row in probabilities.row_iter() {
            let (best, p) =
                row.iter()
                    .copied()
                    .enumerate()
                    .fold(
                        (0, row[0]),
                        |(bi, bp), (i, p)| if p > bp { (i, p) } else { (bi, bp) },
                    );
            labels.push(best);
            confidence.push(p.min(below_one));
        }
        Ok(Prediction {
            labels,
            confidence,
            probabilities,
        })
    }

    /// One cross-entropy step. Returns the loss before the update.
    pub fn train_step(
        &mut self,
        feats: &Matrix<T>,
        labels: &[usize],
        opt: &mut OptimizerState<T>,
    ) -> Result<T> {
        if feats.cols() != self.feature_dim() {
            return Err(Error::shape(
                "train_classifier_step",
                self.feature_dim(),
                feats.cols(),
            ));
        }
        let (logits, cache) = self.mlp.forward(feats)?;
        let (loss, grad) = softmax_cross_entropy(&logits, labels)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite("classifier loss".into()));
        }
        let (grads, _) = self.mlp.backward(&cache, &grad)?;
        opt.step(&mut self.mlp, &grads)?;
        Ok(loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::gaussian_sample;
    use crate::tensor::OptimizerConfig;

    #[test]
    fn zero_classifier_ties_to_class_zero() {
        let clf = PixelClassifier::<f64>::zeros(3, 4).unwrap();
        let p = clf.classify(&Matrix::filled(5, 3, 0.7)).unwrap();
        assert!(p.labels.iter().all(|&l| l == 0));
        assert!(p.confidence.iter().all(|&c| (c - 0.25).abs() < 1e-15));
    }

    #[test]
    fn softmax_closed_form() {
        // logits [0, 10, 0] from identity weights on a 3-d input
        let layer = Dense::new(Matrix::identity(3), vec![0.0; 3], Activation::Identity).unwrap();
        let clf = PixelClassifier::from_mlp(Mlp::new(vec![layer]).unwrap()).unwrap();
        let p = clf
            .classify(&Matrix::from_rows(&[[0.0, 10.0, 0.0]]).unwrap())
            .unwrap();
        let e10 = 10f64.exp();
        assert_eq!(p.labels, vec![1]);
        assert!((p.confidence[0] - e10 / (e10 + 2.0)).abs() < 1e-15);
        assert!((p.confidence[0] - 0.99991).abs() < 1e-5);
    }

    #[test]
    fn saturated_confidence_stays_below_one() {
        let layer = Dense::new(Matrix::identity(2), vec![0.0; 2], Activation::Identity).unwrap();
        let clf = PixelClassifier::from_mlp(Mlp::new(vec![layer]).unwrap()).unwrap();
        let p = clf
            .classify(&Matrix::from_rows(&[[0.0, 800.0]]).unwrap())
            .unwrap();
        assert_eq!(p.probabilities.get(0, 1), 1.0);
        assert_eq!(p.confidence[0], 1.0 - f64::EPSILON / 2.0);
        let layer = Dense::new(
            Matrix::<f32>::identity(2),
            vec![0.0; 2],
            Activation::Identity,
        )
        .unwrap();
        let clf = PixelClassifier::from_mlp(Mlp::new(vec![layer]).unwrap()).unwrap();
        let p = clf
            .classify(&Matrix::from_rows(&[[0.0f32, 60.0]]).unwrap())
            .unwrap();
        assert!(p.confidence[0] < 1.0);
    }

    #[test]
    fn bias_shift_leaves_softmax_unchanged() {
        let mut rng = SeededRng::new(3);
        let clf = PixelClassifier::<f64>::new(4, 5, &mut rng).unwrap();
        let x = gaussian_sample(&mut rng, 6, 4);
        let before = clf.classify(&x).unwrap();
        let mut shifted = clf.clone();
        shifted.mlp_mut().layers_mut()[0]
            .bias
            .iter_mut()
            .for_each(|b| *b += 7.5);
        let after = shifted.classify(&x).unwrap();
        assert_eq!(before.labels, after.labels);
        assert!(before.probabilities.max_abs_diff(&after.probabilities) < 1e-12);
    }

    #[test]
    fn rows_are_independent() {
        let mut rng = SeededRng::new(4);
        let clf = PixelClassifier::<f64>::new(3, 4, &mut rng).unwrap();
        let x = gaussian_sample(&mut rng, 7, 3);
        let p = clf.classify(&x).unwrap();
        let perm = [6, 2, 0, 5, 1, 3, 4];
        let q = clf.classify(&x.select_rows(&perm)).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(q.labels[k], p.labels[i]);
            assert_eq!(q.confidence[k], p.confidence[i]);
        }
        for r in 0..7 {
            assert!((p.probabilities.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_non_linear_or_deep_models() {
        let mut rng = SeededRng::new(0);
        let deep =
            Mlp::<f64>::init_uniform(&[2, 3, 2], Activation::Relu, Activation::Identity, &mut rng)
                .unwrap();
        assert!(PixelClassifier::from_mlp(deep).is_err());
        let relu = Mlp::<f64>::init_uniform(&[2, 3], Activation::Relu, Activation::Relu, &mut rng)
            .unwrap();
        assert!(PixelClassifier::from_mlp(relu).is_err());
        let clf = PixelClassifier::<f64>::zeros(2, 3).unwrap();
        assert!(matches!(
            clf.classify(&Matrix::zeros(1, 3)),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn uniform_start_loss_is_log_c() {
        let mut clf = PixelClassifier::<f64>::zeros(2, 4).unwrap();
        let mut opt = OptimizerState::new(OptimizerConfig::sgd(0.1, 0.9, 5e-4)).unwrap();
        let x = Matrix::from_rows(&[[1.0, 2.0], [0.0, -1.0]]).unwrap();
        let loss = clf.train_step(&x, &[3, 1], &mut opt).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let mut rng = SeededRng::new(5);
        let mut clf = PixelClassifier::<f64>::new(2, 3, &mut rng).unwrap();
        let before = clf.clone();
        let mut opt = OptimizerState::new(OptimizerConfig::sgd(0.0, 0.9, 0.0)).unwrap();
        clf.train_step(&Matrix::filled(4, 2, 1.0), &[0, 1, 2, 0], &mut opt)
            .unwrap();
        assert_eq!(clf, before);
    }

    #[test]
    fn separable_toy_reaches_full_accuracy() {
        let mut rng = SeededRng::new(0);
        let n = 100;
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let class = i % 2;
            let centre = if class == 0 { [-1.5, -1.0] } else { [1.5, 1.0] };
            rows.push([
                centre[0] + 0.3 * rng.standard_normal(),
                centre[1] + 0.3 * rng.standard_normal(),
            ]);
            labels.push(class);
        }
        let x = Matrix::from_rows(&rows).unwrap();
        let mut clf = PixelClassifier::<f64>::new(2, 2, &mut rng).unwrap();
        let mut opt = OptimizerState::new(OptimizerConfig::sgd(0.1, 0.9, 0.0)).unwrap();
        for _ in 0..500 {
            clf.train_step(&x, &labels, &mut opt).unwrap();
        }
        let p = clf.classify(&x).unwrap();
        assert_eq!(p.labels, labels);
    }
}
