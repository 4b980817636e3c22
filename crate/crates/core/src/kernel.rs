//! Gaussian-mixture kernels and the moment-matching losses built on them.
//!
//! The kernel is an unnormalized sum of RBF terms,
//! `k(u, v) = Σ_b exp(-‖u − v‖² / (2σ_b²))`, so `k(u, u)` equals the number of
//! bandwidths. Both estimators are biased V-statistics: the diagonal `i = i′`
//! terms are kept, which makes each value the squared RKHS distance between
//! two (weighted) mean embeddings and therefore never negative beyond
//! rounding.
//!
//! * [`mmd2`] compares two unweighted sets.
//! * [`zs_mmd2`] compares a confidence-weighted pseudo-label set `A` (weights
//!   `c_i`) with a generated set `B`. The weighted terms are normalized by
//!   `Σ c_i`, so rescaling every weight leaves the value unchanged.
//!
//! Gradients are taken with respect to the second (generated) set only; the
//! reference set and its weights are constants.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

/// Default RBF bandwidths.
pub const DEFAULT_BANDWIDTHS: [f64; 6] = [2.0, 5.0, 10.0, 20.0, 40.0, 80.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelSpecRepr", into = "KernelSpecRepr")]
pub struct KernelSpec {
    bandwidths: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KernelSpecRepr {
    bandwidths: Vec<f64>,
}

impl TryFrom<KernelSpecRepr> for KernelSpec {
    type Error = Error;

    fn try_from(r: KernelSpecRepr) -> Result<Self> {
        KernelSpec::new(r.bandwidths)
    }
}

impl From<KernelSpec> for KernelSpecRepr {
    fn from(k: KernelSpec) -> Self {
        Self {
            bandwidths: k.bandwidths,
        }
    }
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self {
            bandwidths: DEFAULT_BANDWIDTHS.to_vec(),
        }
    }
}

impl KernelSpec {
    pub fn new(bandwidths: Vec<f64>) -> Result<Self> {
        if bandwidths.is_empty() {
            return Err(Error::Domain("kernel needs at least one bandwidth".into()));
        }
        if let Some(bad) = bandwidths.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::Domain(format!("bandwidth {bad} is not positive")));
        }
        Ok(Self { bandwidths })
    }

    pub fn bandwidths(&self) -> &[f64] {
        &self.bandwidths
    }

    pub fn len(&self) -> usize {
        self.bandwidths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bandwidths.is_empty()
    }

    fn gammas<T: Scalar>(&self) -> Vec<T> {
        self.bandwidths
            .iter()
            .map(|s| T::of(1.0 / (2.0 * s * s)))
            .collect()
    }
}

/// Precomputed `1 / (2σ²)` per bandwidth.
struct Gram<T> {
    gammas: Vec<T>,
}

impl<T: Scalar> Gram<T> {
    fn new(spec: &KernelSpec) -> Self {
        Self {
            gammas: spec.gammas(),
        }
    }

    #[inline]
    fn k(&self, u: &[T], v: &[T]) -> T {
        let d2 = sq_dist(u, v);
        self.gammas.iter().map(|&g| (-g * d2).exp()).sum()
    }

    /// `(k(u, v), s)` with `∇_v k(u, v) = s · (u − v)`.
    #[inline]
    fn k_and_slope(&self, u: &[T], v: &[T]) -> (T, T) {
        let d2 = sq_dist(u, v);
        let two = T::of(2.0);
        self.gammas
            .iter()
            .fold((T::zero(), T::zero()), |(k, s), &g| {
                let e = (-g * d2).exp();
                (k + e, s + two * g * e)
            })
    }
}

#[inline]
fn sq_dist<T: Scalar>(u: &[T], v: &[T]) -> T {
    u.iter()
        .zip(v)
        .map(|(&a, &b)| {
            let d = a - b;
            d * d
        })
        .sum()
}

pub fn kernel_eval<T: Scalar>(spec: &KernelSpec, u: &[T], v: &[T]) -> Result<T> {
    if u.len() != v.len() {
        return Err(Error::shape("kernel_eval", u.len(), v.len()));
    }
    Ok(Gram::new(spec).k(u, v))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Backbone,
    Generated,
}

/// Unweighted feature vectors of one class.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet<T> {
    pub features: Matrix<T>,
    pub class_id: usize,
    pub origin: Origin,
}

impl<T: Scalar> FeatureSet<T> {
    pub fn new(features: Matrix<T>, class_id: usize, origin: Origin) -> Result<Self> {
        if features.rows() == 0 {
            return Err(Error::Domain("feature set is empty".into()));
        }
        if !features.is_finite() {
            return Err(Error::NonFinite("feature set".into()));
        }
        Ok(Self {
            features,
            class_id,
            origin,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }
}

/// High-confidence pseudo features with their confidences `c_i ∈ (0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedFeatureSet<T> {
    pub features: Matrix<T>,
    pub weights: Vec<T>,
    pub class_id: usize,
}

impl<T: Scalar> WeightedFeatureSet<T> {
    /// Validated constructor. An empty set is allowed here (it is how the
    /// selector signals "nothing passed"); the losses reject it.
    pub fn new(features: Matrix<T>, weights: Vec<T>, class_id: usize) -> Result<Self> {
        if weights.len() != features.rows() {
            return Err(Error::shape(
                "WeightedFeatureSet::new",
                features.rows(),
                weights.len(),
            ));
        }
        if let Some(w) = weights
            .iter()
            .find(|w| !(w.is_finite() && **w > T::zero() && **w <= T::one()))
        {
            return Err(Error::Domain(format!(
                "confidence weight {w} outside (0, 1]"
            )));
        }
        if !features.is_finite() {
            return Err(Error::NonFinite("weighted feature set".into()));
        }
        Ok(Self {
            features,
            weights,
            class_id,
        })
    }

    /// Number of selected vectors (`Q`).
    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }

    /// Same vectors with every weight replaced by 1.
    pub fn equal_weighted(&self) -> Self {
        Self {
            features: self.features.clone(),
            weights: vec![T::one(); self.weights.len()],
            class_id: self.class_id,
        }
    }
}

fn check_pair<T: Scalar>(op: &'static str, a: &Matrix<T>, b: &Matrix<T>) -> Result<()> {
    if a.rows() == 0 || b.rows() == 0 {
        return Err(Error::Domain(format!("{op}: empty sample set")));
    }
    if a.cols() != b.cols() {
        return Err(Error::shape(op, a.cols(), b.cols()));
    }
    Ok(())
}

fn check_weights<T: Scalar>(op: &'static str, a: &Matrix<T>, c: &[T]) -> Result<T> {
    if c.len() != a.rows() {
        return Err(Error::shape(op, a.rows(), c.len()));
    }
    if c.iter().any(|w| !w.is_finite() || *w < T::zero()) {
        return Err(Error::Domain(format!(
            "{op}: weights must be finite and non-negative"
        )));
    }
    let total: T = c.iter().copied().sum();
    if total <= T::zero() {
        return Err(Error::Domain(format!("{op}: weights sum to zero")));
    }
    Ok(total)
}

fn self_sum<T: Scalar>(gram: &Gram<T>, m: &Matrix<T>) -> T {
    let mut acc = T::zero();
    for i in 0..m.rows() {
        for j in 0..m.rows() {
            acc += gram.k(m.row(i), m.row(j));
        }
    }
    acc
}

/// Biased MMD² between the rows of `x` and the rows of `y`.
pub fn mmd2_raw<T: Scalar>(x: &Matrix<T>, y: &Matrix<T>, spec: &KernelSpec) -> Result<T> {
    check_pair("mmd2", x, y)?;
    let gram = Gram::new(spec);
    let n = T::of_usize(x.rows());
    let m = T::of_usize(y.rows());
    let xx = self_sum(&gram, x);
    let yy = self_sum(&gram, y);
    let mut xy = T::zero();
    for i in 0..x.rows() {
        for j in 0..y.rows() {
            xy += gram.k(x.row(i), y.row(j));
        }
    }
    Ok(xx / (n * n) - T::of(2.0) * xy / (n * m) + yy / (m * m))
}

/// Confidence-weighted MMD² of rows `a` (weights `c`) against rows `b`.
///
/// `c` may hold any non-negative weights with a positive sum; the typed
/// wrapper [`zs_mmd2`] additionally guarantees `c_i ∈ (0, 1]`.
pub fn zs_mmd2_raw<T: Scalar>(
    a: &Matrix<T>,
    c: &[T],
    b: &Matrix<T>,
    spec: &KernelSpec,
) -> Result<T> {
    check_pair("zs_mmd2", a, b)?;
    let total = check_weights("zs_mmd2", a, c)?;
    let gram = Gram::new(spec);
    let p = T::of_usize(b.rows());

    let mut aa = T::zero();
    for i in 0..a.rows() {
        for j in 0..a.rows() {
            aa += c[i] * c[j] * gram.k(a.row(i), a.row(j));
        }
    }
    let mut ab = T::zero();
    for (&ci, ai) in c.iter().zip(a.row_iter()) {
        for bj in b.row_iter() {
            ab += ci * gram.k(ai, bj);
        }
    }
    let bb = self_sum(&gram, b);
    Ok(aa / (total * total) - T::of(2.0) * ab / (p * total) + bb / (p * p))
}

/// Value and gradient (w.r.t. `b`) of [`zs_mmd2_raw`].
pub fn zs_mmd2_raw_with_grad<T: Scalar>(
    a: &Matrix<T>,
    c: &[T],
    b: &Matrix<T>,
    spec: &KernelSpec,
) -> Result<(T, Matrix<T>)> {
    check_pair("zs_mmd2_grad", a, b)?;
    let total = check_weights("zs_mmd2_grad", a, c)?;
    let gram = Gram::new(spec);
    let p = T::of_usize(b.rows());
    let d = b.cols();
    let two = T::of(2.0);

    let mut aa = T::zero();
    for i in 0..a.rows() {
        for j in 0..a.rows() {
            aa += c[i] * c[j] * gram.k(a.row(i), a.row(j));
        }
    }

    let mut grad = Matrix::zeros(b.rows(), d);
    let cross_scale = -two / (p * total);
    let self_scale = two / (p * p);
    let mut ab = T::zero();
    let mut bb = T::zero();
    let mut acc = vec![T::zero(); d];
    for j in 0..b.rows() {
        let bj = b.row(j);
        acc.iter_mut().for_each(|v| *v = T::zero());
        for (&ci, ai) in c.iter().zip(a.row_iter()) {
            let (k, s) = gram.k_and_slope(ai, bj);
            ab += ci * k;
            let w = cross_scale * ci * s;
            for ((g, &x), &y) in acc.iter_mut().zip(ai).zip(bj) {
                *g += w * (x - y);
            }
        }
        for jj in 0..b.rows() {
            let bjj = b.row(jj);
            let (k, s) = gram.k_and_slope(bjj, bj);
            bb += k;
            let w = self_scale * s;
            for ((g, &x), &y) in acc.iter_mut().zip(bjj).zip(bj) {
                *g += w * (x - y);
            }
        }
        grad.row_mut(j).copy_from_slice(&acc);
    }
    let value = aa / (total * total) - two * ab / (p * total) + bb / (p * p);
    Ok((value, grad))
}

/// Value and gradient (w.r.t. `y`) of [`mmd2_raw`].
pub fn mmd2_raw_with_grad<T: Scalar>(
    x: &Matrix<T>,
    y: &Matrix<T>,
    spec: &KernelSpec,
) -> Result<(T, Matrix<T>)> {
    check_pair("mmd2_grad", x, y)?;
    let gram = Gram::new(spec);
    let n = T::of_usize(x.rows());
    let m = T::of_usize(y.rows());
    let d = y.cols();
    let two = T::of(2.0);

    let xx = self_sum(&gram, x);
    let mut xy = T::zero();
    let mut yy = T::zero();
    let mut grad = Matrix::zeros(y.rows(), d);
    let cross_scale = -two / (n * m);
    let self_scale = two / (m * m);
    let mut acc = vec![T::zero(); d];
    for j in 0..y.rows() {
        let yj = y.row(j);
        acc.iter_mut().for_each(|v| *v = T::zero());
        for i in 0..x.rows() {
            let xi = x.row(i);
            let (k, s) = gram.k_and_slope(xi, yj);
            xy += k;
            let w = cross_scale * s;
            for ((g, &u), &v) in acc.iter_mut().zip(xi).zip(yj) {
                *g += w * (u - v);
            }
        }
        for jj in 0..y.rows() {
            let yjj = y.row(jj);
            let (k, s) = gram.k_and_slope(yjj, yj);
            yy += k;
            let w = self_scale * s;
            for ((g, &u), &v) in acc.iter_mut().zip(yjj).zip(yj) {
                *g += w * (u - v);
            }
        }
        grad.row_mut(j).copy_from_slice(&acc);
    }
    let value = xx / (n * n) - two * xy / (n * m) + yy / (m * m);
    Ok((value, grad))
}

pub fn mmd2<T: Scalar>(x: &FeatureSet<T>, y: &FeatureSet<T>, spec: &KernelSpec) -> Result<T> {
    mmd2_raw(&x.features, &y.features, spec)
}

/// Gradient of [`mmd2`] with respect to `y.features`.
pub fn mmd2_grad<T: Scalar>(
    x: &FeatureSet<T>,
    y: &FeatureSet<T>,
    spec: &KernelSpec,
) -> Result<Matrix<T>> {
    mmd2_raw_with_grad(&x.features, &y.features, spec).map(|(_, g)| g)
}

pub fn zs_mmd2<T: Scalar>(
    a: &WeightedFeatureSet<T>,
    b: &FeatureSet<T>,
    spec: &KernelSpec,
) -> Result<T> {
    zs_mmd2_raw(&a.features, &a.weights, &b.features, spec)
}

/// Gradient of [`zs_mmd2`] with respect to `b.features`; `a` and its weights
/// are held constant.
pub fn zs_mmd2_grad<T: Scalar>(
    a: &WeightedFeatureSet<T>,
    b: &FeatureSet<T>,
    spec: &KernelSpec,
) -> Result<Matrix<T>> {
    zs_mmd2_raw_with_grad(&a.features, &a.weights, &b.features, spec).map(|(_, g)| g)
}
