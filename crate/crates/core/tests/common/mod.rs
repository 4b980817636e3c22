#![allow(dead_code)]

use zsmmd::kernel::{mmd2_raw, mmd2_raw_with_grad, zs_mmd2_raw, zs_mmd2_raw_with_grad, KernelSpec};
use zsmmd::loss::softmax_cross_entropy;
use zsmmd::rng::SeededRng;
use zsmmd::tensor::{Activation, Matrix, Mlp};

/// `(table, K, model, seen mIoU, unseen mIoU, printed hIoU)` for every row of
/// the three reference result tables.
pub const HIOU_TABLE: [(&str, usize, &str, f64, f64, f64); 30] = [
    ("table-a", 2, "baseline", 72.0, 35.4, 47.5),
    ("table-a", 2, "proposed", 71.6, 37.5, 49.2),
    ("table-a", 4, "baseline", 66.4, 23.2, 34.4),
    ("table-a", 4, "proposed", 68.9, 27.0, 38.8),
    ("table-a", 6, "baseline", 47.3, 24.2, 32.0),
    ("table-a", 6, "proposed", 51.1, 25.5, 33.6),
    ("table-a", 8, "baseline", 29.2, 22.9, 25.7),
    ("table-a", 8, "proposed", 32.3, 25.2, 28.3),
    ("table-a", 10, "baseline", 33.9, 18.1, 23.6),
    ("table-a", 10, "proposed", 34.4, 23.9, 28.2),
    ("table-b", 2, "baseline", 41.6, 21.6, 28.4),
    ("table-b", 2, "proposed", 41.3, 21.2, 28.0),
    ("table-b", 4, "baseline", 37.2, 24.9, 29.8),
    ("table-b", 4, "proposed", 38.7, 25.9, 31.0),
    ("table-b", 6, "baseline", 32.1, 20.7, 25.2),
    ("table-b", 6, "proposed", 35.9, 21.5, 26.9),
    ("table-b", 8, "baseline", 20.9, 16.0, 18.1),
    ("table-b", 8, "proposed", 24.2, 15.9, 19.2),
    ("table-b", 10, "baseline", 20.8, 12.7, 15.8),
    ("table-b", 10, "proposed", 22.6, 12.8, 16.3),
    ("table-c", 2, "Equal Weight", 71.1, 32.0, 44.1),
    ("table-c", 2, "Final", 71.6, 37.5, 49.2),
    ("table-c", 4, "Equal Weight", 66.9, 22.0, 33.1),
    ("table-c", 4, "Final", 68.9, 27.0, 38.8),
    ("table-c", 6, "Equal Weight", 47.3, 23.8, 31.7),
    ("table-c", 6, "Final", 51.1, 25.5, 33.6),
    ("table-c", 8, "Equal Weight", 41.2, 24.9, 31.0),
    ("table-c", 8, "Final", 32.3, 25.2, 28.3),
    ("table-c", 10, "Equal Weight", 45.5, 21.2, 28.9),
    ("table-c", 10, "Final", 34.4, 23.9, 28.2),
];

pub const FD_STEP: f64 = 1e-5;

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// `‖a − n‖ / max(‖a‖, ‖n‖)`, with a floor for all-zero gradients.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    norm(&diff) / norm(analytic).max(norm(numeric)).max(1e-10)
}

pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn random_matrix(rng: &mut SeededRng, rows: usize, cols: usize, scale: f64) -> Matrix<f64> {
    let data = (0..rows * cols)
        .map(|_| scale * rng.standard_normal())
        .collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

pub fn random_kernel(rng: &mut SeededRng) -> KernelSpec {
    let n = 1 + rng.below(4);
    KernelSpec::new((0..n).map(|_| rng.uniform(0.5, 5.0)).collect()).unwrap()
}

/// Relative error of `mmd2_grad` (w.r.t. the generated set) on a random
/// instance with N, M ≤ 8 and d ≤ 4.
pub fn mmd_grad_instance(rng: &mut SeededRng) -> f64 {
    let d = 1 + rng.below(4);
    let (n, m) = (1 + rng.below(8), 1 + rng.below(8));
    let x = random_matrix(rng, n, d, 1.0);
    let y = random_matrix(rng, m, d, 1.0);
    let spec = random_kernel(rng);
    let (_, g) = mmd2_raw_with_grad(&x, &y, &spec).unwrap();
    let numeric = central_diff(
        |p| {
            mmd2_raw(
                &x,
                &Matrix::from_vec(y.rows(), d, p.to_vec()).unwrap(),
                &spec,
            )
            .unwrap()
        },
        y.as_slice(),
        FD_STEP,
    );
    rel_err(g.as_slice(), &numeric)
}

pub fn random_weights(rng: &mut SeededRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.uniform(0.05, 1.0)).collect()
}

pub fn zs_grad_instance(rng: &mut SeededRng) -> f64 {
    let d = 1 + rng.below(4);
    let (q, p) = (1 + rng.below(8), 1 + rng.below(8));
    let a = random_matrix(rng, q, d, 1.0);
    let c = random_weights(rng, q);
    let b = random_matrix(rng, p, d, 1.0);
    let spec = random_kernel(rng);
    let (_, g) = zs_mmd2_raw_with_grad(&a, &c, &b, &spec).unwrap();
    let numeric = central_diff(
        |p| {
            zs_mmd2_raw(
                &a,
                &c,
                &Matrix::from_vec(b.rows(), d, p.to_vec()).unwrap(),
                &spec,
            )
            .unwrap()
        },
        b.as_slice(),
        FD_STEP,
    );
    rel_err(g.as_slice(), &numeric)
}

/// Random MLP with the given widths. Hidden layers use leaky ReLU.
pub fn random_mlp(rng: &mut SeededRng, dims: &[usize]) -> Mlp<f64> {
    Mlp::init_uniform(dims, Activation::LeakyRelu, Activation::Identity, rng).unwrap()
}

/// `L = Σ out ⊙ R` for a fixed random `R`. Returns the relative errors of the
/// parameter gradient and of the input gradient.
pub fn mlp_grad_instance(rng: &mut SeededRng, dims: &[usize], batch: usize) -> (f64, f64) {
    let mlp = random_mlp(rng, dims);
    let x = random_matrix(rng, batch, dims[0], 1.0);
    let r = random_matrix(rng, batch, *dims.last().unwrap(), 1.0);
    let dot = |m: &Matrix<f64>| {
        m.as_slice()
            .iter()
            .zip(r.as_slice())
            .map(|(a, b)| a * b)
            .sum::<f64>()
    };
    let (_, cache) = mlp.forward(&x).unwrap();
    let (grads, input_grad) = mlp.backward(&cache, &r).unwrap();

    let params = mlp.params_flat();
    let param_numeric = central_diff(
        |p| {
            let mut m = mlp.clone();
            m.set_params_flat(p).unwrap();
            dot(&m.predict(&x).unwrap())
        },
        &params,
        FD_STEP,
    );
    let input_numeric = central_diff(
        |p| {
            dot(&mlp
                .predict(&Matrix::from_vec(batch, dims[0], p.to_vec()).unwrap())
                .unwrap())
        },
        x.as_slice(),
        FD_STEP,
    );
    (
        rel_err(&grads.to_flat(), &param_numeric),
        rel_err(input_grad.as_slice(), &input_numeric),
    )
}

pub fn ce_grad_instance(rng: &mut SeededRng) -> f64 {
    let n = 1 + rng.below(8);
    let classes = 2 + rng.below(6);
    let logits = random_matrix(rng, n, classes, 2.0);
    let labels: Vec<usize> = (0..n).map(|_| rng.below(classes)).collect();
    let (_, g) = softmax_cross_entropy(&logits, &labels).unwrap();
    let numeric = central_diff(
        |p| {
            softmax_cross_entropy(&Matrix::from_vec(n, classes, p.to_vec()).unwrap(), &labels)
                .unwrap()
                .0
        },
        logits.as_slice(),
        FD_STEP,
    );
    rel_err(g.as_slice(), &numeric)
}
