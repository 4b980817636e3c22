//! Synthetic stand-in for a frozen segmentation backbone and its dataset.
//!
//! Each class `c` has an embedding `e_c` on the unit sphere of `R^{d_e}`, and
//! its backbone features are Gaussian around `μ_c = e_c · W*`, where `W*` is a
//! random `d_e × d_f` map with orthonormal rows (orthonormal columns when
//! `d_e > d_f`). Because the class means are a linear image of the embeddings,
//! a generator that learns the map on seen classes can extrapolate to unseen
//! ones.
//!
//! "Images" are label maps built from rectangles plus a per-pixel feature map
//! drawn from those class distributions.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};
use crate::generator::ClassEmbedding;
use crate::rng::{gaussian_sample, SeededRng};
use crate::tensor::Matrix;

/// Unseen-class candidates, in the order they are withheld.
pub const UNSEEN_CANDIDATES: [&str; 10] = [
    "cow",
    "motorbike",
    "airplane",
    "sofa",
    "cat",
    "tv",
    "train",
    "bottle",
    "chair",
    "potted-plant",
];

/// Further object names, used to name larger synthetic tasks.
const OTHER_CLASSES: [&str; 10] = [
    "bicycle",
    "bird",
    "boat",
    "bus",
    "car",
    "dining-table",
    "dog",
    "horse",
    "person",
    "sheep",
];

/// `background`, then the unseen candidates, then the other object names, then
/// `class{i}` for anything beyond 21.
pub fn default_class_names(classes: usize) -> Vec<String> {
    std::iter::once("background")
        .chain(UNSEEN_CANDIDATES)
        .chain(OTHER_CLASSES)
        .map(str::to_owned)
        .chain((21..).map(|i| format!("class{i}")))
        .take(classes)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    class_names: Vec<String>,
    embeddings: Vec<ClassEmbedding<f64>>,
    /// `d_e × d_f`.
    map: Matrix<f64>,
    means: Matrix<f64>,
    noise_scale: Vec<f64>,
    seed: u64,
}

fn orthonormalize_rows(m: &mut Matrix<f64>) -> Result<()> {
    for i in 0..m.rows() {
        for j in 0..i {
            let dot: f64 = m.row(i).iter().zip(m.row(j)).map(|(a, b)| a * b).sum();
            let prev = m.row(j).to_vec();
            m.row_mut(i)
                .iter_mut()
                .zip(&prev)
                .for_each(|(a, b)| *a -= dot * b);
        }
        let norm = m.row(i).iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm < 1e-10 {
            return Err(Error::Domain("degenerate random map".into()));
        }
        m.row_mut(i).iter_mut().for_each(|a| *a /= norm);
    }
    Ok(())
}

/// Random `rows × cols` matrix whose shorter side is orthonormal.
fn random_orthonormal(rows: usize, cols: usize, rng: &mut SeededRng) -> Result<Matrix<f64>> {
    if rows <= cols {
        let mut m = gaussian_sample(rng, rows, cols);
        orthonormalize_rows(&mut m)?;
        Ok(m)
    } else {
        let mut m = gaussian_sample(rng, cols, rows);
        orthonormalize_rows(&mut m)?;
        Ok(m.transpose())
    }
}

fn unit_sphere(rng: &mut SeededRng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.standard_normal()).collect();
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|a| a / norm).collect();
        }
    }
}

impl SyntheticTask {
    /// Task with `classes` classes, embeddings drawn on the unit sphere.
    pub fn new(
        classes: usize,
        embed_dim: usize,
        feature_dim: usize,
        noise_scale: f64,
        seed: u64,
    ) -> Result<Self> {
        if classes < 2 {
            return Err(Error::Domain(format!(
                "need at least 2 classes, got {classes}"
            )));
        }
        if embed_dim == 0 {
            return Err(Error::Domain("embedding dimension must be positive".into()));
        }
        let mut rng = SeededRng::new(seed).fork(0);
        let embeddings = (0..classes)
            .map(|c| ClassEmbedding::new(c, unit_sphere(&mut rng, embed_dim)))
            .collect::<Result<Vec<_>>>()?;
        Self::with_embeddings(
            default_class_names(classes),
            embeddings,
            feature_dim,
            noise_scale,
            seed,
        )
    }

    /// Task over externally supplied embeddings (e.g. loaded word vectors).
    /// `embeddings[i]` must carry class id `i`.
    pub fn with_embeddings(
        class_names: Vec<String>,
        embeddings: Vec<ClassEmbedding<f64>>,
        feature_dim: usize,
        noise_scale: f64,
        seed: u64,
    ) -> Result<Self> {
        let classes = embeddings.len();
        if classes < 2 {
            return Err(Error::Domain(format!(
                "need at least 2 classes, got {classes}"
            )));
        }
        if class_names.len() != classes {
            return Err(Error::shape("SyntheticTask", classes, class_names.len()));
        }
        if feature_dim == 0 {
            return Err(Error::Domain("feature dimension must be positive".into()));
        }
        if !(noise_scale.is_finite() && noise_scale >= 0.0) {
            return Err(Error::Domain(format!(
                "noise scale {noise_scale} must be ≥ 0"
            )));
        }
        let embed_dim = embeddings[0].dim();
        for (i, e) in embeddings.iter().enumerate() {
            if e.class_id != i {
                return Err(Error::Usage(format!(
                    "embedding {i} carries class id {}",
                    e.class_id
                )));
            }
            if e.dim() != embed_dim {
                return Err(Error::shape("SyntheticTask embeddings", embed_dim, e.dim()));
            }
        }
        let mut rng = SeededRng::new(seed).fork(1);
        let map = random_orthonormal(embed_dim, feature_dim, &mut rng)?;
        let emb_rows: Vec<&[f64]> = embeddings.iter().map(|e| e.vector.as_slice()).collect();
        let means = Matrix::from_rows(&emb_rows)?.matmul(&map)?;
        Ok(Self {
            class_names,
            embeddings,
            map,
            means,
            noise_scale: vec![noise_scale; classes],
            seed,
        })
    }

    pub fn classes(&self) -> usize {
        self.embeddings.len()
    }

    pub fn embed_dim(&self) -> usize {
        self.map.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.map.cols()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn embedding(&self, class: usize) -> &ClassEmbedding<f64> {
        &self.embeddings[class]
    }

    pub fn embeddings(&self) -> &[ClassEmbedding<f64>] {
        &self.embeddings
    }

    pub fn map(&self) -> &Matrix<f64> {
        &self.map
    }

    /// `μ_c = e_c · W*`.
    pub fn class_mean(&self, class: usize) -> &[f64] {
        self.means.row(class)
    }

    pub fn noise_scale(&self, class: usize) -> f64 {
        self.noise_scale[class]
    }

    /// `n` backbone features of `class`.
    pub fn sample_features(
        &self,
        class: usize,
        n: usize,
        rng: &mut SeededRng,
    ) -> Result<Matrix<f64>> {
        if class >= self.classes() {
            return Err(Error::LabelOutOfRange {
                label: class,
                classes: self.classes(),
            });
        }
        let mut out = Matrix::zeros(n, self.feature_dim());
        let (mean, s) = (self.class_mean(class), self.noise_scale[class]);
        for r in 0..n {
            for (v, &mu) in out.row_mut(r).iter_mut().zip(mean) {
                *v = mu + s * rng.standard_normal();
            }
        }
        Ok(out)
    }

    /// Label map with one region per listed class and matching features.
    ///
    /// The first class fills the canvas (it plays the image background). Each
    /// further class gets one random rectangle inside its own horizontal
    /// band, so regions never overlap and their areas are exact.
    pub fn sample_image(
        &self,
        height: usize,
        width: usize,
        classes_present: &[usize],
        rng: &mut SeededRng,
    ) -> Result<LabeledFeatureImage> {
        let Some((&base, rest)) = classes_present.split_first() else {
            return Err(Error::Domain("sample_image: empty class list".into()));
        };
        if height == 0 || width == 0 {
            return Err(Error::Domain("sample_image: zero-sized image".into()));
        }
        let mut seen = HashSet::new();
        for &c in classes_present {
            if c >= self.classes() {
                return Err(Error::LabelOutOfRange {
                    label: c,
                    classes: self.classes(),
                });
            }
            if !seen.insert(c) {
                return Err(Error::Domain(format!(
                    "sample_image: class {c} listed twice"
                )));
            }
        }
        if rest.len() > height {
            return Err(Error::Domain(format!(
                "sample_image: {} foreground regions do not fit in {height} rows",
                rest.len()
            )));
        }

        let mut labels = vec![base; height * width];
        let mut regions = Vec::with_capacity(classes_present.len());
        let mut fg_area = 0;
        for (b, &class) in rest.iter().enumerate() {
            let top = b * height / rest.len();
            let bottom = (b + 1) * height / rest.len();
            let (r0, r1) = random_span(rng, top, bottom);
            let (c0, c1) = random_span(rng, 0, width);
            for r in r0..r1 {
                labels[r * width + c0..r * width + c1].fill(class);
            }
            let area = (r1 - r0) * (c1 - c0);
            fg_area += area;
            regions.push(Region {
                class,
                rows: r0..r1,
                cols: c0..c1,
                area,
            });
        }
        regions.insert(
            0,
            Region {
                class: base,
                rows: 0..height,
                cols: 0..width,
                area: height * width - fg_area,
            },
        );

        let mut features = Matrix::zeros(height * width, self.feature_dim());
        for (p, &class) in labels.iter().enumerate() {
            let (mean, s) = (self.class_mean(class), self.noise_scale[class]);
            for (v, &mu) in features.row_mut(p).iter_mut().zip(mean) {
                *v = mu + s * rng.standard_normal();
            }
        }
        Ok(LabeledFeatureImage {
            height,
            width,
            labels,
            features,
            regions,
        })
    }
}

/// Non-empty sub-range of `[lo, hi)`.
fn random_span(rng: &mut SeededRng, lo: usize, hi: usize) -> (usize, usize) {
    let len = hi - lo;
    let a = lo + rng.below(len);
    let b = lo + rng.below(len);
    (a.min(b), a.max(b) + 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub class: usize,
    pub rows: std::ops::Range<usize>,
    pub cols: std::ops::Range<usize>,
    /// Pixels actually labelled with `class`.
    pub area: usize,
}

/// Row-major label map and the matching `H·W × d_f` feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFeatureImage {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<usize>,
    pub features: Matrix<f64>,
    pub regions: Vec<Region>,
}

impl LabeledFeatureImage {
    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    /// Distinct classes in ascending order, ignore label excluded.
    pub fn classes(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .labels
            .iter()
            .copied()
            .filter(|&l| l != crate::metrics::IGNORE_LABEL)
            .collect::<HashSet<_>>()
            .into_iter()
            .collect();
        v.sort_unstable();
        v
    }

    /// Feature rows of every pixel labelled `class`.
    pub fn features_of(&self, class: usize) -> Matrix<f64> {
        let idx: Vec<usize> = self
            .labels
            .iter()
            .enumerate()
            .filter_map(|(i, &l)| (l == class).then_some(i))
            .collect();
        self.features.select_rows(&idx)
    }
}

/// Seen/unseen partition as sorted class ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassSplit {
    pub seen: Vec<usize>,
    pub unseen: Vec<usize>,
}

impl ClassSplit {
    pub fn is_unseen(&self, class: usize) -> bool {
        self.unseen.binary_search(&class).is_ok()
    }
}

/// Withholds the first `k` of [`UNSEEN_CANDIDATES`].
pub fn split_seen_unseen(class_names: &[String], k: usize) -> Result<ClassSplit> {
    split_with_candidates(class_names, &UNSEEN_CANDIDATES, k)
}

/// Withholds the first `k` candidates; every other class is seen.
pub fn split_with_candidates(
    class_names: &[String],
    candidates: &[&str],
    k: usize,
) -> Result<ClassSplit> {
    if k > candidates.len() {
        return Err(Error::Domain(format!(
            "K = {k} exceeds the {} unseen candidates",
            candidates.len()
        )));
    }
    let mut unseen = Vec::with_capacity(k);
    for name in &candidates[..k] {
        match class_names.iter().position(|n| n == name) {
            Some(id) => unseen.push(id),
            None => {
                return Err(Error::Domain(format!(
                    "unseen candidate `{name}` is not among the task's classes"
                )))
            }
        }
    }
    unseen.sort_unstable();
    let seen = (0..class_names.len())
        .filter(|c| unseen.binary_search(c).is_err())
        .collect();
    Ok(ClassSplit { seen, unseen })
}

/// Whitespace-separated text vectors: `token v1 … v_d` per line, blank lines
/// ignored. A leading `count dim` header line is skipped.
pub fn parse_embeddings<R: BufRead>(
    reader: R,
    class_names: &[String],
) -> Result<Vec<ClassEmbedding<f64>>> {
    let wanted: HashMap<&str, usize> = class_names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();
    let mut found: Vec<Option<Vec<f64>>> = vec![None; class_names.len()];
    let mut dim: Option<usize> = None;
    let mut first_content = true;

    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::Malformed {
            line: lineno,
            msg: e.to_string(),
        })?;
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else { continue };
        let rest: Vec<&str> = fields.collect();

        if std::mem::take(&mut first_content)
            && rest.len() == 1
            && token.parse::<usize>().is_ok()
            && rest[0].parse::<usize>().is_ok()
        {
            continue;
        }
        if rest.is_empty() {
            return Err(Error::Malformed {
                line: lineno,
                msg: format!("token `{token}` has no vector"),
            });
        }
        let values = rest
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Malformed {
                        line: lineno,
                        msg: format!("`{s}` is not a finite number"),
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(Error::InconsistentDimension {
                    line: lineno,
                    expected: d,
                    found: values.len(),
                })
            }
            Some(_) => {}
        }
        if let Some(&id) = wanted.get(token) {
            found[id].get_or_insert(values);
        }
    }

    let missing: Vec<String> = class_names
        .iter()
        .zip(&found)
        .filter(|(_, f)| f.is_none())
        .map(|(n, _)| n.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingTokens(missing));
    }
    found
        .into_iter()
        .enumerate()
        .map(|(id, v)| ClassEmbedding::new(id, v.expect("checked above")))
        .collect()
}

pub fn load_embeddings(path: &Path, class_names: &[String]) -> Result<Vec<ClassEmbedding<f64>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(BufReader::new(file), class_names)
}
