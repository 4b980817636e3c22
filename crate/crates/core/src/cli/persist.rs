//! Binary model files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic   "ZSMD"
//! version u16
//! embed_dim, feature_dim, classes   u32 each
//! generator layers                  u32, then per layer:
//!     in_dim u32, out_dim u32, activation u8,
//!     weight (in_dim·out_dim f64, row-major), bias (out_dim f64)
//! classifier layer                  same per-layer record
//! ```

use std::path::Path;

use crate::classifier::PixelClassifier;
use crate::error::{Error, Result};
use crate::generator::GeneratorModel;
use crate::tensor::{Activation, Dense, Matrix, Mlp};

pub const MAGIC: &[u8; 4] = b"ZSMD";
pub const FORMAT_VERSION: u16 = 1;

/// Upper bound on any stored dimension, to reject garbage before allocating.
const MAX_DIM: u32 = 1 << 20;

fn put_u32(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_layer(buf: &mut Vec<u8>, layer: &Dense<f64>) {
    put_u32(buf, layer.in_dim());
    put_u32(buf, layer.out_dim());
    buf.push(layer.activation.tag());
    for v in layer.weight.as_slice().iter().chain(&layer.bias) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_model(generator: &GeneratorModel<f64>, classifier: &PixelClassifier<f64>) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    put_u32(&mut buf, generator.embed_dim());
    put_u32(&mut buf, generator.feature_dim());
    put_u32(&mut buf, classifier.classes());
    let layers = generator.mlp().layers();
    put_u32(&mut buf, layers.len());
    for layer in layers {
        put_layer(&mut buf, layer);
    }
    put_layer(&mut buf, &classifier.mlp().layers()[0]);
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Corrupt(format!(
                "truncated at byte {} (needed {n} more)",
                self.pos
            )));
        };
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn dim(&mut self, what: &str) -> Result<usize> {
        let v = u32::from_le_bytes(self.take(4)?.try_into().unwrap());
        if v == 0 || v > MAX_DIM {
            return Err(Error::Corrupt(format!("{what} = {v} is out of range")));
        }
        Ok(v as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Corrupt("size overflow".into()))?,
        )?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn layer(&mut self) -> Result<Dense<f64>> {
        let in_dim = self.dim("layer input dimension")?;
        let out_dim = self.dim("layer output dimension")?;
        let tag = self.u8()?;
        let activation = Activation::from_tag(tag)
            .ok_or_else(|| Error::Corrupt(format!("unknown activation tag {tag}")))?;
        let weight = Matrix::from_vec(in_dim, out_dim, self.f64s(in_dim * out_dim)?)?;
        let bias = self.f64s(out_dim)?;
        Dense::new(weight, bias, activation)
    }
}

/// Decodes a model file. Structural inconsistencies are [`Error::Corrupt`].
pub fn decode_model(bytes: &[u8]) -> Result<(GeneratorModel<f64>, PixelClassifier<f64>)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)
        .map_err(|_| Error::Corrupt("shorter than the header".into()))?
        != MAGIC
    {
        return Err(Error::Corrupt("bad magic bytes".into()));
    }
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let embed_dim = r.dim("embed_dim")?;
    let feature_dim = r.dim("feature_dim")?;
    let classes = r.dim("classes")?;
    let n_layers = r.dim("generator layer count")?;
    if n_layers > 64 {
        return Err(Error::Corrupt(format!("{n_layers} generator layers")));
    }
    let layers = (0..n_layers)
        .map(|_| r.layer())
        .collect::<Result<Vec<_>>>()?;
    let clf_layer = r.layer()?;
    if r.pos != bytes.len() {
        return Err(Error::Corrupt(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    let corrupt = |e: Error| Error::Corrupt(e.to_string());
    let generator =
        GeneratorModel::from_mlp(Mlp::new(layers).map_err(corrupt)?, embed_dim).map_err(corrupt)?;
    let classifier =
        PixelClassifier::from_mlp(Mlp::new(vec![clf_layer]).map_err(corrupt)?).map_err(corrupt)?;
    if generator.feature_dim() != feature_dim
        || classifier.feature_dim() != feature_dim
        || classifier.classes() != classes
    {
        return Err(Error::Corrupt(
            "header dimensions disagree with the layers".into(),
        ));
    }
    Ok((generator, classifier))
}

pub fn save_model(
    path: &Path,
    generator: &GeneratorModel<f64>,
    classifier: &PixelClassifier<f64>,
) -> Result<()> {
    if generator.feature_dim() != classifier.feature_dim() {
        return Err(Error::ModelDimension(format!(
            "generator emits {} features, classifier expects {}",
            generator.feature_dim(),
            classifier.feature_dim()
        )));
    }
    std::fs::write(path, encode_model(generator, classifier)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<(GeneratorModel<f64>, PixelClassifier<f64>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}

/// Fails with [`Error::ModelDimension`] unless the models fit a task with the
/// given embedding size, feature size and class count.
pub fn check_dimensions(
    generator: &GeneratorModel<f64>,
    classifier: &PixelClassifier<f64>,
    embed_dim: usize,
    feature_dim: usize,
    classes: usize,
) -> Result<()> {
    let found = (
        generator.embed_dim(),
        classifier.feature_dim(),
        classifier.classes(),
    );
    if found != (embed_dim, feature_dim, classes) {
        return Err(Error::ModelDimension(format!(
            "model has (d_e, d_f, C) = {found:?}, task needs ({embed_dim}, {feature_dim}, {classes})"
        )));
    }
    Ok(())
}
