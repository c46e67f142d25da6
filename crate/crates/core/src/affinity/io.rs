//! Affinity-head persistence: a directory holding `head.json` plus one
//! tensor file per parameter.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::affinity::{Activation, AffinityHead};
use crate::error::{Error, Result};
use crate::tensor::{read_tensor, write_tensor, Tensor};

pub const HEAD_MANIFEST: &str = "head.json";

#[derive(Serialize, Deserialize)]
struct HeadManifest {
    format_version: u32,
    activation: String,
    input_dim: usize,
    hidden_dim: usize,
    output_dim: usize,
    vocab: Vec<String>,
    /// Parameter name → tensor file name, relative to the head directory.
    tensors: Vec<(String, String)>,
}

const PARAMS: [&str; 5] = ["word_table", "w1", "b1", "w2", "b2"];

/// Write the head to `dir` (created if missing): `head.json` plus one
/// f64 tensor file per parameter. Matrices are stored row-major.
pub fn save_head(head: &AffinityHead, dir: &Path) -> Result<()> {
    head.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let matrix_tensor = |m: &DMatrix<f64>| {
        Tensor::from_f64(
            vec![m.nrows() as u64, m.ncols() as u64],
            m.transpose().as_slice().to_vec(),
        )
    };
    let vector_tensor =
        |v: &DVector<f64>| Tensor::from_f64(vec![v.len() as u64], v.as_slice().to_vec());

    let mut tensors = Vec::new();
    for name in PARAMS {
        let tensor = match name {
            "word_table" => matrix_tensor(&head.word_table)?,
            "w1" => matrix_tensor(&head.w1)?,
            "b1" => vector_tensor(&head.b1)?,
            "w2" => matrix_tensor(&head.w2)?,
            _ => vector_tensor(&head.b2)?,
        };
        let file = format!("{name}.cvpt");
        write_tensor(&dir.join(&file), &tensor)?;
        tensors.push((name.to_string(), file));
    }

    let manifest = HeadManifest {
        format_version: 1,
        activation: head.activation.tag().to_string(),
        input_dim: head.input_dim(),
        hidden_dim: head.hidden_dim(),
        output_dim: head.output_dim(),
        vocab: head.vocab.clone(),
        tensors,
    };
    let path = dir.join(HEAD_MANIFEST);
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Load a head saved by [`save_head`] and validate its dimension chain.
pub fn load_head(dir: &Path) -> Result<AffinityHead> {
    let path = dir.join(HEAD_MANIFEST);
    let raw = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut de = serde_json::Deserializer::from_str(&raw);
    let manifest: HeadManifest =
        serde_path_to_error::deserialize(&mut de).map_err(|e| Error::Schema {
            path: format!("{}: {}", path.display(), e.path()),
            detail: e.inner().to_string(),
        })?;
    if manifest.format_version != 1 {
        return Err(Error::Config(format!(
            "unsupported head format version {}",
            manifest.format_version
        )));
    }

    let find = |name: &str| -> Result<Tensor> {
        let file = manifest
            .tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, f)| f.clone())
            .ok_or_else(|| Error::Config(format!("head manifest lists no `{name}` tensor")))?;
        read_tensor(&dir.join(file))
    };

    let matrix = |t: Tensor, rows: usize, cols: usize, name: &str| -> Result<DMatrix<f64>> {
        if t.dims != [rows as u64, cols as u64] {
            return Err(Error::ShapeMismatch(format!(
                "{name} tensor has dims {:?}, expected [{rows}, {cols}]",
                t.dims
            )));
        }
        Ok(DMatrix::from_row_slice(rows, cols, &t.to_f64()))
    };
    let vector = |t: Tensor, len: usize, name: &str| -> Result<DVector<f64>> {
        if t.dims != [len as u64] {
            return Err(Error::ShapeMismatch(format!(
                "{name} tensor has dims {:?}, expected [{len}]",
                t.dims
            )));
        }
        Ok(DVector::from_row_slice(&t.to_f64()))
    };

    let (v, d, h, c) = (
        manifest.vocab.len(),
        manifest.input_dim,
        manifest.hidden_dim,
        manifest.output_dim,
    );
    let head = AffinityHead {
        vocab: manifest.vocab,
        word_table: matrix(find("word_table")?, v, d, "word_table")?,
        w1: matrix(find("w1")?, h, d, "w1")?,
        b1: vector(find("b1")?, h, "b1")?,
        w2: matrix(find("w2")?, c, h, "w2")?,
        b2: vector(find("b2")?, c, "b2")?,
        activation: Activation::from_tag(&manifest.activation)?,
    };
    head.validate()?;
    Ok(head)
}
