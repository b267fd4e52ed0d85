//! The minimal transformer-checkpoint slice needed for meta-gradients:
//! token embeddings, position embeddings, the first layer's pre-attention
//! layer norm, and its value projection.
//!
//! Weights are read from the single-file named-tensor container format: a
//! little-endian u64 header length, a JSON header mapping tensor names to
//! `{dtype, shape, data_offsets}`, then raw row-major tensor data. Expected
//! names follow the public GPT-2 checkpoint convention, with or without a
//! `transformer.` prefix.

use std::collections::HashMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::Deserialize;
use thiserror::Error;

use crate::tokenizer::TokenSeq;

const LN_VARIANCE_FLOOR: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum SliceError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad tensor container header: {0}")]
    Header(String),
    #[error("missing tensor: tried {names:?}")]
    MissingTensor { names: Vec<String> },
    #[error("tensor {name}: expected {expected}, got shape {shape:?}")]
    Shape {
        name: String,
        expected: String,
        shape: Vec<usize>,
    },
    #[error("tensor {name}: unsupported dtype {dtype} (expected F32)")]
    Dtype { name: String, dtype: String },
    #[error("tensor {name} contains non-finite values")]
    NonFinite { name: String },
    #[error("token id {id} out of range for embedding table of {vocab_size} rows")]
    TokenOutOfRange { id: u32, vocab_size: usize },
    #[error("sequence length {len} exceeds the {max_pos} position embeddings")]
    TooManyPositions { len: usize, max_pos: usize },
    #[error("representation has {got} rows, expected {expected}")]
    BadRepresentation { got: usize, expected: usize },
}

#[derive(Deserialize)]
struct TensorInfo {
    dtype: String,
    shape: Vec<usize>,
    data_offsets: (u64, u64),
}

/// Parsed container: header entries plus the raw data section.
pub struct TensorFile {
    entries: HashMap<String, TensorInfo>,
    data: Vec<u8>,
}

impl TensorFile {
    pub fn open(path: &Path) -> Result<Self, SliceError> {
        let bytes = fs::read(path).map_err(|source| SliceError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if bytes.len() < 8 {
            return Err(SliceError::Header("file shorter than 8 bytes".into()));
        }
        let header_len = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
        let data_start = 8 + header_len;
        if bytes.len() < data_start {
            return Err(SliceError::Header(format!(
                "declared header length {header_len} exceeds file size"
            )));
        }
        let header: serde_json::Map<String, serde_json::Value> =
            serde_json::from_slice(&bytes[8..data_start])
                .map_err(|e| SliceError::Header(e.to_string()))?;
        let mut entries = HashMap::new();
        for (name, value) in header {
            if name == "__metadata__" {
                continue;
            }
            let info: TensorInfo = serde_json::from_value(value)
                .map_err(|e| SliceError::Header(format!("tensor {name}: {e}")))?;
            entries.insert(name, info);
        }
        Ok(Self {
            entries,
            data: bytes[data_start..].to_vec(),
        })
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }

    /// Fetch a tensor under any of the accepted names, as f64 values.
    fn tensor(&self, names: &[&str]) -> Result<(Vec<usize>, Vec<f64>), SliceError> {
        let (name, info) = names
            .iter()
            .find_map(|n| self.entries.get_key_value(*n))
            .ok_or_else(|| SliceError::MissingTensor {
                names: names.iter().map(|s| s.to_string()).collect(),
            })?;
        if info.dtype != "F32" {
            return Err(SliceError::Dtype {
                name: name.clone(),
                dtype: info.dtype.clone(),
            });
        }
        let (start, end) = (info.data_offsets.0 as usize, info.data_offsets.1 as usize);
        let count: usize = info.shape.iter().product();
        if end < start || end > self.data.len() || end - start != count * 4 {
            return Err(SliceError::Header(format!(
                "tensor {name}: offsets {:?} inconsistent with shape {:?}",
                info.data_offsets, info.shape
            )));
        }
        let values: Vec<f64> = self.data[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SliceError::NonFinite { name: name.clone() });
        }
        Ok((info.shape.clone(), values))
    }

    fn matrix(&self, names: &[&str]) -> Result<Array2<f64>, SliceError> {
        let (shape, values) = self.tensor(names)?;
        if shape.len() != 2 {
            return Err(SliceError::Shape {
                name: names[0].to_string(),
                expected: "a rank-2 tensor".into(),
                shape,
            });
        }
        Ok(Array2::from_shape_vec((shape[0], shape[1]), values).unwrap())
    }

    fn vector(&self, names: &[&str]) -> Result<Array1<f64>, SliceError> {
        let (shape, values) = self.tensor(names)?;
        if shape.len() != 1 {
            return Err(SliceError::Shape {
                name: names[0].to_string(),
                expected: "a rank-1 tensor".into(),
                shape,
            });
        }
        Ok(Array1::from_vec(values))
    }
}

/// Write tensors in the container format (F32, row-major). Used to build
/// synthetic checkpoints for tests and toy runs.
pub fn write_tensor_file(
    path: &Path,
    tensors: &[(&str, Vec<usize>, Vec<f32>)],
) -> std::io::Result<()> {
    let mut header = String::from("{");
    let mut data = Vec::new();
    for (i, (name, shape, values)) in tensors.iter().enumerate() {
        assert_eq!(shape.iter().product::<usize>(), values.len());
        let start = data.len();
        for v in values {
            data.extend_from_slice(&v.to_le_bytes());
        }
        if i > 0 {
            header.push(',');
        }
        header.push_str(&format!(
            "\"{name}\":{{\"dtype\":\"F32\",\"shape\":{shape:?},\"data_offsets\":[{start},{}]}}",
            data.len()
        ));
    }
    header.push('}');
    let mut file = fs::File::create(path)?;
    file.write_all(&(header.len() as u64).to_le_bytes())?;
    file.write_all(header.as_bytes())?;
    file.write_all(&data)?;
    Ok(())
}

/// Embeddings, first-layer norm, and first-layer value projection.
#[derive(Debug)]
pub struct ModelSlice {
    wte: Array2<f64>,
    wpe: Array2<f64>,
    ln_gain: Array1<f64>,
    ln_bias: Array1<f64>,
    w_v: Array2<f64>,
}

/// Token representations: one d-dimensional column per padded position.
#[derive(Debug, Clone)]
pub struct Representation {
    /// d x L.
    pub p: Array2<f64>,
}

/// First-layer value projection applied to a representation.
#[derive(Debug, Clone)]
pub struct MetaGradient {
    /// d' x L.
    pub g: Array2<f64>,
    pub example_id: usize,
}

impl ModelSlice {
    pub fn load(path: &Path) -> Result<Self, SliceError> {
        let file = TensorFile::open(path)?;
        Self::from_tensor_file(&file)
    }

    pub fn from_tensor_file(file: &TensorFile) -> Result<Self, SliceError> {
        let wte = file.matrix(&["wte.weight", "transformer.wte.weight"])?;
        let wpe = file.matrix(&["wpe.weight", "transformer.wpe.weight"])?;
        let ln_gain = file.vector(&["h.0.ln_1.weight", "transformer.h.0.ln_1.weight"])?;
        let ln_bias = file.vector(&["h.0.ln_1.bias", "transformer.h.0.ln_1.bias"])?;
        let fused = file.matrix(&["h.0.attn.c_attn.weight", "transformer.h.0.attn.c_attn.weight"])?;

        let d = wte.ncols();
        if wpe.ncols() != d {
            return Err(SliceError::Shape {
                name: "wpe.weight".into(),
                expected: format!("{} columns to match the token embedding", d),
                shape: vec![wpe.nrows(), wpe.ncols()],
            });
        }
        for (name, v) in [("h.0.ln_1.weight", &ln_gain), ("h.0.ln_1.bias", &ln_bias)] {
            if v.len() != d {
                return Err(SliceError::Shape {
                    name: name.into(),
                    expected: format!("length {d}"),
                    shape: vec![v.len()],
                });
            }
        }

        // The fused query/key/value block is either 3d' x d (row-major heads
        // out) or d x 3d' (the checkpoint's transposed linear convention);
        // the value projection is the final third either way.
        let (rows, cols) = (fused.nrows(), fused.ncols());
        let w_v = if rows % 3 == 0 && cols == d && rows / 3 == d {
            let d_prime = rows / 3;
            fused.slice(ndarray::s![2 * d_prime.., ..]).to_owned()
        } else if cols % 3 == 0 && rows == d && cols / 3 == d {
            let d_prime = cols / 3;
            fused.slice(ndarray::s![.., 2 * d_prime..]).t().to_owned()
        } else {
            return Err(SliceError::Shape {
                name: "h.0.attn.c_attn.weight".into(),
                expected: format!("{d}x{} or {}x{d}", 3 * d, 3 * d),
                shape: vec![rows, cols],
            });
        };

        Ok(Self {
            wte,
            wpe,
            ln_gain,
            ln_bias,
            w_v,
        })
    }

    /// Model width d.
    pub fn d(&self) -> usize {
        self.wte.ncols()
    }

    /// Value-projection output width d'.
    pub fn d_prime(&self) -> usize {
        self.w_v.nrows()
    }

    pub fn vocab_size(&self) -> usize {
        self.wte.nrows()
    }

    pub fn max_positions(&self) -> usize {
        self.wpe.nrows()
    }

    /// Column i is the layer-normalized `wte[s_i] + wpe[i]`, scaled and
    /// shifted by the first layer's pre-attention norm parameters. The value
    /// projection consumes the normalized residual stream, so this is the
    /// input the meta-gradient sees; pass `apply_layer_norm = false` to use
    /// the raw embedding sum instead.
    pub fn represent_with(
        &self,
        seq: &TokenSeq,
        apply_layer_norm: bool,
    ) -> Result<Representation, SliceError> {
        let len = seq.len();
        if len > self.max_positions() {
            return Err(SliceError::TooManyPositions {
                len,
                max_pos: self.max_positions(),
            });
        }
        let d = self.d();
        let mut p = Array2::zeros((d, len));
        for (pos, &id) in seq.ids.iter().enumerate() {
            if id as usize >= self.vocab_size() {
                return Err(SliceError::TokenOutOfRange {
                    id,
                    vocab_size: self.vocab_size(),
                });
            }
            let mut x: Array1<f64> = &self.wte.row(id as usize) + &self.wpe.row(pos);
            if apply_layer_norm {
                let mean = x.mean().unwrap();
                let var = x.mapv(|v| (v - mean) * (v - mean)).mean().unwrap();
                let scale = 1.0 / (var + LN_VARIANCE_FLOOR).sqrt();
                x = (x - mean) * scale * &self.ln_gain + &self.ln_bias;
            }
            p.column_mut(pos).assign(&x);
        }
        Ok(Representation { p })
    }

    pub fn represent(&self, seq: &TokenSeq) -> Result<Representation, SliceError> {
        self.represent_with(seq, true)
    }

    /// `G = W_V . P`, the meta-gradient of one example.
    pub fn meta_gradient(
        &self,
        repr: &Representation,
        example_id: usize,
    ) -> Result<MetaGradient, SliceError> {
        if repr.p.nrows() != self.d() {
            return Err(SliceError::BadRepresentation {
                got: repr.p.nrows(),
                expected: self.d(),
            });
        }
        Ok(MetaGradient {
            g: self.w_v.dot(&repr.p),
            example_id,
        })
    }
}
