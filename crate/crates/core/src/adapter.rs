//! The trainable target encoder: an affine map `π(x) = W x + b` applied to
//! frozen-encoder outputs, plus its checkpoint format.
//!
//! Checkpoint layout (little-endian): magic `DGAD`, version `u16 = 1`,
//! `dim: u32`, then `dim * dim` `f64` (W, row-major) and `dim` `f64` (b).

use std::fs;
use std::path::Path;

pub const CKPT_MAGIC: &[u8; 4] = b"DGAD";
pub const CKPT_VERSION: u16 = 1;
const CKPT_HEADER: usize = 10;

#[derive(Debug, thiserror::Error)]
pub enum AdapterError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad checkpoint magic")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u16),
    #[error("truncated checkpoint")]
    Truncated,
    #[error("trailing bytes after checkpoint payload")]
    TrailingBytes,
    #[error("checkpoint dimension {found} does not match expected {expected}")]
    DimMismatch { expected: usize, found: usize },
    #[error("input dimension {found} does not match adapter dimension {expected}")]
    InputDim { expected: usize, found: usize },
    #[error("non-finite adapter entry {0}")]
    NonFinite(String),
    #[error("dimension must be positive")]
    ZeroDim,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearAdapter {
    dim: usize,
    /// Row-major `dim x dim`.
    weight: Vec<f64>,
    bias: Vec<f64>,
}

impl LinearAdapter {
    /// `W = I`, `b = 0`, so the target encoder starts equal to the frozen one.
    pub fn identity(dim: usize) -> Self {
        let mut weight = vec![0.0; dim * dim];
        for i in 0..dim {
            weight[i * dim + i] = 1.0;
        }
        LinearAdapter {
            dim,
            weight,
            bias: vec![0.0; dim],
        }
    }

    pub fn from_parts(dim: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self, AdapterError> {
        if dim == 0 {
            return Err(AdapterError::ZeroDim);
        }
        if weight.len() != dim * dim || bias.len() != dim {
            return Err(AdapterError::InputDim {
                expected: dim,
                found: bias.len(),
            });
        }
        let a = LinearAdapter { dim, weight, bias };
        a.check_finite()?;
        Ok(a)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn param_count(&self) -> usize {
        self.dim * self.dim + self.dim
    }

    /// Flattened parameters, `W` row-major followed by `b`.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.weight.clone();
        p.extend_from_slice(&self.bias);
        p
    }

    pub fn set_params(&mut self, params: &[f64]) {
        let n = self.dim * self.dim;
        assert_eq!(params.len(), n + self.dim, "parameter length");
        self.weight.copy_from_slice(&params[..n]);
        self.bias.copy_from_slice(&params[n..]);
    }

    /// Human-readable name of flat parameter `k`.
    pub fn param_name(&self, k: usize) -> String {
        let n = self.dim * self.dim;
        if k < n {
            format!("W[{},{}]", k / self.dim, k % self.dim)
        } else {
            format!("b[{}]", k - n)
        }
    }

    fn check_finite(&self) -> Result<(), AdapterError> {
        if let Some(k) = self.params().iter().position(|x| !x.is_finite()) {
            return Err(AdapterError::NonFinite(self.param_name(k)));
        }
        Ok(())
    }

    /// `W x + b`.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, AdapterError> {
        if x.len() != self.dim {
            return Err(AdapterError::InputDim {
                expected: self.dim,
                found: x.len(),
            });
        }
        Ok(self.apply(x))
    }

    pub(crate) fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.weight
            .chunks_exact(self.dim)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + b)
            .collect()
    }

    /// Adds the parameter gradient implied by output gradients `grads` at
    /// inputs `inputs` (`dW += g x^T`, `db += g`) into `acc`.
    pub(crate) fn accumulate_grad(&self, inputs: &[&[f64]], grads: &[Vec<f64>], weight: f64, acc: &mut [f64]) {
        let n = self.dim * self.dim;
        for (x, g) in inputs.iter().zip(grads) {
            for (r, gr) in g.iter().enumerate() {
                let gr = gr * weight;
                let row = &mut acc[r * self.dim..(r + 1) * self.dim];
                for (a, xc) in row.iter_mut().zip(x.iter()) {
                    *a += gr * xc;
                }
                acc[n + r] += gr;
            }
        }
    }
}

pub fn encode_checkpoint(adapter: &LinearAdapter) -> Vec<u8> {
    let mut out = Vec::with_capacity(CKPT_HEADER + adapter.param_count() * 8);
    out.extend_from_slice(CKPT_MAGIC);
    out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
    out.extend_from_slice(&(adapter.dim as u32).to_le_bytes());
    for x in adapter.weight.iter().chain(&adapter.bias) {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8], expected_dim: Option<usize>) -> Result<LinearAdapter, AdapterError> {
    if bytes.len() < 4 {
        return Err(AdapterError::Truncated);
    }
    if &bytes[..4] != CKPT_MAGIC {
        return Err(AdapterError::BadMagic);
    }
    if bytes.len() < CKPT_HEADER {
        return Err(AdapterError::Truncated);
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != CKPT_VERSION {
        return Err(AdapterError::BadVersion(version));
    }
    let dim = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    if let Some(expected) = expected_dim {
        if expected != dim {
            return Err(AdapterError::DimMismatch { expected, found: dim });
        }
    }
    if dim == 0 {
        return Err(AdapterError::ZeroDim);
    }
    let want = CKPT_HEADER + (dim * dim + dim) * 8;
    if bytes.len() < want {
        return Err(AdapterError::Truncated);
    }
    if bytes.len() > want {
        return Err(AdapterError::TrailingBytes);
    }
    let vals: Vec<f64> = bytes[CKPT_HEADER..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let (w, b) = vals.split_at(dim * dim);
    LinearAdapter::from_parts(dim, w.to_vec(), b.to_vec())
}

pub fn save_checkpoint(adapter: &LinearAdapter, path: impl AsRef<Path>) -> Result<(), AdapterError> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(adapter)).map_err(|source| AdapterError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>, expected_dim: Option<usize>) -> Result<LinearAdapter, AdapterError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| AdapterError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_checkpoint(&bytes, expected_dim)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_examples() {
        let id = LinearAdapter::identity(3);
        assert_eq!(id.forward(&[0.5, -2.0, 7.0]).unwrap(), vec![0.5, -2.0, 7.0]);
        let double = LinearAdapter::from_parts(2, vec![2.0, 0.0, 0.0, 2.0], vec![0.0, 0.0]).unwrap();
        assert_eq!(double.forward(&[1.0, -1.0]).unwrap(), vec![2.0, -2.0]);
        let swap = LinearAdapter::from_parts(2, vec![0.0, 1.0, 1.0, 0.0], vec![1.0, 0.0]).unwrap();
        assert_eq!(swap.forward(&[3.0, 4.0]).unwrap(), vec![5.0, 3.0]);
        assert!(matches!(
            swap.forward(&[1.0]),
            Err(AdapterError::InputDim { expected: 2, found: 1 })
        ));
    }

    #[test]
    fn checkpoint_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        let id = LinearAdapter::identity(4);
        save_checkpoint(&id, &path).unwrap();
        assert_eq!(load_checkpoint(&path, Some(4)).unwrap(), id);
        assert!(matches!(
            load_checkpoint(&path, Some(5)),
            Err(AdapterError::DimMismatch { expected: 5, found: 4 })
        ));

        let bytes = encode_checkpoint(&id);
        let err = decode_checkpoint(&bytes[..bytes.len() - 8], None).unwrap_err();
        assert_eq!(err.to_string(), "truncated checkpoint");
        assert!(matches!(
            decode_checkpoint(&bytes[..7], None),
            Err(AdapterError::Truncated)
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_checkpoint(&bad, None), Err(AdapterError::BadMagic)));
        let mut extra = bytes;
        extra.push(1);
        assert!(matches!(
            decode_checkpoint(&extra, None),
            Err(AdapterError::TrailingBytes)
        ));
    }

    #[test]
    fn param_names() {
        let a = LinearAdapter::identity(3);
        assert_eq!(a.param_name(5), "W[1,2]");
        assert_eq!(a.param_name(10), "b[1]");
        assert!(LinearAdapter::from_parts(1, vec![f64::NAN], vec![0.0]).is_err());
    }
}
