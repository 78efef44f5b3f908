//! Frozen-encoder embedding matrices and their on-disk format.
//!
//! `<path>.emb` (little-endian):
//!
//! ```text
//! magic    4 bytes  "DGEM"
//! version  u16      1
//! kind     u8       0 = text, 1 = image
//! reserved u8       0
//! dim      u32
//! count    u64
//! payload  count * dim f32, row-major
//! ```
//!
//! `<path>.ids` holds one UTF-8 id per line; line `i` names row `i`.
//! Values are kept as `f32` exactly as stored and widened to `f64` for
//! computation.

use std::collections::HashSet;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

pub const EMB_MAGIC: &[u8; 4] = b"DGEM";
pub const EMB_VERSION: u16 = 1;
const HEADER_LEN: usize = 20;
const MIN_ROW_NORM: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("unrecognized format")]
    BadMagic,
    #[error("unsupported version {0}")]
    BadVersion(u16),
    #[error("unknown embedding kind byte {0}")]
    BadKind(u8),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("trailing bytes after payload: expected {expected} bytes, found {found}")]
    TrailingBytes { expected: usize, found: usize },
    #[error("count mismatch: .emb has {emb} rows, .ids has {ids}")]
    CountMismatch { emb: usize, ids: usize },
    #[error("duplicate id {0}")]
    DuplicateId(String),
    #[error("row {row} contains a non-finite entry")]
    NonFinite { row: usize },
    #[error("row {row} is the zero vector")]
    ZeroRow { row: usize },
    #[error("dimension must be positive")]
    ZeroDim,
    #[error("data length {len} is not count {count} x dim {dim}")]
    Shape { len: usize, count: usize, dim: usize },
    #[error("anchor mismatch: {0}")]
    AnchorMismatch(String),
    #[error("vector dimensions differ: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("zero-norm vector")]
    ZeroNorm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EmbeddingKind {
    Text,
    Image,
}

impl EmbeddingKind {
    fn to_byte(self) -> u8 {
        match self {
            EmbeddingKind::Text => 0,
            EmbeddingKind::Image => 1,
        }
    }

    fn from_byte(b: u8) -> Result<Self, StoreError> {
        match b {
            0 => Ok(EmbeddingKind::Text),
            1 => Ok(EmbeddingKind::Image),
            other => Err(StoreError::BadKind(other)),
        }
    }
}

/// `count x dim` row-major `f32` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    kind: EmbeddingKind,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(dim: usize, kind: EmbeddingKind, data: Vec<f32>) -> Result<Self, StoreError> {
        if dim == 0 {
            return Err(StoreError::ZeroDim);
        }
        if !data.len().is_multiple_of(dim) {
            return Err(StoreError::Shape {
                len: data.len(),
                count: data.len() / dim,
                dim,
            });
        }
        Ok(EmbeddingMatrix { dim, kind, data })
    }

    /// Narrows `f64` rows to `f32`.
    pub fn from_rows(dim: usize, kind: EmbeddingKind, rows: &[Vec<f64>]) -> Result<Self, StoreError> {
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.len() != dim {
                return Err(StoreError::DimMismatch(r.len(), dim));
            }
            data.extend(r.iter().map(|&x| x as f32));
        }
        Self::new(dim, kind, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn kind(&self) -> EmbeddingKind {
        self.kind
    }

    pub fn raw_row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.raw_row(i).iter().map(|&x| f64::from(x)).collect()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.count()).map(|i| self.row(i)).collect()
    }

    /// Every entry finite and no zero rows.
    pub fn validate(&self) -> Result<(), StoreError> {
        for i in 0..self.count() {
            let row = self.raw_row(i);
            if row.iter().any(|x| !x.is_finite()) {
                return Err(StoreError::NonFinite { row: i });
            }
            let norm_sq: f64 = row.iter().map(|&x| f64::from(x) * f64::from(x)).sum();
            if norm_sq.sqrt() <= MIN_ROW_NORM {
                return Err(StoreError::ZeroRow { row: i });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    matrix: EmbeddingMatrix,
    ids: Vec<String>,
}

impl EmbeddingStore {
    /// Checks that ids line up with rows and are unique. Entry-level checks
    /// run on write and read, see [`EmbeddingStore::validate`].
    pub fn new(ids: Vec<String>, matrix: EmbeddingMatrix) -> Result<Self, StoreError> {
        if ids.len() != matrix.count() {
            return Err(StoreError::CountMismatch {
                emb: matrix.count(),
                ids: ids.len(),
            });
        }
        let mut seen = HashSet::with_capacity(ids.len());
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(StoreError::DuplicateId(id.clone()));
            }
        }
        Ok(EmbeddingStore { matrix, ids })
    }

    pub fn from_rows(ids: Vec<String>, kind: EmbeddingKind, dim: usize, rows: &[Vec<f64>]) -> Result<Self, StoreError> {
        Self::new(ids, EmbeddingMatrix::from_rows(dim, kind, rows)?)
    }

    pub fn validate(&self) -> Result<(), StoreError> {
        self.matrix.validate()
    }

    pub fn matrix(&self) -> &EmbeddingMatrix {
        &self.matrix
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn count(&self) -> usize {
        self.matrix.count()
    }

    pub fn kind(&self) -> EmbeddingKind {
        self.matrix.kind()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    /// Id -> row index map, for repeated lookups.
    pub fn index(&self) -> std::collections::HashMap<&str, usize> {
        self.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.matrix.row(i)
    }

    pub fn get(&self, id: &str) -> Option<Vec<f64>> {
        self.index_of(id).map(|i| self.row(i))
    }

    /// First `n` rows.
    pub fn truncated(&self, n: usize) -> EmbeddingStore {
        let n = n.min(self.count());
        let dim = self.dim();
        EmbeddingStore {
            matrix: EmbeddingMatrix {
                dim,
                kind: self.kind(),
                data: self.matrix.data[..n * dim].to_vec(),
            },
            ids: self.ids[..n].to_vec(),
        }
    }
}

/// Caption anchors, optionally with image anchors aligned row-for-row.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    captions: EmbeddingStore,
    images: Option<EmbeddingStore>,
}

impl AnchorSet {
    pub fn new(captions: EmbeddingStore, images: Option<EmbeddingStore>) -> Result<Self, StoreError> {
        if captions.count() == 0 {
            return Err(StoreError::AnchorMismatch("anchor set is empty".into()));
        }
        if let Some(img) = &images {
            if img.count() != captions.count() {
                return Err(StoreError::AnchorMismatch(format!(
                    "{} captions but {} images",
                    captions.count(),
                    img.count()
                )));
            }
            if img.dim() != captions.dim() {
                return Err(StoreError::AnchorMismatch(format!(
                    "caption dim {} but image dim {}",
                    captions.dim(),
                    img.dim()
                )));
            }
            if let Some(i) = (0..img.count()).find(|&i| img.ids()[i] != captions.ids()[i]) {
                return Err(StoreError::AnchorMismatch(format!(
                    "ids diverge at row {i}: {} vs {}",
                    captions.ids()[i],
                    img.ids()[i]
                )));
            }
        }
        Ok(AnchorSet { captions, images })
    }

    pub fn captions(&self) -> &EmbeddingStore {
        &self.captions
    }

    pub fn images(&self) -> Option<&EmbeddingStore> {
        self.images.as_ref()
    }

    pub fn len(&self) -> usize {
        self.captions.count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.captions.dim()
    }

    /// First `m` anchors.
    pub fn truncated(&self, m: usize) -> AnchorSet {
        AnchorSet {
            captions: self.captions.truncated(m),
            images: self.images.as_ref().map(|s| s.truncated(m)),
        }
    }
}

fn with_ext(path: &Path, ext: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

pub fn emb_path(base: impl AsRef<Path>) -> PathBuf {
    with_ext(base.as_ref(), "emb")
}

pub fn ids_path(base: impl AsRef<Path>) -> PathBuf {
    with_ext(base.as_ref(), "ids")
}

/// Serializes the `.emb` payload.
pub fn encode_emb(matrix: &EmbeddingMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + matrix.data.len() * 4);
    out.extend_from_slice(EMB_MAGIC);
    out.extend_from_slice(&EMB_VERSION.to_le_bytes());
    out.push(matrix.kind.to_byte());
    out.push(0);
    out.extend_from_slice(&(matrix.dim as u32).to_le_bytes());
    out.extend_from_slice(&(matrix.count() as u64).to_le_bytes());
    for x in &matrix.data {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn decode_emb(bytes: &[u8]) -> Result<EmbeddingMatrix, StoreError> {
    if bytes.len() < 4 || &bytes[..4] != EMB_MAGIC {
        return Err(StoreError::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(StoreError::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != EMB_VERSION {
        return Err(StoreError::BadVersion(version));
    }
    let kind = EmbeddingKind::from_byte(bytes[6])?;
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    if dim == 0 {
        return Err(StoreError::ZeroDim);
    }
    let expected = count
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or(StoreError::Truncated {
            expected: usize::MAX,
            found: bytes.len(),
        })?;
    if bytes.len() < expected {
        return Err(StoreError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(StoreError::TrailingBytes {
            expected,
            found: bytes.len(),
        });
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    EmbeddingMatrix::new(dim, kind, data)
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes `<base>.emb` and `<base>.ids`. Refuses stores with non-finite
/// entries or zero rows.
pub fn write_store(store: &EmbeddingStore, base: impl AsRef<Path>) -> Result<(), StoreError> {
    store.validate()?;
    let emb = emb_path(&base);
    let ids = ids_path(&base);
    fs::write(&emb, encode_emb(&store.matrix)).map_err(io_err(&emb))?;
    let mut f = fs::File::create(&ids).map_err(io_err(&ids))?;
    for id in &store.ids {
        writeln!(f, "{id}").map_err(io_err(&ids))?;
    }
    Ok(())
}

pub fn read_store(base: impl AsRef<Path>) -> Result<EmbeddingStore, StoreError> {
    let emb = emb_path(&base);
    let ids = ids_path(&base);
    let bytes = fs::read(&emb).map_err(io_err(&emb))?;
    let matrix = decode_emb(&bytes)?;
    let text = fs::read_to_string(&ids).map_err(io_err(&ids))?;
    let ids: Vec<String> = text.lines().map(str::to_string).collect();
    let store = EmbeddingStore::new(ids, matrix)?;
    store.validate()?;
    Ok(store)
}

/// Reads `<dir>/<captions>` and, when present, `<dir>/<images>`.
pub fn read_anchor_set(captions: impl AsRef<Path>, images: Option<&Path>) -> Result<AnchorSet, StoreError> {
    let captions = read_store(captions)?;
    let images = images.map(read_store).transpose()?;
    AnchorSet::new(captions, images)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `dot(a, b) / (|a| |b|)`, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64, StoreError> {
    if a.len() != b.len() {
        return Err(StoreError::DimMismatch(a.len(), b.len()));
    }
    let (na, nb) = (norm(a), norm(b));
    if na <= MIN_ROW_NORM || nb <= MIN_ROW_NORM {
        return Err(StoreError::ZeroNorm);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store3x4() -> EmbeddingStore {
        EmbeddingStore::from_rows(
            vec!["a".into(), "b".into(), "c".into()],
            EmbeddingKind::Text,
            4,
            &[
                vec![1.0, 0.0, 0.0, 0.0],
                vec![0.5, -0.25, 2.0, 1.5],
                vec![-1.0, 3.0, 0.125, -0.75],
            ],
        )
        .unwrap()
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("s");
        let store = store3x4();
        write_store(&store, &base).unwrap();
        assert_eq!(read_store(&base).unwrap(), store);
        let first = fs::read(emb_path(&base)).unwrap();
        write_store(&store, &base).unwrap();
        assert_eq!(fs::read(emb_path(&base)).unwrap(), first);
    }

    #[test]
    fn empty_store_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("empty");
        let store = EmbeddingStore::from_rows(vec![], EmbeddingKind::Image, 8, &[]).unwrap();
        write_store(&store, &base).unwrap();
        assert_eq!(fs::read(emb_path(&base)).unwrap().len(), HEADER_LEN);
        let back = read_store(&base).unwrap();
        assert_eq!(back.count(), 0);
        assert_eq!(back.dim(), 8);
        assert_eq!(back.kind(), EmbeddingKind::Image);
    }

    #[test]
    fn nan_row_is_refused_with_index() {
        let dir = tempfile::tempdir().unwrap();
        let store = EmbeddingStore::from_rows(
            vec!["a".into(), "b".into()],
            EmbeddingKind::Text,
            2,
            &[vec![1.0, 0.0], vec![f64::NAN, 1.0]],
        )
        .unwrap();
        assert!(matches!(
            write_store(&store, dir.path().join("x")),
            Err(StoreError::NonFinite { row: 1 })
        ));
        let zero = EmbeddingStore::from_rows(vec!["z".into()], EmbeddingKind::Text, 2, &[vec![0.0, 0.0]]).unwrap();
        assert!(matches!(zero.validate(), Err(StoreError::ZeroRow { row: 0 })));
    }

    #[test]
    fn header_errors() {
        let mut bytes = encode_emb(store3x4().matrix());
        assert!(decode_emb(&bytes[..bytes.len() - 1]).is_err());
        assert!(matches!(
            decode_emb(&bytes[..bytes.len() - 3]),
            Err(StoreError::Truncated { .. })
        ));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode_emb(&long), Err(StoreError::TrailingBytes { .. })));
        bytes[4] = 2;
        assert!(matches!(decode_emb(&bytes), Err(StoreError::BadVersion(2))));
        bytes[0] = b'X';
        let err = decode_emb(&bytes).unwrap_err();
        assert_eq!(err.to_string(), "unrecognized format");
    }

    #[test]
    fn duplicate_and_count_mismatch_ids() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("s");
        write_store(&store3x4(), &base).unwrap();
        fs::write(ids_path(&base), "a\nb\na\n").unwrap();
        let err = read_store(&base).unwrap_err();
        assert!(matches!(err, StoreError::DuplicateId(ref id) if id == "a"));
        assert!(err.to_string().contains('a'));
        fs::write(ids_path(&base), "a\nb\n").unwrap();
        assert!(matches!(
            read_store(&base),
            Err(StoreError::CountMismatch { emb: 3, ids: 2 })
        ));
    }

    #[test]
    fn cosine_examples() {
        let v = [0.3, -1.2, 4.0];
        assert!((cosine_similarity(&v, &v).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let c = cosine_similarity(&[1.0, 2.0, 2.0], &[2.0, 1.0, 2.0]).unwrap();
        assert!((c - 8.0 / 9.0).abs() < 1e-15);
        assert!(matches!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]),
            Err(StoreError::ZeroNorm)
        ));
        assert!(matches!(
            cosine_similarity(&[1.0], &[1.0, 0.0]),
            Err(StoreError::DimMismatch(1, 2))
        ));
    }

    #[test]
    fn anchor_alignment() {
        let caps = store3x4();
        let mut imgs = EmbeddingStore::new(
            vec!["a".into(), "b".into(), "c".into()],
            EmbeddingMatrix::new(4, EmbeddingKind::Image, caps.matrix().data.clone()).unwrap(),
        )
        .unwrap();
        assert_eq!(AnchorSet::new(caps.clone(), Some(imgs.clone())).unwrap().len(), 3);
        imgs.ids.swap(0, 1);
        assert!(AnchorSet::new(caps.clone(), Some(imgs)).is_err());
        assert!(AnchorSet::new(caps.clone(), Some(caps.truncated(2))).is_err());
        assert_eq!(AnchorSet::new(caps, None).unwrap().truncated(2).len(), 2);
    }
}
