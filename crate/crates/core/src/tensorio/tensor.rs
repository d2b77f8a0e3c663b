//! The `PTNS` binary tensor container.
//!
//! Layout, all little-endian:
//!
//! ```text
//! offset  size        field
//! 0       4           magic "PTNS"
//! 4       4           version (u32, currently 1)
//! 8       1           dtype code (f32=0, f64=1, u8=2, i64=3)
//! 9       1           ndim (<= 8)
//! 10      8 * ndim    dims (u64 each)
//! ...     payload     row-major scalars
//! ```

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"PTNS";
pub const FORMAT_VERSION: u32 = 1;
pub const MAX_DIMS: usize = 8;

const HEADER_FIXED: usize = 4 + 4 + 1 + 1;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("bad magic {found:?}, expected \"PTNS\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("unknown dtype code {0}")]
    UnknownDtype(u8),
    #[error("tensor has {0} dimensions, at most 8 are supported")]
    TooManyDims(usize),
    #[error("truncated file: need {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("payload size mismatch: header declares {expected} bytes, file holds {actual}")]
    PayloadSizeMismatch { expected: usize, actual: usize },
    #[error("shape {shape:?} needs {expected} elements, data has {actual}")]
    ShapeMismatch { shape: Vec<usize>, expected: usize, actual: usize },
    #[error("expected dtype {expected:?}, found {found:?}")]
    WrongDtype { expected: DType, found: DType },
    #[error("expected shape {expected}, found {found:?}")]
    WrongShape { expected: String, found: Vec<usize> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32 = 0,
    F64 = 1,
    U8 = 2,
    I64 = 3,
}

impl DType {
    pub fn from_code(code: u8) -> Result<Self, TensorError> {
        match code {
            0 => Ok(DType::F32),
            1 => Ok(DType::F64),
            2 => Ok(DType::U8),
            3 => Ok(DType::I64),
            other => Err(TensorError::UnknownDtype(other)),
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    /// Width of one scalar in bytes.
    pub fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
            DType::U8 => 1,
            DType::I64 => 8,
        }
    }
}

/// Typed row-major scalar buffer.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U8(Vec<u8>),
    I64(Vec<i64>),
}

impl TensorData {
    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
            TensorData::U8(_) => DType::U8,
            TensorData::I64(_) => DType::I64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
            TensorData::U8(v) => v.len(),
            TensorData::I64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// An n-dimensional array with a fixed scalar type.
///
/// Construction checks that the buffer length equals the product of the
/// shape, so every `Tensor` value can be written without further checks.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: TensorData,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: TensorData) -> Result<Self, TensorError> {
        if shape.len() > MAX_DIMS {
            return Err(TensorError::TooManyDims(shape.len()));
        }
        let expected = element_count(&shape);
        if expected != data.len() {
            return Err(TensorError::ShapeMismatch { shape, expected, actual: data.len() });
        }
        Ok(Self { shape, data })
    }

    pub fn from_f64(shape: Vec<usize>, values: Vec<f64>) -> Result<Self, TensorError> {
        Self::new(shape, TensorData::F64(values))
    }

    pub fn from_f32(shape: Vec<usize>, values: Vec<f32>) -> Result<Self, TensorError> {
        Self::new(shape, TensorData::F32(values))
    }

    pub fn from_u8(shape: Vec<usize>, values: Vec<u8>) -> Result<Self, TensorError> {
        Self::new(shape, TensorData::U8(values))
    }

    pub fn from_i64(shape: Vec<usize>, values: Vec<i64>) -> Result<Self, TensorError> {
        Self::new(shape, TensorData::I64(values))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn into_data(self) -> TensorData {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Values widened to `f64`. Integer tensors convert exactly for
    /// magnitudes below 2^53.
    pub fn to_f64_vec(&self) -> Vec<f64> {
        match &self.data {
            TensorData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            TensorData::F64(v) => v.clone(),
            TensorData::U8(v) => v.iter().map(|&x| x as f64).collect(),
            TensorData::I64(v) => v.iter().map(|&x| x as f64).collect(),
        }
    }

    /// Checks that the tensor is `[n, cols]` and returns `n`.
    pub fn expect_matrix(&self, cols: usize) -> Result<usize, TensorError> {
        match self.shape.as_slice() {
            [n, c] if *c == cols => Ok(*n),
            _ => Err(TensorError::WrongShape { expected: format!("[N, {cols}]"), found: self.shape.clone() }),
        }
    }

    /// Checks that the tensor is one-dimensional and returns its length.
    pub fn expect_vector(&self) -> Result<usize, TensorError> {
        match self.shape.as_slice() {
            [n] => Ok(*n),
            _ => Err(TensorError::WrongShape { expected: "[N]".to_string(), found: self.shape.clone() }),
        }
    }

    /// Serialized size in bytes.
    pub fn encoded_len(&self) -> usize {
        HEADER_FIXED + 8 * self.shape.len() + self.len() * self.dtype().width()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(self.dtype().code());
        out.push(self.shape.len() as u8);
        for &d in &self.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        match &self.data {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::U8(v) => out.extend_from_slice(v),
            TensorData::I64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TensorError> {
        if bytes.len() < 4 {
            return Err(TensorError::Truncated { expected: HEADER_FIXED, actual: bytes.len() });
        }
        let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
        if &magic != MAGIC {
            return Err(TensorError::BadMagic { found: magic });
        }
        if bytes.len() < HEADER_FIXED {
            return Err(TensorError::Truncated { expected: HEADER_FIXED, actual: bytes.len() });
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(TensorError::UnsupportedVersion(version));
        }
        let dtype = DType::from_code(bytes[8])?;
        let ndim = bytes[9] as usize;
        if ndim > MAX_DIMS {
            return Err(TensorError::TooManyDims(ndim));
        }
        let header_len = HEADER_FIXED + 8 * ndim;
        if bytes.len() < header_len {
            return Err(TensorError::Truncated { expected: header_len, actual: bytes.len() });
        }
        let shape: Vec<usize> = bytes[HEADER_FIXED..header_len]
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize)
            .collect();

        let count = checked_element_count(&shape)
            .ok_or(TensorError::PayloadSizeMismatch { expected: usize::MAX, actual: bytes.len() - header_len })?;
        let payload_len = count
            .checked_mul(dtype.width())
            .and_then(|n| n.checked_add(header_len))
            .ok_or(TensorError::PayloadSizeMismatch { expected: usize::MAX, actual: bytes.len() - header_len })?;
        if bytes.len() < payload_len {
            return Err(TensorError::Truncated { expected: payload_len, actual: bytes.len() });
        }
        if bytes.len() > payload_len {
            return Err(TensorError::PayloadSizeMismatch {
                expected: payload_len - header_len,
                actual: bytes.len() - header_len,
            });
        }

        let payload = &bytes[header_len..];
        let data = match dtype {
            DType::F32 => {
                TensorData::F32(payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
            }
            DType::F64 => {
                TensorData::F64(payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
            }
            DType::U8 => TensorData::U8(payload.to_vec()),
            DType::I64 => {
                TensorData::I64(payload.chunks_exact(8).map(|c| i64::from_le_bytes(c.try_into().unwrap())).collect())
            }
        };
        Tensor::new(shape, data)
    }
}

fn element_count(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn checked_element_count(shape: &[usize]) -> Option<usize> {
    shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
}

pub fn write_tensor(path: impl AsRef<Path>, tensor: &Tensor) -> Result<(), TensorError> {
    let path = path.as_ref();
    fs::write(path, tensor.to_bytes()).map_err(|source| TensorError::Io { path: path.to_path_buf(), source })
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor, TensorError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| TensorError::Io { path: path.to_path_buf(), source })?;
    Tensor::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn f32_2x3_is_fifty_bytes() {
        let t = Tensor::from_f32(vec![2, 3], (0..6).map(|x| x as f32).collect()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ptns");
        write_tensor(&path, &t).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 50);
        assert_eq!(&bytes[0..4], b"PTNS");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(bytes[8], 0);
        assert_eq!(bytes[9], 2);
        assert_eq!(read_tensor(&path).unwrap(), t);
    }

    #[test]
    fn empty_tensor_has_no_payload() {
        let t = Tensor::from_f64(vec![0], vec![]).unwrap();
        let bytes = t.to_bytes();
        assert_eq!(bytes.len(), 4 + 4 + 1 + 1 + 8);
        assert_eq!(Tensor::from_bytes(&bytes).unwrap(), t);
    }

    #[test]
    fn rejects_bad_magic() {
        let mut bytes = Tensor::from_u8(vec![2], vec![1, 0]).unwrap().to_bytes();
        bytes[0..4].copy_from_slice(b"XXXX");
        assert!(matches!(Tensor::from_bytes(&bytes), Err(TensorError::BadMagic { .. })));
    }

    #[test]
    fn rejects_truncated_payload() {
        let bytes = Tensor::from_f64(vec![4], vec![1.0, 2.0, 3.0, 4.0]).unwrap().to_bytes();
        let cut = &bytes[..bytes.len() - 5];
        assert!(matches!(Tensor::from_bytes(cut), Err(TensorError::Truncated { .. })));
    }

    #[test]
    fn rejects_trailing_bytes() {
        let mut bytes = Tensor::from_i64(vec![1], vec![7]).unwrap().to_bytes();
        bytes.push(0);
        assert!(matches!(Tensor::from_bytes(&bytes), Err(TensorError::PayloadSizeMismatch { .. })));
    }

    #[test]
    fn rejects_unknown_dtype() {
        let mut bytes = Tensor::from_u8(vec![1], vec![1]).unwrap().to_bytes();
        bytes[8] = 9;
        assert!(matches!(Tensor::from_bytes(&bytes), Err(TensorError::UnknownDtype(9))));
    }

    #[test]
    fn constructor_checks_shape() {
        assert!(matches!(Tensor::from_f64(vec![2, 2], vec![1.0; 3]), Err(TensorError::ShapeMismatch { .. })));
        assert!(matches!(Tensor::from_u8(vec![1; 9], vec![0]), Err(TensorError::TooManyDims(9))));
    }

    #[test]
    fn missing_file_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(read_tensor(dir.path().join("nope.ptns")), Err(TensorError::Io { .. })));
    }

    fn arb_tensor() -> impl Strategy<Value = Tensor> {
        prop::collection::vec(0usize..4, 0..4).prop_flat_map(|shape| {
            let n: usize = shape.iter().product();
            let s1 = shape.clone();
            let s2 = shape.clone();
            let s3 = shape.clone();
            let s4 = shape;
            prop_oneof![
                prop::collection::vec(any::<f32>(), n).prop_map(move |v| Tensor::from_f32(s1.clone(), v).unwrap()),
                prop::collection::vec(any::<f64>(), n).prop_map(move |v| Tensor::from_f64(s2.clone(), v).unwrap()),
                prop::collection::vec(any::<u8>(), n).prop_map(move |v| Tensor::from_u8(s3.clone(), v).unwrap()),
                prop::collection::vec(any::<i64>(), n).prop_map(move |v| Tensor::from_i64(s4.clone(), v).unwrap()),
            ]
        })
    }

    proptest! {
        // Compared on the encoded bytes so NaN payloads count as equal.
        #[test]
        fn round_trip_is_bit_exact(t in arb_tensor()) {
            let bytes = t.to_bytes();
            prop_assert_eq!(bytes.len(), t.encoded_len());
            let back = Tensor::from_bytes(&bytes).unwrap();
            prop_assert_eq!(back.shape(), t.shape());
            prop_assert_eq!(back.to_bytes(), bytes);
        }

        #[test]
        fn any_length_change_is_rejected(t in arb_tensor(), extra in 1usize..9) {
            let bytes = t.to_bytes();
            let mut longer = bytes.clone();
            longer.extend(std::iter::repeat_n(0u8, extra));
            prop_assert!(Tensor::from_bytes(&longer).is_err());
            if bytes.len() > extra {
                prop_assert!(Tensor::from_bytes(&bytes[..bytes.len() - extra]).is_err());
            }
        }
    }
}
