//! Dense row-major arrays and the `.cpgt` container format.
//!
//! Layout of a `.cpgt` file (all integers little-endian):
//!
//! ```text
//! offset  size      field
//! 0       4         magic "CPGT"
//! 4       1         version (1)
//! 5       1         dtype (0 = f32, 1 = i32)
//! 6       1         ndim
//! 7       1         reserved (0)
//! 8       4*ndim    dims, u32 each
//! ...     4*numel   payload, row-major
//! ```

use std::io::{Read, Write};

use crate::error::{shape_err, Error, Result};

pub const MAGIC: [u8; 4] = *b"CPGT";
pub const VERSION: u8 = 1;
/// Fixed part of the header, before the dims.
pub const HEADER_PREFIX_LEN: usize = 8;

/// Scalar types a [`Tensor`] can hold.
pub trait Element: Copy + Default + Send + Sync + std::fmt::Debug + 'static {
    const DTYPE: DType;
    fn to_le(self) -> [u8; 4];
    fn from_le(bytes: [u8; 4]) -> Self;
    fn bits(self) -> u32;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32,
    I32,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::I32 => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::F32),
            1 => Some(DType::I32),
            _ => None,
        }
    }
}

impl std::fmt::Display for DType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DType::F32 => "f32",
            DType::I32 => "i32",
        })
    }
}

impl Element for f32 {
    const DTYPE: DType = DType::F32;
    fn to_le(self) -> [u8; 4] {
        self.to_le_bytes()
    }
    fn from_le(bytes: [u8; 4]) -> Self {
        f32::from_le_bytes(bytes)
    }
    fn bits(self) -> u32 {
        self.to_bits()
    }
}

impl Element for i32 {
    const DTYPE: DType = DType::I32;
    fn to_le(self) -> [u8; 4] {
        self.to_le_bytes()
    }
    fn from_le(bytes: [u8; 4]) -> Self {
        i32::from_le_bytes(bytes)
    }
    fn bits(self) -> u32 {
        self as u32
    }
}

/// A dense, row-major (innermost axis last) array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    dims: Vec<usize>,
    data: Vec<T>,
}

fn checked_numel(dims: &[usize]) -> Option<usize> {
    dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
}

impl<T: Element> Tensor<T> {
    pub fn new(dims: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if dims.len() > u8::MAX as usize {
            return Err(shape_err(format!(
                "{} axes exceed the 255-axis limit",
                dims.len()
            )));
        }
        if let Some(&d) = dims.iter().find(|&&d| d > u32::MAX as usize) {
            return Err(shape_err(format!("axis length {d} does not fit in u32")));
        }
        let numel = checked_numel(&dims)
            .ok_or_else(|| shape_err(format!("element count of {dims:?} overflows")))?;
        if numel != data.len() {
            return Err(shape_err(format!(
                "dims {dims:?} need {numel} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        let numel = checked_numel(&dims)
            .ok_or_else(|| shape_err(format!("element count of {dims:?} overflows")))?;
        Self::new(dims, vec![T::default(); numel])
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Element-wise equality on the raw bit patterns (NaN-safe).
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.dims == other.dims
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.bits() == b.bits())
    }

    pub fn write_to<W: Write>(&self, mut sink: W) -> Result<()> {
        let mut header = Vec::with_capacity(HEADER_PREFIX_LEN + 4 * self.dims.len());
        header.extend_from_slice(&MAGIC);
        header.push(VERSION);
        header.push(T::DTYPE.code());
        header.push(self.dims.len() as u8);
        header.push(0);
        for &d in &self.dims {
            header.extend_from_slice(&(d as u32).to_le_bytes());
        }
        sink.write_all(&header)?;

        let mut payload = Vec::with_capacity(4 * self.data.len());
        for &x in &self.data {
            payload.extend_from_slice(&x.to_le());
        }
        sink.write_all(&payload)?;
        sink.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out)
            .expect("writing to a Vec cannot fail");
        out
    }
}

/// A tensor of either supported dtype, as decoded from a file.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    I32(Tensor<i32>),
}

impl AnyTensor {
    pub fn dtype(&self) -> DType {
        match self {
            AnyTensor::F32(_) => DType::F32,
            AnyTensor::I32(_) => DType::I32,
        }
    }

    pub fn dims(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.dims(),
            AnyTensor::I32(t) => t.dims(),
        }
    }

    pub fn into_f32(self) -> Result<Tensor<f32>> {
        match self {
            AnyTensor::F32(t) => Ok(t),
            AnyTensor::I32(_) => Err(Error::Data("expected an f32 tensor, found i32".into())),
        }
    }

    pub fn into_i32(self) -> Result<Tensor<i32>> {
        match self {
            AnyTensor::I32(t) => Ok(t),
            AnyTensor::F32(_) => Err(Error::Data("expected an i32 tensor, found f32".into())),
        }
    }

    pub fn write_to<W: Write>(&self, sink: W) -> Result<()> {
        match self {
            AnyTensor::F32(t) => t.write_to(sink),
            AnyTensor::I32(t) => t.write_to(sink),
        }
    }
}

impl From<Tensor<f32>> for AnyTensor {
    fn from(t: Tensor<f32>) -> Self {
        AnyTensor::F32(t)
    }
}

impl From<Tensor<i32>> for AnyTensor {
    fn from(t: Tensor<i32>) -> Self {
        AnyTensor::I32(t)
    }
}

fn read_exact_or_format<R: Read>(src: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    src.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format(format!("truncated {what}")),
        _ => Error::Io(e),
    })
}

fn decode_payload<T: Element>(dims: Vec<usize>, bytes: &[u8]) -> Result<Tensor<T>> {
    let data = bytes
        .chunks_exact(4)
        .map(|c| T::from_le([c[0], c[1], c[2], c[3]]))
        .collect();
    Tensor::new(dims, data)
}

/// Decode one tensor from `source`. Bytes after the payload are left unread.
pub fn read_tensor<R: Read>(mut source: R) -> Result<AnyTensor> {
    let mut prefix = [0u8; HEADER_PREFIX_LEN];
    read_exact_or_format(&mut source, &mut prefix, "header")?;
    if prefix[..4] != MAGIC {
        return Err(Error::Format(format!("bad magic {:02x?}", &prefix[..4])));
    }
    if prefix[4] != VERSION {
        return Err(Error::Unsupported(format!("format version {}", prefix[4])));
    }
    let dtype = DType::from_code(prefix[5])
        .ok_or_else(|| Error::Unsupported(format!("dtype code {}", prefix[5])))?;
    let ndim = prefix[6] as usize;
    if prefix[7] != 0 {
        return Err(Error::Format(format!(
            "reserved byte is {}, expected 0",
            prefix[7]
        )));
    }

    let mut dim_bytes = vec![0u8; 4 * ndim];
    read_exact_or_format(&mut source, &mut dim_bytes, "dims")?;
    let dims: Vec<usize> = dim_bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let payload_len = checked_numel(&dims)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Format(format!("element count of {dims:?} overflows")))?;

    // Grows with the bytes actually present; a lying header cannot force a huge allocation.
    let mut payload = Vec::new();
    (&mut source)
        .take(payload_len as u64)
        .read_to_end(&mut payload)?;
    if payload.len() != payload_len {
        return Err(Error::Format(format!(
            "payload truncated: header declares {} bytes, found {}",
            payload_len,
            payload.len()
        )));
    }

    Ok(match dtype {
        DType::F32 => AnyTensor::F32(decode_payload(dims, &payload)?),
        DType::I32 => AnyTensor::I32(decode_payload(dims, &payload)?),
    })
}

/// Decode a complete buffer; trailing bytes are a format error.
pub fn tensor_from_bytes(bytes: &[u8]) -> Result<AnyTensor> {
    let mut cursor = std::io::Cursor::new(bytes);
    let t = read_tensor(&mut cursor)?;
    let used = cursor.position() as usize;
    if used != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after payload",
            bytes.len() - used
        )));
    }
    Ok(t)
}

pub fn read_tensor_file(path: impl AsRef<std::path::Path>) -> Result<AnyTensor> {
    let bytes = std::fs::read(path)?;
    tensor_from_bytes(&bytes)
}

/// Maps a value to an 8-bit gray level over `[lo, hi]`.
pub fn gray_level(v: f32, lo: f32, hi: f32) -> u8 {
    let t = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
    // NaN falls through clamp; treat it as black.
    if t.is_nan() {
        0
    } else {
        (255.0 * t).round() as u8
    }
}

/// Write a 2-D tensor as a binary (P5) PGM with maxval 255.
pub fn export_pgm<W: Write>(t: &Tensor<f32>, lo: f32, hi: f32, mut sink: W) -> Result<()> {
    let [h, w] = t.dims() else {
        return Err(shape_err(format!(
            "PGM export needs a 2-D tensor, got dims {:?}",
            t.dims()
        )));
    };
    if lo.is_nan() || hi.is_nan() || hi <= lo {
        return Err(Error::Argument(format!(
            "PGM range needs hi > lo, got [{lo}, {hi}]"
        )));
    }
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(t.data().iter().map(|&v| gray_level(v, lo, hi)));
    sink.write_all(&out)?;
    sink.flush()?;
    Ok(())
}
