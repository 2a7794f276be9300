//! UTCT binary tensor format.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "UTCT"
//!      4     1  version, 0x01
//!      5     1  dtype: 1 = float32, 2 = int32, 3 = uint8
//!      6     1  rank, 1..=4
//!      7     1  reserved, 0x00
//!      8    16  four u32 LE dimension sizes, unused trailing dims = 1
//!     24     8  u64 LE payload byte count
//!     32     -  payload, row-major, little-endian
//! ```

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use utilgate_core::{DType, Error as CoreError, ImportanceMap, Tensor, TensorData};

pub const MAGIC: [u8; 4] = *b"UTCT";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 32;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("bad magic {0:02x?}, expected \"UTCT\"")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    Version(u8),
    #[error("unknown dtype code {0}")]
    DType(u8),
    #[error("rank {0} outside 1..=4")]
    Rank(u8),
    #[error("reserved header byte is {0:#04x}, expected 0")]
    Reserved(u8),
    #[error("size inconsistency: {0}")]
    Size(String),
    #[error("non-finite float at flat index {index}")]
    NonFinite { index: usize },
    #[error("invalid tensor: {0}")]
    Tensor(CoreError),
}

/// Writes `tensor` and returns the number of bytes emitted.
pub fn write_tensor<W: Write>(tensor: &Tensor, mut sink: W) -> io::Result<usize> {
    let mut header = [0u8; HEADER_LEN];
    header[..4].copy_from_slice(&MAGIC);
    header[4] = VERSION;
    header[5] = tensor.dtype().code();
    header[6] = tensor.rank() as u8;
    for slot in 0..4 {
        let dim = tensor.shape().get(slot).copied().unwrap_or(1);
        let dim = u32::try_from(dim).map_err(|_| {
            io::Error::new(io::ErrorKind::InvalidInput, format!("dimension {dim} exceeds u32"))
        })?;
        header[8 + 4 * slot..12 + 4 * slot].copy_from_slice(&dim.to_le_bytes());
    }
    let payload_len = tensor.len() * tensor.dtype().size();
    header[24..32].copy_from_slice(&(payload_len as u64).to_le_bytes());
    sink.write_all(&header)?;

    let mut payload = Vec::with_capacity(payload_len);
    match tensor.data() {
        TensorData::F32(v) => v.iter().for_each(|x| payload.extend_from_slice(&x.to_le_bytes())),
        TensorData::I32(v) => v.iter().for_each(|x| payload.extend_from_slice(&x.to_le_bytes())),
        TensorData::U8(v) => payload.extend_from_slice(v),
    }
    sink.write_all(&payload)?;
    sink.flush()?;
    Ok(HEADER_LEN + payload_len)
}

pub fn encode(tensor: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + tensor.len() * tensor.dtype().size());
    write_tensor(tensor, &mut out).expect("writing to a Vec cannot fail");
    out
}

fn read_full<R: Read>(source: &mut R, buf: &mut [u8]) -> Result<usize, io::Error> {
    let mut filled = 0;
    while filled < buf.len() {
        match source.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

/// Reads one tensor and validates every header field and the payload.
pub fn read_tensor<R: Read>(mut source: R) -> Result<Tensor, FormatError> {
    let mut header = [0u8; HEADER_LEN];
    let got = read_full(&mut source, &mut header)?;
    if got < HEADER_LEN {
        return Err(FormatError::Size(format!("header truncated at {got} of {HEADER_LEN} bytes")));
    }
    let magic: [u8; 4] = header[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(FormatError::BadMagic(magic));
    }
    if header[4] != VERSION {
        return Err(FormatError::Version(header[4]));
    }
    let dtype = DType::from_code(header[5]).ok_or(FormatError::DType(header[5]))?;
    let rank = header[6];
    if !(1..=4).contains(&rank) {
        return Err(FormatError::Rank(rank));
    }
    if header[7] != 0 {
        return Err(FormatError::Reserved(header[7]));
    }
    let dims: Vec<usize> = (0..4)
        .map(|i| u32::from_le_bytes(header[8 + 4 * i..12 + 4 * i].try_into().unwrap()) as usize)
        .collect();
    if dims[rank as usize..].iter().any(|&d| d != 1) {
        return Err(FormatError::Size(format!("unused dimensions {dims:?} must be 1")));
    }
    let shape = dims[..rank as usize].to_vec();
    if shape.contains(&0) {
        return Err(FormatError::Size(format!("zero-sized dimension in {shape:?}")));
    }
    let declared = u64::from_le_bytes(header[24..32].try_into().unwrap());
    let expected = shape
        .iter()
        .try_fold(dtype.size() as u64, |acc, &d| acc.checked_mul(d as u64))
        .ok_or_else(|| FormatError::Size(format!("shape {shape:?} overflows")))?;
    if declared != expected {
        return Err(FormatError::Size(format!(
            "header declares {declared} payload bytes, shape {shape:?} needs {expected}"
        )));
    }
    let mut payload = vec![0u8; expected as usize];
    let got = read_full(&mut source, &mut payload)?;
    if got as u64 != expected {
        return Err(FormatError::Size(format!("payload truncated at {got} of {expected} bytes")));
    }
    let data = match dtype {
        DType::F32 => {
            let values: Vec<f32> = payload
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            if let Some(index) = values.iter().position(|v| !v.is_finite()) {
                return Err(FormatError::NonFinite { index });
            }
            TensorData::F32(values)
        }
        DType::I32 => TensorData::I32(
            payload
                .chunks_exact(4)
                .map(|b| i32::from_le_bytes(b.try_into().unwrap()))
                .collect(),
        ),
        DType::U8 => TensorData::U8(payload),
    };
    Tensor::new(shape, data).map_err(FormatError::Tensor)
}

pub fn decode(bytes: &[u8]) -> Result<Tensor, FormatError> {
    let mut cursor = bytes;
    let tensor = read_tensor(&mut cursor)?;
    if !cursor.is_empty() {
        return Err(FormatError::Size(format!("{} trailing bytes after payload", cursor.len())));
    }
    Ok(tensor)
}

pub fn save(tensor: &Tensor, path: impl AsRef<Path>) -> io::Result<usize> {
    write_tensor(tensor, BufWriter::new(File::create(path)?))
}

/// Loads a whole file; trailing bytes after the payload are an error.
pub fn load(path: impl AsRef<Path>) -> Result<Tensor, FormatError> {
    let mut reader = BufReader::new(File::open(path)?);
    let tensor = read_tensor(&mut reader)?;
    let mut probe = [0u8; 1];
    if read_full(&mut reader, &mut probe)? != 0 {
        return Err(FormatError::Size("trailing bytes after payload".into()));
    }
    Ok(tensor)
}

/// Reads a float32 `[H, W]` map and min-max normalizes it.
pub fn load_importance(path: impl AsRef<Path>) -> Result<ImportanceMap, FormatError> {
    let tensor = load(path)?;
    ImportanceMap::from_tensor(&tensor).map_err(FormatError::Tensor)
}
