//! Minimal reader/writer for the NPY binary array format (version 1.0).
//!
//! Only what the pipeline needs: C-ordered little-endian `f64` arrays with a
//! shape header. Files written here load with `numpy.load`, and the reader
//! accepts any conforming `<f8` NPY 1.0 file.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{MalsiamError, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 6] = b"\x93NUMPY";

/// Serialize a tensor to NPY bytes.
pub fn to_bytes(t: &Tensor) -> Vec<u8> {
    let shape_str = match t.shape.len() {
        0 => "()".to_string(),
        1 => format!("({},)", t.shape[0]),
        _ => format!(
            "({})",
            t.shape
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(", ")
        ),
    };
    let mut header = format!("{{'descr': '<f8', 'fortran_order': False, 'shape': {shape_str}, }}");
    // Pad with spaces so the data section starts on a 64-byte boundary;
    // the header must end with a newline.
    let prefix_len = MAGIC.len() + 2 + 2; // magic + version + u16 length
    let total = prefix_len + header.len() + 1;
    let padding = (64 - total % 64) % 64;
    header.extend(std::iter::repeat(' ').take(padding));
    header.push('\n');

    let mut out = Vec::with_capacity(prefix_len + header.len() + t.data.len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]); // version 1.0
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for v in &t.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parse a tensor from NPY bytes.
pub fn from_bytes(bytes: &[u8]) -> Result<Tensor> {
    let bad = |msg: &str| MalsiamError::Data(format!("npy: {msg}"));
    if bytes.len() < 10 || &bytes[..6] != MAGIC {
        return Err(bad("missing magic"));
    }
    if bytes[6] != 1 {
        return Err(bad("unsupported major version"));
    }
    let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let header_end = 10 + header_len;
    if bytes.len() < header_end {
        return Err(bad("truncated header"));
    }
    let header = std::str::from_utf8(&bytes[10..header_end])
        .map_err(|_| bad("header is not utf-8"))?;

    if !header.contains("'descr': '<f8'") {
        return Err(bad("only little-endian f64 ('<f8') is supported"));
    }
    if !header.contains("'fortran_order': False") {
        return Err(bad("only C-ordered arrays are supported"));
    }
    let open = header.find('(').ok_or_else(|| bad("missing shape tuple"))?;
    let close = header[open..]
        .find(')')
        .map(|i| open + i)
        .ok_or_else(|| bad("unterminated shape tuple"))?;
    let shape: Vec<usize> = header[open + 1..close]
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>().map_err(|_| bad("bad shape entry")))
        .collect::<Result<_>>()?;

    let numel: usize = shape.iter().product();
    let data_bytes = &bytes[header_end..];
    if data_bytes.len() != numel * 8 {
        return Err(bad(&format!(
            "expected {} data bytes for shape {:?}, found {}",
            numel * 8,
            shape,
            data_bytes.len()
        )));
    }
    let data = data_bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Tensor { data, shape })
}

/// Write a tensor to an NPY file.
pub fn write(path: &Path, t: &Tensor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&to_bytes(t))?;
    Ok(())
}

/// Read a tensor from an NPY file.
pub fn read(path: &Path) -> Result<Tensor> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    from_bytes(&bytes)
}
