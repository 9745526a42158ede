//! ATSF binary matrix files.
//!
//! Layout: 4-byte magic `ATSF`, u32 LE version (currently 1), u64 LE rows,
//! u64 LE dim, then rows*dim float32 LE values in row-major order. Used for
//! feature corpora, attribute matrices, detector banks and graph dumps.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"ATSF";
pub const VERSION: u32 = 1;

pub fn write_matrix(path: &Path, rows: usize, cols: usize, values: &[f64]) -> Result<()> {
    assert_eq!(values.len(), rows * cols, "value count must match header");
    let ctx = || format!("writing {}", path.display());
    let file = File::create(path).map_err(|e| Error::io(ctx(), e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&MAGIC).map_err(|e| Error::io(ctx(), e))?;
    w.write_all(&VERSION.to_le_bytes())
        .map_err(|e| Error::io(ctx(), e))?;
    w.write_all(&(rows as u64).to_le_bytes())
        .map_err(|e| Error::io(ctx(), e))?;
    w.write_all(&(cols as u64).to_le_bytes())
        .map_err(|e| Error::io(ctx(), e))?;
    for v in values {
        w.write_all(&(*v as f32).to_le_bytes())
            .map_err(|e| Error::io(ctx(), e))?;
    }
    w.flush().map_err(|e| Error::io(ctx(), e))
}

#[derive(Debug)]
pub struct MatrixFile {
    pub rows: usize,
    pub cols: usize,
    /// Row-major values widened back to f64.
    pub values: Vec<f64>,
}

pub fn read_matrix(path: &Path) -> Result<MatrixFile> {
    if !path.exists() {
        return Err(Error::MissingFile(path.display().to_string()));
    }
    let ctx = || format!("reading {}", path.display());
    let file = File::open(path).map_err(|e| Error::io(ctx(), e))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| Error::io(ctx(), e))?;
    if magic != MAGIC {
        return Err(Error::BadMagic {
            path: path.display().to_string(),
            found: magic,
        });
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf).map_err(|e| Error::io(ctx(), e))?;
    let version = u32::from_le_bytes(u32buf);
    if version != VERSION {
        return Err(Error::VersionMismatch {
            path: path.display().to_string(),
            found: version,
            expected: VERSION,
        });
    }
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u64buf).map_err(|e| Error::io(ctx(), e))?;
    let rows = u64::from_le_bytes(u64buf) as usize;
    r.read_exact(&mut u64buf).map_err(|e| Error::io(ctx(), e))?;
    let cols = u64::from_le_bytes(u64buf) as usize;

    let mut raw = Vec::new();
    r.read_to_end(&mut raw).map_err(|e| Error::io(ctx(), e))?;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::ShapeMismatch("matrix size overflows".into()))?;
    if raw.len() != expected {
        return Err(Error::ShapeMismatch(format!(
            "{}: payload holds {} bytes, header declares {} ({}x{} f32)",
            path.display(),
            raw.len(),
            expected,
            rows,
            cols
        )));
    }
    let values = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok(MatrixFile { rows, cols, values })
}

/// Round to the nearest f32 and back; values that survive this are stored
/// losslessly by the ATSF format.
pub fn quantize_f32(x: f64) -> f64 {
    x as f32 as f64
}
