//! Matrix persistence.
//!
//! Binary layout: `b"RKDM"`, version byte `1`, flag byte (`0` real, `1`
//! complex), rows and cols as little-endian `u64`, then the column-major
//! payload of little-endian `f64` (complex entries store re then im).
//! A matrix is written as real only when every imaginary part is `+0.0`,
//! so round trips are bit-exact.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use faer::{c64, MatRef};

use crate::error::{Error, Result};
use crate::numerics::CMat;

const MAGIC: &[u8; 4] = b"RKDM";
const VERSION: u8 = 1;
const HEADER_LEN: usize = 4 + 1 + 1 + 8 + 8;

fn stored_as_real(m: MatRef<'_, c64>) -> bool {
    (0..m.ncols()).all(|j| (0..m.nrows()).all(|i| m[(i, j)].im.to_bits() == 0))
}

/// Writes `m` in the binary format.
pub fn write_matrix<W: Write>(m: MatRef<'_, c64>, w: W) -> Result<()> {
    let mut w = BufWriter::new(w);
    let real = stored_as_real(m);
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION, if real { 0 } else { 1 }])?;
    w.write_all(&(m.nrows() as u64).to_le_bytes())?;
    w.write_all(&(m.ncols() as u64).to_le_bytes())?;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            let z = m[(i, j)];
            w.write_all(&z.re.to_le_bytes())?;
            if !real {
                w.write_all(&z.im.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a matrix in the binary format, rejecting trailing bytes.
pub fn read_matrix<R: Read>(mut r: R) -> Result<CMat> {
    let mut header = Vec::with_capacity(HEADER_LEN);
    (&mut r).take(HEADER_LEN as u64).read_to_end(&mut header)?;
    if header.len() < HEADER_LEN {
        return Err(Error::MalformedHeader(format!("expected {HEADER_LEN} header bytes, found {}", header.len())));
    }
    if &header[..4] != MAGIC {
        return Err(Error::MalformedHeader("bad magic bytes".into()));
    }
    if header[4] != VERSION {
        return Err(Error::MalformedHeader(format!("unsupported version {}", header[4])));
    }
    let complex = match header[5] {
        0 => false,
        1 => true,
        f => return Err(Error::MalformedHeader(format!("unknown flag byte {f}"))),
    };
    let rows = u64::from_le_bytes(header[6..14].try_into().expect("8 bytes"));
    let cols = u64::from_le_bytes(header[14..22].try_into().expect("8 bytes"));
    let per_entry: u64 = if complex { 16 } else { 8 };
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(per_entry))
        .filter(|&b| usize::try_from(b).is_ok() && usize::try_from(rows).is_ok() && usize::try_from(cols).is_ok())
        .ok_or(Error::DimensionOverflow { rows, cols })?;

    let mut payload = Vec::new();
    (&mut r).take(expected).read_to_end(&mut payload)?;
    if (payload.len() as u64) < expected {
        return Err(Error::TruncatedPayload { expected, found: payload.len() as u64 });
    }
    let extra = io::copy(&mut r, &mut io::sink())?;
    if extra > 0 {
        return Err(Error::TrailingData(extra));
    }

    let (rows, cols) = (rows as usize, cols as usize);
    let word = |k: usize| f64::from_le_bytes(payload[8 * k..8 * k + 8].try_into().expect("8 bytes"));
    Ok(CMat::from_fn(rows, cols, |i, j| {
        let k = j * rows + i;
        if complex {
            c64::new(word(2 * k), word(2 * k + 1))
        } else {
            c64::new(word(k), 0.0)
        }
    }))
}

/// Saves `m` in the binary format.
pub fn save_matrix(m: MatRef<'_, c64>, path: impl AsRef<Path>) -> Result<()> {
    write_matrix(m, File::create(path)?)
}

/// Loads a matrix; files ending in `.csv` are parsed as CSV, everything
/// else as the binary format.
pub fn load_matrix(path: impl AsRef<Path>) -> Result<CMat> {
    let path = path.as_ref();
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        return load_csv(path);
    }
    read_matrix(BufReader::new(File::open(path)?))
}

/// Parses comma-separated real rows without a header.
pub fn parse_csv(text: &str) -> Result<CMat> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|f| {
                let f = f.trim();
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Csv(format!("line {}: bad value {f:?}", ln + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Csv(format!(
                    "line {}: expected {} fields, found {}",
                    ln + 1,
                    first.len(),
                    row.len()
                )));
            }
        }
        rows.push(row);
    }
    let ncols = rows.first().map_or(0, Vec::len);
    Ok(CMat::from_fn(rows.len(), ncols, |i, j| c64::new(rows[i][j], 0.0)))
}

/// Loads a real CSV matrix.
pub fn load_csv(path: impl AsRef<Path>) -> Result<CMat> {
    parse_csv(&std::fs::read_to_string(path)?)
}

/// Writes a real matrix as CSV; complex entries are rejected.
pub fn save_csv(m: MatRef<'_, c64>, path: impl AsRef<Path>) -> Result<()> {
    if !stored_as_real(m) {
        return Err(Error::Csv("CSV export supports real matrices only".into()));
    }
    let mut w = BufWriter::new(File::create(path)?);
    for i in 0..m.nrows() {
        let line: Vec<String> = (0..m.ncols()).map(|j| format!("{:?}", m[(i, j)].re)).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}
