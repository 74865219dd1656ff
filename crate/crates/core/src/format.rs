//! Quantized tensor file (`.ezqt`), little-endian throughout.
//!
//! ```text
//! offset  size          field
//! 0       4             magic "EZQT"
//! 4       4   u32       format version (1)
//! 8       1   u8        bits k
//! 9       3             zero padding
//! 12      4   f32       sigma_n used for outlier detection
//! 16      8   f64       tensor mean
//! 24      8   f64       tensor std (population)
//! 32      8   u64       rows
//! 40      8   u64       cols
//! 48      4*cols f32    per-column scales
//! ..      8   u64       outlier count
//! ..      12*count      (row u32, col u32, value f32), sorted by (row, col)
//! ..      packed levels, see `pack` (k=4: two per byte, else one per byte)
//! ```
//!
//! Nothing may follow the packed levels.

use std::fs;
use std::path::Path;

use crate::error::{Error, FormatError, Result};
use crate::outlier::is_outlier;
use crate::pack::packed_len;
use crate::types::{ChannelScales, OutlierEntry, OutlierSet, QuantConfig, QuantizedWeight};

pub const MAGIC: [u8; 4] = *b"EZQT";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 48;
const OUTLIER_RECORD_LEN: usize = 12;

pub fn encode(q: &QuantizedWeight) -> Result<Vec<u8>> {
    QuantConfig::with_bits(q.bits).validate()?;
    if q.scales.len() != q.cols {
        return Err(Error::Invariant(format!(
            "{} scales for {} columns",
            q.scales.len(),
            q.cols
        )));
    }
    q.outliers.check_bounds(q.rows, q.cols)?;
    let levels_len = packed_len(q.len(), q.bits);
    if q.packed_levels.len() != levels_len {
        return Err(Error::Invariant(format!(
            "{} packed bytes, expected {levels_len}",
            q.packed_levels.len()
        )));
    }
    let o = &q.outliers;
    if let Some(e) = o
        .entries()
        .iter()
        .find(|e| !is_outlier(e.value, o.mean, o.std, o.sigma_n))
    {
        return Err(Error::Invariant(format!(
            "stored outlier ({}, {}) = {} fails the {}-sigma criterion",
            e.row, e.col, e.value, o.sigma_n
        )));
    }

    let mut buf =
        Vec::with_capacity(HEADER_LEN + 4 * q.cols + 8 + OUTLIER_RECORD_LEN * o.len() + levels_len);
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.push(q.bits);
    buf.extend_from_slice(&[0; 3]);
    buf.extend_from_slice(&o.sigma_n.to_le_bytes());
    buf.extend_from_slice(&o.mean.to_le_bytes());
    buf.extend_from_slice(&o.std.to_le_bytes());
    buf.extend_from_slice(&(q.rows as u64).to_le_bytes());
    buf.extend_from_slice(&(q.cols as u64).to_le_bytes());
    for s in q.scales.as_slice() {
        buf.extend_from_slice(&s.to_le_bytes());
    }
    buf.extend_from_slice(&(o.len() as u64).to_le_bytes());
    for e in o.entries() {
        let (row, col) = match (u32::try_from(e.row), u32::try_from(e.col)) {
            (Ok(r), Ok(c)) => (r, c),
            _ => {
                return Err(Error::Invariant(format!(
                    "outlier coordinate ({}, {}) does not fit in u32",
                    e.row, e.col
                )))
            }
        };
        buf.extend_from_slice(&row.to_le_bytes());
        buf.extend_from_slice(&col.to_le_bytes());
        buf.extend_from_slice(&e.value.to_le_bytes());
    }
    buf.extend_from_slice(&q.packed_levels);
    Ok(buf)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, section: &'static str) -> Result<&'a [u8], FormatError> {
        match self.pos.checked_add(n) {
            Some(end) if end <= self.buf.len() => {
                let out = &self.buf[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            _ => Err(FormatError::Truncated {
                section,
                offset: self.buf.len() as u64,
            }),
        }
    }

    fn array<const N: usize>(&mut self, section: &'static str) -> Result<[u8; N], FormatError> {
        Ok(self.take(N, section)?.try_into().expect("length checked"))
    }

    fn u32(&mut self, section: &'static str) -> Result<u32, FormatError> {
        self.array(section).map(u32::from_le_bytes)
    }

    fn u64(&mut self, section: &'static str) -> Result<u64, FormatError> {
        self.array(section).map(u64::from_le_bytes)
    }

    fn f32(&mut self, section: &'static str) -> Result<f32, FormatError> {
        self.array(section).map(f32::from_le_bytes)
    }

    fn f64(&mut self, section: &'static str) -> Result<f64, FormatError> {
        self.array(section).map(f64::from_le_bytes)
    }

    fn offset(&self) -> u64 {
        self.pos as u64
    }
}

fn violation(section: &'static str, offset: u64, detail: impl Into<String>) -> FormatError {
    FormatError::Violation {
        section,
        offset,
        detail: detail.into(),
    }
}

pub fn decode(buf: &[u8]) -> Result<QuantizedWeight, FormatError> {
    let mut r = Reader { buf, pos: 0 };

    let magic: [u8; 4] = r.array("header")?;
    if magic != MAGIC {
        return Err(FormatError::BadMagic { found: magic });
    }
    let version = r.u32("header")?;
    if version != FORMAT_VERSION {
        return Err(FormatError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let bits_at = r.offset();
    let [bits, pad @ ..]: [u8; 4] = r.array("header")?;
    if !(QuantConfig::MIN_BITS..=QuantConfig::MAX_BITS).contains(&bits) {
        return Err(violation(
            "header",
            bits_at,
            format!("bits {bits} out of range"),
        ));
    }
    if pad != [0; 3] {
        return Err(violation("header", bits_at + 1, "nonzero padding"));
    }
    let stats_at = r.offset();
    let sigma_n = r.f32("header")?;
    let mean = r.f64("header")?;
    let std = r.f64("header")?;
    if !(sigma_n.is_finite() && sigma_n >= 0.0 && mean.is_finite() && std.is_finite() && std >= 0.0)
    {
        return Err(violation("header", stats_at, "invalid outlier statistics"));
    }
    let dims_at = r.offset();
    let rows = r.u64("header")?;
    let cols = r.u64("header")?;
    let count = match (usize::try_from(rows), usize::try_from(cols)) {
        (Ok(rows), Ok(cols)) if rows > 0 && cols > 0 => rows.checked_mul(cols),
        _ => None,
    };
    let Some(count) = count else {
        return Err(violation(
            "header",
            dims_at,
            format!("invalid shape {rows}x{cols}"),
        ));
    };
    let (rows, cols) = (rows as usize, cols as usize);

    // Bound allocations by what the buffer can actually hold.
    if cols > buf.len() / 4 {
        return Err(FormatError::Truncated {
            section: "scales",
            offset: buf.len() as u64,
        });
    }
    let mut scales = Vec::with_capacity(cols);
    for _ in 0..cols {
        let at = r.offset();
        let s = r.f32("scales")?;
        if !(s.is_finite() && s > 0.0) {
            return Err(violation(
                "scales",
                at,
                format!("scale {s} is not positive"),
            ));
        }
        scales.push(s);
    }

    let n_outliers = r.u64("outliers")?;
    if n_outliers > (buf.len() / OUTLIER_RECORD_LEN) as u64 {
        return Err(FormatError::Truncated {
            section: "outliers",
            offset: buf.len() as u64,
        });
    }
    let mut entries: Vec<OutlierEntry> = Vec::with_capacity(n_outliers as usize);
    for _ in 0..n_outliers {
        let at = r.offset();
        let row = r.u32("outliers")? as usize;
        let col = r.u32("outliers")? as usize;
        let value = r.f32("outliers")?;
        if row >= rows || col >= cols {
            return Err(violation(
                "outliers",
                at,
                format!("coordinate ({row}, {col}) outside {rows}x{cols}"),
            ));
        }
        if entries.last().is_some_and(|p| (p.row, p.col) >= (row, col)) {
            return Err(FormatError::UnsortedOutliers { offset: at });
        }
        if !is_outlier(value, mean, std, sigma_n) {
            return Err(violation(
                "outliers",
                at,
                format!("value {value} fails the {sigma_n}-sigma criterion"),
            ));
        }
        entries.push(OutlierEntry { row, col, value });
    }

    let levels_at = r.offset();
    let packed = r.take(packed_len(count, bits), "levels")?.to_vec();
    let cfg = QuantConfig::with_bits(bits);
    if bits == 4 {
        if count % 2 == 1 && packed[packed.len() - 1] >> 4 != 0 {
            return Err(violation(
                "levels",
                levels_at + packed.len() as u64 - 1,
                "nonzero padding nibble",
            ));
        }
    } else {
        let max_code = (cfg.l_max() - cfg.l_min()) as u8;
        if let Some(i) = packed.iter().position(|&c| c > max_code) {
            return Err(violation(
                "levels",
                levels_at + i as u64,
                format!("code {} exceeds {bits}-bit range", packed[i]),
            ));
        }
    }
    if r.pos != buf.len() {
        return Err(violation(
            "trailer",
            r.offset(),
            format!("{} unexpected trailing bytes", buf.len() - r.pos),
        ));
    }

    Ok(QuantizedWeight {
        rows,
        cols,
        bits,
        packed_levels: packed,
        scales: ChannelScales::new(scales).expect("scales validated"),
        outliers: OutlierSet::new(entries, mean, std, sigma_n).expect("order validated"),
        errors: None,
    })
}

pub fn write_quantized(q: &QuantizedWeight, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(q)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_quantized(path: impl AsRef<Path>) -> Result<QuantizedWeight> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(decode(&bytes)?)
}
