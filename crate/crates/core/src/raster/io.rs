//! Raster files.
//!
//! GLBR v1 (little-endian):
//!
//! ```text
//! b"GLBR"  u16 version=1  u32 width  u32 height
//! f64 origin_x  f64 origin_y  f64 cell_size  f32 nodata
//! f32 × width·height, row-major
//! ```
//!
//! ESRI ASCII grids are written north row first, so rows are flipped
//! relative to the in-memory south-up order.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{Raster, DEFAULT_NODATA};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"GLBR";
const VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 + 4 + 8 + 8 + 8 + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RasterFormat {
    Glbr,
    AsciiGrid,
}

impl RasterFormat {
    /// `.asc` selects the ASCII grid; anything else is GLBR.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("asc") => RasterFormat::AsciiGrid,
            _ => RasterFormat::Glbr,
        }
    }
}

pub fn read_raster(path: impl AsRef<Path>) -> Result<Raster> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    match RasterFormat::from_path(path) {
        RasterFormat::Glbr => decode_glbr(&bytes),
        RasterFormat::AsciiGrid => decode_ascii(&bytes),
    }
}

pub fn write_raster(r: &Raster, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = match RasterFormat::from_path(path) {
        RasterFormat::Glbr => encode_glbr(r),
        RasterFormat::AsciiGrid => encode_ascii(r),
    };
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_glbr(r: &Raster) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * r.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(r.width() as u32).to_le_bytes());
    out.extend_from_slice(&(r.height() as u32).to_le_bytes());
    out.extend_from_slice(&r.origin_x().to_le_bytes());
    out.extend_from_slice(&r.origin_y().to_le_bytes());
    out.extend_from_slice(&r.cell_size().to_le_bytes());
    out.extend_from_slice(&r.nodata().to_le_bytes());
    for v in r.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let end = self.pos + N;
        if end > self.bytes.len() {
            return Err(Error::format(
                self.bytes.len() as u64,
                format!("truncated while reading {what}"),
            ));
        }
        let mut buf = [0u8; N];
        buf.copy_from_slice(&self.bytes[self.pos..end]);
        self.pos = end;
        Ok(buf)
    }
}

pub fn decode_glbr(bytes: &[u8]) -> Result<Raster> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic: [u8; 4] = cur.take("magic")?;
    if &magic != MAGIC {
        return Err(Error::format(0, format!("bad magic {magic:?}, expected GLBR")));
    }
    let version = u16::from_le_bytes(cur.take("version")?);
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let width = u32::from_le_bytes(cur.take("width")?) as usize;
    let height = u32::from_le_bytes(cur.take("height")?) as usize;
    let origin_x = f64::from_le_bytes(cur.take("origin_x")?);
    let origin_y = f64::from_le_bytes(cur.take("origin_y")?);
    let cell_size = f64::from_le_bytes(cur.take("cell_size")?);
    let nodata = f32::from_le_bytes(cur.take("nodata")?);
    if width == 0 || height == 0 {
        return Err(Error::format(6, format!("empty dimensions {width}×{height}")));
    }
    if !(cell_size.is_finite() && cell_size > 0.0) {
        return Err(Error::format(30, format!("invalid cell size {cell_size}")));
    }
    let n = width * height;
    let expected_len = HEADER_LEN + 4 * n;
    if bytes.len() < expected_len {
        return Err(Error::format(
            bytes.len() as u64,
            format!("truncated: {n} values need {expected_len} bytes"),
        ));
    }
    if bytes.len() > expected_len {
        return Err(Error::format(expected_len as u64, "trailing bytes after values"));
    }
    let mut values = Vec::with_capacity(n);
    for (i, chunk) in bytes[HEADER_LEN..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
        if !v.is_finite() {
            return Err(Error::format(
                (HEADER_LEN + 4 * i) as u64,
                format!("non-finite cell value {v}"),
            ));
        }
        values.push(v);
    }
    Raster::new(width, height, origin_x, origin_y, cell_size, nodata, values)
        .map_err(|e| Error::format(0, e.to_string()))
}

pub fn encode_ascii(r: &Raster) -> Vec<u8> {
    let mut s = String::new();
    s.push_str(&format!("ncols {}\n", r.width()));
    s.push_str(&format!("nrows {}\n", r.height()));
    s.push_str(&format!("xllcorner {}\n", r.origin_x()));
    s.push_str(&format!("yllcorner {}\n", r.origin_y()));
    s.push_str(&format!("cellsize {}\n", r.cell_size()));
    s.push_str(&format!("NODATA_value {}\n", r.nodata()));
    for row in (0..r.height()).rev() {
        let line: Vec<String> = (0..r.width()).map(|c| r.get(row, c).to_string()).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s.into_bytes()
}

/// Whitespace-separated tokens with their byte offsets.
fn tokens(text: &str) -> impl Iterator<Item = (usize, &str)> {
    let mut rest = text;
    let mut offset = 0;
    std::iter::from_fn(move || {
        let skip = rest.len() - rest.trim_start().len();
        offset += skip;
        rest = &rest[skip..];
        if rest.is_empty() {
            return None;
        }
        let len = rest.find(char::is_whitespace).unwrap_or(rest.len());
        let tok = (offset, &rest[..len]);
        offset += len;
        rest = &rest[len..];
        Some(tok)
    })
}

fn parse_num<T: std::str::FromStr>(offset: usize, tok: &str, what: &str) -> Result<T> {
    tok.parse()
        .map_err(|_| Error::format(offset as u64, format!("cannot parse {what} from {tok:?}")))
}

pub fn decode_ascii(bytes: &[u8]) -> Result<Raster> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| Error::format(e.valid_up_to() as u64, "ASCII grid is not valid UTF-8"))?;
    let mut toks = tokens(text).peekable();

    let (mut ncols, mut nrows) = (None, None);
    let (mut x, mut y, mut cellsize) = (None, None, None);
    let mut centered = (false, false);
    let mut nodata = DEFAULT_NODATA;
    while let Some(&(off, key)) = toks.peek() {
        if key.parse::<f64>().is_ok() {
            break;
        }
        toks.next();
        let (voff, val) = toks
            .next()
            .ok_or_else(|| Error::format(off as u64, format!("header key {key} has no value")))?;
        match key.to_ascii_lowercase().as_str() {
            "ncols" => ncols = Some(parse_num::<usize>(voff, val, "ncols")?),
            "nrows" => nrows = Some(parse_num::<usize>(voff, val, "nrows")?),
            "xllcorner" => x = Some(parse_num::<f64>(voff, val, "xllcorner")?),
            "yllcorner" => y = Some(parse_num::<f64>(voff, val, "yllcorner")?),
            "xllcenter" => {
                x = Some(parse_num::<f64>(voff, val, "xllcenter")?);
                centered.0 = true;
            }
            "yllcenter" => {
                y = Some(parse_num::<f64>(voff, val, "yllcenter")?);
                centered.1 = true;
            }
            "cellsize" => cellsize = Some(parse_num::<f64>(voff, val, "cellsize")?),
            "nodata_value" => nodata = parse_num::<f32>(voff, val, "NODATA_value")?,
            other => {
                return Err(Error::format(off as u64, format!("unknown header key {other:?}")))
            }
        }
    }
    let missing = |k: &str| Error::format(0, format!("missing header key {k}"));
    let ncols = ncols.ok_or_else(|| missing("ncols"))?;
    let nrows = nrows.ok_or_else(|| missing("nrows"))?;
    let cellsize = cellsize.ok_or_else(|| missing("cellsize"))?;
    let mut x = x.ok_or_else(|| missing("xllcorner"))?;
    let mut y = y.ok_or_else(|| missing("yllcorner"))?;
    if centered.0 {
        x -= cellsize / 2.0;
    }
    if centered.1 {
        y -= cellsize / 2.0;
    }

    let n = ncols * nrows;
    let mut file_order = Vec::with_capacity(n);
    for (off, tok) in toks.by_ref() {
        if file_order.len() == n {
            return Err(Error::format(off as u64, "more values than ncols×nrows"));
        }
        let v: f32 = parse_num(off, tok, "cell value")?;
        if !v.is_finite() {
            return Err(Error::format(off as u64, format!("non-finite cell value {tok}")));
        }
        file_order.push(v);
    }
    if file_order.len() < n {
        return Err(Error::format(
            bytes.len() as u64,
            format!("expected {n} values, found {}", file_order.len()),
        ));
    }
    let mut values = Vec::with_capacity(n);
    for row in (0..nrows).rev() {
        values.extend_from_slice(&file_order[row * ncols..(row + 1) * ncols]);
    }
    Raster::new(ncols, nrows, x, y, cellsize, nodata, values)
        .map_err(|e| Error::format(0, e.to_string()))
}
