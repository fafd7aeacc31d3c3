//! File formats: the XVEC embedding container, its CSV fallback, and the
//! manifest JSON Lines file.
//!
//! XVEC layout (all integers little-endian):
//!
//! ```text
//! magic   4 bytes  "XVEC"
//! version u16      1
//! dim     u32      >= 1
//! count   u32      >= 1
//! tag     u32 len + UTF-8 bytes (sid_model_tag)
//! rows    count times: (u32 len + UTF-8 segment_id, dim x f32)
//! ```
//!
//! Values are f32 on disk and promoted to f64 in memory. Writing the same
//! matrix twice produces identical bytes; `read` then `write` reproduces a
//! valid file byte-for-byte.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::corpus::{CorpusManifest, EmbeddingMatrix, SegmentRecord};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"XVEC";
const VERSION: u16 = 1;

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::TruncatedFile(what.to_string()))
}

fn read_u16(r: &mut impl Read, what: &str) -> Result<u16> {
    let mut b = [0u8; 2];
    read_exact(r, &mut b, what)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_string(r: &mut impl Read, what: &str) -> Result<String> {
    let len = read_u32(r, what)? as usize;
    let mut b = vec![0u8; len];
    read_exact(r, &mut b, what)?;
    String::from_utf8(b).map_err(|e| Error::ParseFailure(format!("{what}: {e}")))
}

/// Reads an XVEC container.
pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(Error::BadMagic);
    }
    let version = read_u16(&mut r, "version")?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let dim = read_u32(&mut r, "dim")? as usize;
    let count = read_u32(&mut r, "count")? as usize;
    if dim == 0 || count == 0 {
        return Err(Error::InvalidHeader(format!("dim={dim}, count={count}")));
    }
    let tag = read_string(&mut r, "sid_model_tag")?;

    let mut ids = Vec::with_capacity(count);
    let mut values = Vec::with_capacity(count * dim);
    let mut row_bytes = vec![0u8; dim * 4];
    for row in 0..count {
        let id = read_string(&mut r, &format!("row {row} id"))?;
        read_exact(&mut r, &mut row_bytes, &format!("row {row} values"))?;
        for chunk in row_bytes.chunks_exact(4) {
            let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
            if !v.is_finite() {
                return Err(Error::NonFiniteValue { row, id });
            }
            values.push(v as f64);
        }
        ids.push(id);
    }
    // Trailing bytes mean the header lied about the count.
    let mut extra = [0u8; 1];
    if r.read(&mut extra)
        .map_err(|e| Error::io(path.display().to_string(), e))?
        != 0
    {
        return Err(Error::ParseFailure("trailing bytes after last row".into()));
    }
    EmbeddingMatrix::new(tag, dim, ids, values)
}

/// Writes an XVEC container. Row order follows `emb.ids()`.
pub fn write_embeddings(emb: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if emb.is_empty() {
        return Err(Error::InvalidHeader("count must be >= 1".into()));
    }
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| Error::io(path.display().to_string(), e);

    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io_err)?;
    w.write_all(&(emb.dim() as u32).to_le_bytes()).map_err(io_err)?;
    w.write_all(&(emb.len() as u32).to_le_bytes()).map_err(io_err)?;
    w.write_all(&(emb.sid_model_tag().len() as u32).to_le_bytes())
        .map_err(io_err)?;
    w.write_all(emb.sid_model_tag().as_bytes()).map_err(io_err)?;
    for (i, id) in emb.ids().iter().enumerate() {
        w.write_all(&(id.len() as u32).to_le_bytes()).map_err(io_err)?;
        w.write_all(id.as_bytes()).map_err(io_err)?;
        for &v in emb.row(i) {
            w.write_all(&(v as f32).to_le_bytes()).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

/// Exact on-disk size in bytes of an XVEC file for this matrix.
pub fn xvec_file_size(emb: &EmbeddingMatrix) -> usize {
    let header = 4 + 2 + 4 + 4 + 4 + emb.sid_model_tag().len();
    let rows: usize = emb.ids().iter().map(|id| 4 + id.len()).sum();
    header + rows + emb.len() * emb.dim() * 4
}

/// Reads the CSV fallback: header `segment_id,v0,...,v{d-1}`, one row per
/// segment, values parsed at f32 precision so CSV and binary encodings of
/// the same matrix compare equal.
pub fn read_embeddings_csv(
    path: impl AsRef<Path>,
    dim: usize,
    sid_model_tag: impl Into<String>,
) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);

    let headers = rdr
        .headers()
        .map_err(|e| Error::ParseFailure(e.to_string()))?
        .clone();
    if headers.len() != dim + 1 {
        return Err(Error::DimensionMismatch(format!(
            "header has {} value columns, expected {dim}",
            headers.len().saturating_sub(1)
        )));
    }
    if headers.get(0) != Some("segment_id") {
        return Err(Error::ParseFailure(
            "first header column must be segment_id".into(),
        ));
    }

    let mut ids = Vec::new();
    let mut values = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::ParseFailure(e.to_string()))?;
        if rec.len() != dim + 1 {
            return Err(Error::DimensionMismatch(format!(
                "row {line} has {} values, expected {dim}",
                rec.len().saturating_sub(1)
            )));
        }
        let id = rec[0].to_string();
        for field in rec.iter().skip(1) {
            let v: f32 = field
                .parse()
                .map_err(|e| Error::ParseFailure(format!("row {line}: {e}")))?;
            if !v.is_finite() {
                return Err(Error::NonFiniteValue { row: line, id });
            }
            values.push(v as f64);
        }
        ids.push(id);
    }
    EmbeddingMatrix::new(sid_model_tag, dim, ids, values)
}

/// Writes the CSV fallback. Values are printed as f32 with round-trip
/// precision.
pub fn write_embeddings_csv(emb: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let mut header = vec!["segment_id".to_string()];
    header.extend((0..emb.dim()).map(|i| format!("v{i}")));
    w.write_record(&header)
        .map_err(|e| Error::ParseFailure(e.to_string()))?;
    for (i, id) in emb.ids().iter().enumerate() {
        let mut rec = vec![id.clone()];
        rec.extend(emb.row(i).iter().map(|&v| format!("{}", v as f32)));
        w.write_record(&rec)
            .map_err(|e| Error::ParseFailure(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))
}

/// Reads a manifest from JSON Lines (one `SegmentRecord` per line).
pub fn read_manifest(path: impl AsRef<Path>) -> Result<CorpusManifest> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut records = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SegmentRecord = serde_json::from_str(&line)
            .map_err(|e| Error::ParseFailure(format!("line {}: {e}", n + 1)))?;
        records.push(rec);
    }
    CorpusManifest::build(records)
}

/// Writes a manifest as JSON Lines in canonical segment order.
pub fn write_manifest(manifest: &CorpusManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    for rec in manifest.segments() {
        let line = serde_json::to_string(rec).map_err(|e| Error::ParseFailure(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))
}
