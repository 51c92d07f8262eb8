//! `EMB1` embedding matrices and their companion id files.
//!
//! Layout: 4-byte magic `EMB1`, `u32` LE row count, `u32` LE dimension, then
//! `count * dim` `f32` LE values in row-major order. Line `i` of the ids file
//! names row `i`. Rows are re-normalized to unit length on load.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::corpus::Corpus;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"EMB1";

/// Row-aligned matrix of unit-norm vectors keyed by document id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    dim: usize,
    ids: Vec<String>,
    data: Vec<f32>,
    index: HashMap<String, usize>,
}

impl EmbeddingSet {
    /// Build from raw rows, normalizing each. Rejects zero or non-finite rows.
    pub fn from_rows(ids: Vec<String>, dim: usize, mut data: Vec<f32>) -> Result<EmbeddingSet> {
        if dim == 0 {
            return Err(Error::Format("embedding dimension must be positive".into()));
        }
        if data.len() != ids.len() * dim {
            return Err(Error::Format(format!(
                "{} values cannot form {} rows of dimension {dim}",
                data.len(),
                ids.len()
            )));
        }
        for (row, chunk) in data.chunks_exact_mut(dim).enumerate() {
            normalize_row(chunk).map_err(|why| Error::Data(format!("row {row}: {why}")))?;
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::Integrity(format!("duplicate embedding id `{id}`")));
            }
        }
        Ok(EmbeddingSet {
            dim,
            ids,
            data,
            index,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn vector(&self, id: &str) -> Option<&[f32]> {
        self.row_of(id).map(|i| self.row(i))
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }

    /// Every embedding id must name a corpus document.
    pub fn check_against(&self, corpus: &Corpus) -> Result<()> {
        match self.ids.iter().find(|id| corpus.get(id).is_none()) {
            Some(id) => Err(Error::Integrity(format!(
                "embedding id `{id}` has no metadata record"
            ))),
            None => Ok(()),
        }
    }

    /// Subset in the order of `ids`.
    pub fn select(&self, ids: &[String]) -> Result<EmbeddingSet> {
        let mut data = Vec::with_capacity(ids.len() * self.dim);
        for id in ids {
            let v = self
                .vector(id)
                .ok_or_else(|| Error::Integrity(format!("no embedding for `{id}`")))?;
            data.extend_from_slice(v);
        }
        EmbeddingSet::from_rows(ids.to_vec(), self.dim, data)
    }
}

fn normalize_row(row: &mut [f32]) -> std::result::Result<(), &'static str> {
    if row.iter().any(|x| !x.is_finite()) {
        return Err("non-finite value");
    }
    let norm = row
        .iter()
        .map(|&x| f64::from(x) * f64::from(x))
        .sum::<f64>()
        .sqrt();
    if norm == 0.0 {
        return Err("zero-norm vector");
    }
    for x in row.iter_mut() {
        *x = (f64::from(*x) / norm) as f32;
    }
    Ok(())
}

/// Parse the binary matrix only; returns `(count, dim, values)`.
pub fn read_matrix<R: Read>(mut reader: R) -> Result<(usize, usize, Vec<f32>)> {
    let mut header = [0u8; 12];
    reader
        .read_exact(&mut header)
        .map_err(|_| Error::Format("file shorter than the 12-byte header".into()))?;
    if &header[0..4] != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected \"EMB1\"",
            &header[0..4]
        )));
    }
    let count = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let mut body = Vec::new();
    reader.read_to_end(&mut body)?;
    let expected = count
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Format("header count*dim overflows".into()))?;
    if body.len() != expected {
        return Err(Error::Format(format!(
            "header declares {count}x{dim} values ({expected} bytes) but body has {} bytes",
            body.len()
        )));
    }
    let values = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok((count, dim, values))
}

pub fn read_ids<R: Read>(reader: R) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for line in BufReader::new(reader).lines() {
        let line = line?;
        let id = line.trim_end_matches('\r');
        if !id.is_empty() {
            ids.push(id.to_string());
        }
    }
    Ok(ids)
}

pub fn load_embeddings(vec_path: &Path, ids_path: &Path) -> Result<EmbeddingSet> {
    let (count, dim, values) = read_matrix(BufReader::new(std::fs::File::open(vec_path)?))?;
    let ids = read_ids(std::fs::File::open(ids_path)?)?;
    if ids.len() != count {
        return Err(Error::Format(format!(
            "header declares {count} rows but ids file has {} lines",
            ids.len()
        )));
    }
    EmbeddingSet::from_rows(ids, dim, values)
}

pub fn write_matrix<W: Write>(mut writer: W, dim: usize, values: &[f32]) -> Result<()> {
    if dim == 0 || values.len() % dim != 0 {
        return Err(Error::Format("values do not form whole rows".into()));
    }
    let count = values.len() / dim;
    writer.write_all(MAGIC)?;
    writer.write_all(&(count as u32).to_le_bytes())?;
    writer.write_all(&(dim as u32).to_le_bytes())?;
    for v in values {
        writer.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_embeddings(emb: &EmbeddingSet, vec_path: &Path, ids_path: &Path) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(vec_path)?);
    write_matrix(&mut w, emb.dim, &emb.data)?;
    w.flush()?;
    let mut ids = BufWriter::new(std::fs::File::create(ids_path)?);
    for id in &emb.ids {
        writeln!(ids, "{id}")?;
    }
    ids.flush()?;
    Ok(())
}
