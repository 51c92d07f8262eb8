//! Loading inputs and writing output files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::Context;
use serde::Deserialize;
use spillover::corpus::{load_metadata, Corpus};
use spillover::embeddings::{load_embeddings, EmbeddingSet};

use crate::config::RunConfig;
use crate::UsageError;

pub fn require_file(path: &Path) -> anyhow::Result<()> {
    if !path.is_file() {
        return Err(UsageError(format!("input file `{}` does not exist", path.display())).into());
    }
    Ok(())
}

pub fn corpus(cfg: &RunConfig) -> anyhow::Result<Corpus> {
    let path = cfg.metadata()?;
    require_file(path)?;
    let corpus = load_metadata(path, &cfg.range_policy).with_context(|| format!("loading `{}`", path.display()))?;
    const SHOWN: usize = 5;
    for w in corpus.warnings().iter().take(SHOWN) {
        tracing::warn!(line = w.line, "{}", w.message);
    }
    if corpus.warnings().len() > SHOWN {
        tracing::warn!("{} further metadata warnings", corpus.warnings().len() - SHOWN);
    }
    Ok(corpus)
}

pub fn embeddings(cfg: &RunConfig, corpus: &Corpus) -> anyhow::Result<EmbeddingSet> {
    let (vec, ids) = cfg.embeddings()?;
    let emb = embedding_files(vec, &ids)?;
    emb.check_against(corpus)?;
    Ok(emb)
}

pub fn embedding_files(vec: &Path, ids: &Path) -> anyhow::Result<EmbeddingSet> {
    require_file(vec)?;
    require_file(ids)?;
    load_embeddings(vec, ids).with_context(|| format!("loading `{}`", vec.display()))
}

pub fn create(dir: &Path, name: &str) -> anyhow::Result<BufWriter<File>> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    let f = File::create(&path).with_context(|| format!("creating `{}`", path.display()))?;
    Ok(BufWriter::new(f))
}

pub fn write_json<T: serde::Serialize>(dir: &Path, name: &str, value: &T) -> anyhow::Result<()> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<Vec<T>> {
    require_file(path)?;
    let mut reader = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for (i, r) in reader.deserialize().enumerate() {
        rows.push(r.map_err(|e| spillover::Error::Parse {
            line: i + 2,
            message: format!("{}: {e}", path.display()),
        })?);
    }
    Ok(rows)
}

/// Label rows written by the `cluster` subcommand.
#[derive(Debug, Clone, Deserialize)]
pub struct LabelRow {
    pub id: String,
    pub subject: String,
    pub cluster_id: i32,
}

pub fn fmt_num(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else {
        String::new()
    }
}

pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
