use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use clap::{Args, ValueEnum};
use spillover::corpus::{Corpus, DocKind};
use spillover::embeddings::EmbeddingSet;
use spillover::measures::{
    write_created_csv, write_measure_csv, ConceptTermList, InnerTopK, MeasureEngine, MeasureParams, MeasureRecord,
};

use crate::config::{parse_years, RunConfig};
use crate::inputs;
use crate::{InputArgs, UsageError};

#[derive(Clone, Copy, ValueEnum)]
pub enum Inner {
    K,
    Rho,
}

#[derive(Clone, Copy, Default, ValueEnum)]
pub enum Receivers {
    /// Every field in the propositional or prescriptive set.
    #[default]
    Sets,
    Omega,
    Lambda,
    /// Every field in the corpus.
    All,
}

#[derive(Args)]
pub struct MeasureArgs {
    #[command(flatten)]
    pub inputs: InputArgs,
    /// Top-k size; a comma-separated list runs a sweep with one file per value.
    #[arg(long, value_delimiter = ',')]
    pub k: Vec<usize>,
    #[arg(long)]
    pub rho: Option<usize>,
    #[arg(long)]
    pub tau: Option<u32>,
    /// Top-k size used for counterfactual terms of the received index.
    #[arg(long, value_enum)]
    pub inner: Option<Inner>,
    /// Keep patents in spillover source pools.
    #[arg(long)]
    pub patent_sources: bool,
    /// Which documents receive measures.
    #[arg(long, value_enum, default_value_t)]
    pub receivers: Receivers,
    /// Only report documents published in this range (lo-hi).
    #[arg(long, value_parser = parse_years)]
    pub years: Option<(i32, i32)>,
    /// JSON list of concept term lists ({name, terms, term_vectors}).
    #[arg(long)]
    pub concepts: Option<std::path::PathBuf>,
}

impl MeasureArgs {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let [k] = self.k[..] {
            cfg.measure.k = k;
        }
        if let Some(r) = self.rho {
            cfg.measure.rho = r;
        }
        if let Some(t) = self.tau {
            cfg.measure.tau = t;
        }
        match self.inner {
            Some(Inner::K) => cfg.measure.inner = InnerTopK::K,
            Some(Inner::Rho) => cfg.measure.inner = InnerTopK::Rho,
            None => {}
        }
        if self.patent_sources {
            cfg.fields.spillover_source_excludes_patents = false;
        }
    }
}

pub fn load_concepts(path: Option<&Path>) -> anyhow::Result<Vec<ConceptTermList>> {
    let Some(path) = path else {
        return Ok(Vec::new());
    };
    inputs::require_file(path)?;
    let mut concepts: Vec<ConceptTermList> = serde_json::from_reader(std::fs::File::open(path)?)
        .map_err(|e| UsageError(format!("invalid concept file `{}`: {e}", path.display())))?;
    for c in &mut concepts {
        c.normalize()?;
    }
    Ok(concepts)
}

/// Positions of documents in the receiver fields, restricted to pool kinds
/// and the optional year range.
pub fn receiver_positions(
    corpus: &Corpus,
    cfg: &RunConfig,
    receivers: Receivers,
    years: Option<(i32, i32)>,
) -> Vec<usize> {
    let fields: BTreeSet<&str> = match receivers {
        Receivers::Sets => cfg.fields.omega.iter().chain(&cfg.fields.lambda).map(String::as_str).collect(),
        Receivers::Omega => cfg.fields.omega.iter().map(String::as_str).collect(),
        Receivers::Lambda => cfg.fields.lambda.iter().map(String::as_str).collect(),
        Receivers::All => corpus.documents().iter().map(|d| d.field.as_str()).collect(),
    };
    (0..corpus.len())
        .filter(|&p| {
            let d = corpus.doc(p);
            fields.contains(d.field.as_str())
                && cfg.engine.pool_kinds.contains(&d.kind)
                && d.kind != DocKind::LexiconEntry
                && !corpus.is_flagged(p)
                && years.is_none_or(|(lo, hi)| d.year >= lo && d.year <= hi)
        })
        .collect()
}

pub fn compute(
    corpus: &Corpus,
    emb: &EmbeddingSet,
    cfg: &RunConfig,
    params: MeasureParams,
    positions: &[usize],
    concepts: &[ConceptTermList],
) -> anyhow::Result<Vec<MeasureRecord>> {
    let engine = MeasureEngine::new(corpus, emb, params, cfg.fields.clone(), cfg.engine.clone())?;
    Ok(engine.records(positions, concepts)?)
}

fn write_tables(dir: &Path, suffix: &str, records: &[MeasureRecord]) -> anyhow::Result<()> {
    let mut w = inputs::create(dir, &format!("measures{suffix}.csv"))?;
    write_measure_csv(&mut w, records)?;
    w.flush()?;
    let mut w = inputs::create(dir, &format!("created{suffix}.csv"))?;
    write_created_csv(&mut w, records)?;
    w.flush()?;
    Ok(())
}

pub fn run(args: &MeasureArgs, cfg: &RunConfig) -> anyhow::Result<()> {
    let corpus = inputs::corpus(cfg)?;
    let emb = inputs::embeddings(cfg, &corpus)?;
    let concepts = load_concepts(args.concepts.as_deref())?;
    let positions = receiver_positions(&corpus, cfg, args.receivers, args.years);
    if args.k.len() > 1 {
        for &k in &args.k {
            let params = MeasureParams { k, ..cfg.measure };
            let records = compute(&corpus, &emb, cfg, params, &positions, &concepts)?;
            write_tables(&cfg.out, &format!("_k{k}"), &records)?;
        }
    } else {
        let records = compute(&corpus, &emb, cfg, cfg.measure, &positions, &concepts)?;
        write_tables(&cfg.out, "", &records)?;
    }
    Ok(())
}
