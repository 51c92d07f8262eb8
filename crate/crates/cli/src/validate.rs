use std::io::Write;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde::Serialize;
use spillover::analysis::{validation_design, Sample};
use spillover::econometrics::{binscatter_residualized, ols_fe, write_results_csv, Binscatter, Factor};
use spillover::embeddings::EmbeddingSet;
use spillover::similarity::diagnostics::{knn_label_accuracy, mean_nn_cosine, pc1_variance_fraction, rank_overlap};

use crate::config::{parse_years, RunConfig};
use crate::inputs::{self, csv_field, fmt_num};
use crate::measure::{compute, receiver_positions, Receivers};
use crate::{InputArgs, UsageError};

#[derive(Clone, Copy, Default, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    /// Anisotropy, neighbor-rank agreement and k-NN label accuracy.
    #[default]
    Diagnostics,
    /// Residualized binscatter of one variable on another.
    Binscatter,
    /// Citations on log innovation with word-count controls and year effects.
    Citations,
}

#[derive(Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub inputs: InputArgs,
    #[arg(long, value_enum, default_value_t)]
    pub mode: Mode,
    /// Baseline embedding for rank overlap (ids file defaults to `.ids`).
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    /// Cap on documents used for diagnostics; larger sets are thinned by stride.
    #[arg(long, default_value_t = 5000)]
    pub max_docs: usize,
    /// CSV table for binscatter; without it, the corpus is used.
    #[arg(long)]
    pub table: Option<PathBuf>,
    #[arg(long, default_value = "ln_y")]
    pub y: String,
    #[arg(long, default_value = "ln_x")]
    pub x: String,
    /// Fixed-effect columns of the table, comma-separated.
    #[arg(long, value_delimiter = ',', default_value = "year")]
    pub fe: Vec<String>,
    #[arg(long, default_value_t = 20)]
    pub n_bins: usize,
    /// Sample years for corpus modes (lo-hi).
    #[arg(long, value_parser = parse_years)]
    pub years: Option<(i32, i32)>,
}

impl ValidateArgs {
    pub fn apply(&self, _cfg: &mut RunConfig) {}
}

fn thin(emb: &EmbeddingSet, max: usize) -> anyhow::Result<EmbeddingSet> {
    if emb.len() <= max || max == 0 {
        return Ok(emb.clone());
    }
    let stride = emb.len().div_ceil(max);
    let ids: Vec<String> = emb.ids().iter().step_by(stride).cloned().collect();
    Ok(emb.select(&ids)?)
}

fn diagnostics(args: &ValidateArgs, cfg: &RunConfig) -> anyhow::Result<()> {
    let (vec, ids) = cfg.embeddings()?;
    let emb = thin(&inputs::embedding_files(vec, &ids)?, args.max_docs)?;
    let labels: Option<Vec<String>> = match &cfg.inputs.metadata {
        Some(_) => {
            let corpus = inputs::corpus(cfg)?;
            let labels = emb
                .ids()
                .iter()
                .map(|id| {
                    corpus
                        .get(id)
                        .map(|d| d.field.clone())
                        .ok_or_else(|| spillover::Error::Integrity(format!("embedding id `{id}` not in metadata")))
                })
                .collect::<Result<_, _>>()?;
            Some(labels)
        }
        None => None,
    };
    let baseline = match &args.baseline {
        Some(p) => {
            let base = inputs::embedding_files(p, &p.with_extension("ids"))?;
            Some(base.select(emb.ids())?)
        }
        None => None,
    };

    let opt = |v: Option<f64>| v.map(fmt_num).unwrap_or_default();
    let mut w = inputs::create(&cfg.out, "diagnostics.csv")?;
    writeln!(w, "embedding,documents,mean_nn_cosine,pc1_variance,rank_overlap_k5,rank_overlap_k10,knn5_accuracy")?;
    let mut row = |name: &str, e: &EmbeddingSet, other: Option<&EmbeddingSet>| -> anyhow::Result<()> {
        let (o5, o10) = match other {
            Some(b) => (Some(rank_overlap(e, b, 5)?), Some(rank_overlap(e, b, 10)?)),
            None => (None, None),
        };
        let knn = match &labels {
            Some(l) => Some(knn_label_accuracy(e, l, 5)?),
            None => None,
        };
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            csv_field(name),
            e.len(),
            fmt_num(mean_nn_cosine(e)?),
            fmt_num(pc1_variance_fraction(e)?),
            opt(o5),
            opt(o10),
            opt(knn)
        )?;
        Ok(())
    };
    row(&vec.display().to_string(), &emb, baseline.as_ref())?;
    if let (Some(b), Some(p)) = (&baseline, &args.baseline) {
        row(&p.display().to_string(), b, Some(&emb))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct BinscatterReport<'a> {
    y: &'a str,
    x: &'a str,
    fixed_effects: &'a [String],
    slope: f64,
    intercept: f64,
    n: usize,
}

fn table_columns(args: &ValidateArgs) -> anyhow::Result<(Vec<f64>, Vec<f64>, Vec<Factor>)> {
    let path = args.table.as_deref().expect("caller checks");
    inputs::require_file(path)?;
    let mut reader = csv::Reader::from_path(path)?;
    let header = reader.headers()?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| UsageError(format!("column `{name}` not in `{}`", path.display())))
    };
    let (yi, xi) = (col(&args.y)?, col(&args.x)?);
    let fei = args.fe.iter().filter(|f| !f.is_empty()).map(|f| col(f)).collect::<Result<Vec<_>, _>>()?;
    let (mut y, mut x, mut fe) = (Vec::new(), Vec::new(), vec![Vec::new(); fei.len()]);
    for (line, rec) in reader.records().enumerate() {
        let rec = rec?;
        let num = |i: usize| -> anyhow::Result<f64> {
            rec[i].trim().parse().map_err(|_| {
                spillover::Error::Parse {
                    line: line + 2,
                    message: format!("`{}` is not a number", &rec[i]),
                }
                .into()
            })
        };
        y.push(num(yi)?);
        x.push(num(xi)?);
        for (col, &i) in fe.iter_mut().zip(&fei) {
            col.push(rec[i].to_string());
        }
    }
    let factors = args
        .fe
        .iter()
        .filter(|f| !f.is_empty())
        .zip(fe)
        .map(|(name, values)| Factor::new(name, values))
        .collect();
    Ok((y, x, factors))
}

/// Log citations on log innovation, residualized for year effects, over
/// documents that carry a positive citation count.
fn corpus_columns(args: &ValidateArgs, cfg: &RunConfig) -> anyhow::Result<(Vec<f64>, Vec<f64>, Vec<Factor>)> {
    let corpus = inputs::corpus(cfg)?;
    let emb = inputs::embeddings(cfg, &corpus)?;
    let positions: Vec<usize> = receiver_positions(&corpus, cfg, Receivers::All, args.years)
        .into_iter()
        .filter(|&p| corpus.doc(p).citations.is_some_and(|c| c > 0.0))
        .collect();
    if positions.is_empty() {
        return Err(spillover::Error::Data("no document carries a positive citations value".into()).into());
    }
    let records = compute(&corpus, &emb, cfg, cfg.measure, &positions, &[])?;
    let (mut y, mut x, mut years) = (Vec::new(), Vec::new(), Vec::new());
    for r in &records {
        let Some(inn) = r.innovation.filter(|v| *v > 0.0) else {
            continue;
        };
        let cites = corpus.get(&r.id).and_then(|d| d.citations).expect("filtered above");
        y.push(cites.ln());
        x.push(inn.ln());
        years.push(r.year);
    }
    Ok((y, x, vec![Factor::new("year", years)]))
}

fn binscatter(args: &ValidateArgs, cfg: &RunConfig) -> anyhow::Result<()> {
    let (y, x, factors) = if args.table.is_some() {
        table_columns(args)?
    } else {
        corpus_columns(args, cfg)?
    };
    let b: Binscatter = binscatter_residualized(&y, &x, &factors, args.n_bins)?;
    let mut w = inputs::create(&cfg.out, "binscatter.csv")?;
    writeln!(w, "bin,x,y,count")?;
    for (i, p) in b.bins.iter().enumerate() {
        writeln!(w, "{i},{},{},{}", fmt_num(p.x), fmt_num(p.y), p.count)?;
    }
    w.flush()?;
    let names: Vec<String> = factors.iter().map(|f| f.name.clone()).collect();
    let (yn, xn) = if args.table.is_some() {
        (args.y.as_str(), args.x.as_str())
    } else {
        ("ln_citations", "ln_innovation")
    };
    inputs::write_json(
        &cfg.out,
        "binscatter.json",
        &BinscatterReport {
            y: yn,
            x: xn,
            fixed_effects: &names,
            slope: b.slope,
            intercept: b.intercept,
            n: b.n,
        },
    )
}

fn citations(args: &ValidateArgs, cfg: &RunConfig) -> anyhow::Result<()> {
    let corpus = inputs::corpus(cfg)?;
    let emb = inputs::embeddings(cfg, &corpus)?;
    let positions: Vec<usize> = receiver_positions(&corpus, cfg, Receivers::All, args.years)
        .into_iter()
        .filter(|&p| corpus.doc(p).citations.is_some())
        .collect();
    if positions.is_empty() {
        return Err(spillover::Error::Data("no document carries a citations value".into()).into());
    }
    let fields: std::collections::BTreeSet<String> = positions.iter().map(|&p| corpus.doc(p).field.clone()).collect();
    let records = compute(&corpus, &emb, cfg, cfg.measure, &positions, &[])?;
    let sample = Sample::new(fields, args.years.unwrap_or((i32::MIN, i32::MAX)));
    let mut design = validation_design(&records, &corpus, &sample)?;
    design.small_sample = cfg.regress.small_sample;
    let result = ols_fe(&design)?;
    let mut w = inputs::create(&cfg.out, "results.csv")?;
    write_results_csv(&mut w, &[("citations", &result)])?;
    w.flush()?;
    inputs::write_json(&cfg.out, "results.json", &result)
}

pub fn run(args: &ValidateArgs, cfg: &RunConfig) -> anyhow::Result<()> {
    match args.mode {
        Mode::Diagnostics => diagnostics(args, cfg),
        Mode::Binscatter => binscatter(args, cfg),
        Mode::Citations => citations(args, cfg),
    }
}
