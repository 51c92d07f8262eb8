use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};
use spillover::corpus::{Corpus, DocKind};
use spillover::econometrics::{did_estimate, write_results_csv, DidResult, DidSpec, PanelRow, TreatmentKind};
use spillover::embeddings::EmbeddingSet;
use spillover::measures::{created_spillover, MeasureEngine};
use spillover::similarity::Pool;

use crate::cluster::certain_entries;
use crate::config::{parse_bins, BinList, RunConfig};
use crate::inputs::{self, csv_field, fmt_num, LabelRow};
use crate::{InputArgs, UsageError};

#[derive(Args)]
pub struct DidArgs {
    #[command(flatten)]
    pub inputs: InputArgs,
    /// Ready-made panel CSV (unit,time,outcome,treatment,subject); skips the corpus.
    #[arg(long, conflicts_with_all = ["labels", "assignments"])]
    pub panel: Option<PathBuf>,
    /// Sub-topic labels written by `cluster`.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Lexicon assignments written by `cluster --assign`.
    #[arg(long)]
    pub assignments: Option<PathBuf>,
    /// Largest number of prescriptive lexicon entries a sub-topic may have
    /// and still enter the panel.
    #[arg(long)]
    pub max_lexicon_entries: Option<usize>,
    /// Subject classes to leave out, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub drop_field: Vec<String>,
    /// Treated when the spillover index exceeds 1.
    #[arg(long)]
    pub binary: bool,
    #[arg(long)]
    pub subject_trends: bool,
    #[arg(long)]
    pub shock_year: Option<i32>,
    /// Event-time bins, e.g. 1685-1689,1690-1694.
    #[arg(long, value_parser = parse_bins)]
    pub bins: Option<BinList>,
    /// Index of the omitted bin.
    #[arg(long)]
    pub reference_bin: Option<usize>,
    #[arg(long)]
    pub no_certainty_filter: bool,
    #[arg(long)]
    pub certainty_threshold: Option<f64>,
}

impl DidArgs {
    pub fn apply(&self, cfg: &mut RunConfig) {
        let d = &mut cfg.did;
        if let Some(v) = self.max_lexicon_entries {
            d.max_lexicon_entries = v;
        }
        if !self.drop_field.is_empty() {
            d.drop_fields = self.drop_field.clone();
        }
        if let Some(v) = self.shock_year {
            d.shock_year = v;
        }
        if let Some(b) = &self.bins {
            d.event_bins = b.0.clone();
        }
        if let Some(r) = self.reference_bin {
            d.reference_bin = r;
        }
        if self.no_certainty_filter {
            d.certainty_filter = false;
        }
        if let Some(t) = self.certainty_threshold {
            d.certainty_threshold = t;
        }
    }
}

#[derive(Debug, Deserialize)]
struct AssignmentRow {
    id: String,
    subject: String,
    cluster_id: i32,
}

#[derive(Serialize)]
struct UnitInfo {
    unit: String,
    subject: String,
    titles: usize,
    lexicon_entries: usize,
    spillover: Option<f64>,
    included: bool,
}

#[derive(Serialize)]
struct Report<'a> {
    treatment: TreatmentKind,
    subject_trends: bool,
    rows: usize,
    units: &'a [UnitInfo],
    result: &'a DidResult,
}

fn unit_name(subject: &str, cluster: i32) -> String {
    format!("{subject}#{cluster}")
}

/// Sub-topic panel built from the corpus: mean log innovation of the
/// sub-topic's titles per year, and the mean created spillover of the
/// propositional lexicon entries into the sub-topic.
fn corpus_panel(
    args: &DidArgs,
    cfg: &RunConfig,
    corpus: &Corpus,
    emb: &EmbeddingSet,
) -> anyhow::Result<(Vec<PanelRow>, Vec<UnitInfo>)> {
    let labels_path = args
        .labels
        .as_deref()
        .ok_or_else(|| UsageError("did needs --panel or --labels".into()))?;
    let labels: Vec<LabelRow> = inputs::read_csv(labels_path)?;
    let drop: BTreeSet<&str> = cfg.did.drop_fields.iter().map(String::as_str).collect();

    let mut members: BTreeMap<String, (String, Vec<usize>)> = BTreeMap::new();
    for l in &labels {
        if l.cluster_id < 0 || drop.contains(l.subject.as_str()) || !cfg.fields.lambda.contains(&l.subject) {
            continue;
        }
        let pos = corpus
            .position(&l.id)
            .ok_or_else(|| spillover::Error::Integrity(format!("labelled document `{}` not in metadata", l.id)))?;
        members
            .entry(unit_name(&l.subject, l.cluster_id))
            .or_insert_with(|| (l.subject.clone(), Vec::new()))
            .1
            .push(pos);
    }

    let mut covered: BTreeMap<String, usize> = BTreeMap::new();
    if let Some(path) = &args.assignments {
        let rows: Vec<AssignmentRow> = inputs::read_csv(path)?;
        let kept: BTreeSet<&str> = certain_entries(corpus, cfg).iter().map(|d| d.id.as_str()).collect();
        for a in rows.iter().filter(|a| kept.contains(a.id.as_str())) {
            if cfg.fields.lambda.contains(&a.subject) {
                *covered.entry(unit_name(&a.subject, a.cluster_id)).or_default() += 1;
            }
        }
    }

    let sources: Vec<(&str, i32, &[f32])> = certain_entries(corpus, cfg)
        .into_iter()
        .filter(|d| cfg.fields.omega.contains(&d.field))
        .map(|d| {
            emb.vector(&d.id)
                .map(|v| (d.id.as_str(), d.year, v))
                .ok_or_else(|| spillover::Error::Integrity(format!("no embedding for document `{}`", d.id)))
        })
        .collect::<Result<_, _>>()?;
    if sources.is_empty() {
        return Err(spillover::Error::Data("no propositional lexicon entries to act as spillover sources".into()).into());
    }

    let engine = MeasureEngine::new(corpus, emb, cfg.measure, cfg.fields.clone(), cfg.engine.clone())?;
    let span = (
        cfg.did.event_bins.iter().map(|b| b.lo).min().unwrap_or(i32::MIN),
        cfg.did.event_bins.iter().map(|b| b.hi).max().unwrap_or(i32::MAX),
    );
    let mut rows = Vec::new();
    let mut units = Vec::new();
    for (unit, (subject, positions)) in &members {
        let entries = covered.get(unit).copied().unwrap_or(0);
        let mut info = UnitInfo {
            unit: unit.clone(),
            subject: subject.clone(),
            titles: positions.len(),
            lexicon_entries: entries,
            spillover: None,
            included: false,
        };
        if entries > cfg.did.max_lexicon_entries {
            units.push(info);
            continue;
        }
        let pool = Pool::from_members(
            emb.dim(),
            positions.iter().map(|&p| {
                let d = corpus.doc(p);
                (d.id.clone(), d.year, emb.vector(&d.id).expect("checked against corpus"))
            }),
        )?;
        let values: Vec<f64> = sources
            .iter()
            .filter_map(|(_, year, v)| created_spillover(v, *year, &pool, &cfg.measure).ok()?.value())
            .collect();
        if values.is_empty() {
            tracing::warn!(unit = unit.as_str(), "spillover undefined; sub-topic dropped");
            units.push(info);
            continue;
        }
        let s = values.iter().sum::<f64>() / values.len() as f64;
        info.spillover = Some(s);
        let treatment = if args.binary { s } else { s.ln() };

        let mut by_year: BTreeMap<i32, Vec<f64>> = BTreeMap::new();
        for &p in positions {
            let d = corpus.doc(p);
            if d.kind != DocKind::Title || d.year < span.0 || d.year > span.1 || corpus.is_flagged(p) {
                continue;
            }
            if let Some(v) = engine.innovation(p).ok().and_then(|r| r.value()) {
                by_year.entry(d.year).or_default().push(v.ln());
            }
        }
        for (year, lns) in by_year {
            rows.push(PanelRow {
                unit: unit.clone(),
                time: year,
                outcome: lns.iter().sum::<f64>() / lns.len() as f64,
                treatment,
                subject: Some(subject.clone()),
            });
        }
        info.included = true;
        units.push(info);
    }
    Ok((rows, units))
}

fn write_panel(cfg: &RunConfig, rows: &[PanelRow]) -> anyhow::Result<()> {
    let mut w = inputs::create(&cfg.out, "panel.csv")?;
    writeln!(w, "unit,time,outcome,treatment,subject")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            csv_field(&r.unit),
            r.time,
            fmt_num(r.outcome),
            fmt_num(r.treatment),
            csv_field(r.subject.as_deref().unwrap_or(""))
        )?;
    }
    w.flush()?;
    Ok(())
}

fn write_event_study(cfg: &RunConfig, result: &DidResult) -> anyhow::Result<()> {
    // 90% normal interval
    const Z90: f64 = 1.6448536269514722;
    let mut w = inputs::create(&cfg.out, "event_study.csv")?;
    writeln!(w, "bin,term,estimate,se,p,ci90_lo,ci90_hi,reference")?;
    for t in &result.event_terms {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            t.bin.label(),
            t.term,
            fmt_num(t.estimate),
            fmt_num(t.se),
            fmt_num(t.p),
            fmt_num(t.estimate - Z90 * t.se),
            fmt_num(t.estimate + Z90 * t.se),
            t.reference
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn run(args: &DidArgs, cfg: &RunConfig) -> anyhow::Result<()> {
    let (rows, units) = match &args.panel {
        Some(path) => {
            let drop: BTreeSet<&str> = cfg.did.drop_fields.iter().map(String::as_str).collect();
            let rows: Vec<PanelRow> = inputs::read_csv(path)?;
            let rows = rows
                .into_iter()
                .filter(|r| r.subject.as_deref().is_none_or(|s| !drop.contains(s)))
                .collect();
            (rows, Vec::new())
        }
        None => {
            let corpus = inputs::corpus(cfg)?;
            let emb = inputs::embeddings(cfg, &corpus)?;
            corpus_panel(args, cfg, &corpus, &emb)?
        }
    };
    let mut spec = DidSpec::new(cfg.did.event_bins.clone(), cfg.did.reference_bin);
    spec.treatment = if args.binary {
        TreatmentKind::Binary
    } else {
        TreatmentKind::Continuous
    };
    spec.subject_trends = args.subject_trends;
    spec.small_sample = cfg.regress.small_sample;
    let result = did_estimate(&rows, &spec)?;
    for term in &result.dropped_terms {
        tracing::warn!(term = term.as_str(), "event term not identified; dropped");
    }

    if args.panel.is_none() {
        write_panel(cfg, &rows)?;
    }
    write_event_study(cfg, &result)?;
    let mut w = inputs::create(&cfg.out, "results.csv")?;
    write_results_csv(&mut w, &[("did", &result.regression)])?;
    w.flush()?;
    inputs::write_json(
        &cfg.out,
        "did.json",
        &Report {
            treatment: spec.treatment,
            subject_trends: spec.subject_trends,
            rows: rows.len(),
            units: &units,
            result: &result,
        },
    )
}
