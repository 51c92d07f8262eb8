use std::collections::BTreeSet;
use std::io::Write;

use anyhow::Context;
use clap::{Args, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use spillover::analysis::{
    complementarity_design, industry_design, mechanism_design, spillover_design, Sample, SpilloverSource,
};
use spillover::corpus::{AuthorFlag, Corpus};
use spillover::econometrics::{
    fisher_exact_p, ols_fe, validate_bins, write_results_csv, Design, PeriodBin, RegressionResult, SmallSample,
};
use spillover::measures::{MeasureEngine, MeasureRecord};

use crate::config::{parse_bins, parse_years, BinList, RunConfig};
use crate::inputs::{self, csv_field, fmt_num};
use crate::measure::{load_concepts, receiver_positions, Receivers};
use crate::{InputArgs, UsageError};

#[derive(Clone, Copy, Default, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    /// Log innovation on period-interacted log received spillover.
    #[default]
    Spillover,
    /// Spillover design repeated with every placebo field as the source.
    Placebo,
    /// Log received spillover on author affiliation indicators.
    Mechanism,
    /// Spillover, concept similarity and their interaction.
    Complementarity,
    /// Received spillover interacted with sub-field indicators.
    Industry,
    /// Fisher-exact p-value from given estimates.
    Fisher,
}

#[derive(Clone, Copy, Default, PartialEq, Eq, ValueEnum)]
pub enum Direction {
    #[default]
    OmegaToLambda,
    LambdaToOmega,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum SmallSampleArg {
    None,
    Cr1,
}

#[derive(Args)]
pub struct RegressArgs {
    #[command(flatten)]
    pub inputs: InputArgs,
    #[arg(long, value_enum, default_value_t)]
    pub mode: Mode,
    #[arg(long, value_enum, default_value_t)]
    pub direction: Direction,
    /// Use a single source field instead of the whole source set.
    #[arg(long)]
    pub source_field: Option<String>,
    /// Sample years (lo-hi).
    #[arg(long, value_parser = parse_years)]
    pub years: Option<(i32, i32)>,
    /// Period bins, e.g. 1660-1679,1680-1699.
    #[arg(long, value_parser = parse_bins)]
    pub bins: Option<BinList>,
    /// Concept name for the complementarity design.
    #[arg(long)]
    pub concept: Option<String>,
    /// JSON list of concept term lists.
    #[arg(long)]
    pub concepts: Option<std::path::PathBuf>,
    /// Receiving field for the industry design.
    #[arg(long, default_value = "patents")]
    pub industry_field: String,
    /// Original estimate for the Fisher mode.
    #[arg(long, allow_hyphen_values = true)]
    pub original: Option<f64>,
    /// Placebo estimates for the Fisher mode, comma-separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub placebos: Vec<f64>,
    #[arg(long, value_enum)]
    pub small_sample: Option<SmallSampleArg>,
}

impl RegressArgs {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(y) = self.years {
            cfg.regress.years = y;
        }
        if let Some(b) = &self.bins {
            cfg.regress.period_bins = b.0.clone();
        }
        match self.small_sample {
            Some(SmallSampleArg::None) => cfg.regress.small_sample = SmallSample::None,
            Some(SmallSampleArg::Cr1) => cfg.regress.small_sample = SmallSample::Cr1,
            None => {}
        }
    }
}

#[derive(Serialize)]
struct Report<'a> {
    mode: &'a str,
    source: &'a str,
    receivers: Vec<String>,
    years: (i32, i32),
    results: Vec<(&'a str, &'a RegressionResult)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    placebo: Option<&'a PlaceboSweep>,
}

#[derive(Serialize)]
struct PlaceboSweep {
    terms: Vec<String>,
    original: Vec<Option<f64>>,
    /// Per placebo field, the estimate for each term.
    placebos: Vec<(String, Vec<Option<f64>>)>,
    fisher_p: Vec<Option<f64>>,
}

fn fit(mut design: Design, small: SmallSample) -> anyhow::Result<RegressionResult> {
    design.small_sample = small;
    Ok(ols_fe(&design)?)
}

/// Remove period terms that are zero on every complete row, i.e. periods
/// in which no receiver has a defined spillover value.
fn drop_empty_periods(design: Design) -> (Design, Vec<String>) {
    drop_zero_columns(design, |name| name.starts_with("spill_"))
}

fn drop_zero_columns(mut design: Design, eligible: impl Fn(&str) -> bool) -> (Design, Vec<String>) {
    let rows = design.complete_rows();
    let mut dropped = Vec::new();
    design.regressors.retain(|(name, col)| {
        let empty = eligible(name) && rows.iter().all(|&i| col[i] == Some(0.0));
        if empty {
            dropped.push(name.clone());
        }
        !empty
    });
    (design, dropped)
}

/// Fit after dropping unsupported period terms, including ones that turn
/// out collinear with the fixed effects.
fn fit_periods(design: Design, small: SmallSample, label: &str) -> anyhow::Result<RegressionResult> {
    let (mut design, mut dropped) = drop_empty_periods(design);
    design.small_sample = small;
    let mut result = loop {
        match ols_fe(&design) {
            Err(spillover::Error::Collinearity { column }) if column.starts_with("spill_") => {
                design.regressors.retain(|(name, _)| *name != column);
                dropped.push(column);
            }
            other => break other?,
        }
    };
    for term in dropped {
        tracing::warn!(source = label, term = term.as_str(), "period term not identified; dropped");
        result.warnings.push(format!("{term} dropped: not identified in this sample"));
    }
    Ok(result)
}

fn write_outputs(
    cfg: &RunConfig,
    mode: &str,
    source: &SpilloverSource,
    sample: &Sample,
    results: &[(&str, &RegressionResult)],
    placebo: Option<&PlaceboSweep>,
) -> anyhow::Result<()> {
    let mut w = inputs::create(&cfg.out, "results.csv")?;
    write_results_csv(&mut w, results)?;
    w.flush()?;
    let report = Report {
        mode,
        source: source.label(),
        receivers: sample.receivers.iter().cloned().collect(),
        years: sample.years,
        results: results.to_vec(),
        placebo,
    };
    inputs::write_json(&cfg.out, "results.json", &report)
}

fn fisher_only(args: &RegressArgs, cfg: &RunConfig) -> anyhow::Result<()> {
    let original = args
        .original
        .ok_or_else(|| UsageError("--mode fisher needs --original".into()))?;
    if args.placebos.is_empty() {
        return Err(UsageError("--mode fisher needs --placebos".into()).into());
    }
    let p = fisher_exact_p(original, &args.placebos);
    let extreme = args.placebos.iter().filter(|b| b.abs() >= original.abs()).count();
    let mut w = inputs::create(&cfg.out, "fisher.csv")?;
    writeln!(w, "original,placebos,extreme,p")?;
    writeln!(w, "{},{},{extreme},{}", fmt_num(original), args.placebos.len(), fmt_num(p))?;
    w.flush()?;
    Ok(())
}

/// Add received spillover from `field` to every record.
fn inject_column(
    engine: &MeasureEngine<'_>,
    corpus: &Corpus,
    records: &mut [MeasureRecord],
    positions: &[usize],
    field: &str,
) -> anyhow::Result<()> {
    let column = engine.received_column(positions, field)?;
    // Records follow (year, id) order; positions follow corpus order.
    let slot_of: std::collections::HashMap<&str, usize> =
        positions.iter().enumerate().map(|(s, &p)| (corpus.doc(p).id.as_str(), s)).collect();
    for r in records {
        r.received_by_field.insert(field.to_string(), column[slot_of[r.id.as_str()]]);
    }
    Ok(())
}

fn placebo_sweep(
    engine: &MeasureEngine<'_>,
    corpus: &Corpus,
    records: &[MeasureRecord],
    positions: &[usize],
    sample: &Sample,
    bins: &[PeriodBin],
    original: &RegressionResult,
    cfg: &RunConfig,
) -> anyhow::Result<PlaceboSweep> {
    let placebo_fields = cfg.fields.placebo_fields(&corpus.known_fields());
    if placebo_fields.is_empty() {
        return Err(spillover::Error::Data("corpus has no placebo fields outside the two field sets".into()).into());
    }
    let terms: Vec<String> = bins.iter().map(|b| format!("spill_{}_{}", b.lo, b.hi)).collect();
    let placebos = placebo_fields
        .par_iter()
        .map(|field| -> anyhow::Result<(String, Vec<Option<f64>>)> {
            let mut recs = records.to_vec();
            inject_column(engine, corpus, &mut recs, positions, field)?;
            let source = SpilloverSource::Field(field.clone());
            let estimates = match spillover_design(&recs, corpus, &source, sample, bins)
                .map_err(anyhow::Error::from)
                .and_then(|d| fit_periods(d, cfg.regress.small_sample, field))
            {
                Ok(r) => terms.iter().map(|t| r.estimate(t)).collect(),
                Err(e) => {
                    tracing::warn!(field = field.as_str(), "placebo regression failed: {e:#}");
                    vec![None; terms.len()]
                }
            };
            Ok((field.clone(), estimates))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let original_estimates: Vec<Option<f64>> = terms.iter().map(|t| original.estimate(t)).collect();
    let fisher_p = original_estimates
        .iter()
        .enumerate()
        .map(|(i, o)| {
            let o = (*o)?;
            let draws: Vec<f64> = placebos.iter().filter_map(|(_, e)| e[i]).collect();
            (!draws.is_empty()).then(|| fisher_exact_p(o, &draws))
        })
        .collect();
    Ok(PlaceboSweep {
        terms,
        original: original_estimates,
        placebos,
        fisher_p,
    })
}

fn write_placebo_csv(cfg: &RunConfig, sweep: &PlaceboSweep) -> anyhow::Result<()> {
    let opt = |v: &Option<f64>| v.map(fmt_num).unwrap_or_default();
    let mut w = inputs::create(&cfg.out, "placebo.csv")?;
    writeln!(w, "source,{}", sweep.terms.join(","))?;
    for (field, est) in &sweep.placebos {
        writeln!(w, "{},{}", csv_field(field), est.iter().map(opt).collect::<Vec<_>>().join(","))?;
    }
    writeln!(w, "fisher_p,{}", sweep.fisher_p.iter().map(opt).collect::<Vec<_>>().join(","))?;
    w.flush()?;
    Ok(())
}

pub fn run(args: &RegressArgs, cfg: &RunConfig) -> anyhow::Result<()> {
    if args.mode == Mode::Fisher {
        return fisher_only(args, cfg);
    }
    let bins = &cfg.regress.period_bins;
    validate_bins(bins)?;
    let corpus = inputs::corpus(cfg)?;
    let emb = inputs::embeddings(cfg, &corpus)?;
    let concepts = load_concepts(args.concepts.as_deref())?;

    let (receivers, set_name) = match args.direction {
        Direction::OmegaToLambda => (Receivers::Lambda, "omega"),
        Direction::LambdaToOmega => (Receivers::Omega, "lambda"),
    };
    let source = match &args.source_field {
        Some(f) => {
            if !corpus.known_fields().contains(f) {
                return Err(UsageError(format!("unknown source field `{f}`")).into());
            }
            SpilloverSource::Field(f.clone())
        }
        None => SpilloverSource::Set(set_name.into()),
    };
    let receiver_fields: BTreeSet<String> = if args.mode == Mode::Industry {
        [args.industry_field.clone()].into()
    } else {
        match args.direction {
            Direction::OmegaToLambda => cfg.fields.lambda.clone(),
            Direction::LambdaToOmega => cfg.fields.omega.clone(),
        }
    };
    let sample = Sample::new(receiver_fields.iter().cloned(), cfg.regress.years);
    let positions: Vec<usize> = receiver_positions(&corpus, cfg, receivers, Some(cfg.regress.years))
        .into_iter()
        .filter(|&p| receiver_fields.contains(&corpus.doc(p).field))
        .collect();
    if positions.is_empty() {
        return Err(spillover::Error::Data("no receiving documents in the sample".into()).into());
    }
    let engine = MeasureEngine::new(&corpus, &emb, cfg.measure, cfg.fields.clone(), cfg.engine.clone())?;
    let mut records = engine.records(&positions, &concepts).context("computing measures")?;
    if let SpilloverSource::Field(f) = &source {
        if records.iter().all(|r| !r.received_by_field.contains_key(f)) {
            inject_column(&engine, &corpus, &mut records, &positions, f)?;
        }
    }
    let small = cfg.regress.small_sample;

    match args.mode {
        Mode::Spillover | Mode::Placebo => {
            let result = fit_periods(spillover_design(&records, &corpus, &source, &sample, bins)?, small, source.label())?;
            let name = format!("spillover_{}", source.label());
            let sweep = if args.mode == Mode::Placebo {
                let s = placebo_sweep(&engine, &corpus, &records, &positions, &sample, bins, &result, cfg)?;
                write_placebo_csv(cfg, &s)?;
                Some(s)
            } else {
                None
            };
            write_outputs(cfg, "spillover", &source, &sample, &[(&name, &result)], sweep.as_ref())
        }
        Mode::Mechanism => {
            let design = mechanism_design(&records, &corpus, &source, &sample, &AuthorFlag::ALL)?;
            let flags: Vec<&str> = AuthorFlag::ALL.iter().map(|f| f.as_str()).collect();
            let (design, dropped) = drop_zero_columns(design, |n| flags.contains(&n));
            let mut result = fit(design, small)?;
            for term in dropped {
                tracing::warn!(term = term.as_str(), "no document carries this flag; term dropped");
                result.warnings.push(format!("{term} dropped: no document carries this flag"));
            }
            write_outputs(cfg, "mechanism", &source, &sample, &[("mechanism", &result)], None)
        }
        Mode::Complementarity => {
            let concept = args
                .concept
                .clone()
                .or_else(|| (concepts.len() == 1).then(|| concepts[0].name.clone()))
                .ok_or_else(|| UsageError("--mode complementarity needs --concept and --concepts".into()))?;
            let result = fit(complementarity_design(&records, &corpus, &source, &sample, &concept)?, small)?;
            write_outputs(cfg, "complementarity", &source, &sample, &[("complementarity", &result)], None)
        }
        Mode::Industry => {
            let result = fit(industry_design(&records, &corpus, &source, &sample)?, small)?;
            write_outputs(cfg, "industry", &source, &sample, &[("industry", &result)], None)
        }
        Mode::Fisher => unreachable!(),
    }
}
