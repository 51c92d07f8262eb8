//! Regression designs assembled from measure records and document metadata.
//!
//! Shared conventions: innovation and spillover indices enter in natural
//! logs, word count enters in thousands as level and square, subject and
//! year effects are absorbed, and errors cluster by publication year.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{AuthorFlag, Corpus, Document};
use crate::econometrics::{make_period_interactions, zscore_present, Design, Factor, PeriodBin};
use crate::error::{Error, Result};
use crate::measures::MeasureRecord;

/// Where a received-spillover regressor comes from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpilloverSource {
    /// Aggregate over a field set (`omega` or `lambda`).
    Set(String),
    /// A single source field.
    Field(String),
}

impl SpilloverSource {
    pub fn label(&self) -> &str {
        match self {
            SpilloverSource::Set(s) | SpilloverSource::Field(s) => s,
        }
    }

    pub fn raw(&self, record: &MeasureRecord) -> Option<f64> {
        match self {
            SpilloverSource::Set(s) => record.received.get(s).copied().flatten(),
            SpilloverSource::Field(f) => record.received_by_field.get(f).copied().flatten(),
        }
    }
}

fn ln_pos(v: Option<f64>) -> Option<f64> {
    v.filter(|x| *x > 0.0).map(f64::ln)
}

/// Which records enter a regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub receivers: BTreeSet<String>,
    /// Inclusive year range.
    pub years: (i32, i32),
}

impl Sample {
    pub fn new<S: Into<String>>(receivers: impl IntoIterator<Item = S>, years: (i32, i32)) -> Sample {
        Sample {
            receivers: receivers.into_iter().map(Into::into).collect(),
            years,
        }
    }
}

fn select<'a>(
    records: &'a [MeasureRecord],
    corpus: &'a Corpus,
    sample: &Sample,
) -> Result<Vec<(&'a MeasureRecord, &'a Document)>> {
    let mut rows = Vec::new();
    for r in records {
        if !sample.receivers.contains(&r.field) || r.year < sample.years.0 || r.year > sample.years.1 {
            continue;
        }
        let doc = corpus
            .get(&r.id)
            .ok_or_else(|| Error::Integrity(format!("measure record `{}` has no metadata", r.id)))?;
        rows.push((r, doc));
    }
    if rows.is_empty() {
        return Err(Error::Data("no records fall inside the regression sample".into()));
    }
    Ok(rows)
}

fn with_controls(mut design: Design, docs: &[&Document], subject_fe: bool) -> Design {
    let wc: Vec<f64> = docs.iter().map(|d| f64::from(d.word_count) / 1000.0).collect();
    design = design
        .regressor("word_count", wc.iter().map(|&w| Some(w)).collect())
        .regressor("word_count_sq", wc.iter().map(|&w| Some(w * w)).collect());
    if subject_fe {
        design = design.fixed_effect(Factor::new("subject", docs.iter().map(|d| d.field.as_str())));
    }
    let year = Factor::new("year", docs.iter().map(|d| d.year));
    design.fixed_effect(year.clone()).cluster_by(year)
}

/// Log innovation on log received spillover interacted with period
/// indicators.
pub fn spillover_design(
    records: &[MeasureRecord],
    corpus: &Corpus,
    source: &SpilloverSource,
    sample: &Sample,
    bins: &[PeriodBin],
) -> Result<Design> {
    let rows = select(records, corpus, sample)?;
    let y = rows.iter().map(|(r, _)| ln_pos(r.innovation)).collect();
    let x: Vec<Option<f64>> = rows.iter().map(|(r, _)| ln_pos(source.raw(r))).collect();
    let years: Vec<i32> = rows.iter().map(|(r, _)| r.year).collect();
    let mut design = Design::new("ln_innovation", y);
    for (name, col) in make_period_interactions("spill", &x, &years, bins)? {
        design = design.regressor(&name, col);
    }
    let docs: Vec<&Document> = rows.iter().map(|(_, d)| *d).collect();
    Ok(with_controls(design, &docs, true))
}

/// Log innovation on log received spillover interacted with industry
/// indicators, the industry being each document's sub-field.
pub fn industry_design(
    records: &[MeasureRecord],
    corpus: &Corpus,
    source: &SpilloverSource,
    sample: &Sample,
) -> Result<Design> {
    let rows = select(records, corpus, sample)?;
    let y = rows.iter().map(|(r, _)| ln_pos(r.innovation)).collect();
    let industry: Vec<String> = rows
        .iter()
        .map(|(_, d)| d.subfield.clone().unwrap_or_else(|| "unknown".into()))
        .collect();
    let levels: BTreeSet<&str> = industry.iter().map(String::as_str).collect();
    let mut design = Design::new("ln_innovation", y);
    for level in levels {
        let col = rows
            .iter()
            .zip(&industry)
            .map(|((r, _), ind)| ln_pos(source.raw(r)).map(|x| if ind == level { x } else { 0.0 }))
            .collect();
        design = design.regressor(&format!("spill_{level}"), col);
    }
    let docs: Vec<&Document> = rows.iter().map(|(_, d)| *d).collect();
    Ok(with_controls(design, &docs, true))
}

/// Log received spillover on author affiliation indicators.
pub fn mechanism_design(
    records: &[MeasureRecord],
    corpus: &Corpus,
    source: &SpilloverSource,
    sample: &Sample,
    flags: &[AuthorFlag],
) -> Result<Design> {
    let rows = select(records, corpus, sample)?;
    let y = rows.iter().map(|(r, _)| ln_pos(source.raw(r))).collect();
    let mut design = Design::new("ln_received", y);
    for flag in flags {
        let col = rows.iter().map(|(_, d)| Some(f64::from(u8::from(d.has_flag(*flag))))).collect();
        design = design.regressor(flag.as_str(), col);
    }
    let docs: Vec<&Document> = rows.iter().map(|(_, d)| *d).collect();
    Ok(with_controls(design, &docs, true))
}

/// Log innovation on spillover `S`, standardized concept similarity `M`
/// and their product.
pub fn complementarity_design(
    records: &[MeasureRecord],
    corpus: &Corpus,
    source: &SpilloverSource,
    sample: &Sample,
    concept: &str,
) -> Result<Design> {
    let rows = select(records, corpus, sample)?;
    let y = rows.iter().map(|(r, _)| ln_pos(r.innovation)).collect();
    let s: Vec<Option<f64>> = rows.iter().map(|(r, _)| ln_pos(source.raw(r))).collect();
    let m_raw: Vec<Option<f64>> = rows
        .iter()
        .map(|(r, _)| r.concept_sims.get(concept).copied())
        .collect();
    if m_raw.iter().all(Option::is_none) {
        return Err(Error::Config(format!("no concept similarity named `{concept}`")));
    }
    let m = zscore_present(&m_raw)?;
    let sm = s.iter().zip(&m).map(|(a, b)| Some((*a)? * (*b)?)).collect();
    let design = Design::new("ln_innovation", y)
        .regressor("spillover", s)
        .regressor(concept, m)
        .regressor(&format!("spillover_x_{concept}"), sm);
    let docs: Vec<&Document> = rows.iter().map(|(_, d)| *d).collect();
    Ok(with_controls(design, &docs, true))
}

/// Citation count on log innovation with word-count controls and year
/// effects.
pub fn validation_design(records: &[MeasureRecord], corpus: &Corpus, sample: &Sample) -> Result<Design> {
    let rows = select(records, corpus, sample)?;
    if rows.iter().all(|(_, d)| d.citations.is_none()) {
        return Err(Error::Data("no document in the sample carries a citations value".into()));
    }
    let y = rows.iter().map(|(_, d)| d.citations).collect();
    let x = rows.iter().map(|(r, _)| ln_pos(r.innovation)).collect();
    let design = Design::new("citations", y).regressor("ln_innovation", x);
    let docs: Vec<&Document> = rows.iter().map(|(_, d)| *d).collect();
    Ok(with_controls(design, &docs, false))
}
