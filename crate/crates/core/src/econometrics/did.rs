//! Event-study difference in differences with unit and time fixed effects.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{bin_of, ols_fe, validate_bins, wald_test, Design, Factor, PeriodBin, RegressionResult, SmallSample, WaldTest};
use crate::error::{Error, Result};

/// One unit-time observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelRow {
    pub unit: String,
    pub time: i32,
    pub outcome: f64,
    /// Continuous intensity, or the raw spillover index for binary treatment.
    pub treatment: f64,
    /// Grouping used for subject-specific trends.
    #[serde(default)]
    pub subject: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreatmentKind {
    #[default]
    Continuous,
    /// Treated when the raw index exceeds 1, i.e. its log is positive.
    Binary,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DidCluster {
    #[default]
    Unit,
    Time,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DidSpec {
    pub event_bins: Vec<PeriodBin>,
    /// Omitted bin; earlier bins form the pre-period.
    pub reference_bin: usize,
    pub treatment: TreatmentKind,
    pub subject_trends: bool,
    /// Also enter the un-interacted treatment level.
    pub include_treatment_level: bool,
    pub cluster: DidCluster,
    pub small_sample: SmallSample,
}

impl DidSpec {
    pub fn new(event_bins: Vec<PeriodBin>, reference_bin: usize) -> DidSpec {
        DidSpec {
            event_bins,
            reference_bin,
            treatment: TreatmentKind::Continuous,
            subject_trends: false,
            include_treatment_level: false,
            cluster: DidCluster::Unit,
            small_sample: SmallSample::Cr1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventTerm {
    pub bin: PeriodBin,
    pub term: String,
    pub estimate: f64,
    pub se: f64,
    pub p: f64,
    pub reference: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DidResult {
    pub regression: RegressionResult,
    /// One entry per bin; the reference bin is reported at zero.
    pub event_terms: Vec<EventTerm>,
    pub pre_test: Option<WaldTest>,
    /// Interaction columns dropped because they were identically zero or
    /// not identified given the fixed effects.
    pub dropped_terms: Vec<String>,
}

/// Name of the interaction term for `bin`.
pub fn event_term_name(bin: &PeriodBin) -> String {
    format!("treat_x_{}_{}", bin.lo, bin.hi)
}

pub fn did_estimate(rows: &[PanelRow], spec: &DidSpec) -> Result<DidResult> {
    validate_bins(&spec.event_bins)?;
    if spec.reference_bin >= spec.event_bins.len() {
        return Err(Error::Config(format!(
            "reference bin {} out of range for {} bins",
            spec.reference_bin,
            spec.event_bins.len()
        )));
    }
    let mut seen = BTreeSet::new();
    for r in rows {
        if !seen.insert((r.unit.as_str(), r.time)) {
            return Err(Error::Data(format!(
                "unit `{}` has more than one row for time {}",
                r.unit, r.time
            )));
        }
    }
    let units: BTreeSet<&str> = rows.iter().map(|r| r.unit.as_str()).collect();
    let times: BTreeSet<i32> = rows.iter().map(|r| r.time).collect();
    if units.len() < 2 || times.len() < 2 {
        return Err(Error::Data(format!(
            "panel needs at least 2 units and 2 periods, found {} and {}",
            units.len(),
            times.len()
        )));
    }

    let d: Vec<f64> = rows
        .iter()
        .map(|r| match spec.treatment {
            TreatmentKind::Continuous => r.treatment,
            TreatmentKind::Binary => f64::from(u8::from(r.treatment > 1.0)),
        })
        .collect();
    let y = rows.iter().map(|r| Some(r.outcome)).collect();
    let unit = Factor::new("unit", rows.iter().map(|r| r.unit.as_str()));
    let time = Factor::new("time", rows.iter().map(|r| r.time));
    let cluster = match spec.cluster {
        DidCluster::Unit => unit.clone(),
        DidCluster::Time => time.clone(),
    };
    let base = Design::new("outcome", y).fixed_effect(unit).fixed_effect(time).cluster_by(cluster);

    let mut dropped_terms = Vec::new();
    let mut kept_terms = Vec::new();
    let mut event_cols = Vec::new();
    for (b, bin) in spec.event_bins.iter().enumerate() {
        if b == spec.reference_bin {
            continue;
        }
        let name = event_term_name(bin);
        let col: Vec<f64> = rows
            .iter()
            .zip(&d)
            .map(|(r, &di)| if bin_of(&spec.event_bins, r.time) == Some(b) { di } else { 0.0 })
            .collect();
        if col.iter().all(|&v| v == 0.0) {
            dropped_terms.push(name);
            continue;
        }
        kept_terms.push((b, name));
        event_cols.push(col);
    }
    let mut extra = Vec::new();
    if spec.include_treatment_level {
        extra.push(("treatment".to_string(), d.clone()));
    }
    if spec.subject_trends {
        let subjects: BTreeSet<&str> = rows
            .iter()
            .map(|r| {
                r.subject
                    .as_deref()
                    .ok_or_else(|| Error::Data(format!("unit `{}` lacks a subject for trends", r.unit)))
            })
            .collect::<Result<_>>()?;
        let tbar = rows.iter().map(|r| f64::from(r.time)).sum::<f64>() / rows.len() as f64;
        for s in subjects.iter().skip(1) {
            let col = rows
                .iter()
                .map(|r| if r.subject.as_deref() == Some(*s) { f64::from(r.time) - tbar } else { 0.0 })
                .collect();
            extra.push((format!("trend_{s}"), col));
        }
    }

    // Event terms not identified given the fixed effects are dropped and the fit repeated.
    let regression = loop {
        let mut design = base.clone();
        design.small_sample = spec.small_sample;
        for ((_, name), col) in kept_terms.iter().zip(&event_cols) {
            design = design.regressor(name, col.iter().map(|&v| Some(v)).collect());
        }
        for (name, col) in &extra {
            design = design.regressor(name, col.iter().map(|&v| Some(v)).collect());
        }
        match ols_fe(&design) {
            Err(Error::Collinearity { column }) if kept_terms.iter().any(|(_, n)| *n == column) => {
                let i = kept_terms.iter().position(|(_, n)| *n == column).expect("checked");
                kept_terms.remove(i);
                event_cols.remove(i);
                dropped_terms.push(column);
            }
            other => break other?,
        }
    };
    let event_terms = spec
        .event_bins
        .iter()
        .enumerate()
        .filter_map(|(b, bin)| {
            let term = event_term_name(bin);
            if b == spec.reference_bin {
                return Some(EventTerm {
                    bin: *bin,
                    term,
                    estimate: 0.0,
                    se: 0.0,
                    p: f64::NAN,
                    reference: true,
                });
            }
            regression.get(&term).map(|c| EventTerm {
                bin: *bin,
                term,
                estimate: c.estimate,
                se: c.se,
                p: c.p,
                reference: false,
            })
        })
        .collect();
    let pre: Vec<&str> = kept_terms
        .iter()
        .filter(|(b, _)| *b < spec.reference_bin)
        .map(|(_, n)| n.as_str())
        .collect();
    let pre_test = if pre.is_empty() {
        None
    } else {
        Some(wald_test(&regression, &pre)?)
    };
    Ok(DidResult {
        regression,
        event_terms,
        pre_test,
        dropped_terms,
    })
}
