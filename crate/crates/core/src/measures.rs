//! Innovation, created-spillover and received-spillover indices.
//!
//! All three are ratios of k-top similarities. A ratio is reported only
//! when both parts are strictly positive; otherwise it is excluded under
//! the log policy. Empty pools make a measure undefined. Both cases
//! surface as absent values, never as sentinels.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, DocKind, FieldSetConfig, ViewSpec};
use crate::embeddings::EmbeddingSet;
use crate::error::{Error, Result};
use crate::similarity::{
    self, build_field_pool, diagnostics::mean_cosine_to, Pool, WindowSpec,
};

/// Which top-k size the counterfactual terms of the received-spillover
/// denominator use against the source past.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerTopK {
    #[default]
    K,
    Rho,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeasureParams {
    pub k: usize,
    pub rho: usize,
    pub tau: u32,
    pub inner: InnerTopK,
}

impl Default for MeasureParams {
    fn default() -> Self {
        MeasureParams {
            k: 20,
            rho: 20,
            tau: 20,
            inner: InnerTopK::K,
        }
    }
}

impl MeasureParams {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.rho == 0 || self.tau == 0 {
            return Err(Error::Config("k, rho and tau must be positive".into()));
        }
        Ok(())
    }

    fn inner_k(&self) -> usize {
        match self.inner {
            InnerTopK::K => self.k,
            InnerTopK::Rho => self.rho,
        }
    }
}

/// Numerator and denominator of a similarity ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ratio {
    pub numerator: f64,
    pub denominator: f64,
    /// Counterfactuals actually used, when fewer than `rho` were available.
    pub rho_clamped: Option<usize>,
}

impl Ratio {
    /// The ratio, or `None` when either part is nonpositive.
    pub fn value(&self) -> Option<f64> {
        (self.numerator > 0.0 && self.denominator > 0.0).then(|| self.numerator / self.denominator)
    }
}

fn forward_backward_ratio(
    query: &[f32],
    year: i32,
    pool: &Pool,
    params: &MeasureParams,
) -> Result<Ratio> {
    let forward = pool.window(&WindowSpec::forward(year, params.tau));
    let backward = pool.window(&WindowSpec::backward(year, params.tau));
    if forward.is_empty() {
        return Err(Error::UndefinedMeasure("empty forward pool".into()));
    }
    if backward.is_empty() {
        return Err(Error::UndefinedMeasure("empty backward pool".into()));
    }
    Ok(Ratio {
        numerator: similarity::topk_mean_similarity(query, &forward, params.k)?,
        denominator: similarity::topk_mean_similarity(query, &backward, params.k)?,
        rho_clamped: None,
    })
}

/// Forward over backward k-top similarity within the document's own field.
/// `own_field` holds every document of that field.
pub fn innovation_index(
    query: &[f32],
    year: i32,
    own_field: &Pool,
    params: &MeasureParams,
) -> Result<Ratio> {
    forward_backward_ratio(query, year, own_field, params)
}

/// Forward over backward k-top similarity against another field's pools.
pub fn created_spillover(
    query: &[f32],
    year: i32,
    target_field: &Pool,
    params: &MeasureParams,
) -> Result<Ratio> {
    forward_backward_ratio(query, year, target_field, params)
}

/// Similarity of a document to the source field's past, relative to the
/// same similarity of its `rho` nearest own-field past counterfactuals.
pub fn received_spillover(
    query: &[f32],
    id: &str,
    year: i32,
    own_field: &Pool,
    source_field: &Pool,
    params: &MeasureParams,
) -> Result<Ratio> {
    let mut cache = HashMap::new();
    received_with_cache(query, id, year, own_field, source_field, params, &mut cache)
}

/// `cache` maps own-field pool positions to their source-past similarity;
/// it is valid only for one `(year, source_field, own_field)` triple.
fn received_with_cache(
    query: &[f32],
    id: &str,
    year: i32,
    own_field: &Pool,
    source_field: &Pool,
    params: &MeasureParams,
    cache: &mut HashMap<usize, f64>,
) -> Result<Ratio> {
    let window = WindowSpec::backward(year, params.tau);
    let source_past = source_field.window(&window);
    if source_past.is_empty() {
        return Err(Error::UndefinedMeasure("empty source backward pool".into()));
    }
    let own_past = own_field.window(&window);
    let counterfactuals = similarity::top_k_excluding(query, &own_past, params.rho, id)?;
    if counterfactuals.is_empty() {
        return Err(Error::UndefinedMeasure("no own-field counterfactuals".into()));
    }
    let numerator = similarity::topk_mean_similarity(query, &source_past, params.k)?;
    let inner_k = params.inner_k();
    let mut total = 0.0;
    for &(pos, _) in &counterfactuals {
        let value = match cache.get(&pos) {
            Some(&v) => v,
            None => {
                let v = similarity::topk_mean_similarity(
                    own_past.vector(pos),
                    &source_past,
                    inner_k,
                )?;
                cache.insert(pos, v);
                v
            }
        };
        total += value;
    }
    let used = counterfactuals.len();
    Ok(Ratio {
        numerator,
        denominator: total / used as f64,
        rho_clamped: (used < params.rho).then_some(used),
    })
}

/// Mean of the defined per-source values with the number of contributors.
pub fn aggregate_received<I>(values: I) -> Result<(f64, usize)>
where
    I: IntoIterator<Item = Option<f64>>,
{
    let defined: Vec<f64> = values.into_iter().flatten().collect();
    if defined.is_empty() {
        return Err(Error::UndefinedMeasure(
            "no source field yields a defined received spillover".into(),
        ));
    }
    Ok((defined.iter().sum::<f64>() / defined.len() as f64, defined.len()))
}

/// Named concept described by a list of term embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptTermList {
    pub name: String,
    pub terms: Vec<String>,
    pub term_vectors: Vec<Vec<f32>>,
}

impl ConceptTermList {
    /// Validates that terms and vectors align and normalizes the vectors.
    pub fn new(name: impl Into<String>, terms: Vec<String>, term_vectors: Vec<Vec<f32>>) -> Result<Self> {
        let mut c = ConceptTermList {
            name: name.into(),
            terms,
            term_vectors,
        };
        c.normalize()?;
        Ok(c)
    }

    pub fn normalize(&mut self) -> Result<()> {
        if self.term_vectors.is_empty() || self.terms.len() != self.term_vectors.len() {
            return Err(Error::Data(format!(
                "concept `{}` needs at least one term with one vector per term",
                self.name
            )));
        }
        for v in &mut self.term_vectors {
            let n = v.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
            if n == 0.0 || !n.is_finite() {
                return Err(Error::Data(format!("concept `{}` has a zero term vector", self.name)));
            }
            v.iter_mut().for_each(|x| *x = (f64::from(*x) / n) as f32);
        }
        Ok(())
    }
}

/// Mean cosine between a document vector and each term of `concept`.
pub fn concept_similarity(query: &[f32], concept: &ConceptTermList) -> Result<f64> {
    mean_cosine_to(query, &concept.term_vectors)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LogValue {
    Ln(f64),
    Excluded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogPolicyOutcome {
    /// `None` for entries that were absent on input.
    pub values: Vec<Option<LogValue>>,
    pub excluded: usize,
}

impl LogPolicyOutcome {
    pub fn ln_values(&self) -> Vec<Option<f64>> {
        self.values
            .iter()
            .map(|v| match v {
                Some(LogValue::Ln(x)) => Some(*x),
                _ => None,
            })
            .collect()
    }
}

/// Natural log of strictly positive values; nonpositive values are excluded
/// and counted.
pub fn log_policy<I>(values: I) -> LogPolicyOutcome
where
    I: IntoIterator<Item = Option<f64>>,
{
    let values: Vec<Option<LogValue>> = values
        .into_iter()
        .map(|v| {
            v.map(|x| {
                if x > 0.0 && x.is_finite() {
                    LogValue::Ln(x.ln())
                } else {
                    LogValue::Excluded
                }
            })
        })
        .collect();
    let excluded = values
        .iter()
        .filter(|v| matches!(v, Some(LogValue::Excluded)))
        .count();
    LogPolicyOutcome { values, excluded }
}

pub const OMEGA: &str = "omega";
pub const LAMBDA: &str = "lambda";

/// Per-document measures. Raw (pre-log) values are stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureRecord {
    pub id: String,
    pub year: i32,
    pub field: String,
    pub innovation: Option<f64>,
    /// Aggregated received spillover per source set (`omega`, `lambda`).
    pub received: BTreeMap<String, Option<f64>>,
    pub received_sources: BTreeMap<String, usize>,
    /// Per-source-field received spillover.
    pub received_by_field: BTreeMap<String, Option<f64>>,
    pub created: BTreeMap<String, Option<f64>>,
    pub concept_sims: BTreeMap<String, f64>,
    pub flags: BTreeSet<String>,
}

/// Which created-spillover targets to compute per document.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CreatedTargets {
    /// Ω documents target each λ field and vice versa.
    #[default]
    OppositeSet,
    None,
    Fields(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineOptions {
    /// Document kinds that enter pools.
    pub pool_kinds: BTreeSet<DocKind>,
    pub created_targets: CreatedTargets,
}

impl Default for EngineOptions {
    fn default() -> Self {
        EngineOptions {
            pool_kinds: [DocKind::Title, DocKind::Patent].into(),
            created_targets: CreatedTargets::OppositeSet,
        }
    }
}

/// Precomputed per-field pools over one corpus and embedding set.
pub struct MeasureEngine<'a> {
    corpus: &'a Corpus,
    emb: &'a EmbeddingSet,
    params: MeasureParams,
    fields: FieldSetConfig,
    options: EngineOptions,
    own_pools: BTreeMap<String, Pool>,
    source_pools: BTreeMap<String, Pool>,
}

fn set_name_of<'f>(fields: &'f FieldSetConfig, name: &str) -> Option<&'f BTreeSet<String>> {
    match name {
        OMEGA => Some(&fields.omega),
        LAMBDA => Some(&fields.lambda),
        _ => None,
    }
}

fn reason(err: &Error) -> &'static str {
    match err {
        Error::UndefinedMeasure(msg) if msg.contains("forward") => "empty_forward_pool",
        Error::UndefinedMeasure(msg) if msg.contains("source") => "empty_source_pool",
        Error::UndefinedMeasure(msg) if msg.contains("counterfactual") => "no_counterfactuals",
        Error::UndefinedMeasure(_) => "empty_backward_pool",
        _ => "error",
    }
}

impl<'a> MeasureEngine<'a> {
    pub fn new(
        corpus: &'a Corpus,
        emb: &'a EmbeddingSet,
        params: MeasureParams,
        fields: FieldSetConfig,
        options: EngineOptions,
    ) -> Result<Self> {
        params.validate()?;
        fields.validate()?;
        let mut source_kinds = options.pool_kinds.clone();
        if fields.spillover_source_excludes_patents {
            source_kinds.remove(&DocKind::Patent);
        }
        let (lo, hi) = corpus
            .documents()
            .iter()
            .fold((i32::MAX, i32::MIN), |(lo, hi), d| (lo.min(d.year), hi.max(d.year)));
        let mut own_pools = BTreeMap::new();
        let mut source_pools = BTreeMap::new();
        for field in corpus.known_fields() {
            let kinds: Vec<DocKind> = options.pool_kinds.iter().copied().collect();
            let view = corpus.view(&ViewSpec::new([field.clone()], (lo, hi), &kinds))?;
            own_pools.insert(field.clone(), build_field_pool(&view, emb)?);
            let kinds: Vec<DocKind> = source_kinds.iter().copied().collect();
            let view = corpus.view(&ViewSpec::new([field.clone()], (lo, hi), &kinds))?;
            source_pools.insert(field, build_field_pool(&view, emb)?);
        }
        Ok(MeasureEngine {
            corpus,
            emb,
            params,
            fields,
            options,
            own_pools,
            source_pools,
        })
    }

    pub fn params(&self) -> &MeasureParams {
        &self.params
    }

    pub fn field_sets(&self) -> &FieldSetConfig {
        &self.fields
    }

    pub fn own_pool(&self, field: &str) -> Option<&Pool> {
        self.own_pools.get(field)
    }

    fn vector(&self, pos: usize) -> Result<&'a [f32]> {
        let doc = self.corpus.doc(pos);
        self.emb
            .vector(&doc.id)
            .ok_or_else(|| Error::Integrity(format!("no embedding for document `{}`", doc.id)))
    }

    fn pool(&self, pools: &'a BTreeMap<String, Pool>, field: &str) -> Result<&'a Pool> {
        pools
            .get(field)
            .ok_or_else(|| Error::Config(format!("unknown field label `{field}`")))
    }

    pub fn innovation(&self, pos: usize) -> Result<Ratio> {
        let doc = self.corpus.doc(pos);
        let own = self.pool(&self.own_pools, &doc.field)?;
        innovation_index(self.vector(pos)?, doc.year, own, &self.params)
    }

    pub fn created(&self, pos: usize, target: &str) -> Result<Ratio> {
        let doc = self.corpus.doc(pos);
        let pool = self.pool(&self.own_pools, target)?;
        created_spillover(self.vector(pos)?, doc.year, pool, &self.params)
    }

    pub fn received(&self, pos: usize, source: &str) -> Result<Ratio> {
        let mut cache = HashMap::new();
        self.received_cached(pos, source, &mut cache)
    }

    fn received_cached(
        &self,
        pos: usize,
        source: &str,
        cache: &mut HashMap<usize, f64>,
    ) -> Result<Ratio> {
        let doc = self.corpus.doc(pos);
        let own = self.pool(&self.own_pools, &doc.field)?;
        let src = self.pool(&self.source_pools, source)?;
        received_with_cache(self.vector(pos)?, &doc.id, doc.year, own, src, &self.params, cache)
    }

    /// Received spillover from a single field for each receiver, `None` when
    /// undefined or excluded. Output order follows `receivers`.
    pub fn received_column(&self, receivers: &[usize], source: &str) -> Result<Vec<Option<f64>>> {
        self.pool(&self.source_pools, source)?;
        let groups = group_by_field_year(self.corpus, receivers);
        let mut out: Vec<(usize, Option<f64>)> = groups
            .par_iter()
            .map(|members| {
                let mut cache = HashMap::new();
                members
                    .iter()
                    .map(|&(slot, pos)| {
                        let v = match self.received_cached(pos, source, &mut cache) {
                            Ok(r) => r.value(),
                            Err(Error::UndefinedMeasure(_)) => None,
                            Err(e) => return Err(e),
                        };
                        Ok((slot, v))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect();
        out.sort_by_key(|&(slot, _)| slot);
        Ok(out.into_iter().map(|(_, v)| v).collect())
    }

    fn created_targets_for(&self, field: &str) -> Vec<String> {
        let known = |f: &&String| self.own_pools.contains_key(*f) && f.as_str() != field;
        match &self.options.created_targets {
            CreatedTargets::None => Vec::new(),
            CreatedTargets::Fields(list) => list.iter().filter(known).cloned().collect(),
            CreatedTargets::OppositeSet => {
                if self.fields.omega.contains(field) {
                    self.fields.lambda.iter().filter(known).cloned().collect()
                } else if self.fields.lambda.contains(field) {
                    self.fields.omega.iter().filter(known).cloned().collect()
                } else {
                    Vec::new()
                }
            }
        }
    }

    /// Full measure records for `positions`, ordered by (year, id).
    pub fn records(
        &self,
        positions: &[usize],
        concepts: &[ConceptTermList],
    ) -> Result<Vec<MeasureRecord>> {
        let groups = group_by_field_year(self.corpus, positions);
        let mut records: Vec<MeasureRecord> = groups
            .par_iter()
            .map(|members| {
                let mut caches: HashMap<String, HashMap<usize, f64>> = HashMap::new();
                members
                    .iter()
                    .map(|&(_, pos)| self.record(pos, concepts, &mut caches))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect();
        records.sort_by(|a, b| a.year.cmp(&b.year).then_with(|| a.id.cmp(&b.id)));
        Ok(records)
    }

    fn record(
        &self,
        pos: usize,
        concepts: &[ConceptTermList],
        caches: &mut HashMap<String, HashMap<usize, f64>>,
    ) -> Result<MeasureRecord> {
        let doc = self.corpus.doc(pos);
        let mut flags = BTreeSet::new();
        let settle = |name: &str, r: Result<Ratio>, flags: &mut BTreeSet<String>| -> Result<Option<f64>> {
            match r {
                Ok(ratio) => {
                    if let Some(used) = ratio.rho_clamped {
                        flags.insert(format!("{name}:rho_clamped_{used}"));
                    }
                    let v = ratio.value();
                    if v.is_none() {
                        flags.insert(format!("{name}:nonpositive"));
                    }
                    Ok(v)
                }
                Err(e @ Error::UndefinedMeasure(_)) => {
                    flags.insert(format!("{name}:{}", reason(&e)));
                    Ok(None)
                }
                Err(e) => Err(e),
            }
        };

        let innovation = settle("innovation", self.innovation(pos), &mut flags)?;

        let mut received = BTreeMap::new();
        let mut received_sources = BTreeMap::new();
        let mut received_by_field = BTreeMap::new();
        for set_name in [OMEGA, LAMBDA] {
            let sources = set_name_of(&self.fields, set_name).unwrap();
            let mut values = Vec::new();
            for source in sources {
                if source == &doc.field || !self.source_pools.contains_key(source) {
                    continue;
                }
                let cache = caches.entry(source.clone()).or_default();
                let r = self.received_cached(pos, source, cache);
                let v = settle(&format!("recv[{source}]"), r, &mut flags)?;
                received_by_field.insert(source.clone(), v);
                values.push(v);
            }
            match aggregate_received(values) {
                Ok((mean, n)) => {
                    received.insert(set_name.to_string(), Some(mean));
                    received_sources.insert(set_name.to_string(), n);
                }
                Err(_) => {
                    received.insert(set_name.to_string(), None);
                    received_sources.insert(set_name.to_string(), 0);
                }
            }
        }

        let mut created = BTreeMap::new();
        for target in self.created_targets_for(&doc.field) {
            let v = settle(&format!("created[{target}]"), self.created(pos, &target), &mut flags)?;
            created.insert(target, v);
        }

        let mut concept_sims = BTreeMap::new();
        for c in concepts {
            concept_sims.insert(c.name.clone(), concept_similarity(self.vector(pos)?, c)?);
        }

        Ok(MeasureRecord {
            id: doc.id.clone(),
            year: doc.year,
            field: doc.field.clone(),
            innovation,
            received,
            received_sources,
            received_by_field,
            created,
            concept_sims,
            flags,
        })
    }
}

/// Groups `(slot, position)` pairs by (field, year), in canonical key order.
fn group_by_field_year(corpus: &Corpus, positions: &[usize]) -> Vec<Vec<(usize, usize)>> {
    let mut groups: BTreeMap<(&str, i32), Vec<(usize, usize)>> = BTreeMap::new();
    for (slot, &pos) in positions.iter().enumerate() {
        let d = corpus.doc(pos);
        groups.entry((d.field.as_str(), d.year)).or_default().push((slot, pos));
    }
    groups.into_values().collect()
}

/// Ln of an optional raw value under the log policy.
pub fn ln_or_none(v: Option<f64>) -> Option<f64> {
    v.filter(|x| *x > 0.0 && x.is_finite()).map(f64::ln)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Writes the per-document measure table. Concept columns follow the
/// concept order of the first record.
pub fn write_measure_csv<W: Write>(mut w: W, records: &[MeasureRecord]) -> Result<()> {
    let concepts: Vec<String> = records
        .first()
        .map(|r| r.concept_sims.keys().cloned().collect())
        .unwrap_or_default();
    let mut header = vec![
        "id",
        "year",
        "field",
        "innovation_raw",
        "innovation_ln",
        "recv_omega_raw",
        "recv_omega_ln",
        "recv_lambda_raw",
        "recv_lambda_ln",
    ]
    .into_iter()
    .map(String::from)
    .collect::<Vec<_>>();
    header.extend(concepts.iter().map(|c| csv_field(&format!("concept_{c}"))));
    header.push("excluded_flags".into());
    writeln!(w, "{}", header.join(","))?;
    for r in records {
        let omega = r.received.get(OMEGA).copied().flatten();
        let lambda = r.received.get(LAMBDA).copied().flatten();
        let mut row = vec![
            csv_field(&r.id),
            r.year.to_string(),
            csv_field(&r.field),
            fmt_opt(r.innovation),
            fmt_opt(ln_or_none(r.innovation)),
            fmt_opt(omega),
            fmt_opt(ln_or_none(omega)),
            fmt_opt(lambda),
            fmt_opt(ln_or_none(lambda)),
        ];
        for c in &concepts {
            row.push(fmt_opt(r.concept_sims.get(c).copied()));
        }
        row.push(csv_field(&r.flags.iter().cloned().collect::<Vec<_>>().join(";")));
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Long-format created-spillover table: one row per (document, target).
pub fn write_created_csv<W: Write>(mut w: W, records: &[MeasureRecord]) -> Result<()> {
    writeln!(w, "id,year,field,target,created_raw,created_ln")?;
    for r in records {
        for (target, v) in &r.created {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                csv_field(&r.id),
                r.year,
                csv_field(&r.field),
                csv_field(target),
                fmt_opt(*v),
                fmt_opt(ln_or_none(*v))
            )?;
        }
    }
    Ok(())
}
