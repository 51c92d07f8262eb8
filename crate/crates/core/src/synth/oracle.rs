use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};

use crate::corpus::{Corpus, DocKind};
use crate::corpus::FieldSetConfig;
use crate::econometrics::Design;
use crate::embeddings::EmbeddingSet;
use crate::error::{Error, Result};
use crate::measures::{InnerTopK, MeasureParams, MeasureRecord};

fn plain_cosine(a: &[f32], b: &[f32]) -> f64 {
    let mut ab = 0.0f64;
    let mut aa = 0.0f64;
    let mut bb = 0.0f64;
    for i in 0..a.len() {
        let (x, y) = (a[i] as f64, b[i] as f64);
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    ab / (aa.sqrt() * bb.sqrt())
}

/// Mean of the `k` largest cosines between `query` and `pool`, by full
/// pairwise computation and full sort. `None` for an empty pool.
pub fn oracle_topk(query: &[f32], pool: &[&[f32]], k: usize) -> Option<f64> {
    if pool.is_empty() || k == 0 {
        return None;
    }
    let mut sims: Vec<f64> = pool.iter().map(|p| plain_cosine(query, p)).collect();
    sims.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let take = if k < sims.len() { k } else { sims.len() };
    let mut total = 0.0;
    for s in &sims[..take] {
        total += s;
    }
    Some(total / take as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleOptions {
    pub pool_kinds: BTreeSet<DocKind>,
    /// Compute created spillover toward the opposite field set.
    pub created_opposite: bool,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions {
            pool_kinds: [DocKind::Title, DocKind::Patent].into(),
            created_opposite: true,
        }
    }
}

struct Member<'a> {
    id: &'a str,
    year: i32,
    v: &'a [f32],
}

fn ranked<'a>(query: &[f32], members: &[&Member<'a>]) -> Vec<(f64, &'a str, &'a [f32])> {
    let mut out: Vec<(f64, &str, &[f32])> = members.iter().map(|m| (plain_cosine(query, m.v), m.id, m.v)).collect();
    out.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(b.1)));
    out
}

fn mean_top(query: &[f32], members: &[&Member], k: usize) -> Option<f64> {
    if members.is_empty() {
        return None;
    }
    let r = ranked(query, members);
    let take = k.min(r.len());
    Some(r[..take].iter().map(|x| x.0).sum::<f64>() / take as f64)
}

enum Outcome {
    Value(f64, Option<usize>),
    Nonpositive(Option<usize>),
    Undefined(&'static str),
}

fn ratio(num: f64, den: f64, clamp: Option<usize>) -> Outcome {
    if num > 0.0 && den > 0.0 {
        Outcome::Value(num / den, clamp)
    } else {
        Outcome::Nonpositive(clamp)
    }
}

fn record(name: &str, o: Outcome, flags: &mut BTreeSet<String>) -> Option<f64> {
    let clamp = match &o {
        Outcome::Value(_, c) | Outcome::Nonpositive(c) => *c,
        Outcome::Undefined(_) => None,
    };
    if let Some(c) = clamp {
        flags.insert(format!("{name}:rho_clamped_{c}"));
    }
    match o {
        Outcome::Value(v, _) => Some(v),
        Outcome::Nonpositive(_) => {
            flags.insert(format!("{name}:nonpositive"));
            None
        }
        Outcome::Undefined(why) => {
            flags.insert(format!("{name}:{why}"));
            None
        }
    }
}

/// Direct transcription of the innovation, created and received indices:
/// explicit window filters, full sorts, no caching.
pub fn oracle_measures(
    corpus: &Corpus,
    emb: &EmbeddingSet,
    params: &MeasureParams,
    fields: &FieldSetConfig,
    options: &OracleOptions,
    positions: &[usize],
) -> Result<Vec<MeasureRecord>> {
    let tau = params.tau as i32;
    let inner = match params.inner {
        InnerTopK::K => params.k,
        InnerTopK::Rho => params.rho,
    };
    let vec_of = |id: &str| {
        emb.vector(id)
            .ok_or_else(|| Error::Integrity(format!("no embedding for `{id}`")))
    };
    let mut own: BTreeMap<&str, Vec<Member>> = BTreeMap::new();
    let mut source: BTreeMap<&str, Vec<Member>> = BTreeMap::new();
    let mut known: BTreeSet<&str> = BTreeSet::new();
    for (pos, d) in corpus.documents().iter().enumerate() {
        known.insert(d.field.as_str());
        if corpus.is_flagged(pos) || !options.pool_kinds.contains(&d.kind) {
            continue;
        }
        let m = || -> Result<Member> {
            Ok(Member {
                id: &d.id,
                year: d.year,
                v: vec_of(&d.id)?,
            })
        };
        own.entry(&d.field).or_default().push(m()?);
        if !(fields.spillover_source_excludes_patents && d.kind == DocKind::Patent) {
            source.entry(&d.field).or_default().push(m()?);
        }
    }
    let empty: Vec<Member> = Vec::new();
    let backward = |pool: &'_ Vec<Member<'_>>, t: i32| -> Vec<usize> {
        (0..pool.len()).filter(|&i| pool[i].year >= t - tau && pool[i].year <= t - 1).collect()
    };
    let forward = |pool: &'_ Vec<Member<'_>>, t: i32| -> Vec<usize> {
        (0..pool.len()).filter(|&i| pool[i].year >= t + 1 && pool[i].year <= t + tau).collect()
    };
    let fwd_bwd = |q: &[f32], pool: &Vec<Member>, t: i32| -> Outcome {
        let f: Vec<&Member> = forward(pool, t).into_iter().map(|i| &pool[i]).collect();
        let b: Vec<&Member> = backward(pool, t).into_iter().map(|i| &pool[i]).collect();
        if f.is_empty() {
            return Outcome::Undefined("empty_forward_pool");
        }
        if b.is_empty() {
            return Outcome::Undefined("empty_backward_pool");
        }
        ratio(mean_top(q, &f, params.k).unwrap(), mean_top(q, &b, params.k).unwrap(), None)
    };

    let mut out = Vec::with_capacity(positions.len());
    for &pos in positions {
        let d = corpus.doc(pos);
        let q = vec_of(&d.id)?;
        let mut flags = BTreeSet::new();
        let own_pool = own.get(d.field.as_str()).unwrap_or(&empty);
        let innovation = record("innovation", fwd_bwd(q, own_pool, d.year), &mut flags);

        let mut received = BTreeMap::new();
        let mut received_sources = BTreeMap::new();
        let mut received_by_field = BTreeMap::new();
        for (set_name, set) in [("omega", &fields.omega), ("lambda", &fields.lambda)] {
            let mut defined = Vec::new();
            for s in set {
                if *s == d.field || !known.contains(s.as_str()) {
                    continue;
                }
                let src = source.get(s.as_str()).unwrap_or(&empty);
                let src_past: Vec<&Member> = backward(src, d.year).into_iter().map(|i| &src[i]).collect();
                let own_past: Vec<&Member> = backward(own_pool, d.year)
                    .into_iter()
                    .map(|i| &own_pool[i])
                    .filter(|m| m.id != d.id)
                    .collect();
                let o = if src_past.is_empty() {
                    Outcome::Undefined("empty_source_pool")
                } else if own_past.is_empty() {
                    Outcome::Undefined("no_counterfactuals")
                } else {
                    let cfs = ranked(q, &own_past);
                    let used = params.rho.min(cfs.len());
                    let mut den = 0.0;
                    for c in &cfs[..used] {
                        den += mean_top(c.2, &src_past, inner).unwrap();
                    }
                    den /= used as f64;
                    let num = mean_top(q, &src_past, params.k).unwrap();
                    ratio(num, den, (used < params.rho).then_some(used))
                };
                let v = record(&format!("recv[{s}]"), o, &mut flags);
                received_by_field.insert(s.clone(), v);
                if let Some(v) = v {
                    defined.push(v);
                }
            }
            if defined.is_empty() {
                received.insert(set_name.to_string(), None);
                received_sources.insert(set_name.to_string(), 0);
            } else {
                let mean = defined.iter().sum::<f64>() / defined.len() as f64;
                received.insert(set_name.to_string(), Some(mean));
                received_sources.insert(set_name.to_string(), defined.len());
            }
        }

        let mut created = BTreeMap::new();
        if options.created_opposite {
            let targets = if fields.omega.contains(&d.field) {
                Some(&fields.lambda)
            } else if fields.lambda.contains(&d.field) {
                Some(&fields.omega)
            } else {
                None
            };
            for t in targets.into_iter().flatten() {
                if *t == d.field || !known.contains(t.as_str()) {
                    continue;
                }
                let pool = own.get(t.as_str()).unwrap_or(&empty);
                let v = record(&format!("created[{t}]"), fwd_bwd(q, pool, d.year), &mut flags);
                created.insert(t.clone(), v);
            }
        }

        out.push(MeasureRecord {
            id: d.id.clone(),
            year: d.year,
            field: d.field.clone(),
            innovation,
            received,
            received_sources,
            received_by_field,
            created,
            concept_sims: BTreeMap::new(),
            flags,
        });
    }
    out.sort_by(|a, b| (a.year, &a.id).cmp(&(b.year, &b.id)));
    Ok(out)
}

/// Reference least-squares fit with every fixed effect expanded into
/// dummies (first level dropped, common intercept kept).
#[derive(Debug, Clone, PartialEq)]
pub struct OracleFit {
    pub terms: Vec<String>,
    pub coefficients: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Heteroskedasticity-robust errors scaled by `N / (N - K)`.
    pub hc1_se: Vec<f64>,
}

impl OracleFit {
    pub fn get(&self, term: &str) -> Option<f64> {
        self.terms.iter().position(|t| t == term).map(|i| self.coefficients[i])
    }
}

pub fn oracle_ols(design: &Design) -> Result<OracleFit> {
    let n_all = design.response.len();
    let mut rows = Vec::new();
    for i in 0..n_all {
        let mut ok = matches!(design.response[i], Some(v) if v.is_finite());
        for (_, c) in &design.regressors {
            ok &= matches!(c[i], Some(v) if v.is_finite());
        }
        if ok {
            rows.push(i);
        }
    }
    let n = rows.len();
    let mut names: Vec<String> = Vec::new();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    if design.fe_factors.is_empty() {
        names.push("intercept".into());
    }
    for (name, c) in &design.regressors {
        names.push(name.clone());
        cols.push(rows.iter().map(|&i| c[i].unwrap()).collect());
    }
    let reported = names.len();
    let mut all_cols = Vec::new();
    if design.fe_factors.is_empty() {
        all_cols.push(vec![1.0; n]);
    }
    all_cols.extend(cols);
    if !design.fe_factors.is_empty() {
        all_cols.push(vec![1.0; n]);
    }
    for f in &design.fe_factors {
        let labels: Vec<&str> = rows.iter().map(|&i| f.level_of(i)).collect();
        let mut levels: Vec<&str> = labels.clone();
        levels.sort();
        levels.dedup();
        for lvl in levels.iter().skip(1) {
            all_cols.push(labels.iter().map(|l| if l == lvl { 1.0 } else { 0.0 }).collect());
        }
    }
    let k = all_cols.len();
    if n <= k {
        return Err(Error::Data("too few rows for the dummy expansion".into()));
    }
    let x = DMatrix::from_fn(n, k, |i, j| all_cols[j][i]);
    let y = DVector::from_iterator(n, rows.iter().map(|&i| design.response[i].unwrap()));
    let svd = x.clone().svd(true, true);
    let beta = svd
        .solve(&y, 1e-12)
        .map_err(|e| Error::Inference(format!("dummy solve failed: {e}")))?;
    let resid = &y - &x * &beta;
    let xtx_inv = (x.transpose() * &x)
        .try_inverse()
        .ok_or_else(|| Error::Collinearity {
            column: "dummy expansion".into(),
        })?;
    let mut meat = DMatrix::<f64>::zeros(k, k);
    for i in 0..n {
        let row = x.row(i);
        meat += row.transpose() * row * (resid[i] * resid[i]);
    }
    let v = &xtx_inv * meat * &xtx_inv * (n as f64 / (n - k) as f64);
    Ok(OracleFit {
        terms: names,
        coefficients: beta.iter().take(reported).copied().collect(),
        residuals: resid.iter().copied().collect(),
        hc1_se: (0..reported).map(|j| v[(j, j)].sqrt()).collect(),
    })
}
