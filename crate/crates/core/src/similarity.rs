//! Windowed pools and the k-top mean cosine similarity kernel.
//!
//! A pool is an ordered set of `(id, year, vector)` members sorted by
//! `(year, id)`. Similarities are accumulated in `f64`; the top-k members
//! are selected by descending similarity with ties going to the
//! lexicographically smallest id, and summed in that canonical order so the
//! result does not depend on pool input order or on worker scheduling.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::CorpusView;
use crate::embeddings::EmbeddingSet;
use crate::error::{Error, Result};

pub mod diagnostics;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Backward,
    Forward,
}

/// `backward` covers `[t0 - tau, t0 - 1]`, `forward` covers `[t0 + 1, t0 + tau]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct WindowSpec {
    pub t0: i32,
    pub tau: u32,
    pub direction: Direction,
}

impl WindowSpec {
    pub fn backward(t0: i32, tau: u32) -> WindowSpec {
        WindowSpec {
            t0,
            tau,
            direction: Direction::Backward,
        }
    }

    pub fn forward(t0: i32, tau: u32) -> WindowSpec {
        WindowSpec {
            t0,
            tau,
            direction: Direction::Forward,
        }
    }

    /// Inclusive year bounds.
    pub fn bounds(&self) -> (i32, i32) {
        let tau = self.tau as i32;
        match self.direction {
            Direction::Backward => (self.t0 - tau, self.t0 - 1),
            Direction::Forward => (self.t0 + 1, self.t0 + tau),
        }
    }

    pub fn contains(&self, year: i32) -> bool {
        let (lo, hi) = self.bounds();
        lo <= year && year <= hi
    }

    pub fn reversed(&self) -> WindowSpec {
        let direction = match self.direction {
            Direction::Backward => Direction::Forward,
            Direction::Forward => Direction::Backward,
        };
        WindowSpec { direction, ..*self }
    }
}

/// Owned pool of unit vectors ordered by `(year, id)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pool {
    dim: usize,
    ids: Vec<String>,
    years: Vec<i32>,
    data: Vec<f32>,
    sq_norms: Vec<f64>,
    rank: Vec<u32>,
}

impl Pool {
    /// Build from members in any order; they are sorted into canonical order.
    pub fn from_members<'v, I>(dim: usize, members: I) -> Result<Pool>
    where
        I: IntoIterator<Item = (String, i32, &'v [f32])>,
    {
        let mut items: Vec<(String, i32, &[f32])> = members.into_iter().collect();
        for (_, _, v) in &items {
            if v.len() != dim {
                return Err(Error::Shape {
                    expected: dim,
                    found: v.len(),
                });
            }
        }
        items.sort_by(|a, b| a.1.cmp(&b.1).then_with(|| a.0.cmp(&b.0)));

        let mut by_id: Vec<usize> = (0..items.len()).collect();
        by_id.sort_by(|&a, &b| items[a].0.cmp(&items[b].0));
        let mut rank = vec![0u32; items.len()];
        for (r, &i) in by_id.iter().enumerate() {
            rank[i] = r as u32;
        }

        let mut pool = Pool {
            dim,
            ids: Vec::with_capacity(items.len()),
            years: Vec::with_capacity(items.len()),
            data: Vec::with_capacity(items.len() * dim),
            sq_norms: Vec::with_capacity(items.len()),
            rank,
        };
        for (id, year, v) in items {
            pool.ids.push(id);
            pool.years.push(year);
            pool.sq_norms.push(sq_norm(v));
            pool.data.extend_from_slice(v);
        }
        Ok(pool)
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

    pub fn view(&self) -> PoolView<'_> {
        self.slice(0, self.len())
    }

    /// Members whose year falls inside `window`.
    pub fn window(&self, window: &WindowSpec) -> PoolView<'_> {
        let (lo, hi) = window.bounds();
        self.years_between(lo, hi)
    }

    /// Members with `lo <= year <= hi`.
    pub fn years_between(&self, lo: i32, hi: i32) -> PoolView<'_> {
        let start = self.years.partition_point(|&y| y < lo);
        let end = self.years.partition_point(|&y| y <= hi).max(start);
        self.slice(start, end)
    }

    fn slice(&self, start: usize, end: usize) -> PoolView<'_> {
        PoolView {
            dim: self.dim,
            ids: &self.ids[start..end],
            years: &self.years[start..end],
            data: &self.data[start * self.dim..end * self.dim],
            sq_norms: &self.sq_norms[start..end],
            rank: &self.rank[start..end],
        }
    }
}

/// Borrowed contiguous slice of a [`Pool`].
#[derive(Debug, Clone, Copy)]
pub struct PoolView<'a> {
    dim: usize,
    ids: &'a [String],
    years: &'a [i32],
    data: &'a [f32],
    sq_norms: &'a [f64],
    rank: &'a [u32],
}

impl<'a> PoolView<'a> {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &'a [String] {
        self.ids
    }

    pub fn years(&self) -> &'a [i32] {
        self.years
    }

    pub fn vector(&self, i: usize) -> &'a [f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Cosine of `query` to every member, in pool order.
    pub fn similarities(&self, query: &[f32]) -> Result<Vec<f64>> {
        check_dim(self.dim, query)?;
        let qn = sq_norm(query);
        Ok((0..self.len())
            .map(|i| cosine_from_parts(dot(query, self.vector(i)), qn, self.sq_norms[i]))
            .collect())
    }
}

pub(crate) fn check_dim(expected: usize, v: &[f32]) -> Result<()> {
    if v.len() != expected {
        return Err(Error::Shape {
            expected,
            found: v.len(),
        });
    }
    Ok(())
}

#[inline]
pub(crate) fn dot(u: &[f32], v: &[f32]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = u.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += f64::from(u[i]) * f64::from(v[i]);
        acc[1] += f64::from(u[i + 1]) * f64::from(v[i + 1]);
        acc[2] += f64::from(u[i + 2]) * f64::from(v[i + 2]);
        acc[3] += f64::from(u[i + 3]) * f64::from(v[i + 3]);
    }
    let mut tail = 0.0;
    for i in chunks * 4..u.len() {
        tail += f64::from(u[i]) * f64::from(v[i]);
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub(crate) fn sq_norm(v: &[f32]) -> f64 {
    dot(v, v)
}

// sqrt(fl(s * s)) == s in IEEE arithmetic, so identical vectors give exactly 1.
#[inline]
fn cosine_from_parts(dot: f64, sq_u: f64, sq_v: f64) -> f64 {
    (dot / (sq_u * sq_v).sqrt()).clamp(-1.0, 1.0)
}

/// Cosine similarity of two vectors; exactly 1 for identical inputs.
pub fn cosine(u: &[f32], v: &[f32]) -> Result<f64> {
    check_dim(u.len(), v)?;
    Ok(cosine_from_parts(dot(u, v), sq_norm(u), sq_norm(v)))
}

/// Pool positions and similarities of the `k` nearest members, best first.
/// `k` is clamped to the pool size. Ties go to the smallest id.
pub fn top_k(query: &[f32], pool: &PoolView<'_>, k: usize) -> Result<Vec<(usize, f64)>> {
    let sims = pool.similarities(query)?;
    Ok(select_top(&sims, pool.rank, k))
}

/// Like [`top_k`] but skipping the member named `exclude`.
pub fn top_k_excluding(
    query: &[f32],
    pool: &PoolView<'_>,
    k: usize,
    exclude: &str,
) -> Result<Vec<(usize, f64)>> {
    let mut sims = pool.similarities(query)?;
    let mut rank = pool.rank.to_vec();
    let mut keep: Vec<usize> = (0..sims.len()).collect();
    if let Some(pos) = pool.ids.iter().position(|id| id == exclude) {
        sims.remove(pos);
        rank.remove(pos);
        keep.remove(pos);
    }
    Ok(select_top(&sims, &rank, k)
        .into_iter()
        .map(|(i, s)| (keep[i], s))
        .collect())
}

fn select_top(sims: &[f64], rank: &[u32], k: usize) -> Vec<(usize, f64)> {
    let order = |a: &usize, b: &usize| -> Ordering {
        sims[*b]
            .partial_cmp(&sims[*a])
            .unwrap_or(Ordering::Equal)
            .then_with(|| rank[*a].cmp(&rank[*b]))
    };
    let mut idx: Vec<usize> = (0..sims.len()).collect();
    let k = k.min(idx.len());
    if k == 0 {
        return Vec::new();
    }
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, order);
        idx.truncate(k);
    }
    idx.sort_unstable_by(order);
    idx.into_iter().map(|i| (i, sims[i])).collect()
}

/// Mean cosine of `query` to its `min(k, |pool|)` most similar pool members.
pub fn topk_mean_similarity(query: &[f32], pool: &PoolView<'_>, k: usize) -> Result<f64> {
    if pool.is_empty() {
        return Err(Error::UndefinedMeasure("empty pool".into()));
    }
    if k == 0 {
        return Err(Error::Config("k must be positive".into()));
    }
    let top = top_k(query, pool, k)?;
    Ok(mean_of(&top))
}

pub(crate) fn mean_of(top: &[(usize, f64)]) -> f64 {
    top.iter().map(|&(_, s)| s).sum::<f64>() / top.len() as f64
}

/// [`topk_mean_similarity`] for many queries, fanned out over the current
/// rayon pool. Output order matches query order.
pub fn batch_topk(queries: &[&[f32]], pool: &PoolView<'_>, k: usize) -> Result<Vec<f64>> {
    queries
        .par_iter()
        .map(|q| topk_mean_similarity(q, pool, k))
        .collect()
}

/// Members of `view` inside `window`, with vectors taken from `emb`.
pub fn build_pool(view: &CorpusView<'_>, window: &WindowSpec, emb: &EmbeddingSet) -> Result<Pool> {
    let mut members = Vec::new();
    for doc in view.iter().filter(|d| window.contains(d.year)) {
        let v = emb
            .vector(&doc.id)
            .ok_or_else(|| Error::Integrity(format!("no embedding for document `{}`", doc.id)))?;
        members.push((doc.id.clone(), doc.year, v));
    }
    Pool::from_members(emb.dim(), members)
}

/// Every document of `view` as one pool; slice it with [`Pool::window`].
pub fn build_field_pool(view: &CorpusView<'_>, emb: &EmbeddingSet) -> Result<Pool> {
    let mut members = Vec::with_capacity(view.len());
    for doc in view.iter() {
        let v = emb
            .vector(&doc.id)
            .ok_or_else(|| Error::Integrity(format!("no embedding for document `{}`", doc.id)))?;
        members.push((doc.id.clone(), doc.year, v));
    }
    Pool::from_members(emb.dim(), members)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Corpus, DocKind, Document, RangePolicy, ViewSpec};

    fn pool(members: &[(&str, i32, &[f32])]) -> Pool {
        Pool::from_members(
            members[0].2.len(),
            members.iter().map(|(id, y, v)| (id.to_string(), *y, *v)),
        )
        .unwrap()
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let c = cosine(&[1.0, 0.0], &[0.866, 0.5]).unwrap();
        // |(0.866, 0.5)| = sqrt(0.999956)
        assert!((c - 0.866 / 0.999956f64.sqrt()).abs() < 1e-6);
        assert!((c - 0.866).abs() < 1e-4);
        assert!(matches!(
            cosine(&[1.0, 0.0], &[1.0, 0.0, 0.0]),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn topk_examples() {
        let p = pool(&[("a", 1700, &[1.0, 0.0])]);
        assert_eq!(topk_mean_similarity(&[1.0, 0.0], &p.view(), 20).unwrap(), 1.0);

        let p = pool(&[
            ("a", 1700, &[1.0, 0.0]),
            ("b", 1700, &[0.866, 0.5]),
            ("c", 1700, &[0.0, 1.0]),
        ]);
        let got = topk_mean_similarity(&[1.0, 0.0], &p.view(), 2).unwrap();
        let cos_b = 0.866 / (0.866f64 * 0.866 + 0.25).sqrt();
        assert!((got - (1.0 + cos_b) / 2.0).abs() < 1e-6);
        assert!((got - 0.933).abs() < 1e-3);

        let all = topk_mean_similarity(&[1.0, 0.0], &p.view(), 3).unwrap();
        let big = topk_mean_similarity(&[1.0, 0.0], &p.view(), 99).unwrap();
        assert_eq!(all, big);
        assert!((all - (1.0 + cos_b + 0.0) / 3.0).abs() < 1e-6);
    }

    #[test]
    fn empty_pool_is_undefined() {
        let p = Pool::from_members(2, Vec::<(String, i32, &[f32])>::new()).unwrap();
        assert!(matches!(
            topk_mean_similarity(&[1.0, 0.0], &p.view(), 3),
            Err(Error::UndefinedMeasure(_))
        ));
    }

    #[test]
    fn ties_go_to_smallest_id() {
        let v: &[f32] = &[0.6, 0.8];
        let p = pool(&[("z", 1700, v), ("m", 1701, v), ("b", 1702, v), ("q", 1699, &[0.0, 1.0])]);
        let top = top_k(&[1.0, 0.0], &p.view(), 2).unwrap();
        let ids: Vec<_> = top.iter().map(|(i, _)| p.view().ids()[*i].as_str()).collect();
        assert_eq!(ids, ["b", "m"]);
        let ex = top_k_excluding(&[1.0, 0.0], &p.view(), 2, "b").unwrap();
        let ids: Vec<_> = ex.iter().map(|(i, _)| p.view().ids()[*i].as_str()).collect();
        assert_eq!(ids, ["m", "z"]);
    }

    #[test]
    fn window_arithmetic() {
        let w = WindowSpec::backward(1701, 1);
        assert_eq!(w.bounds(), (1700, 1700));
        assert!(!w.contains(1701));
        assert_eq!(WindowSpec::forward(1780, 20).bounds(), (1781, 1800));
        assert_eq!(w.reversed().bounds(), (1702, 1702));
    }

    fn doc(id: &str, year: i32) -> Document {
        Document {
            id: id.into(),
            year,
            field: "f".into(),
            subfield: None,
            kind: DocKind::Title,
            word_count: 1,
            flags: Default::default(),
            language: None,
            text: None,
            citations: None,
            certainty: None,
        }
    }

    #[test]
    fn build_pool_selects_window() {
        let docs = vec![doc("a", 1699), doc("b", 1700), doc("c", 1700), doc("d", 1701)];
        let corpus = Corpus::from_documents(docs, &RangePolicy::unbounded()).unwrap();
        let emb = EmbeddingSet::from_rows(
            vec!["a".into(), "b".into(), "c".into(), "d".into()],
            2,
            vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0, -1.0, 0.0],
        )
        .unwrap();
        let view = corpus
            .view(&ViewSpec::new(["f"], (1600, 1800), &[DocKind::Title]))
            .unwrap();
        let p = build_pool(&view, &WindowSpec::backward(1701, 1), &emb).unwrap();
        assert_eq!(p.view().ids(), ["b", "c"]);
        let far = build_pool(&view, &WindowSpec::forward(1790, 5), &emb).unwrap();
        assert!(far.is_empty());

        let full = build_field_pool(&view, &emb).unwrap();
        assert_eq!(full.window(&WindowSpec::backward(1701, 1)).ids(), ["b", "c"]);
        assert_eq!(full.years_between(1650, 1698).len(), 0);

        let short = EmbeddingSet::from_rows(vec!["a".into()], 2, vec![1.0, 0.0]).unwrap();
        assert!(matches!(
            build_pool(&view, &WindowSpec::forward(1699, 5), &short),
            Err(Error::Integrity(_))
        ));
    }

    #[test]
    fn batch_of_one_matches_scalar() {
        let p = pool(&[
            ("a", 1700, &[0.3, 0.1, 0.9]),
            ("b", 1701, &[0.2, 0.7, 0.1]),
            ("c", 1702, &[0.5, 0.5, 0.5]),
        ]);
        let q: &[f32] = &[0.4, 0.4, 0.2];
        let scalar = topk_mean_similarity(q, &p.view(), 2).unwrap();
        let batch = batch_topk(&[q], &p.view(), 2).unwrap();
        assert_eq!(batch[0].to_bits(), scalar.to_bits());
    }
}
