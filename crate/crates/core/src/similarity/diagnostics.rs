//! Embedding-space diagnostics: anisotropy, neighbor-rank agreement between
//! two embeddings, and k-NN label coherence.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};

use super::{check_dim, cosine_from_parts, dot, sq_norm};
use crate::embeddings::EmbeddingSet;
use crate::error::{Error, Result};

/// Full cosine matrix; row `i` holds similarities of vector `i` to all vectors.
fn cosine_matrix(emb: &EmbeddingSet) -> Vec<Vec<f64>> {
    let norms: Vec<f64> = emb.rows().map(sq_norm).collect();
    (0..emb.len())
        .map(|i| {
            (0..emb.len())
                .map(|j| cosine_from_parts(dot(emb.row(i), emb.row(j)), norms[i], norms[j]))
                .collect()
        })
        .collect()
}

/// Indices of the `k` most similar other rows, ties to the lower index.
fn neighbors(sims: &[f64], me: usize, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..sims.len()).filter(|&j| j != me).collect();
    idx.sort_by(|&a, &b| {
        sims[b]
            .partial_cmp(&sims[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx.truncate(k);
    idx
}

/// Mean over vectors of the cosine to the nearest other vector.
pub fn mean_nn_cosine(emb: &EmbeddingSet) -> Result<f64> {
    if emb.len() < 2 {
        return Err(Error::UndefinedMeasure(
            "nearest-neighbor cosine needs at least 2 vectors".into(),
        ));
    }
    let sims = cosine_matrix(emb);
    let total: f64 = sims
        .iter()
        .enumerate()
        .map(|(i, row)| {
            row.iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, &s)| s)
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .sum();
    Ok(total / emb.len() as f64)
}

/// Share of total variance explained by the first principal component.
///
/// Uses the covariance matrix when `dim <= n` and the Gram matrix
/// otherwise; both have the same nonzero spectrum. Zero total variance
/// returns 0 with a warning.
pub fn pc1_variance_fraction(emb: &EmbeddingSet) -> Result<f64> {
    let n = emb.len();
    if n < 2 {
        return Err(Error::UndefinedMeasure(
            "principal component variance needs at least 2 vectors".into(),
        ));
    }
    let d = emb.dim();
    let mut mean = vec![0.0f64; d];
    for row in emb.rows() {
        for (m, &x) in mean.iter_mut().zip(row) {
            *m += f64::from(x);
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, d, |i, j| f64::from(emb.row(i)[j]) - mean[j]);
    let scatter = if d <= n {
        centered.transpose() * &centered
    } else {
        &centered * centered.transpose()
    };
    let total = scatter.trace();
    if total <= f64::EPSILON * n as f64 {
        tracing::warn!("zero total variance; PC-1 fraction reported as 0");
        return Ok(0.0);
    }
    let eig = SymmetricEigen::new(scatter);
    let top = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((top / total).clamp(0.0, 1.0))
}

/// Mean fraction of shared top-`k` neighbors between two embeddings of the
/// same documents. `k` is clamped to `n - 1`.
pub fn rank_overlap(a: &EmbeddingSet, b: &EmbeddingSet, k: usize) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Integrity(format!(
            "embeddings cover {} and {} documents",
            a.len(),
            b.len()
        )));
    }
    let b = b.select(a.ids()).map_err(|_| {
        Error::Integrity("embedding sets do not cover the same document ids".into())
    })?;
    if a.len() < 2 || k == 0 {
        return Err(Error::UndefinedMeasure(
            "rank overlap needs at least 2 vectors and k >= 1".into(),
        ));
    }
    let k = k.min(a.len() - 1);
    let (sa, sb) = (cosine_matrix(a), cosine_matrix(&b));
    let total: f64 = (0..a.len())
        .map(|i| {
            let na = neighbors(&sa[i], i, k);
            let nb = neighbors(&sb[i], i, k);
            na.iter().filter(|j| nb.contains(j)).count() as f64 / k as f64
        })
        .sum();
    Ok(total / a.len() as f64)
}

/// Fraction of points whose majority label among the `k` nearest other
/// points equals their own. Vote ties go to the label whose voters have the
/// smallest index sum.
pub fn knn_label_accuracy(emb: &EmbeddingSet, labels: &[String], k: usize) -> Result<f64> {
    if labels.len() != emb.len() {
        return Err(Error::Shape {
            expected: emb.len(),
            found: labels.len(),
        });
    }
    if k == 0 || emb.len() < k + 1 {
        return Err(Error::UndefinedMeasure(format!(
            "{k}-NN accuracy needs at least {} points",
            k + 1
        )));
    }
    let sims = cosine_matrix(emb);
    let hits = (0..emb.len())
        .filter(|&i| {
            let mut votes: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
            for j in neighbors(&sims[i], i, k) {
                let e = votes.entry(labels[j].as_str()).or_default();
                e.0 += 1;
                e.1 += j;
            }
            let winner = votes
                .iter()
                .min_by(|x, y| y.1 .0.cmp(&x.1 .0).then(x.1 .1.cmp(&y.1 .1)))
                .map(|(l, _)| *l);
            winner == Some(labels[i].as_str())
        })
        .count();
    Ok(hits as f64 / emb.len() as f64)
}

/// Mean cosine between `query` and every vector of `terms`.
pub fn mean_cosine_to(query: &[f32], terms: &[Vec<f32>]) -> Result<f64> {
    if terms.is_empty() {
        return Err(Error::UndefinedMeasure("empty term list".into()));
    }
    let qn = sq_norm(query);
    let mut total = 0.0;
    for t in terms {
        check_dim(query.len(), t)?;
        total += cosine_from_parts(dot(query, t), qn, sq_norm(t));
    }
    Ok(total / terms.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(rows: &[&[f32]]) -> EmbeddingSet {
        let dim = rows[0].len();
        EmbeddingSet::from_rows(
            (0..rows.len()).map(|i| format!("d{i:03}")).collect(),
            dim,
            rows.concat(),
        )
        .unwrap()
    }

    #[test]
    fn nn_cosine_identical_and_orthonormal() {
        let v: &[f32] = &[0.3, -0.2, 0.9];
        assert_eq!(mean_nn_cosine(&set(&[v, v, v])).unwrap(), 1.0);
        let basis = set(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
        assert_eq!(mean_nn_cosine(&basis).unwrap(), 0.0);
        assert!(mean_nn_cosine(&set(&[v])).is_err());
    }

    #[test]
    fn pc1_line_and_degenerate() {
        let line = set(&[&[1.0, 1.0], &[2.0, 2.0], &[3.0, 3.0], &[-1.0, -1.0], &[1.0, 0.9]]);
        // Not exactly a line after normalization; a true line through the
        // origin normalizes to two antipodal points, which is rank one.
        let antipodal = set(&[&[1.0, 2.0], &[-1.0, -2.0], &[2.0, 4.0]]);
        assert!((pc1_variance_fraction(&antipodal).unwrap() - 1.0).abs() < 1e-12);
        assert!(pc1_variance_fraction(&line).unwrap() > 0.9);
        let same = set(&[&[1.0, 0.0], &[1.0, 0.0]]);
        assert_eq!(pc1_variance_fraction(&same).unwrap(), 0.0);
    }

    #[test]
    fn pc1_invariant_under_duplication() {
        let base: Vec<&[f32]> = vec![&[1.0, 0.2, 0.1], &[0.1, 1.0, 0.3], &[0.4, 0.1, 1.0], &[0.5, 0.5, 0.2]];
        let doubled: Vec<&[f32]> = base.iter().chain(base.iter()).copied().collect();
        let a = pc1_variance_fraction(&set(&base)).unwrap();
        let b = pc1_variance_fraction(&set(&doubled)).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn rank_overlap_identity_and_disjoint() {
        let a = set(&[&[1.0, 0.0], &[0.9, 0.1], &[0.0, 1.0], &[0.1, 0.9]]);
        assert_eq!(rank_overlap(&a, &a, 2).unwrap(), 1.0);
        // Nearest neighbors under `b` pair 0 with 2 and 1 with 3 instead.
        let b = set(&[&[1.0, 0.0], &[0.0, 1.0], &[0.9, 0.1], &[0.1, 0.9]]);
        assert_eq!(rank_overlap(&a, &b, 1).unwrap(), 0.0);
        let c = set(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert!(matches!(rank_overlap(&a, &c, 1), Err(Error::Integrity(_))));
    }

    #[test]
    fn knn_accuracy_blobs() {
        let rows: Vec<Vec<f32>> = (0..12)
            .map(|i| {
                let eps = i as f32 * 0.01;
                if i < 6 {
                    vec![1.0, eps]
                } else {
                    vec![eps, 1.0]
                }
            })
            .collect();
        let refs: Vec<&[f32]> = rows.iter().map(|r| r.as_slice()).collect();
        let emb = set(&refs);
        let labels: Vec<String> = (0..12).map(|i| if i < 6 { "a" } else { "b" }.into()).collect();
        assert_eq!(knn_label_accuracy(&emb, &labels, 5).unwrap(), 1.0);
        let uniform = vec!["x".to_string(); 12];
        assert_eq!(knn_label_accuracy(&emb, &uniform, 5).unwrap(), 1.0);
        assert!(knn_label_accuracy(&emb, &labels[..], 12).is_err());
    }

    #[test]
    fn mean_cosine_examples() {
        let terms = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert_eq!(mean_cosine_to(&[1.0, 0.0], &terms).unwrap(), 0.5);
        assert_eq!(mean_cosine_to(&[0.0, 1.0], &terms[1..]).unwrap(), 1.0);
    }
}
