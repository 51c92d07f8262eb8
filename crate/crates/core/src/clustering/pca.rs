use std::cmp::Ordering;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fitted principal axes. Each component is unit length and oriented so its
/// largest-magnitude loading is positive.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PcaBasis {
    pub mean: Vec<f64>,
    pub components: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
    /// Fewer components than requested could be extracted.
    pub reduced_rank: bool,
}

impl PcaBasis {
    /// Raw component scores of `x`.
    pub fn project(&self, x: &[f32]) -> Result<Vec<f64>> {
        if x.len() != self.mean.len() {
            return Err(Error::Shape {
                expected: self.mean.len(),
                found: x.len(),
            });
        }
        Ok(self
            .components
            .iter()
            .map(|c| {
                c.iter()
                    .zip(x.iter().zip(&self.mean))
                    .map(|(w, (&xi, m))| w * (f64::from(xi) - m))
                    .sum()
            })
            .collect())
    }

    /// Scores scaled to unit length; a point at the mean stays zero.
    pub fn transform(&self, x: &[f32]) -> Result<Vec<f64>> {
        let mut v = self.project(x)?;
        super::normalize(&mut v);
        Ok(v)
    }

    /// Map scores back into the input space.
    pub fn reconstruct(&self, scores: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (c, s) in self.components.iter().zip(scores) {
            for (o, w) in out.iter_mut().zip(c) {
                *o += s * w;
            }
        }
        out
    }
}

/// Fit by full SVD of the centered matrix and return L2-normalized scores
/// for every input row alongside the basis.
pub fn pca_fit_transform(rows: &[&[f32]], components: usize) -> Result<(Vec<Vec<f64>>, PcaBasis)> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::Data(format!("PCA needs at least 2 vectors, got {n}")));
    }
    if components == 0 {
        return Err(Error::Config("PCA needs at least one component".into()));
    }
    let d = rows[0].len();
    if let Some(bad) = rows.iter().find(|r| r.len() != d) {
        return Err(Error::Shape {
            expected: d,
            found: bad.len(),
        });
    }
    let mut mean = vec![0.0f64; d];
    for r in rows {
        for (m, &x) in mean.iter_mut().zip(r.iter()) {
            *m += f64::from(x);
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, d, |i, j| f64::from(rows[i][j]) - mean[j]);
    let svd = centered.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let sv = &svd.singular_values;

    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].partial_cmp(&sv[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
    let keep = components.min(d).min(n - 1);
    let reduced_rank = keep < components;
    if reduced_rank {
        tracing::warn!(requested = components, kept = keep, "PCA rank reduced");
    }

    let mut comps = Vec::with_capacity(keep);
    let mut variance = Vec::with_capacity(keep);
    for &k in order.iter().take(keep) {
        let mut c: Vec<f64> = v_t.row(k).iter().copied().collect();
        let pivot = c
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |(bi, bv), (i, &x)| if x.abs() > bv { (i, x.abs()) } else { (bi, bv) })
            .0;
        if c[pivot] < 0.0 {
            c.iter_mut().for_each(|x| *x = -*x);
        }
        comps.push(c);
        variance.push(sv[k] * sv[k] / (n - 1) as f64);
    }
    let basis = PcaBasis {
        mean,
        components: comps,
        explained_variance: variance,
        reduced_rank,
    };
    let reduced = rows
        .iter()
        .map(|r| basis.transform(r))
        .collect::<Result<Vec<_>>>()?;
    Ok((reduced, basis))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_rows(n: usize, d: usize, seed: u64) -> Vec<Vec<f32>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..d).map(|j| rng.random_range(-1.0..1.0f32) * (j + 1) as f32).collect())
            .collect()
    }

    #[test]
    fn variances_match_covariance_spectrum() {
        let rows = random_rows(40, 6, 3);
        let refs: Vec<&[f32]> = rows.iter().map(|r| r.as_slice()).collect();
        let (_, basis) = pca_fit_transform(&refs, 6).unwrap();

        let n = rows.len() as f64;
        let mean: Vec<f64> = (0..6).map(|j| rows.iter().map(|r| f64::from(r[j])).sum::<f64>() / n).collect();
        let cov = DMatrix::from_fn(6, 6, |a, b| {
            rows.iter()
                .map(|r| (f64::from(r[a]) - mean[a]) * (f64::from(r[b]) - mean[b]))
                .sum::<f64>()
                / (n - 1.0)
        });
        let mut eig: Vec<f64> = SymmetricEigen::new(cov).eigenvalues.iter().copied().collect();
        eig.sort_by(|a, b| b.partial_cmp(a).unwrap());
        for (got, want) in basis.explained_variance.iter().zip(&eig) {
            assert!((got - want).abs() < 1e-9 * want.max(1.0), "{got} vs {want}");
        }
        for c in &basis.components {
            let norm: f64 = c.iter().map(|x| x * x).sum();
            assert!((norm - 1.0).abs() < 1e-12);
            let pivot = c.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            assert!(pivot > 0.0);
        }
    }

    #[test]
    fn line_reconstructs_exactly() {
        let rows: Vec<Vec<f32>> = (0..10).map(|i| vec![i as f32, 2.0 * i as f32 + 1.0, -(i as f32)]).collect();
        let refs: Vec<&[f32]> = rows.iter().map(|r| r.as_slice()).collect();
        let (_, basis) = pca_fit_transform(&refs, 1).unwrap();
        for r in &refs {
            let back = basis.reconstruct(&basis.project(r).unwrap());
            for (a, &b) in back.iter().zip(r.iter()) {
                assert!((a - f64::from(b)).abs() < 1e-9);
            }
        }
        let (reduced, _) = pca_fit_transform(&refs, 1).unwrap();
        assert!(reduced.iter().all(|v| (v[0].abs() - 1.0).abs() < 1e-12 || v[0] == 0.0));
    }

    #[test]
    fn too_few_vectors_flags_reduced_rank() {
        let rows = random_rows(4, 8, 9);
        let refs: Vec<&[f32]> = rows.iter().map(|r| r.as_slice()).collect();
        let (reduced, basis) = pca_fit_transform(&refs, 50).unwrap();
        assert!(basis.reduced_rank);
        assert_eq!(basis.components.len(), 3);
        assert_eq!(reduced[0].len(), 3);
        assert!(pca_fit_transform(&refs[..1], 2).is_err());
    }
}
