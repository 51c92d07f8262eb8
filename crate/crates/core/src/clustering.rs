//! Deterministic sub-topic discovery within one subject class.
//!
//! Pipeline: PCA (full SVD) with L2-normalized scores, hierarchical density
//! clustering, reassignment of noise points whose best-cluster membership
//! strength clears a threshold, absorption of remaining noise into the
//! nearest centroid above a cosine threshold, then tf-idf keyword labels.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embeddings::{read_matrix, write_matrix, EmbeddingSet};
use crate::error::{Error, Result};

mod density;
mod pca;
mod tfidf;

pub use density::{density_cluster, DensityParams, DensityResult};
pub use pca::{pca_fit_transform, PcaBasis};
pub use tfidf::{tfidf_labels, tokenize};

pub const NOISE: i32 = -1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterParams {
    pub pca_components: usize,
    pub gamma: f64,
    pub min_floor: usize,
    pub noise_reassign_threshold: f64,
    pub absorb_cosine_threshold: f64,
    pub keywords_per_cluster: usize,
    /// Neighbor count for core distances; defaults to the minimum cluster size.
    pub min_samples: Option<usize>,
}

impl Default for ClusterParams {
    fn default() -> Self {
        ClusterParams {
            pca_components: 50,
            gamma: 0.015,
            min_floor: 6,
            noise_reassign_threshold: 0.15,
            absorb_cosine_threshold: 0.4,
            keywords_per_cluster: 10,
            min_samples: None,
        }
    }
}

impl ClusterParams {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.noise_reassign_threshold) || !unit(self.absorb_cosine_threshold) {
            return Err(Error::Config("cluster thresholds must lie in [0, 1]".into()));
        }
        if self.pca_components == 0 || self.min_floor == 0 || !(self.gamma >= 0.0) {
            return Err(Error::Config(
                "pca_components and min_floor must be positive, gamma nonnegative".into(),
            ));
        }
        Ok(())
    }

    /// `max(min_floor, ceil(gamma * n))`.
    pub fn min_cluster_size(&self, n: usize) -> usize {
        min_cluster_size(n, self.gamma, self.min_floor)
    }
}

pub fn min_cluster_size(n: usize, gamma: f64, min_floor: usize) -> usize {
    // Guard against 0.015 * 1000 = 15.000000000000002 rounding up to 16.
    let scaled = gamma * n as f64;
    let ceil = (scaled - 1e-9).ceil().max(0.0) as usize;
    min_floor.max(ceil)
}

/// How a document obtained its final label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Dense,
    Reassigned,
    Absorbed,
    Noise,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Dense => "dense",
            Stage::Reassigned => "reassigned",
            Stage::Absorbed => "absorbed",
            Stage::Noise => "noise",
        }
    }
}

/// Noise points whose best-cluster strength exceeds `threshold` adopt that
/// cluster. Returns the new labels and the indices that changed.
pub fn reassign_noise(density: &DensityResult, threshold: f64) -> (Vec<i32>, Vec<usize>) {
    let mut labels = density.labels.clone();
    let mut moved = Vec::new();
    for i in 0..labels.len() {
        if labels[i] != NOISE {
            continue;
        }
        if let Some(c) = density.best_cluster[i] {
            if density.probabilities[i] > threshold {
                labels[i] = c as i32;
                moved.push(i);
            }
        }
    }
    (labels, moved)
}

/// Normalized mean of each cluster's member vectors, indexed by cluster id.
pub fn centroids(labels: &[i32], reduced: &[Vec<f64>], n_clusters: usize) -> Vec<Vec<f64>> {
    let dim = reduced.first().map_or(0, Vec::len);
    let mut sums = vec![vec![0.0; dim]; n_clusters];
    for (label, v) in labels.iter().zip(reduced) {
        if *label >= 0 {
            for (s, x) in sums[*label as usize].iter_mut().zip(v) {
                *s += x;
            }
        }
    }
    for s in &mut sums {
        normalize(s);
    }
    sums
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

fn cosine64(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>();
    let nb = b.iter().map(|x| x * x).sum::<f64>();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb).sqrt()).clamp(-1.0, 1.0)
}

/// Index and cosine of the most similar centroid; ties go to the lower id.
pub fn nearest_centroid(v: &[f64], centroids: &[Vec<f64>]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (c, centroid) in centroids.iter().enumerate() {
        let s = cosine64(v, centroid);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((c, s));
        }
    }
    best
}

/// Remaining noise joins the nearest centroid when cosine exceeds
/// `threshold`. Returns the new labels and the absorbed indices.
pub fn absorb_outliers(
    labels: &[i32],
    reduced: &[Vec<f64>],
    centroids: &[Vec<f64>],
    threshold: f64,
) -> (Vec<i32>, Vec<usize>) {
    let mut out = labels.to_vec();
    let mut absorbed = Vec::new();
    for (i, v) in reduced.iter().enumerate() {
        if labels[i] != NOISE {
            continue;
        }
        if let Some((c, s)) = nearest_centroid(v, centroids) {
            if s > threshold {
                out[i] = c as i32;
                absorbed.push(i);
            }
        }
    }
    (out, absorbed)
}

/// Fitted sub-topic model for one subject class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub subject: String,
    pub params: ClusterParams,
    pub min_cluster_size: usize,
    #[serde(skip)]
    pub basis: PcaBasis,
    pub doc_ids: Vec<String>,
    pub labels: Vec<i32>,
    pub stages: Vec<Stage>,
    /// Normalized means of dense and reassigned members, in reduced space.
    pub centroids: Vec<Vec<f64>>,
    pub keywords: Vec<Vec<String>>,
    pub notes: Vec<String>,
}

impl ClusterModel {
    pub fn n_clusters(&self) -> usize {
        self.centroids.len()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_clusters()];
        for &l in &self.labels {
            if l >= 0 {
                sizes[l as usize] += 1;
            }
        }
        sizes
    }
}

/// Fit the full pipeline on one subject class. `texts` align with `ids`
/// and feed the keyword labels; missing texts contribute nothing.
pub fn fit_subject(
    subject: &str,
    ids: &[String],
    vectors: &[&[f32]],
    texts: &[Option<&str>],
    params: &ClusterParams,
) -> Result<ClusterModel> {
    params.validate()?;
    if ids.len() != vectors.len() || ids.len() != texts.len() {
        return Err(Error::Shape {
            expected: ids.len(),
            found: vectors.len().min(texts.len()),
        });
    }
    let n = ids.len();
    let mcs = params.min_cluster_size(n);
    if n < mcs.max(2) {
        return Err(Error::Data(format!(
            "subject `{subject}` has {n} documents, fewer than the minimum cluster size {mcs}"
        )));
    }
    let mut notes = Vec::new();
    let (reduced, basis) = pca_fit_transform(vectors, params.pca_components)?;
    if basis.reduced_rank {
        notes.push(format!(
            "pca components reduced to {} from {}",
            basis.components.len(),
            params.pca_components
        ));
    }
    let density = density_cluster(
        &reduced,
        &DensityParams {
            min_cluster_size: mcs,
            min_samples: params.min_samples,
            allow_single_cluster: false,
        },
    )?;
    let mut stages: Vec<Stage> = density
        .labels
        .iter()
        .map(|&l| if l == NOISE { Stage::Noise } else { Stage::Dense })
        .collect();
    let (labels, moved) = reassign_noise(&density, params.noise_reassign_threshold);
    for i in moved {
        stages[i] = Stage::Reassigned;
    }
    let cents = centroids(&labels, &reduced, density.n_clusters);
    let (labels, absorbed) = absorb_outliers(&labels, &reduced, &cents, params.absorb_cosine_threshold);
    for i in absorbed {
        stages[i] = Stage::Absorbed;
    }

    let mut cluster_texts: Vec<Vec<&str>> = vec![Vec::new(); density.n_clusters];
    for (l, t) in labels.iter().zip(texts) {
        if let (true, Some(t)) = (*l >= 0, t) {
            cluster_texts[*l as usize].push(t);
        }
    }
    let keywords = tfidf_labels(&cluster_texts, params.keywords_per_cluster);
    if density.n_clusters > 0 && keywords.iter().any(Vec::is_empty) {
        notes.push("some clusters have no text; keyword labels empty".into());
    }

    Ok(ClusterModel {
        subject: subject.to_string(),
        params: params.clone(),
        min_cluster_size: mcs,
        basis,
        doc_ids: ids.to_vec(),
        labels,
        stages,
        centroids: cents,
        keywords,
        notes,
    })
}

/// Map each entry onto the nearest centroid after projecting it through the
/// model's PCA basis. Total: every entry gets exactly one cluster.
pub fn assign_external(entries: &EmbeddingSet, model: &ClusterModel) -> Result<Vec<(String, usize)>> {
    if model.centroids.is_empty() {
        return Err(Error::Data(format!(
            "model for `{}` has no clusters to assign to",
            model.subject
        )));
    }
    if entries.dim() != model.basis.mean.len() {
        return Err(Error::Shape {
            expected: model.basis.mean.len(),
            found: entries.dim(),
        });
    }
    entries
        .ids()
        .iter()
        .zip(entries.rows())
        .map(|(id, row)| {
            let v = model.basis.transform(row)?;
            let (c, _) = nearest_centroid(&v, &model.centroids).expect("non-empty centroids");
            Ok((id.clone(), c))
        })
        .collect()
}

/// Persist as `<stem>.json` plus `<stem>_basis.emb` holding the components.
pub fn save_model(model: &ClusterModel, dir: &Path, stem: &str) -> Result<()> {
    let basis_name = format!("{stem}_basis.emb");
    let header = ModelFile {
        model: model.clone(),
        mean: model.basis.mean.clone(),
        explained_variance: model.basis.explained_variance.clone(),
        basis_file: basis_name.clone(),
    };
    let mut f = std::fs::File::create(dir.join(format!("{stem}.json")))?;
    serde_json::to_writer_pretty(&mut f, &header)?;
    f.write_all(b"\n")?;
    let flat: Vec<f32> = model
        .basis
        .components
        .iter()
        .flat_map(|row| row.iter().map(|&x| x as f32))
        .collect();
    let dim = model.basis.mean.len();
    let mut w = std::io::BufWriter::new(std::fs::File::create(dir.join(basis_name))?);
    write_matrix(&mut w, dim, &flat)?;
    w.flush()?;
    Ok(())
}

pub fn load_model(json_path: &Path) -> Result<ClusterModel> {
    let header: ModelFile = serde_json::from_reader(std::fs::File::open(json_path)?)?;
    let dir = json_path.parent().unwrap_or(Path::new("."));
    let (count, dim, values) = read_matrix(std::io::BufReader::new(std::fs::File::open(
        dir.join(&header.basis_file),
    )?))?;
    if dim != header.mean.len() {
        return Err(Error::Format(format!(
            "basis dimension {dim} does not match mean length {}",
            header.mean.len()
        )));
    }
    let components = (0..count)
        .map(|i| values[i * dim..(i + 1) * dim].iter().map(|&x| f64::from(x)).collect())
        .collect();
    let mut model = header.model;
    model.basis = PcaBasis {
        mean: header.mean,
        components,
        explained_variance: header.explained_variance,
        reduced_rank: false,
    };
    Ok(model)
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    #[serde(flatten)]
    model: ClusterModel,
    mean: Vec<f64>,
    explained_variance: Vec<f64>,
    basis_file: String,
}

/// `id,subject,cluster_id,stage` rows.
pub fn write_labels_csv<W: Write>(mut w: W, models: &[&ClusterModel]) -> Result<()> {
    writeln!(w, "id,subject,cluster_id,stage")?;
    for m in models {
        for ((id, l), s) in m.doc_ids.iter().zip(&m.labels).zip(&m.stages) {
            writeln!(w, "{},{},{},{}", quote(id), quote(&m.subject), l, s.as_str())?;
        }
    }
    Ok(())
}

fn quote(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Per-cell summary of a hyperparameter grid run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub pca_components: usize,
    pub gamma: f64,
    pub noise_reassign_threshold: f64,
    pub absorb_cosine_threshold: f64,
    pub n_clusters: usize,
    pub noise: usize,
}

/// The robustness grid: PCA size, adaptive-size coefficient and both
/// thresholds varied around their defaults.
pub fn robustness_grid() -> Vec<ClusterParams> {
    let mut cells = Vec::new();
    for pca_components in [25, 50] {
        for gamma in [0.01, 0.015, 0.02] {
            for noise_reassign_threshold in [0.1, 0.15, 0.2] {
                for absorb_cosine_threshold in [0.3, 0.4, 0.5] {
                    cells.push(ClusterParams {
                        pca_components,
                        gamma,
                        noise_reassign_threshold,
                        absorb_cosine_threshold,
                        ..ClusterParams::default()
                    });
                }
            }
        }
    }
    cells
}

/// Counts of documents per final stage.
pub fn stage_counts(model: &ClusterModel) -> BTreeMap<&'static str, usize> {
    let mut counts = BTreeMap::new();
    for s in &model.stages {
        *counts.entry(s.as_str()).or_insert(0) += 1;
    }
    counts
}
