use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Args;
use rayon::prelude::*;
use spillover::clustering::{
    assign_external, fit_subject, load_model, robustness_grid, save_model, stage_counts, write_labels_csv,
    ClusterModel, ClusterParams,
};
use spillover::corpus::{Corpus, DocKind, Document};
use spillover::embeddings::EmbeddingSet;
use spillover::synth::slug;

use crate::config::RunConfig;
use crate::inputs::{self, csv_field};
use crate::{InputArgs, UsageError};

#[derive(Args)]
pub struct ClusterArgs {
    #[command(flatten)]
    pub inputs: InputArgs,
    /// Subject classes to cluster, comma-separated (default: every prescriptive field).
    #[arg(long, value_delimiter = ',')]
    pub subjects: Vec<String>,
    /// Fit one model per cell of the robustness grid.
    #[arg(long, conflicts_with = "assign")]
    pub grid: bool,
    /// Assign lexicon entries to the models in `--models`.
    #[arg(long, requires = "models")]
    pub assign: bool,
    /// Directory of saved models.
    #[arg(long)]
    pub models: Option<PathBuf>,
    #[arg(long)]
    pub pca_components: Option<usize>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub noise_threshold: Option<f64>,
    #[arg(long)]
    pub absorb_threshold: Option<f64>,
    /// Keep lexicon entries regardless of prediction certainty.
    #[arg(long)]
    pub no_certainty_filter: bool,
    #[arg(long)]
    pub certainty_threshold: Option<f64>,
}

impl ClusterArgs {
    pub fn apply(&self, cfg: &mut RunConfig) {
        let c = &mut cfg.cluster;
        if let Some(v) = self.pca_components {
            c.pca_components = v;
        }
        if let Some(v) = self.gamma {
            c.gamma = v;
        }
        if let Some(v) = self.noise_threshold {
            c.noise_reassign_threshold = v;
        }
        if let Some(v) = self.absorb_threshold {
            c.absorb_cosine_threshold = v;
        }
        if self.no_certainty_filter {
            cfg.did.certainty_filter = false;
        }
        if let Some(t) = self.certainty_threshold {
            cfg.did.certainty_threshold = t;
        }
    }
}

/// Lexicon entries that pass the certainty rule. Entries without a
/// certainty value are kept.
pub fn certain_entries<'c>(corpus: &'c Corpus, cfg: &RunConfig) -> Vec<&'c Document> {
    corpus
        .documents()
        .iter()
        .filter(|d| d.kind == DocKind::LexiconEntry)
        .filter(|d| {
            !cfg.did.certainty_filter || d.certainty.is_none_or(|c| c >= cfg.did.certainty_threshold)
        })
        .collect()
}

struct SubjectData<'a> {
    subject: String,
    ids: Vec<String>,
    vectors: Vec<&'a [f32]>,
    texts: Vec<Option<&'a str>>,
}

fn subject_data<'a>(
    corpus: &'a Corpus,
    emb: &'a EmbeddingSet,
    subjects: &[String],
) -> anyhow::Result<Vec<SubjectData<'a>>> {
    let mut out = Vec::new();
    for subject in subjects {
        let docs: Vec<&'a Document> = corpus
            .documents()
            .iter()
            .filter(|d| d.kind == DocKind::Title && &d.field == subject)
            .collect();
        if docs.is_empty() {
            tracing::warn!(subject = subject.as_str(), "no titles; subject skipped");
            continue;
        }
        let vectors = docs
            .iter()
            .map(|d| {
                emb.vector(&d.id)
                    .ok_or_else(|| spillover::Error::Integrity(format!("no embedding for document `{}`", d.id)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        out.push(SubjectData {
            subject: subject.clone(),
            ids: docs.iter().map(|d| d.id.clone()).collect(),
            vectors,
            texts: docs.iter().map(|d| d.text.as_deref()).collect(),
        });
    }
    Ok(out)
}

fn fit_all(data: &[SubjectData<'_>], params: &ClusterParams) -> anyhow::Result<Vec<ClusterModel>> {
    let mut models = Vec::new();
    for s in data {
        match fit_subject(&s.subject, &s.ids, &s.vectors, &s.texts, params) {
            Ok(m) => models.push(m),
            Err(e @ spillover::Error::Data(_)) => tracing::warn!("{e}; subject skipped"),
            Err(e) => return Err(e.into()),
        }
    }
    Ok(models)
}

fn write_models(dir: &Path, models: &[ClusterModel]) -> anyhow::Result<()> {
    let model_dir = dir.join("models");
    std::fs::create_dir_all(&model_dir)?;
    for m in models {
        save_model(m, &model_dir, &slug(&m.subject))?;
    }
    let refs: Vec<&ClusterModel> = models.iter().collect();
    let mut w = inputs::create(dir, "cluster_labels.csv")?;
    write_labels_csv(&mut w, &refs)?;
    w.flush()?;

    let mut w = inputs::create(dir, "clusters.csv")?;
    writeln!(w, "subject,cluster_id,size,keywords")?;
    for m in models {
        for (c, size) in m.cluster_sizes().iter().enumerate() {
            writeln!(w, "{},{c},{size},{}", csv_field(&m.subject), csv_field(&m.keywords[c].join(" ")))?;
        }
    }
    w.flush()?;

    let mut w = inputs::create(dir, "subjects.csv")?;
    writeln!(w, "subject,documents,min_cluster_size,clusters,dense,reassigned,absorbed,noise")?;
    for m in models {
        let s = stage_counts(m);
        let get = |k: &str| s.get(k).copied().unwrap_or(0);
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            csv_field(&m.subject),
            m.doc_ids.len(),
            m.min_cluster_size,
            m.n_clusters(),
            get("dense"),
            get("reassigned"),
            get("absorbed"),
            get("noise")
        )?;
    }
    w.flush()?;
    Ok(())
}

fn run_grid(data: &[SubjectData<'_>], cfg: &RunConfig) -> anyhow::Result<()> {
    let cells: Vec<ClusterParams> = robustness_grid()
        .into_iter()
        .map(|c| ClusterParams {
            min_floor: cfg.cluster.min_floor,
            keywords_per_cluster: cfg.cluster.keywords_per_cluster,
            min_samples: cfg.cluster.min_samples,
            ..c
        })
        .collect();
    let fitted = cells
        .par_iter()
        .map(|p| fit_all(data, p))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let mut w = inputs::create(&cfg.out, "grid.csv")?;
    writeln!(
        w,
        "cell,subject,pca_components,gamma,noise_reassign_threshold,absorb_cosine_threshold,clusters,noise"
    )?;
    for (i, (p, models)) in cells.iter().zip(&fitted).enumerate() {
        write_models(&cfg.out.join("grid").join(format!("cell_{i:02}")), models)?;
        for m in models {
            writeln!(
                w,
                "{i},{},{},{},{},{},{},{}",
                csv_field(&m.subject),
                p.pca_components,
                p.gamma,
                p.noise_reassign_threshold,
                p.absorb_cosine_threshold,
                m.n_clusters(),
                stage_counts(m).get("noise").copied().unwrap_or(0)
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Models saved in `dir`, keyed by subject.
pub fn load_models(dir: &Path) -> anyhow::Result<BTreeMap<String, ClusterModel>> {
    if !dir.is_dir() {
        return Err(UsageError(format!("model directory `{}` does not exist", dir.display())).into());
    }
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "json"));
    paths.sort();
    let mut models = BTreeMap::new();
    for p in paths {
        let m = load_model(&p)?;
        models.insert(m.subject.clone(), m);
    }
    if models.is_empty() {
        return Err(UsageError(format!("no models in `{}`", dir.display())).into());
    }
    Ok(models)
}

fn run_assign(corpus: &Corpus, emb: &EmbeddingSet, cfg: &RunConfig, dir: &Path) -> anyhow::Result<()> {
    let models = load_models(dir)?;
    let entries = certain_entries(corpus, cfg);
    let mut by_subject: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    let mut unmatched = 0usize;
    for e in &entries {
        if models.contains_key(&e.field) {
            by_subject.entry(e.field.as_str()).or_default().push(e.id.clone());
        } else {
            unmatched += 1;
        }
    }
    if unmatched > 0 {
        tracing::warn!(unmatched, "lexicon entries whose subject has no model were not assigned");
    }
    let mut w = inputs::create(&cfg.out, "lexicon_assignments.csv")?;
    writeln!(w, "id,subject,cluster_id")?;
    for (subject, ids) in by_subject {
        let set = emb.select(&ids)?;
        for (id, c) in assign_external(&set, &models[subject])? {
            writeln!(w, "{},{},{c}", csv_field(&id), csv_field(subject))?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn run(args: &ClusterArgs, cfg: &RunConfig) -> anyhow::Result<()> {
    cfg.cluster.validate()?;
    let corpus = inputs::corpus(cfg)?;
    let emb = inputs::embeddings(cfg, &corpus)?;
    if args.assign {
        let dir = args.models.as_deref().expect("clap enforces --models");
        return run_assign(&corpus, &emb, cfg, dir);
    }
    let subjects: Vec<String> = if args.subjects.is_empty() {
        let known = corpus.known_fields();
        cfg.fields.lambda.iter().filter(|f| known.contains(*f)).cloned().collect()
    } else {
        args.subjects.clone()
    };
    let data = subject_data(&corpus, &emb, &subjects)?;
    if data.is_empty() {
        return Err(spillover::Error::Data("no subject has titles to cluster".into()).into());
    }
    if args.grid {
        run_grid(&data, cfg)
    } else {
        let models = fit_all(&data, &cfg.cluster)?;
        write_models(&cfg.out, &models)
    }
}
