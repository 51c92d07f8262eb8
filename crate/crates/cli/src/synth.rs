use std::io::Write;

use clap::{Args, ValueEnum};
use spillover::corpus::{write_metadata, AuthorFlag, DocKind, Document};
use spillover::embeddings::{write_embeddings, EmbeddingSet};
use spillover::synth::{
    generate, generate_elasticity, generate_panel, write_truth_csv, Domain, SynthCorpus, SynthField,
};

use crate::config::RunConfig;
use crate::inputs::{self, csv_field, fmt_num};

#[derive(Clone, Copy, Default, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    /// Metadata, embeddings and planted ground truth.
    #[default]
    Corpus,
    /// Unit-year panel with a planted post-period shift.
    Panel,
    /// Log-log data with a planted elasticity and year effects.
    Elasticity,
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value_t)]
    pub kind: Kind,
    /// Replace the placebo fields by this many generated ones.
    #[arg(long)]
    pub placebo_fields: Option<usize>,
    /// Zero coupling in both regimes.
    #[arg(long)]
    pub null: bool,
    /// Add this many lexicon entries published in the shock year.
    #[arg(long, default_value_t = 0)]
    pub lexicon_entries: usize,
    /// Attach a citations value to every prescriptive document.
    #[arg(long)]
    pub citations: bool,
    /// Set author flags on a deterministic subset of documents.
    #[arg(long)]
    pub author_flags: bool,
}

impl SynthArgs {
    pub fn apply(&self, cfg: &mut RunConfig) {
        let c = &mut cfg.synth.corpus;
        if let Some(n) = self.placebo_fields {
            c.fields.retain(|f| f.domain != Domain::Placebo);
            c.fields
                .extend((1..=n).map(|i| SynthField::new(&format!("placebo {i:02}"), Domain::Placebo)));
        }
        if self.null {
            *c = c.clone().null();
        }
    }
}

/// Lexicon entries copied from documents published up to the shock year:
/// mostly propositional, every eighth prescriptive. Every fifth entry
/// has a certainty below the default threshold.
fn add_lexicon_entries(synth: &mut SynthCorpus, n: usize, shock_year: i32) -> anyhow::Result<()> {
    let omega = &synth.fields.omega;
    let lambda = &synth.fields.lambda;
    let recent = |set: &std::collections::BTreeSet<String>| -> Vec<usize> {
        synth
            .documents
            .iter()
            .enumerate()
            .filter(|(_, d)| set.contains(&d.field) && d.year <= shock_year && d.year > shock_year - 20)
            .map(|(i, _)| i)
            .collect()
    };
    let (om, la) = (recent(omega), recent(lambda));
    if om.is_empty() {
        return Err(spillover::Error::Config(format!("no propositional documents before {shock_year}")).into());
    }
    let dim = synth.embeddings.dim();
    let mut ids = synth.embeddings.ids().to_vec();
    let mut data = synth.embeddings.as_slice().to_vec();
    for i in 0..n {
        let pool = if i % 8 == 7 && !la.is_empty() { &la } else { &om };
        let src = synth.documents[pool[(i * 7) % pool.len()]].clone();
        let id = format!("lex{i:04}");
        data.extend_from_slice(synth.embeddings.vector(&src.id).expect("generated"));
        ids.push(id.clone());
        synth.documents.push(Document {
            id,
            year: shock_year,
            field: src.field,
            subfield: None,
            kind: DocKind::LexiconEntry,
            word_count: 251,
            flags: Default::default(),
            language: Some("eng".into()),
            text: None,
            citations: None,
            certainty: Some(if i % 5 == 4 { 0.5 } else { 0.9 }),
        });
    }
    synth.embeddings = EmbeddingSet::from_rows(ids, dim, data)?;
    Ok(())
}

fn corpus(args: &SynthArgs, cfg: &RunConfig) -> anyhow::Result<()> {
    let mut synth = generate(&cfg.synth.corpus)?;
    if args.lexicon_entries > 0 {
        add_lexicon_entries(&mut synth, args.lexicon_entries, cfg.did.shock_year)?;
    }
    if args.citations {
        let prox: std::collections::HashMap<&str, f64> = synth
            .truth
            .iter()
            .filter_map(|t| t.proximity.map(|p| (t.id.as_str(), p)))
            .collect();
        for d in &mut synth.documents {
            if let Some(p) = prox.get(d.id.as_str()) {
                d.citations = Some((10.0 * p).round() + f64::from(d.year.rem_euclid(3)));
            }
        }
    }
    if args.author_flags {
        for (i, d) in synth.documents.iter_mut().enumerate() {
            for (j, flag) in AuthorFlag::ALL.iter().enumerate() {
                d.flags.insert(*flag, (i * (j + 3) + j) % 7 == 0);
            }
        }
    }
    std::fs::create_dir_all(&cfg.out)?;
    let mut w = inputs::create(&cfg.out, "metadata.jsonl")?;
    write_metadata(&mut w, &synth.documents)?;
    w.flush()?;
    write_embeddings(
        &synth.embeddings,
        &cfg.out.join("embeddings.emb"),
        &cfg.out.join("embeddings.ids"),
    )?;
    let mut w = inputs::create(&cfg.out, "truth.csv")?;
    write_truth_csv(&mut w, &synth.truth)?;
    w.flush()?;
    inputs::write_json(&cfg.out, "fields.json", &synth.fields)
}

fn panel(cfg: &RunConfig) -> anyhow::Result<()> {
    let rows = generate_panel(&cfg.synth.panel)?;
    let mut w = inputs::create(&cfg.out, "panel.csv")?;
    writeln!(w, "unit,time,outcome,treatment,subject")?;
    for r in &rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            csv_field(&r.unit),
            r.time,
            fmt_num(r.outcome),
            fmt_num(r.treatment),
            csv_field(r.subject.as_deref().unwrap_or(""))
        )?;
    }
    w.flush()?;
    Ok(())
}

fn elasticity(cfg: &RunConfig) -> anyhow::Result<()> {
    let d = generate_elasticity(&cfg.synth.elasticity)?;
    let mut w = inputs::create(&cfg.out, "elasticity.csv")?;
    writeln!(w, "ln_y,ln_x,year")?;
    for ((y, x), t) in d.ln_y.iter().zip(&d.ln_x).zip(&d.year) {
        writeln!(w, "{},{},{t}", fmt_num(*y), fmt_num(*x))?;
    }
    w.flush()?;
    Ok(())
}

pub fn run(args: &SynthArgs, cfg: &RunConfig) -> anyhow::Result<()> {
    match args.kind {
        Kind::Corpus => corpus(args, cfg),
        Kind::Panel => panel(cfg),
        Kind::Elasticity => elasticity(cfg),
    }
}
