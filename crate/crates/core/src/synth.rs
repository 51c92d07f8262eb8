//! Seeded synthetic corpora, panels and regression data with planted ground
//! truth, plus brute-force reference implementations of the kernel, the
//! measures and fixed-effects least squares.
//!
//! The reference implementations deliberately avoid the library's own
//! arithmetic: they compute cosines, sorts, window filters and dummy-matrix
//! solves from scratch.

use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{DocKind, Document, FieldSetConfig};
use crate::econometrics::{Design, PanelRow};
use crate::embeddings::EmbeddingSet;
use crate::error::{Error, Result};

mod oracle;

pub use oracle::{oracle_measures, oracle_ols, oracle_topk, OracleFit, OracleOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Omega,
    Lambda,
    Placebo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthField {
    pub label: String,
    pub domain: Domain,
    #[serde(default = "default_kind")]
    pub kind: DocKind,
}

fn default_kind() -> DocKind {
    DocKind::Title
}

impl SynthField {
    pub fn new(label: &str, domain: Domain) -> SynthField {
        SynthField {
            label: label.to_string(),
            domain,
            kind: DocKind::Title,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub fields: Vec<SynthField>,
    /// Inclusive year range.
    pub years: (i32, i32),
    /// Documents per field-year drawn uniformly from this inclusive range.
    pub docs_per_field_year: (usize, usize),
    pub dim: usize,
    /// Yearly rotation, in radians, of each field mean toward its drift
    /// direction.
    pub drift: f64,
    /// How far a prescriptive document with proximity 1 moves toward the
    /// propositional past mean.
    pub omega_mix: f64,
    /// Pull toward the own field's future, multiplied by coupling and
    /// proximity.
    pub pull: f64,
    pub coupling_pre: f64,
    pub coupling_post: f64,
    /// First year with `coupling_post`.
    pub break_year: i32,
    /// Per-document noise norm (expected).
    pub noise: f64,
    /// Lag, in years, between a document and the propositional past it
    /// draws on is half this window.
    pub tau: u32,
    pub subfields_per_field: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            fields: vec![
                SynthField::new("astronomy", Domain::Omega),
                SynthField::new("mathematics", Domain::Omega),
                SynthField::new("navigation", Domain::Lambda),
                SynthField::new("technical instructions trades", Domain::Lambda),
                SynthField::new("poetry", Domain::Placebo),
                SynthField::new("sermons", Domain::Placebo),
            ],
            years: (1640, 1800),
            docs_per_field_year: (4, 6),
            dim: 32,
            drift: 0.025,
            omega_mix: 0.6,
            pull: 1.0,
            coupling_pre: -0.5,
            coupling_post: 0.5,
            break_year: 1720,
            noise: 0.3,
            tau: 20,
            subfields_per_field: 5,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn coupling(&self, year: i32) -> f64 {
        if year < self.break_year {
            self.coupling_pre
        } else {
            self.coupling_post
        }
    }

    pub fn null(mut self) -> Self {
        self.coupling_pre = 0.0;
        self.coupling_post = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::Config(format!("dim must be at least 2, got {}", self.dim)));
        }
        if self.fields.is_empty() || self.years.0 > self.years.1 {
            return Err(Error::Config("need at least one field and a non-empty year range".into()));
        }
        if self.docs_per_field_year.0 > self.docs_per_field_year.1 {
            return Err(Error::Config("docs_per_field_year range is inverted".into()));
        }
        if self.subfields_per_field == 0 {
            return Err(Error::Config("subfields_per_field must be positive".into()));
        }
        Ok(())
    }

    /// Field sets implied by the configured domains.
    pub fn field_sets(&self) -> FieldSetConfig {
        let of = |d: Domain| {
            self.fields
                .iter()
                .filter(|f| f.domain == d)
                .map(|f| f.label.clone())
                .collect()
        };
        FieldSetConfig {
            omega: of(Domain::Omega),
            lambda: of(Domain::Lambda),
            spillover_source_excludes_patents: true,
        }
    }
}

/// Planted quantities per document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub id: String,
    pub field: String,
    pub year: i32,
    /// Proximity to the propositional past, for prescriptive documents.
    pub proximity: Option<f64>,
    /// Signed forward pull actually applied.
    pub pull: f64,
}

pub struct SynthCorpus {
    pub documents: Vec<Document>,
    pub embeddings: EmbeddingSet,
    pub truth: Vec<TruthRow>,
    pub fields: FieldSetConfig,
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

/// Remove components along each of `against`, then normalize.
fn orthogonal_unit(mut v: Vec<f64>, against: &[&Vec<f64>]) -> Vec<f64> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for a in against {
        let mut b = (*a).clone();
        for q in &basis {
            let d: f64 = q.iter().zip(&b).map(|(x, y)| x * y).sum();
            b.iter_mut().zip(q).for_each(|(x, qi)| *x -= d * qi);
        }
        let n = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            basis.push(b.into_iter().map(|x| x / n).collect());
        }
    }
    for q in &basis {
        let d: f64 = q.iter().zip(&v).map(|(x, y)| x * y).sum();
        v.iter_mut().zip(q).for_each(|(x, qi)| *x -= d * qi);
    }
    unit(v)
}

pub fn slug(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect()
}

/// Generate a corpus whose prescriptive documents sit at a planted distance
/// from the propositional past and are pulled toward their own field's
/// future by `coupling(year) * proximity * pull`.
pub fn generate(config: &SynthConfig) -> Result<SynthCorpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let d = config.dim;
    // Anchors and drift directions form one orthonormal family when the
    // dimension allows, so no field's motion leaks into another's plane.
    let mut family: Vec<Vec<f64>> = Vec::with_capacity(2 * config.fields.len());
    for _ in 0..2 * config.fields.len() {
        let raw = gaussian(&mut rng, d);
        let v = if family.len() < d {
            let against: Vec<&Vec<f64>> = family.iter().collect();
            orthogonal_unit(raw, &against)
        } else {
            unit(raw)
        };
        family.push(v);
    }
    let anchors: Vec<Vec<f64>> = family.iter().step_by(2).cloned().collect();
    let drifts: Vec<Vec<f64>> = family.iter().skip(1).step_by(2).cloned().collect();
    let omega_idx: Vec<usize> = (0..config.fields.len())
        .filter(|&i| config.fields[i].domain == Domain::Omega)
        .collect();
    let mid = f64::from(config.years.0 + config.years.1) / 2.0;
    // Field means rotate from the anchor toward the drift direction at
    // `drift` radians per year, so their norm stays one.
    let mean_at = |f: usize, t: f64| -> Vec<f64> {
        let theta = config.drift * (t - mid);
        anchors[f]
            .iter()
            .zip(&drifts[f])
            .map(|(a, u)| theta.cos() * a + theta.sin() * u)
            .collect()
    };
    let tangent_at = |f: usize, t: f64| -> Vec<f64> {
        let theta = config.drift * (t - mid);
        anchors[f]
            .iter()
            .zip(&drifts[f])
            .map(|(a, u)| -theta.sin() * a + theta.cos() * u)
            .collect()
    };
    let lag = f64::from(config.tau) / 2.0;
    let noise_sd = config.noise / (d as f64).sqrt();

    let mut documents = Vec::new();
    let mut ids = Vec::new();
    let mut values: Vec<f32> = Vec::new();
    let mut truth = Vec::new();
    for year in config.years.0..=config.years.1 {
        let t = f64::from(year);
        let omega_past: Option<Vec<f64>> = (!omega_idx.is_empty()).then(|| {
            let mut acc = vec![0.0; d];
            for &o in &omega_idx {
                for (a, m) in acc.iter_mut().zip(mean_at(o, t - lag)) {
                    *a += m / omega_idx.len() as f64;
                }
            }
            acc
        });
        for (fi, field) in config.fields.iter().enumerate() {
            let count = rng.random_range(config.docs_per_field_year.0..=config.docs_per_field_year.1);
            for j in 0..count {
                let base = mean_at(fi, t);
                let mut v = base.clone();
                let (mut proximity, mut pull) = (None, 0.0);
                if field.domain == Domain::Lambda {
                    let p: f64 = rng.random_range(0.0..1.0);
                    if let Some(target) = &omega_past {
                        for ((x, tg), b) in v.iter_mut().zip(target).zip(&base) {
                            *x += config.omega_mix * p * (tg - b);
                        }
                    }
                    pull = config.coupling(year) * p * config.pull;
                    for (x, u) in v.iter_mut().zip(&tangent_at(fi, t)) {
                        *x += pull * u;
                    }
                    proximity = Some(p);
                }
                for x in v.iter_mut() {
                    *x += noise_sd * Distribution::<f64>::sample(&StandardNormal, &mut rng);
                }
                let log_wc: f64 = rng.random_range(500f64.ln()..50_000f64.ln());
                let sub = rng.random_range(0..config.subfields_per_field);
                let id = format!("{}-{year}-{j:03}", slug(&field.label));
                documents.push(Document {
                    id: id.clone(),
                    year,
                    field: field.label.clone(),
                    subfield: Some(format!("{}/{sub}", field.label)),
                    kind: field.kind,
                    word_count: log_wc.exp().round() as u32,
                    flags: BTreeMap::new(),
                    language: Some("eng".into()),
                    text: None,
                    citations: None,
                    certainty: None,
                });
                truth.push(TruthRow {
                    id: id.clone(),
                    field: field.label.clone(),
                    year,
                    proximity,
                    pull,
                });
                ids.push(id);
                let v = unit(v);
                values.extend(v.iter().map(|&x| x as f32));
            }
        }
    }
    let embeddings = EmbeddingSet::from_rows(ids, d, values)?;
    Ok(SynthCorpus {
        documents,
        embeddings,
        truth,
        fields: config.field_sets(),
    })
}

pub fn write_truth_csv<W: Write>(mut w: W, truth: &[TruthRow]) -> Result<()> {
    writeln!(w, "id,field,year,proximity,pull")?;
    for r in truth {
        let p = r.proximity.map(|p| p.to_string()).unwrap_or_default();
        writeln!(w, "{},\"{}\",{},{},{}", r.id, r.field.replace('"', "\"\""), r.year, p, r.pull)?;
    }
    Ok(())
}

/// Balanced panel with a planted post-period level shift on treated units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PanelConfig {
    pub units: usize,
    pub years: (i32, i32),
    pub treated_share: f64,
    /// First treated year.
    pub post_start: i32,
    pub delta: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for PanelConfig {
    fn default() -> Self {
        PanelConfig {
            units: 25,
            years: (1700, 1719),
            treated_share: 0.5,
            post_start: 1715,
            delta: 0.1,
            noise: 0.05,
            seed: 0,
        }
    }
}

/// Outcome `unit effect + year effect + delta * treated * post + noise`.
/// Treatment is 1 for treated units and 0 otherwise.
pub fn generate_panel(config: &PanelConfig) -> Result<Vec<PanelRow>> {
    if config.units < 2 || config.years.0 >= config.years.1 {
        return Err(Error::Config("panel needs at least 2 units and 2 years".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let treated = (config.units as f64 * config.treated_share).round() as usize;
    let year_fx: Vec<f64> = (config.years.0..=config.years.1)
        .map(|_| 0.3 * Distribution::<f64>::sample(&StandardNormal, &mut rng))
        .collect();
    let mut rows = Vec::new();
    for u in 0..config.units {
        let unit_fx = 0.5 * Distribution::<f64>::sample(&StandardNormal, &mut rng);
        let d = if u < treated { 1.0 } else { 0.0 };
        for (ti, year) in (config.years.0..=config.years.1).enumerate() {
            let post = if year >= config.post_start { 1.0 } else { 0.0 };
            let e: f64 = StandardNormal.sample(&mut rng);
            rows.push(PanelRow {
                unit: format!("unit{u:03}"),
                time: year,
                outcome: unit_fx + year_fx[ti] + config.delta * d * post + config.noise * e,
                treatment: d,
                subject: Some(format!("subject{}", u % 3)),
            });
        }
    }
    Ok(rows)
}

/// Log-log data with a planted elasticity and year effects correlated with
/// the regressor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ElasticityConfig {
    pub n: usize,
    pub years: (i32, i32),
    pub elasticity: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for ElasticityConfig {
    fn default() -> Self {
        ElasticityConfig {
            n: 2000,
            years: (1700, 1799),
            elasticity: 1.82,
            noise: 0.1,
            seed: 0,
        }
    }
}

pub struct ElasticityData {
    pub ln_y: Vec<f64>,
    pub ln_x: Vec<f64>,
    pub year: Vec<i32>,
}

pub fn generate_elasticity(config: &ElasticityConfig) -> Result<ElasticityData> {
    if config.n < 3 || config.years.0 > config.years.1 {
        return Err(Error::Config("elasticity data needs n >= 3 and a year range".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let span = (config.years.1 - config.years.0 + 1) as usize;
    let shift: Vec<f64> = (0..span).map(|_| StandardNormal.sample(&mut rng)).collect();
    let year_fx: Vec<f64> = shift
        .iter()
        .map(|s| 0.8 * s + 0.5 * Distribution::<f64>::sample(&StandardNormal, &mut rng))
        .collect();
    let mut data = ElasticityData {
        ln_y: Vec::with_capacity(config.n),
        ln_x: Vec::with_capacity(config.n),
        year: Vec::with_capacity(config.n),
    };
    for _ in 0..config.n {
        let t = rng.random_range(0..span);
        let x = 0.5 * shift[t] + Distribution::<f64>::sample(&StandardNormal, &mut rng);
        let e: f64 = StandardNormal.sample(&mut rng);
        data.ln_x.push(x);
        data.ln_y.push(config.elasticity * x + year_fx[t] + config.noise * e);
        data.year.push(config.years.0 + t as i32);
    }
    Ok(data)
}

/// Random regression design for equivalence checks: `p` regressors, two
/// crossed factors, optional period interactions of the first regressor.
pub fn random_design(rows: usize, p: usize, levels: (usize, usize), seed: u64) -> Design {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a: Vec<usize> = (0..rows).map(|_| rng.random_range(0..levels.0)).collect();
    let b: Vec<usize> = (0..rows).map(|_| rng.random_range(0..levels.1)).collect();
    let mut cols: Vec<Vec<f64>> = (0..p)
        .map(|_| (0..rows).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    let period: Vec<usize> = b.iter().map(|&l| l % 3).collect();
    let inter: Vec<Vec<f64>> = (0..3)
        .map(|k| (0..rows).map(|i| if period[i] == k { cols[0][i] } else { 0.0 }).collect())
        .collect();
    let fa: Vec<f64> = (0..levels.0).map(|_| StandardNormal.sample(&mut rng)).collect();
    let fb: Vec<f64> = (0..levels.1).map(|_| StandardNormal.sample(&mut rng)).collect();
    let y: Vec<Option<f64>> = (0..rows)
        .map(|i| {
            let signal: f64 = cols.iter().enumerate().map(|(j, c)| (j as f64 - 1.0) * c[i]).sum();
            let e: f64 = StandardNormal.sample(&mut rng);
            let mut v = signal + fa[a[i]] + fb[b[i]] + e * (1.0 + cols[0][i].abs());
            if rng.random_range(0.0..1.0) < 0.02 {
                v = f64::NAN;
            }
            v.is_finite().then_some(v)
        })
        .collect();
    // First regressor enters only through its period interactions.
    cols.remove(0);
    let mut design = Design::new("y", y)
        .fixed_effect(crate::econometrics::Factor::new("a", a))
        .fixed_effect(crate::econometrics::Factor::new("b", b));
    for (j, c) in cols.into_iter().enumerate() {
        design = design.regressor(&format!("x{}", j + 1), c.into_iter().map(Some).collect());
    }
    for (k, c) in inter.into_iter().enumerate() {
        design = design.regressor(&format!("x0_p{k}"), c.into_iter().map(Some).collect());
    }
    design
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_output() {
        let cfg = SynthConfig {
            years: (1700, 1710),
            ..SynthConfig::default()
        };
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.documents, b.documents);
        assert_eq!(a.embeddings, b.embeddings);
        assert_eq!(a.truth, b.truth);
        let other = generate(&SynthConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a.embeddings, other.embeddings);
    }

    #[test]
    fn rejects_tiny_dim() {
        let cfg = SynthConfig {
            dim: 1,
            ..SynthConfig::default()
        };
        assert!(matches!(generate(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn truth_follows_coupling() {
        let cfg = SynthConfig {
            years: (1715, 1725),
            ..SynthConfig::default()
        };
        let out = generate(&cfg).unwrap();
        for r in &out.truth {
            match r.proximity {
                Some(p) => assert_eq!(r.pull, cfg.coupling(r.year) * p * cfg.pull),
                None => assert_eq!(r.pull, 0.0),
            }
        }
        assert!(out.fields.lambda.contains("navigation"));
    }

    #[test]
    fn panel_shape() {
        let rows = generate_panel(&PanelConfig::default()).unwrap();
        assert_eq!(rows.len(), 500);
    }
}
