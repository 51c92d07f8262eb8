//! Run configuration: defaults, optional JSON file, then command-line
//! overrides. The resolved value is written next to every output.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spillover::clustering::ClusterParams;
use spillover::corpus::{FieldSetConfig, RangePolicy};
use spillover::econometrics::{uniform_bins, PeriodBin, SmallSample};
use spillover::measures::{EngineOptions, MeasureParams};
use spillover::synth::{ElasticityConfig, PanelConfig, SynthConfig};

use crate::UsageError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Inputs {
    /// JSON-lines document metadata.
    pub metadata: Option<PathBuf>,
    /// EMB1 vector file.
    pub embeddings: Option<PathBuf>,
    /// Ids file aligned to the vector rows.
    pub ids: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegressConfig {
    /// Inclusive sample years.
    pub years: (i32, i32),
    pub period_bins: Vec<PeriodBin>,
    pub small_sample: SmallSample,
}

impl Default for RegressConfig {
    fn default() -> Self {
        RegressConfig {
            years: (1660, 1779),
            period_bins: uniform_bins(1660, 1779, 20),
            small_sample: SmallSample::Cr1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DidConfig {
    /// Publication year of the external entries.
    pub shock_year: i32,
    pub event_bins: Vec<PeriodBin>,
    pub reference_bin: usize,
    /// Sub-topics with more prescriptive external entries than this are
    /// dropped from the panel.
    pub max_lexicon_entries: usize,
    pub drop_fields: Vec<String>,
    /// Drop external entries whose subject prediction certainty is below
    /// `certainty_threshold`.
    pub certainty_filter: bool,
    pub certainty_threshold: f64,
}

impl Default for DidConfig {
    fn default() -> Self {
        let mut event_bins = uniform_bins(1685, 1734, 5);
        event_bins.push(PeriodBin::new(1735, 1749));
        DidConfig {
            shock_year: 1704,
            event_bins,
            reference_bin: 3,
            max_lexicon_entries: 5,
            drop_fields: Vec::new(),
            certainty_filter: true,
            certainty_threshold: 0.7,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSection {
    pub corpus: SynthConfig,
    pub panel: PanelConfig,
    pub elasticity: ElasticityConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub subcommand: String,
    pub inputs: Inputs,
    pub range_policy: RangePolicy,
    pub measure: MeasureParams,
    pub engine: EngineOptions,
    pub fields: FieldSetConfig,
    pub regress: RegressConfig,
    pub cluster: ClusterParams,
    pub did: DidConfig,
    pub synth: SynthSection,
    pub out: PathBuf,
    pub seed: u64,
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            subcommand: String::new(),
            inputs: Inputs::default(),
            range_policy: RangePolicy::default(),
            measure: MeasureParams::default(),
            engine: EngineOptions::default(),
            fields: FieldSetConfig::default(),
            regress: RegressConfig::default(),
            cluster: ClusterParams::default(),
            did: DidConfig::default(),
            synth: SynthSection::default(),
            out: PathBuf::from("out"),
            seed: 0,
            threads: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<RunConfig> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config `{}`: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| UsageError(format!("invalid config `{}`: {e}", path.display())).into())
    }

    pub fn metadata(&self) -> anyhow::Result<&Path> {
        required(&self.inputs.metadata, "--metadata")
    }

    pub fn embeddings(&self) -> anyhow::Result<(&Path, PathBuf)> {
        let vec = required(&self.inputs.embeddings, "--embeddings")?;
        let ids = match &self.inputs.ids {
            Some(p) => p.clone(),
            None => vec.with_extension("ids"),
        };
        Ok((vec, ids))
    }

    pub fn write_to(&self, dir: &Path) -> anyhow::Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(dir.join("run_config.json"), text)?;
        Ok(())
    }
}

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> anyhow::Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| UsageError(format!("missing input: pass {flag} or set it in the config file")).into())
}

/// Comma-separated `lo-hi` bins given on the command line.
#[derive(Debug, Clone)]
pub struct BinList(pub Vec<PeriodBin>);

/// Parse `lo-hi` pairs separated by commas.
pub fn parse_bins(s: &str) -> Result<BinList, String> {
    s.split(',')
        .map(|part| {
            let (lo, hi) = part
                .trim()
                .split_once('-')
                .ok_or_else(|| format!("bin `{part}` is not of the form lo-hi"))?;
            let lo = lo.trim().parse().map_err(|_| format!("bad bin start `{lo}`"))?;
            let hi = hi.trim().parse().map_err(|_| format!("bad bin end `{hi}`"))?;
            Ok(PeriodBin::new(lo, hi))
        })
        .collect::<Result<_, String>>()
        .map(BinList)
}

/// Parse `lo-hi` or `lo..hi`.
pub fn parse_years(s: &str) -> Result<(i32, i32), String> {
    let (lo, hi) = s
        .split_once("..")
        .or_else(|| s.split_once('-'))
        .ok_or_else(|| format!("year range `{s}` is not of the form lo-hi"))?;
    let lo = lo.trim().parse().map_err(|_| format!("bad year `{lo}`"))?;
    let hi = hi.trim().parse().map_err(|_| format!("bad year `{hi}`"))?;
    Ok((lo, hi))
}
