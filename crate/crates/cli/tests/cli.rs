use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_spillover"))
}

fn run(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("binary runs");
    if !out.status.success() {
        eprintln!("stderr: {}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &str = r#"{"synth": {"corpus": {
  "fields": [
    {"label": "astronomy", "domain": "omega"},
    {"label": "mathematics", "domain": "omega"},
    {"label": "navigation", "domain": "lambda"},
    {"label": "technical instructions trades", "domain": "lambda"},
    {"label": "patents", "domain": "lambda", "kind": "patent"},
    {"label": "poetry", "domain": "placebo"},
    {"label": "sermons", "domain": "placebo"}
  ],
  "years": [1640, 1779],
  "docs_per_field_year": [3, 4],
  "dim": 16
}}}"#;

fn leak(p: PathBuf) -> &'static str {
    Box::leak(p.to_str().unwrap().to_string().into_boxed_str())
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new(extra: &[&str]) -> Fixture {
        let dir = TempDir::new().unwrap();
        std::fs::write(dir.path().join("config.json"), SMALL).unwrap();
        let f = Fixture { dir };
        let mut args = vec!["--config", f.config(), "--out", f.out("corpus"), "--seed", "7", "synth"];
        args.extend_from_slice(extra);
        assert!(run(&args).status.success());
        f
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn config(&self) -> &'static str {
        leak(self.path("config.json"))
    }

    fn out(&self, name: &str) -> &'static str {
        leak(self.path(name))
    }

    fn inputs(&self) -> Vec<&'static str> {
        let c = self.path("corpus");
        vec!["--metadata", leak(c.join("metadata.jsonl")), "--embeddings", leak(c.join("embeddings.emb"))]
    }

    fn cmd(&self, out: &str, sub: &str, extra: &[&str]) -> Output {
        let mut args = vec!["--config", self.config(), "--out", self.out(out), sub];
        args.extend(self.inputs());
        args.extend_from_slice(extra);
        run(&args)
    }
}

fn read(p: PathBuf) -> String {
    std::fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn missing_embeddings_file_exits_with_usage_code() {
    let f = Fixture::new(&[]);
    let out = run(&[
        "--out",
        f.out("m"),
        "measure",
        "--metadata",
        f.inputs()[1],
        "--embeddings",
        f.out("absent.emb"),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not exist"));
}

#[test]
fn bad_invocations_exit_with_usage_code() {
    assert_eq!(run(&["measur"]).status.code(), Some(2));
    let dir = TempDir::new().unwrap();
    let out = run(&["--out", s(dir.path()), "regress", "--mode", "fisher"]);
    assert_eq!(out.status.code(), Some(2));
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{not json").unwrap();
    assert_eq!(run(&["--config", s(&bad), "--out", s(dir.path()), "synth"]).status.code(), Some(2));
}

#[test]
fn data_errors_exit_with_runtime_code() {
    let f = Fixture::new(&[]);
    // Default synth has no citations column.
    let out = f.cmd("v", "validate", &["--mode", "citations"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn resolved_config_is_echoed_into_output() {
    let f = Fixture::new(&[]);
    assert!(f.cmd("m", "measure", &["--k", "15", "--tau", "10"]).status.success());
    let cfg: serde_json::Value = serde_json::from_str(&read(f.path("m").join("run_config.json"))).unwrap();
    assert_eq!(cfg["subcommand"], "measure");
    assert_eq!(cfg["measure"]["k"], 15);
    assert_eq!(cfg["measure"]["tau"], 10);
    assert_eq!(cfg["synth"]["corpus"]["dim"], 16);
}

#[test]
fn k_sweep_writes_one_file_per_value() {
    let f = Fixture::new(&[]);
    assert!(f.cmd("m", "measure", &["--k", "10,20,30"]).status.success());
    let mut firsts = Vec::new();
    for k in [10, 20, 30] {
        let text = read(f.path("m").join(format!("measures_k{k}.csv")));
        assert!(text.starts_with("id,year,field,innovation_raw"));
        assert!(f.path("m").join(format!("created_k{k}.csv")).is_file());
        firsts.push(text);
    }
    assert_ne!(firsts[0], firsts[2]);
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let f = Fixture::new(&[]);
    for (out, t) in [("t1", "1"), ("t4", "4")] {
        let mut args = vec!["--config", f.config(), "--out", f.out(out), "--threads", t, "measure"];
        args.extend(f.inputs());
        assert!(run(&args).status.success());
    }
    assert_eq!(read(f.path("t1").join("measures.csv")), read(f.path("t4").join("measures.csv")));
}

#[test]
fn placebo_sweep_emits_one_row_per_field_plus_fisher() {
    let f = Fixture::new(&["--placebo-fields", "44"]);
    assert!(f.cmd("p", "regress", &["--mode", "placebo"]).status.success());
    let text = read(f.path("p").join("placebo.csv"));
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1 + 44 + 1);
    assert!(lines[0].starts_with("source,spill_1660_1679"));
    assert!(lines.last().unwrap().starts_with("fisher_p,"));
    for p in lines.last().unwrap().split(',').skip(1).filter(|v| !v.is_empty()) {
        let p: f64 = p.parse().unwrap();
        assert!((1.0 / 45.0 - 1e-12..=1.0).contains(&p));
    }
    assert!(read(f.path("p").join("results.csv")).contains("spillover_omega,spill_1660_1679"));
    let report: serde_json::Value = serde_json::from_str(&read(f.path("p").join("results.json"))).unwrap();
    assert_eq!(report["placebo"]["placebos"].as_array().unwrap().len(), 44);
}

#[test]
fn fisher_mode_matches_share_of_extreme_placebos() {
    let dir = TempDir::new().unwrap();
    let mut placebos = vec!["0.01"; 43];
    placebos.extend(["0.6", "-0.7"]);
    let list = placebos.join(",");
    for (original, expected) in [("0.9", 1.0 / 46.0), ("0.5", 3.0 / 46.0), ("0.65", 2.0 / 46.0)] {
        let out = run(&["--out", s(dir.path()), "regress", "--mode", "fisher", "--original", original, "--placebos", &list]);
        assert!(out.status.success());
        let text = read(dir.path().join("fisher.csv"));
        let p: f64 = text.lines().nth(1).unwrap().rsplit(',').next().unwrap().parse().unwrap();
        assert!((p - expected).abs() < 1e-12, "{original}: {p}");
    }
}

#[test]
fn regression_modes_run_on_synthetic_corpus() {
    let f = Fixture::new(&["--author-flags"]);
    assert!(f.cmd("r", "regress", &[]).status.success());
    let r = read(f.path("r").join("results.csv"));
    assert!(r.starts_with("model,term,estimate,se,t,p,N,G,r2"));
    assert_eq!(r.lines().filter(|l| l.contains(",spill_")).count(), 6);

    assert!(f.cmd("r10", "regress", &["--bins", "1660-1669,1670-1679,1680-1689"]).status.success());
    assert!(read(f.path("r10").join("results.csv")).contains("spill_1680_1689"));

    assert!(f.cmd("mech", "regress", &["--mode", "mechanism"]).status.success());
    assert!(read(f.path("mech").join("results.csv")).contains("mechanism,royal_society"));

    assert!(f.cmd("ind", "regress", &["--mode", "industry"]).status.success());
    let ind = read(f.path("ind").join("results.csv"));
    assert!(ind.contains("industry,spill_patents/"));
    let n: Vec<&str> = ind.lines().nth(1).unwrap().split(',').collect();
    assert!(n[6].parse::<usize>().unwrap() > 0);
}

#[test]
fn complementarity_mode_reads_concepts() {
    let f = Fixture::new(&[]);
    let concept = serde_json::json!([{
        "name": "mechanics",
        "terms": ["lever", "pulley"],
        "term_vectors": [(0..16).map(|i| (i as f32).sin()).collect::<Vec<_>>(),
                         (0..16).map(|i| (i as f32).cos()).collect::<Vec<_>>()]
    }]);
    let path = f.path("concepts.json");
    std::fs::write(&path, concept.to_string()).unwrap();
    let out = f.cmd("c", "regress", &["--mode", "complementarity", "--concepts", s(&path)]);
    assert!(out.status.success());
    let r = read(f.path("c").join("results.csv"));
    assert!(r.contains("complementarity,spillover_x_mechanics"));
}

#[test]
fn cluster_reruns_are_byte_identical() {
    let f = Fixture::new(&[]);
    assert!(f.cmd("c1", "cluster", &[]).status.success());
    assert!(f.cmd("c2", "cluster", &[]).status.success());
    for name in [
        "cluster_labels.csv",
        "clusters.csv",
        "subjects.csv",
        "models/navigation.json",
        "models/navigation_basis.emb",
    ] {
        let a = std::fs::read(f.path("c1").join(name)).unwrap();
        let b = std::fs::read(f.path("c2").join(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
    let labels = read(f.path("c1").join("cluster_labels.csv"));
    assert!(labels.starts_with("id,subject,cluster_id,stage"));
}

#[test]
fn cluster_grid_emits_one_model_set_per_cell() {
    let f = Fixture::new(&[]);
    assert!(f.cmd("g", "cluster", &["--grid", "--subjects", "navigation"]).status.success());
    let cells = spillover::clustering::robustness_grid().len();
    let grid = read(f.path("g").join("grid.csv"));
    assert_eq!(grid.lines().count(), 1 + cells);
    for i in 0..cells {
        assert!(f.path("g").join(format!("grid/cell_{i:02}/models/navigation.json")).is_file());
    }
}

#[test]
fn assignment_maps_every_certain_entry_with_a_model() {
    let f = Fixture::new(&["--lexicon-entries", "40"]);
    assert!(f.cmd("c", "cluster", &[]).status.success());
    let models = f.out("c/models");
    assert!(f.cmd("a", "cluster", &["--assign", "--models", models]).status.success());
    let meta = read(f.path("corpus").join("metadata.jsonl"));
    let expected = meta
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap())
        .filter(|d| d["kind"] == "lexicon_entry" && d["certainty"].as_f64().unwrap() >= 0.7)
        .filter(|d| ["navigation", "technical instructions trades"].contains(&d["field"].as_str().unwrap()))
        .count();
    assert!(expected > 0);
    let text = read(f.path("a").join("lexicon_assignments.csv"));
    assert_eq!(text.lines().count(), 1 + expected);
}

#[test]
fn did_recovers_planted_panel_effect() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    assert!(run(&["--out", s(d), "--seed", "3", "synth", "--kind", "panel"]).status.success());
    let panel = d.join("panel.csv");
    let out = d.join("did");
    let bins = "1700-1704,1705-1709,1710-1714,1715-1719";
    let res = run(&["--out", s(&out), "did", "--panel", s(&panel), "--bins", bins, "--reference-bin", "2"]);
    assert!(res.status.success());
    let es = read(out.join("event_study.csv"));
    assert!(es.starts_with("bin,term,estimate,se,p,ci90_lo,ci90_hi,reference"));
    let post: f64 = es
        .lines()
        .find(|l| l.starts_with("1715-1719"))
        .unwrap()
        .split(',')
        .nth(2)
        .unwrap()
        .parse()
        .unwrap();
    assert!((post - 0.1).abs() < 0.03, "{post}");
    assert!(out.join("did.json").is_file() && out.join("results.csv").is_file());
}

/// Labels taken from the generator's sub-field tags, one unit per tag.
fn subfield_labels(f: &Fixture) -> PathBuf {
    let mut csv = String::from("id,subject,cluster_id,stage\n");
    for l in read(f.path("corpus").join("metadata.jsonl")).lines() {
        let d: serde_json::Value = serde_json::from_str(l).unwrap();
        let field = d["field"].as_str().unwrap();
        if d["kind"] == "title" && ["navigation", "technical instructions trades"].contains(&field) {
            let sub = d["subfield"].as_str().unwrap().rsplit('/').next().unwrap().to_string();
            csv.push_str(&format!("{},{field},{sub},dense\n", d["id"].as_str().unwrap()));
        }
    }
    let p = f.path("labels.csv");
    std::fs::write(&p, csv).unwrap();
    p
}

#[test]
fn did_corpus_mode_builds_subtopic_panel() {
    let f = Fixture::new(&["--lexicon-entries", "60"]);
    let labels = subfield_labels(&f);
    assert!(f.cmd("d", "did", &["--labels", s(&labels)]).status.success());
    let report: serde_json::Value = serde_json::from_str(&read(f.path("d").join("did.json"))).unwrap();
    let units = report["units"].as_array().unwrap();
    assert_eq!(units.len(), 10);
    assert!(units.iter().any(|u| u["unit"].as_str().unwrap().starts_with("navigation#")));
    assert_eq!(report["result"]["event_terms"].as_array().unwrap().len(), 11);
    assert!(read(f.path("d").join("panel.csv")).starts_with("unit,time,outcome,treatment,subject"));

    assert!(f.cmd("dn", "did", &["--labels", s(&labels), "--drop-field", "navigation", "--binary"]).status.success());
    let report: serde_json::Value = serde_json::from_str(&read(f.path("dn").join("did.json"))).unwrap();
    let units = report["units"].as_array().unwrap();
    assert_eq!(units.len(), 5);
    assert!(units.iter().all(|u| u["subject"] == "technical instructions trades"));
    assert_eq!(report["treatment"], "binary");
}

#[test]
fn lexicon_threshold_excludes_covered_subtopics() {
    let f = Fixture::new(&["--lexicon-entries", "200"]);
    let labels = subfield_labels(&f);
    // Every prescriptive entry lands in sub-topic 0 of its subject.
    let entries = read(f.path("corpus").join("metadata.jsonl"))
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap())
        .filter(|d| d["kind"] == "lexicon_entry")
        .map(|d| format!("{},{},0\n", d["id"].as_str().unwrap(), d["field"].as_str().unwrap()))
        .collect::<String>();
    let assign = f.path("assign.csv");
    std::fs::write(&assign, format!("id,subject,cluster_id\n{entries}")).unwrap();
    let args = |max: &'static str| vec!["--labels", s(&labels), "--assignments", s(&assign), "--max-lexicon-entries", max];
    assert!(f.cmd("d0", "did", &args("0")).status.success());
    assert!(f.cmd("d99", "did", &args("99")).status.success());
    let included = |dir: &str| -> Vec<String> {
        let r: serde_json::Value = serde_json::from_str(&read(f.path(dir).join("did.json"))).unwrap();
        r["units"]
            .as_array()
            .unwrap()
            .iter()
            .filter(|u| u["included"] == true)
            .map(|u| u["unit"].as_str().unwrap().to_string())
            .collect()
    };
    let strict = included("d0");
    assert!(!strict.iter().any(|u| u.ends_with("#0")));
    assert!(included("d99").len() > strict.len());
}

#[test]
fn binscatter_recovers_planted_elasticity() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    assert!(run(&["--out", s(d), "synth", "--kind", "elasticity"]).status.success());
    let table = d.join("elasticity.csv");
    let out = d.join("b");
    assert!(run(&["--out", s(&out), "validate", "--mode", "binscatter", "--table", s(&table)]).status.success());
    let report: serde_json::Value = serde_json::from_str(&read(out.join("binscatter.json"))).unwrap();
    let slope = report["slope"].as_f64().unwrap();
    assert!((slope - 1.82).abs() < 0.01, "{slope}");
    let bins = read(out.join("binscatter.csv"));
    assert_eq!(bins.lines().count(), 21);
}

#[test]
fn diagnostics_table_has_fixed_columns() {
    let f = Fixture::new(&[]);
    let emb = f.inputs()[3];
    assert!(f.cmd("v", "validate", &["--baseline", emb]).status.success());
    let text = read(f.path("v").join("diagnostics.csv"));
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "embedding,documents,mean_nn_cosine,pc1_variance,rank_overlap_k5,rank_overlap_k10,knn5_accuracy"
    );
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row.len(), 7);
    assert_eq!(row[4], "1");
    let acc: f64 = row[6].parse().unwrap();
    assert!((0.0..=1.0).contains(&acc));
}

#[test]
fn citation_validation_runs_with_citations_column() {
    let f = Fixture::new(&["--citations"]);
    assert!(f.cmd("v", "validate", &["--mode", "citations"]).status.success());
    let r = read(f.path("v").join("results.csv"));
    assert!(r.contains("citations,ln_innovation"));
    assert!(f.cmd("b", "validate", &["--mode", "binscatter"]).status.success());
    assert!(f.path("b").join("binscatter.json").is_file());
}
