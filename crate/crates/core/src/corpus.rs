//! Corpus records, metadata IO, field sets and filtered views.
//!
//! Metadata is stored as JSON-lines, one document per line. Loading
//! validates uniqueness of ids and collects year-range warnings instead of
//! failing on them: out-of-range records are retained but flagged, and
//! views exclude flagged records unless asked otherwise.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocKind {
    Title,
    Patent,
    LexiconEntry,
}

impl DocKind {
    pub const ALL: [DocKind; 3] = [DocKind::Title, DocKind::Patent, DocKind::LexiconEntry];

    pub fn as_str(&self) -> &'static str {
        match self {
            DocKind::Title => "title",
            DocKind::Patent => "patent",
            DocKind::LexiconEntry => "lexicon_entry",
        }
    }
}

impl fmt::Display for DocKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DocKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "title" => Ok(DocKind::Title),
            "patent" => Ok(DocKind::Patent),
            "lexicon_entry" => Ok(DocKind::LexiconEntry),
            other => Err(Error::Config(format!("unknown document kind `{other}`"))),
        }
    }
}

/// Author affiliation, occupation and education indicators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuthorFlag {
    RoyalSociety,
    EnlightenmentSociety,
    Engineer,
    UniversityEnrolled,
    Academic,
    Medical,
}

impl AuthorFlag {
    pub const ALL: [AuthorFlag; 6] = [
        AuthorFlag::RoyalSociety,
        AuthorFlag::EnlightenmentSociety,
        AuthorFlag::Engineer,
        AuthorFlag::UniversityEnrolled,
        AuthorFlag::Academic,
        AuthorFlag::Medical,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            AuthorFlag::RoyalSociety => "royal_society",
            AuthorFlag::EnlightenmentSociety => "enlightenment_society",
            AuthorFlag::Engineer => "engineer",
            AuthorFlag::UniversityEnrolled => "university_enrolled",
            AuthorFlag::Academic => "academic",
            AuthorFlag::Medical => "medical",
        }
    }
}

/// One corpus record.
///
/// `flags` keeps the explicit booleans from the source file so that writing
/// the corpus back reproduces the input. The optional trailing keys are
/// omitted from output when absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub year: i32,
    pub field: String,
    pub subfield: Option<String>,
    pub kind: DocKind,
    pub word_count: u32,
    #[serde(default)]
    pub flags: BTreeMap<AuthorFlag, bool>,
    pub language: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub citations: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certainty: Option<f64>,
}

impl Document {
    pub fn has_flag(&self, flag: AuthorFlag) -> bool {
        self.flags.get(&flag).copied().unwrap_or(false)
    }
}

/// Same shape as [`Document`] but with every required key optional, so that
/// missing keys produce messages naming the key.
#[derive(Deserialize)]
struct RawRecord {
    id: Option<String>,
    year: Option<i64>,
    field: Option<String>,
    #[serde(default)]
    subfield: Option<String>,
    kind: Option<DocKind>,
    word_count: Option<i64>,
    #[serde(default)]
    flags: BTreeMap<AuthorFlag, bool>,
    #[serde(default)]
    language: Option<String>,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    citations: Option<f64>,
    #[serde(default)]
    certainty: Option<f64>,
}

impl RawRecord {
    fn into_document(self, line: usize) -> Result<Document> {
        let missing = |key: &str| Error::Parse {
            line,
            message: format!("missing required key `{key}`"),
        };
        let id = self.id.ok_or_else(|| missing("id"))?.trim().to_string();
        if id.is_empty() {
            return Err(Error::Parse {
                line,
                message: "empty id".into(),
            });
        }
        let year = self.year.ok_or_else(|| missing("year"))?;
        let year = i32::try_from(year).map_err(|_| Error::Parse {
            line,
            message: format!("year {year} out of range"),
        })?;
        let field = self.field.ok_or_else(|| missing("field"))?.trim().to_string();
        let kind = self.kind.ok_or_else(|| missing("kind"))?;
        let word_count = self.word_count.ok_or_else(|| missing("word_count"))?;
        let word_count = u32::try_from(word_count).map_err(|_| Error::Parse {
            line,
            message: format!("word_count {word_count} must be a nonnegative integer"),
        })?;
        if self.text.as_deref().is_some_and(|t| !t.trim().is_empty()) && word_count == 0 {
            return Err(Error::Parse {
                line,
                message: "word_count must be at least 1 when text is present".into(),
            });
        }
        Ok(Document {
            id,
            year,
            field,
            subfield: self.subfield.map(|s| s.trim().to_string()),
            kind,
            word_count,
            flags: self.flags,
            language: self.language,
            text: self.text,
            citations: self.citations,
            certainty: self.certainty,
        })
    }
}

/// Inclusive year bounds per document kind. `None` means unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YearBounds {
    pub lo: Option<i32>,
    pub hi: Option<i32>,
}

impl YearBounds {
    pub fn contains(&self, year: i32) -> bool {
        self.lo.is_none_or(|lo| year >= lo) && self.hi.is_none_or(|hi| year <= hi)
    }
}

/// Year-range policy applied at load time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangePolicy {
    pub title: YearBounds,
    pub patent: YearBounds,
    pub lexicon_entry: YearBounds,
}

impl Default for RangePolicy {
    fn default() -> Self {
        RangePolicy {
            title: YearBounds {
                lo: Some(1600),
                hi: Some(1800),
            },
            patent: YearBounds {
                lo: Some(1700),
                hi: None,
            },
            lexicon_entry: YearBounds { lo: None, hi: None },
        }
    }
}

impl RangePolicy {
    /// Accepts every year, for synthetic corpora and tests.
    pub fn unbounded() -> Self {
        let any = YearBounds { lo: None, hi: None };
        RangePolicy {
            title: any,
            patent: any,
            lexicon_entry: any,
        }
    }

    pub fn bounds(&self, kind: DocKind) -> YearBounds {
        match kind {
            DocKind::Title => self.title,
            DocKind::Patent => self.patent,
            DocKind::LexiconEntry => self.lexicon_entry,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationWarning {
    pub line: usize,
    pub id: String,
    pub message: String,
}

/// Immutable, indexed document collection.
#[derive(Debug, Clone)]
pub struct Corpus {
    docs: Vec<Document>,
    flagged: Vec<bool>,
    index: HashMap<String, usize>,
    warnings: Vec<ValidationWarning>,
}

impl Corpus {
    /// Build a corpus from in-memory documents under `policy`.
    pub fn from_documents(docs: Vec<Document>, policy: &RangePolicy) -> Result<Corpus> {
        let mut corpus = Corpus {
            docs: Vec::with_capacity(docs.len()),
            flagged: Vec::with_capacity(docs.len()),
            index: HashMap::with_capacity(docs.len()),
            warnings: Vec::new(),
        };
        for (i, doc) in docs.into_iter().enumerate() {
            corpus.push(doc, i + 1, policy)?;
        }
        Ok(corpus)
    }

    fn push(&mut self, mut doc: Document, line: usize, policy: &RangePolicy) -> Result<()> {
        doc.field = doc.field.trim().to_string();
        if self.index.contains_key(&doc.id) {
            return Err(Error::Integrity(format!(
                "duplicate document id `{}` at line {line}",
                doc.id
            )));
        }
        let bounds = policy.bounds(doc.kind);
        let flagged = !bounds.contains(doc.year);
        if flagged {
            self.warnings.push(ValidationWarning {
                line,
                id: doc.id.clone(),
                message: format!(
                    "{} year {} outside configured range {:?}..{:?}",
                    doc.kind, doc.year, bounds.lo, bounds.hi
                ),
            });
        }
        self.index.insert(doc.id.clone(), self.docs.len());
        self.docs.push(doc);
        self.flagged.push(flagged);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn documents(&self) -> &[Document] {
        &self.docs
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.index.get(id).map(|&i| &self.docs[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn doc(&self, pos: usize) -> &Document {
        &self.docs[pos]
    }

    pub fn is_flagged(&self, pos: usize) -> bool {
        self.flagged[pos]
    }

    pub fn warnings(&self) -> &[ValidationWarning] {
        &self.warnings
    }

    /// Every field label present in the corpus.
    pub fn known_fields(&self) -> BTreeSet<String> {
        self.docs.iter().map(|d| d.field.clone()).collect()
    }

    pub fn view(&self, spec: &ViewSpec) -> Result<CorpusView<'_>> {
        spec.validate()?;
        let known = self.known_fields();
        if let Some(unknown) = spec.fields.iter().find(|f| !known.contains(f.trim())) {
            return Err(Error::Config(format!("unknown field label `{unknown}`")));
        }
        let fields: BTreeSet<&str> = spec.fields.iter().map(|f| f.trim()).collect();
        let mut members: Vec<usize> = (0..self.docs.len())
            .filter(|&i| {
                let d = &self.docs[i];
                (spec.include_flagged || !self.flagged[i])
                    && fields.contains(d.field.as_str())
                    && spec.years.0 <= d.year
                    && d.year <= spec.years.1
                    && spec.kinds.contains(&d.kind)
            })
            .collect();
        members.sort_by(|&a, &b| {
            let (da, db) = (&self.docs[a], &self.docs[b]);
            da.year.cmp(&db.year).then_with(|| da.id.cmp(&db.id))
        });
        Ok(CorpusView {
            corpus: self,
            members,
        })
    }
}

/// Load a JSON-lines metadata file.
pub fn load_metadata(path: &Path, policy: &RangePolicy) -> Result<Corpus> {
    let file = std::fs::File::open(path)?;
    read_metadata(file, policy)
}

pub fn read_metadata<R: Read>(reader: R, policy: &RangePolicy) -> Result<Corpus> {
    let mut corpus = Corpus {
        docs: Vec::new(),
        flagged: Vec::new(),
        index: HashMap::new(),
        warnings: Vec::new(),
    };
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let doc = raw.into_document(line_no)?;
        corpus.push(doc, line_no, policy)?;
    }
    Ok(corpus)
}

pub fn write_metadata<W: Write>(mut writer: W, docs: &[Document]) -> Result<()> {
    for doc in docs {
        serde_json::to_writer(&mut writer, doc)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Propositional (Ω) and prescriptive (λ) field sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSetConfig {
    pub omega: BTreeSet<String>,
    pub lambda: BTreeSet<String>,
    pub spillover_source_excludes_patents: bool,
}

impl Default for FieldSetConfig {
    fn default() -> Self {
        let set = |labels: &[&str]| labels.iter().map(|s| s.to_string()).collect();
        FieldSetConfig {
            omega: set(&[
                "applied physics",
                "astronomy",
                "mathematics",
                "chemistry",
                "encyclopedias",
            ]),
            lambda: set(&[
                "technical instructions trades",
                "technical instructions agriculture",
                "navigation",
                "scientific instruments",
                "patents",
            ]),
            spillover_source_excludes_patents: true,
        }
    }
}

impl FieldSetConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(both) = self.omega.intersection(&self.lambda).next() {
            return Err(Error::Config(format!(
                "field `{both}` appears in both omega and lambda"
            )));
        }
        Ok(())
    }

    /// Fields belonging to neither set.
    pub fn placebo_fields(&self, known: &BTreeSet<String>) -> Vec<String> {
        known
            .iter()
            .filter(|f| !self.omega.contains(*f) && !self.lambda.contains(*f))
            .cloned()
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewSpec {
    pub fields: BTreeSet<String>,
    /// Inclusive `(lo, hi)`.
    pub years: (i32, i32),
    pub kinds: BTreeSet<DocKind>,
    pub include_flagged: bool,
}

impl ViewSpec {
    pub fn new<I, S>(fields: I, years: (i32, i32), kinds: &[DocKind]) -> ViewSpec
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ViewSpec {
            fields: fields.into_iter().map(Into::into).collect(),
            years,
            kinds: kinds.iter().copied().collect(),
            include_flagged: false,
        }
    }

    pub fn including_flagged(mut self) -> Self {
        self.include_flagged = true;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.years.0 > self.years.1 {
            return Err(Error::Config(format!(
                "inverted year range [{}, {}]",
                self.years.0, self.years.1
            )));
        }
        Ok(())
    }
}

/// Filter `corpus` to the given fields, inclusive year range and kinds.
pub fn make_view<'a>(
    corpus: &'a Corpus,
    fields: &BTreeSet<String>,
    years: (i32, i32),
    kinds: &BTreeSet<DocKind>,
) -> Result<CorpusView<'a>> {
    corpus.view(&ViewSpec {
        fields: fields.clone(),
        years,
        kinds: kinds.clone(),
        include_flagged: false,
    })
}

/// Documents of a corpus satisfying a [`ViewSpec`], ordered by (year, id).
#[derive(Debug, Clone)]
pub struct CorpusView<'a> {
    corpus: &'a Corpus,
    members: Vec<usize>,
}

impl<'a> CorpusView<'a> {
    pub fn corpus(&self) -> &'a Corpus {
        self.corpus
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Corpus positions of the members in view order.
    pub fn positions(&self) -> &[usize] {
        &self.members
    }

    pub fn iter(&self) -> impl Iterator<Item = &'a Document> + '_ {
        self.members.iter().map(|&i| self.corpus.doc(i))
    }
}
