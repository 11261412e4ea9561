//! Loading the positive-reframing corpus from delimiter-separated files.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{ReframeInstance, StrategySet, Vocab};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Csv,
    Tsv,
}

impl CorpusFormat {
    fn delimiter(self) -> u8 {
        match self {
            CorpusFormat::Csv => b',',
            CorpusFormat::Tsv => b'\t',
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            CorpusFormat::Csv => "csv",
            CorpusFormat::Tsv => "tsv",
        }
    }
}

/// Header names of the three columns the loader reads.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnMap {
    pub source: String,
    pub reference: String,
    pub strategy: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            source: "original_text".into(),
            reference: "reframed_text".into(),
            strategy: "strategy".into(),
        }
    }
}

/// A validated but not yet tokenized row.
#[derive(Debug, Clone, PartialEq)]
pub struct RawInstance {
    pub source: String,
    pub reference: String,
    pub strategies: StrategySet,
    pub line: u64,
}

impl RawInstance {
    pub fn tokenize(&self, vocab: &Vocab) -> Result<ReframeInstance> {
        ReframeInstance::new(&self.source, &self.reference, self.strategies, vocab)
    }
}

/// Reads one split. Rows with missing text or unknown strategy labels are
/// rejected with their line number.
pub fn load_corpus(
    path: &Path,
    format: CorpusFormat,
    columns: &ColumnMap,
) -> Result<Vec<RawInstance>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(format.delimiter())
        .has_headers(true)
        .from_reader(std::io::BufReader::new(file));
    let row_err = |line: u64, message: String| Error::Row {
        path: path.to_path_buf(),
        line,
        message,
    };
    let headers = reader.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::EmptyCorpus);
    }
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| row_err(1, format!("missing column {name:?}")))
    };
    let (si, ri, ti) = (
        col(&columns.source)?,
        col(&columns.reference)?,
        col(&columns.strategy)?,
    );
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize, what: &str| -> Result<String> {
            match record.get(i).map(str::trim) {
                Some(s) if !s.is_empty() => Ok(s.to_string()),
                _ => Err(row_err(line, format!("empty {what}"))),
            }
        };
        let source = field(si, &columns.source)?;
        let reference = field(ri, &columns.reference)?;
        let strategies = StrategySet::parse(&field(ti, &columns.strategy)?)
            .map_err(|e| row_err(line, e.to_string()))?;
        out.push(RawInstance {
            source,
            reference,
            strategies,
            line,
        });
    }
    if out.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(out)
}

/// Train, dev and test splits tokenized with a vocabulary built on train.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub train: Vec<ReframeInstance>,
    pub dev: Vec<ReframeInstance>,
    pub test: Vec<ReframeInstance>,
    pub vocab: Vocab,
    pub provenance: PathBuf,
}

impl Corpus {
    /// Loads `train`, `dev` and `test` files with the format's extension from `dir`.
    /// A missing dev or test file yields an empty split.
    pub fn load(
        dir: &Path,
        format: CorpusFormat,
        columns: &ColumnMap,
        min_count: usize,
    ) -> Result<Self> {
        let split = |name: &str, required: bool| -> Result<Vec<RawInstance>> {
            let path = dir.join(format!("{name}.{}", format.extension()));
            if !required && !path.exists() {
                return Ok(Vec::new());
            }
            load_corpus(&path, format, columns)
        };
        let (train, dev, test) = (
            split("train", true)?,
            split("dev", false)?,
            split("test", false)?,
        );
        let mut seen = HashSet::new();
        for (name, rows) in [("train", &train), ("dev", &dev), ("test", &test)] {
            let mut local = HashSet::new();
            for r in rows.iter() {
                let key = (r.source.as_str(), r.reference.as_str());
                if local.insert(key) && !seen.insert(key) {
                    return Err(Error::Row {
                        path: dir.join(format!("{name}.{}", format.extension())),
                        line: r.line,
                        message: "pair also appears in an earlier split".into(),
                    });
                }
            }
        }
        let texts: Vec<&str> = train
            .iter()
            .flat_map(|r| [r.source.as_str(), r.reference.as_str()])
            .collect();
        let vocab = Vocab::build(&texts, min_count)?;
        let tok = |rows: &[RawInstance]| {
            rows.iter()
                .map(|r| r.tokenize(&vocab))
                .collect::<Result<Vec<_>>>()
        };
        Ok(Corpus {
            train: tok(&train)?,
            dev: tok(&dev)?,
            test: tok(&test)?,
            vocab,
            provenance: dir.to_path_buf(),
        })
    }
}
