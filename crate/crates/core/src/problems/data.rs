//! In-memory sparse datasets and the libsvm text format.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vector::SparseVector;

/// Whether feature indices in a libsvm file start at 0 or 1.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum IndexBase {
    #[default]
    Zero,
    One,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Example {
    /// Label normalized to `{0, 1}`.
    pub label: f64,
    pub features: SparseVector,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub examples: Vec<Example>,
    /// Number of feature columns (max index + 1).
    pub dim: usize,
}

impl Dataset {
    pub fn new(examples: Vec<Example>, dim: usize) -> Result<Self> {
        for e in &examples {
            if let Some(max) = e.features.max_index() {
                if max as usize >= dim {
                    return Err(Error::IndexOutOfRange {
                        index: max,
                        len: dim,
                    });
                }
            }
        }
        Ok(Self { examples, dim })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Mean squared row norm; bounds the top eigenvalue of the empirical
    /// second-moment matrix.
    pub fn mean_sq_row_norm(&self) -> f64 {
        if self.examples.is_empty() {
            return 0.0;
        }
        self.examples
            .iter()
            .map(|e| e.features.values().iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            / self.examples.len() as f64
    }

    pub fn max_row_norm(&self) -> f64 {
        self.examples
            .iter()
            .map(|e| e.features.values().iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    pub fn write_libsvm(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        for e in &self.examples {
            let mut line = format!("{}", e.label);
            for (i, v) in e.features.iter() {
                line.push_str(&format!(" {i}:{v}"));
            }
            writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }
}

/// A validated libsvm file. Row count and max index come from a single pass;
/// rows can be streamed again with [`DatasetHandle::rows`] or materialized
/// with [`DatasetHandle::load`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHandle {
    pub path: PathBuf,
    pub base: IndexBase,
    pub rows: usize,
    pub max_index: Option<u64>,
}

impl DatasetHandle {
    pub fn dim(&self) -> usize {
        self.max_index.map_or(0, |m| m as usize + 1)
    }

    pub fn rows(&self) -> Result<impl Iterator<Item = Result<Example>> + '_> {
        let file = File::open(&self.path).map_err(|e| Error::io(&self.path, e))?;
        let reader = BufReader::new(file);
        Ok(reader
            .lines()
            .enumerate()
            .filter_map(move |(i, line)| match line {
                Err(e) => Some(Err(Error::io(&self.path, e))),
                Ok(l) => parse_line(&l, self.base)
                    .map_err(|reason| Error::Parse {
                        path: self.path.clone(),
                        line: i + 1,
                        reason,
                    })
                    .transpose(),
            }))
    }

    pub fn load(&self) -> Result<Dataset> {
        let examples = self.rows()?.collect::<Result<Vec<_>>>()?;
        Dataset::new(examples, self.dim())
    }
}

/// Validate a libsvm file in one pass.
pub fn read_libsvm(path: impl AsRef<Path>, base: IndexBase) -> Result<DatasetHandle> {
    let path = path.as_ref().to_path_buf();
    let mut handle = DatasetHandle {
        path,
        base,
        rows: 0,
        max_index: None,
    };
    let mut rows = 0;
    let mut max_index: Option<u64> = None;
    for row in handle.rows()? {
        let row = row?;
        rows += 1;
        if let Some(m) = row.features.max_index() {
            max_index = Some(max_index.map_or(m, |cur| cur.max(m)));
        }
    }
    handle.rows = rows;
    handle.max_index = max_index;
    Ok(handle)
}

/// Parse one line. Blank lines and `#` comments yield `None`.
fn parse_line(line: &str, base: IndexBase) -> std::result::Result<Option<Example>, String> {
    let content = line.split('#').next().unwrap_or("").trim();
    if content.is_empty() {
        return Ok(None);
    }
    let mut tokens = content.split_whitespace();
    let label_tok = tokens.next().ok_or("missing label")?;
    let raw: f64 = label_tok
        .parse()
        .map_err(|_| format!("non-numeric label `{label_tok}`"))?;
    let label = match raw {
        x if x == 1.0 => 1.0,
        x if x == 0.0 || x == -1.0 => 0.0,
        _ => return Err(format!("label {raw} is not in {{0,1}} or {{-1,+1}}")),
    };
    let mut indices = Vec::new();
    let mut values = Vec::new();
    for tok in tokens {
        let (i, v) = tok
            .split_once(':')
            .ok_or_else(|| format!("malformed feature `{tok}`"))?;
        let mut index: u64 = i
            .parse()
            .map_err(|_| format!("malformed feature index `{i}`"))?;
        if base == IndexBase::One {
            index = index
                .checked_sub(1)
                .ok_or("index 0 in a one-based file")?;
        }
        let value: f64 = v
            .parse()
            .map_err(|_| format!("malformed feature value `{v}`"))?;
        if !value.is_finite() {
            return Err(format!("non-finite value for feature {i}"));
        }
        if let Some(&prev) = indices.last() {
            if index <= prev {
                return Err(format!("feature indices must increase ({prev} then {index})"));
            }
        }
        indices.push(index);
        values.push(value);
    }
    let features = SparseVector::new(indices, values).map_err(|e| e.to_string())?;
    Ok(Some(Example { label, features }))
}
