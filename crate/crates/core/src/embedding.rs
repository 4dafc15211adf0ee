//! Embedding tables and their on-disk formats.
//!
//! Two formats are supported:
//!
//! * word2vec binary: an ASCII header `"<n_words> <dim>\n"` followed by
//!   `n_words` records of `token 0x20 <dim little-endian f32>`, optionally
//!   terminated by `'\n'`;
//! * GloVe text: one `"<token> <v1> ... <vdim>"` line per word.
//!
//! Vectors are kept at file precision (`f32`). Lookups are exact and
//! case-sensitive.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("malformed header at byte {offset}: {reason}")]
    Header { offset: usize, reason: String },
    #[error("duplicate token {token:?} at byte {offset}")]
    DuplicateToken { token: String, offset: usize },
    #[error("truncated payload at byte {offset}: {reason}")]
    Truncated { offset: usize, reason: String },
    #[error("non-finite value in vector for {token:?} at byte {offset}")]
    NonFinite { token: String, offset: usize },
    #[error("token at byte {offset} is not valid UTF-8")]
    InvalidToken { offset: usize },
    #[error("unexpected trailing data at byte {offset}")]
    TrailingData { offset: usize },
    #[error("line {line}: expected {expected} values, found {found}")]
    Dimension { line: usize, expected: usize, found: usize },
    #[error("line {line}: cannot parse {value:?} as a number")]
    ParseFloat { line: usize, value: String },
    #[error("line {line}: duplicate token {token:?}")]
    DuplicateLine { token: String, line: usize },
    #[error("line {line}: non-finite value for {token:?}")]
    NonFiniteLine { token: String, line: usize },
    #[error("embedding has no rows")]
    Empty,
    #[error("embedding dimension must be at least 1")]
    ZeroDim,
    #[error("matrix has {values} values, expected {words} x {dim}")]
    Shape { words: usize, dim: usize, values: usize },
    #[error("unknown embedding format {0:?} (expected word2vec-bin or glove-txt)")]
    UnknownFormat(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbeddingFormat {
    #[serde(rename = "word2vec-bin")]
    Word2VecBin,
    GloveTxt,
}

impl FromStr for EmbeddingFormat {
    type Err = EmbeddingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "word2vec-bin" => Ok(Self::Word2VecBin),
            "glove-txt" => Ok(Self::GloveTxt),
            other => Err(EmbeddingError::UnknownFormat(other.to_string())),
        }
    }
}

impl fmt::Display for EmbeddingFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Word2VecBin => "word2vec-bin",
            Self::GloveTxt => "glove-txt",
        })
    }
}

/// Result of a vocabulary lookup. A miss is a value, not an error.
#[derive(Debug, Clone, PartialEq)]
pub enum Lookup<'a> {
    Found(&'a [f32]),
    Missing(String),
}

impl<'a> Lookup<'a> {
    pub fn vector(&self) -> Option<&'a [f32]> {
        match self {
            Lookup::Found(v) => Some(v),
            Lookup::Missing(_) => None,
        }
    }
}

/// What to do with list tokens that are not in the vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingPolicy {
    /// Any missing token is an error.
    #[default]
    Error,
    /// Missing tokens are dropped and recorded; a list that ends up empty is
    /// still an error.
    Skip,
}

#[derive(Debug, Error, PartialEq)]
pub enum ResolveError {
    #[error("token {token:?} from {list} is not in the embedding vocabulary")]
    Missing { token: String, list: String },
    #[error("every token of {list} is missing from the embedding")]
    EmptyAfterSkip { list: String },
}

/// Immutable vocabulary → vector table.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    words: Vec<String>,
    index: HashMap<String, usize>,
    matrix: Vec<f32>,
    dim: usize,
}

impl Embedding {
    /// Builds an embedding from tokens and a row-major matrix.
    pub fn from_rows(words: Vec<String>, matrix: Vec<f32>, dim: usize) -> Result<Self, EmbeddingError> {
        if dim == 0 {
            return Err(EmbeddingError::ZeroDim);
        }
        if words.is_empty() {
            return Err(EmbeddingError::Empty);
        }
        if matrix.len() != words.len() * dim {
            return Err(EmbeddingError::Shape {
                words: words.len(),
                dim,
                values: matrix.len(),
            });
        }
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            let row = &matrix[i * dim..(i + 1) * dim];
            if row.iter().any(|v| !v.is_finite()) {
                return Err(EmbeddingError::NonFinite {
                    token: w.clone(),
                    offset: i * dim * 4,
                });
            }
            if index.insert(w.clone(), i).is_some() {
                return Err(EmbeddingError::DuplicateToken {
                    token: w.clone(),
                    offset: i,
                });
            }
        }
        Ok(Self {
            words,
            index,
            matrix,
            dim,
        })
    }

    pub fn load(path: impl AsRef<Path>, format: EmbeddingFormat) -> Result<Self, EmbeddingError> {
        match format {
            EmbeddingFormat::Word2VecBin => Self::load_word2vec_binary(path),
            EmbeddingFormat::GloveTxt => Self::load_glove_text(path),
        }
    }

    pub fn load_word2vec_binary(path: impl AsRef<Path>) -> Result<Self, EmbeddingError> {
        let bytes = fs::read(path)?;
        Self::parse_word2vec_binary(&bytes)
    }

    pub fn parse_word2vec_binary(bytes: &[u8]) -> Result<Self, EmbeddingError> {
        let header_end = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| EmbeddingError::Header {
                offset: 0,
                reason: "missing newline after header".into(),
            })?;
        let header = std::str::from_utf8(&bytes[..header_end]).map_err(|_| EmbeddingError::Header {
            offset: 0,
            reason: "header is not ASCII".into(),
        })?;
        let mut fields = header.split(' ');
        let (n_words, dim) = match (fields.next(), fields.next(), fields.next()) {
            (Some(n), Some(d), None) => {
                let parse = |s: &str, what: &str| {
                    s.trim_end_matches('\r')
                        .parse::<usize>()
                        .map_err(|_| EmbeddingError::Header {
                            offset: 0,
                            reason: format!("cannot parse {what} from {s:?}"),
                        })
                };
                (parse(n, "word count")?, parse(d, "dimension")?)
            }
            _ => {
                return Err(EmbeddingError::Header {
                    offset: 0,
                    reason: format!("expected \"<n_words> <dim>\", found {header:?}"),
                })
            }
        };
        if n_words == 0 {
            return Err(EmbeddingError::Empty);
        }
        if dim == 0 {
            return Err(EmbeddingError::ZeroDim);
        }

        let mut pos = header_end + 1;
        let mut words = Vec::with_capacity(n_words);
        let mut index = HashMap::with_capacity(n_words);
        let mut matrix = Vec::with_capacity(n_words * dim);
        for record in 0..n_words {
            // optional '\n' left over from the previous record
            while pos < bytes.len() && bytes[pos] == b'\n' {
                pos += 1;
            }
            let start = pos;
            let space = bytes[start..]
                .iter()
                .position(|&b| b == b' ')
                .ok_or_else(|| EmbeddingError::Truncated {
                    offset: start,
                    reason: format!("record {} of {n_words} missing", record + 1),
                })?;
            let token_bytes = &bytes[start..start + space];
            if token_bytes.is_empty() {
                return Err(EmbeddingError::InvalidToken { offset: start });
            }
            let token = std::str::from_utf8(token_bytes)
                .map_err(|_| EmbeddingError::InvalidToken { offset: start })?
                .to_string();
            pos = start + space + 1;
            let need = dim * 4;
            if bytes.len() < pos + need {
                return Err(EmbeddingError::Truncated {
                    offset: pos,
                    reason: format!("vector for {token:?} needs {need} bytes, {} left", bytes.len() - pos),
                });
            }
            for chunk in bytes[pos..pos + need].chunks_exact(4) {
                let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
                if !v.is_finite() {
                    return Err(EmbeddingError::NonFinite { token, offset: pos });
                }
                matrix.push(v);
            }
            if index.insert(token.clone(), record).is_some() {
                return Err(EmbeddingError::DuplicateToken { token, offset: start });
            }
            words.push(token);
            pos += need;
        }
        if bytes[pos..].iter().any(|&b| !b.is_ascii_whitespace()) {
            return Err(EmbeddingError::TrailingData { offset: pos });
        }
        Ok(Self {
            words,
            index,
            matrix,
            dim,
        })
    }

    pub fn load_glove_text(path: impl AsRef<Path>) -> Result<Self, EmbeddingError> {
        let text = fs::read_to_string(path)?;
        Self::parse_glove_text(&text)
    }

    pub fn parse_glove_text(text: &str) -> Result<Self, EmbeddingError> {
        let mut dim = 0;
        let mut words = Vec::new();
        let mut index = HashMap::new();
        let mut matrix = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let mut fields = line.split_ascii_whitespace();
            let Some(token) = fields.next() else {
                continue;
            };
            let values = fields
                .map(|f| {
                    f.parse::<f32>().map_err(|_| EmbeddingError::ParseFloat {
                        line: line_no,
                        value: f.to_string(),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            if words.is_empty() {
                if values.is_empty() {
                    return Err(EmbeddingError::Dimension {
                        line: line_no,
                        expected: 1,
                        found: 0,
                    });
                }
                dim = values.len();
            } else if values.len() != dim {
                return Err(EmbeddingError::Dimension {
                    line: line_no,
                    expected: dim,
                    found: values.len(),
                });
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(EmbeddingError::NonFiniteLine {
                    token: token.to_string(),
                    line: line_no,
                });
            }
            if index.insert(token.to_string(), words.len()).is_some() {
                return Err(EmbeddingError::DuplicateLine {
                    token: token.to_string(),
                    line: line_no,
                });
            }
            words.push(token.to_string());
            matrix.extend(values);
        }
        if words.is_empty() {
            return Err(EmbeddingError::Empty);
        }
        Ok(Self {
            words,
            index,
            matrix,
            dim,
        })
    }

    /// Writes the table in word2vec binary form (`token`, space, floats, `'\n'`).
    pub fn write_word2vec_binary<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{} {}", self.words.len(), self.dim)?;
        for (i, w) in self.words.iter().enumerate() {
            out.write_all(w.as_bytes())?;
            out.write_all(b" ")?;
            for v in self.row(i) {
                out.write_all(&v.to_le_bytes())?;
            }
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn write_glove_text<W: Write>(&self, mut out: W) -> io::Result<()> {
        for (i, w) in self.words.iter().enumerate() {
            write!(out, "{w}")?;
            for v in self.row(i) {
                write!(out, " {v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn lookup(&self, token: &str) -> Lookup<'_> {
        match self.index.get(token) {
            Some(&i) => Lookup::Found(self.row(i)),
            None => Lookup::Missing(token.to_string()),
        }
    }

    pub fn vector(&self, token: &str) -> Option<&[f32]> {
        self.index.get(token).map(|&i| self.row(i))
    }

    /// Resolves every token of a named list under `policy`. Skipped tokens
    /// are appended to `skipped` (once each).
    pub fn resolve<'a, S: AsRef<str>>(
        &'a self,
        list: &str,
        tokens: &'a [S],
        policy: MissingPolicy,
        skipped: &mut Vec<String>,
    ) -> Result<Vec<(&'a str, &'a [f32])>, ResolveError> {
        let mut out = Vec::with_capacity(tokens.len());
        for t in tokens {
            let t = t.as_ref();
            match self.vector(t) {
                Some(v) => out.push((t, v)),
                None if policy == MissingPolicy::Skip => {
                    if !skipped.iter().any(|s| s == t) {
                        skipped.push(t.to_string());
                    }
                }
                None => {
                    return Err(ResolveError::Missing {
                        token: t.to_string(),
                        list: list.to_string(),
                    })
                }
            }
        }
        if out.is_empty() && !tokens.is_empty() {
            return Err(ResolveError::EmptyAfterSkip { list: list.to_string() });
        }
        Ok(out)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.matrix[i * self.dim..(i + 1) * self.dim]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}
