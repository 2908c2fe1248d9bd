use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::chars::word_char_ids;
use crate::error::{Error, Result};

/// One tokenized (context, question, answer span) triple.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub context_tokens: Vec<String>,
    pub question_tokens: Vec<String>,
    pub context_char_ids: Vec<Vec<usize>>,
    pub question_char_ids: Vec<Vec<usize>>,
    /// Inclusive token indices.
    pub answer_start: usize,
    pub answer_end: usize,
    pub answer_texts: Vec<String>,
}

impl Example {
    /// Builds an example, deriving character ids from the tokens.
    pub fn new(
        id: impl Into<String>,
        context_tokens: Vec<String>,
        question_tokens: Vec<String>,
        answer_start: usize,
        answer_end: usize,
        answer_texts: Vec<String>,
    ) -> Result<Self> {
        let ex = Self {
            id: id.into(),
            context_char_ids: context_tokens.iter().map(|t| word_char_ids(t)).collect(),
            question_char_ids: question_tokens.iter().map(|t| word_char_ids(t)).collect(),
            context_tokens,
            question_tokens,
            answer_start,
            answer_end,
            answer_texts,
        };
        ex.validate()?;
        Ok(ex)
    }

    pub fn validate(&self) -> Result<()> {
        if self.context_tokens.is_empty() || self.question_tokens.is_empty() {
            return Err(Error::Contract(format!("example {} has an empty context or question", self.id)));
        }
        if !(self.answer_start <= self.answer_end && self.answer_end < self.context_tokens.len()) {
            return Err(Error::Contract(format!(
                "example {}: span [{}, {}] invalid for context of {} tokens",
                self.id,
                self.answer_start,
                self.answer_end,
                self.context_tokens.len()
            )));
        }
        if self.context_char_ids.len() != self.context_tokens.len() || self.question_char_ids.len() != self.question_tokens.len() {
            return Err(Error::Contract(format!("example {}: char ids do not align with tokens", self.id)));
        }
        Ok(())
    }

    /// Context tokens `[start..=end]` joined with single spaces.
    pub fn span_text(&self, start: usize, end: usize) -> String {
        self.context_tokens[start..=end].join(" ")
    }

    pub fn answer_span_text(&self) -> String {
        self.span_text(self.answer_start, self.answer_end)
    }
}

/// Writes one JSON object per line.
pub fn write_jsonl(path: &Path, examples: &[Example]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for ex in examples {
        let line = serde_json::to_string(ex).map_err(|e| Error::Parse {
            path: path.into(),
            message: e.to_string(),
        })?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl(path: &Path) -> Result<Vec<Example>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: Example = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.into(),
            message: format!("line {}: {e}", n + 1),
        })?;
        ex.validate().map_err(|e| Error::Parse {
            path: path.into(),
            message: format!("line {}: {e}", n + 1),
        })?;
        out.push(ex);
    }
    Ok(out)
}
