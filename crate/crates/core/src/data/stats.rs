use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::example::Example;
use crate::error::{Error, Result};

/// Question words tracked individually, in reporting order.
pub const QUESTION_TYPES: [&str; 7] = ["what", "how", "who", "when", "which", "where", "why"];
pub const OTHER_TYPE: &str = "other";

pub const POSITION_BINS: usize = 10;

/// First token (left to right) that is one of [`QUESTION_TYPES`], else
/// [`OTHER_TYPE`].
pub fn question_type<S: AsRef<str>>(question_tokens: &[S]) -> &'static str {
    question_tokens
        .iter()
        .find_map(|t| {
            let t = t.as_ref().to_lowercase();
            QUESTION_TYPES.iter().find(|&&q| q == t).copied()
        })
        .unwrap_or(OTHER_TYPE)
}

/// Exploratory statistics over a dataset.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub num_examples: usize,
    /// Answer length in tokens → count.
    pub answer_length: BTreeMap<usize, usize>,
    pub question_length: BTreeMap<usize, usize>,
    pub context_length: BTreeMap<usize, usize>,
    /// Bin `b` counts answers with `answer_start / context_len` in `[b/10, (b+1)/10)`.
    pub relative_answer_position: Vec<usize>,
    /// Every type in [`QUESTION_TYPES`] plus `other`, zero counts included.
    pub question_types: BTreeMap<String, usize>,
}

pub fn compute_stats(examples: &[Example]) -> Result<DatasetStats> {
    if examples.is_empty() {
        return Err(Error::Contract("cannot compute statistics of an empty dataset".into()));
    }
    let mut s = DatasetStats {
        num_examples: examples.len(),
        answer_length: BTreeMap::new(),
        question_length: BTreeMap::new(),
        context_length: BTreeMap::new(),
        relative_answer_position: vec![0; POSITION_BINS],
        question_types: QUESTION_TYPES
            .iter()
            .chain(std::iter::once(&OTHER_TYPE))
            .map(|t| (t.to_string(), 0))
            .collect(),
    };
    for ex in examples {
        *s.answer_length.entry(ex.answer_end - ex.answer_start + 1).or_default() += 1;
        *s.question_length.entry(ex.question_tokens.len()).or_default() += 1;
        *s.context_length.entry(ex.context_tokens.len()).or_default() += 1;
        let bin = (POSITION_BINS * ex.answer_start / ex.context_tokens.len()).min(POSITION_BINS - 1);
        s.relative_answer_position[bin] += 1;
        *s.question_types.entry(question_type(&ex.question_tokens).to_string()).or_default() += 1;
    }
    Ok(s)
}

fn median(hist: &BTreeMap<usize, usize>) -> f64 {
    let n: usize = hist.values().sum();
    let value_at = |rank: usize| {
        let mut seen = 0;
        for (&v, &c) in hist {
            seen += c;
            if seen > rank {
                return v as f64;
            }
        }
        0.0
    };
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        value_at(n / 2)
    } else {
        (value_at(n / 2 - 1) + value_at(n / 2)) / 2.0
    }
}

fn mean(hist: &BTreeMap<usize, usize>) -> f64 {
    let n: usize = hist.values().sum();
    let total: usize = hist.iter().map(|(v, c)| v * c).sum();
    if n == 0 {
        0.0
    } else {
        total as f64 / n as f64
    }
}

impl DatasetStats {
    pub fn median_answer_length(&self) -> f64 {
        median(&self.answer_length)
    }

    pub fn mean_context_length(&self) -> f64 {
        mean(&self.context_length)
    }

    /// Plain-text histograms, one section per statistic.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "examples: {}", self.num_examples);
        let _ = writeln!(
            out,
            "median answer length: {} (below 5: {})",
            self.median_answer_length(),
            self.median_answer_length() < 5.0
        );
        let _ = writeln!(out, "mean context length: {:.2}", self.mean_context_length());
        for (title, hist) in [
            ("answer length", &self.answer_length),
            ("question length", &self.question_length),
            ("context length", &self.context_length),
        ] {
            let rows: Vec<(String, usize)> = hist.iter().map(|(k, v)| (k.to_string(), *v)).collect();
            render_hist(&mut out, title, &rows);
        }
        let rows: Vec<(String, usize)> = self
            .relative_answer_position
            .iter()
            .enumerate()
            .map(|(b, c)| (format!("{:.1}-{:.1}", b as f64 / 10.0, (b + 1) as f64 / 10.0), *c))
            .collect();
        render_hist(&mut out, "relative answer position", &rows);
        let rows: Vec<(String, usize)> = QUESTION_TYPES
            .iter()
            .chain(std::iter::once(&OTHER_TYPE))
            .map(|t| (t.to_string(), self.question_types.get(*t).copied().unwrap_or(0)))
            .collect();
        render_hist(&mut out, "question type", &rows);
        out
    }
}

fn render_hist(out: &mut String, title: &str, rows: &[(String, usize)]) {
    const WIDTH: usize = 50;
    let max = rows.iter().map(|r| r.1).max().unwrap_or(0).max(1);
    let label = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
    let _ = writeln!(out, "\n== {title} ==");
    for (k, c) in rows {
        let bar = "#".repeat((c * WIDTH).div_ceil(max).min(WIDTH));
        let _ = writeln!(out, "{k:>label$} | {c:>6} {bar}");
    }
}
