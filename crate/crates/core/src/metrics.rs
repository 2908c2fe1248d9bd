//! SQuAD-style answer normalization, token F1 and exact match, and the
//! per-question-type report.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{is_punctuation, question_type, Example, OTHER_TYPE, QUESTION_TYPES};
use crate::error::{Error, Result};

/// Lowercase, strip punctuation, drop the articles `a`/`an`/`the`, collapse
/// whitespace.
pub fn normalize_answer(text: &str) -> String {
    let lowered = text.to_lowercase();
    let stripped: String = lowered.chars().filter(|&c| !is_punctuation(c)).collect();
    stripped
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn token_f1(prediction: &str, gold: &str) -> f64 {
    let p: Vec<&str> = prediction.split_whitespace().collect();
    let g: Vec<&str> = gold.split_whitespace().collect();
    if p.is_empty() || g.is_empty() {
        return if p.is_empty() && g.is_empty() { 1.0 } else { 0.0 };
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &g {
        *counts.entry(t).or_default() += 1;
    }
    let mut overlap = 0usize;
    for t in &p {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / p.len() as f64;
    let recall = overlap as f64 / g.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// `(F1 in [0, 1], EM in {0, 1})`, each maximised over the gold alternatives.
pub fn f1_em<S: AsRef<str>>(prediction: &str, gold_answers: &[S]) -> Result<(f64, f64)> {
    if gold_answers.is_empty() {
        return Err(Error::Contract("f1_em needs at least one gold answer".into()));
    }
    let pred = normalize_answer(prediction);
    let mut best_f1: f64 = 0.0;
    let mut em: f64 = 0.0;
    for gold in gold_answers {
        let gold = normalize_answer(gold.as_ref());
        if gold == pred {
            em = 1.0;
        }
        best_f1 = best_f1.max(token_f1(&pred, &gold));
    }
    Ok((best_f1, em))
}

/// Percent scores over one group of questions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TypeScore {
    pub f1: f64,
    pub em: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub f1: f64,
    pub em: f64,
    /// Every question type in reporting order plus `other`.
    pub per_type: BTreeMap<String, TypeScore>,
    pub num_evaluated: usize,
    /// Examples with no prediction; scored 0.
    pub missing: usize,
}

/// Scores `predictions` (example id → answer text) against `examples`.
pub fn evaluate(predictions: &HashMap<String, String>, examples: &[Example]) -> Result<EvalReport> {
    let mut sums: BTreeMap<String, (f64, f64, usize)> = QUESTION_TYPES
        .iter()
        .chain(std::iter::once(&OTHER_TYPE))
        .map(|t| (t.to_string(), (0.0, 0.0, 0)))
        .collect();
    let (mut f1_total, mut em_total, mut missing) = (0.0, 0.0, 0);
    for ex in examples {
        let (f1, em) = match predictions.get(&ex.id) {
            Some(p) => f1_em(p, &ex.answer_texts)?,
            None => {
                missing += 1;
                (0.0, 0.0)
            }
        };
        f1_total += f1;
        em_total += em;
        let slot = sums.entry(question_type(&ex.question_tokens).to_string()).or_default();
        slot.0 += f1;
        slot.1 += em;
        slot.2 += 1;
    }
    let n = examples.len();
    let pct = |total: f64, count: usize| if count == 0 { 0.0 } else { 100.0 * total / count as f64 };
    Ok(EvalReport {
        f1: pct(f1_total, n),
        em: pct(em_total, n),
        per_type: sums
            .into_iter()
            .map(|(t, (f, e, c))| {
                (
                    t,
                    TypeScore {
                        f1: pct(f, c),
                        em: pct(e, c),
                        count: c,
                    },
                )
            })
            .collect(),
        num_evaluated: n,
        missing,
    })
}

impl EvalReport {
    /// One-row table in the layout `model | what | how | … | why | other | overall`,
    /// cells formatted `F1/EM`, followed by a row of question counts.
    pub fn render_table(&self, model: &str) -> String {
        let columns: Vec<&str> = QUESTION_TYPES.iter().copied().chain([OTHER_TYPE, "overall"]).collect();
        let cell = |t: &str| -> (String, String) {
            if t == "overall" {
                (format!("{:.2}/{:.2}", self.f1, self.em), self.num_evaluated.to_string())
            } else {
                let s = self.per_type.get(t).copied().unwrap_or_default();
                (format!("{:.2}/{:.2}", s.f1, s.em), s.count.to_string())
            }
        };
        let cells: Vec<(String, String)> = columns.iter().map(|t| cell(t)).collect();
        let widths: Vec<usize> = columns
            .iter()
            .zip(&cells)
            .map(|(h, (s, c))| h.len().max(s.len()).max(c.len()))
            .collect();
        let first = model.len().max("count".len()).max("MODEL".len());
        let mut out = String::new();
        let _ = write!(out, "{:<first$}", "MODEL");
        for (h, w) in columns.iter().zip(&widths) {
            let _ = write!(out, "  {h:>w$}");
        }
        out.push('\n');
        let _ = write!(out, "{model:<first$}");
        for ((s, _), w) in cells.iter().zip(&widths) {
            let _ = write!(out, "  {s:>w$}");
        }
        out.push('\n');
        let _ = write!(out, "{:<first$}", "count");
        for ((_, c), w) in cells.iter().zip(&widths) {
            let _ = write!(out, "  {c:>w$}");
        }
        out.push('\n');
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_rules() {
        assert_eq!(normalize_answer("The Prime Number Theorem"), "prime number theorem");
        assert_eq!(normalize_answer(""), "");
        assert_eq!(normalize_answer("a  An THE x."), "x");
        assert_eq!(normalize_answer("theory, then!"), "theory then");
    }

    #[test]
    fn error_analysis_pairs() {
        let (f1, em) = f1_em("the prime number theorem", &["the prime number theorem"]).unwrap();
        assert_eq!((f1, em), (1.0, 1.0));
        let (f1, em) = f1_em("space suit materials", &["flammable cabin and space suit materials"]).unwrap();
        assert!((f1 - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(em, 0.0);
        assert_eq!(f1_em("", &["south coast metro"]).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn multiset_overlap() {
        // pred "x x y" vs gold "x y y": overlap 2 (one x, one y)
        let (f1, _) = f1_em("x x y", &["x y y"]).unwrap();
        assert!((f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn both_empty_is_perfect() {
        assert_eq!(f1_em("the", &["a"]).unwrap(), (1.0, 1.0));
    }

    #[test]
    fn empty_gold_is_error() {
        assert!(f1_em::<&str>("x", &[]).is_err());
    }

    #[test]
    fn max_over_gold_alternatives() {
        let golds = ["nothing here", "south coast metro"];
        assert_eq!(f1_em("south coast metro", &golds).unwrap(), (1.0, 1.0));
        let rev = ["south coast metro", "nothing here"];
        assert_eq!(f1_em("south coast metro", &rev).unwrap(), (1.0, 1.0));
    }
}
