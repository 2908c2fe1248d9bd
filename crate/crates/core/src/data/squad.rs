use std::path::Path;

use serde::Deserialize;

use super::example::Example;
use super::tokenize::{tokenize, Token};
use crate::error::{Error, Result};
use crate::metrics::normalize_answer;

#[derive(Deserialize)]
struct SquadFile {
    data: Vec<Article>,
}

#[derive(Deserialize)]
struct Article {
    paragraphs: Vec<Paragraph>,
}

#[derive(Deserialize)]
struct Paragraph {
    context: String,
    qas: Vec<Qa>,
}

#[derive(Deserialize)]
struct Qa {
    id: String,
    question: String,
    answers: Vec<Answer>,
}

#[derive(Deserialize)]
struct Answer {
    text: String,
    answer_start: usize,
}

/// Result of reading a SQuAD file.
#[derive(Clone, Debug)]
pub struct LoadedSquad {
    pub examples: Vec<Example>,
    /// Questions dropped because their answer could not be mapped to tokens or
    /// lies beyond the context length limit.
    pub skipped: usize,
}

pub fn load_squad(path: &Path, max_context_len: usize, max_question_len: usize) -> Result<LoadedSquad> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_squad(&text, path, max_context_len, max_question_len)
}

/// Parses SQuAD v1.1 JSON already in memory; `path` is only used in errors.
pub fn parse_squad(json: &str, path: &Path, max_context_len: usize, max_question_len: usize) -> Result<LoadedSquad> {
    let file: SquadFile = serde_json::from_str(json).map_err(|e| Error::Parse {
        path: path.into(),
        message: e.to_string(),
    })?;
    let mut examples = Vec::new();
    let mut skipped = 0;
    for para in file.data.iter().flat_map(|a| &a.paragraphs) {
        let ctx = tokenize(&para.context);
        for qa in &para.qas {
            match build(qa, &ctx, max_context_len, max_question_len) {
                Some(ex) => examples.push(ex),
                None => skipped += 1,
            }
        }
    }
    Ok(LoadedSquad { examples, skipped })
}

fn build(qa: &Qa, ctx: &[Token], max_context_len: usize, max_question_len: usize) -> Option<Example> {
    let answer = qa.answers.first()?;
    let (start, end) = map_span(ctx, answer.answer_start, answer.text.chars().count())?;
    if end >= max_context_len {
        return None;
    }
    let context_tokens: Vec<String> = ctx.iter().take(max_context_len).map(|t| t.text.clone()).collect();
    let question_tokens: Vec<String> = tokenize(&qa.question).into_iter().take(max_question_len).map(|t| t.text).collect();
    let answer_texts: Vec<String> = qa.answers.iter().map(|a| a.text.clone()).collect();
    let ex = Example::new(qa.id.clone(), context_tokens, question_tokens, start, end, answer_texts).ok()?;
    let span = normalize_answer(&ex.answer_span_text());
    ex.answer_texts.iter().any(|a| normalize_answer(a) == span).then_some(ex)
}

/// Token span covering `[char_start, char_start + char_len)`: the first token
/// containing `char_start` through the last token starting before the end.
fn map_span(ctx: &[Token], char_start: usize, char_len: usize) -> Option<(usize, usize)> {
    let start = ctx.iter().position(|t| t.start <= char_start && char_start < t.end)?;
    let char_end = char_start + char_len;
    let end = ctx
        .iter()
        .enumerate()
        .skip(start)
        .take_while(|(_, t)| t.start < char_end)
        .last()
        .map(|(i, _)| i)?;
    Some((start, end))
}
