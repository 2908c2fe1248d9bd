use super::chars::pad_word;
use super::example::Example;
use super::vocab::{Vocab, PAD_ID};
use crate::scalar::Real;

/// A padded group of examples. Masks are `true` at real positions.
#[derive(Clone, Debug, PartialEq)]
pub struct PaddedBatch {
    /// Positions of the examples in the slice they were batched from.
    pub indices: Vec<usize>,
    pub ids: Vec<String>,
    pub context_ids: Vec<Vec<usize>>,
    pub context_chars: Vec<Vec<Vec<usize>>>,
    pub context_mask: Vec<Vec<bool>>,
    pub question_ids: Vec<Vec<usize>>,
    pub question_chars: Vec<Vec<Vec<usize>>>,
    pub question_mask: Vec<Vec<bool>>,
    pub answer_start: Vec<usize>,
    pub answer_end: Vec<usize>,
}

/// Borrowed view of one padded sequence.
#[derive(Clone, Copy, Debug)]
pub struct SequenceView<'a> {
    pub token_ids: &'a [usize],
    pub char_ids: &'a [Vec<usize>],
    pub mask: &'a [bool],
}

impl SequenceView<'_> {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

/// Borrowed view of one example inside a batch.
#[derive(Clone, Copy, Debug)]
pub struct ItemView<'a> {
    pub context: SequenceView<'a>,
    pub question: SequenceView<'a>,
    pub answer_start: usize,
    pub answer_end: usize,
}

impl PaddedBatch {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn item(&self, b: usize) -> ItemView<'_> {
        ItemView {
            context: SequenceView {
                token_ids: &self.context_ids[b],
                char_ids: &self.context_chars[b],
                mask: &self.context_mask[b],
            },
            question: SequenceView {
                token_ids: &self.question_ids[b],
                char_ids: &self.question_chars[b],
                mask: &self.question_mask[b],
            },
            answer_start: self.answer_start[b],
            answer_end: self.answer_end[b],
        }
    }
}

/// Splits `examples` into consecutive batches (the last one may be short).
/// With `pad_to_longest` each batch pads to its own longest sequence,
/// otherwise to the longest in the whole slice.
pub fn batch<T: Real>(examples: &[Example], vocab: &Vocab<T>, batch_size: usize, pad_to_longest: bool) -> Vec<PaddedBatch> {
    let order: Vec<usize> = (0..examples.len()).collect();
    batch_in_order(examples, &order, vocab, batch_size, pad_to_longest)
}

/// Like [`batch`] but visiting `examples` in the given index order.
pub fn batch_in_order<T: Real>(
    examples: &[Example],
    order: &[usize],
    vocab: &Vocab<T>,
    batch_size: usize,
    pad_to_longest: bool,
) -> Vec<PaddedBatch> {
    let batch_size = batch_size.max(1);
    let global = (
        examples.iter().map(|e| e.context_tokens.len()).max().unwrap_or(0),
        examples.iter().map(|e| e.question_tokens.len()).max().unwrap_or(0),
    );
    order
        .chunks(batch_size)
        .map(|chunk| {
            let (n, m) = if pad_to_longest {
                (
                    chunk.iter().map(|&i| examples[i].context_tokens.len()).max().unwrap_or(0),
                    chunk.iter().map(|&i| examples[i].question_tokens.len()).max().unwrap_or(0),
                )
            } else {
                global
            };
            let mut b = PaddedBatch {
                indices: chunk.to_vec(),
                ids: Vec::with_capacity(chunk.len()),
                context_ids: Vec::with_capacity(chunk.len()),
                context_chars: Vec::with_capacity(chunk.len()),
                context_mask: Vec::with_capacity(chunk.len()),
                question_ids: Vec::with_capacity(chunk.len()),
                question_chars: Vec::with_capacity(chunk.len()),
                question_mask: Vec::with_capacity(chunk.len()),
                answer_start: Vec::with_capacity(chunk.len()),
                answer_end: Vec::with_capacity(chunk.len()),
            };
            for &i in chunk {
                let ex = &examples[i];
                b.ids.push(ex.id.clone());
                let (ids, chars, mask) = pad_sequence(&ex.context_tokens, &ex.context_char_ids, n, vocab);
                b.context_ids.push(ids);
                b.context_chars.push(chars);
                b.context_mask.push(mask);
                let (ids, chars, mask) = pad_sequence(&ex.question_tokens, &ex.question_char_ids, m, vocab);
                b.question_ids.push(ids);
                b.question_chars.push(chars);
                b.question_mask.push(mask);
                b.answer_start.push(ex.answer_start);
                b.answer_end.push(ex.answer_end);
            }
            b
        })
        .collect()
}

fn pad_sequence<T: Real>(
    tokens: &[String],
    chars: &[Vec<usize>],
    len: usize,
    vocab: &Vocab<T>,
) -> (Vec<usize>, Vec<Vec<usize>>, Vec<bool>) {
    let mut ids: Vec<usize> = tokens.iter().map(|t| vocab.id(t)).collect();
    let mut ch = chars.to_vec();
    let mut mask = vec![true; tokens.len()];
    ids.resize(len, PAD_ID);
    ch.resize(len, pad_word());
    mask.resize(len, false);
    (ids, ch, mask)
}
