/// A token with its `[start, end)` character offsets in the source text.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

pub fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '\u{2018}'
                | '\u{2019}'
                | '\u{201C}'
                | '\u{201D}'
                | '\u{2013}'
                | '\u{2014}'
                | '\u{2026}'
                | '\u{00AB}'
                | '\u{00BB}'
                | '\u{00BF}'
                | '\u{00A1}'
        )
}

/// Lowercases, splits on whitespace, then peels leading and trailing
/// punctuation off each chunk as one-character tokens. Offsets are character
/// (not byte) positions in the original text.
pub fn tokenize(text: &str) -> Vec<Token> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        while i < chars.len() && !chars[i].is_whitespace() {
            i += 1;
        }
        split_chunk(&chars, start, i, &mut out);
    }
    out
}

fn split_chunk(chars: &[char], start: usize, end: usize, out: &mut Vec<Token>) {
    let mut lo = start;
    let mut hi = end;
    while lo < hi && is_punctuation(chars[lo]) {
        lo += 1;
    }
    while hi > lo && is_punctuation(chars[hi - 1]) {
        hi -= 1;
    }
    let piece = |a: usize, b: usize| Token {
        text: chars[a..b].iter().collect::<String>().to_lowercase(),
        start: a,
        end: b,
    };
    for p in start..lo {
        out.push(piece(p, p + 1));
    }
    if lo < hi {
        out.push(piece(lo, hi));
    }
    for p in hi.max(lo)..end {
        out.push(piece(p, p + 1));
    }
}
