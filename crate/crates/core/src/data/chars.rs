//! Static character vocabulary for the char-CNN: printable ASCII plus an
//! unknown-character and a padding id.

pub const MAX_WORD_LEN: usize = 16;
pub const PAD_CHAR: usize = 0;
pub const UNK_CHAR: usize = 1;
const FIRST_PRINTABLE: u32 = 0x20;
const LAST_PRINTABLE: u32 = 0x7E;
/// PAD + UNK + 95 printable ASCII characters.
pub const CHAR_VOCAB_SIZE: usize = 2 + (LAST_PRINTABLE - FIRST_PRINTABLE + 1) as usize;

pub fn char_id(c: char) -> usize {
    let u = c as u32;
    if (FIRST_PRINTABLE..=LAST_PRINTABLE).contains(&u) {
        2 + (u - FIRST_PRINTABLE) as usize
    } else {
        UNK_CHAR
    }
}

/// Character ids of a token, truncated or padded to [`MAX_WORD_LEN`].
pub fn word_char_ids(token: &str) -> Vec<usize> {
    let mut ids: Vec<usize> = token.chars().take(MAX_WORD_LEN).map(char_id).collect();
    ids.resize(MAX_WORD_LEN, PAD_CHAR);
    ids
}

pub fn pad_word() -> Vec<usize> {
    vec![PAD_CHAR; MAX_WORD_LEN]
}
