//! Word → subword tokenization.

/// Splits words into subword pieces and maps pieces to embedding rows.
pub trait Tokenizer: Send + Sync {
    /// At least one piece per word.
    fn split(&self, word: &str) -> Vec<String>;
    fn piece_id(&self, piece: &str) -> usize;
    fn marker_id(&self) -> usize;
    fn vocab_size(&self) -> usize;
}

/// Reserved id of the mention marker `*`.
pub const MARKER_ID: usize = 1;
const FIRST_PIECE_ID: usize = 2;

/// Deterministic WordPiece-like tokenizer for the mock encoder.
///
/// Words are cut into chunks of at most `max_piece_chars` characters, with
/// continuation chunks prefixed by `##`. Pieces are hashed (FNV-1a) into a
/// fixed number of embedding rows, so no vocabulary file is needed.
#[derive(Clone, Debug)]
pub struct HashingTokenizer {
    vocab_size: usize,
    max_piece_chars: usize,
}

impl HashingTokenizer {
    pub fn new(vocab_size: usize, max_piece_chars: usize) -> Self {
        assert!(vocab_size > FIRST_PIECE_ID, "vocabulary too small");
        assert!(max_piece_chars > 0);
        Self {
            vocab_size,
            max_piece_chars,
        }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

impl Tokenizer for HashingTokenizer {
    fn split(&self, word: &str) -> Vec<String> {
        let chars: Vec<char> = word.chars().collect();
        if chars.is_empty() {
            return vec![String::new()];
        }
        chars
            .chunks(self.max_piece_chars)
            .enumerate()
            .map(|(i, c)| {
                let s: String = c.iter().collect();
                if i == 0 {
                    s
                } else {
                    format!("##{s}")
                }
            })
            .collect()
    }

    fn piece_id(&self, piece: &str) -> usize {
        FIRST_PIECE_ID
            + (fnv1a(piece.as_bytes()) % (self.vocab_size - FIRST_PIECE_ID) as u64) as usize
    }

    fn marker_id(&self) -> usize {
        MARKER_ID
    }

    fn vocab_size(&self) -> usize {
        self.vocab_size
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn long_words_split_into_continuation_pieces() {
        let t = HashingTokenizer::new(100, 3);
        assert_eq!(t.split("Hong"), vec!["Hon", "##g"]);
        assert_eq!(t.split("Kim"), vec!["Kim"]);
    }

    #[test]
    fn piece_ids_are_stable_and_never_collide_with_the_marker() {
        let t = HashingTokenizer::new(50, 4);
        for w in ["a", "b", "*", "Michelle", "##lle"] {
            let id = t.piece_id(w);
            assert!((2..50).contains(&id));
            assert_eq!(id, t.piece_id(w));
        }
        // FNV-1a offset basis for the empty string
        assert_eq!(fnv1a(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a(b"a"), 0xaf63_dc4c_8601_ec8c);
    }
}
