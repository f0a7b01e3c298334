//! Deterministic task transforms standing in for a text LM's answers.

use serde::{Deserialize, Serialize};

use crate::vocab::{TokenId, Vocab};

/// Keyword extraction keeps this many tokens.
pub const KEYWORDS: usize = 2;

/// Output length never exceeds `LENGTH_FACTOR · |source|`.
pub const LENGTH_FACTOR: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Oracle {
    /// Ground-truth transcription (the ASR task).
    Transcribe,
    Repeat,
    Reverse,
    /// Fixed substitution over content words, stored in the pool.
    Cipher,
    /// The most frequent tokens, in order of first occurrence.
    Keyword,
    /// Class tag chosen by the first token.
    Intent,
    /// Class tag chosen by the last token.
    Sentiment,
    /// The two content words following the last token, cyclically.
    Continuation,
}

impl Oracle {
    pub const ALL: [Oracle; 8] = [
        Oracle::Transcribe,
        Oracle::Repeat,
        Oracle::Reverse,
        Oracle::Cipher,
        Oracle::Keyword,
        Oracle::Intent,
        Oracle::Sentiment,
        Oracle::Continuation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Oracle::Transcribe => "transcribe",
            Oracle::Repeat => "repeat",
            Oracle::Reverse => "reverse",
            Oracle::Cipher => "cipher",
            Oracle::Keyword => "keyword",
            Oracle::Intent => "intent",
            Oracle::Sentiment => "sentiment",
            Oracle::Continuation => "continuation",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|o| o.name() == name)
    }

    /// Whether the output always equals the source.
    pub fn is_identity(self) -> bool {
        matches!(self, Oracle::Transcribe | Oracle::Repeat)
    }

    /// Applies the transform. `cipher[i]` is the image of the `i`-th content word.
    ///
    /// Non-content source tokens pass through the positional transforms unchanged.
    pub fn apply(self, source: &[TokenId], vocab: &Vocab, cipher: &[TokenId]) -> Vec<TokenId> {
        let content = vocab.content();
        let offset = |t: TokenId| t.wrapping_sub(content.start);
        match self {
            Oracle::Transcribe | Oracle::Repeat => source.to_vec(),
            Oracle::Reverse => source.iter().rev().copied().collect(),
            Oracle::Cipher => source
                .iter()
                .map(|&t| {
                    if vocab.is_content(t) {
                        cipher[offset(t) as usize]
                    } else {
                        t
                    }
                })
                .collect(),
            Oracle::Keyword => keywords(source, KEYWORDS),
            Oracle::Intent => source
                .first()
                .map(|&t| vec![vocab.intent_tags().start + offset(t) % vocab.n_intent])
                .unwrap_or_default(),
            Oracle::Sentiment => source
                .last()
                .map(|&t| vec![vocab.sentiment_tags().start + offset(t) % vocab.n_sentiment])
                .unwrap_or_default(),
            Oracle::Continuation => match source.last() {
                Some(&t) => {
                    let succ = |t: TokenId| content.start + (offset(t) + 1) % vocab.n_content;
                    let a = succ(t);
                    vec![a, succ(a)]
                }
                None => Vec::new(),
            },
        }
    }
}

/// Top-`k` tokens by (count descending, first occurrence ascending), emitted in first-occurrence order.
fn keywords(source: &[TokenId], k: usize) -> Vec<TokenId> {
    // (token, count, first index) in first-occurrence order
    let mut seen: Vec<(TokenId, usize, usize)> = Vec::new();
    for (i, &t) in source.iter().enumerate() {
        match seen.iter_mut().find(|(s, _, _)| *s == t) {
            Some(e) => e.1 += 1,
            None => seen.push((t, 1, i)),
        }
    }
    let mut ranked = seen.clone();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
    ranked.truncate(k);
    ranked.sort_by_key(|e| e.2);
    ranked.into_iter().map(|e| e.0).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v() -> Vocab {
        Vocab::toy()
    }

    #[test]
    fn identity_and_reverse() {
        let cipher: Vec<TokenId> = v().content().collect();
        assert_eq!(Oracle::Repeat.apply(&[7, 5, 8], &v(), &cipher), vec![7, 5, 8]);
        assert_eq!(Oracle::Reverse.apply(&[7, 5, 8], &v(), &cipher), vec![8, 5, 7]);
    }

    #[test]
    fn cipher_uses_the_stored_table() {
        let mut cipher: Vec<TokenId> = v().content().collect();
        cipher.rotate_left(3);
        let src = [7, 5, 8];
        let expected: Vec<TokenId> = src.iter().map(|t| cipher[(t - 4) as usize]).collect();
        assert_eq!(Oracle::Cipher.apply(&src, &v(), &cipher), expected);
        assert_eq!(expected, vec![10, 8, 11]);
    }

    #[test]
    fn keywords_rank_by_count_then_first_seen() {
        assert_eq!(keywords(&[9, 4, 4, 7, 9, 4], 2), vec![9, 4]);
        assert_eq!(keywords(&[9, 4, 7], 2), vec![9, 4]);
        assert_eq!(keywords(&[5, 6, 6], 2), vec![5, 6]);
        assert_eq!(keywords(&[5, 6, 7, 7], 2), vec![5, 7]);
        assert_eq!(keywords(&[5, 5], 2), vec![5]);
    }

    #[test]
    fn class_tags_follow_first_and_last_tokens() {
        let c: Vec<TokenId> = v().content().collect();
        assert_eq!(Oracle::Intent.apply(&[4 + 6, 20], &v(), &c), vec![36 + 2]);
        assert_eq!(Oracle::Sentiment.apply(&[4, 4 + 7], &v(), &c), vec![40 + 1]);
    }

    #[test]
    fn continuation_wraps_around_content() {
        let c: Vec<TokenId> = v().content().collect();
        assert_eq!(Oracle::Continuation.apply(&[4, 10], &v(), &c), vec![11, 12]);
        assert_eq!(Oracle::Continuation.apply(&[34], &v(), &c), vec![35, 4]);
    }

    #[test]
    fn names_round_trip() {
        for o in Oracle::ALL {
            assert_eq!(Oracle::from_name(o.name()), Some(o));
        }
        assert_eq!(Oracle::from_name("translate"), None);
    }
}
