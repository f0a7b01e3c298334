//! Token-id layout of the toy vocabulary.
//!
//! ```text
//! 0           PAD
//! 1           EOS
//! 2           INST_BEGIN
//! 3           INST_END
//! 4..         content words (what the synthetic speech says)
//! ..          intent class tags
//! ..          sentiment class tags
//! ..vocab     instruction words
//! ```

use serde::{Deserialize, Serialize};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const EOS: TokenId = 1;
pub const INST_BEGIN: TokenId = 2;
pub const INST_END: TokenId = 3;
const N_SPECIAL: u32 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pub size: u32,
    pub n_content: u32,
    pub n_intent: u32,
    pub n_sentiment: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("vocabulary of {size} cannot hold {needed} reserved ids plus instruction words")]
pub struct VocabError {
    pub size: u32,
    pub needed: u32,
}

impl Vocab {
    pub fn new(size: u32, n_content: u32, n_intent: u32, n_sentiment: u32) -> Result<Self, VocabError> {
        let needed = N_SPECIAL + n_content + n_intent + n_sentiment;
        if needed >= size || n_content < 2 || n_intent == 0 || n_sentiment == 0 {
            return Err(VocabError { size, needed });
        }
        Ok(Self {
            size,
            n_content,
            n_intent,
            n_sentiment,
        })
    }

    /// 64 ids: 32 content words, 4 intent tags, 3 sentiment tags, 21 instruction words.
    pub fn toy() -> Self {
        Self::new(64, 32, 4, 3).expect("toy vocabulary")
    }

    pub fn content(&self) -> std::ops::Range<TokenId> {
        N_SPECIAL..N_SPECIAL + self.n_content
    }

    pub fn intent_tags(&self) -> std::ops::Range<TokenId> {
        let s = self.content().end;
        s..s + self.n_intent
    }

    pub fn sentiment_tags(&self) -> std::ops::Range<TokenId> {
        let s = self.intent_tags().end;
        s..s + self.n_sentiment
    }

    pub fn instruction_words(&self) -> std::ops::Range<TokenId> {
        self.sentiment_tags().end..self.size
    }

    pub fn is_content(&self, t: TokenId) -> bool {
        self.content().contains(&t)
    }
}

impl Default for Vocab {
    fn default() -> Self {
        Self::toy()
    }
}
