//! Token accounting for chains.

use serde::{Deserialize, Serialize};

use super::{serialize, serialize_prefix, ReasoningChain};

/// Tokens in one discretized 7-D action.
pub const ACTION_TOKENS: u64 = 7;

/// Maps text to an estimated token count. Implement this to plug in a real
/// tokenizer.
pub trait TokenEstimator: Send + Sync {
    fn estimate(&self, text: &str) -> u64;
}

/// Word-count proxy for a subword tokenizer.
///
/// `ceil(words * 133 / 100)` plus one token for every ASCII digit or
/// punctuation character. Digits count individually because common LLM
/// tokenizers split numbers digit by digit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WordProxyEstimator;

impl TokenEstimator for WordProxyEstimator {
    fn estimate(&self, text: &str) -> u64 {
        let words = text.split_whitespace().count() as u64;
        let symbols = text
            .bytes()
            .filter(|b| b.is_ascii_digit() || b.is_ascii_punctuation())
            .count() as u64;
        (words * 133).div_ceil(100) + symbols
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenBudget {
    pub generated: u64,
    pub encoded: u64,
}

/// Generation budget for a full chain followed by its action.
pub fn count_tokens(chain: &ReasoningChain, estimator: &dyn TokenEstimator) -> TokenBudget {
    TokenBudget {
        generated: estimator.estimate(&serialize(chain)) + ACTION_TOKENS,
        encoded: 0,
    }
}

/// Budget of a plain action policy with no reasoning.
pub fn count_action_only() -> TokenBudget {
    TokenBudget {
        generated: ACTION_TOKENS,
        encoded: 0,
    }
}

/// Split of a chain's generated tokens into the high-level prefix (held
/// fixed by the freezing strategies) and the regenerated remainder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainProfile {
    pub high: u64,
    pub low: u64,
    pub action: u64,
}

impl ChainProfile {
    pub fn new(high: u64, low: u64) -> Self {
        Self {
            high,
            low,
            action: ACTION_TOKENS,
        }
    }

    /// `high + low + action` always equals [`count_tokens`] for the chain.
    pub fn from_chain(chain: &ReasoningChain, estimator: &dyn TokenEstimator) -> Self {
        let total = count_tokens(chain, estimator).generated - ACTION_TOKENS;
        let n = chain.layout.high_level_sections().len();
        let high = estimator.estimate(&serialize_prefix(chain, n)).min(total);
        Self::new(high, total - high)
    }

    pub fn total(&self) -> u64 {
        self.high + self.low + self.action
    }

    /// Tokens generated on a step that reuses the high-level prefix.
    pub fn regenerated(&self) -> u64 {
        self.low + self.action
    }
}
