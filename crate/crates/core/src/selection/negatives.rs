use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dialogue, KnowledgeBase, KnowledgeKey};
use crate::error::{Error, Result};
use crate::seed;
use crate::selection::CandidateScope;

/// Negatives per positive used for classifier training data.
pub const DEFAULT_NEGATIVES: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NegativeSample {
    pub keys: Vec<KnowledgeKey>,
    /// Set when the scope held fewer than the requested number of negatives.
    pub short: bool,
}

/// Draws up to `m` keys from the positive's scope, without replacement,
/// never the positive itself.
pub fn sample_negatives(kb: &KnowledgeBase, positive: &KnowledgeKey, m: usize, seed: u64) -> Result<NegativeSample> {
    if m == 0 {
        return Err(Error::InvalidParameter("number of negatives must be at least 1".into()));
    }
    kb.resolve(positive, "negative sampling")?;
    let pool: Vec<KnowledgeKey> = CandidateScope::of_key(positive)
        .resolve(kb)?
        .into_iter()
        .map(|s| s.key())
        .filter(|k| k != positive)
        .collect();
    if pool.len() <= m {
        return Ok(NegativeSample {
            short: pool.len() < m,
            keys: pool,
        });
    }
    let mut rng = seed::rng(seed::derive(seed, &[positive.to_string().as_bytes()]));
    let keys = index::sample(&mut rng, pool.len(), m)
        .into_iter()
        .map(|i| pool[i].clone())
        .collect();
    Ok(NegativeSample { keys, short: false })
}

/// One line of the negative-sample file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NegativeRecord {
    pub dialogue_id: String,
    pub turn: usize,
    pub positive: KnowledgeKey,
    pub negatives: Vec<KnowledgeKey>,
}

/// A record per gold knowledge key of every labeled target turn. Returns the
/// records and the number of them that came up short.
pub fn prep_negatives(
    kb: &KnowledgeBase,
    dialogues: &[Dialogue],
    m: usize,
    seed: u64,
) -> Result<(Vec<NegativeRecord>, usize)> {
    let mut out = Vec::new();
    let mut short = 0;
    for d in dialogues {
        for label in d.targets() {
            let turn_seed = seed::derive(seed, &[d.dialogue_id.as_bytes(), &label.turn_index.to_le_bytes()]);
            for positive in &label.knowledge_refs {
                let s = sample_negatives(kb, positive, m, turn_seed)?;
                short += usize::from(s.short);
                out.push(NegativeRecord {
                    dialogue_id: d.dialogue_id.clone(),
                    turn: label.turn_index,
                    positive: positive.clone(),
                    negatives: s.keys,
                });
            }
        }
    }
    Ok((out, short))
}
