use std::collections::HashSet;
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    save_dialogues, Dialogue, KnowledgeBase, KnowledgeKey, KnowledgeSnippet, Speaker, Turn, TurnLabel,
};
use crate::error::{Error, Result};
use crate::seed;
use crate::selection::CandidateScope;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureSizes {
    pub domains: usize,
    pub entities_per_domain: usize,
    pub docs_per_entity: usize,
    pub faqs_per_domain: usize,
    pub dialogues: usize,
    pub targets_per_dialogue: usize,
}

impl Default for FixtureSizes {
    fn default() -> Self {
        FixtureSizes {
            domains: 2,
            entities_per_domain: 3,
            docs_per_entity: 4,
            faqs_per_domain: 2,
            dialogues: 10,
            targets_per_dialogue: 2,
        }
    }
}

const DOMAIN_NAMES: [&str; 5] = ["hotel", "restaurant", "train", "taxi", "attraction"];
const ONSETS: [&str; 12] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t"];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];

/// Fresh pronounceable nonsense words, never repeated.
struct Words {
    rng: ChaCha8Rng,
    used: HashSet<String>,
}

impl Words {
    fn next(&mut self) -> String {
        loop {
            let w: String = (0..4)
                .map(|_| {
                    let o = ONSETS[self.rng.random_range(0..ONSETS.len())];
                    let v = VOWELS[self.rng.random_range(0..VOWELS.len())];
                    format!("{o}{v}")
                })
                .collect();
            if self.used.insert(w.clone()) {
                return w;
            }
        }
    }
}

fn capitalized(w: &str) -> String {
    let mut c = w.chars();
    c.next()
        .map(|f| f.to_uppercase().chain(c).collect())
        .unwrap_or_default()
}

fn doc(words: &mut Words, domain: &str, entity: Option<(&str, &str)>, doc_id: usize) -> (KnowledgeSnippet, String) {
    let keyword = words.next();
    let answer = words.next();
    let snippet = KnowledgeSnippet {
        domain: domain.to_string(),
        entity_id: entity.map(|e| e.0.to_string()),
        entity_name: entity.map(|e| e.1.to_string()),
        doc_id: doc_id.to_string(),
        title: format!("What about {keyword}?"),
        body: format!("The {keyword} policy is {answer}."),
    };
    (snippet, keyword)
}

fn turn(speaker: Speaker, text: String, index: usize) -> Turn {
    Turn { speaker, text, index }
}

/// Synthetic corpus in which every gold snippet is the only one in its scope
/// sharing a keyword with its turn, so retrieval picks it unambiguously.
pub fn make_fixture(seed_value: u64, sizes: FixtureSizes) -> Result<(KnowledgeBase, Vec<Dialogue>)> {
    let FixtureSizes {
        domains,
        entities_per_domain,
        docs_per_entity,
        faqs_per_domain,
        dialogues,
        targets_per_dialogue,
    } = sizes;
    if domains == 0 || (entities_per_domain == 0 || docs_per_entity == 0) && faqs_per_domain == 0 {
        return Err(Error::InvalidParameter("fixture needs at least one snippet".into()));
    }
    let mut words = Words {
        rng: seed::rng(seed::derive(seed_value, &[b"words"])),
        used: HashSet::new(),
    };
    let mut snippets = Vec::new();
    let mut keywords = std::collections::BTreeMap::new();
    for d in 0..domains {
        let domain = DOMAIN_NAMES
            .get(d)
            .map_or_else(|| format!("domain{d}"), |s| s.to_string());
        for f in 0..faqs_per_domain {
            let (s, kw) = doc(&mut words, &domain, None, f);
            keywords.insert(s.key(), kw);
            snippets.push(s);
        }
        for e in 0..entities_per_domain {
            let name = format!("{} {}", capitalized(&words.next()), capitalized(&domain));
            let id = e.to_string();
            for k in 0..docs_per_entity {
                let (s, kw) = doc(&mut words, &domain, Some((&id, &name)), k);
                keywords.insert(s.key(), kw);
                snippets.push(s);
            }
        }
    }
    let kb = KnowledgeBase::from_snippets(snippets)?;

    let mut scopes: Vec<CandidateScope> = kb.snippets().iter().map(|s| CandidateScope::of_key(&s.key())).collect();
    scopes.dedup();
    if targets_per_dialogue > scopes.len() {
        return Err(Error::InvalidParameter(format!(
            "{targets_per_dialogue} targets per dialogue but only {} scopes",
            scopes.len()
        )));
    }

    let mut rng = seed::rng(seed::derive(seed_value, &[b"dialogues"]));
    let mut out = Vec::with_capacity(dialogues);
    for i in 0..dialogues {
        let mut turns = Vec::new();
        let mut labels = Vec::new();
        let push = |turns: &mut Vec<Turn>, speaker, text: String| {
            let idx = turns.len() + 1;
            turns.push(turn(speaker, text, idx));
            idx
        };
        let picked = index::sample(&mut rng, scopes.len(), targets_per_dialogue).into_vec();
        for (j, s) in picked.into_iter().enumerate() {
            let scope = &scopes[s];
            let docs = scope.resolve(&kb)?;
            let gold = docs[rng.random_range(0..docs.len())];
            let place = gold
                .entity_name
                .clone()
                .unwrap_or_else(|| format!("the {}", gold.domain));
            push(
                &mut turns,
                Speaker::User,
                format!("I need some help with {place} for {} people.", j + 2),
            );
            push(&mut turns, Speaker::Agent, format!("Sure, {place} can do that."));
            let keyword = &keywords[&gold.key()];
            let t = push(
                &mut turns,
                Speaker::User,
                format!("Could you tell me about {keyword} there?"),
            );
            let response = format!("{} Anything else?", gold.body);
            push(&mut turns, Speaker::Agent, response.clone());
            labels.push(TurnLabel {
                turn_index: t,
                target: true,
                knowledge_refs: vec![gold.key()],
                gold_response: Some(response),
            });
        }
        push(&mut turns, Speaker::User, "That is all, thank you.".to_string());
        push(&mut turns, Speaker::Agent, "You are welcome, goodbye.".to_string());
        out.push(Dialogue {
            dialogue_id: format!("fx{i:04}"),
            turns,
            labels: Some(labels),
        });
    }
    Ok((kb, out))
}

/// Writes `knowledge.json`, `logs.json` and `labels.json` into `dir`.
pub fn write_fixture(dir: &Path, kb: &KnowledgeBase, dialogues: &[Dialogue]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    kb.save(&dir.join("knowledge.json"))?;
    save_dialogues(dialogues, &dir.join("logs.json"), Some(&dir.join("labels.json")))
}

/// A 16-turn train/hotel/restaurant conversation with knowledge-seeking user
/// turns 3, 7, 11 and 15; turn 7 has two relevant snippets.
pub fn example_fixture() -> (KnowledgeBase, Vec<Dialogue>) {
    let s = |domain: &str, entity: Option<(&str, &str)>, doc: &str, title: &str, body: &str| KnowledgeSnippet {
        domain: domain.into(),
        entity_id: entity.map(|e| e.0.into()),
        entity_name: entity.map(|e| e.1.into()),
        doc_id: doc.into(),
        title: title.into(),
        body: body.into(),
    };
    let gonville = Some(("gonville", "Gonville Hotel"));
    let lensfield = Some(("lensfield", "Lensfield Hotel"));
    let peking = Some(("peking", "Peking Restaurant"));
    let kb = KnowledgeBase::from_snippets(vec![
        s(
            "train",
            None,
            "0",
            "May I travel with my pet on the train?",
            "Dogs and cats weighing up to 20 pounds ride free.",
        ),
        s(
            "train",
            None,
            "1",
            "Is there wifi on board?",
            "Free wifi is offered on every train.",
        ),
        s(
            "hotel",
            gonville,
            "0",
            "Are pets welcome at Gonville Hotel?",
            "Pets are allowed, though a fee may apply.",
        ),
        s(
            "hotel",
            gonville,
            "1",
            "Which credit cards does Gonville Hotel take?",
            "AMEX, Visa and Mastercard are all accepted.",
        ),
        s(
            "hotel",
            gonville,
            "2",
            "Is breakfast included?",
            "Breakfast is served daily for an extra charge.",
        ),
        s(
            "hotel",
            lensfield,
            "0",
            "Can I bring my dog?",
            "The Lensfield Hotel does not allow pets.",
        ),
        s(
            "hotel",
            lensfield,
            "1",
            "Is there parking?",
            "Free parking is available on site.",
        ),
        s(
            "restaurant",
            peking,
            "0",
            "Which payment methods are accepted here?",
            "Peking Restaurant accepts cash only.",
        ),
        s(
            "restaurant",
            peking,
            "1",
            "Do you have vegetarian dishes?",
            "Several vegetarian dishes are on the menu.",
        ),
    ])
    .expect("static fixture is valid");

    let lines = [
        "I want a train from Kings Lynn to Cambridge on Sunday, arriving before 17:45.",
        "Train TR6003 leaves at 5:11 and arrives at 5:58 on Sunday.",
        "I am travelling with my dog. Are pets allowed on the train?",
        "Yes, dogs up to 20 pounds can ride with you for free.",
        "Great. I also need somewhere to stay in the south.",
        "There are two options, the Lensfield Hotel and the Gonville Hotel.",
        "Would either of them let me stay with my dog?",
        "Gonville allows dogs for a fee, but Lensfield does not. Shall I book Gonville?",
        "Not yet. Is there a Chinese place to eat nearby?",
        "Peking Restaurant is a good choice. Would you like a reservation?",
        "First, can you check whether this restaurant accepts AMEX?",
        "Sorry, Peking Restaurant accepts cash only. Is that okay?",
        "Fine. Please book a table for 4 at 18:30 on Monday.",
        "Your table is booked. Anything else?",
        "Back to the hotel, can I pay with a credit card there?",
        "Yes, Gonville Hotel takes all major credit cards, AMEX included.",
    ];
    let turns = lines
        .iter()
        .enumerate()
        .map(|(i, text)| {
            let speaker = if i % 2 == 0 { Speaker::User } else { Speaker::Agent };
            turn(speaker, text.to_string(), i + 1)
        })
        .collect();
    let label = |t: usize, keys: Vec<KnowledgeKey>| TurnLabel {
        turn_index: t,
        target: true,
        knowledge_refs: keys,
        gold_response: Some(lines[t].to_string()),
    };
    let labels = vec![
        label(3, vec![KnowledgeKey::domain_level("train", "0")]),
        label(
            7,
            vec![
                KnowledgeKey::entity_level("hotel", "gonville", "0"),
                KnowledgeKey::entity_level("hotel", "lensfield", "0"),
            ],
        ),
        label(11, vec![KnowledgeKey::entity_level("restaurant", "peking", "0")]),
        label(15, vec![KnowledgeKey::entity_level("hotel", "gonville", "1")]),
    ];
    let dialogue = Dialogue {
        dialogue_id: "ex01".into(),
        turns,
        labels: Some(labels),
    };
    (kb, vec![dialogue])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_are_respected() {
        let sizes = FixtureSizes {
            domains: 2,
            entities_per_domain: 3,
            docs_per_entity: 4,
            faqs_per_domain: 0,
            dialogues: 5,
            targets_per_dialogue: 3,
        };
        let (kb, dialogues) = make_fixture(7, sizes).unwrap();
        assert_eq!(kb.snippets().iter().filter(|s| s.is_entity_level()).count(), 24);
        assert_eq!(kb.len(), 24);
        assert_eq!(dialogues.len(), 5);
        assert!(dialogues.iter().all(|d| d.targets().count() == 3));
    }

    #[test]
    fn same_seed_same_files() {
        let dir = tempfile::tempdir().unwrap();
        let write = |name: &str| {
            let (kb, d) = make_fixture(7, FixtureSizes::default()).unwrap();
            let p = dir.path().join(name);
            write_fixture(&p, &kb, &d).unwrap();
            ["knowledge.json", "logs.json", "labels.json"].map(|f| std::fs::read(p.join(f)).unwrap())
        };
        assert_eq!(write("a"), write("b"));
        let (kb1, _) = make_fixture(7, FixtureSizes::default()).unwrap();
        let (kb2, _) = make_fixture(8, FixtureSizes::default()).unwrap();
        assert_ne!(kb1, kb2);
    }

    #[test]
    fn too_many_targets() {
        let sizes = FixtureSizes {
            domains: 1,
            entities_per_domain: 1,
            docs_per_entity: 2,
            faqs_per_domain: 0,
            dialogues: 1,
            targets_per_dialogue: 2,
        };
        assert!(make_fixture(1, sizes).is_err());
    }

    #[test]
    fn example_fixture_shape() {
        let (kb, d) = example_fixture();
        assert_eq!(kb.len(), 9);
        let targets: Vec<usize> = d[0].targets().map(|l| l.turn_index).collect();
        assert_eq!(targets, [3, 7, 11, 15]);
        for l in d[0].targets() {
            for k in &l.knowledge_refs {
                assert!(kb.get(k).is_some());
            }
        }
    }
}
