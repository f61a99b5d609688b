//! Small generated corpora for smoke tests, benchmarks and the verification
//! battery. The tagging corpus has two correlated label layers: UPOS
//! depends on the word and, for ambiguous words, on the previous word; the
//! semantic tag is a function of the word's class and its UPOS.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{NliInstance, NliLabel, Sentence};

const DETS: [(&str, &str); 4] = [("the", "DEF"), ("a", "DIS"), ("every", "AND"), ("no", "NOT")];
const ADJS: [&str; 4] = ["big", "red", "old", "quiet"];
const NOUNS: [&str; 6] = ["cat", "dog", "bird", "man", "woman", "house"];
const VERBS: [&str; 4] = ["sees", "likes", "finds", "chases"];
// noun after a determiner, verb otherwise
const AMBIGUOUS: [&str; 3] = ["fish", "walk", "run"];
const NAMES: [&str; 3] = ["mary", "john", "paris"];

struct Tok {
    word: String,
    upos: &'static str,
    semtag: &'static str,
    head: usize,
    rel: &'static str,
}

fn noun_phrase(rng: &mut ChaCha8Rng, out: &mut Vec<Tok>, head_slot: usize, rel: &'static str) -> usize {
    // returns the index (1-based) of the phrase head
    if rng.random_bool(0.25) {
        let w = NAMES[rng.random_range(0..NAMES.len())];
        out.push(Tok {
            word: w.into(),
            upos: "PROPN",
            semtag: if w == "paris" { "GPE" } else { "PER" },
            head: head_slot,
            rel,
        });
        return out.len();
    }
    let (det, dtag) = DETS[rng.random_range(0..DETS.len())];
    let start = out.len();
    out.push(Tok {
        word: det.into(),
        upos: "DET",
        semtag: dtag,
        head: 0,
        rel: "det",
    });
    let adj = rng.random_bool(0.4);
    if adj {
        out.push(Tok {
            word: ADJS[rng.random_range(0..ADJS.len())].into(),
            upos: "ADJ",
            semtag: "IST",
            head: 0,
            rel: "amod",
        });
    }
    let noun = if rng.random_bool(0.3) {
        AMBIGUOUS[rng.random_range(0..AMBIGUOUS.len())]
    } else {
        NOUNS[rng.random_range(0..NOUNS.len())]
    };
    out.push(Tok {
        word: noun.into(),
        upos: "NOUN",
        semtag: "CON",
        head: head_slot,
        rel,
    });
    let n = out.len();
    for t in &mut out[start..n - 1] {
        t.head = n;
    }
    n
}

/// `n` sentences with UPOS, semantic tags, heads and relations. With
/// `noise > 0`, each UPOS label is replaced by a random tag with that
/// probability (the other layers stay clean).
pub fn correlated_tagging_corpus(n: usize, seed: u64, noise: f64) -> Vec<Sentence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    const UPOS: [&str; 5] = ["DET", "ADJ", "NOUN", "VERB", "PROPN"];
    (0..n)
        .map(|i| {
            let mut toks = Vec::new();
            // subject heads are patched once the verb position is known
            let subj = noun_phrase(&mut rng, &mut toks, usize::MAX, "nsubj");
            let intransitive = rng.random_bool(0.3);
            let verb = if intransitive {
                AMBIGUOUS[rng.random_range(0..AMBIGUOUS.len())]
            } else {
                VERBS[rng.random_range(0..VERBS.len())]
            };
            toks.push(Tok {
                word: verb.into(),
                upos: "VERB",
                semtag: if intransitive { "EXG" } else { "EXS" },
                head: 0,
                rel: "root",
            });
            let v = toks.len();
            toks[subj - 1].head = v;
            if !intransitive {
                noun_phrase(&mut rng, &mut toks, v, "obj");
            }
            let mut s = Sentence::new(format!("syn-{i}"), toks.iter().map(|t| t.word.clone()).collect());
            s.upos = Some(
                toks.iter()
                    .map(|t| {
                        if noise > 0.0 && rng.random_bool(noise) {
                            UPOS[rng.random_range(0..UPOS.len())].to_string()
                        } else {
                            t.upos.to_string()
                        }
                    })
                    .collect(),
            );
            s.semtags = Some(toks.iter().map(|t| t.semtag.to_string()).collect());
            s.heads = Some(toks.iter().map(|t| t.head).collect());
            s.deprels = Some(toks.iter().map(|t| t.rel.to_string()).collect());
            s
        })
        .collect()
}

/// Copies of `corpus` keeping only the named layers.
pub fn strip_layers(corpus: &[Sentence], keep_upos: bool, keep_semtags: bool, keep_tree: bool) -> Vec<Sentence> {
    corpus
        .iter()
        .map(|s| Sentence {
            upos: s.upos.clone().filter(|_| keep_upos),
            semtags: s.semtags.clone().filter(|_| keep_semtags),
            heads: s.heads.clone().filter(|_| keep_tree),
            deprels: s.deprels.clone().filter(|_| keep_tree),
            ..s.clone()
        })
        .collect()
}

fn sent(id: &str, text: &str, tags: &str) -> Sentence {
    let mut s = Sentence::new(id, text.split_whitespace().map(str::to_string).collect());
    s.semtags = Some(tags.split_whitespace().map(str::to_string).collect());
    s
}

/// Eight small premise/hypothesis pairs with semantic tags.
pub fn nli_pairs() -> Vec<NliInstance> {
    use NliLabel::*;
    let raw = [
        ("the dog runs", "DEF CON EXS", "an animal moves", "DIS CON EXS", Entailment),
        ("the dog runs", "DEF CON EXS", "the dog sleeps", "DEF CON EXS", Contradiction),
        ("a man plays guitar", "DIS CON EXS CON", "a man plays music", "DIS CON EXS CON", Entailment),
        ("a man plays guitar", "DIS CON EXS CON", "nobody plays", "NOT EXS", Contradiction),
        ("two girls sing", "QUC CON EXS", "the girls are friends", "DEF CON NOW CON", Neutral),
        ("a woman reads", "DIS CON EXS", "a woman reads a novel", "DIS CON EXS DIS CON", Neutral),
        ("every child laughs", "AND CON EXS", "no child laughs", "NOT CON EXS", Contradiction),
        ("the cat is black", "DEF CON NOW IST", "the cat is dark", "DEF CON NOW IST", Entailment),
    ];
    raw.iter()
        .enumerate()
        .map(|(i, &(p, pt, h, ht, label))| NliInstance {
            id: format!("pair-{i}"),
            premise: sent(&format!("pair-{i}/p"), p, pt),
            hypothesis: sent(&format!("pair-{i}/h"), h, ht),
            label,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_is_valid_and_deterministic() {
        let a = correlated_tagging_corpus(50, 3, 0.0);
        assert_eq!(a, correlated_tagging_corpus(50, 3, 0.0));
        for s in &a {
            s.validate().unwrap();
            assert!(crate::tasks::is_tree(s.heads.as_ref().unwrap()), "{s:?}");
        }
    }
}
