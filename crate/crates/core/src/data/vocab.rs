use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::conll::Sentence;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
const SPECIALS: usize = 2;

/// Word and character indices. Ids 0 and 1 are reserved for padding and
/// unknown entries in both tables; corpus entries start at 2.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    words: Vec<String>,
    word_index: HashMap<String, usize>,
    chars: Vec<char>,
    char_index: HashMap<char, usize>,
}

impl Vocab {
    pub fn from_parts(words: Vec<String>, chars: Vec<char>) -> Self {
        let word_index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i + SPECIALS))
            .collect();
        let char_index = chars.iter().enumerate().map(|(i, &c)| (c, i + SPECIALS)).collect();
        Self {
            words,
            word_index,
            chars,
            char_index,
        }
    }

    /// Rows in a word embedding table for this vocabulary.
    pub fn num_words(&self) -> usize {
        self.words.len() + SPECIALS
    }

    pub fn num_chars(&self) -> usize {
        self.chars.len() + SPECIALS
    }

    /// Corpus words in id order (id = index + 2).
    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    /// Exact match, then lowercase match, then [`UNK`].
    pub fn word_id(&self, word: &str) -> usize {
        if let Some(&i) = self.word_index.get(word) {
            return i;
        }
        self.word_index.get(&word.to_lowercase()).copied().unwrap_or(UNK)
    }

    pub fn exact_word_id(&self, word: &str) -> Option<usize> {
        self.word_index.get(word).copied()
    }

    pub fn char_id(&self, c: char) -> usize {
        self.char_index.get(&c).copied().unwrap_or(UNK)
    }

    /// Word at `id`, `None` for the reserved ids.
    pub fn word(&self, id: usize) -> Option<&str> {
        id.checked_sub(SPECIALS)
            .and_then(|i| self.words.get(i))
            .map(String::as_str)
    }
}

/// Vocabulary over the corpus words, optionally extended with the words of
/// a pretrained embedding file. Words and characters are sorted.
pub fn build_vocab(sentences: &[Sentence], pretrained_words: Option<&HashSet<String>>) -> Vocab {
    let mut words: BTreeSet<String> = BTreeSet::new();
    let mut chars: BTreeSet<char> = BTreeSet::new();
    for s in sentences {
        for t in &s.tokens {
            words.insert(t.clone());
            chars.extend(t.chars());
        }
    }
    if let Some(extra) = pretrained_words {
        words.extend(extra.iter().cloned());
    }
    Vocab::from_parts(words.into_iter().collect(), chars.into_iter().collect())
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    words: Vec<String>,
    chars: String,
}

impl Serialize for Vocab {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        VocabRepr {
            words: self.words.clone(),
            chars: self.chars.iter().collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vocab {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = VocabRepr::deserialize(d)?;
        Ok(Vocab::from_parts(r.words, r.chars.chars().collect()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sent(tokens: &[&str]) -> Sentence {
        Sentence::new(0, tokens.iter().map(|s| s.to_string()).collect(), None).unwrap()
    }

    #[test]
    fn specials_then_corpus_words() {
        let v = build_vocab(&[sent(&["EU", "rejects"])], None);
        assert_eq!(v.num_words(), 4);
        assert_eq!(v.word_id("EU"), 2);
        assert_eq!(v.word_id("rejects"), 3);
        assert_eq!(v.word_id("German"), UNK);
        assert_eq!(v.word(PAD), None);
        assert_eq!(v.word(2), Some("EU"));
        assert_ne!(v.char_id('E'), UNK);
        assert_ne!(v.char_id('U'), UNK);
        assert_eq!(v.char_id('Z'), UNK);
    }

    #[test]
    fn pretrained_words_extend() {
        let base = build_vocab(&[sent(&["EU", "rejects"])], None);
        let extra: HashSet<String> = ["the", "of", "and"].iter().map(|s| s.to_string()).collect();
        let v = build_vocab(&[sent(&["EU", "rejects"])], Some(&extra));
        assert_eq!(v.num_words(), base.num_words() + 3);
    }

    #[test]
    fn lowercase_fallback() {
        let v = build_vocab(&[sent(&["paris"])], None);
        assert_eq!(v.word_id("Paris"), v.word_id("paris"));
        assert_eq!(v.exact_word_id("Paris"), None);
    }

    #[test]
    fn specials_never_collide() {
        let v = build_vocab(&[sent(&["<pad>", "<unk>"])], None);
        assert!(v.word_id("<pad>") >= 2);
        assert!(v.word_id("<unk>") >= 2);
    }

    #[test]
    fn serde_round_trip() {
        let v = build_vocab(&[sent(&["Été", "über"])], None);
        let s = serde_json::to_string(&v).unwrap();
        let back: Vocab = serde_json::from_str(&s).unwrap();
        assert_eq!(back, v);
    }

    proptest! {
        #[test]
        fn lookups_are_total(word in "\\PC*", c in any::<char>()) {
            let v = build_vocab(&[sent(&["a", "b"])], None);
            prop_assert!(v.word_id(&word) < v.num_words());
            prop_assert!(v.char_id(c) < v.num_chars());
        }
    }
}
