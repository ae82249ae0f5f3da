//! CoNLL-style column files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tags::{convert_iob1_to_bio2, parse_tag, TagSequence, TagSet};
use crate::error::{Error, Result};

const DOCSTART: &str = "-DOCSTART-";

/// A tokenized sentence with optional gold tag ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    /// 0-based position of the sentence in its source file.
    pub id: usize,
    pub tokens: Vec<String>,
    pub gold_tags: Option<TagSequence>,
}

impl Sentence {
    pub fn new(id: usize, tokens: Vec<String>, gold_tags: Option<TagSequence>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::EmptySequence);
        }
        if tokens.iter().any(|t| t.is_empty()) {
            return Err(Error::Format(format!("sentence {id} has an empty token")));
        }
        if let Some(tags) = &gold_tags {
            if tags.len() != tokens.len() {
                return Err(Error::dims("sentence tags", &[tokens.len()], &[tags.len()]));
            }
        }
        Ok(Self { id, tokens, gold_tags })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Copy without gold tags.
    pub fn unlabeled(&self) -> Self {
        Self {
            gold_tags: None,
            ..self.clone()
        }
    }

    /// Re-expresses gold tag ids from `from` in terms of `to`.
    pub fn relabel(&mut self, from: &TagSet, to: &TagSet) -> Result<()> {
        if let Some(tags) = &mut self.gold_tags {
            for t in tags.iter_mut() {
                let label = from.label(*t).ok_or(Error::Index {
                    what: "tag id",
                    index: *t,
                    limit: from.len(),
                })?;
                *t = to
                    .id(label)
                    .ok_or_else(|| Error::Lookup(format!("tag {label:?} not in target tag set")))?;
            }
        }
        Ok(())
    }
}

struct Block<'a> {
    first_line: usize,
    lines: Vec<(usize, Vec<&'a str>)>,
}

fn blocks(text: &str) -> Vec<Block<'_>> {
    let mut out = Vec::new();
    let mut current: Option<Block<'_>> = None;
    for (i, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            if let Some(b) = current.take() {
                out.push(b);
            }
            continue;
        }
        current
            .get_or_insert_with(|| Block {
                first_line: i + 1,
                lines: Vec::new(),
            })
            .lines
            .push((i + 1, fields));
    }
    out.extend(current);
    out
}

fn is_docstart(block: &Block<'_>) -> bool {
    block.lines.iter().any(|(_, f)| f[0] == DOCSTART)
}

/// Parses a tagged column file. `column` selects the NER column (`None`
/// means the last one). Blocks containing `-DOCSTART-` are dropped, raw
/// IOB1 tags are converted to BIO2 and the returned tag set holds every
/// resulting label.
pub fn parse_conll(text: &str, column: Option<usize>) -> Result<(Vec<Sentence>, TagSet)> {
    let mut raw: Vec<(Vec<String>, Vec<String>)> = Vec::new();
    for block in blocks(text) {
        if is_docstart(&block) {
            continue;
        }
        let mut tokens = Vec::with_capacity(block.lines.len());
        let mut tags = Vec::with_capacity(block.lines.len());
        for (line, fields) in &block.lines {
            let col = match column {
                Some(c) => c,
                None if fields.len() >= 2 => fields.len() - 1,
                None => {
                    return Err(Error::parse(*line, "expected a token and a tag column"));
                }
            };
            if fields.len() < col + 1 {
                return Err(Error::parse(
                    *line,
                    format!("expected at least {} columns, found {}", col + 1, fields.len()),
                ));
            }
            let tag = fields[col];
            if parse_tag(tag).is_none() {
                return Err(Error::parse(*line, format!("invalid tag {tag:?}")));
            }
            tokens.push(fields[0].to_string());
            tags.push(tag.to_string());
        }
        raw.push((tokens, convert_iob1_to_bio2(&tags)));
    }
    let tagset = TagSet::new(raw.iter().flat_map(|(_, t)| t.iter()))?;
    let sentences = raw
        .into_iter()
        .enumerate()
        .map(|(id, (tokens, tags))| {
            let ids = tagset.encode(&tags)?;
            Sentence::new(id, tokens, Some(ids))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((sentences, tagset))
}

/// Parses a column file keeping only the first (token) column. Any tag
/// columns are ignored.
pub fn parse_conll_tokens(text: &str) -> Result<Vec<Sentence>> {
    blocks(text)
        .into_iter()
        .filter(|b| !is_docstart(b))
        .enumerate()
        .map(|(id, b)| {
            let tokens = b.lines.iter().map(|(_, f)| f[0].to_string()).collect();
            Sentence::new(id, tokens, None).map_err(|e| Error::parse(b.first_line, e.to_string()))
        })
        .collect()
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn read_conll(path: impl AsRef<Path>, column: Option<usize>) -> Result<(Vec<Sentence>, TagSet)> {
    parse_conll(&read(path.as_ref())?, column)
}

pub fn read_conll_tokens(path: impl AsRef<Path>) -> Result<Vec<Sentence>> {
    parse_conll_tokens(&read(path.as_ref())?)
}

/// Serializes sentences as `token tag` lines (just `token` for untagged
/// sentences) with blank lines between sentences.
pub fn write_conll(sentences: &[Sentence], tagset: &TagSet) -> Result<String> {
    let mut out = String::new();
    for s in sentences {
        match &s.gold_tags {
            Some(tags) => {
                for (tok, &t) in s.tokens.iter().zip(tags) {
                    let label = tagset.label(t).ok_or(Error::Index {
                        what: "tag id",
                        index: t,
                        limit: tagset.len(),
                    })?;
                    out.push_str(tok);
                    out.push(' ');
                    out.push_str(label);
                    out.push('\n');
                }
            }
            None => {
                for tok in &s.tokens {
                    out.push_str(tok);
                    out.push('\n');
                }
            }
        }
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SAMPLE: &str = "-DOCSTART- -X- -X- O\n\nEU NNP B-NP I-ORG\nrejects VBZ B-VP O\nGerman JJ B-NP I-MISC\n\nPeter NNP B-NP I-PER\nBlackburn NNP I-NP I-PER\n";

    #[test]
    fn parses_blocks_and_skips_docstart() {
        let (sents, ts) = parse_conll(SAMPLE, None).unwrap();
        assert_eq!(sents.len(), 2);
        assert_eq!(sents[0].len(), 3);
        assert_eq!(sents[1].len(), 2);
        assert_eq!(sents[0].id, 0);
        assert_eq!(sents[1].id, 1);
        let tags = ts.decode(sents[1].gold_tags.as_ref().unwrap()).unwrap();
        assert_eq!(tags, vec!["B-PER", "I-PER"]);
        let tags = ts.decode(sents[0].gold_tags.as_ref().unwrap()).unwrap();
        assert_eq!(tags, vec!["B-ORG", "O", "B-MISC"]);
    }

    #[test]
    fn explicit_column() {
        let (sents, ts) = parse_conll("a x O\nb y B-LOC\n", Some(2)).unwrap();
        assert_eq!(
            ts.decode(sents[0].gold_tags.as_ref().unwrap()).unwrap(),
            vec!["O", "B-LOC"]
        );
    }

    #[test]
    fn short_line_names_line_number() {
        let err = parse_conll("a O\nb\n", Some(1)).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn bad_tag_rejected() {
        let err = parse_conll("a O\n\nb PERSON\n", None).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }));
    }

    #[test]
    fn token_only_files() {
        let sents = parse_conll_tokens("a\nb\n\nc O\n").unwrap();
        assert_eq!(sents.len(), 2);
        assert!(sents.iter().all(|s| s.gold_tags.is_none()));
        assert_eq!(sents[1].tokens, vec!["c"]);
    }

    #[test]
    fn relabel_between_tag_sets() {
        let (mut sents, ts) = parse_conll("a B-PER\nb O\n", None).unwrap();
        let full = TagSet::from_types(["LOC", "PER"]);
        sents[0].relabel(&ts, &full).unwrap();
        assert_eq!(
            full.decode(sents[0].gold_tags.as_ref().unwrap()).unwrap(),
            vec!["B-PER", "O"]
        );
        let narrow = TagSet::from_types(["LOC"]);
        assert!(sents[0].relabel(&full, &narrow).is_err());
    }

    fn sentence_strategy() -> impl Strategy<Value = Vec<(String, String)>> {
        proptest::collection::vec(
            ("[A-Za-z]{1,6}", prop_oneof![Just("O".to_string()), "[BI]-(PER|LOC)"]),
            1..8,
        )
    }

    proptest! {
        #[test]
        fn write_then_parse_round_trips(corpus in proptest::collection::vec(sentence_strategy(), 1..6)) {
            let text: String = corpus
                .iter()
                .map(|s| {
                    s.iter().map(|(w, t)| format!("{w} {t}\n")).collect::<String>() + "\n"
                })
                .collect();
            let (sents, ts) = parse_conll(&text, None).unwrap();
            let written = write_conll(&sents, &ts).unwrap();
            let (again, ts2) = parse_conll(&written, None).unwrap();
            prop_assert_eq!(&sents, &again);
            prop_assert_eq!(ts, ts2);
        }
    }
}
