//! BIO2 tag sets and the IOB1 to BIO2 conversion.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub const OUTSIDE: &str = "O";

/// Tag ids for one sentence.
pub type TagSequence = Vec<usize>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TagKind<'a> {
    Outside,
    Begin(&'a str),
    Inside(&'a str),
}

/// Splits a tag string into its prefix and entity type. Returns `None` for
/// anything other than `O`, `B-X` or `I-X` with a non-empty `X`.
pub fn parse_tag(tag: &str) -> Option<TagKind<'_>> {
    if tag == OUTSIDE {
        return Some(TagKind::Outside);
    }
    let (prefix, ty) = tag.split_once('-')?;
    if ty.is_empty() {
        return None;
    }
    match prefix {
        "B" => Some(TagKind::Begin(ty)),
        "I" => Some(TagKind::Inside(ty)),
        _ => None,
    }
}

/// Rewrites IOB1 tags as BIO2: an `I-X` that starts a sentence, follows
/// `O`, or follows a tag of another type becomes `B-X`. Tags that do not
/// parse are passed through unchanged.
pub fn convert_iob1_to_bio2<S: AsRef<str>>(tags: &[S]) -> Vec<String> {
    let mut out = Vec::with_capacity(tags.len());
    let mut prev_type: Option<&str> = None;
    for tag in tags {
        let tag = tag.as_ref();
        match parse_tag(tag) {
            Some(TagKind::Inside(ty)) if prev_type != Some(ty) => out.push(format!("B-{ty}")),
            _ => out.push(tag.to_string()),
        }
        prev_type = match parse_tag(tag) {
            Some(TagKind::Begin(ty)) | Some(TagKind::Inside(ty)) => Some(ty),
            _ => None,
        };
    }
    out
}

/// Ordered label space: `O` first, remaining labels sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagSet {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl TagSet {
    /// Builds a tag set from arbitrary labels. `O` is always included and a
    /// `B-X` is added for every `I-X`.
    pub fn new<I, S>(labels: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut rest = BTreeSet::new();
        for l in labels {
            let l = l.as_ref();
            match parse_tag(l) {
                Some(TagKind::Outside) => {}
                Some(TagKind::Begin(_)) => {
                    rest.insert(l.to_string());
                }
                Some(TagKind::Inside(ty)) => {
                    rest.insert(l.to_string());
                    rest.insert(format!("B-{ty}"));
                }
                None => return Err(Error::Format(format!("invalid tag {l:?}"))),
            }
        }
        let labels: Vec<String> = std::iter::once(OUTSIDE.to_string()).chain(rest).collect();
        Ok(Self::from_ordered(labels))
    }

    /// `O` plus `B-X`/`I-X` for every type.
    pub fn from_types<I, S>(types: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let labels: Vec<String> = types
            .into_iter()
            .flat_map(|t| {
                let t = t.as_ref().to_string();
                [format!("B-{t}"), format!("I-{t}")]
            })
            .collect();
        Self::new(labels).expect("generated labels are well-formed")
    }

    fn from_ordered(labels: Vec<String>) -> Self {
        let index = labels.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect();
        Self { labels, index }
    }

    /// The same types with both `B-` and `I-` labels present.
    pub fn completed(&self) -> Self {
        Self::from_types(self.entity_types())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn id(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn label(&self, id: usize) -> Option<&str> {
        self.labels.get(id).map(String::as_str)
    }

    pub fn outside_id(&self) -> usize {
        0
    }

    /// Sorted distinct entity types.
    pub fn entity_types(&self) -> Vec<String> {
        let types: BTreeSet<String> = self
            .labels
            .iter()
            .filter_map(|l| match parse_tag(l) {
                Some(TagKind::Begin(t)) | Some(TagKind::Inside(t)) => Some(t.to_string()),
                _ => None,
            })
            .collect();
        types.into_iter().collect()
    }

    /// Maps tag strings to ids.
    pub fn encode<S: AsRef<str>>(&self, tags: &[S]) -> Result<TagSequence> {
        tags.iter()
            .map(|t| {
                let t = t.as_ref();
                self.id(t)
                    .ok_or_else(|| Error::Lookup(format!("tag {t:?} not in tag set")))
            })
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Result<Vec<&str>> {
        ids.iter()
            .map(|&i| {
                self.label(i).ok_or(Error::Index {
                    what: "tag id",
                    index: i,
                    limit: self.len(),
                })
            })
            .collect()
    }
}

impl Serialize for TagSet {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.labels.serialize(s)
    }
}

impl<'de> Deserialize<'de> for TagSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let labels = Vec::<String>::deserialize(d)?;
        let set = TagSet::new(&labels).map_err(serde::de::Error::custom)?;
        if set.labels != labels {
            return Err(serde::de::Error::custom(
                "tag set labels must be O first followed by sorted labels",
            ));
        }
        Ok(set)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn iob1_conversion_examples() {
        assert_eq!(convert_iob1_to_bio2(&["I-PER", "I-PER"]), v(&["B-PER", "I-PER"]));
        assert_eq!(convert_iob1_to_bio2(&["B-PER", "I-PER"]), v(&["B-PER", "I-PER"]));
        assert_eq!(convert_iob1_to_bio2(&["O", "O", "O"]), v(&["O", "O", "O"]));
        assert_eq!(
            convert_iob1_to_bio2(&["I-ORG", "I-LOC", "O", "I-LOC", "B-LOC"]),
            v(&["B-ORG", "B-LOC", "O", "B-LOC", "B-LOC"])
        );
    }

    #[test]
    fn tagset_order_and_completion() {
        let ts = TagSet::new(["I-PER", "O", "B-LOC"]).unwrap();
        assert_eq!(ts.labels(), &v(&["O", "B-LOC", "B-PER", "I-PER"])[..]);
        assert_eq!(ts.entity_types(), v(&["LOC", "PER"]));
        assert_eq!(ts.completed().len(), 5);
        assert!(TagSet::new(["X-PER"]).is_err());
        assert!(TagSet::new(["B-"]).is_err());
    }

    #[test]
    fn tagset_serde_round_trip() {
        let ts = TagSet::from_types(["PER", "LOC"]);
        let s = serde_json::to_string(&ts).unwrap();
        assert_eq!(s, r#"["O","B-LOC","B-PER","I-LOC","I-PER"]"#);
        let back: TagSet = serde_json::from_str(&s).unwrap();
        assert_eq!(back, ts);
        assert!(serde_json::from_str::<TagSet>(r#"["B-PER","O"]"#).is_err());
    }

    fn tag_strategy() -> impl Strategy<Value = String> {
        prop_oneof![Just("O".to_string()), "[BI]-(PER|LOC|ORG)".prop_map(|s| s),]
    }

    proptest! {
        #[test]
        fn conversion_is_idempotent(tags in proptest::collection::vec(tag_strategy(), 0..20)) {
            let once = convert_iob1_to_bio2(&tags);
            let twice = convert_iob1_to_bio2(&once);
            prop_assert_eq!(&once, &twice);
            prop_assert_eq!(once.len(), tags.len());
        }
    }
}
