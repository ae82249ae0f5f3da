//! Precomputed teacher logits stored as JSON lines.
//!
//! The first line is a header
//! `{"format_version":1,"tagset":[...],"teacher":"...","k":K}`; every
//! following line is `{"sentence_id":N,"token_count":L,"rows":[[...K floats], ...]}`.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Sentence, TagSet};
use crate::error::{Error, Result};
use crate::tagger::ModelBundle;

pub const TEACHER_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherHeader {
    pub format_version: u32,
    pub tagset: Vec<String>,
    pub teacher: String,
    pub k: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    sentence_id: usize,
    token_count: usize,
    rows: Vec<Vec<f32>>,
}

/// Per-token class scores for one sentence, `[len, k]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherLogits {
    pub sentence_id: usize,
    pub num_tags: usize,
    pub rows: Vec<f32>,
}

impl TeacherLogits {
    pub fn len(&self) -> usize {
        self.rows.len() / self.num_tags
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Teacher logits keyed by sentence id.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherStore {
    header: TeacherHeader,
    records: BTreeMap<usize, TeacherLogits>,
}

impl TeacherStore {
    pub fn new(tagset: &TagSet, teacher: impl Into<String>) -> Self {
        Self {
            header: TeacherHeader {
                format_version: TEACHER_FORMAT_VERSION,
                tagset: tagset.labels().to_vec(),
                teacher: teacher.into(),
                k: tagset.len(),
            },
            records: BTreeMap::new(),
        }
    }

    pub fn header(&self) -> &TeacherHeader {
        &self.header
    }

    pub fn num_tags(&self) -> usize {
        self.header.k
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, sentence_id: usize) -> Option<&TeacherLogits> {
        self.records.get(&sentence_id)
    }

    pub fn ids(&self) -> BTreeSet<usize> {
        self.records.keys().copied().collect()
    }

    pub fn insert(&mut self, sentence_id: usize, rows: Vec<f32>) -> Result<()> {
        let k = self.header.k;
        if rows.is_empty() || !rows.len().is_multiple_of(k) {
            return Err(Error::dims("teacher logits", &[k], &[rows.len()]));
        }
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("teacher logits of sentence {sentence_id}")));
        }
        self.records.insert(
            sentence_id,
            TeacherLogits {
                sentence_id,
                num_tags: k,
                rows,
            },
        );
        Ok(())
    }

    /// Fails unless the store's label order equals `tagset` exactly.
    pub fn check_tagset(&self, tagset: &TagSet) -> Result<()> {
        if self.header.tagset != tagset.labels() {
            return Err(Error::Alignment(format!(
                "teacher tag order {:?} differs from student order {:?}",
                self.header.tagset,
                tagset.labels()
            )));
        }
        Ok(())
    }

    /// Ids among `ids` that have no record.
    pub fn missing<'a>(&self, ids: impl IntoIterator<Item = &'a usize>) -> Vec<usize> {
        let mut missing: Vec<usize> = ids
            .into_iter()
            .filter(|id| !self.records.contains_key(id))
            .copied()
            .collect();
        missing.sort_unstable();
        missing.dedup();
        missing
    }

    /// Checks that every sentence has a record with matching length.
    pub fn check_coverage(&self, sentences: &[Sentence]) -> Result<()> {
        let missing = self.missing(sentences.iter().map(|s| &s.id));
        if !missing.is_empty() {
            return Err(Error::Coverage(missing));
        }
        for s in sentences {
            let got = self.records[&s.id].len();
            if got != s.len() {
                return Err(Error::Alignment(format!(
                    "sentence {} has {} tokens but {} teacher rows",
                    s.id,
                    s.len(),
                    got
                )));
            }
        }
        Ok(())
    }

    pub fn parse<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines().enumerate();
        let header: TeacherHeader = loop {
            let Some((i, line)) = lines.next() else {
                return Err(Error::Format("teacher logits file is empty".into()));
            };
            let line = line.map_err(|e| Error::parse(i + 1, e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            break serde_json::from_str(&line).map_err(|e| Error::parse(i + 1, format!("header: {e}")))?;
        };
        if header.format_version != TEACHER_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "teacher logits format {} not supported (expected {TEACHER_FORMAT_VERSION})",
                header.format_version
            )));
        }
        if header.k == 0 || header.k != header.tagset.len() {
            return Err(Error::Format(format!(
                "header k = {} but the tag set has {} labels",
                header.k,
                header.tagset.len()
            )));
        }
        TagSet::new(header.tagset.iter()).map_err(|e| Error::Format(format!("header tag set: {e}")))?;
        let mut store = Self {
            header,
            records: BTreeMap::new(),
        };
        for (i, line) in lines {
            let lineno = i + 1;
            let line = line.map_err(|e| Error::parse(lineno, e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(&line).map_err(|e| Error::parse(lineno, e.to_string()))?;
            if rec.rows.len() != rec.token_count || rec.token_count == 0 {
                return Err(Error::parse(
                    lineno,
                    format!("token_count {} but {} rows", rec.token_count, rec.rows.len()),
                ));
            }
            if let Some(row) = rec.rows.iter().find(|r| r.len() != store.header.k) {
                return Err(Error::parse(
                    lineno,
                    format!("row of width {} (expected {})", row.len(), store.header.k),
                ));
            }
            if store.records.contains_key(&rec.sentence_id) {
                return Err(Error::parse(
                    lineno,
                    format!("duplicate sentence_id {}", rec.sentence_id),
                ));
            }
            store
                .insert(rec.sentence_id, rec.rows.concat())
                .map_err(|e| Error::parse(lineno, e.to_string()))?;
        }
        Ok(store)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::parse(std::io::BufReader::new(file))
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let io = |e: std::io::Error| Error::io("<teacher logits>", e);
        let json = |e: serde_json::Error| Error::Format(e.to_string());
        serde_json::to_writer(&mut out, &self.header).map_err(json)?;
        out.write_all(b"\n").map_err(io)?;
        for t in self.records.values() {
            let rec = Record {
                sentence_id: t.sentence_id,
                token_count: t.len(),
                rows: t.rows.chunks(t.num_tags).map(<[f32]>::to_vec).collect(),
            };
            serde_json::to_writer(&mut out, &rec).map_err(json)?;
            out.write_all(b"\n").map_err(io)?;
        }
        Ok(())
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Exports a trained tagger's emission logits for `sentences`.
    pub fn from_model(model: &ModelBundle, sentences: &[Sentence], batch_size: usize) -> Result<Self> {
        let desc = format!(
            "tagger classifier={} lstm_hidden={} params={}",
            model.config.classifier,
            model.config.lstm_hidden,
            model.params.count_params()
        );
        let mut store = Self::new(&model.tagset, desc);
        for (s, rows) in sentences.iter().zip(model.logits(sentences, batch_size)?) {
            store.insert(s.id, rows)?;
        }
        Ok(store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tagset() -> TagSet {
        TagSet::from_types(["PER"])
    }

    #[test]
    fn round_trip_preserves_bits() {
        let mut s = TeacherStore::new(&tagset(), "unit");
        s.insert(4, vec![0.1, -2.5e-8, 3.0, 1.0 / 3.0, f32::MAX, f32::MIN_POSITIVE])
            .unwrap();
        s.insert(1, vec![7.25, 0.0, -0.0]).unwrap();
        let mut buf = Vec::new();
        s.write_to(&mut buf).unwrap();
        let back = TeacherStore::parse(buf.as_slice()).unwrap();
        assert_eq!(back, s);
        let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.get(4).unwrap().rows), bits(&s.get(4).unwrap().rows));
    }

    #[test]
    fn header_and_row_errors() {
        let head = r#"{"format_version":1,"tagset":["O","B-PER","I-PER"],"teacher":"t","k":3}"#;
        let bad_k = r#"{"format_version":1,"tagset":["O","B-PER","I-PER"],"teacher":"t","k":2}"#;
        assert!(matches!(TeacherStore::parse(bad_k.as_bytes()), Err(Error::Format(_))));
        let text = format!("{head}\n{{\"sentence_id\":0,\"token_count\":2,\"rows\":[[1,2,3]]}}\n");
        assert!(matches!(
            TeacherStore::parse(text.as_bytes()),
            Err(Error::Parse { line: 2, .. })
        ));
        let text = format!("{head}\n{{\"sentence_id\":0,\"token_count\":1,\"rows\":[[1,2]]}}\n");
        assert!(matches!(
            TeacherStore::parse(text.as_bytes()),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn coverage_and_alignment() {
        let mut s = TeacherStore::new(&tagset(), "unit");
        s.insert(0, vec![0.0; 6]).unwrap();
        let a = Sentence::new(0, vec!["a".into(), "b".into()], None).unwrap();
        let b = Sentence::new(3, vec!["c".into()], None).unwrap();
        assert!(s.check_coverage(std::slice::from_ref(&a)).is_ok());
        match s.check_coverage(&[a, b]) {
            Err(Error::Coverage(ids)) => assert_eq!(ids, vec![3]),
            other => panic!("{other:?}"),
        }
        let swapped = r#"{"format_version":1,"tagset":["O","I-PER","B-PER"],"teacher":"t","k":3}"#;
        let swapped = TeacherStore::parse(swapped.as_bytes()).unwrap();
        assert!(matches!(swapped.check_tagset(&tagset()), Err(Error::Alignment(_))));
        assert!(s.check_tagset(&TagSet::from_types(["LOC"])).is_err());
        assert!(s.check_tagset(&tagset()).is_ok());
    }
}
