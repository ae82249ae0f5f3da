//! Synthetic pattern-entity corpus.
//!
//! Sentences are filled from templates whose slots draw entity names from
//! fixed per-type pools. Names are built from one shared syllable
//! inventory, so their spelling carries little type information, and a
//! share of the slots accept any type with neutral context. Recognising
//! those requires having seen the name, which makes accuracy grow with the
//! amount of (pseudo-)labeled text.

use std::collections::HashSet;

use super::conll::Sentence;
use super::tags::TagSet;
use crate::rng::Rng;

const SYLLABLES: &[&str] = &[
    "ka", "lo", "mi", "ren", "tor", "vas", "bel", "dru", "fen", "gar", "hol", "jun", "kes", "lam", "mor", "nix", "pel",
    "ras", "sul", "tam", "vex", "wil", "zor", "an", "bri", "cor", "dal", "el", "fra", "gon", "is", "ket", "lun", "mar",
    "nor", "os", "pra", "qui", "sto", "ul",
];
const ORG_SUFFIX: &[&str] = &["Corp", "Group", "Holdings", "Bank", "United"];
const DAYS: &[&str] = &["Monday", "Tuesday", "Wednesday", "Thursday", "Friday"];
pub const ENTITY_TYPES: [&str; 4] = ["LOC", "MISC", "ORG", "PER"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Per,
    Loc,
    Org,
    Misc,
    Any,
}

enum Piece {
    Word(&'static str),
    Day,
    Number,
    Entity(Slot),
}

fn template(spec: &'static str) -> Vec<Piece> {
    spec.split(' ')
        .map(|w| match w {
            "{PER}" => Piece::Entity(Slot::Per),
            "{LOC}" => Piece::Entity(Slot::Loc),
            "{ORG}" => Piece::Entity(Slot::Org),
            "{MISC}" => Piece::Entity(Slot::Misc),
            "{ANY}" => Piece::Entity(Slot::Any),
            "{DAY}" => Piece::Day,
            "{NUM}" => Piece::Number,
            _ => Piece::Word(w),
        })
        .collect()
}

const TEMPLATES: &[&str] = &[
    "{PER} said on {DAY} that {ORG} would expand in {LOC} .",
    "{ORG} shares rose {NUM} percent in {LOC} trading .",
    "{PER} visited {LOC} last week .",
    "the {MISC} delegation met {PER} on {DAY} .",
    "{ANY} beat {ANY} {NUM} - {NUM} .",
    "officials from {ORG} and {ORG} signed a deal .",
    "{PER} joined {ORG} on {DAY} .",
    "{ANY} was mentioned in the report .",
    "reports from {LOC} said {PER} and {PER} were safe .",
    "{MISC} voters backed {PER} .",
    "{ANY} and {ANY} were also named .",
    "spokesman {PER} declined to comment .",
    "the {ORG} office in {LOC} closed .",
    "In {LOC} , {PER} spoke to {MISC} reporters .",
    "{ANY} , {ANY} and {ANY} followed .",
    "The talks with {ANY} ended on {DAY} .",
];

/// Entity-name pools plus the template sampler.
#[derive(Debug, Clone)]
pub struct SyntheticNer {
    first_names: Vec<String>,
    last_names: Vec<String>,
    locations: Vec<String>,
    orgs: Vec<String>,
    misc: Vec<String>,
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().collect::<String>() + c.as_str(),
        None => String::new(),
    }
}

impl SyntheticNer {
    /// Builds `pool_size` distinct names per type.
    pub fn new(pool_size: usize, seed: u64) -> Self {
        let mut rng = Rng::new(seed);
        let mut used = HashSet::new();
        let mut pool = |rng: &mut Rng, suffix: &str| -> Vec<String> {
            let mut out = Vec::with_capacity(pool_size);
            while out.len() < pool_size {
                let n = 2 + rng.below(2);
                let stem: String = (0..n).map(|_| *rng.choose(SYLLABLES)).collect();
                let name = capitalize(&(stem + suffix));
                if used.insert(name.clone()) {
                    out.push(name);
                }
            }
            out
        };
        let first_names = pool(&mut rng, "");
        let last_names = pool(&mut rng, "");
        let locations = pool(&mut rng, "");
        let orgs = pool(&mut rng, "");
        let misc = pool(&mut rng, "ian");
        Self {
            first_names,
            last_names,
            locations,
            orgs,
            misc,
        }
    }

    pub fn tagset() -> TagSet {
        TagSet::from_types(ENTITY_TYPES)
    }

    fn entity(&self, slot: Slot, rng: &mut Rng) -> (&'static str, Vec<String>) {
        let slot = match slot {
            Slot::Any => [Slot::Per, Slot::Loc, Slot::Org, Slot::Misc][rng.below(4)],
            s => s,
        };
        match slot {
            Slot::Per => {
                let last = rng.choose(&self.last_names).clone();
                if rng.uniform() < 0.5 {
                    ("PER", vec![rng.choose(&self.first_names).clone(), last])
                } else {
                    ("PER", vec![last])
                }
            }
            Slot::Loc => ("LOC", vec![rng.choose(&self.locations).clone()]),
            Slot::Org => {
                let name = rng.choose(&self.orgs).clone();
                if rng.uniform() < 0.4 {
                    ("ORG", vec![name, rng.choose(ORG_SUFFIX).to_string()])
                } else {
                    ("ORG", vec![name])
                }
            }
            Slot::Misc | Slot::Any => ("MISC", vec![rng.choose(&self.misc).clone()]),
        }
    }

    /// `n` tagged sentences with ids `0..n`.
    pub fn sentences(&self, n: usize, seed: u64) -> Vec<Sentence> {
        let tagset = Self::tagset();
        let templates: Vec<Vec<Piece>> = TEMPLATES.iter().map(|t| template(t)).collect();
        let mut rng = Rng::new(seed);
        (0..n)
            .map(|id| {
                let t = rng.choose(&templates);
                let mut tokens = Vec::new();
                let mut tags = Vec::new();
                for piece in t {
                    match piece {
                        Piece::Word(w) => {
                            tokens.push(w.to_string());
                            tags.push("O".to_string());
                        }
                        Piece::Day => {
                            tokens.push(rng.choose(DAYS).to_string());
                            tags.push("O".to_string());
                        }
                        Piece::Number => {
                            tokens.push((rng.below(30) + 1).to_string());
                            tags.push("O".to_string());
                        }
                        Piece::Entity(slot) => {
                            let (ty, words) = self.entity(*slot, &mut rng);
                            for (i, w) in words.into_iter().enumerate() {
                                tokens.push(w);
                                tags.push(format!("{}-{ty}", if i == 0 { "B" } else { "I" }));
                            }
                        }
                    }
                }
                let ids = tagset.encode(&tags).expect("synthetic tags are in the tag set");
                Sentence::new(id, tokens, Some(ids)).expect("templates are non-empty")
            })
            .collect()
    }
}
