use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BOS: u32 = 0;
pub const EOS: u32 = 1;
pub const BOF: u32 = 2;
pub const EOF: u32 = 3;
pub const PAD: u32 = 4;
pub const N_SPECIALS: u32 = 5;

pub const SPECIAL_NAMES: [&str; 5] = ["<bos>", "<eos>", "<bof>", "<eof>", "<pad>"];

const WORDS: [&str; 22] = [
    "left", "right", "up", "down", "stay", "jump", "flash", "sprite", "starts", "in", "the", "top", "bottom", "red", "green", "blue", "yellow", "moves", "and",
    "then", "turns", "a",
];

const PUNCT: &str = " ().,:;!?'-=\"/";

/// Word/character hybrid vocabulary.
///
/// IDs 0–4 are reserved for the specials; plain symbols follow in list order.
/// Encoding is greedy longest-match over plain symbols, so every string made
/// of covered characters round-trips and specials are never produced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    symbols: Vec<String>,
    #[serde(skip)]
    by_length: Vec<u32>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    symbols: Vec<String>,
    specials: std::collections::BTreeMap<String, u32>,
}

impl Default for Vocab {
    fn default() -> Self {
        let mut symbols: Vec<String> = WORDS.iter().map(|w| w.to_string()).collect();
        let mut push = |c: char| {
            let s = c.to_string();
            if !symbols.contains(&s) {
                symbols.push(s);
            }
        };
        PUNCT.chars().for_each(&mut push);
        ('a'..='z').for_each(&mut push);
        ('A'..='Z').for_each(&mut push);
        ('0'..='9').for_each(&mut push);
        Vocab::from_symbols(symbols).expect("built-in vocabulary is valid")
    }
}

impl Vocab {
    pub fn from_symbols(symbols: Vec<String>) -> Result<Vocab> {
        if symbols.iter().any(|s| s.is_empty()) {
            return Err(Error::Config("vocabulary symbols must be non-empty".into()));
        }
        if symbols.len() + N_SPECIALS as usize > 128 {
            return Err(Error::Config("vocabulary exceeds 128 entries".into()));
        }
        let mut by_length: Vec<u32> = (0..symbols.len() as u32).collect();
        by_length.sort_by_key(|&i| std::cmp::Reverse(symbols[i as usize].len()));
        Ok(Vocab { symbols, by_length })
    }

    /// Total number of IDs including specials.
    pub fn size(&self) -> usize {
        self.symbols.len() + N_SPECIALS as usize
    }

    pub fn is_special(id: u32) -> bool {
        id < N_SPECIALS
    }

    pub fn symbol(&self, id: u32) -> &str {
        if id < N_SPECIALS {
            SPECIAL_NAMES[id as usize]
        } else {
            &self.symbols[(id - N_SPECIALS) as usize]
        }
    }

    pub fn encode(&self, s: &str) -> Result<Vec<u32>> {
        let mut out = Vec::new();
        let mut pos = 0;
        while pos < s.len() {
            let rest = &s[pos..];
            let hit = self.by_length.iter().find(|&&i| rest.starts_with(self.symbols[i as usize].as_str()));
            match hit {
                Some(&i) => {
                    out.push(i + N_SPECIALS);
                    pos += self.symbols[i as usize].len();
                }
                None => {
                    let ch = rest.chars().next().expect("non-empty remainder");
                    let mut end = pos + ch.len_utf8();
                    // extend the span over the whole uncovered run
                    while end < s.len() {
                        let r = &s[end..];
                        if self.by_length.iter().any(|&i| r.starts_with(self.symbols[i as usize].as_str())) {
                            break;
                        }
                        end += r.chars().next().map_or(1, char::len_utf8);
                    }
                    return Err(Error::Tokenize {
                        span: s[pos..end].to_string(),
                        offset: pos,
                    });
                }
            }
        }
        Ok(out)
    }

    /// Concatenate symbols; specials render as their `<name>` form.
    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter().map(|&i| self.symbol(i)).collect()
    }

    /// Decode only plain symbols, dropping specials.
    pub fn decode_plain(&self, ids: &[u32]) -> String {
        ids.iter().filter(|&&i| !Vocab::is_special(i)).map(|&i| self.symbol(i)).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = VocabFile {
            symbols: self.symbols.clone(),
            specials: SPECIAL_NAMES.iter().enumerate().map(|(i, n)| (n.to_string(), i as u32)).collect(),
        };
        fs::write(path, serde_json::to_vec_pretty(&file).expect("vocab serializes")).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Vocab> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let file: VocabFile = serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))?;
        for (i, name) in SPECIAL_NAMES.iter().enumerate() {
            if file.specials.get(*name) != Some(&(i as u32)) {
                return Err(Error::format(path, format!("special {name} must have id {i}")));
            }
        }
        Vocab::from_symbols(file.symbols)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toyworld::ActionString;
    use proptest::prelude::*;

    #[test]
    fn empty_and_actions_roundtrip() {
        let v = Vocab::default();
        assert!(v.size() <= 128);
        assert_eq!(v.encode("").unwrap(), Vec::<u32>::new());
        for a in ActionString::all() {
            let s = a.to_string();
            let ids = v.encode(&s).unwrap();
            assert_eq!(v.decode(&ids), s);
        }
        assert_eq!(v.encode("(right).").unwrap().len(), 4);
    }

    #[test]
    fn prompt_templates_roundtrip() {
        let v = Vocab::default();
        for color in crate::toyworld::COLOR_NAMES {
            for q in ["top left", "top right", "bottom left", "bottom right"] {
                let s = format!("a {color} sprite starts in the {q}.");
                assert_eq!(v.decode(&v.encode(&s).unwrap()), s);
            }
        }
    }

    #[test]
    fn uncovered_span_is_reported() {
        let v = Vocab::default();
        match v.encode("go ~~ now") {
            Err(Error::Tokenize { span, offset }) => {
                assert_eq!(span, "~~");
                assert_eq!(offset, 3);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.json");
        let v = Vocab::default();
        v.save(&p).unwrap();
        assert_eq!(Vocab::load(&p).unwrap(), v);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]
        #[test]
        fn plain_text_never_yields_specials(s in "[a-zA-Z0-9 ().,:;!?'=/-]{0,40}") {
            let v = Vocab::default();
            let ids = v.encode(&s).unwrap();
            prop_assert!(ids.iter().all(|&i| !Vocab::is_special(i)));
            prop_assert_eq!(v.decode(&ids), s);
        }
    }
}
