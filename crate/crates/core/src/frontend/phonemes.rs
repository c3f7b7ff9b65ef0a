use std::collections::HashMap;
use std::ops::Range;
use std::sync::OnceLock;

use crate::error::{Error, Result};

const TABLE_SOURCE: &str = include_str!("../../data/phonemes.txt");

/// The shipped phoneme inventory and grapheme rules.
#[derive(Debug)]
pub struct PhonemeTable {
    symbols: Vec<String>,
    ids: HashMap<String, usize>,
    rules: HashMap<String, Vec<usize>>,
    longest_rule: usize,
}

impl PhonemeTable {
    pub fn builtin() -> &'static PhonemeTable {
        static TABLE: OnceLock<PhonemeTable> = OnceLock::new();
        TABLE.get_or_init(|| PhonemeTable::parse(TABLE_SOURCE).expect("shipped phoneme table is valid"))
    }

    pub fn source() -> &'static str {
        TABLE_SOURCE
    }

    pub fn parse(src: &str) -> Result<Self> {
        let mut section = "";
        let mut symbols = Vec::new();
        let mut raw_rules = Vec::new();
        for line in src.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if line.starts_with('[') {
                section = line;
                continue;
            }
            match section {
                "[symbols]" => symbols.push(line.to_string()),
                "[rules]" => {
                    let mut parts = line.split_whitespace();
                    let grapheme = parts.next().unwrap().to_string();
                    raw_rules.push((grapheme, parts.map(str::to_string).collect::<Vec<_>>()));
                }
                _ => return Err(Error::Phonemize(format!("table line outside a section: {line}"))),
            }
        }
        let ids: HashMap<String, usize> = symbols.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        let mut rules = HashMap::new();
        for (grapheme, syms) in raw_rules {
            let mapped = syms
                .iter()
                .map(|s| ids.get(s).copied().ok_or_else(|| Error::Phonemize(format!("rule uses unknown symbol {s}"))))
                .collect::<Result<Vec<_>>>()?;
            rules.insert(grapheme, mapped);
        }
        let longest_rule = rules.keys().map(String::len).max().unwrap_or(1);
        Ok(Self {
            symbols,
            ids,
            rules,
            longest_rule,
        })
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbol(&self, id: usize) -> Option<&str> {
        self.symbols.get(id).map(String::as_str)
    }

    pub fn id(&self, symbol: &str) -> Option<usize> {
        self.ids.get(symbol).copied()
    }

    pub fn rule(&self, grapheme: &str) -> Option<&[usize]> {
        self.rules.get(grapheme).map(Vec::as_slice)
    }

    /// Greedy longest-match transcription of a lowercase ASCII word.
    fn transcribe(&self, word: &str) -> Option<Vec<usize>> {
        let bytes = word.as_bytes();
        let mut out = Vec::new();
        let mut i = 0;
        while i < bytes.len() {
            let max = self.longest_rule.min(bytes.len() - i);
            let hit = (1..=max).rev().find_map(|len| {
                let g = &word[i..i + len];
                self.rules.get(g).map(|ids| (len, ids))
            });
            let (len, ids) = hit?;
            out.extend_from_slice(ids);
            i += len;
        }
        Some(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordSpan {
    pub word: String,
    pub tokens: Range<usize>,
}

/// Phoneme ids of an utterance with the word each token came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhonemeSequence {
    pub tokens: Vec<usize>,
    pub words: Vec<WordSpan>,
}

impl PhonemeSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Word index owning each token.
    pub fn token_words(&self) -> Vec<usize> {
        let mut out = vec![0; self.tokens.len()];
        for (w, span) in self.words.iter().enumerate() {
            out[span.tokens.clone()].iter_mut().for_each(|v| *v = w);
        }
        out
    }

    /// The first `n_words` words and their tokens.
    pub fn truncate_words(&self, n_words: usize) -> PhonemeSequence {
        let words: Vec<WordSpan> = self.words[..n_words].to_vec();
        let end = words.last().map_or(0, |w| w.tokens.end);
        PhonemeSequence {
            tokens: self.tokens[..end].to_vec(),
            words,
        }
    }

    pub fn validate(&self, vocab: usize) -> Result<()> {
        if self.tokens.is_empty() {
            return Err(Error::Phonemize("empty phoneme sequence".into()));
        }
        if let Some(bad) = self.tokens.iter().find(|&&t| t >= vocab) {
            return Err(Error::Phonemize(format!("token {bad} outside vocabulary of {vocab}")));
        }
        let mut next = 0;
        for w in &self.words {
            if w.tokens.start != next || w.tokens.is_empty() {
                return Err(Error::Phonemize(format!("word spans do not partition tokens at {}", w.word)));
            }
            next = w.tokens.end;
        }
        if next != self.tokens.len() {
            return Err(Error::Phonemize("word spans do not cover every token".into()));
        }
        Ok(())
    }
}

/// Lowercases `text`, splits it into words and transcribes each with the
/// shipped table. Punctuation separates or is dropped; digits and non-ASCII
/// characters make a word unknown.
pub fn phonemize(text: &str) -> Result<PhonemeSequence> {
    phonemize_with(PhonemeTable::builtin(), text)
}

pub fn phonemize_with(table: &PhonemeTable, text: &str) -> Result<PhonemeSequence> {
    let mut tokens = Vec::new();
    let mut words = Vec::new();
    let mut unknown = Vec::new();
    for raw in text.split_whitespace() {
        let lowered = raw.to_ascii_lowercase();
        if lowered.chars().any(|c| !c.is_ascii() || c.is_ascii_digit() || c.is_ascii_control()) {
            unknown.push(raw.to_string());
            continue;
        }
        for piece in lowered.split(|c: char| c.is_ascii_punctuation() && c != '\'') {
            let word: String = piece.chars().filter(|c| c.is_ascii_lowercase()).collect();
            if word.is_empty() {
                continue;
            }
            match table.transcribe(&word) {
                Some(ids) => {
                    let start = tokens.len();
                    tokens.extend(ids);
                    words.push(WordSpan {
                        word,
                        tokens: start..tokens.len(),
                    });
                }
                None => unknown.push(raw.to_string()),
            }
        }
    }
    if !unknown.is_empty() {
        return Err(Error::UnknownWords(unknown));
    }
    if tokens.is_empty() {
        return Err(Error::Phonemize("no phonemes after normalization".into()));
    }
    Ok(PhonemeSequence { tokens, words })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_has_64_symbols_and_every_letter() {
        let t = PhonemeTable::builtin();
        assert_eq!(t.len(), 64);
        for c in 'a'..='z' {
            assert!(t.rule(&c.to_string()).is_some(), "missing rule for {c}");
        }
    }

    #[test]
    fn single_letter_follows_table() {
        let t = PhonemeTable::builtin();
        let seq = phonemize("a").unwrap();
        assert_eq!(seq.tokens, t.rule("a").unwrap());
        assert_eq!(seq.tokens.len(), 1);
    }

    #[test]
    fn empty_and_punctuation_only_fail() {
        assert!(phonemize("").is_err());
        assert!(phonemize("  ?! ...").is_err());
    }

    #[test]
    fn digraphs_and_words() {
        let t = PhonemeTable::builtin();
        let seq = phonemize("The ship, sings!").unwrap();
        assert_eq!(seq.words.len(), 3);
        assert_eq!(seq.tokens[0], t.id("TH").unwrap());
        assert_eq!(&seq.tokens[seq.words[1].tokens.clone()], &[t.id("SH").unwrap(), t.id("IH").unwrap(), t.id("P").unwrap()]);
        seq.validate(64).unwrap();
        assert_eq!(phonemize("The ship, sings!").unwrap(), seq);
    }

    #[test]
    fn unknown_words_are_listed() {
        match phonemize("hello w0rld caf\u{e9}") {
            Err(Error::UnknownWords(w)) => assert_eq!(w, vec!["w0rld".to_string(), "caf\u{e9}".to_string()]),
            other => panic!("{other:?}"),
        }
    }
}
