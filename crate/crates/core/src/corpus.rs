//! Annotated parallel corpus: data model, streaming JSON-lines reader and
//! the stopword/punctuation predicate used by feature extraction.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sense symbol used when a source token carries no sense annotation.
pub const NO_SENSE: &str = "∅";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    #[serde(rename = "i")]
    pub index: usize,
    #[serde(rename = "form", default)]
    pub surface: String,
    pub lemma: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub upos: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deprel: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sense: Option<String>,
}

impl Token {
    pub fn new(index: usize, surface: &str, lemma: &str, upos: &str) -> Self {
        Token {
            index,
            surface: surface.to_string(),
            lemma: lemma.to_string(),
            upos: upos.to_string(),
            head: None,
            deprel: None,
            sense: None,
        }
    }

    pub fn with_head(mut self, head: usize) -> Self {
        self.head = Some(head);
        self
    }

    pub fn with_sense(mut self, sense: &str) -> Self {
        self.sense = Some(sense.to_string());
        self
    }

    /// The sense symbol used for counting; unannotated tokens map to [`NO_SENSE`].
    pub fn sense_symbol(&self) -> &str {
        self.sense.as_deref().unwrap_or(NO_SENSE)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentencePair {
    pub id: String,
    pub src: Vec<Token>,
    pub tgt: Vec<Token>,
    pub align: Vec<(usize, usize)>,
}

impl SentencePair {
    /// Checks index, head and alignment invariants.
    pub fn validate(&self) -> Result<()> {
        let invalid = |reason: String| Error::InvalidSentence {
            id: self.id.clone(),
            reason,
        };
        for (side, tokens) in [("src", &self.src), ("tgt", &self.tgt)] {
            for (pos, tok) in tokens.iter().enumerate() {
                if tok.index != pos {
                    return Err(invalid(format!(
                        "{side} token at position {pos} has index {}",
                        tok.index
                    )));
                }
                if tok.lemma.is_empty() {
                    return Err(invalid(format!("{side} token {pos} has an empty lemma")));
                }
            }
        }
        for tok in &self.src {
            if tok.upos.is_empty() {
                return Err(invalid(format!("src token {} has an empty upos", tok.index)));
            }
            if let Some(h) = tok.head {
                if h >= self.src.len() || h == tok.index {
                    return Err(invalid(format!("src token {} has invalid head {h}", tok.index)));
                }
            }
        }
        let mut seen = HashSet::with_capacity(self.align.len());
        for &(s, t) in &self.align {
            if s >= self.src.len() || t >= self.tgt.len() {
                return Err(Error::AlignmentOutOfRange {
                    id: self.id.clone(),
                    src: s,
                    tgt: t,
                });
            }
            if !seen.insert((s, t)) {
                return Err(invalid(format!("duplicate alignment ({s}, {t})")));
            }
        }
        Ok(())
    }

    /// Target tokens aligned to source position `src_index`.
    pub fn aligned_targets(&self, src_index: usize) -> impl Iterator<Item = &Token> + '_ {
        self.align
            .iter()
            .filter(move |(s, _)| *s == src_index)
            .map(move |&(_, t)| &self.tgt[t])
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("sentence pairs always serialize")
    }
}

/// Parses and validates a single corpus line. `line_no` is 1-based.
pub fn parse_line(line: &str, line_no: usize) -> Result<SentencePair> {
    let pair: SentencePair = serde_json::from_str(line).map_err(|e| Error::Parse {
        line: line_no,
        reason: e.to_string(),
    })?;
    pair.validate()?;
    Ok(pair)
}

/// Streaming reader over a JSON-lines corpus. Blank lines are skipped.
pub struct CorpusReader<R> {
    lines: std::io::Lines<R>,
    line_no: usize,
}

impl<R: BufRead> CorpusReader<R> {
    pub fn new(reader: R) -> Self {
        CorpusReader {
            lines: reader.lines(),
            line_no: 0,
        }
    }
}

impl<R: BufRead> Iterator for CorpusReader<R> {
    type Item = Result<SentencePair>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => return Some(Err(e.into())),
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            return Some(parse_line(&line, self.line_no));
        }
    }
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<CorpusReader<BufReader<File>>> {
    let file = File::open(path)?;
    Ok(CorpusReader::new(BufReader::new(file)))
}

/// Loads the whole corpus into memory, failing on the first bad line.
pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<SentencePair>> {
    load_corpus(path)?.collect()
}

pub fn write_corpus<'a, W: Write>(mut out: W, pairs: impl IntoIterator<Item = &'a SentencePair>) -> Result<()> {
    for p in pairs {
        writeln!(out, "{}", p.to_line())?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusConfig {
    pub stopwords: HashSet<String>,
    pub punct_upos: HashSet<String>,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            stopwords: HashSet::new(),
            punct_upos: ["PUNCT", "SYM"].iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl CorpusConfig {
    pub fn with_stopwords<I, S>(mut self, words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        self.stopwords = words
            .into_iter()
            .map(|w| w.as_ref().trim().to_lowercase())
            .filter(|w| !w.is_empty())
            .collect();
        self
    }

    pub fn is_excluded(&self, token: &Token) -> bool {
        is_excluded(token, self)
    }
}

/// True when the token is punctuation or its lowercased lemma is a stopword.
pub fn is_excluded(token: &Token, config: &CorpusConfig) -> bool {
    config.punct_upos.contains(&token.upos) || config.stopwords.contains(&token.lemma.to_lowercase())
}

/// Reads a stopword file: one lemma per line, `#` comments allowed.
pub fn read_stopwords(path: impl AsRef<Path>) -> Result<HashSet<String>> {
    let reader = BufReader::new(File::open(path)?);
    let mut words = HashSet::new();
    for line in reader.lines() {
        let line = line?;
        let w = line.trim();
        if w.is_empty() || w.starts_with('#') {
            continue;
        }
        words.insert(w.to_lowercase());
    }
    Ok(words)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const TWO_TOKEN: &str = r#"{"id":"s1","src":[{"i":0,"form":"the","lemma":"the","upos":"DET","head":1,"deprel":"det","sense":null},{"i":1,"form":"wall","lemma":"wall","upos":"NOUN","head":null,"deprel":"root","sense":"wall.n.01"}],"tgt":[{"i":0,"form":"la","lemma":"el"}],"align":[[0,0]]}"#;

    #[test]
    fn single_line_round_trips() {
        let pairs: Vec<_> = CorpusReader::new(TWO_TOKEN.as_bytes()).collect::<Result<_>>().unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].align, vec![(0, 0)]);
        assert_eq!(pairs[0].src[1].sense.as_deref(), Some("wall.n.01"));
        assert_eq!(pairs[0].src[0].sense_symbol(), NO_SENSE);
        let again = parse_line(&pairs[0].to_line(), 1).unwrap();
        assert_eq!(again, pairs[0]);
    }

    #[test]
    fn empty_input_is_empty_stream() {
        assert_eq!(CorpusReader::new("".as_bytes()).count(), 0);
        assert_eq!(CorpusReader::new("\n\n".as_bytes()).count(), 0);
    }

    #[test]
    fn out_of_range_alignment_names_the_sentence() {
        let bad = TWO_TOKEN.replace("[[0,0]]", "[[5,0]]");
        let err = CorpusReader::new(bad.as_bytes()).next().unwrap().unwrap_err();
        match err {
            Error::AlignmentOutOfRange { ref id, src, .. } => {
                assert_eq!(id, "s1");
                assert_eq!(src, 5);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(err.to_string().contains("alignment index out of range"));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = format!("{TWO_TOKEN}\n{{not json\n");
        let results: Vec<_> = CorpusReader::new(text.as_bytes()).collect();
        assert!(results[0].is_ok());
        match &results[1] {
            Err(Error::Parse { line, .. }) => assert_eq!(*line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_heads_and_duplicate_alignments() {
        let self_head = TWO_TOKEN.replace(r#""head":1"#, r#""head":0"#);
        assert!(parse_line(&self_head, 1).is_err());
        let dup = TWO_TOKEN.replace("[[0,0]]", "[[0,0],[0,0]]");
        assert!(matches!(parse_line(&dup, 1), Err(Error::InvalidSentence { .. })));
    }

    #[test]
    fn exclusion_predicate() {
        let cfg = CorpusConfig::default().with_stopwords(["The", "of"]);
        assert!(is_excluded(&Token::new(0, "the", "the", "DET"), &cfg));
        assert!(is_excluded(&Token::new(0, "The", "THE", "DET"), &cfg));
        assert!(is_excluded(&Token::new(0, ",", ",", "PUNCT"), &cfg));
        assert!(!is_excluded(&Token::new(0, "wall", "wall", "NOUN"), &cfg));
    }

    fn arb_pair() -> impl Strategy<Value = SentencePair> {
        (1usize..6, 1usize..6, "[a-z]{1,6}").prop_flat_map(|(ns, nt, id)| {
            let src = proptest::collection::vec(("[a-z]{1,5}", prop::option::of("[a-z]{1,3}\\.n\\.0[1-3]")), ns);
            let tgt = proptest::collection::vec("[a-záé]{1,5}", nt);
            let align = proptest::collection::btree_set((0..ns, 0..nt), 0..4);
            (Just(id), src, tgt, align).prop_map(|(id, src, tgt, align)| SentencePair {
                id,
                src: src
                    .into_iter()
                    .enumerate()
                    .map(|(i, (lemma, sense))| Token {
                        sense,
                        ..Token::new(i, &lemma, &lemma, "NOUN")
                    })
                    .collect(),
                tgt: tgt
                    .into_iter()
                    .enumerate()
                    .map(|(i, l)| Token::new(i, &l, &l, ""))
                    .collect(),
                align: align.into_iter().collect(),
            })
        })
    }

    proptest! {
        #[test]
        fn line_format_round_trips(pair in arb_pair()) {
            let line = pair.to_line();
            prop_assert_eq!(parse_line(&line, 1).unwrap(), pair);
        }

        #[test]
        fn exclusion_depends_on_lemma_case_insensitively(lemma in "[a-zA-Z]{1,8}", form in "[a-z]{1,8}") {
            let cfg = CorpusConfig::default().with_stopwords([lemma.to_lowercase()]);
            let a = Token::new(0, &form, &lemma, "NOUN");
            let b = Token::new(3, "other", &lemma.to_uppercase(), "NOUN");
            prop_assert!(is_excluded(&a, &cfg));
            prop_assert_eq!(is_excluded(&a, &cfg), is_excluded(&b, &cfg));
        }
    }
}
