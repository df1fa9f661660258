//! Plain-text sequence files: an optional `# vocab: A B ...` header, then one
//! whitespace-separated sequence per line. Without a header tokens are
//! decimal ids.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

const VOCAB_PREFIX: &str = "# vocab:";

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SequenceFile {
    /// Token symbols; empty means decimal ids.
    pub symbols: Vec<String>,
    pub sequences: Vec<Vec<usize>>,
}

impl SequenceFile {
    pub fn new(symbols: Vec<String>, sequences: Vec<Vec<usize>>) -> Self {
        Self { symbols, sequences }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut out = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if let Some(rest) = line.strip_prefix(VOCAB_PREFIX) {
                if n != 0 {
                    return Err(Error::InvalidArgument(format!("line {}: vocab header must come first", n + 1)));
                }
                out.symbols = rest.split_whitespace().map(str::to_string).collect();
                continue;
            }
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let seq = line
                .split_whitespace()
                .map(|tok| {
                    out.token_id(tok)
                        .ok_or_else(|| Error::InvalidArgument(format!("line {}: unknown token {tok:?}", n + 1)))
                })
                .collect::<Result<Vec<_>>>()?;
            out.sequences.push(seq);
        }
        Ok(out)
    }

    fn token_id(&self, tok: &str) -> Option<usize> {
        if self.symbols.is_empty() {
            tok.parse().ok()
        } else {
            self.symbols.iter().position(|s| s == tok)
        }
    }

    pub fn symbol(&self, id: usize) -> String {
        self.symbols.get(id).cloned().unwrap_or_else(|| id.to_string())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if !self.symbols.is_empty() {
            out.push_str(VOCAB_PREFIX);
            for s in &self.symbols {
                out.push(' ');
                out.push_str(s);
            }
            out.push('\n');
        }
        for seq in &self.sequences {
            let line: Vec<String> = seq.iter().map(|&t| self.symbol(t)).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symbols_round_trip() {
        let f = SequenceFile::new(vec!["A".into(), "B".into(), "C".into()], vec![vec![0, 2, 1], vec![2, 2, 2]]);
        let text = f.to_text();
        assert!(text.starts_with("# vocab: A B C\nA C B\n"));
        assert_eq!(SequenceFile::parse(&text).unwrap(), f);
    }

    #[test]
    fn numeric_tokens_without_header() {
        let f = SequenceFile::parse("0 1 2\n\n3 4 5\n").unwrap();
        assert_eq!(f.sequences, vec![vec![0, 1, 2], vec![3, 4, 5]]);
    }

    #[test]
    fn unknown_symbol_reports_line() {
        let err = SequenceFile::parse("# vocab: A B\nA B\nA Z\n").unwrap_err();
        assert!(err.to_string().contains("line 3"));
    }
}
