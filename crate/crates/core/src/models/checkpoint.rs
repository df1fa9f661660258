//! Plain-text model checkpoints.
//!
//! ```text
//! nsd-checkpoint v1
//! layer0.weight<TAB>64x3<TAB>0.1 -0.25 ...
//! layer0.bias<TAB>64<TAB>0 0 ...
//! ```
//!
//! The first line is the version header. Every other nonempty line holds a
//! tensor name, its shape as `x`-separated dimensions, and the row-major
//! values separated by single spaces. Values are written with Rust's
//! shortest round-trip formatting, so reading a checkpoint back yields
//! bit-identical floats. Entries are kept sorted by name.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

pub const CHECKPOINT_HEADER: &str = "nsd-checkpoint v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    entries: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn insert(&mut self, name: &str, tensor: Tensor) {
        assert!(
            !name.is_empty() && !name.contains(char::is_whitespace),
            "tensor names must be nonempty and contain no whitespace"
        );
        self.entries.insert(name.to_string(), tensor);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from(CHECKPOINT_HEADER);
        out.push('\n');
        for (name, t) in &self.entries {
            let shape: Vec<String> = t.shape.iter().map(usize::to_string).collect();
            let values: Vec<String> = t.data.iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&format!("{name}\t{}\t{}\n", shape.join("x"), values.join(" ")));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim_end() == CHECKPOINT_HEADER => {}
            _ => {
                return Err(Error::Checkpoint {
                    line: 1,
                    message: format!("expected header `{CHECKPOINT_HEADER}`"),
                })
            }
        }
        let mut ck = Checkpoint::default();
        for (i, line) in lines {
            let lineno = i + 1;
            let err = |message: String| Error::Checkpoint { line: lineno, message };
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(err(format!("expected 3 tab-separated fields, found {}", fields.len())));
            }
            let shape = fields[1]
                .split('x')
                .map(|d| d.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| err(format!("bad shape `{}`: {e}", fields[1])))?;
            let data = fields[2]
                .split_whitespace()
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| err(format!("bad value: {e}")))?;
            let tensor = Tensor::new(shape, data).map_err(|e| err(e.to_string()))?;
            if ck.entries.insert(fields[0].to_string(), tensor).is_some() {
                return Err(err(format!("duplicate tensor `{}`", fields[0])));
            }
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip_is_exact() {
        let mut ck = Checkpoint::default();
        ck.insert("w", Tensor::new(vec![2, 2], vec![0.1, -1e-300, 1.0 / 3.0, 5e10]).unwrap());
        ck.insert("b", Tensor::vector(vec![std::f64::consts::PI]));
        let text = ck.to_text();
        assert!(text.starts_with("nsd-checkpoint v1\nb\t1\t"));
        assert_eq!(Checkpoint::parse(&text).unwrap(), ck);
    }

    #[test]
    fn malformed_files_report_line() {
        let err = Checkpoint::parse("nsd-checkpoint v1\nw\t2x2\t1 2 3\n").unwrap_err();
        assert!(matches!(err, Error::Checkpoint { line: 2, .. }));
        assert!(Checkpoint::parse("something else\n").is_err());
    }
}
