use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::SimplexRow;

/// `L` probability rows over a vocabulary of size `V`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalSequence {
    rows: Vec<SimplexRow>,
}

impl CategoricalSequence {
    pub fn new(rows: Vec<SimplexRow>) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(Error::InvalidArgument("sequence must have at least one position".into()));
        };
        let v = first.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != v) {
            return Err(Error::DimensionMismatch {
                expected: v,
                actual: bad.len(),
            });
        }
        Ok(Self { rows })
    }

    pub fn from_tokens(tokens: &[usize], vocab: usize) -> Result<Self> {
        if let Some(&t) = tokens.iter().find(|&&t| t >= vocab) {
            return Err(Error::InvalidArgument(format!("token {t} outside vocabulary of size {vocab}")));
        }
        Self::new(tokens.iter().map(|&t| SimplexRow::one_hot(vocab, t)).collect())
    }

    /// Every position set to `row`.
    pub fn filled(len: usize, row: &SimplexRow) -> Result<Self> {
        Self::new(vec![row.clone(); len])
    }

    /// Rebuilds a sequence from a flat row-major `L x V` buffer.
    pub fn from_flat(flat: &[f64], vocab: usize) -> Result<Self> {
        if vocab == 0 || !flat.len().is_multiple_of(vocab) {
            return Err(Error::InvalidArgument(format!(
                "flat buffer of {} values is not a multiple of vocabulary size {vocab}",
                flat.len()
            )));
        }
        Self::new(
            flat.chunks(vocab)
                .map(|c| SimplexRow::new(c.to_vec()))
                .collect::<Result<Vec<_>>>()?,
        )
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn vocab(&self) -> usize {
        self.rows[0].len()
    }

    pub fn rows(&self) -> &[SimplexRow] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &SimplexRow {
        &self.rows[i]
    }

    pub fn into_rows(self) -> Vec<SimplexRow> {
        self.rows
    }

    pub fn flat(&self) -> Vec<f64> {
        self.rows.iter().flat_map(|r| r.as_slice().iter().copied()).collect()
    }

    pub fn is_one_hot(&self) -> bool {
        self.rows.iter().all(SimplexRow::is_one_hot)
    }

    /// Per-position argmax; ties go to the lowest token id.
    pub fn decode(&self) -> Vec<usize> {
        self.rows.iter().map(SimplexRow::argmax).collect()
    }
}

/// Per-position argmax decoding.
pub fn decode_argmax(x: &CategoricalSequence) -> Vec<usize> {
    x.decode()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Mask,
    Uniform,
}

/// The stationary distribution `nu` of the forward corruption.
///
/// For [`NoiseKind::Mask`] the vocabulary includes the reserved mask token;
/// data tokens never use it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteNoiseSpec {
    pub kind: NoiseKind,
    pub vocab: usize,
    pub mask_token: Option<usize>,
}

impl DiscreteNoiseSpec {
    /// Absorbing noise over `data_vocab` tokens plus a mask token with id
    /// `data_vocab`.
    pub fn mask(data_vocab: usize) -> Self {
        Self {
            kind: NoiseKind::Mask,
            vocab: data_vocab + 1,
            mask_token: Some(data_vocab),
        }
    }

    pub fn uniform(vocab: usize) -> Self {
        Self {
            kind: NoiseKind::Uniform,
            vocab,
            mask_token: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.kind, self.mask_token) {
            (NoiseKind::Mask, Some(m)) if m < self.vocab && self.vocab >= 2 => Ok(()),
            (NoiseKind::Mask, _) => Err(Error::InvalidArgument("mask noise needs a mask token inside the vocabulary".into())),
            (NoiseKind::Uniform, None) if self.vocab >= 1 => Ok(()),
            (NoiseKind::Uniform, _) => Err(Error::InvalidArgument("uniform noise takes no mask token".into())),
        }
    }

    /// Number of tokens that can appear in clean data.
    pub fn data_vocab(&self) -> usize {
        match self.kind {
            NoiseKind::Mask => self.vocab - 1,
            NoiseKind::Uniform => self.vocab,
        }
    }

    pub fn is_data_token(&self, token: usize) -> bool {
        token < self.vocab && Some(token) != self.mask_token
    }

    /// Data token ids in increasing order.
    pub fn data_tokens(&self) -> Vec<usize> {
        (0..self.vocab).filter(|&t| self.is_data_token(t)).collect()
    }

    pub fn nu(&self) -> SimplexRow {
        match self.kind {
            NoiseKind::Mask => SimplexRow::one_hot(self.vocab, self.mask_token.expect("validated mask token")),
            NoiseKind::Uniform => SimplexRow::uniform(self.vocab),
        }
    }
}
