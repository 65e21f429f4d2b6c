use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::types::TokenId;

/// A language realized as a bijection over the shared vocabulary. Eos maps to
/// itself; content tokens are shuffled.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CipherLanguage {
    pub lang: String,
    /// `permutation[base] = token` in this language.
    permutation: Vec<TokenId>,
    #[serde(skip)]
    inverse: Vec<TokenId>,
}

impl CipherLanguage {
    pub fn new(lang: impl Into<String>, permutation: Vec<TokenId>) -> Result<Self> {
        let n = permutation.len();
        let mut inverse = vec![TokenId::MAX; n];
        for (base, &tok) in permutation.iter().enumerate() {
            let slot = inverse
                .get_mut(tok as usize)
                .ok_or_else(|| Error::invalid(format!("token {tok} out of range")))?;
            if *slot != TokenId::MAX {
                return Err(Error::invalid(format!("token {tok} used twice")));
            }
            *slot = base as TokenId;
        }
        Ok(CipherLanguage {
            lang: lang.into(),
            permutation,
            inverse,
        })
    }

    /// Shuffles the content ids `0..vocab_size-1`; the last id (eos) is fixed.
    pub fn random<R: Rng>(lang: impl Into<String>, vocab_size: usize, rng: &mut R) -> Self {
        let mut perm: Vec<TokenId> = (0..vocab_size as TokenId - 1).collect();
        perm.shuffle(rng);
        perm.push(vocab_size as TokenId - 1);
        CipherLanguage::new(lang, perm).expect("shuffle is a bijection")
    }

    pub fn size(&self) -> usize {
        self.permutation.len()
    }

    pub fn encipher(&self, base: TokenId) -> TokenId {
        self.permutation[base as usize]
    }

    pub fn decipher(&self, token: TokenId) -> TokenId {
        self.inverse[token as usize]
    }

    /// Token map from this language into `other`.
    pub fn mapping_to(&self, other: &CipherLanguage) -> Vec<TokenId> {
        (0..self.size() as TokenId)
            .map(|t| other.encipher(self.decipher(t)))
            .collect()
    }
}
