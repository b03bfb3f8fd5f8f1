use std::collections::HashMap;

use crate::detection::DenseVector;
use crate::error::{Error, Result};
use crate::selection::smooth_idf;
use crate::text::tokenize;

/// Bag-of-words TF-IDF utterance encoder producing L2-normalized dense vectors.
///
/// Stand-in for an external sentence encoder when no vectors file is given.
#[derive(Debug, Clone)]
pub struct TfidfEncoder {
    vocabulary: HashMap<String, usize>,
    idf: Vec<f64>,
}

impl TfidfEncoder {
    pub fn fit<'a>(texts: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut vocabulary: HashMap<String, usize> = HashMap::new();
        let mut df: Vec<usize> = Vec::new();
        let mut n = 0;
        for text in texts {
            n += 1;
            let mut seen = std::collections::HashSet::new();
            for tok in tokenize(text).into_vec() {
                let next = vocabulary.len();
                let id = *vocabulary.entry(tok).or_insert(next);
                if id == df.len() {
                    df.push(0);
                }
                if seen.insert(id) {
                    df[id] += 1;
                }
            }
        }
        if vocabulary.is_empty() {
            return Err(Error::InvalidParameter(
                "cannot fit an encoder on texts without tokens".into(),
            ));
        }
        let idf = df.iter().map(|&d| smooth_idf(n, d)).collect();
        Ok(TfidfEncoder { vocabulary, idf })
    }

    pub fn dim(&self) -> usize {
        self.idf.len()
    }

    /// Out-of-vocabulary tokens are ignored; a text with none in vocabulary
    /// encodes to the zero vector.
    pub fn encode(&self, text: &str) -> DenseVector {
        let mut v = vec![0.0; self.dim()];
        for tok in tokenize(text).iter() {
            if let Some(&id) = self.vocabulary.get(tok) {
                v[id] += self.idf[id];
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        DenseVector::new(v).expect("finite by construction")
    }
}
