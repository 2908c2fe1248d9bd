use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::uniform;
use crate::rng::SeededRng;
use crate::scalar::Real;
use crate::tensor::Tensor;

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Word vocabulary with its embedding matrix. Row [`PAD_ID`] is all zeros and
/// frozen.
#[derive(Clone, Debug)]
pub struct Vocab<T> {
    index: HashMap<String, usize>,
    tokens: Vec<String>,
    embeddings: Tensor<T>,
}

/// Output of [`load_embeddings`].
#[derive(Clone, Debug)]
pub struct EmbeddingLoad<T> {
    pub vocab: Vocab<T>,
    /// Lines skipped for wrong arity, unparsable floats or duplicate tokens.
    pub skipped: usize,
}

impl<T: Real> Vocab<T> {
    /// Assembles a vocabulary. `tokens` must start with PAD and UNK and match
    /// the embedding rows; the PAD row is zeroed and frozen.
    pub fn from_parts(tokens: Vec<String>, embeddings: Tensor<T>) -> Result<Self> {
        if tokens.len() < 2 || tokens[PAD_ID] != PAD_TOKEN || tokens[UNK_ID] != UNK_TOKEN {
            return Err(Error::Contract("vocabulary must begin with <pad>, <unk>".into()));
        }
        if embeddings.shape().len() != 2 || embeddings.rows() != tokens.len() {
            return Err(Error::dims("Vocab::from_parts", embeddings.shape(), &[tokens.len()]));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Contract(format!("duplicate vocabulary token {t}")));
            }
        }
        let mut embeddings = embeddings.with_frozen_rows(vec![PAD_ID]);
        let d = embeddings.cols();
        embeddings.values_mut()[..d].iter_mut().for_each(|v| *v = T::zero());
        Ok(Self { index, tokens, embeddings })
    }

    /// PAD, UNK, then `words` (duplicates dropped), with `U(-a, a)` vectors,
    /// `a = sqrt(3 / dim)`.
    pub fn random<S: AsRef<str>>(words: &[S], dim: usize, rng: &mut SeededRng) -> Result<Self> {
        let mut tokens = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        let mut seen: HashSet<String> = tokens.iter().cloned().collect();
        for w in words {
            if seen.insert(w.as_ref().to_string()) {
                tokens.push(w.as_ref().to_string());
            }
        }
        let emb = uniform(&[tokens.len(), dim], (3.0 / dim as f64).sqrt(), rng);
        Self::from_parts(tokens, emb)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    /// Id of `token`, or [`UNK_ID`].
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn embeddings(&self) -> &Tensor<T> {
        &self.embeddings
    }

    pub fn vector(&self, id: usize) -> &[T] {
        self.embeddings.row(id)
    }

    pub fn into_embeddings(self) -> Tensor<T> {
        self.embeddings
    }
}

/// Reads a GloVe-format text file: `token f1 … fd` per line.
pub fn load_embeddings<T: Real>(path: &Path, dim: usize) -> Result<EmbeddingLoad<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(BufReader::new(file), dim, path)
}

/// Parses embedding lines from any reader; `path` is only used in errors.
/// UNK is initialised to the mean of all loaded vectors.
pub fn parse_embeddings<T: Real, R: Read>(reader: BufReader<R>, dim: usize, path: &Path) -> Result<EmbeddingLoad<T>> {
    let mut tokens = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
    let mut seen: HashSet<String> = HashSet::new();
    let mut vectors: Vec<f64> = Vec::new();
    let mut skipped = 0;
    for line in reader.lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut parts = line.split(' ').filter(|p| !p.is_empty());
        let Some(word) = parts.next() else {
            continue;
        };
        let floats: std::result::Result<Vec<f64>, _> = parts.map(str::parse::<f64>).collect();
        match floats {
            Ok(v)
                if v.len() == dim && v.iter().all(|x| x.is_finite()) && !seen.contains(word) && word != PAD_TOKEN && word != UNK_TOKEN =>
            {
                seen.insert(word.to_string());
                tokens.push(word.to_string());
                vectors.extend(v);
            }
            _ => skipped += 1,
        }
    }
    let loaded = tokens.len() - 2;
    if loaded == 0 {
        return Err(Error::EmptyEmbeddings(path.into()));
    }
    let mut mean = vec![0.0; dim];
    for row in vectors.chunks(dim) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= loaded as f64);
    let mut values = vec![T::zero(); dim];
    values.extend(mean.iter().map(|&v| T::lit(v)));
    values.extend(vectors.iter().map(|&v| T::lit(v)));
    let emb = Tensor::new(vec![tokens.len(), dim], values)?;
    Ok(EmbeddingLoad {
        vocab: Vocab::from_parts(tokens, emb)?,
        skipped,
    })
}
