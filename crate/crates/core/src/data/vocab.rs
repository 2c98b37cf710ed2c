use std::collections::HashMap;
use std::path::Path;

use super::{Bag, Sentence};
use crate::encoders::{featurize, TokenFeatures};
use crate::error::{Error, Result};
use crate::evaluation::NA;
use crate::graph::{cap_paths, PathEvidence};
use crate::model::{EncodedBag, EncodedPath};
use crate::textio::{display, read_lines};

/// Out-of-vocabulary token, always id 0.
pub const UNK: &str = "<unk>";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// `UNK` followed by the given tokens, duplicates dropped.
    pub fn from_tokens<I: IntoIterator<Item = String>>(tokens: I) -> Self {
        let mut v = Vocab { tokens: Vec::new(), index: HashMap::new() };
        v.insert(UNK.to_string());
        for t in tokens {
            v.insert(t);
        }
        v
    }

    fn insert(&mut self, t: String) {
        if !self.index.contains_key(&t) {
            self.index.insert(t.clone(), self.tokens.len());
            self.tokens.push(t);
        }
    }

    /// Tokens of sentences then paths, bag by bag, in first-seen order.
    pub fn from_bags(bags: &[Bag]) -> Self {
        Self::from_tokens(bags.iter().flat_map(|b| {
            b.sentences
                .iter()
                .flat_map(|s| s.tokens.iter())
                .chain(b.paths.iter().flat_map(|p| p.tokens.iter()))
                .cloned()
                .collect::<Vec<_>>()
        }))
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Space-joined tokens, for checkpoint metadata.
    pub fn to_meta(&self) -> String {
        self.tokens.join(" ")
    }

    pub fn from_meta(s: &str) -> Result<Self> {
        let mut it = s.split(' ');
        if it.next() != Some(UNK) {
            return Err(Error::Checkpoint("vocabulary must start with the unknown token".into()));
        }
        Ok(Self::from_tokens(it.map(str::to_string)))
    }
}

/// Reads a pretrained vector file (`count dim` header, then `token v1 … vdim`
/// lines). Returns `(vocab id, vector)` for tokens present in `vocab`.
pub fn load_embeddings(path: &Path, vocab: &Vocab, word_dim: usize) -> Result<Vec<(usize, Vec<f64>)>> {
    let lines = read_lines(path)?;
    let file = display(path);
    let Some((n, header)) = lines.first() else {
        return Err(Error::parse(file, 1, "empty embedding file"));
    };
    let h: Vec<&str> = header.split(' ').collect();
    let parse = |s: &str, line: usize| s.parse::<usize>().map_err(|_| Error::parse(file.clone(), line, format!("bad header field `{s}`")));
    if h.len() != 2 {
        return Err(Error::parse(file, *n, "header must be `count dim`"));
    }
    let (count, dim) = (parse(h[0], *n)?, parse(h[1], *n)?);
    if dim != word_dim {
        return Err(Error::parse(file, *n, format!("dimension {dim} does not match word_dim {word_dim}")));
    }
    if lines.len() - 1 != count {
        return Err(Error::parse(file, *n, format!("header promises {count} vectors, file has {}", lines.len() - 1)));
    }
    let mut rows = Vec::new();
    for (n, line) in &lines[1..] {
        let f: Vec<&str> = line.split(' ').collect();
        if f.len() != dim + 1 {
            return Err(Error::parse(file, *n, format!("expected token and {dim} values")));
        }
        let values = f[1..]
            .iter()
            .map(|v| v.parse::<f64>().ok().filter(|x| x.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| Error::parse(file.clone(), *n, "bad value"))?;
        let id = vocab.id(f[0]);
        if id != 0 || f[0] == UNK {
            rows.push((id, values));
        }
    }
    Ok(rows)
}

/// Turns text bags into index-space model input.
#[derive(Debug, Clone)]
pub struct BagEncoder {
    pub vocab: Vocab,
    pub maxdist: usize,
    pub use_paths: bool,
    pub max_paths: usize,
    pub seed: u64,
}

impl BagEncoder {
    fn words(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.vocab.id(t)).collect()
    }

    pub fn sentence(&self, s: &Sentence) -> Result<TokenFeatures> {
        featurize(self.words(&s.tokens), s.head_pos, s.tail_pos, self.maxdist)
    }

    pub fn path(&self, p: &PathEvidence) -> Result<EncodedPath> {
        Ok(EncodedPath {
            features: featurize(self.words(&p.tokens), p.head_pos, p.tail_pos, self.maxdist)?,
            path_type: p.path_type,
            tau1: p.tau1,
            tau2: p.tau2,
        })
    }

    /// Bag `index` keeps at most `max_paths` paths, subsampled with seed `seed + index`.
    pub fn encode(&self, bag: &Bag, label: usize, index: usize) -> Result<EncodedBag> {
        let paths = if self.use_paths {
            let kept = cap_paths(bag.paths.iter().collect(), self.max_paths, self.seed.wrapping_add(index as u64));
            kept.into_iter().map(|p| self.path(p)).collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        Ok(EncodedBag {
            head: bag.head,
            tail: bag.tail,
            label,
            sentences: bag.sentences.iter().map(|s| self.sentence(s)).collect::<Result<_>>()?,
            paths,
        })
    }

    /// One training bag per label of each pair.
    pub fn training_bags(&self, bags: &[Bag]) -> Result<Vec<EncodedBag>> {
        let mut out = Vec::new();
        for (i, b) in bags.iter().enumerate() {
            let encoded = self.encode(b, b.labels[0], i)?;
            let extra: Vec<EncodedBag> = b.labels[1..].iter().map(|&l| EncodedBag { label: l, ..encoded.clone() }).collect();
            out.push(encoded);
            out.extend(extra);
        }
        Ok(out)
    }

    /// One bag per pair plus its non-NA gold relations.
    pub fn test_bags(&self, bags: &[Bag]) -> Result<(Vec<EncodedBag>, Vec<Vec<usize>>)> {
        let encoded = bags.iter().enumerate().map(|(i, b)| self.encode(b, b.labels[0], i)).collect::<Result<Vec<_>>>()?;
        let gold = bags.iter().map(|b| b.labels.iter().copied().filter(|&r| r != NA).collect()).collect();
        Ok((encoded, gold))
    }
}
