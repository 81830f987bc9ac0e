use std::io::{BufRead, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Ordered multiset `Z` of state-action pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<S> {
    items: Vec<(S, usize)>,
}

impl<S> Default for Dataset<S> {
    fn default() -> Self {
        Self { items: Vec::new() }
    }
}

#[derive(Serialize, Deserialize)]
struct Record<S> {
    s: S,
    a: usize,
}

impl<S> Dataset<S> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs(items: Vec<(S, usize)>) -> Self {
        Self { items }
    }

    pub fn push(&mut self, s: S, a: usize) {
        self.items.push((s, a));
    }

    pub fn extend(&mut self, pairs: impl IntoIterator<Item = (S, usize)>) {
        self.items.extend(pairs);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn pairs(&self) -> &[(S, usize)] {
        &self.items
    }

    pub fn iter(&self) -> impl Iterator<Item = (&S, usize)> {
        self.items.iter().map(|(s, a)| (s, *a))
    }

    /// `|f|_Z = sqrt(sum_{x in Z} f(x)^2)` over the multiset.
    pub fn norm(&self, f: impl Fn(&S, usize) -> f64) -> f64 {
        self.items.iter().map(|(s, a)| f(s, *a).powi(2)).sum::<f64>().sqrt()
    }
}

impl<S: Serialize> Dataset<S> {
    /// One JSON object `{"s": .., "a": ..}` per line.
    pub fn write_jsonl(&self, mut w: impl Write) -> Result<()> {
        for (s, a) in &self.items {
            let line = serde_json::to_string(&Record { s, a: *a }).map_err(|e| Error::Parse(e.to_string()))?;
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_jsonl(f)
    }
}

impl<S: DeserializeOwned> Dataset<S> {
    pub fn read_jsonl(r: impl BufRead) -> Result<Self> {
        let mut items = Vec::new();
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record<S> = serde_json::from_str(&line).map_err(|e| Error::Parse(e.to_string()))?;
            items.push((rec.s, rec.a));
        }
        Ok(Self { items })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_jsonl(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}
