use serde::Serialize;

use crate::error::{Error, Result};

/// Sorted, duplicate-free set of positions into `0..domain`, nonempty.
///
/// Identifies the trainable columns of a weight matrix (and the matching rows
/// of its input activations).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct IndexSet {
    indices: Vec<usize>,
    domain: usize,
}

impl IndexSet {
    /// Validates that `indices` is strictly increasing, nonempty and in range.
    pub fn new(indices: Vec<usize>, domain: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Argument("index set must not be empty".into()));
        }
        if indices.len() > domain {
            return Err(Error::Argument(format!(
                "index set of size {} exceeds domain {domain}",
                indices.len()
            )));
        }
        for pair in indices.windows(2) {
            if pair[0] >= pair[1] {
                return Err(Error::Argument(format!(
                    "indices must be strictly increasing, found {} before {}",
                    pair[0], pair[1]
                )));
            }
        }
        if let Some(&last) = indices.last() {
            if last >= domain {
                return Err(Error::Index {
                    index: last,
                    domain,
                });
            }
        }
        Ok(Self { indices, domain })
    }

    /// Sorts and deduplicates before validating.
    pub fn from_unsorted(mut indices: Vec<usize>, domain: usize) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        Self::new(indices, domain)
    }

    /// `{0, 1, …, domain-1}`.
    pub fn full(domain: usize) -> Result<Self> {
        Self::new((0..domain).collect(), domain)
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn domain(&self) -> usize {
        self.domain
    }

    /// Number of selected positions (the rank r).
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.indices.len() == self.domain
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }

    /// Positions of `0..domain` not in the set, ascending.
    pub fn complement(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.domain - self.indices.len());
        let mut sel = self.indices.iter().peekable();
        for i in 0..self.domain {
            if sel.peek() == Some(&&i) {
                sel.next();
            } else {
                out.push(i);
            }
        }
        out
    }
}
