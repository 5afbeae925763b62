use serde::Serialize;

use crate::tensor::{Matrix, Real};

/// Which training regime produced a cache.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CacheTag {
    Full,
    Lora,
    Paca,
}

/// Tensors retained by a train-mode forward pass for the matching backward
/// pass, with their exact payload size.
#[derive(Debug, Clone)]
pub struct ActivationCache<T: Real = f64> {
    tag: CacheTag,
    tensors: Vec<(&'static str, Matrix<T>)>,
    bytes: usize,
}

impl<T: Real> ActivationCache<T> {
    pub fn empty(tag: CacheTag) -> Self {
        Self {
            tag,
            tensors: Vec::new(),
            bytes: 0,
        }
    }

    pub(crate) fn store(&mut self, name: &'static str, m: Matrix<T>) {
        self.bytes += m.bytes();
        self.tensors.push((name, m));
    }

    pub fn tag(&self) -> CacheTag {
        self.tag
    }

    pub fn get(&self, name: &str) -> Option<&Matrix<T>> {
        self.tensors.iter().find(|(n, _)| *n == name).map(|(_, m)| m)
    }

    pub fn tensor_names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.tensors.iter().map(|(n, _)| *n)
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn bytes(&self) -> usize {
        self.bytes
    }
}

/// Bytes a cache keeps alive until its backward pass.
pub fn activation_bytes<T: Real>(cache: &ActivationCache<T>) -> usize {
    cache.bytes()
}
