use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `N` points of dimension `dim`, row-major, each tagged with an image id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet<T> {
    dim: usize,
    data: Vec<T>,
    ids: Vec<String>,
}

impl<T: Scalar> EmbeddingSet<T> {
    pub fn new(dim: usize, data: Vec<T>, ids: Vec<String>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("embedding dimension must be positive"));
        }
        if data.len() != dim * ids.len() {
            return Err(Error::shape(
                "embedding",
                format!("{} x {dim} values", ids.len()),
                data.len(),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("embedding contains NaN or infinite values"));
        }
        let mut seen = HashSet::with_capacity(ids.len());
        if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(Error::invalid(format!("duplicate embedding id `{dup}`")));
        }
        Ok(Self { dim, data, ids })
    }

    /// Rows tagged `0..N`.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let dim = rows
            .first()
            .map(|r| r.len())
            .ok_or(Error::Empty("embedding rows"))?;
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::invalid("embedding rows have different lengths"));
        }
        let ids = (0..rows.len()).map(|i| i.to_string()).collect();
        Self::new(dim, rows.concat(), ids)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn point(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }
}
