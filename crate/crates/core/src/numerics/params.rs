use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{KoapError, Result};

/// A named block of a [`ParamVector`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Flat parameter storage shared by every model component.
///
/// Segments are appended contiguously, so they are disjoint and together
/// cover the whole array. The length never changes after construction.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Vec<Segment>,
}

impl ParamVector {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rebuild from a layout and raw values, checking coverage.
    pub fn from_parts(layout: Vec<Segment>, values: Vec<f64>) -> Result<Self> {
        let mut cursor = 0;
        for seg in &layout {
            if seg.offset != cursor {
                return Err(KoapError::Checkpoint(format!(
                    "segment `{}` starts at {} but previous segment ended at {cursor}",
                    seg.name, seg.offset
                )));
            }
            cursor += seg.len();
        }
        if cursor != values.len() {
            return Err(KoapError::Checkpoint(format!(
                "layout covers {cursor} values but {} were supplied",
                values.len()
            )));
        }
        Ok(Self { values, layout })
    }

    /// Append a zero-initialised segment and return its descriptor.
    pub fn push_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> Segment {
        let name = name.into();
        assert!(self.segment(&name).is_none(), "duplicate parameter segment `{name}`");
        let seg = Segment {
            name,
            offset: self.values.len(),
            shape: shape.to_vec(),
        };
        self.values.resize(self.values.len() + seg.len(), 0.0);
        self.layout.push(seg.clone());
        seg
    }

    /// Append a segment filled uniformly in ±`bound`.
    pub fn push_uniform<R: Rng>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        bound: f64,
        rng: &mut R,
    ) -> Segment {
        let seg = self.push_zeros(name, shape);
        for v in &mut self.values[seg.range()] {
            *v = rng.random_range(-bound..=bound);
        }
        seg
    }

    /// Glorot-uniform weight matrix `fan_in x fan_out`.
    pub fn push_glorot<R: Rng>(
        &mut self,
        name: impl Into<String>,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Segment {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        self.push_uniform(name, &[fan_in, fan_out], bound, rng)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn layout(&self) -> &[Segment] {
        &self.layout
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.layout.iter().find(|s| s.name == name)
    }

    pub fn get(&self, seg: &Segment) -> &[f64] {
        &self.values[seg.range()]
    }

    pub fn get_mut(&mut self, seg: &Segment) -> &mut [f64] {
        &mut self.values[seg.range()]
    }

    /// Name of the segment that owns flat index `idx`.
    pub fn segment_of(&self, idx: usize) -> Option<&str> {
        self.layout
            .iter()
            .find(|s| s.range().contains(&idx))
            .map(|s| s.name.as_str())
    }

    /// Boolean mask selecting every segment whose name starts with one of
    /// `prefixes`.
    pub fn mask_prefixes(&self, prefixes: &[&str]) -> Vec<bool> {
        let mut mask = vec![false; self.len()];
        for seg in &self.layout {
            if prefixes.iter().any(|p| seg.name.starts_with(p)) {
                mask[seg.range()].iter_mut().for_each(|m| *m = true);
            }
        }
        mask
    }

    /// Copy of the values restricted to segments with a given prefix.
    pub fn snapshot_prefix(&self, prefix: &str) -> Vec<f64> {
        self.layout
            .iter()
            .filter(|s| s.name.starts_with(prefix))
            .flat_map(|s| self.values[s.range()].iter().copied())
            .collect()
    }

    pub fn replace_values(&mut self, values: Vec<f64>) -> Result<()> {
        if values.len() != self.values.len() {
            return Err(KoapError::dim("ParamVector::replace_values", self.len(), values.len()));
        }
        self.values = values;
        Ok(())
    }

    /// First segment containing a non-finite value.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.values
            .iter()
            .position(|v| !v.is_finite())
            .and_then(|i| self.segment_of(i))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn segments_cover_array() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut p = ParamVector::new();
        p.push_glorot("a.w", 3, 4, &mut rng);
        p.push_zeros("a.b", &[4]);
        p.push_zeros("k", &[2, 2]);
        assert_eq!(p.len(), 12 + 4 + 4);
        let total: usize = p.layout().iter().map(Segment::len).sum();
        assert_eq!(total, p.len());
        assert_eq!(p.segment_of(13), Some("a.b"));
        assert_eq!(p.segment_of(19), Some("k"));
        let rebuilt = ParamVector::from_parts(p.layout().to_vec(), p.values().to_vec()).unwrap();
        assert_eq!(rebuilt, p);
    }

    #[test]
    fn from_parts_rejects_gaps() {
        let layout = vec![Segment {
            name: "x".into(),
            offset: 1,
            shape: vec![2],
        }];
        assert!(ParamVector::from_parts(layout, vec![0.0; 3]).is_err());
    }

    #[test]
    fn glorot_bound() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut p = ParamVector::new();
        let seg = p.push_glorot("w", 10, 6, &mut rng);
        let bound = (6.0f64 / 16.0).sqrt();
        assert!(p.get(&seg).iter().all(|v| v.abs() <= bound));
    }
}
