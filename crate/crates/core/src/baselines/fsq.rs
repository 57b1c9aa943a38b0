use serde::{Deserialize, Serialize};

use crate::error::{KoapError, Result};
use crate::numerics::tape::snap_to_grid;

/// Finite scalar quantization grid: dimension `i` takes `levels[i]` evenly
/// spaced values in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FsqSpec {
    pub levels: Vec<usize>,
}

impl Default for FsqSpec {
    fn default() -> Self {
        Self { levels: vec![5, 5, 5] }
    }
}

impl FsqSpec {
    pub fn new(levels: Vec<usize>) -> Result<Self> {
        let spec = Self { levels };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() || self.levels.iter().any(|&l| l < 2) {
            return Err(KoapError::Config(format!(
                "quantization levels must be non-empty and >= 2, got {:?}",
                self.levels
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.levels.len()
    }

    pub fn codebook_size(&self) -> usize {
        self.levels.iter().product()
    }

    /// Index of a grid vector in `0..codebook_size()` (mixed radix).
    pub fn code_index(&self, q: &[f64]) -> usize {
        let mut idx = 0;
        for (v, &l) in q.iter().zip(&self.levels) {
            let i = ((v.clamp(-1.0, 1.0) + 1.0) * (l - 1) as f64 / 2.0).round() as usize;
            idx = idx * l + i;
        }
        idx
    }
}

/// Bound each coordinate to `[-1, 1]` (hard squashing, the identity on the
/// grid's range) and round it to its level grid.
pub fn fsq_quantize(spec: &FsqSpec, v: &[f64]) -> Result<Vec<f64>> {
    if v.len() != spec.dim() {
        return Err(KoapError::dim("fsq_quantize", spec.dim(), v.len()));
    }
    Ok(v.iter().zip(&spec.levels).map(|(&x, &l)| snap_to_grid(x, l)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn nearest_grid_rounding() {
        let spec = FsqSpec::new(vec![3]).unwrap();
        assert_eq!(fsq_quantize(&spec, &[0.4]).unwrap(), vec![0.0]);
        assert_eq!(fsq_quantize(&spec, &[0.6]).unwrap(), vec![1.0]);
        assert_eq!(fsq_quantize(&spec, &[-7.0]).unwrap(), vec![-1.0]);
        let five = FsqSpec::default();
        assert_eq!(fsq_quantize(&five, &[0.5, -0.5, 0.0]).unwrap(), vec![0.5, -0.5, 0.0]);
        assert!(fsq_quantize(&five, &[0.0]).is_err());
        assert!(FsqSpec::new(vec![1]).is_err());
        assert!(FsqSpec::new(vec![]).is_err());
        assert_eq!(five.codebook_size(), 125);
    }

    #[test]
    fn grid_enumeration_matches_codebook() {
        let spec = FsqSpec::new(vec![3, 4]).unwrap();
        let mut seen = std::collections::BTreeSet::new();
        for i in 0..200 {
            let v = [(i as f64 * 0.37).sin() * 1.3, (i as f64 * 0.11).cos() * 1.2];
            let q = fsq_quantize(&spec, &v).unwrap();
            seen.insert(spec.code_index(&q));
        }
        assert!(seen.iter().all(|&c| c < spec.codebook_size()));
        assert_eq!(seen.len(), spec.codebook_size());
    }

    proptest! {
        #[test]
        fn quantization_is_idempotent(v in proptest::collection::vec(-3.0f64..3.0, 3), l in 2usize..9) {
            let spec = FsqSpec::new(vec![l, 5, 2]).unwrap();
            let q = fsq_quantize(&spec, &v).unwrap();
            prop_assert_eq!(fsq_quantize(&spec, &q).unwrap(), q.clone());
            for (x, &lv) in q.iter().zip(&spec.levels) {
                let idx = (x + 1.0) * (lv - 1) as f64 / 2.0;
                prop_assert!((idx - idx.round()).abs() < 1e-9);
            }
        }
    }
}
