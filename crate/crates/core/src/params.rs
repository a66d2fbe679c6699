//! Named parameter arrays and their on-disk checkpoint format.
//!
//! A checkpoint is a single JSON document:
//!
//! ```text
//! { "format": "kgrank-params", "version": 1, "metadata": {...},
//!   "arrays": [ { "name": "...", "shape": [r, c], "data": [...] }, ... ] }
//! ```
//!
//! Values are written as `f64` whatever the in-memory scalar type is.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

pub const CHECKPOINT_FORMAT: &str = "kgrank-params";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore<S> {
    names: Vec<String>,
    values: Vec<Matrix<S>>,
    by_name: HashMap<String, ParamId>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    /// Registers a new array. Panics on a duplicate name, which is always a
    /// construction bug.
    pub fn add(&mut self, name: impl Into<String>, value: Matrix<S>) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = ParamId(self.values.len());
        self.by_name.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        id
    }

    pub fn get(&self, id: ParamId) -> &Matrix<S> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix<S> {
        &mut self.values[id.0]
    }

    pub fn set(&mut self, id: ParamId, value: Matrix<S>) {
        assert_eq!(
            self.values[id.0].shape(),
            value.shape(),
            "shape change for parameter {}",
            self.names[id.0]
        );
        self.values[id.0] = value;
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Matrix::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(Matrix::all_finite)
    }

    pub fn to_checkpoint(&self, metadata: serde_json::Value) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            metadata,
            arrays: self
                .names
                .iter()
                .zip(&self.values)
                .map(|(name, m)| NamedArray {
                    name: name.clone(),
                    shape: [m.rows(), m.cols()],
                    data: m.to_f64_vec(),
                })
                .collect(),
        }
    }

    /// Overwrites every array named in the checkpoint. Names must match and
    /// shapes must agree; unknown or missing names are errors.
    pub fn load_checkpoint(&mut self, ckpt: &Checkpoint) -> Result<()> {
        ckpt.validate()?;
        if ckpt.arrays.len() != self.values.len() {
            return Err(Error::Integrity(format!(
                "checkpoint has {} arrays, model expects {}",
                ckpt.arrays.len(),
                self.values.len()
            )));
        }
        for arr in &ckpt.arrays {
            let id = self.id(&arr.name).ok_or_else(|| {
                Error::Integrity(format!("checkpoint array {} unknown to model", arr.name))
            })?;
            let expected = self.values[id.0].shape();
            if expected != (arr.shape[0], arr.shape[1]) {
                return Err(Error::Integrity(format!(
                    "array {} has shape {:?}, model expects {:?}",
                    arr.name, arr.shape, expected
                )));
            }
            self.values[id.0] = Matrix::from_f64(arr.shape[0], arr.shape[1], &arr.data);
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedArray {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    #[serde(default)]
    pub metadata: serde_json::Value,
    pub arrays: Vec<NamedArray>,
}

impl Checkpoint {
    pub fn validate(&self) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Integrity(format!(
                "not a parameter checkpoint (format {:?})",
                self.format
            )));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Integrity(format!(
                "unsupported checkpoint version {}",
                self.version
            )));
        }
        for arr in &self.arrays {
            if arr.shape[0] * arr.shape[1] != arr.data.len() {
                return Err(Error::Integrity(format!(
                    "array {} declares shape {:?} but holds {} values",
                    arr.name,
                    arr.shape,
                    arr.data.len()
                )));
            }
        }
        Ok(())
    }

    pub fn array(&self, name: &str) -> Option<Matrix<f64>> {
        self.arrays
            .iter()
            .find(|a| a.name == name)
            .map(|a| Matrix::from_f64(a.shape[0], a.shape[1], &a.data))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::parse("checkpoint", e))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint =
            serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))?;
        ckpt.validate()?;
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let mut store = ParamStore::<f64>::new();
        let a = store.add("a", Matrix::from_f64(2, 2, &[0.1, 1.0 / 3.0, -2.5e-9, 7.0]));
        store.add("b", Matrix::from_f64(1, 3, &[1.0, 2.0, 3.0]));
        let ckpt = store.to_checkpoint(serde_json::json!({"seed": 7}));
        let text = serde_json::to_string(&ckpt).unwrap();
        let back: Checkpoint = serde_json::from_str(&text).unwrap();
        let mut other = store.clone();
        other.get_mut(a).as_mut_slice()[0] = 99.0;
        other.load_checkpoint(&back).unwrap();
        assert_eq!(other.get(a), store.get(a));
    }

    #[test]
    fn checkpoint_shape_mismatch_rejected() {
        let mut store = ParamStore::<f64>::new();
        store.add("a", Matrix::zeros(2, 2));
        let mut ckpt = store.to_checkpoint(serde_json::Value::Null);
        ckpt.arrays[0].shape = [1, 4];
        assert!(matches!(store.load_checkpoint(&ckpt), Err(Error::Integrity(_))));
    }
}
