//! Named-tensor checkpoints shared by the room-type network and the denoiser.
//!
//! A checkpoint is JSON: a model kind tag, the model configuration and a flat
//! map from tensor name to `{ "shape": [...], "data": [...] }` (row-major).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl From<&Array2<f64>> for Tensor {
    fn from(a: &Array2<f64>) -> Self {
        Self {
            shape: a.shape().to_vec(),
            data: a.iter().copied().collect(),
        }
    }
}

impl From<&Array1<f64>> for Tensor {
    fn from(a: &Array1<f64>) -> Self {
        Self {
            shape: vec![a.len()],
            data: a.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub kind: String,
    pub config: serde_json::Value,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn new(kind: &str, config: &impl Serialize) -> Result<Self> {
        Ok(Self {
            kind: kind.to_string(),
            config: serde_json::to_value(config)?,
            tensors: BTreeMap::new(),
        })
    }

    pub fn config<C: DeserializeOwned>(&self) -> Result<C> {
        Ok(serde_json::from_value(self.config.clone())?)
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Validation(format!(
                "checkpoint holds a {:?} model, expected {kind:?}",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn put2(&mut self, name: impl Into<String>, a: &Array2<f64>) {
        self.tensors.insert(name.into(), a.into());
    }

    pub fn put1(&mut self, name: impl Into<String>, a: &Array1<f64>) {
        self.tensors.insert(name.into(), a.into());
    }

    fn get(&self, name: &str, shape: &[usize]) -> Result<&Tensor> {
        let t = self
            .tensors
            .get(name)
            .ok_or_else(|| Error::Validation(format!("checkpoint lacks tensor {name:?}")))?;
        if t.shape != shape || t.data.len() != shape.iter().product::<usize>() {
            return Err(Error::Validation(format!(
                "tensor {name:?} has shape {:?}, expected {shape:?}",
                t.shape
            )));
        }
        if t.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "tensor {name:?} holds non-finite values"
            )));
        }
        Ok(t)
    }

    pub fn take2(&self, name: &str, rows: usize, cols: usize) -> Result<Array2<f64>> {
        let t = self.get(name, &[rows, cols])?;
        Ok(Array2::from_shape_vec((rows, cols), t.data.clone()).expect("shape checked"))
    }

    pub fn take1(&self, name: &str, len: usize) -> Result<Array1<f64>> {
        Ok(Array1::from(self.get(name, &[len])?.data.clone()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_string(self)?).map_err(|e| Error::io(path, e))
    }
}
