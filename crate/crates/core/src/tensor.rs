//! Dense row-major `f64` tensors and boolean masks.
//!
//! No broadcasting: every binary operation requires identical shapes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn volume(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    /// Builds a tensor, rejecting length mismatches and non-finite values.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if volume(&shape) != data.len() {
            return Err(Error::InvalidTensor(format!(
                "shape {:?} holds {} values, got {}",
                shape,
                volume(&shape),
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidTensor(format!(
                "non-finite value {} at index {pos}",
                data[pos]
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = volume(&shape);
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![data.len()], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access to the raw buffer. Callers keep values finite.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        if volume(&shape) != self.data.len() {
            return Err(Error::shape(&shape, &self.shape));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Applies `f` to every entry.
    ///
    /// Panics if `f` maps a finite input to a non-finite output.
    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> Tensor {
        let data: Vec<f64> = self
            .data
            .iter()
            .map(|&v| {
                let out = f(v);
                assert!(out.is_finite(), "elementwise function produced {out} from {v}");
                out
            })
            .collect();
        Tensor {
            shape: self.shape.clone(),
            data,
        }
    }

    /// Zeroes every entry whose mask bit is false.
    pub fn masked(&self, mask: &BitMask) -> Result<Tensor> {
        let mut out = self.clone();
        out.apply_mask(mask)?;
        Ok(out)
    }

    pub fn apply_mask(&mut self, mask: &BitMask) -> Result<()> {
        if mask.shape() != self.shape() {
            return Err(Error::shape(&self.shape, mask.shape()));
        }
        for (v, &keep) in self.data.iter_mut().zip(mask.bits()) {
            if !keep {
                *v = 0.0;
            }
        }
        Ok(())
    }

    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0.0).count()
    }
}

/// Free-function form of [`Tensor::map`].
pub fn elementwise_apply<F: Fn(f64) -> f64>(t: &Tensor, f: F) -> Tensor {
    t.map(f)
}

pub fn masked_copy(t: &Tensor, m: &BitMask) -> Result<Tensor> {
    t.masked(m)
}

pub fn count_nonzero(t: &Tensor) -> usize {
    t.count_nonzero()
}

/// Keep/drop indicator with the same shape contract as [`Tensor`].
/// `true` keeps the corresponding weight.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitMask {
    shape: Vec<usize>,
    bits: Vec<bool>,
}

impl BitMask {
    pub fn new(shape: Vec<usize>, bits: Vec<bool>) -> Result<Self> {
        if volume(&shape) != bits.len() {
            return Err(Error::InvalidTensor(format!(
                "mask shape {:?} holds {} bits, got {}",
                shape,
                volume(&shape),
                bits.len()
            )));
        }
        Ok(BitMask { shape, bits })
    }

    pub fn all_true(shape: Vec<usize>) -> Self {
        let n = volume(&shape);
        BitMask {
            shape,
            bits: vec![true; n],
        }
    }

    pub fn all_false(shape: Vec<usize>) -> Self {
        let n = volume(&shape);
        BitMask {
            shape,
            bits: vec![false; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn set(&mut self, i: usize, keep: bool) {
        self.bits[i] = keep;
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn count_kept(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn count_masked(&self) -> usize {
        self.bits.len() - self.count_kept()
    }

    /// Fraction of dropped entries. An empty mask has sparsity 0.
    pub fn sparsity(&self) -> f64 {
        if self.bits.is_empty() {
            return 0.0;
        }
        self.count_masked() as f64 / self.bits.len() as f64
    }

    pub fn density(&self) -> f64 {
        1.0 - self.sparsity()
    }
}
