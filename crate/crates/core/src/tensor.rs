use alloc::vec;
use alloc::vec::Vec;

use crate::error::{contract, Result};
use crate::scalar::Scalar;

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Copy + Default> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![T::default(); len] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(contract!(
                "shape {:?} holds {} elements, got {}",
                shape,
                len,
                data.len()
            ));
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }
}

/// Batch of images `m x c x h x w` with values in `[0, 1]` and binary labels
/// (0 = real, 1 = generated).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch {
    pub images: Tensor<f32>,
    pub labels: Vec<u8>,
}

impl LabeledBatch {
    pub fn new(images: Tensor<f32>, labels: Vec<u8>) -> Result<Self> {
        let batch = Self { images, labels };
        batch.validate()?;
        Ok(batch)
    }

    pub fn validate(&self) -> Result<()> {
        let shape = self.images.shape();
        if shape.len() != 4 {
            return Err(contract!("images must be m x c x h x w, got {:?}", shape));
        }
        if shape[0] == 0 {
            return Err(contract!("batch is empty"));
        }
        if self.labels.len() != shape[0] {
            return Err(contract!(
                "{} labels for {} images",
                self.labels.len(),
                shape[0]
            ));
        }
        if let Some(bad) = self.labels.iter().find(|&&l| l > 1) {
            return Err(contract!("label {} is not binary", bad));
        }
        if self.images.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(contract!("pixel values must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `(c, h, w)` of each image.
    pub fn image_dims(&self) -> (usize, usize, usize) {
        let s = self.images.shape();
        (s[1], s[2], s[3])
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let (c, h, w) = self.image_dims();
        let n = c * h * w;
        &self.images.data()[i * n..(i + 1) * n]
    }

    pub fn image_mut(&mut self, i: usize) -> &mut [f32] {
        let (c, h, w) = self.image_dims();
        let n = c * h * w;
        &mut self.images.data_mut()[i * n..(i + 1) * n]
    }

    pub fn targets(&self) -> Vec<f32> {
        self.labels.iter().map(|&l| l as f32).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_rejects_label_count_mismatch() {
        let images = Tensor::zeros(&[2, 1, 2, 2]);
        assert!(LabeledBatch::new(images.clone(), vec![0]).is_err());
        assert!(LabeledBatch::new(images.clone(), vec![0, 2]).is_err());
        assert!(LabeledBatch::new(images, vec![0, 1]).is_ok());
    }

    #[test]
    fn batch_rejects_out_of_range_pixels() {
        let images = Tensor::from_vec(&[1, 1, 1, 2], vec![0.5, 1.5]).unwrap();
        assert!(LabeledBatch::new(images, vec![1]).is_err());
    }
}
