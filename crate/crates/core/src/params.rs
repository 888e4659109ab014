//! Named, role-partitioned parameter maps.
use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{contract, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Which part of the network a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Role {
    /// Convolution kernels, normalization affine terms, feature biases.
    Feature,
    /// The final classifier layer.
    Head,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoleFilter {
    Feature,
    Head,
    All,
}

impl RoleFilter {
    pub fn admits(self, role: Role) -> bool {
        match self {
            RoleFilter::All => true,
            RoleFilter::Feature => role == Role::Feature,
            RoleFilter::Head => role == Role::Head,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T = f32> {
    pub role: Role,
    pub tensor: Tensor<T>,
}

/// Parameter tensors keyed by dotted path. Iteration is always in sorted
/// name order, which fixes the accumulation order of every reduction.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterSet<T = f32> {
    entries: BTreeMap<String, Parameter<T>>,
}

impl<T: Scalar> ParameterSet<T> {
    pub fn new() -> Self {
        Self { entries: BTreeMap::new() }
    }

    /// Inserts a parameter; a name may only be declared once.
    pub fn insert(&mut self, name: impl Into<String>, role: Role, tensor: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(contract!("parameter `{}` declared twice", name));
        }
        self.entries.insert(name, Parameter { role, tensor });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Parameter<T>> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Parameter<T>> {
        self.entries.get_mut(name)
    }

    /// Tensor lookup that reports a missing name as a misalignment.
    pub fn tensor(&self, name: &str) -> Result<&Tensor<T>> {
        self.entries.get(name).map(|p| &p.tensor).ok_or_else(|| Error::Misaligned {
            name: name.to_string(),
            reason: "missing".to_string(),
        })
    }

    pub fn tensor_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.entries.get_mut(name).map(|p| &mut p.tensor).ok_or_else(|| Error::Misaligned {
            name: name.to_string(),
            reason: "missing".to_string(),
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Parameter<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Parameter<T>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalars across all tensors.
    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|p| p.tensor.len()).sum()
    }

    pub fn names_with_role(&self, role: Role) -> Vec<&str> {
        self.iter().filter(|(_, p)| p.role == role).map(|(n, _)| n).collect()
    }

    /// Same names, shapes and roles with every entry zeroed.
    pub fn zeros_like(&self) -> Self {
        let entries = self
            .entries
            .iter()
            .map(|(k, p)| {
                (k.clone(), Parameter { role: p.role, tensor: Tensor::zeros(p.tensor.shape()) })
            })
            .collect();
        Self { entries }
    }

    pub fn cast<U: Scalar>(&self) -> ParameterSet<U> {
        let entries = self
            .entries
            .iter()
            .map(|(k, p)| (k.clone(), Parameter { role: p.role, tensor: p.tensor.cast() }))
            .collect();
        ParameterSet { entries }
    }

    /// Errors with the first offending name unless both sets have identical
    /// names, shapes and roles.
    pub fn check_aligned<U: Scalar>(&self, other: &ParameterSet<U>) -> Result<()> {
        for (name, p) in &self.entries {
            let Some(q) = other.entries.get(name) else {
                return Err(Error::Misaligned {
                    name: name.clone(),
                    reason: "missing from the other set".to_string(),
                });
            };
            if p.tensor.shape() != q.tensor.shape() {
                return Err(Error::Misaligned {
                    name: name.clone(),
                    reason: alloc::format!(
                        "shape {:?} vs {:?}",
                        p.tensor.shape(),
                        q.tensor.shape()
                    ),
                });
            }
            if p.role != q.role {
                return Err(Error::Misaligned {
                    name: name.clone(),
                    reason: alloc::format!("role {:?} vs {:?}", p.role, q.role),
                });
            }
        }
        if let Some(extra) = other.entries.keys().find(|k| !self.entries.contains_key(*k)) {
            return Err(Error::Misaligned {
                name: extra.clone(),
                reason: "missing from this set".to_string(),
            });
        }
        Ok(())
    }

    /// Largest absolute elementwise difference; sets must be aligned.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        self.check_aligned(other)?;
        let mut worst = 0.0f64;
        for ((_, p), (_, q)) in self.entries.iter().zip(other.entries.iter()) {
            for (a, b) in p.tensor.data().iter().zip(q.tensor.data()) {
                worst = worst.max((a.as_f64() - b.as_f64()).abs());
            }
        }
        Ok(worst)
    }

    /// Bitwise equality of every entry, including signed zeros and NaN payloads.
    pub fn bitwise_eq(&self, other: &Self) -> bool
    where
        T: PartialEq,
    {
        if self.check_aligned(other).is_err() {
            return false;
        }
        self.entries.iter().zip(other.entries.iter()).all(|((_, p), (_, q))| {
            p.tensor
                .data()
                .iter()
                .zip(q.tensor.data())
                .all(|(a, b)| a.as_f64().to_bits() == b.as_f64().to_bits())
        })
    }
}
