//! Preprocessed tensors ready for batching.

use std::collections::HashMap;

use faf_tensor::Tensor;
use rayon::prelude::*;

use crate::dataset::{preprocess_sample, Dataset, DepthNormalizer};
use crate::error::{FafError, Result};
use crate::parallel;
use crate::sensor::SensorProfile;

/// Network inputs and labels for every sample of a dataset.
#[derive(Clone, Debug)]
pub struct PreparedSet {
    pub size: usize,
    images: Vec<f64>,
    depths: Vec<f64>,
    pub forces: Vec<[f64; 3]>,
}

/// One minibatch.
#[derive(Clone, Debug)]
pub struct Batch {
    /// `[B, 3, S, S]`.
    pub images: Tensor,
    /// `[B, 1, S, S]`.
    pub depths: Tensor,
    /// `[B, 3]`.
    pub forces: Tensor,
}

/// Flat-gel images for each profile name of `data`.
pub fn backgrounds(data: &Dataset) -> Result<HashMap<String, Vec<u8>>> {
    data.profiles
        .iter()
        .map(|name| Ok((name.clone(), SensorProfile::resolve(name)?.background_image())))
        .collect()
}

impl PreparedSet {
    pub fn build(data: &Dataset, norm: &DepthNormalizer, size: usize) -> Result<Self> {
        let bgs = backgrounds(data)?;
        let prepared: Vec<_> = parallel::install(|| {
            data.samples
                .par_iter()
                .map(|s| {
                    let name = data.profile_name(s).ok_or_else(|| {
                        FafError::Contract(format!("sample references unknown profile index {}", s.profile))
                    })?;
                    preprocess_sample(s, &bgs[name], norm, size)
                })
                .collect::<Result<Vec<_>>>()
        })?;
        let mut images = Vec::with_capacity(prepared.len() * 3 * size * size);
        let mut depths = Vec::with_capacity(prepared.len() * size * size);
        for p in prepared {
            images.extend(p.image);
            depths.extend(p.depth);
        }
        Ok(Self {
            size,
            images,
            depths,
            forces: data.samples.iter().map(|s| s.force_vector().to_array()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.forces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forces.is_empty()
    }

    pub fn batch(&self, indices: &[usize]) -> Batch {
        let s = self.size;
        let (il, dl) = (3 * s * s, s * s);
        let b = indices.len();
        let mut images = Vec::with_capacity(b * il);
        let mut depths = Vec::with_capacity(b * dl);
        let mut forces = Vec::with_capacity(b * 3);
        for &i in indices {
            images.extend_from_slice(&self.images[i * il..(i + 1) * il]);
            depths.extend_from_slice(&self.depths[i * dl..(i + 1) * dl]);
            forces.extend_from_slice(&self.forces[i]);
        }
        Batch {
            images: Tensor::new(vec![b, 3, s, s], images).expect("sized above"),
            depths: Tensor::new(vec![b, 1, s, s], depths).expect("sized above"),
            forces: Tensor::new(vec![b, 3], forces).expect("sized above"),
        }
    }
}
