use serde::{Deserialize, Serialize};

use crate::sensor::{ForceVector, IndenterId, Pose};

/// One recorded indentation step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TactileSample {
    pub rows: u16,
    pub cols: u16,
    /// RGB, row-major `rows × cols × 3`.
    pub image: Vec<u8>,
    /// Penetration depth in mm, row-major `rows × cols`.
    pub depth: Vec<f32>,
    /// `(F^x, F^y, F^z)` in N.
    pub force: [f32; 3],
    /// `(x, y, z, roll, pitch, yaw)` in mm and degrees.
    pub pose: [f32; 6],
    pub indenter: u16,
    /// Index into the owning dataset's profile list.
    pub profile: u16,
}

impl TactileSample {
    pub fn pixels(&self) -> usize {
        self.rows as usize * self.cols as usize
    }

    pub fn force_vector(&self) -> ForceVector {
        ForceVector::new(self.force[0] as f64, self.force[1] as f64, self.force[2] as f64)
    }

    pub fn fz(&self) -> f64 {
        self.force[2] as f64
    }

    pub fn indenter_id(&self) -> Option<IndenterId> {
        IndenterId::from_code(self.indenter)
    }

    pub fn pose(&self) -> Pose {
        Pose::from_array(self.pose.map(|v| v as f64))
    }

    /// Bitwise equality, distinguishing `-0.0` from `0.0` and comparing NaN payloads.
    pub fn bit_eq(&self, other: &Self) -> bool {
        let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        self.rows == other.rows
            && self.cols == other.cols
            && self.image == other.image
            && bits(&self.depth) == bits(&other.depth)
            && bits(&self.force) == bits(&other.force)
            && bits(&self.pose) == bits(&other.pose)
            && self.indenter == other.indenter
            && self.profile == other.profile
    }
}

/// Samples together with the names their `profile` indices refer to.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub profiles: Vec<String>,
    pub samples: Vec<TactileSample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn profile_name(&self, sample: &TactileSample) -> Option<&str> {
        self.profiles.get(sample.profile as usize).map(String::as_str)
    }

    /// Keep the samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            profiles: self.profiles.clone(),
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }

    pub fn filter(&self, mut keep: impl FnMut(&TactileSample) -> bool) -> Dataset {
        Dataset {
            profiles: self.profiles.clone(),
            samples: self.samples.iter().filter(|s| keep(s)).cloned().collect(),
        }
    }
}
