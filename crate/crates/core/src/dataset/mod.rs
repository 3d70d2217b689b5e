//! Dataset collection, preprocessing, balancing and storage.

pub mod balance;
pub mod collect;
pub mod container;
pub mod preprocess;
pub mod registration;
pub mod sample;
pub mod stats;

pub use balance::{balance, balance_indices, DEFAULT_BIN_WIDTH};
pub use collect::{collect, run_indentation, sample_poses, CollectionPlan, TrajectoryTag};
pub use container::{load, store, Manifest};
pub use preprocess::{preprocess, preprocess_sample, DepthNormalizer, Preprocessed};
pub use registration::{register_frames, RigidTransform};
pub use sample::{Dataset, TactileSample};
pub use stats::DatasetStats;
