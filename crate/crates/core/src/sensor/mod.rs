//! Synthetic vision-based tactile sensor.

pub mod contact;
pub mod indenter;
pub mod pose;
pub mod profile;
pub mod render;

pub use contact::{compute_contact, oracle_force, oracle_force_raw, press_to_load, quantize, ContactState, ForceVector};
pub use indenter::{Indenter, IndenterId};
pub use pose::{Pose, PoseRange};
pub use profile::{builtin_names, Light, SensorProfile};
pub use render::{render_tactile, render_with_background, TactileFrame};
