//! Force-feedback tasks: weighing by pushing and controlled cup deformation.

pub mod ellipse;
pub mod grasp;
pub mod push;

pub use ellipse::{deformation_percent, fit_ellipse, reference_radius, Ellipse, RimObservation};
pub use grasp::{grasp_csv, grasp_plot_svg, grasp_to_force, CupRim, GraspConfig, GraspOutcome};
pub use push::{
    estimate_weight, fit_friction, fit_friction_from_pushes, push_plot_svg, simulate_push, PatchKind, PushFrame, PushScenario, PushTrace,
    WeighReport, WeighTrial, GRAVITY,
};
