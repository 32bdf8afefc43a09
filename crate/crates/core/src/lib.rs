//! Corrective view-synthesis augmentation for eye-in-hand behavior
//! cloning.
//!
//! The pipeline: collect scripted grasping demonstrations with a wrist
//! camera ([`sim`]), train a dense-voxel radiance field per demonstration
//! on its pre-grasp frames ([`field`]), sample SE(3) pose perturbations
//! and relabel them with corrective relative actions ([`se3`]), render
//! the perturbed views and splice the gripper region back in
//! ([`augment`]), then train an image-only policy on a 50/50 mix of
//! original and augmented transitions and evaluate it closed-loop
//! ([`policy`]). A homography-warp baseline ([`homography`]) and
//! noise-injected demonstration collection cover the non-field
//! comparison methods, and [`align`] recovers scale and reference frame
//! when camera poses come from a scale-ambiguous reconstruction instead
//! of calibration.

pub mod align;
pub mod augment;
pub mod camera;
pub mod demo;
pub mod error;
pub mod field;
pub mod homography;
pub mod image;
pub mod optim;
pub mod policy;
pub mod se3;
pub mod seeding;
pub mod sim;
pub mod vec3;

pub use error::{CoreError, Result};
pub use se3::{Rotation, Transform};
pub use vec3::Vec3;
