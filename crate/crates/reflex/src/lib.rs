//! Reactive point-cloud-conditioned motion layer for a 7-DoF serial arm.
//!
//! The crate has two halves:
//!
//! * A goal-proposal module that watches the scene point cloud for moving
//!   points, repels a virtual joint-space goal away from the closest one,
//!   and hands the modified goal to whatever downstream policy is driving
//!   the robot ([`dcp`], built on [`rmp`], [`perception`] and
//!   [`kinematics`]).
//! * A deterministic desk-scale simulation benchmark with five scenario
//!   families (SE, SAO, FDO, GB, DGB), point-cloud rendering, collision
//!   checking and episode metrics ([`sim`], [`policy`], driven by the
//!   `reflex` binary).

pub mod config;
pub mod dcp;
pub mod error;
pub mod kinematics;
pub mod perception;
pub mod policy;
pub mod rmp;
pub mod sim;

pub use error::{Error, Result};

use nalgebra::{SMatrix, SVector};

/// Joint-space vector for the 7-DoF arm.
pub type Vector7 = SVector<f64, 7>;
/// Joint-space metric / mass matrix.
pub type Matrix7 = SMatrix<f64, 7, 7>;
/// Point Jacobian: world-frame point velocity per joint velocity.
pub type Jacobian = SMatrix<f64, 3, 7>;

/// SplitMix64 step, used to derive independent RNG streams from one seed.
pub fn mix_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
