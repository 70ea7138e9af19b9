//! Lidar-based mapless navigation with trainable input preprocessing.
//!
//! - [`gridworld`]: occupancy grids, lidar raycasting, robot footprints and
//!   differential-drive kinematics.
//! - [`lidar_prep`]: min-pooling, the IP function families and the PoS
//!   analysis.
//! - [`tinygrad`]: reverse-mode autodiff and the network models.
//! - [`sac`]: soft actor-critic with IP parameters trained through both
//!   losses.
//! - [`nav_env`]: the navigation task, episode loop and task suites.

pub mod gridworld;
pub mod lidar_prep;
pub mod nav_env;
pub mod rng;
pub mod sac;
pub mod tinygrad;
