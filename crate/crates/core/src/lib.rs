//! Vibration-aware LiDAR-inertial odometry.
//!
//! Each scan point gets a post-undistortion covariance derived from the
//! scan's estimated vibration intensity; that covariance guides scan-to-map
//! matching (two-stage Euclidean + Mahalanobis KNN) and weights the
//! point-to-plane residuals inside an iterated Kalman filter. A deterministic
//! simulator (planar worlds, sinusoidal vibration profiles, raycast scans,
//! noisy IMU) makes the whole pipeline testable without hardware.

pub mod config;
pub mod error;
pub mod ikf;
pub mod io;
pub mod kdtree;
pub mod manifold;
pub mod mapping;
pub mod metrics;
pub mod pipeline;
pub mod propagation;
pub mod scan;
pub mod sim;
pub mod state;
pub mod trajectory;
pub mod uncertainty;

pub use error::{Error, Result};
pub use manifold::{Mat3, RigidTransform, Rot3, Vec3};
pub use state::NavState;
