//! Sequential image geo-localization on SE(3).

pub mod error;
pub mod io;
pub mod keyframe;
pub mod lie;
pub mod locator;
pub mod motion;
pub mod pipeline;
pub mod retrieval;
pub mod robust;
pub mod scene;
pub mod sim;

pub use error::{Error, Result};
pub use lie::{Covariance6, Pose, Rotation, Twist};
pub use scene::{Frame, FrameId, Intrinsics, MapPoint, Observation, PointId, PoseEstimate, Source};
