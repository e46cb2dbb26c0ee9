//! Zero-shot point cloud registration.
//!
//! Object masks and semantic features from upstream 2D models are lifted into 3D,
//! objects are matched across clouds by scene-graph matching, points are matched
//! inside matched objects with slack-augmented Sinkhorn, and a rigid transform is
//! estimated with RANSAC.

// Range checks are written `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bundle;
pub mod error;
pub mod metrics;
pub mod object_matching;
pub mod pipeline;
pub mod point_matching;
pub mod projection;
pub mod registration;
pub mod scene_graph;
pub mod spatial;
pub mod synthgen;

mod lap;

pub use bundle::{read_bundle, write_bundle, SceneBundle};
pub use error::{Result, ZeroRegError};
pub use pipeline::{register_pair, PipelineConfig, RegistrationReport};
pub use registration::RigidTransform;
