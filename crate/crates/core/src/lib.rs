//! Camera/LiDAR BEV fusion detector: a cross-view-attention camera branch and
//! a pillar LiDAR branch feeding a two-stage center-based 3D box head.

pub mod camgeo;
pub mod cvt;
pub mod error;
pub mod eval;
pub mod harness;
pub mod head;
pub mod layers;
pub mod pillars;
pub mod pipeline;

pub use error::{Error, Result};
pub use harness::config::Config;
pub use head::boxes::Box3D;
