#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod centerline;
pub mod config;
pub mod error;
pub mod eval;
pub mod graph_seg;
pub mod maxflow;
pub mod mesh;
pub mod phantom;
pub mod pipeline;
pub mod ray_seg;
pub mod raygrid;
pub mod tensor;
pub mod tracking;
pub mod vec3;
pub mod volume;

pub use error::{Error, Result};
pub use vec3::Vec3;
