#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod harris;
pub mod image;
pub mod io;
pub mod kdtree;
pub mod matching;
pub mod piifd;
pub mod pipeline;
pub mod render;
pub mod scale_space;
pub mod synthetic;
pub mod transform;
