//! File formats for the garment pipeline (OBJ meshes, PC2 and PC16 point
//! caches, metadata and manifest text, a sectioned binary container) and
//! the `weft` command line built on them.

pub mod cli;
pub mod config;
pub mod container;
pub mod meta;
pub mod obj;
pub mod pc16;
pub mod pc2;
pub mod split;
