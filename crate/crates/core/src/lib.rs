//! Desk-scale pipeline for synthetic clothed humans: a parametric skinned
//! body, procedurally generated garments, mass-spring cloth simulation,
//! garment-as-offsets encoding with a dual skirt topology, a
//! segment-constrained graph pooling hierarchy and conditional graph-VAE
//! numeric kernels with verified gradients.
//!
//! The crate is `no_std`-compatible (`alloc` required); file formats and the
//! command line live in the companion `weft-io` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod body;
pub mod encoding;
pub mod garment;
pub mod geom;
pub mod hierarchy;
pub mod linalg;
pub mod mesh;
pub mod sim;
pub mod topology;
pub mod vae;
