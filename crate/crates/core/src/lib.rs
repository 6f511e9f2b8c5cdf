//! Neural explicit surfaces on template meshes.
//!
//! A deformable object is modelled as a fixed triangle template plus two
//! pose-conditioned neural fields defined on its UV atlas: a scalar offset
//! field (displacement along the surface normal) and an RGB texture field.
//! Training optimizes both through differentiable volumetric rendering;
//! afterwards the same model renders with plain rasterization and a single
//! texture query per pixel.
//!
//! The crate is `no_std`-compatible (`alloc` required): disable the default
//! `std` feature to use it in embedded or wasm hosts. All file formats, the
//! CLI and thread pools live in the companion `nes` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod autodiff;
pub mod conversion;
pub mod fields;
pub mod geometry;
pub mod math;
pub mod metrics;
pub mod raster;
pub mod scene;
pub mod training;
pub mod volren;
