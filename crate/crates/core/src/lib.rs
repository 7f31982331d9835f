//! Named-entity hyperspheres in word-embedding spaces.
//!
//! Entity vectors of one type cluster inside a hypersphere (center plus
//! radius). This crate fits such spheres from typed dictionaries, carries them
//! to another language through a learned linear map, and turns the distances
//! to each sphere into z-scored features for a linear-chain CRF tagger.

pub mod alignment;
pub mod corpus;
pub mod dictionary;
pub mod embeddings;
pub mod error;
pub mod features;
pub mod hypersphere;
pub mod tagger;

pub use error::{Error, Result};
