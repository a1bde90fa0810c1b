//! Literal-to-metaphor transfer.
//!
//! A sentence classifier decides whether text is metaphorical; a masked
//! metaphor model, fine-tuned only on metaphor positions of sentences the
//! classifier verified, refills a randomly masked content word of literal
//! text; outputs are kept only when the classifier flips to metaphorical.
//! Around that loop sit dataset loaders, attention-based metaphor
//! localization, human-evaluation statistics and an augmentation harness.

pub mod classifier;
pub mod corpus;
pub mod error;
pub mod evalkit;
pub mod locator;
pub mod mock;
pub mod nn;
pub mod par;
pub mod pos;
pub mod reconstructor;
pub mod rng;
pub mod text;
pub mod synthetic;
pub mod transfer;

pub use error::{Error, ErrorKind, Result};
