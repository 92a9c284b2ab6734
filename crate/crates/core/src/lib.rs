//! Heavy-tailed cyber loss modelling: tail-index estimation, extremograms,
//! robust dependence, copulas, compound-loss Monte Carlo and zero-utility
//! pricing.
//!
//! Every random draw comes from a [`rng::SeedStream`] substream keyed by a
//! purpose string and a block index, so results depend only on the master
//! seed and not on how work is spread across threads.

pub mod compound;
pub mod copula;
pub mod dependence;
pub mod error;
pub mod extremal;
pub mod linalg;
pub mod loss_data;
pub mod numeric;
pub mod par;
pub mod pricing;
pub mod rng;
pub mod tail_index;

pub use error::{Error, Result};
pub use rng::SeedStream;
