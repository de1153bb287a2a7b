//! Quality-aware inertial learning for tabular models.
//!
//! A gated MLP whose per-feature gates are pulled toward a periodically
//! refreshed anchor with strength proportional to how unreliable each feature
//! is, plus the corruption injectors, preprocessing, training loop and
//! bootstrap evaluation protocol used to study it.
//!
//! Module map:
//! - [`data`]: tabular model, CSV ingestion, imputation/encoding, splits.
//! - [`corrupt`]: CCAR/CNAR injectors, corruption masks, quality scores.
//! - [`nn`]: dense MLP with hand-written backward pass.
//! - [`quail`]: gates, quality-weighted proximal penalty, anchor and λ schedules.
//! - [`train`]: optimizers, schedulers, curriculum sampler, epoch loop.
//! - [`eval`]: metrics, trimmed means, result tables.
//! - [`search`]: random search, top-k architectures, study runner and ledger.
//! - [`gradcheck`]: finite-difference verification of the composite loss.

pub mod corrupt;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod nn;
pub mod quail;
pub mod rng;
pub mod search;
pub mod train;

pub use error::{QuailError, Result};
