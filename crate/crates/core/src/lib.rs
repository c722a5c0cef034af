//! Self-supervised anomaly detection for network flow records.
//!
//! The crate is organised as a chain of fitted stages, each of which only ever
//! sees normal (label 0) training rows when it is fitted:
//!
//! 1. [`ingest`]: load a delimited flow table, encode and clean it, split it
//!    into train/validation/test partitions and min-max normalize it.
//! 2. [`feature_select`]: rank features by the summed absolute PCA loadings of
//!    the components that explain a target share of the variance; keep the top
//!    `k`.
//! 3. [`image_map`]: place every kept feature on a cell of a small square grid
//!    (t-SNE over feature vectors, minimum-area framing, optimal assignment) and
//!    render each flow as a grayscale image.
//! 4. [`mae`]: train a convolutional masked autoencoder on the normal images;
//!    its encoder turns images into latent vectors.
//! 5. [`detect`]: fit a novelty detector (LOF by default, Isolation Forest and
//!    PCA reconstruction as alternatives) on the latent vectors and tune its
//!    decision threshold on validation data.
//! 6. [`pipeline`]: orchestration, metrics, ablations and latency measurement.

pub mod detect;
pub mod error;
pub mod feature_select;
pub mod image_map;
pub mod ingest;
pub mod mae;
pub mod pipeline;
pub mod rng;

pub use error::{Result, SafeError};
