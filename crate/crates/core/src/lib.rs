//! Character-level convolutional neural network classifiers for telling
//! apart closely related languages and dialects.
//!
//! The pipeline: [`corpus`] reads `text<TAB>label` files and encodes texts
//! to fixed-length character index sequences; [`model`] holds the network
//! with hand-written forward and backward passes; [`train`] runs Adam with
//! dev-loss early stopping; [`ensemble`] trains several models on different
//! splits and combines them by plurality vote; [`eval`] scores predictions;
//! [`persist`] stores models in the `.ccnn` format.

pub mod corpus;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod model;
pub mod persist;
pub mod presets;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};

/// Maps `f` over `0..n`, on the rayon pool when the `parallel` feature is
/// enabled. Output order always follows the index.
pub(crate) fn par_map<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}
