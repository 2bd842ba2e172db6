//! Striped UniFrac phylogenetic beta-diversity.
//!
//! The pairwise distance matrix is decomposed into stripes (see
//! [`stripes`]) that can be computed independently and merged. Per-node
//! embedding rows (see [`embed`]) are accumulated into the stripes by one
//! of three interchangeable kernels (see [`kernels`]) at either fp32 or
//! fp64 precision. [`validate`] holds a brute-force oracle and a Mantel
//! test for comparing results.

pub mod bench;
pub mod embed;
pub mod kernels;
mod metric;
pub mod newick;
pub mod precision;
pub mod stripes;
pub mod synthetic;
pub mod table;
pub mod validate;

use thiserror::Error;

pub use embed::{EmbedError, Embedder, EmbeddingBatch, EmbeddingMode};
pub use kernels::{
    accumulate, compute_matrix, compute_unifrac, finalize, ComputeOptions, ComputeOutput,
    KernelConfig, KernelCounters, KernelError, KernelVariant,
};
pub use metric::Metric;
pub use newick::{parse_newick, NewickError, PhyloTree, ShearError};
pub use precision::{Precision, Real};
pub use stripes::{
    condense, stripe_pair, total_stripes, AnyStripeSet, DistanceMatrix, MatrixError, StripeError,
    StripeFileError, StripeSet,
};
pub use table::{load_table, SampleTable, TableError, TableFormat};
pub use validate::{brute_force_unifrac, condensed_upper, mantel, MantelResult, ValidateError};

#[derive(Debug, Error)]
pub enum UnifracError {
    #[error(transparent)]
    Newick(#[from] NewickError),
    #[error(transparent)]
    Shear(#[from] ShearError),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Stripe(#[from] StripeError),
    #[error(transparent)]
    StripeFile(#[from] StripeFileError),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Validate(#[from] ValidateError),
    #[error("{count} table feature(s) are not leaves of the tree, e.g. '{example}'")]
    FeatureNotInTree { count: usize, example: String },
    #[error("cannot start worker threads: {0}")]
    ThreadPool(String),
    #[error("{0}")]
    InvalidArgument(String),
}
