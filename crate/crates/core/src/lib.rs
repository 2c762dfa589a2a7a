//! Structured channel pruning for convolutional networks.
//!
//! The crate decides, per convolution layer, which output channels (filters)
//! to keep. Kernels are clustered bottom-up within every input channel, a
//! greedy maximum-coverage pass selects the filters that best represent those
//! clusters, and a batch-norm-scale quantile schedule decides how much each
//! layer is pruned at every pruning event of a training run.
//!
//! Modules, bottom of the stack first:
//!
//! - [`linkage`]: agglomerative kernel clustering with selectable linkage.
//! - [`universe`]: per-layer merge budgets, cut-off heights, and the coverage
//!   universe built from all channels' clusterings.
//! - [`coverage`]: greedy maximum-coverage filter selection.
//! - [`schedule`]: sparsity targets from batch-norm scale quantiles, the
//!   pruning-event calendar, and channel regrowth.
//! - [`snapshot`], [`arch`], [`mask`], [`flops`]: the model container, its
//!   block/producer structure, mask application, and cost accounting.
//! - [`descriptors`]: built-in architecture descriptors and synthetic weights.
//! - [`pipeline`], [`report`]: the progressive train-prune loop and its
//!   machine-readable reports.

pub mod arch;
pub mod coverage;
pub mod descriptors;
pub mod error;
pub mod flops;
pub mod linkage;
pub mod mask;
pub mod pipeline;
pub mod report;
pub mod schedule;
pub mod snapshot;
pub mod universe;

pub use error::{Error, Result};
