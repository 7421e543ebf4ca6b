//! Distance assisted recursive testing.
//!
//! A distance matrix over features is turned into an [`AggregationTree`]
//! whose higher layers group nearby features. [`run_dart`] then tests the
//! layers in turn, rejecting single features first and small groups of
//! weaker neighbouring signals afterwards, while keeping the false
//! discovery rate near the nominal level.
//!
//! ```
//! use dart_core::{build_tree, run_dart, ChildCap, DistanceMatrix, PValueVector};
//!
//! let d = DistanceMatrix::from_rows(
//!     &[vec![0.0, 1.0, 2.0], vec![1.0, 0.0, 1.0], vec![2.0, 1.0, 0.0]],
//!     false,
//! )?;
//! let tree = build_tree(&d, ChildCap::Bounded(3), 2, &[2.0])?;
//! let p = PValueVector::new(vec![0.001, 0.02, 0.6])?;
//! let outcome = run_dart(&tree, &p, 0.1)?;
//! assert_eq!(outcome.layers.len(), 2);
//! # Ok::<(), dart_core::DartError>(())
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod experiment;
pub mod io;
pub mod metrics;
pub mod numeric;
pub mod rng;
pub mod simulation;
pub mod testing;
pub mod tree;
pub mod tuning;
pub mod types;

pub use error::{DartError, Result};
pub use testing::{run_bh, run_dart, TestOutcome};
pub use tree::{build_tree, build_tree_logged, AggregationTree, Node};
pub use types::{ChildCap, DartConfig, DistanceMatrix, PValueVector, TruthAssignment};
