//! Structured pruning of small feed-forward networks.
//!
//! Hidden units (dense neurons or conv channels) are ranked by how much they
//! contribute to the loss and the least useful ones are removed. The crate
//! implements Shapley-value attributions over units, the usual heuristic
//! criteria (weight norm, APoZ, sensitivity, Taylor, LRP), masking and
//! slicing of units, and harnesses that compare the criteria.
//!
//! ```
//! use shapprune::experiments::toy::{build_max_network, sample_uniform_dataset, MaxVariant};
//! use shapprune::attribution::{shapley_attribution, ShapleyMode};
//!
//! let model = build_max_network(MaxVariant::Exact);
//! let data = sample_uniform_dataset(2_000, 1).unwrap();
//! let sv = shapley_attribution(&model, 0, &data, ShapleyMode::Exact).unwrap();
//! // Unit D has no outgoing weight and receives exactly zero.
//! assert_eq!(sv.mean[3], 0.0);
//! ```

pub mod attribution;
pub mod dataset;
pub mod error;
pub mod experiments;
pub mod io;
pub mod nn;
pub mod pruning;
pub mod rng;
pub mod shapley;
pub mod tensor;

pub use dataset::Dataset;
pub use error::{Error, Result};
pub use tensor::Tensor;
