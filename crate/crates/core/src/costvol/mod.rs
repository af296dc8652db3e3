//! Sparse top-K matching cost volumes: construction from feature maps,
//! iterative neighbourhood aggregation, and confident-match selection.

mod aggregate;
mod confidence;
mod dump;
mod volume;
mod window;

pub use aggregate::aggregate;
pub use confidence::{confident_matches, ConfidenceSelector, Match, SparseMatches};
pub use dump::{read_cost_volume, write_cost_volume, DUMP_MAGIC, DUMP_VERSION};
pub use volume::{build_cost_volume, Candidate, TopKCostVolume};
pub use window::SearchWindow;

/// Default number of candidates kept per pixel.
pub const DEFAULT_K: usize = 30;
/// Default number of aggregation iterations.
pub const DEFAULT_AGGREGATION_ITERATIONS: usize = 4;
/// Default aggregation window side.
pub const DEFAULT_AGGREGATION_SIZE: usize = 5;
/// Default fraction of pixels kept as confident.
pub const DEFAULT_CONFIDENT_FRACTION: f64 = 0.6;
