mod bins;
mod eval;
mod nice;
mod perturb;
mod report;
mod select;
mod validate;

pub use bins::run as bins;
pub use eval::run as eval;
pub use nice::run as nice;
pub use perturb::run as perturb;
pub use report::run as report;
pub use select::run as select;
pub use validate::run as validate;

use nice_core::corpus::{sample_queries, QuerySet};
use nice_core::model::derive_cell_seed;

/// The query subset every stage operates on, derived identically to the
/// in-process NICE run so artifacts line up across subcommands.
pub(crate) fn sampled_queries(queries: &QuerySet, queries_n: usize, seed: u64) -> QuerySet {
    let query_seed = derive_cell_seed(seed, "sample-queries", "", 0, 0);
    sample_queries(queries, queries_n, query_seed)
}
