//! Evaluation protocols: k-fold cross-validation, year-ahead (TLD) and
//! scaling (SLD) transfer, aggregation studies, QR-curve and truncated-CDF
//! export, and synthetic populations to run them on.
//!
//! Every stochastic operation is a pure function of its inputs and a `u64`
//! seed. Parallel units (folds, aggregation samples, synthetic customers)
//! each draw from their own ChaCha stream, so results do not depend on the
//! number of worker threads.

mod aggregation;
mod curves;
mod cv;
mod synth;
mod transfer;

pub use aggregation::{
    aggregation_cv, band_restricted_fit, sample_aggregations, AggregationRow, AggregationSample, AggregationTable,
    BandFit, ProfiledPopulation, DEFAULT_AGGREGATION_LEVELS, DEFAULT_AGGREGATION_SAMPLES,
};
pub use curves::{export_curves, CurveExport, CurveKind, CurveRow, CURVE_POINTS, DEFAULT_CURVE_TAUS};
pub use cv::{fold_sizes, kfold_cv, CvReport, FoldResult};
pub use synth::{synth_gaussian_profiles, GaussianPopulation, VelanderPopulation};
pub use transfer::{percentile_band, sld, sld_default, tld, PercentileBand, SldReport, TldReport, DEFAULT_SLD_SPLITS};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Mixes a tag into a seed (splitmix64 finaliser).
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed
        ^ tag
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(0x6A09_E667_F3BC_C909);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent random stream `stream` of the generator seeded by `seed`.
pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub(crate) fn csv_f64(v: f64) -> String {
    // Shortest representation that round-trips.
    format!("{v:?}")
}
