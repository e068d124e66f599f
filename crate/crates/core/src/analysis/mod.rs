//! Post-sampling analytics.

mod density;
mod ols;
mod pooling;
mod predictive;
mod quantiles;
mod report;
mod ridge;

pub use density::{density_csv, kde, silverman_bandwidth, DensityCurve};
pub use ols::{diff_in_means_hc1, ols_comparators, OlsComparators, OlsEstimate, SiteOls};
pub use pooling::{
    brute_force_pooling, generalized_pooling, pooling_factor, pooling_report, ClampedMetric, PoolingInputs,
    PoolingReport,
};
pub use predictive::{
    parent_draws, posterior_predictive_next_site, predictive_for_fit, psd_cholesky2, ParentDraw, PredictiveSummary,
    TailProbability,
};
pub use quantiles::{
    quantile_sorted, quantile_table, report_order, sorted_copy, QuantileRow, QuantileTable, QUANTILE_HEADER,
    QUANTILE_LEVELS,
};
pub use report::{analyze_fit, AnalysisReport, LabelledPooling, DENSITY_POINTS};
pub use ridge::{ridge_coefficient_report, RidgePenaltySummary, RidgeReport, RidgeVerdict, DEFAULT_RIDGE_SWEEP};
