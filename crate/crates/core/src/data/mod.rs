//! Experiment data: household microdata, per-site summaries, site-level
//! covariates and the interaction-cell expansion used by the interactions
//! model.
//!
//! Sites are identified by string labels and mapped to dense indices in
//! ascending label order. When every label parses as an integer the order is
//! numeric, otherwise it is lexicographic. The same ordering is used by every
//! loader, so site `k` means the same thing across modules.

mod cells;
mod covariates;
mod micro;
mod summary;

pub use cells::{build_interaction_cells, CellDataset, CellOptions, CellWarning, DEFAULT_MAX_CELL_COVARIATES};
pub use covariates::{
    load_site_covariates, parse_site_covariates, standardize_columns, SiteCovariateTable, Standardizer,
};
pub use micro::{load_microdata, parse_microdata, ArmStats, LoadReport, MicroDataset, MicroSchema};
pub use summary::{load_summaries, parse_summaries, SummaryDataset};

/// Sorts distinct site labels: numerically when all labels are integers,
/// lexicographically otherwise.
pub fn order_site_labels<'a, I>(labels: I) -> Vec<String>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut distinct: Vec<String> = labels.into_iter().map(str::to_owned).collect();
    distinct.sort();
    distinct.dedup();
    let numeric: Option<Vec<i64>> = distinct.iter().map(|s| s.parse::<i64>().ok()).collect();
    if let Some(nums) = numeric {
        let mut paired: Vec<(i64, String)> = nums.into_iter().zip(distinct).collect();
        paired.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
        paired.into_iter().map(|(_, s)| s).collect()
    } else {
        distinct
    }
}

/// Values treated as a missing numeric cell.
pub(crate) fn is_missing(s: &str) -> bool {
    matches!(s, "" | "NA" | "na" | "N/A" | "NaN" | "nan" | "NAN" | ".")
}
