//! Independent checks: grid-quadrature posteriors for the normal-normal
//! model, synthetic data from known parameters, and simulation-based
//! calibration.

mod quadrature;
mod sbc;
mod synthetic;

pub use quadrature::{quadrature_rubin_posterior, GridSpec, QuadratureResult, MAX_GRID_POINTS, MAX_QUADRATURE_SITES};
pub use sbc::{
    chi_square_uniform, default_sbc_parameters, draw_truth_from_prior, model_data_for, sbc_run, sbc_run_with,
    SbcConfig, SbcParameter, SbcReport, SBC_CELL_COVARIATE, SCALE_PRIOR_MASS,
};
pub use synthetic::{
    simulate_hierarchical_data, summarise_micro, CellTruth, Design, SiteCovariateTruth, SyntheticData,
    SyntheticTruth,
};
