use serde::Serialize;

use super::micro::{ArmStats, MicroDataset};
use crate::error::{Error, Result};

/// Default cap on the number of covariates that may be fully interacted.
pub const DEFAULT_MAX_CELL_COVARIATES: usize = 4;

#[derive(Debug, Clone, Copy)]
pub struct CellOptions {
    pub max_covariates: usize,
}

impl Default for CellOptions {
    fn default() -> Self {
        CellOptions {
            max_covariates: DEFAULT_MAX_CELL_COVARIATES,
        }
    }
}

/// Non-fatal data issues found while building cells.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CellWarning {
    /// A covariate takes a single value within a site.
    ConstantCovariate { site: String, covariate: String },
    /// A site has no rows in one arm of a cell; that block's parameters are
    /// identified by the hierarchical prior only.
    EmptyCellArm { site: String, cell: usize, treated: bool },
}

/// Microdata split into the `2^L` cells of the full interaction of `L` binary
/// covariates.
///
/// Cell `l` (0-based here, `l + 1` in reports) holds the rows whose
/// covariate vector is the little-endian binary encoding of `l`: covariate
/// `j` equals bit `j` of `l`. Cell 0 is the all-zeros subgroup.
#[derive(Debug, Clone)]
pub struct CellDataset {
    data: MicroDataset,
    covariate_names: Vec<String>,
    cell: Vec<usize>,
    warnings: Vec<CellWarning>,
}

impl CellDataset {
    pub fn data(&self) -> &MicroDataset {
        &self.data
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn n_covariates(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn n_cells(&self) -> usize {
        1 << self.covariate_names.len()
    }

    /// Cell index of every row.
    pub fn cells(&self) -> &[usize] {
        &self.cell
    }

    /// The covariate pattern of cell `l`.
    pub fn pattern(&self, l: usize) -> Vec<u8> {
        (0..self.n_covariates()).map(|j| ((l >> j) & 1) as u8).collect()
    }

    /// Human-readable cell description, e.g. `prior_business=1`.
    pub fn describe(&self, l: usize) -> String {
        if self.covariate_names.is_empty() {
            return "all".into();
        }
        self.covariate_names
            .iter()
            .zip(self.pattern(l))
            .map(|(n, b)| format!("{n}={b}"))
            .collect::<Vec<_>>()
            .join(",")
    }

    /// Indicator `X^{pi(l)}` for row `i`.
    pub fn membership(&self, row: usize, l: usize) -> u8 {
        (self.cell[row] == l) as u8
    }

    pub fn warnings(&self) -> &[CellWarning] {
        &self.warnings
    }

    /// Sufficient statistics indexed `[site][cell][arm]`.
    pub fn block_stats(&self) -> Vec<Vec<[ArmStats; 2]>> {
        let mut out = vec![vec![[ArmStats::default(); 2]; self.n_cells()]; self.data.n_sites()];
        let site = self.data.site_index();
        let t = self.data.treatment();
        let y = self.data.outcome();
        for i in 0..self.data.n_rows() {
            out[site[i]][self.cell[i]][t[i] as usize].push(y[i]);
        }
        out
    }

    /// Row counts indexed `[site][cell]`.
    pub fn counts(&self) -> Vec<Vec<usize>> {
        let mut out = vec![vec![0; self.n_cells()]; self.data.n_sites()];
        for (i, &l) in self.cell.iter().enumerate() {
            out[self.data.site_index()[i]][l] += 1;
        }
        out
    }
}

pub fn build_interaction_cells(
    data: &MicroDataset,
    covariate_names: &[String],
    options: CellOptions,
) -> Result<CellDataset> {
    let l = covariate_names.len();
    if l > options.max_covariates {
        return Err(Error::Validation(format!(
            "{l} interaction covariates requested; the limit is {} ({} cells)",
            options.max_covariates,
            1usize << options.max_covariates
        )));
    }
    let cols: Vec<&[u8]> = covariate_names
        .iter()
        .map(|n| {
            data.covariate(n)
                .ok_or_else(|| Error::Schema(format!("interaction covariate `{n}` not in dataset")))
        })
        .collect::<Result<_>>()?;
    let cell: Vec<usize> = (0..data.n_rows())
        .map(|i| cols.iter().enumerate().map(|(j, c)| (c[i] as usize) << j).sum())
        .collect();

    let mut warnings = Vec::new();
    let k = data.n_sites();
    for (j, c) in cols.iter().enumerate() {
        let mut seen = vec![[false; 2]; k];
        for i in 0..data.n_rows() {
            seen[data.site_index()[i]][c[i] as usize] = true;
        }
        for (s, v) in seen.iter().enumerate() {
            if !(v[0] && v[1]) {
                warnings.push(CellWarning::ConstantCovariate {
                    site: data.sites()[s].clone(),
                    covariate: covariate_names[j].clone(),
                });
            }
        }
    }
    let cd = CellDataset {
        data: data.clone(),
        covariate_names: covariate_names.to_vec(),
        cell,
        warnings,
    };
    let stats = cd.block_stats();
    let mut extra = Vec::new();
    for (s, per_cell) in stats.iter().enumerate() {
        for (l, arms) in per_cell.iter().enumerate() {
            for (arm, st) in arms.iter().enumerate() {
                if st.n == 0.0 {
                    extra.push(CellWarning::EmptyCellArm {
                        site: data.sites()[s].clone(),
                        cell: l + 1,
                        treated: arm == 1,
                    });
                }
            }
        }
    }
    let mut cd = cd;
    cd.warnings.extend(extra);
    Ok(cd)
}
