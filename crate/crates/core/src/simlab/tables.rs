use serde::{Deserialize, Serialize};

use super::SimDesign;
use crate::error::{Error, Result};
use crate::numcore::CorrelationSpec;
use crate::procedures::ProcedureKind;
use crate::pvalues::GlobalTestKind;
use crate::resample::{ResampleMethod, ResamplingPlan};

/// Replication and draw counts for table reproduction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimScale {
    Desk,
    Paper,
}

impl SimScale {
    pub fn reps(self) -> usize {
        match self {
            SimScale::Desk => 1000,
            SimScale::Paper => 2000,
        }
    }

    pub fn bootstrap_draws(self) -> usize {
        match self {
            SimScale::Desk => 500,
            SimScale::Paper => 2000,
        }
    }

    pub fn reference_draws(self) -> usize {
        match self {
            SimScale::Desk => 2000,
            SimScale::Paper => 10_000,
        }
    }
}

/// A correlation structure with the mean scales used for its alternative rows.
#[derive(Debug, Clone, PartialEq)]
pub struct TableBlock {
    pub correlation: CorrelationSpec,
    pub scales: [f64; 4],
}

fn blocks(k: usize) -> Vec<TableBlock> {
    let first = if k == 4 { -0.25 } else { -0.15 };
    let b = |correlation, scales| TableBlock { correlation, scales };
    vec![
        b(CorrelationSpec::Equicorrelation { rho: first }, [0.22, 0.13, 0.1, 0.07]),
        b(CorrelationSpec::Equicorrelation { rho: 0.0 }, [0.25, 0.2, 0.15, 0.14]),
        b(CorrelationSpec::Equicorrelation { rho: 0.5 }, [0.22, 0.17, 0.17, 0.17]),
        b(CorrelationSpec::Equicorrelation { rho: 0.9 }, [0.11, 0.09, 0.1, 0.2]),
        b(CorrelationSpec::PowerDecay { a: 0.5 }, [0.24, 0.2, 0.18, 0.17]),
        b(CorrelationSpec::PowerDecay { a: -0.5 }, [0.24, 0.13, 0.11, 0.09]),
    ]
}

/// The procedures compared in every table: EMinP, MinP and the closed
/// Hotelling test.
pub fn table_procedures() -> Vec<ProcedureKind> {
    vec![
        ProcedureKind::EminpE1,
        ProcedureKind::MinpStepdown,
        ProcedureKind::Closed {
            global_kind: GlobalTestKind::LrChisq,
        },
    ]
}

/// `(k, n, method)` of tables 1 to 6.
pub fn table_setting(number: usize) -> Result<(usize, usize, ResampleMethod)> {
    Ok(match number {
        1 => (4, 100, ResampleMethod::Bootstrap),
        2 => (4, 200, ResampleMethod::Bootstrap),
        3 => (4, 100, ResampleMethod::ParametricMc),
        4 => (4, 200, ResampleMethod::ParametricMc),
        5 => (6, 100, ResampleMethod::Bootstrap),
        6 => (6, 200, ResampleMethod::Bootstrap),
        _ => return Err(Error::InvalidParameter(format!("no table {number}; tables are 1 to 6"))),
    })
}

/// Nonzero-mean counts of the alternative rows.
pub fn alternative_counts(k: usize) -> [usize; 4] {
    if k == 4 {
        [1, 2, 3, 4]
    } else {
        [1, 3, 5, 6]
    }
}

/// All designs of one table, block by block, null row first in each block.
pub fn paper_table(number: usize, scale: SimScale) -> Result<Vec<SimDesign>> {
    let (k, n, method) = table_setting(number)?;
    let draws = match method {
        ResampleMethod::Bootstrap => scale.bootstrap_draws(),
        _ => scale.reference_draws(),
    };
    let mut out = Vec::new();
    for block in blocks(k) {
        let rows = std::iter::once((0, 0.0)).chain(alternative_counts(k).into_iter().zip(block.scales));
        for (m, c) in rows {
            out.push(SimDesign {
                label: format!("table{number}:{}:m{m}", block.correlation.label()),
                k,
                n: Some(n),
                scale: c,
                m,
                correlation: block.correlation.clone(),
                reps: scale.reps(),
                alpha: 0.05,
                plan: ResamplingPlan::new(method, draws, 0),
                procedures: table_procedures(),
                global_kind: GlobalTestKind::LrChisq,
                bonferroni_tail: false,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_grid_shape() {
        for t in 1..=6 {
            let d = paper_table(t, SimScale::Desk).unwrap();
            assert_eq!(d.len(), 30);
            for design in &d {
                design.validate().unwrap();
                design.correlation.realize(design.k).unwrap();
            }
        }
        assert!(paper_table(7, SimScale::Desk).is_err());
    }

    #[test]
    fn table_one_power_row() {
        let d = paper_table(1, SimScale::Desk).unwrap();
        let row = d.iter().find(|d| d.label == "table1:equicorr(0.9):m1").unwrap();
        assert_eq!(row.mean(), vec![0.11, 0.0, 0.0, 0.0]);
        assert_eq!(row.plan.draws, 500);
    }
}
