//! Run configuration shared by `test` and `test2`, with the checks that
//! happen before any resampling starts.

use eminp::procedures::{ProcedureKind, MAX_CLOSED_K};
use eminp::pvalues::{GlobalTestKind, Sidedness};
use eminp::resample::{InnerPValues, ResampleMethod, ResamplingPlan, MAX_DRAWS, MIN_DRAWS};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Json,
    Table,
    Csv,
}

impl std::str::FromStr for OutputFormat {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "json" => Ok(OutputFormat::Json),
            "table" => Ok(OutputFormat::Table),
            "csv" => Ok(OutputFormat::Csv),
            other => Err(CliError::Validation(format!("unknown output format \"{other}\""))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputKind {
    OneSample,
    TwoSample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub alpha: f64,
    pub procedures: Vec<ProcedureKind>,
    pub global_kind: GlobalTestKind,
    pub sided: Sidedness,
    pub plan: ResamplingPlan,
    pub bonferroni_tail: bool,
    pub output: OutputFormat,
}

impl RunConfig {
    /// Defaults for one input kind: bootstrap and the LR test for one
    /// sample, permutation and the Hotelling test for two.
    pub fn defaults(input: InputKind) -> Self {
        let (global_kind, method) = match input {
            InputKind::OneSample => (GlobalTestKind::LrChisq, ResampleMethod::Bootstrap),
            InputKind::TwoSample => (GlobalTestKind::HotellingTwoSample, ResampleMethod::Permutation),
        };
        Self {
            alpha: 0.05,
            procedures: vec![ProcedureKind::EminpE1],
            sided: global_kind.sidedness(),
            global_kind,
            plan: ResamplingPlan::new(method, default_draws(method), 0),
            bonferroni_tail: false,
            output: OutputFormat::Table,
        }
    }

    /// Checks that do not need the data.
    pub fn validate(&self, input: InputKind) -> Result<(), CliError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(CliError::Validation(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.procedures.is_empty() {
            return Err(CliError::Validation("at least one procedure is required".into()));
        }
        if self.sided != self.global_kind.sidedness() {
            return Err(CliError::Validation(format!(
                "{} pairs with {} individual tests",
                self.global_kind.name(),
                sided_name(self.global_kind.sidedness())
            )));
        }
        for kind in &self.procedures {
            if let ProcedureKind::Closed { global_kind } = kind {
                if global_kind.sidedness() != self.sided {
                    return Err(CliError::Validation(format!(
                        "closed test with {} does not match {} individual tests",
                        global_kind.name(),
                        sided_name(self.sided)
                    )));
                }
            }
        }
        if input == InputKind::OneSample && self.plan.method == ResampleMethod::Permutation {
            return Err(CliError::Validation("permutation resampling needs two groups (use test2)".into()));
        }
        if input == InputKind::OneSample && self.global_kind == GlobalTestKind::HotellingTwoSample {
            return Err(CliError::Validation("the Hotelling test needs two groups".into()));
        }
        if !(MIN_DRAWS..=MAX_DRAWS).contains(&self.plan.draws) {
            return Err(CliError::Validation(format!(
                "draws must lie in [{MIN_DRAWS}, {MAX_DRAWS}], got {}",
                self.plan.draws
            )));
        }
        self.plan.validate().map_err(|e| CliError::Validation(e.to_string()))
    }

    /// Checks that need the number of hypotheses.
    pub fn validate_k(&self, k: usize) -> Result<(), CliError> {
        if k > MAX_CLOSED_K {
            if let Some(kind) = self.procedures.iter().find(|p| p.is_closed()) {
                return Err(CliError::Validation(format!(
                    "{} enumerates 2^k − 1 subsets and supports at most {MAX_CLOSED_K} hypotheses, got {k}",
                    kind.name()
                )));
            }
        }
        if let GlobalTestKind::JointT { direction: Some(b) } = &self.global_kind {
            if b.len() != k {
                return Err(CliError::Validation(format!("joint-t direction has {} entries, expected {k}", b.len())));
            }
        }
        Ok(())
    }
}

pub fn sided_name(s: Sidedness) -> &'static str {
    match s {
        Sidedness::OneSided => "one-sided",
        Sidedness::TwoSided => "two-sided",
    }
}

pub fn default_draws(method: ResampleMethod) -> usize {
    match method {
        ResampleMethod::ParametricMc => 10_000,
        ResampleMethod::Bootstrap => 2_000,
        // With the observed sample this gives 10 000 permutations in total.
        ResampleMethod::Permutation => 9_999,
    }
}

pub fn parse_global(s: &str) -> Result<GlobalTestKind, CliError> {
    match s {
        "lr" | "lr_chisq" | "chisq" => Ok(GlobalTestKind::LrChisq),
        "joint_t" | "joint-t" => Ok(GlobalTestKind::joint_t()),
        "sum" => Ok(GlobalTestKind::Sum),
        "chi_bar" | "chi-bar" | "chibar" => Ok(GlobalTestKind::chi_bar()),
        "hotelling" | "hotelling_two_sample" | "t2" => Ok(GlobalTestKind::HotellingTwoSample),
        other => Err(CliError::Validation(format!(
            "unknown global test \"{other}\" (expected lr, joint_t, sum, chi_bar or hotelling)"
        ))),
    }
}

/// `closed` and `closed_lr` close the run's global test.
pub fn parse_procedure(s: &str, global: &GlobalTestKind) -> Result<ProcedureKind, CliError> {
    Ok(match s {
        "e1" | "eminp" | "eminp_e1" => ProcedureKind::EminpE1,
        "e2" | "eminp_e2" => ProcedureKind::EminpE2,
        "e3" | "eminp_e3" => ProcedureKind::EminpE3,
        "minp" | "minp_single" => ProcedureKind::MinpSingle,
        "minp_stepdown" | "stepdown" => ProcedureKind::MinpStepdown,
        "closed" => ProcedureKind::Closed {
            global_kind: global.clone(),
        },
        "closed_minp" => ProcedureKind::ClosedMinp,
        other => match other.strip_prefix("closed_") {
            Some(g) => ProcedureKind::Closed {
                global_kind: parse_global(g)?,
            },
            None => {
                return Err(CliError::Validation(format!(
                    "unknown procedure \"{other}\" (expected e1, e2, e3, minp, minp_stepdown, closed, closed_<global> or closed_minp)"
                )))
            }
        },
    })
}

pub fn parse_method(s: &str) -> Result<ResampleMethod, CliError> {
    match s {
        "mc" | "parametric_mc" => Ok(ResampleMethod::ParametricMc),
        "bootstrap" => Ok(ResampleMethod::Bootstrap),
        "permutation" => Ok(ResampleMethod::Permutation),
        other => Err(CliError::Validation(format!(
            "unknown resampling method \"{other}\" (expected mc, bootstrap or permutation)"
        ))),
    }
}

pub fn parse_sided(s: &str) -> Result<Sidedness, CliError> {
    match s {
        "one" | "one_sided" | "one-sided" => Ok(Sidedness::OneSided),
        "two" | "two_sided" | "two-sided" => Ok(Sidedness::TwoSided),
        other => Err(CliError::Validation(format!("unknown sidedness \"{other}\" (expected one or two)"))),
    }
}

/// `rank`, `asymptotic` or `nested:<draws>`.
pub fn parse_inner(s: &str) -> Result<InnerPValues, CliError> {
    match s {
        "rank" => Ok(InnerPValues::Rank),
        "asymptotic" => Ok(InnerPValues::Asymptotic),
        other => other
            .strip_prefix("nested:")
            .and_then(|d| d.parse().ok())
            .map(|draws| InnerPValues::NestedBootstrap { draws })
            .ok_or_else(|| CliError::Validation(format!("unknown inner p-value mode \"{other}\""))),
    }
}

/// `A,B`.
pub fn parse_groups(s: &str) -> Result<(String, String), CliError> {
    match s.split(',').map(str::trim).collect::<Vec<_>>()[..] {
        [a, b] if !a.is_empty() && !b.is_empty() && a != b => Ok((a.to_string(), b.to_string())),
        _ => Err(CliError::Validation(format!("--groups expects two distinct labels A,B, got \"{s}\""))),
    }
}
