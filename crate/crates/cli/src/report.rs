//! The per-hypothesis report produced by `test` and `test2`, and its text
//! renderings.

use std::fmt::Write as _;

use eminp::procedures::DecisionReport;
use serde::{Deserialize, Serialize};

use crate::config::{OutputFormat, RunConfig};
use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSummary {
    pub path: Option<String>,
    pub k: usize,
    /// One entry per group.
    pub sizes: Vec<usize>,
    pub groups: Option<(String, String)>,
    pub dropped_rows: usize,
}

/// Procedure outcome for one hypothesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisResult {
    pub procedure: String,
    pub adjusted: Option<f64>,
    pub closed: Option<f64>,
    pub rejected: bool,
    /// Stepdown step at which the hypothesis was examined.
    pub step: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisRow {
    pub label: String,
    /// Mean, or difference of group means.
    pub difference: f64,
    pub std_error: f64,
    /// Studentized statistic, sign kept.
    pub statistic: f64,
    pub p_raw: f64,
    /// Share of EMinP draws at or below `p_raw`.
    pub p_eminp_first_step: f64,
    /// Share of MinP draws at or below `p_raw`.
    pub p_minp_single: f64,
    pub results: Vec<HypothesisResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalResult {
    pub procedure: String,
    pub rejected: bool,
    pub adjusted: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalRow {
    pub test: String,
    /// Plug-in (or rank) p-value of the global test.
    pub p_global: f64,
    /// Share of global-test draws at or below `p_global`.
    pub p_global_calibrated: f64,
    pub p_minp: f64,
    pub p_eminp: f64,
    pub p_eminp_adjusted: f64,
    pub p_minp_adjusted: f64,
    pub critical_value_eminp: f64,
    pub critical_value_minp: f64,
    pub results: Vec<GlobalResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub command: String,
    pub config: RunConfig,
    pub seed: u64,
    pub draws: usize,
    pub input: InputSummary,
    pub global: GlobalRow,
    pub hypotheses: Vec<HypothesisRow>,
    pub procedures: Vec<DecisionReport>,
}

impl ReportDocument {
    pub fn render(&self, format: OutputFormat) -> Result<String, CliError> {
        match format {
            OutputFormat::Json => Ok(serde_json::to_string_pretty(self)? + "\n"),
            OutputFormat::Table => Ok(self.table()),
            OutputFormat::Csv => self.csv(),
        }
    }

    fn procedure_names(&self) -> Vec<String> {
        self.procedures.iter().map(|p| p.procedure.clone()).collect()
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "command: {}", self.command);
        if let Some(p) = &self.input.path {
            let _ = writeln!(out, "input: {p}");
        }
        match &self.input.groups {
            Some((a, b)) => {
                let _ = writeln!(
                    out,
                    "groups: {a} (n={}) vs {b} (n={}), differences {a} − {b}",
                    self.input.sizes[0], self.input.sizes[1]
                );
            }
            None => {
                let _ = writeln!(out, "n = {}", self.input.sizes[0]);
            }
        }
        if self.input.dropped_rows > 0 {
            let _ = writeln!(out, "dropped incomplete rows: {}", self.input.dropped_rows);
        }
        let _ = writeln!(
            out,
            "alpha = {}, resampling = {} ({} draws), seed = {}",
            self.config.alpha,
            self.config.plan.method.name(),
            self.draws,
            self.seed
        );
        let g = &self.global;
        let _ = writeln!(
            out,
            "global {}: p = {:.4} (calibrated {:.4}), minp = {:.4}, eminp = {:.4} (adjusted {:.4}), c_e = {:.4}, c_m = {:.4}",
            g.test,
            g.p_global,
            g.p_global_calibrated,
            g.p_minp,
            g.p_eminp,
            g.p_eminp_adjusted,
            g.critical_value_eminp,
            g.critical_value_minp
        );
        for r in &g.results {
            let _ = writeln!(
                out,
                "  {:<28} {}{}",
                r.procedure,
                if r.rejected { "reject" } else { "retain" },
                r.adjusted.map(|a| format!(" (adjusted {a:.4})")).unwrap_or_default()
            );
        }
        out.push('\n');

        let width = self.hypotheses.iter().map(|h| h.label.len()).max().unwrap_or(0).max(10);
        let names = self.procedure_names();
        let _ = write!(
            out,
            "{:<width$} {:>10} {:>9} {:>8} {:>8} {:>8} {:>8}",
            "hypothesis", "diff", "s.e.", "stat", "p", "eminp-1", "minp-1"
        );
        let widths: Vec<usize> = names.iter().map(|n| n.chars().count().max(13)).collect();
        for (n, w) in names.iter().zip(&widths) {
            let _ = write!(out, " {:>w$} ", n);
        }
        out.push('\n');
        for h in &self.hypotheses {
            let _ = write!(
                out,
                "{:<width$} {:>10.4} {:>9.4} {:>8.3} {:>8.4} {:>8.4} {:>8.4}",
                h.label, h.difference, h.std_error, h.statistic, h.p_raw, h.p_eminp_first_step, h.p_minp_single
            );
            for (r, w) in h.results.iter().zip(&widths) {
                let v = r.closed.or(r.adjusted).map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
                let _ = write!(out, " {:>w$}{}", v, if r.rejected { "*" } else { " " });
            }
            out.push('\n');
        }
        out.push_str("* rejected at level alpha; procedure columns show adjusted (closed: closed) p-values\n");
        out
    }

    pub fn csv(&self) -> Result<String, CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<String> = [
            "hypothesis",
            "difference",
            "std_error",
            "statistic",
            "p_raw",
            "p_eminp_first_step",
            "p_minp_single",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        for n in self.procedure_names() {
            header.push(format!("{n}_adjusted"));
            header.push(format!("{n}_rejected"));
        }
        w.write_record(&header)?;
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        let g = &self.global;
        let mut row = vec![
            "global".to_string(),
            String::new(),
            String::new(),
            String::new(),
            g.p_global.to_string(),
            g.p_eminp_adjusted.to_string(),
            g.p_minp_adjusted.to_string(),
        ];
        for r in &g.results {
            row.push(opt(r.adjusted));
            row.push(r.rejected.to_string());
        }
        w.write_record(&row)?;
        for h in &self.hypotheses {
            let mut row = vec![
                h.label.clone(),
                h.difference.to_string(),
                h.std_error.to_string(),
                h.statistic.to_string(),
                h.p_raw.to_string(),
                h.p_eminp_first_step.to_string(),
                h.p_minp_single.to_string(),
            ];
            for r in &h.results {
                row.push(opt(r.closed.or(r.adjusted)));
                row.push(r.rejected.to_string());
            }
            w.write_record(&row)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Output(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| CliError::Output(e.to_string()))
    }
}
