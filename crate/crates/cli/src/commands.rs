//! Subcommand bodies. Each takes parsed inputs and returns a serializable
//! result; `main` only parses arguments and prints.

use eminp::numcore::RngStream;
use eminp::procedures::run_procedure;
use eminp::pvalues::{hotelling_two_sample, studentize, GlobalTestKind, TestSpec};
use eminp::resample::{gen_reference, share_at_or_below, ReferenceDistribution, ReferenceInput};
use eminp::simlab::{
    k_sweep, power_curve, run_design, snoop_detail, CurvePoint, KSweepRow, KSweepSpec, PowerCurveSpec, SimDesign,
    SimReport, SnoopResult, SnoopVariant,
};
use serde::{Deserialize, Serialize};

use crate::config::{InputKind, RunConfig};
use crate::data::{Dataset, TwoSampleDataset};
use crate::error::CliError;
use crate::report::{GlobalResult, GlobalRow, HypothesisResult, HypothesisRow, InputSummary, ReportDocument};

/// Substream for chi-bar weight estimation on the observed correlation.
const RESOLVE_STREAM: u64 = u64::MAX;
/// Substream for procedures that draw their own random numbers (subset
/// chi-bar weights inside closed tests).
const PROCEDURE_STREAM: u64 = u64::MAX - 1;

/// Descriptive columns of the report, one entry per hypothesis.
struct Descriptives {
    labels: Vec<String>,
    differences: Vec<f64>,
    std_errors: Vec<f64>,
    statistics: Vec<f64>,
}

pub fn run_test(config: &RunConfig, data: &Dataset, path: Option<&str>) -> Result<ReportDocument, CliError> {
    config.validate(InputKind::OneSample)?;
    config.validate_k(data.k())?;
    let st = studentize(&data.data)?;
    let global = config.global_kind.resolve(&st.correlation, config.plan.stream().substream(RESOLVE_STREAM))?;
    let spec = TestSpec::new(global, config.sided);
    let reference = gen_reference(ReferenceInput::OneSample(&data.data), &spec, &config.plan)?;
    let n = data.n() as f64;
    let cov = data.data.sample_covariance();
    let std_errors: Vec<f64> = (0..data.k()).map(|i| (cov[(i, i)] / n).sqrt()).collect();
    let desc = Descriptives {
        labels: data.labels.clone(),
        differences: data.means(),
        std_errors,
        statistics: st.scaled_mean,
    };
    let input = InputSummary {
        path: path.map(str::to_string),
        k: data.k(),
        sizes: vec![data.n()],
        groups: None,
        dropped_rows: 0,
    };
    assemble("test", config, &spec, &reference, desc, input)
}

pub fn run_test2(config: &RunConfig, data: &TwoSampleDataset, path: Option<&str>) -> Result<ReportDocument, CliError> {
    config.validate(InputKind::TwoSample)?;
    config.validate_k(data.data.k())?;
    let h = hotelling_two_sample(&data.data)?;
    let corr = h.correlation.as_ref().expect("set by hotelling_two_sample");
    let global = config.global_kind.resolve(corr, config.plan.stream().substream(RESOLVE_STREAM))?;
    let spec = TestSpec::new(global, config.sided);
    let reference = gen_reference(ReferenceInput::TwoSample(&data.data), &spec, &config.plan)?;
    let desc = Descriptives {
        labels: data.labels.clone(),
        differences: h.differences,
        std_errors: h.std_errors,
        statistics: h.signed_stats,
    };
    let (n1, n2) = data.sizes();
    let input = InputSummary {
        path: path.map(str::to_string),
        k: data.data.k(),
        sizes: vec![n1, n2],
        groups: Some(data.groups.clone()),
        dropped_rows: data.dropped,
    };
    assemble("test2", config, &spec, &reference, desc, input)
}

fn assemble(
    command: &str,
    config: &RunConfig,
    spec: &TestSpec,
    reference: &ReferenceDistribution,
    desc: Descriptives,
    input: InputSummary,
) -> Result<ReportDocument, CliError> {
    let bundle = reference
        .observed()
        .ok_or_else(|| CliError::Output("reference carries no observed sample".into()))?
        .clone();
    let stream = config.plan.stream().substream(PROCEDURE_STREAM);
    let procedures = config
        .procedures
        .iter()
        .map(|kind| run_procedure(kind, &bundle, Some(reference), config.alpha, config.bonferroni_tail, stream))
        .collect::<eminp::Result<Vec<_>>>()?;

    let mut global_sorted = reference.global_draws().to_vec();
    global_sorted.sort_by(f64::total_cmp);
    let global = GlobalRow {
        test: spec.global.name().to_string(),
        p_global: bundle.global,
        p_global_calibrated: share_at_or_below(&global_sorted, bundle.global, reference.include_observed()),
        p_minp: bundle.minp,
        p_eminp: bundle.eminp,
        p_eminp_adjusted: reference.eminp_adjusted(bundle.eminp),
        p_minp_adjusted: reference.minp_adjusted(bundle.minp),
        critical_value_eminp: reference.critical_value(config.alpha),
        critical_value_minp: reference.minp_critical_value(config.alpha),
        results: procedures
            .iter()
            .map(|p| GlobalResult {
                procedure: p.procedure.clone(),
                rejected: p.reject_global,
                adjusted: p.global_adjusted,
            })
            .collect(),
    };
    let hypotheses = (0..bundle.k())
        .map(|i| HypothesisRow {
            label: desc.labels[i].clone(),
            difference: desc.differences[i],
            std_error: desc.std_errors[i],
            statistic: desc.statistics[i],
            p_raw: bundle.individual[i],
            p_eminp_first_step: reference.eminp_adjusted(bundle.individual[i]),
            p_minp_single: reference.minp_adjusted(bundle.individual[i]),
            results: procedures
                .iter()
                .map(|p| HypothesisResult {
                    procedure: p.procedure.clone(),
                    adjusted: p.adjusted.as_ref().map(|a| a[i]),
                    closed: p.closed.as_ref().map(|c| c[i]),
                    rejected: p.rejected.contains(&i),
                    step: p.stepdown_trace.iter().find(|s| s.hypothesis == i).map(|s| s.step),
                })
                .collect(),
        })
        .collect();
    Ok(ReportDocument {
        command: command.to_string(),
        config: config.clone(),
        seed: config.plan.seed,
        draws: reference.draws(),
        input,
        global,
        hypotheses,
        procedures,
    })
}

/// Runs every design with the same seed, so any single design can be
/// re-run from the seed recorded in its report.
pub fn run_simulate(designs: &[SimDesign], seed: u64) -> Result<Vec<SimReport>, CliError> {
    if designs.is_empty() {
        return Err(CliError::Validation("no designs selected".into()));
    }
    for d in designs {
        d.validate().map_err(|e| CliError::Validation(format!("{}: {e}", d.label)))?;
    }
    Ok(designs
        .iter()
        .map(|d| run_design(d, RngStream::new(seed)))
        .collect::<eminp::Result<Vec<_>>>()?)
}

pub fn simulate_csv(reports: &[SimReport]) -> String {
    let mut out = String::from(SimReport::CSV_HEADER);
    out.push('\n');
    for r in reports {
        for line in r.csv_rows() {
            out.push_str(&line);
            out.push('\n');
        }
    }
    out
}

pub fn simulate_table(reports: &[SimReport]) -> String {
    let width = reports.iter().map(|r| r.design.label.len()).max().unwrap_or(6).max(6);
    let mut out = format!(
        "{:<width$} {:<18} {:>8} {:>6} {:>8} {:>6} {:>7} {:>7}\n",
        "design", "procedure", "global%", "(se)", "fwer%", "(se)", "ancr", "(se)"
    );
    for r in reports {
        for row in &r.rows {
            out.push_str(&format!(
                "{:<width$} {:<18} {:>8.1} {:>6.2} {:>8.1} {:>6.2} {:>7.3} {:>7.3}\n",
                r.design.label, row.procedure, row.global_rate, row.global_se, row.fwer, row.fwer_se, row.ancr, row.ancr_se
            ));
        }
    }
    out
}

pub fn run_power_curve(spec: &PowerCurveSpec, seed: u64) -> Result<Vec<CurvePoint>, CliError> {
    if spec.global == GlobalTestKind::HotellingTwoSample {
        return Err(CliError::Validation("power curves use one-sample global tests".into()));
    }
    Ok(power_curve(spec, RngStream::new(seed))?)
}

pub fn power_curve_csv(points: &[CurvePoint]) -> String {
    let mut out = String::from(CurvePoint::CSV_HEADER);
    out.push('\n');
    for p in points {
        out.push_str(&p.csv_row());
        out.push('\n');
    }
    out
}

pub fn run_k_sweep(spec: &KSweepSpec, seed: u64) -> Result<Vec<KSweepRow>, CliError> {
    if spec.ks.is_empty() {
        return Err(CliError::Validation("no dimensions given".into()));
    }
    Ok(k_sweep(spec, RngStream::new(seed))?)
}

pub fn k_sweep_csv(rows: &[KSweepRow]) -> String {
    let mut out = String::from(KSweepRow::CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Output of `snoop-check`: the union size with its inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnoopCheck {
    pub variant: SnoopVariant,
    pub rho: f64,
    pub alpha: f64,
    pub draws: usize,
    pub seed: u64,
    pub size: f64,
    pub se: f64,
    pub global_size: f64,
    pub minp_size: f64,
    pub minp_cutoff: f64,
}

pub fn run_snoop_check(rho: f64, alpha: f64, variant: SnoopVariant, draws: usize, seed: u64) -> Result<SnoopCheck, CliError> {
    let SnoopResult {
        size,
        se,
        global_size,
        minp_size,
        minp_cutoff,
    } = snoop_detail(rho, alpha, variant, draws, RngStream::new(seed))?;
    Ok(SnoopCheck {
        variant,
        rho,
        alpha,
        draws,
        seed,
        size,
        se,
        global_size,
        minp_size,
        minp_cutoff,
    })
}
