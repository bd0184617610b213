use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use eminp::numcore::CorrelationSpec;
use eminp::pvalues::GlobalTestKind;
use eminp::resample::{ResampleMethod, ResamplingPlan};
use eminp::simlab::{
    paper_table, table_procedures, KSweepMode, KSweepSpec, PowerCurveSpec, SimDesign, SimScale, SnoopVariant,
};
use eminp_cli::commands::*;
use eminp_cli::config::*;
use eminp_cli::data::{load_one_sample, load_two_sample, LoadOptions};
use eminp_cli::CliError;

#[derive(Parser)]
#[command(name = "eminp", version, about = "Extended MinP multiple tests and their simulation studies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One-sample test of zero means for every column of a CSV file.
    Test {
        file: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Two-sample comparison of two groups in one CSV file.
    Test2 {
        file: PathBuf,
        /// Column holding the group labels.
        #[arg(long, default_value = "group")]
        group_col: String,
        /// The two groups, in order; differences are first minus second.
        #[arg(long)]
        groups: String,
        /// Drop rows with empty cells instead of failing.
        #[arg(long)]
        drop_incomplete: bool,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Rejection rates of the procedures over simulated data.
    Simulate(SimulateArgs),
    /// Global power along the ellipse of constant noncentrality for k = 2.
    PowerCurve(PowerCurveArgs),
    /// Global power and rejection of H1 as the number of hypotheses grows.
    KSweep(KSweepArgs),
    /// Null size of choosing between a global test and MinP after the fact.
    SnoopCheck(SnoopArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// e1, e2, e3, minp, minp_stepdown, closed, closed_<global>, closed_minp.
    /// Repeatable or comma-separated.
    #[arg(long = "procedure", value_delimiter = ',')]
    procedures: Vec<String>,
    /// lr, joint_t, sum, chi_bar or hotelling.
    #[arg(long)]
    global_test: Option<String>,
    /// mc, bootstrap or permutation.
    #[arg(long)]
    resample: Option<String>,
    #[arg(long)]
    draws: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// one or two; defaults to the global test's natural sidedness.
    #[arg(long)]
    sided: Option<String>,
    /// Permutation inner p-values: rank, asymptotic or nested:<draws>.
    #[arg(long)]
    inner: Option<String>,
    /// Use α/|K| at stepdown steps instead of resampled subset cutoffs.
    #[arg(long)]
    bonferroni_tail: bool,
    /// json, table or csv.
    #[arg(long, default_value = "table")]
    output: String,
}

impl RunArgs {
    fn config(&self, input: InputKind) -> Result<RunConfig, CliError> {
        let mut c = RunConfig::defaults(input);
        c.alpha = self.alpha;
        if let Some(g) = &self.global_test {
            c.global_kind = parse_global(g)?;
        }
        c.sided = match &self.sided {
            Some(s) => parse_sided(s)?,
            None => c.global_kind.sidedness(),
        };
        if !self.procedures.is_empty() {
            c.procedures = self
                .procedures
                .iter()
                .map(|p| parse_procedure(p.trim(), &c.global_kind))
                .collect::<Result<_, _>>()?;
        }
        let method = match &self.resample {
            Some(m) => parse_method(m)?,
            None => c.plan.method,
        };
        c.plan = ResamplingPlan::new(method, self.draws.unwrap_or(default_draws(method)), self.seed);
        if let Some(i) = &self.inner {
            c.plan.inner = parse_inner(i)?;
        }
        c.bonferroni_tail = self.bonferroni_tail;
        c.output = self.output.parse()?;
        c.validate(input)?;
        Ok(c)
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// Reproduce the designs of table 1 to 6.
    #[arg(long, conflicts_with_all = ["k", "n", "m", "scale", "rho", "decay"])]
    table: Option<usize>,
    /// Keep only designs whose label contains this text.
    #[arg(long)]
    rows: Option<String>,
    /// Custom design: number of hypotheses.
    #[arg(long)]
    k: Option<usize>,
    /// Custom design: sample size; omit for known correlation.
    #[arg(long)]
    n: Option<usize>,
    /// Custom design: number of shifted means.
    #[arg(long, default_value_t = 0)]
    m: usize,
    /// Custom design: size of each shift.
    #[arg(long, default_value_t = 0.0)]
    scale: f64,
    /// Custom design: equicorrelation.
    #[arg(long, conflicts_with = "decay")]
    rho: Option<f64>,
    /// Custom design: correlation a^|i−j|.
    #[arg(long)]
    decay: Option<f64>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    draws: Option<usize>,
    /// mc or bootstrap (custom designs).
    #[arg(long)]
    resample: Option<String>,
    #[arg(long = "procedure", value_delimiter = ',')]
    procedures: Vec<String>,
    #[arg(long)]
    global_test: Option<String>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Replication and draw counts of the published study.
    #[arg(long)]
    paper_scale: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "csv")]
    output: String,
}

impl SimulateArgs {
    fn designs(&self) -> Result<Vec<SimDesign>, CliError> {
        let scale = if self.paper_scale { SimScale::Paper } else { SimScale::Desk };
        let global = match &self.global_test {
            Some(g) => parse_global(g)?,
            None => GlobalTestKind::LrChisq,
        };
        let procedures = if self.procedures.is_empty() {
            table_procedures()
        } else {
            self.procedures
                .iter()
                .map(|p| parse_procedure(p.trim(), &global))
                .collect::<Result<_, _>>()?
        };
        let mut designs = match (self.table, self.k) {
            (Some(t), _) => paper_table(t, scale).map_err(|e| CliError::Validation(e.to_string()))?,
            (None, Some(k)) => {
                let correlation = match (self.rho, self.decay) {
                    (_, Some(a)) => CorrelationSpec::PowerDecay { a },
                    (Some(rho), None) => CorrelationSpec::Equicorrelation { rho },
                    (None, None) => CorrelationSpec::Equicorrelation { rho: 0.0 },
                };
                let method = match (&self.resample, self.n) {
                    (Some(m), _) => parse_method(m)?,
                    (None, Some(_)) => ResampleMethod::Bootstrap,
                    (None, None) => ResampleMethod::ParametricMc,
                };
                let draws = match method {
                    ResampleMethod::Bootstrap => scale.bootstrap_draws(),
                    _ => scale.reference_draws(),
                };
                vec![SimDesign {
                    label: "custom".into(),
                    k,
                    n: self.n,
                    scale: self.scale,
                    m: self.m,
                    correlation,
                    reps: scale.reps(),
                    alpha: self.alpha,
                    plan: ResamplingPlan::new(method, draws, 0),
                    procedures: procedures.clone(),
                    global_kind: global.clone(),
                    bonferroni_tail: false,
                }]
            }
            (None, None) => return Err(CliError::Validation("give --table N or a custom design with --k".into())),
        };
        if let Some(filter) = &self.rows {
            designs.retain(|d| d.label.contains(filter.as_str()));
        }
        for d in &mut designs {
            if let Some(r) = self.reps {
                d.reps = r;
            }
            if let Some(dr) = self.draws {
                d.plan.draws = dr;
            }
            if self.table.is_some() {
                d.alpha = self.alpha;
                d.global_kind = global.clone();
                if !self.procedures.is_empty() {
                    d.procedures = procedures.clone();
                }
            }
        }
        Ok(designs)
    }
}

#[derive(Args)]
struct PowerCurveArgs {
    /// Noncentrality radius: μᵀΣ⁻¹μ = r².
    #[arg(long, default_value_t = 2.0)]
    r: f64,
    #[arg(long, default_value_t = 0.0)]
    rho: f64,
    #[arg(long, default_value = "lr")]
    global_test: String,
    /// Number of equally spaced angles on [0, π].
    #[arg(long)]
    points: Option<usize>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 100_000)]
    draws: usize,
    #[arg(long, default_value_t = 100_000)]
    reference_draws: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// csv or json.
    #[arg(long, default_value = "csv")]
    output: String,
}

#[derive(Args)]
struct KSweepArgs {
    /// identity (μ = shift·e₁, Σ = I) or equicorr (μ = shift·𝟙).
    #[arg(long, default_value = "identity")]
    mode: String,
    #[arg(long, default_value_t = 0.9)]
    rho: f64,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6,8,10,12,15,20")]
    ks: Vec<usize>,
    #[arg(long, default_value_t = 3.0)]
    shift: f64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 10_000)]
    draws: usize,
    #[arg(long, default_value_t = 10_000)]
    reference_draws: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "csv")]
    output: String,
}

#[derive(Args)]
struct SnoopArgs {
    #[arg(long, default_value_t = 0.9)]
    rho: f64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// lr, sum or lr-as-printed.
    #[arg(long, default_value = "sum")]
    variant: String,
    #[arg(long, default_value_t = 100_000)]
    draws: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn json<T: serde::Serialize>(value: &T) -> Result<String, CliError> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn run(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Test { file, run } => {
            let config = run.config(InputKind::OneSample)?;
            let data = load_one_sample(&file)?;
            run_test(&config, &data, Some(&file.display().to_string()))?.render(config.output)
        }
        Command::Test2 {
            file,
            group_col,
            groups,
            drop_incomplete,
            run,
        } => {
            let config = run.config(InputKind::TwoSample)?;
            let (a, b) = parse_groups(&groups)?;
            let data = load_two_sample(&file, &group_col, (&a, &b), LoadOptions { drop_incomplete })?;
            run_test2(&config, &data, Some(&file.display().to_string()))?.render(config.output)
        }
        Command::Simulate(args) => {
            let format: OutputFormat = args.output.parse()?;
            let reports = run_simulate(&args.designs()?, args.seed)?;
            match format {
                OutputFormat::Csv => Ok(simulate_csv(&reports)),
                OutputFormat::Table => Ok(simulate_table(&reports)),
                OutputFormat::Json => json(&reports),
            }
        }
        Command::PowerCurve(a) => {
            let mut spec = PowerCurveSpec::new(a.r, a.rho, parse_global(&a.global_test)?);
            if let Some(p) = a.points {
                if p < 2 {
                    return Err(CliError::Validation("--points must be at least 2".into()));
                }
                spec.phis = (0..p).map(|i| std::f64::consts::PI * i as f64 / (p - 1) as f64).collect();
            }
            spec.alpha = a.alpha;
            spec.draws = a.draws;
            spec.reference_draws = a.reference_draws;
            let points = run_power_curve(&spec, a.seed)?;
            match a.output.parse()? {
                OutputFormat::Json => json(&points),
                _ => Ok(power_curve_csv(&points)),
            }
        }
        Command::KSweep(a) => {
            let mode = match a.mode.as_str() {
                "identity" => KSweepMode::IdentitySingle,
                "equicorr" => KSweepMode::EquicorrAll { rho: a.rho },
                other => return Err(CliError::Validation(format!("unknown sweep mode \"{other}\""))),
            };
            let mut spec = KSweepSpec::new(mode, a.ks);
            spec.shift = a.shift;
            spec.alpha = a.alpha;
            spec.draws = a.draws;
            spec.reference_draws = a.reference_draws;
            let rows = run_k_sweep(&spec, a.seed)?;
            match a.output.parse()? {
                OutputFormat::Json => json(&rows),
                _ => Ok(k_sweep_csv(&rows)),
            }
        }
        Command::SnoopCheck(a) => {
            let variant = match a.variant.as_str() {
                "lr" => SnoopVariant::LrUnionMinp,
                "sum" => SnoopVariant::SumUnionMinp,
                "lr-as-printed" => SnoopVariant::LrAsPrintedUnionMinp,
                other => return Err(CliError::Validation(format!("unknown snooping variant \"{other}\""))),
            };
            json(&run_snoop_check(a.rho, a.alpha, variant, a.draws, a.seed)?)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
