//! Acceptance criteria, one PASS/FAIL/SKIP line each. Not part of the
//! default test run; use `cargo test -p eminp-cli --test acceptance`.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use eminp::numcore::linalg::Matrix;
use eminp::numcore::{chisq_quantile, mvn_sample, CovarianceModel, RngStream};
use eminp::orthant::{chi_bar_weights, project_nonneg_orthant};
use eminp::procedures::{run_closed, run_minp, run_procedure, single_step_rejections, KnownSigmaSubsets, ProcedureKind};
use eminp::pvalues::{GlobalTestKind, TestSpec};
use eminp::resample::{gen_reference, ReferenceInput, ResampleMethod, ResamplingPlan};
use eminp::simlab::{
    paper_table, power_curve, run_design, snoop_detail, PowerCurveSpec, SimReport, SimScale, SnoopVariant,
};
use eminp_cli::commands::run_test2;
use eminp_cli::config::{parse_procedure, InputKind, RunConfig};
use eminp_cli::data::{load_two_sample, LoadOptions};

const ALPHA: f64 = 0.05;

enum Status {
    Pass,
    Fail,
    Skip,
}

struct Line {
    id: &'static str,
    status: Status,
    detail: String,
}

fn check(id: &'static str, ok: bool, detail: String) -> Line {
    Line {
        id,
        status: if ok { Status::Pass } else { Status::Fail },
        detail,
    }
}

/// Runs `body` and adds the runtime bound to its verdict.
fn timed(limit: Duration, body: impl FnOnce() -> Vec<Line>) -> Vec<Line> {
    let start = Instant::now();
    let mut lines = body();
    let elapsed = start.elapsed();
    for l in &mut lines {
        l.detail.push_str(&format!("; {:.1}s (limit {}s)", elapsed.as_secs_f64(), limit.as_secs()));
        if elapsed > limit && matches!(l.status, Status::Pass) {
            l.status = Status::Fail;
            l.detail.push_str(" over time limit");
        }
    }
    lines
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

fn criterion_1() -> Vec<Line> {
    let sigma = CovarianceModel::identity(2).unwrap();
    let spec = TestSpec::from_global(GlobalTestKind::LrChisq);
    let plan = ResamplingPlan::new(ResampleMethod::ParametricMc, 1_000_000, 1);
    let r = gen_reference(ReferenceInput::Model(&sigma), &spec, &plan).unwrap();
    let c = r.minp_critical_value(ALPHA);
    let target = 1.0 - 0.95f64.sqrt();
    vec![check(
        "1",
        (c - target).abs() <= 5e-4,
        format!("c_m(0.05) = {c:.5} vs 1 − √0.95 = {target:.5} ± 0.0005"),
    )]
}

fn criterion_2() -> Vec<Line> {
    let q = chisq_quantile(0.95, 2).unwrap();
    let three = format!("{q:.2}");
    vec![check("2", three == "5.99", format!("chisq_quantile(0.95, 2) = {q:.6} → {three}"))]
}

fn criterion_3() -> Vec<Line> {
    let stream = RngStream::new(2);
    let lr = snoop_detail(0.9, ALPHA, SnoopVariant::LrUnionMinp, 100_000, stream).unwrap();
    let sum = snoop_detail(0.9, ALPHA, SnoopVariant::SumUnionMinp, 100_000, stream).unwrap();
    let printed = snoop_detail(0.9, ALPHA, SnoopVariant::LrAsPrintedUnionMinp, 100_000, stream).unwrap();
    let ratio = sum.size / ALPHA;
    vec![
        check(
            "3a",
            (lr.size - 0.07).abs() <= 0.01,
            format!("lr ∪ minp size at ρ=0.9: {:.4} (se {:.4}) vs 0.07 ± 0.01", lr.size, lr.se),
        ),
        check(
            "3b",
            (sum.size - 0.21).abs() <= 0.02,
            format!(
                "sum ∪ minp size at ρ=0.9: {:.4} (se {:.4}) vs 0.21 ± 0.02 [lr region as printed gives {:.4}]",
                sum.size, sum.se, printed.size
            ),
        ),
        check("3c", ratio >= 3.6, format!("sum ∪ minp size / α = {ratio:.2} vs ≥ 4 − 0.4")),
    ]
}

fn design(table: usize, label: &str) -> eminp::simlab::SimDesign {
    paper_table(table, SimScale::Desk)
        .unwrap()
        .into_iter()
        .find(|d| d.label == label)
        .unwrap_or_else(|| panic!("no design {label}"))
}

fn rates(report: &SimReport) -> (f64, f64, f64) {
    let g = |k: &ProcedureKind| report.rates(k).unwrap().global_rate;
    (
        g(&ProcedureKind::EminpE1),
        g(&ProcedureKind::MinpStepdown),
        g(&ProcedureKind::Closed {
            global_kind: GlobalTestKind::LrChisq,
        }),
    )
}

fn criterion_4() -> Vec<Line> {
    let report = run_design(&design(1, "table1:equicorr(0):m0"), RngStream::new(4)).unwrap();
    let (e, m, t) = rates(&report);
    let ok = [e, m, t].iter().all(|r| (3.2..=7.2).contains(r));
    vec![check(
        "4",
        ok,
        format!("null sizes (%) EMinP {e:.2}, MinP {m:.2}, T² {t:.2} vs [3.2, 7.2]"),
    )]
}

/// Criteria 5 and 6 share the bootstrap run of the Table 1 design.
fn criteria_5_and_6() -> Vec<Line> {
    let start = Instant::now();
    let boot = run_design(&design(1, "table1:equicorr(0.9):m1"), RngStream::new(5)).unwrap();
    let boot_time = start.elapsed();
    let (e, m, t) = rates(&boot);
    let ordered = m < e && e < t && e - m >= 10.0 && t - e >= 10.0;
    let mut five = check(
        "5",
        ordered && (e - 50.0).abs() <= 6.0,
        format!("global power (%) MinP {m:.2} < EMinP {e:.2} < T² {t:.2}, gaps ≥ 10, EMinP in 50 ± 6"),
    );
    five.detail.push_str(&format!("; {:.1}s (limit 600s)", boot_time.as_secs_f64()));
    if boot_time > secs(600) && matches!(five.status, Status::Pass) {
        five.status = Status::Fail;
    }
    let mut lines = vec![five];
    lines.extend(timed(secs(1200), || {
        let mc = run_design(&design(3, "table3:equicorr(0.9):m1"), RngStream::new(5)).unwrap();
        let (e_mc, _, _) = rates(&mc);
        vec![check(
            "6",
            (e - e_mc).abs() <= 5.0,
            format!("EMinP global power (%) bootstrap {e:.2} vs parametric {e_mc:.2}, |Δ| ≤ 5"),
        )]
    }));
    lines
}

fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| a[i][j] * x[j]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    x
}

/// Best feasible stationary point over all 2^k faces of the orthant.
fn enumerate_faces(x: &[f64], q: &[Vec<f64>]) -> (Vec<f64>, f64) {
    let k = x.len();
    let qf = |v: &[f64]| -> f64 { (0..k).map(|i| (0..k).map(|j| v[i] * q[i][j] * v[j]).sum::<f64>()).sum() };
    let c: Vec<f64> = (0..k).map(|i| (0..k).map(|j| q[i][j] * x[j]).sum()).collect();
    let mut best = (vec![0.0; k], qf(x));
    for mask in 1u32..(1 << k) {
        let idx: Vec<usize> = (0..k).filter(|&i| mask >> i & 1 == 1).collect();
        let a = idx.iter().map(|&i| idx.iter().map(|&j| q[i][j]).collect()).collect();
        let sol = gauss_solve(a, idx.iter().map(|&i| c[i]).collect());
        if sol.iter().any(|&v| v < 0.0) {
            continue;
        }
        let mut t = vec![0.0; k];
        for (a, &i) in idx.iter().enumerate() {
            t[i] = sol[a];
        }
        let d: Vec<f64> = x.iter().zip(&t).map(|(a, b)| a - b).collect();
        let obj = qf(&d);
        if obj < best.1 {
            best = (t, obj);
        }
    }
    best
}

fn criterion_7() -> Vec<Line> {
    let (mut active_mismatch, mut worst_obj, mut worst_kkt) = (0, 0.0f64, 0.0f64);
    for case in 0..1000u64 {
        let k = 1 + (case % 6) as usize;
        let z = mvn_sample(&CovarianceModel::identity(k).unwrap(), k + 1, RngStream::new(7).substream(case)).unwrap();
        let a = Matrix::from_fn(k, k, |i, j| z.row(i)[j]);
        let mut s = a.matmul(&a.transpose()).unwrap();
        for i in 0..k {
            s[(i, i)] += 0.2;
        }
        let sigma = CovarianceModel::from_covariance(&s).unwrap();
        let x: Vec<f64> = z.row(k).iter().map(|v| 2.0 * v).collect();
        let p = project_nonneg_orthant(&x, &sigma).unwrap();

        let inv_cols: Vec<Vec<f64>> = (0..k)
            .map(|j| gauss_solve(sigma.matrix().to_rows(), (0..k).map(|i| (i == j) as u8 as f64).collect()))
            .collect();
        let q: Vec<Vec<f64>> = (0..k).map(|i| (0..k).map(|j| inv_cols[j][i]).collect()).collect();
        let (t, obj) = enumerate_faces(&x, &q);
        let oracle_active: Vec<usize> = (0..k).filter(|&i| t[i] == 0.0).collect();
        active_mismatch += (p.active_set != oracle_active) as usize;
        worst_obj = worst_obj.max((p.objective - obj).abs());
        for i in 0..k {
            let g: f64 = (0..k).map(|j| q[i][j] * (p.t_star[j] - x[j])).sum();
            let residuals = [
                (g - 0.5 * p.multipliers[i]).abs(),
                (p.multipliers[i] * p.t_star[i]).abs(),
                (-p.t_star[i]).max(0.0),
                (-p.multipliers[i]).max(0.0),
            ];
            worst_kkt = residuals.iter().fold(worst_kkt, |m, &r| m.max(r));
        }
    }
    vec![check(
        "7",
        active_mismatch == 0 && worst_obj <= 1e-9 && worst_kkt <= 1e-10,
        format!(
            "1000 projections: {active_mismatch} active-set mismatches, max |Δobjective| {worst_obj:.1e}, max KKT residual {worst_kkt:.1e}"
        ),
    )]
}

fn criterion_8() -> Vec<Line> {
    let mut worst = 0.0f64;
    for k in [2usize, 4] {
        let w = chi_bar_weights(&CovarianceModel::identity(k).unwrap(), 100_000, RngStream::new(8 + k as u64)).unwrap();
        for j in 0..=k {
            let exact = (0..j).fold(1.0, |c, i| c * (k - i) as f64 / (i + 1) as f64) / 2f64.powi(k as i32);
            let se = (exact * (1.0 - exact) / w.draws_used as f64).sqrt();
            worst = worst.max((w.weights[j] - exact).abs() / se);
        }
    }
    vec![check(
        "8",
        worst <= 3.0,
        format!("Σ = I, k ∈ {{2, 4}}: largest weight deviation {worst:.2} binomial s.e. (≤ 3)"),
    )]
}

fn criterion_9() -> Vec<Line> {
    let k = 4;
    let sigma = CovarianceModel::equicorrelation(0.3, k).unwrap();
    let spec = TestSpec::from_global(GlobalTestKind::LrChisq);
    let plan = ResamplingPlan::new(ResampleMethod::ParametricMc, 2000, 9);
    let r = gen_reference(ReferenceInput::Model(&sigma), &spec, &plan).unwrap();
    let subsets = KnownSigmaSubsets::new(&sigma, &GlobalTestKind::LrChisq, RngStream::new(0)).unwrap();
    let z = mvn_sample(&sigma, 400, RngStream::new(90)).unwrap();
    let kinds = [
        ProcedureKind::EminpE1,
        ProcedureKind::EminpE2,
        ProcedureKind::EminpE3,
        ProcedureKind::MinpSingle,
        ProcedureKind::MinpStepdown,
        ProcedureKind::ClosedMinp,
    ];
    let mut failures = Vec::new();
    for c in 0..400 {
        let x: Vec<f64> = z.row(c).iter().enumerate().map(|(i, v)| v + (c % 5) as f64 * 0.6 * (i == c % k) as u8 as f64).collect();
        let b = spec.bundle(&x, &sigma).unwrap();
        if !(b.eminp <= b.minp && b.individual.iter().all(|&p| b.minp <= p)) {
            failures.push(format!("ordering case {c}"));
        }
        let mut reports = vec![run_closed(&subsets.with_stats(&x).unwrap(), ALPHA).unwrap()];
        for kind in &kinds {
            let rep = run_procedure(kind, &b, Some(&r), ALPHA, false, RngStream::new(c as u64)).unwrap();
            if !kind.is_closed() {
                let adj = rep.adjusted.as_ref().unwrap();
                for i in 0..k {
                    for j in 0..k {
                        if b.individual[i] < b.individual[j] && adj[i] > adj[j] {
                            failures.push(format!("monotonicity {} case {c}", kind.name()));
                        }
                    }
                }
            }
            reports.push(rep);
        }
        if reports.iter().any(|rep| !rep.is_coherent()) {
            failures.push(format!("coherence case {c}"));
        }
        let single = run_minp(&b, &r, ALPHA, false).unwrap().rejected;
        let step = run_minp(&b, &r, ALPHA, true).unwrap().rejected;
        let e1 = &reports[1].rejected;
        if !single.iter().all(|i| step.contains(i))
            || !single_step_rejections(&b, r.critical_value(ALPHA)).iter().all(|i| e1.contains(i))
        {
            failures.push(format!("stepdown ⊇ single-step case {c}"));
        }
    }

    let x = mvn_sample(&CovarianceModel::identity(k).unwrap(), 60, RngStream::new(91)).unwrap();
    for method in [ResampleMethod::ParametricMc, ResampleMethod::Bootstrap] {
        let plan = ResamplingPlan::new(method, 1000, 92);
        let rs = gen_reference(ReferenceInput::OneSample(&x), &spec, &plan).unwrap();
        for a in [0.01, 0.05, 0.1] {
            if rs.critical_value(a) > rs.minp_critical_value(a) {
                failures.push(format!("ĉ_e > ĉ_m ({}, α={a})", method.name()));
            }
        }
        let pool = |n| rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
        let one = pool(1).install(|| gen_reference(ReferenceInput::OneSample(&x), &spec, &plan).unwrap());
        let eight = pool(8).install(|| gen_reference(ReferenceInput::OneSample(&x), &spec, &plan).unwrap());
        if one != eight {
            failures.push(format!("determinism ({})", method.name()));
        }
    }
    for a in [0.01, 0.05, 0.1] {
        if r.critical_value(a) > r.minp_critical_value(a) {
            failures.push(format!("ĉ_e > ĉ_m (known Σ, α={a})"));
        }
    }
    failures.dedup();
    vec![check(
        "9",
        failures.is_empty(),
        if failures.is_empty() {
            "orderings, ĉ_e ≤ ĉ_m, coherence, monotonicity, stepdown ⊇ single-step, 1 vs 8 workers".into()
        } else {
            format!("violations: {}", failures.join(", "))
        },
    )]
}

fn criterion_10() -> Vec<Line> {
    let spec = PowerCurveSpec::new(2.0, 0.0, GlobalTestKind::LrChisq);
    let pts = power_curve(&spec, RngStream::new(10)).unwrap();
    let mut worst = f64::INFINITY;
    for &phi in &spec.phis {
        let get = |t: &str| pts.iter().find(|p| p.phi == phi && p.test == t).unwrap().power;
        let (lr, mp, e) = (get("lr_chisq"), get("minp"), get("eminp"));
        let margin = (e - (lr.min(mp) - 0.03)).min(lr.max(mp) + 0.03 - e);
        worst = worst.min(margin);
    }
    vec![check(
        "10",
        worst >= 0.0,
        format!("{} angles, EMinP inside [min − 3pp, max + 3pp] with smallest margin {:.2} pp", spec.phis.len(), 100.0 * worst),
    )]
}

fn exercise_file() -> Option<PathBuf> {
    if let Ok(p) = std::env::var("EMINP_EXERCISE_CSV") {
        return Some(PathBuf::from(p));
    }
    let local = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/exercise.csv");
    local.exists().then_some(local)
}

fn criterion_11() -> Vec<Line> {
    let Some(path) = exercise_file() else {
        return vec![Line {
            id: "11",
            status: Status::Skip,
            detail: "exercise data not supplied (set EMINP_EXERCISE_CSV or add data/exercise.csv)".into(),
        }];
    };
    let mut config = RunConfig::defaults(InputKind::TwoSample);
    config.plan = ResamplingPlan::new(ResampleMethod::Permutation, 9_999, 11);
    config.procedures = ["e1", "closed", "closed_minp", "minp_stepdown"]
        .iter()
        .map(|p| parse_procedure(p, &config.global_kind).unwrap())
        .collect();
    let run = |a: &str, b: &str| {
        let data = load_two_sample(&path, "group", (a, b), LoadOptions { drop_incomplete: true }).unwrap();
        run_test2(&config, &data, None).unwrap()
    };
    let bodyfat = |doc: &eminp_cli::report::ReportDocument, procedure: &str| {
        let h = doc.hypotheses.iter().find(|h| h.label == "bodyfat").expect("bodyfat column");
        let r = h.results.iter().find(|r| r.procedure == procedure).unwrap();
        r.closed.or(r.adjusted).unwrap()
    };
    let g12 = run("G1", "G2");
    let g23 = run("G2", "G3");
    let g13 = run("G1", "G3");
    let values = [
        ("G1 vs G2 T² p", g12.global.p_global, 0.337),
        ("G1 vs G2 EMinP first step", g12.global.p_eminp_adjusted, 0.167),
        ("G2 vs G3 body fat adjusted", bodyfat(&g23, "eminp_e1"), 0.032),
        ("G1 vs G3 body fat closed MinP", bodyfat(&g13, "closed_minp"), 0.001),
    ];
    let ok = values.iter().all(|(_, v, t)| (v - t).abs() <= 0.03);
    let detail = values
        .iter()
        .map(|(n, v, t)| format!("{n} {v:.3} (≈{t})"))
        .collect::<Vec<_>>()
        .join(", ");
    vec![check("11", ok, format!("{detail}; sizes G1/G2/G3 {:?} {:?}", g12.input.sizes, g13.input.sizes))]
}

fn main() -> ExitCode {
    let criteria: Vec<(u64, fn() -> Vec<Line>)> = vec![
        (30, criterion_1),
        (1, criterion_2),
        (60, criterion_3),
        (600, criterion_4),
        (u64::MAX, criteria_5_and_6),
        (60, criterion_7),
        (30, criterion_8),
        (120, criterion_9),
        (120, criterion_10),
        (600, criterion_11),
    ];
    let mut failed = 0;
    for (limit, f) in criteria {
        let lines = if limit == u64::MAX { f() } else { timed(secs(limit), f) };
        for l in lines {
            let tag = match l.status {
                Status::Pass => "PASS",
                Status::Fail => {
                    failed += 1;
                    "FAIL"
                }
                Status::Skip => "SKIP",
            };
            println!("{tag} criterion {:<3} {}", l.id, l.detail);
        }
    }
    println!("{} criteria failed", failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
